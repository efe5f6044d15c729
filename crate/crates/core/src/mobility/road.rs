use serde::{Deserialize, Serialize};

fn default_lanes() -> u32 {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Section {
    pub name: String,
    pub length_m: f64,
    #[serde(default)]
    pub controlled: bool,
    #[serde(default = "default_lanes")]
    pub lanes: u32,
}

/// Ordered road sections. A ring layout wraps the end back to the start and
/// never retires vehicles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoadLayout {
    pub sections: Vec<Section>,
    #[serde(default)]
    pub ring: bool,
}

impl RoadLayout {
    /// Three 5 km, four-lane sections with the middle one controlled.
    pub fn highway_three_sections() -> Self {
        let s = |name: &str, controlled| Section { name: name.into(), length_m: 5000.0, controlled, lanes: 4 };
        Self { sections: vec![s("L1", false), s("L2", true), s("L3", false)], ring: false }
    }

    pub fn total_length(&self) -> f64 {
        self.sections.iter().map(|s| s.length_m).sum()
    }

    /// Position reduced onto the road (wrapped on a ring).
    pub fn road_coordinate(&self, position: f64) -> f64 {
        if self.ring {
            position.rem_euclid(self.total_length())
        } else {
            position
        }
    }

    /// Index of the section containing `position`, or `None` once a
    /// vehicle has left a non-ring road.
    pub fn section_at(&self, position: f64) -> Option<usize> {
        let x = self.road_coordinate(position);
        if x < 0.0 {
            return None;
        }
        let mut start = 0.0;
        for (i, s) in self.sections.iter().enumerate() {
            if x < start + s.length_m {
                return Some(i);
            }
            start += s.length_m;
        }
        None
    }

    pub fn first_controlled(&self) -> Option<usize> {
        self.sections.iter().position(|s| s.controlled)
    }

    pub fn first_uncontrolled(&self) -> Option<usize> {
        self.sections.iter().position(|s| !s.controlled)
    }
}
