use rand::seq::SliceRandom;
use rand::Rng;

use super::vehicle::{VehicleClass, VehicleSpec};
use crate::cost::CostFunction;
use crate::VehicleId;

/// Population a spawned vehicle is drawn from. Every vehicle consumes the
/// same number of draws in the same order, so changing `compliance` or a
/// speed bound does not reshuffle the rest of the fleet.
#[derive(Debug, Clone)]
pub struct FleetMix {
    pub curves: Vec<CostFunction>,
    pub classes: Vec<VehicleClass>,
    /// Free speeds are uniform on this interval, km/h.
    pub free_speed: (f64, f64),
    pub compliance: f64,
}

impl FleetMix {
    pub fn draw<R: Rng + ?Sized>(&self, id: VehicleId, rng: &mut R) -> VehicleSpec {
        let cost = self.curves.choose(rng).expect("fleet mix has no curves").clone();
        let class = *self.classes.choose(rng).expect("fleet mix has no vehicle classes");
        let u: f64 = rng.gen();
        let (lo, hi) = self.free_speed;
        let free_speed = lo + (hi - lo) * u;
        let compliant = rng.gen::<f64>() < self.compliance;
        VehicleSpec { id, class, cost, compliant, free_speed }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Arrival {
    pub time_s: f64,
    pub spec: VehicleSpec,
}

/// One arrival every `interval_s` seconds from time zero, strictly before
/// `cutoff_s`.
pub fn spawn_process<R: Rng + ?Sized>(interval_s: f64, cutoff_s: f64, mix: &FleetMix, rng: &mut R) -> Vec<Arrival> {
    assert!(interval_s > 0.0, "spawn interval must be positive");
    let mut arrivals = Vec::new();
    let mut k = 0u32;
    loop {
        let time_s = interval_s * f64::from(k);
        if time_s >= cutoff_s {
            break;
        }
        arrivals.push(Arrival { time_s, spec: mix.draw(VehicleId(k), rng) });
        k += 1;
    }
    arrivals
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::SpeedRange;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mix(curves: &[&str], classes: Vec<VehicleClass>, free: (f64, f64)) -> FleetMix {
        FleetMix {
            curves: curves.iter().map(|c| CostFunction::preset(c, SpeedRange::default()).unwrap()).collect(),
            classes,
            free_speed: free,
            compliance: 1.0,
        }
    }

    #[test]
    fn one_car_every_two_seconds() {
        let m = mix(&["R014", "R021", "R040"], VehicleClass::ALL.to_vec(), (80.0, 100.0));
        let a = spawn_process(2.0, 1300.0, &m, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(a.len(), 650);
        assert_eq!(a[649].time_s, 1298.0);
        assert!(a.iter().all(|x| (80.0..=100.0).contains(&x.spec.free_speed)));
    }

    #[test]
    fn zero_cutoff_is_empty() {
        let m = mix(&["R014"], vec![VehicleClass::Type1], (80.0, 80.0));
        assert!(spawn_process(2.0, 0.0, &m, &mut ChaCha8Rng::seed_from_u64(1)).is_empty());
    }

    #[test]
    fn single_type_mix_differs_only_by_id() {
        let m = mix(&["R040"], vec![VehicleClass::Type3], (70.0, 70.0));
        let a = spawn_process(1.0, 20.0, &m, &mut ChaCha8Rng::seed_from_u64(9));
        for x in &a {
            let mut s = x.spec.clone();
            s.id = a[0].spec.id;
            assert_eq!(s, a[0].spec);
        }
    }

    #[test]
    fn compliance_draws_are_nested() {
        let mut lo = mix(&["R014", "R021"], VehicleClass::ALL.to_vec(), (40.0, 60.0));
        let mut hi = lo.clone();
        lo.compliance = 0.25;
        hi.compliance = 0.75;
        let a = spawn_process(2.0, 400.0, &lo, &mut ChaCha8Rng::seed_from_u64(5));
        let b = spawn_process(2.0, 400.0, &hi, &mut ChaCha8Rng::seed_from_u64(5));
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.spec.free_speed, y.spec.free_speed);
            assert_eq!(x.spec.cost, y.spec.cost);
            assert!(!x.spec.compliant || y.spec.compliant);
        }
    }
}
