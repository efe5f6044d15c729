use crate::cost::CostFunction;

/// Default moving-average window in rounds.
pub const DEFAULT_WINDOW: usize = 500;

/// One vehicle's contribution over one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Accrual {
    /// Section the step started in.
    pub section: usize,
    /// Cost rate at the step's speed (g/km or kWh/km).
    pub rate: f64,
    /// Cost accrued over the step (g or kWh).
    pub amount: f64,
}

/// Cost of moving `distance_m` at `speed`. Speeds outside the curve's
/// domain are evaluated at the nearest bound.
pub fn step_accrual(cost: &CostFunction, section: usize, speed: f64, distance_m: f64) -> Accrual {
    let v = cost.range().clamp(speed);
    let rate = cost.shape().value(v);
    let amount = if distance_m > 0.0 { rate * distance_m / 1000.0 } else { 0.0 };
    Accrual { section, rate, amount }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    pub round: u64,
    pub fleet_per_section: Vec<usize>,
    /// Sum of current cost rates over the whole fleet.
    pub total_rate: f64,
    pub moving_average: f64,
    /// Spread of the recommended speeds, km/h.
    pub spread: f64,
    pub mean_degree: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsAccumulator {
    window: usize,
    section_totals: Vec<f64>,
    rounds: Vec<RoundMetrics>,
}

impl MetricsAccumulator {
    pub fn new(sections: usize, window: usize) -> Self {
        Self { window: window.max(1), section_totals: vec![0.0; sections], rounds: Vec::new() }
    }

    /// Adds one round. `accruals` must be in vehicle-id order.
    pub fn accrue(&mut self, round: u64, accruals: &[Accrual], spread: f64, mean_degree: f64) {
        let mut fleet_per_section = vec![0; self.section_totals.len()];
        let mut total_rate = 0.0;
        for a in accruals {
            self.section_totals[a.section] += a.amount;
            fleet_per_section[a.section] += 1;
            total_rate += a.rate;
        }
        let start = (self.rounds.len() + 1).saturating_sub(self.window);
        let past: f64 = self.rounds[start..].iter().map(|r| r.total_rate).sum();
        let count = self.rounds.len() - start + 1;
        let moving_average = (past + total_rate) / count as f64;
        self.rounds.push(RoundMetrics { round, fleet_per_section, total_rate, moving_average, spread, mean_degree });
    }

    /// Time-integrated cost per section (g or kWh).
    pub fn section_totals(&self) -> &[f64] {
        &self.section_totals
    }

    pub fn total(&self) -> f64 {
        self.section_totals.iter().sum()
    }

    pub fn rounds(&self) -> &[RoundMetrics] {
        &self.rounds
    }

    pub fn window(&self) -> usize {
        self.window
    }
}
