use serde::{Deserialize, Serialize};

/// Battery level resolution: 1 unit = 1e-12 percent.
const UNITS_PER_PCT: f64 = 1e12;
const FULL: u64 = 100_000_000_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryModel {
    /// Baseline drain, percent per hour.
    pub idle_pct_per_hour: f64,
    /// Radio energy, percent per byte sent or received.
    pub radio_pct_per_byte: f64,
}

impl BatteryModel {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.idle_pct_per_hour >= 0.0 && self.idle_pct_per_hour.is_finite()) {
            return Err("battery.idle_pct_per_hour must be >= 0".into());
        }
        if !(self.radio_pct_per_byte >= 0.0 && self.radio_pct_per_byte.is_finite()) {
            return Err("battery.radio_pct_per_byte must be >= 0".into());
        }
        Ok(())
    }
}

/// Work done since the last battery step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Activity {
    pub inference_energy_pct: Vec<f64>,
    pub radio_bytes: u64,
}

/// Charge held as an integer so drains add up exactly in any order.
/// Idle drain is computed from cumulative elapsed time, so splitting an
/// interval into ticks never changes the result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Battery {
    units: u64,
    idle_elapsed_us: u64,
    idle_charged: u64,
}

impl Battery {
    pub fn full() -> Self {
        Self::from_units(FULL)
    }

    /// Clamps to `[0, 100]`.
    pub fn from_pct(pct: f64) -> Self {
        Self::from_units(pct_to_units(pct.clamp(0.0, 100.0)))
    }

    fn from_units(units: u64) -> Self {
        Battery {
            units,
            idle_elapsed_us: 0,
            idle_charged: 0,
        }
    }

    pub fn pct(self) -> f64 {
        self.units as f64 / UNITS_PER_PCT
    }

    pub fn is_depleted(self) -> bool {
        self.units == 0
    }

    /// Removes `pct` percent, stopping at empty. Returns the amount removed.
    pub fn drain_pct(&mut self, pct: f64) -> f64 {
        let want = pct_to_units(pct.max(0.0));
        let taken = want.min(self.units);
        self.units -= taken;
        taken as f64 / UNITS_PER_PCT
    }

    /// Applies idle drain over `dt_s` plus the given activity.
    pub fn step(&mut self, dt_s: f64, activity: &Activity, model: &BatteryModel) -> f64 {
        let mut drained = self.drain_idle(dt_s, model);
        for e in &activity.inference_energy_pct {
            drained += self.drain_pct(*e);
        }
        drained += self.drain_pct(activity.radio_bytes as f64 * model.radio_pct_per_byte);
        drained
    }

    fn drain_idle(&mut self, dt_s: f64, model: &BatteryModel) -> f64 {
        self.idle_elapsed_us += (dt_s.max(0.0) * 1e6).round() as u64;
        let per_hour = u128::from(pct_to_units(model.idle_pct_per_hour));
        let due = (per_hour * u128::from(self.idle_elapsed_us) / 3_600_000_000) as u64;
        let taken = (due - self.idle_charged).min(self.units);
        self.idle_charged = due;
        self.units -= taken;
        taken as f64 / UNITS_PER_PCT
    }
}

fn pct_to_units(pct: f64) -> u64 {
    (pct * UNITS_PER_PCT).round() as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> BatteryModel {
        BatteryModel {
            idle_pct_per_hour: 2.0,
            radio_pct_per_byte: 1e-8,
        }
    }

    #[test]
    fn idle_hour_drains_rate() {
        let mut b = Battery::full();
        for _ in 0..3600 {
            b.step(1.0, &Activity::default(), &model());
        }
        assert_eq!(b.pct(), 98.0);
    }

    #[test]
    fn drain_stops_at_zero() {
        let mut b = Battery::from_pct(0.5);
        let taken = b.drain_pct(2.0);
        assert_eq!(taken, 0.5);
        assert!(b.is_depleted());
        assert_eq!(b.drain_pct(1.0), 0.0);
    }

    #[test]
    fn radio_and_inference_add_up() {
        let mut b = Battery::full();
        let a = Activity {
            inference_energy_pct: vec![0.0625, 0.0625],
            radio_bytes: 1_000_000,
        };
        let d = b.step(0.0, &a, &model());
        assert!((d - 0.135).abs() < 1e-12);
        assert!((b.pct() - 99.865).abs() < 1e-12);
    }
}
