use serde::{Deserialize, Serialize};

use crate::engine::{SimTime, UniformSource};
use crate::registry::Capability;
use crate::task::TaskRequest;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Arrival {
    Poisson { rate_per_s: f64 },
    FixedInterval { dt_s: f64 },
    Scripted { times_s: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    pub device_id: String,
    pub capability: Capability,
    pub arrival: Arrival,
    /// Filled from the config defaults when absent.
    #[serde(default)]
    pub acceptable_latency_s: Option<f64>,
    #[serde(default)]
    pub payload_bytes: Option<u64>,
}

impl WorkloadSpec {
    pub(crate) fn validate(&self, at: &str, duration_s: f64) -> Result<(), (String, String)> {
        let err = |field: &str, msg: String| Err((format!("{at}.{field}"), msg));
        match &self.arrival {
            Arrival::Poisson { rate_per_s } if !(*rate_per_s > 0.0 && rate_per_s.is_finite()) => {
                return err("arrival.rate_per_s", "must be > 0".into());
            }
            Arrival::FixedInterval { dt_s } if !(*dt_s > 0.0 && dt_s.is_finite()) => {
                return err("arrival.dt_s", "must be > 0".into());
            }
            Arrival::Scripted { times_s } => {
                if times_s.is_empty() {
                    return err("arrival.times_s", "must not be empty".into());
                }
                for (i, t) in times_s.iter().enumerate() {
                    if !(*t >= 0.0 && *t <= duration_s) {
                        return err(&format!("arrival.times_s[{i}]"), format!("{t} is outside [0, {duration_s}]"));
                    }
                    if i > 0 && *t <= times_s[i - 1] {
                        return err(&format!("arrival.times_s[{i}]"), "times must strictly increase".into());
                    }
                }
            }
            _ => {}
        }
        if let Some(l) = self.acceptable_latency_s {
            if !(l > 0.0) {
                return err("acceptable_latency_s", "must be > 0".into());
            }
        }
        Ok(())
    }
}

/// Arrival times in `[0, duration]`, strictly increasing. Only the Poisson
/// process draws from `rng`.
pub fn arrival_times<R: UniformSource + ?Sized>(arrival: &Arrival, duration_s: f64, rng: &mut R) -> Vec<SimTime> {
    let end = SimTime::from_secs_f64(duration_s);
    let mut out: Vec<SimTime> = Vec::new();
    let mut push = |t: SimTime| {
        let t = match out.last() {
            Some(&prev) if t <= prev => prev + SimTime::from_micros(1),
            _ => t,
        };
        if t <= end {
            out.push(t);
        }
    };
    match arrival {
        Arrival::Poisson { rate_per_s } => {
            let mut t = 0.0;
            loop {
                t += rng.next_exponential(*rate_per_s);
                if t > duration_s {
                    break;
                }
                push(SimTime::from_secs_f64(t));
            }
        }
        Arrival::FixedInterval { dt_s } => {
            let mut k = 1u64;
            while k as f64 * dt_s <= duration_s + 1e-9 {
                push(SimTime::from_secs_f64(k as f64 * dt_s));
                k += 1;
            }
        }
        Arrival::Scripted { times_s } => {
            for t in times_s {
                push(SimTime::from_secs_f64(*t));
            }
        }
    }
    out
}

/// Task requests for one workload entry, ids `<device>-w<index>-<n>`.
pub fn generate_tasks<R: UniformSource + ?Sized>(
    spec: &WorkloadSpec,
    index: usize,
    duration_s: f64,
    rng: &mut R,
) -> Vec<TaskRequest> {
    arrival_times(&spec.arrival, duration_s, rng)
        .into_iter()
        .enumerate()
        .map(|(n, t)| TaskRequest {
            task_id: format!("{}-w{index}-{n}", spec.device_id),
            device_id: spec.device_id.clone(),
            capability: spec.capability,
            payload_bytes: spec.payload_bytes.unwrap_or(0),
            acceptable_latency_s: spec.acceptable_latency_s.unwrap_or(f64::INFINITY),
            arrived_at: t,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::RngStream;

    fn rng(seed: u64) -> RngStream {
        RngStream::new("task-arrival", seed)
    }

    #[test]
    fn fixed_interval_hits_each_multiple() {
        let t = arrival_times(&Arrival::FixedInterval { dt_s: 60.0 }, 300.0, &mut rng(0));
        assert_eq!(t, [60, 120, 180, 240, 300].map(SimTime::from_secs).to_vec());
    }

    #[test]
    fn empty_script_yields_nothing() {
        assert!(arrival_times(&Arrival::Scripted { times_s: vec![] }, 300.0, &mut rng(0)).is_empty());
    }

    #[test]
    fn generation_is_reproducible() {
        let a = Arrival::Poisson { rate_per_s: 0.1 };
        assert_eq!(arrival_times(&a, 3600.0, &mut rng(5)), arrival_times(&a, 3600.0, &mut rng(5)));
        assert_ne!(arrival_times(&a, 3600.0, &mut rng(5)), arrival_times(&a, 3600.0, &mut rng(6)));
    }

    /// Poisson oracle: 2 per minute over an hour has mean 120.
    #[test]
    fn poisson_count_matches_rate() {
        let a = Arrival::Poisson { rate_per_s: 2.0 / 60.0 };
        let seeds = 1000;
        let total: usize = (0..seeds).map(|s| arrival_times(&a, 3600.0, &mut rng(s)).len()).sum();
        let mean = total as f64 / seeds as f64;
        assert!((mean - 120.0).abs() < 4.0, "{mean}");
    }

    #[test]
    fn times_strictly_increase_within_duration() {
        let a = Arrival::Poisson { rate_per_s: 5.0 };
        for s in 0..20 {
            let t = arrival_times(&a, 100.0, &mut rng(s));
            assert!(t.windows(2).all(|w| w[0] < w[1]));
            assert!(t.iter().all(|x| *x <= SimTime::from_secs(100)));
        }
    }
}
