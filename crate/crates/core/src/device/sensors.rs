use serde::{Deserialize, Serialize};

use crate::engine::{SimTime, UniformSource};
use crate::Point;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorConfig {
    pub gps_sigma_outdoor_m: f64,
    pub gps_sigma_indoor_m: f64,
    /// The receiver's own error estimate is sigma times U[min, max].
    pub gps_estimate_scale_min: f64,
    pub gps_estimate_scale_max: f64,
    pub imu_heading_sigma_rad: f64,
    /// Stride length error, uniform in +/- this fraction.
    pub imu_stride_noise_frac: f64,
}

impl SensorConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.gps_sigma_outdoor_m >= 0.0 && self.gps_sigma_indoor_m >= 0.0) {
            return Err("sensors: gps sigmas must be >= 0".into());
        }
        if !(self.gps_estimate_scale_min > 0.0 && self.gps_estimate_scale_min <= self.gps_estimate_scale_max) {
            return Err("sensors: need 0 < gps_estimate_scale_min <= gps_estimate_scale_max".into());
        }
        if !(self.imu_heading_sigma_rad >= 0.0) {
            return Err("sensors.imu_heading_sigma_rad must be >= 0".into());
        }
        if !(0.0..1.0).contains(&self.imu_stride_noise_frac) {
            return Err("sensors.imu_stride_noise_frac must be in [0, 1)".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpsFix {
    pub t: SimTime,
    pub position: Point,
    pub error_estimate_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuStep {
    pub t: SimTime,
    pub heading_rad: f64,
    pub stride_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "sensor", rename_all = "kebab-case")]
pub enum SensorReading {
    Gps(GpsFix),
    Imu(ImuStep),
}

/// Noisy fix around `truth`. Consumes four draws.
pub fn sample_gps<R: UniformSource + ?Sized>(truth: Point, indoor: bool, t: SimTime, cfg: &SensorConfig, rng: &mut R) -> GpsFix {
    let sigma = if indoor {
        cfg.gps_sigma_indoor_m
    } else {
        cfg.gps_sigma_outdoor_m
    };
    let dx = rng.next_normal(0.0, sigma);
    let dy = rng.next_normal(0.0, sigma);
    let scale = cfg.gps_estimate_scale_min + (cfg.gps_estimate_scale_max - cfg.gps_estimate_scale_min) * rng.next_uniform();
    GpsFix {
        t,
        position: Point::new(truth.x + dx, truth.y + dy),
        error_estimate_m: sigma * scale,
    }
}

/// Noisy step measurement. Consumes three draws.
pub fn sample_imu<R: UniformSource + ?Sized>(
    true_heading: f64,
    true_stride: f64,
    t: SimTime,
    cfg: &SensorConfig,
    rng: &mut R,
) -> ImuStep {
    let heading_rad = rng.next_normal(true_heading, cfg.imu_heading_sigma_rad);
    let stride_m = true_stride * (1.0 + cfg.imu_stride_noise_frac * (2.0 * rng.next_uniform() - 1.0));
    ImuStep { t, heading_rad, stride_m }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Config;
    use crate::engine::RngStream;

    #[test]
    fn indoor_estimates_exceed_outdoor_ones() {
        let cfg = Config::default().sensors;
        let mut rng = RngStream::new("gps-noise", 3);
        for i in 0..1000 {
            let o = sample_gps(Point::origin(), false, SimTime::from_secs(i), &cfg, &mut rng);
            let n = sample_gps(Point::origin(), true, SimTime::from_secs(i), &cfg, &mut rng);
            assert!(o.error_estimate_m < n.error_estimate_m);
        }
    }

    #[test]
    fn gps_noise_has_configured_spread() {
        let cfg = Config::default().sensors;
        let mut rng = RngStream::new("gps-noise", 9);
        let n = 20_000;
        let var: f64 = (0..n)
            .map(|_| sample_gps(Point::origin(), false, SimTime::ZERO, &cfg, &mut rng).position.x.powi(2))
            .sum::<f64>()
            / n as f64;
        let s = cfg.gps_sigma_outdoor_m;
        assert!((var.sqrt() - s).abs() < 0.05 * s, "{}", var.sqrt());
    }

    #[test]
    fn stride_noise_is_bounded() {
        let cfg = Config::default().sensors;
        let mut rng = RngStream::new("imu-noise", 1);
        for _ in 0..1000 {
            let s = sample_imu(0.0, 1.0, SimTime::ZERO, &cfg, &mut rng);
            assert!((s.stride_m - 1.0).abs() <= cfg.imu_stride_noise_frac + 1e-12);
        }
    }
}
