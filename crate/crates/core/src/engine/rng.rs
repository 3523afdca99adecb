//! Named deterministic random streams.
//!
//! Every stochastic concern draws from its own stream. A stream is a ChaCha8
//! generator seeded with the master seed and positioned on a ChaCha stream
//! id derived from the stream name, so registering a new stream never shifts
//! the sequence of an existing one.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::EngineError;

/// Stream names used by the simulator.
pub mod streams {
    pub const LINK_FADE: &str = "link-fade";
    pub const LINK_LOSS: &str = "link-loss";
    pub const TASK_ARRIVAL: &str = "task-arrival";
    pub const INFERENCE: &str = "inference";
    pub const GPS_NOISE: &str = "gps-noise";
    pub const IMU_NOISE: &str = "imu-noise";

    pub const ALL: [&str; 6] = [LINK_FADE, LINK_LOSS, TASK_ARRIVAL, INFERENCE, GPS_NOISE, IMU_NOISE];
}

/// Source of uniform draws. Implemented by [`RngStream`]; tests may supply
/// scripted sources.
pub trait UniformSource {
    /// Uniform sample in `[0, 1)`.
    fn next_uniform(&mut self) -> f64;

    /// Standard normal sample via Box-Muller. Consumes exactly two uniforms.
    fn next_standard_normal(&mut self) -> f64 {
        let u1 = self.next_uniform();
        let u2 = self.next_uniform();
        // 1 - u1 lies in (0, 1], keeping ln finite.
        (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    fn next_normal(&mut self, mean: f64, sigma: f64) -> f64 {
        mean + sigma * self.next_standard_normal()
    }

    /// Exponential sample with the given rate. Consumes one uniform.
    fn next_exponential(&mut self, rate: f64) -> f64 {
        -(1.0 - self.next_uniform()).ln() / rate
    }

    /// Bernoulli trial. Consumes one uniform even when `p` is 0 or 1.
    fn bernoulli(&mut self, p: f64) -> bool {
        self.next_uniform() < p
    }
}

/// FNV-1a over the stream name; stable across platforms and releases.
fn stream_id(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone)]
pub struct RngStream {
    name: String,
    seed: u64,
    draw_count: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(name: &str, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id(name));
        RngStream {
            name: name.to_owned(),
            seed,
            draw_count: 0,
            rng,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn draw_count(&self) -> u64 {
        self.draw_count
    }
}

impl UniformSource for RngStream {
    fn next_uniform(&mut self) -> f64 {
        self.draw_count += 1;
        self.rng.random::<f64>()
    }
}

/// The set of streams registered under one master seed.
#[derive(Debug, Clone)]
pub struct RngStreams {
    master_seed: u64,
    streams: BTreeMap<String, RngStream>,
}

impl RngStreams {
    pub fn new(master_seed: u64) -> Self {
        RngStreams {
            master_seed,
            streams: BTreeMap::new(),
        }
    }

    /// Registers all simulator streams.
    pub fn with_defaults(master_seed: u64) -> Self {
        let mut s = Self::new(master_seed);
        for name in streams::ALL {
            s.register(name);
        }
        s
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    /// Registering an existing name is a no-op; its position is kept.
    pub fn register(&mut self, name: &str) {
        let seed = self.master_seed;
        self.streams
            .entry(name.to_owned())
            .or_insert_with(|| RngStream::new(name, seed));
    }

    pub fn stream(&mut self, name: &str) -> Result<&mut RngStream, EngineError> {
        self.streams
            .get_mut(name)
            .ok_or_else(|| EngineError::UnknownStream(name.to_owned()))
    }

    pub fn next(&mut self, name: &str) -> Result<f64, EngineError> {
        Ok(self.stream(name)?.next_uniform())
    }
}
