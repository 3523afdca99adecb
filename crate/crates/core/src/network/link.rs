use std::collections::BTreeMap;

use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::tower::{CellTower, Rat};
use crate::engine::{SimTime, UniformSource};
use crate::Point;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("link has no coverage")]
pub struct NoCoverage;

/// One SNR quality bin. A bin applies from `min_snr_db` up to the next bin's
/// threshold; the first bin also catches everything below it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityBin {
    pub min_snr_db: f64,
    pub bandwidth_fraction: f64,
    pub loss_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatProfile {
    pub snr0_db: f64,
    pub path_loss_exponent: f64,
    pub bins: Vec<QualityBin>,
}

impl RatProfile {
    pub fn bin_for(&self, snr_db: f64) -> &QualityBin {
        self.bins
            .iter()
            .rev()
            .find(|b| snr_db >= b.min_snr_db)
            .unwrap_or(&self.bins[0])
    }
}

/// Log-distance path loss with Gaussian fade and an SNR-binned
/// bandwidth/loss table per generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkModel {
    pub reference_distance_m: f64,
    pub fade_sigma_db: f64,
    pub indoor_penalty_db: f64,
    pub rats: BTreeMap<Rat, RatProfile>,
}

impl LinkModel {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.reference_distance_m > 0.0) {
            return Err("reference_distance_m must be > 0".into());
        }
        if !(self.fade_sigma_db >= 0.0) {
            return Err("fade_sigma_db must be >= 0".into());
        }
        if !(self.indoor_penalty_db >= 0.0) {
            return Err("indoor_penalty_db must be >= 0".into());
        }
        for rat in Rat::ALL {
            let p = self
                .rats
                .get(&rat)
                .ok_or_else(|| format!("rats.{rat}: missing profile"))?;
            if !(p.path_loss_exponent > 0.0) {
                return Err(format!("rats.{rat}.path_loss_exponent must be > 0"));
            }
            if p.bins.is_empty() {
                return Err(format!("rats.{rat}.bins: at least one bin required"));
            }
            for (i, b) in p.bins.iter().enumerate() {
                if !(b.bandwidth_fraction > 0.0 && b.bandwidth_fraction <= 1.0) {
                    return Err(format!("rats.{rat}.bins[{i}].bandwidth_fraction must be in (0, 1]"));
                }
                if !(0.0..=1.0).contains(&b.loss_prob) {
                    return Err(format!("rats.{rat}.bins[{i}].loss_prob must be in [0, 1]"));
                }
            }
            for (i, w) in p.bins.windows(2).enumerate() {
                let (lo, hi) = (&w[0], &w[1]);
                if !(hi.min_snr_db > lo.min_snr_db) {
                    return Err(format!("rats.{rat}.bins[{}]: thresholds must strictly increase", i + 1));
                }
                if hi.bandwidth_fraction < lo.bandwidth_fraction || hi.loss_prob > lo.loss_prob {
                    return Err(format!(
                        "rats.{rat}.bins[{}]: bandwidth must not fall and loss must not rise with SNR",
                        i + 1
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn profile(&self, rat: Rat) -> &RatProfile {
        &self.rats[&rat]
    }

    /// SNR before fading, including the indoor penalty.
    pub fn modeled_snr(&self, tower: &CellTower, position: Point, indoor: bool) -> f64 {
        let p = self.profile(tower.rat);
        let d = tower.position.distance(position);
        let snr = log_distance_snr(p.snr0_db, p.path_loss_exponent, self.reference_distance_m, d);
        if indoor {
            snr - self.indoor_penalty_db
        } else {
            snr
        }
    }

    /// Picks the in-range tower with the highest modeled SNR (ties: newer
    /// generation, then smaller tower id).
    pub fn select_serving<'a>(&self, towers: &'a [CellTower], position: Point, indoor: bool) -> Option<(&'a CellTower, f64)> {
        let mut best: Option<(&CellTower, f64)> = None;
        for t in towers {
            if t.position.distance(position) > t.range_m {
                continue;
            }
            let snr = self.modeled_snr(t, position, indoor);
            best = match best {
                None => Some((t, snr)),
                Some((b, bsnr)) => {
                    let better = snr > bsnr
                        || (snr == bsnr && (t.rat > b.rat || (t.rat == b.rat && t.tower_id < b.tower_id)));
                    if better {
                        Some((t, snr))
                    } else {
                        Some((b, bsnr))
                    }
                }
            };
        }
        best
    }

    /// Samples the cellular link at `position`. Draws one fade value (two
    /// uniforms) from `fade` when a tower serves the position, none otherwise.
    pub fn link_state<R: UniformSource + ?Sized>(
        &self,
        towers: &[CellTower],
        position: Point,
        indoor: bool,
        at: SimTime,
        fade: &mut R,
    ) -> LinkSample {
        let Some((tower, modeled)) = self.select_serving(towers, position, indoor) else {
            return LinkSample::no_coverage(at);
        };
        let snr = modeled + fade.next_normal(0.0, self.fade_sigma_db);
        self.sample_for(tower, snr, at)
    }

    /// Link for a given tower at a known SNR (no randomness).
    pub fn sample_for(&self, tower: &CellTower, snr_db: f64, at: SimTime) -> LinkSample {
        let bin = self.profile(tower.rat).bin_for(snr_db);
        LinkSample {
            serving: Some(Serving::Tower {
                tower_id: tower.tower_id.clone(),
            }),
            rat: Some(tower.rat),
            snr_db: Some(snr_db),
            bandwidth_bps: bin.bandwidth_fraction * tower.max_bandwidth_bps,
            loss_prob: bin.loss_prob,
            base_latency_s: tower.base_latency_s,
            sampled_at: at,
        }
    }
}

/// `snr0 - 10 * exponent * log10(d / d0)`, with `d` clamped to at least `d0`.
pub fn log_distance_snr<T: Float>(snr0_db: T, exponent: T, d0: T, d: T) -> T {
    let ten = T::from(10.0).expect("10 is representable");
    let ratio = if d > d0 { d / d0 } else { T::one() };
    snr0_db - ten * exponent * ratio.log10()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "via", rename_all = "kebab-case")]
pub enum Serving {
    Tower { tower_id: String },
    Peer { peer_id: String },
    Relay { peer_id: String, tower_id: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSample {
    pub serving: Option<Serving>,
    pub rat: Option<Rat>,
    pub snr_db: Option<f64>,
    pub bandwidth_bps: f64,
    pub loss_prob: f64,
    pub base_latency_s: f64,
    pub sampled_at: SimTime,
}

impl LinkSample {
    pub fn no_coverage(at: SimTime) -> Self {
        LinkSample {
            serving: None,
            rat: None,
            snr_db: None,
            bandwidth_bps: 0.0,
            loss_prob: 1.0,
            base_latency_s: 0.0,
            sampled_at: at,
        }
    }

    /// A fixed link, handy for scripted experiments and tests.
    pub fn fixed(bandwidth_bps: f64, loss_prob: f64, base_latency_s: f64) -> Self {
        LinkSample {
            serving: Some(Serving::Tower {
                tower_id: "fixed".into(),
            }),
            rat: None,
            snr_db: None,
            bandwidth_bps,
            loss_prob,
            base_latency_s,
            sampled_at: SimTime::ZERO,
        }
    }

    pub fn has_coverage(&self) -> bool {
        self.serving.is_some()
    }

    pub fn tower_id(&self) -> Option<&str> {
        match &self.serving {
            Some(Serving::Tower { tower_id }) | Some(Serving::Relay { tower_id, .. }) => Some(tower_id),
            _ => None,
        }
    }

    /// Device-to-peer hop followed by the peer's own cellular link.
    pub fn relay_via(p2p: &LinkSample, upstream: &LinkSample) -> LinkSample {
        let (Some(Serving::Peer { peer_id }), Some(tower_id)) = (&p2p.serving, upstream.tower_id()) else {
            return LinkSample::no_coverage(p2p.sampled_at);
        };
        LinkSample {
            serving: Some(Serving::Relay {
                peer_id: peer_id.clone(),
                tower_id: tower_id.to_owned(),
            }),
            rat: upstream.rat,
            snr_db: upstream.snr_db,
            bandwidth_bps: p2p.bandwidth_bps.min(upstream.bandwidth_bps),
            loss_prob: 1.0 - (1.0 - p2p.loss_prob) * (1.0 - upstream.loss_prob),
            base_latency_s: p2p.base_latency_s + upstream.base_latency_s,
            sampled_at: p2p.sampled_at,
        }
    }
}

/// Seconds to move `payload_bytes` across `link`.
pub fn transfer_time(payload_bytes: u64, link: &LinkSample) -> Result<f64, NoCoverage> {
    if !link.has_coverage() || !(link.bandwidth_bps > 0.0) {
        return Err(NoCoverage);
    }
    Ok(link.base_latency_s + payload_bytes as f64 * 8.0 / link.bandwidth_bps)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "kebab-case")]
pub enum Delivery {
    Delivered { at: SimTime },
    Lost,
}

impl Delivery {
    pub fn delivered_at(self) -> Option<SimTime> {
        match self {
            Delivery::Delivered { at } => Some(at),
            Delivery::Lost => None,
        }
    }
}

/// Sends one message. Always consumes exactly one draw from `loss`.
pub fn deliver<R: UniformSource + ?Sized>(payload_bytes: u64, link: &LinkSample, now: SimTime, loss: &mut R) -> Delivery {
    let lost = loss.bernoulli(link.loss_prob);
    match transfer_time(payload_bytes, link) {
        Ok(secs) if !lost => Delivery::Delivered {
            at: now + SimTime::from_secs_f64(secs),
        },
        _ => Delivery::Lost,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct P2pConfig {
    pub range_m: f64,
    pub bandwidth_bps: f64,
    pub loss_prob: f64,
    pub base_latency_s: f64,
}

impl P2pConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.range_m >= 0.0) {
            return Err("p2p.range_m must be >= 0".into());
        }
        if !(self.bandwidth_bps > 0.0) {
            return Err("p2p.bandwidth_bps must be > 0".into());
        }
        if !(0.0..=1.0).contains(&self.loss_prob) {
            return Err("p2p.loss_prob must be in [0, 1]".into());
        }
        if !(self.base_latency_s >= 0.0) {
            return Err("p2p.base_latency_s must be >= 0".into());
        }
        Ok(())
    }
}

/// Direct device-to-device link from `a` to peer `b`, present only within range.
pub fn p2p_link(a: Point, peer_id: &str, b: Point, cfg: &P2pConfig, at: SimTime) -> Option<LinkSample> {
    (a.distance(b) <= cfg.range_m).then(|| LinkSample {
        serving: Some(Serving::Peer {
            peer_id: peer_id.to_owned(),
        }),
        rat: None,
        snr_db: None,
        bandwidth_bps: cfg.bandwidth_bps,
        loss_prob: cfg.loss_prob,
        base_latency_s: cfg.base_latency_s,
        sampled_at: at,
    })
}
