//! Request/response exchange with per-attempt deadlines and retries.
//!
//! Each attempt samples the link at its start time and makes exactly one
//! loss draw for the round trip. A lost or late attempt is abandoned at its
//! deadline and the next attempt starts there.

use serde::{Deserialize, Serialize};

use crate::engine::{SimTime, UniformSource};
use crate::network::{deliver, transfer_time, Delivery, LinkSample};

/// Supplies the link a device sees at a given instant.
pub trait LinkProvider {
    fn link_at(&mut self, at: SimTime) -> LinkSample;
}

impl LinkProvider for LinkSample {
    fn link_at(&mut self, at: SimTime) -> LinkSample {
        LinkSample {
            sampled_at: at,
            ..self.clone()
        }
    }
}

/// Adapter for closures.
pub struct FnLinks<F>(pub F);

impl<F: FnMut(SimTime) -> LinkSample> LinkProvider for FnLinks<F> {
    fn link_at(&mut self, at: SimTime) -> LinkSample {
        (self.0)(at)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Deadline {
    /// Give up a fixed number of seconds after sending.
    Fixed { seconds: f64 },
    /// Give up `slack_s` after the attempt should have completed.
    Expected { slack_s: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub deadline: Deadline,
}

impl RetryPolicy {
    pub fn fixed(max_attempts: u32, timeout_s: f64) -> Self {
        RetryPolicy {
            max_attempts,
            deadline: Deadline::Fixed { seconds: timeout_s },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundTrip {
    pub up_bytes: u64,
    pub down_bytes: u64,
    pub server_us: u64,
}

impl RoundTrip {
    pub fn new(up_bytes: u64, down_bytes: u64, server_s: f64) -> Self {
        RoundTrip {
            up_bytes,
            down_bytes,
            server_us: SimTime::from_secs_f64(server_s).as_micros(),
        }
    }

    fn expected_s(&self, link: &LinkSample) -> Option<f64> {
        let up = transfer_time(self.up_bytes, link).ok()?;
        let down = transfer_time(self.down_bytes, link).ok()?;
        Some(up + SimTime::from_micros(self.server_us).as_secs_f64() + down)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "kebab-case")]
pub enum AttemptResult {
    Answered { at: SimTime },
    Lost,
    NoCoverage,
    TimedOut,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attempt {
    pub number: u32,
    pub started_at: SimTime,
    pub link: LinkSample,
    pub result: AttemptResult,
    /// When the next attempt may begin (deadline, or answer time).
    pub ends_at: SimTime,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExchangeOutcome {
    pub attempts: Vec<Attempt>,
    pub answered_at: Option<SimTime>,
    pub finished_at: SimTime,
}

impl ExchangeOutcome {
    pub fn succeeded(&self) -> bool {
        self.answered_at.is_some()
    }

    pub fn answering_attempt(&self) -> Option<&Attempt> {
        self.attempts
            .iter()
            .find(|a| matches!(a.result, AttemptResult::Answered { .. }))
    }
}

pub fn round_trip<L, R>(rt: RoundTrip, links: &mut L, policy: RetryPolicy, start: SimTime, loss: &mut R) -> ExchangeOutcome
where
    L: LinkProvider + ?Sized,
    R: UniformSource + ?Sized,
{
    let mut attempts = Vec::new();
    let mut t = start;
    for number in 1..=policy.max_attempts.max(1) {
        let link = links.link_at(t);
        let expected = rt.expected_s(&link);
        let deadline_s = match policy.deadline {
            Deadline::Fixed { seconds } => seconds,
            Deadline::Expected { slack_s } => expected.unwrap_or(0.0) + slack_s,
        };
        let give_up = t + SimTime::from_secs_f64(deadline_s);
        let result = match deliver(rt.up_bytes, &link, t, loss) {
            Delivery::Lost if !link.has_coverage() => AttemptResult::NoCoverage,
            Delivery::Lost => AttemptResult::Lost,
            Delivery::Delivered { at } => {
                let down = transfer_time(rt.down_bytes, &link).expect("delivered link has coverage");
                let answer = at + SimTime::from_micros(rt.server_us) + SimTime::from_secs_f64(down);
                if answer <= give_up {
                    AttemptResult::Answered { at: answer }
                } else {
                    AttemptResult::TimedOut
                }
            }
        };
        let ends_at = match result {
            AttemptResult::Answered { at } => at,
            _ => give_up,
        };
        attempts.push(Attempt {
            number,
            started_at: t,
            link,
            result,
            ends_at,
        });
        if let AttemptResult::Answered { at } = result {
            return ExchangeOutcome {
                attempts,
                answered_at: Some(at),
                finished_at: at,
            };
        }
        t = ends_at;
    }
    ExchangeOutcome {
        attempts,
        answered_at: None,
        finished_at: t,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::RngStream;

    #[test]
    fn lossless_exchange_answers_first_try() {
        let mut link = LinkSample::fixed(8e6, 0.0, 0.01);
        let mut rng = RngStream::new("link-loss", 1);
        let ex = round_trip(
            RoundTrip::new(1_000_000, 1_000, 0.5),
            &mut link,
            RetryPolicy::fixed(3, 5.0),
            SimTime::ZERO,
            &mut rng,
        );
        assert_eq!(ex.attempts.len(), 1);
        // 1 MB at 8 Mb/s = 1 s, plus 0.001 s reply, plus two base latencies and server time.
        assert_eq!(ex.answered_at, Some(SimTime::from_secs_f64(0.01 + 1.0 + 0.5 + 0.01 + 0.001)));
        assert_eq!(rng.draw_count(), 1);
    }

    #[test]
    fn slow_link_times_out_each_attempt() {
        let mut link = LinkSample::fixed(1e6, 0.0, 0.01);
        let mut rng = RngStream::new("link-loss", 1);
        let ex = round_trip(
            RoundTrip::new(1_000_000, 100, 0.0),
            &mut link,
            RetryPolicy::fixed(3, 5.0),
            SimTime::from_secs(10),
            &mut rng,
        );
        assert!(!ex.succeeded());
        assert!(ex.attempts.iter().all(|a| a.result == AttemptResult::TimedOut));
        assert_eq!(ex.finished_at, SimTime::from_secs(25));
    }

    #[test]
    fn expected_deadline_tolerates_large_transfers() {
        let mut link = LinkSample::fixed(1e6, 0.0, 0.0);
        let mut rng = RngStream::new("link-loss", 1);
        let ex = round_trip(
            RoundTrip::new(10_000_000, 100, 0.0),
            &mut link,
            RetryPolicy {
                max_attempts: 1,
                deadline: Deadline::Expected { slack_s: 1.0 },
            },
            SimTime::ZERO,
            &mut rng,
        );
        assert!(ex.succeeded());
    }

    #[test]
    fn no_coverage_is_distinguished_from_loss() {
        let mut link = LinkSample::no_coverage(SimTime::ZERO);
        let mut rng = RngStream::new("link-loss", 1);
        let ex = round_trip(RoundTrip::new(10, 10, 0.0), &mut link, RetryPolicy::fixed(2, 5.0), SimTime::ZERO, &mut rng);
        assert!(ex.attempts.iter().all(|a| a.result == AttemptResult::NoCoverage));
        assert_eq!(ex.finished_at, SimTime::from_secs(10));
    }
}
