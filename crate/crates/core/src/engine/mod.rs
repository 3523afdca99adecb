//! Discrete-event core: virtual clock, priority queue, named random streams
//! and the append-only event log.
//!
//! Every entry in the log is an event that went through [`Scheduler::schedule`];
//! handlers that want to record an observation schedule it at the current
//! clock. The log therefore holds exactly the scheduled events with
//! `time <= t_end`, in `(time, seq)` order.

mod log;
pub mod rng;
mod time;

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt;

use thiserror::Error;

pub use log::{adjacent_payload, from_adjacent, EventLog, EventPayload, LogParseError};
pub use rng::{RngStream, RngStreams, UniformSource};
pub use time::SimTime;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EngineError {
    #[error("cannot schedule at {at}: clock is already at {clock}")]
    SchedulingInPast { at: SimTime, clock: SimTime },
    #[error("random stream `{0}` is not registered")]
    UnknownStream(String),
}

pub type EventId = u64;

#[derive(Debug, Clone, PartialEq)]
pub struct SimEvent<P> {
    pub time: SimTime,
    pub seq: u64,
    pub subject: String,
    pub payload: P,
}

impl<P: EventPayload> SimEvent<P> {
    pub fn kind(&self) -> &'static str {
        self.payload.kind()
    }
}

struct Queued<P>(SimEvent<P>);

impl<P> Queued<P> {
    fn key(&self) -> (SimTime, u64) {
        (self.0.time, self.0.seq)
    }
}

impl<P> PartialEq for Queued<P> {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}
impl<P> Eq for Queued<P> {}
impl<P> PartialOrd for Queued<P> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl<P> Ord for Queued<P> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key().cmp(&other.key())
    }
}

/// Clock plus pending-event queue. Handed to event handlers so they can
/// schedule follow-up events.
pub struct Scheduler<P> {
    clock: SimTime,
    next_seq: u64,
    queue: BinaryHeap<Reverse<Queued<P>>>,
}

impl<P> fmt::Debug for Scheduler<P> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Scheduler")
            .field("clock", &self.clock)
            .field("next_seq", &self.next_seq)
            .field("pending", &self.queue.len())
            .finish()
    }
}

impl<P> Default for Scheduler<P> {
    fn default() -> Self {
        Scheduler {
            clock: SimTime::ZERO,
            next_seq: 0,
            queue: BinaryHeap::new(),
        }
    }
}

impl<P> Scheduler<P> {
    pub fn now(&self) -> SimTime {
        self.clock
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn schedule(&mut self, at: SimTime, subject: impl Into<String>, payload: P) -> Result<EventId, EngineError> {
        if at < self.clock {
            return Err(EngineError::SchedulingInPast { at, clock: self.clock });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse(Queued(SimEvent {
            time: at,
            seq,
            subject: subject.into(),
            payload,
        })));
        Ok(seq)
    }

    /// Schedules at the current clock; cannot fail.
    pub fn emit(&mut self, subject: impl Into<String>, payload: P) -> EventId {
        let now = self.clock;
        self.schedule(now, subject, payload)
            .expect("scheduling at the current clock is always valid")
    }

    fn pop_due(&mut self, t_end: SimTime) -> Option<SimEvent<P>> {
        match self.queue.peek() {
            Some(Reverse(q)) if q.0.time <= t_end => self.queue.pop().map(|Reverse(q)| q.0),
            _ => None,
        }
    }
}

/// A single simulation run.
pub struct Engine<P> {
    scheduler: Scheduler<P>,
    log: EventLog<P>,
}

impl<P: EventPayload> Engine<P> {
    pub fn new(scenario_id: impl Into<String>, master_seed: u64) -> Self {
        Engine {
            scheduler: Scheduler::default(),
            log: EventLog::new(scenario_id, master_seed),
        }
    }

    pub fn now(&self) -> SimTime {
        self.scheduler.now()
    }

    pub fn scheduler(&mut self) -> &mut Scheduler<P> {
        &mut self.scheduler
    }

    pub fn schedule(&mut self, at: SimTime, subject: impl Into<String>, payload: P) -> Result<EventId, EngineError> {
        self.scheduler.schedule(at, subject, payload)
    }

    /// Processes every event with `time <= t_end` in `(time, seq)` order,
    /// then advances the clock to `t_end`.
    pub fn run_until<E, F>(&mut self, t_end: SimTime, mut handler: F) -> Result<&EventLog<P>, E>
    where
        F: FnMut(&mut Scheduler<P>, &SimEvent<P>) -> Result<(), E>,
    {
        while let Some(event) = self.scheduler.pop_due(t_end) {
            debug_assert!(event.time >= self.scheduler.clock);
            self.scheduler.clock = event.time;
            handler(&mut self.scheduler, &event)?;
            self.log.push(event);
        }
        if t_end > self.scheduler.clock {
            self.scheduler.clock = t_end;
        }
        Ok(&self.log)
    }

    /// Runs with no handler; every due event is simply logged.
    pub fn drain_until(&mut self, t_end: SimTime) -> &EventLog<P> {
        match self.run_until(t_end, |_, _| Ok::<(), std::convert::Infallible>(())) {
            Ok(log) => log,
            Err(never) => match never {},
        }
    }

    pub fn log(&self) -> &EventLog<P> {
        &self.log
    }

    pub fn into_log(self) -> EventLog<P> {
        self.log
    }
}
