//! Drives a scenario through the event engine.
//!
//! Exchanges are resolved when they start (link samples and loss draws are
//! taken in start order), and their messages and results are scheduled at
//! the virtual times they happen. Device state changes are applied when
//! those events are processed, so the log reads as a timeline.

mod records;

use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

pub use records::{
    BatteryRecord, DeployComplete, DeployStart, DiscoveryRecord, GpsFixRecord, Leg, MessageRecord, PositionReport, Record,
    ReplacementFailed, RunStart, Sweep, UserInteraction,
};

use crate::device::{
    pdr_track, pdr_update, sample_gps, sample_imu, Activity, Battery, BatteryModel, DeviceError, DeviceState, GpsFix, Stride,
};
use crate::engine::rng::streams;
use crate::engine::{Engine, EngineError, EventLog, RngStream, Scheduler, SimEvent, SimTime};
use crate::lifecycle::{
    expire_sweep, finish_replacement, is_bad_fix, monitor_sensor, plan_replacement, LifecycleEvent, LifecycleState,
    ReplacementError, ReplacementRequest, Transition, Verdict,
};
use crate::network::{p2p_link, LinkSample, Serving};
use crate::registry::{
    deploy_protocol, deploy_round_trips, discover, discovery_round_trip, plan_bundle, remote_infer, remote_infer_from,
    AgentManifest, ArchMode, AttemptResult, Capability, DeployExchange, DiscoverQuery, DiscoveryError, ExchangeOutcome, FnLinks,
    ModelClass, RemoteService, RoundTrip, ServiceOffering,
};
use crate::scenario::{generate_tasks, position_at, PreinstalledState, Scenario};
use crate::task::{TaskCategory, TaskOutcome, TaskRequest};
use crate::{Point, Pose};

/// Subject of events that belong to no single device.
pub const WORLD_SUBJECT: &str = "world";

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error("scenario references unknown agent `{0}`")]
    UnknownAgent(String),
}

/// Runs `scenario` under `seed` and returns the complete event log.
pub fn simulate(scenario: &Scenario, seed: u64) -> Result<EventLog<Record>, SimError> {
    let mut engine = Engine::new(scenario.scenario_id.clone(), seed);
    engine.schedule(
        SimTime::ZERO,
        WORLD_SUBJECT,
        Record::RunStart(RunStart {
            scenario_id: scenario.scenario_id.clone(),
            seed,
            arch_mode: scenario.arch_mode,
            duration_s: scenario.duration_s,
            devices: scenario.devices.iter().map(|d| d.device_id.clone()).collect(),
        }),
    )?;
    let mut world = World::new(scenario, seed);
    engine.run_until(SimTime::MAX, |sched, ev| world.handle(sched, ev))?;
    Ok(engine.into_log())
}

struct Streams {
    fade: RngStream,
    loss: RngStream,
    arrival: RngStream,
    inference: RngStream,
    gps: RngStream,
    imu: RngStream,
}

#[derive(Debug, Clone)]
enum Job {
    Provision(Capability),
    Replace(ReplacementRequest),
}

/// The device's one outstanding registry interaction and the record kind
/// (and time) that will conclude it.
struct InFlight {
    job: Job,
    manifest: Option<AgentManifest>,
    resolves_on: (&'static str, SimTime),
}

struct Node {
    state: DeviceState,
    battery_model: BatteryModel,
    jobs: VecDeque<Job>,
    in_flight: Option<InFlight>,
    waiting: Vec<TaskRequest>,
    services: BTreeMap<Capability, (RemoteService, SimTime)>,
    gps_window: VecDeque<GpsFix>,
    last_good_fix: Option<Point>,
    steps_since_fix: Vec<Stride<f64>>,
    pdr_pose: Option<Pose>,
    heading: f64,
    depleted_reported: bool,
}

impl Node {
    fn has_job(&self, pred: impl Fn(&Job) -> bool) -> bool {
        self.jobs.iter().any(&pred) || self.in_flight.as_ref().is_some_and(|f| pred(&f.job))
    }

    fn agent_of_class(&self, class: ModelClass) -> Option<(String, LifecycleState)> {
        self.state
            .agents()
            .find(|a| a.manifest.model_class == class)
            .map(|a| (a.manifest.agent_id.clone(), a.state))
    }

    fn localizing(&self) -> bool {
        self.state.agents().any(|a| {
            a.manifest.capability == Capability::Localization
                && matches!(a.state, LifecycleState::Active | LifecycleState::Paused | LifecycleState::Dormant)
        })
    }
}

struct World<'a> {
    scenario: &'a Scenario,
    rng: Streams,
    nodes: Vec<Node>,
    emergency_over: bool,
    closed: bool,
}

/// Link seen by device `i` at `at`: its own cellular link, else a relay
/// through the first in-range peer that has cellular coverage.
fn link_for(scenario: &Scenario, dead: &[bool], i: usize, at: SimTime, fade: &mut RngStream) -> LinkSample {
    if dead[i] {
        return LinkSample::no_coverage(at);
    }
    let t_s = at.as_secs_f64();
    let cellular = |j: usize, fade: &mut RngStream| {
        let pos = position_at(&scenario.devices[j].waypoints, t_s);
        if scenario.cellular_outage_at(t_s) {
            return LinkSample::no_coverage(at);
        }
        scenario
            .config
            .link
            .link_state(&scenario.towers, pos, scenario.is_indoor(pos), at, fade)
    };
    let own = cellular(i, fade);
    if own.has_coverage() {
        return own;
    }
    let here = position_at(&scenario.devices[i].waypoints, t_s);
    for (j, peer) in scenario.devices.iter().enumerate() {
        if j == i || dead[j] {
            continue;
        }
        let there = position_at(&peer.waypoints, t_s);
        let Some(hop) = p2p_link(here, &peer.device_id, there, &scenario.config.p2p, at) else {
            continue;
        };
        let upstream = cellular(j, fade);
        if upstream.has_coverage() {
            return LinkSample::relay_via(&hop, &upstream);
        }
    }
    own
}

fn describe(serving: &Option<Serving>) -> Option<String> {
    serving.as_ref().map(|s| match s {
        Serving::Tower { tower_id } => tower_id.clone(),
        Serving::Peer { peer_id } => format!("peer:{peer_id}"),
        Serving::Relay { peer_id, tower_id } => format!("peer:{peer_id}>{tower_id}"),
    })
}

struct Wire<'s> {
    purpose: &'s str,
    request_type: &'s str,
    response_type: &'s str,
    reference: &'s str,
}

/// Schedules the request and (when answered) response message of every attempt.
fn schedule_messages(
    sched: &mut Scheduler<Record>,
    device_id: &str,
    wire: &Wire<'_>,
    rt: RoundTrip,
    ex: &ExchangeOutcome,
) -> Result<(), EngineError> {
    for a in &ex.attempts {
        let via = describe(&a.link.serving);
        let answered = match a.result {
            AttemptResult::Answered { at } => Some(at),
            _ => None,
        };
        let msg = |leg, message_type: &str, bytes, delivered| {
            Record::Message(MessageRecord {
                purpose: wire.purpose.to_owned(),
                message_type: message_type.to_owned(),
                leg,
                attempt: a.number,
                bytes,
                delivered,
                via: via.clone(),
                reference: wire.reference.to_owned(),
            })
        };
        sched.schedule(
            a.started_at,
            device_id,
            msg(Leg::Request, wire.request_type, rt.up_bytes, answered.is_some()),
        )?;
        if let Some(at) = answered {
            sched.schedule(at, device_id, msg(Leg::Response, wire.response_type, rt.down_bytes, true))?;
        }
    }
    Ok(())
}

fn schedule_deploy(sched: &mut Scheduler<Record>, device_id: &str, manifest: &AgentManifest, ex: &DeployExchange) -> Result<(), EngineError> {
    let rts = deploy_round_trips(manifest, device_id);
    let wires = [
        Wire {
            purpose: "deploy-request",
            request_type: "DeployRequest",
            response_type: "AgentManifest",
            reference: &manifest.agent_id,
        },
        Wire {
            purpose: "deploy-bundle",
            request_type: "AgentBundle",
            response_type: "DeployAck",
            reference: &manifest.agent_id,
        },
    ];
    for ((leg, rt), wire) in ex.legs.iter().zip(rts).zip(&wires) {
        schedule_messages(sched, device_id, wire, rt, &leg.exchange)?;
    }
    Ok(())
}

fn discovery_record(query: &DiscoverQuery, attempts: usize, offerings: Option<&[ServiceOffering]>) -> Record {
    Record::Discovery(DiscoveryRecord {
        capability: query.capability,
        arch_mode: query.arch_mode,
        attempts: attempts as u32,
        succeeded: offerings.is_some(),
        offerings: offerings
            .unwrap_or_default()
            .iter()
            .map(|o| o.offering_id().to_owned())
            .collect(),
    })
}

fn timeout(task: &TaskRequest, mode: ArchMode, attempts: u32, at: SimTime) -> TaskOutcome {
    TaskOutcome {
        task_id: task.task_id.clone(),
        device_id: task.device_id.clone(),
        mode,
        category: TaskCategory::Timeout,
        attempts,
        latency_s: (at - task.arrived_at).as_secs_f64(),
        correct: None,
    }
}

impl<'a> World<'a> {
    fn new(scenario: &'a Scenario, seed: u64) -> Self {
        let nodes = scenario
            .devices
            .iter()
            .map(|d| {
                let mut state = DeviceState::new(d.device_id.clone(), d.memory_capacity_bytes, Battery::from_pct(d.battery_pct));
                state.credential = d.credential;
                state.position = position_at(&d.waypoints, 0.0);
                state.indoor = scenario.is_indoor(state.position);
                Node {
                    state,
                    battery_model: d.battery_model.clone().unwrap_or_else(|| scenario.config.battery.clone()),
                    jobs: VecDeque::new(),
                    in_flight: None,
                    waiting: Vec::new(),
                    services: BTreeMap::new(),
                    gps_window: VecDeque::new(),
                    last_good_fix: None,
                    steps_since_fix: Vec::new(),
                    pdr_pose: None,
                    heading: 0.0,
                    depleted_reported: false,
                }
            })
            .collect();
        World {
            scenario,
            rng: Streams {
                fade: RngStream::new(streams::LINK_FADE, seed),
                loss: RngStream::new(streams::LINK_LOSS, seed),
                arrival: RngStream::new(streams::TASK_ARRIVAL, seed),
                inference: RngStream::new(streams::INFERENCE, seed),
                gps: RngStream::new(streams::GPS_NOISE, seed),
                imu: RngStream::new(streams::IMU_NOISE, seed),
            },
            nodes,
            emergency_over: false,
            closed: false,
        }
    }

    fn node_index(&self, device_id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.state.device_id == device_id)
    }

    fn dead(&self) -> Vec<bool> {
        self.nodes.iter().map(|n| n.state.battery.is_depleted()).collect()
    }

    fn handle(&mut self, sched: &mut Scheduler<Record>, ev: &SimEvent<Record>) -> Result<(), SimError> {
        let idx = self.node_index(&ev.subject);
        match (&ev.payload, idx) {
            (Record::RunStart(_), _) => self.start(sched),
            (Record::Tick, _) => self.tick(sched),
            (Record::Sweep(s), _) => self.sweep(sched, s.end_of_emergency),
            (Record::RunEnd, _) => self.finish(sched),
            (Record::TaskArrival(task), Some(i)) => self.arrive(sched, i, task),
            (Record::Message(m), Some(i)) => {
                if m.via.is_some() {
                    let node = &mut self.nodes[i];
                    node.state.battery.drain_pct(m.bytes as f64 * node.battery_model.radio_pct_per_byte);
                }
                Ok(())
            }
            (Record::UserInteraction(u), Some(i)) => self.user_request(sched, i, u.capability),
            (Record::Discovery(_), Some(i)) => self.resolve(sched, i, "discovery"),
            (Record::ReplacementFailed(_), Some(i)) => self.resolve(sched, i, "replacement-failed"),
            (Record::DeployStart(d), Some(i)) => self.deploy_start(sched, i, &d.agent_id),
            (Record::DeployComplete(d), Some(i)) => self.deploy_complete(sched, i, d),
            _ => Ok(()),
        }
    }

    fn emit_transitions(sched: &mut Scheduler<Record>, device_id: &str, ts: Vec<Transition>) {
        for t in ts {
            sched.emit(device_id, Record::Lifecycle(t));
        }
    }

    // ----------------------------------------------------------- schedule

    fn start(&mut self, sched: &mut Scheduler<Record>) -> Result<(), SimError> {
        let s = self.scenario;
        let now = sched.now();
        for node in &mut self.nodes {
            let spec = s.device(&node.state.device_id).expect("node built from spec");
            let id = node.state.device_id.clone();
            for p in &spec.preinstalled {
                let m = s.catalog().agent(&p.agent_id).ok_or_else(|| SimError::UnknownAgent(p.agent_id.clone()))?;
                let ts = node.state.install(m.clone(), now)?;
                Self::emit_transitions(sched, &id, ts);
                if p.state == PreinstalledState::Active {
                    let t = node.state.apply(&p.agent_id, LifecycleEvent::Activate, now, "preinstalled")?;
                    Self::emit_transitions(sched, &id, vec![t]);
                }
            }
            sched.emit(
                id,
                Record::Battery(BatteryRecord {
                    battery_pct: node.state.battery.pct(),
                    memory_used_bytes: node.state.memory_used_bytes(),
                }),
            );
        }

        let mut tasks = Vec::new();
        for (w, spec) in s.workload.iter().enumerate() {
            let mut spec = spec.clone();
            spec.acceptable_latency_s.get_or_insert(s.config.workload.acceptable_latency_s);
            spec.payload_bytes.get_or_insert(s.config.workload.payload_bytes);
            tasks.extend(generate_tasks(&spec, w, s.duration_s, &mut self.rng.arrival));
        }
        tasks.sort_by_key(|t| t.arrived_at);
        for t in tasks {
            sched.schedule(t.arrived_at, t.device_id.clone(), Record::TaskArrival(t))?;
        }

        let deploy_at = SimTime::from_secs_f64(s.deploy_at_s);
        for spec in &s.devices {
            let mut caps: Vec<Capability> = Vec::new();
            let from_workload = s.workload.iter().filter(|w| w.device_id == spec.device_id).map(|w| w.capability);
            let extra = match s.arch_mode {
                ArchMode::Agent => spec.provision.as_slice(),
                ArchMode::Remote => &[],
            };
            for c in from_workload.chain(extra.iter().copied()) {
                if !caps.contains(&c) {
                    caps.push(c);
                }
            }
            for c in caps {
                let preinstalled = spec
                    .preinstalled
                    .iter()
                    .filter_map(|p| s.catalog().agent(&p.agent_id))
                    .any(|m| m.capability == c);
                if s.arch_mode == ArchMode::Agent && preinstalled {
                    continue;
                }
                let action = match s.arch_mode {
                    ArchMode::Agent => "provision",
                    ArchMode::Remote => "register",
                };
                sched.schedule(
                    deploy_at,
                    spec.device_id.clone(),
                    Record::UserInteraction(UserInteraction {
                        action: action.into(),
                        capability: c,
                    }),
                )?;
            }
        }

        let end = SimTime::from_secs_f64(s.duration_s);
        let tick = SimTime::from_secs_f64(s.config.world.tick_s);
        let mut t = tick;
        while t <= end {
            sched.schedule(t, WORLD_SUBJECT, Record::Tick)?;
            t = t + tick;
        }
        let eoe = SimTime::from_secs_f64(s.end_of_emergency_s);
        let period = SimTime::from_secs_f64(s.config.lifecycle.sweep_period_s);
        let mut t = period;
        while t < eoe {
            sched.schedule(t, WORLD_SUBJECT, Record::Sweep(Sweep { end_of_emergency: false }))?;
            t = t + period;
        }
        sched.schedule(eoe, WORLD_SUBJECT, Record::Sweep(Sweep { end_of_emergency: true }))?;
        sched.schedule(end, WORLD_SUBJECT, Record::RunEnd)?;
        Ok(())
    }

    // ------------------------------------------------------------- ticks

    fn tick(&mut self, sched: &mut Scheduler<Record>) -> Result<(), SimError> {
        for i in 0..self.nodes.len() {
            self.tick_device(sched, i)?;
        }
        Ok(())
    }

    fn tick_device(&mut self, sched: &mut Scheduler<Record>, i: usize) -> Result<(), SimError> {
        let s = self.scenario;
        let now = sched.now();
        let cfg = &s.config;
        let node = &mut self.nodes[i];
        let id = node.state.device_id.clone();
        let truth = position_at(&s.devices[i].waypoints, now.as_secs_f64());
        let moved = truth - node.state.position;
        let stride = moved.norm();
        if stride > 0.0 {
            node.heading = moved.heading();
        }
        node.state.position = truth;
        node.state.indoor = s.is_indoor(truth);
        let mut activity = Activity::default();

        if !node.state.battery.is_depleted() && node.localizing() {
            let imu = sample_imu(node.heading, stride, now, &cfg.sensors, &mut self.rng.imu);
            let step = Stride {
                heading: imu.heading_rad,
                length: imu.stride_m,
            };
            let fix = sample_gps(truth, node.state.indoor, now, &cfg.sensors, &mut self.rng.gps);
            sched.emit(
                id.clone(),
                Record::GpsFix(GpsFixRecord {
                    fix,
                    truth,
                    indoor: node.state.indoor,
                    error_m: fix.position.distance(truth),
                }),
            );
            node.steps_since_fix.push(step);
            if !is_bad_fix(&fix, &cfg.lifecycle) {
                node.last_good_fix = Some(fix.position);
                node.steps_since_fix.clear();
            }

            if let Some((pdr_id, LifecycleState::Active)) = node.agent_of_class(ModelClass::PdrLoc) {
                let pose = pdr_update(node.pdr_pose.unwrap_or(Pose {
                    position: fix.position,
                    heading: step.heading,
                }), step);
                node.pdr_pose = Some(pose);
                sched.emit(
                    id.clone(),
                    Record::PositionReport(PositionReport {
                        agent_id: pdr_id.clone(),
                        model_class: ModelClass::PdrLoc,
                        reported: pose.position,
                        truth,
                        error_m: pose.position.distance(truth),
                    }),
                );
                activity
                    .inference_energy_pct
                    .push(node.state.agent(&pdr_id).map_or(0.0, |a| a.manifest.inference_energy_pct));
            }

            if let Some((gps_id, state)) = node.agent_of_class(ModelClass::GpsLoc) {
                if matches!(state, LifecycleState::Active | LifecycleState::Paused) {
                    node.gps_window.push_back(fix);
                    while node.gps_window.len() > cfg.lifecycle.n_bad.max(1) as usize {
                        node.gps_window.pop_front();
                    }
                }
                let window: Vec<GpsFix> = node.gps_window.iter().cloned().collect();
                let verdict = monitor_sensor(&window, &cfg.lifecycle);
                let pending = node.has_job(|j| matches!(j, Job::Replace(_)));
                let mut replace = false;
                match (state, verdict.verdict) {
                    (LifecycleState::Active, Verdict::Ok) => {
                        sched.emit(
                            id.clone(),
                            Record::PositionReport(PositionReport {
                                agent_id: gps_id.clone(),
                                model_class: ModelClass::GpsLoc,
                                reported: fix.position,
                                truth,
                                error_m: fix.position.distance(truth),
                            }),
                        );
                        activity
                            .inference_energy_pct
                            .push(node.state.agent(&gps_id).map_or(0.0, |a| a.manifest.inference_energy_pct));
                    }
                    (LifecycleState::Active, Verdict::Degraded) => {
                        let t = node.state.apply(&gps_id, LifecycleEvent::Pause, now, "gps-degraded")?;
                        Self::emit_transitions(sched, &id, vec![t]);
                        replace = !pending;
                    }
                    (LifecycleState::Paused, Verdict::Degraded) => replace = !pending,
                    _ => {}
                }
                if replace {
                    let req = ReplacementRequest::for_degraded_gps(&gps_id, &id);
                    sched.emit(id.clone(), Record::ReplacementRequest(req.clone()));
                    node.jobs.push_back(Job::Replace(req));
                }
            }
        }

        let node = &mut self.nodes[i];
        node.state.battery.step(s.config.world.tick_s, &activity, &node.battery_model);
        sched.emit(
            id.clone(),
            Record::Battery(BatteryRecord {
                battery_pct: node.state.battery.pct(),
                memory_used_bytes: node.state.memory_used_bytes(),
            }),
        );
        if node.state.battery.is_depleted() && !node.depleted_reported {
            node.depleted_reported = true;
            sched.emit(id, Record::DeviceDepleted);
        }
        self.start_jobs(sched, i)
    }

    // -------------------------------------------------------------- tasks

    fn arrive(&mut self, sched: &mut Scheduler<Record>, i: usize, task: &TaskRequest) -> Result<(), SimError> {
        let now = sched.now();
        let mode = self.scenario.arch_mode;
        let node = &mut self.nodes[i];
        if self.emergency_over || node.state.battery.is_depleted() {
            sched.emit(task.device_id.clone(), Record::TaskOutcome(timeout(task, mode, 0, now)));
            return Ok(());
        }
        match mode {
            ArchMode::Agent => {
                if node.state.usable_for(task.capability).is_some() {
                    return self.onboard(sched, i, task);
                }
                node.waiting.push(task.clone());
                let cap = task.capability;
                if !node.has_job(|j| matches!(j, Job::Provision(c) if *c == cap)) {
                    node.jobs.push_back(Job::Provision(cap));
                }
                self.start_jobs(sched, i)
            }
            ArchMode::Remote => self.remote(sched, i, task),
        }
    }

    /// Runs `task` on the device, activating a dormant agent if needed.
    /// Latency counts from arrival, so queued tasks include their wait.
    fn onboard(&mut self, sched: &mut Scheduler<Record>, i: usize, task: &TaskRequest) -> Result<(), SimError> {
        let now = sched.now();
        let node = &mut self.nodes[i];
        let id = node.state.device_id.clone();
        let Some(agent) = node.state.usable_for(task.capability) else {
            sched.emit(id, Record::TaskOutcome(timeout(task, ArchMode::Agent, 0, now)));
            return Ok(());
        };
        let (agent_id, state) = (agent.manifest.agent_id.clone(), agent.state);
        if state == LifecycleState::Dormant {
            let t = node.state.apply(&agent_id, LifecycleEvent::Activate, now, "task")?;
            Self::emit_transitions(sched, &id, vec![t]);
        }
        match node.state.run_inference(&agent_id, task, &mut self.rng.inference) {
            Ok(mut out) => {
                let done = now + SimTime::from_secs_f64(out.latency_s);
                out.latency_s = (done - task.arrived_at).as_secs_f64();
                out.category = TaskCategory::for_success(out.attempts, out.latency_s, task.acceptable_latency_s);
                sched.schedule(done, id, Record::TaskOutcome(out))?;
            }
            Err(DeviceError::BatteryDepleted) => {
                sched.emit(id, Record::TaskOutcome(timeout(task, ArchMode::Agent, 0, now)));
            }
            Err(e) => return Err(e.into()),
        }
        Ok(())
    }

    fn remote(&mut self, sched: &mut Scheduler<Record>, i: usize, task: &TaskRequest) -> Result<(), SimError> {
        let now = sched.now();
        let s = self.scenario;
        let dead = self.dead();
        let id = task.device_id.clone();
        let known = self.nodes[i]
            .services
            .get(&task.capability)
            .filter(|(_, at)| *at <= now)
            .map(|(svc, _)| svc.clone());
        let (service, start) = match known {
            Some(svc) => (svc, now),
            None => match self.discover_remote(sched, i, task.capability)? {
                (Some(svc), at) => (svc, at),
                (None, at) => {
                    sched.schedule(at, id, Record::TaskOutcome(timeout(task, ArchMode::Remote, 0, at)))?;
                    return Ok(());
                }
            },
        };
        let Streams {
            fade, loss, inference, ..
        } = &mut self.rng;
        let mut links = FnLinks(|t| link_for(s, &dead, i, t, fade));
        let r = if start == task.arrived_at {
            remote_infer(task, &service, &mut links, &s.config.registry.remote, loss, inference)
        } else {
            remote_infer_from(task, start, &service, &mut links, &s.config.registry.remote, loss, inference)
        };
        let rt = RoundTrip::new(task.payload_bytes, s.config.registry.remote.response_bytes, service.backend_compute_s);
        let wire = Wire {
            purpose: "infer",
            request_type: "InferRequest",
            response_type: "InferResponse",
            reference: &task.task_id,
        };
        schedule_messages(sched, &id, &wire, rt, &r.exchange)?;
        let at = r.exchange.answered_at.unwrap_or(r.exchange.finished_at);
        sched.schedule(at, id, Record::TaskOutcome(r.outcome))?;
        Ok(())
    }

    /// Remote-mode discovery starting now. Returns the chosen endpoint (if
    /// any) and when the answer arrives.
    fn discover_remote(
        &mut self,
        sched: &mut Scheduler<Record>,
        i: usize,
        capability: Capability,
    ) -> Result<(Option<RemoteService>, SimTime), SimError> {
        let now = sched.now();
        let s = self.scenario;
        let dead = self.dead();
        let node = &self.nodes[i];
        let id = node.state.device_id.clone();
        let query = DiscoverQuery {
            capability,
            position: node.state.position,
            arch_mode: ArchMode::Remote,
            credential: node.state.credential,
            resources: node.state.resources(),
        };
        let Streams { fade, loss, .. } = &mut self.rng;
        let mut links = FnLinks(|t| link_for(s, &dead, i, t, fade));
        let res = discover(&query, s.catalog(), &mut links, &s.config.registry, now, loss);
        let rt = discovery_round_trip(&query, s.catalog());
        let wire = Wire {
            purpose: "discover",
            request_type: "DiscoverRequest",
            response_type: "DiscoverResponse",
            reference: capability.as_str(),
        };
        let (service, at) = match res {
            Ok(d) => {
                schedule_messages(sched, &id, &wire, rt, &d.exchange)?;
                let at = d.exchange.finished_at;
                sched.schedule(at, id.clone(), discovery_record(&query, d.exchange.attempts.len(), Some(&d.response.offerings)))?;
                let svc = d.response.offerings.iter().find_map(|o| match o {
                    ServiceOffering::RemoteService(r) => Some(r.clone()),
                    ServiceOffering::DeployableAgent(_) => None,
                });
                (svc, at)
            }
            Err(DiscoveryError::Timeout { exchange }) => {
                schedule_messages(sched, &id, &wire, rt, &exchange)?;
                let at = exchange.finished_at;
                sched.schedule(at, id.clone(), discovery_record(&query, exchange.attempts.len(), None))?;
                (None, at)
            }
            Err(DiscoveryError::Unauthorized) => {
                sched.emit(id.clone(), discovery_record(&query, 0, None));
                (None, now)
            }
        };
        if let Some(svc) = &service {
            self.nodes[i].services.insert(capability, (svc.clone(), at));
        }
        Ok((service, at))
    }

    fn user_request(&mut self, sched: &mut Scheduler<Record>, i: usize, capability: Capability) -> Result<(), SimError> {
        if self.emergency_over {
            return Ok(());
        }
        match self.scenario.arch_mode {
            ArchMode::Remote => self.discover_remote(sched, i, capability).map(|_| ()),
            ArchMode::Agent => {
                let node = &mut self.nodes[i];
                if !node.has_job(|j| matches!(j, Job::Provision(c) if *c == capability)) {
                    node.jobs.push_back(Job::Provision(capability));
                }
                self.start_jobs(sched, i)
            }
        }
    }

    // -------------------------------------------------------- deployments

    fn start_jobs(&mut self, sched: &mut Scheduler<Record>, i: usize) -> Result<(), SimError> {
        while self.nodes[i].in_flight.is_none() && !self.emergency_over && !self.closed {
            let Some(job) = self.nodes[i].jobs.pop_front() else { break };
            match job {
                Job::Provision(cap) => self.start_provision(sched, i, cap)?,
                Job::Replace(req) => self.start_replacement(sched, i, req)?,
            }
        }
        Ok(())
    }

    fn start_provision(&mut self, sched: &mut Scheduler<Record>, i: usize, cap: Capability) -> Result<(), SimError> {
        let now = sched.now();
        let s = self.scenario;
        let dead = self.dead();
        let node = &self.nodes[i];
        if node.state.usable_for(cap).is_some() {
            return self.serve_waiting(sched, i, cap);
        }
        let id = node.state.device_id.clone();
        let query = DiscoverQuery {
            capability: cap,
            position: node.state.position,
            arch_mode: ArchMode::Agent,
            credential: node.state.credential,
            resources: node.state.resources(),
        };
        let Streams { fade, loss, .. } = &mut self.rng;
        let mut links = FnLinks(|t| link_for(s, &dead, i, t, fade));
        let wire = Wire {
            purpose: "discover",
            request_type: "DiscoverRequest",
            response_type: "DiscoverResponse",
            reference: cap.as_str(),
        };
        let rt = discovery_round_trip(&query, s.catalog());
        let job = Job::Provision(cap);
        let in_flight = match discover(&query, s.catalog(), &mut links, &s.config.registry, now, loss) {
            Err(DiscoveryError::Unauthorized) => {
                sched.emit(id.clone(), discovery_record(&query, 0, None));
                InFlight {
                    job,
                    manifest: None,
                    resolves_on: ("discovery", now),
                }
            }
            Err(DiscoveryError::Timeout { exchange }) => {
                schedule_messages(sched, &id, &wire, rt, &exchange)?;
                let at = exchange.finished_at;
                sched.schedule(at, id.clone(), discovery_record(&query, exchange.attempts.len(), None))?;
                InFlight {
                    job,
                    manifest: None,
                    resolves_on: ("discovery", at),
                }
            }
            Ok(d) => {
                schedule_messages(sched, &id, &wire, rt, &d.exchange)?;
                let at = d.exchange.finished_at;
                sched.schedule(at, id.clone(), discovery_record(&query, d.exchange.attempts.len(), Some(&d.response.offerings)))?;
                let offered: Vec<AgentManifest> = d
                    .response
                    .offerings
                    .iter()
                    .filter_map(|o| match o {
                        ServiceOffering::DeployableAgent(m) => Some(m.clone()),
                        ServiceOffering::RemoteService(_) => None,
                    })
                    .collect();
                let link = d.exchange.answering_attempt().map(|a| a.link.clone()).expect("answered");
                match plan_bundle(cap, &link, query.resources, &offered, s.config.registry.deploy_time_budget_s) {
                    Ok(m) => {
                        let m = m.clone();
                        let ex = deploy_protocol(&m, &id, &mut links, &s.config.registry.deploy, at, loss);
                        schedule_deploy(sched, &id, &m, &ex)?;
                        sched.schedule(
                            ex.started_at,
                            id.clone(),
                            Record::DeployStart(DeployStart {
                                agent_id: m.agent_id.clone(),
                                replaces: None,
                            }),
                        )?;
                        sched.schedule(
                            ex.finished_at,
                            id.clone(),
                            Record::DeployComplete(DeployComplete {
                                record: ex.record.clone(),
                                replaces: None,
                            }),
                        )?;
                        InFlight {
                            job,
                            manifest: Some(m),
                            resolves_on: ("deploy-complete", ex.finished_at),
                        }
                    }
                    Err(_) => InFlight {
                        job,
                        manifest: None,
                        resolves_on: ("discovery", at),
                    },
                }
            }
        };
        self.nodes[i].in_flight = Some(in_flight);
        Ok(())
    }

    fn start_replacement(&mut self, sched: &mut Scheduler<Record>, i: usize, req: ReplacementRequest) -> Result<(), SimError> {
        let now = sched.now();
        let s = self.scenario;
        let dead = self.dead();
        let node = &self.nodes[i];
        let id = node.state.device_id.clone();
        match node.state.agent(&req.requesting_agent_id).map(|a| a.state) {
            Some(LifecycleState::Active | LifecycleState::Paused) => {}
            _ => return Ok(()),
        }
        let eligible = s.catalog().without(|m| !req.allows(m));
        let query = DiscoverQuery {
            capability: req.desired_capability,
            position: node.state.position,
            arch_mode: ArchMode::Agent,
            credential: node.state.credential,
            resources: node.state.resources(),
        };
        let rt = discovery_round_trip(&query, &eligible);
        let wire = Wire {
            purpose: "discover",
            request_type: "DiscoverRequest",
            response_type: "DiscoverResponse",
            reference: &req.requesting_agent_id,
        };
        let Streams { fade, loss, .. } = &mut self.rng;
        let mut links = FnLinks(|t| link_for(s, &dead, i, t, fade));
        let in_flight = match plan_replacement(&req, &node.state, s.catalog(), &mut links, &s.config.registry, now, loss) {
            Ok(plan) => {
                let d = &plan.discovery;
                schedule_messages(sched, &id, &wire, rt, &d.exchange)?;
                sched.schedule(
                    d.exchange.finished_at,
                    id.clone(),
                    discovery_record(&query, d.exchange.attempts.len(), Some(&d.response.offerings)),
                )?;
                let ex = &plan.deploy;
                schedule_deploy(sched, &id, &plan.manifest, ex)?;
                sched.schedule(
                    ex.started_at,
                    id.clone(),
                    Record::DeployStart(DeployStart {
                        agent_id: plan.manifest.agent_id.clone(),
                        replaces: Some(req.requesting_agent_id.clone()),
                    }),
                )?;
                sched.schedule(
                    ex.finished_at,
                    id.clone(),
                    Record::DeployComplete(DeployComplete {
                        record: ex.record.clone(),
                        replaces: Some(req.requesting_agent_id.clone()),
                    }),
                )?;
                InFlight {
                    resolves_on: ("deploy-complete", ex.finished_at),
                    job: Job::Replace(req),
                    manifest: Some(plan.manifest),
                }
            }
            Err(e) => {
                let at = match &e {
                    ReplacementError::Discovery(DiscoveryError::Timeout { exchange }) => {
                        schedule_messages(sched, &id, &wire, rt, exchange)?;
                        sched.schedule(
                            exchange.finished_at,
                            id.clone(),
                            discovery_record(&query, exchange.attempts.len(), None),
                        )?;
                        exchange.finished_at
                    }
                    _ => now,
                };
                sched.schedule(
                    at,
                    id.clone(),
                    Record::ReplacementFailed(ReplacementFailed {
                        requesting_agent_id: req.requesting_agent_id.clone(),
                        reason: e.to_string(),
                    }),
                )?;
                InFlight {
                    resolves_on: ("replacement-failed", at),
                    job: Job::Replace(req),
                    manifest: None,
                }
            }
        };
        self.nodes[i].in_flight = Some(in_flight);
        Ok(())
    }

    /// Concludes an in-flight job that failed before any deployment.
    fn resolve(&mut self, sched: &mut Scheduler<Record>, i: usize, kind: &str) -> Result<(), SimError> {
        let now = sched.now();
        let node = &mut self.nodes[i];
        if !node.in_flight.as_ref().is_some_and(|f| f.resolves_on == (kind, now)) {
            return Ok(());
        }
        let flight = node.in_flight.take().expect("checked");
        if let Job::Provision(cap) = flight.job {
            self.fail_waiting(sched, i, cap);
        }
        self.start_jobs(sched, i)
    }

    fn fail_waiting(&mut self, sched: &mut Scheduler<Record>, i: usize, cap: Capability) {
        let now = sched.now();
        let node = &mut self.nodes[i];
        let (failed, keep): (Vec<_>, Vec<_>) = node.waiting.drain(..).partition(|t| t.capability == cap);
        node.waiting = keep;
        for t in failed {
            sched.emit(t.device_id.clone(), Record::TaskOutcome(timeout(&t, self.scenario.arch_mode, 0, now)));
        }
    }

    fn serve_waiting(&mut self, sched: &mut Scheduler<Record>, i: usize, cap: Capability) -> Result<(), SimError> {
        let node = &mut self.nodes[i];
        let (ready, keep): (Vec<_>, Vec<_>) = node.waiting.drain(..).partition(|t| t.capability == cap);
        node.waiting = keep;
        for t in ready {
            self.onboard(sched, i, &t)?;
        }
        Ok(())
    }

    fn deploy_start(&mut self, sched: &mut Scheduler<Record>, i: usize, agent_id: &str) -> Result<(), SimError> {
        let now = sched.now();
        let node = &mut self.nodes[i];
        let Some(m) = node.in_flight.as_ref().and_then(|f| f.manifest.clone()) else {
            return Ok(());
        };
        if m.agent_id != agent_id || self.emergency_over {
            return Ok(());
        }
        // A failed stage surfaces at completion as a missing Deploying agent.
        if let Ok(ts) = node.state.stage(m, now) {
            Self::emit_transitions(sched, &node.state.device_id.clone(), ts);
        }
        Ok(())
    }

    fn deploy_complete(&mut self, sched: &mut Scheduler<Record>, i: usize, d: &DeployComplete) -> Result<(), SimError> {
        let now = sched.now();
        let node = &mut self.nodes[i];
        if !node.in_flight.as_ref().is_some_and(|f| f.resolves_on == ("deploy-complete", now)) {
            return Ok(());
        }
        let flight = node.in_flight.take().expect("checked");
        let id = node.state.device_id.clone();
        let agent_id = d.record.agent_id.as_str();
        let staged = node.state.agent(agent_id).is_some_and(|a| a.state == LifecycleState::Deploying);
        match (flight.job, staged && d.record.installed()) {
            (Job::Replace(req), true) => {
                let ts = finish_replacement(&mut node.state, &req, agent_id, now)?;
                Self::emit_transitions(sched, &id, ts);
                node.gps_window.clear();
                if node.state.agent(agent_id).is_some_and(|a| a.manifest.model_class == ModelClass::PdrLoc) {
                    // Seed from the last trusted fix and replay the steps since.
                    let seed = node.last_good_fix.unwrap_or(node.state.position);
                    let pose = pdr_track(
                        Pose {
                            position: seed,
                            heading: node.heading,
                        },
                        node.steps_since_fix.iter().copied(),
                    );
                    node.pdr_pose = Some(pose);
                }
            }
            (Job::Provision(cap), true) => {
                let t = node.state.commit_install(agent_id, now)?;
                Self::emit_transitions(sched, &id, vec![t]);
                self.serve_waiting(sched, i, cap)?;
            }
            (job, false) => {
                if staged {
                    let t = node.state.abort_staging(agent_id, now)?;
                    Self::emit_transitions(sched, &id, vec![t]);
                }
                if let Job::Provision(cap) = job {
                    self.fail_waiting(sched, i, cap);
                }
            }
        }
        self.start_jobs(sched, i)
    }

    // ------------------------------------------------------------- sweeps

    fn sweep(&mut self, sched: &mut Scheduler<Record>, end_of_emergency: bool) -> Result<(), SimError> {
        let now = sched.now();
        if end_of_emergency {
            self.emergency_over = true;
        }
        for i in 0..self.nodes.len() {
            let node = &mut self.nodes[i];
            let (_, ts) = expire_sweep(&mut node.state, now, end_of_emergency);
            Self::emit_transitions(sched, &node.state.device_id.clone(), ts);
            if end_of_emergency {
                node.jobs.clear();
                node.pdr_pose = None;
                node.gps_window.clear();
                let caps: Vec<Capability> = node.waiting.iter().map(|t| t.capability).collect();
                for c in caps {
                    self.fail_waiting(sched, i, c);
                }
            }
        }
        Ok(())
    }

    fn finish(&mut self, sched: &mut Scheduler<Record>) -> Result<(), SimError> {
        self.closed = true;
        for i in 0..self.nodes.len() {
            self.nodes[i].jobs.clear();
            let caps: Vec<Capability> = self.nodes[i].waiting.iter().map(|t| t.capability).collect();
            for c in caps {
                self.fail_waiting(sched, i, c);
            }
        }
        Ok(())
    }
}

