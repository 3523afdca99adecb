//! Acceptance suite. Each test writes one `PASS`/`FAIL` line to stderr
//! (bypassing the harness capture) before asserting.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use edgeswarm::config::Config;
use edgeswarm::device::{Battery, DeviceState};
use edgeswarm::engine::{EventLog, RngStream, SimTime};
use edgeswarm::lifecycle::{LifecycleEvent, LifecycleState};
use edgeswarm::metrics::collect;
use edgeswarm::network::LinkSample;
use edgeswarm::registry::{
    plan_bundle, remote_infer, AgentManifest, ArchMode, Capability, DeviceResources, ModelClass, RemoteConfig,
    RemoteService,
};
use edgeswarm::scenario::{load_scenario, Outage, Scenario};
use edgeswarm::task::{TaskCategory, TaskOutcome, TaskRequest};
use edgeswarm::world::{simulate, Record};

const SEEDS: std::ops::Range<u64> = 0..20;
const BUILT_INS: [&str; 4] = [
    "paramedic_five_rights.json",
    "firefighter_indoor.json",
    "urban_walk_topology.json",
    "battery_endurance.json",
];

fn verdict(id: u32, name: &str, ok: bool, detail: &str) {
    let line = format!("{} C{id} {name}: {detail}\n", if ok { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(ok, "C{id} {name}: {detail}");
}

fn scenario_path(file: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(file)
}

fn built_in(file: &str) -> Scenario {
    load_scenario(&scenario_path(file)).expect("built-in scenario loads")
}

fn secs(t: SimTime) -> f64 {
    t.as_secs_f64()
}

fn outcomes(log: &EventLog<Record>) -> Vec<(SimTime, TaskOutcome)> {
    log.iter()
        .filter_map(|e| match &e.payload {
            Record::TaskOutcome(o) => Some((e.time, o.clone())),
            _ => None,
        })
        .collect()
}

fn arrivals(log: &EventLog<Record>) -> BTreeMap<String, SimTime> {
    log.iter()
        .filter_map(|e| match &e.payload {
            Record::TaskArrival(t) => Some((t.task_id.clone(), t.arrived_at)),
            _ => None,
        })
        .collect()
}

#[test]
fn c1_backend_degradation() {
    let scenario = built_in("paramedic_five_rights.json").with_arch(ArchMode::Remote);
    let started = Instant::now();
    let (mut total, mut degraded) = (0usize, 0usize);
    for seed in SEEDS {
        let log = simulate(&scenario, seed).unwrap();
        for (_, o) in outcomes(&log) {
            total += 1;
            degraded += usize::from(o.category != TaskCategory::FirstTry);
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    let fraction = degraded as f64 / total as f64;
    let ok = total == 200 && (0.50..=0.95).contains(&fraction) && elapsed < 10.0;
    verdict(
        1,
        "backend degradation",
        ok,
        &format!("{degraded}/{total} tasks retried, timed out or late ({fraction:.3}); {elapsed:.2} s"),
    );
}

#[test]
fn c2_agent_resilience() {
    let scenario = built_in("paramedic_five_rights.json").with_arch(ArchMode::Agent);
    let mut worst_round_trips = 0;
    let (mut post, mut post_ok) = (0usize, 0usize);
    let mut mismatched = Vec::new();
    for seed in SEEDS {
        let log = simulate(&scenario, seed).unwrap();
        let mut deployed_at = None;
        for e in log.iter() {
            if let Record::DeployComplete(d) = &e.payload {
                if d.record.installed() {
                    worst_round_trips = worst_round_trips.max(d.record.round_trips);
                    deployed_at = deployed_at.max(Some(e.time));
                }
            }
        }
        let Some(deployed_at) = deployed_at else {
            mismatched.push(format!("seed {seed}: no deployment"));
            continue;
        };
        let arrived = arrivals(&log);
        let after = |os: Vec<(SimTime, TaskOutcome)>| -> Vec<TaskOutcome> {
            os.into_iter()
                .map(|(_, o)| o)
                .filter(|o| arrived[&o.task_id] >= deployed_at)
                .collect()
        };
        let connected = after(outcomes(&log));
        post += connected.len();
        post_ok += connected
            .iter()
            .filter(|o| matches!(o.category, TaskCategory::FirstTry | TaskCategory::Retried))
            .count();

        let mut severed = scenario.clone();
        severed.outages.push(Outage {
            start_s: secs(deployed_at),
            end_s: severed.duration_s,
        });
        let cut = after(outcomes(&simulate(&severed, seed).unwrap()));
        if cut != connected {
            mismatched.push(format!("seed {seed}"));
        }
    }
    let rate = post_ok as f64 / post.max(1) as f64;
    let ok = worst_round_trips <= 2 && post > 0 && rate >= 0.95 && mismatched.is_empty();
    verdict(
        2,
        "agent resilience",
        ok,
        &format!(
            "max round trips {worst_round_trips}; post-deployment success {post_ok}/{post} ({rate:.3}); \
             outcome changes with links severed: {mismatched:?}"
        ),
    );
}

/// First whole second at which idle drain plus one inference per arrival
/// (charged on arrival) leaves at most 50 %.
fn battery_crossing_oracle(idle_pct_per_hour: f64, per_task_pct: f64, dt_s: u64) -> u64 {
    (1u64..)
        .find(|&t| 100.0 - idle_pct_per_hour * t as f64 / 3600.0 - per_task_pct * (t / dt_s) as f64 <= 50.0)
        .unwrap()
}

#[test]
fn c3_battery_endurance() {
    let scenario = built_in("battery_endurance.json");
    let cfg = &scenario.config;
    let dnn = cfg.catalog.agent("drug-label-dnn").unwrap();
    let oracle = battery_crossing_oracle(cfg.battery.idle_pct_per_hour, dnn.inference_energy_pct, 30) as f64;
    let mut crossings = Vec::new();
    for seed in [0, 1, 2] {
        for _ in 0..2 {
            let report = collect(&simulate(&scenario, seed).unwrap()).unwrap();
            crossings.push(report.battery[0].time_to_50_pct_s);
        }
    }
    let first = crossings[0];
    let ok = first.is_some_and(|t| (4.0 * 3600.0..=6.0 * 3600.0).contains(&t) && t == oracle)
        && crossings.iter().all(|c| *c == first);
    verdict(
        3,
        "battery endurance",
        ok,
        &format!(
            "50 % reached at {:?} s ({:.2} h), oracle {oracle} s; runs {crossings:?}",
            first,
            first.unwrap_or(f64::NAN) / 3600.0
        ),
    );
}

fn battery_units(log: &EventLog<Record>, device: &str) -> Vec<(SimTime, u64)> {
    log.iter()
        .filter(|e| e.subject == device)
        .filter_map(|e| match &e.payload {
            Record::Battery(b) => Some((e.time, (b.battery_pct * 1e12).round() as u64)),
            _ => None,
        })
        .collect()
}

fn last_deploy(log: &EventLog<Record>) -> SimTime {
    log.iter()
        .filter(|e| matches!(e.payload, Record::DeployComplete(_)))
        .map(|e| e.time)
        .max()
        .unwrap_or(SimTime::ZERO)
}

#[test]
fn c4_dormant_agent_costs_nothing() {
    let plain = built_in("battery_endurance.json");
    let mut dormant = plain.clone();
    dormant.devices[0].provision.push(Capability::HazardDetection);
    let device = plain.devices[0].device_id.clone();
    let mut failures = Vec::new();
    let mut compared = 0;
    for seed in [0, 7] {
        let a = simulate(&plain, seed).unwrap();
        let b = simulate(&dormant, seed).unwrap();
        let installed = b.iter().any(|e| match &e.payload {
            Record::DeployComplete(d) => d.record.installed() && d.record.agent_id.starts_with("hazard"),
            _ => false,
        });
        let never_active = !b.iter().any(|e| match &e.payload {
            Record::Lifecycle(t) => t.agent_id.starts_with("hazard") && t.to == LifecycleState::Active,
            _ => false,
        });
        let since = last_deploy(&a).max(last_deploy(&b));
        let first_task = arrivals(&b).values().copied().min().unwrap();
        let deltas = |trace: Vec<(SimTime, u64)>| -> Vec<(SimTime, u64)> {
            let trace: Vec<_> = trace.into_iter().filter(|(t, _)| *t >= since).collect();
            trace.windows(2).map(|w| (w[1].0, w[0].1 - w[1].1)).collect()
        };
        let (da, db) = (deltas(battery_units(&a, &device)), deltas(battery_units(&b, &device)));
        compared += da.len();
        if !installed || !never_active || first_task < since || da.is_empty() || da != db {
            failures.push(format!(
                "seed {seed}: installed {installed}, dormant throughout {never_active}, \
                 deployments done by {since:?} before first task {first_task:?}, traces equal {}",
                da == db
            ));
        }
    }
    verdict(
        4,
        "dormancy is free",
        failures.is_empty(),
        &format!("{compared} post-deployment battery steps compared; failures {failures:?}"),
    );
}

/// One-sided exact binomial tail `P(X >= k)` for `X ~ Bin(n, 1/2)`.
fn sign_test_p(n: u64, k: u64) -> f64 {
    let mut choose = 1.0f64;
    let mut tail = 0.0;
    for i in 0..=n {
        if i >= k {
            tail += choose;
        }
        choose = choose * (n - i) as f64 / (i + 1) as f64;
    }
    tail / 2f64.powi(n as i32)
}

#[test]
fn c5_gps_to_pdr_swap() {
    let scenario = built_in("firefighter_indoor.json");
    let n_bad = scenario.config.lifecycle.n_bad as usize;
    let mut flow_failures = Vec::new();
    let mut pdr_better = 0u64;
    let seeds = 0..100u64;
    for seed in seeds.clone() {
        let log = simulate(&scenario, seed).unwrap();
        let indoor_fixes: Vec<SimTime> = log
            .iter()
            .filter_map(|e| match &e.payload {
                Record::GpsFix(f) if f.indoor => Some(e.time),
                _ => None,
            })
            .collect();
        let find = |pred: &dyn Fn(&Record) -> bool| log.iter().find(|e| pred(&e.payload)).map(|e| e.time);
        let paused = find(&|r| matches!(r, Record::Lifecycle(t) if t.agent_id == "gps-loc" && t.to == LifecycleState::Paused));
        let requested = find(&|r| matches!(r, Record::ReplacementRequest(_)));
        let pdr_active =
            find(&|r| matches!(r, Record::Lifecycle(t) if t.agent_id == "pdr-loc" && t.to == LifecycleState::Active));
        let (Some(&entered), Some(paused), Some(requested), Some(swapped)) =
            (indoor_fixes.first(), paused, requested, pdr_active)
        else {
            flow_failures.push(format!("seed {seed}: swap flow incomplete"));
            continue;
        };
        let limit = indoor_fixes.get(n_bad).copied().unwrap_or(SimTime::MAX);
        let interactions = log
            .iter()
            .filter(|e| e.time >= entered && e.time <= swapped)
            .filter(|e| matches!(e.payload, Record::UserInteraction(_)))
            .count();
        if paused > limit || requested < paused || swapped < requested || interactions != 0 {
            flow_failures.push(format!(
                "seed {seed}: entered {entered:?} paused {paused:?} limit {limit:?} interactions {interactions}"
            ));
        }
        let window = swapped..=swapped + SimTime::from_secs(60);
        let mean = |xs: Vec<f64>| xs.iter().sum::<f64>() / xs.len().max(1) as f64;
        let pdr = mean(
            log.iter()
                .filter(|e| window.contains(&e.time))
                .filter_map(|e| match &e.payload {
                    Record::PositionReport(p) if p.model_class == ModelClass::PdrLoc => Some(p.error_m),
                    _ => None,
                })
                .collect(),
        );
        let gps = mean(
            log.iter()
                .filter(|e| window.contains(&e.time))
                .filter_map(|e| match &e.payload {
                    Record::GpsFix(f) if f.indoor => Some(f.error_m),
                    _ => None,
                })
                .collect(),
        );
        pdr_better += u64::from(pdr < gps);
    }
    let n = seeds.end - seeds.start;
    let p = sign_test_p(n, pdr_better);
    let ok = flow_failures.is_empty() && p < 0.01;
    verdict(
        5,
        "GPS to PDR swap",
        ok,
        &format!("PDR more accurate in {pdr_better}/{n} runs (sign test p = {p:.2e}); flow failures {flow_failures:?}"),
    );
}

#[test]
fn c6_apoptosis_conservation() {
    let mut failures = Vec::new();
    let mut checked = 0;
    for file in BUILT_INS {
        let base = built_in(file);
        for arch in [ArchMode::Remote, ArchMode::Agent] {
            let scenario = base.clone().with_arch(arch);
            for seed in 0..3 {
                let log = simulate(&scenario, seed).unwrap();
                let eoe = log
                    .iter()
                    .find(|e| matches!(&e.payload, Record::Sweep(s) if s.end_of_emergency))
                    .map(|e| e.time)
                    .expect("end-of-emergency sweep is logged");
                let mut installed: BTreeMap<(String, String), LifecycleState> = BTreeMap::new();
                let mut last_memory: BTreeMap<String, u64> = BTreeMap::new();
                for e in log.iter() {
                    match &e.payload {
                        Record::Lifecycle(t) if e.time <= eoe => {
                            installed.insert((e.subject.clone(), t.agent_id.clone()), t.to);
                        }
                        Record::Battery(b) if e.time > eoe => {
                            last_memory.insert(e.subject.clone(), b.memory_used_bytes);
                        }
                        _ => {}
                    }
                }
                let alive = installed
                    .iter()
                    .filter(|(_, s)| !matches!(s, LifecycleState::Uninstalled | LifecycleState::Requested))
                    .count();
                let devices_seen = last_memory.len() == scenario.devices.len();
                let leaked: u64 = last_memory.values().sum();
                checked += 1;
                if alive != 0 || leaked != 0 || !devices_seen {
                    failures.push(format!("{file} {arch} seed {seed}: {alive} agents, {leaked} bytes"));
                }
            }
        }
    }
    verdict(
        6,
        "apoptosis conservation",
        failures.is_empty(),
        &format!("{checked} runs checked; failures {failures:?}"),
    );
}

fn random_manifest(rng: &mut ChaCha8Rng, i: usize) -> AgentManifest {
    AgentManifest {
        agent_id: format!("agent-{i}"),
        capability: Capability::DrugLabelClassification,
        model_class: ModelClass::Mlp,
        payload_bytes: rng.random_range(1_000..400_000_000),
        memory_footprint_bytes: rng.random_range(1_000..800_000_000),
        inference_energy_pct: 0.01,
        inference_latency_s: 0.05,
        accuracy: (rng.random_range(0..1000) as f64) / 1000.0,
        ttl_s: 3600.0,
        dormant_allowed: true,
    }
}

/// Exhaustive argmax over every manifest, with feasibility computed from
/// first principles: payload time at the link rate plus one-way latency.
fn brute_force(
    agents: &[AgentManifest],
    bandwidth_bps: f64,
    latency_s: f64,
    free: u64,
    budget_s: f64,
) -> Option<&AgentManifest> {
    let mut best: Option<&AgentManifest> = None;
    for m in agents {
        let seconds = latency_s + m.payload_bytes as f64 * 8.0 / bandwidth_bps;
        if seconds > budget_s || m.memory_footprint_bytes > free {
            continue;
        }
        let better = match best {
            None => true,
            Some(b) => {
                (m.accuracy, std::cmp::Reverse(m.payload_bytes), std::cmp::Reverse(&m.agent_id))
                    > (b.accuracy, std::cmp::Reverse(b.payload_bytes), std::cmp::Reverse(&b.agent_id))
            }
        };
        if better {
            best = Some(m);
        }
    }
    best
}

#[test]
fn c7_planner_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let budget = 120.0;
    let (mut disagreements, mut violations) = (Vec::new(), 0usize);
    for trial in 0..1_000 {
        let k = rng.random_range(1..8);
        let agents: Vec<AgentManifest> = (0..k).map(|i| random_manifest(&mut rng, i)).collect();
        let bandwidth = 10f64.powf(rng.random_range(3.0..9.0));
        let latency = rng.random_range(0.0..0.5);
        let free = rng.random_range(0..1_000_000_000u64);
        let link = LinkSample::fixed(bandwidth, 0.0, latency);
        let device = DeviceResources { free_memory_bytes: free };
        let got = plan_bundle(Capability::DrugLabelClassification, &link, device, &agents, budget).ok();
        let want = brute_force(&agents, bandwidth, latency, free, budget);
        if got.map(|m| &m.agent_id) != want.map(|m| &m.agent_id) {
            disagreements.push(trial);
        }

        // Bandwidth sweep: the chosen accuracy never drops as bandwidth grows,
        // and on a ladder catalog (accuracy rising with payload) neither does
        // the chosen payload.
        let mut ladder = agents.clone();
        ladder.sort_by_key(|m| m.payload_bytes);
        for (i, m) in ladder.iter_mut().enumerate() {
            m.accuracy = (i + 1) as f64 / (k + 1) as f64;
        }
        let mut prev: Option<(f64, u64, f64, u64)> = None;
        for step in 0..40 {
            let bw = 10f64.powf(3.0 + step as f64 * 0.15);
            let link = LinkSample::fixed(bw, 0.0, latency);
            let pick = |set: &[AgentManifest]| {
                plan_bundle(Capability::DrugLabelClassification, &link, device, set, budget)
                    .map(|m| (m.accuracy, m.payload_bytes))
                    .unwrap_or((f64::NEG_INFINITY, 0))
            };
            let (acc, _) = pick(&agents);
            let (ladder_acc, ladder_payload) = pick(&ladder);
            if let Some((pa, _, pla, plp)) = prev {
                violations += usize::from(acc < pa) + usize::from(ladder_acc < pla || ladder_payload < plp);
            }
            prev = Some((acc, 0, ladder_acc, ladder_payload));
        }
    }
    verdict(
        7,
        "planner properties",
        disagreements.is_empty() && violations == 0,
        &format!(
            "1000 random triples, {} disagreements with exhaustive search {:?}; {violations} monotonicity violations",
            disagreements.len(),
            &disagreements[..disagreements.len().min(5)]
        ),
    );
}

#[test]
fn c8_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let mut failures = Vec::new();
    for file in BUILT_INS {
        for arch in ["remote", "agent"] {
            let run = |tag: &str| {
                let out = dir.path().join(format!("{file}-{arch}-{tag}.jsonl"));
                let status = Command::new(env!("CARGO_BIN_EXE_edgeswarm"))
                    .args(["simulate", "--scenario"])
                    .arg(scenario_path(file))
                    .args(["--arch", arch, "--seed", "42", "--out"])
                    .arg(&out)
                    .status()
                    .unwrap();
                assert!(status.success());
                std::fs::read(out).unwrap()
            };
            let (a, b) = (run("a"), run("b"));
            if a.is_empty() || a != b {
                failures.push(format!("{file} {arch}"));
            }
        }
    }
    verdict(
        8,
        "determinism",
        failures.is_empty(),
        &format!("{} scenario/mode pairs run twice; differing logs {failures:?}", BUILT_INS.len() * 2),
    );
}

#[test]
fn c9_statistical_oracles() {
    let n = 10_000;
    let cfg = RemoteConfig {
        max_attempts: 3,
        ..Config::default().registry.remote
    };
    let service = RemoteService {
        offering_id: "backend".into(),
        capability: Capability::DrugLabelClassification,
        backend_compute_s: 0.2,
        accuracy: 0.97,
    };
    let task = |i: usize| TaskRequest {
        task_id: format!("t{i}"),
        device_id: "dev".into(),
        capability: Capability::DrugLabelClassification,
        payload_bytes: 300_000,
        acceptable_latency_s: 1e9,
        arrived_at: SimTime::ZERO,
    };
    let p = 0.5f64;
    let mut link = LinkSample::fixed(50e6, p, 0.01);
    let (mut loss, mut inference) = (RngStream::new("link-loss", 9), RngStream::new("inference", 9));
    // Index 0 counts tasks that never got an answer.
    let mut counts = [0usize; 4];
    for i in 0..n {
        let o = remote_infer(&task(i), &service, &mut link, &cfg, &mut loss, &mut inference).outcome;
        counts[if o.category == TaskCategory::Timeout { 0 } else { o.attempts as usize }] += 1;
    }
    let mut worst_geo: f64 = 0.0;
    for (k, &c) in counts.iter().enumerate() {
        let oracle = if k == 0 { p.powi(3) } else { p.powi(k as i32 - 1) * (1.0 - p) };
        worst_geo = worst_geo.max((c as f64 / n as f64 - oracle).abs());
    }

    let manifest = Config::default().catalog.agent("drug-label-mlp").unwrap().clone();
    let accuracy = manifest.accuracy;
    let mut device = DeviceState::new("dev", 1_000_000_000, Battery::full());
    device.install(manifest.clone(), SimTime::ZERO).unwrap();
    device.apply(&manifest.agent_id, LifecycleEvent::Activate, SimTime::ZERO, "test").unwrap();
    let mut rng = RngStream::new("inference", 10);
    let correct = (0..n)
        .filter(|&i| device.run_inference(&manifest.agent_id, &task(i), &mut rng).unwrap().correct == Some(true))
        .count();
    let accuracy_error = (correct as f64 / n as f64 - accuracy).abs();

    verdict(
        9,
        "statistical oracles",
        worst_geo <= 0.02 && accuracy_error <= 0.01,
        &format!(
            "attempt histogram {counts:?} within {worst_geo:.4} of geometric; \
             correctness off by {accuracy_error:.4} from {accuracy}"
        ),
    );
}
