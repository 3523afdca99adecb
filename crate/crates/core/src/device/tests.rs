use super::*;
use crate::config::Config;
use crate::engine::RngStream;
use crate::registry::Capability;
use crate::Pose;

fn manifest(id: &str) -> AgentManifest {
    Config::default().catalog.agent(id).unwrap().clone()
}

fn task(i: usize, capability: Capability) -> TaskRequest {
    TaskRequest {
        task_id: format!("t{i}"),
        device_id: "dev-1".into(),
        capability,
        payload_bytes: 300_000,
        acceptable_latency_s: 10.0,
        arrived_at: SimTime::from_secs(i as u64),
    }
}

fn active(id: &str) -> DeviceState {
    let mut d = DeviceState::new("dev-1", 1_000_000_000, Battery::full());
    d.install(manifest(id), SimTime::ZERO).unwrap();
    d.apply(id, LifecycleEvent::Activate, SimTime::ZERO, "test").unwrap();
    d
}

#[test]
fn install_places_agent_dormant_and_charges_footprint() {
    let mut d = DeviceState::new("dev-1", 100_000_000, Battery::full());
    let m = manifest("drug-label-mlp");
    d.install(m.clone(), SimTime::ZERO).unwrap();
    assert_eq!(d.agent(&m.agent_id).unwrap().state, LifecycleState::Dormant);
    assert_eq!(d.memory_used_bytes(), m.memory_footprint_bytes);
}

#[test]
fn install_over_capacity_is_rejected_without_change() {
    let mut d = DeviceState::new("dev-1", 100_000_000, Battery::full());
    let before = d.clone();
    let err = d.install(manifest("drug-label-dnn"), SimTime::ZERO).unwrap_err();
    assert!(matches!(err, DeviceError::InsufficientMemory { needed: 200_000_000, free: 100_000_000, .. }));
    assert_eq!(d, before);
}

#[test]
fn install_then_uninstall_restores_memory() {
    let mut d = active("gps-loc");
    let used = d.memory_used_bytes();
    d.install(manifest("drug-label-mlp"), SimTime::ZERO).unwrap();
    d.uninstall("drug-label-mlp", SimTime::from_secs(5)).unwrap();
    assert_eq!(d.memory_used_bytes(), used);
    assert!(matches!(d.uninstall("nope", SimTime::ZERO), Err(DeviceError::UnknownAgent(_))));
}

#[test]
fn duplicate_install_is_rejected() {
    let mut d = active("gps-loc");
    assert_eq!(
        d.install(manifest("gps-loc"), SimTime::ZERO).unwrap_err(),
        DeviceError::AlreadyPresent("gps-loc".into())
    );
}

#[test]
fn onboard_inference_uses_manifest_latency_and_energy() {
    let mut d = active("drug-label-dnn");
    let m = manifest("drug-label-dnn");
    let mut rng = RngStream::new("inference", 1);
    let out = d.run_inference(&m.agent_id, &task(0, Capability::DrugLabelClassification), &mut rng).unwrap();
    assert_eq!(out.category, TaskCategory::FirstTry);
    assert_eq!(out.attempts, 1);
    assert_eq!(out.latency_s, m.inference_latency_s);
    assert_eq!(d.battery.pct(), 100.0 - m.inference_energy_pct);
    assert_eq!(rng.draw_count(), 1);
}

#[test]
fn inference_preconditions() {
    let mut rng = RngStream::new("inference", 1);
    let mut d = DeviceState::new("dev-1", 1_000_000_000, Battery::full());
    d.install(manifest("drug-label-mlp"), SimTime::ZERO).unwrap();
    let t = task(0, Capability::DrugLabelClassification);
    assert!(matches!(d.run_inference("drug-label-mlp", &t, &mut rng), Err(DeviceError::AgentNotActive(_))));
    d.apply("drug-label-mlp", LifecycleEvent::Activate, SimTime::ZERO, "test").unwrap();
    let hz = task(1, Capability::HazardDetection);
    assert!(matches!(d.run_inference("drug-label-mlp", &hz, &mut rng), Err(DeviceError::CapabilityMismatch { .. })));
    d.battery = Battery::from_pct(0.0);
    assert_eq!(d.run_inference("drug-label-mlp", &t, &mut rng), Err(DeviceError::BatteryDepleted));
}

#[test]
fn perfect_model_is_always_correct() {
    let mut d = DeviceState::new("dev-1", 1_000_000_000, Battery::full());
    d.install(
        AgentManifest {
            accuracy: 1.0,
            inference_energy_pct: 0.0,
            ..manifest("drug-label-logreg")
        },
        SimTime::ZERO,
    )
    .unwrap();
    d.apply("drug-label-logreg", LifecycleEvent::Activate, SimTime::ZERO, "test").unwrap();
    let mut rng = RngStream::new("inference", 5);
    for i in 0..1000 {
        let out = d.run_inference("drug-label-logreg", &task(i, Capability::DrugLabelClassification), &mut rng).unwrap();
        assert_eq!(out.correct, Some(true));
    }
}

#[test]
fn correctness_rate_matches_accuracy() {
    let mut d = DeviceState::new("dev-1", 1_000_000_000, Battery::full());
    d.install(
        AgentManifest {
            accuracy: 0.9,
            inference_energy_pct: 0.0,
            ..manifest("drug-label-mlp")
        },
        SimTime::ZERO,
    )
    .unwrap();
    d.apply("drug-label-mlp", LifecycleEvent::Activate, SimTime::ZERO, "test").unwrap();
    let mut rng = RngStream::new("inference", 21);
    let n = 10_000;
    let ok = (0..n)
        .filter(|&i| {
            d.run_inference("drug-label-mlp", &task(i, Capability::DrugLabelClassification), &mut rng)
                .unwrap()
                .correct
                .unwrap()
        })
        .count();
    assert!((ok as f64 / n as f64 - 0.9).abs() < 0.01);
}

#[test]
fn dormant_agent_adds_no_drain() {
    let c = Config::default();
    let mut plain = DeviceState::new("dev-1", 1_000_000_000, Battery::full());
    let mut with_dormant = plain.clone();
    with_dormant.install(manifest("hazard-dnn"), SimTime::ZERO).unwrap();
    for _ in 0..3600 {
        plain.battery.step(1.0, &Activity::default(), &c.battery);
        with_dormant.battery.step(1.0, &Activity::default(), &c.battery);
        assert_eq!(plain.battery, with_dormant.battery);
    }
}

#[test]
fn zero_noise_gps_fix_is_ground_truth() {
    let cfg = SensorConfig {
        gps_sigma_outdoor_m: 0.0,
        ..Config::default().sensors
    };
    let mut rng = RngStream::new("gps-noise", 1);
    let truth = Point::new(12.0, -7.5);
    assert_eq!(sample_gps(truth, false, SimTime::ZERO, &cfg, &mut rng).position, truth);
}

/// Indoor fixes scatter with mean displacement sigma * sqrt(pi / 2).
#[test]
fn indoor_fix_displacement_matches_rayleigh_mean() {
    let cfg = Config::default().sensors;
    let mut rng = RngStream::new("gps-noise", 2);
    let n = 10_000;
    let mean = (0..n)
        .map(|_| sample_gps(Point::origin(), true, SimTime::ZERO, &cfg, &mut rng).position.norm())
        .sum::<f64>()
        / n as f64;
    let oracle = cfg.gps_sigma_indoor_m * (std::f64::consts::PI / 2.0).sqrt();
    assert!((mean - oracle).abs() < 0.03 * oracle, "{mean} vs {oracle}");
}

#[test]
fn pdr_ten_steps_east() {
    let start = Pose {
        position: Point::origin(),
        heading: 1.0,
    };
    let end = pdr_track(
        start,
        std::iter::repeat_n(
            Stride {
                heading: 0.0,
                length: 0.8,
            },
            10,
        ),
    );
    assert!((end.position.x - 8.0).abs() < 1e-12 && end.position.y.abs() < 1e-12);
    let still = pdr_update(end, Stride {
        heading: 0.0,
        length: 0.0,
    });
    assert_eq!(still, end);
}

/// Dead-reckoning error grows like a random walk: sqrt(k) times the
/// per-step cross-track error for small heading noise.
#[test]
fn pdr_drift_follows_random_walk_bound() {
    let cfg = Config::default().sensors;
    let mut rng = RngStream::new("imu-noise", 4);
    let (k, trials, stride) = (100, 1000, 1.0);
    let mut sq = 0.0;
    for _ in 0..trials {
        let steps = (0..k).map(|i| {
            let s = sample_imu(0.0, stride, SimTime::from_secs(i), &cfg, &mut rng);
            Stride {
                heading: s.heading_rad,
                length: s.stride_m,
            }
        });
        let steps: Vec<_> = steps.collect();
        let end = pdr_track(
            Pose {
                position: Point::origin(),
                heading: 0.0,
            },
            steps,
        );
        sq += (end.position - Point::new(k as f64 * stride, 0.0)).norm().powi(2);
    }
    let rms = (sq / trials as f64).sqrt();
    let along = stride * cfg.imu_stride_noise_frac / 3f64.sqrt();
    let across = stride * cfg.imu_heading_sigma_rad;
    let bound = (k as f64).sqrt() * (along * along + across * across).sqrt();
    assert!(rms > bound / 2.0 && rms < bound * 2.0, "rms {rms} vs {bound}");
}
