//! Run summaries computed from event logs, and paired comparisons.
//!
//! Everything here is a pure function of the log, so a report can be
//! recomputed by anyone holding the NDJSON file.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::EventLog;
use crate::lifecycle::LifecycleState;
use crate::registry::ArchMode;
use crate::task::TaskCategory;
use crate::world::Record;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("malformed log: {0}")]
    MalformedLog(String),
    #[error("runs differ: {0}")]
    MismatchedRuns(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskStats {
    pub count: u64,
    pub first_try: f64,
    pub retried: f64,
    pub timeout: f64,
    pub unacceptable: f64,
    /// Nearest-rank percentiles over answered tasks; absent when none.
    pub latency_p50_s: Option<f64>,
    pub latency_p95_s: Option<f64>,
    pub latency_p99_s: Option<f64>,
    pub correct: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatterySummary {
    pub device_id: String,
    /// First time the battery was at or below 50 percent.
    pub time_to_50_pct_s: Option<f64>,
    pub final_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeploymentStats {
    pub count: u64,
    pub installed: u64,
    pub failed: u64,
    pub max_round_trips: u32,
    pub mean_transfer_seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifecycleCounts {
    pub installs: u64,
    pub swaps: u64,
    pub apoptoses: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario_id: String,
    pub seed: u64,
    pub arch_mode: Option<ArchMode>,
    pub tasks: TaskStats,
    pub battery: Vec<BatterySummary>,
    pub deployments: DeploymentStats,
    pub lifecycle: LifecycleCounts,
    pub user_interactions: u64,
}

/// Nearest-rank percentile of sorted data.
pub fn nearest_rank(sorted: &[f64], pct: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((pct / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    Some(sorted[rank.min(sorted.len()) - 1])
}

pub fn collect(log: &EventLog<Record>) -> Result<MetricsReport, MetricsError> {
    let mut arch_mode = None;
    let mut arrived = BTreeSet::new();
    let mut finished = BTreeSet::new();
    let mut by_category: BTreeMap<TaskCategory, u64> = BTreeMap::new();
    let mut latencies = Vec::new();
    let mut correct = 0;
    let mut battery: BTreeMap<String, BatterySummary> = BTreeMap::new();
    let mut deployments = DeploymentStats {
        count: 0,
        installed: 0,
        failed: 0,
        max_round_trips: 0,
        mean_transfer_seconds: None,
    };
    let mut transfer_total = 0.0;
    let mut lifecycle = LifecycleCounts {
        installs: 0,
        swaps: 0,
        apoptoses: 0,
    };
    let mut user_interactions = 0;

    for ev in log.iter() {
        match &ev.payload {
            Record::RunStart(r) => {
                if arch_mode.replace(r.arch_mode).is_some() {
                    return Err(MetricsError::MalformedLog("more than one run-start".into()));
                }
            }
            Record::TaskArrival(t) => {
                arrived.insert(t.task_id.clone());
            }
            Record::TaskOutcome(o) => {
                if !arrived.contains(&o.task_id) {
                    return Err(MetricsError::MalformedLog(format!("outcome for unknown task `{}`", o.task_id)));
                }
                if !finished.insert(o.task_id.clone()) {
                    return Err(MetricsError::MalformedLog(format!("task `{}` finished twice", o.task_id)));
                }
                *by_category.entry(o.category).or_default() += 1;
                if o.category.is_completed() {
                    latencies.push(o.latency_s);
                }
                correct += u64::from(o.correct == Some(true));
            }
            Record::Battery(b) => {
                let t_s = ev.time.as_secs_f64();
                let entry = battery.entry(ev.subject.clone()).or_insert_with(|| BatterySummary {
                    device_id: ev.subject.clone(),
                    time_to_50_pct_s: None,
                    final_pct: b.battery_pct,
                });
                entry.final_pct = b.battery_pct;
                if b.battery_pct <= 50.0 && entry.time_to_50_pct_s.is_none() {
                    entry.time_to_50_pct_s = Some(t_s);
                }
            }
            Record::DeployComplete(d) => {
                deployments.count += 1;
                if d.record.installed() {
                    deployments.installed += 1;
                    if d.replaces.is_some() {
                        lifecycle.swaps += 1;
                    }
                } else {
                    deployments.failed += 1;
                }
                deployments.max_round_trips = deployments.max_round_trips.max(d.record.round_trips);
                transfer_total += d.record.transfer_seconds;
            }
            Record::Lifecycle(t) => match (t.from, t.to) {
                (LifecycleState::Deploying, LifecycleState::Dormant) => lifecycle.installs += 1,
                (LifecycleState::Expired, LifecycleState::Uninstalled) => lifecycle.apoptoses += 1,
                _ => {}
            },
            Record::UserInteraction(_) => user_interactions += 1,
            _ => {}
        }
    }

    let count: u64 = by_category.values().sum();
    let frac = |c| {
        if count == 0 {
            0.0
        } else {
            by_category.get(&c).copied().unwrap_or(0) as f64 / count as f64
        }
    };
    latencies.sort_by(f64::total_cmp);
    if deployments.count > 0 {
        deployments.mean_transfer_seconds = Some(transfer_total / deployments.count as f64);
    }
    Ok(MetricsReport {
        scenario_id: log.scenario_id().to_owned(),
        seed: log.master_seed(),
        arch_mode,
        tasks: TaskStats {
            count,
            first_try: frac(TaskCategory::FirstTry),
            retried: frac(TaskCategory::Retried),
            timeout: frac(TaskCategory::Timeout),
            unacceptable: frac(TaskCategory::Unacceptable),
            latency_p50_s: nearest_rank(&latencies, 50.0),
            latency_p95_s: nearest_rank(&latencies, 95.0),
            latency_p99_s: nearest_rank(&latencies, 99.0),
            correct,
        },
        battery: battery.into_values().collect(),
        deployments,
        lifecycle,
        user_interactions,
    })
}

impl MetricsReport {
    /// Flat `name -> value` view used for deltas and the text table.
    /// Absent values are left out.
    pub fn scalars(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        let t = &self.tasks;
        m.insert("tasks.count".into(), t.count as f64);
        m.insert("tasks.first_try".into(), t.first_try);
        m.insert("tasks.retried".into(), t.retried);
        m.insert("tasks.timeout".into(), t.timeout);
        m.insert("tasks.unacceptable".into(), t.unacceptable);
        m.insert("tasks.correct".into(), t.correct as f64);
        for (k, v) in [
            ("tasks.latency_p50_s", t.latency_p50_s),
            ("tasks.latency_p95_s", t.latency_p95_s),
            ("tasks.latency_p99_s", t.latency_p99_s),
            ("deployments.mean_transfer_seconds", self.deployments.mean_transfer_seconds),
        ] {
            if let Some(v) = v {
                m.insert(k.into(), v);
            }
        }
        for b in &self.battery {
            m.insert(format!("battery.{}.final_pct", b.device_id), b.final_pct);
            if let Some(t) = b.time_to_50_pct_s {
                m.insert(format!("battery.{}.time_to_50_pct_s", b.device_id), t);
            }
        }
        let d = &self.deployments;
        m.insert("deployments.count".into(), d.count as f64);
        m.insert("deployments.installed".into(), d.installed as f64);
        m.insert("deployments.failed".into(), d.failed as f64);
        m.insert("deployments.max_round_trips".into(), f64::from(d.max_round_trips));
        m.insert("lifecycle.installs".into(), self.lifecycle.installs as f64);
        m.insert("lifecycle.swaps".into(), self.lifecycle.swaps as f64);
        m.insert("lifecycle.apoptoses".into(), self.lifecycle.apoptoses as f64);
        m.insert("user_interactions".into(), self.user_interactions as f64);
        m
    }

    pub fn to_text(&self) -> String {
        let mode = self.arch_mode.map_or("-", |m| m.as_str());
        let mut out = format!("scenario {}  seed {}  arch {}\n", self.scenario_id, self.seed, mode);
        table(&mut out, &["metric", "value"], self.scalars().into_iter().map(|(k, v)| vec![k, fmt_num(v)]));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub scenario_id: String,
    pub seed: u64,
    pub a: MetricsReport,
    pub b: MetricsReport,
    /// `b - a` for every metric present on both sides.
    pub deltas: BTreeMap<String, f64>,
}

pub fn compare(a: &MetricsReport, b: &MetricsReport) -> Result<ComparisonReport, MetricsError> {
    if a.scenario_id != b.scenario_id {
        return Err(MetricsError::MismatchedRuns(format!(
            "scenario `{}` vs `{}`",
            a.scenario_id, b.scenario_id
        )));
    }
    if a.seed != b.seed {
        return Err(MetricsError::MismatchedRuns(format!("seed {} vs {}", a.seed, b.seed)));
    }
    let (sa, sb) = (a.scalars(), b.scalars());
    let deltas = sa
        .iter()
        .filter_map(|(k, va)| sb.get(k).map(|vb| (k.clone(), vb - va)))
        .collect();
    Ok(ComparisonReport {
        scenario_id: a.scenario_id.clone(),
        seed: a.seed,
        a: a.clone(),
        b: b.clone(),
        deltas,
    })
}

impl ComparisonReport {
    pub fn to_text(&self) -> String {
        let mode = |r: &MetricsReport| r.arch_mode.map_or("-", |m| m.as_str()).to_owned();
        let mut out = format!("scenario {}  seed {}\n", self.scenario_id, self.seed);
        let (sa, sb) = (self.a.scalars(), self.b.scalars());
        let a_head = format!("a ({})", mode(&self.a));
        let b_head = format!("b ({})", mode(&self.b));
        let rows = self.deltas.iter().map(|(k, d)| vec![k.clone(), fmt_num(sa[k]), fmt_num(sb[k]), fmt_num(*d)]);
        table(&mut out, &["metric", &a_head, &b_head, "delta"], rows);
        out
    }
}

fn fmt_num(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{v:.0}")
    } else {
        format!("{v:.4}")
    }
}

/// Aligned columns: first column left, the rest right.
fn table(out: &mut String, header: &[&str], rows: impl Iterator<Item = Vec<String>>) {
    let rows: Vec<Vec<String>> = std::iter::once(header.iter().map(|s| s.to_string()).collect()).chain(rows).collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    for r in &rows {
        let mut line = String::new();
        for (c, cell) in r.iter().enumerate() {
            if c == 0 {
                let _ = write!(line, "{cell:<w$}", w = widths[c]);
            } else {
                let _ = write!(line, "  {cell:>w$}", w = widths[c]);
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
}

/// Writes `t_s,device_id,battery_pct,memory_used_bytes` rows from the
/// battery records in `log`.
pub fn write_battery_trace<W: Write>(log: &EventLog<Record>, w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t_s", "device_id", "battery_pct", "memory_used_bytes"])?;
    for ev in log.iter() {
        if let Record::Battery(b) = &ev.payload {
            out.write_record([
                ev.time.as_secs_f64().to_string(),
                ev.subject.clone(),
                b.battery_pct.to_string(),
                b.memory_used_bytes.to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}
