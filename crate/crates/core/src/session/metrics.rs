//! Summary statistics over session logs.

use super::log::{ArmRecord, SessionLog};
use crate::input::Side;
use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ArmMetrics {
    /// Per-tick end-effector error (m, rad); `None` before calibration.
    pub tracking: Vec<Option<(f64, f64)>>,
    /// Per-tick norm of the third difference of the command; zero for the
    /// first three ticks.
    pub jerk: Vec<f64>,
    pub rms_jerk: f64,
    pub trips: u64,
    pub faults: u64,
    pub rejected_frames: u64,
    pub ik_residual_mean: Option<f64>,
    pub ik_residual_max: Option<f64>,
    pub final_pos_err: Option<f64>,
    pub final_rot_err: Option<f64>,
    pub max_tick_jump: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SessionMetrics {
    pub ticks: usize,
    pub arms: [ArmMetrics; 2],
    pub final_reference_distance: Option<f64>,
    pub latency_p50_us: Option<f64>,
    pub latency_p99_us: Option<f64>,
}

impl SessionMetrics {
    pub fn arm(&self, side: Side) -> &ArmMetrics {
        &self.arms[side.index()]
    }
}

/// Nearest-rank percentile of an unsorted sample.
pub fn percentile(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * v.len() as f64).ceil() as usize;
    Some(v[rank.clamp(1, v.len()) - 1])
}

fn arm_metrics(records: &[&ArmRecord]) -> ArmMetrics {
    let mut m = ArmMetrics::default();
    let mut residuals = Vec::new();
    for (n, r) in records.iter().enumerate() {
        m.tracking.push(r.err_pos.zip(r.err_rot));
        if !r.trips.is_empty() {
            m.trips += 1;
        }
        if r.fault.is_some() {
            m.faults += 1;
        }
        if r.filter.starts_with("rejected") {
            m.rejected_frames += 1;
        }
        if let Some(res) = r.ik_residual {
            residuals.push(res);
        }
        let jerk = if n >= 3 {
            let (a, b, c, d) = (&records[n].cmd, &records[n - 1].cmd, &records[n - 2].cmd, &records[n - 3].cmd);
            let len = a.len().min(b.len()).min(c.len()).min(d.len());
            (0..len)
                .map(|j| a[j] - 3.0 * b[j] + 3.0 * c[j] - d[j])
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt()
        } else {
            0.0
        };
        m.jerk.push(jerk);
        if n >= 1 {
            let prev = &records[n - 1].cmd;
            for (a, b) in prev.iter().zip(&r.cmd) {
                m.max_tick_jump = m.max_tick_jump.max((b - a).abs());
            }
        }
    }
    if !m.jerk.is_empty() {
        m.rms_jerk = (m.jerk.iter().map(|j| j * j).sum::<f64>() / m.jerk.len() as f64).sqrt();
    }
    if !residuals.is_empty() {
        m.ik_residual_mean = Some(residuals.iter().sum::<f64>() / residuals.len() as f64);
        m.ik_residual_max = residuals.iter().copied().reduce(f64::max);
    }
    if let Some(Some((p, r))) = m.tracking.last() {
        m.final_pos_err = Some(*p);
        m.final_rot_err = Some(*r);
    }
    m
}

/// Metrics of one log; `tick_micros` adds latency percentiles.
pub fn compute_metrics(log: &SessionLog, tick_micros: Option<&[f64]>) -> SessionMetrics {
    let left: Vec<&ArmRecord> = log.records.iter().map(|r| &r.left).collect();
    let right: Vec<&ArmRecord> = log.records.iter().map(|r| &r.right).collect();
    SessionMetrics {
        ticks: log.records.len(),
        arms: [arm_metrics(&left), arm_metrics(&right)],
        final_reference_distance: log.records.last().and_then(|r| r.reference_distance),
        latency_p50_us: tick_micros.and_then(|t| percentile(t, 50.0)),
        latency_p99_us: tick_micros.and_then(|t| percentile(t, 99.0)),
    }
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Summary table with one column per labelled run, so two runs of the same
/// trace can be diffed side by side.
pub fn metrics_csv(runs: &[(String, SessionMetrics)]) -> String {
    type Getter = fn(&SessionMetrics) -> Option<f64>;
    type Row = Box<dyn Fn(&SessionMetrics) -> Option<f64>>;
    type ArmRow = Box<dyn Fn(&ArmMetrics) -> Option<f64>>;
    let mut rows: Vec<(String, Row)> = Vec::new();
    rows.push(("ticks".into(), Box::new(|m| Some(m.ticks as f64))));
    for side in Side::BOTH {
        let i = side.index();
        let per_arm: [(&str, ArmRow); 9] = [
            ("final_pos_err_m", Box::new(|a| a.final_pos_err)),
            ("final_rot_err_rad", Box::new(|a| a.final_rot_err)),
            ("rms_jerk_rad", Box::new(|a| Some(a.rms_jerk))),
            ("max_tick_jump_rad", Box::new(|a| Some(a.max_tick_jump))),
            ("watchdog_trips", Box::new(|a| Some(a.trips as f64))),
            ("faults", Box::new(|a| Some(a.faults as f64))),
            ("rejected_frames", Box::new(|a| Some(a.rejected_frames as f64))),
            ("ik_residual_mean", Box::new(|a| a.ik_residual_mean)),
            ("ik_residual_max", Box::new(|a| a.ik_residual_max)),
        ];
        for (name, f) in per_arm {
            rows.push((format!("{side}_{name}"), Box::new(move |m: &SessionMetrics| f(&m.arms[i]))));
        }
    }
    let extra: [(&str, Getter); 3] = [
        ("final_reference_distance_rad", |m| m.final_reference_distance),
        ("latency_p50_us", |m| m.latency_p50_us),
        ("latency_p99_us", |m| m.latency_p99_us),
    ];
    for (name, f) in extra {
        rows.push((name.into(), Box::new(f)));
    }

    let mut out = String::from("metric");
    for (label, _) in runs {
        let _ = write!(out, ",{label}");
    }
    out.push('\n');
    for (name, f) in &rows {
        out.push_str(name);
        for (_, m) in runs {
            let _ = write!(out, ",{}", cell(f(m)));
        }
        out.push('\n');
    }
    out
}

/// Per-tick tracking error and jerk of one run.
pub fn series_csv(m: &SessionMetrics) -> String {
    let mut out = String::from("tick,left_err_pos_m,left_err_rot_rad,left_jerk,right_err_pos_m,right_err_rot_rad,right_jerk\n");
    for n in 0..m.ticks {
        let _ = write!(out, "{}", n + 1);
        for a in &m.arms {
            let (p, r) = match a.tracking.get(n).copied().flatten() {
                Some((p, r)) => (Some(p), Some(r)),
                None => (None, None),
            };
            let _ = write!(out, ",{},{},{}", cell(p), cell(r), a.jerk.get(n).copied().unwrap_or(0.0));
        }
        out.push('\n');
    }
    out
}
