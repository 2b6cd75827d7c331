//! Bimanual null-space coordination toward a library of reference
//! configuration pairs.

use crate::ik::{clip_step, damped_pseudoinverse, IkError};
use crate::kinematics::JointVector;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;
use thiserror::Error;

/// Projected directions shorter than this yield no null-space motion.
const DEGENERATE_DIRECTION: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum CoordinationError {
    #[error("reference library is empty")]
    EmptyLibrary,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("library line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Ik(#[from] IkError),
    #[error("library file: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceEntry {
    pub label: String,
    pub left: JointVector,
    pub right: JointVector,
}

/// Ordered set of (left, right) reference configurations.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReferencePoseLibrary {
    pub task: String,
    pub captured: String,
    pub entries: Vec<ReferenceEntry>,
}

/// How the null-space attraction gain is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainMode {
    /// `k_n·N·v`
    FixedGain,
    /// `k*·N·v` with `k*` the clamped 1-D minimizer of `‖q + k·N·v − q*‖`.
    OptimalGain,
}

/// The vector that gets projected into the null space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attraction {
    /// `q* − q`
    Reference,
    /// The task increment itself.
    TaskIncrement,
}

impl FromStr for GainMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "fixed_gain" => Ok(GainMode::FixedGain),
            "optimal_gain" => Ok(GainMode::OptimalGain),
            other => Err(format!("unknown gain mode `{other}` (expected fixed_gain | optimal_gain)")),
        }
    }
}

impl FromStr for Attraction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "reference" => Ok(Attraction::Reference),
            "task" => Ok(Attraction::TaskIncrement),
            other => Err(format!("unknown attraction `{other}` (expected reference | task)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NullspaceParams {
    pub k_n: f64,
    pub mode: GainMode,
    pub attraction: Attraction,
    /// Damping of the pseudoinverse inside the projector.
    pub lambda: f64,
}

impl Default for NullspaceParams {
    fn default() -> Self {
        Self {
            k_n: 0.2,
            mode: GainMode::OptimalGain,
            attraction: Attraction::Reference,
            lambda: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection<'a> {
    pub index: usize,
    pub entry: &'a ReferenceEntry,
    pub distance_sq: f64,
}

impl ReferencePoseLibrary {
    pub fn new(task: impl Into<String>, captured: impl Into<String>) -> Self {
        Self {
            task: task.into(),
            captured: captured.into(),
            entries: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Soft size check; a task library normally holds about ten entries.
    pub fn size_warning(&self) -> Option<String> {
        let n = self.len();
        (!(1..=64).contains(&n)).then(|| format!("reference library has {n} entries (expected 1..=64)"))
    }

    /// Nearest pair by summed squared joint distance; ties go to the lowest
    /// index.
    pub fn select(&self, q_left: &JointVector, q_right: &JointVector) -> Result<Selection<'_>, CoordinationError> {
        let mut best: Option<Selection<'_>> = None;
        for (index, entry) in self.entries.iter().enumerate() {
            if entry.left.len() != q_left.len() || entry.right.len() != q_right.len() {
                return Err(CoordinationError::DimensionMismatch(format!(
                    "entry {index} does not match the current configuration"
                )));
            }
            let d = (&entry.left.0 - &q_left.0).norm_squared() + (&entry.right.0 - &q_right.0).norm_squared();
            if best.as_ref().is_none_or(|b| d < b.distance_sq) {
                best = Some(Selection {
                    index,
                    entry,
                    distance_sq: d,
                });
            }
        }
        best.ok_or(CoordinationError::EmptyLibrary)
    }

    pub fn record(&mut self, left: JointVector, right: JointVector, label: impl Into<String>) -> Result<usize, CoordinationError> {
        if let Some(first) = self.entries.first() {
            if first.left.len() != left.len() || first.right.len() != right.len() {
                return Err(CoordinationError::DimensionMismatch(format!(
                    "library holds {}+{} joints, got {}+{}",
                    first.left.len(),
                    first.right.len(),
                    left.len(),
                    right.len()
                )));
            }
        }
        let label = label.into();
        if label.trim().is_empty() || label.contains('\n') {
            return Err(CoordinationError::Format {
                line: 0,
                message: "labels must be non-empty single-line text".into(),
            });
        }
        self.entries.push(ReferenceEntry { label, left, right });
        Ok(self.entries.len() - 1)
    }

    /// Appends an entry and rewrites the library file.
    pub fn record_to_file(
        &mut self,
        path: &Path,
        left: JointVector,
        right: JointVector,
        label: impl Into<String>,
    ) -> Result<usize, CoordinationError> {
        let idx = self.record(left, right, label)?;
        std::fs::write(path, self.to_text())?;
        Ok(idx)
    }

    /// File format:
    ///
    /// ```text
    /// @task <name>
    /// @captured <date>
    /// label <text>
    /// <k radians, space separated>   # left
    /// <k radians, space separated>   # right
    /// ```
    ///
    /// One blank line separates entries. Numbers use the shortest
    /// representation that parses back to the identical `f64`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "@task {}", self.task);
        let _ = writeln!(s, "@captured {}", self.captured);
        for e in &self.entries {
            let _ = writeln!(s, "\nlabel {}", e.label);
            for q in [&e.left, &e.right] {
                let row: Vec<String> = q.iter().map(|v| v.to_string()).collect();
                let _ = writeln!(s, "{}", row.join(" "));
            }
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, CoordinationError> {
        let fmt = |line: usize, message: &str| CoordinationError::Format {
            line,
            message: message.to_string(),
        };
        let mut lib = ReferencePoseLibrary::default();
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l)).peekable();
        let parse_row = |line: usize, s: &str| -> Result<JointVector, CoordinationError> {
            let vals = s
                .split_whitespace()
                .map(|t| t.parse::<f64>().ok().filter(|v| v.is_finite()))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| fmt(line, "expected finite joint angles"))?;
            if vals.is_empty() {
                return Err(fmt(line, "empty joint row"));
            }
            Ok(JointVector::from(vals))
        };
        while let Some((line, raw)) = lines.next() {
            let l = raw.trim_end();
            if l.is_empty() || l.starts_with('#') {
                continue;
            }
            let (head, rest) = l.split_once(' ').unwrap_or((l, ""));
            if head == "@task" {
                lib.task = rest.to_string();
            } else if head == "@captured" {
                lib.captured = rest.to_string();
            } else if let Some(label) = l.strip_prefix("label ") {
                let (ll, left) = lines.next().ok_or_else(|| fmt(line, "entry is missing its left row"))?;
                let left = parse_row(ll, left)?;
                let (lr, right) = lines.next().ok_or_else(|| fmt(ll, "entry is missing its right row"))?;
                let right = parse_row(lr, right)?;
                lib.record(left, right, label).map_err(|e| match e {
                    CoordinationError::DimensionMismatch(m) => CoordinationError::Format { line, message: m },
                    other => other,
                })?;
            } else {
                return Err(fmt(line, "expected `@task`, `@captured` or `label`"));
            }
        }
        Ok(lib)
    }

    pub fn load(path: &Path) -> Result<Self, CoordinationError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

/// `I − J⁺J` with the damped pseudoinverse.
pub fn nullspace_projector(jacobian: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>, IkError> {
    let pinv = damped_pseudoinverse(jacobian, lambda)?;
    let k = jacobian.ncols();
    Ok(DMatrix::identity(k, k) - pinv * jacobian)
}

/// Null-space increment pulling `q` toward `q_star` without disturbing the
/// end effector to first order.
pub fn nullspace_increment(
    jacobian: &DMatrix<f64>,
    q: &JointVector,
    q_star: &JointVector,
    dq_task: &JointVector,
    params: &NullspaceParams,
) -> Result<JointVector, CoordinationError> {
    let k = jacobian.ncols();
    if q.len() != k || q_star.len() != k || dq_task.len() != k {
        return Err(CoordinationError::DimensionMismatch(format!(
            "J has {k} columns; q {}, q* {}, dq_task {}",
            q.len(),
            q_star.len(),
            dq_task.len()
        )));
    }
    let to_star: DVector<f64> = &q_star.0 - &q.0;
    let v = match params.attraction {
        Attraction::Reference => to_star.clone(),
        Attraction::TaskIncrement => dq_task.0.clone(),
    };
    let projector = nullspace_projector(jacobian, params.lambda)?;
    let d = projector * v;
    let dd = d.norm_squared();
    if dd.sqrt() < DEGENERATE_DIRECTION {
        return Ok(JointVector::zeros(k));
    }
    let gain = match params.mode {
        GainMode::FixedGain => params.k_n,
        GainMode::OptimalGain => (d.dot(&to_star) / dd).clamp(0.0, params.k_n),
    };
    Ok(JointVector(d * gain))
}

/// `Δq_task + Δq_null`, re-capped per joint. Returns the sum and whether
/// the cap was hit.
pub fn augment(dq_task: &JointVector, dq_null: &JointVector, max_step: f64) -> Result<(JointVector, bool), CoordinationError> {
    if dq_task.len() != dq_null.len() {
        return Err(CoordinationError::DimensionMismatch(format!(
            "{} vs {}",
            dq_task.len(),
            dq_null.len()
        )));
    }
    let mut sum = &dq_task.0 + &dq_null.0;
    let clipped = clip_step(&mut sum, max_step);
    Ok((JointVector(sum), clipped))
}
