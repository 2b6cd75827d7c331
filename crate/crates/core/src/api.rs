//! Request and response bodies of the HTTP API.

use crate::coordination::ReferencePoseLibrary;
use crate::input::Side;
use crate::kinematics::{JointVector, KinematicChain};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Error body of every non-2xx response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    /// `usage`, `config`, `trace`, `log`, `conflict` or `internal`.
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRequest {
    pub trace: String,
    /// Config file text; the server's own config when absent.
    pub config: Option<String>,
    /// Directory relative config paths resolve against.
    pub config_dir: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayResponse {
    pub log: String,
    pub ticks: usize,
    /// Wall-clock time per tick (µs).
    pub tick_micros: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelledLog {
    pub label: String,
    pub log: String,
    pub tick_micros: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRequest {
    pub runs: Vec<LabelledLog>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsResponse {
    pub csv: String,
    /// Per-tick series of the first run.
    pub series_csv: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenTraceRequest {
    pub scenario: String,
    pub ticks: Option<usize>,
    pub seed: Option<u64>,
    pub config: Option<String>,
    pub config_dir: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenTraceResponse {
    pub trace: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Status {
    pub tick: u64,
    pub tick_rate: f64,
    pub decimation: u32,
    pub clients: usize,
    pub operator_connected: bool,
    pub dropped_states: u64,
    pub capture_mode: bool,
    pub recording: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceEntryMsg {
    pub label: String,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceLibraryMsg {
    pub task: String,
    pub captured: String,
    pub entries: Vec<ReferenceEntryMsg>,
}

impl From<&ReferencePoseLibrary> for ReferenceLibraryMsg {
    fn from(lib: &ReferencePoseLibrary) -> Self {
        Self {
            task: lib.task.clone(),
            captured: lib.captured.clone(),
            entries: lib
                .entries
                .iter()
                .map(|e| ReferenceEntryMsg {
                    label: e.label.clone(),
                    left: e.left.to_vec(),
                    right: e.right.to_vec(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordRefRequest {
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordRefResponse {
    pub index: usize,
}

/// One forward-kinematics test vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FkCase {
    pub q: Vec<f64>,
    pub position: [f64; 3],
    /// Quaternion, w first, `w >= 0`.
    pub orientation: [f64; 4],
    /// Homogeneous transform, row major.
    pub matrix: [[f64; 4]; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FkFixtures {
    pub side: Side,
    pub chain: String,
    pub seed: u64,
    pub cases: Vec<FkCase>,
}

/// Uniform configurations inside the joint limits with their FK, for
/// checking other implementations of the same chain.
pub fn fk_fixtures(chain: &KinematicChain, side: Side, count: usize, seed: u64) -> FkFixtures {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lower = chain.lower_limits();
    let upper = chain.upper_limits();
    let cases = (0..count)
        .map(|_| {
            let q: Vec<f64> = (0..chain.dof()).map(|j| rng.random_range(lower[j]..=upper[j])).collect();
            let pose = chain
                .forward_kinematics(&JointVector::from_slice(&q))
                .expect("sample matches the chain");
            let m = pose.to_matrix();
            FkCase {
                position: pose.xyz(),
                orientation: pose.quaternion_wxyz(),
                matrix: std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)])),
                q,
            }
        })
        .collect();
    FkFixtures {
        side,
        chain: chain.name.clone(),
        seed,
        cases,
    }
}
