//! Per-tick orchestration of both arm pipelines, plus trace replay, session
//! logs, metrics and synthetic trace generation.

pub mod config;
pub mod log;
pub mod metrics;
pub mod scenario;

pub use config::{ConfigError, GatewayConfig, SessionConfig};
pub use log::{ArmRecord, LogRecord, SessionLog};
pub use metrics::{compute_metrics, metrics_csv, SessionMetrics};

use crate::coordination::{augment, nullspace_increment};
use crate::geometry::{self, Pose};
use crate::haptics::{estimate_external_torque, kinesthetic_command, vibration_intensity, VibrationFilter};
use crate::ik::{cartesian_error, solve_task_increment};
use crate::input::{
    leader_joint_delta, InputFilter, RetargetState, Side, TeleopFrame, TeleopMode, TraceRecord, BUTTON_CLUTCH,
    BUTTON_REANCHOR,
};
use crate::kinematics::JointVector;
use crate::safety::{TripDetail, Watchdog, WatchdogStatus};
use crate::simulator::{SimState, Simulator, Wrench};
use std::time::Instant;

/// Pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Events,
    Filter,
    Retarget,
    Ik,
    Coordination,
    Safety,
    Simulator,
    Haptics,
}

/// Everything that happens at one control tick.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TickInput {
    pub timestamp: f64,
    pub frames: [Option<TeleopFrame>; 2],
    pub wrenches: Vec<(Side, Wrench)>,
    pub mode: Option<TeleopMode>,
}

impl TickInput {
    pub fn idle(timestamp: f64) -> Self {
        Self {
            timestamp,
            ..Self::default()
        }
    }

    /// Folds records sharing one timestamp into a tick. A later frame for
    /// the same side replaces an earlier one.
    pub fn from_records(timestamp: f64, records: &[TraceRecord]) -> Self {
        let mut input = Self::idle(timestamp);
        for rec in records {
            match rec {
                TraceRecord::Frame(f) => input.frames[f.side.index()] = Some(f.clone()),
                TraceRecord::Idle { .. } => {}
                TraceRecord::Wrench { side, wrench, .. } => input.wrenches.push((*side, *wrench)),
                TraceRecord::Mode { mode, .. } => input.mode = Some(*mode),
            }
        }
        input
    }
}

/// Groups trace records into ticks, one per distinct timestamp.
pub fn group_ticks(records: &[TraceRecord]) -> Vec<TickInput> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < records.len() {
        let t = records[start].timestamp();
        let mut end = start + 1;
        while end < records.len() && records[end].timestamp() == t {
            end += 1;
        }
        out.push(TickInput::from_records(t, &records[start..end]));
        start = end;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub enum FilterStatus {
    NoFrame,
    Accepted,
    Rejected(String),
}

impl FilterStatus {
    pub fn label(&self) -> String {
        match self {
            FilterStatus::NoFrame => "none".into(),
            FilterStatus::Accepted => "accepted".into(),
            FilterStatus::Rejected(r) => format!("rejected: {r}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SideReport {
    pub filter: FilterStatus,
    pub calibrated: bool,
    pub clutched: bool,
    pub target: Option<Pose>,
    pub dq_task: JointVector,
    pub dq_null: JointVector,
    /// Command leaving the safety gate.
    pub command: JointVector,
    /// Simulated joint positions after the step.
    pub q: JointVector,
    pub ee: Pose,
    pub gripper: f64,
    pub ik_residual: Option<f64>,
    pub sigma_min: Option<f64>,
    /// Position (m) and rotation (rad) error of the simulated end effector.
    pub tracking_error: Option<(f64, f64)>,
    pub tau_ext: JointVector,
    pub vibration: f64,
    pub kinesthetic: Vec<f64>,
    pub watchdog: WatchdogStatus,
    pub trips: Vec<TripDetail>,
    /// Set when the side held position because a stage failed.
    pub fault: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickReport {
    pub tick: u64,
    pub timestamp: f64,
    pub mode: TeleopMode,
    pub reference: Option<usize>,
    /// Joint distance of both commands to the selected reference pair.
    pub reference_distance: Option<f64>,
    pub sides: [SideReport; 2],
    pub stages: Vec<Stage>,
}

/// Operator inputs arriving between ticks in a live session.
#[derive(Debug, Clone, PartialEq)]
pub enum LiveInput {
    Frame(TeleopFrame),
    Calibrate(Side),
    SetMode(TeleopMode),
    InjectWrench(Side, Wrench),
    Clutch(Side, bool),
}

#[derive(Debug, Clone)]
struct Arm {
    filter: InputFilter,
    retarget: RetargetState,
    q_cmd: JointVector,
    target: Option<Pose>,
    leader_anchor: Option<JointVector>,
    clutched: bool,
    watchdog: Watchdog,
    vibration: VibrationFilter,
    gripper: f64,
}

#[derive(Debug, Clone)]
struct Work {
    filtered: Option<TeleopFrame>,
    filter: FilterStatus,
    dq_c: JointVector,
    dq_task: JointVector,
    dq_task_unclipped: JointVector,
    dq_null: JointVector,
    jacobian: Option<nalgebra::DMatrix<f64>>,
    ik_residual: Option<f64>,
    sigma_min: Option<f64>,
    fault: Option<String>,
}

impl Work {
    fn new(dof: usize) -> Self {
        Self {
            filtered: None,
            filter: FilterStatus::NoFrame,
            dq_c: JointVector::zeros(dof),
            dq_task: JointVector::zeros(dof),
            dq_task_unclipped: JointVector::zeros(dof),
            dq_null: JointVector::zeros(dof),
            jacobian: None,
            ik_residual: None,
            sigma_min: None,
            fault: None,
        }
    }

    fn fail(&mut self, stage: &str, err: impl std::fmt::Display) {
        if self.fault.is_none() {
            self.fault = Some(format!("{stage}: {err}"));
        }
    }
}

/// Both arm pipelines, the simulator and the live-input bookkeeping.
#[derive(Debug, Clone)]
pub struct Session {
    config: SessionConfig,
    mode: TeleopMode,
    sim: Simulator,
    state: SimState,
    arms: [Arm; 2],
    tick: u64,
    pending_reanchor: [bool; 2],
    clutch_held: [bool; 2],
}

impl Session {
    pub fn new(config: SessionConfig) -> Self {
        let arm = |i: usize| Arm {
            filter: InputFilter::new(config.filter),
            retarget: RetargetState::new(config.retarget_frame),
            q_cmd: config.home[i].clone(),
            target: None,
            leader_anchor: None,
            clutched: false,
            watchdog: Watchdog::new(config.watchdog),
            vibration: VibrationFilter::default(),
            gripper: 0.0,
        };
        Self {
            mode: config.mode,
            sim: Simulator {
                chains: config.chains.clone(),
                gains: config.pd.clone(),
                gravity: config.gravity,
            },
            state: SimState::new(config.home[0].clone(), config.home[1].clone()),
            arms: [arm(0), arm(1)],
            tick: 0,
            pending_reanchor: [false; 2],
            clutch_held: [false; 2],
            config,
        }
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn mode(&self) -> TeleopMode {
        self.mode
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn sim_state(&self) -> &SimState {
        &self.state
    }

    pub fn command(&self, side: Side) -> &JointVector {
        &self.arms[side.index()].q_cmd
    }

    pub fn is_calibrated(&self, side: Side) -> bool {
        self.arms[side.index()].retarget.calibrated
    }

    pub fn end_effector(&self, side: Side) -> Pose {
        self.sim
            .chain(side)
            .forward_kinematics(&self.state.arm(side).q)
            .unwrap_or_else(|_| Pose::identity())
    }

    fn set_mode(&mut self, mode: TeleopMode) {
        if mode != self.mode {
            self.mode = mode;
            for arm in &mut self.arms {
                arm.leader_anchor = None;
            }
        }
    }

    /// Timestamp the next live tick will carry.
    pub fn next_tick_time(&self) -> f64 {
        (self.tick + 1) as f64 * self.config.dt()
    }

    /// Runs one live tick from queued operator inputs. Frames are restamped
    /// to session time and carry clutch/re-anchor requests as button bits,
    /// so the returned records replay to the identical tick.
    pub fn live_tick(&mut self, inputs: Vec<LiveInput>) -> (TickReport, Vec<TraceRecord>) {
        let t = self.next_tick_time();
        let mut events = Vec::new();
        let mut frames: [Option<TeleopFrame>; 2] = [None, None];
        for input in inputs {
            match input {
                LiveInput::Frame(f) => {
                    let i = f.side.index();
                    frames[i] = Some(f);
                }
                LiveInput::Calibrate(side) => self.pending_reanchor[side.index()] = true,
                LiveInput::Clutch(side, on) => self.clutch_held[side.index()] = on,
                LiveInput::SetMode(mode) => events.push(TraceRecord::Mode { timestamp: t, mode }),
                LiveInput::InjectWrench(side, wrench) => {
                    if wrench.is_finite() {
                        events.push(TraceRecord::Wrench {
                            timestamp: t,
                            side,
                            wrench,
                        })
                    }
                }
            }
        }
        let mut records = events;
        for (i, slot) in frames.into_iter().enumerate() {
            if let Some(mut f) = slot {
                f.timestamp = t;
                f.buttons &= !(BUTTON_CLUTCH | BUTTON_REANCHOR);
                if self.clutch_held[i] {
                    f.buttons |= BUTTON_CLUTCH;
                }
                if std::mem::take(&mut self.pending_reanchor[i]) {
                    f.buttons |= BUTTON_REANCHOR;
                }
                records.push(TraceRecord::Frame(f));
            }
        }
        if records.is_empty() {
            records.push(TraceRecord::Idle { timestamp: t });
        }
        let report = self.run_tick(&TickInput::from_records(t, &records));
        (report, records)
    }

    /// Runs the full pipeline once. Never fails: a side whose stages error
    /// re-issues its previous command and reports the fault.
    pub fn run_tick(&mut self, input: &TickInput) -> TickReport {
        let dt = self.config.dt();
        let mut stages = Vec::with_capacity(8);

        if let Some(mode) = input.mode {
            self.set_mode(mode);
        }
        for (side, wrench) in &input.wrenches {
            self.state.inject_wrench(*side, *wrench);
        }
        stages.push(Stage::Events);

        let mut work = [Work::new(self.arms[0].q_cmd.len()), Work::new(self.arms[1].q_cmd.len())];

        for side in Side::BOTH {
            let i = side.index();
            if let Some(frame) = &input.frames[i] {
                match self.arms[i].filter.filter(frame) {
                    Ok(f) => {
                        work[i].filtered = Some(f);
                        work[i].filter = FilterStatus::Accepted;
                    }
                    Err(r) => work[i].filter = FilterStatus::Rejected(r.to_string()),
                }
            }
        }
        stages.push(Stage::Filter);

        for side in Side::BOTH {
            self.retarget_side(side, &mut work[side.index()]);
        }
        stages.push(Stage::Retarget);

        let ik = self.config.ik_params(self.mode);
        for side in Side::BOTH {
            let i = side.index();
            let (arm, w) = (&self.arms[i], &mut work[i]);
            let Some(target) = arm.target.as_ref().filter(|_| w.fault.is_none()) else {
                continue;
            };
            let chain = self.sim.chain(side);
            let result = chain
                .forward_kinematics(&arm.q_cmd)
                .and_then(|pose| Ok((pose, chain.body_jacobian(&arm.q_cmd)?)));
            match result {
                Ok((pose, jac)) => match cartesian_error(&pose, target) {
                    Ok(e) => match solve_task_increment(&jac, &e, &w.dq_c, &ik) {
                        Ok(sol) => {
                            w.dq_task = sol.delta_q;
                            w.dq_task_unclipped = sol.unclipped;
                            w.ik_residual = Some(sol.cart_residual);
                            w.sigma_min = Some(sol.condition_hint);
                            w.jacobian = Some(jac);
                        }
                        Err(err) => w.fail("ik", err),
                    },
                    Err(err) => w.fail("ik", err),
                },
                Err(err) => w.fail("kinematics", err),
            }
        }
        stages.push(Stage::Ik);

        let selection = if self.config.library.is_empty() {
            None
        } else {
            self.config
                .library
                .select(&self.arms[0].q_cmd, &self.arms[1].q_cmd)
                .ok()
                .map(|s| s.index)
        };
        let mut steps = [JointVector::zeros(0), JointVector::zeros(0)];
        for side in Side::BOTH {
            let i = side.index();
            let (arm, w) = (&self.arms[i], &mut work[i]);
            steps[i] = w.dq_task.clone();
            if w.fault.is_some() || !self.config.nullspace_enabled {
                continue;
            }
            let (Some(index), Some(jac)) = (selection, w.jacobian.as_ref()) else {
                continue;
            };
            let entry = &self.config.library.entries[index];
            let q_star = if side == Side::Left { &entry.left } else { &entry.right };
            let combined = nullspace_increment(jac, &arm.q_cmd, q_star, &w.dq_task_unclipped, &self.config.nullspace)
                .and_then(|dq_null| {
                    let (sum, _) = augment(&w.dq_task, &dq_null, ik.max_step)?;
                    Ok((dq_null, sum))
                });
            match combined {
                Ok((dq_null, sum)) => {
                    w.dq_null = dq_null;
                    steps[i] = sum;
                }
                Err(err) => w.fail("coordination", err),
            }
        }
        stages.push(Stage::Coordination);

        let mut gates = Vec::with_capacity(2);
        for side in Side::BOTH {
            let i = side.index();
            let chain = self.sim.chain(side);
            let arm = &mut self.arms[i];
            let w = &mut work[i];
            let proposed = if w.fault.is_some() {
                arm.q_cmd.clone()
            } else {
                match chain.clamp_to_limits(&JointVector(&arm.q_cmd.0 + &steps[i].0)) {
                    Ok((q, _)) => q,
                    Err(err) => {
                        w.fail("limits", err);
                        arm.q_cmd.clone()
                    }
                }
            };
            let gate = arm.watchdog.gate(&arm.q_cmd, &proposed, dt);
            arm.q_cmd = gate.command.clone();
            gates.push(gate);
        }
        stages.push(Stage::Safety);

        match self.sim.step(&self.state, &self.arms[0].q_cmd, &self.arms[1].q_cmd, dt) {
            Ok(next) => self.state = next,
            Err(err) => {
                for w in &mut work {
                    w.fail("simulator", &err);
                }
            }
        }
        for side in Side::BOTH {
            self.state.arms[side.index()].gripper = self.arms[side.index()].gripper;
        }
        stages.push(Stage::Simulator);

        let mut haptic = Vec::with_capacity(2);
        for side in Side::BOTH {
            let i = side.index();
            let params = &self.config.haptics[i];
            let chain = self.sim.chain(side);
            let tau = self
                .sim
                .synthesize_currents(&self.state, side, &params.kt)
                .and_then(|sample| estimate_external_torque(&sample, chain, &params.kt, &self.sim.gravity));
            let tau = match tau {
                Ok(t) => t,
                Err(err) => {
                    work[i].fail("haptics", err);
                    nalgebra::DVector::zeros(chain.dof())
                }
            };
            let raw = vibration_intensity(&tau, params.vibration_scale);
            let vibration = self.arms[i].vibration.update(raw, dt, params.vibration_tau);
            let kinesthetic = match self.mode {
                TeleopMode::LeaderFollower => {
                    kinesthetic_command(&tau, params.kinesthetic_gain, params.kinesthetic_cap).as_slice().to_vec()
                }
                TeleopMode::Vr => Vec::new(),
            };
            haptic.push((JointVector(tau), vibration, kinesthetic));
        }
        stages.push(Stage::Haptics);

        self.tick += 1;
        let reference_distance = selection.map(|index| {
            let e = &self.config.library.entries[index];
            ((&e.left.0 - &self.arms[0].q_cmd.0).norm_squared() + (&e.right.0 - &self.arms[1].q_cmd.0).norm_squared()).sqrt()
        });
        let mut sides = Vec::with_capacity(2);
        for ((side, (w, gate)), (tau_ext, vibration, kinesthetic)) in
            Side::BOTH.into_iter().zip(work.into_iter().zip(gates)).zip(haptic)
        {
            let arm = &self.arms[side.index()];
            let q = self.state.arm(side).q.clone();
            let ee = self.end_effector(side);
            let tracking_error = arm.target.as_ref().map(|t| {
                (
                    (t.translation - ee.translation).norm(),
                    geometry::rotation_distance(&t.rotation, &ee.rotation),
                )
            });
            let trips = match gate.verdict {
                crate::safety::Verdict::Tripped(t) => t,
                crate::safety::Verdict::Pass => Vec::new(),
            };
            sides.push(SideReport {
                filter: w.filter,
                calibrated: arm.retarget.calibrated,
                clutched: arm.clutched,
                target: arm.target,
                dq_task: w.dq_task,
                dq_null: w.dq_null,
                command: arm.q_cmd.clone(),
                q,
                ee,
                gripper: arm.gripper,
                ik_residual: w.ik_residual,
                sigma_min: w.sigma_min,
                tracking_error,
                tau_ext,
                vibration,
                kinesthetic,
                watchdog: gate.status,
                trips,
                fault: w.fault,
            });
        }
        let right = sides.pop().expect("two sides");
        let left = sides.pop().expect("two sides");
        TickReport {
            tick: self.tick,
            timestamp: input.timestamp,
            mode: self.mode,
            reference: selection,
            reference_distance,
            sides: [left, right],
            stages,
        }
    }

    fn retarget_side(&mut self, side: Side, w: &mut Work) {
        let mode = self.mode;
        let i = side.index();
        let Some(frame) = w.filtered.clone() else {
            return;
        };
        let chain = &self.sim.chains[i];
        let arm = &mut self.arms[i];
        arm.gripper = frame.gripper.clamp(0.0, 1.0);

        if mode == TeleopMode::LeaderFollower {
            if let Some(joints) = &frame.leader_joints {
                let reading = JointVector::from_slice(joints);
                if reading.len() != chain.dof() {
                    w.fail("input", format!("leader reports {} joints, chain has {}", reading.len(), chain.dof()));
                    return;
                }
                if let Some(anchor) = &arm.leader_anchor {
                    match leader_joint_delta(&frame, anchor) {
                        Ok(d) => w.dq_c = d,
                        Err(err) => {
                            w.fail("input", err);
                            return;
                        }
                    }
                }
                arm.leader_anchor = Some(reading);
            }
        }

        let result = (|| {
            if !arm.retarget.calibrated {
                let ee = chain.forward_kinematics(&arm.q_cmd).map_err(|e| e.to_string())?;
                arm.retarget.calibrate(&frame, &ee).map_err(|e| e.to_string())?;
                arm.target = Some(ee);
            }
            let held = match arm.target {
                Some(t) => t,
                None => chain.forward_kinematics(&arm.q_cmd).map_err(|e| e.to_string())?,
            };
            if frame.has_button(BUTTON_CLUTCH) {
                arm.clutched = true;
                return Ok(());
            }
            if arm.clutched || frame.has_button(BUTTON_REANCHOR) {
                arm.retarget.reanchor_at(&frame, &held).map_err(|e| e.to_string())?;
                arm.clutched = false;
            }
            arm.target = Some(arm.retarget.retarget(&frame).map_err(|e| e.to_string())?);
            Ok::<(), String>(())
        })();
        if let Err(err) = result {
            w.fail("retarget", err);
        }
    }
}

/// Result of replaying a trace.
#[derive(Debug, Clone)]
pub struct Replay {
    pub log: SessionLog,
    /// Wall-clock time spent in each tick (µs). Not part of the log.
    pub tick_micros: Vec<f64>,
}

/// Runs `records` through a fresh session headlessly.
pub fn replay(records: &[TraceRecord], config: &SessionConfig) -> Replay {
    let mut session = Session::new(config.clone());
    let ticks = group_ticks(records);
    let mut log = SessionLog::default();
    let mut tick_micros = Vec::with_capacity(ticks.len());
    for input in &ticks {
        let start = Instant::now();
        let report = session.run_tick(input);
        tick_micros.push(start.elapsed().as_secs_f64() * 1e6);
        log.records.push(LogRecord::from_report(&report));
    }
    Replay { log, tick_micros }
}
