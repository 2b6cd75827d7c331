//! Session configuration file.
//!
//! Sectioned `key = value` text; `#` starts a comment. Every key is
//! optional and falls back to its default, but unknown sections or keys,
//! duplicates and out-of-range values are hard errors.
//!
//! ```text
//! [session]
//! mode = vr                      # vr | leader_follower
//! tick_rate = 250                # Hz
//! retarget_frame = world         # world | tool
//! seed = 7
//! gravity = 0 0 -9.81
//! left_chain = arms/left.chain   # relative to this file; built-in chain if absent
//! right_chain = arms/right.chain
//! home_left = 0 -0.4 0 1.1 0 0.9 0
//! home_right = 0 -0.4 0 1.1 0 0.9 0
//! reference_library = kitchen.ref
//!
//! [filter]      alpha  v_max  omega_max
//! [ik]          omega_q  mu  max_step  tracking_gain
//! [nullspace]   enabled  k_n  mode  attraction  lambda
//! [watchdog]    max_joint_velocity  max_tick_jump  trip_action  cooldown_ticks  cooldown_scale
//! [pd]          kp  kd  velocity_cap          (one value, or one per joint)
//! [haptics]     kt  vibration_scale  vibration_tau  kinesthetic_gain  kinesthetic_cap
//! [gateway]     bind  port  decimation
//! ```
//!
//! When `omega_q` is not given it follows the active mode: 1.0 in
//! leader-follower, 0 in VR.

use crate::coordination::{Attraction, GainMode, NullspaceParams, ReferencePoseLibrary};
use crate::haptics::HapticParams;
use crate::ik::IkParams;
use crate::input::{FilterParams, RetargetFrame, Side, TeleopMode};
use crate::kinematics::{default_chain, default_home, parse_chain, JointVector, KinematicChain, DEFAULT_GRAVITY};
use crate::safety::{TripAction, WatchdogPolicy};
use crate::simulator::PdGains;
use nalgebra::Vector3;
use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("config: {0}")]
    Invalid(String),
    #[error("cannot read {path}: {message}")]
    Io { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatewayConfig {
    pub bind: String,
    pub port: u16,
    /// Broadcast every n-th tick.
    pub decimation: u32,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1".into(),
            port: 8765,
            decimation: 4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub mode: TeleopMode,
    pub tick_rate: f64,
    pub retarget_frame: RetargetFrame,
    pub seed: u64,
    pub gravity: Vector3<f64>,
    pub chain_paths: [Option<PathBuf>; 2],
    pub chains: [KinematicChain; 2],
    pub home: [JointVector; 2],
    pub library_path: Option<PathBuf>,
    pub library: ReferencePoseLibrary,
    pub filter: FilterParams,
    /// `omega_q` in here is ignored; see [`SessionConfig::ik_params`].
    pub ik: IkParams,
    pub omega_q: Option<f64>,
    pub nullspace_enabled: bool,
    pub nullspace: NullspaceParams,
    pub watchdog: WatchdogPolicy,
    pub pd: [PdGains; 2],
    pub haptics: [HapticParams; 2],
    pub gateway: GatewayConfig,
}

impl Default for SessionConfig {
    fn default() -> Self {
        let chain = default_chain();
        let dof = chain.dof();
        Self {
            mode: TeleopMode::Vr,
            tick_rate: 250.0,
            retarget_frame: RetargetFrame::World,
            seed: 7,
            gravity: Vector3::from(DEFAULT_GRAVITY),
            chain_paths: [None, None],
            chains: [chain.clone(), chain],
            home: [default_home(), default_home()],
            library_path: None,
            library: ReferencePoseLibrary::default(),
            filter: FilterParams::default(),
            ik: IkParams::default(),
            omega_q: None,
            nullspace_enabled: true,
            nullspace: NullspaceParams::default(),
            watchdog: WatchdogPolicy::default(),
            pd: [PdGains::uniform(dof, 20.0, 0.1, 2.0), PdGains::uniform(dof, 20.0, 0.1, 2.0)],
            haptics: [HapticParams::with_dof(dof), HapticParams::with_dof(dof)],
            gateway: GatewayConfig::default(),
        }
    }
}

/// Default joint-matching weight for a mode.
pub fn default_omega_q(mode: TeleopMode) -> f64 {
    match mode {
        TeleopMode::Vr => 0.0,
        TeleopMode::LeaderFollower => 1.0,
    }
}

struct Entry {
    line: usize,
    section: String,
    key: String,
    value: String,
}

fn syntax(line: usize, message: impl Into<String>) -> ConfigError {
    ConfigError::Syntax {
        line,
        message: message.into(),
    }
}

fn number(e: &Entry) -> Result<f64, ConfigError> {
    let v: f64 = e
        .value
        .parse()
        .map_err(|_| syntax(e.line, format!("{}: expected a number, got {:?}", e.key, e.value)))?;
    if !v.is_finite() {
        return Err(syntax(e.line, format!("{} must be finite", e.key)));
    }
    Ok(v)
}

fn numbers(e: &Entry) -> Result<Vec<f64>, ConfigError> {
    let mut out = Vec::new();
    for tok in e.value.split_whitespace() {
        let v: f64 = tok
            .parse()
            .map_err(|_| syntax(e.line, format!("{}: expected numbers, got {tok:?}", e.key)))?;
        if !v.is_finite() {
            return Err(syntax(e.line, format!("{} must be finite", e.key)));
        }
        out.push(v);
    }
    if out.is_empty() {
        return Err(syntax(e.line, format!("{} needs at least one value", e.key)));
    }
    Ok(out)
}

fn parsed<T: FromStr>(e: &Entry) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    e.value.parse::<T>().map_err(|err| syntax(e.line, format!("{}: {err}", e.key)))
}

fn flag(e: &Entry) -> Result<bool, ConfigError> {
    match e.value.as_str() {
        "true" | "on" | "yes" => Ok(true),
        "false" | "off" | "no" => Ok(false),
        other => Err(syntax(e.line, format!("{}: expected true or false, got {other:?}", e.key))),
    }
}

fn tokenize(text: &str) -> Result<Vec<Entry>, ConfigError> {
    let mut section = String::new();
    let mut seen = HashSet::new();
    let mut sections = HashSet::new();
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| syntax(line, "unterminated section header"))?
                .trim();
            if !SECTIONS.contains(&name) {
                return Err(syntax(line, format!("unknown section [{name}]")));
            }
            if !sections.insert(name.to_string()) {
                return Err(syntax(line, format!("section [{name}] appears twice")));
            }
            section = name.to_string();
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| syntax(line, "expected `key = value`"))?;
        let key = key.trim();
        let value = value.trim();
        if section.is_empty() {
            return Err(syntax(line, format!("key {key:?} outside any section")));
        }
        if !seen.insert((section.clone(), key.to_string())) {
            return Err(syntax(line, format!("duplicate key {key:?} in [{section}]")));
        }
        out.push(Entry {
            line,
            section: section.clone(),
            key: key.to_string(),
            value: value.to_string(),
        });
    }
    Ok(out)
}

const SECTIONS: [&str; 8] = ["session", "filter", "ik", "nullspace", "watchdog", "pd", "haptics", "gateway"];

/// Per-joint values given either once (broadcast) or once per joint.
fn per_joint(values: &[f64], dof: usize, what: &str) -> Result<Vec<f64>, ConfigError> {
    match values.len() {
        1 => Ok(vec![values[0]; dof]),
        n if n == dof => Ok(values.to_vec()),
        n => Err(ConfigError::Invalid(format!("{what}: {n} values for a {dof}-joint chain"))),
    }
}

fn read_file(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

impl SessionConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = read_file(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, base)
    }

    /// Parses config text; relative file paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let entries = tokenize(text)?;
        let mut cfg = SessionConfig::default();
        let mut home: [Option<(usize, Vec<f64>)>; 2] = [None, None];
        let mut pd: [Option<(usize, Vec<f64>)>; 3] = [None, None, None];
        let mut kt: Option<(usize, Vec<f64>)> = None;

        for e in &entries {
            let unknown = || syntax(e.line, format!("unknown key {:?} in [{}]", e.key, e.section));
            match (e.section.as_str(), e.key.as_str()) {
                ("session", "mode") => cfg.mode = parsed(e)?,
                ("session", "tick_rate") => cfg.tick_rate = number(e)?,
                ("session", "retarget_frame") => cfg.retarget_frame = parsed(e)?,
                ("session", "seed") => cfg.seed = parsed(e)?,
                ("session", "gravity") => {
                    let g = numbers(e)?;
                    if g.len() != 3 {
                        return Err(syntax(e.line, "gravity needs three components"));
                    }
                    cfg.gravity = Vector3::new(g[0], g[1], g[2]);
                }
                ("session", "left_chain") => cfg.chain_paths[0] = Some(base.join(&e.value)),
                ("session", "right_chain") => cfg.chain_paths[1] = Some(base.join(&e.value)),
                ("session", "home_left") => home[0] = Some((e.line, numbers(e)?)),
                ("session", "home_right") => home[1] = Some((e.line, numbers(e)?)),
                ("session", "reference_library") => cfg.library_path = Some(base.join(&e.value)),
                ("filter", "alpha") => cfg.filter.alpha = number(e)?,
                ("filter", "v_max") => cfg.filter.v_max = number(e)?,
                ("filter", "omega_max") => cfg.filter.omega_max = number(e)?,
                ("ik", "omega_q") => cfg.omega_q = Some(number(e)?),
                ("ik", "mu") => cfg.ik.mu = number(e)?,
                ("ik", "max_step") => cfg.ik.max_step = number(e)?,
                ("ik", "tracking_gain") => cfg.ik.tracking_gain = number(e)?,
                ("nullspace", "enabled") => cfg.nullspace_enabled = flag(e)?,
                ("nullspace", "k_n") => cfg.nullspace.k_n = number(e)?,
                ("nullspace", "mode") => cfg.nullspace.mode = parsed::<GainMode>(e)?,
                ("nullspace", "attraction") => cfg.nullspace.attraction = parsed::<Attraction>(e)?,
                ("nullspace", "lambda") => cfg.nullspace.lambda = number(e)?,
                ("watchdog", "max_joint_velocity") => cfg.watchdog.max_joint_velocity = number(e)?,
                ("watchdog", "max_tick_jump") => cfg.watchdog.max_tick_jump = number(e)?,
                ("watchdog", "trip_action") => cfg.watchdog.trip_action = parsed::<TripAction>(e)?,
                ("watchdog", "cooldown_ticks") => cfg.watchdog.cooldown_ticks = parsed(e)?,
                ("watchdog", "cooldown_scale") => cfg.watchdog.cooldown_scale = number(e)?,
                ("pd", "kp") => pd[0] = Some((e.line, numbers(e)?)),
                ("pd", "kd") => pd[1] = Some((e.line, numbers(e)?)),
                ("pd", "velocity_cap") => pd[2] = Some((e.line, numbers(e)?)),
                ("haptics", "kt") => kt = Some((e.line, numbers(e)?)),
                ("haptics", "vibration_scale") => {
                    let v = number(e)?;
                    cfg.haptics.iter_mut().for_each(|h| h.vibration_scale = v);
                }
                ("haptics", "vibration_tau") => {
                    let v = number(e)?;
                    cfg.haptics.iter_mut().for_each(|h| h.vibration_tau = v);
                }
                ("haptics", "kinesthetic_gain") => {
                    let v = number(e)?;
                    cfg.haptics.iter_mut().for_each(|h| h.kinesthetic_gain = v);
                }
                ("haptics", "kinesthetic_cap") => {
                    let v = number(e)?;
                    cfg.haptics.iter_mut().for_each(|h| h.kinesthetic_cap = v);
                }
                ("gateway", "bind") => cfg.gateway.bind = e.value.clone(),
                ("gateway", "port") => cfg.gateway.port = parsed(e)?,
                ("gateway", "decimation") => cfg.gateway.decimation = parsed(e)?,
                _ => return Err(unknown()),
            }
        }

        for side in Side::BOTH {
            let i = side.index();
            if let Some(path) = &cfg.chain_paths[i] {
                let text = read_file(path)?;
                cfg.chains[i] = parse_chain(&text)
                    .map_err(|e| ConfigError::Invalid(format!("{side} chain {}: {e}", path.display())))?;
            }
            let dof = cfg.chains[i].dof();
            cfg.home[i] = match &home[i] {
                Some((line, q)) if q.len() != dof => {
                    return Err(syntax(*line, format!("home_{side} has {} values for a {dof}-joint chain", q.len())))
                }
                Some((_, q)) => JointVector::from_slice(q),
                None if cfg.chain_paths[i].is_none() => default_home(),
                None => cfg.chains[i].clamp_to_limits(&JointVector::zeros(dof)).map(|(q, _)| q).map_err(|e| ConfigError::Invalid(e.to_string()))?,
            };
            if !cfg.chains[i].within_limits(&cfg.home[i]) {
                return Err(ConfigError::Invalid(format!("home_{side} lies outside the joint limits")));
            }
            let mut gains = PdGains::uniform(dof, 20.0, 0.1, 2.0);
            for (slot, dst, name) in [(0, &mut gains.kp, "kp"), (1, &mut gains.kd, "kd"), (2, &mut gains.velocity_cap, "velocity_cap")] {
                if let Some((_, v)) = &pd[slot] {
                    *dst = per_joint(v, dof, name)?;
                }
            }
            cfg.pd[i] = gains;
            cfg.haptics[i].kt = match &kt {
                Some((_, v)) => per_joint(v, dof, "kt")?,
                None => vec![1.0; dof],
            };
        }

        if let Some(path) = &cfg.library_path {
            cfg.library = ReferencePoseLibrary::load(path)
                .map_err(|e| ConfigError::Invalid(format!("reference library {}: {e}", path.display())))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.tick_rate
    }

    /// IK parameters with `omega_q` resolved for `mode`.
    pub fn ik_params(&self, mode: TeleopMode) -> IkParams {
        IkParams {
            omega_q: self.omega_q.unwrap_or_else(|| default_omega_q(mode)),
            ..self.ik
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(self.tick_rate > 0.0 && self.tick_rate.is_finite()) {
            return bad("tick_rate must be > 0".into());
        }
        if !self.gravity.iter().all(|g| g.is_finite()) {
            return bad("gravity must be finite".into());
        }
        let f = &self.filter;
        if !(f.alpha > 0.0 && f.alpha <= 1.0) {
            return bad("filter alpha must lie in (0, 1]".into());
        }
        if !(f.v_max > 0.0) || !(f.omega_max > 0.0) {
            return bad("filter v_max and omega_max must be > 0".into());
        }
        self.ik_params(self.mode).validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let n = &self.nullspace;
        if !(n.k_n > 0.0 && n.k_n.is_finite()) {
            return bad("nullspace k_n must be > 0".into());
        }
        if !(n.lambda >= 0.0) {
            return bad("nullspace lambda must be >= 0".into());
        }
        self.watchdog.validate().map_err(|m| ConfigError::Invalid(format!("watchdog: {m}")))?;
        for side in Side::BOTH {
            let i = side.index();
            let dof = self.chains[i].dof();
            self.pd[i].validate(dof).map_err(|m| ConfigError::Invalid(format!("pd ({side}): {m}")))?;
            if self.pd[i].kp.iter().any(|kp| kp * self.dt() >= 2.0) {
                return bad(format!("pd ({side}): kp·dt must stay below 2 for stable tracking"));
            }
            self.haptics[i].validate().map_err(|m| ConfigError::Invalid(format!("haptics ({side}): {m}")))?;
            if self.haptics[i].kt.len() != dof {
                return bad(format!("haptics ({side}): kt needs {dof} entries"));
            }
            if self.home[i].len() != dof || !self.chains[i].within_limits(&self.home[i]) {
                return bad(format!("home_{side} does not fit the chain"));
            }
        }
        for (idx, entry) in self.library.entries.iter().enumerate() {
            if entry.left.len() != self.chains[0].dof() || entry.right.len() != self.chains[1].dof() {
                return bad(format!("reference entry {idx} does not match the chains"));
            }
        }
        if self.gateway.decimation == 0 {
            return bad("gateway decimation must be >= 1".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<SessionConfig, ConfigError> {
        SessionConfig::parse(text, Path::new("."))
    }

    #[test]
    fn empty_text_gives_defaults() {
        let cfg = parse("").unwrap();
        assert_eq!(cfg.tick_rate, 250.0);
        assert_eq!(cfg.ik_params(TeleopMode::Vr).omega_q, 0.0);
        assert_eq!(cfg.ik_params(TeleopMode::LeaderFollower).omega_q, 1.0);
        assert_eq!(cfg.gateway.port, 8765);
        assert!(cfg.library.is_empty());
    }

    #[test]
    fn values_are_applied() {
        let cfg = parse(
            "[session]\nmode = leader_follower\ntick_rate = 500 # fast\n\
             [ik]\nomega_q = 2.5\n[pd]\nkp = 1 2 3 4 5 6 7\n[nullspace]\nenabled = false\nmode = fixed_gain\n\
             [watchdog]\ntrip_action = halt\n[haptics]\nkt = 0.5\n",
        )
        .unwrap();
        assert_eq!(cfg.mode, TeleopMode::LeaderFollower);
        assert_eq!(cfg.dt(), 0.002);
        assert_eq!(cfg.ik_params(TeleopMode::Vr).omega_q, 2.5);
        assert_eq!(cfg.pd[1].kp[6], 7.0);
        assert!(!cfg.nullspace_enabled);
        assert_eq!(cfg.nullspace.mode, GainMode::FixedGain);
        assert_eq!(cfg.watchdog.trip_action, TripAction::Halt);
        assert_eq!(cfg.haptics[0].kt, vec![0.5; 7]);
    }

    #[test]
    fn unknown_keys_and_sections_are_errors() {
        let e = parse("[ik]\nmu = 0.01\nmuu = 0.02\n").unwrap_err();
        assert!(matches!(e, ConfigError::Syntax { line: 3, .. }), "{e}");
        assert!(parse("[solver]\n").is_err());
        assert!(parse("mu = 1\n").is_err());
        assert!(parse("[ik]\nmu = 1\nmu = 2\n").is_err());
    }

    #[test]
    fn ranges_are_enforced() {
        for bad in [
            "[ik]\nmu = 0\n",
            "[filter]\nalpha = 1.5\n",
            "[nullspace]\nk_n = -1\n",
            "[watchdog]\nmax_tick_jump = 0\n",
            "[pd]\nkp = 1 2\n",
            "[pd]\nkp = 600\n",
            "[haptics]\nkt = 0\n",
            "[session]\ntick_rate = nan\n",
            "[session]\nhome_left = 0 0 0\n",
            "[gateway]\ndecimation = 0\n",
            "[session]\nmode = joystick\n",
        ] {
            assert!(parse(bad).is_err(), "{bad:?} accepted");
        }
    }

    #[test]
    fn relative_paths_resolve_against_the_file() {
        let dir = std::env::temp_dir().join(format!("cfgtest-{}", std::process::id()));
        std::fs::create_dir_all(dir.join("arms")).unwrap();
        std::fs::write(dir.join("arms/l.chain"), crate::kinematics::DEFAULT_CHAIN).unwrap();
        std::fs::write(dir.join("s.conf"), "[session]\nleft_chain = arms/l.chain\nreference_library = missing.ref\n").unwrap();
        let e = SessionConfig::load(&dir.join("s.conf")).unwrap_err();
        assert!(e.to_string().contains("missing.ref"), "{e}");
        std::fs::write(dir.join("s.conf"), "[session]\nleft_chain = arms/l.chain\n").unwrap();
        let cfg = SessionConfig::load(&dir.join("s.conf")).unwrap();
        assert_eq!(cfg.chain_paths[0].as_deref(), Some(dir.join("arms/l.chain").as_path()));
        std::fs::remove_dir_all(dir).unwrap();
    }
}
