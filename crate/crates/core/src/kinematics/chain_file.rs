//! Line-oriented chain description.
//!
//! ```text
//! # comment
//! name = generic-7dof
//!
//! [joint 1]
//! axis = 0 0 1            # unit vector in the joint frame
//! xyz = 0 0 0.267         # origin translation in the parent frame (m)
//! rpy = 0 0 0             # origin roll/pitch/yaw (rad), Rz·Ry·Rx
//! lower = -6.28           # rad
//! upper = 6.28            # rad
//! velocity_max = 3.14     # rad/s
//!
//! [link 1]
//! mass = 2.4              # kg
//! com = 0 0 0.1           # m, in the link frame
//!
//! [tool]                  # optional end-effector offset
//! xyz = 0 0 0.1
//! rpy = 0 0 0
//! ```
//!
//! Joints and links are numbered from 1 without gaps and must pair up.
//! `xyz` and `rpy` default to zero; every other key is required. Unknown
//! keys, unknown sections and duplicate keys are errors.

use super::{Joint, JointLimits, KinematicChain, Link};
use crate::geometry::Pose;
use nalgebra::Vector3;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use thiserror::Error;

pub const DEFAULT_CHAIN: &str = include_str!("../../assets/generic7.chain");
/// A 6-joint chain with skewed frames, for tests and mixed-arm setups.
pub const OFFSET6_CHAIN: &str = include_str!("../../assets/offset6.chain");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChainFileError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Default)]
struct JointDraft {
    axis: Option<[f64; 3]>,
    xyz: Option<[f64; 3]>,
    rpy: Option<[f64; 3]>,
    lower: Option<f64>,
    upper: Option<f64>,
    velocity_max: Option<f64>,
}

#[derive(Default)]
struct LinkDraft {
    mass: Option<f64>,
    com: Option<[f64; 3]>,
}

#[derive(Default)]
struct ToolDraft {
    xyz: Option<[f64; 3]>,
    rpy: Option<[f64; 3]>,
}

enum Section {
    Top,
    Joint(usize),
    Link(usize),
    Tool,
}

fn syntax(line: usize, message: impl Into<String>) -> ChainFileError {
    ChainFileError::Syntax {
        line,
        message: message.into(),
    }
}

fn scalar(line: usize, key: &str, value: &str) -> Result<f64, ChainFileError> {
    value
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| syntax(line, format!("`{key}` expects a finite number, got `{value}`")))
}

fn triple(line: usize, key: &str, value: &str) -> Result<[f64; 3], ChainFileError> {
    let parts: Vec<&str> = value.split_whitespace().collect();
    if parts.len() != 3 {
        return Err(syntax(line, format!("`{key}` expects three numbers")));
    }
    let mut out = [0.0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = scalar(line, key, p)?;
    }
    Ok(out)
}

fn set<T>(slot: &mut Option<T>, value: T, line: usize, key: &str) -> Result<(), ChainFileError> {
    if slot.is_some() {
        return Err(syntax(line, format!("duplicate key `{key}`")));
    }
    *slot = Some(value);
    Ok(())
}

fn section_index(line: usize, name: &str, rest: &str) -> Result<usize, ChainFileError> {
    rest.trim()
        .parse::<usize>()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| syntax(line, format!("`[{name} N]` needs a positive index")))
}

pub fn parse_chain(text: &str) -> Result<KinematicChain, ChainFileError> {
    let mut name: Option<String> = None;
    let mut joints: BTreeMap<usize, JointDraft> = BTreeMap::new();
    let mut links: BTreeMap<usize, LinkDraft> = BTreeMap::new();
    let mut tool: Option<ToolDraft> = None;
    let mut section = Section::Top;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(inner) = content.strip_prefix('[') {
            let inner = inner
                .strip_suffix(']')
                .ok_or_else(|| syntax(line, "unterminated section header"))?
                .trim();
            let (head, rest) = inner.split_once(char::is_whitespace).unwrap_or((inner, ""));
            section = match head {
                "joint" => {
                    let n = section_index(line, head, rest)?;
                    if joints.insert(n, JointDraft::default()).is_some() {
                        return Err(syntax(line, format!("duplicate section [joint {n}]")));
                    }
                    Section::Joint(n)
                }
                "link" => {
                    let n = section_index(line, head, rest)?;
                    if links.insert(n, LinkDraft::default()).is_some() {
                        return Err(syntax(line, format!("duplicate section [link {n}]")));
                    }
                    Section::Link(n)
                }
                "tool" if rest.trim().is_empty() => {
                    if tool.replace(ToolDraft::default()).is_some() {
                        return Err(syntax(line, "duplicate section [tool]"));
                    }
                    Section::Tool
                }
                other => return Err(syntax(line, format!("unknown section `{other}`"))),
            };
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| syntax(line, "expected `key = value`"))?;
        match &section {
            Section::Top => match key {
                "name" => set(&mut name, value.to_string(), line, key)?,
                _ => return Err(syntax(line, format!("unknown key `{key}`"))),
            },
            Section::Joint(n) => {
                let d = joints.get_mut(n).expect("section registered");
                match key {
                    "axis" => set(&mut d.axis, triple(line, key, value)?, line, key)?,
                    "xyz" => set(&mut d.xyz, triple(line, key, value)?, line, key)?,
                    "rpy" => set(&mut d.rpy, triple(line, key, value)?, line, key)?,
                    "lower" => set(&mut d.lower, scalar(line, key, value)?, line, key)?,
                    "upper" => set(&mut d.upper, scalar(line, key, value)?, line, key)?,
                    "velocity_max" => set(&mut d.velocity_max, scalar(line, key, value)?, line, key)?,
                    _ => return Err(syntax(line, format!("unknown key `{key}` in [joint {n}]"))),
                }
            }
            Section::Link(n) => {
                let d = links.get_mut(n).expect("section registered");
                match key {
                    "mass" => set(&mut d.mass, scalar(line, key, value)?, line, key)?,
                    "com" => set(&mut d.com, triple(line, key, value)?, line, key)?,
                    _ => return Err(syntax(line, format!("unknown key `{key}` in [link {n}]"))),
                }
            }
            Section::Tool => {
                let d = tool.as_mut().expect("section registered");
                match key {
                    "xyz" => set(&mut d.xyz, triple(line, key, value)?, line, key)?,
                    "rpy" => set(&mut d.rpy, triple(line, key, value)?, line, key)?,
                    _ => return Err(syntax(line, format!("unknown key `{key}` in [tool]"))),
                }
            }
        }
    }

    let k = joints.len();
    if k == 0 {
        return Err(ChainFileError::Invalid("no [joint N] sections".into()));
    }
    if joints.keys().copied().ne(1..=k) {
        return Err(ChainFileError::Invalid("joint indices must run 1..N without gaps".into()));
    }
    if links.keys().copied().ne(1..=k) {
        return Err(ChainFileError::Invalid("every joint needs a matching [link N]".into()));
    }

    let missing = |what: &str, n: usize| ChainFileError::Invalid(format!("missing `{what}` in section {n}"));
    let mut out_joints = Vec::with_capacity(k);
    for (n, d) in joints {
        let xyz = d.xyz.unwrap_or([0.0; 3]);
        let rpy = d.rpy.unwrap_or([0.0; 3]);
        out_joints.push(Joint {
            axis: Vector3::from(d.axis.ok_or_else(|| missing("axis", n))?),
            origin: Pose::from_xyz_rpy(xyz, rpy),
            origin_xyz: xyz,
            origin_rpy: rpy,
            limits: JointLimits {
                lower: d.lower.ok_or_else(|| missing("lower", n))?,
                upper: d.upper.ok_or_else(|| missing("upper", n))?,
                velocity_max: d.velocity_max.ok_or_else(|| missing("velocity_max", n))?,
            },
        });
    }
    let mut out_links = Vec::with_capacity(k);
    for (n, d) in links {
        out_links.push(Link {
            mass: d.mass.ok_or_else(|| missing("mass", n))?,
            com: Vector3::from(d.com.ok_or_else(|| missing("com", n))?),
        });
    }
    let (tool_xyz, tool_rpy) = tool
        .map(|t| (t.xyz.unwrap_or([0.0; 3]), t.rpy.unwrap_or([0.0; 3])))
        .unwrap_or(([0.0; 3], [0.0; 3]));

    KinematicChain::new(
        name.unwrap_or_else(|| "chain".to_string()),
        out_joints,
        out_links,
        tool_xyz,
        tool_rpy,
    )
    .map_err(|e| ChainFileError::Invalid(e.to_string()))
}

fn fmt3(v: [f64; 3]) -> String {
    format!("{} {} {}", v[0], v[1], v[2])
}

/// Serializes a chain in the same grammar `parse_chain` reads.
pub fn write_chain(chain: &KinematicChain) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "name = {}", chain.name);
    for (i, (j, l)) in chain.joints.iter().zip(&chain.links).enumerate() {
        let n = i + 1;
        let _ = writeln!(s, "\n[joint {n}]");
        let _ = writeln!(s, "axis = {}", fmt3([j.axis.x, j.axis.y, j.axis.z]));
        let _ = writeln!(s, "xyz = {}", fmt3(j.origin_xyz));
        let _ = writeln!(s, "rpy = {}", fmt3(j.origin_rpy));
        let _ = writeln!(s, "lower = {}", j.limits.lower);
        let _ = writeln!(s, "upper = {}", j.limits.upper);
        let _ = writeln!(s, "velocity_max = {}", j.limits.velocity_max);
        let _ = writeln!(s, "\n[link {n}]");
        let _ = writeln!(s, "mass = {}", l.mass);
        let _ = writeln!(s, "com = {}", fmt3([l.com.x, l.com.y, l.com.z]));
    }
    let _ = writeln!(s, "\n[tool]");
    let _ = writeln!(s, "xyz = {}", fmt3(chain.tool_xyz));
    let _ = writeln!(s, "rpy = {}", fmt3(chain.tool_rpy));
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_LINK: &str = "
name = planar
[joint 1]
axis = 0 0 1
lower = -3
upper = 3
velocity_max = 2
[link 1]
mass = 1
com = 0.5 0 0
[joint 2]
axis = 0 0 1
xyz = 1 0 0
lower = -3
upper = 3
velocity_max = 2
[link 2]
mass = 1
com = 0.5 0 0
[tool]
xyz = 1 0 0
";

    #[test]
    fn parses_minimal_chain() {
        let c = parse_chain(TWO_LINK).unwrap();
        assert_eq!(c.name, "planar");
        assert_eq!(c.dof(), 2);
        assert_eq!(c.tool_xyz, [1.0, 0.0, 0.0]);
    }

    #[test]
    fn shipped_chains_parse_and_rewrite() {
        for (text, dof) in [(DEFAULT_CHAIN, 7), (OFFSET6_CHAIN, 6)] {
            let c = parse_chain(text).unwrap();
            assert_eq!(c.dof(), dof);
            let again = parse_chain(&write_chain(&c)).unwrap();
            assert_eq!(again, c);
        }
    }

    #[test]
    fn rejects_unknown_key_with_line() {
        let text = TWO_LINK.replace("mass = 1\ncom = 0.5 0 0\n[joint 2]", "mass = 1\ncolour = red\n[joint 2]");
        let err = parse_chain(&text).unwrap_err();
        match err {
            ChainFileError::Syntax { line, message } => {
                assert_eq!(line, 10);
                assert!(message.contains("colour"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_structural_problems() {
        assert!(parse_chain("name = x").is_err());
        assert!(parse_chain(&TWO_LINK.replace("[joint 2]", "[joint 3]")).is_err());
        assert!(parse_chain(&TWO_LINK.replace("[tool]", "[gripper]")).is_err());
        assert!(parse_chain(&TWO_LINK.replace("axis = 0 0 1\nxyz", "axis = 0 0 2\nxyz")).is_err());
        assert!(parse_chain(&TWO_LINK.replace("lower = -3\nupper = 3\nvelocity_max = 2\n[link 2]", "lower = 3\nupper = 3\nvelocity_max = 2\n[link 2]")).is_err());
        assert!(parse_chain(&TWO_LINK.replace("name = planar", "name = planar\nname = again")).is_err());
        assert!(parse_chain(&TWO_LINK.replace("com = 0.5 0 0\n[joint 2]", "com = 0.5 0\n[joint 2]")).is_err());
    }
}
