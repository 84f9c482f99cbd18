//! Kind detection and validation for every config file the tools accept.

use std::fmt;
use std::path::Path;

use crate::actuator::ActuatorSpec;
use crate::benchmark::RobotSpec;
use crate::control::{MlpPolicy, Robot};
use crate::kinematics::KinematicChain;
use crate::teleop::PoseStream;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfigKind {
    Actuator,
    Morphology,
    Robot,
    RobotSpec,
    Policy,
    PoseStream,
}

impl fmt::Display for ConfigKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            ConfigKind::Actuator => "actuator",
            ConfigKind::Morphology => "morphology",
            ConfigKind::Robot => "robot",
            ConfigKind::RobotSpec => "robot_spec",
            ConfigKind::Policy => "policy",
            ConfigKind::PoseStream => "pose_stream",
        })
    }
}

/// Kind of a config file, from its extension and, for TOML, its `kind` key.
pub fn detect_kind(path: &Path, text: &str) -> Result<ConfigKind> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    match ext {
        "json" => Ok(ConfigKind::Morphology),
        "csv" => Ok(ConfigKind::PoseStream),
        "policy" => Ok(ConfigKind::Policy),
        "toml" => {
            let value: toml::Table = toml::from_str(text)?;
            match value.get("kind").and_then(|k| k.as_str()) {
                Some("actuator") => Ok(ConfigKind::Actuator),
                Some("robot") => Ok(ConfigKind::Robot),
                Some("robot_spec") => Ok(ConfigKind::RobotSpec),
                Some(other) => Err(Error::config(format!("unknown config kind `{other}`"))),
                None => Err(Error::config("TOML config has no `kind` key")),
            }
        }
        _ => Err(Error::config(format!(
            "cannot tell the config kind of `{}` (expected .toml, .json, .csv or .policy)",
            path.display()
        ))),
    }
}

/// Parse and validate a config file without running anything. Robot configs
/// also resolve and validate their actuator references.
pub fn validate_file(path: impl AsRef<Path>) -> Result<ConfigKind> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let kind = detect_kind(path, &text)?;
    match kind {
        ConfigKind::Actuator => {
            ActuatorSpec::from_toml(&text)?;
        }
        ConfigKind::Morphology => {
            KinematicChain::from_json(&text)?;
        }
        ConfigKind::Robot => {
            Robot::load(path)?;
        }
        ConfigKind::RobotSpec => {
            RobotSpec::from_toml(&text)?;
        }
        ConfigKind::Policy => {
            MlpPolicy::from_text(&text)?;
        }
        ConfigKind::PoseStream => {
            PoseStream::load(path)?;
        }
    }
    Ok(kind)
}
