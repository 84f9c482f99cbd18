use serde::{Deserialize, Serialize};

use super::{rest_state_with, steps_for};
use crate::actuator::{self, ActuatorSpec, ControlCommand, OutputLoad};
use crate::transmission::TransmissionState;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BacklashConfig {
    /// Probe torque applied each way against the locked output (Nm).
    pub probe_torque: f64,
    pub hold_s: f64,
    /// Stiffness used to remove elastic wind-up from the travel (Nm/rad).
    /// `None` uses the actuator's nominal stiffness; `Some(inf)` skips the correction.
    pub nominal_stiffness: Option<f64>,
}

impl Default for BacklashConfig {
    fn default() -> Self {
        Self {
            probe_torque: 0.2,
            hold_s: 0.5,
            nominal_stiffness: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BacklashMeasurement {
    pub backlash: f64,
    /// Encoder travel between the two probe directions before correction.
    pub raw_travel: f64,
    /// Backlash actually present in the model.
    pub true_backlash: f64,
}

/// Locked-output probe: push the rotor one way, then the other, and read
/// the travel on the motor encoder.
pub fn measure_backlash(
    spec: &ActuatorSpec,
    wear: Option<&TransmissionState>,
    cfg: &BacklashConfig,
) -> Result<BacklashMeasurement> {
    if !(cfg.probe_torque > 0.0 && cfg.probe_torque <= spec.torque_limit && cfg.hold_s > 0.0) {
        return Err(Error::config("backlash probe torque must be in (0, torque limit] with hold > 0"));
    }
    let k = cfg.nominal_stiffness.unwrap_or(spec.transmission.stiffness);
    if !(k > 0.0) {
        return Err(Error::config("nominal stiffness must be > 0"));
    }
    let hold = steps_for(spec, cfg.hold_s).max(1);
    let s0 = rest_state_with(spec, wear);
    let plus = actuator::run(spec, &s0, &ControlCommand::torque(cfg.probe_torque), OutputLoad::LOCKED, hold)?;
    let minus = actuator::run(spec, &plus, &ControlCommand::torque(-cfg.probe_torque), OutputLoad::LOCKED, hold)?;
    let raw = plus.encoder_output_angle(spec) - minus.encoder_output_angle(spec);
    Ok(BacklashMeasurement {
        backlash: raw - 2.0 * cfg.probe_torque / k,
        raw_travel: raw,
        true_backlash: s0.transmission.backlash,
    })
}
