use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{rest_state_with, steps_for, stream_rng, DEFAULT_LOAD_CELL_SIGMA};
use crate::actuator::{self, ActuatorSpec, ControlCommand, OutputLoad};
use crate::transmission::TransmissionState;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EfficiencyConfig {
    pub torques: Vec<f64>,
    pub speeds: Vec<f64>,
    #[serde(default = "d_settle")]
    pub settle_s: f64,
    #[serde(default = "d_window")]
    pub window_s: f64,
    #[serde(default = "d_sigma")]
    pub load_cell_sigma: f64,
}

fn d_settle() -> f64 {
    1.0
}
fn d_window() -> f64 {
    1.0
}
fn d_sigma() -> f64 {
    DEFAULT_LOAD_CELL_SIGMA
}

impl Default for EfficiencyConfig {
    fn default() -> Self {
        Self {
            torques: (1..=8).map(f64::from).collect(),
            speeds: vec![0.5, 1.5, 3.0],
            settle_s: d_settle(),
            window_s: d_window(),
            load_cell_sigma: d_sigma(),
        }
    }
}

impl EfficiencyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.torques.is_empty() || self.speeds.is_empty() {
            return Err(Error::config("efficiency grid needs at least one torque and one speed"));
        }
        if self.torques.iter().chain(&self.speeds).any(|v| !(v.is_finite() && *v != 0.0)) {
            return Err(Error::config("efficiency grid values must be finite and nonzero"));
        }
        if !(self.settle_s >= 0.0 && self.window_s > 0.0 && self.load_cell_sigma >= 0.0) {
            return Err(Error::config("settle >= 0, window > 0 and load cell sigma >= 0 required"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EfficiencyCell {
    pub torque: f64,
    pub speed: f64,
    /// Why the cell could not be run; `None` for valid cells.
    pub invalid: Option<String>,
    /// Mean load-cell torque over the window (Nm).
    pub measured_torque: f64,
    /// Mean noiseless shaft torque over the window (Nm).
    pub shaft_torque: f64,
    /// Mean shaft torque times speed (W).
    pub mechanical_power: f64,
    /// Output work over the window divided by its duration (W).
    pub mechanical_power_work: f64,
    pub electrical_power: f64,
    pub mechanical_efficiency: f64,
    pub total_efficiency: f64,
}

impl EfficiencyCell {
    pub fn is_valid(&self) -> bool {
        self.invalid.is_none()
    }

    fn invalid(torque: f64, speed: f64, reason: String) -> Self {
        Self {
            torque,
            speed,
            invalid: Some(reason),
            measured_torque: f64::NAN,
            shaft_torque: f64::NAN,
            mechanical_power: f64::NAN,
            mechanical_power_work: f64::NAN,
            electrical_power: f64::NAN,
            mechanical_efficiency: f64::NAN,
            total_efficiency: f64::NAN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EfficiencyMap {
    pub seed: u64,
    pub cells: Vec<EfficiencyCell>,
}

impl EfficiencyMap {
    pub fn cell(&self, torque: f64, speed: f64) -> Option<&EfficiencyCell> {
        self.cells.iter().find(|c| c.torque == torque && c.speed == speed)
    }

    /// Columns: `torque_nm,speed_rad_s,valid,measured_torque_nm,mechanical_power_w,
    /// mechanical_power_work_w,electrical_power_w,mechanical_efficiency,total_efficiency`.
    /// Invalid cells leave the measurement columns empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "torque_nm,speed_rad_s,valid,measured_torque_nm,mechanical_power_w,\
             mechanical_power_work_w,electrical_power_w,mechanical_efficiency,total_efficiency\n",
        );
        for c in &self.cells {
            write!(out, "{:?},{:?},{}", c.torque, c.speed, c.is_valid() as u8).unwrap();
            if c.is_valid() {
                writeln!(
                    out,
                    ",{:?},{:?},{:?},{:?},{:?},{:?}",
                    c.measured_torque,
                    c.mechanical_power,
                    c.mechanical_power_work,
                    c.electrical_power,
                    c.mechanical_efficiency,
                    c.total_efficiency
                )
                .unwrap();
            } else {
                out.push_str(",,,,,,\n");
            }
        }
        out
    }
}

/// Reason a torque/speed point is outside the actuator's envelope.
fn envelope_violation(spec: &ActuatorSpec, torque: f64, speed: f64) -> Option<String> {
    let m = &spec.motor;
    let ratio = spec.transmission.ratio;
    if torque.abs() > spec.torque_limit {
        return Some(format!("torque exceeds the {} Nm limit", spec.torque_limit));
    }
    let current = torque.abs() / (ratio * m.kt);
    if current > m.current_limit {
        return Some(format!("needs {current:.2} A, above the current limit"));
    }
    let volts = current * m.resistance + m.kt * ratio * speed.abs();
    if volts > m.bus_voltage {
        return Some(format!("needs {volts:.2} V, above the bus voltage"));
    }
    None
}

/// One grid point: the actuator holds `torque` in torque mode while the
/// output is driven at `speed` by an ideal velocity source. After settling,
/// the window average gives both efficiencies.
#[allow(clippy::too_many_arguments)]
pub fn measure_cell<R: Rng>(
    spec: &ActuatorSpec,
    wear: Option<&TransmissionState>,
    torque: f64,
    speed: f64,
    settle_s: f64,
    window_s: f64,
    load_cell_sigma: f64,
    rng: &mut R,
) -> Result<EfficiencyCell> {
    if let Some(reason) = envelope_violation(spec, torque, speed) {
        return Ok(EfficiencyCell::invalid(torque, speed, reason));
    }
    let cmd = ControlCommand::torque(torque);
    let load = OutputLoad::Velocity(speed);
    let mut s = actuator::run(spec, &rest_state_with(spec, wear), &cmd, load, steps_for(spec, settle_s))?;
    let noise = Normal::new(0.0, load_cell_sigma).map_err(|e| Error::arg(e.to_string()))?;
    let n = steps_for(spec, window_s).max(1);
    let dt = spec.inner_dt();
    let (e0, w0) = (s.electrical_energy, s.output_work);
    let mut shaft_sum = 0.0;
    let mut cell_sum = 0.0;
    for _ in 0..n {
        s = actuator::step_with_load(spec, &s, &cmd, load, dt)?;
        shaft_sum += s.mesh_torque;
        cell_sum += s.mesh_torque + noise.sample(rng);
    }
    let duration = n as f64 * dt;
    let shaft = shaft_sum / n as f64;
    let measured = cell_sum / n as f64;
    let p_mech = measured * speed;
    let p_elec = (s.electrical_energy - e0) / duration;
    Ok(EfficiencyCell {
        torque,
        speed,
        invalid: None,
        measured_torque: measured,
        shaft_torque: shaft,
        mechanical_power: shaft * speed,
        mechanical_power_work: (s.output_work - w0) / duration,
        electrical_power: p_elec,
        mechanical_efficiency: p_mech / (torque * speed).abs(),
        total_efficiency: p_mech / p_elec,
    })
}

/// Runs every torque/speed pair of the grid, torque-major.
pub fn run_efficiency_map(spec: &ActuatorSpec, cfg: &EfficiencyConfig, seed: u64) -> Result<EfficiencyMap> {
    cfg.validate()?;
    let grid: Vec<(f64, f64)> = cfg
        .torques
        .iter()
        .flat_map(|&t| cfg.speeds.iter().map(move |&w| (t, w)))
        .collect();
    let cells = grid
        .par_iter()
        .enumerate()
        .map(|(i, &(t, w))| {
            let mut rng = stream_rng(seed, i as u64);
            measure_cell(spec, None, t, w, cfg.settle_s, cfg.window_s, cfg.load_cell_sigma, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EfficiencyMap { seed, cells })
}
