use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{backlash::measure_backlash, efficiency::measure_cell, rest_state_with, stream_rng, BacklashConfig, DEFAULT_LOAD_CELL_SIGMA};
use crate::actuator::{self, ActuatorSpec, ActuatorState, ControlCommand, OutputLoad};
use crate::transmission::TransmissionState;
use crate::{Error, Result};

/// Point mass on a massless rod, angle measured from hanging straight down.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pendulum {
    pub mass: f64,
    pub length: f64,
    /// Viscous damping at the pivot (Nm·s/rad).
    pub damping: f64,
    pub gravity: f64,
}

impl Default for Pendulum {
    fn default() -> Self {
        Self {
            mass: 0.5,
            length: 0.5,
            damping: 0.01,
            gravity: 9.81,
        }
    }
}

impl Pendulum {
    pub fn inertia(&self) -> f64 {
        self.mass * self.length * self.length
    }

    /// Peak gravity torque, m·g·L.
    pub fn max_gravity_torque(&self) -> f64 {
        self.mass * self.gravity * self.length
    }

    pub fn gravity_torque(&self, theta: f64) -> f64 {
        self.max_gravity_torque() * theta.sin()
    }

    pub fn energy(&self, theta: f64, omega: f64) -> f64 {
        0.5 * self.inertia() * omega * omega + self.max_gravity_torque() * (1.0 - theta.cos())
    }

    /// External torque on the shaft at a given state, excluding actuation.
    pub fn load_torque(&self, theta: f64, omega: f64) -> f64 {
        -self.gravity_torque(theta) - self.damping * omega
    }

    /// Energy-consistent step of the standalone pendulum under torque `tau`.
    /// Uses the discrete gradient of the potential, so with `tau = 0` the
    /// energy can only decrease, by exactly the damping dissipation.
    pub fn step(&self, theta: f64, omega: f64, tau: f64, dt: f64) -> (f64, f64) {
        let i = self.inertia();
        let mgl = self.max_gravity_torque();
        let mut next = (theta + dt * omega, omega);
        for _ in 0..50 {
            let (t1, w1) = next;
            let dth = t1 - theta;
            let grad = if dth.abs() > 1e-9 {
                mgl * (theta.cos() - t1.cos()) / dth
            } else {
                mgl * (0.5 * (theta + t1)).sin()
            };
            let w_new = (i * omega + dt * (tau - grad - 0.5 * self.damping * omega)) / (i + 0.5 * dt * self.damping);
            let t_new = theta + 0.5 * dt * (omega + w_new);
            let done = (w_new - w1).abs() < 1e-15 && (t_new - t1).abs() < 1e-15;
            next = (t_new, w_new);
            if done {
                break;
            }
        }
        next
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DurabilityConfig {
    pub pendulum: Pendulum,
    pub sweep_deg: [f64; 2],
    pub frequency_hz: f64,
    pub duration_h: f64,
    /// Hourly checkpoints up to this many hours, then every `late_interval_h`.
    pub early_hours: f64,
    pub late_interval_h: f64,
    /// Sweep cycles integrated at each checkpoint to find the peak load.
    pub sampled_cycles: usize,
    /// Torques averaged for the efficiency trace, at `efficiency_speed`.
    pub efficiency_torques: Vec<f64>,
    pub efficiency_speed: f64,
    pub load_cell_sigma: f64,
}

impl Default for DurabilityConfig {
    fn default() -> Self {
        Self {
            pendulum: Pendulum::default(),
            sweep_deg: [-45.0, 90.0],
            frequency_hz: 0.5,
            duration_h: 60.0,
            early_hours: 12.0,
            late_interval_h: 12.0,
            sampled_cycles: 2,
            efficiency_torques: vec![2.0, 4.0, 6.0],
            efficiency_speed: 1.5,
            load_cell_sigma: DEFAULT_LOAD_CELL_SIGMA,
        }
    }
}

impl DurabilityConfig {
    pub fn checkpoints(&self) -> Vec<f64> {
        let mut hours = Vec::new();
        let mut h = 0.0;
        while h <= self.duration_h.min(self.early_hours) + 1e-9 {
            hours.push(h);
            h += 1.0;
        }
        let mut h = self.early_hours + self.late_interval_h;
        while h <= self.duration_h + 1e-9 {
            hours.push(h);
            h += self.late_interval_h;
        }
        hours
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.sweep_deg;
        if !(hi > lo && self.frequency_hz > 0.0 && self.duration_h >= 0.0) {
            return Err(Error::config("durability sweep needs hi > lo, frequency > 0, duration >= 0"));
        }
        if !(self.early_hours >= 0.0 && self.late_interval_h > 0.0 && self.sampled_cycles > 0) {
            return Err(Error::config("durability schedule needs positive intervals and sampled cycles"));
        }
        if self.efficiency_torques.is_empty() || !(self.efficiency_speed > 0.0) {
            return Err(Error::config("durability efficiency probe needs torques and a positive speed"));
        }
        let p = &self.pendulum;
        if !(p.mass > 0.0 && p.length > 0.0 && p.damping >= 0.0 && p.gravity > 0.0) {
            return Err(Error::config("pendulum parameters must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DurabilityRow {
    pub hours: f64,
    pub cycles: f64,
    pub total_efficiency: f64,
    pub mechanical_efficiency: f64,
    /// Backlash measured with the locked-output probe (rad).
    pub backlash: f64,
    /// Backlash state of the model (rad).
    pub model_backlash: f64,
    /// Peak shaft torque over the sampled sweep cycles (Nm).
    pub peak_torque: f64,
    /// RMS sweep tracking error over the sampled cycles (rad).
    pub tracking_rms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DurabilityLog {
    pub seed: u64,
    pub rows: Vec<DurabilityRow>,
}

impl DurabilityLog {
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# seed={}\nhours,cycles,total_efficiency,mechanical_efficiency,backlash_rad,model_backlash_rad,peak_torque_nm,tracking_rms_rad\n",
            self.seed
        );
        for r in &self.rows {
            writeln!(
                out,
                "{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
                r.hours, r.cycles, r.total_efficiency, r.mechanical_efficiency, r.backlash, r.model_backlash, r.peak_torque, r.tracking_rms
            )
            .unwrap();
        }
        out
    }

    pub fn backlash_monotone(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].backlash >= w[0].backlash)
    }
}

/// Integrate `cycles` sweep periods with the pendulum on the output under
/// position control with model feed-forward. Returns peak |shaft torque|
/// and RMS tracking error.
fn sweep(spec: &ActuatorSpec, cfg: &DurabilityConfig, wear: &TransmissionState) -> Result<(f64, f64)> {
    let p = &cfg.pendulum;
    let [lo, hi] = cfg.sweep_deg.map(f64::to_radians);
    let (mid, amp) = (0.5 * (lo + hi), 0.5 * (hi - lo));
    let w = 2.0 * PI * cfg.frequency_hz;
    let dt = spec.inner_dt();
    let steps = (cfg.sampled_cycles as f64 / cfg.frequency_hz * spec.inner_rate_hz).round() as usize;
    let inertia = spec.output_inertia + p.inertia();
    let mut s: ActuatorState = rest_state_with(spec, Some(wear));
    s.transmission.output_angle = mid;
    s.transmission.input_angle = mid * spec.transmission.ratio;
    let gains = spec.controller;
    let (mut peak, mut sq) = (0.0f64, 0.0);
    for k in 0..steps {
        let t = k as f64 * dt;
        let q_des = mid + amp * (w * t).sin();
        let mut cmd = ControlCommand::position(q_des, gains.kp, gains.kd);
        let qd_des = amp * w * (w * t).cos();
        let qdd_des = -amp * w * w * (w * t).sin();
        cmd.tau_ff = p.gravity_torque(q_des) + inertia * qdd_des + gains.kd * qd_des;
        let load = OutputLoad::Free {
            inertia,
            torque: p.load_torque(s.output_angle(), s.output_velocity),
        };
        s = actuator::step_with_load(spec, &s, &cmd, load, dt)?;
        peak = peak.max(s.mesh_torque.abs());
        sq += (s.output_angle() - q_des).powi(2);
    }
    Ok((peak, (sq / steps.max(1) as f64).sqrt()))
}

/// Accelerated pendulum-lifting campaign. At each checkpoint the sweep is
/// integrated for a few cycles to get the peak load, efficiency and
/// backlash are measured, and wear is advanced analytically to the next
/// checkpoint.
pub fn run_durability(spec: &ActuatorSpec, cfg: &DurabilityConfig, seed: u64) -> Result<DurabilityLog> {
    cfg.validate()?;
    let mgl = cfg.pendulum.max_gravity_torque();
    if spec.torque_limit < mgl {
        return Err(Error::Procedure(format!(
            "torque limit {} Nm cannot lift the pendulum (needs {mgl:.4} Nm)",
            spec.torque_limit
        )));
    }
    let tr = &spec.transmission;
    let mut state = tr.fresh_state();
    let cycles_per_hour = 3600.0 * cfg.frequency_hz;
    let backlash_cfg = BacklashConfig::default();
    let mut rows = Vec::new();
    for (idx, &hours) in cfg.checkpoints().iter().enumerate() {
        let target = hours * cycles_per_hour;
        if target > state.cycles {
            let (peak, _) = sweep(spec, cfg, &state)?;
            state = tr.apply_wear(&state, target - state.cycles, peak)?;
        }
        let (peak, rms) = sweep(spec, cfg, &state)?;
        let mut rng = stream_rng(seed, idx as u64);
        let (mut tot, mut mech) = (0.0, 0.0);
        for &t in &cfg.efficiency_torques {
            let c = measure_cell(spec, Some(&state), t, cfg.efficiency_speed, 1.0, 1.0, cfg.load_cell_sigma, &mut rng)?;
            if let Some(reason) = c.invalid {
                return Err(Error::Procedure(format!("durability efficiency probe at {t} Nm: {reason}")));
            }
            tot += c.total_efficiency;
            mech += c.mechanical_efficiency;
        }
        let n = cfg.efficiency_torques.len() as f64;
        let b = measure_backlash(spec, Some(&state), &backlash_cfg)?;
        rows.push(DurabilityRow {
            hours,
            cycles: state.cycles,
            total_efficiency: tot / n,
            mechanical_efficiency: mech / n,
            backlash: b.backlash,
            model_backlash: state.backlash,
            peak_torque: peak,
            tracking_rms: rms,
        });
    }
    Ok(DurabilityLog { seed, rows })
}
