//! Cycloidal reducer: gear ratio, output-side backlash dead-zone, finite
//! torsional stiffness, an affine efficiency surface and cycle-driven wear.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower clamp of the efficiency surface.
pub const EFFICIENCY_FLOOR: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EfficiencyParams {
    /// Efficiency at zero torque and speed.
    pub eta0: f64,
    /// Loss per Nm of output torque (1/Nm).
    pub k_tau: f64,
    /// Loss per rad/s of output speed (s/rad).
    pub k_omega: f64,
    /// Coulomb friction scaled by the break-in bump (Nm, output side).
    pub tau_coulomb: f64,
}

impl Default for EfficiencyParams {
    fn default() -> Self {
        Self {
            eta0: 0.95,
            k_tau: 0.006,
            k_omega: 0.01,
            tau_coulomb: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WearParams {
    /// Saturation backlash (rad).
    pub b_max: f64,
    /// Load-weighted cycles per e-fold of wear.
    pub n_w: f64,
    /// Height of the break-in friction bump (unitless).
    pub breakin_amp: f64,
    /// Cycle count at the bump peak.
    pub breakin_center: f64,
    /// Gaussian width of the bump in cycles.
    pub breakin_width: f64,
    /// Peak torque at which one cycle counts as one wear cycle (Nm).
    pub rated_torque: f64,
}

impl Default for WearParams {
    fn default() -> Self {
        Self {
            b_max: 0.05,
            n_w: 200_000.0,
            breakin_amp: 0.5,
            // 12 h and 4 h of a 0.5 Hz duty cycle
            breakin_center: 21_600.0,
            breakin_width: 7_200.0,
            rated_torque: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransmissionSpec {
    /// Reduction ratio (rotor turns per output turn).
    pub ratio: f64,
    /// Torsional stiffness at the output (Nm/rad).
    pub stiffness: f64,
    /// Structural damping of the engaged mesh (Nm·s/rad, output side).
    #[serde(default = "default_mesh_damping")]
    pub damping: f64,
    /// Initial (fresh) backlash at the output (rad).
    pub backlash: f64,
    #[serde(default)]
    pub efficiency: EfficiencyParams,
    #[serde(default)]
    pub wear: WearParams,
}

fn default_mesh_damping() -> f64 {
    2.7
}

impl Default for TransmissionSpec {
    fn default() -> Self {
        Self {
            ratio: 15.0,
            stiffness: 319.49,
            damping: default_mesh_damping(),
            backlash: 0.0187,
            efficiency: EfficiencyParams::default(),
            wear: WearParams::default(),
        }
    }
}

impl TransmissionSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::config(format!("transmission: {m}")));
        if !(self.ratio > 1.0) {
            return fail("ratio must be > 1");
        }
        if !(self.stiffness > 0.0) {
            return fail("stiffness must be > 0");
        }
        if !(self.damping >= 0.0) {
            return fail("damping must be >= 0");
        }
        if !(self.backlash >= 0.0 && self.backlash < self.wear.b_max) {
            return fail("backlash must satisfy 0 <= b0 < b_max");
        }
        let e = &self.efficiency;
        if !(e.eta0 > 0.0 && e.eta0 <= 1.0) {
            return fail("eta0 must lie in (0, 1]");
        }
        if !(e.k_tau >= 0.0 && e.k_omega >= 0.0 && e.tau_coulomb >= 0.0) {
            return fail("efficiency slopes and coulomb friction must be >= 0");
        }
        let w = &self.wear;
        if !(w.n_w > 0.0 && w.breakin_width > 0.0 && w.rated_torque > 0.0 && w.breakin_amp >= 0.0)
        {
            return fail("wear parameters must be positive");
        }
        Ok(())
    }

    /// Torque carried by the mesh for a given state.
    pub fn transmit_torque(&self, state: &TransmissionState) -> f64 {
        let delta = state.input_angle / self.ratio - state.output_angle;
        dead_zone_spring(self.stiffness, state.backlash, delta)
    }

    /// Reducer efficiency at an output torque and speed.
    pub fn efficiency(&self, tau_out: f64, omega_out: f64) -> f64 {
        let e = &self.efficiency;
        (e.eta0 - e.k_tau * tau_out.abs() - e.k_omega * omega_out.abs()).clamp(EFFICIENCY_FLOOR, 1.0)
    }

    /// Backlash after `wear_cycles` load-weighted cycles.
    pub fn worn_backlash(&self, wear_cycles: f64) -> f64 {
        let w = &self.wear;
        let b = self.backlash + (w.b_max - self.backlash) * (1.0 - (-wear_cycles / w.n_w).exp());
        b.clamp(self.backlash, w.b_max)
    }

    /// Advance wear by `cycles` load cycles with the given peak torque.
    pub fn apply_wear(
        &self,
        state: &TransmissionState,
        cycles: f64,
        peak_torque: f64,
    ) -> Result<TransmissionState> {
        if !(cycles >= 0.0) {
            return Err(Error::arg(format!("cycle count must be >= 0, got {cycles}")));
        }
        let mut next = *state;
        if cycles == 0.0 {
            return Ok(next);
        }
        next.cycles += cycles;
        next.wear_cycles += cycles * peak_torque.abs() / self.wear.rated_torque;
        next.backlash = self.worn_backlash(next.wear_cycles).max(state.backlash);
        Ok(next)
    }

    /// Transient multiplier on Coulomb friction during break-in.
    pub fn breakin_friction_multiplier(&self, cycles: f64) -> f64 {
        let w = &self.wear;
        let z = (cycles - w.breakin_center) / w.breakin_width;
        1.0 + w.breakin_amp * (-z * z).exp()
    }

    /// Coulomb friction above the run-in level at a given cycle count (Nm).
    pub fn excess_coulomb(&self, cycles: f64) -> f64 {
        (self.breakin_friction_multiplier(cycles) - 1.0) * self.efficiency.tau_coulomb
    }

    pub fn fresh_state(&self) -> TransmissionState {
        TransmissionState {
            input_angle: 0.0,
            output_angle: 0.0,
            cycles: 0.0,
            wear_cycles: 0.0,
            backlash: self.backlash,
        }
    }
}

/// Spring with a symmetric dead-zone of total width `backlash` around zero.
pub fn dead_zone_spring(stiffness: f64, backlash: f64, delta: f64) -> f64 {
    let half = 0.5 * backlash;
    if delta.abs() <= half {
        0.0
    } else {
        stiffness * (delta - delta.signum() * half)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransmissionState {
    /// Rotor-side angle (rad).
    pub input_angle: f64,
    /// Output angle (rad).
    pub output_angle: f64,
    /// Load cycles seen so far.
    pub cycles: f64,
    /// Cycles weighted by peak torque over rated torque.
    pub wear_cycles: f64,
    /// Current backlash (rad).
    pub backlash: f64,
}
