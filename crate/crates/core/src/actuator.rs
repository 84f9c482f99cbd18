//! A complete actuator unit: BLDC motor, inner PD/velocity/torque loop, rotor
//! encoder and the cycloidal transmission, stepped at the inner-loop rate.
//!
//! Mechanics are integrated in output-side coordinates. The rotor (reflected
//! inertia `J·N²`) and the output body are coupled through the dead-zone
//! spring-damper of the transmission. Each step solves the coupled velocity
//! update with the mesh force and the gear friction treated implicitly, which
//! keeps stiff transmissions (k_s up to 1e9) stable at a 1 kHz step.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transmission::{TransmissionSpec, TransmissionState};

pub const ACTUATOR_SCHEMA_VERSION: u32 = 1;

/// Velocity scale of the regularized (tanh) gear friction, rad/s at the output.
const FRICTION_VELOCITY: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotorSpec {
    /// Torque constant (Nm/A, motor side).
    pub kt: f64,
    /// Phase resistance (ohm).
    pub resistance: f64,
    #[serde(default = "default_bus_voltage")]
    pub bus_voltage: f64,
    /// Driver current limit (A).
    pub current_limit: f64,
    /// Rotor inertia (kg·m²).
    pub rotor_inertia: f64,
    /// Bearing drag on the rotor (Nm·s/rad, motor side).
    #[serde(default)]
    pub viscous_damping: f64,
    /// Driver board draw at idle (W).
    #[serde(default)]
    pub quiescent_power: f64,
}

fn default_bus_voltage() -> f64 {
    24.0
}

impl MotorSpec {
    /// Torque constant of a motor with the given KV rating (rpm/V).
    pub fn kt_from_kv(kv: f64) -> f64 {
        60.0 / (2.0 * PI * kv)
    }
}

/// Position-loop gains shipped with a preset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerGains {
    pub kp: f64,
    pub kd: f64,
}

impl Default for ControllerGains {
    fn default() -> Self {
        Self { kp: 20.0, kd: 0.8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActuatorSpec {
    pub name: String,
    pub motor: MotorSpec,
    #[serde(default)]
    pub transmission: TransmissionSpec,
    #[serde(default = "default_encoder_bits")]
    pub encoder_bits: u32,
    /// Output-side torque limit (Nm). Preset values are placeholders.
    pub torque_limit: f64,
    #[serde(default = "default_inner_rate")]
    pub inner_rate_hz: f64,
    /// Inertia of the output shaft and flange (kg·m²).
    #[serde(default = "default_output_inertia")]
    pub output_inertia: f64,
    /// Output bearing drag (Nm·s/rad).
    #[serde(default = "default_output_damping")]
    pub output_damping: f64,
    #[serde(default)]
    pub controller: ControllerGains,
}

fn default_encoder_bits() -> u32 {
    12
}
fn default_inner_rate() -> f64 {
    1000.0
}
fn default_output_inertia() -> f64 {
    0.005
}
fn default_output_damping() -> f64 {
    0.01
}

/// On-disk actuator config: the actuator parameters plus schema bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActuatorConfig {
    pub schema_version: u32,
    pub kind: String,
    #[serde(flatten)]
    pub spec: ActuatorSpec,
}

impl ActuatorSpec {
    /// Named presets for the two actuator sizes. Torque limits, KV of the
    /// smaller motor and the gains are placeholders, not measured values.
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "6512" => Some(Self {
                name: "6512".into(),
                motor: MotorSpec {
                    kt: MotorSpec::kt_from_kv(150.0),
                    resistance: 0.15,
                    bus_voltage: 24.0,
                    current_limit: 20.0,
                    rotor_inertia: 1.2e-4,
                    viscous_damping: 1e-5,
                    quiescent_power: 0.5,
                },
                transmission: TransmissionSpec::default(),
                encoder_bits: 12,
                torque_limit: 12.0,
                inner_rate_hz: 1000.0,
                output_inertia: 0.005,
                output_damping: 0.01,
                controller: ControllerGains::default(),
            }),
            "5010" => Some(Self {
                name: "5010".into(),
                motor: MotorSpec {
                    kt: MotorSpec::kt_from_kv(300.0),
                    resistance: 0.25,
                    bus_voltage: 24.0,
                    current_limit: 20.0,
                    rotor_inertia: 5e-5,
                    viscous_damping: 5e-6,
                    quiescent_power: 0.5,
                },
                transmission: TransmissionSpec::default(),
                encoder_bits: 12,
                torque_limit: 6.0,
                inner_rate_hz: 1000.0,
                output_inertia: 0.003,
                output_damping: 0.01,
                controller: ControllerGains { kp: 10.0, kd: 0.3 },
            }),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::config(format!("actuator `{}`: {m}", self.name)));
        let m = &self.motor;
        if !(m.kt > 0.0 && m.resistance >= 0.0 && m.bus_voltage > 0.0) {
            return fail("motor needs kt > 0, resistance >= 0, bus_voltage > 0");
        }
        if !(m.current_limit > 0.0 && m.rotor_inertia > 0.0) {
            return fail("current_limit and rotor_inertia must be > 0");
        }
        if !(m.viscous_damping >= 0.0 && m.quiescent_power >= 0.0) {
            return fail("viscous_damping and quiescent_power must be >= 0");
        }
        if self.encoder_bits < 8 || self.encoder_bits > 24 {
            return fail("encoder_bits must be in 8..=24");
        }
        if !(self.torque_limit > 0.0) {
            return fail("torque_limit must be > 0");
        }
        if !(self.inner_rate_hz > 0.0) {
            return fail("inner_rate_hz must be > 0");
        }
        if !(self.output_inertia > 0.0 && self.output_damping >= 0.0) {
            return fail("output_inertia must be > 0 and output_damping >= 0");
        }
        if !(self.controller.kp >= 0.0 && self.controller.kd >= 0.0) {
            return fail("controller gains must be >= 0");
        }
        self.transmission.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ActuatorConfig = toml::from_str(text)?;
        if cfg.schema_version != ACTUATOR_SCHEMA_VERSION || cfg.kind != "actuator" {
            return Err(Error::config(format!(
                "expected kind `actuator` schema_version {ACTUATOR_SCHEMA_VERSION}, found `{}` v{}",
                cfg.kind, cfg.schema_version
            )));
        }
        cfg.spec.validate()?;
        Ok(cfg.spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&ActuatorConfig {
            schema_version: ACTUATOR_SCHEMA_VERSION,
            kind: "actuator".into(),
            spec: self.clone(),
        })
        .expect("actuator config serializes")
    }

    /// Resolve a preset name or load a config file.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        if let Some(spec) = Self::preset(name_or_path) {
            return Ok(spec);
        }
        Self::from_toml(&std::fs::read_to_string(name_or_path)?)
    }

    /// Encoder resolution on the rotor (rad).
    pub fn encoder_lsb(&self) -> f64 {
        2.0 * PI / (1u64 << self.encoder_bits) as f64
    }

    /// Encoder resolution referred to the output (rad).
    pub fn output_lsb(&self) -> f64 {
        self.encoder_lsb() / self.transmission.ratio
    }

    pub fn inner_dt(&self) -> f64 {
        1.0 / self.inner_rate_hz
    }

    pub fn rest_state(&self) -> ActuatorState {
        ActuatorState::at_rest(self, 0.0)
    }

    pub fn read_encoder(&self, angle: f64) -> f64 {
        read_encoder(self.encoder_bits, angle)
    }
}

/// Quantize a rotor angle to the encoder grid (floor).
pub fn read_encoder(bits: u32, angle: f64) -> f64 {
    let lsb = 2.0 * PI / (1u64 << bits) as f64;
    (angle / lsb).floor() * lsb
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlMode {
    Position,
    Velocity,
    Torque,
}

/// One setpoint for the inner loop. `setpoint` is rad, rad/s or Nm
/// depending on `mode`; all torques are output side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlCommand {
    pub mode: ControlMode,
    pub setpoint: f64,
    pub kp: f64,
    pub kd: f64,
    pub tau_ff: f64,
}

impl ControlCommand {
    pub fn position(q_des: f64, kp: f64, kd: f64) -> Self {
        Self {
            mode: ControlMode::Position,
            setpoint: q_des,
            kp,
            kd,
            tau_ff: 0.0,
        }
    }

    pub fn velocity(qd_des: f64, kd: f64) -> Self {
        Self {
            mode: ControlMode::Velocity,
            setpoint: qd_des,
            kp: 0.0,
            kd,
            tau_ff: 0.0,
        }
    }

    pub fn torque(tau: f64) -> Self {
        Self {
            mode: ControlMode::Torque,
            setpoint: tau,
            kp: 0.0,
            kd: 0.0,
            tau_ff: 0.0,
        }
    }

    pub fn idle() -> Self {
        Self::torque(0.0)
    }

    /// Unclamped output-side torque demand for measured `q`, `qd`.
    pub fn torque_demand(&self, q: f64, qd: f64) -> f64 {
        match self.mode {
            ControlMode::Position => self.kp * (self.setpoint - q) + self.kd * (0.0 - qd) + self.tau_ff,
            ControlMode::Velocity => self.kd * (self.setpoint - qd) + self.tau_ff,
            ControlMode::Torque => self.setpoint + self.tau_ff,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kp >= 0.0 && self.kd >= 0.0) {
            return Err(Error::arg("gains kp and kd must be >= 0"));
        }
        Ok(())
    }
}

/// What the output shaft is attached to during a step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OutputLoad {
    /// Free output body with total inertia (kg·m²) and an external torque.
    Free { inertia: f64, torque: f64 },
    /// Output held at a prescribed velocity (ideal damper / locked shaft).
    Velocity(f64),
}

impl OutputLoad {
    pub const LOCKED: OutputLoad = OutputLoad::Velocity(0.0);
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActuatorState {
    pub time: f64,
    /// Rotor angle and output angle live here, with wear bookkeeping.
    pub transmission: TransmissionState,
    /// Rotor velocity (rad/s, motor side).
    pub rotor_velocity: f64,
    pub output_velocity: f64,
    /// Winding current (A); applied on the following step.
    pub current: f64,
    /// Output-side torque demand after clamping (Nm).
    pub commanded_torque: f64,
    /// Motor torque applied during the last step (Nm, motor side).
    pub motor_torque: f64,
    /// Torque delivered through the mesh to the output (Nm).
    pub mesh_torque: f64,
    /// Running electrical energy drawn (J).
    pub electrical_energy: f64,
    /// Running mechanical work delivered at the output (J).
    pub output_work: f64,
}

impl ActuatorState {
    /// Everything at rest with the output at `output_angle` and the rotor
    /// centred in the dead band.
    pub fn at_rest(spec: &ActuatorSpec, output_angle: f64) -> Self {
        let mut transmission = spec.transmission.fresh_state();
        transmission.output_angle = output_angle;
        transmission.input_angle = output_angle * spec.transmission.ratio;
        Self {
            time: 0.0,
            transmission,
            rotor_velocity: 0.0,
            output_velocity: 0.0,
            current: 0.0,
            commanded_torque: 0.0,
            motor_torque: 0.0,
            mesh_torque: 0.0,
            electrical_energy: 0.0,
            output_work: 0.0,
        }
    }

    pub fn rotor_angle(&self) -> f64 {
        self.transmission.input_angle
    }

    pub fn output_angle(&self) -> f64 {
        self.transmission.output_angle
    }

    /// Output angle as the controller sees it (quantized rotor / ratio).
    pub fn encoder_output_angle(&self, spec: &ActuatorSpec) -> f64 {
        spec.read_encoder(self.rotor_angle()) / spec.transmission.ratio
    }
}

/// Electrical input power: positive shaft power plus copper loss plus the
/// driver's quiescent draw. Regeneration is not modeled.
pub fn electrical_power(spec: &ActuatorSpec, state: &ActuatorState, motor_torque: f64) -> f64 {
    let m = &spec.motor;
    let current = motor_torque / m.kt;
    (motor_torque * state.rotor_velocity).max(0.0) + current * current * m.resistance + m.quiescent_power
}

/// Step with a free output carrying the actuator's own output inertia.
pub fn step(
    spec: &ActuatorSpec,
    state: &ActuatorState,
    cmd: &ControlCommand,
    load_torque: f64,
    dt: f64,
) -> Result<ActuatorState> {
    step_with_load(
        spec,
        state,
        cmd,
        OutputLoad::Free {
            inertia: spec.output_inertia,
            torque: load_torque,
        },
        dt,
    )
}

pub fn step_with_load(
    spec: &ActuatorSpec,
    state: &ActuatorState,
    cmd: &ControlCommand,
    load: OutputLoad,
    dt: f64,
) -> Result<ActuatorState> {
    if !(dt > 0.0) {
        return Err(Error::arg(format!("dt must be > 0, got {dt}")));
    }
    if dt > spec.inner_dt() * (1.0 + 1e-9) {
        return Err(Error::arg(format!(
            "dt {dt} exceeds the inner-loop period {}",
            spec.inner_dt()
        )));
    }
    if let OutputLoad::Free { inertia, .. } = load {
        if !(inertia > 0.0) {
            return Err(Error::arg("free output needs inertia > 0"));
        }
    }

    let tr = &spec.transmission;
    let ratio = tr.ratio;
    let motor = &spec.motor;

    // Sensing and control law.
    let q_enc = state.encoder_output_angle(spec);
    let qd_enc = state.rotor_velocity / ratio;
    let tau_des = cmd
        .torque_demand(q_enc, qd_enc)
        .clamp(-spec.torque_limit, spec.torque_limit);
    let current_cmd = (tau_des / (ratio * motor.kt)).clamp(-motor.current_limit, motor.current_limit);

    // Current loop: previous command is what the windings carry now.
    let motor_torque = motor.kt * state.current;
    let drive = motor_torque * ratio;

    // Output-side coordinates.
    let m_r = motor.rotor_inertia * ratio * ratio;
    let c_r = motor.viscous_damping * ratio * ratio;
    let x_r = state.transmission.input_angle / ratio;
    let v_r = state.rotor_velocity / ratio;
    let x_o = state.transmission.output_angle;
    let v_o = state.output_velocity;
    let delta = x_r - x_o;
    let half = 0.5 * state.transmission.backlash;

    // Gear friction φ·tanh(v/ε), linearized about v for the implicit step.
    let phi = (1.0 - tr.efficiency(drive, v_r)) * drive.abs() + tr.excess_coulomb(state.transmission.cycles);
    let t0 = (v_r / FRICTION_VELOCITY).tanh();
    let slope = phi * (1.0 - t0 * t0) / FRICTION_VELOCITY;
    let beta = slope + c_r;
    let f0 = phi * t0 - slope * v_r;

    let solve = |engaged: Option<f64>| -> (f64, f64, f64) {
        let (f_mesh0, kappa) = match engaged {
            Some(sign) => (tr.stiffness * (delta - sign * half), tr.stiffness * dt + tr.damping),
            None => (0.0, 0.0),
        };
        let a11 = m_r + dt * beta + dt * kappa;
        let rhs1 = m_r * v_r + dt * (drive - f_mesh0 - f0);
        let (vr, vo) = match load {
            OutputLoad::Velocity(w) => ((rhs1 + dt * kappa * w) / a11, w),
            OutputLoad::Free { inertia, torque } => {
                let a12 = -dt * kappa;
                let a22 = inertia + dt * spec.output_damping + dt * kappa;
                let rhs2 = inertia * v_o + dt * (torque + f_mesh0);
                let det = a11 * a22 - a12 * a12;
                ((rhs1 * a22 - a12 * rhs2) / det, (a11 * rhs2 - a12 * rhs1) / det)
            }
        };
        let mesh = f_mesh0 + kappa * (vr - vo);
        (vr, vo, mesh)
    };

    let free = solve(None);
    let predicted = delta + dt * (free.0 - free.1);
    let (vr, vo, mesh) = if delta.abs() <= half && predicted.abs() <= half {
        free
    } else {
        let sign = if delta.abs() > half { delta.signum() } else { predicted.signum() };
        let engaged = solve(Some(sign));
        if engaged.2 * sign < 0.0 {
            free
        } else {
            engaged
        }
    };

    let mut next = *state;
    next.time = state.time + dt;
    next.rotor_velocity = vr * ratio;
    next.output_velocity = vo;
    next.transmission.input_angle = (x_r + dt * vr) * ratio;
    next.transmission.output_angle = x_o + dt * vo;
    next.current = current_cmd;
    next.commanded_torque = tau_des;
    next.motor_torque = motor_torque;
    next.mesh_torque = mesh;
    next.electrical_energy += electrical_power(spec, &next, motor_torque) * dt;
    next.output_work += mesh * vo * dt;
    Ok(next)
}

/// Run `steps` inner-loop steps under a constant command and load.
pub fn run(
    spec: &ActuatorSpec,
    state: &ActuatorState,
    cmd: &ControlCommand,
    load: OutputLoad,
    steps: usize,
) -> Result<ActuatorState> {
    let dt = spec.inner_dt();
    let mut s = *state;
    for _ in 0..steps {
        s = step_with_load(spec, &s, cmd, load, dt)?;
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec() -> ActuatorSpec {
        ActuatorSpec::preset("6512").unwrap()
    }

    #[test]
    fn presets_validate() {
        for name in ["6512", "5010"] {
            ActuatorSpec::preset(name).unwrap().validate().unwrap();
        }
        assert!(ActuatorSpec::preset("9999").is_none());
    }

    #[test]
    fn kt_from_kv_identity() {
        let kt = MotorSpec::kt_from_kv(150.0);
        assert!((kt - 9.549_296_585_5 / 150.0).abs() < 1e-9);
        assert!((kt - 0.0637).abs() < 1e-4);
    }

    #[test]
    fn idle_step_leaves_state_at_rest() {
        let spec = spec();
        let s0 = spec.rest_state();
        let cmd = ControlCommand::position(0.0, 0.0, 0.0);
        let s1 = step(&spec, &s0, &cmd, 0.0, spec.inner_dt()).unwrap();
        assert_eq!(s1.time, spec.inner_dt());
        assert_eq!(s1.transmission, s0.transmission);
        assert_eq!(s1.rotor_velocity, 0.0);
        assert_eq!(s1.output_velocity, 0.0);
        assert_eq!(s1.current, 0.0);
        assert_eq!(s1.mesh_torque, 0.0);
    }

    #[test]
    fn rejects_bad_dt() {
        let spec = spec();
        let s0 = spec.rest_state();
        let cmd = ControlCommand::idle();
        assert!(step(&spec, &s0, &cmd, 0.0, 0.0).is_err());
        assert!(step(&spec, &s0, &cmd, 0.0, -1e-3).is_err());
        assert!(step(&spec, &s0, &cmd, 0.0, 2e-3).is_err());
    }

    #[test]
    fn torque_mode_saturates_at_limit() {
        let spec = spec();
        let mut cmd = ControlCommand::torque(0.0);
        cmd.tau_ff = 2.0 * spec.torque_limit;
        let s = run(&spec, &spec.rest_state(), &cmd, OutputLoad::LOCKED, 2).unwrap();
        assert_eq!(s.commanded_torque, spec.torque_limit);
        let applied = s.motor_torque * spec.transmission.ratio;
        assert!((applied - spec.torque_limit).abs() < 1e-9);
    }

    #[test]
    fn encoder_quantization() {
        let lsb = 2.0 * PI / 4096.0;
        assert_eq!(read_encoder(12, 0.0), 0.0);
        assert!((read_encoder(12, lsb * 3.7) - lsb * 3.0).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100_000 {
            let a: f64 = rng.random_range(-50.0..50.0);
            let err = a - read_encoder(12, a);
            assert!((0.0..lsb).contains(&err), "err {err}");
        }
    }

    #[test]
    fn electrical_power_examples() {
        let mut spec = spec();
        spec.motor.resistance = 0.1;
        let mut st = spec.rest_state();
        assert_eq!(electrical_power(&spec, &st, 0.0), spec.motor.quiescent_power);

        st.rotor_velocity = 30.0;
        let i = 0.5 / spec.motor.kt;
        let expected = 15.0 + i * i * 0.1 + spec.motor.quiescent_power;
        assert!((electrical_power(&spec, &st, 0.5) - expected).abs() < 1e-12);

        // backdriven: shaft power negative, floor at copper + quiescent
        let copper = i * i * 0.1;
        assert!((electrical_power(&spec, &st, -0.5) - (copper + spec.motor.quiescent_power)).abs() < 1e-12);
    }

    fn settle_position(spec: &ActuatorSpec, target: f64, seconds: f64) -> ActuatorState {
        let cmd = ControlCommand::position(target, spec.controller.kp, spec.controller.kd);
        let steps = (seconds * spec.inner_rate_hz) as usize;
        run(spec, &spec.rest_state(), &cmd, OutputLoad::Free { inertia: spec.output_inertia, torque: 0.0 }, steps).unwrap()
    }

    #[test]
    fn position_step_settles_within_dead_band() {
        let spec = spec();
        for target in [0.3, -0.25, 1.0] {
            let s = settle_position(&spec, target, 3.0);
            let bound = spec.transmission.backlash / 2.0 + spec.output_lsb();
            let err = (s.output_angle() - target).abs();
            assert!(err <= bound, "target {target}: err {err} > {bound}");
        }
    }

    #[test]
    fn rigid_transmission_behaves_like_ideal_pd() {
        let mut spec = spec();
        spec.transmission.backlash = 0.0;
        spec.transmission.stiffness = 1e9;
        for target in [0.4, -0.7] {
            let s = settle_position(&spec, target, 3.0);
            let err = (s.output_angle() - target).abs();
            assert!(err <= spec.output_lsb(), "err {err}");
        }
    }

    fn random_command(rng: &mut ChaCha8Rng, limit: f64) -> ControlCommand {
        let mode = match rng.random_range(0..3) {
            0 => ControlMode::Position,
            1 => ControlMode::Velocity,
            _ => ControlMode::Torque,
        };
        ControlCommand {
            mode,
            setpoint: rng.random_range(-3.0 * limit..3.0 * limit),
            kp: rng.random_range(0.0..200.0),
            kd: rng.random_range(0.0..5.0),
            tau_ff: rng.random_range(-3.0 * limit..3.0 * limit),
        }
    }

    #[test]
    fn torque_never_exceeds_limit_under_fuzz() {
        let spec = spec();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut s = spec.rest_state();
        let ratio = spec.transmission.ratio;
        for i in 0..10_000 {
            let cmd = random_command(&mut rng, spec.torque_limit);
            let load = if i % 2 == 0 {
                OutputLoad::Free { inertia: 0.05, torque: rng.random_range(-5.0..5.0) }
            } else {
                OutputLoad::LOCKED
            };
            s = step_with_load(&spec, &s, &cmd, load, spec.inner_dt()).unwrap();
            assert!(s.commanded_torque.abs() <= spec.torque_limit);
            assert!((s.motor_torque * ratio).abs() <= spec.torque_limit + 1e-9);
            assert!(s.current.abs() <= spec.motor.current_limit);
        }
    }

    #[test]
    fn energy_ledger_holds() {
        let spec = spec();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let mut s = spec.rest_state();
            for _ in 0..50 {
                let cmd = random_command(&mut rng, spec.torque_limit);
                let load = OutputLoad::Free { inertia: 0.02, torque: rng.random_range(-2.0..2.0) };
                for _ in 0..20 {
                    s = step_with_load(&spec, &s, &cmd, load, spec.inner_dt()).unwrap();
                }
            }
            // work done on an external load must come from the supply
            assert!(s.electrical_energy >= s.output_work, "{} < {}", s.electrical_energy, s.output_work);
        }
    }

    #[test]
    fn stepping_is_deterministic() {
        let spec = spec();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cmds: Vec<_> = (0..500).map(|_| random_command(&mut rng, spec.torque_limit)).collect();
        let go = || {
            let mut s = spec.rest_state();
            let mut out = Vec::new();
            for c in &cmds {
                s = step(&spec, &s, c, 0.3, spec.inner_dt()).unwrap();
                out.push(s);
            }
            out
        };
        let a = go();
        let b = go();
        assert!(a.iter().zip(&b).all(|(x, y)| x == y));
    }

    #[test]
    fn toml_round_trip() {
        let spec = spec();
        let back = ActuatorSpec::from_toml(&spec.to_toml()).unwrap();
        assert_eq!(back, spec);
    }
}
