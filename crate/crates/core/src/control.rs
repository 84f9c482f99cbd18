//! Two-rate onboard control loop: a 250 Hz joint loop that talks to the
//! actuators over the CAN codec and a decimated policy loop that turns
//! proprioceptive observations into desired joint positions.
//!
//! Observation layout (single frame, no history):
//!
//! | slice               | length | units          |
//! |---------------------|--------|----------------|
//! | base angular vel    | 3      | rad/s          |
//! | projected gravity   | 3      | unit vector    |
//! | joint positions     | N      | rad            |
//! | joint velocities    | N      | rad/s          |
//! | command             | C      | m/s, m/s, rad/s|
//! | previous action     | N      | policy units   |

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Quaternion, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::actuator::{self, ActuatorSpec, ActuatorState, ControlCommand, OutputLoad};
use crate::fieldbus::{self, BusConfig, JointFeedback, JointWire};
use crate::{Error, Result};

pub const ROBOT_SCHEMA_VERSION: u32 = 1;
pub const POLICY_FORMAT: &str = "cycloid-mlp";
pub const POLICY_VERSION: u32 = 1;
pub const DEFAULT_ACTION_SCALE: f64 = 0.25;
/// Ratio of measured joint torque to the actuator limit that the policy is
/// expected to stay under during normal operation.
pub const TORQUE_HEADROOM: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopTiming {
    #[serde(default = "default_low_rate")]
    pub low_rate_hz: f64,
    #[serde(default = "default_policy_rate")]
    pub policy_rate_hz: f64,
}

fn default_low_rate() -> f64 {
    250.0
}
fn default_policy_rate() -> f64 {
    25.0
}

impl Default for LoopTiming {
    fn default() -> Self {
        Self {
            low_rate_hz: default_low_rate(),
            policy_rate_hz: default_policy_rate(),
        }
    }
}

fn integer_ratio(num: f64, den: f64) -> Option<u32> {
    if !(num > 0.0 && den > 0.0) {
        return None;
    }
    let r = num / den;
    let n = r.round();
    ((r - n).abs() < 1e-9 && n >= 1.0).then_some(n as u32)
}

impl LoopTiming {
    pub fn decimation(&self) -> Result<u32> {
        integer_ratio(self.low_rate_hz, self.policy_rate_hz).ok_or_else(|| {
            Error::config(format!(
                "low-level rate {} Hz is not an integer multiple of policy rate {} Hz",
                self.low_rate_hz, self.policy_rate_hz
            ))
        })
    }

    /// Number of low-level ticks in `duration` seconds.
    pub fn ticks(&self, duration: f64) -> usize {
        // The epsilon absorbs products like 0.7 * 250 landing just below an integer.
        (duration * self.low_rate_hz + 1e-9).floor().max(0.0) as usize
    }
}

/// World gravity direction (0, 0, -1) expressed in the base frame of an IMU
/// with the given orientation (w, x, y, z), base-to-world.
pub fn projected_gravity(wxyz: [f64; 4]) -> Result<Vector3<f64>> {
    let q = Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
    let norm = q.norm();
    if !((norm - 1.0).abs() <= 1e-3) {
        return Err(Error::arg(format!("IMU quaternion norm {norm} is not 1")));
    }
    let r = UnitQuaternion::from_quaternion(q);
    Ok(r.inverse_transform_vector(&Vector3::new(0.0, 0.0, -1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImuSample {
    #[serde(default)]
    pub angular_velocity: [f64; 3],
    #[serde(default = "identity_wxyz")]
    pub orientation_wxyz: [f64; 4],
}

fn identity_wxyz() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

impl ImuSample {
    pub fn level() -> Self {
        Self {
            angular_velocity: [0.0; 3],
            orientation_wxyz: identity_wxyz(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationLayout {
    pub joint_names: Vec<String>,
    pub command_dim: usize,
}

impl ObservationLayout {
    pub fn new(joint_names: Vec<String>, command_dim: usize) -> Self {
        Self {
            joint_names,
            command_dim,
        }
    }

    pub fn joints(&self) -> usize {
        self.joint_names.len()
    }

    pub fn len(&self) -> usize {
        6 + 3 * self.joints() + self.command_dim
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Canonical text form of the layout. Joint order is part of it, so a
    /// permuted joint list yields a different hash.
    pub fn descriptor(&self) -> String {
        let n = self.joints();
        let names = self.joint_names.join(",");
        format!(
            "observation v1\nbase_ang_vel 3\nprojected_gravity 3\njoint_pos {n} {names}\n\
             joint_vel {n} {names}\ncommand {}\nprev_action {n} {names}\n",
            self.command_dim
        )
    }

    /// Hex SHA-256 of [`Self::descriptor`].
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.descriptor().as_bytes()))
    }
}

pub fn assemble_observation(
    layout: &ObservationLayout,
    imu: &ImuSample,
    joints: &[JointFeedback],
    command: &[f64],
    prev_action: &[f64],
) -> Result<Vec<f64>> {
    let n = layout.joints();
    let check = |context, got| {
        if got != n {
            Err(Error::Dimension { context, expected: n, got })
        } else {
            Ok(())
        }
    };
    check("joint states", joints.len())?;
    check("previous action", prev_action.len())?;
    if command.len() != layout.command_dim {
        return Err(Error::Dimension {
            context: "command",
            expected: layout.command_dim,
            got: command.len(),
        });
    }
    let g = projected_gravity(imu.orientation_wxyz)?;
    let mut obs = Vec::with_capacity(layout.len());
    obs.extend_from_slice(&imu.angular_velocity);
    obs.extend(g.iter());
    obs.extend(joints.iter().map(|j| j.position));
    obs.extend(joints.iter().map(|j| j.velocity));
    obs.extend_from_slice(command);
    obs.extend_from_slice(prev_action);
    Ok(obs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Elu,
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyHeader {
    format: String,
    version: u32,
    dims: Vec<usize>,
    #[serde(default)]
    activations: Vec<Activation>,
    #[serde(default = "default_action_scale")]
    action_scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    obs_scale: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    layout_hash: Option<String>,
}

fn default_action_scale() -> f64 {
    DEFAULT_ACTION_SCALE
}

/// Dense feed-forward policy. Hidden layers use the listed activations; the
/// output layer is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpPolicy {
    dims: Vec<usize>,
    weights: Vec<DMatrix<f64>>,
    biases: Vec<DVector<f64>>,
    activations: Vec<Activation>,
    pub action_scale: f64,
    pub obs_scale: Option<Vec<f64>>,
    pub layout_hash: Option<String>,
}

impl MlpPolicy {
    /// `weights[i]` is `dims[i+1] x dims[i]`, row-major.
    pub fn new(
        dims: Vec<usize>,
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
        activations: Vec<Activation>,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::config("policy needs at least input and output dims"));
        }
        let layers = dims.len() - 1;
        if weights.len() != layers || biases.len() != layers {
            return Err(Error::config(format!(
                "policy with {layers} layers has {} weight and {} bias arrays",
                weights.len(),
                biases.len()
            )));
        }
        if activations.len() != layers - 1 {
            return Err(Error::config(format!(
                "policy with {} hidden layers lists {} activations",
                layers - 1,
                activations.len()
            )));
        }
        let mut ws = Vec::with_capacity(layers);
        let mut bs = Vec::with_capacity(layers);
        for (i, (w, b)) in weights.into_iter().zip(biases).enumerate() {
            let (rows, cols) = (dims[i + 1], dims[i]);
            if w.len() != rows * cols {
                return Err(Error::Dimension {
                    context: "policy weights",
                    expected: rows * cols,
                    got: w.len(),
                });
            }
            if b.len() != rows {
                return Err(Error::Dimension {
                    context: "policy biases",
                    expected: rows,
                    got: b.len(),
                });
            }
            if w.iter().chain(&b).any(|x| !x.is_finite()) {
                return Err(Error::config(format!("layer {i} has non-finite parameters")));
            }
            ws.push(DMatrix::from_row_slice(rows, cols, &w));
            bs.push(DVector::from_vec(b));
        }
        Ok(Self {
            dims,
            weights: ws,
            biases: bs,
            activations,
            action_scale: DEFAULT_ACTION_SCALE,
            obs_scale: None,
            layout_hash: None,
        })
    }

    pub fn zeros(dims: Vec<usize>, activation: Activation) -> Self {
        let layers = dims.len() - 1;
        let weights = (0..layers).map(|i| vec![0.0; dims[i] * dims[i + 1]]).collect();
        let biases = (0..layers).map(|i| vec![0.0; dims[i + 1]]).collect();
        Self::new(dims, weights, biases, vec![activation; layers - 1]).expect("zero policy is well formed")
    }

    /// Uniform weights in ±`gain`/sqrt(fan_in), uniform biases in ±`gain`·0.1.
    pub fn random(dims: Vec<usize>, activation: Activation, gain: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims.len() - 1;
        let mut weights = Vec::with_capacity(layers);
        let mut biases = Vec::with_capacity(layers);
        for i in 0..layers {
            let bound = gain / (dims[i].max(1) as f64).sqrt();
            weights.push((0..dims[i] * dims[i + 1]).map(|_| rng.random_range(-bound..=bound)).collect());
            biases.push((0..dims[i + 1]).map(|_| rng.random_range(-0.1..=0.1) * gain).collect());
        }
        Self::new(dims, weights, biases, vec![activation; layers - 1]).expect("random policy is well formed")
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    /// Row-major weights of layer `i`.
    pub fn layer_weights(&self, i: usize) -> Vec<f64> {
        self.weights[i].transpose().as_slice().to_vec()
    }

    pub fn layer_bias(&self, i: usize) -> &[f64] {
        self.biases[i].as_slice()
    }

    pub fn infer(&self, obs: &[f64]) -> Result<Vec<f64>> {
        if obs.len() != self.input_dim() {
            return Err(Error::Dimension {
                context: "policy input",
                expected: self.input_dim(),
                got: obs.len(),
            });
        }
        let mut x = DVector::from_column_slice(obs);
        if let Some(scale) = &self.obs_scale {
            x.iter_mut().zip(scale).for_each(|(v, s)| *v *= s);
        }
        let last = self.weights.len() - 1;
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            x = w * x + b;
            if i < last {
                let act = self.activations[i];
                x.apply(|v| *v = act.apply(*v));
            }
        }
        Ok(x.as_slice().to_vec())
    }

    /// Checks the policy against an observation layout and joint count.
    pub fn check_layout(&self, layout: &ObservationLayout) -> Result<()> {
        if self.input_dim() != layout.len() {
            return Err(Error::Dimension {
                context: "policy input vs observation layout",
                expected: layout.len(),
                got: self.input_dim(),
            });
        }
        if self.output_dim() != layout.joints() {
            return Err(Error::Dimension {
                context: "policy output vs joint count",
                expected: layout.joints(),
                got: self.output_dim(),
            });
        }
        if let Some(h) = &self.layout_hash {
            let expected = layout.hash();
            if *h != expected {
                return Err(Error::config(format!(
                    "policy layout hash {h} does not match robot observation layout {expected}"
                )));
            }
        }
        Ok(())
    }

    /// Parses the policy text format: a TOML header, a line holding `---`,
    /// then whitespace-separated numbers in the order W0, b0, W1, b1, ...
    /// with each W row-major.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut header = String::new();
        let mut body = None;
        let mut lines = text.split_inclusive('\n');
        for line in lines.by_ref() {
            if line.trim() == "---" {
                body = Some(lines.collect::<String>());
                break;
            }
            header.push_str(line);
        }
        let body = body.ok_or_else(|| Error::config("policy file has no `---` separator"))?;
        let h: PolicyHeader = toml::from_str(&header)?;
        if h.format != POLICY_FORMAT || h.version != POLICY_VERSION {
            return Err(Error::config(format!(
                "expected policy format `{POLICY_FORMAT}` v{POLICY_VERSION}, found `{}` v{}",
                h.format, h.version
            )));
        }
        if h.dims.len() < 2 || h.dims.contains(&0) {
            return Err(Error::config("policy dims must list at least two positive sizes"));
        }
        if !(h.action_scale.is_finite()) {
            return Err(Error::config("action_scale must be finite"));
        }
        if let Some(s) = &h.obs_scale {
            if s.len() != h.dims[0] {
                return Err(Error::Dimension {
                    context: "obs_scale",
                    expected: h.dims[0],
                    got: s.len(),
                });
            }
        }
        let values = body
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| Error::config(format!("bad policy number `{t}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        let expected: usize = h.dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        if values.len() != expected {
            return Err(Error::Dimension {
                context: "policy parameter count",
                expected,
                got: values.len(),
            });
        }
        let mut it = values.into_iter();
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in h.dims.windows(2) {
            weights.push(it.by_ref().take(w[0] * w[1]).collect());
            biases.push(it.by_ref().take(w[1]).collect());
        }
        let mut policy = Self::new(h.dims, weights, biases, h.activations)?;
        policy.action_scale = h.action_scale;
        policy.obs_scale = h.obs_scale;
        policy.layout_hash = h.layout_hash;
        Ok(policy)
    }

    pub fn to_text(&self) -> String {
        let header = PolicyHeader {
            format: POLICY_FORMAT.into(),
            version: POLICY_VERSION,
            dims: self.dims.clone(),
            activations: self.activations.clone(),
            action_scale: self.action_scale,
            obs_scale: self.obs_scale.clone(),
            layout_hash: self.layout_hash.clone(),
        };
        let mut out = toml::to_string(&header).expect("policy header serializes");
        out.push_str("---\n");
        for i in 0..self.weights.len() {
            for row in self.layer_weights(i).chunks(self.dims[i].max(1)) {
                push_numbers(&mut out, row);
            }
            push_numbers(&mut out, self.layer_bias(i));
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

fn push_numbers(out: &mut String, xs: &[f64]) {
    let line: Vec<String> = xs.iter().map(|x| format!("{x:?}")).collect();
    out.push_str(&line.join(" "));
    out.push('\n');
}

/// Mechanical load seen by a joint's output, besides the actuator's own
/// output inertia.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum JointLoad {
    /// Extra inertia with a constant external torque.
    Free {
        #[serde(default)]
        inertia: f64,
        #[serde(default)]
        torque: f64,
    },
    /// Extra inertia tied to the joint's default position by a spring-damper.
    Spring {
        #[serde(default)]
        inertia: f64,
        stiffness: f64,
        #[serde(default)]
        damping: f64,
    },
    Locked,
}

impl Default for JointLoad {
    fn default() -> Self {
        JointLoad::Free {
            inertia: 0.0,
            torque: 0.0,
        }
    }
}

impl JointLoad {
    fn validate(&self, joint: &str) -> Result<()> {
        let (inertia, extra) = match *self {
            JointLoad::Free { inertia, torque } => (inertia, torque.is_finite()),
            JointLoad::Spring {
                inertia,
                stiffness,
                damping,
            } => (inertia, stiffness >= 0.0 && damping >= 0.0),
            JointLoad::Locked => (0.0, true),
        };
        if !(inertia >= 0.0 && extra) {
            return Err(Error::config(format!("joint `{joint}`: invalid load parameters")));
        }
        Ok(())
    }

    fn output_load(&self, spec: &ActuatorSpec, state: &ActuatorState, rest: f64) -> OutputLoad {
        match *self {
            JointLoad::Free { inertia, torque } => OutputLoad::Free {
                inertia: spec.output_inertia + inertia,
                torque,
            },
            JointLoad::Spring {
                inertia,
                stiffness,
                damping,
            } => OutputLoad::Free {
                inertia: spec.output_inertia + inertia,
                torque: -stiffness * (state.output_angle() - rest) - damping * state.output_velocity,
            },
            JointLoad::Locked => OutputLoad::LOCKED,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointSetup {
    pub name: String,
    /// Preset name or path to an actuator config, relative to the robot config.
    pub actuator: String,
    pub bus: String,
    pub node: u8,
    #[serde(default)]
    pub default_position: f64,
    #[serde(default)]
    pub load: JointLoad,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusSetup {
    pub name: String,
    #[serde(default = "default_bitrate")]
    pub bitrate: f64,
}

fn default_bitrate() -> f64 {
    fieldbus::DEFAULT_BITRATE
}

fn default_command_dim() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotConfig {
    pub schema_version: u32,
    pub kind: String,
    pub name: String,
    #[serde(default)]
    pub timing: LoopTiming,
    #[serde(default = "default_command_dim")]
    pub command_dim: usize,
    #[serde(default = "ImuSample::level")]
    pub imu: ImuSample,
    pub buses: Vec<BusSetup>,
    pub joints: Vec<JointSetup>,
}

impl RobotConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RobotConfig = toml::from_str(text)?;
        if cfg.schema_version != ROBOT_SCHEMA_VERSION || cfg.kind != "robot" {
            return Err(Error::config(format!(
                "expected kind `robot` schema_version {ROBOT_SCHEMA_VERSION}, found `{}` v{}",
                cfg.kind, cfg.schema_version
            )));
        }
        Ok(cfg)
    }
}

/// A robot config with actuators resolved and buses checked.
#[derive(Debug, Clone)]
pub struct Robot {
    pub name: String,
    pub timing: LoopTiming,
    pub imu: ImuSample,
    pub joints: Vec<RobotJoint>,
    pub buses: Vec<BusConfig>,
    command_dim: usize,
}

#[derive(Debug, Clone)]
pub struct RobotJoint {
    pub name: String,
    pub spec: ActuatorSpec,
    pub wire: JointWire,
    pub bus: usize,
    pub node: u8,
    pub default_position: f64,
    pub load: JointLoad,
}

impl Robot {
    /// Resolves actuator references relative to `base_dir`.
    pub fn from_config(cfg: &RobotConfig, base_dir: &Path) -> Result<Self> {
        cfg.timing.decimation()?;
        let mut bus_index = BTreeMap::new();
        for (i, b) in cfg.buses.iter().enumerate() {
            if bus_index.insert(b.name.clone(), i).is_some() {
                return Err(Error::config(format!("duplicate bus `{}`", b.name)));
            }
        }
        let mut buses: Vec<BusConfig> = cfg
            .buses
            .iter()
            .map(|b| BusConfig {
                name: b.name.clone(),
                bitrate: b.bitrate,
                devices: Vec::new(),
                cycle_rate_hz: cfg.timing.low_rate_hz,
                frames_per_device: fieldbus::DEFAULT_FRAMES_PER_DEVICE,
            })
            .collect();
        let mut names = HashSet::new();
        let mut cache: BTreeMap<&str, ActuatorSpec> = BTreeMap::new();
        let mut joints = Vec::with_capacity(cfg.joints.len());
        for j in &cfg.joints {
            if !names.insert(j.name.as_str()) {
                return Err(Error::InvalidJoint {
                    joint: j.name.clone(),
                    reason: "duplicate joint name".into(),
                });
            }
            let bus = *bus_index.get(&j.bus).ok_or_else(|| Error::InvalidJoint {
                joint: j.name.clone(),
                reason: format!("unknown bus `{}`", j.bus),
            })?;
            buses[bus].devices.push(j.node);
            j.load.validate(&j.name)?;
            let spec = match cache.get(j.actuator.as_str()) {
                Some(s) => s.clone(),
                None => {
                    let spec = match ActuatorSpec::preset(&j.actuator) {
                        Some(s) => s,
                        None => ActuatorSpec::from_toml(&std::fs::read_to_string(base_dir.join(&j.actuator))?)?,
                    };
                    cache.insert(&j.actuator, spec.clone());
                    spec
                }
            };
            if integer_ratio(spec.inner_rate_hz, cfg.timing.low_rate_hz).is_none() {
                return Err(Error::InvalidJoint {
                    joint: j.name.clone(),
                    reason: format!(
                        "actuator inner rate {} Hz is not a multiple of the {} Hz loop",
                        spec.inner_rate_hz, cfg.timing.low_rate_hz
                    ),
                });
            }
            joints.push(RobotJoint {
                name: j.name.clone(),
                wire: JointWire::new(spec.torque_limit),
                spec,
                bus,
                node: j.node,
                default_position: j.default_position,
                load: j.load,
            });
        }
        for b in &buses {
            b.validate()?;
        }
        Ok(Self {
            name: cfg.name.clone(),
            timing: cfg.timing,
            imu: cfg.imu,
            joints,
            buses,
            command_dim: cfg.command_dim,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let cfg = RobotConfig::from_toml(&std::fs::read_to_string(path)?)?;
        Self::from_config(&cfg, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn layout(&self) -> ObservationLayout {
        ObservationLayout::new(self.joints.iter().map(|j| j.name.clone()).collect(), self.command_dim)
    }

    pub fn command_dim(&self) -> usize {
        self.command_dim
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusReport {
    pub name: String,
    pub devices: usize,
    pub worst_case_utilization: f64,
    /// Highest per-tick utilization from the actually stuffed frames sent.
    pub peak_utilization: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickRecord {
    pub tick: usize,
    pub time: f64,
    pub policy_tick: bool,
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    pub torque: Vec<f64>,
    pub setpoint: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopLog {
    pub joint_names: Vec<String>,
    pub decimation: u32,
    pub layout_hash: String,
    pub ticks: Vec<TickRecord>,
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub buses: Vec<BusReport>,
    /// Per joint, max |applied output torque| / torque limit over the run.
    pub torque_ratio: Vec<f64>,
    /// Commands or feedback values clamped by the wire ranges.
    pub clamp_events: usize,
}

impl LoopLog {
    pub fn low_level_ticks(&self) -> usize {
        self.ticks.len()
    }

    pub fn policy_ticks(&self) -> usize {
        self.actions.len()
    }

    pub fn max_torque_ratio(&self) -> f64 {
        self.torque_ratio.iter().copied().fold(0.0, f64::max)
    }

    pub fn within_torque_headroom(&self) -> bool {
        self.max_torque_ratio() <= TORQUE_HEADROOM
    }

    /// Columns: `tick,time_s,policy_tick`, then per joint
    /// `q_<j>,qd_<j>,tau_<j>,qdes_<j>`.
    pub fn trajectory_csv(&self) -> String {
        let mut out = String::from("tick,time_s,policy_tick");
        for n in &self.joint_names {
            write!(out, ",q_{n},qd_{n},tau_{n},qdes_{n}").unwrap();
        }
        out.push('\n');
        for r in &self.ticks {
            write!(out, "{},{:?},{}", r.tick, r.time, r.policy_tick as u8).unwrap();
            for j in 0..self.joint_names.len() {
                write!(
                    out,
                    ",{:?},{:?},{:?},{:?}",
                    r.position[j], r.velocity[j], r.torque[j], r.setpoint[j]
                )
                .unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// One row per policy tick: `policy_tick,obs_0..,act_0..`.
    pub fn policy_csv(&self) -> String {
        let mut out = String::from("policy_tick");
        if let (Some(o), Some(a)) = (self.observations.first(), self.actions.first()) {
            (0..o.len()).for_each(|i| write!(out, ",obs_{i}").unwrap());
            (0..a.len()).for_each(|i| write!(out, ",act_{i}").unwrap());
        }
        out.push('\n');
        for (k, (o, a)) in self.observations.iter().zip(&self.actions).enumerate() {
            write!(out, "{k}").unwrap();
            o.iter().chain(a).for_each(|x| write!(out, ",{x:?}").unwrap());
            out.push('\n');
        }
        out
    }
}

/// Runs the two-rate loop on a simulated clock for `duration` seconds with a
/// constant velocity command.
///
/// Each low-level tick polls feedback frames, and on every `decimation`-th
/// tick (ticks `decimation-1`, `2*decimation-1`, ...) assembles an
/// observation and runs the policy. Every tick then sends position commands
/// holding the latest action and advances each actuator through its inner
/// loop substeps. Commands and feedback pass through the CAN codec.
pub fn run_loop(robot: &Robot, policy: &MlpPolicy, command: &[f64], duration: f64) -> Result<LoopLog> {
    let decimation = robot.timing.decimation()? as usize;
    let layout = robot.layout();
    policy.check_layout(&layout)?;
    if command.len() != robot.command_dim {
        return Err(Error::Dimension {
            context: "velocity command",
            expected: robot.command_dim,
            got: command.len(),
        });
    }
    if !(duration >= 0.0 && duration.is_finite()) {
        return Err(Error::arg("duration must be a finite non-negative number"));
    }
    let mut reports = Vec::with_capacity(robot.buses.len());
    for bus in &robot.buses {
        let f = fieldbus::require_feasible(bus)?;
        reports.push(BusReport {
            name: bus.name.clone(),
            devices: bus.devices.len(),
            worst_case_utilization: f.utilization,
            peak_utilization: 0.0,
        });
    }

    let n = robot.joints.len();
    let dt_low = 1.0 / robot.timing.low_rate_hz;
    let mut states: Vec<ActuatorState> = robot
        .joints
        .iter()
        .map(|j| ActuatorState::at_rest(&j.spec, j.default_position))
        .collect();
    let substeps: Vec<usize> = robot
        .joints
        .iter()
        .map(|j| integer_ratio(j.spec.inner_rate_hz, robot.timing.low_rate_hz).unwrap() as usize)
        .collect();
    let mut setpoint: Vec<f64> = robot.joints.iter().map(|j| j.default_position).collect();
    let mut prev_action = vec![0.0; n];
    let mut torque_ratio = vec![0.0f64; n];
    let mut clamp_events = 0;

    let total = robot.timing.ticks(duration);
    let mut log = LoopLog {
        joint_names: layout.joint_names.clone(),
        decimation: decimation as u32,
        layout_hash: layout.hash(),
        ticks: Vec::with_capacity(total),
        observations: Vec::new(),
        actions: Vec::new(),
        buses: Vec::new(),
        torque_ratio: Vec::new(),
        clamp_events: 0,
    };
    let mut bus_bits = vec![0u64; robot.buses.len()];

    for tick in 0..total {
        bus_bits.iter_mut().for_each(|b| *b = 0);
        let mut feedback = Vec::with_capacity(n);
        for (j, s) in robot.joints.iter().zip(&states) {
            let sample = JointFeedback {
                position: s.encoder_output_angle(&j.spec),
                velocity: s.output_velocity,
                torque: s.mesh_torque,
            };
            let (frame, flags) = fieldbus::encode_feedback(j.node, &sample, &j.wire)?;
            clamp_events += flags.any() as usize;
            bus_bits[j.bus] += fieldbus::stuffed_bit_length(&frame) as u64;
            feedback.push(fieldbus::decode_feedback(&frame, &j.wire)?.1);
        }

        let policy_tick = (tick + 1) % decimation == 0;
        if policy_tick {
            let obs = assemble_observation(&layout, &robot.imu, &feedback, command, &prev_action)?;
            let action = policy.infer(&obs)?;
            for (i, j) in robot.joints.iter().enumerate() {
                setpoint[i] = j.default_position + policy.action_scale * action[i];
            }
            prev_action.clone_from(&action);
            log.observations.push(obs);
            log.actions.push(action);
        }

        let mut torque = vec![0.0; n];
        for (i, j) in robot.joints.iter().enumerate() {
            let gains = j.spec.controller;
            let cmd = ControlCommand::position(setpoint[i], gains.kp, gains.kd);
            let enc = fieldbus::encode_command(j.node, &cmd, &j.wire)?;
            clamp_events += enc.clamped.any() as usize;
            bus_bits[j.bus] += fieldbus::stuffed_bit_length(&enc.frame) as u64;
            let received = fieldbus::decode_command(&enc.frame, &j.wire)?.1.to_control();
            let dt = dt_low / substeps[i] as f64;
            let mut s = states[i];
            for _ in 0..substeps[i] {
                let load = j.load.output_load(&j.spec, &s, j.default_position);
                s = actuator::step_with_load(&j.spec, &s, &received, load, dt)?;
                torque_ratio[i] = torque_ratio[i].max(s.commanded_torque.abs() / j.spec.torque_limit);
            }
            torque[i] = s.commanded_torque;
            states[i] = s;
        }

        for (r, (bits, bus)) in reports.iter_mut().zip(bus_bits.iter().zip(&robot.buses)) {
            r.peak_utilization = r.peak_utilization.max(*bits as f64 * robot.timing.low_rate_hz / bus.bitrate);
        }
        log.ticks.push(TickRecord {
            tick,
            time: tick as f64 * dt_low,
            policy_tick,
            position: feedback.iter().map(|f| f.position).collect(),
            velocity: feedback.iter().map(|f| f.velocity).collect(),
            torque,
            setpoint: setpoint.clone(),
        });
    }
    log.buses = reports;
    log.torque_ratio = torque_ratio;
    log.clamp_events = clamp_events;
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn two_joint_robot(load: JointLoad) -> Robot {
        let cfg = RobotConfig {
            schema_version: 1,
            kind: "robot".into(),
            name: "pair".into(),
            timing: LoopTiming::default(),
            command_dim: 3,
            imu: ImuSample::level(),
            buses: vec![BusSetup {
                name: "can0".into(),
                bitrate: 1e6,
            }],
            joints: ["hip", "knee"]
                .iter()
                .enumerate()
                .map(|(i, n)| JointSetup {
                    name: n.to_string(),
                    actuator: "6512".into(),
                    bus: "can0".into(),
                    node: i as u8 + 1,
                    default_position: 0.3 * i as f64,
                    load,
                })
                .collect(),
        };
        Robot::from_config(&cfg, Path::new(".")).unwrap()
    }

    #[test]
    fn gravity_examples() {
        let g = projected_gravity([1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(g, Vector3::new(0.0, 0.0, -1.0));
        let h = FRAC_PI_2 / 2.0;
        let g = projected_gravity([h.cos(), 0.0, h.sin(), 0.0]).unwrap();
        assert!((g - Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
        assert!(projected_gravity([1.1, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn observation_layout() {
        let layout = ObservationLayout::new(vec!["hip".into(), "knee".into()], 3);
        let joints = [JointFeedback::default(); 2];
        let obs = assemble_observation(&layout, &ImuSample::level(), &joints, &[0.0; 3], &[0.0; 2]).unwrap();
        let mut expected = vec![0.0; 15];
        expected[5] = -1.0;
        assert_eq!(obs, expected);
        assert!(assemble_observation(&layout, &ImuSample::level(), &joints[..1], &[0.0; 3], &[0.0; 2]).is_err());

        let names: Vec<String> = (0..22).map(|i| format!("j{i}")).collect();
        assert_eq!(ObservationLayout::new(names, 3).len(), 75);
    }

    #[test]
    fn layout_hash_golden() {
        let a = ObservationLayout::new(vec!["hip".into(), "knee".into()], 3);
        let b = ObservationLayout::new(vec!["knee".into(), "hip".into()], 3);
        assert_eq!(a.hash(), "886961c57ef046b14e77c1553253bde6fda794df5088ac660e7c75294f361670");
        assert_eq!(b.hash(), "14a86d351bf6bb1703398b356716c9ee1e219904c7d747a9d8d100886f7b5e28");
    }

    #[test]
    fn zero_and_identity_policies() {
        let p = MlpPolicy::zeros(vec![5, 8, 3], Activation::Elu);
        assert_eq!(p.infer(&[1.0; 5]).unwrap(), vec![0.0; 3]);
        let mut w = vec![0.0; 16];
        (0..4).for_each(|i| w[i * 4 + i] = 1.0);
        let p = MlpPolicy::new(vec![4, 4], vec![w], vec![vec![0.0; 4]], vec![]).unwrap();
        assert_eq!(p.infer(&[1.0, -2.0, 3.0, 0.5]).unwrap(), vec![1.0, -2.0, 3.0, 0.5]);
        assert!(p.infer(&[1.0]).is_err());
    }

    #[test]
    fn policy_text_round_trip() {
        let mut p = MlpPolicy::random(vec![6, 5, 4, 2], Activation::Tanh, 1.0, 9);
        p.obs_scale = Some(vec![0.5; 6]);
        p.layout_hash = Some("abc".into());
        let back = MlpPolicy::from_text(&p.to_text()).unwrap();
        assert_eq!(back, p);
        assert!(MlpPolicy::from_text("format = \"cycloid-mlp\"\nversion = 1\ndims = [2, 1]\n").is_err());
        let short = "format = \"cycloid-mlp\"\nversion = 1\ndims = [2, 1]\n---\n1 2\n";
        assert!(matches!(MlpPolicy::from_text(short), Err(Error::Dimension { .. })));
    }

    #[test]
    fn decimation_rules() {
        assert_eq!(LoopTiming::default().decimation().unwrap(), 10);
        let t = LoopTiming {
            low_rate_hz: 250.0,
            policy_rate_hz: 30.0,
        };
        assert!(t.decimation().is_err());
    }

    #[test]
    fn one_second_tick_counts_and_hold() {
        let robot = two_joint_robot(JointLoad::default());
        let policy = MlpPolicy::random(vec![15, 8, 2], Activation::Elu, 0.5, 3);
        let log = run_loop(&robot, &policy, &[0.2, 0.0, 0.0], 1.0).unwrap();
        assert_eq!(log.low_level_ticks(), 250);
        assert_eq!(log.policy_ticks(), 25);
        for w in log.ticks.windows(2) {
            if !w[1].policy_tick {
                assert_eq!(w[0].setpoint, w[1].setpoint);
            }
        }
    }

    #[test]
    fn zero_policy_holds_pose() {
        let robot = two_joint_robot(JointLoad::Spring {
            inertia: 0.02,
            stiffness: 2.0,
            damping: 0.05,
        });
        let policy = MlpPolicy::zeros(vec![15, 2], Activation::Identity);
        let log = run_loop(&robot, &policy, &[0.0; 3], 2.0).unwrap();
        for (i, j) in robot.joints.iter().enumerate() {
            let bound = j.spec.transmission.backlash + j.spec.output_lsb();
            for r in &log.ticks {
                assert!((r.position[i] - j.default_position).abs() <= bound);
            }
        }
        assert!(log.within_torque_headroom());
    }

    #[test]
    fn infeasible_bus_rejected() {
        let mut robot = two_joint_robot(JointLoad::default());
        robot.buses[0].bitrate = 50_000.0;
        let policy = MlpPolicy::zeros(vec![15, 2], Activation::Identity);
        assert!(matches!(
            run_loop(&robot, &policy, &[0.0; 3], 0.1),
            Err(Error::BusInfeasible { .. })
        ));
    }

    #[test]
    fn loop_is_deterministic() {
        let robot = two_joint_robot(JointLoad::Locked);
        let policy = MlpPolicy::random(vec![15, 2], Activation::Identity, 1.0, 4);
        let a = run_loop(&robot, &policy, &[0.1, 0.0, 0.2], 0.5).unwrap();
        let b = run_loop(&robot, &policy, &[0.1, 0.0, 0.2], 0.5).unwrap();
        assert_eq!(a.trajectory_csv(), b.trajectory_csv());
        assert_eq!(a.policy_csv(), b.policy_csv());
    }

    proptest::proptest! {
        #[test]
        fn text_round_trip_any_shape(
            dims in proptest::collection::vec(1usize..12, 2..5),
            act in 0usize..4,
            gain in 0.01f64..3.0,
            seed in 0u64..1000,
        ) {
            let acts = [Activation::Elu, Activation::Relu, Activation::Tanh, Activation::Identity];
            let p = MlpPolicy::random(dims, acts[act], gain, seed);
            proptest::prop_assert_eq!(MlpPolicy::from_text(&p.to_text()).unwrap(), p);
        }
    }
}
