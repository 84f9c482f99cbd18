//! Teleoperation: clutch-based retargeting of controller poses onto the end
//! effector, damped least-squares IK, and replay of recorded pose streams.
//!
//! Both operator modes go through [`retarget`]. Headless mode uses the
//! identity frame alignment (controller deltas are global), VR mode rotates
//! deltas from the user's local frame into the robot base frame.

use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::kinematics::{KinematicChain, Pose};
use crate::{Error, Result};

pub const POSE_STREAM_HEADER: [&str; 10] = ["t", "px", "py", "pz", "qw", "qx", "qy", "qz", "clutch", "gripper"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IkParams {
    #[serde(default = "d_damping")]
    pub damping: f64,
    /// Largest joint motion allowed in one step (rad).
    #[serde(default = "d_max_step")]
    pub max_step: f64,
    #[serde(default = "d_pos_w")]
    pub position_weight: f64,
    #[serde(default = "d_ori_w")]
    pub orientation_weight: f64,
    #[serde(default = "d_pos_tol")]
    pub position_tolerance: f64,
    #[serde(default = "d_ori_tol")]
    pub orientation_tolerance: f64,
    /// IK steps per replay tick.
    #[serde(default = "d_iters")]
    pub max_iterations: usize,
    /// Weighted-Jacobian condition number above which a step is flagged singular.
    #[serde(default = "d_cond")]
    pub singular_condition: f64,
}

fn d_damping() -> f64 {
    1e-3
}
fn d_max_step() -> f64 {
    0.05
}
fn d_pos_w() -> f64 {
    1.0
}
fn d_ori_w() -> f64 {
    0.5
}
fn d_pos_tol() -> f64 {
    1e-4
}
fn d_ori_tol() -> f64 {
    1e-3
}
fn d_iters() -> usize {
    1
}
fn d_cond() -> f64 {
    1e3
}

impl Default for IkParams {
    fn default() -> Self {
        Self {
            damping: d_damping(),
            max_step: d_max_step(),
            position_weight: d_pos_w(),
            orientation_weight: d_ori_w(),
            position_tolerance: d_pos_tol(),
            orientation_tolerance: d_ori_tol(),
            max_iterations: d_iters(),
            singular_condition: d_cond(),
        }
    }
}

impl IkParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0) {
            return Err(Error::config("IK damping must be > 0"));
        }
        if !(self.max_step > 0.0) {
            return Err(Error::config("IK step cap must be > 0"));
        }
        if !(self.position_weight >= 0.0 && self.orientation_weight >= 0.0) {
            return Err(Error::config("IK weights must be >= 0"));
        }
        if self.max_iterations == 0 {
            return Err(Error::config("IK needs at least one iteration per tick"));
        }
        Ok(())
    }

    fn weights(&self) -> Vector6<f64> {
        let (p, o) = (self.position_weight, self.orientation_weight);
        Vector6::new(p, p, p, o, o, o)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IkStep {
    pub dq: Vec<f64>,
    /// Weighted pose error norm before the step.
    pub error_norm: f64,
    pub condition: f64,
    pub singular: bool,
}

/// Weighted 6-vector pose error from the current end effector to `target`.
pub fn weighted_error(chain: &KinematicChain, q: &[f64], target: &Pose, params: &IkParams) -> Result<Vector6<f64>> {
    let e = chain.forward_kinematics(q)?.error_to(target);
    Ok(e.component_mul(&params.weights()))
}

/// One damped least-squares step `dq = Jᵀ(JJᵀ + λ²I)⁻¹e` on the weighted
/// Jacobian and error. The step is scaled down uniformly until no joint moves
/// more than the cap, then clamped so `q + dq` respects the joint limits.
pub fn ik_step(chain: &KinematicChain, q: &[f64], target: &Pose, params: &IkParams) -> Result<IkStep> {
    let w = params.weights();
    let e = weighted_error(chain, q, target, params)?;
    let n = chain.dof();
    if n == 0 {
        return Ok(IkStep {
            dq: Vec::new(),
            error_norm: e.norm(),
            condition: f64::INFINITY,
            singular: true,
        });
    }
    let mut jac = chain.jacobian(q)?;
    for (r, wr) in w.iter().enumerate() {
        jac.row_mut(r).scale_mut(*wr);
    }
    let lambda2 = params.damping * params.damping;
    let jjt = &jac * jac.transpose() + DMatrix::identity(6, 6) * lambda2;
    let ev = DVector::from_column_slice(e.as_slice());
    let y = jjt
        .cholesky()
        .ok_or_else(|| Error::Procedure("damped normal matrix not positive definite".into()))?
        .solve(&ev);
    let mut dq = jac.transpose() * y;

    let biggest = dq.amax();
    if biggest > params.max_step {
        dq *= params.max_step / biggest;
    }
    let mut out: Vec<f64> = dq.iter().copied().collect();
    for ((d, qi), joint) in out.iter_mut().zip(q).zip(chain.joints()) {
        *d = joint.clamp(qi + *d) - qi;
    }

    let sv = jac.singular_values();
    let rank_dims = n.min(6);
    let mut svs: Vec<f64> = sv.iter().copied().collect();
    svs.sort_by(|a, b| b.total_cmp(a));
    let smin = svs[rank_dims - 1];
    let condition = if smin > 0.0 { svs[0] / smin } else { f64::INFINITY };
    Ok(IkStep {
        dq: out,
        error_norm: e.norm(),
        condition,
        singular: condition > params.singular_condition,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IkSolution {
    pub q: Vec<f64>,
    pub iterations: usize,
    pub position_error: f64,
    pub orientation_error: f64,
    pub converged: bool,
    pub singular: bool,
}

/// Iterates [`ik_step`] until both tolerances are met (orientation is ignored
/// when its weight is zero) or `max_iterations` is reached.
pub fn solve_ik(
    chain: &KinematicChain,
    q0: &[f64],
    target: &Pose,
    params: &IkParams,
    max_iterations: usize,
) -> Result<IkSolution> {
    let mut q = q0.to_vec();
    let mut singular = false;
    let done = |q: &[f64]| -> Result<(bool, f64, f64)> {
        let e = chain.forward_kinematics(q)?.error_to(target);
        let pe = e.fixed_rows::<3>(0).norm();
        let oe = e.fixed_rows::<3>(3).norm();
        let ok = pe <= params.position_tolerance
            && (params.orientation_weight == 0.0 || oe <= params.orientation_tolerance);
        Ok((ok, pe, oe))
    };
    let mut iterations = 0;
    let (mut ok, mut pe, mut oe) = done(&q)?;
    while !ok && iterations < max_iterations {
        let step = ik_step(chain, &q, target, params)?;
        singular |= step.singular;
        q.iter_mut().zip(&step.dq).for_each(|(qi, d)| *qi += d);
        iterations += 1;
        (ok, pe, oe) = done(&q)?;
    }
    Ok(IkSolution {
        q,
        iterations,
        position_error: pe,
        orientation_error: oe,
        converged: ok,
        singular,
    })
}

/// Rotation taking vectors from the operator's frame into the robot base frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameAlignment {
    /// Quaternion (w, x, y, z).
    pub rotation_wxyz: [f64; 4],
}

impl Default for FrameAlignment {
    fn default() -> Self {
        Self::identity()
    }
}

impl FrameAlignment {
    pub fn identity() -> Self {
        Self {
            rotation_wxyz: [1.0, 0.0, 0.0, 0.0],
        }
    }

    pub fn from_rotation(r: UnitQuaternion<f64>) -> Self {
        Self {
            rotation_wxyz: [r.w, r.i, r.j, r.k],
        }
    }

    pub fn rotation(&self) -> Result<UnitQuaternion<f64>> {
        Ok(Pose::from_wxyz(Vector3::zeros(), self.rotation_wxyz)?.orientation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TeleopMode {
    Headless,
    Vr,
}

impl std::str::FromStr for TeleopMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "headless" => Ok(TeleopMode::Headless),
            "vr" => Ok(TeleopMode::Vr),
            other => Err(Error::arg(format!("unknown teleop mode `{other}` (headless|vr)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClutchRefs {
    pub controller: Pose,
    pub end_effector: Pose,
}

/// References exist exactly while the clutch is engaged.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClutchState {
    refs: Option<ClutchRefs>,
}

impl ClutchState {
    pub fn engaged(&self) -> bool {
        self.refs.is_some()
    }

    pub fn refs(&self) -> Option<&ClutchRefs> {
        self.refs.as_ref()
    }

    pub fn engage(&mut self, controller: Pose, end_effector: Pose) {
        self.refs = Some(ClutchRefs {
            controller,
            end_effector,
        });
    }

    pub fn disengage(&mut self) {
        self.refs = None;
    }
}

/// Composes the controller's motion since engage onto the reference end
/// effector pose, with the delta rotated by `alignment`.
pub fn retarget(refs: &ClutchRefs, controller: &Pose, alignment: &UnitQuaternion<f64>) -> Pose {
    if *controller == refs.controller {
        return refs.end_effector;
    }
    let dp = alignment * (controller.position - refs.controller.position);
    let dr = alignment * (controller.orientation * refs.controller.orientation.inverse()) * alignment.inverse();
    Pose::new(
        refs.end_effector.position + dp,
        dr * refs.end_effector.orientation,
    )
}

/// Target in headless mode; `None` while the clutch is disengaged.
pub fn headless_target(clutch: &ClutchState, controller: &Pose) -> Option<Pose> {
    clutch
        .refs()
        .map(|r| retarget(r, controller, &UnitQuaternion::identity()))
}

/// Target in VR mode; `None` while the clutch is disengaged.
pub fn vr_target(clutch: &ClutchState, controller: &Pose, alignment: &FrameAlignment) -> Result<Option<Pose>> {
    let r = alignment.rotation()?;
    Ok(clutch.refs().map(|refs| retarget(refs, controller, &r)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseSample {
    pub t: f64,
    pub pose: Pose,
    pub clutch: bool,
    pub gripper: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PoseStream {
    samples: Vec<PoseSample>,
}

#[derive(Debug, Deserialize)]
struct PoseRow {
    t: f64,
    px: f64,
    py: f64,
    pz: f64,
    qw: f64,
    qx: f64,
    qy: f64,
    qz: f64,
    clutch: u8,
    gripper: f64,
}

impl PoseStream {
    pub fn new(samples: Vec<PoseSample>) -> Result<Self> {
        for w in samples.windows(2) {
            if !(w[1].t > w[0].t) {
                return Err(Error::Config(format!(
                    "pose stream timestamp regression: {} after {}",
                    w[1].t, w[0].t
                )));
            }
        }
        if let Some(s) = samples.iter().find(|s| !(0.0..=1.0).contains(&s.gripper)) {
            return Err(Error::config(format!("gripper fraction {} at t={} outside [0, 1]", s.gripper, s.t)));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[PoseSample] {
        &self.samples
    }

    /// Reads the CSV format with the exact header in [`POSE_STREAM_HEADER`].
    /// Quaternions within 1e-3 of unit norm are renormalized.
    pub fn from_csv_reader(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers().map_err(csv_err)?.clone();
        if header.iter().ne(POSE_STREAM_HEADER.iter().copied()) {
            return Err(Error::config(format!(
                "pose stream header must be `{}`",
                POSE_STREAM_HEADER.join(",")
            )));
        }
        let mut samples = Vec::new();
        for (i, row) in rdr.deserialize::<PoseRow>().enumerate() {
            let r = row.map_err(csv_err)?;
            let q = nalgebra::Quaternion::new(r.qw, r.qx, r.qy, r.qz);
            if !((q.norm() - 1.0).abs() <= 1e-3) {
                return Err(Error::config(format!("row {}: quaternion norm {} is not 1", i + 1, q.norm())));
            }
            if r.clutch > 1 {
                return Err(Error::config(format!("row {}: clutch must be 0 or 1", i + 1)));
            }
            samples.push(PoseSample {
                t: r.t,
                pose: Pose::new(Vector3::new(r.px, r.py, r.pz), UnitQuaternion::from_quaternion(q)),
                clutch: r.clutch == 1,
                gripper: r.gripper,
            });
        }
        Self::new(samples)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }

    pub fn to_csv(&self) -> String {
        let mut out = POSE_STREAM_HEADER.join(",");
        out.push('\n');
        for s in &self.samples {
            let [w, x, y, z] = s.pose.wxyz();
            let p = s.pose.position;
            writeln!(
                out,
                "{:?},{:?},{:?},{:?},{w:?},{x:?},{y:?},{z:?},{},{:?}",
                s.t, p.x, p.y, p.z, s.clutch as u8, s.gripper
            )
            .unwrap();
        }
        out
    }

    /// Controller tracing a square of side `side` in the plane spanned by
    /// `u` and `v`, starting at `origin` with fixed orientation. The clutch
    /// engages after `lead_in` seconds and stays engaged.
    pub fn square(
        origin: &Pose,
        u: Vector3<f64>,
        v: Vector3<f64>,
        side: f64,
        seconds_per_side: f64,
        rate_hz: f64,
        lead_in: f64,
    ) -> Result<Self> {
        let total = lead_in + 4.0 * seconds_per_side;
        let n = (total * rate_hz).round() as usize;
        let samples = (0..=n)
            .map(|k| {
                let t = k as f64 / rate_hz;
                let s = ((t - lead_in).max(0.0) / seconds_per_side).min(4.0);
                let (a, b) = match s {
                    s if s < 1.0 => (s, 0.0),
                    s if s < 2.0 => (1.0, s - 1.0),
                    s if s < 3.0 => (3.0 - s, 1.0),
                    s => (0.0, 4.0 - s),
                };
                PoseSample {
                    t,
                    pose: Pose::new(origin.position + (u * a + v * b) * side, origin.orientation),
                    clutch: t >= lead_in,
                    gripper: 0.0,
                }
            })
            .collect();
        Self::new(samples)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::config(format!("pose stream csv: {e}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayConfig {
    #[serde(default = "d_rate")]
    pub rate_hz: f64,
    #[serde(default)]
    pub ik: IkParams,
    #[serde(default)]
    pub alignment: FrameAlignment,
}

fn d_rate() -> f64 {
    250.0
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            rate_hz: d_rate(),
            ik: IkParams::default(),
            alignment: FrameAlignment::identity(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayTick {
    pub t: f64,
    pub engaged: bool,
    pub gripper: f64,
    pub singular: bool,
    pub target: Option<Pose>,
    /// End effector after this tick's IK update.
    pub end_effector: Pose,
    pub q: Vec<f64>,
    /// Pose error norm between the target and the end effector before the
    /// update, recorded on ticks where the clutch engages.
    pub engage_jump: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayLog {
    pub joint_names: Vec<String>,
    pub mode: TeleopMode,
    pub ticks: Vec<ReplayTick>,
}

impl ReplayLog {
    /// RMS position distance between target and end effector over engaged ticks.
    pub fn tracking_rms(&self) -> f64 {
        let (sum, n) = self
            .ticks
            .iter()
            .filter_map(|t| t.target.map(|g| (g.position - t.end_effector.position).norm_squared()))
            .fold((0.0, 0usize), |(s, n), d| (s + d, n + 1));
        if n == 0 {
            0.0
        } else {
            (sum / n as f64).sqrt()
        }
    }

    pub fn max_engage_jump(&self) -> f64 {
        self.ticks.iter().filter_map(|t| t.engage_jump).fold(0.0, f64::max)
    }

    /// Columns: `t,engaged,gripper,singular,target_x,target_y,target_z,ee_x,ee_y,ee_z`,
    /// then one column per joint. Target columns are empty while disengaged.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,engaged,gripper,singular,target_x,target_y,target_z,ee_x,ee_y,ee_z");
        for n in &self.joint_names {
            write!(out, ",{n}").unwrap();
        }
        out.push('\n');
        for t in &self.ticks {
            write!(out, "{:?},{},{:?},{}", t.t, t.engaged as u8, t.gripper, t.singular as u8).unwrap();
            match t.target {
                Some(g) => write!(out, ",{:?},{:?},{:?}", g.position.x, g.position.y, g.position.z).unwrap(),
                None => out.push_str(",,,"),
            }
            let e = t.end_effector.position;
            write!(out, ",{:?},{:?},{:?}", e.x, e.y, e.z).unwrap();
            t.q.iter().for_each(|q| write!(out, ",{q:?}").unwrap());
            out.push('\n');
        }
        out
    }
}

/// Replays a stream at `cfg.rate_hz`, sampling it by zero-order hold from the
/// first to the last timestamp. Each tick applies clutch logic, retargets,
/// runs `cfg.ik.max_iterations` IK steps and integrates the joints.
pub fn replay(
    stream: &PoseStream,
    mode: TeleopMode,
    chain: &KinematicChain,
    q0: &[f64],
    cfg: &ReplayConfig,
) -> Result<ReplayLog> {
    cfg.ik.validate()?;
    if !(cfg.rate_hz > 0.0) {
        return Err(Error::config("replay rate must be > 0"));
    }
    let alignment = match mode {
        TeleopMode::Headless => UnitQuaternion::identity(),
        TeleopMode::Vr => cfg.alignment.rotation()?,
    };
    let mut q = q0.to_vec();
    chain.forward_kinematics(&q)?;
    if let Some(i) = chain.limit_violations(&q).first() {
        return Err(Error::InvalidJoint {
            joint: chain.joints()[*i].name.clone(),
            reason: "initial position outside limits".into(),
        });
    }
    let samples = stream.samples();
    let mut log = ReplayLog {
        joint_names: chain.joint_names().map(str::to_string).collect(),
        mode,
        ticks: Vec::new(),
    };
    let (Some(first), Some(last)) = (samples.first(), samples.last()) else {
        return Ok(log);
    };
    let ticks = ((last.t - first.t) * cfg.rate_hz + 1e-9).floor() as usize + 1;
    let mut clutch = ClutchState::default();
    let mut idx = 0;
    for k in 0..ticks {
        let t = first.t + k as f64 / cfg.rate_hz;
        while idx + 1 < samples.len() && samples[idx + 1].t <= t + 1e-12 {
            idx += 1;
        }
        let s = &samples[idx];
        let ee_before = chain.forward_kinematics(&q)?;
        let was_engaged = clutch.engaged();
        if s.clutch && !was_engaged {
            clutch.engage(s.pose, ee_before);
        } else if !s.clutch {
            clutch.disengage();
        }
        let target = clutch.refs().map(|r| retarget(r, &s.pose, &alignment));
        let mut singular = false;
        let mut engage_jump = None;
        if let Some(goal) = target {
            if !was_engaged {
                engage_jump = Some(ee_before.error_to(&goal).norm());
            }
            for _ in 0..cfg.ik.max_iterations {
                let step = ik_step(chain, &q, &goal, &cfg.ik)?;
                singular |= step.singular;
                q.iter_mut().zip(&step.dq).for_each(|(qi, d)| *qi += d);
            }
        }
        log.ticks.push(ReplayTick {
            t,
            engaged: clutch.engaged(),
            gripper: s.gripper,
            singular,
            target,
            end_effector: chain.forward_kinematics(&q)?,
            q: q.clone(),
            engage_jump,
        });
    }
    Ok(log)
}
