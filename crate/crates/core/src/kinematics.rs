//! Serial-chain kinematics for the modular joint morphologies.
//!
//! A chain is an ordered list of revolute joints. Each joint sits at a fixed
//! `origin` transform relative to the previous joint frame and rotates about
//! its own `axis`. A final `tool` transform places the end effector.
//!
//! Morphology files are JSON with a `schema_version` field:
//!
//! ```json
//! { "schema_version": 1, "kind": "morphology", "name": "arm",
//!   "joints": [ { "name": "j1", "axis": [0, 0, 1],
//!                 "origin": { "xyz": [0, 0, 0.1], "rpy": [0, 0, 0] },
//!                 "lower": -1.5, "upper": 1.5 } ],
//!   "tool": { "xyz": [0.2, 0, 0] } }
//! ```
//!
//! Limits default to ±π when omitted.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{
    DMatrix, Isometry3, Matrix3, Quaternion, Translation3, Unit, UnitQuaternion, Vector3, Vector6,
};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MORPHOLOGY_SCHEMA_VERSION: u32 = 1;

const AXIS_NORM_TOL: f64 = 1e-9;
const QUAT_NORM_TOL: f64 = 1e-9;

/// Rigid transform as written in config files: translation in meters and
/// fixed-axis roll/pitch/yaw in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Origin {
    pub xyz: [f64; 3],
    #[serde(default)]
    pub rpy: [f64; 3],
}

impl Origin {
    pub fn translation(x: f64, y: f64, z: f64) -> Self {
        Self {
            xyz: [x, y, z],
            rpy: [0.0; 3],
        }
    }

    pub fn to_isometry(&self) -> Isometry3<f64> {
        let [x, y, z] = self.xyz;
        let [r, p, yaw] = self.rpy;
        Isometry3::from_parts(
            Translation3::new(x, y, z),
            UnitQuaternion::from_euler_angles(r, p, yaw),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointConfig {
    pub name: String,
    pub axis: [f64; 3],
    #[serde(default)]
    pub origin: Origin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
    /// Name of the link this joint moves.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub link: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MorphologyConfig {
    pub schema_version: u32,
    #[serde(default = "morphology_kind")]
    pub kind: String,
    pub name: String,
    /// Set on configs whose dimensions are estimates.
    #[serde(default)]
    pub approximate: bool,
    #[serde(default)]
    pub joints: Vec<JointConfig>,
    #[serde(default)]
    pub tool: Origin,
}

fn morphology_kind() -> String {
    "morphology".to_string()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    pub link: Option<String>,
    pub axis: Unit<Vector3<f64>>,
    pub origin: Origin,
    pub lower: f64,
    pub upper: f64,
    transform: Isometry3<f64>,
}

impl Joint {
    pub fn clamp(&self, q: f64) -> f64 {
        q.clamp(self.lower, self.upper)
    }

    pub fn within_limits(&self, q: f64) -> bool {
        q >= self.lower && q <= self.upper
    }
}

/// Immutable serial chain. Cheap to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicChain {
    name: String,
    approximate: bool,
    joints: Vec<Joint>,
    tool_origin: Origin,
    tool: Isometry3<f64>,
}

/// End-effector pose: position in meters plus a unit quaternion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            position: Vector3::zeros(),
            orientation: UnitQuaternion::identity(),
        }
    }

    pub fn new(position: Vector3<f64>, orientation: UnitQuaternion<f64>) -> Self {
        Self {
            position,
            orientation,
        }
    }

    /// Build from a raw `(w, x, y, z)` quaternion, rejecting non-unit input.
    pub fn from_wxyz(position: Vector3<f64>, wxyz: [f64; 4]) -> Result<Self> {
        let q = Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
        if (q.norm() - 1.0).abs() > QUAT_NORM_TOL {
            return Err(Error::arg(format!(
                "quaternion norm {} is not within {QUAT_NORM_TOL} of 1",
                q.norm()
            )));
        }
        Ok(Self::new(position, UnitQuaternion::new_unchecked(q)))
    }

    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        Self::new(iso.translation.vector, iso.rotation)
    }

    pub fn to_isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(self.position.into(), self.orientation)
    }

    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.orientation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    /// World-frame error that moves `self` onto `target`: position difference
    /// stacked over the rotation vector of `target · self⁻¹`.
    pub fn error_to(&self, target: &Pose) -> Vector6<f64> {
        let dp = target.position - self.position;
        let dr = (target.orientation * self.orientation.inverse()).scaled_axis();
        Vector6::new(dp.x, dp.y, dp.z, dr.x, dr.y, dr.z)
    }
}

impl KinematicChain {
    pub fn from_config(config: &MorphologyConfig) -> Result<Self> {
        if config.schema_version != MORPHOLOGY_SCHEMA_VERSION {
            return Err(Error::config(format!(
                "morphology `{}`: unsupported schema_version {} (expected {})",
                config.name, config.schema_version, MORPHOLOGY_SCHEMA_VERSION
            )));
        }
        if config.kind != "morphology" {
            return Err(Error::config(format!(
                "expected kind `morphology`, found `{}`",
                config.kind
            )));
        }
        let mut seen = HashSet::new();
        let mut joints = Vec::with_capacity(config.joints.len());
        for jc in &config.joints {
            let bad = |reason: String| Error::InvalidJoint {
                joint: jc.name.clone(),
                reason,
            };
            if !seen.insert(jc.name.as_str()) {
                return Err(bad("duplicate joint name".into()));
            }
            let axis = Vector3::from(jc.axis);
            if !axis.iter().all(|v| v.is_finite()) || (axis.norm() - 1.0).abs() > AXIS_NORM_TOL {
                return Err(bad(format!("axis {:?} is not unit length", jc.axis)));
            }
            let lower = jc.lower.unwrap_or(-PI);
            let upper = jc.upper.unwrap_or(PI);
            if !(lower <= upper) {
                return Err(bad(format!("lower limit {lower} exceeds upper limit {upper}")));
            }
            if !jc.origin.xyz.iter().chain(&jc.origin.rpy).all(|v| v.is_finite()) {
                return Err(bad("origin has non-finite entries".into()));
            }
            joints.push(Joint {
                name: jc.name.clone(),
                link: jc.link.clone(),
                axis: Unit::new_unchecked(axis),
                origin: jc.origin,
                lower,
                upper,
                transform: jc.origin.to_isometry(),
            });
        }
        Ok(Self {
            name: config.name.clone(),
            approximate: config.approximate,
            joints,
            tool_origin: config.tool,
            tool: config.tool.to_isometry(),
        })
    }

    pub fn to_config(&self) -> MorphologyConfig {
        MorphologyConfig {
            schema_version: MORPHOLOGY_SCHEMA_VERSION,
            kind: morphology_kind(),
            name: self.name.clone(),
            approximate: self.approximate,
            joints: self
                .joints
                .iter()
                .map(|j| JointConfig {
                    name: j.name.clone(),
                    axis: [j.axis.x, j.axis.y, j.axis.z],
                    origin: j.origin,
                    lower: Some(j.lower),
                    upper: Some(j.upper),
                    link: j.link.clone(),
                })
                .collect(),
            tool: self.tool_origin,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_config(&serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_config()).expect("chain config serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn is_approximate(&self) -> bool {
        self.approximate
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn joint_names(&self) -> impl Iterator<Item = &str> {
        self.joints.iter().map(|j| j.name.as_str())
    }

    /// Indices of joints whose entry in `q` lies outside its limits.
    pub fn limit_violations(&self, q: &[f64]) -> Vec<usize> {
        self.joints
            .iter()
            .zip(q)
            .enumerate()
            .filter(|(_, (j, &qi))| !j.within_limits(qi))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn clamp_to_limits(&self, q: &mut [f64]) {
        for (j, qi) in self.joints.iter().zip(q.iter_mut()) {
            *qi = j.clamp(*qi);
        }
    }

    fn check_dims(&self, q: &[f64]) -> Result<()> {
        if q.len() != self.dof() {
            return Err(Error::Dimension {
                context: "joint vector",
                expected: self.dof(),
                got: q.len(),
            });
        }
        Ok(())
    }

    /// World frame of every joint (after its origin, before its rotation) and
    /// the end-effector frame.
    fn frames(&self, q: &[f64]) -> (Vec<Isometry3<f64>>, Isometry3<f64>) {
        let mut t = Isometry3::identity();
        let mut frames = Vec::with_capacity(self.dof());
        for (joint, &qi) in self.joints.iter().zip(q) {
            t *= joint.transform;
            frames.push(t);
            t *= UnitQuaternion::from_axis_angle(&joint.axis, qi);
        }
        (frames, t * self.tool)
    }

    pub fn forward_kinematics(&self, q: &[f64]) -> Result<Pose> {
        self.check_dims(q)?;
        Ok(Pose::from_isometry(&self.frames(q).1))
    }

    /// Geometric Jacobian (6×N) of the end effector in the world frame.
    /// Rows 0..3 are linear velocity, rows 3..6 angular velocity.
    pub fn jacobian(&self, q: &[f64]) -> Result<DMatrix<f64>> {
        self.check_dims(q)?;
        let (frames, ee) = self.frames(q);
        let p_ee = ee.translation.vector;
        let mut jac = DMatrix::zeros(6, self.dof());
        for (i, (joint, frame)) in self.joints.iter().zip(&frames).enumerate() {
            let z = frame.rotation * joint.axis.into_inner();
            let lin = z.cross(&(p_ee - frame.translation.vector));
            jac.fixed_view_mut::<3, 1>(0, i).copy_from(&lin);
            jac.fixed_view_mut::<3, 1>(3, i).copy_from(&z);
        }
        Ok(jac)
    }
}

/// Rotation matrix for `angle` about unit `axis` (Rodrigues).
pub fn axis_angle_matrix(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let k = axis.cross_matrix();
    Matrix3::identity() + k * angle.sin() + k * k * (1.0 - angle.cos())
}
