//! Simulation and evaluation toolkit for 3D-printed cycloidal actuators and
//! the robots built from them.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod actuator;
pub mod benchmark;
pub mod config;
pub mod control;
pub mod dyno;
pub mod error;
pub mod fieldbus;
pub mod kinematics;
pub mod teleop;
pub mod transmission;

pub use actuator::{ActuatorSpec, ActuatorState, ControlCommand, ControlMode, OutputLoad};
pub use benchmark::RobotSpec;
pub use config::ConfigKind;
pub use control::{MlpPolicy, Robot};
pub use error::{Error, Result};
pub use fieldbus::{BusConfig, CanFrame};
pub use kinematics::{KinematicChain, Pose};
pub use transmission::{TransmissionSpec, TransmissionState};
