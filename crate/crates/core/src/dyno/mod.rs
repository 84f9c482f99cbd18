//! Virtual dynamometer: the bench procedures used to characterize an
//! actuator, each driving the actuator model through a simulated rig.
//!
//! Every procedure that draws random numbers takes a master seed. Work items
//! (map cells, units, Monte Carlo reps) get their own ChaCha stream derived
//! from that seed, so parallel and serial evaluation agree bit for bit.

mod backlash;
mod consistency;
mod durability;
mod efficiency;
mod reach;
mod stiffness;
mod variation;

pub use backlash::{measure_backlash, BacklashConfig, BacklashMeasurement};
pub use consistency::{run_consistency, ConsistencyConfig, ConsistencyReport, ConsistencyRow};
pub use durability::{run_durability, DurabilityConfig, DurabilityLog, DurabilityRow, Pendulum};
pub use efficiency::{measure_cell, run_efficiency_map, EfficiencyCell, EfficiencyConfig, EfficiencyMap};
pub use reach::{
    reach_backlash_sweep, run_reach_repeatability, ReachConfig, ReachResult, TargetSpread,
};
pub use stiffness::{fit_stiffness, ramp_profile, run_stiffness_test, StiffnessConfig, StiffnessFit, StiffnessResult, StiffnessSample};
pub use variation::{backlash_batch, draw_units, BacklashBatch, Sampling, UnitVariation};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::actuator::{ActuatorSpec, ActuatorState};
use crate::transmission::TransmissionState;

pub const DEFAULT_SEED: u64 = 0x5EED_2025;
pub const DEFAULT_LOAD_CELL_SIGMA: f64 = 0.01;

/// Independent generator for work item `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Actuator at rest with the rotor centred in the dead band, carrying the
/// wear history of `tr`.
pub(crate) fn rest_state_with(spec: &ActuatorSpec, tr: Option<&TransmissionState>) -> ActuatorState {
    let mut s = ActuatorState::at_rest(spec, 0.0);
    if let Some(tr) = tr {
        s.transmission.cycles = tr.cycles;
        s.transmission.wear_cycles = tr.wear_cycles;
        s.transmission.backlash = tr.backlash;
    }
    s
}

pub(crate) fn steps_for(spec: &ActuatorSpec, seconds: f64) -> usize {
    (seconds * spec.inner_rate_hz).round() as usize
}

/// Sample mean and (n-1) standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
