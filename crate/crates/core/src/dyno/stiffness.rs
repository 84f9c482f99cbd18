use std::fmt::Write as _;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{rest_state_with, steps_for, stream_rng, DEFAULT_LOAD_CELL_SIGMA};
use crate::actuator::{self, ActuatorSpec, ControlCommand, OutputLoad};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StiffnessConfig {
    /// Ramp amplitude (Nm); the actuator clamps at its own torque limit.
    pub max_torque: f64,
    pub step: f64,
    pub hold_s: f64,
    /// Fit window on |measured torque| (Nm), clear of backlash take-up.
    pub fit_range: [f64; 2],
    pub load_cell_sigma: f64,
}

impl Default for StiffnessConfig {
    fn default() -> Self {
        Self {
            max_torque: 20.0,
            step: 0.25,
            hold_s: 0.2,
            fit_range: [4.0, 10.0],
            load_cell_sigma: DEFAULT_LOAD_CELL_SIGMA,
        }
    }
}

impl StiffnessConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.fit_range;
        if !(self.max_torque > 0.0 && self.step > 0.0 && self.hold_s > 0.0) {
            return Err(Error::config("stiffness ramp needs positive amplitude, step and hold"));
        }
        if !(lo >= 0.0 && hi > lo) {
            return Err(Error::config(format!("bad stiffness fit range [{lo}, {hi}]")));
        }
        if !(self.load_cell_sigma >= 0.0) {
            return Err(Error::config("load cell sigma must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StiffnessSample {
    pub commanded: f64,
    /// Load-cell torque at the end of the hold (Nm).
    pub torque: f64,
    /// Encoder-derived output deflection (rad).
    pub deflection: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StiffnessFit {
    pub stiffness: f64,
    /// Deflection intercepts of the loading branches (positive, negative).
    pub offsets: (f64, f64),
    pub samples_used: usize,
    pub residual_rms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StiffnessResult {
    pub seed: u64,
    pub samples: Vec<StiffnessSample>,
    pub fit: StiffnessFit,
}

impl StiffnessResult {
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# stiffness_nm_per_rad={:?}; samples_used={}; residual_rms_rad={:?}\n\
             commanded_nm,torque_nm,deflection_rad\n",
            self.fit.stiffness, self.fit.samples_used, self.fit.residual_rms
        );
        for s in &self.samples {
            writeln!(out, "{:?},{:?},{:?}", s.commanded, s.torque, s.deflection).unwrap();
        }
        out
    }
}

/// Staircase 0 → +max → 0 → −max → 0 in increments of `step`.
pub fn ramp_profile(max: f64, step: f64) -> Vec<f64> {
    let n = (max / step).round() as i64;
    let up = (0..=n).map(|i| i as f64 * step);
    let mut out: Vec<f64> = up.clone().collect();
    out.extend((0..n).rev().map(|i| i as f64 * step));
    out.extend((1..=n).map(|i| -(i as f64) * step));
    out.extend((0..n).rev().map(|i| -(i as f64) * step));
    out
}

/// Least-squares compliance with one slope shared by both loading branches
/// and a separate intercept per branch, restricted to |torque| in `range`.
pub fn fit_stiffness(samples: &[StiffnessSample], range: [f64; 2]) -> Result<StiffnessFit> {
    let in_range = |s: &&StiffnessSample| (range[0]..=range[1]).contains(&s.torque.abs());
    let branch = |positive: bool| -> Vec<StiffnessSample> {
        samples
            .iter()
            .filter(in_range)
            .filter(|s| (s.torque > 0.0) == positive)
            .copied()
            .collect()
    };
    let groups = [branch(true), branch(false)];
    let used: usize = groups.iter().map(Vec::len).sum();
    if used < 3 {
        return Err(Error::Procedure(format!(
            "stiffness fit needs at least 3 samples in [{}, {}] Nm, got {used}",
            range[0], range[1]
        )));
    }
    let means: Vec<(f64, f64)> = groups
        .iter()
        .map(|g| {
            if g.is_empty() {
                return (0.0, 0.0);
            }
            let n = g.len() as f64;
            (
                g.iter().map(|s| s.torque).sum::<f64>() / n,
                g.iter().map(|s| s.deflection).sum::<f64>() / n,
            )
        })
        .collect();
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (g, &(mt, md)) in groups.iter().zip(&means) {
        for s in g {
            sxy += (s.torque - mt) * (s.deflection - md);
            sxx += (s.torque - mt).powi(2);
        }
    }
    if sxx <= 0.0 {
        return Err(Error::Procedure("stiffness fit has no torque spread".into()));
    }
    let compliance = sxy / sxx;
    let offsets: Vec<f64> = means.iter().map(|&(mt, md)| md - compliance * mt).collect();
    let mut ss = 0.0;
    for (g, off) in groups.iter().zip(&offsets) {
        for s in g {
            ss += (s.deflection - compliance * s.torque - off).powi(2);
        }
    }
    Ok(StiffnessFit {
        stiffness: 1.0 / compliance,
        offsets: (offsets[0], offsets[1]),
        samples_used: used,
        residual_rms: (ss / used as f64).sqrt(),
    })
}

/// Locked-output stiffness test: step the torque command through the ramp,
/// record load-cell torque and encoder deflection at the end of each hold,
/// and fit the loading branches.
pub fn run_stiffness_test(spec: &ActuatorSpec, cfg: &StiffnessConfig, seed: u64) -> Result<StiffnessResult> {
    cfg.validate()?;
    let noise = Normal::new(0.0, cfg.load_cell_sigma).map_err(|e| Error::arg(e.to_string()))?;
    let mut rng = stream_rng(seed, 0);
    let hold = steps_for(spec, cfg.hold_s).max(1);
    let mut s = rest_state_with(spec, None);
    let zero = s.encoder_output_angle(spec);
    let mut samples = Vec::new();
    for commanded in ramp_profile(cfg.max_torque, cfg.step) {
        s = actuator::run(spec, &s, &ControlCommand::torque(commanded), OutputLoad::LOCKED, hold)?;
        samples.push(StiffnessSample {
            commanded,
            torque: s.mesh_torque + noise.sample(&mut rng),
            deflection: s.encoder_output_angle(spec) - zero,
        });
    }
    let fit = fit_stiffness(&samples, cfg.fit_range)?;
    Ok(StiffnessResult { seed, samples, fit })
}
