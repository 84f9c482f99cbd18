use std::fmt::Write as _;

use nalgebra::Vector3;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::stream_rng;
use crate::actuator::ActuatorSpec;
use crate::kinematics::{KinematicChain, Pose};
use crate::teleop::{solve_ik, IkParams};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReachConfig {
    /// Target end-effector positions in the base frame (m).
    pub targets: Vec<[f64; 3]>,
    pub reps: usize,
    /// IK seed configuration; zeros when empty.
    #[serde(default)]
    pub home: Vec<f64>,
    /// Treat joint encoders as exact.
    #[serde(default)]
    pub infinite_resolution: bool,
    #[serde(default = "d_ik_iters")]
    pub ik_iterations: usize,
    #[serde(default = "d_ik_tol")]
    pub ik_tolerance: f64,
}

fn d_ik_iters() -> usize {
    500
}
fn d_ik_tol() -> f64 {
    1e-6
}

impl Default for ReachConfig {
    fn default() -> Self {
        Self {
            targets: vec![[0.25, 0.08, 0.15], [0.28, -0.06, 0.08], [0.2, 0.0, 0.25], [0.3, 0.04, 0.02]],
            reps: 100,
            home: vec![0.0, 0.6, -1.4, 0.8, 0.0],
            infinite_resolution: false,
            ik_iterations: d_ik_iters(),
            ik_tolerance: d_ik_tol(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TargetSpread {
    pub target: [f64; 3],
    pub joints: Vec<f64>,
    pub mean: [f64; 3],
    /// sqrt(Σ‖p − p̄‖² / (n − 1)) over the reps (m).
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReachResult {
    pub seed: u64,
    pub backlash: f64,
    pub targets: Vec<TargetSpread>,
    /// Root mean of the per-target variances (m).
    pub pooled_sigma: f64,
    /// End-effector positions, target-major.
    pub positions: Vec<Vec<[f64; 3]>>,
}

impl ReachResult {
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# backlash_rad={:?}; pooled_sigma_m={:?}; seed={}\ntarget,rep,x_m,y_m,z_m\n",
            self.backlash, self.pooled_sigma, self.seed
        );
        for (t, reps) in self.positions.iter().enumerate() {
            for (r, p) in reps.iter().enumerate() {
                writeln!(out, "{},{},{:?},{:?},{:?}", t + 1, r + 1, p[0], p[1], p[2]).unwrap();
            }
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("target,x_m,y_m,z_m,sigma_m\n");
        for (i, t) in self.targets.iter().enumerate() {
            writeln!(out, "{},{:?},{:?},{:?},{:?}", i + 1, t.target[0], t.target[1], t.target[2], t.sigma).unwrap();
        }
        writeln!(out, "pooled,,,,{:?}", self.pooled_sigma).unwrap();
        out
    }
}

fn solve_targets(chain: &KinematicChain, cfg: &ReachConfig) -> Result<Vec<Vec<f64>>> {
    let home = if cfg.home.is_empty() { vec![0.0; chain.dof()] } else { cfg.home.clone() };
    if home.len() != chain.dof() {
        return Err(Error::Dimension { context: "reach home", expected: chain.dof(), got: home.len() });
    }
    let params = IkParams {
        orientation_weight: 0.0,
        position_tolerance: cfg.ik_tolerance,
        ..IkParams::default()
    };
    cfg.targets
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let goal = Pose::new(Vector3::from(*t), Default::default());
            let sol = solve_ik(chain, &home, &goal, &params, cfg.ik_iterations)?;
            if !sol.converged {
                return Err(Error::Procedure(format!(
                    "target {} at ({}, {}, {}) is unreachable: residual {:.3e} m",
                    i + 1,
                    t[0],
                    t[1],
                    t[2],
                    sol.position_error
                )));
            }
            Ok(sol.q)
        })
        .collect()
}

fn run_with(
    chain: &KinematicChain,
    actuator: &ActuatorSpec,
    cfg: &ReachConfig,
    seed: u64,
    parallel: bool,
) -> Result<ReachResult> {
    if cfg.targets.is_empty() || cfg.reps < 2 {
        return Err(Error::config("reach needs at least one target and two reps"));
    }
    let solutions = solve_targets(chain, cfg)?;
    let b = actuator.transmission.backlash;
    let lsb = if cfg.infinite_resolution { 0.0 } else { actuator.output_lsb() };
    let reps = cfg.reps;
    let one = |job: usize| -> Result<[f64; 3]> {
        let (t, _) = (job / reps, job % reps);
        let mut rng = stream_rng(seed, job as u64);
        let q: Vec<f64> = solutions[t]
            .iter()
            .map(|&q| {
                let rest: f64 = rng.random::<f64>() - 0.5;
                let quant: f64 = rng.random::<f64>() - 0.5;
                q + b * rest + lsb * quant
            })
            .collect();
        let p = chain.forward_kinematics(&q)?.position;
        Ok([p.x, p.y, p.z])
    };
    let jobs = 0..cfg.targets.len() * reps;
    let flat: Vec<[f64; 3]> = if parallel {
        jobs.into_par_iter().map(one).collect::<Result<_>>()?
    } else {
        jobs.map(one).collect::<Result<_>>()?
    };
    let positions: Vec<Vec<[f64; 3]>> = flat.chunks(reps).map(<[_]>::to_vec).collect();
    let mut targets = Vec::new();
    let mut var_sum = 0.0;
    for ((ps, t), q) in positions.iter().zip(&cfg.targets).zip(&solutions) {
        let n = ps.len() as f64;
        // Offsets from the first rep keep identical positions at exactly zero spread.
        let shift: Vec<f64> = (0..3).map(|k| ps.iter().map(|p| p[k] - ps[0][k]).sum::<f64>() / n).collect();
        let mean: Vec<f64> = (0..3).map(|k| ps[0][k] + shift[k]).collect();
        let ss: f64 = ps
            .iter()
            .map(|p| (0..3).map(|k| (p[k] - ps[0][k] - shift[k]).powi(2)).sum::<f64>())
            .sum();
        let var = ss / (n - 1.0);
        var_sum += var;
        targets.push(TargetSpread { target: *t, joints: q.clone(), mean: [mean[0], mean[1], mean[2]], sigma: var.sqrt() });
    }
    Ok(ReachResult {
        seed,
        backlash: b,
        pooled_sigma: (var_sum / targets.len() as f64).sqrt(),
        targets,
        positions,
    })
}

/// Repeatability of an arm with one `actuator` per joint. Each rep settles
/// every joint at a uniform point of its dead band and adds encoder
/// quantization error, then takes the end-effector position by FK.
pub fn run_reach_repeatability(
    chain: &KinematicChain,
    actuator: &ActuatorSpec,
    cfg: &ReachConfig,
    seed: u64,
) -> Result<ReachResult> {
    run_with(chain, actuator, cfg, seed, true)
}

/// Repeatability at each backlash value, with common random numbers.
pub fn reach_backlash_sweep(
    chain: &KinematicChain,
    actuator: &ActuatorSpec,
    cfg: &ReachConfig,
    backlash: &[f64],
    seed: u64,
) -> Result<Vec<ReachResult>> {
    backlash
        .iter()
        .map(|&b| {
            let mut a = actuator.clone();
            a.transmission.backlash = b;
            run_reach_repeatability(chain, &a, cfg, seed)
        })
        .collect()
}
