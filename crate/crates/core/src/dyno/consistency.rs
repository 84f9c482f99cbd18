use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{efficiency::measure_cell, stream_rng, variation::draw_units, UnitVariation, DEFAULT_LOAD_CELL_SIGMA};
use crate::actuator::ActuatorSpec;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsistencyConfig {
    pub units: usize,
    /// Each printer is a separate variation batch; units are dealt round robin.
    pub printers: usize,
    pub variation: UnitVariation,
    pub speed: f64,
    pub torques: Vec<f64>,
    pub settle_s: f64,
    pub window_s: f64,
    pub load_cell_sigma: f64,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        Self {
            units: 6,
            printers: 2,
            variation: UnitVariation::default(),
            speed: 1.0,
            torques: vec![1.0, 2.0, 3.0, 4.0],
            settle_s: 1.0,
            window_s: 1.0,
            load_cell_sigma: DEFAULT_LOAD_CELL_SIGMA,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConsistencyRow {
    pub unit: usize,
    pub printer: usize,
    pub torque: f64,
    pub measured_torque: f64,
    /// Measured minus commanded torque (Nm).
    pub torque_error: f64,
    pub mechanical_efficiency: f64,
    pub total_efficiency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyReport {
    pub seed: u64,
    pub rows: Vec<ConsistencyRow>,
}

impl ConsistencyReport {
    pub fn max_abs_torque_error(&self) -> f64 {
        self.rows.iter().map(|r| r.torque_error.abs()).fold(0.0, f64::max)
    }

    /// Per-unit mean efficiency over the torque grid, unit order.
    pub fn unit_efficiency(&self, total: bool) -> Vec<f64> {
        let units = self.rows.iter().map(|r| r.unit).max().map_or(0, |u| u + 1);
        (0..units)
            .map(|u| {
                let v: Vec<f64> = self
                    .rows
                    .iter()
                    .filter(|r| r.unit == u)
                    .map(|r| if total { r.total_efficiency } else { r.mechanical_efficiency })
                    .collect();
                v.iter().sum::<f64>() / v.len() as f64
            })
            .collect()
    }

    /// Max minus min of the per-unit mean efficiency.
    pub fn efficiency_spread(&self, total: bool) -> f64 {
        let e = self.unit_efficiency(total);
        let hi = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = e.iter().copied().fold(f64::INFINITY, f64::min);
        hi - lo
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# seed={}\nunit,printer,torque_nm,measured_torque_nm,torque_error_nm,mechanical_efficiency,total_efficiency\n",
            self.seed
        );
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{:?},{:?},{:?},{:?},{:?}",
                r.unit + 1,
                r.printer + 1,
                r.torque,
                r.measured_torque,
                r.torque_error,
                r.mechanical_efficiency,
                r.total_efficiency
            )
            .unwrap();
        }
        out
    }
}

/// Torque tracking and efficiency of a printed batch at one speed.
pub fn run_consistency(nominal: &ActuatorSpec, cfg: &ConsistencyConfig, seed: u64) -> Result<ConsistencyReport> {
    if cfg.units == 0 || cfg.printers == 0 || cfg.torques.is_empty() {
        return Err(Error::config("consistency needs units, printers and torques"));
    }
    if !(cfg.speed > 0.0) {
        return Err(Error::config("consistency speed must be > 0"));
    }
    // Printer p builds units p, p + printers, ...
    let mut units: Vec<(usize, usize, ActuatorSpec)> = Vec::with_capacity(cfg.units);
    for p in 0..cfg.printers {
        let count = (cfg.units + cfg.printers - 1 - p) / cfg.printers;
        let batch_seed: u64 = stream_rng(seed, 1 << 32 | p as u64).random();
        for (j, spec) in draw_units(nominal, &cfg.variation, count, batch_seed)?.into_iter().enumerate() {
            units.push((p + j * cfg.printers, p, spec));
        }
    }
    units.sort_by_key(|u| u.0);
    let jobs: Vec<(usize, usize, usize)> = units
        .iter()
        .flat_map(|&(u, p, _)| (0..cfg.torques.len()).map(move |t| (u, p, t)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(u, p, t)| {
            let torque = cfg.torques[t];
            let mut rng = stream_rng(seed, (u * cfg.torques.len() + t) as u64);
            let c = measure_cell(&units[u].2, None, torque, cfg.speed, cfg.settle_s, cfg.window_s, cfg.load_cell_sigma, &mut rng)?;
            if let Some(reason) = c.invalid {
                return Err(Error::Procedure(format!("unit {} at {torque} Nm: {reason}", u + 1)));
            }
            Ok(ConsistencyRow {
                unit: u,
                printer: p,
                torque,
                measured_torque: c.measured_torque,
                torque_error: c.measured_torque - torque,
                mechanical_efficiency: c.mechanical_efficiency,
                total_efficiency: c.total_efficiency,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConsistencyReport { seed, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> ConsistencyConfig {
        ConsistencyConfig { settle_s: 0.5, window_s: 0.5, ..Default::default() }
    }

    #[test]
    fn zero_variation_units_identical() {
        let spec = ActuatorSpec::preset("6512").unwrap();
        let cfg = ConsistencyConfig { variation: UnitVariation::none(), load_cell_sigma: 0.0, ..quick() };
        let r = run_consistency(&spec, &cfg, 4).unwrap();
        assert_eq!(r.rows.len(), 24);
        assert_eq!(r.efficiency_spread(false), 0.0);
        assert_eq!(r.efficiency_spread(true), 0.0);
    }

    #[test]
    fn default_batch_within_half_newton_metre() {
        let spec = ActuatorSpec::preset("6512").unwrap();
        let r = run_consistency(&spec, &quick(), 4).unwrap();
        assert!(r.max_abs_torque_error() <= 0.5, "{}", r.max_abs_torque_error());
        assert!(r.efficiency_spread(false) <= 0.05);
        let printers: Vec<usize> = r.rows.iter().filter(|x| x.torque == 1.0).map(|x| x.printer).collect();
        assert_eq!(printers, vec![0, 1, 0, 1, 0, 1]);
    }
}
