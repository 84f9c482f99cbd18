use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{backlash::measure_backlash, mean_std, stream_rng, BacklashConfig};
use crate::actuator::ActuatorSpec;
use crate::{Error, Result};

/// How unit-to-unit offsets are drawn for a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampling {
    /// Independent normal draws per unit.
    Independent,
    /// One draw per equal-probability stratum, shuffled across units, so a
    /// small batch spans the distribution.
    #[default]
    Stratified,
}

/// Per-unit spread of a printed actuator batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitVariation {
    /// Absolute σ of the fresh backlash (rad).
    pub backlash_sigma: f64,
    /// Relative σ of the mesh stiffness.
    pub stiffness_sigma: f64,
    /// Relative σ of the reducer friction terms.
    pub friction_sigma: f64,
    #[serde(default)]
    pub sampling: Sampling,
}

impl Default for UnitVariation {
    fn default() -> Self {
        Self {
            backlash_sigma: 0.0042,
            stiffness_sigma: 0.05,
            friction_sigma: 0.05,
            sampling: Sampling::Stratified,
        }
    }
}

impl UnitVariation {
    pub fn none() -> Self {
        Self {
            backlash_sigma: 0.0,
            stiffness_sigma: 0.0,
            friction_sigma: 0.0,
            sampling: Sampling::Stratified,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !(ok(self.backlash_sigma) && ok(self.stiffness_sigma) && ok(self.friction_sigma)) {
            return Err(Error::config("variation sigmas must be finite and >= 0"));
        }
        if self.stiffness_sigma >= 0.5 || self.friction_sigma >= 0.5 {
            return Err(Error::config("relative variation sigmas must be < 0.5"));
        }
        Ok(())
    }
}

fn standard_draws<R: Rng>(n: usize, sampling: Sampling, rng: &mut R) -> Vec<f64> {
    match sampling {
        Sampling::Independent => (0..n).map(|_| StandardNormal.sample(rng)).collect(),
        Sampling::Stratified => {
            let unit = Normal::standard();
            let mut strata: Vec<usize> = (0..n).collect();
            strata.shuffle(rng);
            strata
                .into_iter()
                .map(|k| {
                    let u: f64 = rng.random();
                    let p = ((k as f64 + u) / n as f64).clamp(1e-12, 1.0 - 1e-12);
                    unit.inverse_cdf(p)
                })
                .collect()
        }
    }
}

/// Draw `n` unit specs around `nominal`.
pub fn draw_units(nominal: &ActuatorSpec, variation: &UnitVariation, n: usize, seed: u64) -> Result<Vec<ActuatorSpec>> {
    variation.validate()?;
    let mut rng = stream_rng(seed, 0);
    let zb = standard_draws(n, variation.sampling, &mut rng);
    let zk = standard_draws(n, variation.sampling, &mut rng);
    let zf = standard_draws(n, variation.sampling, &mut rng);
    let tr = &nominal.transmission;
    let b_cap = tr.wear.b_max * (1.0 - 1e-9);
    Ok((0..n)
        .map(|i| {
            let mut unit = nominal.clone();
            unit.name = format!("{}#{}", nominal.name, i + 1);
            let t = &mut unit.transmission;
            t.backlash = (tr.backlash + variation.backlash_sigma * zb[i]).clamp(0.0, b_cap);
            t.stiffness = tr.stiffness * (1.0 + variation.stiffness_sigma * zk[i]).max(0.5);
            let s = (1.0 + variation.friction_sigma * zf[i]).max(0.0);
            let e = &mut t.efficiency;
            e.eta0 = 1.0 - s * (1.0 - tr.efficiency.eta0);
            e.k_tau *= s;
            e.k_omega *= s;
            e.tau_coulomb *= s;
            unit
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BacklashBatch {
    pub seed: u64,
    pub units: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (n-1).
    pub std: f64,
    pub max: f64,
}

impl BacklashBatch {
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# mean_rad={:?}; std_rad={:?}; max_rad={:?}; seed={}\nunit,backlash_rad\n",
            self.mean, self.std, self.max, self.seed
        );
        for (i, b) in self.units.iter().enumerate() {
            out.push_str(&format!("{},{:?}\n", i + 1, b));
        }
        out
    }
}

/// Measure the backlash of `n` freshly drawn units. The rig corrects for
/// elastic wind-up with the batch's nominal stiffness.
pub fn backlash_batch(
    nominal: &ActuatorSpec,
    variation: &UnitVariation,
    n: usize,
    seed: u64,
    cfg: &BacklashConfig,
) -> Result<BacklashBatch> {
    if n == 0 {
        return Err(Error::arg("backlash batch needs at least one unit"));
    }
    let cfg = BacklashConfig {
        nominal_stiffness: cfg.nominal_stiffness.or(Some(nominal.transmission.stiffness)),
        ..cfg.clone()
    };
    let units = draw_units(nominal, variation, n, seed)?
        .iter()
        .map(|u| measure_backlash(u, None, &cfg).map(|m| m.backlash))
        .collect::<Result<Vec<_>>>()?;
    let (mean, std) = mean_std(&units);
    let max = units.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(BacklashBatch { seed, units, mean, std, max })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_sigma_gives_identical_units() {
        let spec = ActuatorSpec::preset("6512").unwrap();
        let units = draw_units(&spec, &UnitVariation::none(), 6, 5).unwrap();
        for u in &units {
            assert_eq!(u.transmission, spec.transmission);
        }
    }

    #[test]
    fn stratified_draws_cover_each_stratum_once() {
        let mut rng = stream_rng(1, 0);
        let z = standard_draws(10, Sampling::Stratified, &mut rng);
        let unit = Normal::standard();
        let mut strata: Vec<usize> = z.iter().map(|&x| (unit.cdf(x) * 10.0).floor() as usize).collect();
        strata.sort();
        assert_eq!(strata, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn draws_are_seed_deterministic() {
        let spec = ActuatorSpec::preset("6512").unwrap();
        let v = UnitVariation::default();
        assert_eq!(draw_units(&spec, &v, 6, 9).unwrap(), draw_units(&spec, &v, 6, 9).unwrap());
        assert_ne!(draw_units(&spec, &v, 6, 9).unwrap(), draw_units(&spec, &v, 6, 10).unwrap());
    }

    #[test]
    fn batch_tracks_unit_backlash() {
        let spec = ActuatorSpec::preset("6512").unwrap();
        let v = UnitVariation::default();
        let batch = backlash_batch(&spec, &v, 6, 3, &BacklashConfig::default()).unwrap();
        let units = draw_units(&spec, &v, 6, 3).unwrap();
        for (m, u) in batch.units.iter().zip(&units) {
            assert!((m - u.transmission.backlash).abs() <= 2.0 * spec.output_lsb() + 2e-4, "{m} vs {}", u.transmission.backlash);
        }
    }
}
