//! Cross-platform comparison metrics.
//!
//! The performance factor is the mean peak joint torque normalized by robot
//! height and weight:
//!
//! ```text
//! p = Σ|τ_i| / (N · h · m · g)
//! ```
//!
//! and performance per cost is `φ = p / cost`. Costs are untyped numbers;
//! comparing specs assumes they share a currency.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const ROBOT_SPEC_SCHEMA_VERSION: u32 = 1;
pub const STANDARD_GRAVITY: f64 = 9.81;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TorqueSource {
    Datasheet,
    Estimate,
    Placeholder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointGroup {
    pub name: String,
    /// Peak torque of one joint in the group (Nm).
    pub peak_torque: f64,
    #[serde(default = "one")]
    pub count: u32,
    pub torque_source: TorqueSource,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Openness {
    #[serde(default)]
    pub hardware: bool,
    #[serde(default)]
    pub software: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotSpec {
    pub schema_version: u32,
    pub kind: String,
    pub name: String,
    /// Standing height (m).
    pub height: f64,
    /// Mass (kg).
    pub mass: f64,
    #[serde(default = "default_gravity")]
    pub gravity: f64,
    pub cost: f64,
    #[serde(default)]
    pub open: Openness,
    /// Free-text provenance of the numbers in this file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    pub joints: Vec<JointGroup>,
}

fn default_gravity() -> f64 {
    STANDARD_GRAVITY
}

/// Denominator convention for the performance factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightMode {
    /// Weight in newtons, `m·g`.
    #[default]
    Weight,
    /// Mass in kilograms only, for sensitivity checks.
    Mass,
}

impl RobotSpec {
    /// Builds a spec from individual joint torques, one group per joint.
    pub fn from_torques(name: &str, torques: &[f64], height: f64, mass: f64, cost: f64) -> Self {
        Self {
            schema_version: ROBOT_SPEC_SCHEMA_VERSION,
            kind: "robot_spec".into(),
            name: name.into(),
            height,
            mass,
            gravity: STANDARD_GRAVITY,
            cost,
            open: Openness::default(),
            source: None,
            joints: torques
                .iter()
                .enumerate()
                .map(|(i, &t)| JointGroup {
                    name: format!("j{i}"),
                    peak_torque: t,
                    count: 1,
                    torque_source: TorqueSource::Estimate,
                })
                .collect(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: RobotSpec = toml::from_str(text)?;
        if spec.schema_version != ROBOT_SPEC_SCHEMA_VERSION || spec.kind != "robot_spec" {
            return Err(Error::config(format!(
                "expected kind `robot_spec` schema_version {ROBOT_SPEC_SCHEMA_VERSION}, found `{}` v{}",
                spec.kind, spec.schema_version
            )));
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("robot spec serializes")
    }

    pub fn dof(&self) -> u64 {
        self.joints.iter().map(|g| g.count as u64).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(format!("robot spec `{}`: {m}", self.name)));
        if self.dof() == 0 {
            return fail("needs at least one actuated joint".into());
        }
        for (what, v) in [("height", self.height), ("mass", self.mass), ("gravity", self.gravity)] {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("{what} must be > 0"));
            }
        }
        if !self.cost.is_finite() {
            return fail("cost must be finite".into());
        }
        if let Some(g) = self.joints.iter().find(|g| !(g.peak_torque >= 0.0 && g.peak_torque.is_finite())) {
            return fail(format!("joint group `{}` has a negative or non-finite torque", g.name));
        }
        Ok(())
    }

    /// True when any torque is a placeholder rather than a sourced value.
    pub fn has_placeholder_torques(&self) -> bool {
        self.joints.iter().any(|g| g.torque_source == TorqueSource::Placeholder)
    }
}

pub fn performance_factor(spec: &RobotSpec, mode: WeightMode) -> Result<f64> {
    let n = spec.dof();
    if n == 0 {
        return Err(Error::config(format!("robot spec `{}` has no actuated joints", spec.name)));
    }
    spec.validate()?;
    let torque_sum: f64 = spec.joints.iter().map(|g| g.count as f64 * g.peak_torque.abs()).sum();
    let load = match mode {
        WeightMode::Weight => spec.mass * spec.gravity,
        WeightMode::Mass => spec.mass,
    };
    Ok(torque_sum / (n as f64 * spec.height * load))
}

pub fn performance_per_dollar(spec: &RobotSpec, mode: WeightMode) -> Result<f64> {
    if !(spec.cost > 0.0) {
        return Err(Error::config(format!("robot spec `{}`: cost must be > 0", spec.name)));
    }
    Ok(performance_factor(spec, mode)? / spec.cost)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub name: String,
    pub dof: u64,
    pub performance_factor: f64,
    pub cost: f64,
    pub performance_per_cost: f64,
    pub hardware_open: bool,
    pub software_open: bool,
    pub placeholder_torques: bool,
}

/// Rows sorted by performance per cost, highest first; equal values are
/// ordered by name.
pub fn compare(specs: &[RobotSpec], mode: WeightMode) -> Result<Vec<ComparisonRow>> {
    if specs.is_empty() {
        return Err(Error::arg("compare needs at least one robot spec"));
    }
    let mut seen = HashSet::new();
    let mut rows = Vec::with_capacity(specs.len());
    for s in specs {
        if !seen.insert(s.name.as_str()) {
            return Err(Error::config(format!("duplicate robot name `{}`", s.name)));
        }
        rows.push(ComparisonRow {
            name: s.name.clone(),
            dof: s.dof(),
            performance_factor: performance_factor(s, mode)?,
            cost: s.cost,
            performance_per_cost: performance_per_dollar(s, mode)?,
            hardware_open: s.open.hardware,
            software_open: s.open.software,
            placeholder_torques: s.has_placeholder_torques(),
        });
    }
    rows.sort_by(|a, b| {
        b.performance_per_cost
            .total_cmp(&a.performance_per_cost)
            .then_with(|| a.name.cmp(&b.name))
    });
    Ok(rows)
}

const CSV_COLUMNS: &str =
    "rank,name,dof,performance_factor,cost,performance_per_cost,hardware_open,software_open,placeholder_torques";

/// CSV report. The leading `#` line records the weight convention and that
/// costs are assumed to share one currency.
pub fn comparison_csv(rows: &[ComparisonRow], mode: WeightMode) -> String {
    let mut out = format!(
        "# denominator={}; costs assumed to share one currency\n{CSV_COLUMNS}\n",
        match mode {
            WeightMode::Weight => "weight",
            WeightMode::Mass => "mass",
        }
    );
    for (i, r) in rows.iter().enumerate() {
        writeln!(
            out,
            "{},{},{},{:?},{:?},{:?},{},{},{}",
            i + 1,
            r.name,
            r.dof,
            r.performance_factor,
            r.cost,
            r.performance_per_cost,
            r.hardware_open,
            r.software_open,
            r.placeholder_torques
        )
        .unwrap();
    }
    out
}

/// Fixed-width text table of the same rows.
pub fn comparison_table(rows: &[ComparisonRow]) -> String {
    let name_w = rows.iter().map(|r| r.name.len()).max().unwrap_or(4).max(4);
    let mut out = format!(
        "{:>4}  {:<name_w$}  {:>4}  {:>12}  {:>10}  {:>12}  {:>3}  {:>3}\n",
        "rank", "name", "dof", "p_hat", "cost", "p_hat/cost", "hw", "sw"
    );
    for (i, r) in rows.iter().enumerate() {
        let yn = |b: bool| if b { "yes" } else { "no" };
        writeln!(
            out,
            "{:>4}  {:<name_w$}  {:>4}  {:>12.6}  {:>10.2}  {:>12.4e}  {:>3}  {:>3}{}",
            i + 1,
            r.name,
            r.dof,
            r.performance_factor,
            r.cost,
            r.performance_per_cost,
            yn(r.hardware_open),
            yn(r.software_open),
            if r.placeholder_torques { "  (placeholder torques)" } else { "" }
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_spec() -> RobotSpec {
        let mut s = RobotSpec::from_torques("unit", &[1.0], 1.0, 1.0, 1.0);
        s.gravity = 1.0;
        s
    }

    #[test]
    fn unit_case_is_exactly_one() {
        assert_eq!(performance_factor(&unit_spec(), WeightMode::Weight).unwrap(), 1.0);
        assert_eq!(performance_per_dollar(&unit_spec(), WeightMode::Weight).unwrap(), 1.0);
    }

    #[test]
    fn two_joint_example() {
        let s = RobotSpec::from_torques("two", &[4.0, 6.0], 0.5, 2.0, 1.0);
        let p = performance_factor(&s, WeightMode::Weight).unwrap();
        assert!((p - 10.0 / (2.0 * 0.5 * 2.0 * 9.81)).abs() < 1e-15);
        assert!((p - 0.509_683_995_922_528).abs() < 1e-12);
        let m = performance_factor(&s, WeightMode::Mass).unwrap();
        assert!((m - 5.0).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        let mut s = unit_spec();
        s.joints.clear();
        assert!(performance_factor(&s, WeightMode::Weight).is_err());
        let mut s = unit_spec();
        s.cost = 0.0;
        assert!(performance_per_dollar(&s, WeightMode::Weight).is_err());
        assert!(compare(&[unit_spec(), unit_spec()], WeightMode::Weight).is_err());
        assert!(compare(&[], WeightMode::Weight).is_err());
    }

    #[test]
    fn ties_break_by_name() {
        let mut a = unit_spec();
        a.name = "beta".into();
        let mut b = unit_spec();
        b.name = "alpha".into();
        let rows = compare(&[a, b], WeightMode::Weight).unwrap();
        assert_eq!(rows[0].name, "alpha");
        assert_eq!(rows[1].name, "beta");
        let single = compare(&[unit_spec()], WeightMode::Weight).unwrap();
        assert_eq!(single.len(), 1);
        let csv = comparison_csv(&single, WeightMode::Weight);
        assert_eq!(csv.lines().count(), 3);
    }

    fn spec_strategy() -> impl Strategy<Value = RobotSpec> {
        (
            proptest::collection::vec(0.0..200.0f64, 1..30),
            0.2..2.5f64,
            1.0..150.0f64,
            100.0..500_000.0f64,
        )
            .prop_map(|(t, h, m, c)| RobotSpec::from_torques("r", &t, h, m, c))
    }

    proptest! {
        #[test]
        fn linear_in_torque(spec in spec_strategy(), c in 0.01..100.0f64) {
            let p = performance_factor(&spec, WeightMode::Weight).unwrap();
            let mut scaled = spec.clone();
            scaled.joints.iter_mut().for_each(|g| g.peak_torque *= c);
            let ps = performance_factor(&scaled, WeightMode::Weight).unwrap();
            prop_assert!((ps - c * p).abs() <= 1e-12 * (c * p).max(1e-300));
        }

        #[test]
        fn invariant_under_joint_reordering(spec in spec_strategy(), seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut shuffled = spec.clone();
            shuffled.joints.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let a = performance_factor(&spec, WeightMode::Weight).unwrap();
            let b = performance_factor(&shuffled, WeightMode::Weight).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1e-300));
        }

        #[test]
        fn consistent_unit_change(spec in spec_strategy()) {
            // Torques in N·mm with height in mm leaves the ratio unchanged.
            let mut mm = spec.clone();
            mm.joints.iter_mut().for_each(|g| g.peak_torque *= 1000.0);
            mm.height *= 1000.0;
            let a = performance_factor(&spec, WeightMode::Weight).unwrap();
            let b = performance_factor(&mm, WeightMode::Weight).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1e-300));
        }

        #[test]
        fn doubling_cost_halves_phi(spec in spec_strategy()) {
            let a = performance_per_dollar(&spec, WeightMode::Weight).unwrap();
            let mut d = spec.clone();
            d.cost *= 2.0;
            let b = performance_per_dollar(&d, WeightMode::Weight).unwrap();
            prop_assert_eq!(b, a / 2.0);
        }

        #[test]
        fn ranking_invariant_under_currency_scaling(
            specs in proptest::collection::vec(spec_strategy(), 1..8),
            scale in 0.001..1000.0f64,
        ) {
            let specs: Vec<RobotSpec> = specs.into_iter().enumerate().map(|(i, mut s)| {
                s.name = format!("r{i}");
                s
            }).collect();
            let base: Vec<String> = compare(&specs, WeightMode::Weight).unwrap().into_iter().map(|r| r.name).collect();
            let rescaled: Vec<RobotSpec> = specs.iter().cloned().map(|mut s| { s.cost *= scale; s }).collect();
            let other: Vec<String> = compare(&rescaled, WeightMode::Weight).unwrap().into_iter().map(|r| r.name).collect();
            prop_assert_eq!(base, other);
        }
    }
}
