//! Hyperparameter search spaces and their scale transforms.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::Algorithm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Identity,
    /// `2^x`
    Pow2,
    /// `round(n^x)` with `n` the training row count.
    RoundNPow,
}

impl Transform {
    pub fn apply(self, x: f64, n_rows: usize) -> f64 {
        match self {
            Transform::Identity => x,
            Transform::Pow2 => x.exp2(),
            Transform::RoundNPow => (n_rows as f64).powf(x).round(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParam {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub transform: Transform,
    #[serde(default)]
    pub integer: bool,
    pub default: f64,
}

impl HyperParam {
    fn new(name: &str, lower: f64, upper: f64, transform: Transform, integer: bool, default: f64) -> Self {
        HyperParam {
            name: name.to_string(),
            lower,
            upper,
            transform,
            integer,
            default,
        }
    }

    fn int(name: &str, lower: f64, upper: f64, default: f64) -> Self {
        Self::new(name, lower, upper, Transform::Identity, true, default)
    }

    fn pow2(name: &str, lower: f64, upper: f64, default: f64) -> Self {
        Self::new(name, lower, upper, Transform::Pow2, false, default)
    }

    /// Effective value for a raw (search-scale) value.
    pub fn resolve(&self, raw: f64, n_rows: usize) -> f64 {
        let v = self.transform.apply(raw, n_rows);
        if self.integer {
            v.round()
        } else {
            v
        }
    }
}

/// Ordered set of tunable hyperparameters. Candidates are raw (search-scale)
/// values; transforms are applied only by [`HyperSpace::resolve`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperSpace {
    pub params: Vec<HyperParam>,
}

impl HyperSpace {
    pub fn for_algorithm(algorithm: Algorithm) -> Self {
        use Transform::RoundNPow;
        let params = match algorithm {
            Algorithm::GbtLeafwise => vec![
                HyperParam::int("booster", 1.0, 2.0, 1.0),
                HyperParam::int("max_depth", 1.0, 15.0, 6.0),
                HyperParam::pow2("learning_rate", -10.0, 0.0, 0.3f64.log2()),
                HyperParam::int("early_stopping_rounds", 7.0, 30.0, 7.0),
                HyperParam::int("min_data_in_leaf", 1.0, 60.0, 10.0),
                HyperParam::int("num_leaves", 4.0, 60.0, 15.0),
            ],
            Algorithm::GbtDepthwise => vec![
                HyperParam::pow2("gamma", -15.0, 3.0, 0.0),
                HyperParam::pow2("eta", -10.0, 0.0, 0.3f64.log2()),
                HyperParam::int("max_depth", 1.0, 15.0, 6.0),
                HyperParam::int("early_stopping_rounds", 7.0, 30.0, 7.0),
                HyperParam::int("max_leaves", 4.0, 60.0, 15.0),
                HyperParam::pow2("min_child_weight", 0.0, 7.0, 1.0),
            ],
            Algorithm::RandomForest => vec![
                HyperParam::int("num.trees", 1.0, 2000.0, 500.0),
                HyperParam::new("min.node.size", 0.0, 1.0, RoundNPow, true, 0.5),
                HyperParam::int("max.depth", 1.0, 50.0, 15.0),
                HyperParam::int("min.bucket", 1.0, 60.0, 10.0),
            ],
            Algorithm::Logistic => vec![HyperParam::pow2("l2", -20.0, 7.0, 0.0)],
        };
        HyperSpace { params }
    }

    pub fn dims(&self) -> usize {
        self.params.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.params.is_empty() {
            return Err(Error::InvalidArgument("hyperparameter space has no dimensions".into()));
        }
        for p in &self.params {
            if !(p.lower < p.upper) || !p.lower.is_finite() || !p.upper.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "hyperparameter {:?} has a degenerate range [{}, {}]",
                    p.name, p.lower, p.upper
                )));
            }
            if !(p.lower..=p.upper).contains(&p.default) {
                return Err(Error::InvalidArgument(format!(
                    "default of {:?} lies outside [{}, {}]",
                    p.name, p.lower, p.upper
                )));
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&HyperParam> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn defaults(&self) -> BTreeMap<String, f64> {
        self.params.iter().map(|p| (p.name.clone(), p.default)).collect()
    }

    /// Reject unknown names and out-of-range raw values.
    pub fn check(&self, raw: &BTreeMap<String, f64>) -> Result<()> {
        for (name, &v) in raw {
            let p = self
                .get(name)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown hyperparameter {name:?}")))?;
            if !(p.lower..=p.upper).contains(&v) {
                return Err(Error::InvalidArgument(format!(
                    "hyperparameter {name:?} = {v} outside [{}, {}]",
                    p.lower, p.upper
                )));
            }
        }
        Ok(())
    }

    /// Effective values for fitting: defaults fill gaps, transforms applied
    /// once, integer dimensions rounded after the transform.
    pub fn resolve(&self, raw: &BTreeMap<String, f64>, n_rows: usize) -> Result<BTreeMap<String, f64>> {
        self.check(raw)?;
        Ok(self
            .params
            .iter()
            .map(|p| {
                let v = raw.get(&p.name).copied().unwrap_or(p.default);
                (p.name.clone(), p.resolve(v, n_rows))
            })
            .collect())
    }

    /// Raw candidate from unit-cube coordinates. Integer identity dimensions
    /// are rounded so that the candidate is exactly what gets evaluated.
    pub fn from_unit(&self, u: &[f64]) -> BTreeMap<String, f64> {
        self.params
            .iter()
            .zip(u)
            .map(|(p, &ui)| {
                let mut v = p.lower + ui.clamp(0.0, 1.0) * (p.upper - p.lower);
                if p.integer && p.transform == Transform::Identity {
                    v = v.round().clamp(p.lower, p.upper);
                }
                (p.name.clone(), v)
            })
            .collect()
    }

    pub fn to_unit(&self, raw: &BTreeMap<String, f64>) -> Vec<f64> {
        self.params
            .iter()
            .map(|p| {
                let v = raw.get(&p.name).copied().unwrap_or(p.default);
                (v - p.lower) / (p.upper - p.lower)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn min_node_size_transform() {
        let space = HyperSpace::for_algorithm(Algorithm::RandomForest);
        let raw = BTreeMap::from([("min.node.size".to_string(), 0.5)]);
        let eff = space.resolve(&raw, 400).unwrap();
        assert_eq!(eff["min.node.size"], 20.0);
        assert_eq!(eff["num.trees"], 500.0);
    }

    #[test]
    fn pow2_transforms_and_defaults() {
        let space = HyperSpace::for_algorithm(Algorithm::GbtLeafwise);
        let eff = space.resolve(&BTreeMap::new(), 100).unwrap();
        assert!((eff["learning_rate"] - 0.3).abs() < 1e-12);
        let space = HyperSpace::for_algorithm(Algorithm::GbtDepthwise);
        let eff = space.resolve(&BTreeMap::new(), 100).unwrap();
        assert_eq!(eff["gamma"], 1.0);
        assert_eq!(eff["min_child_weight"], 2.0);
    }

    #[test]
    fn every_builtin_space_is_valid() {
        for a in Algorithm::ALL {
            HyperSpace::for_algorithm(a).validate().unwrap();
        }
    }

    #[test]
    fn rejects_out_of_space_values() {
        let space = HyperSpace::for_algorithm(Algorithm::GbtLeafwise);
        assert!(space.resolve(&BTreeMap::from([("num_leaves".into(), 61.0)]), 10).is_err());
        assert!(space.resolve(&BTreeMap::from([("bogus".into(), 1.0)]), 10).is_err());
        let mut bad = space.clone();
        bad.params[0].upper = bad.params[0].lower;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn unit_mapping_rounds_integer_dims() {
        let space = HyperSpace::for_algorithm(Algorithm::GbtLeafwise);
        let c = space.from_unit(&[0.6, 0.5, 0.5, 0.0, 1.0, 0.25]);
        assert_eq!(c["booster"], 2.0);
        assert_eq!(c["max_depth"], 8.0);
        assert_eq!(c["learning_rate"], -5.0);
        assert_eq!(c["min_data_in_leaf"], 60.0);
        assert_eq!(c["num_leaves"], 18.0);
    }
}
