//! Binary outcome learners: logistic regression, random forest and two
//! flavours of gradient-boosted trees.

pub mod features;
pub mod forest;
pub mod gbt;
pub mod logistic;
pub mod tree;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, ColumnKind};
use crate::error::{Error, Result};
use crate::impute::ImputedTable;
use crate::tune::HyperSpace;
use features::{FeatureMatrix, FeatureSchema};
use forest::{fit_forest, Forest, ForestParams};
use gbt::{fit_gbt_grouped, GbtModel, GbtParams};
use logistic::{fit_logistic, LogisticModel};
use tree::{sqrt_mtry, CartParams, CartTarget};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Logistic,
    RandomForest,
    GbtLeafwise,
    GbtDepthwise,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::GbtLeafwise,
        Algorithm::GbtDepthwise,
        Algorithm::RandomForest,
        Algorithm::Logistic,
    ];

    /// Short label used in reports.
    pub fn label(self) -> &'static str {
        match self {
            Algorithm::Logistic => "LR",
            Algorithm::RandomForest => "RF",
            Algorithm::GbtLeafwise => "LGBM",
            Algorithm::GbtDepthwise => "XGB",
        }
    }

    pub fn id(self) -> &'static str {
        match self {
            Algorithm::Logistic => "logistic",
            Algorithm::RandomForest => "random_forest",
            Algorithm::GbtLeafwise => "gbt_leafwise",
            Algorithm::GbtDepthwise => "gbt_depthwise",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.id() == s || a.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown learner {s:?}")))
    }
}

/// An algorithm plus raw (search-scale) hyperparameter values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerSpec {
    pub algorithm: Algorithm,
    #[serde(default)]
    pub hyperparams: BTreeMap<String, f64>,
}

impl LearnerSpec {
    pub fn new(algorithm: Algorithm) -> Self {
        LearnerSpec {
            algorithm,
            hyperparams: BTreeMap::new(),
        }
    }

    pub fn with(mut self, name: &str, raw: f64) -> Self {
        self.hyperparams.insert(name.to_string(), raw);
        self
    }

    pub fn space(&self) -> HyperSpace {
        HyperSpace::for_algorithm(self.algorithm)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedModel {
    Logistic(LogisticModel),
    Forest(Forest),
    Gbt(GbtModel),
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub format_version: u32,
    pub algorithm: Algorithm,
    pub target: String,
    /// Effective (transformed) hyperparameters used for the fit.
    pub effective_params: BTreeMap<String, f64>,
    pub features: FeatureSchema,
    pub n_train: usize,
    pub model: FittedModel,
}

/// Binary 0/1 labels of a complete categorical target column.
pub(crate) fn binary_target(cohort: &Cohort, target: &str) -> Result<Vec<f64>> {
    let c = cohort.schema().require(target)?;
    let spec = &cohort.schema().columns[c];
    if spec.kind != ColumnKind::Categorical || spec.n_levels() != 2 {
        return Err(Error::InvalidArgument(format!("target {target:?} is not binary categorical")));
    }
    if cohort.missing_count(c) > 0 {
        return Err(Error::InvalidArgument(format!("target {target:?} has missing cells")));
    }
    Ok(cohort.column(c))
}

fn param(p: &BTreeMap<String, f64>, name: &str) -> f64 {
    p[name]
}

/// Fit `spec` to predict `target` from every non-role column of `table`.
pub fn fit(spec: &LearnerSpec, table: &ImputedTable, target: &str, seed: u64) -> Result<TrainedModel> {
    let cohort = table.cohort();
    let y = binary_target(cohort, target)?;
    let events = y.iter().filter(|&&v| v == 1.0).count();
    if events == 0 || events == y.len() {
        return Err(Error::SingleClass(target.to_string()));
    }
    let features = FeatureSchema::of(cohort, target);
    let idx = features.bind(cohort, target)?;
    let x = FeatureMatrix::from_cohort(cohort, &idx)?;
    let n = x.n_rows;
    let eff = spec.space().resolve(&spec.hyperparams, n)?;

    let model = match spec.algorithm {
        Algorithm::Logistic => FittedModel::Logistic(fit_logistic(&x, &y, param(&eff, "l2"))?),
        Algorithm::RandomForest => {
            let labels: Vec<usize> = y.iter().map(|&v| v as usize).collect();
            let params = ForestParams {
                n_trees: param(&eff, "num.trees") as usize,
                cart: CartParams {
                    mtry: sqrt_mtry(x.n_features()),
                    max_depth: param(&eff, "max.depth") as usize,
                    min_split: param(&eff, "min.node.size").max(1.0) as usize,
                    min_leaf: param(&eff, "min.bucket") as usize,
                },
            };
            FittedModel::Forest(fit_forest(
                &x,
                CartTarget::Classes {
                    labels: &labels,
                    n_classes: 2,
                },
                &params,
                seed,
            ))
        }
        Algorithm::GbtLeafwise => {
            let p = GbtParams {
                goss: param(&eff, "booster") >= 2.0,
                max_depth: param(&eff, "max_depth") as usize,
                learning_rate: param(&eff, "learning_rate"),
                early_stopping_rounds: param(&eff, "early_stopping_rounds") as usize,
                min_data_in_leaf: param(&eff, "min_data_in_leaf") as usize,
                max_leaves: param(&eff, "num_leaves") as usize,
                ..GbtParams::leaf_wise()
            };
            FittedModel::Gbt(fit_gbt_grouped(&x, &y, Some(cohort.row_ids()), &p, seed)?)
        }
        Algorithm::GbtDepthwise => {
            let p = GbtParams {
                gamma: param(&eff, "gamma"),
                learning_rate: param(&eff, "eta"),
                max_depth: param(&eff, "max_depth") as usize,
                early_stopping_rounds: param(&eff, "early_stopping_rounds") as usize,
                max_leaves: param(&eff, "max_leaves") as usize,
                min_child_weight: param(&eff, "min_child_weight"),
                ..GbtParams::depth_wise()
            };
            FittedModel::Gbt(fit_gbt_grouped(&x, &y, Some(cohort.row_ids()), &p, seed)?)
        }
    };
    Ok(TrainedModel {
        format_version: MODEL_FORMAT_VERSION,
        algorithm: spec.algorithm,
        target: target.to_string(),
        effective_params: eff,
        features,
        n_train: n,
        model,
    })
}

/// Event probability for every row of `table`.
pub fn predict_proba(model: &TrainedModel, table: &ImputedTable) -> Result<Vec<f64>> {
    model.predict_cohort(table.cohort())
}

impl TrainedModel {
    /// Predict on a cohort whose predictor columns are complete.
    pub fn predict_cohort(&self, cohort: &Cohort) -> Result<Vec<f64>> {
        let idx = self.features.bind(cohort, &self.target)?;
        let x = FeatureMatrix::from_cohort(cohort, &idx)?;
        if x.n_rows == 0 {
            return Ok(Vec::new());
        }
        let p = match &self.model {
            FittedModel::Logistic(m) => m.predict_proba(&x),
            FittedModel::Forest(f) => f.predict(&x).into_iter().map(|v| v[1]).collect(),
            FittedModel::Gbt(m) => m.predict_proba(&x),
        };
        Ok(p.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: TrainedModel = serde_json::from_str(s)?;
        if m.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported model format version {}",
                m.format_version
            )));
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}
