//! Tabular generative models used for augmentation.
//!
//! Two generators are fitted in-process (adversarial random forests and
//! discrete Bayesian networks). An external generator wraps a pool of rows
//! produced elsewhere and read from CSV.

pub mod arf;
pub mod bn;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::cohort::{fingerprint, Cohort, CohortSchema, SYNTHETIC_ROW_BASE};
use crate::error::{Error, Result};
use crate::impute::ImputedTable;
use crate::seed;

pub use arf::{fit_arf, fit_arf_with, ArfModel, ArfParams};
pub use bn::{fit_bn, fit_bn_with, BnModel, BnParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    Arf,
    Bn,
    External,
}

impl GeneratorKind {
    pub fn label(self) -> &'static str {
        match self {
            GeneratorKind::Arf => "ARF",
            GeneratorKind::Bn => "BN",
            GeneratorKind::External => "External",
        }
    }

    pub fn id(self) -> &'static str {
        match self {
            GeneratorKind::Arf => "arf",
            GeneratorKind::Bn => "bn",
            GeneratorKind::External => "external",
        }
    }
}

impl std::str::FromStr for GeneratorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [GeneratorKind::Arf, GeneratorKind::Bn, GeneratorKind::External]
            .into_iter()
            .find(|g| g.id() == s || g.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown generator {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Diagnostics {
    Arf {
        rounds: usize,
        /// Out-of-bag discriminator accuracy per round.
        oob_accuracy: Vec<f64>,
        converged: bool,
    },
    Bn {
        edges: Vec<(String, String)>,
        bic: f64,
    },
    External {
        rows: usize,
    },
}

#[derive(Debug, Clone)]
enum Model {
    Arf(ArfModel),
    Bn(BnModel),
    External(Cohort),
}

/// A fitted generator over a fixed schema.
#[derive(Debug, Clone)]
pub struct Generator {
    pub kind: GeneratorKind,
    pub schema: CohortSchema,
    pub fingerprint: String,
    pub diagnostics: Diagnostics,
    model: Model,
}

impl Generator {
    fn new(kind: GeneratorKind, schema: CohortSchema, diagnostics: Diagnostics, model: Model) -> Self {
        Generator {
            kind,
            fingerprint: fingerprint(&schema.columns),
            schema,
            diagnostics,
            model,
        }
    }

    /// Wrap rows produced by a third-party generator. Sampling returns a
    /// seeded subset without replacement.
    pub fn external(pool: ImputedTable) -> Self {
        let cohort = pool.into_cohort();
        let rows = cohort.n_rows();
        Generator::new(
            GeneratorKind::External,
            cohort.schema().clone(),
            Diagnostics::External { rows },
            Model::External(cohort),
        )
    }

    pub fn arf_model(&self) -> Option<&ArfModel> {
        match &self.model {
            Model::Arf(m) => Some(m),
            _ => None,
        }
    }

    pub fn bn_model(&self) -> Option<&BnModel> {
        match &self.model {
            Model::Bn(m) => Some(m),
            _ => None,
        }
    }
}

/// Generator settings for [`fit_generator`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorOptions {
    pub arf: ArfParams,
    pub bn: BnParams,
}

pub fn fit_generator(kind: GeneratorKind, table: &ImputedTable, opts: &GeneratorOptions, seed: u64) -> Result<Generator> {
    match kind {
        GeneratorKind::Arf => fit_arf_with(table, &opts.arf, seed),
        GeneratorKind::Bn => fit_bn_with(table, &opts.bn, seed),
        GeneratorKind::External => Err(Error::InvalidArgument(
            "external generators are built from a sample file, not fitted".into(),
        )),
    }
}

/// Draw `m` complete rows. Rows are generated one after another from a
/// single stream, so a smaller sample is a prefix of a larger one with the
/// same seed.
pub fn sample(gen: &Generator, m: usize, seed: u64) -> Result<ImputedTable> {
    let mut rng = seed::rng(seed);
    let p = gen.schema.n_cols();
    let values = match &gen.model {
        Model::Arf(model) => model.sample(m, &mut rng),
        Model::Bn(model) => model.sample(m, &mut rng),
        Model::External(pool) => {
            if m > pool.n_rows() {
                return Err(Error::InvalidArgument(format!(
                    "external pool has {} rows, {m} requested",
                    pool.n_rows()
                )));
            }
            let mut idx: Vec<usize> = (0..pool.n_rows()).collect();
            idx.shuffle(&mut rng);
            idx[..m].iter().flat_map(|&r| pool.row(r).to_vec()).collect()
        }
    };
    debug_assert_eq!(values.len(), m * p);
    let cohort = Cohort::from_values(gen.schema.clone(), m, values)?
        .with_row_ids((0..m as u64).map(|i| SYNTHETIC_ROW_BASE + i).collect());
    ImputedTable::from_complete(cohort)
}

fn check_table(table: &ImputedTable, what: &str) -> Result<()> {
    if !table.cohort().is_complete() {
        return Err(Error::InvalidArgument(format!("{what}: table has missing cells")));
    }
    if table.cohort().n_cols() == 0 {
        return Err(Error::InvalidArgument(format!("{what}: table has no columns")));
    }
    Ok(())
}
