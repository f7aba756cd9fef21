//! End-to-end run: per outcome, learner and generator, baseline nested CV,
//! augmentation search, final models and counterfactual odds ratios, with
//! every intermediate result written under the output directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::{augment_search_prepared, augment_table, Origin, build_schedule_with, write_grid_csv, AugmentOptions, Rounding, DEFAULT_MU, DEFAULT_SIGMA};
use crate::cohort::{load_cohort, split_folds_by, Cohort, CohortSchema};
use crate::effect::{bootstrap_ci, bootstrap_ci_refit, psm_match, BootstrapOptions, EffectEstimate, PsmOptions};
use crate::error::{Error, Result};
use crate::eval::cv::{modeling_cohort, prepare_folds, NoObserver, PreparedFold};
use crate::eval::{nested_cv_prepared, tune_and_fit, CvConfig, TuneBudget, Tuned};
use crate::impute::{fit_impute_features, ImputeOptions, ImputedTable};
use crate::learners::{Algorithm, LearnerSpec};
use crate::report::{emit_table, OrCell, Perf, ReportRow, TableFormat};
use crate::simlab::{simulate_arms, SimCohortConfig};
use crate::subseed;
use crate::syngen::GeneratorKind;

/// Where simulated cohorts take their configuration from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SimSource {
    /// `"cidscann_like"` or a path to a simulation config file.
    Named(String),
    Inline(Box<SimCohortConfig>),
}

impl SimSource {
    pub fn resolve(&self) -> Result<SimCohortConfig> {
        match self {
            SimSource::Named(n) if n == "cidscann_like" => Ok(SimCohortConfig::cidscann_like()),
            SimSource::Named(path) => SimCohortConfig::load(path),
            SimSource::Inline(cfg) => Ok((**cfg).clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateInput {
    pub config: SimSource,
    pub n_control: usize,
    pub n_treated: usize,
}

/// Either a cohort file with its schema or a simulated cohort.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cohort: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateInput>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub mu: f64,
    pub sigma: f64,
    pub n_draws: usize,
    pub n_sizes: usize,
    pub rounding: Rounding,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            mu: DEFAULT_MU,
            sigma: DEFAULT_SIGMA,
            n_draws: 10,
            n_sizes: 23,
            rounding: Rounding::Ceiling,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsmConfig {
    /// Compute a matched reference when no user-supplied one is given.
    pub enabled: bool,
    /// Matching covariates; every predictor when empty.
    pub covariates: Vec<String>,
    /// In SDs of the propensity logit; `inf` disables the caliper.
    pub caliper: f64,
}

impl Default for PsmConfig {
    fn default() -> Self {
        PsmConfig {
            enabled: false,
            covariates: Vec::new(),
            caliper: 0.2,
        }
    }
}

/// A published or otherwise external odds ratio shown beside the estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceOr {
    pub outcome: String,
    #[serde(rename = "or")]
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

fn default_outcomes() -> Vec<String> {
    vec!["primary".into()]
}

fn default_learners() -> Vec<Algorithm> {
    vec![Algorithm::Logistic]
}

fn default_k() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every random stage derives from it.
    pub seed: u64,
    #[serde(default, skip_serializing)]
    pub out_dir: PathBuf,
    pub input: InputConfig,
    /// Outcome column names, or `primary` / `secondary` for the schema's
    /// first and second outcome.
    #[serde(default = "default_outcomes")]
    pub outcomes: Vec<String>,
    #[serde(default = "default_learners")]
    pub learners: Vec<Algorithm>,
    #[serde(default)]
    pub generators: Vec<GeneratorKind>,
    #[serde(default = "default_k")]
    pub k_outer: usize,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub tuning: TuneBudget,
    #[serde(default)]
    pub impute: ImputeOptions,
    #[serde(default)]
    pub bootstrap: BootstrapOptions,
    #[serde(default)]
    pub augment: AugmentOptions,
    #[serde(default)]
    pub psm: PsmConfig,
    #[serde(default)]
    pub references: Vec<ReferenceOr>,
}

impl RunConfig {
    /// Parse a config; relative input paths resolve against `base`.
    pub fn from_toml_str(s: &str, base: Option<&Path>) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(base) = base {
            let fix = |p: &mut Option<PathBuf>| {
                if let Some(p) = p {
                    if p.is_relative() {
                        *p = base.join(&*p);
                    }
                }
            };
            fix(&mut cfg.input.schema);
            fix(&mut cfg.input.cohort);
            if let Some(SimulateInput {
                config: SimSource::Named(n),
                ..
            }) = &mut cfg.input.simulate
            {
                if n != "cidscann_like" && Path::new(n).is_relative() {
                    *n = base.join(&*n).display().to_string();
                }
            }
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path.parent())
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks that need no data.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.k_outer < 2 {
            return bad(format!("k_outer must be at least 2, got {}", self.k_outer));
        }
        if self.learners.is_empty() {
            return bad("no learners".into());
        }
        if self.outcomes.is_empty() {
            return bad("no outcomes".into());
        }
        if self.generators.contains(&GeneratorKind::External) {
            return bad("the external generator cannot be searched; use `vcarm sample` instead".into());
        }
        let i = &self.input;
        match (&i.schema, &i.cohort, &i.simulate) {
            (Some(_), Some(_), None) | (None, None, Some(_)) => Ok(()),
            _ => bad("input needs either `schema` and `cohort`, or `simulate`".into()),
        }
    }

    /// Outcome names after resolving `primary` / `secondary`; all must be
    /// outcome columns of `schema`.
    pub fn resolve_outcomes(&self, schema: &CohortSchema) -> Result<Vec<String>> {
        self.outcomes
            .iter()
            .map(|o| {
                let name = match o.as_str() {
                    "primary" => schema.outcome_cols.first(),
                    "secondary" => schema.outcome_cols.get(1),
                    other => schema.outcome_cols.iter().find(|c| *c == other),
                };
                name.cloned()
                    .ok_or_else(|| Error::Config(format!("outcome {o:?} is not an outcome column of the schema")))
            })
            .collect()
    }
}

/// Loaded or simulated input, split by arm.
#[derive(Debug, Clone)]
pub struct RunData {
    pub cohort: Cohort,
    pub controls: Cohort,
    pub treated: Cohort,
}

/// Files written so far, relative to the output directory.
#[derive(Debug, Default)]
pub struct Artifacts {
    root: PathBuf,
    written: Vec<(String, String)>,
}

impl Artifacts {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Artifacts {
            root: root.into(),
            written: Vec::new(),
        }
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        let digest = Sha256::digest(bytes);
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        self.written.push((rel.to_string(), hex));
        Ok(())
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.written.iter().map(|(p, _)| p.as_str())
    }

    fn manifest(&self, status: &str, failure: Option<(&str, u64, String)>) -> Result<String> {
        #[derive(Serialize)]
        struct Entry<'a> {
            path: &'a str,
            sha256: &'a str,
        }
        #[derive(Serialize)]
        struct Failure<'a> {
            stage: &'a str,
            seed: u64,
            error: String,
        }
        #[derive(Serialize)]
        struct Manifest<'a> {
            status: &'a str,
            #[serde(skip_serializing_if = "Option::is_none")]
            failure: Option<Failure<'a>>,
            artifacts: Vec<Entry<'a>>,
        }
        let m = Manifest {
            status,
            failure: failure.map(|(stage, seed, error)| Failure { stage, seed, error }),
            artifacts: self.written.iter().map(|(p, h)| Entry { path: p, sha256: h }).collect(),
        };
        Ok(serde_json::to_string_pretty(&m)? + "\n")
    }
}

/// Run `f` as the named stage, tagging any error with the stage and seed.
pub fn stage<T>(name: &str, seed: u64, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = std::time::Instant::now();
    let out = f();
    log::info!("{name}: {:.2?}", start.elapsed());
    out.map_err(|e| match e {
        tagged @ Error::Stage { .. } => tagged,
        other => Error::Stage {
            stage: name.to_string(),
            seed,
            source: Box::new(other),
        },
    })
}

fn json<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    Ok((serde_json::to_string_pretty(v)? + "\n").into_bytes())
}

/// Load or simulate the cohort and split it into control and treated arms.
pub fn load_input(cfg: &RunConfig, artifacts: &mut Artifacts) -> Result<RunData> {
    let cohort = match &cfg.input.simulate {
        Some(sim) => {
            let s = subseed!(cfg.seed, "simulate");
            stage("simulate", s, || {
                let sc = sim.config.resolve()?;
                let out = simulate_arms(&sc, sim.n_control, sim.n_treated, s)?;
                artifacts.write("data/schema.toml", out.cohort.schema().to_toml_string().as_bytes())?;
                let mut buf = Vec::new();
                out.cohort.write_csv(&mut buf)?;
                artifacts.write("data/cohort.csv", &buf)?;
                let side = artifacts.root.join("data/potential_outcomes.csv");
                out.potential.save(&side)?;
                let bytes = std::fs::read(&side).map_err(|e| Error::io(&side, e))?;
                artifacts.write("data/potential_outcomes.csv", &bytes)?;
                Ok(out.cohort)
            })?
        }
        None => stage("load", cfg.seed, || {
            let schema_path = cfg.input.schema.as_ref().expect("validated");
            let schema = CohortSchema::load(schema_path)?;
            load_cohort(cfg.input.cohort.as_ref().expect("validated"), &schema)
        })?,
    };
    split_arms(cohort)
}

/// Split on the schema's treatment column: level 0 is control, level 1 treated.
pub fn split_arms(cohort: Cohort) -> Result<RunData> {
    let t = cohort
        .schema()
        .treatment_col
        .as_deref()
        .ok_or_else(|| Error::Config("the cohort schema declares no treatment column".into()))?;
    let t = cohort.schema().require(t)?;
    if cohort.missing_count(t) > 0 {
        return Err(Error::InvalidArgument("treatment column has missing cells".into()));
    }
    let controls = cohort.select_rows(&cohort.rows_with_level(t, 0));
    let treated = cohort.select_rows(&cohort.rows_with_level(t, 1));
    Ok(RunData {
        cohort,
        controls,
        treated,
    })
}

/// Output of [`run_pipeline`].
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub rows: Vec<ReportRow>,
    pub artifacts: Vec<String>,
}

/// Execute the full workflow described by `cfg` and write its artifacts to
/// `cfg.out_dir`. A failing stage still leaves a manifest of what was
/// written, with the stage name and seed.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let mut artifacts = Artifacts::new(&cfg.out_dir);
    let result = run_stages(cfg, &mut artifacts);
    let manifest = match &result {
        Ok(_) => artifacts.manifest("ok", None)?,
        Err(Error::Stage { stage, seed, source }) => artifacts.manifest("failed", Some((stage, *seed, source.to_string())))?,
        Err(e) => artifacts.manifest("failed", Some(("run", cfg.seed, e.to_string())))?,
    };
    let path = cfg.out_dir.join("manifest.json");
    std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    result.map(|rows| RunSummary {
        rows,
        artifacts: artifacts.paths().map(str::to_string).collect(),
    })
}

fn run_stages(cfg: &RunConfig, artifacts: &mut Artifacts) -> Result<Vec<ReportRow>> {
    artifacts.write("config.toml", cfg.to_toml_string()?.as_bytes())?;
    let data = load_input(cfg, artifacts)?;
    let outcomes = stage("config", cfg.seed, || cfg.resolve_outcomes(data.cohort.schema()))?;
    for r in &cfg.references {
        if !outcomes.contains(&r.outcome) {
            return Err(Error::Config(format!("reference for {:?}, which is not a selected outcome", r.outcome)));
        }
    }
    let mut all_rows = Vec::new();
    for outcome in &outcomes {
        let rows = run_outcome(cfg, &data, outcome, artifacts)?;
        for format in TableFormat::ALL {
            let text = stage("report", cfg.seed, || emit_table(&rows, format))?;
            artifacts.write(&format!("report_{outcome}.{}", format.extension()), text.as_bytes())?;
        }
        all_rows.extend(rows);
    }
    artifacts.write("report_rows.json", &json(&all_rows)?)?;
    Ok(all_rows)
}

/// Files produced by one learner job, written in order afterwards.
type Outputs = Vec<(String, Vec<u8>)>;

/// Bootstrap effect of a tuned model; with `refit` the model is refit on
/// resampled training rows at its tuned hyperparameters.
fn estimate_effect(ctx: &OutcomeContext<'_>, alg: Algorithm, tuned: &Tuned, train: &ImputedTable, strata: Option<&[usize]>, seed: u64) -> Result<EffectEstimate> {
    let cfg = ctx.cfg;
    if !cfg.bootstrap.refit {
        return bootstrap_ci(&tuned.model, &ctx.treated, ctx.outcome, &cfg.bootstrap, &cfg.impute, seed);
    }
    let spec = LearnerSpec {
        algorithm: alg,
        hyperparams: tuned.params.clone(),
    };
    bootstrap_ci_refit(&spec, train, strata, ctx.outcome, &ctx.treated, &cfg.bootstrap, seed)
}

struct OutcomeContext<'a> {
    cfg: &'a RunConfig,
    outcome: &'a str,
    cv: CvConfig,
    prepared: Vec<PreparedFold>,
    n0: usize,
    final_train: ImputedTable,
    treated: Cohort,
}

fn run_outcome(cfg: &RunConfig, data: &RunData, outcome: &str, artifacts: &mut Artifacts) -> Result<Vec<ReportRow>> {
    let so = subseed!(cfg.seed, "outcome", outcome);
    let mut cv = CvConfig::new(outcome);
    cv.budget = cfg.tuning;
    cv.impute = cfg.impute;

    let ctrl = stage(&format!("prepare:{outcome}"), so, || modeling_cohort(&data.controls, outcome))?;
    let fold_seed = subseed!(so, "folds");
    let plan = stage(&format!("folds:{outcome}"), fold_seed, || split_folds_by(&ctrl, cfg.k_outer, fold_seed, Some(outcome)))?;
    artifacts.write(&format!("{outcome}/folds.json"), &json(&plan)?)?;

    let prep_seed = subseed!(so, "prepare");
    let prepared = stage(&format!("impute-folds:{outcome}"), prep_seed, || prepare_folds(&ctrl, &plan, &cv, prep_seed, &NoObserver))?;
    let final_seed = subseed!(so, "final-impute");
    let final_train = stage(&format!("impute-final:{outcome}"), final_seed, || fit_impute_features(&ctrl, &cfg.impute, final_seed))?;
    let treated_seed = subseed!(so, "impute-treated");
    let treated = stage(&format!("impute-treated:{outcome}"), treated_seed, || {
        let t = modeling_cohort(&data.treated, outcome)?;
        Ok(fit_impute_features(&t, &cfg.impute, treated_seed)?.into_cohort())
    })?;

    let reference = match cfg.references.iter().find(|r| r.outcome == outcome) {
        Some(r) => Some(OrCell {
            point: r.point,
            ci_low: r.ci_low,
            ci_high: r.ci_high,
        }),
        None if cfg.psm.enabled => {
            let psm_seed = subseed!(so, "psm");
            let est = stage(&format!("psm:{outcome}"), psm_seed, || {
                let (matched, est) = run_psm(cfg, data, outcome, psm_seed)?;
                #[derive(Serialize)]
                struct PsmArtifact<'a> {
                    estimate: &'a crate::effect::EffectEstimate,
                    matched: &'a crate::effect::MatchedSet,
                }
                artifacts.write(
                    &format!("{outcome}/psm.json"),
                    &json(&PsmArtifact {
                        estimate: &est,
                        matched: &matched,
                    })?,
                )?;
                Ok(est)
            })?;
            Some(OrCell::from(&est))
        }
        None => None,
    };

    let ctx = OutcomeContext {
        cfg,
        outcome,
        cv,
        prepared,
        n0: ctrl.n_rows(),
        final_train,
        treated,
    };
    let jobs: Vec<Result<(Vec<ReportRow>, Outputs)>> = cfg
        .learners
        .par_iter()
        .map(|&alg| learner_job(&ctx, alg, so, reference))
        .collect();
    let mut rows = Vec::new();
    for job in jobs {
        let (r, outputs) = job?;
        for (path, bytes) in outputs {
            artifacts.write(&path, &bytes)?;
        }
        rows.extend(r);
    }
    Ok(rows)
}

fn run_psm(cfg: &RunConfig, data: &RunData, outcome: &str, seed: u64) -> Result<(crate::effect::MatchedSet, crate::effect::EffectEstimate)> {
    let schema = data.cohort.schema();
    let treat = schema.treatment_col.clone().expect("split_arms checked the treatment column");
    let features: Vec<String> = schema.feature_columns().into_iter().map(|c| c.name).collect();
    let mut names: Vec<&str> = features.iter().map(String::as_str).collect();
    names.push(&treat);
    names.push(outcome);
    let projected = data.cohort.select_columns(&names)?;
    let y = projected.schema().require(outcome)?;
    let projected = projected.select_rows(&projected.observed_rows(y));
    let imputed = fit_impute_features(&projected, &cfg.impute, subseed!(seed, "impute"))?;
    let covariates: Vec<&str> = if cfg.psm.covariates.is_empty() {
        features.iter().map(String::as_str).collect()
    } else {
        cfg.psm.covariates.iter().map(String::as_str).collect()
    };
    let opts = PsmOptions {
        caliper: Some(cfg.psm.caliper).filter(|c| c.is_finite()),
        n_boot: cfg.bootstrap.n_boot,
        alpha: cfg.bootstrap.alpha,
    };
    psm_match(imputed.cohort(), &covariates, outcome, &opts, subseed!(seed, "match"))
}

fn learner_job(ctx: &OutcomeContext<'_>, alg: Algorithm, so: u64, reference: Option<OrCell>) -> Result<(Vec<ReportRow>, Outputs)> {
    let cfg = ctx.cfg;
    let outcome = ctx.outcome;
    let lid = alg.id();
    let ls = subseed!(so, "learner", lid);
    let spec = LearnerSpec::new(alg);
    let space = spec.space();
    let mut out: Outputs = Vec::new();
    let cv_seed = subseed!(ls, "cv");

    let baseline = stage(&format!("cv:{outcome}:{lid}"), cv_seed, || nested_cv_prepared(&ctx.prepared, &spec, &space, &ctx.cv, cv_seed, None))?;
    out.push((format!("{outcome}/{lid}/baseline_cv.json"), json(&baseline)?));

    let fit_seed = subseed!(ls, "final");
    let tuned = stage(&format!("fit:{outcome}:{lid}"), fit_seed, || tune_and_fit(&spec, &space, &ctx.final_train, outcome, &cfg.tuning, fit_seed))?;
    out.push((format!("{outcome}/{lid}/baseline_model.json"), (tuned.model.to_json()? + "\n").into_bytes()));
    let eff_seed = subseed!(ls, "effect");
    let base_eff = stage(&format!("effect:{outcome}:{lid}"), eff_seed, || {
        estimate_effect(ctx, alg, &tuned, &ctx.final_train, None, eff_seed)
    })?;
    out.push((format!("{outcome}/{lid}/baseline_effect.json"), json(&base_eff)?));

    let base_row = ReportRow {
        outcome: outcome.to_string(),
        learner: alg.label().to_string(),
        generator: None,
        baseline: Some(Perf {
            auc: baseline.auc,
            ici: baseline.ici,
        }),
        augmented: None,
        reference_or: reference,
        baseline_or: Some(OrCell::from(&base_eff)),
        augmented_or: None,
    };
    if cfg.generators.is_empty() {
        return Ok((vec![base_row], out));
    }

    let s = &cfg.schedule;
    let sched_seed = subseed!(so, "schedule");
    let schedule = stage("schedule", sched_seed, || build_schedule_with(s.mu, s.sigma, s.n_draws, s.n_sizes, s.rounding, sched_seed))?;

    let mut rows = Vec::new();
    for &kind in &cfg.generators {
        let gid = kind.id();
        let gs = subseed!(ls, "generator", gid);
        let search = stage(&format!("augment-search:{outcome}:{lid}:{gid}"), cv_seed, || {
            augment_search_prepared(&ctx.prepared, ctx.n0, kind, &spec, &space, &schedule, &ctx.cv, &cfg.augment, cv_seed)
        })?;
        let mut grid = Vec::new();
        write_grid_csv(&search.records, &mut grid)?;
        out.push((format!("{outcome}/{lid}/{gid}/grid.csv"), grid));
        let n_opt = search.selection.n_opt;
        let at_opt = search
            .metrics
            .iter()
            .find(|(size, _)| *size == n_opt)
            .map(|(_, m)| m.clone())
            .expect("n_opt comes from the searched sizes");
        let sizes: BTreeMap<String, &crate::eval::Metrics> = search.metrics.iter().map(|(s, m)| (format!("{s:08}"), m)).collect();
        #[derive(Serialize)]
        struct SearchArtifact<'a> {
            selection: &'a crate::augment::AugSelection,
            metrics_by_size: BTreeMap<String, &'a crate::eval::Metrics>,
        }
        out.push((
            format!("{outcome}/{lid}/{gid}/search.json"),
            json(&SearchArtifact {
                selection: &search.selection,
                metrics_by_size: sizes,
            })?,
        ));

        let aug_seed = subseed!(gs, "final-augment");
        let augmented = stage(&format!("augment-final:{outcome}:{lid}:{gid}"), aug_seed, || {
            augment_table(&ctx.final_train, kind, n_opt, &cfg.augment.generator, aug_seed)
        })?;
        let fit_seed = subseed!(gs, "final");
        let tuned = stage(&format!("fit-augmented:{outcome}:{lid}:{gid}"), fit_seed, || {
            tune_and_fit(&spec, &space, &augmented.table, outcome, &cfg.tuning, fit_seed)
        })?;
        out.push((format!("{outcome}/{lid}/{gid}/augmented_model.json"), (tuned.model.to_json()? + "\n").into_bytes()));
        let eff_seed = subseed!(gs, "effect");
        let strata: Vec<usize> = augmented.origin.iter().map(|&o| usize::from(o == Origin::Synthetic)).collect();
        let mut aug_eff = stage(&format!("effect-augmented:{outcome}:{lid}:{gid}"), eff_seed, || {
            estimate_effect(ctx, alg, &tuned, &augmented.table, Some(&strata), eff_seed)
        })?;
        aug_eff.generator = Some(kind.label().to_string());
        out.push((format!("{outcome}/{lid}/{gid}/augmented_effect.json"), json(&aug_eff)?));

        rows.push(ReportRow {
            generator: Some(kind.label().to_string()),
            augmented: Some(Perf {
                auc: at_opt.auc,
                ici: at_opt.ici,
            }),
            augmented_or: Some(OrCell::from(&aug_eff)),
            ..base_row.clone()
        });
    }
    Ok((rows, out))
}
