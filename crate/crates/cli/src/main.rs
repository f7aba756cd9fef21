//! `vcarm`: run the virtual control arm workflow or any single stage of it.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use vcarm::augment::{augment_search, augment_table, build_schedule_with, write_grid_csv, AugmentOptions, Origin, Rounding, DEFAULT_MU, DEFAULT_SIGMA};
use vcarm::cohort::{load_cohort, split_folds_by, Cohort, CohortSchema};
use vcarm::effect::{bootstrap_ci, bootstrap_ci_refit, psm_match, BootstrapOptions, PsmOptions, VirtualOutcomes};
use vcarm::eval::cv::modeling_cohort;
use vcarm::eval::{nested_cv, tune_and_fit, CvConfig, TuneBudget};
use vcarm::impute::{fit_impute_features, ImputeOptions};
use vcarm::learners::{Algorithm, LearnerSpec};
use vcarm::pipeline::{run_pipeline, split_arms, RunConfig};
use vcarm::report::{emit_table, ReportRow, TableFormat};
use vcarm::simlab::{simulate_arms, simulate_cohort, SimCohortConfig};
use vcarm::subseed;
use vcarm::syngen::{fit_generator, sample, Generator, GeneratorKind, GeneratorOptions};

#[derive(Parser)]
#[command(name = "vcarm", version, about = "Virtual control arms from counterfactual outcome models")]
struct Cli {
    /// Master seed. Overrides the seed of a run config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a cohort with known potential outcomes.
    Simulate(SimulateArgs),
    /// Impute missing predictor cells with iterative random forests.
    Impute(ImputeArgs),
    /// Nested cross-validation of one learner on the control arm.
    Cv(CvArgs),
    /// Search the augmentation schedule for the best synthetic sample size.
    AugmentSearch(AugmentSearchArgs),
    /// Fit on the control arm and estimate the odds ratio on the treated arm.
    Estimate(EstimateArgs),
    /// Propensity-score-matched odds ratio.
    Psm(PsmArgs),
    /// Re-emit a run's report table.
    Report(ReportArgs),
    /// Run the full workflow from a config file.
    Run(RunArgs),
    /// Fit a generator and draw synthetic rows.
    Sample(SampleArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Cohort schema (TOML).
    #[arg(long)]
    schema: PathBuf,
    /// Cohort file (CSV).
    #[arg(long)]
    cohort: PathBuf,
}

impl DataArgs {
    fn load(&self) -> Result<Cohort> {
        let schema = CohortSchema::load(&self.schema)?;
        Ok(load_cohort(&self.cohort, &schema)?)
    }
}

#[derive(Args)]
struct ImputeFlags {
    #[arg(long, default_value_t = 5)]
    max_iters: usize,
    #[arg(long, default_value_t = 100)]
    n_trees: usize,
}

impl ImputeFlags {
    fn options(&self) -> ImputeOptions {
        ImputeOptions {
            max_iters: self.max_iters,
            n_trees: self.n_trees,
        }
    }
}

#[derive(Args)]
struct TuneFlags {
    #[arg(long, default_value_t = 10)]
    init_points: usize,
    /// Bayesian optimization iterations; 0 keeps the default hyperparameters.
    #[arg(long, default_value_t = 25)]
    iters: usize,
    #[arg(long, default_value_t = 3)]
    k_inner: usize,
}

impl TuneFlags {
    fn budget(&self) -> TuneBudget {
        TuneBudget {
            init_points: self.init_points,
            iters: self.iters,
            k_inner: self.k_inner,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Simulation config file, or `cidscann_like`.
    #[arg(long, default_value = "cidscann_like")]
    config: String,
    /// Total subjects, arms assigned by the propensity model.
    #[arg(long, conflicts_with_all = ["n_control", "n_treated"])]
    n: Option<usize>,
    #[arg(long, requires = "n_treated")]
    n_control: Option<usize>,
    #[arg(long, requires = "n_control")]
    n_treated: Option<usize>,
}

#[derive(Args)]
struct ImputeArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    impute: ImputeFlags,
}

#[derive(Args)]
struct CvArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    outcome: String,
    #[arg(long, default_value = "logistic")]
    learner: Algorithm,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[command(flatten)]
    tune: TuneFlags,
    #[command(flatten)]
    impute: ImputeFlags,
}

#[derive(Args)]
struct AugmentSearchArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    outcome: String,
    #[arg(long, default_value = "logistic")]
    learner: Algorithm,
    #[arg(long, default_value = "arf")]
    generator: GeneratorKind,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = DEFAULT_MU)]
    mu: f64,
    #[arg(long, default_value_t = DEFAULT_SIGMA)]
    sigma: f64,
    #[arg(long, default_value_t = 10)]
    draws: usize,
    #[arg(long, default_value_t = 23)]
    sizes: usize,
    #[command(flatten)]
    tune: TuneFlags,
    #[command(flatten)]
    impute: ImputeFlags,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    outcome: String,
    #[arg(long, default_value = "logistic")]
    learner: Algorithm,
    /// Augment the training table with this generator.
    #[arg(long, requires = "n_opt")]
    generator: Option<GeneratorKind>,
    /// Synthetic rows to append.
    #[arg(long)]
    n_opt: Option<usize>,
    #[arg(long, default_value_t = 1000)]
    n_boot: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Draw virtual outcomes per replicate instead of summing probabilities.
    #[arg(long)]
    monte_carlo: bool,
    /// Keep the fitted model fixed and resample treated patients only.
    #[arg(long)]
    fixed_model: bool,
    #[command(flatten)]
    tune: TuneFlags,
    #[command(flatten)]
    impute: ImputeFlags,
}

#[derive(Args)]
struct PsmArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    outcome: String,
    /// Matching covariates; every predictor when omitted.
    #[arg(long, value_delimiter = ',')]
    covariates: Vec<String>,
    /// Caliper in SDs of the propensity logit.
    #[arg(long, default_value_t = 0.2)]
    caliper: f64,
    #[arg(long)]
    no_caliper: bool,
    #[arg(long, default_value_t = 1000)]
    n_boot: usize,
    #[command(flatten)]
    impute: ImputeFlags,
}

#[derive(Args)]
struct ReportArgs {
    /// A run's `report_rows.json`.
    rows: PathBuf,
    #[arg(long, default_value = "markdown")]
    format: TableFormat,
    /// Only rows for this outcome.
    #[arg(long)]
    outcome: Option<String>,
}

#[derive(Args)]
struct RunArgs {
    /// Run config (TOML).
    config: PathBuf,
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "arf")]
    generator: GeneratorKind,
    /// Complete table to resample for the external generator.
    #[arg(long)]
    pool: Option<PathBuf>,
    #[arg(long)]
    n: usize,
    #[command(flatten)]
    impute: ImputeFlags,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(j) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn need_seed(cli: &Cli) -> Result<u64> {
    cli.seed.context("--seed is required")
}

fn out_path(cli: &Cli, default: &str) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Control rows of a cohort with a treatment column, or the whole cohort.
fn control_arm(cohort: Cohort) -> Result<(Cohort, Option<Cohort>)> {
    if cohort.schema().treatment_col.is_none() {
        return Ok((cohort, None));
    }
    let data = split_arms(cohort)?;
    Ok((data.controls, Some(data.treated)))
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => {
            let seed = need_seed(cli)?;
            let cfg = if a.config == "cidscann_like" {
                SimCohortConfig::cidscann_like()
            } else {
                SimCohortConfig::load(&a.config)?
            };
            let sim = match (a.n, a.n_control, a.n_treated) {
                (Some(n), _, _) => simulate_cohort(&cfg, n, seed)?,
                (None, Some(c), Some(t)) => simulate_arms(&cfg, c, t, seed)?,
                _ => bail!("give --n or both --n-control and --n-treated"),
            };
            let dir = out_path(cli, "simulated");
            std::fs::create_dir_all(&dir)?;
            write(&dir.join("schema.toml"), &sim.cohort.schema().to_toml_string())?;
            sim.cohort.save(dir.join("cohort.csv"))?;
            sim.potential.save(dir.join("potential_outcomes.csv"))?;
            println!("wrote {} rows to {}", sim.cohort.n_rows(), dir.display());
        }
        Command::Impute(a) => {
            let seed = need_seed(cli)?;
            let cohort = a.data.load()?;
            let imputed = fit_impute_features(&cohort, &a.impute.options(), seed)?;
            let out = out_path(cli, "imputed.csv");
            imputed.cohort().save(&out)?;
            println!("imputed {} rows in {} iterations -> {}", imputed.n_rows(), imputed.iterations_run, out.display());
        }
        Command::Cv(a) => {
            let seed = need_seed(cli)?;
            let (ctrl, _) = control_arm(a.data.load()?)?;
            let ctrl = modeling_cohort(&ctrl, &a.outcome)?;
            let plan = split_folds_by(&ctrl, a.k, subseed!(seed, "folds"), Some(&a.outcome))?;
            let mut cfg = CvConfig::new(&a.outcome);
            cfg.budget = a.tune.budget();
            cfg.impute = a.impute.options();
            let spec = LearnerSpec::new(a.learner);
            let m = nested_cv(&ctrl, &spec, &spec.space(), &plan, &cfg, seed, None)?;
            emit_json(cli, &m.to_json()?)?;
        }
        Command::AugmentSearch(a) => {
            let seed = need_seed(cli)?;
            let (ctrl, _) = control_arm(a.data.load()?)?;
            let ctrl = modeling_cohort(&ctrl, &a.outcome)?;
            let plan = split_folds_by(&ctrl, a.k, subseed!(seed, "folds"), Some(&a.outcome))?;
            let mut cfg = CvConfig::new(&a.outcome);
            cfg.budget = a.tune.budget();
            cfg.impute = a.impute.options();
            let schedule = build_schedule_with(a.mu, a.sigma, a.draws, a.sizes, Rounding::Ceiling, subseed!(seed, "schedule"))?;
            let spec = LearnerSpec::new(a.learner);
            let search = augment_search(&ctrl, a.generator, &spec, &spec.space(), &schedule, &plan, &cfg, &AugmentOptions::default(), seed)?;
            let dir = out_path(cli, "augment-search");
            std::fs::create_dir_all(&dir)?;
            let mut grid = Vec::new();
            write_grid_csv(&search.records, &mut grid)?;
            std::fs::write(dir.join("grid.csv"), grid)?;
            write(&dir.join("selection.json"), &serde_json::to_string_pretty(&search.selection)?)?;
            println!("n_opt = {}", search.selection.n_opt);
        }
        Command::Estimate(a) => {
            let seed = need_seed(cli)?;
            let (ctrl, treated) = control_arm(a.data.load()?)?;
            let treated = treated.context("estimation needs a cohort with a treatment column")?;
            let ctrl = modeling_cohort(&ctrl, &a.outcome)?;
            let impute = a.impute.options();
            let train = fit_impute_features(&ctrl, &impute, subseed!(seed, "impute"))?;
            let (train, strata) = match (a.generator, a.n_opt) {
                (Some(kind), Some(n)) => {
                    let aug = augment_table(&train, kind, n, &GeneratorOptions::default(), subseed!(seed, "augment"))?;
                    let strata: Vec<usize> = aug.origin.iter().map(|&o| usize::from(o == Origin::Synthetic)).collect();
                    (aug.table, Some(strata))
                }
                _ => (train, None),
            };
            let spec = LearnerSpec::new(a.learner);
            let tuned = tune_and_fit(&spec, &spec.space(), &train, &a.outcome, &a.tune.budget(), subseed!(seed, "fit"))?;
            let treated = modeling_cohort(&treated, &a.outcome)?;
            let treated = fit_impute_features(&treated, &impute, subseed!(seed, "impute-treated"))?;
            let opts = BootstrapOptions {
                n_boot: a.n_boot,
                alpha: a.alpha,
                mode: if a.monte_carlo { VirtualOutcomes::MonteCarlo } else { VirtualOutcomes::ExpectedEvents },
                refit: !a.fixed_model,
                ..BootstrapOptions::default()
            };
            let eff_seed = subseed!(seed, "effect");
            let mut est = if opts.refit {
                let spec = LearnerSpec {
                    algorithm: a.learner,
                    hyperparams: tuned.params.clone(),
                };
                bootstrap_ci_refit(&spec, &train, strata.as_deref(), &a.outcome, treated.cohort(), &opts, eff_seed)?
            } else {
                bootstrap_ci(&tuned.model, treated.cohort(), &a.outcome, &opts, &impute, eff_seed)?
            };
            est.generator = a.generator.map(|g| g.label().to_string());
            emit_json(cli, &est.to_json()?)?;
        }
        Command::Psm(a) => {
            let seed = need_seed(cli)?;
            let cohort = a.data.load()?;
            let schema = cohort.schema().clone();
            let treat = schema.treatment_col.clone().context("psm needs a treatment column")?;
            let features: Vec<String> = schema.feature_columns().into_iter().map(|c| c.name).collect();
            let mut names: Vec<&str> = features.iter().map(String::as_str).collect();
            names.push(&treat);
            names.push(&a.outcome);
            let projected = cohort.select_columns(&names)?;
            let y = projected.schema().require(&a.outcome)?;
            let projected = projected.select_rows(&projected.observed_rows(y));
            let imputed = fit_impute_features(&projected, &a.impute.options(), subseed!(seed, "impute"))?;
            let covariates: Vec<&str> = if a.covariates.is_empty() {
                features.iter().map(String::as_str).collect()
            } else {
                a.covariates.iter().map(String::as_str).collect()
            };
            let opts = PsmOptions {
                caliper: (!a.no_caliper).then_some(a.caliper),
                n_boot: a.n_boot,
                ..PsmOptions::default()
            };
            let (matched, est) = psm_match(imputed.cohort(), &covariates, &a.outcome, &opts, subseed!(seed, "match"))?;
            let doc = serde_json::json!({ "estimate": est, "matched": matched });
            emit_json(cli, &serde_json::to_string_pretty(&doc)?)?;
        }
        Command::Report(a) => {
            let text = std::fs::read_to_string(&a.rows).with_context(|| format!("reading {}", a.rows.display()))?;
            let mut rows: Vec<ReportRow> = serde_json::from_str(&text)?;
            if let Some(o) = &a.outcome {
                rows.retain(|r| &r.outcome == o);
            }
            let table = emit_table(&rows, a.format)?;
            match &cli.out {
                Some(p) => write(p, &table)?,
                None => print!("{table}"),
            }
        }
        Command::Run(a) => {
            let mut cfg = RunConfig::load(&a.config)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            cfg.out_dir = out_path(cli, "vcarm-out");
            let summary = run_pipeline(&cfg)?;
            println!("wrote {} artifacts to {}", summary.artifacts.len() + 1, cfg.out_dir.display());
        }
        Command::Sample(a) => {
            let seed = need_seed(cli)?;
            let cohort = a.data.load()?;
            let impute = a.impute.options();
            let gen = match a.generator {
                GeneratorKind::External => {
                    let pool_path = a.pool.as_ref().context("the external generator needs --pool")?;
                    let pool = load_cohort(pool_path, cohort.schema())?;
                    Generator::external(vcarm::impute::ImputedTable::from_complete(pool)?)
                }
                kind => {
                    let cohort = complete_outcomes(&cohort)?;
                    let imputed = fit_impute_features(&cohort, &impute, subseed!(seed, "impute"))?;
                    fit_generator(kind, &imputed, &GeneratorOptions::default(), subseed!(seed, "fit"))?
                }
            };
            let synth = sample(&gen, a.n, subseed!(seed, "sample"))?;
            let out = out_path(cli, "synthetic.csv");
            synth.cohort().save(&out)?;
            println!("wrote {} synthetic rows to {}", a.n, out.display());
        }
    }
    Ok(())
}

/// Rows with every outcome observed; generators model outcomes jointly with
/// the predictors and only predictor cells are imputed.
fn complete_outcomes(cohort: &Cohort) -> Result<Cohort> {
    let schema = cohort.schema();
    let mut keep = vec![true; cohort.n_rows()];
    for name in &schema.outcome_cols {
        let col = schema.require(name)?;
        let mut seen = vec![false; keep.len()];
        for r in cohort.observed_rows(col) {
            seen[r] = true;
        }
        keep.iter_mut().zip(seen).for_each(|(k, s)| *k &= s);
    }
    let rows: Vec<usize> = (0..keep.len()).filter(|&r| keep[r]).collect();
    if rows.is_empty() {
        bail!("no row has every outcome observed");
    }
    Ok(cohort.select_rows(&rows))
}

fn emit_json(cli: &Cli, text: &str) -> Result<()> {
    match &cli.out {
        Some(p) => write(p, &format!("{text}\n")),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}
