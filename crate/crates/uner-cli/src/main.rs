//! Command-line interface: fit, finite-population prediction, synthetic
//! data generation and the simulation studies.
//!
//! Exit codes: 0 success, 2 validation failure, 3 numerical failure,
//! 4 I/O failure. `UNER_THREADS` caps the worker thread count.

mod failure;
mod io;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use uner::diagnostics::{chain_summary, dic};
use uner::simulation::{
    gen_population, gen_scenario, run_design_sim, run_model_sim, McmcSettings, PopulationConfig,
    Scenario, ScenarioConfig,
};
use uner::{
    gibbs_ner, gibbs_uner, predict_finite_population, summarize_mu, validate_conditions,
    ChainConfig, ModelKind, PriorConfig, PredictionSummary, Strictness, TargetSpec, UnitDataset,
};

use failure::{CliResult, Failure};
use io::fmt_f64;
use manifest::RunManifest;

#[derive(Parser)]
#[command(
    name = "uner",
    version,
    about = "Bayesian nested error regression with uncertain random effects"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to unit-level CSV data and write posterior summaries.
    Fit(FitArgs),
    /// Predict finite-population means from unit data plus a population spec.
    PredictFp(PredictArgs),
    /// Run the model-based or design-based simulation study.
    Simulate(SimulateArgs),
    /// Generate a synthetic scenario dataset as CSV.
    Gen(GenArgs),
}

#[derive(Args, Clone)]
struct ChainArgs {
    /// Total sweeps including burn-in.
    #[arg(long, default_value_t = 6000)]
    iters: usize,
    /// Discarded initial sweeps.
    #[arg(long, default_value_t = 1000)]
    burnin: usize,
    /// Keep every k-th post-burn-in draw.
    #[arg(long, default_value_t = 1)]
    thin: usize,
    /// Base seed; all generator streams derive from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl ChainArgs {
    fn chain_config(&self) -> CliResult<ChainConfig> {
        Ok(ChainConfig::new(self.iters, self.burnin, self.thin, self.seed)?)
    }
}

#[derive(Args, Clone)]
struct PriorArgs {
    /// Prior switch threshold on the active-indicator count.
    #[arg(long, default_value_t = 5)]
    a: u32,
    /// Inverse-gamma shape for the proper branch (requires --b2).
    #[arg(long, requires = "b2", conflicts_with = "auto_hyper")]
    b1: Option<f64>,
    /// Inverse-gamma rate for the proper branch (requires --b1).
    #[arg(long, requires = "b1", conflicts_with = "auto_hyper")]
    b2: Option<f64>,
    /// Derive b1, b2 from the estimated sampling variance (default when
    /// b1/b2 are not given).
    #[arg(long, default_value_t = false)]
    auto_hyper: bool,
}

impl PriorArgs {
    fn prior_config(&self) -> CliResult<PriorConfig> {
        match (self.b1, self.b2) {
            (Some(b1), Some(b2)) => Ok(PriorConfig::new(self.a, b1, b2)?),
            _ => Ok(PriorConfig::auto(self.a)?),
        }
    }

    fn describe(&self) -> serde_json::Value {
        json!({
            "a": self.a,
            "b1": self.b1,
            "b2": self.b2,
            "auto_hyper": self.b1.is_none(),
        })
    }
}

#[derive(Args)]
struct FitArgs {
    /// Unit-level CSV (`area_id,y,x1,...`).
    #[arg(long)]
    input: PathBuf,
    /// Model to fit.
    #[arg(long, default_value = "uner")]
    model: String,
    /// Prepend a constant-one covariate column.
    #[arg(long, default_value_t = false)]
    intercept: bool,
    #[command(flatten)]
    chain: ChainArgs,
    #[command(flatten)]
    prior: PriorArgs,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    /// Unit-level CSV (`area_id,y,x1,...`).
    #[arg(long)]
    input: PathBuf,
    /// Population spec CSV (`area_id,N,xbar1,...`).
    #[arg(long)]
    population: PathBuf,
    #[arg(long, default_value = "uner")]
    model: String,
    #[arg(long, default_value_t = false)]
    intercept: bool,
    #[command(flatten)]
    chain: ChainArgs,
    #[command(flatten)]
    prior: PriorArgs,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario tag (S1..S4) for the model-based study.
    #[arg(long, conflicts_with = "design")]
    scenario: Option<String>,
    /// Run the design-based finite-population study instead.
    #[arg(long, default_value_t = false)]
    design: bool,
    /// Units per area (model study).
    #[arg(long, default_value_t = 6)]
    n: usize,
    /// Areas (model study) or populations (design study).
    #[arg(long, default_value_t = 50)]
    m: usize,
    /// Replications.
    #[arg(long, default_value_t = 200)]
    reps: usize,
    /// Sampling rates for the design study (repeatable).
    #[arg(long = "pi", value_name = "PI")]
    pi: Vec<f64>,
    /// Population size per area for the design study.
    #[arg(long, default_value_t = 25)]
    pop_size: usize,
    /// Chain sweeps per fit; the default is the desk-scale 2500/500.
    #[arg(long, default_value_t = 2500)]
    iters: usize,
    #[arg(long, default_value_t = 500)]
    burnin: usize,
    #[arg(long, default_value_t = 1)]
    thin: usize,
    /// Full-scale chains (6000 sweeps, 1000 burn-in) regardless of
    /// --iters/--burnin.
    #[arg(long, default_value_t = false)]
    full_scale: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    prior: PriorArgs,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct GenArgs {
    /// Scenario tag (S1..S4).
    #[arg(long, default_value = "S2")]
    scenario: String,
    #[arg(long, default_value_t = 6)]
    n: usize,
    #[arg(long, default_value_t = 50)]
    m: usize,
    /// Replication index within the configuration.
    #[arg(long, default_value_t = 0)]
    rep: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(threads) = std::env::var("UNER_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let result = match cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::PredictFp(args) => cmd_predict_fp(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Gen(args) => cmd_gen(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}

fn parse_model(raw: &str) -> CliResult<ModelKind> {
    Ok(raw.parse::<ModelKind>()?)
}

fn parse_scenario(raw: &str) -> CliResult<Scenario> {
    Ok(raw.parse::<Scenario>()?)
}

fn ensure_out_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

/// Propriety must hold to fit; the finite-variance tier only warns.
fn gate_conditions(data: &UnitDataset, prior: &PriorConfig) -> CliResult<()> {
    let propriety = validate_conditions(data, prior, Strictness::Propriety);
    if !propriety.passed() {
        return Err(Failure::Validation(format!(
            "posterior propriety requires: {}",
            propriety.violations().join("; ")
        )));
    }
    let finite = validate_conditions(data, prior, Strictness::FiniteVariance);
    if !finite.passed() {
        eprintln!(
            "warning: finite posterior variances not guaranteed: {}",
            finite.violations().join("; ")
        );
    }
    Ok(())
}

fn warn_low_retention(cfg: &ChainConfig) {
    if cfg.low_retention() {
        eprintln!(
            "warning: only {} retained draws; consider more iterations",
            cfg.retained()
        );
    }
}

fn area_rows(summaries: &[PredictionSummary], with_indicator: bool) -> Vec<Vec<String>> {
    summaries
        .iter()
        .map(|s| {
            let mut row = vec![
                s.area_id.clone(),
                fmt_f64(s.point),
                fmt_f64(s.sd),
                fmt_f64(s.ci_lo),
                fmt_f64(s.ci_hi),
            ];
            if with_indicator {
                row.push(fmt_f64(s.p_tilde_mean.unwrap_or(f64::NAN)));
            }
            row
        })
        .collect()
}

fn cmd_fit(args: FitArgs) -> CliResult<()> {
    let start = Instant::now();
    let model = parse_model(&args.model)?;
    let data = io::read_unit_csv(&args.input, args.intercept)?;
    let prior = args.prior.prior_config()?;
    if model == ModelKind::Uner {
        gate_conditions(&data, &prior)?;
    }
    let cfg = args.chain.chain_config()?;
    warn_low_retention(&cfg);
    ensure_out_dir(&args.out_dir)?;

    let chain = match model {
        ModelKind::Uner => gibbs_uner(&data, &prior, &cfg)?,
        ModelKind::Ner => gibbs_ner(&data, &cfg)?,
    };
    let target = TargetSpec::area_means(&data);
    let mu = summarize_mu(&chain, &data, &target)?;
    let params = chain_summary(&chain)?;
    let dic_report = dic(&chain, &data)?;

    let param_rows: Vec<Vec<String>> = params
        .iter()
        .map(|p| {
            vec![
                p.name.clone(),
                fmt_f64(p.mean),
                fmt_f64(p.sd),
                fmt_f64(p.ci_lo),
                fmt_f64(p.ci_hi),
                fmt_f64(p.split_half),
                p.flagged.to_string(),
            ]
        })
        .collect();
    io::write_csv(
        &args.out_dir.join("params.csv"),
        &["parameter", "mean", "sd", "ci_lo", "ci_hi", "split_half", "flagged"],
        &param_rows,
    )?;

    let with_indicator = model == ModelKind::Uner;
    let mut area_header = vec!["area_id", "mu_mean", "mu_sd", "mu_ci_lo", "mu_ci_hi"];
    if with_indicator {
        area_header.push("p_tilde_mean");
    }
    io::write_csv(
        &args.out_dir.join("areas.csv"),
        &area_header,
        &area_rows(&mu, with_indicator),
    )?;

    io::write_csv(
        &args.out_dir.join("dic.csv"),
        &["dic", "dbar", "d_at_mean", "p_d"],
        &[vec![
            fmt_f64(dic_report.dic),
            fmt_f64(dic_report.dbar),
            fmt_f64(dic_report.d_at_mean),
            fmt_f64(dic_report.p_d),
        ]],
    )?;

    let mut manifest = RunManifest::new(
        "fit",
        args.chain.seed,
        json!({
            "input": args.input.display().to_string(),
            "model": model.as_str(),
            "intercept": args.intercept,
            "iters": args.chain.iters,
            "burnin": args.chain.burnin,
            "thin": args.chain.thin,
            "prior": args.prior.describe(),
        }),
    );
    manifest.dataset_fingerprint = Some(chain.dataset_fingerprint.clone());
    manifest.outputs = vec!["params.csv".into(), "areas.csv".into(), "dic.csv".into()];
    manifest.write(&args.out_dir, start.elapsed())?;
    println!(
        "fit: wrote {} (DIC {})",
        args.out_dir.display(),
        fmt_f64(dic_report.dic)
    );
    Ok(())
}

fn cmd_predict_fp(args: PredictArgs) -> CliResult<()> {
    let start = Instant::now();
    let model = parse_model(&args.model)?;
    let data = io::read_unit_csv(&args.input, args.intercept)?;
    let spec = io::read_population_csv(&args.population, args.intercept)?;
    spec.validate_against(&data)?;
    let prior = args.prior.prior_config()?;
    if model == ModelKind::Uner {
        gate_conditions(&data, &prior)?;
    }
    let cfg = args.chain.chain_config()?;
    warn_low_retention(&cfg);
    ensure_out_dir(&args.out_dir)?;

    let summaries = predict_finite_population(&data, &spec, model, &prior, &cfg)?;
    let with_indicator = model == ModelKind::Uner;
    let mut header = vec!["area_id", "ybar_mean", "ybar_sd", "ci_lo", "ci_hi"];
    if with_indicator {
        header.push("p_tilde_mean");
    }
    io::write_csv(
        &args.out_dir.join("prediction.csv"),
        &header,
        &area_rows(&summaries, with_indicator),
    )?;

    let mut manifest = RunManifest::new(
        "predict-fp",
        args.chain.seed,
        json!({
            "input": args.input.display().to_string(),
            "population": args.population.display().to_string(),
            "model": model.as_str(),
            "intercept": args.intercept,
            "iters": args.chain.iters,
            "burnin": args.chain.burnin,
            "thin": args.chain.thin,
            "prior": args.prior.describe(),
        }),
    );
    manifest.dataset_fingerprint = Some(data.fingerprint());
    manifest.outputs = vec!["prediction.csv".into()];
    manifest.write(&args.out_dir, start.elapsed())?;
    println!("predict-fp: wrote {}", args.out_dir.display());
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> CliResult<()> {
    let start = Instant::now();
    let mcmc = if args.full_scale {
        McmcSettings::full_scale()
    } else {
        McmcSettings {
            iterations: args.iters,
            burnin: args.burnin,
            thin: args.thin,
        }
    };
    let prior = args.prior.prior_config()?;
    ensure_out_dir(&args.out_dir)?;

    if args.design {
        let rates = if args.pi.is_empty() {
            vec![0.3, 0.5, 0.7, 0.9]
        } else {
            args.pi.clone()
        };
        let population = gen_population(&PopulationConfig::new(args.m, args.pop_size, args.seed))?;
        let mut smse_rows = Vec::new();
        let mut coverage_rows = Vec::new();
        for &pi in &rates {
            let result = run_design_sim(&population, pi, args.reps, &mcmc, &prior, args.seed)?;
            for (i, id) in result.area_ids.iter().enumerate() {
                smse_rows.push(vec![
                    fmt_f64(pi),
                    id.clone(),
                    fmt_f64(result.smse_uner[i]),
                    fmt_f64(result.smse_ner[i]),
                    fmt_f64(result.ratio[i]),
                ]);
            }
            coverage_rows.push(vec![fmt_f64(pi), "uner".into(), fmt_f64(result.coverage_uner)]);
            coverage_rows.push(vec![fmt_f64(pi), "ner".into(), fmt_f64(result.coverage_ner)]);
            println!(
                "design pi={pi}: median ratio {}",
                fmt_f64(uner::simulation::median(&result.ratio))
            );
        }
        io::write_csv(
            &args.out_dir.join("smse.csv"),
            &["pi", "area_id", "smse_uner", "smse_ner", "ratio"],
            &smse_rows,
        )?;
        io::write_csv(
            &args.out_dir.join("coverage.csv"),
            &["pi", "model", "coverage_pct"],
            &coverage_rows,
        )?;
        let mut manifest = RunManifest::new(
            "simulate-design",
            args.seed,
            json!({
                "m": args.m,
                "pop_size": args.pop_size,
                "reps": args.reps,
                "pi": rates,
                "iters": mcmc.iterations,
                "burnin": mcmc.burnin,
                "thin": mcmc.thin,
                "prior": args.prior.describe(),
            }),
        );
        manifest.outputs = vec!["smse.csv".into(), "coverage.csv".into()];
        manifest.write(&args.out_dir, start.elapsed())?;
        return Ok(());
    }

    let Some(tag) = args.scenario.as_deref() else {
        return Err(Failure::Validation(
            "choose either --scenario <S1..S4> or --design".into(),
        ));
    };
    let scenario = parse_scenario(tag)?;
    let cfg = ScenarioConfig::new(scenario, args.n, args.m, args.reps, args.seed)?;
    let result = run_model_sim(&cfg, &mcmc, &prior)?;
    let rows = vec![
        vec![
            scenario.as_str().into(),
            args.n.to_string(),
            args.m.to_string(),
            "uner".into(),
            fmt_f64(result.uner.mse),
            fmt_f64(result.uner.bias),
            fmt_f64(result.uner.cp),
        ],
        vec![
            scenario.as_str().into(),
            args.n.to_string(),
            args.m.to_string(),
            "ner".into(),
            fmt_f64(result.ner.mse),
            fmt_f64(result.ner.bias),
            fmt_f64(result.ner.cp),
        ],
    ];
    io::write_csv(
        &args.out_dir.join("metrics.csv"),
        &["scenario", "n", "m", "model", "mse", "bias", "cp"],
        &rows,
    )?;
    let mut manifest = RunManifest::new(
        "simulate-model",
        args.seed,
        json!({
            "scenario": scenario.as_str(),
            "n": args.n,
            "m": args.m,
            "reps": args.reps,
            "iters": mcmc.iterations,
            "burnin": mcmc.burnin,
            "thin": mcmc.thin,
            "prior": args.prior.describe(),
        }),
    );
    manifest.outputs = vec!["metrics.csv".into()];
    manifest.write(&args.out_dir, start.elapsed())?;
    println!(
        "simulate {}: UNER mse {} / NER mse {}",
        scenario.as_str(),
        fmt_f64(result.uner.mse),
        fmt_f64(result.ner.mse)
    );
    Ok(())
}

fn cmd_gen(args: GenArgs) -> CliResult<()> {
    let scenario = parse_scenario(&args.scenario)?;
    let cfg = ScenarioConfig::new(scenario, args.n, args.m, args.rep + 1, args.seed)?;
    let rep = gen_scenario(&cfg, args.rep)?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    io::write_unit_csv(&args.out, &rep.data, true)?;
    println!("gen: wrote {} ({} rows)", args.out.display(), rep.data.n_total());
    Ok(())
}
