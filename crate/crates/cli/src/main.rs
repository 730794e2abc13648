//! `pursuit`: train GP motion models, run pursuit scenarios and compare the
//! single-model and switched-model cases.
//!
//! Exit codes: 0 success, 2 config error, 3 missing artifact, 4 assumption
//! violation (including an aborted run), 1 anything else.

mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use pursuit_core::simulate::{
    self, generate_training, relative_improvement, run_scenario, summarize, train_models, write_comparison_csv,
    write_trace_csv, Case, Comparison, Trace, ViolationPolicy,
};
use pursuit_core::{Dataset, GpModel, PursuitError};

use config::{Config, Resolved};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing artifact: {0}")]
    Missing(String),
    #[error("assumption violated: {0}")]
    Violation(String),
    #[error("io error: {0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] PursuitError),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Missing(_) => 3,
            CliError::Violation(_) => 4,
            CliError::Core(
                PursuitError::AssumptionViolation(_)
                | PursuitError::FeatureBehindCamera { .. }
                | PursuitError::DegenerateView { .. },
            ) => 4,
            CliError::Io(_) | CliError::Core(_) => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "pursuit", version, about = "Visual pursuit with switched GP motion models")]
struct Cli {
    /// Worker threads for fitting restarts and seed sweeps.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON scenario file; omitted keys take the reference values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Simulated seconds.
    #[arg(long)]
    duration: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum CaseArg {
    /// One model trained on all profiles' data.
    Single,
    /// One model per profile, selected online.
    Switched,
}

impl From<CaseArg> for Case {
    fn from(c: CaseArg) -> Case {
        match c {
            CaseArg::Single => Case::Single,
            CaseArg::Switched => Case::Switched,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate (or load) training data, fit the models and write them.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        case: Option<CaseArg>,
        /// Same as `--case single`.
        #[arg(long, conflicts_with = "case")]
        single_model: bool,
    },
    /// Write the noisy training datasets only.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Run one scenario and write the trace and a summary.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Case trained in-process when no models are given.
        #[arg(long, value_enum)]
        case: Option<CaseArg>,
        /// Model files; overrides `paths.models` in the config.
        #[arg(long, num_args = 1..)]
        models: Vec<PathBuf>,
    },
    /// Run both cases on the same scenario, for one or more seeds. Runs always
    /// cover the full horizon; assumption events are counted, not fatal.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Number of consecutive seeds starting at the configured seed.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        /// Models for the single case instead of training them per seed.
        #[arg(long, num_args = 1..)]
        single_models: Vec<PathBuf>,
        /// Models for the switched case instead of training them per seed.
        #[arg(long, num_args = 1..)]
        switched_models: Vec<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("PURSUIT_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Io(e.to_string()))?;
    }
    match cli.command {
        Command::Train {
            common,
            case,
            single_model,
        } => {
            let case = if single_model { Some(CaseArg::Single) } else { case };
            cmd_train(&resolve(&common, case)?)
        }
        Command::GenData { common } => cmd_gen_data(&resolve(&common, None)?),
        Command::Simulate { common, case, models } => {
            let mut r = resolve(&common, case)?;
            if !models.is_empty() {
                r.models = models;
            }
            cmd_simulate(&r)
        }
        Command::Compare {
            common,
            seeds,
            single_models,
            switched_models,
        } => {
            if seeds == 0 {
                return Err(CliError::Config("--seeds must be at least 1".into()));
            }
            cmd_compare(&resolve(&common, None)?, seeds, &single_models, &switched_models)
        }
    }
}

/// Loads the config (if any) and applies the command-line overrides.
fn resolve(common: &Common, case: Option<CaseArg>) -> Result<Resolved, CliError> {
    let mut r = match &common.config {
        Some(path) => {
            let base = path.parent().unwrap_or(Path::new("."));
            Config::load(path)?.resolve(base)?
        }
        None => Resolved::reference(),
    };
    if let Some(seed) = common.seed {
        r.scenario.seed = seed;
    }
    if let Some(d) = common.duration {
        r.scenario.duration = d;
    }
    if let Some(out) = &common.out {
        r.out = Some(out.clone());
    }
    if let Some(c) = case {
        r.case = c.into();
    }
    r.validate()?;
    Ok(r)
}

fn out_dir(r: &Resolved) -> Result<PathBuf, CliError> {
    let dir = r.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Io(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn require(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Missing(format!("{what} {}", path.display())))
    }
}

/// Datasets from `paths.datasets` when given, otherwise freshly sampled.
fn datasets(r: &Resolved) -> Result<Vec<Dataset>, CliError> {
    if r.datasets.is_empty() {
        return Ok(generate_training(&r.scenario.profiles, &r.training, r.scenario.seed)?);
    }
    r.datasets
        .iter()
        .map(|p| {
            require(p, "dataset")?;
            Dataset::load_csv(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
        })
        .collect()
}

fn load_models(paths: &[PathBuf]) -> Result<Vec<GpModel>, CliError> {
    paths
        .iter()
        .map(|p| {
            require(p, "model file")?;
            GpModel::load(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
        })
        .collect()
}

fn model_file_name(case: Case, index: usize) -> String {
    match case {
        Case::Single => "model_single.json".to_string(),
        Case::Switched => format!("model_{}.json", index + 1),
    }
}

fn cmd_gen_data(r: &Resolved) -> Result<(), CliError> {
    let dir = out_dir(r)?;
    let data = generate_training(&r.scenario.profiles, &r.training, r.scenario.seed)?;
    for (k, d) in data.iter().enumerate() {
        let path = dir.join(format!("dataset_{}.csv", k + 1));
        d.save_csv(&path)?;
        println!("{}: {} points", path.display(), d.len());
    }
    Ok(())
}

fn cmd_train(r: &Resolved) -> Result<(), CliError> {
    let dir = out_dir(r)?;
    let data = datasets(r)?;
    if r.datasets.is_empty() {
        for (k, d) in data.iter().enumerate() {
            d.save_csv(&dir.join(format!("dataset_{}.csv", k + 1)))?;
        }
    }
    let models = train_models(&data, r.case, &r.training, r.scenario.seed)?;
    for (k, m) in models.iter().enumerate() {
        let path = dir.join(model_file_name(r.case, k));
        m.save(&path)?;
        let lml: Vec<String> = m
            .log_marginal_likelihoods()
            .iter()
            .map(|v| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3}")))
            .collect();
        println!(
            "{}: {} points, sigma_bar {:.4}, log marginal likelihood per output [{}]",
            path.display(),
            m.dataset().len(),
            m.sigma_bar(),
            lml.join(", ")
        );
    }
    Ok(())
}

/// Models from `paths.models`, or trained in-process for the configured case.
fn models_for(r: &Resolved, paths: &[PathBuf], case: Case) -> Result<Vec<GpModel>, CliError> {
    if !paths.is_empty() {
        return load_models(paths);
    }
    log::info!("no model files given; training {case:?} models for seed {}", r.scenario.seed);
    Ok(train_models(&datasets(r)?, case, &r.training, r.scenario.seed)?)
}

fn first_event(trace: &Trace) -> String {
    trace
        .events
        .first()
        .map_or_else(|| "run aborted".to_string(), |e| format!("t = {:.3} s: {}", e.t, e.message))
}

fn cmd_simulate(r: &Resolved) -> Result<(), CliError> {
    let models = models_for(r, &r.models, r.case)?;
    let dir = out_dir(r)?;
    let trace = run_scenario(&r.scenario, &models)?;
    let trace_path = dir.join("trace.csv");
    let mut w = create(&trace_path)?;
    write_trace_csv(&trace, &mut w)?;
    w.flush()?;
    let summary = summarize(&trace, &r.scenario, r.transient)?;
    write_json(&dir.join("summary.json"), &summary)?;

    println!("trace: {} ({} records)", trace_path.display(), summary.records);
    println!("mse {:.6e}, final |e| {:.6e}", summary.mse, summary.final_error);
    let times = |v: &[simulate::SwitchEvent]| {
        v.iter()
            .map(|s| format!("{:.2}s->{}", s.t, s.to))
            .collect::<Vec<_>>()
            .join(" ")
    };
    println!("true switches:      {}", times(&summary.true_switches));
    println!("estimated switches: {}", times(&summary.estimated_switches));
    if let Some(f) = summary.bound.inside_fraction_after_transient {
        println!("inside ellipse after {:.1} s: {:.2}%", summary.bound.transient, 100.0 * f);
    }
    if let Some(v) = &summary.bound.violation {
        println!("bound precondition: {v}");
    }
    if trace.aborted {
        return Err(CliError::Violation(first_event(&trace)));
    }
    for e in &trace.events {
        log::warn!("t = {:.3} s: {}", e.t, e.message);
    }
    Ok(())
}

#[derive(Serialize)]
struct CompareReport {
    runs: Vec<Comparison>,
    mean_improvement: f64,
    switched_wins: usize,
}

fn compare_seed(
    base: &Resolved,
    seed: u64,
    single: &[GpModel],
    switched: &[GpModel],
    dir: &Path,
) -> Result<Comparison, CliError> {
    let mut r = base.clone();
    r.scenario.seed = seed;
    // Both runs cover the whole horizon so their MSEs are comparable.
    r.scenario.policy = ViolationPolicy::Continue;
    let trained;
    let (single, switched) = if single.is_empty() || switched.is_empty() {
        let data = datasets(&r)?;
        trained = (
            train_models(&data, Case::Single, &r.training, seed)?,
            train_models(&data, Case::Switched, &r.training, seed)?,
        );
        (
            if single.is_empty() { &trained.0[..] } else { single },
            if switched.is_empty() { &trained.1[..] } else { switched },
        )
    } else {
        (single, switched)
    };
    let t1 = run_scenario(&r.scenario, single)?;
    let t2 = run_scenario(&r.scenario, switched)?;
    let mut w = create(&dir.join(format!("comparison_seed{seed}.csv")))?;
    write_comparison_csv(&t1, &t2, &mut w)?;
    w.flush()?;
    let (m1, m2) = (simulate::mse(&t1)?, simulate::mse(&t2)?);
    for (name, t) in [("single", &t1), ("switched", &t2)] {
        if !t.events.is_empty() {
            log::warn!("seed {seed}: {name} run had {} events, first {}", t.events.len(), first_event(t));
        }
    }
    Ok(Comparison {
        seed,
        mse_single: m1,
        mse_switched: m2,
        improvement: relative_improvement(m1, m2),
        events_single: t1.events.len(),
        events_switched: t2.events.len(),
    })
}

fn cmd_compare(r: &Resolved, seeds: u64, single_paths: &[PathBuf], switched_paths: &[PathBuf]) -> Result<(), CliError> {
    let single = load_models(single_paths)?;
    let switched = load_models(switched_paths)?;
    let dir = out_dir(r)?;
    let first = r.scenario.seed;
    let runs: Vec<Comparison> = (first..first + seeds)
        .into_par_iter()
        .map(|seed| compare_seed(r, seed, &single, &switched, &dir))
        .collect::<Result<_, _>>()?;

    let mut w = create(&dir.join("comparison.csv"))?;
    writeln!(w, "seed,mse_single,mse_switched,improvement,events_single,events_switched")?;
    for c in &runs {
        writeln!(
            w,
            "{},{:e},{:e},{:e},{},{}",
            c.seed, c.mse_single, c.mse_switched, c.improvement, c.events_single, c.events_switched
        )?;
    }
    w.flush()?;
    let mean = runs.iter().map(|c| c.improvement).sum::<f64>() / runs.len() as f64;
    let wins = runs.iter().filter(|c| c.mse_switched < c.mse_single).count();

    println!("{:>6} {:>14} {:>14} {:>12} {:>8}", "seed", "mse single", "mse switched", "improvement", "events");
    for c in &runs {
        println!(
            "{:>6} {:>14.6e} {:>14.6e} {:>11.2}% {:>3} / {:<3}",
            c.seed,
            c.mse_single,
            c.mse_switched,
            100.0 * c.improvement,
            c.events_single,
            c.events_switched
        );
    }
    println!("mean improvement {:.2}%, switched better on {wins}/{}", 100.0 * mean, runs.len());
    write_json(
        &dir.join("comparison.json"),
        &CompareReport {
            runs,
            mean_improvement: mean,
            switched_wins: wins,
        },
    )
}
