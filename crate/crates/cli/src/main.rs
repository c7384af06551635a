//! `accrual`: fit, forecast and simulate multicenter recruitment.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use accrual::sim::{run_cell, simulate_panel, write_report, CellReport, ScenarioConfig, PRESET_NAMES};
use accrual::{
    ingest_csv, pg_fit, pg_forecast, pg_posterior, select_model, summarize, time_to_target, tpg_forecast,
    write_csv, AccrualError, CandidateSet, EnrollmentPanel, Forecast, PgFit, TpgFit,
};
use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

#[derive(Parser)]
#[command(name = "accrual", version, about = "Poisson-Gamma recruitment forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the standard and/or time-dependent model to an enrollment file.
    Fit(FitArgs),
    /// Forecast additional enrollments from a saved or fresh fit.
    Forecast(ForecastArgs),
    /// Run one simulation cell and write its report.
    Simulate(SimulateArgs),
    /// Run the scenario grid and write one report row per cell.
    Evaluate(EvaluateArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Model {
    Pg,
    Tpg,
    Both,
}

#[derive(Args)]
struct DataArgs {
    /// Enrollment CSV with header `center_id,u,s,count`.
    data: PathBuf,
    /// Interim time; data after it are ignored.
    #[arg(long)]
    t_int: usize,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value = "both")]
    model: Model,
    /// Directory for pg_fit.json, tpg_fit.json and selection.csv.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ForecastArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Saved pg_fit.json or tpg_fit.json; without it the model is refitted.
    #[arg(long)]
    fit: Option<PathBuf>,
    /// Model to refit when no `--fit` is given.
    #[arg(long, value_enum, default_value = "tpg")]
    model: Model,
    /// Last forecast time; the grid is every time from t_int + 1 to T.
    #[arg(long = "T")]
    horizon: usize,
    /// Total enrollment target for time-to-target estimates.
    #[arg(long)]
    target: Option<u64>,
    /// Directory for forecast.csv, plot.csv and time_to_target.json.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Bundled preset name.
    #[arg(long, conflicts_with = "config")]
    scenario: Option<String>,
    /// Scenario JSON file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 200)]
    reps: usize,
    /// `tpg` skips the standard-model comparison.
    #[arg(long, value_enum, default_value = "both")]
    model: Model,
    /// Report CSV; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long = "C")]
    centers: Option<usize>,
    /// Interim time; repeat for several.
    #[arg(long)]
    t_int: Vec<usize>,
    #[arg(long = "T")]
    horizon: Option<usize>,
    /// 1 for common start, 2 for staggered initiation.
    #[arg(long)]
    setting: Option<u8>,
    #[arg(long)]
    case: Option<u8>,
    /// Also write replication 0's full panel as an enrollment CSV.
    #[arg(long)]
    emit_panel: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Center counts to run; repeat for several.
    #[arg(long = "C", default_values_t = [20usize, 60])]
    centers: Vec<usize>,
    /// Include the staggered-initiation cells.
    #[arg(long)]
    staggered: bool,
}

const DEFAULT_SEED: u64 = 20_240_601;

/// Exit status 2 marks bad input or usage, 1 a failed computation.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let code = match error.downcast_ref::<AccrualError>() {
            Some(
                AccrualError::NoEnrollments
                | AccrualError::InsufficientPlateauData(_)
                | AccrualError::NonFinite(_),
            ) => 1,
            Some(_) => 2,
            None if error.downcast_ref::<io::Error>().is_some() => 2,
            None if error.downcast_ref::<serde_json::Error>().is_some() => 2,
            None => 1,
        };
        Self { code, error }
    }
}

impl From<AccrualError> for Failure {
    fn from(error: AccrualError) -> Self {
        anyhow::Error::from(error).into()
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    let result = match cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Forecast(args) => cmd_forecast(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Evaluate(args) => cmd_evaluate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(value) = std::env::var("ACCRUAL_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .with_context(|| format!("ACCRUAL_THREADS must be a positive integer, got {value:?}"))?;
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn ensure_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create directory {}", dir.display()))?;
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(anyhow::Error::from)?;
    writeln!(w).and_then(|_| w.flush()).map_err(anyhow::Error::from)?;
    Ok(())
}

fn load_panel(args: &DataArgs) -> Result<EnrollmentPanel, Failure> {
    Ok(ingest_csv(&args.data, args.t_int)?)
}

fn cmd_fit(args: FitArgs) -> Result<(), Failure> {
    let panel = load_panel(&args.data)?;
    ensure_dir(&args.out_dir)?;
    if args.model != Model::Tpg {
        let fit = pg_fit(&summarize(&panel))?;
        write_json(&args.out_dir.join("pg_fit.json"), &fit)?;
    }
    if args.model != Model::Pg {
        let selection = select_model(&panel, &CandidateSet::default())?;
        let mut w = create(&args.out_dir.join("selection.csv"))?;
        selection.write_csv(&mut w)?;
        write_json(&args.out_dir.join("tpg_fit.json"), selection.best())?;
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SavedFit {
    Tpg(TpgFit),
    Pg(PgFit),
}

fn cmd_forecast(args: ForecastArgs) -> Result<(), Failure> {
    let panel = load_panel(&args.data)?;
    let t_int = panel.t_int();
    if args.horizon <= t_int {
        return Err(AccrualError::InvalidArgument(format!(
            "--T {} must exceed --t-int {t_int}",
            args.horizon
        ))
        .into());
    }
    let grid: Vec<usize> = (t_int + 1..=args.horizon).collect();
    let saved = match &args.fit {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|source| AccrualError::Open { path: path.clone(), source })?;
            serde_json::from_str(&text)
                .with_context(|| format!("{} is neither a pg nor a tpg fit", path.display()))?
        }
        None => match args.model {
            Model::Pg => SavedFit::Pg(pg_fit(&summarize(&panel))?),
            Model::Tpg => SavedFit::Tpg(select_model(&panel, &CandidateSet::default())?.into_best()),
            Model::Both => {
                return Err(AccrualError::InvalidArgument("forecast needs --model pg or tpg".into()).into())
            }
        },
    };
    let forecast = match &saved {
        SavedFit::Pg(fit) => pg_forecast(&pg_posterior(fit, &summarize(&panel)), t_int, &grid)?,
        SavedFit::Tpg(fit) => tpg_forecast(fit, &panel, &grid)?,
    };

    ensure_dir(&args.out_dir)?;
    forecast.write_csv(create(&args.out_dir.join("forecast.csv"))?)?;
    write_plot(&panel, &forecast, create(&args.out_dir.join("plot.csv"))?)?;
    if let Some(target) = args.target {
        let ttt = time_to_target(&forecast, panel.total_enrolled(), target);
        write_json(&args.out_dir.join("time_to_target.json"), &ttt)?;
    }
    Ok(())
}

/// Observed cumulative counts up to `t_int`, forecast totals after it.
fn write_plot<W: Write>(panel: &EnrollmentPanel, forecast: &Forecast, mut w: W) -> Result<(), Failure> {
    let summary = summarize(panel);
    let current = summary.total() as f64;
    let mut out = String::from("t,observed_cum,expected_cum,lower95,upper95\n");
    for (t, n) in summary.cumulative.iter().enumerate() {
        out.push_str(&format!("{},{n},,,\n", t + 1));
    }
    for p in &forecast.points {
        out.push_str(&format!(
            "{},,{},{},{}\n",
            p.t,
            current + p.expectation,
            current + p.lower95,
            current + p.upper95
        ));
    }
    w.write_all(out.as_bytes()).and_then(|_| w.flush()).map_err(anyhow::Error::from)?;
    Ok(())
}

fn base_scenario(args: &ScenarioArgs) -> Result<ScenarioConfig, Failure> {
    let mut cfg = match (&args.scenario, &args.config) {
        (Some(name), None) => ScenarioConfig::preset(name)?,
        (None, Some(path)) => {
            let text = fs::read_to_string(path)
                .map_err(|source| AccrualError::Open { path: path.clone(), source })?;
            serde_json::from_str(&text)
                .with_context(|| format!("invalid scenario file {}", path.display()))?
        }
        _ => {
            return Err(AccrualError::InvalidArgument(format!(
                "give --scenario ({}) or --config",
                PRESET_NAMES.join(", ")
            ))
            .into())
        }
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    } else if args.config.is_none() {
        cfg.seed = DEFAULT_SEED;
    }
    Ok(cfg)
}

fn report(args: &ScenarioArgs, rows: &[CellReport]) -> Result<(), Failure> {
    match &args.out {
        Some(path) => write_report(rows, create(path)?)?,
        None => write_report(rows, io::stdout().lock())?,
    }
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), Failure> {
    let mut cfg = base_scenario(&args.scenario)?;
    match args.setting {
        Some(2) => {
            let case = args.case.unwrap_or(cfg.case);
            cfg = cfg.staggered(case)?;
        }
        Some(1) => cfg.setting = 1,
        Some(other) => {
            return Err(AccrualError::InvalidArgument(format!("--setting must be 1 or 2, got {other}")).into())
        }
        None => {
            if let Some(case) = args.case {
                cfg.case = case;
            }
        }
    }
    if let Some(c) = args.centers {
        cfg.centers = c;
    }
    if !args.t_int.is_empty() {
        cfg.t_int_list = args.t_int.clone();
    }
    if let Some(t) = args.horizon {
        cfg.horizon = t;
    }
    cfg.validate()?;
    if let Some(path) = &args.emit_panel {
        write_csv(&simulate_panel(&cfg, 0)?, create(path)?)?;
    }
    let rows = run_cell(&cfg, args.scenario.reps, args.scenario.model != Model::Tpg)?;
    report(&args.scenario, &rows)
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), Failure> {
    let base = base_scenario(&args.scenario)?;
    let mut rows = Vec::new();
    let designs: Vec<Option<u8>> =
        if args.staggered && base.c2 > 0.0 { vec![None, Some(1), Some(2)] } else { vec![None] };
    for design in designs {
        let cfg = match design {
            None => base.clone(),
            Some(case) => base.clone().staggered(case)?,
        };
        for &centers in &args.centers {
            let cell = ScenarioConfig { centers, ..cfg.clone() };
            rows.extend(run_cell(&cell, args.scenario.reps, args.scenario.model != Model::Tpg)?);
        }
    }
    report(&args.scenario, &rows)
}
