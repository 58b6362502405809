use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use thermoflux::data::{add_noise, SplitLabel, SplitPlan};
use thermoflux::features::{build_features_at, feature_keys, rows_within_segments, LagWindow};
use thermoflux::harness::{load_config, run_experiment_with, Preset, RunReport};
use thermoflux::hydro::io::{read_forcing_file, read_sim_file, write_forcing_file, write_sim_file};
use thermoflux::hydro::{generate_forcing, simulate};
use thermoflux::interpret::ale_table;
use thermoflux::metrics::stratified;
use thermoflux::smoothing::{smooth_by_segments, WindowFilter, WindowKind};
use thermoflux::{
    Condition, Error, Family, FittedModel, FluxSeries, Matrix, ModelSpec, TemperatureField,
    TrainData,
};

/// Streambed exchange-flux inference from subsurface temperature records.
#[derive(Parser)]
#[command(name = "thermoflux", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the column model and write flux plus sensor temperatures.
    Simulate(SimulateArgs),
    /// Add measurement noise at a given SNR, optionally followed by a window filter.
    Corrupt(CorruptArgs),
    /// Fit one model on the training and validation rows of a series.
    Train(TrainArgs),
    /// Score a fitted model on the test rows of a series.
    Evaluate(EvaluateArgs),
    /// ALE importance of every feature on the test rows.
    Importance(ImportanceArgs),
    /// Print the summary table of a finished run.
    Report(ReportArgs),
    /// Run the full experiment grid from a config file.
    Run(RunArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Experiment config supplying the column, forcing and sensor depths.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_parser = parse_preset)]
    preset: Option<Preset>,
    /// Output CSV: `time_s,flux_m_s,temp_<depth>...`.
    #[arg(long)]
    out: PathBuf,
    /// Also write the forcing series used.
    #[arg(long)]
    forcing_out: Option<PathBuf>,
}

#[derive(Args)]
struct CorruptArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    snr: f64,
    #[arg(long, default_value_t = 4242)]
    seed: u64,
    /// Window filter applied per split segment after the noise.
    #[arg(long, value_parser = parse_kind, requires = "window")]
    filter: Option<WindowKind>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone, Copy)]
struct LagArgs {
    #[arg(long, default_value_t = -6, allow_hyphen_values = true)]
    lag_min: i32,
    #[arg(long, default_value_t = 6, allow_hyphen_values = true)]
    lag_max: i32,
}

impl LagArgs {
    fn window(self) -> LagWindow {
        LagWindow {
            lag_min: self.lag_min,
            lag_max: self.lag_max,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Series CSV as written by `simulate` or `corrupt`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_parser = parse_family, required_unless_present = "spec")]
    family: Option<Family>,
    /// Picks the default hyperparameters for this data condition.
    #[arg(long, value_parser = parse_condition, default_value = "noise-free")]
    condition: Condition,
    /// JSON model spec replacing the family defaults.
    #[arg(long, conflicts_with = "family")]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    lags: LagArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Write `time_index,obs_flux,pred_flux` for the test rows.
    #[arg(long)]
    predictions: Option<PathBuf>,
}

#[derive(Args)]
struct ImportanceArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 10)]
    bins: usize,
    /// Evenly thinned test rows used for the curves.
    #[arg(long, default_value_t = 2000)]
    max_rows: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Output directory of a `run`, or its report.json.
    path: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_parser = parse_preset)]
    preset: Option<Preset>,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, short)]
    quiet: bool,
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_kind(s: &str) -> Result<WindowKind, String> {
    serde_json::from_value(json!(s.to_lowercase())).map_err(|_| format!("unknown window `{s}`"))
}

fn parse_family(s: &str) -> Result<Family, String> {
    Family::ALL
        .into_iter()
        .find(|f| f.name().eq_ignore_ascii_case(s))
        .ok_or_else(|| format!("unknown family `{s}` (gbt, mlp, cnn, bilstm)"))
}

fn parse_condition(s: &str) -> Result<Condition, String> {
    match s {
        "noise-free" | "noise_free" | "clean" => Ok(Condition::NoiseFree),
        "noisy" => Ok(Condition::Noisy),
        "filtered" => Ok(Condition::Filtered),
        _ => Err(format!("unknown condition `{s}` (noise-free, noisy, filtered)")),
    }
}

/// Rows of a series grouped by split label, each fully inside one segment.
struct Rows {
    fit: Vec<usize>,
    test: Vec<usize>,
}

fn split_rows(n: usize, lags: LagWindow) -> Result<Rows> {
    let plan = SplitPlan::reference_scaled(n);
    let labels = plan.labels(n)?;
    let mut all: Vec<usize> = rows_within_segments(n, &plan.segments(n)?, lags)
        .into_iter()
        .flatten()
        .collect();
    all.sort_unstable();
    let (test, fit) = all.into_iter().partition(|&t| labels[t] == SplitLabel::Test);
    Ok(Rows { fit, test })
}

fn design(field: &TemperatureField, flux: &FluxSeries, lags: LagWindow, times: &[usize]) -> Result<(Matrix, Vec<f64>)> {
    let fm = build_features_at(field, lags, times)?;
    Ok((fm.rows, times.iter().map(|&t| flux.values[t]).collect()))
}

fn read_model(path: &Path) -> Result<(LagWindow, FittedModel)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut doc: serde_json::Value = serde_json::from_str(&text)?;
    let lags = serde_json::from_value(doc["lags"].take()).context("model file lacks `lags`")?;
    let model = serde_json::from_value(doc["model"].take()).context("model file lacks `model`")?;
    Ok((lags, model))
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let config = load_config(&a.config, a.preset)?;
    let forcing = match &config.simulation.forcing_csv {
        Some(p) => read_forcing_file(p)?,
        None => generate_forcing(&config.simulation.forcing, config.simulation.n_steps)?,
    };
    let sim = simulate(&config.simulation.column, &forcing, &config.sensors, &[])?;
    write_sim_file(&sim.flux, &sim.temps, &a.out)?;
    if let Some(p) = &a.forcing_out {
        write_forcing_file(&forcing, p)?;
    }
    eprintln!("wrote {} steps to {}", sim.flux.len(), a.out.display());
    Ok(())
}

fn cmd_corrupt(a: CorruptArgs) -> Result<()> {
    let (flux, temps) = read_sim_file(&a.input)?;
    let mut out = add_noise(&temps, a.snr, a.seed)?;
    if let (Some(kind), Some(len)) = (a.filter, a.window) {
        let n = out.n_times();
        let segments = SplitPlan::reference_scaled(n).segments(n)?;
        out = smooth_by_segments(&out, &WindowFilter::new(kind, len)?, &segments)?;
    }
    write_sim_file(&flux, &out, &a.out)?;
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let spec: ModelSpec = match &a.spec {
        Some(p) => serde_json::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
        None => ModelSpec::tuned(a.family.expect("clap enforces family or spec"), a.condition),
    };
    let lags = a.lags.window();
    let (flux, temps) = read_sim_file(&a.input)?;
    let rows = split_rows(flux.len(), lags)?;
    if rows.fit.len() < 2 {
        bail!("series too short: {} training rows", rows.fit.len());
    }
    let (x, y) = design(&temps, &flux, lags, &rows.fit)?;
    let model = spec.fit(&TrainData {
        x: &x,
        y: &y,
        validation: None,
        steps: lags.n_lags(),
        seed: a.seed,
    })?;
    let doc = json!({ "lags": lags, "spec": spec, "model": model });
    fs::write(&a.out, serde_json::to_string(&doc)?).with_context(|| format!("writing {}", a.out.display()))?;
    eprintln!("trained {} on {} rows", spec.family().name(), rows.fit.len());
    Ok(())
}

fn test_design(model: &Path, input: &Path) -> Result<(FittedModel, Vec<usize>, Matrix, Vec<f64>, TemperatureField, LagWindow)> {
    let (lags, model) = read_model(model)?;
    let (flux, temps) = read_sim_file(input)?;
    let rows = split_rows(flux.len(), lags)?;
    if rows.test.is_empty() {
        bail!("series has no test rows");
    }
    let (x, y) = design(&temps, &flux, lags, &rows.test)?;
    Ok((model, rows.test, x, y, temps, lags))
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let (model, times, x, y, _, _) = test_design(&a.model, &a.input)?;
    let pred = model.predict(&x)?;
    let report = stratified(&pred, &y)?;
    if let Some(p) = &a.predictions {
        let mut text = String::from("time_index,obs_flux,pred_flux\n");
        for ((t, o), q) in times.iter().zip(&y).zip(&pred) {
            text.push_str(&format!("{t},{o},{q}\n"));
        }
        fs::write(p, text).with_context(|| format!("writing {}", p.display()))?;
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn cmd_importance(a: ImportanceArgs) -> Result<()> {
    let (model, _, x, _, temps, lags) = test_design(&a.model, &a.input)?;
    let stride = x.rows().div_ceil(a.max_rows.max(1)).max(1);
    let picks: Vec<usize> = (0..x.rows()).step_by(stride).collect();
    let sample = x.select_rows(&picks);
    let keys = feature_keys(temps.depths(), lags);
    let predict = |m: &Matrix| model.predict(m);
    let (_, table) = ale_table(&predict, &sample, &keys, a.bins)?;
    let file = fs::File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    table.write_csv(file)?;
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let path = if a.path.is_dir() { a.path.join("report.json") } else { a.path };
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let report: RunReport = serde_json::from_str(&text)?;
    print_summary(&report);
    Ok(())
}

fn print_summary(report: &RunReport) {
    println!("{:<10} {:<22} {:>12} {:>12} {:>8}", "model", "condition", "rmse_mean", "rmse_var", "r2");
    for s in &report.summaries {
        match &s.summary {
            Some(sum) => println!(
                "{:<10} {:<22} {:>12.4e} {:>12.4e} {:>8}",
                s.model,
                s.condition,
                sum.rmse.mean,
                sum.rmse.variance,
                sum.r2.map_or("-".into(), |r| format!("{:.3}", r.mean))
            ),
            None => println!("{:<10} {:<22} {:>12}", s.model, s.condition, "failed"),
        }
    }
    for c in &report.conditions {
        if let (Some(f), Some(n)) = (c.filter, c.window_length) {
            println!("window {}: {} = {}", c.key, f.name(), n);
        }
    }
    if report.has_failures() {
        println!("{} cell(s) failed", report.failed_cells);
        for c in report.cells.iter().filter(|c| c.metrics.is_none()) {
            println!("  {}: {:?}", c.key, c.status);
        }
    }
}

fn cmd_run(a: RunArgs) -> Result<ExitCode> {
    let loaded = load_config(&a.config, a.preset).and_then(|mut config| {
        if let Some(w) = a.workers {
            config.workers = w;
        }
        if let Some(out) = a.out {
            config.output_dir = Some(out);
        }
        config.validate().map(|_| config)
    });
    let config = match loaded {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(ExitCode::from(2));
        }
    };
    let quiet = a.quiet;
    let report = run_experiment_with(&config, &|msg| {
        if !quiet {
            eprintln!("{msg}");
        }
    })?;
    if !quiet {
        print_summary(&report);
        eprintln!("artifacts in {}", config.output_dir().display());
    }
    Ok(if report.has_failures() { ExitCode::from(1) } else { ExitCode::SUCCESS })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let is_run = matches!(cli.command, Command::Run(_));
    let result = match cli.command {
        Command::Simulate(a) => cmd_simulate(a).map(|_| ExitCode::SUCCESS),
        Command::Corrupt(a) => cmd_corrupt(a).map(|_| ExitCode::SUCCESS),
        Command::Train(a) => cmd_train(a).map(|_| ExitCode::SUCCESS),
        Command::Evaluate(a) => cmd_evaluate(a).map(|_| ExitCode::SUCCESS),
        Command::Importance(a) => cmd_importance(a).map(|_| ExitCode::SUCCESS),
        Command::Report(a) => cmd_report(a).map(|_| ExitCode::SUCCESS),
        Command::Run(a) => cmd_run(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            // Config problems in `run` exit early with 2; anything that
            // breaks mid-pipeline counts as a failure.
            if is_run { ExitCode::from(1) } else { ExitCode::from(2) }
        }
    }
}
