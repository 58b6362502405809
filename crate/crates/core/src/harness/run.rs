//! The experiment grid: simulate → corrupt → tune filters → featurize →
//! split → train per model × condition × seed → evaluate → interpret →
//! report.

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, FilterTuning};
use super::snapshots::{snapshot_profiles, snapshot_times, write_profile_window};
use crate::data::{add_noise, FluxSeries, SplitLabel, SplitPlan, TemperatureField};
use crate::error::{Error, Result};
use crate::features::{build_features_at, rows_within_segments, FeatureKey, LagWindow};
use crate::gbt::{fit_gbt, predict_gbt};
use crate::hydro::{generate_forcing, io::read_forcing_file, simulate, SimOutput};
use crate::interpret::{
    ale_table, default_top_k, jaccard_topk, pool_importance, write_pooled_csv, GroupBy,
    ImportanceTable, PooledImportance,
};
use crate::matrix::Matrix;
use crate::metrics::{rmse, stratified, summarize_seeds, EvalReport, SeedSummary};
use crate::regressor::{Condition, Family, FittedModel, ModelSpec, TrainData};
use crate::smoothing::{
    select_window_length, smooth_by_segments, WindowFilter, WindowKind, WindowScores,
};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub key: String,
    /// Absent for noise-free inputs.
    pub snr: Option<f64>,
    pub filter: Option<WindowKind>,
    pub window_length: Option<usize>,
    /// Validation RMSE of the proxy model per candidate window length.
    pub window_scores: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub spec: ModelSpec,
    pub validation_rmse: Option<f64>,
    pub best_epoch: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best_index: usize,
    pub points: Vec<GridPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub model: String,
    pub condition: String,
    /// Spec used for the final per-seed fits.
    pub chosen: ModelSpec,
    /// Empty when there was only one candidate.
    pub search: Option<GridResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    Failed { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub key: String,
    pub model: String,
    pub family: Family,
    pub condition: String,
    pub seed: u64,
    #[serde(flatten)]
    pub status: CellStatus,
    pub metrics: Option<EvalReport>,
    /// ALE variation per feature, in feature-key order.
    pub ale_importance: Option<Vec<f64>>,
    /// Total split gain per feature, for tree ensembles.
    pub intrinsic_importance: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryReport {
    pub model: String,
    pub condition: String,
    pub summary: Option<SeedSummary>,
    pub failed_seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledReport {
    pub model: String,
    pub condition: String,
    pub by_kind: Vec<PooledImportance>,
    pub by_depth: Vec<PooledImportance>,
    pub by_lag: Vec<PooledImportance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JaccardReport {
    pub condition: String,
    pub k: usize,
    pub models: Vec<String>,
    pub matrix: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub n_train_rows: usize,
    pub n_validation_rows: usize,
    pub n_test_rows: usize,
    pub leak_audit_passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub config_digest: String,
    pub n_steps: usize,
    pub feature_keys: Vec<String>,
    pub split: SplitReport,
    pub conditions: Vec<ConditionReport>,
    pub grids: Vec<GridReport>,
    pub cells: Vec<CellReport>,
    pub summaries: Vec<SummaryReport>,
    pub pooled: Vec<PooledReport>,
    pub jaccard: Vec<JaccardReport>,
    pub snapshot_files: Vec<String>,
    pub failed_cells: usize,
}

impl RunReport {
    pub fn has_failures(&self) -> bool {
        self.failed_cells > 0
    }

    pub fn summary(&self, model: &str, condition: &str) -> Option<&SeedSummary> {
        self.summaries
            .iter()
            .find(|s| s.model == model && s.condition == condition)
            .and_then(|s| s.summary.as_ref())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn cell_key(model: &str, condition: &str, seed: u64) -> String {
    format!("{model}__{condition}__seed{seed}")
}

fn snr_label(snr: f64) -> String {
    if snr.fract() == 0.0 && snr < 1e15 {
        format!("{}", snr as u64)
    } else {
        snr.to_string()
    }
}

/// Which input a cell sees.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Input {
    Clean,
    Noisy(f64),
    Filtered(f64, WindowKind),
}

impl Input {
    fn key(self) -> String {
        match self {
            Input::Clean => "noise_free".into(),
            Input::Noisy(s) => format!("snr{}_noisy", snr_label(s)),
            Input::Filtered(s, k) => format!("snr{}_{}", snr_label(s), k.name()),
        }
    }

    fn condition(self) -> Condition {
        match self {
            Input::Clean => Condition::NoiseFree,
            Input::Noisy(_) => Condition::Noisy,
            Input::Filtered(..) => Condition::Filtered,
        }
    }
}

fn noise_seed(base: u64, snr: f64) -> u64 {
    base ^ snr.to_bits().rotate_left(17)
}

/// Row times by split label. Every row's lag footprint lies inside one
/// split segment.
#[derive(Debug, Clone, Default)]
struct RowSets {
    train: Vec<usize>,
    validation: Vec<usize>,
    test: Vec<usize>,
}

/// Fails if any row's lag footprint touches both test and training-side
/// (train or validation) indices.
pub fn audit_leaks(labels: &[SplitLabel], times: &[usize], lags: LagWindow) -> Result<()> {
    for &t in times {
        let fp = lags.footprint(t);
        let lo = fp.start.max(0) as usize;
        let hi = (fp.end.max(0) as usize).min(labels.len());
        let span = &labels[lo..hi];
        let test = span.contains(&SplitLabel::Test);
        let training = span.iter().any(|l| *l != SplitLabel::Test);
        if test && training {
            return Err(Error::arg(format!(
                "feature row at time {t} mixes training and test samples"
            )));
        }
    }
    Ok(())
}

struct Prepared {
    sim: SimOutput,
    segments: Vec<std::ops::Range<usize>>,
    rows: RowSets,
    keys: Vec<FeatureKey>,
    steps: usize,
}

fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    let forcing = match &config.simulation.forcing_csv {
        Some(p) => read_forcing_file(p)?,
        None => generate_forcing(&config.simulation.forcing, config.simulation.n_steps)?,
    };
    let snaps = &config.snapshots;
    let times = snapshot_times(&snaps.times, snaps.half_window, snaps.every, forcing.len())?;
    let sim = simulate(&config.simulation.column, &forcing, &config.sensors, &times)?;
    let n = sim.flux.len();
    let plan = config
        .split
        .clone()
        .unwrap_or_else(|| SplitPlan::reference_scaled(n));
    let labels = plan.labels(n)?;
    let segments = plan.segments(n)?;
    let lags = config.features;
    let mut all: Vec<usize> = rows_within_segments(n, &segments, lags)
        .into_iter()
        .flatten()
        .collect();
    all.sort_unstable();
    audit_leaks(&labels, &all, lags)?;
    let mut rows = RowSets::default();
    for t in all {
        match labels[t] {
            SplitLabel::Train => rows.train.push(t),
            SplitLabel::Validation => rows.validation.push(t),
            SplitLabel::Test => rows.test.push(t),
        }
    }
    if rows.train.len() < 2 || rows.validation.is_empty() || rows.test.is_empty() {
        return Err(Error::arg(format!(
            "split leaves {} train, {} validation and {} test rows",
            rows.train.len(),
            rows.validation.len(),
            rows.test.len()
        )));
    }
    let keys = crate::features::feature_keys(&config.sensors, lags);
    Ok(Prepared {
        sim,
        segments,
        rows,
        keys,
        steps: lags.n_lags(),
    })
}

struct Split {
    x: Matrix,
    y: Vec<f64>,
}

fn rows_at(field: &TemperatureField, flux: &FluxSeries, lags: LagWindow, times: &[usize]) -> Result<Split> {
    let fm = build_features_at(field, lags, times)?;
    let y = times.iter().map(|&t| flux.values[t]).collect();
    Ok(Split { x: fm.rows, y })
}

struct ConditionData {
    fit: Split,
    train: Split,
    validation: Split,
    test: Split,
}

fn condition_data(field: &TemperatureField, prep: &Prepared, lags: LagWindow) -> Result<ConditionData> {
    let flux = &prep.sim.flux;
    let mut fit_times: Vec<usize> = prep.rows.train.iter().chain(&prep.rows.validation).copied().collect();
    fit_times.sort_unstable();
    Ok(ConditionData {
        fit: rows_at(field, flux, lags, &fit_times)?,
        train: rows_at(field, flux, lags, &prep.rows.train)?,
        validation: rows_at(field, flux, lags, &prep.rows.validation)?,
        test: rows_at(field, flux, lags, &prep.rows.test)?,
    })
}

/// Validation RMSE of the proxy ensemble trained on the training rows of
/// a smoothed field. Only training-window samples are touched.
fn proxy_score(
    field: &TemperatureField,
    prep: &Prepared,
    config: &ExperimentConfig,
) -> Result<f64> {
    let lags = config.features;
    let flux = &prep.sim.flux;
    let train = rows_at(field, flux, lags, &prep.rows.train)?;
    let val = rows_at(field, flux, lags, &prep.rows.validation)?;
    let scale = crate::regressor::Standardizer::fit_column(&train.y);
    let model = fit_gbt(&train.x, &scale.apply_column(&train.y), &config.filters.proxy)?;
    let pred = scale.invert_column(&predict_gbt(&model, &val.x)?);
    rmse(&pred, &val.y)
}

/// Trains every grid point on `train`, scores RMSE on `validation` and
/// returns the best (earliest on ties). Networks early-stop on the
/// validation rows.
pub fn grid_search(points: &[ModelSpec], train: &TrainData<'_>, validation: (&Matrix, &[f64])) -> Result<GridResult> {
    if points.is_empty() {
        return Err(Error::arg("empty hyperparameter grid"));
    }
    let data = TrainData {
        x: train.x,
        y: train.y,
        validation: Some(validation),
        steps: train.steps,
        seed: train.seed,
    };
    let results: Vec<GridPoint> = points
        .iter()
        .map(|spec| {
            let scored = spec.fit(&data).and_then(|m| {
                let pred = m.predict(validation.0)?;
                let best_epoch = match &m {
                    FittedModel::Net { report, .. } => report.best_epoch,
                    FittedModel::Gbt { .. } => None,
                };
                Ok((rmse(&pred, validation.1)?, best_epoch))
            });
            match scored {
                Ok((score, best_epoch)) if score.is_finite() => GridPoint {
                    spec: spec.clone(),
                    validation_rmse: Some(score),
                    best_epoch,
                    error: None,
                },
                Ok((score, _)) => GridPoint {
                    spec: spec.clone(),
                    validation_rmse: None,
                    best_epoch: None,
                    error: Some(format!("non-finite validation RMSE {score}")),
                },
                Err(e) => GridPoint {
                    spec: spec.clone(),
                    validation_rmse: None,
                    best_epoch: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in results.iter().enumerate() {
        if let Some(s) = p.validation_rmse {
            if best.is_none_or(|(_, b)| s < b) {
                best = Some((i, s));
            }
        }
    }
    match best {
        Some((best_index, _)) => Ok(GridResult {
            best_index,
            points: results,
        }),
        None => Err(Error::arg(format!(
            "every grid point failed: {}",
            results
                .iter()
                .enumerate()
                .map(|(i, p)| format!("[{i}] {}", p.error.as_deref().unwrap_or("?")))
                .collect::<Vec<_>>()
                .join("; ")
        ))),
    }
}

/// Test metrics, test predictions, ALE importance and intrinsic importance.
type CellResult = (EvalReport, Vec<f64>, Vec<f64>, Option<Vec<f64>>);

struct CellOutcome {
    report: CellReport,
    predictions: Option<Vec<f64>>,
}

#[allow(clippy::too_many_arguments)]
fn run_cell(
    spec: &ModelSpec,
    model: &str,
    condition: &str,
    seed: u64,
    data: &ConditionData,
    prep: &Prepared,
    config: &ExperimentConfig,
) -> CellOutcome {
    let mut report = CellReport {
        key: cell_key(model, condition, seed),
        model: model.to_string(),
        family: spec.family(),
        condition: condition.to_string(),
        seed,
        status: CellStatus::Ok,
        metrics: None,
        ale_importance: None,
        intrinsic_importance: None,
    };
    let result = (|| -> Result<CellResult> {
        let fitted = spec.fit(&TrainData {
            x: &data.fit.x,
            y: &data.fit.y,
            validation: None,
            steps: prep.steps,
            seed,
        })?;
        let pred = fitted.predict(&data.test.x)?;
        let metrics = stratified(&pred, &data.test.y)?;
        let stride = data.test.x.rows().div_ceil(config.interpret.ale_max_rows).max(1);
        let picks: Vec<usize> = (0..data.test.x.rows()).step_by(stride).collect();
        let sample = data.test.x.select_rows(&picks);
        let predict = |m: &Matrix| fitted.predict(m);
        let (_, table) = ale_table(&predict, &sample, &prep.keys, config.interpret.ale_bins)?;
        Ok((metrics, pred, table.importance, fitted.intrinsic_importance()))
    })();
    match result {
        Ok((metrics, pred, ale, intrinsic)) => {
            report.metrics = Some(metrics);
            report.ale_importance = Some(ale);
            report.intrinsic_importance = intrinsic;
            CellOutcome {
                report,
                predictions: Some(pred),
            }
        }
        Err(e) => {
            report.status = CellStatus::Failed {
                reason: e.to_string(),
            };
            CellOutcome {
                report,
                predictions: None,
            }
        }
    }
}

fn write_file(dir: &Path, name: &str, write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    let path = dir.join(name);
    fs::write(&path, buf).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn write_predictions(buf: &mut Vec<u8>, times: &[usize], obs: &[f64], pred: &[f64]) -> Result<()> {
    writeln!(buf, "time_index,obs_flux,pred_flux").map_err(|e| Error::io("predictions", e))?;
    for ((t, o), p) in times.iter().zip(obs).zip(pred) {
        writeln!(buf, "{t},{o},{p}").map_err(|e| Error::io("predictions", e))?;
    }
    Ok(())
}

fn write_jaccard(buf: &mut Vec<u8>, j: &JaccardReport) -> Result<()> {
    let io = |e| Error::io("jaccard", e);
    writeln!(buf, "model,{}", j.models.join(",")).map_err(io)?;
    for (name, row) in j.models.iter().zip(&j.matrix) {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(buf, "{name},{}", cells.join(",")).map_err(io)?;
    }
    Ok(())
}

fn mean_vectors<'a>(vs: impl Iterator<Item = &'a Vec<f64>>) -> Option<Vec<f64>> {
    let mut sum: Option<Vec<f64>> = None;
    let mut n = 0usize;
    for v in vs {
        match &mut sum {
            Some(s) => s.iter_mut().zip(v).for_each(|(a, b)| *a += b),
            None => sum = Some(v.clone()),
        }
        n += 1;
    }
    sum.map(|mut s| {
        s.iter_mut().for_each(|a| *a /= n as f64);
        s
    })
}

/// Progress messages from [`run_experiment_with`].
pub type Progress<'a> = dyn Fn(&str) + Sync + 'a;

pub fn run_experiment(config: &ExperimentConfig) -> Result<RunReport> {
    run_experiment_with(config, &|_| {})
}

/// Runs the whole grid and writes every artifact into the output
/// directory. Cell failures are recorded in the report; other errors abort.
pub fn run_experiment_with(config: &ExperimentConfig, progress: &Progress<'_>) -> Result<RunReport> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::arg(format!("worker pool: {e}")))?;
    pool.install(|| run_inner(config, progress))
}

fn run_inner(config: &ExperimentConfig, progress: &Progress<'_>) -> Result<RunReport> {
    let out = config.output_dir();
    fs::create_dir_all(out).map_err(|e| Error::io(format!("creating {}", out.display()), e))?;
    let lags = config.features;

    progress("simulating");
    let prep = prepare(config)?;
    let n = prep.sim.flux.len();

    let mut snapshot_files = Vec::new();
    let snaps = &config.snapshots;
    for w in snapshot_profiles(&prep.sim, &snaps.times, snaps.half_window, snaps.every)? {
        let name = format!("profiles_{}.csv", w.center);
        write_file(out, &name, |b| write_profile_window(&w, &prep.sim.cell_depths_m, b))?;
        snapshot_files.push(name);
    }

    let mut inputs = Vec::new();
    if config.noise.noise_free {
        inputs.push(Input::Clean);
    }
    for &snr in &config.noise.snr {
        inputs.push(Input::Noisy(snr));
        for &kind in &config.filters.kinds {
            inputs.push(Input::Filtered(snr, kind));
        }
    }

    let mut conditions = Vec::new();
    let mut grids = Vec::new();
    let mut cells = Vec::new();
    let mut global_windows: Vec<(WindowKind, usize, WindowScores)> = Vec::new();
    let clean = &prep.sim.temps;

    for input in inputs {
        let key = input.key();
        progress(&format!("condition {key}"));
        let mut cond = ConditionReport {
            key: key.clone(),
            snr: None,
            filter: None,
            window_length: None,
            window_scores: Vec::new(),
        };
        let field = match input {
            Input::Clean => clean.clone(),
            Input::Noisy(snr) => {
                cond.snr = Some(snr);
                add_noise(clean, snr, noise_seed(config.noise.seed, snr))?
            }
            Input::Filtered(snr, kind) => {
                cond.snr = Some(snr);
                cond.filter = Some(kind);
                let noisy = add_noise(clean, snr, noise_seed(config.noise.seed, snr))?;
                let reuse = match config.filters.tuning {
                    FilterTuning::Global => global_windows.iter().find(|g| g.0 == kind).cloned(),
                    FilterTuning::PerSnr => None,
                };
                let (len, scores) = match reuse {
                    Some((_, len, scores)) => (len, scores),
                    None => {
                        let (len, scores) = select_window_length(&config.filters.window_lengths, |len| {
                            let f = WindowFilter::new(kind, len)?;
                            let smoothed = smooth_by_segments(&noisy, &f, &prep.segments)?;
                            proxy_score(&smoothed, &prep, config)
                        })?;
                        global_windows.push((kind, len, scores.clone()));
                        (len, scores)
                    }
                };
                cond.window_length = Some(len);
                cond.window_scores = scores;
                smooth_by_segments(&noisy, &WindowFilter::new(kind, len)?, &prep.segments)?
            }
        };
        let data = condition_data(&field, &prep, lags)?;
        drop(field);

        for model in &config.models {
            let name = model.display_name();
            let points = model.grid_points(input.condition())?;
            let (chosen, search) = if points.len() == 1 {
                (points[0].clone(), None)
            } else {
                let train = TrainData {
                    x: &data.train.x,
                    y: &data.train.y,
                    validation: None,
                    steps: prep.steps,
                    seed: config.seeds[0],
                };
                match grid_search(&points, &train, (&data.validation.x, &data.validation.y)) {
                    Ok(result) => {
                        let best = &result.points[result.best_index];
                        let mut spec = best.spec.clone();
                        if let (Some(cfg), Some(epoch)) = (spec.train_config_mut(), best.best_epoch) {
                            cfg.epochs = epoch + 1;
                        }
                        (spec, Some(result))
                    }
                    Err(e) => {
                        for &seed in &config.seeds {
                            cells.push(CellReport {
                                key: cell_key(&name, &key, seed),
                                model: name.clone(),
                                family: model.family,
                                condition: key.clone(),
                                seed,
                                status: CellStatus::Failed {
                                    reason: format!("grid search: {e}"),
                                },
                                metrics: None,
                                ale_importance: None,
                                intrinsic_importance: None,
                            });
                        }
                        continue;
                    }
                }
            };
            progress(&format!("  {name}: {} seeds", config.seeds.len()));
            let outcomes: Vec<CellOutcome> = config
                .seeds
                .par_iter()
                .map(|&seed| run_cell(&chosen, &name, &key, seed, &data, &prep, config))
                .collect();
            for o in outcomes {
                if let Some(pred) = &o.predictions {
                    write_file(out, &format!("predictions_{}.csv", o.report.key), |b| {
                        write_predictions(b, &prep.rows.test, &data.test.y, pred)
                    })?;
                    if let Some(imp) = &o.report.ale_importance {
                        let table = ImportanceTable::new(prep.keys.clone(), imp.clone())?;
                        write_file(out, &format!("importance_{}.csv", o.report.key), |b| {
                            table.write_csv(b)
                        })?;
                    }
                }
                cells.push(o.report);
            }
            grids.push(GridReport {
                model: name,
                condition: key.clone(),
                chosen,
                search,
            });
        }
        conditions.push(cond);
    }

    // Per (model, condition) summaries, pooled importances, similarity.
    let mut summaries = Vec::new();
    let mut pooled = Vec::new();
    let mut jaccard = Vec::new();
    let k = config
        .interpret
        .top_k
        .unwrap_or_else(|| default_top_k(prep.keys.len()))
        .clamp(1, prep.keys.len());
    let mut summary_csv = String::from(
        "model,condition,mean_rmse,var_rmse,mean_r2,mean_rmse_upward,mean_rmse_downward,mean_rmse_normalized\n",
    );
    for cond in &conditions {
        let mut names = Vec::new();
        let mut means = Vec::new();
        for model in &config.models {
            let name = model.display_name();
            let ok: Vec<&CellReport> = cells
                .iter()
                .filter(|c| c.model == name && c.condition == cond.key && c.status == CellStatus::Ok)
                .collect();
            let failed = cells
                .iter()
                .filter(|c| c.model == name && c.condition == cond.key && c.status != CellStatus::Ok)
                .count();
            let reports: Vec<EvalReport> = ok.iter().filter_map(|c| c.metrics.clone()).collect();
            let summary = if reports.is_empty() {
                None
            } else {
                Some(summarize_seeds(&reports)?)
            };
            if let Some(s) = &summary {
                let m = |v: Option<crate::metrics::MeanVar>| v.map_or(String::new(), |v| v.mean.to_string());
                summary_csv.push_str(&format!(
                    "{name},{},{},{},{},{},{},{}\n",
                    cond.key,
                    s.rmse.mean,
                    s.rmse.variance,
                    m(s.r2),
                    m(s.rmse_upward),
                    m(s.rmse_downward),
                    m(s.rmse_normalized)
                ));
            }
            summaries.push(SummaryReport {
                model: name.clone(),
                condition: cond.key.clone(),
                summary,
                failed_seeds: failed,
            });
            if let Some(mean) = mean_vectors(ok.iter().filter_map(|c| c.ale_importance.as_ref())) {
                let table = ImportanceTable::new(prep.keys.clone(), mean.clone())?;
                let report = PooledReport {
                    model: name.clone(),
                    condition: cond.key.clone(),
                    by_kind: pool_importance(&table, GroupBy::Kind)?,
                    by_depth: pool_importance(&table, GroupBy::Depth)?,
                    by_lag: pool_importance(&table, GroupBy::Lag)?,
                };
                for (by, rows) in [
                    ("kind", &report.by_kind),
                    ("depth", &report.by_depth),
                    ("lag", &report.by_lag),
                ] {
                    write_file(out, &format!("pooled_{name}__{}__{by}.csv", cond.key), |b| {
                        write_pooled_csv(rows, b)
                    })?;
                }
                pooled.push(report);
                names.push(name);
                means.push(mean);
            }
        }
        let matrix = means
            .iter()
            .map(|a| means.iter().map(|b| jaccard_topk(a, b, k)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        let j = JaccardReport {
            condition: cond.key.clone(),
            k,
            models: names,
            matrix,
        };
        write_file(out, &format!("jaccard_{}.csv", cond.key), |b| write_jaccard(b, &j))?;
        if jaccard.is_empty() {
            write_file(out, "jaccard.csv", |b| write_jaccard(b, &j))?;
        }
        jaccard.push(j);
    }
    write_file(out, "summary.csv", |b| {
        b.extend_from_slice(summary_csv.as_bytes());
        Ok(())
    })?;

    let failed_cells = cells.iter().filter(|c| c.status != CellStatus::Ok).count();
    let report = RunReport {
        schema_version: REPORT_SCHEMA_VERSION,
        config_digest: config.digest(),
        n_steps: n,
        feature_keys: prep.keys.iter().map(|k| k.to_string()).collect(),
        split: SplitReport {
            n_train_rows: prep.rows.train.len(),
            n_validation_rows: prep.rows.validation.len(),
            n_test_rows: prep.rows.test.len(),
            leak_audit_passed: true,
        },
        conditions,
        grids,
        cells,
        summaries,
        pooled,
        jaccard,
        snapshot_files,
        failed_cells,
    };
    let json = report.to_json()?;
    write_file(out, "report.json", |b| {
        b.extend_from_slice(json.as_bytes());
        Ok(())
    })?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gbt::GbtParams;
    use crate::harness::parse_config;

    fn linear_data(n: usize, offset: f64) -> (Matrix, Vec<f64>) {
        let rows: Vec<[f64; 2]> = (0..n).map(|i| [i as f64 / n as f64 + offset, (i % 7) as f64]).collect();
        let y = rows.iter().map(|r| 4.0 * r[0]).collect();
        (Matrix::from_rows(&rows).unwrap(), y)
    }

    fn gbt(n_estimators: usize) -> ModelSpec {
        ModelSpec::Gbt(GbtParams {
            n_estimators,
            subsample: 1.0,
            min_child_weight: 2.0,
            ..GbtParams::default()
        })
    }

    #[test]
    fn grid_search_prefers_the_fitting_point() {
        let (x, y) = linear_data(200, 0.0);
        let (vx, vy) = linear_data(50, 0.002);
        let data = TrainData { x: &x, y: &y, validation: None, steps: 1, seed: 0 };
        let result = grid_search(&[gbt(0), gbt(50)], &data, (&vx, &vy)).unwrap();
        assert_eq!(result.best_index, 1);
        let [a, b] = [&result.points[0], &result.points[1]].map(|p| p.validation_rmse.unwrap());
        assert!(b < a);
        let single = grid_search(&[gbt(3)], &data, (&vx, &vy)).unwrap();
        assert_eq!(single.best_index, 0);
        // identical points tie toward the first
        let tied = grid_search(&[gbt(5), gbt(5)], &data, (&vx, &vy)).unwrap();
        assert_eq!(tied.best_index, 0);
    }

    #[test]
    fn grid_search_reports_every_failure() {
        let (x, y) = linear_data(20, 0.0);
        let data = TrainData { x: &x, y: &y, validation: None, steps: 1, seed: 0 };
        let bad = ModelSpec::Gbt(GbtParams { learning_rate: -1.0, ..GbtParams::default() });
        let err = grid_search(&[bad.clone(), bad], &data, (&x, &y)).unwrap_err().to_string();
        assert!(err.contains("[0]") && err.contains("[1]"), "{err}");
        assert!(grid_search(&[], &data, (&x, &y)).is_err());
    }

    #[test]
    fn leak_audit_flags_rows_spanning_test_and_training() {
        use SplitLabel::*;
        let lags = LagWindow { lag_min: -1, lag_max: 1 };
        let mut labels = vec![Train; 10];
        labels.extend(vec![Test; 10]);
        // footprint of t is [t-2, t+2)
        assert!(audit_leaks(&labels, &[2, 7, 12, 17], lags).is_ok());
        assert!(audit_leaks(&labels, &[9], lags).is_err());
        assert!(audit_leaks(&labels, &[11], lags).is_err());
        labels[5] = Validation;
        assert!(audit_leaks(&labels, &[5], lags).is_ok());
    }

    fn small_config(dir: &Path, models: &str) -> ExperimentConfig {
        let text = format!(
            r#"
output_dir = "out"
workers = 1
seeds = [0, 1]
[simulation]
n_steps = 2500
[noise]
snr = [100.0]
[filters]
kinds = ["bartlett"]
window_lengths = [4]
[filters.proxy]
n_estimators = 3
min_child_weight = 5.0
[interpret]
ale_max_rows = 60
{models}
"#
        );
        parse_config(&text, dir, None).unwrap()
    }

    const GBT: &str = r#"
[[models]]
family = "gbt"
params = { n_estimators = 8, min_child_weight = 5.0, subsample = 0.5 }
"#;
    const MLP: &str = r#"
[[models]]
family = "mlp"
params = { hidden = [8], train = { epochs = 2, batch_size = 128 } }
"#;

    #[test]
    fn cells_do_not_depend_on_their_neighbours() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let both = run_experiment(&small_config(a.path(), &format!("{GBT}{MLP}"))).unwrap();
        let alone = run_experiment(&small_config(b.path(), GBT)).unwrap();
        assert_eq!(both.cells.len(), 2 * 3 * 2);
        assert!(!both.has_failures());
        for cell in &alone.cells {
            let twin = both.cells.iter().find(|c| c.key == cell.key).unwrap();
            assert_eq!(twin, cell);
            let name = format!("predictions_{}.csv", cell.key);
            assert_eq!(
                fs::read(a.path().join("out").join(&name)).unwrap(),
                fs::read(b.path().join("out").join(&name)).unwrap()
            );
        }
        assert_eq!(both.conditions, alone.conditions);
        let noise_free = both.conditions.iter().find(|c| c.key == "noise_free").unwrap();
        assert!(noise_free.filter.is_none() && noise_free.snr.is_none());
        assert_eq!(both.jaccard[0].models, ["gbt", "mlp"]);
        assert_eq!(both.jaccard[0].k, 52);
    }
}
