//! Experiment configuration: TOML with defaults, presets layered beneath
//! the user's file, unknown keys rejected.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::SplitPlan;
use crate::error::{Error, Result};
use crate::features::LagWindow;
use crate::gbt::GbtParams;
use crate::hydro::{ColumnConfig, ForcingSpec, DEFAULT_SENSOR_DEPTHS};
use crate::regressor::{Condition, Family, ModelSpec};
use crate::smoothing::WindowKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// 20,000 steps, tree ensemble and MLP, three seeds, SNR 100.
    Desk,
    /// 110,000 steps, all four families, ten seeds, five noise levels.
    Full,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "full" => Ok(Preset::Full),
            other => Err(Error::config("preset", format!("unknown preset `{other}`"))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Desk => "desk",
            Preset::Full => "full",
        })
    }
}

impl Preset {
    /// Values the preset sets on top of the built-in defaults.
    fn overrides(self) -> toml::Table {
        let text = match self {
            Preset::Full => "",
            Preset::Desk => {
                r#"
seeds = [0, 1, 2]
[simulation]
n_steps = 20000
[noise]
snr = [100.0]
[filters]
kinds = ["flat", "hamming", "bartlett"]
window_lengths = [4, 8, 12, 24, 48]
[interpret]
ale_max_rows = 400
[[models]]
family = "gbt"
[[models]]
family = "mlp"
params = { train = { epochs = 15, batch_size = 256 } }
"#
            }
        };
        text.parse().expect("preset tables are valid TOML")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub n_steps: usize,
    pub column: ColumnConfig,
    pub forcing: ForcingSpec,
    /// Boundary series to use instead of generating one.
    pub forcing_csv: Option<PathBuf>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            n_steps: crate::data::REFERENCE_SERIES_LENGTH,
            column: ColumnConfig::default(),
            forcing: ForcingSpec::default(),
            forcing_csv: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub snr: Vec<f64>,
    pub noise_free: bool,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            snr: vec![100.0, 500.0, 1000.0, 2000.0, 4000.0],
            noise_free: true,
            seed: 4242,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterTuning {
    /// Tune each filter's window separately at every noise level.
    PerSnr,
    /// Tune each filter once at the first noise level and reuse the length.
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub kinds: Vec<WindowKind>,
    pub window_lengths: Vec<usize>,
    pub tuning: FilterTuning,
    /// Tree ensemble used to score candidate window lengths.
    pub proxy: GbtParams,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            kinds: WindowKind::ALL.to_vec(),
            window_lengths: vec![4, 8, 12, 24, 48, 96],
            tuning: FilterTuning::PerSnr,
            proxy: GbtParams {
                n_estimators: 50,
                min_child_weight: 20.0,
                ..GbtParams::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Display name and cell-key prefix; defaults to the family name.
    #[serde(default)]
    pub name: Option<String>,
    pub family: Family,
    /// Overrides applied on top of the per-condition defaults. Nested
    /// tables address nested fields (e.g. `train.epochs`).
    #[serde(default)]
    pub params: toml::Table,
    /// Dotted field path → candidate values; the cartesian product is
    /// searched on the validation split.
    #[serde(default)]
    pub grid: BTreeMap<String, Vec<toml::Value>>,
    /// Start from the defaults tuned for each input condition rather than
    /// the noise-free ones everywhere.
    #[serde(default = "yes")]
    pub per_condition_defaults: bool,
}

fn yes() -> bool {
    true
}

impl ModelConfig {
    pub fn family_only(family: Family) -> Self {
        Self {
            name: None,
            family,
            params: toml::Table::new(),
            grid: BTreeMap::new(),
            per_condition_defaults: true,
        }
    }

    pub fn display_name(&self) -> String {
        self.name
            .clone()
            .unwrap_or_else(|| self.family.name().to_string())
    }

    /// Every grid point for one input condition, in enumeration order
    /// (last grid key varies fastest).
    pub fn grid_points(&self, condition: Condition) -> Result<Vec<ModelSpec>> {
        let base_condition = if self.per_condition_defaults {
            condition
        } else {
            Condition::NoiseFree
        };
        let mut base = serde_json::to_value(ModelSpec::tuned(self.family, base_condition))?;
        let overrides = serde_json::to_value(&self.params)?;
        merge_json(&mut base, &overrides);

        let keys: Vec<&String> = self.grid.keys().collect();
        let mut points = vec![base];
        for key in &keys {
            let values = &self.grid[*key];
            let mut next = Vec::with_capacity(points.len() * values.len());
            for p in &points {
                for v in values {
                    let mut q = p.clone();
                    set_path(&mut q, key, serde_json::to_value(v)?)
                        .map_err(|m| Error::config(format!("models.grid.{key}"), m))?;
                    next.push(q);
                }
            }
            points = next;
        }
        let name = self.display_name();
        points
            .into_iter()
            .map(|v| {
                serde_json::from_value(v)
                    .map_err(|e| Error::config(format!("models[{name}]"), e.to_string()))
            })
            .collect()
    }
}

fn merge_json(base: &mut serde_json::Value, over: &serde_json::Value) {
    match (base, over) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge_json(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}

fn set_path(
    root: &mut serde_json::Value,
    path: &str,
    value: serde_json::Value,
) -> std::result::Result<(), String> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| format!("`{part}` is not inside a table"))?;
        if i + 1 == parts.len() {
            if !obj.contains_key(*part) {
                return Err(format!("unknown field `{part}`"));
            }
            obj.insert((*part).to_string(), value);
            return Ok(());
        }
        cur = obj
            .get_mut(*part)
            .ok_or_else(|| format!("unknown field `{part}`"))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterpretConfig {
    pub ale_bins: usize,
    /// Test rows (evenly strided) used for ALE curves.
    pub ale_max_rows: usize,
    /// Top-K size for ranking similarity; defaults to a third of the features.
    pub top_k: Option<usize>,
}

impl Default for InterpretConfig {
    fn default() -> Self {
        Self {
            ale_bins: crate::interpret::DEFAULT_BINS,
            ale_max_rows: 2000,
            top_k: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SnapshotConfig {
    /// Centre steps around which full-column profiles are written.
    pub times: Vec<usize>,
    pub half_window: usize,
    pub every: usize,
}

impl Default for SnapshotConfig {
    fn default() -> Self {
        Self {
            times: Vec::new(),
            half_window: 100,
            every: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: Option<Preset>,
    pub output_dir: Option<PathBuf>,
    /// Worker threads for independent cells; 0 uses every core.
    pub workers: usize,
    pub seeds: Vec<u64>,
    pub simulation: SimulationConfig,
    pub sensors: Vec<f64>,
    pub noise: NoiseConfig,
    pub filters: FilterConfig,
    pub features: LagWindow,
    /// Training windows; defaults to the six reference windows rescaled to
    /// the series length.
    pub split: Option<SplitPlan>,
    pub models: Vec<ModelConfig>,
    pub interpret: InterpretConfig,
    pub snapshots: SnapshotConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            preset: None,
            output_dir: None,
            workers: 0,
            seeds: (0..10).collect(),
            simulation: SimulationConfig::default(),
            sensors: DEFAULT_SENSOR_DEPTHS.to_vec(),
            noise: NoiseConfig::default(),
            filters: FilterConfig::default(),
            features: LagWindow::default(),
            split: None,
            models: Family::ALL.iter().map(|f| ModelConfig::family_only(*f)).collect(),
            interpret: InterpretConfig::default(),
            snapshots: SnapshotConfig::default(),
        }
    }
}

fn merge_toml(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_toml(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Parses a config document. `preset` overrides any `preset` key in the
/// text; relative paths resolve against `base_dir`.
pub fn parse_config(text: &str, base_dir: &Path, preset: Option<Preset>) -> Result<ExperimentConfig> {
    let user: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::config("<document>", e.to_string()))?;
    let chosen = match preset {
        Some(p) => Some(p),
        None => match user.get("preset") {
            Some(toml::Value::String(s)) => Some(s.parse()?),
            Some(other) => {
                return Err(Error::config("preset", format!("expected a string, got {other}")))
            }
            None => None,
        },
    };
    let mut merged = chosen.map(Preset::overrides).unwrap_or_default();
    merge_toml(&mut merged, user);
    if let Some(p) = chosen {
        merged.insert("preset".into(), toml::Value::String(p.to_string()));
    }
    let mut config: ExperimentConfig = merged
        .try_into()
        .map_err(|e: toml::de::Error| Error::config("<document>", e.message().to_string()))?;
    for path in [&mut config.output_dir, &mut config.simulation.forcing_csv]
        .into_iter()
        .flatten()
    {
        if path.is_relative() {
            *path = base_dir.join(&*path);
        }
    }
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path, preset: Option<Preset>) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading config {}", path.display()), e))?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    parse_config(&text, dir, preset)
}

impl ExperimentConfig {
    /// Defaults plus a preset, with the given output directory.
    pub fn preset(preset: Preset, output_dir: impl Into<PathBuf>) -> Result<Self> {
        let out = output_dir.into();
        let text = format!("output_dir = {}", toml::Value::String(out.display().to_string()));
        parse_config(&text, Path::new("."), Some(preset))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |key: &str, msg: String| Err(Error::config(key, msg));
        if self.output_dir.is_none() {
            return fail("output_dir", "an output directory is required".into());
        }
        if self.seeds.is_empty() {
            return fail("seeds", "at least one seed is required".into());
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return fail("seeds", "seeds must be distinct".into());
        }
        if let Some(s) = self.noise.snr.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return fail("noise.snr", format!("SNR must be positive and finite, got {s}"));
        }
        if self.noise.snr.is_empty() && !self.noise.noise_free {
            return fail("noise", "no input condition selected".into());
        }
        if self.sensors.len() < 2 {
            return fail("sensors", "at least two sensor depths are required".into());
        }
        if !self.sensors.windows(2).all(|w| w[0] < w[1]) {
            return fail("sensors", "depths must be strictly increasing".into());
        }
        self.simulation
            .column
            .validate()
            .map_err(|e| Error::config("simulation.column", e.to_string()))?;
        if let Some(z) = self
            .sensors
            .iter()
            .find(|z| !(**z >= 0.0 && **z <= self.simulation.column.length_m))
        {
            return fail("sensors", format!("depth {z} m lies outside the column"));
        }
        match &self.simulation.forcing_csv {
            Some(p) if !p.is_file() => {
                return fail(
                    "simulation.forcing_csv",
                    format!("{} does not exist", p.display()),
                )
            }
            Some(_) => {}
            None if self.simulation.n_steps < 2 => {
                return fail("simulation.n_steps", "need at least 2 steps".into())
            }
            None => {}
        }
        if !self.noise.snr.is_empty() {
            if self.filters.window_lengths.is_empty() && !self.filters.kinds.is_empty() {
                return fail("filters.window_lengths", "no candidate lengths".into());
            }
            if let Some(n) = self
                .filters
                .window_lengths
                .iter()
                .find(|n| **n < 2 || **n % 2 != 0)
            {
                return fail(
                    "filters.window_lengths",
                    format!("window length {n} must be even and at least 2"),
                );
            }
        }
        self.filters
            .proxy
            .validate()
            .map_err(|e| Error::config("filters.proxy", e.to_string()))?;
        self.features
            .validate()
            .map_err(|e| Error::config("features", e.to_string()))?;
        if self.models.is_empty() {
            return fail("models", "at least one model is required".into());
        }
        let mut names: Vec<String> = self.models.iter().map(|m| m.display_name()).collect();
        names.sort();
        names.dedup();
        if names.len() != self.models.len() {
            return fail("models", "model names must be distinct".into());
        }
        for m in &self.models {
            if let Some((k, _)) = m.grid.iter().find(|(_, v)| v.is_empty()) {
                return fail(&format!("models.grid.{k}"), "grid has no values".into());
            }
            for condition in [Condition::NoiseFree, Condition::Noisy, Condition::Filtered] {
                m.grid_points(condition)?;
            }
        }
        if self.interpret.ale_bins == 0 || self.interpret.ale_max_rows == 0 {
            return fail("interpret", "ale_bins and ale_max_rows must be positive".into());
        }
        if self.snapshots.every == 0 {
            return fail("snapshots.every", "must be positive".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn output_dir(&self) -> &Path {
        self.output_dir.as_deref().expect("validated config has an output directory")
    }
}
