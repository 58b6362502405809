//! Time-series containers, measurement-noise injection and the alternating
//! train/validation/test split.

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Temperatures on a times × depths grid at a fixed cadence.
#[derive(Debug, Clone, PartialEq)]
pub struct TemperatureField {
    pub dt_s: f64,
    depths_m: Vec<f64>,
    values: Matrix,
}

impl TemperatureField {
    pub fn new(dt_s: f64, depths_m: Vec<f64>, values: Matrix) -> Result<Self> {
        if !(dt_s.is_finite() && dt_s > 0.0) {
            return Err(Error::arg("dt_s must be positive"));
        }
        if depths_m.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::arg("depths must be strictly increasing"));
        }
        if values.cols() != depths_m.len() {
            return Err(Error::arg(format!(
                "{} value columns for {} depths",
                values.cols(),
                depths_m.len()
            )));
        }
        if !values.is_finite() {
            return Err(Error::numerical("temperature field contains non-finite values"));
        }
        Ok(Self {
            dt_s,
            depths_m,
            values,
        })
    }

    pub fn n_times(&self) -> usize {
        self.values.rows()
    }

    pub fn n_depths(&self) -> usize {
        self.depths_m.len()
    }

    pub fn depths(&self) -> &[f64] {
        &self.depths_m
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn get(&self, t: usize, d: usize) -> f64 {
        self.values.get(t, d)
    }

    pub fn column(&self, d: usize) -> Vec<f64> {
        self.values.column(d)
    }

    /// Index of a sensor depth, matched to within a micrometre.
    pub fn depth_index(&self, depth_m: f64) -> Result<usize> {
        self.depths_m
            .iter()
            .position(|d| (d - depth_m).abs() < 1e-6)
            .ok_or_else(|| Error::arg(format!("depth {depth_m} m is not a sensor depth")))
    }

    /// Replaces every column with `f(column index, column values)`.
    pub fn map_columns(&self, mut f: impl FnMut(usize, &[f64]) -> Result<Vec<f64>>) -> Result<Self> {
        let n = self.n_times();
        let mut values = Matrix::zeros(n, self.n_depths());
        for d in 0..self.n_depths() {
            let col = f(d, &self.column(d))?;
            if col.len() != n {
                return Err(Error::arg("column transform changed the series length"));
            }
            for (t, v) in col.into_iter().enumerate() {
                values.set(t, d, v);
            }
        }
        Self::new(self.dt_s, self.depths_m.clone(), values)
    }

    /// Population variance over every entry.
    pub fn overall_variance(&self) -> f64 {
        let v = self.values.as_slice();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
    }
}

/// Surface exchange flux per time step, m/s, positive upward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluxSeries {
    pub dt_s: f64,
    pub values: Vec<f64>,
}

impl FluxSeries {
    pub fn new(dt_s: f64, values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("flux series contains non-finite values"));
        }
        Ok(Self { dt_s, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Signal-to-noise ratio: variance of the clean field over the variance of
/// the added error. `f64::INFINITY` disables noise.
pub fn add_noise(field: &TemperatureField, snr: f64, seed: u64) -> Result<TemperatureField> {
    if snr.is_nan() || snr <= 0.0 {
        return Err(Error::arg(format!("SNR must be positive, got {snr}")));
    }
    if snr.is_infinite() {
        return Ok(field.clone());
    }
    let var = field.overall_variance();
    if !(var > 0.0) {
        return Err(Error::arg("cannot scale noise to a zero-variance field"));
    }
    let sigma = (var / snr).sqrt();
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::arg(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = field.values.clone();
    for v in values.as_mut_slice() {
        *v += normal.sample(&mut rng);
    }
    TemperatureField::new(field.dt_s, field.depths_m.clone(), values)
}

/// Number of time steps in the original six-window split layout.
pub const REFERENCE_SERIES_LENGTH: usize = 110_000;

const REFERENCE_WINDOWS: [(usize, usize); 6] = [
    (500, 12_500),
    (19_000, 25_000),
    (33_000, 45_000),
    (52_000, 70_000),
    (75_000, 90_000),
    (97_000, 110_000),
];

/// Training windows (half-open index ranges); everything outside them is
/// test data. The trailing `validation_fraction` of each window is held out
/// for tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitPlan {
    pub train_windows: Vec<(usize, usize)>,
    #[serde(default = "default_validation_fraction")]
    pub validation_fraction: f64,
}

fn default_validation_fraction() -> f64 {
    0.2
}

impl Default for SplitPlan {
    fn default() -> Self {
        Self::reference()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitLabel {
    Train,
    Validation,
    Test,
}

impl SplitPlan {
    /// The six alternating windows over 110,000 five-minute steps.
    pub fn reference() -> Self {
        Self {
            train_windows: REFERENCE_WINDOWS.to_vec(),
            validation_fraction: 0.2,
        }
    }

    /// The reference windows rescaled proportionally to a series of `n` steps.
    pub fn reference_scaled(n: usize) -> Self {
        let scale = |i: usize| ((i as f64) * n as f64 / REFERENCE_SERIES_LENGTH as f64).round() as usize;
        Self {
            train_windows: REFERENCE_WINDOWS
                .iter()
                .map(|&(s, e)| (scale(s), scale(e).min(n)))
                .collect(),
            validation_fraction: 0.2,
        }
    }

    pub fn validate(&self, n_times: usize) -> Result<()> {
        if !(self.validation_fraction >= 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::arg("validation_fraction must lie in [0, 1)"));
        }
        let mut prev_end = 0;
        for (i, &(s, e)) in self.train_windows.iter().enumerate() {
            if s >= e {
                return Err(Error::arg(format!("window {i} [{s}, {e}) is empty")));
            }
            if e > n_times {
                return Err(Error::arg(format!(
                    "window {i} [{s}, {e}) exceeds series length {n_times}"
                )));
            }
            if i > 0 && s < prev_end {
                return Err(Error::arg(format!("window {i} overlaps or is out of order")));
            }
            prev_end = e;
        }
        Ok(())
    }

    fn validation_len(&self, len: usize) -> usize {
        ((len as f64) * self.validation_fraction).round() as usize
    }

    /// Per-index split label.
    pub fn labels(&self, n_times: usize) -> Result<Vec<SplitLabel>> {
        self.validate(n_times)?;
        let mut labels = vec![SplitLabel::Test; n_times];
        for &(s, e) in &self.train_windows {
            let val_start = e - self.validation_len(e - s);
            for (i, l) in labels.iter_mut().enumerate().take(e).skip(s) {
                *l = if i >= val_start {
                    SplitLabel::Validation
                } else {
                    SplitLabel::Train
                };
            }
        }
        Ok(labels)
    }

    /// Training windows plus the test gaps between them, covering `[0, n)`.
    pub fn segments(&self, n_times: usize) -> Result<Vec<Range<usize>>> {
        self.validate(n_times)?;
        let mut out = Vec::new();
        let mut cursor = 0;
        for &(s, e) in &self.train_windows {
            if s > cursor {
                out.push(cursor..s);
            }
            out.push(s..e);
            cursor = e;
        }
        if cursor < n_times {
            out.push(cursor..n_times);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn make_split(n_times: usize, plan: &SplitPlan) -> Result<SplitIndices> {
    let mut split = SplitIndices::default();
    for (i, label) in plan.labels(n_times)?.into_iter().enumerate() {
        match label {
            SplitLabel::Train => split.train.push(i),
            SplitLabel::Validation => split.validation.push(i),
            SplitLabel::Test => split.test.push(i),
        }
    }
    Ok(split)
}

/// Folds validation back into training for the final refit.
pub fn merge_train_validation(split: &SplitIndices) -> SplitIndices {
    let mut train: Vec<usize> = split.train.iter().chain(&split.validation).copied().collect();
    train.sort_unstable();
    SplitIndices {
        train,
        validation: Vec::new(),
        test: split.test.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn field(n: usize, depths: usize) -> TemperatureField {
        let mut m = Matrix::zeros(n, depths);
        for t in 0..n {
            for d in 0..depths {
                m.set(t, d, 10.0 + (t as f64 * 0.01).sin() * 3.0 + d as f64);
            }
        }
        TemperatureField::new(300.0, (0..depths).map(|d| d as f64 * 0.1).collect(), m).unwrap()
    }

    #[test]
    fn field_validation() {
        let m = Matrix::zeros(3, 2);
        assert!(TemperatureField::new(300.0, vec![0.1, 0.1], m.clone()).is_err());
        assert!(TemperatureField::new(300.0, vec![0.1], m.clone()).is_err());
        assert!(TemperatureField::new(0.0, vec![0.1, 0.2], m).is_err());
    }

    #[test]
    fn snr_100_gives_tenth_of_signal_std() {
        let f = field(20_000, 4);
        let noisy = add_noise(&f, 100.0, 7).unwrap();
        let diff: Vec<f64> = noisy
            .values()
            .as_slice()
            .iter()
            .zip(f.values().as_slice())
            .map(|(a, b)| a - b)
            .collect();
        let n = diff.len() as f64;
        let mean = diff.iter().sum::<f64>() / n;
        let var = diff.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
        let ratio = var.sqrt() / f.overall_variance().sqrt();
        assert!((ratio - 0.1).abs() < 0.002, "{ratio}");
        // mean preserving
        assert!(mean.abs() < 3.0 * var.sqrt() / n.sqrt());
    }

    #[test]
    fn infinite_snr_is_identity_and_bad_snr_rejected() {
        let f = field(50, 2);
        assert_eq!(add_noise(&f, f64::INFINITY, 1).unwrap(), f);
        assert!(add_noise(&f, 0.0, 1).is_err());
        assert!(add_noise(&f, -3.0, 1).is_err());
        let flat = TemperatureField::new(300.0, vec![0.0, 1.0], Matrix::zeros(10, 2)).unwrap();
        assert!(add_noise(&flat, 100.0, 1).is_err());
    }

    #[test]
    fn noise_is_seeded() {
        let f = field(100, 3);
        assert_eq!(add_noise(&f, 50.0, 9).unwrap(), add_noise(&f, 50.0, 9).unwrap());
        assert_ne!(add_noise(&f, 50.0, 9).unwrap(), add_noise(&f, 50.0, 10).unwrap());
    }

    #[test]
    fn reference_plan_totals() {
        let split = make_split(110_000, &SplitPlan::reference()).unwrap();
        assert_eq!(split.train.len() + split.validation.len(), 76_000);
        assert_eq!(split.test.len(), 34_000);
        let merged = merge_train_validation(&split);
        assert_eq!(merged.train.len(), 76_000);
        assert!(merged.validation.is_empty());
        assert_eq!(merged.test, split.test);
    }

    #[test]
    fn trailing_validation_fraction() {
        let plan = SplitPlan {
            train_windows: vec![(100, 200)],
            validation_fraction: 0.2,
        };
        let split = make_split(300, &plan).unwrap();
        assert_eq!(split.validation, (180..200).collect::<Vec<_>>());
        assert_eq!(split.train, (100..180).collect::<Vec<_>>());
        assert_eq!(split.test.len(), 200);
    }

    #[test]
    fn degenerate_plan_and_errors() {
        let plan = SplitPlan {
            train_windows: vec![(0, 10)],
            validation_fraction: 0.0,
        };
        let split = make_split(10, &plan).unwrap();
        assert_eq!(split.train.len(), 10);
        assert!(split.test.is_empty() && split.validation.is_empty());
        assert!(make_split(5, &plan).is_err());
        let overlapping = SplitPlan {
            train_windows: vec![(0, 10), (5, 12)],
            validation_fraction: 0.2,
        };
        assert!(make_split(20, &overlapping).is_err());
    }

    #[test]
    fn merge_of_empty_validation_is_identity() {
        let s = SplitIndices {
            train: vec![0, 1, 2],
            validation: vec![],
            test: vec![3],
        };
        assert_eq!(merge_train_validation(&s), s);
    }

    #[test]
    fn scaled_plan_keeps_ratio() {
        let plan = SplitPlan::reference_scaled(20_000);
        let split = make_split(20_000, &plan).unwrap();
        let frac = (split.train.len() + split.validation.len()) as f64 / 20_000.0;
        assert!((frac - 76_000.0 / 110_000.0).abs() < 0.005);
        let segs = plan.segments(20_000).unwrap();
        assert_eq!(segs.first().unwrap().start, 0);
        assert_eq!(segs.last().unwrap().end, 20_000);
        assert!(segs.windows(2).all(|w| w[0].end == w[1].start));
    }

    proptest! {
        #[test]
        fn split_partitions_every_index(
            n in 10usize..400,
            cuts in proptest::collection::vec(0usize..400, 2..10),
            frac in 0.0f64..0.9,
        ) {
            let mut cuts: Vec<usize> = cuts.into_iter().map(|c| c % n).collect();
            cuts.sort_unstable();
            cuts.dedup();
            let windows: Vec<(usize, usize)> = cuts
                .chunks(2)
                .filter(|c| c.len() == 2)
                .map(|c| (c[0], c[1]))
                .collect();
            let plan = SplitPlan { train_windows: windows, validation_fraction: frac };
            let split = make_split(n, &plan).unwrap();
            let mut all: Vec<usize> = split.train.iter().chain(&split.validation).chain(&split.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }
}
