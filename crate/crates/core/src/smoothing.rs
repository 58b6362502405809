//! Window-function smoothing with zero padding at segment edges.
//!
//! A filter of even length `N` has `N + 1` taps at integer offsets
//! `n ∈ [−N/2, N/2]`, normalized to unit sum so constants pass unchanged.
//! Each output sample is `Σ c(n)·x(t − n)` with samples outside the current
//! segment taken as zero.

use std::f64::consts::PI;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::TemperatureField;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    Flat,
    Hanning,
    Hamming,
    Blackman,
    Bartlett,
}

impl WindowKind {
    pub const ALL: [WindowKind; 5] = [
        WindowKind::Flat,
        WindowKind::Hanning,
        WindowKind::Hamming,
        WindowKind::Blackman,
        WindowKind::Bartlett,
    ];

    pub fn name(self) -> &'static str {
        match self {
            WindowKind::Flat => "flat",
            WindowKind::Hanning => "hanning",
            WindowKind::Hamming => "hamming",
            WindowKind::Blackman => "blackman",
            WindowKind::Bartlett => "bartlett",
        }
    }

    /// Unnormalized window value at integer offset `n` for length `N`.
    pub fn raw(self, n: i64, len: usize) -> f64 {
        let nf = n as f64;
        let big_n = len as f64;
        let arg = 2.0 * PI * nf / big_n;
        match self {
            WindowKind::Flat => 1.0 / big_n,
            WindowKind::Hanning => 0.5 + 0.5 * arg.cos(),
            WindowKind::Hamming => 0.54 + 0.46 * arg.cos(),
            // Centred form: peak at n = 0, zero at the ends.
            WindowKind::Blackman => 0.42 + 0.5 * arg.cos() + 0.08 * (2.0 * arg).cos(),
            WindowKind::Bartlett => 1.0 - 2.0 * nf.abs() / big_n,
        }
    }
}

impl fmt::Display for WindowKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WindowKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        WindowKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::arg(format!("unknown window kind `{s}`")))
    }
}

/// Normalized taps for offsets `−N/2 ..= N/2` (index 0 is `n = −N/2`).
pub fn window_coefficients(kind: WindowKind, len: usize) -> Result<Vec<f64>> {
    if len < 2 || len % 2 != 0 {
        return Err(Error::arg(format!(
            "window length must be even and at least 2, got {len}"
        )));
    }
    let half = (len / 2) as i64;
    let raw: Vec<f64> = (-half..=half).map(|n| kind.raw(n, len)).collect();
    let sum: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|c| c / sum).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowFilter {
    kind: WindowKind,
    len: usize,
    coefficients: Vec<f64>,
}

impl WindowFilter {
    pub fn new(kind: WindowKind, len: usize) -> Result<Self> {
        Ok(Self {
            kind,
            len,
            coefficients: window_coefficients(kind, len)?,
        })
    }

    pub fn kind(&self) -> WindowKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn half_width(&self) -> usize {
        self.len / 2
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    /// Coefficient at signed offset `n`, zero outside the support.
    pub fn at(&self, n: i64) -> f64 {
        let h = self.half_width() as i64;
        if n.abs() > h {
            0.0
        } else {
            self.coefficients[(n + h) as usize]
        }
    }
}

/// Convolves one contiguous segment, zero-padding beyond both ends.
pub fn smooth_segment(series: &[f64], filter: &WindowFilter) -> Vec<f64> {
    let len = series.len() as i64;
    let h = filter.half_width() as i64;
    let c = filter.coefficients();
    (0..len)
        .map(|t| {
            let lo = (-h).max(t - len + 1);
            let hi = h.min(t);
            (lo..=hi)
                .map(|n| c[(n + h) as usize] * series[(t - n) as usize])
                .sum()
        })
        .collect()
}

fn check_segments(segments: &[Range<usize>], n: usize) -> Result<()> {
    let mut sorted: Vec<&Range<usize>> = segments.iter().collect();
    sorted.sort_by_key(|r| r.start);
    let mut cursor = 0;
    for r in sorted {
        if r.start < cursor {
            return Err(Error::arg(format!(
                "segment {}..{} overlaps a previous segment",
                r.start, r.end
            )));
        }
        if r.start > cursor || r.end < r.start {
            return Err(Error::arg(format!(
                "segments leave indices {cursor}..{} uncovered",
                r.start
            )));
        }
        cursor = r.end;
    }
    if cursor != n {
        return Err(Error::arg(format!("segments cover 0..{cursor}, expected 0..{n}")));
    }
    Ok(())
}

/// Smooths every depth column independently within each segment.
pub fn smooth_by_segments(
    field: &TemperatureField,
    filter: &WindowFilter,
    segments: &[Range<usize>],
) -> Result<TemperatureField> {
    check_segments(segments, field.n_times())?;
    field.map_columns(|_, col| {
        let mut out = vec![0.0; col.len()];
        for seg in segments {
            let smoothed = smooth_segment(&col[seg.clone()], filter);
            out[seg.clone()].copy_from_slice(&smoothed);
        }
        Ok(out)
    })
}

/// Objective value for each tried window length.
pub type WindowScores = Vec<(usize, f64)>;

/// Picks the candidate with the lowest objective; ties go to the smaller
/// length. Non-finite scores never win.
pub fn select_window_length<F>(candidates: &[usize], mut objective: F) -> Result<(usize, WindowScores)>
where
    F: FnMut(usize) -> Result<f64>,
{
    if candidates.is_empty() {
        return Err(Error::arg("no window-length candidates"));
    }
    let mut scores = Vec::with_capacity(candidates.len());
    for &n in candidates {
        scores.push((n, objective(n)?));
    }
    let key = |s: f64| if s.is_finite() { s } else { f64::INFINITY };
    let best = scores
        .iter()
        .copied()
        .min_by(|a, b| key(a.1).total_cmp(&key(b.1)).then(a.0.cmp(&b.0)))
        .map(|(n, _)| n)
        .unwrap_or(candidates[0]);
    Ok((best, scores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn raw_values_from_the_formulas() {
        assert_eq!(WindowKind::Flat.raw(3, 8), 1.0 / 8.0);
        assert_eq!(WindowKind::Hanning.raw(0, 8), 1.0);
        assert!(WindowKind::Hanning.raw(4, 8).abs() < 1e-15);
        assert!((WindowKind::Hamming.raw(4, 8) - 0.08).abs() < 1e-15);
        assert!((WindowKind::Hamming.raw(-4, 8) - 0.08).abs() < 1e-15);
        assert_eq!(WindowKind::Bartlett.raw(0, 8), 1.0);
        assert_eq!(WindowKind::Bartlett.raw(-2, 8), 0.5);
        assert!((WindowKind::Blackman.raw(0, 8) - 1.0).abs() < 1e-15);
        assert!(WindowKind::Blackman.raw(4, 8).abs() < 1e-15);
    }

    #[test]
    fn flat_weights_are_equal() {
        let c = window_coefficients(WindowKind::Flat, 6).unwrap();
        assert_eq!(c.len(), 7);
        for v in &c {
            assert!((v - 1.0 / 7.0).abs() < 1e-15);
        }
    }

    #[test]
    fn invalid_lengths() {
        for n in [0, 1, 3, 7] {
            assert!(window_coefficients(WindowKind::Hamming, n).is_err());
        }
    }

    #[test]
    fn hand_convolution_with_zero_padding() {
        let f = WindowFilter::new(WindowKind::Flat, 2).unwrap();
        let out = smooth_segment(&[1.0, 2.0, 3.0, 4.0, 5.0], &f);
        assert!((out[2] - 3.0).abs() < 1e-15);
        assert!((out[0] - 1.0).abs() < 1e-15);
        assert!((out[4] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn constant_interior_preserved() {
        for kind in WindowKind::ALL {
            let f = WindowFilter::new(kind, 12).unwrap();
            let out = smooth_segment(&[4.2; 50], &f);
            for v in &out[6..44] {
                assert!((v - 4.2).abs() < 1e-12);
            }
        }
    }

    fn field_from_cols(cols: &[Vec<f64>]) -> TemperatureField {
        let n = cols[0].len();
        let mut m = Matrix::zeros(n, cols.len());
        for (d, c) in cols.iter().enumerate() {
            for (t, v) in c.iter().enumerate() {
                m.set(t, d, *v);
            }
        }
        TemperatureField::new(300.0, (0..cols.len()).map(|d| d as f64).collect(), m).unwrap()
    }

    #[test]
    fn segments_are_isolated() {
        let f = WindowFilter::new(WindowKind::Hanning, 8).unwrap();
        let mut x = vec![0.0; 40];
        x[19] = 100.0;
        let field = field_from_cols(&[x]);
        let out = smooth_by_segments(&field, &f, &[0..20, 20..40]).unwrap();
        assert!(out.column(0)[20..].iter().all(|v| *v == 0.0));
        assert!(out.column(0)[16] > 0.0);
    }

    #[test]
    fn single_segment_matches_direct() {
        let f = WindowFilter::new(WindowKind::Bartlett, 6).unwrap();
        let a: Vec<f64> = (0..30).map(|i| (i as f64).sin()).collect();
        let b: Vec<f64> = (0..30).map(|i| (i as f64 * 0.3).cos()).collect();
        let out = smooth_by_segments(&field_from_cols(&[a.clone(), b.clone()]), &f, &[0..30]).unwrap();
        assert_eq!(out.column(0), smooth_segment(&a, &f));
        assert_eq!(out.column(1), smooth_segment(&b, &f));
    }

    #[test]
    fn segment_errors() {
        let f = WindowFilter::new(WindowKind::Flat, 2).unwrap();
        let field = field_from_cols(&[vec![1.0; 10]]);
        assert!(smooth_by_segments(&field, &f, &[0..6, 5..10]).is_err());
        assert!(smooth_by_segments(&field, &f, &[0..4, 5..10]).is_err());
        assert!(smooth_by_segments(&field, &f, &[0..9]).is_err());
    }

    #[test]
    fn window_selection() {
        let (n, scores) = select_window_length(&[8], |_| Ok(3.0)).unwrap();
        assert_eq!((n, scores.len()), (8, 1));
        let (n, _) = select_window_length(&[4, 8, 12, 16], |n| Ok((n as f64 - 12.0).abs())).unwrap();
        assert_eq!(n, 12);
        let (n, _) = select_window_length(&[8, 4], |_| Ok(1.0)).unwrap();
        assert_eq!(n, 4);
        assert!(select_window_length(&[], |_| Ok(1.0)).is_err());
        assert!(select_window_length(&[2, 4], |n| if n == 4 { Err(Error::arg("boom")) } else { Ok(0.0) }).is_err());
    }

    #[test]
    fn noisy_sinusoid_selects_an_interior_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let clean: Vec<f64> = (0..4000).map(|i| (i as f64 * 2.0 * PI / 400.0).sin()).collect();
        let noisy: Vec<f64> = clean.iter().map(|c| c + noise.sample(&mut rng)).collect();
        let rmse = |n: usize| -> Result<f64> {
            let f = WindowFilter::new(WindowKind::Flat, n)?;
            let s = smooth_segment(&noisy, &f);
            let sse: f64 = s[200..3800].iter().zip(&clean[200..3800]).map(|(a, b)| (a - b).powi(2)).sum();
            Ok((sse / 3600.0).sqrt())
        };
        let candidates = [2, 8, 24, 48, 96, 384];
        let (best, scores) = select_window_length(&candidates, rmse).unwrap();
        assert!(best != 2 && best != 384);
        let get = |n| scores.iter().find(|s| s.0 == n).unwrap().1;
        assert!(get(best) < get(2) && get(best) < get(384));
    }

    #[test]
    fn white_noise_variance_reduction() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let x: Vec<f64> = (0..100_000).map(|_| noise.sample(&mut rng)).collect();
        for kind in WindowKind::ALL {
            let f = WindowFilter::new(kind, 12).unwrap();
            let y = smooth_segment(&x, &f);
            let var = |v: &[f64]| {
                let m = v.iter().sum::<f64>() / v.len() as f64;
                v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / v.len() as f64
            };
            let ratio = var(&y[6..y.len() - 6]) / var(&x);
            let expected: f64 = f.coefficients().iter().map(|c| c * c).sum();
            assert!((ratio / expected - 1.0).abs() < 0.1, "{kind}: {ratio} vs {expected}");
        }
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("Hamming".parse::<WindowKind>().unwrap(), WindowKind::Hamming);
        assert!("kaiser".parse::<WindowKind>().is_err());
    }

    proptest! {
        #[test]
        fn normalized_and_symmetric(kind_idx in 0usize..5, half in 1usize..60) {
            let kind = WindowKind::ALL[kind_idx];
            let n = 2 * half;
            let c = window_coefficients(kind, n).unwrap();
            prop_assert_eq!(c.len(), n + 1);
            prop_assert!((c.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for i in 0..c.len() {
                prop_assert_eq!(c[i], c[c.len() - 1 - i]);
            }
        }

        #[test]
        fn smoothing_is_linear(
            xs in proptest::collection::vec(-10.0f64..10.0, 40),
            ys in proptest::collection::vec(-10.0f64..10.0, 40),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
            cut in 1usize..39,
        ) {
            let f = WindowFilter::new(WindowKind::Blackman, 6).unwrap();
            let combo: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| a * x + b * y).collect();
            let segs = [0..cut, cut..40];
            let fx = smooth_by_segments(&field_from_cols(&[xs.clone()]), &f, &segs).unwrap().column(0);
            let fy = smooth_by_segments(&field_from_cols(&[ys.clone()]), &f, &segs).unwrap().column(0);
            let fc = smooth_by_segments(&field_from_cols(&[combo]), &f, &segs).unwrap().column(0);
            for i in 0..40 {
                prop_assert!((fc[i] - (a * fx[i] + b * fy[i])).abs() < 1e-12);
            }
        }
    }
}
