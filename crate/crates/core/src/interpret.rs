//! Accumulated Local Effects (ALE) main-effect curves over quantile bins,
//! variation-based importances, pooled importances and top-K ranking
//! similarity.
//!
//! The curve estimator is the finite-difference bin form: within each bin,
//! average `predict(x_upper) − predict(x_lower)` over the rows in the bin,
//! accumulate from the lowest edge, then center so the mean over rows of
//! the curve (linearly interpolated at each row's own value) is zero.
//! Coinciding quantile edges are merged.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureKey, FeatureKind};
use crate::matrix::Matrix;

/// Black-box batch predictor; must be re-entrant.
pub type Predictor<'a> = dyn Fn(&Matrix) -> Result<Vec<f64>> + Sync + 'a;

pub const DEFAULT_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AleCurve {
    pub feature: String,
    pub bin_edges: Vec<f64>,
    pub accumulated_effects: Vec<f64>,
    pub importance: f64,
}

impl AleCurve {
    pub fn effective_bins(&self) -> usize {
        self.bin_edges.len() - 1
    }

    /// Curve value at `v`, linear between edges and flat outside them.
    pub fn value_at(&self, v: f64) -> f64 {
        let e = &self.bin_edges;
        let a = &self.accumulated_effects;
        if v <= e[0] {
            return a[0];
        }
        if v >= e[e.len() - 1] {
            return a[a.len() - 1];
        }
        let j = bin_of(e, v);
        let w = (v - e[j]) / (e[j + 1] - e[j]);
        a[j] + w * (a[j + 1] - a[j])
    }
}

/// Bin `j` covers `(e[j], e[j+1]]`; the first bin also holds `e[0]`.
fn bin_of(edges: &[f64], v: f64) -> usize {
    edges
        .partition_point(|e| *e < v)
        .max(1)
        .min(edges.len() - 1)
        - 1
}

/// Quantiles by linear interpolation between order statistics.
fn quantile_edges(sorted: &[f64], n_bins: usize) -> Vec<f64> {
    let n = sorted.len();
    let mut edges: Vec<f64> = (0..=n_bins)
        .map(|k| {
            let pos = k as f64 / n_bins as f64 * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
        })
        .collect();
    edges.dedup();
    edges
}

pub fn ale_main_effect(
    predict: &Predictor<'_>,
    x: &Matrix,
    feature: usize,
    name: &str,
    n_bins: usize,
) -> Result<AleCurve> {
    if x.rows() == 0 || feature >= x.cols() {
        return Err(Error::arg(format!(
            "need a non-empty matrix with column {feature}, got {}x{}",
            x.rows(),
            x.cols()
        )));
    }
    if n_bins == 0 {
        return Err(Error::arg("n_bins must be at least 1"));
    }
    let col = x.column(feature);
    let mut sorted = col.clone();
    sorted.sort_by(f64::total_cmp);
    if sorted[0] == sorted[sorted.len() - 1] {
        return Err(Error::DegenerateFeature(name.to_string()));
    }
    let edges = quantile_edges(&sorted, n_bins);
    let nb = edges.len() - 1;

    let bins: Vec<usize> = col.iter().map(|&v| bin_of(&edges, v)).collect();
    let mut lower = x.clone();
    let mut upper = x.clone();
    for (r, &b) in bins.iter().enumerate() {
        lower.set(r, feature, edges[b]);
        upper.set(r, feature, edges[b + 1]);
    }
    let lo = predict(&lower)?;
    let hi = predict(&upper)?;
    if lo.len() != x.rows() || hi.len() != x.rows() {
        return Err(Error::arg("predictor returned the wrong number of values"));
    }
    let mut sum = vec![0.0; nb];
    let mut count = vec![0usize; nb];
    for (r, &b) in bins.iter().enumerate() {
        sum[b] += hi[r] - lo[r];
        count[b] += 1;
    }
    let mut acc = vec![0.0; nb + 1];
    for j in 0..nb {
        let step = if count[j] > 0 { sum[j] / count[j] as f64 } else { 0.0 };
        acc[j + 1] = acc[j] + step;
    }
    let mut curve = AleCurve {
        feature: name.to_string(),
        bin_edges: edges,
        accumulated_effects: acc,
        importance: 0.0,
    };
    let center = col.iter().map(|&v| curve.value_at(v)).sum::<f64>() / col.len() as f64;
    curve
        .accumulated_effects
        .iter_mut()
        .for_each(|a| *a -= center);
    curve.importance = ale_importance(&curve);
    Ok(curve)
}

/// Sample standard deviation of the curve values at its edges.
pub fn ale_importance(curve: &AleCurve) -> f64 {
    let a = &curve.accumulated_effects;
    if a.len() < 2 {
        return 0.0;
    }
    let n = a.len() as f64;
    let mean = a.iter().sum::<f64>() / n;
    (a.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceTable {
    pub keys: Vec<FeatureKey>,
    pub importance: Vec<f64>,
}

impl ImportanceTable {
    pub fn new(keys: Vec<FeatureKey>, importance: Vec<f64>) -> Result<Self> {
        if keys.len() != importance.len() {
            return Err(Error::arg(format!(
                "{} keys but {} importances",
                keys.len(),
                importance.len()
            )));
        }
        if importance.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::arg("importances must be finite and non-negative"));
        }
        Ok(Self { keys, importance })
    }

    /// 1-based ranks, most important first; ties go to the earlier key.
    pub fn ranks(&self) -> Vec<usize> {
        let mut ranks = vec![0; self.importance.len()];
        for (r, i) in ranking(&self.importance).into_iter().enumerate() {
            ranks[i] = r + 1;
        }
        ranks
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv_writer(writer);
        w.write_record(["feature_key", "importance", "rank"])
            .map_err(csv_err)?;
        for ((k, v), r) in self.keys.iter().zip(&self.importance).zip(self.ranks()) {
            w.write_record([k.to_string(), v.to_string(), r.to_string()])
                .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io("writing importance table", e))
    }
}

fn csv_writer<W: Write>(writer: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().from_writer(writer)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Csv {
        path: "<stream>".into(),
        message: e.to_string(),
    }
}

/// ALE curves for every column in parallel. Constant columns have no
/// curve and importance 0.
pub fn ale_table(
    predict: &Predictor<'_>,
    x: &Matrix,
    keys: &[FeatureKey],
    n_bins: usize,
) -> Result<(Vec<Option<AleCurve>>, ImportanceTable)> {
    if keys.len() != x.cols() {
        return Err(Error::arg(format!(
            "{} keys for {} columns",
            keys.len(),
            x.cols()
        )));
    }
    let curves: Vec<Option<AleCurve>> = (0..x.cols())
        .into_par_iter()
        .map(|f| match ale_main_effect(predict, x, f, &keys[f].to_string(), n_bins) {
            Ok(c) => Ok(Some(c)),
            Err(Error::DegenerateFeature(_)) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;
    let importance = curves
        .iter()
        .map(|c| c.as_ref().map_or(0.0, |c| c.importance))
        .collect();
    let table = ImportanceTable::new(keys.to_vec(), importance)?;
    Ok((curves, table))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupBy {
    Kind,
    Depth,
    Lag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledImportance {
    pub group: String,
    pub mean_importance: f64,
}

/// Mean importance per kind, depth or lag, groups in ascending order
/// (kinds in declaration order).
pub fn pool_importance(table: &ImportanceTable, by: GroupBy) -> Result<Vec<PooledImportance>> {
    if table.keys.is_empty() {
        return Err(Error::arg("no features to pool"));
    }
    #[derive(PartialEq, PartialOrd)]
    enum Group {
        Kind(FeatureKind),
        Value(f64),
    }
    let group_of = |k: &FeatureKey| match by {
        GroupBy::Kind => Group::Kind(k.kind),
        GroupBy::Depth => Group::Value(k.depth_m),
        GroupBy::Lag => Group::Value(k.lag_steps as f64),
    };
    let mut groups: Vec<(Group, f64, usize)> = Vec::new();
    for (k, v) in table.keys.iter().zip(&table.importance) {
        let g = group_of(k);
        match groups.iter_mut().find(|(h, _, _)| *h == g) {
            Some(entry) => {
                entry.1 += v;
                entry.2 += 1;
            }
            None => groups.push((g, *v, 1)),
        }
    }
    groups.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite group values"));
    Ok(groups
        .into_iter()
        .map(|(g, s, n)| PooledImportance {
            group: match g {
                Group::Kind(k) => k.to_string(),
                Group::Value(v) if by == GroupBy::Depth => format!("{v:.3}"),
                Group::Value(v) => format!("{}", v as i64),
            },
            mean_importance: s / n as f64,
        })
        .collect())
}

pub fn write_pooled_csv<W: Write>(pooled: &[PooledImportance], writer: W) -> Result<()> {
    let mut w = csv_writer(writer);
    w.write_record(["group", "mean_importance"]).map_err(csv_err)?;
    for p in pooled {
        w.write_record([p.group.clone(), p.mean_importance.to_string()])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("writing pooled importances", e))
}

/// Indices ordered by decreasing importance; ties keep index order.
fn ranking(importance: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..importance.len()).collect();
    idx.sort_by(|&a, &b| importance[b].total_cmp(&importance[a]));
    idx
}

/// The top third, rounded up.
pub fn default_top_k(n_features: usize) -> usize {
    n_features.div_ceil(3)
}

/// `|TopK(a) ∩ TopK(b)| / |TopK(a) ∪ TopK(b)|` over a shared feature
/// universe; equal importances rank by feature index.
pub fn jaccard_topk(a: &[f64], b: &[f64], k: usize) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::arg(format!(
            "importance tables differ in size: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if k == 0 || k > a.len() {
        return Err(Error::arg(format!("K = {k} outside 1..={}", a.len())));
    }
    let mut in_a = vec![false; a.len()];
    for i in ranking(a).into_iter().take(k) {
        in_a[i] = true;
    }
    let common = ranking(b).into_iter().take(k).filter(|&i| in_a[i]).count();
    Ok(common as f64 / (2 * k - common) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform_matrix(n: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * cols).map(|_| rng.random_range(0.0..1.0)).collect();
        Matrix::from_vec(n, cols, data).unwrap()
    }

    fn linear(x: &Matrix) -> Result<Vec<f64>> {
        Ok((0..x.rows()).map(|r| 3.0 * x.get(r, 0) - 1.0).collect())
    }

    #[test]
    fn linear_model_curve_and_importance() {
        let x = uniform_matrix(5000, 2, 1);
        let c = ale_main_effect(&linear, &x, 0, "x1", 10).unwrap();
        assert_eq!(c.effective_bins(), 10);
        for (e, a) in c.bin_edges.iter().zip(&c.accumulated_effects) {
            assert!((a - (3.0 * e - 1.5)).abs() < 3.0 / 20.0, "{e} {a}");
        }
        assert!((c.importance - 0.995).abs() < 0.02, "{}", c.importance);
        let ignored = ale_main_effect(&linear, &x, 1, "x2", 10).unwrap();
        assert!(ignored.accumulated_effects.iter().all(|a| *a == 0.0));
        assert_eq!(ignored.importance, 0.0);
    }

    #[test]
    fn importance_of_uniform_edges() {
        let edges: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let curve = AleCurve {
            feature: "x".into(),
            accumulated_effects: edges.iter().map(|e| 3.0 * e - 1.5).collect(),
            bin_edges: edges,
            importance: 0.0,
        };
        assert!((ale_importance(&curve) - 0.99499).abs() < 1e-4);
        let scaled = AleCurve {
            accumulated_effects: curve.accumulated_effects.iter().map(|a| -2.0 * a).collect(),
            ..curve.clone()
        };
        assert!((ale_importance(&scaled) - 2.0 * ale_importance(&curve)).abs() < 1e-12);
    }

    #[test]
    fn curve_is_centered_over_rows() {
        let x = uniform_matrix(2000, 2, 3);
        let f = |m: &Matrix| -> Result<Vec<f64>> {
            Ok((0..m.rows()).map(|r| (4.0 * m.get(r, 0)).sin() * 2.0 + m.get(r, 1)).collect())
        };
        let c = ale_main_effect(&f, &x, 0, "x1", 10).unwrap();
        let mean: f64 = x.column(0).iter().map(|v| c.value_at(*v)).sum::<f64>() / 2000.0;
        let scale = c.accumulated_effects.iter().fold(0.0f64, |m, a| m.max(a.abs()));
        assert!(mean.abs() < 1e-8 * scale);
    }

    #[test]
    fn additive_models_are_separable_and_reconstructed() {
        let f = |m: &Matrix| -> Result<Vec<f64>> {
            Ok((0..m.rows())
                .map(|r| m.get(r, 0).powi(2) + (3.0 * m.get(r, 1)).sin())
                .collect())
        };
        let x = uniform_matrix(4000, 2, 5);
        let mut skewed = x.clone();
        for r in 0..x.rows() {
            skewed.set(r, 1, x.get(r, 1).powi(3));
        }
        let a = ale_main_effect(&f, &x, 0, "x1", 10).unwrap();
        let b = ale_main_effect(&f, &skewed, 0, "x1", 10).unwrap();
        for (u, v) in a.accumulated_effects.iter().zip(&b.accumulated_effects) {
            assert!((u - v).abs() < 1e-12);
        }
        let c2 = ale_main_effect(&f, &x, 1, "x2", 40).unwrap();
        let c1 = ale_main_effect(&f, &x, 0, "x1", 40).unwrap();
        let pred = f(&x).unwrap();
        let mean = pred.iter().sum::<f64>() / pred.len() as f64;
        for r in 0..x.rows() {
            let rebuilt = mean + c1.value_at(x.get(r, 0)) + c2.value_at(x.get(r, 1));
            assert!((rebuilt - pred[r]).abs() < 0.02, "row {r}");
        }
    }

    #[test]
    fn never_extrapolates() {
        let x = uniform_matrix(500, 2, 7);
        let (lo, hi) = x
            .column(0)
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
        let f = move |m: &Matrix| -> Result<Vec<f64>> {
            for r in 0..m.rows() {
                assert!(m.get(r, 0) >= lo && m.get(r, 0) <= hi);
            }
            Ok(vec![0.0; m.rows()])
        };
        ale_main_effect(&f, &x, 0, "x1", 10).unwrap();
    }

    #[test]
    fn degenerate_and_duplicate_edges() {
        let x = Matrix::from_vec(4, 1, vec![2.0; 4]).unwrap();
        assert!(matches!(
            ale_main_effect(&linear, &x, 0, "c", 10),
            Err(Error::DegenerateFeature(_))
        ));
        let x = Matrix::from_vec(6, 1, vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0]).unwrap();
        let c = ale_main_effect(&linear, &x, 0, "b", 10).unwrap();
        assert!(c.effective_bins() < 10);
        assert!(c.bin_edges.windows(2).all(|w| w[0] < w[1]));
    }

    fn key(kind: FeatureKind, depth_m: f64, lag_steps: i32) -> FeatureKey {
        FeatureKey {
            kind,
            depth_m,
            lag_steps,
        }
    }

    #[test]
    fn pooling() {
        let t = ImportanceTable::new(
            vec![
                key(FeatureKind::SpatialGrad, 0.1, 0),
                key(FeatureKind::Temp, 0.1, 1),
                key(FeatureKind::SpatialGrad, 0.2, 1),
                key(FeatureKind::Temp, 0.2, 0),
            ],
            vec![0.0, 2.0, 0.0, 4.0],
        )
        .unwrap();
        let p = pool_importance(&t, GroupBy::Kind).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!((p[0].group.as_str(), p[0].mean_importance), ("Temp", 3.0));
        assert_eq!((p[1].group.as_str(), p[1].mean_importance), ("SpatialGrad", 0.0));
        let d = pool_importance(&t, GroupBy::Depth).unwrap();
        assert_eq!(d[0].group, "0.100");
        let l = pool_importance(&t, GroupBy::Lag).unwrap();
        assert_eq!((l[1].group.as_str(), l[1].mean_importance), ("1", 1.0));
        assert!(pool_importance(&ImportanceTable::new(vec![], vec![]).unwrap(), GroupBy::Kind).is_err());
        let mut csv = Vec::new();
        write_pooled_csv(&p, &mut csv).unwrap();
        assert!(String::from_utf8(csv).unwrap().starts_with("group,mean_importance\nTemp,3\n"));
        let mut csv = Vec::new();
        t.write_csv(&mut csv).unwrap();
        assert!(String::from_utf8(csv)
            .unwrap()
            .contains("Temp@0.200@0,4,1\n"));
    }

    #[test]
    fn jaccard_examples() {
        let a = [5.0, 4.0, 3.0, 0.0, 0.0, 0.0];
        assert_eq!(jaccard_topk(&a, &a, 3).unwrap(), 1.0);
        let b = [0.0, 0.0, 0.0, 5.0, 4.0, 3.0];
        assert_eq!(jaccard_topk(&a, &b, 3).unwrap(), 0.0);
        // {A,B,C} vs {B,C,D}
        let c = [0.0, 4.0, 3.0, 5.0, 0.0, 0.0];
        assert_eq!(jaccard_topk(&a, &c, 3).unwrap(), 0.5);
        assert!(jaccard_topk(&a, &c, 0).is_err());
        assert!(jaccard_topk(&a, &c, 7).is_err());
        assert_eq!(default_top_k(138), 46);
        assert_eq!(default_top_k(156), 52);
        // Ties resolve to the lower index.
        assert_eq!(jaccard_topk(&[1.0; 4], &[1.0, 1.0, 0.0, 0.0], 2).unwrap(), 1.0);
    }

    proptest! {
        #[test]
        fn jaccard_symmetric(a in proptest::collection::vec(0.0f64..1.0, 1..20),
                             seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b: Vec<f64> = a.iter().map(|_| rng.random_range(0.0..1.0)).collect();
            let k = 1 + (seed as usize % a.len());
            let ab = jaccard_topk(&a, &b, k).unwrap();
            prop_assert_eq!(ab, jaccard_topk(&b, &a, k).unwrap());
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn pooling_permutation_invariant(vals in proptest::collection::vec(0.0f64..5.0, 6)) {
            let kinds = [FeatureKind::Temp, FeatureKind::TemporalGrad, FeatureKind::SpatialGrad];
            let keys: Vec<FeatureKey> = (0..6).map(|i| key(kinds[i % 3], 0.1 * (i / 3) as f64, 0)).collect();
            let t = ImportanceTable::new(keys.clone(), vals.clone()).unwrap();
            let rev = ImportanceTable::new(
                keys.into_iter().rev().collect(),
                vals.into_iter().rev().collect(),
            ).unwrap();
            let p = pool_importance(&t, GroupBy::Kind).unwrap();
            let q = pool_importance(&rev, GroupBy::Kind).unwrap();
            for (x, y) in p.iter().zip(&q) {
                prop_assert_eq!(&x.group, &y.group);
                prop_assert!((x.mean_importance - y.mean_importance).abs() < 1e-12);
            }
        }
    }
}
