//! Evaluation statistics: RMSE, R², range-normalized RMSE, metrics
//! stratified by flux direction, and summaries over seeds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check(pred: &[f64], obs: &[f64]) -> Result<()> {
    if pred.len() != obs.len() {
        return Err(Error::arg(format!(
            "length mismatch: {} predictions vs {} observations",
            pred.len(),
            obs.len()
        )));
    }
    if obs.is_empty() {
        return Err(Error::arg("metrics need at least one point"));
    }
    Ok(())
}

fn sse(pred: &[f64], obs: &[f64]) -> f64 {
    pred.iter().zip(obs).map(|(p, o)| (p - o) * (p - o)).sum()
}

pub fn rmse(pred: &[f64], obs: &[f64]) -> Result<f64> {
    check(pred, obs)?;
    Ok((sse(pred, obs) / obs.len() as f64).sqrt())
}

/// `1 − SSE/SST` with SST about the observation mean.
pub fn r2(pred: &[f64], obs: &[f64]) -> Result<f64> {
    check(pred, obs)?;
    let mean = obs.iter().sum::<f64>() / obs.len() as f64;
    let sst: f64 = obs.iter().map(|o| (o - mean) * (o - mean)).sum();
    if sst == 0.0 {
        return Err(Error::numerical("R² is undefined for constant observations"));
    }
    Ok(1.0 - sse(pred, obs) / sst)
}

pub fn rmse_normalized(rmse: f64, flux_max: f64, flux_min: f64) -> Result<f64> {
    let range = flux_max - flux_min;
    if !(range > 0.0) {
        return Err(Error::arg(format!(
            "flux range must be positive, got [{flux_min}, {flux_max}]"
        )));
    }
    Ok(rmse / range)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rmse: f64,
    /// Absent when the observations are constant.
    pub r2: Option<f64>,
    /// Absent when the observations have zero range.
    pub rmse_normalized: Option<f64>,
    pub rmse_upward: Option<f64>,
    pub rmse_downward: Option<f64>,
    pub n_points: usize,
    pub n_upward: usize,
    pub n_downward: usize,
}

/// Overall metrics plus RMSE restricted to upward (`obs > 0`) and downward
/// (`obs < 0`) flux. Exact zeros count only toward `n_points`.
pub fn stratified(pred: &[f64], obs: &[f64]) -> Result<EvalReport> {
    let overall = rmse(pred, obs)?;
    let stratum = |keep: fn(f64) -> bool| {
        let (mut s, mut n) = (0.0, 0usize);
        for (p, o) in pred.iter().zip(obs) {
            if keep(*o) {
                s += (p - o) * (p - o);
                n += 1;
            }
        }
        ((n > 0).then(|| (s / n as f64).sqrt()), n)
    };
    let (up, n_up) = stratum(|o| o > 0.0);
    let (down, n_down) = stratum(|o| o < 0.0);
    let max = obs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = obs.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(EvalReport {
        rmse: overall,
        r2: r2(pred, obs).ok(),
        rmse_normalized: rmse_normalized(overall, max, min).ok(),
        rmse_upward: up,
        rmse_downward: down,
        n_points: obs.len(),
        n_upward: n_up,
        n_downward: n_down,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanVar {
    pub mean: f64,
    pub variance: f64,
    /// Number of reports that carried this statistic.
    pub count: usize,
}

impl MeanVar {
    fn of(values: impl Iterator<Item = f64>) -> Option<Self> {
        let v: Vec<f64> = values.collect();
        if v.is_empty() {
            return None;
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let variance = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        Some(Self {
            mean,
            variance,
            count: v.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub reports: Vec<EvalReport>,
    pub rmse: MeanVar,
    pub r2: Option<MeanVar>,
    pub rmse_normalized: Option<MeanVar>,
    pub rmse_upward: Option<MeanVar>,
    pub rmse_downward: Option<MeanVar>,
}

/// Mean and population variance of each statistic across seeds.
pub fn summarize_seeds(reports: &[EvalReport]) -> Result<SeedSummary> {
    if reports.is_empty() {
        return Err(Error::arg("no reports to summarize"));
    }
    let opt = |f: fn(&EvalReport) -> Option<f64>| MeanVar::of(reports.iter().filter_map(f));
    Ok(SeedSummary {
        reports: reports.to_vec(),
        rmse: MeanVar::of(reports.iter().map(|r| r.rmse)).expect("non-empty"),
        r2: opt(|r| r.r2),
        rmse_normalized: opt(|r| r.rmse_normalized),
        rmse_upward: opt(|r| r.rmse_upward),
        rmse_downward: opt(|r| r.rmse_downward),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn basic_values() {
        assert_eq!(rmse(&[1.0, 1.0], &[0.0, 2.0]).unwrap(), 1.0);
        assert_eq!(r2(&[1.0, 1.0], &[0.0, 2.0]).unwrap(), 0.0);
        let obs = [1.0, 4.0, -2.0];
        assert_eq!(rmse(&obs, &obs).unwrap(), 0.0);
        assert_eq!(r2(&obs, &obs).unwrap(), 1.0);
        assert_eq!(rmse_normalized(2.0, 5.0, -3.0).unwrap(), 0.25);
        assert_eq!(rmse_normalized(0.0, 5.0, -3.0).unwrap(), 0.0);
    }

    #[test]
    fn errors() {
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
        assert!(rmse(&[], &[]).is_err());
        assert!(r2(&[1.0, 2.0], &[3.0, 3.0]).is_err());
        assert!(rmse_normalized(1.0, 2.0, 2.0).is_err());
    }

    #[test]
    fn strata() {
        let r = stratified(&[1.0, 0.0], &[1.0, -1.0]).unwrap();
        assert_eq!(r.rmse_upward, Some(0.0));
        assert_eq!(r.rmse_downward, Some(1.0));
        let r = stratified(&[1.0, 2.0, 0.5], &[1.0, 2.0, 0.0]).unwrap();
        assert_eq!(r.rmse_downward, None);
        assert_eq!((r.n_points, r.n_upward, r.n_downward), (3, 2, 0));
    }

    #[test]
    fn seed_summary() {
        let mk = |rmse| EvalReport {
            rmse,
            r2: None,
            rmse_normalized: None,
            rmse_upward: None,
            rmse_downward: None,
            n_points: 1,
            n_upward: 0,
            n_downward: 0,
        };
        let s = summarize_seeds(&[mk(1.0), mk(3.0)]).unwrap();
        assert_eq!((s.rmse.mean, s.rmse.variance), (2.0, 1.0));
        assert!(s.r2.is_none());
        let one = summarize_seeds(&[mk(1.5)]).unwrap();
        assert_eq!((one.rmse.mean, one.rmse.variance), (1.5, 0.0));
        let rev = summarize_seeds(&[mk(3.0), mk(1.0)]).unwrap();
        assert_eq!(rev.rmse, s.rmse);
        assert!(summarize_seeds(&[]).is_err());
    }

    fn pairs() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..40).prop_flat_map(|n| {
            (
                proptest::collection::vec(-5.0f64..5.0, n),
                proptest::collection::vec(-5.0f64..5.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn symmetric_and_decomposes((p, o) in pairs()) {
            prop_assert_eq!(rmse(&p, &o).unwrap(), rmse(&o, &p).unwrap());
            let r = stratified(&p, &o).unwrap();
            let up = r.rmse_upward.map_or(0.0, |v| v * v * r.n_upward as f64);
            let down = r.rmse_downward.map_or(0.0, |v| v * v * r.n_downward as f64);
            let zero: f64 = p.iter().zip(&o).filter(|(_, o)| **o == 0.0).map(|(p, _)| p * p).sum();
            let total = r.rmse * r.rmse * r.n_points as f64;
            prop_assert!((up + down + zero - total).abs() <= 1e-9 * total.max(1.0));
        }

        #[test]
        fn normalized_is_scale_invariant((p, o) in pairs(), k in 0.1f64..10.0) {
            let e = rmse(&p, &o).unwrap();
            let ek = rmse(
                &p.iter().map(|v| v * k).collect::<Vec<_>>(),
                &o.iter().map(|v| v * k).collect::<Vec<_>>(),
            ).unwrap();
            let a = rmse_normalized(e, 5.0, -3.0).unwrap();
            let b = rmse_normalized(ek, 5.0 * k, -3.0 * k).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1e-12));
        }
    }
}
