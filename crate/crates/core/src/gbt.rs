//! Regularized gradient-boosted regression trees.
//!
//! Squared-error boosting with second-order leaf weights
//! `w = −S_α(G)/(H + λ)` (`S_α` soft-thresholds by the L1 penalty),
//! exact-greedy splits scored by
//! `½[S_α(G_L)²/(H_L+λ) + S_α(G_R)²/(H_R+λ) − S_α(G)²/(H+λ)]`,
//! per-round row subsampling and a minimum child hessian. With squared
//! error every hessian is 1, so `H` is a row count.
//!
//! Split thresholds are midpoints between consecutive distinct values of a
//! feature within a node; rows with `x < threshold` go left. Among equal
//! gains the lower feature index and then the lower threshold win.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const MODEL_FORMAT: &str = "thermoflux-gbt";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbtParams {
    pub n_estimators: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub subsample: f64,
    pub reg_alpha: f64,
    pub reg_lambda: f64,
    pub min_child_weight: f64,
    pub seed: u64,
}

impl Default for GbtParams {
    /// Tuned values for noise-free inputs.
    fn default() -> Self {
        Self {
            n_estimators: 150,
            learning_rate: 0.1,
            max_depth: 6,
            subsample: 0.08,
            reg_alpha: 0.1,
            reg_lambda: 1.0,
            min_child_weight: 100.0,
            seed: 0,
        }
    }
}

impl GbtParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::arg("learning_rate must lie in (0, 1]"));
        }
        if self.max_depth == 0 {
            return Err(Error::arg("max_depth must be at least 1"));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(Error::arg("subsample must lie in (0, 1]"));
        }
        if !(self.reg_alpha >= 0.0 && self.reg_lambda >= 0.0 && self.min_child_weight >= 0.0) {
            return Err(Error::arg("regularization terms must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TreeNode {
    Leaf {
        weight: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        gain: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { weight } => return *weight,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    node = if row[*feature] < *threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn n_splits(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.n_splits() + right.n_splits(),
        }
    }

    fn leaves(&self, out: &mut Vec<f64>) {
        match self {
            TreeNode::Leaf { weight } => out.push(*weight),
            TreeNode::Split { left, right, .. } => {
                left.leaves(out);
                right.leaves(out);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub format: String,
    pub version: u32,
    pub base_score: f64,
    pub n_features: usize,
    pub trees: Vec<TreeNode>,
    /// Total split gain per feature.
    pub gain: Vec<f64>,
}

impl GbtModel {
    pub fn base_only(base_score: f64, n_features: usize) -> Self {
        Self {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            base_score,
            n_features,
            trees: Vec::new(),
            gain: vec![0.0; n_features],
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.base_score + self.trees.iter().map(|t| t.predict(row)).sum::<f64>()
    }

    pub fn leaf_weights(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for t in &self.trees {
            t.leaves(&mut out);
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: GbtModel = serde_json::from_str(text)?;
        if model.format != MODEL_FORMAT || model.version != MODEL_VERSION {
            return Err(Error::arg(format!(
                "unsupported model document {} v{}",
                model.format, model.version
            )));
        }
        Ok(model)
    }
}

#[inline]
fn soft_threshold(g: f64, alpha: f64) -> f64 {
    if g > alpha {
        g - alpha
    } else if g < -alpha {
        g + alpha
    } else {
        0.0
    }
}

#[inline]
fn score(g: f64, h: f64, p: &GbtParams) -> f64 {
    let t = soft_threshold(g, p.reg_alpha);
    t * t / (h + p.reg_lambda)
}

/// Split gain as used by the tree builder.
pub fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, params: &GbtParams) -> f64 {
    0.5 * (score(gl, hl, params) + score(gr, hr, params) - score(gl + gr, hl + hr, params))
}

/// Regularized leaf weight before shrinkage.
pub fn leaf_weight(g: f64, h: f64, params: &GbtParams) -> f64 {
    -soft_threshold(g, params.reg_alpha) / (h + params.reg_lambda)
}

/// Strictly better by more than round-off; near-equal gains are ties and
/// the earlier candidate is kept.
#[inline]
fn beats(gain: f64, best: f64) -> bool {
    gain > best + 1e-12 * best.abs().max(1e-300)
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

struct Open {
    g: f64,
    h: f64,
    depth: usize,
    best: Option<Candidate>,
}

/// Node under construction: arena index of children, or a leaf.
enum Built {
    Pending,
    Leaf(f64),
    Split {
        cand: Candidate,
        left: usize,
        right: usize,
    },
}

const NONE: u32 = u32::MAX;

pub fn fit_gbt(x: &Matrix, y: &[f64], params: &GbtParams) -> Result<GbtModel> {
    params.validate()?;
    let n = x.rows();
    let nf = x.cols();
    if n < 2 || y.len() != n {
        return Err(Error::arg(format!(
            "need at least 2 rows with matching targets, got {n} rows and {} targets",
            y.len()
        )));
    }
    if nf == 0 {
        return Err(Error::arg("feature matrix has no columns"));
    }
    if !x.is_finite() || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::arg("training data contains non-finite values"));
    }

    let base_score = y.iter().sum::<f64>() / n as f64;
    let mut model = GbtModel::base_only(base_score, nf);
    if params.n_estimators == 0 || y.iter().all(|v| *v == y[0]) {
        return Ok(model);
    }

    // Presort every feature once; ties keep row order.
    let presorted: Vec<Vec<u32>> = (0..nf)
        .map(|f| {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| x.get(a as usize, f).total_cmp(&x.get(b as usize, f)));
            idx
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let n_sample = ((n as f64 * params.subsample).round() as usize).clamp(1, n);
    let mut pred = vec![base_score; n];
    let mut grad = vec![0.0; n];
    let mut in_sample = vec![false; n];

    for _ in 0..params.n_estimators {
        for i in 0..n {
            grad[i] = pred[i] - y[i];
        }
        in_sample.iter_mut().for_each(|s| *s = n_sample == n);
        if n_sample < n {
            for i in sample(&mut rng, n, n_sample) {
                in_sample[i] = true;
            }
        }
        let tree = grow_tree(x, &grad, &in_sample, &presorted, params, &mut model.gain);
        for (i, p) in pred.iter_mut().enumerate() {
            *p += tree.predict(x.row(i));
        }
        model.trees.push(tree);
    }
    Ok(model)
}

fn grow_tree(
    x: &Matrix,
    grad: &[f64],
    in_sample: &[bool],
    presorted: &[Vec<u32>],
    params: &GbtParams,
    gain_table: &mut [f64],
) -> TreeNode {
    let nf = x.cols();
    let sorted: Vec<Vec<u32>> = presorted
        .iter()
        .map(|o| o.iter().copied().filter(|&i| in_sample[i as usize]).collect())
        .collect();
    let rows: Vec<u32> = sorted[0].clone();

    let mut node_of = vec![NONE; x.rows()];
    let (mut g0, mut h0) = (0.0, 0.0);
    for &i in &rows {
        node_of[i as usize] = 0;
        g0 += grad[i as usize];
        h0 += 1.0;
    }

    let mut built = vec![Built::Pending];
    let mut open: Vec<(usize, Open)> = vec![(
        0,
        Open {
            g: g0,
            h: h0,
            depth: 0,
            best: None,
        },
    )];

    while !open.is_empty() {
        let splittable: Vec<usize> = open
            .iter()
            .enumerate()
            .filter(|(_, (_, o))| o.depth < params.max_depth)
            .map(|(k, _)| k)
            .collect();
        if !splittable.is_empty() {
            find_splits(x, grad, &sorted, &node_of, &mut open, params, nf);
        }

        let mut next = Vec::new();
        let mut relabel: Vec<Option<(u32, u32, usize, f64)>> = vec![None; built.len()];
        for (id, o) in open.drain(..) {
            match o.best.filter(|c| o.depth < params.max_depth && c.gain > 0.0) {
                Some(cand) => {
                    let left = built.len();
                    built.push(Built::Pending);
                    let right = built.len();
                    built.push(Built::Pending);
                    gain_table[cand.feature] += cand.gain;
                    built[id] = Built::Split { cand, left, right };
                    relabel.resize_with(built.len(), || None);
                    relabel[id] = Some((left as u32, right as u32, cand.feature, cand.threshold));
                    next.push((left, (0.0, 0.0), o.depth + 1));
                    next.push((right, (0.0, 0.0), o.depth + 1));
                }
                None => {
                    built[id] = Built::Leaf(leaf_weight(o.g, o.h, params) * params.learning_rate);
                }
            }
        }
        if next.is_empty() {
            break;
        }
        // Route rows into children and accumulate child totals.
        let mut totals = vec![(0.0f64, 0.0f64); built.len()];
        for &i in &rows {
            let i = i as usize;
            let cur = node_of[i];
            if cur == NONE {
                continue;
            }
            match relabel.get(cur as usize).copied().flatten() {
                Some((l, r, f, thr)) => {
                    let child = if x.get(i, f) < thr { l } else { r };
                    node_of[i] = child;
                    totals[child as usize].0 += grad[i];
                    totals[child as usize].1 += 1.0;
                }
                None => node_of[i] = NONE,
            }
        }
        open = next
            .into_iter()
            .map(|(id, _, depth)| {
                (
                    id,
                    Open {
                        g: totals[id].0,
                        h: totals[id].1,
                        depth,
                        best: None,
                    },
                )
            })
            .collect();
    }
    assemble(&built, 0)
}

/// Scans every feature once for all open nodes of the current level.
fn find_splits(
    x: &Matrix,
    grad: &[f64],
    sorted: &[Vec<u32>],
    node_of: &[u32],
    open: &mut [(usize, Open)],
    params: &GbtParams,
    nf: usize,
) {
    let max_id = open.iter().map(|(id, _)| *id).max().unwrap_or(0);
    let mut slot = vec![usize::MAX; max_id + 1];
    for (k, (id, _)) in open.iter().enumerate() {
        slot[*id] = k;
    }
    let m = open.len();
    let mut gl = vec![0.0; m];
    let mut hl = vec![0.0; m];
    let mut last = vec![f64::NAN; m];
    for f in 0..nf {
        gl.iter_mut().for_each(|v| *v = 0.0);
        hl.iter_mut().for_each(|v| *v = 0.0);
        last.iter_mut().for_each(|v| *v = f64::NAN);
        for &i in &sorted[f] {
            let i = i as usize;
            let id = node_of[i];
            if id == NONE {
                continue;
            }
            let k = slot.get(id as usize).copied().unwrap_or(usize::MAX);
            if k == usize::MAX {
                continue;
            }
            let v = x.get(i, f);
            let o = &mut open[k].1;
            if hl[k] > 0.0 && v > last[k] {
                let (hr, gr) = (o.h - hl[k], o.g - gl[k]);
                if hl[k] >= params.min_child_weight && hr >= params.min_child_weight {
                    let gain = split_gain(gl[k], hl[k], gr, hr, params);
                    if o.best.is_none_or(|b| beats(gain, b.gain)) {
                        o.best = Some(Candidate {
                            gain,
                            feature: f,
                            threshold: 0.5 * (last[k] + v),
                        });
                    }
                }
            }
            gl[k] += grad[i];
            hl[k] += 1.0;
            last[k] = v;
        }
    }
}

fn assemble(built: &[Built], id: usize) -> TreeNode {
    match &built[id] {
        Built::Leaf(w) => TreeNode::Leaf { weight: *w },
        Built::Split { cand, left, right } => TreeNode::Split {
            feature: cand.feature,
            threshold: cand.threshold,
            gain: cand.gain,
            left: Box::new(assemble(built, *left)),
            right: Box::new(assemble(built, *right)),
        },
        Built::Pending => TreeNode::Leaf { weight: 0.0 },
    }
}

pub fn predict_gbt(model: &GbtModel, x: &Matrix) -> Result<Vec<f64>> {
    if x.cols() != model.n_features {
        return Err(Error::arg(format!(
            "model expects {} features, got {}",
            model.n_features,
            x.cols()
        )));
    }
    Ok((0..x.rows()).map(|r| model.predict_row(x.row(r))).collect())
}

/// Total split gain per feature; unused features score 0.
pub fn gbt_importance(model: &GbtModel) -> Vec<f64> {
    model.gain.clone()
}
