//! Batched forward and reverse passes. Activations are stored per layer as
//! `[batch, ...]` row-major buffers.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::lstm::{self, LstmCell, LstmTrace};
use super::{Activation, LayerSpec, Net, Tensor};
use crate::error::{Error, Result};

pub(super) enum Cache {
    None,
    Mask(Vec<f64>),
    Lstm(Vec<(LstmTrace, LstmTrace)>),
}

pub(super) struct Trace {
    shapes: Vec<Vec<usize>>,
    acts: Vec<Vec<f64>>,
    caches: Vec<Cache>,
}

fn n_params(layer: &LayerSpec) -> usize {
    match layer {
        LayerSpec::Dense { .. } | LayerSpec::Conv1d { .. } => 2,
        LayerSpec::Bilstm { .. } => 6,
        LayerSpec::Dropout { .. } | LayerSpec::Flatten => 0,
    }
}

/// Four independent partial sums so the loop vectorizes.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += alpha * x);
}

/// Affine map plus activation over `n_out` outputs of each `width`-long
/// window; dense layers have one window per sample, convolutions one per
/// output step (the window at step `t` starts at `t·stride`).
fn affine_forward(
    w: &[f64],
    bias: &[f64],
    x: &[f64],
    windows: usize,
    width: usize,
    stride: usize,
    in_len: usize,
    act: Activation,
    batch: usize,
) -> Vec<f64> {
    let n_out = bias.len();
    let mut out = vec![0.0; batch * windows * n_out];
    for b in 0..batch {
        let xb = &x[b * in_len..(b + 1) * in_len];
        for t in 0..windows {
            let xw = &xb[t * stride..t * stride + width];
            let o = &mut out[(b * windows + t) * n_out..(b * windows + t + 1) * n_out];
            for (u, ou) in o.iter_mut().enumerate() {
                *ou = act.apply(bias[u] + dot(&w[u * width..(u + 1) * width], xw));
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn affine_backward(
    w: &[f64],
    x: &[f64],
    out: &[f64],
    dout: &[f64],
    windows: usize,
    width: usize,
    stride: usize,
    in_len: usize,
    act: Activation,
    batch: usize,
    gw: &mut [f64],
    gb: &mut [f64],
) -> Vec<f64> {
    let n_out = gb.len();
    let mut dx = vec![0.0; batch * in_len];
    for b in 0..batch {
        let xb = &x[b * in_len..(b + 1) * in_len];
        let dxb = &mut dx[b * in_len..(b + 1) * in_len];
        for t in 0..windows {
            let base = (b * windows + t) * n_out;
            for u in 0..n_out {
                let dz = dout[base + u] * act.grad_from_output(out[base + u]);
                if dz == 0.0 {
                    continue;
                }
                gb[u] += dz;
                let wu = &w[u * width..(u + 1) * width];
                axpy(dz, &xb[t * stride..t * stride + width], &mut gw[u * width..(u + 1) * width]);
                axpy(dz, wu, &mut dxb[t * stride..t * stride + width]);
            }
        }
    }
    dx
}

fn cells(params: &[Tensor], input: usize, hidden: usize) -> (LstmCell, LstmCell) {
    let cell = |k: usize| LstmCell {
        input,
        hidden,
        wx: params[k].data.clone(),
        wh: params[k + 1].data.clone(),
        b: params[k + 2].data.clone(),
    };
    (cell(0), cell(3))
}

pub(super) fn forward(
    net: &Net,
    rows: &[f64],
    batch: usize,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<(Vec<f64>, Trace)> {
    let shapes = net.spec.shapes()?;
    let in_len = net.spec.input_len();
    if batch == 0 || rows.len() != batch * in_len {
        return Err(Error::arg(format!(
            "expected {batch} rows of {in_len} values, got {} values",
            rows.len()
        )));
    }
    let mut acts = vec![rows.to_vec()];
    let mut caches = Vec::with_capacity(net.spec.layers.len());
    let mut p = 0;
    for (i, layer) in net.spec.layers.iter().enumerate() {
        let x = &acts[i];
        let inp = &shapes[i];
        let len: usize = inp.iter().product();
        let params = &net.params[p..p + n_params(layer)];
        p += n_params(layer);
        let (out, cache) = match layer {
            LayerSpec::Dense { activation, .. } => (
                affine_forward(&params[0].data, &params[1].data, x, 1, len, 0, len, *activation, batch),
                Cache::None,
            ),
            LayerSpec::Conv1d {
                kernel_size,
                activation,
                ..
            } => {
                let c = inp[1];
                let windows = inp[0] - kernel_size + 1;
                (
                    affine_forward(
                        &params[0].data,
                        &params[1].data,
                        x,
                        windows,
                        kernel_size * c,
                        c,
                        len,
                        *activation,
                        batch,
                    ),
                    Cache::None,
                )
            }
            LayerSpec::Bilstm { hidden_units } => {
                let (steps, c, h) = (inp[0], inp[1], *hidden_units);
                let (fwd, bwd) = cells(params, c, h);
                let mut out = vec![0.0; batch * steps * h];
                let mut traces = Vec::with_capacity(batch);
                for b in 0..batch {
                    let seq = &x[b * len..(b + 1) * len];
                    let tf = lstm::run(&fwd, seq, steps, false);
                    let tb = lstm::run(&bwd, seq, steps, true);
                    let ob = &mut out[b * steps * h..(b + 1) * steps * h];
                    for t in 0..steps {
                        for k in 0..h {
                            ob[t * h + k] = 0.5 * (tf.hidden_at(t, steps)[k] + tb.hidden_at(t, steps)[k]);
                        }
                    }
                    traces.push((tf, tb));
                }
                (out, Cache::Lstm(traces))
            }
            LayerSpec::Dropout { rate } => match rng.as_deref_mut() {
                Some(r) if *rate > 0.0 => {
                    let keep = 1.0 / (1.0 - rate);
                    let mask: Vec<f64> = (0..x.len())
                        .map(|_| if r.random::<f64>() < *rate { 0.0 } else { keep })
                        .collect();
                    (x.iter().zip(&mask).map(|(a, m)| a * m).collect(), Cache::Mask(mask))
                }
                _ => (x.clone(), Cache::None),
            },
            LayerSpec::Flatten => (x.clone(), Cache::None),
        };
        acts.push(out);
        caches.push(cache);
    }
    let pred = acts.last().expect("non-empty").clone();
    if pred.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("non-finite network output"));
    }
    Ok((
        pred,
        Trace {
            shapes,
            acts,
            caches,
        },
    ))
}

pub(super) fn backward(net: &Net, trace: &Trace, dout: Vec<f64>, batch: usize) -> Result<Vec<Tensor>> {
    let mut grads = net.zero_grads();
    let mut offsets = Vec::with_capacity(net.spec.layers.len());
    let mut p = 0;
    for layer in &net.spec.layers {
        offsets.push(p);
        p += n_params(layer);
    }
    let mut d = dout;
    for (i, layer) in net.spec.layers.iter().enumerate().rev() {
        let x = &trace.acts[i];
        let out = &trace.acts[i + 1];
        let inp = &trace.shapes[i];
        let len: usize = inp.iter().product();
        let params = &net.params[offsets[i]..offsets[i] + n_params(layer)];
        let g = &mut grads[offsets[i]..offsets[i] + n_params(layer)];
        d = match layer {
            LayerSpec::Dense { activation, .. } => {
                let (gw, gb) = g.split_at_mut(1);
                affine_backward(
                    &params[0].data,
                    x,
                    out,
                    &d,
                    1,
                    len,
                    0,
                    len,
                    *activation,
                    batch,
                    &mut gw[0].data,
                    &mut gb[0].data,
                )
            }
            LayerSpec::Conv1d {
                kernel_size,
                activation,
                ..
            } => {
                let c = inp[1];
                let (gw, gb) = g.split_at_mut(1);
                affine_backward(
                    &params[0].data,
                    x,
                    out,
                    &d,
                    inp[0] - kernel_size + 1,
                    kernel_size * c,
                    c,
                    len,
                    *activation,
                    batch,
                    &mut gw[0].data,
                    &mut gb[0].data,
                )
            }
            LayerSpec::Bilstm { hidden_units } => {
                let Cache::Lstm(traces) = &trace.caches[i] else {
                    unreachable!("bilstm layer without trace")
                };
                let (steps, c, h) = (inp[0], inp[1], *hidden_units);
                let (fwd, bwd) = cells(params, c, h);
                let mut dx = vec![0.0; batch * len];
                let (gf, gbk) = g.split_at_mut(3);
                for (b, (tf, tb)) in traces.iter().enumerate() {
                    let seq = &x[b * len..(b + 1) * len];
                    let dh: Vec<f64> = d[b * steps * h..(b + 1) * steps * h]
                        .iter()
                        .map(|v| 0.5 * v)
                        .collect();
                    let dxb = &mut dx[b * len..(b + 1) * len];
                    lstm::backprop(&fwd, seq, steps, tf, &dh, gf, dxb);
                    lstm::backprop(&bwd, seq, steps, tb, &dh, gbk, dxb);
                }
                dx
            }
            LayerSpec::Dropout { .. } => match &trace.caches[i] {
                Cache::Mask(mask) => d.iter().zip(mask).map(|(a, m)| a * m).collect(),
                _ => d,
            },
            LayerSpec::Flatten => d,
        };
    }
    if grads.iter().any(|t| !t.is_finite()) {
        return Err(Error::numerical("non-finite gradient"));
    }
    Ok(grads)
}
