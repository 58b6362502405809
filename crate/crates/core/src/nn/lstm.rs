//! LSTM recurrence and its reverse pass. Gate blocks are ordered
//! input, forget, candidate, output.

use super::{sigmoid, Tensor};

/// One direction's parameters: `wx` is `[4H, C]`, `wh` is `[4H, H]`,
/// `b` is `[4H]`, all row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    pub input: usize,
    pub hidden: usize,
    pub wx: Vec<f64>,
    pub wh: Vec<f64>,
    pub b: Vec<f64>,
}

impl LstmCell {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            input,
            hidden,
            wx: vec![0.0; 4 * hidden * input],
            wh: vec![0.0; 4 * hidden * hidden],
            b: vec![0.0; 4 * hidden],
        }
    }
}

/// Per-step state in processing order.
pub(super) struct LstmTrace {
    reverse: bool,
    gates: Vec<f64>,
    cell: Vec<f64>,
    hidden: Vec<f64>,
    h: usize,
}

impl LstmTrace {
    fn step_of(&self, t: usize, steps: usize) -> usize {
        if self.reverse {
            steps - 1 - t
        } else {
            t
        }
    }

    pub(super) fn hidden_at(&self, t: usize, steps: usize) -> &[f64] {
        let s = self.step_of(t, steps);
        &self.hidden[s * self.h..(s + 1) * self.h]
    }
}

pub(super) fn run(cell: &LstmCell, seq: &[f64], steps: usize, reverse: bool) -> LstmTrace {
    let (c_in, h) = (cell.input, cell.hidden);
    let mut gates = vec![0.0; steps * 4 * h];
    let mut cs = vec![0.0; steps * h];
    let mut hs = vec![0.0; steps * h];
    let mut z = vec![0.0; 4 * h];
    for s in 0..steps {
        let t = if reverse { steps - 1 - s } else { s };
        let x = &seq[t * c_in..(t + 1) * c_in];
        for (r, zr) in z.iter_mut().enumerate() {
            let mut acc = cell.b[r];
            acc += cell.wx[r * c_in..(r + 1) * c_in]
                .iter()
                .zip(x)
                .map(|(w, v)| w * v)
                .sum::<f64>();
            if s > 0 {
                let hp = &hs[(s - 1) * h..s * h];
                acc += cell.wh[r * h..(r + 1) * h]
                    .iter()
                    .zip(hp)
                    .map(|(w, v)| w * v)
                    .sum::<f64>();
            }
            *zr = acc;
        }
        let g = &mut gates[s * 4 * h..(s + 1) * 4 * h];
        for k in 0..h {
            g[k] = sigmoid(z[k]);
            g[h + k] = sigmoid(z[h + k]);
            g[2 * h + k] = z[2 * h + k].tanh();
            g[3 * h + k] = sigmoid(z[3 * h + k]);
            let c_prev = if s > 0 { cs[(s - 1) * h + k] } else { 0.0 };
            let c = g[h + k] * c_prev + g[k] * g[2 * h + k];
            cs[s * h + k] = c;
            hs[s * h + k] = g[3 * h + k] * c.tanh();
        }
    }
    LstmTrace {
        reverse,
        gates,
        cell: cs,
        hidden: hs,
        h,
    }
}

/// Accumulates parameter gradients into `grads` (`[wx, wh, b]`) and input
/// gradients into `dx`, given `dh` indexed by time.
pub(super) fn backprop(
    cell: &LstmCell,
    seq: &[f64],
    steps: usize,
    trace: &LstmTrace,
    dh: &[f64],
    grads: &mut [Tensor],
    dx: &mut [f64],
) {
    let (c_in, h) = (cell.input, cell.hidden);
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let mut dz = vec![0.0; 4 * h];
    for s in (0..steps).rev() {
        let t = trace.step_of(s, steps);
        let g = &trace.gates[s * 4 * h..(s + 1) * 4 * h];
        for k in 0..h {
            let (i, f, cand, o) = (g[k], g[h + k], g[2 * h + k], g[3 * h + k]);
            let c = trace.cell[s * h + k];
            let c_prev = if s > 0 { trace.cell[(s - 1) * h + k] } else { 0.0 };
            let tc = c.tanh();
            let dhk = dh[t * h + k] + dh_next[k];
            let dc = dc_next[k] + dhk * o * (1.0 - tc * tc);
            dz[k] = dc * cand * i * (1.0 - i);
            dz[h + k] = dc * c_prev * f * (1.0 - f);
            dz[2 * h + k] = dc * i * (1.0 - cand * cand);
            dz[3 * h + k] = dhk * tc * o * (1.0 - o);
            dc_next[k] = dc * f;
        }
        let x = &seq[t * c_in..(t + 1) * c_in];
        let dxt = &mut dx[t * c_in..(t + 1) * c_in];
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        let (gwx, rest) = grads.split_at_mut(1);
        let (gwh, gb) = rest.split_at_mut(1);
        for (r, &d) in dz.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            gb[0].data[r] += d;
            let wx = &cell.wx[r * c_in..(r + 1) * c_in];
            let gx = &mut gwx[0].data[r * c_in..(r + 1) * c_in];
            for j in 0..c_in {
                gx[j] += d * x[j];
                dxt[j] += d * wx[j];
            }
            if s > 0 {
                let hp = &trace.hidden[(s - 1) * h..s * h];
                let wh = &cell.wh[r * h..(r + 1) * h];
                let gh = &mut gwh[0].data[r * h..(r + 1) * h];
                for j in 0..h {
                    gh[j] += d * hp[j];
                    dh_next[j] += d * wh[j];
                }
            }
        }
    }
}

/// Runs `forward` over the sequence and `backward` over its reversal and
/// averages the two hidden states at each time step. `seq` is
/// `[steps, input]` row-major; the result is `[steps, hidden]`.
pub fn bilstm_forward(forward: &LstmCell, backward: &LstmCell, seq: &[f64]) -> Vec<f64> {
    let c = forward.input.max(1);
    let steps = seq.len() / c;
    let h = forward.hidden;
    let tf = run(forward, seq, steps, false);
    let tb = run(backward, seq, steps, true);
    let mut out = vec![0.0; steps * h];
    for t in 0..steps {
        for k in 0..h {
            out[t * h + k] = 0.5 * (tf.hidden_at(t, steps)[k] + tb.hidden_at(t, steps)[k]);
        }
    }
    out
}
