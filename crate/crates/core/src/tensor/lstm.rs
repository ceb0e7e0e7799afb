//! Fused LSTM recurrence with backpropagation through time.
//!
//! Gate order inside the `4H` axis is input, forget, cell, output. One bias
//! vector per gate row: parameter count is `4 * (D*H + H*H + H)`.

use super::real::{matmul_into, matmul_nt_into, matmul_tn_acc, small_matmul_acc, transpose};
use super::Real;
use crate::error::{Error, Result};

/// Optional initial hidden and cell state, each `batch x hidden`.
#[derive(Clone, Debug)]
pub struct LstmState<R> {
    pub h0: Vec<R>,
    pub c0: Vec<R>,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Dims {
    pub batch: usize,
    pub steps: usize,
    pub input: usize,
    pub hidden: usize,
}

/// Everything backward needs besides the inputs and the output sequence.
#[derive(Clone, Debug, Default)]
pub(crate) struct Cache<R> {
    /// Post-activation gates, `batch x steps x 4H`.
    gates: Vec<R>,
    /// Cell states, `batch x steps x H`.
    cells: Vec<R>,
    h0: Vec<R>,
    c0: Vec<R>,
}

#[inline(always)]
fn sigmoid<R: Real>(x: R) -> R {
    R::one() / (R::one() + (-x).exp())
}

/// `tanh` through a single `exp`; saturates to exactly `±1`.
#[inline(always)]
fn tanh<R: Real>(x: R) -> R {
    let two = R::one() + R::one();
    R::one() - two / (R::one() + (x + x).exp())
}

fn all_finite<R: Real>(xs: &[R]) -> bool {
    xs.iter().all(|v| v.is_finite())
}

/// [`cell_step`] over every batch row of one timestep.
fn cell_rows<R: Real>(hidden: usize, z: &mut [R], c: &mut [R], h: &mut [R]) {
    let rows = z.chunks_exact_mut(4 * hidden).zip(c.chunks_exact_mut(hidden).zip(h.chunks_exact_mut(hidden)));
    for (zb, (cb, hb)) in rows {
        cell_step(zb, cb, hb);
    }
}

/// Gate nonlinearities and the cell update for one row of one timestep.
/// `z` holds the pre-activations on entry and the gates on exit.
#[inline(always)]
fn cell_step<R: Real>(z: &mut [R], c: &mut [R], h: &mut [R]) {
    let hidden = c.len();
    let (sig_if, rest) = z.split_at_mut(2 * hidden);
    let (cand, out_gate) = rest.split_at_mut(hidden);
    for v in sig_if.iter_mut() {
        *v = sigmoid(*v);
    }
    for v in out_gate.iter_mut() {
        *v = sigmoid(*v);
    }
    for v in cand.iter_mut() {
        *v = tanh(*v);
    }
    let (i_g, f_g) = sig_if.split_at(hidden);
    for j in 0..hidden {
        let cj = f_g[j] * c[j] + i_g[j] * cand[j];
        c[j] = cj;
        h[j] = out_gate[j] * tanh(cj);
    }
}

pub(crate) fn forward<R: Real>(
    dims: Dims,
    x: &[R],
    w_ih: &[R],
    w_hh: &[R],
    bias: &[R],
    state: Option<&LstmState<R>>,
    keep_cache: bool,
) -> Result<(Vec<R>, Option<Cache<R>>)> {
    let Dims { batch, steps, input, hidden } = dims;
    let g4 = 4 * hidden;
    let rows = batch * steps;

    let mut pre = vec![R::zero(); rows * g4];
    matmul_nt_into(rows, input, g4, x, w_ih, R::zero(), &mut pre);
    for row in pre.chunks_exact_mut(g4) {
        for (v, &b) in row.iter_mut().zip(bias) {
            *v = *v + b;
        }
    }
    if !all_finite(&pre) || !all_finite(w_hh) {
        return Err(Error::NonFinite { op: "lstm", step: None });
    }

    let (h0, c0) = match state {
        Some(s) => {
            if s.h0.len() != batch * hidden || s.c0.len() != batch * hidden {
                return Err(Error::Shape {
                    op: "lstm initial state",
                    left: vec![s.h0.len(), s.c0.len()],
                    right: vec![batch * hidden],
                });
            }
            (s.h0.clone(), s.c0.clone())
        }
        None => (vec![R::zero(); batch * hidden], vec![R::zero(); batch * hidden]),
    };

    let mut out = vec![R::zero(); rows * hidden];
    let mut gates = if keep_cache { vec![R::zero(); rows * g4] } else { Vec::new() };
    let mut cells = if keep_cache { vec![R::zero(); rows * hidden] } else { Vec::new() };
    let mut h_prev = h0.clone();
    let mut c_prev = c0.clone();
    let mut z = vec![R::zero(); batch * g4];
    let w_hh_t = transpose(g4, hidden, w_hh);

    for t in 0..steps {
        for b in 0..batch {
            let src = (b * steps + t) * g4;
            z[b * g4..(b + 1) * g4].copy_from_slice(&pre[src..src + g4]);
        }
        small_matmul_acc(batch, hidden, g4, &h_prev, &w_hh_t, &mut z);
        cell_rows(hidden, &mut z, &mut c_prev, &mut h_prev);
        for b in 0..batch {
            let row = b * steps + t;
            out[row * hidden..(row + 1) * hidden].copy_from_slice(&h_prev[b * hidden..(b + 1) * hidden]);
            if keep_cache {
                gates[row * g4..(row + 1) * g4].copy_from_slice(&z[b * g4..(b + 1) * g4]);
                cells[row * hidden..(row + 1) * hidden].copy_from_slice(&c_prev[b * hidden..(b + 1) * hidden]);
            }
        }
        if !h_prev.iter().chain(&c_prev).all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: "lstm", step: Some(t) });
        }
    }
    let cache = keep_cache.then_some(Cache { gates, cells, h0, c0 });
    Ok((out, cache))
}

pub(crate) struct LstmGrads<R> {
    pub x: Vec<R>,
    pub w_ih: Vec<R>,
    pub w_hh: Vec<R>,
    pub bias: Vec<R>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn backward<R: Real>(
    dims: Dims,
    x: &[R],
    w_ih: &[R],
    w_hh: &[R],
    out: &[R],
    cache: &Cache<R>,
    d_out: &[R],
) -> LstmGrads<R> {
    let Dims { batch, steps, input, hidden } = dims;
    let g4 = 4 * hidden;
    let rows = batch * steps;
    let one = R::one();

    let mut dz = vec![R::zero(); rows * g4];
    let mut dz_t = vec![R::zero(); batch * g4];
    let mut dh_next = vec![R::zero(); batch * hidden];
    let mut dc_next = vec![R::zero(); batch * hidden];

    for t in (0..steps).rev() {
        for b in 0..batch {
            let row = b * steps + t;
            let gr = &cache.gates[row * g4..(row + 1) * g4];
            let (i_g, rest) = gr.split_at(hidden);
            let (f_g, rest) = rest.split_at(hidden);
            let (c_g, o_g) = rest.split_at(hidden);
            let c = &cache.cells[row * hidden..(row + 1) * hidden];
            let c_prev = if t > 0 { &cache.cells[(row - 1) * hidden..row * hidden] } else { &cache.c0[b * hidden..(b + 1) * hidden] };
            let d_h = &d_out[row * hidden..(row + 1) * hidden];
            let dhn = &dh_next[b * hidden..(b + 1) * hidden];
            let dcn = &mut dc_next[b * hidden..(b + 1) * hidden];
            let (dzi, rest) = dz_t[b * g4..(b + 1) * g4].split_at_mut(hidden);
            let (dzf, rest) = rest.split_at_mut(hidden);
            let (dzg, dzo) = rest.split_at_mut(hidden);
            for j in 0..hidden {
                let tc = tanh(c[j]);
                let dh = d_h[j] + dhn[j];
                let d_o = dh * tc;
                let dc = dh * o_g[j] * (one - tc * tc) + dcn[j];
                dcn[j] = dc * f_g[j];
                dzi[j] = dc * c_g[j] * i_g[j] * (one - i_g[j]);
                dzf[j] = dc * c_prev[j] * f_g[j] * (one - f_g[j]);
                dzg[j] = dc * i_g[j] * (one - c_g[j] * c_g[j]);
                dzo[j] = d_o * o_g[j] * (one - o_g[j]);
            }
            dz[row * g4..(row + 1) * g4].copy_from_slice(&dz_t[b * g4..(b + 1) * g4]);
        }
        dh_next.fill(R::zero());
        small_matmul_acc(batch, g4, hidden, &dz_t, w_hh, &mut dh_next);
    }

    // hidden state entering each step
    let mut h_prev = vec![R::zero(); rows * hidden];
    for b in 0..batch {
        for t in 0..steps {
            let dst = (b * steps + t) * hidden;
            let src: &[R] = if t == 0 {
                &cache.h0[b * hidden..(b + 1) * hidden]
            } else {
                &out[(b * steps + t - 1) * hidden..(b * steps + t) * hidden]
            };
            h_prev[dst..dst + hidden].copy_from_slice(src);
        }
    }

    let mut g_w_hh = vec![R::zero(); g4 * hidden];
    matmul_tn_acc(g4, rows, hidden, &dz, &h_prev, &mut g_w_hh);
    let mut g_w_ih = vec![R::zero(); g4 * input];
    matmul_tn_acc(g4, rows, input, &dz, x, &mut g_w_ih);
    let mut g_bias = vec![R::zero(); g4];
    for row in dz.chunks_exact(g4) {
        for (acc, &v) in g_bias.iter_mut().zip(row) {
            *acc = *acc + v;
        }
    }
    let mut g_x = vec![R::zero(); rows * input];
    matmul_into(rows, g4, input, &dz, w_ih, R::zero(), &mut g_x);

    LstmGrads { x: g_x, w_ih: g_w_ih, w_hh: g_w_hh, bias: g_bias }
}
