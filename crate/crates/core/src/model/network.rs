//! Forward pass of the subband networks on a [`Graph`].
//!
//! Activations are kept as `[batch, F, T, D]` so every affine map, the LSTM
//! and the G-norm act on the trailing axis. Subband units arrive as
//! `[batch, F, F_s, T]` and are transposed once on entry.

use crate::error::{Error, Result};
use crate::mask::{CirmMask, MaskDomain};
use crate::subband::{normalize_input, unfold};
use crate::tensor::{Graph, ParamStore, Real, Tensor, Var};

use super::config::{BlockConfig, ModelConfig};

/// SubInter on `x: [..., F, T, D]`, returning the same shape.
///
/// Each unit goes through the first map, the hidden states are averaged over
/// the F units and passed through the second map, and the concatenation
/// `[h_i, global]` is fused back to width D and added to the input.
pub fn subinter<R: Real>(g: &mut Graph<R>, params: &ParamStore<R>, prefix: &str, x: Var) -> Result<Var> {
    let rank = g.shape(x).len();
    if rank < 3 {
        return Err(Error::Invalid { op: "subinter", msg: format!("expected [..., F, T, D], got {:?}", g.shape(x)) });
    }
    let axis = rank - 3;
    let units = g.shape(x)[axis];
    let p = |g: &mut Graph<R>, name: &str| g.param(params, &format!("{prefix}.{name}"));
    let (fw, fb) = (p(g, "f.weight")?, p(g, "f.bias")?);
    let (rw, rb) = (p(g, "r.weight")?, p(g, "r.bias")?);
    let (pw, pb) = (p(g, "p.weight")?, p(g, "p.bias")?);

    let hidden = g.affine(x, fw, Some(fb))?;
    let mean = g.mean_axis(hidden, axis)?;
    let global = g.affine(mean, rw, Some(rb))?;
    g.release(mean);
    let spread = g.repeat_axis(global, axis, units)?;
    g.release(global);
    let joined = g.concat_last(hidden, spread)?;
    g.release(hidden);
    g.release(spread);
    let fused = g.affine(joined, pw, Some(pb))?;
    g.release(joined);
    let out = g.add(x, fused)?;
    g.release(fused);
    Ok(out)
}

/// SIL block on `x: [B, F, T, D]` → `[B, F, T, H]`.
pub fn sil_block<R: Real>(
    g: &mut Graph<R>,
    params: &ParamStore<R>,
    cfg: &ModelConfig,
    block: &BlockConfig,
    prefix: &str,
    x: Var,
) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let &[b, f, t, d] = shape.as_slice() else {
        return Err(Error::Invalid { op: "sil_block", msg: format!("expected [B, F, T, D], got {shape:?}") });
    };
    if d != block.input {
        return Err(Error::Shape { op: "sil_block", left: shape, right: vec![block.input] });
    }
    let x = match block.subinter_hidden {
        Some(_) => subinter(g, params, &format!("{prefix}.subinter"), x)?,
        None => x,
    };
    let seqs = g.reshape(x, &[b * f, t, d])?;
    g.release(x);
    let w_ih = g.param(params, &format!("{prefix}.lstm.w_ih"))?;
    let w_hh = g.param(params, &format!("{prefix}.lstm.w_hh"))?;
    let bias = g.param(params, &format!("{prefix}.lstm.bias"))?;
    let h = g.lstm(seqs, w_ih, w_hh, bias, None)?;
    g.release(seqs);
    let gamma = g.param(params, &format!("{prefix}.gnorm.gamma"))?;
    let beta = g.param(params, &format!("{prefix}.gnorm.beta"))?;
    let normed = g.group_norm(h, gamma, beta, cfg.gn_groups, R::from_f64(cfg.gn_eps))?;
    g.release(h);
    let out = g.reshape(normed, &[b, f, t, block.lstm_hidden])?;
    g.release(normed);
    Ok(out)
}

/// Full network on subband units `[B, F, F_s, T]` → compressed mask planes `[B, 2, F, T]`.
pub fn forward_units<R: Real>(g: &mut Graph<R>, params: &ParamStore<R>, cfg: &ModelConfig, units: Var) -> Result<Var> {
    let shape = g.shape(units).to_vec();
    if shape.len() != 4 || shape[2] != cfg.unit_size() {
        return Err(Error::Shape { op: "forward_units", left: shape, right: vec![cfg.unit_size()] });
    }
    let mut x = g.permute(units, &[0, 1, 3, 2])?;
    for (k, block) in cfg.blocks().iter().enumerate() {
        let next = sil_block(g, params, cfg, block, &format!("block{}", k + 1), x)?;
        g.release(x);
        x = next;
    }
    let hw = g.param(params, "head.weight")?;
    let hb = g.param(params, "head.bias")?;
    let y = g.affine(x, hw, Some(hb))?;
    g.release(x);
    let out = g.permute(y, &[0, 3, 1, 2])?;
    g.release(y);
    Ok(out)
}

/// Normalizes and unfolds a batch of magnitudes `[B, F, T]` into `[B, F, F_s, T]`.
pub fn prepare_units<R: Real>(mags: &Tensor<R>, cfg: &ModelConfig) -> Result<Tensor<R>> {
    let &[b, f, t] = mags.shape() else {
        return Err(Error::Invalid { op: "prepare_units", msg: format!("expected [B, F, T], got {:?}", mags.shape()) });
    };
    let fs = cfg.unit_size();
    let mut data = Vec::with_capacity(b * f * fs * t);
    for item in mags.data().chunks_exact(f * t) {
        let mag = Tensor::new(vec![f, t], item.to_vec())?;
        let (normed, _) = normalize_input(&mag);
        data.extend_from_slice(unfold(&normed, cfg.n, cfg.boundary)?.tensor().data());
    }
    Tensor::new(vec![b, f, fs, t], data)
}

/// Magnitudes `[B, F, T]` → compressed mask planes `[B, 2, F, T]` on `g`.
pub fn forward_batch<R: Real>(g: &mut Graph<R>, params: &ParamStore<R>, cfg: &ModelConfig, mags: &Tensor<R>) -> Result<Var> {
    let units = g.input(prepare_units(mags, cfg)?);
    let out = forward_units(g, params, cfg, units)?;
    g.release(units);
    Ok(out)
}

/// Magnitude spectrogram `[F, T]` → compressed cIRM.
pub fn model_forward<R: Real>(mag: &Tensor<R>, cfg: &ModelConfig, params: &ParamStore<R>) -> Result<CirmMask> {
    let &[f, t] = mag.shape() else {
        return Err(Error::Invalid { op: "model_forward", msg: format!("expected [F, T], got {:?}", mag.shape()) });
    };
    if f <= 2 * cfg.n {
        return Err(Error::Invalid { op: "model_forward", msg: format!("F = {f} must exceed 2n = {}", 2 * cfg.n) });
    }
    let batch = mag.clone().reshaped(vec![1, f, t])?;
    let mut g = Graph::inference();
    let out = forward_batch(&mut g, params, cfg, &batch)?;
    let planes = g.value(out).data();
    let real = planes[..f * t].iter().map(|&v| Real::to_f64(v)).collect();
    let imag = planes[f * t..].iter().map(|&v| Real::to_f64(v)).collect();
    CirmMask::new(real, imag, f, t, MaskDomain::Compressed)
}

/// SubInter on stand-alone units `[F, D, T]` → `[F, D, T]`.
pub fn subinter_forward<R: Real>(units: &Tensor<R>, params: &ParamStore<R>, prefix: &str) -> Result<Tensor<R>> {
    if units.shape().len() != 3 {
        return Err(Error::Invalid { op: "subinter_forward", msg: format!("expected [F, D, T], got {:?}", units.shape()) });
    }
    let mut g = Graph::inference();
    let x = g.input(units.clone());
    let xt = g.permute(x, &[0, 2, 1])?;
    let y = subinter(&mut g, params, prefix, xt)?;
    let yt = g.permute(y, &[0, 2, 1])?;
    Ok(g.value(yt).clone())
}

/// SIL block on stand-alone units `[F, D, T]` → `[F, H, T]`.
pub fn sil_block_forward<R: Real>(
    units: &Tensor<R>,
    params: &ParamStore<R>,
    cfg: &ModelConfig,
    block_index: usize,
) -> Result<Tensor<R>> {
    let blocks = cfg.blocks();
    let block = blocks
        .get(block_index)
        .ok_or_else(|| Error::Invalid { op: "sil_block_forward", msg: format!("no block {block_index}") })?;
    let &[f, d, t] = units.shape() else {
        return Err(Error::Invalid { op: "sil_block_forward", msg: format!("expected [F, D, T], got {:?}", units.shape()) });
    };
    let mut g = Graph::inference();
    let x = g.input(units.clone().reshaped(vec![1, f, d, t])?);
    let xt = g.permute(x, &[0, 1, 3, 2])?;
    let y = sil_block(&mut g, params, cfg, block, &format!("block{}", block_index + 1), xt)?;
    let yt = g.permute(y, &[0, 1, 3, 2])?;
    g.value(yt).clone().reshaped(vec![f, block.lstm_hidden, t])
}
