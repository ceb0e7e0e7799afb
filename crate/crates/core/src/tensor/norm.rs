//! Group normalization over the trailing (channel) axis of each row.

use super::Real;

#[derive(Clone, Debug, Default)]
pub(crate) struct Cache<R> {
    normalized: Vec<R>,
    inv_std: Vec<R>,
}

pub(crate) fn forward<R: Real>(
    x: &[R],
    channels: usize,
    groups: usize,
    gamma: &[R],
    beta: &[R],
    eps: R,
    keep_cache: bool,
) -> (Vec<R>, Option<Cache<R>>) {
    let size = channels / groups;
    let n = R::from_f64(size as f64);
    let mut out = vec![R::zero(); x.len()];
    let mut normalized = if keep_cache { vec![R::zero(); x.len()] } else { Vec::new() };
    let mut inv_std = if keep_cache { Vec::with_capacity(x.len() / size) } else { Vec::new() };
    for (gi, (xs, ys)) in x.chunks_exact(size).zip(out.chunks_exact_mut(size)).enumerate() {
        let mean = xs.iter().fold(R::zero(), |a, &v| a + v) / n;
        let var = xs.iter().fold(R::zero(), |a, &v| a + (v - mean) * (v - mean)) / n;
        let inv = R::one() / (var + eps).sqrt();
        let c0 = (gi % groups) * size;
        for (j, (&v, y)) in xs.iter().zip(ys.iter_mut()).enumerate() {
            let xhat = (v - mean) * inv;
            *y = gamma[c0 + j] * xhat + beta[c0 + j];
            if keep_cache {
                normalized[gi * size + j] = xhat;
            }
        }
        if keep_cache {
            inv_std.push(inv);
        }
    }
    (out, keep_cache.then_some(Cache { normalized, inv_std }))
}

/// Returns `(dx, dgamma, dbeta)`.
pub(crate) fn backward<R: Real>(
    channels: usize,
    groups: usize,
    gamma: &[R],
    cache: &Cache<R>,
    d_out: &[R],
) -> (Vec<R>, Vec<R>, Vec<R>) {
    let size = channels / groups;
    let n = R::from_f64(size as f64);
    let mut dx = vec![R::zero(); d_out.len()];
    let mut dgamma = vec![R::zero(); channels];
    let mut dbeta = vec![R::zero(); channels];
    let mut dxhat = vec![R::zero(); size];
    for (gi, (dys, dxs)) in d_out.chunks_exact(size).zip(dx.chunks_exact_mut(size)).enumerate() {
        let c0 = (gi % groups) * size;
        let xhat = &cache.normalized[gi * size..(gi + 1) * size];
        let mut sum = R::zero();
        let mut dot = R::zero();
        for j in 0..size {
            let dy = dys[j];
            dgamma[c0 + j] = dgamma[c0 + j] + dy * xhat[j];
            dbeta[c0 + j] = dbeta[c0 + j] + dy;
            dxhat[j] = dy * gamma[c0 + j];
            sum = sum + dxhat[j];
            dot = dot + dxhat[j] * xhat[j];
        }
        let scale = cache.inv_std[gi] / n;
        for j in 0..size {
            dxs[j] = scale * (n * dxhat[j] - sum - xhat[j] * dot);
        }
    }
    (dx, dgamma, dbeta)
}
