//! Complex ideal ratio mask and its bounded compressed form.
//!
//! Compression is `c(x) = K (1 - e^{-Cx}) / (1 + e^{-Cx}) = K tanh(Cx / 2)`.

use num_complex::Complex64;

use crate::dsp::Spectrogram;
use crate::error::{Error, Result};

/// Compression bound.
pub const K: f64 = 10.0;
/// Compression steepness.
pub const C: f64 = 0.1;
/// Decompression clamps inputs to `K - CLAMP_MARGIN` in magnitude.
pub const CLAMP_MARGIN: f64 = 0.01;
/// Floor for the `|Y|^2` denominator; bins with `|Y| > sqrt(EPS)` are exact.
pub const EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskDomain {
    Uncompressed,
    Compressed,
}

impl MaskDomain {
    fn name(self) -> &'static str {
        match self {
            MaskDomain::Uncompressed => "uncompressed",
            MaskDomain::Compressed => "compressed",
        }
    }
}

/// Real and imaginary mask planes, each `F x T` frequency-major.
#[derive(Clone, Debug, PartialEq)]
pub struct CirmMask {
    pub real: Vec<f64>,
    pub imag: Vec<f64>,
    bins: usize,
    frames: usize,
    domain: MaskDomain,
}

pub fn compress_value(x: f64) -> f64 {
    let e = (-C * x).exp();
    if e.is_infinite() {
        return -K;
    }
    K * (1.0 - e) / (1.0 + e)
}

pub fn decompress_value(y: f64) -> f64 {
    let lim = K - CLAMP_MARGIN;
    let y = y.clamp(-lim, lim);
    -((K - y) / (K + y)).ln() / C
}

impl CirmMask {
    pub fn new(real: Vec<f64>, imag: Vec<f64>, bins: usize, frames: usize, domain: MaskDomain) -> Result<Self> {
        if real.len() != bins * frames || imag.len() != bins * frames {
            return Err(Error::Shape { op: "CirmMask::new", left: vec![real.len(), imag.len()], right: vec![bins, frames] });
        }
        if !real.iter().chain(&imag).all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: "CirmMask::new", step: None });
        }
        Ok(Self { real, imag, bins, frames, domain })
    }

    /// Mask `(1, 0)` everywhere.
    pub fn identity(bins: usize, frames: usize) -> Self {
        Self {
            real: vec![1.0; bins * frames],
            imag: vec![0.0; bins * frames],
            bins,
            frames,
            domain: MaskDomain::Uncompressed,
        }
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn domain(&self) -> MaskDomain {
        self.domain
    }

    fn expect(&self, domain: MaskDomain) -> Result<()> {
        if self.domain != domain {
            return Err(Error::MaskDomain { expected: domain.name(), got: self.domain.name() });
        }
        Ok(())
    }

    pub fn compress(&self) -> Result<Self> {
        self.expect(MaskDomain::Uncompressed)?;
        Ok(Self {
            real: self.real.iter().map(|&x| compress_value(x)).collect(),
            imag: self.imag.iter().map(|&x| compress_value(x)).collect(),
            domain: MaskDomain::Compressed,
            ..*self
        })
    }

    pub fn decompress(&self) -> Result<Self> {
        self.expect(MaskDomain::Compressed)?;
        Ok(Self {
            real: self.real.iter().map(|&y| decompress_value(y)).collect(),
            imag: self.imag.iter().map(|&y| decompress_value(y)).collect(),
            domain: MaskDomain::Uncompressed,
            ..*self
        })
    }
}

/// `M = S conj(Y) / max(|Y|^2, eps)`, uncompressed.
pub fn ideal_cirm(noisy: &Spectrogram, clean: &Spectrogram) -> Result<CirmMask> {
    if !noisy.same_layout(clean) {
        return Err(Error::Shape {
            op: "ideal_cirm",
            left: vec![noisy.bins(), noisy.frames()],
            right: vec![clean.bins(), clean.frames()],
        });
    }
    let (real, imag) = noisy
        .data()
        .iter()
        .zip(clean.data())
        .map(|(y, s)| {
            let den = y.norm_sqr().max(EPS);
            ((y.re * s.re + y.im * s.im) / den, (y.re * s.im - y.im * s.re) / den)
        })
        .unzip();
    CirmMask::new(real, imag, noisy.bins(), noisy.frames(), MaskDomain::Uncompressed)
}

/// Complex multiplication of every bin by the (uncompressed) mask.
pub fn apply_mask(noisy: &Spectrogram, mask: &CirmMask) -> Result<Spectrogram> {
    mask.expect(MaskDomain::Uncompressed)?;
    if mask.bins != noisy.bins() || mask.frames != noisy.frames() {
        return Err(Error::Shape {
            op: "apply_mask",
            left: vec![noisy.bins(), noisy.frames()],
            right: vec![mask.bins, mask.frames],
        });
    }
    let data = noisy
        .data()
        .iter()
        .zip(mask.real.iter().zip(&mask.imag))
        .map(|(y, (&mr, &mi))| Complex64::new(mr * y.re - mi * y.im, mr * y.im + mi * y.re))
        .collect();
    Spectrogram::new(data, noisy.bins(), noisy.frames(), noisy.hop(), noisy.win_len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spec(seed: u64) -> Spectrogram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..33 * 6).map(|_| Complex64::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0))).collect();
        Spectrogram::new(data, 33, 6, 32, 64).unwrap()
    }

    #[test]
    fn identical_and_scaled_inputs() {
        let s = random_spec(1);
        let m = ideal_cirm(&s, &s).unwrap();
        assert!(m.real.iter().all(|&v| (v - 1.0).abs() < 1e-6));
        assert!(m.imag.iter().all(|&v| v.abs() < 1e-6));
        let mut y = s.clone();
        for z in y.data_mut() {
            *z *= 2.0;
        }
        let m = ideal_cirm(&y, &s).unwrap();
        assert!(m.real.iter().all(|&v| (v - 0.5).abs() < 1e-6));
        assert!(m.imag.iter().all(|&v| v.abs() < 1e-6));
    }

    #[test]
    fn ideal_mask_recovers_clean() {
        for seed in 0..10 {
            let (y, s) = (random_spec(seed), random_spec(seed + 100));
            let est = apply_mask(&y, &ideal_cirm(&y, &s).unwrap()).unwrap();
            for i in 0..y.data().len() {
                if y.data()[i].norm() > 1e-4 {
                    let err = (est.data()[i] - s.data()[i]).norm() / s.data()[i].norm().max(1e-12);
                    assert!(err < 1e-6);
                }
            }
        }
    }

    #[test]
    fn rotation_and_identity_masks() {
        let mut y = Spectrogram::zeros(3, 1, 2, 4).unwrap();
        y.set(0, 0, Complex64::new(1.0, 0.0));
        let m = CirmMask::new(vec![0.0; 3], vec![1.0; 3], 3, 1, MaskDomain::Uncompressed).unwrap();
        assert_eq!(apply_mask(&y, &m).unwrap().get(0, 0), Complex64::new(0.0, 1.0));
        let s = random_spec(3);
        assert_eq!(apply_mask(&s, &CirmMask::identity(33, 6)).unwrap(), s);
    }

    #[test]
    fn compressed_mask_cannot_be_applied() {
        let s = random_spec(3);
        let m = CirmMask::identity(33, 6).compress().unwrap();
        assert!(matches!(apply_mask(&s, &m), Err(Error::MaskDomain { .. })));
        assert!(m.compress().is_err());
        assert!(CirmMask::identity(33, 6).decompress().is_err());
    }

    #[test]
    fn compression_limits_and_round_trip() {
        assert_eq!(compress_value(0.0), 0.0);
        assert!((compress_value(1e6) - K).abs() < 1e-9);
        assert!((compress_value(-1e6) + K).abs() < 1e-9);
        let mut x = -50.0;
        while x <= 50.0 {
            assert!((decompress_value(compress_value(x)) - x).abs() < 1e-6, "x = {x}");
            x += 0.01;
        }
    }

    #[test]
    fn compression_is_odd_monotone_bounded() {
        let mut prev = f64::NEG_INFINITY;
        for i in -20000..=20000 {
            let x = i as f64 * 0.01;
            let y = compress_value(x);
            assert!(y > prev && y.abs() < K);
            assert!((y + compress_value(-x)).abs() < 1e-12);
            prev = y;
        }
    }
}
