//! Subband units: each frequency bin together with its `n` neighbours on
//! either side, across all frames.

use std::fmt;
use std::str::FromStr;

use crate::dsp::Spectrogram;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Guard added to the utterance mean before dividing.
pub const NORM_EPS: f64 = 1e-8;

/// How neighbour indices outside `[0, F)` are mapped back into range.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Boundary {
    /// Modulo-`F` wraparound.
    #[default]
    Circular,
    /// Mirror about the edge bins without repeating them.
    Reflect,
}

impl Boundary {
    pub fn index(self, i: isize, bins: usize) -> usize {
        let f = bins as isize;
        match self {
            Boundary::Circular => i.rem_euclid(f) as usize,
            Boundary::Reflect => {
                if i < 0 {
                    (-i) as usize
                } else if i >= f {
                    (2 * (f - 1) - i) as usize
                } else {
                    i as usize
                }
            }
        }
    }
}

impl fmt::Display for Boundary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Boundary::Circular => "circular",
            Boundary::Reflect => "reflect",
        })
    }
}

impl FromStr for Boundary {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "circular" => Ok(Boundary::Circular),
            "reflect" => Ok(Boundary::Reflect),
            other => Err(Error::Config(format!("unknown boundary mode `{other}`"))),
        }
    }
}

/// `F` units of shape `(2n + 1) x T`, stored as one `[F, F_s, T]` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct SubbandUnits<R> {
    data: Tensor<R>,
    n: usize,
}

impl<R: Real> SubbandUnits<R> {
    pub fn tensor(&self) -> &Tensor<R> {
        &self.data
    }

    pub fn into_tensor(self) -> Tensor<R> {
        self.data
    }

    pub fn half_width(&self) -> usize {
        self.n
    }

    pub fn unit_size(&self) -> usize {
        2 * self.n + 1
    }

    pub fn bins(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn frames(&self) -> usize {
        self.data.shape()[2]
    }

    /// Row `row` (0..F_s) of unit `unit`.
    pub fn row(&self, unit: usize, row: usize) -> &[R] {
        let t = self.frames();
        let start = (unit * self.unit_size() + row) * t;
        &self.data.data()[start..start + t]
    }

    /// Center rows of every unit, which reproduce the magnitude spectrogram.
    pub fn centers(&self) -> Tensor<R> {
        let (f, t) = (self.bins(), self.frames());
        let mut out = Vec::with_capacity(f * t);
        for i in 0..f {
            out.extend_from_slice(self.row(i, self.n));
        }
        Tensor::new(vec![f, t], out).expect("center rows have F x T elements")
    }
}

/// Elementwise complex modulus, `[F, T]`.
pub fn magnitude(spec: &Spectrogram) -> Tensor<f64> {
    let data = spec.data().iter().map(|z| z.norm()).collect();
    Tensor::new(vec![spec.bins(), spec.frames()], data).expect("spectrogram layout is F x T")
}

/// Builds `F` subband units from an `[F, T]` magnitude.
pub fn unfold<R: Real>(mag: &Tensor<R>, n: usize, boundary: Boundary) -> Result<SubbandUnits<R>> {
    let &[bins, frames] = mag.shape() else {
        return Err(Error::Invalid { op: "unfold", msg: format!("expected [F, T], got {:?}", mag.shape()) });
    };
    if bins <= 2 * n {
        return Err(Error::Invalid { op: "unfold", msg: format!("F = {bins} must exceed 2n = {}", 2 * n) });
    }
    let fs = 2 * n + 1;
    let src = mag.data();
    let mut out = Vec::with_capacity(bins * fs * frames);
    for i in 0..bins {
        for k in 0..fs {
            let j = boundary.index(i as isize + k as isize - n as isize, bins);
            out.extend_from_slice(&src[j * frames..(j + 1) * frames]);
        }
    }
    Ok(SubbandUnits { data: Tensor::new(vec![bins, fs, frames], out)?, n })
}

/// Scale factor removed by [`normalize_input`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormState {
    pub mean: f64,
}

/// Divides by the utterance mean magnitude (plus [`NORM_EPS`]).
pub fn normalize_input<R: Real>(mag: &Tensor<R>) -> (Tensor<R>, NormState) {
    let mean = if mag.is_empty() { 0.0 } else { mag.sum().to_f64() / mag.len() as f64 };
    let inv = R::from_f64(1.0 / (mean + NORM_EPS));
    (mag.map(|v| v * inv), NormState { mean })
}
