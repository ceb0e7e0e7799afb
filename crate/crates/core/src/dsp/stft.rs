//! Short-time Fourier transform with a periodic Hann window.
//!
//! Frames are not centered: frame `t` covers samples `[t * hop, t * hop + win_len)`.
//! The inverse uses weighted overlap-add with the analysis window as the
//! synthesis window and divides by the summed squared window, which gives
//! exact reconstruction wherever at least one frame has a nonzero weight.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;

use super::AudioSignal;
use crate::error::{Error, Result};

/// Default window length: 32 ms at 16 kHz.
pub const WIN_LEN: usize = 512;
/// Default frame shift: 16 ms at 16 kHz.
pub const HOP: usize = 256;

/// Smallest summed squared window weight that is still inverted.
const ENVELOPE_FLOOR: f64 = 1e-10;

/// One-sided complex spectrogram, stored frequency-major (`data[f * frames + t]`).
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    data: Vec<Complex64>,
    bins: usize,
    frames: usize,
    hop: usize,
    win_len: usize,
}

impl Spectrogram {
    pub fn new(data: Vec<Complex64>, bins: usize, frames: usize, hop: usize, win_len: usize) -> Result<Self> {
        let spec = Self { data, bins, frames, hop, win_len };
        spec.check_metadata()?;
        Ok(spec)
    }

    pub fn zeros(bins: usize, frames: usize, hop: usize, win_len: usize) -> Result<Self> {
        Self::new(vec![Complex64::new(0.0, 0.0); bins * frames], bins, frames, hop, win_len)
    }

    fn check_metadata(&self) -> Result<()> {
        if self.win_len < 2 || !self.win_len.is_multiple_of(2) {
            return Err(Error::StftMetadata(format!("window length {} must be even and >= 2", self.win_len)));
        }
        if self.hop == 0 || self.hop > self.win_len {
            return Err(Error::StftMetadata(format!(
                "hop {} must lie in 1..={}",
                self.hop, self.win_len
            )));
        }
        if self.bins != self.win_len / 2 + 1 {
            return Err(Error::StftMetadata(format!(
                "{} bins does not match window length {}",
                self.bins, self.win_len
            )));
        }
        if self.data.len() != self.bins * self.frames {
            return Err(Error::StftMetadata(format!(
                "{} values for a {}x{} spectrogram",
                self.data.len(),
                self.bins,
                self.frames
            )));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn win_len(&self) -> usize {
        self.win_len
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn get(&self, bin: usize, frame: usize) -> Complex64 {
        self.data[bin * self.frames + frame]
    }

    pub fn set(&mut self, bin: usize, frame: usize, value: Complex64) {
        self.data[bin * self.frames + frame] = value;
    }

    pub fn same_layout(&self, other: &Spectrogram) -> bool {
        self.bins == other.bins && self.frames == other.frames && self.hop == other.hop && self.win_len == other.win_len
    }
}

/// Periodic Hann window of length `len`.
pub fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
        .collect()
}

/// Number of whole frames that fit in `len` samples.
pub fn frame_count(len: usize, win_len: usize, hop: usize) -> usize {
    if len < win_len {
        0
    } else {
        1 + (len - win_len) / hop
    }
}

/// Forward STFT. Samples after the last whole frame are dropped.
pub fn stft(signal: &AudioSignal, win_len: usize, hop: usize) -> Result<Spectrogram> {
    let x = signal.samples();
    if win_len < 2 || !win_len.is_multiple_of(2) || hop == 0 || hop > win_len {
        return Err(Error::StftMetadata(format!("window {win_len} / hop {hop}")));
    }
    if x.len() < win_len {
        return Err(Error::InputTooShort { len: x.len(), need: win_len });
    }
    let frames = frame_count(x.len(), win_len, hop);
    let bins = win_len / 2 + 1;
    let window = hann(win_len);
    let fft = FftPlanner::new().plan_fft_forward(win_len);
    let mut spec = Spectrogram::zeros(bins, frames, hop, win_len)?;
    let mut buf = vec![Complex64::new(0.0, 0.0); win_len];
    for t in 0..frames {
        let start = t * hop;
        for (n, slot) in buf.iter_mut().enumerate() {
            *slot = Complex64::new(x[start + n] * window[n], 0.0);
        }
        fft.process(&mut buf);
        for (f, value) in buf.iter().take(bins).enumerate() {
            spec.set(f, t, *value);
        }
    }
    Ok(spec)
}

/// Inverse STFT by weighted overlap-add, trimmed or zero-padded to `out_len`.
pub fn istft(spec: &Spectrogram, out_len: usize) -> Result<AudioSignal> {
    spec.check_metadata()?;
    let (win_len, hop, bins, frames) = (spec.win_len, spec.hop, spec.bins, spec.frames);
    let natural = if frames == 0 { 0 } else { (frames - 1) * hop + win_len };
    let window = hann(win_len);
    let ifft = FftPlanner::new().plan_fft_inverse(win_len);
    let mut out = vec![0.0; natural.max(out_len)];
    let mut envelope = vec![0.0; natural];
    let mut buf = vec![Complex64::new(0.0, 0.0); win_len];
    let scale = 1.0 / win_len as f64;
    for t in 0..frames {
        buf[0] = spec.get(0, t);
        for f in 1..bins {
            let v = spec.get(f, t);
            buf[f] = v;
            if f < win_len - f {
                buf[win_len - f] = v.conj();
            }
        }
        ifft.process(&mut buf);
        let start = t * hop;
        for n in 0..win_len {
            out[start + n] += buf[n].re * scale * window[n];
            envelope[start + n] += window[n] * window[n];
        }
    }
    for (sample, &weight) in out.iter_mut().zip(&envelope) {
        if weight > ENVELOPE_FLOOR {
            *sample /= weight;
        } else {
            *sample = 0.0;
        }
    }
    out.truncate(out_len);
    AudioSignal::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(len: usize, seed: u64) -> AudioSignal {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AudioSignal::new((0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Direct O(N^2) DFT of one windowed frame.
    fn dft_frame(frame: &[f64], bins: usize) -> Vec<Complex64> {
        let n = frame.len() as f64;
        (0..bins)
            .map(|k| {
                frame
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| Complex64::from_polar(x, -2.0 * PI * k as f64 * i as f64 / n))
                    .sum()
            })
            .collect()
    }

    #[test]
    fn dc_signal_has_window_sum_at_bin_zero() {
        let sig = AudioSignal::new(vec![1.0; 512]).unwrap();
        let spec = stft(&sig, WIN_LEN, HOP).unwrap();
        assert_eq!(spec.bins(), 257);
        assert_eq!(spec.frames(), 1);
        let sum: f64 = hann(512).iter().sum();
        let dc = spec.get(0, 0);
        assert!((dc.re - sum).abs() < 1e-9);
        assert!(dc.im.abs() < 1e-9);
    }

    #[test]
    fn sinusoid_concentrates_in_its_bin_and_matches_direct_dft() {
        let freq = 8.0 * 16000.0 / 512.0;
        assert_eq!(freq, 250.0);
        let samples: Vec<f64> = (0..512).map(|n| (2.0 * PI * freq * n as f64 / 16000.0).sin()).collect();
        let sig = AudioSignal::new(samples.clone()).unwrap();
        let spec = stft(&sig, WIN_LEN, HOP).unwrap();
        let window = hann(512);
        let windowed: Vec<f64> = samples.iter().zip(&window).map(|(x, w)| x * w).collect();
        let oracle = dft_frame(&windowed, 257);
        for f in 0..257 {
            assert!((spec.get(f, 0) - oracle[f]).norm() < 1e-8, "bin {f}");
        }
        let peak = spec.get(8, 0).norm();
        for f in (0..257).filter(|f| (*f as i64 - 8).abs() > 1) {
            assert!(spec.get(f, 0).norm() < 1e-6 * peak, "bin {f}");
        }
    }

    #[test]
    fn too_short_input_is_rejected() {
        let sig = AudioSignal::new(vec![0.0; 100]).unwrap();
        assert!(matches!(stft(&sig, 512, 256), Err(Error::InputTooShort { .. })));
    }

    fn interior_rel_err(a: &[f64], b: &[f64], edge: usize) -> f64 {
        let range = edge..a.len() - edge;
        let num: f64 = range.clone().map(|i| (a[i] - b[i]).powi(2)).sum();
        let den: f64 = range.map(|i| b[i].powi(2)).sum();
        (num / den).sqrt()
    }

    #[test]
    fn round_trip_one_second_noise() {
        let x = noise(16000, 1);
        let spec = stft(&x, WIN_LEN, HOP).unwrap();
        let y = istft(&spec, x.len()).unwrap();
        assert_eq!(y.len(), x.len());
        assert!(interior_rel_err(y.samples(), x.samples(), WIN_LEN) < 1e-6);
    }

    #[test]
    fn zero_spectrogram_gives_silence() {
        let spec = Spectrogram::zeros(257, 10, 256, 512).unwrap();
        let y = istft(&spec, 3000).unwrap();
        assert_eq!(y.len(), 3000);
        assert!(y.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dc_bin_only_matches_hand_overlap_add() {
        let (win, hop, frames) = (64, 32, 8);
        let mut spec = Spectrogram::zeros(33, frames, hop, win).unwrap();
        for t in 0..frames {
            spec.set(0, t, Complex64::new(64.0, 0.0));
        }
        let len = (frames - 1) * hop + win;
        let y = istft(&spec, len).unwrap();
        // each frame's inverse is the constant 1.0, so OLA gives sum(w) / sum(w^2)
        let w = hann(win);
        let mut num = vec![0.0; len];
        let mut den = vec![0.0; len];
        for t in 0..frames {
            for n in 0..win {
                num[t * hop + n] += w[n];
                den[t * hop + n] += w[n] * w[n];
            }
        }
        for i in hop..len - hop {
            let expect = num[i] / den[i];
            assert!((y.samples()[i] - expect).abs() < 1e-12);
            assert!(y.samples()[i] > 0.0);
        }
    }

    #[test]
    fn inconsistent_metadata_is_rejected() {
        assert!(Spectrogram::zeros(100, 4, 256, 512).is_err());
        assert!(Spectrogram::zeros(257, 4, 0, 512).is_err());
        assert!(Spectrogram::new(vec![Complex64::new(0.0, 0.0); 3], 257, 4, 256, 512).is_err());
    }

    #[test]
    fn linearity() {
        let x = noise(4096, 2);
        let y = noise(4096, 3);
        let (a, b) = (0.7, -1.3);
        let combo = AudioSignal::new(
            x.samples().iter().zip(y.samples()).map(|(p, q)| a * p + b * q).collect(),
        )
        .unwrap();
        let sx = stft(&x, 512, 256).unwrap();
        let sy = stft(&y, 512, 256).unwrap();
        let sc = stft(&combo, 512, 256).unwrap();
        for i in 0..sc.data().len() {
            let expect = sx.data()[i] * a + sy.data()[i] * b;
            assert!((sc.data()[i] - expect).norm() < 1e-9);
        }
    }

    #[test]
    fn parseval_per_frame() {
        let x = noise(4096, 4);
        let spec = stft(&x, 512, 256).unwrap();
        let w = hann(512);
        for t in 0..spec.frames() {
            let time: f64 = (0..512).map(|n| (x.samples()[t * 256 + n] * w[n]).powi(2)).sum();
            let mut freq = spec.get(0, t).norm_sqr() + spec.get(256, t).norm_sqr();
            freq += 2.0 * (1..256).map(|f| spec.get(f, t).norm_sqr()).sum::<f64>();
            freq /= 512.0;
            assert!(((time - freq) / time).abs() < 1e-6);
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(16))]
        #[test]
        fn perfect_reconstruction_interior(seed in 0u64..1000, extra in 0usize..700, win_pow in 5u32..10) {
            let win = 1usize << win_pow;
            let hop = win / 2;
            let x = noise(4 * win + extra, seed);
            let spec = stft(&x, win, hop).unwrap();
            let y = istft(&spec, x.len()).unwrap();
            // samples beyond the last whole frame are not represented
            let covered = frame_count(x.len(), win, hop).saturating_sub(1) * hop + win;
            let err = interior_rel_err(&y.samples()[..covered], &x.samples()[..covered], win);
            proptest::prop_assert!(err < 1e-6, "err {}", err);
        }
    }
}
