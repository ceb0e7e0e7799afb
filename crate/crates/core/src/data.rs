//! Synthetic training material: harmonic "speech", broadband noise and
//! on-the-fly mixing at a random SNR.
//!
//! Every random draw is keyed by `(domain, seed, step, item)`, so a batch can
//! be regenerated from its coordinates alone.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dsp::{stft, AudioSignal, Spectrogram, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::mask::ideal_cirm;
use crate::subband::magnitude;
use crate::tensor::Tensor;

/// Key separating training draws from evaluation draws.
pub const TRAIN_DOMAIN: u64 = 0x7472_6169_6e00_0000;
pub const EVAL_DOMAIN: u64 = 0x6576_616c_0000_0000;

/// Chunk length in frames used for training sequences.
pub const CHUNK_FRAMES: usize = 192;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for one item; distinct coordinates give unrelated streams.
pub fn item_seed(domain: u64, seed: u64, step: u64, item: u64) -> u64 {
    [seed, step, item].iter().fold(mix64(domain), |acc, &x| mix64(acc ^ mix64(x.wrapping_add(0x9e37_79b9_7f4a_7c15))))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum NoiseKind {
    White,
    /// White noise through a random one-pole low-pass.
    Filtered,
    /// White or filtered with equal probability per item.
    #[default]
    Either,
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseKind::White => "white",
            NoiseKind::Filtered => "filtered",
            NoiseKind::Either => "either",
        })
    }
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "white" => Ok(NoiseKind::White),
            "filtered" => Ok(NoiseKind::Filtered),
            "either" => Ok(NoiseKind::Either),
            other => Err(Error::Config(format!("unknown noise kind `{other}` (white, filtered, either)"))),
        }
    }
}

/// Sum of 3 to 8 harmonic tones with slow envelopes, peak-normalized to 0.5.
pub fn synth_clean(seed: u64, duration_s: f64) -> Result<AudioSignal> {
    if duration_s.is_nan() || duration_s < 1.0 {
        return Err(Error::Invalid { op: "synth_clean", msg: format!("duration {duration_s} s is below 1 s") });
    }
    let len = (duration_s * SAMPLE_RATE as f64).round() as usize;
    let sr = SAMPLE_RATE as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0.0; len];
    for _ in 0..rng.gen_range(3..=8) {
        let f0 = rng.gen_range(90.0..420.0);
        let harmonics = rng.gen_range(2..=6);
        let env_rate = rng.gen_range(0.5..4.0);
        let env_phase = rng.gen_range(0.0..2.0 * PI);
        let gain = rng.gen_range(0.3..1.0);
        let mut rotors: Vec<(Complex64, Complex64)> = (1..=harmonics)
            .filter(|&k| f0 * (k as f64) < 0.45 * sr)
            .map(|k| {
                let h = k as f64;
                let start = Complex64::from_polar(1.0 / h, rng.gen_range(0.0..2.0 * PI));
                (start, Complex64::from_polar(1.0, 2.0 * PI * f0 * h / sr))
            })
            .collect();
        let env_step = Complex64::from_polar(1.0, 2.0 * PI * env_rate / sr);
        let mut env_rot = Complex64::from_polar(1.0, env_phase);
        for (i, o) in out.iter_mut().enumerate() {
            if i % 1024 == 0 {
                // renormalize the recurrences against drift
                env_rot /= env_rot.norm();
                for (k, (z, _)) in rotors.iter_mut().enumerate() {
                    *z *= 1.0 / ((k + 1) as f64 * z.norm());
                }
            }
            let env = 0.5 * (1.0 + env_rot.im);
            let v: f64 = rotors.iter().map(|(z, _)| z.im).sum();
            *o += gain * env * env * v;
            env_rot *= env_step;
            for (z, step) in &mut rotors {
                *z *= *step;
            }
        }
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if peak > 0.0 { 0.5 / peak } else { 0.0 };
    AudioSignal::new(out.into_iter().map(|v| v * scale).collect())
}

/// Unit-RMS noise of `len` samples. `Either` is resolved from the seed.
pub fn synth_noise(seed: u64, len: usize, kind: NoiseKind) -> Result<AudioSignal> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kind = match kind {
        NoiseKind::Either if rng.gen_bool(0.5) => NoiseKind::White,
        NoiseKind::Either => NoiseKind::Filtered,
        k => k,
    };
    let mut x: Vec<f64> = (0..len).map(|_| StandardNormal.sample(&mut rng)).collect();
    if kind == NoiseKind::Filtered {
        let a = rng.gen_range(0.5..0.95);
        let mut prev = 0.0;
        for v in &mut x {
            prev = *v + a * prev;
            *v = prev;
        }
    }
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / len.max(1) as f64).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v /= rms);
    }
    AudioSignal::new(x)
}

/// Rescales `noise` so that `10 log10(P_clean / P_noise) == snr_db`.
pub fn scale_noise(clean: &AudioSignal, noise: &AudioSignal, snr_db: f64) -> Result<AudioSignal> {
    if clean.len() != noise.len() {
        return Err(Error::Shape { op: "mix_at_snr", left: vec![clean.len()], right: vec![noise.len()] });
    }
    let (pc, pn) = (clean.power(), noise.power());
    if pc <= 0.0 {
        return Err(Error::Silent("clean signal"));
    }
    if pn <= 0.0 {
        return Err(Error::Silent("noise signal"));
    }
    Ok(noise.scaled((pc / (pn * 10f64.powf(snr_db / 10.0))).sqrt()))
}

pub fn mix_at_snr(clean: &AudioSignal, noise: &AudioSignal, snr_db: f64) -> Result<AudioSignal> {
    let scaled = scale_noise(clean, noise, snr_db)?;
    AudioSignal::new(clean.samples().iter().zip(scaled.samples()).map(|(c, n)| c + n).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixSpec {
    pub snr_min: f64,
    pub snr_max: f64,
    pub frames: usize,
    pub seed: u64,
    pub noise: NoiseKind,
    pub win_len: usize,
    pub hop: usize,
}

impl MixSpec {
    pub fn new(snr_min: f64, snr_max: f64, frames: usize, seed: u64, win_len: usize, hop: usize) -> Result<Self> {
        let spec = Self { snr_min, snr_max, frames, seed, noise: NoiseKind::Either, win_len, hop };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.snr_min.is_finite() || !self.snr_max.is_finite() || self.snr_min > self.snr_max {
            return Err(Error::Config(format!("snr range [{}, {}] is not ordered", self.snr_min, self.snr_max)));
        }
        if self.frames == 0 {
            return Err(Error::Config("chunk length T must be at least 1 frame".into()));
        }
        if self.hop == 0 || self.hop > self.win_len {
            return Err(Error::Config(format!("invalid STFT config win_len={} hop={}", self.win_len, self.hop)));
        }
        Ok(())
    }

    /// Samples that produce exactly `frames` STFT frames.
    pub fn chunk_samples(&self) -> usize {
        (self.frames - 1) * self.hop + self.win_len
    }
}

/// One mixture with its parts.
#[derive(Clone, Debug)]
pub struct Example {
    pub clean: AudioSignal,
    pub noise: AudioSignal,
    pub noisy: AudioSignal,
    pub snr_db: f64,
}

/// Draws one example: a random crop of a fresh clean source, mixed at a random SNR.
pub fn make_example(spec: &MixSpec, item_seed: u64) -> Result<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(item_seed);
    let need = spec.chunk_samples();
    let source_s = (need as f64 / SAMPLE_RATE as f64 * 1.5).max(1.0);
    let source = synth_clean(rng.gen(), source_s)?;
    let start = rng.gen_range(0..=source.len() - need);
    let clean = AudioSignal::new(source.samples()[start..start + need].to_vec())?;
    let raw = synth_noise(rng.gen(), need, spec.noise)?;
    let snr_db = if spec.snr_min == spec.snr_max { spec.snr_min } else { rng.gen_range(spec.snr_min..spec.snr_max) };
    let noise = scale_noise(&clean, &raw, snr_db)?;
    let noisy = AudioSignal::new(clean.samples().iter().zip(noise.samples()).map(|(c, n)| c + n).collect())?;
    Ok(Example { clean, noise, noisy, snr_db })
}

/// Model inputs and compressed ideal targets for one step.
#[derive(Clone, Debug)]
pub struct Batch {
    /// Noisy magnitudes, `[B, F, T]`.
    pub mags: Tensor<f32>,
    pub specs: Vec<Spectrogram>,
    /// Compressed ideal masks, `[B, 2, F, T]` with the real plane first.
    pub targets: Tensor<f32>,
    pub snrs: Vec<f64>,
}

pub fn make_batch(spec: &MixSpec, batch_size: usize, step: u64) -> Result<Batch> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    spec.validate()?;
    let bins = spec.win_len / 2 + 1;
    let per = bins * spec.frames;
    let mut mags = Vec::with_capacity(batch_size * per);
    let mut targets = Vec::with_capacity(batch_size * 2 * per);
    let mut specs = Vec::with_capacity(batch_size);
    let mut snrs = Vec::with_capacity(batch_size);
    for item in 0..batch_size {
        let ex = make_example(spec, item_seed(TRAIN_DOMAIN, spec.seed, step, item as u64))?;
        let noisy = stft(&ex.noisy, spec.win_len, spec.hop)?;
        let clean = stft(&ex.clean, spec.win_len, spec.hop)?;
        debug_assert_eq!(noisy.frames(), spec.frames);
        let target = ideal_cirm(&noisy, &clean)?.compress()?;
        mags.extend(magnitude(&noisy).data().iter().map(|&v| v as f32));
        targets.extend(target.real.iter().chain(&target.imag).map(|&v| v as f32));
        specs.push(noisy);
        snrs.push(ex.snr_db);
    }
    Ok(Batch {
        mags: Tensor::new(vec![batch_size, bins, spec.frames], mags)?,
        specs,
        targets: Tensor::new(vec![batch_size, 2, bins, spec.frames], targets)?,
        snrs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::compress_value;

    fn flatness(x: &AudioSignal) -> f64 {
        let spec = stft(x, 512, 256).unwrap();
        let p: Vec<f64> = spec.data().iter().map(|z| z.norm_sqr() + 1e-20).collect();
        let geo = (p.iter().map(|v| v.ln()).sum::<f64>() / p.len() as f64).exp();
        geo / (p.iter().sum::<f64>() / p.len() as f64)
    }

    #[test]
    fn clean_is_deterministic_and_normalized() {
        let a = synth_clean(5, 1.0).unwrap();
        assert_eq!(a, synth_clean(5, 1.0).unwrap());
        assert_ne!(a, synth_clean(6, 1.0).unwrap());
        assert_eq!(a.len(), 16000);
        let peak = a.samples().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((peak - 0.5).abs() < 1e-6);
        assert!(synth_clean(5, 0.5).is_err());
    }

    #[test]
    fn clean_is_sparser_than_white_noise() {
        for seed in 0..5 {
            let clean = synth_clean(seed, 1.0).unwrap();
            let noise = synth_noise(seed, 16000, NoiseKind::White).unwrap();
            assert!(flatness(&clean) < 0.5 * flatness(&noise), "seed {seed}");
        }
    }

    #[test]
    fn filtered_noise_is_low_pass() {
        let n = synth_noise(1, 16000, NoiseKind::Filtered).unwrap();
        let spec = stft(&n, 512, 256).unwrap();
        let band = |lo: usize, hi: usize| -> f64 {
            (lo..hi).flat_map(|f| (0..spec.frames()).map(move |t| (f, t))).map(|(f, t)| spec.get(f, t).norm_sqr()).sum()
        };
        assert!(band(0, 64) > 4.0 * band(192, 256));
        assert!((n.power() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mixing_hits_the_requested_snr() {
        let clean = synth_clean(1, 1.0).unwrap();
        let noise = synth_noise(2, clean.len(), NoiseKind::Either).unwrap();
        for snr in [-5.0, -1.5, 0.0, 3.3, 12.0, 20.0] {
            let scaled = scale_noise(&clean, &noise, snr).unwrap();
            let measured = 10.0 * (clean.power() / scaled.power()).log10();
            assert!((measured - snr).abs() < 1e-6);
        }
        let zero = scale_noise(&clean, &noise, 0.0).unwrap();
        assert!((zero.power() / clean.power() - 1.0).abs() < 1e-9);
        let loud = mix_at_snr(&clean, &noise, 200.0).unwrap();
        assert!(loud.samples().iter().zip(clean.samples()).all(|(a, b)| (a - b).abs() < 1e-9));
    }

    #[test]
    fn mixing_rejects_silence_and_length_mismatch() {
        let noise = synth_noise(2, 100, NoiseKind::White).unwrap();
        assert!(matches!(mix_at_snr(&AudioSignal::zeros(100), &noise, 0.0), Err(Error::Silent(_))));
        assert!(mix_at_snr(&noise, &AudioSignal::zeros(100), 0.0).is_err());
        assert!(mix_at_snr(&noise, &AudioSignal::zeros(99), 0.0).is_err());
    }

    #[test]
    fn batch_shapes_and_determinism() {
        let spec = MixSpec::new(-5.0, 20.0, CHUNK_FRAMES, 3, 64, 32).unwrap();
        let b = make_batch(&spec, 2, 0).unwrap();
        assert_eq!(b.mags.shape(), &[2, 33, 192]);
        assert_eq!(b.targets.shape(), &[2, 2, 33, 192]);
        assert!(b.specs.iter().all(|s| s.frames() == 192));
        assert!(b.snrs.iter().all(|s| (-5.0..20.0).contains(s)));
        assert!(b.targets.data().iter().all(|v| v.abs() < 10.0));
        let again = make_batch(&spec, 2, 0).unwrap();
        assert_eq!(b.mags, again.mags);
        assert_eq!(b.targets, again.targets);
        assert_ne!(b.mags, make_batch(&spec, 2, 1).unwrap().mags);
    }

    #[test]
    fn high_snr_targets_are_near_identity() {
        let spec = MixSpec::new(30.0, 30.0, 32, 9, 64, 32).unwrap();
        let b = make_batch(&spec, 4, 0).unwrap();
        let (one, zero) = (compress_value(1.0), compress_value(0.0));
        let per = 33 * 32;
        let (mut err, mut weight) = (0.0, 0.0);
        for item in 0..4 {
            let mags = &b.mags.data()[item * per..(item + 1) * per];
            let t = &b.targets.data()[item * 2 * per..(item + 1) * 2 * per];
            for i in 0..per {
                let w = (mags[i] as f64).powi(2);
                err += w * ((t[i] as f64 - one).abs() + (t[per + i] as f64 - zero).abs());
                weight += w;
            }
        }
        assert!(err / weight < 0.02, "energy-weighted deviation {}", err / weight);
    }

    #[test]
    fn item_seeds_separate_domains() {
        assert_ne!(item_seed(TRAIN_DOMAIN, 1, 0, 0), item_seed(EVAL_DOMAIN, 1, 0, 0));
        assert_ne!(item_seed(TRAIN_DOMAIN, 1, 0, 1), item_seed(TRAIN_DOMAIN, 1, 1, 0));
    }
}
