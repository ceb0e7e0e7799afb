//! Waveform-in, waveform-out enhancement with a trained checkpoint.

use crate::checkpoint::Checkpoint;
use crate::config::KvConfig;
use crate::dsp::{istft, stft, AudioSignal, Spectrogram};
use crate::error::{Error, Result};
use crate::mask::{apply_mask, CirmMask};
use crate::model::{model_forward, ModelConfig};
use crate::subband::magnitude;
use crate::tensor::ParamStore;

/// Zero padding that lets every input sample be covered by full frames.
///
/// `win_len - hop` samples go in front so the first sample sits under as many
/// windows as an interior one; the tail is padded likewise and rounded up to a
/// whole hop.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FramePlan {
    pub front: usize,
    pub total: usize,
    pub len: usize,
}

impl FramePlan {
    pub fn new(len: usize, win_len: usize, hop: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::InputTooShort { len, need: 1 });
        }
        if hop == 0 || hop > win_len {
            return Err(Error::StftMetadata(format!("window {win_len} / hop {hop}")));
        }
        let front = win_len - hop;
        let mut total = (2 * front + len).max(win_len);
        total += (hop - (total - win_len) % hop) % hop;
        Ok(Self { front, total, len })
    }

    pub fn pad(&self, signal: &AudioSignal) -> Result<AudioSignal> {
        if signal.len() != self.len {
            return Err(Error::Shape { op: "pad", left: vec![signal.len()], right: vec![self.len] });
        }
        let mut out = vec![0.0; self.total];
        out[self.front..self.front + self.len].copy_from_slice(signal.samples());
        AudioSignal::new(out)
    }

    pub fn trim(&self, padded: AudioSignal) -> Result<AudioSignal> {
        let mut samples = padded.into_samples();
        samples.truncate(self.front + self.len);
        samples.drain(..self.front);
        AudioSignal::new(samples)
    }
}

/// Pads, transforms, applies `mask_fn(noisy_spec)` and inverts back to `noisy.len()` samples.
pub fn enhance_with(
    noisy: &AudioSignal,
    win_len: usize,
    hop: usize,
    mask_fn: impl FnOnce(&FramePlan, &Spectrogram) -> Result<CirmMask>,
) -> Result<AudioSignal> {
    let plan = FramePlan::new(noisy.len(), win_len, hop)?;
    let spec = stft(&plan.pad(noisy)?, win_len, hop)?;
    let mask = mask_fn(&plan, &spec)?;
    let out = istft(&apply_mask(&spec, &mask)?, plan.total)?;
    plan.trim(out)
}

/// A trained model ready to enhance waveforms.
#[derive(Clone, Debug)]
pub struct Enhancer {
    config: ModelConfig,
    params: ParamStore<f32>,
}

impl Enhancer {
    pub fn new(config: ModelConfig, params: ParamStore<f32>) -> Result<Self> {
        config.validate()?;
        config.check_params(&params)?;
        Ok(Self { config, params })
    }

    /// Reads the model configuration from the checkpoint header.
    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let config = ModelConfig::from_kv(&KvConfig::parse(&ckpt.config)?)?;
        Self::new(config, ckpt.params)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<f32> {
        &self.params
    }

    /// Uncompressed mask predicted for `spec`.
    pub fn predict_mask(&self, spec: &Spectrogram) -> Result<CirmMask> {
        let mag = magnitude(spec).cast::<f32>();
        model_forward(&mag, &self.config, &self.params)?.decompress()
    }

    /// Enhanced waveform with exactly as many samples as `noisy`.
    pub fn enhance(&self, noisy: &AudioSignal) -> Result<AudioSignal> {
        enhance_with(noisy, self.config.win_len, self.config.hop, |_, spec| self.predict_mask(spec))
    }
}
