use std::path::Path;

use hound::{SampleFormat, WavSpec};

use super::{AudioSignal, SAMPLE_RATE};
use crate::error::{Error, Result};

const SCALE: f64 = 32768.0;

/// Result of a write; samples outside `[-1, 1)` are clamped and counted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct WriteReport {
    pub clipped: usize,
}

fn wav_err(path: &Path, source: hound::Error) -> Error {
    match source {
        hound::Error::IoError(e) => Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))),
        hound::Error::FormatError(msg) => Error::WavFormat(format!("{}: {msg}", path.display())),
        other => Error::Wav { path: path.to_path_buf(), source: other },
    }
}

/// Reads a 16-bit PCM mono 16 kHz file, scaling samples by 1/32768.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioSignal> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::WavFormat(format!("mono required, file has {} channels", spec.channels)));
    }
    if spec.sample_format != SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::WavFormat(format!(
            "16-bit PCM required, file is {:?} with {} bits",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::WavFormat(format!(
            "{SAMPLE_RATE} Hz required, file is {} Hz",
            spec.sample_rate
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| f64::from(v) / SCALE))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| wav_err(path, e))?;
    AudioSignal::new(samples)
}

/// Writes a 16-bit PCM mono 16 kHz file with saturating conversion.
pub fn write_wav(path: impl AsRef<Path>, signal: &AudioSignal) -> Result<WriteReport> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    let mut report = WriteReport::default();
    for &x in signal.samples() {
        let scaled = (x * SCALE).round();
        if !(-SCALE..SCALE).contains(&scaled) {
            report.clipped += 1;
        }
        let value = scaled.clamp(-SCALE, SCALE - 1.0) as i16;
        writer.write_sample(value).map_err(|e| wav_err(path, e))?;
    }
    writer.finalize().map_err(|e| wav_err(path, e))?;
    if report.clipped > 0 {
        log::warn!("{}: clipped {} samples", path.display(), report.clipped);
    }
    Ok(report)
}
