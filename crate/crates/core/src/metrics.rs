//! SI-SDR and the held-out evaluation harness.

use std::fmt;

use crate::data::{item_seed, make_example, MixSpec, EVAL_DOMAIN};
use crate::dsp::{stft, AudioSignal};
use crate::enhance::{enhance_with, Enhancer};
use crate::error::{Error, Result};
use crate::mask::{ideal_cirm, CirmMask};

/// Reports never exceed this magnitude in dB.
pub const SI_SDR_CAP: f64 = 100.0;

/// Scale-invariant SDR of `est` against `reference`, in dB, capped at ±[`SI_SDR_CAP`].
pub fn si_sdr(est: &AudioSignal, reference: &AudioSignal) -> Result<f64> {
    if est.len() != reference.len() {
        return Err(Error::Shape { op: "si_sdr", left: vec![est.len()], right: vec![reference.len()] });
    }
    let (e, r) = (est.samples(), reference.samples());
    let rr: f64 = r.iter().map(|v| v * v).sum();
    if rr == 0.0 {
        return Err(Error::Silent("si_sdr reference"));
    }
    let alpha = e.iter().zip(r).map(|(a, b)| a * b).sum::<f64>() / rr;
    let (mut target, mut resid) = (0.0, 0.0);
    for (a, b) in e.iter().zip(r) {
        let s = alpha * b;
        target += s * s;
        resid += (a - s) * (a - s);
    }
    let db = if target == 0.0 {
        -SI_SDR_CAP
    } else if resid == 0.0 {
        SI_SDR_CAP
    } else {
        10.0 * (target / resid).log10()
    };
    Ok(db.clamp(-SI_SDR_CAP, SI_SDR_CAP))
}

/// One evaluated utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub id: usize,
    pub snr_db: f64,
    pub sisdr_noisy: f64,
    pub sisdr_enh: f64,
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub variant: String,
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn mean_delta(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.delta))
    }

    pub fn mean_noisy(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.sisdr_noisy))
    }

    pub fn mean_enhanced(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.sisdr_enh))
    }

    /// `id,snr_db,sisdr_noisy,sisdr_enh,delta`, one row per utterance.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,snr_db,sisdr_noisy,sisdr_enh,delta\n");
        for r in &self.rows {
            out.push_str(&format!("{},{:.4},{:.4},{:.4},{:.4}\n", r.id, r.snr_db, r.sisdr_noisy, r.sisdr_enh, r.delta));
        }
        out
    }
}

fn mean(xs: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = xs.len();
    if n == 0 {
        return 0.0;
    }
    xs.sum::<f64>() / n as f64
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "variant {}", self.variant)?;
        for r in &self.rows {
            writeln!(
                f,
                "item {:3}  snr {:6.2} dB  noisy {:7.2} dB  enhanced {:7.2} dB  delta {:+7.2} dB",
                r.id, r.snr_db, r.sisdr_noisy, r.sisdr_enh, r.delta
            )?;
        }
        write!(
            f,
            "{} items: noisy {:.2} dB, enhanced {:.2} dB, mean delta {:+.3} dB",
            self.rows.len(),
            self.mean_noisy(),
            self.mean_enhanced(),
            self.mean_delta()
        )
    }
}

/// Held-out mixtures drawn from the evaluation seed domain.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSet {
    pub seed: u64,
    pub items: usize,
    pub mix: MixSpec,
}

/// Frames per evaluation clip; about one second with the toy STFT.
pub const EVAL_FRAMES: usize = 500;

impl EvalSet {
    pub fn new(seed: u64, items: usize, win_len: usize, hop: usize) -> Result<Self> {
        let mix = MixSpec::new(-5.0, 20.0, EVAL_FRAMES, seed, win_len, hop)?;
        Ok(Self { seed, items, mix })
    }
}

/// Where the enhancement mask comes from.
pub enum MaskSource<'a> {
    Model(&'a Enhancer),
    /// `M = 1`: enhanced equals noisy.
    Identity,
    /// The ideal cIRM computed from the clean reference.
    Ideal,
}

impl MaskSource<'_> {
    fn tag(&self) -> String {
        match self {
            MaskSource::Model(e) => e.config().variant.tag().to_string(),
            MaskSource::Identity => "identity".into(),
            MaskSource::Ideal => "ideal".into(),
        }
    }
}

/// Enhances every item of `set` and scores noisy and enhanced against clean.
pub fn evaluate(source: &MaskSource<'_>, set: &EvalSet) -> Result<EvalReport> {
    if let MaskSource::Model(e) = source {
        let cfg = e.config();
        if (cfg.win_len, cfg.hop) != (set.mix.win_len, set.mix.hop) {
            return Err(Error::Invalid {
                op: "evaluate",
                msg: format!("model uses {}/{} frames, eval set {}/{}", cfg.win_len, cfg.hop, set.mix.win_len, set.mix.hop),
            });
        }
    }
    let (win_len, hop) = (set.mix.win_len, set.mix.hop);
    let mut rows = Vec::with_capacity(set.items);
    for id in 0..set.items {
        let ex = make_example(&set.mix, item_seed(EVAL_DOMAIN, set.seed, 0, id as u64))?;
        let enhanced = match source {
            MaskSource::Model(e) => e.enhance(&ex.noisy)?,
            MaskSource::Identity => {
                enhance_with(&ex.noisy, win_len, hop, |_, s| Ok(CirmMask::identity(s.bins(), s.frames())))?
            }
            MaskSource::Ideal => enhance_with(&ex.noisy, win_len, hop, |plan, s| {
                ideal_cirm(s, &stft(&plan.pad(&ex.clean)?, win_len, hop)?)
            })?,
        };
        let sisdr_noisy = si_sdr(&ex.noisy, &ex.clean)?;
        let sisdr_enh = si_sdr(&enhanced, &ex.clean)?;
        rows.push(EvalRow { id, snr_db: ex.snr_db, sisdr_noisy, sisdr_enh, delta: sisdr_enh - sisdr_noisy });
    }
    Ok(EvalReport { variant: source.tag(), rows })
}
