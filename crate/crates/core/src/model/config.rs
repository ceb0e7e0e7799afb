use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{parse_list, KvConfig};
use crate::error::{Error, Result};
use crate::subband::Boundary;
use crate::tensor::{ParamStore, Real, Tensor};

/// Network topology family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Two SIL blocks, both with SubInter.
    InterSubNet,
    /// SubInter only in the first block.
    Minus2ndSubInter,
    /// Two plain LSTM + G-norm blocks. Same topology as removing both SubInter modules.
    SubbandBaseline,
    /// Three plain LSTM + G-norm blocks.
    SubbandLarge,
}

impl Variant {
    pub const ALL: [Variant; 4] =
        [Variant::InterSubNet, Variant::Minus2ndSubInter, Variant::SubbandBaseline, Variant::SubbandLarge];

    pub fn tag(self) -> &'static str {
        match self {
            Variant::InterSubNet => "inter_subnet",
            Variant::Minus2ndSubInter => "minus_2nd_subinter",
            Variant::SubbandBaseline => "subband_baseline",
            Variant::SubbandLarge => "subband_large",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inter_subnet" => Ok(Variant::InterSubNet),
            "minus_2nd_subinter" => Ok(Variant::Minus2ndSubInter),
            "minus_both_subinter" | "subband_baseline" => Ok(Variant::SubbandBaseline),
            "subband_large" => Ok(Variant::SubbandLarge),
            other => Err(Error::UnknownVariant(other.to_string())),
        }
    }
}

/// One SIL block: optional SubInter, then LSTM, then G-norm.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockConfig {
    pub input: usize,
    pub subinter_hidden: Option<usize>,
    pub lstm_hidden: usize,
}

/// Everything needed to rebuild a network and its feature pipeline.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Neighbours on each side of a subband unit's center bin.
    pub n: usize,
    /// SubInter widths of the first and second SIL block.
    pub subinter_hidden: [usize; 2],
    pub lstm_hidden: usize,
    pub gn_groups: usize,
    pub gn_eps: f64,
    pub boundary: Boundary,
    pub win_len: usize,
    pub hop: usize,
}

pub const MODEL_KEYS: &[&str] =
    &["variant", "n", "subinter_hidden", "lstm_hidden", "gn_groups", "gn_eps", "boundary", "win_len", "hop"];

impl ModelConfig {
    /// Full-size configuration: n = 15, SubInter 102 / 307, LSTM 384,
    /// 32 ms Hann window with 16 ms shift.
    pub fn full(variant: Variant) -> Self {
        Self {
            variant,
            n: 15,
            subinter_hidden: [102, 307],
            lstm_hidden: 384,
            gn_groups: 1,
            gn_eps: 1e-5,
            boundary: Boundary::Circular,
            win_len: crate::dsp::WIN_LEN,
            hop: crate::dsp::HOP,
        }
    }

    /// Desk-scale configuration: 33 bins (4 ms window), n = 4, widths 16 / 16 / 32.
    pub fn toy(variant: Variant) -> Self {
        Self { n: 4, subinter_hidden: [16, 16], lstm_hidden: 32, win_len: 64, hop: 32, ..Self::full(variant) }
    }

    pub fn unit_size(&self) -> usize {
        2 * self.n + 1
    }

    pub fn bins(&self) -> usize {
        self.win_len / 2 + 1
    }

    pub fn blocks(&self) -> Vec<BlockConfig> {
        let subinter: Vec<Option<usize>> = match self.variant {
            Variant::InterSubNet => vec![Some(self.subinter_hidden[0]), Some(self.subinter_hidden[1])],
            Variant::Minus2ndSubInter => vec![Some(self.subinter_hidden[0]), None],
            Variant::SubbandBaseline => vec![None, None],
            Variant::SubbandLarge => vec![None, None, None],
        };
        let mut input = self.unit_size();
        subinter
            .into_iter()
            .map(|h| {
                let b = BlockConfig { input, subinter_hidden: h, lstm_hidden: self.lstm_hidden };
                input = self.lstm_hidden;
                b
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.lstm_hidden == 0 || self.subinter_hidden.contains(&0) {
            return bad("layer widths must be positive".into());
        }
        if self.gn_groups == 0 || !self.lstm_hidden.is_multiple_of(self.gn_groups) {
            return bad(format!("gn_groups {} must divide lstm_hidden {}", self.gn_groups, self.lstm_hidden));
        }
        if self.win_len < 2 || !self.win_len.is_multiple_of(2) || self.hop == 0 || self.hop > self.win_len {
            return bad(format!("invalid STFT config win_len={} hop={}", self.win_len, self.hop));
        }
        if self.bins() <= 2 * self.n {
            return bad(format!("{} frequency bins cannot hold subband units with n = {}", self.bins(), self.n));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::default();
        kv.set("variant", self.variant);
        kv.set("n", self.n);
        kv.set("subinter_hidden", format!("{},{}", self.subinter_hidden[0], self.subinter_hidden[1]));
        kv.set("lstm_hidden", self.lstm_hidden);
        kv.set("gn_groups", self.gn_groups);
        kv.set("gn_eps", self.gn_eps);
        kv.set("boundary", self.boundary);
        kv.set("win_len", self.win_len);
        kv.set("hop", self.hop);
        kv
    }

    /// Reads model keys from `kv`. Missing keys take the full-size values of
    /// the given variant; other keys are ignored.
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let variant: Variant = kv.parse_or("variant", Variant::InterSubNet)?;
        let base = Self::full(variant);
        let subinter_hidden = match kv.get("subinter_hidden") {
            Some(v) => {
                let list: Vec<usize> = parse_list("subinter_hidden", v)?;
                <[usize; 2]>::try_from(list)
                    .map_err(|_| Error::Config("key `subinter_hidden` needs exactly two widths".into()))?
            }
            None => base.subinter_hidden,
        };
        let cfg = Self {
            variant,
            n: kv.parse_or("n", base.n)?,
            subinter_hidden,
            lstm_hidden: kv.parse_or("lstm_hidden", base.lstm_hidden)?,
            gn_groups: kv.parse_or("gn_groups", base.gn_groups)?,
            gn_eps: kv.parse_or("gn_eps", base.gn_eps)?,
            boundary: kv.parse_or("boundary", base.boundary)?,
            win_len: kv.parse_or("win_len", base.win_len)?,
            hop: kv.parse_or("hop", base.hop)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Fresh parameters: affine and LSTM entries uniform in `±1/sqrt(fan_in)`,
    /// G-norm gain 1 and bias 0.
    pub fn init_params<R: Real>(&self, seed: u64) -> Result<ParamStore<R>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut uniform = |shape: &[usize], fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            Tensor::from_fn(shape, |_| R::from_f64(rng.gen_range(-bound..bound)))
        };
        for (k, block) in self.blocks().iter().enumerate() {
            let pre = format!("block{}", k + 1);
            if let Some(h) = block.subinter_hidden {
                let d = block.input;
                for (name, d_in, d_out) in [("f", d, h), ("r", h, h), ("p", 2 * h, d)] {
                    store.insert(format!("{pre}.subinter.{name}.weight"), uniform(&[d_in, d_out], d_in))?;
                    store.insert(format!("{pre}.subinter.{name}.bias"), uniform(&[d_out], d_in))?;
                }
            }
            let (d, h) = (block.input, block.lstm_hidden);
            store.insert(format!("{pre}.lstm.w_ih"), uniform(&[4 * h, d], d))?;
            store.insert(format!("{pre}.lstm.w_hh"), uniform(&[4 * h, h], h))?;
            store.insert(format!("{pre}.lstm.bias"), uniform(&[4 * h], h))?;
            store.insert(format!("{pre}.gnorm.gamma"), Tensor::full(&[h], R::one()))?;
            store.insert(format!("{pre}.gnorm.beta"), Tensor::zeros(&[h]))?;
        }
        let h = self.lstm_hidden;
        store.insert("head.weight", uniform(&[h, 2], h))?;
        store.insert("head.bias", uniform(&[2], h))?;
        Ok(store)
    }

    /// Checks that `params` has exactly the tensors this topology needs.
    pub fn check_params<R: Real>(&self, params: &ParamStore<R>) -> Result<()> {
        let fresh: ParamStore<f32> = self.init_params(0)?;
        for (name, t) in fresh.iter() {
            let got = params.get(name).ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
            if got.shape() != t.shape() {
                return Err(Error::Shape { op: "checkpoint parameter", left: got.shape().to_vec(), right: t.shape().to_vec() });
            }
        }
        if let Some(extra) = params.names().find(|n| !fresh.contains(n)) {
            return Err(Error::UnknownParameter(extra.to_string()));
        }
        Ok(())
    }

    /// Exact parameter count of this topology, computed from layer widths.
    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|l| l.params).sum()
    }

    /// Per-layer summary in execution order.
    pub fn layers(&self) -> Vec<LayerInfo> {
        let mut out = Vec::new();
        for (k, b) in self.blocks().iter().enumerate() {
            let pre = format!("block{}", k + 1);
            if let Some(h) = b.subinter_hidden {
                let d = b.input;
                out.push(LayerInfo {
                    name: format!("{pre}.subinter"),
                    kind: format!("SubInter({d}→{h})"),
                    params: (d * h + h) + (h * h + h) + (2 * h * d + d),
                });
            }
            let h = b.lstm_hidden;
            out.push(LayerInfo {
                name: format!("{pre}.lstm"),
                kind: format!("LSTM({}→{h})", b.input),
                params: 4 * (b.input * h + h * h + h),
            });
            out.push(LayerInfo {
                name: format!("{pre}.gnorm"),
                kind: format!("GroupNorm({} groups, {h} channels)", self.gn_groups),
                params: 2 * h,
            });
        }
        let h = self.lstm_hidden;
        out.push(LayerInfo { name: "head".into(), kind: format!("Linear({h}→2)"), params: 2 * h + 2 });
        out
    }
}

/// Parses a variant tag.
pub fn build_variant(tag: &str) -> Result<ModelConfig> {
    Ok(ModelConfig::full(tag.parse()?))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerInfo {
    pub name: String,
    pub kind: String,
    pub params: usize,
}
