//! Training loop: synthetic batch → forward → MSE on the compressed mask → Adam.
//!
//! Batches are a pure function of `(seed, step)`, so the state that has to
//! survive a restart is the step counter, the running loss and the
//! parameters with their Adam moments, which is exactly what a checkpoint
//! holds.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::checkpoint::Checkpoint;
use crate::config::KvConfig;
use crate::data::{make_batch, MixSpec, NoiseKind, CHUNK_FRAMES};
use crate::error::{Error, Result};
use crate::model::{forward_batch, ModelConfig, MODEL_KEYS};
use crate::tensor::{Adam, AdamConfig, Graph, ParamStore};

pub const TRAIN_KEYS: &[&str] =
    &["lr", "steps", "seed", "snr_min", "snr_max", "T", "batch_size", "checkpoint_every", "noise", "out_dir"];

/// Chunk length of the toy configuration, about 0.2 s.
pub const TOY_FRAMES: usize = 96;

/// Weight of the newest loss in the running average.
pub const LOSS_SMOOTHING: f64 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub lr: f64,
    pub steps: u64,
    pub seed: u64,
    pub mix: MixSpec,
    pub batch_size: usize,
    pub checkpoint_every: u64,
    pub out_dir: Option<PathBuf>,
}

impl TrainConfig {
    /// Toy-scale defaults for `variant`: F = 33, n = 4, widths 16/16/32,
    /// batches of 4 chunks of [`TOY_FRAMES`] frames.
    pub fn toy(variant: crate::model::Variant, seed: u64) -> Self {
        let model = ModelConfig::toy(variant);
        let mix = MixSpec {
            snr_min: -5.0,
            snr_max: 20.0,
            frames: TOY_FRAMES,
            seed,
            noise: NoiseKind::Either,
            win_len: model.win_len,
            hop: model.hop,
        };
        Self { model, lr: 1e-3, steps: 2000, seed, mix, batch_size: 4, checkpoint_every: 100, out_dir: None }
    }

    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let allowed: Vec<&str> = MODEL_KEYS.iter().chain(TRAIN_KEYS).copied().collect();
        kv.check_keys(&allowed)?;
        let model = ModelConfig::from_kv(kv)?;
        let seed = kv.parse_or("seed", 0u64)?;
        let mix = MixSpec {
            snr_min: kv.parse_or("snr_min", -5.0)?,
            snr_max: kv.parse_or("snr_max", 20.0)?,
            frames: kv.parse_or("T", CHUNK_FRAMES)?,
            seed,
            noise: kv.parse_or("noise", NoiseKind::Either)?,
            win_len: model.win_len,
            hop: model.hop,
        };
        let cfg = Self {
            model,
            lr: kv.parse_or("lr", 1e-3)?,
            steps: kv.parse_or("steps", 2000u64)?,
            seed,
            mix,
            batch_size: kv.parse_or("batch_size", 8usize)?,
            checkpoint_every: kv.parse_or("checkpoint_every", 100u64)?,
            out_dir: kv.get("out_dir").map(PathBuf::from),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.mix.validate()?;
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::Config("steps and batch_size must be at least 1".into()));
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(Error::Config(format!("learning rate {} must be finite and non-negative", self.lr)));
        }
        Ok(())
    }

    /// Everything except `out_dir`, which does not affect the trajectory.
    pub fn to_kv(&self) -> KvConfig {
        let mut kv = self.model.to_kv();
        kv.set("lr", self.lr);
        kv.set("steps", self.steps);
        kv.set("seed", self.seed);
        kv.set("snr_min", self.mix.snr_min);
        kv.set("snr_max", self.mix.snr_max);
        kv.set("T", self.mix.frames);
        kv.set("batch_size", self.batch_size);
        kv.set("checkpoint_every", self.checkpoint_every);
        kv.set("noise", self.mix.noise);
        kv
    }

    fn trajectory_key(&self) -> String {
        let mut cfg = self.clone();
        cfg.steps = 1;
        cfg.checkpoint_every = 1;
        cfg.to_kv().to_text()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub step: u64,
    pub running_loss: f64,
    pub params: ParamStore<f32>,
}

pub struct Trainer {
    cfg: TrainConfig,
    state: TrainState,
    adam: Adam,
}

fn norms_summary(params: &ParamStore<f32>) -> String {
    params.norms().iter().map(|(n, v)| format!("{n}={v:.4e}")).collect::<Vec<_>>().join(", ")
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let params = cfg.model.init_params(cfg.seed)?;
        let adam = Adam::new(AdamConfig { lr: cfg.lr, ..AdamConfig::default() });
        Ok(Self { cfg, state: TrainState { step: 0, running_loss: 0.0, params }, adam })
    }

    /// Continues from `ckpt`; every setting that shapes the trajectory must match.
    pub fn resume(cfg: TrainConfig, ckpt: Checkpoint) -> Result<Self> {
        let saved = TrainConfig::from_kv(&KvConfig::parse(&ckpt.config)?)?;
        if saved.trajectory_key() != cfg.trajectory_key() {
            return Err(Error::Checkpoint("checkpoint was trained with a different configuration".into()));
        }
        cfg.model.check_params(&ckpt.params)?;
        let mut t = Self::new(cfg)?;
        t.state = TrainState { step: ckpt.step, running_loss: ckpt.running_loss, params: ckpt.params };
        Ok(t)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn into_state(self) -> TrainState {
        self.state
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.cfg.to_kv().to_text(),
            step: self.state.step,
            running_loss: self.state.running_loss,
            params: self.state.params.clone(),
        }
    }

    fn diverged(&self, loss: f64) -> Error {
        Error::Diverged { step: self.state.step as usize + 1, loss, norms: norms_summary(&self.state.params) }
    }

    /// One optimizer step; returns the batch loss.
    pub fn step(&mut self) -> Result<f64> {
        let batch = make_batch(&self.cfg.mix, self.cfg.batch_size, self.state.step)?;
        let mut g = Graph::new();
        let pred = match forward_batch(&mut g, &self.state.params, &self.cfg.model, &batch.mags) {
            Err(Error::NonFinite { .. }) => return Err(self.diverged(f64::NAN)),
            other => other?,
        };
        let target = g.input(batch.targets);
        let loss_var = g.mse(pred, target).map_err(|_| self.diverged(f64::NAN))?;
        let loss = f64::from(g.value(loss_var).data()[0]);
        if !loss.is_finite() {
            return Err(self.diverged(loss));
        }
        let grads = g.backward(loss_var)?.into_params();
        drop(g);
        self.adam.step(&mut self.state.params, &grads)?;
        if !self.state.params.iter().all(|(_, t)| t.all_finite()) {
            return Err(self.diverged(loss));
        }
        self.state.step += 1;
        self.state.running_loss = if self.state.step == 1 {
            loss
        } else {
            (1.0 - LOSS_SMOOTHING) * self.state.running_loss + LOSS_SMOOTHING * loss
        };
        Ok(loss)
    }

    /// Steps until `cfg.steps`, calling `on_step(step, loss)` after each.
    pub fn run(&mut self, mut on_step: impl FnMut(&Self, f64) -> Result<()>) -> Result<()> {
        while self.state.step < self.cfg.steps {
            let loss = self.step()?;
            on_step(self, loss)?;
        }
        Ok(())
    }
}

/// Trains in memory and returns the per-step losses.
pub fn train(cfg: TrainConfig) -> Result<(TrainState, Vec<f64>)> {
    let mut trainer = Trainer::new(cfg)?;
    let mut losses = Vec::new();
    trainer.run(|_, loss| {
        losses.push(loss);
        Ok(())
    })?;
    Ok((trainer.into_state(), losses))
}

pub const LOSS_LOG: &str = "loss.csv";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

pub fn checkpoint_name(step: u64) -> String {
    format!("step-{step:06}.ckpt")
}

/// Trains into `dir`: appends `step,loss` rows to `loss.csv`, saves a
/// checkpoint every `checkpoint_every` steps and `final.ckpt` at the end.
pub fn train_to_dir(cfg: TrainConfig, dir: &Path, resume_from: Option<&Path>) -> Result<TrainState> {
    fs::create_dir_all(dir)?;
    let mut trainer = match resume_from {
        Some(path) => Trainer::resume(cfg, Checkpoint::load(path)?)?,
        None => Trainer::new(cfg)?,
    };
    let log_path = dir.join(LOSS_LOG);
    let mut log = if trainer.state().step == 0 {
        let mut f = BufWriter::new(File::create(&log_path)?);
        writeln!(f, "step,loss")?;
        f
    } else {
        truncate_log(&log_path, trainer.state().step)?;
        BufWriter::new(OpenOptions::new().append(true).open(&log_path)?)
    };
    let every = trainer.config().checkpoint_every;
    trainer.run(|t, loss| {
        let step = t.state().step;
        writeln!(log, "{step},{loss}")?;
        if every > 0 && step % every == 0 {
            log.flush()?;
            t.checkpoint().save(dir.join(checkpoint_name(step)))?;
            log::info!("step {step}: loss {loss:.5}, running {:.5}", t.state().running_loss);
        }
        Ok(())
    })?;
    log.flush()?;
    trainer.checkpoint().save(dir.join(FINAL_CHECKPOINT))?;
    Ok(trainer.into_state())
}

/// Drops log rows past `step` so a resumed run does not duplicate them.
fn truncate_log(path: &Path, step: u64) -> Result<()> {
    let text = fs::read_to_string(path).unwrap_or_else(|_| "step,loss\n".into());
    let mut kept = String::new();
    for (i, line) in text.lines().enumerate() {
        let keep = i == 0 || line.split(',').next().and_then(|s| s.parse::<u64>().ok()).is_some_and(|s| s <= step);
        if keep {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    fs::write(path, kept)?;
    Ok(())
}
