//! The `intersubnet` command line.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::Checkpoint;
use crate::config::KvConfig;
use crate::dsp::{read_wav, write_wav};
use crate::enhance::Enhancer;
use crate::error::Error;
use crate::metrics::{evaluate, EvalSet, MaskSource};
use crate::model::ModelConfig;
use crate::train::{train_to_dir, TrainConfig, FINAL_CHECKPOINT};
use crate::verify::{run_suite, SuiteOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "intersubnet", version, about = "Subband speech enhancement with interactive subband modules")]
pub struct Cli {
    /// Single-threaded, bit-reproducible execution.
    #[arg(long, global = true)]
    pub deterministic: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model from a key=value config file.
    Train(TrainArgs),
    /// Enhance a 16 kHz mono wav file.
    Enhance(EnhanceArgs),
    /// SI-SDR evaluation on held-out synthetic mixtures.
    Eval(EvalArgs),
    /// Run the gradient, invariant and parameter-count checks.
    Verify(VerifyArgs),
    /// Describe a checkpoint.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `out_dir` in the config.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Continue from a checkpoint written by the same config.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Any other config override, `key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct EnhanceArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long = "out")]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 50)]
    pub items: usize,
    /// Also write the per-utterance table here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 20)]
    pub seeds: u64,
    #[arg(long, default_value_t = 50)]
    pub cases: u64,
    #[arg(long, hide = true)]
    pub corrupt: Option<String>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
}

/// Why a command did not succeed.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(Error),
    /// The command ran and its report says no.
    Checks,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::UnknownVariant(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Runtime(_) | Failure::Checks => EXIT_FAILURE,
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_from<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = if e.use_stderr() { write!(err, "{e}") } else { write!(out, "{e}") };
            return code;
        }
    };
    match run(&cli, out) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            match &f {
                Failure::Usage(msg) => {
                    let _ = writeln!(err, "error: {msg}");
                }
                Failure::Runtime(e) => {
                    let _ = writeln!(err, "error: {e}");
                }
                Failure::Checks => {}
            }
            f.exit_code()
        }
    }
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<(), Failure> {
    if cli.deterministic {
        log::info!("deterministic mode: single-threaded, fixed reduction order");
    }
    match &cli.command {
        Command::Train(a) => cmd_train(a, out),
        Command::Enhance(a) => cmd_enhance(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Verify(a) => cmd_verify(a, out),
        Command::Inspect(a) => cmd_inspect(a, out),
    }
}

/// Config file text with command-line overrides applied.
pub fn train_config(a: &TrainArgs) -> Result<TrainConfig, Failure> {
    let text = std::fs::read_to_string(&a.config)
        .map_err(|e| Failure::Usage(format!("cannot read config file {}: {e}", a.config.display())))?;
    let mut kv = KvConfig::parse(&text)?;
    for o in &a.overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| Failure::Usage(format!("override `{o}` is not key=value")))?;
        kv.set(k.trim(), v.trim());
    }
    if let Some(s) = a.steps {
        kv.set("steps", s);
    }
    if let Some(s) = a.seed {
        kv.set("seed", s);
    }
    if let Some(lr) = a.lr {
        kv.set("lr", lr);
    }
    if let Some(d) = &a.out_dir {
        kv.set("out_dir", d.display());
    }
    Ok(TrainConfig::from_kv(&kv)?)
}

fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let cfg = train_config(a)?;
    let dir = cfg
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("runs/{}-seed{}", cfg.model.variant, cfg.seed)));
    let steps = cfg.steps;
    let state = train_to_dir(cfg, &dir, a.resume.as_deref())?;
    writeln!(out, "trained {steps} steps, running loss {:.6}", state.running_loss)?;
    writeln!(out, "checkpoint {}", dir.join(FINAL_CHECKPOINT).display())?;
    Ok(())
}

fn load_enhancer(path: &Path) -> Result<Enhancer, Failure> {
    Ok(Enhancer::from_checkpoint(Checkpoint::load(path)?)?)
}

fn cmd_enhance(a: &EnhanceArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let enhancer = load_enhancer(&a.ckpt)?;
    let noisy = read_wav(&a.input)?;
    let enhanced = enhancer.enhance(&noisy)?;
    let report = write_wav(&a.output, &enhanced)?;
    if report.clipped > 0 {
        log::warn!("{} samples clipped", report.clipped);
    }
    writeln!(out, "wrote {} samples to {}", enhanced.len(), a.output.display())?;
    Ok(())
}

fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let enhancer = load_enhancer(&a.ckpt)?;
    let cfg = enhancer.config();
    let set = EvalSet::new(a.seed, a.items, cfg.win_len, cfg.hop)?;
    let report = evaluate(&MaskSource::Model(&enhancer), &set)?;
    writeln!(out, "{report}")?;
    if let Some(path) = &a.csv {
        std::fs::write(path, report.to_csv())?;
    }
    Ok(())
}

fn cmd_verify(a: &VerifyArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let opts = SuiteOptions { seeds: a.seeds, equivariance_cases: a.cases, corrupt: a.corrupt.clone() };
    let report = run_suite(&opts)?;
    writeln!(out, "{report}")?;
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Checks)
    }
}

/// `2291502` → `2.29M`.
pub fn rounded_count(n: usize) -> String {
    match n {
        0..=999 => n.to_string(),
        1_000..=999_999 => format!("{:.1}k", n as f64 / 1e3),
        _ => format!("{:.2}M", n as f64 / 1e6),
    }
}

fn cmd_inspect(a: &InspectArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let ckpt = Checkpoint::load(&a.ckpt)?;
    let cfg = ModelConfig::from_kv(&KvConfig::parse(&ckpt.config)?)?;
    cfg.check_params(&ckpt.params)?;
    writeln!(out, "variant {}", cfg.variant)?;
    writeln!(out, "n {}  bins {}  window {}/{}  boundary {}", cfg.n, cfg.bins(), cfg.win_len, cfg.hop, cfg.boundary)?;
    writeln!(out, "step {}  running loss {:.6}", ckpt.step, ckpt.running_loss)?;
    for layer in cfg.layers() {
        writeln!(out, "  {:<18} {:<34} {:>10}", layer.name, layer.kind, layer.params)?;
    }
    for (name, t) in ckpt.params.iter() {
        writeln!(out, "  {name:<30} {:?}", t.shape())?;
    }
    let total = cfg.param_count();
    writeln!(out, "parameters {total} ({})", rounded_count(total))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding() {
        assert_eq!(rounded_count(2_291_502), "2.29M");
        assert_eq!(rounded_count(16_475), "16.5k");
        assert_eq!(rounded_count(770), "770");
    }

    #[test]
    fn config_errors_are_usage_errors() {
        assert_eq!(Failure::from(Error::Config("x".into())).exit_code(), EXIT_USAGE);
        assert_eq!(Failure::from(Error::Silent("x")).exit_code(), EXIT_FAILURE);
    }
}
