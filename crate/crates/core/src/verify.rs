//! Self-check suite behind `intersubnet verify`.
//!
//! Gradients are compared against central finite differences of the
//! projected output `<proj, y>` with a random fixed `proj`; every check
//! reports its measured value next to the threshold it must meet.

use std::fmt;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::{istft, stft, AudioSignal, Spectrogram};
use crate::error::Result;
use crate::mask::{apply_mask, compress_value, decompress_value, ideal_cirm};
use crate::model::{forward_units, subinter_forward, ModelConfig, Variant};
use crate::tensor::{Graph, ParamStore, Tensor, Var};

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Largest accepted relative gradient error.
pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const ORACLE_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub measured: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl CheckResult {
    fn below(name: impl Into<String>, measured: f64, threshold: f64) -> Self {
        Self { name: name.into(), measured, threshold, passed: measured < threshold }
    }

    fn at_most(name: impl Into<String>, measured: f64, threshold: f64) -> Self {
        Self { name: name.into(), measured, threshold, passed: measured <= threshold }
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {:<28} measured {:.3e}  threshold {:.1e}", self.name, self.measured, self.threshold)
    }
}

#[derive(Clone, Debug, Default)]
pub struct Report {
    pub checks: Vec<CheckResult>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        let failed = self.failures().count();
        write!(f, "{} checks, {} failed", self.checks.len(), failed)
    }
}

#[derive(Clone, Debug)]
pub struct SuiteOptions {
    pub seeds: u64,
    pub equivariance_cases: u64,
    /// Test hook: perturbs the analytic gradient of the named case.
    pub corrupt: Option<String>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self { seeds: 20, equivariance_cases: 50, corrupt: None }
    }
}

type Build = Box<dyn Fn(&mut Graph<f64>, &[Tensor<f64>]) -> Result<(Var, Vec<Var>)>>;

/// A differentiable computation of some input tensors.
pub struct GradCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor<f64>>,
    build: Build,
}

impl GradCase {
    pub fn new(
        name: &'static str,
        inputs: Vec<Tensor<f64>>,
        build: impl Fn(&mut Graph<f64>, &[Tensor<f64>]) -> Result<(Var, Vec<Var>)> + 'static,
    ) -> Self {
        Self { name, inputs, build: Box::new(build) }
    }

    fn leaves(g: &mut Graph<f64>, inputs: &[Tensor<f64>]) -> Vec<Var> {
        inputs.iter().map(|t| g.leaf(t.clone())).collect()
    }

    fn projected(&self, inputs: &[Tensor<f64>], proj: &Tensor<f64>) -> Result<f64> {
        let mut g = Graph::new();
        let (out, _) = (self.build)(&mut g, inputs)?;
        Ok(g.value(out).data().iter().zip(proj.data()).map(|(a, b)| a * b).sum())
    }

    /// Relative error `|a - n| / max(|a|, |n|)` over all input coordinates.
    pub fn check(&self, seed: u64, corrupt: bool) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
        let mut g = Graph::new();
        let (out, vars) = (self.build)(&mut g, &self.inputs)?;
        let proj = Tensor::from_fn(g.shape(out), |_| rng.gen_range(-1.0..1.0));
        let grads = g.backward_with(out, proj.clone())?;
        let mut analytic = Vec::new();
        for (v, input) in vars.iter().zip(&self.inputs) {
            match grads.get(*v) {
                Some(t) => analytic.extend_from_slice(t.data()),
                None => analytic.extend(std::iter::repeat_n(0.0, input.len())),
            }
        }
        if corrupt {
            for a in analytic.iter_mut().step_by(3) {
                *a = *a * 1.05 + 1e-3;
            }
        }
        let mut numeric = Vec::with_capacity(analytic.len());
        let mut inputs = self.inputs.clone();
        for k in 0..inputs.len() {
            for i in 0..inputs[k].len() {
                let orig = inputs[k].data()[i];
                inputs[k].data_mut()[i] = orig + FD_STEP;
                let plus = self.projected(&inputs, &proj)?;
                inputs[k].data_mut()[i] = orig - FD_STEP;
                let minus = self.projected(&inputs, &proj)?;
                inputs[k].data_mut()[i] = orig;
                numeric.push((plus - minus) / (2.0 * FD_STEP));
            }
        }
        Ok(relative_error(&analytic, &numeric))
    }
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale < 1e-300 {
        0.0
    } else {
        diff / scale
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-scale..scale))
}

/// Gradient cases for every differentiable op, SubInter and the toy model.
pub fn grad_cases(seed: u64) -> Result<Vec<GradCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = |shape: &[usize]| rand_tensor(&mut rng, shape, 1.0);
    let mut cases = vec![
        GradCase::new("affine", vec![r(&[2, 3, 4]), r(&[4, 5]), r(&[5])], |g, t| {
            let v = GradCase::leaves(g, t);
            Ok((g.affine(v[0], v[1], Some(v[2]))?, v))
        }),
        GradCase::new("lstm", vec![r(&[2, 3, 2]), r(&[8, 2]), r(&[8, 2]), r(&[8])], |g, t| {
            let v = GradCase::leaves(g, t);
            Ok((g.lstm(v[0], v[1], v[2], v[3], None)?, v))
        }),
        GradCase::new("group_norm", vec![r(&[3, 6]), r(&[6]), r(&[6])], |g, t| {
            let v = GradCase::leaves(g, t);
            Ok((g.group_norm(v[0], v[1], v[2], 2, 1e-5)?, v))
        }),
        GradCase::new("mean_axis", vec![r(&[3, 2, 4])], |g, t| {
            let v = GradCase::leaves(g, t);
            Ok((g.mean_axis(v[0], 1)?, v))
        }),
        GradCase::new("repeat_axis", vec![r(&[2, 3])], |g, t| {
            let v = GradCase::leaves(g, t);
            Ok((g.repeat_axis(v[0], 1, 4)?, v))
        }),
        GradCase::new("permute", vec![r(&[2, 3, 4])], |g, t| {
            let v = GradCase::leaves(g, t);
            Ok((g.permute(v[0], &[2, 0, 1])?, v))
        }),
        GradCase::new("reshape", vec![r(&[2, 6])], |g, t| {
            let v = GradCase::leaves(g, t);
            Ok((g.reshape(v[0], &[3, 4])?, v))
        }),
        GradCase::new("concat_last", vec![r(&[2, 3]), r(&[2, 2])], |g, t| {
            let v = GradCase::leaves(g, t);
            Ok((g.concat_last(v[0], v[1])?, v))
        }),
        GradCase::new("add", vec![r(&[5]), r(&[5])], |g, t| {
            let v = GradCase::leaves(g, t);
            Ok((g.add(v[0], v[1])?, v))
        }),
        GradCase::new("sub", vec![r(&[5]), r(&[5])], |g, t| {
            let v = GradCase::leaves(g, t);
            Ok((g.sub(v[0], v[1])?, v))
        }),
        GradCase::new("mul", vec![r(&[5]), r(&[5])], |g, t| {
            let v = GradCase::leaves(g, t);
            Ok((g.mul(v[0], v[1])?, v))
        }),
        GradCase::new("scale", vec![r(&[5])], |g, t| {
            let v = GradCase::leaves(g, t);
            Ok((g.scale(v[0], -1.7)?, v))
        }),
        GradCase::new("tanh", vec![r(&[6])], |g, t| {
            let v = GradCase::leaves(g, t);
            Ok((g.tanh(v[0])?, v))
        }),
        GradCase::new("sigmoid", vec![r(&[6])], |g, t| {
            let v = GradCase::leaves(g, t);
            Ok((g.sigmoid(v[0])?, v))
        }),
        GradCase::new("sum", vec![r(&[2, 3])], |g, t| {
            let v = GradCase::leaves(g, t);
            Ok((g.sum(v[0])?, v))
        }),
        GradCase::new("mse", vec![r(&[2, 3]), r(&[2, 3])], |g, t| {
            let v = GradCase::leaves(g, t);
            Ok((g.mse(v[0], v[1])?, v))
        }),
    ];
    cases.push(subinter_case(&mut rng));
    cases.push(model_case(seed)?);
    Ok(cases)
}

const SUBINTER_NAMES: [&str; 6] = ["s.f.weight", "s.f.bias", "s.r.weight", "s.r.bias", "s.p.weight", "s.p.bias"];

/// SubInter on F=3, D=4, T=2, H=3.
fn subinter_case(rng: &mut ChaCha8Rng) -> GradCase {
    let (d, h) = (4, 3);
    let shapes: [&[usize]; 7] = [&[1, 3, 2, d], &[d, h], &[h], &[h, h], &[h], &[2 * h, d], &[d]];
    let inputs = shapes.iter().map(|s| rand_tensor(rng, s, 1.0)).collect();
    GradCase::new("subinter", inputs, |g, t| {
        let mut store = ParamStore::new();
        for (name, value) in SUBINTER_NAMES.iter().zip(&t[1..]) {
            store.insert(*name, value.clone())?;
        }
        let x = g.leaf(t[0].clone());
        let y = crate::model::subinter(g, &store, "s", x)?;
        let mut vars = vec![x];
        for name in SUBINTER_NAMES {
            vars.push(g.param(&store, name)?);
        }
        Ok((y, vars))
    })
}

/// Configuration of the small model used for the full-network gradient check.
pub fn gradcheck_model_config() -> ModelConfig {
    ModelConfig { n: 2, subinter_hidden: [6, 8], lstm_hidden: 12, win_len: 16, hop: 8, ..ModelConfig::toy(Variant::InterSubNet) }
}

/// Full network on F=9, n=2, T=4; inputs are the parameters, units are fixed.
fn model_case(seed: u64) -> Result<GradCase> {
    let cfg = gradcheck_model_config();
    let store: ParamStore<f64> = cfg.init_params(seed)?;
    let names: Vec<String> = store.names().map(String::from).collect();
    let inputs: Vec<Tensor<f64>> = store.iter().map(|(_, t)| t.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1000));
    let units = Tensor::from_fn(&[1, 9, cfg.unit_size(), 4], |_| rng.gen_range(0.0..2.0));
    Ok(GradCase::new("model", inputs, move |g, t| {
        let mut store = ParamStore::new();
        for (name, value) in names.iter().zip(t) {
            store.insert(name.clone(), value.clone())?;
        }
        let u = g.input(units.clone());
        let y = forward_units(g, &store, &cfg, u)?;
        let vars = names.iter().map(|n| g.param(&store, n)).collect::<Result<_>>()?;
        Ok((y, vars))
    }))
}

/// Worst relative gradient error per case over `seeds` seeds.
pub fn gradient_checks(opts: &SuiteOptions) -> Result<Vec<CheckResult>> {
    let mut worst: Vec<(&'static str, f64)> = Vec::new();
    for seed in 0..opts.seeds {
        for (k, case) in grad_cases(seed)?.iter().enumerate() {
            let corrupt = opts.corrupt.as_deref() == Some(case.name);
            let err = case.check(seed, corrupt)?;
            if worst.len() <= k {
                worst.push((case.name, err));
            } else {
                worst[k].1 = worst[k].1.max(err);
            }
        }
    }
    Ok(worst.into_iter().map(|(name, err)| CheckResult::below(format!("grad {name}"), err, GRAD_TOLERANCE)).collect())
}

fn random_subinter(rng: &mut ChaCha8Rng, d: usize, h: usize) -> Result<ParamStore<f64>> {
    let shapes: [&[usize]; 6] = [&[d, h], &[h], &[h, h], &[h], &[2 * h, d], &[d]];
    let mut store = ParamStore::new();
    for (name, shape) in SUBINTER_NAMES.iter().zip(shapes) {
        store.insert(*name, rand_tensor(rng, shape, 1.0))?;
    }
    Ok(store)
}

fn permute_units(t: &Tensor<f64>, perm: &[usize]) -> Tensor<f64> {
    let unit = t.len() / perm.len();
    let mut data = Vec::with_capacity(t.len());
    for &i in perm {
        data.extend_from_slice(&t.data()[i * unit..(i + 1) * unit]);
    }
    Tensor::new(t.shape().to_vec(), data).expect("same length")
}

/// Max abs difference between permute-then-SubInter and SubInter-then-permute.
pub fn equivariance_check(cases: u64) -> Result<CheckResult> {
    let mut worst = 0.0f64;
    for seed in 0..cases {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (f, d, t, h) = (rng.gen_range(1..8), rng.gen_range(1..6), rng.gen_range(1..5), rng.gen_range(1..6));
        let store = random_subinter(&mut rng, d, h)?;
        let x = rand_tensor(&mut rng, &[f, d, t], 2.0);
        let mut perm: Vec<usize> = (0..f).collect();
        for i in (1..f).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let a = permute_units(&subinter_forward(&x, &store, "s")?, &perm);
        let b = subinter_forward(&permute_units(&x, &perm), &store, "s")?;
        worst = worst.max(a.max_abs_diff(&b));
    }
    Ok(CheckResult::below("subinter equivariance", worst, ORACLE_TOLERANCE))
}

/// Zero fusion map must reproduce the input bit for bit; measured is the count of differing entries.
pub fn residual_identity_check(cases: u64) -> Result<CheckResult> {
    let mut mismatches = 0usize;
    for seed in 0..cases {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 7919);
        let (f, d, t, h) = (rng.gen_range(1..8), rng.gen_range(1..6), rng.gen_range(1..5), rng.gen_range(1..6));
        let mut store = random_subinter(&mut rng, d, h)?;
        for name in ["s.p.weight", "s.p.bias"] {
            store.get_mut(name).expect("inserted").data_mut().fill(0.0);
        }
        let x = rand_tensor(&mut rng, &[f, d, t], 2.0);
        let y = subinter_forward(&x, &store, "s")?;
        mismatches += x.data().iter().zip(y.data()).filter(|(a, b)| a.to_bits() != b.to_bits()).count();
    }
    Ok(CheckResult::at_most("subinter residual identity", mismatches as f64, 0.0))
}

/// Relative reconstruction error over samples covered by two frames.
pub fn stft_round_trip_check(seeds: u64) -> Result<CheckResult> {
    let mut worst = 0.0f64;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = rng.gen_range(2000..6000);
        let x = AudioSignal::new((0..len).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
        let spec = stft(&x, crate::dsp::WIN_LEN, crate::dsp::HOP)?;
        let y = istft(&spec, len)?;
        let lo = spec.win_len() - spec.hop();
        let hi = spec.frames() * spec.hop();
        let (a, b) = (&x.samples()[lo..hi], &y.samples()[lo..hi]);
        worst = worst.max(relative_error(b, a));
    }
    Ok(CheckResult::below("stft round trip", worst, ORACLE_TOLERANCE))
}

fn random_spectrogram(rng: &mut ChaCha8Rng, bins: usize, frames: usize) -> Result<Spectrogram> {
    let data = (0..bins * frames).map(|_| Complex64::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0))).collect();
    Spectrogram::new(data, bins, frames, 32, 64)
}

/// `apply_mask(Y, ideal_cirm(Y, S))` against `S` where `|Y| > 1e-4`.
pub fn cirm_oracle_check(seeds: u64) -> Result<CheckResult> {
    let mut worst = 0.0f64;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (y, s) = (random_spectrogram(&mut rng, 33, 8)?, random_spectrogram(&mut rng, 33, 8)?);
        let est = apply_mask(&y, &ideal_cirm(&y, &s)?)?;
        for i in 0..y.data().len() {
            if y.data()[i].norm() > 1e-4 {
                let s_abs = s.data()[i].norm().max(1e-300);
                worst = worst.max((est.data()[i] - s.data()[i]).norm() / s_abs);
            }
        }
    }
    Ok(CheckResult::below("cirm oracle", worst, ORACLE_TOLERANCE))
}

pub fn compression_round_trip_check() -> CheckResult {
    let worst = (0..=10_000)
        .map(|i| -50.0 + i as f64 * 0.01)
        .map(|x| (decompress_value(compress_value(x)) - x).abs())
        .fold(0.0, f64::max);
    CheckResult::below("compression round trip", worst, ORACLE_TOLERANCE)
}

/// Accepted parameter-count ranges of the full-size variants.
pub const PARAM_RANGES: [(Variant, usize, usize); 3] = [
    (Variant::InterSubNet, 2_270_000, 2_310_000),
    (Variant::SubbandBaseline, 1_800_000, 1_840_000),
    (Variant::SubbandLarge, 2_980_000, 3_020_000),
];

/// Measured is the distance outside the accepted range (0 when inside).
pub fn parameter_audit() -> Vec<CheckResult> {
    PARAM_RANGES
        .iter()
        .map(|&(v, lo, hi)| {
            let count = ModelConfig::full(v).param_count();
            let outside = lo.saturating_sub(count) + count.saturating_sub(hi);
            CheckResult::at_most(format!("params {v} = {count}"), outside as f64, 0.0)
        })
        .collect()
}

pub fn run_suite(opts: &SuiteOptions) -> Result<Report> {
    let mut checks = gradient_checks(opts)?;
    checks.push(equivariance_check(opts.equivariance_cases)?);
    checks.push(residual_identity_check(opts.equivariance_cases)?);
    checks.push(stft_round_trip_check(5)?);
    checks.push(cirm_oracle_check(10)?);
    checks.push(compression_round_trip_check());
    checks.extend(parameter_audit());
    Ok(Report { checks })
}
