use intersubnet::model::Variant;
use intersubnet::train::{train, TrainConfig, LOSS_SMOOTHING};

/// Running average recomputed from the raw losses, independent of the trainer's bookkeeping.
fn smoothed(losses: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(losses.len());
    for (i, &l) in losses.iter().enumerate() {
        let prev = if i == 0 { l } else { out[i - 1] };
        out.push(prev + LOSS_SMOOTHING * (l - prev));
    }
    out
}

#[test]
fn toy_model_halves_its_smoothed_loss_in_300_steps() {
    let mut cfg = TrainConfig::toy(Variant::InterSubNet, 1);
    cfg.steps = 300;
    let (state, losses) = train(cfg).unwrap();
    assert_eq!(losses.len(), 300);
    assert!(losses.iter().all(|l| l.is_finite()));
    let curve = smoothed(&losses);
    assert!((curve[299] - state.running_loss).abs() < 1e-9 * state.running_loss.max(1.0));
    assert!(curve[299] < 0.5 * curve[0], "initial {} final {}", curve[0], curve[299]);
}
