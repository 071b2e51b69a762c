use mltp_core::optim::Milestone;
use mltp_core::{OptimizerKind, OptimizerSpec, OptimizerState, Precision, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const P: Precision = Precision::F64;

/// Runs `steps` updates on a 5-vector with pseudo-random gradients times `gain`.
fn trajectory(kind: OptimizerKind, gain: f64, steps: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut w = Tensor::from_vec(vec![0.5, -0.2, 1.0, 0.0, 3.0], P);
    let mut state = OptimizerState::new();
    let mut out = Vec::new();
    for _ in 0..steps {
        let g = Tensor::from_vec((0..5).map(|_| gain * rng.random_range(-1.0..1.0)).collect(), P);
        state.apply_update(&kind, [(&mut w, &g)], 0.01).unwrap();
        out.push(w.data().to_vec());
    }
    out
}

#[test]
fn momentum_with_zero_mu_is_plain_sgd_bitwise() {
    let a = trajectory(OptimizerKind::Momentum { mu: 0.0 }, 1.0, 50);
    let b = trajectory(OptimizerKind::Sgd, 1.0, 50);
    for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
        assert_eq!(x.to_bits(), y.to_bits());
    }
}

#[test]
fn heavy_ball_closed_form() {
    // constant gradient g: v_t = g (1 - mu^t) / (1 - mu), theta_t = theta_0 - lr * sum v
    let mu: f64 = 0.9;
    let mut w = Tensor::scalar(0.0, P);
    let g = Tensor::scalar(1.0, P);
    let mut state = OptimizerState::new();
    let mut expected = 0.0;
    for t in 1..=20 {
        state.apply_update(&OptimizerKind::Momentum { mu }, [(&mut w, &g)], 0.1).unwrap();
        expected -= 0.1 * (1.0 - mu.powi(t)) / (1.0 - mu);
        assert!((w.data()[0] - expected).abs() < 1e-12);
    }
    assert_eq!(state.step, 20);
}

#[test]
fn adam_is_invariant_to_gradient_scale() {
    let a = trajectory(OptimizerKind::adam(), 1.0, 100);
    let b = trajectory(OptimizerKind::adam(), 1000.0, 100);
    for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
        assert!((x - y).abs() < 1e-6, "{x} vs {y}");
    }
}

#[test]
fn adam_matches_a_reference_loop() {
    let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8, 0.01);
    let grads = [0.3, -1.2, 0.7, 0.05, -0.4];
    let mut w = Tensor::scalar(1.0, P);
    let mut state = OptimizerState::new();
    let (mut m, mut v, mut theta) = (0.0, 0.0, 1.0);
    for (t, &g) in grads.iter().enumerate() {
        state.apply_update(&OptimizerKind::adam(), [(&mut w, &Tensor::scalar(g, P))], lr).unwrap();
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let k = (t + 1) as i32;
        let mhat = m / (1.0 - b1.powi(k));
        let vhat = v / (1.0 - b2.powi(k));
        theta -= lr * mhat / (vhat.sqrt() + eps);
        assert!((w.data()[0] - theta).abs() < 1e-14);
    }
}

#[test]
fn single_precision_updates_are_rounded() {
    let mut w = Tensor::from_vec(vec![1.0], Precision::F32);
    let g = Tensor::from_vec(vec![1.0], Precision::F32);
    OptimizerState::new().apply_update(&OptimizerKind::Sgd, [(&mut w, &g)], 0.1).unwrap();
    assert_eq!(w.data()[0], 0.9f32 as f64);
}

#[test]
fn slot_count_must_stay_fixed() {
    let mut a = Tensor::scalar(1.0, P);
    let mut b = Tensor::scalar(1.0, P);
    let g = Tensor::scalar(1.0, P);
    let mut state = OptimizerState::new();
    state.apply_update(&OptimizerKind::Sgd, [(&mut a, &g)], 0.1).unwrap();
    assert!(state.apply_update(&OptimizerKind::Sgd, [(&mut a, &g), (&mut b, &g)], 0.1).is_err());
}

proptest! {
    #[test]
    fn learning_rate_never_increases(
        base in 1e-5f64..1.0,
        mut epochs in prop::collection::vec(1usize..200, 0..5),
        factors in prop::collection::vec(1e-3f64..=1.0, 5),
    ) {
        epochs.sort_unstable();
        epochs.dedup();
        let spec = OptimizerSpec {
            kind: OptimizerKind::Sgd,
            base_lr: base,
            schedule: epochs.iter().zip(&factors).map(|(&epoch, &factor)| Milestone { epoch, factor }).collect(),
        };
        prop_assert!(spec.validate().is_ok());
        let mut prev = spec.lr_at(0);
        prop_assert!(prev <= base);
        for e in 1..250 {
            let lr = spec.lr_at(e);
            prop_assert!(lr <= prev);
            prev = lr;
        }
    }
}
