//! Checks the network engine against an independent scalar `f64`
//! reimplementation of the forward pass, and its gradients against central
//! finite differences taken on that reimplementation.

mod support;

use fedtracker::nn::Mode;
use support::{max_fd_error, random_case, rows64, RefNet};

#[test]
fn forward_matches_scalar_reference() {
    for seed in 0..5 {
        let (mut model, x, _) = random_case(seed, &[16, 12, 8], 9);
        let reference = RefNet::from_model(&model);
        let xs = rows64(&x);
        for train in [true, false] {
            model.set_mode(if train { Mode::Train } else { Mode::Eval });
            let snapshot = model.clone();
            let got = model.forward(&x).unwrap();
            model = snapshot;
            let (want, _) = reference.forward(&xs, train);
            for r in 0..x.rows() {
                for c in 0..got.cols() {
                    let (a, b) = (got.get(r, c) as f64, want[r][c]);
                    assert!(
                        (a - b).abs() <= 1e-5 * b.abs().max(1.0),
                        "seed {seed} train {train}: {a} vs {b}"
                    );
                }
            }
        }
    }
}

#[test]
fn gradients_match_finite_differences_train_mode() {
    for seed in 0..20 {
        let (model, x, y) = random_case(100 + seed, &[8, 8], 6);
        let (err, checked) = max_fd_error(&model, &x, &y, true);
        assert!(checked > 100, "seed {seed}: only {checked} entries checked");
        assert!(err <= 1e-4, "seed {seed}: max relative error {err:e}");
    }
}

#[test]
fn gradients_match_finite_differences_frozen_and_eval() {
    for seed in 0..5 {
        let (mut model, x, y) = random_case(200 + seed, &[8, 8], 6);
        model.set_bn_frozen(true);
        let (err, _) = max_fd_error(&model, &x, &y, true);
        assert!(err <= 1e-4, "frozen seed {seed}: {err:e}");
        model.set_bn_frozen(false);
        model.set_mode(Mode::Eval);
        let (err, _) = max_fd_error(&model, &x, &y, false);
        assert!(err <= 1e-4, "eval seed {seed}: {err:e}");
    }
}
