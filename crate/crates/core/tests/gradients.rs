// SPDX-License-Identifier: MIT OR Apache-2.0

mod common;

#[test]
fn transformer_gradients_match_central_differences() {
    for seed in [1, 2] {
        let err = common::model_grad_max_rel_err(seed);
        assert!(err < 1e-4, "seed {seed}: max relative error {err:e}");
    }
}

#[test]
fn probe_gradients_match_central_differences() {
    for seed in [3, 4, 5] {
        let err = common::probe_grad_max_rel_err(seed);
        assert!(err < 1e-4, "seed {seed}: max relative error {err:e}");
    }
}
