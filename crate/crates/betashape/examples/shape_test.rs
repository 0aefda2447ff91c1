//! Run all three coefficient-shape tests on one synthetic dataset whose
//! true coefficient is the constant 1: nullity should reject, the other
//! two should not.

use betashape::design::Hypothesis;
use betashape::harness::{generate_dataset, CoefficientSpec, SimConfig};
use betashape::vctest::{run_test, TestOptions};

fn main() {
    let config = SimConfig {
        n: 300,
        coefficient: CoefficientSpec::Scalar { delta: 1.0 },
        ..SimConfig::default()
    };
    let data = generate_dataset(&config, 123).expect("dataset");
    for hypothesis in [
        Hypothesis::Nullity,
        Hypothesis::Functionality,
        Hypothesis::Linearity,
    ] {
        let opts = TestOptions {
            n_null_draws: 2000,
            seed: 5,
            ..TestOptions::default()
        };
        let r = run_test(&data, hypothesis, &opts).expect("test");
        println!(
            "{:<13} stat = {:8.4}  p = {:.4}  (K_x = {}, lambda_hat = {:.3})",
            hypothesis.name(),
            r.statistic,
            r.p_value,
            r.k_x,
            r.lambda_hat
        );
    }
}
