//! Small power sweep for the linearity test: trigonometric deviation of
//! growing size, aRLRT vs aScore.

use betashape::design::Hypothesis;
use betashape::harness::{run_experiment, CoefficientSpec, SimConfig};
use betashape::vctest::Method;

fn main() {
    for method in [Method::Arlrt, Method::Ascore] {
        println!("{}:", method.name());
        for &delta in &[0.0, 1.0, 2.0, 4.0] {
            let config = SimConfig {
                n: 100,
                replicates: 100,
                n_null_draws: 500,
                coefficient: CoefficientSpec::Trig { delta },
                seed: 31,
                ..SimConfig::default()
            };
            let r = run_experiment(&config, method, Hypothesis::Linearity).expect("cell");
            println!(
                "  delta = {delta:>3}: power = {:.3} +/- {:.3} ({} nonconverged)",
                r.rate, r.se, r.nonconverged
            );
        }
    }
}
