//! Generate synthetic curves and fit the FPCA decomposition: smoothed
//! covariance, eigenvalues, noise variance, and AIC-selected truncation.

use betashape::fpca::{fit_fpca, FpcaOptions};
use betashape::harness::{generate_dataset, SimConfig};

fn main() {
    let config = SimConfig {
        n: 300,
        ..SimConfig::default()
    };
    let data = generate_dataset(&config, 7).expect("dataset");
    let model = fit_fpca(&data, 0, &FpcaOptions::default()).expect("fpca");

    println!("selected K_x = {}", model.k_x);
    println!("noise variance = {:.4} (truth 0.05)", model.noise_var);
    println!("leading eigenvalues (truth 1, 0.5, 0.25, 0.125, 0.0625):");
    for j in 0..model.k_x.min(model.eigenvalues.len()) {
        println!("  lambda_{} = {:.4}", j + 1, model.eigenvalues[j]);
    }
}
