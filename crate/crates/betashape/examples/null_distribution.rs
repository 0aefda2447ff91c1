//! Simulate the finite-sample RLRT null distribution for a toy working
//! design and print its atom at zero and upper quantiles.

use betashape::vctest::simulate_rlrt_null;

fn main() {
    // typical spectrum shape: geometrically decaying eigenvalues
    let mus: Vec<f64> = (0..10).map(|s| 20.0 * 0.5f64.powi(s)).collect();
    let draws = simulate_rlrt_null(&mus, 100, 1, 20_000, 42).expect("null draws");

    let mut sorted = draws.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let zero = sorted.iter().filter(|&&v| v == 0.0).count() as f64 / sorted.len() as f64;
    println!("mass at zero = {zero:.3}");
    for q in [0.5, 0.90, 0.95, 0.99] {
        let idx = ((q * sorted.len() as f64) as usize).min(sorted.len() - 1);
        println!("q{:<4} = {:.4}", (q * 100.0) as u32, sorted[idx]);
    }
}
