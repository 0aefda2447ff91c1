//! Build a cubic B-spline basis, evaluate it, and inspect the difference
//! penalty eigendecomposition used by the hypothesis mapping.

use betashape::bases::{decompose_penalty, difference_penalty, SplineBasis};

fn main() {
    let k_u = 30;
    let basis = SplineBasis::new(0.0, 1.0, k_u, 3).expect("basis");
    let grid: Vec<f64> = (0..11).map(|i| i as f64 / 10.0).collect();
    let b = basis.evaluate(&grid).expect("evaluate");
    println!("basis rows sum to one:");
    for (i, &t) in grid.iter().enumerate() {
        let s: f64 = b.row(i).iter().sum();
        println!("  t = {t:.1}  sum = {s:.12}");
    }

    for d in 0..=2usize {
        let pen = difference_penalty(k_u, d).expect("penalty");
        let dec = decompose_penalty(&pen, d).expect("decompose");
        println!(
            "d = {d}: rank {} of {k_u}, null-space columns {}, largest eigenvalue {:.4}",
            dec.lambda1.len(),
            dec.q2.ncols(),
            dec.lambda1[0]
        );
    }
}
