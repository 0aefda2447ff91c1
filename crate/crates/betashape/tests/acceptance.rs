//! Acceptance suite: one test per criterion, each printing a single
//! PASS/FAIL line. Monte Carlo cells use fixed seeds so the whole suite is
//! deterministic. Oracles here are coded independently of the library
//! internals they check (dense restricted likelihood, explicit quadrature,
//! grid-scan REML optimum, bootstrap null refits).

use std::path::{Path, PathBuf};
use std::process::Command;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use betashape::bases::{decompose_penalty, difference_penalty, SplineBasis};
use betashape::design::{build_design, compute_j, Hypothesis};
use betashape::harness::{run_experiment, CoefficientSpec, ExperimentResult, SimConfig};
use betashape::pql::{pql_fit, PqlOptions, WorkingLmm};
use betashape::vctest::{simulate_rlrt_null, Method};
use betashape::Family;

fn report(idx: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("ACCEPTANCE CRITERION {idx} ({name}): {verdict} -- {detail}");
    assert!(pass, "criterion {idx} ({name}) failed: {detail}");
}

fn type_i_config(family: Family, m_i: Option<usize>, seed: u64) -> SimConfig {
    SimConfig {
        family,
        coefficient: CoefficientSpec::Scalar { delta: 0.0 },
        n: 100,
        m_i,
        replicates: 2000,
        n_null_draws: 1000,
        seed,
        ..SimConfig::default()
    }
}

fn type_i_rates(family: Family, band: (f64, f64), idx: u32, name: &str) {
    let mut detail = String::new();
    let mut pass = true;
    for (i, hyp) in [
        Hypothesis::Nullity,
        Hypothesis::Functionality,
        Hypothesis::Linearity,
    ]
    .into_iter()
    .enumerate()
    {
        let config = type_i_config(family, None, 7100 + idx as u64 * 10 + i as u64);
        let r = run_experiment(&config, Method::Arlrt, hyp).expect("type-I cell");
        let ok = r.rate >= band.0 && r.rate <= band.1;
        pass &= ok;
        detail.push_str(&format!(
            "{}: {:.4} (target [{}, {}], {} nonconverged) ",
            hyp.name(),
            r.rate,
            band.0,
            band.1,
            r.nonconverged
        ));
    }
    report(idx, name, pass, detail.trim());
}

#[test]
fn criterion_1_gaussian_type_i_error() {
    type_i_rates(
        Family::Gaussian,
        (0.035, 0.065),
        1,
        "gaussian type-I error at nominal 5%",
    );
}

#[test]
fn criterion_2_bernoulli_type_i_error() {
    type_i_rates(
        Family::Bernoulli,
        (0.028, 0.070),
        2,
        "bernoulli type-I error at nominal 5%",
    );
}

#[test]
fn criterion_3_power_shape() {
    const DELTAS: [f64; 3] = [0.5, 1.0, 2.0];
    let comb_se = |a: &ExperimentResult, b: &ExperimentResult| (a.se * a.se + b.se * b.se).sqrt();
    let mut pass = true;
    let mut detail = String::new();

    for family in [Family::Gaussian, Family::Bernoulli] {
        let mut by_n: Vec<Vec<ExperimentResult>> = Vec::new();
        for (ni, &n) in [100usize, 500].iter().enumerate() {
            let mut row = Vec::new();
            for (di, &delta) in DELTAS.iter().enumerate() {
                let config = SimConfig {
                    family,
                    coefficient: CoefficientSpec::Trig { delta },
                    n,
                    replicates: 400,
                    n_null_draws: 1000,
                    seed: 7300 + 100 * family as u64 + 10 * ni as u64 + di as u64,
                    ..SimConfig::default()
                };
                row.push(run_experiment(&config, Method::Arlrt, Hypothesis::Linearity).unwrap());
            }
            // power must be nondecreasing in delta up to Monte Carlo noise
            for w in row.windows(2) {
                if w[1].rate < w[0].rate - 2.0 * comb_se(&w[0], &w[1]) {
                    pass = false;
                    detail.push_str(&format!(
                        "{family:?} n={n}: power dropped {:.3} -> {:.3}; ",
                        w[0].rate, w[1].rate
                    ));
                }
            }
            by_n.push(row);
        }
        // power must not decrease with sample size, delta by delta
        for di in 0..DELTAS.len() {
            let (small, large) = (&by_n[0][di], &by_n[1][di]);
            if large.rate < small.rate - 2.0 * comb_se(small, large) {
                pass = false;
                detail.push_str(&format!(
                    "{family:?} delta={}: power(500)={:.3} < power(100)={:.3}; ",
                    DELTAS[di], large.rate, small.rate
                ));
            }
        }
        // aRLRT at least as powerful as aScore at the largest deviation
        let config = SimConfig {
            family,
            coefficient: CoefficientSpec::Trig {
                delta: DELTAS[DELTAS.len() - 1],
            },
            n: 100,
            replicates: 400,
            n_null_draws: 1000,
            seed: 7390 + family as u64,
            ..SimConfig::default()
        };
        let score = run_experiment(&config, Method::Ascore, Hypothesis::Linearity).unwrap();
        let rlrt = &by_n[0][DELTAS.len() - 1];
        if rlrt.rate < score.rate - 2.0 * comb_se(rlrt, &score) {
            pass = false;
            detail.push_str(&format!(
                "{family:?}: aRLRT {:.3} below aScore {:.3}; ",
                rlrt.rate, score.rate
            ));
        }
        detail.push_str(&format!(
            "{family:?} power(n=100) {:.3}/{:.3}/{:.3}, power(n=500) {:.3}/{:.3}/{:.3}; ",
            by_n[0][0].rate,
            by_n[0][1].rate,
            by_n[0][2].rate,
            by_n[1][0].rate,
            by_n[1][1].rate,
            by_n[1][2].rate
        ));
    }
    report(3, "power shape across delta, n, and methods", pass, detail.trim());
}

/// Tie-aware two-sample KS distance: compares the two ECDFs at every unique
/// pooled value, so atoms (here the mass at zero) are handled exactly.
fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|x, y| x.partial_cmp(y).unwrap());
    sb.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let mut pooled: Vec<f64> = sa.iter().chain(sb.iter()).copied().collect();
    pooled.sort_by(|x, y| x.partial_cmp(y).unwrap());
    pooled.dedup();
    let ecdf = |s: &[f64], v: f64| s.partition_point(|&x| x <= v) as f64 / s.len() as f64;
    pooled
        .iter()
        .map(|&v| (ecdf(&sa, v) - ecdf(&sb, v)).abs())
        .fold(0.0, f64::max)
}

#[test]
fn criterion_4_null_distribution_oracle() {
    let (n, p, k) = (60usize, 1usize, 10usize);
    let mut rng = ChaCha12Rng::seed_from_u64(7400);
    let x = DMatrix::from_element(n, p, 1.0);
    let z = DMatrix::from_fn(n, k, |_, _| rng.sample::<f64, _>(StandardNormal));

    // spectral simulation from the library
    let probe = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let lmm = WorkingLmm::new(&probe, &x, &z).unwrap();
    let mus = lmm.positive_eigs();
    let spectral = simulate_rlrt_null(&mus, n, p, 5000, 7401).unwrap();

    // oracle: brute-force REML refits of gaussian null data
    let mut refits = Vec::with_capacity(2000);
    for _ in 0..2000 {
        let y = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let fit = WorkingLmm::new(&y, &x, &z).unwrap().profile().unwrap();
        refits.push((2.0 * (fit.rel_at_opt - fit.rel_at_zero)).max(0.0));
    }

    let ks = ks_distance(&spectral, &refits);
    let mass = |s: &[f64]| s.iter().filter(|&&v| v == 0.0).count() as f64 / s.len() as f64;
    let mass_gap = (mass(&spectral) - mass(&refits)).abs();
    let pass = ks < 0.05 && mass_gap < 0.03;
    report(
        4,
        "spectral null simulation matches bootstrap REML refits",
        pass,
        &format!(
            "KS = {ks:.4} (< 0.05), zero-mass {:.3} vs {:.3} (gap {mass_gap:.4} < 0.03)",
            mass(&spectral),
            mass(&refits)
        ),
    );
}

/// Random working-LMM instance with varying size and signal strength.
fn random_lmm(rng: &mut ChaCha12Rng) -> (DVector<f64>, DMatrix<f64>, DMatrix<f64>) {
    let n = rng.gen_range(30..=200);
    let k = rng.gen_range(4..=12);
    let p = rng.gen_range(1..=3);
    let mut x = DMatrix::from_element(n, p, 1.0);
    for i in 0..n {
        for j in 1..p {
            x[(i, j)] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    let z = DMatrix::from_fn(n, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    let sigma_u = 10f64.powf(rng.gen_range(-2.0..1.0));
    let b = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let u = DVector::from_fn(k, |_, _| sigma_u * rng.sample::<f64, _>(StandardNormal));
    let e = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y = &x * b + &z * u + e;
    (y, x, z)
}

/// Dense-matrix restricted log-likelihood, coded without Woodbury tricks:
/// REL = -1/2 [ log|V| + log|X'V^-1X| + (n-p) log y'Py ] with V = I + l ZZ'.
fn rel_dense(y: &DVector<f64>, x: &DMatrix<f64>, z: &DMatrix<f64>, lambda: f64) -> f64 {
    let n = y.len();
    let p = x.ncols();
    let v = DMatrix::identity(n, n) + (z * z.transpose()) * lambda;
    let chol = nalgebra::Cholesky::new(v).unwrap();
    let logdet_v = 2.0 * (0..n).map(|i| chol.l()[(i, i)].ln()).sum::<f64>();
    let vinv_x = chol.solve(x);
    let vinv_y = chol.solve(y);
    let xvx = x.transpose() * &vinv_x;
    let xvx_chol = nalgebra::Cholesky::new(xvx.clone()).unwrap();
    let logdet_xvx = 2.0 * (0..p).map(|i| xvx_chol.l()[(i, i)].ln()).sum::<f64>();
    let xvy = x.transpose() * &vinv_y;
    let quad = (y.transpose() * &vinv_y)[(0, 0)] - (xvy.transpose() * xvx_chol.solve(&xvy))[(0, 0)];
    -0.5 * (logdet_v + logdet_xvx + (n - p) as f64 * quad.ln())
}

#[test]
fn criterion_5_reml_optimizer_oracle() {
    let mut rng = ChaCha12Rng::seed_from_u64(7500);
    let mut worst_gap: f64 = 0.0;
    let mut worst_dense: f64 = 0.0;
    for _ in 0..50 {
        let (y, x, z) = random_lmm(&mut rng);
        let lmm = WorkingLmm::new(&y, &x, &z).unwrap();
        let fit = lmm.profile().unwrap();

        // oracle: 2001-point log grid plus lambda = 0, refined by ternary
        // search between the grid argmax's neighbors
        let logs: Vec<f64> = (0..2001).map(|i| -8.0 + 16.0 * i as f64 / 2000.0).collect();
        let vals: Vec<f64> = logs.iter().map(|&l| lmm.rel(10f64.powf(l))).collect();
        let argmax = vals
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        let (mut lo, mut hi) = (
            logs[argmax.saturating_sub(1)],
            logs[(argmax + 1).min(logs.len() - 1)],
        );
        for _ in 0..200 {
            let m1 = lo + (hi - lo) / 3.0;
            let m2 = hi - (hi - lo) / 3.0;
            if lmm.rel(10f64.powf(m1)) < lmm.rel(10f64.powf(m2)) {
                lo = m1;
            } else {
                hi = m2;
            }
        }
        let oracle = lmm
            .rel(0.0)
            .max(lmm.rel(10f64.powf(0.5 * (lo + hi))))
            .max(vals[argmax]);
        worst_gap = worst_gap.max((fit.rel_at_opt - oracle).abs());

        // dense-formula cross-check at a few lambdas
        for lambda in [0.0, 0.31, 1.0, 27.0] {
            let gap = (lmm.rel(lambda) - rel_dense(&y, &x, &z, lambda)).abs();
            worst_dense = worst_dense.max(gap);
        }
    }
    let pass = worst_gap < 1e-6 && worst_dense < 1e-8;
    report(
        5,
        "profiled REML optimum matches grid-scan oracle",
        pass,
        &format!(
            "max |REL_opt - oracle| = {worst_gap:.2e} (< 1e-6), max dense-formula gap = {worst_dense:.2e} (< 1e-8) over 50 instances"
        ),
    );
}

#[test]
fn criterion_6_gaussian_pql_equals_direct_reml() {
    let mut rng = ChaCha12Rng::seed_from_u64(7600);
    let grid: Vec<f64> = (0..60).map(|i| i as f64 / 59.0).collect();
    let basis = SplineBasis::new(0.0, 1.0, 12, 3).unwrap();
    let pen = decompose_penalty(&difference_penalty(12, 1).unwrap(), 1).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let k_x = rng.gen_range(2..=4);
        let psi = DMatrix::from_fn(grid.len(), k_x, |t, j| {
            let f = (j + 1) as f64;
            0.3 + (std::f64::consts::PI * f * grid[t]).cos()
        });
        let j = compute_j(&psi, &basis, &grid).unwrap();
        let n = rng.gen_range(40..=120);
        let xi = DMatrix::from_fn(n, k_x, |_, _| rng.sample::<f64, _>(StandardNormal));
        let design = build_design(&xi, &j, &pen, Hypothesis::Functionality).unwrap();
        let y = DVector::from_fn(n, |i, _| {
            design.z.row(i).sum() * 0.4 + rng.sample::<f64, _>(StandardNormal)
        });

        let pql = pql_fit(&design, &y, Family::Gaussian, None, PqlOptions::default()).unwrap();
        let lmm = WorkingLmm::new(&y, &design.x, &design.z).unwrap();
        let reml = lmm.profile().unwrap();
        let (beta, _) = lmm.effects(reml.lambda_hat).unwrap();

        worst = worst.max((pql.lambda_hat - reml.lambda_hat).abs());
        worst = worst.max((pql.sigma2_e - reml.sigma2_e).abs());
        for c in 0..beta.len() {
            worst = worst.max((pql.beta_hat[c] - beta[c]).abs());
        }
        assert_eq!(pql.iterations, 1);
        assert!(pql.converged);
    }
    report(
        6,
        "gaussian PQL reduces to one direct REML fit",
        worst < 1e-8,
        &format!("max |PQL - REML| over lambda, sigma2_e, beta = {worst:.2e} (< 1e-8), 20 instances"),
    );
}

#[test]
fn criterion_7_design_building_blocks() {
    let basis = SplineBasis::new(0.0, 1.0, 30, 3).unwrap();
    let mut detail = String::new();
    let mut pass = true;

    // J against an explicitly coded trapezoid quadrature on a 10,000-point grid
    let fine: Vec<f64> = (0..10_000).map(|i| i as f64 / 9999.0).collect();
    let tau = 2.0 * std::f64::consts::PI;
    let psi = DMatrix::from_fn(fine.len(), 3, |t, j| match j {
        0 => 1.0,
        1 => 2f64.sqrt() * (tau * fine[t]).sin(),
        _ => 2f64.sqrt() * (tau * 2.0 * fine[t]).cos(),
    });
    let j = compute_j(&psi, &basis, &fine).unwrap();
    let mut worst_rel: f64 = 0.0;
    for kk in 0..3 {
        for l in 0..30 {
            let mut acc = 0.0;
            let mut prev = psi[(0, kk)] * basis.eval_point(fine[0]).unwrap()[l];
            for t in 1..fine.len() {
                let cur = psi[(t, kk)] * basis.eval_point(fine[t]).unwrap()[l];
                acc += 0.5 * (prev + cur) * (fine[t] - fine[t - 1]);
                prev = cur;
            }
            let denom = acc.abs().max(1e-3);
            worst_rel = worst_rel.max((j[(kk, l)] - acc).abs() / denom);
        }
    }
    if worst_rel >= 1e-6 {
        pass = false;
    }
    detail.push_str(&format!("J quadrature rel err {worst_rel:.2e} (< 1e-6); "));

    // partition of unity
    let mut worst_pu: f64 = 0.0;
    for i in 0..=1000 {
        let t = i as f64 / 1000.0;
        let s: f64 = basis.eval_point(t).unwrap().iter().sum();
        worst_pu = worst_pu.max((s - 1.0).abs());
    }
    if worst_pu >= 1e-10 {
        pass = false;
    }
    detail.push_str(&format!("partition-of-unity err {worst_pu:.2e} (< 1e-10); "));

    // penalty null-space dimension is exactly d
    for d in 0..=2usize {
        let pen = decompose_penalty(&difference_penalty(30, d).unwrap(), d).unwrap();
        let rank_ok = pen.lambda1.len() == 30 - d
            && pen.q2.ncols() == d
            && pen.lambda1.iter().all(|&l| l > 0.0);
        if !rank_ok {
            pass = false;
        }
        detail.push_str(&format!(
            "d={d}: rank {} null dim {}; ",
            pen.lambda1.len(),
            pen.q2.ncols()
        ));
    }
    report(7, "basis, quadrature, and penalty invariants", pass, detail.trim());
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

#[test]
fn criterion_8_cli_determinism() {
    let curves = fixture("null_curves.csv");
    let response = fixture("null_response.csv");
    let run_test_cmd = || {
        Command::new(env!("CARGO_BIN_EXE_betashape"))
            .args([
                "test",
                curves.to_str().unwrap(),
                response.to_str().unwrap(),
                "--hypothesis",
                "functionality",
                "--seed",
                "42",
                "--null-draws",
                "1000",
            ])
            .output()
            .unwrap()
    };
    let a = run_test_cmd();
    let b = run_test_cmd();
    let test_ok = a.status.success() && a.stdout == b.stdout;

    let tmp1 = tempfile::tempdir().unwrap();
    let tmp2 = tempfile::tempdir().unwrap();
    let config_path = tmp1.path().join("grid.cfg");
    std::fs::write(
        &config_path,
        "family = gaussian\ncoefficient = scalar\ndelta = 0.0, 1.0\nn = 40\n\
         hypothesis = nullity\nmethod = aRLRT\ngrid_size = 30\nreplicates = 8\n\
         null_draws = 200\nseed = 13\n",
    )
    .unwrap();
    for (dir, threads) in [(&tmp1, "1"), (&tmp2, "2")] {
        let out = Command::new(env!("CARGO_BIN_EXE_betashape"))
            .args([
                "simulate",
                config_path.to_str().unwrap(),
                "--out-dir",
                dir.path().to_str().unwrap(),
                "--threads",
                threads,
            ])
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let sim_ok = ["results.csv", "results.json"].iter().all(|name| {
        std::fs::read(tmp1.path().join(name)).unwrap()
            == std::fs::read(tmp2.path().join(name)).unwrap()
    });
    report(
        8,
        "CLI output byte-identical across runs and thread counts",
        test_ok && sim_ok,
        &format!("test repeat identical: {test_ok}; simulate 1 vs 2 threads identical: {sim_ok}"),
    );
}

#[test]
fn criterion_9_sparse_bernoulli() {
    let null_config = SimConfig {
        family: Family::Bernoulli,
        coefficient: CoefficientSpec::Scalar { delta: 0.0 },
        n: 100,
        m_i: Some(10),
        replicates: 1000,
        n_null_draws: 1000,
        seed: 7900,
        ..SimConfig::default()
    };
    let null = run_experiment(&null_config, Method::Arlrt, Hypothesis::Nullity).unwrap();
    let null_ok = null.rate >= 0.02 && null.rate <= 0.08;

    let power_at = |m_i: Option<usize>, seed: u64| {
        let config = SimConfig {
            family: Family::Bernoulli,
            coefficient: CoefficientSpec::Scalar { delta: 1.0 },
            n: 100,
            m_i,
            replicates: 400,
            n_null_draws: 1000,
            seed,
            ..SimConfig::default()
        };
        run_experiment(&config, Method::Arlrt, Hypothesis::Nullity).unwrap()
    };
    let sparse = power_at(Some(10), 7910);
    let dense = power_at(None, 7911);
    let comb_se = (sparse.se * sparse.se + dense.se * dense.se).sqrt();
    let power_ok = sparse.rate <= dense.rate + 2.0 * comb_se;
    report(
        9,
        "sparse-sampling bernoulli level and power ordering",
        null_ok && power_ok,
        &format!(
            "null rate {:.4} in [0.02, 0.08]; power sparse {:.3} <= dense {:.3} + 2SE",
            null.rate, sparse.rate, dense.rate
        ),
    );
}
