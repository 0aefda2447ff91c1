//! Functional principal component analysis for possibly sparse, noisy
//! curves: mean and covariance smoothing, spectral decomposition, score
//! estimation, and AIC selection of the truncation.

use nalgebra::{DMatrix, DVector};

use crate::bases::{difference_penalty, SplineBasis};
use crate::data::FunctionalDataset;
use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone)]
pub struct FpcaOptions {
    /// Force the truncation instead of selecting it by AIC.
    pub kx_override: Option<usize>,
    /// Upper bound of the AIC candidate scan.
    pub max_k_aic: usize,
    /// Marginal basis size for mean smoothing.
    pub mean_num_basis: usize,
    /// Marginal basis size for the tensor-product covariance smoother.
    pub cov_num_basis: usize,
}

impl Default for FpcaOptions {
    fn default() -> Self {
        Self {
            kx_override: None,
            max_k_aic: 20,
            mean_num_basis: 15,
            cov_num_basis: 10,
        }
    }
}

/// Fitted FPCA state. Eigenfunctions are orthonormal with respect to the
/// trapezoidal quadrature rule on `grid`.
#[derive(Debug, Clone)]
pub struct FpcaModel {
    pub grid: Vec<f64>,
    pub mean: Vec<f64>,
    /// All retained (strictly positive) eigenvalues, descending.
    pub eigenvalues: DVector<f64>,
    /// m x (number of retained eigenvalues).
    pub eigenfunctions: DMatrix<f64>,
    pub noise_var: f64,
    /// n x k_x score matrix.
    pub scores: DMatrix<f64>,
    pub k_x: usize,
}

/// Raw and smoothed covariance plus the noise split.
#[derive(Debug, Clone)]
pub struct CovarianceEstimate {
    pub smoothed: DMatrix<f64>,
    pub sigma2_x: f64,
    /// Pooled raw variance of centered observations at each grid point.
    pub raw_diag: Vec<f64>,
}

const GCV_LAMBDA_GRID: [f64; 11] = [
    1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3, 1e4,
];

/// Penalized B-spline smooth of pooled observations; returns fitted values
/// on the common grid. The smoothing parameter is chosen by GCV.
fn smooth_pooled(
    grid: &[f64],
    counts: &[f64],
    means: &[f64],
    ss_within: f64,
    num_basis: usize,
) -> Result<Vec<f64>> {
    let m = grid.len();
    let kb = num_basis.min(m).max(4);
    let basis = SplineBasis::new(grid[0], grid[m - 1], kb, 3)?;
    let b = basis.evaluate(grid)?;
    let pen = difference_penalty(kb, 2)?;
    // normalize weights by their mean so the GCV choice is invariant to
    // replicating the whole sample
    let occ = counts.iter().filter(|&&c| c > 0.0).count().max(1) as f64;
    let wbar = counts.iter().sum::<f64>() / occ;
    let ss_within = ss_within / wbar.max(1e-300);
    // weighted cross-products over observed grid points
    let mut btwb = DMatrix::zeros(kb, kb);
    let mut btwy = DVector::zeros(kb);
    let mut ywy = 0.0;
    let mut n_obs = 0.0;
    for t in 0..m {
        if counts[t] <= 0.0 {
            continue;
        }
        let w = counts[t] / wbar;
        n_obs += w;
        let row = b.row(t);
        for j in 0..kb {
            btwy[j] += w * means[t] * row[j];
            for l in j..kb {
                btwb[(j, l)] += w * row[j] * row[l];
            }
        }
        ywy += w * means[t] * means[t];
    }
    for j in 0..kb {
        for l in 0..j {
            btwb[(j, l)] = btwb[(l, j)];
        }
    }
    let mut best = (f64::INFINITY, DVector::zeros(kb));
    for &lam in &GCV_LAMBDA_GRID {
        let a_mat = &btwb + &pen * lam;
        let chol = match nalgebra::Cholesky::new(a_mat) {
            Some(c) => c,
            None => continue,
        };
        let coef = chol.solve(&btwy);
        // edf = tr((B'WB + lam P)^-1 B'WB)
        let inv_bt = chol.solve(&btwb);
        let edf: f64 = (0..kb).map(|i| inv_bt[(i, i)]).sum();
        let rss_point = ywy - 2.0 * coef.dot(&btwy) + (&btwb * &coef).dot(&coef);
        let rss = rss_point.max(0.0) + ss_within;
        let denom = (n_obs - edf).max(1e-8);
        let gcv = n_obs * rss / (denom * denom);
        if gcv < best.0 {
            best = (gcv, coef);
        }
    }
    if !best.0.is_finite() {
        return Err(Error::OptimizationFailed("mean smoothing GCV failed".into()));
    }
    let fit = &b * &best.1;
    Ok(fit.iter().copied().collect())
}

/// Smooth mean curve on the common grid. Returns the zero vector when the
/// dataset is flagged pre-centered.
pub fn estimate_mean(data: &FunctionalDataset) -> Result<Vec<f64>> {
    let m = data.grid_len();
    if data.pre_centered {
        return Ok(vec![0.0; m]);
    }
    let mut counts = vec![0.0; m];
    let mut sums = vec![0.0; m];
    let mut sumsq = vec![0.0; m];
    for s in &data.subjects {
        for (&gi, &x) in s.grid_idx.iter().zip(&s.values) {
            counts[gi] += 1.0;
            sums[gi] += x;
            sumsq[gi] += x * x;
        }
    }
    // grid points must lie inside the observed range; interior gaps are
    // handled by the smoother
    let first_obs = counts.iter().position(|&c| c > 0.0);
    let last_obs = counts.iter().rposition(|&c| c > 0.0);
    let (lo, hi) = match (first_obs, last_obs) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::InvalidDataset("no observations".into())),
    };
    if lo != 0 || hi != m - 1 {
        let gap = if lo != 0 { data.common_grid[0] } else { data.common_grid[m - 1] };
        return Err(Error::CoverageGap(
            gap,
            data.common_grid[lo],
            data.common_grid[hi],
        ));
    }
    let mut means = vec![0.0; m];
    let mut ss_within = 0.0;
    for t in 0..m {
        if counts[t] > 0.0 {
            means[t] = sums[t] / counts[t];
            ss_within += sumsq[t] - counts[t] * means[t] * means[t];
        }
    }
    smooth_pooled(&data.common_grid, &counts, &means, ss_within.max(0.0), 15)
}

/// Raw pooled covariance (within-subject off-diagonal pairs only) followed
/// by a tensor-product penalized B-spline smooth with GCV, symmetrized.
pub fn estimate_covariance(
    data: &FunctionalDataset,
    mu: &[f64],
) -> Result<CovarianceEstimate> {
    let m = data.grid_len();
    let n = data.num_subjects();
    if n < 2 {
        return Err(Error::InvalidDataset(
            "covariance estimation needs at least 2 subjects".into(),
        ));
    }
    if mu.len() != m {
        return Err(Error::DimensionMismatch("mean/grid length mismatch".into()));
    }

    // accumulate raw off-diagonal products and the raw diagonal
    let mut pair_sum = DMatrix::<f64>::zeros(m, m);
    let mut pair_cnt = DMatrix::<f64>::zeros(m, m);
    let mut diag_sum = vec![0.0; m];
    let mut diag_cnt = vec![0.0; m];
    for s in &data.subjects {
        let mi = s.num_obs();
        let r: Vec<f64> = s
            .grid_idx
            .iter()
            .zip(&s.values)
            .map(|(&g, &x)| x - mu[g])
            .collect();
        for j in 0..mi {
            let gj = s.grid_idx[j];
            diag_sum[gj] += r[j] * r[j];
            diag_cnt[gj] += 1.0;
            for k in j + 1..mi {
                let gk = s.grid_idx[k];
                let v = r[j] * r[k];
                pair_sum[(gj, gk)] += v;
                pair_cnt[(gj, gk)] += 1.0;
            }
        }
    }
    let raw_diag: Vec<f64> = (0..m)
        .map(|t| if diag_cnt[t] > 0.0 { diag_sum[t] / diag_cnt[t] } else { 0.0 })
        .collect();

    // marginal basis for the tensor-product smoother
    let kc = FpcaOptions::default().cov_num_basis.min(m).max(4);
    let basis = SplineBasis::new(data.common_grid[0], data.common_grid[m - 1], kc, 3)?;
    let b = basis.evaluate(&data.common_grid)?;
    // nonzero (index, value) pairs of each basis row; cubic rows have <= 4
    let nz: Vec<Vec<(usize, f64)>> = (0..m)
        .map(|t| {
            (0..kc)
                .filter(|&j| b[(t, j)] != 0.0)
                .map(|j| (j, b[(t, j)]))
                .collect()
        })
        .collect();

    let q = kc * kc;
    // mean cell weight, for replication-invariant GCV weighting
    let mut w_total = 0.0;
    let mut occ = 0usize;
    for a in 0..m {
        for bb in a + 1..m {
            if pair_cnt[(a, bb)] > 0.0 {
                w_total += pair_cnt[(a, bb)];
                occ += 1;
            }
        }
    }
    let wbar = if occ > 0 { w_total / occ as f64 } else { 1.0 };
    let mut gram = DMatrix::<f64>::zeros(q, q);
    let mut rhs = DVector::<f64>::zeros(q);
    let mut ywy = 0.0;
    let mut n_cells = 0usize;
    let mut row_idx = Vec::with_capacity(16);
    let mut row_val = Vec::with_capacity(16);
    for s in 0..m {
        for t in 0..m {
            if s == t {
                continue;
            }
            let (a, bb) = if s < t { (s, t) } else { (t, s) };
            if pair_cnt[(a, bb)] <= 0.0 {
                continue;
            }
            let v = pair_sum[(a, bb)] / pair_cnt[(a, bb)];
            let w = pair_cnt[(a, bb)] / wbar;
            n_cells += 1;
            row_idx.clear();
            row_val.clear();
            for &(j, bj) in &nz[s] {
                for &(l, bl) in &nz[t] {
                    row_idx.push(j * kc + l);
                    row_val.push(bj * bl);
                }
            }
            for (ri, &ii) in row_idx.iter().enumerate() {
                let wv = w * row_val[ri];
                rhs[ii] += wv * v;
                for (rj, &jj) in row_idx.iter().enumerate() {
                    gram[(ii, jj)] += wv * row_val[rj];
                }
            }
            ywy += w * v * v;
        }
    }
    if n_cells < q {
        return Err(Error::InsufficientPairs {
            observed: n_cells,
            required: q,
        });
    }

    // penalty P (x) I + I (x) P, second-order differences on each margin
    let pmarg = difference_penalty(kc, 2)?;
    let eye = DMatrix::<f64>::identity(kc, kc);
    let mut s_pen = DMatrix::<f64>::zeros(q, q);
    for a in 0..kc {
        for bb in 0..kc {
            for c in 0..kc {
                for d in 0..kc {
                    s_pen[(a * kc + bb, c * kc + d)] =
                        pmarg[(a, c)] * eye[(bb, d)] + eye[(a, c)] * pmarg[(bb, d)];
                }
            }
        }
    }

    // simultaneous diagonalization of (G, S): G + eps I = L L^T,
    // M = L^-1 S L^-T = V diag(theta) V^T
    let gmax = (0..q).map(|i| gram[(i, i)]).fold(0.0f64, f64::max).max(1.0);
    let mut greg = gram.clone();
    for i in 0..q {
        greg[(i, i)] += 1e-10 * gmax;
    }
    let chol_g = nalgebra::Cholesky::new(greg)
        .ok_or_else(|| Error::OptimizationFailed("covariance Gram factorization failed".into()))?;
    let l = chol_g.l();
    let linv_s = l.clone().solve_lower_triangular(&s_pen).ok_or_else(|| {
        Error::OptimizationFailed("triangular solve failed in covariance smoother".into())
    })?;
    let m_pencil = l
        .clone()
        .solve_lower_triangular(&linv_s.transpose())
        .ok_or_else(|| {
            Error::OptimizationFailed("triangular solve failed in covariance smoother".into())
        })?;
    let m_sym = (&m_pencil + m_pencil.transpose()) * 0.5;
    let (theta, v_pencil) = linalg::sym_eigen_desc(&m_sym)?;
    let linv_rhs = l.clone().solve_lower_triangular(&rhs).ok_or_else(|| {
        Error::OptimizationFailed("triangular solve failed in covariance smoother".into())
    })?;
    let c0 = v_pencil.transpose() * linv_rhs;

    let mut best: (f64, Option<DVector<f64>>) = (f64::INFINITY, None);
    for &lam in &GCV_LAMBDA_GRID {
        let scaled = DVector::from_fn(q, |i, _| c0[i] / (1.0 + lam * theta[i].max(0.0)));
        let back = &v_pencil * scaled;
        let coef = l
            .transpose()
            .solve_upper_triangular(&back)
            .unwrap_or_else(|| DVector::zeros(q));
        let rss = (ywy - 2.0 * coef.dot(&rhs) + (&gram * &coef).dot(&coef)).max(0.0);
        let edf: f64 = (0..q).map(|i| 1.0 / (1.0 + lam * theta[i].max(0.0))).sum();
        let nc = n_cells as f64;
        let denom = (nc - edf).max(1e-8);
        let gcv = nc * rss / (denom * denom);
        if gcv < best.0 {
            best = (gcv, Some(coef));
        }
    }
    let coef = best
        .1
        .ok_or_else(|| Error::OptimizationFailed("covariance GCV failed".into()))?;
    let a_mat = DMatrix::from_fn(kc, kc, |j, lix| coef[j * kc + lix]);
    let smooth = &b * a_mat * b.transpose();
    let smooth = (&smooth + smooth.transpose()) * 0.5;

    // noise split: average excess of the raw diagonal over the smooth one
    let w = linalg::trapezoid_weights(&data.common_grid);
    let span: f64 = w.iter().sum();
    let mut excess = 0.0;
    for t in 0..m {
        excess += w[t] * (raw_diag[t] - smooth[(t, t)]);
    }
    let sigma2_x = (excess / span).max(0.0);

    Ok(CovarianceEstimate {
        smoothed: smooth,
        sigma2_x,
        raw_diag,
    })
}

/// Quadrature-weighted spectral decomposition of a covariance matrix.
/// Negative eigenvalues are dropped; eigenfunctions satisfy
/// ∫ psi_j psi_k = delta_jk under the trapezoidal rule.
pub fn eigen_decompose(
    cov: &DMatrix<f64>,
    grid: &[f64],
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let m = grid.len();
    if cov.nrows() != m || cov.ncols() != m {
        return Err(Error::DimensionMismatch("covariance/grid mismatch".into()));
    }
    let scale = cov.abs().max().max(1e-300);
    let asym = linalg::max_asymmetry(cov);
    if asym > 1e-8 * scale {
        return Err(Error::NotSymmetric(asym));
    }
    let w = linalg::trapezoid_weights(grid);
    let ws: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
    let weighted = DMatrix::from_fn(m, m, |i, j| ws[i] * cov[(i, j)] * ws[j]);
    let (vals, vecs) = linalg::sym_eigen_desc(&weighted)?;
    let vmax = vals[0].max(0.0);
    let n_pos = vals.iter().filter(|&&v| v > 1e-12 * vmax && v > 0.0).count();
    let lambda = vals.rows(0, n_pos).clone_owned();
    let mut psi = DMatrix::zeros(m, n_pos);
    for k in 0..n_pos {
        let mut col = DVector::from_fn(m, |i, _| vecs[(i, k)] / ws[i]);
        linalg::fix_sign(&mut col);
        psi.set_column(k, &col);
    }
    Ok((lambda, psi))
}

/// Scores for the first `k` components. Dense subjects use quadrature
/// integration; sparse subjects use the BLUP conditional expectation on
/// their own observed points.
pub fn estimate_scores(
    data: &FunctionalDataset,
    mu: &[f64],
    lambda: &DVector<f64>,
    psi: &DMatrix<f64>,
    sigma2_x: f64,
    k: usize,
) -> Result<DMatrix<f64>> {
    if k > lambda.len() {
        return Err(Error::TooFewComponents {
            required: k,
            available: lambda.len(),
        });
    }
    let m = data.grid_len();
    let n = data.num_subjects();
    let w = linalg::trapezoid_weights(&data.common_grid);
    let mut scores = DMatrix::zeros(n, k);
    for (i, s) in data.subjects.iter().enumerate() {
        let mi = s.num_obs();
        let centered: Vec<f64> = s
            .grid_idx
            .iter()
            .zip(&s.values)
            .map(|(&g, &x)| x - mu[g])
            .collect();
        if mi == m {
            for kk in 0..k {
                let mut acc = 0.0;
                for t in 0..m {
                    acc += w[t] * centered[t] * psi[(t, kk)];
                }
                scores[(i, kk)] = acc;
            }
        } else {
            // BLUP: Lambda Psi_i^T (Psi_i Lambda Psi_i^T + sigma2 I)^-1 r_i
            let sig = sigma2_x.max(1e-12);
            let psi_i = DMatrix::from_fn(mi, k, |r, c| psi[(s.grid_idx[r], c)]);
            let lam_k = DVector::from_fn(k, |j, _| lambda[j]);
            let mut cov_i = DMatrix::zeros(mi, mi);
            for a in 0..mi {
                for b in a..mi {
                    let mut acc = 0.0;
                    for j in 0..k {
                        acc += lam_k[j] * psi_i[(a, j)] * psi_i[(b, j)];
                    }
                    cov_i[(a, b)] = acc;
                    cov_i[(b, a)] = acc;
                }
                cov_i[(a, a)] += sig;
            }
            let r = DVector::from_vec(centered);
            let chol = nalgebra::Cholesky::new(cov_i)
                .ok_or_else(|| Error::SingularSubjectSystem(s.id.clone()))?;
            let sol = chol.solve(&r);
            let proj = psi_i.transpose() * sol;
            for kk in 0..k {
                scores[(i, kk)] = lam_k[kk] * proj[kk];
            }
        }
    }
    Ok(scores)
}

/// AIC selection of the truncation K_x with the d_max + 1 floor.
/// AIC(k) = N log(sigma2_[k]) + N + 2nk where sigma2_[k] integrates the
/// excess of the raw diagonal over the k-term smoothed diagonal.
pub fn select_kx(
    data: &FunctionalDataset,
    lambda: &DVector<f64>,
    psi: &DMatrix<f64>,
    raw_diag: &[f64],
    d_max: usize,
    max_k: usize,
) -> Result<usize> {
    let n_pos = lambda.len();
    let floor = d_max + 1;
    if n_pos < floor {
        return Err(Error::TooFewComponents {
            required: floor,
            available: n_pos,
        });
    }
    let m = data.grid_len();
    let w = linalg::trapezoid_weights(&data.common_grid);
    let span: f64 = w.iter().sum();
    let n_total = data.total_obs() as f64;
    let n_subj = data.num_subjects() as f64;
    let kmax = max_k.min(n_pos).max(1);
    let mut best_k = 1usize;
    let mut best_aic = f64::INFINITY;
    let mut cum = vec![0.0; m]; // running sum of lambda_j psi_j(t)^2
    for k in 1..=kmax {
        for t in 0..m {
            cum[t] += lambda[k - 1] * psi[(t, k - 1)] * psi[(t, k - 1)];
        }
        let mut excess = 0.0;
        for t in 0..m {
            excess += w[t] * (raw_diag[t] - cum[t]);
        }
        let sig_k = (excess / span).max(1e-10);
        let aic = n_total * sig_k.ln() + n_total + 2.0 * n_subj * k as f64;
        if aic < best_aic {
            best_aic = aic;
            best_k = k;
        }
    }
    Ok(best_k.max(floor))
}

/// Full FPCA pipeline: mean, covariance, spectrum, truncation, scores.
/// `d_max` is the largest penalty order that will be tested (K_x >= d_max+1).
pub fn fit_fpca(
    data: &FunctionalDataset,
    d_max: usize,
    opts: &FpcaOptions,
) -> Result<FpcaModel> {
    data.validate()?;
    let mean = estimate_mean(data)?;
    let cov = estimate_covariance(data, &mean)?;
    let (lambda, psi) = eigen_decompose(&cov.smoothed, &data.common_grid)?;
    let k_x = match opts.kx_override {
        Some(k) => {
            if k < d_max + 1 {
                return Err(Error::KxFloorViolation {
                    required: d_max + 1,
                    got: k,
                });
            }
            if k > lambda.len() {
                return Err(Error::TooFewComponents {
                    required: k,
                    available: lambda.len(),
                });
            }
            k
        }
        None => select_kx(data, &lambda, &psi, &cov.raw_diag, d_max, opts.max_k_aic)?,
    };
    let scores = estimate_scores(data, &mean, &lambda, &psi, cov.sigma2_x, k_x)?;
    Ok(FpcaModel {
        grid: data.common_grid.clone(),
        mean,
        eigenvalues: lambda,
        eigenfunctions: psi,
        noise_var: cov.sigma2_x,
        scores,
        k_x,
    })
}
