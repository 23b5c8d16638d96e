//! Weak-form parameter estimation: ordinary least squares followed by
//! iteratively reweighted generalized least squares with a first-order
//! residual covariance, plus parameter covariance and confidence intervals.
//!
//! Substituting noisy data into the weak system makes it an
//! errors-in-variables regression: both G and b carry transformed noise. The
//! reweighting whitens the residual with S_R = J Cov(eps) J^T, where J is the
//! analytic Jacobian of the residual with respect to the data.

use crate::error::{Error, Result};
use crate::models::TimeGrid;
use crate::noise::NoiseKind;
use crate::stats::normal_quantile;
use crate::testfn::TestFunctionBasis;
use crate::weakform::{WeakLinearSystem, WeakObservationModel};
use nalgebra::{DMatrix, DVector};

/// Noise structure assumed by the reweighting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    /// Standard deviation: data units for additive noise, log units for
    /// lognormal noise.
    pub sigma: f64,
    /// Whether sigma is known (simulation) or was estimated from data.
    pub known: bool,
}

impl NoiseSpec {
    pub fn known(kind: NoiseKind, sigma: f64) -> Self {
        Self {
            kind,
            sigma,
            known: true,
        }
    }
}

/// Which parameter covariance is reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CovarianceForm {
    /// The unweighted sandwich (G^T G)^-1 G^T S_R G (G^T G)^-1.
    #[default]
    Sandwich,
    /// The generalized least-squares covariance (G^T S_R^-1 G)^-1.
    GlsInverse,
}

/// Iteration controls for the reweighted estimator.
#[derive(Debug, Clone, Copy)]
pub struct IrlsOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub covariance: CovarianceForm,
    pub ci_level: f64,
}

impl Default for IrlsOptions {
    fn default() -> Self {
        Self {
            max_iter: 10,
            tol: 1e-6,
            covariance: CovarianceForm::Sandwich,
            ci_level: 0.95,
        }
    }
}

/// Point estimate with covariance, confidence intervals and convergence
/// metadata.
#[derive(Debug, Clone)]
pub struct Estimate {
    pub w_hat: Vec<f64>,
    /// Approximate parameter covariance S_w (symmetric PSD).
    pub s_w: DMatrix<f64>,
    /// Per-parameter (lo, hi) at the configured level.
    pub ci: Vec<(f64, f64)>,
    pub iterations: usize,
    pub converged: bool,
    pub sigma_used: f64,
}

// Columns that are numerically dependent on their predecessors, by modified
// Gram-Schmidt at relative tolerance `tol`.
fn dependent_columns(g: &DMatrix<f64>, tol: f64) -> Vec<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut dependent = Vec::new();
    let scale = g.amax().max(f64::MIN_POSITIVE);
    for j in 0..g.ncols() {
        let mut v = g.column(j).into_owned();
        for q in &basis {
            let proj = q.dot(&v);
            v -= q * proj;
        }
        if v.norm() <= tol * scale * (g.nrows() as f64).sqrt() {
            dependent.push(j);
        } else {
            let n = v.norm();
            basis.push(v / n);
        }
    }
    dependent
}

/// Least-squares solution of G w = b by thin QR; no normal equations.
///
/// Fails with a structural-degeneracy error naming the dependent columns when
/// rank(G) < p at relative tolerance 1e-12.
pub fn ols_solve(sys: &WeakLinearSystem) -> Result<Vec<f64>> {
    let p = sys.g.ncols();
    let deficient = dependent_columns(&sys.g, 1e-12);
    if !deficient.is_empty() {
        return Err(Error::StructuralDegeneracy {
            rank: p - deficient.len(),
            ncols: p,
            deficient: deficient.iter().map(|j| format!("column {j}")).collect(),
        });
    }
    Ok(qr_lstsq(&sys.g, &sys.b))
}

// Thin-QR least squares; caller has established full column rank.
fn qr_lstsq(g: &DMatrix<f64>, b: &DVector<f64>) -> Vec<f64> {
    let qr = g.clone().qr();
    let qtb = qr.q().transpose() * b;
    let r = qr.r();
    let sol = r
        .solve_upper_triangular(&qtb)
        .expect("full-rank R must be invertible");
    sol.as_slice().to_vec()
}

/// First-order covariance of the weak residual: S_R = J Cov(eps) J^T with a
/// diagonal jitter of 1e-10 trace(S_R)/K for invertibility.
///
/// Cov(eps) is sigma^2 I for additive noise and sigma^2 diag(y) under the
/// lognormal approximation.
pub fn residual_covariance(j: &DMatrix<f64>, noise: &NoiseSpec, obs: &[f64]) -> DMatrix<f64> {
    let k = j.nrows();
    let s2 = noise.sigma * noise.sigma;
    let mut s_r = match noise.kind {
        NoiseKind::AdditiveGaussian => s2 * j * j.transpose(),
        NoiseKind::MultiplicativeLognormal => {
            let mut jd = j.clone();
            for (col, &y) in obs.iter().enumerate() {
                for row in 0..k {
                    jd[(row, col)] *= y;
                }
            }
            s2 * &jd * j.transpose()
        }
    };
    let jitter = 1e-10 * s_r.trace() / k as f64;
    if jitter > 0.0 {
        for i in 0..k {
            s_r[(i, i)] += jitter;
        }
    }
    s_r
}

/// Root-mean-square of order-6 centered differences, scaled by the stencil
/// l2 norm so the estimator is unbiased for i.i.d. noise. The stencil
/// annihilates polynomials of degree <= 5, so smooth signal contributes only
/// at O(h^6).
pub fn estimate_sigma(obs: &[f64], _grid: &TimeGrid) -> f64 {
    const STENCIL: [f64; 7] = [1.0, -6.0, 15.0, -20.0, 15.0, -6.0, 1.0];
    const NORM_SQ: f64 = 924.0; // sum of squared binomial(6, j)
    assert!(obs.len() >= 7, "estimate_sigma requires at least 7 samples");
    let n = obs.len() - 6;
    let mut acc = 0.0;
    for i in 0..n {
        let d: f64 = STENCIL
            .iter()
            .enumerate()
            .map(|(j, c)| c * obs[i + j])
            .sum();
        acc += d * d;
    }
    (acc / (n as f64 * NORM_SQ)).sqrt()
}

/// Confidence intervals w_i +/- z_(1+level)/2 * sqrt(S_w[i,i]).
pub fn confidence_intervals(
    w_hat: &[f64],
    s_w: &DMatrix<f64>,
    level: f64,
) -> Result<Vec<(f64, f64)>> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!(
            "confidence level must lie in (0,1), got {level}"
        )));
    }
    let z = normal_quantile(0.5 * (1.0 + level));
    let mut ci = Vec::with_capacity(w_hat.len());
    for (i, &w) in w_hat.iter().enumerate() {
        let var = s_w[(i, i)];
        if var < -1e-12 {
            return Err(Error::CovarianceInvalid {
                index: i,
                value: var,
            });
        }
        let half = z * var.max(0.0).sqrt();
        ci.push((w - half, w + half));
    }
    Ok(ci)
}

/// Full WENDy estimate: OLS start, iteratively reweighted GLS with the
/// first-order residual covariance, and the parameter covariance at the
/// final iterate.
///
/// Non-convergence after `max_iter` sweeps is reported through the
/// `converged` flag, never as an error, so Monte Carlo drivers keep going.
pub fn irls_estimate(
    model: &WeakObservationModel,
    obs: &[f64],
    basis: &TestFunctionBasis,
    noise: &NoiseSpec,
    opts: &IrlsOptions,
) -> Result<Estimate> {
    let sys = model.assemble(obs, basis)?;
    let w_ols = ols_solve(&sys)?;
    let p = w_ols.len();

    let sigma = if noise.known {
        noise.sigma
    } else {
        estimate_sigma(obs, &basis.grid)
    };

    // Zero-noise limit: the weights are proportional to the identity, so the
    // reweighted solution is the OLS solution and the covariance vanishes.
    if sigma == 0.0 {
        let s_w = DMatrix::zeros(p, p);
        let ci = confidence_intervals(&w_ols, &s_w, opts.ci_level)?;
        return Ok(Estimate {
            w_hat: w_ols,
            s_w,
            ci,
            iterations: 1,
            converged: true,
            sigma_used: 0.0,
        });
    }

    let noise_eff = NoiseSpec {
        kind: noise.kind,
        sigma,
        known: noise.known,
    };

    let mut w = DVector::from_column_slice(&w_ols);
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..opts.max_iter {
        iterations += 1;
        let j = model.data_jacobian(obs, basis, w.as_slice())?;
        let s_r = residual_covariance(&j, &noise_eff, obs);
        let chol = match cholesky_with_escalating_jitter(&s_r) {
            Some(c) => c,
            None => break, // keep the current iterate; flagged non-converged
        };
        // Whiten with L^-1 and solve the weighted problem by QR.
        let g_w = chol.l().solve_lower_triangular(&sys.g).expect("L invertible");
        let b_w = chol.l().solve_lower_triangular(&sys.b).expect("L invertible");
        let w_new = DVector::from_column_slice(&qr_lstsq(&g_w, &b_w));

        let denom = w.norm();
        let rel = if denom > 0.0 {
            (&w_new - &w).norm() / denom
        } else {
            (&w_new - &w).norm()
        };
        w = w_new;
        if rel < opts.tol {
            converged = true;
            break;
        }
    }

    // Covariance at the final iterate.
    let j = model.data_jacobian(obs, basis, w.as_slice())?;
    let s_r = residual_covariance(&j, &noise_eff, obs);
    let s_w = match opts.covariance {
        CovarianceForm::Sandwich => sandwich_covariance(&sys.g, &s_r),
        CovarianceForm::GlsInverse => gls_covariance(&sys.g, &s_r)?,
    };
    let w_hat = w.as_slice().to_vec();
    let ci = confidence_intervals(&w_hat, &s_w, opts.ci_level)?;
    Ok(Estimate {
        w_hat,
        s_w,
        ci,
        iterations,
        converged,
        sigma_used: sigma,
    })
}

fn cholesky_with_escalating_jitter(s_r: &DMatrix<f64>) -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let k = s_r.nrows();
    let mut extra = 0.0;
    let base = s_r.trace().abs() / k as f64;
    for _ in 0..6 {
        let mut m = s_r.clone();
        if extra > 0.0 {
            for i in 0..k {
                m[(i, i)] += extra;
            }
        }
        if let Some(c) = m.cholesky() {
            return Some(c);
        }
        extra = if extra == 0.0 { 1e-12 * base.max(1e-300) } else { extra * 100.0 };
    }
    None
}

// (G^T G)^-1 G^T S_R G (G^T G)^-1 evaluated through the thin QR of G:
// with G = Q R, this is R^-1 (Q^T S_R Q) R^-T.
fn sandwich_covariance(g: &DMatrix<f64>, s_r: &DMatrix<f64>) -> DMatrix<f64> {
    let qr = g.clone().qr();
    let q = qr.q();
    let r = qr.r();
    let inner = q.transpose() * s_r * &q;
    let r_inv = r
        .try_inverse()
        .expect("full-rank R must be invertible");
    let s_w = &r_inv * inner * r_inv.transpose();
    symmetrize(s_w)
}

// (G^T S_R^-1 G)^-1 via the whitened QR.
fn gls_covariance(g: &DMatrix<f64>, s_r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = cholesky_with_escalating_jitter(s_r).ok_or_else(|| Error::Config(
        "residual covariance is not positive definite".into(),
    ))?;
    let g_w = chol.l().solve_lower_triangular(g).expect("L invertible");
    let qr = g_w.qr();
    let r = qr.r();
    let r_inv = r.try_inverse().expect("full-rank R must be invertible");
    Ok(symmetrize(&r_inv * r_inv.transpose()))
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let mt = m.transpose();
    0.5 * (m + mt)
}
