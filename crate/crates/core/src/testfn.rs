//! Compactly supported test functions, their analytic derivatives, and the
//! discretized basis matrices with quadrature weights folded in.
//!
//! Three families are supported:
//!
//! * `CInfBump` — C-infinity bump `C exp(-eta / (1 - (t/a)^2))`,
//! * `Hartley3` — third-order Hartley modulating function built from
//!   `cas(x) = cos(x) + sin(x)`,
//! * `Polynomial` — even polynomial `C (t+a)^p (a-t)^p = C (a^2 - t^2)^p`.
//!
//! All are normalized so the L2 norm over the support is 1, and all vanish
//! identically outside `[center - a, center + a]`.

use crate::error::{Error, Result};
use crate::models::TimeGrid;
use nalgebra::DMatrix;
use serde::Serialize;

/// Test-function family and its shape parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum TestFunctionFamily {
    /// Bump with shape parameter eta.
    CInfBump { eta: f64 },
    /// Third-order Hartley modulating function (no shape parameter).
    Hartley3,
    /// Even polynomial of the given (even, >= 4) degree.
    Polynomial { degree: usize },
}

/// A normalized test-function shape: family, support radius, and the
/// computed normalization constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TestFunctionSpec {
    pub family: TestFunctionFamily,
    /// Support radius a; the function is identically zero outside
    /// `[center - a, center + a]`.
    pub radius: f64,
    normalization: f64,
}

impl TestFunctionSpec {
    /// Build a spec, computing the normalization constant so that the
    /// squared L2 norm over the support is 1.
    pub fn new(family: TestFunctionFamily, radius: f64) -> Result<Self> {
        if radius.is_nan() || radius <= 0.0 {
            return Err(Error::Config(format!(
                "test-function radius must be positive, got {radius}"
            )));
        }
        if let TestFunctionFamily::Polynomial { degree } = family {
            if degree < 4 || degree % 2 != 0 {
                return Err(Error::Config(format!(
                    "polynomial test functions require an even degree >= 4, got {degree}"
                )));
            }
        }
        if let TestFunctionFamily::CInfBump { eta } = family {
            if eta.is_nan() || eta <= 0.0 {
                return Err(Error::Config(format!(
                    "bump shape parameter must be positive, got {eta}"
                )));
            }
        }
        let mut spec = Self {
            family,
            radius,
            normalization: 1.0,
        };
        // Composite Simpson over the support; the integrands are smooth and
        // vanish at the endpoints, so this converges far past 1e-10.
        let norm_sq = simpson(|t| spec.eval_unit(t, 0).powi(2), -radius, radius, 16_384);
        if norm_sq.is_nan() || norm_sq <= 0.0 {
            return Err(Error::Config(
                "test function has zero L2 norm on its support".into(),
            ));
        }
        spec.normalization = norm_sq.sqrt().recip();
        Ok(spec)
    }

    /// The normalization constant C.
    pub fn normalization(&self) -> f64 {
        self.normalization
    }

    /// Evaluate the function or one of its first two derivatives at `t` for
    /// a test function centered at `center`. Exactly zero outside the open
    /// support, including at the endpoints.
    pub fn eval(&self, center: f64, t: f64, deriv_order: u8) -> f64 {
        self.normalization * self.eval_unit(t - center, deriv_order)
    }

    // Unnormalized value with the center shifted to zero.
    fn eval_unit(&self, u: f64, deriv_order: u8) -> f64 {
        debug_assert!(deriv_order <= 2);
        let a = self.radius;
        if u.abs() >= a {
            return 0.0;
        }
        match self.family {
            TestFunctionFamily::CInfBump { eta } => {
                let s = u / a;
                let q = 1.0 - s * s;
                let g = (-eta / q).exp();
                if g == 0.0 {
                    // Underflow region near the endpoints: every derivative
                    // vanishes analytically as well.
                    return 0.0;
                }
                match deriv_order {
                    0 => g,
                    1 => {
                        // d/dt = (1/a) d/ds of exp(-eta/q).
                        let gp = -eta * 2.0 * s / (q * q);
                        g * gp / a
                    }
                    _ => {
                        let gp = -eta * 2.0 * s / (q * q);
                        let gpp = -2.0 * eta * (1.0 + 3.0 * s * s) / (q * q * q);
                        g * (gp * gp + gpp) / (a * a)
                    }
                }
            }
            TestFunctionFamily::Hartley3 => {
                let w1 = 2.0 * std::f64::consts::PI / a;
                let (w2, w3) = (2.0 * w1, 3.0 * w1);
                match deriv_order {
                    0 => cas(w3 * u) - 3.0 * cas(w2 * u) + 3.0 * cas(w1 * u) - 1.0,
                    1 => w3 * cas_d(w3 * u) - 3.0 * w2 * cas_d(w2 * u) + 3.0 * w1 * cas_d(w1 * u),
                    _ => {
                        // cas'' = -cas
                        -(w3 * w3 * cas(w3 * u) - 3.0 * w2 * w2 * cas(w2 * u)
                            + 3.0 * w1 * w1 * cas(w1 * u))
                    }
                }
            }
            TestFunctionFamily::Polynomial { degree } => {
                let p = (degree / 2) as i32;
                let q = a * a - u * u;
                match deriv_order {
                    0 => q.powi(p),
                    1 => -2.0 * u * f64::from(p) * q.powi(p - 1),
                    _ => {
                        let pf = f64::from(p);
                        4.0 * u * u * pf * (pf - 1.0) * q.powi(p - 2) - 2.0 * pf * q.powi(p - 1)
                    }
                }
            }
        }
    }
}

fn cas(x: f64) -> f64 {
    x.cos() + x.sin()
}

fn cas_d(x: f64) -> f64 {
    x.cos() - x.sin()
}

fn simpson<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, intervals: usize) -> f64 {
    let n = intervals + intervals % 2; // force even
    let h = (hi - lo) / n as f64;
    let mut acc = f(lo) + f(hi);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(lo + i as f64 * h);
    }
    acc * h / 3.0
}

/// Evaluate a test-function derivative; free-function form of
/// [`TestFunctionSpec::eval`].
pub fn eval_testfn(spec: &TestFunctionSpec, center: f64, t: f64, deriv_order: u8) -> f64 {
    spec.eval(center, t, deriv_order)
}

/// Discretized basis: K test functions sampled on a uniform grid, each row
/// scaled elementwise by composite-trapezoid quadrature weights, so a row dot
/// product with a data vector approximates the corresponding integral.
#[derive(Debug, Clone)]
pub struct TestFunctionBasis {
    pub spec: TestFunctionSpec,
    pub centers: Vec<f64>,
    pub grid: TimeGrid,
    /// Quadrature-weighted samples of phi (K x (M+1)).
    pub phi0: DMatrix<f64>,
    /// Quadrature-weighted samples of phi'.
    pub phi1: DMatrix<f64>,
    /// Quadrature-weighted samples of phi''.
    pub phi2: DMatrix<f64>,
}

/// SVD ranks of the three basis matrices at threshold `tol * sigma_max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RankDiagnostics {
    pub rank0: usize,
    pub rank1: usize,
    pub rank2: usize,
}

impl TestFunctionBasis {
    pub fn k(&self) -> usize {
        self.phi0.nrows()
    }

    /// Number of unknowns the basis can resolve is bounded by K; callers use
    /// the rank diagnostics to verify the bound is attained.
    pub fn n_samples(&self) -> usize {
        self.phi0.ncols()
    }
}

/// Place K supports uniformly on the interior of the grid and sample the
/// spec's derivatives at the grid points with trapezoid weights folded in.
pub fn build_basis(spec: &TestFunctionSpec, k: usize, grid: &TimeGrid) -> Result<TestFunctionBasis> {
    if k == 0 {
        return Err(Error::Config("basis requires K >= 1".into()));
    }
    let a = spec.radius;
    let window = grid.t1() - grid.t0();
    if 2.0 * a > window {
        return Err(Error::DomainTooSmall {
            support: 2.0 * a,
            window,
        });
    }
    let lo = grid.t0() + a;
    let hi = grid.t1() - a;
    let centers: Vec<f64> = if k == 1 {
        vec![0.5 * (lo + hi)]
    } else {
        (0..k)
            .map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64)
            .collect()
    };
    Ok(basis_with_centers(spec, centers, grid))
}

/// Basis construction with explicit centers; the public surface for the
/// uniform placement is [`build_basis`].
pub fn basis_with_centers(
    spec: &TestFunctionSpec,
    centers: Vec<f64>,
    grid: &TimeGrid,
) -> TestFunctionBasis {
    let m1 = grid.len();
    let h = grid.step();
    let points = grid.points();
    let mut matrices = [
        DMatrix::zeros(centers.len(), m1),
        DMatrix::zeros(centers.len(), m1),
        DMatrix::zeros(centers.len(), m1),
    ];
    for (row, &c) in centers.iter().enumerate() {
        for (col, &t) in points.iter().enumerate() {
            let q = if col == 0 || col + 1 == m1 { 0.5 * h } else { h };
            for (d, mat) in matrices.iter_mut().enumerate() {
                mat[(row, col)] = q * spec.eval(c, t, d as u8);
            }
        }
    }
    let [phi0, phi1, phi2] = matrices;
    TestFunctionBasis {
        spec: *spec,
        centers,
        grid: grid.clone(),
        phi0,
        phi1,
        phi2,
    }
}

/// SVD ranks of the three quadrature-weighted matrices.
pub fn rank_diagnostics(basis: &TestFunctionBasis, tol: f64) -> RankDiagnostics {
    RankDiagnostics {
        rank0: matrix_rank(&basis.phi0, tol),
        rank1: matrix_rank(&basis.phi1, tol),
        rank2: matrix_rank(&basis.phi2, tol),
    }
}

/// Rank at threshold `tol * sigma_max`, the convention used throughout the
/// structural checks.
pub fn matrix_rank(m: &DMatrix<f64>, tol: f64) -> usize {
    let svd = m.clone().svd(false, false);
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    if smax == 0.0 {
        return 0;
    }
    svd.singular_values
        .iter()
        .filter(|&&s| s > tol * smax)
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn all_specs() -> Vec<TestFunctionSpec> {
        vec![
            TestFunctionSpec::new(TestFunctionFamily::CInfBump { eta: 9.0 }, 0.6).unwrap(),
            TestFunctionSpec::new(TestFunctionFamily::Hartley3, 0.8).unwrap(),
            TestFunctionSpec::new(TestFunctionFamily::Polynomial { degree: 12 }, 0.52).unwrap(),
        ]
    }

    #[test]
    fn zero_at_and_outside_support_boundary() {
        for spec in all_specs() {
            let a = spec.radius;
            for order in 0..=2 {
                assert_eq!(spec.eval(0.0, a, order), 0.0);
                assert_eq!(spec.eval(0.0, -a, order), 0.0);
                assert_eq!(spec.eval(0.0, 1.5 * a, order), 0.0);
                assert!(spec.eval(2.0, 2.0 - 1.01 * a, order).is_finite());
            }
        }
    }

    #[test]
    fn polynomial_first_derivative_vanishes_at_center() {
        let spec = TestFunctionSpec::new(TestFunctionFamily::Polynomial { degree: 12 }, 0.7)
            .unwrap();
        assert_eq!(spec.eval(1.0, 1.0, 1), 0.0);
    }

    #[test]
    fn normalization_gives_unit_l2_norm() {
        for spec in all_specs() {
            let a = spec.radius;
            let norm_sq = simpson(|t| spec.eval(0.0, t, 0).powi(2), -a, a, 60_000);
            assert_abs_diff_eq!(norm_sq, 1.0, epsilon = 1e-8);
        }
    }

    // 4th-order central finite difference of a function sampled at step h.
    fn fd4<F: Fn(f64) -> f64>(f: F, t: f64, h: f64) -> f64 {
        (-f(t + 2.0 * h) + 8.0 * f(t + h) - 8.0 * f(t - h) + f(t - 2.0 * h)) / (12.0 * h)
    }

    #[test]
    fn analytic_derivatives_match_finite_differences() {
        for spec in all_specs() {
            let a = spec.radius;
            let h = a * 1e-4;
            // Characteristic derivative magnitudes over the support, so the
            // comparison stays relative at interior zeros of the derivative.
            let points = [-0.7, -0.35, 0.0, 0.2, 0.55];
            let scale1 = points
                .iter()
                .map(|f| spec.eval(0.0, f * a, 1).abs())
                .fold(0.0_f64, f64::max);
            let scale2 = points
                .iter()
                .map(|f| spec.eval(0.0, f * a, 2).abs())
                .fold(0.0_f64, f64::max);
            for frac in points {
                let t = frac * a;
                let d1 = spec.eval(0.0, t, 1);
                let d1_fd = fd4(|x| spec.eval(0.0, x, 0), t, h);
                let d2 = spec.eval(0.0, t, 2);
                let d2_fd = fd4(|x| spec.eval(0.0, x, 1), t, h);
                assert!(
                    (d1 - d1_fd).abs() <= 1e-6 * d1.abs().max(d1_fd.abs()).max(1e-4 * scale1),
                    "{:?} first derivative at {t}: {d1} vs {d1_fd}",
                    spec.family
                );
                assert!(
                    (d2 - d2_fd).abs() <= 1e-6 * d2.abs().max(d2_fd.abs()).max(1e-4 * scale2),
                    "{:?} second derivative at {t}: {d2} vs {d2_fd}",
                    spec.family
                );
            }
        }
    }

    #[test]
    fn bump_second_derivative_against_fd_of_first() {
        let spec = TestFunctionSpec::new(TestFunctionFamily::CInfBump { eta: 9.0 }, 0.6).unwrap();
        let t = 0.3;
        let d2 = spec.eval(0.0, t, 2);
        let d2_fd = fd4(|x| spec.eval(0.0, x, 1), t, 1e-5);
        assert!(((d2 - d2_fd) / d2_fd.abs()).abs() <= 1e-6);
    }

    #[test]
    fn example_configurations_have_full_rank() {
        let grid = TimeGrid::uniform(0.0, 5.0, 400).unwrap();
        let spec = TestFunctionSpec::new(TestFunctionFamily::Polynomial { degree: 12 }, 0.52)
            .unwrap();
        let basis = build_basis(&spec, 15, &grid).unwrap();
        let ranks = rank_diagnostics(&basis, 1e-12);
        assert_eq!(
            (ranks.rank0, ranks.rank1, ranks.rank2),
            (15, 15, 15),
            "first example basis"
        );

        let grid = TimeGrid::uniform(0.0, 30.0, 31).unwrap();
        let spec = TestFunctionSpec::new(TestFunctionFamily::Polynomial { degree: 20 }, 11.0)
            .unwrap();
        let basis = build_basis(&spec, 4, &grid).unwrap();
        let ranks = rank_diagnostics(&basis, 1e-12);
        assert_eq!((ranks.rank0, ranks.rank1, ranks.rank2), (4, 4, 4));
    }

    #[test]
    fn duplicated_centers_lose_rank_without_erroring() {
        let grid = TimeGrid::uniform(0.0, 5.0, 200).unwrap();
        let spec = TestFunctionSpec::new(TestFunctionFamily::Polynomial { degree: 12 }, 0.52)
            .unwrap();
        let basis = basis_with_centers(&spec, vec![2.0, 2.0, 3.0], &grid);
        let ranks = rank_diagnostics(&basis, 1e-12);
        assert_eq!(ranks.rank0, 2);
    }

    #[test]
    fn single_function_basis_annihilates_constants_through_phi2() {
        let grid = TimeGrid::uniform(0.0, 2.0, 401).unwrap();
        let spec = TestFunctionSpec::new(TestFunctionFamily::Polynomial { degree: 12 }, 0.9)
            .unwrap();
        let basis = build_basis(&spec, 1, &grid).unwrap();
        assert_eq!(basis.centers, vec![1.0]);
        let ones = nalgebra::DVector::from_element(grid.len(), 1.0);
        let integral = (&basis.phi2 * &ones)[0];
        // Integral of phi'' over the support is exactly zero; only
        // quadrature error remains.
        assert!(integral.abs() <= 1e-6, "got {integral}");
    }

    #[test]
    fn phi0_row_integrates_to_function_integral() {
        let grid = TimeGrid::uniform(0.0, 5.0, 801).unwrap();
        let spec = TestFunctionSpec::new(TestFunctionFamily::Polynomial { degree: 12 }, 0.52)
            .unwrap();
        let basis = build_basis(&spec, 5, &grid).unwrap();
        let ones = nalgebra::DVector::from_element(grid.len(), 1.0);
        let sums = &basis.phi0 * &ones;
        let exact = simpson(|t| spec.eval(0.0, t, 0), -0.52, 0.52, 20_000);
        for k in 0..5 {
            assert_abs_diff_eq!(sums[k], exact, epsilon = 1e-6);
        }
    }

    // Worst IBP defect over rows: max_k |Phi1 f + Phi0 f'| and the
    // second-order analogue. Boundary terms vanish by compact support, so
    // whatever remains is quadrature error.
    fn ibp_defects(spec: &TestFunctionSpec, n_points: usize) -> (f64, f64) {
        let grid = TimeGrid::uniform(0.0, 5.0, n_points).unwrap();
        let pts = grid.points();
        let fv = nalgebra::DVector::from_iterator(n_points, pts.iter().map(|t| (1.3 * t).sin()));
        let fpv =
            nalgebra::DVector::from_iterator(n_points, pts.iter().map(|t| 1.3 * (1.3 * t).cos()));
        let fppv =
            nalgebra::DVector::from_iterator(n_points, pts.iter().map(|t| -1.69 * (1.3 * t).sin()));
        let basis = build_basis(spec, 7, &grid).unwrap();
        let d1 = (&basis.phi1 * &fv + &basis.phi0 * &fpv).amax();
        let d2 = (&basis.phi2 * &fv - &basis.phi0 * &fppv).amax();
        (d1, d2)
    }

    #[test]
    fn integration_by_parts_identity_on_smooth_data() {
        for spec in all_specs() {
            let h = 5.0 / 1000.0;
            let (d1, d2) = ibp_defects(&spec, 1001);
            // Second-order composite trapezoid: generous constant times h^2.
            assert!(d1 <= 100.0 * h * h, "{:?} first-order defect {d1}", spec.family);
            assert!(d2 <= 100.0 * h * h, "{:?} second-order defect {d2}", spec.family);
        }
    }

    #[test]
    fn ibp_defect_shrinks_quadratically_for_hartley() {
        // The Hartley family has nonvanishing third derivatives at the
        // support endpoints, so its quadrature error is genuinely O(h^2)
        // rather than spectrally small; halving h must cut it ~4x.
        let spec = TestFunctionSpec::new(TestFunctionFamily::Hartley3, 0.8).unwrap();
        let (_, coarse) = ibp_defects(&spec, 1001);
        let (_, fine) = ibp_defects(&spec, 2001);
        assert!(
            fine <= coarse / 3.0,
            "defect did not shrink quadratically: {coarse} -> {fine}"
        );
    }

    #[test]
    fn domain_too_small_is_rejected() {
        let grid = TimeGrid::uniform(0.0, 1.0, 50).unwrap();
        let spec = TestFunctionSpec::new(TestFunctionFamily::Polynomial { degree: 12 }, 0.6)
            .unwrap();
        assert!(matches!(
            build_basis(&spec, 3, &grid),
            Err(Error::DomainTooSmall { .. })
        ));
    }

    proptest::proptest! {
        // Compact support and unit normalization hold across the admissible
        // shape space, not just the reference configurations.
        #[test]
        fn support_and_normalization_hold_for_random_shapes(
            radius in 0.05_f64..20.0,
            eta in 1.0_f64..15.0,
            half_degree in 2_usize..12,
            center in -5.0_f64..5.0,
        ) {
            for family in [
                TestFunctionFamily::CInfBump { eta },
                TestFunctionFamily::Hartley3,
                TestFunctionFamily::Polynomial { degree: 2 * half_degree },
            ] {
                let spec = TestFunctionSpec::new(family, radius).unwrap();
                for order in 0..=2 {
                    // The zero-outside contract is on the computed offset
                    // t - center; rounding in the caller's sum can land a
                    // ulp inside the support, where the value is still ~0.
                    let t_edge = center + radius;
                    let v = spec.eval(center, t_edge, order);
                    if (t_edge - center).abs() >= radius {
                        proptest::prop_assert_eq!(v, 0.0);
                    } else {
                        proptest::prop_assert!(v.abs() <= 1e-9 * spec.eval(center, center, 0).abs().max(1.0));
                    }
                    proptest::prop_assert_eq!(spec.eval(center, center - 1.7 * radius, order), 0.0);
                }
                let norm_sq = simpson(
                    |t| spec.eval(center, t, 0).powi(2),
                    center - radius,
                    center + radius,
                    20_000,
                );
                proptest::prop_assert!((norm_sq - 1.0).abs() <= 1e-6, "norm^2 = {norm_sq}");
            }
        }
    }
}
