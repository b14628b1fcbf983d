//! Independent ground truth for tests, acceptance runs and `gradcheck`.
//!
//! Nothing in the estimator or experiment paths calls into this module. The
//! routines here recompute densities, posteriors and divergences from the raw
//! model parameters with their own linear algebra (LU rather than the cached
//! Cholesky factors) so that agreement is evidence, not tautology.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::gaussian::{ModelSpec, ProposalParams};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Central finite differences with step `h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdSpec {
    pub h: f64,
}

impl Default for FdSpec {
    fn default() -> Self {
        Self { h: 1e-5 }
    }
}

/// Central-difference gradient of `f` at `point`.
pub fn fd_gradient<F>(f: F, point: &DVector<f64>, spec: FdSpec) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> f64,
{
    if spec.h.is_nan() || spec.h <= 0.0 {
        return Err(Error::InvalidInput(format!("step must be positive, got {}", spec.h)));
    }
    let mut grad = DVector::zeros(point.len());
    let mut probe = point.clone();
    for i in 0..point.len() {
        let orig = probe[i];
        probe[i] = orig + spec.h;
        let up = f(&probe);
        probe[i] = orig - spec.h;
        let down = f(&probe);
        probe[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFiniteEvaluation { component: i });
        }
        grad[i] = (up - down) / (2.0 * spec.h);
    }
    Ok(grad)
}

fn spd_inverse_and_log_det(cov: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    if cov.nrows() != cov.ncols() {
        return Err(Error::NotPositiveDefinite);
    }
    // Leading principal minors via LU: positive pivots without pivoting ⇔ SPD for symmetric input.
    let n = cov.nrows();
    for i in 0..n {
        for j in 0..i {
            if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-10 * cov[(i, j)].abs().max(1.0) {
                return Err(Error::NotPositiveDefinite);
            }
        }
    }
    let mut log_det = 0.0;
    for size in 1..=n {
        let det = cov.view((0, 0), (size, size)).clone_owned().determinant();
        if det.is_nan() || det <= 0.0 {
            return Err(Error::NotPositiveDefinite);
        }
        if size == n {
            log_det = det.ln();
        }
    }
    let inv = cov.clone().lu().try_inverse().ok_or(Error::NotPositiveDefinite)?;
    Ok((inv, log_det))
}

/// Full-covariance Gaussian log-density via LU inverse and determinant.
pub fn mvn_log_density(v: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    check_dim(mean.len(), v.len())?;
    let (inv, log_det) = spd_inverse_and_log_det(cov)?;
    let diff = v - mean;
    Ok(-0.5 * (v.len() as f64 * LN_2PI + log_det + diff.dot(&(inv * &diff))))
}

/// `KL(N(m₁, S₁) ‖ N(m₂, S₂))`.
pub fn gaussian_kl(
    mean1: &DVector<f64>,
    cov1: &DMatrix<f64>,
    mean2: &DVector<f64>,
    cov2: &DMatrix<f64>,
) -> Result<f64> {
    let d = mean1.len();
    check_dim(d, mean2.len())?;
    check_dim(d, cov1.nrows())?;
    check_dim(d, cov2.nrows())?;
    let (_, log_det1) = spd_inverse_and_log_det(cov1)?;
    let (inv2, log_det2) = spd_inverse_and_log_det(cov2)?;
    let diff = mean2 - mean1;
    let trace = (&inv2 * cov1).trace();
    Ok(0.5 * (trace + diff.dot(&(&inv2 * &diff)) - d as f64 + log_det2 - log_det1))
}

/// Posterior `(ν, P)` recomputed from `μ` and `Σ` with LU inverses.
pub fn posterior_by_lu(model: &ModelSpec, x: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_dim(model.dim(), x.len())?;
    let d = model.dim();
    let sigma_inv = model.sigma().clone().lu().try_inverse().ok_or(Error::NotPositiveDefinite)?;
    let precision = &sigma_inv + DMatrix::identity(d, d);
    let p = precision.lu().try_inverse().ok_or(Error::NotPositiveDefinite)?;
    let nu = &p * (&sigma_inv * model.mu() + x);
    Ok((nu, p))
}

fn proposal_moments(d: usize, flat: &DVector<f64>, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let a = DMatrix::from_row_slice(d, d, &flat.as_slice()[..d * d]);
    let b = flat.rows(d * d, d);
    let c = flat.rows(d * d + d, d);
    let mean = a * x + b;
    let cov = DMatrix::from_diagonal(&c.map(|v| (2.0 * v).exp()));
    (mean, cov)
}

/// `−∇_φ KL(π ‖ q_φ)` by finite differences of the closed-form KL.
pub fn inclusive_kl_phi_gradient_oracle(
    model: &ModelSpec,
    phi: &ProposalParams,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    let d = model.dim();
    let (nu, p) = posterior_by_lu(model, x)?;
    let g = fd_gradient(
        |flat| {
            let (m, c) = proposal_moments(d, flat, x);
            gaussian_kl(&nu, &p, &m, &c).unwrap_or(f64::NAN)
        },
        &phi.to_flat(),
        FdSpec::default(),
    )?;
    Ok(-g)
}

/// `−∇_φ KL(q_φ ‖ π)` by finite differences of the closed-form KL.
pub fn exclusive_kl_phi_gradient_oracle(
    model: &ModelSpec,
    phi: &ProposalParams,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    let d = model.dim();
    let (nu, p) = posterior_by_lu(model, x)?;
    let g = fd_gradient(
        |flat| {
            let (m, c) = proposal_moments(d, flat, x);
            gaussian_kl(&m, &c, &nu, &p).unwrap_or(f64::NAN)
        },
        &phi.to_flat(),
        FdSpec::default(),
    )?;
    Ok(-g)
}

fn normal_pdf(z: f64, mean: f64, var: f64) -> f64 {
    (-0.5 * (z - mean) * (z - mean) / var).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

/// Adaptive Simpson quadrature on `[a, b]` to absolute tolerance `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        m: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, fa, m, fm, lm, flm, left, 0.5 * tol, depth - 1)
            + recurse(f, m, fm, b, fb, rm, frm, right, 0.5 * tol, depth - 1)
    }
    // Start from fixed panels so narrow peaks are never stepped over.
    const PANELS: usize = 64;
    let width = (b - a) / PANELS as f64;
    (0..PANELS)
        .map(|i| {
            let lo = a + i as f64 * width;
            let hi = lo + width;
            let (flo, fhi) = (f(lo), f(hi));
            let (m, fm, whole) = simpson(f, lo, flo, hi, fhi);
            recurse(f, lo, flo, hi, fhi, m, fm, whole, tol / PANELS as f64, 40)
        })
        .sum()
}

/// Relative tolerance used by the χ² quadrature.
pub const CHISQ_REL_TOL: f64 = 1e-9;

/// `χ²(π ‖ q_φ) = ∫ (π/q − 1)² q` for `D = 1`, by adaptive quadrature over a
/// 12-standard-deviation window around every Gaussian bump of the integrand.
///
/// Finite only when `2/P − 1/C > 0`; otherwise the tail of `π²/q` does not
/// decay and [`Error::DivergedIntegral`] is returned.
pub fn chisq_divergence_oracle_1d(model: &ModelSpec, phi: &ProposalParams, x: &DVector<f64>) -> Result<f64> {
    if model.dim() != 1 {
        return Err(Error::InvalidInput("χ² quadrature oracle requires D = 1".into()));
    }
    check_dim(1, phi.dim())?;
    let (nu, p) = posterior_by_lu(model, x)?;
    let (nu, p) = (nu[0], p[(0, 0)]);
    let m = phi.a[(0, 0)] * x[0] + phi.b[0];
    let c = (2.0 * phi.c[0]).exp();
    let tilted_precision = 2.0 / p - 1.0 / c;
    if tilted_precision.is_nan() || tilted_precision <= 0.0 {
        return Err(Error::DivergedIntegral(format!(
            "2/P − 1/C = {tilted_precision} ≤ 0"
        )));
    }
    let tilted_mean = (2.0 * nu / p - m / c) / tilted_precision;
    let centres = [(nu, p.sqrt()), (m, c.sqrt()), (tilted_mean, tilted_precision.powf(-0.5))];
    let lo = centres.iter().map(|(mu, s)| mu - 12.0 * s).fold(f64::INFINITY, f64::min);
    let hi = centres.iter().map(|(mu, s)| mu + 12.0 * s).fold(f64::NEG_INFINITY, f64::max);

    let integrand = |z: f64| {
        let (pi, q) = (normal_pdf(z, nu, p), normal_pdf(z, m, c));
        if q == 0.0 {
            0.0
        } else {
            (pi - q) * (pi - q) / q
        }
    };
    let rough = integrate(&integrand, lo, hi, 1e-6);
    let tol = (CHISQ_REL_TOL * rough.abs()).max(1e-300);
    Ok(integrate(&integrand, lo, hi, tol))
}

/// `log Z` for diagonal `Σ` as a sum of one-dimensional integrals of `γ`.
pub fn log_marginal_by_quadrature(model: &ModelSpec, x: &DVector<f64>) -> Result<f64> {
    check_dim(model.dim(), x.len())?;
    let sigma = model.sigma();
    let mut total = 0.0;
    for d in 0..model.dim() {
        for e in 0..model.dim() {
            if d != e && sigma[(d, e)] != 0.0 {
                return Err(Error::InvalidInput("quadrature oracle needs diagonal Σ".into()));
            }
        }
        let (mu, var, xd) = (model.mu()[d], sigma[(d, d)], x[d]);
        let f = |z: f64| normal_pdf(z, mu, var) * normal_pdf(xd, z, 1.0);
        let spread = 12.0 * var.sqrt().max(1.0);
        let (lo, hi) = (mu.min(xd) - spread, mu.max(xd) + spread);
        total += integrate(&f, lo, hi, 1e-14).ln();
    }
    Ok(total)
}

/// Grid step of [`alpha_star_grid_oracle`].
pub const ALPHA_GRID_STEP: f64 = 1e-6;

/// Largest `α` on the grid `{0, 10⁻⁶, …, 1}` with `ESS(w^α) ≥ ηK`.
pub fn alpha_star_grid_oracle(lw: &[f64], eta: f64) -> f64 {
    let target = eta * lw.len() as f64;
    let steps = (1.0 / ALPHA_GRID_STEP).round() as u64;
    let mut scratch = vec![0.0; lw.len()];
    let ess_at = |alpha: f64, scratch: &mut [f64]| {
        let max = lw.iter().map(|v| alpha * v).fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (s, v) in scratch.iter_mut().zip(lw) {
            *s = (alpha * v - max).exp();
            sum += *s;
        }
        let sq: f64 = scratch.iter().map(|s| (s / sum) * (s / sum)).sum();
        1.0 / sq
    };
    for j in (0..=steps).rev() {
        let alpha = j as f64 / steps as f64;
        if ess_at(alpha, &mut scratch) >= target {
            return alpha;
        }
    }
    0.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn fd_of_quadratic_and_constant() {
        let v = DVector::from_vec(vec![0.3, -1.2, 2.5]);
        let g = fd_gradient(|p| 0.5 * p.norm_squared(), &v, FdSpec::default()).unwrap();
        assert_relative_eq!(g, v, epsilon = 1e-10);
        let g = fd_gradient(|_| 4.0, &v, FdSpec::default()).unwrap();
        assert_eq!(g, DVector::zeros(3));
    }

    #[test]
    fn fd_reports_bad_component() {
        let v = DVector::from_vec(vec![1.0, 1e-6]);
        let err = fd_gradient(|p| p[1].ln(), &v, FdSpec::default()).unwrap_err();
        assert_eq!(err, Error::NonFiniteEvaluation { component: 1 });
        assert!(fd_gradient(|p| p[0], &v, FdSpec { h: 0.0 }).is_err());
    }

    #[test]
    fn kl_examples() {
        let z = DVector::zeros(1);
        let one = DMatrix::identity(1, 1);
        assert_eq!(gaussian_kl(&z, &one, &z, &one).unwrap(), 0.0);
        let four = DMatrix::from_element(1, 1, 4.0);
        let kl = gaussian_kl(&z, &one, &z, &four).unwrap();
        assert_relative_eq!(kl, 0.5 * (0.25 - 1.0 + 4f64.ln()), epsilon = 1e-15);
        assert_relative_eq!(kl, 0.3181, epsilon = 1e-4);
        let bad = DMatrix::from_element(1, 1, -1.0);
        assert!(gaussian_kl(&z, &bad, &z, &one).is_err());
    }

    #[test]
    fn kl_matches_quadrature() {
        let (m1, v1, m2, v2) = (0.3, 0.7, -0.4, 1.9);
        let f = |z: f64| {
            let p = normal_pdf(z, m1, v1);
            p * (p / normal_pdf(z, m2, v2)).ln()
        };
        let quad = integrate(&f, m1 - 15.0, m1 + 15.0, 1e-13);
        let kl = gaussian_kl(
            &DVector::from_element(1, m1),
            &DMatrix::from_element(1, 1, v1),
            &DVector::from_element(1, m2),
            &DMatrix::from_element(1, 1, v2),
        )
        .unwrap();
        assert_relative_eq!(kl, quad, epsilon = 1e-8);
    }

    #[test]
    fn grid_oracle_two_particles() {
        assert_eq!(alpha_star_grid_oracle(&[2.0, 2.0, 2.0], 0.8), 1.0);
        let a = alpha_star_grid_oracle(&[0.0, -1000.0], 0.8);
        assert!((a - 3f64.ln() / 1000.0).abs() <= ALPHA_GRID_STEP);
    }
}
