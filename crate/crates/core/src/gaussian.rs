//! Linear-Gaussian benchmark model.
//!
//! Generative model `z ~ N(μ, Σ)`, `x | z ~ N(z, I)` with known `Σ`; the
//! parameter `θ` is the prior mean `μ`. The posterior is
//! `N(ν, P)` with `P = (Σ⁻¹ + I)⁻¹`, `ν = P(Σ⁻¹μ + x)`, and the evidence is
//! `N(x; μ, I + Σ)`.
//!
//! The proposal is the fully-factored Gaussian `q_φ(z) = N(z; Ax + b, C)`
//! with `C = diag(e^{2c})`, reparametrised as `z = Ax + b + C^{1/2} e` for
//! `e ~ N(0, I)`.
//!
//! φ-gradients use the flat layout `(a₁ᵀ, …, a_Dᵀ, bᵀ, cᵀ)` where `a_d` is
//! row `d` of `A`; see [`ProposalParams::to_flat`].

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::importance::{self, LogWeights, NormalizedWeights};
use crate::rng::standard_normal;

const LN_2PI: f64 = 1.837_877_066_409_345_3;
const SYMMETRY_TOLERANCE: f64 = 1e-12;

/// Generative model with cached factorisations of `Σ`, `I + Σ` and `P`.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    mu: DVector<f64>,
    sigma: DMatrix<f64>,
    sigma_inv: DMatrix<f64>,
    posterior_cov: DMatrix<f64>,
    sigma_chol: Cholesky<f64, Dyn>,
    marginal_chol: Cholesky<f64, Dyn>,
    log_det_sigma: f64,
}

fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// `log N(v; mean, LLᵀ)` via a triangular solve.
fn gaussian_log_density(chol: &Cholesky<f64, Dyn>, v: &DVector<f64>, mean: &DVector<f64>) -> f64 {
    let diff = v - mean;
    let y = chol
        .l_dirty()
        .lower_triangle()
        .solve_lower_triangular(&diff)
        .expect("Cholesky factor has a positive diagonal");
    -0.5 * (v.len() as f64 * LN_2PI + log_det(chol) + y.norm_squared())
}

impl ModelSpec {
    /// Fails with [`Error::NotPositiveDefinite`] if `Σ` is asymmetric or not SPD.
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let d = mu.len();
        if d == 0 {
            return Err(Error::InvalidInput("model dimension must be positive".into()));
        }
        check_dim(d, sigma.nrows())?;
        check_dim(d, sigma.ncols())?;
        if mu.iter().chain(sigma.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("model parameters must be finite".into()));
        }
        for i in 0..d {
            for j in 0..i {
                let (a, b) = (sigma[(i, j)], sigma[(j, i)]);
                if (a - b).abs() > SYMMETRY_TOLERANCE * a.abs().max(b.abs()).max(1.0) {
                    return Err(Error::NotPositiveDefinite);
                }
            }
        }
        let sigma_chol = Cholesky::new(sigma.clone()).ok_or(Error::NotPositiveDefinite)?;
        let mut sigma_inv = sigma_chol.inverse();
        symmetrize(&mut sigma_inv);

        let precision = &sigma_inv + DMatrix::identity(d, d);
        let mut posterior_cov = Cholesky::new(precision)
            .ok_or(Error::NotPositiveDefinite)?
            .inverse();
        symmetrize(&mut posterior_cov);

        let marginal_chol =
            Cholesky::new(&sigma + DMatrix::identity(d, d)).ok_or(Error::NotPositiveDefinite)?;
        let log_det_sigma = log_det(&sigma_chol);

        Ok(Self {
            mu,
            sigma,
            sigma_inv,
            posterior_cov,
            sigma_chol,
            marginal_chol,
            log_det_sigma,
        })
    }

    /// Same covariance, new prior mean; reuses the cached factorisations.
    pub fn with_mu(&self, mu: DVector<f64>) -> Result<Self> {
        check_dim(self.dim(), mu.len())?;
        if mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("prior mean must be finite".into()));
        }
        Ok(Self { mu, ..self.clone() })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn sigma_inv(&self) -> &DMatrix<f64> {
        &self.sigma_inv
    }

    /// `P = (Σ⁻¹ + I)⁻¹`.
    pub fn posterior_cov(&self) -> &DMatrix<f64> {
        &self.posterior_cov
    }

    pub fn sigma_cholesky(&self) -> &Cholesky<f64, Dyn> {
        &self.sigma_chol
    }

    /// Optimal proposal mean intercept `PΣ⁻¹μ`, i.e. the posterior mean at `x = 0`.
    pub fn posterior_intercept(&self) -> DVector<f64> {
        &self.posterior_cov * (&self.sigma_inv * &self.mu)
    }
}

/// Proposal parameters `φ = (A, b, c)` with `C = diag(e^{2c})`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalParams {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DVector<f64>,
}

impl ProposalParams {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, c: DVector<f64>) -> Result<Self> {
        let d = b.len();
        check_dim(d, a.nrows())?;
        check_dim(d, a.ncols())?;
        check_dim(d, c.len())?;
        if a.iter().chain(b.iter()).chain(c.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("proposal parameters must be finite".into()));
        }
        Ok(Self { a, b, c })
    }

    /// `A = 0, b = 0, c = 0`: the standard normal.
    pub fn standard(d: usize) -> Self {
        Self {
            a: DMatrix::zeros(d, d),
            b: DVector::zeros(d),
            c: DVector::zeros(d),
        }
    }

    /// The member of the family whose mean equals the posterior mean for
    /// every `x` and whose variances equal the posterior marginal variances.
    /// It is the exact posterior when `Σ` is diagonal.
    pub fn posterior_matched(model: &ModelSpec) -> Self {
        let p = model.posterior_cov();
        Self {
            a: p.clone(),
            b: model.posterior_intercept(),
            c: p.diagonal().map(|v| 0.5 * v.ln()),
        }
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    /// Length of the flat layout, `D² + 2D`.
    pub fn flat_len(d: usize) -> usize {
        d * d + 2 * d
    }

    /// `(a₁ᵀ, …, a_Dᵀ, bᵀ, cᵀ)` with `a_d` the `d`-th row of `A`.
    pub fn to_flat(&self) -> DVector<f64> {
        let d = self.dim();
        let mut out = DVector::zeros(Self::flat_len(d));
        for row in 0..d {
            for col in 0..d {
                out[row * d + col] = self.a[(row, col)];
            }
        }
        out.rows_mut(d * d, d).copy_from(&self.b);
        out.rows_mut(d * d + d, d).copy_from(&self.c);
        out
    }

    pub fn from_flat(d: usize, flat: &[f64]) -> Result<Self> {
        check_dim(Self::flat_len(d), flat.len())?;
        let a = DMatrix::from_row_slice(d, d, &flat[..d * d]);
        let b = DVector::from_column_slice(&flat[d * d..d * d + d]);
        let c = DVector::from_column_slice(&flat[d * d + d..]);
        Self::new(a, b, c)
    }

    /// Proposal mean `Ax + b`.
    pub fn mean(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b
    }

    /// Standard deviations `e^c`, i.e. the diagonal of `C^{1/2}`.
    pub fn std_dev(&self) -> DVector<f64> {
        self.c.map(f64::exp)
    }
}

fn check_x(d: usize, x: &DVector<f64>, z: &DVector<f64>) -> Result<()> {
    check_dim(d, x.len())?;
    check_dim(d, z.len())
}

/// `log γ_θ(z) = log N(z; μ, Σ) + log N(x; z, I)`.
pub fn log_gamma(model: &ModelSpec, x: &DVector<f64>, z: &DVector<f64>) -> Result<f64> {
    let d = model.dim();
    check_x(d, x, z)?;
    let prior = gaussian_log_density(&model.sigma_chol, z, &model.mu);
    let likelihood = -0.5 * (d as f64 * LN_2PI + (x - z).norm_squared());
    Ok(prior + likelihood)
}

/// `log q_φ(z)` for the diagonal Gaussian `N(Ax + b, diag(e^{2c}))`.
pub fn log_q(phi: &ProposalParams, x: &DVector<f64>, z: &DVector<f64>) -> Result<f64> {
    let d = phi.dim();
    check_x(d, x, z)?;
    let mean = phi.mean(x);
    let mut acc = 0.0;
    for i in 0..d {
        let u = (z[i] - mean[i]) * (-phi.c[i]).exp();
        acc += 0.5 * LN_2PI + phi.c[i] + 0.5 * u * u;
    }
    Ok(-acc)
}

/// `h(e) = Ax + b + C^{1/2} e`.
pub fn reparam_forward(phi: &ProposalParams, x: &DVector<f64>, e: &DVector<f64>) -> Result<DVector<f64>> {
    check_x(phi.dim(), x, e)?;
    Ok(phi.mean(x) + phi.std_dev().component_mul(e))
}

/// `h⁻¹(z) = C^{-1/2}(z − Ax − b)`.
pub fn reparam_inverse(phi: &ProposalParams, x: &DVector<f64>, z: &DVector<f64>) -> Result<DVector<f64>> {
    check_x(phi.dim(), x, z)?;
    Ok((z - phi.mean(x)).component_div(&phi.std_dev()))
}

/// Posterior mean `ν` and covariance `P`.
pub fn posterior_params(model: &ModelSpec, x: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_dim(model.dim(), x.len())?;
    let nu = &model.posterior_cov * (&model.sigma_inv * &model.mu + x);
    Ok((nu, model.posterior_cov.clone()))
}

/// `log Z = log N(x; μ, I + Σ)`.
pub fn log_marginal_likelihood(model: &ModelSpec, x: &DVector<f64>) -> Result<f64> {
    check_dim(model.dim(), x.len())?;
    Ok(gaussian_log_density(&model.marginal_chol, x, &model.mu))
}

/// Maximum-likelihood prior mean: the componentwise sample mean.
pub fn theta_ml(observations: &[DVector<f64>]) -> Result<DVector<f64>> {
    let first = observations
        .first()
        .ok_or_else(|| Error::InvalidInput("need at least one observation".into()))?;
    let mut sum = DVector::zeros(first.len());
    for x in observations {
        check_dim(first.len(), x.len())?;
        sum += x;
    }
    Ok(sum / observations.len() as f64)
}

/// `∇_θ log γ = Σ⁻¹(z − μ)`.
pub fn grad_theta_log_gamma(model: &ModelSpec, z: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim(model.dim(), z.len())?;
    Ok(&model.sigma_inv * (z - &model.mu))
}

/// `∇_z log γ = Σ⁻¹(μ − z) + x − z`.
pub fn grad_z_log_gamma(model: &ModelSpec, x: &DVector<f64>, z: &DVector<f64>) -> Result<DVector<f64>> {
    check_x(model.dim(), x, z)?;
    Ok(&model.sigma_inv * (&model.mu - z) + x - z)
}

/// `∇_z log q = −C⁻¹(z − Ax − b)`.
pub fn grad_z_log_q(phi: &ProposalParams, x: &DVector<f64>, z: &DVector<f64>) -> Result<DVector<f64>> {
    check_x(phi.dim(), x, z)?;
    let inv_var = phi.c.map(|c| (-2.0 * c).exp());
    Ok(-(z - phi.mean(x)).component_mul(&inv_var))
}

/// `∇_z log w = ∇_z log γ − ∇_z log q`.
pub fn grad_z_log_weight(
    model: &ModelSpec,
    phi: &ProposalParams,
    x: &DVector<f64>,
    z: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_dim(model.dim(), phi.dim())?;
    Ok(grad_z_log_gamma(model, x, z)? - grad_z_log_q(phi, x, z)?)
}

/// Score `∇_φ log q_φ(z)` in flat layout, with `e = h⁻¹(z)`:
/// `a_d`-block `e^{-c_d} e_d x`, `b`-block `C^{-1/2} e`, `c`-block `e ⊙ e − 1`.
pub fn score_phi(phi: &ProposalParams, x: &DVector<f64>, z: &DVector<f64>) -> Result<DVector<f64>> {
    let d = phi.dim();
    let e = reparam_inverse(phi, x, z)?;
    let mut out = DVector::zeros(ProposalParams::flat_len(d));
    for row in 0..d {
        let scale = e[row] * (-phi.c[row]).exp();
        out.rows_mut(row * d, d).copy_from(&(x * scale));
        out[d * d + row] = scale;
        out[d * d + d + row] = e[row] * e[row] - 1.0;
    }
    Ok(out)
}

/// Path derivative `▼_ψ(z)`: the φ-gradient of `log w_{ψ'}(h_φ(e))` through
/// `h_φ` only, with `ψ'` frozen. Blocks: `a_d ↦ g_d x`, `b ↦ g`,
/// `c ↦ e ⊙ C^{1/2} g` where `g = ∇_z log w`.
pub fn path_derivative(
    model: &ModelSpec,
    phi: &ProposalParams,
    x: &DVector<f64>,
    z: &DVector<f64>,
) -> Result<DVector<f64>> {
    let d = phi.dim();
    let g = grad_z_log_weight(model, phi, x, z)?;
    let e = reparam_inverse(phi, x, z)?;
    let mut out = DVector::zeros(ProposalParams::flat_len(d));
    for row in 0..d {
        out.rows_mut(row * d, d).copy_from(&(x * g[row]));
        out[d * d + row] = g[row];
        out[d * d + d + row] = e[row] * phi.c[row].exp() * g[row];
    }
    Ok(out)
}

/// `K` particles drawn from `q_φ` for one observation, with every per-particle
/// quantity the estimators need.
///
/// Per-particle quantities are stored column-wise: column `k` of each matrix
/// belongs to particle `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    pub x: DVector<f64>,
    /// Standard-normal noise `eᵏ` (D × K).
    pub noise: DMatrix<f64>,
    /// Particles `zᵏ = h(eᵏ)` (D × K).
    pub particles: DMatrix<f64>,
    pub log_weights: LogWeights,
    /// Self-normalised weights, computed once and shared by all gradients.
    pub weights: NormalizedWeights,
    /// `∇_θ log γ(zᵏ)` (D × K).
    pub grad_theta: DMatrix<f64>,
    /// `∇_z log w(zᵏ)` (D × K).
    pub grad_z_log_w: DMatrix<f64>,
    /// `∇_φ log q(zᵏ)` in flat layout (P × K).
    pub score: DMatrix<f64>,
    /// `▼_ψ(zᵏ)` in flat layout (P × K).
    pub path: DMatrix<f64>,
}

impl ParticleSet {
    /// Builds the set from explicit noise draws (one column per particle).
    pub fn from_noise(
        model: &ModelSpec,
        phi: &ProposalParams,
        x: &DVector<f64>,
        noise: DMatrix<f64>,
    ) -> Result<Self> {
        let d = model.dim();
        check_dim(d, phi.dim())?;
        check_dim(d, x.len())?;
        check_dim(d, noise.nrows())?;
        let k = noise.ncols();
        if k == 0 {
            return Err(Error::InvalidInput("need at least one particle".into()));
        }
        let p = ProposalParams::flat_len(d);

        let mean = phi.mean(x);
        let std: Vec<f64> = phi.c.iter().map(|c| c.exp()).collect();
        let sum_c: f64 = phi.c.iter().sum();
        let log_norm = -0.5 * d as f64 * LN_2PI;
        let prior_const = log_norm - 0.5 * model.log_det_sigma;

        let sigma_inv = model.sigma_inv.as_slice();
        let mut particles = vec![0.0; d * k];
        let mut grad_theta = vec![0.0; d * k];
        let mut grad_z_log_w = vec![0.0; d * k];
        let mut score = vec![0.0; p * k];
        let mut path = vec![0.0; p * k];
        let mut log_w = Vec::with_capacity(k);
        let mut resid = vec![0.0; d];

        for j in 0..k {
            let e = &noise.as_slice()[j * d..(j + 1) * d];
            let z = &mut particles[j * d..(j + 1) * d];
            let gt = &mut grad_theta[j * d..(j + 1) * d];
            let gw = &mut grad_z_log_w[j * d..(j + 1) * d];
            let sc = &mut score[j * p..(j + 1) * p];
            let pa = &mut path[j * p..(j + 1) * p];

            let mut log_q = log_norm - sum_c;
            let mut log_lik = log_norm;
            for i in 0..d {
                z[i] = mean[i] + std[i] * e[i];
                resid[i] = z[i] - model.mu[i];
                log_q -= 0.5 * e[i] * e[i];
                log_lik -= 0.5 * (x[i] - z[i]) * (x[i] - z[i]);
            }
            // Σ⁻¹ is symmetric, so its column i doubles as row i.
            let mut quad = 0.0;
            for i in 0..d {
                let row = &sigma_inv[i * d..(i + 1) * d];
                let yi: f64 = row.iter().zip(&resid).map(|(s, r)| s * r).sum();
                gt[i] = yi;
                quad += resid[i] * yi;
            }
            log_w.push(prior_const - 0.5 * quad + log_lik - log_q);

            for i in 0..d {
                let e_over_s = e[i] / std[i];
                let g = -gt[i] + x[i] - z[i] + e_over_s;
                gw[i] = g;
                let (sa, pa_row) = (&mut sc[i * d..(i + 1) * d], &mut pa[i * d..(i + 1) * d]);
                for l in 0..d {
                    sa[l] = e_over_s * x[l];
                    pa_row[l] = g * x[l];
                }
                sc[d * d + i] = e_over_s;
                pa[d * d + i] = g;
                sc[d * d + d + i] = e[i] * e[i] - 1.0;
                pa[d * d + d + i] = e[i] * std[i] * g;
            }
        }
        let particles = DMatrix::from_vec(d, k, particles);
        let grad_theta = DMatrix::from_vec(d, k, grad_theta);
        let grad_z_log_w = DMatrix::from_vec(d, k, grad_z_log_w);
        let score = DMatrix::from_vec(p, k, score);
        let path = DMatrix::from_vec(p, k, path);

        let log_weights = LogWeights::new(log_w)?;
        let weights = importance::self_normalize(&log_weights);
        Ok(Self {
            x: x.clone(),
            noise,
            particles,
            log_weights,
            weights,
            grad_theta,
            grad_z_log_w,
            score,
            path,
        })
    }

    pub fn len(&self) -> usize {
        self.noise.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.noise.nrows()
    }
}

/// Draws `K` i.i.d. particles from `q_φ` using `rng`. Noise is consumed
/// particle by particle, component by component.
pub fn sample_particles<R: Rng + ?Sized>(
    model: &ModelSpec,
    phi: &ProposalParams,
    x: &DVector<f64>,
    k: usize,
    rng: &mut R,
) -> Result<ParticleSet> {
    if k == 0 {
        return Err(Error::InvalidInput("K must be at least 1".into()));
    }
    let d = model.dim();
    let mut noise = DMatrix::zeros(d, k);
    for j in 0..k {
        for i in 0..d {
            noise[(i, j)] = standard_normal(rng);
        }
    }
    ParticleSet::from_noise(model, phi, x, noise)
}
