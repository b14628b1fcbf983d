//! Randomised self-checks: the finite-difference suite over every analytic
//! gradient and the exact estimator identities.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::Result;
use crate::estimators::{phi_gradient, EstimatorKind};
use crate::gaussian::{
    grad_theta_log_gamma, grad_z_log_gamma, grad_z_log_q, log_gamma, log_q, path_derivative, reparam_forward,
    reparam_inverse, sample_particles, score_phi, ModelSpec, ProposalParams,
};
use crate::oracles::{fd_gradient, FdSpec};
use crate::rng::{standard_normal, stream, Purpose};

/// Maximum relative error accepted by the finite-difference suite.
pub const FD_TOLERANCE: f64 = 1e-6;
pub const STL_IDENTITY_TOLERANCE: f64 = 1e-13;
pub const DREG_IDENTITY_TOLERANCE: f64 = 1e-12;
pub const ZERO_VARIANCE_TOLERANCE: f64 = 1e-10;
/// Minimum per-component SD required of the score-based estimators at the optimum.
pub const SCORE_SD_FLOOR: f64 = 1e-6;

/// A random model, proposal and observation.
#[derive(Debug, Clone)]
pub struct RandomInstance {
    pub model: ModelSpec,
    pub phi: ProposalParams,
    pub x: DVector<f64>,
}

fn normals<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| standard_normal(rng)).collect()
}

/// `Σ = BBᵀ/D + I/2` with standard-normal `B`; `A` entries have SD 0.3 and
/// `c` lies in `[-0.5, 0.5]`.
pub fn random_instance<R: Rng + ?Sized>(d: usize, rng: &mut R) -> RandomInstance {
    let b = DMatrix::from_vec(d, d, normals(d * d, rng));
    let mut sigma = &b * b.transpose() / d as f64 + DMatrix::identity(d, d) * 0.5;
    let t = sigma.transpose();
    sigma = (sigma + t) * 0.5;
    let mu = DVector::from_vec(normals(d, rng));
    let model = ModelSpec::new(mu, sigma).expect("construction is SPD");
    let a = DMatrix::from_vec(d, d, normals(d * d, rng)) * 0.3;
    let bvec = DVector::from_vec(normals(d, rng));
    let c = DVector::from_fn(d, |_, _| rng.random_range(-0.5..0.5));
    let phi = ProposalParams::new(a, bvec, c).expect("finite parameters");
    let x = DVector::from_vec(normals(d, rng));
    RandomInstance { model, phi, x }
}

/// Worst relative error of one formula over all points.
#[derive(Debug, Clone, PartialEq)]
pub struct FormulaCheck {
    pub name: &'static str,
    pub points: usize,
    pub max_rel_error: f64,
}

impl FormulaCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= FD_TOLERANCE
    }
}

pub const FORMULA_NAMES: [&str; 9] = [
    "grad_theta_log_gamma",
    "grad_z_log_gamma",
    "grad_z_log_q",
    "score_a",
    "score_b",
    "score_c",
    "path_a",
    "path_b",
    "path_c",
];

/// `‖analytic − fd‖∞ / max(‖fd‖∞, 1)`.
pub fn relative_error(analytic: &[f64], fd: &[f64]) -> f64 {
    let diff = analytic.iter().zip(fd).map(|(a, f)| (a - f).abs()).fold(0.0, f64::max);
    let scale = fd.iter().map(|f| f.abs()).fold(1.0, f64::max);
    diff / scale
}

fn flat_block(v: &DVector<f64>, d: usize, block: usize) -> &[f64] {
    let s = v.as_slice();
    match block {
        0 => &s[..d * d],
        1 => &s[d * d..d * d + d],
        _ => &s[d * d + d..],
    }
}

/// Checks every analytic gradient against central differences at
/// `points_per_dim` random instances for each `D` in `dims`.
pub fn gradient_check_suite(dims: &[usize], points_per_dim: usize, seed: u64) -> Result<Vec<FormulaCheck>> {
    let fd = FdSpec::default();
    let mut worst = [0.0f64; 9];
    let mut points = 0;
    for &d in dims {
        for p in 0..points_per_dim {
            let mut rng = stream(seed, d as u64, p as u64, 0, Purpose::MonteCarlo);
            let RandomInstance { model, phi, x } = random_instance(d, &mut rng);
            let e = DVector::from_vec(normals(d, &mut rng));
            let z = reparam_forward(&phi, &x, &e)?;
            let flat = phi.to_flat();
            let sigma = model.sigma().clone();

            let analytic = grad_theta_log_gamma(&model, &z)?;
            let num = fd_gradient(
                |mu| {
                    let m = ModelSpec::new(mu.clone(), sigma.clone()).expect("Σ unchanged");
                    log_gamma(&m, &x, &z).unwrap_or(f64::NAN)
                },
                model.mu(),
                fd,
            )?;
            worst[0] = worst[0].max(relative_error(analytic.as_slice(), num.as_slice()));

            let analytic = grad_z_log_gamma(&model, &x, &z)?;
            let num = fd_gradient(|zz| log_gamma(&model, &x, zz).unwrap_or(f64::NAN), &z, fd)?;
            worst[1] = worst[1].max(relative_error(analytic.as_slice(), num.as_slice()));

            let analytic = grad_z_log_q(&phi, &x, &z)?;
            let num = fd_gradient(|zz| log_q(&phi, &x, zz).unwrap_or(f64::NAN), &z, fd)?;
            worst[2] = worst[2].max(relative_error(analytic.as_slice(), num.as_slice()));

            let analytic = score_phi(&phi, &x, &z)?;
            let num = fd_gradient(
                |f| {
                    let ph = ProposalParams::from_flat(d, f.as_slice()).expect("finite");
                    log_q(&ph, &x, &z).unwrap_or(f64::NAN)
                },
                &flat,
                fd,
            )?;
            for block in 0..3 {
                let err = relative_error(flat_block(&analytic, d, block), flat_block(&num, d, block));
                worst[3 + block] = worst[3 + block].max(err);
            }

            // Differentiate through the sampling path only: the weight's own φ stays frozen.
            let e_frozen = reparam_inverse(&phi, &x, &z)?;
            let analytic = path_derivative(&model, &phi, &x, &z)?;
            let num = fd_gradient(
                |f| {
                    let ph = ProposalParams::from_flat(d, f.as_slice()).expect("finite");
                    let zz = reparam_forward(&ph, &x, &e_frozen).expect("dims match");
                    log_gamma(&model, &x, &zz).unwrap_or(f64::NAN) - log_q(&phi, &x, &zz).unwrap_or(f64::NAN)
                },
                &flat,
                fd,
            )?;
            for block in 0..3 {
                let err = relative_error(flat_block(&analytic, d, block), flat_block(&num, d, block));
                worst[6 + block] = worst[6 + block].max(err);
            }
            points += 1;
        }
    }
    Ok(FORMULA_NAMES
        .iter()
        .zip(worst)
        .map(|(&name, max_rel_error)| FormulaCheck {
            name,
            points,
            max_rel_error,
        })
        .collect())
}

/// Outcome of one identity check. `max_deviation` is compared against
/// `tolerance`; for the spread check it is the smallest SD instead and must
/// exceed the floor.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityCheck {
    pub name: String,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

fn max_rel_dev(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let scale = b.amax().max(f64::MIN_POSITIVE);
    (a - b).amax() / scale
}

/// `AISLE_KL = IWAE_STL` and `AISLE_CHISQ = 2K · IWAE_DREG` on `configs`
/// random instances with `D ≤ 10`, `K ≤ 64`.
pub fn estimator_identity_checks(configs: usize, seed: u64) -> Result<Vec<IdentityCheck>> {
    let (mut stl, mut dreg) = (0.0f64, 0.0f64);
    for j in 0..configs {
        let mut rng = stream(seed, j as u64, 0, 0, Purpose::MonteCarlo);
        let d = rng.random_range(1..=10);
        let k = rng.random_range(1..=64);
        let inst = random_instance(d, &mut rng);
        let ps = sample_particles(&inst.model, &inst.phi, &inst.x, k, &mut rng)?;
        let kl = phi_gradient(EstimatorKind::AisleKl, &ps);
        let st = phi_gradient(EstimatorKind::IwaeStl, &ps);
        stl = stl.max(max_rel_dev(&kl, &st));
        let chisq = phi_gradient(EstimatorKind::AisleChisq, &ps);
        let dr = phi_gradient(EstimatorKind::IwaeDreg, &ps) * (2.0 * k as f64);
        dreg = dreg.max(max_rel_dev(&chisq, &dr));
    }
    Ok(vec![
        IdentityCheck {
            name: "aisle_kl = iwae_stl".into(),
            max_deviation: stl,
            tolerance: STL_IDENTITY_TOLERANCE,
            passed: stl <= STL_IDENTITY_TOLERANCE,
        },
        IdentityCheck {
            name: "aisle_chisq = 2K iwae_dreg".into(),
            max_deviation: dreg,
            tolerance: DREG_IDENTITY_TOLERANCE,
            passed: dreg <= DREG_IDENTITY_TOLERANCE,
        },
    ])
}

/// At `Σ = I` and `φ = φ*` the path-derivative estimators vanish on every
/// particle set while IWAE and RWS keep a nonzero spread.
pub fn zero_variance_checks(sets: usize, seed: u64) -> Result<Vec<IdentityCheck>> {
    let (d, k) = (3, 10);
    let mut rng = stream(seed, u64::MAX, 0, 0, Purpose::MonteCarlo);
    let mu = DVector::from_vec(normals(d, &mut rng));
    let x = DVector::from_vec(normals(d, &mut rng));
    let model = ModelSpec::new(mu, DMatrix::identity(d, d))?;
    let phi = ProposalParams::posterior_matched(&model);

    let vanishing = [
        EstimatorKind::IwaeStl,
        EstimatorKind::IwaeDreg,
        EstimatorKind::AisleKl,
        EstimatorKind::AisleChisq,
        EstimatorKind::RwsDreg,
    ];
    let spread_kinds = [EstimatorKind::Iwae, EstimatorKind::Rws];
    let mut max_norm = [0.0f64; 5];
    let p = ProposalParams::flat_len(d);
    let mut sums = vec![(DVector::<f64>::zeros(p), DVector::<f64>::zeros(p)); 2];
    for j in 0..sets {
        let mut rng = stream(seed, j as u64, 0, 0, Purpose::Particles);
        let ps = sample_particles(&model, &phi, &x, k, &mut rng)?;
        for (slot, kind) in max_norm.iter_mut().zip(vanishing) {
            *slot = slot.max(phi_gradient(kind, &ps).amax());
        }
        for ((s1, s2), kind) in sums.iter_mut().zip(spread_kinds) {
            let g = phi_gradient(kind, &ps);
            *s1 += &g;
            *s2 += g.map(|v| v * v);
        }
    }
    let mut out: Vec<IdentityCheck> = vanishing
        .iter()
        .zip(max_norm)
        .map(|(kind, dev)| IdentityCheck {
            name: format!("{kind} vanishes at optimum"),
            max_deviation: dev,
            tolerance: ZERO_VARIANCE_TOLERANCE,
            passed: dev <= ZERO_VARIANCE_TOLERANCE,
        })
        .collect();
    let n = sets as f64;
    for ((s1, s2), kind) in sums.iter().zip(spread_kinds) {
        let min_sd = s1
            .iter()
            .zip(s2.iter())
            .map(|(a, b)| ((b - a * a / n) / (n - 1.0)).max(0.0).sqrt())
            .fold(f64::INFINITY, f64::min);
        out.push(IdentityCheck {
            name: format!("{kind} keeps spread at optimum (min SD)"),
            max_deviation: min_sd,
            tolerance: SCORE_SD_FLOOR,
            passed: min_sd > SCORE_SD_FLOOR,
        });
    }
    Ok(out)
}
