//! Numerical check of the KL decomposition behind the LogDet/XLL connection.
//!
//! For `p = N(μ_gen, D_gen C_gen D_gen)` and `q = N(μ_ref, D_ref C D_ref)`,
//! with `A = C⁻¹ ∘ C_gen`, `d = (μ_gen − μ_ref)/σ_ref` and `r = σ_gen/σ_ref`,
//!
//! ```text
//! 2 KL(p‖q) = 2 KL(p_c‖q_c) + 2 KL(p_m‖q_m) + ① + ② + ③
//! ① = rᵀAr − 1ᵀA1,  ② = dᵀC⁻¹d − dᵀd,  ③ = b − rᵀr
//! ```
//!
//! where `p_c, q_c` are the zero-mean correlation Gaussians and `p_m, q_m` the
//! diagonal (marginal) Gaussians. `|KL(p‖q) − KL(p_c‖q_c)|` is of order
//! `b^{3/2} √ξ / λ` with `ξ = KL(p_m‖q_m)` and `λ` the smallest eigenvalue of `C`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::logdet_divergence;
use crate::error::{check_dim, Error, Result};
use crate::gaussian::{cholesky, SymMatrix};

/// Largest tolerated `|lhs − rhs|` of the identity.
pub const IDENTITY_TOLERANCE: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct TheoremInstance {
    pub mu_gen: DVector<f64>,
    pub sd_gen: DVector<f64>,
    pub c_gen: SymMatrix,
    pub mu_ref: DVector<f64>,
    pub sd_ref: DVector<f64>,
    pub c: SymMatrix,
}

#[derive(Clone, Debug, Serialize)]
pub struct TheoremReport {
    pub b: usize,
    pub xi: f64,
    pub lambda: f64,
    pub kl_full: f64,
    pub kl_corr: f64,
    pub kl_marg: f64,
    pub term1: f64,
    pub term2: f64,
    pub term3: f64,
    pub residual: f64,
    /// `|kl_full − kl_corr|`.
    pub gap: f64,
    /// `b^{3/2} √ξ / λ`.
    pub bound: f64,
}

fn check_corr(c: &SymMatrix) -> Result<()> {
    if let Some(i) = (0..c.dim()).find(|&i| (c.get(i, i) - 1.0).abs() > 1e-10) {
        return Err(Error::InvalidArgument(format!("correlation matrix has diagonal {} at {i}", c.get(i, i))));
    }
    Ok(())
}

impl TheoremInstance {
    pub fn new(
        mu_gen: DVector<f64>,
        sd_gen: DVector<f64>,
        c_gen: SymMatrix,
        mu_ref: DVector<f64>,
        sd_ref: DVector<f64>,
        c: SymMatrix,
    ) -> Result<Self> {
        let b = mu_gen.len();
        for n in [sd_gen.len(), c_gen.dim(), mu_ref.len(), sd_ref.len(), c.dim()] {
            check_dim(b, n)?;
        }
        check_corr(&c_gen)?;
        check_corr(&c)?;
        if sd_gen.iter().chain(sd_ref.iter()).any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidArgument("standard deviations must be > 0".into()));
        }
        Ok(Self { mu_gen, sd_gen, c_gen, mu_ref, sd_ref, c })
    }

    pub fn b(&self) -> usize {
        self.mu_gen.len()
    }
}

/// Evaluates both sides of the decomposition and the scaling quantities.
pub fn theorem_check(inst: &TheoremInstance) -> Result<TheoremReport> {
    let b = inst.b();
    let bf = b as f64;
    // full KL straight from the two covariance matrices
    let sigma_p = inst.c_gen.scale_both(&inst.sd_gen)?;
    let sigma_q = inst.c.scale_both(&inst.sd_ref)?;
    let lp = cholesky(&sigma_p, &[0.0]).map_err(|_| Error::SingularMatrix)?;
    let lq = cholesky(&sigma_q, &[0.0]).map_err(|_| Error::SingularMatrix)?;
    let dm = &inst.mu_ref - &inst.mu_gen;
    let maha = lq.solve_lower(&dm).norm_squared();
    let kl_full = 0.5 * (lq.log_det() - lp.log_det() - bf + lq.solve_mat(sigma_p.as_matrix()).trace() + maha);

    let kl_corr = logdet_divergence(&inst.c_gen, &inst.c)?;
    let kl_marg = 0.5
        * (0..b)
            .map(|i| {
                let (sg, sr) = (inst.sd_gen[i], inst.sd_ref[i]);
                let z = (inst.mu_gen[i] - inst.mu_ref[i]) / sr;
                2.0 * (sr / sg).ln() - 1.0 + (sg / sr).powi(2) + z * z
            })
            .sum::<f64>();

    let d = (&inst.mu_gen - &inst.mu_ref).component_div(&inst.sd_ref);
    let r = inst.sd_gen.component_div(&inst.sd_ref);
    let lc = cholesky(&inst.c, &[0.0]).map_err(|_| Error::SingularMatrix)?;
    let a = lc.inverse().component_mul(inst.c_gen.as_matrix());
    let ones = DVector::from_element(b, 1.0);
    let term1 = r.dot(&(&a * &r)) - ones.dot(&(&a * &ones));
    let term2 = lc.solve_lower(&d).norm_squared() - d.norm_squared();
    let term3 = bf - r.norm_squared();

    let residual = (2.0 * kl_full - (2.0 * kl_corr + 2.0 * kl_marg + term1 + term2 + term3)).abs();
    if !(residual <= IDENTITY_TOLERANCE) {
        return Err(Error::IdentityViolation { residual });
    }
    let lambda = SymmetricEigen::new(inst.c.as_matrix().clone()).eigenvalues.min();
    Ok(TheoremReport {
        b,
        xi: kl_marg,
        lambda,
        kl_full,
        kl_corr,
        kl_marg,
        term1,
        term2,
        term3,
        residual,
        gap: (kl_full - kl_corr).abs(),
        bound: bf.powf(1.5) * kl_marg.max(0.0).sqrt() / lambda,
    })
}

/// Random correlation matrix: a normalized `G Gᵀ/b + 0.05 I` with Gaussian `G`.
pub fn random_correlation<R: Rng + ?Sized>(rng: &mut R, b: usize) -> SymMatrix {
    let g = DMatrix::from_fn(b, b, |_, _| rng.sample::<f64, _>(StandardNormal));
    let s = &g * g.transpose() / b as f64 + DMatrix::identity(b, b) * 0.05;
    let d = s.diagonal().map(|v| 1.0 / v.sqrt());
    SymMatrix::symmetrize(DMatrix::from_fn(b, b, |i, j| if i == j { 1.0 } else { s[(i, j)] * d[i] * d[j] }))
        .expect("square")
}

/// Marginal perturbations of a fixed generating/candidate pair:
/// `μ_ref = μ_gen + ε σ_gen ∘ δμ`, `σ_ref = σ_gen ∘ exp(ε δs)`.
#[derive(Clone, Debug)]
pub struct PerturbationFamily {
    pub mu_gen: DVector<f64>,
    pub sd_gen: DVector<f64>,
    pub c_gen: SymMatrix,
    pub c: SymMatrix,
    pub delta_mu: DVector<f64>,
    pub delta_s: DVector<f64>,
}

impl PerturbationFamily {
    /// Random family with independent generating and candidate correlations.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, b: usize) -> Self {
        let mut normal = |n: usize| DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mu_gen = normal(b);
        let sd_gen = normal(b).map(|v| (0.3 * v).exp());
        let delta_mu = normal(b);
        let delta_s = normal(b);
        Self { mu_gen, sd_gen, c_gen: random_correlation(rng, b), c: random_correlation(rng, b), delta_mu, delta_s }
    }

    pub fn instance(&self, eps: f64) -> TheoremInstance {
        TheoremInstance {
            mu_gen: self.mu_gen.clone(),
            sd_gen: self.sd_gen.clone(),
            c_gen: self.c_gen.clone(),
            mu_ref: &self.mu_gen + (self.sd_gen.component_mul(&self.delta_mu)) * eps,
            sd_ref: self.sd_gen.zip_map(&self.delta_s, |s, ds| s * (eps * ds).exp()),
            c: self.c.clone(),
        }
    }

    fn xi(&self, eps: f64) -> f64 {
        // ξ depends only on d and r, which are functions of ε, δμ, δs
        0.5 * self
            .delta_mu
            .iter()
            .zip(self.delta_s.iter())
            .map(|(dm, ds)| {
                let r2 = (-2.0 * eps * ds).exp();
                2.0 * eps * ds - 1.0 + r2 + eps * eps * dm * dm * r2
            })
            .sum::<f64>()
    }

    /// Instance whose marginal divergence `ξ` equals `target` (found by bisection on ε).
    pub fn instance_with_xi(&self, target: f64) -> Result<TheoremInstance> {
        if !(target > 0.0) {
            return Err(Error::InvalidArgument("target ξ must be > 0".into()));
        }
        let mut hi = 1e-6;
        while self.xi(hi) < target {
            hi *= 2.0;
            if hi > 1e6 {
                return Err(Error::InvalidArgument("perturbation family cannot reach target ξ".into()));
            }
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.xi(mid) < target { lo = mid } else { hi = mid }
        }
        Ok(self.instance(0.5 * (lo + hi)))
    }
}

/// Random instance with moderate marginal mismatch.
pub fn random_instance<R: Rng + ?Sized>(rng: &mut R, b: usize) -> TheoremInstance {
    let eps = rng.random_range(0.0..0.5);
    PerturbationFamily::random(rng, b).instance(eps)
}
