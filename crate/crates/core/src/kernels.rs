//! Covariance functions for GP priors.
//!
//! Two families are provided:
//!
//! * `RbfArd`: `k(x, x') = σ_f² exp(−½ Σᵢ (xᵢ − x'ᵢ)² / ℓᵢ²)`.
//! * `ReluLimit`: the covariance of a one-hidden-layer ReLU network in the
//!   infinite-width limit, with `N(0, weight_variance)` weights,
//!   `N(0, bias_variance)` biases and every pre-activation divided by
//!   `√(fan_in + 1)`. With the bias-augmented input `x̃ = (x/ℓ, 1)` the hidden
//!   pre-activation covariance is `Σ(x, x') = (σ_w² x·x'/ℓ² + σ_b²)/(d + 1)` and
//!   the output covariance is the degree-1 arc-cosine kernel
//!   `σ_w²/(2π) · √(Σ(x,x)Σ(x',x')) · (sin θ + (π − θ) cos θ)`,
//!   where `cos θ = Σ(x,x')/√(Σ(x,x)Σ(x',x'))`. The output bias contributes
//!   `σ_b²/(V + 1)`, which vanishes in the limit.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::gaussian::SymMatrix;

fn default_lengthscale() -> f64 {
    1.0
}

/// Kernel family and hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    RbfArd {
        lengthscales: Vec<f64>,
        signal_variance: f64,
    },
    ReluLimit {
        weight_variance: f64,
        bias_variance: f64,
        /// Inputs are divided by this before entering the network.
        #[serde(default = "default_lengthscale")]
        lengthscale: f64,
    },
}

/// Which family to fit, without hyperparameter values.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    RbfArd,
    ReluLimit,
}

impl KernelSpec {
    pub fn rbf(lengthscales: Vec<f64>, signal_variance: f64) -> Self {
        KernelSpec::RbfArd { lengthscales, signal_variance }
    }

    pub fn relu_limit(weight_variance: f64, bias_variance: f64) -> Self {
        KernelSpec::ReluLimit { weight_variance, bias_variance, lengthscale: 1.0 }
    }

    pub fn family(&self) -> KernelFamily {
        match self {
            KernelSpec::RbfArd { .. } => KernelFamily::RbfArd,
            KernelSpec::ReluLimit { .. } => KernelFamily::ReluLimit,
        }
    }

    /// Checks parameter positivity, and the lengthscale count when `input_dim`
    /// is given.
    pub fn validate(&self, input_dim: Option<usize>) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} must be positive and finite, got {v}")))
            }
        };
        match self {
            KernelSpec::RbfArd { lengthscales, signal_variance } => {
                positive("signal_variance", *signal_variance)?;
                if lengthscales.is_empty() {
                    return Err(Error::InvalidArgument("RBF needs at least one lengthscale".into()));
                }
                for &l in lengthscales {
                    positive("lengthscale", l)?;
                }
                if let Some(d) = input_dim {
                    check_dim(d, lengthscales.len())?;
                }
            }
            KernelSpec::ReluLimit { weight_variance, bias_variance, lengthscale } => {
                positive("weight_variance", *weight_variance)?;
                positive("lengthscale", *lengthscale)?;
                if !(*bias_variance >= 0.0 && bias_variance.is_finite()) {
                    return Err(Error::InvalidArgument(format!(
                        "bias_variance must be non-negative, got {bias_variance}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Kernel value for a single pair of inputs.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            KernelSpec::RbfArd { lengthscales, signal_variance } => {
                let r2: f64 = x
                    .iter()
                    .zip(y)
                    .zip(lengthscales)
                    .map(|((a, b), l)| {
                        let t = (a - b) / l;
                        t * t
                    })
                    .sum();
                signal_variance * (-0.5 * r2).exp()
            }
            KernelSpec::ReluLimit { weight_variance, bias_variance, lengthscale } => {
                let fan = (x.len() + 1) as f64;
                let l2 = lengthscale * lengthscale;
                let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| u * v).sum::<f64>();
                let sxx = (weight_variance * dot(x, x) / l2 + bias_variance) / fan;
                let syy = (weight_variance * dot(y, y) / l2 + bias_variance) / fan;
                let sxy = (weight_variance * dot(x, y) / l2 + bias_variance) / fan;
                let norm = (sxx * syy).sqrt();
                if norm <= 0.0 {
                    return 0.0;
                }
                let cos = (sxy / norm).clamp(-1.0, 1.0);
                let theta = cos.acos();
                weight_variance * norm * (theta.sin() + (PI - theta) * cos) / (2.0 * PI)
            }
        }
    }

    /// Hyperparameters in log space: RBF `[ln ℓ₁ … ln ℓ_d, ln σ_f²]`,
    /// ReLU `[ln σ_w², ln σ_b², ln ℓ]`.
    pub fn log_params(&self) -> Vec<f64> {
        match self {
            KernelSpec::RbfArd { lengthscales, signal_variance } => {
                let mut p: Vec<f64> = lengthscales.iter().map(|l| l.ln()).collect();
                p.push(signal_variance.ln());
                p
            }
            KernelSpec::ReluLimit { weight_variance, bias_variance, lengthscale } => {
                vec![weight_variance.ln(), bias_variance.ln(), lengthscale.ln()]
            }
        }
    }

    pub fn with_log_params(&self, p: &[f64]) -> Self {
        match self {
            KernelSpec::RbfArd { lengthscales, .. } => {
                let d = lengthscales.len();
                KernelSpec::RbfArd {
                    lengthscales: p[..d].iter().map(|v| v.exp()).collect(),
                    signal_variance: p[d].exp(),
                }
            }
            KernelSpec::ReluLimit { .. } => KernelSpec::ReluLimit {
                weight_variance: p[0].exp(),
                bias_variance: p[1].exp(),
                lengthscale: p[2].exp(),
            },
        }
    }

    /// Multiplies every lengthscale by `factor`.
    pub fn scale_lengthscales(&self, factor: f64) -> Self {
        match self {
            KernelSpec::RbfArd { lengthscales, signal_variance } => KernelSpec::RbfArd {
                lengthscales: lengthscales.iter().map(|l| l * factor).collect(),
                signal_variance: *signal_variance,
            },
            KernelSpec::ReluLimit { weight_variance, bias_variance, lengthscale } => {
                KernelSpec::ReluLimit {
                    weight_variance: *weight_variance,
                    bias_variance: *bias_variance,
                    lengthscale: lengthscale * factor,
                }
            }
        }
    }

    fn check_input(&self, d: usize) -> Result<()> {
        if let KernelSpec::RbfArd { lengthscales, .. } = self {
            check_dim(lengthscales.len(), d)?;
        }
        Ok(())
    }
}

fn row(x: &DMatrix<f64>, i: usize) -> Vec<f64> {
    x.row(i).iter().copied().collect()
}

/// Cross-covariance matrix `[k(xᵢ, x2ⱼ)]`.
pub fn gram(spec: &KernelSpec, x: &DMatrix<f64>, x2: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_dim(x.ncols(), x2.ncols())?;
    spec.check_input(x.ncols())?;
    let a: Vec<Vec<f64>> = (0..x.nrows()).map(|i| row(x, i)).collect();
    let b: Vec<Vec<f64>> = (0..x2.nrows()).map(|j| row(x2, j)).collect();
    Ok(DMatrix::from_fn(x.nrows(), x2.nrows(), |i, j| spec.eval(&a[i], &b[j])))
}

/// `gram(spec, x, x)` as an exactly symmetric matrix.
pub fn gram_sym(spec: &KernelSpec, x: &DMatrix<f64>) -> Result<SymMatrix> {
    spec.check_input(x.ncols())?;
    let n = x.nrows();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| row(x, i)).collect();
    let mut k = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in j..n {
            let v = spec.eval(&rows[i], &rows[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    SymMatrix::new(k)
}

/// Diagonal of `gram(spec, x, x)`.
pub fn gram_diag(spec: &KernelSpec, x: &DMatrix<f64>) -> Result<DVector<f64>> {
    spec.check_input(x.ncols())?;
    Ok(DVector::from_fn(x.nrows(), |i, _| {
        let r = row(x, i);
        spec.eval(&r, &r)
    }))
}

/// Derivatives of `gram_sym(spec, x)` with respect to each entry of
/// [`KernelSpec::log_params`].
pub fn gram_log_param_grads(spec: &KernelSpec, x: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
    spec.check_input(x.ncols())?;
    let n = x.nrows();
    match spec {
        KernelSpec::RbfArd { lengthscales, .. } => {
            let k = gram_sym(spec, x)?.into_inner();
            let mut grads = Vec::with_capacity(lengthscales.len() + 1);
            for (dim, l) in lengthscales.iter().enumerate() {
                grads.push(DMatrix::from_fn(n, n, |i, j| {
                    let r = (x[(i, dim)] - x[(j, dim)]) / l;
                    k[(i, j)] * r * r
                }));
            }
            grads.push(k);
            Ok(grads)
        }
        KernelSpec::ReluLimit { .. } => {
            // central differences; only used when fitting this family
            let base = spec.log_params();
            let h = 1e-5;
            let mut grads = Vec::with_capacity(base.len());
            for p in 0..base.len() {
                let mut up = base.clone();
                let mut dn = base.clone();
                up[p] += h;
                dn[p] -= h;
                let ku = gram_sym(&spec.with_log_params(&up), x)?.into_inner();
                let kd = gram_sym(&spec.with_log_params(&dn), x)?.into_inner();
                grads.push((ku - kd) / (2.0 * h));
            }
            Ok(grads)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;
    use approx::assert_abs_diff_eq;
    use nalgebra::SymmetricEigen;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn randn(rng: &mut impl Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    #[test]
    fn rbf_at_zero_distance_is_signal_variance() {
        let k = KernelSpec::rbf(vec![0.7, 2.0], 1.3);
        assert_eq!(k.eval(&[0.4, -1.0], &[0.4, -1.0]), 1.3);
    }

    #[test]
    fn rbf_unit_lengthscale_squared_distance_two() {
        let k = KernelSpec::rbf(vec![1.0, 1.0], 1.0);
        assert_abs_diff_eq!(k.eval(&[0.0, 0.0], &[1.0, 1.0]), (-1.0f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn gram_diag_matches_gram() {
        let mut rng = seeded_rng(4);
        let x = randn(&mut rng, 8, 3);
        for spec in [KernelSpec::rbf(vec![0.5, 1.0, 2.0], 2.0), KernelSpec::relu_limit(1.5, 0.5)] {
            let g = gram(&spec, &x, &x).unwrap();
            assert_eq!(gram_diag(&spec, &x).unwrap(), g.diagonal());
        }
        let rbf = KernelSpec::rbf(vec![1.0; 3], 2.5);
        assert!(gram_diag(&rbf, &x).unwrap().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn gram_dimension_mismatch() {
        let spec = KernelSpec::relu_limit(1.0, 1.0);
        let err = gram(&spec, &DMatrix::zeros(2, 3), &DMatrix::zeros(2, 4)).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
        let rbf = KernelSpec::rbf(vec![1.0; 2], 1.0);
        assert!(gram_sym(&rbf, &DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn relu_limit_at_origin_matches_bias_only_network() {
        // At x = 0 each hidden unit sees only its bias b/√(d+1); the output
        // variance is σ_w²·E[relu(a)²] over that bias distribution.
        let (wv, bv, d) = (1.7, 0.6, 3usize);
        let spec = KernelSpec::relu_limit(wv, bv);
        let got = gram_diag(&spec, &DMatrix::zeros(1, d)).unwrap()[0];

        let mut rng = seeded_rng(10);
        let m = 400_000;
        let scale = (bv / (d as f64 + 1.0)).sqrt();
        let mean_sq: f64 = (0..m)
            .map(|_| {
                let a: f64 = scale * rng.sample::<f64, _>(StandardNormal);
                let r = a.max(0.0);
                r * r
            })
            .sum::<f64>()
            / m as f64;
        let mc = wv * mean_sq;
        assert!((got - mc).abs() < 0.01 * got, "{got} vs {mc}");
    }

    /// Finite-width networks drawn exactly as the kernel describes; output
    /// weights are integrated analytically so each draw contributes
    /// `(σ_w² h(x)·h(x') + σ_b²)/(V+1)`.
    fn wide_network_covariance(
        x: &DMatrix<f64>,
        wv: f64,
        bv: f64,
        width: usize,
        networks: usize,
        seed: u64,
    ) -> DMatrix<f64> {
        let (n, d) = x.shape();
        let mut rng = seeded_rng(seed);
        let mut acc = DMatrix::zeros(n, n);
        let in_scale = 1.0 / ((d + 1) as f64).sqrt();
        for _ in 0..networks {
            let w = randn(&mut rng, d, width) * wv.sqrt();
            let b = randn(&mut rng, 1, width) * bv.sqrt();
            let mut h = x * &w;
            for mut r in h.row_iter_mut() {
                r += &b;
            }
            let h = h.map(|a| (a * in_scale).max(0.0));
            acc += (&h * h.transpose() * wv).add_scalar(bv) / (width as f64 + 1.0);
        }
        acc / networks as f64
    }

    #[test]
    fn relu_limit_matches_wide_network_monte_carlo() {
        let mut rng = seeded_rng(12);
        let x = randn(&mut rng, 10, 3);
        let (wv, bv) = (1.0, 1.0);
        let k = gram(&KernelSpec::relu_limit(wv, bv), &x, &x).unwrap();
        let emp = wide_network_covariance(&x, wv, bv, 4096, 200, 99);
        let err = (&k - &emp).abs().max();
        assert!(err <= 0.05, "max entrywise error {err}");
    }

    #[test]
    fn relu_limit_matches_sampled_network_outputs() {
        // Fully sampled networks (output layer included), narrower but many.
        let mut rng = seeded_rng(13);
        let x = randn(&mut rng, 10, 3);
        let (n, d) = x.shape();
        let (wv, bv, width, nets) = (1.0f64, 1.0f64, 512usize, 20_000usize);
        let in_scale = 1.0 / ((d + 1) as f64).sqrt();
        let out_scale = 1.0 / ((width + 1) as f64).sqrt();
        let mut outputs = DMatrix::zeros(nets, n);
        for t in 0..nets {
            let w = randn(&mut rng, d, width) * wv.sqrt();
            let b = randn(&mut rng, 1, width) * bv.sqrt();
            let v = randn(&mut rng, width, 1) * wv.sqrt();
            let b2: f64 = rng.sample::<f64, _>(StandardNormal) * bv.sqrt();
            let mut h = &x * &w;
            for mut r in h.row_iter_mut() {
                r += &b;
            }
            let h = h.map(|a| (a * in_scale).max(0.0));
            let f = (h * v).add_scalar(b2) * out_scale;
            outputs.row_mut(t).copy_from(&f.transpose());
        }
        let (_, emp) = crate::gaussian::empirical_covariance(&outputs);
        let k = gram(&KernelSpec::relu_limit(wv, bv), &x, &x).unwrap();
        let err = (&k - &emp).abs().max();
        assert!(err <= 0.05, "max entrywise error {err}");
    }

    #[test]
    fn relu_limit_rotation_invariant() {
        let mut rng = seeded_rng(14);
        let x = randn(&mut rng, 12, 4);
        let q = randn(&mut rng, 4, 4).qr().q();
        let spec = KernelSpec::relu_limit(1.3, 0.8);
        let k1 = gram(&spec, &x, &x).unwrap();
        let xq = &x * q;
        let k2 = gram(&spec, &xq, &xq).unwrap();
        assert!((k1 - k2).norm() <= 1e-10);
    }

    #[test]
    fn rbf_gradients_match_finite_differences() {
        let mut rng = seeded_rng(15);
        let x = randn(&mut rng, 6, 2);
        let spec = KernelSpec::rbf(vec![0.8, 1.7], 1.4);
        let grads = gram_log_param_grads(&spec, &x).unwrap();
        let p = spec.log_params();
        for (k, g) in grads.iter().enumerate() {
            let mut up = p.clone();
            let mut dn = p.clone();
            up[k] += 1e-6;
            dn[k] -= 1e-6;
            let fd = (gram_sym(&spec.with_log_params(&up), &x).unwrap().into_inner()
                - gram_sym(&spec.with_log_params(&dn), &x).unwrap().into_inner())
                / 2e-6;
            assert!((g - fd).abs().max() < 1e-7);
        }
    }

    #[test]
    fn validation() {
        assert!(KernelSpec::rbf(vec![1.0, -1.0], 1.0).validate(None).is_err());
        assert!(KernelSpec::rbf(vec![1.0], 1.0).validate(Some(2)).is_err());
        assert!(KernelSpec::relu_limit(1.0, 0.0).validate(None).is_ok());
        assert!(KernelSpec::relu_limit(0.0, 1.0).validate(None).is_err());
    }

    #[test]
    fn serde_roundtrip_with_default_lengthscale() {
        let k: KernelSpec =
            serde_json::from_str(r#"{"type":"relu_limit","weight_variance":1.0,"bias_variance":0.5}"#).unwrap();
        assert_eq!(k, KernelSpec::relu_limit(1.0, 0.5));
        assert!(serde_json::from_str::<KernelSpec>(r#"{"type":"rbf_ard","lengthscales":[1],"signal_variance":1,"bogus":1}"#).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn gram_is_symmetric_psd(seed in 0u64..5_000, n in 2usize..25, d in 1usize..5, relu in any::<bool>()) {
            let mut rng = seeded_rng(seed);
            let x = randn(&mut rng, n, d);
            let spec = if relu {
                KernelSpec::relu_limit(rng.random_range(0.2..3.0), rng.random_range(0.0..2.0))
            } else {
                KernelSpec::rbf((0..d).map(|_| rng.random_range(0.5..3.0)).collect(), rng.random_range(0.2..3.0))
            };
            let g = gram_sym(&spec, &x).unwrap();
            let tr = g.as_matrix().trace();
            let eig = SymmetricEigen::new(g.as_matrix().clone()).eigenvalues;
            prop_assert!(eig.min() >= -1e-8 * tr / n as f64);
            if let KernelSpec::RbfArd { signal_variance, .. } = spec {
                prop_assert!(g.as_matrix().iter().all(|&v| v > 0.0 && v <= signal_variance));
            }
        }
    }
}
