//! Fully connected ReLU networks with width-normalized pre-activations,
//! `a_l = W_lᵀ [z_{l-1}; 1] / √(V_{l-1}+1)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Layer widths `[d, V_1, …, V_{L-1}, out]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpArch {
    widths: Vec<usize>,
}

impl MlpArch {
    /// Scalar-output network with the given hidden widths.
    pub fn new(input_dim: usize, hidden: &[usize]) -> Result<Self> {
        Self::with_outputs(input_dim, hidden, 1)
    }

    /// Network with `outputs` linear output units (the ensemble's mean/variance head uses 2).
    pub fn with_outputs(input_dim: usize, hidden: &[usize], outputs: usize) -> Result<Self> {
        let mut widths = vec![input_dim];
        widths.extend_from_slice(hidden);
        widths.push(outputs);
        if widths.contains(&0) {
            return Err(Error::InvalidArgument(format!("layer widths must be >= 1, got {widths:?}")));
        }
        Ok(Self { widths })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn outputs(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    /// `Σ_l V_l (V_{l-1} + 1)`.
    pub fn n_weights(&self) -> usize {
        self.widths.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }

    /// Draws weights i.i.d. from `N(0, variance)`.
    pub fn sample_weights<R: Rng + ?Sized>(&self, rng: &mut R, variance: f64) -> Vec<f64> {
        let sd = variance.sqrt();
        (0..self.n_weights()).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect()
    }

    fn layer(&self, w: &[f64], l: usize) -> DMatrix<f64> {
        let off: usize = self.widths[..=l].windows(2).map(|p| (p[0] + 1) * p[1]).sum();
        let (fan_in, fan_out) = (self.widths[l] + 1, self.widths[l + 1]);
        DMatrix::from_row_slice(fan_in, fan_out, &w[off..off + fan_in * fan_out])
    }

    fn check(&self, w: &[f64], x: &DMatrix<f64>) -> Result<()> {
        check_dim(self.n_weights(), w.len())?;
        check_dim(self.input_dim(), x.ncols())
    }

    /// Pre-activations of every layer, input first.
    fn activations(&self, w: &[f64], x: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let mut acts = vec![x.clone()];
        for l in 0..self.n_layers() {
            let prev = acts.last().unwrap();
            let z = if l == 0 { prev.clone() } else { prev.map(|v| v.max(0.0)) };
            let a = augment(&z) * self.layer(w, l) / ((self.widths[l] + 1) as f64).sqrt();
            acts.push(a);
        }
        acts
    }

    /// Outputs for each row of `x`, one column per output unit.
    pub fn forward_all(&self, w: &[f64], x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(w, x)?;
        Ok(self.activations(w, x).pop().unwrap())
    }

    /// Outputs and gradient of `Σ_{i,k} d_out[i,k] · out[i,k]` with respect to `w`.
    pub fn forward_and_vjp(
        &self,
        w: &[f64],
        x: &DMatrix<f64>,
        d_out: impl FnOnce(&DMatrix<f64>) -> DMatrix<f64>,
    ) -> Result<(DMatrix<f64>, Vec<f64>)> {
        self.check(w, x)?;
        let acts = self.activations(w, x);
        let out = acts.last().unwrap().clone();
        let mut delta = d_out(&out);
        let mut grads: Vec<DMatrix<f64>> = Vec::with_capacity(self.n_layers());
        for l in (0..self.n_layers()).rev() {
            let scale = ((self.widths[l] + 1) as f64).sqrt();
            let z = if l == 0 { acts[0].clone() } else { acts[l].map(|v| v.max(0.0)) };
            grads.push(augment(&z).transpose() * &delta / scale);
            if l > 0 {
                let wl = self.layer(w, l);
                let dz = &delta * wl.rows(0, self.widths[l]).transpose() / scale;
                delta = dz.zip_map(&acts[l], |g, a| if a > 0.0 { g } else { 0.0 });
            }
        }
        let mut flat = Vec::with_capacity(w.len());
        for g in grads.iter().rev() {
            for i in 0..g.nrows() {
                flat.extend(g.row(i).iter());
            }
        }
        Ok((out, flat))
    }
}

fn augment(z: &DMatrix<f64>) -> DMatrix<f64> {
    let mut aug = z.clone().insert_column(z.ncols(), 1.0);
    aug.column_mut(z.ncols()).fill(1.0);
    aug
}

/// Scalar network output for each row of `x`.
pub fn mlp_forward(arch: &MlpArch, w: &[f64], x: &DMatrix<f64>) -> Result<DVector<f64>> {
    if arch.outputs() != 1 {
        return Err(Error::InvalidArgument("mlp_forward needs a scalar-output network".into()));
    }
    Ok(arch.forward_all(w, x)?.column(0).into_owned())
}

/// `log N(y | f(X; w), σ_n² I) + log N(w | 0, η I)` and its gradient in `w`.
pub fn log_joint_and_grad(
    arch: &MlpArch,
    w: &[f64],
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    prior_variance: f64,
    noise_variance: f64,
) -> Result<(f64, Vec<f64>)> {
    check_dim(x.nrows(), y.len())?;
    if !(prior_variance > 0.0 && noise_variance > 0.0) {
        return Err(Error::InvalidArgument("prior and noise variances must be > 0".into()));
    }
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    let mut sse = 0.0;
    let (_, mut grad) = arch.forward_and_vjp(w, x, |out| {
        let r = y - out.column(0);
        sse = r.norm_squared();
        DMatrix::from_column_slice(y.len(), 1, (r / noise_variance).as_slice())
    })?;
    let n = y.len() as f64;
    let loglik = -0.5 * n * (ln2pi + noise_variance.ln()) - 0.5 * sse / noise_variance;
    let wsq: f64 = w.iter().map(|v| v * v).sum();
    let logprior = -0.5 * w.len() as f64 * (ln2pi + prior_variance.ln()) - 0.5 * wsq / prior_variance;
    for (g, wi) in grad.iter_mut().zip(w) {
        *g -= wi / prior_variance;
    }
    Ok((loglik + logprior, grad))
}
