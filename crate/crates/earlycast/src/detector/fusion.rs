//! Latent fusion machinery: linear projections into the shared space,
//! diagonal-Gaussian posterior heads, reparameterized sampling, the
//! Gaussian reconstruction loss, the symmetric-KL alignment loss, the
//! sigmoid gate, and the softmax classifier head.

use crate::detector::{DetectorError, ParamTape};
use crate::tensor::Tensor;

/// `x W + b` into the shared latent input space.
pub fn project(x: &Tensor, tape: &ParamTape, prefix: &str) -> Tensor {
    x.matmul(tape.get(&format!("{prefix}.w"))).add(tape.get(&format!("{prefix}.b")))
}

/// Posterior head: unconstrained mean, log-variance parameterization so
/// the diagonal covariance is strictly positive.
pub fn posterior(x: &Tensor, tape: &ParamTape, prefix: &str) -> (Tensor, Tensor) {
    let mu = x
        .matmul(tape.get(&format!("{prefix}.mu_w")))
        .add(tape.get(&format!("{prefix}.mu_b")));
    let logvar = x
        .matmul(tape.get(&format!("{prefix}.lv_w")))
        .add(tape.get(&format!("{prefix}.lv_b")));
    (mu, logvar)
}

/// `z = mu + exp(logvar / 2) .* eta` with caller-supplied noise; passing
/// zeros degrades to the posterior mean (evaluation mode).
pub fn reparameterize(mu: &Tensor, logvar: &Tensor, eta: &[f64]) -> Tensor {
    let noise = Tensor::row(eta.to_vec());
    mu.add(&logvar.scale(0.5).exp().mul(&noise))
}

/// Additive constant of the Gaussian decoder negative log-likelihood.
pub fn gaussian_nll_const(dim: usize, sigma_x2: f64) -> f64 {
    0.5 * dim as f64 * (2.0 * std::f64::consts::PI * sigma_x2).ln()
}

/// Gaussian-decoder negative log-likelihood of the projected feature given
/// the latent sample: `||x - (z W + b)||^2 / (2 sigma^2)` plus the
/// constant.
pub fn rec_loss(x: &Tensor, z: &Tensor, tape: &ParamTape, prefix: &str, sigma_x2: f64) -> Tensor {
    let decoded = z
        .matmul(tape.get(&format!("{prefix}.w")))
        .add(tape.get(&format!("{prefix}.b")));
    let residual = x.sub(&decoded);
    residual
        .mul(&residual)
        .sum()
        .scale(1.0 / (2.0 * sigma_x2))
        .add_scalar(gaussian_nll_const(x.shape().cols, sigma_x2))
}

/// Closed-form KL between diagonal Gaussians, `KL(a || b)`, on the tape.
fn kl_diag(mu_a: &Tensor, lv_a: &Tensor, mu_b: &Tensor, lv_b: &Tensor) -> Tensor {
    let delta = mu_a.sub(mu_b);
    let var_ratio = lv_a.sub(lv_b).exp();
    let mahal = delta.mul(&delta).mul(&lv_b.neg().exp());
    lv_b.sub(lv_a)
        .add(&var_ratio)
        .add(&mahal)
        .add_scalar(-1.0)
        .sum()
        .scale(0.5)
}

/// Symmetric KL between the two posteriors: `(KL(c||g) + KL(g||c)) / 2`.
pub fn skl_loss(mu_c: &Tensor, lv_c: &Tensor, mu_g: &Tensor, lv_g: &Tensor) -> Tensor {
    kl_diag(mu_c, lv_c, mu_g, lv_g)
        .add(&kl_diag(mu_g, lv_g, mu_c, lv_c))
        .scale(0.5)
}

/// Plain-number symmetric KL with the terms the theory harness inspects.
#[derive(Debug, Clone, Copy)]
pub struct SklBreakdown {
    pub skl: f64,
    /// `Delta-mu^T Sigma_c^{-1} Delta-mu`
    pub mahalanobis_c: f64,
    /// `tr(Lambda + Lambda^{-1} - 2 I)` for diagonal covariances.
    pub trace_term: f64,
}

/// Closed-form symmetric KL for diagonal Gaussians given as mean/variance
/// slices. Errors on non-positive variances, where KL is undefined.
pub fn skl_closed_form(
    mu_c: &[f64],
    var_c: &[f64],
    mu_g: &[f64],
    var_g: &[f64],
) -> Result<SklBreakdown, DetectorError> {
    let d = mu_c.len();
    assert!(var_c.len() == d && mu_g.len() == d && var_g.len() == d);
    if var_c.iter().chain(var_g.iter()).any(|&v| v <= 0.0) {
        return Err(DetectorError::NonPositiveVariance);
    }
    let mut trace = 0.0;
    let mut mahal_c = 0.0;
    let mut mahal_g = 0.0;
    for i in 0..d {
        let delta = mu_c[i] - mu_g[i];
        trace += var_g[i] / var_c[i] + var_c[i] / var_g[i] - 2.0;
        mahal_c += delta * delta / var_c[i];
        mahal_g += delta * delta / var_g[i];
    }
    // (KL(c||g) + KL(g||c)) / 2; log-determinant terms cancel in the sum.
    let skl = 0.25 * (trace + mahal_c + mahal_g);
    Ok(SklBreakdown { skl, mahalanobis_c: mahal_c, trace_term: trace })
}

/// Sigmoid gate over the concatenated means and the convex fusion
/// `o_f = a mu_c + (1 - a) mu_g`. Returns `(a, o_f)`.
pub fn fuse(mu_c: &Tensor, mu_g: &Tensor, tape: &ParamTape) -> (Tensor, Tensor) {
    let joint = Tensor::concat_cols(&[mu_c.clone(), mu_g.clone()]);
    let a = joint
        .matmul(tape.get("fuse.gate.w"))
        .add(tape.get("fuse.gate.b"))
        .sigmoid();
    let b = a.neg().add_scalar(1.0);
    let fused = mu_c.mul_scalar_tensor(&a).add(&mu_g.mul_scalar_tensor(&b));
    (a, fused)
}

/// Two-way softmax over the classifier MLP; index 0 is the fake
/// probability.
pub fn classify(fused: &Tensor, tape: &ParamTape) -> Tensor {
    let hidden = fused
        .matmul(tape.get("cls.l1.w"))
        .add(tape.get("cls.l1.b"))
        .tanh();
    hidden
        .matmul(tape.get("cls.l2.w"))
        .add(tape.get("cls.l2.b"))
        .softmax()
}
