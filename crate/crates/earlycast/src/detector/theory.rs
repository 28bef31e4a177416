//! Executable checks of the alignment theory: the symmetric-KL
//! second-order lower bound, strict convexity of the reconstruction loss
//! in the signal-compression factor with its minimum at full preservation,
//! and exact cancellation of the shared signal in the posterior-mean
//! difference.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::detector::fusion::{gaussian_nll_const, skl_closed_form};

/// Synthetic two-modality noise model: a shared signal `s`, per-modality
/// noise draws, and a mixing matrix `W`. Latent means are
/// `mu_* = W (eta s + eps_*)`.
pub struct SyntheticNoiseModel {
    pub dim: usize,
    pub signal: Vec<f64>,
    pub noise_content: Vec<f64>,
    pub noise_graph: Vec<f64>,
    pub mixing: Vec<Vec<f64>>,
    pub sigma_x2: f64,
}

impl SyntheticNoiseModel {
    pub fn random(dim: usize, rng: &mut ChaCha8Rng) -> SyntheticNoiseModel {
        let mut vec = |scale: f64| -> Vec<f64> {
            (0..dim).map(|_| rng.random_range(-scale..scale)).collect()
        };
        let signal = vec(2.0);
        let noise_content = vec(0.5);
        let noise_graph = vec(0.5);
        // Diagonally dominant mixing keeps W well-conditioned.
        let mut mixing = vec![vec![0.0; dim]; dim];
        for (i, row) in mixing.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = rng.random_range(-0.3..0.3);
                if i == j {
                    *cell += 1.0;
                }
            }
        }
        SyntheticNoiseModel { dim, signal, noise_content, noise_graph, mixing, sigma_x2: 1.0 }
    }

    fn mix(&self, v: &[f64]) -> Vec<f64> {
        self.mixing
            .iter()
            .map(|row| row.iter().zip(v).map(|(w, x)| w * x).sum())
            .collect()
    }

    /// `W (eta s + eps)`.
    pub fn latent_mean(&self, eta: f64, noise: &[f64]) -> Vec<f64> {
        let combined: Vec<f64> =
            self.signal.iter().zip(noise).map(|(s, e)| eta * s + e).collect();
        self.mix(&combined)
    }

    /// Reconstruction loss of the content modality at compression `eta`,
    /// with an identity decoder: the target is `W (s + eps)` and the
    /// reconstruction is the latent mean.
    pub fn rec_loss_at(&self, eta: f64) -> f64 {
        let target = self.mix(
            &self
                .signal
                .iter()
                .zip(&self.noise_content)
                .map(|(s, e)| s + e)
                .collect::<Vec<f64>>(),
        );
        let recon = self.latent_mean(eta, &self.noise_content);
        let quad: f64 = target
            .iter()
            .zip(&recon)
            .map(|(t, r)| (t - r) * (t - r))
            .sum::<f64>()
            / (2.0 * self.sigma_x2);
        quad + gaussian_nll_const(self.dim, self.sigma_x2)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TheoryReport {
    pub skl_trials: usize,
    pub skl_violations: usize,
    pub skl_min_margin: f64,
    pub eta_instances: usize,
    pub eta_failures: usize,
    pub cancellation_max_dev: f64,
    pub passed: bool,
}

impl TheoryReport {
    pub fn render(&self) -> String {
        format!(
            "skl lower bound   : {}/{} violations (min margin {:.3e})\n\
             eta convexity     : {}/{} failures\n\
             signal cancelling : max deviation {:.3e} (tolerance 1e-12)\n\
             overall           : {}\n",
            self.skl_violations,
            self.skl_trials,
            self.skl_min_margin,
            self.eta_failures,
            self.eta_instances,
            self.cancellation_max_dev,
            if self.passed { "PASS" } else { "FAIL" }
        )
    }
}

/// Draws random diagonal-Gaussian pairs (dimension <= `max_dim`) and
/// checks `skl >= mahalanobis_c / 4` on each. Returns the violation count
/// and the smallest observed margin.
pub fn skl_bound_check(trials: usize, max_dim: usize, seed: u64) -> (usize, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0;
    let mut min_margin = f64::INFINITY;
    for _ in 0..trials {
        let d = rng.random_range(1..=max_dim as u64) as usize;
        let mu_c: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mu_g: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let var_c: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0f64).exp()).collect();
        let var_g: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0f64).exp()).collect();
        let b = skl_closed_form(&mu_c, &var_c, &mu_g, &var_g).expect("positive variances");
        let bound = 0.25 * b.mahalanobis_c;
        let margin = b.skl - bound;
        min_margin = min_margin.min(margin);
        if margin < -1e-12 {
            violations += 1;
        }
    }
    (violations, min_margin)
}

/// The eta grid swept by the convexity check.
pub const ETA_GRID: [f64; 11] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

/// On each random instance, the reconstruction loss over the eta grid must
/// be strictly decreasing with its minimum at eta = 1. Returns the number
/// of failing instances.
pub fn eta_convexity_check(instances: usize, dim: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    for _ in 0..instances {
        let model = SyntheticNoiseModel::random(dim, &mut rng);
        let losses: Vec<f64> = ETA_GRID.iter().map(|&eta| model.rec_loss_at(eta)).collect();
        let strictly_decreasing = losses.windows(2).all(|w| w[1] < w[0]);
        let argmin = losses
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        if !strictly_decreasing || argmin != ETA_GRID.len() - 1 {
            failures += 1;
        }
    }
    failures
}

/// Builds posterior means from two different shared signals with the same
/// noise draws and returns the largest coordinate deviation between the
/// two mean differences; the shared signal must cancel exactly.
pub fn semantic_cancellation_check(dim: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = SyntheticNoiseModel::random(dim, &mut rng);
    let eta = 0.85;
    let delta = |m: &SyntheticNoiseModel| -> Vec<f64> {
        let mu_c = m.latent_mean(eta, &m.noise_content);
        let mu_g = m.latent_mean(eta, &m.noise_graph);
        mu_c.iter().zip(&mu_g).map(|(c, g)| c - g).collect()
    };
    let d1 = delta(&model);
    model.signal = (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect();
    let d2 = delta(&model);
    d1.iter()
        .zip(&d2)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// Runs all three checks with the documented sizes.
pub fn run_theory_harness(skl_trials: usize, eta_instances: usize, seed: u64) -> TheoryReport {
    let (skl_violations, skl_min_margin) = skl_bound_check(skl_trials, 16, seed);
    let eta_failures = eta_convexity_check(eta_instances, 8, seed ^ 0xe7a);
    let cancellation_max_dev = semantic_cancellation_check(8, seed ^ 0xca9c);
    TheoryReport {
        skl_trials,
        skl_violations,
        skl_min_margin,
        eta_instances,
        eta_failures,
        cancellation_max_dev,
        passed: skl_violations == 0 && eta_failures == 0 && cancellation_max_dev <= 1e-12,
    }
}
