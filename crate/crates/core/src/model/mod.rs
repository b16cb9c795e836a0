//! Closed-form densities of the collapsed latent position cluster model.
//!
//! The posterior over positions `X`, abundance `beta`, component count `G` and
//! labels `c` factors as
//!
//! ```text
//! log p(Y | X, beta) + log N(beta; 0, v) + log pi(G) + log pi(c | G) + sum_g log lambda_g
//! ```
//!
//! with the mixture weights, means and precisions integrated out. Each term
//! lives in its own function so the sampler can evaluate ratios cheaply and
//! the tests can check each one against an independent oracle.

mod likelihood;
mod mixture;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netdata::Network;

pub use likelihood::{
    distance, linear_predictor, log_dyad_prob, log_likelihood, log_likelihood_actor,
    log_likelihood_partitioned, softplus,
};
pub use mixture::{
    group_stats, log_alloc_prior, log_alloc_prior_counts, log_component_marginal, ComponentMarginal,
    GPrior, GroupStats,
};

/// Model hyperparameters.
///
/// `gamma_s` and `gamma_r` parameterize the `Gamma(s/2, r/2)` hyperprior on
/// the precision-prior rate `gamma`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub alpha: f64,
    pub delta: f64,
    pub kappa: f64,
    pub gamma_s: f64,
    pub gamma_r: f64,
    pub beta_prior_var: f64,
    pub g_rate: f64,
    pub g_max: usize,
    pub d: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        let (gamma_s, gamma_r) = derive_gamma_hyperprior(0.103, 0.103 / 4.0);
        Self {
            alpha: 3.0,
            delta: 2.0,
            kappa: 0.1,
            gamma_s,
            gamma_r,
            beta_prior_var: 2.0,
            g_rate: 1.0,
            g_max: 10,
            d: 2,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("alpha", self.alpha),
            ("delta", self.delta),
            ("kappa", self.kappa),
            ("gamma_s", self.gamma_s),
            ("gamma_r", self.gamma_r),
            ("beta_prior_var", self.beta_prior_var),
            ("g_rate", self.g_rate),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidHyperParams(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        if self.d == 0 {
            return Err(Error::InvalidHyperParams("d must be at least 1".into()));
        }
        if self.g_max == 0 {
            return Err(Error::InvalidHyperParams("g_max must be at least 1".into()));
        }
        Ok(())
    }

    /// Prior mean of `gamma`.
    pub fn gamma_prior_mean(&self) -> f64 {
        self.gamma_s / self.gamma_r
    }
}

/// Solves for `(s, r)` so that `Gamma(s/2, r/2)` has the given mean and
/// standard deviation: mean = s/r, var = 2s/r^2.
pub fn derive_gamma_hyperprior(mean: f64, sd: f64) -> (f64, f64) {
    let r = 2.0 * mean / (sd * sd);
    (mean * r, r)
}

/// An `n x d` matrix of latent positions, stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Positions {
    n: usize,
    d: usize,
    data: Vec<f64>,
}

impl Positions {
    pub fn zeros(n: usize, d: usize) -> Self {
        Self {
            n,
            d,
            data: vec![0.0; n * d],
        }
    }

    pub fn from_vec(n: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * d {
            return Err(Error::DimensionMismatch {
                expected: n * d,
                found: data.len(),
            });
        }
        Ok(Self { n, d, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n * d);
        for r in rows {
            if r.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self { n, d, data })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.d.max(1)).take(self.n)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Latent positions together with the abundance `beta`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentConfig {
    pub x: Positions,
    pub beta: f64,
}

impl LatentConfig {
    pub fn new(x: Positions, beta: f64) -> Self {
        Self { x, beta }
    }

    pub fn n(&self) -> usize {
        self.x.n()
    }
}

/// Component labels with `G` components. Labels are 0-based in memory.
/// Empty components are legal.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Allocation {
    g: usize,
    labels: Vec<usize>,
    counts: Vec<usize>,
}

impl Allocation {
    pub fn new(g: usize, labels: Vec<usize>) -> Result<Self> {
        if g == 0 {
            return Err(Error::InvalidAllocation("G must be at least 1".into()));
        }
        let mut counts = vec![0; g];
        for (i, &l) in labels.iter().enumerate() {
            if l >= g {
                return Err(Error::InvalidAllocation(format!(
                    "actor {i} has label {l} but G = {g}"
                )));
            }
            counts[l] += 1;
        }
        Ok(Self { g, labels, counts })
    }

    /// Everyone in a single component.
    pub fn single(n: usize) -> Self {
        Self {
            g: 1,
            labels: vec![0; n],
            counts: vec![n],
        }
    }

    #[inline]
    pub fn g(&self) -> usize {
        self.g
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    #[inline]
    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn members(&self, g: usize) -> Vec<usize> {
        (0..self.labels.len())
            .filter(|&i| self.labels[i] == g)
            .collect()
    }

    pub fn nonempty(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }

    pub(crate) fn relabel(&mut self, i: usize, to: usize) {
        let from = self.labels[i];
        self.counts[from] -= 1;
        self.counts[to] += 1;
        self.labels[i] = to;
    }

    /// Replaces the whole labelling, recomputing counts.
    pub(crate) fn reset(&mut self, g: usize, labels: Vec<usize>) {
        let mut counts = vec![0; g];
        for &l in &labels {
            counts[l] += 1;
        }
        self.g = g;
        self.labels = labels;
        self.counts = counts;
    }
}

/// Log density of the abundance prior `N(0, v)`.
pub fn log_beta_prior(beta: f64, hp: &HyperParams) -> f64 {
    let v = hp.beta_prior_var;
    -0.5 * (2.0 * std::f64::consts::PI * v).ln() - 0.5 * beta * beta / v
}

/// The collapsed log prior: every term of the collapsed posterior except
/// the network likelihood.
pub fn log_collapsed_prior(
    cfg: &LatentConfig,
    alloc: &Allocation,
    gamma: f64,
    hp: &HyperParams,
) -> Result<f64> {
    if cfg.n() != alloc.n() {
        return Err(Error::DimensionMismatch {
            expected: cfg.n(),
            found: alloc.n(),
        });
    }
    if alloc.g() > hp.g_max {
        return Err(Error::InvalidAllocation(format!(
            "G = {} exceeds g_max = {}",
            alloc.g(),
            hp.g_max
        )));
    }
    let mut total = log_beta_prior(cfg.beta, hp)
        + GPrior::new(hp).ln_prob(alloc.g())
        + log_alloc_prior(alloc, hp);
    for stats in group_stats(&cfg.x, alloc) {
        total += log_component_marginal(&stats, hp, gamma)?;
    }
    Ok(total)
}

/// The collapsed log posterior, up to its normalizing constant.
pub fn log_collapsed_target(
    net: &Network,
    cfg: &LatentConfig,
    alloc: &Allocation,
    gamma: f64,
    hp: &HyperParams,
) -> Result<f64> {
    Ok(log_likelihood(net, cfg)? + log_collapsed_prior(cfg, alloc, gamma, hp)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn defaults_match_reported_settings() {
        let hp = HyperParams::default();
        assert_eq!((hp.alpha, hp.delta, hp.kappa), (3.0, 2.0, 0.1));
        assert_eq!((hp.beta_prior_var, hp.g_rate, hp.g_max, hp.d), (2.0, 1.0, 10, 2));
        assert_relative_eq!(hp.gamma_prior_mean(), 0.103, max_relative = 1e-12);
        hp.validate().unwrap();
    }

    #[test]
    fn gamma_hyperprior_solutions() {
        let (s, r) = derive_gamma_hyperprior(0.103, 0.02575);
        assert_relative_eq!(s, 32.0, max_relative = 1e-12);
        assert_relative_eq!(r, 0.206 / (0.02575 * 0.02575), max_relative = 1e-12);
        assert_relative_eq!(r, 310.679, max_relative = 1e-5);
        let (s, r) = derive_gamma_hyperprior(1.0, 1.0);
        assert_relative_eq!(s, 2.0);
        assert_relative_eq!(r, 2.0);
    }

    #[test]
    fn invalid_hyperparams() {
        let hp = HyperParams {
            kappa: 0.0,
            ..HyperParams::default()
        };
        assert!(hp.validate().is_err());
        let hp = HyperParams {
            g_max: 0,
            ..HyperParams::default()
        };
        assert!(hp.validate().is_err());
    }

    #[test]
    fn allocation_bookkeeping() {
        let mut a = Allocation::new(3, vec![0, 2, 2, 0]).unwrap();
        assert_eq!(a.counts(), &[2, 0, 2]);
        assert_eq!(a.nonempty(), 2);
        a.relabel(0, 1);
        assert_eq!(a.counts(), &[1, 1, 2]);
        assert_eq!(a.members(2), vec![1, 2]);
        assert!(Allocation::new(2, vec![0, 2]).is_err());
        assert!(Allocation::new(0, vec![]).is_err());
    }
}
