//! Two-stage BIC baseline for choosing `G`.
//!
//! Positions are fixed at a plug-in estimate. The network term is the BIC of
//! a one-parameter logistic regression in `beta`; the clustering term is the
//! BIC of a spherical Gaussian mixture fitted to the positions by EM. The
//! plug-in here is the aligned posterior mean from a collapsed run, so the
//! numbers are an approximation of, and differ from, minimum-KL based
//! reports.

use std::fmt;

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{distance, softplus, Positions};
use crate::netdata::Network;
use crate::postprocess::aligned_mean_positions;
use crate::sampler::SampleRecord;

/// Search bound on `|beta|`.
pub const BETA_BOUND: f64 = 50.0;
/// Cap on component precisions during EM.
pub const PRECISION_CAP: f64 = 1e6;

/// What counts as the sample size of the network term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleSize {
    #[default]
    Links,
    Dyads,
    Actors,
}

impl SampleSize {
    pub fn count(self, net: &Network) -> usize {
        match self {
            SampleSize::Links => net.tie_count(),
            SampleSize::Dyads => net.dyads().len(),
            SampleSize::Actors => net.n(),
        }
    }
}

impl std::str::FromStr for SampleSize {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "links" => Ok(Self::Links),
            "dyads" => Ok(Self::Dyads),
            "actors" => Ok(Self::Actors),
            other => Err(Error::InvalidBic(format!(
                "unknown sample size `{other}`, expected links, dyads or actors"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrFit {
    pub beta_hat: f64,
    pub log_likelihood: f64,
    pub n_lr: usize,
    pub bic: f64,
    /// The maximiser lies on the search bound.
    pub separable: bool,
}

/// Per-pair tie counts and distances, which is all the `beta` fit needs.
fn pair_data(net: &Network, x: &Positions) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(net.n() * net.n().saturating_sub(1) / 2);
    for i in 0..net.n() {
        for j in 0..i {
            out.push((net.pair_ties(i, j) as f64, distance(x.row(i), x.row(j))));
        }
    }
    out
}

fn lr_loglik(pairs: &[(f64, f64)], k: f64, beta: f64) -> f64 {
    pairs.iter().map(|&(m, d)| m * (beta - d) - k * softplus(beta - d)).sum()
}

/// Gradient and (negative) curvature of the log-likelihood in `beta`.
fn lr_derivatives(pairs: &[(f64, f64)], k: f64, beta: f64) -> (f64, f64) {
    let (mut grad, mut curv) = (0.0, 0.0);
    for &(m, d) in pairs {
        let p = 1.0 / (1.0 + (d - beta).exp());
        grad += m - k * p;
        curv += k * p * (1.0 - p);
    }
    (grad, curv)
}

/// Maximises the concave log-likelihood in `beta` by Newton steps kept
/// inside a shrinking bracket.
fn fit_beta(pairs: &[(f64, f64)], k: f64) -> (f64, bool) {
    let (mut lo, mut hi) = (-BETA_BOUND, BETA_BOUND);
    if lr_derivatives(pairs, k, hi).0 >= 0.0 {
        return (hi, true);
    }
    if lr_derivatives(pairs, k, lo).0 <= 0.0 {
        return (lo, true);
    }
    let mut beta = 0.0;
    for _ in 0..500 {
        let (grad, curv) = lr_derivatives(pairs, k, beta);
        if grad.abs() < 1e-8 {
            break;
        }
        if grad > 0.0 {
            lo = beta;
        } else {
            hi = beta;
        }
        let newton = beta + grad / curv;
        beta = if curv > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo < 1e-15 * (1.0 + beta.abs()) {
            break;
        }
    }
    (beta, false)
}

/// BIC of the logistic regression of the ties on the plug-in distances.
pub fn bic_lr(net: &Network, x_hat: &Positions, n_lr: SampleSize) -> Result<LrFit> {
    if x_hat.n() != net.n() {
        return Err(Error::DimensionMismatch {
            expected: net.n(),
            found: x_hat.n(),
        });
    }
    if net.tie_count() == 0 {
        return Err(Error::NoLinks);
    }
    let pairs = pair_data(net, x_hat);
    let k = net.dyads_per_pair() as f64;
    let (beta_hat, separable) = fit_beta(&pairs, k);
    let log_likelihood = lr_loglik(&pairs, k, beta_hat);
    let n = n_lr.count(net);
    Ok(LrFit {
        beta_hat,
        log_likelihood,
        n_lr: n,
        bic: -2.0 * log_likelihood + (n as f64).ln(),
        separable,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub restarts: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            restarts: 20,
            tol: 1e-8,
            max_iter: 10_000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixFit {
    pub g: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub precisions: Vec<f64>,
    pub log_likelihood: f64,
    pub n_params: usize,
    pub bic: f64,
    pub iterations: usize,
    /// Some precision reached the cap.
    pub degenerate: bool,
}

/// Number of free parameters of a `g`-component spherical mixture in `d`
/// dimensions: weights, means and one precision per component.
pub fn mix_param_count(g: usize, d: usize) -> usize {
    (g - 1) + g * d + g
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|a| (a - m).exp()).sum::<f64>().ln()
}

struct Em<'a> {
    x: &'a Positions,
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    precisions: Vec<f64>,
}

impl Em<'_> {
    fn component_log_density(&self, i: usize, g: usize) -> f64 {
        let d = self.x.d() as f64;
        let sq: f64 = self
            .x
            .row(i)
            .iter()
            .zip(&self.means[g])
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let t = self.precisions[g];
        self.weights[g].ln() + 0.5 * d * (t / (2.0 * std::f64::consts::PI)).ln() - 0.5 * t * sq
    }

    /// Responsibilities and the observed-data log-likelihood.
    fn e_step(&self) -> (Vec<Vec<f64>>, f64) {
        let g = self.weights.len();
        let mut total = 0.0;
        let resp = (0..self.x.n())
            .map(|i| {
                let logs: Vec<f64> = (0..g).map(|k| self.component_log_density(i, k)).collect();
                let norm = log_sum_exp(&logs);
                total += norm;
                logs.iter().map(|l| (l - norm).exp()).collect()
            })
            .collect();
        (resp, total)
    }

    fn m_step(&mut self, resp: &[Vec<f64>]) -> bool {
        let (n, d) = (self.x.n(), self.x.d());
        let mut degenerate = false;
        for k in 0..self.weights.len() {
            let nk: f64 = resp.iter().map(|r| r[k]).sum();
            self.weights[k] = nk / n as f64;
            if nk <= 0.0 {
                continue;
            }
            let mut mean = vec![0.0; d];
            for (i, r) in resp.iter().enumerate() {
                for (m, v) in mean.iter_mut().zip(self.x.row(i)) {
                    *m += r[k] * v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= nk);
            let ss: f64 = resp
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    r[k] * self
                        .x
                        .row(i)
                        .iter()
                        .zip(&mean)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                })
                .sum();
            let unconstrained = d as f64 * nk / ss;
            if !(unconstrained < PRECISION_CAP) {
                degenerate = true;
            }
            self.precisions[k] = unconstrained.min(PRECISION_CAP);
            self.means[k] = mean;
        }
        degenerate
    }
}

fn em_run(x: &Positions, g: usize, cfg: &EmConfig, restart: usize) -> MixFit {
    let (n, d) = (x.n(), x.d());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(restart as u64);
    let overall = {
        let mean: Vec<f64> = (0..d)
            .map(|c| x.rows().map(|r| r[c]).sum::<f64>() / n as f64)
            .collect();
        let ss: f64 = x
            .rows()
            .map(|r| r.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .sum();
        (d * n) as f64 / ss
    };
    let starts: Vec<usize> = if g <= n {
        sample_indices(&mut rng, n, g).into_vec()
    } else {
        (0..g).map(|k| k % n).collect()
    };
    let mut em = Em {
        x,
        weights: vec![1.0 / g as f64; g],
        means: starts.iter().map(|&i| x.row(i).to_vec()).collect(),
        precisions: vec![overall.min(PRECISION_CAP); g],
    };
    let (mut resp, mut ll) = em.e_step();
    let mut degenerate = false;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        iterations += 1;
        degenerate |= em.m_step(&resp);
        let (r, next) = em.e_step();
        assert!(
            next >= ll - 1e-9 * (1.0 + ll.abs()),
            "EM log-likelihood decreased from {ll} to {next}"
        );
        resp = r;
        let done = (next - ll).abs() < cfg.tol;
        ll = next;
        if done {
            break;
        }
    }
    degenerate |= em.precisions.iter().any(|&t| t >= PRECISION_CAP);
    let n_params = mix_param_count(g, d);
    MixFit {
        g,
        weights: em.weights,
        means: em.means,
        precisions: em.precisions,
        log_likelihood: ll,
        n_params,
        bic: -2.0 * ll + n_params as f64 * (n as f64).ln(),
        iterations,
        degenerate,
    }
}

/// BIC of the best of several EM fits of a `g`-component spherical
/// Gaussian mixture to the rows of `x_hat`. Non-degenerate fits are
/// preferred; among those the largest log-likelihood wins.
pub fn bic_mix(x_hat: &Positions, g: usize, cfg: &EmConfig) -> Result<MixFit> {
    if g == 0 || cfg.restarts == 0 {
        return Err(Error::InvalidBic(
            "need at least one component and one restart".into(),
        ));
    }
    if x_hat.n() < 2 || !x_hat.is_finite() {
        return Err(Error::TooFewActors(x_hat.n()));
    }
    let fits: Vec<MixFit> = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| em_run(x_hat, g, cfg, r))
        .collect();
    let mut best = 0;
    for (k, f) in fits.iter().enumerate() {
        let b = &fits[best];
        let better = match (f.degenerate, b.degenerate) {
            (false, true) => true,
            (true, false) => false,
            _ => f.log_likelihood > b.log_likelihood,
        };
        if better {
            best = k;
        }
    }
    Ok(fits.into_iter().nth(best).expect("restarts > 0"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BicRow {
    pub g: usize,
    pub bic_lr: f64,
    pub bic_mix: f64,
    pub total: f64,
    pub mix_degenerate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BicReport {
    pub rows: Vec<BicRow>,
    pub chosen_g: usize,
    pub n_lr_kind: SampleSize,
    pub n_lr: usize,
    pub n_actors: usize,
    pub beta_hat: f64,
    pub separable: bool,
    pub x_hat: Positions,
}

/// The table over `G = 1..=g_max` at a given plug-in configuration.
pub fn bic_report_at(
    net: &Network,
    x_hat: &Positions,
    g_max: usize,
    n_lr: SampleSize,
    em: &EmConfig,
) -> Result<BicReport> {
    let lr = bic_lr(net, x_hat, n_lr)?;
    let mut rows = Vec::with_capacity(g_max);
    for g in 1..=g_max {
        let mix = bic_mix(x_hat, g, em)?;
        rows.push(BicRow {
            g,
            bic_lr: lr.bic,
            bic_mix: mix.bic,
            total: lr.bic + mix.bic,
            mix_degenerate: mix.degenerate,
        });
    }
    let chosen_g = rows
        .iter()
        .fold(None::<&BicRow>, |best, r| match best {
            Some(b) if b.total <= r.total => Some(b),
            _ => Some(r),
        })
        .map(|r| r.g)
        .ok_or_else(|| Error::InvalidBic("g_max must be at least 1".into()))?;
    Ok(BicReport {
        rows,
        chosen_g,
        n_lr_kind: n_lr,
        n_lr: lr.n_lr,
        n_actors: net.n(),
        beta_hat: lr.beta_hat,
        separable: lr.separable,
        x_hat: x_hat.clone(),
    })
}

/// The table with the aligned posterior mean of `samples` as plug-in.
pub fn bic_report(
    net: &Network,
    samples: &[SampleRecord],
    g_max: usize,
    n_lr: SampleSize,
    em: &EmConfig,
) -> Result<BicReport> {
    let x_hat = aligned_mean_positions(samples)?;
    bic_report_at(net, &x_hat, g_max, n_lr, em)
}

impl BicReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("G,bic_lr,bic_mix,total,mix_degenerate,chosen\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.g,
                r.bic_lr,
                r.bic_mix,
                r.total,
                r.mix_degenerate,
                r.g == self.chosen_g
            ));
        }
        out
    }
}

impl fmt::Display for BicReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "approximate two-stage BIC (plug-in: aligned posterior mean positions)"
        )?;
        writeln!(
            f,
            "beta_hat = {:.4}{}, n_LR = {} ({:?}), n = {}",
            self.beta_hat,
            if self.separable { " (on search bound)" } else { "" },
            self.n_lr,
            self.n_lr_kind,
            self.n_actors
        )?;
        writeln!(f, "{:>4} {:>12} {:>12} {:>12}", "G", "BIC_LR", "BIC_MIX", "total")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:>4} {:>12.2} {:>12.2} {:>12.2}{}{}",
                r.g,
                r.bic_lr,
                r.bic_mix,
                r.total,
                if r.g == self.chosen_g { "  *" } else { "" },
                if r.mix_degenerate { "  (degenerate)" } else { "" }
            )?;
        }
        Ok(())
    }
}
