use rayon::prelude::*;

use super::LatentConfig;
use crate::error::{Error, Result};
use crate::netdata::Network;

#[inline]
pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// `beta - ||x_i - x_j||`.
#[inline]
pub fn linear_predictor(xi: &[f64], xj: &[f64], beta: f64) -> f64 {
    beta - distance(xi, xj)
}

/// `log(1 + e^eta)` without overflow.
#[inline]
pub fn softplus(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

/// Log probability of one dyad outcome under the logistic link.
#[inline]
pub fn log_dyad_prob(tie: bool, eta: f64) -> f64 {
    if tie {
        eta - softplus(eta)
    } else {
        -softplus(eta)
    }
}

fn check_shape(net: &Network, cfg: &LatentConfig) -> Result<()> {
    if cfg.n() != net.n() {
        return Err(Error::DimensionMismatch {
            expected: net.n(),
            found: cfg.n(),
        });
    }
    Ok(())
}

/// Sum over the pairs `{i, j}` with `j < i` for `i` in `rows`, each pair
/// contributing all of its dyads.
fn rows_sum(net: &Network, cfg: &LatentConfig, rows: std::ops::Range<usize>) -> f64 {
    let per_pair = net.dyads_per_pair() as f64;
    let mut total = 0.0;
    for i in rows {
        let xi = cfg.x.row(i);
        for j in 0..i {
            let eta = linear_predictor(xi, cfg.x.row(j), cfg.beta);
            total += net.pair_ties(i, j) as f64 * eta - per_pair * softplus(eta);
        }
    }
    total
}

/// `log p(Y | X, beta)` summed over the dyad set.
pub fn log_likelihood(net: &Network, cfg: &LatentConfig) -> Result<f64> {
    check_shape(net, cfg)?;
    Ok(rows_sum(net, cfg, 0..net.n()))
}

/// The same sum split into `parts` contiguous row blocks evaluated in
/// parallel. Block sums are combined left to right, so the result depends
/// only on `parts`, never on thread scheduling.
pub fn log_likelihood_partitioned(net: &Network, cfg: &LatentConfig, parts: usize) -> Result<f64> {
    check_shape(net, cfg)?;
    let n = net.n();
    let parts = parts.clamp(1, n);
    // Row i carries i pairs; split so each block has about the same work.
    let total_pairs = n * (n - 1) / 2;
    let mut bounds = vec![0];
    let mut acc = 0;
    for i in 0..n {
        acc += i;
        if acc * parts >= total_pairs * bounds.len() && bounds.len() < parts {
            bounds.push(i + 1);
        }
    }
    if *bounds.last().unwrap() != n {
        bounds.push(n);
    }
    let partial: Vec<f64> = bounds
        .par_windows(2)
        .map(|w| rows_sum(net, cfg, w[0]..w[1]))
        .collect();
    Ok(partial.into_iter().fold(0.0, |a, b| a + b))
}

/// Sum of log-probabilities of every dyad involving actor `i` (both
/// directions when directed).
pub fn log_likelihood_actor(net: &Network, cfg: &LatentConfig, i: usize) -> Result<f64> {
    check_shape(net, cfg)?;
    if i >= net.n() {
        return Err(Error::InvalidActor {
            index: i,
            n: net.n(),
        });
    }
    let per_pair = net.dyads_per_pair() as f64;
    let xi = cfg.x.row(i);
    Ok((0..net.n())
        .filter(|&j| j != i)
        .map(|j| {
            let eta = linear_predictor(xi, cfg.x.row(j), cfg.beta);
            net.pair_ties(i, j) as f64 * eta - per_pair * softplus(eta)
        })
        .sum())
}
