//! Two-cluster benchmark networks at a controlled separation ratio.
//!
//! The separation ratio `r` is the expected tie probability between two
//! actors of the same cluster divided by that between actors of different
//! clusters, with `beta = 0`. Clusters sit at `(mu, mu)` and `-(mu, mu)` with
//! common precision `tau`. A Monte Carlo lookup table maps a `(mu, tau)` grid
//! to `r`, and a target `r` is met by the closest grid entry.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{softplus, Positions};
use crate::netdata::Network;

/// The six study scenarios, in order.
pub const SCENARIO_RATIOS: [f64; 6] = [1.5, 2.5, 5.0, 10.0, 15.0, 20.0];

pub const GRID_SIZE: usize = 20;
pub const MU_RANGE: (f64, f64) = (0.1, 2.0);
pub const TAU_RANGE: (f64, f64) = (1.0, 20.0);

/// `1 / (1 + e^{d})`, the tie probability at distance `d` when `beta = 0`.
#[inline]
fn link_prob(d: f64) -> f64 {
    (-softplus(d)).exp()
}

/// Monte Carlo estimates of the tie probability for a within-cluster pair
/// (`s = +1`) and a between-cluster pair (`s = -1`), from the same
/// `n_mc` standard normal draws.
pub fn estimate_link_prob_pair<R: Rng + ?Sized>(mu: f64, tau: f64, n_mc: usize, rng: &mut R) -> (f64, f64) {
    let sd = 1.0 / tau.sqrt();
    let (mut within, mut between) = (0.0, 0.0);
    for _ in 0..n_mc {
        let z: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        // x = (mu, mu) + sd z[0..2], x' = s (mu, mu) + sd z[2..4].
        let dx = sd * (z[0] - z[2]);
        let dy = sd * (z[1] - z[3]);
        within += link_prob((dx * dx + dy * dy).sqrt());
        let (bx, by) = (dx + 2.0 * mu, dy + 2.0 * mu);
        between += link_prob((bx * bx + by * by).sqrt());
    }
    (within / n_mc as f64, between / n_mc as f64)
}

/// Monte Carlo estimate of the expected tie probability between an actor
/// of the cluster at `(mu, mu)` and one of the cluster at `s (mu, mu)`.
pub fn estimate_link_prob<R: Rng + ?Sized>(mu: f64, tau: f64, s: f64, n_mc: usize, rng: &mut R) -> f64 {
    let sd = 1.0 / tau.sqrt();
    let shift = (1.0 - s) * mu;
    let mut total = 0.0;
    for _ in 0..n_mc {
        let z: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let dx = shift + sd * (z[0] - z[2]);
        let dy = shift + sd * (z[1] - z[3]);
        total += link_prob((dx * dx + dy * dy).sqrt());
    }
    total / n_mc as f64
}

fn grid(range: (f64, f64)) -> Vec<f64> {
    let m = (GRID_SIZE - 1) as f64;
    (0..GRID_SIZE)
        .map(|k| (range.0 * (m - k as f64) + range.1 * k as f64) / m)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCell {
    pub mu: f64,
    pub tau: f64,
    pub within: f64,
    pub between: f64,
    pub r_hat: f64,
}

/// Estimated `r` over the `(mu, tau)` grid, `mu` varying slowest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTable {
    pub cells: Vec<CalibrationCell>,
    pub n_mc: usize,
    pub seed: u64,
}

/// Builds the lookup table. Each cell uses its own stream of the seeded
/// generator, so the result does not depend on scheduling.
pub fn build_lookup(n_mc: usize, seed: u64) -> CalibrationTable {
    let mus = grid(MU_RANGE);
    let taus = grid(TAU_RANGE);
    let cells = (0..GRID_SIZE * GRID_SIZE)
        .into_par_iter()
        .map(|k| {
            let (mu, tau) = (mus[k / GRID_SIZE], taus[k % GRID_SIZE]);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let (within, between) = estimate_link_prob_pair(mu, tau, n_mc, &mut rng);
            CalibrationCell {
                mu,
                tau,
                within,
                between,
                r_hat: within / between,
            }
        })
        .collect();
    CalibrationTable { cells, n_mc, seed }
}

impl CalibrationTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("mu,tau,r_hat,N,seed\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                c.mu, c.tau, c.r_hat, self.n_mc, self.seed
            ));
        }
        out
    }

    pub fn r_range(&self) -> (f64, f64) {
        self.cells.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
            (lo.min(c.r_hat), hi.max(c.r_hat))
        })
    }
}

/// A grid entry chosen for a target ratio.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pick {
    pub mu: f64,
    pub tau: f64,
    pub r_hat: f64,
    /// The target lies outside the table's range.
    pub out_of_range: bool,
}

/// The grid entry whose estimated `r` is closest to `r_target`, preferring
/// smaller `mu`, then smaller `tau`, on ties.
pub fn pick_params(table: &CalibrationTable, r_target: f64) -> Result<Pick> {
    let mut best: Option<&CalibrationCell> = None;
    for c in &table.cells {
        best = match best {
            None => Some(c),
            Some(b) => {
                let (dc, db) = ((c.r_hat - r_target).abs(), (b.r_hat - r_target).abs());
                let better = dc < db
                    || (dc == db && (c.mu < b.mu || (c.mu == b.mu && c.tau < b.tau)));
                Some(if better { c } else { b })
            }
        };
    }
    let c = best.ok_or_else(|| Error::InvalidScenario("calibration table is empty".into()))?;
    let (lo, hi) = table.r_range();
    let out_of_range = r_target < lo || r_target > hi;
    if out_of_range {
        log::warn!(
            "target r = {r_target} is outside the table range [{lo:.3}, {hi:.3}]; using r = {:.3}",
            c.r_hat
        );
    }
    Ok(Pick {
        mu: c.mu,
        tau: c.tau,
        r_hat: c.r_hat,
        out_of_range,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub r_target: f64,
    pub mu: f64,
    pub tau: f64,
    pub n_actors: usize,
}

impl Scenario {
    pub fn new(r_target: f64, mu: f64, tau: f64, n_actors: usize) -> Result<Self> {
        if !(r_target >= 1.0) || !(mu > 0.0) || !(tau > 0.0) || n_actors < 2 {
            return Err(Error::InvalidScenario(format!(
                "need r >= 1, mu > 0, tau > 0 and at least 2 actors; got r = {r_target}, \
                 mu = {mu}, tau = {tau}, n = {n_actors}"
            )));
        }
        Ok(Self {
            r_target,
            mu,
            tau,
            n_actors,
        })
    }

    /// Resolves a target ratio against the table, with 50 actors.
    pub fn from_table(table: &CalibrationTable, r_target: f64) -> Result<Self> {
        let p = pick_params(table, r_target)?;
        Self::new(r_target, p.mu, p.tau, 50)
    }

    /// The six study scenarios.
    pub fn presets(table: &CalibrationTable) -> Result<Vec<Self>> {
        SCENARIO_RATIOS
            .iter()
            .map(|&r| Self::from_table(table, r))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedNetwork {
    pub net: Network,
    /// 0-based true cluster of each actor.
    pub labels: Vec<usize>,
    pub x: Positions,
}

impl SimulatedNetwork {
    /// `actor,true_label,x1,x2` with 1-based actors and labels.
    pub fn truth_csv(&self) -> String {
        let mut out = String::from("actor,true_label,x1,x2\n");
        for (i, p) in self.x.rows().enumerate() {
            out.push_str(&format!("{},{},{},{}\n", i + 1, self.labels[i] + 1, p[0], p[1]));
        }
        out
    }
}

/// Draws labels uniformly, positions around the two centres and an
/// undirected network with tie probabilities `logistic(beta - distance)`.
pub fn simulate_network<R: Rng + ?Sized>(sc: &Scenario, beta: f64, rng: &mut R) -> Result<SimulatedNetwork> {
    let n = sc.n_actors;
    let sd = 1.0 / sc.tau.sqrt();
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
    let mut data = Vec::with_capacity(2 * n);
    for &l in &labels {
        let centre = if l == 0 { sc.mu } else { -sc.mu };
        for _ in 0..2 {
            data.push(centre + sd * rng.sample::<f64, _>(StandardNormal));
        }
    }
    let x = Positions::from_vec(n, 2, data)?;
    let mut ties = Vec::new();
    for i in 0..n {
        for j in 0..i {
            let eta = beta - crate::model::distance(x.row(i), x.row(j));
            if rng.random::<f64>() < (eta - softplus(eta)).exp() {
                ties.push((j, i));
            }
        }
    }
    Ok(SimulatedNetwork {
        net: Network::from_ties(n, false, ties)?,
        labels,
        x,
    })
}
