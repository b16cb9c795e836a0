//! Alignment, relabelling and posterior summaries.
//!
//! The likelihood is unchanged by rigid motions of the positions and the
//! collapsed target is unchanged by permutations of the labels, so raw draws
//! cannot be averaged directly. Positions are matched to a reference
//! configuration by Procrustes rotation and labels are matched to a running
//! consensus by optimal assignment.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{HyperParams, Positions};
use crate::sampler::{AcceptanceReport, SampleRecord};

/// Index of the draw with the largest log-likelihood, earliest on ties.
pub fn choose_reference(samples: &[SampleRecord]) -> Result<usize> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mut best = 0;
    for (k, s) in samples.iter().enumerate().skip(1) {
        let b = &samples[best];
        if s.log_likelihood > b.log_likelihood
            || (s.log_likelihood == b.log_likelihood && s.iter < b.iter)
        {
            best = k;
        }
    }
    Ok(best)
}

fn to_matrix(x: &Positions) -> DMatrix<f64> {
    DMatrix::from_row_slice(x.n(), x.d(), x.as_slice())
}

fn centred(m: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let n = m.nrows() as f64;
    let means: Vec<f64> = (0..m.ncols()).map(|c| m.column(c).sum() / n).collect();
    let mut out = m.clone();
    for (c, mean) in means.iter().enumerate() {
        out.column_mut(c).add_scalar_mut(-mean);
    }
    (out, means)
}

/// The rigid motion (rotation or reflection plus translation) of `x` that
/// is closest to `reference` in Frobenius norm.
pub fn procrustes_align(x: &Positions, reference: &Positions) -> Result<Positions> {
    if x.n() != reference.n() || x.d() != reference.d() {
        return Err(Error::DimensionMismatch {
            expected: reference.n() * reference.d(),
            found: x.n() * x.d(),
        });
    }
    let (xc, _) = centred(&to_matrix(x));
    let (rc, ref_means) = centred(&to_matrix(reference));
    let m = xc.transpose() * &rc;
    let svd = m.svd(true, true);
    let rot = svd.u.expect("u requested") * svd.v_t.expect("v_t requested");
    let aligned = xc * rot;
    let mut data = Vec::with_capacity(x.n() * x.d());
    for i in 0..x.n() {
        for (c, mean) in ref_means.iter().enumerate() {
            data.push(aligned[(i, c)] + mean);
        }
    }
    Positions::from_vec(x.n(), x.d(), data)
}

/// Minimum-cost perfect matching on a square cost matrix. Returns `assign`
/// with row `r` matched to column `assign[r]`.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return vec![];
    }
    // Shortest augmenting paths with row and column potentials; index 0 is
    // a sentinel so rows and columns are 1-based inside the loop.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        p[0] = row;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        assign[p[j] - 1] = j - 1;
    }
    assign
}

/// One draw after label matching (and, in summaries, position alignment).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignedSample {
    pub x: Positions,
    pub labels: Vec<usize>,
    /// `permutation[old] = new`.
    pub permutation: Vec<usize>,
}

/// Result of [`relabel_samples`].
#[derive(Clone, Debug, PartialEq)]
pub struct Relabelling {
    pub samples: Vec<AlignedSample>,
    /// Consensus label of each actor.
    pub modal_labels: Vec<usize>,
    /// Total assignment cost after each pass.
    pub cost_history: Vec<usize>,
}

fn modal(counts: &[Vec<usize>]) -> Vec<usize> {
    counts
        .iter()
        .map(|row| {
            let mut best = 0;
            for (k, &c) in row.iter().enumerate() {
                if c > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Permutes each draw's labels to agree as far as possible with a running
/// consensus labelling, iterating until the total disagreement stops
/// falling. All draws must have `g` components.
pub fn relabel_samples(samples: &[SampleRecord], g: usize) -> Result<Relabelling> {
    let first = samples.first().ok_or(Error::EmptySamples)?;
    if let Some(bad) = samples.iter().find(|s| s.g != g) {
        return Err(Error::InvalidAllocation(format!(
            "draw at iteration {} has G = {}, expected {g}",
            bad.iter, bad.g
        )));
    }
    let n = first.labels.len();
    let mut reference = first.labels.clone();
    let mut perms: Vec<Vec<usize>> = vec![(0..g).collect(); samples.len()];
    let mut history: Vec<usize> = Vec::new();
    const MAX_PASSES: usize = 100;
    for _ in 0..MAX_PASSES {
        let mut total = 0;
        let mut next_perms = Vec::with_capacity(samples.len());
        for s in samples {
            let mut agree = vec![vec![0usize; g]; g];
            let mut size = vec![0usize; g];
            for (l, r) in s.labels.iter().zip(&reference) {
                agree[*l][*r] += 1;
                size[*l] += 1;
            }
            let cost: Vec<Vec<f64>> = (0..g)
                .map(|j| (0..g).map(|k| (size[j] - agree[j][k]) as f64).collect())
                .collect();
            let perm = min_cost_assignment(&cost);
            total += (0..g).map(|j| size[j] - agree[j][perm[j]]).sum::<usize>();
            next_perms.push(perm);
        }
        if history.last().is_some_and(|&prev| total >= prev) {
            break;
        }
        history.push(total);
        perms = next_perms;
        let mut counts = vec![vec![0usize; g]; n];
        for (s, perm) in samples.iter().zip(&perms) {
            for (i, &l) in s.labels.iter().enumerate() {
                counts[i][perm[l]] += 1;
            }
        }
        reference = modal(&counts);
        if total == 0 {
            break;
        }
    }
    let out = samples
        .iter()
        .zip(perms)
        .map(|(s, perm)| AlignedSample {
            x: s.x.clone(),
            labels: s.labels.iter().map(|&l| perm[l]).collect(),
            permutation: perm,
        })
        .collect();
    Ok(Relabelling {
        samples: out,
        modal_labels: reference,
        cost_history: history,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    /// `p_g[k]` is the posterior probability of `G = k + 1`.
    pub p_g: Vec<f64>,
    pub modal_g: usize,
    /// The `G` at which positions and memberships were summarized.
    pub summary_g: usize,
    pub n_samples: usize,
    pub n_summary_samples: usize,
    pub mean_positions: Positions,
    /// Row per actor, column per component.
    pub membership: Vec<Vec<f64>>,
    pub modal_labels: Vec<usize>,
    pub beta_mean: f64,
    pub beta_sd: f64,
    pub gamma_mean: f64,
    pub gamma_sd: f64,
    pub acceptance: Option<AcceptanceReport>,
}

fn mean_sd(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

/// Posterior distribution of `G` and summaries at the most probable `G`.
pub fn summarize(samples: &[SampleRecord], hp: &HyperParams) -> Result<PosteriorSummary> {
    let p_g = g_distribution(samples, hp.g_max)?;
    summarize_at(samples, hp, most_probable(&p_g))
}

/// The `G` with the largest probability, smallest on ties.
pub fn most_probable(p_g: &[f64]) -> usize {
    let mut best = 0;
    for (k, &p) in p_g.iter().enumerate() {
        if p > p_g[best] {
            best = k;
        }
    }
    best + 1
}

/// Empirical distribution of `G` over `1..=g_max`.
pub fn g_distribution(samples: &[SampleRecord], g_max: usize) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mut counts = vec![0usize; g_max];
    for s in samples {
        if s.g == 0 || s.g > g_max {
            return Err(Error::InvalidAllocation(format!("draw has G = {}", s.g)));
        }
        counts[s.g - 1] += 1;
    }
    Ok(counts
        .into_iter()
        .map(|c| c as f64 / samples.len() as f64)
        .collect())
}

/// As [`summarize`], but with positions and memberships taken from the
/// draws with `G = g`.
pub fn summarize_at(samples: &[SampleRecord], hp: &HyperParams, g: usize) -> Result<PosteriorSummary> {
    let p_g = g_distribution(samples, hp.g_max)?;
    let modal_g = most_probable(&p_g);
    let subset: Vec<SampleRecord> = samples.iter().filter(|s| s.g == g).cloned().collect();
    if subset.is_empty() {
        return Err(Error::EmptySamples);
    }
    let reference = &samples[choose_reference(samples)?].x;
    let relabelled = relabel_samples(&subset, g)?;
    let n = reference.n();
    let d = reference.d();
    let mut sum = vec![0.0; n * d];
    let mut counts = vec![vec![0usize; g]; n];
    for s in &relabelled.samples {
        let aligned = procrustes_align(&s.x, reference)?;
        for (acc, v) in sum.iter_mut().zip(aligned.as_slice()) {
            *acc += v;
        }
        for (i, &l) in s.labels.iter().enumerate() {
            counts[i][l] += 1;
        }
    }
    let m = subset.len() as f64;
    let mean_positions = Positions::from_vec(n, d, sum.into_iter().map(|v| v / m).collect())?;
    let membership = counts
        .iter()
        .map(|row| row.iter().map(|&c| c as f64 / m).collect())
        .collect();
    let (beta_mean, beta_sd) = mean_sd(samples.iter().map(|s| s.beta));
    let (gamma_mean, gamma_sd) = mean_sd(samples.iter().map(|s| s.gamma));
    Ok(PosteriorSummary {
        p_g,
        modal_g,
        summary_g: g,
        n_samples: samples.len(),
        n_summary_samples: subset.len(),
        mean_positions,
        membership,
        modal_labels: relabelled.modal_labels,
        beta_mean,
        beta_sd,
        gamma_mean,
        gamma_sd,
        acceptance: None,
    })
}

/// Mean of all draws after Procrustes alignment to the reference draw.
pub fn aligned_mean_positions(samples: &[SampleRecord]) -> Result<Positions> {
    let reference = &samples[choose_reference(samples)?].x;
    let mut sum = vec![0.0; reference.as_slice().len()];
    for s in samples {
        let aligned = procrustes_align(&s.x, reference)?;
        for (acc, v) in sum.iter_mut().zip(aligned.as_slice()) {
            *acc += v;
        }
    }
    let m = samples.len() as f64;
    Positions::from_vec(reference.n(), reference.d(), sum.into_iter().map(|v| v / m).collect())
}
