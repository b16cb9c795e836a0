use statrs::function::gamma::ln_gamma;

use super::{Allocation, HyperParams, Positions};
use crate::error::{Error, Result};

/// Sufficient statistics of one mixture component: member count, sum of
/// member positions and sum of their squared norms.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupStats {
    pub n: usize,
    pub sum: Vec<f64>,
    pub sumsq: f64,
}

impl GroupStats {
    pub fn empty(d: usize) -> Self {
        Self {
            n: 0,
            sum: vec![0.0; d],
            sumsq: 0.0,
        }
    }

    pub fn from_members(x: &Positions, members: &[usize]) -> Self {
        let mut s = Self::empty(x.d());
        for &i in members {
            s.add(x.row(i));
        }
        s
    }

    #[inline]
    pub fn add(&mut self, x: &[f64]) {
        self.n += 1;
        for (s, v) in self.sum.iter_mut().zip(x) {
            *s += v;
        }
        self.sumsq += norm_sq(x);
    }

    #[inline]
    pub fn remove(&mut self, x: &[f64]) {
        self.n -= 1;
        for (s, v) in self.sum.iter_mut().zip(x) {
            *s -= v;
        }
        self.sumsq -= norm_sq(x);
        if self.n == 0 {
            // Drop accumulated rounding so empty groups are exactly empty.
            self.sum.iter_mut().for_each(|s| *s = 0.0);
            self.sumsq = 0.0;
        }
    }

    /// Replaces one member's position `old` by `new`.
    #[inline]
    pub fn shift(&mut self, old: &[f64], new: &[f64]) {
        for ((s, o), v) in self.sum.iter_mut().zip(old).zip(new) {
            *s += v - o;
        }
        self.sumsq += norm_sq(new) - norm_sq(old);
    }

    pub fn merged(&self, other: &Self) -> Self {
        Self {
            n: self.n + other.n,
            sum: self.sum.iter().zip(&other.sum).map(|(a, b)| a + b).collect(),
            sumsq: self.sumsq + other.sumsq,
        }
    }

    /// `sum ||x||^2 - ||sum x||^2 / (n + kappa)`, the data part of the
    /// marginal's scale term.
    #[inline]
    pub fn scatter(&self, kappa: f64) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        self.sumsq - norm_sq(&self.sum) / (self.n as f64 + kappa)
    }
}

#[inline]
fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Statistics of every component of `alloc`, computed from scratch.
pub fn group_stats(x: &Positions, alloc: &Allocation) -> Vec<GroupStats> {
    let mut stats = vec![GroupStats::empty(x.d()); alloc.g()];
    for (i, &l) in alloc.labels().iter().enumerate() {
        stats[l].add(x.row(i));
    }
    stats
}

/// Log of the component marginal likelihood `lambda_g`: the positions of one
/// group with its Gaussian mean and precision integrated out.
///
/// An empty group contributes `0`.
pub fn log_component_marginal(stats: &GroupStats, hp: &HyperParams, gamma: f64) -> Result<f64> {
    if stats.n == 0 {
        return Ok(0.0);
    }
    let s = stats.scatter(hp.kappa) + gamma;
    if !(s > 0.0) {
        return Err(Error::CorruptStats(s));
    }
    let d = hp.d as f64;
    let n = stats.n as f64;
    let shape = (n * d + hp.delta) / 2.0;
    Ok(-(n * d / 2.0) * std::f64::consts::PI.ln() + (hp.delta / 2.0) * gamma.ln()
        - (d / 2.0) * (n / hp.kappa + 1.0).ln()
        + ln_gamma(shape)
        - ln_gamma(hp.delta / 2.0)
        - shape * s.ln())
}

/// Precomputed per-size constants of `log lambda_g`, for the sampler's hot
/// loops. Agrees with [`log_component_marginal`] term for term.
#[derive(Clone, Debug)]
pub struct ComponentMarginal {
    kappa: f64,
    half_delta: f64,
    /// (size-dependent constant, exponent) for each group size.
    table: Vec<(f64, f64)>,
}

impl ComponentMarginal {
    pub fn new(hp: &HyperParams, n_max: usize) -> Self {
        let d = hp.d as f64;
        let table = (0..=n_max)
            .map(|n| {
                let n = n as f64;
                let shape = (n * d + hp.delta) / 2.0;
                let constant = -(n * d / 2.0) * std::f64::consts::PI.ln()
                    - (d / 2.0) * (n / hp.kappa + 1.0).ln()
                    + ln_gamma(shape)
                    - ln_gamma(hp.delta / 2.0);
                (constant, shape)
            })
            .collect();
        Self {
            kappa: hp.kappa,
            half_delta: hp.delta / 2.0,
            table,
        }
    }

    /// `log lambda` for a group of `n` members with the given scatter.
    #[inline]
    pub fn ln_lambda_parts(&self, n: usize, scatter: f64, ln_gamma_rate: f64, gamma: f64) -> f64 {
        if n == 0 {
            return 0.0;
        }
        let (constant, shape) = self.table[n];
        constant + self.half_delta * ln_gamma_rate - shape * (scatter + gamma).ln()
    }

    #[inline]
    pub fn ln_lambda(&self, stats: &GroupStats, gamma: f64) -> f64 {
        self.ln_lambda_parts(stats.n, stats.scatter(self.kappa), gamma.ln(), gamma)
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }
}

/// `log pi(c | G)`, the Dirichlet-multinomial allocation prior.
pub fn log_alloc_prior(alloc: &Allocation, hp: &HyperParams) -> f64 {
    log_alloc_prior_counts(alloc.counts(), hp.alpha)
}

pub fn log_alloc_prior_counts(counts: &[usize], alpha: f64) -> f64 {
    let g = counts.len() as f64;
    let n: usize = counts.iter().sum();
    ln_gamma(g * alpha) - g * ln_gamma(alpha)
        + counts
            .iter()
            .map(|&c| ln_gamma(c as f64 + alpha))
            .sum::<f64>()
        - ln_gamma(n as f64 + g * alpha)
}

/// Poisson prior on `G`, truncated to `1..=g_max` and renormalized.
#[derive(Clone, Debug)]
pub struct GPrior {
    ln_probs: Vec<f64>,
}

impl GPrior {
    pub fn new(hp: &HyperParams) -> Self {
        let unnorm: Vec<f64> = (1..=hp.g_max)
            .map(|g| g as f64 * hp.g_rate.ln() - hp.g_rate - ln_gamma(g as f64 + 1.0))
            .collect();
        let max = unnorm.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let ln_z = max + unnorm.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        Self {
            ln_probs: unnorm.into_iter().map(|v| v - ln_z).collect(),
        }
    }

    /// `log pi(G)`; `-inf` outside `1..=g_max`.
    pub fn ln_prob(&self, g: usize) -> f64 {
        if g == 0 || g > self.ln_probs.len() {
            f64::NEG_INFINITY
        } else {
            self.ln_probs[g - 1]
        }
    }

    pub fn g_max(&self) -> usize {
        self.ln_probs.len()
    }

    pub fn probs(&self) -> Vec<f64> {
        self.ln_probs.iter().map(|v| v.exp()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn hp_with(delta: f64, kappa: f64) -> HyperParams {
        HyperParams {
            delta,
            kappa,
            ..HyperParams::default()
        }
    }

    /// Composite Simpson weights on `m` (even) intervals.
    fn simpson(m: usize) -> Vec<f64> {
        (0..=m)
            .map(|k| {
                if k == 0 || k == m {
                    1.0
                } else if k % 2 == 1 {
                    4.0
                } else {
                    2.0
                }
            })
            .map(|w| w / 3.0)
            .collect()
    }

    /// Brute-force quadrature of
    /// `int int prod_i N(x_i; mu, I/tau) N(mu; 0, I/(kappa tau)) Gamma(tau; delta/2, gamma/2) dmu dtau`
    /// in two dimensions: Simpson over `log tau`, and over a box in `mu`
    /// wide enough to hold the integrand's mass at each `tau`.
    fn lambda_by_quadrature(points: &[[f64; 2]], delta: f64, kappa: f64, gamma: f64) -> f64 {
        let n = points.len() as f64;
        let centre = [
            points.iter().map(|p| p[0]).sum::<f64>() / (n + kappa),
            points.iter().map(|p| p[1]).sum::<f64>() / (n + kappa),
        ];
        let (u_lo, u_hi, mu_steps, u_steps) = (-25.0, 18.0, 80, 1600);
        let wu = simpson(u_steps);
        let wm = simpson(mu_steps);
        let du = (u_hi - u_lo) / u_steps as f64;
        let two_pi = std::f64::consts::TAU;
        let mut total = 0.0;
        for (k, wk) in wu.iter().enumerate() {
            let tau: f64 = (u_lo + k as f64 * du).exp();
            let ln_gamma_pdf = (delta / 2.0) * (gamma / 2.0).ln() - ln_gamma(delta / 2.0)
                + (delta / 2.0 - 1.0) * tau.ln()
                - gamma / 2.0 * tau;
            let half_width = 12.0 / ((n + kappa) * tau).sqrt();
            let dm = 2.0 * half_width / mu_steps as f64;
            let mut inner = 0.0;
            for (a, wa) in wm.iter().enumerate() {
                let m0 = centre[0] - half_width + a as f64 * dm;
                for (b, wb) in wm.iter().enumerate() {
                    let m1 = centre[1] - half_width + b as f64 * dm;
                    let mut ln_f = (kappa * tau / two_pi).ln()
                        - 0.5 * kappa * tau * (m0 * m0 + m1 * m1);
                    for p in points {
                        let (e0, e1) = (p[0] - m0, p[1] - m1);
                        ln_f += (tau / two_pi).ln() - 0.5 * tau * (e0 * e0 + e1 * e1);
                    }
                    inner += wa * wb * ln_f.exp();
                }
            }
            inner *= dm * dm;
            total += wk * inner * ln_gamma_pdf.exp() * tau;
        }
        total * du
    }

    #[test]
    fn empty_group_contributes_nothing() {
        let hp = HyperParams::default();
        let s = GroupStats::empty(2);
        assert_eq!(log_component_marginal(&s, &hp, 0.103).unwrap(), 0.0);
        let cache = ComponentMarginal::new(&hp, 5);
        assert_eq!(cache.ln_lambda(&s, 0.103), 0.0);
    }

    #[test]
    fn single_point_at_origin() {
        let hp = hp_with(2.0, 0.1);
        let mut s = GroupStats::empty(2);
        s.add(&[0.0, 0.0]);
        let v = log_component_marginal(&s, &hp, 0.103).unwrap().exp();
        let expected = std::f64::consts::FRAC_1_PI * 0.103 / 11.0 / (0.103 * 0.103);
        assert_relative_eq!(v, expected, max_relative = 1e-12);
        assert_relative_eq!(v, 0.28095, epsilon = 1e-5);
        let q = lambda_by_quadrature(&[[0.0, 0.0]], 2.0, 0.1, 0.103);
        assert_relative_eq!(v, q, max_relative = 1e-3);
    }

    #[test]
    fn matches_quadrature_on_random_groups() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let size = rng.random_range(1..=3);
            let points: Vec<[f64; 2]> = (0..size)
                .map(|_| [rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)])
                .collect();
            let delta = rng.random_range(1.0..4.0);
            let kappa = rng.random_range(0.05..2.0);
            let gamma = rng.random_range(0.05..1.0);
            let hp = hp_with(delta, kappa);
            let mut s = GroupStats::empty(2);
            points.iter().for_each(|p| s.add(p));
            let closed = log_component_marginal(&s, &hp, gamma).unwrap().exp();
            let quad = lambda_by_quadrature(&points, delta, kappa, gamma);
            assert_relative_eq!(closed, quad, max_relative = 1e-3);
        }
    }

    #[test]
    fn cache_agrees_with_direct_formula() {
        let hp = HyperParams::default();
        let cache = ComponentMarginal::new(&hp, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let mut s = GroupStats::empty(2);
            for _ in 0..rng.random_range(1..=10) {
                s.add(&[rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]);
            }
            let g = rng.random_range(0.01..2.0);
            assert_relative_eq!(
                cache.ln_lambda(&s, g),
                log_component_marginal(&s, &hp, g).unwrap(),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn corrupted_stats_are_rejected() {
        let hp = HyperParams::default();
        let s = GroupStats {
            n: 2,
            sum: vec![10.0, 0.0],
            sumsq: 0.0,
        };
        assert!(matches!(
            log_component_marginal(&s, &hp, 0.1),
            Err(Error::CorruptStats(_))
        ));
    }

    #[test]
    fn alloc_prior_examples() {
        let hp = HyperParams::default();
        assert_relative_eq!(
            log_alloc_prior(&Allocation::single(7), &hp),
            0.0,
            epsilon = 1e-12
        );
        let a = Allocation::new(2, vec![0, 0, 1]).unwrap();
        let expected = 30.0 * 24.0 * 6.0 / 40320.0;
        assert_relative_eq!(
            log_alloc_prior(&a, &hp).exp(),
            expected,
            max_relative = 1e-12
        );
        assert_relative_eq!(expected, 0.107142857, max_relative = 1e-8);
    }

    #[test]
    fn alloc_prior_normalizes() {
        for alpha in [0.5, 1.0, 3.0] {
            for n in 1..=6usize {
                for g in 1..=3usize {
                    let total: f64 = (0..g.pow(n as u32))
                        .map(|mut code| {
                            let labels = (0..n)
                                .map(|_| {
                                    let l = code % g;
                                    code /= g;
                                    l
                                })
                                .collect();
                            let a = Allocation::new(g, labels).unwrap();
                            log_alloc_prior_counts(a.counts(), alpha).exp()
                        })
                        .sum();
                    assert!((total - 1.0).abs() < 1e-10, "n={n} g={g}: {total}");
                }
            }
        }
    }

    #[test]
    fn g_prior_ratios() {
        let hp = HyperParams::default();
        let p = GPrior::new(&hp);
        for g in 1..hp.g_max {
            assert_relative_eq!(
                (p.ln_prob(g + 1) - p.ln_prob(g)).exp(),
                1.0 / (g as f64 + 1.0),
                max_relative = 1e-12
            );
        }
        assert_relative_eq!(p.probs().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert_eq!(p.ln_prob(0), f64::NEG_INFINITY);
        assert_eq!(p.ln_prob(11), f64::NEG_INFINITY);
    }

    #[test]
    fn incremental_stats_track_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (n, g) = (30, 4);
        let data: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mut x = Positions::from_vec(n, 2, data).unwrap();
        let labels = (0..n).map(|_| rng.random_range(0..g)).collect();
        let mut alloc = Allocation::new(g, labels).unwrap();
        let mut stats = group_stats(&x, &alloc);
        for _ in 0..100_000 {
            let i = rng.random_range(0..n);
            if rng.random_bool(0.5) {
                let to = rng.random_range(0..g);
                let from = alloc.label(i);
                stats[from].remove(x.row(i));
                stats[to].add(x.row(i));
                alloc.relabel(i, to);
            } else {
                let old = x.row(i).to_vec();
                let new = [old[0] + rng.random_range(-0.5..0.5), old[1] + rng.random_range(-0.5..0.5)];
                stats[alloc.label(i)].shift(&old, &new);
                x.row_mut(i).copy_from_slice(&new);
            }
        }
        for (a, b) in stats.iter().zip(group_stats(&x, &alloc)) {
            assert_eq!(a.n, b.n);
            assert_relative_eq!(a.sumsq, b.sumsq, max_relative = 1e-8);
            for (u, v) in a.sum.iter().zip(&b.sum) {
                assert_relative_eq!(*u, *v, max_relative = 1e-8, epsilon = 1e-8);
            }
        }
    }
}
