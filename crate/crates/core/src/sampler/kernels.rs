use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use super::{accept, sample_log_weights, ChainState, Sampler};
use crate::model::{distance, log_beta_prior, softplus, GroupStats, HyperParams};

impl Sampler<'_> {
    /// Random-walk Metropolis update of `beta`.
    pub fn update_beta<R: Rng + ?Sized>(&self, st: &mut ChainState, rng: &mut R) -> bool {
        let step: f64 = rng.sample(StandardNormal);
        let proposal = st.cfg.beta + self.sigma_beta * step;
        let ll_new = self.likelihood_at(st, proposal);
        let log_ratio = ll_new - st.log_likelihood + log_beta_prior(proposal, &self.hp)
            - log_beta_prior(st.cfg.beta, &self.hp);
        if accept(log_ratio, rng) {
            st.cfg.beta = proposal;
            st.log_likelihood = self.fill_softplus(st, proposal);
            true
        } else {
            false
        }
    }

    /// One random-walk Metropolis update per actor, in index order.
    /// Returns the number of accepted moves.
    pub fn update_positions<R: Rng + ?Sized>(&self, st: &mut ChainState, rng: &mut R) -> usize {
        let n = st.n();
        let d = self.hp.d;
        let beta = st.cfg.beta;
        let ln_g = st.gamma.ln();
        let mut prop = vec![0.0; d];
        let mut new_dist = vec![0.0; n];
        let mut new_sp = vec![0.0; n];
        let mut accepted = 0;
        for i in 0..n {
            let xi = st.cfg.x.row(i);
            for (p, x) in prop.iter_mut().zip(xi) {
                *p = x + self.sigma_x * rng.sample::<f64, _>(StandardNormal);
            }
            let mut delta_ll = 0.0;
            if self.sc.use_likelihood {
                let row = i * n;
                for j in (0..n).filter(|&j| j != i) {
                    let dist = distance(&prop, st.cfg.x.row(j));
                    let sp = softplus(beta - dist);
                    new_dist[j] = dist;
                    new_sp[j] = sp;
                    delta_ll += self.ties[row + j] * (st.dist[row + j] - dist)
                        - self.per_pair * (sp - st.softplus[row + j]);
                }
            }
            let s = &st.stats[st.alloc.label(i)];
            let old_lam = self.marg.ln_lambda_parts(s.n, s.scatter(self.hp.kappa), ln_g, st.gamma);
            let new_lam = self.marg.ln_lambda_parts(
                s.n,
                shifted_scatter(s, xi, &prop, self.hp.kappa),
                ln_g,
                st.gamma,
            );
            if accept(delta_ll + new_lam - old_lam, rng) {
                accepted += 1;
                let g = st.alloc.label(i);
                let old = xi.to_vec();
                st.stats[g].shift(&old, &prop);
                st.cfg.x.row_mut(i).copy_from_slice(&prop);
                if self.sc.use_likelihood {
                    for j in (0..n).filter(|&j| j != i) {
                        st.dist[i * n + j] = new_dist[j];
                        st.dist[j * n + i] = new_dist[j];
                        st.softplus[i * n + j] = new_sp[j];
                        st.softplus[j * n + i] = new_sp[j];
                    }
                    st.log_likelihood += delta_ll;
                }
            }
        }
        accepted
    }

    /// Log weights of the full conditional of actor `i`'s label, with `i`
    /// removed from its current group's statistics in `own`.
    fn label_log_weights(&self, st: &ChainState, i: usize, own: &GroupStats) -> Vec<f64> {
        let xi = st.cfg.x.row(i);
        let xsq: f64 = xi.iter().map(|v| v * v).sum();
        let ln_g = st.gamma.ln();
        let kappa = self.hp.kappa;
        let current = st.alloc.label(i);
        (0..st.g())
            .map(|g| {
                let s = if g == current { own } else { &st.stats[g] };
                let with_sum: f64 = s.sum.iter().zip(xi).map(|(a, b)| (a + b) * (a + b)).sum();
                let with_scatter = s.sumsq + xsq - with_sum / (s.n as f64 + 1.0 + kappa);
                (s.n as f64 + self.hp.alpha).ln()
                    + self.marg.ln_lambda_parts(s.n + 1, with_scatter, ln_g, st.gamma)
                    - self.marg.ln_lambda_parts(s.n, s.scatter(kappa), ln_g, st.gamma)
            })
            .collect()
    }

    /// The full conditional distribution of actor `i`'s label.
    pub fn label_conditional(&self, st: &ChainState, i: usize) -> Vec<f64> {
        let mut own = st.stats[st.alloc.label(i)].clone();
        own.remove(st.cfg.x.row(i));
        let w = self.label_log_weights(st, i, &own);
        let max = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let p: Vec<f64> = w.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = p.iter().sum();
        p.into_iter().map(|v| v / total).collect()
    }

    /// A Gibbs pass over every label. Returns how many labels changed.
    pub fn gibbs_labels<R: Rng + ?Sized>(&self, st: &mut ChainState, rng: &mut R) -> usize {
        if st.g() == 1 {
            return 0;
        }
        let mut moved = 0;
        for i in 0..st.n() {
            let from = st.alloc.label(i);
            let xi = st.cfg.x.row(i).to_vec();
            let mut own = std::mem::replace(&mut st.stats[from], GroupStats::empty(0));
            own.remove(&xi);
            let w = self.label_log_weights(st, i, &own);
            st.stats[from] = own;
            let to = sample_log_weights(&w, rng);
            st.stats[to].add(&xi);
            if to != from {
                st.alloc.relabel(i, to);
                moved += 1;
            }
        }
        moved
    }

    /// Draws the component precisions given positions and `gamma`, then
    /// `gamma` given the precisions.
    pub fn update_tau_gamma<R: Rng + ?Sized>(&self, st: &mut ChainState, rng: &mut R) {
        st.tau = st
            .stats
            .iter()
            .map(|s| {
                let (shape, rate) = tau_conditional(&self.hp, s, st.gamma);
                draw_gamma(shape, rate, rng)
            })
            .collect();
        let (shape, rate) = gamma_conditional(&self.hp, &st.tau);
        st.gamma = draw_gamma(shape, rate, rng);
    }
}

/// Shape and rate of the conditional of one component precision.
pub fn tau_conditional(hp: &HyperParams, s: &GroupStats, gamma: f64) -> (f64, f64) {
    (
        (s.n as f64 * hp.d as f64 + hp.delta) / 2.0,
        0.5 * (s.scatter(hp.kappa) + gamma),
    )
}

/// Shape and rate of the conditional of `gamma` given the precisions.
pub fn gamma_conditional(hp: &HyperParams, tau: &[f64]) -> (f64, f64) {
    (
        (tau.len() as f64 * hp.delta + hp.gamma_s) / 2.0,
        0.5 * (tau.iter().sum::<f64>() + hp.gamma_r),
    )
}

/// Scatter of `s` after one member moves from `old` to `new`.
fn shifted_scatter(s: &GroupStats, old: &[f64], new: &[f64], kappa: f64) -> f64 {
    let mut sum_sq = 0.0;
    let mut sumsq = s.sumsq;
    for ((a, o), v) in s.sum.iter().zip(old).zip(new) {
        let t = a - o + v;
        sum_sq += t * t;
        sumsq += v * v - o * o;
    }
    sumsq - sum_sq / (s.n as f64 + kappa)
}

pub(crate) fn draw_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    Gamma::new(shape, 1.0 / rate)
        .expect("gamma parameters are positive")
        .sample(rng)
}

#[cfg(test)]
mod tests {
    use super::super::tests::small_sampler_parts;
    use super::super::*;
    use super::{gamma_conditional, tau_conditional};
    use rand_distr::StandardNormal;
    use crate::model::{log_collapsed_target, log_component_marginal};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_state(s: &Sampler, g: usize, rng: &mut ChaCha8Rng) -> ChainState {
        let n = s.network().n();
        let data = (0..2 * n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let x = Positions::from_vec(n, 2, data).unwrap();
        let labels = (0..n).map(|_| rng.random_range(0..g)).collect();
        let alloc = Allocation::new(g, labels).unwrap();
        s.state_from(x, rng.random_range(-1.0..1.0), alloc, rng.random_range(0.05..0.5))
            .unwrap()
    }

    #[test]
    fn gibbs_conditional_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for directed in [false, true] {
            let ties: Vec<_> = [(0, 1), (1, 2), (2, 3), (3, 0), (1, 3)].into();
            let net = Network::from_ties(4, directed, ties).unwrap();
            let hp = HyperParams::default();
            let sc = SamplerConfig::new(4, hp.g_max);
            let s = Sampler::new(&net, hp.clone(), sc).unwrap();
            for _ in 0..20 {
                let g = rng.random_range(2..=3);
                let st = random_state(&s, g, &mut rng);
                for i in 0..4 {
                    let cond = s.label_conditional(&st, i);
                    let targets: Vec<f64> = (0..g)
                        .map(|k| {
                            let mut labels = st.alloc.labels().to_vec();
                            labels[i] = k;
                            let a = Allocation::new(g, labels).unwrap();
                            log_collapsed_target(&net, &st.cfg, &a, st.gamma, &hp).unwrap()
                        })
                        .collect();
                    let max = targets.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = targets.iter().map(|t| (t - max).exp()).sum();
                    for k in 0..g {
                        let exact = (targets[k] - max).exp() / z;
                        assert!((cond[k] - exact).abs() < 1e-10, "{} vs {}", cond[k], exact);
                    }
                }
            }
        }
    }

    #[test]
    fn gibbs_symmetric_configuration() {
        let (net, hp, sc) = small_sampler_parts(3, 4);
        let s = Sampler::new(&net, hp, sc).unwrap();
        let x = Positions::from_rows(&[vec![-1.0, 0.0], vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let alloc = Allocation::new(2, vec![0, 0, 1]).unwrap();
        let st = s.state_from(x, 0.0, alloc, 0.1).unwrap();
        let p = s.label_conditional(&st, 1);
        assert_relative_eq!(p[0], 0.5, epsilon = 1e-12);
        assert_relative_eq!(p[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn gibbs_with_one_group_is_identity() {
        let (net, hp, sc) = small_sampler_parts(5, 4);
        let s = Sampler::new(&net, hp, sc).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut st = random_state(&s, 1, &mut rng);
        assert_eq!(s.gibbs_labels(&mut st, &mut rng), 0);
        assert_eq!(s.label_conditional(&st, 2), vec![1.0]);
    }

    #[test]
    fn gibbs_keeps_stats_consistent() {
        let net = crate::datasets::karate();
        let hp = HyperParams::default();
        let sc = SamplerConfig::new(net.n(), hp.g_max);
        let s = Sampler::new(&net, hp, sc).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut st = random_state(&s, 4, &mut rng);
        for _ in 0..200 {
            s.gibbs_labels(&mut st, &mut rng);
        }
        assert!(s.cache_error(&st).unwrap() < 1e-10);
    }

    #[test]
    fn beta_chain_recovers_prior_without_likelihood() {
        let (net, hp, mut sc) = small_sampler_parts(3, 1);
        sc.sigma_beta = 2.5;
        let s = Sampler::new(&net, hp, sc).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut st = random_state(&s, 1, &mut rng);
        let draws = 100_000;
        let (mut sum, mut sumsq) = (0.0, 0.0);
        for _ in 0..draws {
            s.update_beta(&mut st, &mut rng);
            sum += st.cfg.beta;
            sumsq += st.cfg.beta * st.cfg.beta;
        }
        let mean = sum / draws as f64;
        let var = sumsq / draws as f64 - mean * mean;
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((1.9..=2.1).contains(&var), "var {var}");
    }

    #[test]
    fn tiny_beta_steps_are_accepted() {
        let net = crate::datasets::monks();
        let hp = HyperParams::default();
        let mut sc = SamplerConfig::new(net.n(), hp.g_max);
        sc.sigma_beta = 1e-12;
        let s = Sampler::new(&net, hp, sc).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut st = s.initial_state(&mut rng).unwrap();
        assert!((0..100).all(|_| s.update_beta(&mut st, &mut rng)));
    }

    #[test]
    fn karate_beta_acceptance_in_range() {
        let net = crate::datasets::karate();
        let hp = HyperParams::default();
        let mut sc = SamplerConfig::new(net.n(), hp.g_max);
        sc.burnin = 2_000;
        sc.iters = 5_000;
        sc.adapt = false;
        sc.seed = 8;
        let out = run_chain(&net, &hp, &sc).unwrap();
        let rate = out.report.beta.rate();
        assert!((0.2..=0.6).contains(&rate), "beta acceptance {rate}");
    }

    /// With `G = 1`, `gamma` fixed and no likelihood, actor 0's position
    /// given the others has density proportional to `lambda_1`, which
    /// depends on `x_0` only through its distance from a centre. Compare
    /// the radial distribution with a numerically normalized oracle.
    #[test]
    fn single_actor_positions_match_marginal() {
        let (net, hp, mut sc) = small_sampler_parts(2, 1);
        sc.sigma_x = 0.8;
        let s = Sampler::new(&net, hp.clone(), sc).unwrap();
        let other = [0.7, -0.3];
        let x = Positions::from_rows(&[vec![0.0, 0.0], other.to_vec()]).unwrap();
        let gamma = 0.2;
        let mut st = s.state_from(x, 0.0, Allocation::single(2), gamma).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        // Only actor 0 is updated: run the per-actor kernel and restore
        // actor 1 afterward (its own move is irrelevant to the draw of x_0
        // when actor 1 is pinned).
        let centre = [other[0] / (1.0 + hp.kappa), other[1] / (1.0 + hp.kappa)];
        let mut radii = Vec::with_capacity(100_000);
        for _ in 0..100_000 {
            s.update_positions(&mut st, &mut rng);
            st.cfg.x.row_mut(1).copy_from_slice(&other);
            s.refresh(&mut st);
            let p = st.cfg.x.row(0);
            radii.push(((p[0] - centre[0]).powi(2) + (p[1] - centre[1]).powi(2)).sqrt());
        }
        // Oracle: density of the radius r of x_0 about the centre,
        // 2 pi r lambda(x_0), integrated on a fine grid.
        let lam = |r: f64| {
            let mut g = GroupStats::empty(2);
            g.add(&[centre[0] + r, centre[1]]);
            g.add(&other);
            log_component_marginal(&g, &hp, gamma).unwrap().exp() * r
        };
        let (r_max, steps) = (400.0, 400_000);
        let h = r_max / steps as f64;
        let mut cdf = vec![0.0; steps + 1];
        for k in 1..=steps {
            let (a, b) = ((k - 1) as f64 * h, k as f64 * h);
            cdf[k] = cdf[k - 1] + h / 6.0 * (lam(a) + 4.0 * lam(0.5 * (a + b)) + lam(b));
        }
        let total = cdf[steps];
        radii.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let m = radii.len() as f64;
        let mut ks: f64 = 0.0;
        for (k, r) in radii.iter().enumerate() {
            let idx = ((r / h) as usize).min(steps);
            let f = cdf[idx] / total;
            ks = ks.max((f - k as f64 / m).abs()).max((f - (k + 1) as f64 / m).abs());
        }
        assert!(ks < 0.02, "KS statistic {ks}");
    }

    #[test]
    fn tau_reverts_to_prior_for_empty_group() {
        let (net, hp, sc) = small_sampler_parts(3, 4);
        let s = Sampler::new(&net, hp.clone(), sc).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let x = Positions::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0], vec![2.0, 2.0]]).unwrap();
        let alloc = Allocation::new(2, vec![0, 0, 0]).unwrap();
        let mut st = s.state_from(x, 0.0, alloc, 0.3).unwrap();
        let draws = 100_000;
        let mut sum = 0.0;
        for _ in 0..draws {
            st.gamma = 0.3;
            s.update_tau_gamma(&mut st, &mut rng);
            sum += st.tau[1];
        }
        // Gamma(delta/2, gamma/2) has mean delta/gamma.
        let mean = sum / draws as f64;
        let expected = hp.delta / 0.3;
        let se = (hp.delta / 2.0).sqrt() / 0.15 / (draws as f64).sqrt();
        assert!((mean - expected).abs() < 4.0 * se, "{mean} vs {expected}");
    }

    /// Conjugate check: with positions drawn from one Gaussian of known
    /// precision, the chain's posterior mean of tau_1 matches
    /// E[ E[tau | gamma, X] ] under the exact marginal posterior of gamma,
    /// computed by quadrature over gamma.
    #[test]
    fn tau_posterior_mean_matches_conjugate_form() {
        let (net, hp, sc) = small_sampler_parts(12, 1);
        let s = Sampler::new(&net, hp.clone(), sc).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let true_tau: f64 = 4.0;
        let rows: Vec<Vec<f64>> = (0..12)
            .map(|_| {
                vec![
                    1.0 + rng.sample::<f64, _>(StandardNormal) / true_tau.sqrt(),
                    -0.5 + rng.sample::<f64, _>(StandardNormal) / true_tau.sqrt(),
                ]
            })
            .collect();
        let x = Positions::from_rows(&rows).unwrap();
        let mut st = s
            .state_from(x, 0.0, Allocation::single(12), hp.gamma_prior_mean())
            .unwrap();
        let draws = 100_000;
        let mut values = Vec::with_capacity(draws);
        for _ in 0..draws {
            s.update_tau_gamma(&mut st, &mut rng);
            values.push(st.tau[0]);
        }
        let mean = values.iter().sum::<f64>() / draws as f64;
        // Batch-means standard error.
        let batches = 100;
        let size = draws / batches;
        let bm: Vec<f64> = values
            .chunks(size)
            .map(|c| c.iter().sum::<f64>() / size as f64)
            .collect();
        let var_b = bm.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (batches - 1) as f64;
        let se = (var_b / batches as f64).sqrt();

        // p(gamma | X) is proportional to lambda(X; gamma) times the gamma
        // hyperprior; E[tau | gamma, X] = (n d + delta) / (scatter + gamma).
        let scatter = st.stats[0].scatter(hp.kappa);
        let shape = (12.0 * 2.0 + hp.delta) / 2.0;
        let ln_post = |g: f64| {
            log_component_marginal(&st.stats[0], &hp, g).unwrap()
                + (hp.gamma_s / 2.0 - 1.0) * g.ln()
                - hp.gamma_r / 2.0 * g
        };
        let (lo, hi, steps) = (1e-6, 1.0, 200_000);
        let h = (hi - lo) / steps as f64;
        let peak = (0..=steps)
            .map(|k| ln_post(lo + k as f64 * h))
            .fold(f64::NEG_INFINITY, f64::max);
        let (mut z, mut m) = (0.0, 0.0);
        for k in 0..=steps {
            let g = lo + k as f64 * h;
            let w = if k == 0 || k == steps { 0.5 } else { 1.0 };
            let p = w * (ln_post(g) - peak).exp();
            z += p;
            m += p * 2.0 * shape / (scatter + g);
        }
        let exact = m / z;
        assert!((mean - exact).abs() < 3.0 * se, "{mean} vs {exact} (se {se})");
    }

    #[test]
    fn conditional_parameters() {
        let hp = HyperParams::default();
        let (shape, rate) = gamma_conditional(&hp, &[2.5]);
        assert_relative_eq!(shape, (hp.delta + hp.gamma_s) / 2.0);
        assert_relative_eq!(rate, (2.5 + hp.gamma_r) / 2.0);
        let (shape, rate) = tau_conditional(&hp, &GroupStats::empty(2), 0.3);
        assert_relative_eq!(shape, hp.delta / 2.0);
        assert_relative_eq!(rate, 0.15);
    }
}
