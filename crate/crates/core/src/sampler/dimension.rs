use rand::Rng;
use rand_distr::{Beta, Distribution};
use statrs::function::gamma::ln_gamma;

use super::{accept, ordered_pair, ChainState, Sampler};
use crate::model::GroupStats;

/// A proposed eject: members `movers` of component `source` leave for a
/// new component, which takes label `ins`; existing labels `>= ins` shift
/// up by one.
#[derive(Clone, Debug, PartialEq)]
pub struct EjectProposal {
    pub source: usize,
    pub ins: usize,
    pub movers: Vec<usize>,
    pub a: f64,
}

impl EjectProposal {
    /// The absorb that undoes this eject from the post-eject state.
    pub fn reverse(&self) -> AbsorbProposal {
        AbsorbProposal {
            keep: self.source + (self.source >= self.ins) as usize,
            absorbed: self.ins,
        }
    }
}

/// A proposed absorb: component `absorbed` merges into `keep`, and labels
/// above `absorbed` shift down by one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AbsorbProposal {
    pub keep: usize,
    pub absorbed: usize,
}

/// Log of the integrated `Beta(a, a)` split factor of an eject,
/// `Gamma(a)^2 / Gamma(2a) * Gamma(2a + n) / (Gamma(a + n_stay) Gamma(a + n_move))`.
pub fn eject_gamma_factor(a: f64, n_stay: usize, n_move: usize) -> f64 {
    let n = (n_stay + n_move) as f64;
    2.0 * ln_gamma(a) - ln_gamma(2.0 * a) + ln_gamma(2.0 * a + n)
        - ln_gamma(a + n_stay as f64)
        - ln_gamma(a + n_move as f64)
}

impl Sampler<'_> {
    pub fn propose_eject<R: Rng + ?Sized>(&self, st: &ChainState, rng: &mut R) -> EjectProposal {
        let g = st.g();
        let source = rng.random_range(0..g);
        let a = self.sc.beta_table.get(st.stats[source].n);
        let p = Beta::new(a, a).expect("a is positive").sample(rng);
        let movers = st
            .alloc
            .members(source)
            .into_iter()
            .filter(|_| rng.random::<f64>() < p)
            .collect();
        let ins = rng.random_range(0..=g);
        EjectProposal {
            source,
            ins,
            movers,
            a,
        }
    }

    pub fn propose_absorb<R: Rng + ?Sized>(&self, st: &ChainState, rng: &mut R) -> AbsorbProposal {
        let (keep, absorbed) = ordered_pair(st.g(), rng);
        AbsorbProposal { keep, absorbed }
    }

    fn eject_parts(&self, st: &ChainState, prop: &EjectProposal) -> (GroupStats, GroupStats) {
        let mut moving = vec![false; st.n()];
        for &i in &prop.movers {
            moving[i] = true;
        }
        let mut stay = GroupStats::empty(self.hp.d);
        let mut leave = GroupStats::empty(self.hp.d);
        for i in st.alloc.members(prop.source) {
            if moving[i] {
                leave.add(st.cfg.x.row(i));
            } else {
                stay.add(st.cfg.x.row(i));
            }
        }
        (stay, leave)
    }

    fn counts_after_eject(&self, st: &ChainState, prop: &EjectProposal) -> Vec<usize> {
        let mut counts = st.alloc.counts().to_vec();
        counts[prop.source] -= prop.movers.len();
        counts.insert(prop.ins, prop.movers.len());
        counts
    }

    /// Log acceptance ratio of an eject from `G` to `G + 1` components.
    pub fn eject_log_ratio(&self, st: &ChainState, prop: &EjectProposal) -> f64 {
        let g = st.g();
        let (stay, leave) = self.eject_parts(st, prop);
        let target = self.ln_label_prior(&self.counts_after_eject(st, prop))
            - self.ln_label_prior(st.alloc.counts())
            + self.ln_lambda(&stay, st.gamma)
            + self.ln_lambda(&leave, st.gamma)
            - self.ln_lambda(&st.stats[prop.source], st.gamma);
        let moves = (1.0 - self.sc.eject_prob[g + 1]).ln() - self.sc.eject_prob[g].ln();
        target + moves + eject_gamma_factor(prop.a, stay.n, leave.n)
    }

    /// Log acceptance ratio of an absorb from `G` to `G - 1` components.
    pub fn absorb_log_ratio(&self, st: &ChainState, prop: &AbsorbProposal) -> f64 {
        let g = st.g();
        let (k, m) = (&st.stats[prop.keep], &st.stats[prop.absorbed]);
        let merged = k.merged(m);
        let a = self.sc.beta_table.get(merged.n);
        let mut counts = st.alloc.counts().to_vec();
        counts[prop.keep] += counts[prop.absorbed];
        counts.remove(prop.absorbed);
        let target = self.ln_label_prior(&counts) - self.ln_label_prior(st.alloc.counts())
            + self.ln_lambda(&merged, st.gamma)
            - self.ln_lambda(k, st.gamma)
            - self.ln_lambda(m, st.gamma);
        let moves = self.sc.eject_prob[g - 1].ln() - (1.0 - self.sc.eject_prob[g]).ln();
        target + moves - eject_gamma_factor(a, k.n, m.n)
    }

    pub fn apply_eject(&self, st: &mut ChainState, prop: &EjectProposal) {
        let (stay, leave) = self.eject_parts(st, prop);
        let g = st.g();
        let mut labels: Vec<usize> = st
            .alloc
            .labels()
            .iter()
            .map(|&l| l + (l >= prop.ins) as usize)
            .collect();
        for &i in &prop.movers {
            labels[i] = prop.ins;
        }
        st.alloc.reset(g + 1, labels);
        st.stats[prop.source] = stay;
        st.stats.insert(prop.ins, leave);
        let tau = st.tau[prop.source];
        st.tau.insert(prop.ins, tau);
    }

    pub fn apply_absorb(&self, st: &mut ChainState, prop: &AbsorbProposal) {
        let g = st.g();
        let labels: Vec<usize> = st
            .alloc
            .labels()
            .iter()
            .map(|&l| if l == prop.absorbed { prop.keep } else { l })
            .map(|l| l - (l > prop.absorbed) as usize)
            .collect();
        st.alloc.reset(g - 1, labels);
        let merged = st.stats[prop.keep].merged(&st.stats[prop.absorbed]);
        st.stats[prop.keep] = merged;
        st.stats.remove(prop.absorbed);
        st.tau.remove(prop.absorbed);
    }

    /// Proposes and accepts or rejects an eject. Requires `G < g_max`.
    pub fn eject<R: Rng + ?Sized>(&self, st: &mut ChainState, rng: &mut R) -> bool {
        if st.g() >= self.hp.g_max {
            return false;
        }
        let prop = self.propose_eject(st, rng);
        let log_ratio = self.eject_log_ratio(st, &prop);
        debug_assert!(!log_ratio.is_nan());
        if accept(log_ratio, rng) {
            self.apply_eject(st, &prop);
            true
        } else {
            false
        }
    }

    /// Proposes and accepts or rejects an absorb. Requires `G >= 2`.
    pub fn absorb<R: Rng + ?Sized>(&self, st: &mut ChainState, rng: &mut R) -> bool {
        if st.g() < 2 {
            return false;
        }
        let prop = self.propose_absorb(st, rng);
        let log_ratio = self.absorb_log_ratio(st, &prop);
        debug_assert!(!log_ratio.is_nan());
        if accept(log_ratio, rng) {
            self.apply_absorb(st, &prop);
            true
        } else {
            false
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::small_sampler_parts;
    use super::super::*;
    use super::*;
    use crate::model::{log_alloc_prior_counts, log_collapsed_target};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_state(s: &Sampler, rng: &mut ChaCha8Rng, g_max: usize) -> ChainState {
        let n = s.network().n();
        let g = rng.random_range(1..g_max);
        let data = (0..2 * n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let x = Positions::from_vec(n, 2, data).unwrap();
        let labels = (0..n).map(|_| rng.random_range(0..g)).collect();
        let alloc = Allocation::new(g, labels).unwrap();
        s.state_from(x, rng.random_range(-1.0..1.0), alloc, rng.random_range(0.05..1.0))
            .unwrap()
    }

    #[test]
    fn gamma_factor_example() {
        assert_relative_eq!(eject_gamma_factor(1.0, 2, 0).exp(), 3.0, max_relative = 1e-12);
        assert_relative_eq!(eject_gamma_factor(1.0, 0, 2).exp(), 3.0, max_relative = 1e-12);
        assert_eq!(eject_gamma_factor(2.5, 0, 0), 0.0);
    }

    #[test]
    fn eject_absorb_are_mutual_inverses() {
        let net = crate::datasets::karate();
        let hp = HyperParams::default();
        let sc = SamplerConfig::new(net.n(), hp.g_max);
        let s = Sampler::new(&net, hp.clone(), sc).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        for _ in 0..1000 {
            let st = random_state(&s, &mut rng, hp.g_max);
            let prop = s.propose_eject(&st, &mut rng);
            let rho = s.eject_log_ratio(&st, &prop);
            let mut after = st.clone();
            s.apply_eject(&mut after, &prop);
            assert!(s.cache_error(&after).unwrap() < 1e-10);
            let back = prop.reverse();
            let upsilon = s.absorb_log_ratio(&after, &back);
            assert!(rho.is_finite() && upsilon.is_finite());
            let prod = (rho + upsilon).exp();
            assert!((prod - 1.0).abs() < 1e-10, "rho * upsilon = {prod}");
            s.apply_absorb(&mut after, &back);
            assert_eq!(after.alloc, st.alloc);
            assert!(s.cache_error(&after).unwrap() < 1e-10);
        }
    }

    /// The ratio's target part equals the change in the full collapsed
    /// target evaluated from scratch.
    #[test]
    fn eject_ratio_matches_full_target() {
        let net = crate::datasets::monks();
        let hp = HyperParams::default();
        let sc = SamplerConfig::new(net.n(), hp.g_max);
        let s = Sampler::new(&net, hp.clone(), sc.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(102);
        for _ in 0..200 {
            let st = random_state(&s, &mut rng, hp.g_max);
            let g = st.g();
            let prop = s.propose_eject(&st, &mut rng);
            let mut after = st.clone();
            s.apply_eject(&mut after, &prop);
            let before_t = log_collapsed_target(&net, &st.cfg, &st.alloc, st.gamma, &hp).unwrap();
            let after_t =
                log_collapsed_target(&net, &after.cfg, &after.alloc, st.gamma, &hp).unwrap();
            let n_src = st.alloc.counts()[prop.source];
            let expected = after_t - before_t + (1.0 - sc.eject_prob[g + 1]).ln()
                - sc.eject_prob[g].ln()
                + eject_gamma_factor(prop.a, n_src - prop.movers.len(), prop.movers.len());
            let got = s.eject_log_ratio(&st, &prop);
            assert!((got - expected).abs() < 1e-9 * expected.abs().max(1.0));
        }
    }

    #[test]
    fn empty_source_ratio() {
        let (net, hp, sc) = small_sampler_parts(4, 4);
        let s = Sampler::new(&net, hp.clone(), sc.clone()).unwrap();
        let x = Positions::from_rows(&[
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 1.0],
        ])
        .unwrap();
        let alloc = Allocation::new(2, vec![0, 0, 0, 0]).unwrap();
        let st = s.state_from(x, 0.0, alloc, 0.2).unwrap();
        let prop = EjectProposal {
            source: 1,
            ins: 2,
            movers: vec![],
            a: sc.beta_table.get(0),
        };
        // No lambda and no Gamma-factor contribution: the prior on G, the
        // allocation prior and the move probabilities remain.
        let g_prior = crate::model::GPrior::new(&hp);
        let expected = g_prior.ln_prob(3) - g_prior.ln_prob(2)
            + log_alloc_prior_counts(&[4, 0, 0], hp.alpha)
            - log_alloc_prior_counts(&[4, 0], hp.alpha)
            + (1.0 - sc.eject_prob[3]).ln()
            - sc.eject_prob[2].ln();
        assert_relative_eq!(s.eject_log_ratio(&st, &prop), expected, max_relative = 1e-12);
        let mut after = st.clone();
        s.apply_eject(&mut after, &prop);
        assert_relative_eq!(
            s.absorb_log_ratio(&after, &prop.reverse()),
            -expected,
            max_relative = 1e-12
        );
    }

    #[test]
    fn absorb_to_one_group() {
        let (net, hp, sc) = small_sampler_parts(5, 4);
        let s = Sampler::new(&net, hp, sc).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(103);
        let x = Positions::zeros(5, 2);
        let alloc = Allocation::new(2, vec![0, 1, 1, 0, 1]).unwrap();
        let mut st = s.state_from(x, 0.0, alloc, 0.2).unwrap();
        let prop = s.propose_absorb(&st, &mut rng);
        s.apply_absorb(&mut st, &prop);
        assert_eq!(st.g(), 1);
        assert!(st.alloc.labels().iter().all(|&l| l == 0));
        assert_eq!(st.tau.len(), 1);
    }

    #[test]
    fn ratios_stay_finite_on_bundled_networks() {
        let mut rng = ChaCha8Rng::seed_from_u64(104);
        for net in [crate::datasets::monks(), crate::datasets::karate()] {
            let hp = HyperParams::default();
            let sc = SamplerConfig::new(net.n(), hp.g_max);
            let s = Sampler::new(&net, hp.clone(), sc).unwrap();
            for _ in 0..500 {
                let st = random_state(&s, &mut rng, hp.g_max);
                let e = s.propose_eject(&st, &mut rng);
                assert!(s.eject_log_ratio(&st, &e).is_finite());
                if st.g() >= 2 {
                    let a = s.propose_absorb(&st, &mut rng);
                    assert!(s.absorb_log_ratio(&st, &a).is_finite());
                }
            }
        }
    }
}
