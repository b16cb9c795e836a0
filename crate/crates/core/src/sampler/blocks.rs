use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Beta, Distribution};
use statrs::function::factorial::ln_binomial;
use statrs::function::gamma::ln_gamma;

use super::{accept, ordered_pair, ChainState, Sampler};
use crate::model::GroupStats;

/// The three multi-actor reallocation moves between two components.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockMove {
    /// Re-split the union of two groups with a `Beta(a, a)` coin.
    M1,
    /// Move a random subset of one group to another.
    M2,
    /// Rebuild two groups one actor at a time from the running conditional.
    M3,
}

impl BlockMove {
    /// The variant used at a given sweep: M1, M2, M3, M1, ...
    pub fn cycle(sweep: usize) -> Self {
        match sweep % 3 {
            0 => Self::M1,
            1 => Self::M2,
            _ => Self::M3,
        }
    }
}

impl Sampler<'_> {
    pub fn move_block<R: Rng + ?Sized>(
        &self,
        st: &mut ChainState,
        variant: BlockMove,
        rng: &mut R,
    ) -> bool {
        if st.g() < 2 {
            return false;
        }
        match variant {
            BlockMove::M1 => self.m1(st, rng),
            BlockMove::M2 => self.m2(st, rng),
            BlockMove::M3 => self.m3(st, rng),
        }
    }

    /// Change in the collapsed log target when groups `g1` and `g2` are
    /// replaced by `new1` and `new2`. Nothing else in the target moves.
    pub(crate) fn pair_delta(
        &self,
        st: &ChainState,
        g1: usize,
        g2: usize,
        new1: &GroupStats,
        new2: &GroupStats,
    ) -> f64 {
        let a = self.hp.alpha;
        let (old1, old2) = (&st.stats[g1], &st.stats[g2]);
        ln_gamma(new1.n as f64 + a) + ln_gamma(new2.n as f64 + a)
            - ln_gamma(old1.n as f64 + a)
            - ln_gamma(old2.n as f64 + a)
            + self.ln_lambda(new1, st.gamma)
            + self.ln_lambda(new2, st.gamma)
            - self.ln_lambda(old1, st.gamma)
            - self.ln_lambda(old2, st.gamma)
    }

    /// Change in the collapsed log target if each actor in `members` is
    /// placed in `g1` where `to_g1` is true and in `g2` otherwise.
    /// `members` must be exactly the current members of `g1` and `g2`.
    pub fn pair_move_log_target(
        &self,
        st: &ChainState,
        g1: usize,
        g2: usize,
        members: &[usize],
        to_g1: &[bool],
    ) -> f64 {
        let (new1, new2) = self.split_stats(st, members, to_g1);
        self.pair_delta(st, g1, g2, &new1, &new2)
    }

    fn split_stats(&self, st: &ChainState, members: &[usize], to_g1: &[bool]) -> (GroupStats, GroupStats) {
        let mut s1 = GroupStats::empty(self.hp.d);
        let mut s2 = GroupStats::empty(self.hp.d);
        for (&i, &first) in members.iter().zip(to_g1) {
            if first {
                s1.add(st.cfg.x.row(i));
            } else {
                s2.add(st.cfg.x.row(i));
            }
        }
        (s1, s2)
    }

    fn union(&self, st: &ChainState, g1: usize, g2: usize) -> Vec<usize> {
        (0..st.n())
            .filter(|&i| {
                let l = st.alloc.label(i);
                l == g1 || l == g2
            })
            .collect()
    }

    /// Accepts or rejects a proposed reassignment of `members` between `g1`
    /// and `g2`, given the log proposal ratio `q(back) / q(forward)`.
    #[allow(clippy::too_many_arguments)]
    fn finish<R: Rng + ?Sized>(
        &self,
        st: &mut ChainState,
        g1: usize,
        g2: usize,
        members: &[usize],
        to_g1: &[bool],
        new: (GroupStats, GroupStats),
        log_q_ratio: f64,
        rng: &mut R,
    ) -> bool {
        let log_ratio = self.pair_delta(st, g1, g2, &new.0, &new.1) + log_q_ratio;
        if !accept(log_ratio, rng) {
            return false;
        }
        for (&i, &first) in members.iter().zip(to_g1) {
            st.alloc.relabel(i, if first { g1 } else { g2 });
        }
        st.stats[g1] = new.0;
        st.stats[g2] = new.1;
        true
    }

    fn m1<R: Rng + ?Sized>(&self, st: &mut ChainState, rng: &mut R) -> bool {
        let (g1, g2) = ordered_pair(st.g(), rng);
        let members = self.union(st, g1, g2);
        let a = self.sc.beta_table.get(members.len());
        let p = Beta::new(a, a).expect("a is positive").sample(rng);
        let to_g1: Vec<bool> = members.iter().map(|_| rng.random::<f64>() < p).collect();
        let new = self.split_stats(st, &members, &to_g1);
        let (n1, n2) = (st.stats[g1].n as f64, st.stats[g2].n as f64);
        let (m1, m2) = (new.0.n as f64, new.1.n as f64);
        let log_q = ln_gamma(a + n1) + ln_gamma(a + n2) - ln_gamma(a + m1) - ln_gamma(a + m2);
        self.finish(st, g1, g2, &members, &to_g1, new, log_q, rng)
    }

    fn m2<R: Rng + ?Sized>(&self, st: &mut ChainState, rng: &mut R) -> bool {
        let g = st.g();
        let nonempty: Vec<usize> = (0..g).filter(|&k| st.stats[k].n > 0).collect();
        let g1 = nonempty[rng.random_range(0..nonempty.len())];
        let r = rng.random_range(0..g - 1);
        let g2 = r + (r >= g1) as usize;
        let source = st.alloc.members(g1);
        let n1 = source.len();
        let n2 = st.stats[g2].n;
        let m = rng.random_range(1..=n1);
        let moving = index::sample(rng, n1, m);
        let mut members = st.alloc.members(g2);
        let mut to_g1 = vec![false; members.len()];
        let mut picked = vec![false; n1];
        for k in moving.iter() {
            picked[k] = true;
        }
        for (k, &i) in source.iter().enumerate() {
            members.push(i);
            to_g1.push(!picked[k]);
        }
        let ne_before = nonempty.len() as f64;
        let ne_after = ne_before - (m == n1) as usize as f64 + (n2 == 0) as usize as f64;
        let n2_after = (n2 + m) as u64;
        let log_q = ne_before.ln() - ne_after.ln() + (n1 as f64).ln() + ln_binomial(n1 as u64, m as u64)
            - (n2_after as f64).ln()
            - ln_binomial(n2_after, m as u64);
        let new = self.split_stats(st, &members, &to_g1);
        self.finish(st, g1, g2, &members, &to_g1, new, log_q, rng)
    }

    fn m3<R: Rng + ?Sized>(&self, st: &mut ChainState, rng: &mut R) -> bool {
        let (g1, g2) = ordered_pair(st.g(), rng);
        let mut members = self.union(st, g1, g2);
        members.shuffle(rng);
        let current: Vec<bool> = members.iter().map(|&i| st.alloc.label(i) == g1).collect();

        let mut fwd = (GroupStats::empty(self.hp.d), GroupStats::empty(self.hp.d));
        let mut to_g1 = Vec::with_capacity(members.len());
        let mut log_q_fwd = 0.0;
        for &i in &members {
            let ln_p1 = self.sequential_ln_p1(st, &fwd, i);
            let first = rng.random::<f64>().ln() < ln_p1;
            log_q_fwd += if first { ln_p1 } else { ln_1m_exp(ln_p1) };
            to_g1.push(first);
            if first {
                fwd.0.add(st.cfg.x.row(i));
            } else {
                fwd.1.add(st.cfg.x.row(i));
            }
        }
        let log_q_back = self.sequential_log_prob(st, &members, &current);
        self.finish(st, g1, g2, &members, &to_g1, fwd, log_q_back - log_q_fwd, rng)
    }

    /// Log probability that the sequential allocation of M3, visiting
    /// `members` in order, produces `to_g1`.
    pub fn sequential_log_prob(&self, st: &ChainState, members: &[usize], to_g1: &[bool]) -> f64 {
        let mut part = (GroupStats::empty(self.hp.d), GroupStats::empty(self.hp.d));
        let mut total = 0.0;
        for (&i, &first) in members.iter().zip(to_g1) {
            let ln_p1 = self.sequential_ln_p1(st, &part, i);
            if first {
                total += ln_p1;
                part.0.add(st.cfg.x.row(i));
            } else {
                total += ln_1m_exp(ln_p1);
                part.1.add(st.cfg.x.row(i));
            }
        }
        total
    }

    /// Log probability of placing actor `i` in the first of the two partial
    /// groups.
    fn sequential_ln_p1(&self, st: &ChainState, part: &(GroupStats, GroupStats), i: usize) -> f64 {
        let x = st.cfg.x.row(i);
        let w = |s: &GroupStats| {
            let mut with = s.clone();
            with.add(x);
            (s.n as f64 + self.hp.alpha).ln() + self.ln_lambda(&with, st.gamma)
                - self.ln_lambda(s, st.gamma)
        };
        let (w1, w2) = (w(&part.0), w(&part.1));
        let max = w1.max(w2);
        w1 - (max + ((w1 - max).exp() + (w2 - max).exp()).ln())
    }
}

/// `ln(1 - e^x)` for `x <= 0`.
fn ln_1m_exp(x: f64) -> f64 {
    if x > -std::f64::consts::LN_2 {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}
