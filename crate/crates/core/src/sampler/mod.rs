//! The collapsed MCMC sampler.
//!
//! One sweep runs, in order: a random-walk update of `beta`, one random-walk
//! update per actor position, a Gibbs pass over the labels, one multi-actor
//! block move, one eject-or-absorb attempt, and a draw of the component
//! precisions and `gamma`.

mod blocks;
mod dimension;
mod init;
mod kernels;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::model::{
    group_stats, ComponentMarginal, GPrior, GroupStats, HyperParams, LatentConfig, Positions,
    Allocation,
};
use crate::netdata::Network;

pub use blocks::BlockMove;
pub use dimension::{eject_gamma_factor, AbsorbProposal, EjectProposal};
pub use init::mds_positions;
pub use kernels::{gamma_conditional, tau_conditional};

/// Size-indexed parameter `a` of the symmetric `Beta(a, a)` splitting
/// proposal used by eject and by block move M1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaTable(Vec<f64>);

impl BetaTable {
    pub const GRID_STEP: f64 = 0.5;
    pub const GRID_MAX: f64 = 10.0;
    pub const MIN_EMPTY_PROB: f64 = 0.2;

    /// For each size `n <= n_max`, the largest `a` on `0.5, 1, ..., 10` that
    /// leaves the ejected part empty with probability at least 0.2, or 1 if
    /// no grid value does.
    pub fn new(n_max: usize) -> Self {
        let grid: Vec<f64> = (1..=(Self::GRID_MAX / Self::GRID_STEP) as usize)
            .map(|k| k as f64 * Self::GRID_STEP)
            .collect();
        Self(
            (0..=n_max)
                .map(|n| {
                    grid.iter()
                        .rev()
                        .copied()
                        .find(|&a| Self::empty_prob(a, n) >= Self::MIN_EMPTY_PROB)
                        .unwrap_or(1.0)
                })
                .collect(),
        )
    }

    /// Probability that a `Beta(a, a)`-binomial split of `n` items leaves
    /// one given side empty.
    pub fn empty_prob(a: f64, n: usize) -> f64 {
        let n = n as f64;
        (ln_gamma(2.0 * a) + ln_gamma(a + n) - ln_gamma(a) - ln_gamma(2.0 * a + n)).exp()
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        Self(values)
    }

    #[inline]
    pub fn get(&self, n: usize) -> f64 {
        self.0[n]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Probability of attempting an eject (rather than an absorb) at each `G`:
/// 1 at `G = 1`, 0 at `G = g_max`, 0.5 otherwise. Index 0 is unused.
pub fn eject_schedule(g_max: usize) -> Vec<f64> {
    (0..=g_max)
        .map(|g| match g {
            0 => 0.0,
            _ if g == g_max => 0.0,
            1 => 1.0,
            _ => 0.5,
        })
        .collect()
}

/// How the chain's positions are initialized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Init {
    /// Classical scaling of the geodesic distance matrix.
    Mds,
    /// Independent standard normal coordinates.
    Random,
    Given(Positions),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Proposal standard deviation for `beta`.
    pub sigma_beta: f64,
    /// Proposal standard deviation per position coordinate.
    pub sigma_x: f64,
    /// Sweeps recorded after burn-in (before thinning).
    pub iters: usize,
    pub burnin: usize,
    pub thin: usize,
    pub seed: u64,
    /// Stream of the ChaCha generator, so independent chains can share a seed.
    pub stream: u64,
    pub eject_prob: Vec<f64>,
    pub beta_table: BetaTable,
    /// Tune the proposal scales during burn-in.
    pub adapt: bool,
    /// When false the network is ignored and the chain targets the prior.
    pub use_likelihood: bool,
    /// When false `G` stays at its initial value.
    pub dimension_moves: bool,
    pub init: Init,
    /// Initial number of components; labels start as `i mod G`.
    pub init_g: usize,
}

impl SamplerConfig {
    /// Defaults for a network of `n` actors: proposal variances 1.7 and 0.5
    /// up to 40 actors, 3 and 0.2 above, and the 10,000 + 50,000 schedule
    /// thinned by 10.
    pub fn new(n: usize, g_max: usize) -> Self {
        let (var_x, var_beta) = default_proposal_variances(n);
        Self {
            sigma_beta: var_beta.sqrt(),
            sigma_x: var_x.sqrt(),
            iters: 50_000,
            burnin: 10_000,
            thin: 10,
            seed: 0,
            stream: 0,
            eject_prob: eject_schedule(g_max),
            beta_table: BetaTable::new(n),
            adapt: true,
            use_likelihood: true,
            dimension_moves: true,
            init: Init::Mds,
            init_g: 1,
        }
    }

    pub fn validate(&self, n: usize, g_max: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSamplerConfig(m));
        if !(self.sigma_beta > 0.0 && self.sigma_beta.is_finite()) {
            return bad(format!("sigma_beta must be positive, got {}", self.sigma_beta));
        }
        if !(self.sigma_x > 0.0 && self.sigma_x.is_finite()) {
            return bad(format!("sigma_x must be positive, got {}", self.sigma_x));
        }
        if self.thin == 0 {
            return bad("thin must be at least 1".into());
        }
        if self.eject_prob.len() != g_max + 1 {
            return bad(format!(
                "eject schedule has {} entries, expected {}",
                self.eject_prob.len(),
                g_max + 1
            ));
        }
        if g_max > 1 && (self.eject_prob[1] != 1.0 || self.eject_prob[g_max] != 0.0) {
            return bad("eject schedule must be 1 at G = 1 and 0 at G = g_max".into());
        }
        if self.eject_prob.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return bad("eject probabilities must lie in [0, 1]".into());
        }
        if self.beta_table.len() < n + 1 {
            return bad(format!("beta table must cover sizes 0..={n}"));
        }
        if self.init_g == 0 || self.init_g > g_max || self.init_g > n.max(1) {
            return bad(format!("initial G = {} is out of range", self.init_g));
        }
        if let Init::Given(x) = &self.init {
            if x.n() != n {
                return bad(format!("initial positions have {} rows, expected {n}", x.n()));
            }
        }
        Ok(())
    }
}

/// Proposal variances `(position, beta)` by network size.
pub fn default_proposal_variances(n: usize) -> (f64, f64) {
    if n <= 40 {
        (1.7, 0.5)
    } else {
        (3.0, 0.2)
    }
}

/// The full chain state: latent configuration, labels, `gamma`, the
/// uncollapsed precisions and cached quantities.
#[derive(Clone, Debug)]
pub struct ChainState {
    pub cfg: LatentConfig,
    pub alloc: Allocation,
    pub stats: Vec<GroupStats>,
    pub gamma: f64,
    pub tau: Vec<f64>,
    log_likelihood: f64,
    dist: Vec<f64>,
    softplus: Vec<f64>,
}

impl ChainState {
    pub fn n(&self) -> usize {
        self.alloc.n()
    }

    pub fn g(&self) -> usize {
        self.alloc.g()
    }

    /// The cached network log-likelihood (0 in likelihood-off mode).
    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihood
    }
}

/// One thinned draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub iter: usize,
    pub g: usize,
    pub beta: f64,
    pub gamma: f64,
    pub log_likelihood: f64,
    /// 0-based labels.
    pub labels: Vec<usize>,
    pub x: Positions,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Counter {
    pub attempts: u64,
    pub accepts: u64,
}

impl Counter {
    #[inline]
    pub fn record(&mut self, accepted: bool) {
        self.attempts += 1;
        self.accepts += accepted as u64;
    }

    pub fn add(&mut self, attempts: u64, accepts: u64) {
        self.attempts += attempts;
        self.accepts += accepts;
    }

    pub fn rate(&self) -> f64 {
        if self.attempts == 0 {
            0.0
        } else {
            self.accepts as f64 / self.attempts as f64
        }
    }
}

/// Acceptance counts over the recorded (post burn-in) sweeps, plus the
/// proposal scales that were in force.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceReport {
    pub beta: Counter,
    pub positions: Counter,
    /// Attempts are label draws, accepts are draws that changed the label.
    pub labels: Counter,
    pub m1: Counter,
    pub m2: Counter,
    pub m3: Counter,
    pub eject: Counter,
    pub absorb: Counter,
    pub sigma_x: f64,
    pub sigma_beta: f64,
}

impl AcceptanceReport {
    /// Combined acceptance rate of eject and absorb.
    pub fn dimension_rate(&self) -> f64 {
        let mut c = self.eject;
        c.add(self.absorb.attempts, self.absorb.accepts);
        c.rate()
    }

    pub fn merge(&mut self, other: &Self) {
        for (a, b) in [
            (&mut self.beta, &other.beta),
            (&mut self.positions, &other.positions),
            (&mut self.labels, &other.labels),
            (&mut self.m1, &other.m1),
            (&mut self.m2, &other.m2),
            (&mut self.m3, &other.m3),
            (&mut self.eject, &other.eject),
            (&mut self.absorb, &other.absorb),
        ] {
            a.add(b.attempts, b.accepts);
        }
    }
}

pub struct ChainOutput {
    pub samples: Vec<SampleRecord>,
    pub report: AcceptanceReport,
    pub final_state: ChainState,
}

/// The kernels, bound to one network and one set of hyperparameters.
pub struct Sampler<'a> {
    net: &'a Network,
    hp: HyperParams,
    sc: SamplerConfig,
    marg: ComponentMarginal,
    g_prior: GPrior,
    /// Tie count of each unordered pair, row-major `n x n`.
    ties: Vec<f64>,
    per_pair: f64,
    pub sigma_x: f64,
    pub sigma_beta: f64,
}

impl<'a> Sampler<'a> {
    pub fn new(net: &'a Network, hp: HyperParams, sc: SamplerConfig) -> Result<Self> {
        hp.validate()?;
        let n = net.n();
        sc.validate(n, hp.g_max)?;
        let ties = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| if i == j { 0.0 } else { net.pair_ties(i, j) as f64 })
            .collect();
        Ok(Self {
            net,
            marg: ComponentMarginal::new(&hp, n),
            g_prior: GPrior::new(&hp),
            ties,
            per_pair: net.dyads_per_pair() as f64,
            sigma_x: sc.sigma_x,
            sigma_beta: sc.sigma_beta,
            hp,
            sc,
        })
    }

    pub fn hyper(&self) -> &HyperParams {
        &self.hp
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.sc
    }

    pub fn network(&self) -> &Network {
        self.net
    }

    /// Builds a consistent state from explicit values. The precisions start
    /// at the prior mean `delta / gamma`.
    pub fn state_from(
        &self,
        x: Positions,
        beta: f64,
        alloc: Allocation,
        gamma: f64,
    ) -> Result<ChainState> {
        let n = self.net.n();
        if x.n() != n || alloc.n() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: if x.n() != n { x.n() } else { alloc.n() },
            });
        }
        if x.d() != self.hp.d {
            return Err(Error::DimensionMismatch {
                expected: self.hp.d,
                found: x.d(),
            });
        }
        if alloc.g() > self.hp.g_max {
            return Err(Error::InvalidAllocation(format!(
                "G = {} exceeds g_max = {}",
                alloc.g(),
                self.hp.g_max
            )));
        }
        if !(gamma > 0.0) {
            return Err(Error::InvalidHyperParams(format!("gamma must be positive, got {gamma}")));
        }
        let stats = group_stats(&x, &alloc);
        let mut st = ChainState {
            cfg: LatentConfig::new(x, beta),
            tau: vec![self.hp.delta / gamma; alloc.g()],
            alloc,
            stats,
            gamma,
            log_likelihood: 0.0,
            dist: vec![0.0; n * n],
            softplus: vec![0.0; n * n],
        };
        self.refresh(&mut st);
        Ok(st)
    }

    /// Initial state per the configuration: `beta = 0`, `gamma` at its
    /// prior mean, labels `i mod init_g`.
    pub fn initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ChainState> {
        let n = self.net.n();
        let x = match &self.sc.init {
            Init::Mds => mds_positions(self.net, self.hp.d),
            Init::Random => {
                let data = (0..n * self.hp.d)
                    .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
                    .collect();
                Positions::from_vec(n, self.hp.d, data)?
            }
            Init::Given(x) => x.clone(),
        };
        let g = self.sc.init_g;
        let alloc = Allocation::new(g, (0..n).map(|i| i % g).collect())?;
        self.state_from(x, 0.0, alloc, self.hp.gamma_prior_mean())
    }

    /// Recomputes every cached quantity from scratch.
    pub fn refresh(&self, st: &mut ChainState) {
        let n = st.n();
        for i in 0..n {
            for j in 0..i {
                let d = crate::model::distance(st.cfg.x.row(i), st.cfg.x.row(j));
                st.dist[i * n + j] = d;
                st.dist[j * n + i] = d;
            }
        }
        st.stats = group_stats(&st.cfg.x, &st.alloc);
        st.log_likelihood = self.fill_softplus(st, st.cfg.beta);
    }

    /// Recomputes the softplus cache at `beta` and returns the likelihood.
    fn fill_softplus(&self, st: &mut ChainState, beta: f64) -> f64 {
        if !self.sc.use_likelihood {
            return 0.0;
        }
        let n = st.n();
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..i {
                let eta = beta - st.dist[i * n + j];
                let sp = crate::model::softplus(eta);
                st.softplus[i * n + j] = sp;
                st.softplus[j * n + i] = sp;
                total += self.ties[i * n + j] * eta - self.per_pair * sp;
            }
        }
        total
    }

    /// Likelihood at `beta` from the cached distances, without touching the
    /// cache.
    fn likelihood_at(&self, st: &ChainState, beta: f64) -> f64 {
        if !self.sc.use_likelihood {
            return 0.0;
        }
        let n = st.n();
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..i {
                let eta = beta - st.dist[i * n + j];
                total += self.ties[i * n + j] * eta - self.per_pair * crate::model::softplus(eta);
            }
        }
        total
    }

    /// Maximum relative discrepancy between the cached likelihood and group
    /// statistics and their recomputation from scratch.
    pub fn cache_error(&self, st: &ChainState) -> Result<f64> {
        let ll = if self.sc.use_likelihood {
            crate::model::log_likelihood(self.net, &st.cfg)?
        } else {
            0.0
        };
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
        let mut err = rel(st.log_likelihood, ll);
        let fresh = group_stats(&st.cfg.x, &st.alloc);
        if fresh.len() != st.stats.len() || st.tau.len() != st.g() {
            return Ok(f64::INFINITY);
        }
        for (a, b) in st.stats.iter().zip(&fresh) {
            if a.n != b.n {
                return Ok(f64::INFINITY);
            }
            err = err.max(rel(a.sumsq, b.sumsq));
            for (u, v) in a.sum.iter().zip(&b.sum) {
                err = err.max(rel(*u, *v));
            }
        }
        Ok(err)
    }

    #[inline]
    fn ln_lambda(&self, s: &GroupStats, gamma: f64) -> f64 {
        self.marg.ln_lambda(s, gamma)
    }

    /// `log pi(G) + log pi(c | G)` for the given counts.
    fn ln_label_prior(&self, counts: &[usize]) -> f64 {
        self.g_prior.ln_prob(counts.len())
            + crate::model::log_alloc_prior_counts(counts, self.hp.alpha)
    }

    fn record(&self, st: &ChainState, iter: usize) -> SampleRecord {
        SampleRecord {
            iter,
            g: st.g(),
            beta: st.cfg.beta,
            gamma: st.gamma,
            log_likelihood: st.log_likelihood,
            labels: st.alloc.labels().to_vec(),
            x: st.cfg.x.clone(),
        }
    }

    /// One full sweep. `sweep` selects the block-move variant.
    pub fn sweep<R: Rng + ?Sized>(
        &self,
        st: &mut ChainState,
        sweep: usize,
        rng: &mut R,
        report: &mut AcceptanceReport,
    ) {
        let n = st.n() as u64;
        report.beta.record(self.update_beta(st, rng));
        report
            .positions
            .add(n, self.update_positions(st, rng) as u64);
        report.labels.add(n, self.gibbs_labels(st, rng) as u64);
        if st.g() >= 2 {
            let variant = BlockMove::cycle(sweep);
            let accepted = self.move_block(st, variant, rng);
            match variant {
                BlockMove::M1 => report.m1.record(accepted),
                BlockMove::M2 => report.m2.record(accepted),
                BlockMove::M3 => report.m3.record(accepted),
            }
        }
        if self.sc.dimension_moves && self.hp.g_max > 1 {
            if rng.random::<f64>() < self.sc.eject_prob[st.g()] {
                report.eject.record(self.eject(st, rng));
            } else {
                report.absorb.record(self.absorb(st, rng));
            }
        }
        self.update_tau_gamma(st, rng);
    }

    /// Runs the configured schedule from [`Sampler::initial_state`], handing
    /// each recorded draw to `sink` together with the acceptance counts of
    /// the recorded sweeps so far.
    pub fn run_with<F: FnMut(&SampleRecord, &AcceptanceReport)>(&mut self, mut sink: F) -> Result<(AcceptanceReport, ChainState)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.sc.seed);
        rng.set_stream(self.sc.stream);
        let mut st = self.initial_state(&mut rng)?;
        let report = self.run_from(&mut st, &mut rng, &mut sink);
        Ok((report, st))
    }

    /// Runs the configured schedule from an explicit state.
    pub fn run_from<R: Rng + ?Sized, F: FnMut(&SampleRecord, &AcceptanceReport)>(
        &mut self,
        st: &mut ChainState,
        rng: &mut R,
        sink: &mut F,
    ) -> AcceptanceReport {
        const WINDOW: usize = 500;
        let mut window = AcceptanceReport::default();
        let mut report = AcceptanceReport::default();
        for sweep in 0..self.sc.burnin {
            self.sweep(st, sweep, rng, &mut window);
            if self.sc.adapt && (sweep + 1) % WINDOW == 0 {
                self.sigma_x *= adapt_factor(window.positions.rate());
                self.sigma_beta *= adapt_factor(window.beta.rate());
                log::debug!(
                    "sweep {}: sigma_x {:.4}, sigma_beta {:.4}",
                    sweep + 1,
                    self.sigma_x,
                    self.sigma_beta
                );
                window = AcceptanceReport::default();
            }
        }
        for t in 0..self.sc.iters {
            let sweep = self.sc.burnin + t;
            self.sweep(st, sweep, rng, &mut report);
            if (t + 1) % self.sc.thin == 0 {
                sink(&self.record(st, sweep + 1), &report);
            }
        }
        report.sigma_x = self.sigma_x;
        report.sigma_beta = self.sigma_beta;
        report
    }
}

/// Multiplicative step toward 25-40% acceptance.
fn adapt_factor(rate: f64) -> f64 {
    if rate < 0.25 {
        0.8
    } else if rate > 0.40 {
        1.2
    } else {
        1.0
    }
}

/// Runs one chain and collects its draws.
pub fn run_chain(net: &Network, hp: &HyperParams, sc: &SamplerConfig) -> Result<ChainOutput> {
    let mut sampler = Sampler::new(net, hp.clone(), sc.clone())?;
    let mut samples = Vec::with_capacity(sc.iters / sc.thin);
    let (report, final_state) = sampler.run_with(|r, _| samples.push(r.clone()))?;
    Ok(ChainOutput {
        samples,
        report,
        final_state,
    })
}

/// Draws an index from unnormalized log weights.
pub(crate) fn sample_log_weights<R: Rng + ?Sized>(w: &[f64], rng: &mut R) -> usize {
    let max = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = w.iter().map(|v| (v - max).exp()).sum();
    let mut u = rng.random::<f64>() * total;
    for (k, v) in w.iter().enumerate() {
        u -= (v - max).exp();
        if u < 0.0 {
            return k;
        }
    }
    w.len() - 1
}

/// Draws an ordered pair of distinct components uniformly.
pub(crate) fn ordered_pair<R: Rng + ?Sized>(g: usize, rng: &mut R) -> (usize, usize) {
    let a = rng.random_range(0..g);
    let b = rng.random_range(0..g - 1);
    (a, b + (b >= a) as usize)
}

#[inline]
pub(crate) fn accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio
}
