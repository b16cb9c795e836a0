use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use lpcm::bic::{bic_report, EmConfig, SampleSize};
use lpcm::model::derive_gamma_hyperprior;
use lpcm::postprocess::{self, g_distribution, most_probable, PosteriorSummary};
use lpcm::sampler::{AcceptanceReport, SampleRecord, Sampler, SamplerConfig};
use lpcm::simstudy::{build_lookup, simulate_network, Scenario};
use lpcm::HyperParams;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::files::{load_network, read_samples, samples_header, samples_row, write_json, Output};
use crate::{BicArgs, CalibrateArgs, FitArgs, ModelArgs, NLr, NetworkArgs, SimulateArgs, SummarizeArgs};

const VERSION: &str = env!("CARGO_PKG_VERSION");
/// Simulated networks use streams from here on, clear of the lookup cells.
const NETWORK_STREAM_BASE: u64 = 1 << 32;

fn name<T: ValueEnum>(v: &T) -> String {
    v.to_possible_value().map(|p| p.get_name().to_string()).unwrap_or_default()
}

fn network_flags(a: &NetworkArgs) -> String {
    let mut s = format!("--input {} --format {}", a.input, name(&a.format));
    if a.directed {
        s.push_str(" --directed");
    }
    if let Some(n) = a.actors {
        s.push_str(&format!(" --actors {n}"));
    }
    s
}

fn hyper_params(m: &ModelArgs) -> Result<(HyperParams, f64)> {
    let sd = m.gamma_sd.unwrap_or(m.gamma_mean / 4.0);
    if !(m.gamma_mean > 0.0 && sd > 0.0) {
        bail!("--gamma-mean and --gamma-sd must be positive");
    }
    let (gamma_s, gamma_r) = derive_gamma_hyperprior(m.gamma_mean, sd);
    let hp = HyperParams {
        alpha: m.alpha,
        delta: m.delta,
        kappa: m.kappa,
        gamma_s,
        gamma_r,
        g_max: m.gmax,
        ..HyperParams::default()
    };
    hp.validate()?;
    Ok((hp, sd))
}

#[derive(Serialize)]
struct Schedule {
    iters: usize,
    burnin: usize,
    thin: usize,
    seed: u64,
    repeats: usize,
    adapt: bool,
    sigma_x: f64,
    sigma_beta: f64,
}

#[derive(Serialize)]
struct RunSummary {
    chain: usize,
    p_g: Vec<f64>,
    modal_g: usize,
    eject_absorb_rate: f64,
    acceptance: AcceptanceReport,
}

#[derive(Serialize)]
struct FitSummary<'a> {
    provenance: &'a str,
    hyperparameters: &'a HyperParams,
    schedule: Schedule,
    runs: Vec<RunSummary>,
    pooled: PosteriorSummary,
}

struct Chain {
    samples: Vec<SampleRecord>,
    counters: Vec<AcceptanceReport>,
    report: AcceptanceReport,
}

const MOVES: [&str; 8] = ["beta", "x", "labels", "m1", "m2", "m3", "eject", "absorb"];

fn counter_fields(r: &AcceptanceReport) -> [lpcm::sampler::Counter; 8] {
    [r.beta, r.positions, r.labels, r.m1, r.m2, r.m3, r.eject, r.absorb]
}

pub fn fit(a: &FitArgs) -> Result<()> {
    let net = load_network(&a.network)?;
    let (hp, gamma_sd) = hyper_params(&a.model)?;
    if a.repeats == 0 {
        bail!("--repeats must be at least 1");
    }
    let mut sc = SamplerConfig::new(net.n(), hp.g_max);
    sc.iters = a.iters;
    sc.burnin = a.burnin;
    sc.thin = a.thin;
    sc.seed = a.seed;
    sc.adapt = !a.no_adapt;
    if let Some(s) = a.sigma_x {
        sc.sigma_x = s;
    }
    if let Some(s) = a.sigma_beta {
        sc.sigma_beta = s;
    }
    sc.validate(net.n(), hp.g_max)?;
    if sc.iters < sc.thin {
        bail!("--iters must be at least --thin so that some draws are kept");
    }
    let provenance = format!(
        "collapsed-lpcm {VERSION} fit {} --iters {} --burnin {} --thin {} --seed {} --gmax {} \
         --alpha {} --delta {} --kappa {} --gamma-mean {} --gamma-sd {} --sigma-x {} \
         --sigma-beta {}{} --repeats {}",
        network_flags(&a.network),
        sc.iters,
        sc.burnin,
        sc.thin,
        sc.seed,
        hp.g_max,
        hp.alpha,
        hp.delta,
        hp.kappa,
        a.model.gamma_mean,
        gamma_sd,
        sc.sigma_x,
        sc.sigma_beta,
        if sc.adapt { "" } else { " --no-adapt" },
        a.repeats
    );

    let chains: Vec<Chain> = (0..a.repeats)
        .into_par_iter()
        .map(|k| -> Result<Chain> {
            let mut cfg = sc.clone();
            cfg.stream = k as u64;
            let mut sampler = Sampler::new(&net, hp.clone(), cfg)?;
            let (mut samples, mut counters) = (Vec::new(), Vec::new());
            let (report, _) = sampler.run_with(|s, r| {
                samples.push(s.clone());
                counters.push(r.clone());
            })?;
            log::info!("chain {} done", k + 1);
            Ok(Chain {
                samples,
                counters,
                report,
            })
        })
        .collect::<Result<_>>()?;

    std::fs::create_dir_all(&a.out).with_context(|| format!("cannot create {}", a.out.display()))?;
    let (n, d) = (net.n(), hp.d);

    let mut w = Output::create(&a.out.join("trace.csv"), &provenance)?.csv();
    let mut header: Vec<String> = ["chain", "iter", "G", "beta", "gamma", "loglik"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for m in MOVES {
        header.push(format!("{m}_accepted"));
        header.push(format!("{m}_attempted"));
    }
    w.write_record(&header)?;
    for (k, c) in chains.iter().enumerate() {
        for (s, r) in c.samples.iter().zip(&c.counters) {
            let mut row = samples_row(k + 1, s);
            row.truncate(6);
            for c in counter_fields(r) {
                row.push(c.accepts.to_string());
                row.push(c.attempts.to_string());
            }
            w.write_record(&row)?;
        }
    }
    w.flush()?;

    let mut w = Output::create(&a.out.join("samples.csv"), &provenance)?.csv();
    w.write_record(samples_header(n, d))?;
    for (k, c) in chains.iter().enumerate() {
        for s in &c.samples {
            w.write_record(samples_row(k + 1, s))?;
        }
    }
    w.flush()?;

    let mut runs = Vec::with_capacity(chains.len());
    for (k, c) in chains.iter().enumerate() {
        let p_g = g_distribution(&c.samples, hp.g_max)?;
        runs.push(RunSummary {
            chain: k + 1,
            modal_g: most_probable(&p_g),
            p_g,
            eject_absorb_rate: c.report.dimension_rate(),
            acceptance: c.report.clone(),
        });
    }
    write_pg(&a.out.join("pg.csv"), &provenance, &runs)?;

    let all: Vec<SampleRecord> = chains.iter().flat_map(|c| c.samples.iter().cloned()).collect();
    let mut pooled = postprocess::summarize(&all, &hp)?;
    let mut total = AcceptanceReport::default();
    for c in &chains {
        total.merge(&c.report);
    }
    pooled.acceptance = Some(total);
    print_summary(&pooled);
    let summary = FitSummary {
        provenance: &provenance,
        hyperparameters: &hp,
        schedule: Schedule {
            iters: sc.iters,
            burnin: sc.burnin,
            thin: sc.thin,
            seed: sc.seed,
            repeats: a.repeats,
            adapt: sc.adapt,
            sigma_x: sc.sigma_x,
            sigma_beta: sc.sigma_beta,
        },
        runs,
        pooled,
    };
    write_json(&a.out.join("summary.json"), &summary)
}

fn write_pg(path: &Path, provenance: &str, runs: &[RunSummary]) -> Result<()> {
    let mut w = Output::create(path, provenance)?.csv();
    let g_max = runs.first().map_or(0, |r| r.p_g.len());
    let mut header = vec!["chain".to_string()];
    header.extend((1..=g_max).map(|g| format!("G{g}")));
    w.write_record(&header)?;
    for r in runs {
        let mut row = vec![r.chain.to_string()];
        row.extend(r.p_g.iter().map(|p| p.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn print_summary(s: &PosteriorSummary) {
    println!("draws: {}", s.n_samples);
    for (k, p) in s.p_g.iter().enumerate() {
        if *p > 0.0 {
            println!("p(G = {}) = {:.4}", k + 1, p);
        }
    }
    println!("most probable G: {}", s.modal_g);
    if let Some(a) = &s.acceptance {
        println!("eject/absorb acceptance: {:.4}", a.dimension_rate());
    }
}

pub fn summarize(a: &SummarizeArgs) -> Result<()> {
    let file = read_samples(&a.input)?;
    let g_max = match a.gmax {
        Some(g) => g,
        None => file
            .recorded("--gmax")
            .map(|v| v.parse::<usize>())
            .transpose()
            .context("bad --gmax in the samples header")?
            .unwrap_or(10),
    };
    let hp = HyperParams {
        g_max,
        ..HyperParams::default()
    };
    let samples: Vec<SampleRecord> = file.draws.into_iter().map(|(_, s)| s).collect();
    if let Some(s) = samples.iter().find(|s| s.g > g_max) {
        bail!("a draw has G = {} but --gmax is {g_max}", s.g);
    }
    let summary = postprocess::summarize(&samples, &hp)?;
    print_summary(&summary);
    std::fs::create_dir_all(&a.out)?;
    #[derive(Serialize)]
    struct Out<'a> {
        provenance: String,
        source_provenance: Option<String>,
        summary: &'a PosteriorSummary,
    }
    write_json(
        &a.out.join("summary.json"),
        &Out {
            provenance: format!(
                "collapsed-lpcm {VERSION} summarize --input {} --gmax {g_max}",
                a.input.display()
            ),
            source_provenance: file.provenance,
            summary: &summary,
        },
    )
}

pub fn calibrate(a: &CalibrateArgs) -> Result<()> {
    if a.n_mc == 0 {
        bail!("--N must be positive");
    }
    let table = build_lookup(a.n_mc, a.seed);
    std::fs::create_dir_all(&a.out)?;
    let provenance = format!("collapsed-lpcm {VERSION} calibrate --N {} --seed {}", a.n_mc, a.seed);
    Output::create(&a.out.join("lookup.csv"), &provenance)?.write_str(&table.to_csv())?;
    let (lo, hi) = table.r_range();
    println!("{} cells, r from {lo:.3} to {hi:.3}", table.cells.len());
    Ok(())
}

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    if a.n_mc == 0 || a.networks == 0 {
        bail!("--N and --networks must be positive");
    }
    let table = build_lookup(a.n_mc, a.seed);
    let mut sc = Scenario::from_table(&table, a.r)?;
    sc = Scenario::new(sc.r_target, sc.mu, sc.tau, a.actors)?;
    let pick = lpcm::simstudy::pick_params(&table, a.r)?;
    let provenance = format!(
        "collapsed-lpcm {VERSION} simulate --r {} --networks {} --N {} --actors {} --beta {} --seed {} \
         (mu {}, tau {}, table r {})",
        a.r, a.networks, a.n_mc, a.actors, a.beta, a.seed, sc.mu, sc.tau, pick.r_hat
    );
    std::fs::create_dir_all(&a.out)?;
    let width = a.networks.to_string().len().max(3);
    for k in 0..a.networks {
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
        rng.set_stream(NETWORK_STREAM_BASE + k as u64);
        let sim = simulate_network(&sc, a.beta, &mut rng)?;
        let mut edges = Vec::new();
        sim.net.write_edge_list(&mut edges)?;
        let tag = format!("{:0width$}", k + 1);
        Output::create(&a.out.join(format!("network-{tag}.edges")), &provenance)?
            .write_str(std::str::from_utf8(&edges)?)?;
        Output::create(&a.out.join(format!("truth-{tag}.csv")), &provenance)?.write_str(&sim.truth_csv())?;
    }
    #[derive(Serialize)]
    struct Out<'a> {
        provenance: &'a str,
        scenario: &'a Scenario,
        table_r: f64,
        out_of_range: bool,
    }
    write_json(
        &a.out.join("scenario.json"),
        &Out {
            provenance: &provenance,
            scenario: &sc,
            table_r: pick.r_hat,
            out_of_range: pick.out_of_range,
        },
    )?;
    println!("mu = {}, tau = {}, table r = {:.3}", sc.mu, sc.tau, pick.r_hat);
    Ok(())
}

pub fn bic(a: &BicArgs) -> Result<()> {
    let net = load_network(&a.network)?;
    let file = read_samples(&a.samples)?;
    let samples: Vec<SampleRecord> = file.draws.into_iter().map(|(_, s)| s).collect();
    if samples[0].x.n() != net.n() {
        bail!(
            "samples have {} actors but the network has {}",
            samples[0].x.n(),
            net.n()
        );
    }
    let n_lr = match a.n_lr {
        NLr::Links => SampleSize::Links,
        NLr::Dyads => SampleSize::Dyads,
        NLr::Actors => SampleSize::Actors,
    };
    let em = EmConfig {
        restarts: a.restarts,
        seed: a.seed,
        ..EmConfig::default()
    };
    let report = bic_report(&net, &samples, a.gmax, n_lr, &em)?;
    let provenance = format!(
        "collapsed-lpcm {VERSION} bic {} --samples {} --gmax {} --n-lr {} --restarts {} --seed {}",
        network_flags(&a.network),
        a.samples.display(),
        a.gmax,
        name(&a.n_lr),
        a.restarts,
        a.seed
    );
    std::fs::create_dir_all(&a.out)?;
    Output::create(&a.out.join("bic.csv"), &provenance)?.write_str(&report.to_csv())?;
    let text = report.to_string();
    Output::create(&a.out.join("bic.txt"), &provenance)?.write_str(&text)?;
    print!("{text}");
    Ok(())
}
