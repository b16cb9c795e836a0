use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod files;

/// Bayesian clustering of network actors with an unknown number of groups.
#[derive(Parser, Debug)]
#[command(name = "collapsed-lpcm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the sampler on a network and write trace, samples and summary.
    Fit(FitArgs),
    /// Generate two-cluster benchmark networks at a separation ratio.
    Simulate(SimulateArgs),
    /// Write the (mu, tau) -> r lookup table.
    Calibrate(CalibrateArgs),
    /// Two-stage BIC table from a network and a samples file.
    Bic(BicArgs),
    /// Recompute the summary from a samples file.
    Summarize(SummarizeArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    /// Two 1-based actor indices per line.
    Edgelist,
    /// Square 0/1 matrix, comma separated.
    Adjacency,
}

#[derive(Args, Clone, Debug)]
pub struct NetworkArgs {
    /// Network file, or `builtin:monks` / `builtin:karate`.
    #[arg(long)]
    pub input: String,
    #[arg(long)]
    pub directed: bool,
    #[arg(long, value_enum, default_value_t = Format::Edgelist)]
    pub format: Format,
    /// Number of actors in an edge list; defaults to the largest index.
    #[arg(long)]
    pub actors: Option<usize>,
}

#[derive(Args, Clone, Debug)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 10)]
    pub gmax: usize,
    #[arg(long, default_value_t = 3.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 2.0)]
    pub delta: f64,
    #[arg(long, default_value_t = 0.1)]
    pub kappa: f64,
    /// Prior mean of the precision-prior rate.
    #[arg(long, default_value_t = 0.103)]
    pub gamma_mean: f64,
    /// Prior standard deviation of the precision-prior rate; defaults to a
    /// quarter of the mean.
    #[arg(long)]
    pub gamma_sd: Option<f64>,
}

#[derive(Args, Clone, Debug)]
pub struct FitArgs {
    #[command(flatten)]
    pub network: NetworkArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 50_000)]
    pub iters: usize,
    #[arg(long, default_value_t = 10_000)]
    pub burnin: usize,
    #[arg(long, default_value_t = 10)]
    pub thin: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Position proposal standard deviation; defaults by network size.
    #[arg(long)]
    pub sigma_x: Option<f64>,
    /// Intercept proposal standard deviation; defaults by network size.
    #[arg(long)]
    pub sigma_beta: Option<f64>,
    /// Keep the proposal scales fixed during burn-in.
    #[arg(long)]
    pub no_adapt: bool,
    /// Independent chains, run concurrently.
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Clone, Debug)]
pub struct SimulateArgs {
    /// Target separation ratio.
    #[arg(long)]
    pub r: f64,
    #[arg(long, default_value_t = 1)]
    pub networks: usize,
    /// Monte Carlo size per lookup cell.
    #[arg(long = "N", default_value_t = 10_000)]
    pub n_mc: usize,
    #[arg(long, default_value_t = 50)]
    pub actors: usize,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub beta: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Clone, Debug)]
pub struct CalibrateArgs {
    #[arg(long = "N", default_value_t = 10_000)]
    pub n_mc: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum NLr {
    Links,
    Dyads,
    Actors,
}

#[derive(Args, Clone, Debug)]
pub struct BicArgs {
    #[command(flatten)]
    pub network: NetworkArgs,
    /// `samples.csv` written by `fit`.
    #[arg(long)]
    pub samples: PathBuf,
    /// Largest number of mixture components in the table.
    #[arg(long, default_value_t = 5)]
    pub gmax: usize,
    /// Sample size of the network term.
    #[arg(long, value_enum, default_value_t = NLr::Links)]
    pub n_lr: NLr,
    #[arg(long, default_value_t = 20)]
    pub restarts: usize,
    /// Seed for the EM starting points.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Clone, Debug)]
pub struct SummarizeArgs {
    /// `samples.csv` written by `fit`.
    #[arg(long)]
    pub input: PathBuf,
    /// Defaults to the value recorded in the file header, else 10.
    #[arg(long)]
    pub gmax: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("COLLAPSED_LPCM_THREADS") {
        let n: usize = v
            .parse()
            .with_context(|| format!("COLLAPSED_LPCM_THREADS={v:?} is not a number"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("cannot configure the worker pool")?;
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    init_threads()?;
    run(cli)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit(a) => commands::fit(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Calibrate(a) => commands::calibrate(&a),
        Command::Bic(a) => commands::bic(&a),
        Command::Summarize(a) => commands::summarize(&a),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cli(args: &[&str]) -> Result<()> {
        run(Cli::try_parse_from(std::iter::once("collapsed-lpcm").chain(args.iter().copied()))?)
    }

    fn data_lines(path: &std::path::Path) -> Vec<String> {
        std::fs::read_to_string(path)
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with('#'))
            .map(str::to_string)
            .collect()
    }

    #[test]
    fn fit_then_summarize_and_bic() {
        let dir = tempfile::tempdir().unwrap();
        let p = |s: &str| dir.path().join(s).to_str().unwrap().to_string();
        cli(&[
            "fit", "--input", "builtin:monks", "--iters", "1000", "--burnin", "200", "--seed", "2",
            "--repeats", "2", "--gmax", "6", "--out", &p("fit"),
        ])
        .unwrap();
        for f in ["trace.csv", "samples.csv", "pg.csv", "summary.json"] {
            assert!(dir.path().join("fit").join(f).exists(), "{f}");
        }
        // Two chains of 100 draws each, plus the header.
        assert_eq!(data_lines(&dir.path().join("fit/samples.csv")).len(), 201);
        assert_eq!(data_lines(&dir.path().join("fit/pg.csv"))[0], "chain,G1,G2,G3,G4,G5,G6");

        cli(&["summarize", "--input", &p("fit/samples.csv"), "--out", &p("sum")]).unwrap();
        let v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("sum/summary.json")).unwrap()).unwrap();
        assert_eq!(v["summary"]["p_g"].as_array().unwrap().len(), 6);
        assert!(v["source_provenance"].as_str().unwrap().contains("--seed 2"));

        cli(&["bic", "--input", "builtin:monks", "--samples", &p("fit/samples.csv"), "--gmax", "3", "--out", &p("bic")])
            .unwrap();
        assert_eq!(data_lines(&dir.path().join("bic/bic.csv")).len(), 4);
        assert!(cli(&["bic", "--input", "builtin:karate", "--samples", &p("fit/samples.csv"), "--out", &p("b2")])
            .is_err());
    }

    #[test]
    fn summarize_rejects_empty_and_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        let empty = dir.path().join("empty.csv");
        std::fs::write(&empty, "").unwrap();
        let other = dir.path().join("other.csv");
        std::fs::write(&other, "a,b\n1,2\n").unwrap();
        let out = dir.path().join("out");
        for f in [&empty, &other] {
            assert!(cli(&["summarize", "--input", f.to_str().unwrap(), "--out", out.to_str().unwrap()]).is_err());
        }
    }

    #[test]
    fn calibrate_writes_full_grid() {
        let dir = tempfile::tempdir().unwrap();
        cli(&["calibrate", "--N", "200", "--out", dir.path().to_str().unwrap()]).unwrap();
        let lines = data_lines(&dir.path().join("lookup.csv"));
        assert_eq!(lines[0], "mu,tau,r_hat,N,seed");
        assert_eq!(lines.len(), 401);
    }

    #[test]
    fn simulate_writes_networks_and_truth() {
        let dir = tempfile::tempdir().unwrap();
        cli(&[
            "simulate", "--r", "5", "--networks", "2", "--N", "200", "--actors", "20", "--out",
            dir.path().to_str().unwrap(),
        ])
        .unwrap();
        for f in ["network-001.edges", "network-002.edges", "truth-001.csv", "truth-002.csv", "scenario.json"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let truth = data_lines(&dir.path().join("truth-001.csv"));
        assert_eq!(truth[0], "actor,true_label,x1,x2");
        assert_eq!(truth.len(), 21);
    }

    #[test]
    fn bad_arguments_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        assert!(cli(&["fit", "--input", "builtin:nothing", "--out", out]).is_err());
        assert!(cli(&["fit", "--input", "builtin:monks", "--repeats", "0", "--out", out]).is_err());
        assert!(cli(&["fit", "--input", "builtin:monks", "--alpha", "-1", "--out", out]).is_err());
        assert!(cli(&["simulate", "--r", "5", "--N", "0", "--out", out]).is_err());
        assert!(cli(&["fit", "--out", out]).is_err());
    }
}
