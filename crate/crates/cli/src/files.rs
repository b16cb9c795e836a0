//! Reading networks and samples, writing CSV and JSON with a provenance
//! line.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use lpcm::netdata::{load_adjacency_csv, max_actor_index, parse_edge_list};
use lpcm::sampler::SampleRecord;
use lpcm::{Network, Positions};

use crate::{Format, NetworkArgs};

pub const BUILTIN_PREFIX: &str = "builtin:";

pub fn load_network(a: &NetworkArgs) -> Result<Network> {
    if let Some(name) = a.input.strip_prefix(BUILTIN_PREFIX) {
        return lpcm::datasets::by_name(name)
            .with_context(|| format!("no bundled network called {name:?}; try monks or karate"));
    }
    let path = Path::new(&a.input);
    let net = match a.format {
        Format::Adjacency => load_adjacency_csv(path, a.directed)?,
        Format::Edgelist => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read {}", path.display()))?;
            let n = a.actors.unwrap_or_else(|| max_actor_index(&text));
            parse_edge_list(&text, n, a.directed)
                .with_context(|| format!("in {}", path.display()))?
        }
    };
    Ok(net)
}

/// A file that starts with a `# ...` provenance line.
pub struct Output {
    w: BufWriter<File>,
}

impl Output {
    pub fn create(path: &Path, provenance: &str) -> Result<Self> {
        let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
        let mut w = BufWriter::new(f);
        writeln!(w, "# {provenance}")?;
        Ok(Self { w })
    }

    pub fn csv(self) -> csv::Writer<BufWriter<File>> {
        csv::Writer::from_writer(self.w)
    }

    pub fn write_str(mut self, s: &str) -> Result<()> {
        self.w.write_all(s.as_bytes())?;
        self.w.flush()?;
        Ok(())
    }
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Samples read back from a `samples.csv`.
pub struct SamplesFile {
    pub provenance: Option<String>,
    /// `(chain, draw)` in file order.
    pub draws: Vec<(usize, SampleRecord)>,
}

impl SamplesFile {
    /// The value following `flag` in the provenance line.
    pub fn recorded(&self, flag: &str) -> Option<&str> {
        let mut it = self.provenance.as_deref()?.split_whitespace();
        it.find(|t| *t == flag)?;
        it.next()
    }
}

pub fn samples_header(n: usize, d: usize) -> Vec<String> {
    let mut h: Vec<String> = ["chain", "iter", "G", "beta", "gamma", "loglik"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend((1..=n).map(|i| format!("c{i}")));
    for i in 1..=n {
        h.extend((1..=d).map(|k| format!("x{i}_{k}")));
    }
    h
}

pub fn samples_row(chain: usize, s: &SampleRecord) -> Vec<String> {
    let mut row = vec![
        chain.to_string(),
        s.iter.to_string(),
        s.g.to_string(),
        s.beta.to_string(),
        s.gamma.to_string(),
        s.log_likelihood.to_string(),
    ];
    row.extend(s.labels.iter().map(|l| (l + 1).to_string()));
    row.extend(s.x.as_slice().iter().map(|v| v.to_string()));
    row
}

pub fn read_samples(path: &Path) -> Result<SamplesFile> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let provenance = text
        .lines()
        .next()
        .and_then(|l| l.strip_prefix("# "))
        .map(str::to_string);
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header = rdr.headers().context("samples file has no header")?.clone();
    let n = header.iter().filter(|h| h.starts_with('c') && h[1..].parse::<usize>().is_ok()).count();
    let nx = header.iter().filter(|h| h.starts_with('x')).count();
    if header.len() < 6 || &header[0] != "chain" || n == 0 || nx % n != 0 {
        bail!("{} is not a samples file", path.display());
    }
    let d = nx / n;
    let mut draws = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse::<f64>()
                .with_context(|| format!("{}: row {line}, column {}", path.display(), i + 1))
        };
        let int = |i: usize| -> Result<usize> {
            rec[i]
                .parse::<usize>()
                .with_context(|| format!("{}: row {line}, column {}", path.display(), i + 1))
        };
        if rec.len() != header.len() {
            bail!("{}: row {line} has {} fields, expected {}", path.display(), rec.len(), header.len());
        }
        let labels = (0..n)
            .map(|i| int(6 + i).map(|l| l.saturating_sub(1)))
            .collect::<Result<Vec<_>>>()?;
        let x = (0..n * d).map(|i| num(6 + n + i)).collect::<Result<Vec<_>>>()?;
        draws.push((
            int(0)?,
            SampleRecord {
                iter: int(1)?,
                g: int(2)?,
                beta: num(3)?,
                gamma: num(4)?,
                log_likelihood: num(5)?,
                labels,
                x: Positions::from_vec(n, d, x)?,
            },
        ));
    }
    if draws.is_empty() {
        bail!("{} contains no samples", path.display());
    }
    Ok(SamplesFile { provenance, draws })
}
