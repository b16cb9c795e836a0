//! Binary networks and their dyad sets.
//!
//! Actors are indexed from 1 in every file format and from 0 in memory.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use log::warn;

use crate::error::{Error, Result};

/// An immutable binary network on `n` actors.
///
/// The adjacency matrix never carries self ties, and is symmetric when the
/// network is undirected.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Network {
    n: usize,
    directed: bool,
    adj: Vec<bool>,
}

impl Network {
    /// The network on `n` actors with no ties.
    pub fn empty(n: usize, directed: bool) -> Result<Self> {
        if n < 2 {
            return Err(Error::TooFewActors(n));
        }
        Ok(Self {
            n,
            directed,
            adj: vec![false; n * n],
        })
    }

    /// Builds a network from 0-based ties. Undirected ties are mirrored and
    /// repeated ties are kept once.
    pub fn from_ties<I>(n: usize, directed: bool, ties: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut net = Self::empty(n, directed)?;
        for (i, j) in ties {
            if i >= n {
                return Err(Error::InvalidActor { index: i, n });
            }
            if j >= n {
                return Err(Error::InvalidActor { index: j, n });
            }
            if i == j {
                return Err(Error::InvalidAdjacency(format!(
                    "self tie on actor {}",
                    i + 1
                )));
            }
            net.set(i, j);
        }
        Ok(net)
    }

    /// Builds a network from a dense row-major 0/1 matrix.
    pub fn from_adjacency(n: usize, directed: bool, adj: Vec<bool>) -> Result<Self> {
        if n < 2 {
            return Err(Error::TooFewActors(n));
        }
        if adj.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                found: adj.len(),
            });
        }
        for i in 0..n {
            if adj[i * n + i] {
                return Err(Error::InvalidAdjacency(format!(
                    "self tie on actor {}",
                    i + 1
                )));
            }
            if !directed {
                for j in 0..i {
                    if adj[i * n + j] != adj[j * n + i] {
                        return Err(Error::InvalidAdjacency(format!(
                            "undirected network is not symmetric at ({}, {})",
                            i + 1,
                            j + 1
                        )));
                    }
                }
            }
        }
        Ok(Self { n, directed, adj })
    }

    fn set(&mut self, i: usize, j: usize) {
        self.adj[i * self.n + j] = true;
        if !self.directed {
            self.adj[j * self.n + i] = true;
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    /// Whether `y_ij = 1`.
    #[inline]
    pub fn tie(&self, i: usize, j: usize) -> bool {
        self.adj[i * self.n + j]
    }

    /// Number of ties: unordered pairs when undirected, arcs when directed.
    pub fn tie_count(&self) -> usize {
        self.dyads().iter().filter(|&(i, j)| self.tie(i, j)).count()
    }

    /// The 0-based ties in dyad order.
    pub fn ties(&self) -> Vec<(usize, usize)> {
        self.dyads().iter().filter(|&(i, j)| self.tie(i, j)).collect()
    }

    pub fn dyads(&self) -> DyadSet {
        DyadSet::new(self.n, self.directed)
    }

    /// Writes one `i j` line per tie, 1-based, in dyad order.
    pub fn write_edge_list<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (i, j) in self.ties() {
            writeln!(w, "{} {}", i + 1, j + 1)?;
        }
        Ok(())
    }

    /// Undirected pair view used by the likelihood kernels: for each unordered
    /// pair `{i, j}` the number of observed ties among its dyads (0 or 1 when
    /// undirected, 0..=2 when directed).
    pub fn pair_ties(&self, i: usize, j: usize) -> u8 {
        if self.directed {
            self.tie(i, j) as u8 + self.tie(j, i) as u8
        } else {
            self.tie(i, j) as u8
        }
    }

    /// Dyads per unordered pair: 2 when directed, 1 otherwise.
    pub fn dyads_per_pair(&self) -> u8 {
        if self.directed {
            2
        } else {
            1
        }
    }
}

/// The dyad set of a network: all ordered pairs `i != j` when directed, and
/// the pairs with `j < i` when undirected.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DyadSet {
    n: usize,
    directed: bool,
}

impl DyadSet {
    pub fn new(n: usize, directed: bool) -> Self {
        Self { n, directed }
    }

    pub fn len(&self) -> usize {
        if self.directed {
            self.n * (self.n - 1)
        } else {
            self.n * (self.n - 1) / 2
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// 0-based pairs, row by row.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.n;
        let directed = self.directed;
        (0..n).flat_map(move |i| {
            let upper = if directed { n } else { i };
            (0..upper).filter(move |&j| j != i).map(move |j| (i, j))
        })
    }
}

/// Reads an edge list: one `i j` pair per line, whitespace or comma
/// separated, 1-based. Blank lines and `#` comments are skipped.
pub fn load_edge_list(path: impl AsRef<Path>, n: usize, directed: bool) -> Result<Network> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_edge_list(&text, n, directed)
}

pub fn parse_edge_list(text: &str, n: usize, directed: bool) -> Result<Network> {
    let mut net = Network::empty(n, directed)?;
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let fields: Vec<&str> = body
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .collect();
        match fields.len() {
            2 => {}
            0 | 1 => {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected two actor indices, got {body:?}"),
                })
            }
            _ => return Err(Error::WeightedEdge { line }),
        }
        let mut ends = [0usize; 2];
        for (slot, field) in ends.iter_mut().zip(&fields) {
            let index: usize = field.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("{field:?} is not a positive integer"),
            })?;
            if index == 0 || index > n {
                return Err(Error::ActorOutOfRange { line, index, n });
            }
            *slot = index - 1;
        }
        let [i, j] = ends;
        if i == j {
            return Err(Error::SelfLoop { line, actor: i + 1 });
        }
        if net.tie(i, j) {
            warn!("line {line}: duplicate tie {} {} ignored", i + 1, j + 1);
        }
        net.set(i, j);
    }
    Ok(net)
}

/// Largest actor index mentioned in an edge list, for callers that do not
/// know `n` up front.
pub fn max_actor_index(text: &str) -> usize {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(|l| l.split(|c: char| c.is_whitespace() || c == ','))
        .filter_map(|f| f.parse::<usize>().ok())
        .max()
        .unwrap_or(0)
}

/// Reads a dense adjacency CSV: `n` rows of `n` comma-separated 0/1 values.
pub fn load_adjacency_csv(path: impl AsRef<Path>, directed: bool) -> Result<Network> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_adjacency_csv(&text, directed)
}

pub fn parse_adjacency_csv(text: &str, directed: bool) -> Result<Network> {
    let mut rows = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let body = raw.trim();
        if body.is_empty() || body.starts_with('#') {
            continue;
        }
        let row = body
            .split(',')
            .map(|f| match f.trim() {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(Error::Parse {
                    line: k + 1,
                    msg: format!("adjacency entries must be 0 or 1, got {other:?}"),
                }),
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push((k + 1, row));
    }
    let n = rows.len();
    let mut adj = Vec::with_capacity(n * n);
    for (line, row) in rows {
        if row.len() != n {
            return Err(Error::Parse {
                line,
                msg: format!("expected {n} columns, got {}", row.len()),
            });
        }
        adj.extend(row);
    }
    Network::from_adjacency(n, directed, adj)
}

/// Dense adjacency as CSV text, the inverse of [`parse_adjacency_csv`].
pub fn adjacency_csv(net: &Network) -> String {
    let mut out = String::new();
    for i in 0..net.n() {
        for j in 0..net.n() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}", net.tie(i, j) as u8);
        }
        out.push('\n');
    }
    out
}
