use std::collections::VecDeque;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::model::Positions;
use crate::netdata::Network;

/// Shortest-path lengths ignoring tie direction. Unreachable pairs get one
/// more than the largest finite distance.
pub fn geodesic_distances(net: &Network) -> Vec<Vec<f64>> {
    let n = net.n();
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| net.pair_ties(i, j) > 0).collect())
        .collect();
    let mut out = vec![vec![f64::INFINITY; n]; n];
    for (s, row) in out.iter_mut().enumerate() {
        row[s] = 0.0;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if row[v].is_infinite() {
                    row[v] = row[u] + 1.0;
                    queue.push_back(v);
                }
            }
        }
    }
    let cap = out
        .iter()
        .flatten()
        .filter(|v| v.is_finite())
        .fold(0.0f64, |a, &b| a.max(b))
        + 1.0;
    for v in out.iter_mut().flatten() {
        if v.is_infinite() {
            *v = cap;
        }
    }
    out
}

/// Classical multidimensional scaling of the geodesic distances, used as
/// a starting configuration.
pub fn mds_positions(net: &Network, d: usize) -> Positions {
    let n = net.n();
    let geo = geodesic_distances(net);
    let sq = DMatrix::from_fn(n, n, |i, j| geo[i][j] * geo[i][j]);
    let row_means: Vec<f64> = (0..n).map(|i| sq.row(i).sum() / n as f64).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    let b = DMatrix::from_fn(n, n, |i, j| -0.5 * (sq[(i, j)] - row_means[i] - row_means[j] + grand));
    let eig = SymmetricEigen::new(b);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut data = vec![0.0; n * d];
    for (k, &col) in order.iter().take(d).enumerate() {
        let scale = eig.eigenvalues[col].max(0.0).sqrt();
        // Fix the eigenvector sign so the result does not depend on the solver.
        let v = eig.eigenvectors.column(col);
        let pivot = v.iter().cloned().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            data[i * d + k] = sign * scale * v[i];
        }
    }
    Positions::from_vec(n, d, data).expect("shape is n x d")
}
