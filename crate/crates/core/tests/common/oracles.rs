//! Exhaustive reference implementations.

use std::collections::BTreeSet;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use simfuse::structure::{Edge, GraphSource, StructureGraph};

pub fn floyd_warshall(n: usize, edges: &[Edge]) -> Array2<f64> {
    let mut d = Array2::from_elem((n, n), f64::INFINITY);
    for i in 0..n {
        d[[i, i]] = 0.0;
    }
    for e in edges {
        let w = d[[e.i, e.j]].min(e.weight);
        d[[e.i, e.j]] = w;
        d[[e.j, e.i]] = w;
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = d[[i, k]] + d[[k, j]];
                if via < d[[i, j]] {
                    d[[i, j]] = via;
                }
            }
        }
    }
    d
}

pub fn random_connected_graph(n: usize, extra: usize, seed: u64) -> StructureGraph {
    let mut r = super::rng(seed);
    let mut edges = Vec::new();
    // Random spanning tree first, then extra chords.
    for v in 1..n {
        let u = r.random_range(0..v);
        edges.push(Edge {
            i: u,
            j: v,
            weight: r.random_range(0.1..10.0),
        });
    }
    for _ in 0..extra {
        let i = r.random_range(0..n);
        let j = r.random_range(0..n);
        if i != j {
            edges.push(Edge {
                i,
                j,
                weight: r.random_range(0.1..10.0),
            });
        }
    }
    StructureGraph::new(n, edges, GraphSource::Predefined).unwrap()
}

/// Full rank table: `rank[i][j]` is the 1-based position of j among i's
/// neighbours, ties by index.
pub fn rank_table(a: ArrayView2<'_, f64>) -> Vec<Vec<usize>> {
    let n = a.nrows();
    (0..n)
        .map(|i| {
            let dist = |j: usize| -> f64 { a.row(i).iter().zip(a.row(j)).map(|(p, q)| (p - q) * (p - q)).sum() };
            let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            order.sort_by(|&p, &q| dist(p).partial_cmp(&dist(q)).unwrap().then(p.cmp(&q)));
            let mut rank = vec![0; n];
            for (r, j) in order.into_iter().enumerate() {
                rank[j] = r + 1;
            }
            rank
        })
        .collect()
}

pub fn oracle_trust(x: ArrayView2<'_, f64>, z: ArrayView2<'_, f64>, k: usize) -> f64 {
    let n = x.nrows();
    let rx = rank_table(x);
    let rz = rank_table(z);
    let mut total = 0usize;
    for i in 0..n {
        let in_x: BTreeSet<usize> = (0..n).filter(|&j| j != i && rx[i][j] <= k).collect();
        let in_z: BTreeSet<usize> = (0..n).filter(|&j| j != i && rz[i][j] <= k).collect();
        for &j in in_z.difference(&in_x) {
            total += rx[i][j] - k;
        }
    }
    let (n, k) = (n as f64, k as f64);
    1.0 - 2.0 / (n * k * (2.0 * n - 3.0 * k - 1.0)) * total as f64
}
