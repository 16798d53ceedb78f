//! Neighbourhood graphs and geodesic distance matrices.
//!
//! A [`StructureGraph`] is either derived from feature rows (a symmetrised
//! kNN graph) or supplied as an edge list. [`all_pairs_geodesic`] completes
//! it into a dense [`DistanceMatrix`] of shortest-path lengths, filling pairs
//! in different components with a value larger than every finite distance.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Dense `n × D` sample matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: Array2<f64>,
    row_ids: Option<Vec<String>>,
}

impl DataMatrix {
    /// Wraps a matrix after checking `n ≥ 2`, `D ≥ 1` and that every entry is finite.
    pub fn new(values: Array2<f64>) -> Result<Self> {
        let (n, dim) = values.dim();
        if n < 2 {
            return Err(Error::invalid(format!("data matrix needs at least 2 rows, got {n}")));
        }
        if dim < 1 {
            return Err(Error::invalid("data matrix needs at least 1 column"));
        }
        if let Some(((i, j), v)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite entry {v} at row {i}, column {j}")));
        }
        Ok(Self { values, row_ids: None })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != dim) {
            return Err(Error::invalid(format!(
                "row {i} has {} columns, expected {dim}",
                rows[i].len()
            )));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let values = Array2::from_shape_vec((rows.len(), dim), flat).map_err(|e| Error::invalid(e.to_string()))?;
        Self::new(values)
    }

    pub fn with_row_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.n_rows() {
            return Err(Error::invalid(format!(
                "{} row ids for {} rows",
                ids.len(),
                self.n_rows()
            )));
        }
        self.row_ids = Some(ids);
        Ok(self)
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.values.row(i)
    }

    pub fn row_ids(&self) -> Option<&[String]> {
        self.row_ids.as_deref()
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    /// Rows in the given order (indices may repeat).
    pub fn select_rows(&self, idx: &[usize]) -> Result<Self> {
        let values = self.values.select(ndarray::Axis(0), idx);
        Self::new(values)
    }
}

/// Distance used when comparing feature rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Euclidean,
    /// `1 − cos(a, b)`; zero rows are treated as the first basis direction.
    Cosine,
}

/// Linear per-graph weight schedule over the training run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaSchedule {
    pub initial: f64,
    pub last: f64,
}

impl AlphaSchedule {
    pub fn constant(alpha: f64) -> Self {
        Self {
            initial: alpha,
            last: alpha,
        }
    }

    pub fn linear(initial: f64, last: f64) -> Self {
        Self { initial, last }
    }

    /// Weight at `step_fraction ∈ [0, 1]` (clamped).
    pub fn at(&self, step_fraction: f64) -> f64 {
        let s = step_fraction.clamp(0.0, 1.0);
        self.initial + (self.last - self.initial) * s
    }

    fn validate(&self) -> Result<()> {
        if !(self.initial >= 0.0 && self.initial.is_finite() && self.last >= 0.0 && self.last.is_finite()) {
            return Err(Error::invalid(format!(
                "alpha schedule must be finite and nonnegative, got {} -> {}",
                self.initial, self.last
            )));
        }
        Ok(())
    }
}

impl Default for AlphaSchedule {
    fn default() -> Self {
        Self::constant(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphSource {
    Knn { k: usize },
    Predefined,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
}

/// Undirected weighted graph over `n` items.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureGraph {
    n: usize,
    edges: Vec<Edge>,
    source: GraphSource,
    alpha: AlphaSchedule,
}

impl StructureGraph {
    /// Validates node range, self-loops and weights.
    pub fn new(n: usize, edges: Vec<Edge>, source: GraphSource) -> Result<Self> {
        for (pos, e) in edges.iter().enumerate() {
            if e.i >= n || e.j >= n {
                return Err(Error::invalid(format!(
                    "edge {pos} ({}, {}) out of range for {n} nodes",
                    e.i, e.j
                )));
            }
            if e.i == e.j {
                return Err(Error::invalid(format!("edge {pos} is a self-loop on node {}", e.i)));
            }
            if !e.weight.is_finite() || e.weight < 0.0 {
                return Err(Error::invalid(format!(
                    "edge {pos} ({}, {}) has invalid weight {}",
                    e.i, e.j, e.weight
                )));
            }
        }
        Ok(Self {
            n,
            edges,
            source,
            alpha: AlphaSchedule::default(),
        })
    }

    pub fn with_alpha(mut self, alpha: AlphaSchedule) -> Result<Self> {
        alpha.validate()?;
        self.alpha = alpha;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn source(&self) -> GraphSource {
        self.source
    }

    pub fn alpha(&self) -> AlphaSchedule {
        self.alpha
    }

    /// Compressed adjacency: `(offsets, targets, weights)`.
    fn csr(&self) -> (Vec<usize>, Vec<usize>, Vec<f64>) {
        let mut degree = vec![0usize; self.n + 1];
        for e in &self.edges {
            degree[e.i + 1] += 1;
            degree[e.j + 1] += 1;
        }
        for v in 1..=self.n {
            degree[v] += degree[v - 1];
        }
        let offsets = degree;
        let mut fill = offsets.clone();
        let mut targets = vec![0usize; offsets[self.n]];
        let mut weights = vec![0.0f64; offsets[self.n]];
        for e in &self.edges {
            targets[fill[e.i]] = e.j;
            weights[fill[e.i]] = e.weight;
            fill[e.i] += 1;
            targets[fill[e.j]] = e.i;
            weights[fill[e.j]] = e.weight;
            fill[e.j] += 1;
        }
        (offsets, targets, weights)
    }
}

pub(crate) fn squared_euclidean(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in ca.by_ref().zip(cb.by_ref()) {
        for l in 0..4 {
            let d = x[l] - y[l];
            acc[l] += d * d;
        }
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        let d = x - y;
        tail += d * d;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Row-normalised copy; zero rows become the first basis vector.
pub(crate) fn unit_rows(values: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = values.to_owned();
    for mut row in out.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row.mapv_inplace(|v| v / norm);
        } else {
            row.fill(0.0);
            row[0] = 1.0;
        }
    }
    out
}

fn row_slices(values: &Array2<f64>) -> Vec<&[f64]> {
    values
        .rows()
        .into_iter()
        .map(|r| r.to_slice().expect("standard layout"))
        .collect()
}

fn metric_rows(x: &DataMatrix, metric: Metric) -> Array2<f64> {
    match metric {
        Metric::Euclidean => x.values.as_standard_layout().into_owned(),
        Metric::Cosine => unit_rows(x.values()),
    }
}

fn metric_distance(a: &[f64], b: &[f64], metric: Metric) -> f64 {
    match metric {
        Metric::Euclidean => squared_euclidean(a, b).sqrt(),
        Metric::Cosine => {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            (1.0 - dot).max(0.0)
        }
    }
}

/// Full pairwise distance matrix between feature rows.
pub fn pairwise_distances(x: &DataMatrix, metric: Metric) -> DistanceMatrix {
    let prepared = metric_rows(x, metric);
    let rows = row_slices(&prepared);
    let n = rows.len();
    let mut flat = vec![0.0f64; n * n];
    flat.par_chunks_mut(n).enumerate().for_each(|(i, out)| {
        for (j, o) in out.iter_mut().enumerate() {
            if i != j {
                *o = metric_distance(rows[i], rows[j], metric);
            }
        }
    });
    // Exact symmetry regardless of summation order.
    for i in 0..n {
        for j in (i + 1)..n {
            let v = flat[i * n + j].min(flat[j * n + i]);
            flat[i * n + j] = v;
            flat[j * n + i] = v;
        }
    }
    let d = Array2::from_shape_vec((n, n), flat).expect("n*n buffer");
    DistanceMatrix::from_complete(d).expect("pairwise distances are valid")
}

/// Symmetrised kNN graph: `(i, j)` is an edge when either is among the
/// other's `k` nearest rows. Ties at rank `k` go to the smaller index.
pub fn build_knn_graph(x: &DataMatrix, k: usize, metric: Metric) -> Result<StructureGraph> {
    let n = x.n_rows();
    if k == 0 || k >= n {
        return Err(Error::invalid(format!("k must satisfy 1 <= k < n, got k={k}, n={n}")));
    }
    let prepared = metric_rows(x, metric);
    let rows = row_slices(&prepared);

    let neighbours: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut cand: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (metric_distance(rows[i], rows[j], metric), j))
                .collect();
            let by_rank = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            cand.select_nth_unstable_by(k - 1, by_rank);
            cand.truncate(k);
            cand.sort_unstable_by(by_rank);
            cand.into_iter().map(|(d, j)| (j, d)).collect()
        })
        .collect();

    let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(n * k);
    for (i, list) in neighbours.iter().enumerate() {
        for &(j, _) in list {
            pairs.push((i.min(j), i.max(j)));
        }
    }
    pairs.sort_unstable();
    pairs.dedup();
    let edges = pairs
        .into_iter()
        .map(|(i, j)| Edge {
            i,
            j,
            weight: metric_distance(rows[i], rows[j], metric),
        })
        .collect();
    StructureGraph::new(n, edges, GraphSource::Knn { k })
}

/// How edge weights of a predefined graph are assigned.
#[derive(Debug, Clone, Copy)]
pub enum WeightMode<'a> {
    Unit,
    /// Euclidean distance between the endpoint feature rows.
    FeatureDistance(&'a DataMatrix),
}

/// Undirected graph from `(i, j)` pairs. Self-loops are dropped; repeated
/// pairs are kept as parallel edges.
pub fn graph_from_edge_list(n: usize, edges: &[(usize, usize)], mode: WeightMode<'_>) -> Result<StructureGraph> {
    if let WeightMode::FeatureDistance(x) = mode {
        if x.n_rows() != n {
            return Err(Error::invalid(format!(
                "feature matrix has {} rows but the graph has {n} nodes",
                x.n_rows()
            )));
        }
    }
    let mut out = Vec::with_capacity(edges.len());
    for (pos, &(i, j)) in edges.iter().enumerate() {
        if i >= n || j >= n {
            return Err(Error::invalid(format!(
                "edge {} ({i}, {j}) references a node outside 0..{n}",
                pos + 1
            )));
        }
        if i == j {
            continue;
        }
        let weight = match mode {
            WeightMode::Unit => 1.0,
            WeightMode::FeatureDistance(x) => {
                let a = x.row(i);
                let b = x.row(j);
                a.iter()
                    .zip(b.iter())
                    .map(|(p, q)| (p - q) * (p - q))
                    .sum::<f64>()
                    .sqrt()
            }
        };
        out.push(Edge { i, j, weight });
    }
    StructureGraph::new(n, out, GraphSource::Predefined)
}

/// Parses the edge-list text format: one whitespace-separated `i j` pair
/// per line, `#` starts a comment, blank lines are ignored.
pub fn parse_edge_list(text: &str, source_name: &str) -> Result<Vec<(usize, usize)>> {
    let mut edges = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let parse = |f: Option<&str>| -> Result<usize> {
            let f =
                f.ok_or_else(|| Error::format(source_name, format!("line {}", lineno + 1), "expected two node ids"))?;
            f.parse::<usize>().map_err(|_| {
                Error::format(
                    source_name,
                    format!("line {}", lineno + 1),
                    format!("invalid node id {f:?}"),
                )
            })
        };
        let i = parse(fields.next())?;
        let j = parse(fields.next())?;
        if fields.next().is_some() {
            return Err(Error::format(
                source_name,
                format!("line {}", lineno + 1),
                "expected exactly two node ids",
            ));
        }
        edges.push((i, j));
    }
    Ok(edges)
}

/// Like [`parse_edge_list`] but also checks every id against `n`, naming the
/// offending line.
pub fn parse_edge_list_checked(text: &str, source_name: &str, n: usize) -> Result<Vec<(usize, usize)>> {
    let edges = parse_edge_list(text, source_name)?;
    // Map edge positions back to their source lines for the message.
    let lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.split('#').next().unwrap_or("").trim().is_empty())
        .map(|(no, _)| no + 1);
    for ((i, j), lineno) in edges.iter().zip(lines) {
        if *i >= n || *j >= n {
            return Err(Error::format(
                source_name,
                format!("line {lineno}"),
                format!("node id out of range 0..{n} in pair ({i}, {j})"),
            ));
        }
    }
    Ok(edges)
}

/// Dense symmetric distance matrix with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    d: Array2<f64>,
    disconnected_fill: f64,
    finite_max: f64,
}

impl DistanceMatrix {
    /// Wraps a fully finite matrix (no unreachable pairs).
    pub fn from_complete(d: Array2<f64>) -> Result<Self> {
        let (n, m) = d.dim();
        if n != m {
            return Err(Error::invalid(format!("distance matrix must be square, got {n}x{m}")));
        }
        let mut finite_max = 0.0f64;
        for ((i, j), &v) in d.indexed_iter() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!("invalid distance {v} at ({i}, {j})")));
            }
            if i == j && v != 0.0 {
                return Err(Error::invalid(format!("nonzero diagonal {v} at {i}")));
            }
            finite_max = finite_max.max(v);
        }
        Ok(Self {
            d,
            disconnected_fill: finite_max,
            finite_max,
        })
    }

    pub fn n(&self) -> usize {
        self.d.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[[i, j]]
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.d.view()
    }

    pub fn disconnected_fill(&self) -> f64 {
        self.disconnected_fill
    }

    pub fn finite_max(&self) -> f64 {
        self.finite_max
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.d
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GeodesicOptions {
    /// Replaces the default `2 × finite_max` for unreachable pairs.
    pub fill_override: Option<f64>,
    /// Paths using more than this many edges count as unreachable.
    pub hop_limit: Option<usize>,
}

#[derive(Copy, Clone, PartialEq)]
struct HeapItem {
    dist: f64,
    node: usize,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on distance, then node id.
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn dijkstra_into(source: usize, csr: &(Vec<usize>, Vec<usize>, Vec<f64>), hop_limit: Option<usize>, dist: &mut [f64]) {
    let (offsets, targets, weights) = csr;
    let n = dist.len();
    dist.fill(f64::INFINITY);
    let mut hops = vec![0usize; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(HeapItem {
        dist: 0.0,
        node: source,
    });
    while let Some(HeapItem { dist: du, node: u }) = heap.pop() {
        if done[u] {
            continue;
        }
        done[u] = true;
        if hop_limit.is_some_and(|h| hops[u] >= h) {
            continue;
        }
        for e in offsets[u]..offsets[u + 1] {
            let v = targets[e];
            let cand = du + weights[e];
            if cand < dist[v] {
                dist[v] = cand;
                hops[v] = hops[u] + 1;
                heap.push(HeapItem { dist: cand, node: v });
            }
        }
    }
}

/// Shortest-path distances between every pair of nodes, one Dijkstra run
/// per source. Unreachable pairs get `2 × finite_max` unless overridden.
pub fn all_pairs_geodesic(g: &StructureGraph) -> Result<DistanceMatrix> {
    all_pairs_geodesic_with(g, &GeodesicOptions::default())
}

pub fn all_pairs_geodesic_with(g: &StructureGraph, opts: &GeodesicOptions) -> Result<DistanceMatrix> {
    if let Some(e) = g.edges.iter().find(|e| !(e.weight >= 0.0) || !e.weight.is_finite()) {
        return Err(Error::invalid(format!(
            "edge ({}, {}) has weight {}",
            e.i, e.j, e.weight
        )));
    }
    if let Some(fill) = opts.fill_override {
        if !(fill.is_finite() && fill >= 0.0) {
            return Err(Error::invalid(format!(
                "disconnected fill must be finite and >= 0, got {fill}"
            )));
        }
    }
    let n = g.n;
    let csr = g.csr();
    let mut flat = vec![0.0f64; n * n];
    flat.par_chunks_mut(n.max(1))
        .enumerate()
        .for_each(|(s, row)| dijkstra_into(s, &csr, opts.hop_limit, row));

    let mut finite_max = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            let v = flat[i * n + j].min(flat[j * n + i]);
            flat[i * n + j] = v;
            flat[j * n + i] = v;
            if v.is_finite() {
                finite_max = finite_max.max(v);
            }
        }
    }
    let fill = opts.fill_override.unwrap_or(2.0 * finite_max).max(finite_max);
    for v in flat.iter_mut() {
        if !v.is_finite() {
            *v = fill;
        }
    }
    let d = Array2::from_shape_vec((n, n), flat).expect("n*n buffer");
    Ok(DistanceMatrix {
        d,
        disconnected_fill: fill,
        finite_max,
    })
}
