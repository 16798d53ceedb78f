//! Embedding quality: rank-based neighbourhood preservation and
//! label-based probes.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::embed::adam::{AdamConfig, OptimizerState};
use crate::error::{Error, Result};
use crate::structure::{squared_euclidean, DataMatrix};

/// Embedding rows with class labels in `0..C`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEmbedding {
    pub z: Array2<f64>,
    pub labels: Vec<usize>,
    /// Input rows the embedding was computed from.
    pub x_ref: Option<DataMatrix>,
}

impl LabeledEmbedding {
    pub fn new(z: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        if z.nrows() != labels.len() {
            return Err(Error::invalid(format!(
                "{} embedding rows but {} labels",
                z.nrows(),
                labels.len()
            )));
        }
        Ok(Self { z, labels, x_ref: None })
    }

    pub fn with_reference(mut self, x: DataMatrix) -> Result<Self> {
        if x.n_rows() != self.n() {
            return Err(Error::invalid(format!(
                "{} reference rows but {} embedding rows",
                x.n_rows(),
                self.n()
            )));
        }
        self.x_ref = Some(x);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    /// Subset of rows in the given order.
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.n()) {
            return Err(Error::invalid(format!("row {bad} out of range for {} rows", self.n())));
        }
        Ok(Self {
            z: self.z.select(Axis(0), idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            x_ref: self.x_ref.as_ref().map(|x| x.select_rows(idx)).transpose()?,
        })
    }
}

/// Sorted sample of at most `max` indices out of `0..n`.
pub fn subsample_indices(n: usize, max: usize, seed: u64) -> Vec<usize> {
    if n <= max {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, n, max).into_vec();
    idx.sort_unstable();
    idx
}

/// Seeded shuffle split into `(train, test)`, each sorted; the test side
/// gets `round(n × test_fraction)` points, at least one of each.
pub fn split_indices(n: usize, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 || !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "cannot split {n} points with test fraction {test_fraction}"
        )));
    }
    let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let mut test = idx[..n_test].to_vec();
    let mut train = idx[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}

/// Mean Jaccard index between the `k`-NN sets of each point in `a` and `b`.
pub fn mean_knn_jaccard(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, k: usize) -> Result<f64> {
    let n = a.nrows();
    if b.nrows() != n {
        return Err(Error::invalid(format!("{n} rows versus {}", b.nrows())));
    }
    if k == 0 || k >= n {
        return Err(Error::invalid(format!("k must satisfy 1 <= k < n, got k={k}, n={n}")));
    }
    let a = a.as_standard_layout().into_owned();
    let b = b.as_standard_layout().into_owned();
    let (ap, bp) = (rows(&a), rows(&b));
    let total: f64 = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut na = k_nearest(&ap, i, k);
            let nb = k_nearest(&bp, i, k);
            na.sort_unstable();
            let shared = nb.iter().filter(|j| na.binary_search(j).is_ok()).count();
            shared as f64 / (2 * k - shared) as f64
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    Ok(total / n as f64)
}

/// One row of a metrics report.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricValue {
    pub metric: String,
    pub k: Option<usize>,
    pub value: f64,
}

/// `metric,k,value` lines under a header; `k` is empty where it does not apply.
pub fn metrics_csv(rows: &[MetricValue]) -> String {
    let mut out = String::from("metric,k,value\n");
    for r in rows {
        let k = r.k.map(|k| k.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{}\n", r.metric, k, r.value));
    }
    out
}

fn rows(a: &Array2<f64>) -> Vec<&[f64]> {
    a.rows()
        .into_iter()
        .map(|r| r.to_slice().expect("standard layout"))
        .collect()
}

/// Other points ordered by distance to `i`, ties by index.
fn ranked_neighbours(points: &[&[f64]], i: usize) -> Vec<usize> {
    let mut cand: Vec<(f64, usize)> = (0..points.len())
        .filter(|&j| j != i)
        .map(|j| (squared_euclidean(points[i], points[j]), j))
        .collect();
    cand.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    cand.into_iter().map(|(_, j)| j).collect()
}

fn k_nearest(points: &[&[f64]], i: usize, k: usize) -> Vec<usize> {
    let mut cand: Vec<(f64, usize)> = (0..points.len())
        .filter(|&j| j != i)
        .map(|j| (squared_euclidean(points[i], points[j]), j))
        .collect();
    let by = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < cand.len() {
        cand.select_nth_unstable_by(k - 1, by);
        cand.truncate(k);
    }
    cand.into_iter().map(|(_, j)| j).collect()
}

/// Penalises points that are neighbours in `low` but not in `high`, by
/// their rank in `high`.
fn rank_penalty_score(high: ArrayView2<'_, f64>, low: ArrayView2<'_, f64>, k: usize) -> Result<f64> {
    let n = high.nrows();
    if low.nrows() != n {
        return Err(Error::invalid(format!(
            "{n} input rows but {} embedding rows",
            low.nrows()
        )));
    }
    if k == 0 || 2 * k >= n {
        return Err(Error::invalid(format!("k must satisfy 1 <= k < n/2, got k={k}, n={n}")));
    }
    let high = high.as_standard_layout().into_owned();
    let low = low.as_standard_layout().into_owned();
    let hp = rows(&high);
    let lp = rows(&low);
    let penalty: u64 = (0..n)
        .into_par_iter()
        .map(|i| {
            let order = ranked_neighbours(&hp, i);
            let mut rank = vec![0usize; n];
            for (r, &j) in order.iter().enumerate() {
                rank[j] = r + 1;
            }
            k_nearest(&lp, i, k)
                .into_iter()
                .filter(|&j| rank[j] > k)
                .map(|j| (rank[j] - k) as u64)
                .sum::<u64>()
        })
        .sum();
    let (nf, kf) = (n as f64, k as f64);
    Ok(1.0 - 2.0 / (nf * kf * (2.0 * nf - 3.0 * kf - 1.0)) * penalty as f64)
}

/// Trustworthiness of `z` as an embedding of `x` at neighbourhood size `k`.
pub fn trustworthiness(x: ArrayView2<'_, f64>, z: ArrayView2<'_, f64>, k: usize) -> Result<f64> {
    rank_penalty_score(x, z, k)
}

/// Continuity: trustworthiness with the two spaces exchanged.
pub fn continuity(x: ArrayView2<'_, f64>, z: ArrayView2<'_, f64>, k: usize) -> Result<f64> {
    rank_penalty_score(z, x, k)
}

fn majority(votes: impl Iterator<Item = usize>, n_classes: usize) -> usize {
    let mut counts = vec![0usize; n_classes];
    for v in votes {
        counts[v] += 1;
    }
    // max_by_key keeps the last maximum; scan manually for the smallest class.
    let mut best = 0;
    for (c, &cnt) in counts.iter().enumerate() {
        if cnt > counts[best] {
            best = c;
        }
    }
    best
}

/// Fraction of test points whose `k` nearest train points vote their label.
pub fn knn_accuracy(train: &LabeledEmbedding, test: &LabeledEmbedding, k: usize) -> Result<f64> {
    if test.n() == 0 {
        return Err(Error::invalid("test set is empty"));
    }
    if k == 0 || k > train.n() {
        return Err(Error::invalid(format!(
            "k must satisfy 1 <= k <= {}, got {k}",
            train.n()
        )));
    }
    if train.z.ncols() != test.z.ncols() {
        return Err(Error::invalid(format!(
            "train dimension {} differs from test dimension {}",
            train.z.ncols(),
            test.z.ncols()
        )));
    }
    let n_classes = train.labels.iter().chain(&test.labels).max().map_or(1, |m| m + 1);
    let tr = train.z.as_standard_layout().into_owned();
    let te = test.z.as_standard_layout().into_owned();
    let trp = rows(&tr);
    let tep = rows(&te);
    let correct = (0..test.n())
        .into_par_iter()
        .filter(|&q| {
            let mut cand: Vec<(f64, usize)> = trp
                .iter()
                .enumerate()
                .map(|(j, p)| (squared_euclidean(tep[q], p), j))
                .collect();
            let by = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if k < cand.len() {
                cand.select_nth_unstable_by(k - 1, by);
                cand.truncate(k);
            }
            majority(cand.iter().map(|&(_, j)| train.labels[j]), n_classes) == test.labels[q]
        })
        .count();
    Ok(correct as f64 / test.n() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub l2: f64,
    pub lr: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            l2: 1e-4,
            lr: 0.05,
        }
    }
}

/// Softmax regression trained full-batch with Adam on standardised
/// features; returns test top-1 accuracy.
pub fn linear_probe(train: &LabeledEmbedding, test: &LabeledEmbedding, cfg: &ProbeConfig) -> Result<f64> {
    if test.n() == 0 || train.n() == 0 {
        return Err(Error::invalid("train and test sets must be nonempty"));
    }
    if train.z.ncols() != test.z.ncols() {
        return Err(Error::invalid("train and test dimensions differ"));
    }
    let mut present: Vec<usize> = train.labels.clone();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(Error::invalid(
            "linear probe needs at least two classes in the training set",
        ));
    }
    let n_classes = train.labels.iter().chain(&test.labels).max().map_or(0, |m| m + 1);
    let dim = train.z.ncols();

    let mean = train.z.mean_axis(Axis(0)).expect("nonempty");
    let std = train.z.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { s } else { 1.0 });
    let standardise = |z: &Array2<f64>| (z - &mean) / &std;
    let xtr = standardise(&train.z);
    let xte = standardise(&test.z);

    let n = train.n() as f64;
    let mut w = Array2::<f64>::zeros((dim, n_classes));
    let mut b = Array1::<f64>::zeros(n_classes);
    let mut onehot = Array2::<f64>::zeros((train.n(), n_classes));
    for (i, &y) in train.labels.iter().enumerate() {
        onehot[[i, y]] = 1.0;
    }
    let mut opt = OptimizerState::new(AdamConfig {
        base_lr: cfg.lr,
        batch_size: 256,
        ..AdamConfig::default()
    });
    for _ in 0..cfg.epochs {
        let mut logits = xtr.dot(&w) + &b;
        for mut row in logits.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
            row.mapv_inplace(|v| (v - m).exp());
            let s = row.sum();
            row.mapv_inplace(|v| v / s);
        }
        let delta = (logits - &onehot) / n;
        let gw = xtr.t().dot(&delta) + &w * cfg.l2;
        let gb = delta.sum_axis(Axis(0));
        opt.step(
            vec![
                ("probe.weight".into(), w.as_slice_mut().expect("standard layout")),
                ("probe.bias".into(), b.as_slice_mut().expect("contiguous")),
            ],
            &[gw.into_raw_vec_and_offset().0, gb.to_vec()],
        )?;
    }
    let logits = xte.dot(&w) + &b;
    let correct = logits
        .rows()
        .into_iter()
        .zip(&test.labels)
        .filter(|(row, &y)| {
            let mut best = 0;
            for c in 1..row.len() {
                if row[c] > row[best] {
                    best = c;
                }
            }
            best == y
        })
        .count();
    Ok(correct as f64 / test.n() as f64)
}
