//! Seeded k-means++ / Lloyd clustering over labelled points.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Result of a single k-means run with its objective trace.
#[derive(Debug, Clone)]
pub struct KMeansOutcome {
    /// Point id to compact cluster index.
    pub assignments: BTreeMap<String, usize>,
    pub n_clusters: usize,
    /// Within-cluster SSE after every assignment step, then after the
    /// final centroid update.
    pub sse_trace: Vec<f64>,
}

/// Partition `points` into at most `k` clusters.
///
/// Cluster indices are compact and ordered by the smallest member id.
/// When there are no more than `k` distinct vectors every distinct vector
/// becomes its own cluster.
pub fn kmeans<I, V>(points: &[(I, V)], k: usize, seed: u64, max_iters: usize) -> Result<BTreeMap<String, usize>>
where
    I: AsRef<str>,
    V: AsRef<[f64]>,
{
    kmeans_traced(points, k, seed, max_iters).map(|o| o.assignments)
}

pub fn kmeans_traced<I, V>(points: &[(I, V)], k: usize, seed: u64, max_iters: usize) -> Result<KMeansOutcome>
where
    I: AsRef<str>,
    V: AsRef<[f64]>,
{
    if k < 1 {
        return Err(Error::invalid("k must be >= 1"));
    }
    if max_iters < 1 {
        return Err(Error::invalid("max_iters must be >= 1"));
    }
    if points.is_empty() {
        return Err(Error::Empty("point set".into()));
    }
    let dim = points[0].1.as_ref().len();
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a].0.as_ref().cmp(points[b].0.as_ref()));
    for w in order.windows(2) {
        if points[w[0]].0.as_ref() == points[w[1]].0.as_ref() {
            return Err(Error::DuplicateDocId(points[w[0]].0.as_ref().to_string()));
        }
    }
    let ids: Vec<&str> = order.iter().map(|&i| points[i].0.as_ref()).collect();
    let data: Vec<&[f64]> = order.iter().map(|&i| points[i].1.as_ref()).collect();
    for (id, v) in ids.iter().zip(&data) {
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                id: id.to_string(),
                expected: dim,
                got: v.len(),
            });
        }
    }

    // group identical vectors; first occurrence in id order names the group
    let mut distinct: BTreeMap<Vec<u64>, usize> = BTreeMap::new();
    let mut group_of = Vec::with_capacity(data.len());
    for v in &data {
        let key: Vec<u64> = v.iter().map(|x| x.to_bits()).collect();
        let next = distinct.len();
        group_of.push(*distinct.entry(key).or_insert(next));
    }

    let (raw, sse_trace) = if distinct.len() <= k {
        let sse = sse(&data, &group_of, &centroids_of(&data, &group_of, distinct.len(), dim, None));
        (group_of, vec![sse])
    } else {
        lloyd(&data, k, seed, max_iters)
    };

    // relabel by first (smallest-id) member
    let mut relabel: BTreeMap<usize, usize> = BTreeMap::new();
    let mut assignments = BTreeMap::new();
    for (id, c) in ids.iter().zip(&raw) {
        let next = relabel.len();
        let label = *relabel.entry(*c).or_insert(next);
        assignments.insert(id.to_string(), label);
    }
    Ok(KMeansOutcome {
        assignments,
        n_clusters: relabel.len(),
        sse_trace,
    })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn sse(data: &[&[f64]], assign: &[usize], centroids: &[Vec<f64>]) -> f64 {
    data.iter().zip(assign).map(|(p, &c)| sq_dist(p, &centroids[c])).sum()
}

/// Mean of each cluster; clusters without members keep `previous`.
fn centroids_of(data: &[&[f64]], assign: &[usize], k: usize, dim: usize, previous: Option<&[Vec<f64>]>) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &c) in data.iter().zip(assign) {
        counts[c] += 1;
        for (s, x) in sums[c].iter_mut().zip(p.iter()) {
            *s += x;
        }
    }
    sums.into_iter()
        .zip(counts)
        .enumerate()
        .map(|(c, (s, n))| match (n, previous) {
            (0, Some(prev)) => prev[c].clone(),
            (0, None) => s,
            _ => s.into_iter().map(|x| x / n as f64).collect(),
        })
        .collect()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, cent) in centroids.iter().enumerate() {
        let d = sq_dist(p, cent);
        // strict comparison: ties keep the lower index
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

/// k-means++ seeding (D^2 sampling) over the id-sorted data.
fn plus_plus(data: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![data[rng.random_range(0..data.len())].to_vec()];
    let mut d2: Vec<f64> = data.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        if total.is_nan() || total <= 0.0 {
            break;
        }
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = data.len() - 1;
        for (i, w) in d2.iter().enumerate() {
            acc += w;
            if acc > target && *w > 0.0 {
                pick = i;
                break;
            }
        }
        let c = data[pick].to_vec();
        for (w, p) in d2.iter_mut().zip(data) {
            *w = w.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn lloyd(data: &[&[f64]], k: usize, seed: u64, max_iters: usize) -> (Vec<usize>, Vec<f64>) {
    let dim = data[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus(data, k, &mut rng);
    let mut assign: Vec<usize> = data.iter().map(|p| nearest(p, &centroids)).collect();
    let mut trace = vec![sse(data, &assign, &centroids)];
    for _ in 0..max_iters {
        centroids = centroids_of(data, &assign, centroids.len(), dim, Some(&centroids));
        let next: Vec<usize> = data.iter().map(|p| nearest(p, &centroids)).collect();
        trace.push(sse(data, &next, &centroids));
        if next == assign {
            break;
        }
        assign = next;
    }
    (assign, trace)
}
