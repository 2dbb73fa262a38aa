//! Reconstruction error and clustering agreement metrics.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::engine::FactorPair;
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

/// One cluster or class id per sample.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelVector(Vec<usize>);

impl LabelVector {
    pub fn new(labels: Vec<usize>) -> Self {
        Self(labels)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Number of distinct ids present.
    pub fn n_distinct(&self) -> usize {
        let mut ids = self.0.clone();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }
}

impl From<Vec<usize>> for LabelVector {
    fn from(v: Vec<usize>) -> Self {
        Self(v)
    }
}

/// `‖x_clean − WHᵀ‖_F / ‖x_clean‖_F`
pub fn rre(x_clean: &DenseMatrix, factors: &FactorPair) -> Result<f64> {
    factors.ensure_fits(x_clean)?;
    rre_approx(x_clean, &factors.reconstruct())
}

pub fn rre_approx(x_clean: &DenseMatrix, approx: &DenseMatrix) -> Result<f64> {
    let denom = x_clean.frobenius_norm();
    if denom == 0.0 {
        return Err(Error::numeric("relative error against an all-zero matrix"));
    }
    Ok(x_clean.squared_distance(approx)?.sqrt() / denom)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub labels: LabelVector,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub iterations: usize,
}

pub const KMEANS_MAX_ITER: usize = 300;
pub const KMEANS_TOL: f64 = 1e-6;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    centroids
        .iter()
        .enumerate()
        .map(|(c, cent)| (c, sq_dist(point, cent)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

fn plus_plus_seeds(points: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].to_vec()];
    let mut dist: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let next = match WeightedIndex::new(&dist) {
            Ok(sampler) => sampler.sample(rng),
            // every point coincides with a centroid already; take any unused index
            Err(_) => centroids.len() % n,
        };
        centroids.push(points[next].to_vec());
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

/// Lloyd's algorithm on the rows of `data` with k-means++ seeding.
pub fn kmeans(data: &DenseMatrix, k: usize, seed: u64) -> Result<KMeansResult> {
    let n = data.rows();
    if k == 0 || k > n {
        return Err(Error::config(format!("k = {k} outside [1, {n}]")));
    }
    let points: Vec<&[f64]> = (0..n).map(|i| data.row(i)).collect();
    let dim = data.cols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_seeds(&points, k, &mut rng);
    let mut labels = vec![0usize; n];
    let mut iterations = 0;

    for _ in 0..KMEANS_MAX_ITER {
        iterations += 1;
        let mut dists = vec![0.0; n];
        for (i, p) in points.iter().enumerate() {
            let (c, d) = nearest(p, &centroids);
            labels[i] = c;
            dists[i] = d;
        }

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&labels) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(p.iter()) {
                *s += v;
            }
        }
        // an empty cluster takes over the point farthest from its centroid
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let far = (0..n)
                .filter(|&i| counts[labels[i]] > 1)
                .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)));
            if let Some(i) = far {
                let old = labels[i];
                counts[old] -= 1;
                for (s, v) in sums[old].iter_mut().zip(points[i].iter()) {
                    *s -= v;
                }
                labels[i] = c;
                counts[c] = 1;
                sums[c] = points[i].to_vec();
                dists[i] = 0.0;
            }
        }

        let mut shift = 0.0;
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let next: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            shift += sq_dist(&next, &centroids[c]);
            centroids[c] = next;
        }
        if shift.sqrt() < KMEANS_TOL {
            break;
        }
    }

    let mut inertia = 0.0;
    for (i, p) in points.iter().enumerate() {
        let (c, d) = nearest(p, &centroids);
        labels[i] = c;
        inertia += d;
    }
    Ok(KMeansResult {
        labels: LabelVector(labels),
        centroids,
        inertia,
        iterations,
    })
}

/// Clusters the rows of `h` (one coefficient vector per sample) into `k` groups.
pub fn cluster_assign(h: &DenseMatrix, k: usize, seed: u64) -> Result<LabelVector> {
    Ok(kmeans(h, k, seed)?.labels)
}

/// Counts table with rows indexed by the distinct ids of `a` (ascending) and
/// columns by those of `b`.
pub fn contingency(a: &LabelVector, b: &LabelVector) -> Result<Vec<Vec<usize>>> {
    if a.len() != b.len() {
        return Err(Error::shape(format!(
            "label vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let index = |v: &LabelVector| -> BTreeMap<usize, usize> {
        let mut ids: Vec<usize> = v.0.clone();
        ids.sort_unstable();
        ids.dedup();
        ids.into_iter().enumerate().map(|(i, id)| (id, i)).collect()
    };
    let (ia, ib) = (index(a), index(b));
    let mut table = vec![vec![0usize; ib.len()]; ia.len()];
    for (x, y) in a.0.iter().zip(&b.0) {
        table[ia[x]][ib[y]] += 1;
    }
    Ok(table)
}

/// Minimum-cost perfect assignment on a square cost matrix (Hungarian method
/// with row/column potentials). Returns `assignment[row] = col`.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    assert!(cost.iter().all(|r| r.len() == n), "cost matrix must be square");
    // 1-based arrays; index 0 is the virtual start column
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Fraction of samples matched under the best one-to-one mapping between the
/// ids of `pred` and `truth`.
pub fn accuracy(pred: &LabelVector, truth: &LabelVector) -> Result<f64> {
    let table = contingency(pred, truth)?;
    if pred.is_empty() {
        return Err(Error::shape("accuracy of empty label vectors"));
    }
    let size = table.len().max(table[0].len());
    let cost: Vec<Vec<f64>> = (0..size)
        .map(|i| {
            (0..size)
                .map(|j| {
                    let c = table.get(i).and_then(|r| r.get(j)).copied().unwrap_or(0);
                    -(c as f64)
                })
                .collect()
        })
        .collect();
    let matched: f64 = hungarian(&cost)
        .iter()
        .enumerate()
        .map(|(i, &j)| -cost[i][j])
        .sum();
    Ok(matched / pred.len() as f64)
}

fn entropy(counts: impl Iterator<Item = usize>, total: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum()
}

/// `I(a; b) / sqrt(H(a) H(b))` with natural logarithms.
pub fn nmi(a: &LabelVector, b: &LabelVector) -> Result<f64> {
    let table = contingency(a, b)?;
    if a.is_empty() {
        return Err(Error::shape("nmi of empty label vectors"));
    }
    let total = a.len() as f64;
    let row_sums: Vec<usize> = table.iter().map(|r| r.iter().sum()).collect();
    let col_sums: Vec<usize> = (0..table[0].len())
        .map(|j| table.iter().map(|r| r[j]).sum())
        .collect();
    let ha = entropy(row_sums.iter().copied(), total);
    let hb = entropy(col_sums.iter().copied(), total);
    if ha == 0.0 || hb == 0.0 {
        return Ok(if ha == 0.0 && hb == 0.0 { 1.0 } else { 0.0 });
    }
    let mut mi = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let pij = c as f64 / total;
            let pi = row_sums[i] as f64 / total;
            let pj = col_sums[j] as f64 / total;
            mi += pij * (pij / (pi * pj)).ln();
        }
    }
    Ok((mi / (ha * hb).sqrt()).clamp(0.0, 1.0))
}
