//! k-means++ with silhouette model selection, medoids, and label agreement.

use super::AnalysisError;
use crate::rng::stream;
use ndarray::{Array2, ArrayView1, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const MAX_K: usize = 12;
const RESTARTS: usize = 10;
const MAX_ITER: usize = 300;

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub labels: Vec<usize>,
    pub centroids: Array2<f64>,
    pub inertia: f64,
}

fn plus_plus_init<R: Rng>(data: &Array2<f64>, k: usize, rng: &mut R) -> Array2<f64> {
    let n = data.nrows();
    let mut centroids = Array2::zeros((k, data.ncols()));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&data.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(data.row(i), data.row(first))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if r < d {
                    idx = i;
                    break;
                }
                r -= d;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).assign(&data.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(data.row(i), data.row(pick)));
        }
    }
    centroids
}

fn assign(data: &Array2<f64>, centroids: &Array2<f64>) -> (Vec<usize>, f64) {
    let mut inertia = 0.0;
    let labels = data
        .outer_iter()
        .map(|x| {
            let (best, d) = centroids
                .outer_iter()
                .enumerate()
                .map(|(c, m)| (c, sq_dist(x, m)))
                .fold((0, f64::INFINITY), |acc, cur| if cur.1 < acc.1 { cur } else { acc });
            inertia += d;
            best
        })
        .collect();
    (labels, inertia)
}

fn lloyd(data: &Array2<f64>, mut centroids: Array2<f64>) -> KMeansFit {
    let k = centroids.nrows();
    let (mut labels, mut inertia) = assign(data, &centroids);
    for _ in 0..MAX_ITER {
        let mut sums = Array2::<f64>::zeros(centroids.raw_dim());
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            sums.row_mut(l).scaled_add(1.0, &data.row(i));
            counts[l] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids.row_mut(c).assign(&(&sums.row(c) / counts[c] as f64));
            } else {
                // Re-seed an empty cluster at the point farthest from its centroid.
                let far = (0..data.nrows())
                    .max_by(|&a, &b| {
                        let da = sq_dist(data.row(a), centroids.row(labels[a]));
                        let db = sq_dist(data.row(b), centroids.row(labels[b]));
                        da.total_cmp(&db).then(b.cmp(&a))
                    })
                    .unwrap();
                centroids.row_mut(c).assign(&data.row(far));
            }
        }
        let (next, next_inertia) = assign(data, &centroids);
        let done = next == labels;
        labels = next;
        inertia = next_inertia;
        if done {
            break;
        }
    }
    KMeansFit {
        labels,
        centroids,
        inertia,
    }
}

/// Best of ten seeded k-means++ restarts by inertia.
pub fn kmeans(data: &Array2<f64>, k: usize, seed: u64) -> KMeansFit {
    assert!(k >= 1 && k <= data.nrows(), "k must be in 1..=n");
    (0..RESTARTS)
        .map(|r| {
            let mut rng = stream(seed, &[k as u64, r as u64]);
            lloyd(data, plus_plus_init(data, k, &mut rng))
        })
        .reduce(|best, f| if f.inertia < best.inertia { f } else { best })
        .unwrap()
}

pub fn distance_matrix(data: &Array2<f64>) -> Array2<f64> {
    let n = data.nrows();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            let v = sq_dist(data.row(i), data.row(j)).sqrt();
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    d
}

/// Mean silhouette; members of singleton clusters contribute 0.
pub fn silhouette(dist: &Array2<f64>, labels: &[usize]) -> f64 {
    let n = labels.len();
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    let mut total = 0.0;
    for i in 0..n {
        if sizes[labels[i]] <= 1 {
            continue;
        }
        let mut sums = vec![0.0; k];
        for j in 0..n {
            sums[labels[j]] += dist[[i, j]];
        }
        let a = sums[labels[i]] / (sizes[labels[i]] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != labels[i] && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 && b.is_finite() {
            total += (b - a) / m;
        }
    }
    total / n as f64
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0u64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let c2 = |v: u64| (v * v.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.iter().flatten().map(|&v| c2(v)).sum();
    let rows: f64 = table.iter().map(|r| c2(r.iter().sum())).sum();
    let cols: f64 = (0..kb).map(|j| c2(table.iter().map(|r| r[j]).sum())).sum();
    let all = c2(n as u64);
    let expected = if all > 0.0 { rows * cols / all } else { 0.0 };
    let max = (rows + cols) / 2.0;
    if max == expected {
        1.0
    } else {
        (index - expected) / (max - expected)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub members: Vec<usize>,
    /// Member minimizing the summed distance to the other members.
    pub medoid: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub k: usize,
    pub labels: Vec<usize>,
    pub clusters: Vec<Cluster>,
    pub silhouette: f64,
    /// Silhouette of every candidate k when k was selected automatically.
    pub candidates: Vec<(usize, f64)>,
    /// All points coincide; a single cluster is returned.
    pub degenerate: bool,
}

fn clusters_of(dist: &Array2<f64>, labels: &[usize], k: usize) -> Vec<Cluster> {
    (0..k)
        .map(|c| {
            let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
            let medoid = *members
                .iter()
                .min_by(|&&a, &&b| {
                    let sa: f64 = members.iter().map(|&j| dist[[a, j]]).sum();
                    let sb: f64 = members.iter().map(|&j| dist[[b, j]]).sum();
                    sa.total_cmp(&sb).then(a.cmp(&b))
                })
                .expect("clusters are non-empty");
            Cluster { members, medoid }
        })
        .collect()
}

/// Relabel clusters in order of their lowest member so labelings are canonical.
fn canonical(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut map = std::collections::HashMap::new();
    let out = labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect();
    (out, map.len())
}

/// Cluster the rows of `data`. With `k = None`, k maximizes the mean silhouette over
/// `2..=min(12, n - 1)` (and at most the number of distinct rows).
pub fn cluster(data: &Array2<f64>, k: Option<usize>, seed: u64) -> Result<Clustering, AnalysisError> {
    let n = data.nrows();
    if n < 2 {
        return Err(AnalysisError::InsufficientData { needed: 2, got: n });
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(AnalysisError::Malformed("non-finite feature".into()));
    }
    let dist = distance_matrix(data);
    let mut distinct: Vec<usize> = Vec::new();
    for i in 0..n {
        if distinct.iter().all(|&j| dist[[i, j]] > 0.0) {
            distinct.push(i);
        }
    }
    if distinct.len() == 1 {
        return Ok(Clustering {
            k: 1,
            labels: vec![0; n],
            clusters: clusters_of(&dist, &vec![0; n], 1),
            silhouette: 0.0,
            candidates: Vec::new(),
            degenerate: true,
        });
    }
    let fit = |k: usize| {
        let f = kmeans(data, k, seed);
        let (labels, k) = canonical(&f.labels);
        let s = silhouette(&dist, &labels);
        (labels, k, s)
    };
    let (labels, k, s, candidates) = match k {
        Some(k) => {
            if k == 0 || k > distinct.len() {
                return Err(AnalysisError::InsufficientData {
                    needed: k,
                    got: distinct.len(),
                });
            }
            let (labels, k, s) = fit(k);
            (labels, k, s, Vec::new())
        }
        None => {
            let hi = MAX_K.min(n - 1).max(2).min(distinct.len());
            let mut best: Option<(Vec<usize>, usize, f64)> = None;
            let mut candidates = Vec::new();
            for k in 2..=hi {
                let (labels, k_eff, s) = fit(k);
                candidates.push((k, s));
                if best.as_ref().is_none_or(|b| s > b.2) {
                    best = Some((labels, k_eff, s));
                }
            }
            let (labels, k, s) = best.expect("at least one candidate");
            (labels, k, s, candidates)
        }
    };
    Ok(Clustering {
        k,
        clusters: clusters_of(&dist, &labels, k),
        labels,
        silhouette: s,
        candidates,
        degenerate: false,
    })
}

/// Standardize every column, then weight each block by `1 / sqrt(width)` so that blocks
/// of different widths carry the same total variance.
pub fn fuse_blocks(blocks: &[&Array2<f64>]) -> Array2<f64> {
    let n = blocks.first().map_or(0, |b| b.nrows());
    let views: Vec<Array2<f64>> = blocks
        .iter()
        .filter(|b| b.ncols() > 0)
        .map(|b| {
            assert_eq!(b.nrows(), n, "blocks must have one row per item");
            let mean = b.mean_axis(Axis(0)).unwrap();
            let std = b.std_axis(Axis(0), 0.0);
            let w = 1.0 / (b.ncols() as f64).sqrt();
            let mut z = b.to_owned() - &mean;
            for (mut col, &s) in z.axis_iter_mut(Axis(1)).zip(std.iter()) {
                if s > 0.0 {
                    col.mapv_inplace(|v| v / s * w);
                } else {
                    col.fill(0.0);
                }
            }
            z
        })
        .collect();
    let refs: Vec<_> = views.iter().map(|v| v.view()).collect();
    if refs.is_empty() {
        return Array2::zeros((n, 0));
    }
    ndarray::concatenate(Axis(1), &refs).expect("equal row counts")
}
