// Brute-force Mapper: enumerate every cover element, cluster each preimage
// with an all-pairs DBSCAN, and build the nerve by explicit set
// intersections. Shared by the core tests and the acceptance suite.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use weightscope::mapper::{self, EpsRule, Filter, LearningGraph, MapperParams};
use weightscope::Matrix;

/// A vertex is identified by its cover element and its member set.
pub type Key = (usize, Vec<usize>);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SetGraph {
    pub vertices: BTreeSet<Key>,
    pub edges: BTreeMap<(Key, Key), usize>,
    pub triangles: BTreeSet<(Key, Key, Key)>,
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn filter_values(points: &Matrix, filter: Filter) -> Vec<Vec<f64>> {
    match filter {
        Filter::L2 => (0..points.rows())
            .map(|r| vec![points.row(r).iter().map(|x| x * x).sum::<f64>().sqrt()])
            .collect(),
        // PCA itself is checked by its own oracle; reuse the projection here.
        Filter::Pca { k, stride } => {
            let fv = mapper::filter_pca(points, k, stride).unwrap();
            (0..fv.values.rows()).map(|r| fv.values.row(r).to_vec()).collect()
        }
    }
}

/// Closed intervals per axis, straight from centre ± half-width with the
/// outer ends pinned to the data range.
fn axis_intervals(values: &[f64], n: usize, p: f64) -> Vec<(f64, f64)> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return vec![(lo, hi)];
    }
    let w = (hi - lo) / n as f64;
    let h = w * (1.0 + p) / 2.0;
    (0..n)
        .map(|i| {
            let c = lo + (i as f64 + 0.5) * w;
            let a = if i == 0 { lo } else { c - h };
            let b = if i == n - 1 { hi } else { c + h };
            (a, b)
        })
        .collect()
}

fn knn_eps(points: &[&[f64]], rule: EpsRule) -> f64 {
    match rule {
        EpsRule::Fixed { eps } => eps,
        EpsRule::Adaptive { factor, k } => {
            let n = points.len();
            let mean = if n < 2 {
                0.0
            } else {
                let k = k.min(n - 1);
                let mut total = 0.0;
                for i in 0..n {
                    let mut d: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| sq(points[i], points[j])).collect();
                    d.sort_by(f64::total_cmp);
                    total += d[k - 1].sqrt();
                }
                total / n as f64
            };
            let eps = factor * mean;
            if eps > 0.0 {
                eps
            } else {
                f64::MIN_POSITIVE
            }
        }
    }
}

/// All-pairs DBSCAN. Core points are merged through the eps-graph; a border
/// point belongs to the cluster whose first core point (in index order) is
/// smallest among the clusters of its core neighbours.
fn dbscan_sets(points: &[&[f64]], eps: f64, min_samples: usize) -> Vec<Vec<usize>> {
    let n = points.len();
    let eps2 = eps * eps;
    let adj: Vec<Vec<bool>> = (0..n)
        .map(|i| (0..n).map(|j| sq(points[i], points[j]) <= eps2).collect())
        .collect();
    let core: Vec<bool> = adj.iter().map(|r| r.iter().filter(|&&b| b).count() >= min_samples).collect();
    // component of each core point, labelled by its smallest core index
    let mut comp: Vec<Option<usize>> = vec![None; n];
    for s in 0..n {
        if !core[s] || comp[s].is_some() {
            continue;
        }
        let mut stack = vec![s];
        comp[s] = Some(s);
        while let Some(p) = stack.pop() {
            for q in 0..n {
                if core[q] && adj[p][q] && comp[q].is_none() {
                    comp[q] = Some(s);
                    stack.push(q);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let label = if core[i] {
            comp[i]
        } else {
            (0..n).filter(|&j| core[j] && adj[i][j]).filter_map(|j| comp[j]).min()
        };
        if let Some(l) = label {
            groups.entry(l).or_default().push(i);
        }
    }
    groups.into_values().collect()
}

pub fn oracle(points: &Matrix, params: &MapperParams) -> SetGraph {
    let fv = filter_values(points, params.filter);
    let dims = fv[0].len();
    let axes: Vec<Vec<(f64, f64)>> = (0..dims)
        .map(|d| {
            let col: Vec<f64> = fv.iter().map(|v| v[d]).collect();
            axis_intervals(&col, params.intervals, params.overlap)
        })
        .collect();

    // cover elements in product order, last axis fastest
    let mut elements: Vec<Vec<usize>> = vec![vec![]];
    for axis in &axes {
        elements = elements
            .into_iter()
            .flat_map(|prefix| {
                (0..axis.len()).map(move |i| {
                    let mut e = prefix.clone();
                    e.push(i);
                    e
                })
            })
            .collect();
    }

    let mut vertices = BTreeSet::new();
    for (e, coords) in elements.iter().enumerate() {
        let ids: Vec<usize> = (0..points.rows())
            .filter(|&r| {
                coords.iter().enumerate().all(|(d, &i)| {
                    let (a, b) = axes[d][i];
                    a <= fv[r][d] && fv[r][d] <= b
                })
            })
            .collect();
        if ids.is_empty() {
            continue;
        }
        let sub: Vec<&[f64]> = ids.iter().map(|&r| points.row(r)).collect();
        let eps = knn_eps(&sub, params.eps);
        for group in dbscan_sets(&sub, eps, params.min_samples) {
            vertices.insert((e, group.iter().map(|&l| ids[l]).collect::<Vec<_>>()));
        }
    }

    let list: Vec<&Key> = vertices.iter().collect();
    let sets: Vec<BTreeSet<usize>> = list.iter().map(|k| k.1.iter().copied().collect()).collect();
    let mut edges = BTreeMap::new();
    let mut triangles = BTreeSet::new();
    for i in 0..list.len() {
        for j in (i + 1)..list.len() {
            let ij: BTreeSet<usize> = sets[i].intersection(&sets[j]).copied().collect();
            if ij.is_empty() {
                continue;
            }
            edges.insert((list[i].clone(), list[j].clone()), ij.len());
            if params.max_dim >= 2 {
                for k in (j + 1)..list.len() {
                    if ij.intersection(&sets[k]).next().is_some() {
                        triangles.insert((list[i].clone(), list[j].clone(), list[k].clone()));
                    }
                }
            }
        }
    }
    SetGraph {
        vertices,
        edges,
        triangles,
    }
}

/// Re-expresses a library graph with vertices keyed by member sets.
pub fn as_sets(graph: &LearningGraph) -> SetGraph {
    let keys: Vec<Key> = graph
        .vertices
        .iter()
        .map(|v| (v.cover_element, v.members.clone()))
        .collect();
    let ordered = |a: &Key, b: &Key| if a <= b { (a.clone(), b.clone()) } else { (b.clone(), a.clone()) };
    let edges = graph
        .edges
        .iter()
        .map(|e| (ordered(&keys[e.a], &keys[e.b]), e.weight))
        .collect();
    let triangles = graph
        .triangles
        .iter()
        .map(|t| {
            let mut ks = [keys[t[0]].clone(), keys[t[1]].clone(), keys[t[2]].clone()];
            ks.sort();
            let [a, b, c] = ks;
            (a, b, c)
        })
        .collect();
    SetGraph {
        vertices: keys.into_iter().collect(),
        edges,
        triangles,
    }
}

/// Deterministic random cloud: a few Gaussian blobs, sometimes stretched
/// along a line, so that covers and clusters are non-trivial.
pub fn random_case(seed: u64) -> (Matrix, MapperParams) {
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=500);
    let d = rng.random_range(1..=10);
    let blobs = rng.random_range(1..=5);
    let centers: Vec<Vec<f64>> = (0..blobs)
        .map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect())
        .collect();
    let spread: f64 = rng.random_range(0.05..0.8);
    let mut data = Vec::with_capacity(n * d);
    for i in 0..n {
        let c = &centers[i % blobs];
        let t: f64 = rng.random_range(0.0..1.0);
        for x in c {
            let z: f64 = StandardNormal.sample(&mut rng);
            data.push(x * (0.5 + t) + spread * z);
        }
    }
    let points = Matrix::from_vec(n, d, data).unwrap();
    let filter = match rng.random_range(0..3) {
        0 => Filter::L2,
        k => Filter::Pca {
            k: (k as usize).min(d),
            stride: rng.random_range(1..=3),
        },
    };
    let eps = if rng.random_bool(0.5) {
        EpsRule::Fixed {
            eps: rng.random_range(0.05..1.5),
        }
    } else {
        EpsRule::Adaptive {
            factor: rng.random_range(0.3..1.5),
            k: rng.random_range(1..=8),
        }
    };
    let params = MapperParams {
        filter,
        intervals: rng.random_range(1..=8),
        overlap: if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.0..0.7) },
        eps,
        min_samples: rng.random_range(1..=5),
        max_dim: rng.random_range(1..=2),
    };
    (points, params)
}
