//! The Mapper construction: filter values, a uniform overlapping cover of
//! filter space, DBSCAN inside every cover preimage, and the nerve of the
//! resulting clusters.
//!
//! Clustering runs on the full-dimensional coordinates of each preimage;
//! only the cover lives in filter space. A point labeled noise in one
//! preimage can still belong to a cluster of an overlapping preimage.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::PointTag;
use crate::linalg::{self, LinalgError, Matrix};

#[derive(Debug, Error)]
pub enum MapperError {
    #[error("invalid mapper parameter: {0}")]
    InvalidParameter(String),
    #[error("empty point cloud")]
    EmptyCloud,
    #[error("{tags} tags for {points} points")]
    TagCount { points: usize, tags: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// One row of filter coordinates per point.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterValues {
    pub values: Matrix,
}

impl FilterValues {
    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Filter {
    /// Euclidean norm of each point.
    L2,
    /// First `k` principal coordinates, fit on every `stride`-th point.
    Pca { k: usize, stride: usize },
}

impl Filter {
    pub fn pca(k: usize) -> Self {
        Filter::Pca { k, stride: 1 }
    }
}

pub fn filter_l2(points: &Matrix) -> Result<FilterValues, MapperError> {
    if points.rows() == 0 {
        return Err(MapperError::EmptyCloud);
    }
    let data = points.row_iter().map(linalg::norm).collect();
    Ok(FilterValues {
        values: Matrix::from_vec(points.rows(), 1, data)?,
    })
}

/// Projects every point onto the cloud's own top-`k` principal axes. The
/// axes are fit on rows `0, stride, 2*stride, ...`; all rows are projected.
pub fn filter_pca(points: &Matrix, k: usize, stride: usize) -> Result<FilterValues, MapperError> {
    if points.rows() == 0 {
        return Err(MapperError::EmptyCloud);
    }
    if stride == 0 {
        return Err(MapperError::InvalidParameter("pca stride must be at least 1".into()));
    }
    let basis = if stride == 1 {
        linalg::pca_fit(points, k)?
    } else {
        let idx: Vec<usize> = (0..points.rows()).step_by(stride).collect();
        linalg::pca_fit(&points.select_rows(&idx), k)?
    };
    Ok(FilterValues {
        values: linalg::pca_project(&basis, points)?,
    })
}

pub fn apply_filter(points: &Matrix, filter: Filter) -> Result<FilterValues, MapperError> {
    match filter {
        Filter::L2 => filter_l2(points),
        Filter::Pca { k, stride } => filter_pca(points, k, stride),
    }
}

/// Uniform intervals along one filter coordinate.
///
/// Interval `i` is centered at `lo + (i + 0.5) * w` with half-width
/// `w * (1 + overlap) / 2`, where `w = (hi - lo) / n_intervals`. A constant
/// coordinate (`lo == hi`) gets the single interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverAxis {
    pub n_intervals: usize,
    pub overlap: f64,
    pub lo: f64,
    pub hi: f64,
}

impl CoverAxis {
    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.n_intervals as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.width()
    }

    pub fn half_width(&self) -> f64 {
        self.width() * (1.0 + self.overlap) / 2.0
    }

    /// Closed bounds of interval `i`.
    ///
    /// Written as `lo + (i ∓ p/2) * w`, which equals `c_i ∓ h` and makes the
    /// shared endpoint of adjacent intervals bitwise identical when
    /// `overlap = 0`. The outer ends are widened to `lo`/`hi` in case
    /// rounding left them a hair inside the data range.
    pub fn bounds(&self, i: usize) -> (f64, f64) {
        let w = self.width();
        let half_p = self.overlap / 2.0;
        let mut left = self.lo + (i as f64 - half_p) * w;
        let mut right = self.lo + ((i + 1) as f64 + half_p) * w;
        if i == 0 {
            left = left.min(self.lo);
        }
        if i + 1 == self.n_intervals {
            right = right.max(self.hi);
        }
        (left, right)
    }

    fn containing(&self, v: f64) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_intervals).filter(move |&i| {
            let (l, r) = self.bounds(i);
            l <= v && v <= r
        })
    }
}

/// Product cover of filter space. Element indices enumerate interval tuples
/// with the last filter coordinate varying fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cover {
    pub axes: Vec<CoverAxis>,
}

impl Cover {
    pub fn n_elements(&self) -> usize {
        self.axes.iter().map(|a| a.n_intervals).product()
    }

    /// Per-axis interval indices of element `e`.
    pub fn element_coords(&self, mut e: usize) -> Vec<usize> {
        let mut coords = vec![0; self.axes.len()];
        for (d, axis) in self.axes.iter().enumerate().rev() {
            coords[d] = e % axis.n_intervals;
            e /= axis.n_intervals;
        }
        coords
    }

    pub fn element_index(&self, coords: &[usize]) -> usize {
        coords
            .iter()
            .zip(&self.axes)
            .fold(0, |acc, (&c, axis)| acc * axis.n_intervals + c)
    }

    pub fn element_bounds(&self, e: usize) -> Vec<(f64, f64)> {
        self.element_coords(e)
            .iter()
            .zip(&self.axes)
            .map(|(&i, axis)| axis.bounds(i))
            .collect()
    }

    pub fn contains(&self, e: usize, value: &[f64]) -> bool {
        self.element_bounds(e)
            .iter()
            .zip(value)
            .all(|(&(l, r), &v)| l <= v && v <= r)
    }

    /// Point ids in each element's preimage, indexed by element.
    pub fn preimages(&self, fv: &FilterValues) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_elements()];
        let mut per_axis: Vec<Vec<usize>> = vec![Vec::new(); self.axes.len()];
        for p in 0..fv.len() {
            let row = fv.values.row(p);
            for (d, axis) in self.axes.iter().enumerate() {
                per_axis[d].clear();
                per_axis[d].extend(axis.containing(row[d]));
            }
            for_each_product(&per_axis, &mut |coords| {
                out[self.element_index(coords)].push(p);
            });
        }
        out
    }
}

fn for_each_product(choices: &[Vec<usize>], f: &mut dyn FnMut(&[usize])) {
    fn rec(choices: &[Vec<usize>], prefix: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        if prefix.len() == choices.len() {
            f(prefix);
            return;
        }
        for &c in &choices[prefix.len()] {
            prefix.push(c);
            rec(choices, prefix, f);
            prefix.pop();
        }
    }
    rec(choices, &mut Vec::with_capacity(choices.len()), f);
}

/// Builds a cover with `n_intervals` per filter coordinate spanning the
/// data's min/max on that coordinate.
pub fn build_cover(fv: &FilterValues, n_intervals: usize, overlap: f64) -> Result<Cover, MapperError> {
    if n_intervals == 0 {
        return Err(MapperError::InvalidParameter("n_intervals must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(MapperError::InvalidParameter(format!(
            "overlap must be in [0, 1), got {overlap}"
        )));
    }
    if fv.is_empty() {
        return Err(MapperError::EmptyCloud);
    }
    let axes = (0..fv.dim())
        .map(|d| {
            let (lo, hi) = fv
                .values
                .row_iter()
                .map(|r| r[d])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            CoverAxis {
                n_intervals: if lo == hi { 1 } else { n_intervals },
                overlap,
                lo,
                hi,
            }
        })
        .collect();
    Ok(Cover { axes })
}

/// How DBSCAN's radius is chosen inside each preimage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum EpsRule {
    Fixed { eps: f64 },
    /// `factor` times the mean distance from each point to its `k`-th
    /// nearest neighbour within the preimage.
    Adaptive { factor: f64, k: usize },
}

impl Default for EpsRule {
    fn default() -> Self {
        EpsRule::Adaptive { factor: 0.5, k: 5 }
    }
}

impl EpsRule {
    fn validate(&self) -> Result<(), MapperError> {
        let ok = match *self {
            EpsRule::Fixed { eps } => eps > 0.0 && eps.is_finite(),
            EpsRule::Adaptive { factor, k } => factor > 0.0 && factor.is_finite() && k >= 1,
        };
        if ok {
            Ok(())
        } else {
            Err(MapperError::InvalidParameter(format!("bad eps rule {self:?}")))
        }
    }

    pub fn resolve(&self, points: &Matrix) -> f64 {
        match *self {
            EpsRule::Fixed { eps } => eps,
            EpsRule::Adaptive { factor, k } => {
                let eps = factor * mean_knn_distance(points, k);
                if eps > 0.0 {
                    eps
                } else {
                    f64::MIN_POSITIVE
                }
            }
        }
    }
}

/// Mean over points of the distance to their `k`-th nearest other point
/// (`k` is capped at `n - 1`). Zero for fewer than two points.
pub fn mean_knn_distance(points: &Matrix, k: usize) -> f64 {
    let n = points.rows();
    if n < 2 {
        return 0.0;
    }
    let k = k.min(n - 1);
    let mut d = Vec::with_capacity(n - 1);
    let mut total = 0.0;
    for i in 0..n {
        d.clear();
        let pi = points.row(i);
        for j in 0..n {
            if j != i {
                d.push(linalg::sq_dist(pi, points.row(j)));
            }
        }
        let (_, kth, _) = d.select_nth_unstable_by(k - 1, f64::total_cmp);
        total += kth.sqrt();
    }
    total / n as f64
}

/// DBSCAN with an inclusive, self-counting neighbourhood: a point is core
/// when at least `min_samples` points (itself included) lie within `eps`.
///
/// Clusters are grown breadth-first from unlabeled core points taken in
/// index order, so a border point reachable from two clusters joins the
/// first one to reach it. Returns one cluster id per point, `None` for noise.
pub fn dbscan(points: &Matrix, eps: f64, min_samples: usize) -> Vec<Option<usize>> {
    let n = points.rows();
    let eps2 = eps * eps;
    let neighbors = |i: usize, out: &mut Vec<usize>| {
        out.clear();
        let pi = points.row(i);
        out.extend((0..n).filter(|&j| linalg::sq_dist(pi, points.row(j)) <= eps2));
    };

    let mut buf = Vec::new();
    let core: Vec<bool> = (0..n)
        .map(|i| {
            neighbors(i, &mut buf);
            buf.len() >= min_samples
        })
        .collect();

    let mut labels = vec![None; n];
    let mut next = 0;
    let mut queue = std::collections::VecDeque::new();
    for seed in 0..n {
        if !core[seed] || labels[seed].is_some() {
            continue;
        }
        labels[seed] = Some(next);
        queue.push_back(seed);
        while let Some(p) = queue.pop_front() {
            neighbors(p, &mut buf);
            for &q in &buf {
                if labels[q].is_none() {
                    labels[q] = Some(next);
                    if core[q] {
                        queue.push_back(q);
                    }
                }
            }
        }
        next += 1;
    }
    labels
}

/// A pullback cluster: member point ids (sorted) found inside one cover
/// element's preimage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cluster {
    pub element: usize,
    pub members: Vec<usize>,
}

/// Clusters in canonical order: by cover element, then smallest member.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClusterSet {
    pub clusters: Vec<Cluster>,
    /// Points that ended up in no cluster at all.
    pub noise: Vec<usize>,
}

impl ClusterSet {
    /// Sorts members and clusters into canonical order and recomputes noise
    /// for a cloud of `n_points`.
    pub fn canonical(mut clusters: Vec<Cluster>, n_points: usize) -> Self {
        for c in &mut clusters {
            c.members.sort_unstable();
            c.members.dedup();
        }
        clusters.retain(|c| !c.members.is_empty());
        clusters.sort_by(|a, b| (a.element, a.members[0]).cmp(&(b.element, b.members[0])));
        let mut covered = vec![false; n_points];
        for c in &clusters {
            for &m in &c.members {
                covered[m] = true;
            }
        }
        let noise = (0..n_points).filter(|&p| !covered[p]).collect();
        ClusterSet { clusters, noise }
    }
}

/// Runs DBSCAN inside every nonempty preimage.
pub fn cluster_preimages(
    points: &Matrix,
    preimages: &[Vec<usize>],
    eps: EpsRule,
    min_samples: usize,
) -> ClusterSet {
    let mut clusters = Vec::new();
    for (element, ids) in preimages.iter().enumerate() {
        if ids.is_empty() {
            continue;
        }
        let sub = points.select_rows(ids);
        let radius = eps.resolve(&sub);
        let labels = dbscan(&sub, radius, min_samples);
        let n_clusters = labels.iter().flatten().max().map_or(0, |m| m + 1);
        let mut groups = vec![Vec::new(); n_clusters];
        for (local, label) in labels.iter().enumerate() {
            if let Some(c) = label {
                groups[*c].push(ids[local]);
            }
        }
        clusters.extend(groups.into_iter().map(|members| Cluster { element, members }));
    }
    ClusterSet::canonical(clusters, points.rows())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vertex {
    pub id: usize,
    pub cover_element: usize,
    pub size: usize,
    pub members: Vec<usize>,
    /// Mean recorded step of the members, when the cloud carries tags.
    pub mean_step: Option<f64>,
    /// Most frequent neuron ids among the members (at most three, most
    /// frequent first, lower id on ties).
    pub dominant_neurons: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    /// Number of shared points.
    pub weight: usize,
}

/// The nerve of a cluster cover, truncated at dimension 1 or 2.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LearningGraph {
    pub vertices: Vec<Vertex>,
    /// Sorted by `(a, b)` with `a < b`.
    pub edges: Vec<Edge>,
    /// Sorted vertex triples with a common member.
    pub triangles: Vec<[usize; 3]>,
}

impl LearningGraph {
    pub fn degree(&self) -> Vec<usize> {
        let mut deg = vec![0; self.vertices.len()];
        for e in &self.edges {
            deg[e.a] += 1;
            deg[e.b] += 1;
        }
        deg
    }

    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.vertices.len()];
        for e in &self.edges {
            adj[e.a].push(e.b);
            adj[e.b].push(e.a);
        }
        adj
    }

    /// Connected components of the subgraph induced by `keep`, each sorted,
    /// ordered by smallest vertex.
    pub fn components_within(&self, keep: &[bool]) -> Vec<Vec<usize>> {
        let adj = self.adjacency();
        let mut seen = vec![false; self.vertices.len()];
        let mut comps = Vec::new();
        for start in 0..self.vertices.len() {
            if !keep[start] || seen[start] {
                continue;
            }
            seen[start] = true;
            let mut stack = vec![start];
            let mut comp = Vec::new();
            while let Some(v) = stack.pop() {
                comp.push(v);
                for &w in &adj[v] {
                    if keep[w] && !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
            comp.sort_unstable();
            comps.push(comp);
        }
        comps
    }

    pub fn components(&self) -> Vec<Vec<usize>> {
        self.components_within(&vec![true; self.vertices.len()])
    }

    /// Connected and with exactly `V - 1` edges.
    pub fn is_tree(&self) -> bool {
        !self.vertices.is_empty()
            && self.components().len() == 1
            && self.edges.len() + 1 == self.vertices.len()
    }

    /// Fills `mean_step` and `dominant_neurons` from per-point tags.
    pub fn annotate(&mut self, tags: &[PointTag]) {
        for v in &mut self.vertices {
            if v.members.is_empty() {
                continue;
            }
            let total: usize = v.members.iter().map(|&m| tags[m].step).sum();
            v.mean_step = Some(total as f64 / v.members.len() as f64);
            let mut hist: BTreeMap<usize, usize> = BTreeMap::new();
            for &m in &v.members {
                *hist.entry(tags[m].neuron).or_default() += 1;
            }
            let mut ranked: Vec<(usize, usize)> = hist.into_iter().collect();
            ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            v.dominant_neurons = ranked.into_iter().take(3).map(|(n, _)| n).collect();
        }
    }
}

/// Nerve of `clusters`: a vertex per cluster, an edge per pair sharing a
/// point (weighted by the number shared), and with `max_dim = 2` a triangle
/// per triple sharing a point.
pub fn nerve(clusters: &ClusterSet, max_dim: usize) -> Result<LearningGraph, MapperError> {
    if !(1..=2).contains(&max_dim) {
        return Err(MapperError::InvalidParameter(format!(
            "max_dim must be 1 or 2, got {max_dim}"
        )));
    }
    let vertices: Vec<Vertex> = clusters
        .clusters
        .iter()
        .enumerate()
        .map(|(id, c)| Vertex {
            id,
            cover_element: c.element,
            size: c.members.len(),
            members: c.members.clone(),
            mean_step: None,
            dominant_neurons: Vec::new(),
        })
        .collect();

    // Which clusters each point belongs to, in increasing vertex order.
    let mut incidence: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (v, c) in clusters.clusters.iter().enumerate() {
        for &m in &c.members {
            incidence.entry(m).or_default().push(v);
        }
    }

    let mut pair_counts: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut triangles: BTreeSet<[usize; 3]> = BTreeSet::new();
    for owners in incidence.values() {
        for i in 0..owners.len() {
            for j in (i + 1)..owners.len() {
                *pair_counts.entry((owners[i], owners[j])).or_default() += 1;
                if max_dim >= 2 {
                    for k in (j + 1)..owners.len() {
                        triangles.insert([owners[i], owners[j], owners[k]]);
                    }
                }
            }
        }
    }
    let edges = pair_counts
        .into_iter()
        .map(|((a, b), weight)| Edge { a, b, weight })
        .collect();
    Ok(LearningGraph {
        vertices,
        edges,
        triangles: triangles.into_iter().collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapperParams {
    pub filter: Filter,
    pub intervals: usize,
    pub overlap: f64,
    pub eps: EpsRule,
    pub min_samples: usize,
    pub max_dim: usize,
}

impl Default for MapperParams {
    fn default() -> Self {
        MapperParams {
            filter: Filter::L2,
            intervals: 30,
            overlap: 0.5,
            eps: EpsRule::default(),
            min_samples: 3,
            max_dim: 1,
        }
    }
}

impl MapperParams {
    pub fn validate(&self) -> Result<(), MapperError> {
        self.eps.validate()?;
        if self.min_samples == 0 {
            return Err(MapperError::InvalidParameter("min_samples must be at least 1".into()));
        }
        if !(1..=2).contains(&self.max_dim) {
            return Err(MapperError::InvalidParameter(format!(
                "max_dim must be 1 or 2, got {}",
                self.max_dim
            )));
        }
        if let Filter::Pca { k: 0, .. } = self.filter {
            return Err(MapperError::InvalidParameter("pca filter needs k >= 1".into()));
        }
        Ok(())
    }
}

/// Every intermediate product of one Mapper run.
#[derive(Debug, Clone)]
pub struct MapperRun {
    pub filter: FilterValues,
    pub cover: Cover,
    pub preimages: Vec<Vec<usize>>,
    pub clusters: ClusterSet,
    pub graph: LearningGraph,
}

pub fn mapper_run(
    points: &Matrix,
    tags: Option<&[PointTag]>,
    params: &MapperParams,
) -> Result<MapperRun, MapperError> {
    params.validate()?;
    if points.rows() == 0 {
        return Err(MapperError::EmptyCloud);
    }
    if let Some(t) = tags {
        if t.len() != points.rows() {
            return Err(MapperError::TagCount {
                points: points.rows(),
                tags: t.len(),
            });
        }
    }
    let filter = apply_filter(points, params.filter)?;
    let cover = build_cover(&filter, params.intervals, params.overlap)?;
    let preimages = cover.preimages(&filter);
    let clusters = cluster_preimages(points, &preimages, params.eps, params.min_samples);
    let mut graph = nerve(&clusters, params.max_dim)?;
    if let Some(t) = tags {
        graph.annotate(t);
    }
    Ok(MapperRun {
        filter,
        cover,
        preimages,
        clusters,
        graph,
    })
}

/// Filter → cover → per-preimage DBSCAN → nerve.
pub fn mapper_pipeline(
    points: &Matrix,
    tags: Option<&[PointTag]>,
    params: &MapperParams,
) -> Result<LearningGraph, MapperError> {
    Ok(mapper_run(points, tags, params)?.graph)
}
