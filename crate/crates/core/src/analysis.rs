//! Diagnostics derived from trajectories, training logs and learning graphs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, LinalgError};
use crate::mapper::LearningGraph;
use crate::nn::{TrainingLog, TrajectoryCloud};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(
        "no final-step point of the layer belongs to any graph vertex (all noise); \
         retune eps or min_samples"
    )]
    NoFinalPoints,
    #[error("graph vertices carry no member lists; rebuild the graph with members")]
    NoMembers,
    #[error("graph member {member} is outside the {points}-point cloud")]
    MemberOutOfRange { member: usize, points: usize },
    #[error("empty trajectory cloud")]
    EmptyCloud,
    #[error("class {class} out of range for {classes} classes")]
    ClassOutOfRange { class: usize, classes: usize },
    #[error("step {step} out of range for {steps} recorded steps")]
    StepOutOfRange { step: usize, steps: usize },
    #[error("cloud dimension {dim} is not {height}x{width}")]
    ImageShape {
        dim: usize,
        height: usize,
        width: usize,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Per-neuron weight norms over the recorded steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormSeries {
    /// `per_neuron[n][s]` is the norm of neuron `n` at step `s`.
    pub per_neuron: Vec<Vec<f64>>,
}

pub fn weight_norms(cloud: &TrajectoryCloud) -> NormSeries {
    let per_neuron = (0..cloud.neurons)
        .map(|n| {
            (0..cloud.steps)
                .map(|s| linalg::norm(cloud.point(s, n)))
                .collect()
        })
        .collect();
    NormSeries { per_neuron }
}

/// A permanent split of one neuron group into two.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchingEvent {
    pub step: usize,
    pub left: Vec<usize>,
    pub right: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchReport {
    pub final_branch_count: usize,
    /// Neuron ids per branch, each sorted, ordered by smallest id.
    pub branch_members: Vec<Vec<usize>>,
    pub branching_events: Vec<BranchingEvent>,
}

/// Counts the branches a layer ends training on.
///
/// A branch is a connected component of the subgraph induced by the
/// vertices that hold at least one final-step point. A final-step point
/// that DBSCAN left as noise everywhere is isolated from every cluster and
/// forms a branch of its own. `branching_events` is left empty; see
/// [`branching_times`].
pub fn branch_count(cloud: &TrajectoryCloud, graph: &LearningGraph) -> Result<BranchReport, AnalysisError> {
    if cloud.steps == 0 || cloud.neurons == 0 {
        return Err(AnalysisError::EmptyCloud);
    }
    if graph.vertices.iter().any(|v| v.members.is_empty() && v.size > 0) {
        return Err(AnalysisError::NoMembers);
    }
    let last = cloud.steps - 1;
    let first_final = cloud.index(last, 0);
    let mut keep = vec![false; graph.vertices.len()];
    let mut in_graph = vec![false; cloud.neurons];
    for (v, vertex) in graph.vertices.iter().enumerate() {
        for &m in &vertex.members {
            if m >= cloud.len() {
                return Err(AnalysisError::MemberOutOfRange {
                    member: m,
                    points: cloud.len(),
                });
            }
            if m >= first_final {
                keep[v] = true;
                in_graph[m - first_final] = true;
            }
        }
    }
    if !in_graph.iter().any(|&b| b) {
        return Err(AnalysisError::NoFinalPoints);
    }
    let mut branches: Vec<Vec<usize>> = graph
        .components_within(&keep)
        .into_iter()
        .map(|comp| {
            let mut neurons: Vec<usize> = comp
                .iter()
                .flat_map(|&v| graph.vertices[v].members.iter())
                .filter(|&&m| m >= first_final)
                .map(|&m| m - first_final)
                .collect();
            neurons.sort_unstable();
            neurons.dedup();
            neurons
        })
        .collect();
    branches.extend(
        in_graph
            .iter()
            .enumerate()
            .filter(|(_, &inside)| !inside)
            .map(|(n, _)| vec![n]),
    );
    branches.sort();
    Ok(BranchReport {
        final_branch_count: branches.len(),
        branch_members: branches,
        branching_events: Vec::new(),
    })
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n).collect())
    }

    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut c = x;
        while self.0[c] != r {
            let next = self.0[c];
            self.0[c] = r;
            c = next;
        }
        r
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // smaller root wins so labels are canonical
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.0[hi] = lo;
        }
    }

    /// Block label (= smallest member) per element.
    fn labels(&mut self) -> Vec<usize> {
        (0..self.0.len()).map(|i| self.find(i)).collect()
    }
}

/// Single-linkage blocks of the neurons at one step: neurons whose weight
/// vectors are within `tau` of each other, closed transitively.
pub fn single_linkage(cloud: &TrajectoryCloud, step: usize, tau: f64) -> Vec<usize> {
    let tau2 = tau * tau;
    let mut uf = UnionFind::new(cloud.neurons);
    for a in 0..cloud.neurons {
        for b in (a + 1)..cloud.neurons {
            if uf.find(a) != uf.find(b)
                && linalg::sq_dist(cloud.point(step, a), cloud.point(step, b)) <= tau2
            {
                uf.union(a, b);
            }
        }
    }
    uf.labels()
}

/// Steps at which groups of neurons separate for good.
///
/// Neurons `a` and `b` are "eventually together" from step `t` if they share
/// a single-linkage block (threshold `tau`) at some step `s >= t`. Those
/// relations form a partition that can only refine as `t` grows; each time a
/// block of step `t - 1` falls apart at step `t`, its pieces (ordered by
/// smallest neuron id) are split off one at a time, giving one event per
/// extra piece. Separations that later re-merge never produce an event.
pub fn branching_times(cloud: &TrajectoryCloud, tau: f64) -> Result<Vec<BranchingEvent>, AnalysisError> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(AnalysisError::InvalidParameter(format!("tau must be positive, got {tau}")));
    }
    if cloud.steps == 0 {
        return Ok(Vec::new());
    }
    let n = cloud.neurons;
    // eventual[t]: join of the single-linkage partitions of steps t..end.
    let mut eventual = vec![Vec::new(); cloud.steps];
    let mut uf = UnionFind::new(n);
    for t in (0..cloud.steps).rev() {
        let here = single_linkage(cloud, t, tau);
        for (a, &root) in here.iter().enumerate() {
            uf.union(a, root);
        }
        eventual[t] = uf.labels();
    }

    let mut events = Vec::new();
    for t in 1..cloud.steps {
        let (before, after) = (&eventual[t - 1], &eventual[t]);
        if before == after {
            continue;
        }
        let mut blocks: std::collections::BTreeMap<usize, std::collections::BTreeMap<usize, Vec<usize>>> =
            Default::default();
        for a in 0..n {
            blocks
                .entry(before[a])
                .or_default()
                .entry(after[a])
                .or_default()
                .push(a);
        }
        for pieces in blocks.into_values() {
            if pieces.len() < 2 {
                continue;
            }
            let pieces: Vec<Vec<usize>> = pieces.into_values().collect();
            let mut left = pieces[0].clone();
            for piece in &pieces[1..] {
                events.push(BranchingEvent {
                    step: t,
                    left: left.clone(),
                    right: piece.clone(),
                });
                left.extend_from_slice(piece);
                left.sort_unstable();
            }
        }
    }
    Ok(events)
}

/// Median over neurons and steps of the distance a neuron moves between
/// consecutive recorded steps.
pub fn median_step_displacement(cloud: &TrajectoryCloud) -> f64 {
    let mut d: Vec<f64> = (1..cloud.steps)
        .flat_map(|s| (0..cloud.neurons).map(move |n| (s, n)))
        .map(|(s, n)| linalg::dist(cloud.point(s, n), cloud.point(s - 1, n)))
        .collect();
    if d.is_empty() {
        return 0.0;
    }
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    *m
}

/// Five times the median step displacement, floored at the smallest
/// positive normal float so that a motionless cloud still yields a valid
/// threshold.
pub fn default_tau(cloud: &TrajectoryCloud) -> f64 {
    (5.0 * median_step_displacement(cloud)).max(f64::MIN_POSITIVE)
}

/// Predicted-class counts of one true class across snapshots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionSeries {
    pub true_class: usize,
    pub steps: Vec<usize>,
    /// `counts[i][p]`: images of `true_class` predicted as `p` at `steps[i]`.
    pub counts: Vec<Vec<u64>>,
}

/// Row `true_class` of every snapshot's confusion matrix, the untrained
/// state first when the log has one.
pub fn confusion_evolution(log: &TrainingLog, true_class: usize) -> Result<ConfusionSeries, AnalysisError> {
    if true_class >= log.num_classes {
        return Err(AnalysisError::ClassOutOfRange {
            class: true_class,
            classes: log.num_classes,
        });
    }
    let initial = log.initial.as_ref().map(|e| (0, &e.confusion));
    let rest = log.entries.iter().map(|e| (e.step, &e.confusion));
    let (steps, counts) = initial
        .into_iter()
        .chain(rest)
        .map(|(s, c)| (s, c[true_class].clone()))
        .unzip();
    Ok(ConfusionSeries {
        true_class,
        steps,
        counts,
    })
}

/// Difference images laid out as training time (rows) by lateral position
/// (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceImageGrid {
    pub height: usize,
    pub width: usize,
    pub steps: Vec<usize>,
    /// `images[row][col]`: row-major `height * width` pixels in [0, 1].
    pub images: Vec<Vec<Vec<f64>>>,
    /// Neuron order along the lateral axis, per row.
    pub neuron_order: Vec<Vec<usize>>,
}

/// Min-max scales `v` to [0, 1]; a constant vector maps to all zeros.
pub fn normalize_unit(v: &mut [f64]) {
    let (lo, hi) = v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let range = hi - lo;
    for x in v.iter_mut() {
        *x = if range > 0.0 { (*x - lo) / range } else { 0.0 };
    }
}

/// Coordinates on a learning surface.
///
/// A PCA basis is fit on the whole cloud (every `stride`-th point). For each
/// requested step, that step's neurons are sorted by their coordinate along
/// principal axis `lateral_axis` (neuron id breaks ties), and the weight
/// differences of laterally adjacent neurons (`next - previous`) become the
/// images, each min-max normalized on its own. A cloud with no variance at
/// all keeps neuron-id order.
pub fn surface_images(
    cloud: &TrajectoryCloud,
    steps: &[usize],
    lateral_axis: usize,
    height: usize,
    width: usize,
    stride: usize,
) -> Result<SurfaceImageGrid, AnalysisError> {
    if cloud.dim != height * width {
        return Err(AnalysisError::ImageShape {
            dim: cloud.dim,
            height,
            width,
        });
    }
    if lateral_axis >= cloud.dim {
        return Err(AnalysisError::InvalidParameter(format!(
            "lateral axis {lateral_axis} exceeds dimension {}",
            cloud.dim
        )));
    }
    if stride == 0 {
        return Err(AnalysisError::InvalidParameter("stride must be at least 1".into()));
    }
    if let Some(&step) = steps.iter().find(|&&s| s >= cloud.steps) {
        return Err(AnalysisError::StepOutOfRange {
            step,
            steps: cloud.steps,
        });
    }
    let fit_rows: Vec<usize> = (0..cloud.len()).step_by(stride).collect();
    let basis = match linalg::pca_fit(&cloud.points.select_rows(&fit_rows), lateral_axis + 1) {
        Ok(b) => Some(b),
        Err(LinalgError::ZeroVariance) | Err(LinalgError::TooFewPoints(_)) => None,
        Err(e) => return Err(e.into()),
    };

    let mut images = Vec::with_capacity(steps.len());
    let mut neuron_order = Vec::with_capacity(steps.len());
    for &step in steps {
        let mut order: Vec<(f64, usize)> = (0..cloud.neurons)
            .map(|n| {
                let coord = basis.as_ref().map_or(0.0, |b| {
                    let p = cloud.point(step, n);
                    let axis = b.components.row(lateral_axis);
                    p.iter()
                        .zip(&b.mean)
                        .zip(axis)
                        .map(|((x, m), c)| (x - m) * c)
                        .sum()
                });
                (coord, n)
            })
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let row: Vec<Vec<f64>> = order
            .windows(2)
            .map(|pair| {
                let prev = cloud.point(step, pair[0].1);
                let next = cloud.point(step, pair[1].1);
                let mut diff: Vec<f64> = next.iter().zip(prev).map(|(a, b)| a - b).collect();
                normalize_unit(&mut diff);
                diff
            })
            .collect();
        images.push(row);
        neuron_order.push(order.into_iter().map(|(_, n)| n).collect());
    }
    Ok(SurfaceImageGrid {
        height,
        width,
        steps: steps.to_vec(),
        images,
        neuron_order,
    })
}

/// Plain-text summary of a layer's trajectory for reports.
pub fn describe_layer(
    cloud: &TrajectoryCloud,
    report: &BranchReport,
    graph: &LearningGraph,
    tau: f64,
) -> String {
    let norms = weight_norms(cloud);
    let last = cloud.steps.saturating_sub(1);
    let final_norms: Vec<f64> = norms.per_neuron.iter().map(|s| s[last]).collect();
    let mean_final = final_norms.iter().sum::<f64>() / final_norms.len().max(1) as f64;
    let max_final = final_norms.iter().copied().fold(0.0, f64::max);
    let mut s = format!(
        "layer {}: {} neurons in {} dimensions over {} recorded steps\n",
        cloud.layer_index, cloud.neurons, cloud.dim, cloud.steps
    );
    s += &format!(
        "learning graph: {} vertices, {} edges, {} triangles, {} components{}\n",
        graph.vertices.len(),
        graph.edges.len(),
        graph.triangles.len(),
        graph.components().len(),
        if graph.is_tree() { " (a tree)" } else { "" }
    );
    s += &format!(
        "final branches: {} (of {} neurons)\n",
        report.final_branch_count, cloud.neurons
    );
    s += &format!(
        "permanent separations at threshold {tau:.3e}: {}",
        report.branching_events.len()
    );
    if let (Some(first), Some(last_ev)) = (report.branching_events.first(), report.branching_events.last()) {
        s += &format!(" (first at step {}, last at step {})", first.step, last_ev.step);
    }
    s += "\n";
    s += &format!("final weight norms: mean {mean_final:.4}, max {max_final:.4}\n");
    s
}
