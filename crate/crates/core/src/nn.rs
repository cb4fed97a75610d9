//! Bias-free fully connected networks, trained by minibatch SGD while the
//! incoming weight vector of every neuron is recorded at a fixed cadence.
//!
//! Hidden layers use the logistic sigmoid, the output layer a softmax, and
//! the loss is the batch-mean cross-entropy. `weights[i]` is stored as an
//! `N_{i+1} x N_i` matrix, so row `j` is the incoming weight vector of
//! neuron `j` in layer `i + 1`; those rows are the recorded trajectory points.

use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{LabeledImages, PointCloud, PointTag};
use crate::linalg::{gemm_acc, LinalgError, Matrix};
use crate::rng::{self, Stream};

/// Probability floor used when the true class gets exactly zero mass.
pub const PROB_FLOOR: f64 = 1e-300;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("invalid init scheme: {0}")]
    InvalidInit(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("batch has {got} columns, network expects {expected}")]
    InputWidth { expected: usize, got: usize },
    #[error("{labels} labels for a batch of {rows}")]
    LabelCount { rows: usize, labels: usize },
    #[error("label {label} out of range for {classes} output classes")]
    LabelRange { label: usize, classes: usize },
    #[error("gradient shapes do not match the network")]
    GradientShape,
    #[error("data does not match the network: {0}")]
    DataMismatch(String),
    #[error("training diverged at minibatch {minibatch}: loss {loss}")]
    Diverged {
        minibatch: usize,
        loss: f64,
        /// Network and recordings as they stood just before the failing update.
        diagnostic: Box<TrainOutcome>,
    },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// `[N_0, N_1, ..., N_L]`: input width, hidden widths, class count.
    pub layer_sizes: Vec<usize>,
}

impl NetworkSpec {
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self, NnError> {
        let spec = NetworkSpec { layer_sizes };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.layer_sizes.len() < 2 {
            return Err(NnError::InvalidSpec(format!(
                "need at least input and output sizes, got {:?}",
                self.layer_sizes
            )));
        }
        if self.layer_sizes.contains(&0) {
            return Err(NnError::InvalidSpec(format!(
                "layer sizes must be positive, got {:?}",
                self.layer_sizes
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// Number of weight matrices.
    pub fn depth(&self) -> usize {
        self.layer_sizes.len() - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitKind {
    Zero,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitScheme {
    pub kind: InitKind,
    pub mu: f64,
    pub sigma: f64,
    /// Standard deviation of i.i.d. normal noise added after the base init.
    pub jitter_sigma: f64,
}

impl InitScheme {
    pub fn zero() -> Self {
        InitScheme {
            kind: InitKind::Zero,
            mu: 0.0,
            sigma: 0.0,
            jitter_sigma: 0.0,
        }
    }

    pub fn normal(mu: f64, sigma: f64) -> Self {
        InitScheme {
            kind: InitKind::Normal,
            mu,
            sigma,
            jitter_sigma: 0.0,
        }
    }

    pub fn with_jitter(mut self, jitter_sigma: f64) -> Self {
        self.jitter_sigma = jitter_sigma;
        self
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let finite = self.mu.is_finite() && self.sigma.is_finite() && self.jitter_sigma.is_finite();
        if !finite || self.sigma < 0.0 || self.jitter_sigma < 0.0 {
            return Err(NnError::InvalidInit(format!("{self:?}")));
        }
        if self.kind == InitKind::Zero && (self.mu != 0.0 || self.sigma != 0.0) {
            return Err(NnError::InvalidInit(
                "zero init requires mu = sigma = 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub spec: NetworkSpec,
    pub weights: Vec<Matrix>,
}

/// Builds a network from `scheme`.
///
/// Normal weights are drawn layer by layer in row-major order from the init
/// stream of `seed`; jitter comes from a separate stream in the same order.
pub fn init_network(spec: &NetworkSpec, scheme: &InitScheme, seed: u64) -> Result<Network, NnError> {
    spec.validate()?;
    scheme.validate()?;
    let mut init_rng = rng::stream(seed, Stream::Init);
    let mut jitter_rng = rng::stream(seed, Stream::Jitter);
    let normal = match scheme.kind {
        InitKind::Normal => Some(
            Normal::new(scheme.mu, scheme.sigma)
                .map_err(|e| NnError::InvalidInit(e.to_string()))?,
        ),
        InitKind::Zero => None,
    };
    let weights = spec
        .layer_sizes
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let mut m = Matrix::zeros(fan_out, fan_in);
            for v in m.as_mut_slice() {
                if let Some(n) = &normal {
                    *v = n.sample(&mut init_rng);
                }
                if scheme.jitter_sigma > 0.0 {
                    let z: f64 = StandardNormal.sample(&mut jitter_rng);
                    *v += scheme.jitter_sigma * z;
                }
            }
            m
        })
        .collect();
    Ok(Network {
        spec: spec.clone(),
        weights,
    })
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &mut Matrix) {
    for r in 0..logits.rows() {
        let row = logits.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

impl Network {
    /// Activations of every layer after the input: hidden sigmoids, then the
    /// softmax output.
    pub fn forward(&self, batch: &Matrix) -> Result<Vec<Matrix>, NnError> {
        let mut acts = self.forward_from(batch)?;
        acts.remove(0);
        Ok(acts)
    }

    /// Output probabilities only.
    pub fn predict(&self, batch: &Matrix) -> Result<Matrix, NnError> {
        Ok(self.forward(batch)?.pop().unwrap())
    }

    // Includes the input itself at index 0.
    fn forward_from(&self, batch: &Matrix) -> Result<Vec<Matrix>, NnError> {
        if batch.cols() != self.spec.input_dim() {
            return Err(NnError::InputWidth {
                expected: self.spec.input_dim(),
                got: batch.cols(),
            });
        }
        let depth = self.weights.len();
        let mut acts = Vec::with_capacity(depth + 1);
        acts.push(batch.clone());
        for (l, w) in self.weights.iter().enumerate() {
            let input = &acts[l];
            let wt = w.transpose();
            let mut z = Matrix::zeros(input.rows(), w.rows());
            gemm_acc(
                input.as_slice(),
                input.rows(),
                input.cols(),
                wt.as_slice(),
                wt.cols(),
                z.as_mut_slice(),
            );
            if l + 1 == depth {
                softmax_rows(&mut z);
            } else {
                for v in z.as_mut_slice() {
                    *v = sigmoid(*v);
                }
            }
            acts.push(z);
        }
        Ok(acts)
    }

    /// Batch-mean cross-entropy and its exact gradient with respect to every
    /// weight matrix.
    pub fn loss_and_grad(&self, batch: &Matrix, labels: &[usize]) -> Result<LossGrad, NnError> {
        if labels.len() != batch.rows() {
            return Err(NnError::LabelCount {
                rows: batch.rows(),
                labels: labels.len(),
            });
        }
        let classes = self.spec.num_classes();
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(NnError::LabelRange { label, classes });
        }
        let acts = self.forward_from(batch)?;
        let b = batch.rows();
        let inv_b = 1.0 / b as f64;
        let probs = acts.last().unwrap();

        let mut loss = 0.0;
        let mut clamped = 0;
        for (r, &y) in labels.iter().enumerate() {
            let mut p = probs[(r, y)];
            if p < PROB_FLOOR {
                p = PROB_FLOOR;
                clamped += 1;
            }
            loss -= p.ln();
        }
        loss *= inv_b;

        // Output delta of softmax + cross-entropy: (p - onehot) / B.
        let mut delta = probs.clone();
        for (r, &y) in labels.iter().enumerate() {
            delta[(r, y)] -= 1.0;
        }
        for v in delta.as_mut_slice() {
            *v *= inv_b;
        }

        let depth = self.weights.len();
        let mut grads = vec![Matrix::zeros(0, 0); depth];
        for l in (0..depth).rev() {
            let input = &acts[l];
            let w = &self.weights[l];
            // grad_l = deltaᵀ · input, built as (inputᵀ · delta)ᵀ so the
            // sparse input drives the skipped products.
            let input_t = input.transpose();
            let mut gt = Matrix::zeros(w.cols(), w.rows());
            gemm_acc(
                input_t.as_slice(),
                input_t.rows(),
                input_t.cols(),
                delta.as_slice(),
                delta.cols(),
                gt.as_mut_slice(),
            );
            grads[l] = gt.transpose();
            if l > 0 {
                let mut back = Matrix::zeros(b, w.cols());
                gemm_acc(
                    delta.as_slice(),
                    b,
                    w.rows(),
                    w.as_slice(),
                    w.cols(),
                    back.as_mut_slice(),
                );
                for (d, &a) in back.as_mut_slice().iter_mut().zip(input.as_slice()) {
                    *d *= a * (1.0 - a);
                }
                delta = back;
            }
        }
        Ok(LossGrad {
            loss,
            grads,
            clamped,
        })
    }

    /// `W ← W − η·G` for every layer.
    pub fn sgd_step(&mut self, grads: &[Matrix], learning_rate: f64) -> Result<(), NnError> {
        if grads.len() != self.weights.len()
            || grads
                .iter()
                .zip(&self.weights)
                .any(|(g, w)| g.shape() != w.shape())
        {
            return Err(NnError::GradientShape);
        }
        for (w, g) in self.weights.iter_mut().zip(grads) {
            for (wv, gv) in w.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *wv -= learning_rate * gv;
            }
        }
        Ok(())
    }

    /// Classifies `data` (argmax, lowest index on ties) in fixed-size chunks.
    pub fn evaluate(&self, data: &LabeledImages) -> Result<Evaluation, NnError> {
        const CHUNK: usize = 500;
        let classes = self.spec.num_classes();
        if data.images.dim() != self.spec.input_dim() {
            return Err(NnError::DataMismatch(format!(
                "images have {} features, network expects {}",
                data.images.dim(),
                self.spec.input_dim()
            )));
        }
        if data.labels.num_classes() > classes {
            return Err(NnError::DataMismatch(format!(
                "labels use {} classes, network has {} outputs",
                data.labels.num_classes(),
                classes
            )));
        }
        let mut confusion = vec![vec![0u64; classes]; classes];
        let mut loss = 0.0;
        let labels = data.labels.labels();
        let mut start = 0;
        while start < data.len() {
            let end = (start + CHUNK).min(data.len());
            let idx: Vec<usize> = (start..end).collect();
            let probs = self.predict(&data.images.to_matrix(&idx))?;
            for (r, &i) in idx.iter().enumerate() {
                let pred = argmax(probs.row(r));
                confusion[labels[i]][pred] += 1;
                loss -= probs[(r, labels[i])].max(PROB_FLOOR).ln();
            }
            start = end;
        }
        let correct: u64 = (0..classes).map(|c| confusion[c][c]).sum();
        let n = data.len().max(1) as f64;
        Ok(Evaluation {
            accuracy: correct as f64 / n,
            loss: loss / n,
            confusion,
        })
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    pub grads: Vec<Matrix>,
    /// Samples whose true-class probability had to be floored at
    /// [`PROB_FLOOR`]; nonzero means the run is diverging.
    pub clamped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Minibatches between recorded steps.
    pub snapshot_every: usize,
    pub seed: u64,
    /// Train on the first `n` training images only.
    pub subset_size: Option<usize>,
    /// Evaluate on the first `n` test images only.
    pub test_subset_size: Option<usize>,
    /// Reshuffle the training order every epoch; off means fixed file order.
    pub shuffle: bool,
    /// Record the untrained weights as step 0.
    pub record_initial: bool,
    /// Weight matrices to record; `None` records all of them.
    pub record_layers: Option<Vec<usize>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.5,
            batch_size: 64,
            epochs: 50,
            snapshot_every: 10,
            seed: 0,
            subset_size: None,
            test_subset_size: None,
            shuffle: true,
            record_initial: true,
            record_layers: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(NnError::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(NnError::InvalidConfig("batch_size must be at least 1".into()));
        }
        if self.snapshot_every == 0 {
            return Err(NnError::InvalidConfig(
                "snapshot_every must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Recorded weight vectors of one layer: `steps * neurons` points of
/// dimension `dim`, step-major and neuron-minor.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryCloud {
    /// Index of the weight matrix (0 = input → first hidden layer).
    pub layer_index: usize,
    pub steps: usize,
    pub neurons: usize,
    pub dim: usize,
    pub points: Matrix,
}

impl TrajectoryCloud {
    pub fn new(
        layer_index: usize,
        steps: usize,
        neurons: usize,
        dim: usize,
        data: Vec<f64>,
    ) -> Result<Self, NnError> {
        let points = Matrix::from_vec(steps * neurons, dim, data)?;
        Ok(TrajectoryCloud {
            layer_index,
            steps,
            neurons,
            dim,
            points,
        })
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, step: usize, neuron: usize) -> usize {
        step * self.neurons + neuron
    }

    pub fn point(&self, step: usize, neuron: usize) -> &[f64] {
        self.points.row(self.index(step, neuron))
    }

    pub fn tag(&self, index: usize) -> PointTag {
        PointTag {
            step: index / self.neurons,
            neuron: index % self.neurons,
        }
    }

    pub fn tags(&self) -> Vec<PointTag> {
        (0..self.len()).map(|i| self.tag(i)).collect()
    }

    /// All neurons at one step, as a `neurons x dim` matrix.
    pub fn step_matrix(&self, step: usize) -> Matrix {
        let idx: Vec<usize> = (0..self.neurons).map(|n| self.index(step, n)).collect();
        self.points.select_rows(&idx)
    }

    pub fn to_point_cloud(&self) -> PointCloud {
        PointCloud {
            coords: self.points.clone(),
            tags: Some(self.tags()),
        }
    }

    /// Reads a tagged cloud back as trajectories. Tags must enumerate a full
    /// step-major, neuron-minor grid.
    pub fn from_point_cloud(cloud: &PointCloud, layer_index: usize) -> Result<Self, NnError> {
        let tags = cloud
            .tags
            .as_ref()
            .ok_or_else(|| NnError::DataMismatch("point cloud has no step tags".into()))?;
        let neurons = tags.iter().map(|t| t.neuron + 1).max().unwrap_or(0);
        let steps = tags.iter().map(|t| t.step + 1).max().unwrap_or(0);
        let grid_ok = tags.len() == steps * neurons
            && tags
                .iter()
                .enumerate()
                .all(|(i, t)| t.step == i / neurons && t.neuron == i % neurons);
        if !grid_ok {
            return Err(NnError::DataMismatch(
                "tags are not a step-major, neuron-minor grid".into(),
            ));
        }
        Ok(TrajectoryCloud {
            layer_index,
            steps,
            neurons,
            dim: cloud.dim(),
            points: cloud.coords.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    /// Index of the matching step in the trajectory clouds.
    pub step: usize,
    /// Minibatches completed when the snapshot was taken.
    pub minibatch: usize,
    /// Mean minibatch loss since the previous snapshot.
    pub train_loss: f64,
    pub test_accuracy: f64,
    pub confusion: Vec<Vec<u64>>,
    /// Floored true-class probabilities since the previous snapshot.
    pub clamped: usize,
}

/// One entry per snapshot taken during training. The untrained state
/// (step 0 when `record_initial` is set) is kept separately in `initial`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingLog {
    pub num_classes: usize,
    /// Test images per true class.
    pub class_counts: Vec<usize>,
    pub initial: Option<Evaluation>,
    pub entries: Vec<LogEntry>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: Network,
    pub log: TrainingLog,
    pub clouds: Vec<TrajectoryCloud>,
}

struct Recorder {
    layers: Vec<usize>,
    buffers: Vec<Vec<f64>>,
    steps: usize,
}

impl Recorder {
    fn new(layers: Vec<usize>) -> Self {
        let buffers = layers.iter().map(|_| Vec::new()).collect();
        Recorder {
            layers,
            buffers,
            steps: 0,
        }
    }

    fn record(&mut self, net: &Network) {
        for (buf, &l) in self.buffers.iter_mut().zip(&self.layers) {
            buf.extend_from_slice(net.weights[l].as_slice());
        }
        self.steps += 1;
    }

    fn clouds(&self, net: &Network) -> Vec<TrajectoryCloud> {
        self.layers
            .iter()
            .zip(&self.buffers)
            .map(|(&l, buf)| {
                let w = &net.weights[l];
                TrajectoryCloud {
                    layer_index: l,
                    steps: self.steps,
                    neurons: w.rows(),
                    dim: w.cols(),
                    points: Matrix::from_vec(self.steps * w.rows(), w.cols(), buf.clone())
                        .expect("recorded weights are finite"),
                }
            })
            .collect()
    }
}

/// Trains `net` with minibatch SGD and records its weights.
///
/// Each epoch visits the first `subset_size` training images in `batch_size`
/// chunks (a trailing partial chunk is dropped), shuffled by Fisher–Yates
/// from the seed's shuffle stream unless `shuffle` is off. Every
/// `snapshot_every` minibatches the weights of each recorded layer are
/// appended to its cloud and the network is evaluated on the test set.
pub fn train(
    net: Network,
    train_data: &LabeledImages,
    test_data: &LabeledImages,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, NnError> {
    train_with_observer(net, train_data, test_data, cfg, |_| {})
}

pub fn train_with_observer<F: FnMut(&LogEntry)>(
    mut net: Network,
    train_data: &LabeledImages,
    test_data: &LabeledImages,
    cfg: &TrainConfig,
    mut observer: F,
) -> Result<TrainOutcome, NnError> {
    cfg.validate()?;
    net.spec.validate()?;
    let classes = net.spec.num_classes();
    for (name, data) in [("training", train_data), ("test", test_data)] {
        if data.images.dim() != net.spec.input_dim() {
            return Err(NnError::DataMismatch(format!(
                "{name} images have {} features, network expects {}",
                data.images.dim(),
                net.spec.input_dim()
            )));
        }
        if data.labels.num_classes() > classes {
            return Err(NnError::DataMismatch(format!(
                "{name} labels use {} classes, network has {classes} outputs",
                data.labels.num_classes()
            )));
        }
    }
    let layers = match &cfg.record_layers {
        Some(ls) => {
            if let Some(&bad) = ls.iter().find(|&&l| l >= net.weights.len()) {
                return Err(NnError::InvalidConfig(format!(
                    "record layer {bad} does not exist (network has {} weight matrices)",
                    net.weights.len()
                )));
            }
            ls.clone()
        }
        None => (0..net.weights.len()).collect(),
    };

    let n_train = cfg.subset_size.map_or(train_data.len(), |n| n.min(train_data.len()));
    let test = match cfg.test_subset_size {
        Some(n) if n < test_data.len() => test_data.truncated(n),
        _ => test_data.clone(),
    };
    let mut test_labels = test.labels.labels().to_vec();
    test_labels.truncate(test.len());
    let mut class_counts = vec![0usize; classes];
    for &l in &test_labels {
        class_counts[l] += 1;
    }

    let mut recorder = Recorder::new(layers);
    let mut log = TrainingLog {
        num_classes: classes,
        class_counts,
        initial: None,
        entries: Vec::new(),
    };
    if cfg.record_initial {
        recorder.record(&net);
        log.initial = Some(net.evaluate(&test)?);
    }

    let batches_per_epoch = n_train / cfg.batch_size;
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut shuffle_rng = rng::stream(cfg.seed, Stream::Shuffle);
    let labels = train_data.labels.labels();
    let mut minibatch = 0usize;
    let mut window_loss = 0.0;
    let mut window_batches = 0usize;
    let mut window_clamped = 0usize;
    let mut batch_labels = Vec::with_capacity(cfg.batch_size);

    for _epoch in 0..cfg.epochs {
        if cfg.shuffle {
            rng::shuffle(&mut order, &mut shuffle_rng);
        }
        for chunk in order.chunks_exact(cfg.batch_size).take(batches_per_epoch) {
            let x = train_data.images.to_matrix(chunk);
            batch_labels.clear();
            batch_labels.extend(chunk.iter().map(|&i| labels[i]));
            let lg = net.loss_and_grad(&x, &batch_labels)?;
            if !lg.loss.is_finite() || lg.grads.iter().any(|g| !g.is_finite()) {
                return Err(NnError::Diverged {
                    minibatch,
                    loss: lg.loss,
                    diagnostic: Box::new(TrainOutcome {
                        clouds: recorder.clouds(&net),
                        network: net,
                        log,
                    }),
                });
            }
            net.sgd_step(&lg.grads, cfg.learning_rate)?;
            minibatch += 1;
            window_loss += lg.loss;
            window_batches += 1;
            window_clamped += lg.clamped;

            if minibatch.is_multiple_of(cfg.snapshot_every) {
                let eval = net.evaluate(&test)?;
                let entry = LogEntry {
                    step: recorder.steps,
                    minibatch,
                    train_loss: window_loss / window_batches as f64,
                    test_accuracy: eval.accuracy,
                    confusion: eval.confusion,
                    clamped: window_clamped,
                };
                recorder.record(&net);
                observer(&entry);
                log.entries.push(entry);
                window_loss = 0.0;
                window_batches = 0;
                window_clamped = 0;
            }
        }
    }

    Ok(TrainOutcome {
        clouds: recorder.clouds(&net),
        network: net,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ImageSet, LabelSet};

    fn net_from(sizes: &[usize], weights: Vec<Vec<f64>>) -> Network {
        let spec = NetworkSpec::new(sizes.to_vec()).unwrap();
        let weights = sizes
            .windows(2)
            .zip(weights)
            .map(|(w, data)| Matrix::from_vec(w[1], w[0], data).unwrap())
            .collect();
        Network { spec, weights }
    }

    #[test]
    fn zero_network_is_uniform() {
        let spec = NetworkSpec::new(vec![6, 4, 10]).unwrap();
        let net = init_network(&spec, &InitScheme::zero(), 1).unwrap();
        assert!(net.weights.iter().all(|w| w.as_slice().iter().all(|v| v.to_bits() == 0)));
        let x = Matrix::from_vec(2, 6, vec![0.3, 1.0, 0.0, 0.2, 0.9, 0.5, 1.0, 1.0, 1.0, 0.0, 0.0, 0.1]).unwrap();
        let acts = net.forward(&x).unwrap();
        assert!(acts[0].as_slice().iter().all(|&a| a == 0.5));
        assert!(acts[1].as_slice().iter().all(|&p| p == 0.1));
        let lg = net.loss_and_grad(&x, &[3, 7]).unwrap();
        assert!((lg.loss - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn single_class_softmax_is_one() {
        let net = net_from(&[1, 1], vec![vec![1.0]]);
        let p = net.predict(&Matrix::from_vec(1, 1, vec![0.0]).unwrap()).unwrap();
        assert_eq!(p[(0, 0)], 1.0);
    }

    #[test]
    fn softmax_large_logits() {
        let mut logits = Matrix::from_vec(1, 2, vec![1000.0, 0.0]).unwrap();
        softmax_rows(&mut logits);
        assert_eq!(logits[(0, 0)], 1.0);
        // exact value is e^-1000 / (1 + e^-1000), which underflows to e^-1000
        assert_eq!(logits[(0, 1)], (-1000f64).exp());
        assert!(logits.is_finite());
    }

    #[test]
    fn duplicated_rows_do_not_change_mean_loss() {
        let spec = NetworkSpec::new(vec![3, 4, 3]).unwrap();
        let net = init_network(&spec, &InitScheme::normal(0.0, 0.7), 5).unwrap();
        let x1 = Matrix::from_vec(1, 3, vec![0.2, -0.4, 1.1]).unwrap();
        let x2 = Matrix::from_vec(2, 3, vec![0.2, -0.4, 1.1, 0.2, -0.4, 1.1]).unwrap();
        let a = net.loss_and_grad(&x1, &[2]).unwrap();
        let b = net.loss_and_grad(&x2, &[2, 2]).unwrap();
        assert!((a.loss - b.loss).abs() < 1e-15);
        for (ga, gb) in a.grads.iter().zip(&b.grads) {
            assert!(ga.max_abs_diff(gb) < 1e-15);
        }
    }

    #[test]
    fn zero_probability_is_clamped() {
        let net = net_from(&[1, 2], vec![vec![2000.0, 0.0]]);
        let x = Matrix::from_vec(1, 1, vec![1.0]).unwrap();
        let lg = net.loss_and_grad(&x, &[1]).unwrap();
        assert_eq!(lg.clamped, 1);
        assert!((lg.loss + PROB_FLOOR.ln()).abs() < 1e-9);
    }

    #[test]
    fn sgd_step_arithmetic() {
        let mut net = net_from(&[2, 2], vec![vec![0.0; 4]]);
        let g = vec![Matrix::filled(2, 2, 1.0)];
        net.sgd_step(&g, 0.5).unwrap();
        assert!(net.weights[0].as_slice().iter().all(|&v| v == -0.5));

        let spec = NetworkSpec::new(vec![3, 2]).unwrap();
        let orig = init_network(&spec, &InitScheme::normal(0.0, 1.0), 2).unwrap();
        let mut n = orig.clone();
        n.sgd_step(&[Matrix::filled(2, 3, 0.3)], 0.0).unwrap();
        assert_eq!(n, orig);
        let g = Matrix::from_vec(2, 3, vec![0.1, -0.2, 0.3, 0.4, 0.5, -0.6]).unwrap();
        n.sgd_step(std::slice::from_ref(&g), 0.7).unwrap();
        n.sgd_step(&[g.scale(-1.0)], 0.7).unwrap();
        assert!(n.weights[0].max_abs_diff(&orig.weights[0]) < 1e-15);

        assert!(matches!(
            n.sgd_step(&[Matrix::zeros(3, 2)], 0.1),
            Err(NnError::GradientShape)
        ));
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let net = net_from(&[2, 2], vec![vec![0.0; 4]]);
        assert!(matches!(
            net.forward(&Matrix::zeros(1, 3)),
            Err(NnError::InputWidth { expected: 2, got: 3 })
        ));
    }

    #[test]
    fn normal_init_statistics() {
        let spec = NetworkSpec::new(vec![784, 100]).unwrap();
        let net = init_network(&spec, &InitScheme::normal(0.0, 1e-6), 42).unwrap();
        let w = net.weights[0].as_slice();
        assert_eq!(w.len(), 78_400);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (w.len() - 1) as f64;
        assert!(mean.abs() < 5e-8, "{mean}");
        assert!((var.sqrt() - 1e-6).abs() < 1e-7, "{}", var.sqrt());
        let again = init_network(&spec, &InitScheme::normal(0.0, 1e-6), 42).unwrap();
        assert_eq!(net, again);
    }

    #[test]
    fn init_validation() {
        let mut s = InitScheme::zero();
        s.sigma = 1.0;
        assert!(s.validate().is_err());
        assert!(InitScheme::normal(0.0, -1.0).validate().is_err());
        assert!(NetworkSpec::new(vec![3]).is_err());
        assert!(NetworkSpec::new(vec![3, 0]).is_err());
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[0.1, 0.4, 0.4, 0.1]), 1);
        assert_eq!(argmax(&[0.25; 4]), 0);
    }

    fn toy_data(n: usize, dim: usize, classes: usize, seed: u8) -> LabeledImages {
        let bytes: Vec<u8> = (0..n * dim)
            .map(|i| ((i as u32 * 37 + seed as u32 * 11) % 256) as u8)
            .collect();
        let labels = (0..n).map(|i| (i * 7 + seed as usize) % classes).collect();
        LabeledImages::new(
            ImageSet::from_bytes(n, 1, dim, bytes).unwrap(),
            LabelSet::new(labels, classes).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn zero_network_predicts_class_zero() {
        let spec = NetworkSpec::new(vec![4, 3, 3]).unwrap();
        let net = init_network(&spec, &InitScheme::zero(), 0).unwrap();
        let data = toy_data(30, 4, 3, 1);
        let eval = net.evaluate(&data).unwrap();
        let counts = data.labels.class_counts();
        for (t, row) in eval.confusion.iter().enumerate() {
            assert_eq!(row[0] as usize, counts[t]);
            assert_eq!(row.iter().sum::<u64>() as usize, counts[t]);
        }
        assert_eq!(eval.accuracy, counts[0] as f64 / 30.0);
    }

    #[test]
    fn snapshot_cadence() {
        let spec = NetworkSpec::new(vec![4, 3, 3]).unwrap();
        let net = init_network(&spec, &InitScheme::normal(0.0, 0.1), 0).unwrap();
        let data = toy_data(40, 4, 3, 2);
        let cfg = TrainConfig {
            batch_size: 8,
            epochs: 2,
            snapshot_every: 10,
            ..TrainConfig::default()
        };
        let out = train(net.clone(), &data, &data, &cfg).unwrap();
        assert_eq!(out.log.entries.len(), 1);
        assert_eq!(out.log.entries[0].minibatch, 10);
        assert_eq!(out.log.entries[0].step, 1);
        for c in &out.clouds {
            assert_eq!(c.steps, 2);
            assert_eq!(c.len(), 2 * c.neurons);
        }
        assert_eq!(out.clouds[0].step_matrix(0), net.weights[0]);
        assert_eq!(out.clouds[1].step_matrix(1), out.network.weights[1]);

        let none = train(
            net,
            &data,
            &data,
            &TrainConfig {
                epochs: 0,
                ..cfg.clone()
            },
        )
        .unwrap();
        assert!(none.log.entries.is_empty());
        assert_eq!(none.clouds[0].steps, 1);
    }

    #[test]
    fn trajectory_cloud_grid_round_trip() {
        let c = TrajectoryCloud::new(1, 3, 2, 2, (0..12).map(f64::from).collect()).unwrap();
        assert_eq!(c.point(2, 1), &[10.0, 11.0]);
        let back = TrajectoryCloud::from_point_cloud(&c.to_point_cloud(), 1).unwrap();
        assert_eq!(back, c);
    }
}
