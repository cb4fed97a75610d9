//! Command implementations behind the `weightscope` binary.
//!
//! Every command writes its outputs atomically (temp file, then rename) and
//! reports failures as [`CliError`], which maps onto the process exit code.

use std::fs::{self, File};
use std::io::{self, BufReader, Read};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

use weightscope::analysis::{self, BranchReport, BranchingEvent};
use weightscope::dataset::{self, LabeledImages};
use weightscope::export;
use weightscope::mapper::{self, EpsRule, Filter, LearningGraph, MapperParams};
use weightscope::nn::{self, NnError, TrainOutcome, TrajectoryCloud};
use weightscope::snapshot;

pub mod config;

pub use config::RunConfig;

pub const SNAPSHOTS_FILE: &str = "snapshots.wtrj";
pub const LOG_FILE: &str = "log.csv";
pub const CONFUSION_FILE: &str = "confusion.csv";
pub const META_FILE: &str = "meta.json";

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags or configuration. Exit code 1.
    #[error("{0}")]
    Usage(String),
    /// Unreadable, corrupt or unsuitable input data. Exit code 2.
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

macro_rules! data_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Data(e.to_string())
            }
        }
    )*};
}

data_error!(
    io::Error,
    dataset::DatasetError,
    snapshot::SnapshotError,
    mapper::MapperError,
    analysis::AnalysisError,
    export::FormatError,
    serde_json::Error
);

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::InvalidSpec(_) | NnError::InvalidInit(_) | NnError::InvalidConfig(_) => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

fn with_path<E: std::fmt::Display>(path: &Path) -> impl FnOnce(E) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", path.display()))
}

/// Writes `bytes` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(with_path(dir))?;
    let name = path
        .file_name()
        .ok_or_else(|| CliError::Usage(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    fs::write(&tmp, bytes).map_err(with_path(&tmp))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        CliError::Data(format!("{}: {e}", path.display()))
    })
}

/// Opens a file for reading, gunzipping it when the name ends in `.gz`.
pub fn open_maybe_gz(path: &Path) -> Result<Box<dyn Read>, CliError> {
    let f = File::open(path).map_err(with_path(path))?;
    let r = BufReader::new(f);
    if path.extension().is_some_and(|e| e == "gz") {
        Ok(Box::new(flate2::read::GzDecoder::new(r)))
    } else {
        Ok(Box::new(r))
    }
}

pub fn load_labeled(images: &Path, labels: &Path, num_classes: usize) -> Result<LabeledImages, CliError> {
    let imgs = dataset::load_idx_images(open_maybe_gz(images)?).map_err(with_path(images))?;
    let labs = dataset::load_idx_labels(open_maybe_gz(labels)?, Some(num_classes)).map_err(with_path(labels))?;
    Ok(LabeledImages::new(imgs, labs)?)
}

pub fn read_snapshots(path: &Path) -> Result<Vec<TrajectoryCloud>, CliError> {
    let bytes = fs::read(path).map_err(with_path(path))?;
    snapshot::decode(&bytes).map_err(with_path(path))
}

pub fn read_layer(path: &Path, layer: usize) -> Result<TrajectoryCloud, CliError> {
    let layers = read_snapshots(path)?;
    let available: Vec<usize> = layers.iter().map(|l| l.layer_index).collect();
    let cloud = layers
        .into_iter()
        .find(|l| l.layer_index == layer)
        .ok_or_else(|| {
            CliError::Data(format!(
                "{}: no layer {layer} (file has {available:?})",
                path.display()
            ))
        })?;
    if cloud.is_empty() {
        return Err(CliError::Data(format!("{}: layer {layer} is empty", path.display())));
    }
    Ok(cloud)
}

#[derive(Debug, Serialize)]
struct Meta<'a> {
    weightscope_version: &'a str,
    seed: u64,
    config: &'a RunConfig,
    pixel_scaling: &'a str,
    train_images_used: usize,
    test_images_used: usize,
    minibatches_per_epoch: usize,
    recorded_steps: usize,
    recorded_layers: Vec<usize>,
    diverged: Option<String>,
}

/// Trains per `config` and writes the run directory. Returns the outcome
/// and the directory it was written to.
pub fn cmd_train(config: &Path, out: Option<&Path>, quiet: bool) -> Result<(TrainOutcome, PathBuf), CliError> {
    let cfg = RunConfig::load(config)?;
    let out_dir = out
        .map(Path::to_path_buf)
        .or_else(|| cfg.out_dir.clone())
        .ok_or_else(|| CliError::Usage("no output directory: pass --out or set out_dir".into()))?;
    let spec = cfg.network_spec()?;
    let scheme = cfg.init_scheme()?;
    let train_cfg = cfg.train_config()?;

    let classes = spec.num_classes();
    let train_data = load_labeled(&cfg.train_images, &cfg.train_labels, classes)?;
    let test_data = load_labeled(&cfg.test_images, &cfg.test_labels, classes)?;
    let n_train = train_cfg.subset_size.map_or(train_data.len(), |s| s.min(train_data.len()));
    let n_test = train_cfg.test_subset_size.map_or(test_data.len(), |s| s.min(test_data.len()));

    let net = nn::init_network(&spec, &scheme, train_cfg.seed)?;
    let result = nn::train_with_observer(net, &train_data, &test_data, &train_cfg, |e| {
        if !quiet {
            eprintln!(
                "step {:>5}  minibatch {:>7}  loss {:.5}  accuracy {:.4}",
                e.step, e.minibatch, e.train_loss, e.test_accuracy
            );
        }
    });
    let (outcome, diverged) = match result {
        Ok(o) => (o, None),
        Err(NnError::Diverged { minibatch, loss, diagnostic }) => {
            let msg = format!("training diverged at minibatch {minibatch} (loss {loss})");
            (*diagnostic, Some(msg))
        }
        Err(e) => return Err(e.into()),
    };

    write_atomic(&out_dir.join(SNAPSHOTS_FILE), &snapshot::encode(&outcome.clouds)?)?;
    write_atomic(&out_dir.join(LOG_FILE), export::log_csv(&outcome.log).as_bytes())?;
    write_atomic(&out_dir.join(CONFUSION_FILE), export::confusion_csv(&outcome.log).as_bytes())?;
    let meta = Meta {
        weightscope_version: env!("CARGO_PKG_VERSION"),
        seed: train_cfg.seed,
        config: &cfg,
        pixel_scaling: "byte / 255",
        train_images_used: n_train,
        test_images_used: n_test,
        minibatches_per_epoch: n_train / train_cfg.batch_size,
        recorded_steps: outcome.clouds.first().map_or(0, |c| c.steps),
        recorded_layers: outcome.clouds.iter().map(|c| c.layer_index).collect(),
        diverged: diverged.clone(),
    };
    let mut json = serde_json::to_string_pretty(&meta)?;
    json.push('\n');
    write_atomic(&out_dir.join(META_FILE), json.as_bytes())?;

    match diverged {
        Some(msg) => Err(CliError::Data(format!("{msg}; partial outputs in {}", out_dir.display()))),
        None => Ok((outcome, out_dir)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FilterArg {
    L2,
    Pca3,
}

/// Cover and clustering flags shared by `mapper` and `analyze branches`.
#[derive(Debug, Clone, Args)]
pub struct MapperFlags {
    /// Filter function
    #[arg(long, value_enum, default_value = "l2")]
    pub filter: FilterArg,
    /// Fit the PCA filter on every n-th point only
    #[arg(long, default_value_t = 1)]
    pub pca_stride: usize,
    /// Cover intervals per filter axis
    #[arg(long, default_value_t = 30)]
    pub intervals: usize,
    /// Fractional overlap of adjacent intervals, in [0, 1)
    #[arg(long, default_value_t = 0.5)]
    pub overlap: f64,
    /// Fixed DBSCAN radius; adaptive per preimage when omitted
    #[arg(long)]
    pub eps: Option<f64>,
    /// Adaptive radius: multiple of the mean k-th neighbour distance
    #[arg(long, default_value_t = 0.5)]
    pub eps_factor: f64,
    /// Adaptive radius: which neighbour
    #[arg(long, default_value_t = 5)]
    pub eps_k: usize,
    #[arg(long, default_value_t = 3)]
    pub min_samples: usize,
    /// Highest simplex dimension kept in the nerve (1 or 2)
    #[arg(long, default_value_t = 1)]
    pub max_dim: usize,
}

impl Default for MapperFlags {
    fn default() -> Self {
        MapperFlags {
            filter: FilterArg::L2,
            pca_stride: 1,
            intervals: 30,
            overlap: 0.5,
            eps: None,
            eps_factor: 0.5,
            eps_k: 5,
            min_samples: 3,
            max_dim: 1,
        }
    }
}

impl MapperFlags {
    pub fn params(&self) -> Result<MapperParams, CliError> {
        let params = MapperParams {
            filter: match self.filter {
                FilterArg::L2 => Filter::L2,
                FilterArg::Pca3 => Filter::Pca {
                    k: 3,
                    stride: self.pca_stride,
                },
            },
            intervals: self.intervals,
            overlap: self.overlap,
            eps: match self.eps {
                Some(eps) => EpsRule::Fixed { eps },
                None => EpsRule::Adaptive {
                    factor: self.eps_factor,
                    k: self.eps_k,
                },
            },
            min_samples: self.min_samples,
            max_dim: self.max_dim,
        };
        params.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(params)
    }
}

pub fn run_mapper(cloud: &TrajectoryCloud, flags: &MapperFlags) -> Result<LearningGraph, CliError> {
    let params = flags.params()?;
    let tags = cloud.tags();
    Ok(mapper::mapper_pipeline(&cloud.points, Some(&tags), &params)?)
}

/// Builds the learning graph of one recorded layer and writes graph.json
/// and graph.dot into `out`.
pub fn cmd_mapper(
    snapshots: &Path,
    layer: usize,
    flags: &MapperFlags,
    members: bool,
    out: &Path,
) -> Result<LearningGraph, CliError> {
    flags.params()?;
    let cloud = read_layer(snapshots, layer)?;
    let graph = run_mapper(&cloud, flags)?;
    write_atomic(&out.join("graph.json"), export::graph_to_json(&graph, members).as_bytes())?;
    write_atomic(&out.join("graph.dot"), export::graph_to_dot(&graph).as_bytes())?;
    Ok(graph)
}

/// Writes a synthetic branching cloud as a one-layer snapshot file
/// (layer 0, one neuron per branch).
pub fn cmd_synth(
    branches: usize,
    points_per_branch: usize,
    noise: f64,
    seed: u64,
    out: &Path,
) -> Result<TrajectoryCloud, CliError> {
    let pc = dataset::synth_tree_cloud(branches, points_per_branch, noise, seed)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let cloud = TrajectoryCloud::from_point_cloud(&pc, 0)?;
    write_atomic(out, &snapshot::encode(std::slice::from_ref(&cloud))?)?;
    Ok(cloud)
}

pub fn cmd_norms(snapshots: &Path, layer: Option<usize>, out: &Path) -> Result<String, CliError> {
    let layers = match layer {
        Some(l) => vec![read_layer(snapshots, l)?],
        None => read_snapshots(snapshots)?,
    };
    let mut csv = format!("{}\n", export::NORMS_HEADER);
    for cloud in &layers {
        let norms = analysis::weight_norms(cloud);
        for step in 0..cloud.steps {
            for (n, series) in norms.per_neuron.iter().enumerate() {
                csv += &format!("{step},{},{n},{}\n", cloud.layer_index, series[step]);
            }
        }
    }
    write_atomic(&out.join("norms.csv"), csv.as_bytes())?;
    Ok(csv)
}

fn resolve_tau(cloud: &TrajectoryCloud, tau: Option<f64>) -> Result<f64, CliError> {
    match tau {
        Some(t) if t > 0.0 && t.is_finite() => Ok(t),
        Some(t) => Err(CliError::Usage(format!("--tau must be positive, got {t}"))),
        None => Ok(analysis::default_tau(cloud)),
    }
}

fn neuron_list(ids: &[usize]) -> String {
    ids.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
}

pub fn cmd_branching(snapshots: &Path, layer: usize, tau: Option<f64>, out: &Path) -> Result<Vec<BranchingEvent>, CliError> {
    let cloud = read_layer(snapshots, layer)?;
    let tau = resolve_tau(&cloud, tau)?;
    let events = analysis::branching_times(&cloud, tau)?;
    let mut csv = String::from("step,left,right\n");
    for e in &events {
        csv += &format!("{},{},{}\n", e.step, neuron_list(&e.left), neuron_list(&e.right));
    }
    write_atomic(&out.join("branching.csv"), csv.as_bytes())?;
    Ok(events)
}

#[derive(Debug, Clone, Serialize)]
pub struct BranchesOutput {
    pub layer: usize,
    pub tau: f64,
    #[serde(flatten)]
    pub report: BranchReport,
}

/// Counts final branches on a learning graph (read from `graph`, or built
/// with `flags` when absent) and adds the permanent separations. Writes
/// report.json and the plain-text report.txt.
pub fn cmd_branches(
    snapshots: &Path,
    layer: usize,
    graph: Option<&Path>,
    flags: &MapperFlags,
    tau: Option<f64>,
    out: &Path,
) -> Result<(BranchesOutput, String), CliError> {
    let cloud = read_layer(snapshots, layer)?;
    let graph = match graph {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(with_path(p))?;
            export::graph_from_json(&text).map_err(with_path(p))?
        }
        None => run_mapper(&cloud, flags)?,
    };
    let tau = resolve_tau(&cloud, tau)?;
    let mut report = analysis::branch_count(&cloud, &graph)?;
    report.branching_events = analysis::branching_times(&cloud, tau)?;
    let text = analysis::describe_layer(&cloud, &report, &graph, tau);
    let output = BranchesOutput { layer, tau, report };
    let mut json = serde_json::to_string_pretty(&output)?;
    json.push('\n');
    write_atomic(&out.join("report.json"), json.as_bytes())?;
    write_atomic(&out.join("report.txt"), text.as_bytes())?;
    Ok((output, text))
}

/// Writes class_<k>.csv (`step,pred_0,..`) for each requested true class
/// from a training run directory.
pub fn cmd_confusion(run: &Path, class: Option<usize>, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let log_path = run.join(LOG_FILE);
    let conf_path = run.join(CONFUSION_FILE);
    let log_text = fs::read_to_string(&log_path).map_err(with_path(&log_path))?;
    let conf_text = fs::read_to_string(&conf_path).map_err(with_path(&conf_path))?;
    let log = export::training_log_from_csv(&log_text, &conf_text)?;
    let classes: Vec<usize> = match class {
        Some(k) => vec![k],
        None => (0..log.num_classes).collect(),
    };
    let mut written = Vec::new();
    for k in classes {
        let series = analysis::confusion_evolution(&log, k)?;
        let mut csv = String::from("step");
        for p in 0..log.num_classes {
            csv += &format!(",pred_{p}");
        }
        csv.push('\n');
        for (step, row) in series.steps.iter().zip(&series.counts) {
            csv += &step.to_string();
            for c in row {
                csv += &format!(",{c}");
            }
            csv.push('\n');
        }
        let path = out.join(format!("class_{k}.csv"));
        write_atomic(&path, csv.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}

/// Up to `count` evenly spaced steps from first to last.
pub fn spread_steps(total: usize, count: usize) -> Vec<usize> {
    if total == 0 || count == 0 {
        return Vec::new();
    }
    if count >= total {
        return (0..total).collect();
    }
    if count == 1 {
        return vec![total - 1];
    }
    let mut v: Vec<usize> = (0..count)
        .map(|i| (i * (total - 1) + (count - 1) / 2) / (count - 1))
        .collect();
    v.dedup();
    v
}

pub struct SurfaceArgs<'a> {
    pub snapshots: &'a Path,
    pub layer: usize,
    pub steps: Option<Vec<usize>>,
    pub axis: usize,
    pub height: Option<usize>,
    pub width: Option<usize>,
    pub stride: usize,
    pub out: &'a Path,
}

/// Writes the surface difference images as r<row>_c<col>.pgm.
pub fn cmd_surface(args: &SurfaceArgs) -> Result<analysis::SurfaceImageGrid, CliError> {
    let cloud = read_layer(args.snapshots, args.layer)?;
    let (h, w) = match (args.height, args.width) {
        (Some(h), Some(w)) => (h, w),
        (None, None) => {
            let side = (cloud.dim as f64).sqrt().round() as usize;
            if side * side != cloud.dim {
                return Err(CliError::Usage(format!(
                    "dimension {} is not square; pass --height and --width",
                    cloud.dim
                )));
            }
            (side, side)
        }
        _ => return Err(CliError::Usage("pass both --height and --width".into())),
    };
    let steps = args.steps.clone().unwrap_or_else(|| spread_steps(cloud.steps, 8));
    let grid = analysis::surface_images(&cloud, &steps, args.axis, h, w, args.stride)?;
    for (r, row) in grid.images.iter().enumerate() {
        for (c, img) in row.iter().enumerate() {
            write_atomic(&args.out.join(format!("r{r}_c{c}.pgm")), &export::pgm_bytes(img, h, w))?;
        }
    }
    Ok(grid)
}

#[derive(Debug, Parser)]
#[command(name = "weightscope", version, about = "Record and inspect how network weights move during training")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a network and record its weight trajectories
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides out_dir in the config)
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
    },
    /// Build the learning graph of one recorded layer
    Mapper {
        #[arg(long)]
        snapshots: PathBuf,
        #[arg(long, default_value_t = 0)]
        layer: usize,
        #[command(flatten)]
        flags: MapperFlags,
        /// Include member point ids in graph.json
        #[arg(long)]
        members: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Analyses of recorded runs
    Analyze {
        #[command(subcommand)]
        which: Analyze,
    },
    /// Write a synthetic branching trajectory file
    Synth {
        #[arg(long, default_value_t = 2)]
        branches: usize,
        #[arg(long, default_value_t = 20)]
        points_per_branch: usize,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output snapshot file
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum Analyze {
    /// Weight norm of every neuron at every step (norms.csv)
    Norms {
        #[arg(long)]
        snapshots: PathBuf,
        /// Only this layer; all recorded layers by default
        #[arg(long)]
        layer: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Final branch count and separations (report.json, report.txt)
    Branches {
        #[arg(long)]
        snapshots: PathBuf,
        #[arg(long, default_value_t = 0)]
        layer: usize,
        /// graph.json written with --members; built on the fly when omitted
        #[arg(long)]
        graph: Option<PathBuf>,
        #[command(flatten)]
        flags: MapperFlags,
        /// Separation distance; 5x the median step displacement by default
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Steps at which neuron groups separate for good (branching.csv)
    Branching {
        #[arg(long)]
        snapshots: PathBuf,
        #[arg(long, default_value_t = 0)]
        layer: usize,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predictions for each true class over training (class_<k>.csv)
    Confusion {
        /// Training run directory holding log.csv and confusion.csv
        #[arg(long)]
        run: PathBuf,
        /// Only this true class; all classes by default
        #[arg(long)]
        class: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Difference images of laterally adjacent neurons (r<row>_c<col>.pgm)
    Surface {
        #[arg(long)]
        snapshots: PathBuf,
        #[arg(long, default_value_t = 0)]
        layer: usize,
        /// Comma-separated steps; eight spread over training by default
        #[arg(long, value_delimiter = ',')]
        steps: Option<Vec<usize>>,
        /// Principal axis giving the lateral order (0-based; the first
        /// mostly tracks radial growth)
        #[arg(long, default_value_t = 1)]
        axis: usize,
        #[arg(long)]
        height: Option<usize>,
        #[arg(long)]
        width: Option<usize>,
        /// Fit the PCA on every n-th point only
        #[arg(long, default_value_t = 1)]
        stride: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { config, out, quiet } => {
            let (outcome, dir) = cmd_train(&config, out.as_deref(), quiet)?;
            if let Some(last) = outcome.log.entries.last() {
                println!("final test accuracy {:.4}", last.test_accuracy);
            }
            println!("wrote {}", dir.display());
        }
        Command::Mapper {
            snapshots,
            layer,
            flags,
            members,
            out,
        } => {
            let g = cmd_mapper(&snapshots, layer, &flags, members, &out)?;
            println!(
                "{} vertices, {} edges, {} triangles",
                g.vertices.len(),
                g.edges.len(),
                g.triangles.len()
            );
        }
        Command::Synth {
            branches,
            points_per_branch,
            noise,
            seed,
            out,
        } => {
            let c = cmd_synth(branches, points_per_branch, noise, seed, &out)?;
            println!("{} points written to {}", c.len(), out.display());
        }
        Command::Analyze { which } => match which {
            Analyze::Norms { snapshots, layer, out } => {
                cmd_norms(&snapshots, layer, &out)?;
            }
            Analyze::Branches {
                snapshots,
                layer,
                graph,
                flags,
                tau,
                out,
            } => {
                let (_, text) = cmd_branches(&snapshots, layer, graph.as_deref(), &flags, tau, &out)?;
                print!("{text}");
            }
            Analyze::Branching { snapshots, layer, tau, out } => {
                let ev = cmd_branching(&snapshots, layer, tau, &out)?;
                println!("{} branching events", ev.len());
            }
            Analyze::Confusion { run, class, out } => {
                for p in cmd_confusion(&run, class, &out)? {
                    println!("wrote {}", p.display());
                }
            }
            Analyze::Surface {
                snapshots,
                layer,
                steps,
                axis,
                height,
                width,
                stride,
                out,
            } => {
                let g = cmd_surface(&SurfaceArgs {
                    snapshots: &snapshots,
                    layer,
                    steps,
                    axis,
                    height,
                    width,
                    stride,
                    out: &out,
                })?;
                let n: usize = g.images.iter().map(Vec::len).sum();
                println!("{n} images written to {}", out.display());
            }
        },
    }
    Ok(())
}
