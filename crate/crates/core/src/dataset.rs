//! IDX image/label loading and synthetic point clouds.
//!
//! The IDX container is MNIST's distribution format: a big-endian `u32`
//! magic (`0x00000803` for 3-d unsigned-byte arrays, `0x00000801` for 1-d),
//! big-endian `u32` dimension words, then the raw bytes. Loaders take raw
//! (not gzipped) streams.

use std::f64::consts::PI;
use std::io::{self, Read, Write};

use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::linalg::Matrix;
use crate::rng::{self, Stream};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("expected image magic 0x{expected:08x}, found 0x{found:08x}")]
    ImageMagic { expected: u32, found: u32 },
    #[error("expected label magic 0x{expected:08x}, found 0x{found:08x}")]
    LabelMagic { expected: u32, found: u32 },
    #[error("truncated idx stream: {what} needs {needed} bytes, {available} available")]
    Truncated {
        what: &'static str,
        needed: usize,
        available: usize,
    },
    #[error("idx stream has {0} bytes past the declared payload")]
    TrailingBytes(usize),
    #[error("zero image dimension ({rows}x{cols})")]
    ZeroDimension { rows: usize, cols: usize },
    #[error("label {label} at index {index} is not below num_classes {num_classes}")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        num_classes: usize,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// A set of equally sized grayscale images.
///
/// Pixels are kept as their original bytes; every accessor yields the value
/// `byte / 255.0`, so a set read from IDX writes back bit-exactly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageSet {
    count: usize,
    height: usize,
    width: usize,
    bytes: Vec<u8>,
}

impl ImageSet {
    pub fn from_bytes(
        count: usize,
        height: usize,
        width: usize,
        bytes: Vec<u8>,
    ) -> Result<Self, DatasetError> {
        if height == 0 || width == 0 {
            return Err(DatasetError::ZeroDimension {
                rows: height,
                cols: width,
            });
        }
        let needed = count * height * width;
        if bytes.len() != needed {
            return Err(DatasetError::Truncated {
                what: "image payload",
                needed,
                available: bytes.len(),
            });
        }
        Ok(ImageSet {
            count,
            height,
            width,
            bytes,
        })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Flattened feature count, `height * width`.
    pub fn dim(&self) -> usize {
        self.height * self.width
    }

    pub fn raw(&self, index: usize) -> &[u8] {
        let d = self.dim();
        &self.bytes[index * d..(index + 1) * d]
    }

    pub fn pixels(&self, index: usize) -> impl Iterator<Item = f64> + '_ {
        self.raw(index).iter().map(|&b| pixel_value(b))
    }

    /// Writes image `index` into `out` (length `dim`).
    pub fn fill_row(&self, index: usize, out: &mut [f64]) {
        for (o, &b) in out.iter_mut().zip(self.raw(index)) {
            *o = pixel_value(b);
        }
    }

    /// Rows of the listed images as a `len x dim` matrix.
    pub fn to_matrix(&self, indices: &[usize]) -> Matrix {
        let d = self.dim();
        let mut m = Matrix::zeros(indices.len(), d);
        for (r, &i) in indices.iter().enumerate() {
            self.fill_row(i, m.row_mut(r));
        }
        m
    }

    /// The first `n` images (all of them if `n` exceeds the count).
    pub fn truncated(&self, n: usize) -> ImageSet {
        let n = n.min(self.count);
        ImageSet {
            count: n,
            height: self.height,
            width: self.width,
            bytes: self.bytes[..n * self.dim()].to_vec(),
        }
    }
}

#[inline]
fn pixel_value(b: u8) -> f64 {
    f64::from(b) / 255.0
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabelSet {
    pub fn new(labels: Vec<usize>, num_classes: usize) -> Result<Self, DatasetError> {
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(DatasetError::LabelOutOfRange {
                index,
                label,
                num_classes,
            });
        }
        Ok(LabelSet {
            labels,
            num_classes,
        })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn count(&self) -> usize {
        self.labels.len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Number of labels per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn truncated(&self, n: usize) -> LabelSet {
        LabelSet {
            labels: self.labels[..n.min(self.labels.len())].to_vec(),
            num_classes: self.num_classes,
        }
    }
}

/// Images paired with their labels.
#[derive(Debug, Clone)]
pub struct LabeledImages {
    pub images: ImageSet,
    pub labels: LabelSet,
}

impl LabeledImages {
    pub fn new(images: ImageSet, labels: LabelSet) -> Result<Self, DatasetError> {
        if images.count() != labels.count() {
            return Err(DatasetError::InvalidParameter(format!(
                "{} images but {} labels",
                images.count(),
                labels.count()
            )));
        }
        Ok(LabeledImages { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn truncated(&self, n: usize) -> LabeledImages {
        LabeledImages {
            images: self.images.truncated(n),
            labels: self.labels.truncated(n),
        }
    }
}

struct ByteCursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteCursor<'a> {
    fn u32_be(&mut self, what: &'static str) -> Result<u32, DatasetError> {
        let b = self.take(4, what)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], DatasetError> {
        let available = self.buf.len() - self.pos;
        if available < n {
            return Err(DatasetError::Truncated {
                what,
                needed: n,
                available,
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn finish(&self) -> Result<(), DatasetError> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            extra => Err(DatasetError::TrailingBytes(extra)),
        }
    }
}

pub fn load_idx_images<R: Read>(mut source: R) -> Result<ImageSet, DatasetError> {
    let mut buf = Vec::new();
    source.read_to_end(&mut buf)?;
    let mut cur = ByteCursor { buf: &buf, pos: 0 };
    let magic = cur.u32_be("magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(DatasetError::ImageMagic {
            expected: IDX_IMAGES_MAGIC,
            found: magic,
        });
    }
    let count = cur.u32_be("image count")? as usize;
    let rows = cur.u32_be("row count")? as usize;
    let cols = cur.u32_be("column count")? as usize;
    if rows == 0 || cols == 0 {
        return Err(DatasetError::ZeroDimension { rows, cols });
    }
    let payload = cur.take(count * rows * cols, "image payload")?.to_vec();
    cur.finish()?;
    ImageSet::from_bytes(count, rows, cols, payload)
}

/// Reads an IDX label file. `num_classes` defaults to the largest label plus
/// one; when given, every label must be below it.
pub fn load_idx_labels<R: Read>(
    mut source: R,
    num_classes: Option<usize>,
) -> Result<LabelSet, DatasetError> {
    let mut buf = Vec::new();
    source.read_to_end(&mut buf)?;
    let mut cur = ByteCursor { buf: &buf, pos: 0 };
    let magic = cur.u32_be("magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(DatasetError::LabelMagic {
            expected: IDX_LABELS_MAGIC,
            found: magic,
        });
    }
    let count = cur.u32_be("label count")? as usize;
    let labels: Vec<usize> = cur
        .take(count, "label payload")?
        .iter()
        .map(|&b| b as usize)
        .collect();
    cur.finish()?;
    let classes = num_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    LabelSet::new(labels, classes)
}

pub fn write_idx_images<W: Write>(set: &ImageSet, mut sink: W) -> io::Result<()> {
    sink.write_all(&IDX_IMAGES_MAGIC.to_be_bytes())?;
    for dim in [set.count, set.height, set.width] {
        sink.write_all(&(dim as u32).to_be_bytes())?;
    }
    sink.write_all(&set.bytes)
}

pub fn write_idx_labels<W: Write>(set: &LabelSet, mut sink: W) -> io::Result<()> {
    sink.write_all(&IDX_LABELS_MAGIC.to_be_bytes())?;
    sink.write_all(&(set.labels.len() as u32).to_be_bytes())?;
    let bytes: Vec<u8> = set.labels.iter().map(|&l| l as u8).collect();
    sink.write_all(&bytes)
}

/// Provenance of a point inside a trajectory: the recorded step and the
/// neuron (or synthetic trajectory) it belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PointTag {
    pub step: usize,
    pub neuron: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub coords: Matrix,
    pub tags: Option<Vec<PointTag>>,
}

impl PointCloud {
    pub fn new(coords: Matrix, tags: Option<Vec<PointTag>>) -> Result<Self, DatasetError> {
        if let Some(t) = &tags {
            if t.len() != coords.rows() {
                return Err(DatasetError::InvalidParameter(format!(
                    "{} tags for {} points",
                    t.len(),
                    coords.rows()
                )));
            }
        }
        if !coords.is_finite() {
            return Err(DatasetError::InvalidParameter(
                "point cloud has non-finite coordinates".into(),
            ));
        }
        Ok(PointCloud { coords, tags })
    }

    pub fn len(&self) -> usize {
        self.coords.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.coords.cols()
    }
}

/// Planar tree-shaped trajectories: `branch_count` walkers leave the origin
/// together along a unit trunk on the +x axis, then each follows its own
/// unit-length branch from the junction at (1, 0).
///
/// Branch directions fan out symmetrically over ±60° around +x, so with two
/// branches the trunk and both branches sit 120° apart (a Y). A single branch
/// continues straight along the trunk.
///
/// Each walker contributes `2 * points_per_branch` points: steps
/// `0..points_per_branch` on the trunk (step 0 at the origin) and the rest on
/// its branch, ending at the branch tip. Points are ordered step-major,
/// walker-minor and tagged `(step, walker)`. Every coordinate gets independent
/// `N(0, noise²)` jitter from the seeded synthetic stream.
pub fn synth_tree_cloud(
    branch_count: usize,
    points_per_branch: usize,
    noise: f64,
    seed: u64,
) -> Result<PointCloud, DatasetError> {
    if branch_count == 0 {
        return Err(DatasetError::InvalidParameter(
            "branch_count must be at least 1".into(),
        ));
    }
    if points_per_branch == 0 {
        return Err(DatasetError::InvalidParameter(
            "points_per_branch must be at least 1".into(),
        ));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(DatasetError::InvalidParameter(format!(
            "noise must be finite and nonnegative, got {noise}"
        )));
    }
    let angles: Vec<f64> = if branch_count == 1 {
        vec![0.0]
    } else {
        (0..branch_count)
            .map(|b| (-60.0 + 120.0 * b as f64 / (branch_count - 1) as f64) * PI / 180.0)
            .collect()
    };
    let n_steps = 2 * points_per_branch;
    let ppb = points_per_branch as f64;
    let mut rng = rng::stream(seed, Stream::Synthetic);
    let mut data = Vec::with_capacity(n_steps * branch_count * 2);
    let mut tags = Vec::with_capacity(n_steps * branch_count);
    for step in 0..n_steps {
        for (walker, angle) in angles.iter().enumerate() {
            let (x, y) = if step < points_per_branch {
                (step as f64 / ppb, 0.0)
            } else {
                let t = (step - points_per_branch + 1) as f64 / ppb;
                (1.0 + t * angle.cos(), t * angle.sin())
            };
            let jx: f64 = StandardNormal.sample(&mut rng);
            let jy: f64 = StandardNormal.sample(&mut rng);
            data.push(x + noise * jx);
            data.push(y + noise * jy);
            tags.push(PointTag {
                step,
                neuron: walker,
            });
        }
    }
    let coords = Matrix::from_vec(n_steps * branch_count, 2, data)
        .map_err(|e| DatasetError::InvalidParameter(e.to_string()))?;
    PointCloud::new(coords, Some(tags))
}
