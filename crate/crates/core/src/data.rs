//! Datasets: synthetic Gaussian blobs, IDX image files, and minibatching.
//!
//! Features always live in `[0, 1]` so one noise scale `sigma` means the
//! same thing across datasets. Desk-scale is the design point: a thousand
//! training images, a few hundred blobs.

use crate::statmath::{sample_gaussian, RngStream};
use crate::{Error, Result};
use std::path::Path;

const BLOBS_STREAM: u64 = 0x626c_6f62; // "blob"
const SHUFFLE_STREAM: u64 = 0x7368_7566; // "shuf"

/// An in-memory classification dataset; features row-major in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct Dataset {
    name: String,
    features: Vec<f64>,
    labels: Vec<usize>,
    num_features: usize,
    num_classes: usize,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        features: Vec<f64>,
        labels: Vec<usize>,
        num_features: usize,
        num_classes: usize,
    ) -> Result<Self> {
        if num_features == 0 {
            return Err(Error::invalid("num_features", "must be positive"));
        }
        if num_classes < 2 {
            return Err(Error::invalid("num_classes", "needs at least two classes"));
        }
        if labels.is_empty() {
            return Err(Error::invalid("labels", "dataset is empty"));
        }
        if features.len() != labels.len() * num_features {
            return Err(Error::DimensionMismatch {
                what: "features",
                expected: labels.len() * num_features,
                got: features.len(),
            });
        }
        if features.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("features", "values must lie in [0, 1]"));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::invalid(
                "labels",
                format!("label {bad} >= num_classes {num_classes}"),
            ));
        }
        Ok(Dataset {
            name: name.into(),
            features,
            labels,
            num_features,
            num_classes,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_row(&self, i: usize) -> &[f64] {
        &self.features[i * self.num_features..(i + 1) * self.num_features]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }
}

/// Gaussian clusters at deterministic centers, clamped into `[0, 1]^dim`.
///
/// Centers sit evenly on a circle of radius `centers_scale / 2` around the
/// cube midpoint (first two coordinates; the rest stay at 0.5), so two
/// datasets with the same geometry parameters share centers regardless of
/// seed. `noise_std = 0` returns the centers themselves. Points are emitted
/// class-block by class-block.
pub fn make_blobs(
    n_per_class: usize,
    num_classes: usize,
    dim: usize,
    centers_scale: f64,
    noise_std: f64,
    seed: u64,
) -> Result<Dataset> {
    if n_per_class == 0 {
        return Err(Error::invalid("n_per_class", "must be positive"));
    }
    if num_classes < 2 {
        return Err(Error::invalid("num_classes", "needs at least two classes"));
    }
    if dim == 0 {
        return Err(Error::invalid("dim", "must be positive"));
    }
    if !centers_scale.is_finite() || centers_scale <= 0.0 || centers_scale > 1.0 {
        return Err(Error::invalid(
            "centers_scale",
            format!("{centers_scale} not in (0, 1]"),
        ));
    }
    if !noise_std.is_finite() || noise_std < 0.0 {
        return Err(Error::invalid("noise_std", format!("{noise_std} negative")));
    }

    let mut centers = vec![vec![0.5; dim]; num_classes];
    for (c, center) in centers.iter_mut().enumerate() {
        let theta = 2.0 * std::f64::consts::PI * c as f64 / num_classes as f64;
        center[0] = 0.5 + 0.5 * centers_scale * theta.cos();
        if dim > 1 {
            center[1] = 0.5 + 0.5 * centers_scale * theta.sin();
        }
    }

    let root = RngStream::new(seed, BLOBS_STREAM);
    let mut features = Vec::with_capacity(n_per_class * num_classes * dim);
    let mut labels = Vec::with_capacity(n_per_class * num_classes);
    for (c, center) in centers.iter().enumerate() {
        let class_stream = root.substream(c as u64);
        for p in 0..n_per_class {
            if noise_std > 0.0 {
                let mut point_stream = class_stream.substream(p as u64);
                let noise = sample_gaussian(dim, noise_std, &mut point_stream)?;
                features.extend(
                    center
                        .iter()
                        .zip(&noise)
                        .map(|(m, n)| (m + n).clamp(0.0, 1.0)),
                );
            } else {
                features.extend_from_slice(center);
            }
            labels.push(c);
        }
    }
    Dataset::new("blobs", features, labels, dim, num_classes)
}

// -- IDX image files ---------------------------------------------------------

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(bytes: &[u8], off: usize, path: &Path, field: &str) -> Result<u32> {
    bytes
        .get(off..off + 4)
        .map(|s| u32::from_be_bytes(s.try_into().unwrap()))
        .ok_or_else(|| Error::format(path.display().to_string(), format!("truncated {field}")))
}

/// Loads an IDX image/label pair (the classic big-endian ubyte layout:
/// images carry magic `0x00000803` and `count x rows x cols` pixels, labels
/// magic `0x00000801`). Pixels are normalized by 255, nothing else. `limit`
/// truncates to the first examples; classes are `0..=max_label`.
pub fn load_idx(images_path: &Path, labels_path: &Path, limit: Option<usize>) -> Result<Dataset> {
    let img_bytes = std::fs::read(images_path)
        .map_err(|e| Error::io(images_path.display().to_string(), e))?;
    let magic = read_u32_be(&img_bytes, 0, images_path, "image magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(
            images_path.display().to_string(),
            format!("image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        ));
    }
    let count = read_u32_be(&img_bytes, 4, images_path, "image count")? as usize;
    let rows = read_u32_be(&img_bytes, 8, images_path, "image rows")? as usize;
    let cols = read_u32_be(&img_bytes, 12, images_path, "image cols")? as usize;
    let pixels = &img_bytes[16.min(img_bytes.len())..];
    if pixels.len() != count * rows * cols {
        return Err(Error::format(
            images_path.display().to_string(),
            format!(
                "pixel data is {} bytes, header promises {}",
                pixels.len(),
                count * rows * cols
            ),
        ));
    }

    let lbl_bytes = std::fs::read(labels_path)
        .map_err(|e| Error::io(labels_path.display().to_string(), e))?;
    let magic = read_u32_be(&lbl_bytes, 0, labels_path, "label magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::format(
            labels_path.display().to_string(),
            format!("label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        ));
    }
    let lbl_count = read_u32_be(&lbl_bytes, 4, labels_path, "label count")? as usize;
    let raw_labels = &lbl_bytes[8.min(lbl_bytes.len())..];
    if raw_labels.len() != lbl_count {
        return Err(Error::format(
            labels_path.display().to_string(),
            format!(
                "label data is {} bytes, header promises {lbl_count}",
                raw_labels.len()
            ),
        ));
    }
    if lbl_count != count {
        return Err(Error::format(
            labels_path.display().to_string(),
            format!("label count {lbl_count} does not match image count {count}"),
        ));
    }

    let take = limit.map_or(count, |l| l.min(count));
    if take == 0 {
        return Err(Error::invalid("limit", "no examples left after limit"));
    }
    let d = rows * cols;
    let features: Vec<f64> = pixels[..take * d].iter().map(|&b| b as f64 / 255.0).collect();
    let labels: Vec<usize> = raw_labels[..take].iter().map(|&b| b as usize).collect();
    let num_classes = labels.iter().max().unwrap() + 1;
    Dataset::new(
        images_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "idx".into()),
        features,
        labels,
        d,
        num_classes.max(2),
    )
}

// -- minibatching -------------------------------------------------------------

/// Splits `0..dataset.len()` into shuffled minibatches. The permutation is
/// keyed by `(seed, epoch)`, so each epoch reshuffles and every index
/// appears exactly once; a short final batch is kept.
pub fn minibatches(
    dataset: &Dataset,
    batch_size: usize,
    epoch: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch_size", "must be positive"));
    }
    let n = dataset.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = RngStream::new(seed, SHUFFLE_STREAM).substream(epoch as u64);
    // Fisher-Yates
    for i in (1..n).rev() {
        let j = rng.next_below(i as u64 + 1) as usize;
        perm.swap(i, j);
    }
    Ok(perm.chunks(batch_size).map(<[usize]>::to_vec).collect())
}
