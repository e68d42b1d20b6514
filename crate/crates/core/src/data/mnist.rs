//! MNIST IDX ingestion and the 3-vs-8 restructuring.
//!
//! Digits 3 and 8 are kept, each 28x28 image is average-pooled over 2x2
//! blocks to 14x14 = 196 features scaled into `[0, 1]`. Digit 3 maps to
//! `+1` and digit 8 to `-1`.

use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::{DataError, Dataset, Result};

pub const POSITIVE_DIGIT: u8 = 3;
pub const NEGATIVE_DIGIT: u8 = 8;
pub const SIDE: usize = 28;
pub const POOLED_SIDE: usize = SIDE / 2;
pub const POOLED_FEATURES: usize = POOLED_SIDE * POOLED_SIDE;

/// Environment variable naming the dataset cache directory.
pub const DATA_DIR_ENV: &str = "QGLR_DATA_DIR";

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// Raw images decoded from an IDX3 file.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn image(&self, i: usize) -> &[u8] {
        let len = self.rows * self.cols;
        &self.pixels[i * len..(i + 1) * len]
    }
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| DataError::Idx(format!("truncated header at byte {at}")))
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let magic = read_u32(bytes, 0)?;
    if magic != IMAGES_MAGIC {
        return Err(DataError::Idx(format!("bad image magic {magic:#010x}")));
    }
    let count = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let expected = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| DataError::Idx("image dimensions overflow".into()))?;
    let body = &bytes[16..];
    if body.len() != expected {
        return Err(DataError::Idx(format!(
            "expected {expected} pixel bytes, found {}",
            body.len()
        )));
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: body.to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = read_u32(bytes, 0)?;
    if magic != LABELS_MAGIC {
        return Err(DataError::Idx(format!("bad label magic {magic:#010x}")));
    }
    let count = read_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() != count {
        return Err(DataError::Idx(format!("expected {count} labels, found {}", body.len())));
    }
    Ok(body.to_vec())
}

/// Keeps digits 3 and 8 and pools each image to 14x14.
pub fn restructure_mnist(images: &IdxImages, labels: &[u8]) -> Result<Dataset> {
    if images.rows != SIDE || images.cols != SIDE {
        return Err(DataError::ImageShape {
            rows: images.rows,
            cols: images.cols,
        });
    }
    if images.count != labels.len() {
        return Err(DataError::LabelCount {
            rows: labels.len(),
            samples: images.count,
        });
    }
    let keep: Vec<usize> = labels
        .iter()
        .enumerate()
        .filter(|&(_, &d)| d == POSITIVE_DIGIT || d == NEGATIVE_DIGIT)
        .map(|(i, _)| i)
        .collect();
    let mut features = Array2::zeros((keep.len(), POOLED_FEATURES));
    let mut y = Vec::with_capacity(keep.len());
    for (row, &i) in keep.iter().enumerate() {
        let pooled = pool_2x2(images.image(i));
        for (j, v) in pooled.into_iter().enumerate() {
            features[[row, j]] = v / 255.0;
        }
        y.push(if labels[i] == POSITIVE_DIGIT { 1.0 } else { -1.0 });
    }
    let names = (0..POOLED_FEATURES)
        .map(|j| format!("p{}_{}", j / POOLED_SIDE, j % POOLED_SIDE))
        .collect();
    Dataset::from_features(features.view(), &y)?.with_feature_names(names)
}

/// Mean of each 2x2 block of a 28x28 image, in raw pixel units.
pub fn pool_2x2(image: &[u8]) -> Vec<f64> {
    let mut out = vec![0.0; POOLED_FEATURES];
    for r in 0..POOLED_SIDE {
        for c in 0..POOLED_SIDE {
            let at = |dr: usize, dc: usize| image[(2 * r + dr) * SIDE + 2 * c + dc] as f64;
            out[r * POOLED_SIDE + c] = (at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1)) / 4.0;
        }
    }
    out
}

/// Restructured training and validation sets.
#[derive(Debug, Clone)]
pub struct Mnist38 {
    pub train: Dataset,
    pub validation: Dataset,
}

/// Directory holding the four raw IDX files: `$QGLR_DATA_DIR/mnist`, or
/// `data/mnist` relative to the working directory.
pub fn default_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
        .join("mnist")
}

fn load_split(dir: &Path, prefix: &str) -> Result<Dataset> {
    let read = |name: String| {
        let path = dir.join(&name);
        std::fs::read(&path).map_err(|e| {
            DataError::Io(std::io::Error::new(
                e.kind(),
                format!("{}: {e} (run scripts/fetch-mnist.sh)", path.display()),
            ))
        })
    };
    let images = parse_idx_images(&read(format!("{prefix}-images-idx3-ubyte"))?)?;
    let labels = parse_idx_labels(&read(format!("{prefix}-labels-idx1-ubyte"))?)?;
    restructure_mnist(&images, &labels)
}

/// Loads the standard train (`train-*`) and test (`t10k-*`) splits.
pub fn load(dir: impl AsRef<Path>) -> Result<Mnist38> {
    let dir = dir.as_ref();
    Ok(Mnist38 {
        train: load_split(dir, "train")?,
        validation: load_split(dir, "t10k")?,
    })
}
