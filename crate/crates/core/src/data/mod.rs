//! Datasets with the bias column and labels folded into the training matrix.
//!
//! A [`Dataset`] always carries the bias column at index 0 and labels in
//! `{-1, +1}`. [`build_z`] multiplies every row by its label, which is the
//! only form the gradient circuits ever touch.

mod csv_io;
pub mod mnist;
mod synth;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use csv_io::{read_csv, read_csv_from, write_csv, write_csv_to};
pub use synth::{synth_financial, synth_financial_with_truth, GroundTruth};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("column {column} contains a non-finite value")]
    NonFinite { column: usize },
    #[error("row {row}: bias column must be 1, found {value}")]
    BiasColumn { row: usize, value: f64 },
    #[error("row {row}: label {value} is not in {{-1, +1}} or {{0, 1}}")]
    Label { row: usize, value: f64 },
    #[error("{rows} labels for {samples} samples")]
    LabelCount { rows: usize, samples: usize },
    #[error("image shape {rows}x{cols}, expected 28x28")]
    ImageShape { rows: usize, cols: usize },
    #[error("idx: {0}")]
    Idx(String),
    #[error("line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error("no column named \"label\"")]
    MissingLabelColumn,
    #[error("dataset is empty")]
    Empty,
    #[error("{0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// Samples with a leading bias column and `{-1, +1}` labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Array2<f64>,
    y: Array1<f64>,
    feature_names: Vec<String>,
}

impl Dataset {
    /// Builds a dataset from a design matrix that already carries the bias
    /// column. Labels must be exactly `-1.0` or `+1.0`.
    pub fn new(x: Array2<f64>, y: Array1<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(DataError::LabelCount {
                rows: y.len(),
                samples: x.nrows(),
            });
        }
        if x.ncols() == 0 {
            return Err(DataError::InvalidArgument(
                "design matrix needs at least the bias column".into(),
            ));
        }
        for (row, &value) in x.column(0).iter().enumerate() {
            if value != 1.0 {
                return Err(DataError::BiasColumn { row, value });
            }
        }
        for (row, &value) in y.iter().enumerate() {
            if value != 1.0 && value != -1.0 {
                return Err(DataError::Label { row, value });
            }
        }
        let feature_names = (1..x.ncols()).map(|j| format!("f{j}")).collect();
        Ok(Self { x, y, feature_names })
    }

    /// Builds a dataset from raw features (no bias column). Labels in
    /// `{0, 1}` are remapped to `{-1, +1}`.
    pub fn from_features(features: ArrayView2<'_, f64>, labels: &[f64]) -> Result<Self> {
        let n = features.nrows();
        if labels.len() != n {
            return Err(DataError::LabelCount {
                rows: labels.len(),
                samples: n,
            });
        }
        let mut x = Array2::ones((n, features.ncols() + 1));
        x.slice_mut(s![.., 1..]).assign(&features);
        Self::new(x, remap_labels(labels)?)
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_features() {
            return Err(DataError::InvalidArgument(format!(
                "{} feature names for {} features",
                names.len(),
                self.n_features()
            )));
        }
        self.feature_names = names;
        Ok(self)
    }

    pub fn n_samples(&self) -> usize {
        self.x.nrows()
    }

    /// Feature count excluding the bias column.
    pub fn n_features(&self) -> usize {
        self.x.ncols() - 1
    }

    /// Design matrix including the bias column.
    pub fn x(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    pub fn y(&self) -> ArrayView1<'_, f64> {
        self.y.view()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    /// Rows selected by index, in the given order.
    pub fn select(&self, rows: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select(Axis(0), rows),
            y: self.y.select(Axis(0), rows),
            feature_names: self.feature_names.clone(),
        }
    }

    /// The first `n` rows (or all of them if fewer).
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.n_samples());
        Dataset {
            x: self.x.slice(s![..n, ..]).to_owned(),
            y: self.y.slice(s![..n]).to_owned(),
            feature_names: self.feature_names.clone(),
        }
    }

    /// Deterministic train/validation split.
    pub fn split(&self, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
        if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
            return Err(DataError::InvalidArgument(format!(
                "train fraction {} outside (0, 1)",
                spec.train_fraction
            )));
        }
        let mut order: Vec<usize> = (0..self.n_samples()).collect();
        if spec.shuffle {
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
        }
        let cut = (self.n_samples() as f64 * spec.train_fraction).round() as usize;
        Ok((self.select(&order[..cut]), self.select(&order[cut..])))
    }

    /// Fraction of the most frequent label.
    pub fn majority_rate(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let pos = self.y.iter().filter(|&&v| v > 0.0).count() as f64;
        let n = self.n_samples() as f64;
        pos.max(n - pos) / n
    }
}

fn remap_labels(labels: &[f64]) -> Result<Array1<f64>> {
    let zero_one = labels.iter().all(|&v| v == 0.0 || v == 1.0);
    let out = labels
        .iter()
        .enumerate()
        .map(|(row, &value)| match value {
            1.0 => Ok(1.0),
            -1.0 if !zero_one => Ok(-1.0),
            0.0 if zero_one => Ok(-1.0),
            _ => Err(DataError::Label { row, value }),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Array1::from(out))
}

/// Train/validation split parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.75,
            seed: 0,
            shuffle: true,
        }
    }
}

/// Training matrix with labels folded in: `z[i][j] = y[i] * x[i][j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ZMatrix(Array2<f64>);

impl ZMatrix {
    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn nrows(&self) -> usize {
        self.0.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.0.ncols()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

pub fn build_z(ds: &Dataset) -> ZMatrix {
    let mut z = ds.x.clone();
    for (mut row, &label) in z.axis_iter_mut(Axis(0)).zip(ds.y.iter()) {
        row *= label;
    }
    ZMatrix(z)
}

/// Per-column min-max ranges of the non-bias features.
#[derive(Debug, Clone, PartialEq)]
pub struct MinMax {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMax {
    pub fn fit(ds: &Dataset) -> Result<Self> {
        let f = ds.n_features();
        let mut min = vec![f64::INFINITY; f];
        let mut max = vec![f64::NEG_INFINITY; f];
        for row in ds.x.axis_iter(Axis(0)) {
            for j in 0..f {
                let v = row[j + 1];
                if !v.is_finite() {
                    return Err(DataError::NonFinite { column: j + 1 });
                }
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        Ok(Self { min, max })
    }

    /// Scales features into `[0, 1]`; constant columns map to 0. Values
    /// outside the fitted range (e.g. validation rows) are not clipped.
    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        if self.min.len() != ds.n_features() {
            return Err(DataError::InvalidArgument(format!(
                "ranges fitted on {} features, dataset has {}",
                self.min.len(),
                ds.n_features()
            )));
        }
        let mut out = ds.clone();
        for (j, (&lo, &hi)) in self.min.iter().zip(&self.max).enumerate() {
            let span = hi - lo;
            let mut col = out.x.column_mut(j + 1);
            if col.iter().any(|v| !v.is_finite()) {
                return Err(DataError::NonFinite { column: j + 1 });
            }
            if span > 0.0 {
                col.mapv_inplace(|v| (v - lo) / span);
            } else {
                col.fill(0.0);
            }
        }
        Ok(out)
    }
}

/// Min-max scales every non-bias column of `ds` into `[0, 1]`.
pub fn normalize(ds: &Dataset) -> Result<Dataset> {
    MinMax::fit(ds)?.apply(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn ds(x: Array2<f64>, y: &[f64]) -> Dataset {
        Dataset::new(x, Array1::from(y.to_vec())).unwrap()
    }

    #[test]
    fn build_z_folds_labels() {
        let z = build_z(&ds(array![[1.0, 0.5]], &[-1.0]));
        assert_eq!(z.view(), array![[-1.0, -0.5]]);
        let z = build_z(&ds(array![[1.0, 0.2, 0.8]], &[1.0]));
        assert_eq!(z.view(), array![[1.0, 0.2, 0.8]]);
    }

    #[test]
    fn normalize_min_max() {
        let d = ds(
            array![[1.0, 2.0, 5.0], [1.0, 4.0, 5.0], [1.0, 6.0, 5.0]],
            &[1.0, -1.0, 1.0],
        );
        let n = normalize(&d).unwrap();
        assert_eq!(n.x().column(1), array![0.0, 0.5, 1.0]);
        assert_eq!(n.x().column(2), array![0.0, 0.0, 0.0]);
        assert_eq!(n.x().column(0), array![1.0, 1.0, 1.0]);
        assert_eq!(normalize(&n).unwrap(), n);
    }

    #[test]
    fn normalize_rejects_non_finite_with_column() {
        let d = ds(array![[1.0, 0.0, f64::NAN], [1.0, 1.0, 2.0]], &[1.0, -1.0]);
        match normalize(&d) {
            Err(DataError::NonFinite { column }) => assert_eq!(column, 2),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn construction_validates_bias_and_labels() {
        let bad_bias = Dataset::new(array![[0.5, 1.0]], array![1.0]);
        assert!(matches!(bad_bias, Err(DataError::BiasColumn { row: 0, .. })));
        let bad_label = Dataset::new(array![[1.0, 1.0]], array![0.5]);
        assert!(matches!(bad_label, Err(DataError::Label { row: 0, .. })));
    }

    #[test]
    fn zero_one_labels_are_remapped() {
        let d = Dataset::from_features(array![[0.1], [0.2]].view(), &[0.0, 1.0]).unwrap();
        assert_eq!(d.y(), array![-1.0, 1.0]);
        assert_eq!(d.x().column(0), array![1.0, 1.0]);
        assert!(Dataset::from_features(array![[0.1], [0.2]].view(), &[-1.0, 0.0]).is_err());
    }

    #[test]
    fn split_is_deterministic() {
        let x = Array2::from_shape_fn((20, 3), |(_, j)| if j == 0 { 1.0 } else { j as f64 });
        let y: Vec<f64> = (0..20).map(|i| if i % 3 == 0 { 1.0 } else { -1.0 }).collect();
        let d = ds(x, &y);
        let spec = SplitSpec {
            train_fraction: 0.7,
            seed: 11,
            shuffle: true,
        };
        let (a, b) = d.split(&spec).unwrap();
        let (c, e) = d.split(&spec).unwrap();
        assert_eq!(a, c);
        assert_eq!(b, e);
        assert_eq!(a.n_samples() + b.n_samples(), 20);
        assert_eq!(a.n_samples(), 14);
    }
}
