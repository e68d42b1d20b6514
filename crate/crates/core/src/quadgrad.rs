//! Quadratic-gradient scaling.
//!
//! The diagonal scaler `b[j] = 1 / (eps + sum_i |H[j][i]|)` is built once from
//! a fixed bound on the log-likelihood Hessian. For logistic regression the
//! bound is `-1/4 X^T X`; only absolute row sums are consumed, so the sign is
//! dropped and [`hessian_bound`] returns `1/4 X^T X`.
//!
//! The quadratic gradient is then `G = b * g`, componentwise.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use thiserror::Error;

pub const DEFAULT_EPSILON: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum QuadGradError {
    #[error("epsilon must be positive, got {0}")]
    Epsilon(f64),
    #[error("matrix is {rows}x{cols}, expected square")]
    NotSquare { rows: usize, cols: usize },
    #[error("length mismatch: {left} vs {right}")]
    Length { left: usize, right: usize },
    #[error("cannot merge an empty set of scalers")]
    EmptyMerge,
    #[error("scale {index} is {value}, expected strictly positive and finite")]
    NotPositive { index: usize, value: f64 },
    #[error("malformed scaler record: {0}")]
    Parse(String),
}

/// Diagonal of the quadratic-gradient scaling matrix.
///
/// The denominators `1 / b[j]` are kept alongside `b` so that merging adds
/// them without a round trip through reciprocals.
#[derive(Debug, Clone)]
pub struct QuadScaler {
    b: Array1<f64>,
    denom: Array1<f64>,
    epsilon: f64,
}

impl PartialEq for QuadScaler {
    fn eq(&self, other: &Self) -> bool {
        self.b == other.b && self.epsilon == other.epsilon
    }
}

fn check_positive(v: &Array1<f64>) -> Result<(), QuadGradError> {
    match v.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
        Some((index, &value)) => Err(QuadGradError::NotPositive { index, value }),
        None => Ok(()),
    }
}

impl QuadScaler {
    pub fn from_diagonal(b: Array1<f64>, epsilon: f64) -> Result<Self, QuadGradError> {
        check_positive(&b)?;
        let denom = b.mapv(f64::recip);
        check_positive(&denom)?;
        Ok(Self { b, denom, epsilon })
    }

    fn from_denominators(denom: Array1<f64>, epsilon: f64) -> Result<Self, QuadGradError> {
        check_positive(&denom)?;
        let b = denom.mapv(f64::recip);
        check_positive(&b)?;
        Ok(Self { b, denom, epsilon })
    }

    pub fn diagonal(&self) -> ArrayView1<'_, f64> {
        self.b.view()
    }

    /// `1 / b[j]`, i.e. `epsilon + sum_i |H[j][i]|` for a built scaler.
    pub fn denominators(&self) -> ArrayView1<'_, f64> {
        self.denom.view()
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn len(&self) -> usize {
        self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.b.is_empty()
    }

    /// One CSV row: `epsilon,b0,b1,...`.
    pub fn to_csv_row(&self) -> String {
        std::iter::once(self.epsilon)
            .chain(self.b.iter().copied())
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn from_csv_row(line: &str) -> Result<Self, QuadGradError> {
        let nums = line
            .trim()
            .split(',')
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| QuadGradError::Parse(format!("bad number {f:?}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let (&epsilon, b) = nums
            .split_first()
            .ok_or_else(|| QuadGradError::Parse("empty row".into()))?;
        if b.is_empty() {
            return Err(QuadGradError::Parse("no diagonal entries".into()));
        }
        if !(epsilon.is_finite() && epsilon >= 0.0) {
            return Err(QuadGradError::Parse(format!("bad epsilon {epsilon}")));
        }
        Self::from_diagonal(Array1::from(b.to_vec()), epsilon)
    }
}

impl fmt::Display for QuadScaler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_csv_row())
    }
}

impl FromStr for QuadScaler {
    type Err = QuadGradError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let rows: Vec<&str> = s
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with("epsilon"))
            .collect();
        match rows.as_slice() {
            [row] => Self::from_csv_row(row),
            _ => Err(QuadGradError::Parse(format!(
                "expected one data row, found {}",
                rows.len()
            ))),
        }
    }
}

/// `1/4 X^T X` for a design matrix that includes the bias column.
pub fn hessian_bound(x: ArrayView2<'_, f64>) -> Array2<f64> {
    x.t().dot(&x) * 0.25
}

/// Absolute row sums of a square matrix.
fn abs_row_sums(h: ArrayView2<'_, f64>) -> Result<Array1<f64>, QuadGradError> {
    if h.nrows() != h.ncols() {
        return Err(QuadGradError::NotSquare {
            rows: h.nrows(),
            cols: h.ncols(),
        });
    }
    Ok(h.rows().into_iter().map(|r| r.iter().map(|v| v.abs()).sum()).collect())
}

/// `b[j] = 1 / (epsilon + sum_i |H[j][i]|)`.
pub fn build_bbar(h: ArrayView2<'_, f64>, epsilon: f64) -> Result<QuadScaler, QuadGradError> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(QuadGradError::Epsilon(epsilon));
    }
    let sums = abs_row_sums(h)?;
    QuadScaler::from_denominators(sums.mapv(|s| epsilon + s), epsilon)
}

/// Scaler straight from a design matrix through the fixed Hessian bound.
pub fn scaler_for(x: ArrayView2<'_, f64>, epsilon: f64) -> Result<QuadScaler, QuadGradError> {
    build_bbar(hessian_bound(x).view(), epsilon)
}

/// Full-data scaler from per-block scalers: `b[j] = 1 / sum_k (1 / b_k[j])`.
///
/// Each block's epsilon is carried into the sum, so the merged denominator
/// holds `k * eps` where a direct build would hold one `eps`.
pub fn merge_bbar(scalers: &[QuadScaler]) -> Result<QuadScaler, QuadGradError> {
    let first = scalers.first().ok_or(QuadGradError::EmptyMerge)?;
    let mut denom = Array1::<f64>::zeros(first.len());
    for s in scalers {
        if s.len() != first.len() {
            return Err(QuadGradError::Length {
                left: first.len(),
                right: s.len(),
            });
        }
        denom += &s.denom;
    }
    let epsilon = scalers.iter().map(|s| s.epsilon).sum();
    QuadScaler::from_denominators(denom, epsilon)
}

pub fn quad_gradient(bbar: &QuadScaler, g: ArrayView1<'_, f64>) -> Result<Array1<f64>, QuadGradError> {
    if bbar.len() != g.len() {
        return Err(QuadGradError::Length {
            left: bbar.len(),
            right: g.len(),
        });
    }
    Ok(&bbar.b * &g)
}
