//! The logistic function and its low-degree polynomial stand-ins.
//!
//! Encrypted circuits can only add and multiply, so training under HE swaps
//! the sigmoid for a cubic least-squares fit over a bounded interval.
//! [`g8`] and [`g16`] are the standard fits over `[-8, 8]` and `[-16, 16]`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PolyError {
    #[error("least-squares fit needs degree >= 1 and grid >= degree + 1 (degree {degree}, grid {grid})")]
    BadFit { degree: usize, grid: usize },
    #[error("normal equations are singular")]
    Singular,
    #[error("interval [{lo}, {hi}] is empty")]
    BadInterval { lo: f64, hi: f64 },
    #[error("coefficient {index} is not finite")]
    NonFinite { index: usize },
    #[error("malformed polynomial record: {0}")]
    Parse(String),
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn g8(x: f64) -> f64 {
    0.5 + 0.15 * x - 0.0015 * x * x * x
}

pub fn g16(x: f64) -> f64 {
    0.5 + 0.0843 * x - 0.0002 * x * x * x
}

/// Polynomial with ascending-degree coefficients, valid on `interval`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyApprox {
    coefficients: Vec<f64>,
    lo: f64,
    hi: f64,
}

impl PolyApprox {
    pub fn new(coefficients: Vec<f64>, lo: f64, hi: f64) -> Result<Self, PolyError> {
        if lo.is_nan() || hi.is_nan() || lo >= hi {
            return Err(PolyError::BadInterval { lo, hi });
        }
        if let Some(index) = coefficients.iter().position(|c| !c.is_finite()) {
            return Err(PolyError::NonFinite { index });
        }
        if coefficients.is_empty() {
            return Err(PolyError::Parse("no coefficients".into()));
        }
        Ok(Self { coefficients, lo, hi })
    }

    pub fn g8() -> Self {
        Self::new(vec![0.5, 0.15, 0.0, -0.0015], -8.0, 8.0).unwrap()
    }

    pub fn g16() -> Self {
        Self::new(vec![0.5, 0.0843, 0.0, -0.0002], -16.0, 16.0).unwrap()
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn degree(&self) -> usize {
        self.coefficients.len() - 1
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    /// Horner evaluation.
    pub fn eval(&self, x: f64) -> f64 {
        self.coefficients.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    /// `degree,lo,hi,c0,c1,...`
    pub fn to_csv_row(&self) -> String {
        let mut fields = vec![self.degree().to_string(), self.lo.to_string(), self.hi.to_string()];
        fields.extend(self.coefficients.iter().map(f64::to_string));
        fields.join(",")
    }

    pub fn from_csv_row(line: &str) -> Result<Self, PolyError> {
        let fields: Vec<&str> = line.trim().split(',').map(str::trim).collect();
        if fields.len() < 4 {
            return Err(PolyError::Parse(format!("{} fields, need at least 4", fields.len())));
        }
        let degree: usize = fields[0]
            .parse()
            .map_err(|_| PolyError::Parse(format!("bad degree {:?}", fields[0])))?;
        let nums = fields[1..]
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| PolyError::Parse(format!("bad number {f:?}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if nums.len() - 2 != degree + 1 {
            return Err(PolyError::Parse(format!(
                "degree {degree} needs {} coefficients, found {}",
                degree + 1,
                nums.len() - 2
            )));
        }
        Self::new(nums[2..].to_vec(), nums[0], nums[1])
    }
}

impl fmt::Display for PolyApprox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_csv_row())
    }
}

impl FromStr for PolyApprox {
    type Err = PolyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let body = s
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with("degree"))
            .collect::<Vec<_>>();
        match body.as_slice() {
            [row] => Self::from_csv_row(row),
            _ => Err(PolyError::Parse(format!("expected one data row, found {}", body.len()))),
        }
    }
}

/// Which activation the trainer evaluates.
#[derive(Debug, Clone, PartialEq)]
pub enum Activation {
    Exact,
    Poly(PolyApprox),
}

impl Activation {
    pub fn g8() -> Self {
        Activation::Poly(PolyApprox::g8())
    }

    pub fn g16() -> Self {
        Activation::Poly(PolyApprox::g16())
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Activation::Exact => sigmoid(x),
            Activation::Poly(p) => p.eval(x),
        }
    }

    pub fn poly(&self) -> Option<&PolyApprox> {
        match self {
            Activation::Exact => None,
            Activation::Poly(p) => Some(p),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Activation::Exact => "exact".into(),
            Activation::Poly(p) if *p == PolyApprox::g8() => "g8".into(),
            Activation::Poly(p) if *p == PolyApprox::g16() => "g16".into(),
            Activation::Poly(p) => format!("poly[{p}]"),
        }
    }
}

impl FromStr for Activation {
    type Err = PolyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" => Ok(Activation::Exact),
            "g8" => Ok(Activation::g8()),
            "g16" => Ok(Activation::g16()),
            other => Err(PolyError::Parse(format!(
                "unknown sigmoid {other:?} (expected exact, g8 or g16)"
            ))),
        }
    }
}

fn uniform_grid(lo: f64, hi: f64, grid: usize) -> impl Iterator<Item = f64> {
    let step = (hi - lo) / (grid - 1) as f64;
    (0..grid).map(move |i| if i + 1 == grid { hi } else { lo + step * i as f64 })
}

/// Discrete least-squares fit of `target` on a uniform grid.
///
/// The abscissae are mapped to `[-1, 1]` before building the Vandermonde
/// matrix, solved by QR, and the coefficients mapped back.
pub fn fit_least_squares(
    target: impl Fn(f64) -> f64,
    interval: (f64, f64),
    degree: usize,
    grid: usize,
) -> Result<PolyApprox, PolyError> {
    let (lo, hi) = interval;
    if lo.is_nan() || hi.is_nan() || lo >= hi {
        return Err(PolyError::BadInterval { lo, hi });
    }
    if degree < 1 || grid < degree + 1 {
        return Err(PolyError::BadFit { degree, grid });
    }
    let mid = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let xs: Vec<f64> = uniform_grid(lo, hi, grid).collect();
    let a = DMatrix::from_fn(grid, degree + 1, |i, k| ((xs[i] - mid) / half).powi(k as i32));
    let b = DVector::from_iterator(grid, xs.iter().map(|&x| target(x)));

    let qr = a.qr();
    let r = qr.r();
    let scale = r.diagonal().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if r.diagonal().iter().any(|v| v.abs() <= scale * 1e-12) {
        return Err(PolyError::Singular);
    }
    let qtb = qr.q().transpose() * b;
    let t = r.solve_upper_triangular(&qtb).ok_or(PolyError::Singular)?;

    // p(x) = sum_k t_k ((x - mid) / half)^k, expanded in powers of x.
    let mut coeffs = vec![0.0; degree + 1];
    let mut basis = vec![1.0]; // ((x - mid)/half)^k, ascending in x
    for k in 0..=degree {
        if k > 0 {
            let mut next = vec![0.0; basis.len() + 1];
            for (i, &c) in basis.iter().enumerate() {
                next[i + 1] += c / half;
                next[i] -= c * mid / half;
            }
            basis = next;
        }
        for (i, &c) in basis.iter().enumerate() {
            coeffs[i] += t[k] * c;
        }
    }
    PolyApprox::new(coeffs, lo, hi)
}

/// Largest absolute deviation from `target` over a uniform grid on the
/// polynomial's interval.
pub fn max_error(p: &PolyApprox, target: impl Fn(f64) -> f64, grid: usize) -> f64 {
    let (lo, hi) = p.interval();
    uniform_grid(lo, hi, grid.max(2))
        .map(|x| (p.eval(x) - target(x)).abs())
        .fold(0.0, f64::max)
}

/// Whether `p` is nondecreasing on its interval, sampled on `grid` points.
pub fn is_monotone(p: &PolyApprox, grid: usize) -> bool {
    let (lo, hi) = p.interval();
    let vals: Vec<f64> = uniform_grid(lo, hi, grid.max(2)).map(|x| p.eval(x)).collect();
    vals.windows(2).all(|w| w[1] >= w[0])
}
