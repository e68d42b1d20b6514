use std::io::{Read, Write};

use ndarray::{Array1, ArrayView1, ArrayView2};
use thiserror::Error;

use crate::data::Dataset;
use crate::sigmoid::Activation;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("AUROC is undefined when only one class is present")]
    OneClass,
    #[error("{scores} scores for {labels} labels")]
    Length { scores: usize, labels: usize },
    #[error("metrics line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("metrics file has no rows")]
    Empty,
}

/// Averaged log-likelihood `-(1/n) sum ln(1 + exp(-z_i . w))`.
pub fn log_likelihood(z: ArrayView2<'_, f64>, w: ArrayView1<'_, f64>) -> f64 {
    if z.nrows() == 0 {
        return 0.0;
    }
    let total: f64 = z.dot(&w).iter().map(|&u| log1p_exp_neg(u)).sum();
    -total / z.nrows() as f64
}

/// `ln(1 + exp(-u))` without overflow.
fn log1p_exp_neg(u: f64) -> f64 {
    if u >= 0.0 {
        (-u).exp().ln_1p()
    } else {
        -u + u.exp().ln_1p()
    }
}

/// Unaveraged ascent direction `g[j] = sum_i (1 - act(z_i . w)) z[i][j]`.
pub fn gradient(z: ArrayView2<'_, f64>, w: ArrayView1<'_, f64>, act: &Activation) -> Array1<f64> {
    let resid = z.dot(&w).mapv(|u| 1.0 - act.eval(u));
    z.t().dot(&resid)
}

pub fn scores(w: ArrayView1<'_, f64>, x: ArrayView2<'_, f64>) -> Array1<f64> {
    x.dot(&w)
}

/// `+1` where `w . x >= 0`, else `-1`.
pub fn predict(w: ArrayView1<'_, f64>, x: ArrayView2<'_, f64>) -> Array1<f64> {
    scores(w, x).mapv(|s| if s >= 0.0 { 1.0 } else { -1.0 })
}

pub fn accuracy(w: ArrayView1<'_, f64>, ds: &Dataset) -> f64 {
    if ds.is_empty() {
        return 0.0;
    }
    let hits = predict(w, ds.x()).iter().zip(ds.y()).filter(|(p, y)| p == y).count();
    hits as f64 / ds.n_samples() as f64
}

/// Area under the ROC curve via the Mann-Whitney rank statistic; ties get
/// their average rank.
pub fn auroc(scores: ArrayView1<'_, f64>, labels: ArrayView1<'_, f64>) -> Result<f64, MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::Length {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    let n_pos = labels.iter().filter(|&&y| y > 0.0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricError::OneClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share their mean
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] > 0.0 {
                pos_rank_sum += rank;
            }
        }
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Range of the activation inputs `z_i . w` seen by one gradient evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct InputRange {
    pub max_abs: f64,
    /// Fraction of inputs outside the polynomial's interval (0 for exact).
    pub exceed_rate: f64,
}

impl InputRange {
    pub fn measure(z: ArrayView2<'_, f64>, w: ArrayView1<'_, f64>, act: &Activation) -> Self {
        let u = z.dot(&w);
        let max_abs = u.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let exceed_rate = match act.poly() {
            Some(p) if !u.is_empty() => {
                let (lo, hi) = p.interval();
                u.iter().filter(|&&v| v < lo || v > hi).count() as f64 / u.len() as f64
            }
            _ => 0.0,
        };
        Self { max_abs, exceed_rate }
    }
}

/// One row of the per-iteration trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub iteration: usize,
    pub log_likelihood: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub auroc: f64,
    pub lr: f64,
    pub max_abs_input: f64,
    pub exceed_rate: f64,
}

pub const METRICS_HEADER: [&str; 8] = [
    "iteration",
    "log_likelihood",
    "train_acc",
    "val_acc",
    "auroc",
    "lr",
    "max_abs_input",
    "exceed_rate",
];

pub fn write_metrics<W: Write>(rows: &[MetricsRow], w: &mut W) -> std::io::Result<()> {
    writeln!(w, "{}", METRICS_HEADER.join(","))?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.iteration, r.log_likelihood, r.train_acc, r.val_acc, r.auroc, r.lr, r.max_abs_input, r.exceed_rate
        )?;
    }
    Ok(())
}

/// Reads a metrics CSV. Columns are located by name; only `iteration` and
/// `log_likelihood` are required, missing optional columns read as NaN.
pub fn read_metrics<R: Read>(mut r: R) -> Result<Vec<MetricsRow>, MetricError> {
    let mut text = String::new();
    r.read_to_string(&mut text).map_err(|e| MetricError::Parse {
        line: 0,
        message: e.to_string(),
    })?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(MetricError::Empty)?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let find = |name: &str| cols.iter().position(|c| *c == name);
    let missing = |name: &str| MetricError::Parse {
        line: 1,
        message: format!("missing column {name:?}"),
    };
    let it_col = find("iteration").ok_or_else(|| missing("iteration"))?;
    let ll_col = find("log_likelihood").ok_or_else(|| missing("log_likelihood"))?;
    let opt: Vec<Option<usize>> = METRICS_HEADER[2..].iter().map(|n| find(n)).collect();

    let mut rows = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err(MetricError::Parse {
                line: line_no,
                message: format!("expected {} fields, found {}", cols.len(), fields.len()),
            });
        }
        let num = |col: usize| {
            fields[col].parse::<f64>().map_err(|_| MetricError::Parse {
                line: line_no,
                message: format!("bad number {:?}", fields[col]),
            })
        };
        let iteration = fields[it_col].parse::<usize>().map_err(|_| MetricError::Parse {
            line: line_no,
            message: format!("bad iteration {:?}", fields[it_col]),
        })?;
        let mut rest = [f64::NAN; 6];
        for (slot, col) in rest.iter_mut().zip(&opt) {
            if let Some(c) = col {
                *slot = num(*c)?;
            }
        }
        rows.push(MetricsRow {
            iteration,
            log_likelihood: num(ll_col)?,
            train_acc: rest[0],
            val_acc: rest[1],
            auroc: rest[2],
            lr: rest[3],
            max_abs_input: rest[4],
            exceed_rate: rest[5],
        });
    }
    if rows.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(rows)
}
