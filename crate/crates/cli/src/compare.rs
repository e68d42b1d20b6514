//! `compare`: per-iteration log-likelihood of two runs and how often the
//! first is at least as good as the second.

use std::fmt::Write;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use qglr::optim::{read_metrics, MetricsRow};

use crate::run;
use crate::spec::{ExperimentSpec, SpecLayer};

/// Loads metrics from a run directory, a `metrics.csv`, or a spec file
/// (`.toml` / `.echo`), which is run first. Spec files run concurrently.
pub fn load_inputs(a: &Path, b: &Path) -> Result<(Vec<MetricsRow>, Vec<MetricsRow>)> {
    let sa = spec_for(a)?;
    let sb = spec_for(b)?;
    if let (Some(x), Some(y)) = (&sa, &sb) {
        if x.out == y.out {
            bail!("both specs write to {}", x.out.display());
        }
    }
    let (ra, rb) = std::thread::scope(|scope| {
        let ha = scope.spawn(|| materialize(a, sa.as_ref()));
        let hb = scope.spawn(|| materialize(b, sb.as_ref()));
        (ha.join(), hb.join())
    });
    let ra = ra.map_err(|_| anyhow::anyhow!("run for {} panicked", a.display()))??;
    let rb = rb.map_err(|_| anyhow::anyhow!("run for {} panicked", b.display()))??;
    Ok((ra, rb))
}

fn spec_for(path: &Path) -> Result<Option<ExperimentSpec>> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("toml" | "echo") if path.is_file() => {
            Ok(Some(ExperimentSpec::resolve(&[SpecLayer::from_toml_file(path)?])?))
        }
        _ => Ok(None),
    }
}

fn materialize(path: &Path, spec: Option<&ExperimentSpec>) -> Result<Vec<MetricsRow>> {
    let csv: PathBuf = match spec {
        Some(spec) => {
            run::run(spec, false)?;
            spec.out.join("metrics.csv")
        }
        None if path.is_dir() => path.join("metrics.csv"),
        None => path.to_path_buf(),
    };
    let file = fs::File::open(&csv).with_context(|| format!("opening {}", csv.display()))?;
    let rows = read_metrics(file).with_context(|| format!("reading {}", csv.display()))?;
    if rows.is_empty() {
        bail!("{} has no iterations", csv.display());
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    /// `(iteration, ll_a, ll_b)` over the common prefix.
    pub rows: Vec<(usize, f64, f64)>,
    /// Fraction of iterations in the window where `a >= b`.
    pub dominance: f64,
    pub window: (usize, usize),
    pub max_abs_delta: f64,
    pub truncated: bool,
}

/// Pairs the runs row by row, truncating to the shorter. The dominance
/// window is clipped to the iterations both runs have.
pub fn compare(a: &[MetricsRow], b: &[MetricsRow], from: usize, to: usize) -> Result<Comparison> {
    let n = a.len().min(b.len());
    let rows: Vec<(usize, f64, f64)> = a[..n]
        .iter()
        .zip(&b[..n])
        .map(|(x, y)| (x.iteration, x.log_likelihood, y.log_likelihood))
        .collect();
    let window: Vec<&(usize, f64, f64)> = rows.iter().filter(|r| r.0 >= from && r.0 <= to).collect();
    if window.is_empty() {
        bail!("no common iterations in [{from}, {to}]");
    }
    let wins = window.iter().filter(|r| r.1 >= r.2).count();
    Ok(Comparison {
        dominance: wins as f64 / window.len() as f64,
        window: (window[0].0, window[window.len() - 1].0),
        max_abs_delta: rows.iter().map(|r| (r.1 - r.2).abs()).fold(0.0, f64::max),
        truncated: a.len() != b.len(),
        rows,
    })
}

pub fn report(c: &Comparison, label_a: &str, label_b: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "iteration,{label_a},{label_b},delta");
    for &(t, x, y) in &c.rows {
        let _ = writeln!(out, "{t},{x},{y},{}", x - y);
    }
    let _ = writeln!(
        out,
        "# dominance {:.3} over iterations {}..{} ({label_a} >= {label_b}); max |delta| {:.3e}",
        c.dominance, c.window.0, c.window.1, c.max_abs_delta
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(ll: &[f64]) -> Vec<MetricsRow> {
        ll.iter()
            .enumerate()
            .map(|(i, &v)| MetricsRow {
                iteration: i + 1,
                log_likelihood: v,
                train_acc: 0.0,
                val_acc: 0.0,
                auroc: 0.0,
                lr: 0.0,
                max_abs_input: 0.0,
                exceed_rate: 0.0,
            })
            .collect()
    }

    #[test]
    fn dominance_counts_ties_as_wins() {
        let a = rows(&[-0.9, -0.5, -0.4, -0.3]);
        let b = rows(&[-0.8, -0.5, -0.45, -0.2]);
        let c = compare(&a, &b, 2, 4).unwrap();
        assert_eq!(c.window, (2, 4));
        assert!((c.dominance - 2.0 / 3.0).abs() < 1e-15);
        assert!(!c.truncated);
    }

    #[test]
    fn identical_runs() {
        let a = rows(&[-0.7, -0.6, -0.5]);
        let c = compare(&a, &a, 1, 3).unwrap();
        assert_eq!((c.dominance, c.max_abs_delta), (1.0, 0.0));
    }

    #[test]
    fn truncates_to_shorter_run() {
        let c = compare(&rows(&[-1.0; 10]), &rows(&[-2.0; 6]), 5, 30).unwrap();
        assert!(c.truncated);
        assert_eq!(c.rows.len(), 6);
        assert_eq!(c.window, (5, 6));
        assert!(compare(&rows(&[-1.0; 3]), &rows(&[-1.0; 3]), 5, 30).is_err());
    }

    #[test]
    fn report_has_one_line_per_iteration() {
        let a = rows(&[-0.7, -0.6]);
        let text = report(&compare(&a, &a, 1, 2).unwrap(), "a", "b");
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("iteration,a,b,delta\n1,-0.7,-0.7,0\n"));
    }
}
