//! `qglr`: run, compare, plot, and prepare logistic-regression experiments.

mod compare;
mod plot;
mod prepare;
mod run;
mod spec;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use qglr::optim::read_metrics;

use plot::{render_metric, Metric, Series};
use spec::SpecFlags;

#[derive(Debug, Parser)]
#[command(
    name = "qglr",
    version,
    about = "Quadratic-gradient NAG logistic regression experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train once and write metrics.csv, weights.csv, spec.echo, summary.txt
    /// and, for encrypted runs, ledger.csv.
    Run {
        #[command(flatten)]
        spec: SpecFlags,
        /// Also write log_likelihood.svg and val_acc.svg.
        #[arg(long)]
        plot: bool,
    },
    /// Compare two runs given as run directories, metrics.csv files, or spec
    /// files (run first, concurrently).
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value_t = 5)]
        from: usize,
        #[arg(long, default_value_t = 30)]
        to: usize,
        #[arg(long, default_value = "A")]
        label_a: String,
        #[arg(long, default_value = "B")]
        label_b: String,
        /// Write the per-iteration table here instead of stdout.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Write a log-likelihood plot of both runs.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Render one metric from one or more metrics.csv files as SVG.
    Plot {
        #[arg(required = true)]
        metrics: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = Metric::LogLikelihood)]
        metric: Metric,
        /// Legend labels, in input order; defaults to the file paths.
        #[arg(long = "label")]
        labels: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encrypt a dataset client-side and write the slot dumps and manifest.
    Prepare {
        #[command(flatten)]
        spec: SpecFlags,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { spec, plot } => {
            let spec = spec.resolve()?;
            print!("{}", run::run(&spec, plot)?);
        }
        Command::Compare {
            a,
            b,
            from,
            to,
            label_a,
            label_b,
            csv,
            plot,
        } => {
            let (ra, rb) = compare::load_inputs(&a, &b)?;
            let c = compare::compare(&ra, &rb, from, to)?;
            if c.truncated {
                eprintln!(
                    "warning: runs have {} and {} iterations; comparing the first {}",
                    ra.len(),
                    rb.len(),
                    c.rows.len()
                );
            }
            let text = compare::report(&c, &label_a, &label_b);
            match csv {
                Some(path) => {
                    fs::write(&path, &text).with_context(|| format!("writing {}", path.display()))?;
                    println!("{}", text.lines().last().unwrap_or_default());
                }
                None => print!("{text}"),
            }
            if let Some(path) = plot {
                let series = [Series::from_rows(&label_a, &ra), Series::from_rows(&label_b, &rb)];
                fs::write(&path, render_metric(&series, Metric::LogLikelihood)?)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
        }
        Command::Plot {
            metrics,
            metric,
            labels,
            out,
        } => {
            let mut series = Vec::new();
            for (i, path) in metrics.iter().enumerate() {
                let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
                let rows = read_metrics(file).with_context(|| format!("reading {}", path.display()))?;
                let label = labels.get(i).cloned().unwrap_or_else(|| path.display().to_string());
                series.push(Series::from_rows(&label, &rows));
            }
            let svg = render_metric(&series, metric)?;
            fs::write(&out, svg).with_context(|| format!("writing {}", out.display()))?;
        }
        Command::Prepare { spec } => {
            let spec = spec.resolve()?;
            let m = prepare::prepare(&spec)?;
            println!(
                "wrote {} blocks ({} row x {} column) and {} to {}",
                m.blocks.len(),
                m.layout.row_blocks,
                m.layout.col_blocks,
                prepare::MANIFEST_FILE,
                spec.out.display()
            );
        }
    }
    Ok(())
}
