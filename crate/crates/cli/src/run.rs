//! `run`: one experiment from a resolved spec to files on disk.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};

use qglr::data::{mnist, read_csv, synth_financial, Dataset, MinMax, SplitSpec};
use qglr::enc_train::{train_encrypted, write_ledger, LedgerRow};
use qglr::optim::{train, write_metrics, MetricsRow};

use crate::plot::{render_metric, Metric, Series};
use crate::spec::{DatasetSource, Execution, ExperimentSpec};

pub struct Splits {
    pub train: Dataset,
    pub validation: Dataset,
}

pub fn load_dataset(spec: &ExperimentSpec) -> Result<Splits> {
    let split = SplitSpec {
        train_fraction: spec.train_fraction,
        seed: spec.seed,
        shuffle: true,
    };
    Ok(match spec.source() {
        DatasetSource::Mnist => {
            let dir = match &spec.data_dir {
                Some(d) => d.join("mnist"),
                None => mnist::default_dir(),
            };
            let m = mnist::load(&dir)?;
            Splits {
                train: m.train,
                validation: m.validation,
            }
        }
        DatasetSource::SynthFinancial => {
            let (train, validation) = synth_financial(spec.synth_n, spec.synth_f, spec.seed)?.split(&split)?;
            Splits { train, validation }
        }
        DatasetSource::Csv(path) => {
            let ds = read_csv(&path).with_context(|| format!("loading {}", path.display()))?;
            let (train, validation) = ds.split(&split)?;
            let scale = MinMax::fit(&train)?;
            Splits {
                train: scale.apply(&train)?,
                validation: scale.apply(&validation)?,
            }
        }
    })
}

pub struct RunOutput {
    pub trace: Vec<MetricsRow>,
    pub weights: Vec<f64>,
    pub ledger: Option<Vec<LedgerRow>>,
    /// Lines appended to the summary for encrypted runs.
    pub extra: Vec<(String, String)>,
}

pub fn execute(spec: &ExperimentSpec, data: &Splits) -> Result<RunOutput> {
    let cfg = spec.train_config()?;
    Ok(match spec.execution {
        Execution::Plaintext => {
            let res = train(&data.train, Some(&data.validation), &cfg)?;
            RunOutput {
                trace: res.trace,
                weights: res.weights.to_vec(),
                ledger: None,
                extra: Vec::new(),
            }
        }
        Execution::EncryptedSim => {
            let params = spec.he_params()?;
            let res = train_encrypted(&data.train, Some(&data.validation), &cfg, &params)?;
            let mb = params.ciphertext_mb();
            let per_iter = res.bootstraps_per_iteration();
            let extra = vec![
                ("ring".into(), format!("N = 2^{}, Q = 2^{}", params.log_n, params.log_q)),
                (
                    "scales".into(),
                    format!("Delta = 2^{}, Delta_c = 2^{}", params.log_delta, params.log_delta_c),
                ),
                ("encrypted block size".into(), format!("{mb:.1} MB")),
                ("ct_Z blocks".into(), format!("{} x {mb:.1} MB", res.ct_z_blocks)),
                ("ct_B blocks".into(), format!("{} x {mb:.1} MB", res.ct_bbar_blocks)),
                (
                    "bits per iteration".into(),
                    res.needed_bits
                        .map_or("n/a".into(), |b| format!("{}", b - params.log_delta)),
                ),
                ("bootstraps per iteration".into(), format!("{per_iter:.2}")),
                (
                    "iterations per bootstrapping".into(),
                    if per_iter > 0.0 {
                        format!("{:.2}", 1.0 / per_iter)
                    } else {
                        "none needed".into()
                    },
                ),
            ];
            RunOutput {
                trace: res.trace,
                weights: res.weights.to_vec(),
                ledger: Some(res.ledger),
                extra,
            }
        }
    })
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(
        fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

pub fn summary_text(spec: &ExperimentSpec, data: &Splits, out: &RunOutput) -> String {
    let mut rows: Vec<(String, String)> = vec![
        (
            "dataset".into(),
            format!(
                "{} ({} train / {} validation, {} features)",
                spec.dataset,
                data.train.n_samples(),
                data.validation.n_samples(),
                data.train.n_features()
            ),
        ),
        ("method".into(), spec.optimizer.name().into()),
        ("mode".into(), spec.mode.name().into()),
        ("execution".into(), spec.execution.name().into()),
        (
            "sigmoid".into(),
            spec.train_config().map(|c| c.activation.name()).unwrap_or_default(),
        ),
        ("learning rate".into(), spec.schedule_text()),
    ];
    match out.trace.last() {
        Some(last) => rows.extend([
            ("iterations".into(), last.iteration.to_string()),
            ("accuracy".into(), format!("{:.2}%", 100.0 * last.val_acc)),
            ("auroc".into(), format!("{:.4}", last.auroc)),
            ("log-likelihood".into(), format!("{:.6}", last.log_likelihood)),
        ]),
        None => rows.push(("iterations".into(), "0".into())),
    }
    rows.extend(out.extra.iter().cloned());
    let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
    rows.iter().map(|(k, v)| format!("{k:<width$}  {v}\n")).collect()
}

/// Writes every output file and returns the summary text.
pub fn run(spec: &ExperimentSpec, plot: bool) -> Result<String> {
    let data = load_dataset(spec)?;
    let out = execute(spec, &data)?;
    let dir = &spec.out;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;

    fs::write(dir.join("spec.echo"), spec.to_toml())?;
    let mut w = create(&dir.join("metrics.csv"))?;
    write_metrics(&out.trace, &mut w)?;
    w.flush()?;
    let mut w = create(&dir.join("weights.csv"))?;
    writeln!(w, "index,weight")?;
    for (j, v) in out.weights.iter().enumerate() {
        writeln!(w, "{j},{v}")?;
    }
    w.flush()?;
    if let Some(ledger) = &out.ledger {
        let mut w = create(&dir.join("ledger.csv"))?;
        write_ledger(ledger, &mut w)?;
        w.flush()?;
    }
    if plot {
        let series = [Series::from_rows(spec.optimizer.name(), &out.trace)];
        for metric in [Metric::LogLikelihood, Metric::ValAcc] {
            fs::write(
                dir.join(format!("{}.svg", metric.name())),
                render_metric(&series, metric)?,
            )?;
        }
    }
    let summary = summary_text(spec, &data, &out);
    fs::write(dir.join("summary.txt"), &summary)?;
    Ok(summary)
}
