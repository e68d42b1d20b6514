//! Experiment description and its layered resolution: flags, then a TOML
//! config file, then defaults.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use qglr::he::{HeParams, NoiseModel};
use qglr::optim::{BatchMode, LrSchedule, Optimizer, RateRule, TrainConfig};
use qglr::sigmoid::Activation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[value(rename_all = "snake_case")]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    FullBatch,
    MiniBatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[value(rename_all = "snake_case")]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Nag,
    EnhancedNag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[value(rename_all = "snake_case")]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    Plaintext,
    EncryptedSim,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[value(rename_all = "snake_case")]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    BatchScaled,
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[value(rename_all = "snake_case")]
#[serde(rename_all = "snake_case")]
pub enum SigmoidKind {
    Exact,
    G8,
    G16,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::FullBatch => "full_batch",
            Mode::MiniBatch => "mini_batch",
        }
    }
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Nag => "nag",
            OptimizerKind::EnhancedNag => "enhanced_nag",
        }
    }
}

impl Execution {
    pub fn name(self) -> &'static str {
        match self {
            Execution::Plaintext => "plaintext",
            Execution::EncryptedSim => "encrypted_sim",
        }
    }
}

/// Where the samples come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Mnist,
    SynthFinancial,
    Csv(PathBuf),
}

impl DatasetSource {
    pub fn parse(s: &str) -> Self {
        match s {
            "mnist" => DatasetSource::Mnist,
            "synth_financial" => DatasetSource::SynthFinancial,
            path => DatasetSource::Csv(PathBuf::from(path)),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrLayer {
    pub max: Option<f64>,
    pub min: Option<f64>,
    #[serde(rename = "T")]
    pub t_max: Option<usize>,
    pub gamma: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeLayer {
    #[serde(rename = "logN")]
    pub log_n: Option<u32>,
    #[serde(rename = "logQ")]
    pub log_q: Option<u32>,
    #[serde(rename = "logDelta")]
    pub log_delta: Option<u32>,
    #[serde(rename = "logDeltaC")]
    pub log_delta_c: Option<u32>,
    /// Relative gaussian noise per op; 0 turns noise off.
    pub noise_sigma: Option<f64>,
}

/// One source of settings. Every field is optional; later layers fill the
/// gaps left by earlier ones.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecLayer {
    pub dataset: Option<String>,
    pub data_dir: Option<PathBuf>,
    pub synth_n: Option<usize>,
    pub synth_f: Option<usize>,
    pub train_fraction: Option<f64>,
    pub mode: Option<Mode>,
    pub optimizer: Option<OptimizerKind>,
    pub execution: Option<Execution>,
    pub iters: Option<usize>,
    pub batch: Option<usize>,
    pub rate_rule: Option<Rule>,
    pub sigmoid: Option<SigmoidKind>,
    pub shuffle: Option<bool>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub lr: LrLayer,
    #[serde(default)]
    pub he: HeLayer,
}

impl SpecLayer {
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

/// Experiment flags shared by `run` and `prepare`.
#[derive(Debug, Clone, Default, Args)]
pub struct SpecFlags {
    /// TOML file with the same keys as `spec.echo`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `mnist`, `synth_financial`, or a CSV path with a `label` column.
    #[arg(long)]
    pub dataset: Option<String>,
    /// Directory holding `mnist/`; defaults to $QGLR_DATA_DIR, then `data`.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub synth_n: Option<usize>,
    #[arg(long)]
    pub synth_f: Option<usize>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerKind>,
    #[arg(long, value_enum)]
    pub execution: Option<Execution>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long, value_enum)]
    pub rate_rule: Option<Rule>,
    #[arg(long, value_enum)]
    pub sigmoid: Option<SigmoidKind>,
    #[arg(long)]
    pub shuffle: Option<bool>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long = "lr.max")]
    pub lr_max: Option<f64>,
    #[arg(long = "lr.min")]
    pub lr_min: Option<f64>,
    #[arg(long = "lr.T")]
    pub lr_t: Option<usize>,
    #[arg(long = "lr.gamma")]
    pub lr_gamma: Option<f64>,
    #[arg(long = "he.logN")]
    pub he_log_n: Option<u32>,
    #[arg(long = "he.logQ")]
    pub he_log_q: Option<u32>,
    #[arg(long = "he.logDelta")]
    pub he_log_delta: Option<u32>,
    #[arg(long = "he.logDeltaC")]
    pub he_log_delta_c: Option<u32>,
    #[arg(long = "noise.sigma")]
    pub noise_sigma: Option<f64>,
}

impl SpecFlags {
    pub fn layer(&self) -> SpecLayer {
        SpecLayer {
            dataset: self.dataset.clone(),
            data_dir: self.data_dir.clone(),
            synth_n: self.synth_n,
            synth_f: self.synth_f,
            train_fraction: self.train_fraction,
            mode: self.mode,
            optimizer: self.optimizer,
            execution: self.execution,
            iters: self.iters,
            batch: self.batch,
            rate_rule: self.rate_rule,
            sigmoid: self.sigmoid,
            shuffle: self.shuffle,
            seed: self.seed,
            out: self.out.clone(),
            lr: LrLayer {
                max: self.lr_max,
                min: self.lr_min,
                t_max: self.lr_t,
                gamma: self.lr_gamma,
            },
            he: HeLayer {
                log_n: self.he_log_n,
                log_q: self.he_log_q,
                log_delta: self.he_log_delta,
                log_delta_c: self.he_log_delta_c,
                noise_sigma: self.noise_sigma,
            },
        }
    }

    /// Flags over the config file over defaults.
    pub fn resolve(&self) -> Result<ExperimentSpec> {
        let config = match &self.config {
            Some(path) => SpecLayer::from_toml_file(path)?,
            None => SpecLayer::default(),
        };
        ExperimentSpec::resolve(&[self.layer(), config])
    }
}

/// A fully resolved experiment. Serializes to the same keys a config file
/// accepts, so `spec.echo` reproduces the run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSpec {
    pub dataset: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
    pub synth_n: usize,
    pub synth_f: usize,
    pub train_fraction: f64,
    pub mode: Mode,
    pub optimizer: OptimizerKind,
    pub execution: Execution,
    pub iters: usize,
    pub batch: usize,
    pub rate_rule: Rule,
    pub sigmoid: SigmoidKind,
    pub shuffle: bool,
    pub seed: u64,
    pub out: PathBuf,
    pub lr: ResolvedLr,
    pub he: ResolvedHe,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResolvedLr {
    pub max: f64,
    pub min: f64,
    #[serde(rename = "T")]
    pub t_max: usize,
    pub gamma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResolvedHe {
    #[serde(rename = "logN")]
    pub log_n: u32,
    #[serde(rename = "logQ")]
    pub log_q: u32,
    #[serde(rename = "logDelta")]
    pub log_delta: u32,
    #[serde(rename = "logDeltaC")]
    pub log_delta_c: u32,
    pub noise_sigma: f64,
}

macro_rules! first {
    ($layers:expr, $($field:tt)+) => {
        $layers.iter().find_map(|l| l.$($field)+.clone())
    };
}

impl ExperimentSpec {
    /// Takes each field from the first layer that sets it.
    pub fn resolve(layers: &[SpecLayer]) -> Result<Self> {
        let train = TrainConfig::default();
        let he = HeParams::default();
        let spec = Self {
            dataset: first!(layers, dataset).unwrap_or_else(|| "mnist".into()),
            data_dir: first!(layers, data_dir),
            synth_n: first!(layers, synth_n).unwrap_or(8192),
            synth_f: first!(layers, synth_f).unwrap_or(200),
            train_fraction: first!(layers, train_fraction).unwrap_or(0.75),
            mode: first!(layers, mode).unwrap_or(Mode::FullBatch),
            optimizer: first!(layers, optimizer).unwrap_or(OptimizerKind::EnhancedNag),
            execution: first!(layers, execution).unwrap_or(Execution::Plaintext),
            iters: first!(layers, iters).unwrap_or(train.iterations),
            batch: first!(layers, batch).unwrap_or(train.batch_size),
            rate_rule: first!(layers, rate_rule).unwrap_or(Rule::BatchScaled),
            sigmoid: first!(layers, sigmoid).unwrap_or(SigmoidKind::G16),
            shuffle: first!(layers, shuffle).unwrap_or(false),
            seed: first!(layers, seed).unwrap_or(0),
            out: first!(layers, out).unwrap_or_else(|| PathBuf::from("out")),
            lr: ResolvedLr {
                max: first!(layers, lr.max).unwrap_or(train.schedule.max),
                min: first!(layers, lr.min).unwrap_or(train.schedule.min),
                t_max: first!(layers, lr.t_max).unwrap_or(train.schedule.t_max),
                gamma: first!(layers, lr.gamma).unwrap_or(train.schedule.gamma),
            },
            he: ResolvedHe {
                log_n: first!(layers, he.log_n).unwrap_or(he.log_n),
                log_q: first!(layers, he.log_q).unwrap_or(he.log_q),
                log_delta: first!(layers, he.log_delta).unwrap_or(he.log_delta),
                log_delta_c: first!(layers, he.log_delta_c).unwrap_or(he.log_delta_c),
                noise_sigma: first!(layers, he.noise_sigma).unwrap_or(0.0),
            },
        };
        spec.train_config()?;
        spec.he_params()?;
        if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
            bail!("train_fraction must lie in (0, 1), got {}", spec.train_fraction);
        }
        Ok(spec)
    }

    pub fn source(&self) -> DatasetSource {
        DatasetSource::parse(&self.dataset)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let schedule = LrSchedule::new(self.lr.max, self.lr.min, self.lr.t_max, self.lr.gamma)?;
        Ok(TrainConfig {
            mode: match self.mode {
                Mode::FullBatch => BatchMode::FullBatch,
                Mode::MiniBatch => BatchMode::MiniBatch,
            },
            optimizer: match self.optimizer {
                OptimizerKind::Nag => Optimizer::Nag,
                OptimizerKind::EnhancedNag => Optimizer::EnhancedNag,
            },
            batch_size: self.batch,
            iterations: self.iters,
            schedule,
            rate_rule: match self.rate_rule {
                Rule::BatchScaled => RateRule::BatchScaled,
                Rule::Direct => RateRule::Direct,
            },
            activation: match self.sigmoid {
                SigmoidKind::Exact => Activation::Exact,
                SigmoidKind::G8 => Activation::g8(),
                SigmoidKind::G16 => Activation::g16(),
            },
            shuffle: self.shuffle,
            seed: self.seed,
            ..TrainConfig::default()
        })
    }

    pub fn he_params(&self) -> Result<HeParams> {
        let noise = match self.he.noise_sigma {
            0.0 => NoiseModel::Off,
            s if s > 0.0 && s.is_finite() => NoiseModel::Gaussian { sigma_rel: s },
            s => bail!("noise.sigma must be a finite value >= 0, got {s}"),
        };
        let p = HeParams {
            log_n: self.he.log_n,
            log_q: self.he.log_q,
            log_delta: self.he.log_delta,
            log_delta_c: self.he.log_delta_c,
            noise,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec fields are all representable in TOML")
    }

    /// `2 - 1*(t/36)^2.5`, or the constant when the schedule is flat.
    pub fn schedule_text(&self) -> String {
        let ResolvedLr { max, min, t_max, gamma } = self.lr;
        if max == min {
            format!("{max}")
        } else {
            format!("{max} - {}*(t/{t_max})^{gamma}", max - min)
        }
    }
}
