use serde::Deserialize;

use super::HeError;

/// Per-op relative noise applied to slots.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum NoiseModel {
    #[default]
    Off,
    /// Each affected slot is multiplied by `1 + sigma * N(0, 1)`.
    Gaussian { sigma_rel: f64 },
}

/// Ring size and bit budgets, all as base-2 exponents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeParams {
    pub log_n: u32,
    pub log_q: u32,
    pub log_delta: u32,
    pub log_delta_c: u32,
    pub noise: NoiseModel,
}

/// Largest ring exponent accepted; 2^19 slots of complex f64 is 8 MiB per
/// ciphertext.
pub const MAX_LOG_N: u32 = 20;

impl Default for HeParams {
    fn default() -> Self {
        Self {
            log_n: 16,
            log_q: 275,
            log_delta: 30,
            log_delta_c: 20,
            noise: NoiseModel::Off,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    #[serde(rename = "logN")]
    log_n: Option<u32>,
    #[serde(rename = "logQ")]
    log_q: Option<u32>,
    #[serde(rename = "logDelta")]
    log_delta: Option<u32>,
    #[serde(rename = "logDeltaC")]
    log_delta_c: Option<u32>,
    noise: Option<String>,
    noise_sigma: Option<f64>,
}

impl HeParams {
    pub fn validate(&self) -> Result<(), HeError> {
        let bad = |msg: String| Err(HeError::Params(msg));
        if !(1..=MAX_LOG_N).contains(&self.log_n) {
            return bad(format!("logN must be in 1..={MAX_LOG_N}, got {}", self.log_n));
        }
        if self.log_delta == 0 || self.log_delta_c == 0 {
            return bad("logDelta and logDeltaC must be positive".into());
        }
        if self.log_q <= self.log_delta {
            return bad(format!(
                "logQ ({}) must exceed logDelta ({})",
                self.log_q, self.log_delta
            ));
        }
        if let NoiseModel::Gaussian { sigma_rel } = self.noise {
            if !(sigma_rel.is_finite() && sigma_rel >= 0.0) {
                return bad(format!("noise sigma must be finite and >= 0, got {sigma_rel}"));
            }
        }
        Ok(())
    }

    pub fn slots(&self) -> usize {
        1 << (self.log_n - 1)
    }

    pub fn ring_degree(&self) -> usize {
        1 << self.log_n
    }

    /// Size of one ciphertext: two ring elements of `N` coefficients, each
    /// `logQ` bits wide.
    pub fn ciphertext_bytes(&self) -> u64 {
        2 * self.ring_degree() as u64 * self.log_q as u64 / 8
    }

    /// [`Self::ciphertext_bytes`] in decimal megabytes.
    pub fn ciphertext_mb(&self) -> f64 {
        self.ciphertext_bytes() as f64 / 1e6
    }

    /// Parses a TOML parameter block. Missing keys keep the defaults.
    ///
    /// ```toml
    /// logN = 16
    /// logQ = 275
    /// logDelta = 30
    /// logDeltaC = 20
    /// noise = "gaussian"   # or "off"
    /// noise_sigma = 1e-6
    /// ```
    pub fn from_toml(text: &str) -> Result<Self, HeError> {
        let raw: RawParams = toml::from_str(text).map_err(|e| HeError::Config(e.message().to_string()))?;
        let d = Self::default();
        let noise = match (raw.noise.as_deref(), raw.noise_sigma) {
            (None | Some("off"), None) => NoiseModel::Off,
            (None | Some("gaussian"), Some(sigma_rel)) => NoiseModel::Gaussian { sigma_rel },
            (Some("gaussian"), None) => return Err(HeError::Config("noise = \"gaussian\" needs noise_sigma".into())),
            (Some("off"), Some(_)) => return Err(HeError::Config("noise_sigma given with noise = \"off\"".into())),
            (Some(other), _) => return Err(HeError::Config(format!("unknown noise model {other:?}"))),
        };
        let p = Self {
            log_n: raw.log_n.unwrap_or(d.log_n),
            log_q: raw.log_q.unwrap_or(d.log_q),
            log_delta: raw.log_delta.unwrap_or(d.log_delta),
            log_delta_c: raw.log_delta_c.unwrap_or(d.log_delta_c),
            noise,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn to_toml(&self) -> String {
        let mut out = format!(
            "logN = {}\nlogQ = {}\nlogDelta = {}\nlogDeltaC = {}\n",
            self.log_n, self.log_q, self.log_delta, self.log_delta_c
        );
        match self.noise {
            NoiseModel::Off => out.push_str("noise = \"off\"\n"),
            NoiseModel::Gaussian { sigma_rel } => {
                out.push_str(&format!("noise = \"gaussian\"\nnoise_sigma = {sigma_rel:?}\n"))
            }
        }
        out
    }
}
