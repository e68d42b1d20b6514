//! Synthetic credit-scoring-like data.
//!
//! Features are skewed towards zero (Beta(0.5, 3)) like utilisation and
//! delinquency ratios. Labels come from a random linear model pushed through
//! the sigmoid, after which 10% of labels are flipped.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};

use super::{DataError, Dataset, Result};
use crate::sigmoid::sigmoid;

const BETA_A: f64 = 0.5;
const BETA_B: f64 = 3.0;
/// Standard deviation of the ground-truth logit.
const LOGIT_SCALE: f64 = 3.0;
const FLIP_RATE: f64 = 0.1;

/// The generator's linear model over `[1, x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub weights: Array1<f64>,
}

impl GroundTruth {
    pub fn accuracy(&self, ds: &Dataset) -> f64 {
        crate::optim::accuracy(self.weights.view(), ds)
    }
}

pub fn synth_financial(n: usize, f: usize, seed: u64) -> Result<Dataset> {
    synth_financial_with_truth(n, f, seed).map(|(ds, _)| ds)
}

pub fn synth_financial_with_truth(n: usize, f: usize, seed: u64) -> Result<(Dataset, GroundTruth)> {
    if n < 2 || f < 1 {
        return Err(DataError::InvalidArgument(format!(
            "synthetic data needs n >= 2 and f >= 1, got n={n}, f={f}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beta = Beta::new(BETA_A, BETA_B).expect("valid beta parameters");
    let mean = BETA_A / (BETA_A + BETA_B);

    let features = Array2::from_shape_simple_fn((n, f), || beta.sample(&mut rng));
    let direction: Array1<f64> = (0..f).map(|_| StandardNormal.sample(&mut rng)).collect();

    let centered = features.dot(&direction) - mean * direction.sum();
    let sd = centered.std(0.0);
    let gain = if sd > 0.0 { LOGIT_SCALE / sd } else { 1.0 };

    let mut labels = Vec::with_capacity(n);
    for &logit in centered.iter() {
        let p = sigmoid(gain * logit);
        let mut label = if rng.random::<f64>() < p { 1.0 } else { -1.0 };
        if rng.random::<f64>() < FLIP_RATE {
            label = -label;
        }
        labels.push(label);
    }

    let mut weights = Array1::zeros(f + 1);
    weights[0] = -gain * mean * direction.sum();
    weights.slice_mut(ndarray::s![1..]).assign(&(&direction * gain));

    let names = (0..f).map(|j| format!("x{j}")).collect();
    let ds = Dataset::from_features(features.view(), &labels)?.with_feature_names(names)?;
    Ok((ds, GroundTruth { weights }))
}
