//! Gaussian blobs: a small stand-in for an image dataset.

use emoc_core::rng::stream;
use emoc_core::{Sample, Tensor};
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub feature_dim: usize,
    /// Distance of every class mean from the origin.
    pub class_mean_scale: f64,
    pub noise_sigma: f64,
    pub samples_per_class: usize,
    /// Held-out samples per class forming the test split.
    pub test_per_class: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_classes: 20,
            feature_dim: 16,
            class_mean_scale: 4.0,
            noise_sigma: 1.0,
            samples_per_class: 60,
            test_per_class: 20,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(HarnessError::Config("num_classes must be at least 1".into()));
        }
        if self.feature_dim < 2 {
            return Err(HarnessError::Config("feature_dim must be at least 2".into()));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma > 0.0) {
            return Err(HarnessError::Config("noise_sigma must be positive".into()));
        }
        if !self.class_mean_scale.is_finite() {
            return Err(HarnessError::Config("class_mean_scale must be finite".into()));
        }
        Ok(())
    }

    /// Class means: random unit directions scaled by `class_mean_scale`.
    pub fn class_means(&self) -> Vec<Vec<f64>> {
        let mut rng = stream(self.seed, 0);
        (0..self.num_classes)
            .map(|_| loop {
                let v: Vec<f64> = (0..self.feature_dim)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 1e-12 {
                    break v.into_iter().map(|x| x / norm * self.class_mean_scale).collect();
                }
            })
            .collect()
    }

    fn draw(&self, stream_id: u64, per_class: usize) -> Vec<Sample<f64>> {
        let means = self.class_means();
        let noise = Normal::new(0.0, self.noise_sigma).expect("validated sigma");
        let mut rng = stream(self.seed, stream_id);
        let mut out = Vec::with_capacity(per_class * self.num_classes);
        for (c, mean) in means.iter().enumerate() {
            for _ in 0..per_class {
                let x = mean.iter().map(|m| m + noise.sample(&mut rng)).collect();
                out.push(Sample::new(out.len(), Tensor::from_vec(x), Some(c)));
            }
        }
        out
    }

    /// Held-out samples from the same class means.
    pub fn generate_test(&self) -> Result<Vec<Sample<f64>>> {
        self.validate()?;
        Ok(self.draw(2, self.test_per_class))
    }
}

/// `samples_per_class` draws from `N(mean_c, σ² I)` for every class `c`,
/// ordered by class.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<Sample<f64>>> {
    spec.validate()?;
    Ok(spec.draw(1, spec.samples_per_class))
}
