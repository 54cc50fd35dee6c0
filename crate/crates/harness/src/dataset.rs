use std::path::Path;

use emoc_core::{Sample, Tensor};

use crate::cifar::{CifarSplit, RawCifar, FINE_CLASSES};
use crate::synthetic::{generate_synthetic, SyntheticSpec};
use crate::{HarnessError, Result};

#[derive(Debug, Clone)]
enum Features {
    Dense(Vec<Tensor<f64>>),
    Cifar(RawCifar),
}

/// One split of a dataset: oracle labels plus features decoded on demand.
#[derive(Debug, Clone)]
pub struct Split {
    pub labels: Vec<usize>,
    features: Features,
}

impl Split {
    pub fn from_samples(samples: Vec<Sample<f64>>) -> Result<Self> {
        let mut labels = Vec::with_capacity(samples.len());
        let mut features = Vec::with_capacity(samples.len());
        for s in samples {
            labels.push(s.oracle_label.ok_or(HarnessError::Empty("oracle label"))?);
            features.push(s.features);
        }
        Ok(Self {
            labels,
            features: Features::Dense(features),
        })
    }

    pub fn from_cifar(raw: RawCifar) -> Self {
        Self {
            labels: raw.fine_labels.iter().map(|&l| usize::from(l)).collect(),
            features: Features::Cifar(raw),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self, i: usize) -> Tensor<f64> {
        match &self.features {
            Features::Dense(v) => v[i].clone(),
            Features::Cifar(raw) => raw.features(i),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Split,
    pub test: Split,
    pub num_classes: usize,
    pub feature_shape: Vec<usize>,
}

impl Dataset {
    pub fn new(train: Split, test: Split, num_classes: usize) -> Result<Self> {
        if train.is_empty() {
            return Err(HarnessError::Empty("training split"));
        }
        let feature_shape = train.features(0).shape().to_vec();
        if let Some(&bad) = train.labels.iter().chain(&test.labels).find(|&&l| l >= num_classes) {
            return Err(HarnessError::Config(format!(
                "label {bad} exceeds the {num_classes} declared classes"
            )));
        }
        Ok(Self {
            train,
            test,
            num_classes,
            feature_shape,
        })
    }

    pub fn synthetic(spec: &SyntheticSpec) -> Result<Self> {
        let train = Split::from_samples(generate_synthetic(spec)?)?;
        let test = Split::from_samples(spec.generate_test()?)?;
        Self::new(train, test, spec.num_classes)
    }

    /// CIFAR-100 from a directory holding `train.bin` and `test.bin`.
    pub fn cifar100(dir: &Path) -> Result<Self> {
        let train = Split::from_cifar(RawCifar::load(dir, CifarSplit::Train)?);
        let test = Split::from_cifar(RawCifar::load(dir, CifarSplit::Test)?);
        Self::new(train, test, FINE_CLASSES)
    }

    /// Image-shaped (`[channels, height, width]`) features.
    pub fn is_image(&self) -> bool {
        self.feature_shape.len() == 3
    }
}
