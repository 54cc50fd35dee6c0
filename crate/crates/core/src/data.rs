use serde::{Deserialize, Serialize};

use crate::{Error, Result, Tensor};

pub type SampleId = usize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample<T> {
    pub id: SampleId,
    pub features: Tensor<T>,
    /// Ground truth, known only when simulating the annotator.
    pub oracle_label: Option<usize>,
    assigned_label: Option<usize>,
}

impl<T> Sample<T> {
    pub fn new(id: SampleId, features: Tensor<T>, oracle_label: Option<usize>) -> Self {
        Self {
            id,
            features,
            oracle_label,
            assigned_label: None,
        }
    }

    pub fn assigned_label(&self) -> Option<usize> {
        self.assigned_label
    }

    /// Records an annotation. A sample can be labeled once.
    pub fn assign_label(&mut self, label: usize) -> Result<()> {
        if self.assigned_label.is_some() {
            return Err(Error::AlreadyLabeled(self.id));
        }
        self.assigned_label = Some(label);
        Ok(())
    }
}

/// Samples indexed by id (`samples[i].id == i`), all with the same feature
/// shape.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleStore<T> {
    samples: Vec<Sample<T>>,
}

impl<T> SampleStore<T> {
    pub fn new(samples: Vec<Sample<T>>) -> Result<Self> {
        for (i, s) in samples.iter().enumerate() {
            if s.id != i {
                return Err(Error::InvalidConfig(format!(
                    "sample at position {i} carries id {}",
                    s.id
                )));
            }
            if s.features.shape() != samples[0].features.shape() {
                return Err(Error::Shape(format!(
                    "sample {i} has shape {:?}, expected {:?}",
                    s.features.shape(),
                    samples[0].features.shape()
                )));
            }
        }
        Ok(Self { samples })
    }

    /// Builds a store from features and optional labels, numbering ids in order.
    pub fn from_parts(parts: impl IntoIterator<Item = (Tensor<T>, Option<usize>)>) -> Result<Self> {
        Self::new(
            parts
                .into_iter()
                .enumerate()
                .map(|(i, (x, y))| Sample::new(i, x, y))
                .collect(),
        )
    }

    pub fn get(&self, id: SampleId) -> Result<&Sample<T>> {
        self.samples.get(id).ok_or(Error::UnknownSample(id))
    }

    pub fn get_mut(&mut self, id: SampleId) -> Result<&mut Sample<T>> {
        self.samples.get_mut(id).ok_or(Error::UnknownSample(id))
    }

    pub fn features(&self, id: SampleId) -> Result<&Tensor<T>> {
        self.get(id).map(|s| &s.features)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Sample<T>> {
        self.samples.iter()
    }

    pub fn iter_mut(&mut self) -> std::slice::IterMut<'_, Sample<T>> {
        self.samples.iter_mut()
    }

    /// Feature/label pairs for the given ids, using assigned labels.
    pub fn labeled(&self, ids: &[SampleId]) -> Result<Vec<(&Tensor<T>, usize)>> {
        ids.iter()
            .map(|&id| {
                let s = self.get(id)?;
                let y = s
                    .assigned_label
                    .ok_or_else(|| Error::InvalidConfig(format!("sample {id} is unlabeled")))?;
                Ok((&s.features, y))
            })
            .collect()
    }
}

/// An unlabeled pool member together with the key candidate sets are grouped
/// by: the oracle label in simulation, the model's predicted class otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub id: SampleId,
    pub group: usize,
}
