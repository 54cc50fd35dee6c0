//! Flattened parameter storage shared by networks, gradients and optimizer
//! state.
//!
//! Every parameterized layer owns one [`Segment`]: its weights followed by its
//! biases. Segments are laid out in layer order, so a gradient and the
//! parameters it refers to always agree on what index `j` means.

use std::ops::{Index, IndexMut};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    /// Index of the owning layer in the network.
    pub layer: usize,
    pub offset: usize,
    pub weights: usize,
    pub biases: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.weights + self.biases
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn end(&self) -> usize {
        self.offset + self.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector<T> {
    layout: Arc<Vec<Segment>>,
    values: Vec<T>,
}

impl<T: Scalar> ParameterVector<T> {
    pub(crate) fn with_layout(layout: Arc<Vec<Segment>>) -> Self {
        let n = layout.last().map_or(0, Segment::end);
        Self {
            layout,
            values: vec![T::zero(); n],
        }
    }

    /// Zero vector with the same layout as `self`.
    pub fn zeros_like(&self) -> Self {
        Self::with_layout(Arc::clone(&self.layout))
    }

    /// Rebuilds a vector from per-segment `(weights, biases)` pairs.
    pub fn from_segments(layout: &[Segment], parts: &[(Vec<T>, Vec<T>)]) -> Result<Self> {
        if layout.len() != parts.len() {
            return Err(Error::Shape(format!(
                "{} segments in layout, {} supplied",
                layout.len(),
                parts.len()
            )));
        }
        let mut values = Vec::with_capacity(layout.last().map_or(0, Segment::end));
        for (seg, (w, b)) in layout.iter().zip(parts) {
            if w.len() != seg.weights || b.len() != seg.biases || values.len() != seg.offset {
                return Err(Error::Shape(format!(
                    "segment for layer {} expects {}+{} values",
                    seg.layer, seg.weights, seg.biases
                )));
            }
            values.extend_from_slice(w);
            values.extend_from_slice(b);
        }
        Ok(Self {
            layout: Arc::new(layout.to_vec()),
            values,
        })
    }

    /// Splits into per-segment `(weights, biases)` pairs.
    pub fn to_segments(&self) -> Vec<(Vec<T>, Vec<T>)> {
        self.layout
            .iter()
            .map(|s| (self.weights(s).to_vec(), self.biases(s).to_vec()))
            .collect()
    }

    /// Replaces all values, keeping the layout.
    pub fn from_values_like(&self, values: Vec<T>) -> Result<Self> {
        if values.len() != self.values.len() {
            return Err(Error::Shape(format!(
                "parameter vector of length {} expected, got {}",
                self.values.len(),
                values.len()
            )));
        }
        Ok(Self {
            layout: Arc::clone(&self.layout),
            values,
        })
    }

    pub fn weights(&self, seg: &Segment) -> &[T] {
        &self.values[seg.offset..seg.offset + seg.weights]
    }

    pub fn biases(&self, seg: &Segment) -> &[T] {
        &self.values[seg.offset + seg.weights..seg.end()]
    }

    /// Mutable `(weights, biases)` of one segment.
    pub fn split_mut(&mut self, seg: &Segment) -> (&mut [T], &mut [T]) {
        self.values[seg.offset..seg.end()].split_at_mut(seg.weights)
    }

    pub fn segments(&self) -> &[Segment] {
        &self.layout
    }

    pub fn segment_for_layer(&self, layer: usize) -> Option<&Segment> {
        self.layout.iter().find(|s| s.layer == layer)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || self.layout == other.layout
    }

    pub(crate) fn check_same_layout(&self, other: &Self) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "parameter layouts differ (lengths {} and {})",
                self.len(),
                other.len()
            )))
        }
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: T, other: &Self) -> Result<()> {
        self.check_same_layout(other)?;
        for (a, &b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: T) {
        for v in &mut self.values {
            *v *= alpha;
        }
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        self.check_same_layout(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(T::zero(), |acc, (&a, &b)| acc + a * b))
    }

    pub fn l1_norm(&self) -> T {
        self.values.iter().fold(T::zero(), |acc, v| acc + v.abs())
    }

    pub fn squared_l2_norm(&self) -> T {
        self.values.iter().fold(T::zero(), |acc, &v| acc + v * v)
    }

    /// Inserts `count` zeros at flat position `at`, growing segment `seg_index`
    /// by `extra_weights` weights and `extra_biases` biases. Positions inside
    /// the segment are the caller's responsibility.
    pub(crate) fn grow_segment(
        &mut self,
        seg_index: usize,
        inserts: &[(usize, usize)],
        extra_weights: usize,
        extra_biases: usize,
    ) {
        // Inserts are applied back to front so earlier positions stay valid.
        let mut sorted = inserts.to_vec();
        sorted.sort_unstable_by_key(|&(at, _)| std::cmp::Reverse(at));
        for (at, count) in sorted {
            self.values
                .splice(at..at, std::iter::repeat_n(T::zero(), count));
        }
        let mut layout = (*self.layout).clone();
        layout[seg_index].weights += extra_weights;
        layout[seg_index].biases += extra_biases;
        let shift = extra_weights + extra_biases;
        for s in layout.iter_mut().skip(seg_index + 1) {
            s.offset += shift;
        }
        self.layout = Arc::new(layout);
    }
}

impl<T> Index<usize> for ParameterVector<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        &self.values[i]
    }
}

impl<T> IndexMut<usize> for ParameterVector<T> {
    fn index_mut(&mut self, i: usize) -> &mut T {
        &mut self.values[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn layout(sizes: &[(usize, usize)]) -> Vec<Segment> {
        let mut off = 0;
        sizes
            .iter()
            .enumerate()
            .map(|(i, &(w, b))| {
                let s = Segment {
                    layer: 2 * i,
                    offset: off,
                    weights: w,
                    biases: b,
                };
                off += w + b;
                s
            })
            .collect()
    }

    proptest! {
        #[test]
        fn flatten_unflatten_is_identity(
            sizes in prop::collection::vec((0usize..12, 0usize..4), 0..5),
            seed in any::<u64>(),
        ) {
            let layout = layout(&sizes);
            let mut p = ParameterVector::<f64>::with_layout(Arc::new(layout.clone()));
            for (i, v) in p.as_mut_slice().iter_mut().enumerate() {
                *v = (seed.wrapping_add(i as u64) % 1000) as f64 / 7.0;
            }
            let parts = p.to_segments();
            let back = ParameterVector::from_segments(&layout, &parts).unwrap();
            prop_assert_eq!(&back, &p);
            let total: usize = sizes.iter().map(|(w, b)| w + b).sum();
            prop_assert_eq!(p.len(), total);
        }
    }

    #[test]
    fn mismatched_segments_are_rejected() {
        let layout = layout(&[(4, 2)]);
        let bad = vec![(vec![0.0; 3], vec![0.0; 2])];
        assert!(ParameterVector::<f64>::from_segments(&layout, &bad).is_err());
    }

    #[test]
    fn axpy_rejects_foreign_layout() {
        let a = ParameterVector::<f64>::with_layout(Arc::new(layout(&[(4, 2)])));
        let mut b = ParameterVector::<f64>::with_layout(Arc::new(layout(&[(3, 3)])));
        assert!(b.axpy(1.0, &a).is_err());
    }
}
