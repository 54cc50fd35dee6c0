use std::collections::BTreeSet;

use emoc_core::{Network, Strategy, Tensor};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{HarnessError, Result};

/// One row of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub strategy: Strategy,
    pub seed: u64,
    pub labeled_count: usize,
    pub accuracy_pct: f64,
    pub discovered_classes: usize,
}

/// Test accuracy in percent (argmax posterior against the oracle label) and
/// the number of distinct labels among `labeled_labels`.
pub fn evaluate(
    net: &Network<f64>,
    test: &[(&Tensor<f64>, usize)],
    labeled_labels: impl IntoIterator<Item = usize>,
) -> Result<(f64, usize)> {
    if test.is_empty() {
        return Err(HarnessError::Empty("test set"));
    }
    let correct = test
        .par_iter()
        .map(|&(x, y)| {
            let p = net.forward(x)?;
            Ok(usize::from(argmax(&p) == y))
        })
        .collect::<Result<Vec<_>, emoc_core::Error>>()?
        .into_iter()
        .sum::<usize>();
    let discovered = labeled_labels.into_iter().collect::<BTreeSet<_>>().len();
    Ok((100.0 * correct as f64 / test.len() as f64, discovered))
}

/// Lowest index of the largest entry.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}
