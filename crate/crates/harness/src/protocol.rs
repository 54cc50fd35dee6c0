//! Exploration-with-discovery split: a labeled start set drawn from a few
//! known classes, an unlabeled pool mixing more known-class samples with
//! samples of novel classes, and a test set covering all chosen classes.

use emoc_core::rng::{derive, stream};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::{Dataset, HarnessError, Result};

const PROTOCOL_TAG: u64 = 0x5052_4f54;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolConfig {
    pub num_known_classes: usize,
    pub num_novel_classes: usize,
    pub initial_per_class: usize,
    pub pool_per_class: usize,
    /// Number of seeds averaged in a comparison.
    pub num_initializations: usize,
    /// Maximum number of selection steps; `None` runs until the pool is empty.
    pub steps_budget: Option<usize>,
    /// Evaluate after every `metrics_every` selected batches.
    pub metrics_every: usize,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            num_known_classes: 10,
            num_novel_classes: 10,
            initial_per_class: 100,
            pool_per_class: 100,
            num_initializations: 9,
            steps_budget: None,
            metrics_every: 1,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.num_known_classes,
            self.num_novel_classes,
            self.initial_per_class,
            self.pool_per_class,
            self.num_initializations,
            self.metrics_every,
        ];
        if counts.contains(&0) {
            return Err(HarnessError::Config("protocol counts must be at least 1".into()));
        }
        Ok(())
    }

    pub fn total_classes(&self) -> usize {
        self.num_known_classes + self.num_novel_classes
    }
}

/// Indices into the dataset's splits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Protocol {
    pub known_classes: Vec<usize>,
    pub novel_classes: Vec<usize>,
    /// Training-split indices labeled from the start.
    pub initial: Vec<usize>,
    /// Training-split indices available for querying.
    pub pool: Vec<usize>,
    /// Test-split indices of all known and novel classes.
    pub test: Vec<usize>,
}

pub fn build_protocol(data: &Dataset, cfg: &ProtocolConfig, seed: u64) -> Result<Protocol> {
    cfg.validate()?;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); data.num_classes];
    for (i, &y) in data.train.labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let mut rng = stream(derive(seed, PROTOCOL_TAG), 0);
    let mut classes: Vec<usize> = (0..data.num_classes).filter(|&c| !by_class[c].is_empty()).collect();
    if classes.len() < cfg.total_classes() {
        return Err(HarnessError::Protocol(format!(
            "{} classes needed, dataset has {}",
            cfg.total_classes(),
            classes.len()
        )));
    }
    classes.shuffle(&mut rng);
    let known: Vec<usize> = classes[..cfg.num_known_classes].to_vec();
    let novel: Vec<usize> = classes[cfg.num_known_classes..cfg.total_classes()].to_vec();

    let mut initial = Vec::new();
    let mut pool = Vec::new();
    for &c in &known {
        let need = cfg.initial_per_class + cfg.pool_per_class;
        let members = &mut by_class[c];
        if members.len() < need {
            return Err(HarnessError::Protocol(format!(
                "known class {c} has {} samples, {need} needed",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        initial.extend_from_slice(&members[..cfg.initial_per_class]);
        pool.extend_from_slice(&members[cfg.initial_per_class..need]);
    }
    for &c in &novel {
        let members = &mut by_class[c];
        if members.len() < cfg.pool_per_class {
            return Err(HarnessError::Protocol(format!(
                "novel class {c} has {} samples, {} needed",
                members.len(),
                cfg.pool_per_class
            )));
        }
        members.shuffle(&mut rng);
        pool.extend_from_slice(&members[..cfg.pool_per_class]);
    }
    let chosen: std::collections::HashSet<usize> = known.iter().chain(&novel).copied().collect();
    let test = (0..data.test.len())
        .filter(|&i| chosen.contains(&data.test.labels[i]))
        .collect();
    Ok(Protocol {
        known_classes: known,
        novel_classes: novel,
        initial,
        pool,
        test,
    })
}
