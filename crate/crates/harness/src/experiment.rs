//! Multi-seed active-learning runs.
//!
//! Per seed the protocol split, the network initialization and the initial
//! training are shared by all strategies, so curves of different strategies
//! differ only through what they select.

use emoc_core::rng::{derive, stream};
use emoc_core::select::select_batch;
use emoc_core::training::{continual_update, train};
use emoc_core::{
    Network, OptimizerState, PoolEntry, Sample, SampleId, SampleStore, SelectionConfig, Strategy, Tensor,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::export::Summary;
use crate::metrics::evaluate;
use crate::protocol::{build_protocol, Protocol};
use crate::{Dataset, ExperimentConfig, ExperimentRecord, HarnessError, Result};

const NET_TAG: u64 = 0x004e_4554;
const TRAIN_TAG: u64 = 0x0054_524e;
const SELECT_TAG: u64 = 0x0053_454c;
const UPDATE_TAG: u64 = 0x0055_5044;

/// State after the initial training, from which every strategy starts.
#[derive(Debug, Clone)]
pub struct PreparedSeed {
    pub seed: u64,
    pub protocol: Protocol,
    /// Start set first (labeled), then the pool (unlabeled).
    pub store: SampleStore<f64>,
    pub test: Vec<(Tensor<f64>, usize)>,
    pub labeled: Vec<SampleId>,
    pub pool: Vec<SampleId>,
    pub net: Network<f64>,
    pub state: OptimizerState<f64>,
    /// Per-channel means subtracted from image features.
    pub channel_means: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub strategy: Option<Strategy>,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub records: Vec<ExperimentRecord>,
    pub failures: Vec<SeedFailure>,
    pub summary: Summary,
}

/// Per-channel mean over `ids` of `[channels, h, w]` features.
pub fn channel_means(store: &SampleStore<f64>, ids: &[SampleId]) -> Result<Vec<f64>> {
    let shape = store.features(ids[0])?.shape().to_vec();
    let (channels, plane) = (shape[0], shape[1] * shape[2]);
    let mut sums = vec![0.0; channels];
    for &id in ids {
        let v = store.features(id)?.values();
        for (c, s) in sums.iter_mut().enumerate() {
            *s += v[c * plane..(c + 1) * plane].iter().sum::<f64>();
        }
    }
    let n = (ids.len() * plane) as f64;
    Ok(sums.into_iter().map(|s| s / n).collect())
}

pub fn subtract_channel_means(x: &mut Tensor<f64>, means: &[f64]) {
    let plane = x.len() / means.len();
    for (i, v) in x.values_mut().iter_mut().enumerate() {
        *v -= means[i / plane];
    }
}

/// Splits the data, builds the network and trains it on the start set.
pub fn prepare_seed(data: &Dataset, cfg: &ExperimentConfig, seed: u64) -> Result<PreparedSeed> {
    cfg.validate()?;
    let protocol = build_protocol(data, &cfg.protocol, seed)?;
    let mut samples = Vec::with_capacity(protocol.initial.len() + protocol.pool.len());
    for &i in protocol.initial.iter().chain(&protocol.pool) {
        samples.push(Sample::new(samples.len(), data.train.features(i), Some(data.train.labels[i])));
    }
    let mut store = SampleStore::new(samples)?;
    let labeled: Vec<SampleId> = (0..protocol.initial.len()).collect();
    let pool: Vec<SampleId> = (protocol.initial.len()..store.len()).collect();
    for &id in &labeled {
        let s = store.get_mut(id)?;
        let y = s.oracle_label.expect("simulation samples carry oracle labels");
        s.assign_label(y)?;
    }
    let mut test: Vec<(Tensor<f64>, usize)> = protocol
        .test
        .iter()
        .map(|&i| (data.test.features(i), data.test.labels[i]))
        .collect();

    let means = if data.is_image() {
        let means = channel_means(&store, &labeled)?;
        for s in store.iter_mut() {
            subtract_channel_means(&mut s.features, &means);
        }
        for (x, _) in &mut test {
            subtract_channel_means(x, &means);
        }
        Some(means)
    } else {
        None
    };

    let mut net = cfg.network.build(&data.feature_shape, data.num_classes, derive(seed, NET_TAG))?;
    let mut state = OptimizerState::new(&net);
    let initial = store.labeled(&labeled)?;
    let mut rng = stream(derive(seed, TRAIN_TAG), 0);
    train(&mut net, &mut state, &initial, cfg.training.initial_iterations, &cfg.training, &mut rng)?;

    Ok(PreparedSeed {
        seed,
        protocol,
        store,
        test,
        labeled,
        pool,
        net,
        state,
        channel_means: means,
    })
}

impl PreparedSeed {
    fn record(&self, strategy: Strategy, net: &Network<f64>, store: &SampleStore<f64>, labeled: &[SampleId]) -> Result<ExperimentRecord> {
        let test: Vec<(&Tensor<f64>, usize)> = self.test.iter().map(|(x, y)| (x, *y)).collect();
        let labels = labeled
            .iter()
            .map(|&id| store.get(id).map(|s| s.assigned_label().expect("labeled")))
            .collect::<Result<Vec<_>, _>>()?;
        let (accuracy_pct, discovered_classes) = evaluate(net, &test, labels)?;
        Ok(ExperimentRecord {
            strategy,
            seed: self.seed,
            labeled_count: labeled.len(),
            accuracy_pct,
            discovered_classes,
        })
    }

    /// Runs the selection loop for one strategy, starting from the prepared
    /// state, and returns one record for the start plus one per evaluation.
    pub fn run(&self, cfg: &ExperimentConfig, strategy: Strategy) -> Result<Vec<ExperimentRecord>> {
        let mut net = self.net.clone();
        let mut state = self.state.clone();
        let mut store = self.store.clone();
        let mut labeled = self.labeled.clone();
        let mut pool = self.pool.clone();
        let total = labeled.len() + pool.len();

        let mut records = vec![self.record(strategy, &net, &store, &labeled)?];
        let budget = cfg.protocol.steps_budget.unwrap_or(usize::MAX);
        let select_seed = derive(self.seed, SELECT_TAG);
        let update_seed = derive(self.seed, UPDATE_TAG);
        let mut step = 0;
        while step < budget && !pool.is_empty() {
            let entries: Vec<PoolEntry> = pool
                .iter()
                .map(|&id| {
                    let group = store.get(id)?.oracle_label.expect("oracle label");
                    Ok(PoolEntry { id, group })
                })
                .collect::<Result<_, emoc_core::Error>>()?;
            let sel = SelectionConfig {
                strategy,
                seed: derive(select_seed, step as u64),
                ..cfg.selection.clone()
            };
            let round = select_batch(&net, &store, &entries, cfg.training.loss, &cfg.training.regularizer, &sel)?;
            let batch = round.selected_set().sample_ids.clone();
            for &id in &batch {
                let s = store.get_mut(id)?;
                let y = s.oracle_label.expect("oracle label");
                s.assign_label(y)?;
            }
            pool.retain(|id| !batch.contains(id));
            {
                let old = store.labeled(&labeled)?;
                let new = store.labeled(&batch)?;
                let mut rng = stream(update_seed, step as u64);
                continual_update(&mut net, &mut state, &old, &new, &cfg.training, &mut rng)?;
            }
            labeled.extend_from_slice(&batch);
            debug_assert_eq!(labeled.len() + pool.len(), total);
            step += 1;
            if step % cfg.protocol.metrics_every == 0 || pool.is_empty() || step == budget {
                records.push(self.record(strategy, &net, &store, &labeled)?);
            }
        }
        Ok(records)
    }
}

/// Runs every strategy on every seed. Seeds run in parallel; a seed that
/// fails is reported in `failures` without affecting the others.
pub fn run_experiment(
    data: &Dataset,
    cfg: &ExperimentConfig,
    strategies: &[Strategy],
    seeds: &[u64],
) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    if strategies.is_empty() || seeds.is_empty() {
        return Err(HarnessError::Empty("strategies and seeds"));
    }
    type SeedResult = (Vec<Vec<ExperimentRecord>>, Vec<SeedFailure>);
    let per_seed: Vec<SeedResult> = seeds
        .par_iter()
        .map(|&seed| match prepare_seed(data, cfg, seed) {
            Err(e) => (
                vec![Vec::new(); strategies.len()],
                vec![SeedFailure { seed, strategy: None, error: e.to_string() }],
            ),
            Ok(prepared) => {
                let mut runs = Vec::with_capacity(strategies.len());
                let mut failures = Vec::new();
                for &strategy in strategies {
                    match prepared.run(cfg, strategy) {
                        Ok(r) => runs.push(r),
                        Err(e) => {
                            runs.push(Vec::new());
                            failures.push(SeedFailure { seed, strategy: Some(strategy), error: e.to_string() });
                        }
                    }
                }
                (runs, failures)
            }
        })
        .collect();

    let mut records = Vec::new();
    for s in 0..strategies.len() {
        for (runs, _) in &per_seed {
            records.extend_from_slice(&runs[s]);
        }
    }
    let failures = per_seed.into_iter().flat_map(|(_, f)| f).collect();
    let summary = Summary::from_records(&records, cfg.protocol.total_classes());
    Ok(ExperimentOutcome { records, failures, summary })
}
