//! One annotation session: data, model, labels and the
//! Idle → Scoring → AwaitingLabels → Updating → Idle state machine.
//!
//! Every committed change is an [`Event`]; live requests and log replay both
//! go through [`Session::apply`], so a replayed session ends up in exactly
//! the state the live one had.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::PathBuf;
use std::sync::Arc;

use emoc_core::network::NetworkCheckpoint;
use emoc_core::rng::{derive, stream};
use emoc_core::select::{map_label_from_posteriors, select_batch};
use emoc_core::training::{continual_update, train};
use emoc_core::{Network, OptimizerState, PoolEntry, Sample, SampleId, SampleStore, SelectionConfig, Strategy, Tensor};
use emoc_harness::experiment::{channel_means, subtract_channel_means};
use emoc_harness::metrics::argmax;
use emoc_harness::{build_protocol, Dataset, ExperimentConfig, ExperimentRecord, SyntheticSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, ServiceError};

const TRAIN_TAG: u64 = 0x0054_524e;
const SELECT_TAG: u64 = 0x0053_454c;
const UPDATE_TAG: u64 = 0x0055_5044;
const WIDEN_TAG: u64 = 0x0057_4944;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Idle,
    Scoring,
    AwaitingLabels,
    Updating,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetRef {
    Synthetic {
        #[serde(default)]
        spec: SyntheticSpec,
    },
    /// Directory with `train.bin` and `test.bin`.
    Cifar100 { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[default]
    DeskScale,
    Paper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct CreateSession {
    pub dataset: DatasetRef,
    #[serde(default)]
    pub preset: Preset,
    /// Partial config layered over the preset, with the same keys as the
    /// experiment config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
    #[serde(default)]
    pub strategy: Strategy,
    #[serde(default)]
    pub seed: u64,
    /// Initial model to use instead of training one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<NetworkCheckpoint<f64>>,
}

fn merge(base: &mut serde_json::Value, overlay: &serde_json::Value) {
    match (base, overlay) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

impl CreateSession {
    pub fn resolve_config(&self) -> Result<ExperimentConfig> {
        let base = match self.preset {
            Preset::DeskScale => ExperimentConfig::desk_scale(),
            Preset::Paper => ExperimentConfig::paper(),
        };
        let cfg = match &self.config {
            None => base,
            Some(overlay) => {
                let mut v = serde_json::to_value(&base).expect("config serializes");
                merge(&mut v, overlay);
                serde_json::from_value(v).map_err(|e| ServiceError::invalid("invalid_config", e.to_string()))?
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// A labeling answer for one sample: an existing class id or a class name,
/// which creates the class if it does not exist yet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct LabelAnswer {
    pub sample_id: SampleId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_id: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new_class: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct SubmitLabels {
    pub batch_id: String,
    pub labels: Vec<LabelAnswer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Created {
        session_id: String,
        at: String,
        request: CreateSession,
    },
    BatchIssued {
        at: String,
        batch_id: String,
        sample_ids: Vec<SampleId>,
        suggested_label: usize,
    },
    LabelsAccepted {
        at: String,
        batch_id: String,
        /// `(sample id, class id)` in batch order.
        labels: Vec<(SampleId, usize)>,
        /// Names of classes created by this submission, in id order.
        new_classes: Vec<String>,
    },
    UpdateFinished {
        at: String,
        batch_id: String,
        digest: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryBatch {
    pub batch_id: String,
    pub sample_ids: Vec<SampleId>,
    pub suggested_label: usize,
    pub posteriors: Vec<Vec<f64>>,
    pub issued_at: String,
}

/// Selection work detached from the session so it can run without the lock.
pub struct ScoringJob {
    net: Network<f64>,
    store: Arc<SampleStore<f64>>,
    pool: Vec<SampleId>,
    cfg: ExperimentConfig,
    selection: SelectionConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredBatch {
    pub sample_ids: Vec<SampleId>,
    pub suggested_label: usize,
}

impl ScoringJob {
    /// Candidate sets are grouped by the model's predicted label since the
    /// true labels are unknown until an annotator provides them.
    pub fn run(&self) -> Result<ScoredBatch> {
        let mut entries = Vec::with_capacity(self.pool.len());
        for &id in &self.pool {
            let p = self.net.forward(self.store.features(id)?)?;
            entries.push(PoolEntry { id, group: argmax(&p) });
        }
        let training = &self.cfg.training;
        let round = select_batch(&self.net, &self.store, &entries, training.loss, &training.regularizer, &self.selection)?;
        let set = round.selected_set();
        let suggested_label = match set.label {
            Some(l) => l,
            None => {
                let ps = set
                    .sample_ids
                    .iter()
                    .map(|&id| self.net.forward(self.store.features(id)?))
                    .collect::<Result<Vec<_>, emoc_core::Error>>()?;
                let refs: Vec<&[f64]> = ps.iter().map(Vec::as_slice).collect();
                map_label_from_posteriors(&refs)?
            }
        };
        Ok(ScoredBatch { sample_ids: set.sample_ids.clone(), suggested_label })
    }
}

/// Continual-update work detached from the session.
pub struct UpdateJob {
    net: Network<f64>,
    state: OptimizerState<f64>,
    store: Arc<SampleStore<f64>>,
    old: Vec<SampleId>,
    new: Vec<SampleId>,
    cfg: ExperimentConfig,
    seed: u64,
}

pub struct UpdatedModel {
    net: Network<f64>,
    state: OptimizerState<f64>,
}

impl UpdateJob {
    pub fn run(self) -> Result<UpdatedModel> {
        let UpdateJob { mut net, mut state, store, old, new, cfg, seed } = self;
        let old = store.labeled(&old)?;
        let new = store.labeled(&new)?;
        continual_update(&mut net, &mut state, &old, &new, &cfg.training, &mut stream(seed, 0))?;
        Ok(UpdatedModel { net, state })
    }
}

#[derive(Debug, Clone)]
struct TestSet {
    features: Vec<Tensor<f64>>,
    /// Dataset class of every test sample.
    labels: Vec<usize>,
}

pub fn dataset_class_name(class: usize) -> String {
    format!("class-{class}")
}

#[derive(Debug, Clone)]
pub struct Session {
    id: String,
    created_at: String,
    updated_at: String,
    request: CreateSession,
    cfg: ExperimentConfig,
    store: Arc<SampleStore<f64>>,
    feature_shape: Vec<usize>,
    channel_means: Option<Vec<f64>>,
    test: Arc<TestSet>,
    registry: Vec<String>,
    net: Network<f64>,
    opt: OptimizerState<f64>,
    labeled: Vec<SampleId>,
    pool: Vec<SampleId>,
    status: Status,
    batch: Option<QueryBatch>,
    batches_issued: u64,
    updates_done: u64,
    history: Vec<ExperimentRecord>,
}

fn load_dataset(dataset: &DatasetRef) -> Result<Dataset> {
    match dataset {
        DatasetRef::Synthetic { spec } => Ok(Dataset::synthetic(spec)?),
        DatasetRef::Cifar100 { path } => Dataset::cifar100(path).map_err(|e| match e {
            emoc_harness::HarnessError::MissingFile(_) | emoc_harness::HarnessError::Io { .. } => {
                ServiceError::invalid("dataset_unavailable", e.to_string())
            }
            other => other.into(),
        }),
    }
}

impl Session {
    /// Loads the data, draws the start set and pool, and trains (or loads)
    /// the initial model. Deterministic in the request.
    pub fn create(id: String, at: String, request: CreateSession) -> Result<Self> {
        let cfg = request.resolve_config()?;
        let pool_size = cfg.protocol.pool_per_class * cfg.protocol.total_classes();
        if cfg.selection.set_size > pool_size {
            return Err(ServiceError::invalid(
                "invalid_config",
                format!("set size {} exceeds the pool size {pool_size}", cfg.selection.set_size),
            ));
        }
        let data = load_dataset(&request.dataset)?;
        let protocol = build_protocol(&data, &cfg.protocol, request.seed)?;
        let registry: Vec<String> = protocol.known_classes.iter().map(|&c| dataset_class_name(c)).collect();
        let class_id: HashMap<usize, usize> = protocol.known_classes.iter().enumerate().map(|(i, &c)| (c, i)).collect();

        let mut samples = Vec::with_capacity(protocol.initial.len() + protocol.pool.len());
        for &i in protocol.initial.iter().chain(&protocol.pool) {
            samples.push(Sample::new(samples.len(), data.train.features(i), Some(data.train.labels[i])));
        }
        let mut store = SampleStore::new(samples)?;
        let labeled: Vec<SampleId> = (0..protocol.initial.len()).collect();
        let pool: Vec<SampleId> = (protocol.initial.len()..store.len()).collect();
        for &id in &labeled {
            let s = store.get_mut(id)?;
            let y = class_id[&s.oracle_label.expect("dataset labels")];
            s.assign_label(y)?;
        }
        let mut test = TestSet {
            features: protocol.test.iter().map(|&i| data.test.features(i)).collect(),
            labels: protocol.test.iter().map(|&i| data.test.labels[i]).collect(),
        };
        if test.labels.is_empty() {
            return Err(ServiceError::invalid("invalid_config", "the dataset has no test samples for the chosen classes"));
        }
        let means = if data.is_image() {
            let means = channel_means(&store, &labeled)?;
            store.iter_mut().for_each(|s| subtract_channel_means(&mut s.features, &means));
            test.features.iter_mut().for_each(|x| subtract_channel_means(x, &means));
            Some(means)
        } else {
            None
        };

        let known = registry.len();
        let (net, opt) = match &request.checkpoint {
            Some(cp) => {
                let net = Network::from_checkpoint(cp.clone())?;
                if net.input_shape() != data.feature_shape.as_slice() || net.num_classes() != known {
                    return Err(ServiceError::invalid(
                        "invalid_checkpoint",
                        format!(
                            "checkpoint maps {:?} to {} classes, the session needs {:?} to {known}",
                            net.input_shape(),
                            net.num_classes(),
                            data.feature_shape
                        ),
                    ));
                }
                let opt = OptimizerState::new(&net);
                (net, opt)
            }
            None => {
                let mut net = cfg.network.build(&data.feature_shape, known, request.seed)?;
                let mut opt = OptimizerState::new(&net);
                let initial = store.labeled(&labeled)?;
                let mut rng = stream(derive(request.seed, TRAIN_TAG), 0);
                train(&mut net, &mut opt, &initial, cfg.training.initial_iterations, &cfg.training, &mut rng)?;
                (net, opt)
            }
        };

        let mut session = Session {
            id,
            created_at: at.clone(),
            updated_at: at,
            request,
            cfg,
            store: Arc::new(store),
            feature_shape: data.feature_shape.clone(),
            channel_means: means,
            test: Arc::new(test),
            registry,
            net,
            opt,
            labeled,
            pool,
            status: Status::Idle,
            batch: None,
            batches_issued: 0,
            updates_done: 0,
            history: Vec::new(),
        };
        let record = session.evaluate()?;
        session.history.push(record);
        Ok(session)
    }

    pub fn created_event(&self) -> Event {
        Event::Created { session_id: self.id.clone(), at: self.created_at.clone(), request: self.request.clone() }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn outstanding_batch(&self) -> Option<&QueryBatch> {
        self.batch.as_ref()
    }

    pub fn history(&self) -> &[ExperimentRecord] {
        &self.history
    }

    pub fn registry(&self) -> &[String] {
        &self.registry
    }

    pub fn labeled(&self) -> &[SampleId] {
        &self.labeled
    }

    pub fn pool(&self) -> &[SampleId] {
        &self.pool
    }

    pub fn network(&self) -> &Network<f64> {
        &self.net
    }

    pub fn strategy(&self) -> Strategy {
        self.request.strategy
    }

    pub fn created_at(&self) -> &str {
        &self.created_at
    }

    pub fn updated_at(&self) -> &str {
        &self.updated_at
    }

    pub fn feature_shape(&self) -> &[usize] {
        &self.feature_shape
    }

    pub fn set_size(&self) -> usize {
        self.cfg.selection.set_size
    }

    pub fn label_of(&self, id: SampleId) -> Option<usize> {
        self.store.get(id).ok().and_then(|s| s.assigned_label())
    }

    pub fn discovered_classes(&self) -> usize {
        self.labeled.iter().filter_map(|&id| self.label_of(id)).collect::<BTreeSet<_>>().len()
    }

    /// Features as the annotator should see them (mean added back).
    pub fn display_features(&self, id: SampleId) -> Result<Tensor<f64>> {
        let mut x = self.store.features(id).map_err(|_| ServiceError::UnknownSample(id))?.clone();
        if let Some(means) = &self.channel_means {
            let plane = x.len() / means.len();
            for (i, v) in x.values_mut().iter_mut().enumerate() {
                *v += means[i / plane];
            }
        }
        Ok(x)
    }

    /// Test accuracy, counting a prediction as correct when the predicted
    /// class name matches the dataset class of the test sample.
    fn evaluate(&self) -> Result<ExperimentRecord> {
        let by_name: HashMap<&str, usize> = self.registry.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let mut correct = 0;
        for (x, &c) in self.test.features.iter().zip(&self.test.labels) {
            let p = self.net.forward(x)?;
            if by_name.get(dataset_class_name(c).as_str()) == Some(&argmax(&p)) {
                correct += 1;
            }
        }
        Ok(ExperimentRecord {
            strategy: self.request.strategy,
            seed: self.request.seed,
            labeled_count: self.labeled.len(),
            accuracy_pct: 100.0 * correct as f64 / self.test.labels.len() as f64,
            discovered_classes: self.discovered_classes(),
        })
    }

    /// SHA-256 over the model, optimizer state, labels, pool, registry and
    /// progress counters.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        let mut floats = |v: &[f64]| {
            h.update((v.len() as u64).to_le_bytes());
            for x in v {
                h.update(x.to_le_bytes());
            }
        };
        floats(self.net.params().as_slice());
        floats(self.opt.velocity.as_slice());
        for &id in &self.labeled {
            h.update((id as u64).to_le_bytes());
            h.update((self.label_of(id).unwrap_or(usize::MAX) as u64).to_le_bytes());
        }
        h.update(b"pool");
        for &id in &self.pool {
            h.update((id as u64).to_le_bytes());
        }
        for name in &self.registry {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
        }
        h.update(self.batches_issued.to_le_bytes());
        h.update(self.updates_done.to_le_bytes());
        if let Some(b) = &self.batch {
            h.update(b.batch_id.as_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Moves Idle → Scoring and hands out the selection work.
    pub fn begin_scoring(&mut self) -> Result<ScoringJob> {
        match self.status {
            Status::Idle => {}
            s => return Err(ServiceError::conflict("wrong_state", format!("session is {s:?}, not Idle"))),
        }
        if self.pool.is_empty() {
            return Err(ServiceError::PoolExhausted);
        }
        self.status = Status::Scoring;
        let selection = SelectionConfig {
            strategy: self.request.strategy,
            seed: derive(derive(self.request.seed, SELECT_TAG), self.batches_issued),
            ..self.cfg.selection.clone()
        };
        Ok(ScoringJob {
            net: self.net.clone(),
            store: Arc::clone(&self.store),
            pool: self.pool.clone(),
            cfg: self.cfg.clone(),
            selection,
        })
    }

    /// Returns a Scoring session to Idle after a failed selection.
    pub fn abort_scoring(&mut self) {
        if self.status == Status::Scoring {
            self.status = Status::Idle;
        }
    }

    pub fn batch_issued(&self, scored: ScoredBatch, at: String) -> Event {
        Event::BatchIssued {
            at,
            batch_id: format!("batch-{}", self.batches_issued + 1),
            sample_ids: scored.sample_ids,
            suggested_label: scored.suggested_label,
        }
    }

    /// Checks a submission against the outstanding batch and resolves class
    /// names to ids.
    pub fn labels_accepted(&self, submit: &SubmitLabels, at: String) -> Result<Event> {
        let batch = match (self.status, &self.batch) {
            (Status::AwaitingLabels, Some(b)) => b,
            _ => {
                return Err(ServiceError::conflict(
                    "no_outstanding_batch",
                    format!("session is {:?} and has no batch awaiting labels", self.status),
                ))
            }
        };
        if submit.batch_id != batch.batch_id {
            return Err(ServiceError::conflict(
                "stale_batch",
                format!("batch {} is not the outstanding batch {}", submit.batch_id, batch.batch_id),
            ));
        }
        let mut answers: BTreeMap<SampleId, &LabelAnswer> = BTreeMap::new();
        for a in &submit.labels {
            if !batch.sample_ids.contains(&a.sample_id) {
                return Err(ServiceError::invalid("unexpected_sample", format!("sample {} is not in the batch", a.sample_id)));
            }
            if answers.insert(a.sample_id, a).is_some() {
                return Err(ServiceError::invalid("duplicate_label", format!("sample {} is labeled twice", a.sample_id)));
            }
        }
        let missing: Vec<SampleId> = batch.sample_ids.iter().copied().filter(|id| !answers.contains_key(id)).collect();
        if !missing.is_empty() {
            return Err(ServiceError::invalid("partial_labels", format!("samples {missing:?} are unlabeled")));
        }

        let mut new_classes: Vec<String> = Vec::new();
        let mut labels = Vec::with_capacity(batch.sample_ids.len());
        for &id in &batch.sample_ids {
            let class = match (answers[&id].class_id, answers[&id].new_class.as_deref()) {
                (Some(c), None) if c < self.registry.len() => c,
                (Some(c), None) => {
                    return Err(ServiceError::invalid("unknown_class", format!("class id {c} does not exist")));
                }
                (None, Some(name)) => {
                    let name = name.trim();
                    if name.is_empty() {
                        return Err(ServiceError::invalid("invalid_class_name", "class names must not be empty"));
                    }
                    match self.registry.iter().chain(&new_classes).position(|n| n == name) {
                        Some(c) => c,
                        None => {
                            new_classes.push(name.to_string());
                            self.registry.len() + new_classes.len() - 1
                        }
                    }
                }
                _ => {
                    return Err(ServiceError::invalid(
                        "invalid_label",
                        format!("sample {id} needs exactly one of classId and newClass"),
                    ))
                }
            };
            labels.push((id, class));
        }
        Ok(Event::LabelsAccepted { at, batch_id: batch.batch_id.clone(), labels, new_classes })
    }

    /// The continual update for the batch whose labels were just accepted.
    pub fn update_job(&self) -> Result<UpdateJob> {
        let batch = match (self.status, &self.batch) {
            (Status::Updating, Some(b)) => b,
            _ => return Err(ServiceError::conflict("wrong_state", "no update pending")),
        };
        let old: Vec<SampleId> = self.labeled[..self.labeled.len() - batch.sample_ids.len()].to_vec();
        Ok(UpdateJob {
            net: self.net.clone(),
            state: self.opt.clone(),
            store: Arc::clone(&self.store),
            old,
            new: batch.sample_ids.clone(),
            cfg: self.cfg.clone(),
            seed: derive(derive(self.request.seed, UPDATE_TAG), self.updates_done),
        })
    }

    /// Installs an updated model; the resulting event carries the digest of
    /// the post-update state.
    pub fn finish_update(&mut self, model: UpdatedModel, at: String) -> Result<Event> {
        let batch_id = self
            .batch
            .as_ref()
            .map(|b| b.batch_id.clone())
            .ok_or_else(|| ServiceError::conflict("wrong_state", "no update pending"))?;
        self.commit_update(model, &at)?;
        Ok(Event::UpdateFinished { at, batch_id, digest: self.digest() })
    }

    fn commit_update(&mut self, model: UpdatedModel, at: &str) -> Result<()> {
        self.net = model.net;
        self.opt = model.state;
        self.updates_done += 1;
        self.batch = None;
        self.status = Status::Idle;
        self.updated_at = at.to_string();
        let record = self.evaluate()?;
        self.history.push(record);
        Ok(())
    }

    /// Applies a logged event. `UpdateFinished` recomputes the update and
    /// checks the digest.
    pub fn apply(&mut self, event: &Event) -> Result<()> {
        match event {
            Event::Created { .. } => Err(self.diverged("duplicate created event")),
            Event::BatchIssued { at, batch_id, sample_ids, suggested_label } => {
                if !matches!(self.status, Status::Idle | Status::Scoring) {
                    return Err(self.diverged(&format!("batch issued while {:?}", self.status)));
                }
                if sample_ids.iter().any(|id| !self.pool.contains(id)) || *suggested_label >= self.registry.len() {
                    return Err(self.diverged("batch does not match the pool"));
                }
                let posteriors = sample_ids
                    .iter()
                    .map(|&id| self.net.forward(self.store.features(id)?))
                    .collect::<Result<Vec<_>, emoc_core::Error>>()?;
                self.batches_issued += 1;
                self.batch = Some(QueryBatch {
                    batch_id: batch_id.clone(),
                    sample_ids: sample_ids.clone(),
                    suggested_label: *suggested_label,
                    posteriors,
                    issued_at: at.clone(),
                });
                self.status = Status::AwaitingLabels;
                self.updated_at = at.clone();
                Ok(())
            }
            Event::LabelsAccepted { at, batch_id, labels, new_classes } => {
                match &self.batch {
                    Some(b) if &b.batch_id == batch_id && self.status == Status::AwaitingLabels => {}
                    _ => return Err(self.diverged("labels for a batch that is not outstanding")),
                }
                for name in new_classes {
                    let class = self.registry.len() as u64;
                    let mut rng = stream(derive(self.request.seed, WIDEN_TAG), class);
                    self.net.widen_output(self.cfg.network.init_sigma, &mut rng, Some(&mut self.opt.velocity))?;
                    self.registry.push(name.clone());
                }
                let store = Arc::make_mut(&mut self.store);
                for &(id, class) in labels {
                    store.get_mut(id)?.assign_label(class)?;
                }
                let ids: Vec<SampleId> = labels.iter().map(|&(id, _)| id).collect();
                self.pool.retain(|id| !ids.contains(id));
                self.labeled.extend_from_slice(&ids);
                self.status = Status::Updating;
                self.updated_at = at.clone();
                Ok(())
            }
            Event::UpdateFinished { at, batch_id, digest } => {
                match &self.batch {
                    Some(b) if &b.batch_id == batch_id && self.status == Status::Updating => {}
                    _ => return Err(self.diverged("update for a batch that is not pending")),
                }
                let model = self.update_job()?.run()?;
                self.commit_update(model, at)?;
                if &self.digest() != digest {
                    return Err(self.diverged(&format!("state digest after {batch_id} differs from the log")));
                }
                Ok(())
            }
        }
    }

    fn diverged(&self, message: &str) -> ServiceError {
        ServiceError::Replay { session: self.id.clone(), message: message.to_string() }
    }

    /// Rebuilds a session from its event log.
    pub fn replay(events: &[Event]) -> Result<Self> {
        let Some(Event::Created { session_id, at, request }) = events.first() else {
            return Err(ServiceError::Replay { session: "?".into(), message: "log does not start with created".into() });
        };
        let mut session = Session::create(session_id.clone(), at.clone(), request.clone())?;
        for e in &events[1..] {
            session.apply(e)?;
        }
        Ok(session)
    }
}
