//! Batch query selection.
//!
//! Each round draws `M` candidate sets of up to `K` pool samples sharing one
//! group, scores them with the configured strategy and keeps the highest
//! score (lowest index on ties). The EMOC score of a set `X′` with MAP label
//! `ŷ′` is
//!
//! ```text
//! γ · Σ_{x′ ∈ X′} mean_{x ∈ E} ‖ ∇_θ f(x; θ) · ∇_θ J(θ; (x′, ŷ′)) ‖₁
//! ```
//!
//! where `E` is an evaluation subset of the pool drawn once per round and the
//! Jacobians `∇_θ f(x; θ)` are computed once for it.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng::stream;
use crate::training::sample_gradient;
use crate::{
    cast, Error, Jacobian, LossKind, Network, PoolEntry, RegularizerConfig, Result, SampleId,
    SampleStore, Scalar,
};

const CANDIDATE_STREAM: u64 = 1;
const EVAL_STREAM: u64 = 2;
const RANDOM_SCORE_STREAM: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    Emoc,
    Random,
    Min,
    OneVsTwo,
    Max,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Emoc,
        Strategy::Random,
        Strategy::Min,
        Strategy::OneVsTwo,
        Strategy::Max,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Emoc => "emoc",
            Strategy::Random => "random",
            Strategy::Min => "min",
            Strategy::OneVsTwo => "one_vs_two",
            Strategy::Max => "max",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "emoc" => Ok(Strategy::Emoc),
            "random" => Ok(Strategy::Random),
            "min" => Ok(Strategy::Min),
            "one_vs_two" | "1-vs-2" | "1vs2" | "one-vs-two" => Ok(Strategy::OneVsTwo),
            "max" => Ok(Strategy::Max),
            _ => Err(Error::UnknownStrategy(s.to_string())),
        }
    }
}

/// How the `min` baseline turns posteriors into an uncertainty score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MinReading {
    /// Prefer sets with the lowest mean maximum posterior: `mean(1 − max p)`.
    #[default]
    LeastConfidence,
    /// Prefer sets with the lowest mean minimum posterior: `−mean(min p)`.
    MinimumPosterior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    pub num_sets: usize,
    pub set_size: usize,
    pub eval_subset_size: usize,
    pub gamma: f64,
    pub strategy: Strategy,
    pub min_reading: MinReading,
    /// Use `∇(ℒ + ω)` rather than `∇ℒ` for the candidate gradient.
    pub include_regularizer: bool,
    pub seed: u64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            num_sets: 1000,
            set_size: 25,
            eval_subset_size: 100,
            gamma: 1.0,
            strategy: Strategy::Emoc,
            min_reading: MinReading::LeastConfidence,
            include_regularizer: true,
            seed: 0,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_sets == 0 || self.set_size == 0 || self.eval_subset_size == 0 {
            return Err(Error::InvalidConfig(
                "num_sets, set_size and eval_subset_size must be at least 1".into(),
            ));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub sample_ids: Vec<SampleId>,
    /// Group the members were drawn from.
    pub group: usize,
    /// MAP label `ŷ′`, once assigned.
    pub label: Option<usize>,
    pub score: f64,
}

impl CandidateSet {
    pub fn new(sample_ids: Vec<SampleId>, group: usize) -> Self {
        Self {
            sample_ids,
            group,
            label: None,
            score: f64::NEG_INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRound {
    pub sets: Vec<CandidateSet>,
    pub selected: usize,
    pub eval_ids: Vec<SampleId>,
}

impl ScoredRound {
    pub fn selected_set(&self) -> &CandidateSet {
        &self.sets[self.selected]
    }
}

/// Draws `M` candidate sets. For each, a group is chosen uniformly among the
/// groups present in `pool`, then `min(K, group size)` members are drawn
/// without replacement.
pub fn generate_candidate_sets(pool: &[PoolEntry], cfg: &SelectionConfig) -> Result<Vec<CandidateSet>> {
    cfg.validate()?;
    if pool.is_empty() {
        return Err(Error::Empty("unlabeled pool"));
    }
    let mut groups: BTreeMap<usize, Vec<SampleId>> = BTreeMap::new();
    for e in pool {
        groups.entry(e.group).or_default().push(e.id);
    }
    let groups: Vec<(usize, Vec<SampleId>)> = groups.into_iter().collect();
    let mut rng = stream(cfg.seed, CANDIDATE_STREAM);
    let sets = (0..cfg.num_sets)
        .map(|_| {
            let (group, members) = &groups[rng.random_range(0..groups.len())];
            let k = cfg.set_size.min(members.len());
            let ids = index::sample(&mut rng, members.len(), k)
                .into_iter()
                .map(|i| members[i])
                .collect();
            CandidateSet::new(ids, *group)
        })
        .collect();
    Ok(sets)
}

/// Index of the largest entry; the lowest index wins ties.
fn argmax<T: PartialOrd + Copy>(values: impl IntoIterator<Item = T>) -> Option<usize> {
    let mut best: Option<(usize, T)> = None;
    for (i, v) in values.into_iter().enumerate() {
        match best {
            None => {
                // Skips NaN.
                if v.partial_cmp(&v).is_some() {
                    best = Some((i, v));
                }
            }
            Some((_, b)) if v > b => best = Some((i, v)),
            _ => {}
        }
    }
    best.map(|(i, _)| i)
}

/// MAP label from member posteriors: argmax of the mean posterior.
pub fn map_label_from_posteriors<T: Scalar>(posteriors: &[&[T]]) -> Result<usize> {
    let first = posteriors.first().ok_or(Error::Empty("candidate set"))?;
    let mut mean = vec![T::zero(); first.len()];
    for p in posteriors {
        if p.len() != mean.len() {
            return Err(Error::Shape("posteriors of differing length".into()));
        }
        for (m, &v) in mean.iter_mut().zip(p.iter()) {
            *m += v;
        }
    }
    let n: T = cast(posteriors.len() as f64);
    argmax(mean.into_iter().map(|m| m / n)).ok_or(Error::Empty("posterior"))
}

pub fn map_label<T: Scalar>(net: &Network<T>, set: &CandidateSet, store: &SampleStore<T>) -> Result<usize> {
    let posteriors = set
        .sample_ids
        .iter()
        .map(|&id| net.forward(store.features(id)?))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&[T]> = posteriors.iter().map(Vec::as_slice).collect();
    map_label_from_posteriors(&refs)
}

/// `‖z − z′‖₁`.
pub fn l1_distance<T: Scalar>(z: &[T], z_prime: &[T]) -> Result<T> {
    if z.len() != z_prime.len() {
        return Err(Error::Shape(format!(
            "vectors of length {} and {}",
            z.len(),
            z_prime.len()
        )));
    }
    Ok(z.iter()
        .zip(z_prime)
        .fold(T::zero(), |acc, (&a, &b)| acc + (a - b).abs()))
}

/// Output Jacobians of the evaluation subset, computed once per round.
#[derive(Debug, Clone)]
pub struct EvalJacobians<T> {
    pub ids: Vec<SampleId>,
    pub jacobians: Vec<Jacobian<T>>,
}

impl<T: Scalar> EvalJacobians<T> {
    pub fn compute(net: &Network<T>, store: &SampleStore<T>, ids: &[SampleId]) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::Empty("evaluation subset"));
        }
        let jacobians = ids
            .par_iter()
            .map(|&id| net.output_jacobian(store.features(id)?))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            ids: ids.to_vec(),
            jacobians,
        })
    }

    /// `mean_x ‖J(x) g‖₁`.
    pub fn mean_output_change(&self, gradient: &[T]) -> T {
        let total = self
            .jacobians
            .iter()
            .map(|j| j.mul_vec(gradient).into_iter().fold(T::zero(), |a, v| a + v.abs()))
            .fold(T::zero(), |a, v| a + v);
        total / cast(self.jacobians.len() as f64)
    }
}

/// Contribution of one candidate `x′` labeled `label`, before scaling by γ.
pub fn emoc_term<T: Scalar>(
    net: &Network<T>,
    jacobians: &EvalJacobians<T>,
    store: &SampleStore<T>,
    id: SampleId,
    label: usize,
    loss: LossKind,
    reg: &RegularizerConfig,
) -> Result<T> {
    let g = sample_gradient(net, store.features(id)?, label, loss, reg)?;
    Ok(jacobians.mean_output_change(g.as_slice()))
}

fn effective_reg(reg: &RegularizerConfig, cfg: &SelectionConfig) -> RegularizerConfig {
    if cfg.include_regularizer {
        *reg
    } else {
        RegularizerConfig::NONE
    }
}

/// EMOC score of a labeled candidate set against precomputed Jacobians.
pub fn emoc_score_with<T: Scalar>(
    net: &Network<T>,
    set: &CandidateSet,
    jacobians: &EvalJacobians<T>,
    store: &SampleStore<T>,
    loss: LossKind,
    reg: &RegularizerConfig,
    cfg: &SelectionConfig,
) -> Result<T> {
    if set.sample_ids.is_empty() {
        return Err(Error::Empty("candidate set"));
    }
    let label = set
        .label
        .ok_or_else(|| Error::InvalidConfig("candidate set has no MAP label".into()))?;
    let reg = effective_reg(reg, cfg);
    let mut sum = T::zero();
    for &id in &set.sample_ids {
        sum += emoc_term(net, jacobians, store, id, label, loss, &reg)?;
    }
    Ok(sum * cast(cfg.gamma))
}

/// EMOC score of a labeled candidate set, averaging over `eval_ids`.
pub fn emoc_score<T: Scalar>(
    net: &Network<T>,
    set: &CandidateSet,
    eval_ids: &[SampleId],
    store: &SampleStore<T>,
    loss: LossKind,
    reg: &RegularizerConfig,
    cfg: &SelectionConfig,
) -> Result<T> {
    if set.sample_ids.is_empty() {
        return Err(Error::Empty("candidate set"));
    }
    let jacobians = EvalJacobians::compute(net, store, eval_ids)?;
    emoc_score_with(net, set, &jacobians, store, loss, reg, cfg)
}

/// Uncertainty baseline over member posteriors (higher is preferred).
pub fn baseline_score_from_posteriors<T: Scalar>(
    posteriors: &[&[T]],
    strategy: Strategy,
    min_reading: MinReading,
) -> Result<f64> {
    if posteriors.is_empty() {
        return Err(Error::Empty("candidate set"));
    }
    let per_sample = |p: &[T]| -> f64 {
        let mut top = f64::NEG_INFINITY;
        let mut second = f64::NEG_INFINITY;
        let mut low = f64::INFINITY;
        for v in p.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)) {
            if v > top {
                second = top;
                top = v;
            } else if v > second {
                second = v;
            }
            low = low.min(v);
        }
        match strategy {
            Strategy::Min => match min_reading {
                MinReading::LeastConfidence => 1.0 - top,
                MinReading::MinimumPosterior => -low,
            },
            // A single class has no runner-up; its margin is the full posterior.
            Strategy::OneVsTwo => -(top - second.max(0.0)),
            Strategy::Max => top,
            Strategy::Emoc | Strategy::Random => unreachable!(),
        }
    };
    match strategy {
        Strategy::Min | Strategy::OneVsTwo | Strategy::Max => {
            let total: f64 = posteriors.iter().map(|p| per_sample(p)).sum();
            Ok(total / posteriors.len() as f64)
        }
        other => Err(Error::InvalidConfig(format!(
            "`{other}` is not a posterior-based baseline"
        ))),
    }
}

/// Baseline score of a candidate set; `rng` is consumed only by `random`.
pub fn baseline_score<T: Scalar, R: Rng + ?Sized>(
    net: &Network<T>,
    set: &CandidateSet,
    store: &SampleStore<T>,
    strategy: Strategy,
    min_reading: MinReading,
    rng: &mut R,
) -> Result<f64> {
    if set.sample_ids.is_empty() {
        return Err(Error::Empty("candidate set"));
    }
    match strategy {
        Strategy::Emoc => Err(Error::InvalidConfig("emoc is not a baseline strategy".into())),
        Strategy::Random => Ok(rng.random::<f64>()),
        _ => {
            let posteriors = set
                .sample_ids
                .iter()
                .map(|&id| net.forward(store.features(id)?))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&[T]> = posteriors.iter().map(Vec::as_slice).collect();
            baseline_score_from_posteriors(&refs, strategy, min_reading)
        }
    }
}

/// Uniform subsample of at most `R` pool ids, in pool order.
pub fn draw_eval_subset(pool: &[PoolEntry], cfg: &SelectionConfig) -> Vec<SampleId> {
    let mut rng = stream(cfg.seed, EVAL_STREAM);
    let r = cfg.eval_subset_size.min(pool.len());
    let mut picked = index::sample(&mut rng, pool.len(), r).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| pool[i].id).collect()
}

/// One selection round over `pool` with the strategy in `cfg`.
pub fn select_batch<T: Scalar>(
    net: &Network<T>,
    store: &SampleStore<T>,
    pool: &[PoolEntry],
    loss: LossKind,
    reg: &RegularizerConfig,
    cfg: &SelectionConfig,
) -> Result<ScoredRound> {
    let mut sets = generate_candidate_sets(pool, cfg)?;
    let eval_ids = draw_eval_subset(pool, cfg);

    // Posteriors for every distinct candidate member.
    let mut members: Vec<SampleId> = sets.iter().flat_map(|s| s.sample_ids.iter().copied()).collect();
    members.sort_unstable();
    members.dedup();
    let posteriors: HashMap<SampleId, Vec<T>> = members
        .par_iter()
        .map(|&id| Ok((id, net.forward(store.features(id)?)?)))
        .collect::<Result<_>>()?;
    let member_posteriors = |s: &CandidateSet| -> Vec<&[T]> {
        s.sample_ids.iter().map(|id| posteriors[id].as_slice()).collect()
    };

    match cfg.strategy {
        Strategy::Emoc => {
            for s in &mut sets {
                s.label = Some(map_label_from_posteriors(&member_posteriors(s))?);
            }
            let jacobians = EvalJacobians::compute(net, store, &eval_ids)?;
            let reg = effective_reg(reg, cfg);
            // A member's term depends only on (id, label); score each pair once.
            let mut pairs: Vec<(SampleId, usize)> = sets
                .iter()
                .flat_map(|s| s.sample_ids.iter().map(move |&id| (id, s.label.unwrap_or(0))))
                .collect();
            pairs.sort_unstable();
            pairs.dedup();
            let terms: HashMap<(SampleId, usize), T> = pairs
                .par_iter()
                .map(|&(id, y)| Ok(((id, y), emoc_term(net, &jacobians, store, id, y, loss, &reg)?)))
                .collect::<Result<_>>()?;
            let gamma: T = cast(cfg.gamma);
            for s in &mut sets {
                let label = s.label.unwrap_or(0);
                let mut sum = T::zero();
                for &id in &s.sample_ids {
                    sum += terms[&(id, label)];
                }
                s.score = (sum * gamma).to_f64().unwrap_or(f64::NAN);
            }
        }
        Strategy::Random => {
            let mut rng = stream(cfg.seed, RANDOM_SCORE_STREAM);
            for s in &mut sets {
                s.score = rng.random::<f64>();
            }
        }
        strategy => {
            for s in &mut sets {
                s.score = baseline_score_from_posteriors(&member_posteriors(s), strategy, cfg.min_reading)?;
            }
        }
    }

    let selected = argmax(sets.iter().map(|s| s.score)).unwrap_or(0);
    Ok(ScoredRound {
        sets,
        selected,
        eval_ids,
    })
}
