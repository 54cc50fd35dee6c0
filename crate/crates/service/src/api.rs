//! JSON shapes of the HTTP responses.

use emoc_core::{SampleId, Strategy};
use emoc_harness::ExperimentRecord;
use serde::{Deserialize, Serialize};

use crate::session::{Session, Status};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ClassEntry {
    pub id: usize,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct HistoryPoint {
    pub labeled_count: usize,
    pub accuracy_pct: f64,
    pub discovered_classes: usize,
}

impl From<&ExperimentRecord> for HistoryPoint {
    fn from(r: &ExperimentRecord) -> Self {
        HistoryPoint {
            labeled_count: r.labeled_count,
            accuracy_pct: r.accuracy_pct,
            discovered_classes: r.discovered_classes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SessionStatus {
    pub session_id: String,
    pub status: Status,
    pub strategy: Strategy,
    pub created_at: String,
    pub updated_at: String,
    pub labeled_count: usize,
    pub pool_size: usize,
    pub batch_size: usize,
    pub discovered_classes: usize,
    pub classes: Vec<ClassEntry>,
    pub outstanding_batch_id: Option<String>,
    pub history: Vec<HistoryPoint>,
    pub digest: String,
}

impl SessionStatus {
    pub fn of(s: &Session) -> Self {
        SessionStatus {
            session_id: s.id().to_string(),
            status: s.status(),
            strategy: s.strategy(),
            created_at: s.created_at().to_string(),
            updated_at: s.updated_at().to_string(),
            labeled_count: s.labeled().len(),
            pool_size: s.pool().len(),
            batch_size: s.set_size(),
            discovered_classes: s.discovered_classes(),
            classes: s
                .registry()
                .iter()
                .enumerate()
                .map(|(id, name)| ClassEntry { id, name: name.clone() })
                .collect(),
            outstanding_batch_id: s
                .outstanding_batch()
                .filter(|_| s.status() == Status::AwaitingLabels)
                .map(|b| b.batch_id.clone()),
            history: s.history().iter().map(HistoryPoint::from).collect(),
            digest: s.digest(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SessionSummary {
    pub session_id: String,
    pub status: Status,
    pub labeled_count: usize,
    pub pool_size: usize,
    pub digest: String,
}

impl SessionSummary {
    pub fn of(s: &Session) -> Self {
        SessionSummary {
            session_id: s.id().to_string(),
            status: s.status(),
            labeled_count: s.labeled().len(),
            pool_size: s.pool().len(),
            digest: s.digest(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SessionList {
    pub sessions: Vec<SessionSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BatchSample {
    pub sample_id: SampleId,
    pub predicted_label: usize,
    pub posterior: Vec<f64>,
    /// Raw feature vector for non-image data.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<f64>>,
    pub payload_url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct QueryBatchView {
    pub session_id: String,
    pub batch_id: String,
    pub issued_at: String,
    pub suggested_label: ClassEntry,
    pub samples: Vec<BatchSample>,
}

impl QueryBatchView {
    pub fn of(s: &Session) -> Option<Self> {
        let b = s.outstanding_batch()?;
        let image = is_image(s.feature_shape());
        let samples = b
            .sample_ids
            .iter()
            .zip(&b.posteriors)
            .map(|(&id, p)| BatchSample {
                sample_id: id,
                predicted_label: emoc_harness::metrics::argmax(p),
                posterior: p.clone(),
                features: (!image).then(|| s.display_features(id).map(|x| x.into_values()).unwrap_or_default()),
                payload_url: format!("/sessions/{}/samples/{id}", s.id()),
            })
            .collect();
        Some(QueryBatchView {
            session_id: s.id().to_string(),
            batch_id: b.batch_id.clone(),
            issued_at: b.issued_at.clone(),
            suggested_label: ClassEntry { id: b.suggested_label, name: s.registry()[b.suggested_label].clone() },
            samples,
        })
    }
}

/// Body of a 202 answer while scoring or updating runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Pending {
    pub session_id: String,
    pub status: Status,
    pub retry_after_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SampleVector {
    pub sample_id: SampleId,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub label: Option<usize>,
}

/// `[1 | 3, h, w]` features are rendered as images.
pub fn is_image(shape: &[usize]) -> bool {
    matches!(shape, [1 | 3, h, w] if *h > 0 && *w > 0)
}
