//! Association output JSON.
//!
//! `distances` carries the final per-pair cost matrix (row-major, view A
//! rows) so that ranking metrics can be computed from the file alone.

use serde::{Deserialize, Serialize};

use super::{PairOutcome, SceneAssociation};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneAssociationRecord {
    pub scene_id: String,
    pub pairs: Vec<PairRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub cameras: [u32; 2],
    pub matches: Vec<(usize, usize, f64)>,
    pub unmatched_a: Vec<usize>,
    pub unmatched_b: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distances: Option<Vec<Vec<f64>>>,
}

impl PairRecord {
    pub fn from_outcome(cameras: (u32, u32), outcome: &PairOutcome, with_distances: bool) -> Self {
        let d = outcome.distances.values();
        Self {
            cameras: [cameras.0, cameras.1],
            matches: outcome.result.matches.clone(),
            unmatched_a: outcome.result.unmatched_a.clone(),
            unmatched_b: outcome.result.unmatched_b.clone(),
            distances: with_distances.then(|| {
                (0..d.nrows())
                    .map(|i| (0..d.ncols()).map(|j| d[(i, j)]).collect())
                    .collect()
            }),
        }
    }
}

impl SceneAssociationRecord {
    pub fn new(scene_id: &str, association: &SceneAssociation, with_distances: bool) -> Self {
        Self {
            scene_id: scene_id.to_owned(),
            pairs: association
                .iter()
                .map(|(&key, outcome)| PairRecord::from_outcome(key, outcome, with_distances))
                .collect(),
        }
    }
}

pub fn scene_association_to_json(record: &SceneAssociationRecord) -> String {
    serde_json::to_string_pretty(record).expect("association record is always serializable")
}

pub fn parse_scene_association(text: &str) -> Result<SceneAssociationRecord> {
    serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))
}
