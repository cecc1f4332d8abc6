//! Interaction-aware top-k medicine selection.
//!
//! A query is turned into a patient vector (the trained patient vector, or
//! an exponentially time-weighted sum of diagnosis vectors for a new
//! patient). Medicines are then picked greedily: at step `n` each remaining
//! candidate scores `p . m_n - beta * sum_{o<n} penalty(m_n, m_o)` and the
//! best one is taken.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::graph::{EntityId, RelationId, Triple};
use crate::kg::{self, check_entity, check_relation, sigmoid, EmbedError, EnergyConfig};
use crate::space::{dot, Params};

#[derive(Debug, Error, PartialEq)]
pub enum RecommendError {
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("query has no diagnoses and no patient id")]
    EmptyDiagnoses,
    #[error("candidate set is empty")]
    EmptyCandidates,
    #[error("k must be at least 1")]
    ZeroK,
}

/// How a selected pair is penalized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PenaltyForm {
    /// `||m_n + r - m_o||`: the translation residual itself.
    Residual,
    /// `max(s(z(m_n, r, m_o)), s(z(m_o, r, m_n)))`: the model's probability
    /// that the pair is an interaction fact, in either direction.
    Likelihood,
}

impl fmt::Display for PenaltyForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PenaltyForm::Residual => "residual",
            PenaltyForm::Likelihood => "likelihood",
        })
    }
}

impl FromStr for PenaltyForm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "residual" => Ok(PenaltyForm::Residual),
            "likelihood" => Ok(PenaltyForm::Likelihood),
            _ => Err(format!("unknown penalty form `{}` (expected residual or likelihood)", s)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecommendConfig {
    pub energy: EnergyConfig,
    /// Weight of the penalty sum; 0 disables it.
    pub beta: f64,
    pub penalty: PenaltyForm,
    /// Apply the relation's projection matrix inside the penalty.
    pub penalty_projection: bool,
    /// Weight the most recent diagnosis highest instead of the earliest.
    pub recent_first: bool,
    pub interaction_relations: Vec<RelationId>,
}

impl Default for RecommendConfig {
    fn default() -> Self {
        RecommendConfig {
            energy: EnergyConfig::default(),
            beta: 1.0,
            penalty: PenaltyForm::Likelihood,
            penalty_projection: false,
            recent_first: false,
            interaction_relations: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PatientQuery {
    /// Diagnoses in increasing timestamp order.
    pub diagnoses: Vec<EntityId>,
    /// A trained patient; when set its vector is used directly.
    pub patient: Option<EntityId>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Selection {
    pub medicine: EntityId,
    pub score: f64,
    pub affinity: f64,
    pub penalty: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecommendationResult {
    pub selections: Vec<Selection>,
    pub k: usize,
}

impl RecommendationResult {
    pub fn medicines(&self) -> Vec<EntityId> {
        self.selections.iter().map(|s| s.medicine).collect()
    }
}

/// `p = sum_{t=1..n} e^{-t} d_t` over diagnoses in the given order
/// (reversed when `recent_first`).
pub fn compose_patient<P: Params + ?Sized>(
    params: &P,
    diagnoses: &[EntityId],
    recent_first: bool,
) -> Result<Vec<f64>, RecommendError> {
    if diagnoses.is_empty() {
        return Err(RecommendError::EmptyDiagnoses);
    }
    let mut p = vec![0.0; params.k()];
    let ordered: Vec<EntityId> = if recent_first {
        diagnoses.iter().rev().copied().collect()
    } else {
        diagnoses.to_vec()
    };
    for (t, &d) in ordered.iter().enumerate() {
        check_entity(params, d)?;
        let w = (-((t + 1) as f64)).exp();
        for (x, v) in p.iter_mut().zip(params.entity_vec(d)) {
            *x += w * v;
        }
    }
    Ok(p)
}

fn pair_penalty<P: Params + ?Sized>(
    params: &P,
    cfg: &RecommendConfig,
    candidate: EntityId,
    selected: EntityId,
    relation: RelationId,
) -> Result<f64, EmbedError> {
    let residual_norm = |h: EntityId, t: EntityId| -> Result<f64, EmbedError> {
        let u = if cfg.penalty_projection {
            kg::residual(params, &Triple::new(h, relation, t))?
        } else {
            let r = params.relation_vec(relation);
            let (mh, mt) = (params.entity_vec(h), params.entity_vec(t));
            if r.len() != mh.len() {
                // Without projection the entity and relation spaces must agree.
                return Err(EmbedError::UnknownRelation(relation.0));
            }
            mh.iter().zip(&r).zip(&mt).map(|((a, b), c)| a + b - c).collect()
        };
        Ok(cfg.energy.norm.eval(&u))
    };
    Ok(match cfg.penalty {
        PenaltyForm::Residual => residual_norm(candidate, selected)?,
        PenaltyForm::Likelihood => {
            let forward = sigmoid(cfg.energy.bias - residual_norm(candidate, selected)?);
            let backward = sigmoid(cfg.energy.bias - residual_norm(selected, candidate)?);
            forward.max(backward)
        }
    })
}

/// Score of `candidate` given the already selected medicines, split into
/// its affinity and (weighted) penalty parts.
pub fn score_candidate<P: Params + ?Sized>(
    params: &P,
    cfg: &RecommendConfig,
    patient: &[f64],
    candidate: EntityId,
    selected: &[EntityId],
) -> Result<Selection, RecommendError> {
    check_entity(params, candidate)?;
    let affinity = dot(patient, &params.entity_vec(candidate));
    let mut penalty = 0.0;
    if cfg.beta != 0.0 {
        for &o in selected {
            check_entity(params, o)?;
            for &r in &cfg.interaction_relations {
                check_relation(params, r)?;
                penalty += pair_penalty(params, cfg, candidate, o, r)?;
            }
        }
        penalty *= cfg.beta;
    }
    Ok(Selection {
        medicine: candidate,
        score: affinity - penalty,
        affinity,
        penalty,
    })
}

/// The query's patient vector.
pub fn patient_vector<P: Params + ?Sized>(
    params: &P,
    cfg: &RecommendConfig,
    query: &PatientQuery,
) -> Result<Vec<f64>, RecommendError> {
    match query.patient {
        Some(p) => {
            check_entity(params, p)?;
            Ok(params.entity_vec(p))
        }
        None => compose_patient(params, &query.diagnoses, cfg.recent_first),
    }
}

/// Greedy top-`k` selection from a patient vector. Ties go to the lower id.
pub fn recommend_for_vector<P: Params + ?Sized>(
    params: &P,
    cfg: &RecommendConfig,
    patient: &[f64],
    k: usize,
    candidates: &[EntityId],
) -> Result<RecommendationResult, RecommendError> {
    if k == 0 {
        return Err(RecommendError::ZeroK);
    }
    if candidates.is_empty() {
        return Err(RecommendError::EmptyCandidates);
    }
    let mut pool = candidates.to_vec();
    pool.sort_unstable();
    pool.dedup();
    let mut chosen: Vec<EntityId> = Vec::new();
    let mut selections = Vec::new();
    while selections.len() < k && !pool.is_empty() {
        let mut best: Option<(usize, Selection)> = None;
        for (i, &c) in pool.iter().enumerate() {
            let s = score_candidate(params, cfg, patient, c, &chosen)?;
            if best.as_ref().map_or(true, |(_, b)| s.score > b.score) {
                best = Some((i, s));
            }
        }
        let (i, s) = best.expect("pool is non-empty");
        pool.remove(i);
        chosen.push(s.medicine);
        selections.push(s);
    }
    Ok(RecommendationResult { selections, k })
}

pub fn recommend<P: Params + ?Sized>(
    params: &P,
    cfg: &RecommendConfig,
    query: &PatientQuery,
    k: usize,
    candidates: &[EntityId],
) -> Result<RecommendationResult, RecommendError> {
    if k == 0 {
        return Err(RecommendError::ZeroK);
    }
    if candidates.is_empty() {
        return Err(RecommendError::EmptyCandidates);
    }
    let p = patient_vector(params, cfg, query)?;
    recommend_for_vector(params, cfg, &p, k, candidates)
}
