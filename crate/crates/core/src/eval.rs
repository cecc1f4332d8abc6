//! Recommendation and link-prediction metrics, the co-occurrence baseline
//! and the cold-start protocol.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::graph::{BipartiteGraph, Edge, EntityId, RelationId, TripleStore};
use crate::space::{dot, Params};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("reference set is empty")]
    EmptyReference,
    #[error("held-out edge set is empty")]
    EmptyHeldOut,
    #[error("cold-start target {0} has training edges")]
    Leakage(u32),
    #[error("unknown entity id {0}")]
    UnknownEntity(u32),
}

/// `|A n B| / |A u B|`.
pub fn jaccard(recommended: &BTreeSet<EntityId>, reference: &BTreeSet<EntityId>) -> Result<f64, EvalError> {
    if reference.is_empty() {
        return Err(EvalError::EmptyReference);
    }
    let inter = recommended.intersection(reference).count();
    let union = recommended.union(reference).count();
    Ok(inter as f64 / union as f64)
}

/// Unordered medicine pairs linked by an interaction triple in either
/// direction.
#[derive(Clone, Debug, Default)]
pub struct InteractionIndex {
    pairs: HashSet<(EntityId, EntityId)>,
}

fn ordered(a: EntityId, b: EntityId) -> (EntityId, EntityId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

impl InteractionIndex {
    pub fn new(store: &TripleStore, relations: &[RelationId]) -> Self {
        let pairs = relations
            .iter()
            .flat_map(|&r| store.with_relation(r))
            .map(|t| ordered(t.head, t.tail))
            .collect();
        InteractionIndex { pairs }
    }

    pub fn interacts(&self, a: EntityId, b: EntityId) -> bool {
        self.pairs.contains(&ordered(a, b))
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Number of interacting unordered pairs within one set.
    pub fn violations(&self, set: &[EntityId]) -> usize {
        let mut n = 0;
        for (i, &a) in set.iter().enumerate() {
            for &b in &set[i + 1..] {
                if a != b && self.interacts(a, b) {
                    n += 1;
                }
            }
        }
        n
    }
}

/// Fraction of sets that contain at least one interacting pair.
pub fn ddi_rate(recommendations: &[Vec<EntityId>], interactions: &InteractionIndex) -> f64 {
    if recommendations.is_empty() {
        return 0.0;
    }
    let bad = recommendations.iter().filter(|s| interactions.violations(s) > 0).count();
    bad as f64 / recommendations.len() as f64
}

/// Fraction of all within-set unordered pairs that interact.
pub fn pair_ddi_rate(recommendations: &[Vec<EntityId>], interactions: &InteractionIndex) -> f64 {
    let pairs: usize = recommendations.iter().map(|s| s.len() * s.len().saturating_sub(1) / 2).sum();
    if pairs == 0 {
        return 0.0;
    }
    let bad: usize = recommendations.iter().map(|s| interactions.violations(s)).sum();
    bad as f64 / pairs as f64
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RankingResult {
    pub queries: usize,
    pub hits_at_n: f64,
    pub mean_rank: f64,
    /// Mean over queries of the number of ranked candidates.
    pub mean_pool: f64,
    pub ranks: Vec<usize>,
}

impl RankingResult {
    /// Mean rank of a uniformly random ordering of the same pools.
    pub fn chance_mean_rank(&self) -> f64 {
        (self.mean_pool + 1.0) / 2.0
    }
}

/// Filtered rank of the target of each held-out edge among `candidates`
/// by affinity `p . m`. Every other item that `known` links to the patient
/// is removed from the pool. The target is ranked even if it is not listed
/// among the candidates. Equal scores rank the lower id first.
pub fn ranking_eval<P: Params + ?Sized>(
    params: &P,
    held_out: &[Edge],
    candidates: &[EntityId],
    known: &BipartiteGraph,
    n: usize,
) -> Result<RankingResult, EvalError> {
    let mut ranks = Vec::with_capacity(held_out.len());
    let mut pool_total = 0usize;
    let mut pool: Vec<EntityId> = candidates.to_vec();
    pool.sort_unstable();
    pool.dedup();
    for e in held_out {
        for id in [e.user, e.item] {
            if id.index() >= params.num_entities() {
                return Err(EvalError::UnknownEntity(id.0));
            }
        }
        let p = params.entity_vec(e.user);
        let target = dot(&p, &params.entity_vec(e.item));
        let mut rank = 1;
        let mut size = 1;
        for &c in &pool {
            if c == e.item || known.contains(e.user, c) {
                continue;
            }
            size += 1;
            let s = dot(&p, &params.entity_vec(c));
            if s > target || (s == target && c < e.item) {
                rank += 1;
            }
        }
        pool_total += size;
        ranks.push(rank);
    }
    let queries = ranks.len();
    if queries == 0 {
        return Ok(RankingResult::default());
    }
    let hits = ranks.iter().filter(|&&r| r <= n).count();
    Ok(RankingResult {
        queries,
        hits_at_n: hits as f64 / queries as f64,
        mean_rank: ranks.iter().sum::<usize>() as f64 / queries as f64,
        mean_pool: pool_total as f64 / queries as f64,
        ranks,
    })
}

/// Disease-medicine co-occurrence counts: the number of training patients
/// having both the diagnosis and the prescription.
#[derive(Clone, Debug, Default)]
pub struct Cooccurrence {
    counts: BTreeMap<EntityId, BTreeMap<EntityId, u64>>,
}

impl Cooccurrence {
    pub fn new(train_pm: &BipartiteGraph, pd: &BipartiteGraph) -> Self {
        let mut counts: BTreeMap<EntityId, BTreeMap<EntityId, u64>> = BTreeMap::new();
        for patient in pd.users() {
            let meds = train_pm.user_items(patient);
            if meds.is_empty() {
                continue;
            }
            for d in pd.user_items(patient) {
                let row = counts.entry(d).or_default();
                for &m in &meds {
                    *row.entry(m).or_insert(0) += 1;
                }
            }
        }
        Cooccurrence { counts }
    }

    pub fn count(&self, disease: EntityId, medicine: EntityId) -> u64 {
        self.counts
            .get(&disease)
            .and_then(|r| r.get(&medicine))
            .copied()
            .unwrap_or(0)
    }

    pub fn knows(&self, disease: EntityId) -> bool {
        self.counts.contains_key(&disease)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BaselineOutput {
    pub medicines: BTreeSet<EntityId>,
    /// Query diagnoses never seen with a training prescription.
    pub unknown: Vec<EntityId>,
}

/// Union over the diagnoses of the `k` medicines co-occurring most often
/// with each one; ties go to the lower id. Medicines in `exclude` are
/// skipped.
pub fn k_most_frequent_baseline(
    table: &Cooccurrence,
    diagnoses: &[EntityId],
    k: usize,
    exclude: &BTreeSet<EntityId>,
) -> BaselineOutput {
    let mut out = BaselineOutput::default();
    for &d in diagnoses {
        let Some(row) = table.counts.get(&d) else {
            if !out.unknown.contains(&d) {
                out.unknown.push(d);
            }
            continue;
        };
        let mut ranked: Vec<(EntityId, u64)> = row
            .iter()
            .filter(|(m, _)| !exclude.contains(m))
            .map(|(&m, &c)| (m, c))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        out.medicines.extend(ranked.into_iter().take(k).map(|(m, _)| m));
    }
    out
}

/// Filtered ranking restricted to medicines without training edges.
pub fn cold_start_eval<P: Params + ?Sized>(
    params: &P,
    held_out: &[Edge],
    train_pm: &BipartiteGraph,
    candidates: &[EntityId],
    known: &BipartiteGraph,
    n: usize,
) -> Result<RankingResult, EvalError> {
    if held_out.is_empty() {
        return Err(EvalError::EmptyHeldOut);
    }
    let trained: BTreeSet<EntityId> = train_pm.items().into_iter().collect();
    if let Some(e) = held_out.iter().find(|e| trained.contains(&e.item)) {
        return Err(EvalError::Leakage(e.item.0));
    }
    ranking_eval(params, held_out, candidates, known, n)
}

/// One row of the evaluation report.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct MethodRow {
    pub method: String,
    pub mode: String,
    pub queries: usize,
    pub mean_jaccard: Option<f64>,
    pub ddi_rate: Option<f64>,
    pub pair_ddi_rate: Option<f64>,
    pub hits_at_n: Option<f64>,
    pub mean_rank: Option<f64>,
    pub chance_mean_rank: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EvalReport {
    pub top_k: usize,
    pub hits_n: usize,
    pub rows: Vec<MethodRow>,
}

pub const REPORT_COLUMNS: [&str; 9] = [
    "method",
    "mode",
    "queries",
    "mean_jaccard",
    "ddi_rate",
    "pair_ddi_rate",
    "hits_at_n",
    "mean_rank",
    "chance_mean_rank",
];

impl EvalReport {
    pub fn row(&self, method: &str, mode: &str) -> Option<&MethodRow> {
        self.rows.iter().find(|r| r.method == method && r.mode == mode)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# top_k={} hits_n={}", self.top_k, self.hits_n);
        let _ = writeln!(out, "{}", REPORT_COLUMNS.join("\t"));
        let cell = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{:.6}", x));
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.method,
                r.mode,
                r.queries,
                cell(r.mean_jaccard),
                cell(r.ddi_rate),
                cell(r.pair_ddi_rate),
                cell(r.hits_at_n),
                cell(r.mean_rank),
                cell(r.chance_mean_rank)
            );
        }
        out
    }
}
