//! Translation-based embedding of multi-relational graphs.
//!
//! A triple `(h, r, t)` has energy `z = b - ||h H_r + r - t H_r||`, where
//! entity vectors live in `R^k`, relation vectors in `R^d` and `H_r` is the
//! relation's `k x d` projection. Higher energy means a more plausible
//! triple.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::graph::{EntityId, RelationId, Triple, TripleStore};
use crate::space::{Block, Params, SparseGrads};

#[derive(Debug, Error, PartialEq)]
pub enum EmbedError {
    #[error("unknown entity id {0}")]
    UnknownEntity(u32),
    #[error("unknown relation id {0}")]
    UnknownRelation(u32),
    #[error("entity {0} is outside the normalization support")]
    OutsideSupport(u32),
    #[error("only {available} valid corruptions exist, {requested} requested")]
    Saturated { available: usize, requested: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("empty item universe")]
    EmptyUniverse,
    #[error("noise sampler has no item with positive mass")]
    EmptySampler,
    #[error("at least one negative sample is required")]
    NoNegatives,
    #[error("sample count must be at least 1")]
    ZeroCount,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Norm {
    L1,
    L2,
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Norm::L1 => "L1",
            Norm::L2 => "L2",
        })
    }
}

impl FromStr for Norm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "L1" => Ok(Norm::L1),
            "L2" => Ok(Norm::L2),
            _ => Err(format!("unknown norm `{}` (expected L1 or L2)", s)),
        }
    }
}

impl Norm {
    pub fn eval(self, v: &[f64]) -> f64 {
        match self {
            Norm::L1 => v.iter().map(|x| x.abs()).sum(),
            Norm::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
        }
    }

    /// Writes the (sub)gradient of the norm at `v` into `out`. The
    /// subgradient at a kink is 0.
    pub fn grad(self, v: &[f64], out: &mut [f64]) {
        match self {
            Norm::L1 => {
                for (o, x) in out.iter_mut().zip(v) {
                    *o = if *x > 0.0 {
                        1.0
                    } else if *x < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                }
            }
            Norm::L2 => {
                let n = self.eval(v);
                for (o, x) in out.iter_mut().zip(v) {
                    *o = if n > 0.0 { x / n } else { 0.0 };
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyConfig {
    pub bias: f64,
    pub norm: Norm,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        EnergyConfig {
            bias: 7.0,
            norm: Norm::L1,
        }
    }
}

/// Which negative-sample term the objective uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ObjectiveForm {
    /// `log s(z+) + sum log s(-z-)`.
    #[default]
    Corrected,
    /// The printed variant without the negation. For triples the
    /// negative term is `s(z-)` (no log); for edges it is `log s(z-)`.
    Literal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorruptionMode {
    Head,
    Tail,
    Relation,
}

impl CorruptionMode {
    pub const ALL: [CorruptionMode; 3] = [CorruptionMode::Head, CorruptionMode::Tail, CorruptionMode::Relation];
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log s(x)` without overflow for large `|x|`.
pub(crate) fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub(crate) fn check_entity<P: Params + ?Sized>(params: &P, id: EntityId) -> Result<(), EmbedError> {
    if id.index() < params.num_entities() {
        Ok(())
    } else {
        Err(EmbedError::UnknownEntity(id.0))
    }
}

pub(crate) fn check_relation<P: Params + ?Sized>(params: &P, id: RelationId) -> Result<(), EmbedError> {
    if id.index() < params.num_relations() {
        Ok(())
    } else {
        Err(EmbedError::UnknownRelation(id.0))
    }
}

fn check_triple<P: Params + ?Sized>(params: &P, t: &Triple) -> Result<(), EmbedError> {
    check_entity(params, t.head)?;
    check_relation(params, t.relation)?;
    check_entity(params, t.tail)
}

/// Parameters of one triple, copied out of the store.
struct TripleView {
    head: Vec<f64>,
    tail: Vec<f64>,
    relation: Vec<f64>,
    projection: Vec<f64>,
}

impl TripleView {
    fn read<P: Params + ?Sized>(params: &P, t: &Triple) -> Self {
        TripleView {
            head: params.entity_vec(t.head),
            tail: params.entity_vec(t.tail),
            relation: params.relation_vec(t.relation),
            projection: params.projection_vec(t.relation),
        }
    }

    /// `(h - t) H + r`.
    fn residual(&self) -> Vec<f64> {
        let d = self.relation.len();
        let mut u = self.relation.clone();
        for (i, (h, t)) in self.head.iter().zip(&self.tail).enumerate() {
            let diff = h - t;
            if diff != 0.0 {
                let row = &self.projection[i * d..(i + 1) * d];
                for (uj, hij) in u.iter_mut().zip(row) {
                    *uj += diff * hij;
                }
            }
        }
        u
    }
}

/// Translation residual `h H_r + r - t H_r` of a triple.
pub fn residual<P: Params + ?Sized>(params: &P, triple: &Triple) -> Result<Vec<f64>, EmbedError> {
    check_triple(params, triple)?;
    Ok(TripleView::read(params, triple).residual())
}

pub fn energy<P: Params + ?Sized>(
    params: &P,
    cfg: &EnergyConfig,
    h: EntityId,
    r: RelationId,
    t: EntityId,
) -> Result<f64, EmbedError> {
    let u = residual(params, &Triple::new(h, r, t))?;
    Ok(cfg.bias - cfg.norm.eval(&u))
}

fn log_softmax_at(scores: &[f64], at: usize) -> f64 {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    scores[at] - lse
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Exact `P(. | r, t)` over the entities of `store`.
pub fn head_distribution<P: Params + ?Sized>(
    params: &P,
    cfg: &EnergyConfig,
    store: &TripleStore,
    r: RelationId,
    t: EntityId,
) -> Result<Vec<(EntityId, f64)>, EmbedError> {
    let support = store.entities();
    let scores = support
        .iter()
        .map(|&h| energy(params, cfg, h, r, t))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(support.into_iter().zip(softmax(&scores)).collect())
}

/// Exact `P(. | h, r)` over the entities of `store`.
pub fn tail_distribution<P: Params + ?Sized>(
    params: &P,
    cfg: &EnergyConfig,
    store: &TripleStore,
    h: EntityId,
    r: RelationId,
) -> Result<Vec<(EntityId, f64)>, EmbedError> {
    let support = store.entities();
    let scores = support
        .iter()
        .map(|&t| energy(params, cfg, h, r, t))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(support.into_iter().zip(softmax(&scores)).collect())
}

/// Exact `P(. | h, t)` over the relations of `store`.
pub fn relation_distribution<P: Params + ?Sized>(
    params: &P,
    cfg: &EnergyConfig,
    store: &TripleStore,
    h: EntityId,
    t: EntityId,
) -> Result<Vec<(RelationId, f64)>, EmbedError> {
    let support = store.relations();
    let scores = support
        .iter()
        .map(|&r| energy(params, cfg, h, r, t))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(support.into_iter().zip(softmax(&scores)).collect())
}

/// `log P(h|r,t) + log P(t|h,r) + log P(r|h,t)` with every softmax taken
/// exactly over the entities (or relations) of `store`. Cost is linear in
/// the store's vocabulary; meant for small graphs and checks.
pub fn triple_log_likelihood<P: Params + ?Sized>(
    params: &P,
    cfg: &EnergyConfig,
    store: &TripleStore,
    h: EntityId,
    r: RelationId,
    t: EntityId,
) -> Result<f64, EmbedError> {
    check_triple(params, &Triple::new(h, r, t))?;
    let entities = store.entities();
    let relations = store.relations();
    let pos_h = entities.binary_search(&h).map_err(|_| EmbedError::OutsideSupport(h.0))?;
    let pos_t = entities.binary_search(&t).map_err(|_| EmbedError::OutsideSupport(t.0))?;
    let pos_r = relations.binary_search(&r).map_err(|_| EmbedError::UnknownRelation(r.0))?;

    let heads = entities
        .iter()
        .map(|&x| energy(params, cfg, x, r, t))
        .collect::<Result<Vec<_>, _>>()?;
    let tails = entities
        .iter()
        .map(|&x| energy(params, cfg, h, r, x))
        .collect::<Result<Vec<_>, _>>()?;
    let rels = relations
        .iter()
        .map(|&x| energy(params, cfg, h, x, t))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(log_softmax_at(&heads, pos_h) + log_softmax_at(&tails, pos_t) + log_softmax_at(&rels, pos_r))
}

/// Uniform corruption of one slot of a positive triple, rejecting
/// corruptions that are themselves facts of the store.
#[derive(Clone, Debug)]
pub struct CorruptionSampler {
    entities: Vec<EntityId>,
    relations: Vec<RelationId>,
}

const MAX_REJECTIONS: usize = 64;

impl CorruptionSampler {
    pub fn new(store: &TripleStore) -> Self {
        CorruptionSampler {
            entities: store.entities(),
            relations: store.relations(),
        }
    }

    fn corrupt(positive: &Triple, mode: CorruptionMode, entity: EntityId, relation: RelationId) -> Triple {
        match mode {
            CorruptionMode::Head => Triple::new(entity, positive.relation, positive.tail),
            CorruptionMode::Tail => Triple::new(positive.head, positive.relation, entity),
            CorruptionMode::Relation => Triple::new(positive.head, relation, positive.tail),
        }
    }

    fn draw<R: Rng + ?Sized>(&self, positive: &Triple, mode: CorruptionMode, rng: &mut R) -> Triple {
        match mode {
            CorruptionMode::Relation => {
                let r = self.relations[rng.random_range(0..self.relations.len())];
                Self::corrupt(positive, mode, positive.head, r)
            }
            _ => {
                let e = self.entities[rng.random_range(0..self.entities.len())];
                Self::corrupt(positive, mode, e, positive.relation)
            }
        }
    }

    /// Every valid corruption of `positive` in `mode`.
    pub fn valid_corruptions(&self, store: &TripleStore, positive: &Triple, mode: CorruptionMode) -> Vec<Triple> {
        let candidates: Vec<Triple> = match mode {
            CorruptionMode::Relation => self
                .relations
                .iter()
                .map(|&r| Self::corrupt(positive, mode, positive.head, r))
                .collect(),
            _ => self
                .entities
                .iter()
                .map(|&e| Self::corrupt(positive, mode, e, positive.relation))
                .collect(),
        };
        candidates
            .into_iter()
            .filter(|c| c != positive && !store.contains(c))
            .collect()
    }

    /// Draws `count` corruptions i.i.d. and uniformly from the valid ones.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        store: &TripleStore,
        positive: &Triple,
        count: usize,
        mode: CorruptionMode,
        rng: &mut R,
    ) -> Result<Vec<Triple>, EmbedError> {
        if count == 0 {
            return Err(EmbedError::ZeroCount);
        }
        let empty = match mode {
            CorruptionMode::Relation => self.relations.is_empty(),
            _ => self.entities.is_empty(),
        };
        if empty {
            return Err(EmbedError::Saturated {
                available: 0,
                requested: count,
            });
        }
        let mut out = Vec::with_capacity(count);
        let mut fallback: Option<Vec<Triple>> = None;
        while out.len() < count {
            if let Some(valid) = &fallback {
                out.push(valid[rng.random_range(0..valid.len())]);
                continue;
            }
            let mut accepted = None;
            for _ in 0..MAX_REJECTIONS {
                let c = self.draw(positive, mode, rng);
                if c != *positive && !store.contains(&c) {
                    accepted = Some(c);
                    break;
                }
            }
            match accepted {
                Some(c) => out.push(c),
                None => {
                    // Dense neighbourhood: switch to exact enumeration,
                    // which is still uniform over the valid set.
                    let valid = self.valid_corruptions(store, positive, mode);
                    if valid.is_empty() {
                        return Err(EmbedError::Saturated {
                            available: 0,
                            requested: count,
                        });
                    }
                    fallback = Some(valid);
                }
            }
        }
        Ok(out)
    }
}

/// Convenience wrapper building a [`CorruptionSampler`] for one call.
pub fn sample_negative_triples<R: Rng + ?Sized>(
    store: &TripleStore,
    positive: &Triple,
    count: usize,
    mode: CorruptionMode,
    rng: &mut R,
) -> Result<Vec<Triple>, EmbedError> {
    CorruptionSampler::new(store).sample(store, positive, count, mode, rng)
}

/// Adds `coef * dz` for one triple into `grads`.
fn accumulate_energy_grad(view: &TripleView, triple: &Triple, norm: Norm, coef: f64, grads: &mut SparseGrads) {
    let d = view.relation.len();
    let k = view.head.len();
    let u = view.residual();
    let mut g = vec![0.0; d];
    norm.grad(&u, &mut g);

    // dz/dr = -g
    grads.add_scaled(Block::Relation(triple.relation), &g, -coef);

    // dz/dh = -H g, dz/dt = +H g
    let hg: Vec<f64> = (0..k)
        .map(|i| view.projection[i * d..(i + 1) * d].iter().zip(&g).map(|(a, b)| a * b).sum())
        .collect();
    grads.add_scaled(Block::Entity(triple.head), &hg, -coef);
    grads.add_scaled(Block::Entity(triple.tail), &hg, coef);

    // dz/dH_ij = -(h_i - t_i) g_j
    let mut gh = vec![0.0; k * d];
    for i in 0..k {
        let diff = view.head[i] - view.tail[i];
        for j in 0..d {
            gh[i * d + j] = diff * g[j];
        }
    }
    grads.add_scaled(Block::Projection(triple.relation), &gh, -coef);
}

/// Negative-sampling objective of one positive triple and its corruptions,
/// with gradients for every block it touches (to be ascended).
pub fn ns_objective_and_grads<P: Params + ?Sized>(
    params: &P,
    cfg: &EnergyConfig,
    form: ObjectiveForm,
    positive: &Triple,
    negatives: &[Triple],
) -> Result<(f64, SparseGrads), EmbedError> {
    if negatives.is_empty() {
        return Err(EmbedError::NoNegatives);
    }
    check_triple(params, positive)?;
    for n in negatives {
        check_triple(params, n)?;
    }
    let mut grads = SparseGrads::new();

    let view = TripleView::read(params, positive);
    let z = cfg.bias - cfg.norm.eval(&view.residual());
    let mut value = log_sigmoid(z);
    accumulate_energy_grad(&view, positive, cfg.norm, sigmoid(-z), &mut grads);

    for n in negatives {
        let view = TripleView::read(params, n);
        let z = cfg.bias - cfg.norm.eval(&view.residual());
        let s = sigmoid(z);
        let coef = match form {
            ObjectiveForm::Corrected => {
                value += log_sigmoid(-z);
                -s
            }
            ObjectiveForm::Literal => {
                value += s;
                s * (1.0 - s)
            }
        };
        accumulate_energy_grad(&view, n, cfg.norm, coef, &mut grads);
    }

    if !value.is_finite() {
        return Err(EmbedError::NonFinite("triple objective"));
    }
    if !grads.is_finite() {
        return Err(EmbedError::NonFinite("triple gradient"));
    }
    Ok((value, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{EntityClass, Interner};
    use crate::space::EmbeddingSpace;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn space_with(k: usize, d: usize, ne: usize, nr: usize, seed: u64) -> EmbeddingSpace {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = EmbeddingSpace::init(ne, nr, k, d, &mut rng).unwrap();
        for r in 0..nr {
            for x in s.projection_mut(RelationId(r as u32)) {
                *x += rng.random_range(-0.5..0.5);
            }
        }
        s
    }

    /// Direct evaluation of `b - ||h H + r - t H||` written independently
    /// of the kernel: project both entities separately, then combine.
    fn oracle_energy(s: &EmbeddingSpace, cfg: &EnergyConfig, h: EntityId, r: RelationId, t: EntityId) -> f64 {
        let (k, d) = (s.k(), s.d());
        let m = s.projection(r);
        let project = |v: &[f64]| -> Vec<f64> {
            (0..d).map(|j| (0..k).map(|i| v[i] * m[i * d + j]).sum()).collect()
        };
        let hp = project(s.entity(h));
        let tp = project(s.entity(t));
        let res: Vec<f64> = (0..d).map(|j| hp[j] + s.relation(r)[j] - tp[j]).collect();
        let norm = match cfg.norm {
            Norm::L1 => res.iter().map(|x| x.abs()).sum::<f64>(),
            Norm::L2 => res.iter().map(|x| x * x).sum::<f64>().sqrt(),
        };
        cfg.bias - norm
    }

    #[test]
    fn energy_of_self_loop_with_zero_relation_is_bias() {
        let mut s = space_with(3, 2, 2, 1, 1);
        s.relation_mut(RelationId(0)).fill(0.0);
        let cfg = EnergyConfig { bias: 2.5, norm: Norm::L2 };
        assert_eq!(energy(&s, &cfg, EntityId(1), RelationId(0), EntityId(1)).unwrap(), 2.5);
    }

    #[test]
    fn exact_translation_has_zero_residual() {
        let mut s = EmbeddingSpace::zeros(2, 1, 2, 2).unwrap();
        s.entity_mut(EntityId(0)).copy_from_slice(&[1.0, 0.0]);
        s.entity_mut(EntityId(1)).copy_from_slice(&[1.0, 1.0]);
        s.relation_mut(RelationId(0)).copy_from_slice(&[0.0, 1.0]);
        let cfg = EnergyConfig { bias: 0.0, norm: Norm::L2 };
        assert_eq!(energy(&s, &cfg, EntityId(0), RelationId(0), EntityId(1)).unwrap(), 0.0);
    }

    #[test]
    fn energy_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for norm in [Norm::L1, Norm::L2] {
            let cfg = EnergyConfig { bias: 3.0, norm };
            let s = space_with(5, 3, 6, 2, 5);
            for _ in 0..50 {
                let h = EntityId(rng.random_range(0..6));
                let t = EntityId(rng.random_range(0..6));
                let r = RelationId(rng.random_range(0..2));
                let e = energy(&s, &cfg, h, r, t).unwrap();
                assert!((e - oracle_energy(&s, &cfg, h, r, t)).abs() < 1e-12);
                assert!(e <= cfg.bias);
            }
        }
    }

    #[test]
    fn unknown_ids_are_rejected() {
        let s = space_with(2, 2, 2, 1, 0);
        let cfg = EnergyConfig::default();
        assert_eq!(
            energy(&s, &cfg, EntityId(5), RelationId(0), EntityId(0)),
            Err(EmbedError::UnknownEntity(5))
        );
        assert_eq!(
            energy(&s, &cfg, EntityId(0), RelationId(3), EntityId(0)),
            Err(EmbedError::UnknownRelation(3))
        );
    }

    #[test]
    fn energy_is_invariant_under_entity_relabeling() {
        let s = space_with(4, 3, 5, 2, 8);
        let perm = [3u32, 0, 4, 1, 2];
        let (ne, nr) = (s.num_entities(), s.num_relations());
        let mut moved = EmbeddingSpace::zeros(ne, nr, 4, 3).unwrap();
        for (old, &new) in perm.iter().enumerate() {
            moved.entity_mut(EntityId(new)).copy_from_slice(s.entity(EntityId(old as u32)));
        }
        for r in 0..nr as u32 {
            moved.relation_mut(RelationId(r)).copy_from_slice(s.relation(RelationId(r)));
            moved.projection_mut(RelationId(r)).copy_from_slice(s.projection(RelationId(r)));
        }
        let cfg = EnergyConfig::default();
        for h in 0..5u32 {
            for t in 0..5u32 {
                let a = energy(&s, &cfg, EntityId(h), RelationId(1), EntityId(t)).unwrap();
                let b = energy(&moved, &cfg, EntityId(perm[h as usize]), RelationId(1), EntityId(perm[t as usize]))
                    .unwrap();
                assert_eq!(a, b);
            }
        }
    }

    fn toy_store(n: u32, relations: u32) -> TripleStore {
        let mut store = TripleStore::new();
        for i in 0..n {
            for r in 0..relations {
                store.insert(Triple::new(EntityId(i), RelationId(r), EntityId((i + 1 + r) % n)));
            }
        }
        store
    }

    #[test]
    fn single_entity_graph_has_zero_log_likelihood() {
        let mut store = TripleStore::new();
        store.insert(Triple::new(EntityId(0), RelationId(0), EntityId(0)));
        let s = space_with(3, 3, 1, 1, 2);
        let ll = triple_log_likelihood(&s, &EnergyConfig::default(), &store, EntityId(0), RelationId(0), EntityId(0))
            .unwrap();
        assert_eq!(ll, 0.0);
    }

    #[test]
    fn identical_heads_split_probability() {
        let mut s = space_with(3, 3, 2, 1, 4);
        let v = s.entity(EntityId(0)).to_vec();
        s.entity_mut(EntityId(1)).copy_from_slice(&v);
        let mut store = TripleStore::new();
        store.insert(Triple::new(EntityId(0), RelationId(0), EntityId(1)));
        store.insert(Triple::new(EntityId(1), RelationId(0), EntityId(0)));
        let dist = head_distribution(&s, &EnergyConfig::default(), &store, RelationId(0), EntityId(1)).unwrap();
        assert_eq!(dist.len(), 2);
        assert!((dist[0].1.ln() - 0.5f64.ln()).abs() < 1e-12);
        assert!((dist[1].1.ln() - 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn log_likelihood_matches_brute_force_softmax() {
        let store = toy_store(4, 2);
        let s = space_with(3, 2, 4, 2, 9);
        for norm in [Norm::L1, Norm::L2] {
            let cfg = EnergyConfig { bias: 1.5, norm };
            for t in store.triples() {
                let ll = triple_log_likelihood(&s, &cfg, &store, t.head, t.relation, t.tail).unwrap();
                let z = |h: u32, r: u32, tl: u32| oracle_energy(&s, &cfg, EntityId(h), RelationId(r), EntityId(tl));
                let zpos = z(t.head.0, t.relation.0, t.tail.0);
                let mut expected = 0.0;
                let heads: f64 = (0..4).map(|x| z(x, t.relation.0, t.tail.0).exp()).sum();
                let tails: f64 = (0..4).map(|x| z(t.head.0, t.relation.0, x).exp()).sum();
                let rels: f64 = (0..2).map(|x| z(t.head.0, x, t.tail.0).exp()).sum();
                for denom in [heads, tails, rels] {
                    expected += zpos - denom.ln();
                }
                assert!((ll - expected).abs() < 1e-12, "{} vs {}", ll, expected);
            }
        }
    }

    #[test]
    fn distributions_are_normalized() {
        let store = toy_store(50, 3);
        let s = space_with(6, 4, 50, 3, 21);
        let cfg = EnergyConfig::default();
        let sum = |v: Vec<(EntityId, f64)>| v.iter().map(|x| x.1).sum::<f64>();
        assert!((sum(head_distribution(&s, &cfg, &store, RelationId(1), EntityId(7)).unwrap()) - 1.0).abs() < 1e-9);
        assert!((sum(tail_distribution(&s, &cfg, &store, EntityId(3), RelationId(2)).unwrap()) - 1.0).abs() < 1e-9);
        let rel: f64 = relation_distribution(&s, &cfg, &store, EntityId(3), EntityId(4))
            .unwrap()
            .iter()
            .map(|x| x.1)
            .sum();
        assert!((rel - 1.0).abs() < 1e-9);
    }

    #[test]
    fn forced_single_corruption() {
        // Heads 0..4 all point at tail 9 except head 2.
        let mut store = TripleStore::new();
        for h in [0, 1, 3, 4] {
            store.insert(Triple::new(EntityId(h), RelationId(0), EntityId(9)));
        }
        store.insert(Triple::new(EntityId(2), RelationId(0), EntityId(0)));
        // entity 9 itself is a valid head corruption unless present too
        store.insert(Triple::new(EntityId(9), RelationId(0), EntityId(9)));
        let pos = Triple::new(EntityId(0), RelationId(0), EntityId(9));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let negs = sample_negative_triples(&store, &pos, 1, CorruptionMode::Head, &mut rng).unwrap();
        assert_eq!(negs, vec![Triple::new(EntityId(2), RelationId(0), EntityId(9))]);
    }

    #[test]
    fn saturated_when_no_corruption_exists() {
        let mut store = TripleStore::new();
        store.insert(Triple::new(EntityId(0), RelationId(0), EntityId(1)));
        let pos = store.triples()[0];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            sample_negative_triples(&store, &pos, 2, CorruptionMode::Relation, &mut rng),
            Err(EmbedError::Saturated { .. })
        ));
        assert_eq!(
            sample_negative_triples(&store, &pos, 0, CorruptionMode::Head, &mut rng),
            Err(EmbedError::ZeroCount)
        );
    }

    #[test]
    fn corruptions_are_absent_from_store() {
        let store = toy_store(100, 2);
        let pos = store.triples()[17];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for mode in CorruptionMode::ALL {
            let negs = sample_negative_triples(&store, &pos, 5, mode, &mut rng).unwrap();
            assert_eq!(negs.len(), 5);
            assert!(negs.iter().all(|n| !store.contains(n)));
        }
    }

    #[test]
    fn head_corruptions_are_uniform() {
        let store = toy_store(20, 1);
        let pos = store.triples()[0];
        let sampler = CorruptionSampler::new(&store);
        let valid = sampler.valid_corruptions(&store, &pos, CorruptionMode::Head);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let draws = 100_000;
        let mut counts = std::collections::HashMap::new();
        for n in sampler.sample(&store, &pos, draws, CorruptionMode::Head, &mut rng).unwrap() {
            *counts.entry(n.head).or_insert(0usize) += 1;
        }
        let expected = 1.0 / valid.len() as f64;
        let l1: f64 = valid
            .iter()
            .map(|t| (*counts.get(&t.head).unwrap_or(&0) as f64 / draws as f64 - expected).abs())
            .sum();
        assert_eq!(counts.len(), valid.len());
        assert!(l1 < 0.02, "L1 distance {}", l1);
    }

    #[test]
    fn zero_energies_give_two_log_half() {
        // k = d = 1, identity projection, bias 0 and an exact translation
        // give z = 0 for both the positive and the negative.
        let mut s = EmbeddingSpace::zeros(2, 1, 1, 1).unwrap();
        s.entity_mut(EntityId(1)).copy_from_slice(&[0.0]);
        let cfg = EnergyConfig { bias: 0.0, norm: Norm::L1 };
        let pos = Triple::new(EntityId(0), RelationId(0), EntityId(0));
        let neg = Triple::new(EntityId(1), RelationId(0), EntityId(1));
        let (v, _) = ns_objective_and_grads(&s, &cfg, ObjectiveForm::Corrected, &pos, &[neg]).unwrap();
        assert!((v - 2.0 * 0.5f64.ln()).abs() < 1e-15);
        assert_eq!(
            ns_objective_and_grads(&s, &cfg, ObjectiveForm::Corrected, &pos, &[]),
            Err(EmbedError::NoNegatives)
        );
    }

    #[test]
    fn gradients_are_sparse() {
        let s = space_with(3, 3, 6, 2, 3);
        let pos = Triple::new(EntityId(0), RelationId(0), EntityId(1));
        let neg = Triple::new(EntityId(2), RelationId(0), EntityId(1));
        let (_, g) = ns_objective_and_grads(&s, &EnergyConfig::default(), ObjectiveForm::Corrected, &pos, &[neg]).unwrap();
        assert!(g.get(Block::Entity(EntityId(4))).is_none());
        assert!(g.get(Block::Relation(RelationId(1))).is_none());
        let mut blocks = g.blocks();
        blocks.sort();
        assert_eq!(
            blocks,
            vec![
                Block::Entity(EntityId(0)),
                Block::Entity(EntityId(1)),
                Block::Entity(EntityId(2)),
                Block::Relation(RelationId(0)),
                Block::Projection(RelationId(0)),
            ]
        );
    }

    #[test]
    fn log_sigmoid_is_stable() {
        assert!((log_sigmoid(0.0) - 0.5f64.ln()).abs() < 1e-15);
        assert!(log_sigmoid(-800.0).is_finite());
        assert_eq!(log_sigmoid(800.0), 0.0);
        assert!((sigmoid(3.0) + sigmoid(-3.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn store_vocabulary_is_used_for_corruption() {
        let mut interner = Interner::new();
        let a = interner.intern_entity("a", EntityClass::Medicine).unwrap();
        let b = interner.intern_entity("b", EntityClass::Medicine).unwrap();
        let _outside = interner.intern_entity("p", EntityClass::Patient).unwrap();
        let r = interner.intern_relation("r").unwrap();
        let mut store = TripleStore::new();
        store.insert(Triple::new(a, r, b));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let negs = sample_negative_triples(&store, &store.triples()[0], 10, CorruptionMode::Tail, &mut rng).unwrap();
        assert!(negs.iter().all(|n| n.tail == a));
    }
}
