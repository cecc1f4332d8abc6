#![allow(dead_code)]

use medembed::bipartite::{conditional_distribution, ns_edge_objective_and_grads, weighted_loglik, weighted_loglik_grads};
use medembed::graph::{BipartiteGraph, Edge, EntityId, MergePolicy, RelationId, Triple, TripleStore};
use medembed::kg::{
    head_distribution, ns_objective_and_grads, relation_distribution, residual, tail_distribution, EnergyConfig, Norm,
    ObjectiveForm,
};
use medembed::recommend::{compose_patient, recommend_for_vector, score_candidate, PenaltyForm, RecommendConfig};
use medembed::space::{Block, EmbeddingSpace, Params, SparseGrads};
use medembed::train::regularizer_and_grads;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-4;
pub const POINTS: usize = 100;

const ENTITIES: usize = 6;
const RELATIONS: usize = 2;
const K: usize = 4;
const D: usize = 3;

pub fn random_space(rng: &mut ChaCha8Rng, scale: f64) -> EmbeddingSpace {
    let mut s = EmbeddingSpace::zeros(ENTITIES, RELATIONS, K, D).unwrap();
    for block in all_blocks() {
        for x in s.block_mut(block) {
            *x = rng.random_range(-scale..scale);
        }
    }
    s
}

pub fn all_blocks() -> Vec<Block> {
    let mut v: Vec<Block> = (0..ENTITIES as u32).map(|e| Block::Entity(EntityId(e))).collect();
    for r in 0..RELATIONS as u32 {
        v.push(Block::Relation(RelationId(r)));
        v.push(Block::Projection(RelationId(r)));
    }
    v
}

/// `|a - n| / max(|a|, |n|, 1e-4)`; the floor keeps round-off in the
/// finite difference of near-zero partials from dominating.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4)
}

/// Largest relative error between `grads` and central differences of `f`
/// over every coordinate of every block (absent blocks count as zero).
pub fn max_fd_error(space: &EmbeddingSpace, grads: &SparseGrads, f: &dyn Fn(&EmbeddingSpace) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    let mut probe = space.clone();
    for block in all_blocks() {
        let analytic: Vec<f64> = grads.get(block).map_or(vec![0.0; space.block(block).len()], |g| g.to_vec());
        for (i, a) in analytic.iter().enumerate() {
            let x = space.block(block)[i];
            probe.block_mut(block)[i] = x + EPS;
            let up = f(&probe);
            probe.block_mut(block)[i] = x - EPS;
            let down = f(&probe);
            probe.block_mut(block)[i] = x;
            worst = worst.max(rel_error(*a, (up - down) / (2.0 * EPS)));
        }
    }
    worst
}

pub fn triple(h: u32, r: u32, t: u32) -> Triple {
    Triple::new(EntityId(h), RelationId(r), EntityId(t))
}

pub fn triple_fixture() -> (Triple, Vec<Triple>) {
    (triple(0, 0, 1), vec![triple(0, 0, 2), triple(3, 0, 1), triple(0, 1, 1), triple(4, 1, 5)])
}

/// Rejects points within 1e-3 of an L1 kink (a zero residual component).
pub fn away_from_kinks(space: &EmbeddingSpace, triples: &[Triple]) -> bool {
    triples
        .iter()
        .all(|t| residual(space, t).unwrap().iter().all(|u| u.abs() > 1e-3))
}

pub fn triple_fd_worst(norm: Norm, form: ObjectiveForm) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cfg = EnergyConfig { bias: 2.0, norm };
    let (pos, negs) = triple_fixture();
    let all: Vec<Triple> = std::iter::once(pos).chain(negs.iter().copied()).collect();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    while checked < POINTS {
        let space = random_space(&mut rng, 0.8);
        if norm == Norm::L1 && !away_from_kinks(&space, &all) {
            continue;
        }
        let (_, grads) = ns_objective_and_grads(&space, &cfg, form, &pos, &negs).unwrap();
        let f = |s: &EmbeddingSpace| ns_objective_and_grads(s, &cfg, form, &pos, &negs).unwrap().0;
        worst = worst.max(max_fd_error(&space, &grads, &f));
        checked += 1;
    }
    worst
}

/// Three users (entities 0-2) and four items (entities 3-6).
pub fn reduction_fixture() -> (BipartiteGraph, Vec<EntityId>) {
    let mut g = BipartiteGraph::new();
    for (u, i, w) in [(0, 3, 2.0), (0, 4, 1.0), (1, 4, 3.0), (1, 5, 0.5), (1, 6, 1.5), (2, 3, 1.0), (2, 6, 4.0)] {
        g.add_edge(EntityId(u), EntityId(i), w, MergePolicy::Sum).unwrap();
    }
    (g, (3..7).map(EntityId).collect())
}

/// `sum_i lambda_i KL(p_hat(.|i) || p(.|i))` with `lambda_i = sum_j w_ij`
/// and `p_hat(j|i) = w_ij / lambda_i`.
pub fn kl_form(space: &EmbeddingSpace, g: &BipartiteGraph, universe: &[EntityId]) -> f64 {
    let mut total = 0.0;
    for user in g.users() {
        let probs = conditional_distribution(space, user, universe).unwrap();
        let edges: Vec<&Edge> = g.user_edges(user).collect();
        let lambda: f64 = edges.iter().map(|e| e.weight).sum();
        for e in &edges {
            let at = universe.iter().position(|&m| m == e.item).unwrap();
            let target = e.weight / lambda;
            total += lambda * target * (target.ln() - probs[at].ln());
        }
    }
    total
}

/// Gradient of the negated KL form, derived directly from the softmax:
/// `d/dp_i = lambda_i (E_hat[m] - E_p[m])`, `d/dm_l = lambda_i (p_hat_l - p_l) p_i`.
pub fn kl_form_ascent_grads(space: &EmbeddingSpace, g: &BipartiteGraph, universe: &[EntityId]) -> SparseGrads {
    let mut grads = SparseGrads::new();
    for user in g.users() {
        let probs = conditional_distribution(space, user, universe).unwrap();
        let edges: Vec<&Edge> = g.user_edges(user).collect();
        let lambda: f64 = edges.iter().map(|e| e.weight).sum();
        let mut target = vec![0.0; universe.len()];
        for e in &edges {
            target[universe.iter().position(|&m| m == e.item).unwrap()] = e.weight / lambda;
        }
        let p = space.entity_vec(user);
        let mut dp = vec![0.0; space.k()];
        for (l, &m) in universe.iter().enumerate() {
            let coef = lambda * (target[l] - probs[l]);
            for (x, v) in dp.iter_mut().zip(space.entity(m)) {
                *x += coef * v;
            }
            grads.add_scaled(Block::Entity(m), &p, coef);
        }
        grads.add(Block::Entity(user), &dp);
    }
    grads
}


/// Largest relative finite-difference error of the edge objective over
/// [`POINTS`] random spaces.
pub fn edge_fd_worst(form: ObjectiveForm) -> f64 {
    let edge = Edge { user: EntityId(0), item: EntityId(1), weight: 1.0 };
    let negatives = [EntityId(2), EntityId(3), EntityId(2), EntityId(1)];
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst: f64 = 0.0;
    for _ in 0..POINTS {
        let space = random_space(&mut rng, 1.0);
        let (_, grads) = ns_edge_objective_and_grads(&space, form, &edge, &negatives).unwrap();
        let f = |s: &EmbeddingSpace| ns_edge_objective_and_grads(s, form, &edge, &negatives).unwrap().0;
        worst = worst.max(max_fd_error(&space, &grads, &f));
    }
    worst
}

/// Same for the hinge penalty, skipping points within 1e-3 of its kink.
pub fn hinge_fd_worst() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    while checked < POINTS {
        let space = random_space(&mut rng, 0.9);
        let near_kink = all_blocks().into_iter().any(|b| {
            let n = space.block(b).iter().map(|x| x * x).sum::<f64>().sqrt();
            !matches!(b, Block::Projection(_)) && (n - 1.0).abs() < 1e-3
        });
        if near_kink {
            continue;
        }
        let gamma = rng.random_range(0.1..5.0);
        let (_, grads) = regularizer_and_grads(&space, gamma);
        let f = |s: &EmbeddingSpace| regularizer_and_grads(s, gamma).0;
        worst = worst.max(max_fd_error(&space, &grads, &f));
        checked += 1;
    }
    worst
}

/// Largest absolute gap between the reduced-form gradients and the KL-form
/// oracle, and between the objectives' difference and its closed-form
/// constant, over random spaces on the 3-user/4-item fixture.
pub fn reduction_worst() -> f64 {
    let (g, universe) = reduction_fixture();
    let constant: f64 = g
        .users()
        .into_iter()
        .map(|u| {
            let edges: Vec<&Edge> = g.user_edges(u).collect();
            let lambda: f64 = edges.iter().map(|e| e.weight).sum();
            edges.iter().map(|e| e.weight * (e.weight / lambda).ln()).sum::<f64>()
        })
        .sum();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let mut space = EmbeddingSpace::zeros(7, 1, 3, 3).unwrap();
        for e in 0..7 {
            for x in space.entity_mut(EntityId(e)) {
                *x = rng.random_range(-1.0..1.0);
            }
        }
        let reduced = weighted_loglik_grads(&space, &g, &universe).unwrap();
        let kl = kl_form_ascent_grads(&space, &g, &universe);
        for e in 0..7 {
            let b = Block::Entity(EntityId(e));
            for (a, c) in reduced.get(b).unwrap().iter().zip(kl.get(b).unwrap()) {
                worst = worst.max((a - c).abs());
            }
        }
        let gap = kl_form(&space, &g, &universe) + weighted_loglik(&space, &g, &universe).unwrap();
        worst = worst.max((gap - constant).abs());
    }
    worst
}

/// Largest deviation from 1 of the head, tail and relation distributions
/// and of the bipartite conditionals, on random spaces of up to 50
/// entities.
pub fn softmax_worst() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut worst: f64 = 0.0;
    for n in [2usize, 7, 20, 50] {
        let mut space = EmbeddingSpace::init(n, 3, 5, 4, &mut rng).unwrap();
        for x in space.projection_mut(RelationId(1)) {
            *x = rng.random_range(-1.0..1.0);
        }
        let mut store = TripleStore::new();
        for _ in 0..n {
            let h = EntityId(rng.random_range(0..n as u32));
            let t = EntityId(rng.random_range(0..n as u32));
            store.insert(Triple::new(h, RelationId(rng.random_range(0..3)), t));
        }
        for norm in [Norm::L1, Norm::L2] {
            let cfg = EnergyConfig { bias: 7.0, norm };
            for t in store.triples() {
                let sums = [
                    head_distribution(&space, &cfg, &store, t.relation, t.tail).unwrap().iter().map(|x| x.1).sum::<f64>(),
                    tail_distribution(&space, &cfg, &store, t.head, t.relation).unwrap().iter().map(|x| x.1).sum::<f64>(),
                    relation_distribution(&space, &cfg, &store, t.head, t.tail).unwrap().iter().map(|x| x.1).sum::<f64>(),
                ];
                for s in sums {
                    worst = worst.max((s - 1.0).abs());
                }
            }
        }
        let universe: Vec<EntityId> = (0..n as u32).map(EntityId).collect();
        for u in 0..n as u32 {
            let s: f64 = conditional_distribution(&space, EntityId(u), &universe).unwrap().iter().sum();
            worst = worst.max((s - 1.0).abs());
        }
    }
    worst
}

/// Greedy selection re-derived by enumeration: among all ordered
/// selections of length `k`, the greedy one is the lexicographic maximum of
/// its step scores, ties broken by the lower id at the first differing step.
pub fn enumerate_greedy<P: Params + ?Sized>(
    params: &P,
    cfg: &RecommendConfig,
    patient: &[f64],
    k: usize,
    candidates: &[EntityId],
) -> Vec<EntityId> {
    fn walk<P: Params + ?Sized>(
        params: &P,
        cfg: &RecommendConfig,
        patient: &[f64],
        k: usize,
        pool: &[EntityId],
        prefix: &mut Vec<EntityId>,
        scores: &mut Vec<f64>,
        best: &mut Option<(Vec<f64>, Vec<EntityId>)>,
    ) {
        if prefix.len() == k || prefix.len() == pool.len() {
            let better = match best {
                None => true,
                Some((bs, bp)) => {
                    let mut verdict = false;
                    for i in 0..scores.len() {
                        if scores[i] != bs[i] {
                            verdict = scores[i] > bs[i];
                            break;
                        }
                        if prefix[i] != bp[i] {
                            verdict = prefix[i] < bp[i];
                            break;
                        }
                    }
                    verdict
                }
            };
            if better {
                *best = Some((scores.clone(), prefix.clone()));
            }
            return;
        }
        for &c in pool {
            if prefix.contains(&c) {
                continue;
            }
            let s = score_candidate(params, cfg, patient, c, prefix).unwrap().score;
            prefix.push(c);
            scores.push(s);
            walk(params, cfg, patient, k, pool, prefix, scores, best);
            prefix.pop();
            scores.pop();
        }
    }
    let mut pool = candidates.to_vec();
    pool.sort_unstable();
    pool.dedup();
    let mut best = None;
    walk(params, cfg, patient, k, &pool, &mut Vec::new(), &mut Vec::new(), &mut best);
    best.map(|b| b.1).unwrap_or_default()
}

/// Mismatches between greedy recommendation and enumeration over random
/// fixtures of at most 8 candidates, and the largest gap between
/// `compose_patient` and the direct weighted sum.
pub fn recommender_oracle() -> (usize, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let mut mismatches = 0;
    let mut compose_gap: f64 = 0.0;
    for round in 0..200 {
        let n = 12;
        let mut space = EmbeddingSpace::init(n, 2, 4, 4, &mut rng).unwrap();
        if round % 2 == 1 {
            for x in space.projection_mut(RelationId(0)) {
                *x = rng.random_range(-1.0..1.0);
            }
        }
        let size = rng.random_range(1..=8usize);
        let mut candidates: Vec<EntityId> = (0..n as u32).map(EntityId).collect();
        candidates.sort_by_key(|_| rng.random::<u32>());
        candidates.truncate(size);
        let k = rng.random_range(1..=size.min(4));
        let cfg = RecommendConfig {
            energy: EnergyConfig { bias: rng.random_range(0.5..4.0), norm: if round % 3 == 0 { Norm::L1 } else { Norm::L2 } },
            beta: [0.0, 0.5, 2.0][round % 3],
            penalty: if round % 4 == 0 { PenaltyForm::Residual } else { PenaltyForm::Likelihood },
            penalty_projection: round % 2 == 1,
            recent_first: false,
            interaction_relations: vec![RelationId(0)],
        };
        let diagnoses: Vec<EntityId> = (0..rng.random_range(1..4u32)).map(|i| EntityId(n as u32 - 1 - i)).collect();
        let patient = compose_patient(&space, &diagnoses, false).unwrap();
        let mut direct = vec![0.0; space.k()];
        for (t, &d) in diagnoses.iter().enumerate() {
            for (x, v) in direct.iter_mut().zip(space.entity(d)) {
                *x += (-((t + 1) as f64)).exp() * v;
            }
        }
        for (a, b) in patient.iter().zip(&direct) {
            compose_gap = compose_gap.max((a - b).abs());
        }
        let greedy = recommend_for_vector(&space, &cfg, &patient, k, &candidates).unwrap().medicines();
        if greedy != enumerate_greedy(&space, &cfg, &patient, k, &candidates) {
            mismatches += 1;
        }
    }
    (mismatches, compose_gap)
}
