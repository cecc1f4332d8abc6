//! Proximity embedding of weighted user-item bipartite graphs
//! (patient-medicine and patient-disease).
//!
//! The affinity of a user `p` and an item `m` is the dot product `m . p`;
//! the conditional model is a softmax of affinities over the item universe.

use rand::distr::Distribution;
use rand::Rng;
use rand_distr::weighted::WeightedAliasIndex;

use crate::graph::{BipartiteGraph, Edge, EntityId};
use crate::kg::{check_entity, log_sigmoid, sigmoid, EmbedError, ObjectiveForm};
use crate::space::{dot, Block, Params, SparseGrads};

/// Exponent applied to item mass in the noise distribution.
pub const NOISE_POWER: f64 = 0.75;

fn affinities<P: Params + ?Sized>(params: &P, user: EntityId, universe: &[EntityId]) -> Result<Vec<f64>, EmbedError> {
    check_entity(params, user)?;
    let p = params.entity_vec(user);
    universe
        .iter()
        .map(|&m| {
            check_entity(params, m)?;
            Ok(dot(&params.entity_vec(m), &p))
        })
        .collect()
}

/// `P(. | user)` over `universe`, in universe order.
pub fn conditional_distribution<P: Params + ?Sized>(
    params: &P,
    user: EntityId,
    universe: &[EntityId],
) -> Result<Vec<f64>, EmbedError> {
    if universe.is_empty() {
        return Err(EmbedError::EmptyUniverse);
    }
    let scores = affinities(params, user, universe)?;
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// `P(item | user) = exp(m . p) / sum_{m' in universe} exp(m' . p)`.
pub fn conditional_prob<P: Params + ?Sized>(
    params: &P,
    user: EntityId,
    item: EntityId,
    universe: &[EntityId],
) -> Result<f64, EmbedError> {
    if universe.is_empty() {
        return Err(EmbedError::EmptyUniverse);
    }
    check_entity(params, item)?;
    let at = universe
        .iter()
        .position(|&m| m == item)
        .ok_or(EmbedError::OutsideSupport(item.0))?;
    Ok(conditional_distribution(params, user, universe)?[at])
}

/// `sum_{(i,j)} w_ij log P(j | i)`, each conditional normalized over
/// `universe`.
pub fn weighted_loglik<P: Params + ?Sized>(
    params: &P,
    graph: &BipartiteGraph,
    universe: &[EntityId],
) -> Result<f64, EmbedError> {
    let mut total = 0.0;
    for user in graph.users() {
        let probs = conditional_distribution(params, user, universe)?;
        for e in graph.user_edges(user) {
            let at = universe
                .iter()
                .position(|&m| m == e.item)
                .ok_or(EmbedError::OutsideSupport(e.item.0))?;
            total += e.weight * probs[at].ln();
        }
    }
    Ok(total)
}

/// Gradient of [`weighted_loglik`] with respect to every user and item
/// vector.
pub fn weighted_loglik_grads<P: Params + ?Sized>(
    params: &P,
    graph: &BipartiteGraph,
    universe: &[EntityId],
) -> Result<SparseGrads, EmbedError> {
    let mut grads = SparseGrads::new();
    let items: Vec<Vec<f64>> = universe.iter().map(|&m| params.entity_vec(m)).collect();
    for user in graph.users() {
        let probs = conditional_distribution(params, user, universe)?;
        let p = params.entity_vec(user);
        let mut expected = vec![0.0; params.k()];
        for (prob, m) in probs.iter().zip(&items) {
            for (x, v) in expected.iter_mut().zip(m) {
                *x += prob * v;
            }
        }
        for e in graph.user_edges(user) {
            let at = universe
                .iter()
                .position(|&m| m == e.item)
                .ok_or(EmbedError::OutsideSupport(e.item.0))?;
            // d/dp = w (m_j - E[m]); d/dm_l = w (1[l = j] - P_l) p
            let dp: Vec<f64> = items[at].iter().zip(&expected).map(|(m, x)| e.weight * (m - x)).collect();
            grads.add(Block::Entity(user), &dp);
            for (l, &m) in universe.iter().enumerate() {
                let coef = e.weight * (f64::from(u8::from(l == at)) - probs[l]);
                grads.add_scaled(Block::Entity(m), &p, coef);
            }
        }
    }
    Ok(grads)
}

/// Negative-item sampler with probability proportional to
/// `(incident weight)^(3/4)`. Items with zero mass are excluded.
#[derive(Clone, Debug)]
pub struct NoiseSampler {
    items: Vec<EntityId>,
    probs: Vec<f64>,
    alias: WeightedAliasIndex<f64>,
}

impl NoiseSampler {
    pub fn from_masses(masses: &[(EntityId, f64)]) -> Result<Self, EmbedError> {
        let (items, weights): (Vec<EntityId>, Vec<f64>) = masses
            .iter()
            .filter(|(_, m)| *m > 0.0 && m.is_finite())
            .map(|&(i, m)| (i, m.powf(NOISE_POWER)))
            .unzip();
        if items.is_empty() {
            return Err(EmbedError::EmptySampler);
        }
        let total: f64 = weights.iter().sum();
        let probs = weights.iter().map(|w| w / total).collect();
        let alias = WeightedAliasIndex::new(weights).map_err(|_| EmbedError::EmptySampler)?;
        Ok(NoiseSampler { items, probs, alias })
    }

    /// Item masses are the total incident edge weight in `graph`.
    pub fn from_graph(graph: &BipartiteGraph) -> Result<Self, EmbedError> {
        let masses: Vec<(EntityId, f64)> = graph.items().into_iter().map(|m| (m, graph.item_mass(m))).collect();
        Self::from_masses(&masses)
    }

    pub fn items(&self) -> &[EntityId] {
        &self.items
    }

    /// Analytic sampling probability of `item`.
    pub fn probability(&self, item: EntityId) -> f64 {
        self.items
            .iter()
            .position(|&m| m == item)
            .map_or(0.0, |i| self.probs[i])
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> EntityId {
        self.items[self.alias.sample(rng)]
    }
}

/// Draws `count` items i.i.d. from the noise law.
pub fn sample_negative_items<R: Rng + ?Sized>(
    sampler: &NoiseSampler,
    count: usize,
    rng: &mut R,
) -> Result<Vec<EntityId>, EmbedError> {
    if count == 0 {
        return Err(EmbedError::ZeroCount);
    }
    Ok((0..count).map(|_| sampler.sample(rng)).collect())
}

/// Negative-sampling objective of one edge,
/// `log s(m . p) + sum_n log s(-m_n . p)` under the corrected form,
/// with gradients for `p`, `m` and each negative item.
///
/// The edge weight is not applied here; the trainer samples edges in
/// proportion to their weight instead.
pub fn ns_edge_objective_and_grads<P: Params + ?Sized>(
    params: &P,
    form: ObjectiveForm,
    edge: &Edge,
    negatives: &[EntityId],
) -> Result<(f64, SparseGrads), EmbedError> {
    if negatives.is_empty() {
        return Err(EmbedError::NoNegatives);
    }
    check_entity(params, edge.user)?;
    check_entity(params, edge.item)?;
    for &n in negatives {
        check_entity(params, n)?;
    }
    let p = params.entity_vec(edge.user);
    let m = params.entity_vec(edge.item);
    let mut grads = SparseGrads::new();

    let z = dot(&m, &p);
    let mut value = log_sigmoid(z);
    let c = sigmoid(-z);
    grads.add_scaled(Block::Entity(edge.user), &m, c);
    grads.add_scaled(Block::Entity(edge.item), &p, c);

    for &n in negatives {
        let mn = params.entity_vec(n);
        let z = dot(&mn, &p);
        let c = match form {
            ObjectiveForm::Corrected => {
                value += log_sigmoid(-z);
                -sigmoid(z)
            }
            ObjectiveForm::Literal => {
                value += log_sigmoid(z);
                sigmoid(-z)
            }
        };
        grads.add_scaled(Block::Entity(edge.user), &mn, c);
        grads.add_scaled(Block::Entity(n), &p, c);
    }

    if !value.is_finite() {
        return Err(EmbedError::NonFinite("edge objective"));
    }
    if !grads.is_finite() {
        return Err(EmbedError::NonFinite("edge gradient"));
    }
    Ok((value, grads))
}
