//! Joint training of the two knowledge graphs and the two bipartite graphs
//! over one shared parameter space.
//!
//! Each step draws a task (medicine KG, disease KG, patient-medicine
//! edges, patient-disease edges), samples a positive instance and its
//! negatives, and ascends the negative-sampling objective. With more than
//! one worker the updates are applied lock-free to a shared store whose
//! scalars are atomics; whole-vector updates may interleave.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedAliasIndex;
use serde::Serialize;
use thiserror::Error;

use crate::bipartite::{self, NoiseSampler};
use crate::graph::{BipartiteGraph, EntityId, RelationId, Triple, TripleStore};
use crate::kg::{self, CorruptionMode, CorruptionSampler, EmbedError, EnergyConfig, ObjectiveForm};
use crate::space::{l2_norm, Block, EmbeddingSpace, Params, SpaceError, SparseGrads};

/// Any parameter whose magnitude exceeds this aborts training.
pub const DIVERGENCE_LIMIT: f64 = 1e3;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training diverged at step {step}: {detail}")]
    NonFinite { step: u64, detail: String },
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Space(#[from] SpaceError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    KgMedicine,
    KgDisease,
    PatientMedicine,
    PatientDisease,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::KgMedicine, Task::KgDisease, Task::PatientMedicine, Task::PatientDisease];

    pub fn name(self) -> &'static str {
        match self {
            Task::KgMedicine => "kg_medicine",
            Task::KgDisease => "kg_disease",
            Task::PatientMedicine => "patient_medicine",
            Task::PatientDisease => "patient_disease",
        }
    }

    fn is_kg(self) -> bool {
        matches!(self, Task::KgMedicine | Task::KgDisease)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub dim_entity: usize,
    pub dim_relation: usize,
    pub energy: EnergyConfig,
    pub learning_rate: f64,
    /// Linear decay of the learning rate towards zero over the run.
    pub lr_decay: bool,
    pub negatives_kg: usize,
    pub negatives_edge: usize,
    pub gamma: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub workers: usize,
    pub seed: u64,
    /// Relative task weights in [`Task::ALL`] order; `None` means
    /// proportional to each graph's size.
    pub task_mix: Option<[f64; 4]>,
    pub triple_form: ObjectiveForm,
    pub edge_form: ObjectiveForm,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim_entity: 32,
            dim_relation: 32,
            energy: EnergyConfig::default(),
            learning_rate: 0.01,
            lr_decay: false,
            negatives_kg: 5,
            negatives_edge: 5,
            gamma: 1.0,
            epochs: 50,
            batch_size: 1,
            workers: 1,
            seed: 1,
            task_mix: None,
            triple_form: ObjectiveForm::Corrected,
            edge_form: ObjectiveForm::Corrected,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let err = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.dim_entity == 0 || self.dim_relation == 0 {
            return err("dimensions must be at least 1");
        }
        if self.negatives_kg == 0 || self.negatives_edge == 0 {
            return err("negative counts must be at least 1");
        }
        if self.batch_size == 0 || self.workers == 0 {
            return err("batch size and worker count must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return err("learning rate must be positive");
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return err("gamma must be non-negative");
        }
        if !self.energy.bias.is_finite() {
            return err("bias must be finite");
        }
        if let Some(mix) = self.task_mix {
            if mix.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || mix.iter().sum::<f64>() <= 0.0 {
                return err("task mix weights must be non-negative with a positive sum");
            }
        }
        Ok(())
    }
}

/// The four graphs trained jointly. All ids come from one interner, so a
/// medicine shared by the KG and the prescription graph is one vector.
#[derive(Clone, Copy, Debug)]
pub struct TrainingGraphs<'a> {
    pub kg_medicine: &'a TripleStore,
    pub kg_disease: &'a TripleStore,
    pub patient_medicine: &'a BipartiteGraph,
    pub patient_disease: &'a BipartiteGraph,
}

impl TrainingGraphs<'_> {
    fn size(&self, task: Task) -> usize {
        match task {
            Task::KgMedicine => self.kg_medicine.len(),
            Task::KgDisease => self.kg_disease.len(),
            Task::PatientMedicine => self.patient_medicine.len(),
            Task::PatientDisease => self.patient_disease.len(),
        }
    }

    fn store(&self, task: Task) -> &TripleStore {
        match task {
            Task::KgDisease => self.kg_disease,
            _ => self.kg_medicine,
        }
    }

    fn bipartite(&self, task: Task) -> &BipartiteGraph {
        match task {
            Task::PatientDisease => self.patient_disease,
            _ => self.patient_medicine,
        }
    }

    /// Steps per epoch: one per triple and one per edge.
    pub fn epoch_steps(&self) -> usize {
        Task::ALL.iter().map(|&t| self.size(t)).sum()
    }

    fn entities(&self) -> Vec<EntityId> {
        let mut all: Vec<EntityId> = self
            .kg_medicine
            .entities()
            .into_iter()
            .chain(self.kg_disease.entities())
            .chain(self.patient_medicine.users())
            .chain(self.patient_medicine.items())
            .chain(self.patient_disease.users())
            .chain(self.patient_disease.items())
            .collect();
        all.sort_unstable();
        all.dedup();
        all
    }

    fn relations(&self) -> Vec<RelationId> {
        let mut all: Vec<RelationId> = self
            .kg_medicine
            .relations()
            .into_iter()
            .chain(self.kg_disease.relations())
            .collect();
        all.sort_unstable();
        all.dedup();
        all
    }
}

/// Mean sampled objective of each task over one epoch.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EpochStats {
    pub kg_medicine: Option<f64>,
    pub kg_disease: Option<f64>,
    pub patient_medicine: Option<f64>,
    pub patient_disease: Option<f64>,
    /// `gamma * C(X)` over the trained vocabulary; workers only
    /// synchronize at the end of the run, so only the last epoch has it.
    pub regularizer: Option<f64>,
}

impl EpochStats {
    pub fn get(&self, task: Task) -> Option<f64> {
        match task {
            Task::KgMedicine => self.kg_medicine,
            Task::KgDisease => self.kg_disease,
            Task::PatientMedicine => self.patient_medicine,
            Task::PatientDisease => self.patient_disease,
        }
    }

    fn set(&mut self, task: Task, v: Option<f64>) {
        match task {
            Task::KgMedicine => self.kg_medicine = v,
            Task::KgDisease => self.kg_disease = v,
            Task::PatientMedicine => self.patient_medicine = v,
            Task::PatientDisease => self.patient_disease = v,
        }
    }
}

/// Length of the moving windows kept at the start and end of training.
pub const OBJECTIVE_WINDOW: usize = 100;

#[derive(Clone, Debug, Default, Serialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub wall_time_secs: f64,
    /// Applied updates per task, in [`Task::ALL`] order.
    pub updates: [u64; 4],
    /// Steps skipped because no valid corruption existed.
    pub skipped: u64,
    /// Mean sampled objective over the first and last
    /// [`OBJECTIVE_WINDOW`] steps of each task (worker 0).
    pub initial_window: [Option<f64>; 4],
    pub final_window: [Option<f64>; 4],
    /// Per entity, how many KG-triple and bipartite-edge updates touched it.
    #[serde(skip)]
    pub entity_kg_updates: Vec<u64>,
    #[serde(skip)]
    pub entity_edge_updates: Vec<u64>,
}

/// Parameter store shared by lock-free workers. Every scalar is an
/// `f64` held in an `AtomicU64`; reads and writes of single scalars are
/// atomic, read-modify-write sequences are not.
pub struct SharedSpace {
    k: usize,
    d: usize,
    entities: Vec<AtomicU64>,
    relations: Vec<AtomicU64>,
    projections: Vec<AtomicU64>,
}

fn atomics(values: &[f64]) -> Vec<AtomicU64> {
    values.iter().map(|v| AtomicU64::new(v.to_bits())).collect()
}

fn load_into(src: &[AtomicU64], out: &mut [f64]) {
    for (o, a) in out.iter_mut().zip(src) {
        *o = f64::from_bits(a.load(Ordering::Relaxed));
    }
}

impl SharedSpace {
    pub fn new(space: &EmbeddingSpace) -> Self {
        let (e, r, p) = space.raw_parts();
        SharedSpace {
            k: space.k(),
            d: space.d(),
            entities: atomics(e),
            relations: atomics(r),
            projections: atomics(p),
        }
    }

    fn slots(&self, block: Block) -> &[AtomicU64] {
        match block {
            Block::Entity(e) => &self.entities[e.index() * self.k..(e.index() + 1) * self.k],
            Block::Relation(r) => &self.relations[r.index() * self.d..(r.index() + 1) * self.d],
            Block::Projection(r) => {
                let n = self.k * self.d;
                &self.projections[r.index() * n..(r.index() + 1) * n]
            }
        }
    }

    /// `block += scale * grad`, returning the largest resulting magnitude.
    fn add(&self, block: Block, grad: &[f64], scale: f64) -> f64 {
        let mut max = 0.0f64;
        for (slot, g) in self.slots(block).iter().zip(grad) {
            let v = f64::from_bits(slot.load(Ordering::Relaxed)) + scale * g;
            slot.store(v.to_bits(), Ordering::Relaxed);
            max = if v.is_finite() { max.max(v.abs()) } else { f64::INFINITY };
        }
        max
    }

    fn read_block(&self, block: Block) -> Vec<f64> {
        let slots = self.slots(block);
        let mut out = vec![0.0; slots.len()];
        load_into(slots, &mut out);
        out
    }

    pub fn snapshot(&self) -> EmbeddingSpace {
        let collect = |v: &[AtomicU64]| v.iter().map(|a| f64::from_bits(a.load(Ordering::Relaxed))).collect();
        EmbeddingSpace::from_parts(
            self.k,
            self.d,
            collect(&self.entities),
            collect(&self.relations),
            collect(&self.projections),
        )
        .expect("shared store keeps consistent shapes")
    }
}

impl Params for SharedSpace {
    fn k(&self) -> usize {
        self.k
    }

    fn d(&self) -> usize {
        self.d
    }

    fn num_entities(&self) -> usize {
        self.entities.len() / self.k
    }

    fn num_relations(&self) -> usize {
        self.relations.len() / self.d
    }

    fn read_entity(&self, id: EntityId, out: &mut [f64]) {
        load_into(self.slots(Block::Entity(id)), out);
    }

    fn read_relation(&self, id: RelationId, out: &mut [f64]) {
        load_into(self.slots(Block::Relation(id)), out);
    }

    fn read_projection(&self, id: RelationId, out: &mut [f64]) {
        load_into(self.slots(Block::Projection(id)), out);
    }
}

fn hinge_terms<P: Params + ?Sized>(
    params: &P,
    gamma: f64,
    blocks: impl Iterator<Item = Block>,
) -> (f64, SparseGrads) {
    let mut value = 0.0;
    let mut grads = SparseGrads::new();
    for block in blocks {
        let x = match block {
            Block::Entity(e) => params.entity_vec(e),
            Block::Relation(r) => params.relation_vec(r),
            Block::Projection(_) => continue,
        };
        let norm = l2_norm(&x);
        if norm > 1.0 {
            value += gamma * (norm - 1.0);
            grads.add_scaled(block, &x, gamma / norm);
        }
    }
    (value, grads)
}

/// `gamma * sum [||x|| - 1]_+` over every entity and relation vector of the
/// space, with its gradient. The penalty is subtracted from the maximized
/// objective, so trainers descend along these gradients.
pub fn regularizer_and_grads<P: Params + ?Sized>(params: &P, gamma: f64) -> (f64, SparseGrads) {
    let blocks = (0..params.num_entities())
        .map(|i| Block::Entity(EntityId(i as u32)))
        .chain((0..params.num_relations()).map(|r| Block::Relation(RelationId(r as u32))));
    hinge_terms(params, gamma, blocks)
}

/// The penalty restricted to the given entities and relations.
pub fn regularizer_over<P: Params + ?Sized>(
    params: &P,
    gamma: f64,
    entities: &[EntityId],
    relations: &[RelationId],
) -> f64 {
    let blocks = entities
        .iter()
        .map(|&e| Block::Entity(e))
        .chain(relations.iter().map(|&r| Block::Relation(r)));
    hinge_terms(params, gamma, blocks).0
}

/// Exact values of the four log-likelihood terms and the penalty.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct ObjectiveTerms {
    pub kg_medicine: f64,
    pub kg_disease: f64,
    pub patient_medicine: f64,
    pub patient_disease: f64,
    pub regularizer: f64,
}

impl ObjectiveTerms {
    /// Sum of the likelihood terms minus the penalty.
    pub fn total(&self) -> f64 {
        self.kg_medicine + self.kg_disease + self.patient_medicine + self.patient_disease - self.regularizer
    }
}

/// Evaluates every objective term with exact softmax normalization. The
/// bipartite conditionals are normalized over the items of each graph and
/// the penalty covers the vocabulary of the four graphs. Cost is quadratic
/// in graph size.
pub fn evaluate_objective<P: Params + ?Sized>(
    params: &P,
    graphs: &TrainingGraphs<'_>,
    cfg: &TrainConfig,
) -> Result<ObjectiveTerms, TrainError> {
    let kg_term = |store: &TripleStore| -> Result<f64, EmbedError> {
        store
            .triples()
            .iter()
            .map(|t| kg::triple_log_likelihood(params, &cfg.energy, store, t.head, t.relation, t.tail))
            .sum()
    };
    let edge_term = |g: &BipartiteGraph| bipartite::weighted_loglik(params, g, &g.items());
    Ok(ObjectiveTerms {
        kg_medicine: kg_term(graphs.kg_medicine)?,
        kg_disease: kg_term(graphs.kg_disease)?,
        patient_medicine: edge_term(graphs.patient_medicine)?,
        patient_disease: edge_term(graphs.patient_disease)?,
        regularizer: regularizer_over(params, cfg.gamma, &graphs.entities(), &graphs.relations()),
    })
}

/// Read-only sampling state shared by all workers.
struct Plan<'a> {
    graphs: TrainingGraphs<'a>,
    cfg: &'a TrainConfig,
    tasks: Vec<Task>,
    task_dist: WeightedIndex<f64>,
    corruption: [CorruptionSampler; 2],
    edge_dist: [Option<WeightedAliasIndex<f64>>; 2],
    noise: [Option<NoiseSampler>; 2],
    /// Per entity / relation: `1 / expected positive touches per epoch`.
    entity_reg_scale: Vec<f64>,
    relation_reg_scale: Vec<f64>,
    total_steps: u64,
}

fn slot(task: Task) -> usize {
    match task {
        Task::KgMedicine | Task::PatientMedicine => 0,
        Task::KgDisease | Task::PatientDisease => 1,
    }
}

impl<'a> Plan<'a> {
    fn new(graphs: TrainingGraphs<'a>, cfg: &'a TrainConfig, num_entities: usize, num_relations: usize) -> Result<Option<Self>, TrainError> {
        let weights: Vec<(Task, f64)> = Task::ALL
            .iter()
            .enumerate()
            .filter(|(_, &t)| graphs.size(t) > 0)
            .map(|(i, &t)| (t, cfg.task_mix.map_or(graphs.size(t) as f64, |m| m[i])))
            .filter(|(_, w)| *w > 0.0)
            .collect();
        if weights.is_empty() {
            return Ok(None);
        }
        let total_w: f64 = weights.iter().map(|(_, w)| w).sum();
        let tasks: Vec<Task> = weights.iter().map(|(t, _)| *t).collect();
        let task_dist = WeightedIndex::new(weights.iter().map(|(_, w)| *w))
            .map_err(|e| TrainError::Config(format!("task mix: {}", e)))?;

        let edge_alias = |g: &BipartiteGraph| -> Result<Option<WeightedAliasIndex<f64>>, TrainError> {
            if g.is_empty() {
                return Ok(None);
            }
            WeightedAliasIndex::new(g.edges().iter().map(|e| e.weight).collect())
                .map(Some)
                .map_err(|e| TrainError::Config(format!("edge weights: {}", e)))
        };
        let noise = |g: &BipartiteGraph| -> Result<Option<NoiseSampler>, TrainError> {
            if g.is_empty() {
                Ok(None)
            } else {
                Ok(Some(NoiseSampler::from_graph(g)?))
            }
        };

        let steps = graphs.epoch_steps() as f64;
        let mut entity_touch = vec![0.0; num_entities];
        let mut relation_touch = vec![0.0; num_relations];
        for (task, w) in &weights {
            let per_instance = steps * w / total_w / graphs.size(*task) as f64;
            if task.is_kg() {
                for t in graphs.store(*task).triples() {
                    entity_touch[t.head.index()] += per_instance;
                    entity_touch[t.tail.index()] += per_instance;
                    relation_touch[t.relation.index()] += per_instance;
                }
            } else {
                let g = graphs.bipartite(*task);
                let per_weight = steps * w / total_w / g.total_weight();
                for e in g.edges() {
                    entity_touch[e.user.index()] += per_weight * e.weight;
                    entity_touch[e.item.index()] += per_weight * e.weight;
                }
            }
        }
        let inv = |x: f64| if x > 0.0 { 1.0 / x } else { 0.0 };

        Ok(Some(Plan {
            graphs,
            cfg,
            tasks,
            task_dist,
            corruption: [
                CorruptionSampler::new(graphs.kg_medicine),
                CorruptionSampler::new(graphs.kg_disease),
            ],
            edge_dist: [edge_alias(graphs.patient_medicine)?, edge_alias(graphs.patient_disease)?],
            noise: [noise(graphs.patient_medicine)?, noise(graphs.patient_disease)?],
            entity_reg_scale: entity_touch.into_iter().map(inv).collect(),
            relation_reg_scale: relation_touch.into_iter().map(inv).collect(),
            total_steps: (graphs.epoch_steps() * cfg.epochs) as u64,
        }))
    }
}

/// Per-worker accumulators.
struct WorkerStats {
    epoch_sums: Vec<[(f64, u64); 4]>,
    updates: [u64; 4],
    skipped: u64,
    first: [Vec<f64>; 4],
    last: [std::collections::VecDeque<f64>; 4],
    entity_kg: Vec<u64>,
    entity_edge: Vec<u64>,
}

impl WorkerStats {
    fn new(epochs: usize, num_entities: usize) -> Self {
        WorkerStats {
            epoch_sums: vec![[(0.0, 0); 4]; epochs],
            updates: [0; 4],
            skipped: 0,
            first: Default::default(),
            last: Default::default(),
            entity_kg: vec![0; num_entities],
            entity_edge: vec![0; num_entities],
        }
    }

    fn record(&mut self, epoch: usize, task: Task, value: f64) {
        let i = Task::ALL.iter().position(|&t| t == task).unwrap();
        let (sum, n) = &mut self.epoch_sums[epoch][i];
        *sum += value;
        *n += 1;
        if self.first[i].len() < OBJECTIVE_WINDOW {
            self.first[i].push(value);
        }
        if self.last[i].len() == OBJECTIVE_WINDOW {
            self.last[i].pop_front();
        }
        self.last[i].push_back(value);
    }
}

struct Positive {
    task: Task,
    /// Entity and relation blocks of the positive instance; these receive
    /// the lazy penalty.
    anchors: Vec<Block>,
}

fn sample_step<R: Rng>(plan: &Plan<'_>, shared: &SharedSpace, rng: &mut R) -> Result<Option<(Positive, f64, SparseGrads)>, EmbedError> {
    let task = plan.tasks[plan.task_dist.sample(rng)];
    let cfg = plan.cfg;
    if task.is_kg() {
        let store = plan.graphs.store(task);
        let positive: Triple = store.triples()[rng.random_range(0..store.len())];
        let sampler = &plan.corruption[slot(task)];
        let first = rng.random_range(0..3);
        for offset in 0..3 {
            let mode = CorruptionMode::ALL[(first + offset) % 3];
            match sampler.sample(store, &positive, cfg.negatives_kg, mode, rng) {
                Ok(negs) => {
                    let (v, g) = kg::ns_objective_and_grads(shared, &cfg.energy, cfg.triple_form, &positive, &negs)?;
                    let anchors = vec![
                        Block::Entity(positive.head),
                        Block::Entity(positive.tail),
                        Block::Relation(positive.relation),
                    ];
                    return Ok(Some((Positive { task, anchors }, v, g)));
                }
                Err(EmbedError::Saturated { .. }) => continue,
                Err(e) => return Err(e),
            }
        }
        Ok(None)
    } else {
        let s = slot(task);
        let graph = plan.graphs.bipartite(task);
        let edge = graph.edges()[plan.edge_dist[s].as_ref().expect("non-empty graph").sample(rng)];
        let noise = plan.noise[s].as_ref().expect("non-empty graph");
        let negs = bipartite::sample_negative_items(noise, cfg.negatives_edge, rng)?;
        let (v, g) = bipartite::ns_edge_objective_and_grads(shared, cfg.edge_form, &edge, &negs)?;
        let anchors = vec![Block::Entity(edge.user), Block::Entity(edge.item)];
        Ok(Some((Positive { task, anchors }, v, g)))
    }
}

fn diverged(step: u64, block: Block, magnitude: f64) -> TrainError {
    TrainError::NonFinite {
        step,
        detail: format!("{:?} reached magnitude {:e}", block, magnitude),
    }
}

fn run_worker(
    plan: &Plan<'_>,
    shared: &SharedSpace,
    worker: usize,
    seed: u64,
    num_entities: usize,
) -> Result<WorkerStats, TrainError> {
    let cfg = plan.cfg;
    let workers = cfg.workers as u64;
    let epoch_steps = plan.graphs.epoch_steps() as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(worker as u64 + 1);
    let mut stats = WorkerStats::new(cfg.epochs, num_entities);

    // Steps of each epoch are dealt round-robin across workers.
    let share = |w: u64| epoch_steps / workers + u64::from(w < epoch_steps % workers);
    let mine = share(worker as u64);
    let mut local_step = 0u64;
    let mut batch = SparseGrads::new();
    let mut anchors: Vec<Block> = Vec::new();
    let mut in_batch = 0usize;

    for epoch in 0..cfg.epochs {
        for i in 0..mine {
            let global_step = epoch as u64 * epoch_steps + i * workers + worker as u64;
            let Some((positive, value, grads)) = sample_step(plan, shared, &mut rng)? else {
                stats.skipped += 1;
                continue;
            };
            let task_idx = Task::ALL.iter().position(|&t| t == positive.task).unwrap();
            stats.record(epoch, positive.task, value);
            stats.updates[task_idx] += 1;
            for b in grads.blocks() {
                if let Block::Entity(e) = b {
                    if positive.task.is_kg() {
                        stats.entity_kg[e.index()] += 1;
                    } else {
                        stats.entity_edge[e.index()] += 1;
                    }
                }
            }
            batch.merge(&grads, 1.0);
            anchors.extend(positive.anchors);
            in_batch += 1;
            local_step += 1;

            let last_of_run = epoch + 1 == cfg.epochs && i + 1 == mine;
            if in_batch < cfg.batch_size && !last_of_run {
                continue;
            }
            let progress = global_step as f64 / plan.total_steps.max(1) as f64;
            let lr = if cfg.lr_decay {
                cfg.learning_rate * (1.0 - progress).max(1e-4)
            } else {
                cfg.learning_rate
            };
            for (block, g) in batch.iter() {
                let m = shared.add(block, g, lr);
                if m > DIVERGENCE_LIMIT {
                    return Err(diverged(global_step, block, m));
                }
            }
            if cfg.gamma > 0.0 {
                apply_lazy_penalty(plan, shared, &anchors, lr, global_step)?;
            }
            batch = SparseGrads::new();
            anchors.clear();
            in_batch = 0;
        }
    }
    debug_assert_eq!(local_step + stats.skipped, mine * cfg.epochs as u64);
    Ok(stats)
}

/// Hinge-penalty step on the blocks of the positive instances just
/// trained, scaled so that in expectation each block receives one full
/// penalty gradient per epoch. The step never crosses the unit sphere.
fn apply_lazy_penalty(plan: &Plan<'_>, shared: &SharedSpace, anchors: &[Block], lr: f64, step: u64) -> Result<(), TrainError> {
    for &block in anchors {
        let scale = match block {
            Block::Entity(e) => plan.entity_reg_scale[e.index()],
            Block::Relation(r) => plan.relation_reg_scale[r.index()],
            Block::Projection(_) => continue,
        };
        let x = shared.read_block(block);
        let norm = l2_norm(&x);
        if norm > 1.0 {
            let shrink = (lr * plan.cfg.gamma * scale).min(norm - 1.0);
            let m = shared.add(block, &x, -shrink / norm);
            if m > DIVERGENCE_LIMIT {
                return Err(diverged(step, block, m));
            }
        }
    }
    Ok(())
}

/// Trains the joint embedding. With `workers == 1` the run is bitwise
/// reproducible for a fixed seed.
pub fn train(
    graphs: &TrainingGraphs<'_>,
    num_entities: usize,
    num_relations: usize,
    cfg: &TrainConfig,
) -> Result<(EmbeddingSpace, TrainReport), TrainError> {
    cfg.validate()?;
    let started = Instant::now();
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let space = EmbeddingSpace::init(num_entities, num_relations, cfg.dim_entity, cfg.dim_relation, &mut init_rng)?;
    let mut report = TrainReport {
        entity_kg_updates: vec![0; num_entities],
        entity_edge_updates: vec![0; num_entities],
        ..TrainReport::default()
    };
    let plan = match Plan::new(*graphs, cfg, num_entities, num_relations)? {
        Some(plan) if cfg.epochs > 0 => plan,
        _ => {
            report.epochs = vec![EpochStats::default(); cfg.epochs];
            return Ok((space, report));
        }
    };

    let shared = SharedSpace::new(&space);
    let train_seed = cfg.seed ^ 0x5eed_1e55_0f5e_ed00;
    let results: Vec<Result<WorkerStats, TrainError>> = if cfg.workers == 1 {
        vec![run_worker(&plan, &shared, 0, train_seed, num_entities)]
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..cfg.workers)
                .map(|w| {
                    let (plan, shared) = (&plan, &shared);
                    scope.spawn(move || run_worker(plan, shared, w, train_seed, num_entities))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("training worker panicked"))
                .collect()
        })
    };
    let stats = results.into_iter().collect::<Result<Vec<_>, _>>()?;

    let trained = shared.snapshot();
    let regularizer = regularizer_over(&trained, cfg.gamma, &graphs.entities(), &graphs.relations());
    for epoch in 0..cfg.epochs {
        let mut es = EpochStats::default();
        for (i, &task) in Task::ALL.iter().enumerate() {
            let (sum, n) = stats
                .iter()
                .fold((0.0, 0u64), |(s, n), w| (s + w.epoch_sums[epoch][i].0, n + w.epoch_sums[epoch][i].1));
            es.set(task, (n > 0).then(|| sum / n as f64));
        }
        es.regularizer = (epoch + 1 == cfg.epochs).then_some(regularizer);
        report.epochs.push(es);
    }
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    for i in 0..4 {
        report.initial_window[i] = mean(&stats[0].first[i]);
        report.final_window[i] = mean(&stats[0].last[i].iter().copied().collect::<Vec<_>>());
        report.updates[i] = stats.iter().map(|w| w.updates[i]).sum();
    }
    report.skipped = stats.iter().map(|w| w.skipped).sum();
    for w in &stats {
        for (a, b) in report.entity_kg_updates.iter_mut().zip(&w.entity_kg) {
            *a += b;
        }
        for (a, b) in report.entity_edge_updates.iter_mut().zip(&w.entity_edge) {
            *a += b;
        }
    }
    report.wall_time_secs = started.elapsed().as_secs_f64();
    Ok((trained, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::MergePolicy;

    #[test]
    fn hinge_inactive_inside_unit_ball() {
        let mut s = EmbeddingSpace::zeros(3, 1, 2, 2).unwrap();
        s.entity_mut(EntityId(0)).copy_from_slice(&[0.6, 0.8]);
        s.relation_mut(RelationId(0)).copy_from_slice(&[0.1, 0.0]);
        let (v, g) = regularizer_and_grads(&s, 1.0);
        assert_eq!(v, 0.0);
        assert!(g.is_empty());
    }

    #[test]
    fn hinge_of_norm_two_vector() {
        let mut s = EmbeddingSpace::zeros(2, 1, 2, 2).unwrap();
        s.entity_mut(EntityId(1)).copy_from_slice(&[0.0, 2.0]);
        let (v, g) = regularizer_and_grads(&s, 1.0);
        assert_eq!(v, 1.0);
        assert_eq!(g.len(), 1);
        assert_eq!(g.get(Block::Entity(EntityId(1))), Some(&[0.0, 1.0][..]));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = [
            TrainConfig { negatives_kg: 0, ..Default::default() },
            TrainConfig { learning_rate: 0.0, ..Default::default() },
            TrainConfig { gamma: -1.0, ..Default::default() },
            TrainConfig { workers: 0, ..Default::default() },
            TrainConfig { task_mix: Some([0.0; 4]), ..Default::default() },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(TrainError::Config(_))));
        }
    }

    #[test]
    fn empty_graphs_give_zero_objective() {
        let (kg, bg) = (TripleStore::new(), BipartiteGraph::new());
        let graphs = TrainingGraphs {
            kg_medicine: &kg,
            kg_disease: &kg,
            patient_medicine: &bg,
            patient_disease: &bg,
        };
        let s = EmbeddingSpace::zeros(0, 0, 4, 4).unwrap();
        let terms = evaluate_objective(&s, &graphs, &TrainConfig::default()).unwrap();
        assert_eq!(terms, ObjectiveTerms::default());
        let (space, report) = train(&graphs, 0, 0, &TrainConfig::default()).unwrap();
        assert_eq!(space.num_entities(), 0);
        assert_eq!(report.updates, [0; 4]);
    }

    #[test]
    fn shared_store_snapshot_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = EmbeddingSpace::init(5, 2, 3, 2, &mut rng).unwrap();
        assert_eq!(SharedSpace::new(&s).snapshot(), s);
    }

    #[test]
    fn divergence_is_reported() {
        let mut kg = TripleStore::new();
        kg.insert(Triple::new(EntityId(0), RelationId(0), EntityId(1)));
        kg.insert(Triple::new(EntityId(1), RelationId(0), EntityId(2)));
        let mut pm = BipartiteGraph::new();
        pm.add_edge(EntityId(3), EntityId(0), 1.0, MergePolicy::Sum).unwrap();
        pm.add_edge(EntityId(3), EntityId(1), 1.0, MergePolicy::Sum).unwrap();
        let empty_kg = TripleStore::new();
        let empty = BipartiteGraph::new();
        let graphs = TrainingGraphs {
            kg_medicine: &kg,
            kg_disease: &empty_kg,
            patient_medicine: &pm,
            patient_disease: &empty,
        };
        let cfg = TrainConfig {
            learning_rate: 1e6,
            dim_entity: 4,
            dim_relation: 4,
            epochs: 5,
            ..Default::default()
        };
        assert!(matches!(train(&graphs, 4, 1, &cfg), Err(TrainError::NonFinite { .. })));
    }
}
