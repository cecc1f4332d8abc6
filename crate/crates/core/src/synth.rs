//! Synthetic heterogeneous datasets with planted block structure.
//!
//! Patients, diseases and medicines are assigned round-robin to blocks.
//! Each entity gets a latent vector near its block center; diagnoses and
//! prescriptions are drawn with probability proportional to
//! `sigmoid(sharpness * (affinity - offset))`. Interactions are planted
//! between medicines of the same block and avoided by prescriptions.
//! One medicine per block (by default) is held out entirely from the
//! prescription graph and only reachable through the knowledge graph.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::graph::{
    BipartiteGraph, Edge, EntityClass, EntityId, GraphError, Interner, MergePolicy, RelationId, Triple, TripleStore,
};

pub const INTERACTS_WITH: &str = "interacts_with";
pub const SIMILAR_TO: &str = "similar_to";
pub const IS_A: &str = "is_a";

#[derive(Debug, Error, PartialEq)]
pub enum SpecError {
    #[error("`{0}` must be at least 1")]
    ZeroCount(&'static str),
    #[error("`{0}` must lie in [0, 1], got {1}")]
    OutOfUnit(&'static str, f64),
    #[error("`{0}` must be finite and non-negative, got {1}")]
    Negative(&'static str, f64),
    #[error("range `{0}` is empty: {1}..={2}")]
    EmptyRange(&'static str, usize, usize),
    #[error("`{name}` = {value} exceeds the {limit} available")]
    TooMany {
        name: &'static str,
        value: usize,
        limit: usize,
    },
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("ground truth names unknown entity `{0}`")]
    UnknownName(String),
}

/// Generator parameters. Counts of other entities and relations are
/// derived: one category entity per block and the three relations
/// `interacts_with`, `similar_to` and `is_a`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub patients: usize,
    pub diseases: usize,
    pub medicines: usize,
    pub blocks: usize,
    pub latent_dim: usize,
    /// Expected norm of an entity's deviation from its block center.
    pub latent_noise: f64,
    pub affinity_sharpness: f64,
    pub affinity_offset: f64,
    /// Share of the mean diagnosis latent in the prescription query; the
    /// rest is the patient's own latent.
    pub diagnosis_weight: f64,
    pub diagnoses_min: usize,
    pub diagnoses_max: usize,
    pub prescriptions_min: usize,
    pub prescriptions_max: usize,
    pub weight_max: usize,
    /// Probability that a prescription is replaced by a uniform medicine.
    pub edge_noise: f64,
    /// Probability of an interaction between two medicines of one block.
    pub interaction_density: f64,
    /// Probability that an interacting medicine is refused once its
    /// partner has been prescribed.
    pub ddi_avoidance: f64,
    pub similar_k: usize,
    pub similar_threshold: f64,
    pub cold_medicines: usize,
    pub seed: u64,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec {
            patients: 500,
            diseases: 70,
            medicines: 80,
            blocks: 8,
            latent_dim: 8,
            latent_noise: 0.6,
            affinity_sharpness: 20.0,
            affinity_offset: 1.0,
            diagnosis_weight: 0.25,
            diagnoses_min: 1,
            diagnoses_max: 3,
            prescriptions_min: 2,
            prescriptions_max: 5,
            weight_max: 3,
            edge_noise: 0.02,
            interaction_density: 0.2,
            ddi_avoidance: 1.0,
            similar_k: 2,
            similar_threshold: 1.0,
            cold_medicines: 8,
            seed: 1,
        }
    }
}

impl GenSpec {
    pub fn validate(&self) -> Result<(), SpecError> {
        for (name, v) in [
            ("patients", self.patients),
            ("diseases", self.diseases),
            ("medicines", self.medicines),
            ("blocks", self.blocks),
            ("latent_dim", self.latent_dim),
            ("diagnoses_min", self.diagnoses_min),
            ("prescriptions_min", self.prescriptions_min),
            ("weight_max", self.weight_max),
        ] {
            if v == 0 {
                return Err(SpecError::ZeroCount(name));
            }
        }
        for (name, v) in [
            ("edge_noise", self.edge_noise),
            ("interaction_density", self.interaction_density),
            ("ddi_avoidance", self.ddi_avoidance),
            ("diagnosis_weight", self.diagnosis_weight),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(SpecError::OutOfUnit(name, v));
            }
        }
        for (name, v) in [
            ("latent_noise", self.latent_noise),
            ("affinity_sharpness", self.affinity_sharpness),
            ("similar_threshold", self.similar_threshold),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SpecError::Negative(name, v));
            }
        }
        if !self.affinity_offset.is_finite() {
            return Err(SpecError::Negative("affinity_offset", self.affinity_offset));
        }
        if self.diagnoses_min > self.diagnoses_max {
            return Err(SpecError::EmptyRange("diagnoses", self.diagnoses_min, self.diagnoses_max));
        }
        if self.prescriptions_min > self.prescriptions_max {
            return Err(SpecError::EmptyRange(
                "prescriptions",
                self.prescriptions_min,
                self.prescriptions_max,
            ));
        }
        if self.diagnoses_max > self.diseases {
            return Err(SpecError::TooMany {
                name: "diagnoses_max",
                value: self.diagnoses_max,
                limit: self.diseases,
            });
        }
        // Every block keeps at least one prescribable medicine.
        let cold_limit = self.medicines.saturating_sub(self.blocks.min(self.medicines));
        if self.cold_medicines > cold_limit {
            return Err(SpecError::TooMany {
                name: "cold_medicines",
                value: self.cold_medicines,
                limit: cold_limit,
            });
        }
        if self.prescriptions_max > self.medicines - self.cold_medicines {
            return Err(SpecError::TooMany {
                name: "prescriptions_max",
                value: self.prescriptions_max,
                limit: self.medicines - self.cold_medicines,
            });
        }
        Ok(())
    }
}

/// Planted structure, keyed by entity name.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub latent: BTreeMap<String, Vec<f64>>,
    pub block: BTreeMap<String, usize>,
    pub interactions: Vec<(String, String)>,
    /// Medicine positions in the planted space behind interactions.
    pub pharma_latent: BTreeMap<String, Vec<f64>>,
    pub interaction_shift: Vec<f64>,
    pub cold_medicines: Vec<String>,
    /// Prescriptions of cold medicines, withheld from the patient-medicine
    /// graph.
    pub cold_edges: Vec<(String, String, f64)>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub interner: Interner,
    pub kg_medicine: TripleStore,
    pub kg_disease: TripleStore,
    pub patient_medicine: BipartiteGraph,
    pub patient_disease: BipartiteGraph,
    pub ground_truth: GroundTruth,
}

impl Dataset {
    fn id(&self, name: &str) -> Result<EntityId, DatasetError> {
        self.interner
            .entity(name)
            .ok_or_else(|| DatasetError::UnknownName(name.to_string()))
    }

    pub fn interaction_relation(&self) -> Option<RelationId> {
        self.interner.relation(INTERACTS_WITH)
    }

    pub fn cold_medicine_ids(&self) -> Result<Vec<EntityId>, DatasetError> {
        self.ground_truth.cold_medicines.iter().map(|n| self.id(n)).collect()
    }

    pub fn cold_edges(&self) -> Result<Vec<Edge>, DatasetError> {
        self.ground_truth
            .cold_edges
            .iter()
            .map(|(u, i, w)| {
                Ok(Edge {
                    user: self.id(u)?,
                    item: self.id(i)?,
                    weight: *w,
                })
            })
            .collect()
    }

    pub fn medicines(&self) -> Vec<EntityId> {
        self.interner.entities_of(EntityClass::Medicine)
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn block_centers(spec: &GenSpec, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..spec.blocks)
        .map(|b| {
            if spec.blocks <= spec.latent_dim {
                let mut c = vec![0.0; spec.latent_dim];
                c[b] = 1.0;
                c
            } else {
                let v: Vec<f64> = (0..spec.latent_dim).map(|_| rng.sample(StandardNormal)).collect();
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                v.into_iter().map(|x| x / n).collect()
            }
        })
        .collect()
}

/// Dimension of the planted pharmacological space behind interactions.
const PHARMA_DIM: usize = 2;

fn perturb(center: &[f64], noise: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let scale = noise / (center.len() as f64).sqrt();
    center
        .iter()
        .map(|c| c + scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Draws up to `n` distinct indices proportionally to `weights`, calling
/// `refuse(chosen, candidate)` to zero out candidates after each pick.
fn draw_distinct(
    weights: &mut [f64],
    n: usize,
    rng: &mut ChaCha8Rng,
    mut after_pick: impl FnMut(usize, &mut [f64], &mut ChaCha8Rng),
) -> Vec<usize> {
    let mut picked = Vec::with_capacity(n);
    while picked.len() < n {
        let Ok(dist) = WeightedIndex::new(weights.iter().copied()) else {
            break;
        };
        let i = dist.sample(rng);
        weights[i] = 0.0;
        picked.push(i);
        after_pick(i, weights, rng);
    }
    picked
}

pub fn generate(spec: &GenSpec) -> Result<Dataset, SpecError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut interner = Interner::new();
    let intern = |interner: &mut Interner, name: String, class| {
        interner
            .intern_entity(&name, class)
            .expect("generated names are unique and nonempty")
    };
    let patients: Vec<EntityId> = (0..spec.patients)
        .map(|i| intern(&mut interner, format!("patient_{:04}", i), EntityClass::Patient))
        .collect();
    let diseases: Vec<EntityId> = (0..spec.diseases)
        .map(|i| intern(&mut interner, format!("disease_{:03}", i), EntityClass::Disease))
        .collect();
    let medicines: Vec<EntityId> = (0..spec.medicines)
        .map(|i| intern(&mut interner, format!("medicine_{:03}", i), EntityClass::Medicine))
        .collect();
    let categories: Vec<EntityId> = (0..spec.blocks)
        .map(|b| intern(&mut interner, format!("category_{}", b), EntityClass::Other))
        .collect();
    let rel = |interner: &mut Interner, name: &str| interner.intern_relation(name).expect("nonempty name");
    let interacts = rel(&mut interner, INTERACTS_WITH);
    let similar = rel(&mut interner, SIMILAR_TO);
    let is_a = rel(&mut interner, IS_A);

    let centers = block_centers(spec, &mut rng);
    let block_of = |i: usize| i % spec.blocks;
    let patient_latent: Vec<Vec<f64>> = (0..spec.patients)
        .map(|i| perturb(&centers[block_of(i)], spec.latent_noise, &mut rng))
        .collect();
    let disease_latent: Vec<Vec<f64>> = (0..spec.diseases)
        .map(|i| perturb(&centers[block_of(i)], spec.latent_noise, &mut rng))
        .collect();
    let medicine_latent: Vec<Vec<f64>> = (0..spec.medicines)
        .map(|i| perturb(&centers[block_of(i)], spec.latent_noise, &mut rng))
        .collect();

    // Cold medicines: the first `cold_medicines` slots of the round-robin
    // order after each block's first member, so every block keeps one
    // prescribable medicine.
    let cold: BTreeSet<usize> = (spec.blocks.min(spec.medicines)..spec.medicines)
        .take(spec.cold_medicines)
        .collect();

    // Interactions follow a planted translation in a separate
    // pharmacological space: within each block, the `interaction_density`
    // fraction of pairs with the smallest residual |x_h + s - x_t| interact.
    let pharma: Vec<Vec<f64>> = (0..spec.medicines)
        .map(|_| (0..PHARMA_DIM).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let shift: Vec<f64> = {
        let v: Vec<f64> = (0..PHARMA_DIM).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        v.iter().map(|x| x / n).collect()
    };
    let planted = |h: usize, t: usize| {
        let moved: Vec<f64> = pharma[h].iter().zip(&shift).map(|(x, s)| x + s).collect();
        distance(&moved, &pharma[t])
    };
    let mut kg_medicine = TripleStore::new();
    let mut interaction_pairs: BTreeSet<(usize, usize)> = BTreeSet::new();
    for block in 0..spec.blocks {
        let members: Vec<usize> = (0..spec.medicines).filter(|&i| block_of(i) == block).collect();
        let mut scored: Vec<(f64, usize, usize)> = Vec::new();
        for (i, &a) in members.iter().enumerate() {
            for &b in &members[i + 1..] {
                let (fwd, bwd) = (planted(a, b), planted(b, a));
                scored.push(if fwd <= bwd { (fwd, a, b) } else { (bwd, b, a) });
            }
        }
        scored.sort_by(|x, y| x.0.total_cmp(&y.0).then((x.1, x.2).cmp(&(y.1, y.2))));
        let take = (spec.interaction_density * scored.len() as f64).round() as usize;
        for &(_, h, t) in scored.iter().take(take) {
            interaction_pairs.insert((h.min(t), h.max(t)));
            kg_medicine.insert(Triple::new(medicines[h], interacts, medicines[t]));
        }
    }
    for a in 0..spec.medicines {
        let mut near: Vec<(f64, usize)> = (0..spec.medicines)
            .filter(|&b| b != a && block_of(b) == block_of(a) && !cold.contains(&b))
            .map(|b| (distance(&medicine_latent[a], &medicine_latent[b]), b))
            .collect();
        near.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        for (rank, &(dist, b)) in near.iter().take(spec.similar_k).enumerate() {
            if rank == 0 || dist < spec.similar_threshold {
                kg_medicine.insert(Triple::new(medicines[a], similar, medicines[b]));
            }
        }
    }
    let mut kg_disease = TripleStore::new();
    for (i, &d) in diseases.iter().enumerate() {
        kg_disease.insert(Triple::new(d, is_a, categories[block_of(i)]));
    }

    let weight = |sharp: f64, a: f64| sigmoid(sharp * (a - spec.affinity_offset));
    let mut patient_disease = BipartiteGraph::new();
    let mut patient_medicine = BipartiteGraph::new();
    let mut cold_edges = Vec::new();
    let interacting = |a: usize, b: usize| interaction_pairs.contains(&(a.min(b), a.max(b)));
    for (pi, &p) in patients.iter().enumerate() {
        let n_diag = rng.random_range(spec.diagnoses_min..=spec.diagnoses_max);
        let mut dw: Vec<f64> = disease_latent
            .iter()
            .map(|l| weight(spec.affinity_sharpness, dot(&patient_latent[pi], l)))
            .collect();
        let diag = draw_distinct(&mut dw, n_diag, &mut rng, |_, _, _| {});
        for &d in &diag {
            patient_disease
                .add_edge(p, diseases[d], 1.0, MergePolicy::Unit)
                .expect("unit weight");
        }
        // Prescriptions follow the patient and the mean of the diagnoses.
        let w = spec.diagnosis_weight;
        let mut query: Vec<f64> = patient_latent[pi].iter().map(|x| (1.0 - w) * x).collect();
        for &d in &diag {
            for (q, x) in query.iter_mut().zip(&disease_latent[d]) {
                *q += w * x / diag.len() as f64;
            }
        }
        let mut mw: Vec<f64> = medicine_latent
            .iter()
            .map(|l| weight(spec.affinity_sharpness, dot(&query, l)))
            .collect();
        let total: f64 = mw.iter().sum();
        let uniform = total / spec.medicines as f64;
        mw.iter_mut()
            .for_each(|w| *w = (1.0 - spec.edge_noise) * *w + spec.edge_noise * uniform);
        let n_rx = rng.random_range(spec.prescriptions_min..=spec.prescriptions_max);
        let avoidance = spec.ddi_avoidance;
        let rx = draw_distinct(&mut mw, n_rx, &mut rng, |chosen, w, rng| {
            for (other, wo) in w.iter_mut().enumerate() {
                if *wo > 0.0 && interacting(chosen, other) && rng.random::<f64>() < avoidance {
                    *wo = 0.0;
                }
            }
        });
        for &m in &rx {
            let w = rng.random_range(1..=spec.weight_max) as f64;
            if cold.contains(&m) {
                cold_edges.push((
                    interner.entity_name(p).to_string(),
                    interner.entity_name(medicines[m]).to_string(),
                    w,
                ));
            } else {
                patient_medicine
                    .add_edge(p, medicines[m], w, MergePolicy::Sum)
                    .expect("positive weight");
            }
        }
    }

    let mut latent = BTreeMap::new();
    let mut block = BTreeMap::new();
    for (ids, vecs) in [
        (&patients, &patient_latent),
        (&diseases, &disease_latent),
        (&medicines, &medicine_latent),
    ] {
        for (i, (&id, v)) in ids.iter().zip(vecs.iter()).enumerate() {
            latent.insert(interner.entity_name(id).to_string(), v.clone());
            block.insert(interner.entity_name(id).to_string(), block_of(i));
        }
    }
    let name = |i: usize| interner.entity_name(medicines[i]).to_string();
    let ground_truth = GroundTruth {
        seed: spec.seed,
        latent,
        block,
        interactions: interaction_pairs.iter().map(|&(a, b)| (name(a), name(b))).collect(),
        pharma_latent: pharma.iter().enumerate().map(|(i, v)| (name(i), v.clone())).collect(),
        interaction_shift: shift.clone(),
        cold_medicines: cold.iter().map(|&i| name(i)).collect(),
        cold_edges,
    };
    Ok(Dataset {
        interner,
        kg_medicine,
        kg_disease,
        patient_medicine,
        patient_disease,
        ground_truth,
    })
}

pub const ENTITIES_FILE: &str = "entities.tsv";
pub const RELATIONS_FILE: &str = "relations.tsv";
pub const KG_MEDICINE_FILE: &str = "kg_medicine.tsv";
pub const KG_DISEASE_FILE: &str = "kg_disease.tsv";
pub const PATIENT_MEDICINE_FILE: &str = "patient_medicine.tsv";
pub const PATIENT_DISEASE_FILE: &str = "patient_disease.tsv";
pub const COLD_EDGES_FILE: &str = "cold_start_edges.tsv";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub spec: Option<GenSpec>,
    pub counts: BTreeMap<String, usize>,
    /// SHA-256 of every emitted file, keyed by file name.
    pub checksums: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String, DatasetError> {
    let bytes = fs::read(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn counts(ds: &Dataset) -> BTreeMap<String, usize> {
    let i = &ds.interner;
    [
        ("patients", i.entities_of(EntityClass::Patient).len()),
        ("diseases", i.entities_of(EntityClass::Disease).len()),
        ("medicines", i.entities_of(EntityClass::Medicine).len()),
        ("other_entities", i.entities_of(EntityClass::Other).len()),
        ("relations", i.num_relations()),
        ("kg_medicine_triples", ds.kg_medicine.len()),
        ("kg_disease_triples", ds.kg_disease.len()),
        ("patient_medicine_edges", ds.patient_medicine.len()),
        ("patient_disease_edges", ds.patient_disease.len()),
        ("cold_start_edges", ds.ground_truth.cold_edges.len()),
        ("interaction_pairs", ds.ground_truth.interactions.len()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), DatasetError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| DatasetError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, DatasetError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| DatasetError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes every dataset file into `dir` (created if missing) and returns
/// the manifest, which is also written as `manifest.json`.
pub fn write_dataset(ds: &Dataset, spec: Option<&GenSpec>, dir: &Path) -> Result<DatasetManifest, DatasetError> {
    fs::create_dir_all(dir).map_err(|source| DatasetError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    ds.interner.write_entity_table(&dir.join(ENTITIES_FILE))?;
    ds.interner.write_relation_table(&dir.join(RELATIONS_FILE))?;
    ds.kg_medicine.write(&dir.join(KG_MEDICINE_FILE), &ds.interner)?;
    ds.kg_disease.write(&dir.join(KG_DISEASE_FILE), &ds.interner)?;
    ds.patient_medicine.write(&dir.join(PATIENT_MEDICINE_FILE), &ds.interner)?;
    ds.patient_disease.write(&dir.join(PATIENT_DISEASE_FILE), &ds.interner)?;
    let cold_path = dir.join(COLD_EDGES_FILE);
    let mut cold = String::new();
    for (u, i, w) in &ds.ground_truth.cold_edges {
        cold.push_str(&format!("{}\t{}\t{}\n", u, i, w));
    }
    fs::write(&cold_path, cold).map_err(|source| DatasetError::Io {
        path: cold_path.clone(),
        source,
    })?;
    write_json(&dir.join(GROUND_TRUTH_FILE), &ds.ground_truth)?;

    let mut checksums = BTreeMap::new();
    for f in [
        ENTITIES_FILE,
        RELATIONS_FILE,
        KG_MEDICINE_FILE,
        KG_DISEASE_FILE,
        PATIENT_MEDICINE_FILE,
        PATIENT_DISEASE_FILE,
        COLD_EDGES_FILE,
        GROUND_TRUTH_FILE,
    ] {
        checksums.insert(f.to_string(), sha256_file(&dir.join(f))?);
    }
    let manifest = DatasetManifest {
        seed: ds.ground_truth.seed,
        spec: spec.cloned(),
        counts: counts(ds),
        checksums,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Reads a dataset directory. The entity table is read first so ids
/// match the writer's. `ground_truth.json` is optional.
pub fn load_dataset(dir: &Path) -> Result<Dataset, DatasetError> {
    let mut interner = Interner::read_tables(&dir.join(ENTITIES_FILE), &dir.join(RELATIONS_FILE))?;
    let (kg_medicine, _) = TripleStore::load(&dir.join(KG_MEDICINE_FILE), &mut interner)?;
    let (kg_disease, _) = TripleStore::load(&dir.join(KG_DISEASE_FILE), &mut interner)?;
    let (patient_medicine, _) = BipartiteGraph::load(
        &dir.join(PATIENT_MEDICINE_FILE),
        &mut interner,
        EntityClass::Patient,
        EntityClass::Medicine,
        MergePolicy::Sum,
    )?;
    let (patient_disease, _) = BipartiteGraph::load(
        &dir.join(PATIENT_DISEASE_FILE),
        &mut interner,
        EntityClass::Patient,
        EntityClass::Disease,
        MergePolicy::Unit,
    )?;
    let gt_path = dir.join(GROUND_TRUTH_FILE);
    let ground_truth = if gt_path.exists() {
        read_json(&gt_path)?
    } else {
        GroundTruth::default()
    };
    let ds = Dataset {
        interner,
        kg_medicine,
        kg_disease,
        patient_medicine,
        patient_disease,
        ground_truth,
    };
    ds.cold_edges()?;
    Ok(ds)
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest, DatasetError> {
    read_json(&dir.join(MANIFEST_FILE))
}
