//! generate / train / evaluate / recommend, both in memory and against
//! artifact directories.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use serde::Serialize;
use thiserror::Error;

use crate::config::{Config, ConfigError};
use crate::eval::{
    cold_start_eval, ddi_rate, jaccard, k_most_frequent_baseline, pair_ddi_rate, ranking_eval, Cooccurrence,
    EvalError, EvalReport, InteractionIndex, MethodRow,
};
use crate::graph::{split_edges, BipartiteGraph, DatasetSplit, EntityClass, EntityId, GraphError, Interner, MergePolicy, RelationId};
use crate::recommend::{recommend, PatientQuery, PenaltyForm, RecommendConfig, RecommendError, Selection};
use crate::space::{EmbeddingSpace, Params, SpaceError};
use crate::synth::{self, generate, load_dataset, sha256_file, write_dataset, Dataset, DatasetError, SpecError};
use crate::train::{train, TrainError, TrainReport, TrainingGraphs};

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Recommend(#[from] RecommendError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Input(String),
}

impl Error {
    /// Short category printed in front of error messages.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Io { .. }
            | Error::Graph(GraphError::Io { .. })
            | Error::Dataset(DatasetError::Io { .. })
            | Error::Dataset(DatasetError::Graph(GraphError::Io { .. }))
            | Error::Config(ConfigError::Io { .. })
            | Error::Space(SpaceError::Io(_)) => "io",
            Error::Graph(_) | Error::Dataset(_) | Error::Space(_) => "parse",
            Error::Config(_) => "config",
            Error::Spec(_) => "spec",
            Error::Train(_) => "train",
            Error::Recommend(_) => "recommend",
            Error::Eval(_) => "eval",
            Error::Input(_) => "input",
        }
    }
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    fs::write(path, text).map_err(io_error(path))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s
}

pub const EMBEDDINGS_FILE: &str = "embeddings.txt";
pub const SPLIT_FILES: [&str; 3] = ["split_train.tsv", "split_valid.tsv", "split_test.tsv"];
pub const CONFIG_FILE: &str = "config.txt";
pub const TRAIN_REPORT_FILE: &str = "train_report.json";
pub const EVAL_REPORT_FILE: &str = "eval_report.tsv";
pub const QUERIES_FILE: &str = "queries.jsonl";

/// Record of one CLI run.
#[derive(Clone, Debug, Default, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub started_at: String,
    pub config: BTreeMap<String, String>,
    /// SHA-256 of each input file.
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 of each output file.
    pub outputs: BTreeMap<String, String>,
    pub timings_secs: BTreeMap<String, f64>,
}

impl RunManifest {
    fn new(command: &str, cfg: &Config) -> Self {
        let config = cfg
            .snapshot()
            .lines()
            .filter_map(|l| l.split_once(" = "))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            started_at: chrono::Utc::now().to_rfc3339(),
            config,
            ..Default::default()
        }
    }

    fn hash_into(map: &mut BTreeMap<String, String>, dir: &Path, files: &[&str]) -> Result<(), Error> {
        for f in files {
            let path = dir.join(f);
            if path.exists() {
                map.insert(path.display().to_string(), sha256_file(&path)?);
            }
        }
        Ok(())
    }

    fn write(&self, path: &Path) -> Result<(), Error> {
        write_text(path, &to_json(self))
    }
}

pub struct TrainedModel {
    pub space: EmbeddingSpace,
    pub split: DatasetSplit,
    pub report: TrainReport,
}

/// Splits the patient-medicine edges (the patient-disease graph is used
/// whole) and trains on both knowledge graphs and the training split.
pub fn train_model(ds: &Dataset, cfg: &Config) -> Result<TrainedModel, Error> {
    let split = split_edges(&ds.patient_medicine, cfg.eval.split, cfg.train.seed)?;
    let graphs = TrainingGraphs {
        kg_medicine: &ds.kg_medicine,
        kg_disease: &ds.kg_disease,
        patient_medicine: &split.train,
        patient_disease: &ds.patient_disease,
    };
    let (space, report) = train(
        &graphs,
        ds.interner.num_entities(),
        ds.interner.num_relations(),
        &cfg.train,
    )?;
    Ok(TrainedModel { space, split, report })
}

pub fn resolve_relations(interner: &Interner, names: &[String]) -> Result<Vec<RelationId>, Error> {
    names
        .iter()
        .map(|n| {
            interner
                .relation(n)
                .ok_or_else(|| Error::Input(format!("unknown interaction relation `{}`", n)))
        })
        .collect()
}

pub fn recommend_config(interner: &Interner, cfg: &Config) -> Result<RecommendConfig, Error> {
    Ok(RecommendConfig {
        energy: cfg.train.energy,
        beta: cfg.eval.beta,
        penalty: cfg.eval.penalty,
        penalty_projection: cfg.eval.penalty_projection,
        recent_first: cfg.eval.recent_first,
        interaction_relations: resolve_relations(interner, &cfg.eval.interaction_relations)?,
    })
}

/// One recommendation query of one method.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QueryRecord {
    pub patient: String,
    pub method: String,
    pub mode: String,
    pub reference: Vec<String>,
    pub recommended: Vec<String>,
    pub jaccard: f64,
    pub interacting_pairs: usize,
}

pub struct Evaluation {
    pub report: EvalReport,
    pub queries: Vec<QueryRecord>,
}

impl Evaluation {
    /// Per-query Jaccard of one method, in query order.
    pub fn jaccards(&self, method: &str, mode: &str) -> Vec<f64> {
        self.queries
            .iter()
            .filter(|q| q.method == method && q.mode == mode)
            .map(|q| q.jaccard)
            .collect()
    }

    pub fn queries_jsonl(&self) -> String {
        let mut out = String::new();
        for q in &self.queries {
            out.push_str(&serde_json::to_string(q).expect("plain data serializes"));
            out.push('\n');
        }
        out
    }
}

/// Recommendation methods compared by [`evaluate_model`], as
/// `(method, mode)`.
pub const METHODS: [(&str, &str); 7] = [
    ("penalized", "existing_patient"),
    ("affinity_only", "existing_patient"),
    ("penalized_residual", "existing_patient"),
    ("penalized", "new_patient"),
    ("affinity_only", "new_patient"),
    ("penalized", "per_diagnosis"),
    ("k_most_frequent", "per_diagnosis"),
];

struct MethodAcc {
    sets: Vec<Vec<EntityId>>,
    jaccard_sum: f64,
}

/// Runs the recommendation, link-prediction and cold-start protocols.
///
/// Queries are the patients with held-out (test) prescriptions; the
/// reference set is those prescriptions. Candidates are the medicines
/// observed in the prescription graph, minus those the patient already
/// has in the train or validation split. Cold-start medicines are only
/// scored by the cold-start ranking.
pub fn evaluate_model(ds: &Dataset, space: &EmbeddingSpace, split: &DatasetSplit, cfg: &Config) -> Result<Evaluation, Error> {
    let interner = &ds.interner;
    let name = |id: EntityId| interner.entity_name(id).to_string();
    let names = |ids: &[EntityId]| ids.iter().map(|&i| name(i)).collect::<Vec<_>>();
    let rc = recommend_config(interner, cfg)?;
    let affinity_only = RecommendConfig { beta: 0.0, ..rc.clone() };
    let residual = RecommendConfig {
        penalty: PenaltyForm::Residual,
        ..rc.clone()
    };
    let index = InteractionIndex::new(&ds.kg_medicine, &rc.interaction_relations);
    let cooc = Cooccurrence::new(&split.train, &ds.patient_disease);
    let medicines = interner.entities_of(EntityClass::Medicine);
    let observed = ds.patient_medicine.items();
    let k = cfg.eval.top_k;

    let mut acc: Vec<MethodAcc> = METHODS
        .iter()
        .map(|_| MethodAcc {
            sets: Vec::new(),
            jaccard_sum: 0.0,
        })
        .collect();
    let mut queries = Vec::new();
    for patient in split.test.users() {
        let reference: BTreeSet<EntityId> = split.test.user_items(patient).into_iter().collect();
        let exclude: BTreeSet<EntityId> = split
            .train
            .user_items(patient)
            .into_iter()
            .chain(split.valid.user_items(patient))
            .collect();
        let candidates: Vec<EntityId> = observed.iter().copied().filter(|m| !exclude.contains(m)).collect();
        if candidates.is_empty() {
            continue;
        }
        let mut diagnoses = Vec::new();
        for d in ds.patient_disease.user_items(patient) {
            if !diagnoses.contains(&d) {
                diagnoses.push(d);
            }
        }
        let existing = PatientQuery {
            diagnoses: diagnoses.clone(),
            patient: Some(patient),
        };
        let fresh = PatientQuery {
            diagnoses: diagnoses.clone(),
            patient: None,
        };
        for (mi, &(method, mode)) in METHODS.iter().enumerate() {
            let set: Option<Vec<EntityId>> = match (method, mode) {
                ("penalized", "existing_patient") => Some(recommend(space, &rc, &existing, k, &candidates)?.medicines()),
                ("affinity_only", "existing_patient") => {
                    Some(recommend(space, &affinity_only, &existing, k, &candidates)?.medicines())
                }
                ("penalized_residual", "existing_patient") => {
                    Some(recommend(space, &residual, &existing, k, &candidates)?.medicines())
                }
                (_, "new_patient") if diagnoses.is_empty() => None,
                ("penalized", "new_patient") => Some(recommend(space, &rc, &fresh, k, &candidates)?.medicines()),
                ("affinity_only", "new_patient") => {
                    Some(recommend(space, &affinity_only, &fresh, k, &candidates)?.medicines())
                }
                (_, "per_diagnosis") if diagnoses.is_empty() => None,
                ("penalized", "per_diagnosis") => {
                    let mut union = Vec::new();
                    for &d in &diagnoses {
                        let q = PatientQuery {
                            diagnoses: vec![d],
                            patient: None,
                        };
                        for m in recommend(space, &rc, &q, k, &candidates)?.medicines() {
                            if !union.contains(&m) {
                                union.push(m);
                            }
                        }
                    }
                    Some(union)
                }
                ("k_most_frequent", _) => {
                    let out = k_most_frequent_baseline(&cooc, &diagnoses, k, &exclude);
                    Some(out.medicines.into_iter().collect())
                }
                _ => unreachable!("every listed method is handled"),
            };
            let Some(set) = set else { continue };
            let as_set: BTreeSet<EntityId> = set.iter().copied().collect();
            let j = jaccard(&as_set, &reference)?;
            queries.push(QueryRecord {
                patient: name(patient),
                method: method.to_string(),
                mode: mode.to_string(),
                reference: names(&reference.iter().copied().collect::<Vec<_>>()),
                recommended: names(&set),
                jaccard: j,
                interacting_pairs: index.violations(&set),
            });
            acc[mi].jaccard_sum += j;
            acc[mi].sets.push(set);
        }
    }

    let mut rows = Vec::new();
    for (&(method, mode), a) in METHODS.iter().zip(&acc) {
        let n = a.sets.len();
        rows.push(MethodRow {
            method: method.to_string(),
            mode: mode.to_string(),
            queries: n,
            mean_jaccard: (n > 0).then(|| a.jaccard_sum / n as f64),
            ddi_rate: (n > 0).then(|| ddi_rate(&a.sets, &index)),
            pair_ddi_rate: (n > 0).then(|| pair_ddi_rate(&a.sets, &index)),
            ..Default::default()
        });
    }

    let n = cfg.eval.hits_n;
    let ranking = ranking_eval(space, split.test.edges(), &observed, &ds.patient_medicine, n)?;
    rows.push(MethodRow {
        method: "link_prediction".into(),
        mode: "held_out".into(),
        queries: ranking.queries,
        hits_at_n: (ranking.queries > 0).then_some(ranking.hits_at_n),
        mean_rank: (ranking.queries > 0).then_some(ranking.mean_rank),
        chance_mean_rank: (ranking.queries > 0).then(|| ranking.chance_mean_rank()),
        ..Default::default()
    });
    let cold = ds.cold_edges()?;
    if !cold.is_empty() {
        let mut known = ds.patient_medicine.clone();
        for e in &cold {
            known.add_edge(e.user, e.item, e.weight, MergePolicy::Sum)?;
        }
        let r = cold_start_eval(space, &cold, &split.train, &medicines, &known, n)?;
        rows.push(MethodRow {
            method: "cold_start".into(),
            mode: "held_out".into(),
            queries: r.queries,
            hits_at_n: Some(r.hits_at_n),
            mean_rank: Some(r.mean_rank),
            chance_mean_rank: Some(r.chance_mean_rank()),
            ..Default::default()
        });
    }
    Ok(Evaluation {
        report: EvalReport {
            top_k: k,
            hits_n: n,
            rows,
        },
        queries,
    })
}

/// `generate`: writes a synthetic dataset to `out`.
pub fn run_generate(cfg: &Config, out: &Path) -> Result<RunManifest, Error> {
    cfg.validate()?;
    let started = Instant::now();
    let ds = generate(&cfg.generate)?;
    let manifest = write_dataset(&ds, Some(&cfg.generate), out)?;
    info!(
        "generated {} patient-medicine edges and {} cold-start edges into {}",
        ds.patient_medicine.len(),
        ds.ground_truth.cold_edges.len(),
        out.display()
    );
    let mut run = RunManifest::new("generate", cfg);
    for (f, sum) in &manifest.checksums {
        run.outputs.insert(out.join(f).display().to_string(), sum.clone());
    }
    run.timings_secs.insert("total".into(), started.elapsed().as_secs_f64());
    run.write(&out.join("run_manifest.json"))?;
    Ok(run)
}

fn dataset_inputs(run: &mut RunManifest, data: &Path) -> Result<(), Error> {
    RunManifest::hash_into(
        &mut run.inputs,
        data,
        &[
            synth::ENTITIES_FILE,
            synth::RELATIONS_FILE,
            synth::KG_MEDICINE_FILE,
            synth::KG_DISEASE_FILE,
            synth::PATIENT_MEDICINE_FILE,
            synth::PATIENT_DISEASE_FILE,
            synth::GROUND_TRUTH_FILE,
        ],
    )
}

fn require_dir(path: &Path) -> Result<(), Error> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "directory not found"),
        })
    }
}

/// `train`: trains on the dataset in `data` and writes the model
/// directory `out`.
pub fn run_train(cfg: &Config, data: &Path, out: &Path) -> Result<RunManifest, Error> {
    cfg.validate()?;
    require_dir(data)?;
    let started = Instant::now();
    let ds = load_dataset(data)?;
    let loaded = started.elapsed().as_secs_f64();
    info!(
        "training on {} entities, {} relations, {} patient-medicine edges with {} worker(s)",
        ds.interner.num_entities(),
        ds.interner.num_relations(),
        ds.patient_medicine.len(),
        cfg.train.workers
    );
    let model = train_model(&ds, cfg)?;
    fs::create_dir_all(out).map_err(io_error(out))?;
    model.space.save(&out.join(EMBEDDINGS_FILE))?;
    ds.interner.write_entity_table(&out.join(synth::ENTITIES_FILE))?;
    ds.interner.write_relation_table(&out.join(synth::RELATIONS_FILE))?;
    for (file, part) in SPLIT_FILES
        .iter()
        .zip([&model.split.train, &model.split.valid, &model.split.test])
    {
        part.write(&out.join(file), &ds.interner)?;
    }
    write_text(&out.join(CONFIG_FILE), &cfg.snapshot())?;
    write_text(&out.join(TRAIN_REPORT_FILE), &to_json(&model.report))?;
    info!("trained in {:.2}s", model.report.wall_time_secs);

    let mut run = RunManifest::new("train", cfg);
    dataset_inputs(&mut run, data)?;
    let mut outputs = vec![EMBEDDINGS_FILE, synth::ENTITIES_FILE, synth::RELATIONS_FILE, CONFIG_FILE, TRAIN_REPORT_FILE];
    outputs.extend(SPLIT_FILES);
    RunManifest::hash_into(&mut run.outputs, out, &outputs)?;
    run.timings_secs.insert("load".into(), loaded);
    run.timings_secs.insert("train".into(), model.report.wall_time_secs);
    run.timings_secs.insert("total".into(), started.elapsed().as_secs_f64());
    run.write(&out.join("manifest.json"))?;
    Ok(run)
}

/// Locates the embedding file: `path` itself or `path/embeddings.txt`.
pub fn embeddings_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(EMBEDDINGS_FILE)
    } else {
        path.to_path_buf()
    }
}

fn model_dir(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.to_path_buf()
    } else {
        path.parent().map(Path::to_path_buf).unwrap_or_default()
    }
}

fn load_split(ds: &mut Dataset, dir: &Path, ratios: (f64, f64, f64)) -> Result<DatasetSplit, Error> {
    let mut parts = Vec::new();
    for f in SPLIT_FILES {
        let (g, _) = BipartiteGraph::load(
            &dir.join(f),
            &mut ds.interner,
            EntityClass::Patient,
            EntityClass::Medicine,
            MergePolicy::Sum,
        )?;
        parts.push(g);
    }
    let test = parts.pop().expect("three parts");
    let valid = parts.pop().expect("three parts");
    let train = parts.pop().expect("three parts");
    Ok(DatasetSplit {
        train,
        valid,
        test,
        ratios,
    })
}

/// `evaluate`: scores the model in `model` against the dataset in `data`
/// and writes `eval_report.tsv` and `queries.jsonl` into `out`.
pub fn run_evaluate(cfg: &Config, data: &Path, model: &Path, out: &Path) -> Result<(Evaluation, RunManifest), Error> {
    cfg.validate()?;
    require_dir(data)?;
    let started = Instant::now();
    let mut ds = load_dataset(data)?;
    let emb = embeddings_path(model);
    let space = EmbeddingSpace::load(&emb).map_err(|e| match e {
        SpaceError::Io(source) => Error::Io {
            path: emb.clone(),
            source,
        },
        other => other.into(),
    })?;
    if space.num_entities() != ds.interner.num_entities() || space.num_relations() != ds.interner.num_relations() {
        return Err(Error::Input(format!(
            "embeddings cover {} entities and {} relations but the dataset has {} and {}",
            space.num_entities(),
            space.num_relations(),
            ds.interner.num_entities(),
            ds.interner.num_relations()
        )));
    }
    let mdir = model_dir(model);
    let known = ds.interner.num_entities();
    let split = load_split(&mut ds, &mdir, cfg.eval.split)?;
    if ds.interner.num_entities() != known {
        return Err(Error::Input("split files name entities missing from the dataset".into()));
    }
    let evaluation = evaluate_model(&ds, &space, &split, cfg)?;
    fs::create_dir_all(out).map_err(io_error(out))?;
    write_text(&out.join(EVAL_REPORT_FILE), &evaluation.report.to_tsv())?;
    write_text(&out.join(QUERIES_FILE), &evaluation.queries_jsonl())?;
    for row in &evaluation.report.rows {
        info!(
            "{} {}: queries={} jaccard={:?} ddi={:?} hits={:?} mean_rank={:?}",
            row.method, row.mode, row.queries, row.mean_jaccard, row.ddi_rate, row.hits_at_n, row.mean_rank
        );
    }
    let mut run = RunManifest::new("evaluate", cfg);
    dataset_inputs(&mut run, data)?;
    let mut inputs: Vec<&str> = vec![EMBEDDINGS_FILE];
    inputs.extend(SPLIT_FILES);
    RunManifest::hash_into(&mut run.inputs, &mdir, &inputs)?;
    RunManifest::hash_into(&mut run.outputs, out, &[EVAL_REPORT_FILE, QUERIES_FILE])?;
    run.timings_secs.insert("total".into(), started.elapsed().as_secs_f64());
    run.write(&out.join("eval_manifest.json"))?;
    Ok((evaluation, run))
}

/// A recommendation request by entity names.
#[derive(Clone, Debug, Default)]
pub struct RecommendRequest {
    pub diagnoses: Vec<String>,
    pub patient: Option<String>,
    pub candidates: Option<Vec<String>>,
    pub k: usize,
}

/// `recommend`: loads a model directory (embeddings plus entity and
/// relation tables) and answers one query.
pub fn run_recommend(cfg: &Config, model: &Path, req: &RecommendRequest) -> Result<Vec<(String, Selection)>, Error> {
    cfg.validate()?;
    let emb = embeddings_path(model);
    let dir = model_dir(model);
    let space = EmbeddingSpace::load(&emb).map_err(|e| match e {
        SpaceError::Io(source) => Error::Io {
            path: emb.clone(),
            source,
        },
        other => other.into(),
    })?;
    let interner = Interner::read_tables(&dir.join(synth::ENTITIES_FILE), &dir.join(synth::RELATIONS_FILE))?;
    let lookup = |n: &str, class: EntityClass| -> Result<EntityId, Error> {
        match interner.entity(n) {
            Some(id) if interner.class(id) == class => Ok(id),
            Some(_) => Err(Error::Input(format!("`{}` is not a {}", n, class))),
            None => Err(Error::Input(format!("unknown entity `{}`", n))),
        }
    };
    let diagnoses = req
        .diagnoses
        .iter()
        .map(|d| lookup(d, EntityClass::Disease))
        .collect::<Result<Vec<_>, _>>()?;
    let patient = req
        .patient
        .as_deref()
        .map(|p| lookup(p, EntityClass::Patient))
        .transpose()?;
    let candidates = match &req.candidates {
        Some(list) => list
            .iter()
            .map(|m| lookup(m, EntityClass::Medicine))
            .collect::<Result<Vec<_>, _>>()?,
        None => interner.entities_of(EntityClass::Medicine),
    };
    let rc = recommend_config(&interner, cfg)?;
    let result = recommend(&space, &rc, &PatientQuery { diagnoses, patient }, req.k, &candidates)?;
    Ok(result
        .selections
        .into_iter()
        .map(|s| (interner.entity_name(s.medicine).to_string(), s))
        .collect())
}
