//! Flat `key = value` configuration shared by every subcommand.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are
//! errors. `seed` drives both generation and training.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::kg::{Norm, ObjectiveForm};
use crate::recommend::PenaltyForm;
use crate::synth::GenSpec;
use crate::train::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value `{value}` for `{key}`: {reason}")]
    BadValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Settings of the recommend and evaluate steps.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSettings {
    pub beta: f64,
    pub penalty: PenaltyForm,
    pub penalty_projection: bool,
    pub recent_first: bool,
    /// Relation names treated as adverse interactions.
    pub interaction_relations: Vec<String>,
    pub top_k: usize,
    pub hits_n: usize,
    pub split: (f64, f64, f64),
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            beta: 1.0,
            penalty: PenaltyForm::Likelihood,
            penalty_projection: false,
            recent_first: false,
            interaction_relations: vec![crate::synth::INTERACTS_WITH.to_string()],
            top_k: 3,
            hits_n: 10,
            split: crate::graph::DEFAULT_SPLIT,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub train: TrainConfig,
    pub eval: EvalSettings,
    pub generate: GenSpec,
}

impl Default for Config {
    fn default() -> Self {
        let mut cfg = Config {
            train: TrainConfig::default(),
            eval: EvalSettings::default(),
            generate: GenSpec::default(),
        };
        cfg.set_seed(cfg.train.seed);
        cfg
    }
}

fn bad<E: std::fmt::Display>(key: &str, value: &str) -> impl FnOnce(E) -> ConfigError {
    let (key, value) = (key.to_string(), value.to_string());
    move |e| ConfigError::BadValue {
        key,
        value,
        reason: e.to_string(),
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(bad(key, value)("expected true or false")),
    }
}

fn parse_form(key: &str, value: &str) -> Result<ObjectiveForm, ConfigError> {
    match value {
        "corrected" => Ok(ObjectiveForm::Corrected),
        "literal" => Ok(ObjectiveForm::Literal),
        _ => Err(bad(key, value)("expected corrected or literal")),
    }
}

fn form_name(f: ObjectiveForm) -> &'static str {
    match f {
        ObjectiveForm::Corrected => "corrected",
        ObjectiveForm::Literal => "literal",
    }
}

fn parse_floats(key: &str, value: &str, n: usize) -> Result<Vec<f64>, ConfigError> {
    let v: Vec<f64> = value
        .split(',')
        .map(|s| s.trim().parse::<f64>().map_err(bad(key, value)))
        .collect::<Result<_, _>>()?;
    if v.len() != n {
        return Err(bad(key, value)(format!("expected {} comma-separated numbers", n)));
    }
    Ok(v)
}

macro_rules! num {
    ($key:expr, $value:expr) => {
        $value.parse().map_err(bad($key, $value))?
    };
}

impl Config {
    pub fn set_seed(&mut self, seed: u64) {
        self.train.seed = seed;
        self.generate.seed = seed;
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Config::default();
        cfg.merge(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Config::parse(&text)
    }

    /// Applies every `key = value` line of `text` on top of `self`.
    pub fn merge(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            self.apply(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let t = &mut self.train;
        let e = &mut self.eval;
        let g = &mut self.generate;
        match key {
            "seed" => {
                let seed = num!(key, value);
                self.set_seed(seed);
            }
            "dim_entity" => t.dim_entity = num!(key, value),
            "dim_relation" => t.dim_relation = num!(key, value),
            "bias" => t.energy.bias = num!(key, value),
            "norm" => t.energy.norm = value.parse::<Norm>().map_err(bad(key, value))?,
            "learning_rate" => t.learning_rate = num!(key, value),
            "lr_decay" => t.lr_decay = parse_bool(key, value)?,
            "negatives_kg" => t.negatives_kg = num!(key, value),
            "negatives_edge" => t.negatives_edge = num!(key, value),
            "gamma" => t.gamma = num!(key, value),
            "epochs" => t.epochs = num!(key, value),
            "batch_size" => t.batch_size = num!(key, value),
            "workers" => t.workers = num!(key, value),
            "task_mix" => {
                t.task_mix = if value == "size" {
                    None
                } else {
                    let v = parse_floats(key, value, 4)?;
                    Some([v[0], v[1], v[2], v[3]])
                }
            }
            "triple_form" => t.triple_form = parse_form(key, value)?,
            "edge_form" => t.edge_form = parse_form(key, value)?,
            "beta" => e.beta = num!(key, value),
            "penalty" => e.penalty = value.parse::<PenaltyForm>().map_err(bad(key, value))?,
            "penalty_projection" => e.penalty_projection = parse_bool(key, value)?,
            "recent_first" => e.recent_first = parse_bool(key, value)?,
            "interaction_relations" => {
                e.interaction_relations = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::to_string)
                    .collect()
            }
            "top_k" => e.top_k = num!(key, value),
            "hits_n" => e.hits_n = num!(key, value),
            "split" => {
                let v = parse_floats(key, value, 3)?;
                e.split = (v[0], v[1], v[2]);
            }
            "patients" => g.patients = num!(key, value),
            "diseases" => g.diseases = num!(key, value),
            "medicines" => g.medicines = num!(key, value),
            "blocks" => g.blocks = num!(key, value),
            "latent_dim" => g.latent_dim = num!(key, value),
            "latent_noise" => g.latent_noise = num!(key, value),
            "affinity_sharpness" => g.affinity_sharpness = num!(key, value),
            "affinity_offset" => g.affinity_offset = num!(key, value),
            "diagnosis_weight" => g.diagnosis_weight = num!(key, value),
            "diagnoses_min" => g.diagnoses_min = num!(key, value),
            "diagnoses_max" => g.diagnoses_max = num!(key, value),
            "prescriptions_min" => g.prescriptions_min = num!(key, value),
            "prescriptions_max" => g.prescriptions_max = num!(key, value),
            "weight_max" => g.weight_max = num!(key, value),
            "edge_noise" => g.edge_noise = num!(key, value),
            "interaction_density" => g.interaction_density = num!(key, value),
            "ddi_avoidance" => g.ddi_avoidance = num!(key, value),
            "similar_k" => g.similar_k = num!(key, value),
            "similar_threshold" => g.similar_threshold = num!(key, value),
            "cold_medicines" => g.cold_medicines = num!(key, value),
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.train.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.generate.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let e = &self.eval;
        if e.top_k == 0 || e.hits_n == 0 {
            return Err(ConfigError::Invalid("top_k and hits_n must be at least 1".into()));
        }
        if !(e.beta.is_finite() && e.beta >= 0.0) {
            return Err(ConfigError::Invalid("beta must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// Every key with its effective value, in a fixed order. Parsing the
    /// snapshot reproduces the config.
    pub fn snapshot(&self) -> String {
        let t = &self.train;
        let e = &self.eval;
        let g = &self.generate;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{} = {}", k, v);
        };
        kv("seed", t.seed.to_string());
        kv("dim_entity", t.dim_entity.to_string());
        kv("dim_relation", t.dim_relation.to_string());
        kv("bias", t.energy.bias.to_string());
        kv("norm", t.energy.norm.to_string());
        kv("learning_rate", t.learning_rate.to_string());
        kv("lr_decay", t.lr_decay.to_string());
        kv("negatives_kg", t.negatives_kg.to_string());
        kv("negatives_edge", t.negatives_edge.to_string());
        kv("gamma", t.gamma.to_string());
        kv("epochs", t.epochs.to_string());
        kv("batch_size", t.batch_size.to_string());
        kv("workers", t.workers.to_string());
        kv(
            "task_mix",
            t.task_mix.map_or_else(
                || "size".to_string(),
                |m| m.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
            ),
        );
        kv("triple_form", form_name(t.triple_form).to_string());
        kv("edge_form", form_name(t.edge_form).to_string());
        kv("beta", e.beta.to_string());
        kv("penalty", e.penalty.to_string());
        kv("penalty_projection", e.penalty_projection.to_string());
        kv("recent_first", e.recent_first.to_string());
        kv("interaction_relations", e.interaction_relations.join(","));
        kv("top_k", e.top_k.to_string());
        kv("hits_n", e.hits_n.to_string());
        kv("split", format!("{},{},{}", e.split.0, e.split.1, e.split.2));
        kv("patients", g.patients.to_string());
        kv("diseases", g.diseases.to_string());
        kv("medicines", g.medicines.to_string());
        kv("blocks", g.blocks.to_string());
        kv("latent_dim", g.latent_dim.to_string());
        kv("latent_noise", g.latent_noise.to_string());
        kv("affinity_sharpness", g.affinity_sharpness.to_string());
        kv("affinity_offset", g.affinity_offset.to_string());
        kv("diagnosis_weight", g.diagnosis_weight.to_string());
        kv("diagnoses_min", g.diagnoses_min.to_string());
        kv("diagnoses_max", g.diagnoses_max.to_string());
        kv("prescriptions_min", g.prescriptions_min.to_string());
        kv("prescriptions_max", g.prescriptions_max.to_string());
        kv("weight_max", g.weight_max.to_string());
        kv("edge_noise", g.edge_noise.to_string());
        kv("interaction_density", g.interaction_density.to_string());
        kv("ddi_avoidance", g.ddi_avoidance.to_string());
        kv("similar_k", g.similar_k.to_string());
        kv("similar_threshold", g.similar_threshold.to_string());
        kv("cold_medicines", g.cold_medicines.to_string());
        s
    }
}
