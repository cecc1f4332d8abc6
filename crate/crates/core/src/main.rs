use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use medembed::config::Config;
use medembed::pipeline::{self, Error, RecommendRequest};

const EVAL_HELP: &str = "\
Writes eval_report.tsv with columns
  method mode queries mean_jaccard ddi_rate pair_ddi_rate hits_at_n mean_rank chance_mean_rank
(NA where a metric does not apply) and queries.jsonl with one record per
query and method: patient, method, mode, reference, recommended, jaccard,
interacting_pairs.";

/// Joint knowledge-graph and patient-graph embeddings for
/// interaction-aware medicine recommendation.
#[derive(Parser, Debug)]
#[command(name = "medembed", version, after_help = "Settings precedence: command-line flags > --config file > defaults.")]
struct Cli {
    /// Seed for generation, splitting and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Training worker threads (lock-free updates when above 1).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Force a single worker so runs are bitwise reproducible.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset directory.
    Generate {
        /// Dataset directory to create.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train embeddings on a dataset directory and write a model directory.
    Train {
        /// Dataset directory written by `generate`.
        #[arg(long)]
        data: PathBuf,
        /// Model directory to create.
        #[arg(long)]
        out: PathBuf,
    },
    /// Recommend medicines for one patient; prints rank, medicine, score, affinity, penalty.
    Recommend(RecommendArgs),
    /// Evaluate a model directory against its dataset.
    #[command(after_help = EVAL_HELP)]
    Evaluate {
        /// Dataset directory the model was trained on.
        #[arg(long)]
        data: PathBuf,
        /// Model directory (or its embeddings.txt).
        #[arg(long)]
        embeddings: PathBuf,
        /// Report directory; defaults to the model directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct RecommendArgs {
    /// Model directory (or its embeddings.txt next to entities.tsv).
    #[arg(long)]
    embeddings: PathBuf,
    /// Comma-separated diagnosis names, earliest first.
    #[arg(long, value_delimiter = ',')]
    diagnoses: Vec<String>,
    /// Number of medicines to select.
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Use this trained patient's vector instead of composing one.
    #[arg(long)]
    patient: Option<String>,
    /// File listing candidate medicines, one per line; defaults to all medicines.
    #[arg(long, value_name = "FILE")]
    candidates: Option<PathBuf>,
    /// Project medicines with the interaction relation's matrix in the penalty.
    #[arg(long)]
    penalty_projection: bool,
    /// Weight of the interaction penalty.
    #[arg(long)]
    beta: Option<f64>,
}

fn settings(cli: &Cli) -> Result<Config, Error> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    if let Some(w) = cli.workers {
        cfg.train.workers = w;
    }
    if cli.deterministic {
        cfg.train.workers = 1;
    }
    if let Command::Recommend(args) = &cli.command {
        if let Some(beta) = args.beta {
            cfg.eval.beta = beta;
        }
        if args.penalty_projection {
            cfg.eval.penalty_projection = true;
        }
    }
    Ok(cfg)
}

fn read_candidates(path: &std::path::Path) -> Result<Vec<String>, Error> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}

fn run(cli: Cli) -> Result<(), Error> {
    let cfg = settings(&cli)?;
    match cli.command {
        Command::Generate { out } => {
            pipeline::run_generate(&cfg, &out)?;
        }
        Command::Train { data, out } => {
            pipeline::run_train(&cfg, &data, &out)?;
        }
        Command::Evaluate { data, embeddings, out } => {
            let out = out.unwrap_or_else(|| {
                if embeddings.is_dir() {
                    embeddings.clone()
                } else {
                    embeddings.parent().map(PathBuf::from).unwrap_or_default()
                }
            });
            let (evaluation, _) = pipeline::run_evaluate(&cfg, &data, &embeddings, &out)?;
            print!("{}", evaluation.report.to_tsv());
        }
        Command::Recommend(args) => {
            let req = RecommendRequest {
                diagnoses: args.diagnoses,
                patient: args.patient,
                candidates: args.candidates.as_deref().map(read_candidates).transpose()?,
                k: args.k,
            };
            let rows = pipeline::run_recommend(&cfg, &args.embeddings, &req)?;
            let stdout = std::io::stdout();
            let mut out = stdout.lock();
            let _ = writeln!(out, "rank\tmedicine\tscore\taffinity\tpenalty");
            for (i, (name, s)) in rows.iter().enumerate() {
                let _ = writeln!(out, "{}\t{}\t{:.6}\t{:.6}\t{:.6}", i + 1, name, s.score, s.affinity, s.penalty);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format(|buf, record| {
            writeln!(
                buf,
                "{} {} {} {}",
                chrono::Utc::now().format("%Y-%m-%dT%H:%M:%S%.3fZ"),
                record.level(),
                record.module_path().unwrap_or("-"),
                record.args()
            )
        })
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.category(), e);
            ExitCode::from(1)
        }
    }
}
