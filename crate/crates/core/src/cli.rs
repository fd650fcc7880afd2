//! Batch commands behind the `scanet` binary. Each writes its outputs under a
//! caller-chosen path and is a pure function of its input files and config.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config::{ConfigError, RunConfig};
use crate::corpus::{generate_synthetic, load_corpus, save_corpus, AnnotationCorpus, CorpusError, SyntheticSpec};
use crate::eval::{EvalReport, ProposalStrategy};
use crate::scene_complexity::{estimate, ComplexityError, HumanNouns};
use crate::trainer::{
    evaluate, load_checkpoint, save_checkpoint, train, CheckpointError, EvalRunError, SceneSource, TrainError,
};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("corpus {path}: {source}")]
    Corpus {
        path: String,
        #[source]
        source: CorpusError,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("train: {0}")]
    Train(#[from] TrainError),
    #[error("eval: {0}")]
    Eval(#[from] EvalRunError),
    #[error("complexity: {0}")]
    Complexity(#[from] ComplexityError),
    #[error("io {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("spec {path}: {message}")]
    Spec { path: String, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(io_err(path))
}

fn read_corpus(path: &Path) -> Result<AnnotationCorpus, CliError> {
    load_corpus(path).map_err(|source| CliError::Corpus {
        path: path.display().to_string(),
        source,
    })
}

/// Config file (if any) with `key=value` overrides applied on top.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, CliError> {
    let base = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(io_err(p))?;
            serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
                path: p.display().to_string(),
                message: e.to_string(),
            })?
        }
        None => serde_json::json!({}),
    };
    Ok(RunConfig::with_overrides(base, overrides)?)
}

fn human_nouns(path: Option<&str>) -> Result<HumanNouns, CliError> {
    Ok(match path {
        Some(p) => HumanNouns::load(p)?,
        None => HumanNouns::default(),
    })
}

/// Where the generator's ground truth is written next to the corpus.
pub fn oracle_path(corpus_path: &Path) -> PathBuf {
    corpus_path.with_extension("oracle.json")
}

/// Synthetic corpus from a spec file, plus its planted ground truth.
pub fn cmd_generate(spec_path: &Path, out_path: &Path) -> Result<(), CliError> {
    let text = std::fs::read_to_string(spec_path).map_err(io_err(spec_path))?;
    let spec: SyntheticSpec = serde_json::from_str(&text).map_err(|e| CliError::Spec {
        path: spec_path.display().to_string(),
        message: e.to_string(),
    })?;
    let (corpus, oracle) = generate_synthetic(&spec).map_err(|source| CliError::Corpus {
        path: spec_path.display().to_string(),
        source,
    })?;
    save_corpus(&corpus, out_path).map_err(|source| CliError::Corpus {
        path: out_path.display().to_string(),
        source,
    })?;
    let mut json = serde_json::to_string_pretty(&oracle).expect("oracle serializes");
    json.push('\n');
    write(&oracle_path(out_path), &json)
}

/// CSV `video_id,alpha,raw_count,n_queries,degraded`, one row per video in corpus order.
pub fn cmd_complexity(corpus_path: &Path, human_path: Option<&str>, k_max: usize) -> Result<String, CliError> {
    let corpus = read_corpus(corpus_path)?;
    let human = human_nouns(human_path)?;
    let mut out = String::from("video_id,alpha,raw_count,n_queries,degraded\n");
    for v in corpus.videos() {
        match estimate(&v.video_id, &corpus, &human, k_max) {
            Ok(sc) => {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{}",
                    v.video_id, sc.alpha, sc.raw_count, sc.n_queries, sc.degraded
                );
            }
            Err(ComplexityError::NoQueries(_)) => {
                log::warn!("video {} has no queries; skipped", v.video_id);
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(out)
}

/// Files written by [`cmd_train`], relative to the run directory.
pub const TRAIN_FILES: &[&str] = &[
    "config.json",
    "stage1.json",
    "stage1.bin",
    "model.json",
    "model.bin",
    "negatives.json",
    "metrics.csv",
];

/// Stage 1, negative cache, stage 2. Writes the files in [`TRAIN_FILES`] under `out_dir`.
pub fn cmd_train(corpus_path: &Path, cfg: &RunConfig, out_dir: &Path) -> Result<(), CliError> {
    let corpus = read_corpus(corpus_path)?;
    let human = human_nouns(cfg.human_nouns_path.as_deref())?;
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    write(&out_dir.join("config.json"), &cfg.to_json())?;
    let outcome = train(&corpus, cfg, &human)?;
    save_checkpoint(&outcome.stage1, out_dir.join("stage1.json"))?;
    save_checkpoint(&outcome.params, out_dir.join("model.json"))?;
    let mut cache = serde_json::to_string_pretty(&outcome.cache).expect("cache serializes");
    cache.push('\n');
    write(&out_dir.join("negatives.json"), &cache)?;
    write(&out_dir.join("metrics.csv"), &outcome.log.to_csv())
}

fn report_for(
    corpus_path: &Path,
    checkpoint: &Path,
    cfg: &RunConfig,
    strategy: &ProposalStrategy,
) -> Result<(EvalReport, String), CliError> {
    let corpus = read_corpus(corpus_path)?;
    let params = load_checkpoint(checkpoint)?;
    if params.config_digest != cfg.digest() {
        log::info!("evaluation config differs from the one the checkpoint was trained with");
    }
    let human = human_nouns(cfg.human_nouns_path.as_deref())?;
    let scenes = SceneSource::from_config(cfg)?;
    let report = evaluate(&params, &corpus, cfg, strategy, &scenes, &human)?;
    Ok((report, params.config_digest))
}

/// Files written by [`cmd_eval`], relative to the output directory.
pub const EVAL_FILES: &[&str] = &["config.json", "per_query.csv", "aggregate.json", "heatmap.csv"];

pub fn cmd_eval(corpus_path: &Path, checkpoint: &Path, cfg: &RunConfig, out_dir: &Path) -> Result<EvalReport, CliError> {
    let strategy: ProposalStrategy = cfg
        .strategy
        .parse()
        .map_err(|e: crate::eval::EvalError| ConfigError::Invalid(e.to_string()))?;
    let (report, trained_with) = report_for(corpus_path, checkpoint, cfg, &strategy)?;
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    write(&out_dir.join("config.json"), &cfg.to_json())?;
    write(&out_dir.join("per_query.csv"), &report.per_query_csv())?;
    let extra = BTreeMap::from([
        ("strategy".to_string(), strategy.to_string()),
        ("scene_source".to_string(), cfg.scene_source.clone()),
        ("config_digest".to_string(), cfg.digest()),
        ("checkpoint_config_digest".to_string(), trained_with),
    ]);
    write(&out_dir.join("aggregate.json"), &report.aggregate_json(&extra))?;
    write(&out_dir.join("heatmap.csv"), &report.heatmap_csv())?;
    Ok(report)
}

/// Heatmap CSV for one proposal strategy.
pub fn cmd_mismatch(
    corpus_path: &Path,
    checkpoint: &Path,
    cfg: &RunConfig,
    strategy: &ProposalStrategy,
) -> Result<String, CliError> {
    Ok(report_for(corpus_path, checkpoint, cfg, strategy)?.0.heatmap_csv())
}
