//! Two-stage training: reconstruction plus video-level contrast first, then a
//! retrieval pass that caches hard-negative videos per query, then training
//! with the corpus-level contrast added. Also checkpoint I/O.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::corpus::AnnotationCorpus;
use crate::corpus::{CorpusError, OracleAnnotations};
use crate::cpe::{mqr_candidates, predict_span, MaskedQuery};
use crate::eval::{EvalError, EvalReport, ProposalStrategy, QueryOutcome};
use crate::model::{Hyper, ModelError, ModelShape, ProposalSource, Sample, Scanet, VideoInput};
use crate::numkern::{Adam, Graph, ParamGrads, ParamStore, SelectionMode};
use crate::scene_complexity::{estimate, gt_scene_count, ComplexityError, HumanNouns};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("corpus has no queries to train on")]
    NoExamples,
    #[error("corpus has no videos")]
    NoVideos,
    #[error("stage {stage} step {step}: non-finite loss ({message})")]
    Divergence { stage: u8, step: usize, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Complexity(#[from] ComplexityError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint manifest: {0}")]
    Manifest(String),
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("tensor {name}: checkpoint shape {found:?}, model expects {expected:?}")]
    Shape {
        name: String,
        found: (usize, usize),
        expected: (usize, usize),
    },
    #[error("tensor {0} missing from checkpoint")]
    Missing(String),
    #[error("checkpoint blob is truncated: need {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Independent deterministic RNG stream for `(purpose, index)`.
pub fn stream_rng(seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream((purpose << 40) ^ index);
    r
}

const STREAM_INIT: u64 = 1;
const STREAM_ORDER: u64 = 2;
const STREAM_STEP: u64 = 3;
const STREAM_CACHE: u64 = 4;
const STREAM_EVAL: u64 = 5;

/// One (video, query) pair ready for the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub query_id: String,
    pub video: usize,
    pub ids: Vec<usize>,
    pub candidates: Vec<usize>,
}

/// Corpus converted to model inputs, with scene complexity computed once per video.
#[derive(Debug, Clone)]
pub struct PreparedCorpus {
    pub video_ids: Vec<String>,
    pub durations: Vec<f64>,
    pub features: Vec<Array2<f64>>,
    pub alphas: Vec<usize>,
    pub examples: Vec<Example>,
}

impl PreparedCorpus {
    /// Tokens are encoded with `vocab`, which may come from a checkpoint.
    pub fn new(
        corpus: &AnnotationCorpus,
        vocab: &crate::corpus::Vocab,
        human: &HumanNouns,
        k_max: usize,
    ) -> Result<Self, TrainError> {
        if corpus.videos().is_empty() {
            return Err(TrainError::NoVideos);
        }
        let mut alphas = Vec::with_capacity(corpus.videos().len());
        for v in corpus.videos() {
            let alpha = match estimate(&v.video_id, corpus, human, k_max) {
                Ok(sc) => sc.alpha,
                Err(ComplexityError::NoQueries(_)) => 1,
                Err(e) => return Err(e.into()),
            };
            alphas.push(alpha);
        }
        let examples = corpus
            .queries()
            .iter()
            .map(|q| Example {
                query_id: q.query_id.clone(),
                video: corpus.video_position(&q.video_id).expect("validated corpus"),
                ids: vocab.encode(&q.tokens),
                candidates: mqr_candidates(&q.tokens, &q.pos_tags, human),
            })
            .collect();
        Ok(Self {
            video_ids: corpus.videos().iter().map(|v| v.video_id.clone()).collect(),
            durations: corpus.videos().iter().map(|v| v.duration).collect(),
            features: corpus.videos().iter().map(|v| v.features_f64()).collect(),
            alphas,
            examples,
        })
    }

    pub fn video_input(&self, i: usize) -> VideoInput<'_> {
        VideoInput {
            features: &self.features[i],
            alpha: self.alphas[i],
        }
    }

    pub fn sample<'a>(&'a self, e: &'a Example) -> Sample<'a> {
        Sample {
            video: self.video_input(e.video),
            ids: &e.ids,
            candidates: &e.candidates,
        }
    }
}

/// Architecture, parameter values and the vocabulary they were trained with.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub arch: Scanet,
    pub store: ParamStore,
    pub vocab: Vec<String>,
    pub config_digest: String,
}

impl PartialEq for ModelParams {
    fn eq(&self, other: &Self) -> bool {
        self.arch.shape == other.arch.shape
            && self.store == other.store
            && self.vocab == other.vocab
            && self.config_digest == other.config_digest
    }
}

impl ModelParams {
    /// Fresh parameters sized for `corpus`, drawn from the config seed.
    pub fn init(cfg: &RunConfig, corpus: &AnnotationCorpus) -> Result<Self, TrainError> {
        let feat_dim = corpus.feature_dim().ok_or(TrainError::NoVideos)?;
        let vocab = corpus.vocab();
        let shape = ModelShape::new(cfg, feat_dim, vocab.len());
        let mut store = ParamStore::new();
        let arch = Scanet::new(shape, &mut store, &mut stream_rng(cfg.seed, STREAM_INIT, 0))?;
        Ok(Self {
            arch,
            store,
            vocab: vocab.tokens().to_vec(),
            config_digest: cfg.digest(),
        })
    }

    pub fn vocab(&self) -> crate::corpus::Vocab {
        crate::corpus::Vocab::from_tokens(self.vocab.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub step: usize,
    pub stage: u8,
    pub l_mqr: f64,
    pub l_mvr: f64,
    pub l_vid: f64,
    pub l_cps: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub rows: Vec<MetricRow>,
}

impl MetricsLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,stage,l_mqr,l_mvr,l_vid,l_cps,total\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
                r.step, r.stage, r.l_mqr, r.l_mvr, r.l_vid, r.l_cps, r.total
            );
        }
        out
    }

    /// Mean of `l_mqr` over the rows of `stage` whose index falls in `range`.
    pub fn mean_mqr(&self, stage: u8, range: std::ops::Range<usize>) -> f64 {
        let xs: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.stage == stage && range.contains(&r.step))
            .map(|r| r.l_mqr)
            .collect();
        xs.iter().sum::<f64>() / xs.len().max(1) as f64
    }
}

/// Ordered hard-negative video ids per query, lowest loss first.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NegativeCache {
    pub lists: BTreeMap<String, Vec<String>>,
}

impl NegativeCache {
    pub fn get(&self, query_id: &str) -> &[String] {
        self.lists.get(query_id).map_or(&[], Vec::as_slice)
    }
}

/// Runs `steps` optimizer steps. `cache` adds the corpus-level loss.
fn run_stage(
    params: &mut ModelParams,
    data: &PreparedCorpus,
    cfg: &RunConfig,
    stage: u8,
    steps: usize,
    cache: Option<&NegativeCache>,
    log: &mut MetricsLog,
) -> Result<(), TrainError> {
    if steps == 0 {
        return Ok(());
    }
    let n = data.examples.len();
    if n == 0 {
        return Err(TrainError::NoExamples);
    }
    let hp = Hyper::from_config(cfg);
    let index: BTreeMap<&str, usize> = data.video_ids.iter().enumerate().map(|(i, v)| (v.as_str(), i)).collect();
    let mut opt = Adam::new(&params.store, cfg.lr);
    let mut order: Vec<usize> = Vec::new();
    let mut drawn = 0usize;
    let stage_tag = u64::from(stage) << 32;
    for step in 0..steps {
        let mut grads = ParamGrads::new();
        let mut row = MetricRow {
            step,
            stage,
            l_mqr: 0.0,
            l_mvr: 0.0,
            l_vid: 0.0,
            l_cps: 0.0,
            total: 0.0,
        };
        for b in 0..cfg.batch_size {
            if drawn.is_multiple_of(n) {
                order = (0..n).collect();
                order.shuffle(&mut stream_rng(cfg.seed, STREAM_ORDER, stage_tag | (drawn / n) as u64));
            }
            let ex = &data.examples[order[drawn % n]];
            drawn += 1;
            let negatives: Option<Vec<VideoInput<'_>>> = cache.map(|c| {
                c.get(&ex.query_id)
                    .iter()
                    .filter_map(|id| index.get(id.as_str()).map(|&i| data.video_input(i)))
                    .collect()
            });
            let mut rng = stream_rng(cfg.seed, STREAM_STEP, stage_tag | (step * cfg.batch_size + b) as u64);
            let mut g = Graph::new();
            let (total, report) = params
                .arch
                .training_loss(&mut g, &params.store, data.sample(ex), negatives.as_deref(), &hp, SelectionMode::StraightThrough, &mut rng)
                .map_err(|e| match e {
                    ModelError::Kernel(k) => TrainError::Divergence {
                        stage,
                        step,
                        message: k.to_string(),
                    },
                    other => other.into(),
                })?;
            let back = g.backward(total).map_err(|e| TrainError::Divergence {
                stage,
                step,
                message: e.to_string(),
            })?;
            g.accumulate_param_grads(&back, &mut grads);
            row.l_mqr += report.l_mqr;
            row.l_mvr += report.l_mvr;
            row.l_vid += report.l_vid;
            row.l_cps += report.l_cps;
            row.total += report.total;
        }
        let k = 1.0 / cfg.batch_size as f64;
        grads.scale(k);
        for v in [&mut row.l_mqr, &mut row.l_mvr, &mut row.l_vid, &mut row.l_cps, &mut row.total] {
            *v *= k;
        }
        opt.update(&mut params.store, &grads);
        if step % 200 == 0 || step + 1 == steps {
            log::info!(
                "stage {stage} step {step}: total {:.4} mqr {:.4} mvr {:.4} vid {:.4} cps {:.4}",
                row.total,
                row.l_mqr,
                row.l_mvr,
                row.l_vid,
                row.l_cps
            );
        }
        log.rows.push(row);
    }
    Ok(())
}

/// Reconstruction and video-level contrast only.
pub fn train_stage1(
    params: &mut ModelParams,
    data: &PreparedCorpus,
    cfg: &RunConfig,
    log: &mut MetricsLog,
) -> Result<(), TrainError> {
    run_stage(params, data, cfg, 1, cfg.stage1_steps, None, log)
}

/// Continues from the current parameters with the corpus-level loss added.
pub fn train_stage2(
    params: &mut ModelParams,
    data: &PreparedCorpus,
    cache: &NegativeCache,
    cfg: &RunConfig,
    log: &mut MetricsLog,
) -> Result<(), TrainError> {
    run_stage(params, data, cfg, 2, cfg.stage2_steps, Some(cache), log)
}

/// For each query, the `k` non-ground-truth videos whose whole-video word
/// reconstruction loss is lowest. Each query masks one seeded candidate position.
pub fn build_negative_cache(
    params: &ModelParams,
    data: &PreparedCorpus,
    k: usize,
    seed: u64,
    mask_token_id: usize,
) -> Result<NegativeCache, TrainError> {
    let mut cache = NegativeCache::default();
    for (qi, ex) in data.examples.iter().enumerate() {
        if k == 0 {
            cache.lists.insert(ex.query_id.clone(), Vec::new());
            continue;
        }
        let mut rng = stream_rng(seed, STREAM_CACHE, qi as u64);
        let target = ex.candidates[rng.random_range(0..ex.candidates.len())];
        let masked = MaskedQuery::new(&ex.ids, &[target], mask_token_id).map_err(ModelError::from)?;
        let mut scored: Vec<(f64, &str)> = Vec::with_capacity(data.video_ids.len());
        for (vi, vid) in data.video_ids.iter().enumerate() {
            if vi == ex.video {
                continue;
            }
            let loss = params.arch.whole_video_loss(&params.store, data.video_input(vi), &masked)?;
            scored.push((loss, vid));
        }
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
        cache
            .lists
            .insert(ex.query_id.clone(), scored.into_iter().take(k).map(|(_, v)| v.to_string()).collect());
    }
    Ok(cache)
}

/// Everything a full training run produces.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub stage1: ModelParams,
    pub params: ModelParams,
    pub cache: NegativeCache,
    pub log: MetricsLog,
}

/// Stage 1, cache, stage 2.
pub fn train(corpus: &AnnotationCorpus, cfg: &RunConfig, human: &HumanNouns) -> Result<TrainOutcome, TrainError> {
    let mut params = ModelParams::init(cfg, corpus)?;
    let data = PreparedCorpus::new(corpus, corpus.vocab(), human, cfg.k_max)?;
    let mut log = MetricsLog::default();
    train_stage1(&mut params, &data, cfg, &mut log)?;
    let stage1 = params.clone();
    let cache = if cfg.stage2_steps > 0 {
        build_negative_cache(&params, &data, cfg.negatives_k, cfg.seed, cfg.mask_token_id)?
    } else {
        NegativeCache::default()
    };
    train_stage2(&mut params, &data, &cache, cfg, &mut log)?;
    Ok(TrainOutcome {
        stage1,
        params,
        cache,
        log,
    })
}

/// Scene counts attached to each query for the mismatch heatmap.
#[derive(Debug, Clone, PartialEq)]
pub enum SceneSource {
    /// The estimator's scene complexity.
    Complexity,
    /// Distinct ground-truth spans among the video's queries.
    GtSpans,
    /// Planted counts from the synthetic generator.
    Oracle(OracleAnnotations),
}

impl SceneSource {
    /// Reads the oracle file when the config asks for it.
    pub fn from_config(cfg: &RunConfig) -> Result<Self, EvalRunError> {
        match cfg.scene_source.as_str() {
            "gt_spans" => Ok(Self::GtSpans),
            "oracle" => {
                let path = cfg.oracle_path.as_deref().unwrap_or_default();
                let text = std::fs::read_to_string(path).map_err(|e| EvalRunError::Oracle(format!("{path}: {e}")))?;
                let oracle = serde_json::from_str(&text).map_err(|e| EvalRunError::Oracle(format!("{path}: {e}")))?;
                Ok(Self::Oracle(oracle))
            }
            _ => Ok(Self::Complexity),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EvalRunError {
    #[error("oracle annotations: {0}")]
    Oracle(String),
    #[error("video {0} missing from the oracle annotations")]
    OracleVideo(String),
    #[error("feature dimension {found} does not match the model ({expected})")]
    FeatureDim { found: usize, expected: usize },
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Complexity(#[from] ComplexityError),
}

/// Scores every annotated query of `corpus` and ranks its candidate spans.
pub fn evaluate(
    params: &ModelParams,
    corpus: &AnnotationCorpus,
    cfg: &RunConfig,
    strategy: &ProposalStrategy,
    scenes: &SceneSource,
    human: &HumanNouns,
) -> Result<EvalReport, EvalRunError> {
    let expected = params.arch.shape.feat_dim;
    match corpus.feature_dim() {
        Some(found) if found != expected => return Err(EvalRunError::FeatureDim { found, expected }),
        None => return Err(TrainError::NoVideos.into()),
        _ => {}
    }
    let vocab = params.vocab();
    let data = PreparedCorpus::new(corpus, &vocab, human, cfg.k_max)?;
    let hp = Hyper::from_config(cfg);
    let mut outcomes = Vec::new();
    for (qi, (ex, q)) in data.examples.iter().zip(corpus.queries()).enumerate() {
        let Some(gt) = q.gt_span else { continue };
        let video_id = &data.video_ids[ex.video];
        let n_frames = data.features[ex.video].nrows();
        let source = match strategy.fixed_proposals(n_frames) {
            Some(geom) => ProposalSource::Fixed(geom),
            None => ProposalSource::Learned,
        };
        let mut rng = stream_rng(cfg.seed, STREAM_EVAL, qi as u64);
        let scores = params.arch.score_query(&params.store, data.sample(ex), &source, &hp, &mut rng)?;
        let masks: Vec<&_> = scores.masks.iter().collect();
        let ranked = predict_span(&masks, &scores.l_mqr, &scores.l_mvr, data.durations[ex.video]);
        let scene_count = match scenes {
            SceneSource::Complexity => data.alphas[ex.video],
            SceneSource::GtSpans => gt_scene_count(&corpus.find_queries(video_id).map_err(TrainError::from)?)?,
            SceneSource::Oracle(o) => o
                .scene_count(video_id)
                .ok_or_else(|| EvalRunError::OracleVideo(video_id.clone()))?,
        };
        outcomes.push(QueryOutcome {
            query_id: ex.query_id.clone(),
            video_id: video_id.clone(),
            gt,
            proposal_count: ranked.len(),
            ranked,
            scene_count,
        });
    }
    Ok(EvalReport::from_outcomes(outcomes)?)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    shape: [usize; 2],
    /// Byte offset into the blob.
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    version: u32,
    config_digest: String,
    shape: ModelShape,
    vocab: Vec<String>,
    blob: String,
    tensors: BTreeMap<String, TensorEntry>,
}

fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

fn ckpt_io(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes a JSON manifest at `path` and little-endian `f64` values next to it (`.bin`).
pub fn save_checkpoint(params: &ModelParams, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    let blob = blob_path(path);
    let mut bytes = Vec::with_capacity(params.store.n_scalars() * 8);
    let mut tensors = BTreeMap::new();
    for e in params.store.entries() {
        let (r, c) = e.value.dim();
        tensors.insert(e.name.clone(), TensorEntry { shape: [r, c], offset: bytes.len() });
        for x in e.value.iter() {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
    }
    let manifest = Manifest {
        version: CHECKPOINT_VERSION,
        config_digest: params.config_digest.clone(),
        shape: params.arch.shape.clone(),
        vocab: params.vocab.clone(),
        blob: blob.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        tensors,
    };
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| CheckpointError::Manifest(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(ckpt_io(path))?;
    let mut f = std::fs::File::create(&blob).map_err(ckpt_io(&blob))?;
    f.write_all(&bytes).map_err(ckpt_io(&blob))?;
    Ok(())
}

fn read_manifest(path: &Path) -> Result<(Manifest, Vec<u8>), CheckpointError> {
    let text = std::fs::read_to_string(path).map_err(ckpt_io(path))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| CheckpointError::Manifest(e.to_string()))?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version {
            found: manifest.version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let blob = path.with_file_name(&manifest.blob);
    let mut bytes = Vec::new();
    std::fs::File::open(&blob)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(ckpt_io(&blob))?;
    Ok((manifest, bytes))
}

fn fill_store(store: &mut ParamStore, manifest: &Manifest, bytes: &[u8]) -> Result<(), CheckpointError> {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let name = store.name(id).to_string();
        let entry = manifest.tensors.get(&name).ok_or_else(|| CheckpointError::Missing(name.clone()))?;
        let expected = store.value(id).dim();
        let found = (entry.shape[0], entry.shape[1]);
        if found != expected {
            return Err(CheckpointError::Shape { name, found, expected });
        }
        let need = entry.offset + found.0 * found.1 * 8;
        if bytes.len() < need {
            return Err(CheckpointError::Truncated { need, have: bytes.len() });
        }
        let vals: Vec<f64> = bytes[entry.offset..need]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        store.value_mut(id).assign(&Array2::from_shape_vec(found, vals).expect("checked shape"));
    }
    Ok(())
}

/// Rebuilds the model described by the manifest and fills in its values.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams, CheckpointError> {
    let path = path.as_ref();
    let (manifest, bytes) = read_manifest(path)?;
    let mut store = ParamStore::new();
    // initial values are overwritten below
    let arch = Scanet::new(manifest.shape.clone(), &mut store, &mut ChaCha8Rng::seed_from_u64(0))?;
    fill_store(&mut store, &manifest, &bytes)?;
    Ok(ModelParams {
        arch,
        store,
        vocab: manifest.vocab,
        config_digest: manifest.config_digest,
    })
}

/// Loads values into an existing model, checking every tensor's shape against it.
pub fn load_weights_into(params: &mut ModelParams, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let (manifest, bytes) = read_manifest(path.as_ref())?;
    fill_store(&mut params.store, &manifest, &bytes)
}

/// Hex SHA-256 over a checkpoint's manifest and blob.
pub fn checkpoint_digest(path: impl AsRef<Path>) -> Result<String, CheckpointError> {
    let path = path.as_ref();
    let mut h = Sha256::new();
    h.update(std::fs::read(path).map_err(ckpt_io(path))?);
    let blob = blob_path(path);
    h.update(std::fs::read(&blob).map_err(ckpt_io(&blob))?);
    Ok(hex::encode(h.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, SyntheticSpec};

    fn small_setup(steps: usize) -> (AnnotationCorpus, RunConfig) {
        let mut spec = SyntheticSpec::with_seed(3);
        spec.n_videos = 5;
        spec.frames_per_video = 12;
        spec.d = 8;
        spec.max_scenes = 3;
        let (corpus, _) = generate_synthetic(&spec).unwrap();
        let mut cfg = RunConfig::with_seed(11);
        cfg.d_model = 8;
        cfg.n_heads = 2;
        cfg.ffn_hidden = 16;
        cfg.stage1_steps = steps;
        cfg.stage2_steps = steps;
        cfg.negatives_k = 2;
        (corpus, cfg)
    }

    #[test]
    fn zero_steps_keep_initialization() {
        let (corpus, mut cfg) = small_setup(0);
        cfg.stage2_steps = 0;
        let out = train(&corpus, &cfg, &HumanNouns::default()).unwrap();
        assert_eq!(out.params, ModelParams::init(&cfg, &corpus).unwrap());
        assert!(out.log.rows.is_empty());
    }

    #[test]
    fn cache_excludes_ground_truth_and_matches_brute_force() {
        let (corpus, cfg) = small_setup(0);
        let params = ModelParams::init(&cfg, &corpus).unwrap();
        let data = PreparedCorpus::new(&corpus, corpus.vocab(), &HumanNouns::default(), 12).unwrap();
        let cache = build_negative_cache(&params, &data, 2, 5, 1).unwrap();
        for (qi, ex) in data.examples.iter().enumerate() {
            let list = cache.get(&ex.query_id);
            assert_eq!(list.len(), 2);
            assert!(!list.contains(&data.video_ids[ex.video]));
            // exhaustive re-scoring with the same masked position
            let mut rng = stream_rng(5, STREAM_CACHE, qi as u64);
            let target = ex.candidates[rng.random_range(0..ex.candidates.len())];
            let masked = MaskedQuery::new(&ex.ids, &[target], 1).unwrap();
            let mut all: Vec<(f64, String)> = (0..data.video_ids.len())
                .filter(|&v| v != ex.video)
                .map(|v| {
                    let l = params.arch.whole_video_loss(&params.store, data.video_input(v), &masked).unwrap();
                    (l, data.video_ids[v].clone())
                })
                .collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let want: Vec<String> = all.into_iter().take(2).map(|x| x.1).collect();
            assert_eq!(list, want.as_slice());
        }
        let empty = build_negative_cache(&params, &data, 0, 5, 1).unwrap();
        assert!(empty.lists.values().all(Vec::is_empty));
        let wide = build_negative_cache(&params, &data, 50, 5, 1).unwrap();
        assert!(wide.lists.values().all(|l| l.len() == 4));
    }

    #[test]
    fn empty_cache_matches_stage1_objective() {
        let (corpus, cfg) = small_setup(3);
        let data = PreparedCorpus::new(&corpus, corpus.vocab(), &HumanNouns::default(), 12).unwrap();
        let mut a = ModelParams::init(&cfg, &corpus).unwrap();
        let mut b = a.clone();
        let mut la = MetricsLog::default();
        let mut lb = MetricsLog::default();
        run_stage(&mut a, &data, &cfg, 2, 3, Some(&NegativeCache::default()), &mut la).unwrap();
        run_stage(&mut b, &data, &cfg, 2, 3, None, &mut lb).unwrap();
        assert_eq!(a, b);
        assert!(la.rows.iter().all(|r| r.l_cps == 0.0));
    }

    #[test]
    fn checkpoint_round_trip_and_errors() {
        let (corpus, cfg) = small_setup(0);
        let params = ModelParams::init(&cfg, &corpus).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_checkpoint(&params, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), params);

        let mut wider_cfg = cfg.clone();
        wider_cfg.d_model = 16;
        let mut other = ModelParams::init(&wider_cfg, &corpus).unwrap();
        match load_weights_into(&mut other, &path) {
            Err(CheckpointError::Shape { name, .. }) => assert!(!name.is_empty()),
            r => panic!("expected shape error, got {r:?}"),
        }

        let bin = path.with_extension("bin");
        let bytes = std::fs::read(&bin).unwrap();
        std::fs::write(&bin, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(CheckpointError::Truncated { .. })));

        let text = std::fs::read_to_string(&path).unwrap().replace("\"version\": 1", "\"version\": 9");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(CheckpointError::Version { found: 9, .. })));
    }
}
