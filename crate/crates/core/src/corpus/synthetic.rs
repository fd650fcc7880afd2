//! Synthetic corpora with planted scenes.
//!
//! Each video is a concatenation of contiguous scenes. A scene pairs an object
//! (noun) with an action (verb); its frames are a per-scene prototype plus
//! Gaussian noise, scaled by `1/sqrt(d)` so a frame has roughly unit norm
//! whatever the dimension. Objects are distinct within a video, so the nouns of
//! different scenes never overlap, and every scene is described by at least one
//! templated query. Redundant queries re-describe an existing scene with the
//! same object noun, which is exactly the redundancy the complexity estimator
//! has to remove.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{AnnotationCorpus, CorpusError, PosTag, QueryRecord, Span, VideoRecord, VOCAB_SIZE};

const OBJECT_NOUNS: &[&str] = &[
    "laptop", "stair", "food", "hand", "door", "book", "cup", "phone", "window", "bag", "chair",
    "table", "towel", "shoe", "box", "bed", "sandwich", "mirror", "broom", "pillow", "camera",
    "blanket", "dish", "shelf", "closet", "picture", "sofa", "vacuum", "bottle", "paper",
];

const ACTION_VERBS: &[&str] = &[
    "holds", "opens", "watches", "eats", "takes", "puts", "throws", "washes", "closes", "grabs",
    "fixes", "tidies", "carries", "looks", "sits", "cleans",
];

const SUBJECTS: &[&str] = &["person", "man", "woman", "someone"];
const ADVERBS: &[&str] = &["slowly", "again", "quickly", "then"];

fn default_n_videos() -> usize {
    20
}
fn default_frames() -> usize {
    32
}
fn default_dim() -> usize {
    64
}
fn default_min_scenes() -> usize {
    1
}
fn default_max_scenes() -> usize {
    5
}
fn default_k_max() -> usize {
    12
}
fn default_n_objects() -> usize {
    16
}
fn default_n_actions() -> usize {
    8
}
fn default_noise() -> f64 {
    0.3
}
fn default_instance() -> f64 {
    0.3
}
fn default_min_duration() -> f64 {
    20.0
}
fn default_max_duration() -> f64 {
    40.0
}
fn default_min_scene_frames() -> usize {
    3
}

/// Generator settings. Every field but `seed` has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    #[serde(default = "default_n_videos")]
    pub n_videos: usize,
    #[serde(default = "default_frames")]
    pub frames_per_video: usize,
    /// Feature dimension `d`.
    #[serde(default = "default_dim")]
    pub d: usize,
    #[serde(default = "default_min_scenes")]
    pub min_scenes: usize,
    #[serde(default = "default_max_scenes")]
    pub max_scenes: usize,
    /// Upper bound on scene complexity; `max_scenes` may not exceed it.
    #[serde(default = "default_k_max")]
    pub k_max: usize,
    /// Size of the object (noun) concept pool.
    #[serde(default = "default_n_objects")]
    pub n_objects: usize,
    /// Size of the action (verb) concept pool.
    #[serde(default = "default_n_actions")]
    pub n_actions: usize,
    /// Extra queries per video, as a fraction of its scene count, that re-describe an existing scene.
    #[serde(default)]
    pub redundancy_rate: f64,
    /// Std of per-frame Gaussian noise.
    #[serde(default = "default_noise")]
    pub noise_std: f64,
    /// Std of per-scene deviation from the concept prototype.
    #[serde(default = "default_instance")]
    pub instance_std: f64,
    /// Probability that a scene is copied verbatim from an earlier video.
    #[serde(default)]
    pub duplicate_scene_rate: f64,
    #[serde(default = "default_min_duration")]
    pub min_duration: f64,
    #[serde(default = "default_max_duration")]
    pub max_duration: f64,
    #[serde(default = "default_min_scene_frames")]
    pub min_scene_frames: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn with_seed(seed: u64) -> Self {
        serde_json::from_value(serde_json::json!({ "seed": seed })).expect("defaults are valid")
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let fail = |m: String| Err(CorpusError::Spec(m));
        if self.n_videos == 0 {
            return fail("n_videos must be positive".into());
        }
        if self.frames_per_video < 2 {
            return fail("frames_per_video must be at least 2".into());
        }
        if self.d == 0 {
            return fail("d must be positive".into());
        }
        if self.min_scenes == 0 || self.min_scenes > self.max_scenes {
            return fail(format!(
                "scene range [{}, {}] is empty or starts below 1",
                self.min_scenes, self.max_scenes
            ));
        }
        if self.max_scenes > self.k_max {
            return fail(format!(
                "max_scenes {} exceeds k_max {}",
                self.max_scenes, self.k_max
            ));
        }
        if self.min_scene_frames == 0 || self.max_scenes * self.min_scene_frames > self.frames_per_video {
            return fail(format!(
                "{} scenes of at least {} frames do not fit in {} frames",
                self.max_scenes, self.min_scene_frames, self.frames_per_video
            ));
        }
        if self.max_scenes > self.n_objects {
            return fail(format!(
                "{} scenes need distinct objects but only {} exist",
                self.max_scenes, self.n_objects
            ));
        }
        if self.n_actions == 0 {
            return fail("n_actions must be positive".into());
        }
        for (name, r) in [
            ("redundancy_rate", self.redundancy_rate),
            ("duplicate_scene_rate", self.duplicate_scene_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return fail(format!("{name} {r} outside [0, 1]"));
            }
        }
        if !(self.noise_std >= 0.0 && self.instance_std >= 0.0) {
            return fail("noise levels must be non-negative".into());
        }
        if !(self.min_duration > 0.0 && self.min_duration <= self.max_duration) {
            return fail("duration range must be positive and ordered".into());
        }
        Ok(())
    }
}

/// Ground truth planted by the generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleAnnotations {
    pub videos: Vec<OracleVideo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleVideo {
    pub video_id: String,
    pub scene_count: usize,
    pub spans: Vec<Span>,
    /// Inclusive frame ranges per scene.
    pub frame_ranges: Vec<(usize, usize)>,
    pub objects: Vec<String>,
    pub actions: Vec<String>,
    /// Scene index described by each query.
    pub query_scene: BTreeMap<String, usize>,
    /// Scenes copied from another video, as `(scene index, source video id)`.
    pub duplicates: Vec<(usize, String)>,
}

impl OracleAnnotations {
    pub fn video(&self, video_id: &str) -> Option<&OracleVideo> {
        self.videos.iter().find(|v| v.video_id == video_id)
    }

    pub fn scene_count(&self, video_id: &str) -> Option<usize> {
        self.video(video_id).map(|v| v.scene_count)
    }
}

fn object_name(i: usize) -> String {
    OBJECT_NOUNS
        .get(i)
        .map_or_else(|| format!("object{i}"), |s| s.to_string())
}

fn action_name(i: usize) -> String {
    ACTION_VERBS
        .get(i)
        .map_or_else(|| format!("action{i}"), |s| s.to_string())
}

fn random_unit<R: Rng>(rng: &mut R, d: usize) -> Array1<f64> {
    let v: Array1<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    let n = v.dot(&v).sqrt().max(1e-12);
    v * ((d as f64).sqrt() / n)
}

#[derive(Clone)]
struct SceneInstance {
    object: usize,
    action: usize,
    prototype: Array1<f64>,
    video_id: String,
}

/// Splits `frames` into `n` contiguous lengths of at least `min_len` each.
fn partition<R: Rng>(rng: &mut R, frames: usize, n: usize, min_len: usize) -> Vec<usize> {
    let spare = frames - n * min_len;
    let weights: Vec<f64> = (0..n).map(|_| -rng.random_range(f64::EPSILON..1.0).ln()).collect();
    let total: f64 = weights.iter().sum();
    let mut lens: Vec<usize> = weights
        .iter()
        .map(|w| min_len + (spare as f64 * w / total).floor() as usize)
        .collect();
    let mut left = frames - lens.iter().sum::<usize>();
    let mut i = 0;
    while left > 0 {
        lens[i % n] += 1;
        left -= 1;
        i += 1;
    }
    lens
}

fn templated_query<R: Rng>(rng: &mut R, object: &str, action: &str) -> (Vec<String>, Vec<PosTag>) {
    let subject = SUBJECTS[rng.random_range(0..SUBJECTS.len())];
    let mut tokens = Vec::new();
    let mut tags = Vec::new();
    if rng.random_bool(0.5) {
        tokens.push("a".to_string());
        tags.push(PosTag::Other);
    }
    tokens.extend([subject.to_string(), action.to_string(), "the".to_string(), object.to_string()]);
    tags.extend([PosTag::Noun, PosTag::Verb, PosTag::Other, PosTag::Noun]);
    if rng.random_bool(0.3) {
        tokens.push(ADVERBS[rng.random_range(0..ADVERBS.len())].to_string());
        tags.push(PosTag::Other);
    }
    (tokens, tags)
}

/// Builds a corpus and its planted ground truth. Bit-identical for a fixed spec.
pub fn generate_synthetic(
    spec: &SyntheticSpec,
) -> Result<(AnnotationCorpus, OracleAnnotations), CorpusError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let objects: Vec<Array1<f64>> = (0..spec.n_objects).map(|_| random_unit(&mut rng, spec.d)).collect();
    let actions: Vec<Array1<f64>> = (0..spec.n_actions).map(|_| random_unit(&mut rng, spec.d)).collect();
    let instance = Normal::new(0.0, spec.instance_std).map_err(|e| CorpusError::Spec(e.to_string()))?;
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| CorpusError::Spec(e.to_string()))?;

    let mut pool: Vec<SceneInstance> = Vec::new();
    let mut videos = Vec::with_capacity(spec.n_videos);
    let mut queries = Vec::new();
    let mut oracle = Vec::with_capacity(spec.n_videos);

    for vi in 0..spec.n_videos {
        let video_id = format!("v{vi:04}");
        let n_scenes = rng.random_range(spec.min_scenes..=spec.max_scenes);
        let lens = partition(&mut rng, spec.frames_per_video, n_scenes, spec.min_scene_frames);
        let duration = rng.random_range(spec.min_duration..=spec.max_duration);

        let mut scenes: Vec<SceneInstance> = Vec::with_capacity(n_scenes);
        let mut duplicates = Vec::new();
        for si in 0..n_scenes {
            let used: Vec<usize> = scenes.iter().map(|s| s.object).collect();
            let copy = if !pool.is_empty() && rng.random_bool(spec.duplicate_scene_rate) {
                let candidates: Vec<&SceneInstance> =
                    pool.iter().filter(|s| !used.contains(&s.object)).collect();
                candidates.choose(&mut rng).map(|s| (*s).clone())
            } else {
                None
            };
            let scene = match copy {
                Some(s) => {
                    duplicates.push((si, s.video_id.clone()));
                    s
                }
                None => {
                    let free: Vec<usize> = (0..spec.n_objects).filter(|o| !used.contains(o)).collect();
                    let object = free[rng.random_range(0..free.len())];
                    let action = rng.random_range(0..spec.n_actions);
                    let base = (&objects[object] + &actions[action]) / std::f64::consts::SQRT_2;
                    let prototype = base.mapv(|x| x + instance.sample(&mut rng));
                    SceneInstance {
                        object,
                        action,
                        prototype,
                        video_id: video_id.clone(),
                    }
                }
            };
            scenes.push(scene);
        }

        let scale = 1.0 / (spec.d as f64).sqrt();
        let mut features = Array2::<f32>::zeros((spec.frames_per_video, spec.d));
        let mut frame_ranges = Vec::with_capacity(n_scenes);
        let mut spans = Vec::with_capacity(n_scenes);
        let mut start = 0;
        for (scene, &len) in scenes.iter().zip(&lens) {
            for f in start..start + len {
                for j in 0..spec.d {
                    features[[f, j]] = ((scene.prototype[j] + noise.sample(&mut rng)) * scale) as f32;
                }
            }
            let end = start + len - 1;
            frame_ranges.push((start, end));
            let fpv = spec.frames_per_video as f64;
            spans.push(Span::new(
                start as f64 / fpv * duration,
                (end + 1) as f64 / fpv * duration,
            ));
            start += len;
        }

        // one query per scene, then the redundant re-descriptions
        let n_extra = (spec.redundancy_rate * n_scenes as f64).round() as usize;
        let mut described: Vec<usize> = (0..n_scenes).collect();
        for _ in 0..n_extra {
            described.push(rng.random_range(0..n_scenes));
        }
        described.shuffle(&mut rng);
        let mut query_scene = BTreeMap::new();
        for (qi, &si) in described.iter().enumerate() {
            let query_id = format!("{video_id}_q{qi}");
            let (tokens, pos_tags) = templated_query(
                &mut rng,
                &object_name(scenes[si].object),
                &action_name(scenes[si].action),
            );
            query_scene.insert(query_id.clone(), si);
            queries.push(QueryRecord {
                query_id,
                video_id: video_id.clone(),
                tokens,
                pos_tags,
                gt_span: Some(spans[si]),
            });
        }

        oracle.push(OracleVideo {
            video_id: video_id.clone(),
            scene_count: n_scenes,
            spans,
            frame_ranges,
            objects: scenes.iter().map(|s| object_name(s.object)).collect(),
            actions: scenes.iter().map(|s| action_name(s.action)).collect(),
            query_scene,
            duplicates,
        });
        pool.extend(scenes);
        videos.push(VideoRecord {
            video_id,
            features,
            duration,
        });
    }

    let corpus = AnnotationCorpus::new(videos, queries, VOCAB_SIZE)?;
    Ok((corpus, OracleAnnotations { videos: oracle }))
}
