//! Video–query annotation corpora: data model, JSON Lines ingestion and the
//! synthetic generator that stands in for pretrained feature extractors.

mod io;
mod synthetic;
mod vocab;

use std::collections::HashMap;
use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use io::{load_corpus, parse_corpus, save_corpus, write_corpus};
pub use synthetic::{generate_synthetic, OracleAnnotations, OracleVideo, SyntheticSpec};
pub use vocab::{Vocab, MASK_TOKEN, UNK_TOKEN};

/// Default vocabulary cap, special tokens included.
pub const VOCAB_SIZE: usize = 8000;
/// Queries longer than this are truncated at load time.
pub const MAX_QUERY_LEN: usize = 20;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("lookup error: unknown video id {0:?}")]
    UnknownVideo(String),
    #[error("spec error: {0}")]
    Spec(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PosTag {
    #[serde(rename = "NOUN")]
    Noun,
    #[serde(rename = "VERB")]
    Verb,
    #[serde(rename = "OTHER")]
    Other,
}

/// Temporal segment in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Span {
    pub start: f64,
    pub end: f64,
}

impl Span {
    pub fn new(start: f64, end: f64) -> Self {
        Self { start, end }
    }

    pub fn length(&self) -> f64 {
        self.end - self.start
    }
}

impl From<[f64; 2]> for Span {
    fn from(v: [f64; 2]) -> Self {
        Span::new(v[0], v[1])
    }
}

impl From<Span> for [f64; 2] {
    fn from(s: Span) -> Self {
        [s.start, s.end]
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{:.3}, {:.3}]", self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecord {
    pub video_id: String,
    /// `n_frames × d`, row-major.
    pub features: Array2<f32>,
    pub duration: f64,
}

impl VideoRecord {
    pub fn n_frames(&self) -> usize {
        self.features.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features_f64(&self) -> Array2<f64> {
        self.features.mapv(f64::from)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryRecord {
    pub query_id: String,
    pub video_id: String,
    pub tokens: Vec<String>,
    pub pos_tags: Vec<PosTag>,
    /// Evaluation and diagnostics only; never read during training.
    pub gt_span: Option<Span>,
}

/// Immutable after construction; every invariant is checked by [`AnnotationCorpus::new`].
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationCorpus {
    videos: Vec<VideoRecord>,
    queries: Vec<QueryRecord>,
    vocab: Vocab,
    video_index: HashMap<String, usize>,
}

impl AnnotationCorpus {
    /// Validates records and builds the vocabulary (capped at `vocab_cap`).
    pub fn new(
        videos: Vec<VideoRecord>,
        mut queries: Vec<QueryRecord>,
        vocab_cap: usize,
    ) -> Result<Self, CorpusError> {
        let mut video_index = HashMap::with_capacity(videos.len());
        for (i, v) in videos.iter().enumerate() {
            if video_index.insert(v.video_id.clone(), i).is_some() {
                return Err(CorpusError::Integrity(format!(
                    "duplicate video id {:?}",
                    v.video_id
                )));
            }
            validate_video(v)?;
        }
        if let Some(first) = videos.first() {
            let d = first.feature_dim();
            if let Some(bad) = videos.iter().find(|v| v.feature_dim() != d) {
                return Err(CorpusError::Integrity(format!(
                    "video {:?} has feature dim {} but corpus uses {d}",
                    bad.video_id,
                    bad.feature_dim()
                )));
            }
        }
        let mut seen_queries = HashMap::with_capacity(queries.len());
        for q in &mut queries {
            if seen_queries.insert(q.query_id.clone(), ()).is_some() {
                return Err(CorpusError::Integrity(format!(
                    "duplicate query id {:?}",
                    q.query_id
                )));
            }
            let Some(&vi) = video_index.get(&q.video_id) else {
                return Err(CorpusError::Integrity(format!(
                    "query {:?} references unknown video {:?}",
                    q.query_id, q.video_id
                )));
            };
            if q.tokens.is_empty() {
                return Err(CorpusError::Integrity(format!(
                    "query {:?} has no tokens",
                    q.query_id
                )));
            }
            if q.tokens.len() != q.pos_tags.len() {
                return Err(CorpusError::Integrity(format!(
                    "query {:?} has {} tokens but {} tags",
                    q.query_id,
                    q.tokens.len(),
                    q.pos_tags.len()
                )));
            }
            if q.tokens.len() > MAX_QUERY_LEN {
                log::warn!(
                    "query {:?} has {} tokens; truncating to {MAX_QUERY_LEN}",
                    q.query_id,
                    q.tokens.len()
                );
                q.tokens.truncate(MAX_QUERY_LEN);
                q.pos_tags.truncate(MAX_QUERY_LEN);
            }
            if let Some(span) = q.gt_span {
                let dur = videos[vi].duration;
                if !(span.start >= 0.0 && span.start < span.end && span.end <= dur) {
                    return Err(CorpusError::Integrity(format!(
                        "query {:?} span {span} outside video duration {dur}",
                        q.query_id
                    )));
                }
            }
        }
        let vocab = Vocab::build(queries.iter().flat_map(|q| q.tokens.iter()), vocab_cap);
        Ok(Self {
            videos,
            queries,
            vocab,
            video_index,
        })
    }

    pub fn videos(&self) -> &[VideoRecord] {
        &self.videos
    }

    pub fn queries(&self) -> &[QueryRecord] {
        &self.queries
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn video(&self, video_id: &str) -> Option<&VideoRecord> {
        self.video_index.get(video_id).map(|&i| &self.videos[i])
    }

    pub fn video_position(&self, video_id: &str) -> Option<usize> {
        self.video_index.get(video_id).copied()
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.videos.first().map(VideoRecord::feature_dim)
    }

    /// All queries paired with `video_id`, in corpus order.
    pub fn find_queries(&self, video_id: &str) -> Result<Vec<&QueryRecord>, CorpusError> {
        if !self.video_index.contains_key(video_id) {
            return Err(CorpusError::UnknownVideo(video_id.to_string()));
        }
        Ok(self
            .queries
            .iter()
            .filter(|q| q.video_id == video_id)
            .collect())
    }
}

/// Free-function form of [`AnnotationCorpus::find_queries`].
pub fn find_queries<'a>(
    video_id: &str,
    corpus: &'a AnnotationCorpus,
) -> Result<Vec<&'a QueryRecord>, CorpusError> {
    corpus.find_queries(video_id)
}

fn validate_video(v: &VideoRecord) -> Result<(), CorpusError> {
    if v.n_frames() < 2 {
        return Err(CorpusError::Integrity(format!(
            "video {:?} has {} frames; at least 2 required",
            v.video_id,
            v.n_frames()
        )));
    }
    if v.feature_dim() == 0 {
        return Err(CorpusError::Integrity(format!(
            "video {:?} has empty feature rows",
            v.video_id
        )));
    }
    if !(v.duration.is_finite() && v.duration > 0.0) {
        return Err(CorpusError::Integrity(format!(
            "video {:?} has non-positive duration {}",
            v.video_id, v.duration
        )));
    }
    if v.features.iter().any(|x| !x.is_finite()) {
        return Err(CorpusError::Integrity(format!(
            "video {:?} has non-finite features",
            v.video_id
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn video(id: &str, dur: f64) -> VideoRecord {
        VideoRecord {
            video_id: id.into(),
            features: Array2::zeros((4, 3)),
            duration: dur,
        }
    }

    fn query(id: &str, vid: &str, text: &str) -> QueryRecord {
        let tokens: Vec<String> = text.split_whitespace().map(str::to_string).collect();
        QueryRecord {
            query_id: id.into(),
            video_id: vid.into(),
            pos_tags: vec![PosTag::Other; tokens.len()],
            tokens,
            gt_span: None,
        }
    }

    #[test]
    fn find_queries_keeps_corpus_order() {
        let c = AnnotationCorpus::new(
            vec![video("a", 10.0), video("b", 10.0)],
            vec![
                query("q1", "a", "x"),
                query("q2", "b", "y"),
                query("q3", "a", "z"),
            ],
            VOCAB_SIZE,
        )
        .unwrap();
        let ids: Vec<_> = c
            .find_queries("a")
            .unwrap()
            .iter()
            .map(|q| q.query_id.as_str())
            .collect();
        assert_eq!(ids, ["q1", "q3"]);
        assert!(c.find_queries("b").unwrap().len() == 1);
        assert!(matches!(
            c.find_queries("nope"),
            Err(CorpusError::UnknownVideo(_))
        ));
    }

    #[test]
    fn video_without_queries_yields_empty_list() {
        let c = AnnotationCorpus::new(vec![video("a", 5.0)], vec![], VOCAB_SIZE).unwrap();
        assert!(c.find_queries("a").unwrap().is_empty());
    }

    #[test]
    fn rejects_span_past_duration() {
        let mut q = query("q", "a", "x");
        q.gt_span = Some(Span::new(1.0, 11.0));
        let err = AnnotationCorpus::new(vec![video("a", 10.0)], vec![q], VOCAB_SIZE).unwrap_err();
        assert!(matches!(err, CorpusError::Integrity(_)));
    }

    #[test]
    fn rejects_dangling_and_duplicate_ids() {
        let err =
            AnnotationCorpus::new(vec![video("a", 1.0)], vec![query("q", "zz", "x")], VOCAB_SIZE)
                .unwrap_err();
        assert!(matches!(err, CorpusError::Integrity(_)));
        let err = AnnotationCorpus::new(vec![video("a", 1.0), video("a", 2.0)], vec![], VOCAB_SIZE)
            .unwrap_err();
        assert!(matches!(err, CorpusError::Integrity(_)));
    }

    #[test]
    fn long_queries_are_truncated() {
        let text = (0..25).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        let c = AnnotationCorpus::new(vec![video("a", 1.0)], vec![query("q", "a", &text)], VOCAB_SIZE)
            .unwrap();
        assert_eq!(c.queries()[0].tokens.len(), MAX_QUERY_LEN);
        assert_eq!(c.queries()[0].pos_tags.len(), MAX_QUERY_LEN);
    }
}
