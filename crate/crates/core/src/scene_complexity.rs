//! Scene complexity: how many distinguishable scenes a video holds, estimated
//! from the nouns of its paired queries after pruning redundant descriptions.
//!
//! Redundancy removal repeatedly deletes the noun set that overlaps the most
//! other sets (ties: the one latest in corpus order) until all remaining sets
//! are pairwise disjoint. The survivors are counted as scenes.

use std::collections::{BTreeSet, HashSet};
use std::io::BufRead;
use std::path::Path;

use crate::corpus::{AnnotationCorpus, CorpusError, PosTag, QueryRecord};
use crate::eval::iou;

/// Built-in list of nouns that denote people; they carry no scene identity.
pub const DEFAULT_HUMAN_NOUNS: &str = include_str!("../data/human_nouns.txt");

/// Maximum scene complexity (codebook rows).
pub const DEFAULT_K: usize = 12;

#[derive(Debug, thiserror::Error)]
pub enum ComplexityError {
    #[error("video {0:?} has no paired queries")]
    NoQueries(String),
    #[error("query {0:?} has no ground-truth span")]
    MissingSpan(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("cannot read human noun list {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HumanNouns(HashSet<String>);

impl Default for HumanNouns {
    fn default() -> Self {
        Self::from_reader(DEFAULT_HUMAN_NOUNS.as_bytes()).expect("in-memory read")
    }
}

impl HumanNouns {
    pub fn contains(&self, token: &str) -> bool {
        self.0.contains(&token.to_lowercase())
    }

    /// One token per line; blank lines and `#` comments are ignored.
    pub fn from_reader<R: BufRead>(reader: R) -> std::io::Result<Self> {
        let mut set = HashSet::new();
        for line in reader.lines() {
            let line = line?;
            let t = line.trim();
            if !t.is_empty() && !t.starts_with('#') {
                set.insert(t.to_lowercase());
            }
        }
        Ok(Self(set))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ComplexityError> {
        let path = path.as_ref();
        let io = |source| ComplexityError::Io {
            path: path.display().to_string(),
            source,
        };
        let file = std::fs::File::open(path).map_err(io)?;
        Self::from_reader(std::io::BufReader::new(file)).map_err(io)
    }
}

impl<S: AsRef<str>> FromIterator<S> for HumanNouns {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        Self(iter.into_iter().map(|s| s.as_ref().to_lowercase()).collect())
    }
}

/// Per-query noun sets, in corpus order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct NounSet {
    pub elements: Vec<BTreeSet<String>>,
    /// Query id behind each element.
    pub provenance: Vec<String>,
}

impl NounSet {
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    fn shares_noun(&self, a: usize, b: usize) -> bool {
        let (x, y) = (&self.elements[a], &self.elements[b]);
        x.intersection(y).next().is_some()
    }

    /// Number of other elements sharing at least one noun with element `i`.
    pub fn overlap_degree(&self, i: usize) -> usize {
        (0..self.len())
            .filter(|&j| j != i && self.shares_noun(i, j))
            .count()
    }

    pub fn is_disjoint(&self) -> bool {
        (0..self.len()).all(|i| self.overlap_degree(i) == 0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemovalStep {
    pub query_id: String,
    pub nouns: BTreeSet<String>,
    pub degree: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SceneComplexity {
    /// Clamped to `[1, K]`.
    pub alpha: usize,
    /// Surviving element count before clamping (query count when degraded).
    pub raw_count: usize,
    pub n_queries: usize,
    pub trace: Vec<RemovalStep>,
    /// Queries that contributed no nouns.
    pub dropped: Vec<String>,
    /// No query had nouns; `raw_count` is the query count.
    pub degraded: bool,
}

/// Nouns of each query minus human nouns. Queries without any are skipped.
pub fn extract_nouns(queries: &[&QueryRecord], human: &HumanNouns) -> NounSet {
    let mut out = NounSet::default();
    for q in queries {
        let nouns: BTreeSet<String> = q
            .tokens
            .iter()
            .zip(&q.pos_tags)
            .filter(|(t, tag)| **tag == PosTag::Noun && !human.contains(t))
            .map(|(t, _)| t.to_lowercase())
            .collect();
        if nouns.is_empty() {
            log::debug!("query {:?} has no scene nouns; dropped", q.query_id);
            continue;
        }
        out.elements.push(nouns);
        out.provenance.push(q.query_id.clone());
    }
    out
}

/// Removes the most-overlapping element until the elements are pairwise disjoint.
pub fn remove_redundancy(ns: &NounSet) -> (NounSet, Vec<RemovalStep>) {
    let mut cur = ns.clone();
    let mut trace = Vec::new();
    loop {
        let degrees: Vec<usize> = (0..cur.len()).map(|i| cur.overlap_degree(i)).collect();
        let max = degrees.iter().copied().max().unwrap_or(0);
        if max == 0 {
            break;
        }
        // latest element wins ties
        let victim = degrees.iter().rposition(|&d| d == max).expect("max exists");
        let nouns = cur.elements.remove(victim);
        let query_id = cur.provenance.remove(victim);
        trace.push(RemovalStep {
            query_id,
            nouns,
            degree: max,
        });
    }
    assert!(cur.is_disjoint(), "redundancy removal left overlapping noun sets");
    (cur, trace)
}

/// Scene complexity of `video_id` from its paired queries.
pub fn estimate(
    video_id: &str,
    corpus: &AnnotationCorpus,
    human: &HumanNouns,
    k_max: usize,
) -> Result<SceneComplexity, ComplexityError> {
    let queries = corpus.find_queries(video_id)?;
    estimate_from_queries(video_id, &queries, human, k_max)
}

pub fn estimate_from_queries(
    video_id: &str,
    queries: &[&QueryRecord],
    human: &HumanNouns,
    k_max: usize,
) -> Result<SceneComplexity, ComplexityError> {
    if queries.is_empty() {
        return Err(ComplexityError::NoQueries(video_id.to_string()));
    }
    let nouns = extract_nouns(queries, human);
    let dropped: Vec<String> = queries
        .iter()
        .filter(|q| !nouns.provenance.contains(&q.query_id))
        .map(|q| q.query_id.clone())
        .collect();
    let (raw_count, trace, degraded) = if nouns.is_empty() {
        log::warn!("video {video_id:?}: no query has scene nouns; using query count");
        (queries.len(), Vec::new(), true)
    } else {
        let (kept, trace) = remove_redundancy(&nouns);
        (kept.len(), trace, false)
    };
    Ok(SceneComplexity {
        alpha: raw_count.clamp(1, k_max.max(1)),
        raw_count,
        n_queries: queries.len(),
        trace,
        dropped,
        degraded,
    })
}

/// Diagnostic scene count from ground-truth spans: a query joins the first
/// group whose representative span overlaps it with IoU > 0.5.
pub fn gt_scene_count(queries: &[&QueryRecord]) -> Result<usize, ComplexityError> {
    let mut reps = Vec::new();
    for q in queries {
        let span = q
            .gt_span
            .ok_or_else(|| ComplexityError::MissingSpan(q.query_id.clone()))?;
        let joined = reps
            .iter()
            .any(|r| iou(*r, span).map(|x| x > 0.5).unwrap_or(false));
        if !joined {
            reps.push(span);
        }
    }
    Ok(reps.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Span;

    fn noun_set(sets: &[&[&str]]) -> NounSet {
        NounSet {
            elements: sets
                .iter()
                .map(|s| s.iter().map(|t| t.to_string()).collect())
                .collect(),
            provenance: (0..sets.len()).map(|i| format!("q{i}")).collect(),
        }
    }

    fn tagged(id: &str, words: &[(&str, PosTag)]) -> QueryRecord {
        QueryRecord {
            query_id: id.into(),
            video_id: "v".into(),
            tokens: words.iter().map(|(w, _)| w.to_string()).collect(),
            pos_tags: words.iter().map(|(_, t)| *t).collect(),
            gt_span: None,
        }
    }

    #[test]
    fn extracts_nouns_without_humans() {
        use PosTag::*;
        let q = tagged(
            "q",
            &[
                ("Person", Noun),
                ("eats", Verb),
                ("food", Noun),
                ("on", Other),
                ("a", Other),
                ("stair", Noun),
            ],
        );
        let ns = extract_nouns(&[&q], &HumanNouns::default());
        assert_eq!(ns.len(), 1);
        let expected: BTreeSet<String> = ["food", "stair"].iter().map(|s| s.to_string()).collect();
        assert_eq!(ns.elements[0], expected);
    }

    #[test]
    fn verb_only_query_contributes_nothing() {
        let q = tagged("q", &[("runs", PosTag::Verb), ("fast", PosTag::Other)]);
        assert!(extract_nouns(&[&q], &HumanNouns::default()).is_empty());
    }

    #[test]
    fn duplicate_nouns_collapse() {
        use PosTag::*;
        let q = tagged(
            "q",
            &[("the", Other), ("dog", Noun), ("chases", Verb), ("the", Other), ("ball", Noun), ("dog", Noun)],
        );
        let ns = extract_nouns(&[&q], &HumanNouns::default());
        assert_eq!(ns.elements[0].len(), 2);
    }

    #[test]
    fn chain_removes_middle() {
        let (kept, trace) = remove_redundancy(&noun_set(&[&["a", "b"], &["b", "c"], &["c", "d"]]));
        assert_eq!(kept.provenance, ["q0", "q2"]);
        assert_eq!(trace.len(), 1);
        assert_eq!(trace[0].degree, 2);
    }

    #[test]
    fn disjoint_input_unchanged() {
        let ns = noun_set(&[&["a"], &["b"], &["c", "d"]]);
        let (kept, trace) = remove_redundancy(&ns);
        assert_eq!(kept, ns);
        assert!(trace.is_empty());
    }

    #[test]
    fn tie_removes_latest() {
        let (kept, _) = remove_redundancy(&noun_set(&[&["x"], &["x"]]));
        assert_eq!(kept.provenance, ["q0"]);
    }

    #[test]
    fn gt_count_merges_overlapping_spans() {
        let mk = |id: &str, s: f64, e: f64| {
            let mut q = tagged(id, &[("x", PosTag::Noun)]);
            q.gt_span = Some(Span::new(s, e));
            q
        };
        let qs = [mk("a", 0.0, 10.0), mk("b", 1.0, 9.0), mk("c", 20.0, 30.0)];
        let refs: Vec<&QueryRecord> = qs.iter().collect();
        assert_eq!(gt_scene_count(&refs).unwrap(), 2);
        assert_eq!(gt_scene_count(&refs[..1]).unwrap(), 1);
        let pair = [mk("a", 0.0, 10.0), mk("b", 0.0, 8.0)];
        let refs: Vec<&QueryRecord> = pair.iter().collect();
        assert_eq!(gt_scene_count(&refs).unwrap(), 1);
        let bare = tagged("z", &[("x", PosTag::Noun)]);
        assert!(matches!(
            gt_scene_count(&[&bare]),
            Err(ComplexityError::MissingSpan(_))
        ));
    }

    #[test]
    fn fallback_uses_query_count() {
        let qs = [
            tagged("a", &[("runs", PosTag::Verb)]),
            tagged("b", &[("jumps", PosTag::Verb)]),
        ];
        let refs: Vec<&QueryRecord> = qs.iter().collect();
        let sc = estimate_from_queries("v", &refs, &HumanNouns::default(), 12).unwrap();
        assert!(sc.degraded);
        assert_eq!(sc.alpha, 2);
        assert_eq!(sc.dropped.len(), 2);
    }

    #[test]
    fn raw_count_is_clamped_to_k() {
        let qs: Vec<QueryRecord> = (0..15)
            .map(|i| tagged(&format!("q{i}"), &[(&format!("n{i}"), PosTag::Noun)]))
            .collect();
        let refs: Vec<&QueryRecord> = qs.iter().collect();
        let sc = estimate_from_queries("v", &refs, &HumanNouns::default(), DEFAULT_K).unwrap();
        assert_eq!(sc.raw_count, 15);
        assert_eq!(sc.alpha, 12);
    }

    #[test]
    fn human_noun_file_parses() {
        let h = HumanNouns::from_reader("person\n# comment\n\nMan\n".as_bytes()).unwrap();
        assert!(h.contains("man") && h.contains("person") && !h.contains("dog"));
    }
}
