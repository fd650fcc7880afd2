use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{AnnotationCorpus, CorpusError, PosTag, QueryRecord, Span, VideoRecord, VOCAB_SIZE};

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
enum Line {
    Video(VideoLine),
    Query(QueryLine),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VideoLine {
    id: String,
    duration: f64,
    features: Vec<Vec<f32>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryLine {
    id: String,
    video_id: String,
    tokens: Vec<String>,
    pos: Vec<PosTag>,
    gt_span: Option<Span>,
}

fn io_err(path: &Path, source: std::io::Error) -> CorpusError {
    CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<AnnotationCorpus, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    parse_corpus(file)
}

/// Parses JSON Lines; blank lines are skipped. Line numbers in errors are 1-based.
pub fn parse_corpus<R: Read>(reader: R) -> Result<AnnotationCorpus, CorpusError> {
    let mut videos = Vec::new();
    let mut queries = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| CorpusError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Line = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        match rec {
            Line::Video(v) => videos.push(video_from_line(v, lineno)?),
            Line::Query(q) => queries.push(QueryRecord {
                query_id: q.id,
                video_id: q.video_id,
                tokens: q.tokens,
                pos_tags: q.pos,
                gt_span: q.gt_span,
            }),
        }
    }
    AnnotationCorpus::new(videos, queries, VOCAB_SIZE)
}

fn video_from_line(v: VideoLine, lineno: usize) -> Result<VideoRecord, CorpusError> {
    let rows = v.features.len();
    let cols = v.features.first().map_or(0, Vec::len);
    if let Some(bad) = v.features.iter().position(|r| r.len() != cols) {
        return Err(CorpusError::Parse {
            line: lineno,
            message: format!("feature row {bad} of video {:?} has inconsistent width", v.id),
        });
    }
    let flat: Vec<f32> = v.features.into_iter().flatten().collect();
    let features = Array2::from_shape_vec((rows, cols), flat).map_err(|e| CorpusError::Parse {
        line: lineno,
        message: e.to_string(),
    })?;
    Ok(VideoRecord {
        video_id: v.id,
        features,
        duration: v.duration,
    })
}

/// Writes videos first, then queries, one JSON object per line.
pub fn write_corpus<W: Write>(corpus: &AnnotationCorpus, writer: W) -> std::io::Result<()> {
    let mut w = BufWriter::new(writer);
    for v in corpus.videos() {
        let line = Line::Video(VideoLine {
            id: v.video_id.clone(),
            duration: v.duration,
            features: v.features.outer_iter().map(|r| r.to_vec()).collect(),
        });
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    for q in corpus.queries() {
        let line = Line::Query(QueryLine {
            id: q.query_id.clone(),
            video_id: q.video_id.clone(),
            tokens: q.tokens.clone(),
            pos: q.pos_tags.clone(),
            gt_span: q.gt_span,
        });
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn save_corpus(corpus: &AnnotationCorpus, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    write_corpus(corpus, file).map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_video_no_queries() {
        let text = r#"{"video": {"id": "v1", "duration": 3.0, "features": [[0.5, 1.0], [2.0, -1.0]]}}"#;
        let c = parse_corpus(text.as_bytes()).unwrap();
        assert_eq!(c.videos().len(), 1);
        assert!(c.queries().is_empty());
        assert_eq!(c.videos()[0].features[[1, 0]], 2.0);
    }

    #[test]
    fn unknown_video_is_integrity_error() {
        let text = concat!(
            r#"{"video": {"id": "v1", "duration": 3.0, "features": [[0.5], [2.0]]}}"#,
            "\n",
            r#"{"query": {"id": "q1", "video_id": "v9", "tokens": ["a"], "pos": ["NOUN"], "gt_span": null}}"#
        );
        assert!(matches!(
            parse_corpus(text.as_bytes()),
            Err(CorpusError::Integrity(_))
        ));
    }

    #[test]
    fn malformed_line_names_line_number() {
        let text = concat!(
            r#"{"video": {"id": "v1", "duration": 3.0, "features": [[0.5], [2.0]]}}"#,
            "\n\n",
            r#"{"query": {"id": "q1", "video_id": "v1", "tokens": ["a"], "pos": ["ADJ"], "gt_span": null}}"#
        );
        match parse_corpus(text.as_bytes()) {
            Err(CorpusError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn ragged_features_rejected() {
        let text = r#"{"video": {"id": "v1", "duration": 3.0, "features": [[0.5, 1.0], [2.0]]}}"#;
        assert!(matches!(
            parse_corpus(text.as_bytes()),
            Err(CorpusError::Parse { line: 1, .. })
        ));
    }
}
