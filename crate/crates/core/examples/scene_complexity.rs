//! Estimates scene complexity from paired queries and shows the redundancy-removal trace.
//!
//!     cargo run --example scene_complexity

use scanet::corpus::{AnnotationCorpus, PosTag, QueryRecord, Span, VideoRecord, VOCAB_SIZE};
use scanet::scene_complexity::{estimate, HumanNouns};

fn query(id: &str, words: &[(&str, PosTag)]) -> QueryRecord {
    QueryRecord {
        query_id: id.into(),
        video_id: "kitchen".into(),
        tokens: words.iter().map(|w| w.0.to_string()).collect(),
        pos_tags: words.iter().map(|w| w.1).collect(),
        gt_span: Some(Span::new(0.0, 5.0)),
    }
}

fn main() -> anyhow::Result<()> {
    use PosTag::{Noun as N, Other as O, Verb as V};
    let video = VideoRecord {
        video_id: "kitchen".into(),
        features: ndarray::Array2::zeros((8, 4)),
        duration: 30.0,
    };
    let queries = vec![
        query("a", &[("person", N), ("opens", V), ("the", O), ("fridge", N)]),
        query("b", &[("person", N), ("takes", V), ("milk", N), ("from", O), ("fridge", N)]),
        query("c", &[("person", N), ("pours", V), ("milk", N)]),
        query("d", &[("person", N), ("washes", V), ("a", O), ("cup", N)]),
    ];
    let corpus = AnnotationCorpus::new(vec![video], queries, VOCAB_SIZE)?;
    let sc = estimate("kitchen", &corpus, &HumanNouns::default(), 12)?;
    for step in &sc.trace {
        println!("removed query {} {:?} (overlapped {} others)", step.query_id, step.nouns, step.degree);
    }
    println!("scene complexity: {}", sc.alpha);
    Ok(())
}
