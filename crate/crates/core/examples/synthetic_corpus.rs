//! Generates a small synthetic corpus and prints what was planted in each video.
//!
//!     cargo run --example synthetic_corpus

use scanet::corpus::{generate_synthetic, SyntheticSpec};

fn main() -> anyhow::Result<()> {
    let spec = SyntheticSpec {
        n_videos: 5,
        redundancy_rate: 0.5,
        ..SyntheticSpec::with_seed(11)
    };
    let (corpus, oracle) = generate_synthetic(&spec)?;
    println!("{} videos, {} queries, vocab {}", corpus.videos().len(), corpus.queries().len(), corpus.vocab().len());
    for o in &oracle.videos {
        println!("\n{} ({} scenes)", o.video_id, o.scene_count);
        for ((span, obj), act) in o.spans.iter().zip(&o.objects).zip(&o.actions) {
            println!("  [{:6.2}, {:6.2}]  {act} {obj}", span.start, span.end);
        }
        for q in corpus.find_queries(&o.video_id)? {
            println!("  query {}: {}", q.query_id, q.tokens.join(" "));
        }
    }
    Ok(())
}
