//! Trains a small model on a synthetic corpus and compares adaptive proposals
//! with a fixed proposal count and the untrained model.
//!
//!     cargo run --release --example train_and_evaluate

use scanet::config::RunConfig;
use scanet::corpus::{generate_synthetic, SyntheticSpec};
use scanet::eval::ProposalStrategy;
use scanet::scene_complexity::HumanNouns;
use scanet::trainer::{evaluate, train, ModelParams, SceneSource};

fn main() -> anyhow::Result<()> {
    let spec = SyntheticSpec {
        n_videos: 60,
        ..SyntheticSpec::with_seed(5)
    };
    let (corpus, oracle) = generate_synthetic(&spec)?;
    let cfg = RunConfig::with_overrides(
        serde_json::json!({ "seed": 1, "stage1_steps": 3000, "stage2_steps": 500, "k": 5 }),
        &[],
    )?;
    let human = HumanNouns::default();
    let scenes = SceneSource::Oracle(oracle);

    let untrained = ModelParams::init(&cfg, &corpus)?;
    let outcome = train(&corpus, &cfg, &human)?;
    println!(
        "word reconstruction loss: {:.3} over the first 200 steps, {:.3} over the last 200",
        outcome.log.mean_mqr(1, 0..200),
        outcome.log.mean_mqr(1, 2800..3000)
    );

    for (label, params, strategy) in [
        ("untrained", &untrained, "adaptive"),
        ("trained, fixed:6", &outcome.params, "fixed:6"),
        ("trained, adaptive", &outcome.params, "adaptive"),
    ] {
        let strategy: ProposalStrategy = strategy.parse()?;
        let report = evaluate(params, &corpus, &cfg, &strategy, &scenes, &human)?;
        println!(
            "{label:<18} R@1,IoU=0.3 {:.3}  R@5,IoU=0.3 {:.3}  mIoU {:.3}",
            report.recall(1, 0.3),
            report.recall(5, 0.3),
            report.miou
        );
    }
    Ok(())
}
