use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use scanet::corpus::{generate_synthetic, parse_corpus, write_corpus, Span, SyntheticSpec};
use scanet::cpe::{hinge_value, predict_span, proposal_span};
use scanet::cpg::{base_mask, flatten_and_normalize, ProposalMask};
use scanet::eval::{recall_at, EvalReport, QueryOutcome};
use scanet::numkern::{gumbel_softmax, Graph, SelectionMode};
use scanet::scene_complexity::{estimate, remove_redundancy, HumanNouns, NounSet};

fn small_spec(seed: u64, n_videos: usize, redundancy: f64, duplicates: f64) -> SyntheticSpec {
    SyntheticSpec {
        n_videos,
        frames_per_video: 12,
        d: 4,
        redundancy_rate: redundancy,
        duplicate_scene_rate: duplicates,
        min_scene_frames: 2,
        ..SyntheticSpec::with_seed(seed)
    }
}

fn noun_set() -> impl Strategy<Value = NounSet> {
    let element = prop::collection::btree_set(0u8..8, 1..4);
    prop::collection::vec(element, 0..10).prop_map(|els| NounSet {
        provenance: (0..els.len()).map(|i| format!("q{i}")).collect(),
        elements: els
            .into_iter()
            .map(|e| e.into_iter().map(|n| format!("n{n}")).collect::<BTreeSet<_>>())
            .collect(),
    })
}

fn span_strategy() -> impl Strategy<Value = Span> {
    (0.0f64..30.0, 0.0f64..30.0).prop_map(|(a, b)| Span::new(a.min(b), a.max(b)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn corpus_survives_a_write_read_cycle(seed in any::<u64>(), n in 1usize..6, dup in 0.0f64..0.5) {
        let (corpus, _) = generate_synthetic(&small_spec(seed, n, 0.3, dup)).unwrap();
        let mut buf = Vec::new();
        write_corpus(&corpus, &mut buf).unwrap();
        prop_assert_eq!(parse_corpus(buf.as_slice()).unwrap(), corpus);
    }

    #[test]
    fn queries_partition_by_video(seed in any::<u64>(), n in 1usize..8) {
        let (corpus, _) = generate_synthetic(&small_spec(seed, n, 0.5, 0.0)).unwrap();
        let mut seen = Vec::new();
        for v in corpus.videos() {
            for q in corpus.find_queries(&v.video_id).unwrap() {
                prop_assert_eq!(&q.video_id, &v.video_id);
                seen.push(q.query_id.clone());
            }
        }
        let all: Vec<String> = corpus.queries().iter().map(|q| q.query_id.clone()).collect();
        let mut sorted_seen = seen.clone();
        sorted_seen.sort();
        sorted_seen.dedup();
        prop_assert_eq!(sorted_seen.len(), seen.len());
        let mut sorted_all = all;
        sorted_all.sort();
        prop_assert_eq!(sorted_seen, sorted_all);
    }

    #[test]
    fn planted_scenes_tile_each_video(seed in any::<u64>(), n in 1usize..8) {
        let (corpus, oracle) = generate_synthetic(&small_spec(seed, n, 0.0, 0.0)).unwrap();
        for (v, o) in corpus.videos().iter().zip(&oracle.videos) {
            prop_assert_eq!(o.spans.len(), o.scene_count);
            prop_assert_eq!(o.spans[0].start, 0.0);
            prop_assert!((o.spans.last().unwrap().end - v.duration).abs() < 1e-9);
            for w in o.spans.windows(2) {
                prop_assert!(w[0].start < w[0].end);
                prop_assert!((w[0].end - w[1].start).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn complexity_recovers_planted_scene_count(seed in any::<u64>(), redundancy in 0.0f64..1.0) {
        let (corpus, oracle) = generate_synthetic(&small_spec(seed, 4, redundancy, 0.0)).unwrap();
        for o in &oracle.videos {
            let sc = estimate(&o.video_id, &corpus, &HumanNouns::default(), 12).unwrap();
            prop_assert_eq!(sc.alpha, o.scene_count);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn redundancy_removal_is_idempotent(ns in noun_set()) {
        let (once, trace) = remove_redundancy(&ns);
        prop_assert!(once.is_disjoint());
        prop_assert_eq!(once.len() + trace.len(), ns.len());
        let (twice, second) = remove_redundancy(&once);
        prop_assert!(second.is_empty());
        prop_assert_eq!(twice, once);
    }

    #[test]
    fn ranking_ignores_a_common_loss_offset(
        geometry in prop::collection::vec((0.0f64..1.0, 0.05f64..1.0), 1..8),
        losses in prop::collection::vec((0.0f64..5.0, 0.0f64..5.0), 8),
        shift in -3.0f64..3.0,
    ) {
        let masks: Vec<ProposalMask> = geometry
            .iter()
            .map(|&(c, w)| ProposalMask { center: c, width: w, mask: vec![], start: 0, end: 0 })
            .collect();
        let refs: Vec<&ProposalMask> = masks.iter().collect();
        let mqr: Vec<f64> = losses[..masks.len()].iter().map(|l| l.0).collect();
        let mvr: Vec<f64> = losses[..masks.len()].iter().map(|l| l.1).collect();
        let shifted: Vec<f64> = mqr.iter().map(|x| x + shift).collect();
        prop_assert_eq!(predict_span(&refs, &mqr, &mvr, 30.0), predict_span(&refs, &shifted, &mvr, 30.0));
    }

    #[test]
    fn predicted_spans_stay_inside_the_video(c in 0.0f64..=1.0, w in 0.05f64..=1.0, duration in 1.0f64..100.0) {
        let s = proposal_span(c, w, duration);
        prop_assert!(0.0 <= s.start && s.start < s.end && s.end <= duration);
    }

    #[test]
    fn hinge_is_bounded(pos in 0.0f64..10.0, neg in 0.0f64..10.0, delta in 0.0f64..2.0) {
        let h = hinge_value(pos, neg, delta);
        prop_assert!(h >= 0.0 && h <= pos + delta);
    }

    #[test]
    fn flattened_masks_peak_at_one(c in 0.0f64..=1.0, w in 0.05f64..=1.0, n in 2usize..64) {
        let m = flatten_and_normalize(&base_mask(c, w, 8.0, n).unwrap(), c, w);
        let peak = m.mask.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(peak, 1.0);
        let inside = &m.mask[m.start..=m.end];
        prop_assert!(inside.iter().all(|&x| x == inside[0]));
    }

    #[test]
    fn gumbel_draws_replay_under_a_seed(logits in prop::collection::vec(-3.0f64..3.0, 2..12), seed in any::<u64>()) {
        let draw = || {
            let mut g = Graph::new();
            let l = g.constant_row(&logits);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = gumbel_softmax(&mut g, l, 1.0, SelectionMode::StraightThrough, &mut rng);
            (d.index, g.value(d.output).clone())
        };
        let (i, out) = draw();
        prop_assert_eq!((i, out.clone()), draw());
        prop_assert_eq!(out.sum(), 1.0);
        prop_assert_eq!(out[[0, i]], 1.0);
    }

    #[test]
    fn recall_is_monotone(
        cases in prop::collection::vec((span_strategy(), prop::collection::vec(span_strategy(), 1..7)), 1..20),
    ) {
        let gts: Vec<Span> = cases.iter().map(|c| c.0).collect();
        let preds: Vec<Vec<Span>> = cases.iter().map(|c| c.1.clone()).collect();
        let thresholds = [0.0, 0.1, 0.3, 0.5, 0.7, 0.9];
        for n in [1, 3, 5] {
            for t in thresholds.windows(2) {
                prop_assert!(recall_at(&preds, &gts, n, t[1]).unwrap() <= recall_at(&preds, &gts, n, t[0]).unwrap());
            }
        }
        for &m in &thresholds {
            prop_assert!(recall_at(&preds, &gts, 5, m).unwrap() >= recall_at(&preds, &gts, 1, m).unwrap());
        }
    }

    #[test]
    fn miou_is_recomputable_from_per_query_rows(
        cases in prop::collection::vec((span_strategy(), prop::collection::vec(span_strategy(), 1..4)), 1..12),
    ) {
        let outcomes: Vec<QueryOutcome> = cases
            .iter()
            .enumerate()
            .map(|(i, (gt, ranked))| QueryOutcome {
                query_id: format!("q{i}"),
                video_id: "v".into(),
                gt: *gt,
                ranked: ranked.clone(),
                scene_count: 1,
                proposal_count: ranked.len(),
            })
            .collect();
        let report = EvalReport::from_outcomes(outcomes).unwrap();
        let csv = report.per_query_csv();
        let col: Vec<f64> = csv
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(8).unwrap().parse().unwrap())
            .collect();
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        // rows carry six decimals
        prop_assert!((mean - report.miou).abs() <= 1e-6);
    }
}
