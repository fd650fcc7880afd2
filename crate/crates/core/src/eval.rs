//! Retrieval metrics: temporal IoU, R@n,IoU=m, mIoU and the scene/proposal
//! mismatch heatmap, plus the report files built from them.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::Serialize;

use crate::corpus::Span;

pub const RECALL_NS: [usize; 2] = [1, 5];
pub const IOU_THRESHOLDS: [f64; 4] = [0.1, 0.3, 0.5, 0.7];

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("inverted span [{0}, {1}]")]
    InvertedSpan(f64, f64),
    #[error("no queries to evaluate")]
    Empty,
    #[error("prediction and ground-truth counts differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("query {0} has no predictions")]
    NoPredictions(usize),
    #[error("bad strategy {0:?}: expected adaptive, fixed:N or window:W[+W..],S")]
    Strategy(String),
}

/// Temporal intersection over union; zero when the union is empty.
pub fn iou(a: Span, b: Span) -> Result<f64, EvalError> {
    for s in [a, b] {
        if s.start > s.end {
            return Err(EvalError::InvertedSpan(s.start, s.end));
        }
    }
    let inter = (a.end.min(b.end) - a.start.max(b.start)).max(0.0);
    let union = a.length() + b.length() - inter;
    if union <= 0.0 {
        return Ok(0.0);
    }
    Ok((inter / union).clamp(0.0, 1.0))
}

/// Fraction of queries whose best IoU among the top `n` predictions exceeds `m`.
pub fn recall_at(preds: &[Vec<Span>], gts: &[Span], n: usize, m: f64) -> Result<f64, EvalError> {
    if gts.is_empty() {
        return Err(EvalError::Empty);
    }
    if preds.len() != gts.len() {
        return Err(EvalError::LengthMismatch(preds.len(), gts.len()));
    }
    let mut hits = 0usize;
    for (i, (p, gt)) in preds.iter().zip(gts).enumerate() {
        if p.is_empty() {
            return Err(EvalError::NoPredictions(i));
        }
        let mut best = 0.0f64;
        for s in p.iter().take(n) {
            best = best.max(iou(*s, *gt)?);
        }
        if best > m {
            hits += 1;
        }
    }
    Ok(hits as f64 / gts.len() as f64)
}

pub fn recall_key(n: usize, m: f64) -> String {
    format!("R@{n},IoU={m}")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HeatmapBucket {
    pub scenes: usize,
    pub proposals: usize,
    pub mean_iou: f64,
    pub n: usize,
}

/// Mean top-1 IoU per `(scene_count, proposal_count)` bucket, sorted by key.
pub fn mismatch_heatmap(items: &[(usize, usize, f64)]) -> Vec<HeatmapBucket> {
    let mut acc: BTreeMap<(usize, usize), (f64, usize)> = BTreeMap::new();
    for &(s, p, v) in items {
        let e = acc.entry((s, p)).or_default();
        e.0 += v;
        e.1 += 1;
    }
    acc.into_iter()
        .map(|((scenes, proposals), (sum, n))| HeatmapBucket {
            scenes,
            proposals,
            mean_iou: sum / n as f64,
            n,
        })
        .collect()
}

pub fn heatmap_csv(buckets: &[HeatmapBucket]) -> String {
    let mut out = String::from("scenes,proposals,mean_iou,n\n");
    for b in buckets {
        let _ = writeln!(out, "{},{},{:.6},{}", b.scenes, b.proposals, b.mean_iou, b.n);
    }
    out
}

/// One evaluated query.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutcome {
    pub query_id: String,
    pub video_id: String,
    pub gt: Span,
    /// Predicted spans, best first.
    pub ranked: Vec<Span>,
    pub scene_count: usize,
    pub proposal_count: usize,
}

impl QueryOutcome {
    pub fn top1_iou(&self) -> f64 {
        self.ranked
            .first()
            .and_then(|s| iou(*s, self.gt).ok())
            .unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub outcomes: Vec<QueryOutcome>,
    pub recalls: BTreeMap<String, f64>,
    pub miou: f64,
    pub heatmap: Vec<HeatmapBucket>,
}

impl EvalReport {
    pub fn from_outcomes(outcomes: Vec<QueryOutcome>) -> Result<Self, EvalError> {
        if outcomes.is_empty() {
            return Err(EvalError::Empty);
        }
        let preds: Vec<Vec<Span>> = outcomes.iter().map(|o| o.ranked.clone()).collect();
        let gts: Vec<Span> = outcomes.iter().map(|o| o.gt).collect();
        let mut recalls = BTreeMap::new();
        for n in RECALL_NS {
            for m in IOU_THRESHOLDS {
                recalls.insert(recall_key(n, m), recall_at(&preds, &gts, n, m)?);
            }
        }
        let top1: Vec<f64> = outcomes.iter().map(QueryOutcome::top1_iou).collect();
        let miou = top1.iter().sum::<f64>() / top1.len() as f64;
        let items: Vec<(usize, usize, f64)> = outcomes
            .iter()
            .zip(&top1)
            .map(|(o, &v)| (o.scene_count, o.proposal_count, v))
            .collect();
        Ok(Self {
            heatmap: mismatch_heatmap(&items),
            outcomes,
            recalls,
            miou,
        })
    }

    pub fn recall(&self, n: usize, m: f64) -> f64 {
        self.recalls.get(&recall_key(n, m)).copied().unwrap_or(f64::NAN)
    }

    pub fn per_query_csv(&self) -> String {
        let mut out = String::from(
            "query_id,video_id,gt_start,gt_end,scenes,proposals,top1_start,top1_end,top1_iou,top5_best_iou\n",
        );
        for o in &self.outcomes {
            let top = o.ranked.first().copied().unwrap_or(Span::new(0.0, 0.0));
            let best5 = o
                .ranked
                .iter()
                .take(5)
                .filter_map(|s| iou(*s, o.gt).ok())
                .fold(0.0, f64::max);
            let _ = writeln!(
                out,
                "{},{},{:.6},{:.6},{},{},{:.6},{:.6},{:.6},{:.6}",
                o.query_id,
                o.video_id,
                o.gt.start,
                o.gt.end,
                o.scene_count,
                o.proposal_count,
                top.start,
                top.end,
                o.top1_iou(),
                best5
            );
        }
        out
    }

    pub fn aggregate_json(&self, extra: &BTreeMap<String, String>) -> String {
        #[derive(Serialize)]
        struct Aggregate<'a> {
            n_queries: usize,
            miou: String,
            recalls: BTreeMap<&'a str, String>,
            #[serde(flatten)]
            extra: &'a BTreeMap<String, String>,
        }
        let agg = Aggregate {
            n_queries: self.outcomes.len(),
            miou: format!("{:.6}", self.miou),
            recalls: self
                .recalls
                .iter()
                .map(|(k, v)| (k.as_str(), format!("{v:.6}")))
                .collect(),
            extra,
        };
        let mut s = serde_json::to_string_pretty(&agg).expect("aggregate serializes");
        s.push('\n');
        s
    }

    pub fn heatmap_csv(&self) -> String {
        heatmap_csv(&self.heatmap)
    }
}

/// Where candidate spans come from at evaluation time.
#[derive(Debug, Clone, PartialEq)]
pub enum ProposalStrategy {
    /// Learned, complexity-adaptive proposals.
    Adaptive,
    /// `n` equal-width proposals tiling the video.
    Fixed(usize),
    /// Sliding windows of the given widths (frames) at a shared stride (frames).
    Window { widths: Vec<usize>, stride: usize },
}

impl FromStr for ProposalStrategy {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || EvalError::Strategy(s.to_string());
        if s == "adaptive" {
            return Ok(Self::Adaptive);
        }
        if let Some(n) = s.strip_prefix("fixed:") {
            let n: usize = n.parse().map_err(|_| bad())?;
            return if n == 0 { Err(bad()) } else { Ok(Self::Fixed(n)) };
        }
        if let Some(rest) = s.strip_prefix("window:") {
            let (widths, stride) = rest.split_once(',').ok_or_else(bad)?;
            let widths: Vec<usize> = widths
                .split('+')
                .map(|w| w.parse::<usize>().map_err(|_| bad()))
                .collect::<Result<_, _>>()?;
            let stride: usize = stride.parse().map_err(|_| bad())?;
            if stride == 0 || widths.is_empty() || widths.contains(&0) {
                return Err(bad());
            }
            return Ok(Self::Window { widths, stride });
        }
        Err(bad())
    }
}

impl std::fmt::Display for ProposalStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Adaptive => write!(f, "adaptive"),
            Self::Fixed(n) => write!(f, "fixed:{n}"),
            Self::Window { widths, stride } => {
                let w: Vec<String> = widths.iter().map(|w| w.to_string()).collect();
                write!(f, "window:{},{stride}", w.join("+"))
            }
        }
    }
}

impl ProposalStrategy {
    /// Normalized `(center, width)` pairs for non-learned strategies; `None` for `Adaptive`.
    pub fn fixed_proposals(&self, n_frames: usize) -> Option<Vec<(f64, f64)>> {
        match self {
            Self::Adaptive => None,
            Self::Fixed(n) => Some(
                (0..*n)
                    .map(|j| ((j as f64 + 0.5) / *n as f64, 1.0 / *n as f64))
                    .collect(),
            ),
            Self::Window { widths, stride } => {
                let nf = n_frames as f64;
                let mut out = Vec::new();
                for &w in widths {
                    if w >= n_frames {
                        out.push((0.5, 1.0));
                        continue;
                    }
                    let mut start = 0;
                    while start + w <= n_frames {
                        out.push(((start as f64 + w as f64 / 2.0) / nf, w as f64 / nf));
                        start += stride;
                    }
                }
                out.dedup();
                Some(out)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sp(a: f64, b: f64) -> Span {
        Span::new(a, b)
    }

    #[test]
    fn iou_cases() {
        assert_eq!(iou(sp(1.0, 4.0), sp(1.0, 4.0)).unwrap(), 1.0);
        assert_eq!(iou(sp(0.0, 1.0), sp(2.0, 3.0)).unwrap(), 0.0);
        assert!((iou(sp(2.0, 6.0), sp(4.0, 8.0)).unwrap() - 2.0 / 6.0).abs() < 1e-12);
        assert_eq!(iou(sp(1.0, 1.0), sp(1.0, 1.0)).unwrap(), 0.0);
        assert_eq!(
            iou(sp(3.0, 1.0), sp(0.0, 1.0)),
            Err(EvalError::InvertedSpan(3.0, 1.0))
        );
    }

    #[test]
    fn recall_counts_strictly_above_threshold() {
        // top-1 IoUs 0.6, 0.4, 0.8, 0.2 against gt [0, 10]
        let gts = vec![sp(0.0, 10.0); 4];
        let preds = vec![
            vec![sp(0.0, 6.0)],
            vec![sp(0.0, 4.0)],
            vec![sp(0.0, 8.0)],
            vec![sp(0.0, 2.0)],
        ];
        assert!((recall_at(&preds, &gts, 1, 0.5).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(recall_at(&preds, &gts, 1, 0.6).unwrap(), 0.25);
        assert_eq!(recall_at(&preds, &gts, 1, 1.0).unwrap(), 0.0);
        assert_eq!(recall_at(&[], &[], 1, 0.5), Err(EvalError::Empty));
    }

    #[test]
    fn exact_predictions_recall_one() {
        let gts = vec![sp(1.0, 3.0), sp(5.0, 9.0)];
        let preds: Vec<Vec<Span>> = gts.iter().map(|g| vec![*g]).collect();
        for n in RECALL_NS {
            for m in IOU_THRESHOLDS {
                assert_eq!(recall_at(&preds, &gts, n, m).unwrap(), 1.0);
            }
        }
    }

    #[test]
    fn heatmap_buckets() {
        let h = mismatch_heatmap(&[(2, 5, 0.2), (2, 5, 0.6), (1, 7, 0.9)]);
        assert_eq!(h.len(), 2);
        assert_eq!((h[0].scenes, h[0].proposals, h[0].n), (1, 7, 1));
        assert!((h[1].mean_iou - 0.4).abs() < 1e-12);
        assert_eq!(mismatch_heatmap(&[(3, 6, 0.25)])[0].mean_iou, 0.25);
    }

    #[test]
    fn strategy_parsing() {
        assert_eq!("adaptive".parse::<ProposalStrategy>().unwrap(), ProposalStrategy::Adaptive);
        assert_eq!("fixed:6".parse::<ProposalStrategy>().unwrap(), ProposalStrategy::Fixed(6));
        let w: ProposalStrategy = "window:20+40,5".parse().unwrap();
        assert_eq!(w.to_string(), "window:20+40,5");
        assert!("fixed:0".parse::<ProposalStrategy>().is_err());
        assert!("window:8".parse::<ProposalStrategy>().is_err());
        assert!("random".parse::<ProposalStrategy>().is_err());
    }

    #[test]
    fn window_proposals_tile_frames() {
        let w = ProposalStrategy::Window {
            widths: vec![8, 64],
            stride: 8,
        };
        let props = w.fixed_proposals(32).unwrap();
        assert_eq!(props.len(), 5);
        assert_eq!(props[0], (4.0 / 32.0, 0.25));
        assert_eq!(props[4], (0.5, 1.0));
        let f = ProposalStrategy::Fixed(4).fixed_proposals(32).unwrap();
        assert_eq!(f, vec![(0.125, 0.25), (0.375, 0.25), (0.625, 0.25), (0.875, 0.25)]);
    }
}
