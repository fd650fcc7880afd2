//! Complexity-adaptive proposal enhancement: masked query and masked video
//! reconstruction through each proposal, the two contrastive hinges,
//! complexity-calibrated loss weighting, and span prediction.

use ndarray::Array2;
use rand::Rng;

use crate::corpus::{PosTag, Span};
use crate::cpg::{ProposalMask, ProposalSet};
use crate::numkern::{
    multi_head_attention, Graph, KernelError, LayerNormParams, Linear, ParamStore, Var,
};
use crate::scene_complexity::HumanNouns;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CpeError {
    #[error("masked query has no target positions")]
    NoTargets,
    #[error("masked proposal has no masked frames")]
    NoMaskedFrames,
    #[error("target position {0} outside a query of length {1}")]
    TargetPosition(usize, usize),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Loss hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSettings {
    pub delta1: f64,
    pub delta2: f64,
    pub gamma: f64,
    pub mvr_rate: f64,
    pub mask_token_id: usize,
}

/// Token ids with some positions replaced by the mask id.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedQuery {
    pub ids: Vec<usize>,
    /// `(position, original id)` of each masked token.
    pub targets: Vec<(usize, usize)>,
}

impl MaskedQuery {
    pub fn new(ids: &[usize], positions: &[usize], mask_id: usize) -> Result<Self, CpeError> {
        if positions.is_empty() {
            return Err(CpeError::NoTargets);
        }
        let mut masked = ids.to_vec();
        let mut targets = Vec::with_capacity(positions.len());
        for &p in positions {
            let id = *ids.get(p).ok_or(CpeError::TargetPosition(p, ids.len()))?;
            targets.push((p, id));
            masked[p] = mask_id;
        }
        Ok(Self { ids: masked, targets })
    }
}

/// Positions eligible for masking: nouns and verbs that are not human nouns,
/// then any noun or verb, then any token.
pub fn mqr_candidates(tokens: &[String], tags: &[PosTag], human: &HumanNouns) -> Vec<usize> {
    let content = |i: &usize| matches!(tags[*i], PosTag::Noun | PosTag::Verb);
    let strict: Vec<usize> = (0..tokens.len())
        .filter(|i| content(i) && !(tags[*i] == PosTag::Noun && human.contains(&tokens[*i])))
        .collect();
    if !strict.is_empty() {
        return strict;
    }
    let loose: Vec<usize> = (0..tokens.len()).filter(content).collect();
    if !loose.is_empty() {
        return loose;
    }
    (0..tokens.len()).collect()
}

/// Frames of a proposal hidden from the video regressor, with their targets.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedProposal {
    pub positions: Vec<usize>,
    /// Original features at `positions`, one row each.
    pub targets: Array2<f64>,
}

impl MaskedProposal {
    pub fn new(positions: Vec<usize>, features: &Array2<f64>) -> Result<Self, CpeError> {
        if positions.is_empty() {
            return Err(CpeError::NoMaskedFrames);
        }
        let targets = features.select(ndarray::Axis(0), &positions);
        Ok(Self { positions, targets })
    }
}

/// Each frame in `start..=end` is masked with probability `rate`; at least one always is.
pub fn sample_masked_frames<R: Rng>(start: usize, end: usize, rate: f64, rng: &mut R) -> Vec<usize> {
    let mut picked: Vec<usize> = (start..=end).filter(|_| rng.random_bool(rate)).collect();
    if picked.is_empty() {
        picked.push(rng.random_range(start..=end));
    }
    picked
}

/// One attention layer that reads out a single row from a context of text rows
/// followed by (weighted) video rows. Used both as the word decoder and as the
/// frame regressor.
///
/// Video rows are weighted after projection, `m ∘ (v W) + b`, which equals
/// projecting the weighted rows `(m ∘ v) W + b`. Context rows are not
/// layer-normalized: normalization would undo the mask weighting.
#[derive(Debug, Clone)]
pub struct ReadoutBlock {
    pub n_heads: usize,
    pub dim: usize,
    pub ln_query: LayerNormParams,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub ln_ffn: LayerNormParams,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
    pub head: Linear,
}

/// Projections shared by every read-out over the same text and video.
#[derive(Debug, Clone, Copy)]
pub struct ReadoutContext {
    text_k: Var,
    text_v: Var,
    video_k: Var,
    video_v: Var,
}

impl ReadoutBlock {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        n_heads: usize,
        ffn_hidden: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Result<Self, KernelError> {
        if n_heads == 0 || !dim.is_multiple_of(n_heads) {
            return Err(KernelError::Dimension(format!(
                "model dim {dim} not divisible by {n_heads} heads"
            )));
        }
        Ok(Self {
            n_heads,
            dim,
            ln_query: LayerNormParams::new(store, &format!("{name}.ln_query"), dim),
            query: Linear::new(store, &format!("{name}.query"), dim, dim, rng),
            key: Linear::new(store, &format!("{name}.key"), dim, dim, rng),
            value: Linear::new(store, &format!("{name}.value"), dim, dim, rng),
            output: Linear::new(store, &format!("{name}.output"), dim, dim, rng),
            ln_ffn: LayerNormParams::new(store, &format!("{name}.ln_ffn"), dim),
            ffn_in: Linear::new(store, &format!("{name}.ffn_in"), dim, ffn_hidden, rng),
            ffn_out: Linear::new(store, &format!("{name}.ffn_out"), ffn_hidden, dim, rng),
            head: Linear::new(store, &format!("{name}.head"), dim, out_dim, rng),
        })
    }

    pub fn context(&self, g: &mut Graph, store: &ParamStore, text: Var, video: Var) -> ReadoutContext {
        ReadoutContext {
            text_k: self.key.forward(g, store, text),
            text_v: self.value.forward(g, store, text),
            video_k: self.key.project(g, store, video),
            video_v: self.value.project(g, store, video),
        }
    }

    /// Output-head row for `query_row` (`1 × d`), with video rows weighted by
    /// `weights` (`1 × N`) when given.
    pub fn readout(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        ctx: &ReadoutContext,
        query_row: Var,
        weights: Option<Var>,
    ) -> Var {
        let (vk, vv) = match weights {
            Some(w) => (g.row_scale(ctx.video_k, w), g.row_scale(ctx.video_v, w)),
            None => (ctx.video_k, ctx.video_v),
        };
        let vk = self.key.add_bias(g, store, vk);
        let vv = self.value.add_bias(g, store, vv);
        let keys = g.concat_rows(&[ctx.text_k, vk]);
        let values = g.concat_rows(&[ctx.text_v, vv]);
        let normed = self.ln_query.forward(g, store, query_row);
        let q = self.query.forward(g, store, normed);
        let attended = multi_head_attention(g, q, keys, values, self.n_heads);
        let projected = self.output.forward(g, store, attended);
        let h = g.add(query_row, projected);
        let normed = self.ln_ffn.forward(g, store, h);
        let hidden = self.ffn_in.forward(g, store, normed);
        let hidden = g.gelu(hidden);
        let out = self.ffn_out.forward(g, store, hidden);
        let h = g.add(h, out);
        self.head.forward(g, store, h)
    }
}

/// Mean cross-entropy over the masked targets, reading out each target row of `text`.
pub fn reconstruct_words(
    g: &mut Graph,
    store: &ParamStore,
    decoder: &ReadoutBlock,
    ctx: &ReadoutContext,
    text: Var,
    q: &MaskedQuery,
    weights: Option<Var>,
) -> Result<Var, CpeError> {
    if q.targets.is_empty() {
        return Err(CpeError::NoTargets);
    }
    let mut losses = Vec::with_capacity(q.targets.len());
    for &(pos, id) in &q.targets {
        let row = g.slice_rows(text, pos, 1);
        let logits = decoder.readout(g, store, ctx, row, weights);
        losses.push(g.cross_entropy(logits, id));
    }
    Ok(mean_of(g, &losses))
}

fn mean_of(g: &mut Graph, xs: &[Var]) -> Var {
    if xs.len() == 1 {
        return xs[0];
    }
    let row = g.concat_cols(xs);
    g.mean(row)
}

/// Average of per-proposal losses over the proposals in use. With a learned
/// count this is `Σ_p a_p l_p / p_alpha`, which keeps the count selector on the
/// gradient path; otherwise a plain mean.
pub fn aggregate(g: &mut Graph, per_proposal: &[Var], set: &ProposalSet) -> Var {
    match &set.count {
        Some(count) => {
            let row = g.concat_cols(per_proposal);
            let weighted = g.mul(row, count.active);
            let total = g.sum(weighted);
            g.div(total, count.p_alpha_var)
        }
        None => mean_of(g, per_proposal),
    }
}

/// Masked query reconstruction through every slot of `set`.
/// Returns the aggregated loss and the per-slot losses.
pub fn mqr_loss(
    g: &mut Graph,
    store: &ParamStore,
    decoder: &ReadoutBlock,
    ctx: &ReadoutContext,
    text: Var,
    q: &MaskedQuery,
    set: &ProposalSet,
) -> Result<(Var, Vec<Var>), CpeError> {
    let per = set
        .slots
        .iter()
        .map(|p| reconstruct_words(g, store, decoder, ctx, text, q, Some(p.mask_var)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((aggregate(g, &per, set), per))
}

/// Squared L2 between the regressor's prediction and each masked frame, averaged over frames.
pub fn reconstruct_frames(
    g: &mut Graph,
    store: &ParamStore,
    regressor: &ReadoutBlock,
    ctx: &ReadoutContext,
    mask: Var,
    masked: &MaskedProposal,
) -> Result<Var, CpeError> {
    let m = masked.positions.len();
    if m == 0 {
        return Err(CpeError::NoMaskedFrames);
    }
    let (_, n) = g.shape(mask);
    let mut keep = vec![1.0; n];
    for &p in &masked.positions {
        keep[p] = 0.0;
    }
    let keep = g.constant_row(&keep);
    let weights = g.mul(mask, keep);
    // a masked frame row is all zeros, so every masked position reads out the same row
    let blank = g.constant(Array2::zeros((1, regressor.dim)));
    let pred = regressor.readout(g, store, ctx, blank, Some(weights));
    let ones = g.constant(Array2::ones((m, 1)));
    let tiled = g.matmul(ones, pred);
    let targets = g.constant(masked.targets.clone());
    let diff = g.sub(targets, tiled);
    let sq = g.mul(diff, diff);
    let total = g.sum(sq);
    Ok(g.scale(total, 1.0 / m as f64))
}

/// Masked video reconstruction through every slot; `masked[p]` lists the frames hidden in slot `p`.
pub fn mvr_loss(
    g: &mut Graph,
    store: &ParamStore,
    regressor: &ReadoutBlock,
    ctx: &ReadoutContext,
    set: &ProposalSet,
    masked: &[MaskedProposal],
) -> Result<(Var, Vec<Var>), CpeError> {
    let per = set
        .slots
        .iter()
        .zip(masked)
        .map(|(p, mp)| reconstruct_frames(g, store, regressor, ctx, p.mask_var, mp))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((aggregate(g, &per, set), per))
}

/// `max(positive - negative + delta, 0)`.
pub fn hinge_value(positive: f64, negative: f64, delta: f64) -> f64 {
    (positive - negative + delta).max(0.0)
}

pub fn hinge_node(g: &mut Graph, positive: Var, negative: Var, delta: f64) -> Var {
    let gap = g.sub(positive, negative);
    let shifted = g.add_scalar(gap, delta);
    g.hinge(shifted)
}

/// Video-level hinge: reconstruction through each proposal's complement `1 - m`
/// should be worse than through the proposal by `delta1`.
#[allow(clippy::too_many_arguments)]
pub fn video_contrastive(
    g: &mut Graph,
    store: &ParamStore,
    decoder: &ReadoutBlock,
    ctx: &ReadoutContext,
    text: Var,
    q: &MaskedQuery,
    set: &ProposalSet,
    l_mqr: Var,
    delta1: f64,
) -> Result<(Var, Var), CpeError> {
    let per = set
        .slots
        .iter()
        .map(|p| {
            let complement = g.one_minus(p.mask_var);
            reconstruct_words(g, store, decoder, ctx, text, q, Some(complement))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let l_star = aggregate(g, &per, set);
    Ok((hinge_node(g, l_mqr, l_star, delta1), l_star))
}

/// Corpus-level hinge against the mean reconstruction loss over whole negative
/// videos. `None` when there are no negatives.
pub fn corpus_contrastive(g: &mut Graph, l_mqr: Var, negative_losses: &[Var], delta2: f64) -> Option<(Var, Var)> {
    if negative_losses.is_empty() {
        log::warn!("no hard negatives for this query; corpus-level loss is zero");
        return None;
    }
    let l_dagger = mean_of(g, negative_losses);
    Some((hinge_node(g, l_mqr, l_dagger, delta2), l_dagger))
}

/// `gamma / (1 + e^{-alpha})`.
pub fn calibration_weight(alpha: f64, gamma: f64) -> f64 {
    gamma / (1.0 + (-alpha).exp())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossReport {
    pub l_mqr: f64,
    pub l_mvr: f64,
    pub l_vid: f64,
    pub l_cps: f64,
    pub per_proposal_mqr: Vec<f64>,
    pub per_proposal_mvr: Vec<f64>,
    pub weight: f64,
    pub total: f64,
    pub p_alpha: usize,
}

impl LossReport {
    pub fn unweighted_sum(&self) -> f64 {
        self.l_mqr + self.l_mvr + self.l_vid + self.l_cps
    }
}

pub fn calibrated_total(report: &LossReport, alpha: f64, gamma: f64) -> f64 {
    calibration_weight(alpha, gamma) * report.unweighted_sum()
}

/// Span in seconds covered by a proposal.
pub fn proposal_span(center: f64, width: f64, duration: f64) -> Span {
    let st = (center - width / 2.0).clamp(0.0, 1.0);
    let ed = (center + width / 2.0).clamp(0.0, 1.0);
    Span::new(st * duration, ed * duration)
}

/// Proposals ranked by `l_mqr + l_mvr`, lowest first; ties keep slot order.
pub fn predict_span(masks: &[&ProposalMask], l_mqr: &[f64], l_mvr: &[f64], duration: f64) -> Vec<Span> {
    let mut order: Vec<usize> = (0..masks.len()).collect();
    order.sort_by(|&a, &b| (l_mqr[a] + l_mvr[a]).total_cmp(&(l_mqr[b] + l_mvr[b])));
    order
        .into_iter()
        .map(|i| proposal_span(masks[i].center, masks[i].width, duration))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkern::{grad_check, ParamId, FD_STEP};
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn pm(c: f64, w: f64) -> ProposalMask {
        ProposalMask {
            center: c,
            width: w,
            mask: vec![],
            start: 0,
            end: 0,
        }
    }

    #[test]
    fn masked_query_replaces_targets() {
        let q = MaskedQuery::new(&[5, 6, 7], &[1], 1).unwrap();
        assert_eq!(q.ids, vec![5, 1, 7]);
        assert_eq!(q.targets, vec![(1, 6)]);
        assert_eq!(MaskedQuery::new(&[5], &[], 1), Err(CpeError::NoTargets));
        assert_eq!(MaskedQuery::new(&[5], &[3], 1), Err(CpeError::TargetPosition(3, 1)));
    }

    #[test]
    fn candidates_skip_human_nouns() {
        let toks: Vec<String> = ["person", "opens", "the", "door"].iter().map(|s| s.to_string()).collect();
        let tags = [PosTag::Noun, PosTag::Verb, PosTag::Other, PosTag::Noun];
        let human = HumanNouns::default();
        assert_eq!(mqr_candidates(&toks, &tags, &human), vec![1, 3]);
        let only_human = [PosTag::Noun, PosTag::Other, PosTag::Other, PosTag::Other];
        assert_eq!(mqr_candidates(&toks, &only_human, &human), vec![0]);
        assert_eq!(mqr_candidates(&toks, &[PosTag::Other; 4], &human), vec![0, 1, 2, 3]);
    }

    #[test]
    fn masked_frames_stay_in_region() {
        let mut r = rng(2);
        for _ in 0..500 {
            let f = sample_masked_frames(3, 12, 0.1, &mut r);
            assert!(!f.is_empty());
            assert!(f.iter().all(|&i| (3..=12).contains(&i)));
        }
    }

    #[test]
    fn frame_loss_hand_value() {
        // with a zero head the prediction is exactly zero
        let mut store = ParamStore::new();
        let reg = ReadoutBlock::new(&mut store, "reg", 4, 2, 8, 2, &mut rng(0)).unwrap();
        store.value_mut(reg.head.weight).fill(0.0);
        let mut g = Graph::new();
        let text = g.constant(Array2::from_elem((2, 4), 0.3));
        let video = g.constant(Array2::from_elem((3, 4), -0.2));
        let ctx = reg.context(&mut g, &store, text, video);
        let mask = g.constant_row(&[1.0, 1.0, 1.0]);
        let feats = array![[0.0, 0.0], [1.0, 2.0], [0.0, 0.0]];
        let masked = MaskedProposal::new(vec![1], &feats).unwrap();
        let l = reconstruct_frames(&mut g, &store, &reg, &ctx, mask, &masked).unwrap();
        assert!((g.scalar(l) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn weighted_projection_matches_weighted_input() {
        let mut store = ParamStore::new();
        let dec = ReadoutBlock::new(&mut store, "dec", 4, 2, 8, 6, &mut rng(1)).unwrap();
        let v = Array2::from_shape_fn((5, 4), |(i, j)| ((i + 2 * j) as f64).sin());
        let m = [1.0, 0.25, 0.0, 0.7, 1.0];
        let text = Array2::from_shape_fn((3, 4), |(i, j)| ((3 * i + j) as f64).cos());

        let mut g = Graph::new();
        let t = g.constant(text.clone());
        let vv = g.constant(v.clone());
        let ctx = dec.context(&mut g, &store, t, vv);
        let w = g.constant_row(&m);
        let row = g.slice_rows(t, 1, 1);
        let a = dec.readout(&mut g, &store, &ctx, row, Some(w));

        let mut scaled = v.clone();
        for (i, mut r) in scaled.rows_mut().into_iter().enumerate() {
            r.mapv_inplace(|x| x * m[i]);
        }
        let mut g2 = Graph::new();
        let t2 = g2.constant(text);
        let sv = g2.constant(scaled);
        let ctx2 = dec.context(&mut g2, &store, t2, sv);
        let row2 = g2.slice_rows(t2, 1, 1);
        let b = dec.readout(&mut g2, &store, &ctx2, row2, None);
        for (x, y) in g.value(a).iter().zip(g2.value(b).iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn hinge_arithmetic() {
        assert_eq!(hinge_value(1.0, 1.0, 0.1), 0.1);
        assert_eq!(hinge_value(1.0, 1.2, 0.1), 0.0);
        assert!((hinge_value(1.0, 0.7, 0.1) - 0.4).abs() < 1e-12);
        assert!((hinge_value(2.0, 1.8, 0.5) - 0.7).abs() < 1e-12);
        assert_eq!(hinge_value(2.0, 2.0, 0.5), 0.5);
    }

    #[test]
    fn inactive_hinge_has_zero_gradient() {
        let mut store = ParamStore::new();
        let p = store.add("p", array![[1.0]]);
        let n = store.add("n", array![[3.0]]);
        let mut g = Graph::new();
        let pv = g.param(&store, p);
        let nv = g.param(&store, n);
        let h = hinge_node(&mut g, pv, nv, 0.1);
        assert_eq!(g.scalar(h), 0.0);
        let grads = g.backward(h).unwrap();
        assert_eq!(grads.get(pv).unwrap()[[0, 0]], 0.0);
        assert_eq!(grads.get(nv).unwrap()[[0, 0]], 0.0);
    }

    #[test]
    fn calibration_weight_values() {
        let w = calibration_weight(2.0, 0.5);
        assert!((w - 0.5 / (1.0 + (-2f64).exp())).abs() < 1e-15);
        assert!((w - 0.4404).abs() < 1e-4);
        assert!((calibration_weight(60.0, 0.5) - 0.5).abs() < 1e-12);
        let r = LossReport {
            l_mqr: 0.4,
            l_mvr: 0.3,
            l_vid: 0.2,
            l_cps: 0.1,
            ..Default::default()
        };
        assert!((calibrated_total(&r, 2.0, 0.5) - w).abs() < 1e-12);
    }

    #[test]
    fn span_formula() {
        let s = proposal_span(0.5, 0.5, 30.0);
        assert_eq!((s.start, s.end), (7.5, 22.5));
        let s = proposal_span(0.5, 1.0, 30.0);
        assert_eq!((s.start, s.end), (0.0, 30.0));
        let s = proposal_span(0.1, 0.4, 30.0);
        assert_eq!(s.start, 0.0);
        assert!((s.end - 9.0).abs() < 1e-12);
    }

    #[test]
    fn ranking_orders_by_summed_loss() {
        let masks = [pm(0.2, 0.2), pm(0.5, 0.2), pm(0.8, 0.2)];
        let refs: Vec<&ProposalMask> = masks.iter().collect();
        let spans = predict_span(&refs, &[1.0, 0.2, 0.5], &[0.1, 0.1, 0.1], 10.0);
        let centers: Vec<f64> = spans.iter().map(|s| (s.start + s.end) / 20.0).collect();
        assert!((centers[0] - 0.5).abs() < 1e-12 && (centers[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn decoder_word_loss_grad_check() {
        let mut r = rng(4);
        let mut store = ParamStore::new();
        let dec = ReadoutBlock::new(&mut store, "dec", 4, 2, 6, 5, &mut r).unwrap();
        let text = store.normal("text", 3, 4, 1.0, &mut r);
        let video = store.normal("video", 4, 4, 1.0, &mut r);
        let mask = store.add("mask", array![[0.9, 0.2, 1.0, 0.4]]);
        let q = MaskedQuery::new(&[2, 3, 4], &[1], 1).unwrap();
        let ids: Vec<ParamId> = store.ids().collect();
        let report = grad_check(&store, &ids, FD_STEP, |g, s| {
            let t = g.param(s, text);
            let v = g.param(s, video);
            let m = g.param(s, mask);
            let ctx = dec.context(g, s, t, v);
            reconstruct_words(g, s, &dec, &ctx, t, &q, Some(m)).map_err(|e| match e {
                CpeError::Kernel(k) => k,
                other => KernelError::Dimension(other.to_string()),
            })
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }
}
