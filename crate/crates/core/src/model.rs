//! The full retrieval model: video and text encoders, cross-modal attention,
//! complexity-conditioned proposals, and the two reconstruction heads.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::cpe::{
    calibration_weight, corpus_contrastive, mqr_loss, mvr_loss, reconstruct_words,
    sample_masked_frames, video_contrastive, CpeError, LossReport, LossSettings, MaskedProposal,
    MaskedQuery, ReadoutBlock,
};
use crate::cpg::{
    build_proposals, complexity_vector, interact, Codebook, CountSelector, CpgError, MaskSettings,
    ProposalMask, ProposalRegressor, ProposalSet,
};
use crate::numkern::{
    positional_encoding, AttentionBlock, Graph, KernelError, LayerNormParams, Linear, ParamId,
    ParamStore, SelectionMode, Var,
};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ModelError {
    #[error("token id {0} outside vocabulary of {1}")]
    Token(usize, usize),
    #[error("video has {0} feature columns, model expects {1}")]
    FeatureDim(usize, usize),
    #[error("empty query")]
    EmptyQuery,
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Cpg(#[from] CpgError),
    #[error(transparent)]
    Cpe(#[from] CpeError),
}

/// Sizes that fix the parameter layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub feat_dim: usize,
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub ffn_hidden: usize,
    pub k_max: usize,
    pub p_min: usize,
    pub p_max: usize,
}

impl ModelShape {
    pub fn new(cfg: &RunConfig, feat_dim: usize, vocab_size: usize) -> Self {
        Self {
            feat_dim,
            vocab_size,
            d_model: cfg.d_model,
            n_heads: cfg.n_heads,
            ffn_hidden: cfg.ffn_hidden,
            k_max: cfg.k_max,
            p_min: cfg.p_min,
            p_max: cfg.p_max,
        }
    }
}

/// Non-learned settings used by the forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyper {
    pub mask: MaskSettings,
    pub loss: LossSettings,
}

impl Hyper {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            mask: MaskSettings {
                gauss_sigma: cfg.gauss_sigma,
                w_min: cfg.w_min,
                tau: cfg.tau,
            },
            loss: LossSettings {
                delta1: cfg.delta1,
                delta2: cfg.delta2,
                gamma: cfg.gamma,
                mvr_rate: cfg.mvr_rate,
                mask_token_id: cfg.mask_token_id,
            },
        }
    }
}

/// Parameter handles; the values live in a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Scanet {
    pub shape: ModelShape,
    pub video_in: Linear,
    pub ln_video: LayerNormParams,
    pub embed: ParamId,
    pub ln_text: LayerNormParams,
    pub cross: AttentionBlock,
    pub interact: AttentionBlock,
    pub codebook: Codebook,
    pub selector: CountSelector,
    pub regressor: ProposalRegressor,
    pub decoder: ReadoutBlock,
    pub frame_regressor: ReadoutBlock,
}

/// One video with its scene complexity.
#[derive(Debug, Clone, Copy)]
pub struct VideoInput<'a> {
    pub features: &'a Array2<f64>,
    pub alpha: usize,
}

/// One training or scoring example.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub video: VideoInput<'a>,
    pub ids: &'a [usize],
    /// Positions eligible for masked reconstruction.
    pub candidates: &'a [usize],
}

/// Intermediate features for one (video, masked query) pair.
#[derive(Debug, Clone, Copy)]
pub struct Fused {
    /// Encoded masked query.
    pub text: Var,
    /// Video after the complexity interaction.
    pub video: Var,
    pub z: Var,
}

/// Per-proposal inference losses.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryScores {
    pub masks: Vec<ProposalMask>,
    pub l_mqr: Vec<f64>,
    pub l_mvr: Vec<f64>,
}

/// Where inference proposals come from.
#[derive(Debug, Clone, PartialEq)]
pub enum ProposalSource {
    Learned,
    Fixed(Vec<(f64, f64)>),
}

impl Scanet {
    pub fn new<R: Rng>(shape: ModelShape, store: &mut ParamStore, rng: &mut R) -> Result<Self, ModelError> {
        let d = shape.d_model;
        let (h, f) = (shape.n_heads, shape.ffn_hidden);
        Ok(Self {
            video_in: Linear::new(store, "video.proj", shape.feat_dim, d, rng),
            ln_video: LayerNormParams::new(store, "video.ln", d),
            embed: store.normal("text.embed", shape.vocab_size, d, 1.0, rng),
            ln_text: LayerNormParams::new(store, "text.ln", d),
            cross: AttentionBlock::new(store, "cross", d, h, f, rng)?,
            interact: AttentionBlock::new(store, "interact", d, h, f, rng)?,
            codebook: Codebook::new(store, "codebook", shape.k_max, d, rng),
            selector: CountSelector::new(store, "count", d, shape.p_min, shape.p_max, rng)?,
            regressor: ProposalRegressor::new(store, "proposal", d, shape.p_max, rng),
            decoder: ReadoutBlock::new(store, "decoder", d, h, f, shape.vocab_size, rng)?,
            frame_regressor: ReadoutBlock::new(store, "frames", d, h, f, shape.feat_dim, rng)?,
            shape,
        })
    }

    /// `LN(X W + b + PE)`.
    pub fn encode_video(&self, g: &mut Graph, store: &ParamStore, x: &Array2<f64>) -> Result<Var, ModelError> {
        let (n, f) = x.dim();
        if f != self.shape.feat_dim {
            return Err(ModelError::FeatureDim(f, self.shape.feat_dim));
        }
        let xv = g.constant(x.clone());
        let proj = self.video_in.forward(g, store, xv);
        let pe = g.constant(positional_encoding(n, self.shape.d_model)?);
        let sum = g.add(proj, pe);
        Ok(self.ln_video.forward(g, store, sum))
    }

    /// `LN(E[ids] + PE)`.
    pub fn encode_text(&self, g: &mut Graph, store: &ParamStore, ids: &[usize]) -> Result<Var, ModelError> {
        if ids.is_empty() {
            return Err(ModelError::EmptyQuery);
        }
        if let Some(&bad) = ids.iter().find(|&&t| t >= self.shape.vocab_size) {
            return Err(ModelError::Token(bad, self.shape.vocab_size));
        }
        let table = g.param(store, self.embed);
        let emb = g.gather_rows(table, ids);
        let pe = g.constant(positional_encoding(ids.len(), self.shape.d_model)?);
        let sum = g.add(emb, pe);
        Ok(self.ln_text.forward(g, store, sum))
    }

    /// Cross-modal attention over `[v ‖ q]`, then the complexity interaction.
    pub fn fuse(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        video: VideoInput<'_>,
        text: Var,
    ) -> Result<Fused, ModelError> {
        let v0 = self.encode_video(g, store, video.features)?;
        let (nv, _) = g.shape(v0);
        let (nq, _) = g.shape(text);
        let joint = g.concat_rows(&[v0, text]);
        let attended = self.cross.forward(g, store, joint)?;
        let v1 = g.slice_rows(attended, 0, nv);
        let q1 = g.slice_rows(attended, nv, nq);
        let z = complexity_vector(g, store, &self.codebook, video.alpha)?;
        let (z_prime, v_prime, _) = interact(g, store, &self.interact, z, v1, q1)?;
        Ok(Fused {
            text,
            video: v_prime,
            z: z_prime,
        })
    }

    /// Calibrated training loss for one example. `Some(negatives)` adds the
    /// corpus-level hinge; an empty list contributes zero.
    #[allow(clippy::too_many_arguments)]
    pub fn training_loss<R: Rng>(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        sample: Sample<'_>,
        negatives: Option<&[VideoInput<'_>]>,
        hp: &Hyper,
        mode: SelectionMode,
        rng: &mut R,
    ) -> Result<(Var, LossReport), ModelError> {
        let target = sample.candidates[rng.random_range(0..sample.candidates.len())];
        let masked = MaskedQuery::new(sample.ids, &[target], hp.loss.mask_token_id)?;
        let text_msk = self.encode_text(g, store, &masked.ids)?;
        let fused = self.fuse(g, store, sample.video, text_msk)?;
        let set = build_proposals(
            g,
            store,
            fused.video,
            fused.z,
            &self.selector,
            &self.regressor,
            hp.mask,
            mode,
            rng,
        );

        let ctx = self.decoder.context(g, store, text_msk, fused.video);
        let (l_mqr, per_mqr) = mqr_loss(g, store, &self.decoder, &ctx, text_msk, &masked, &set)?;
        let (l_vid, _) =
            video_contrastive(g, store, &self.decoder, &ctx, text_msk, &masked, &set, l_mqr, hp.loss.delta1)?;

        let text_full = self.encode_text(g, store, sample.ids)?;
        let frames = set
            .slots
            .iter()
            .map(|p| {
                let pos = sample_masked_frames(p.mask.start, p.mask.end, hp.loss.mvr_rate, rng);
                MaskedProposal::new(pos, sample.video.features)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let rctx = self.frame_regressor.context(g, store, text_full, fused.video);
        let (l_mvr, per_mvr) = mvr_loss(g, store, &self.frame_regressor, &rctx, &set, &frames)?;

        let mut l_cps = None;
        if let Some(negatives) = negatives {
            let mut neg_losses = Vec::with_capacity(negatives.len());
            for neg in negatives {
                let nf = self.fuse(g, store, *neg, text_msk)?;
                let nctx = self.decoder.context(g, store, text_msk, nf.video);
                neg_losses.push(reconstruct_words(g, store, &self.decoder, &nctx, text_msk, &masked, None)?);
            }
            l_cps = corpus_contrastive(g, l_mqr, &neg_losses, hp.loss.delta2).map(|(h, _)| h);
        }

        let mut parts = vec![l_mqr, l_mvr, l_vid];
        parts.extend(l_cps);
        let row = g.concat_cols(&parts);
        let sum = g.sum(row);
        let weight = calibration_weight(sample.video.alpha as f64, hp.loss.gamma);
        let total = g.scale(sum, weight);
        g.check_finite()?;

        let report = LossReport {
            l_mqr: g.scalar(l_mqr),
            l_mvr: g.scalar(l_mvr),
            l_vid: g.scalar(l_vid),
            l_cps: l_cps.map_or(0.0, |v| g.scalar(v)),
            per_proposal_mqr: per_mqr.iter().map(|v| g.scalar(*v)).collect(),
            per_proposal_mvr: per_mvr.iter().map(|v| g.scalar(*v)).collect(),
            weight,
            total: g.scalar(total),
            p_alpha: set.p_alpha,
        };
        Ok((total, report))
    }

    /// Per-proposal losses used to rank proposals for one query.
    ///
    /// Learned proposals come from the pass that masks the first candidate;
    /// word losses are averaged over passes masking each candidate in turn.
    pub fn score_query<R: Rng>(
        &self,
        store: &ParamStore,
        sample: Sample<'_>,
        source: &ProposalSource,
        hp: &Hyper,
        rng: &mut R,
    ) -> Result<QueryScores, ModelError> {
        let mut masks: Option<Vec<ProposalMask>> = None;
        let mut mqr_sum: Vec<f64> = Vec::new();
        let mut l_mvr = Vec::new();
        for (k, &target) in sample.candidates.iter().enumerate() {
            let mut g = Graph::new();
            let masked = MaskedQuery::new(sample.ids, &[target], hp.loss.mask_token_id)?;
            let text_msk = self.encode_text(&mut g, store, &masked.ids)?;
            let fused = self.fuse(&mut g, store, sample.video, text_msk)?;
            let set = match (&masks, source) {
                (Some(m), _) => ProposalSet::from_masks(&mut g, fused.video, m.clone()),
                (None, ProposalSource::Fixed(geom)) => {
                    ProposalSet::from_geometry(&mut g, fused.video, geom, hp.mask.gauss_sigma)?
                }
                (None, ProposalSource::Learned) => {
                    let full = build_proposals(
                        &mut g,
                        store,
                        fused.video,
                        fused.z,
                        &self.selector,
                        &self.regressor,
                        hp.mask,
                        SelectionMode::Greedy,
                        rng,
                    );
                    let active: Vec<ProposalMask> = full.masks().into_iter().cloned().collect();
                    ProposalSet::from_masks(&mut g, fused.video, active)
                }
            };
            let ctx = self.decoder.context(&mut g, store, text_msk, fused.video);
            let (_, per) = mqr_loss(&mut g, store, &self.decoder, &ctx, text_msk, &masked, &set)?;
            if k == 0 {
                mqr_sum = vec![0.0; per.len()];
                let text_full = self.encode_text(&mut g, store, sample.ids)?;
                let rctx = self.frame_regressor.context(&mut g, store, text_full, fused.video);
                let frames = set
                    .slots
                    .iter()
                    .map(|p| {
                        let pos = sample_masked_frames(p.mask.start, p.mask.end, hp.loss.mvr_rate, rng);
                        MaskedProposal::new(pos, sample.video.features)
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let (_, per_mvr) = mvr_loss(&mut g, store, &self.frame_regressor, &rctx, &set, &frames)?;
                l_mvr = per_mvr.iter().map(|v| g.scalar(*v)).collect();
                masks = Some(set.slots.iter().map(|p| p.mask.clone()).collect());
            }
            for (acc, v) in mqr_sum.iter_mut().zip(&per) {
                *acc += g.scalar(*v);
            }
            g.check_finite()?;
        }
        let n = sample.candidates.len() as f64;
        Ok(QueryScores {
            masks: masks.unwrap_or_default(),
            l_mqr: mqr_sum.iter().map(|s| s / n).collect(),
            l_mvr,
        })
    }

    /// Word reconstruction loss of `masked` against a whole video (no proposal mask).
    pub fn whole_video_loss(
        &self,
        store: &ParamStore,
        video: VideoInput<'_>,
        masked: &MaskedQuery,
    ) -> Result<f64, ModelError> {
        let mut g = Graph::new();
        let text = self.encode_text(&mut g, store, &masked.ids)?;
        let fused = self.fuse(&mut g, store, video, text)?;
        let ctx = self.decoder.context(&mut g, store, text, fused.video);
        let l = reconstruct_words(&mut g, store, &self.decoder, &ctx, text, masked, None)?;
        g.check_finite()?;
        Ok(g.scalar(l))
    }
}
