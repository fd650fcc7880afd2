//! Scene-complexity-aware weakly supervised video moment retrieval.
//!
//! Given videos paired with sentence queries but no temporal labels, the model
//! estimates how many distinct scenes a video holds from the nouns of its
//! queries, generates that many Gaussian-masked proposals, and learns to rank
//! them by how well each one lets a decoder reconstruct masked query words and
//! frames.
//!
//! - [`corpus`]: annotation records, JSONL I/O and a synthetic generator with planted scenes.
//! - [`scene_complexity`]: noun-overlap redundancy removal and the per-video scene count.
//! - [`numkern`]: a small reverse-mode autodiff kernel with attention, layer norm and Gumbel-Softmax.
//! - [`cpg`] and [`cpe`]: proposal generation and the reconstruction/contrastive losses.
//! - [`model`], [`trainer`]: the assembled network, two-stage training, checkpoints and evaluation runs.
//! - [`eval`]: IoU, recall, mIoU and the scene/proposal mismatch heatmap.
//! - [`cli`], [`config`]: the commands behind the `scanet` binary and their configuration.

pub mod cli;
pub mod config;
pub mod corpus;
pub mod cpe;
pub mod cpg;
pub mod eval;
pub mod model;
pub mod numkern;
pub mod scene_complexity;
pub mod trainer;
