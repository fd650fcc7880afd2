//! Run configuration: one flat JSON document covering model, loss, training
//! and evaluation settings. Every key has a default.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("bad override {0:?}: expected key=value")]
    Override(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

macro_rules! defaults {
    ($($name:ident: $ty:ty = $val:expr;)*) => {
        $(fn $name() -> $ty { $val })*
    };
}

defaults! {
    d_model: usize = 64;
    n_heads: usize = 4;
    ffn_hidden: usize = 128;
    k_max: usize = 12;
    p_min: usize = 5;
    p_max: usize = 14;
    gauss_sigma: f64 = 8.0;
    w_min: f64 = 0.05;
    tau: f64 = 1.0;
    delta1: f64 = 0.1;
    delta2: f64 = 0.5;
    gamma: f64 = 0.5;
    mvr_rate: f64 = 0.1;
    mask_token_id: usize = 1;
    vocab_size: usize = 8000;
    lr: f64 = 1e-3;
    stage1_steps: usize = 2000;
    stage2_steps: usize = 2000;
    batch_size: usize = 1;
    negatives_k: usize = 15;
    strategy: String = "adaptive".into();
    scene_source: String = "complexity".into();
}

/// Documentation for every key, shown by `--help`.
pub const KEY_DOCS: &[(&str, &str)] = &[
    ("seed", "RNG seed for initialization, sampling and data order (default 0)"),
    ("d_model", "hidden width d (default 64)"),
    ("n_heads", "attention heads; must divide d_model (default 4)"),
    ("ffn_hidden", "feed-forward hidden width (default 128)"),
    ("K", "codebook size, the largest scene complexity (default 12)"),
    ("p_min", "fewest proposals per video (default 5)"),
    ("p_max", "most proposals per video (default 14)"),
    ("gauss_sigma", "Gaussian mask sharpness (default 8)"),
    ("w_min", "smallest proposal width, as a fraction of the video (default 0.05)"),
    ("tau", "Gumbel-Softmax temperature (default 1.0)"),
    ("delta1", "video-level contrastive margin (default 0.1)"),
    ("delta2", "corpus-level contrastive margin (default 0.5)"),
    ("gamma", "loss calibration scale (default 0.5)"),
    ("mvr_rate", "per-frame masking rate for video reconstruction (default 0.1)"),
    ("mask_token_id", "vocabulary id of the <mask> token (default 1)"),
    ("vocab_size", "vocabulary cap (default 8000)"),
    ("lr", "Adam learning rate (default 1e-3)"),
    ("stage1_steps", "optimizer steps without the corpus-level loss (default 2000)"),
    ("stage2_steps", "optimizer steps with hard negatives (default 2000)"),
    ("batch_size", "(video, query) pairs accumulated per step (default 1)"),
    ("k", "hard-negative videos kept per query (default 15)"),
    ("strategy", "proposal source at evaluation: adaptive | fixed:N | window:W[+W..],S (default adaptive)"),
    ("scene_source", "scene counts for the heatmap: complexity | gt_spans | oracle (default complexity)"),
    ("oracle_path", "generator ground truth, needed when scene_source is oracle"),
    ("human_nouns_path", "file of nouns ignored by the complexity estimator (default: built-in list)"),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_model")]
    pub d_model: usize,
    #[serde(default = "n_heads")]
    pub n_heads: usize,
    #[serde(default = "ffn_hidden")]
    pub ffn_hidden: usize,
    #[serde(rename = "K", default = "k_max")]
    pub k_max: usize,
    #[serde(default = "p_min")]
    pub p_min: usize,
    #[serde(default = "p_max")]
    pub p_max: usize,
    #[serde(default = "gauss_sigma")]
    pub gauss_sigma: f64,
    #[serde(default = "w_min")]
    pub w_min: f64,
    #[serde(default = "tau")]
    pub tau: f64,
    #[serde(default = "delta1")]
    pub delta1: f64,
    #[serde(default = "delta2")]
    pub delta2: f64,
    #[serde(default = "gamma")]
    pub gamma: f64,
    #[serde(default = "mvr_rate")]
    pub mvr_rate: f64,
    #[serde(default = "mask_token_id")]
    pub mask_token_id: usize,
    #[serde(default = "vocab_size")]
    pub vocab_size: usize,
    #[serde(default = "lr")]
    pub lr: f64,
    #[serde(default = "stage1_steps")]
    pub stage1_steps: usize,
    #[serde(default = "stage2_steps")]
    pub stage2_steps: usize,
    #[serde(default = "batch_size")]
    pub batch_size: usize,
    #[serde(rename = "k", default = "negatives_k")]
    pub negatives_k: usize,
    #[serde(default = "strategy")]
    pub strategy: String,
    #[serde(default = "scene_source")]
    pub scene_source: String,
    #[serde(default)]
    pub oracle_path: Option<String>,
    #[serde(default)]
    pub human_nouns_path: Option<String>,
}

impl RunConfig {
    pub fn with_seed(seed: u64) -> Self {
        serde_json::from_value(serde_json::json!({ "seed": seed })).expect("defaults are valid")
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text, &path.display().to_string())
    }

    /// Applies `key=value` overrides on top of a base document. Values are parsed
    /// as JSON when possible and as strings otherwise.
    pub fn with_overrides(base: serde_json::Value, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut doc = match base {
            serde_json::Value::Object(m) => m,
            _ => return Err(ConfigError::Invalid("config must be a JSON object".into())),
        };
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .filter(|(k, _)| !k.is_empty())
                .ok_or_else(|| ConfigError::Override(o.clone()))?;
            let value = serde_json::from_str(v).unwrap_or_else(|_| serde_json::Value::String(v.into()));
            doc.insert(k.to_string(), value);
        }
        let cfg: Self = serde_json::from_value(serde_json::Value::Object(doc)).map_err(|e| {
            ConfigError::Parse {
                path: "<overrides>".into(),
                message: e.to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: String| Err(ConfigError::Invalid(m));
        if self.d_model == 0 || !self.d_model.is_multiple_of(2) {
            return fail(format!("d_model {} must be positive and even", self.d_model));
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return fail(format!("n_heads {} must divide d_model {}", self.n_heads, self.d_model));
        }
        if self.ffn_hidden == 0 || self.k_max == 0 {
            return fail("ffn_hidden and K must be positive".into());
        }
        if self.p_min == 0 || self.p_min > self.p_max {
            return fail(format!("need 1 <= p_min <= p_max, got {}..{}", self.p_min, self.p_max));
        }
        if !(self.gauss_sigma > 0.0 && self.tau > 0.0) {
            return fail("gauss_sigma and tau must be positive".into());
        }
        if !(self.w_min > 0.0 && self.w_min <= 1.0) {
            return fail(format!("w_min {} outside (0, 1]", self.w_min));
        }
        if !(self.mvr_rate > 0.0 && self.mvr_rate <= 1.0) {
            return fail(format!("mvr_rate {} outside (0, 1]", self.mvr_rate));
        }
        if !(self.delta1 >= 0.0 && self.delta2 >= 0.0 && self.gamma > 0.0) {
            return fail("margins must be non-negative and gamma positive".into());
        }
        if self.vocab_size < 3 || self.mask_token_id >= self.vocab_size {
            return fail("vocab_size must exceed mask_token_id and leave room for words".into());
        }
        // NaN fails too
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(self.lr > 0.0) || self.batch_size == 0 {
            return fail("lr and batch_size must be positive".into());
        }
        self.strategy
            .parse::<crate::eval::ProposalStrategy>()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        match self.scene_source.as_str() {
            "complexity" | "gt_spans" => {}
            "oracle" if self.oracle_path.is_some() => {}
            "oracle" => return fail("scene_source oracle needs oracle_path".into()),
            other => return fail(format!("unknown scene_source {other:?}")),
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    /// Hex SHA-256 of the canonical (compact) JSON form.
    pub fn digest(&self) -> String {
        let canon = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canon.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_reference_settings() {
        let c = RunConfig::with_seed(1);
        assert_eq!((c.k_max, c.p_min, c.p_max), (12, 5, 14));
        assert_eq!((c.gauss_sigma, c.delta1, c.delta2, c.gamma), (8.0, 0.1, 0.5, 0.5));
        assert_eq!((c.negatives_k, c.vocab_size), (15, 8000));
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_rejected_and_empty_document_defaults() {
        assert!(RunConfig::from_json(r#"{"seed": 1, "K2": 3}"#, "t").is_err());
        assert_eq!(RunConfig::from_json("{}", "t").unwrap(), RunConfig::with_seed(0));
        let c = RunConfig::from_json(r#"{"seed": 4, "K": 3, "k": 2}"#, "t").unwrap();
        assert_eq!((c.k_max, c.negatives_k), (3, 2));
    }

    #[test]
    fn overrides_win_and_digest_changes() {
        let base = serde_json::json!({"seed": 1, "lr": 0.01});
        let c = RunConfig::with_overrides(
            base.clone(),
            &["lr=0.5".into(), "strategy=fixed:6".into()],
        )
        .unwrap();
        assert_eq!(c.lr, 0.5);
        assert_eq!(c.strategy, "fixed:6");
        let plain = RunConfig::with_overrides(base, &[]).unwrap();
        assert_ne!(plain.digest(), c.digest());
        assert_eq!(plain.digest(), plain.clone().digest());
        assert!(RunConfig::with_overrides(serde_json::json!({"seed": 1}), &["novalue".into()]).is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        for bad in [
            r#"{"seed": 1, "n_heads": 3}"#,
            r#"{"seed": 1, "p_min": 9, "p_max": 4}"#,
            r#"{"seed": 1, "strategy": "fixed:x"}"#,
            r#"{"seed": 1, "scene_source": "oracle"}"#,
            r#"{"seed": 1, "w_min": 0}"#,
        ] {
            assert!(RunConfig::from_json(bad, "t").is_err(), "{bad}");
        }
    }
}
