use ndarray::Array2;
use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use super::KernelError;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Sinusoidal position table: `sin` on even columns, `cos` on odd ones.
pub fn positional_encoding(len: usize, dim: usize) -> Result<Array2<f64>, KernelError> {
    if len == 0 || dim == 0 || !dim.is_multiple_of(2) {
        return Err(KernelError::Dimension(format!(
            "positional encoding needs len >= 1 and even dim, got {len}x{dim}"
        )));
    }
    let mut pe = Array2::zeros((len, dim));
    for pos in 0..len {
        for pair in 0..dim / 2 {
            let freq = 10000f64.powf(-((2 * pair) as f64) / dim as f64);
            let angle = pos as f64 * freq;
            pe[[pos, 2 * pair]] = angle.sin();
            pe[[pos, 2 * pair + 1]] = angle.cos();
        }
    }
    Ok(pe)
}

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        let std = 1.0 / (fan_in as f64).sqrt();
        let weight = store.normal(format!("{name}.weight"), fan_in, fan_out, std, rng);
        let bias = store.zeros(format!("{name}.bias"), 1, fan_out);
        Self {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }

    /// `x W` without the bias.
    pub fn project(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.weight);
        g.matmul(x, w)
    }

    pub fn add_bias(&self, g: &mut Graph, store: &ParamStore, y: Var) -> Var {
        let b = g.param(store, self.bias);
        g.add_row(y, b)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNormParams {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gamma: store.ones(format!("{name}.gamma"), 1, dim),
            beta: store.zeros(format!("{name}.beta"), 1, dim),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.layer_norm(x, gamma, beta, LAYER_NORM_EPS)
    }
}

/// Scaled dot-product attention of `queries` (`r × d`) over `keys`/`values` (`L × d`),
/// split into `n_heads` column groups.
pub fn multi_head_attention(
    g: &mut Graph,
    queries: Var,
    keys: Var,
    values: Var,
    n_heads: usize,
) -> Var {
    let (_, d) = g.shape(queries);
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut heads = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let (qh, kh, vh) = if n_heads == 1 {
            (queries, keys, values)
        } else {
            (
                g.slice_cols(queries, h * dh, dh),
                g.slice_cols(keys, h * dh, dh),
                g.slice_cols(values, h * dh, dh),
            )
        };
        let kt = g.transpose(kh);
        let scores = g.matmul(qh, kt);
        let scores = g.scale(scores, scale);
        let probs = g.softmax_rows(scores);
        heads.push(g.matmul(probs, vh));
    }
    if heads.len() == 1 {
        heads[0]
    } else {
        g.concat_cols(&heads)
    }
}

/// Pre-norm transformer layer: `x + MHA(LN(x))`, then `h + FFN(LN(h))`.
#[derive(Debug, Clone)]
pub struct AttentionBlock {
    pub n_heads: usize,
    pub dim: usize,
    pub ln_attn: LayerNormParams,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub ln_ffn: LayerNormParams,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
}

impl AttentionBlock {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        n_heads: usize,
        ffn_hidden: usize,
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
            ln_attn: LayerNormParams::new(store, &format!("{name}.ln_attn"), dim),
            query: Linear::new(store, &format!("{name}.query"), dim, dim, rng),
            key: Linear::new(store, &format!("{name}.key"), dim, dim, rng),
            value: Linear::new(store, &format!("{name}.value"), dim, dim, rng),
            output: Linear::new(store, &format!("{name}.output"), dim, dim, rng),
            ln_ffn: LayerNormParams::new(store, &format!("{name}.ln_ffn"), dim),
            ffn_in: Linear::new(store, &format!("{name}.ffn_in"), dim, ffn_hidden, rng),
            ffn_out: Linear::new(store, &format!("{name}.ffn_out"), ffn_hidden, dim, rng),
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, KernelError> {
        let (rows, cols) = g.shape(x);
        if rows == 0 || cols != self.dim {
            return Err(KernelError::Dimension(format!(
                "attention block expects L x {}, got {rows} x {cols}",
                self.dim
            )));
        }
        let normed = self.ln_attn.forward(g, store, x);
        let q = self.query.forward(g, store, normed);
        let k = self.key.forward(g, store, normed);
        let v = self.value.forward(g, store, normed);
        let attended = multi_head_attention(g, q, k, v, self.n_heads);
        let projected = self.output.forward(g, store, attended);
        let h = g.add(x, projected);
        Ok(self.feed_forward(g, store, h))
    }

    /// `h + FFN(LN(h))`.
    pub fn feed_forward(&self, g: &mut Graph, store: &ParamStore, h: Var) -> Var {
        let normed = self.ln_ffn.forward(g, store, h);
        let hidden = self.ffn_in.forward(g, store, normed);
        let hidden = g.gelu(hidden);
        let out = self.ffn_out.forward(g, store, hidden);
        g.add(h, out)
    }
}

/// Runs `block` on `x` without a graph that outlives the call.
pub fn attention_forward(
    block: &AttentionBlock,
    store: &ParamStore,
    x: &Array2<f64>,
) -> Result<Array2<f64>, KernelError> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let out = block.forward(&mut g, store, xv)?;
    g.check_finite()?;
    Ok(g.value(out).clone())
}
