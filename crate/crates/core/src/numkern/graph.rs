//! Tape-based reverse-mode differentiation over dense `f64` matrices.
//!
//! Every value in the graph is a 2-D matrix; vectors are `1 × n` rows and
//! scalars are `1 × 1`. Nodes are appended in evaluation order, so a single
//! reverse sweep over the tape visits every node after all of its consumers.

use std::collections::HashMap;

use ndarray::{s, Array2, Axis};

use super::params::{ParamId, ParamStore};
use super::KernelError;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    RowScale(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Gelu(Var),
    Hinge(Var),
    Clamp(Var, f64, f64),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normed: Array2<f64>,
        inv_std: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        target: usize,
        probs: Vec<f64>,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize, usize),
    SliceCols(Var, usize, usize),
    GatherRows(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    Div(Var, Var),
    StraightThrough { soft: Var },
    GaussianMask {
        center: Var,
        width: Var,
        gauss_sigma: f64,
    },
    FlattenNormalize {
        base: Var,
        start: usize,
        end: usize,
        argmax: usize,
        peak: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
}

/// A single forward computation and the tape needed to differentiate it.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    /// Tape node of each parameter brought in so far, indexed by `ParamId`.
    param_vars: Vec<Option<Var>>,
    fault: Option<String>,
}

/// Per-node gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

fn row(v: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((1, v.len()), v.to_vec()).expect("row shape")
}

fn scalar(x: f64) -> Array2<f64> {
    Array2::from_elem((1, 1), x)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// Value of the Gaussian curve used for proposal masks at 1-based frame `i`.
pub fn gaussian_value(i: usize, n: usize, center: f64, width: f64, gauss_sigma: f64) -> f64 {
    let s = width / gauss_sigma;
    let x = i as f64 / n as f64 - center;
    (-(x * x) / (2.0 * s * s)).exp() / ((2.0 * std::f64::consts::PI).sqrt() * s)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        if self.fault.is_none() && value.iter().any(|x| !x.is_finite()) {
            self.fault = Some(format!("non-finite value produced by {}", op_name(&op)));
        }
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Returns an error if any node produced a NaN or infinity.
    pub fn check_finite(&self) -> Result<(), KernelError> {
        match &self.fault {
            Some(msg) => Err(KernelError::NonFinite(msg.clone())),
            None => Ok(()),
        }
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let val = &self.nodes[v.0].value;
        debug_assert_eq!(val.len(), 1, "scalar() on non-scalar node");
        val[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn constant_row(&mut self, values: &[f64]) -> Var {
        self.push(row(values), Op::Leaf)
    }

    pub fn constant_scalar(&mut self, x: f64) -> Var {
        self.push(scalar(x), Op::Leaf)
    }

    /// Brings a parameter onto the tape. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(Some(v)) = self.param_vars.get(id.0) {
            return *v;
        }
        let v = self.push(store.value(id).clone(), Op::Param);
        if self.param_vars.len() <= id.0 {
            self.param_vars.resize(id.0 + 1, None);
        }
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        assert_eq!(ac, br, "matmul {ar}x{ac} by {br}x{bc}");
        let out = self.value(a).dot(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).t().to_owned();
        self.push(out, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let out = self.value(a) + self.value(b);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub shape mismatch");
        let out = self.value(a) - self.value(b);
        self.push(out, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul shape mismatch");
        let out = self.value(a) * self.value(b);
        self.push(out, Op::Mul(a, b))
    }

    /// Elementwise quotient of two scalars-or-matrices of equal shape.
    pub fn div(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "div shape mismatch");
        let out = self.value(a) / self.value(b);
        self.push(out, Op::Div(a, b))
    }

    /// Adds a `1 × n` row to every row of an `L × n` matrix.
    pub fn add_row(&mut self, a: Var, r: Var) -> Var {
        let (_, ac) = self.shape(a);
        assert_eq!(self.shape(r), (1, ac), "add_row expects a 1x{ac} row");
        let out = self.value(a) + self.value(r);
        self.push(out, Op::AddRow(a, r))
    }

    /// Multiplies row `i` of `a` by `weights[i]`; `weights` is `1 × L` or `L × 1`.
    pub fn row_scale(&mut self, a: Var, weights: Var) -> Var {
        let (ar, _) = self.shape(a);
        let w: Vec<f64> = self.value(weights).iter().copied().collect();
        assert_eq!(w.len(), ar, "row_scale needs one weight per row");
        let mut out = self.value(a).clone();
        for (mut r, k) in out.axis_iter_mut(Axis(0)).zip(&w) {
            r.mapv_inplace(|x| x * k);
        }
        self.push(out, Op::RowScale(a, weights))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a) * k;
        self.push(out, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a) + k;
        self.push(out, Op::AddScalar(a))
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_scalar(neg, 1.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(gelu);
        self.push(out, Op::Gelu(a))
    }

    /// `max(a, 0)`; the subgradient at zero is taken as zero.
    pub fn hinge(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x.max(0.0));
        self.push(out, Op::Hinge(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(a).mapv(|x| x.clamp(lo, hi));
        self.push(out, Op::Clamp(a, lo, hi))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for mut r in out.axis_iter_mut(Axis(0)) {
            let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            r.mapv_inplace(|x| (x - m).exp());
            let z: f64 = r.sum();
            r.mapv_inplace(|x| x / z);
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    /// Row-wise layer normalization with affine `gamma`/`beta` rows.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let (r, c) = xv.dim();
        assert_eq!(self.shape(gamma), (1, c), "layer_norm gamma shape");
        assert_eq!(self.shape(beta), (1, c), "layer_norm beta shape");
        let mut normed = Array2::zeros((r, c));
        let mut inv_std = Vec::with_capacity(r);
        for (i, xr) in xv.axis_iter(Axis(0)).enumerate() {
            let mean = xr.sum() / c as f64;
            let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for j in 0..c {
                normed[[i, j]] = (xr[j] - mean) * is;
            }
        }
        let out = &normed * self.value(gamma) + self.value(beta);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normed,
                inv_std,
            },
        )
    }

    /// Negative log-likelihood of `target` under `softmax(logits)` for a `1 × V` row.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.nrows(), 1, "cross_entropy expects a single row");
        assert!(target < lv.ncols(), "target {target} out of range");
        let m = lv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = lv.iter().map(|x| (x - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        let probs: Vec<f64> = exps.iter().map(|e| e / z).collect();
        let loss = -(lv[[0, target]] - m - z.ln());
        self.push(
            scalar(loss),
            Op::CrossEntropy {
                logits,
                target,
                probs,
            },
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let out = ndarray::concatenate(Axis(0), &views).expect("concat_rows column mismatch");
        self.push(out, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("concat_cols row mismatch");
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice(s![start..start + len, ..]).to_owned();
        self.push(out, Op::SliceRows(a, start, len))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(out, Op::SliceCols(a, start, len))
    }

    /// Row lookup (embedding tables, codebook indexing).
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Var {
        let tv = self.value(table);
        let out = tv.select(Axis(0), idx);
        self.push(out, Op::GatherRows(table, idx.to_vec()))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = scalar(self.value(a).sum());
        self.push(out, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let out = scalar(v.sum() / v.len() as f64);
        self.push(out, Op::Mean(a))
    }

    /// Forward value `hard`, gradient routed to `soft` unchanged.
    pub fn straight_through(&mut self, hard: Array2<f64>, soft: Var) -> Var {
        assert_eq!(hard.dim(), self.shape(soft), "straight_through shape mismatch");
        self.push(hard, Op::StraightThrough { soft })
    }

    /// Gaussian curve over frames `i = 1..=n` at positions `i / n` (scalar `center`, `width`).
    pub fn gaussian_mask(&mut self, center: Var, width: Var, gauss_sigma: f64, n: usize) -> Var {
        let c = self.scalar(center);
        let w = self.scalar(width);
        let vals: Vec<f64> = (1..=n).map(|i| gaussian_value(i, n, c, w, gauss_sigma)).collect();
        self.push(
            row(&vals),
            Op::GaussianMask {
                center,
                width,
                gauss_sigma,
            },
        )
    }

    /// Replaces entries `start..=end` of a `1 × n` mask by their mean, then divides
    /// by the maximum entry so the peak is exactly one.
    pub fn flatten_normalize(&mut self, base: Var, start: usize, end: usize) -> Var {
        let b = self.value(base);
        assert_eq!(b.nrows(), 1, "flatten_normalize expects a row");
        assert!(start <= end && end < b.ncols(), "region {start}..={end} out of range");
        let mut u: Vec<f64> = b.iter().copied().collect();
        let mean = u[start..=end].iter().sum::<f64>() / (end - start + 1) as f64;
        for x in &mut u[start..=end] {
            *x = mean;
        }
        let (argmax, peak) = u
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, x)| if x > acc.1 { (i, x) } else { acc });
        let out: Vec<f64> = u.iter().map(|x| x / peak).collect();
        self.push(
            row(&out),
            Op::FlattenNormalize {
                base,
                start,
                end,
                argmax,
                peak,
            },
        )
    }

    /// Reverse sweep from a scalar root. Gradients accumulate at every node.
    pub fn backward(&self, root: Var) -> Result<Gradients, KernelError> {
        self.check_finite()?;
        if self.value(root).len() != 1 {
            return Err(KernelError::Dimension(format!(
                "backward root must be scalar, got {:?}",
                self.shape(root)
            )));
        }
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(scalar(1.0));
        for idx in (0..=root.0).rev() {
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &gout, &mut grads);
            grads[idx] = Some(gout);
        }
        Ok(Gradients { grads })
    }

    /// Adds the gradient of every parameter node into `acc`.
    pub fn accumulate_param_grads(&self, grads: &Gradients, acc: &mut ParamGrads) {
        for (i, var) in self.param_vars.iter().enumerate() {
            if let Some(g) = var.and_then(|v| grads.get(v)) {
                acc.add(ParamId(i), g);
            }
        }
    }

    fn propagate(&self, idx: usize, gout: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let node = &self.nodes[idx];
        let mut acc = |v: Var, g: Array2<f64>| match &mut grads[v.0] {
            Some(existing) => *existing += &g,
            slot @ None => *slot = Some(g),
        };
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                acc(*a, gout.dot(&self.value(*b).t()));
                acc(*b, self.value(*a).t().dot(gout));
            }
            Op::Transpose(a) => acc(*a, gout.t().to_owned()),
            Op::Add(a, b) => {
                acc(*a, gout.clone());
                acc(*b, gout.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, gout.clone());
                acc(*b, -gout);
            }
            Op::Mul(a, b) => {
                acc(*a, gout * self.value(*b));
                acc(*b, gout * self.value(*a));
            }
            Op::Div(a, b) => {
                let bv = self.value(*b);
                acc(*a, gout / bv);
                acc(*b, -(gout * &node.value) / bv);
            }
            Op::AddRow(a, r) => {
                acc(*a, gout.clone());
                acc(*r, gout.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::RowScale(a, w) => {
                let wv = self.value(*w);
                let weights: Vec<f64> = wv.iter().copied().collect();
                let mut ga = gout.clone();
                for (i, mut r) in ga.axis_iter_mut(Axis(0)).enumerate() {
                    r.mapv_inplace(|x| x * weights[i]);
                }
                acc(*a, ga);
                let av = self.value(*a);
                let gw: Vec<f64> = gout
                    .axis_iter(Axis(0))
                    .zip(av.axis_iter(Axis(0)))
                    .map(|(g, x)| g.dot(&x))
                    .collect();
                let gw = Array2::from_shape_vec(wv.dim(), gw).expect("row_scale grad shape");
                acc(*w, gw);
            }
            Op::Scale(a, k) => acc(*a, gout * *k),
            Op::AddScalar(a) => acc(*a, gout.clone()),
            Op::Sigmoid(a) => {
                let y = &node.value;
                acc(*a, gout * &y.mapv(|s| s * (1.0 - s)));
            }
            Op::Gelu(a) => acc(*a, gout * &self.value(*a).mapv(gelu_grad)),
            Op::Hinge(a) => {
                let mask = self.value(*a).mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                acc(*a, gout * &mask);
            }
            Op::Clamp(a, lo, hi) => {
                let mask = self
                    .value(*a)
                    .mapv(|x| if x > *lo && x < *hi { 1.0 } else { 0.0 });
                acc(*a, gout * &mask);
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut ga = Array2::zeros(y.dim());
                for i in 0..y.nrows() {
                    let yr = y.row(i);
                    let gr = gout.row(i);
                    let dot = yr.dot(&gr);
                    for j in 0..y.ncols() {
                        ga[[i, j]] = yr[j] * (gr[j] - dot);
                    }
                }
                acc(*a, ga);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normed,
                inv_std,
            } => {
                let gv = self.value(*gamma);
                acc(*gamma, (gout * normed).sum_axis(Axis(0)).insert_axis(Axis(0)));
                acc(*beta, gout.sum_axis(Axis(0)).insert_axis(Axis(0)));
                let gxhat = gout * gv;
                let (r, c) = normed.dim();
                let mut gx = Array2::zeros((r, c));
                for i in 0..r {
                    let gh = gxhat.row(i);
                    let xh = normed.row(i);
                    let mean_g = gh.sum() / c as f64;
                    let mean_gx = gh.dot(&xh) / c as f64;
                    for j in 0..c {
                        gx[[i, j]] = inv_std[i] * (gh[j] - mean_g - xh[j] * mean_gx);
                    }
                }
                acc(*x, gx);
            }
            Op::CrossEntropy {
                logits,
                target,
                probs,
            } => {
                let g = gout[[0, 0]];
                let mut gl = row(probs);
                gl[[0, *target]] -= 1.0;
                acc(*logits, gl * g);
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = self.value(*p).nrows();
                    acc(*p, gout.slice(s![off..off + n, ..]).to_owned());
                    off += n;
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = self.value(*p).ncols();
                    acc(*p, gout.slice(s![.., off..off + n]).to_owned());
                    off += n;
                }
            }
            Op::SliceRows(a, start, len) => {
                let mut ga = Array2::zeros(self.value(*a).dim());
                ga.slice_mut(s![*start..*start + *len, ..]).assign(gout);
                acc(*a, ga);
            }
            Op::SliceCols(a, start, len) => {
                let mut ga = Array2::zeros(self.value(*a).dim());
                ga.slice_mut(s![.., *start..*start + *len]).assign(gout);
                acc(*a, ga);
            }
            Op::GatherRows(table, idx) => {
                let mut gt = Array2::zeros(self.value(*table).dim());
                for (k, &i) in idx.iter().enumerate() {
                    let mut r = gt.row_mut(i);
                    r += &gout.row(k);
                }
                acc(*table, gt);
            }
            Op::Sum(a) => {
                let g = gout[[0, 0]];
                acc(*a, Array2::from_elem(self.value(*a).dim(), g));
            }
            Op::Mean(a) => {
                let dim = self.value(*a).dim();
                let g = gout[[0, 0]] / (dim.0 * dim.1) as f64;
                acc(*a, Array2::from_elem(dim, g));
            }
            Op::StraightThrough { soft } => acc(*soft, gout.clone()),
            Op::GaussianMask {
                center,
                width,
                gauss_sigma,
            } => {
                let c = self.scalar(*center);
                let w = self.scalar(*width);
                let n = node.value.ncols();
                let s = w / gauss_sigma;
                let mut gc = 0.0;
                let mut gw = 0.0;
                for j in 0..n {
                    let m = node.value[[0, j]];
                    let x = (j + 1) as f64 / n as f64 - c;
                    let go = gout[[0, j]];
                    // dm/dc = m * x / s^2 ; dm/dw = m * (x^2 / s^2 - 1) / w
                    gc += go * m * x / (s * s);
                    gw += go * m * (x * x / (s * s) - 1.0) / w;
                }
                acc(*center, scalar(gc));
                acc(*width, scalar(gw));
            }
            Op::FlattenNormalize {
                base,
                start,
                end,
                argmax,
                peak,
            } => {
                let n = node.value.ncols();
                let y = &node.value;
                // y = u / peak, peak = u[argmax]
                let dot: f64 = (0..n).map(|j| gout[[0, j]] * y[[0, j]]).sum();
                let mut gu: Vec<f64> = (0..n).map(|j| gout[[0, j]] / peak).collect();
                gu[*argmax] -= dot / peak;
                let len = (end - start + 1) as f64;
                let region: f64 = gu[*start..=*end].iter().sum::<f64>() / len;
                for g in &mut gu[*start..=*end] {
                    *g = region;
                }
                acc(*base, row(&gu));
            }
        }
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Param => "param",
        Op::MatMul(..) => "matmul",
        Op::Transpose(_) => "transpose",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Div(..) => "div",
        Op::AddRow(..) => "add_row",
        Op::RowScale(..) => "row_scale",
        Op::Scale(..) => "scale",
        Op::AddScalar(_) => "add_scalar",
        Op::Sigmoid(_) => "sigmoid",
        Op::Gelu(_) => "gelu",
        Op::Hinge(_) => "hinge",
        Op::Clamp(..) => "clamp",
        Op::SoftmaxRows(_) => "softmax",
        Op::LayerNorm { .. } => "layer_norm",
        Op::CrossEntropy { .. } => "cross_entropy",
        Op::ConcatRows(_) => "concat_rows",
        Op::ConcatCols(_) => "concat_cols",
        Op::SliceRows(..) => "slice_rows",
        Op::SliceCols(..) => "slice_cols",
        Op::GatherRows(..) => "gather_rows",
        Op::Sum(_) => "sum",
        Op::Mean(_) => "mean",
        Op::StraightThrough { .. } => "straight_through",
        Op::GaussianMask { .. } => "gaussian_mask",
        Op::FlattenNormalize { .. } => "flatten_normalize",
    }
}

/// Gradient accumulators keyed by parameter.
#[derive(Debug, Clone, Default)]
pub struct ParamGrads {
    grads: HashMap<ParamId, Array2<f64>>,
}

impl ParamGrads {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, id: ParamId, g: &Array2<f64>) {
        match self.grads.get_mut(&id) {
            Some(existing) => *existing += g,
            None => {
                self.grads.insert(id, g.clone());
            }
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Array2<f64>> {
        self.grads.get(&id)
    }

    pub fn scale(&mut self, k: f64) {
        for g in self.grads.values_mut() {
            g.mapv_inplace(|x| x * k);
        }
    }

    pub fn clear(&mut self) {
        self.grads.clear();
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}
