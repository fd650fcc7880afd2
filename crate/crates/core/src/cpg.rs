//! Complexity-adaptive proposal generation: a codebook row picked by scene
//! complexity conditions how many proposals to emit and where they sit.
//! Each proposal is a flattened Gaussian mask over frames.

use ndarray::Array2;
use rand::Rng;

use crate::numkern::{
    gaussian_value, gumbel_softmax, AttentionBlock, Graph, KernelError, Linear, ParamId,
    ParamStore, SelectionMode, Var,
};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CpgError {
    #[error("scene complexity must be at least 1, got {0}")]
    Alpha(usize),
    #[error("proposal width must be positive, got {0}")]
    Width(f64),
    #[error("need 1 <= p_min <= p_max, got {0}..{1}")]
    CountRange(usize, usize),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Mask construction settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskSettings {
    pub gauss_sigma: f64,
    pub w_min: f64,
    pub tau: f64,
}

/// `K` learnable complexity vectors.
#[derive(Debug, Clone, Copy)]
pub struct Codebook {
    pub table: ParamId,
    pub k_max: usize,
}

impl Codebook {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, k_max: usize, dim: usize, rng: &mut R) -> Self {
        assert!(k_max >= 1, "codebook needs at least one row");
        Self {
            table: store.normal(format!("{name}.table"), k_max, dim, 1.0, rng),
            k_max,
        }
    }
}

/// Row `min(alpha, K)` of the codebook (1-based), as a `1 × d` node.
pub fn complexity_vector(g: &mut Graph, store: &ParamStore, cb: &Codebook, alpha: usize) -> Result<Var, CpgError> {
    if alpha == 0 {
        return Err(CpgError::Alpha(alpha));
    }
    let table = g.param(store, cb.table);
    Ok(g.gather_rows(table, &[alpha.min(cb.k_max) - 1]))
}

/// One attention block over `[z ‖ v ‖ q]`, split back into `(z', v', q')`.
pub fn interact(
    g: &mut Graph,
    store: &ParamStore,
    block: &AttentionBlock,
    z: Var,
    v: Var,
    q: Var,
) -> Result<(Var, Var, Var), CpgError> {
    let (zr, _) = g.shape(z);
    let (nv, dv) = g.shape(v);
    let (nq, dq) = g.shape(q);
    if zr != 1 || dv != block.dim || dq != block.dim || g.shape(z).1 != block.dim {
        return Err(KernelError::Dimension(format!(
            "interact expects 1x{d}, Nx{d}, Mx{d}; got {:?}, {:?}, {:?}",
            g.shape(z),
            (nv, dv),
            (nq, dq),
            d = block.dim
        ))
        .into());
    }
    let seq = g.concat_rows(&[z, v, q]);
    let out = block.forward(g, store, seq)?;
    Ok((
        g.slice_rows(out, 0, 1),
        g.slice_rows(out, 1, nv),
        g.slice_rows(out, 1 + nv, nq),
    ))
}

/// MLP from `z'` to logits over the admissible proposal counts `p_min..=p_max`.
#[derive(Debug, Clone, Copy)]
pub struct CountSelector {
    pub hidden: Linear,
    pub out: Linear,
    pub p_min: usize,
    pub p_max: usize,
}

impl CountSelector {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        p_min: usize,
        p_max: usize,
        rng: &mut R,
    ) -> Result<Self, CpgError> {
        if p_min == 0 || p_min > p_max {
            return Err(CpgError::CountRange(p_min, p_max));
        }
        Ok(Self {
            hidden: Linear::new(store, &format!("{name}.hidden"), dim, dim, rng),
            out: Linear::new(store, &format!("{name}.out"), dim, p_max - p_min + 1, rng),
            p_min,
            p_max,
        })
    }

    /// Size of the count set.
    pub fn n(&self) -> usize {
        self.p_max - self.p_min + 1
    }

    pub fn counts(&self) -> Vec<usize> {
        (self.p_min..=self.p_max).collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CountDraw {
    pub p_alpha: usize,
    /// Selection vector over the count set (one-hot forward unless soft).
    pub selection: Var,
    /// `1 × 1` node holding `Σ g_i · I_i`.
    pub p_alpha_var: Var,
    /// `1 × p_max`; entry `p` is the weight with which slot `p` is active, `Σ_{I_i > p} g_i`.
    pub active: Var,
}

/// Draws the proposal count with Gumbel-Softmax over `MLP(z')`.
pub fn select_count<R: Rng>(
    g: &mut Graph,
    store: &ParamStore,
    z_prime: Var,
    sel: &CountSelector,
    tau: f64,
    mode: SelectionMode,
    rng: &mut R,
) -> CountDraw {
    let h = sel.hidden.forward(g, store, z_prime);
    let h = g.gelu(h);
    let logits = sel.out.forward(g, store, h);
    let draw = gumbel_softmax(g, logits, tau, mode, rng);
    let counts: Vec<f64> = sel.counts().iter().map(|&c| c as f64).collect();
    let counts_col = g.constant(Array2::from_shape_vec((counts.len(), 1), counts).expect("column"));
    let p_alpha_var = g.matmul(draw.output, counts_col);
    // slot p (0-based) is active when the selected count exceeds p
    let n = sel.n();
    let coverage = Array2::from_shape_fn((n, sel.p_max), |(i, p)| {
        if sel.p_min + i > p {
            1.0
        } else {
            0.0
        }
    });
    let coverage = g.constant(coverage);
    let active = g.matmul(draw.output, coverage);
    CountDraw {
        p_alpha: sel.p_min + draw.index,
        selection: draw.output,
        p_alpha_var,
        active,
    }
}

/// Learnable per-slot queries and the shared center/width head.
#[derive(Debug, Clone, Copy)]
pub struct ProposalRegressor {
    pub slots: ParamId,
    pub head: Linear,
    pub p_max: usize,
}

impl ProposalRegressor {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, dim: usize, p_max: usize, rng: &mut R) -> Self {
        Self {
            slots: store.normal(format!("{name}.slots"), p_max, dim, 1.0, rng),
            head: Linear::new(store, &format!("{name}.head"), dim, 2, rng),
            p_max,
        }
    }
}

/// `(c, w) = sigmoid((z' + slot_p) W + b)` for every slot, with `w` clamped to `[w_min, 1]`.
/// Returns one `(center, width)` pair of `1 × 1` nodes per slot.
pub fn regress_center_width(
    g: &mut Graph,
    store: &ParamStore,
    z_prime: Var,
    reg: &ProposalRegressor,
    w_min: f64,
) -> Vec<(Var, Var)> {
    let slots = g.param(store, reg.slots);
    let conditioned = g.add_row(slots, z_prime);
    let raw = reg.head.forward(g, store, conditioned);
    let cw = g.sigmoid(raw);
    (0..reg.p_max)
        .map(|p| {
            let row = g.slice_rows(cw, p, 1);
            let c = g.slice_cols(row, 0, 1);
            let w = g.slice_cols(row, 1, 1);
            (c, g.clamp(w, w_min, 1.0))
        })
        .collect()
}

/// Gaussian curve at frames `1..=n`, unnormalized.
pub fn base_mask(center: f64, width: f64, gauss_sigma: f64, n: usize) -> Result<Vec<f64>, CpgError> {
    // NaN fails too
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(width > 0.0) {
        return Err(CpgError::Width(width));
    }
    Ok((1..=n).map(|i| gaussian_value(i, n, center, width, gauss_sigma)).collect())
}

/// Inclusive frame range covered by a proposal.
pub fn region(center: f64, width: f64, n: usize) -> (usize, usize) {
    let last = n as f64 - 1.0;
    let st = (n as f64 * (center - width / 2.0)).floor().clamp(0.0, last);
    let ed = ((n as f64 * (center + width / 2.0)).ceil() - 1.0).clamp(st, last);
    (st as usize, ed as usize)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProposalMask {
    pub center: f64,
    pub width: f64,
    pub mask: Vec<f64>,
    pub start: usize,
    pub end: usize,
}

/// Replaces the in-region values of `m` by their mean, then scales the mask to peak 1.
pub fn flatten_and_normalize(m: &[f64], center: f64, width: f64) -> ProposalMask {
    let n = m.len();
    let (start, end) = region(center, width, n);
    let mut u = m.to_vec();
    let mean = u[start..=end].iter().sum::<f64>() / (end - start + 1) as f64;
    u[start..=end].iter_mut().for_each(|x| *x = mean);
    let peak = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    u.iter_mut().for_each(|x| *x /= peak);
    ProposalMask {
        center,
        width,
        mask: u,
        start,
        end,
    }
}

/// Differentiable mask for a `(center, width)` pair of `1 × 1` nodes.
pub fn mask_node(g: &mut Graph, center: Var, width: Var, gauss_sigma: f64, n: usize) -> (Var, ProposalMask) {
    let (c, w) = (g.scalar(center), g.scalar(width));
    let (start, end) = region(c, w, n);
    let base = g.gaussian_mask(center, width, gauss_sigma, n);
    let mask = g.flatten_normalize(base, start, end);
    let value = ProposalMask {
        center: c,
        width: w,
        mask: g.value(mask).iter().copied().collect(),
        start,
        end,
    };
    (mask, value)
}

/// One proposal on the tape.
#[derive(Debug, Clone)]
pub struct Proposal {
    pub mask: ProposalMask,
    /// `1 × N` mask node.
    pub mask_var: Var,
    /// `v ∘ m`, `N × d`.
    pub features: Var,
}

#[derive(Debug, Clone)]
pub struct ProposalSet {
    pub p_alpha: usize,
    /// Every slot, active or not; the first `p_alpha` are the proposals.
    pub slots: Vec<Proposal>,
    /// Present for learned proposals.
    pub count: Option<CountDraw>,
}

impl ProposalSet {
    pub fn active(&self) -> &[Proposal] {
        &self.slots[..self.p_alpha]
    }

    pub fn masks(&self) -> Vec<&ProposalMask> {
        self.active().iter().map(|p| &p.mask).collect()
    }

    /// Proposals at fixed geometry; every one is active.
    pub fn from_geometry(g: &mut Graph, v: Var, geometry: &[(f64, f64)], gauss_sigma: f64) -> Result<Self, CpgError> {
        let (n, _) = g.shape(v);
        let masks = geometry
            .iter()
            .map(|&(c, w)| Ok(flatten_and_normalize(&base_mask(c, w, gauss_sigma, n)?, c, w)))
            .collect::<Result<Vec<_>, CpgError>>()?;
        Ok(Self::from_masks(g, v, masks))
    }

    /// Proposals from precomputed masks, held constant; every one is active.
    pub fn from_masks(g: &mut Graph, v: Var, masks: Vec<ProposalMask>) -> Self {
        let slots: Vec<Proposal> = masks
            .into_iter()
            .map(|mask| {
                let mask_var = g.constant_row(&mask.mask);
                let features = g.row_scale(v, mask_var);
                Proposal {
                    mask,
                    mask_var,
                    features,
                }
            })
            .collect();
        Self {
            p_alpha: slots.len(),
            slots,
            count: None,
        }
    }
}

/// Selects a count, regresses every slot and masks `v` with each.
#[allow(clippy::too_many_arguments)]
pub fn build_proposals<R: Rng>(
    g: &mut Graph,
    store: &ParamStore,
    v: Var,
    z_prime: Var,
    sel: &CountSelector,
    reg: &ProposalRegressor,
    settings: MaskSettings,
    mode: SelectionMode,
    rng: &mut R,
) -> ProposalSet {
    let count = select_count(g, store, z_prime, sel, settings.tau, mode, rng);
    let (n, _) = g.shape(v);
    let slots = regress_center_width(g, store, z_prime, reg, settings.w_min)
        .into_iter()
        .map(|(c, w)| {
            let (mask_var, mask) = mask_node(g, c, w, settings.gauss_sigma, n);
            let features = g.row_scale(v, mask_var);
            Proposal {
                mask,
                mask_var,
                features,
            }
        })
        .collect();
    ProposalSet {
        p_alpha: count.p_alpha,
        slots,
        count: Some(count),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn codebook_indexing_clamps() {
        let mut store = ParamStore::new();
        let cb = Codebook::new(&mut store, "cb", 12, 4, &mut rng(0));
        let table = store.value(cb.table).clone();
        let mut g = Graph::new();
        let first = complexity_vector(&mut g, &store, &cb, 1).unwrap();
        assert_eq!(g.value(first).row(0), table.row(0));
        let over = complexity_vector(&mut g, &store, &cb, 15).unwrap();
        assert_eq!(g.value(over).row(0), table.row(11));
        let again = complexity_vector(&mut g, &store, &cb, 15).unwrap();
        assert_eq!(g.value(over), g.value(again));
        assert_eq!(complexity_vector(&mut g, &store, &cb, 0), Err(CpgError::Alpha(0)));
    }

    #[test]
    fn interact_splits_and_reaches_codebook() {
        let mut r = rng(1);
        let mut store = ParamStore::new();
        let cb = Codebook::new(&mut store, "cb", 3, 8, &mut r);
        let block = AttentionBlock::new(&mut store, "blk", 8, 2, 16, &mut r).unwrap();
        let mut g = Graph::new();
        let z = complexity_vector(&mut g, &store, &cb, 2).unwrap();
        let v = g.constant(Array2::from_shape_fn((5, 8), |(i, j)| (i as f64 - j as f64) * 0.1));
        let q = g.constant(Array2::from_shape_fn((3, 8), |(i, j)| (i * j) as f64 * 0.05));
        let (zp, vp, qp) = interact(&mut g, &store, &block, z, v, q).unwrap();
        assert_eq!((g.shape(zp), g.shape(vp), g.shape(qp)), ((1, 8), (5, 8), (3, 8)));
        let s = g.sum(zp);
        let grads = g.backward(s).unwrap();
        let table = g.param(&store, cb.table);
        let gt = grads.get(table).unwrap();
        assert!(gt.row(1).iter().any(|x| *x != 0.0));
        assert!(gt.row(0).iter().all(|x| *x == 0.0));
    }

    #[test]
    fn one_hot_selection_maps_to_count_bounds() {
        let mut store = ParamStore::new();
        let sel = CountSelector::new(&mut store, "sel", 4, 5, 14, &mut rng(2)).unwrap();
        for (hot, want) in [(0usize, 5usize), (9, 14)] {
            // a large bias pins the draw to one index
            let mut bias = Array2::from_elem((1, 10), -1e3);
            bias[[0, hot]] = 1e3;
            let mut s = store.clone();
            s.value_mut(sel.out.bias).assign(&bias);
            let mut g = Graph::new();
            let z = g.constant(Array2::zeros((1, 4)));
            let d = select_count(&mut g, &s, z, &sel, 1.0, SelectionMode::StraightThrough, &mut rng(3));
            assert_eq!(d.p_alpha, want);
            assert_eq!(g.scalar(d.p_alpha_var), want as f64);
            let active = g.value(d.active);
            assert_eq!(active.sum(), want as f64);
            assert_eq!(active[[0, want - 1]], 1.0);
        }
    }

    #[test]
    fn zero_head_gives_half_center_and_width() {
        let mut store = ParamStore::new();
        let reg = ProposalRegressor::new(&mut store, "reg", 4, 3, &mut rng(0));
        store.value_mut(reg.head.weight).fill(0.0);
        let mut g = Graph::new();
        let z = g.constant(array![[0.3, -0.2, 1.0, 0.0]]);
        for (c, w) in regress_center_width(&mut g, &store, z, &reg, 0.05) {
            assert_eq!((g.scalar(c), g.scalar(w)), (0.5, 0.5));
        }
    }

    #[test]
    fn random_slots_are_distinct() {
        let mut store = ParamStore::new();
        let reg = ProposalRegressor::new(&mut store, "reg", 8, 2, &mut rng(5));
        let mut g = Graph::new();
        let z = g.constant(Array2::zeros((1, 8)));
        let cw = regress_center_width(&mut g, &store, z, &reg, 0.05);
        let a = (g.scalar(cw[0].0), g.scalar(cw[0].1));
        let b = (g.scalar(cw[1].0), g.scalar(cw[1].1));
        assert_ne!(a, b);
    }

    #[test]
    fn base_mask_peak_value() {
        let m = base_mask(0.5, 0.5, 8.0, 8).unwrap();
        let expect = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * 0.0625);
        assert!((m[3] - expect).abs() < 1e-12);
        assert!((expect - 6.3831).abs() < 1e-4);
        // frames 3 and 5 sit 1/8 from the center
        assert!((m[2] - m[4]).abs() < 1e-15);
        assert!(m[3] > m[2] && m[2] > m[1] && m[1] > m[0]);
        assert_eq!(base_mask(0.5, 0.0, 8.0, 8), Err(CpgError::Width(0.0)));
    }

    #[test]
    fn four_frame_flatten_trace() {
        let base = base_mask(0.5, 0.5, 8.0, 4).unwrap();
        let pm = flatten_and_normalize(&base, 0.5, 0.5);
        assert_eq!((pm.start, pm.end), (1, 2));
        let mean = (base[1] + base[2]) / 2.0;
        let expect = [base[0] / mean, 1.0, 1.0, base[3] / mean];
        for (a, b) in pm.mask.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn full_region_is_constant_one() {
        let base = base_mask(0.5, 1.0, 8.0, 10).unwrap();
        let pm = flatten_and_normalize(&base, 0.5, 1.0);
        assert_eq!((pm.start, pm.end), (0, 9));
        assert!(pm.mask.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn proposal_features_scale_rows() {
        let mut g = Graph::new();
        let v = g.constant(array![[1.0, 2.0], [3.0, 4.0]]);
        let m = g.constant_row(&[1.0, 0.5]);
        let f = g.row_scale(v, m);
        assert_eq!(g.value(f), &array![[1.0, 2.0], [1.5, 2.0]]);
        let ones = g.constant_row(&[1.0, 1.0]);
        let same = g.row_scale(v, ones);
        assert_eq!(g.value(same), g.value(v));
        let zero = g.constant_row(&[0.0, 1.0]);
        let z = g.row_scale(v, zero);
        assert_eq!(g.value(z).row(0).to_vec(), vec![0.0, 0.0]);
    }

    #[test]
    fn build_proposals_respects_count_and_region() {
        let mut r = rng(8);
        let mut store = ParamStore::new();
        let sel = CountSelector::new(&mut store, "sel", 8, 5, 14, &mut r).unwrap();
        let reg = ProposalRegressor::new(&mut store, "reg", 8, 14, &mut r);
        let settings = MaskSettings {
            gauss_sigma: 8.0,
            w_min: 0.05,
            tau: 1.0,
        };
        for seed in 0..20 {
            let mut g = Graph::new();
            let v = g.constant(Array2::from_elem((16, 8), 0.5));
            let z = g.constant(Array2::from_shape_fn((1, 8), |(_, j)| (j as f64 + seed as f64).sin()));
            let set = build_proposals(&mut g, &store, v, z, &sel, &reg, settings, SelectionMode::StraightThrough, &mut rng(seed));
            assert!((5..=14).contains(&set.p_alpha));
            assert_eq!(set.masks().len(), set.p_alpha);
            for p in &set.slots {
                let m = &p.mask;
                assert!(m.start <= m.end && m.end < 16);
                let peak = m.mask.iter().copied().fold(f64::MIN, f64::max);
                assert_eq!(peak, 1.0);
                // narrow masks underflow to exact zeros far from the center
                assert!(m.mask.iter().all(|&x| (0.0..=1.0).contains(&x)));
                assert!(m.mask[m.start..=m.end].iter().all(|&x| x > 0.0));
                assert!(m.mask[m.start..=m.end].iter().all(|&x| x == m.mask[m.start]));
            }
        }
    }
}
