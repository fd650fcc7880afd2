use ndarray::Array2;
use rand::Rng;

use super::graph::{Graph, Var};

/// How a categorical choice is turned into a (possibly relaxed) one-hot vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionMode {
    /// Hard one-hot of `argmax(logits + gumbel)` forward, tempered softmax backward.
    StraightThrough,
    /// Tempered softmax of `logits + gumbel` in both directions (used for gradient checks).
    Soft,
    /// Noise-free hard argmax forward, tempered softmax backward (inference).
    Greedy,
}

#[derive(Debug, Clone, Copy)]
pub struct GumbelDraw {
    pub output: Var,
    pub index: usize,
}

/// One standard Gumbel sample per entry.
pub fn sample_gumbel<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            // open interval keeps both logs finite
            let u: f64 = rng.random_range(f64::EPSILON..1.0);
            -(-u.ln()).ln()
        })
        .collect()
}

fn argmax(xs: &[f64]) -> usize {
    xs.iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, x)| if x > acc.1 { (i, x) } else { acc })
        .0
}

/// Gumbel-Softmax over a `1 × n` row of logits.
pub fn gumbel_softmax<R: Rng>(
    g: &mut Graph,
    logits: Var,
    tau: f64,
    mode: SelectionMode,
    rng: &mut R,
) -> GumbelDraw {
    let (rows, n) = g.shape(logits);
    assert_eq!(rows, 1, "gumbel_softmax expects a row of logits");
    assert!(tau > 0.0, "temperature must be positive");
    let noise = match mode {
        SelectionMode::Greedy => vec![0.0; n],
        _ => sample_gumbel(rng, n),
    };
    let noise_var = g.constant_row(&noise);
    let perturbed = g.add(logits, noise_var);
    let tempered = g.scale(perturbed, 1.0 / tau);
    let soft = g.softmax_rows(tempered);
    let scores: Vec<f64> = g.value(perturbed).iter().copied().collect();
    let index = argmax(&scores);
    let output = match mode {
        SelectionMode::Soft => soft,
        SelectionMode::StraightThrough | SelectionMode::Greedy => {
            let mut hard = Array2::zeros((1, n));
            hard[[0, index]] = 1.0;
            g.straight_through(hard, soft)
        }
    };
    GumbelDraw { output, index }
}
