//! Draws a complexity-conditioned set of proposals from a freshly initialized
//! generator and renders each mask as a bar over the frames.
//!
//!     cargo run --example proposal_masks

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scanet::cpg::{build_proposals, CountSelector, MaskSettings, ProposalRegressor};
use scanet::numkern::{Graph, ParamStore, SelectionMode};

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (frames, dim) = (40, 8);
    let mut store = ParamStore::new();
    let selector = CountSelector::new(&mut store, "count", dim, 5, 14, &mut rng).expect("valid range");
    let regressor = ProposalRegressor::new(&mut store, "prop", dim, 14, &mut rng);
    let video = store.normal("video", frames, dim, 1.0, &mut rng);
    let z = store.normal("z", 1, dim, 1.0, &mut rng);

    let mut g = Graph::new();
    let v = g.param(&store, video);
    let zv = g.param(&store, z);
    let settings = MaskSettings {
        gauss_sigma: 8.0,
        w_min: 0.05,
        tau: 1.0,
    };
    let set = build_proposals(&mut g, &store, v, zv, &selector, &regressor, settings, SelectionMode::StraightThrough, &mut rng);
    println!("{} proposals over {frames} frames", set.p_alpha);
    for p in set.active() {
        let bar: String = p
            .mask
            .mask
            .iter()
            .map(|&m| match m {
                x if x > 0.99 => '#',
                x if x > 0.5 => '+',
                x if x > 0.05 => '.',
                _ => ' ',
            })
            .collect();
        println!("c={:.2} w={:.2} |{bar}|", p.mask.center, p.mask.width);
    }
}
