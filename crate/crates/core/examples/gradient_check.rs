//! Checks reverse-mode gradients of an attention block against finite differences.
//!
//!     cargo run --example gradient_check

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scanet::numkern::{grad_check, AttentionBlock, ParamId, ParamStore, FD_STEP};

fn main() -> anyhow::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    let block = AttentionBlock::new(&mut store, "att", 8, 2, 16, &mut rng)?;
    let x = store.normal("x", 5, 8, 1.0, &mut rng);
    let ids: Vec<ParamId> = store.ids().collect();
    let report = grad_check(&store, &ids, FD_STEP, |g, s| {
        let xv = g.param(s, x);
        let out = block.forward(g, s, xv)?;
        let sq = g.mul(out, out);
        Ok(g.sum(sq))
    })?;
    println!(
        "{} entries checked, max relative error {:.2e} at {:?}",
        report.n_checked, report.max_rel_error, report.worst
    );
    Ok(())
}
