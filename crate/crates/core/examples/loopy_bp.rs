//! Fully factorized EP on discrete networks: exact on trees, approximate on
//! loops, with damping to tame oscillation.

use ep_core::engine::EpOptions;
use ep_core::factor_graph::{bk_adf, frustrated_triangle, loopy_ep, random_tree};
use ep_core::oracles::enumerate_discrete;

fn main() -> ep_core::Result<()> {
    let tree = random_tree(6, 3, 42);
    let exact = enumerate_discrete(&tree)?;
    let ep = loopy_ep(&tree, &EpOptions { tolerance: 1e-12, max_sweeps: 100, ..Default::default() })?;
    let l1: f64 = ep.beliefs.l1_distances(&exact.marginals).iter().sum();
    println!("tree: {} sweeps, total L1 {:.2e}, log Z error {:.2e}", ep.sweeps, l1, ep.log_evidence - exact.log_partition);

    let net = frustrated_triangle(3.0, 1.0);
    let exact = enumerate_discrete(&net)?;
    let adf = bk_adf(&net, &(0..net.factors().len()).collect::<Vec<_>>())?;
    println!("triangle: exact log Z {:.5}, one ADF pass {:.5}", exact.log_partition, adf.log_evidence);
    for damping in [1.0, 0.7, 0.4] {
        let ep = loopy_ep(&net, &EpOptions { damping, tolerance: 1e-10, max_sweeps: 500, ..Default::default() })?;
        let l1: f64 = ep.beliefs.l1_distances(&exact.marginals).iter().sum();
        println!(
            "  damping {damping}: converged {} in {} sweeps, L1 {:.4}, log Z {:.5}",
            ep.converged, ep.sweeps, l1, ep.log_evidence
        );
    }
    Ok(())
}
