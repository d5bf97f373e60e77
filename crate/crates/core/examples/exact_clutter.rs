//! Exact clutter posterior by summing over inlier subsets.
//!
//! Prints the heaviest mixture components for a small two-dimensional problem.

use ep_core::clutter::{generate_clutter_data, ClutterDataSpec};
use ep_core::oracles::{exact_clutter, exact_clutter_components};

fn main() -> ep_core::Result<()> {
    let model = generate_clutter_data(&ClutterDataSpec::new(vec![1.0, -1.0], 8, 0.3, 5))?;
    let exact = exact_clutter(&model)?;
    println!("log evidence {:.6}, {} components", exact.log_evidence, exact.component_count);
    println!("posterior mean {:?}", exact.mean.as_slice());
    println!("posterior covariance\n{:.5}", exact.covariance);

    let mut components = exact_clutter_components(&model)?;
    components.sort_by(|a, b| b.log_weight.total_cmp(&a.log_weight));
    for c in components.iter().take(5) {
        println!(
            "inliers {:08b}  weight {:.4}  mean {:?}",
            c.inliers,
            (c.log_weight - exact.log_evidence).exp(),
            c.mean.as_slice()
        );
    }
    Ok(())
}
