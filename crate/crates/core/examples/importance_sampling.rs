//! Importance-sampling reference values and how their error bars shrink.

use ep_core::clutter::{generate_clutter_data, ClutterDataSpec};
use ep_core::oracles::{exact_clutter, importance_sampler};

fn main() -> ep_core::Result<()> {
    let model = generate_clutter_data(&ClutterDataSpec::new(vec![2.0], 12, 0.5, 1))?;
    let exact = exact_clutter(&model)?;
    let prior = model.prior_gaussian().to_full();
    println!("exact evidence {:.4e}, mean {:.5}", exact.log_evidence.exp(), exact.mean[0]);
    for samples in [100, 1_000, 10_000, 100_000] {
        let is = importance_sampler(|x| model.log_likelihood(x), &prior, samples, 9)?;
        println!(
            "S={samples:>6}: evidence {:.4e} ± {:.1e}, mean {:.5} ± {:.1e}, ESS {:.0}",
            is.evidence.value, is.evidence.standard_error, is.mean.value[0], is.mean.standard_error[0], is.ess
        );
    }
    Ok(())
}
