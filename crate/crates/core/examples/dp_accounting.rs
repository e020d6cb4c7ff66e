//! Privacy cost of feature-sampling masks for a 784-feature input.
//!
//! Run with `cargo run --example dp_accounting`.

use blind_unlearn::masking::{account, MaskSpec, SamplingStrategy};

fn main() -> blind_unlearn::Result<()> {
    let n = 784;
    println!("strategy,sr,k,epsilon,delta");
    for strategy in [SamplingStrategy::WithReplacement, SamplingStrategy::WithoutReplacement] {
        for sr in [0.2, 0.4, 0.6, 0.8, 1.0] {
            let spec = MaskSpec::new(n, sr, strategy)?;
            let dp = account(&spec)?;
            println!("{strategy},{sr},{},{:.3},{:.3}", spec.k(), dp.epsilon, dp.delta);
        }
    }
    Ok(())
}
