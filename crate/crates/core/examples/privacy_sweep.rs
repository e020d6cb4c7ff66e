//! Reconstruction error and the dual-privacy descriptor over a grid of β and
//! sampling rates.

use blind_unlearn::cli::{build_pipeline, privacy_sweep, sweep_csv, Config};

fn main() -> blind_unlearn::Result<()> {
    let mut config = Config::default();
    // A planted trigger would dominate the codes of the erased rows.
    config.backdoor.enabled = false;
    let rows = privacy_sweep(&config, &build_pipeline(&config)?)?;
    print!("{}", sweep_csv(&rows));
    Ok(())
}
