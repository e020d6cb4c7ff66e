//! Finite-difference checks of the IB, DV and forgetting gradients.

use blind_unlearn::cli::{cmd_gradcheck, gradcheck_csv};

fn main() -> blind_unlearn::Result<()> {
    let rows = cmd_gradcheck(0, 5)?;
    print!("{}", gradcheck_csv(&rows));
    let failed = rows.iter().filter(|r| !r.report.passed).count();
    println!("{failed} of {} checks failed", rows.len());
    Ok(())
}
