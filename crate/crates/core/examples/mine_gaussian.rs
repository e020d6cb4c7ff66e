//! Calibrates the Donsker-Varadhan estimator on correlated Gaussians, where
//! the true mutual information is known in closed form.

use blind_unlearn::mine::{correlated_gaussians, estimate_mi, gaussian_mi, train_statnet, MineConfig, StatNet};
use blind_unlearn::numerics::Rng;

fn main() -> blind_unlearn::Result<()> {
    let config = MineConfig::default();
    println!("rho,analytic,estimate");
    for rho in [0.0, 0.5, 0.8, 0.9] {
        let mut rng = Rng::seeded(1);
        let net = StatNet::new(1, &config.hidden, &mut rng)?;
        let (net, _) = train_statnet(&net, |r| Ok(correlated_gaussians(rho, 256, r)), 2000, &config, &mut rng)?;
        let (x, y) = correlated_gaussians(rho, 20_000, &mut rng);
        let estimate = estimate_mi(&net, &x, &y, &mut rng)?;
        println!("{rho},{:.4},{estimate:.4}", gaussian_mi(rho));
    }
    Ok(())
}
