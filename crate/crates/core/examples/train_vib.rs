//! Trains a small information-bottleneck classifier on synthetic blobs at
//! several β and reports accuracy against the compression term.

use blind_unlearn::data::{partition_with, synth_blobs, AuxSource, PartitionOptions};
use blind_unlearn::evalkit::dual_privacy_descriptor;
use blind_unlearn::numerics::Rng;
use blind_unlearn::vib::{accuracy, train, TrainConfig, VibArch, VibModel};

fn main() -> blind_unlearn::Result<()> {
    let mut rng = Rng::seeded(7);
    let data = synth_blobs(&mut rng, 4, 200, 16, 0.05)?;
    let mut opts = PartitionOptions::new(0.05, AuxSource::HeldOut);
    opts.test_fraction = 0.25;
    let split = partition_with(&data, &opts, &mut rng)?;
    let test = split.test.clone().expect("test split requested");

    let arch = VibArch {
        n_features: 16,
        encoder_hidden: vec![64],
        latent_dim: 8,
        decoder_hidden: vec![32],
        classes: 4,
    };
    println!("beta,test_acc,kl_upper,ce_lower,phi,final_loss");
    for beta in [1e-4, 1e-3, 1e-2, 1e-1, 1.0] {
        let mut rng = Rng::seeded(11);
        let model = VibModel::new(arch.clone(), beta, &mut rng)?;
        let (model, losses) = train(&model, &split.train_set()?, &TrainConfig::default(), &mut rng)?;
        let d = dual_privacy_descriptor(&model, &test)?;
        println!(
            "{beta},{:.3},{:.3},{:.3},{:.3},{:.4}",
            accuracy(&model, &test)?,
            d.kl_upper,
            d.ce_lower,
            d.phi,
            losses.last().copied().unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
