//! The client/server exchange: the server publishes a compressor, the client
//! uploads masked codes, the server validates them. Tampered or stale
//! requests are rejected.

use blind_unlearn::data::synth_blobs;
use blind_unlearn::masking::{MaskSpec, SamplingStrategy};
use blind_unlearn::numerics::Rng;
use blind_unlearn::protocol::{prepare_request, validate_request, CompressorCheckpoint, UnlearningRequest};
use blind_unlearn::vib::{CodeMode, VibArch, VibModel};

fn main() -> blind_unlearn::Result<()> {
    let mut rng = Rng::seeded(3);
    let arch = VibArch {
        n_features: 16,
        encoder_hidden: vec![32],
        latent_dim: 4,
        decoder_hidden: vec![],
        classes: 4,
    };
    let model = VibModel::new(arch, 1e-3, &mut rng)?;
    let checkpoint = CompressorCheckpoint::from_model(&model, Some(3));
    let published = checkpoint.to_bytes()?;
    println!("compressor: {} bytes, hash {:016x}", published.len(), checkpoint.hash()?);

    let client_copy = CompressorCheckpoint::from_bytes(&published)?;
    let erased = synth_blobs(&mut rng, 4, 5, 16, 0.05)?;
    let spec = MaskSpec::new(16, 0.6, SamplingStrategy::WithReplacement)?;
    let request = prepare_request(&client_copy, erased.inputs(), erased.labels(), &spec, CodeMode::MeanCode, &mut rng)?;
    let bytes = request.to_bytes()?;
    println!("request: {} codes, {} bytes, epsilon {:.3}", request.len(), bytes.len(), request.dp.epsilon);

    let received = UnlearningRequest::from_bytes(&bytes)?;
    assert_eq!(received.to_bytes()?, bytes);
    println!("genuine: {:?}", validate_request(&received, &checkpoint));

    let mut tampered = received.clone();
    tampered.dp.epsilon /= 2.0;
    println!("halved epsilon: {:?}", validate_request(&tampered, &checkpoint));

    let newer = VibModel::new(model.arch.clone(), 1e-3, &mut rng)?;
    println!("stale checkpoint: {:?}", validate_request(&received, &CompressorCheckpoint::from_model(&newer, None)));
    Ok(())
}
