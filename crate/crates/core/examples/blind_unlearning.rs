//! End to end: train with a backdoored erase set, send a masked request,
//! unlearn on the server, retrain from scratch for reference and compare.

use blind_unlearn::cli::{build_pipeline, client_request, evaluate_models, retrain, train_original, unlearn_config, Config};
use blind_unlearn::evalkit::reports_to_csv;
use blind_unlearn::protocol::{validate_request, CompressorCheckpoint};
use blind_unlearn::unlearn::{trace_csv, unlearn, ForgetBatch};

fn main() -> blind_unlearn::Result<()> {
    let config = Config::default();
    let pipeline = build_pipeline(&config)?;
    println!(
        "{} training rows, {} erased (triggered), {} auxiliary",
        pipeline.train_set.len(),
        pipeline.erase_set.len(),
        pipeline.partition.auxiliary.len()
    );

    let (original, _) = train_original(&config, &pipeline, config.model.beta)?;

    let checkpoint = CompressorCheckpoint::from_model(&original, Some(config.seed));
    let request = client_request(&config, &checkpoint, &pipeline.erase_set)?;
    println!(
        "request: {} codes at sr {} (epsilon {:.3}, delta {:.3}); {:?}",
        request.len(),
        request.sr,
        request.dp.epsilon,
        request.dp.delta,
        validate_request(&request, &checkpoint)
    );

    let forget = ForgetBatch::from_request(&request, &original)?;
    let outcome = unlearn(&original, &forget, &pipeline.partition.auxiliary, &unlearn_config(&config))?;
    println!("initial dv {:.4}", outcome.initial_dv);
    print!("{}", trace_csv(&outcome.trace[outcome.trace.len().saturating_sub(3)..]));

    let retrained = retrain(&config, &pipeline)?;
    let models = vec![
        ("original".to_string(), original),
        ("unlearned".to_string(), outcome.model),
        ("retrained".to_string(), retrained),
    ];
    print!("{}", reports_to_csv(&evaluate_models(&config, &pipeline, &models)?)?);
    Ok(())
}
