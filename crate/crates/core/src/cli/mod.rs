//! Commands behind the `blind-unlearn` binary.
//!
//! Every command rebuilds the same data pipeline from the config, so the
//! partition, the trigger and all random streams agree across separate
//! invocations. Each stage draws from `Rng::derive(seed, tag)` with its own
//! tag, which keeps stages independent of each other's consumption.

pub mod config;

use std::path::{Path, PathBuf};

pub use config::{Config, DatasetKind};

use crate::data::{load_idx, partition_with, synth_blobs, BackdoorSpec, Dataset, Partition, PartitionOptions};
use crate::error::{Error, Result};
use crate::evalkit::{
    client_codes, dual_privacy_descriptor, full_report, evaluate_model, mi_probe, reconstruction_attack, reports_to_csv,
    EvalSetup, MetricsReport,
};
use crate::masking::{account_for, mask_batch, stack_masked, DpAccount, MaskSpec, SamplingStrategy};
use crate::mine::{dv_value_and_param_grad, mi_loss_for_unlearning, StatNet};
use crate::numerics::{finite_difference_check, GradCheckReport, ParamSet, Rng};
use crate::protocol::{
    export_compressor, load_model, prepare_request, save_model, write_atomic, CompressorCheckpoint, UnlearningRequest,
};
use crate::unlearn::{forget_loss_at, retrain_baseline, trace_csv, unlearn, ForgetBatch, UnlearnOutcome};
use crate::vib::{accuracy, encode, ib_loss_with_noise, train, VibArch, VibModel};

pub const MODEL_FILE: &str = "model.bin";
pub const COMPRESSOR_FILE: &str = "compressor.bin";
pub const TRAIN_TRACE_FILE: &str = "train_trace.csv";
pub const UNLEARNED_FILE: &str = "unlearned.bin";
pub const UNLEARN_TRACE_FILE: &str = "unlearn_trace.csv";
pub const RETRAINED_FILE: &str = "retrained.bin";

/// Data as every command sees it.
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub partition: Partition,
    pub backdoor: Option<BackdoorSpec>,
    /// Erased rows exactly as the original model trains on them.
    pub erase_set: Dataset,
    /// Remaining rows plus `erase_set`.
    pub train_set: Dataset,
}

impl Pipeline {
    pub fn test(&self) -> Result<&Dataset> {
        self.partition
            .test
            .as_ref()
            .ok_or_else(|| Error::Config("evaluation needs dataset.test_fraction > 0".into()))
    }

    pub fn n_features(&self) -> usize {
        self.train_set.features()
    }

    pub fn classes(&self) -> usize {
        self.train_set.classes()
    }
}

pub fn load_dataset(config: &Config) -> Result<Dataset> {
    let d = &config.dataset;
    let missing = |key: &str| Error::Config(format!("{key} is not set"));
    match d.kind {
        DatasetKind::Blobs => synth_blobs(&mut Rng::derive(config.seed, "data"), d.classes, d.per_class, d.dim, d.spread),
        DatasetKind::Idx => load_idx(
            d.images.as_ref().ok_or_else(|| missing("dataset.images"))?,
            d.labels.as_ref().ok_or_else(|| missing("dataset.labels"))?,
        ),
        DatasetKind::Csv => {
            let path = d.csv.as_ref().ok_or_else(|| missing("dataset.csv"))?;
            Dataset::from_csv(&std::fs::read_to_string(path)?, d.classes)
        }
    }
}

pub fn build_pipeline(config: &Config) -> Result<Pipeline> {
    let data = load_dataset(config)?;
    let backdoor = if config.backdoor.enabled {
        let spec = config.backdoor.spec(data.features());
        spec.validate(data.features(), data.classes())?;
        Some(spec)
    } else {
        None
    };
    let opts = PartitionOptions {
        edr: config.dataset.edr,
        aux_source: config.dataset.aux_source,
        test_fraction: config.dataset.test_fraction,
        erase_exclude_label: backdoor.as_ref().map(|b| b.target_label),
    };
    let partition = partition_with(&data, &opts, &mut Rng::derive(config.seed, "partition"))?;
    let erase_set = match &backdoor {
        Some(spec) => spec.stamp_all(&partition.erased)?,
        None => partition.erased.clone(),
    };
    let train_set = partition.remaining.concat(&erase_set)?;
    Ok(Pipeline {
        partition,
        backdoor,
        erase_set,
        train_set,
    })
}

/// Trains the original model at `beta` on the pipeline's training set.
pub fn train_original(config: &Config, pipeline: &Pipeline, beta: f64) -> Result<(VibModel, Vec<f64>)> {
    let mut rng = Rng::derive(config.seed, "train");
    let arch = config.arch(pipeline.n_features(), pipeline.classes());
    let model = VibModel::new(arch, beta, &mut rng)?;
    train(&model, &pipeline.train_set, &config.train, &mut rng)
}

fn loss_trace_csv(losses: &[f64]) -> String {
    let mut out = String::from("epoch,loss\n");
    for (i, l) in losses.iter().enumerate() {
        out.push_str(&format!("{},{l}\n", i + 1));
    }
    out
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

/// Writes the full model, its compressor and the loss trace into `out_dir`.
pub fn cmd_train(config: &Config, out_dir: &Path) -> Result<VibModel> {
    let pipeline = build_pipeline(config)?;
    let (model, losses) = train_original(config, &pipeline, config.model.beta)?;
    create_dir(out_dir)?;
    save_model(&model, Some(config.seed), out_dir.join(MODEL_FILE))?;
    export_compressor(&model, Some(config.seed), out_dir.join(COMPRESSOR_FILE))?;
    write_atomic(out_dir.join(TRAIN_TRACE_FILE), loss_trace_csv(&losses).as_bytes())?;
    Ok(model)
}

pub fn cmd_export_compressor(config: &Config, model_path: &Path, out: &Path) -> Result<CompressorCheckpoint> {
    export_compressor(&load_model(model_path)?, Some(config.seed), out)
}

/// The client side: mask, compress, attach the accounting. Without
/// `erase_csv` the pipeline's erase set is used.
pub fn cmd_prepare_request(
    config: &Config,
    compressor_path: &Path,
    erase_csv: Option<&Path>,
    out: &Path,
) -> Result<UnlearningRequest> {
    let checkpoint = CompressorCheckpoint::load(compressor_path)?;
    let erased = match erase_csv {
        Some(path) => Dataset::from_csv(&std::fs::read_to_string(path)?, checkpoint.classes)?,
        None => build_pipeline(config)?.erase_set,
    };
    let request = client_request(config, &checkpoint, &erased)?;
    request.save(out)?;
    Ok(request)
}

/// Request for `erased` under the configured mask, from the "client.mask" stream.
pub fn client_request(config: &Config, checkpoint: &CompressorCheckpoint, erased: &Dataset) -> Result<UnlearningRequest> {
    let spec = config.mask.spec(checkpoint.n_features)?;
    let mut rng = Rng::derive(config.seed, "client.mask");
    prepare_request(checkpoint, erased.inputs(), erased.labels(), &spec, config.mask.mode, &mut rng)
}

/// Unlearns with the pipeline's auxiliary set and writes the model and trace.
pub fn cmd_unlearn(config: &Config, model_path: &Path, request_path: &Path, out_dir: &Path) -> Result<UnlearnOutcome> {
    let model = load_model(model_path)?;
    let request = UnlearningRequest::load(request_path)?;
    let forget = ForgetBatch::from_request(&request, &model)?;
    let pipeline = build_pipeline(config)?;
    let outcome = unlearn(&model, &forget, &pipeline.partition.auxiliary, &unlearn_config(config))?;
    create_dir(out_dir)?;
    save_model(&outcome.model, Some(config.seed), out_dir.join(UNLEARNED_FILE))?;
    write_atomic(out_dir.join(UNLEARN_TRACE_FILE), trace_csv(&outcome.trace).as_bytes())?;
    Ok(outcome)
}

pub fn unlearn_config(config: &Config) -> crate::unlearn::UnlearnConfig {
    crate::unlearn::UnlearnConfig {
        seed: config.seed,
        ..config.unlearn.clone()
    }
}

/// Trains from scratch on the remaining rows only.
pub fn cmd_retrain_baseline(config: &Config, out_dir: &Path) -> Result<VibModel> {
    let pipeline = build_pipeline(config)?;
    let model = retrain(config, &pipeline)?;
    create_dir(out_dir)?;
    save_model(&model, Some(config.seed), out_dir.join(RETRAINED_FILE))?;
    Ok(model)
}

pub fn retrain(config: &Config, pipeline: &Pipeline) -> Result<VibModel> {
    let arch = config.arch(pipeline.n_features(), pipeline.classes());
    let mut rng = Rng::derive(config.seed, "retrain");
    retrain_baseline(&arch, config.model.beta, &pipeline.partition.remaining, &config.train, &mut rng)
}

/// Metrics of each model against the first, which is the original.
pub fn evaluate_models(config: &Config, pipeline: &Pipeline, models: &[(String, VibModel)]) -> Result<Vec<MetricsReport>> {
    let (_, original) = models.first().ok_or_else(|| Error::invalid("no models to evaluate"))?;
    let request = client_request(config, &CompressorCheckpoint::from_model(original, None), &pipeline.erase_set)?;
    let mask = config.mask.spec(pipeline.n_features())?;
    let setup = EvalSetup {
        test: pipeline.test()?,
        erased_clean: &pipeline.partition.erased,
        erased_trained: &pipeline.erase_set,
        backdoor: pipeline.backdoor.as_ref(),
        attack_train: &pipeline.partition.remaining,
        auxiliary: &pipeline.partition.auxiliary,
        z_e: &request.z_e,
        mask: Some(&mask),
        attack: config.attack.clone(),
        probe: config.probe.clone(),
    };
    if let [(_, o), (un, u), (rn, r)] = models {
        if un == "unlearned" && rn == "retrained" {
            return full_report(o, u, r, &setup);
        }
    }
    models
        .iter()
        .map(|(name, model)| evaluate_model(name, model, original, &setup))
        .collect()
}

pub fn cmd_evaluate(config: &Config, model_paths: &[PathBuf], out: &Path) -> Result<Vec<MetricsReport>> {
    let models = model_paths
        .iter()
        .map(|p| {
            let name = p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned());
            Ok((name, load_model(p)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let reports = evaluate_models(config, &build_pipeline(config)?, &models)?;
    write_atomic(out, reports_to_csv(&reports)?.as_bytes())?;
    Ok(reports)
}

/// `epsilon,delta` with a header, for `sr · n` rounded half up draws.
pub fn cmd_dp_account(n: usize, sr: f64, strategy: SamplingStrategy) -> Result<(DpAccount, String)> {
    let k = MaskSpec::new(n, sr, strategy)?.k();
    let dp = account_for(n, k, strategy)?;
    let text = format!("epsilon,delta\n{},{}\n", dp.epsilon, dp.delta);
    Ok((dp, text))
}

/// One finite-difference comparison.
#[derive(Clone, Debug)]
pub struct GradCheckRow {
    pub loss: &'static str,
    pub seed: u64,
    pub report: GradCheckReport,
}

pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_TOL: f64 = 1e-4;

/// Finite-difference checks of the IB loss, the DV objective (critic
/// parameters and code inputs) and the forgetting loss on a small random
/// model drawn from `seed`.
pub fn gradient_checks(seed: u64) -> Result<Vec<GradCheckRow>> {
    let mut rng = Rng::derive(seed, "gradcheck");
    let arch = VibArch {
        n_features: 5,
        encoder_hidden: vec![7],
        latent_dim: 2,
        decoder_hidden: vec![6],
        classes: 3,
    };
    let model = VibModel::new(arch, 0.01, &mut rng)?;
    let x = rng.uniform_tensor(&[6, 5], 0.0, 1.0);
    let y = vec![0, 1, 2, 2, 1, 0];
    let eps = rng.gaussian(&[6, 2]);
    let statnet = StatNet::new(2, &[8, 8], &mut rng)?;
    let z_e = rng.gaussian(&[6, 2]);
    let z_a = rng.gaussian(&[6, 2]);
    let perm = rng.permutation(6);
    let (joint, marginal) = crate::mine::make_pairs(&z_e, &z_a, &perm)?;
    let forget = ForgetBatch::from_parts(z_e.clone(), vec![1, 2, 0, 1, 2, 0]);
    let (h, tol) = (GRADCHECK_STEP, GRADCHECK_TOL);

    let mut rows = Vec::new();
    let mut push = |loss, report| rows.push(GradCheckRow { loss, seed, report });

    push(
        "ib",
        finite_difference_check(
            &model.params,
            |p| {
                let (l, g) = ib_loss_with_noise(&model, p, &x, &y, &eps)?;
                Ok((l.total, g))
            },
            h,
            tol,
        )?,
    );
    push(
        "dv_critic",
        finite_difference_check(&statnet.params, |p| dv_value_and_param_grad(&statnet, p, &joint, &marginal), h, tol)?,
    );
    let mut codes = ParamSet::new();
    codes.insert("z_a", z_a.clone());
    codes.insert("z_e", z_e.clone());
    push(
        "dv_codes",
        finite_difference_check(
            &codes,
            |p| {
                let l = mi_loss_for_unlearning(&statnet, p.require("z_e")?, p.require("z_a")?, &perm)?;
                let mut g = ParamSet::new();
                g.insert("z_a", l.grad_z_a);
                g.insert("z_e", l.grad_z_e);
                Ok((l.value, g))
            },
            h,
            tol,
        )?,
    );
    push(
        "forget",
        finite_difference_check(
            &model.params,
            |p| {
                let fl = forget_loss_at(&model, p, &statnet, &forget, &x, &perm, 0.5)?;
                Ok((fl.total, fl.grads))
            },
            h,
            tol,
        )?,
    );
    Ok(rows)
}

pub fn gradcheck_csv(rows: &[GradCheckRow]) -> String {
    let mut out = String::from("loss,seed,max_rel_error,checked,skipped,passed\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.loss, r.seed, r.report.max_rel_error, r.report.checked, r.report.kinks, r.report.passed
        ));
    }
    out
}

/// Checks for seeds `seed .. seed + count`.
pub fn cmd_gradcheck(seed: u64, count: u64) -> Result<Vec<GradCheckRow>> {
    let mut rows = Vec::new();
    for s in seed..seed + count {
        rows.extend(gradient_checks(s)?);
    }
    Ok(rows)
}

/// One cell of the privacy sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub beta: f64,
    pub sr: f64,
    pub test_acc: f64,
    pub kl_upper: f64,
    pub ce_lower: f64,
    pub phi: f64,
    pub recon_mse: f64,
    /// DV estimate between uploaded codes and the masked inputs.
    pub upload_dv: f64,
}

pub const SWEEP_HEADER: &str = "beta,sr,test_acc,kl_upper,ce_lower,phi,recon_mse,upload_dv";

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.beta, r.sr, r.test_acc, r.kl_upper, r.ce_lower, r.phi, r.recon_mse, r.upload_dv
        ));
    }
    out
}

/// Trains one model per β and attacks it at every SR. The attacker learns
/// from masked codes of the remaining rows and is scored on the erase set.
pub fn privacy_sweep(config: &Config, pipeline: &Pipeline) -> Result<Vec<SweepRow>> {
    let test = pipeline.test()?;
    let n = pipeline.n_features();
    let x_e = pipeline.erase_set.inputs();
    let known = pipeline.partition.remaining.inputs();
    let mut rows = Vec::new();
    for &beta in &config.sweep.betas {
        let (model, _) = train_original(config, pipeline, beta)?;
        let descriptor = dual_privacy_descriptor(&model, test)?;
        let test_acc = accuracy(&model, test)?;
        for &sr in &config.sweep.srs {
            let spec = MaskSpec::new(n, sr, config.sweep.strategy)?.with_mask_value(config.mask.mask_value)?;
            let mut rng = Rng::derive(config.seed, "eval.masking");
            let train_codes = client_codes(&model, known, Some(&spec), &mut rng)?;
            let masked_e = stack_masked(&mask_batch(x_e, &spec, &mut rng)?)?;
            let z_e = encode(&model, &masked_e)?.mean;
            let recon_mse = reconstruction_attack(&train_codes, known, &z_e, x_e, &config.attack)?;
            let upload_dv = mi_probe(&z_e, &masked_e, &config.probe)?;
            rows.push(SweepRow {
                beta,
                sr,
                test_acc,
                kl_upper: descriptor.kl_upper,
                ce_lower: descriptor.ce_lower,
                phi: descriptor.phi,
                recon_mse,
                upload_dv,
            });
        }
    }
    Ok(rows)
}

pub fn cmd_sweep(config: &Config, out: &Path) -> Result<Vec<SweepRow>> {
    let rows = privacy_sweep(config, &build_pipeline(config)?)?;
    write_atomic(out, sweep_csv(&rows).as_bytes())?;
    Ok(rows)
}
