//! Unlearning and privacy metrics.
//!
//! Accuracy-style metrics use mean-code predictions. The privacy probes are
//! deliberately small: a decoder MLP for reconstruction, a confidence gap for
//! membership inference and a fresh DV critic for mutual information. They are
//! meant for comparing settings against each other, not for absolute numbers.

use crate::data::{BackdoorSpec, Dataset};
use crate::error::{Error, Result};
use crate::masking::{mask_batch, stack_masked, MaskSpec};
use crate::mine::{make_pairs, dv_estimate, train_statnet, MineConfig, StatNet};
use crate::numerics::loss::squared_error;
use crate::numerics::{forward_backward, Adam, Batch, LossKind, Mlp, ParamSet, Rng, Tensor};
use crate::vib::{accuracy, class_probabilities, encode, kl_to_standard_normal, mean_cross_entropy, predict, CodeMode, VibModel};

/// Fraction of triggered samples predicted as `target_label`.
pub fn backdoor_accuracy(model: &VibModel, triggered: &Tensor, target_label: usize) -> Result<f64> {
    if triggered.rows() == 0 {
        return Err(Error::invalid("triggered set is empty"));
    }
    let pred = predict(model, triggered, CodeMode::MeanCode, &mut Rng::seeded(0))?;
    Ok(pred.iter().filter(|&&p| p == target_label).count() as f64 / pred.len() as f64)
}

/// Bound-level surrogates of `I(Z;X)` and `I(Z;Y)` and their gap.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrivacyDescriptor {
    /// Batch-mean KL of the codes to the prior.
    pub kl_upper: f64,
    /// `max(0, ln C − cross-entropy)`.
    pub ce_lower: f64,
    /// `max(0, kl_upper − ce_lower)`.
    pub phi: f64,
}

pub fn dual_privacy_descriptor(model: &VibModel, probe: &Dataset) -> Result<PrivacyDescriptor> {
    let c = model.arch.classes;
    let mut seen = vec![false; c];
    probe.labels().iter().for_each(|&y| seen[y] = true);
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::invalid(format!("probe set has no samples of class {missing}")));
    }
    let kl_upper = kl_to_standard_normal(&encode(model, probe.inputs())?);
    let ce_lower = ((c as f64).ln() - mean_cross_entropy(model, probe)?).max(0.0);
    Ok(PrivacyDescriptor {
        kl_upper,
        ce_lower,
        phi: (kl_upper - ce_lower).max(0.0),
    })
}

/// Codes a client would upload: optional masking, then the model's compressor.
pub fn client_codes(model: &VibModel, inputs: &Tensor, mask: Option<&MaskSpec>, rng: &mut Rng) -> Result<Tensor> {
    let x = match mask {
        Some(spec) => stack_masked(&mask_batch(inputs, spec, rng)?)?,
        None => inputs.clone(),
    };
    Ok(encode(model, &x)?.mean)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            hidden: vec![64],
            epochs: 200,
            batch_size: 32,
            lr: 1e-2,
            seed: 0,
        }
    }
}

/// Lower bound on the per-dimension scale used to standardise codes, so
/// that a collapsed code is not blown up into noise.
pub const MIN_CODE_SCALE: f64 = 0.1;

/// Decoder from standardised codes to inputs.
#[derive(Clone, Debug)]
pub struct Reconstructor {
    net: Mlp,
    params: ParamSet,
    shift: Vec<f64>,
    scale: Vec<f64>,
}

impl Reconstructor {
    /// Trains with Adam on squared error. Codes are standardised per
    /// dimension with statistics of the training codes.
    pub fn train(codes: &Tensor, inputs: &Tensor, config: &AttackConfig) -> Result<Self> {
        if codes.rows() != inputs.rows() || codes.rows() == 0 {
            return Err(Error::shape(format!(
                "{} codes against {} inputs",
                codes.rows(),
                inputs.rows()
            )));
        }
        if config.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        let n = codes.rows() as f64;
        let shift: Vec<f64> = codes.sum_rows().data().iter().map(|s| s / n).collect();
        let scale: Vec<f64> = (0..codes.cols())
            .map(|j| {
                let var = (0..codes.rows()).map(|i| (codes.row(i)[j] - shift[j]).powi(2)).sum::<f64>() / n;
                var.sqrt().max(MIN_CODE_SCALE)
            })
            .collect();
        let mut widths = vec![codes.cols()];
        widths.extend_from_slice(&config.hidden);
        widths.push(inputs.cols());
        let net = Mlp::new("recon", widths)?;
        let mut rng = Rng::derive(config.seed, "attack.reconstruction");
        let mut params = ParamSet::new();
        net.init(&mut params, &mut rng);
        let mut out = Reconstructor { net, params, shift, scale };
        let z = out.standardise(codes)?;
        let mut opt = Adam::new(config.lr);
        for _ in 0..config.epochs {
            for chunk in rng.permutation(codes.rows()).chunks(config.batch_size) {
                let batch = Batch::regression(z.select_rows(chunk)?, inputs.select_rows(chunk)?);
                let (_, grads) = forward_backward(&out.net, &out.params, &batch, LossKind::SquaredError)?;
                opt.step(&mut out.params, &grads)?;
            }
        }
        Ok(out)
    }

    fn standardise(&self, codes: &Tensor) -> Result<Tensor> {
        if codes.cols() != self.shift.len() {
            return Err(Error::shape(format!("codes of width {}, expected {}", codes.cols(), self.shift.len())));
        }
        let mut z = codes.clone();
        for i in 0..z.rows() {
            for (j, v) in z.row_mut(i).iter_mut().enumerate() {
                *v = (*v - self.shift[j]) / self.scale[j];
            }
        }
        Ok(z)
    }

    pub fn reconstruct(&self, codes: &Tensor) -> Result<Tensor> {
        self.net.apply(&self.params, &self.standardise(codes)?)
    }

    /// Squared error summed over features, averaged over samples.
    pub fn mse(&self, codes: &Tensor, inputs: &Tensor) -> Result<f64> {
        Ok(squared_error(&self.reconstruct(codes)?, inputs)?.0)
    }
}

/// Trains a decoder on `(train_codes, train_inputs)` and reports its error on
/// the disjoint evaluation pairs.
pub fn reconstruction_attack(
    train_codes: &Tensor,
    train_inputs: &Tensor,
    eval_codes: &Tensor,
    eval_inputs: &Tensor,
    config: &AttackConfig,
) -> Result<f64> {
    if eval_inputs.cols() != train_inputs.cols() {
        return Err(Error::shape("attacker training and evaluation inputs differ in width"));
    }
    if eval_codes.rows() != eval_inputs.rows() || eval_codes.rows() == 0 {
        return Err(Error::shape("evaluation codes and inputs differ in length"));
    }
    Reconstructor::train(train_codes, train_inputs, config)?.mse(eval_codes, eval_inputs)
}

/// Area under the ROC curve of `positive` against `negative` scores by the
/// rank statistic; ties count one half.
pub fn auc(positive: &[f64], negative: &[f64]) -> Result<f64> {
    if positive.is_empty() || negative.is_empty() {
        return Err(Error::invalid("AUC needs both classes"));
    }
    if positive.iter().chain(negative).any(|v| v.is_nan()) {
        return Err(Error::non_finite("AUC scores"));
    }
    let mut all: Vec<(f64, bool)> = positive
        .iter()
        .map(|&s| (s, true))
        .chain(negative.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Sum of mid-ranks of the positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let mid = (i + j + 1) as f64 / 2.0;
        rank_sum += mid * all[i..j].iter().filter(|(_, p)| *p).count() as f64;
        i = j;
    }
    let (p, n) = (positive.len() as f64, negative.len() as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Probability each sample's own label receives under the mean code.
pub fn true_label_confidence(model: &VibModel, data: &Dataset) -> Result<Vec<f64>> {
    let probs = class_probabilities(model, data.inputs())?;
    Ok(data.labels().iter().enumerate().map(|(i, &y)| probs.row(i)[y]).collect())
}

/// Membership inference by confidence drop: erased samples are positives,
/// non-members negatives.
pub fn mia_auc(original: &VibModel, unlearned: &VibModel, erased: &Dataset, nonmember: &Dataset) -> Result<f64> {
    let gap = |d: &Dataset| -> Result<Vec<f64>> {
        let before = true_label_confidence(original, d)?;
        let after = true_label_confidence(unlearned, d)?;
        Ok(before.iter().zip(&after).map(|(a, b)| a - b).collect())
    };
    auc(&gap(erased)?, &gap(nonmember)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeConfig {
    pub mine: MineConfig,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            mine: MineConfig::default(),
            steps: 500,
            batch_size: 64,
            seed: 0,
        }
    }
}

/// DV estimate of the dependence between row-aligned `left` and `right`,
/// from a critic trained on minibatches of the same rows.
pub fn mi_probe(left: &Tensor, right: &Tensor, config: &ProbeConfig) -> Result<f64> {
    if left.rows() != right.rows() || left.rows() < 2 {
        return Err(Error::shape("MI probe needs at least two aligned rows"));
    }
    let mut rng = Rng::derive(config.seed, "probe.mi");
    let net = StatNet::for_pairs(left.cols(), right.cols(), &config.mine.hidden, &mut rng)?;
    let n = left.rows();
    let b = config.batch_size.clamp(2, n);
    let sampler = |r: &mut Rng| -> Result<(Tensor, Tensor)> {
        let rows = r.uniform_indices(n, b, false)?;
        Ok((left.select_rows(&rows)?, right.select_rows(&rows)?))
    };
    let (net, _) = train_statnet(&net, sampler, config.steps, &config.mine, &mut rng)?;
    let perm = rng.permutation(n);
    let (joint, marginal) = make_pairs(left, right, &perm)?;
    dv_estimate(&net, &joint, &marginal)
}

/// Upload leakage: DV estimate between uploaded codes and the masked inputs
/// they were computed from. This stands in for `I(Z_e; X_e)`.
pub fn upload_leakage(z_e: &Tensor, masked_inputs: &Tensor, config: &ProbeConfig) -> Result<f64> {
    mi_probe(z_e, masked_inputs, config)
}

/// A metric value with the number of samples it was computed on.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metric {
    pub value: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub model: String,
    pub test_accuracy: Metric,
    pub backdoor_accuracy: Metric,
    pub erased_accuracy: Metric,
    /// DV estimate of `I(Z_e; Z_a)`.
    pub dv_mi: Metric,
    pub kl_upper: Metric,
    pub ce_lower: Metric,
    pub phi: Metric,
    pub recon_mse: Metric,
    pub mia_auc: Metric,
}

pub const REPORT_HEADER: &str = "model,test_acc,backdoor_acc,erased_acc,dv_mi,kl_upper,ce_lower,phi,recon_mse,mia_auc";

impl MetricsReport {
    pub fn values(&self) -> [f64; 9] {
        [
            self.test_accuracy.value,
            self.backdoor_accuracy.value,
            self.erased_accuracy.value,
            self.dv_mi.value,
            self.kl_upper.value,
            self.ce_lower.value,
            self.phi.value,
            self.recon_mse.value,
            self.mia_auc.value,
        ]
    }
}

/// One CSV row per report, after a header.
pub fn reports_to_csv(reports: &[MetricsReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Csv(e.to_string());
    w.write_record(REPORT_HEADER.split(',')).map_err(csv_err)?;
    for r in reports {
        let mut record = vec![r.model.clone()];
        record.extend(r.values().iter().map(f64::to_string));
        w.write_record(&record).map_err(csv_err)?;
    }
    String::from_utf8(w.into_inner().map_err(|e| Error::Csv(e.to_string()))?).map_err(|e| Error::Csv(e.to_string()))
}

/// Parses a report CSV back into `(model, values)` rows.
pub fn parse_reports_csv(text: &str) -> Result<Vec<(String, [f64; 9])>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| Error::Csv(e.to_string()))?;
    if header.iter().collect::<Vec<_>>().join(",") != REPORT_HEADER {
        return Err(Error::Csv(format!("unexpected header '{}'", header.iter().collect::<Vec<_>>().join(","))));
    }
    let mut out = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Csv(e.to_string()))?;
        let mut values = [0.0; 9];
        for (k, v) in values.iter_mut().enumerate() {
            *v = record[k + 1]
                .parse()
                .map_err(|_| Error::Csv(format!("row {}: bad number '{}'", line + 2, &record[k + 1])))?;
        }
        out.push((record[0].to_string(), values));
    }
    Ok(out)
}

/// Everything the evaluator needs besides the models.
#[derive(Clone, Debug)]
pub struct EvalSetup<'a> {
    pub test: &'a Dataset,
    /// Erased samples as the client holds them, without the trigger.
    pub erased_clean: &'a Dataset,
    /// Erased samples exactly as they were trained on.
    pub erased_trained: &'a Dataset,
    pub backdoor: Option<&'a BackdoorSpec>,
    /// Server-side rows the reconstruction attacker trains on.
    pub attack_train: &'a Dataset,
    /// Auxiliary rows whose codes are paired with `z_e` for `dv_mi`.
    pub auxiliary: &'a Dataset,
    /// Uploaded codes paired against the auxiliary codes for `dv_mi`.
    pub z_e: &'a Tensor,
    pub mask: Option<&'a MaskSpec>,
    pub attack: AttackConfig,
    pub probe: ProbeConfig,
}

/// Metrics for one model, relative to `original` for the membership attack.
pub fn evaluate_model(name: &str, model: &VibModel, original: &VibModel, setup: &EvalSetup<'_>) -> Result<MetricsReport> {
    let m = |value: f64, n: usize| Metric { value, n };
    let test = setup.test;
    let backdoor = match setup.backdoor {
        Some(spec) => {
            let triggered = spec.stamp_all(setup.erased_clean)?;
            m(backdoor_accuracy(model, triggered.inputs(), spec.target_label)?, triggered.len())
        }
        None => m(f64::NAN, 0),
    };
    let descriptor = dual_privacy_descriptor(model, test)?;

    let mut rng = Rng::derive(setup.attack.seed, "eval.masking");
    let known = setup.attack_train.inputs();
    let train_codes = client_codes(model, known, setup.mask, &mut rng)?;
    let x_e = setup.erased_trained.inputs();
    let eval_codes = client_codes(model, x_e, setup.mask, &mut rng)?;
    let recon = reconstruction_attack(&train_codes, known, &eval_codes, x_e, &setup.attack)?;

    let aux = setup.auxiliary;
    let k = setup.z_e.rows().min(aux.len());
    let rows: Vec<usize> = (0..k).collect();
    let z_a = encode(model, &aux.inputs().select_rows(&rows)?)?.mean;
    let dv = mi_probe(&setup.z_e.select_rows(&rows)?, &z_a, &setup.probe)?;

    Ok(MetricsReport {
        model: name.to_string(),
        test_accuracy: m(accuracy(model, test)?, test.len()),
        backdoor_accuracy: backdoor,
        erased_accuracy: m(accuracy(model, setup.erased_clean)?, setup.erased_clean.len()),
        dv_mi: m(dv, k),
        kl_upper: m(descriptor.kl_upper, test.len()),
        ce_lower: m(descriptor.ce_lower, test.len()),
        phi: m(descriptor.phi, test.len()),
        recon_mse: m(recon, x_e.rows()),
        mia_auc: m(
            mia_auc(original, model, setup.erased_trained, test)?,
            setup.erased_trained.len() + test.len(),
        ),
    })
}

/// Reports for the original, unlearned and retrained models, in that order.
pub fn full_report(
    original: &VibModel,
    unlearned: &VibModel,
    retrained: &VibModel,
    setup: &EvalSetup<'_>,
) -> Result<Vec<MetricsReport>> {
    if original.arch != unlearned.arch || original.arch != retrained.arch {
        return Err(Error::shape("models do not share an architecture"));
    }
    Ok(vec![
        evaluate_model("original", original, original, setup)?,
        evaluate_model("unlearned", unlearned, original, setup)?,
        evaluate_model("retrained", retrained, original, setup)?,
    ])
}
