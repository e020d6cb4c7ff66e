//! Variational information-bottleneck classifier.
//!
//! The compressor maps an input to a diagonal Gaussian `N(μ, diag σ²)` over a
//! `latent_dim`-dimensional code; the approximator classifies a code sample.
//! Training minimises `β · KL(p(z|x) ‖ N(0, I)) + CE(y, approximator(z))` with
//! one reparameterised sample per example.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numerics::loss::{softmax, softmax_cross_entropy};
use crate::numerics::{argmax, Mlp, MlpTape, ParamSet, Rng, Sgd, Tensor};

/// Log-variance is clamped to `[-LOG_VAR_LIMIT, LOG_VAR_LIMIT]`.
pub const LOG_VAR_LIMIT: f64 = 10.0;

pub const COMPRESSOR_PREFIX: &str = "enc";
pub const APPROXIMATOR_PREFIX: &str = "dec";

/// Layer layout of a VIB model.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VibArch {
    pub n_features: usize,
    pub encoder_hidden: Vec<usize>,
    pub latent_dim: usize,
    pub decoder_hidden: Vec<usize>,
    pub classes: usize,
}

impl VibArch {
    pub fn compressor(&self) -> Result<Mlp> {
        let mut widths = vec![self.n_features];
        widths.extend_from_slice(&self.encoder_hidden);
        widths.push(2 * self.latent_dim);
        Mlp::new(COMPRESSOR_PREFIX, widths)
    }

    pub fn approximator(&self) -> Result<Mlp> {
        let mut widths = vec![self.latent_dim];
        widths.extend_from_slice(&self.decoder_hidden);
        widths.push(self.classes);
        Mlp::new(APPROXIMATOR_PREFIX, widths)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::invalid("a classifier needs at least 2 classes"));
        }
        if self.latent_dim == 0 {
            return Err(Error::invalid("latent_dim must be positive"));
        }
        self.compressor()?;
        self.approximator()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VibModel {
    pub arch: VibArch,
    pub beta: f64,
    /// Compressor (`enc.*`) and approximator (`dec.*`) parameters.
    pub params: ParamSet,
}

/// Per-example diagonal Gaussian code.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianCode {
    pub mean: Tensor,
    pub log_var: Tensor,
}

/// How a code is turned into a representation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CodeMode {
    /// `z = μ`.
    MeanCode,
    /// `z = μ + σ ⊙ ε`.
    Sampled,
}

impl std::str::FromStr for CodeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean-code" | "mean" => Ok(CodeMode::MeanCode),
            "sampled" => Ok(CodeMode::Sampled),
            other => Err(Error::invalid(format!("unknown code mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for CodeMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CodeMode::MeanCode => "mean-code",
            CodeMode::Sampled => "sampled",
        })
    }
}

/// Value of the IB objective split into its terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IbLoss {
    pub total: f64,
    /// Batch-mean KL to the standard normal prior.
    pub com_term: f64,
    /// Cross-entropy of the approximator on the sampled code.
    pub app_term: f64,
}

/// Forward state of the compressor kept for backpropagation.
pub(crate) struct EncodePass {
    tape: MlpTape,
    pub(crate) code: GaussianCode,
    raw_log_var: Tensor,
}

/// Runs a compressor network and splits its output into mean and clamped log-variance.
pub(crate) fn encode_pass(compressor: &Mlp, params: &ParamSet, inputs: &Tensor) -> Result<EncodePass> {
    let tape = compressor.forward(params, inputs)?;
    let d = compressor.output_width() / 2;
    let out = tape.output();
    let mean = out.slice_cols(0, d)?;
    let raw_log_var = out.slice_cols(d, 2 * d)?;
    let log_var = raw_log_var.map(|v| v.clamp(-LOG_VAR_LIMIT, LOG_VAR_LIMIT));
    if !mean.is_finite() || !log_var.is_finite() {
        return Err(Error::non_finite("compressor output"));
    }
    Ok(EncodePass {
        tape,
        code: GaussianCode { mean, log_var },
        raw_log_var,
    })
}

/// Backpropagates gradients on `(μ, log σ²)` through the clamp and the compressor.
pub(crate) fn encode_backward(
    compressor: &Mlp,
    params: &ParamSet,
    pass: &EncodePass,
    d_mean: &Tensor,
    d_log_var: &Tensor,
    grads: &mut ParamSet,
) -> Result<()> {
    let d_raw = d_log_var.zip_map(&pass.raw_log_var, |g, raw| {
        if raw.abs() < LOG_VAR_LIMIT {
            g
        } else {
            0.0
        }
    })?;
    let d_out = d_mean.hcat(&d_raw)?;
    compressor.backward(params, &pass.tape, &d_out, grads)?;
    Ok(())
}

/// `μ + exp(½ log σ²) ⊙ ε`.
pub(crate) fn reparameterize(code: &GaussianCode, eps: &Tensor) -> Result<Tensor> {
    let sigma = code.log_var.map(|lv| (0.5 * lv).exp());
    let noise = sigma.zip_map(eps, |s, e| s * e)?;
    code.mean.zip_map(&noise, |m, n| m + n)
}

/// Gradients on `(μ, log σ²)` from a gradient on the reparameterised sample.
pub(crate) fn reparameterize_backward(code: &GaussianCode, eps: &Tensor, d_z: &Tensor) -> Result<(Tensor, Tensor)> {
    let d_mean = d_z.clone();
    let scale = code.log_var.zip_map(eps, |lv, e| 0.5 * e * (0.5 * lv).exp())?;
    let d_log_var = d_z.zip_map(&scale, |g, s| g * s)?;
    Ok((d_mean, d_log_var))
}

impl GaussianCode {
    pub fn batch(&self) -> usize {
        self.mean.rows()
    }

    pub fn latent_dim(&self) -> usize {
        self.mean.cols()
    }

    /// Representation under `mode`; `rng` is only drawn from when sampling.
    pub fn representation(&self, mode: CodeMode, rng: &mut Rng) -> Result<Tensor> {
        match mode {
            CodeMode::MeanCode => Ok(self.mean.clone()),
            CodeMode::Sampled => sample_code(self, rng),
        }
    }
}

impl VibModel {
    /// Randomly initialised model.
    pub fn new(arch: VibArch, beta: f64, rng: &mut Rng) -> Result<Self> {
        Self::check_beta(beta)?;
        arch.validate()?;
        let mut params = ParamSet::new();
        arch.compressor()?.init(&mut params, rng);
        arch.approximator()?.init(&mut params, rng);
        Ok(VibModel { arch, beta, params })
    }

    /// All weights and biases zero: unit Gaussian codes and uniform predictions.
    pub fn zeros(arch: VibArch, beta: f64) -> Result<Self> {
        Self::check_beta(beta)?;
        arch.validate()?;
        let mut params = ParamSet::new();
        arch.compressor()?.init_zeros(&mut params);
        arch.approximator()?.init_zeros(&mut params);
        Ok(VibModel { arch, beta, params })
    }

    fn check_beta(beta: f64) -> Result<()> {
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::invalid(format!("beta must be finite and ≥ 0, got {beta}")));
        }
        Ok(())
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    pub fn compressor(&self) -> Mlp {
        self.arch.compressor().expect("validated architecture")
    }

    pub fn approximator(&self) -> Mlp {
        self.arch.approximator().expect("validated architecture")
    }

    pub fn compressor_params(&self) -> ParamSet {
        self.params.with_prefix(&format!("{COMPRESSOR_PREFIX}."))
    }

    pub fn approximator_params(&self) -> ParamSet {
        self.params.with_prefix(&format!("{APPROXIMATOR_PREFIX}."))
    }

    /// Class logits for a batch of codes.
    pub fn classify_codes(&self, z: &Tensor) -> Result<Tensor> {
        self.approximator().apply(&self.params, z)
    }
}

pub fn encode(model: &VibModel, inputs: &Tensor) -> Result<GaussianCode> {
    Ok(encode_pass(&model.compressor(), &model.params, inputs)?.code)
}

/// One reparameterised sample per row.
pub fn sample_code(code: &GaussianCode, rng: &mut Rng) -> Result<Tensor> {
    let eps = rng.gaussian(code.mean.shape());
    reparameterize(code, &eps)
}

/// Batch mean of `½ Σ_j (μ_j² + σ_j² − 1 − log σ_j²)`.
pub fn kl_to_standard_normal(code: &GaussianCode) -> f64 {
    let rows = code.batch().max(1) as f64;
    let total: f64 = code
        .mean
        .data()
        .iter()
        .zip(code.log_var.data())
        .map(|(&m, &lv)| 0.5 * (m * m + lv.exp() - 1.0 - lv))
        .sum();
    total / rows
}

/// IB objective and gradients for a fixed noise draw `eps` (batch × latent_dim).
pub fn ib_loss_with_noise(
    model: &VibModel,
    params: &ParamSet,
    inputs: &Tensor,
    labels: &[usize],
    eps: &Tensor,
) -> Result<(IbLoss, ParamSet)> {
    let compressor = model.compressor();
    let approximator = model.approximator();
    let pass = encode_pass(&compressor, params, inputs)?;
    let code = &pass.code;
    let z = reparameterize(code, eps)?;
    let tape = approximator.forward(params, &z)?;
    let (app_term, d_logits) = softmax_cross_entropy(tape.output(), labels)?;
    let com_term = kl_to_standard_normal(code);
    if !com_term.is_finite() {
        return Err(Error::non_finite("KL (com_term)"));
    }
    if !app_term.is_finite() {
        return Err(Error::non_finite("cross-entropy (app_term)"));
    }
    let total = model.beta * com_term + app_term;

    let mut grads = params.zeros_like();
    let d_z = approximator.backward(params, &tape, &d_logits, &mut grads)?;
    let (mut d_mean, mut d_log_var) = reparameterize_backward(code, eps, &d_z)?;
    let kl_scale = model.beta / code.batch() as f64;
    d_mean.axpy(kl_scale, &code.mean)?;
    d_log_var.axpy(0.5 * kl_scale, &code.log_var.map(|lv| lv.exp() - 1.0))?;
    encode_backward(&compressor, params, &pass, &d_mean, &d_log_var, &mut grads)?;

    Ok((
        IbLoss {
            total,
            com_term,
            app_term,
        },
        grads,
    ))
}

/// IB objective on a labelled batch with fresh noise, plus gradients.
pub fn ib_loss_and_grad(model: &VibModel, inputs: &Tensor, labels: &[usize], rng: &mut Rng) -> Result<(IbLoss, ParamSet)> {
    let eps = rng.gaussian(&[inputs.rows(), model.latent_dim()]);
    ib_loss_with_noise(model, &model.params, inputs, labels, &eps)
}

pub fn ib_loss(model: &VibModel, inputs: &Tensor, labels: &[usize], rng: &mut Rng) -> Result<IbLoss> {
    Ok(ib_loss_and_grad(model, inputs, labels, rng)?.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 20,
            lr: 0.05,
            momentum: Some(0.9),
        }
    }
}

/// Loss above which training is declared divergent.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Minibatch SGD on the IB objective. Returns the model and the mean total
/// loss of each epoch.
pub fn train(model: &VibModel, data: &Dataset, config: &TrainConfig, rng: &mut Rng) -> Result<(VibModel, Vec<f64>)> {
    if config.batch_size == 0 {
        return Err(Error::invalid("batch_size must be positive"));
    }
    if data.features() != model.arch.n_features {
        return Err(Error::shape(format!(
            "model expects {} features, dataset has {}",
            model.arch.n_features,
            data.features()
        )));
    }
    let mut model = model.clone();
    let mut opt = Sgd::new(config.lr, config.momentum);
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let order = rng.permutation(data.len());
        let mut sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            let x = data.inputs().select_rows(chunk)?;
            let y: Vec<usize> = chunk.iter().map(|&i| data.labels()[i]).collect();
            let (loss, grads) = ib_loss_and_grad(&model, &x, &y, rng)?;
            if !(loss.total.abs() <= DIVERGENCE_LIMIT) || !grads.is_finite() {
                return Err(Error::Divergence(format!("epoch {epoch}: loss {}", loss.total)));
            }
            opt.step(&mut model.params, &grads)?;
            sum += loss.total;
            batches += 1;
        }
        trace.push(sum / batches as f64);
    }
    Ok((model, trace))
}

/// Class probabilities under the mean code.
pub fn class_probabilities(model: &VibModel, inputs: &Tensor) -> Result<Tensor> {
    let code = encode(model, inputs)?;
    Ok(softmax(&model.classify_codes(&code.mean)?))
}

/// Predicted labels; ties resolve to the lowest class index.
pub fn predict(model: &VibModel, inputs: &Tensor, mode: CodeMode, rng: &mut Rng) -> Result<Vec<usize>> {
    let z = encode(model, inputs)?.representation(mode, rng)?;
    let logits = model.classify_codes(&z)?;
    Ok((0..logits.rows()).map(|i| argmax(logits.row(i))).collect())
}

/// Mean-code accuracy on a labelled set.
pub fn accuracy(model: &VibModel, data: &Dataset) -> Result<f64> {
    let pred = predict(model, data.inputs(), CodeMode::MeanCode, &mut Rng::seeded(0))?;
    let hits = pred.iter().zip(data.labels()).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / data.len() as f64)
}

/// Mean cross-entropy of the mean-code predictions.
pub fn mean_cross_entropy(model: &VibModel, data: &Dataset) -> Result<f64> {
    let code = encode(model, data.inputs())?;
    let logits = model.classify_codes(&code.mean)?;
    Ok(softmax_cross_entropy(&logits, data.labels())?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_difference_check;

    fn small_arch() -> VibArch {
        VibArch {
            n_features: 6,
            encoder_hidden: vec![10],
            latent_dim: 3,
            decoder_hidden: vec![8],
            classes: 4,
        }
    }

    #[test]
    fn zero_model_gives_unit_gaussian_and_uniform_softmax() {
        let model = VibModel::zeros(small_arch(), 0.5).unwrap();
        let x = Tensor::full(&[5, 6], 0.7);
        let code = encode(&model, &x).unwrap();
        assert!(code.mean.data().iter().all(|&v| v == 0.0));
        assert!(code.log_var.data().iter().all(|&v| v == 0.0));
        assert_eq!(kl_to_standard_normal(&code), 0.0);
        let loss = ib_loss(&model, &x, &[0, 1, 2, 3, 0], &mut Rng::seeded(1)).unwrap();
        assert!((loss.app_term - 4f64.ln()).abs() < 1e-12);
        assert_eq!(loss.com_term, 0.0);
        let pred = predict(&model, &x, CodeMode::MeanCode, &mut Rng::seeded(0)).unwrap();
        assert_eq!(pred, vec![0; 5]);
    }

    #[test]
    fn encode_is_row_wise() {
        let model = VibModel::new(small_arch(), 0.1, &mut Rng::seeded(2)).unwrap();
        let row = Rng::seeded(3).uniform_tensor(&[1, 6], 0.0, 1.0);
        let tripled = row.vcat(&row).unwrap().vcat(&row).unwrap();
        let one = encode(&model, &row).unwrap();
        let three = encode(&model, &tripled).unwrap();
        for i in 0..3 {
            assert_eq!(three.mean.row(i), one.mean.row(0));
            assert_eq!(three.log_var.row(i), one.log_var.row(0));
        }
    }

    #[test]
    fn log_var_is_clamped() {
        let mut model = VibModel::new(small_arch(), 0.1, &mut Rng::seeded(2)).unwrap();
        let b = model.params.get_mut("enc.l01.b").unwrap();
        b.data_mut()[3] = 50.0;
        b.data_mut()[4] = -50.0;
        let code = encode(&model, &Tensor::full(&[2, 6], 0.5)).unwrap();
        assert!(code.log_var.data().iter().all(|v| v.abs() <= LOG_VAR_LIMIT));
        assert_eq!(code.log_var.row(0)[0], LOG_VAR_LIMIT);
        assert_eq!(code.log_var.row(0)[1], -LOG_VAR_LIMIT);
    }

    #[test]
    fn encode_rejects_wrong_width() {
        let model = VibModel::zeros(small_arch(), 0.1).unwrap();
        assert!(matches!(encode(&model, &Tensor::zeros(&[1, 5])), Err(Error::Shape(_))));
    }

    #[test]
    fn kl_closed_form_cases() {
        let code = GaussianCode {
            mean: Tensor::new(vec![1, 1], vec![1.0]).unwrap(),
            log_var: Tensor::new(vec![1, 1], vec![0.0]).unwrap(),
        };
        assert_eq!(kl_to_standard_normal(&code), 0.5);
    }

    #[test]
    fn tight_code_samples_stay_near_mean() {
        let code = GaussianCode {
            mean: Tensor::full(&[1000, 4], 0.3),
            log_var: Tensor::full(&[1000, 4], -10.0),
        };
        let z = sample_code(&code, &mut Rng::seeded(4)).unwrap();
        let inside = z.data().iter().filter(|&&v| (v - 0.3).abs() < 0.05).count();
        // σ ≈ 0.0067 so 0.05 is 7.4σ; every draw lands inside.
        assert_eq!(inside, 4000);
    }

    #[test]
    fn sampling_is_seeded_and_unbiased() {
        let code = GaussianCode {
            mean: Tensor::full(&[10_000, 1], 1.0),
            log_var: Tensor::zeros(&[10_000, 1]),
        };
        let a = sample_code(&code, &mut Rng::seeded(5)).unwrap();
        let b = sample_code(&code, &mut Rng::seeded(5)).unwrap();
        assert_eq!(a, b);
        let mean = a.mean();
        assert!((0.97..=1.03).contains(&mean), "{mean}");
    }

    #[test]
    fn beta_zero_is_cross_entropy() {
        let model = VibModel::new(small_arch(), 0.0, &mut Rng::seeded(6)).unwrap();
        let mut rng = Rng::seeded(7);
        let x = rng.uniform_tensor(&[8, 6], 0.0, 1.0);
        let y = vec![0, 1, 2, 3, 3, 2, 1, 0];
        let eps = Rng::seeded(8).gaussian(&[8, 3]);
        let (loss, _) = ib_loss_with_noise(&model, &model.params, &x, &y, &eps).unwrap();
        assert_eq!(loss.total, loss.app_term);
        let z = reparameterize(&encode(&model, &x).unwrap(), &eps).unwrap();
        let (ce, _) = softmax_cross_entropy(&model.classify_codes(&z).unwrap(), &y).unwrap();
        assert_eq!(loss.app_term, ce);
    }

    #[test]
    fn ib_gradient_matches_finite_differences() {
        for seed in 0..4 {
            let mut model = VibModel::new(small_arch(), 0.3, &mut Rng::seeded(seed)).unwrap();
            model.beta = 0.3;
            let mut rng = Rng::seeded(100 + seed);
            let x = rng.uniform_tensor(&[5, 6], 0.0, 1.0);
            let y = vec![0, 1, 2, 3, 1];
            let eps = rng.gaussian(&[5, 3]);
            let report = finite_difference_check(
                &model.params,
                |p| ib_loss_with_noise(&model, p, &x, &y, &eps).map(|(l, g)| (l.total, g)),
                1e-5,
                1e-4,
            )
            .unwrap();
            assert!(report.passed, "seed {seed}: {report:?}");
        }
    }

    #[test]
    fn zero_epochs_is_identity() {
        let model = VibModel::new(small_arch(), 0.1, &mut Rng::seeded(9)).unwrap();
        let data = Dataset::new(Tensor::full(&[4, 6], 0.5), vec![0, 1, 2, 3], 4).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let (trained, trace) = train(&model, &data, &cfg, &mut Rng::seeded(1)).unwrap();
        assert_eq!(trained, model);
        assert!(trace.is_empty());
    }

    #[test]
    fn huge_learning_rate_reports_divergence() {
        let model = VibModel::new(small_arch(), 0.1, &mut Rng::seeded(9)).unwrap();
        let mut rng = Rng::seeded(3);
        let x = rng.uniform_tensor(&[40, 6], 0.0, 1.0);
        let data = Dataset::new(x, (0..40).map(|i| i % 4).collect(), 4).unwrap();
        let cfg = TrainConfig {
            epochs: 50,
            batch_size: 8,
            lr: 1e4,
            momentum: Some(0.9),
        };
        let err = train(&model, &data, &cfg, &mut rng).unwrap_err();
        assert!(
            matches!(err, Error::Divergence(_) | Error::NonFinite { .. }),
            "{err}"
        );
    }
}
