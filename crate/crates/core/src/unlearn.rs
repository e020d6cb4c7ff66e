//! Server-side blind unlearning.
//!
//! The server never sees raw erased inputs. It receives compressed codes
//! `z_e` with labels `y_e` (a [`ForgetBatch`], built only from a validated
//! [`UnlearningRequest`]) and holds an auxiliary labelled dataset. Each step
//! combines two objectives over the full parameter vector:
//!
//! * retain: the IB loss on an auxiliary minibatch;
//! * forget: `λ · DV(z_e, z_a) + (1 − λ) · mean log p(y_e | z_e)`, where `z_a`
//!   are the current compressor's mean codes of the auxiliary minibatch.
//!
//! The two gradients are mixed with the min-norm weight `α` of
//! [`mgda_alpha`]. The label term stops at `ln(1/C) − 2`; below that floor
//! its value is held and its gradient is zero.
//!
//! Raw inputs cannot reach [`unlearn`]:
//!
//! ```compile_fail
//! use blind_unlearn::numerics::Tensor;
//! use blind_unlearn::unlearn::ForgetBatch;
//! let batch = ForgetBatch { z_e: Tensor::zeros(&[1, 2]), y_e: vec![0] };
//! ```
//!
//! ```compile_fail
//! use blind_unlearn::data::Dataset;
//! use blind_unlearn::unlearn::{unlearn, UnlearnConfig};
//! use blind_unlearn::vib::VibModel;
//! fn server(model: &VibModel, erased: &Dataset, aux: &Dataset) {
//!     let _ = unlearn(model, erased, aux, &UnlearnConfig::default());
//! }
//! ```

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mine::{make_pairs, dv_estimate, mi_loss_for_unlearning, MineConfig, StatNet, StatNetTrainer};
use crate::numerics::loss::{log_softmax, softmax};
use crate::numerics::{ParamSet, Rng, Sgd, Tensor};
use crate::protocol::{validate_request, CompressorCheckpoint, UnlearningRequest, Validation};
use crate::vib::{encode, encode_backward, encode_pass, ib_loss_and_grad, train, IbLoss, TrainConfig, VibArch, VibModel, DIVERGENCE_LIMIT};

/// Compressed erased representations with their labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ForgetBatch {
    z_e: Tensor,
    y_e: Vec<usize>,
}

impl ForgetBatch {
    /// Accepts a request only if it validates against `model`'s compressor.
    pub fn from_request(request: &UnlearningRequest, model: &VibModel) -> Result<Self> {
        let checkpoint = CompressorCheckpoint::from_model(model, None);
        match validate_request(request, &checkpoint) {
            Validation::Accepted => Ok(ForgetBatch {
                z_e: request.z_e.clone(),
                y_e: request.y_e.clone(),
            }),
            Validation::Rejected(why) => Err(Error::invalid(format!("request rejected: {why}"))),
        }
    }

    pub(crate) fn from_parts(z_e: Tensor, y_e: Vec<usize>) -> Self {
        ForgetBatch { z_e, y_e }
    }

    pub fn z_e(&self) -> &Tensor {
        &self.z_e
    }

    pub fn y_e(&self) -> &[usize] {
        &self.y_e
    }

    pub fn len(&self) -> usize {
        self.y_e.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_e.is_empty()
    }

    /// Rows `rows` (repeats allowed) as a new batch.
    pub fn select(&self, rows: &[usize]) -> Result<ForgetBatch> {
        let z_e = self.z_e.select_rows(rows)?;
        Ok(ForgetBatch {
            z_e,
            y_e: rows.iter().map(|&i| self.y_e[i]).collect(),
        })
    }
}

/// Min-norm weight between the retain and forget gradients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MgdaWeights {
    /// Weight on the retain gradient; the forget gradient gets `1 − alpha`.
    pub alpha: f64,
    pub g_retain_norm: f64,
    pub g_forget_norm: f64,
    /// Set when the two gradients nearly coincide and `alpha` fell back to ½.
    pub degenerate: bool,
}

pub const DEGENERACY_TOL: f64 = 1e-12;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `argmin_{α∈[0,1]} ‖α g_r + (1 − α) g_f‖²`, which is
/// `clip((g_f − g_r)·g_f / ‖g_r − g_f‖², 0, 1)`.
pub fn mgda_alpha(g_retain: &[f64], g_forget: &[f64], degeneracy_tol: f64) -> Result<MgdaWeights> {
    if g_retain.len() != g_forget.len() {
        return Err(Error::shape(format!(
            "gradients of length {} and {}",
            g_retain.len(),
            g_forget.len()
        )));
    }
    let diff: Vec<f64> = g_retain.iter().zip(g_forget).map(|(r, f)| r - f).collect();
    let diff_sq = dot(&diff, &diff);
    let g_retain_norm = dot(g_retain, g_retain).sqrt();
    let g_forget_norm = dot(g_forget, g_forget).sqrt();
    if diff_sq.sqrt() < degeneracy_tol {
        return Ok(MgdaWeights {
            alpha: 0.5,
            g_retain_norm,
            g_forget_norm,
            degenerate: true,
        });
    }
    let alpha = (-dot(&diff, g_forget) / diff_sq).clamp(0.0, 1.0);
    if !alpha.is_finite() {
        return Err(Error::non_finite("MGDA alpha"));
    }
    Ok(MgdaWeights {
        alpha,
        g_retain_norm,
        g_forget_norm,
        degenerate: false,
    })
}

impl MgdaWeights {
    pub fn combine(&self, g_retain: &[f64], g_forget: &[f64]) -> Vec<f64> {
        g_retain
            .iter()
            .zip(g_forget)
            .map(|(r, f)| self.alpha * r + (1.0 - self.alpha) * f)
            .collect()
    }

    pub fn combine_params(&self, g_retain: &ParamSet, g_forget: &ParamSet) -> Result<ParamSet> {
        let mut g = g_retain.scale(self.alpha);
        g.axpy(1.0 - self.alpha, g_forget)?;
        Ok(g)
    }
}

/// Forgetting objective with its parts.
#[derive(Clone, Debug, PartialEq)]
pub struct ForgetLoss {
    pub total: f64,
    /// DV estimate between `z_e` and the auxiliary codes.
    pub dv: f64,
    /// `mean log p(y_e | z_e)` before the floor is applied.
    pub label_term: f64,
    /// True when the label term sits at or below its floor.
    pub label_floored: bool,
    pub grads: ParamSet,
}

/// `ln(1/C) − 2`.
pub fn label_floor(classes: usize) -> f64 {
    -(classes as f64).ln() - 2.0
}

/// Forgetting loss at `params`; row `i` of `forget` is paired with row `i` of
/// `aux_inputs` and `perm` forms the marginal pairs.
pub fn forget_loss_at(
    model: &VibModel,
    params: &ParamSet,
    statnet: &StatNet,
    forget: &ForgetBatch,
    aux_inputs: &Tensor,
    perm: &[usize],
    lambda: f64,
) -> Result<ForgetLoss> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("lambda {lambda} outside [0, 1]")));
    }
    if forget.is_empty() || forget.len() != aux_inputs.rows() {
        return Err(Error::shape(format!(
            "{} forget rows against {} auxiliary rows",
            forget.len(),
            aux_inputs.rows()
        )));
    }
    let mut grads = params.zeros_like();

    let compressor = model.compressor();
    let pass = encode_pass(&compressor, params, aux_inputs)?;
    let mi = mi_loss_for_unlearning(statnet, &forget.z_e, &pass.code.mean, perm)?;
    if lambda != 0.0 {
        let d_mean = mi.grad_z_a.scale(lambda);
        let d_log_var = Tensor::zeros(pass.code.log_var.shape());
        encode_backward(&compressor, params, &pass, &d_mean, &d_log_var, &mut grads)?;
    }

    let approximator = model.approximator();
    let tape = approximator.forward(params, &forget.z_e)?;
    let logits = tape.output();
    let log_p = log_softmax(logits);
    let probs = softmax(logits);
    let (rows, c) = (logits.rows(), logits.cols());
    let floor = label_floor(model.arch.classes);
    let mut d_logits = Tensor::zeros(logits.shape());
    let (mut label_term, mut clamped) = (0.0, 0.0);
    let mut active = 0;
    for (i, &y) in forget.y_e.iter().enumerate() {
        let lp = log_p.row(i)[y];
        label_term += lp / rows as f64;
        clamped += lp.max(floor) / rows as f64;
        if lp > floor {
            active += 1;
            let g = d_logits.row_mut(i);
            for j in 0..c {
                let onehot = if j == y { 1.0 } else { 0.0 };
                g[j] = (1.0 - lambda) * (onehot - probs.row(i)[j]) / rows as f64;
            }
        }
    }
    let label_floored = active == 0;
    if active > 0 && lambda != 1.0 {
        approximator.backward(params, &tape, &d_logits, &mut grads)?;
    }
    let total = lambda * mi.value + (1.0 - lambda) * clamped;
    if !total.is_finite() {
        return Err(Error::non_finite("forget loss"));
    }
    Ok(ForgetLoss {
        total,
        dv: mi.value,
        label_term,
        label_floored,
        grads,
    })
}

/// Forgetting loss at the model's parameters with a fresh marginal pairing.
pub fn forget_loss(
    model: &VibModel,
    statnet: &StatNet,
    forget: &ForgetBatch,
    aux_inputs: &Tensor,
    lambda: f64,
    rng: &mut Rng,
) -> Result<ForgetLoss> {
    let perm = rng.permutation(aux_inputs.rows());
    forget_loss_at(model, &model.params, statnet, forget, aux_inputs, &perm, lambda)
}

/// The IB loss on auxiliary data.
pub fn retain_loss(model: &VibModel, aux_inputs: &Tensor, aux_labels: &[usize], rng: &mut Rng) -> Result<(IbLoss, ParamSet)> {
    ib_loss_and_grad(model, aux_inputs, aux_labels, rng)
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnlearnConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: Option<f64>,
    /// Weight of the DV term inside the forgetting loss.
    pub lambda: f64,
    pub mine: MineConfig,
    pub seed: u64,
    /// Fixes `α` instead of solving for it.
    pub alpha_override: Option<f64>,
    pub degeneracy_tol: f64,
    /// Rescale both gradients to unit norm before solving for `α` and mixing.
    pub normalize_gradients: bool,
}

impl Default for UnlearnConfig {
    fn default() -> Self {
        UnlearnConfig {
            epochs: 10,
            batch_size: 20,
            lr: 0.05,
            momentum: Some(0.9),
            lambda: 0.5,
            mine: MineConfig::default(),
            seed: 0,
            alpha_override: None,
            degeneracy_tol: DEGENERACY_TOL,
            normalize_gradients: true,
        }
    }
}

impl UnlearnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::invalid(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if let Some(a) = self.alpha_override {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::invalid(format!("alpha override {a} outside [0, 1]")));
            }
        }
        if !(self.lr > 0.0) || !(self.mine.lr > 0.0) {
            return Err(Error::invalid("learning rates must be positive"));
        }
        if !(0.0..1.0).contains(&self.mine.ema_decay) {
            return Err(Error::invalid("ema decay must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Per-epoch means over the epoch's steps; `dv_estimate` is measured at the
/// end of the epoch on a fixed evaluation pairing.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub epoch: usize,
    pub retain_loss: f64,
    pub forget_loss: f64,
    pub alpha: f64,
    pub dv_estimate: f64,
    pub label_term: f64,
}

pub const TRACE_HEADER: &str = "epoch,retain_loss,forget_loss,alpha,dv_estimate,label_term";

pub fn trace_csv(trace: &[TraceRow]) -> String {
    let mut out = format!("{TRACE_HEADER}\n");
    for r in trace {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.epoch, r.retain_loss, r.forget_loss, r.alpha, r.dv_estimate, r.label_term
        ));
    }
    out
}

#[derive(Clone, Debug)]
pub struct UnlearnOutcome {
    pub model: VibModel,
    pub trace: Vec<TraceRow>,
    /// DV estimate on the evaluation pairing after the critic warmup.
    pub initial_dv: f64,
    pub statnet: StatNet,
}

fn unit(g: &ParamSet) -> ParamSet {
    let norm = g.norm();
    if norm > 0.0 {
        g.scale(1.0 / norm)
    } else {
        g.clone()
    }
}

/// `k` row indices from `0..n`, without replacement when possible.
fn sample_rows(n: usize, k: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    rng.uniform_indices(n, k, k > n)
}

/// Fixed pairing used to track the DV estimate across epochs.
struct DvProbe {
    forget: ForgetBatch,
    aux_inputs: Tensor,
    perm: Vec<usize>,
}

impl DvProbe {
    fn value(&self, statnet: &StatNet, model: &VibModel) -> Result<f64> {
        let z_a = encode(model, &self.aux_inputs)?.mean;
        let (joint, marginal) = make_pairs(self.forget.z_e(), &z_a, &self.perm)?;
        dv_estimate(statnet, &joint, &marginal)
    }
}

/// Runs blind unlearning. Retain minibatches and their noise come from
/// `Rng::seeded(config.seed)` in exactly the order [`train`] would use them;
/// forget sampling and the critic draw from separate derived streams.
pub fn unlearn(model: &VibModel, forget: &ForgetBatch, aux: &Dataset, config: &UnlearnConfig) -> Result<UnlearnOutcome> {
    config.validate()?;
    if forget.is_empty() {
        return Err(Error::invalid("empty forget batch"));
    }
    if aux.features() != model.arch.n_features || aux.classes() != model.arch.classes {
        return Err(Error::shape("auxiliary dataset does not match the model"));
    }
    if forget.z_e.cols() != model.latent_dim() || forget.y_e.iter().any(|&y| y >= model.arch.classes) {
        return Err(Error::shape("forget batch does not match the model"));
    }
    let mut retain_rng = Rng::seeded(config.seed);
    let mut forget_rng = Rng::derive(config.seed, "unlearn.forget");
    let mut stat_rng = Rng::derive(config.seed, "unlearn.statnet");

    let statnet = StatNet::new(model.latent_dim(), &config.mine.hidden, &mut stat_rng)?;
    let mut critic = StatNetTrainer::new(statnet, config.mine.lr, config.mine.ema_decay);

    let m = forget.len();
    let probe = DvProbe {
        forget: forget.clone(),
        aux_inputs: aux.inputs().select_rows(&sample_rows(aux.len(), m, &mut forget_rng)?)?,
        perm: forget_rng.permutation(m),
    };

    let b = config.batch_size;
    for _ in 0..config.mine.warmup_steps {
        let fb = forget.select(&sample_rows(m, b, &mut forget_rng)?)?;
        let x = aux.inputs().select_rows(&sample_rows(aux.len(), b, &mut forget_rng)?)?;
        critic.step(&fb.z_e, &encode(model, &x)?.mean, &mut stat_rng)?;
    }
    let initial_dv = probe.value(&critic.net, model)?;

    let mut model = model.clone();
    let mut opt = Sgd::new(config.lr, config.momentum);
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let last_good = model.clone();
        let diverged = |reason: String| Error::UnlearnDiverged {
            epoch,
            reason,
            last_good: Box::new(last_good.clone()),
        };
        let order = retain_rng.permutation(aux.len());
        let (mut retain_sum, mut forget_sum, mut alpha_sum, mut label_sum) = (0.0, 0.0, 0.0, 0.0);
        let mut steps = 0;
        for chunk in order.chunks(b) {
            let x = aux.inputs().select_rows(chunk)?;
            let y: Vec<usize> = chunk.iter().map(|&i| aux.labels()[i]).collect();
            let (retain, g_retain) = retain_loss(&model, &x, &y, &mut retain_rng)?;
            if !(retain.total.abs() <= DIVERGENCE_LIMIT) || !g_retain.is_finite() {
                return Err(diverged(format!("retain loss {}", retain.total)));
            }

            let fb = forget.select(&sample_rows(m, chunk.len(), &mut forget_rng)?)?;
            let z_a = encode(&model, &x)?.mean;
            for _ in 0..config.mine.inner_steps {
                critic.step(&fb.z_e, &z_a, &mut stat_rng).map_err(|e| diverged(e.to_string()))?;
            }
            let perm = forget_rng.permutation(chunk.len());
            let fl = forget_loss_at(&model, &model.params, &critic.net, &fb, &x, &perm, config.lambda)
                .map_err(|e| diverged(e.to_string()))?;
            if !fl.grads.is_finite() {
                return Err(diverged("non-finite forget gradient".into()));
            }

            let (g_retain, g_forget) = if config.normalize_gradients {
                (unit(&g_retain), unit(&fl.grads))
            } else {
                (g_retain, fl.grads.clone())
            };
            let weights = match config.alpha_override {
                Some(alpha) => MgdaWeights {
                    alpha,
                    g_retain_norm: g_retain.norm(),
                    g_forget_norm: g_forget.norm(),
                    degenerate: false,
                },
                None => mgda_alpha(&g_retain.flatten(), &g_forget.flatten(), config.degeneracy_tol)?,
            };
            opt.step(&mut model.params, &weights.combine_params(&g_retain, &g_forget)?)?;

            retain_sum += retain.total;
            forget_sum += fl.total;
            alpha_sum += weights.alpha;
            label_sum += fl.label_term;
            steps += 1;
        }
        let n = steps as f64;
        trace.push(TraceRow {
            epoch,
            retain_loss: retain_sum / n,
            forget_loss: forget_sum / n,
            alpha: alpha_sum / n,
            dv_estimate: probe.value(&critic.net, &model).map_err(|e| diverged(e.to_string()))?,
            label_term: label_sum / n,
        });
    }
    Ok(UnlearnOutcome {
        model,
        trace,
        initial_dv,
        statnet: critic.net,
    })
}

/// Trains a fresh model on the remaining data only.
pub fn retrain_baseline(arch: &VibArch, beta: f64, remaining: &Dataset, config: &TrainConfig, rng: &mut Rng) -> Result<VibModel> {
    if remaining.is_empty() {
        return Err(Error::invalid("remaining dataset is empty"));
    }
    let fresh = VibModel::new(arch.clone(), beta, rng)?;
    Ok(train(&fresh, remaining, config, rng)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_blobs;
    use crate::numerics::{finite_difference_check, Rng};
    use proptest::prelude::*;

    fn q(alpha: f64, g1: &[f64], g2: &[f64]) -> f64 {
        g1.iter().zip(g2).map(|(a, b)| (alpha * a + (1.0 - alpha) * b).powi(2)).sum()
    }

    #[test]
    fn hand_worked_alpha() {
        let w = mgda_alpha(&[1.0, 0.0], &[0.0, 2.0], DEGENERACY_TOL).unwrap();
        assert!((w.alpha - 0.8).abs() < 1e-15);
        let c = w.combine(&[1.0, 0.0], &[0.0, 2.0]);
        assert!((c[0] - 0.8).abs() < 1e-15 && (c[1] - 0.4).abs() < 1e-15);
        assert!(!w.degenerate);
    }

    #[test]
    fn degenerate_and_symmetric_cases() {
        let w = mgda_alpha(&[0.3, -1.0], &[0.3, -1.0], DEGENERACY_TOL).unwrap();
        assert_eq!(w.alpha, 0.5);
        assert!(w.degenerate);
        let w = mgda_alpha(&[2.0, 0.0], &[0.0, 2.0], DEGENERACY_TOL).unwrap();
        assert!((w.alpha - 0.5).abs() < 1e-15);
        assert!(mgda_alpha(&[1.0], &[1.0, 2.0], DEGENERACY_TOL).is_err());
    }

    proptest! {
        #[test]
        fn alpha_minimises_the_quadratic(
            g1 in prop::collection::vec(-5.0f64..5.0, 1..20),
            seed in 0u64..1000,
        ) {
            let mut rng = Rng::seeded(seed);
            let g2: Vec<f64> = g1.iter().map(|_| rng.normal() * 3.0).collect();
            let w = mgda_alpha(&g1, &g2, DEGENERACY_TOL).unwrap();
            prop_assert!((0.0..=1.0).contains(&w.alpha));
            let best = (0..=1000).map(|i| q(i as f64 / 1000.0, &g1, &g2)).fold(f64::INFINITY, f64::min);
            prop_assert!(q(w.alpha, &g1, &g2) <= best + 1e-9);
            let norm = q(w.alpha, &g1, &g2).sqrt();
            prop_assert!(norm <= w.g_retain_norm.min(w.g_forget_norm) + 1e-12);
        }
    }

    fn setup(seed: u64) -> (VibModel, StatNet, ForgetBatch, Tensor) {
        let arch = VibArch {
            n_features: 5,
            encoder_hidden: vec![7],
            latent_dim: 2,
            decoder_hidden: vec![6],
            classes: 3,
        };
        let mut rng = Rng::seeded(seed);
        let model = VibModel::new(arch, 0.01, &mut rng).unwrap();
        let statnet = StatNet::new(2, &[8, 8], &mut rng).unwrap();
        let forget = ForgetBatch::from_parts(rng.gaussian(&[6, 2]), vec![0, 1, 2, 0, 1, 2]);
        let aux = rng.uniform_tensor(&[6, 5], 0.0, 1.0);
        (model, statnet, forget, aux)
    }

    #[test]
    fn forget_gradient_matches_finite_differences() {
        for seed in 0..4 {
            let (model, statnet, forget, aux) = setup(seed);
            let perm = vec![3, 0, 5, 1, 2, 4];
            let report = finite_difference_check(
                &model.params,
                |p| {
                    let fl = forget_loss_at(&model, p, &statnet, &forget, &aux, &perm, 0.5)?;
                    Ok((fl.total, fl.grads))
                },
                1e-5,
                1e-4,
            )
            .unwrap();
            assert!(report.passed, "seed {seed}: {report:?}");
        }
    }

    #[test]
    fn zero_lambda_leaves_the_compressor_alone() {
        let (model, statnet, forget, aux) = setup(1);
        let fl = forget_loss_at(&model, &model.params, &statnet, &forget, &aux, &[0, 1, 2, 3, 4, 5], 0.0).unwrap();
        assert!(fl.grads.with_prefix("enc.").iter().all(|(_, t)| t.data().iter().all(|&g| g == 0.0)));
    }

    #[test]
    fn uniform_approximator_gives_log_one_over_c() {
        let (mut model, statnet, forget, aux) = setup(2);
        for (name, t) in model.params.iter_mut() {
            if name.starts_with("dec.") {
                *t = Tensor::zeros(t.shape());
            }
        }
        let fl = forget_loss_at(&model, &model.params, &statnet, &forget, &aux, &[0, 1, 2, 3, 4, 5], 0.0).unwrap();
        assert!((fl.label_term - (1.0f64 / 3.0).ln()).abs() < 1e-12);
        assert!((fl.total - fl.label_term).abs() < 1e-12);
    }

    #[test]
    fn constant_critic_with_full_lambda_is_zero() {
        let (model, mut statnet, forget, aux) = setup(3);
        for (name, t) in statnet.params.iter_mut() {
            *t = Tensor::full(t.shape(), if name.ends_with(".b") { 0.7 } else { 0.0 });
        }
        let fl = forget_loss_at(&model, &model.params, &statnet, &forget, &aux, &[5, 4, 3, 2, 1, 0], 1.0).unwrap();
        assert_eq!(fl.total, 0.0);
    }

    #[test]
    fn floored_label_term_has_no_gradient() {
        let (mut model, statnet, forget, aux) = setup(4);
        // Push every prediction away from the forget labels.
        let last_w = model.approximator().weight_name(1);
        let last_b = model.approximator().bias_name(1);
        *model.params.get_mut(&last_w).unwrap() = Tensor::zeros(&[6, 3]);
        *model.params.get_mut(&last_b).unwrap() = Tensor::vector(vec![-30.0, -30.0, -30.0]);
        let mut y = forget.clone();
        y.y_e = vec![0; 6];
        model.params.get_mut(&last_b).unwrap().data_mut()[1] = 30.0;
        let fl = forget_loss_at(&model, &model.params, &statnet, &y, &aux, &[0, 1, 2, 3, 4, 5], 0.0).unwrap();
        assert!(fl.label_floored);
        assert!((fl.total - label_floor(3)).abs() < 1e-12);
        assert!(fl.grads.norm() == 0.0);
    }

    fn blobs(seed: u64) -> Dataset {
        synth_blobs(&mut Rng::seeded(seed), 3, 20, 5, 0.05).unwrap()
    }

    #[test]
    fn zero_epochs_leave_the_model_unchanged() {
        let (model, _, forget, _) = setup(5);
        let cfg = UnlearnConfig {
            epochs: 0,
            mine: MineConfig {
                warmup_steps: 3,
                ..MineConfig::default()
            },
            ..UnlearnConfig::default()
        };
        let out = unlearn(&model, &forget, &blobs(5), &cfg).unwrap();
        assert_eq!(out.model, model);
        assert!(out.trace.is_empty());
    }

    #[test]
    fn pure_retain_matches_direct_training() {
        let (model, _, forget, _) = setup(6);
        let aux = blobs(6);
        let cfg = UnlearnConfig {
            epochs: 3,
            batch_size: 8,
            alpha_override: Some(1.0),
            normalize_gradients: false,
            lambda: 0.0,
            seed: 11,
            mine: MineConfig {
                warmup_steps: 2,
                inner_steps: 1,
                ..MineConfig::default()
            },
            ..UnlearnConfig::default()
        };
        let out = unlearn(&model, &forget, &aux, &cfg).unwrap();
        let tc = TrainConfig {
            epochs: 3,
            batch_size: 8,
            lr: cfg.lr,
            momentum: cfg.momentum,
        };
        let (direct, losses) = train(&model, &aux, &tc, &mut Rng::seeded(11)).unwrap();
        let retain: Vec<f64> = out.trace.iter().map(|r| r.retain_loss).collect();
        assert_eq!(retain, losses);
        assert_eq!(out.model, direct);
    }

    #[test]
    fn unlearning_is_seeded_deterministic() {
        let (model, _, forget, _) = setup(7);
        let aux = blobs(7);
        let cfg = UnlearnConfig {
            epochs: 2,
            mine: MineConfig {
                warmup_steps: 5,
                ..MineConfig::default()
            },
            ..UnlearnConfig::default()
        };
        let a = unlearn(&model, &forget, &aux, &cfg).unwrap();
        let b = unlearn(&model, &forget, &aux, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.trace, b.trace);
        assert!(a.trace.iter().all(|r| (0.0..=1.0).contains(&r.alpha)));
        assert_eq!(trace_csv(&a.trace).lines().count(), 3);
    }

    #[test]
    fn retrain_is_deterministic() {
        let aux = blobs(8);
        let (model, ..) = setup(8);
        let cfg = TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        };
        let a = retrain_baseline(&model.arch, 0.01, &aux, &cfg, &mut Rng::seeded(1)).unwrap();
        let b = retrain_baseline(&model.arch, 0.01, &aux, &cfg, &mut Rng::seeded(1)).unwrap();
        assert_eq!(a, b);
    }
}
