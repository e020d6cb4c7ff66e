//! Neural mutual-information estimation with the Donsker–Varadhan bound
//!
//! ```text
//! I(Zₑ; Zₐ) ≥ E_joint[T] − log E_marginal[e^T]
//! ```
//!
//! where `T` is a small ReLU network on concatenated pairs `(zₑ, zₐ)`. Joint
//! pairs are rows aligned by batch index; marginal pairs pair each `zₑ` with a
//! shuffled `zₐ` from the same batch.
//!
//! Training ascends the bound. The minibatch gradient of the log term is
//! biased, so the trainer divides by an exponential moving average of
//! `mean(e^T)` (decay 0.99, seeded with the first batch) instead of the batch
//! value. [`mi_loss_for_unlearning`] returns the exact gradient of the batch
//! estimate with respect to both code arguments.

use crate::error::{Error, Result};
use crate::numerics::{Adam, Mlp, ParamSet, Rng, Tensor};

pub const STATNET_PREFIX: &str = "stat";

/// Mean |T| on joint pairs above which training is declared divergent.
pub const STATNET_DIVERGENCE: f64 = 50.0;

/// The critic `T(zₑ, zₐ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct StatNet {
    pub mlp: Mlp,
    pub params: ParamSet,
}

impl StatNet {
    /// Critic for `latent_dim`-dimensional code pairs.
    pub fn new(latent_dim: usize, hidden: &[usize], rng: &mut Rng) -> Result<Self> {
        Self::for_pairs(latent_dim, latent_dim, hidden, rng)
    }

    /// Critic on pairs of unequal widths, such as codes against inputs.
    pub fn for_pairs(left: usize, right: usize, hidden: &[usize], rng: &mut Rng) -> Result<Self> {
        let mut widths = vec![left + right];
        widths.extend_from_slice(hidden);
        widths.push(1);
        let mlp = Mlp::new(STATNET_PREFIX, widths)?;
        let mut params = ParamSet::new();
        mlp.init(&mut params, rng);
        Ok(StatNet { mlp, params })
    }

    /// `T` for each row of a `batch × 2d` pair matrix.
    pub fn scores(&self, pairs: &Tensor) -> Result<Vec<f64>> {
        Ok(self.mlp.apply(&self.params, pairs)?.into_data())
    }
}

/// Default critic hidden widths.
pub const DEFAULT_HIDDEN: [usize; 2] = [64, 64];

/// `log(mean(exp(t)))` with max-shift.
pub fn log_mean_exp(t: &[f64]) -> f64 {
    let m = t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + (t.iter().map(|v| (v - m).exp()).sum::<f64>() / t.len() as f64).ln()
}

fn check_pairs(net: &StatNet, pairs: &Tensor, what: &str) -> Result<()> {
    if pairs.rows() == 0 || pairs.is_empty() {
        return Err(Error::invalid(format!("{what} batch is empty")));
    }
    if pairs.rank() != 2 || pairs.cols() != net.mlp.input_width() {
        return Err(Error::shape(format!(
            "{what} pairs {:?}, critic expects width {}",
            pairs.shape(),
            net.mlp.input_width()
        )));
    }
    Ok(())
}

/// `mean_joint(T) − log mean_marginal(e^T)`.
pub fn dv_estimate(net: &StatNet, joint: &Tensor, marginal: &Tensor) -> Result<f64> {
    check_pairs(net, joint, "joint")?;
    check_pairs(net, marginal, "marginal")?;
    let tj = net.scores(joint)?;
    let tm = net.scores(marginal)?;
    let value = dv_value(&tj, &tm);
    if !value.is_finite() {
        return Err(Error::non_finite("DV estimate"));
    }
    Ok(value)
}

/// DV value with both terms measured from the marginal maximum, so a
/// constant critic gives exactly zero.
fn dv_value(tj: &[f64], tm: &[f64]) -> f64 {
    let m = tm.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let joint = tj.iter().map(|t| t - m).sum::<f64>() / tj.len() as f64;
    joint - log_mean_exp(&tm.iter().map(|t| t - m).collect::<Vec<_>>())
}

/// Joint and shuffled-marginal pair matrices from aligned code batches.
pub fn make_pairs(z_e: &Tensor, z_a: &Tensor, perm: &[usize]) -> Result<(Tensor, Tensor)> {
    if z_e.rows() != z_a.rows() || perm.len() != z_a.rows() {
        return Err(Error::shape(format!(
            "pairing {} and {} rows with a permutation of {}",
            z_e.rows(),
            z_a.rows(),
            perm.len()
        )));
    }
    let joint = z_e.hcat(z_a)?;
    let marginal = z_e.hcat(&z_a.select_rows(perm)?)?;
    Ok((joint, marginal))
}

/// DV value with gradients w.r.t. critic parameters and both pair batches.
struct DvPass {
    value: f64,
    mean_abs_joint: f64,
    params: ParamSet,
    d_joint: Tensor,
    d_marginal: Tensor,
}

/// `log_denominator` replaces `log mean(e^T_marginal)` in the gradient of the
/// log term when given (the moving-average correction).
fn dv_pass(net: &StatNet, params: &ParamSet, joint: &Tensor, marginal: &Tensor, log_denominator: Option<f64>) -> Result<DvPass> {
    check_pairs(net, joint, "joint")?;
    check_pairs(net, marginal, "marginal")?;
    let tape_j = net.mlp.forward(params, joint)?;
    let tape_m = net.mlp.forward(params, marginal)?;
    let tj = tape_j.output().data();
    let tm = tape_m.output().data();
    let (bj, bm) = (tj.len() as f64, tm.len() as f64);
    let lme = log_mean_exp(tm);
    let value = dv_value(tj, tm);
    if !value.is_finite() {
        return Err(Error::non_finite("DV estimate"));
    }
    let log_den = log_denominator.unwrap_or(lme);
    let g_j = Tensor::full(tape_j.output().shape(), 1.0 / bj);
    let g_m = tape_m.output().map(|t| -(t - log_den).exp() / bm);
    let mut grads = params.zeros_like();
    let d_joint = net.mlp.backward(params, &tape_j, &g_j, &mut grads)?;
    let d_marginal = net.mlp.backward(params, &tape_m, &g_m, &mut grads)?;
    Ok(DvPass {
        value,
        mean_abs_joint: tj.iter().map(|v| v.abs()).sum::<f64>() / bj,
        params: grads,
        d_joint,
        d_marginal,
    })
}

/// DV value and its exact gradient w.r.t. critic parameters (for checks).
pub fn dv_value_and_param_grad(net: &StatNet, params: &ParamSet, joint: &Tensor, marginal: &Tensor) -> Result<(f64, ParamSet)> {
    let pass = dv_pass(net, params, joint, marginal, None)?;
    Ok((pass.value, pass.params))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MineConfig {
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub ema_decay: f64,
    /// Critic ascent steps per outer unlearning step.
    pub inner_steps: usize,
    /// Critic ascent steps before the first unlearning epoch.
    pub warmup_steps: usize,
}

impl Default for MineConfig {
    fn default() -> Self {
        MineConfig {
            hidden: DEFAULT_HIDDEN.to_vec(),
            lr: 1e-3,
            ema_decay: 0.99,
            inner_steps: 5,
            warmup_steps: 200,
        }
    }
}

/// Gradient-ascent state for a critic: optimiser moments and the moving average.
#[derive(Clone, Debug)]
pub struct StatNetTrainer {
    pub net: StatNet,
    opt: Adam,
    log_ema: Option<f64>,
    decay: f64,
}

impl StatNetTrainer {
    pub fn new(net: StatNet, lr: f64, ema_decay: f64) -> Self {
        StatNetTrainer {
            net,
            opt: Adam::new(lr),
            log_ema: None,
            decay: ema_decay,
        }
    }

    /// Current moving average of `mean(e^T)` over marginal batches.
    pub fn ema_denominator(&self) -> Option<f64> {
        self.log_ema.map(f64::exp)
    }

    /// One ascent step on aligned code batches; returns the batch estimate
    /// before the update.
    pub fn step(&mut self, z_e: &Tensor, z_a: &Tensor, rng: &mut Rng) -> Result<MiEstimate> {
        let perm = rng.permutation(z_a.rows());
        let (joint, marginal) = make_pairs(z_e, z_a, &perm)?;
        // The moving average needs this batch's log-mean-exp before the gradient.
        let scores = self.net.scores(&marginal)?;
        let lme = log_mean_exp(&scores);
        let log_ema = match self.log_ema {
            None => lme,
            Some(prev) => log_add_exp(self.decay.ln() + prev, (1.0 - self.decay).ln() + lme),
        };
        self.log_ema = Some(log_ema);
        let pass = dv_pass(&self.net, &self.net.params, &joint, &marginal, Some(log_ema))?;
        if pass.mean_abs_joint > STATNET_DIVERGENCE {
            return Err(Error::Divergence(format!(
                "critic outputs average |T| = {:.1}",
                pass.mean_abs_joint
            )));
        }
        // Ascent: descend along the negated gradient.
        self.opt.step(&mut self.net.params, &pass.params.scale(-1.0))?;
        Ok(MiEstimate {
            value: pass.value,
            n_joint: joint.rows(),
            ema_denominator: log_ema.exp(),
        })
    }
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// A DV estimate with its batch size and the moving-average denominator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MiEstimate {
    pub value: f64,
    pub n_joint: usize,
    pub ema_denominator: f64,
}

/// Trains a critic for `steps` ascent steps on batches from `sampler`.
/// Returns the trained critic and the per-step batch estimates.
pub fn train_statnet<S>(net: &StatNet, mut sampler: S, steps: usize, config: &MineConfig, rng: &mut Rng) -> Result<(StatNet, Vec<MiEstimate>)>
where
    S: FnMut(&mut Rng) -> Result<(Tensor, Tensor)>,
{
    let mut trainer = StatNetTrainer::new(net.clone(), config.lr, config.ema_decay);
    let mut trace = Vec::with_capacity(steps);
    for _ in 0..steps {
        let (z_e, z_a) = sampler(rng)?;
        trace.push(trainer.step(&z_e, &z_a, rng)?);
    }
    Ok((trainer.net, trace))
}

/// DV estimate of `I(Zₑ; Zₐ)` on aligned batches with one shuffled marginal.
pub fn estimate_mi(net: &StatNet, z_e: &Tensor, z_a: &Tensor, rng: &mut Rng) -> Result<f64> {
    let perm = rng.permutation(z_a.rows());
    let (joint, marginal) = make_pairs(z_e, z_a, &perm)?;
    dv_estimate(net, &joint, &marginal)
}

/// The compressor-forgetting loss: the batch DV estimate and its gradients
/// w.r.t. each row of `z_e` and `z_a`.
#[derive(Clone, Debug, PartialEq)]
pub struct MiLoss {
    pub value: f64,
    pub grad_z_e: Tensor,
    pub grad_z_a: Tensor,
}

/// DV estimate on `(z_e, z_a)` with marginal pairing `perm`, differentiated
/// through both arguments.
pub fn mi_loss_for_unlearning(net: &StatNet, z_e: &Tensor, z_a: &Tensor, perm: &[usize]) -> Result<MiLoss> {
    let (joint, marginal) = make_pairs(z_e, z_a, perm)?;
    let pass = dv_pass(net, &net.params, &joint, &marginal, None)?;
    let d = z_e.cols();
    let mut grad_z_e = pass.d_joint.slice_cols(0, d)?;
    grad_z_e.axpy(1.0, &pass.d_marginal.slice_cols(0, d)?)?;
    let mut grad_z_a = pass.d_joint.slice_cols(d, 2 * d)?;
    let d_marg_a = pass.d_marginal.slice_cols(d, 2 * d)?;
    for (i, &j) in perm.iter().enumerate() {
        for (g, v) in grad_z_a.row_mut(j).iter_mut().zip(d_marg_a.row(i)) {
            *g += v;
        }
    }
    Ok(MiLoss {
        value: pass.value,
        grad_z_e,
        grad_z_a,
    })
}

/// Aligned samples from a bivariate standard Gaussian with correlation `rho`.
pub fn correlated_gaussians(rho: f64, batch: usize, rng: &mut Rng) -> (Tensor, Tensor) {
    let x = rng.gaussian(&[batch, 1]);
    let noise = rng.gaussian(&[batch, 1]);
    let s = (1.0 - rho * rho).sqrt();
    let y = x.zip_map(&noise, |a, e| rho * a + s * e).expect("same shape");
    (x, y)
}

/// `−½ ln(1 − ρ²)`.
pub fn gaussian_mi(rho: f64) -> f64 {
    -0.5 * (1.0 - rho * rho).ln()
}
