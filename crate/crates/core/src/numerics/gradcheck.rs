//! Central finite-difference verification of analytic gradients.
//!
//! Each scalar is perturbed by `±h` and by `±h/2`. If the two central
//! differences disagree by more than the tolerance the function is not smooth
//! on that interval (a ReLU or clamp kink was crossed); such coordinates are
//! counted in [`GradCheckReport::kinks`] and left out of the error maximum.
//! The analytic gradient plays no part in that decision.

use crate::error::{Error, Result};
use crate::numerics::loss::{forward_backward, Batch, LossKind};
use crate::numerics::{Mlp, ParamSet};

/// Denominator floor for relative errors.
const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat offset of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    pub kinks: usize,
    pub passed: bool,
}

fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Compares `f`'s analytic gradient at `params` with central differences.
///
/// `f` returns `(value, gradient)`; the gradient must have `params`' layout.
pub fn finite_difference_check<F>(params: &ParamSet, f: F, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&ParamSet) -> Result<(f64, ParamSet)>,
{
    if !(h > 0.0 && h <= 1e-2) {
        return Err(Error::invalid(format!("step h={h} outside (0, 1e-2]")));
    }
    if !params.is_finite() {
        return Err(Error::non_finite("parameters"));
    }
    let (_, analytic) = f(params)?;
    let analytic_flat = analytic.flatten();
    if analytic_flat.len() != params.num_scalars() {
        return Err(Error::shape("gradient layout differs from parameters"));
    }
    let names: Vec<(String, usize)> = params.iter().map(|(n, t)| (n.clone(), t.len())).collect();
    let base = params.flatten();
    let eval = |flat: &[f64]| -> Result<f64> { Ok(f(&params.unflatten(flat)?)?.0) };

    let mut probe = base.clone();
    let mut central = |i: usize, step: f64| -> Result<f64> {
        probe[i] = base[i] + step;
        let up = eval(&probe)?;
        probe[i] = base[i] - step;
        let down = eval(&probe)?;
        probe[i] = base[i];
        Ok((up - down) / (2.0 * step))
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        kinks: 0,
        passed: true,
    };
    let mut flat_index = 0;
    for (name, len) in &names {
        for offset in 0..*len {
            let i = flat_index + offset;
            let coarse = central(i, h)?;
            let fine = central(i, h / 2.0)?;
            if rel_error(coarse, fine) > tol {
                report.kinks += 1;
                continue;
            }
            report.checked += 1;
            let err = rel_error(analytic_flat[i], fine);
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((name.clone(), offset));
            }
        }
        flat_index += len;
    }
    // Skipping more than a sliver of coordinates would hide real errors.
    let total = report.checked + report.kinks;
    report.passed = report.max_rel_error < tol && report.kinks * 50 <= total.max(1);
    Ok(report)
}

/// [`finite_difference_check`] for a plain network and registered loss.
pub fn check_network(
    net: &Mlp,
    params: &ParamSet,
    batch: &Batch,
    loss: LossKind,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    finite_difference_check(params, |p| forward_backward(net, p, batch, loss), h, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Rng, Tensor};

    fn scalar(name: &str, v: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert(name, Tensor::scalar(v));
        p
    }

    #[test]
    fn square_at_three() {
        let p = scalar("a", 3.0);
        let report = finite_difference_check(
            &p,
            |q| {
                let a = q.require("a")?.data()[0];
                Ok((a * a, scalar("a", 2.0 * a)))
            },
            1e-5,
            1e-8,
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
        assert!(report.max_rel_error < 1e-8);
        assert_eq!(report.worst, Some(("a".to_string(), 0)));
    }

    #[test]
    fn linear_is_exact() {
        let mut p = ParamSet::new();
        p.insert("lin.l00.w", Tensor::new(vec![1, 1], vec![2.0]).unwrap());
        p.insert("lin.l00.b", Tensor::zeros(&[1]));
        // f(a) = a·x with x = 1.5, checked through a linear output.
        let report = finite_difference_check(
            &p,
            |q| {
                let a = q.require("lin.l00.w")?.data()[0];
                let b = q.require("lin.l00.b")?.data()[0];
                let mut g = q.zeros_like();
                g.get_mut("lin.l00.w").unwrap().data_mut()[0] = 1.5;
                g.get_mut("lin.l00.b").unwrap().data_mut()[0] = 1.0;
                Ok((a * 1.5 + b, g))
            },
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-9, "{report:?}");
    }

    #[test]
    fn detects_wrong_gradient() {
        let p = scalar("a", 3.0);
        let report = finite_difference_check(
            &p,
            |q| {
                let a = q.require("a")?.data()[0];
                Ok((a * a, scalar("a", 2.0 * a + 0.01)))
            },
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(!report.passed);
    }

    #[test]
    fn rejects_bad_step() {
        let p = scalar("a", 1.0);
        let f = |q: &ParamSet| Ok((q.require("a")?.data()[0], scalar("a", 1.0)));
        assert!(finite_difference_check(&p, f, 0.0, 1e-4).is_err());
        assert!(finite_difference_check(&p, f, 0.1, 1e-4).is_err());
    }

    #[test]
    fn random_mlp_cross_entropy_and_squared_error() {
        for seed in 0..5 {
            let mut rng = Rng::seeded(seed);
            let net = Mlp::new("m", vec![8, 16, 16, 3]).unwrap();
            let mut p = ParamSet::new();
            net.init(&mut p, &mut rng);
            let x = rng.gaussian(&[4, 8]);
            let batch = Batch::labelled(x.clone(), vec![0, 2, 1, 2]);
            let r = check_network(&net, &p, &batch, LossKind::SoftmaxCrossEntropy, 1e-5, 1e-4).unwrap();
            assert!(r.passed, "seed {seed}: {r:?}");

            let target = rng.gaussian(&[4, 3]);
            let batch = Batch::regression(x, target);
            let r = check_network(&net, &p, &batch, LossKind::SquaredError, 1e-5, 1e-4).unwrap();
            assert!(r.passed, "seed {seed}: {r:?}");
        }
    }
}
