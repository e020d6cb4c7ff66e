use crate::error::{Error, Result};
use crate::numerics::{ParamSet, Rng, Tensor};

/// Fully connected network descriptor: affine layers with ReLU between them
/// and a linear output layer.
///
/// Parameters live in a [`ParamSet`] under `{prefix}.l{ii}.w` (`in × out`)
/// and `{prefix}.l{ii}.b` (`out`), so several networks can share one set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mlp {
    prefix: String,
    widths: Vec<usize>,
}

/// Activations recorded during a forward pass, consumed by [`Mlp::backward`].
#[derive(Clone, Debug)]
pub struct MlpTape {
    /// Input to each layer (post-activation of the previous one).
    inputs: Vec<Tensor>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Tensor>,
    output: Tensor,
}

impl MlpTape {
    pub fn output(&self) -> &Tensor {
        &self.output
    }
}

impl Mlp {
    /// `widths = [input, hidden..., output]`, at least two entries, all nonzero.
    pub fn new(prefix: impl Into<String>, widths: Vec<usize>) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::invalid(format!("bad layer widths {widths:?}")));
        }
        Ok(Mlp {
            prefix: prefix.into(),
            widths,
        })
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("at least two widths")
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn weight_name(&self, layer: usize) -> String {
        format!("{}.l{layer:02}.w", self.prefix)
    }

    pub fn bias_name(&self, layer: usize) -> String {
        format!("{}.l{layer:02}.b", self.prefix)
    }

    /// He-normal weights for ReLU layers, `1/fan_in` variance for the output
    /// layer, zero biases.
    pub fn init(&self, params: &mut ParamSet, rng: &mut Rng) {
        for l in 0..self.num_layers() {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            let gain = if l + 1 == self.num_layers() { 1.0 } else { 2.0 };
            let std = (gain / fan_in as f64).sqrt();
            params.insert(self.weight_name(l), rng.gaussian(&[fan_in, fan_out]).scale(std));
            params.insert(self.bias_name(l), Tensor::zeros(&[fan_out]));
        }
    }

    pub fn init_zeros(&self, params: &mut ParamSet) {
        for l in 0..self.num_layers() {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            params.insert(self.weight_name(l), Tensor::zeros(&[fan_in, fan_out]));
            params.insert(self.bias_name(l), Tensor::zeros(&[fan_out]));
        }
    }

    /// Checks that `params` holds every tensor of this network with the right shape.
    pub fn check_params(&self, params: &ParamSet) -> Result<()> {
        for l in 0..self.num_layers() {
            let w = params.require(&self.weight_name(l))?;
            let b = params.require(&self.bias_name(l))?;
            if w.shape() != [self.widths[l], self.widths[l + 1]] || b.shape() != [self.widths[l + 1]] {
                return Err(Error::shape(format!(
                    "layer {l} of '{}' has shapes {:?}/{:?}",
                    self.prefix,
                    w.shape(),
                    b.shape()
                )));
            }
        }
        Ok(())
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.rank() != 2 || x.cols() != self.input_width() {
            return Err(Error::shape(format!(
                "'{}' expects batch × {}, got {:?}",
                self.prefix,
                self.input_width(),
                x.shape()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, params: &ParamSet, x: &Tensor) -> Result<MlpTape> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.num_layers());
        let mut pre = Vec::with_capacity(self.num_layers() - 1);
        let mut h = x.clone();
        for l in 0..self.num_layers() {
            let w = params.require(&self.weight_name(l))?;
            let b = params.require(&self.bias_name(l))?;
            let a = h.matmul(w)?.add_row_vector(b)?;
            inputs.push(h);
            if l + 1 < self.num_layers() {
                h = a.map(|v| v.max(0.0));
                pre.push(a);
            } else {
                h = a;
            }
        }
        Ok(MlpTape {
            inputs,
            pre,
            output: h,
        })
    }

    /// Forward pass without keeping activations.
    pub fn apply(&self, params: &ParamSet, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut h = x.clone();
        for l in 0..self.num_layers() {
            let w = params.require(&self.weight_name(l))?;
            let b = params.require(&self.bias_name(l))?;
            h = h.matmul(w)?.add_row_vector(b)?;
            if l + 1 < self.num_layers() {
                h.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        Ok(h)
    }

    /// Backpropagates `grad_out` (∂L/∂output), adding parameter gradients into
    /// `grads` (created on demand) and returning ∂L/∂input.
    pub fn backward(
        &self,
        params: &ParamSet,
        tape: &MlpTape,
        grad_out: &Tensor,
        grads: &mut ParamSet,
    ) -> Result<Tensor> {
        if grad_out.shape() != tape.output.shape() {
            return Err(Error::shape(format!(
                "output gradient {:?} for output {:?}",
                grad_out.shape(),
                tape.output.shape()
            )));
        }
        let mut g = grad_out.clone();
        for l in (0..self.num_layers()).rev() {
            if l + 1 < self.num_layers() {
                g = g.zip_map(&tape.pre[l], |gv, a| if a > 0.0 { gv } else { 0.0 })?;
            }
            let w_name = self.weight_name(l);
            let b_name = self.bias_name(l);
            let gw = tape.inputs[l].t_matmul(&g)?;
            let gb = g.sum_rows();
            add_into(grads, &w_name, gw)?;
            add_into(grads, &b_name, gb)?;
            g = g.matmul_t(params.require(&w_name)?)?;
        }
        Ok(g)
    }
}

fn add_into(grads: &mut ParamSet, name: &str, value: Tensor) -> Result<()> {
    match grads.get_mut(name) {
        Some(t) => t.axpy(1.0, &value),
        None => {
            grads.insert(name, value);
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_degenerate_widths() {
        assert!(Mlp::new("m", vec![3]).is_err());
        assert!(Mlp::new("m", vec![3, 0, 2]).is_err());
    }

    #[test]
    fn forward_matches_apply() {
        let net = Mlp::new("m", vec![3, 5, 2]).unwrap();
        let mut rng = Rng::seeded(3);
        let mut p = ParamSet::new();
        net.init(&mut p, &mut rng);
        let x = rng.gaussian(&[4, 3]);
        let tape = net.forward(&p, &x).unwrap();
        assert_eq!(tape.output(), &net.apply(&p, &x).unwrap());
    }

    #[test]
    fn wrong_input_width_is_a_shape_error() {
        let net = Mlp::new("m", vec![3, 2]).unwrap();
        let mut p = ParamSet::new();
        net.init_zeros(&mut p);
        assert!(matches!(net.apply(&p, &Tensor::zeros(&[1, 4])), Err(Error::Shape(_))));
    }

    #[test]
    fn missing_params_are_reported() {
        let net = Mlp::new("m", vec![3, 2]).unwrap();
        let err = net.check_params(&ParamSet::new()).unwrap_err();
        assert!(err.to_string().contains("m.l00.w"));
    }
}
