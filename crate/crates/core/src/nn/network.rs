use rand::Rng;

use super::layers::{commit_running_stats, Cache, Layer, Mode};
use super::{Gradients, NnError, ParameterSet, Tensor};

/// Record of one forward pass, consumed by [`Network::backward`].
#[derive(Debug, Clone, Default)]
pub struct Tape {
    caches: Vec<Cache>,
    output_shape: Vec<usize>,
}

impl Tape {
    pub fn is_empty(&self) -> bool {
        self.caches.is_empty()
    }
}

/// Which gradients a backward pass should produce.
#[derive(Debug, Clone, Copy)]
pub struct GradRequest {
    pub input: bool,
    pub params: bool,
}

impl GradRequest {
    pub const PARAMS: GradRequest = GradRequest { input: false, params: true };
    pub const INPUT: GradRequest = GradRequest { input: true, params: false };
    pub const BOTH: GradRequest = GradRequest { input: true, params: true };
}

#[derive(Debug, Clone)]
pub struct BackwardOutput {
    pub input_grad: Option<Tensor>,
    pub grads: Gradients,
}

/// A sequential network: declarative layer list plus its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    input_shape: Vec<usize>,
    params: ParameterSet,
}

impl Network {
    /// Builds a network with zero-valued parameters; BN scales start at 1
    /// and running variances at 1.
    pub fn new(layers: Vec<Layer>, input_shape: Vec<usize>) -> Result<Self, NnError> {
        let mut shape = input_shape.clone();
        let mut params = ParameterSet::new();
        for layer in &layers {
            shape = layer.output_shape(&shape)?;
            for (name, pshape, trainable) in layer.param_specs() {
                let fill = if name.ends_with(".gamma") || name.ends_with(".running_var") { 1.0 } else { 0.0 };
                params.insert(name, Tensor::full(&pshape, fill), trainable)?;
            }
        }
        Ok(Self { layers, input_shape, params })
    }

    /// Draws conv and dense weights from `U(-1/√fan_in, 1/√fan_in)`;
    /// biases stay zero.
    pub fn init_uniform<R: Rng>(&mut self, rng: &mut R) {
        for layer in &self.layers {
            let (name, fan_in) = match layer {
                Layer::Conv2d { name, in_ch, kernel, .. } => (name, in_ch * kernel * kernel),
                Layer::Dense { name, in_features, .. } => (name, *in_features),
                _ => continue,
            };
            let bound = 1.0 / (fan_in as f32).sqrt();
            let w = self
                .params
                .tensor_mut(&format!("{name}.weight"))
                .expect("weight registered at construction");
            for v in w.data_mut() {
                *v = rng.gen_range(-bound..bound);
            }
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    /// Per-example output shape.
    pub fn output_shape(&self) -> Vec<usize> {
        let mut shape = self.input_shape.clone();
        for layer in &self.layers {
            shape = layer.output_shape(&shape).expect("validated at construction");
        }
        shape
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    /// Replaces parameters after checking names and shapes agree.
    pub fn set_params(&mut self, params: ParameterSet) -> Result<(), NnError> {
        if self.params.len() != params.len() {
            return Err(NnError::ParamLayout(format!(
                "expected {} tensors, got {}",
                self.params.len(),
                params.len()
            )));
        }
        for ((na, a), (nb, b)) in self.params.iter().zip(params.iter()) {
            if na != nb || a.value.shape() != b.value.shape() {
                return Err(NnError::ParamLayout(format!(
                    "{na}{:?} vs {nb}{:?}",
                    a.value.shape(),
                    b.value.shape()
                )));
            }
        }
        self.params = params;
        Ok(())
    }

    fn check_input(&self, input: &Tensor) -> Result<(), NnError> {
        if input.shape().len() != self.input_shape.len() + 1 || input.shape()[1..] != self.input_shape[..] {
            let mut expected = vec![input.shape().first().copied().unwrap_or(0)];
            expected.extend(&self.input_shape);
            return Err(NnError::ShapeMismatch {
                layer: "input".into(),
                expected,
                actual: input.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Pure forward pass. Nothing is recorded and no state changes, in
    /// either mode.
    pub fn forward(&self, input: &Tensor, mode: Mode) -> Result<Tensor, NnError> {
        self.check_input(input)?;
        let mut x = input.clone();
        for layer in &self.layers {
            x = layer.forward(&self.params, x, mode, false)?.0;
        }
        Ok(x)
    }

    /// Forward pass that records what [`Network::backward`] needs.
    pub fn forward_tape(&self, input: &Tensor, mode: Mode) -> Result<(Tensor, Tape), NnError> {
        self.check_input(input)?;
        let mut x = input.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, cache) = layer.forward(&self.params, x, mode, true)?;
            caches.push(cache.expect("recording forward yields a cache"));
            x = y;
        }
        let output_shape = x.shape().to_vec();
        Ok((x, Tape { caches, output_shape }))
    }

    /// Train-mode recorded forward that also folds the batch statistics into
    /// the running statistics.
    pub fn forward_train(&mut self, input: &Tensor) -> Result<(Tensor, Tape), NnError> {
        let (y, tape) = self.forward_tape(input, Mode::Train)?;
        self.commit_batch_stats(&tape)?;
        Ok((y, tape))
    }

    /// Applies the momentum update of every batch-norm layer from a
    /// train-mode tape. Eval-mode tapes leave the statistics untouched.
    pub fn commit_batch_stats(&mut self, tape: &Tape) -> Result<(), NnError> {
        if tape.caches.len() != self.layers.len() {
            return Err(NnError::NoRecordedForward);
        }
        for (layer, cache) in self.layers.iter().zip(&tape.caches) {
            if let Layer::BatchNorm2d { name, .. } = layer {
                commit_running_stats(&mut self.params, name, cache)?;
            }
        }
        Ok(())
    }

    /// Reverse pass from `grad_output` (gradient of the scalar loss with
    /// respect to the network output).
    pub fn backward(&self, tape: &Tape, grad_output: &Tensor, want: GradRequest) -> Result<BackwardOutput, NnError> {
        if tape.caches.len() != self.layers.len() {
            return Err(NnError::NoRecordedForward);
        }
        if grad_output.shape() != tape.output_shape.as_slice() {
            return Err(NnError::ShapeMismatch {
                layer: "output".into(),
                expected: tape.output_shape.clone(),
                actual: grad_output.shape().to_vec(),
            });
        }
        let mut grads = Gradients::new();
        let mut grad = grad_output.clone();
        for (i, (layer, cache)) in self.layers.iter().zip(&tape.caches).enumerate().rev() {
            let need_input = i > 0 || want.input;
            let gs = want.params.then_some(&mut grads);
            match layer.backward(&self.params, cache, grad, need_input, gs)? {
                Some(g) => grad = g,
                None => {
                    debug_assert_eq!(i, 0);
                    return Ok(BackwardOutput { input_grad: None, grads });
                }
            }
        }
        Ok(BackwardOutput {
            input_grad: want.input.then_some(grad),
            grads,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> Network {
        Network::new(
            vec![
                Layer::Flatten,
                Layer::Dense { name: "fc".into(), in_features: 4, out_features: 3 },
            ],
            vec![1, 2, 2],
        )
        .unwrap()
    }

    #[test]
    fn linear_sum_gradient_is_input() {
        // loss = sum(W·x) ⇒ dL/dW[o, i] = x[i]
        let mut net = tiny();
        net.init_uniform(&mut ChaCha8Rng::seed_from_u64(1));
        let x = Tensor::new(vec![1, 1, 2, 2], vec![0.5, -1.0, 2.0, 3.0]).unwrap();
        let (y, tape) = net.forward_tape(&x, Mode::Train).unwrap();
        let out = net.backward(&tape, &Tensor::full(y.shape(), 1.0), GradRequest::PARAMS).unwrap();
        let gw = out.grads.get("fc.weight").unwrap();
        for o in 0..3 {
            assert_eq!(&gw.data()[o * 4..o * 4 + 4], x.data());
        }
        assert_eq!(out.grads.get("fc.bias").unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn zero_loss_gradient_is_zero() {
        let mut net = tiny();
        net.init_uniform(&mut ChaCha8Rng::seed_from_u64(2));
        let x = Tensor::full(&[2, 1, 2, 2], 0.3);
        let (y, tape) = net.forward_tape(&x, Mode::Train).unwrap();
        let out = net.backward(&tape, &Tensor::zeros(y.shape()), GradRequest::BOTH).unwrap();
        for (_, g) in out.grads.iter() {
            assert!(g.data().iter().all(|&v| v == 0.0));
        }
        assert!(out.input_grad.unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_without_forward_errors() {
        let net = tiny();
        let err = net.backward(&Tape::default(), &Tensor::zeros(&[1, 3]), GradRequest::PARAMS);
        assert!(matches!(err, Err(NnError::NoRecordedForward)));
    }

    #[test]
    fn shape_mismatch_names_layer() {
        let net = tiny();
        let err = net.forward(&Tensor::zeros(&[1, 1, 3, 3]), Mode::Eval).unwrap_err();
        assert!(matches!(err, NnError::ShapeMismatch { .. }));
    }
}
