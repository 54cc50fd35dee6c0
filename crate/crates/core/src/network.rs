//! The layered classifier `f(x; θ)`: forward evaluation, reverse-mode
//! gradients of `cᵀ f(x; θ)` and the full `C × P` output Jacobian.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::layer::LayerSpec;
use crate::params::{ParameterVector, Segment};
use crate::rng::seeded;
use crate::{cast, Error, Result, Scalar, Tensor};

/// Standard deviation of the default Gaussian weight initialization.
pub const DEFAULT_INIT_SIGMA: f64 = 0.01;

/// Activations recorded by a forward pass; `activations[0]` is the input and
/// `activations[i + 1]` the output of layer `i`.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    activations: Vec<Vec<T>>,
}

impl<T> ForwardTrace<T> {
    pub fn output(&self) -> &[T] {
        self.activations.last().expect("trace holds the input")
    }

    /// Input of the final (softmax) layer.
    pub fn logits(&self) -> &[T] {
        &self.activations[self.activations.len() - 2]
    }
}

/// Row-major `rows × cols` matrix of output-parameter derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct Jacobian<T> {
    rows: usize,
    cols: usize,
    values: Vec<T>,
}

impl<T: Scalar> Jacobian<T> {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, c: usize) -> &[T] {
        &self.values[c * self.cols..(c + 1) * self.cols]
    }

    pub fn get(&self, c: usize, j: usize) -> T {
        self.values[c * self.cols + j]
    }

    /// `J v` for a parameter-space vector `v`.
    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        debug_assert_eq!(v.len(), self.cols);
        (0..self.rows)
            .map(|c| {
                self.row(c)
                    .iter()
                    .zip(v)
                    .fold(T::zero(), |acc, (&a, &b)| acc + a * b)
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Network<T> {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    /// `shapes[i]` is the input shape of layer `i`; the last entry is the output.
    shapes: Vec<Vec<usize>>,
    params: ParameterVector<T>,
    segment_of: Vec<Option<usize>>,
}

/// Serializable snapshot of a network's architecture and parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkCheckpoint<T> {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub params: Vec<T>,
}

fn infer_shapes(input_shape: &[usize], layers: &[LayerSpec]) -> Result<Vec<Vec<usize>>> {
    if layers.is_empty() {
        return Err(Error::InvalidNetwork("no layers".into()));
    }
    if input_shape.is_empty() || input_shape.contains(&0) {
        return Err(Error::InvalidNetwork(format!(
            "input shape {input_shape:?} must have positive extents"
        )));
    }
    let last = layers.len() - 1;
    for (i, l) in layers.iter().enumerate() {
        if *l == LayerSpec::Softmax && i != last {
            return Err(Error::InvalidNetwork(format!(
                "softmax at position {i} is not the final layer"
            )));
        }
    }
    if layers[last] != LayerSpec::Softmax {
        return Err(Error::InvalidNetwork(
            "the final layer must be softmax".into(),
        ));
    }
    let mut shapes = vec![input_shape.to_vec()];
    for (i, l) in layers.iter().enumerate() {
        let next = l
            .output_shape(&shapes[i])
            .map_err(|e| Error::InvalidNetwork(format!("layer {i}: {e}")))?;
        shapes.push(next);
    }
    Ok(shapes)
}

fn build_layout(layers: &[LayerSpec]) -> (Vec<Segment>, Vec<Option<usize>>) {
    let mut segments = Vec::new();
    let mut segment_of = Vec::with_capacity(layers.len());
    let mut offset = 0;
    for (i, l) in layers.iter().enumerate() {
        let (weights, biases) = l.param_counts();
        if weights + biases == 0 {
            segment_of.push(None);
            continue;
        }
        segment_of.push(Some(segments.len()));
        segments.push(Segment {
            layer: i,
            offset,
            weights,
            biases,
        });
        offset += weights + biases;
    }
    (segments, segment_of)
}

impl<T: Scalar> Network<T> {
    /// Validates the layer stack and allocates zero parameters.
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>) -> Result<Self> {
        let shapes = infer_shapes(&input_shape, &layers)?;
        let (segments, segment_of) = build_layout(&layers);
        Ok(Self {
            input_shape,
            layers,
            shapes,
            params: ParameterVector::with_layout(Arc::new(segments)),
            segment_of,
        })
    }

    /// Network with `N(0, 0.01²)` weights and zero biases drawn from `seed`.
    pub fn seeded(input_shape: Vec<usize>, layers: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        let mut net = Self::new(input_shape, layers)?;
        net.init_gaussian(DEFAULT_INIT_SIGMA, &mut seeded(seed));
        Ok(net)
    }

    /// Redraws weights from `N(0, sigma²)` and zeroes biases.
    pub fn init_gaussian<R: Rng + ?Sized>(&mut self, sigma: f64, rng: &mut R) {
        let normal = Normal::new(0.0, sigma).expect("finite sigma");
        let segments = self.params.segments().to_vec();
        for seg in &segments {
            let (w, b) = self.params.split_mut(seg);
            for v in w {
                *v = cast(normal.sample(rng));
            }
            b.fill(T::zero());
        }
    }

    pub fn from_checkpoint(cp: NetworkCheckpoint<T>) -> Result<Self> {
        let mut net = Self::new(cp.input_shape, cp.layers)?;
        net.params = net.params.from_values_like(cp.params)?;
        Ok(net)
    }

    pub fn to_checkpoint(&self) -> NetworkCheckpoint<T> {
        NetworkCheckpoint {
            input_shape: self.input_shape.clone(),
            layers: self.layers.clone(),
            params: self.params.as_slice().to_vec(),
        }
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn num_classes(&self) -> usize {
        self.shapes.last().map_or(0, |s| s.iter().product())
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &ParameterVector<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterVector<T> {
        &mut self.params
    }

    pub fn set_params(&mut self, params: ParameterVector<T>) -> Result<()> {
        self.params.check_same_layout(&params)?;
        self.params = params;
        Ok(())
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.shape() != self.input_shape.as_slice() {
            return Err(Error::Shape(format!(
                "network expects input shape {:?}, got {:?}",
                self.input_shape,
                x.shape()
            )));
        }
        Ok(())
    }

    fn layer_params(&self, i: usize) -> (&[T], &[T]) {
        match self.segment_of[i] {
            Some(s) => {
                let seg = &self.params.segments()[s];
                (self.params.weights(seg), self.params.biases(seg))
            }
            None => (&[], &[]),
        }
    }

    /// Class posterior `f(x; θ)`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Vec<T>> {
        let trace = self.forward_trace(x)?;
        Ok(trace.activations.into_iter().next_back().unwrap_or_default())
    }

    pub fn forward_trace(&self, x: &Tensor<T>) -> Result<ForwardTrace<T>> {
        self.check_input(x)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.values().to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let (w, b) = self.layer_params(i);
            let y = layer.forward(&self.shapes[i], &self.shapes[i + 1], &activations[i], w, b);
            activations.push(y);
        }
        Ok(ForwardTrace { activations })
    }

    /// Reverse pass seeded with `grad` as the gradient w.r.t. the output of
    /// layer `top - 1` (so `top == layers.len()` seeds at the posterior).
    pub(crate) fn backprop(&self, trace: &ForwardTrace<T>, top: usize, grad: Vec<T>) -> ParameterVector<T> {
        let mut out = self.params.zeros_like();
        let first_param = self.segment_of.iter().position(Option::is_some);
        let mut g = grad;
        for i in (0..top).rev() {
            // Nothing below the first parameterized layer needs a gradient.
            let Some(first) = first_param else { break };
            let need_input = i > first;
            let layer = &self.layers[i];
            let (w, _) = self.layer_params(i);
            let (gw, gb): (&mut [T], &mut [T]) = match self.segment_of[i] {
                Some(s) => {
                    let seg = self.params.segments()[s];
                    out.split_mut(&seg)
                }
                None => (&mut [], &mut []),
            };
            let next = layer.backward(
                &self.shapes[i],
                &self.shapes[i + 1],
                &trace.activations[i],
                &trace.activations[i + 1],
                &g,
                w,
                gw,
                gb,
                need_input,
            );
            match next {
                Some(n) => g = n,
                None => break,
            }
        }
        out
    }

    /// Gradient of `cotangentᵀ f(x; θ)` with respect to θ.
    pub fn backward_scalar(&self, x: &Tensor<T>, cotangent: &[T]) -> Result<ParameterVector<T>> {
        let trace = self.forward_trace(x)?;
        self.backward_scalar_from(&trace, cotangent)
    }

    pub fn backward_scalar_from(&self, trace: &ForwardTrace<T>, cotangent: &[T]) -> Result<ParameterVector<T>> {
        if cotangent.len() != self.num_classes() {
            return Err(Error::Shape(format!(
                "cotangent of length {} for {} classes",
                cotangent.len(),
                self.num_classes()
            )));
        }
        Ok(self.backprop(trace, self.layers.len(), cotangent.to_vec()))
    }

    /// Gradient of `gᵀ z` where `z` are the logits feeding the softmax.
    pub(crate) fn backward_from_logits(&self, trace: &ForwardTrace<T>, logit_grad: Vec<T>) -> ParameterVector<T> {
        self.backprop(trace, self.layers.len() - 1, logit_grad)
    }

    /// `∇_θ f(x; θ)` as a `C × P` matrix, one backward pass per class.
    pub fn output_jacobian(&self, x: &Tensor<T>) -> Result<Jacobian<T>> {
        let trace = self.forward_trace(x)?;
        Ok(self.output_jacobian_from(&trace))
    }

    pub fn output_jacobian_from(&self, trace: &ForwardTrace<T>) -> Jacobian<T> {
        let classes = self.num_classes();
        let cols = self.num_params();
        let mut values = Vec::with_capacity(classes * cols);
        for c in 0..classes {
            let mut e = vec![T::zero(); classes];
            e[c] = T::one();
            values.extend_from_slice(self.backprop(trace, self.layers.len(), e).as_slice());
        }
        Jacobian {
            rows: classes,
            cols,
            values,
        }
    }

    /// Adds one output class to the final fully connected layer. The new row
    /// of weights is drawn from `N(0, sigma²)` and its bias is zero. When
    /// given, `velocity` is grown in step with zeros.
    pub fn widen_output<R: Rng + ?Sized>(
        &mut self,
        sigma: f64,
        rng: &mut R,
        velocity: Option<&mut ParameterVector<T>>,
    ) -> Result<usize> {
        let (seg_index, seg) = self
            .params
            .segments()
            .iter()
            .copied()
            .enumerate()
            .next_back()
            .ok_or_else(|| Error::InvalidNetwork("network has no parameters to widen".into()))?;
        let LayerSpec::FullyConnected { inputs, outputs } = self.layers[seg.layer] else {
            return Err(Error::InvalidNetwork(
                "the last parameterized layer is not fully connected".into(),
            ));
        };
        let widened = LayerSpec::FullyConnected {
            inputs,
            outputs: outputs + 1,
        };
        let mut layers = self.layers.clone();
        layers[seg.layer] = widened;
        let shapes = infer_shapes(&self.input_shape, &layers)?;

        // New weight row goes after the existing weights, new bias after the
        // existing biases (which shift by `inputs`).
        let inserts = [(seg.offset + seg.weights, inputs), (seg.end(), 1)];
        self.params.grow_segment(seg_index, &inserts, inputs, 1);
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let row = seg.offset + seg.weights;
        for j in 0..inputs {
            self.params[row + j] = cast(normal.sample(rng));
        }
        if let Some(v) = velocity {
            v.check_same_layout(&self.params).or_else(|_| {
                if v.len() + inputs + 1 == self.params.len() {
                    v.grow_segment(seg_index, &inserts, inputs, 1);
                    Ok(())
                } else {
                    Err(Error::Shape("velocity does not match the network".into()))
                }
            })?;
        }
        self.layers = layers;
        self.shapes = shapes;
        Ok(outputs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fc(i: usize, o: usize) -> LayerSpec {
        LayerSpec::FullyConnected {
            inputs: i,
            outputs: o,
        }
    }

    #[test]
    fn zero_weights_give_uniform_posterior() {
        let net = Network::<f64>::new(vec![3], vec![fc(3, 2), LayerSpec::Softmax]).unwrap();
        let p = net.forward(&Tensor::from_vec(vec![1.0, -4.0, 9.0])).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_must_be_last_and_present() {
        assert!(Network::<f64>::new(vec![2], vec![LayerSpec::Softmax, fc(2, 2)]).is_err());
        assert!(Network::<f64>::new(vec![2], vec![fc(2, 2)]).is_err());
        assert!(Network::<f64>::new(vec![2], vec![]).is_err());
    }

    #[test]
    fn incompatible_layers_rejected() {
        let err = Network::<f64>::new(vec![4], vec![fc(3, 2), LayerSpec::Softmax]).unwrap_err();
        assert!(matches!(err, Error::InvalidNetwork(_)));
    }

    #[test]
    fn input_shape_mismatch_is_an_error() {
        let net = Network::<f64>::seeded(vec![3], vec![fc(3, 2), LayerSpec::Softmax], 1).unwrap();
        assert!(matches!(
            net.forward(&Tensor::from_vec(vec![1.0, 2.0])),
            Err(Error::Shape(_))
        ));
        assert!(net.backward_scalar(&Tensor::from_vec(vec![1.0, 2.0, 3.0]), &[1.0]).is_err());
    }

    #[test]
    fn zero_cotangent_gives_zero_gradient() {
        let net = Network::<f64>::seeded(
            vec![4],
            vec![fc(4, 5), LayerSpec::Relu, fc(5, 3), LayerSpec::Softmax],
            3,
        )
        .unwrap();
        let g = net
            .backward_scalar(&Tensor::from_vec(vec![0.3, -0.1, 0.8, 0.2]), &[0.0; 3])
            .unwrap();
        assert_eq!(g.len(), net.num_params());
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn parameter_free_network_has_empty_jacobian() {
        let net = Network::<f64>::new(vec![3], vec![LayerSpec::Softmax]).unwrap();
        let j = net.output_jacobian(&Tensor::from_vec(vec![0.1, 0.2, 0.3])).unwrap();
        assert_eq!((j.rows(), j.cols()), (3, 0));
    }

    #[test]
    fn widening_appends_a_class() {
        let mut net = Network::<f64>::seeded(
            vec![2],
            vec![fc(2, 3), LayerSpec::Relu, fc(3, 2), LayerSpec::Softmax],
            9,
        )
        .unwrap();
        let before = net.params().clone();
        let mut velocity = before.zeros_like();
        velocity.as_mut_slice().fill(1.0);
        let idx = net.widen_output(0.01, &mut seeded(1), Some(&mut velocity)).unwrap();
        assert_eq!(idx, 2);
        assert_eq!(net.num_classes(), 3);
        assert_eq!(net.num_params(), before.len() + 4);
        let seg = *net.params().segments().last().unwrap();
        let old_seg = *before.segments().last().unwrap();
        // Old rows and biases are preserved; the new bias is zero.
        assert_eq!(
            &net.params().weights(&seg)[..old_seg.weights],
            before.weights(&old_seg)
        );
        assert_eq!(&net.params().biases(&seg)[..2], before.biases(&old_seg));
        assert_eq!(net.params().biases(&seg)[2], 0.0);
        assert_eq!(velocity.len(), net.num_params());
        assert_eq!(velocity.as_slice().iter().filter(|&&v| v == 0.0).count(), 4);
        let p = net.forward(&Tensor::from_vec(vec![0.5, 0.5])).unwrap();
        assert_eq!(p.len(), 3);
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = Network::<f64>::seeded(vec![2], vec![fc(2, 2), LayerSpec::Softmax], 4).unwrap();
        let back = Network::from_checkpoint(net.to_checkpoint()).unwrap();
        assert_eq!(back.params(), net.params());
    }
}
