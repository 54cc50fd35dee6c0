//! Random small networks for derivative checks.

use emoc_core::rng::seeded;
use emoc_core::{LayerSpec, Network, Padding, Tensor};
use rand::Rng;

use crate::uniform_vec;

/// A random network with at most three parameterized layers and at most 500
/// parameters, with `N(0, sigma²)` weights and small random biases, plus a
/// matching random input.
pub fn random_small_network(seed: u64, sigma: f64) -> (Network<f64>, Tensor<f64>) {
    let mut rng = seeded(seed);
    let classes = rng.random_range(2..=5);
    let (input_shape, layers) = match seed % 4 {
        0 => {
            let d = rng.random_range(2..=8);
            (vec![d], vec![LayerSpec::FullyConnected { inputs: d, outputs: classes }, LayerSpec::Softmax])
        }
        1 => {
            let d = rng.random_range(2..=8);
            let h = rng.random_range(3..=12);
            (
                vec![d],
                vec![
                    LayerSpec::FullyConnected { inputs: d, outputs: h },
                    LayerSpec::Relu,
                    LayerSpec::FullyConnected { inputs: h, outputs: classes },
                    LayerSpec::Softmax,
                ],
            )
        }
        2 => {
            let d = rng.random_range(2..=6);
            let h1 = rng.random_range(3..=10);
            let h2 = rng.random_range(3..=10);
            (
                vec![d],
                vec![
                    LayerSpec::FullyConnected { inputs: d, outputs: h1 },
                    LayerSpec::Relu,
                    LayerSpec::FullyConnected { inputs: h1, outputs: h2 },
                    LayerSpec::Relu,
                    LayerSpec::FullyConnected { inputs: h2, outputs: classes },
                    LayerSpec::Softmax,
                ],
            )
        }
        _ => {
            let ch = rng.random_range(1..=2);
            let oc = rng.random_range(2..=3);
            let same = rng.random_bool(0.5);
            let side = 6;
            let conv_side = if same { side } else { side - 2 };
            let pooled = conv_side / 2;
            let flat = oc * pooled * pooled;
            (
                vec![ch, side, side],
                vec![
                    LayerSpec::Convolution2D {
                        in_channels: ch,
                        out_channels: oc,
                        kernel: 3,
                        stride: 1,
                        padding: if same { Padding::Same } else { Padding::Valid },
                    },
                    LayerSpec::Relu,
                    LayerSpec::MaxPool2D { window: 2 },
                    LayerSpec::FullyConnected { inputs: flat, outputs: classes },
                    LayerSpec::Softmax,
                ],
            )
        }
    };
    let mut net = Network::new(input_shape.clone(), layers).expect("valid fixture");
    net.init_gaussian(sigma, &mut rng);
    let segments = net.params().segments().to_vec();
    for seg in &segments {
        let (_, b) = net.params_mut().split_mut(seg);
        for v in b {
            *v = rng.random_range(-0.1..0.1);
        }
    }
    assert!(net.num_params() <= 500, "fixture too large: {}", net.num_params());
    let n: usize = input_shape.iter().product();
    let x = Tensor::new(input_shape, uniform_vec(&mut rng, n, 1.0)).expect("shape");
    (net, x)
}

/// Softmax regression `D → C` with parameters drawn uniformly from
/// `[-scale, scale]`.
pub fn softmax_regression(inputs: usize, classes: usize, scale: f64, seed: u64) -> Network<f64> {
    let mut net = Network::new(
        vec![inputs],
        vec![LayerSpec::FullyConnected { inputs, outputs: classes }, LayerSpec::Softmax],
    )
    .expect("valid");
    let mut rng = seeded(seed);
    for v in net.params_mut().as_mut_slice() {
        *v = rng.random_range(-scale..scale);
    }
    net
}
