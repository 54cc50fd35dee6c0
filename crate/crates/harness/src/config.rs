//! Experiment configuration bundle and its TOML file form.
//!
//! A config file may set any subset of keys; unset keys keep the values of
//! the preset it is layered onto.

use std::path::Path;

use emoc_core::{LayerSpec, Network, Padding, SelectionConfig, TrainingConfig};
use emoc_core::rng::seeded;
use serde::{Deserialize, Serialize};

use crate::protocol::ProtocolConfig;
use crate::synthetic::SyntheticSpec;
use crate::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    /// Explicit layer stack. When absent, a default stack is derived from the
    /// input shape: dense layers of widths `hidden` for vectors, a small
    /// three-stage convolutional net for images.
    pub layers: Option<Vec<LayerSpec>>,
    pub hidden: Vec<usize>,
    pub init_sigma: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            layers: None,
            hidden: vec![32],
            init_sigma: emoc_core::network::DEFAULT_INIT_SIGMA,
        }
    }
}

fn conv(in_channels: usize, out_channels: usize) -> LayerSpec {
    LayerSpec::Convolution2D {
        in_channels,
        out_channels,
        kernel: 5,
        stride: 1,
        padding: Padding::Same,
    }
}

impl NetworkConfig {
    pub fn layer_stack(&self, input_shape: &[usize], num_classes: usize) -> Vec<LayerSpec> {
        if let Some(layers) = &self.layers {
            return layers.clone();
        }
        let mut layers = Vec::new();
        let mut width: usize = input_shape.iter().product();
        if let [channels, h, w] = *input_shape {
            // conv(32)-pool-conv(32)-pool-conv(64)-pool, then dense.
            let mut c = channels;
            let (mut h, mut w) = (h, w);
            for out in [32, 32, 64] {
                if h < 2 || w < 2 {
                    break;
                }
                layers.push(conv(c, out));
                layers.push(LayerSpec::Relu);
                layers.push(LayerSpec::MaxPool2D { window: 2 });
                c = out;
                h /= 2;
                w /= 2;
            }
            width = c * h * w;
        }
        for &h in &self.hidden {
            layers.push(LayerSpec::FullyConnected { inputs: width, outputs: h });
            layers.push(LayerSpec::Relu);
            width = h;
        }
        layers.push(LayerSpec::FullyConnected { inputs: width, outputs: num_classes });
        layers.push(LayerSpec::Softmax);
        layers
    }

    pub fn build(&self, input_shape: &[usize], num_classes: usize, seed: u64) -> Result<Network<f64>> {
        let mut net = Network::new(input_shape.to_vec(), self.layer_stack(input_shape, num_classes))?;
        if net.num_classes() != num_classes {
            return Err(HarnessError::Config(format!(
                "network has {} outputs for {num_classes} classes",
                net.num_classes()
            )));
        }
        net.init_gaussian(self.init_sigma, &mut seeded(seed));
        Ok(net)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub training: TrainingConfig,
    pub selection: SelectionConfig,
    pub protocol: ProtocolConfig,
    pub synthetic: SyntheticSpec,
    pub network: NetworkConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl ExperimentConfig {
    /// Counts and hyperparameters of the CIFAR-100 study.
    pub fn paper() -> Self {
        Self {
            training: TrainingConfig::default(),
            selection: SelectionConfig::default(),
            protocol: ProtocolConfig::default(),
            synthetic: SyntheticSpec::default(),
            network: NetworkConfig::default(),
        }
    }

    /// The 20-class synthetic analog sized for a single core: 10 known and 10
    /// novel classes, 20 samples per class in the start set and the pool,
    /// `K = 5`, `M = 50`, `R = 30`.
    pub fn desk_scale() -> Self {
        Self {
            training: TrainingConfig {
                learning_rate: 0.01,
                momentum: 0.9,
                mini_batch_size: 32,
                iterations_per_update: 100,
                initial_iterations: 1000,
                ..TrainingConfig::default()
            },
            selection: SelectionConfig {
                num_sets: 50,
                set_size: 5,
                eval_subset_size: 30,
                ..SelectionConfig::default()
            },
            protocol: ProtocolConfig {
                initial_per_class: 20,
                pool_per_class: 20,
                num_initializations: 5,
                ..ProtocolConfig::default()
            },
            synthetic: SyntheticSpec::default(),
            network: NetworkConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.training.validate()?;
        self.selection.validate()?;
        self.protocol.validate()?;
        self.synthetic.validate()
    }

    /// Layers the TOML document `text` over `base`.
    pub fn layered(base: &Self, text: &str) -> Result<Self> {
        let overlay: toml::Table = text.parse().map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        let mut merged = toml::Table::try_from(base).map_err(|e| HarnessError::Config(e.to_string()))?;
        merge(&mut merged, overlay);
        let cfg: Self = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(base: &Self, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(HarnessError::io(path))?;
        Self::layered(base, &text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (k, v) in overlay {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
