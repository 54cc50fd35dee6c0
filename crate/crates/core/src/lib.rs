//! Layered neural classifiers with exact parameter Jacobians, continual
//! mini-batch training, and batch query selection by expected model output
//! change (EMOC) plus the usual uncertainty baselines.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`). The concrete
//! aliases at the crate root fix the scalar to `f64`, which is what the
//! experiment harness and the annotation service use.
//!
//! ```
//! use emoc_core::{LayerSpec, Network, Tensor};
//!
//! let net = Network::<f64>::seeded(
//!     vec![4],
//!     vec![
//!         LayerSpec::FullyConnected { inputs: 4, outputs: 8 },
//!         LayerSpec::Relu,
//!         LayerSpec::FullyConnected { inputs: 8, outputs: 3 },
//!         LayerSpec::Softmax,
//!     ],
//!     7,
//! )
//! .unwrap();
//! let x = Tensor::from_vec(vec![0.1, -0.2, 0.3, 0.0]);
//! let p = net.forward(&x).unwrap();
//! assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
//! ```

pub mod data;
mod error;
pub mod layer;
pub mod network;
pub mod params;
pub mod rng;
mod scalar;
pub mod select;
pub mod tensor;
pub mod training;

pub use data::{PoolEntry, Sample, SampleId, SampleStore};
pub use error::{Error, Result};
pub use layer::{LayerSpec, Padding};
pub use network::{ForwardTrace, Jacobian, Network};
pub use params::{ParameterVector, Segment};
pub use scalar::{cast, Scalar};
pub use select::{
    CandidateSet, EvalJacobians, MinReading, ScoredRound, SelectionConfig, Strategy,
};
pub use tensor::Tensor;
pub use training::{
    LossKind, MixtureSampler, OptimizerState, RegularizerConfig, SlotSource, TrainingConfig,
};

/// Double-precision tensor.
pub type Tensor64 = Tensor<f64>;
/// Double-precision network.
pub type Network64 = Network<f64>;
/// Double-precision flattened parameters.
pub type Params64 = ParameterVector<f64>;
/// Double-precision sample.
pub type Sample64 = Sample<f64>;
/// Double-precision sample store.
pub type SampleStore64 = SampleStore<f64>;
/// Double-precision optimizer state.
pub type OptimizerState64 = OptimizerState<f64>;

/// Single-precision network, mostly useful for memory-bound experiments.
pub type Network32 = Network<f32>;
/// Single-precision tensor.
pub type Tensor32 = Tensor<f32>;
