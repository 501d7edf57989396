//! Differentiable numeric substrate: tensors, a reverse-mode tape, the staged
//! feature extractor with per-stage taps, the predictor and discriminator
//! heads, checkpoints and a finite-difference gradient checker.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use gradcheck::{analytic_gradients, compare_gradients, grad_check, numeric_gradients, GradCheckReport};
pub use graph::{sigmoid, Gradients, Graph, Var};
pub use model::{
    BackboneConfig, Bound, DiscriminatorHead, IdentityTap, Model, ParamId, ParamStore,
    PredictorHead, StageOutputs, StagedBackbone, Tap, NUM_STAGES,
};
pub use tensor::Tensor;
