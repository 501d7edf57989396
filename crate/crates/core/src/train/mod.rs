//! Two-phase training: adversarial warm-up, then the joint objective with
//! stochastic style mixing and conditional alignment.

mod config;
mod data;
mod run;
mod step;

pub use config::TrainConfig;
pub use data::{Dataset, LabelScaler};
pub use run::{
    evaluate_state, train_run, DiagnosticRow, LossWindow, MetricRow, TrainLog, TrainOutcome,
    TrainState, Trainer,
};
pub use step::{
    clip_global_norm,
    composite_loss, make_pseudo_labels, phase, AlignInputs, LossContext, LossTerms, Phase, Sgd,
    StepBatch,
};
