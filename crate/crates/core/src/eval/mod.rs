//! Metrics, the synthetic two-domain benchmark, ablations and embedding plots.

pub mod ablation;
pub mod embedding;
pub mod metrics;
pub mod synthetic;

pub use ablation::{run_ablation, run_single, AblationRow, AblationTable, Suite, Variant};
pub use embedding::{embed, emit_embedding_plot, render_svg, Embedding, Pca};
pub use metrics::{evaluate, krocc, plcc, rmse, srocc, MetricReport};
pub use synthetic::{
    make_synthetic_domains, DomainShift, Interference, QualityFn, SyntheticDomainSpec, SyntheticDomains,
};
