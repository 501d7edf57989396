//! Rank-weighted and plain conditional alignment on domains whose
//! feature-label relation agrees or is reversed.

use pcqa_adapt::align::{rca_loss, AlignmentKind, GaussianKernelConfig, RankWeightScope, RankWeights, RcaBatch};
use pcqa_adapt::nnx::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Features on a curve parameterized by the label, plus a little noise.
fn features(labels: &[f64], flip: bool, rng: &mut ChaCha8Rng) -> Tensor {
    let rows: Vec<Vec<f64>> = labels
        .iter()
        .map(|&y| {
            let t = if flip { 1.0 - y } else { y };
            vec![t, (3.0 * t).sin(), t * t, rng.random_range(-0.02..0.02)]
        })
        .collect();
    Tensor::from_rows(&rows).expect("equal row lengths")
}

fn main() -> pcqa_adapt::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 24;
    let y_s: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    let y_t: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    let cfg = GaussianKernelConfig {
        feature_bandwidth: Some(0.5),
        ..Default::default()
    };
    let f_s = features(&y_s, false, &mut rng);

    println!("target relation   kind   loss");
    for (name, flip) in [("same", false), ("reversed", true)] {
        let f_t = features(&y_t, flip, &mut rng);
        let batch = RcaBatch {
            f_s: f_s.clone(),
            f_t,
            y_s: y_s.clone(),
            y_t: y_t.clone(),
            // predictions that rank the samples mostly right
            pred_s: y_s.iter().map(|v| v + rng.random_range(-0.1..0.1)).collect(),
            pred_t: y_t.iter().map(|v| v + rng.random_range(-0.1..0.1)).collect(),
            epsilon: 1e-3,
        };
        for kind in [AlignmentKind::Cod, AlignmentKind::Rca] {
            let w = RankWeights::compute(&batch, kind, RankWeightScope::All)?;
            let loss = rca_loss(&batch, &cfg, &w)?;
            println!("{name:<16}  {kind:?}  {loss:>10.4}  (mean weight {:.3})", w.mean());
        }
    }
    Ok(())
}
