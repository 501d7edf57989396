//! Finite-difference check of the full training objective (regression,
//! adversarial and conditional alignment terms, style mixing, gradient
//! reversal) on a tiny network.
//!
//! Reversal flips the adversarial term's gradient on the backbone only, so
//! the reference is `∂L/∂θ − (1 + s)·∂(λ_d·L_D)/∂θ` for backbone parameters
//! and `∂L/∂θ` for the rest.

use pcqa_adapt::mixup::Stratifier;
use pcqa_adapt::nnx::{analytic_gradients, compare_gradients, numeric_gradients, Bound, Graph, Model, Tensor, Var};
use pcqa_adapt::train::{composite_loss, AlignInputs, LossContext, Phase, StepBatch, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRL: f64 = 0.7;

fn images(n: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::new(&[n, 3, 32, 32], (0..n * 3 * 1024).map(|_| rng.random_range(-1.0..1.0)).collect())
        .expect("image shape")
}

fn main() -> pcqa_adapt::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = TrainConfig {
        batch_size: 4,
        widths: [2, 3, 3, 4],
        head_hidden: 3,
        lambda_r: 1e-2,
        ..TrainConfig::desk()
    };
    // same mixing draws, only the adversarial term left
    let adv_only = TrainConfig {
        lambda_p: 0.0,
        lambda_r: 0.0,
        ..cfg.clone()
    };
    let model = Model::new(cfg.backbone(3), &mut rng)?;
    let labels = vec![0.1, 0.45, 0.5, 0.9];
    let batch = StepBatch {
        source: images(4, &mut rng),
        labels: labels.clone(),
        target: images(4, &mut rng),
    };
    let stratifier = Stratifier::fit(&labels)?;
    let mix = cfg.mix_config()?;
    let ctx = LossContext {
        model: &model,
        stratifier: &stratifier,
        cfg: &cfg,
        mix: &mix,
        phase: Phase::Joint,
        grl_scale: GRL,
    };
    let adv_ctx = LossContext { cfg: &adv_only, ..ctx };

    // pseudo-labels and the kernel bandwidth are constants of the objective
    let frozen = {
        let mut g = Graph::new();
        let p = model.params.bind(&mut g);
        let t = composite_loss(&mut g, &p, &ctx, &batch, false, None, &mut ChaCha8Rng::seed_from_u64(0))?;
        t.align_inputs.expect("joint phase with lambda_r > 0")
    };
    let params = model.params.tensors();

    for mixed in [false, true] {
        let analytic = analytic_gradients(params, objective(&ctx, &batch, &frozen, mixed))?;
        let full = numeric_gradients(params, objective(&ctx, &batch, &frozen, mixed))?;
        let adv = numeric_gradients(params, objective(&adv_ctx, &batch, &frozen, mixed))?;
        let reference: Vec<Tensor> = full
            .iter()
            .zip(&adv)
            .zip(model.params.names())
            .map(|((f, a), name)| {
                if name.starts_with("backbone.") {
                    f.zip_map(a, |f, a| f - (1.0 + GRL) * a).expect("same shape")
                } else {
                    f.clone()
                }
            })
            .collect();
        let report = compare_gradients(&analytic, &reference, 1e-4)?;
        println!(
            "mixed={mixed:<5} {} components, max relative error {:.2e} ({})",
            report.checked,
            report.max_rel_error,
            if report.passed { "ok" } else { "FAIL" }
        );
    }
    Ok(())
}

/// The composite loss with every random draw replayed from one seed.
fn objective<'a>(
    ctx: &'a LossContext<'a>,
    batch: &'a StepBatch,
    frozen: &'a AlignInputs,
    mixed: bool,
) -> impl FnMut(&mut Graph, &[Var]) -> pcqa_adapt::Result<Var> + 'a {
    move |g, vars| {
        let p = Bound::from_vars(vars.to_vec());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        Ok(composite_loss(g, &p, ctx, batch, mixed, Some(frozen), &mut rng)?.total)
    }
}
