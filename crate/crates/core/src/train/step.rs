use rand::Rng;

use super::config::TrainConfig;
use crate::align::{alignment_loss, median_pairwise_distance, AlignDiagnostics, GaussianKernelConfig, RcaBatch};
use crate::error::{Error, Result};
use crate::mixup::{apply_source_qsm, apply_target_sm, MixConfig, MixEvent, Stratifier};
use crate::nnx::{Bound, Graph, IdentityTap, Model, Tensor, Var, NUM_STAGES};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    WarmUp,
    Joint,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::WarmUp => "warmup",
            Phase::Joint => "joint",
        }
    }
}

/// Half-open warm-up interval `[0, warmup_iters)`.
pub fn phase(iter: usize, cfg: &TrainConfig) -> Phase {
    if iter < cfg.warmup_iters {
        Phase::WarmUp
    } else {
        Phase::Joint
    }
}

/// One training batch; `labels` are normalized source labels.
#[derive(Debug, Clone)]
pub struct StepBatch {
    pub source: Tensor,
    pub labels: Vec<f64>,
    pub target: Tensor,
}

/// Constants the conditional alignment treats as fixed: clean source
/// predictions, target pseudo-labels and the feature-kernel bandwidth.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignInputs {
    pub pred_s: Vec<f64>,
    pub pseudo: Vec<f64>,
    pub feature_bandwidth: f64,
}

/// Everything besides the batch that the composite loss reads.
#[derive(Debug, Clone, Copy)]
pub struct LossContext<'a> {
    pub model: &'a Model,
    pub stratifier: &'a Stratifier,
    pub cfg: &'a TrainConfig,
    pub mix: &'a MixConfig,
    pub phase: Phase,
    pub grl_scale: f64,
}

#[derive(Debug, Clone)]
pub struct LossTerms {
    pub total: Var,
    pub l_p: f64,
    pub l_d: f64,
    /// `None` when the alignment term was not evaluated.
    pub l_r: Option<f64>,
    pub diagnostics: Option<AlignDiagnostics>,
    pub align_inputs: Option<AlignInputs>,
    pub source_events: Vec<MixEvent>,
    pub target_events: Vec<MixEvent>,
}

fn column(labels: &[f64]) -> Tensor {
    Tensor::new(&[labels.len(), 1], labels.to_vec()).expect("column shape")
}

/// Builds `λ1·L_P + λ2·L_D + λ3·L_R` on `g`.
///
/// With `mixed`, the regression and domain terms use style-mixed source
/// features (quality-guided partner, stage routed by stratum) and, when
/// enabled, uniformly mixed last-stage target features. The alignment term
/// always sees the clean pooled features and only runs in the joint phase
/// with `λ3 > 0`. `frozen` overrides the alignment constants, which are
/// otherwise read off the current forward pass.
pub fn composite_loss(
    g: &mut Graph,
    p: &Bound,
    ctx: &LossContext,
    batch: &StepBatch,
    mixed: bool,
    frozen: Option<&AlignInputs>,
    rng: &mut impl Rng,
) -> Result<LossTerms> {
    let (model, cfg) = (ctx.model, ctx.cfg);
    let xs = g.constant(batch.source.clone());
    let xt = g.constant(batch.target.clone());
    let clean_s = model.backbone.forward_stages(g, p, xs, &mut IdentityTap)?;
    let clean_t = model.backbone.forward_stages(g, p, xt, &mut IdentityTap)?;

    let mut source_events = Vec::new();
    let mut target_events = Vec::new();
    let (f_s, f_t, targets) = if mixed {
        let mix = apply_source_qsm(
            g,
            model,
            p,
            xs,
            &clean_s,
            &batch.labels,
            ctx.stratifier,
            ctx.mix,
            rng,
        )?;
        source_events = mix.events;
        let f_t = if cfg.target_mix {
            let (last, events) = apply_target_sm(g, clean_t.stages[NUM_STAGES - 1], ctx.mix, rng)?;
            target_events = events;
            g.global_avg_pool(last)?
        } else {
            clean_t.pooled
        };
        (mix.outputs.pooled, f_t, mix.mixed_labels)
    } else {
        (clean_s.pooled, clean_t.pooled, batch.labels.clone())
    };

    let pred = model.predictor.predict(g, p, f_s)?;
    let l_p = g.mse(pred, &column(&targets))?;
    let mut total = g.mul_scalar(l_p, cfg.lambda_p);

    let rs = g.reverse_gradient(f_s, ctx.grl_scale)?;
    let rt = g.reverse_gradient(f_t, ctx.grl_scale)?;
    let z_s = model.discriminator.logits(g, p, rs)?;
    let z_t = model.discriminator.logits(g, p, rt)?;
    let l_d = g.domain_loss_logits(z_s, z_t)?;
    if cfg.lambda_d > 0.0 {
        let t = g.mul_scalar(l_d, cfg.lambda_d);
        total = g.add(total, t)?;
    }

    let mut l_r = None;
    let mut diagnostics = None;
    let mut align_inputs = None;
    if ctx.phase == Phase::Joint && cfg.lambda_r > 0.0 {
        let inputs = match frozen {
            Some(f) => f.clone(),
            None => fresh_align_inputs(g, p, ctx, &clean_s.pooled, &clean_t.pooled)?,
        };
        let rb = RcaBatch {
            f_s: g.value(clean_s.pooled).clone(),
            f_t: g.value(clean_t.pooled).clone(),
            y_s: batch.labels.clone(),
            y_t: inputs.pseudo.clone(),
            pred_s: inputs.pred_s.clone(),
            pred_t: inputs.pseudo.clone(),
            epsilon: cfg.epsilon,
        };
        let kcfg = GaussianKernelConfig {
            feature_bandwidth: Some(inputs.feature_bandwidth),
            label_bandwidth: cfg.label_bandwidth,
        };
        let (lr, diag) = alignment_loss(
            g,
            clean_s.pooled,
            clean_t.pooled,
            &rb,
            cfg.alignment,
            cfg.rank_weight_scope,
            &kcfg,
        )?;
        let t = g.mul_scalar(lr, cfg.lambda_r);
        total = g.add(total, t)?;
        l_r = Some(diag.loss);
        diagnostics = Some(diag);
        align_inputs = Some(inputs);
    }

    let l_p = g.value(l_p).item();
    let l_d = g.value(l_d).item();
    if !g.value(total).all_finite() {
        return Err(Error::NonFinite(format!(
            "composite loss (L_P {l_p}, L_D {l_d}, L_R {l_r:?})"
        )));
    }
    Ok(LossTerms {
        total,
        l_p,
        l_d,
        l_r,
        diagnostics,
        align_inputs,
        source_events,
        target_events,
    })
}

/// Pseudo-labels are the current predictions on the clean target features,
/// read as plain values so no gradient flows through them.
fn fresh_align_inputs(
    g: &mut Graph,
    p: &Bound,
    ctx: &LossContext,
    f_s: &Var,
    f_t: &Var,
) -> Result<AlignInputs> {
    let ps = ctx.model.predictor.predict(g, p, *f_s)?;
    let pt = ctx.model.predictor.predict(g, p, *f_t)?;
    let feature_bandwidth = ctx
        .cfg
        .feature_bandwidth
        .unwrap_or_else(|| median_pairwise_distance(&[g.value(*f_s), g.value(*f_t)]));
    Ok(AlignInputs {
        pred_s: g.value(ps).data().to_vec(),
        pseudo: g.value(pt).data().to_vec(),
        feature_bandwidth,
    })
}

/// Predictions on target feature rows, used as stand-in labels.
pub fn make_pseudo_labels(model: &Model, target_features: &Tensor) -> Result<Vec<f64>> {
    model.predict_features(target_features)
}

/// Rescales all gradients together so their joint L2 norm is at most
/// `max_norm`. `max_norm = 0` and non-finite norms leave them untouched.
pub fn clip_global_norm(mut grads: Vec<Tensor>, max_norm: f64) -> Vec<Tensor> {
    if max_norm <= 0.0 {
        return grads;
    }
    let norm = grads
        .iter()
        .flat_map(|t| t.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm.is_finite() && norm > max_norm {
        let k = max_norm / norm;
        for t in &mut grads {
            t.data_mut().iter_mut().for_each(|v| *v *= k);
        }
    }
    grads
}

/// SGD with heavy-ball momentum and weight decay added to the gradient:
/// `v ← μ·v + g + wd·w`, `w ← w − lr·v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Sgd {
    pub fn from_config(cfg: &TrainConfig) -> Self {
        Sgd {
            lr: cfg.lr,
            momentum: cfg.momentum,
            weight_decay: cfg.weight_decay,
        }
    }

    /// Nothing is modified if any gradient is non-finite.
    pub fn step(&self, params: &mut [Tensor], grads: &[Tensor], velocity: &mut [Tensor]) -> Result<()> {
        if params.len() != grads.len() || params.len() != velocity.len() {
            return Err(Error::Dimension("sgd: parameter/gradient count".into()));
        }
        for (i, ((w, g), v)) in params.iter().zip(grads).zip(velocity.iter()).enumerate() {
            w.check_same_shape(g)?;
            w.check_same_shape(v)?;
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of parameter {i}")));
            }
        }
        for ((w, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
            for ((wi, &gi), vi) in w.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *vi = self.momentum * *vi + gi + self.weight_decay * *wi;
                *wi -= self.lr * *vi;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: f64) -> Vec<Tensor> {
        vec![Tensor::scalar(v)]
    }

    #[test]
    fn phase_boundary() {
        let cfg = TrainConfig {
            warmup_iters: 500,
            total_iters: 3000,
            ..Default::default()
        };
        assert_eq!(phase(0, &cfg), Phase::WarmUp);
        assert_eq!(phase(499, &cfg), Phase::WarmUp);
        assert_eq!(phase(500, &cfg), Phase::Joint);
    }

    #[test]
    fn sgd_single_step() {
        let opt = Sgd { lr: 0.1, momentum: 0.0, weight_decay: 0.0 };
        let mut w = s(1.0);
        let mut v = s(0.0);
        opt.step(&mut w, &s(1.0), &mut v).unwrap();
        assert_eq!(w[0].item(), 0.9);
    }

    #[test]
    fn sgd_two_momentum_steps() {
        let opt = Sgd { lr: 0.1, momentum: 0.9, weight_decay: 0.0 };
        let mut w = s(1.0);
        let mut v = s(0.0);
        opt.step(&mut w, &s(1.0), &mut v).unwrap();
        opt.step(&mut w, &s(1.0), &mut v).unwrap();
        let expected = 1.0 - 0.1 * 1.0 - 0.1 * 1.9;
        assert!((w[0].item() - expected).abs() < 1e-15);
    }

    #[test]
    fn sgd_zero_gradient_no_decay_is_noop() {
        let opt = Sgd { lr: 0.5, momentum: 0.9, weight_decay: 0.0 };
        let mut w = vec![Tensor::from_vec(vec![1.5, -2.0])];
        let before = w.clone();
        let mut v = vec![Tensor::zeros(&[2])];
        opt.step(&mut w, &[Tensor::zeros(&[2])], &mut v).unwrap();
        assert_eq!(w, before);
    }

    #[test]
    fn clipping_scales_to_the_ceiling() {
        let g = vec![Tensor::from_vec(vec![3.0]), Tensor::from_vec(vec![4.0])];
        let c = clip_global_norm(g.clone(), 1.0);
        assert!((c[0].data()[0] - 0.6).abs() < 1e-15 && (c[1].data()[0] - 0.8).abs() < 1e-15);
        assert_eq!(clip_global_norm(g.clone(), 0.0), g);
        assert_eq!(clip_global_norm(g.clone(), 10.0), g);
    }

    #[test]
    fn sgd_rejects_non_finite() {
        let opt = Sgd { lr: 0.1, momentum: 0.9, weight_decay: 0.0 };
        let mut w = s(1.0);
        let mut v = s(0.0);
        assert!(matches!(
            opt.step(&mut w, &s(f64::NAN), &mut v),
            Err(Error::NonFinite(_))
        ));
        assert_eq!(w[0].item(), 1.0);
    }
}
