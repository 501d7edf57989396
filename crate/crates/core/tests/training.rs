//! Training-loop contracts: phase isolation, the mixing coin, pseudo-label
//! freshness and the composite loss identities.

use pcqa_adapt::align::dann_loss;
use pcqa_adapt::eval::ablation::benchmark_config;
use pcqa_adapt::eval::{make_synthetic_domains, DomainShift, SyntheticDomainSpec, SyntheticDomains, Variant};
use pcqa_adapt::mixup::Stratifier;
use pcqa_adapt::nnx::{Graph, Model, Tensor};
use pcqa_adapt::train::{
    composite_loss, make_pseudo_labels, LossContext, LossTerms, Phase, StepBatch, TrainConfig, Trainer,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn domains(n_source: usize, n_target: usize, seed: u64) -> SyntheticDomains {
    let spec = SyntheticDomainSpec {
        n_source,
        n_target,
        ..SyntheticDomainSpec::benchmark()
    };
    make_synthetic_domains(&spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn tiny(total: usize, warmup: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 8,
        total_iters: total,
        warmup_iters: warmup,
        log_every: 5,
        widths: [2, 4, 4, 4],
        head_hidden: 4,
        seed: 5,
        ..benchmark_config()
    }
}

fn bits(ts: &[Tensor]) -> Vec<u64> {
    ts.iter().flat_map(|t| t.data().iter().map(|v| v.to_bits())).collect()
}

#[test]
fn mixing_coin_lands_near_the_probability() {
    let d = domains(40, 40, 1);
    let cfg = TrainConfig {
        batch_size: 4,
        total_iters: 3100,
        warmup_iters: 100,
        log_every: 1000,
        lambda_r: 0.0,
        widths: [2, 2, 2, 2],
        head_hidden: 2,
        ..benchmark_config()
    };
    let out = Trainer::new(&cfg, &d.source, &d.target, None).unwrap().finish().unwrap();
    assert_eq!(out.state.joint_iters, 3000);
    let rate = out.state.mixed_iters as f64 / out.state.joint_iters as f64;
    assert!((rate - 0.5).abs() <= 0.02, "mixed fraction {rate}");
    // every mixed iteration logs events, and only those
    let mut mixed_iters: Vec<usize> = out.log.mix_events.iter().map(|(it, _)| *it).collect();
    mixed_iters.dedup();
    assert_eq!(mixed_iters.len(), out.state.mixed_iters);
    assert!(mixed_iters.iter().all(|&it| it >= cfg.warmup_iters));
}

#[test]
fn warm_up_ignores_alignment_settings() {
    let d = domains(48, 40, 2);
    let a = tiny(40, 20);
    let b = TrainConfig {
        tau: 0.3,
        epsilon: 0.5,
        label_bandwidth: 0.7,
        feature_bandwidth: Some(2.0),
        alpha: 0.2,
        ..a.clone()
    };
    let mut ta = Trainer::new(&a, &d.source, &d.target, None).unwrap();
    let mut tb = Trainer::new(&b, &d.source, &d.target, None).unwrap();
    ta.run_until(20).unwrap();
    tb.run_until(20).unwrap();
    assert_eq!(bits(ta.state().model.params.tensors()), bits(tb.state().model.params.tensors()));
    assert!(ta.log.mix_events.is_empty());
    assert!(ta.log.diagnostics.iter().all(|r| r.l_r.is_none()));
    assert!(ta.log.metrics.iter().all(|r| r.phase == Phase::WarmUp && r.l_r.is_none()));

    ta.run_until(40).unwrap();
    tb.run_until(40).unwrap();
    assert_ne!(bits(ta.state().model.params.tensors()), bits(tb.state().model.params.tensors()));
    assert!(ta.log.diagnostics.iter().filter(|r| r.iter > 20).all(|r| r.l_r.is_some()));
}

#[test]
fn no_mixing_and_no_alignment_is_the_adversarial_baseline() {
    let d = domains(48, 40, 3);
    let base = tiny(30, 10);
    let collapsed = TrainConfig {
        mix_probability: 0.0,
        lambda_r: 0.0,
        tau: 0.4,
        alpha: 0.1,
        ..base.clone()
    };
    let dann = Variant::DannOnly.apply(&base);
    let x = Trainer::new(&collapsed, &d.source, &d.target, None).unwrap().finish().unwrap();
    let y = Trainer::new(&dann, &d.source, &d.target, None).unwrap().finish().unwrap();
    assert_eq!(x.log, y.log);
    assert_eq!(bits(x.state.model.params.tensors()), bits(y.state.model.params.tensors()));
    assert_eq!(x.state.mixed_iters, 0);
}

struct Fixture {
    model: Model,
    batch: StepBatch,
    stratifier: Stratifier,
}

fn fixture(seed: u64) -> Fixture {
    let d = domains(16, 16, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = tiny(10, 2);
    let model = Model::new(cfg.backbone(3), &mut rng).unwrap();
    let idx: Vec<usize> = (0..8).collect();
    let labels = vec![0.05, 0.2, 0.3, 0.45, 0.5, 0.7, 0.8, 0.95];
    let batch = StepBatch {
        source: d.source.batch(&idx, pcqa_adapt::pcproj::CropMode::Test, &mut rng).unwrap(),
        labels: labels.clone(),
        target: d.target.batch(&idx, pcqa_adapt::pcproj::CropMode::Test, &mut rng).unwrap(),
    };
    Fixture {
        model,
        batch,
        stratifier: Stratifier::fit(&labels).unwrap(),
    }
}

fn terms(fx: &Fixture, model: &Model, cfg: &TrainConfig, phase: Phase, mixed: bool) -> (LossTerms, f64) {
    let mix = cfg.mix_config().unwrap();
    let ctx = LossContext {
        model,
        stratifier: &fx.stratifier,
        cfg,
        mix: &mix,
        phase,
        grl_scale: 1.0,
    };
    let mut g = Graph::new();
    let p = model.params.bind(&mut g);
    let t = composite_loss(&mut g, &p, &ctx, &fx.batch, mixed, None, &mut ChaCha8Rng::seed_from_u64(77)).unwrap();
    let total = g.value(t.total).item();
    (t, total)
}

#[test]
fn pseudo_labels_come_from_the_current_model() {
    let fx = fixture(4);
    let cfg = TrainConfig {
        lambda_r: 1e-3,
        ..tiny(10, 2)
    };
    let mut model = fx.model.clone();
    let mut seen = Vec::new();
    for round in 0..3 {
        let (t, _) = terms(&fx, &model, &cfg, Phase::Joint, round % 2 == 1);
        let inputs = t.align_inputs.expect("joint phase evaluates alignment");
        let fresh = make_pseudo_labels(&model, &model.features(&fx.batch.target).unwrap()).unwrap();
        assert_eq!(inputs.pseudo, fresh);
        let fresh_s = make_pseudo_labels(&model, &model.features(&fx.batch.source).unwrap()).unwrap();
        assert_eq!(inputs.pred_s, fresh_s);
        seen.push(inputs.pseudo);
        // perturb the predictor so a cached value would be caught
        for (name, t) in model.params.names().to_vec().iter().zip(model.params.tensors_mut()) {
            if name.starts_with("predictor.") {
                t.data_mut().iter_mut().for_each(|v| *v += 0.05);
            }
        }
    }
    assert_ne!(seen[0], seen[1]);
    assert_ne!(seen[1], seen[2]);

    let (warm, _) = terms(&fx, &fx.model, &cfg, Phase::WarmUp, false);
    assert!(warm.align_inputs.is_none() && warm.l_r.is_none());
}

#[test]
fn mixed_and_original_branches_share_the_alignment_term() {
    let fx = fixture(5);
    let cfg = TrainConfig {
        lambda_r: 1e-2,
        ..tiny(10, 2)
    };
    let (plain, _) = terms(&fx, &fx.model, &cfg, Phase::Joint, false);
    let (mixed, _) = terms(&fx, &fx.model, &cfg, Phase::Joint, true);
    let (a, b) = (plain.l_r.unwrap(), mixed.l_r.unwrap());
    assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b}");
    assert!(!mixed.source_events.is_empty());
    assert!(plain.l_p != mixed.l_p || plain.l_d != mixed.l_d);
}

#[test]
fn regression_only_loss_is_the_mse() {
    let fx = fixture(6);
    let cfg = TrainConfig {
        lambda_d: 0.0,
        lambda_r: 0.0,
        ..tiny(10, 2)
    };
    let (t, total) = terms(&fx, &fx.model, &cfg, Phase::Joint, false);
    let pred = fx.model.predict_images(&fx.batch.source, 64).unwrap();
    let mse = pred.iter().zip(&fx.batch.labels).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / pred.len() as f64;
    assert!((total - mse).abs() < 1e-14, "{total} vs {mse}");
    assert_eq!(t.l_p, total);
}

#[test]
fn loss_weights_scale_their_terms_linearly() {
    let fx = fixture(7);
    let base = TrainConfig {
        lambda_r: 1e-2,
        ..tiny(10, 2)
    };
    let (t1, total1) = terms(&fx, &fx.model, &base, Phase::Joint, true);
    for c in [0.0, 2.5, 7.0] {
        let scaled = TrainConfig {
            lambda_p: base.lambda_p * c,
            ..base.clone()
        };
        let (tc, totalc) = terms(&fx, &fx.model, &scaled, Phase::Joint, true);
        assert_eq!(tc.l_p, t1.l_p);
        let want = total1 + (c - 1.0) * base.lambda_p * t1.l_p;
        assert!((totalc - want).abs() < 1e-12 * want.abs().max(1.0), "c {c}: {totalc} vs {want}");
    }
}

#[test]
fn logit_domain_loss_agrees_with_probability_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let n = rng.random_range(1..20);
        let m = rng.random_range(1..20);
        let zs: Vec<f64> = (0..n).map(|_| rng.random_range(-8.0..8.0)).collect();
        let zt: Vec<f64> = (0..m).map(|_| rng.random_range(-8.0..8.0)).collect();
        let mut g = Graph::new();
        let s = g.constant(Tensor::new(&[n, 1], zs.clone()).unwrap());
        let t = g.constant(Tensor::new(&[m, 1], zt.clone()).unwrap());
        let l = g.domain_loss_logits(s, t).unwrap();
        let logit_form = g.value(l).item();
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let prob_form = dann_loss(&zs.iter().map(|&z| sig(z)).collect::<Vec<_>>(), &zt.iter().map(|&z| sig(z)).collect::<Vec<_>>()).unwrap();
        assert!((logit_form - prob_form).abs() < 1e-12 * prob_form.max(1.0), "{logit_form} vs {prob_form}");
    }
}

#[test]
fn identical_domains_train_to_high_rank_correlation() {
    let spec = SyntheticDomainSpec {
        n_source: 400,
        n_target: 200,
        shift: DomainShift::identity(3),
        ..SyntheticDomainSpec::benchmark()
    };
    let d = make_synthetic_domains(&spec, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let (tt, te) = d.split_target(0.25, &mut ChaCha8Rng::seed_from_u64(10));
    let cfg = TrainConfig {
        total_iters: 500,
        warmup_iters: 83,
        log_every: 100,
        seed: 11,
        ..benchmark_config()
    };
    let out = Trainer::new(&cfg, &d.source, &tt, Some(&te)).unwrap().finish().unwrap();
    let srocc = out.final_metrics.unwrap().srocc;
    assert!(srocc > 0.9, "target SROCC {srocc}");
}
