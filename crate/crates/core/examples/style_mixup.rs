//! Quality-guided partner selection, stratum routing and style mixing on a
//! toy batch of feature maps.

use pcqa_adapt::mixup::{channel_stats, mix_styles, partner_weights, sample_lambda, select_partner, Stratifier, DEFAULT_TAU};
use pcqa_adapt::nnx::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> pcqa_adapt::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let labels = [0.10, 0.12, 0.35, 0.50, 0.52, 0.55, 0.80, 0.90, 0.91];

    let w = partner_weights(4, &labels, DEFAULT_TAU)?;
    println!("partner probabilities for anchor y=0.52:");
    for (y, p) in labels.iter().zip(&w) {
        println!("  y={y:.2}  p={p:.4}");
    }
    let mut hits = [0usize; 9];
    for _ in 0..10_000 {
        hits[select_partner(4, &labels, DEFAULT_TAU, &mut rng)?] += 1;
    }
    println!("empirical over 10000 draws: {hits:?}");

    let strat = Stratifier::fit(&labels)?;
    println!("\nstrata (q33 {:.3}, q67 {:.3}):", strat.q33, strat.q67);
    let routing = pcqa_adapt::mixup::StageRouting::Multilayer;
    for &y in &labels {
        let s = strat.stratify(y);
        println!("  y={y:.2}  {s:?}  -> stage {}", routing.route(s, &mut rng));
    }

    let (c, h) = (4, 6);
    let map = |rng: &mut ChaCha8Rng, shift: f64, scale: f64| {
        Tensor::new(&[c, h, h], (0..c * h * h).map(|_| shift + scale * rng.random_range(-1.0..1.0)).collect())
    };
    let anchor = map(&mut rng, 0.0, 1.0)?;
    let partner = map(&mut rng, 2.0, 0.25)?;
    let lambda = sample_lambda(1.0, &mut rng)?;
    let (mixed, y_mix) = mix_styles(&anchor, &channel_stats(&partner)?, lambda, 0.52, 0.55)?;
    let (a, p, m) = (channel_stats(&anchor)?, channel_stats(&partner)?, channel_stats(&mixed)?);
    println!("\nlambda {lambda:.3}, mixed label {y_mix:.4}");
    for ch in 0..c {
        println!(
            "  ch{ch}: mean {:+.3} / {:+.3} -> {:+.3}   std {:.3} / {:.3} -> {:.3}",
            a.mean[ch], p.mean[ch], m.mean[ch], a.std[ch], p.std[ch], m.std[ch]
        );
    }
    Ok(())
}
