//! Correlation metrics on noisy predictions of a known score vector.

use pcqa_adapt::eval::{evaluate, krocc, srocc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> pcqa_adapt::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let y: Vec<f64> = (0..200).map(|i| 1.0 + 4.0 * i as f64 / 199.0).collect();
    println!("noise     plcc    srocc   krocc   rmse");
    for sd in [0.0f64, 0.25, 0.5, 1.0, 2.0] {
        let noise = Normal::new(0.0, sd).expect("sd >= 0");
        let pred: Vec<f64> = y.iter().map(|v| v + noise.sample(&mut rng)).collect();
        let m = evaluate(&pred, &y)?;
        println!("{sd:<6}  {:.4}  {:.4}  {:.4}  {:.4}", m.plcc, m.srocc, m.krocc, m.rmse);
    }

    // a monotone distortion leaves the rank metrics untouched
    let squashed: Vec<f64> = y.iter().map(|v| v.powi(3).ln()).collect();
    println!("\nmonotone transform: srocc {} krocc {}", srocc(&squashed, &y)?, krocc(&squashed, &y)?);

    let tied = [1.0, 1.0, 2.0, 2.0, 3.0];
    println!("with ties: srocc {:.4} krocc {:.4}", srocc(&tied, &[1.0, 2.0, 3.0, 4.0, 5.0])?, krocc(&tied, &[1.0, 2.0, 3.0, 4.0, 5.0])?);

    match srocc(&[2.0; 5], &[1.0, 2.0, 3.0, 4.0, 5.0]) {
        Err(e) => println!("constant predictions: {e}"),
        Ok(v) => println!("constant predictions: {v}"),
    }
    Ok(())
}
