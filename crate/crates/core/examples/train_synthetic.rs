//! Trains the full method on a reduced synthetic benchmark and prints the
//! metric log, then compares with source-only training on the same data.
//!
//! cargo run --release --example train_synthetic -- [iterations] [seed]

use pcqa_adapt::eval::ablation::{benchmark_config, HELD_OUT_FRACTION};
use pcqa_adapt::eval::{make_synthetic_domains, SyntheticDomainSpec, Variant};
use pcqa_adapt::train::train_run;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> pcqa_adapt::Result<()> {
    let mut args = std::env::args().skip(1);
    let iters: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(400);
    let seed: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(0);

    let spec = SyntheticDomainSpec {
        n_source: 600,
        n_target: 400,
        ..SyntheticDomainSpec::benchmark()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let domains = make_synthetic_domains(&spec, &mut rng)?;
    let (target_train, target_eval) = domains.split_target(HELD_OUT_FRACTION, &mut rng);

    let base = pcqa_adapt::train::TrainConfig {
        total_iters: iters,
        warmup_iters: iters / 6,
        log_every: (iters / 8).max(1),
        seed,
        ..benchmark_config()
    };
    for v in [Variant::Qsm, Variant::NoAdapt] {
        let cfg = v.apply(&base);
        let out = train_run(&cfg, &domains.source, &target_train, Some(&target_eval))?;
        println!("== {}", v.name());
        print!("{}", out.log.metrics_csv());
    }
    Ok(())
}
