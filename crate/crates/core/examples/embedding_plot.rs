//! Pooled features of both domains before and after adaptation, projected
//! on their two leading principal axes and written as SVG scatter plots.
//!
//! cargo run --release --example embedding_plot -- [out_dir]

use std::path::PathBuf;

use pcqa_adapt::commands::write_embedding_plot;
use pcqa_adapt::eval::ablation::benchmark_config;
use pcqa_adapt::eval::{make_synthetic_domains, SyntheticDomainSpec};
use pcqa_adapt::train::{TrainState, Trainer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> pcqa_adapt::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/embedding".into()));
    std::fs::create_dir_all(&out).map_err(|e| pcqa_adapt::Error::io(&out, e))?;

    let spec = SyntheticDomainSpec {
        n_source: 400,
        n_target: 300,
        ..SyntheticDomainSpec::benchmark()
    };
    let d = make_synthetic_domains(&spec, &mut ChaCha8Rng::seed_from_u64(1))?;
    let cfg = pcqa_adapt::train::TrainConfig {
        total_iters: 300,
        warmup_iters: 50,
        ..benchmark_config()
    };

    let init = TrainState::init(&cfg, d.source.channels(), d.source.labels().expect("labeled"))?;
    let before = out.join("embedding_init.svg");
    write_embedding_plot(&init, &d.source, &d.target, &before)?;
    println!("{}", before.display());

    let mut trainer = Trainer::new(&cfg, &d.source, &d.target, None)?;
    trainer.run_until(cfg.total_iters)?;
    let after = out.join("embedding_trained.svg");
    write_embedding_plot(trainer.state(), &d.source, &d.target, &after)?;
    println!("{}", after.display());
    Ok(())
}
