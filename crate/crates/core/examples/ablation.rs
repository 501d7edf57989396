//! Runs one ablation suite over a few seeds and writes the median table as
//! CSV to stdout. The default is the adaptation suite at a shortened
//! schedule; pass `full` as the third argument for the benchmark schedule.
//!
//! cargo run --release --example ablation -- [suite] [seeds] [full]

use pcqa_adapt::eval::ablation::benchmark_config;
use pcqa_adapt::eval::{run_ablation, Suite, SyntheticDomainSpec};

fn main() -> pcqa_adapt::Result<()> {
    let mut args = std::env::args().skip(1);
    let suite: Suite = args.next().as_deref().unwrap_or("adaptation").parse()?;
    let n: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(2);
    let full = args.next().as_deref() == Some("full");

    let mut base = benchmark_config();
    let mut spec = SyntheticDomainSpec::benchmark();
    if !full {
        base.total_iters = 240;
        base.warmup_iters = 40;
        spec.n_source = 500;
        spec.n_target = 400;
    }
    let seeds: Vec<u64> = (0..n).collect();
    let table = run_ablation(&suite.variants(), &base, &spec, &seeds, |v, s, m| {
        eprintln!("{v:<20} seed {s}: srocc {:.4}", m.srocc);
    })?;
    table.write_csv(std::io::stdout())
}
