//! Ablation harness: train each variant on the synthetic domains over
//! several seeds and report median target metrics.

use std::collections::HashMap;
use std::io::Write;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::metrics::MetricReport;
use super::synthetic::{make_synthetic_domains, SyntheticDomainSpec};
use crate::align::AlignmentKind;
use crate::error::{Error, Result};
use crate::mixup::PartnerSelection;
use crate::train::{train_run, TrainConfig};

/// Share of the target domain held out for evaluation.
pub const HELD_OUT_FRACTION: f64 = 0.25;

/// Training setup for the synthetic benchmark: the desk schedule shortened
/// to fit the five-seed suites on one CPU core, a narrower backbone, and
/// loss weights and reversal strength that keep the adversarial game stable
/// at this learning rate.
pub fn benchmark_config() -> TrainConfig {
    TrainConfig {
        total_iters: 800,
        warmup_iters: 133,
        lr: 5e-2,
        grad_clip: 1.0,
        lambda_d: 0.3,
        lambda_r: 3e-5,
        grl_scale: 0.3,
        grl_ramp: true,
        widths: [8, 16, 16, 32],
        head_hidden: 32,
        ..TrainConfig::desk()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Variant {
    /// Source-only regression: no domain loss, no alignment, no mixing.
    NoAdapt,
    /// Adversarial alignment only.
    DannOnly,
    NoSm,
    PlainSm,
    Qsm,
    Stage1Only,
    Stage4Only,
    Stage23Only,
    Multilayer,
    Mmd,
    Cod,
    Rca,
    SingleDomainAug,
    DualDomainAug,
    Alpha(f64),
}

impl Variant {
    pub fn name(&self) -> String {
        match self {
            Variant::NoAdapt => "no_adapt".into(),
            Variant::DannOnly => "dann_only".into(),
            Variant::NoSm => "no_sm".into(),
            Variant::PlainSm => "plain_sm".into(),
            Variant::Qsm => "qsm".into(),
            Variant::Stage1Only => "stage1_only".into(),
            Variant::Stage4Only => "stage4_only".into(),
            Variant::Stage23Only => "stage23_only".into(),
            Variant::Multilayer => "multilayer".into(),
            Variant::Mmd => "mmd".into(),
            Variant::Cod => "cod".into(),
            Variant::Rca => "rca".into(),
            Variant::SingleDomainAug => "single_domain_aug".into(),
            Variant::DualDomainAug => "dual_domain_aug".into(),
            Variant::Alpha(a) => format!("alpha_{a}"),
        }
    }

    /// The base config with this variant's switches applied. `Qsm`,
    /// `Multilayer`, `Rca` and `DualDomainAug` are the full method.
    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        match *self {
            Variant::NoAdapt => {
                c.lambda_d = 0.0;
                c.lambda_r = 0.0;
                c.mix_probability = 0.0;
            }
            Variant::DannOnly => {
                c.lambda_r = 0.0;
                c.mix_probability = 0.0;
            }
            Variant::NoSm => c.mix_probability = 0.0,
            Variant::PlainSm => c.partner_selection = PartnerSelection::Uniform,
            Variant::Stage1Only => c.mix_stages = "1".into(),
            Variant::Stage4Only => c.mix_stages = "4".into(),
            Variant::Stage23Only => c.mix_stages = "2,3".into(),
            Variant::Mmd => c.alignment = AlignmentKind::Mmd,
            Variant::Cod => c.alignment = AlignmentKind::Cod,
            Variant::SingleDomainAug => c.target_mix = false,
            Variant::Alpha(a) => c.alpha = a,
            Variant::Qsm | Variant::Multilayer | Variant::Rca | Variant::DualDomainAug => {}
        }
        c
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "no_adapt" => Variant::NoAdapt,
            "dann_only" => Variant::DannOnly,
            "no_sm" => Variant::NoSm,
            "plain_sm" => Variant::PlainSm,
            "qsm" => Variant::Qsm,
            "stage1_only" => Variant::Stage1Only,
            "stage4_only" => Variant::Stage4Only,
            "stage23_only" => Variant::Stage23Only,
            "multilayer" => Variant::Multilayer,
            "mmd" => Variant::Mmd,
            "cod" => Variant::Cod,
            "rca" => Variant::Rca,
            "single_domain_aug" => Variant::SingleDomainAug,
            "dual_domain_aug" => Variant::DualDomainAug,
            _ => match s.strip_prefix("alpha_").map(str::parse::<f64>) {
                Some(Ok(a)) if a > 0.0 => Variant::Alpha(a),
                _ => return Err(Error::Config(format!("unknown variant {s:?}"))),
            },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    /// no_sm, plain_sm, qsm.
    Sm,
    /// stage1_only, stage4_only, stage23_only, multilayer.
    Stage,
    /// mmd, cod, rca.
    Align,
    /// single_domain_aug, dual_domain_aug.
    Da,
    /// α ∈ {0.1, 0.2, 0.5, 1}.
    Alpha,
    /// no_adapt, dann_only, full method.
    Adaptation,
}

impl Suite {
    pub fn variants(&self) -> Vec<Variant> {
        use Variant::*;
        match self {
            Suite::Sm => vec![NoSm, PlainSm, Qsm],
            Suite::Stage => vec![Stage1Only, Stage4Only, Stage23Only, Multilayer],
            Suite::Align => vec![Mmd, Cod, Rca],
            Suite::Da => vec![SingleDomainAug, DualDomainAug],
            Suite::Alpha => [0.1, 0.2, 0.5, 1.0].into_iter().map(Alpha).collect(),
            Suite::Adaptation => vec![NoAdapt, DannOnly, Qsm],
        }
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "sm" => Suite::Sm,
            "stage" => Suite::Stage,
            "align" => Suite::Align,
            "da" => Suite::Da,
            "alpha" => Suite::Alpha,
            "adaptation" => Suite::Adaptation,
            _ => return Err(Error::Config(format!("unknown suite {s:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: String,
    pub per_seed: Vec<(u64, MetricReport)>,
    pub median: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, variant: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    /// `variant, seeds, plcc, srocc, krocc, rmse` with median values.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::Config(format!("csv: {e}"));
        w.write_record(["variant", "seeds", "plcc", "srocc", "krocc", "rmse"])
            .map_err(err)?;
        for r in &self.rows {
            let m = r.median;
            w.write_record([
                r.variant.clone(),
                r.per_seed.len().to_string(),
                m.plcc.to_string(),
                m.srocc.to_string(),
                m.krocc.to_string(),
                m.rmse.to_string(),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| Error::Config(format!("csv: {e}")))
    }
}

/// Median with NaN treated as the lowest value.
pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values
        .iter()
        .map(|&x| if x.is_nan() { f64::NEG_INFINITY } else { x })
        .collect();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    let m = if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    };
    if m.is_finite() {
        m
    } else {
        f64::NAN
    }
}

fn median_report(reports: &[MetricReport]) -> MetricReport {
    let col = |f: fn(&MetricReport) -> f64| median(&reports.iter().map(f).collect::<Vec<_>>());
    MetricReport {
        plcc: col(|m| m.plcc),
        srocc: col(|m| m.srocc),
        krocc: col(|m| m.krocc),
        rmse: col(|m| m.rmse),
    }
}

/// Trains one configuration on domains generated from `seed` and returns
/// held-out target metrics. Data, split and training all derive from `seed`.
pub fn run_single(spec: &SyntheticDomainSpec, cfg: &TrainConfig, seed: u64) -> Result<MetricReport> {
    let mut data_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_da7a);
    let domains = make_synthetic_domains(spec, &mut data_rng)?;
    let (target_train, target_eval) = domains.split_target(HELD_OUT_FRACTION, &mut data_rng);
    let cfg = TrainConfig {
        seed,
        ..cfg.clone()
    };
    let out = train_run(&cfg, &domains.source, &target_train, Some(&target_eval))?;
    out.final_metrics
        .ok_or_else(|| Error::Config("held-out target has no labels".into()))
}

/// Runs every variant on every seed. Variants that resolve to the same
/// config share their runs.
pub fn run_ablation(
    variants: &[Variant],
    base: &TrainConfig,
    spec: &SyntheticDomainSpec,
    seeds: &[u64],
    mut progress: impl FnMut(&str, u64, &MetricReport),
) -> Result<AblationTable> {
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed required".into()));
    }
    let mut cache: HashMap<(String, u64), MetricReport> = HashMap::new();
    let mut rows = Vec::with_capacity(variants.len());
    for v in variants {
        let cfg = v.apply(base);
        cfg.validate()?;
        let key = cfg.to_toml();
        let mut per_seed = Vec::with_capacity(seeds.len());
        for &s in seeds {
            let report = match cache.get(&(key.clone(), s)) {
                Some(r) => *r,
                None => {
                    let r = run_single(spec, &cfg, s)?;
                    cache.insert((key.clone(), s), r);
                    r
                }
            };
            progress(&v.name(), s, &report);
            per_seed.push((s, report));
        }
        let median = median_report(&per_seed.iter().map(|(_, r)| *r).collect::<Vec<_>>());
        rows.push(AblationRow {
            variant: v.name(),
            per_seed,
            median,
        });
    }
    Ok(AblationTable { rows })
}
