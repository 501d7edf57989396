//! Quality-guided feature augmentation.
//!
//! Source samples are paired with partners of similar quality (Gaussian
//! kernel on labels), their per-channel feature statistics are blended with a
//! Beta-distributed weight and the anchor's standardized feature map is
//! re-styled with the blend. Which stage receives the mix depends on the
//! anchor's quality stratum. Target samples get plain uniform-partner style
//! mixing on the last stage, without labels.

use std::io::Write;

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnx::{Bound, Graph, Model, StageOutputs, Tap, Tensor, Var, NUM_STAGES};

/// Added to the anchor's standard deviation before dividing.
pub const EPS_STD: f64 = 1e-6;

/// Default Gaussian bandwidth for partner selection.
pub const DEFAULT_TAU: f64 = 5e-2;

/// Per-channel mean and population standard deviation of a feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl StyleStats {
    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

/// Statistics of a `[C,H,W]` map, dividing by `H·W`.
pub fn channel_stats(f: &Tensor) -> Result<StyleStats> {
    let s = f.shape();
    if s.len() != 3 || s[1] * s[2] == 0 {
        return Err(Error::Dimension(format!(
            "channel_stats expects [C,H,W] with H·W ≥ 1, got {:?}",
            s
        )));
    }
    let hw = s[1] * s[2];
    let mut mean = Vec::with_capacity(s[0]);
    let mut std = Vec::with_capacity(s[0]);
    for ch in f.data().chunks(hw) {
        let m = ch.iter().sum::<f64>() / hw as f64;
        let var = ch.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / hw as f64;
        mean.push(m);
        std.push(var.sqrt());
    }
    Ok(StyleStats { mean, std })
}

/// Normalized selection probabilities of every batch member as partner of
/// `anchor`, proportional to `exp(-(y_i - y_j)² / (2τ²))`, with the anchor
/// itself excluded (probability 0).
pub fn partner_weights(anchor: usize, labels: &[f64], tau: f64) -> Result<Vec<f64>> {
    if labels.len() < 2 {
        return Err(Error::NoPartner(labels.len()));
    }
    if anchor >= labels.len() {
        return Err(Error::Dimension(format!(
            "anchor {anchor} outside batch of {}",
            labels.len()
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::Parameter(format!("tau must be > 0, got {tau}")));
    }
    let ya = labels[anchor];
    let logits: Vec<f64> = labels
        .iter()
        .enumerate()
        .map(|(j, &y)| {
            if j == anchor {
                f64::NEG_INFINITY
            } else {
                -(ya - y) * (ya - y) / (2.0 * tau * tau)
            }
        })
        .collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let z: f64 = w.iter().sum();
    Ok(w.into_iter().map(|v| v / z).collect())
}

/// Draws a quality-similar partner index `!= anchor`.
pub fn select_partner(anchor: usize, labels: &[f64], tau: f64, rng: &mut impl Rng) -> Result<usize> {
    let w = partner_weights(anchor, labels, tau)?;
    Ok(sample_categorical(&w, rng))
}

/// Draws a partner uniformly among the other batch members.
pub fn select_uniform_partner(anchor: usize, batch: usize, rng: &mut impl Rng) -> Result<usize> {
    if batch < 2 {
        return Err(Error::NoPartner(batch));
    }
    let j = rng.random_range(0..batch - 1);
    Ok(if j >= anchor { j + 1 } else { j })
}

fn sample_categorical(w: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in w.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// `λ ~ Beta(α, α)`.
pub fn sample_lambda(alpha: f64, rng: &mut impl Rng) -> Result<f64> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::Parameter(format!("alpha must be > 0, got {alpha}")));
    }
    let beta = Beta::new(alpha, alpha).map_err(|e| Error::Parameter(e.to_string()))?;
    Ok(beta.sample(rng))
}

/// Re-styles `f_anchor` (`[C,H,W]`) with the λ-blend of its own statistics
/// and `partner`'s; returns the mixed map and the λ-blend of the labels.
pub fn mix_styles(
    f_anchor: &Tensor,
    partner: &StyleStats,
    lambda: f64,
    y_anchor: f64,
    y_partner: f64,
) -> Result<(Tensor, f64)> {
    check_lambda(lambda)?;
    let own = channel_stats(f_anchor)?;
    if own.channels() != partner.channels() || partner.std.len() != partner.mean.len() {
        return Err(Error::Dimension(format!(
            "anchor has {} channels, partner stats {}",
            own.channels(),
            partner.channels()
        )));
    }
    let hw = f_anchor.shape()[1] * f_anchor.shape()[2];
    let mut out = f_anchor.clone();
    for (c, chunk) in out.data_mut().chunks_mut(hw).enumerate() {
        let u_mix = lambda * own.mean[c] + (1.0 - lambda) * partner.mean[c];
        let s_mix = lambda * own.std[c] + (1.0 - lambda) * partner.std[c];
        let denom = own.std[c] + EPS_STD;
        for v in chunk {
            *v = s_mix * (*v - own.mean[c]) / denom + u_mix;
        }
    }
    Ok((out, lambda * y_anchor + (1.0 - lambda) * y_partner))
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Parameter(format!("lambda {lambda} outside [0,1]")));
    }
    Ok(())
}

/// Graph version of [`mix_styles`] over a batch `f[N,C,H,W]`.
///
/// Row `i` with `mask[i]` is re-styled using the statistics of row
/// `partners[i]` of `partner_source` and weight `lambdas[i]`; other rows pass
/// through. Gradients reach `f` and `partner_source`.
pub fn style_mix_rows(
    g: &mut Graph,
    f: Var,
    partner_source: Var,
    partners: &[usize],
    lambdas: &[f64],
    mask: &[bool],
) -> Result<Var> {
    let s = g.value(f).shape().to_vec();
    if s.len() != 4 {
        return Err(Error::Dimension(format!("style mix on {:?}", s)));
    }
    let ps = g.value(partner_source).shape();
    if ps.len() != 4 || ps[1] != s[1] {
        return Err(Error::Dimension(format!(
            "partner features {:?} vs anchors {:?}",
            ps, s
        )));
    }
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    if partners.len() != n || lambdas.len() != n || mask.len() != n {
        return Err(Error::Dimension("style mix plan length".into()));
    }
    for &l in lambdas {
        check_lambda(l)?;
    }
    let lam = Tensor::new(
        &[n, c],
        lambdas.iter().flat_map(|&l| std::iter::repeat_n(l, c)).collect(),
    )?;
    let one_minus = lam.map(|l| 1.0 - l);

    let u_a = g.channel_mean(f)?;
    let s_a = g.channel_std(f)?;
    let u_src = g.channel_mean(partner_source)?;
    let s_src = g.channel_std(partner_source)?;
    let u_p = g.gather_rows(u_src, partners)?;
    let s_p = g.gather_rows(s_src, partners)?;

    let a = g.mul_const(u_a, lam.clone())?;
    let b = g.mul_const(u_p, one_minus.clone())?;
    let u_mix = g.add(a, b)?;
    let a = g.mul_const(s_a, lam)?;
    let b = g.mul_const(s_p, one_minus)?;
    let s_mix = g.add(a, b)?;

    let u_a_b = g.broadcast_hw(u_a, h, w)?;
    let s_a_b = g.broadcast_hw(s_a, h, w)?;
    let denom = g.add_scalar(s_a_b, EPS_STD);
    let centered = g.sub(f, u_a_b)?;
    let normed = g.div(centered, denom)?;
    let s_mix_b = g.broadcast_hw(s_mix, h, w)?;
    let u_mix_b = g.broadcast_hw(u_mix, h, w)?;
    let scaled = g.mul(normed, s_mix_b)?;
    let mixed = g.add(scaled, u_mix_b)?;
    g.select_rows(mixed, f, mask)
}

/// Low / medium / high quality, by the 33% and 67% label quantiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QualityStratum {
    Low,
    Medium,
    High,
}

/// Quantile thresholds fit once on the source training labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stratifier {
    pub q33: f64,
    pub q67: f64,
}

impl Stratifier {
    pub fn fit(labels: &[f64]) -> Result<Self> {
        if labels.len() < 3 {
            return Err(Error::Parameter(format!(
                "stratifier needs at least 3 labels, got {}",
                labels.len()
            )));
        }
        if labels.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("stratifier labels".into()));
        }
        let mut sorted = labels.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Stratifier {
            q33: quantile_sorted(&sorted, 0.33),
            q67: quantile_sorted(&sorted, 0.67),
        })
    }

    /// Higher score means better quality; boundaries belong to the upper bin.
    pub fn stratify(&self, y: f64) -> QualityStratum {
        if y >= self.q67 {
            QualityStratum::High
        } else if y >= self.q33 {
            QualityStratum::Medium
        } else {
            QualityStratum::Low
        }
    }
}

/// Linear-interpolation quantile at position `q·(n−1)` of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Which stage(s) a source anchor's mix is injected at.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageRouting {
    /// High → 1, Medium → 2 or 3, Low → 4.
    Multilayer,
    /// Uniform choice among a fixed stage set regardless of quality.
    Fixed(Vec<usize>),
}

impl StageRouting {
    pub fn validate(&self) -> Result<()> {
        if let StageRouting::Fixed(stages) = self {
            if stages.is_empty() || stages.iter().any(|&s| s == 0 || s > NUM_STAGES) {
                return Err(Error::Config(format!("invalid fixed stages {stages:?}")));
            }
        }
        Ok(())
    }

    pub fn route(&self, stratum: QualityStratum, rng: &mut impl Rng) -> usize {
        match self {
            StageRouting::Multilayer => route_stage(stratum, rng),
            StageRouting::Fixed(stages) if stages.len() == 1 => stages[0],
            StageRouting::Fixed(stages) => stages[rng.random_range(0..stages.len())],
        }
    }
}

/// Shallow stage for high quality, deep stage for low quality, a fair coin
/// between the middle two for medium quality.
pub fn route_stage(stratum: QualityStratum, rng: &mut impl Rng) -> usize {
    match stratum {
        QualityStratum::High => 1,
        QualityStratum::Medium => {
            if rng.random::<bool>() {
                2
            } else {
                3
            }
        }
        QualityStratum::Low => 4,
    }
}

/// How source partners are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartnerSelection {
    QualityGuided,
    Uniform,
}

/// Knobs for source and target style mixing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixConfig {
    pub tau: f64,
    pub alpha: f64,
    pub selection: PartnerSelection,
    pub routing: StageRouting,
    /// Replaces every Beta draw when set (tests and ablations).
    pub force_lambda: Option<f64>,
}

impl Default for MixConfig {
    fn default() -> Self {
        MixConfig {
            tau: DEFAULT_TAU,
            alpha: 1.0,
            selection: PartnerSelection::QualityGuided,
            routing: StageRouting::Multilayer,
            force_lambda: None,
        }
    }
}

impl MixConfig {
    fn lambda(&self, rng: &mut impl Rng) -> Result<f64> {
        match self.force_lambda {
            Some(l) => {
                check_lambda(l)?;
                Ok(l)
            }
            None => sample_lambda(self.alpha, rng),
        }
    }
}

/// One style-mix application.
#[derive(Debug, Clone, PartialEq)]
pub struct MixEvent {
    pub anchor: usize,
    pub partner: usize,
    pub lambda: f64,
    /// 1-based stage the mix was injected after.
    pub stage: usize,
    /// Mixed label; `None` on the target side.
    pub y_mix: Option<f64>,
}

/// Draws stage, partner and λ for every source anchor, in that order.
pub fn plan_source_mix(
    labels: &[f64],
    stratifier: &Stratifier,
    cfg: &MixConfig,
    rng: &mut impl Rng,
) -> Result<Vec<MixEvent>> {
    if labels.len() < 2 {
        return Err(Error::NoPartner(labels.len()));
    }
    cfg.routing.validate()?;
    labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let stage = cfg.routing.route(stratifier.stratify(y), rng);
            let partner = match cfg.selection {
                PartnerSelection::QualityGuided => select_partner(i, labels, cfg.tau, rng)?,
                PartnerSelection::Uniform => select_uniform_partner(i, labels.len(), rng)?,
            };
            let lambda = cfg.lambda(rng)?;
            Ok(MixEvent {
                anchor: i,
                partner,
                lambda,
                stage,
                y_mix: Some(lambda * y + (1.0 - lambda) * labels[partner]),
            })
        })
        .collect()
}

/// Result of the source-side augmentation.
#[derive(Debug, Clone)]
pub struct SourceMix {
    pub outputs: StageOutputs,
    pub mixed_labels: Vec<f64>,
    pub events: Vec<MixEvent>,
}

struct RoutedMixTap<'a> {
    clean: &'a StageOutputs,
    events: &'a [MixEvent],
}

impl Tap for RoutedMixTap<'_> {
    fn apply(&mut self, g: &mut Graph, stage: usize, features: Var) -> Result<Var> {
        let mask: Vec<bool> = self.events.iter().map(|e| e.stage == stage).collect();
        if !mask.iter().any(|&m| m) {
            return Ok(features);
        }
        let partners: Vec<usize> = self.events.iter().map(|e| e.partner).collect();
        let lambdas: Vec<f64> = self.events.iter().map(|e| e.lambda).collect();
        style_mix_rows(
            g,
            features,
            self.clean.stages[stage - 1],
            &partners,
            &lambdas,
            &mask,
        )
    }
}

/// Re-runs the backbone on source images `x` with each anchor's style mixed
/// at its routed stage. Partner statistics come from `clean`, the un-mixed
/// pass over the same images (row `i` of `clean` is sample `i`).
#[allow(clippy::too_many_arguments)]
pub fn apply_source_qsm(
    g: &mut Graph,
    model: &Model,
    params: &Bound,
    x: Var,
    clean: &StageOutputs,
    labels: &[f64],
    stratifier: &Stratifier,
    cfg: &MixConfig,
    rng: &mut impl Rng,
) -> Result<SourceMix> {
    let n = g.value(x).rows();
    if labels.len() != n || g.value(clean.stages[0]).rows() != n {
        return Err(Error::Dimension(format!(
            "{} labels for {} source images",
            labels.len(),
            n
        )));
    }
    let events = plan_source_mix(labels, stratifier, cfg, rng)?;
    let mut tap = RoutedMixTap {
        clean,
        events: &events,
    };
    let outputs = model.backbone.forward_stages(g, params, x, &mut tap)?;
    let mixed_labels = events.iter().map(|e| e.y_mix.unwrap_or_default()).collect();
    Ok(SourceMix {
        outputs,
        mixed_labels,
        events,
    })
}

/// Uniform-partner style mixing of target last-stage features; no labels.
/// A batch of one passes through unchanged.
pub fn apply_target_sm(
    g: &mut Graph,
    features: Var,
    cfg: &MixConfig,
    rng: &mut impl Rng,
) -> Result<(Var, Vec<MixEvent>)> {
    let n = g.value(features).rows();
    if n < 2 {
        return Ok((features, Vec::new()));
    }
    let mut events = Vec::with_capacity(n);
    for i in 0..n {
        let partner = select_uniform_partner(i, n, rng)?;
        let lambda = cfg.lambda(rng)?;
        events.push(MixEvent {
            anchor: i,
            partner,
            lambda,
            stage: NUM_STAGES,
            y_mix: None,
        });
    }
    let partners: Vec<usize> = events.iter().map(|e| e.partner).collect();
    let lambdas: Vec<f64> = events.iter().map(|e| e.lambda).collect();
    let mixed = style_mix_rows(g, features, features, &partners, &lambdas, &vec![true; n])?;
    Ok((mixed, events))
}

/// Writes `(iteration, anchor, partner, lambda, stage, y_mix)` rows.
pub fn write_mix_events<W: Write>(
    out: W,
    rows: &[(usize, MixEvent)],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Config(format!("csv: {e}"));
    w.write_record(["iteration", "anchor", "partner", "lambda", "stage", "y_mix"])
        .map_err(csv_err)?;
    for (it, e) in rows {
        w.write_record([
            it.to_string(),
            e.anchor.to_string(),
            e.partner.to_string(),
            format!("{:e}", e.lambda),
            e.stage.to_string(),
            e.y_mix.map(|v| format!("{v:e}")).unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()
        .map_err(|e| Error::Config(format!("csv flush: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_map(c: usize, h: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..c * h * w).map(|_| rng.random_range(-2.0..3.0)).collect();
        Tensor::new(&[c, h, w], data).unwrap()
    }

    #[test]
    fn stats_of_constant_and_pair() {
        let s = channel_stats(&Tensor::full(&[2, 3, 3], 3.0)).unwrap();
        assert_eq!(s.mean, vec![3.0, 3.0]);
        assert_eq!(s.std, vec![0.0, 0.0]);
        let s = channel_stats(&Tensor::new(&[1, 1, 2], vec![1.0, 3.0]).unwrap()).unwrap();
        assert_eq!(s.mean, vec![2.0]);
        assert_eq!(s.std, vec![1.0]);
    }

    #[test]
    fn stats_match_two_pass_oracle() {
        let f = random_map(4, 8, 8, 11);
        let s = channel_stats(&f).unwrap();
        for c in 0..4 {
            let vals = &f.data()[c * 64..(c + 1) * 64];
            let mut sum = 0.0;
            for v in vals {
                sum += v;
            }
            let mean = sum / 64.0;
            let mut ss = 0.0;
            for v in vals {
                ss += (v - mean).powi(2);
            }
            assert!((s.mean[c] - mean).abs() < 1e-12);
            assert!((s.std[c] - (ss / 64.0).sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn equal_labels_give_uniform_partners() {
        let w = partner_weights(1, &[0.3; 5], DEFAULT_TAU).unwrap();
        assert_eq!(w[1], 0.0);
        for (j, p) in w.iter().enumerate() {
            if j != 1 {
                assert!((p - 0.25).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn far_partner_is_practically_never_chosen() {
        let w = partner_weights(0, &[0.0, 0.0, 1.0], DEFAULT_TAU).unwrap();
        assert!(w[1] > 1.0 - 1e-12);
        assert!(w[2] < 1e-80);
    }

    #[test]
    fn singleton_batch_has_no_partner() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            select_partner(0, &[0.5], DEFAULT_TAU, &mut rng),
            Err(Error::NoPartner(1))
        ));
        assert!(sample_lambda(0.0, &mut rng).is_err());
        assert!(sample_lambda(-1.0, &mut rng).is_err());
    }

    #[test]
    fn uniform_partner_excludes_anchor() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut counts = [0usize; 4];
        for _ in 0..4000 {
            counts[select_uniform_partner(2, 4, &mut rng).unwrap()] += 1;
        }
        assert_eq!(counts[2], 0);
        assert!(counts.iter().enumerate().all(|(i, &c)| i == 2 || c > 1200));
    }

    #[test]
    fn lambda_one_is_identity() {
        let f = random_map(3, 4, 4, 5);
        let partner = channel_stats(&random_map(3, 4, 4, 6)).unwrap();
        let (m, y) = mix_styles(&f, &partner, 1.0, 0.7, 0.1).unwrap();
        assert_eq!(y, 0.7);
        for (a, b) in m.data().iter().zip(f.data()) {
            assert!((a - b).abs() <= 1e-5 * b.abs().max(1.0));
        }
    }

    #[test]
    fn own_stats_partner_is_identity() {
        let f = random_map(3, 4, 4, 9);
        let own = channel_stats(&f).unwrap();
        let (m, _) = mix_styles(&f, &own, 0.3, 0.2, 0.2).unwrap();
        for (a, b) in m.data().iter().zip(f.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn channel_mismatch_is_an_error() {
        let f = random_map(3, 4, 4, 1);
        let p = channel_stats(&random_map(2, 4, 4, 2)).unwrap();
        assert!(matches!(
            mix_styles(&f, &p, 0.5, 0.0, 0.0),
            Err(Error::Dimension(_))
        ));
        assert!(mix_styles(&f, &channel_stats(&f).unwrap(), 1.5, 0.0, 0.0).is_err());
    }

    #[test]
    fn stratifier_quantiles() {
        let labels: Vec<f64> = (1..=100).map(f64::from).collect();
        let s = Stratifier::fit(&labels).unwrap();
        assert!((s.q33 - 33.67).abs() < 1e-9);
        assert!((s.q67 - 67.33).abs() < 1e-9);
        assert_eq!(s.stratify(50.0), QualityStratum::Medium);
        assert_eq!(s.stratify(s.q67), QualityStratum::High);
        assert_eq!(s.stratify(s.q33), QualityStratum::Medium);
        assert_eq!(s.stratify(1.0), QualityStratum::Low);

        let flat = Stratifier::fit(&[0.4; 7]).unwrap();
        assert_eq!(flat.q33, flat.q67);
        assert_eq!(flat.stratify(0.4), QualityStratum::High);
        assert!(Stratifier::fit(&[0.1, 0.2]).is_err());
    }

    #[test]
    fn routing_rules() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert_eq!(route_stage(QualityStratum::High, &mut rng), 1);
        assert_eq!(route_stage(QualityStratum::Low, &mut rng), 4);
        let n = 10_000;
        let twos = (0..n)
            .filter(|_| route_stage(QualityStratum::Medium, &mut rng) == 2)
            .count();
        // 4 standard errors of a fair coin over 10^4 draws
        assert!((twos as f64 / n as f64 - 0.5).abs() < 0.02);
        let fixed = StageRouting::Fixed(vec![2, 3]);
        for _ in 0..100 {
            let s = fixed.route(QualityStratum::High, &mut rng);
            assert!(s == 2 || s == 3);
        }
        assert!(StageRouting::Fixed(vec![5]).validate().is_err());
    }

    #[test]
    fn target_singleton_passes_through() {
        let mut g = Graph::new();
        let f = g.param(Tensor::full(&[1, 2, 2, 2], 1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (out, ev) = apply_target_sm(&mut g, f, &MixConfig::default(), &mut rng).unwrap();
        assert_eq!(out, f);
        assert!(ev.is_empty());
    }

    #[test]
    fn graph_mix_agrees_with_scalar_mix() {
        let a = random_map(3, 4, 4, 21);
        let b = random_map(3, 4, 4, 22);
        let batch = Tensor::stack(&[a.clone(), b.clone()]).unwrap();
        let mut g = Graph::new();
        let f = g.param(batch);
        let out = style_mix_rows(&mut g, f, f, &[1, 0], &[0.3, 0.8], &[true, false]).unwrap();
        let rows = g.value(out).unstack();
        let (expect, _) = mix_styles(&a, &channel_stats(&b).unwrap(), 0.3, 0.0, 0.0).unwrap();
        for (x, y) in rows[0].data().iter().zip(expect.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert_eq!(rows[1], b);
    }

    #[test]
    fn mix_event_csv_has_header_and_rows() {
        let ev = MixEvent {
            anchor: 0,
            partner: 2,
            lambda: 0.25,
            stage: 3,
            y_mix: Some(0.5),
        };
        let mut buf = Vec::new();
        write_mix_events(&mut buf, &[(7, ev)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("iteration,anchor,partner,lambda,stage,y_mix"));
        assert_eq!(lines.next(), Some("7,0,2,2.5e-1,3,5e-1"));
    }
}
