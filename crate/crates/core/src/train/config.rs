use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::align::{AlignmentKind, GaussianKernelConfig, RankWeightScope, DEFAULT_EPSILON, DEFAULT_LABEL_BANDWIDTH};
use crate::error::{Error, Result};
use crate::mixup::{MixConfig, PartnerSelection, StageRouting, DEFAULT_TAU};
use crate::nnx::{BackboneConfig, NUM_STAGES};

/// Training hyperparameters. Serialized as a flat key-value TOML document
/// whose keys are the field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub total_iters: usize,
    pub warmup_iters: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub grad_clip: f64,
    /// Weight of the quality regression loss.
    pub lambda_p: f64,
    /// Weight of the adversarial domain loss.
    pub lambda_d: f64,
    /// Weight of the conditional alignment loss.
    pub lambda_r: f64,
    pub mix_probability: f64,
    pub alpha: f64,
    pub tau: f64,
    pub epsilon: f64,
    pub label_bandwidth: f64,
    /// Fixed feature-kernel bandwidth; absent means per-batch median distance.
    pub feature_bandwidth: Option<f64>,
    pub partner_selection: PartnerSelection,
    /// `"multilayer"` or a comma-separated list of stages such as `"2,3"`.
    pub mix_stages: String,
    /// Also style-mix target features at the last stage.
    pub target_mix: bool,
    pub alignment: AlignmentKind,
    pub rank_weight_scope: RankWeightScope,
    pub grl_scale: f64,
    /// Ramp the reversal scale as `2/(1+exp(-10p)) - 1` over training progress `p`.
    pub grl_ramp: bool,
    pub seed: u64,
    pub log_every: usize,
    pub eval_chunk: usize,
    pub widths: [usize; NUM_STAGES],
    pub kernel: usize,
    pub head_hidden: usize,
    /// Multi-view images are resized so the short side has this length.
    pub resize_short_side: usize,
    pub crop_side: usize,
    pub face_resolution: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let bb = BackboneConfig::default();
        TrainConfig {
            batch_size: 36,
            total_iters: 30_000,
            warmup_iters: 5_000,
            lr: 1e-3,
            momentum: 0.9,
            weight_decay: 5e-4,
            grad_clip: 0.0,
            lambda_p: 1.0,
            lambda_d: 1.0,
            lambda_r: 1.0,
            mix_probability: 0.5,
            alpha: 1.0,
            tau: DEFAULT_TAU,
            epsilon: DEFAULT_EPSILON,
            label_bandwidth: DEFAULT_LABEL_BANDWIDTH,
            feature_bandwidth: None,
            partner_selection: PartnerSelection::QualityGuided,
            mix_stages: "multilayer".into(),
            target_mix: true,
            alignment: AlignmentKind::Rca,
            rank_weight_scope: RankWeightScope::All,
            grl_scale: 1.0,
            grl_ramp: false,
            seed: 0,
            log_every: 100,
            eval_chunk: 64,
            widths: bb.widths,
            kernel: bb.kernel,
            head_hidden: bb.head_hidden,
            resize_short_side: 256,
            crop_side: 224,
            face_resolution: 256,
        }
    }
}

impl TrainConfig {
    /// Ten times shorter schedule, same warm-up ratio.
    pub fn desk() -> Self {
        TrainConfig {
            total_iters: 3_000,
            warmup_iters: 500,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size < 2 {
            return bad(format!("batch_size {} < 2", self.batch_size));
        }
        if self.warmup_iters >= self.total_iters {
            return bad(format!(
                "warmup_iters {} must be below total_iters {}",
                self.warmup_iters, self.total_iters
            ));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return bad("lr must be > 0, momentum in [0,1), weight_decay >= 0".into());
        }
        for (name, v) in [
            ("lambda_p", self.lambda_p),
            ("lambda_d", self.lambda_d),
            ("lambda_r", self.lambda_r),
            ("grl_scale", self.grl_scale),
            ("grad_clip", self.grad_clip),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be finite and >= 0"));
            }
        }
        if !(0.0..=1.0).contains(&self.mix_probability) {
            return bad(format!("mix_probability {}", self.mix_probability));
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("tau", self.tau),
            ("epsilon", self.epsilon),
            ("label_bandwidth", self.label_bandwidth),
        ] {
            if !(v > 0.0) {
                return bad(format!("{name} must be > 0"));
            }
        }
        if matches!(self.feature_bandwidth, Some(b) if !(b > 0.0)) {
            return bad("feature_bandwidth must be > 0".into());
        }
        if self.log_every == 0 || self.eval_chunk == 0 {
            return bad("log_every and eval_chunk must be positive".into());
        }
        if self.crop_side > self.resize_short_side {
            return bad("crop_side exceeds resize_short_side".into());
        }
        self.routing()?.validate()?;
        self.backbone(3).validate()
    }

    pub fn routing(&self) -> Result<StageRouting> {
        let s = self.mix_stages.trim();
        if s == "multilayer" {
            return Ok(StageRouting::Multilayer);
        }
        let stages = s
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::Config(format!("mix_stages {s:?}")))?;
        Ok(StageRouting::Fixed(stages))
    }

    pub fn mix_config(&self) -> Result<MixConfig> {
        Ok(MixConfig {
            tau: self.tau,
            alpha: self.alpha,
            selection: self.partner_selection,
            routing: self.routing()?,
            force_lambda: None,
        })
    }

    pub fn kernel_config(&self) -> GaussianKernelConfig {
        GaussianKernelConfig {
            feature_bandwidth: self.feature_bandwidth,
            label_bandwidth: self.label_bandwidth,
        }
    }

    pub fn backbone(&self, in_channels: usize) -> BackboneConfig {
        BackboneConfig {
            in_channels,
            widths: self.widths,
            kernel: self.kernel,
            head_hidden: self.head_hidden,
        }
    }

    /// Reversal scale at `iter`.
    pub fn grl_at(&self, iter: usize) -> f64 {
        if !self.grl_ramp {
            return self.grl_scale;
        }
        let p = iter as f64 / self.total_iters as f64;
        self.grl_scale * (2.0 / (1.0 + (-10.0 * p).exp()) - 1.0)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let mut c = TrainConfig::desk();
        c.feature_bandwidth = Some(0.7);
        c.mix_stages = "2,3".into();
        c.alignment = AlignmentKind::Cod;
        let back = TrainConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_file_uses_defaults() {
        let c = TrainConfig::from_toml("total_iters = 100\nwarmup_iters = 10\nseed = 3\n").unwrap();
        assert_eq!(c.batch_size, 36);
        assert_eq!((c.total_iters, c.warmup_iters, c.seed), (100, 10, 3));
    }

    #[test]
    fn rejects_bad_values() {
        assert!(TrainConfig::from_toml("warmup_iters = 40000").is_err());
        assert!(TrainConfig::from_toml("lr = 0.0").is_err());
        assert!(TrainConfig::from_toml("mix_stages = \"5\"").is_err());
        assert!(TrainConfig::from_toml("no_such_key = 1").is_err());
    }

    #[test]
    fn routing_parse() {
        let mut c = TrainConfig::default();
        assert_eq!(c.routing().unwrap(), StageRouting::Multilayer);
        c.mix_stages = "2, 3".into();
        assert_eq!(c.routing().unwrap(), StageRouting::Fixed(vec![2, 3]));
    }
}
