//! Two synthetic image domains with a known quality ground truth.
//!
//! Every sample has a latent distortion-free level `ℓ ∈ [0,1]` (1 is
//! pristine). Its image is a smooth random colored pattern plus white noise
//! whose strength falls with `ℓ`, and its score is a strictly increasing
//! function of `ℓ`. Target images additionally carry a sinusoidal grating
//! of random strength, then pass through a per-sample per-channel gain, a
//! fixed channel-mixing matrix and a channel offset.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::nnx::Tensor;
use crate::train::Dataset;

/// `score = low + (high − low)·ℓ^gamma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityFn {
    pub low: f64,
    pub high: f64,
    pub gamma: f64,
}

impl QualityFn {
    pub fn score(&self, level: f64) -> f64 {
        self.low + (self.high - self.low) * level.powf(self.gamma)
    }
}

/// A grating `a·sin(2π(fx·x + fy·y)/size + φ)` added to every channel,
/// with `a` uniform in `amplitude` and `φ` uniform per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Interference {
    pub frequency: (usize, usize),
    pub amplitude: (f64, f64),
}

/// Applied to target images: `x ← mixing·(g ⊙ (x + grating)) + offset`,
/// `g` drawn log-uniformly from `gain_range` per sample and channel.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainShift {
    pub offset: Vec<f64>,
    /// Row-major `C×C`.
    pub mixing: Vec<f64>,
    pub gain_range: (f64, f64),
    pub interference: Option<Interference>,
}

impl DomainShift {
    pub fn identity(channels: usize) -> Self {
        let mut mixing = vec![0.0; channels * channels];
        for c in 0..channels {
            mixing[c * channels + c] = 1.0;
        }
        DomainShift {
            offset: vec![0.0; channels],
            mixing,
            gain_range: (1.0, 1.0),
            interference: None,
        }
    }

    pub fn offset_only(offset: Vec<f64>) -> Self {
        let mut s = Self::identity(offset.len());
        s.offset = offset;
        s
    }

    fn is_identity(&self, channels: usize) -> bool {
        *self == Self::identity(channels)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDomainSpec {
    pub channels: usize,
    /// Images are `size × size`.
    pub size: usize,
    pub n_source: usize,
    pub n_target: usize,
    pub quality: QualityFn,
    /// Noise standard deviation at level 0 and level 1.
    pub noise_range: (f64, f64),
    /// Additive Gaussian noise on the scores, in score units.
    pub label_noise: f64,
    /// Uniform range of the pattern amplitude.
    pub content_amplitude: (f64, f64),
    /// Log-uniform per-sample per-channel gain shared by both domains.
    pub base_gain: (f64, f64),
    pub shift: DomainShift,
}

impl SyntheticDomainSpec {
    /// The shifted benchmark: 2000 source and 1500 target 3×32×32 images.
    pub fn benchmark() -> Self {
        SyntheticDomainSpec {
            channels: 3,
            size: 32,
            n_source: 2000,
            n_target: 1500,
            quality: QualityFn {
                low: 1.0,
                high: 5.0,
                gamma: 1.0,
            },
            noise_range: (0.8, 0.05),
            label_noise: 0.0,
            content_amplitude: (0.5, 1.5),
            base_gain: (0.8, 1.25),
            shift: DomainShift {
                offset: vec![0.6, -0.4, 0.3],
                mixing: vec![0.8, 0.3, 0.0, 0.0, 0.7, 0.4, 0.3, 0.0, 0.9],
                gain_range: (0.7, 1.4),
                interference: Some(Interference {
                    frequency: (10, 5),
                    amplitude: (0.0, 1.0),
                }),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels;
        if c == 0 || self.size < 8 || self.n_source < 2 || self.n_target < 2 {
            return Err(Error::Config("synthetic spec sizes".into()));
        }
        if !(self.quality.high > self.quality.low) || !(self.quality.gamma > 0.0) {
            return Err(Error::Config("quality function must be strictly increasing".into()));
        }
        if self.shift.offset.len() != c || self.shift.mixing.len() != c * c {
            return Err(Error::Dimension("domain shift vs channel count".into()));
        }
        let m = nalgebra::DMatrix::from_row_slice(c, c, &self.shift.mixing);
        if m.determinant().abs() < 1e-9 {
            return Err(Error::Config("channel mixing must be invertible".into()));
        }
        let (glo, ghi) = self.shift.gain_range;
        let (blo, bhi) = self.base_gain;
        if !(glo > 0.0 && ghi >= glo && blo > 0.0 && bhi >= blo) {
            return Err(Error::Config("gain ranges must be positive".into()));
        }
        Ok(())
    }
}

/// Generated domains. Target labels are kept for evaluation only.
#[derive(Debug, Clone)]
pub struct SyntheticDomains {
    pub source: Dataset,
    pub target: Dataset,
    pub source_levels: Vec<f64>,
    pub target_levels: Vec<f64>,
}

impl SyntheticDomains {
    /// Random `(train, held_out)` split of the target domain; `held_out`
    /// gets a `held_out_fraction` share.
    pub fn split_target(&self, held_out_fraction: f64, rng: &mut impl Rng) -> (Dataset, Dataset) {
        let n = self.target.len();
        let k = ((n as f64 * held_out_fraction).round() as usize).clamp(2, n - 2);
        let mut idx: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), rng);
        let (test, train) = idx.split_at(k);
        (self.target.subset(train), self.target.subset(test))
    }
}

fn log_uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi <= lo {
        return lo;
    }
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

/// One un-shifted image `[C,size,size]` at `level`.
fn base_image(spec: &SyntheticDomainSpec, level: f64, rng: &mut impl Rng) -> Vec<f64> {
    let (c, n) = (spec.channels, spec.size);
    let mut pattern = vec![0.0; n * n];
    for _ in 0..4 {
        let fx = rng.random_range(0..4) as f64;
        let fy = rng.random_range(0..4) as f64;
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let amp = rng.random_range(0.5..1.0);
        for y in 0..n {
            for x in 0..n {
                let t = std::f64::consts::TAU * (fx * x as f64 + fy * y as f64) / n as f64;
                pattern[y * n + x] += amp * (t + phase).sin();
            }
        }
    }
    let mean = pattern.iter().sum::<f64>() / (n * n) as f64;
    let sd = (pattern.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n * n) as f64).sqrt();
    let sd = if sd > 1e-9 { sd } else { 1.0 };
    let amplitude = rng.random_range(spec.content_amplitude.0..=spec.content_amplitude.1);
    let (s0, s1) = spec.noise_range;
    let sigma = s0 + (s1 - s0) * level;
    let noise = Normal::new(0.0, sigma).expect("finite sigma");
    let mut img = vec![0.0; c * n * n];
    for ch in 0..c {
        let tint = rng.random_range(0.5..1.5);
        let gain = log_uniform(rng, spec.base_gain);
        for p in 0..n * n {
            let clean = amplitude * tint * (pattern[p] - mean) / sd;
            img[ch * n * n + p] = gain * (clean + noise.sample(rng));
        }
    }
    img
}

fn apply_shift(spec: &SyntheticDomainSpec, img: &mut [f64], rng: &mut impl Rng) {
    let c = spec.channels;
    let n = spec.size;
    let hw = n * n;
    if let Some(grating) = &spec.shift.interference {
        let (lo, hi) = grating.amplitude;
        let a = if hi > lo { rng.random_range(lo..hi) } else { lo };
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let (fx, fy) = (grating.frequency.0 as f64, grating.frequency.1 as f64);
        for y in 0..n {
            for x in 0..n {
                let t = std::f64::consts::TAU * (fx * x as f64 + fy * y as f64) / n as f64;
                let v = a * (t + phase).sin();
                for ch in 0..c {
                    img[ch * hw + y * n + x] += v;
                }
            }
        }
    }
    let gains: Vec<f64> = (0..c).map(|_| log_uniform(rng, spec.shift.gain_range)).collect();
    let mut px = vec![0.0; c];
    for p in 0..hw {
        for ch in 0..c {
            px[ch] = gains[ch] * img[ch * hw + p];
        }
        for o in 0..c {
            let mut v = spec.shift.offset[o];
            for i in 0..c {
                v += spec.shift.mixing[o * c + i] * px[i];
            }
            img[o * hw + p] = v;
        }
    }
}

fn make_domain(
    spec: &SyntheticDomainSpec,
    n: usize,
    shifted: bool,
    rng: &mut impl Rng,
) -> Result<(Dataset, Vec<f64>)> {
    let label_noise = if spec.label_noise > 0.0 {
        Some(Normal::new(0.0, spec.label_noise).map_err(|e| Error::Parameter(e.to_string()))?)
    } else {
        None
    };
    let mut images = Vec::with_capacity(n);
    let mut levels = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let level: f64 = rng.random();
        let mut img = base_image(spec, level, rng);
        if shifted {
            apply_shift(spec, &mut img, rng);
        }
        let mut y = spec.quality.score(level);
        if let Some(d) = &label_noise {
            y += d.sample(rng);
        }
        images.push(Tensor::new(&[spec.channels, spec.size, spec.size], img)?);
        levels.push(level);
        labels.push(y);
    }
    Ok((Dataset::from_tensors(images, Some(labels))?, levels))
}

/// Source from the base distribution, target through the shift.
pub fn make_synthetic_domains(spec: &SyntheticDomainSpec, rng: &mut impl Rng) -> Result<SyntheticDomains> {
    spec.validate()?;
    let (source, source_levels) = make_domain(spec, spec.n_source, false, rng)?;
    let shifted = !spec.shift.is_identity(spec.channels);
    let (target, target_levels) = make_domain(spec, spec.n_target, shifted, rng)?;
    Ok(SyntheticDomains {
        source,
        target,
        source_levels,
        target_levels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::metrics::srocc;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> SyntheticDomainSpec {
        SyntheticDomainSpec {
            n_source: 60,
            n_target: 40,
            ..SyntheticDomainSpec::benchmark()
        }
    }

    #[test]
    fn labels_rank_like_levels() {
        let d = make_synthetic_domains(&small(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(srocc(d.source.labels().unwrap(), &d.source_levels).unwrap(), 1.0);
        assert_eq!(srocc(d.target.labels().unwrap(), &d.target_levels).unwrap(), 1.0);
    }

    #[test]
    fn singular_mixing_rejected() {
        let mut s = small();
        s.shift.mixing = vec![1.0; 9];
        assert!(s.validate().is_err());
    }

    #[test]
    fn split_sizes() {
        let d = make_synthetic_domains(&small(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let (train, test) = d.split_target(0.25, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!((train.len(), test.len()), (30, 10));
    }
}
