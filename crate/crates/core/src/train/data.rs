use rand::Rng;

use crate::error::{Error, Result};
use crate::nnx::Tensor;
use crate::pcproj::{crop_pipeline, CropMode, Raster};

/// Min-max map from a dataset's label range onto `[0,1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelScaler {
    pub min: f64,
    pub max: f64,
}

impl LabelScaler {
    pub fn fit(labels: &[f64]) -> Result<Self> {
        let min = labels.iter().copied().fold(f64::INFINITY, f64::min);
        let max = labels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(max > min) || !min.is_finite() || !max.is_finite() {
            return Err(Error::Config(
                "labels must be finite and not all equal".into(),
            ));
        }
        Ok(LabelScaler { min, max })
    }

    pub fn normalize(&self, y: f64) -> f64 {
        (y - self.min) / (self.max - self.min)
    }

    pub fn denormalize(&self, y: f64) -> f64 {
        self.min + y * (self.max - self.min)
    }
}

#[derive(Debug, Clone)]
enum Images {
    /// Ready network inputs `[C,H,W]`.
    Tensors(Vec<Tensor>),
    /// Rasters cropped to `side` on the fly.
    Rasters { images: Vec<Raster>, side: usize },
}

/// Images with optional raw (un-normalized) quality labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    images: Images,
    labels: Option<Vec<f64>>,
}

impl Dataset {
    /// Every tensor must be `[C,H,W]` with one common shape.
    pub fn from_tensors(images: Vec<Tensor>, labels: Option<Vec<f64>>) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Config("dataset is empty".into()));
        }
        let s = images[0].shape().to_vec();
        if s.len() != 3 || images.iter().any(|t| t.shape() != s.as_slice()) {
            return Err(Error::Dimension("dataset images must share one [C,H,W] shape".into()));
        }
        Self::check_labels(images.len(), &labels)?;
        Ok(Dataset {
            images: Images::Tensors(images),
            labels,
        })
    }

    /// Rasters are cropped to `side`: randomly with a mirror coin while
    /// training, centred for evaluation.
    pub fn from_rasters(images: Vec<Raster>, side: usize, labels: Option<Vec<f64>>) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Config("dataset is empty".into()));
        }
        if images.iter().any(|r| r.height.min(r.width) < side) {
            return Err(Error::Dimension(format!("crop side {side} exceeds an image")));
        }
        Self::check_labels(images.len(), &labels)?;
        Ok(Dataset {
            images: Images::Rasters { images, side },
            labels,
        })
    }

    fn check_labels(n: usize, labels: &Option<Vec<f64>>) -> Result<()> {
        if let Some(l) = labels {
            if l.len() != n {
                return Err(Error::Dimension(format!("{} labels for {n} images", l.len())));
            }
            if l.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("labels".into()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        match &self.images {
            Images::Tensors(v) => v.len(),
            Images::Rasters { images, .. } => images.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn labels(&self) -> Option<&[f64]> {
        self.labels.as_deref()
    }

    pub fn channels(&self) -> usize {
        match &self.images {
            Images::Tensors(v) => v[0].shape()[0],
            Images::Rasters { .. } => 3,
        }
    }

    /// Subset in the given order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let labels = self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect());
        let images = match &self.images {
            Images::Tensors(v) => Images::Tensors(idx.iter().map(|&i| v[i].clone()).collect()),
            Images::Rasters { images, side } => Images::Rasters {
                images: idx.iter().map(|&i| images[i].clone()).collect(),
                side: *side,
            },
        };
        Dataset { images, labels }
    }

    /// Stacked `[B,C,H,W]` batch of the given samples.
    pub fn batch(&self, idx: &[usize], mode: CropMode, rng: &mut impl Rng) -> Result<Tensor> {
        match &self.images {
            Images::Tensors(v) => {
                Tensor::stack(&idx.iter().map(|&i| v[i].clone()).collect::<Vec<_>>())
            }
            Images::Rasters { images, side } => {
                let crops = idx
                    .iter()
                    .map(|&i| crop_pipeline(&images[i], mode, *side, rng).map(|(t, _)| t))
                    .collect::<Result<Vec<_>>>()?;
                Tensor::stack(&crops)
            }
        }
    }

    /// Test-mode batch of every sample in order.
    pub fn eval_batch(&self) -> Result<Tensor> {
        let all: Vec<usize> = (0..self.len()).collect();
        // test mode never touches the generator
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        self.batch(&all, CropMode::Test, &mut rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaler_round_trip() {
        let s = LabelScaler::fit(&[2.0, 4.0, 3.0]).unwrap();
        assert_eq!(s.normalize(4.0), 1.0);
        assert_eq!(s.denormalize(0.5), 3.0);
        assert!(LabelScaler::fit(&[1.0, 1.0]).is_err());
    }

    #[test]
    fn empty_dataset_is_config_error() {
        assert!(matches!(Dataset::from_tensors(vec![], None), Err(Error::Config(_))));
    }
}
