//! Point cloud ingestion and six-view cube projection.
//!
//! A cloud is centred and scaled into `[-1,1]³`, rendered orthographically
//! onto the six cube faces with a depth buffer, and the faces are stitched
//! into a 2×3 multi-view raster. That raster then goes through the same
//! resize and crop pipeline as natural images.

mod ply;
mod project;
mod raster;

pub use ply::{load_ply, parse_ply, write_ply};
pub use project::{
    face_pixel, project_cloud, project_six_views, stitch, Face, MultiViewImage, PixelRect,
    ProjectionConfig, FACE_ORDER,
};
pub use raster::{
    crop_pipeline, prepare_input, read_ppm, resize_short_side, write_ppm, Crop, CropMode, Raster,
};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub pos: [f64; 3],
    pub color: [u8; 3],
}

/// Non-empty set of colored points with finite coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if points.iter().any(|p| p.pos.iter().any(|c| !c.is_finite())) {
            return Err(Error::NonFinite("point coordinates".into()));
        }
        Ok(PointCloud { points })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Applies `f` to every position, keeping colors.
    pub fn map_positions(&self, f: impl Fn([f64; 3]) -> [f64; 3]) -> Result<Self> {
        PointCloud::new(
            self.points
                .iter()
                .map(|p| Point {
                    pos: f(p.pos),
                    color: p.color,
                })
                .collect(),
        )
    }
}

/// Centroid to the origin, largest axis extent scaled to 2. A cloud with
/// zero extent keeps scale 1.
pub fn normalize_cloud(pc: &PointCloud) -> PointCloud {
    let n = pc.len() as f64;
    let mut centroid = [0.0; 3];
    for p in pc.points() {
        for k in 0..3 {
            centroid[k] += p.pos[k];
        }
    }
    centroid.iter_mut().for_each(|c| *c /= n);
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in pc.points() {
        for k in 0..3 {
            lo[k] = lo[k].min(p.pos[k]);
            hi[k] = hi[k].max(p.pos[k]);
        }
    }
    let extent = (0..3).map(|k| hi[k] - lo[k]).fold(0.0, f64::max);
    let scale = if extent > 0.0 { 2.0 / extent } else { 1.0 };
    let points = pc
        .points()
        .iter()
        .map(|p| Point {
            pos: std::array::from_fn(|k| (p.pos[k] - centroid[k]) * scale),
            color: p.color,
        })
        .collect();
    PointCloud { points }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(pts: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(
            pts.iter()
                .map(|&pos| Point {
                    pos,
                    color: [9, 8, 7],
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn two_points_span_unit_interval() {
        let n = normalize_cloud(&cloud(&[[0.0, 0.0, 0.0], [4.0, 0.0, 0.0]]));
        assert_eq!(n.points()[0].pos, [-1.0, 0.0, 0.0]);
        assert_eq!(n.points()[1].pos, [1.0, 0.0, 0.0]);
        assert_eq!(n.points()[0].color, [9, 8, 7]);
    }

    #[test]
    fn single_point_goes_to_origin() {
        let n = normalize_cloud(&cloud(&[[5.0, 5.0, 5.0]]));
        assert_eq!(n.points()[0].pos, [0.0, 0.0, 0.0]);
    }

    #[test]
    fn unit_cube_corners() {
        let mut pts = Vec::new();
        for x in [0.0, 1.0] {
            for y in [0.0, 1.0] {
                for z in [0.0, 1.0] {
                    pts.push([x, y, z]);
                }
            }
        }
        let n = normalize_cloud(&cloud(&pts));
        // centroid (0.5,0.5,0.5), extent 1 -> scale 2
        for (p, q) in n.points().iter().zip(&pts) {
            for k in 0..3 {
                assert_eq!(p.pos[k], (q[k] - 0.5) * 2.0);
                assert!(p.pos[k].abs() == 1.0);
            }
        }
    }

    #[test]
    fn rejects_empty_and_nan() {
        assert!(matches!(PointCloud::new(vec![]), Err(Error::EmptyCloud)));
        assert!(PointCloud::new(vec![Point {
            pos: [f64::NAN, 0.0, 0.0],
            color: [0; 3]
        }])
        .is_err());
    }
}
