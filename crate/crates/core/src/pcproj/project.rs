use serde::{Deserialize, Serialize};

use super::raster::Raster;
use super::{normalize_cloud, PointCloud};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Face {
    PosX,
    NegX,
    PosY,
    NegY,
    PosZ,
    NegZ,
}

/// Grid placement order: first row `+X, -X, +Y`, second row `-Y, +Z, -Z`.
pub const FACE_ORDER: [Face; 6] = [
    Face::PosX,
    Face::NegX,
    Face::PosY,
    Face::NegY,
    Face::PosZ,
    Face::NegZ,
];

impl Face {
    /// Outward normal, image-right and image-up axes. Side faces use
    /// `right = Z × normal` and `up = +Z`, so a quarter turn about Z maps
    /// one side face onto the next.
    fn frame(self) -> ([f64; 3], [f64; 3], [f64; 3]) {
        match self {
            Face::PosX => ([1., 0., 0.], [0., 1., 0.], [0., 0., 1.]),
            Face::NegX => ([-1., 0., 0.], [0., -1., 0.], [0., 0., 1.]),
            Face::PosY => ([0., 1., 0.], [-1., 0., 0.], [0., 0., 1.]),
            Face::NegY => ([0., -1., 0.], [1., 0., 0.], [0., 0., 1.]),
            Face::PosZ => ([0., 0., 1.], [1., 0., 0.], [0., 1., 0.]),
            Face::NegZ => ([0., 0., -1.], [1., 0., 0.], [0., -1., 0.]),
        }
    }

    pub fn index(self) -> usize {
        FACE_ORDER.iter().position(|&f| f == self).unwrap()
    }

    pub fn label(self) -> &'static str {
        match self {
            Face::PosX => "+X",
            Face::NegX => "-X",
            Face::PosY => "+Y",
            Face::NegY => "-Y",
            Face::PosZ => "+Z",
            Face::NegZ => "-Z",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectionConfig {
    pub face_resolution: usize,
    pub background: [u8; 3],
    pub splat_radius: usize,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        ProjectionConfig {
            face_resolution: 256,
            background: [128, 128, 128],
            splat_radius: 1,
        }
    }
}

impl ProjectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.face_resolution < 8 {
            return Err(Error::Parameter(format!(
                "face resolution {} below 8",
                self.face_resolution
            )));
        }
        Ok(())
    }

    fn background_rgb(&self) -> [f64; 3] {
        self.background.map(|c| c as f64 / 255.0)
    }
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn to_cell(c: f64, res: usize) -> usize {
    let i = ((c + 1.0) / 2.0 * res as f64).floor();
    (i.max(0.0) as usize).min(res - 1)
}

/// Pixel `(row, col)` a point lands on and its distance to the face plane.
pub fn face_pixel(face: Face, pos: [f64; 3], res: usize) -> (usize, usize, f64) {
    let (n, right, up) = face.frame();
    let col = to_cell(dot(pos, right), res);
    let row = to_cell(-dot(pos, up), res);
    (row, col, 1.0 - dot(pos, n))
}

/// Renders the cloud onto each cube face in [`FACE_ORDER`]. The cloud is
/// expected to be normalized already. Ties in depth keep the earlier point.
pub fn project_six_views(pc: &PointCloud, cfg: &ProjectionConfig) -> Result<[Raster; 6]> {
    cfg.validate()?;
    let res = cfg.face_resolution;
    let bg = cfg.background_rgb();
    let r = cfg.splat_radius as isize;
    Ok(FACE_ORDER.map(|face| {
        let mut img = Raster::filled(res, res, bg);
        let mut depth = vec![f64::INFINITY; res * res];
        for p in pc.points() {
            let (row, col, d) = face_pixel(face, p.pos, res);
            let rgb = p.color.map(|c| c as f64 / 255.0);
            for dr in -r..=r {
                for dc in -r..=r {
                    let (y, x) = (row as isize + dr, col as isize + dc);
                    if y < 0 || x < 0 || y >= res as isize || x >= res as isize {
                        continue;
                    }
                    let k = y as usize * res + x as usize;
                    if d < depth[k] {
                        depth[k] = d;
                        img.set(y as usize, x as usize, rgb);
                    }
                }
            }
        }
        img
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewImage {
    pub pixels: Raster,
    pub source_id: String,
    /// Indexed like [`FACE_ORDER`].
    pub face_boxes: [PixelRect; 6],
}

impl MultiViewImage {
    pub fn extract_face(&self, face: Face) -> Raster {
        let b = self.face_boxes[face.index()];
        self.pixels
            .window(b.top, b.left, b.height, b.width)
            .expect("face box inside image")
    }
}

/// Places six equal square faces on a 2×3 grid.
pub fn stitch(views: &[Raster; 6], source_id: &str) -> Result<MultiViewImage> {
    let res = views[0].height;
    if views.iter().any(|v| v.height != res || v.width != res) {
        return Err(Error::Dimension(
            "faces must all be square with the same resolution".into(),
        ));
    }
    let mut pixels = Raster::filled(2 * res, 3 * res, [0.0; 3]);
    let face_boxes: [PixelRect; 6] = std::array::from_fn(|i| PixelRect {
        top: (i / 3) * res,
        left: (i % 3) * res,
        height: res,
        width: res,
    });
    for (view, b) in views.iter().zip(&face_boxes) {
        for r in 0..res {
            let dst = ((b.top + r) * pixels.width + b.left) * 3;
            pixels.data[dst..dst + res * 3].copy_from_slice(&view.data[r * res * 3..(r + 1) * res * 3]);
        }
    }
    Ok(MultiViewImage {
        pixels,
        source_id: source_id.to_string(),
        face_boxes,
    })
}

/// Normalize, render and stitch in one call.
pub fn project_cloud(
    pc: &PointCloud,
    cfg: &ProjectionConfig,
    source_id: &str,
) -> Result<MultiViewImage> {
    let views = project_six_views(&normalize_cloud(pc), cfg)?;
    stitch(&views, source_id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pcproj::Point;

    fn pt(pos: [f64; 3], color: [u8; 3]) -> Point {
        Point { pos, color }
    }

    #[test]
    fn nearer_point_wins() {
        let pc = PointCloud::new(vec![
            pt([0.0, 0.0, -0.5], [0, 0, 255]),
            pt([0.0, 0.0, 0.5], [255, 0, 0]),
        ])
        .unwrap();
        let cfg = ProjectionConfig {
            face_resolution: 16,
            ..Default::default()
        };
        let views = project_six_views(&pc, &cfg).unwrap();
        assert_eq!(views[Face::PosZ.index()].get(8, 8), [1.0, 0.0, 0.0]);
        assert_eq!(views[Face::NegZ.index()].get(8, 8), [0.0, 0.0, 1.0]);
        // background away from the splat
        let bg = 128.0 / 255.0;
        assert_eq!(views[Face::PosZ.index()].get(0, 0), [bg; 3]);
    }

    #[test]
    fn splat_covers_square() {
        let pc = PointCloud::new(vec![pt([0.0, 0.0, 0.0], [0, 255, 0])]).unwrap();
        let cfg = ProjectionConfig {
            face_resolution: 16,
            splat_radius: 2,
            ..Default::default()
        };
        let v = &project_six_views(&pc, &cfg).unwrap()[0];
        let covered = v.data.chunks(3).filter(|p| p[1] == 1.0 && p[0] == 0.0).count();
        assert_eq!(covered, 25);
    }

    #[test]
    fn stitch_layout_and_round_trip() {
        let views: [Raster; 6] =
            std::array::from_fn(|i| Raster::filled(8, 8, [i as f64 / 6.0, 0.0, 1.0]));
        let mv = stitch(&views, "x").unwrap();
        assert_eq!((mv.pixels.height, mv.pixels.width), (16, 24));
        for (i, f) in FACE_ORDER.iter().enumerate() {
            assert_eq!(mv.extract_face(*f), views[i]);
        }
        assert_eq!(mv.pixels.get(9, 1)[0], 3.0 / 6.0);
    }

    #[test]
    fn stitch_rejects_mixed_sizes() {
        let mut views: [Raster; 6] = std::array::from_fn(|_| Raster::filled(8, 8, [0.0; 3]));
        views[4] = Raster::filled(9, 9, [0.0; 3]);
        assert!(matches!(stitch(&views, "x"), Err(Error::Dimension(_))));
    }

    #[test]
    fn small_resolution_rejected() {
        let pc = PointCloud::new(vec![pt([0.0; 3], [0; 3])]).unwrap();
        let cfg = ProjectionConfig {
            face_resolution: 4,
            ..Default::default()
        };
        assert!(project_six_views(&pc, &cfg).is_err());
    }
}
