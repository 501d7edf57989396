use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::nnx::Tensor;

/// `height × width × 3` image with values in `[0,1]`, row-major, RGB interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Raster {
    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            data.extend_from_slice(&rgb);
        }
        Raster {
            height,
            width,
            data,
        }
    }

    pub fn get(&self, row: usize, col: usize) -> [f64; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, row: usize, col: usize, rgb: [f64; 3]) {
        let i = (row * self.width + col) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Copy of the `h × w` window starting at `(top, left)`.
    pub fn window(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Raster> {
        if top + h > self.height || left + w > self.width {
            return Err(Error::Dimension(format!(
                "window {h}x{w} at ({top},{left}) outside {}x{}",
                self.height, self.width
            )));
        }
        let mut out = Raster::filled(h, w, [0.0; 3]);
        for r in 0..h {
            let src = ((top + r) * self.width + left) * 3;
            out.data[r * w * 3..(r + 1) * w * 3].copy_from_slice(&self.data[src..src + w * 3]);
        }
        Ok(out)
    }

    pub fn flip_horizontal(&self) -> Raster {
        let mut out = self.clone();
        for r in 0..self.height {
            for c in 0..self.width {
                out.set(r, c, self.get(r, self.width - 1 - c));
            }
        }
        out
    }

    /// Channel-major `[3, H, W]` tensor for the network.
    pub fn to_chw(&self) -> Tensor {
        let hw = self.height * self.width;
        let mut data = vec![0.0; 3 * hw];
        for p in 0..hw {
            for c in 0..3 {
                data[c * hw + p] = self.data[p * 3 + c];
            }
        }
        Tensor::new(&[3, self.height, self.width], data).expect("chw shape")
    }
}

/// Bilinear resize so the shorter side equals `short`, keeping aspect ratio.
pub fn resize_short_side(img: &Raster, short: usize) -> Result<Raster> {
    if short == 0 || img.height == 0 || img.width == 0 {
        return Err(Error::Dimension("resize of an empty raster".into()));
    }
    let s = short as f64 / img.height.min(img.width) as f64;
    let h = ((img.height as f64 * s).round() as usize).max(1);
    let w = ((img.width as f64 * s).round() as usize).max(1);
    let mut out = Raster::filled(h, w, [0.0; 3]);
    let sy = img.height as f64 / h as f64;
    let sx = img.width as f64 / w as f64;
    for r in 0..h {
        // pixel-centre alignment
        let fy = ((r as f64 + 0.5) * sy - 0.5).clamp(0.0, (img.height - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(img.height - 1);
        let ty = fy - y0 as f64;
        for c in 0..w {
            let fx = ((c as f64 + 0.5) * sx - 0.5).clamp(0.0, (img.width - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(img.width - 1);
            let tx = fx - x0 as f64;
            let (a, b, cc, d) = (img.get(y0, x0), img.get(y0, x1), img.get(y1, x0), img.get(y1, x1));
            let px = std::array::from_fn(|k| {
                let top = a[k] * (1.0 - tx) + b[k] * tx;
                let bot = cc[k] * (1.0 - tx) + d[k] * tx;
                top * (1.0 - ty) + bot * ty
            });
            out.set(r, c, px);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CropMode {
    Train,
    Test,
}

/// Where a crop was taken and whether it was mirrored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Crop {
    pub top: usize,
    pub left: usize,
    pub flipped: bool,
}

/// Square crop of side `side`: random position plus a coin-flip mirror in
/// train mode, centred and unflipped in test mode.
pub fn crop_pipeline(
    img: &Raster,
    mode: CropMode,
    side: usize,
    rng: &mut impl Rng,
) -> Result<(Tensor, Crop)> {
    if side == 0 || side > img.height.min(img.width) {
        return Err(Error::Dimension(format!(
            "crop side {side} exceeds {}x{} image",
            img.height, img.width
        )));
    }
    let crop = match mode {
        CropMode::Test => Crop {
            top: (img.height - side) / 2,
            left: (img.width - side) / 2,
            flipped: false,
        },
        CropMode::Train => Crop {
            top: rng.random_range(0..=img.height - side),
            left: rng.random_range(0..=img.width - side),
            flipped: rng.random::<f64>() < 0.5,
        },
    };
    let mut win = img.window(crop.top, crop.left, side, side)?;
    if crop.flipped {
        win = win.flip_horizontal();
    }
    Ok((win.to_chw(), crop))
}

/// Resize the short side to `short`, then crop to `side`.
pub fn prepare_input(
    img: &Raster,
    short: usize,
    side: usize,
    mode: CropMode,
    rng: &mut impl Rng,
) -> Result<Tensor> {
    let resized = resize_short_side(img, short)?;
    crop_pipeline(&resized, mode, side, rng).map(|(t, _)| t)
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary PPM (P6, maxval 255).
pub fn write_ppm(img: &Raster, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    buf.extend(img.data.iter().map(|&v| to_byte(v)));
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Raster> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_ppm(&bytes)
}

fn parse_ppm(bytes: &[u8]) -> Result<Raster> {
    let bad = |m: &str| Error::UnsupportedFormat(format!("ppm: {m}"));
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header"))?);
    }
    if fields[0] != "P6" {
        return Err(bad("only binary P6 is supported"));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("non-numeric header"));
    let (w, h, max) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
    if max != 255 {
        return Err(bad("maxval must be 255"));
    }
    let body = &bytes[pos + 1..];
    if body.len() < w * h * 3 {
        return Err(bad("truncated pixel data"));
    }
    Ok(Raster {
        height: h,
        width: w,
        data: body[..w * h * 3].iter().map(|&b| b as f64 / 255.0).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gradient(h: usize, w: usize) -> Raster {
        let mut img = Raster::filled(h, w, [0.0; 3]);
        for r in 0..h {
            for c in 0..w {
                img.set(r, c, [r as f64 / h as f64, c as f64 / w as f64, 0.5]);
            }
        }
        img
    }

    #[test]
    fn test_crop_is_centred_and_pure() {
        let img = gradient(512, 768);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (a, c) = crop_pipeline(&img, CropMode::Test, 224, &mut rng).unwrap();
        assert_eq!((c.top, c.left, c.flipped), (144, 272, false));
        let (b, _) = crop_pipeline(&img, CropMode::Test, 224, &mut rng).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shape(), &[3, 224, 224]);
    }

    #[test]
    fn train_crop_reproducible_with_seed() {
        let img = gradient(64, 96);
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            (0..5)
                .map(|_| crop_pipeline(&img, CropMode::Train, 32, &mut rng).unwrap().1)
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn oversize_crop_is_rejected() {
        let img = gradient(512, 768);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            crop_pipeline(&img, CropMode::Test, 1024, &mut rng),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn resize_keeps_aspect_and_constants() {
        let img = Raster::filled(512, 768, [0.2, 0.4, 0.6]);
        let r = resize_short_side(&img, 256).unwrap();
        assert_eq!((r.height, r.width), (256, 384));
        assert!(r.data.chunks(3).all(|p| (p[0] - 0.2).abs() < 1e-12 && (p[2] - 0.6).abs() < 1e-12));
    }

    #[test]
    fn ppm_round_trip() {
        let mut img = Raster::filled(3, 4, [0.0; 3]);
        img.set(1, 2, [1.0, 128.0 / 255.0, 0.0]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.ppm");
        write_ppm(&img, &p).unwrap();
        assert_eq!(read_ppm(&p).unwrap(), img);
    }
}
