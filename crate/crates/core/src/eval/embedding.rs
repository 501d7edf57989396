//! Two-component PCA of pooled features and an SVG scatter of both domains.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::nnx::Tensor;

/// Fewest rows accepted per domain.
pub const MIN_PER_DOMAIN: usize = 10;

/// Principal axes of a set of feature rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// One unit-norm axis per entry, by decreasing variance.
    pub axes: Vec<Vec<f64>>,
    pub variances: Vec<f64>,
}

impl Pca {
    /// Fits `k` axes to the rows of `x` (`[N,D]`). Each axis is signed so
    /// its largest-magnitude coordinate is positive.
    pub fn fit(x: &Tensor, k: usize) -> Result<Self> {
        let (n, d) = rows_cols(x)?;
        if n <= k || d < k {
            return Err(Error::Dimension(format!(
                "{k} components need more than {k} rows and at least {k} columns, got {n}x{d}"
            )));
        }
        let m = DMatrix::from_row_slice(n, d, x.data());
        let mean: Vec<f64> = (0..d).map(|j| m.column(j).mean()).collect();
        let mut c = m.clone();
        for j in 0..d {
            c.column_mut(j).add_scalar_mut(-mean[j]);
        }
        let cov = c.transpose() * &c / (n - 1) as f64;
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let mut axes = Vec::with_capacity(k);
        let mut variances = Vec::with_capacity(k);
        for &i in order.iter().take(k) {
            let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            let pivot = v.iter().copied().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
            if pivot < 0.0 {
                v.iter_mut().for_each(|e| *e = -*e);
            }
            axes.push(v);
            variances.push(eig.eigenvalues[i].max(0.0));
        }
        Ok(Pca { mean, axes, variances })
    }

    /// Coordinates of each row of `x` along the axes.
    pub fn project(&self, x: &Tensor) -> Result<Vec<Vec<f64>>> {
        let (_, d) = rows_cols(x)?;
        if d != self.mean.len() {
            return Err(Error::Dimension(format!("pca fitted on {} dims, got {d}", self.mean.len())));
        }
        Ok(x.data()
            .chunks(d)
            .map(|row| {
                self.axes
                    .iter()
                    .map(|a| row.iter().zip(&self.mean).zip(a).map(|((v, m), e)| (v - m) * e).sum())
                    .collect()
            })
            .collect())
    }
}

fn rows_cols(x: &Tensor) -> Result<(usize, usize)> {
    match x.shape() {
        &[n, d] => Ok((n, d)),
        s => Err(Error::Dimension(format!("feature rows must be [N,D], got {s:?}"))),
    }
}

/// Plot coordinates of both domains in one shared PCA frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub pca: Pca,
    pub source: Vec<[f64; 2]>,
    pub target: Vec<[f64; 2]>,
}

/// Fits the PCA on source and target rows together.
pub fn embed(source: &Tensor, target: &Tensor) -> Result<Embedding> {
    let (ns, ds) = rows_cols(source)?;
    let (nt, dt) = rows_cols(target)?;
    if ds != dt {
        return Err(Error::Dimension(format!("feature dims {ds} vs {dt}")));
    }
    if ns < MIN_PER_DOMAIN || nt < MIN_PER_DOMAIN {
        return Err(Error::Dimension(format!(
            "need at least {MIN_PER_DOMAIN} rows per domain, got {ns} and {nt}"
        )));
    }
    let both = Tensor::new(&[ns + nt, ds], [source.data(), target.data()].concat())?;
    let pca = Pca::fit(&both, 2)?;
    let xy = |t: &Tensor| -> Result<Vec<[f64; 2]>> {
        Ok(pca.project(t)?.into_iter().map(|p| [p[0], p[1]]).collect())
    };
    Ok(Embedding {
        source: xy(source)?,
        target: xy(target)?,
        pca,
    })
}

/// Blue (low) to red (high).
fn ramp(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let r = (40.0 + 200.0 * t).round() as u8;
    let g = (90.0 + 60.0 * (1.0 - (2.0 * t - 1.0).abs())).round() as u8;
    let b = (230.0 - 200.0 * t).round() as u8;
    format!("#{r:02x}{g:02x}{b:02x}")
}

/// Renders the embedding as SVG. Source points are circles, target points
/// are triangles, fill encodes the label (or pseudo-label).
pub fn render_svg(e: &Embedding, source_labels: &[f64], target_labels: &[f64]) -> Result<String> {
    if source_labels.len() != e.source.len() || target_labels.len() != e.target.len() {
        return Err(Error::Dimension("one label per plotted point".into()));
    }
    const SIZE: f64 = 480.0;
    const MARGIN: f64 = 40.0;
    let pts = e.source.iter().chain(&e.target);
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in pts {
        x0 = x0.min(p[0]);
        x1 = x1.max(p[0]);
        y0 = y0.min(p[1]);
        y1 = y1.max(p[1]);
    }
    let span = |a: f64, b: f64| if b - a > 1e-12 { b - a } else { 1.0 };
    let (sx, sy) = (span(x0, x1), span(y0, y1));
    let inner = SIZE - 2.0 * MARGIN;
    let to_px = |p: &[f64; 2]| {
        (
            MARGIN + (p[0] - x0) / sx * inner,
            SIZE - MARGIN - (p[1] - y0) / sy * inner,
        )
    };
    let labels = source_labels.iter().chain(target_labels);
    let (lmin, lmax) = labels.fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    let lspan = span(lmin, lmax);

    let mut s = String::new();
    let w = |s: &mut String, t: std::fmt::Arguments| s.write_fmt(t).expect("string write");
    w(&mut s, format_args!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{SIZE}\" viewBox=\"0 0 {SIZE} {SIZE}\">\n"
    ));
    w(&mut s, format_args!("<rect x=\"0\" y=\"0\" width=\"{SIZE}\" height=\"{SIZE}\" fill=\"white\"/>\n"));
    w(&mut s, format_args!(
        "<rect x=\"{MARGIN}\" y=\"{MARGIN}\" width=\"{inner}\" height=\"{inner}\" fill=\"none\" stroke=\"#888\"/>\n"
    ));
    w(&mut s, format_args!(
        "<text x=\"{MARGIN}\" y=\"24\" font-family=\"sans-serif\" font-size=\"13\">PC1 ({:.3}) vs PC2 ({:.3}); circle = source, triangle = target</text>\n",
        e.pca.variances[0], e.pca.variances[1]
    ));
    w(&mut s, format_args!("<g id=\"source\" stroke=\"black\" stroke-width=\"0.5\">\n"));
    for (p, &l) in e.source.iter().zip(source_labels) {
        let (x, y) = to_px(p);
        w(&mut s, format_args!(
            "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"3.5\" fill=\"{}\"/>\n",
            ramp((l - lmin) / lspan)
        ));
    }
    w(&mut s, format_args!("</g>\n<g id=\"target\" stroke=\"black\" stroke-width=\"0.5\">\n"));
    for (p, &l) in e.target.iter().zip(target_labels) {
        let (x, y) = to_px(p);
        w(&mut s, format_args!(
            "<polygon points=\"{:.2},{:.2} {:.2},{:.2} {:.2},{:.2}\" fill=\"{}\"/>\n",
            x,
            y - 4.5,
            x - 4.0,
            y + 3.0,
            x + 4.0,
            y + 3.0,
            ramp((l - lmin) / lspan)
        ));
    }
    w(&mut s, format_args!("</g>\n</svg>\n"));
    Ok(s)
}

/// Embeds both domains, writes the SVG to `path` and returns the embedding.
pub fn emit_embedding_plot(
    source: &Tensor,
    source_labels: &[f64],
    target: &Tensor,
    target_labels: &[f64],
    path: impl AsRef<Path>,
) -> Result<Embedding> {
    let e = embed(source, target)?;
    let svg = render_svg(&e, source_labels, target_labels)?;
    let path = path.as_ref();
    std::fs::write(path, svg).map_err(|err| Error::io(path, err))?;
    Ok(e)
}
