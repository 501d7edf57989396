//! Builds a colored two-sphere cloud, round-trips it through binary PLY and
//! renders the stitched six-view image.
//!
//! cargo run --example project_point_cloud -- [out_dir]

use std::f64::consts::PI;
use std::path::PathBuf;

use pcqa_adapt::pcproj::{parse_ply, project_cloud, write_ply, write_ppm, Point, PointCloud, ProjectionConfig, FACE_ORDER};

fn sphere(center: [f64; 3], radius: f64, color: [u8; 3], n: usize) -> Vec<Point> {
    // Fibonacci lattice
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let t = golden * i as f64;
            Point {
                pos: [
                    center[0] + radius * r * t.cos(),
                    center[1] + radius * r * t.sin(),
                    center[2] + radius * z,
                ],
                color,
            }
        })
        .collect()
}

fn main() -> pcqa_adapt::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/projection".into()));
    std::fs::create_dir_all(&out).map_err(|e| pcqa_adapt::Error::io(&out, e))?;

    let mut points = sphere([0.0, 0.0, 0.0], 1.0, [200, 60, 40], 6000);
    points.extend(sphere([1.2, 0.4, 0.3], 0.5, [40, 90, 220], 2000));
    let cloud = PointCloud::new(points)?;

    let bytes = write_ply(&cloud, true);
    let back = parse_ply(&bytes)?;
    assert_eq!(back, cloud);
    println!("{} points, {} bytes of binary PLY", cloud.len(), bytes.len());

    let cfg = ProjectionConfig {
        face_resolution: 128,
        ..Default::default()
    };
    let mv = project_cloud(&cloud, &cfg, "two_spheres")?;
    let path = out.join("two_spheres.ppm");
    write_ppm(&mv.pixels, &path)?;
    println!("{}x{} multi-view image -> {}", mv.pixels.width, mv.pixels.height, path.display());

    let bg = cfg.background.map(|c| c as f64 / 255.0);
    for face in FACE_ORDER {
        let view = mv.extract_face(face);
        let covered = (0..view.height)
            .flat_map(|r| (0..view.width).map(move |c| (r, c)))
            .filter(|&(r, c)| view.get(r, c) != bg)
            .count();
        let frac = covered as f64 / (view.height * view.width) as f64;
        println!("{:>3}: {:5.1}% covered", face.label(), 100.0 * frac);
    }
    Ok(())
}
