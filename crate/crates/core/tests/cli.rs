//! The `pcqa` binary end to end on tiny folders.

use std::path::Path;
use std::process::{Command, Output};

use pcqa_adapt::pcproj::{read_ppm, write_ply, write_ppm, Point, PointCloud, Raster};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pcqa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcqa")).args(args).output().expect("spawn pcqa")
}

fn sphere(n: usize, radius: f64, rng: &mut ChaCha8Rng) -> PointCloud {
    let pts = (0..n)
        .map(|_| {
            let (u, v): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(0.0..std::f64::consts::TAU));
            let s = (1.0 - u * u).sqrt();
            Point {
                pos: [radius * s * v.cos(), radius * s * v.sin(), radius * u],
                color: [rng.random(), rng.random(), rng.random()],
            }
        })
        .collect();
    PointCloud::new(pts).unwrap()
}

fn write_cloud(path: &Path, pc: &PointCloud, binary: bool) {
    std::fs::write(path, write_ply(pc, binary)).unwrap();
}

#[test]
fn project_writes_the_stitched_image() {
    let dir = tempfile::tempdir().unwrap();
    let ply = dir.path().join("ball.ply");
    write_cloud(&ply, &sphere(3000, 2.0, &mut ChaCha8Rng::seed_from_u64(1)), true);
    let out = dir.path().join("ball.ppm");
    let o = pcqa(&["project", "--input", ply.to_str().unwrap(), "--out", out.to_str().unwrap(), "--face-res", "32"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let img = read_ppm(&out).unwrap();
    assert_eq!((img.height, img.width), (64, 96));

    let crop = dir.path().join("crop.ppm");
    let args = ["project", "--input", ply.to_str().unwrap(), "--out", crop.to_str().unwrap(), "--face-res", "32", "--seed", "4", "--crop", "40"];
    assert!(pcqa(&args).status.success());
    let a = read_ppm(&crop).unwrap();
    assert_eq!((a.height, a.width), (40, 40));
    assert!(pcqa(&args).status.success());
    assert_eq!(read_ppm(&crop).unwrap(), a);
}

#[test]
fn errors_exit_nonzero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.ply");
    std::fs::write(&bad, "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nend_header\n1\n").unwrap();
    let out = dir.path().join("x.ppm");
    for args in [
        vec!["project", "--input", bad.to_str().unwrap(), "--out", out.to_str().unwrap()],
        vec!["project", "--input", "/no/such/file.ply", "--out", out.to_str().unwrap()],
        vec!["eval", "--checkpoint", "/no/such.ckpt", "--target", dir.path().to_str().unwrap()],
        vec!["train", "--config", "/no/such.toml"],
        vec!["ablate", "--suite", "bogus"],
    ] {
        let o = pcqa(&args);
        assert!(!o.status.success(), "{args:?} succeeded");
        assert!(!o.stderr.is_empty(), "{args:?} printed nothing");
    }
    assert!(!out.exists());
}

#[test]
fn train_then_eval_on_folders() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let (src, tgt) = (root.join("src"), root.join("tgt"));
    std::fs::create_dir_all(&src).unwrap();
    std::fs::create_dir_all(&tgt).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);

    // source: noisy grey images, score falls with the noise
    let mut sheet = String::from("file,score\n");
    for i in 0..12 {
        let level = i as f64 / 11.0;
        let mut img = Raster::filled(40, 48, [0.5; 3]);
        for r in 0..40 {
            for c in 0..48 {
                let n = (1.0 - level) * rng.random_range(-0.5..0.5);
                img.set(r, c, [0.5 + n, 0.4 + n, 0.6 + n]);
            }
        }
        let name = format!("img{i:02}.ppm");
        write_ppm(&img, src.join(&name)).unwrap();
        sheet.push_str(&format!("{name},{}\n", 1.0 + 4.0 * level));
    }
    std::fs::write(src.join("labels.csv"), sheet).unwrap();

    let mut tsheet = String::new();
    for i in 0..10 {
        let name = format!("pc{i}.ply");
        write_cloud(&tgt.join(&name), &sphere(400 + 100 * i, 1.0, &mut rng), i % 2 == 0);
        tsheet.push_str(&format!("{name},{}\n", i as f64));
    }
    std::fs::write(tgt.join("labels.csv"), tsheet).unwrap();

    let run = root.join("run.toml");
    std::fs::write(
        &run,
        "source_dir = \"src\"\ntarget_dir = \"tgt\"\nout_dir = \"out\"\n\
         batch_size = 4\ntotal_iters = 6\nwarmup_iters = 2\nlog_every = 2\n\
         widths = [2, 2, 2, 2]\nhead_hidden = 2\nface_resolution = 16\n\
         resize_short_side = 32\ncrop_side = 32\nlambda_r = 0.001\n",
    )
    .unwrap();
    let o = pcqa(&["train", "--config", run.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = root.join("out");
    for f in ["metrics.csv", "diagnostics.csv", "mix_events.csv", "config.toml", "checkpoint.ckpt", "embedding.svg"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 3, "{metrics}");
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.starts_with("plcc,srocc,krocc,rmse"), "{stdout}");

    let preds = root.join("preds.csv");
    let ck = out.join("checkpoint.ckpt");
    let o = pcqa(&["eval", "--checkpoint", ck.to_str().unwrap(), "--target", tgt.to_str().unwrap(), "--predictions", preds.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&preds).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("file,prediction,label"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 10);
    assert!(rows[0].starts_with("pc0.ply,"));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("plcc,srocc,krocc,rmse"));

    // too few targets for the plot: the run still succeeds
    let few = root.join("few");
    std::fs::create_dir_all(&few).unwrap();
    for i in 0..3 {
        std::fs::copy(tgt.join(format!("pc{i}.ply")), few.join(format!("pc{i}.ply"))).unwrap();
    }
    std::fs::write(&run, std::fs::read_to_string(&run).unwrap().replace("\"tgt\"", "\"few\"").replace("\"out\"", "\"out_few\"")).unwrap();
    let o = pcqa(&["train", "--config", run.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(root.join("out_few/checkpoint.ckpt").exists());
    assert!(!root.join("out_few/embedding.svg").exists());

    // unlabeled target: predictions go to stdout
    std::fs::remove_file(tgt.join("labels.csv")).unwrap();
    let o = pcqa(&["eval", "--checkpoint", ck.to_str().unwrap(), "--target", tgt.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.starts_with("file,prediction\n"), "{stdout}");
    assert_eq!(stdout.lines().count(), 11);
}
