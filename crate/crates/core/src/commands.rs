//! File-level entry points behind the `pcqa` binary: run directories,
//! image/cloud folders and label sheets.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::eval::ablation::{benchmark_config, run_ablation, AblationTable, Suite, HELD_OUT_FRACTION};
use crate::eval::embedding::{emit_embedding_plot, MIN_PER_DOMAIN};
use crate::eval::metrics::{self, MetricReport};
use crate::eval::synthetic::{make_synthetic_domains, SyntheticDomainSpec};
use crate::pcproj::{
    crop_pipeline, load_ply, project_cloud, read_ppm, resize_short_side, write_ppm, CropMode, ProjectionConfig,
    Raster,
};
use crate::nnx::Tensor;
use crate::train::{train_run, Dataset, LabelScaler, TrainConfig, TrainOutcome, TrainState};

/// Name of the label sheet inside a data folder: `file,score` rows.
pub const LABELS_FILE: &str = "labels.csv";

/// Where a training run gets its data.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// The shifted synthetic benchmark generated from `seed`; a quarter of
    /// the target is held out for the metric log.
    Synthetic { seed: u64 },
    /// Labeled source images and a target folder whose optional label sheet
    /// is only used for the metric log.
    Folders { source: PathBuf, target: PathBuf },
}

/// A parsed run file: training fields plus `data`, `source_dir`,
/// `target_dir`, `data_seed` and `out_dir`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainJob {
    pub config: TrainConfig,
    pub data: DataSource,
    pub out_dir: PathBuf,
}

impl TrainJob {
    /// Relative folder paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e| Error::Config(format!("run file: {e}")))?;
        let mut take_str = |k: &str| -> Result<Option<String>> {
            match table.remove(k) {
                None => Ok(None),
                Some(toml::Value::String(s)) => Ok(Some(s)),
                Some(v) => Err(Error::Config(format!("{k} must be a string, got {v}"))),
            }
        };
        let data = take_str("data")?;
        let source_dir = take_str("source_dir")?;
        let target_dir = take_str("target_dir")?;
        let out_dir = take_str("out_dir")?.unwrap_or_else(|| "run".into());
        let data_seed = match table.remove("data_seed") {
            None => None,
            Some(toml::Value::Integer(i)) if i >= 0 => Some(i as u64),
            Some(v) => return Err(Error::Config(format!("data_seed must be a non-negative integer, got {v}"))),
        };
        let config = TrainConfig::from_toml(&toml::to_string(&table).map_err(|e| Error::Config(e.to_string()))?)?;
        let data = match (data.as_deref(), source_dir, target_dir) {
            (Some("synthetic"), None, None) | (None, None, None) => DataSource::Synthetic {
                seed: data_seed.unwrap_or(config.seed),
            },
            (Some("folders") | None, Some(s), Some(t)) => DataSource::Folders {
                source: base.join(s),
                target: base.join(t),
            },
            (d, s, t) => {
                return Err(Error::Config(format!(
                    "data = {d:?} with source_dir {s:?} and target_dir {t:?}: use data = \"synthetic\" or both folders"
                )))
            }
        };
        config.validate()?;
        Ok(TrainJob {
            config,
            data,
            out_dir: base.join(out_dir),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }
}

/// Reads a `file,score` label sheet (header optional).
pub fn read_labels(path: impl AsRef<Path>) -> Result<HashMap<String, f64>> {
    let path = path.as_ref();
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut out = HashMap::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if rec.len() < 2 {
            return Err(Error::Config(format!("{} row {}: expected file,score", path.display(), i + 1)));
        }
        match rec[1].parse::<f64>() {
            Ok(v) => {
                out.insert(rec[0].to_string(), v);
            }
            Err(_) if i == 0 => {}
            Err(_) => {
                return Err(Error::Config(format!(
                    "{} row {}: bad score {:?}",
                    path.display(),
                    i + 1,
                    &rec[1]
                )))
            }
        }
    }
    Ok(out)
}

/// Loads one image (`.ppm`) or point cloud (`.ply`, rendered to the
/// six-face layout) as a raster.
pub fn load_raster(path: &Path, projection: &ProjectionConfig) -> Result<Raster> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("ppm") => read_ppm(path),
        Some("ply") => {
            let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("cloud");
            Ok(project_cloud(&load_ply(path)?, projection, id)?.pixels)
        }
        _ => Err(Error::UnsupportedFormat(format!("{}: expected .ppm or .ply", path.display()))),
    }
}

/// All `.ppm`/`.ply` files of a folder, sorted by name.
pub fn list_inputs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
                Some("ppm" | "ply")
            )
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Config(format!("{}: no .ppm or .ply files", dir.display())));
    }
    Ok(files)
}

/// A folder as a dataset plus its file names. Every raster is resized so
/// its short side is `resize_short_side`; crops are `crop_side`. Labels
/// come from the folder's label sheet; with `require_labels` every file
/// must have one.
pub fn load_folder(dir: &Path, cfg: &TrainConfig, require_labels: bool) -> Result<(Dataset, Vec<String>)> {
    let projection = ProjectionConfig {
        face_resolution: cfg.face_resolution,
        ..Default::default()
    };
    let sheet = dir.join(LABELS_FILE);
    let labels = if sheet.exists() {
        Some(read_labels(&sheet)?)
    } else if require_labels {
        return Err(Error::Config(format!("{}: missing {LABELS_FILE}", dir.display())));
    } else {
        None
    };
    let files = list_inputs(dir)?;
    let mut names = Vec::with_capacity(files.len());
    let mut rasters = Vec::with_capacity(files.len());
    let mut ys = Vec::with_capacity(files.len());
    for f in &files {
        let name = f.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        if let Some(map) = &labels {
            match map.get(&name) {
                Some(&y) => ys.push(y),
                None if require_labels => {
                    return Err(Error::Config(format!("{}: no label for {name}", dir.display())))
                }
                None => {}
            }
        }
        rasters.push(resize_short_side(&load_raster(f, &projection)?, cfg.resize_short_side)?);
        names.push(name);
    }
    // a partial sheet is ignored unless labels are required
    let ys = (labels.is_some() && ys.len() == files.len()).then_some(ys);
    Ok((Dataset::from_rasters(rasters, cfg.crop_side, ys)?, names))
}

fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|e| Error::io(path, e))
}

/// Rows plotted per domain in `embedding.svg`.
pub const PLOT_ROWS: usize = 200;

/// Pooled features `[N,D]` of the first `max_rows` samples.
pub fn pooled_features(state: &TrainState, ds: &Dataset, max_rows: usize) -> Result<Tensor> {
    let n = ds.len().min(max_rows);
    let idx: Vec<usize> = (0..n).collect();
    let images = ds.subset(&idx).eval_batch()?;
    let mut rows = Vec::with_capacity(n);
    for chunk in images.unstack().chunks(state.config.eval_chunk.max(1)) {
        rows.extend(state.model.features(&Tensor::stack(chunk)?)?.unstack());
    }
    Tensor::stack(&rows)
}

/// Source and target features of the trained model in one PCA frame;
/// target points are colored by pseudo-label.
pub fn write_embedding_plot(state: &TrainState, source: &Dataset, target: &Dataset, path: &Path) -> Result<()> {
    let fs_ = pooled_features(state, source, PLOT_ROWS)?;
    let ft = pooled_features(state, target, PLOT_ROWS)?;
    let ys: Vec<f64> = match source.labels() {
        Some(l) => l[..fs_.rows()].iter().map(|&y| state.source_scaler.normalize(y)).collect(),
        None => vec![0.5; fs_.rows()],
    };
    let yt = state.model.predict_features(&ft)?;
    emit_embedding_plot(&fs_, &ys, &ft, &yt, path)?;
    Ok(())
}

/// Trains and writes `metrics.csv`, `diagnostics.csv`, `mix_events.csv`,
/// `config.toml`, `checkpoint.ckpt` and `embedding.svg` into the job's
/// output folder. The plot is skipped when either domain has fewer than
/// [`MIN_PER_DOMAIN`] samples.
pub fn run_train(job: &TrainJob) -> Result<TrainOutcome> {
    let out = &job.out_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let (source, target, held_out) = match &job.data {
        DataSource::Synthetic { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let d = make_synthetic_domains(&SyntheticDomainSpec::benchmark(), &mut rng)?;
            let (target, held_out) = d.split_target(HELD_OUT_FRACTION, &mut rng);
            (d.source, target, Some(held_out))
        }
        DataSource::Folders { source, target } => {
            let (src, _) = load_folder(source, &job.config, true)?;
            let (tgt, _) = load_folder(target, &job.config, false)?;
            let eval = tgt.labels().is_some().then(|| tgt.clone());
            (src, tgt, eval)
        }
    };
    let outcome = train_run(&job.config, &source, &target, held_out.as_ref())?;
    if source.len().min(target.len()) >= MIN_PER_DOMAIN {
        write_embedding_plot(&outcome.state, &source, &target, &out.join("embedding.svg"))?;
    }
    outcome.log.write_metrics(create(&out.join("metrics.csv"))?)?;
    outcome.log.write_diagnostics(create(&out.join("diagnostics.csv"))?)?;
    outcome.log.write_mix_events(create(&out.join("mix_events.csv"))?)?;
    let cfg_path = out.join("config.toml");
    fs::write(&cfg_path, job.config.to_toml()).map_err(|e| Error::io(&cfg_path, e))?;
    outcome.state.save(out.join("checkpoint.ckpt"))?;
    Ok(outcome)
}

/// Per-file predictions on the original label scale, plus metrics when the
/// folder has a complete label sheet.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutput {
    pub files: Vec<String>,
    pub predictions: Vec<f64>,
    pub labels: Option<Vec<f64>>,
    pub metrics: Option<MetricReport>,
}

impl EvalOutput {
    /// `file,prediction[,label]` rows.
    pub fn write_predictions<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::Config(format!("csv: {e}"));
        let mut header = vec!["file", "prediction"];
        if self.labels.is_some() {
            header.push("label");
        }
        w.write_record(&header).map_err(err)?;
        for (i, (f, p)) in self.files.iter().zip(&self.predictions).enumerate() {
            let mut row = vec![f.clone(), p.to_string()];
            if let Some(l) = &self.labels {
                row.push(l[i].to_string());
            }
            w.write_record(&row).map_err(err)?;
        }
        w.flush().map_err(|e| Error::Config(format!("csv: {e}")))
    }
}

/// `plcc,srocc,krocc,rmse` header and one row.
pub fn write_metric_report<W: Write>(m: &MetricReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Config(format!("csv: {e}"));
    w.write_record(["plcc", "srocc", "krocc", "rmse"]).map_err(err)?;
    w.write_record([m.plcc, m.srocc, m.krocc, m.rmse].map(|v| v.to_string()))
        .map_err(err)?;
    w.flush().map_err(|e| Error::Config(format!("csv: {e}")))
}

/// Scores a folder with a saved model. Predictions in `(0,1)` are mapped
/// back through the folder's label range when it is labeled, otherwise
/// through the source label range stored in the checkpoint.
pub fn run_eval(checkpoint: impl AsRef<Path>, target: impl AsRef<Path>) -> Result<EvalOutput> {
    let state = TrainState::load(checkpoint)?;
    let (ds, files) = load_folder(target.as_ref(), &state.config, false)?;
    let raw = state.model.predict_images(&ds.eval_batch()?, state.config.eval_chunk)?;
    let labels = ds.labels().map(<[f64]>::to_vec);
    let scaler = match &labels {
        Some(l) => LabelScaler::fit(l)?,
        None => state.source_scaler,
    };
    let predictions: Vec<f64> = raw.iter().map(|&y| scaler.denormalize(y)).collect();
    let metrics = match &labels {
        Some(l) => Some(metrics::evaluate(&predictions, l)?),
        None => None,
    };
    Ok(EvalOutput {
        files,
        predictions,
        labels,
        metrics,
    })
}

/// Runs an ablation suite on the synthetic benchmark with seeds `0..seeds`.
pub fn run_ablate(suite: Suite, seeds: usize, mut progress: impl FnMut(&str)) -> Result<AblationTable> {
    if seeds == 0 {
        return Err(Error::Config("--seeds must be at least 1".into()));
    }
    let seeds: Vec<u64> = (0..seeds as u64).collect();
    run_ablation(
        &suite.variants(),
        &benchmark_config(),
        &SyntheticDomainSpec::benchmark(),
        &seeds,
        |v, s, r| progress(&format!("{v} seed {s}: srocc {:.4}", r.srocc)),
    )
}

/// Renders a cloud to the stitched six-face image and writes it as PPM.
/// With `crop`, a training-mode crop of that side drawn from `seed` is
/// written instead.
pub fn run_project(
    input: impl AsRef<Path>,
    out: impl AsRef<Path>,
    face_resolution: usize,
    seed: u64,
    crop: Option<usize>,
) -> Result<Raster> {
    let input = input.as_ref();
    let cfg = ProjectionConfig {
        face_resolution,
        ..Default::default()
    };
    let id = input.file_stem().and_then(|s| s.to_str()).unwrap_or("cloud");
    let img = project_cloud(&load_ply(input)?, &cfg, id)?.pixels;
    let img = match crop {
        None => img,
        Some(side) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (_, c) = crop_pipeline(&img, CropMode::Train, side, &mut rng)?;
            let w = img.window(c.top, c.left, side, side)?;
            if c.flipped {
                w.flip_horizontal()
            } else {
                w
            }
        }
    };
    write_ppm(&img, out)?;
    Ok(img)
}
