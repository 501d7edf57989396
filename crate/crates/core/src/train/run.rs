use std::io::Write;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::data::{Dataset, LabelScaler};
use super::step::{clip_global_norm, composite_loss, phase, LossContext, Phase, Sgd, StepBatch};
use crate::error::{Error, Result};
use crate::eval::metrics::{self, MetricReport};
use crate::mixup::{MixEvent, Stratifier};
use crate::nnx::{Checkpoint, Graph, Model, ParamStore, Tensor};
use crate::pcproj::CropMode;

/// Loss sums since the last log row.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossWindow {
    pub l_p: f64,
    pub l_d: f64,
    pub l_r: f64,
    pub count: usize,
    pub count_r: usize,
}

impl LossWindow {
    fn means(&self) -> (f64, f64, Option<f64>) {
        let n = self.count.max(1) as f64;
        let l_r = (self.count_r > 0).then(|| self.l_r / self.count_r as f64);
        (self.l_p / n, self.l_d / n, l_r)
    }
}

/// Everything needed to continue training bit-exactly.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub config: TrainConfig,
    pub model: Model,
    pub velocity: Vec<Tensor>,
    /// Completed iterations.
    pub iteration: usize,
    pub rng: ChaCha8Rng,
    pub stratifier: Stratifier,
    pub source_scaler: LabelScaler,
    pub window: LossWindow,
    pub joint_iters: usize,
    pub mixed_iters: usize,
}

#[derive(Serialize, Deserialize)]
struct StateMeta {
    kind: String,
    iteration: usize,
    joint_iters: usize,
    mixed_iters: usize,
    window_count: usize,
    window_count_r: usize,
    in_channels: usize,
    rng_seed: String,
    rng_stream: String,
    rng_word_pos: String,
    config: TrainConfig,
}

const STATE_KIND: &str = "train-state";
const PARAM_PREFIX: &str = "param.";
const VELOCITY_PREFIX: &str = "velocity.";
const SCALARS: &str = "state.scalars";

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Result<[u8; 32]> {
    let bad = || Error::Checkpoint("bad rng seed".into());
    if s.len() != 64 {
        return Err(bad());
    }
    let mut out = [0u8; 32];
    for (i, o) in out.iter_mut().enumerate() {
        *o = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
    }
    Ok(out)
}

impl TrainState {
    /// Fresh state: the seeded generator first initializes the weights, then
    /// drives every later draw.
    pub fn init(cfg: &TrainConfig, in_channels: usize, source_labels: &[f64]) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let model = Model::new(cfg.backbone(in_channels), &mut rng)?;
        let source_scaler = LabelScaler::fit(source_labels)?;
        let normalized: Vec<f64> = source_labels.iter().map(|&y| source_scaler.normalize(y)).collect();
        let stratifier = Stratifier::fit(&normalized)?;
        let velocity = model.params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Ok(TrainState {
            config: cfg.clone(),
            model,
            velocity,
            iteration: 0,
            rng,
            stratifier,
            source_scaler,
            window: LossWindow::default(),
            joint_iters: 0,
            mixed_iters: 0,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = StateMeta {
            kind: STATE_KIND.into(),
            iteration: self.iteration,
            joint_iters: self.joint_iters,
            mixed_iters: self.mixed_iters,
            window_count: self.window.count,
            window_count_r: self.window.count_r,
            in_channels: self.model.config.in_channels,
            rng_seed: hex(&self.rng.get_seed()),
            rng_stream: self.rng.get_stream().to_string(),
            rng_word_pos: self.rng.get_word_pos().to_string(),
            config: self.config.clone(),
        };
        let mut tensors = ParamStore::new();
        for (name, t) in self.model.params.iter() {
            tensors.push(format!("{PARAM_PREFIX}{name}"), t.clone());
        }
        for (name, v) in self.model.params.names().iter().zip(&self.velocity) {
            tensors.push(format!("{VELOCITY_PREFIX}{name}"), v.clone());
        }
        tensors.push(
            SCALARS,
            Tensor::from_vec(vec![
                self.stratifier.q33,
                self.stratifier.q67,
                self.source_scaler.min,
                self.source_scaler.max,
                self.window.l_p,
                self.window.l_d,
                self.window.l_r,
            ]),
        );
        Checkpoint {
            metadata: toml::to_string(&meta).expect("state metadata serializes"),
            tensors,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta: StateMeta =
            toml::from_str(&ck.metadata).map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
        if meta.kind != STATE_KIND {
            return Err(Error::Checkpoint(format!("unexpected kind {:?}", meta.kind)));
        }
        meta.config.validate()?;
        let mut rng = ChaCha8Rng::from_seed(unhex(&meta.rng_seed)?);
        let parse_err = |_| Error::Checkpoint("bad rng position".into());
        rng.set_stream(meta.rng_stream.parse::<u64>().map_err(parse_err)?);
        rng.set_word_pos(meta.rng_word_pos.parse::<u128>().map_err(parse_err)?);

        // layout comes from a throwaway init; values are replaced below
        let mut init_rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = Model::new(meta.config.backbone(meta.in_channels), &mut init_rng)?;
        let mut params = ParamStore::new();
        let mut velocity = Vec::new();
        let mut scalars = None;
        for (name, t) in ck.tensors.iter() {
            if let Some(n) = name.strip_prefix(PARAM_PREFIX) {
                params.push(n, t.clone());
            } else if name.starts_with(VELOCITY_PREFIX) {
                velocity.push(t.clone());
            } else if name == SCALARS {
                scalars = Some(t.data().to_vec());
            }
        }
        model.load_params(params)?;
        if velocity.len() != model.params.len() {
            return Err(Error::Checkpoint("momentum buffers missing".into()));
        }
        let s = scalars
            .filter(|s| s.len() == 7)
            .ok_or_else(|| Error::Checkpoint("state scalars missing".into()))?;
        Ok(TrainState {
            config: meta.config,
            model,
            velocity,
            iteration: meta.iteration,
            rng,
            stratifier: Stratifier { q33: s[0], q67: s[1] },
            source_scaler: LabelScaler { min: s[2], max: s[3] },
            window: LossWindow {
                l_p: s[4],
                l_d: s[5],
                l_r: s[6],
                count: meta.window_count,
                count_r: meta.window_count_r,
            },
            joint_iters: meta.joint_iters,
            mixed_iters: meta.mixed_iters,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    /// De-normalized quality predictions for a test-mode batch.
    pub fn predict(&self, images: &Tensor) -> Result<Vec<f64>> {
        Ok(self
            .model
            .predict_images(images, self.config.eval_chunk)?
            .into_iter()
            .map(|y| self.source_scaler.denormalize(y))
            .collect())
    }
}

/// One row of the metric log.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub iter: usize,
    pub phase: Phase,
    pub l_p: f64,
    pub l_d: f64,
    pub l_r: Option<f64>,
    pub metrics: Option<MetricReport>,
}

/// Alignment diagnostics of the step that completed a logged iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticRow {
    pub iter: usize,
    pub l_r: Option<f64>,
    pub l_d: f64,
    pub mean_w: Option<f64>,
    pub nonzero_w: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub metrics: Vec<MetricRow>,
    pub diagnostics: Vec<DiagnosticRow>,
    /// `(iteration, event)`; target anchors and partners are offset by the
    /// source batch size, matching row order in `[source; target]`.
    pub mix_events: Vec<(usize, MixEvent)>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Config(format!("csv: {e}"))
}

impl TrainLog {
    pub fn write_metrics<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iter", "phase", "L_P", "L_D", "L_R", "plcc", "srocc", "krocc", "rmse"])
            .map_err(csv_err)?;
        for r in &self.metrics {
            let m = r.metrics;
            w.write_record([
                r.iter.to_string(),
                r.phase.as_str().to_string(),
                r.l_p.to_string(),
                r.l_d.to_string(),
                opt(r.l_r),
                opt(m.map(|m| m.plcc)),
                opt(m.map(|m| m.srocc)),
                opt(m.map(|m| m.krocc)),
                opt(m.map(|m| m.rmse)),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Config(format!("csv: {e}")))
    }

    pub fn write_diagnostics<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iter", "L_R", "L_D", "mean_W", "nonzero_W"])
            .map_err(csv_err)?;
        for r in &self.diagnostics {
            w.write_record([
                r.iter.to_string(),
                opt(r.l_r),
                r.l_d.to_string(),
                opt(r.mean_w),
                opt(r.nonzero_w),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Config(format!("csv: {e}")))
    }

    /// `iteration, anchor, partner, lambda, stage, y_mix`; `y_mix` is empty
    /// for target events.
    pub fn write_mix_events<W: Write>(&self, out: W) -> Result<()> {
        crate::mixup::write_mix_events(out, &self.mix_events)
    }

    pub fn metrics_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_metrics(&mut buf).expect("in-memory csv");
        String::from_utf8(buf).expect("utf8 csv")
    }
}

/// Evaluates de-normalized predictions against raw labels. Correlations
/// that are undefined (constant predictions) come out as NaN.
pub fn evaluate_state(state: &TrainState, ds: &Dataset) -> Result<Option<MetricReport>> {
    let Some(labels) = ds.labels() else {
        return Ok(None);
    };
    let scaler = LabelScaler::fit(labels)?;
    let raw = state.model.predict_images(&ds.eval_batch()?, state.config.eval_chunk)?;
    let pred: Vec<f64> = raw.iter().map(|&y| scaler.denormalize(y)).collect();
    match metrics::evaluate(&pred, labels) {
        Ok(r) => Ok(Some(r)),
        Err(Error::UndefinedCorrelation(_)) => Ok(Some(MetricReport {
            plcc: f64::NAN,
            srocc: f64::NAN,
            krocc: f64::NAN,
            rmse: metrics::rmse(&pred, labels)?,
        })),
        Err(e) => Err(e),
    }
}

/// Drives [`TrainState`] through the schedule over fixed datasets.
pub struct Trainer<'a> {
    state: TrainState,
    source: &'a Dataset,
    target: &'a Dataset,
    eval: Option<&'a Dataset>,
    source_labels: Vec<f64>,
    pub log: TrainLog,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub log: TrainLog,
    pub final_metrics: Option<MetricReport>,
}

impl<'a> Trainer<'a> {
    /// `eval` carries held-out target labels used only for the metric log.
    pub fn new(
        cfg: &TrainConfig,
        source: &'a Dataset,
        target: &'a Dataset,
        eval: Option<&'a Dataset>,
    ) -> Result<Self> {
        let labels = source
            .labels()
            .ok_or_else(|| Error::Config("source dataset needs labels".into()))?;
        let state = TrainState::init(cfg, source.channels(), labels)?;
        Self::resume(state, source, target, eval)
    }

    pub fn resume(
        state: TrainState,
        source: &'a Dataset,
        target: &'a Dataset,
        eval: Option<&'a Dataset>,
    ) -> Result<Self> {
        let labels = source
            .labels()
            .ok_or_else(|| Error::Config("source dataset needs labels".into()))?;
        if source.len() < 2 || target.len() < 2 {
            return Err(Error::Config(
                "source and target need at least two samples each".into(),
            ));
        }
        if source.channels() != state.model.config.in_channels
            || target.channels() != state.model.config.in_channels
        {
            return Err(Error::Dimension("dataset channels vs model".into()));
        }
        let source_labels = labels.iter().map(|&y| state.source_scaler.normalize(y)).collect();
        Ok(Trainer {
            state,
            source,
            target,
            eval,
            source_labels,
            log: TrainLog::default(),
        })
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn done(&self) -> bool {
        self.state.iteration >= self.state.config.total_iters
    }

    /// One optimization step.
    pub fn step(&mut self) -> Result<()> {
        if self.done() {
            return Ok(());
        }
        let st = &mut self.state;
        let cfg = st.config.clone();
        let it = st.iteration;
        let ph = phase(it, &cfg);

        let si = sample(&mut st.rng, self.source.len(), cfg.batch_size.min(self.source.len())).into_vec();
        let source = self.source.batch(&si, CropMode::Train, &mut st.rng)?;
        let labels: Vec<f64> = si.iter().map(|&i| self.source_labels[i]).collect();
        let ti = sample(&mut st.rng, self.target.len(), cfg.batch_size.min(self.target.len())).into_vec();
        let target = self.target.batch(&ti, CropMode::Train, &mut st.rng)?;
        let batch = StepBatch {
            source,
            labels,
            target,
        };

        // no mixing during warm-up: the coin is only drawn in the joint phase
        let mixed = ph == Phase::Joint && {
            st.joint_iters += 1;
            let u: f64 = st.rng.random();
            u > 1.0 - cfg.mix_probability
        };
        if mixed {
            st.mixed_iters += 1;
        }

        let mix = cfg.mix_config()?;
        let mut g = Graph::new();
        let p = st.model.params.bind(&mut g);
        let ctx = LossContext {
            model: &st.model,
            stratifier: &st.stratifier,
            cfg: &cfg,
            mix: &mix,
            phase: ph,
            grl_scale: cfg.grl_at(it),
        };
        let terms = composite_loss(&mut g, &p, &ctx, &batch, mixed, None, &mut st.rng)?;
        let grads = g.backward(terms.total)?;
        let grads: Vec<Tensor> = p
            .vars()
            .iter()
            .zip(st.model.params.tensors())
            .map(|(&v, t)| grads.wrt(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();
        let grads = clip_global_norm(grads, cfg.grad_clip);
        Sgd::from_config(&cfg).step(st.model.params.tensors_mut(), &grads, &mut st.velocity)?;

        st.window.l_p += terms.l_p;
        st.window.l_d += terms.l_d;
        st.window.count += 1;
        if let Some(l) = terms.l_r {
            st.window.l_r += l;
            st.window.count_r += 1;
        }
        st.iteration += 1;
        let done_iter = st.iteration;
        let offset = batch.labels.len();
        self.log
            .mix_events
            .extend(terms.source_events.into_iter().map(|e| (it, e)));
        self.log.mix_events.extend(terms.target_events.into_iter().map(|mut e| {
            e.anchor += offset;
            e.partner += offset;
            (it, e)
        }));

        if done_iter % cfg.log_every == 0 || done_iter == cfg.total_iters {
            let (l_p, l_d, l_r) = self.state.window.means();
            let metrics = match self.eval {
                Some(ds) => evaluate_state(&self.state, ds)?,
                None => None,
            };
            self.log.metrics.push(MetricRow {
                iter: done_iter,
                phase: ph,
                l_p,
                l_d,
                l_r,
                metrics,
            });
            let d = terms.diagnostics;
            self.log.diagnostics.push(DiagnosticRow {
                iter: done_iter,
                l_r: terms.l_r,
                l_d: terms.l_d,
                mean_w: d.map(|d| d.mean_w),
                nonzero_w: d.map(|d| d.nonzero_w),
            });
            self.state.window = LossWindow::default();
        }
        Ok(())
    }

    /// Steps until `iteration == min(iter, total_iters)`.
    pub fn run_until(&mut self, iter: usize) -> Result<()> {
        while self.state.iteration < iter.min(self.state.config.total_iters) {
            self.step()?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<TrainOutcome> {
        let total = self.state.config.total_iters;
        self.run_until(total)?;
        let final_metrics = match self.eval {
            Some(ds) => evaluate_state(&self.state, ds)?,
            None => None,
        };
        Ok(TrainOutcome {
            state: self.state,
            log: self.log,
            final_metrics,
        })
    }
}

/// Full schedule from a fresh state.
pub fn train_run(
    cfg: &TrainConfig,
    source: &Dataset,
    target: &Dataset,
    eval: Option<&Dataset>,
) -> Result<TrainOutcome> {
    Trainer::new(cfg, source, target, eval)?.finish()
}
