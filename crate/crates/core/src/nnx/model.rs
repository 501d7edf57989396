use rand::Rng;

use crate::error::{Error, Result};
use crate::nnx::graph::{Graph, Var};
use crate::nnx::tensor::Tensor;

/// Number of backbone stages. Fixed: mixup routing addresses stages 1 to 4.
pub const NUM_STAGES: usize = 4;

/// Index into a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

/// Named, ordered collection of parameter tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Places every parameter on `g` as a differentiable leaf.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        Bound {
            vars: self.tensors.iter().map(|t| g.param(t.clone())).collect(),
        }
    }

    /// Like [`bind`](Self::bind) but as constants (inference).
    pub fn bind_frozen(&self, g: &mut Graph) -> Bound {
        Bound {
            vars: self.tensors.iter().map(|t| g.constant(t.clone())).collect(),
        }
    }
}

/// Graph handles for every entry of a [`ParamStore`], same order.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn from_vars(vars: Vec<Var>) -> Self {
        Bound { vars }
    }
}

fn he_uniform(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let limit = (6.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
    Tensor::new(shape, data).expect("init shape")
}

#[derive(Debug, Clone, Copy)]
struct Affine {
    w: ParamId,
    b: ParamId,
}

impl Affine {
    fn init(store: &mut ParamStore, name: &str, inp: usize, out: usize, rng: &mut impl Rng) -> Self {
        let w = store.push(format!("{name}.weight"), he_uniform(rng, &[out, inp], inp));
        let b = store.push(format!("{name}.bias"), Tensor::zeros(&[out]));
        Affine { w, b }
    }

    fn apply(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        g.linear(x, p.var(self.w), p.var(self.b))
    }
}

/// Shape hyperparameters of the staged network.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BackboneConfig {
    pub in_channels: usize,
    pub widths: [usize; NUM_STAGES],
    pub kernel: usize,
    pub head_hidden: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            in_channels: 3,
            widths: [16, 32, 64, 128],
            kernel: 3,
            head_hidden: 64,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.kernel % 2 == 0 || self.head_hidden == 0 {
            return Err(Error::Config(format!("bad backbone config {self:?}")));
        }
        if self.widths.iter().any(|&w| w == 0) || self.widths.windows(2).any(|p| p[1] < p[0]) {
            return Err(Error::Config(
                "stage widths must be positive and non-decreasing".into(),
            ));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.widths[NUM_STAGES - 1]
    }
}

/// Four conv(stride 2) + ReLU stages followed by global average pooling.
#[derive(Debug, Clone)]
pub struct StagedBackbone {
    stages: [Affine; NUM_STAGES],
    kernel: usize,
}

/// Every stage's output plus the pooled feature vector `[N, C4]`.
#[derive(Debug, Clone)]
pub struct StageOutputs {
    pub stages: [Var; NUM_STAGES],
    pub pooled: Var,
}

/// Feature transform injected after a stage, before the next one reads it.
pub trait Tap {
    /// `stage` is 1-based.
    fn apply(&mut self, g: &mut Graph, stage: usize, features: Var) -> Result<Var>;
}

/// Leaves every stage untouched.
pub struct IdentityTap;

impl Tap for IdentityTap {
    fn apply(&mut self, _g: &mut Graph, _stage: usize, features: Var) -> Result<Var> {
        Ok(features)
    }
}

impl<F> Tap for F
where
    F: FnMut(&mut Graph, usize, Var) -> Result<Var>,
{
    fn apply(&mut self, g: &mut Graph, stage: usize, features: Var) -> Result<Var> {
        self(g, stage, features)
    }
}

impl StagedBackbone {
    fn init(store: &mut ParamStore, cfg: &BackboneConfig, rng: &mut impl Rng) -> Self {
        let mut inp = cfg.in_channels;
        let k = cfg.kernel;
        let stages = std::array::from_fn(|s| {
            let out = cfg.widths[s];
            let fan_in = inp * k * k;
            let w = store.push(
                format!("backbone.stage{}.weight", s + 1),
                he_uniform(rng, &[out, inp, k, k], fan_in),
            );
            let b = store.push(format!("backbone.stage{}.bias", s + 1), Tensor::zeros(&[out]));
            inp = out;
            Affine { w, b }
        });
        StagedBackbone { stages, kernel: k }
    }

    /// Runs all stages on `x[N,C,H,W]`, letting `taps` rewrite each stage output.
    pub fn forward_stages(
        &self,
        g: &mut Graph,
        p: &Bound,
        x: Var,
        taps: &mut dyn Tap,
    ) -> Result<StageOutputs> {
        let s = g.value(x).shape();
        if s.len() != 4 || s[2] < 32 || s[3] < 32 {
            return Err(Error::Dimension(format!(
                "backbone input must be [N,C,H≥32,W≥32], got {:?}",
                s
            )));
        }
        let mut h = x;
        let mut outs = Vec::with_capacity(NUM_STAGES);
        let mut prev_hw = (s[2], s[3]);
        for (i, st) in self.stages.iter().enumerate() {
            let conv = g.conv2d(h, p.var(st.w), p.var(st.b), 2, self.kernel / 2)?;
            let act = g.relu(conv);
            let tapped = taps.apply(g, i + 1, act)?;
            let v = g.value(tapped);
            if !v.all_finite() {
                return Err(Error::NonFinite(format!("stage {} activations", i + 1)));
            }
            let hw = (v.shape()[2], v.shape()[3]);
            debug_assert!(hw.0 < prev_hw.0 && hw.1 < prev_hw.1, "stage sizes must shrink");
            prev_hw = hw;
            outs.push(tapped);
            h = tapped;
        }
        let pooled = g.global_avg_pool(h)?;
        Ok(StageOutputs {
            stages: [outs[0], outs[1], outs[2], outs[3]],
            pooled,
        })
    }

    /// Stage ids with their conv parameters, for tests that poke at weights.
    pub fn stage_params(&self, stage: usize) -> (ParamId, ParamId) {
        let a = self.stages[stage - 1];
        (a.w, a.b)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.stages.iter().flat_map(|a| [a.w, a.b]).collect()
    }
}

/// Two affine layers with a ReLU between and a sigmoid on top.
#[derive(Debug, Clone)]
pub struct PredictorHead {
    fc1: Affine,
    fc2: Affine,
}

impl PredictorHead {
    fn init(store: &mut ParamStore, dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        PredictorHead {
            fc1: Affine::init(store, "predictor.fc1", dim, hidden, rng),
            fc2: Affine::init(store, "predictor.fc2", hidden, 1, rng),
        }
    }

    /// Quality score in (0,1) for each row of `f[N,D]`; returns `[N,1]`.
    pub fn predict(&self, g: &mut Graph, p: &Bound, f: Var) -> Result<Var> {
        let h = self.fc1.apply(g, p, f)?;
        let h = g.relu(h);
        let z = self.fc2.apply(g, p, h)?;
        Ok(g.sigmoid(z))
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.fc1.w, self.fc1.b, self.fc2.w, self.fc2.b]
    }
}

/// Two affine+ReLU layers, then affine + sigmoid giving P(target domain).
#[derive(Debug, Clone)]
pub struct DiscriminatorHead {
    fc1: Affine,
    fc2: Affine,
    fc3: Affine,
}

impl DiscriminatorHead {
    fn init(store: &mut ParamStore, dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        DiscriminatorHead {
            fc1: Affine::init(store, "discriminator.fc1", dim, hidden, rng),
            fc2: Affine::init(store, "discriminator.fc2", hidden, hidden, rng),
            fc3: Affine::init(store, "discriminator.fc3", hidden, 1, rng),
        }
    }

    pub fn discriminate(&self, g: &mut Graph, p: &Bound, f: Var) -> Result<Var> {
        let z = self.logits(g, p, f)?;
        Ok(g.sigmoid(z))
    }

    /// Pre-sigmoid output `[N,1]`.
    pub fn logits(&self, g: &mut Graph, p: &Bound, f: Var) -> Result<Var> {
        let h = self.fc1.apply(g, p, f)?;
        let h = g.relu(h);
        let h = self.fc2.apply(g, p, h)?;
        let h = g.relu(h);
        self.fc3.apply(g, p, h)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![
            self.fc1.w, self.fc1.b, self.fc2.w, self.fc2.b, self.fc3.w, self.fc3.b,
        ]
    }
}

/// Backbone, predictor and discriminator sharing one parameter store.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: BackboneConfig,
    pub params: ParamStore,
    pub backbone: StagedBackbone,
    pub predictor: PredictorHead,
    pub discriminator: DiscriminatorHead,
}

impl Model {
    /// He-uniform weights, zero biases.
    pub fn new(config: BackboneConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let backbone = StagedBackbone::init(&mut params, &config, rng);
        let dim = config.feature_dim();
        let predictor = PredictorHead::init(&mut params, dim, config.head_hidden, rng);
        let discriminator = DiscriminatorHead::init(&mut params, dim, config.head_hidden, rng);
        Ok(Model {
            config,
            params,
            backbone,
            predictor,
            discriminator,
        })
    }

    /// Replaces the parameter values, keeping the layout. Shapes must match.
    pub fn load_params(&mut self, params: ParamStore) -> Result<()> {
        if params.names() != self.params.names()
            || params
                .tensors()
                .iter()
                .zip(self.params.tensors())
                .any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::Checkpoint(
                "parameter layout does not match the model".into(),
            ));
        }
        self.params = params;
        Ok(())
    }

    /// Pooled features for a batch of images, no gradient tracking.
    pub fn features(&self, images: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let x = g.constant(images.clone());
        let out = self.backbone.forward_stages(&mut g, &p, x, &mut IdentityTap)?;
        Ok(g.value(out.pooled).clone())
    }

    /// Quality predictions in (0,1) for pooled feature rows `[N,D]`.
    pub fn predict_features(&self, features: &Tensor) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let f = g.constant(features.clone());
        let y = self.predictor.predict(&mut g, &p, f)?;
        Ok(g.value(y).data().to_vec())
    }

    /// Domain probabilities for pooled feature rows.
    pub fn discriminate_features(&self, features: &Tensor) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let f = g.constant(features.clone());
        let y = self.discriminator.discriminate(&mut g, &p, f)?;
        Ok(g.value(y).data().to_vec())
    }

    /// End-to-end quality predictions for images, in batches of `chunk`.
    pub fn predict_images(&self, images: &Tensor, chunk: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(images.rows());
        let idx: Vec<usize> = (0..images.rows()).collect();
        for part in idx.chunks(chunk.max(1)) {
            let f = self.features(&images.gather_rows(part))?;
            out.extend(self.predict_features(&f)?);
        }
        Ok(out)
    }
}
