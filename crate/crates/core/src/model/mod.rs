//! The forecasting network and its ablation variants.
//!
//! Every variant is assembled from the same three parts:
//!
//! * an encoder that turns each of the `L` input grids into a feature vector,
//!   either through per-position [`ConvBlock`]s (one block per position, or
//!   one shared block) or by plain flattening;
//! * an optional LSTM that folds the `L` feature vectors into one;
//! * a prediction head: a static fully connected layer, the hour-conditioned
//!   [`IntervalNet`] that generates the head's weights, or a fusion head that
//!   concatenates an hour feature with the temporal summary.

mod checkpoint;
mod interval;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{generate_hour_embeddings, MinMax};
use crate::error::{Error, Result};
use crate::nn::{
    init_tensor, ConvBlock, Forward, ForwardPass, Init, Linear, Lstm, Mode, ParamId, ParamStore,
    ResidualForm, Role,
};
use crate::tensor::{Scalar, Tensor, Var};

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, CHECKPOINT_MAGIC};
pub use interval::IntervalNet;

pub const HOURS_PER_DAY: usize = 24;

/// Network architecture selector; one entry per evaluated configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    /// Per-position conv blocks → LSTM → hour-generated prediction layer.
    #[serde(rename = "STDI")]
    Stdi,
    SpatialFC,
    TemporalFC,
    SpatialTemporalFC,
    SpatialDI,
    TemporalDI,
    #[serde(rename = "STDIFusion")]
    StdiFusion,
    UnifiedSpatial,
    #[serde(rename = "STDIEmbedding")]
    StdiEmbedding,
}

impl ModelKind {
    pub const ALL: [ModelKind; 9] = [
        ModelKind::Stdi,
        ModelKind::SpatialFC,
        ModelKind::TemporalFC,
        ModelKind::SpatialTemporalFC,
        ModelKind::SpatialDI,
        ModelKind::TemporalDI,
        ModelKind::StdiFusion,
        ModelKind::UnifiedSpatial,
        ModelKind::StdiEmbedding,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Stdi => "STDI",
            ModelKind::SpatialFC => "SpatialFC",
            ModelKind::TemporalFC => "TemporalFC",
            ModelKind::SpatialTemporalFC => "SpatialTemporalFC",
            ModelKind::SpatialDI => "SpatialDI",
            ModelKind::TemporalDI => "TemporalDI",
            ModelKind::StdiFusion => "STDIFusion",
            ModelKind::UnifiedSpatial => "UnifiedSpatial",
            ModelKind::StdiEmbedding => "STDIEmbedding",
        }
    }

    /// Human-readable label used in benchmark tables.
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Stdi => "STDI-Net",
            ModelKind::SpatialFC => "Spatial + FC",
            ModelKind::TemporalFC => "Temporal + FC",
            ModelKind::SpatialTemporalFC => "Spatial + Temporal + FC",
            ModelKind::SpatialDI => "Spatial + Dynamic Interval",
            ModelKind::TemporalDI => "Temporal + Dynamic Interval",
            ModelKind::StdiFusion => "STDI-Net-fusion",
            ModelKind::UnifiedSpatial => "Unified-Spatial Net",
            ModelKind::StdiEmbedding => "STDI-Net-embedding",
        }
    }

    fn uses_spatial(self) -> bool {
        !matches!(self, ModelKind::TemporalFC | ModelKind::TemporalDI)
    }

    fn uses_temporal(self) -> bool {
        !matches!(
            self,
            ModelKind::SpatialFC | ModelKind::SpatialDI | ModelKind::UnifiedSpatial
        )
    }

    fn uses_hours(self) -> bool {
        matches!(
            self,
            ModelKind::Stdi
                | ModelKind::SpatialDI
                | ModelKind::TemporalDI
                | ModelKind::StdiFusion
                | ModelKind::StdiEmbedding
        )
    }

    pub fn valid_names() -> String {
        Self::ALL.map(|k| k.name()).join(", ")
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = |x: &str| x.replace(['-', '_', ' '], "").to_ascii_lowercase();
        let wanted = norm(s);
        Self::ALL
            .into_iter()
            .find(|k| norm(k.name()) == wanted)
            .ok_or_else(|| {
                Error::Usage(format!(
                    "unknown model kind '{s}'; valid kinds: {}",
                    Self::valid_names()
                ))
            })
    }
}

/// Architecture hyper-parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dims {
    /// Grid rows `i`.
    pub rows: usize,
    /// Grid columns `j`.
    pub cols: usize,
    /// Input sequence length `L`.
    pub seq_len: usize,
    /// Conv filters per layer `c`.
    pub channels: usize,
    /// LSTM hidden size `d`.
    pub hidden: usize,
    /// Rank `a` of the generated prediction weights.
    pub rank: usize,
    /// Hour-embedding width `h`.
    pub embed_dim: usize,
    /// Hour feature width of the fusion variant.
    pub fusion_dim: usize,
    pub leaky_slope: f64,
    #[serde(default)]
    pub residual: ResidualForm,
}

impl Default for Dims {
    fn default() -> Self {
        Self {
            rows: 8,
            cols: 16,
            seq_len: 3,
            channels: 32,
            hidden: 1024,
            rank: 64,
            embed_dim: 50,
            fusion_dim: 128,
            leaky_slope: 0.01,
            residual: ResidualForm::FirstConvTap,
        }
    }
}

impl Dims {
    /// Smallest configuration used for gradient verification.
    pub fn toy() -> Self {
        Self {
            rows: 2,
            cols: 2,
            seq_len: 3,
            channels: 4,
            hidden: 8,
            rank: 4,
            embed_dim: 6,
            fusion_dim: 4,
            ..Self::default()
        }
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    /// Output width `k = 2·i·j`.
    pub fn outputs(&self) -> usize {
        2 * self.cells()
    }

    pub fn validate(&self) -> Result<()> {
        let named = [
            ("rows", self.rows),
            ("cols", self.cols),
            ("seq_len", self.seq_len),
            ("channels", self.channels),
            ("hidden", self.hidden),
            ("rank", self.rank),
            ("embed_dim", self.embed_dim),
            ("fusion_dim", self.fusion_dim),
        ];
        if let Some((name, _)) = named.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Usage(format!("dimension {name} must be positive")));
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope >= 0.0) {
            return Err(Error::Usage("leaky_slope must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// A network that maps input windows (and their hour labels) to demand grids.
pub trait Forecaster<T: Scalar> {
    fn name(&self) -> String;
    fn store(&self) -> &ParamStore<T>;
    fn store_mut(&mut self) -> &mut ParamStore<T>;

    /// `inputs` is `B×L×2×i×j`, `hours` holds `B` hour-of-day labels; the
    /// pass output is `B×2×i×j`.
    fn forward(&mut self, inputs: &Tensor<T>, hours: &[usize], mode: Mode) -> Result<ForwardPass<T>>;

    fn predict(&mut self, inputs: &Tensor<T>, hours: &[usize]) -> Result<Tensor<T>> {
        Ok(self.forward(inputs, hours, Mode::Eval)?.output().clone())
    }

    /// `(L, rows, cols)` of the windows the model consumes.
    fn window_shape(&self) -> (usize, usize, usize);

    /// Value scaling applied to inputs and targets during training, if any.
    fn scaling(&self) -> Option<MinMax>;
    fn set_scaling(&mut self, scaling: Option<MinMax>);
}

#[derive(Clone, Debug)]
enum Encoder {
    Flatten,
    Conv { blocks: Vec<ConvBlock>, shared: bool },
}

#[derive(Clone, Debug)]
enum Head {
    Static(Linear),
    Interval(IntervalNet),
    Fusion { project: Linear, fc: Linear },
}

#[derive(Clone, Debug)]
struct Arch {
    encoder: Encoder,
    lstm: Option<Lstm>,
    table: Option<ParamId>,
    head: Head,
}

/// Structural summary of a built model.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Census {
    pub conv_blocks: usize,
    pub conv_params: usize,
    /// `(input width, hidden size)` of the LSTM, when present.
    pub lstm: Option<(usize, usize)>,
    /// `(a, d, k)` of the hour-conditioned head, when present.
    pub interval: Option<(usize, usize, usize)>,
    pub trainable: usize,
    pub frozen: usize,
}

pub struct StdiModel<T: Scalar> {
    kind: ModelKind,
    dims: Dims,
    store: ParamStore<T>,
    arch: Arch,
    scaling: Option<MinMax>,
}

/// Builds a model with a generated (seeded, unit-variance) hour embedding table.
pub fn build_model<T: Scalar>(kind: ModelKind, dims: &Dims, seed: u64) -> Result<StdiModel<T>> {
    let table = generate_hour_embeddings(dims.embed_dim, seed);
    build_model_with_embeddings(kind, dims, seed, &table)
}

/// Builds a model around a pre-built `24×h` hour embedding table.
///
/// The table is frozen for every kind except [`ModelKind::StdiEmbedding`],
/// which instead learns its own table from a standard-normal start.
pub fn build_model_with_embeddings<T: Scalar>(
    kind: ModelKind,
    dims: &Dims,
    seed: u64,
    embeddings: &Tensor<f32>,
) -> Result<StdiModel<T>> {
    dims.validate()?;
    if embeddings.shape() != [HOURS_PER_DAY, dims.embed_dim] {
        return Err(Error::shape(
            "build_model",
            format!(
                "embedding table {:?} is not {HOURS_PER_DAY}×{}",
                embeddings.shape(),
                dims.embed_dim
            ),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let (cells, steps, c) = (dims.cells(), dims.seq_len, dims.channels);

    let encoder = if kind.uses_spatial() {
        let shared = kind == ModelKind::UnifiedSpatial;
        let n = if shared { 1 } else { steps };
        let blocks = (0..n)
            .map(|l| ConvBlock::new(&mut store, &format!("spatial.block{l}"), c, dims.residual, &mut rng))
            .collect();
        Encoder::Conv { blocks, shared }
    } else {
        Encoder::Flatten
    };
    let step_width = match encoder {
        Encoder::Conv { .. } => c * cells,
        Encoder::Flatten => 2 * cells,
    };

    let lstm = kind
        .uses_temporal()
        .then(|| Lstm::new(&mut store, "temporal.lstm", step_width, dims.hidden, &mut rng));
    let summary = if lstm.is_some() { dims.hidden } else { steps * step_width };

    let table = kind.uses_hours().then(|| {
        if kind == ModelKind::StdiEmbedding {
            let t = init_tensor(&[HOURS_PER_DAY, dims.embed_dim], Init::HeNormal { fan_in: 2 }, &mut rng);
            store.add("interval.embedding", t, Role::Trainable)
        } else {
            store.add("interval.embedding", embeddings.cast(), Role::Frozen)
        }
    });

    let k = dims.outputs();
    let head = match kind {
        ModelKind::Stdi | ModelKind::SpatialDI | ModelKind::TemporalDI | ModelKind::StdiEmbedding => {
            Head::Interval(IntervalNet::new(&mut store, "interval", dims, summary, &mut rng))
        }
        ModelKind::StdiFusion => Head::Fusion {
            project: Linear::new(&mut store, "fusion.project", dims.embed_dim, dims.fusion_dim, true, &mut rng),
            fc: Linear::new(&mut store, "fusion.fc", summary + dims.fusion_dim, k, true, &mut rng),
        },
        ModelKind::SpatialFC | ModelKind::TemporalFC | ModelKind::SpatialTemporalFC | ModelKind::UnifiedSpatial => {
            Head::Static(Linear::new(&mut store, "head.fc", summary, k, true, &mut rng))
        }
    };

    Ok(StdiModel {
        kind,
        dims: dims.clone(),
        store,
        arch: Arch {
            encoder,
            lstm,
            table,
            head,
        },
        scaling: None,
    })
}

impl<T: Scalar> StdiModel<T> {
    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn dims(&self) -> &Dims {
        &self.dims
    }

    pub fn interval_net(&self) -> Option<&IntervalNet> {
        match &self.arch.head {
            Head::Interval(net) => Some(net),
            _ => None,
        }
    }

    pub fn embedding_table(&self) -> Option<ParamId> {
        self.arch.table
    }

    pub fn conv_blocks(&self) -> &[ConvBlock] {
        match &self.arch.encoder {
            Encoder::Conv { blocks, .. } => blocks,
            Encoder::Flatten => &[],
        }
    }

    pub fn lstm(&self) -> Option<&Lstm> {
        self.arch.lstm.as_ref()
    }

    pub fn census(&self) -> Census {
        let blocks = self.conv_blocks();
        let conv_params = self
            .store
            .entries()
            .iter()
            .filter(|e| e.name.starts_with("spatial.") && e.role == Role::Trainable)
            .map(|e| e.value.len())
            .sum();
        Census {
            conv_blocks: blocks.len(),
            conv_params,
            lstm: self.lstm().map(|l| (l.input, l.hidden)),
            interval: self.interval_net().map(|n| (n.rank, n.d_in, n.outputs)),
            trainable: self.store.count(Role::Trainable),
            frozen: self.store.count(Role::Frozen),
        }
    }

    fn check_inputs(&self, inputs: &Tensor<T>, hours: &[usize]) -> Result<usize> {
        let d = &self.dims;
        let want = [d.seq_len, 2, d.rows, d.cols];
        let shape = inputs.shape();
        if shape.len() != 5 || shape[1..] != want {
            return Err(Error::shape(
                "forward",
                format!("input {shape:?} does not match model window B×{want:?}"),
            ));
        }
        if hours.len() != shape[0] {
            return Err(Error::shape(
                "forward",
                format!("{} hour labels for a batch of {}", hours.len(), shape[0]),
            ));
        }
        if let Some(h) = hours.iter().find(|&&h| h >= HOURS_PER_DAY) {
            return Err(Error::Domain(format!("hour {h} outside 0..=23")));
        }
        Ok(shape[0])
    }

    fn forward_impl(
        &mut self,
        inputs: &Tensor<T>,
        hours: &[usize],
        mode: Mode,
        track_input: bool,
    ) -> Result<ForwardPass<T>> {
        let batch = self.check_inputs(inputs, hours)?;
        let slope = T::of(self.dims.leaky_slope);
        let k = self.dims.outputs();
        let (rows, cols) = (self.dims.rows, self.dims.cols);
        // Split borrows: the arch is read while the store is bound mutably.
        let Self { arch, store, dims, .. } = self;
        let view = ModelView { arch, dims };
        let mut f = Forward::new(store, mode);
        let x = f.tape.leaf(inputs.clone(), track_input);
        let steps = view.encode(&mut f, x)?;
        let summary = match &view.arch.lstm {
            Some(lstm) => lstm.sequence(&mut f, &steps)?,
            None => f.tape.concat_cols(&steps)?,
        };
        let pre = match &view.arch.head {
            Head::Static(fc) => fc.forward(&mut f, summary)?,
            Head::Interval(net) => {
                let table = f.param(view.arch.table.expect("interval head has a table"));
                let v = f.tape.gather_rows(table, hours)?;
                net.apply(&mut f, v, summary, slope)?
            }
            Head::Fusion { project, fc } => {
                let table = f.param(view.arch.table.expect("fusion head has a table"));
                let v = f.tape.gather_rows(table, hours)?;
                let e = project.forward(&mut f, v)?;
                let e = f.tape.leaky_relu(e, slope)?;
                let joined = f.tape.concat_cols(&[summary, e])?;
                fc.forward(&mut f, joined)?
            }
        };
        debug_assert_eq!(f.tape.shape(pre), [batch, k]);
        let y = f.tape.relu(pre)?;
        let y = f.tape.reshape(y, &[batch, 2, rows, cols])?;
        let pass = f.finish(y);
        Ok(if track_input { pass.with_input(x) } else { pass })
    }

    /// Forward pass whose input leaf requires gradients (for verification).
    pub fn forward_tracking_input(
        &mut self,
        inputs: &Tensor<T>,
        hours: &[usize],
        mode: Mode,
    ) -> Result<ForwardPass<T>> {
        self.forward_impl(inputs, hours, mode, true)
    }

    /// Prediction for a single `L×2×i×j` window in eval mode.
    pub fn predict_window(&mut self, window: &Tensor<T>, hour: usize) -> Result<Tensor<T>> {
        let mut shape = vec![1];
        shape.extend_from_slice(window.shape());
        let batch = window.clone().reshape(&shape)?;
        let out = self.predict(&batch, &[hour])?;
        out.reshape(&[2, self.dims.rows, self.dims.cols])
    }

    /// Spatial features of one `L×2×i×j` window as an `L×(c·i·j)` matrix.
    pub fn spatial_features(&mut self, window: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let d = &self.dims;
        if window.shape() != [d.seq_len, 2, d.rows, d.cols] {
            return Err(Error::shape(
                "spatial_forward",
                format!("window {:?} vs L×2×i×j = {:?}", window.shape(), [d.seq_len, 2, d.rows, d.cols]),
            ));
        }
        if !matches!(self.arch.encoder, Encoder::Conv { .. }) {
            return Err(Error::Usage(format!("{} has no spatial module", self.kind)));
        }
        let mut shape = vec![1];
        shape.extend_from_slice(window.shape());
        let input = window.clone().reshape(&shape)?;
        let Self { arch, store, dims, .. } = self;
        let view = ModelView { arch, dims };
        let mut f = Forward::new(store, mode);
        let x = f.tape.leaf(input, false);
        let steps = view.encode(&mut f, x)?;
        let stacked = f.tape.concat_cols(&steps)?;
        let width = f.tape.shape(stacked)[1] / steps.len();
        f.tape.value(stacked).clone().reshape(&[steps.len(), width])
    }

    /// Generated prediction-layer weights `(k×d, k)` for one hour.
    pub fn interval_params(&mut self, hour: usize) -> Result<(Tensor<T>, Tensor<T>)> {
        if hour >= HOURS_PER_DAY {
            return Err(Error::Domain(format!("hour {hour} outside 0..=23")));
        }
        let slope = T::of(self.dims.leaky_slope);
        let Head::Interval(net) = &self.arch.head else {
            return Err(Error::Usage(format!("{} has no hour-conditioned head", self.kind)));
        };
        let table = self.arch.table.expect("interval head has a table");
        let mut f = Forward::new(&mut self.store, Mode::Eval);
        let t = f.param(table);
        let v = f.tape.gather_rows(t, &[hour])?;
        let v = f.tape.reshape(v, &[net.embed_dim])?;
        let (w, b) = net.generate(&mut f, v, slope)?;
        Ok((f.tape.value(w).clone(), f.tape.value(b).clone()))
    }
}

/// Per-position features: `L` tensors of shape `B×(c·i·j)` (or `B×(2·i·j)`
/// for flatten encoders). Position `l` only ever sees block `l`.
struct ModelView<'a> {
    arch: &'a Arch,
    dims: &'a Dims,
}

impl ModelView<'_> {
    fn encode<T: Scalar>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Vec<Var>> {
        let batch = f.tape.shape(x)[0];
        let cells = self.dims.cells();
        (0..self.dims.seq_len)
            .map(|l| {
                let frame = f.tape.select(x, l)?;
                match &self.arch.encoder {
                    Encoder::Flatten => f.tape.reshape(frame, &[batch, 2 * cells]),
                    Encoder::Conv { blocks, shared } => {
                        let block = &blocks[if *shared { 0 } else { l }];
                        let y = block.forward(f, frame)?;
                        f.tape.reshape(y, &[batch, self.dims.channels * cells])
                    }
                }
            })
            .collect()
    }
}

impl<T: Scalar> Forecaster<T> for StdiModel<T> {
    fn name(&self) -> String {
        self.kind.name().to_string()
    }

    fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    fn forward(&mut self, inputs: &Tensor<T>, hours: &[usize], mode: Mode) -> Result<ForwardPass<T>> {
        self.forward_impl(inputs, hours, mode, false)
    }

    fn window_shape(&self) -> (usize, usize, usize) {
        (self.dims.seq_len, self.dims.rows, self.dims.cols)
    }

    fn scaling(&self) -> Option<MinMax> {
        self.scaling
    }

    fn set_scaling(&mut self, scaling: Option<MinMax>) {
        self.scaling = scaling;
    }
}
