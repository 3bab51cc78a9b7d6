//! The full network: alignment, attentive point search, three convolution
//! branches over the whole cloud and the two distinctive subsets, channel
//! fusion, and a prediction head.
//!
//! A [`Model`] owns its configuration and a named [`ParamSet`]; every forward
//! pass binds the parameters into a fresh [`Graph`], so training many clouds
//! in parallel is just building many graphs.  Parameter creation order (and
//! therefore checkpoint layout) is fixed by the configuration alone.

mod ckpt;
mod train;

pub use ckpt::{Checkpoint, CkptMeta, load_checkpoint, save_checkpoint};
pub use train::{EpochStats, TrainOptions, Trainer, evaluate_classifier, evaluate_segmenter};

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{FusionConfig, FusionMlpVars, FusionMode, fuse, fuse_with_weights, fused_width};
use crate::geometry::{PointCloud, normalize_unit_sphere};
use crate::sgc::{
    BranchVars, EdgeLayerVars, GateMode, GateVars, SgcConfig, TransformVars, apply_transform,
    input_transform, sgc_branch,
};
use crate::sps::{NormalizeAxis, Sampling, SpsConfig, attentive_scores, farthest_sets, random_sets, select_distinctive};
use crate::tensor::{Graph, ParamSet, Tensor, Var};

// ── configuration ─────────────────────────────────────────────────────────

/// What the prediction head outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// One label per cloud.
    Classify,
    /// One label per point.
    Segment,
}

/// Which convolution branches participate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchSelection {
    /// Branch over the whole cloud.
    pub full: bool,
    /// Branch over the highest-scoring subset.
    pub high: bool,
    /// Branch over the lowest-scoring subset.
    pub low: bool,
}

impl Default for BranchSelection {
    fn default() -> Self {
        BranchSelection { full: true, high: true, low: true }
    }
}

impl BranchSelection {
    /// Names of the included branches, in fixed order.
    pub fn names(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.full {
            out.push("full");
        }
        if self.high {
            out.push("high");
        }
        if self.low {
            out.push("low");
        }
        out
    }

    /// Number of included branches.
    pub fn count(&self) -> usize {
        self.names().len()
    }

    fn uses_subsets(&self) -> bool {
        self.high || self.low
    }
}

/// Configuration of the input alignment network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformConfig {
    pub enabled: bool,
    /// Width of the edge convolution.
    pub conv_width: usize,
    /// Width of the hidden projection layer.
    pub hidden: usize,
}

impl Default for TransformConfig {
    fn default() -> Self {
        TransformConfig { enabled: true, conv_width: 64, hidden: 32 }
    }
}

/// Configuration of the prediction head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    /// Hidden layer widths.
    pub hidden: Vec<usize>,
    /// Dropout rate applied after every hidden layer while training.
    pub dropout: f32,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig { hidden: vec![512, 256], dropout: 0.5 }
    }
}

/// Complete model configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub classes: usize,
    pub task: TaskKind,
    /// Append surface normals to the per-point input features.
    pub with_normals: bool,
    /// Size of each distinctive subset as a fraction of the cloud.
    pub n1_ratio: f32,
    /// How the distinctive subsets are chosen.
    pub sampling: Sampling,
    pub branches: BranchSelection,
    pub sps: SpsConfig,
    pub sgc: SgcConfig,
    pub transform: TransformConfig,
    pub fusion: FusionConfig,
    pub head: HeadConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            classes: 8,
            task: TaskKind::Classify,
            with_normals: false,
            n1_ratio: 0.3125,
            sampling: Sampling::Attentive,
            branches: BranchSelection::default(),
            sps: SpsConfig::default(),
            sgc: SgcConfig::default(),
            transform: TransformConfig::default(),
            fusion: FusionConfig::default(),
            head: HeadConfig::default(),
        }
    }
}

impl ModelConfig {
    /// A miniature configuration for fast tests and experiments.
    pub fn tiny() -> Self {
        ModelConfig {
            classes: 3,
            n1_ratio: 0.25,
            sps: SpsConfig { attn_dim: 6, normalize_axis: NormalizeAxis::Column },
            sgc: SgcConfig {
                widths: vec![8, 8],
                k: 3,
                set_width: 16,
                dynamic_graph: true,
                gate: GateMode::Scalar,
            },
            transform: TransformConfig { enabled: true, conv_width: 8, hidden: 4 },
            fusion: FusionConfig { mode: FusionMode::Learned, hidden: 8 },
            head: HeadConfig { hidden: vec![8], dropout: 0.5 },
            ..Default::default()
        }
    }

    /// Checks internal consistency; called by [`Model::new`].
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.classes < 2 {
            return bad(format!("classes must be at least 2, got {}", self.classes));
        }
        if !(self.n1_ratio > 0.0 && self.n1_ratio <= 0.5) {
            return bad(format!("n1_ratio must lie in (0, 0.5], got {}", self.n1_ratio));
        }
        if self.sgc.widths.is_empty() || self.sgc.widths.contains(&0) {
            return bad(format!("layer widths must be positive, got {:?}", self.sgc.widths));
        }
        if self.sgc.k == 0 || self.sgc.set_width == 0 {
            return bad("neighbourhood size and set width must be positive".into());
        }
        if self.branches.count() == 0 {
            return bad("at least one branch must be enabled".into());
        }
        if self.sps.attn_dim == 0 {
            return bad("attention dimension must be positive".into());
        }
        if self.fusion.mode == FusionMode::Learned && self.fusion.hidden == 0 {
            return bad("fusion hidden width must be positive".into());
        }
        if !(0.0..1.0).contains(&self.head.dropout) {
            return bad(format!("head dropout must lie in [0, 1), got {}", self.head.dropout));
        }
        if self.transform.enabled && (self.transform.conv_width == 0 || self.transform.hidden == 0)
        {
            return bad("transform widths must be positive".into());
        }
        if self.task == TaskKind::Segment && !self.branches.full {
            return bad("per-point prediction requires the full branch".into());
        }
        Ok(())
    }

    /// Width of the per-point input features.
    pub fn input_width(&self) -> usize {
        if self.with_normals { 6 } else { 3 }
    }

    /// Subset size for a cloud of `n` points (at least 2, at most `n / 2`).
    pub fn n1_for(&self, n: usize) -> usize {
        ((self.n1_ratio * n as f32).round() as usize).clamp(2, (n / 2).max(2))
    }

    /// Whether the configuration trains attention projections.
    pub fn uses_attention(&self) -> bool {
        self.branches.uses_subsets() && self.sampling == Sampling::Attentive
    }

    /// Width of the fused descriptor.
    pub fn fused_width(&self) -> usize {
        fused_width(self.fusion.mode, self.branches.count(), self.sgc.set_width)
    }

    /// Input width of the prediction head.
    pub fn head_input_width(&self) -> usize {
        match self.task {
            TaskKind::Classify => self.fused_width(),
            TaskKind::Segment => self.sgc.set_width + self.fused_width(),
        }
    }
}

// ── parameter construction ────────────────────────────────────────────────

fn add_linear(
    ps: &mut ParamSet,
    rng: &mut ChaCha8Rng,
    name: &str,
    fan_in: usize,
    fan_out: usize,
    zero_init: bool,
) {
    let w = if zero_init {
        Tensor::zeros(&[fan_in, fan_out])
    } else {
        Tensor::glorot(fan_in, fan_out, rng)
    };
    ps.add(format!("{name}.w"), w);
    ps.add(format!("{name}.b"), Tensor::zeros(&[fan_out]));
}

fn build_params(config: &ModelConfig, seed: u64) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ps = ParamSet::new();
    let in_width = config.input_width();

    if config.transform.enabled {
        // Edge features over raw coordinates are always 6 wide; the residual
        // head starts at zero so the transform is the identity at init.
        add_linear(&mut ps, &mut rng, "transform.conv", 6, config.transform.conv_width, false);
        add_linear(
            &mut ps,
            &mut rng,
            "transform.fc1",
            config.transform.conv_width,
            config.transform.hidden,
            false,
        );
        add_linear(&mut ps, &mut rng, "transform.fc2", config.transform.hidden, 9, true);
    }
    if config.uses_attention() {
        ps.add("sps.g.w", Tensor::glorot(in_width, config.sps.attn_dim, &mut rng));
        ps.add("sps.h.w", Tensor::glorot(in_width, config.sps.attn_dim, &mut rng));
    }
    for branch in config.branches.names() {
        let mut c = in_width;
        for (depth, &w) in config.sgc.widths.iter().enumerate() {
            add_linear(&mut ps, &mut rng, &format!("sgc.{branch}.conv{depth}"), 2 * c, w, false);
            match config.sgc.gate {
                GateMode::Off => {}
                GateMode::Scalar => {
                    add_linear(&mut ps, &mut rng, &format!("sgc.{branch}.conv{depth}.gate"), w, 1, false);
                }
                GateMode::Channel => {
                    add_linear(&mut ps, &mut rng, &format!("sgc.{branch}.conv{depth}.gate"), w, w, false);
                }
            }
            c = w;
        }
        let total: usize = config.sgc.widths.iter().sum();
        add_linear(&mut ps, &mut rng, &format!("sgc.{branch}.lift"), total, config.sgc.set_width, false);
    }
    if config.fusion.mode == FusionMode::Learned {
        for branch in config.branches.names() {
            add_linear(
                &mut ps,
                &mut rng,
                &format!("fusion.{branch}.fc1"),
                config.sgc.set_width,
                config.fusion.hidden,
                false,
            );
            add_linear(
                &mut ps,
                &mut rng,
                &format!("fusion.{branch}.fc2"),
                config.fusion.hidden,
                config.sgc.set_width,
                false,
            );
        }
    }
    let mut prev = config.head_input_width();
    for (i, &h) in config.head.hidden.iter().enumerate() {
        add_linear(&mut ps, &mut rng, &format!("head.fc{}", i + 1), prev, h, false);
        prev = h;
    }
    add_linear(&mut ps, &mut rng, "head.out", prev, config.classes, false);
    ps
}

// ── model ─────────────────────────────────────────────────────────────────

/// A configured network with its trainable parameters.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    params: ParamSet,
    seed: u64,
}

/// Everything one forward pass produces beyond the loss.
pub struct ForwardOutput {
    /// `[1, classes]` for classification, `[n, classes]` per-point.
    pub logits: Var,
    /// Attention scores `[n]`, present when attentive sampling is active.
    pub alpha: Option<Var>,
    /// Indices of the two distinctive subsets, when subsets are in use.
    pub subsets: Option<(Vec<u32>, Vec<u32>)>,
    /// Learned fusion weights `[branches, set_width]`, when fusion is learned.
    pub psi: Option<Var>,
    /// Set descriptor of every included branch, in branch order.
    pub branch_features: Vec<Var>,
    /// Predicted alignment matrix, when the transform is enabled.
    pub transform: Option<Var>,
    /// Parameter leaf per slot, in slot order (for gradient extraction).
    pub param_vars: Vec<Var>,
}

impl Model {
    /// Validates the configuration and initialises all weights from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = build_params(&config, seed);
        Ok(Model { config, params, seed })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// Mutable access for optimisers and custom training loops.
    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// The seed the weights were initialised from.
    pub fn init_seed(&self) -> u64 {
        self.seed
    }

    fn var(&self, vars: &[Var], name: &str) -> Var {
        vars[self
            .params
            .slot_of(name)
            .unwrap_or_else(|| panic!("parameter '{name}' missing from model"))]
    }

    fn branch_vars(&self, vars: &[Var], branch: &str) -> BranchVars {
        let layers = (0..self.config.sgc.widths.len())
            .map(|d| EdgeLayerVars {
                w: self.var(vars, &format!("sgc.{branch}.conv{d}.w")),
                b: self.var(vars, &format!("sgc.{branch}.conv{d}.b")),
                gate: match self.config.sgc.gate {
                    GateMode::Off => None,
                    _ => Some(GateVars {
                        w: self.var(vars, &format!("sgc.{branch}.conv{d}.gate.w")),
                        b: self.var(vars, &format!("sgc.{branch}.conv{d}.gate.b")),
                    }),
                },
            })
            .collect();
        BranchVars {
            layers,
            lift_w: self.var(vars, &format!("sgc.{branch}.lift.w")),
            lift_b: self.var(vars, &format!("sgc.{branch}.lift.b")),
        }
    }

    /// Runs the network on one cloud.
    ///
    /// The cloud is re-normalised defensively (idempotent for corpus data).
    /// Dropout and the seeded sampling ablation draw from the graph's RNG, so
    /// results are fully determined by the graph seed.
    pub fn forward(&self, g: &mut Graph, cloud: &PointCloud, training: bool) -> Result<ForwardOutput> {
        let cfg = &self.config;
        let cloud = normalize_unit_sphere(cloud)?;
        let n = cloud.len();
        if cfg.with_normals && cloud.normals().is_none() {
            return Err(Error::Param {
                op: "Model::forward",
                detail: "configuration expects normals but the cloud has none".into(),
            });
        }

        let param_vars = self.params.bind_all(g);
        let vars = &param_vars;
        let coords = g.input(cloud.to_tensor(false)?);
        let normals = if cfg.with_normals {
            let t = cloud.to_tensor(true)?;
            // Slice out the normal columns into their own [n, 3] input.
            let data: Vec<f32> = t
                .data()
                .chunks(6)
                .flat_map(|row| row[3..6].to_vec())
                .collect();
            Some(g.input(Tensor::new(vec![n, 3], data)?))
        } else {
            None
        };

        // Alignment.
        let (aligned, transform) = if cfg.transform.enabled {
            let tv = TransformVars {
                conv_w: self.var(vars, "transform.conv.w"),
                conv_b: self.var(vars, "transform.conv.b"),
                fc1_w: self.var(vars, "transform.fc1.w"),
                fc1_b: self.var(vars, "transform.fc1.b"),
                fc2_w: self.var(vars, "transform.fc2.w"),
                fc2_b: self.var(vars, "transform.fc2.b"),
            };
            let m = input_transform(g, coords, &tv, cfg.sgc.k)?;
            (apply_transform(g, coords, m)?, Some(m))
        } else {
            (coords, None)
        };
        let feats = match normals {
            Some(nm) => g.concat(&[aligned, nm], 1)?,
            None => aligned,
        };

        // Distinctive subsets.
        let mut alpha = None;
        let mut subsets = None;
        if cfg.branches.uses_subsets() {
            let n1 = cfg.n1_for(n);
            if 2 * n1 > n {
                return Err(Error::Param {
                    op: "Model::forward",
                    detail: format!("cloud of {n} points is too small for two subsets of {n1}"),
                });
            }
            let sets = match cfg.sampling {
                Sampling::Attentive => {
                    let wg = self.var(vars, "sps.g.w");
                    let wh = self.var(vars, "sps.h.w");
                    let a = attentive_scores(g, feats, wg, wh, cfg.sps.normalize_axis)?;
                    let picked = select_distinctive(g.value(a).data(), n1)?;
                    alpha = Some(a);
                    picked
                }
                Sampling::Farthest => {
                    let pts: Vec<[f32; 3]> = g
                        .value(aligned)
                        .data()
                        .chunks(3)
                        .map(|c| [c[0], c[1], c[2]])
                        .collect();
                    farthest_sets(&pts, n1, 0)?
                }
                Sampling::Random => {
                    let seed = g.draw_seed();
                    random_sets(n, n1, seed)?
                }
            };
            subsets = Some(sets);
        }

        // Branches.
        let mut branch_features = Vec::new();
        let mut full_per_point = None;
        if cfg.branches.full {
            let bv = self.branch_vars(vars, "full");
            let out = sgc_branch(g, aligned, normals, &bv, &cfg.sgc)?;
            branch_features.push(out.set_feature);
            full_per_point = Some(out.per_point);
        }
        for (include, name, pick_high) in
            [(cfg.branches.high, "high", true), (cfg.branches.low, "low", false)]
        {
            if !include {
                continue;
            }
            let (idx_high, idx_low) = subsets.as_ref().expect("subsets exist when selected");
            let idx = if pick_high { idx_high } else { idx_low };
            let mut sub_coords = g.gather_rows(aligned, idx)?;
            if let Some(a) = alpha {
                // Scaling the gathered coordinates by their scores keeps the
                // selection step inside the differentiable pipeline.
                let a_col = g.reshape(a, &[n, 1])?;
                let a_sel = g.gather_rows(a_col, idx)?;
                sub_coords = g.mul_row_scalar(sub_coords, a_sel)?;
            }
            let sub_normals = match normals {
                Some(nm) => Some(g.gather_rows(nm, idx)?),
                None => None,
            };
            let bv = self.branch_vars(vars, name);
            let out = sgc_branch(g, sub_coords, sub_normals, &bv, &cfg.sgc)?;
            branch_features.push(out.set_feature);
        }

        // Fusion.
        let (fused, psi) = if cfg.fusion.mode == FusionMode::Learned {
            let mlps: Vec<FusionMlpVars> = cfg
                .branches
                .names()
                .iter()
                .map(|b| FusionMlpVars {
                    w1: self.var(vars, &format!("fusion.{b}.fc1.w")),
                    b1: self.var(vars, &format!("fusion.{b}.fc1.b")),
                    w2: self.var(vars, &format!("fusion.{b}.fc2.w")),
                    b2: self.var(vars, &format!("fusion.{b}.fc2.b")),
                })
                .collect();
            let (fused, psi) = fuse_with_weights(g, &branch_features, &mlps)?;
            (fused, Some(psi))
        } else {
            (fuse(g, &branch_features, None, cfg.fusion.mode)?, None)
        };

        // Head.
        let head_in = match cfg.task {
            TaskKind::Classify => g.reshape(fused, &[1, g.value(fused).len()])?,
            TaskKind::Segment => {
                let pp = full_per_point.expect("validated: segment task keeps the full branch");
                let fw = g.value(fused).len();
                let frow = g.reshape(fused, &[1, fw])?;
                let tiled = g.repeat_rows(frow, n)?;
                g.concat(&[pp, tiled], 1)?
            }
        };
        let mut x = head_in;
        for i in 0..cfg.head.hidden.len() {
            let w = self.var(vars, &format!("head.fc{}.w", i + 1));
            let b = self.var(vars, &format!("head.fc{}.b", i + 1));
            x = g.linear(x, w, b)?;
            x = g.relu(x);
            x = g.dropout(x, cfg.head.dropout, training)?;
        }
        let logits = g.linear(x, self.var(vars, "head.out.w"), self.var(vars, "head.out.b"))?;

        Ok(ForwardOutput {
            logits,
            alpha,
            subsets,
            psi,
            branch_features,
            transform,
            param_vars,
        })
    }

    /// Cross-entropy loss of a classification forward pass.
    pub fn classify_loss(&self, g: &mut Graph, out: &ForwardOutput, label: u32) -> Result<Var> {
        if self.config.task != TaskKind::Classify {
            return Err(Error::State("classify_loss on a per-point model".into()));
        }
        g.cross_entropy(out.logits, &[label])
    }

    /// Mean per-point cross-entropy of a segmentation forward pass.
    pub fn segment_loss(&self, g: &mut Graph, out: &ForwardOutput, labels: &[u32]) -> Result<Var> {
        if self.config.task != TaskKind::Segment {
            return Err(Error::State("segment_loss on a whole-cloud model".into()));
        }
        g.cross_entropy(out.logits, labels)
    }

    /// Argmax over each logits row.
    pub fn predict(&self, g: &Graph, out: &ForwardOutput) -> Vec<u32> {
        let t = g.value(out.logits);
        let c = self.config.classes;
        t.data()
            .chunks(c)
            .map(|row| {
                let mut best = 0;
                for (i, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = i;
                    }
                }
                best as u32
            })
            .collect()
    }

    /// Evaluation-mode summary of one cloud: scores, subsets, fusion weights,
    /// and the prediction.  Deterministic for a given model and cloud.
    pub fn inspect(&self, cloud: &PointCloud) -> Result<InspectReport> {
        let mut g = Graph::with_seed(0);
        let out = self.forward(&mut g, cloud, false)?;
        let alpha = out.alpha.map(|a| g.value(a).data().to_vec());
        let psi = out.psi.map(|p| {
            let t = g.value(p);
            let w = t.shape()[1];
            t.data().chunks(w).map(|row| row.to_vec()).collect()
        });
        let logits = g.value(out.logits).data().to_vec();
        let predicted = self.predict(&g, &out);
        Ok(InspectReport {
            alpha,
            subsets: out.subsets,
            psi,
            logits,
            predicted,
        })
    }
}

/// Plain-data summary produced by [`Model::inspect`].
pub struct InspectReport {
    /// Per-point attention scores, when attentive sampling is active.
    pub alpha: Option<Vec<f32>>,
    /// High/low subset indices, when subsets are in use.
    pub subsets: Option<(Vec<u32>, Vec<u32>)>,
    /// Fusion weight rows, one per branch.
    pub psi: Option<Vec<Vec<f32>>>,
    /// Raw output row(s).
    pub logits: Vec<f32>,
    /// Argmax prediction per output row.
    pub predicted: Vec<u32>,
}

// ── tests ─────────────────────────────────────────────────────────────────
