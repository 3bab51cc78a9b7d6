//! Stacked self-gated convolution branches.
//!
//! A branch alternates neighbourhood convolutions with learned self-gates:
//! each layer builds edge features over a k-nearest-neighbour graph, pushes
//! them through a shared linear map, pools over the neighbourhood, and scales
//! the result by a sigmoid gate computed from the layer's own output.  The
//! gated outputs of every depth are concatenated, lifted to a wide embedding,
//! and max-pooled over points into one set descriptor per branch.
//!
//! Also here: the small alignment network that predicts a 3x3 input transform
//! as an identity-anchored residual, so the pipeline starts from a canonical
//! orientation without ever leaving the autodiff tape.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Space, knn};
use crate::tensor::{Graph, Tensor, Var};

/// How a layer's self-gate is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateMode {
    /// One sigmoid scalar per layer scales every feature (default).
    Scalar,
    /// One sigmoid factor per channel.
    Channel,
    /// Gates disabled (ablation).
    Off,
}

impl GateMode {
    /// Short name used in ablation tables.
    pub fn name(self) -> &'static str {
        match self {
            GateMode::Scalar => "scalar",
            GateMode::Channel => "channel",
            GateMode::Off => "off",
        }
    }
}

/// Configuration of one convolution branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgcConfig {
    /// Output width of each stacked layer.
    pub widths: Vec<usize>,
    /// Neighbourhood size; clamped to `n - 1` for small clouds.
    pub k: usize,
    /// Width of the per-branch set descriptor.
    pub set_width: usize,
    /// Rebuild the neighbour graph in feature space from depth 2 on.
    pub dynamic_graph: bool,
    /// Self-gate flavour.
    pub gate: GateMode,
}

impl Default for SgcConfig {
    fn default() -> Self {
        SgcConfig {
            widths: vec![64, 64, 64, 128],
            k: 20,
            set_width: 1024,
            dynamic_graph: true,
            gate: GateMode::Scalar,
        }
    }
}

/// Bound gate parameters of one layer.
#[derive(Debug, Clone, Copy)]
pub struct GateVars {
    pub w: Var,
    pub b: Var,
}

/// Bound parameters of one convolution layer.
#[derive(Debug, Clone, Copy)]
pub struct EdgeLayerVars {
    pub w: Var,
    pub b: Var,
    pub gate: Option<GateVars>,
}

/// Bound parameters of one branch.
#[derive(Debug, Clone)]
pub struct BranchVars {
    pub layers: Vec<EdgeLayerVars>,
    pub lift_w: Var,
    pub lift_b: Var,
}

/// Bound parameters of the input alignment network.
#[derive(Debug, Clone, Copy)]
pub struct TransformVars {
    pub conv_w: Var,
    pub conv_b: Var,
    pub fc1_w: Var,
    pub fc1_b: Var,
    pub fc2_w: Var,
    pub fc2_b: Var,
}

/// Largest usable neighbourhood for a cloud of `n` points.
pub fn effective_k(k: usize, n: usize) -> usize {
    k.min(n.saturating_sub(1))
}

fn coord_graph(g: &Graph, coords: Var, k: usize) -> Result<Vec<u32>> {
    let t = g.value(coords);
    if t.rank() != 2 || t.shape()[1] != 3 {
        return Err(Error::dim(
            "coord_graph",
            format!("coordinates must be [n, 3], got {:?}", t.shape()),
        ));
    }
    let n = t.shape()[0];
    let graph = knn(t.data(), n, 3, effective_k(k, n), Space::Coordinates)?;
    Ok(graph.flat().as_ref().clone())
}

fn feature_graph(g: &Graph, f: Var, k: usize) -> Result<Vec<u32>> {
    let t = g.value(f);
    let (n, c) = (t.shape()[0], t.shape()[1]);
    let graph = knn(t.data(), n, c, effective_k(k, n), Space::Features)?;
    Ok(graph.flat().as_ref().clone())
}

/// Predicts the 3x3 alignment matrix for a cloud.
///
/// The final projection starts at zero, so a freshly initialised network
/// returns the identity exactly and alignment begins as a no-op.
pub fn input_transform(g: &mut Graph, coords: Var, vars: &TransformVars, k: usize) -> Result<Var> {
    let idx = coord_graph(g, coords, k)?;
    let n = g.value(coords).shape()[0];
    let eff_k = effective_k(k, n);
    let edges = g.edge_linear(coords, vars.conv_w, vars.conv_b, &idx, eff_k)?;
    let (pooled_k, _) = g.max_reduce(edges, 1)?;
    let local = g.relu(pooled_k);
    let (pooled_n, _) = g.max_reduce(local, 0)?;
    let global = g.reshape(pooled_n, &[1, g.value(pooled_n).len()])?;
    let h = g.linear(global, vars.fc1_w, vars.fc1_b)?;
    let h = g.relu(h);
    let delta = g.linear(h, vars.fc2_w, vars.fc2_b)?;
    let delta = g.reshape(delta, &[3, 3])?;
    let eye = g.input(Tensor::identity(3));
    g.add(delta, eye)
}

/// Applies an alignment matrix to coordinates: `[n, 3] x [3, 3]`.
pub fn apply_transform(g: &mut Graph, coords: Var, m: Var) -> Result<Var> {
    g.matmul(coords, m)
}

/// Scales features by a sigmoid gate computed from their own mean pooling.
pub fn self_gate(g: &mut Graph, f: Var, vars: &GateVars, mode: GateMode) -> Result<Var> {
    if mode == GateMode::Off {
        return Ok(f);
    }
    let shape = g.value(f).shape().to_vec();
    if shape.len() != 2 {
        return Err(Error::dim(
            "self_gate",
            format!("features must be rank 2, got {shape:?}"),
        ));
    }
    let (n, c) = (shape[0], shape[1]);
    let summed = g.sum_axis(f, 0)?;
    let mean = g.scale(summed, 1.0 / n as f32);
    let pooled = g.reshape(mean, &[1, c])?;
    let raw = g.linear(pooled, vars.w, vars.b)?;
    let theta = g.sigmoid(raw);
    let tiled = g.repeat_rows(theta, n)?;
    match mode {
        GateMode::Scalar => g.mul_row_scalar(f, tiled),
        GateMode::Channel => g.mul(f, tiled),
        GateMode::Off => unreachable!(),
    }
}

/// What one branch produces: a pooled set descriptor plus the per-point
/// features it was pooled from (used by per-point prediction heads).
#[derive(Debug, Clone, Copy)]
pub struct BranchOutput {
    /// Set descriptor, shape `[set_width]`.
    pub set_feature: Var,
    /// Pre-pooling features, shape `[n, set_width]`.
    pub per_point: Var,
}

/// Runs one branch and pools it into a set descriptor.
///
/// Layer 1 always builds its graph from `coords`; deeper layers rebuild it in
/// feature space when `dynamic_graph` is set, otherwise they reuse layer 1's.
pub fn sgc_branch(
    g: &mut Graph,
    coords: Var,
    normals: Option<Var>,
    vars: &BranchVars,
    cfg: &SgcConfig,
) -> Result<BranchOutput> {
    if vars.layers.is_empty() {
        return Err(Error::param("sgc_branch", "branch needs at least one layer"));
    }
    let base_idx = coord_graph(g, coords, cfg.k)?;
    let n = g.value(coords).shape()[0];
    let eff_k = effective_k(cfg.k, n);
    let mut f = match normals {
        Some(nm) => g.concat(&[coords, nm], 1)?,
        None => coords,
    };
    let mut gated = Vec::with_capacity(vars.layers.len());
    for (depth, layer) in vars.layers.iter().enumerate() {
        let idx = if depth == 0 || !cfg.dynamic_graph {
            base_idx.clone()
        } else {
            feature_graph(g, f, cfg.k)?
        };
        let edges = g.edge_linear(f, layer.w, layer.b, &idx, eff_k)?;
        let (pooled, _) = g.max_reduce(edges, 1)?;
        let act = g.relu(pooled);
        f = match (cfg.gate, &layer.gate) {
            (GateMode::Off, _) => act,
            (mode, Some(gv)) => self_gate(g, act, gv, mode)?,
            (_, None) => {
                return Err(Error::State(
                    "gate mode enabled but layer has no gate parameters".into(),
                ));
            }
        };
        gated.push(f);
    }
    let cat = if gated.len() == 1 { gated[0] } else { g.concat(&gated, 1)? };
    let lifted = g.linear(cat, vars.lift_w, vars.lift_b)?;
    let lifted = g.relu(lifted);
    let (set_feature, _) = g.max_reduce(lifted, 0)?;
    Ok(BranchOutput { set_feature, per_point: lifted })
}

// ── tests ─────────────────────────────────────────────────────────────────
