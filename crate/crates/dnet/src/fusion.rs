//! Channel-wise fusion of the per-branch set descriptors.
//!
//! The learned mode passes each branch descriptor through its own small MLP,
//! stacks the results, and softmax-normalises across branches per channel, so
//! every output channel is a convex combination of the branch values for that
//! channel.  Max, mean, and concatenation are provided as fixed alternatives
//! for ablation runs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Var};

/// How branch descriptors are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Learned per-channel convex weights (default).
    Learned,
    /// Channel-wise maximum.
    Max,
    /// Channel-wise mean.
    Mean,
    /// Concatenation (output width grows by the branch count).
    Concat,
}

impl FusionMode {
    /// Short name used in ablation tables.
    pub fn name(self) -> &'static str {
        match self {
            FusionMode::Learned => "learned",
            FusionMode::Max => "max",
            FusionMode::Mean => "mean",
            FusionMode::Concat => "concat",
        }
    }
}

/// Configuration of the fusion stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub mode: FusionMode,
    /// Hidden width of each branch's weighting MLP (learned mode).
    pub hidden: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig { mode: FusionMode::Learned, hidden: 256 }
    }
}

/// Bound parameters of one branch's weighting MLP.
#[derive(Debug, Clone, Copy)]
pub struct FusionMlpVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

/// Output width of the fusion stage for `branches` inputs of width `width`.
pub fn fused_width(mode: FusionMode, branches: usize, width: usize) -> usize {
    match mode {
        FusionMode::Concat => branches * width,
        _ => width,
    }
}

/// Stacks rank-1 branch descriptors into a `[B, W]` matrix.
fn stack(g: &mut Graph, feats: &[Var]) -> Result<Var> {
    let width = g.value(feats[0]).len();
    let mut rows = Vec::with_capacity(feats.len());
    for &f in feats {
        if g.value(f).len() != width || g.value(f).rank() != 1 {
            return Err(Error::dim(
                "fusion",
                format!(
                    "branch descriptors must be equal-length vectors, got {:?} vs width {width}",
                    g.value(f).shape()
                ),
            ));
        }
        rows.push(g.reshape(f, &[1, width])?);
    }
    g.concat(&rows, 0)
}

/// Per-channel convex weights over branches (shape `[B, W]`, columns sum to 1).
pub fn fusion_weights(g: &mut Graph, feats: &[Var], mlps: &[FusionMlpVars]) -> Result<Var> {
    if feats.is_empty() || feats.len() != mlps.len() {
        return Err(Error::dim(
            "fusion_weights",
            format!("{} descriptors for {} weighting MLPs", feats.len(), mlps.len()),
        ));
    }
    let width = g.value(feats[0]).len();
    let mut scored = Vec::with_capacity(feats.len());
    for (&f, mlp) in feats.iter().zip(mlps) {
        let row = g.reshape(f, &[1, width])?;
        let h = g.linear(row, mlp.w1, mlp.b1)?;
        let h = g.relu(h);
        let s = g.linear(h, mlp.w2, mlp.b2)?;
        scored.push(g.reshape(s, &[width])?);
    }
    let stacked = stack(g, &scored)?;
    g.softmax(stacked, 0)
}

/// Learned fusion returning both the fused vector and the weights `[B, W]`.
pub fn fuse_with_weights(
    g: &mut Graph,
    feats: &[Var],
    mlps: &[FusionMlpVars],
) -> Result<(Var, Var)> {
    let psi = fusion_weights(g, feats, mlps)?;
    let stacked = stack(g, feats)?;
    let weighted = g.mul(psi, stacked)?;
    let fused = g.sum_axis(weighted, 0)?;
    Ok((fused, psi))
}

/// Fuses branch descriptors into one vector.
///
/// `mlps` is required for [`FusionMode::Learned`] and ignored otherwise.
pub fn fuse(
    g: &mut Graph,
    feats: &[Var],
    mlps: Option<&[FusionMlpVars]>,
    mode: FusionMode,
) -> Result<Var> {
    if feats.is_empty() {
        return Err(Error::param("fuse", "need at least one branch descriptor"));
    }
    if feats.len() == 1 && mode != FusionMode::Learned {
        return Ok(feats[0]);
    }
    match mode {
        FusionMode::Learned => {
            let mlps = mlps.ok_or_else(|| {
                Error::State("learned fusion requires weighting MLP parameters".into())
            })?;
            Ok(fuse_with_weights(g, feats, mlps)?.0)
        }
        FusionMode::Max => {
            let stacked = stack(g, feats)?;
            let (m, _) = g.max_reduce(stacked, 0)?;
            Ok(m)
        }
        FusionMode::Mean => {
            let stacked = stack(g, feats)?;
            let s = g.sum_axis(stacked, 0)?;
            Ok(g.scale(s, 1.0 / feats.len() as f32))
        }
        FusionMode::Concat => g.concat(feats, 0),
    }
}

// ── tests ─────────────────────────────────────────────────────────────────
