//! Self-attentive point searching: rank points by attention mass.
//!
//! Two learned projections map per-point features into an attention space;
//! the softmax-normalised pairwise score matrix is then collapsed into one
//! scalar per point that measures how much attention the rest of the cloud
//! pays to it.  The highest- and lowest-scoring points form two "distinctive"
//! subsets that downstream branches consume.  Farthest-point and uniform
//! sampling are provided as drop-in alternatives for ablation runs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{fps, random_sample};
use crate::tensor::{Graph, Var};

/// Which axis of the pairwise score matrix the softmax normalises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizeAxis {
    /// Each column is a distribution over points (default).
    Column,
    /// Each row is a distribution over points.
    Row,
}

/// Strategy for picking the two point subsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Learned attention scores (the default pipeline).
    Attentive,
    /// Farthest-point sampling, split into two halves.
    Farthest,
    /// Seeded uniform sampling, split into two halves.
    Random,
}

impl Sampling {
    /// Short name used in ablation tables.
    pub fn name(self) -> &'static str {
        match self {
            Sampling::Attentive => "attentive",
            Sampling::Farthest => "farthest",
            Sampling::Random => "random",
        }
    }
}

/// Configuration of the attentive scorer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpsConfig {
    /// Width of the attention space both projections map into.
    pub attn_dim: usize,
    /// Softmax orientation over the score matrix.
    pub normalize_axis: NormalizeAxis,
}

impl Default for SpsConfig {
    fn default() -> Self {
        SpsConfig { attn_dim: 64, normalize_axis: NormalizeAxis::Column }
    }
}

/// Computes the per-point attention score vector (shape `[N]`).
///
/// `features` is `[N, C]`; `wg` and `wh` are `[C, D]` projections.  The score
/// matrix is normalised along `axis` and then reduced along the other axis,
/// so the scores of a cloud always sum to `N` regardless of orientation.
pub fn attentive_scores(
    g: &mut Graph,
    features: Var,
    wg: Var,
    wh: Var,
    axis: NormalizeAxis,
) -> Result<Var> {
    let fs = g.value(features).shape().to_vec();
    let gs = g.value(wg).shape().to_vec();
    let hs = g.value(wh).shape().to_vec();
    if fs.len() != 2 || gs.len() != 2 || hs.len() != 2 || gs != hs || fs[1] != gs[0] {
        return Err(Error::dim(
            "attentive_scores",
            format!("features {fs:?} with projections {gs:?} / {hs:?}"),
        ));
    }
    let proj_g = g.matmul(features, wg)?;
    let proj_h = g.matmul(features, wh)?;
    let scores = g.matmul_nt(proj_g, proj_h)?;
    match axis {
        NormalizeAxis::Column => {
            let attn = g.softmax(scores, 0)?;
            g.sum_axis(attn, 1)
        }
        NormalizeAxis::Row => {
            let attn = g.softmax(scores, 1)?;
            g.sum_axis(attn, 0)
        }
    }
}

/// Index sets of the `n1` highest- and `n1` lowest-scoring points.
///
/// Both sets are slices of one descending ranking (ties resolve toward the
/// lower index), so they are always disjoint; selection is deterministic.
/// The low set is returned lowest-score first.
pub fn select_distinctive(alpha: &[f32], n1: usize) -> Result<(Vec<u32>, Vec<u32>)> {
    let n = alpha.len();
    if n1 == 0 || 2 * n1 > n {
        return Err(Error::param(
            "select_distinctive",
            format!("need 1 <= n1 <= n/2, got n1={n1} with n={n}"),
        ));
    }
    if let Some(i) = alpha.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("attention score {i} is not finite")));
    }
    let mut order: Vec<u32> = (0..n as u32).collect();
    order.sort_by(|&a, &b| {
        alpha[b as usize]
            .partial_cmp(&alpha[a as usize])
            .expect("finite scores")
            .then(a.cmp(&b))
    });
    let high = order[..n1].to_vec();
    let low: Vec<u32> = order[n - n1..].iter().rev().copied().collect();
    Ok((high, low))
}

/// Ablation sampler: farthest-point order split into two interleaved halves.
pub fn farthest_sets(points: &[[f32; 3]], n1: usize, start: usize) -> Result<(Vec<u32>, Vec<u32>)> {
    if n1 == 0 || 2 * n1 > points.len() {
        return Err(Error::param(
            "farthest_sets",
            format!("need 1 <= n1 <= n/2, got n1={n1} with n={}", points.len()),
        ));
    }
    let order = fps(points, 2 * n1, start)?;
    Ok((order[..n1].to_vec(), order[n1..].to_vec()))
}

/// Ablation sampler: seeded uniform draw split into two halves.
pub fn random_sets(n: usize, n1: usize, seed: u64) -> Result<(Vec<u32>, Vec<u32>)> {
    if n1 == 0 || 2 * n1 > n {
        return Err(Error::param(
            "random_sets",
            format!("need 1 <= n1 <= n/2, got n1={n1} with n={n}"),
        ));
    }
    let order = random_sample(n, 2 * n1, seed)?;
    Ok((order[..n1].to_vec(), order[n1..].to_vec()))
}

// ── tests ─────────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};

    fn random_setup(seed: u64, n: usize, c: usize, d: usize) -> (Graph, Var, Var, Var) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut g = Graph::new();
        let mk = |rng: &mut rand_chacha::ChaCha8Rng, rows: usize, cols: usize| {
            Tensor::new(
                vec![rows, cols],
                (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap()
        };
        let f = mk(&mut rng, n, c);
        let wg = mk(&mut rng, c, d);
        let wh = mk(&mut rng, c, d);
        let f = g.input(f);
        let wg = g.param(&wg);
        let wh = g.param(&wh);
        (g, f, wg, wh)
    }

    #[test]
    fn scores_sum_to_point_count_in_both_orientations() {
        for seed in 0..5 {
            for axis in [NormalizeAxis::Column, NormalizeAxis::Row] {
                let (mut g, f, wg, wh) = random_setup(seed, 12 + seed as usize, 5, 4);
                let alpha = attentive_scores(&mut g, f, wg, wh, axis).unwrap();
                let t = g.value(alpha);
                assert_eq!(t.shape(), &[12 + seed as usize]);
                let total: f32 = t.data().iter().sum();
                let n = t.len() as f32;
                assert!((total - n).abs() < 1e-4, "sum {total} != {n} ({axis:?})");
                assert!(t.data().iter().all(|&v| v > 0.0), "scores stay positive");
            }
        }
    }

    #[test]
    fn identical_points_get_uniform_scores() {
        let mut g = Graph::new();
        let f = g.input(Tensor::new(vec![6, 3], vec![0.3; 18]).unwrap());
        let wg = g.param(&Tensor::new(vec![3, 4], (0..12).map(|i| i as f32 * 0.1).collect()).unwrap());
        let wh = g.param(&Tensor::new(vec![3, 4], (0..12).map(|i| 0.5 - i as f32 * 0.07).collect()).unwrap());
        let alpha = attentive_scores(&mut g, f, wg, wh, NormalizeAxis::Column).unwrap();
        for &v in g.value(alpha).data() {
            assert!((v - 1.0).abs() < 1e-5, "expected uniform unit score, got {v}");
        }
    }

    #[test]
    fn both_projections_receive_gradient_through_scores() {
        let (mut g, f, wg, wh) = random_setup(9, 10, 4, 3);
        let alpha = attentive_scores(&mut g, f, wg, wh, NormalizeAxis::Column).unwrap();
        // A plain sum is constant (scores always sum to N), so weight the
        // scores before reducing, as any downstream consumer effectively does.
        let weights = g.input(Tensor::new(vec![10], (0..10).map(|i| (i as f32).sin()).collect()).unwrap());
        let weighted = g.mul(alpha, weights).unwrap();
        let loss = g.sum_all(weighted);
        g.backward(loss).unwrap();
        for (name, var) in [("wg", wg), ("wh", wh)] {
            let norm: f32 = g.grad(var).unwrap().iter().map(|v| v * v).sum::<f32>().sqrt();
            assert!(norm > 1e-8, "{name} gradient must be nonzero, got {norm}");
        }
    }

    #[test]
    fn shape_mismatches_are_rejected() {
        let (mut g, f, wg, _) = random_setup(1, 8, 4, 3);
        let bad = g.param(&Tensor::new(vec![5, 3], vec![0.1; 15]).unwrap());
        assert!(attentive_scores(&mut g, f, wg, bad, NormalizeAxis::Column).is_err());
    }

    #[test]
    fn selection_matches_hand_ranking() {
        let (high, low) = select_distinctive(&[0.5, 2.0, 1.0, 0.25], 2).unwrap();
        assert_eq!(high, vec![1, 2]);
        assert_eq!(low, vec![3, 0]);
    }

    #[test]
    fn selection_stays_disjoint_under_ties() {
        let (high, low) = select_distinctive(&[1.0, 1.0, 1.0, 1.0], 2).unwrap();
        assert_eq!(high, vec![0, 1]);
        assert_eq!(low, vec![3, 2]);
    }

    #[test]
    fn selection_validates_input() {
        assert!(select_distinctive(&[1.0, 2.0, 3.0], 2).is_err());
        assert!(select_distinctive(&[1.0, 2.0], 0).is_err());
        assert!(matches!(
            select_distinctive(&[1.0, f32::NAN, 0.0, 0.5], 2).unwrap_err(),
            Error::Numeric(_)
        ));
    }

    #[test]
    fn ablation_samplers_produce_disjoint_halves() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<[f32; 3]> = (0..30)
            .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let (fh, fl) = farthest_sets(&pts, 10, 0).unwrap();
        let (rh, rl) = random_sets(30, 10, 5).unwrap();
        for (h, l) in [(&fh, &fl), (&rh, &rl)] {
            assert_eq!(h.len(), 10);
            assert_eq!(l.len(), 10);
            assert!(h.iter().all(|i| !l.contains(i)), "halves must be disjoint");
        }
        let (rh2, rl2) = random_sets(30, 10, 5).unwrap();
        assert_eq!((rh.clone(), rl.clone()), (rh2, rl2), "random sets are seed-deterministic");
        assert!(farthest_sets(&pts, 16, 0).is_err());
        assert!(random_sets(30, 16, 1).is_err());
    }
}
