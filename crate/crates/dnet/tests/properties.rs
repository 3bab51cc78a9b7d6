//! Property tests for the geometric utilities and the attention/fusion math.
//!
//! Each block states an invariant the implementation must hold for *every*
//! input, then lets proptest hunt for counterexamples: score vectors always
//! sum to the point count, selections stay disjoint and monotone, neighbor
//! queries agree with a brute-force oracle, fused descriptors stay inside the
//! per-channel convex hull of their inputs, and so on.

use proptest::prelude::*;

use dnet::fusion::{fuse, fuse_with_weights, fusion_weights, FusionMlpVars, FusionMode};
use dnet::geometry::{fps, knn, normalize_unit_sphere, PointCloud, Space};
use dnet::sps::{attentive_scores, select_distinctive, NormalizeAxis};
use dnet::tensor::{Graph, Tensor, Var};

// ── strategies ──────────────────────────────────────────────────────────────

fn coord() -> impl Strategy<Value = f32> {
    // Finite, spread over a few orders of magnitude, no NaN/inf.
    prop_oneof![(-8.0f32..8.0), (-0.05f32..0.05)]
}

fn points(min: usize, max: usize) -> impl Strategy<Value = Vec<[f32; 3]>> {
    prop::collection::vec([coord(), coord(), coord()], min..=max)
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(-2.0f32..2.0, rows * cols)
}

fn tensor_input(g: &mut Graph, shape: &[usize], data: Vec<f32>) -> Var {
    g.input(Tensor::new(shape.to_vec(), data).unwrap())
}

/// Clouds whose points are not all identical, so the radius is positive.
fn spread_points(min: usize, max: usize) -> impl Strategy<Value = Vec<[f32; 3]>> {
    points(min, max).prop_filter("needs nonzero extent", |pts| {
        pts.iter().any(|p| {
            (0..3).any(|c| (p[c] - pts[0][c]).abs() > 1e-3)
        })
    })
}

// ── normalization ───────────────────────────────────────────────────────────

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normalization_centers_and_bounds(pts in spread_points(4, 48)) {
        let cloud = PointCloud::new(pts).unwrap();
        let out = normalize_unit_sphere(&cloud).unwrap();
        let n = out.len() as f32;
        let mut centroid = [0.0f64; 3];
        let mut max_r2 = 0.0f64;
        for p in out.points() {
            for c in 0..3 {
                centroid[c] += p[c] as f64 / n as f64;
            }
            let r2 = p.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>();
            max_r2 = max_r2.max(r2);
        }
        for c in 0..3 {
            prop_assert!(centroid[c].abs() < 1e-4, "centroid {centroid:?}");
        }
        let max_r = max_r2.sqrt();
        prop_assert!((max_r - 1.0).abs() < 1e-4, "max radius {max_r}");
    }

    #[test]
    fn normalization_is_idempotent(pts in spread_points(4, 48)) {
        let once = normalize_unit_sphere(&PointCloud::new(pts).unwrap()).unwrap();
        let twice = normalize_unit_sphere(&once).unwrap();
        for (a, b) in once.points().iter().zip(twice.points()) {
            for c in 0..3 {
                prop_assert!((a[c] - b[c]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn normalization_ignores_pose_scale_and_shift(
        pts in spread_points(4, 32),
        scale in 0.05f32..20.0,
        shift in [(-50.0f32..50.0), (-50.0f32..50.0), (-50.0f32..50.0)],
    ) {
        let base = normalize_unit_sphere(&PointCloud::new(pts.clone()).unwrap()).unwrap();
        let moved: Vec<[f32; 3]> = pts
            .iter()
            .map(|p| [p[0] * scale + shift[0], p[1] * scale + shift[1], p[2] * scale + shift[2]])
            .collect();
        let renorm = normalize_unit_sphere(&PointCloud::new(moved).unwrap()).unwrap();
        for (a, b) in base.points().iter().zip(renorm.points()) {
            for c in 0..3 {
                prop_assert!((a[c] - b[c]).abs() < 2e-3, "{a:?} vs {b:?}");
            }
        }
    }
}

// ── attention scores and selection ──────────────────────────────────────────

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn scores_sum_to_point_count(
        n in 3usize..24,
        feats in prop::collection::vec(-3.0f32..3.0, 24 * 5),
        w in matrix(5, 4),
        v in matrix(5, 4),
        column in any::<bool>(),
    ) {
        let axis = if column { NormalizeAxis::Column } else { NormalizeAxis::Row };
        let mut g = Graph::new();
        let f = tensor_input(&mut g, &[n, 5], feats[..n * 5].to_vec());
        let wg = tensor_input(&mut g, &[5, 4], w);
        let wh = tensor_input(&mut g, &[5, 4], v);
        let alpha = attentive_scores(&mut g, f, wg, wh, axis).unwrap();
        let t = g.value(alpha);
        prop_assert_eq!(t.shape(), &[n][..]);
        let sum: f32 = t.data().iter().sum();
        prop_assert!((sum - n as f32).abs() < 1e-4, "sum {} for n {}", sum, n);
        prop_assert!(t.data().iter().all(|&a| a > 0.0 && a.is_finite()));
    }

    #[test]
    fn selection_sets_are_disjoint_and_extremal(
        alpha in prop::collection::vec(-5.0f32..5.0, 2..40),
        pick in 1usize..20,
    ) {
        let n1 = pick.min(alpha.len() / 2);
        prop_assume!(n1 >= 1);
        let (high, low) = select_distinctive(&alpha, n1).unwrap();
        prop_assert_eq!(high.len(), n1);
        prop_assert_eq!(low.len(), n1);
        prop_assert!(high.iter().all(|i| !low.contains(i)), "high/low overlap");

        // Every selected high score >= every unselected score, and the mirror
        // statement for low.
        let in_high = |i: u32| high.contains(&i);
        let in_low = |i: u32| low.contains(&i);
        let min_high = high.iter().map(|&i| alpha[i as usize]).fold(f32::INFINITY, f32::min);
        let max_low = low.iter().map(|&i| alpha[i as usize]).fold(f32::NEG_INFINITY, f32::max);
        for i in 0..alpha.len() as u32 {
            if !in_high(i) {
                prop_assert!(alpha[i as usize] <= min_high);
            }
            if !in_low(i) {
                prop_assert!(alpha[i as usize] >= max_low);
            }
        }
    }

    #[test]
    fn selection_is_monotone_in_single_scores(
        mut alpha in prop::collection::vec(-1.0f32..1.0, 6..24),
        raise in 0usize..24,
    ) {
        let n1 = alpha.len() / 3;
        prop_assume!(n1 >= 1);
        let target = raise % alpha.len();
        let (high, _) = select_distinctive(&alpha, n1).unwrap();
        // Push one score strictly above the current maximum: it must now be
        // selected, and nothing that was below the old threshold may enter.
        let top = alpha.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
        alpha[target] = top + 1.0;
        let (raised, _) = select_distinctive(&alpha, n1).unwrap();
        prop_assert!(raised.contains(&(target as u32)), "raised point must be selected");
        for &i in &raised {
            prop_assert!(
                i == target as u32 || high.contains(&i),
                "selection admitted {} which was not previously high",
                i
            );
        }
    }
}

// ── neighbor search and farthest point sampling ─────────────────────────────

/// Brute-force k nearest neighbors by full sort; ties by lower index.
fn knn_oracle(pts: &[[f32; 3]], k: usize) -> Vec<Vec<u32>> {
    let n = pts.len();
    (0..n)
        .map(|i| {
            let mut order: Vec<u32> = (0..n as u32).filter(|&j| j as usize != i).collect();
            order.sort_by(|&a, &b| {
                let da: f32 = (0..3).map(|c| (pts[i][c] - pts[a as usize][c]).powi(2)).sum();
                let db: f32 = (0..3).map(|c| (pts[i][c] - pts[b as usize][c]).powi(2)).sum();
                da.partial_cmp(&db).unwrap().then(a.cmp(&b))
            });
            order.truncate(k);
            order
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn knn_matches_brute_force_oracle(pts in points(3, 40), k in 1usize..8) {
        let k = k.min(pts.len() - 1);
        let flat: Vec<f32> = pts.iter().flatten().copied().collect();
        let graph = knn(&flat, pts.len(), 3, k, Space::Coordinates).unwrap();
        let oracle = knn_oracle(&pts, k);
        for (i, want) in oracle.iter().enumerate() {
            prop_assert_eq!(graph.row(i), &want[..], "row {}", i);
        }
    }

    #[test]
    fn fps_orders_are_prefix_consistent(pts in points(5, 40), m_small in 2usize..10) {
        let n = pts.len();
        let m_small = m_small.min(n);
        let full = fps(&pts, n, 0).unwrap();
        let part = fps(&pts, m_small, 0).unwrap();
        prop_assert_eq!(&full[..m_small], &part[..], "prefix property");
        prop_assert_eq!(full[0], 0, "sampling starts at the requested point");
        let mut seen = full.clone();
        seen.sort_unstable();
        seen.dedup();
        prop_assert_eq!(seen.len(), n, "every point appears exactly once");
    }
}

// ── fusion ──────────────────────────────────────────────────────────────────

fn fusion_setup(
    g: &mut Graph,
    branches: usize,
    width: usize,
    feats: &[f32],
    weights: &[f32],
) -> (Vec<Var>, Vec<FusionMlpVars>) {
    let hidden = 3;
    let vars: Vec<Var> = (0..branches)
        .map(|b| tensor_input(g, &[width], feats[b * width..(b + 1) * width].to_vec()))
        .collect();
    let per = width * hidden + hidden + hidden * width + width;
    let mlps: Vec<FusionMlpVars> = (0..branches)
        .map(|b| {
            let base = b * per;
            let w1 = &weights[base..base + width * hidden];
            let b1 = &weights[base + width * hidden..base + width * hidden + hidden];
            let w2 = &weights[base + width * hidden + hidden..base + per - width];
            let b2 = &weights[base + per - width..base + per];
            FusionMlpVars {
                w1: tensor_input(g, &[width, hidden], w1.to_vec()),
                b1: tensor_input(g, &[hidden], b1.to_vec()),
                w2: tensor_input(g, &[hidden, width], w2.to_vec()),
                b2: tensor_input(g, &[width], b2.to_vec()),
            }
        })
        .collect();
    (vars, mlps)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fusion_weights_are_convex_and_fused_stays_in_hull(
        branches in 2usize..5,
        width in 2usize..7,
        seed_feats in prop::collection::vec(-4.0f32..4.0, 4 * 6),
        seed_w in prop::collection::vec(-1.5f32..1.5, 4 * (6 * 3 + 3 + 3 * 6 + 6)),
    ) {
        let per = width * 3 + 3 + 3 * width + width;
        prop_assume!(seed_feats.len() >= branches * width);
        prop_assume!(seed_w.len() >= branches * per);
        let mut g = Graph::new();
        let (feats, mlps) = fusion_setup(&mut g, branches, width, &seed_feats, &seed_w);

        let psi = fusion_weights(&mut g, &feats, &mlps).unwrap();
        let pt = g.value(psi).clone();
        prop_assert_eq!(pt.shape(), &[branches, width][..]);
        for j in 0..width {
            let col: f32 = (0..branches).map(|b| pt.data()[b * width + j]).sum();
            prop_assert!((col - 1.0).abs() < 1e-6, "column {} sums to {}", j, col);
        }
        prop_assert!(pt.data().iter().all(|&v| (0.0..=1.0).contains(&v)));

        let (fused, _) = fuse_with_weights(&mut g, &feats, &mlps).unwrap();
        let fv = g.value(fused).clone();
        for j in 0..width {
            let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
            for f in &feats {
                let v = g.value(*f).data()[j];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            let v = fv.data()[j];
            prop_assert!(
                v >= lo - 1e-5 && v <= hi + 1e-5,
                "channel {} escaped the hull: {} not in [{}, {}]",
                j, v, lo, hi,
            );
        }
    }

    #[test]
    fn mean_and_max_fusion_agree_with_scalar_math(
        width in 2usize..7,
        seed_feats in prop::collection::vec(-4.0f32..4.0, 3 * 6),
    ) {
        prop_assume!(seed_feats.len() >= 3 * width);
        let mut g = Graph::new();
        let feats: Vec<Var> = (0..3)
            .map(|b| tensor_input(&mut g, &[width], seed_feats[b * width..(b + 1) * width].to_vec()))
            .collect();
        let mean = fuse(&mut g, &feats, None, FusionMode::Mean).unwrap();
        let max = fuse(&mut g, &feats, None, FusionMode::Max).unwrap();
        let cat = fuse(&mut g, &feats, None, FusionMode::Concat).unwrap();
        prop_assert_eq!(g.value(cat).len(), 3 * width);
        for j in 0..width {
            let vals: Vec<f32> = (0..3).map(|b| seed_feats[b * width + j]).collect();
            let want_mean = vals.iter().sum::<f32>() / 3.0;
            let want_max = vals.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
            prop_assert!((g.value(mean).data()[j] - want_mean).abs() < 1e-6);
            prop_assert!((g.value(max).data()[j] - want_max).abs() < 1e-6);
        }
    }
}

// ── softmax / cross-entropy ────────────────────────────────────────────────

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn softmax_rows_are_distributions(
        rows in 1usize..6,
        cols in 2usize..8,
        data in prop::collection::vec(-30.0f32..30.0, 5 * 7),
    ) {
        prop_assume!(data.len() >= rows * cols);
        let mut g = Graph::new();
        let x = tensor_input(&mut g, &[rows, cols], data[..rows * cols].to_vec());
        let s = g.softmax(x, 1).unwrap();
        let t = g.value(s);
        for r in 0..rows {
            let row = &t.data()[r * cols..(r + 1) * cols];
            let sum: f32 = row.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-6, "row {} sums to {}", r, sum);
            prop_assert!(row.iter().all(|&v| v > 0.0 && v.is_finite()));
        }
    }

    #[test]
    fn cross_entropy_matches_log_softmax(
        cols in 2usize..8,
        data in prop::collection::vec(-10.0f32..10.0, 7),
        label in 0usize..7,
    ) {
        prop_assume!(data.len() >= cols);
        let label = (label % cols) as u32;
        let mut g = Graph::new();
        let x = tensor_input(&mut g, &[1, cols], data[..cols].to_vec());
        let loss = g.cross_entropy(x, &[label]).unwrap();
        let got = g.value(loss).data()[0] as f64;

        let logits: Vec<f64> = data[..cols].iter().map(|&v| v as f64).collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|v| (v - m).exp()).sum();
        let want = -(logits[label as usize] - m - z.ln());
        prop_assert!((got - want).abs() < 1e-4, "{} vs {}", got, want);
        prop_assert!(got >= 0.0);
    }
}
