//! Point-cloud containers and geometric primitives.
//!
//! Everything downstream of this module works on [`PointCloud`] values:
//! dense float coordinates with optional per-point unit normals and an
//! optional class label.  The module also provides the neighbourhood and
//! subsampling machinery (`knn`, `fps`, `random_sample`) and unit-sphere
//! normalisation shared by the data pipeline and the network layers.

mod dataset;
mod io;
mod synth;

pub use dataset::{Dataset, ManifestEntry, Split, read_manifest, synth_split, write_manifest};
pub use io::{export_ply_scalar, import_ply_scalar, load_cloud, save_cloud};
pub use synth::{Rotation, ShapeKind, SynthOptions, synth_generate, synth_spiked_sphere};

use std::sync::Arc;

use crate::error::{Error, Result, fmt_shape};
use crate::tensor::Tensor;

// ── point clouds ──────────────────────────────────────────────────────────

/// A set of 3-D points with optional per-point normals and a class label.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<[f32; 3]>,
    normals: Option<Vec<[f32; 3]>>,
    label: Option<u32>,
}

impl PointCloud {
    /// Builds a cloud from bare coordinates.
    pub fn new(points: Vec<[f32; 3]>) -> Result<Self> {
        Self::with_normals(points, None)
    }

    /// Builds a cloud with optional normals; validates finiteness and unit length.
    pub fn with_normals(points: Vec<[f32; 3]>, normals: Option<Vec<[f32; 3]>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::param("PointCloud::new", "cloud must contain at least one point"));
        }
        for (i, p) in points.iter().enumerate() {
            if !p.iter().all(|v| v.is_finite()) {
                return Err(Error::param("PointCloud::new", format!("point {i} has non-finite coordinates")));
            }
        }
        if let Some(ns) = &normals {
            if ns.len() != points.len() {
                return Err(Error::dim(
                    "PointCloud::new",
                    format!("{} normals for {} points", ns.len(), points.len()),
                ));
            }
            for (i, n) in ns.iter().enumerate() {
                let len = norm3(*n);
                if !len.is_finite() || (len - 1.0).abs() > 1e-3 {
                    return Err(Error::param(
                        "PointCloud::new",
                        format!("normal {i} has length {len}, expected unit"),
                    ));
                }
            }
        }
        Ok(Self { points, normals, label: None })
    }

    /// Attaches a class label.
    pub fn with_label(mut self, label: u32) -> Self {
        self.label = Some(label);
        self
    }

    /// Number of points.
    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// True when the cloud holds no points (never constructible via `new`).
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Borrow of the coordinate array.
    pub fn points(&self) -> &[[f32; 3]] {
        &self.points
    }

    /// Borrow of the normals, when present.
    pub fn normals(&self) -> Option<&[[f32; 3]]> {
        self.normals.as_deref()
    }

    /// The class label, when present.
    pub fn label(&self) -> Option<u32> {
        self.label
    }

    /// Flattens coordinates (and normals, when requested) into an `N x C` tensor.
    ///
    /// With `with_normals` the row layout is `[x y z nx ny nz]`; requesting
    /// normals on a cloud that has none is an error.
    pub fn to_tensor(&self, with_normals: bool) -> Result<Tensor> {
        let n = self.len();
        let cols = if with_normals { 6 } else { 3 };
        let mut data = Vec::with_capacity(n * cols);
        if with_normals {
            let normals = self
                .normals
                .as_ref()
                .ok_or_else(|| Error::param("PointCloud::to_tensor", "cloud has no normals"))?;
            for (p, nm) in self.points.iter().zip(normals) {
                data.extend_from_slice(p);
                data.extend_from_slice(nm);
            }
        } else {
            for p in &self.points {
                data.extend_from_slice(p);
            }
        }
        Tensor::new(vec![n, cols], data)
    }

    /// Returns the subset cloud given by `indices` (normals and label carried over).
    pub fn gather(&self, indices: &[u32]) -> Result<Self> {
        let n = self.len();
        let mut points = Vec::with_capacity(indices.len());
        let mut normals = self.normals.as_ref().map(|_| Vec::with_capacity(indices.len()));
        for &i in indices {
            let i = i as usize;
            if i >= n {
                return Err(crate::error::Error::Index {
                    op: "PointCloud::gather",
                    index: i,
                    extent: n,
                });
            }
            points.push(self.points[i]);
            if let (Some(out), Some(ns)) = (normals.as_mut(), self.normals.as_ref()) {
                out.push(ns[i]);
            }
        }
        Ok(Self { points, normals, label: self.label })
    }
}

// ── small vector helpers ──────────────────────────────────────────────────

#[inline]
pub(crate) fn sub3(a: [f32; 3], b: [f32; 3]) -> [f32; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub(crate) fn dot3(a: [f32; 3], b: [f32; 3]) -> f32 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub(crate) fn norm3(a: [f32; 3]) -> f32 {
    dot3(a, a).sqrt()
}

#[inline]
pub(crate) fn scale3(a: [f32; 3], s: f32) -> [f32; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

// ── normalisation ─────────────────────────────────────────────────────────

/// Centres a cloud on its centroid and scales the farthest point to radius 1.
///
/// Normals are directions and pass through unchanged.  A cloud whose points
/// all coincide has no scale and is rejected.
pub fn normalize_unit_sphere(cloud: &PointCloud) -> Result<PointCloud> {
    let n = cloud.len() as f64;
    let mut c = [0.0f64; 3];
    for p in cloud.points() {
        c[0] += p[0] as f64;
        c[1] += p[1] as f64;
        c[2] += p[2] as f64;
    }
    let centroid = [(c[0] / n) as f32, (c[1] / n) as f32, (c[2] / n) as f32];
    let mut max_norm = 0.0f32;
    for p in cloud.points() {
        max_norm = max_norm.max(norm3(sub3(*p, centroid)));
    }
    if max_norm < 1e-12 {
        return Err(crate::error::Error::Geometry(
            "cannot normalize a degenerate cloud: all points coincide".into(),
        ));
    }
    let inv = 1.0 / max_norm;
    let points = cloud
        .points()
        .iter()
        .map(|p| scale3(sub3(*p, centroid), inv))
        .collect();
    Ok(PointCloud {
        points,
        normals: cloud.normals.clone(),
        label: cloud.label,
    })
}

// ── neighbour search ──────────────────────────────────────────────────────

/// Which space a neighbour graph was computed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Space {
    /// Input coordinates.
    Coordinates,
    /// Intermediate layer features.
    Features,
}

/// A fixed-degree nearest-neighbour graph over `n` rows.
#[derive(Debug, Clone)]
pub struct NeighborGraph {
    n: usize,
    k: usize,
    space: Space,
    indices: Arc<Vec<u32>>,
}

impl NeighborGraph {
    /// Number of rows in the underlying set.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Neighbours per row.
    pub fn k(&self) -> usize {
        self.k
    }

    /// Space tag recorded at construction.
    pub fn space(&self) -> Space {
        self.space
    }

    /// The neighbour list of row `i`, ordered by (distance, index).
    pub fn row(&self, i: usize) -> &[u32] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    /// The flat `n * k` index table.
    pub fn flat(&self) -> &Arc<Vec<u32>> {
        &self.indices
    }
}

/// Exact k-nearest-neighbour search over `n` rows of `d`-dimensional data.
///
/// Self-matches are excluded.  Distance ties break toward the lower row
/// index, and each neighbour list is ordered by (distance, index) ascending.
pub fn knn(data: &[f32], n: usize, d: usize, k: usize, space: Space) -> Result<NeighborGraph> {
    if d == 0 || data.len() != n * d {
        return Err(Error::dim(
            "knn",
            format!("data of length {} does not form {} rows of width {}", data.len(), n, d),
        ));
    }
    if k == 0 || k >= n {
        return Err(Error::param("knn", format!("need 1 <= k < n, got k={k} with n={n}")));
    }
    let mut indices = vec![0u32; n * k];
    let mut scratch: Vec<(f32, u32)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        let row_i = &data[i * d..(i + 1) * d];
        scratch.clear();
        for j in 0..n {
            if j == i {
                continue;
            }
            let row_j = &data[j * d..(j + 1) * d];
            let mut dist = 0.0f32;
            for c in 0..d {
                let diff = row_i[c] - row_j[c];
                dist += diff * diff;
            }
            scratch.push((dist, j as u32));
        }
        let ord = |a: &(f32, u32), b: &(f32, u32)| {
            a.0.partial_cmp(&b.0).expect("finite distances").then(a.1.cmp(&b.1))
        };
        scratch.select_nth_unstable_by(k - 1, ord);
        scratch[..k].sort_unstable_by(ord);
        for (slot, &(_, j)) in scratch[..k].iter().enumerate() {
            indices[i * k + slot] = j;
        }
    }
    Ok(NeighborGraph { n, k, space, indices: Arc::new(indices) })
}

/// Convenience wrapper: neighbour graph over a coordinate array.
pub fn knn_points(points: &[[f32; 3]], k: usize) -> Result<NeighborGraph> {
    let flat: Vec<f32> = points.iter().flat_map(|p| p.iter().copied()).collect();
    knn(&flat, points.len(), 3, k, Space::Coordinates)
}

// ── subsampling ───────────────────────────────────────────────────────────

/// Farthest-point sampling: greedily grows a set that maximises the minimum
/// distance to the points already chosen.
///
/// The result is prefix-stable: `fps(p, m)` is a prefix of `fps(p, m + 1)`.
/// Ties pick the lowest index.
pub fn fps(points: &[[f32; 3]], m: usize, start: usize) -> Result<Vec<u32>> {
    let n = points.len();
    if m == 0 || m > n {
        return Err(Error::param("fps", format!("need 1 <= m <= n, got m={m} with n={n}")));
    }
    if start >= n {
        return Err(crate::error::Error::Index { op: "fps", index: start, extent: n });
    }
    let mut order = Vec::with_capacity(m);
    let mut chosen = vec![false; n];
    let mut min_d = vec![f32::INFINITY; n];
    let mut last = start;
    order.push(start as u32);
    chosen[start] = true;
    for _ in 1..m {
        let anchor = points[last];
        let mut best = usize::MAX;
        let mut best_d = f32::NEG_INFINITY;
        for (j, p) in points.iter().enumerate() {
            if chosen[j] {
                continue;
            }
            let diff = sub3(*p, anchor);
            let d = dot3(diff, diff);
            if d < min_d[j] {
                min_d[j] = d;
            }
            if min_d[j] > best_d {
                best_d = min_d[j];
                best = j;
            }
        }
        order.push(best as u32);
        chosen[best] = true;
        last = best;
    }
    Ok(order)
}

/// Uniform sampling of `m` distinct indices out of `n`, deterministic in `seed`.
pub fn random_sample(n: usize, m: usize, seed: u64) -> Result<Vec<u32>> {
    use rand::SeedableRng;
    if m == 0 || m > n {
        return Err(Error::param("random_sample", format!("need 1 <= m <= n, got m={m} with n={n}")));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, n, m);
    Ok(picks.iter().map(|i| i as u32).collect())
}

/// Formats a shape for error messages (re-exported for sibling modules).
#[allow(dead_code)]
pub(crate) fn shape_str(shape: &[usize]) -> String {
    fmt_shape(shape)
}

// ── tests ─────────────────────────────────────────────────────────────────
