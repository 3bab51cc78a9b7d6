//! Synthetic shape corpus: eight parametric surfaces with analytic normals.
//!
//! Each generator draws points uniformly by surface area, attaches the exact
//! surface normal, then (optionally) rotates the shape, perturbs coordinates
//! with Gaussian noise, and normalises the result into the unit sphere.  The
//! surface stream and the jitter stream are seeded independently so that two
//! clouds can share an identical underlying surface while receiving different
//! noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{PointCloud, normalize_unit_sphere, scale3};
use crate::error::{Error, Result};

/// Decouples the jitter stream from a surface stream using the same seed.
const JITTER_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

/// The eight shape classes of the synthetic corpus, in label order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShapeKind {
    Sphere,
    Cube,
    Cylinder,
    Cone,
    Torus,
    Pyramid,
    PlaneCross,
    Capsule,
}

impl ShapeKind {
    /// All classes in label order.
    pub const ALL: [ShapeKind; 8] = [
        ShapeKind::Sphere,
        ShapeKind::Cube,
        ShapeKind::Cylinder,
        ShapeKind::Cone,
        ShapeKind::Torus,
        ShapeKind::Pyramid,
        ShapeKind::PlaneCross,
        ShapeKind::Capsule,
    ];

    /// The integer class label.
    pub fn label(self) -> u32 {
        Self::ALL.iter().position(|&k| k == self).unwrap() as u32
    }

    /// Looks a class up by label.
    pub fn from_label(label: u32) -> Option<ShapeKind> {
        Self::ALL.get(label as usize).copied()
    }

    /// Lower-case class name.
    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Sphere => "sphere",
            ShapeKind::Cube => "cube",
            ShapeKind::Cylinder => "cylinder",
            ShapeKind::Cone => "cone",
            ShapeKind::Torus => "torus",
            ShapeKind::Pyramid => "pyramid",
            ShapeKind::PlaneCross => "plane_cross",
            ShapeKind::Capsule => "capsule",
        }
    }

    /// Looks a class up by name.
    pub fn from_name(name: &str) -> Option<ShapeKind> {
        Self::ALL.iter().copied().find(|k| k.name() == name)
    }
}

/// Random rigid rotation applied to a generated shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rotation {
    /// Keep the canonical pose.
    None,
    /// Uniform rotation about the vertical axis.
    AboutZ,
    /// Uniform rotation over all orientations.
    Full,
}

/// Knobs for [`synth_generate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthOptions {
    /// Standard deviation of the isotropic Gaussian coordinate noise.
    pub noise_sigma: f32,
    /// Pose randomisation; vertical-axis rotation by default.
    pub rotation: Rotation,
    /// When set, the surface points are drawn from this seed instead of the
    /// main seed, so different jitter seeds reuse the same surface.
    pub surface_seed: Option<u64>,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions { noise_sigma: 0.0, rotation: Rotation::AboutZ, surface_seed: None }
    }
}

/// Generates one labelled cloud: sample surface, rotate, add noise, normalise.
pub fn synth_generate(
    kind: ShapeKind,
    n_points: usize,
    opts: &SynthOptions,
    seed: u64,
) -> Result<PointCloud> {
    if n_points < 2 {
        return Err(Error::param("synth_generate", format!("need at least 2 points, got {n_points}")));
    }
    if !opts.noise_sigma.is_finite() || opts.noise_sigma < 0.0 {
        return Err(Error::param(
            "synth_generate",
            format!("noise_sigma must be finite and non-negative, got {}", opts.noise_sigma),
        ));
    }
    let mut surface_rng = ChaCha8Rng::seed_from_u64(opts.surface_seed.unwrap_or(seed));
    let (mut points, mut normals) = sample_surface(kind, n_points, &mut surface_rng);

    let mut jitter_rng = ChaCha8Rng::seed_from_u64(seed ^ JITTER_SALT);
    match opts.rotation {
        Rotation::None => {}
        Rotation::AboutZ => {
            let theta = jitter_rng.gen_range(0.0..std::f64::consts::TAU);
            let rot = rot_z(theta);
            apply_rotation(&rot, &mut points, &mut normals);
        }
        Rotation::Full => {
            let rot = random_rotation(&mut jitter_rng);
            apply_rotation(&rot, &mut points, &mut normals);
        }
    }
    if opts.noise_sigma > 0.0 {
        let gauss = Normal::new(0.0f32, opts.noise_sigma)
            .map_err(|e| Error::param("synth_generate", format!("bad noise distribution: {e}")))?;
        for p in &mut points {
            for c in p.iter_mut() {
                *c += gauss.sample(&mut jitter_rng);
            }
        }
    }
    let cloud = PointCloud::with_normals(points, Some(normals))?;
    Ok(normalize_unit_sphere(&cloud)?.with_label(kind.label()))
}

/// Generates a per-point-labelled cloud: a sphere (label 0) with a thin spike
/// protruding along +z (label 1), for segmentation tests.
///
/// Roughly `spike_fraction` of the points land on the spike.  The same
/// rotation/noise/normalisation pipeline as [`synth_generate`] applies, so
/// per-point labels stay aligned with their points.
pub fn synth_spiked_sphere(
    n_points: usize,
    spike_fraction: f32,
    opts: &SynthOptions,
    seed: u64,
) -> Result<(PointCloud, Vec<u32>)> {
    if n_points < 4 {
        return Err(Error::param("synth_spiked_sphere", "need at least 4 points"));
    }
    if !(0.0..1.0).contains(&spike_fraction) || spike_fraction <= 0.0 {
        return Err(Error::param(
            "synth_spiked_sphere",
            format!("spike_fraction must be in (0, 1), got {spike_fraction}"),
        ));
    }
    let mut surface_rng = ChaCha8Rng::seed_from_u64(opts.surface_seed.unwrap_or(seed));
    let mut points = Vec::with_capacity(n_points);
    let mut normals = Vec::with_capacity(n_points);
    let mut labels = Vec::with_capacity(n_points);
    for _ in 0..n_points {
        if surface_rng.gen_range(0.0f32..1.0) < spike_fraction {
            // Thin cylinder of radius 0.06 from the north pole out to z = 1.8.
            let (c, s) = unit_circle(&mut surface_rng);
            let z = surface_rng.gen_range(1.0f32..1.8);
            points.push([0.06 * c, 0.06 * s, z]);
            normals.push([c, s, 0.0]);
            labels.push(1);
        } else {
            let (p, nm) = sample_sphere(&mut surface_rng);
            points.push(p);
            normals.push(nm);
            labels.push(0);
        }
    }
    let mut jitter_rng = ChaCha8Rng::seed_from_u64(seed ^ JITTER_SALT);
    match opts.rotation {
        Rotation::None => {}
        Rotation::AboutZ => {
            let theta = jitter_rng.gen_range(0.0..std::f64::consts::TAU);
            let rot = rot_z(theta);
            apply_rotation(&rot, &mut points, &mut normals);
        }
        Rotation::Full => {
            let rot = random_rotation(&mut jitter_rng);
            apply_rotation(&rot, &mut points, &mut normals);
        }
    }
    if opts.noise_sigma > 0.0 {
        let gauss = Normal::new(0.0f32, opts.noise_sigma)
            .map_err(|e| Error::param("synth_spiked_sphere", format!("bad noise distribution: {e}")))?;
        for p in &mut points {
            for c in p.iter_mut() {
                *c += gauss.sample(&mut jitter_rng);
            }
        }
    }
    let cloud = PointCloud::with_normals(points, Some(normals))?;
    Ok((normalize_unit_sphere(&cloud)?, labels))
}

// ── rotations ─────────────────────────────────────────────────────────────

type Mat3 = [[f32; 3]; 3];

fn rot_z(theta: f64) -> Mat3 {
    let (s, c) = (theta.sin() as f32, theta.cos() as f32);
    [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}

/// Uniform random rotation via a uniformly distributed unit quaternion.
fn random_rotation(rng: &mut ChaCha8Rng) -> Mat3 {
    let u1: f64 = rng.gen_range(0.0..1.0);
    let u2: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let u3: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let (x, y, z, w) = (a * u2.sin(), a * u2.cos(), b * u3.sin(), b * u3.cos());
    let (x2, y2, z2) = (x * x, y * y, z * z);
    [
        [
            (1.0 - 2.0 * (y2 + z2)) as f32,
            (2.0 * (x * y - z * w)) as f32,
            (2.0 * (x * z + y * w)) as f32,
        ],
        [
            (2.0 * (x * y + z * w)) as f32,
            (1.0 - 2.0 * (x2 + z2)) as f32,
            (2.0 * (y * z - x * w)) as f32,
        ],
        [
            (2.0 * (x * z - y * w)) as f32,
            (2.0 * (y * z + x * w)) as f32,
            (1.0 - 2.0 * (x2 + y2)) as f32,
        ],
    ]
}

fn mat_apply(m: &Mat3, v: [f32; 3]) -> [f32; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

fn apply_rotation(m: &Mat3, points: &mut [[f32; 3]], normals: &mut [[f32; 3]]) {
    for p in points.iter_mut() {
        *p = mat_apply(m, *p);
    }
    for n in normals.iter_mut() {
        *n = mat_apply(m, *n);
    }
}

// ── surface samplers ──────────────────────────────────────────────────────

/// Draws `n` area-uniform samples with outward unit normals in canonical pose.
fn sample_surface(kind: ShapeKind, n: usize, rng: &mut ChaCha8Rng) -> (Vec<[f32; 3]>, Vec<[f32; 3]>) {
    let mut points = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    for _ in 0..n {
        let (p, nm) = match kind {
            ShapeKind::Sphere => sample_sphere(rng),
            ShapeKind::Cube => sample_cube(rng),
            ShapeKind::Cylinder => sample_cylinder(rng),
            ShapeKind::Cone => sample_cone(rng),
            ShapeKind::Torus => sample_torus(rng),
            ShapeKind::Pyramid => sample_pyramid(rng),
            ShapeKind::PlaneCross => sample_plane_cross(rng),
            ShapeKind::Capsule => sample_capsule(rng),
        };
        points.push(p);
        normals.push(nm);
    }
    (points, normals)
}

/// Picks a part index with probability proportional to its weight.
fn pick_part(rng: &mut ChaCha8Rng, weights: &[f32]) -> usize {
    let total: f32 = weights.iter().sum();
    let mut draw = rng.gen_range(0.0..total);
    for (i, w) in weights.iter().enumerate() {
        if draw < *w {
            return i;
        }
        draw -= w;
    }
    weights.len() - 1
}

fn unit_circle(rng: &mut ChaCha8Rng) -> (f32, f32) {
    let phi = rng.gen_range(0.0..std::f32::consts::TAU);
    (phi.cos(), phi.sin())
}

fn sample_sphere(rng: &mut ChaCha8Rng) -> ([f32; 3], [f32; 3]) {
    let z = rng.gen_range(-1.0f32..=1.0);
    let (c, s) = unit_circle(rng);
    let r = (1.0 - z * z).max(0.0).sqrt();
    let dir = [r * c, r * s, z];
    (dir, dir)
}

fn sample_cube(rng: &mut ChaCha8Rng) -> ([f32; 3], [f32; 3]) {
    let face = rng.gen_range(0..6u32);
    let axis = (face / 2) as usize;
    let sign = if face % 2 == 0 { 1.0f32 } else { -1.0 };
    let u = rng.gen_range(-1.0f32..1.0);
    let v = rng.gen_range(-1.0f32..1.0);
    let mut p = [0.0f32; 3];
    p[axis] = sign;
    p[(axis + 1) % 3] = u;
    p[(axis + 2) % 3] = v;
    let mut nm = [0.0f32; 3];
    nm[axis] = sign;
    (p, nm)
}

fn sample_cylinder(rng: &mut ChaCha8Rng) -> ([f32; 3], [f32; 3]) {
    const R: f32 = 0.7;
    const H: f32 = 1.0; // half-height
    let lateral = std::f32::consts::TAU * R * 2.0 * H;
    let cap = std::f32::consts::PI * R * R;
    match pick_part(rng, &[lateral, cap, cap]) {
        0 => {
            let (c, s) = unit_circle(rng);
            let z = rng.gen_range(-H..H);
            ([R * c, R * s, z], [c, s, 0.0])
        }
        part => {
            let sign = if part == 1 { 1.0 } else { -1.0 };
            let rad = R * rng.gen_range(0.0f32..1.0).sqrt();
            let (c, s) = unit_circle(rng);
            ([rad * c, rad * s, sign * H], [0.0, 0.0, sign])
        }
    }
}

fn sample_cone(rng: &mut ChaCha8Rng) -> ([f32; 3], [f32; 3]) {
    const R: f32 = 1.0; // base radius at z = -1
    const H: f32 = 2.0; // apex at z = +1
    let slant = (R * R + H * H).sqrt();
    let lateral = std::f32::consts::PI * R * slant;
    let base = std::f32::consts::PI * R * R;
    if pick_part(rng, &[lateral, base]) == 0 {
        // Fraction from apex grows as sqrt(u) so rings are area-uniform.
        let t = rng.gen_range(0.0f32..1.0).sqrt();
        let (c, s) = unit_circle(rng);
        let p = [t * R * c, t * R * s, 1.0 - t * H];
        let inv = 1.0 / slant;
        (p, [H * c * inv, H * s * inv, R * inv])
    } else {
        let rad = R * rng.gen_range(0.0f32..1.0).sqrt();
        let (c, s) = unit_circle(rng);
        ([rad * c, rad * s, -1.0], [0.0, 0.0, -1.0])
    }
}

fn sample_torus(rng: &mut ChaCha8Rng) -> ([f32; 3], [f32; 3]) {
    const MAJOR: f32 = 1.0;
    const MINOR: f32 = 0.35;
    // Rejection keeps tube angles in proportion to their circumference.
    let theta = loop {
        let theta = rng.gen_range(0.0..std::f32::consts::TAU);
        let accept = (MAJOR + MINOR * theta.cos()) / (MAJOR + MINOR);
        if rng.gen_range(0.0f32..1.0) < accept {
            break theta;
        }
    };
    let (pc, ps) = unit_circle(rng);
    let (tc, ts) = (theta.cos(), theta.sin());
    let ring = MAJOR + MINOR * tc;
    ([ring * pc, ring * ps, MINOR * ts], [tc * pc, tc * ps, ts])
}

fn sample_pyramid(rng: &mut ChaCha8Rng) -> ([f32; 3], [f32; 3]) {
    const BASE_Z: f32 = -0.8;
    const APEX: [f32; 3] = [0.0, 0.0, 1.2];
    const HALF: f32 = 1.0;
    let base_area = 4.0 * HALF * HALF;
    // Lateral face: triangle over one base edge, all four congruent.
    let h = APEX[2] - BASE_Z;
    let face_area = HALF * (h * h + HALF * HALF).sqrt() * 2.0;
    match pick_part(rng, &[base_area, face_area, face_area, face_area, face_area]) {
        0 => {
            let u = rng.gen_range(-HALF..HALF);
            let v = rng.gen_range(-HALF..HALF);
            ([u, v, BASE_Z], [0.0, 0.0, -1.0])
        }
        part => {
            // Corners of the base edge for faces +x, +y, -x, -y.
            let (a, b) = match part {
                1 => ([HALF, -HALF, BASE_Z], [HALF, HALF, BASE_Z]),
                2 => ([HALF, HALF, BASE_Z], [-HALF, HALF, BASE_Z]),
                3 => ([-HALF, HALF, BASE_Z], [-HALF, -HALF, BASE_Z]),
                _ => ([-HALF, -HALF, BASE_Z], [HALF, -HALF, BASE_Z]),
            };
            let p = sample_triangle(rng, a, b, APEX);
            let nm = triangle_normal(a, b, APEX);
            (p, nm)
        }
    }
}

fn sample_plane_cross(rng: &mut ChaCha8Rng) -> ([f32; 3], [f32; 3]) {
    let u = rng.gen_range(-1.0f32..1.0);
    let v = rng.gen_range(-1.0f32..1.0);
    if rng.gen_range(0..2u32) == 0 {
        ([u, v, 0.0], [0.0, 0.0, 1.0])
    } else {
        ([0.0, u, v], [1.0, 0.0, 0.0])
    }
}

fn sample_capsule(rng: &mut ChaCha8Rng) -> ([f32; 3], [f32; 3]) {
    const R: f32 = 0.45;
    const H: f32 = 0.55; // half-height of the cylindrical body
    let lateral = std::f32::consts::TAU * R * 2.0 * H;
    let caps = 4.0 * std::f32::consts::PI * R * R;
    if pick_part(rng, &[lateral, caps]) == 0 {
        let (c, s) = unit_circle(rng);
        let z = rng.gen_range(-H..H);
        ([R * c, R * s, z], [c, s, 0.0])
    } else {
        let sign = if rng.gen_range(0..2u32) == 0 { 1.0f32 } else { -1.0 };
        let z = rng.gen_range(0.0f32..=1.0);
        let (c, s) = unit_circle(rng);
        let rad = (1.0 - z * z).max(0.0).sqrt();
        let dir = [rad * c, rad * s, sign * z];
        ([R * dir[0], R * dir[1], R * dir[2] + sign * H], dir)
    }
}

fn sample_triangle(rng: &mut ChaCha8Rng, a: [f32; 3], b: [f32; 3], c: [f32; 3]) -> [f32; 3] {
    let r1 = rng.gen_range(0.0f32..1.0).sqrt();
    let r2 = rng.gen_range(0.0f32..1.0);
    let (wa, wb, wc) = (1.0 - r1, r1 * (1.0 - r2), r1 * r2);
    [
        wa * a[0] + wb * b[0] + wc * c[0],
        wa * a[1] + wb * b[1] + wc * c[1],
        wa * a[2] + wb * b[2] + wc * c[2],
    ]
}

fn triangle_normal(a: [f32; 3], b: [f32; 3], c: [f32; 3]) -> [f32; 3] {
    let ab = super::sub3(b, a);
    let ac = super::sub3(c, a);
    let cross = [
        ab[1] * ac[2] - ab[2] * ac[1],
        ab[2] * ac[0] - ab[0] * ac[2],
        ab[0] * ac[1] - ab[1] * ac[0],
    ];
    scale3(cross, 1.0 / super::norm3(cross))
}

// ── tests ─────────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{dot3, norm3, sub3};

    #[test]
    fn generation_is_deterministic_per_seed() {
        let opts = SynthOptions { noise_sigma: 0.02, rotation: Rotation::Full, ..Default::default() };
        for kind in ShapeKind::ALL {
            let a = synth_generate(kind, 64, &opts, 42).unwrap();
            let b = synth_generate(kind, 64, &opts, 42).unwrap();
            let c = synth_generate(kind, 64, &opts, 43).unwrap();
            assert_eq!(a, b, "{kind:?} must be reproducible");
            assert_ne!(a.points(), c.points(), "{kind:?} must vary with the seed");
            assert_eq!(a.label(), Some(kind.label()));
        }
    }

    #[test]
    fn shared_surface_seed_reuses_the_surface() {
        let opts = SynthOptions {
            noise_sigma: 0.0,
            rotation: Rotation::None,
            surface_seed: Some(99),
        };
        let a = synth_generate(ShapeKind::Torus, 128, &opts, 1).unwrap();
        let b = synth_generate(ShapeKind::Torus, 128, &opts, 2).unwrap();
        assert_eq!(a.points(), b.points());

        let noisy = SynthOptions { noise_sigma: 0.05, ..opts };
        let c = synth_generate(ShapeKind::Torus, 128, &noisy, 1).unwrap();
        let d = synth_generate(ShapeKind::Torus, 128, &noisy, 2).unwrap();
        assert_ne!(c.points(), d.points(), "different jitter seeds must differ");
        // Both remain near the shared clean surface after normalisation.
        for (p, q) in c.points().iter().zip(a.points()) {
            assert!(norm3(sub3(*p, *q)) < 0.5);
        }
    }

    #[test]
    fn cube_samples_lie_on_faces_with_axis_normals() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let (pts, nms) = sample_surface(ShapeKind::Cube, 500, &mut rng);
        for (p, nm) in pts.iter().zip(&nms) {
            let axis = (0..3).find(|&c| nm[c].abs() == 1.0).expect("axis normal");
            assert_eq!(p[axis].abs(), 1.0, "point {p:?} must sit on a face plane");
            assert!(p.iter().all(|v| v.abs() <= 1.0));
            assert_eq!(nm[axis], p[axis].signum());
        }
    }

    #[test]
    fn sphere_and_torus_satisfy_their_implicit_equations() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let (pts, nms) = sample_surface(ShapeKind::Sphere, 300, &mut rng);
        for (p, nm) in pts.iter().zip(&nms) {
            assert!((norm3(*p) - 1.0).abs() < 1e-5);
            assert!(norm3(sub3(*p, *nm)) < 1e-5, "sphere normal equals position");
        }
        let (pts, nms) = sample_surface(ShapeKind::Torus, 300, &mut rng);
        for (p, nm) in pts.iter().zip(&nms) {
            let ring = (p[0] * p[0] + p[1] * p[1]).sqrt() - 1.0;
            let tube = (ring * ring + p[2] * p[2]).sqrt();
            assert!((tube - 0.35).abs() < 1e-5, "point {p:?} off the tube");
            assert!((norm3(*nm) - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn all_shapes_emit_unit_normals_under_full_rotation() {
        let opts = SynthOptions { rotation: Rotation::Full, ..Default::default() };
        for kind in ShapeKind::ALL {
            let cloud = synth_generate(kind, 200, &opts, 17).unwrap();
            for nm in cloud.normals().unwrap() {
                assert!((norm3(*nm) - 1.0).abs() < 1e-4, "{kind:?} normal {nm:?}");
            }
        }
    }

    #[test]
    fn z_rotation_preserves_heights_after_normalisation() {
        let still = SynthOptions { rotation: Rotation::None, surface_seed: Some(5), ..Default::default() };
        let spun = SynthOptions { rotation: Rotation::AboutZ, surface_seed: Some(5), ..Default::default() };
        let a = synth_generate(ShapeKind::Cone, 96, &still, 8).unwrap();
        let b = synth_generate(ShapeKind::Cone, 96, &spun, 8).unwrap();
        for (p, q) in a.points().iter().zip(b.points()) {
            assert!((p[2] - q[2]).abs() < 1e-5);
            let ra = (p[0] * p[0] + p[1] * p[1]).sqrt();
            let rb = (q[0] * q[0] + q[1] * q[1]).sqrt();
            assert!((ra - rb).abs() < 1e-5);
        }
        assert_ne!(a.points(), b.points(), "a rotation should have been applied");
    }

    #[test]
    fn cylinder_part_mix_tracks_area_weights() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let (pts, _) = sample_surface(ShapeKind::Cylinder, 20_000, &mut rng);
        let on_cap = pts.iter().filter(|p| p[2].abs() == 1.0).count() as f32;
        let frac = on_cap / 20_000.0;
        let lateral = std::f32::consts::TAU * 0.7 * 2.0;
        let caps = 2.0 * std::f32::consts::PI * 0.7 * 0.7;
        let expect = caps / (caps + lateral);
        assert!((frac - expect).abs() < 0.02, "cap fraction {frac} vs expected {expect}");
    }

    #[test]
    fn normals_stay_perpendicular_to_flat_parts() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let (pts, nms) = sample_surface(ShapeKind::Pyramid, 400, &mut rng);
        // Every sampled point satisfies n . (p - q) = 0 for some known face
        // point q; spot-check the apex faces via the plane equation.
        for (p, nm) in pts.iter().zip(&nms) {
            if nm[2] == -1.0 {
                assert!((p[2] + 0.8).abs() < 1e-5);
            } else {
                let apex = [0.0, 0.0, 1.2];
                let offset = dot3(*nm, sub3(*p, apex));
                assert!(offset.abs() < 1e-4, "lateral point {p:?} off its face plane");
            }
        }
    }

    #[test]
    fn shape_names_round_trip() {
        for kind in ShapeKind::ALL {
            assert_eq!(ShapeKind::from_name(kind.name()), Some(kind));
            assert_eq!(ShapeKind::from_label(kind.label()), Some(kind));
        }
        assert_eq!(ShapeKind::from_name("dodecahedron"), None);
        assert_eq!(ShapeKind::from_label(8), None);
    }

    #[test]
    fn spiked_sphere_labels_follow_geometry() {
        let opts = SynthOptions { rotation: Rotation::None, ..Default::default() };
        let (cloud, labels) = synth_spiked_sphere(400, 0.25, &opts, 11).unwrap();
        assert_eq!(labels.len(), 400);
        let spike = labels.iter().filter(|&&l| l == 1).count();
        assert!((60..=140).contains(&spike), "spike point share off: {spike}");
        // After normalisation the spike still reaches markedly higher than the
        // sphere body; every spike point sits above the sphere's top band.
        let top_sphere = cloud
            .points()
            .iter()
            .zip(&labels)
            .filter(|(_, &l)| l == 0)
            .map(|(p, _)| p[2])
            .fold(f32::NEG_INFINITY, f32::max);
        let min_spike = cloud
            .points()
            .iter()
            .zip(&labels)
            .filter(|(_, &l)| l == 1)
            .map(|(p, _)| p[2])
            .fold(f32::INFINITY, f32::min);
        assert!(min_spike > top_sphere - 0.05, "spike {min_spike} vs sphere top {top_sphere}");
        let (again, labels_again) = synth_spiked_sphere(400, 0.25, &opts, 11).unwrap();
        assert_eq!(cloud, again);
        assert_eq!(labels, labels_again);
        assert!(synth_spiked_sphere(2, 0.25, &opts, 1).is_err());
        assert!(synth_spiked_sphere(100, 0.0, &opts, 1).is_err());
    }

    #[test]
    fn rejects_degenerate_requests() {
        let opts = SynthOptions::default();
        assert!(synth_generate(ShapeKind::Sphere, 0, &opts, 1).is_err());
        assert!(synth_generate(ShapeKind::Sphere, 1, &opts, 1).is_err());
        let bad = SynthOptions { noise_sigma: -0.1, ..Default::default() };
        assert!(synth_generate(ShapeKind::Sphere, 16, &bad, 1).is_err());
    }
}
