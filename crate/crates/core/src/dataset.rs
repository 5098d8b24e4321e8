//! Procedural multi-view scenes with analytic ground truth.
//!
//! A scene is a handful of spheres and axis-aligned boxes inside a large
//! enclosing sphere whose smooth procedural color guarantees every ray
//! terminates on *something* — the failure mode where distant content gets
//! explained by near-camera density is then observable at desk scale.
//! Cameras sit on a ring and look at a common target.
//!
//! Images come from exact ray/primitive intersection (nearest hit wins)
//! with a fixed normal-based shading; feature maps are a smooth random map
//! of the ground-truth surface point plus optional i.i.d. noise, so pixels
//! observing the same surface point share features across views up to that
//! noise.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::features::{FeatureKind, FeatureMap, Metric};
use crate::geometry::{Camera, CameraIntrinsics, Pose, Ray};
use crate::linalg::Vec3;
use crate::rng::{indexed_rng, stream_rng, Stream};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sphere {
    pub center: Vec3,
    pub radius: f64,
    pub albedo: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxPrim {
    pub min: Vec3,
    pub max: Vec3,
    pub albedo: [f64; 3],
}

/// Camera ring: evenly spaced azimuths at a fixed height, all looking at
/// `look_at`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RingConfig {
    pub radius: f64,
    pub height: f64,
    pub look_at: Vec3,
}

/// Full description of a procedural scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub spheres: Vec<Sphere>,
    pub boxes: Vec<BoxPrim>,
    pub enclosure_radius: f64,
    pub view_count: u32,
    pub ring: RingConfig,
    pub image_width: u32,
    pub image_height: u32,
    pub focal: f64,
    pub color_noise: f64,
    pub feature_noise: f64,
    pub distilled_dim: u32,
    /// High-dimensional raw feature maps are emitted when nonzero.
    pub raw_dim: u32,
    /// Spatial frequency scale of the synthetic feature map.
    pub feature_frequency: f64,
    /// Seeded perturbation of primitive placement, radii, and albedos;
    /// 0 keeps the listed primitives exactly.
    pub jitter: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            spheres: vec![
                Sphere {
                    center: Vec3::ZERO,
                    radius: 1.0,
                    albedo: [0.82, 0.31, 0.26],
                },
                Sphere {
                    center: Vec3::new(0.95, -0.65, -0.25),
                    radius: 0.45,
                    albedo: [0.25, 0.55, 0.85],
                },
            ],
            boxes: vec![BoxPrim {
                min: Vec3::new(-1.25, 0.45, -0.45),
                max: Vec3::new(-0.55, 1.15, 0.25),
                albedo: [0.35, 0.78, 0.32],
            }],
            enclosure_radius: 4.5,
            view_count: 13,
            ring: RingConfig {
                radius: 3.2,
                height: 1.1,
                look_at: Vec3::ZERO,
            },
            image_width: 48,
            image_height: 48,
            focal: 40.0,
            color_noise: 0.0,
            feature_noise: 0.0,
            distilled_dim: 16,
            raw_dim: 0,
            feature_frequency: 0.8,
            jitter: 0.0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.view_count < 2 {
            return Err(Error::InvalidArgument("a scene needs at least 2 views"));
        }
        if self.spheres.iter().any(|s| !(s.radius > 0.0)) {
            return Err(Error::InvalidArgument("sphere radii must be positive"));
        }
        if self
            .boxes
            .iter()
            .any(|b| !(b.max.x > b.min.x && b.max.y > b.min.y && b.max.z > b.min.z))
        {
            return Err(Error::InvalidArgument("boxes must have positive extent"));
        }
        let mut extent = 0.0f64;
        for s in &self.spheres {
            extent = extent.max(s.center.norm() + s.radius);
        }
        for b in &self.boxes {
            extent = extent.max(b.min.norm()).max(b.max.norm());
        }
        if !(self.enclosure_radius > extent) {
            return Err(Error::InvalidArgument(
                "enclosure must strictly contain every primitive",
            ));
        }
        if self.image_width < 2 || self.image_height < 2 {
            return Err(Error::InvalidArgument("images must be at least 2x2"));
        }
        if !(self.focal > 0.0) {
            return Err(Error::InvalidArgument("focal length must be positive"));
        }
        if self.distilled_dim == 0 {
            return Err(Error::InvalidArgument("distilled feature maps need at least 1 channel"));
        }
        if !(self.jitter >= 0.0 && self.color_noise >= 0.0 && self.feature_noise >= 0.0) {
            return Err(Error::InvalidArgument("noise and jitter levels must be non-negative"));
        }
        Ok(())
    }

    /// A conservative far bound: no scene point is further from any ring
    /// camera than its distance to the origin plus the enclosure radius.
    pub fn suggested_t_far(&self) -> f64 {
        let cam = (self.ring.look_at
            + Vec3::new(self.ring.radius, 0.0, self.ring.height))
        .norm();
        (cam + self.enclosure_radius) * 1.02
    }
}

/// One posed input view: camera, image, and named feature maps (at least
/// "color" and "distilled").
#[derive(Debug, Clone, PartialEq)]
pub struct PosedView {
    pub camera: Camera,
    pub image: FeatureMap,
    pub feature_maps: BTreeMap<String, FeatureMap>,
}

impl PosedView {
    pub fn new(
        camera: Camera,
        image: FeatureMap,
        feature_maps: BTreeMap<String, FeatureMap>,
    ) -> Result<PosedView> {
        if image.kind() != FeatureKind::Color {
            return Err(Error::InvalidArgument("view image must be a color map"));
        }
        if image.width() != camera.intrinsics.width || image.height() != camera.intrinsics.height {
            return Err(Error::InvalidArgument("image size must match the intrinsics"));
        }
        for map in feature_maps.values() {
            let k = map.downscale();
            if map.width() * k != image.width() || map.height() * k != image.height() {
                return Err(Error::InvalidArgument(
                    "feature maps must cover the image after their downscale factor",
                ));
            }
        }
        Ok(PosedView {
            camera,
            image,
            feature_maps,
        })
    }

    pub fn feature_map(&self, name: &str) -> Option<&FeatureMap> {
        self.feature_maps.get(name)
    }

    pub fn width(&self) -> u32 {
        self.image.width()
    }

    pub fn height(&self) -> u32 {
        self.image.height()
    }

    /// Image color at an integer pixel.
    pub fn pixel_color(&self, x: u32, y: u32) -> [f64; 3] {
        let t = self.image.texel(x, y);
        [t[0] as f64, t[1] as f64, t[2] as f64]
    }
}

/// Analytic per-view ground truth: camera-frame depth (+inf when nothing,
/// not even the enclosure, is hit) and the world-space surface point.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub width: u32,
    pub height: u32,
    pub depths: Vec<Vec<f64>>,
    pub points: Vec<Vec<Vec3>>,
}

impl GroundTruth {
    #[inline]
    fn idx(&self, x: u32, y: u32) -> usize {
        (y * self.width + x) as usize
    }

    pub fn depth(&self, view: usize, x: u32, y: u32) -> f64 {
        self.depths[view][self.idx(x, y)]
    }

    pub fn point(&self, view: usize, x: u32, y: u32) -> Vec3 {
        self.points[view][self.idx(x, y)]
    }
}

fn ray_sphere(origin: Vec3, dir: Vec3, center: Vec3, radius: f64) -> Option<f64> {
    let oc = origin - center;
    let b = oc.dot(dir);
    let c = oc.norm_sq() - radius * radius;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let t0 = -b - sq;
    if t0 > 1e-9 {
        return Some(t0);
    }
    let t1 = -b + sq;
    if t1 > 1e-9 {
        return Some(t1);
    }
    None
}

fn ray_box(origin: Vec3, dir: Vec3, b: &BoxPrim) -> Option<(f64, Vec3)> {
    let mut t_enter = f64::NEG_INFINITY;
    let mut t_exit = f64::INFINITY;
    let mut normal = Vec3::ZERO;
    let o = origin.to_array();
    let d = dir.to_array();
    let lo = b.min.to_array();
    let hi = b.max.to_array();
    for axis in 0..3 {
        if d[axis].abs() < 1e-15 {
            if o[axis] < lo[axis] || o[axis] > hi[axis] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d[axis];
        let mut t0 = (lo[axis] - o[axis]) * inv;
        let mut t1 = (hi[axis] - o[axis]) * inv;
        let mut sign = -1.0;
        if t0 > t1 {
            core::mem::swap(&mut t0, &mut t1);
            sign = 1.0;
        }
        if t0 > t_enter {
            t_enter = t0;
            let mut n = [0.0; 3];
            n[axis] = sign * d[axis].signum().abs() * if sign < 0.0 { -1.0 } else { 1.0 };
            // normal points against the ray on the entering face
            n[axis] = if d[axis] > 0.0 { -1.0 } else { 1.0 };
            let _ = sign;
            normal = Vec3::from_array(n);
        }
        t_exit = t_exit.min(t1);
    }
    if t_enter <= t_exit && t_enter > 1e-9 {
        Some((t_enter, normal))
    } else {
        None
    }
}

const LIGHT_DIR: Vec3 = Vec3 {
    x: 0.4190581774617469,
    y: 0.2619113609135918,
    z: 0.8694206682281198,
};

fn shade(albedo: [f64; 3], normal: Vec3) -> [f64; 3] {
    let lambert = normal.dot(LIGHT_DIR).max(0.0);
    let gain = 0.35 + 0.65 * lambert;
    [albedo[0] * gain, albedo[1] * gain, albedo[2] * gain]
}

/// Smooth procedural color of the enclosing sphere.
fn enclosure_color(p: Vec3) -> [f64; 3] {
    let r = 0.5 + 0.28 * (0.9 * p.x + 1.3 * p.y + 0.5 * p.z).sin() + 0.1 * (1.7 * p.z + 1.0).sin();
    let g = 0.5 + 0.28 * (1.2 * p.y - 0.8 * p.z + 2.1).sin() + 0.1 * (1.5 * p.x).sin();
    let b = 0.5 + 0.28 * (1.1 * p.z + 0.9 * p.x + 4.2).sin() + 0.1 * (1.3 * p.y + 0.6).sin();
    [r.clamp(0.0, 1.0), g.clamp(0.0, 1.0), b.clamp(0.0, 1.0)]
}

struct Hit {
    t: f64,
    point: Vec3,
    color: [f64; 3],
}

fn trace(spec: &SceneSpec, origin: Vec3, dir: Vec3) -> Option<Hit> {
    let mut best: Option<(f64, Vec3, [f64; 3])> = None;
    for s in &spec.spheres {
        if let Some(t) = ray_sphere(origin, dir, s.center, s.radius) {
            if best.map_or(true, |(bt, _, _)| t < bt) {
                let p = origin + dir * t;
                let n = (p - s.center) / s.radius;
                best = Some((t, p, shade(s.albedo, n)));
            }
        }
    }
    for b in &spec.boxes {
        if let Some((t, n)) = ray_box(origin, dir, b) {
            if best.map_or(true, |(bt, _, _)| t < bt) {
                let p = origin + dir * t;
                best = Some((t, p, shade(b.albedo, n)));
            }
        }
    }
    if best.is_none() {
        if let Some(t) = ray_sphere(origin, dir, Vec3::ZERO, spec.enclosure_radius) {
            let p = origin + dir * t;
            best = Some((t, p, enclosure_color(p)));
        }
    }
    best.map(|(t, point, color)| Hit { t, point, color })
}

/// Smooth random map from world points to feature vectors; the same synth
/// instance applied from different views yields identical features for
/// identical surface points.
#[derive(Debug, Clone)]
pub enum FeatureSynth {
    /// Random Fourier features: `sin(w_j . p + b_j)` per channel.
    Fourier { frequencies: Vec<Vec3>, phases: Vec<f64> },
    /// Degenerate single-channel probe returning one coordinate (tests).
    Coordinate { axis: usize },
}

impl FeatureSynth {
    pub fn fourier(dim: u32, frequency_scale: f64, seed: u64) -> FeatureSynth {
        let mut rng = stream_rng(seed, Stream::SceneFeatures);
        let mut frequencies = Vec::with_capacity(dim as usize);
        let mut phases = Vec::with_capacity(dim as usize);
        for _ in 0..dim {
            let g = Vec3::new(
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
            );
            frequencies.push(g * frequency_scale);
            phases.push(rng.random::<f64>() * core::f64::consts::TAU);
        }
        FeatureSynth::Fourier {
            frequencies,
            phases,
        }
    }

    pub fn coordinate(axis: usize) -> FeatureSynth {
        FeatureSynth::Coordinate { axis: axis.min(2) }
    }

    pub fn dim(&self) -> usize {
        match self {
            FeatureSynth::Fourier { frequencies, .. } => frequencies.len(),
            FeatureSynth::Coordinate { .. } => 1,
        }
    }

    pub fn value_into(&self, p: Vec3, out: &mut [f64]) {
        match self {
            FeatureSynth::Fourier {
                frequencies,
                phases,
            } => {
                for ((slot, w), phi) in out.iter_mut().zip(frequencies).zip(phases) {
                    *slot = (w.dot(p) + phi).sin();
                }
            }
            FeatureSynth::Coordinate { axis } => {
                out[0] = p.to_array()[*axis];
            }
        }
    }
}

/// Evaluates `synth` on a grid of surface points and adds i.i.d. Gaussian
/// noise of scale `noise` from `rng`.
pub fn synth_feature_map<R: Rng>(
    points: &[Vec3],
    width: u32,
    height: u32,
    synth: &FeatureSynth,
    kind: FeatureKind,
    metric: Metric,
    noise: f64,
    rng: &mut R,
) -> Result<FeatureMap> {
    if points.len() != (width as usize) * (height as usize) {
        return Err(Error::DimensionMismatch {
            what: "surface point grid",
            expected: (width as usize) * (height as usize),
            got: points.len(),
        });
    }
    let c = synth.dim();
    let mut buf = vec![0.0; c];
    let mut data = Vec::with_capacity(points.len() * c);
    for &p in points {
        synth.value_into(p, &mut buf);
        for &v in &buf {
            let n: f64 = if noise > 0.0 {
                let g: f64 = StandardNormal.sample(rng);
                g * noise
            } else {
                0.0
            };
            data.push((v + n) as f32);
        }
    }
    FeatureMap::new(height, width, c as u32, 1, kind, metric, data)
}

/// Spec-shaped convenience: a fresh Fourier map of `dim` channels over the
/// given surface points, deterministic in `seed`.
pub fn synth_features(
    points: &[Vec3],
    width: u32,
    height: u32,
    dim: u32,
    seed: u64,
    noise: f64,
) -> Result<FeatureMap> {
    let synth = FeatureSynth::fourier(dim, 0.8, seed);
    let mut rng = indexed_rng(seed, Stream::SceneNoise, 0);
    synth_feature_map(
        points,
        width,
        height,
        &synth,
        FeatureKind::Distilled,
        Metric::Cosine,
        noise,
        &mut rng,
    )
}

fn jittered_spec(spec: &SceneSpec, seed: u64) -> SceneSpec {
    if spec.jitter == 0.0 {
        return spec.clone();
    }
    let mut rng = stream_rng(seed, Stream::SceneGeometry);
    let mut out = spec.clone();
    let j = spec.jitter;
    let mut shift = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec3 {
        Vec3::new(
            rng.random_range(-j..j),
            rng.random_range(-j..j),
            rng.random_range(-j..j),
        )
    };
    for s in &mut out.spheres {
        s.center = s.center + shift(&mut rng);
        s.radius = (s.radius * (1.0 + rng.random_range(-0.3 * j..0.3 * j))).max(0.05);
        for c in &mut s.albedo {
            *c = (*c + rng.random_range(-j..j) * 0.5).clamp(0.05, 0.95);
        }
    }
    for b in &mut out.boxes {
        let d = shift(&mut rng);
        b.min = b.min + d;
        b.max = b.max + d;
        for c in &mut b.albedo {
            *c = (*c + rng.random_range(-j..j) * 0.5).clamp(0.05, 0.95);
        }
    }
    out
}

/// Renders a full multi-view dataset with its ground truth; bit-identical
/// for identical `(spec, seed)`.
pub fn synth_scene(spec: &SceneSpec, seed: u64) -> Result<(Vec<PosedView>, GroundTruth)> {
    spec.validate()?;
    let spec = jittered_spec(spec, seed);
    spec.validate()?;

    let (w, h) = (spec.image_width, spec.image_height);
    let intrinsics = CameraIntrinsics::new(
        spec.focal,
        spec.focal,
        (w as f64 - 1.0) / 2.0,
        (h as f64 - 1.0) / 2.0,
        w,
        h,
    )?;
    let distilled_synth = FeatureSynth::fourier(spec.distilled_dim, spec.feature_frequency, seed);
    let raw_synth = (spec.raw_dim > 0)
        .then(|| FeatureSynth::fourier(spec.raw_dim, spec.feature_frequency, seed ^ 0x9e37_79b9));

    let mut views = Vec::with_capacity(spec.view_count as usize);
    let mut gt = GroundTruth {
        width: w,
        height: h,
        depths: Vec::with_capacity(spec.view_count as usize),
        points: Vec::with_capacity(spec.view_count as usize),
    };

    for k in 0..spec.view_count {
        let theta = core::f64::consts::TAU * k as f64 / spec.view_count as f64;
        let eye = spec.ring.look_at
            + Vec3::new(
                spec.ring.radius * theta.cos(),
                spec.ring.radius * theta.sin(),
                spec.ring.height,
            );
        let pose = Pose::look_at(eye, spec.ring.look_at, Vec3::new(0.0, 0.0, 1.0))?;
        let camera = Camera::new(intrinsics, pose)?;

        let n_px = (w as usize) * (h as usize);
        let mut img = Vec::with_capacity(n_px * 3);
        let mut depths = vec![f64::INFINITY; n_px];
        let mut points = vec![Vec3::ZERO; n_px];
        let mut noise_rng = indexed_rng(seed, Stream::SceneNoise, k as u64);
        for y in 0..h {
            for x in 0..w {
                let ray = camera.generate_ray(x as f64, y as f64, 1e-4, 1e9)?;
                match trace(&spec, ray.origin, ray.direction) {
                    Some(hit) => {
                        let i = (y * w + x) as usize;
                        depths[i] = camera.depth_at(&ray, hit.t);
                        points[i] = hit.point;
                        for c in 0..3 {
                            let mut v = hit.color[c];
                            if spec.color_noise > 0.0 {
                                let g: f64 = StandardNormal.sample(&mut noise_rng);
                                v += g * spec.color_noise;
                            }
                            img.push(v.clamp(0.0, 1.0) as f32);
                        }
                    }
                    None => {
                        img.extend_from_slice(&[0.0, 0.0, 0.0]);
                    }
                }
            }
        }
        let image = FeatureMap::new(h, w, 3, 1, FeatureKind::Color, Metric::Euclidean, img)?;

        let mut maps = BTreeMap::new();
        maps.insert(String::from("color"), image.clone());
        let mut feat_rng = indexed_rng(seed, Stream::SceneNoise, 0x1_0000 + k as u64);
        maps.insert(
            String::from("distilled"),
            synth_feature_map(
                &points,
                w,
                h,
                &distilled_synth,
                FeatureKind::Distilled,
                Metric::Cosine,
                spec.feature_noise,
                &mut feat_rng,
            )?,
        );
        if let Some(raw_synth) = &raw_synth {
            maps.insert(
                String::from("raw"),
                synth_feature_map(
                    &points,
                    w,
                    h,
                    raw_synth,
                    FeatureKind::Raw,
                    Metric::Cosine,
                    spec.feature_noise,
                    &mut feat_rng,
                )?,
            );
        }

        views.push(PosedView::new(camera, image, maps)?);
        gt.depths.push(depths);
        gt.points.push(points);
    }
    Ok((views, gt))
}

/// Evenly spaced held-out split: `eval_count` view indices spread over the
/// whole ring, the rest for training.
pub fn split_views(n_views: usize, eval_count: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    if eval_count == 0 || eval_count >= n_views {
        return Err(Error::InvalidArgument("eval split must leave views on both sides"));
    }
    let eval: Vec<usize> = (0..eval_count).map(|i| i * n_views / eval_count).collect();
    let train: Vec<usize> = (0..n_views).filter(|i| !eval.contains(i)).collect();
    Ok((train, eval))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_sphere_spec() -> SceneSpec {
        SceneSpec {
            spheres: vec![Sphere {
                center: Vec3::ZERO,
                radius: 1.0,
                albedo: [0.8, 0.3, 0.3],
            }],
            boxes: vec![],
            view_count: 4,
            image_width: 49,
            image_height: 49,
            ring: RingConfig {
                radius: 3.2,
                height: 0.0,
                look_at: Vec3::ZERO,
            },
            ..SceneSpec::default()
        }
    }

    #[test]
    fn center_pixel_depth_is_ring_minus_radius() {
        let spec = single_sphere_spec();
        let (_, gt) = synth_scene(&spec, 1).unwrap();
        // odd image size puts the principal point on the integer center pixel
        let depth = gt.depth(0, 24, 24);
        assert!((depth - (3.2 - 1.0)).abs() < 1e-9, "depth {depth}");
        let p = gt.point(0, 24, 24);
        assert!((p.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn empty_scene_hits_enclosure_everywhere() {
        let spec = SceneSpec {
            spheres: vec![],
            boxes: vec![],
            view_count: 2,
            image_width: 33,
            image_height: 33,
            ring: RingConfig {
                radius: 3.2,
                height: 0.0,
                look_at: Vec3::ZERO,
            },
            ..SceneSpec::default()
        };
        let (_, gt) = synth_scene(&spec, 2).unwrap();
        // the center ray passes through the origin and exits at R_enc
        let depth = gt.depth(0, 16, 16);
        assert!((depth - (3.2 + 4.5)).abs() < 1e-9, "depth {depth}");
        assert!(gt.depths[0].iter().all(|d| d.is_finite()));
    }

    #[test]
    fn synthesis_is_deterministic() {
        let spec = SceneSpec {
            color_noise: 0.02,
            feature_noise: 0.05,
            jitter: 0.1,
            view_count: 3,
            image_width: 16,
            image_height: 16,
            ..SceneSpec::default()
        };
        let a = synth_scene(&spec, 7).unwrap();
        let b = synth_scene(&spec, 7).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1.depths, b.1.depths);
        let c = synth_scene(&spec, 8).unwrap();
        assert_ne!(a.0[0].image, c.0[0].image);
    }

    #[test]
    fn ground_truth_depth_matches_analytic_sphere_intersection() {
        let spec = single_sphere_spec();
        let (views, gt) = synth_scene(&spec, 3).unwrap();
        let cam = &views[1].camera;
        for &(x, y) in &[(24u32, 24u32), (20, 28), (30, 18)] {
            let ray = cam.generate_ray(x as f64, y as f64, 1e-4, 1e9).unwrap();
            if let Some(t) = ray_sphere(ray.origin, ray.direction, Vec3::ZERO, 1.0) {
                let expect = cam.depth_at(&ray, t);
                assert!((gt.depth(1, x, y) - expect).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn corresponding_pixels_share_features_without_noise() {
        let spec = single_sphere_spec();
        let (views, gt) = synth_scene(&spec, 5).unwrap();
        let dist0 = views[0].feature_map("distilled").unwrap();
        let dist1 = views[1].feature_map("distilled").unwrap();
        let mut checked = 0;
        let mut buf0 = vec![0.0; dist0.channels() as usize];
        let mut buf1 = vec![0.0; dist1.channels() as usize];
        for y in (0..49).step_by(4) {
            for x in (0..49).step_by(4) {
                let p = gt.point(0, x, y);
                // only surface points seen head-on in both views correspond
                if (p.norm() - 1.0).abs() > 1e-9 {
                    continue;
                }
                let Some((u, v, _)) = views[1].camera.project(p) else {
                    continue;
                };
                // restrict to pixels whose view-1 ray hits the same point
                let ray = views[1]
                    .camera
                    .generate_ray(u, v, 1e-4, 1e9)
                    .unwrap();
                let t = ray_sphere(ray.origin, ray.direction, Vec3::ZERO, 1.0);
                let visible = t.map_or(false, |t| (ray.at(t) - p).norm() < 2e-2);
                if !visible {
                    continue;
                }
                dist0.sample_image_coords_into(x as f64, y as f64, &mut buf0).unwrap();
                dist1.sample_image_coords_into(u, v, &mut buf1).unwrap();
                let cos = crate::features::cosine_similarity(&buf0, &buf1);
                assert!(cos > 0.98, "cos {cos} at ({x},{y})");
                checked += 1;
            }
        }
        assert!(checked > 10, "too few correspondences checked: {checked}");
    }

    #[test]
    fn coordinate_probe_returns_surface_x() {
        let points = vec![Vec3::new(0.25, 1.0, -2.0), Vec3::new(-0.5, 0.0, 3.0)];
        let synth = FeatureSynth::coordinate(0);
        let mut rng = stream_rng(0, Stream::SceneNoise);
        let map = synth_feature_map(
            &points,
            2,
            1,
            &synth,
            FeatureKind::Raw,
            Metric::Euclidean,
            0.0,
            &mut rng,
        )
        .unwrap();
        assert_eq!(map.texel(0, 0)[0], 0.25);
        assert_eq!(map.texel(1, 0)[0], -0.5);
    }

    #[test]
    fn split_views_is_even_and_disjoint() {
        let (train, eval) = split_views(13, 3).unwrap();
        assert_eq!(eval, vec![0, 4, 8]);
        assert_eq!(train.len(), 10);
        assert!(train.iter().all(|i| !eval.contains(i)));
        assert!(split_views(3, 3).is_err());
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = SceneSpec::default();
        spec.view_count = 1;
        assert!(synth_scene(&spec, 0).is_err());
        let mut spec = SceneSpec::default();
        spec.enclosure_radius = 0.5;
        assert!(synth_scene(&spec, 0).is_err());
        let mut spec = SceneSpec::default();
        spec.spheres[0].radius = 0.0;
        assert!(synth_scene(&spec, 0).is_err());
    }
}
