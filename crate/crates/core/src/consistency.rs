//! Pre-sampling along rays and the per-ray view-consistency profile.
//!
//! For each pre-sample point the point is projected into every other view;
//! color and distilled features are gathered by bilinear interpolation and
//! compared against the reference features of the ray's own pixel. The raw
//! measures are normalized per ray (jointly over all pre-samples and
//! views, separately per feature kind) and thresholded; a point's score is
//! the fraction of views where both feature kinds agree.
//!
//! Thresholding is sign-aware: cosine similarities must exceed `delta`,
//! while RMS-scaled negated distances must exceed `-delta`, i.e. the
//! distance must fall within `delta` RMS units of zero. An all-zero
//! measure set normalizes to all zeros and is treated as carrying no
//! signal (its indicator is false).

use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;

use crate::dataset::PosedView;
use crate::features::{cosine_similarity, euclidean_distance, normalize_measures, Metric};
use crate::geometry::Ray;
use crate::linalg::Vec3;
use crate::{Error, Result};

/// Strictly increasing pre-sample depths covering `[t_near, t_far]`.
/// Used for consistency statistics only, never for losses.
#[derive(Debug, Clone, PartialEq)]
pub struct PreSampleSet {
    depths: Vec<f64>,
}

impl PreSampleSet {
    pub fn depths(&self) -> &[f64] {
        &self.depths
    }

    pub fn len(&self) -> usize {
        self.depths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depths.is_empty()
    }
}

/// Effective indicator threshold for a normalized measure of the given
/// metric: similarities must rise above `delta`; negated distances must
/// stay within `delta` RMS units of a perfect match.
pub fn indicator_threshold(metric: Metric, delta: f64) -> f64 {
    match metric {
        Metric::Euclidean => -delta,
        Metric::Cosine => delta,
    }
}

/// Places `m` pre-samples on `[ray.t_near, ray.t_far]`: uniform spacing up
/// to the cutoff `t_s`, then gaps growing geometrically with ratio `gamma`
/// until `t_far` is reached exactly.
///
/// The split between uniform and geometric gaps is chosen so the uniform
/// region ends as close to `t_s` as possible while the total span and the
/// gap ratio stay exact.
pub fn pre_sample(ray: &Ray, m: usize, t_s: f64, gamma: f64) -> Result<PreSampleSet> {
    if m < 2 {
        return Err(Error::InvalidArgument(
            "pre-sampling needs at least 2 samples to span the interval",
        ));
    }
    if !(gamma > 1.0) {
        return Err(Error::InvalidArgument("geometric growth ratio must exceed 1"));
    }
    if !(ray.t_near < t_s && t_s <= ray.t_far) {
        return Err(Error::InvalidArgument("cutoff must satisfy t_near < t_s <= t_far"));
    }
    let span = ray.t_far - ray.t_near;
    let uniform_span = t_s - ray.t_near;
    let n_gaps = m - 1;

    let mut best = (f64::INFINITY, 0usize, 0.0f64); // (|end - t_s|, n_geo, h)
    let mut geo_sum = 0.0; // gamma^1 + ... + gamma^{n_geo}
    let mut gamma_pow = 1.0;
    for n_geo in 0..=n_gaps {
        if n_geo > 0 {
            gamma_pow *= gamma;
            geo_sum += gamma_pow;
        }
        let n_uni = n_gaps - n_geo;
        let h = span / (n_uni as f64 + geo_sum);
        let end = ray.t_near + n_uni as f64 * h;
        let diff = (end - uniform_span - ray.t_near).abs();
        if diff < best.0 {
            best = (diff, n_geo, h);
        }
    }
    let (_, n_geo, h) = best;
    let n_uni = n_gaps - n_geo;

    let mut depths = Vec::with_capacity(m);
    let mut t = ray.t_near;
    depths.push(t);
    for _ in 0..n_uni {
        t += h;
        depths.push(t);
    }
    let mut gap = h;
    for _ in 0..n_geo {
        gap *= gamma;
        t += gap;
        depths.push(t);
    }
    // land on t_far exactly despite accumulated rounding
    *depths.last_mut().expect("m >= 2") = ray.t_far;
    for i in 1..depths.len() {
        if depths[i] <= depths[i - 1] {
            return Err(Error::InvalidArgument("pre-sample spacing degenerated"));
        }
    }
    Ok(PreSampleSet { depths })
}

/// Cutoff for [`pre_sample`] derived from the ray: the depth where it
/// leaves the unit ball (the contraction boundary), clamped into the
/// ray's interval. Rays that never cross the ball get a minimal uniform
/// prefix, leaving the spacing almost fully geometric.
pub fn auto_cutoff(ray: &Ray) -> f64 {
    let lo = ray.t_near + 1e-6 * (ray.t_far - ray.t_near);
    match ray.unit_ball_exit() {
        Some(t) => t.clamp(lo, ray.t_far),
        None => lo,
    }
}

/// Per-ray view-consistency profile.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyProfile {
    pub presamples: PreSampleSet,
    /// Score in [0,1] per pre-sample.
    pub scores: Vec<f64>,
    /// Number of views each pre-sample projects into.
    pub visibility: Vec<u32>,
    pub ref_color: Vec<f64>,
    pub ref_distilled: Vec<f64>,
}

/// Parameters of profile computation.
#[derive(Debug, Clone, Copy)]
pub struct ProfileParams {
    pub presamples: usize,
    pub delta: f64,
    pub gamma: f64,
    /// Explicit uniform cutoff; `None` derives it from the contraction
    /// boundary via [`auto_cutoff`].
    pub cutoff: Option<f64>,
}

const COLOR_MAP: &str = "color";
const DISTILLED_MAP: &str = "distilled";

fn required_map<'v>(view: &'v PosedView, name: &'static str) -> Result<&'v crate::features::FeatureMap> {
    view.feature_map(name)
        .ok_or(Error::InvalidArgument("view lacks a required feature map"))
}

/// View-consistency score of a single world point against `views` (the
/// source view must already be excluded). Measures are normalized across
/// this point's visible views only; [`profile_ray`] is the joint-per-ray
/// variant used by the sampler.
pub fn vc_score(
    point: Vec3,
    views: &[&PosedView],
    ref_color: &[f64],
    ref_distilled: &[f64],
    delta: f64,
) -> Result<(f64, u32)> {
    let mut color_measures = Vec::with_capacity(views.len());
    let mut dist_measures = Vec::with_capacity(views.len());
    let mut color_buf = vec![0.0; ref_color.len()];
    let mut dist_buf = vec![0.0; ref_distilled.len()];
    for view in views {
        gather_pair(
            view,
            point,
            ref_color,
            ref_distilled,
            &mut color_buf,
            &mut dist_buf,
            &mut color_measures,
            &mut dist_measures,
        )?;
    }
    let visible = color_measures.len() as u32;
    if visible == 0 {
        return Ok((0.0, 0));
    }
    let color_metric = Metric::Euclidean;
    let dist_metric = Metric::Cosine;
    let norm_c = normalize_measures(&color_measures, color_metric)?;
    let norm_d = normalize_measures(&dist_measures, dist_metric)?;
    let c_degenerate = color_measures.iter().all(|&m| m == 0.0);
    let d_degenerate = dist_measures.iter().all(|&m| m == 0.0);
    let thr_c = indicator_threshold(color_metric, delta);
    let thr_d = indicator_threshold(dist_metric, delta);
    let mut hits = 0u32;
    for (mc, md) in norm_c.iter().zip(&norm_d) {
        let pass_c = !c_degenerate && *mc > thr_c;
        let pass_d = !d_degenerate && *md > thr_d;
        if pass_c && pass_d {
            hits += 1;
        }
    }
    Ok((hits as f64 / visible as f64, visible))
}

/// Projects `point` into `view` and, when visible, appends both feature
/// measures. Returns true when the point was not visible.
#[allow(clippy::too_many_arguments)]
fn gather_pair(
    view: &PosedView,
    point: Vec3,
    ref_color: &[f64],
    ref_distilled: &[f64],
    color_buf: &mut [f64],
    dist_buf: &mut [f64],
    color_measures: &mut Vec<f64>,
    dist_measures: &mut Vec<f64>,
) -> Result<bool> {
    let Some((u, v, _depth)) = view.camera.project(point) else {
        return Ok(true);
    };
    // visibility additionally requires interpolable coordinates
    let k = &view.camera.intrinsics;
    if u > k.width as f64 - 1.0 || v > k.height as f64 - 1.0 {
        return Ok(true);
    }
    let color_map = required_map(view, COLOR_MAP)?;
    let dist_map = required_map(view, DISTILLED_MAP)?;
    color_map.sample_image_coords_into(u, v, color_buf)?;
    dist_map.sample_image_coords_into(u, v, dist_buf)?;
    color_measures.push(euclidean_distance(ref_color, color_buf));
    dist_measures.push(cosine_similarity(ref_distilled, dist_buf));
    Ok(false)
}

/// Computes the view-consistency profile of a ray originating at pixel
/// `(source_pixel)` of `views[source_view]`. The source view is excluded
/// from every pre-sample's visible set.
pub fn profile_ray(
    ray: &Ray,
    source_view: usize,
    source_pixel: (f64, f64),
    views: &[PosedView],
    params: &ProfileParams,
) -> Result<ConsistencyProfile> {
    if source_view >= views.len() {
        return Err(Error::InvalidArgument("source view index out of range"));
    }
    let source = &views[source_view];
    let color_map = required_map(source, COLOR_MAP)?;
    let dist_map = required_map(source, DISTILLED_MAP)?;
    let mut ref_color = vec![0.0; color_map.channels() as usize];
    let mut ref_distilled = vec![0.0; dist_map.channels() as usize];
    color_map.sample_image_coords_into(source_pixel.0, source_pixel.1, &mut ref_color)?;
    dist_map.sample_image_coords_into(source_pixel.0, source_pixel.1, &mut ref_distilled)?;

    let cutoff = params.cutoff.unwrap_or_else(|| auto_cutoff(ray));
    let presamples = pre_sample(ray, params.presamples, cutoff, params.gamma)?;
    let m = presamples.len();

    // gather measures for all (pre-sample, view) pairs
    let mut color_measures = Vec::with_capacity(m * views.len());
    let mut dist_measures = Vec::with_capacity(m * views.len());
    let mut pair_counts = vec![0u32; m];
    let mut color_buf = vec![0.0; ref_color.len()];
    let mut dist_buf = vec![0.0; ref_distilled.len()];
    for (i, &t) in presamples.depths().iter().enumerate() {
        let point = ray.at(t);
        for (j, view) in views.iter().enumerate() {
            if j == source_view {
                continue;
            }
            if !gather_pair(
                view,
                point,
                &ref_color,
                &ref_distilled,
                &mut color_buf,
                &mut dist_buf,
                &mut color_measures,
                &mut dist_measures,
            )? {
                pair_counts[i] += 1;
            }
        }
    }

    let mut scores = vec![0.0; m];
    let visibility = pair_counts.clone();
    if !color_measures.is_empty() {
        let norm_c = normalize_measures(&color_measures, Metric::Euclidean)?;
        let norm_d = normalize_measures(&dist_measures, Metric::Cosine)?;
        let c_degenerate = color_measures.iter().all(|&m| m == 0.0);
        let d_degenerate = dist_measures.iter().all(|&m| m == 0.0);
        let thr_c = indicator_threshold(Metric::Euclidean, params.delta);
        let thr_d = indicator_threshold(Metric::Cosine, params.delta);
        let mut at = 0usize;
        for i in 0..m {
            let n = pair_counts[i] as usize;
            if n == 0 {
                continue;
            }
            let mut hits = 0u32;
            for p in at..at + n {
                let pass_c = !c_degenerate && norm_c[p] > thr_c;
                let pass_d = !d_degenerate && norm_d[p] > thr_d;
                if pass_c && pass_d {
                    hits += 1;
                }
            }
            scores[i] = hits as f64 / n as f64;
            at += n;
        }
    }

    Ok(ConsistencyProfile {
        presamples,
        scores,
        visibility,
        ref_color,
        ref_distilled,
    })
}

/// Bytes needed to hold the projection-feature tensor of a ray batch:
/// `batch * presamples * views * channels * bytes_per_scalar`, with
/// overflow detected rather than wrapped.
pub fn memory_estimate(
    batch: u64,
    presamples: u64,
    views: u64,
    channels: u64,
    bytes_per_scalar: u64,
) -> Result<u64> {
    for v in [batch, presamples, views, channels, bytes_per_scalar] {
        if v == 0 {
            return Err(Error::InvalidArgument("memory estimate factors must be positive"));
        }
    }
    batch
        .checked_mul(presamples)
        .and_then(|x| x.checked_mul(views))
        .and_then(|x| x.checked_mul(channels))
        .and_then(|x| x.checked_mul(bytes_per_scalar))
        .ok_or(Error::Overflow("memory estimate"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Ray;

    fn ray01(t_far: f64) -> Ray {
        Ray::new(Vec3::ZERO, Vec3::new(0.0, 0.0, 1.0), 0.0, t_far).unwrap()
    }

    #[test]
    fn pre_sample_pure_uniform_when_cutoff_is_far() {
        let ray = ray01(1.0);
        let ps = pre_sample(&ray, 5, 1.0, 2.0).unwrap();
        let expect = [0.0, 0.25, 0.5, 0.75, 1.0];
        for (a, b) in ps.depths().iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pre_sample_geometric_tail_doubles_gaps() {
        // uniform step 0.25 ending at the cutoff 1.0, then gaps 0.5, 1.0, 2.0
        let ray = ray01(4.5);
        let ps = pre_sample(&ray, 8, 1.0, 2.0).unwrap();
        let expect = [0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.5, 4.5];
        for (a, b) in ps.depths().iter().zip(expect) {
            assert!((a - b).abs() < 1e-9, "{:?}", ps.depths());
        }
    }

    #[test]
    fn pre_sample_rejects_m_below_two() {
        let ray = ray01(1.0);
        assert!(pre_sample(&ray, 1, 0.5, 1.05).is_err());
    }

    #[test]
    fn auto_cutoff_clamps_to_interval() {
        let ray = Ray::new(Vec3::new(3.0, 0.0, 0.0), Vec3::new(-1.0, 0.0, 0.0), 0.1, 10.0).unwrap();
        let t = auto_cutoff(&ray);
        assert!((t - 4.0).abs() < 1e-12);
        let miss = Ray::new(Vec3::new(3.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0), 0.1, 10.0).unwrap();
        assert!(auto_cutoff(&miss) < 0.11);
    }

    #[test]
    fn memory_estimate_matches_reference_settings() {
        assert_eq!(
            memory_estimate(4096, 256, 50, 384, 4).unwrap(),
            80_530_636_800
        );
        assert_eq!(memory_estimate(4096, 256, 50, 32, 4).unwrap(), 6_710_886_400);
        assert_eq!(memory_estimate(1, 7, 1, 3, 1).unwrap(), 21);
    }

    #[test]
    fn memory_estimate_detects_overflow_and_zeros() {
        assert!(matches!(
            memory_estimate(u64::MAX, 2, 1, 1, 1),
            Err(Error::Overflow(_))
        ));
        assert!(memory_estimate(0, 1, 1, 1, 1).is_err());
    }
}
