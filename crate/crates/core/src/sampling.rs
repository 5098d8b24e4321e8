//! Final ray-sample placement: importance sampling that matches the
//! view-consistency distribution, plus uniform and stratified baselines.

use alloc::vec::Vec;
use rand::Rng;

use crate::consistency::ConsistencyProfile;
use crate::geometry::Ray;
use crate::{Error, Result};

/// Piecewise-constant weights over the bins between pre-sample depths.
#[derive(Debug, Clone, PartialEq)]
pub struct BinWeights {
    edges: Vec<f64>,
    weights: Vec<f64>,
}

impl BinWeights {
    pub fn new(edges: Vec<f64>, weights: Vec<f64>) -> Result<BinWeights> {
        if edges.len() < 2 {
            return Err(Error::InvalidArgument("bin weights need at least 2 edges"));
        }
        if weights.len() != edges.len() - 1 {
            return Err(Error::DimensionMismatch {
                what: "bin weights vs edges",
                expected: edges.len() - 1,
                got: weights.len(),
            });
        }
        if edges.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("bin edges must strictly increase"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument("bin weights must be finite and non-negative"));
        }
        Ok(BinWeights { edges, weights })
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Strictly increasing final sample depths.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    depths: Vec<f64>,
}

impl SampleSet {
    pub fn new(depths: Vec<f64>) -> Result<SampleSet> {
        if depths.is_empty() {
            return Err(Error::InvalidArgument("sample set is empty"));
        }
        if depths.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("sample depths must strictly increase"));
        }
        Ok(SampleSet { depths })
    }

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

/// Bin weights from a consistency profile: each bin takes the mean of its
/// endpoint scores plus a constant floor. A positive floor keeps every bin
/// sampleable even when the profile is zero along the whole ray.
pub fn bins_from_profile(profile: &ConsistencyProfile, floor: f64) -> Result<BinWeights> {
    if !(floor >= 0.0) {
        return Err(Error::InvalidArgument("bin floor must be non-negative"));
    }
    let scores = &profile.scores;
    if scores.len() < 2 {
        return Err(Error::InvalidArgument("profile needs at least 2 pre-samples"));
    }
    let weights = scores
        .windows(2)
        .map(|w| 0.5 * (w[0] + w[1]) + floor)
        .collect();
    BinWeights::new(profile.presamples.depths().to_vec(), weights)
}

/// Inverse-transform sampling of the piecewise-constant density given by
/// the normalized bin weights, using stratified variates; output is sorted.
pub fn pdf_sample<R: Rng + ?Sized>(bins: &BinWeights, s: usize, rng: &mut R) -> Result<SampleSet> {
    let mut depths = Vec::new();
    pdf_sample_into(bins, s, rng, &mut depths)?;
    SampleSet::new(depths)
}

/// As [`pdf_sample`], filling a reusable buffer.
pub fn pdf_sample_into<R: Rng + ?Sized>(
    bins: &BinWeights,
    s: usize,
    rng: &mut R,
    out: &mut Vec<f64>,
) -> Result<()> {
    if s == 0 {
        return Err(Error::InvalidArgument("sample count must be positive"));
    }
    let total: f64 = bins.weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidArgument("bin weights sum to zero"));
    }
    // cumulative distribution over bins
    let n = bins.weights.len();
    let mut cdf = Vec::with_capacity(n + 1);
    cdf.push(0.0);
    let mut acc = 0.0;
    for w in &bins.weights {
        acc += w / total;
        cdf.push(acc);
    }
    cdf[n] = 1.0;

    out.clear();
    out.reserve(s);
    let inv_s = 1.0 / s as f64;
    for k in 0..s {
        let u = (k as f64 + rng.random::<f64>()) * inv_s;
        // index of the bin whose cdf interval contains u
        let idx = cdf.partition_point(|&c| c <= u).clamp(1, n) - 1;
        let lo = cdf[idx];
        let hi = cdf[idx + 1];
        let frac = if hi > lo { (u - lo) / (hi - lo) } else { 0.0 };
        let t = bins.edges[idx] + frac * (bins.edges[idx + 1] - bins.edges[idx]);
        out.push(t);
    }
    // stratified variates are already sorted; break exact ties introduced
    // by zero-width cdf intervals
    let span = bins.edges[n] - bins.edges[0];
    for i in 1..out.len() {
        if out[i] <= out[i - 1] {
            out[i] = out[i - 1] + span * 1e-12;
        }
    }
    Ok(())
}

/// Equally spaced samples including both interval endpoints.
pub fn uniform_sample(ray: &Ray, s: usize) -> Result<SampleSet> {
    let mut depths = Vec::new();
    uniform_sample_into(ray, s, &mut depths)?;
    SampleSet::new(depths)
}

pub fn uniform_sample_into(ray: &Ray, s: usize, out: &mut Vec<f64>) -> Result<()> {
    if s < 2 {
        return Err(Error::InvalidArgument("uniform sampling needs at least 2 samples"));
    }
    out.clear();
    out.reserve(s);
    let step = (ray.t_far - ray.t_near) / (s - 1) as f64;
    for k in 0..s {
        out.push(ray.t_near + k as f64 * step);
    }
    out[s - 1] = ray.t_far;
    Ok(())
}

/// One uniform variate per equal-width stratum.
pub fn stratified_sample<R: Rng + ?Sized>(ray: &Ray, s: usize, rng: &mut R) -> Result<SampleSet> {
    let mut depths = Vec::new();
    stratified_sample_into(ray, s, rng, &mut depths)?;
    SampleSet::new(depths)
}

pub fn stratified_sample_into<R: Rng + ?Sized>(
    ray: &Ray,
    s: usize,
    rng: &mut R,
    out: &mut Vec<f64>,
) -> Result<()> {
    if s < 2 {
        return Err(Error::InvalidArgument("stratified sampling needs at least 2 samples"));
    }
    out.clear();
    out.reserve(s);
    let span = ray.t_far - ray.t_near;
    let inv_s = 1.0 / s as f64;
    for k in 0..s {
        let u: f64 = rng.random();
        out.push(ray.t_near + (k as f64 + u) * inv_s * span);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consistency::pre_sample;
    use crate::linalg::Vec3;
    use crate::rng::{stream_rng, Stream};

    fn ray01() -> Ray {
        Ray::new(Vec3::ZERO, Vec3::new(0.0, 0.0, 1.0), 0.0, 1.0).unwrap()
    }

    fn profile_from_scores(scores: &[f64]) -> ConsistencyProfile {
        let ray = ray01();
        let presamples = pre_sample(&ray, scores.len(), 1.0, 1.05).unwrap();
        ConsistencyProfile {
            presamples,
            scores: scores.to_vec(),
            visibility: alloc::vec![1; scores.len()],
            ref_color: alloc::vec![0.0; 3],
            ref_distilled: alloc::vec![0.0; 4],
        }
    }

    #[test]
    fn bins_average_endpoint_scores() {
        let bins = bins_from_profile(&profile_from_scores(&[0.0, 1.0, 0.0]), 0.0).unwrap();
        assert_eq!(bins.weights(), &[0.5, 0.5]);
    }

    #[test]
    fn floor_dominates_zero_scores() {
        let bins = bins_from_profile(&profile_from_scores(&[0.0, 0.0, 0.0]), 0.01).unwrap();
        assert!(bins.weights().iter().all(|&w| (w - 0.01).abs() < 1e-15));
    }

    #[test]
    fn single_bin_weight_includes_floor() {
        let bins = bins_from_profile(&profile_from_scores(&[1.0, 1.0]), 0.25).unwrap();
        assert_eq!(bins.weights(), &[1.25]);
    }

    #[test]
    fn pdf_point_mass_stays_in_its_bin() {
        let edges = alloc::vec![0.0, 0.25, 0.5, 0.75, 1.0];
        let weights = alloc::vec![0.0, 1.0, 0.0, 0.0];
        let bins = BinWeights::new(edges, weights).unwrap();
        let mut rng = stream_rng(1, Stream::Sampler);
        let samples = pdf_sample(&bins, 64, &mut rng).unwrap();
        assert!(samples.depths().iter().all(|&t| (0.25..=0.5).contains(&t)));
    }

    #[test]
    fn pdf_two_to_one_weights_split_mass() {
        let bins = BinWeights::new(alloc::vec![0.0, 0.5, 1.0], alloc::vec![3.0, 1.0]).unwrap();
        let mut rng = stream_rng(2, Stream::Sampler);
        let samples = pdf_sample(&bins, 4000, &mut rng).unwrap();
        let in_first = samples.depths().iter().filter(|&&t| t < 0.5).count() as f64;
        let frac = in_first / 4000.0;
        assert!((frac - 0.75).abs() < 0.03, "fraction {frac}");
    }

    #[test]
    fn pdf_rejects_zero_mass() {
        let bins = BinWeights::new(alloc::vec![0.0, 1.0], alloc::vec![0.0]).unwrap();
        let mut rng = stream_rng(3, Stream::Sampler);
        assert!(pdf_sample(&bins, 8, &mut rng).is_err());
    }

    #[test]
    fn pdf_is_deterministic_per_seed() {
        let bins = BinWeights::new(alloc::vec![0.0, 0.4, 1.0], alloc::vec![1.0, 2.0]).unwrap();
        let mut a = stream_rng(7, Stream::Sampler);
        let mut b = stream_rng(7, Stream::Sampler);
        assert_eq!(
            pdf_sample(&bins, 32, &mut a).unwrap(),
            pdf_sample(&bins, 32, &mut b).unwrap()
        );
    }

    #[test]
    fn uniform_includes_endpoints() {
        let samples = uniform_sample(&ray01(), 3).unwrap();
        assert_eq!(samples.depths(), &[0.0, 0.5, 1.0]);
        assert!(uniform_sample(&ray01(), 1).is_err());
    }

    #[test]
    fn stratified_puts_one_sample_per_stratum() {
        let mut rng = stream_rng(5, Stream::Sampler);
        let samples = stratified_sample(&ray01(), 4, &mut rng).unwrap();
        for (k, &t) in samples.depths().iter().enumerate() {
            let lo = k as f64 * 0.25;
            assert!(t >= lo && t < lo + 0.25, "sample {t} outside stratum {k}");
        }
        let mut rng2 = stream_rng(5, Stream::Sampler);
        assert_eq!(
            samples,
            stratified_sample(&ray01(), 4, &mut rng2).unwrap()
        );
    }

    #[test]
    fn vs_pipeline_concentrates_samples_near_peak() {
        // synthetic profile peaked at depth 0.5
        let scores = [0.0, 0.05, 0.8, 1.0, 0.8, 0.05, 0.0];
        let profile = profile_from_scores(&scores);
        let bins = bins_from_profile(&profile, 0.01).unwrap();
        let mut rng = stream_rng(9, Stream::Sampler);
        let samples = pdf_sample(&bins, 256, &mut rng).unwrap();
        let near_peak = samples
            .depths()
            .iter()
            .filter(|&&t| (t - 0.5).abs() < 0.25)
            .count();
        assert!(near_peak > 180, "near peak {near_peak}");
    }
}
