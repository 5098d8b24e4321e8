//! Image feature maps and feature distillation.
//!
//! A [`FeatureMap`] stores per-pixel feature vectors (color images are the
//! C=3 special case) together with the metric its vectors are compared
//! under. [`normalize_measures`] converts a set of raw similarity measures
//! (Euclidean distances or cosine similarities) to a common RMS scale so a
//! single threshold applies to both.
//!
//! [`BottleneckProjector`] is a residual bottleneck block that projects
//! high-dimensional features to a compact space. It trains with the
//! symmetric cross-entropy objective over batches of corresponding feature
//! pairs, driving the cross-view similarity matrix towards the identity.

use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::{axpy, dot, DMat};
use crate::rng::{stream_rng, Stream};
use crate::{Error, Result};

/// How two feature vectors are compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    /// Distance; smaller means more similar.
    Euclidean,
    /// Similarity; larger means more similar.
    Cosine,
}

/// What a feature map holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    /// Plain RGB in [0,1], compared by Euclidean distance.
    Color,
    /// High-dimensional features prior to distillation.
    Raw,
    /// Compact distilled features, compared by cosine similarity.
    Distilled,
}

/// H x W x C feature image, row-major, channel-last. Values are stored as
/// f32 to match the on-disk representation bit for bit; all math on them
/// happens in f64.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: u32,
    width: u32,
    channels: u32,
    /// Integer factor between the owning image's resolution and this
    /// map's (1 = stored at image resolution).
    downscale: u32,
    kind: FeatureKind,
    metric: Metric,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(
        height: u32,
        width: u32,
        channels: u32,
        downscale: u32,
        kind: FeatureKind,
        metric: Metric,
        data: Vec<f32>,
    ) -> Result<FeatureMap> {
        if channels == 0 {
            return Err(Error::InvalidArgument("feature map needs at least 1 channel"));
        }
        if downscale == 0 {
            return Err(Error::InvalidArgument("downscale factor must be >= 1"));
        }
        let expected = height as usize * width as usize * channels as usize;
        if data.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "feature map data length",
                expected,
                got: data.len(),
            });
        }
        match kind {
            FeatureKind::Color => {
                if channels != 3 || metric != Metric::Euclidean {
                    return Err(Error::InvalidArgument(
                        "color maps must have C=3 and the euclidean metric",
                    ));
                }
                if data.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                    return Err(Error::InvalidArgument("color values must lie in [0,1]"));
                }
            }
            FeatureKind::Distilled => {
                if metric != Metric::Cosine {
                    return Err(Error::InvalidArgument("distilled maps use the cosine metric"));
                }
            }
            FeatureKind::Raw => {}
        }
        Ok(FeatureMap {
            height,
            width,
            channels,
            downscale,
            kind,
            metric,
            data,
        })
    }

    pub fn height(&self) -> u32 {
        self.height
    }
    pub fn width(&self) -> u32 {
        self.width
    }
    pub fn channels(&self) -> u32 {
        self.channels
    }
    pub fn downscale(&self) -> u32 {
        self.downscale
    }
    pub fn kind(&self) -> FeatureKind {
        self.kind
    }
    pub fn metric(&self) -> Metric {
        self.metric
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn texel(&self, x: u32, y: u32) -> &[f32] {
        let c = self.channels as usize;
        let idx = (y as usize * self.width as usize + x as usize) * c;
        &self.data[idx..idx + c]
    }

    /// Bilinear blend of the four neighboring texels, per channel, at
    /// map coordinates `(u, v)` with texel centers on integers.
    pub fn interpolate_bilinear(&self, u: f64, v: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.channels as usize];
        self.interpolate_into(u, v, &mut out)?;
        Ok(out)
    }

    pub fn interpolate_into(&self, u: f64, v: f64, out: &mut [f64]) -> Result<()> {
        let (w, h) = (self.width as f64, self.height as f64);
        if !(u >= 0.0 && u <= w - 1.0 && v >= 0.0 && v <= h - 1.0) {
            return Err(Error::OutOfBounds {
                what: "bilinear interpolation",
                u,
                v,
                width: self.width,
                height: self.height,
            });
        }
        if out.len() != self.channels as usize {
            return Err(Error::DimensionMismatch {
                what: "interpolation output",
                expected: self.channels as usize,
                got: out.len(),
            });
        }
        let x0 = (u.floor() as u32).min(self.width.saturating_sub(2));
        let y0 = (v.floor() as u32).min(self.height.saturating_sub(2));
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = u - x0 as f64;
        let fy = v - y0 as f64;
        let t00 = self.texel(x0, y0);
        let t10 = self.texel(x1, y0);
        let t01 = self.texel(x0, y1);
        let t11 = self.texel(x1, y1);
        for (c, slot) in out.iter_mut().enumerate() {
            let top = t00[c] as f64 * (1.0 - fx) + t10[c] as f64 * fx;
            let bottom = t01[c] as f64 * (1.0 - fx) + t11[c] as f64 * fx;
            *slot = top * (1.0 - fy) + bottom * fy;
        }
        Ok(())
    }

    /// Samples at *image* pixel coordinates, applying the downscale factor
    /// and clamping to the map's interpolable range.
    pub fn sample_image_coords_into(&self, u_img: f64, v_img: f64, out: &mut [f64]) -> Result<()> {
        let k = self.downscale as f64;
        let u = (((u_img + 0.5) / k) - 0.5).clamp(0.0, self.width as f64 - 1.0);
        let v = (((v_img + 0.5) / k) - 0.5).clamp(0.0, self.height as f64 - 1.0);
        self.interpolate_into(u, v, out)
    }
}

/// Euclidean distance between feature vectors.
pub fn euclidean_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Cosine similarity; zero if either vector has zero norm.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

/// Scales a set of measures by its root-mean-square and negates distances
/// so that larger always means more similar. An all-zero input has no
/// scale; the output is defined as all zeros, which downstream consumers
/// treat as carrying no consistency signal.
pub fn normalize_measures(raw: &[f64], metric: Metric) -> Result<Vec<f64>> {
    if raw.is_empty() {
        return Err(Error::InvalidArgument("normalize_measures: empty input"));
    }
    let rms = (raw.iter().map(|m| m * m).sum::<f64>() / raw.len() as f64).sqrt();
    if rms == 0.0 {
        return Ok(vec![0.0; raw.len()]);
    }
    let sign = match metric {
        Metric::Euclidean => -1.0,
        Metric::Cosine => 1.0,
    };
    Ok(raw.iter().map(|m| sign * m / rms).collect())
}

/// K corresponding feature pairs: row k of `a` matches row k of `b`.
#[derive(Debug, Clone)]
pub struct CorrespondenceBatch {
    a: DMat,
    b: DMat,
}

impl CorrespondenceBatch {
    pub fn new(a: DMat, b: DMat) -> Result<CorrespondenceBatch> {
        if a.rows() != b.rows() {
            return Err(Error::DimensionMismatch {
                what: "correspondence batch rows",
                expected: a.rows(),
                got: b.rows(),
            });
        }
        if a.cols() != b.cols() {
            return Err(Error::DimensionMismatch {
                what: "correspondence batch feature dim",
                expected: a.cols(),
                got: b.cols(),
            });
        }
        if a.rows() < 2 {
            return Err(Error::InvalidArgument(
                "correspondence batch needs at least 2 pairs",
            ));
        }
        Ok(CorrespondenceBatch { a, b })
    }

    pub fn len(&self) -> usize {
        self.a.rows()
    }
    pub fn is_empty(&self) -> bool {
        false
    }
    pub fn feature_dim(&self) -> usize {
        self.a.cols()
    }
    pub fn a(&self) -> &DMat {
        &self.a
    }
    pub fn b(&self) -> &DMat {
        &self.b
    }
}

/// Residual bottleneck block mapping `C_in`-dim features to `C_out`-dim,
/// with L2-normalized outputs and a fixed contrastive temperature.
///
/// Forward: `y = normalize(residual(x) + W_up · relu(W_down · x + b_down) + b_up)`
/// where `residual` is a linear map when `C_in != C_out` and the identity
/// otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct BottleneckProjector {
    c_in: usize,
    c_out: usize,
    hidden: usize,
    /// Contrastive temperature for the logits; fixed, not trained.
    pub tau: f64,
    w_down: DMat,
    b_down: Vec<f64>,
    w_up: DMat,
    b_up: Vec<f64>,
    w_res: Option<DMat>,
}

impl BottleneckProjector {
    /// Random initialization, deterministic in `seed`.
    pub fn random(c_in: usize, c_out: usize, hidden: usize, tau: f64, seed: u64) -> Result<Self> {
        if c_in == 0 || c_out == 0 || hidden == 0 {
            return Err(Error::InvalidArgument("projector dimensions must be positive"));
        }
        if c_out > c_in {
            return Err(Error::InvalidArgument("projector must not expand dimensionality"));
        }
        if !(tau > 0.0) {
            return Err(Error::InvalidArgument("temperature must be positive"));
        }
        let mut rng = stream_rng(seed, Stream::DistillInit);
        let mut init = |rows: usize, cols: usize| -> DMat {
            let scale = (2.0 / cols as f64).sqrt();
            let data = (0..rows * cols)
                .map(|_| {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    g * scale
                })
                .collect();
            DMat::from_vec(rows, cols, data)
        };
        let w_down = init(hidden, c_in);
        let w_up = init(c_out, hidden);
        let w_res = if c_in == c_out {
            None
        } else {
            Some(init(c_out, c_in))
        };
        Ok(BottleneckProjector {
            c_in,
            c_out,
            hidden,
            tau,
            w_down,
            b_down: vec![0.0; hidden],
            w_up,
            b_up: vec![0.0; c_out],
            w_res,
        })
    }

    /// Builds a projector from explicit tensors (checkpoint loading, tests).
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        tau: f64,
        w_down: DMat,
        b_down: Vec<f64>,
        w_up: DMat,
        b_up: Vec<f64>,
        w_res: Option<DMat>,
    ) -> Result<Self> {
        let hidden = w_down.rows();
        let c_in = w_down.cols();
        let c_out = w_up.rows();
        if w_up.cols() != hidden || b_down.len() != hidden || b_up.len() != c_out {
            return Err(Error::InvalidArgument("projector tensor shapes disagree"));
        }
        if let Some(res) = &w_res {
            if res.rows() != c_out || res.cols() != c_in {
                return Err(Error::InvalidArgument("residual map shape disagrees"));
            }
        } else if c_in != c_out {
            return Err(Error::InvalidArgument(
                "identity residual requires C_in == C_out",
            ));
        }
        if !(tau > 0.0) {
            return Err(Error::InvalidArgument("temperature must be positive"));
        }
        Ok(BottleneckProjector {
            c_in,
            c_out,
            hidden,
            tau,
            w_down,
            b_down,
            w_up,
            b_up,
            w_res,
        })
    }

    pub fn c_in(&self) -> usize {
        self.c_in
    }
    pub fn c_out(&self) -> usize {
        self.c_out
    }
    pub fn hidden(&self) -> usize {
        self.hidden
    }
    pub fn w_down(&self) -> &DMat {
        &self.w_down
    }
    pub fn b_down(&self) -> &[f64] {
        &self.b_down
    }
    pub fn w_up(&self) -> &DMat {
        &self.w_up
    }
    pub fn b_up(&self) -> &[f64] {
        &self.b_up
    }
    pub fn w_res(&self) -> Option<&DMat> {
        self.w_res.as_ref()
    }

    pub fn param_count(&self) -> usize {
        let mut n = self.w_down.data().len()
            + self.b_down.len()
            + self.w_up.data().len()
            + self.b_up.len();
        if let Some(res) = &self.w_res {
            n += res.data().len();
        }
        n
    }

    /// Parameters flattened in the documented checkpoint order:
    /// w_down, b_down, w_up, b_up, then w_res when present. Matrices are
    /// row-major.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        out.extend_from_slice(self.w_down.data());
        out.extend_from_slice(&self.b_down);
        out.extend_from_slice(self.w_up.data());
        out.extend_from_slice(&self.b_up);
        if let Some(res) = &self.w_res {
            out.extend_from_slice(res.data());
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                what: "projector flat parameters",
                expected: self.param_count(),
                got: flat.len(),
            });
        }
        let mut at = 0;
        let mut take = |dst: &mut [f64], at: &mut usize| {
            dst.copy_from_slice(&flat[*at..*at + dst.len()]);
            *at += dst.len();
        };
        take(self.w_down.data_mut(), &mut at);
        take(&mut self.b_down, &mut at);
        take(self.w_up.data_mut(), &mut at);
        take(&mut self.b_up, &mut at);
        if let Some(res) = &mut self.w_res {
            take(res.data_mut(), &mut at);
        }
        Ok(())
    }

    fn forward(&self, feats: &DMat) -> Result<ProjectorCache> {
        if feats.cols() != self.c_in {
            return Err(Error::DimensionMismatch {
                what: "projector input features",
                expected: self.c_in,
                got: feats.cols(),
            });
        }
        let k = feats.rows();
        let mut h_pre = DMat::zeros(0, 0);
        feats.matmul_nt_into(&self.w_down, &mut h_pre);
        for r in 0..k {
            let row = h_pre.row_mut(r);
            for (v, b) in row.iter_mut().zip(&self.b_down) {
                *v += b;
            }
        }
        let mut h = h_pre.clone();
        h.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));

        let mut pre_norm = DMat::zeros(0, 0);
        h.matmul_nt_into(&self.w_up, &mut pre_norm);
        for r in 0..k {
            let row = pre_norm.row_mut(r);
            for (v, b) in row.iter_mut().zip(&self.b_up) {
                *v += b;
            }
        }
        match &self.w_res {
            Some(res) => {
                let mut r_out = DMat::zeros(0, 0);
                feats.matmul_nt_into(res, &mut r_out);
                for (v, rv) in pre_norm.data_mut().iter_mut().zip(r_out.data()) {
                    *v += rv;
                }
            }
            None => {
                for (v, xv) in pre_norm.data_mut().iter_mut().zip(feats.data()) {
                    *v += xv;
                }
            }
        }

        let mut output = pre_norm.clone();
        let mut norms = vec![0.0; k];
        let mut zero_replaced = 0usize;
        for r in 0..k {
            let row = output.row_mut(r);
            let n = dot(row, row).sqrt();
            norms[r] = n;
            if n == 0.0 {
                // Degenerate parameters: emit a fixed unit basis vector so
                // training stays total, and count the event.
                row[0] = 1.0;
                zero_replaced += 1;
            } else {
                row.iter_mut().for_each(|v| *v /= n);
            }
        }
        if zero_replaced > 0 {
            log::warn!(
                "projector produced {zero_replaced} zero vectors before normalization; substituted unit basis"
            );
        }
        Ok(ProjectorCache {
            h_pre,
            h,
            norms,
            output,
        })
    }

    /// Accumulates parameter gradients given the adjoint of the normalized
    /// output rows. Returns nothing; `grads` uses the flat layout.
    fn backward(&self, feats: &DMat, cache: &ProjectorCache, d_out: &DMat, grads: &mut [f64]) {
        let k = feats.rows();
        // through the row-wise L2 normalization
        let mut d_pre = DMat::zeros(k, self.c_out);
        for r in 0..k {
            let n = cache.norms[r];
            if n == 0.0 {
                continue; // substituted constant row: no gradient
            }
            let y = cache.output.row(r);
            let g = d_out.row(r);
            let gy = dot(g, y);
            let dst = d_pre.row_mut(r);
            for ((d, &gi), &yi) in dst.iter_mut().zip(g).zip(y) {
                *d = (gi - gy * yi) / n;
            }
        }

        let (wd_n, bd_n, wu_n, bu_n) = (
            self.w_down.data().len(),
            self.b_down.len(),
            self.w_up.data().len(),
            self.b_up.len(),
        );
        let (g_wdown, rest) = grads.split_at_mut(wd_n);
        let (g_bdown, rest) = rest.split_at_mut(bd_n);
        let (g_wup, rest) = rest.split_at_mut(wu_n);
        let (g_bup, g_wres) = rest.split_at_mut(bu_n);

        // up projection
        d_pre.matmul_tn_accum_slice(&cache.h, g_wup);
        for r in 0..k {
            for (slot, &g) in g_bup.iter_mut().zip(d_pre.row(r)) {
                *slot += g;
            }
        }
        // residual path
        if self.w_res.is_some() {
            d_pre.matmul_tn_accum_slice(feats, g_wres);
        }
        // hidden path
        let mut d_h = DMat::zeros(0, 0);
        d_pre.matmul_nt_into(&self.w_up.transpose(), &mut d_h);
        for (dh, &hp) in d_h.data_mut().iter_mut().zip(cache.h_pre.data()) {
            if hp <= 0.0 {
                *dh = 0.0;
            }
        }
        d_h.matmul_tn_accum_slice(feats, g_wdown);
        for r in 0..k {
            for (slot, &g) in g_bdown.iter_mut().zip(d_h.row(r)) {
                *slot += g;
            }
        }
    }
}

struct ProjectorCache {
    h_pre: DMat,
    h: DMat,
    norms: Vec<f64>,
    output: DMat,
}

/// Applies the projector row-wise; outputs are unit-norm.
pub fn apply_projector(p: &BottleneckProjector, feats: &DMat) -> Result<DMat> {
    Ok(p.forward(feats)?.output)
}

/// Projects every texel of a raw feature map to the distilled space.
pub fn project_feature_map(p: &BottleneckProjector, map: &FeatureMap) -> Result<FeatureMap> {
    if map.channels() as usize != p.c_in() {
        return Err(Error::DimensionMismatch {
            what: "feature map channels vs projector input",
            expected: p.c_in(),
            got: map.channels() as usize,
        });
    }
    let texels = map.height() as usize * map.width() as usize;
    let mut input = DMat::zeros(texels, p.c_in());
    for (i, chunk) in map.data().chunks_exact(p.c_in()).enumerate() {
        for (dst, &v) in input.row_mut(i).iter_mut().zip(chunk) {
            *dst = v as f64;
        }
    }
    let projected = apply_projector(p, &input)?;
    let data: Vec<f32> = projected.data().iter().map(|&v| v as f32).collect();
    FeatureMap::new(
        map.height(),
        map.width(),
        p.c_out() as u32,
        map.downscale(),
        FeatureKind::Distilled,
        Metric::Cosine,
        data,
    )
}

/// Symmetric cross-entropy over the cosine-similarity logits of a
/// correspondence batch, plus its gradient with respect to the projector
/// parameters (flat layout, see [`BottleneckProjector::params_flat`]).
pub fn symmetric_ce_loss(
    p: &BottleneckProjector,
    batch: &CorrespondenceBatch,
) -> Result<(f64, Vec<f64>)> {
    let k = batch.len();
    if k < 2 {
        return Err(Error::InvalidArgument(
            "contrastive loss needs at least 2 correspondences",
        ));
    }
    let cache_a = p.forward(batch.a())?;
    let cache_b = p.forward(batch.b())?;

    let mut logits = DMat::zeros(0, 0);
    cache_a.output.matmul_nt_into(&cache_b.output, &mut logits);
    logits.data_mut().iter_mut().for_each(|v| *v /= p.tau);

    // row-wise and column-wise softmax cross-entropy with target = diagonal
    let mut d_logits = DMat::zeros(k, k);
    let mut loss = 0.0;
    let inv = 1.0 / (2.0 * k as f64);
    for r in 0..k {
        let row = logits.row(r);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for &v in row {
            z += (v - m).exp();
        }
        let lse = m + z.ln();
        loss += (lse - row[r]) * inv;
        let dst = d_logits.row_mut(r);
        for (c, (&v, slot)) in row.iter().zip(dst.iter_mut()).enumerate() {
            let soft = (v - lse).exp();
            *slot += inv * (soft - if c == r { 1.0 } else { 0.0 });
        }
    }
    for c in 0..k {
        let mut m = f64::NEG_INFINITY;
        for r in 0..k {
            m = m.max(logits.get(r, c));
        }
        let mut z = 0.0;
        for r in 0..k {
            z += (logits.get(r, c) - m).exp();
        }
        let lse = m + z.ln();
        loss += (lse - logits.get(c, c)) * inv;
        for r in 0..k {
            let soft = (logits.get(r, c) - lse).exp();
            let cur = d_logits.get(r, c);
            d_logits.set(r, c, cur + inv * (soft - if r == c { 1.0 } else { 0.0 }));
        }
    }

    // d loss / d normalized outputs
    let mut d_a = DMat::zeros(0, 0);
    d_logits.matmul_nt_into(&cache_b.output.transpose(), &mut d_a);
    d_a.data_mut().iter_mut().for_each(|v| *v /= p.tau);
    let d_logits_t = d_logits.transpose();
    let mut d_b = DMat::zeros(0, 0);
    d_logits_t.matmul_nt_into(&cache_a.output.transpose(), &mut d_b);
    d_b.data_mut().iter_mut().for_each(|v| *v /= p.tau);

    let mut grads = vec![0.0; p.param_count()];
    p.backward(batch.a(), &cache_a, &d_a, &mut grads);
    p.backward(batch.b(), &cache_b, &d_b, &mut grads);
    Ok((loss, grads))
}

/// Cosine-similarity matrix between the rows of `a` and `b`.
pub fn cosine_similarity_matrix(a: &DMat, b: &DMat) -> DMat {
    let mut out = DMat::zeros(a.rows(), b.rows());
    for r in 0..a.rows() {
        for c in 0..b.rows() {
            out.set(r, c, cosine_similarity(a.row(r), b.row(c)));
        }
    }
    out
}

/// Fraction of rows whose maximum sits on the diagonal; 1.0 for a
/// similarity matrix of perfectly recovered correspondences.
pub fn diagonal_argmax_fraction(sim: &DMat) -> f64 {
    let k = sim.rows().min(sim.cols());
    if k == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    for r in 0..k {
        let row = sim.row(r);
        let mut best = 0usize;
        for (c, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = c;
            }
        }
        if best == r {
            hits += 1;
        }
    }
    hits as f64 / k as f64
}

/// Hyperparameters for projector training.
#[derive(Debug, Clone)]
pub struct DistillConfig {
    pub c_in: usize,
    pub c_out: usize,
    pub hidden: usize,
    pub tau: f64,
    pub learning_rate: f64,
    pub steps: usize,
    /// Correspondences per batch.
    pub batch_k: usize,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            c_in: 384,
            c_out: 32,
            hidden: 64,
            tau: 0.07,
            learning_rate: 1e-3,
            steps: 2000,
            batch_k: 50,
            seed: 0,
        }
    }
}

/// Training summary: final batch loss and the diagonal-dominance of a
/// held-out similarity matrix.
#[derive(Debug, Clone, Copy)]
pub struct DistillReport {
    pub final_loss: f64,
    pub holdout_diag_fraction: f64,
    pub steps_run: usize,
}

/// Minimizes [`symmetric_ce_loss`] with Adam over batches drawn from
/// `source`; `source(i)` must return the batch for step `i`, and one extra
/// batch at index `steps` is used as the held-out report batch.
pub fn distill_train<F>(
    mut source: F,
    cfg: &DistillConfig,
) -> Result<(BottleneckProjector, DistillReport)>
where
    F: FnMut(usize) -> Result<CorrespondenceBatch>,
{
    let mut projector =
        BottleneckProjector::random(cfg.c_in, cfg.c_out, cfg.hidden, cfg.tau, cfg.seed)?;
    let mut params = projector.params_flat();
    let mut adam = crate::objectives::AdamState::new(params.len());
    let mut last_loss = f64::NAN;
    for step in 0..cfg.steps {
        let batch = source(step)?;
        let (loss, grads) = symmetric_ce_loss(&projector, &batch)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("distillation loss"));
        }
        last_loss = loss;
        adam.step(&mut params, &grads, cfg.learning_rate);
        projector.set_params_flat(&params)?;
    }
    let holdout = source(cfg.steps)?;
    let proj_a = apply_projector(&projector, holdout.a())?;
    let proj_b = apply_projector(&projector, holdout.b())?;
    let sim = cosine_similarity_matrix(&proj_a, &proj_b);
    let report = DistillReport {
        final_loss: last_loss,
        holdout_diag_fraction: diagonal_argmax_fraction(&sim),
        steps_run: cfg.steps,
    };
    Ok((projector, report))
}

/// Synthetic correspondence generator: a shared latent signal confined to
/// an orthonormal subspace of the feature space, plus per-view nuisance
/// energy in the complement. Corresponding features share the latent and
/// differ in the nuisance, so raw cosine similarity is weak while a
/// subspace-recovering projection separates pairs cleanly.
#[derive(Debug, Clone)]
pub struct LatentCorrespondenceGen {
    /// Orthonormal latent basis, one row per latent dimension.
    basis: DMat,
    dim: usize,
    latent: usize,
    nuisance: f64,
}

impl LatentCorrespondenceGen {
    pub fn new(dim: usize, latent: usize, nuisance: f64, seed: u64) -> Result<Self> {
        if latent == 0 || latent >= dim {
            return Err(Error::InvalidArgument("latent dim must be in (0, dim)"));
        }
        let mut rng = stream_rng(seed, Stream::DistillBatch);
        let mut basis = DMat::zeros(latent, dim);
        for r in 0..latent {
            loop {
                for v in basis.row_mut(r).iter_mut() {
                    *v = StandardNormal.sample(&mut rng);
                }
                // modified Gram-Schmidt against the rows above
                for prev in 0..r {
                    let coef = dot(basis.row(r), basis.row(prev));
                    let prev_row = basis.row(prev).to_vec();
                    axpy(-coef, &prev_row, basis.row_mut(r));
                }
                let n = dot(basis.row(r), basis.row(r)).sqrt();
                if n > 1e-8 {
                    basis.row_mut(r).iter_mut().for_each(|v| *v /= n);
                    break;
                }
            }
        }
        Ok(LatentCorrespondenceGen {
            basis,
            dim,
            latent,
            nuisance,
        })
    }

    /// One batch of `k` corresponding pairs.
    pub fn sample<R: Rng>(&self, k: usize, rng: &mut R) -> Result<CorrespondenceBatch> {
        let mut a = DMat::zeros(k, self.dim);
        let mut b = DMat::zeros(k, self.dim);
        let mut z = vec![0.0; self.latent];
        for row in 0..k {
            for zi in z.iter_mut() {
                *zi = StandardNormal.sample(rng);
            }
            self.fill_sample(&z, rng, a.row_mut(row));
            self.fill_sample(&z, rng, b.row_mut(row));
        }
        CorrespondenceBatch::new(a, b)
    }

    fn fill_sample<R: Rng>(&self, z: &[f64], rng: &mut R, out: &mut [f64]) {
        for v in out.iter_mut() {
            let g: f64 = StandardNormal.sample(rng);
            *v = g * self.nuisance;
        }
        // remove the nuisance component inside the latent subspace, then
        // plant the shared signal there
        for (r, &zr) in z.iter().enumerate() {
            let row = self.basis.row(r).to_vec();
            let coef = dot(&row, out);
            axpy(zr - coef, &row, out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map_2x2(values: [f32; 4]) -> FeatureMap {
        FeatureMap::new(
            2,
            2,
            1,
            1,
            FeatureKind::Raw,
            Metric::Euclidean,
            values.to_vec(),
        )
        .unwrap()
    }

    #[test]
    fn bilinear_integer_coords_hit_texels() {
        let m = map_2x2([0.0, 2.0, 4.0, 6.0]);
        assert_eq!(m.interpolate_bilinear(1.0, 0.0).unwrap()[0], 2.0);
        assert_eq!(m.interpolate_bilinear(0.0, 1.0).unwrap()[0], 4.0);
    }

    #[test]
    fn bilinear_midpoint_symmetry() {
        let m = map_2x2([0.0, 0.0, 1.0, 1.0]);
        let v = m.interpolate_bilinear(0.5, 0.5).unwrap()[0];
        assert!((v - 0.5).abs() < 1e-12);
    }

    #[test]
    fn bilinear_hand_evaluated_weights() {
        let m = map_2x2([0.0, 2.0, 4.0, 6.0]);
        let v = m.interpolate_bilinear(0.25, 0.75).unwrap()[0];
        assert!((v - 3.5).abs() < 1e-12);
    }

    #[test]
    fn bilinear_out_of_bounds_errors() {
        let m = map_2x2([0.0, 2.0, 4.0, 6.0]);
        assert!(m.interpolate_bilinear(1.5, 0.0).is_err());
        assert!(m.interpolate_bilinear(-0.1, 0.0).is_err());
    }

    #[test]
    fn normalize_euclidean_negates_and_scales() {
        let out = normalize_measures(&[3.0, 4.0], Metric::Euclidean).unwrap();
        assert!((out[0] - -0.848528137423857).abs() < 1e-12);
        assert!((out[1] - -1.131370849898476).abs() < 1e-12);
    }

    #[test]
    fn normalize_cosine_keeps_sign() {
        let out = normalize_measures(&[0.6, 0.8], Metric::Cosine).unwrap();
        assert!((out[0] - 0.848528137423857).abs() < 1e-12);
        assert!((out[1] - 1.131370849898476).abs() < 1e-12);
    }

    #[test]
    fn normalize_constant_cosine_is_unit() {
        let out = normalize_measures(&[0.3, 0.3, 0.3], Metric::Cosine).unwrap();
        for v in out {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_all_zero_yields_zeros() {
        let out = normalize_measures(&[0.0, 0.0], Metric::Euclidean).unwrap();
        assert_eq!(out, alloc::vec![0.0, 0.0]);
    }

    fn identity_projector(dim: usize, tau: f64) -> BottleneckProjector {
        BottleneckProjector::from_parts(
            tau,
            DMat::zeros(dim, dim),
            alloc::vec![0.0; dim],
            DMat::zeros(dim, dim),
            alloc::vec![0.0; dim],
            None,
        )
        .unwrap()
    }

    #[test]
    fn zeroed_projector_substitutes_unit_basis() {
        let p = BottleneckProjector::from_parts(
            0.07,
            DMat::zeros(2, 4),
            alloc::vec![0.0; 2],
            DMat::zeros(3, 2),
            alloc::vec![0.0; 3],
            Some(DMat::zeros(3, 4)),
        )
        .unwrap();
        let feats = DMat::from_vec(2, 4, alloc::vec![1.0; 8]);
        let out = apply_projector(&p, &feats).unwrap();
        assert_eq!(out.row(0), &[1.0, 0.0, 0.0]);
        assert_eq!(out.row(1), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn identity_projector_normalizes_input() {
        let p = identity_projector(3, 0.07);
        let feats = DMat::from_vec(1, 3, alloc::vec![3.0, 0.0, 4.0]);
        let out = apply_projector(&p, &feats).unwrap();
        assert!((out.row(0)[0] - 0.6).abs() < 1e-12);
        assert!((out.row(0)[2] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn random_projector_outputs_unit_rows() {
        let p = BottleneckProjector::random(384, 32, 64, 0.07, 3).unwrap();
        let mut rng = stream_rng(4, Stream::Other);
        let data: Vec<f64> = (0..5 * 384).map(|_| StandardNormal.sample(&mut rng)).collect();
        let feats = DMat::from_vec(5, 384, data);
        let out = apply_projector(&p, &feats).unwrap();
        for r in 0..out.rows() {
            let n = dot(out.row(r), out.row(r)).sqrt();
            assert!((n - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn symmetric_ce_uniform_logits_is_ln2() {
        // orthogonal pairs of unit vectors -> all cosine logits are zero
        let p = identity_projector(4, 0.07);
        let a = DMat::from_vec(2, 4, alloc::vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let b = DMat::from_vec(2, 4, alloc::vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let batch = CorrespondenceBatch::new(a, b).unwrap();
        let (loss, _) = symmetric_ce_loss(&p, &batch).unwrap();
        assert!((loss - core::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn symmetric_ce_perfect_separation_tends_to_zero() {
        let p = identity_projector(4, 0.005);
        let a = DMat::from_vec(2, 4, alloc::vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let batch = CorrespondenceBatch::new(a.clone(), a).unwrap();
        let (loss, _) = symmetric_ce_loss(&p, &batch).unwrap();
        assert!(loss < 1e-12, "loss {loss}");
    }

    #[test]
    fn symmetric_ce_is_symmetric_under_swap() {
        let p = BottleneckProjector::random(6, 3, 4, 0.07, 9).unwrap();
        let mut rng = stream_rng(11, Stream::Other);
        let data_a: Vec<f64> = (0..4 * 6).map(|_| StandardNormal.sample(&mut rng)).collect();
        let data_b: Vec<f64> = (0..4 * 6).map(|_| StandardNormal.sample(&mut rng)).collect();
        let a = DMat::from_vec(4, 6, data_a);
        let b = DMat::from_vec(4, 6, data_b);
        let fwd = CorrespondenceBatch::new(a.clone(), b.clone()).unwrap();
        let rev = CorrespondenceBatch::new(b, a).unwrap();
        let (l1, _) = symmetric_ce_loss(&p, &fwd).unwrap();
        let (l2, _) = symmetric_ce_loss(&p, &rev).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
    }

    #[test]
    fn singleton_batch_is_rejected() {
        let a = DMat::zeros(1, 4);
        assert!(CorrespondenceBatch::new(a.clone(), a).is_err());
    }

    #[test]
    fn distill_zero_steps_returns_initialization() {
        let cfg = DistillConfig {
            c_in: 8,
            c_out: 4,
            hidden: 6,
            steps: 0,
            batch_k: 4,
            seed: 5,
            ..DistillConfig::default()
        };
        let generator = LatentCorrespondenceGen::new(8, 4, 1.0, 21).unwrap();
        let (trained, report) = distill_train(
            |i| {
                let mut rng = crate::rng::indexed_rng(21, Stream::DistillBatch, i as u64 + 1);
                generator.sample(cfg.batch_k, &mut rng)
            },
            &cfg,
        )
        .unwrap();
        let init =
            BottleneckProjector::random(cfg.c_in, cfg.c_out, cfg.hidden, cfg.tau, cfg.seed).unwrap();
        assert_eq!(trained.params_flat(), init.params_flat());
        assert_eq!(report.steps_run, 0);
    }

    #[test]
    fn latent_generator_shares_signal_between_views() {
        let generator = LatentCorrespondenceGen::new(16, 4, 0.0, 3).unwrap();
        let mut rng = stream_rng(3, Stream::Other);
        let batch = generator.sample(3, &mut rng).unwrap();
        // with zero nuisance both sides carry exactly the latent signal
        for r in 0..batch.len() {
            let d = euclidean_distance(batch.a().row(r), batch.b().row(r));
            assert!(d < 1e-9, "row {r} distance {d}");
        }
    }
}
