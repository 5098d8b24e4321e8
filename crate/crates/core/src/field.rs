//! The learnable radiance field: frequency positional encoding and a small
//! fully-connected density/color network with exact reverse-mode gradients.
//!
//! Positions are passed through the scene contraction before encoding, so
//! callers hand the field raw world coordinates. Density uses a softplus
//! activation (non-negative, smooth), color a sigmoid (open unit interval).
//!
//! Parameter layout (also the checkpoint order): trunk layers in order,
//! then the density head, the color hidden layer, and the color output
//! layer; each layer stores its weight matrix row-major (out x in)
//! followed by its bias.

use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;
use rand_distr::{Distribution, StandardNormal};

use crate::geometry::contract;
use crate::linalg::{DMat, Vec3};
use crate::rng::{stream_rng, Stream};
use crate::{Error, Result};

/// Frequency encoding: per input component, optionally the raw value, then
/// `sin(2^k x), cos(2^k x)` for `k = 0..L`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PositionalEncoding {
    pub num_frequencies: u32,
    pub include_input: bool,
}

impl PositionalEncoding {
    pub fn output_dim(&self, input_dim: usize) -> usize {
        input_dim * (2 * self.num_frequencies as usize + usize::from(self.include_input))
    }

    pub fn encode_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.output_dim(x.len()));
        let mut at = 0;
        for &c in x {
            if self.include_input {
                out[at] = c;
                at += 1;
            }
            let mut freq = 1.0;
            for _ in 0..self.num_frequencies {
                let arg = c * freq;
                out[at] = arg.sin();
                out[at + 1] = arg.cos();
                at += 2;
                freq *= 2.0;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Linear {
    /// out x in, row-major.
    w: DMat,
    b: Vec<f64>,
}

impl Linear {
    fn param_count(&self) -> usize {
        self.w.data().len() + self.b.len()
    }

    /// `y = x * wT + b`.
    fn forward_into(&self, x: &DMat, y: &mut DMat) {
        x.matmul_nt_into(&self.w, y);
        for r in 0..y.rows() {
            let row = y.row_mut(r);
            for (v, b) in row.iter_mut().zip(&self.b) {
                *v += b;
            }
        }
    }

    /// Accumulates `dw += dyT x` and `db += sum_p dy` into the gradient
    /// segment, and writes `dx = dy w` when requested. `w_t` must hold this
    /// layer's transposed weights.
    fn backward(
        &self,
        x: &DMat,
        dy: &DMat,
        w_t: &DMat,
        dx: Option<&mut DMat>,
        g_w: &mut [f64],
        g_b: &mut [f64],
    ) {
        dy.matmul_tn_accum_slice(x, g_w);
        for r in 0..dy.rows() {
            for (slot, &g) in g_b.iter_mut().zip(dy.row(r)) {
                *slot += g;
            }
        }
        if let Some(dx) = dx {
            dy.matmul_nt_into(w_t, dx);
        }
    }
}

/// Network shape and encoding choices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FieldConfig {
    pub trunk_width: usize,
    pub trunk_depth: usize,
    pub pos_frequencies: u32,
    pub dir_frequencies: u32,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig {
            trunk_width: 64,
            trunk_depth: 4,
            pos_frequencies: 6,
            dir_frequencies: 2,
        }
    }
}

/// The radiance field parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct RadianceField {
    config: FieldConfig,
    enc_pos: PositionalEncoding,
    enc_dir: PositionalEncoding,
    trunk: Vec<Linear>,
    sigma_head: Linear,
    color_hidden: Linear,
    color_out: Linear,
}

/// Deterministic variance-scaled initialization: rectifier layers use
/// `N(0, 2/fan_in)`, output heads `N(0, 1/fan_in)`, all biases zero.
pub fn init_field(config: &FieldConfig, seed: u64) -> Result<RadianceField> {
    if config.trunk_width == 0 || config.trunk_depth == 0 {
        return Err(Error::InvalidArgument("field needs positive width and depth"));
    }
    let enc_pos = PositionalEncoding {
        num_frequencies: config.pos_frequencies,
        include_input: true,
    };
    let enc_dir = PositionalEncoding {
        num_frequencies: config.dir_frequencies,
        include_input: true,
    };
    let pos_dim = enc_pos.output_dim(3);
    let dir_dim = enc_dir.output_dim(3);
    let w = config.trunk_width;

    let mut rng = stream_rng(seed, Stream::FieldInit);
    let mut layer = |out: usize, inp: usize, gain: f64| -> Linear {
        let scale = (gain / inp as f64).sqrt();
        let data = (0..out * inp)
            .map(|_| {
                let g: f64 = StandardNormal.sample(&mut rng);
                g * scale
            })
            .collect();
        Linear {
            w: DMat::from_vec(out, inp, data),
            b: vec![0.0; out],
        }
    };

    let mut trunk = Vec::with_capacity(config.trunk_depth);
    trunk.push(layer(w, pos_dim, 2.0));
    for _ in 1..config.trunk_depth {
        trunk.push(layer(w, w, 2.0));
    }
    let sigma_head = layer(1, w, 1.0);
    let color_hidden = layer(w, w + dir_dim, 2.0);
    let color_out = layer(3, w, 1.0);
    Ok(RadianceField {
        config: *config,
        enc_pos,
        enc_dir,
        trunk,
        sigma_head,
        color_hidden,
        color_out,
    })
}

impl RadianceField {
    pub fn config(&self) -> &FieldConfig {
        &self.config
    }

    pub fn param_count(&self) -> usize {
        self.trunk.iter().map(Linear::param_count).sum::<usize>()
            + self.sigma_head.param_count()
            + self.color_hidden.param_count()
            + self.color_out.param_count()
    }

    fn layers(&self) -> impl Iterator<Item = &Linear> {
        self.trunk
            .iter()
            .chain(core::iter::once(&self.sigma_head))
            .chain(core::iter::once(&self.color_hidden))
            .chain(core::iter::once(&self.color_out))
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Linear> {
        self.trunk
            .iter_mut()
            .chain(core::iter::once(&mut self.sigma_head))
            .chain(core::iter::once(&mut self.color_hidden))
            .chain(core::iter::once(&mut self.color_out))
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in self.layers() {
            out.extend_from_slice(l.w.data());
            out.extend_from_slice(&l.b);
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                what: "field flat parameters",
                expected: self.param_count(),
                got: flat.len(),
            });
        }
        let mut at = 0;
        for l in self.layers_mut() {
            let wn = l.w.data().len();
            l.w.data_mut().copy_from_slice(&flat[at..at + wn]);
            at += wn;
            let bn = l.b.len();
            l.b.copy_from_slice(&flat[at..at + bn]);
            at += bn;
        }
        Ok(())
    }

    /// Single-point forward query; `d` must be unit length. The point is
    /// contracted internally before encoding.
    pub fn query(&self, x: Vec3, d: Vec3) -> Result<(f64, [f64; 3])> {
        if !x.is_finite() || !d.is_finite() {
            return Err(Error::NonFinite("field query input"));
        }
        if (d.norm() - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument("query direction must be unit length"));
        }
        let mut scratch = FieldScratch::default();
        self.forward_batch(&[x], &[d], &mut scratch)?;
        Ok((scratch.sigma[0], scratch.rgb[0]))
    }

    /// Batched forward pass; outputs land in `scratch.sigma` / `scratch.rgb`.
    pub fn forward_batch(
        &self,
        points: &[Vec3],
        dirs: &[Vec3],
        scratch: &mut FieldScratch,
    ) -> Result<()> {
        if points.len() != dirs.len() {
            return Err(Error::DimensionMismatch {
                what: "field batch points vs dirs",
                expected: points.len(),
                got: dirs.len(),
            });
        }
        let p = points.len();
        let pos_dim = self.enc_pos.output_dim(3);
        let dir_dim = self.enc_dir.output_dim(3);
        let w = self.config.trunk_width;
        let depth = self.trunk.len();

        scratch.enc_pos.resize(p, pos_dim);
        scratch.enc_dir.resize(p, dir_dim);
        for (i, (pt, dir)) in points.iter().zip(dirs).enumerate() {
            if !pt.is_finite() || !dir.is_finite() {
                return Err(Error::NonFinite("field batch input"));
            }
            let c = contract(*pt);
            self.enc_pos
                .encode_into(&c.to_array(), scratch.enc_pos.row_mut(i));
            self.enc_dir
                .encode_into(&dir.to_array(), scratch.enc_dir.row_mut(i));
        }

        scratch.trunk_pre.resize(depth, DMat::zeros(0, 0));
        scratch.trunk_act.resize(depth, DMat::zeros(0, 0));
        for (li, layer) in self.trunk.iter().enumerate() {
            let (prev_act, rest_act) = scratch.trunk_act.split_at_mut(li);
            let input: &DMat = if li == 0 {
                &scratch.enc_pos
            } else {
                &prev_act[li - 1]
            };
            layer.forward_into(input, &mut scratch.trunk_pre[li]);
            let pre = &scratch.trunk_pre[li];
            let act = &mut rest_act[0];
            act.resize(pre.rows(), pre.cols());
            for (a, &v) in act.data_mut().iter_mut().zip(pre.data()) {
                *a = v.max(0.0);
            }
        }
        let trunk_out = &scratch.trunk_act[depth - 1];

        self.sigma_head.forward_into(trunk_out, &mut scratch.sigma_raw);

        // color input = [trunk_out, enc_dir]
        scratch.color_in.resize(p, w + dir_dim);
        for i in 0..p {
            let trunk_row_start = i * w;
            let trunk_data = &trunk_out.data()[trunk_row_start..trunk_row_start + w];
            let dir_row = &scratch.enc_dir.data()[i * dir_dim..(i + 1) * dir_dim];
            let row = scratch.color_in.row_mut(i);
            row[..w].copy_from_slice(trunk_data);
            row[w..].copy_from_slice(dir_row);
        }
        self.color_hidden
            .forward_into(&scratch.color_in, &mut scratch.color_pre);
        scratch
            .color_act
            .resize(scratch.color_pre.rows(), scratch.color_pre.cols());
        for (a, &v) in scratch
            .color_act
            .data_mut()
            .iter_mut()
            .zip(scratch.color_pre.data())
        {
            *a = v.max(0.0);
        }
        self.color_out
            .forward_into(&scratch.color_act, &mut scratch.rgb_raw);

        scratch.sigma.clear();
        scratch.rgb.clear();
        scratch.sigma.reserve(p);
        scratch.rgb.reserve(p);
        for i in 0..p {
            scratch.sigma.push(softplus(scratch.sigma_raw.get(i, 0)));
            let raw = scratch.rgb_raw.row(i);
            scratch
                .rgb
                .push([sigmoid(raw[0]), sigmoid(raw[1]), sigmoid(raw[2])]);
        }
        Ok(())
    }

    /// Reverse-mode accumulation of parameter gradients from per-point
    /// adjoints of `(sigma, rgb)`. Must be called with the `scratch` of the
    /// matching `forward_batch`; accumulates into `grads`.
    pub fn backward_batch(
        &self,
        scratch: &mut FieldScratch,
        d_sigma: &[f64],
        d_rgb: &[[f64; 3]],
        grads: &mut [f64],
    ) -> Result<()> {
        let p = scratch.sigma.len();
        if d_sigma.len() != p || d_rgb.len() != p {
            return Err(Error::DimensionMismatch {
                what: "field backward adjoints",
                expected: p,
                got: d_sigma.len().max(d_rgb.len()),
            });
        }
        if grads.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                what: "field gradient buffer",
                expected: self.param_count(),
                got: grads.len(),
            });
        }
        let w = self.config.trunk_width;
        let depth = self.trunk.len();

        // activation derivatives into raw-output adjoints
        scratch.d_sigma_raw.resize(p, 1);
        scratch.d_rgb_raw.resize(p, 3);
        for i in 0..p {
            let sr = scratch.sigma_raw.get(i, 0);
            scratch.d_sigma_raw.set(i, 0, d_sigma[i] * sigmoid(sr));
            let s = scratch.rgb[i];
            let row = scratch.d_rgb_raw.row_mut(i);
            for c in 0..3 {
                row[c] = d_rgb[i][c] * s[c] * (1.0 - s[c]);
            }
        }

        // gradient segment offsets mirror params_flat order
        let mut offsets = Vec::with_capacity(depth + 3);
        let mut at = 0;
        for l in self.layers() {
            offsets.push(at);
            at += l.param_count();
        }
        let (grads_trunk, grads_heads) = grads.split_at_mut(offsets[depth]);
        let (grads_sigma, rest) = grads_heads.split_at_mut(self.sigma_head.param_count());
        let (grads_chid, grads_cout) = rest.split_at_mut(self.color_hidden.param_count());

        // color output layer
        {
            let (gw, gb) = grads_cout.split_at_mut(self.color_out.w.data().len());
            self.color_out.w.transpose_into(&mut scratch.w_t);
            self.color_out.backward(
                &scratch.color_act,
                &scratch.d_rgb_raw,
                &scratch.w_t,
                Some(&mut scratch.d_color_act),
                gw,
                gb,
            );
        }

        // color hidden layer, through its rectifier
        for (dv, &pre) in scratch
            .d_color_act
            .data_mut()
            .iter_mut()
            .zip(scratch.color_pre.data())
        {
            if pre <= 0.0 {
                *dv = 0.0;
            }
        }
        {
            let (gw, gb) = grads_chid.split_at_mut(self.color_hidden.w.data().len());
            self.color_hidden.w.transpose_into(&mut scratch.w_t);
            self.color_hidden.backward(
                &scratch.color_in,
                &scratch.d_color_act,
                &scratch.w_t,
                Some(&mut scratch.d_color_in),
                gw,
                gb,
            );
        }

        // density head; its input adjoint joins the color path's trunk part
        {
            let (gw, gb) = grads_sigma.split_at_mut(self.sigma_head.w.data().len());
            self.sigma_head.w.transpose_into(&mut scratch.w_t);
            let trunk_out = &scratch.trunk_act[depth - 1];
            self.sigma_head.backward(
                trunk_out,
                &scratch.d_sigma_raw,
                &scratch.w_t,
                Some(&mut scratch.d_trunk),
                gw,
                gb,
            );
        }
        for i in 0..p {
            let src = &scratch.d_color_in.data()[i * (scratch.d_color_in.cols())..];
            let dst = scratch.d_trunk.row_mut(i);
            for (d, s) in dst.iter_mut().zip(&src[..w]) {
                *d += s;
            }
        }

        // trunk layers, last to first
        for li in (0..depth).rev() {
            for (dv, &pre) in scratch
                .d_trunk
                .data_mut()
                .iter_mut()
                .zip(scratch.trunk_pre[li].data())
            {
                if pre <= 0.0 {
                    *dv = 0.0;
                }
            }
            let layer = &self.trunk[li];
            let start = offsets[li];
            let seg = &mut grads_trunk[start..start + layer.param_count()];
            let (gw, gb) = seg.split_at_mut(layer.w.data().len());
            layer.w.transpose_into(&mut scratch.w_t);
            let need_dx = li > 0;
            {
                let (prev_act, _) = scratch.trunk_act.split_at(li);
                let input: &DMat = if li == 0 {
                    &scratch.enc_pos
                } else {
                    &prev_act[li - 1]
                };
                layer.backward(
                    input,
                    &scratch.d_trunk,
                    &scratch.w_t,
                    if need_dx {
                        Some(&mut scratch.d_trunk_next)
                    } else {
                        None
                    },
                    gw,
                    gb,
                );
            }
            if need_dx {
                core::mem::swap(&mut scratch.d_trunk, &mut scratch.d_trunk_next);
            }
        }
        Ok(())
    }
}

/// Convenience wrapper: forward plus parameter gradients for a batch of
/// query points under explicit upstream adjoints.
pub fn query_batch_with_grads(
    field: &RadianceField,
    points: &[Vec3],
    dirs: &[Vec3],
    d_sigma: &[f64],
    d_rgb: &[[f64; 3]],
) -> Result<Vec<f64>> {
    let mut scratch = FieldScratch::default();
    field.forward_batch(points, dirs, &mut scratch)?;
    let mut grads = vec![0.0; field.param_count()];
    field.backward_batch(&mut scratch, d_sigma, d_rgb, &mut grads)?;
    Ok(grads)
}

/// Reusable buffers for batched field evaluation.
#[derive(Debug, Clone, Default)]
pub struct FieldScratch {
    enc_pos: DMat,
    enc_dir: DMat,
    trunk_pre: Vec<DMat>,
    trunk_act: Vec<DMat>,
    sigma_raw: DMat,
    color_in: DMat,
    color_pre: DMat,
    color_act: DMat,
    rgb_raw: DMat,
    /// Densities, one per point.
    pub sigma: Vec<f64>,
    /// Colors in (0,1)^3, one per point.
    pub rgb: Vec<[f64; 3]>,
    d_sigma_raw: DMat,
    d_rgb_raw: DMat,
    d_color_act: DMat,
    d_color_in: DMat,
    d_trunk: DMat,
    d_trunk_next: DMat,
    w_t: DMat,
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn encoding_dimension_and_values() {
        let enc = PositionalEncoding {
            num_frequencies: 2,
            include_input: true,
        };
        assert_eq!(enc.output_dim(3), 15);
        let mut out = [0.0; 5];
        enc.encode_into(&[0.5], &mut out);
        assert_eq!(out[0], 0.5);
        assert!((out[1] - 0.5f64.sin()).abs() < 1e-15);
        assert!((out[2] - 0.5f64.cos()).abs() < 1e-15);
        assert!((out[3] - 1.0f64.sin()).abs() < 1e-15);
        assert!((out[4] - 1.0f64.cos()).abs() < 1e-15);
    }

    #[test]
    fn zeroed_output_layers_give_constant_field() {
        let cfg = FieldConfig {
            trunk_width: 16,
            trunk_depth: 2,
            pos_frequencies: 3,
            dir_frequencies: 1,
        };
        let mut field = init_field(&cfg, 0).unwrap();
        field.sigma_head.w.fill(0.0);
        field.sigma_head.b.iter_mut().for_each(|b| *b = 0.0);
        field.color_out.w.fill(0.0);
        field.color_out.b.iter_mut().for_each(|b| *b = 0.0);
        let (sigma, rgb) = field
            .query(Vec3::new(0.3, -0.2, 0.9), Vec3::new(0.0, 0.0, 1.0))
            .unwrap();
        assert!((sigma - core::f64::consts::LN_2).abs() < 1e-12);
        for c in rgb {
            assert!((c - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn same_seed_same_parameters_and_outputs() {
        let cfg = FieldConfig::default();
        let f1 = init_field(&cfg, 42).unwrap();
        let f2 = init_field(&cfg, 42).unwrap();
        assert_eq!(f1.params_flat(), f2.params_flat());
        let x = Vec3::new(0.1, 0.7, -0.4);
        let d = Vec3::new(0.0, 1.0, 0.0);
        assert_eq!(f1.query(x, d).unwrap(), f2.query(x, d).unwrap());
    }

    #[test]
    fn zero_width_is_rejected() {
        let cfg = FieldConfig {
            trunk_width: 0,
            ..FieldConfig::default()
        };
        assert!(init_field(&cfg, 0).is_err());
    }

    #[test]
    fn density_is_non_negative_everywhere() {
        let cfg = FieldConfig {
            trunk_width: 24,
            trunk_depth: 2,
            pos_frequencies: 4,
            dir_frequencies: 1,
        };
        let field = init_field(&cfg, 11).unwrap();
        let mut rng = crate::rng::stream_rng(12, crate::rng::Stream::Other);
        let mut scratch = FieldScratch::default();
        let mut points = Vec::new();
        let mut dirs = Vec::new();
        for _ in 0..100_000 {
            points.push(Vec3::new(
                rng.random_range(-6.0..6.0),
                rng.random_range(-6.0..6.0),
                rng.random_range(-6.0..6.0),
            ));
            dirs.push(Vec3::new(0.0, 0.0, 1.0));
        }
        field.forward_batch(&points, &dirs, &mut scratch).unwrap();
        assert!(scratch.sigma.iter().all(|&s| s >= 0.0));
        assert!(scratch
            .rgb
            .iter()
            .all(|c| c.iter().all(|&v| v > 0.0 && v < 1.0)));
    }

    #[test]
    fn zero_adjoints_give_zero_gradients_and_scaling_is_linear() {
        let cfg = FieldConfig {
            trunk_width: 10,
            trunk_depth: 2,
            pos_frequencies: 2,
            dir_frequencies: 1,
        };
        let field = init_field(&cfg, 5).unwrap();
        let points = [Vec3::new(0.2, 0.1, 0.5), Vec3::new(-0.4, 0.9, 1.4)];
        let dirs = [Vec3::new(0.0, 0.0, 1.0), Vec3::new(1.0, 0.0, 0.0)];

        let zeros =
            query_batch_with_grads(&field, &points, &dirs, &[0.0; 2], &[[0.0; 3]; 2]).unwrap();
        assert!(zeros.iter().all(|&g| g == 0.0));

        let ds = [0.3, -1.1];
        let dc = [[0.2, -0.4, 0.9], [1.0, 0.0, -0.5]];
        let g1 = query_batch_with_grads(&field, &points, &dirs, &ds, &dc).unwrap();
        let ds2: Vec<f64> = ds.iter().map(|v| v * 2.0).collect();
        let dc2: Vec<[f64; 3]> = dc
            .iter()
            .map(|c| [c[0] * 2.0, c[1] * 2.0, c[2] * 2.0])
            .collect();
        let g2 = query_batch_with_grads(&field, &points, &dirs, &ds2, &dc2).unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn params_roundtrip_through_flat_vector() {
        let field = init_field(&FieldConfig::default(), 1).unwrap();
        let flat = field.params_flat();
        let mut other = init_field(&FieldConfig::default(), 2).unwrap();
        other.set_params_flat(&flat).unwrap();
        assert_eq!(other.params_flat(), flat);
    }
}
