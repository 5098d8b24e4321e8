//! Volume rendering quadrature over a set of ray samples.
//!
//! With per-sample density `sigma_i`, color `c_i`, and spacing
//! `delta_i = t_{i+1} - t_i`, the rendered color is
//! `sum_i T_i (1 - exp(-sigma_i delta_i)) c_i` with transmittance
//! `T_i = exp(-sum_{j<i} sigma_j delta_j)`, and the expected depth uses the
//! same weights against the sample depths.
//!
//! The last sample has no successor; its spacing repeats the previous gap
//! (and is 1 for a single-sample ray). Transmittance is floored at 1e-30,
//! far below every test tolerance.

use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;

use crate::{Error, Result};

const TRANSMITTANCE_FLOOR: f64 = 1e-30;

/// Per-ray rendering outputs, including the per-sample weights needed by
/// the backward pass and by depth diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderResult {
    pub color: [f64; 3],
    pub expected_depth: f64,
    pub weights: Vec<f64>,
    pub transmittances: Vec<f64>,
    /// Sum of weights; in [0,1], approaching 1 as optical depth grows.
    pub accumulation: f64,
}

fn spacings(depths: &[f64]) -> Result<Vec<f64>> {
    if depths.is_empty() {
        return Err(Error::InvalidArgument("render needs at least one sample"));
    }
    let s = depths.len();
    let mut deltas = vec![0.0; s];
    for i in 0..s - 1 {
        let d = depths[i + 1] - depths[i];
        if d <= 0.0 {
            return Err(Error::InvalidArgument("sample depths must strictly increase"));
        }
        deltas[i] = d;
    }
    deltas[s - 1] = if s >= 2 { deltas[s - 2] } else { 1.0 };
    Ok(deltas)
}

/// Evaluates the quadrature for one ray.
pub fn render_ray(depths: &[f64], sigmas: &[f64], colors: &[[f64; 3]]) -> Result<RenderResult> {
    let s = depths.len();
    if sigmas.len() != s || colors.len() != s {
        return Err(Error::DimensionMismatch {
            what: "render_ray inputs",
            expected: s,
            got: sigmas.len().min(colors.len()),
        });
    }
    let deltas = spacings(depths)?;
    let mut color = [0.0; 3];
    let mut expected_depth = 0.0;
    let mut weights = vec![0.0; s];
    let mut transmittances = vec![0.0; s];
    let mut accumulation = 0.0;
    let mut t = 1.0f64;
    for i in 0..s {
        let sigma = sigmas[i];
        if sigma < 0.0 {
            return Err(Error::InvalidArgument("negative density violates the field contract"));
        }
        if !sigma.is_finite() {
            return Err(Error::NonFinite("render_ray density"));
        }
        transmittances[i] = t;
        let alpha = 1.0 - (-sigma * deltas[i]).exp();
        let w = t * alpha;
        weights[i] = w;
        for c in 0..3 {
            color[c] += w * colors[i][c];
        }
        expected_depth += w * depths[i];
        accumulation += w;
        t = (t * (1.0 - alpha)).max(TRANSMITTANCE_FLOOR);
    }
    Ok(RenderResult {
        color,
        expected_depth,
        weights,
        transmittances,
        accumulation,
    })
}

/// Reverse-mode derivatives of [`render_ray`] with respect to every sample
/// density and color, given upstream adjoints of the rendered color and the
/// expected depth.
pub fn render_ray_with_grads(
    depths: &[f64],
    sigmas: &[f64],
    colors: &[[f64; 3]],
    d_color: [f64; 3],
    d_depth: f64,
) -> Result<(Vec<f64>, Vec<[f64; 3]>)> {
    let result = render_ray(depths, sigmas, colors)?;
    let mut d_sigma = vec![0.0; depths.len()];
    let mut d_rgb = vec![[0.0; 3]; depths.len()];
    render_backward(depths, sigmas, colors, &result, d_color, d_depth, &mut d_sigma, &mut d_rgb)?;
    Ok((d_sigma, d_rgb))
}

/// Backward pass reusing an existing forward result; writes into the
/// provided adjoint slices (hot path for the trainer).
#[allow(clippy::too_many_arguments)]
pub fn render_backward(
    depths: &[f64],
    sigmas: &[f64],
    colors: &[[f64; 3]],
    result: &RenderResult,
    d_color: [f64; 3],
    d_depth: f64,
    d_sigma: &mut [f64],
    d_rgb: &mut [[f64; 3]],
) -> Result<()> {
    let s = depths.len();
    if result.weights.len() != s || d_sigma.len() != s || d_rgb.len() != s {
        return Err(Error::DimensionMismatch {
            what: "render backward buffers",
            expected: s,
            got: result.weights.len().min(d_sigma.len()).min(d_rgb.len()),
        });
    }
    let deltas = spacings(depths)?;
    // upstream pressure on each weight: g_i = dC . c_i + dd * t_i
    // dL/dsigma_i = delta_i * (T_i e^{-sigma_i delta_i} g_i - sum_{k>i} w_k g_k)
    let mut suffix = 0.0; // sum over k > i of w_k g_k, built back to front
    for i in (0..s).rev() {
        let g = d_color[0] * colors[i][0]
            + d_color[1] * colors[i][1]
            + d_color[2] * colors[i][2]
            + d_depth * depths[i];
        let w = result.weights[i];
        for c in 0..3 {
            d_rgb[i][c] = w * d_color[c];
        }
        let survive = result.transmittances[i] * (-sigmas[i] * deltas[i]).exp();
        d_sigma[i] = deltas[i] * (survive * g - suffix);
        suffix += w * g;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transparent_volume_renders_nothing() {
        let depths = [0.5, 1.0, 1.5];
        let sigmas = [0.0; 3];
        let colors = [[1.0, 0.2, 0.3]; 3];
        let r = render_ray(&depths, &sigmas, &colors).unwrap();
        assert_eq!(r.color, [0.0; 3]);
        assert!(r.weights.iter().all(|&w| w == 0.0));
        assert!(r.transmittances.iter().all(|&t| t == 1.0));
        assert_eq!(r.accumulation, 0.0);
    }

    #[test]
    fn single_sample_half_opacity() {
        // sigma * delta = ln 2 with the unit spacing of a lone sample
        let r = render_ray(&[2.0], &[core::f64::consts::LN_2], &[[1.0, 0.0, 0.0]]).unwrap();
        assert!((r.weights[0] - 0.5).abs() < 1e-12);
        assert!((r.color[0] - 0.5).abs() < 1e-12);
        assert_eq!(r.color[1], 0.0);
        assert!((r.expected_depth - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_samples_hand_evaluated() {
        let ln2 = core::f64::consts::LN_2;
        let depths = [1.0, 2.0];
        let sigmas = [ln2, ln2]; // delta = 1 for both (repeat rule)
        let colors = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let r = render_ray(&depths, &sigmas, &colors).unwrap();
        assert!((r.weights[0] - 0.5).abs() < 1e-12);
        assert!((r.weights[1] - 0.25).abs() < 1e-12);
        assert!((r.color[0] - 0.5).abs() < 1e-12);
        assert!((r.color[1] - 0.25).abs() < 1e-12);
        assert_eq!(r.color[2], 0.0);
        assert!((r.expected_depth - 1.0).abs() < 1e-12);
    }

    #[test]
    fn transmittance_telescopes() {
        let depths = [0.2, 0.7, 1.1, 2.0];
        let sigmas = [0.3, 1.2, 0.0, 2.5];
        let colors = [[0.5; 3]; 4];
        let r = render_ray(&depths, &sigmas, &colors).unwrap();
        let deltas = [0.5, 0.4, 0.9, 0.9];
        for i in 0..3 {
            let expect = r.transmittances[i] * (-sigmas[i] * deltas[i]).exp();
            assert!((r.transmittances[i + 1] - expect).abs() < 1e-15);
        }
        assert!(r.accumulation <= 1.0);
    }

    #[test]
    fn zero_density_insertion_into_transparent_interval_is_invariant() {
        // the interval [0.9, 1.6) is transparent; splitting it with another
        // zero-density sample leaves the piecewise-constant medium, and
        // hence the render, unchanged
        let depths = [0.4, 0.9, 1.6, 2.0];
        let sigmas = [0.8, 0.0, 0.2, 0.5];
        let colors = [
            [0.9, 0.1, 0.4],
            [0.2, 0.7, 0.3],
            [0.5, 0.5, 0.0],
            [0.3, 0.2, 0.8],
        ];
        let base = render_ray(&depths, &sigmas, &colors).unwrap();
        let depths2 = [0.4, 0.9, 1.2, 1.6, 2.0];
        let sigmas2 = [0.8, 0.0, 0.0, 0.2, 0.5];
        let colors2 = [colors[0], colors[1], [0.1, 0.9, 0.9], colors[2], colors[3]];
        let split = render_ray(&depths2, &sigmas2, &colors2).unwrap();
        for c in 0..3 {
            assert!((split.color[c] - base.color[c]).abs() < 1e-12);
        }
        assert!((split.expected_depth - base.expected_depth).abs() < 1e-12);
        assert!((split.accumulation - base.accumulation).abs() < 1e-12);
    }

    #[test]
    fn zero_density_insertion_before_first_sample_is_invariant() {
        let depths = [0.4, 0.9, 1.6];
        let sigmas = [0.8, 1.5, 0.2];
        let colors = [[0.9, 0.1, 0.4], [0.2, 0.7, 0.3], [0.5, 0.5, 0.0]];
        let base = render_ray(&depths, &sigmas, &colors).unwrap();
        let depths2 = [0.1, 0.4, 0.9, 1.6];
        let sigmas2 = [0.0, 0.8, 1.5, 0.2];
        let colors2 = [[1.0, 1.0, 1.0], colors[0], colors[1], colors[2]];
        let padded = render_ray(&depths2, &sigmas2, &colors2).unwrap();
        for c in 0..3 {
            assert!((padded.color[c] - base.color[c]).abs() < 1e-12);
        }
        assert!((padded.expected_depth - base.expected_depth).abs() < 1e-12);
    }

    #[test]
    fn color_gradient_equals_weights() {
        let depths = [0.3, 0.8, 1.4];
        let sigmas = [0.5, 2.0, 1.0];
        let colors = [[0.2, 0.4, 0.6], [0.1, 0.9, 0.5], [0.7, 0.3, 0.2]];
        let r = render_ray(&depths, &sigmas, &colors).unwrap();
        let (_, d_rgb) =
            render_ray_with_grads(&depths, &sigmas, &colors, [1.0, 0.0, 0.0], 0.0).unwrap();
        for i in 0..3 {
            assert!((d_rgb[i][0] - r.weights[i]).abs() < 1e-15);
            assert_eq!(d_rgb[i][1], 0.0);
        }
    }

    #[test]
    fn zero_adjoints_zero_gradients() {
        let depths = [0.3, 0.8];
        let sigmas = [0.5, 2.0];
        let colors = [[0.2; 3], [0.9; 3]];
        let (d_sigma, d_rgb) =
            render_ray_with_grads(&depths, &sigmas, &colors, [0.0; 3], 0.0).unwrap();
        assert!(d_sigma.iter().all(|&g| g == 0.0));
        assert!(d_rgb.iter().all(|c| c.iter().all(|&g| g == 0.0)));
    }

    #[test]
    fn negative_density_is_rejected() {
        assert!(render_ray(&[0.5], &[-0.1], &[[0.0; 3]]).is_err());
    }

    #[test]
    fn non_increasing_depths_are_rejected() {
        assert!(render_ray(&[0.5, 0.5], &[0.1, 0.1], &[[0.0; 3]; 2]).is_err());
    }
}
