//! Training losses and the optimizer step.
//!
//! The color loss is the batch-mean squared L2 error between rendered and
//! target pixel colors. The depth-pushing loss is `-mean log(d(r) + eps)`,
//! strictly decreasing in every expected depth, so minimizing it pushes
//! density away from the camera. The total objective is
//! `L_color + lambda * L_depth`.

use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;

use crate::field::{FieldScratch, RadianceField};
use crate::geometry::Ray;
use crate::linalg::Vec3;
use crate::rendering::{render_backward, render_ray, RenderResult};
use crate::{Error, Result};

/// Loss terms for one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub color_loss: f64,
    pub depth_pushing_loss: f64,
    pub total: f64,
    pub lambda_depu: f64,
    pub epsilon: f64,
    pub batch_size: usize,
}

/// Mean over rays of the squared L2 color error.
pub fn color_loss(rendered: &[[f64; 3]], target: &[[f64; 3]]) -> Result<f64> {
    if rendered.len() != target.len() {
        return Err(Error::DimensionMismatch {
            what: "color_loss batch",
            expected: target.len(),
            got: rendered.len(),
        });
    }
    if rendered.is_empty() {
        return Err(Error::InvalidArgument("color_loss needs a non-empty batch"));
    }
    let sum: f64 = rendered
        .iter()
        .zip(target)
        .map(|(r, t)| {
            (r[0] - t[0]) * (r[0] - t[0])
                + (r[1] - t[1]) * (r[1] - t[1])
                + (r[2] - t[2]) * (r[2] - t[2])
        })
        .sum();
    Ok(sum / rendered.len() as f64)
}

/// `-mean log(d + eps)`; favors distant expected depths.
pub fn depth_pushing_loss(expected_depths: &[f64], epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument("depth-pushing epsilon must be positive"));
    }
    if expected_depths.is_empty() {
        return Err(Error::InvalidArgument("depth_pushing_loss needs a non-empty batch"));
    }
    let mut sum = 0.0;
    for &d in expected_depths {
        if d < 0.0 {
            return Err(Error::InvalidArgument("expected depth must be non-negative"));
        }
        sum += (d + epsilon).ln();
    }
    Ok(-sum / expected_depths.len() as f64)
}

/// Per-ray adjoints of the total loss with respect to the rendered color
/// and the expected depth, plus the loss report.
pub fn loss_adjoints(
    results: &[RenderResult],
    targets: &[[f64; 3]],
    lambda_depu: f64,
    epsilon: f64,
) -> Result<(LossReport, Vec<([f64; 3], f64)>)> {
    let rendered: Vec<[f64; 3]> = results.iter().map(|r| r.color).collect();
    let depths: Vec<f64> = results.iter().map(|r| r.expected_depth).collect();
    let c_loss = color_loss(&rendered, targets)?;
    let d_loss = depth_pushing_loss(&depths, epsilon)?;
    let n = results.len() as f64;
    let adjoints = results
        .iter()
        .zip(targets)
        .map(|(r, t)| {
            let dc = [
                2.0 * (r.color[0] - t[0]) / n,
                2.0 * (r.color[1] - t[1]) / n,
                2.0 * (r.color[2] - t[2]) / n,
            ];
            let dd = -lambda_depu / (n * (r.expected_depth + epsilon));
            (dc, dd)
        })
        .collect();
    Ok((
        LossReport {
            color_loss: c_loss,
            depth_pushing_loss: d_loss,
            total: c_loss + lambda_depu * d_loss,
            lambda_depu,
            epsilon,
            batch_size: results.len(),
        },
        adjoints,
    ))
}

/// One ray of a training batch: where to sample, and the supervision color.
#[derive(Debug, Clone, Default)]
pub struct RaySamples {
    pub origin: Vec3,
    pub direction: Vec3,
    pub depths: Vec<f64>,
    pub target: [f64; 3],
}

impl RaySamples {
    pub fn from_ray(ray: &Ray, depths: Vec<f64>, target: [f64; 3]) -> RaySamples {
        RaySamples {
            origin: ray.origin,
            direction: ray.direction,
            depths,
            target,
        }
    }
}

/// Buffers reused across training steps.
#[derive(Debug, Clone, Default)]
pub struct StepScratch {
    pub field: FieldScratch,
    points: Vec<Vec3>,
    dirs: Vec<Vec3>,
    results: Vec<RenderResult>,
    d_sigma: Vec<f64>,
    d_rgb: Vec<[f64; 3]>,
}

/// Renders a batch, evaluates the total loss, and chains its gradient all
/// the way back to the field parameters. `grads` is overwritten.
pub fn total_loss_and_grads(
    field: &RadianceField,
    rays: &[RaySamples],
    lambda_depu: f64,
    epsilon: f64,
    scratch: &mut StepScratch,
    grads: &mut [f64],
) -> Result<LossReport> {
    if rays.is_empty() {
        return Err(Error::InvalidArgument("training batch is empty"));
    }
    scratch.points.clear();
    scratch.dirs.clear();
    for ray in rays {
        for &t in &ray.depths {
            scratch
                .points
                .push(ray.origin + ray.direction * t);
            scratch.dirs.push(ray.direction);
        }
    }
    field.forward_batch(&scratch.points, &scratch.dirs, &mut scratch.field)?;

    scratch.results.clear();
    let mut at = 0;
    for ray in rays {
        let s = ray.depths.len();
        let result = render_ray(
            &ray.depths,
            &scratch.field.sigma[at..at + s],
            &scratch.field.rgb[at..at + s],
        )?;
        scratch.results.push(result);
        at += s;
    }

    let targets: Vec<[f64; 3]> = rays.iter().map(|r| r.target).collect();
    let (report, adjoints) = loss_adjoints(&scratch.results, &targets, lambda_depu, epsilon)?;
    if !report.total.is_finite() {
        return Err(Error::NonFinite("total training loss"));
    }

    let total_points = scratch.points.len();
    scratch.d_sigma.clear();
    scratch.d_sigma.resize(total_points, 0.0);
    scratch.d_rgb.clear();
    scratch.d_rgb.resize(total_points, [0.0; 3]);
    let mut at = 0;
    for (ray, (result, (dc, dd))) in rays
        .iter()
        .zip(scratch.results.iter().zip(adjoints.iter()))
    {
        let s = ray.depths.len();
        render_backward(
            &ray.depths,
            &scratch.field.sigma[at..at + s],
            &scratch.field.rgb[at..at + s],
            result,
            *dc,
            *dd,
            &mut scratch.d_sigma[at..at + s],
            &mut scratch.d_rgb[at..at + s],
        )?;
        at += s;
    }

    grads.iter_mut().for_each(|g| *g = 0.0);
    field.backward_batch(&mut scratch.field, &scratch.d_sigma, &scratch.d_rgb, grads)?;
    Ok(report)
}

/// Adam state: first/second moments and the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n: usize) -> AdamState {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        optimizer_step(params, grads, self, lr).expect("adam buffers sized at construction")
    }
}

/// Bias-corrected Adam update.
pub fn optimizer_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::DimensionMismatch {
            what: "optimizer_step buffers",
            expected: state.m.len(),
            got: params.len().min(grads.len()),
        });
    }
    state.t += 1;
    let bc1 = 1.0 - state.beta1.powi(state.t as i32);
    let bc2 = 1.0 - state.beta2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn color_loss_examples() {
        let a = [[0.1, 0.5, 0.9]];
        assert_eq!(color_loss(&a, &a).unwrap(), 0.0);
        let one = color_loss(&[[1.0; 3]], &[[0.0; 3]]).unwrap();
        assert!((one - 3.0).abs() < 1e-15);
        // per-ray squared norms 3 and 1 average to 2
        let two = color_loss(&[[1.0; 3], [1.0, 0.0, 0.0]], &[[0.0; 3], [0.0; 3]]).unwrap();
        assert!((two - 2.0).abs() < 1e-15);
    }

    #[test]
    fn depth_pushing_examples() {
        let near_zero = depth_pushing_loss(&[1.0], 0.01).unwrap();
        assert!((near_zero - -(1.01f64.ln())).abs() < 1e-12);
        let collapsed = depth_pushing_loss(&[0.0], 0.01).unwrap();
        assert!((collapsed - 4.605170185988091).abs() < 1e-12);
        assert!(depth_pushing_loss(&[-0.1], 0.01).is_err());
        assert!(depth_pushing_loss(&[1.0], 0.0).is_err());
    }

    #[test]
    fn depth_pushing_strictly_decreases_in_depth() {
        let eps = 0.01;
        let base = depth_pushing_loss(&[0.5, 2.0, 4.0], eps).unwrap();
        for i in 0..3 {
            let mut d = [0.5, 2.0, 4.0];
            d[i] += 0.25;
            assert!(depth_pushing_loss(&d, eps).unwrap() < base);
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let mut p = [1.0, -2.0, 0.5];
        let mut state = AdamState::new(3);
        optimizer_step(&mut p, &[0.0; 3], &mut state, 0.1).unwrap();
        assert_eq!(p, [1.0, -2.0, 0.5]);
    }

    #[test]
    fn adam_first_step_is_sign_scaled() {
        let mut p = [0.0, 0.0];
        let mut state = AdamState::new(2);
        let lr = 0.01;
        optimizer_step(&mut p, &[0.5, -2.0], &mut state, lr).unwrap();
        for (value, grad) in p.iter().zip([0.5, -2.0]) {
            assert!((value.abs() - lr).abs() < lr * 1e-6);
            assert!(value.signum() == -grad.signum());
        }
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut p = [0.3, -0.7];
            let mut state = AdamState::new(2);
            for i in 0..25 {
                let g = [0.1 * i as f64, -0.05];
                optimizer_step(&mut p, &g, &mut state, 0.02).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn adjoint_of_depth_matches_formula() {
        let results = alloc::vec![
            RenderResult {
                color: [0.5; 3],
                expected_depth: 2.0,
                weights: alloc::vec![0.5],
                transmittances: alloc::vec![1.0],
                accumulation: 0.5,
            },
            RenderResult {
                color: [0.25; 3],
                expected_depth: 4.0,
                weights: alloc::vec![0.25],
                transmittances: alloc::vec![1.0],
                accumulation: 0.25,
            },
        ];
        let targets = [[0.5; 3], [0.25; 3]];
        let (report, adj) = loss_adjoints(&results, &targets, 0.0001, 0.01).unwrap();
        assert_eq!(report.color_loss, 0.0);
        assert_eq!(report.batch_size, 2);
        for (i, (_, dd)) in adj.iter().enumerate() {
            let d = results[i].expected_depth;
            let expect = -0.0001 / (2.0 * (d + 0.01));
            assert!((dd - expect).abs() < 1e-18);
        }
    }
}
