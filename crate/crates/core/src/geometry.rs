//! Cameras, rays, world/pixel projection, and the scene contraction map.
//!
//! Conventions (fixed for the whole workspace, including the on-disk
//! dataset format): poses are camera-to-world, the camera looks along +z
//! in its own frame with x right and y down, and continuous pixel
//! coordinates put texel centers at integer positions.

use crate::linalg::{Mat3, Vec3};
use crate::{Error, Result};
use num_traits::Float;

const ORTHONORMAL_TOL: f64 = 1e-9;

/// Pinhole intrinsics in pixel units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let k = CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidArgument("focal lengths must be positive"));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return Err(Error::InvalidArgument("cx must lie inside [0, width)"));
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(Error::InvalidArgument("cy must lie inside [0, height)"));
        }
        Ok(())
    }
}

/// Rigid camera-to-world transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Pose {
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        let p = Pose {
            rotation,
            translation,
        };
        p.validate()?;
        Ok(p)
    }

    /// Checks orthonormality and determinant +1 to 1e-9.
    pub fn validate(&self) -> Result<()> {
        let rt = self.rotation.transpose();
        let should_be_identity = rt.mul_mat(&self.rotation);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                if (should_be_identity.m[i][j] - expect).abs() > ORTHONORMAL_TOL {
                    return Err(Error::InvalidArgument("rotation is not orthonormal"));
                }
            }
        }
        if (self.rotation.det() - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::InvalidArgument("rotation determinant is not +1"));
        }
        Ok(())
    }

    /// Pose positioned at `eye` looking at `target`, with `world_up`
    /// fixing the roll. Camera y points world-down-ish per convention.
    pub fn look_at(eye: Vec3, target: Vec3, world_up: Vec3) -> Result<Pose> {
        let forward = (target - eye)
            .normalized()
            .ok_or(Error::InvalidArgument("look_at: eye equals target"))?;
        let down = (forward * world_up.dot(forward) - world_up)
            .normalized()
            .ok_or(Error::InvalidArgument("look_at: view direction parallel to up"))?;
        let right = down.cross(forward);
        Ok(Pose {
            rotation: Mat3::from_cols(right, down, forward),
            translation: eye,
        })
    }
}

/// A ray with its sampling interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    pub fn new(origin: Vec3, direction: Vec3, t_near: f64, t_far: f64) -> Result<Ray> {
        if (direction.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument("ray direction must be unit length"));
        }
        if !(0.0 <= t_near && t_near < t_far) {
            return Err(Error::InvalidArgument("ray interval must satisfy 0 <= near < far"));
        }
        Ok(Ray {
            origin,
            direction,
            t_near,
            t_far,
        })
    }

    #[inline]
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }

    /// Largest `t` with `||origin + t*direction|| = 1`, if the ray's line
    /// crosses the unit ball in the forward direction.
    pub fn unit_ball_exit(&self) -> Option<f64> {
        let b = self.origin.dot(self.direction);
        let c = self.origin.norm_sq() - 1.0;
        let disc = b * b - c;
        if disc < 0.0 {
            return None;
        }
        let t = -b + disc.sqrt();
        if t > 0.0 {
            Some(t)
        } else {
            None
        }
    }
}

/// Intrinsics plus pose; the unit all projections run through.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub intrinsics: CameraIntrinsics,
    pub pose: Pose,
}

impl Camera {
    pub fn new(intrinsics: CameraIntrinsics, pose: Pose) -> Result<Camera> {
        intrinsics.validate()?;
        pose.validate()?;
        Ok(Camera { intrinsics, pose })
    }

    /// World position of the camera center.
    #[inline]
    pub fn center(&self) -> Vec3 {
        self.pose.translation
    }

    /// Ray through continuous pixel coordinate `(u, v)`.
    pub fn generate_ray(&self, u: f64, v: f64, t_near: f64, t_far: f64) -> Result<Ray> {
        let k = &self.intrinsics;
        if !(u >= 0.0 && u < k.width as f64 && v >= 0.0 && v < k.height as f64) {
            return Err(Error::OutOfBounds {
                what: "generate_ray pixel",
                u,
                v,
                width: k.width,
                height: k.height,
            });
        }
        let dir_cam = Vec3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
        let dir_world = self.pose.rotation.mul_vec(dir_cam);
        let direction = dir_world
            .normalized()
            .expect("back-projected direction has positive length");
        Ray::new(self.center(), direction, t_near, t_far)
    }

    /// Projects a world point. Returns `(u, v, depth)` with `depth` the
    /// camera-frame z, or `None` when the point is behind the camera or
    /// lands outside the image; out-of-view is a valid empty result.
    pub fn project(&self, point: Vec3) -> Option<(f64, f64, f64)> {
        let p_cam = self
            .pose
            .rotation
            .transpose()
            .mul_vec(point - self.pose.translation);
        if p_cam.z <= 0.0 {
            return None;
        }
        let k = &self.intrinsics;
        let u = k.fx * p_cam.x / p_cam.z + k.cx;
        let v = k.fy * p_cam.y / p_cam.z + k.cy;
        if u >= 0.0 && u < k.width as f64 && v >= 0.0 && v < k.height as f64 {
            Some((u, v, p_cam.z))
        } else {
            None
        }
    }

    /// Camera-frame z of a point at ray parameter `t` along `ray`,
    /// assuming the ray originates at this camera.
    pub fn depth_at(&self, ray: &Ray, t: f64) -> f64 {
        let dir_cam = self.pose.rotation.transpose().mul_vec(ray.direction);
        t * dir_cam.z
    }
}

/// Scene contraction: identity inside the unit ball, `(2 - 1/||x||) * x/||x||`
/// outside. Maps all of space into the open ball of radius 2, continuously.
pub fn contract(x: Vec3) -> Vec3 {
    let n = x.norm();
    if n <= 1.0 {
        x
    } else {
        x * ((2.0 - 1.0 / n) / n)
    }
}
