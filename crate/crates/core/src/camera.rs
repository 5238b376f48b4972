//! Fisheye camera model with an odd-polynomial radial mapping.
//!
//! Projection maps the incidence angle `theta` (from the optical axis) to an
//! image radius `r(theta) = theta + k1 t^3 + k2 t^5 + k3 t^7 + k4 t^9`;
//! unprojection inverts the polynomial by Newton iteration. The optical axis
//! is +z in the camera frame.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Radial polynomial coefficients for theta^3, theta^5, theta^7, theta^9.
    pub k: [f64; 4],
    pub width: u32,
    pub height: u32,
    /// Largest usable incidence angle, radians.
    pub theta_max: f64,
}

/// On-disk camera description (angles in degrees).
#[derive(Debug, Serialize, Deserialize)]
struct CameraFile {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    k: [f64; 4],
    width: u32,
    height: u32,
    theta_max_deg: f64,
}

impl CameraModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        k: [f64; 4],
        width: u32,
        height: u32,
        theta_max: f64,
    ) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            k,
            width,
            height,
            theta_max,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Wide-angle defaults used throughout the simulator.
    pub fn default_fisheye() -> Self {
        Self::new(
            285.0,
            285.0,
            640.0,
            480.0,
            [-0.02, 0.002, 0.0, 0.0],
            1280,
            960,
            95.0_f64.to_radians(),
        )
        .expect("default camera parameters are valid")
    }

    fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidInput(format!(
                "focal lengths must be positive ({}, {})",
                self.fx, self.fy
            )));
        }
        if !(self.theta_max > 0.0 && self.theta_max < std::f64::consts::PI) {
            return Err(Error::InvalidInput(format!(
                "theta_max out of range: {}",
                self.theta_max
            )));
        }
        // The radial polynomial must be strictly increasing over the usable
        // field of view, otherwise projection is not invertible.
        for i in 0..=100 {
            let theta = self.theta_max * i as f64 / 100.0;
            if self.radial_slope(theta) <= 0.0 {
                return Err(Error::InvalidInput(format!(
                    "radial polynomial not increasing at theta = {theta:.4} rad"
                )));
            }
        }
        Ok(())
    }

    /// r(theta): image radius (before focal scaling) for an incidence angle.
    pub fn radial(&self, theta: f64) -> f64 {
        let t2 = theta * theta;
        theta * (1.0 + t2 * (self.k[0] + t2 * (self.k[1] + t2 * (self.k[2] + t2 * self.k[3]))))
    }

    fn radial_slope(&self, theta: f64) -> f64 {
        let t2 = theta * theta;
        1.0 + t2
            * (3.0 * self.k[0]
                + t2 * (5.0 * self.k[1] + t2 * (7.0 * self.k[2] + t2 * 9.0 * self.k[3])))
    }

    /// Projects a camera-frame point to pixels.
    pub fn project(&self, x: &Vector3<f64>) -> Result<Vector2<f64>> {
        if !(x.x.is_finite() && x.y.is_finite() && x.z.is_finite()) {
            return Err(Error::InvalidInput("non-finite point".into()));
        }
        let r_xy = x.x.hypot(x.y);
        let theta = r_xy.atan2(x.z);
        if theta > self.theta_max {
            return Err(Error::Projection(format!(
                "incidence angle {:.2} deg beyond the field of view ({:.2} deg)",
                theta.to_degrees(),
                self.theta_max.to_degrees()
            )));
        }
        if r_xy < 1e-12 {
            return Ok(Vector2::new(self.cx, self.cy));
        }
        let rd = self.radial(theta);
        Ok(Vector2::new(
            self.cx + self.fx * rd * x.x / r_xy,
            self.cy + self.fy * rd * x.y / r_xy,
        ))
    }

    /// Unprojects a pixel to a unit ray by inverting the radial polynomial.
    pub fn unproject(&self, px: &Vector2<f64>) -> Result<Vector3<f64>> {
        let dx = (px.x - self.cx) / self.fx;
        let dy = (px.y - self.cy) / self.fy;
        let rd = dx.hypot(dy);
        if rd < 1e-14 {
            return Ok(Vector3::new(0.0, 0.0, 1.0));
        }
        let mut theta = rd.min(self.theta_max);
        let mut converged = false;
        for _ in 0..50 {
            let f = self.radial(theta) - rd;
            let step = f / self.radial_slope(theta);
            theta -= step;
            if step.abs() < 1e-14 {
                converged = true;
                break;
            }
        }
        if !converged || !theta.is_finite() {
            return Err(Error::Undistort(format!(
                "radial inversion diverged for pixel ({:.1}, {:.1})",
                px.x, px.y
            )));
        }
        if theta > self.theta_max + 1e-9 || theta < 0.0 {
            return Err(Error::Undistort(format!(
                "pixel ({:.1}, {:.1}) maps beyond the field of view",
                px.x, px.y
            )));
        }
        let (s, c) = theta.sin_cos();
        Ok(Vector3::new(s * dx / rd, s * dy / rd, c))
    }

    pub fn contains_pixel(&self, px: &Vector2<f64>) -> bool {
        px.x >= 0.0 && px.x <= self.width as f64 && px.y >= 0.0 && px.y <= self.height as f64
    }

    pub fn to_json_string(&self) -> Result<String> {
        let file = CameraFile {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            k: self.k,
            width: self.width,
            height: self.height,
            theta_max_deg: self.theta_max.to_degrees(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let f: CameraFile = serde_json::from_str(s)?;
        Self::new(
            f.fx,
            f.fy,
            f.cx,
            f.cy,
            f.k,
            f.width,
            f.height,
            f.theta_max_deg.to_radians(),
        )
    }
}
