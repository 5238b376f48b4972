//! Fiducial detection simulator.
//!
//! Pipeline per detection: project the four marker corners through the
//! fisheye model, perturb the distorted pixel coordinates with Gaussian
//! noise, undistort the noisy pixels back to unit rays, and re-estimate the
//! marker pose by minimizing ray residuals. Repeating this at a fixed
//! relative position yields the empirical position-noise covariance there.

use nalgebra::{Matrix3, SMatrix, SVector, UnitQuaternion, Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::camera::CameraModel;
use crate::mat3::{eig_sym3, SymMat3};
use crate::{Error, Result};

/// Square planar marker; corners live in the marker frame at z = 0.
#[derive(Debug, Clone, Copy)]
pub struct MarkerGeometry {
    pub side: f64,
}

impl MarkerGeometry {
    pub fn new(side: f64) -> Result<Self> {
        if !(side.is_finite() && side > 0.0) {
            return Err(Error::InvalidInput(format!(
                "marker side must be positive, got {side}"
            )));
        }
        Ok(Self { side })
    }

    pub fn corners(&self) -> [Vector3<f64>; 4] {
        let h = 0.5 * self.side;
        [
            Vector3::new(-h, -h, 0.0),
            Vector3::new(h, -h, 0.0),
            Vector3::new(h, h, 0.0),
            Vector3::new(-h, h, 0.0),
        ]
    }
}

/// Marker pose in the camera frame: `x_cam = R x_marker + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativePose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl RelativePose {
    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    /// Marker lying flat below the camera at `position`.
    pub fn flat_at(position: Vector3<f64>) -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: position,
        }
    }

    pub fn transform(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x + self.translation
    }
}

/// One simulated detection.
#[derive(Debug, Clone)]
pub struct DetectionSample {
    pub true_pose: RelativePose,
    pub est_position: Vector3<f64>,
    pub est_rotation: UnitQuaternion<f64>,
    /// Reprojection of the estimate minus the observed (noisy) pixels.
    pub corner_residuals_px: [Vector2<f64>; 4],
}

/// Pose estimate from corner pixels by damped Gauss-Newton on unit-ray
/// residuals.
///
/// Observed pixels are undistorted once, up front; the optimizer then works
/// entirely with rays, so the distortion polynomial never re-enters the loop.
pub fn solve_pnp(
    corners_px: &[Vector2<f64>],
    marker: &MarkerGeometry,
    cam: &CameraModel,
    init: &RelativePose,
) -> Result<RelativePose> {
    let corners = marker.corners();
    if corners_px.len() != 4 {
        return Err(Error::InvalidInput(format!(
            "need 4 corner observations, got {}",
            corners_px.len()
        )));
    }
    let mut rays = [Vector3::zeros(); 4];
    for (i, px) in corners_px.iter().enumerate() {
        rays[i] = cam.unproject(px)?;
    }

    let mut rot = init.rotation;
    let mut t = init.translation;

    let residual = |rot: &UnitQuaternion<f64>, t: &Vector3<f64>| -> Result<SVector<f64, 12>> {
        let mut r = SVector::<f64, 12>::zeros();
        for i in 0..4 {
            let v = rot * corners[i] + t;
            let n = v.norm();
            if n < 1e-9 {
                return Err(Error::Estimation("corner at the camera center".into()));
            }
            let d = v / n - rays[i];
            r.fixed_rows_mut::<3>(3 * i).copy_from(&d);
        }
        Ok(r)
    };

    let mut r = residual(&rot, &t)?;
    let mut cost = r.norm_squared();
    let mut mu = 1e-8;

    for _iter in 0..100 {
        // Jacobian of ray residuals w.r.t. a right rotation increment and t.
        let rmat = rot.to_rotation_matrix().into_inner();
        let mut jac = SMatrix::<f64, 12, 6>::zeros();
        for i in 0..4 {
            let v = rot * corners[i] + t;
            let n = v.norm();
            let nv = v / n;
            let d_norm = (Matrix3::identity() - nv * nv.transpose()) / n;
            let d_rot = -(rmat * skew(&corners[i])); // d(R exp(w^) c)/dw at 0
            let block_rot = d_norm * d_rot;
            let block_t = d_norm;
            jac.fixed_view_mut::<3, 3>(3 * i, 0).copy_from(&block_rot);
            jac.fixed_view_mut::<3, 3>(3 * i, 3).copy_from(&block_t);
        }

        let jtj = jac.transpose() * jac;
        let jtr = jac.transpose() * r;
        let mut accepted = false;
        for _ in 0..12 {
            let damped = jtj + SMatrix::<f64, 6, 6>::identity() * mu;
            let Some(chol) = damped.cholesky() else {
                mu *= 10.0;
                continue;
            };
            let delta = chol.solve(&(-jtr));
            let w = Vector3::new(delta[0], delta[1], delta[2]);
            let dt = Vector3::new(delta[3], delta[4], delta[5]);
            let rot_new = rot * UnitQuaternion::from_scaled_axis(w);
            let t_new = t + dt;
            let r_new = residual(&rot_new, &t_new)?;
            let cost_new = r_new.norm_squared();
            if cost_new <= cost {
                let step = delta.norm();
                rot = rot_new;
                t = t_new;
                r = r_new;
                cost = cost_new;
                mu = (mu / 3.0).max(1e-12);
                accepted = true;
                if step < 1e-13 {
                    return Ok(RelativePose::new(rot, t));
                }
                break;
            }
            mu *= 10.0;
        }
        if !accepted {
            // Damping saturated: we are at a (local) minimum.
            return Ok(RelativePose::new(rot, t));
        }
        if cost < 1e-28 {
            return Ok(RelativePose::new(rot, t));
        }
    }
    Err(Error::Estimation(
        "pose refinement did not converge within 100 iterations".into(),
    ))
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Simulates one detection: project corners, add pixel noise, re-estimate.
/// Deterministic for a fixed seed.
pub fn simulate_detection(
    cam: &CameraModel,
    marker: &MarkerGeometry,
    pose: &RelativePose,
    sigma_px: f64,
    seed: u64,
) -> Result<DetectionSample> {
    let corners = marker.corners();
    let mut pixels = [Vector2::zeros(); 4];
    for (i, c) in corners.iter().enumerate() {
        let px = cam
            .project(&pose.transform(c))
            .map_err(|e| Error::Visibility(format!("corner {i}: {e}")))?;
        if !cam.contains_pixel(&px) {
            return Err(Error::Visibility(format!(
                "corner {i} projects outside the image at ({:.1}, {:.1})",
                px.x, px.y
            )));
        }
        pixels[i] = px;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    for px in &mut pixels {
        let du: f64 = normal.sample(&mut rng);
        let dv: f64 = normal.sample(&mut rng);
        px.x += sigma_px * du;
        px.y += sigma_px * dv;
    }

    let est = solve_pnp(&pixels, marker, cam, pose)?;

    let mut residuals = [Vector2::zeros(); 4];
    for (i, c) in corners.iter().enumerate() {
        let reproj = cam.project(&est.transform(c)).unwrap_or(pixels[i]);
        residuals[i] = reproj - pixels[i];
    }

    Ok(DetectionSample {
        true_pose: *pose,
        est_position: est.translation,
        est_rotation: est.rotation,
        corner_residuals_px: residuals,
    })
}

/// Unbiased sample covariance and mean of a set of positions.
pub fn position_covariance(positions: &[Vector3<f64>]) -> Result<(SymMat3, Vector3<f64>)> {
    if positions.len() < 30 {
        return Err(Error::SampleSize {
            needed: 30,
            got: positions.len(),
        });
    }
    let n = positions.len() as f64;
    let mean: Vector3<f64> = positions.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for p in positions {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov /= n - 1.0;
    Ok((SymMat3::from_matrix(&cov), mean))
}

/// Covariance of the estimated positions in a batch of detections.
pub fn empirical_covariance(samples: &[DetectionSample]) -> Result<(SymMat3, Vector3<f64>)> {
    let positions: Vec<_> = samples.iter().map(|s| s.est_position).collect();
    position_covariance(&positions)
}

/// Angle in degrees between the covariance's largest eigenvector and the
/// position vector, folded to [0, 90].
pub fn alignment_angle_deg(cov: &SymMat3, p: &Vector3<f64>) -> Result<f64> {
    let d = eig_sym3(cov)?;
    let cos = d.eigenvectors[0].dot(&p.normalize()).abs().min(1.0);
    Ok(cos.acos().to_degrees())
}
