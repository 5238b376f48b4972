//! Positional-noise model for fiducial markers.
//!
//! A marker observed at camera-frame position `p` yields a position estimate
//! whose noise covariance is highly structured: the largest eigenvector is
//! parallel to `p`, and the two minor eigenvalues are bounded by a small
//! constant. [`predict_covariance`] builds that matrix from a calibrated
//! largest-eigenvalue table, [`fuse_covariances`] combines several markers,
//! and [`certainty_lower_bound`] turns a covariance into a conservative
//! probability that a placement lands within the acceptance radius.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::mat3::{eig_sym3, SymMat3, EPS_PSD};
use crate::stats::erf;
use crate::{Error, Result};

/// File format version for serialized predictors.
pub const PREDICTOR_FORMAT_VERSION: u32 = 1;

/// Calibrated map from (range, incidence angle) to the largest eigenvalue of
/// the position-noise covariance, plus a fixed bound for the two minor
/// eigenvalues.
///
/// The table is a rectilinear grid over `[rho_min, rho_max] x [theta_min,
/// theta_max]` with bilinear interpolation between nodes. Queries outside the
/// bounds are errors, never extrapolations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EigenvaluePredictor {
    version: u32,
    /// Range bounds in meters.
    rho_bounds: [f64; 2],
    /// Incidence-angle bounds in radians (angle from the optical axis).
    theta_bounds: [f64; 2],
    /// `grid[rho_index][theta_index]`, largest eigenvalue in m^2.
    grid: Vec<Vec<f64>>,
    /// Upper bound for the two minor eigenvalues, m^2.
    lambda_i: f64,
}

impl EigenvaluePredictor {
    pub fn new(
        rho_bounds: [f64; 2],
        theta_bounds: [f64; 2],
        grid: Vec<Vec<f64>>,
        lambda_i: f64,
    ) -> Result<Self> {
        if !(rho_bounds[0].is_finite() && rho_bounds[1].is_finite())
            || rho_bounds[0] < 0.0
            || rho_bounds[1] <= rho_bounds[0]
        {
            return Err(Error::InvalidInput(format!(
                "bad range bounds {rho_bounds:?}"
            )));
        }
        if !(theta_bounds[0].is_finite() && theta_bounds[1].is_finite())
            || theta_bounds[0] < 0.0
            || theta_bounds[1] <= theta_bounds[0]
        {
            return Err(Error::InvalidInput(format!(
                "bad angle bounds {theta_bounds:?}"
            )));
        }
        if grid.is_empty() || grid[0].is_empty() {
            return Err(Error::InvalidInput("empty predictor grid".into()));
        }
        let nt = grid[0].len();
        for row in &grid {
            if row.len() != nt {
                return Err(Error::InvalidInput("ragged predictor grid".into()));
            }
            for &v in row {
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "predictor values must be finite and nonnegative, got {v}"
                    )));
                }
            }
        }
        if !(lambda_i.is_finite() && lambda_i > 0.0) {
            return Err(Error::InvalidInput(format!(
                "minor-eigenvalue bound must be positive, got {lambda_i}"
            )));
        }
        Ok(Self {
            version: PREDICTOR_FORMAT_VERSION,
            rho_bounds,
            theta_bounds,
            grid,
            lambda_i,
        })
    }

    /// Constant predictor, mostly for tests and synthetic scenarios.
    pub fn constant(
        lambda_star: f64,
        lambda_i: f64,
        rho_bounds: [f64; 2],
        theta_bounds: [f64; 2],
    ) -> Self {
        Self::new(rho_bounds, theta_bounds, vec![vec![lambda_star]], lambda_i)
            .expect("constant predictor arguments")
    }

    /// Builds a grid by sampling `f(rho, theta)` at the nodes.
    pub fn from_fn(
        rho_bounds: [f64; 2],
        theta_bounds: [f64; 2],
        n_rho: usize,
        n_theta: usize,
        lambda_i: f64,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Self> {
        let grid = (0..n_rho)
            .map(|i| {
                (0..n_theta)
                    .map(|j| {
                        f(
                            node(rho_bounds, n_rho, i),
                            node(theta_bounds, n_theta, j),
                        )
                    })
                    .collect()
            })
            .collect();
        Self::new(rho_bounds, theta_bounds, grid, lambda_i)
    }

    pub fn lambda_i(&self) -> f64 {
        self.lambda_i
    }

    pub fn rho_bounds(&self) -> [f64; 2] {
        self.rho_bounds
    }

    pub fn theta_bounds(&self) -> [f64; 2] {
        self.theta_bounds
    }

    pub fn grid(&self) -> &[Vec<f64>] {
        &self.grid
    }

    pub fn in_domain(&self, rho: f64, theta: f64) -> bool {
        let tol = 1e-9;
        rho >= self.rho_bounds[0] - tol
            && rho <= self.rho_bounds[1] + tol
            && theta >= self.theta_bounds[0] - tol
            && theta <= self.theta_bounds[1] + tol
    }

    /// Largest-eigenvalue prediction at (range, incidence angle).
    pub fn lambda_star(&self, rho: f64, theta: f64) -> Result<f64> {
        if !rho.is_finite() || !theta.is_finite() {
            return Err(Error::InvalidInput(format!(
                "non-finite predictor query ({rho}, {theta})"
            )));
        }
        if rho < self.rho_bounds[0] - 1e-9 || rho > self.rho_bounds[1] + 1e-9 {
            return Err(Error::Domain(format!(
                "range {rho:.4} m outside calibrated [{:.4}, {:.4}] m",
                self.rho_bounds[0], self.rho_bounds[1]
            )));
        }
        if theta < self.theta_bounds[0] - 1e-9 || theta > self.theta_bounds[1] + 1e-9 {
            return Err(Error::Domain(format!(
                "incidence angle {:.2} deg outside calibrated [{:.2}, {:.2}] deg",
                theta.to_degrees(),
                self.theta_bounds[0].to_degrees(),
                self.theta_bounds[1].to_degrees()
            )));
        }
        let (i0, i1, fu) = cell(self.rho_bounds, self.grid.len(), rho);
        let (j0, j1, fv) = cell(self.theta_bounds, self.grid[0].len(), theta);
        let v00 = self.grid[i0][j0];
        let v01 = self.grid[i0][j1];
        let v10 = self.grid[i1][j0];
        let v11 = self.grid[i1][j1];
        Ok(v00 * (1.0 - fu) * (1.0 - fv)
            + v01 * (1.0 - fu) * fv
            + v10 * fu * (1.0 - fv)
            + v11 * fu * fv)
    }

    /// Prediction for a camera-frame relative position (+z = optical axis).
    pub fn lambda_star_at(&self, p: &Vector3<f64>) -> Result<f64> {
        let (rho, theta) = range_incidence(p)?;
        self.lambda_star(rho, theta)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let parsed: Self = serde_json::from_str(s)?;
        if parsed.version != PREDICTOR_FORMAT_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported predictor format version {}",
                parsed.version
            )));
        }
        Self::new(
            parsed.rho_bounds,
            parsed.theta_bounds,
            parsed.grid,
            parsed.lambda_i,
        )
    }
}

fn node(bounds: [f64; 2], n: usize, i: usize) -> f64 {
    if n <= 1 {
        return 0.5 * (bounds[0] + bounds[1]);
    }
    bounds[0] + (bounds[1] - bounds[0]) * i as f64 / (n - 1) as f64
}

fn cell(bounds: [f64; 2], n: usize, x: f64) -> (usize, usize, f64) {
    if n <= 1 {
        return (0, 0, 0.0);
    }
    let u = ((x - bounds[0]) / (bounds[1] - bounds[0]) * (n - 1) as f64)
        .clamp(0.0, (n - 1) as f64);
    let i0 = (u.floor() as usize).min(n - 2);
    (i0, i0 + 1, u - i0 as f64)
}

/// Range and incidence angle of a camera-frame position (+z optical axis).
pub fn range_incidence(p: &Vector3<f64>) -> Result<(f64, f64)> {
    if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
        return Err(Error::InvalidInput("non-finite relative position".into()));
    }
    let rho = p.norm();
    if rho == 0.0 {
        return Err(Error::InvalidInput(
            "relative position has zero range".into(),
        ));
    }
    let theta = p.x.hypot(p.y).atan2(p.z);
    Ok((rho, theta))
}

/// Per-task certainty requirements.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CertaintyParams {
    /// Acceptance radius in meters: a drop within this sphere self-corrects.
    pub alpha: f64,
    /// Required per-step success probability.
    pub c_min: f64,
}

impl CertaintyParams {
    pub fn new(alpha: f64, c_min: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::InvalidInput(format!(
                "acceptance radius must be positive, got {alpha}"
            )));
        }
        if !(c_min.is_finite() && c_min > 0.0 && c_min < 1.0) {
            return Err(Error::InvalidInput(format!(
                "required certainty must lie in (0, 1), got {c_min}"
            )));
        }
        Ok(Self { alpha, c_min })
    }
}

/// Predicted covariance for a marker at camera-frame position `p`.
///
/// The largest eigenvector is `p / |p|` with eigenvalue `beta(p)`; the two
/// orthogonal directions get the fixed minor bound. The product is formed as
/// `V S V^T` (the basis is orthonormal, so the inverse is the transpose) and
/// re-symmetrized to absorb rounding.
pub fn predict_covariance(p: &Vector3<f64>, pred: &EigenvaluePredictor) -> Result<SymMat3> {
    let (rho, theta) = range_incidence(p)?;
    let lambda_star = pred.lambda_star(rho, theta)?;

    let v1 = p / rho;
    // Coordinate axis least parallel to p, so the cross product is never
    // degenerate.
    let a = [v1.x.abs(), v1.y.abs(), v1.z.abs()];
    let mut axis = 0usize;
    for i in 1..3 {
        if a[i] < a[axis] {
            axis = i;
        }
    }
    let e = Vector3::from_fn(|i, _| if i == axis { 1.0 } else { 0.0 });
    let v2 = v1.cross(&e).normalize();
    let v3 = v1.cross(&v2);

    let basis = Matrix3::from_columns(&[v1, v2, v3]);
    let s = Matrix3::from_diagonal(&Vector3::new(lambda_star, pred.lambda_i(), pred.lambda_i()));
    Ok(SymMat3::from_matrix(&(basis * s * basis.transpose())))
}

/// Fuses covariance matrices of independent position estimates.
///
/// Starting from the first matrix, each subsequent one is folded in with
/// `K = S (S + S_i)^-1`, `S <- S - K S`. Algebraically this is the
/// information-form combination `(S^-1 + S_i^-1)^-1`, so the result never
/// exceeds any input.
pub fn fuse_covariances(sigmas: &[SymMat3]) -> Result<SymMat3> {
    if sigmas.is_empty() {
        return Err(Error::InvalidInput("no covariances to fuse".into()));
    }
    for (i, s) in sigmas.iter().enumerate() {
        if !s.is_psd(EPS_PSD) {
            return Err(Error::InvalidInput(format!(
                "covariance {i} is not positive semidefinite"
            )));
        }
    }

    let mut acc = sigmas[0];
    for (i, s) in sigmas.iter().enumerate().skip(1) {
        let sum = acc.add(s);
        let d = eig_sym3(&sum)?;
        let rcond = if d.eigenvalues[0] > 0.0 {
            d.eigenvalues[2] / d.eigenvalues[0]
        } else {
            0.0
        };
        if rcond < 1e-12 {
            return Err(Error::NearSingular { index: i, rcond });
        }
        let chol = sum
            .to_matrix()
            .cholesky()
            .ok_or(Error::NearSingular { index: i, rcond })?;
        let gain = acc.to_matrix() * chol.inverse();
        let next = acc.to_matrix() - gain * acc.to_matrix();
        acc = SymMat3::from_matrix(&next);
    }
    Ok(acc)
}

/// Certainty bound from a largest eigenvalue alone.
///
/// Treats the noise as isotropic at the worst-direction variance and bounds
/// the in-sphere probability by the per-axis box probability. In the
/// operating regime (one dominant eigenvalue) this is conservative.
pub fn certainty_from_lambda(lambda_star: f64, alpha: f64) -> f64 {
    if lambda_star <= 0.0 {
        return 1.0; // perfect-information limit
    }
    erf(alpha / (lambda_star.sqrt() * std::f64::consts::SQRT_2)).powi(3)
}

/// Certainty lower bound for a fused covariance.
pub fn certainty_lower_bound(sigma: &SymMat3, params: &CertaintyParams) -> Result<f64> {
    if !sigma.is_psd(EPS_PSD) {
        return Err(Error::InvalidInput(
            "certainty bound requires a PSD covariance".into(),
        ));
    }
    let lambda = sigma.lambda_max()?;
    Ok(certainty_from_lambda(lambda, params.alpha))
}

/// Largest distance `r` (up to `r_max`) at which `certainty(noise(r))` still
/// meets `c_min`, found by bisection to 1e-9. The composed map must be
/// nonincreasing in `r`.
pub fn coverage_radius_1d(
    noise: impl Fn(f64) -> f64,
    certainty: impl Fn(f64) -> f64,
    c_min: f64,
    r_max: f64,
) -> Result<f64> {
    let value = |r: f64| certainty(noise(r));
    if value(0.0) < c_min {
        return Err(Error::Infeasible(format!(
            "certainty {:.4} at zero distance is below the requirement {c_min}",
            value(0.0)
        )));
    }
    if value(r_max) >= c_min {
        return Ok(r_max);
    }
    let mut lo = 0.0;
    let mut hi = r_max;
    while hi - lo > 1e-9 {
        let mid = 0.5 * (lo + hi);
        if value(mid) >= c_min {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Probe-model configuration for [`coverage_radius_3d`].
#[derive(Debug, Clone, Copy)]
pub struct CoverageConfig {
    /// Camera height above the marker plane, meters.
    pub hover_height: f64,
    /// Incidence angles beyond this contribute nothing (view-cone and
    /// shallow-angle occlusion proxy), radians.
    pub theta_cap: f64,
    /// Probe points along `[0, r]` per feasibility evaluation.
    pub probe_points: usize,
    /// Search upper bound, meters.
    pub r_max: f64,
    /// Bisection tolerance, meters.
    pub tol: f64,
}

impl Default for CoverageConfig {
    fn default() -> Self {
        Self {
            hover_height: 0.375,
            theta_cap: 50.0_f64.to_radians(),
            probe_points: 32,
            r_max: 10.0,
            tol: 1e-3,
        }
    }
}

/// Empirical coverage radius of a marker group.
///
/// Worst case over probe points: the camera hovers at the configured height
/// and all `n_markers` sit at the same horizontal offset `d <= r`, so their
/// fused covariance is the single prediction shrunk by `n`. The returned
/// radius is the largest `r` whose every probe still meets `c_min`.
pub fn coverage_radius_3d(
    pred: &EigenvaluePredictor,
    params: &CertaintyParams,
    n_markers: usize,
    config: &CoverageConfig,
) -> Result<f64> {
    if n_markers == 0 {
        return Err(Error::InvalidInput("need at least one marker".into()));
    }
    let probe_ok = |d: f64| -> bool {
        let p = Vector3::new(d, 0.0, config.hover_height);
        let (rho, theta) = match range_incidence(&p) {
            Ok(v) => v,
            Err(_) => return false,
        };
        if theta > config.theta_cap || !pred.in_domain(rho, theta) {
            return false;
        }
        let lambda = match pred.lambda_star(rho, theta) {
            Ok(l) => l.max(pred.lambda_i()),
            Err(_) => return false,
        };
        certainty_from_lambda(lambda / n_markers as f64, params.alpha) >= params.c_min
    };
    let feasible = |r: f64| -> bool {
        let n = config.probe_points.max(2);
        (0..n).all(|k| probe_ok(r * k as f64 / (n - 1) as f64))
    };

    if !probe_ok(0.0) {
        return Err(Error::Infeasible(
            "certainty requirement unmet even directly under the camera".into(),
        ));
    }
    if feasible(config.r_max) {
        return Ok(config.r_max);
    }
    let mut lo = 0.0;
    let mut hi = config.r_max;
    while hi - lo > config.tol {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}
