//! Calibration datasets: many noise distributions measured at known
//! relative positions, streamed as JSON lines.

use std::io::{BufRead, Write};

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::CameraModel;
use crate::mat3::{eig_sym3, SymMat3};
use crate::sim::{alignment_angle_deg, empirical_covariance, simulate_detection, MarkerGeometry,
    RelativePose};
use crate::stats::derive_seed;
use crate::{Error, Result};

/// Rectilinear grid of relative positions (camera frame, +z down the axis).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GridSpec {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub n: [usize; 3],
}

impl GridSpec {
    pub fn positions(&self) -> Vec<Vector3<f64>> {
        let axis = |lo: f64, hi: f64, n: usize, i: usize| -> f64 {
            if n <= 1 {
                0.5 * (lo + hi)
            } else {
                lo + (hi - lo) * i as f64 / (n - 1) as f64
            }
        };
        let mut out = Vec::with_capacity(self.n[0] * self.n[1] * self.n[2]);
        for ix in 0..self.n[0] {
            for iy in 0..self.n[1] {
                for iz in 0..self.n[2] {
                    out.push(Vector3::new(
                        axis(self.min[0], self.max[0], self.n[0], ix),
                        axis(self.min[1], self.max[1], self.n[1], iy),
                        axis(self.min[2], self.max[2], self.n[2], iz),
                    ));
                }
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.n[0] * self.n[1] * self.n[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The staggered grid at cell midpoints: disjoint from this grid and
    /// strictly inside it, which makes it a natural held-out split.
    pub fn midpoints(&self) -> GridSpec {
        let mut min = self.min;
        let mut max = self.max;
        let mut n = self.n;
        for d in 0..3 {
            if self.n[d] > 1 {
                let step = (self.max[d] - self.min[d]) / (self.n[d] - 1) as f64;
                min[d] = self.min[d] + 0.5 * step;
                max[d] = self.max[d] - 0.5 * step;
                n[d] = self.n[d] - 1;
            }
        }
        GridSpec { min, max, n }
    }
}

/// Grid over range, incidence angle, and azimuth (camera frame).
///
/// Preferred for calibration: every (range, incidence) combination is
/// sampled across azimuths, so the azimuth dependence of a square marker's
/// noise is folded into the per-node maxima instead of aliasing into the
/// range-incidence table.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SphericalGridSpec {
    pub rho: [f64; 2],
    /// Incidence bounds, radians.
    pub theta: [f64; 2],
    /// Azimuth bounds, radians.
    pub phi: [f64; 2],
    pub n: [usize; 3],
}

impl SphericalGridSpec {
    /// Paper-scale default: 25 x 25 x 10 training positions.
    pub fn default_calibration() -> Self {
        Self {
            rho: [0.15, 3.0],
            theta: [0.0, 82.0_f64.to_radians()],
            phi: [0.0, 81.0_f64.to_radians()],
            n: [25, 25, 10],
        }
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        let axis = |b: [f64; 2], n: usize, i: usize| -> f64 {
            if n <= 1 {
                0.5 * (b[0] + b[1])
            } else {
                b[0] + (b[1] - b[0]) * i as f64 / (n - 1) as f64
            }
        };
        let mut out = Vec::with_capacity(self.len());
        for ir in 0..self.n[0] {
            for it in 0..self.n[1] {
                for ip in 0..self.n[2] {
                    let rho = axis(self.rho, self.n[0], ir);
                    let theta = axis(self.theta, self.n[1], it);
                    let phi = axis(self.phi, self.n[2], ip);
                    out.push(Vector3::new(
                        rho * theta.sin() * phi.cos(),
                        rho * theta.sin() * phi.sin(),
                        rho * theta.cos(),
                    ));
                }
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.n[0] * self.n[1] * self.n[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Staggered held-out grid at cell midpoints.
    pub fn midpoints(&self) -> SphericalGridSpec {
        let mut out = *self;
        let mut shrink = |b: &mut [f64; 2], n: &mut usize| {
            if *n > 1 {
                let step = (b[1] - b[0]) / (*n - 1) as f64;
                b[0] += 0.5 * step;
                b[1] -= 0.5 * step;
                *n -= 1;
            }
        };
        shrink(&mut out.rho, &mut out.n[0]);
        shrink(&mut out.theta, &mut out.n[1]);
        shrink(&mut out.phi, &mut out.n[2]);
        out
    }
}

/// One measured noise distribution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetRecord {
    /// Relative position, meters.
    pub p: [f64; 3],
    pub n_trials: usize,
    /// Upper triangle of the empirical covariance, row major, m^2.
    pub cov: SymMat3,
    /// Largest eigenvalue of the covariance.
    pub lambda_star: f64,
    /// Angle between the largest eigenvector and the position vector, deg.
    pub align_deg: f64,
}

/// A grid position that produced no usable detections.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkippedPosition {
    pub p: [f64; 3],
    pub skipped: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DatasetEntry {
    Record(DatasetRecord),
    Skipped(SkippedPosition),
}

impl DatasetEntry {
    pub fn record(&self) -> Option<&DatasetRecord> {
        match self {
            DatasetEntry::Record(r) => Some(r),
            DatasetEntry::Skipped(_) => None,
        }
    }
}

/// Measures the noise distribution at every grid position.
///
/// Positions run in parallel; each derives its own seed from the master seed
/// and its index, so the output is identical regardless of scheduling.
/// Invisible or estimation-failing positions become [`SkippedPosition`]
/// entries rather than errors.
pub fn generate_dataset(
    cam: &CameraModel,
    marker: &MarkerGeometry,
    positions: &[Vector3<f64>],
    sigma_px: f64,
    trials: usize,
    seed: u64,
) -> Vec<DatasetEntry> {
    positions
        .par_iter()
        .enumerate()
        .map(|(idx, &p)| {
            let pos_seed = derive_seed(seed, idx as u64);
            let pose = RelativePose::flat_at(p);
            let mut samples = Vec::with_capacity(trials);
            let mut last_err = String::new();
            for t in 0..trials {
                match simulate_detection(cam, marker, &pose, sigma_px, derive_seed(pos_seed, t as u64))
                {
                    Ok(s) => samples.push(s),
                    Err(e) => last_err = e.to_string(),
                }
            }
            if samples.len() < trials / 2 || samples.len() < 30 {
                return DatasetEntry::Skipped(SkippedPosition {
                    p: [p.x, p.y, p.z],
                    skipped: format!(
                        "{} of {trials} trials usable; last error: {last_err}",
                        samples.len()
                    ),
                });
            }
            let (cov, _mean) = empirical_covariance(&samples).expect("enough samples");
            let lambda_star = eig_sym3(&cov)
                .map(|d| d.eigenvalues[0])
                .unwrap_or(f64::NAN);
            let align_deg = alignment_angle_deg(&cov, &p).unwrap_or(f64::NAN);
            DatasetEntry::Record(DatasetRecord {
                p: [p.x, p.y, p.z],
                n_trials: samples.len(),
                cov,
                lambda_star,
                align_deg,
            })
        })
        .collect()
}

pub fn write_jsonl<W: Write>(mut w: W, entries: &[DatasetEntry]) -> Result<()> {
    for e in entries {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<DatasetEntry>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: DatasetEntry = serde_json::from_str(&line)
            .map_err(|e| Error::InvalidInput(format!("dataset line {}: {e}", i + 1)))?;
        out.push(entry);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_position_grid_produces_one_record() {
        let cam = CameraModel::default_fisheye();
        let marker = MarkerGeometry::new(0.15).unwrap();
        let grid = GridSpec {
            min: [0.0, 0.0, 1.0],
            max: [0.0, 0.0, 1.0],
            n: [1, 1, 1],
        };
        let out = generate_dataset(&cam, &marker, &grid.positions(), 0.5, 100, 4);
        assert_eq!(out.len(), 1);
        let rec = out[0].record().expect("visible position");
        assert!(rec.lambda_star > 0.0);
        assert!(rec.n_trials >= 50);
    }

    #[test]
    fn regeneration_is_byte_identical() {
        let cam = CameraModel::default_fisheye();
        let marker = MarkerGeometry::new(0.15).unwrap();
        let grid = GridSpec {
            min: [-0.4, -0.4, 0.8],
            max: [0.4, 0.4, 1.6],
            n: [2, 2, 2],
        };
        let positions = grid.positions();
        let a = generate_dataset(&cam, &marker, &positions, 0.5, 60, 11);
        let b = generate_dataset(&cam, &marker, &positions, 0.5, 60, 11);
        let mut buf_a = Vec::new();
        let mut buf_b = Vec::new();
        write_jsonl(&mut buf_a, &a).unwrap();
        write_jsonl(&mut buf_b, &b).unwrap();
        assert_eq!(buf_a, buf_b);
        let parsed = read_jsonl(buf_a.as_slice()).unwrap();
        assert_eq!(parsed.len(), a.len());
    }

    #[test]
    fn invisible_positions_are_skipped_not_fatal() {
        let cam = CameraModel::default_fisheye();
        let marker = MarkerGeometry::new(0.15).unwrap();
        // Behind the usable cone (incidence beyond 95 degrees).
        let positions = vec![Vector3::new(5.0, 0.0, -1.0)];
        let out = generate_dataset(&cam, &marker, &positions, 0.5, 40, 1);
        match &out[0] {
            DatasetEntry::Skipped(s) => assert!(!s.skipped.is_empty()),
            DatasetEntry::Record(_) => panic!("expected a skipped entry"),
        }
    }

    #[test]
    fn midpoint_grid_is_disjoint_and_interior() {
        let grid = GridSpec {
            min: [-1.5, -1.5, 0.125],
            max: [1.5, 1.5, 2.375],
            n: [25, 25, 10],
        };
        assert_eq!(grid.len(), 6250);
        let mid = grid.midpoints();
        assert_eq!(mid.len(), 24 * 24 * 9);
        assert!(mid.min[2] > grid.min[2] && mid.max[2] < grid.max[2]);
        let train = grid.positions();
        let test = mid.positions();
        for t in test.iter().take(50) {
            assert!(train.iter().all(|p| (p - t).norm() > 1e-9));
        }
    }
}
