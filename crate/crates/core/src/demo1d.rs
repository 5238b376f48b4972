//! One-dimensional two-beacon world with closed-form answers, used as an
//! end-to-end regression anchor for the coverage radius, the hopping gait,
//! and scalar covariance fusion.
//!
//! Two beacons provide position information whose variance grows as the
//! squared distance; certainty is `1 - variance` and each action requires
//! 0.95. A task beyond both beacons forces the beacons to leapfrog toward
//! it before the task is covered.

use nalgebra::Vector3;

use crate::mat3::SymMat3;
use crate::noise::{coverage_radius_1d, fuse_covariances};
use crate::plan::Action;
use crate::walk::{walk_to_coverage, Landing, MarkerState};
use crate::Result;

#[derive(Debug, Clone, Copy)]
pub struct World1D {
    pub beacon_1: f64,
    pub beacon_2: f64,
    pub task: f64,
    pub c_min: f64,
}

impl Default for World1D {
    fn default() -> Self {
        Self {
            beacon_1: -0.1,
            beacon_2: 0.1,
            task: 0.7,
            c_min: 0.95,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Demo1dResult {
    /// Exact coverage radius from bisection.
    pub coverage_radius: f64,
    /// Hop radius used for the walk: the coverage radius on a millimeter
    /// lattice, since all plan positions live on one.
    pub hop_radius: f64,
    pub moves: Vec<(usize, f64)>,
    pub final_positions: [f64; 2],
    /// Fused position variance at the task after the moves.
    pub fused_sigma: f64,
    pub certainty: f64,
    pub meets_requirement: bool,
}

/// Variance of a beacon reading at distance `r`.
fn noise(r: f64) -> f64 {
    r * r
}

/// Embeds a 1D coordinate on the x axis.
fn embed(x: f64) -> Vector3<f64> {
    Vector3::new(x, 0.0, 0.0)
}

/// Scalar fusion through the 3x3 machinery: the variance sits in the leading
/// entry and the padding axes are inert.
fn fuse_1d(sigmas: &[f64]) -> Result<f64> {
    let mats: Vec<SymMat3> = sigmas
        .iter()
        .map(|&s| SymMat3::diagonal(s, 1.0, 1.0))
        .collect();
    Ok(fuse_covariances(&mats)?.entries()[0])
}

impl World1D {
    pub fn solve(&self) -> Result<Demo1dResult> {
        let coverage_radius =
            coverage_radius_1d(noise, |s| 1.0 - s, self.c_min, 1.0)?;
        let hop_radius = (coverage_radius * 1000.0).round() / 1000.0;

        // Chase the task: while it is uncovered, the rear beacon hops to the
        // edge of the other's coverage, toward the task.
        let mut positions = [self.beacon_1, self.beacon_2];
        for _ in 0..1000 {
            let covered = positions
                .iter()
                .any(|&b| (self.task - b).abs() <= hop_radius);
            if covered {
                break;
            }
            let rear = if (self.task - positions[0]).abs() >= (self.task - positions[1]).abs() {
                0
            } else {
                1
            };
            let anchor = positions[1 - rear];
            positions[rear] = anchor + hop_radius * (self.task - anchor).signum();
        }

        // Reproduce the chase with the generic gait walker.
        let mut markers = vec![
            MarkerState::new(0, embed(self.beacon_1)),
            MarkerState::new(1, embed(self.beacon_2)),
        ];
        let targets = vec![embed(positions[0]), embed(positions[1])];
        let actions = walk_to_coverage(&mut markers, &targets, hop_radius, &Landing::Continuous)?;
        let moves: Vec<(usize, f64)> = actions
            .iter()
            .map(|a| match a {
                Action::MoveMarker { id, to, .. } => (*id, to[0]),
                Action::PlaceBlock { .. } => unreachable!("walks only move markers"),
            })
            .collect();

        let final_positions = [markers[0].position.x, markers[1].position.x];
        let fused_sigma = fuse_1d(&[
            noise(self.task - final_positions[0]),
            noise(self.task - final_positions[1]),
        ])?;
        let certainty = 1.0 - fused_sigma;
        Ok(Demo1dResult {
            coverage_radius,
            hop_radius,
            moves,
            final_positions,
            fused_sigma,
            certainty,
            meets_requirement: certainty >= self.c_min,
        })
    }

    /// True when removing any single move leaves the plan broken: either a
    /// later move starts from the wrong place / lands uncovered, or the task
    /// no longer meets the certainty requirement.
    pub fn plan_is_minimal(&self, result: &Demo1dResult) -> Result<bool> {
        'deletions: for skip in 0..result.moves.len() {
            let mut positions = [self.beacon_1, self.beacon_2];
            for (i, &(id, to)) in result.moves.iter().enumerate() {
                if i == skip {
                    continue;
                }
                // Landing must stay within the other beacon's coverage.
                let other = positions[1 - id];
                if (to - other).abs() > result.hop_radius + 1e-9 {
                    continue 'deletions; // deletion broke the gait
                }
                positions[id] = to;
            }
            let fused = fuse_1d(&[
                noise(self.task - positions[0]),
                noise(self.task - positions[1]),
            ])?;
            if 1.0 - fused >= self.c_min {
                return Ok(false); // plan still works without this move
            }
        }
        Ok(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coverage_radius_matches_the_closed_form() {
        let r = World1D::default().solve().unwrap();
        // sqrt(0.05) = 0.22360...
        assert!((r.coverage_radius - 0.05_f64.sqrt()).abs() < 1e-8);
        assert!((r.coverage_radius - 0.2236).abs() < 1e-4);
        assert_eq!(r.hop_radius, 0.224);
    }

    #[test]
    fn reproduces_the_reference_plan() {
        let r = World1D::default().solve().unwrap();
        assert_eq!(r.moves.len(), 2);
        assert_eq!(r.moves[0].0, 0);
        assert!((r.moves[0].1 - 0.324).abs() < 1e-6);
        assert_eq!(r.moves[1].0, 1);
        assert!((r.moves[1].1 - 0.548).abs() < 1e-6);
    }

    #[test]
    fn fused_variance_meets_the_requirement() {
        let r = World1D::default().solve().unwrap();
        assert!((r.fused_sigma - 0.019859).abs() < 1e-6, "{}", r.fused_sigma);
        assert!(r.fused_sigma <= 0.05);
        assert!(r.meets_requirement);
        assert!((r.certainty - 0.980141).abs() < 1e-5);
    }

    #[test]
    fn every_hop_lands_inside_the_partner_coverage() {
        let w = World1D::default();
        let r = w.solve().unwrap();
        let mut positions = [w.beacon_1, w.beacon_2];
        for &(id, to) in &r.moves {
            let other = positions[1 - id];
            assert!((to - other).abs() <= r.hop_radius + 1e-9);
            positions[id] = to;
        }
    }

    #[test]
    fn the_plan_is_minimal() {
        let w = World1D::default();
        let r = w.solve().unwrap();
        assert!(w.plan_is_minimal(&r).unwrap());
    }
}
