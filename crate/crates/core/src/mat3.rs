//! Symmetric 3x3 matrices and their eigendecomposition.
//!
//! Covariances everywhere in this crate are [`SymMat3`]: six stored entries,
//! so symmetry holds by construction. Eigendecomposition uses cyclic Jacobi
//! rotations, which are unconditionally stable at this size.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Absolute eigenvalue slack below zero still accepted as positive
/// semidefinite. Fusion arithmetic rounds at ~1e-16 and inversion amplifies
/// it, so exact nonnegativity is too strict.
pub const EPS_PSD: f64 = 1e-10;

/// Symmetric 3x3 matrix stored as the upper triangle, row major:
/// `[a00, a01, a02, a11, a12, a22]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SymMat3 {
    e: [f64; 6],
}

impl SymMat3 {
    pub fn new(e: [f64; 6]) -> Self {
        Self { e }
    }

    pub fn zeros() -> Self {
        Self { e: [0.0; 6] }
    }

    pub fn identity() -> Self {
        Self::diagonal(1.0, 1.0, 1.0)
    }

    pub fn diagonal(a: f64, b: f64, c: f64) -> Self {
        Self {
            e: [a, 0.0, 0.0, b, 0.0, c],
        }
    }

    /// Builds from a dense matrix, averaging the two triangles so that small
    /// asymmetries from rounding are suppressed rather than silently kept.
    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        Self {
            e: [
                m[(0, 0)],
                0.5 * (m[(0, 1)] + m[(1, 0)]),
                0.5 * (m[(0, 2)] + m[(2, 0)]),
                m[(1, 1)],
                0.5 * (m[(1, 2)] + m[(2, 1)]),
                m[(2, 2)],
            ],
        }
    }

    pub fn to_matrix(&self) -> Matrix3<f64> {
        let e = &self.e;
        Matrix3::new(e[0], e[1], e[2], e[1], e[3], e[4], e[2], e[4], e[5])
    }

    pub fn entries(&self) -> &[f64; 6] {
        &self.e
    }

    pub fn is_finite(&self) -> bool {
        self.e.iter().all(|x| x.is_finite())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.to_matrix().norm()
    }

    pub fn scale(&self, k: f64) -> Self {
        let mut e = self.e;
        for x in &mut e {
            *x *= k;
        }
        Self { e }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut e = self.e;
        for (x, y) in e.iter_mut().zip(other.e.iter()) {
            *x += y;
        }
        Self { e }
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut e = self.e;
        for (x, y) in e.iter_mut().zip(other.e.iter()) {
            *x -= y;
        }
        Self { e }
    }

    /// True when all eigenvalues are at least `-eps`.
    pub fn is_psd(&self, eps: f64) -> bool {
        match eig_sym3(self) {
            Ok(d) => d.eigenvalues[2] >= -eps,
            Err(_) => false,
        }
    }

    /// Largest eigenvalue.
    pub fn lambda_max(&self) -> Result<f64> {
        Ok(eig_sym3(self)?.eigenvalues[0])
    }
}

/// Eigendecomposition of a symmetric 3x3 matrix.
///
/// Eigenvalues are sorted descending; eigenvectors form a right-handed-or-not
/// orthonormal basis matching that order.
#[derive(Debug, Clone)]
pub struct EigenDecomp3 {
    pub eigenvalues: [f64; 3],
    pub eigenvectors: [Vector3<f64>; 3],
}

impl EigenDecomp3 {
    /// Rebuilds `V diag(l) V^T`.
    pub fn reconstruct(&self) -> Matrix3<f64> {
        let mut m = Matrix3::zeros();
        for i in 0..3 {
            m += self.eigenvalues[i] * self.eigenvectors[i] * self.eigenvectors[i].transpose();
        }
        m
    }
}

/// Eigendecomposition by cyclic Jacobi rotations.
///
/// Stops when the off-diagonal Frobenius norm drops below `1e-14 * ||A||_F`
/// or after 50 sweeps; 3x3 symmetric matrices converge in a handful.
pub fn eig_sym3(a: &SymMat3) -> Result<EigenDecomp3> {
    if !a.is_finite() {
        return Err(Error::InvalidInput(
            "eigendecomposition input has non-finite entries".into(),
        ));
    }

    let mut m = a.to_matrix();
    let mut v = Matrix3::<f64>::identity();
    let norm = m.norm();
    let tol = 1e-14 * norm;

    for _sweep in 0..50 {
        let off = (2.0 * (m[(0, 1)].powi(2) + m[(0, 2)].powi(2) + m[(1, 2)].powi(2))).sqrt();
        if off <= tol {
            break;
        }
        for &(p, q) in &[(0usize, 1usize), (0, 2), (1, 2)] {
            let apq = m[(p, q)];
            if apq == 0.0 {
                continue;
            }
            // Rotation angle that zeroes m[(p, q)].
            let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
            let t = if theta >= 0.0 {
                1.0 / (theta + (theta * theta + 1.0).sqrt())
            } else {
                -1.0 / (-theta + (theta * theta + 1.0).sqrt())
            };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;

            let mut j = Matrix3::<f64>::identity();
            j[(p, p)] = c;
            j[(q, q)] = c;
            j[(p, q)] = s;
            j[(q, p)] = -s;

            m = j.transpose() * m * j;
            // Re-symmetrize the rotated pair; the product drifts at ~1e-17.
            m[(q, p)] = m[(p, q)];
            v *= j;
        }
    }

    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]));

    let eigenvalues = [
        m[(order[0], order[0])],
        m[(order[1], order[1])],
        m[(order[2], order[2])],
    ];
    let eigenvectors = [
        v.column(order[0]).into_owned(),
        v.column(order[1]).into_owned(),
        v.column(order[2]).into_owned(),
    ];

    Ok(EigenDecomp3 {
        eigenvalues,
        eigenvectors,
    })
}
