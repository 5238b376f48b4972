//! Error function, seeded Gaussian sampling, and seed derivation.
//!
//! Every stochastic routine in the crate takes an explicit 64-bit seed and
//! draws from a ChaCha counter-based generator, so results are reproducible
//! regardless of thread scheduling.

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::mat3::{eig_sym3, SymMat3, EPS_PSD};
use crate::{Error, Result};

/// Error function, accurate to better than 1e-12 absolute over the reals.
///
/// Computed through the regularized lower incomplete gamma function
/// `P(1/2, x^2)`: a power series below the switch point and a Lentz-style
/// continued fraction above it.
pub fn erf(x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let p = gamma_p_half(x * x);
    if x > 0.0 {
        p
    } else {
        -p
    }
}

/// Regularized lower incomplete gamma P(1/2, x) for x >= 0.
fn gamma_p_half(x: f64) -> f64 {
    const A: f64 = 0.5;
    // ln Gamma(1/2) = ln sqrt(pi)
    let ln_gamma_a = 0.5 * std::f64::consts::PI.ln();
    if x <= 0.0 {
        return 0.0;
    }
    let prefactor = (-x + A * x.ln() - ln_gamma_a).exp();
    if x < A + 1.0 {
        // Series representation.
        let mut ap = A;
        let mut sum = 1.0 / A;
        let mut term = sum;
        for _ in 0..200 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        sum * prefactor
    } else {
        // Continued fraction for Q, evaluated by modified Lentz.
        const FPMIN: f64 = 1e-300;
        let mut b = x + 1.0 - A;
        let mut c = 1.0 / FPMIN;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..200 {
            let an = -(i as f64) * (i as f64 - A);
            b += 2.0;
            d = an * d + b;
            if d.abs() < FPMIN {
                d = FPMIN;
            }
            c = b + an / c;
            if c.abs() < FPMIN {
                c = FPMIN;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < 1e-17 {
                break;
            }
        }
        1.0 - prefactor * h
    }
}

/// Stable per-item seed derivation from a master seed (splitmix64 mix).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Symmetric square root factor `V diag(sqrt(l)) V^T` of a PSD matrix.
/// Eigenvalues inside the PSD tolerance are clamped to zero.
pub fn psd_sqrt_factor(cov: &SymMat3) -> Result<Matrix3<f64>> {
    let d = eig_sym3(cov)?;
    if d.eigenvalues[2] < -EPS_PSD {
        return Err(Error::InvalidInput(format!(
            "covariance is not PSD (min eigenvalue {:.3e})",
            d.eigenvalues[2]
        )));
    }
    let mut l = Matrix3::zeros();
    for i in 0..3 {
        let s = d.eigenvalues[i].max(0.0).sqrt();
        l += s * d.eigenvectors[i] * d.eigenvectors[i].transpose();
    }
    Ok(l)
}

/// Draws `n` samples from `N(mean, cov)`, deterministically for a fixed seed.
pub fn sample_gaussian(
    mean: &Vector3<f64>,
    cov: &SymMat3,
    n: usize,
    seed: u64,
) -> Result<Vec<Vector3<f64>>> {
    let l = psd_sqrt_factor(cov)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let z = Vector3::new(
            normal.sample(&mut rng),
            normal.sample(&mut rng),
            normal.sample(&mut rng),
        );
        out.push(mean + l * z);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Quadrature oracle: erf(x) = 2/sqrt(pi) * integral of exp(-t^2),
    /// composite Simpson with enough intervals for ~1e-13 accuracy.
    fn erf_quadrature(x: f64) -> f64 {
        if x < 0.0 {
            return -erf_quadrature(-x);
        }
        let n = 20_000usize; // even
        let h = x / n as f64;
        let f = |t: f64| (-t * t).exp();
        let mut s = f(0.0) + f(x);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(i as f64 * h);
        }
        (2.0 / std::f64::consts::PI.sqrt()) * s * h / 3.0
    }

    #[test]
    fn erf_matches_quadrature_oracle() {
        for i in 0..=60 {
            let x = i as f64 * 0.1;
            let diff = (erf(x) - erf_quadrature(x)).abs();
            assert!(diff <= 1e-12, "x={x}: erf={} diff={diff:.3e}", erf(x));
        }
    }

    #[test]
    fn erf_reference_points() {
        assert_eq!(erf(0.0), 0.0);
        assert!((erf(0.7071067811865476) - 0.6826894921370859).abs() <= 1e-12);
        assert!((erf(1.4142135623730951) - 0.9544997361036416).abs() <= 1e-12);
    }

    #[test]
    fn erf_is_odd_monotone_and_bounded() {
        let mut prev = -1.0;
        for i in -50..=50 {
            let x = i as f64 * 0.1;
            let y = erf(x);
            assert!((y + erf(-x)).abs() < 1e-15);
            assert!(y > prev, "not increasing at x={x}");
            assert!(y.abs() < 1.0);
            let c = y.max(0.0).powi(3);
            assert!((0.0..1.0).contains(&c));
            prev = y;
        }
    }

    fn sample_cov(samples: &[Vector3<f64>]) -> Matrix3<f64> {
        let n = samples.len() as f64;
        let mean: Vector3<f64> = samples.iter().sum::<Vector3<f64>>() / n;
        let mut c = Matrix3::zeros();
        for s in samples {
            let d = s - mean;
            c += d * d.transpose();
        }
        c / (n - 1.0)
    }

    #[test]
    fn zero_covariance_repeats_the_mean() {
        let mean = Vector3::new(1.0, -2.0, 3.0);
        let xs = sample_gaussian(&mean, &SymMat3::zeros(), 100, 42).unwrap();
        assert!(xs.iter().all(|x| (x - mean).norm() == 0.0));
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let mean = Vector3::zeros();
        let a = sample_gaussian(&mean, &SymMat3::identity(), 1000, 9).unwrap();
        let b = sample_gaussian(&mean, &SymMat3::identity(), 1000, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn identity_covariance_recovered_within_one_percent() {
        let xs = sample_gaussian(&Vector3::zeros(), &SymMat3::identity(), 1_000_000, 3).unwrap();
        let c = sample_cov(&xs);
        let err = (c - Matrix3::identity()).norm() / Matrix3::<f64>::identity().norm();
        assert!(err < 0.01, "relative Frobenius error {err}");
    }

    #[test]
    fn cholesky_affine_transform_recovers_target_covariance() {
        // Draw N(0, I), map through the Cholesky factor computed by nalgebra
        // (an independent factorization route), and check the sample
        // covariance approaches the target.
        let target = SymMat3::new([4e-4, 1e-4, 0.0, 2e-4, 5e-5, 3e-4]);
        let chol = target.to_matrix().cholesky().expect("PD target").l();
        let z = sample_gaussian(&Vector3::zeros(), &SymMat3::identity(), 200_000, 17).unwrap();
        let mapped: Vec<_> = z.iter().map(|v| chol * v).collect();
        let c = sample_cov(&mapped);
        let err = (c - target.to_matrix()).norm() / target.frobenius_norm();
        assert!(err < 0.02, "relative error {err}");
    }

    #[test]
    fn non_psd_covariance_is_rejected() {
        let bad = SymMat3::diagonal(1.0, -1e-3, 1.0);
        assert!(matches!(
            sample_gaussian(&Vector3::zeros(), &bad, 10, 0),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn derived_seeds_spread() {
        let a = derive_seed(1, 0);
        let b = derive_seed(1, 1);
        let c = derive_seed(2, 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, derive_seed(1, 0));
    }
}
