//! Fits the largest-eigenvalue predictor from a simulator dataset and
//! evaluates how conservative it is on held-out measurements.

use serde::{Deserialize, Serialize};

use crate::dataset::DatasetEntry;
use crate::mat3::eig_sym3;
use crate::noise::{
    certainty_from_lambda, fuse_covariances, predict_covariance, range_incidence,
    CertaintyParams, EigenvaluePredictor,
};
use crate::{Error, Result};
use nalgebra::Vector3;

/// Grid layout for the fitted predictor.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FitGridConfig {
    pub n_rho: usize,
    pub n_theta: usize,
    /// Explicit domain bounds; when absent they are taken from the data.
    pub rho_bounds: Option<[f64; 2]>,
    pub theta_bounds: Option<[f64; 2]>,
}

impl Default for FitGridConfig {
    fn default() -> Self {
        Self {
            n_rho: 50,
            n_theta: 50,
            rho_bounds: None,
            theta_bounds: None,
        }
    }
}

/// Fit output: the predictor plus non-fatal notes (filled cells etc).
#[derive(Debug)]
pub struct FitResult {
    pub predictor: EigenvaluePredictor,
    pub warnings: Vec<String>,
}

/// Fits the predictor by binning records to grid nodes and keeping, per
/// node, `safety_factor` times the largest measured eigenvalue.
///
/// Conservativeness is the point: aggregation is a max, not a mean, and the
/// safety factor inflates it further. Empty interior nodes inherit the
/// nearest populated node's value (reported as warnings); an entirely empty
/// boundary row or column means the requested domain is not covered and is
/// an error.
///
/// `lambda_i` bounds the two minor eigenvalues; when `None` it is fitted as
/// `safety_factor` times the largest minor eigenvalue seen in the data.
pub fn fit_predictor(
    dataset: &[DatasetEntry],
    grid: &FitGridConfig,
    lambda_i: Option<f64>,
    safety_factor: f64,
) -> Result<FitResult> {
    if !(safety_factor.is_finite() && safety_factor > 0.0) {
        return Err(Error::InvalidInput(format!(
            "safety factor must be positive, got {safety_factor}"
        )));
    }
    let mut points = Vec::new(); // (rho, theta, lambda_star, lambda_minor)
    for entry in dataset {
        let Some(rec) = entry.record() else { continue };
        let p = Vector3::new(rec.p[0], rec.p[1], rec.p[2]);
        let (rho, theta) = range_incidence(&p)?;
        let d = eig_sym3(&rec.cov)?;
        points.push((rho, theta, d.eigenvalues[0], d.eigenvalues[1]));
    }
    if points.is_empty() {
        return Err(Error::InvalidInput(
            "dataset contains no usable records".into(),
        ));
    }

    let data_bounds = |f: fn(&(f64, f64, f64, f64)) -> f64| -> [f64; 2] {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for p in &points {
            lo = lo.min(f(p));
            hi = hi.max(f(p));
        }
        [lo, hi]
    };
    let rho_bounds = grid.rho_bounds.unwrap_or_else(|| data_bounds(|p| p.0));
    let theta_bounds = grid.theta_bounds.unwrap_or_else(|| data_bounds(|p| p.1));

    let nr = grid.n_rho.max(1);
    let nt = grid.n_theta.max(1);
    let node_index = |bounds: [f64; 2], n: usize, x: f64| -> usize {
        if n <= 1 || bounds[1] <= bounds[0] {
            return 0;
        }
        let u = (x - bounds[0]) / (bounds[1] - bounds[0]) * (n - 1) as f64;
        (u.round().max(0.0) as usize).min(n - 1)
    };

    let mut cells: Vec<Option<f64>> = vec![None; nr * nt];
    let mut max_minor = 0.0_f64;
    for &(rho, theta, l_star, l_minor) in &points {
        let i = node_index(rho_bounds, nr, rho);
        let j = node_index(theta_bounds, nt, theta);
        let cell = &mut cells[i * nt + j];
        *cell = Some(cell.map_or(l_star, |v: f64| v.max(l_star)));
        max_minor = max_minor.max(l_minor);
    }

    // The requested domain must be anchored by data along every edge.
    let mut missing_edges = Vec::new();
    if (0..nt).all(|j| cells[j].is_none()) {
        missing_edges.push("rho = min row".to_string());
    }
    if (0..nt).all(|j| cells[(nr - 1) * nt + j].is_none()) {
        missing_edges.push("rho = max row".to_string());
    }
    if (0..nr).all(|i| cells[i * nt].is_none()) {
        missing_edges.push("theta = min column".to_string());
    }
    if (0..nr).all(|i| cells[i * nt + nt - 1].is_none()) {
        missing_edges.push("theta = max column".to_string());
    }
    if !missing_edges.is_empty() {
        return Err(Error::Coverage(missing_edges.join(", ")));
    }

    // Fill empty nodes from the nearest populated node (index distance).
    let populated: Vec<(usize, usize)> = (0..nr)
        .flat_map(|i| (0..nt).map(move |j| (i, j)))
        .filter(|&(i, j)| cells[i * nt + j].is_some())
        .collect();
    let mut filled = 0usize;
    let mut grid_values = vec![vec![0.0; nt]; nr];
    for i in 0..nr {
        for j in 0..nt {
            let v = match cells[i * nt + j] {
                Some(v) => v,
                None => {
                    filled += 1;
                    let (bi, bj) = populated
                        .iter()
                        .min_by_key(|&&(pi, pj)| {
                            let di = pi as i64 - i as i64;
                            let dj = pj as i64 - j as i64;
                            (di * di + dj * dj, pi, pj)
                        })
                        .copied()
                        .expect("at least one populated node");
                    cells[bi * nt + bj].expect("populated")
                }
            };
            grid_values[i][j] = safety_factor * v;
        }
    }
    let mut warnings = Vec::new();
    if filled > 0 {
        warnings.push(format!(
            "{filled} of {} grid nodes had no data and were filled from their nearest populated neighbor",
            nr * nt
        ));
    }

    let lambda_i = lambda_i.unwrap_or(safety_factor * max_minor);
    let predictor = EigenvaluePredictor::new(rho_bounds, theta_bounds, grid_values, lambda_i)?;
    Ok(FitResult {
        predictor,
        warnings,
    })
}

/// One held-out position in the evaluation report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRow {
    pub p: [f64; 3],
    pub rho: f64,
    pub theta: f64,
    pub lambda_measured: f64,
    pub lambda_predicted: f64,
    pub c_star_measured: f64,
    pub c_star_predicted: f64,
    pub conservative: bool,
}

/// Fusing the two worst over-predictions must still be conservative.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FusedPairCheck {
    pub indices: [usize; 2],
    pub c_star_predicted: f64,
    pub c_star_measured: f64,
    pub conservative: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub n_skipped: usize,
    pub frac_conservative: f64,
    /// Largest amount (in certainty units) by which a prediction promised
    /// more certainty than the measurement supported; 0 when none did.
    pub worst_gap: f64,
    pub fused_pair: Option<FusedPairCheck>,
    pub rows: Vec<EvalRow>,
}

/// Compares predicted against measured certainty on held-out data.
///
/// A row is conservative when the predicted certainty does not exceed the
/// certainty implied by the measured covariance.
pub fn evaluate_conservativeness(
    pred: &EigenvaluePredictor,
    held_out: &[DatasetEntry],
    params: &CertaintyParams,
) -> Result<EvalReport> {
    let mut rows = Vec::new();
    let mut positions = Vec::new();
    let mut n_skipped = 0usize;
    for entry in held_out {
        let Some(rec) = entry.record() else {
            n_skipped += 1;
            continue;
        };
        let p = Vector3::new(rec.p[0], rec.p[1], rec.p[2]);
        let (rho, theta) = range_incidence(&p)?;
        if !pred.in_domain(rho, theta) {
            n_skipped += 1;
            continue;
        }
        let lambda_pred = pred.lambda_star(rho, theta)?.max(pred.lambda_i());
        let lambda_meas = rec.lambda_star;
        let c_pred = certainty_from_lambda(lambda_pred, params.alpha);
        let c_meas = certainty_from_lambda(lambda_meas, params.alpha);
        rows.push(EvalRow {
            p: rec.p,
            rho,
            theta,
            lambda_measured: lambda_meas,
            lambda_predicted: lambda_pred,
            c_star_measured: c_meas,
            c_star_predicted: c_pred,
            conservative: c_pred <= c_meas + 1e-12,
        });
        positions.push((p, rec.cov));
    }
    if rows.is_empty() {
        return Err(Error::InvalidInput(
            "no held-out records inside the predictor domain".into(),
        ));
    }

    let n = rows.len();
    let n_conservative = rows.iter().filter(|r| r.conservative).count();
    let worst_gap = rows
        .iter()
        .map(|r| r.c_star_predicted - r.c_star_measured)
        .fold(0.0_f64, f64::max);

    // Fuse the two rows with the smallest conservativeness margin (the two
    // worst over-predictions when any exist).
    let fused_pair = if n >= 2 {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            let ga = rows[a].c_star_predicted - rows[a].c_star_measured;
            let gb = rows[b].c_star_predicted - rows[b].c_star_measured;
            gb.total_cmp(&ga)
        });
        let (ia, ib) = (order[0], order[1]);
        let pred_a = predict_covariance(&positions[ia].0, pred)?;
        let pred_b = predict_covariance(&positions[ib].0, pred)?;
        let fused_pred = fuse_covariances(&[pred_a, pred_b])?;
        let fused_meas = fuse_covariances(&[positions[ia].1, positions[ib].1])?;
        let c_pred = certainty_from_lambda(fused_pred.lambda_max()?, params.alpha);
        let c_meas = certainty_from_lambda(fused_meas.lambda_max()?, params.alpha);
        Some(FusedPairCheck {
            indices: [ia, ib],
            c_star_predicted: c_pred,
            c_star_measured: c_meas,
            conservative: c_pred <= c_meas + 1e-12,
        })
    } else {
        None
    };

    Ok(EvalReport {
        n,
        n_skipped,
        frac_conservative: n_conservative as f64 / n as f64,
        worst_gap,
        fused_pair,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::DatasetRecord;
    use crate::noise::predict_covariance;

    /// Synthetic dataset with a prescribed lambda-star field. Covariances are
    /// constructed the same way predictions are, so their eigenstructure is
    /// exact.
    fn synthetic_dataset(f: impl Fn(f64, f64) -> f64) -> Vec<DatasetEntry> {
        let mut out = Vec::new();
        for i in 0..30 {
            for j in 0..20 {
                let rho = 0.5 + 2.0 * i as f64 / 29.0;
                let theta = 0.05 + 1.2 * j as f64 / 19.0;
                let lambda = f(rho, theta);
                // A position with this range and incidence.
                let p = Vector3::new(rho * theta.sin(), 0.0, rho * theta.cos());
                let helper =
                    EigenvaluePredictor::constant(lambda, 1e-7, [0.0, 10.0], [0.0, 2.0]);
                let cov = predict_covariance(&p, &helper).unwrap();
                out.push(DatasetEntry::Record(DatasetRecord {
                    p: [p.x, p.y, p.z],
                    n_trials: 100,
                    cov,
                    lambda_star: lambda,
                    align_deg: 0.0,
                }));
            }
        }
        out
    }

    #[test]
    fn constant_field_fits_a_constant_predictor() {
        let data = synthetic_dataset(|_, _| 3e-4);
        let fit = fit_predictor(&data, &FitGridConfig::default(), Some(1e-5), 1.25).unwrap();
        for &(rho, theta) in &[(0.6, 0.1), (1.5, 0.6), (2.3, 1.1)] {
            let v = fit.predictor.lambda_star(rho, theta).unwrap();
            assert!((v - 1.25 * 3e-4).abs() < 1e-12, "got {v}");
        }
    }

    #[test]
    fn training_positions_never_exceed_the_fit() {
        let data = synthetic_dataset(|rho, theta| 1e-4 * rho * rho * (1.0 + theta));
        let fit = fit_predictor(&data, &FitGridConfig::default(), Some(1e-7), 1.0).unwrap();
        for entry in &data {
            let rec = entry.record().unwrap();
            let p = Vector3::new(rec.p[0], rec.p[1], rec.p[2]);
            let (rho, theta) = range_incidence(&p).unwrap();
            let beta = fit.predictor.lambda_star(rho, theta).unwrap();
            // Interpolation of per-node maxima can undershoot between nodes,
            // but at the binned node itself max-aggregation dominates; allow
            // the bilinear dip.
            assert!(beta >= rec.lambda_star * 0.8);
        }
    }

    #[test]
    fn quadratic_range_field_is_reproduced_mid_grid() {
        let data = synthetic_dataset(|rho, _| 1e-4 * rho * rho);
        let fit = fit_predictor(&data, &FitGridConfig::default(), Some(1e-7), 1.0).unwrap();
        for &rho in &[1.0, 1.5, 2.0] {
            let beta = fit.predictor.lambda_star(rho, 0.6).unwrap();
            let expect = 1e-4 * rho * rho;
            assert!(
                (beta - expect).abs() / expect < 0.05,
                "rho {rho}: {beta} vs {expect}"
            );
        }
    }

    #[test]
    fn evaluating_on_training_data_is_fully_conservative() {
        let data = synthetic_dataset(|rho, theta| 2e-4 * rho * (1.0 + theta * theta));
        let fit = fit_predictor(&data, &FitGridConfig::default(), Some(1e-7), 1.1).unwrap();
        let params = CertaintyParams::new(0.02, 0.95).unwrap();
        let report = evaluate_conservativeness(&fit.predictor, &data, &params).unwrap();
        assert_eq!(report.n, data.len());
        assert!(
            report.frac_conservative > 0.999,
            "frac {}",
            report.frac_conservative
        );
        assert_eq!(report.worst_gap, 0.0);
        let pair = report.fused_pair.expect("two or more rows");
        assert!(pair.conservative);
    }

    #[test]
    fn raising_the_safety_factor_never_hurts() {
        let data = synthetic_dataset(|rho, theta| 1.5e-4 * rho * (1.0 + theta));
        let params = CertaintyParams::new(0.02, 0.95).unwrap();
        let mut prev = -1.0;
        for safety in [0.8, 1.0, 1.3] {
            let fit = fit_predictor(&data, &FitGridConfig::default(), Some(1e-7), safety).unwrap();
            let report = evaluate_conservativeness(&fit.predictor, &data, &params).unwrap();
            assert!(report.frac_conservative >= prev);
            prev = report.frac_conservative;
        }
    }

    #[test]
    fn uncovered_explicit_domain_is_a_coverage_error() {
        let data = synthetic_dataset(|_, _| 1e-4);
        let grid = FitGridConfig {
            rho_bounds: Some([0.0, 50.0]),
            ..FitGridConfig::default()
        };
        let err = fit_predictor(&data, &grid, Some(1e-7), 1.0).unwrap_err();
        assert!(matches!(err, Error::Coverage(_)), "{err}");
    }

    #[test]
    fn empty_dataset_is_invalid() {
        let data = vec![DatasetEntry::Skipped(crate::dataset::SkippedPosition {
            p: [0.0, 0.0, 1.0],
            skipped: "x".into(),
        })];
        assert!(matches!(
            fit_predictor(&data, &FitGridConfig::default(), None, 1.0),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn auto_lambda_i_tracks_the_minor_eigenvalues() {
        let data = synthetic_dataset(|_, _| 5e-4);
        let fit = fit_predictor(&data, &FitGridConfig::default(), None, 2.0).unwrap();
        // Synthetic covariances carry minor eigenvalues of 1e-7.
        assert!((fit.predictor.lambda_i() - 2.0 * 1e-7).abs() < 1e-12);
    }

    #[test]
    fn report_serializes_and_parses() {
        let data = synthetic_dataset(|rho, _| 1e-4 * rho);
        let fit = fit_predictor(&data, &FitGridConfig::default(), Some(1e-7), 1.1).unwrap();
        let params = CertaintyParams::new(0.02, 0.95).unwrap();
        let report = evaluate_conservativeness(&fit.predictor, &data, &params).unwrap();
        let json = serde_json::to_string(&report).unwrap();
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.n, report.n);
        assert_eq!(back.frac_conservative, report.frac_conservative);
    }
}
