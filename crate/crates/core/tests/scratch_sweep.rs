use markerplan_core::calibrate::*;
use markerplan_core::camera::CameraModel;
use markerplan_core::check::*;
use markerplan_core::dataset::*;
use markerplan_core::noise::{coverage_radius_3d, CertaintyParams, CoverageConfig};
use markerplan_core::plan::*;
use markerplan_core::sim::MarkerGeometry;
use markerplan_core::structure::Structure;
use std::time::Instant;

#[test]
fn probe_end_to_end() {
    let cam = CameraModel::default_fisheye();
    let marker = MarkerGeometry::new(0.15).unwrap();
    let grid = SphericalGridSpec::default_calibration();
    let train = generate_dataset(&cam, &marker, &grid.positions(), 0.5, 150, 1);
    let cfg = FitGridConfig { n_rho: 24, n_theta: 24, ..Default::default() };
    let fit = fit_predictor(&train, &cfg, None, 1.3).unwrap();
    let pred = fit.predictor;
    std::fs::write("/tmp/predictor.json", pred.to_json_string().unwrap()).unwrap();
    let params = CertaintyParams::new(0.02, 0.95).unwrap();

    // Coverage radius with the checker-matched geometry: nearest faces sit
    // half a unit below the camera.
    let unit = 0.25f64;
    let cov_cfg = CoverageConfig {
        hover_height: 0.5 * unit,
        theta_cap: 80.0_f64.to_radians(),
        probe_points: 32,
        r_max: 3.0,
        tol: 1e-3,
    };
    let r_cov = coverage_radius_3d(&pred, &params, 2, &cov_cfg).unwrap();
    println!("coverage radius {:.3} m = {:.2} units", r_cov, r_cov / unit);

    let s = Structure::rectangular(unit, 10, 10, 2).unwrap();
    let table = sweep_radius(&s, &[1.0, 1.5, 2.0, 2.5], 3, &pred, &params, &CheckConfig::default(), 7).unwrap();
    for row in &table.rows {
        println!("r={} p={:.6} steps={}", row.r, row.p_success, row.steps);
    }

    // 2-visibility at radii under the coverage radius.
    for r in [1.0f64, 1.25, 1.5] {
        if r * unit > r_cov { continue; }
        let markers = default_marker_row(&s, 3);
        let plan = plan_assembly(&s, &markers, &PlannerConfig { radius_units: r, seed: 3, ..Default::default() }).unwrap();
        let rep = check_plan(&s, &plan.actions, &markers, &pred, &params, &CheckConfig::default()).unwrap();
        println!("r={r}: min_vis={} all2={}", rep.min_visible, rep.min_visible >= 2);
    }

    let pyr = Structure::stepped_pyramid(unit, &[24, 22, 20, 18, 4]).unwrap();
    let markers = default_marker_row(&pyr, 3);
    let t0 = Instant::now();
    let plan = plan_assembly(&pyr, &markers, &PlannerConfig { radius_units: 1.5, seed: 7, ..Default::default() }).unwrap();
    let rep = check_plan(&pyr, &plan.actions, &markers, &pred, &params, &CheckConfig::default()).unwrap();
    println!("pyramid: plan+check {:?}, {} actions, P={:.4} min_vis={}", t0.elapsed(), plan.actions.len(), rep.p_success, rep.min_visible);
}
