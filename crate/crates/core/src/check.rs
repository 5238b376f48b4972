//! Plan checking: replays a plan against the structure geometry, tracking
//! which markers the hovering robot can actually see at every step, the
//! fused certainty of its position estimate, and the whole-mission success
//! probability.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geom::ray_aabb_intersect;
use crate::noise::{
    certainty_lower_bound, fuse_covariances, predict_covariance, range_incidence,
    CertaintyParams, EigenvaluePredictor,
};
use crate::plan::{default_marker_row, plan_assembly, Action, PlannerConfig};
use crate::structure::{Slot, Structure};
use crate::walk::MarkerState;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CheckConfig {
    /// Camera hover height above the action target, in structure units.
    pub hover_units: f64,
    /// Height of a marker module's fiducial face above its resting surface,
    /// in structure units. The markers are block-sized connector modules, so
    /// a marker standing in a slot presents its face flush with the
    /// neighboring block tops rather than at the bottom of the slot.
    pub marker_face_units: f64,
    /// Camera view half-cone, radians.
    pub view_cone: f64,
    /// Steps need at least this many visible markers to pass.
    pub min_visible: usize,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            // Marker faces reach up to two units above a slot base (module
            // on top of a block), so the camera must stand off farther than
            // that to keep them in the downward view cone.
            hover_units: 2.5,
            marker_face_units: 1.0,
            view_cone: 95.0_f64.to_radians(),
            min_visible: 2,
        }
    }
}

/// Mutable replay state: placed blocks and where the markers stand.
#[derive(Debug, Clone)]
pub struct WorldState {
    pub unit: f64,
    pub placed: Vec<Slot>,
    pub markers: Vec<MarkerState>,
}

impl WorldState {
    pub fn new(unit: f64, markers: Vec<MarkerState>) -> Self {
        Self {
            unit,
            placed: Vec::new(),
            markers,
        }
    }
}

/// Ids of markers the camera can see: inside the view cone, inside the
/// predictor's calibrated domain, and with an unobstructed line of sight
/// through the placed blocks. `carried` is excluded (the robot holds it).
pub fn visible_markers(
    state: &WorldState,
    camera: &Vector3<f64>,
    pred: &EigenvaluePredictor,
    config: &CheckConfig,
    carried: Option<usize>,
) -> Vec<usize> {
    let face_lift = Vector3::new(0.0, 0.0, config.marker_face_units * state.unit);
    let mut out = Vec::new();
    for mk in &state.markers {
        if Some(mk.id) == carried {
            continue;
        }
        let face = mk.position + face_lift;
        let p = face - camera;
        // Incidence angle off straight down.
        let theta = p.x.hypot(p.y).atan2(-p.z);
        if theta > config.view_cone {
            continue;
        }
        let rho = p.norm();
        if rho <= 0.0 || !pred.in_domain(rho, theta) {
            continue;
        }
        if occluded(state, camera, &face) {
            continue;
        }
        out.push(mk.id);
    }
    out.sort_unstable();
    out
}

/// Line-of-sight test against the placed blocks. The segment is shortened a
/// hair at the marker end: a marker rests exactly on its supporting block's
/// top face, and that contact point is not an obstruction.
fn occluded(state: &WorldState, camera: &Vector3<f64>, marker: &Vector3<f64>) -> bool {
    let dir = (marker - camera) * (1.0 - 1e-9);
    let lo_x = camera.x.min(marker.x);
    let hi_x = camera.x.max(marker.x);
    let lo_y = camera.y.min(marker.y);
    let hi_y = camera.y.max(marker.y);
    for slot in &state.placed {
        let (bmin, bmax) = slot.block_box(state.unit);
        if bmax.x < lo_x || bmin.x > hi_x || bmax.y < lo_y || bmin.y > hi_y {
            continue;
        }
        if ray_aabb_intersect(camera, &dir, &bmin, &bmax).unwrap_or(false) {
            return true;
        }
    }
    false
}

/// Camera-frame relative position of a marker for a straight-down camera.
fn camera_frame(p_world: &Vector3<f64>) -> Vector3<f64> {
    // World -> camera rotation for an optical axis pointing along -z:
    // x stays, y flips, z flips (a 180-degree turn about x).
    Vector3::new(p_world.x, -p_world.y, -p_world.z)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub idx: usize,
    pub op: String,
    pub visible: Vec<usize>,
    /// Largest eigenvalue of the fused covariance; absent with no markers.
    pub lambda_star: Option<f64>,
    pub c_star: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckReport {
    pub n_steps: usize,
    pub p_success: f64,
    pub min_visible: usize,
    pub all_ok: bool,
    pub steps: Vec<StepRecord>,
}

/// Reconstructs marker start positions from the first move of each marker
/// in the action stream. Markers that never move cannot be recovered.
pub fn initial_markers_from_actions(actions: &[Action]) -> Vec<MarkerState> {
    let mut seen = std::collections::BTreeMap::new();
    for a in actions {
        if let Action::MoveMarker { id, from, .. } = a {
            seen.entry(*id)
                .or_insert_with(|| Vector3::new(from[0], from[1], from[2]));
        }
    }
    seen.into_iter()
        .map(|(id, p)| MarkerState::new(id, p))
        .collect()
}

/// Replays the plan action by action.
///
/// For each action the camera hovers a configured height above the action's
/// target; the covariances of all visible markers are fused and turned into
/// the per-step certainty bound. A step fails when the certainty drops below
/// `params.c_min` or fewer than `config.min_visible` markers are in view.
/// The mission success probability is the product of per-step certainties.
pub fn check_plan(
    structure: &Structure,
    actions: &[Action],
    initial_markers: &[MarkerState],
    pred: &EigenvaluePredictor,
    params: &CertaintyParams,
    config: &CheckConfig,
) -> Result<CheckReport> {
    let unit = structure.unit;
    let slot_set = structure.slot_set();
    let mut state = WorldState::new(unit, initial_markers.to_vec());
    let mut steps = Vec::with_capacity(actions.len());
    let mut p_success = 1.0_f64;
    let mut min_visible = usize::MAX;

    for (idx, action) in actions.iter().enumerate() {
        let (target, carried, op) = match action {
            Action::PlaceBlock { slot } => {
                let s = Slot::new(slot[0], slot[1], slot[2]);
                if !slot_set.contains(&s) {
                    return Err(Error::Validation(format!(
                        "step {idx}: slot {slot:?} is not part of the structure"
                    )));
                }
                if state.placed.contains(&s) {
                    return Err(Error::Validation(format!(
                        "step {idx}: slot {slot:?} is already filled"
                    )));
                }
                let anchor = s.world(unit);
                if state
                    .markers
                    .iter()
                    .any(|mk| (mk.position - anchor).norm() < 1e-9)
                {
                    return Err(Error::Validation(format!(
                        "step {idx}: a marker still occupies slot {slot:?}"
                    )));
                }
                (anchor, None, "place_block".to_string())
            }
            Action::MoveMarker { id, from, to } => {
                let from_v = Vector3::new(from[0], from[1], from[2]);
                let to_v = Vector3::new(to[0], to[1], to[2]);
                let mk = state
                    .markers
                    .iter()
                    .find(|mk| mk.id == *id)
                    .ok_or_else(|| {
                        Error::Validation(format!("step {idx}: unknown marker {id}"))
                    })?;
                if (mk.position - from_v).norm() > 1e-9 {
                    return Err(Error::Validation(format!(
                        "step {idx}: marker {id} moves from {from:?} but stands at ({}, {}, {})",
                        mk.position.x, mk.position.y, mk.position.z
                    )));
                }
                if state
                    .markers
                    .iter()
                    .any(|other| other.id != *id && (other.position - to_v).norm() < 1e-9)
                {
                    return Err(Error::Validation(format!(
                        "step {idx}: marker {id} lands on another marker"
                    )));
                }
                (to_v, Some(*id), "move_marker".to_string())
            }
        };

        let camera = target + Vector3::new(0.0, 0.0, config.hover_units * unit);
        let visible = visible_markers(&state, &camera, pred, config, carried);
        min_visible = min_visible.min(visible.len());

        let face_lift = Vector3::new(0.0, 0.0, config.marker_face_units * unit);
        let (lambda_star, c_star) = if visible.is_empty() {
            (None, 0.0)
        } else {
            let covs: Vec<_> = visible
                .iter()
                .map(|id| {
                    let mk = state.markers.iter().find(|m| m.id == *id).expect("visible");
                    predict_covariance(&camera_frame(&(mk.position + face_lift - camera)), pred)
                })
                .collect::<Result<_>>()?;
            let fused = fuse_covariances(&covs)?;
            let c = certainty_lower_bound(&fused, params)?;
            (Some(fused.lambda_max()?), c)
        };
        let ok = c_star >= params.c_min && visible.len() >= config.min_visible;
        p_success *= c_star;
        steps.push(StepRecord {
            idx,
            op,
            visible,
            lambda_star,
            c_star,
            ok,
        });

        // Apply the action.
        match action {
            Action::PlaceBlock { slot } => {
                state.placed.push(Slot::new(slot[0], slot[1], slot[2]));
            }
            Action::MoveMarker { id, to, .. } => {
                let mk = state
                    .markers
                    .iter_mut()
                    .find(|mk| mk.id == *id)
                    .expect("validated above");
                mk.position = Vector3::new(to[0], to[1], to[2]);
            }
        }
    }

    if steps.is_empty() {
        min_visible = 0;
        p_success = 1.0;
    }
    let all_ok = steps.iter().all(|s| s.ok);
    Ok(CheckReport {
        n_steps: steps.len(),
        p_success,
        min_visible,
        all_ok,
        steps,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub r: f64,
    pub p_success: f64,
    pub steps: usize,
    /// Populated when planning itself failed at this radius.
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("r,p_success,steps\n");
        for row in &self.rows {
            out.push_str(&format!("{},{},{}\n", row.r, row.p_success, row.steps));
        }
        out
    }
}

/// Plans and checks the structure at each radius. Radii where planning is
/// infeasible are reported as zero-success rows rather than errors.
#[allow(clippy::too_many_arguments)]
pub fn sweep_radius(
    structure: &Structure,
    radii: &[f64],
    m: usize,
    pred: &EigenvaluePredictor,
    params: &CertaintyParams,
    config: &CheckConfig,
    seed: u64,
) -> Result<SweepTable> {
    if radii.windows(2).any(|w| w[0] >= w[1]) || radii.iter().any(|r| *r <= 0.0) {
        return Err(Error::InvalidInput(
            "radii must be positive and strictly ascending".into(),
        ));
    }
    let rows: Vec<SweepRow> = radii
        .par_iter()
        .map(|&r| {
            let markers = default_marker_row(structure, m);
            let planner = PlannerConfig {
                radius_units: r,
                seed,
                ..PlannerConfig::default()
            };
            match plan_assembly(structure, &markers, &planner) {
                Ok(plan) => match check_plan(structure, &plan.actions, &markers, pred, params, config)
                {
                    Ok(report) => SweepRow {
                        r,
                        p_success: report.p_success,
                        steps: plan.actions.len(),
                        error: None,
                    },
                    Err(e) => SweepRow {
                        r,
                        p_success: 0.0,
                        steps: plan.actions.len(),
                        error: Some(e.to_string()),
                    },
                },
                Err(e) => SweepRow {
                    r,
                    p_success: 0.0,
                    steps: 0,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    Ok(SweepTable { rows })
}
