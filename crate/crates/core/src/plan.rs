//! Layer-by-layer assembly planning.
//!
//! Each layer is clustered to the marker coverage radius; clusters are
//! visited along a short tour. Per cluster, the markers walk to the most
//! spread-out slots, every other slot receives a block (far-from-markers
//! first, which keeps sight lines open), then each marker steps on top of
//! the nearest placed block so its vacated slot can be filled too.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::cluster::{cluster_until_radius, select_marker_destinations};
use crate::stats::derive_seed;
use crate::structure::{Slot, Structure};
use crate::tour::find_tour;
use crate::walk::{covered_by_markers, group_covered_after, walk_to_coverage, Landing, MarkerState};
use crate::{Error, Result};

/// One mission step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Action {
    MoveMarker {
        id: usize,
        from: [f64; 3],
        to: [f64; 3],
    },
    PlaceBlock {
        slot: [i32; 3],
    },
}

impl Action {
    pub fn move_marker(id: usize, from: &Vector3<f64>, to: &Vector3<f64>) -> Self {
        Action::MoveMarker {
            id,
            from: [from.x, from.y, from.z],
            to: [to.x, to.y, to.z],
        }
    }

    pub fn place_block(slot: &Slot) -> Self {
        Action::PlaceBlock {
            slot: slot.coords(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlannerConfig {
    /// Cluster radius in structure units.
    pub radius_units: f64,
    pub seed: u64,
    /// The walk keeps a moving marker within `walk_coverage_factor *
    /// radius_units` units of a stationary one. The factor covers the full
    /// cluster span (destinations sit up to two radii apart).
    pub walk_coverage_factor: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            radius_units: 1.5,
            seed: 0,
            walk_coverage_factor: 2.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerSummary {
    pub height: i32,
    pub slots: usize,
    pub clusters: usize,
}

/// A finished mission plan.
#[derive(Debug, Clone)]
pub struct Plan {
    pub actions: Vec<Action>,
    pub final_markers: Vec<MarkerState>,
    pub layers: Vec<LayerSummary>,
}

impl Plan {
    pub fn count_placements(&self) -> usize {
        self.actions
            .iter()
            .filter(|a| matches!(a, Action::PlaceBlock { .. }))
            .count()
    }

    pub fn count_moves(&self) -> usize {
        self.actions.len() - self.count_placements()
    }
}

pub fn write_actions_jsonl<W: Write>(mut w: W, actions: &[Action]) -> Result<()> {
    for a in actions {
        serde_json::to_writer(&mut w, a)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_actions_jsonl<R: BufRead>(r: R) -> Result<Vec<Action>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let a: Action = serde_json::from_str(&line)
            .map_err(|e| Error::InvalidInput(format!("plan line {}: {e}", i + 1)))?;
        out.push(a);
    }
    Ok(out)
}

/// A row of markers on the foundation just outside the structure footprint,
/// one unit apart.
pub fn default_marker_row(structure: &Structure, m: usize) -> Vec<MarkerState> {
    let (min_i, min_j) = structure
        .slots()
        .iter()
        .fold((0, 0), |acc, s| (acc.0.min(s.i), acc.1.min(s.j)));
    (0..m)
        .map(|t| {
            MarkerState::new(
                t,
                Slot::new(min_i - 2, min_j + t as i32, 0).world(structure.unit),
            )
        })
        .collect()
}

/// Tracks placed blocks and the resulting support surface.
struct BuildState {
    placed: BTreeSet<Slot>,
    /// Column -> level of the next resting surface (k + 1 of the top block).
    level: BTreeMap<(i32, i32), i32>,
    unit: f64,
}

impl BuildState {
    fn new(unit: f64) -> Self {
        Self {
            placed: BTreeSet::new(),
            level: BTreeMap::new(),
            unit,
        }
    }

    fn surface_level(&self, col: (i32, i32)) -> i32 {
        self.level.get(&col).copied().unwrap_or(0)
    }

    fn surface_z(&self, col: (i32, i32)) -> f64 {
        self.surface_level(col) as f64 * self.unit
    }

    fn place(&mut self, slot: Slot, actions: &mut Vec<Action>) {
        debug_assert!(!self.placed.contains(&slot));
        actions.push(Action::place_block(&slot));
        self.placed.insert(slot);
        let col = (slot.i, slot.j);
        let lvl = self.surface_level(col).max(slot.k + 1);
        self.level.insert(col, lvl);
    }
}

fn col_of(p: &Vector3<f64>, unit: f64) -> (i32, i32) {
    ((p.x / unit).round() as i32, (p.y / unit).round() as i32)
}

/// Plans the full assembly. Markers are mutated along the way; the final
/// positions are recorded in the plan.
pub fn plan_assembly(
    structure: &Structure,
    initial_markers: &[MarkerState],
    config: &PlannerConfig,
) -> Result<Plan> {
    let m = initial_markers.len();
    if m < 2 {
        return Err(Error::InvalidInput(
            "assembly planning needs at least two markers".into(),
        ));
    }
    if !(config.radius_units.is_finite() && config.radius_units > 0.0) {
        return Err(Error::InvalidInput(format!(
            "cluster radius must be positive, got {}",
            config.radius_units
        )));
    }
    let unit = structure.unit;
    let r_m = config.radius_units * unit;
    let walk_r = config.walk_coverage_factor * r_m;
    let mut markers: Vec<MarkerState> = initial_markers.to_vec();
    for mk in &markers {
        if !covered_by_markers(&mk.position, &markers, walk_r, Some(mk.id)) {
            return Err(Error::InvalidInput(format!(
                "initial marker {} is outside every other marker's coverage",
                mk.id
            )));
        }
    }

    let mut actions = Vec::new();
    let mut layer_summaries = Vec::new();
    let mut state = BuildState::new(unit);

    for (layer_idx, layer) in structure.layers().iter().enumerate() {
        let height = layer[0].k;
        if layer.len() < m {
            // Too few slots to stage markers inside the layer: park the
            // markers beside it on the current surface and place directly.
            stage_and_fill_tiny_layer(layer, &mut markers, &mut state, &mut actions, walk_r)
                .map_err(|e| annotate(e, height, None))?;
            layer_summaries.push(LayerSummary {
                height,
                slots: layer.len(),
                clusters: 1,
            });
            continue;
        }

        let cluster_set = cluster_until_radius(
            layer,
            unit,
            r_m,
            m,
            derive_seed(config.seed, layer_idx as u64),
        )
        .map_err(|e| annotate(e, height, None))?;
        layer_summaries.push(LayerSummary {
            height,
            slots: layer.len(),
            clusters: cluster_set.k,
        });

        let centers: Vec<Vector3<f64>> =
            cluster_set.clusters.iter().map(|c| c.center).collect();
        let marker_centroid: Vector3<f64> =
            markers.iter().map(|mk| mk.position).sum::<Vector3<f64>>() / m as f64;
        let tour = find_tour(&centers, &marker_centroid);

        for &ci in &tour {
            let cluster = &cluster_set.clusters[ci];
            let destinations = select_marker_destinations(&cluster.slots, unit, m)?;

            let walk_actions = {
                let surface = |i: i32, j: i32| state.surface_z((i, j));
                walk_to_coverage(
                    &mut markers,
                    &destinations,
                    walk_r,
                    &Landing::Grid {
                        unit,
                        surface_z: &surface,
                    },
                )
            }
            .map_err(|e| annotate(e, height, Some(ci)))?;
            actions.extend(walk_actions);

            // Blocks in slots not hosting a marker, far from the markers
            // first so later placements do not cut existing sight lines.
            let occupied: Vec<Vector3<f64>> = markers.iter().map(|mk| mk.position).collect();
            let mut to_place: Vec<Slot> = cluster
                .slots
                .iter()
                .copied()
                .filter(|s| {
                    let w = s.world(unit);
                    occupied.iter().all(|p| (p - w).norm() > 1e-9)
                })
                .collect();
            to_place.sort_by(|a, b| {
                let da = occupied
                    .iter()
                    .map(|p| (p - a.world(unit)).norm())
                    .fold(f64::INFINITY, f64::min);
                let db = occupied
                    .iter()
                    .map(|p| (p - b.world(unit)).norm())
                    .fold(f64::INFINITY, f64::min);
                db.total_cmp(&da).then_with(|| (a.i, a.j).cmp(&(b.i, b.j)))
            });
            for slot in to_place {
                state.place(slot, &mut actions);
            }

            // Step each marker onto the nearest placed block, then fill the
            // slot it vacated.
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_by(|&a, &b| {
                let pa = markers[a].position;
                let pb = markers[b].position;
                (pa.x, pa.y, pa.z, markers[a].id)
                    .partial_cmp(&(pb.x, pb.y, pb.z, markers[b].id))
                    .expect("finite positions")
            });
            for idx in order {
                let from = markers[idx].position;
                let to = nearest_block_top(&state, &markers, idx, walk_r)
                    .ok_or_else(|| {
                        annotate(
                            Error::Infeasible(format!(
                                "marker {} has no reachable block top to step onto",
                                markers[idx].id
                            )),
                            height,
                            Some(ci),
                        )
                    })?;
                actions.push(Action::move_marker(markers[idx].id, &from, &to));
                markers[idx].position = to;

                let vacated = Slot::new(
                    (from.x / unit).round() as i32,
                    (from.y / unit).round() as i32,
                    (from.z / unit).round() as i32,
                );
                debug_assert!(cluster.slots.contains(&vacated));
                state.place(vacated, &mut actions);
            }
        }
    }

    let slot_set = structure.slot_set();
    if state.placed != slot_set {
        return Err(Error::Validation(format!(
            "planner placed {} of {} slots",
            state.placed.len(),
            slot_set.len()
        )));
    }

    Ok(Plan {
        actions,
        final_markers: markers,
        layers: layer_summaries,
    })
}

fn annotate(e: Error, height: i32, cluster: Option<usize>) -> Error {
    let context = match cluster {
        Some(c) => format!("layer at height {height}, cluster {c}"),
        None => format!("layer at height {height}"),
    };
    match e {
        Error::Infeasible(msg) => Error::Infeasible(format!("{context}: {msg}")),
        other => other,
    }
}

/// Nearest placed-block top that is unoccupied and still within coverage of
/// the other markers.
fn nearest_block_top(
    state: &BuildState,
    markers: &[MarkerState],
    moving_idx: usize,
    walk_r: f64,
) -> Option<Vector3<f64>> {
    let unit = state.unit;
    let from = markers[moving_idx].position;
    let own_col = col_of(&from, unit);
    let mut best: Option<((i32, i32), Vector3<f64>, f64)> = None;
    for (&col, &lvl) in &state.level {
        if col == own_col {
            continue; // the point is to vacate this column
        }
        let pos = Vector3::new(col.0 as f64 * unit, col.1 as f64 * unit, lvl as f64 * unit);
        if markers
            .iter()
            .enumerate()
            .any(|(i, mk)| i != moving_idx && (mk.position - pos).norm() < 1e-9)
        {
            continue;
        }
        if !covered_by_markers(&pos, markers, walk_r, Some(markers[moving_idx].id)) {
            continue;
        }
        if !group_covered_after(markers, moving_idx, &pos, walk_r) {
            continue;
        }
        let dist = (pos - from).norm();
        let better = match &best {
            None => true,
            Some((bcol, _, bdist)) => {
                dist + 1e-12 < *bdist || ((dist - bdist).abs() <= 1e-12 && col < *bcol)
            }
        };
        if better {
            best = Some((col, pos, dist));
        }
    }
    best.map(|(_, pos, _)| pos)
}

/// Layers with fewer slots than markers: markers cannot stage inside, so
/// they park on adjacent columns of the current surface while every slot is
/// filled directly.
fn stage_and_fill_tiny_layer(
    layer: &[Slot],
    markers: &mut [MarkerState],
    state: &mut BuildState,
    actions: &mut Vec<Action>,
    walk_r: f64,
) -> Result<()> {
    let unit = state.unit;
    let layer_cols: BTreeSet<(i32, i32)> = layer.iter().map(|s| (s.i, s.j)).collect();

    let mut used: BTreeSet<(i32, i32)> = BTreeSet::new();
    let mut targets: Vec<Vector3<f64>> = Vec::with_capacity(markers.len());
    for mk in markers.iter() {
        let col = col_of(&mk.position, unit);
        if !layer_cols.contains(&col) && !used.contains(&col) {
            used.insert(col);
            targets.push(mk.position);
            continue;
        }
        // Nearest free column off the layer footprint, by expanding rings.
        let mut found = None;
        'ring: for radius in 1i32..=32 {
            let mut candidates: Vec<(i32, i32)> = Vec::new();
            for di in -radius..=radius {
                for dj in -radius..=radius {
                    if di.abs().max(dj.abs()) != radius {
                        continue;
                    }
                    let c = (col.0 + di, col.1 + dj);
                    if !layer_cols.contains(&c) && !used.contains(&c) {
                        candidates.push(c);
                    }
                }
            }
            if candidates.is_empty() {
                continue;
            }
            candidates.sort_by(|a, b| {
                let pa = Vector3::new(a.0 as f64 * unit, a.1 as f64 * unit, 0.0);
                let pb = Vector3::new(b.0 as f64 * unit, b.1 as f64 * unit, 0.0);
                (pa - mk.position)
                    .norm()
                    .total_cmp(&(pb - mk.position).norm())
                    .then(a.cmp(b))
            });
            found = Some(candidates[0]);
            break 'ring;
        }
        let c = found.ok_or_else(|| {
            Error::Infeasible("no staging column near the small layer".into())
        })?;
        used.insert(c);
        targets.push(Vector3::new(
            c.0 as f64 * unit,
            c.1 as f64 * unit,
            state.surface_z(c),
        ));
    }

    let walk_actions = {
        let surface = |i: i32, j: i32| state.surface_z((i, j));
        walk_to_coverage(
            markers,
            &targets,
            walk_r,
            &Landing::Grid {
                unit,
                surface_z: &surface,
            },
        )
    }?;
    actions.extend(walk_actions);

    let occupied: Vec<Vector3<f64>> = markers.iter().map(|mk| mk.position).collect();
    let mut to_place: Vec<Slot> = layer.to_vec();
    to_place.sort_by(|a, b| {
        let da = occupied
            .iter()
            .map(|p| (p - a.world(unit)).norm())
            .fold(f64::INFINITY, f64::min);
        let db = occupied
            .iter()
            .map(|p| (p - b.world(unit)).norm())
            .fold(f64::INFINITY, f64::min);
        db.total_cmp(&da).then_with(|| (a.i, a.j).cmp(&(b.i, b.j)))
    });
    for slot in to_place {
        state.place(slot, actions);
    }
    Ok(())
}

/// Replays a plan's marker moves, checking that every hop destination stays
/// horizontally within `r_cov` of a stationary marker and that the `from`
/// fields are consistent. Returns the final marker positions.
pub fn replay_marker_coverage(
    actions: &[Action],
    initial_markers: &[MarkerState],
    r_cov: f64,
) -> Result<Vec<MarkerState>> {
    let mut markers: Vec<MarkerState> = initial_markers.to_vec();
    for (step, a) in actions.iter().enumerate() {
        if let Action::MoveMarker { id, from, to } = a {
            let idx = markers
                .iter()
                .position(|mk| mk.id == *id)
                .ok_or_else(|| Error::Validation(format!("step {step}: unknown marker {id}")))?;
            let cur = markers[idx].position;
            let from_v = Vector3::new(from[0], from[1], from[2]);
            if (cur - from_v).norm() > 1e-9 {
                return Err(Error::Validation(format!(
                    "step {step}: marker {id} moves from {from:?} but stands at {cur:?}"
                )));
            }
            let to_v = Vector3::new(to[0], to[1], to[2]);
            if (to_v - from_v).norm() <= 1e-12 {
                return Err(Error::Validation(format!(
                    "step {step}: marker {id} move has equal endpoints"
                )));
            }
            if !covered_by_markers(&to_v, &markers, r_cov, Some(*id)) {
                return Err(Error::Validation(format!(
                    "step {step}: marker {id} lands outside every stationary marker's coverage"
                )));
            }
            markers[idx].position = to_v;
        }
    }
    Ok(markers)
}
