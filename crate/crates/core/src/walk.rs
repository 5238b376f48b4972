//! Marker relocation by a hopping gait.
//!
//! One marker moves at a time. Every hop must start and land within the
//! coverage radius of some stationary marker (measured in the horizontal
//! plane, where coverage is meaningful for a hovering robot), so the robot
//! stays localized through the whole maneuver. A hop carries the marker as
//! far toward its destination as coverage allows, which produces the
//! leapfrogging gait: the rear marker repeatedly hops past the front one.

use nalgebra::Vector3;

use crate::plan::Action;
use crate::{Error, Result};

/// A movable marker and its current position.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerState {
    pub id: usize,
    pub position: Vector3<f64>,
}

impl MarkerState {
    pub fn new(id: usize, position: Vector3<f64>) -> Self {
        Self { id, position }
    }
}

/// Where hops may land.
pub enum Landing<'a> {
    /// Anywhere along the straight line to the target (used by the
    /// one-dimensional demo world).
    Continuous,
    /// On grid columns only, resting on the current surface height.
    Grid {
        unit: f64,
        surface_z: &'a dyn Fn(i32, i32) -> f64,
    },
}

const POSITION_TOL: f64 = 1e-9;
const MAX_HOPS: usize = 10_000;

fn horizontal_distance(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

/// True when `pos` is horizontally within `r_cov` of some marker other than
/// `exclude`.
pub fn covered_by_markers(
    pos: &Vector3<f64>,
    markers: &[MarkerState],
    r_cov: f64,
    exclude: Option<usize>,
) -> bool {
    markers
        .iter()
        .filter(|m| Some(m.id) != exclude)
        .any(|m| horizontal_distance(pos, &m.position) <= r_cov + POSITION_TOL)
}

/// True when, with `markers[moving_idx]` relocated to `landing`, every
/// marker is still within `r_cov` of some other. Greedy maximum-reach hops
/// would otherwise tear the chain apart and strand the rear markers.
pub fn group_covered_after(
    markers: &[MarkerState],
    moving_idx: usize,
    landing: &Vector3<f64>,
    r_cov: f64,
) -> bool {
    let pos = |i: usize| -> &Vector3<f64> {
        if i == moving_idx {
            landing
        } else {
            &markers[i].position
        }
    };
    (0..markers.len()).all(|o| {
        (0..markers.len())
            .any(|p| p != o && horizontal_distance(pos(o), pos(p)) <= r_cov + POSITION_TOL)
    })
}

/// Minimum-total-distance assignment of markers to targets.
///
/// Targets are sorted canonically first and ties between equal-cost
/// assignments break toward the lexicographically smallest permutation,
/// which keeps 1D walks order-preserving.
fn assign_targets(markers: &[MarkerState], targets: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    let mut sorted: Vec<Vector3<f64>> = targets.to_vec();
    sorted.sort_by(|a, b| (a.x, a.y, a.z).partial_cmp(&(b.x, b.y, b.z)).unwrap());

    let n = markers.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best: Option<(f64, Vec<usize>)> = None;
    permute_assignments(&mut perm, 0, &mut |p| {
        let cost: f64 = markers
            .iter()
            .zip(p)
            .map(|(m, &t)| (m.position - sorted[t]).norm())
            .sum();
        let better = match &best {
            None => true,
            Some((c, chosen)) => cost + 1e-12 < *c || (cost < c + 1e-12 && p < chosen.as_slice()),
        };
        if better {
            best = Some((cost, p.to_vec()));
        }
    });
    let (_, perm) = best.expect("nonempty assignment");
    perm.into_iter().map(|t| sorted[t]).collect()
}

fn permute_assignments(v: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
    if k == v.len() {
        f(v);
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permute_assignments(v, k + 1, f);
        v.swap(k, i);
    }
}

/// Walks markers to the target positions with the hopping gait, mutating
/// `markers` and returning the move actions.
///
/// Hop rule: the marker farthest from the target centroid moves first, as
/// far along the line to its own target as coverage from the stationary
/// markers permits (capped at the target). In grid mode landings snap to
/// grid columns on the current surface. A marker whose hop cannot make
/// progress yields to the others; if no marker can move, the walk is
/// infeasible.
pub fn walk_to_coverage(
    markers: &mut [MarkerState],
    targets: &[Vector3<f64>],
    r_cov: f64,
    landing: &Landing,
) -> Result<Vec<Action>> {
    if markers.len() < 2 {
        return Err(Error::InvalidInput(
            "the hopping gait needs at least two markers".into(),
        ));
    }
    if markers.len() != targets.len() {
        return Err(Error::InvalidInput(format!(
            "{} markers but {} targets",
            markers.len(),
            targets.len()
        )));
    }
    if markers.len() > 8 {
        return Err(Error::InvalidInput(
            "assignment search supports at most 8 markers".into(),
        ));
    }
    let mut assigned = assign_targets(markers, targets);
    let centroid: Vector3<f64> = assigned.iter().sum::<Vector3<f64>>() / assigned.len() as f64;
    let trace = std::env::var_os("MARKERPLAN_TRACE_WALK").is_some();
    if trace {
        for (mk, t) in markers.iter().zip(&assigned) {
            eprintln!("walk: marker {} at {:?} -> {:?}", mk.id, mk.position, t);
        }
    }

    let mut actions = Vec::new();
    // While set, normal progress is suspended: only hops of this marker (the
    // one that fell out of coverage) or rescue hops toward it are allowed,
    // so the group walks back as far as needed to re-establish the chain.
    let mut rescuing: Option<usize> = None;
    for _ in 0..MAX_HOPS {
        let unfinished: Vec<usize> = (0..markers.len())
            .filter(|&i| (markers[i].position - assigned[i]).norm() > POSITION_TOL)
            .collect();
        if unfinished.is_empty() {
            return Ok(actions);
        }

        let try_hop = |markers: &mut [MarkerState],
                       actions: &mut Vec<Action>,
                       idx: usize,
                       target: &Vector3<f64>|
         -> bool {
            let current = markers[idx].position;
            if !covered_by_markers(&current, markers, r_cov, Some(markers[idx].id)) {
                return false;
            }
            let landing_pos = match landing {
                Landing::Continuous => {
                    best_continuous_landing(&current, target, markers, idx, r_cov)
                }
                Landing::Grid { unit, surface_z } => {
                    best_grid_landing(&current, target, markers, idx, r_cov, *unit, surface_z)
                }
            };
            if let Some(to) = landing_pos {
                if trace {
                    eprintln!("walk: hop {} {:?} -> {:?}", markers[idx].id, current, to);
                }
                actions.push(Action::move_marker(markers[idx].id, &current, &to));
                markers[idx].position = to;
                true
            } else {
                false
            }
        };

        if let Some(b) = rescuing {
            if !unfinished.contains(&b) {
                rescuing = None;
                continue;
            }
            // Freed? Let the stranded marker take its own step.
            let target = assigned[b];
            if try_hop(markers, &mut actions, b, &target) {
                rescuing = None;
                continue;
            }
            // Otherwise extend the bridge: nearest covered marker steps
            // toward the stranded one.
            let beacon = markers[b].position;
            let mut donors: Vec<usize> = (0..markers.len()).filter(|&d| d != b).collect();
            donors.sort_by(|&x, &y| {
                (markers[x].position - beacon)
                    .norm()
                    .total_cmp(&(markers[y].position - beacon).norm())
                    .then(markers[x].id.cmp(&markers[y].id))
            });
            let moved = donors
                .into_iter()
                .any(|d| try_hop(markers, &mut actions, d, &beacon));
            if !moved {
                return Err(Error::Infeasible(format!(
                    "marker {} is stranded at ({:.3}, {:.3}, {:.3}): no rescue hop within \
                     coverage radius {r_cov} can reach it",
                    markers[b].id,
                    markers[b].position.x,
                    markers[b].position.y,
                    markers[b].position.z
                )));
            }
            continue;
        }

        // Rear marker first: the one farthest from where the group is going.
        let mut order = unfinished.clone();
        order.sort_by(|&a, &b| {
            (markers[b].position - centroid)
                .norm()
                .total_cmp(&(markers[a].position - centroid).norm())
                .then(markers[a].id.cmp(&markers[b].id))
        });

        let mut moved = false;
        let mut uncovered: Vec<usize> = Vec::new();
        for &idx in &order {
            if !covered_by_markers(&markers[idx].position, markers, r_cov, Some(markers[idx].id))
            {
                uncovered.push(idx);
                continue;
            }
            let target = assigned[idx];
            if try_hop(markers, &mut actions, idx, &target) {
                moved = true;
                break;
            } else if trace {
                eprintln!(
                    "walk: marker {} blocked at {:?}",
                    markers[idx].id, markers[idx].position
                );
            }
        }
        if moved {
            continue;
        }

        // Markers are interchangeable beacons: when two of them jam
        // (standing on or blocking each other's targets), trading their
        // targets unjams the walk. Only strictly improving trades are taken,
        // so this cannot cycle.
        let mut best_swap: Option<(f64, usize, usize)> = None;
        for (a, &i) in unfinished.iter().enumerate() {
            for &j in unfinished.iter().skip(a + 1) {
                let before = (markers[i].position - assigned[i]).norm()
                    + (markers[j].position - assigned[j]).norm();
                let after = (markers[i].position - assigned[j]).norm()
                    + (markers[j].position - assigned[i]).norm();
                let gain = before - after;
                if gain > POSITION_TOL && best_swap.is_none_or(|(g, _, _)| gain > g + 1e-15) {
                    best_swap = Some((gain, i, j));
                }
            }
        }
        if let Some((_, i, j)) = best_swap {
            if trace {
                eprintln!(
                    "walk: swapping targets of markers {} and {}",
                    markers[i].id, markers[j].id
                );
            }
            assigned.swap(i, j);
            continue;
        }

        if let Some(&b) = uncovered.first() {
            if trace {
                eprintln!("walk: entering rescue mode for marker {}", markers[b].id);
            }
            rescuing = Some(b);
            continue;
        }

        let stranded: Vec<String> = unfinished
            .iter()
            .map(|&i| {
                let p = markers[i].position;
                let t = assigned[i];
                format!(
                    "{} at ({:.3}, {:.3}, {:.3}) heading to ({:.3}, {:.3}, {:.3})",
                    markers[i].id, p.x, p.y, p.z, t.x, t.y, t.z
                )
            })
            .collect();
        return Err(Error::Infeasible(format!(
            "markers stranded, no hop within coverage radius {r_cov} makes progress: {}",
            stranded.join("; ")
        )));
    }
    Err(Error::Infeasible(format!(
        "walk did not converge within {MAX_HOPS} hops"
    )))
}

/// How far along the segment `current + t * delta` (t in [0, 1]) the moving
/// marker stays horizontally covered by a stationary one: the coverage disks
/// of the stationary markers cut the segment into intervals, and the
/// reachable prefix ends where their union first leaves a gap.
fn covered_prefix(
    current: &Vector3<f64>,
    delta: &Vector3<f64>,
    markers: &[MarkerState],
    moving_idx: usize,
    r_cov: f64,
) -> f64 {
    let dxy2 = delta.x * delta.x + delta.y * delta.y;
    let r = r_cov + POSITION_TOL;
    let mut intervals: Vec<(f64, f64)> = Vec::new();
    for (i, s) in markers.iter().enumerate() {
        if i == moving_idx {
            continue;
        }
        let ex = current.x - s.position.x;
        let ey = current.y - s.position.y;
        if dxy2 < 1e-30 {
            if ex.hypot(ey) <= r {
                return 1.0; // no horizontal motion, covered throughout
            }
            continue;
        }
        // |xy(current + t delta) - xy(s)| <= r_cov as a quadratic in t.
        let b = 2.0 * (delta.x * ex + delta.y * ey);
        let c = ex * ex + ey * ey - r * r;
        let disc = b * b - 4.0 * dxy2 * c;
        if disc < 0.0 {
            continue;
        }
        let sqrt_disc = disc.sqrt();
        let t1 = (-b - sqrt_disc) / (2.0 * dxy2);
        let t2 = (-b + sqrt_disc) / (2.0 * dxy2);
        if t2 < 0.0 || t1 > 1.0 {
            continue;
        }
        intervals.push((t1.max(0.0), t2.min(1.0)));
    }
    intervals.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut reach: f64 = 0.0;
    for (s, e) in intervals {
        if s > reach + POSITION_TOL {
            break;
        }
        reach = reach.max(e);
        if reach >= 1.0 {
            return 1.0;
        }
    }
    reach.min(1.0)
}

/// Farthest point along current -> target reachable under continuous
/// coverage without abandoning the rest of the group. None when no forward
/// progress is possible or the landing would collide with a stationary
/// marker.
fn best_continuous_landing(
    current: &Vector3<f64>,
    target: &Vector3<f64>,
    markers: &[MarkerState],
    moving_idx: usize,
    r_cov: f64,
) -> Option<Vector3<f64>> {
    let d = target - current;
    let mut t_best = covered_prefix(current, &d, markers, moving_idx, r_cov);
    if t_best <= POSITION_TOL {
        return None;
    }
    // Back off along the segment until the whole group stays covered. The
    // group-coverage condition along the segment is an intersection of
    // intervals; a coarse scan is enough at the precision the walk needs.
    let steps = 256;
    while t_best > POSITION_TOL {
        let to = current + d * t_best;
        if group_covered_after(markers, moving_idx, &to, r_cov) {
            break;
        }
        t_best -= 1.0 / steps as f64;
    }
    if t_best <= POSITION_TOL {
        return None;
    }
    let to = current + d * t_best;
    // Do not land on top of a stationary marker.
    for (i, s) in markers.iter().enumerate() {
        if i != moving_idx && (to - s.position).norm() < 1e-9 {
            return None;
        }
    }
    Some(to)
}

/// Best grid column landing: within coverage of a stationary marker,
/// unoccupied, and strictly closer to the target than the current position.
#[allow(clippy::too_many_arguments)]
fn best_grid_landing(
    current: &Vector3<f64>,
    target: &Vector3<f64>,
    markers: &[MarkerState],
    moving_idx: usize,
    r_cov: f64,
    unit: f64,
    surface_z: &dyn Fn(i32, i32) -> f64,
) -> Option<Vector3<f64>> {
    let col_of = |p: &Vector3<f64>| -> (i32, i32) {
        ((p.x / unit).round() as i32, (p.y / unit).round() as i32)
    };
    let occupied: Vec<(i32, i32)> = markers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != moving_idx)
        .map(|(_, m)| col_of(&m.position))
        .collect();

    let current_dist = (current - target).norm();
    let reach = (r_cov / unit).ceil() as i32;
    let mut seen: Vec<(i32, i32)> = Vec::new();
    let mut best: Option<((i32, i32), Vector3<f64>, f64)> = None;
    for (i, s) in markers.iter().enumerate() {
        if i == moving_idx {
            continue;
        }
        let (si, sj) = col_of(&s.position);
        for di in -reach..=reach {
            for dj in -reach..=reach {
                let col = (si + di, sj + dj);
                if seen.contains(&col) {
                    continue;
                }
                seen.push(col);
                let pos = Vector3::new(
                    col.0 as f64 * unit,
                    col.1 as f64 * unit,
                    surface_z(col.0, col.1),
                );
                if horizontal_distance(&pos, &s.position) > r_cov + POSITION_TOL {
                    continue;
                }
                if occupied.contains(&col) {
                    continue;
                }
                let dist = (pos - target).norm();
                if dist >= current_dist - POSITION_TOL {
                    continue;
                }
                // The whole flight must stay covered, not just the landing.
                let delta = pos - current;
                if covered_prefix(current, &delta, markers, moving_idx, r_cov) < 1.0 - 1e-9 {
                    continue;
                }
                // And the move must not strand anyone else.
                if !group_covered_after(markers, moving_idx, &pos, r_cov) {
                    continue;
                }
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
        }
    }
    best.map(|(_, pos, _)| pos)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn marker(id: usize, x: f64) -> MarkerState {
        MarkerState::new(id, Vector3::new(x, 0.0, 0.0))
    }

    fn moves(actions: &[Action]) -> Vec<(usize, f64)> {
        actions
            .iter()
            .map(|a| match a {
                Action::MoveMarker { id, to, .. } => (*id, to[0]),
                Action::PlaceBlock { .. } => panic!("unexpected placement"),
            })
            .collect()
    }

    #[test]
    fn markers_already_at_targets_do_nothing() {
        let mut markers = vec![marker(0, 0.0), marker(1, 0.1)];
        let targets = vec![Vector3::new(0.0, 0.0, 0.0), Vector3::new(0.1, 0.0, 0.0)];
        let actions =
            walk_to_coverage(&mut markers, &targets, 0.2, &Landing::Continuous).unwrap();
        assert!(actions.is_empty());
    }

    #[test]
    fn reproduces_the_two_beacon_walk() {
        // Beacons at -0.1 and 0.1 with coverage radius 0.224 chase a task at
        // 0.7; the rear beacon leapfrogs to the coverage edge each hop.
        let mut markers = vec![marker(0, -0.1), marker(1, 0.1)];
        let targets = vec![Vector3::new(0.324, 0.0, 0.0), Vector3::new(0.548, 0.0, 0.0)];
        let actions =
            walk_to_coverage(&mut markers, &targets, 0.224, &Landing::Continuous).unwrap();
        let got = moves(&actions);
        assert_eq!(got.len(), 2);
        assert_eq!(got[0].0, 0);
        assert!((got[0].1 - 0.324).abs() < 1e-9);
        assert_eq!(got[1].0, 1);
        assert!((got[1].1 - 0.548).abs() < 1e-9);
        // Every hop kept the mover within the other marker's coverage.
        assert!((markers[0].position.x - 0.324).abs() < 1e-9);
        assert!((markers[1].position.x - 0.548).abs() < 1e-9);
    }

    /// Hand-simulated gaits for straight-line relocations of varying length.
    /// Markers start at 0 and 0.15 with coverage radius 0.2.
    #[test]
    fn hop_counts_match_hand_simulation() {
        let cases: Vec<(f64, Vec<(usize, f64)>)> = vec![
            // d = 0.5 r_cov: each marker reaches its target in one hop.
            (0.1, vec![(0, 0.1), (1, 0.25)]),
            // d = 1.0 r_cov: still one hop each.
            (0.2, vec![(0, 0.2), (1, 0.35)]),
            // d = 2.0 r_cov: the rear marker hops to the coverage edge,
            // the front one leapfrogs, then the rear finishes.
            (0.4, vec![(0, 0.35), (1, 0.55), (0, 0.4)]),
        ];
        for (d, expected) in cases {
            let mut markers = vec![marker(0, 0.0), marker(1, 0.15)];
            let targets = vec![
                Vector3::new(d, 0.0, 0.0),
                Vector3::new(0.15 + d, 0.0, 0.0),
            ];
            let actions =
                walk_to_coverage(&mut markers, &targets, 0.2, &Landing::Continuous).unwrap();
            let got = moves(&actions);
            assert_eq!(got.len(), expected.len(), "d={d}: {got:?}");
            for ((gid, gx), (eid, ex)) in got.iter().zip(&expected) {
                assert_eq!(gid, eid, "d={d}");
                assert!((gx - ex).abs() < 1e-9, "d={d}: got {gx}, expected {ex}");
            }
        }
    }

    #[test]
    fn unreachable_targets_strand_the_markers() {
        let mut markers = vec![marker(0, 0.0), marker(1, 10.0)];
        // The partner is far outside coverage, so neither marker may move.
        let targets = vec![Vector3::new(1.0, 0.0, 0.0), Vector3::new(11.0, 0.0, 0.0)];
        let err =
            walk_to_coverage(&mut markers, &targets, 0.2, &Landing::Continuous).unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)));
    }

    #[test]
    fn grid_landings_snap_to_columns_and_avoid_occupied_ones() {
        let surface = |_: i32, _: i32| 0.0;
        let mut markers = vec![
            MarkerState::new(0, Vector3::new(0.0, 0.0, 0.0)),
            MarkerState::new(1, Vector3::new(0.25, 0.0, 0.0)),
        ];
        let targets = vec![
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(1.25, 0.0, 0.0),
        ];
        let actions = walk_to_coverage(
            &mut markers,
            &targets,
            0.5,
            &Landing::Grid {
                unit: 0.25,
                surface_z: &surface,
            },
        )
        .unwrap();
        for a in &actions {
            if let Action::MoveMarker { to, .. } = a {
                // Landings are exact grid columns.
                assert!((to[0] / 0.25 - (to[0] / 0.25).round()).abs() < 1e-12);
            }
        }
        assert!((markers[0].position.x - 1.0).abs() < 1e-12);
        assert!((markers[1].position.x - 1.25).abs() < 1e-12);
        // No two markers ever shared a column: replay and check.
        let mut replay = vec![Vector3::new(0.0, 0.0, 0.0), Vector3::new(0.25, 0.0, 0.0)];
        for a in &actions {
            if let Action::MoveMarker { id, to, .. } = a {
                replay[*id] = Vector3::new(to[0], to[1], to[2]);
                assert!(
                    (replay[0] - replay[1]).norm() > 1e-9,
                    "markers collided after {a:?}"
                );
            }
        }
    }
}
