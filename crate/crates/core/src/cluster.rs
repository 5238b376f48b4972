//! Radius-bounded clustering of a layer's slots.
//!
//! The marker coverage radius dictates how wide a cluster may be: every slot
//! must lie within `r` of the cluster center so markers staged in the cluster
//! cover all of it. The number of clusters `k` is tuned by binary search to
//! the smallest value whose k-means partition satisfies the radius, with a
//! minimum cluster size so markers never compete for the same slot.

use nalgebra::Vector3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::stats::derive_seed;
use crate::structure::Slot;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct Cluster {
    pub slots: Vec<Slot>,
    /// Centroid of the member slots, world coordinates.
    pub center: Vector3<f64>,
    /// Largest distance from a member to the center.
    pub radius: f64,
}

#[derive(Debug, Clone)]
pub struct ClusterSet {
    pub clusters: Vec<Cluster>,
    pub k: usize,
}

const KMEANS_RESTARTS: u64 = 10;
const KMEANS_MAX_ITERS: usize = 100;

/// Clusters a layer into the fewest clusters whose radius (max distance from
/// the member centroid) is at most `r` meters and whose sizes are at least
/// `m`.
pub fn cluster_until_radius(
    layer: &[Slot],
    unit: f64,
    r: f64,
    m: usize,
    seed: u64,
) -> Result<ClusterSet> {
    if !(r.is_finite() && r > 0.0) {
        return Err(Error::InvalidInput(format!(
            "cluster radius must be positive, got {r}"
        )));
    }
    if m == 0 {
        return Err(Error::InvalidInput("minimum cluster size is zero".into()));
    }
    if layer.len() < m {
        return Err(Error::Infeasible(format!(
            "layer has {} slots, fewer than the {m} markers",
            layer.len()
        )));
    }
    let points: Vec<Vector3<f64>> = layer.iter().map(|s| s.world(unit)).collect();
    let n = points.len();
    let k_cap = (n / m).max(1);

    let mut memo: Vec<Option<Option<Vec<usize>>>> = vec![None; k_cap + 1];
    let mut probe = |k: usize, memo: &mut Vec<Option<Option<Vec<usize>>>>| -> Option<Vec<usize>> {
        if let Some(cached) = &memo[k] {
            return cached.clone();
        }
        let result = best_feasible_partition(&points, k, m, r, seed);
        memo[k] = Some(result.clone());
        result
    };

    // Binary search for the smallest feasible k, then verify downward in
    // case feasibility was not monotone at the boundary.
    let mut lo = 1usize;
    let mut hi = k_cap;
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if probe(mid, &mut memo).is_some() {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let mut best_k = if probe(lo, &mut memo).is_some() {
        Some(lo)
    } else {
        // The predicate was not monotone over the probed points; fall back
        // to a full scan.
        (1..=k_cap).find(|&k| probe(k, &mut memo).is_some())
    };
    if let Some(mut k) = best_k {
        while k > 1 && probe(k - 1, &mut memo).is_some() {
            k -= 1;
        }
        best_k = Some(k);
    }

    let Some(k) = best_k else {
        return Err(Error::Infeasible(format!(
            "no cluster count in 1..={k_cap} satisfies radius {r} with minimum size {m} \
             (layer of {n} slots at height {})",
            layer[0].k
        )));
    };

    let assignment = probe(k, &mut memo).expect("feasible k");
    let mut clusters: Vec<Cluster> = (0..k)
        .map(|c| {
            let slots: Vec<Slot> = layer
                .iter()
                .zip(&assignment)
                .filter(|(_, &a)| a == c)
                .map(|(s, _)| *s)
                .collect();
            let center = centroid(&slots.iter().map(|s| s.world(unit)).collect::<Vec<_>>());
            let radius = slots
                .iter()
                .map(|s| (s.world(unit) - center).norm())
                .fold(0.0, f64::max);
            Cluster {
                slots,
                center,
                radius,
            }
        })
        .collect();
    clusters.sort_by(|a, b| {
        (a.center.x, a.center.y)
            .partial_cmp(&(b.center.x, b.center.y))
            .expect("finite centers")
    });
    Ok(ClusterSet { clusters, k })
}

fn centroid(points: &[Vector3<f64>]) -> Vector3<f64> {
    points.iter().sum::<Vector3<f64>>() / points.len() as f64
}

/// Best feasible assignment over the k-means restarts, or None.
///
/// Besides the randomly seeded restarts, square-lattice seedings are tried
/// whenever they produce exactly `k` tiles: on grid-shaped layers the
/// radius-optimal partition is a regular tiling, and random seeding almost
/// never finds a perfectly balanced one.
fn best_feasible_partition(
    points: &[Vector3<f64>],
    k: usize,
    m: usize,
    r: f64,
    seed: u64,
) -> Option<Vec<usize>> {
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut consider = |assignment: Vec<usize>, best: &mut Option<(f64, Vec<usize>)>| {
        if !feasible(points, &assignment, k, m, r) {
            return;
        }
        let inertia = inertia(points, &assignment, k);
        match best {
            Some((best_inertia, _)) if *best_inertia <= inertia => {}
            _ => *best = Some((inertia, assignment)),
        }
    };
    for centers in lattice_seedings(points, k) {
        consider(lloyd_from(points, centers), &mut best);
    }
    for restart in 0..KMEANS_RESTARTS {
        consider(lloyd(points, k, derive_seed(seed, restart)), &mut best);
    }
    best.map(|(_, a)| a)
}

/// Candidate center sets from square tilings of the bounding box, for every
/// pitch and phase whose nonempty tile count equals `k`.
fn lattice_seedings(points: &[Vector3<f64>], k: usize) -> Vec<Vec<Vector3<f64>>> {
    let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        min_x = min_x.min(p.x);
        max_x = max_x.max(p.x);
        min_y = min_y.min(p.y);
        max_y = max_y.max(p.y);
    }
    let span = (max_x - min_x).max(max_y - min_y);
    if span <= 0.0 {
        return Vec::new();
    }
    let mut out = Vec::new();
    for steps in 1..=24usize {
        let pitch = span / steps as f64;
        for (px, py) in [(0.0, 0.0), (0.5, 0.0), (0.0, 0.5), (0.5, 0.5)] {
            let tile_of = |p: &Vector3<f64>| -> (i64, i64) {
                (
                    ((p.x - min_x) / pitch + px).floor() as i64,
                    ((p.y - min_y) / pitch + py).floor() as i64,
                )
            };
            let mut tiles: Vec<((i64, i64), Vector3<f64>, usize)> = Vec::new();
            for p in points {
                let t = tile_of(p);
                match tiles.iter_mut().find(|(key, _, _)| *key == t) {
                    Some((_, sum, n)) => {
                        *sum += p;
                        *n += 1;
                    }
                    None => tiles.push((t, *p, 1)),
                }
            }
            if tiles.len() == k {
                out.push(
                    tiles
                        .into_iter()
                        .map(|(_, sum, n)| sum / n as f64)
                        .collect(),
                );
            }
        }
        if steps * steps > 4 * k {
            break;
        }
    }
    out
}

fn feasible(points: &[Vector3<f64>], assignment: &[usize], k: usize, m: usize, r: f64) -> bool {
    let mut sizes = vec![0usize; k];
    let mut sums = vec![Vector3::<f64>::zeros(); k];
    for (p, &a) in points.iter().zip(assignment) {
        sizes[a] += 1;
        sums[a] += p;
    }
    if sizes.iter().any(|&s| s < m) {
        return false;
    }
    let centers: Vec<Vector3<f64>> = sums
        .iter()
        .zip(&sizes)
        .map(|(s, &n)| s / n as f64)
        .collect();
    points
        .iter()
        .zip(assignment)
        .all(|(p, &a)| (p - centers[a]).norm() <= r + 1e-12)
}

fn inertia(points: &[Vector3<f64>], assignment: &[usize], k: usize) -> f64 {
    let mut sizes = vec![0usize; k];
    let mut sums = vec![Vector3::<f64>::zeros(); k];
    for (p, &a) in points.iter().zip(assignment) {
        sizes[a] += 1;
        sums[a] += p;
    }
    let centers: Vec<Vector3<f64>> = sums
        .iter()
        .zip(&sizes)
        .map(|(s, &n)| if n > 0 { s / n as f64 } else { Vector3::zeros() })
        .collect();
    points
        .iter()
        .zip(assignment)
        .map(|(p, &a)| (p - centers[a]).norm_squared())
        .sum()
}

/// One k-means run with distance-weighted (k-means++-style) seeding.
fn lloyd(points: &[Vector3<f64>], k: usize, seed: u64) -> Vec<usize> {
    let n = points.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<Vector3<f64>> = Vec::with_capacity(k);
    centers.push(points[rng.random_range(0..n)]);
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| (p - centers[0]).norm_squared())
        .collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            rng.random_range(0..n)
        } else {
            let mut target = rng.random_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        };
        centers.push(points[next]);
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min((p - centers.last().unwrap()).norm_squared());
        }
    }
    lloyd_from(points, centers)
}

/// Lloyd iterations from the given initial centers.
fn lloyd_from(points: &[Vector3<f64>], mut centers: Vec<Vector3<f64>>) -> Vec<usize> {
    let n = points.len();
    let k = centers.len();
    let mut assignment = vec![0usize; n];
    for _ in 0..KMEANS_MAX_ITERS {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = assignment[i];
            let mut best_d = (p - centers[best]).norm_squared();
            for (c, center) in centers.iter().enumerate() {
                let d = (p - center).norm_squared();
                if d < best_d - 1e-15 {
                    best_d = d;
                    best = c;
                }
            }
            if best != assignment[i] {
                assignment[i] = best;
                changed = true;
            }
        }

        let mut sizes = vec![0usize; k];
        let mut sums = vec![Vector3::<f64>::zeros(); k];
        for (p, &a) in points.iter().zip(&assignment) {
            sizes[a] += 1;
            sums[a] += p;
        }
        // Re-seed empty clusters with the point farthest from its center.
        for c in 0..k {
            if sizes[c] == 0 {
                let (far_idx, _) = points
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (i, (p - centers[assignment[i]]).norm_squared()))
                    .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
                    .expect("nonempty layer");
                let old = assignment[far_idx];
                sizes[old] -= 1;
                sums[old] -= points[far_idx];
                assignment[far_idx] = c;
                sizes[c] = 1;
                sums[c] = points[far_idx];
                changed = true;
            }
        }
        for c in 0..k {
            if sizes[c] > 0 {
                centers[c] = sums[c] / sizes[c] as f64;
            }
        }
        if !changed {
            break;
        }
    }
    assignment
}

/// Picks `m` marker destinations spread as far apart as possible: first the
/// point farthest from the centroid, then greedily the point maximizing the
/// minimum distance to those already chosen. Ties break lexicographically.
pub fn select_marker_destinations(
    cluster: &[Slot],
    unit: f64,
    m: usize,
) -> Result<Vec<Vector3<f64>>> {
    if cluster.len() < m {
        return Err(Error::InvalidInput(format!(
            "cluster of {} slots cannot host {m} markers",
            cluster.len()
        )));
    }
    let points: Vec<Vector3<f64>> = cluster.iter().map(|s| s.world(unit)).collect();
    let center = centroid(&points);
    let mut chosen: Vec<usize> = Vec::with_capacity(m);
    let mut remaining: Vec<usize> = (0..points.len()).collect();

    let key = |i: usize| (points[i].x, points[i].y, points[i].z);
    let first = remaining
        .iter()
        .copied()
        .max_by(|&a, &b| {
            (points[a] - center)
                .norm()
                .total_cmp(&(points[b] - center).norm())
                .then_with(|| key(b).partial_cmp(&key(a)).unwrap())
        })
        .expect("nonempty cluster");
    chosen.push(first);
    remaining.retain(|&i| i != first);

    while chosen.len() < m {
        let next = remaining
            .iter()
            .copied()
            .max_by(|&a, &b| {
                let da = chosen
                    .iter()
                    .map(|&c| (points[a] - points[c]).norm())
                    .fold(f64::INFINITY, f64::min);
                let db = chosen
                    .iter()
                    .map(|&c| (points[b] - points[c]).norm())
                    .fold(f64::INFINITY, f64::min);
                da.total_cmp(&db)
                    .then_with(|| key(b).partial_cmp(&key(a)).unwrap())
            })
            .expect("cluster at least m");
        chosen.push(next);
        remaining.retain(|&i| i != next);
    }
    Ok(chosen.into_iter().map(|i| points[i]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slots_from_xy(xy: &[(i32, i32)]) -> Vec<Slot> {
        xy.iter().map(|&(i, j)| Slot::new(i, j, 0)).collect()
    }

    #[test]
    fn everything_in_range_is_one_cluster() {
        let layer = slots_from_xy(&[(0, 0), (1, 0), (0, 1), (1, 1)]);
        let set = cluster_until_radius(&layer, 1.0, 2.0, 2, 7).unwrap();
        assert_eq!(set.k, 1);
        assert_eq!(set.clusters[0].slots.len(), 4);
    }

    #[test]
    fn distant_groups_split_naturally() {
        let mut layer = slots_from_xy(&[(0, 0), (1, 0), (0, 1), (1, 1)]);
        layer.extend(slots_from_xy(&[(20, 20), (21, 20), (20, 21), (21, 21)]));
        let set = cluster_until_radius(&layer, 1.0, 2.0, 2, 7).unwrap();
        assert_eq!(set.k, 2);
        for c in &set.clusters {
            assert_eq!(c.slots.len(), 4);
            assert!(c.radius <= 2.0);
        }
    }

    #[test]
    fn every_cluster_satisfies_the_radius_bound() {
        let s = crate::structure::Structure::rectangular(1.0, 12, 9, 1).unwrap();
        let layer = &s.layers()[0];
        for r in [1.5, 2.5, 4.0] {
            let set = cluster_until_radius(layer, 1.0, r, 3, 42).unwrap();
            let total: usize = set.clusters.iter().map(|c| c.slots.len()).sum();
            assert_eq!(total, layer.len());
            for c in &set.clusters {
                assert!(c.radius <= r + 1e-9, "radius {} > {r}", c.radius);
                assert!(c.slots.len() >= 3);
            }
        }
    }

    #[test]
    fn infeasible_layers_are_reported() {
        // Three slots spread way beyond the radius with m = 3: the only
        // size-3 cluster is all of them, which violates the radius.
        let layer = slots_from_xy(&[(0, 0), (50, 0), (100, 0)]);
        let err = cluster_until_radius(&layer, 1.0, 2.0, 3, 7).unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)));
        // Fewer slots than markers.
        let layer = slots_from_xy(&[(0, 0)]);
        assert!(cluster_until_radius(&layer, 1.0, 2.0, 2, 7).is_err());
    }

    #[test]
    fn destinations_cover_extremes() {
        // All points requested: identity.
        let cluster = slots_from_xy(&[(0, 0), (1, 0), (2, 0)]);
        let d = select_marker_destinations(&cluster, 1.0, 3).unwrap();
        assert_eq!(d.len(), 3);
        // Two on a line: the endpoints.
        let cluster = slots_from_xy(&[(0, 0), (1, 0), (2, 0), (3, 0), (4, 0)]);
        let d = select_marker_destinations(&cluster, 1.0, 2).unwrap();
        let xs: Vec<f64> = d.iter().map(|p| p.x).collect();
        assert!(xs.contains(&0.0) && xs.contains(&4.0), "{xs:?}");
    }

    #[test]
    fn greedy_triple_matches_exhaustive_min_pairwise_distance() {
        let cluster: Vec<Slot> = (0..4)
            .flat_map(|i| (0..4).map(move |j| Slot::new(i, j, 0)))
            .collect();
        let d = select_marker_destinations(&cluster, 1.0, 3).unwrap();
        let min_pairwise = |pts: &[Vector3<f64>]| -> f64 {
            let mut m = f64::INFINITY;
            for a in 0..pts.len() {
                for b in a + 1..pts.len() {
                    m = m.min((pts[a] - pts[b]).norm());
                }
            }
            m
        };
        let greedy_value = min_pairwise(&d);
        // Exhaustive optimum over all triples.
        let pts: Vec<Vector3<f64>> = cluster.iter().map(|s| s.world(1.0)).collect();
        let mut best = 0.0_f64;
        for a in 0..pts.len() {
            for b in a + 1..pts.len() {
                for c in b + 1..pts.len() {
                    best = best.max(min_pairwise(&[pts[a], pts[b], pts[c]]));
                }
            }
        }
        assert_eq!(greedy_value, best);
    }

    #[test]
    fn clustering_is_deterministic() {
        let s = crate::structure::Structure::rectangular(1.0, 8, 8, 1).unwrap();
        let layer = &s.layers()[0];
        let a = cluster_until_radius(layer, 1.0, 2.0, 3, 9).unwrap();
        let b = cluster_until_radius(layer, 1.0, 2.0, 3, 9).unwrap();
        assert_eq!(a.k, b.k);
        for (ca, cb) in a.clusters.iter().zip(&b.clusters) {
            assert_eq!(ca.slots, cb.slots);
        }
    }
}
