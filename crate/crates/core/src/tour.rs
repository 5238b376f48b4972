//! Open-path tour over cluster centers: nearest neighbor construction
//! followed by 2-opt improvement.

use nalgebra::Vector3;

/// Visiting order over `centers` starting from `start` (which is not itself
/// a stop). Deterministic: ties break toward the lower index.
pub fn find_tour(centers: &[Vector3<f64>], start: &Vector3<f64>) -> Vec<usize> {
    let n = centers.len();
    if n == 0 {
        return Vec::new();
    }

    // Nearest-neighbor construction.
    let mut order: Vec<usize> = Vec::with_capacity(n);
    let mut used = vec![false; n];
    let mut cursor = *start;
    for _ in 0..n {
        let next = (0..n)
            .filter(|&i| !used[i])
            .min_by(|&a, &b| {
                (centers[a] - cursor)
                    .norm()
                    .total_cmp(&(centers[b] - cursor).norm())
                    .then(a.cmp(&b))
            })
            .expect("unused center remains");
        used[next] = true;
        cursor = centers[next];
        order.push(next);
    }

    // 2-opt for an open path: reversing order[i..=j] replaces the edges
    // (i-1, i) and (j, j+1); the start leg counts, the tail has no edge.
    let dist = |a: &Vector3<f64>, b: &Vector3<f64>| (a - b).norm();
    let pos = |order: &[usize], idx: usize| -> Vector3<f64> {
        if idx == 0 {
            *start
        } else {
            centers[order[idx - 1]]
        }
    };
    let mut improved = true;
    while improved {
        improved = false;
        for i in 0..n {
            for j in i + 1..n {
                let before = pos(&order, i);
                let removed = dist(&before, &centers[order[i]])
                    + if j + 1 < n {
                        dist(&centers[order[j]], &centers[order[j + 1]])
                    } else {
                        0.0
                    };
                let added = dist(&before, &centers[order[j]])
                    + if j + 1 < n {
                        dist(&centers[order[i]], &centers[order[j + 1]])
                    } else {
                        0.0
                    };
                if added + 1e-12 < removed {
                    order[i..=j].reverse();
                    improved = true;
                }
            }
        }
    }
    order
}

/// Total length of the path start -> centers[order[0]] -> ...
pub fn tour_length(centers: &[Vector3<f64>], start: &Vector3<f64>, order: &[usize]) -> f64 {
    let mut len = 0.0;
    let mut cursor = *start;
    for &i in order {
        len += (centers[i] - cursor).norm();
        cursor = centers[i];
    }
    len
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn brute_force(centers: &[Vector3<f64>], start: &Vector3<f64>) -> (Vec<usize>, f64) {
        let n = centers.len();
        let mut best: Option<(Vec<usize>, f64)> = None;
        let mut order: Vec<usize> = (0..n).collect();
        permute(&mut order, 0, &mut |perm| {
            let len = tour_length(centers, start, perm);
            if best.as_ref().is_none_or(|(_, l)| len < *l) {
                best = Some((perm.to_vec(), len));
            }
        });
        best.expect("nonempty")
    }

    fn permute(v: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
        if k == v.len() {
            f(v);
            return;
        }
        for i in k..v.len() {
            v.swap(k, i);
            permute(v, k + 1, f);
            v.swap(k, i);
        }
    }

    #[test]
    fn single_center_is_trivial() {
        let centers = vec![Vector3::new(1.0, 2.0, 0.0)];
        assert_eq!(find_tour(&centers, &Vector3::zeros()), vec![0]);
        assert!(find_tour(&[], &Vector3::zeros()).is_empty());
    }

    #[test]
    fn three_collinear_centers_visit_in_spatial_order() {
        let centers = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(10.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
        ];
        let order = find_tour(&centers, &Vector3::zeros());
        assert_eq!(order, vec![0, 2, 1]);
        let (brute, _) = brute_force(&centers, &Vector3::zeros());
        assert_eq!(order, brute);
    }

    #[test]
    fn within_a_quarter_of_optimal_on_small_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(404);
        for _ in 0..100 {
            let n = rng.random_range(2..=8);
            let centers: Vec<Vector3<f64>> = (0..n)
                .map(|_| {
                    Vector3::new(
                        rng.random_range(-5.0..5.0),
                        rng.random_range(-5.0..5.0),
                        0.0,
                    )
                })
                .collect();
            let start = Vector3::new(
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                0.0,
            );
            let order = find_tour(&centers, &start);
            let len = tour_length(&centers, &start, &order);
            let (_, opt) = brute_force(&centers, &start);
            assert!(
                len <= 1.25 * opt + 1e-9,
                "heuristic {len:.3} vs optimal {opt:.3}"
            );
        }
    }
}
