//! Segment / axis-aligned-box intersection, used for line-of-sight tests.

use nalgebra::Vector3;

use crate::{Error, Result};

/// True iff the segment `origin + t*dir` for `t` in `(0, 1]` intersects the
/// closed box `[box_min, box_max]`. `dir` spans origin -> target, so `t = 1`
/// is the target itself and the origin is excluded.
///
/// Boxes are closed: grazing contact counts as an intersection.
pub fn ray_aabb_intersect(
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    box_min: &Vector3<f64>,
    box_max: &Vector3<f64>,
) -> Result<bool> {
    if dir.norm_squared() == 0.0 {
        return Err(Error::InvalidInput("zero ray direction".into()));
    }

    let mut t_min = f64::NEG_INFINITY;
    let mut t_max = f64::INFINITY;
    for i in 0..3 {
        if dir[i] == 0.0 {
            if origin[i] < box_min[i] || origin[i] > box_max[i] {
                return Ok(false);
            }
        } else {
            let inv = 1.0 / dir[i];
            let t1 = (box_min[i] - origin[i]) * inv;
            let t2 = (box_max[i] - origin[i]) * inv;
            t_min = t_min.max(t1.min(t2));
            t_max = t_max.min(t1.max(t2));
        }
    }

    Ok(t_min <= t_max && t_max > 0.0 && t_min <= 1.0)
}
