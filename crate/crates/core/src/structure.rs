//! Block structures: discrete slots on a cubic grid, organized into layers.

use std::collections::BTreeSet;
use std::io::Read;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A block destination in the structure grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Slot {
    pub i: i32,
    pub j: i32,
    pub k: i32,
}

impl Slot {
    pub fn new(i: i32, j: i32, k: i32) -> Self {
        Self { i, j, k }
    }

    /// Anchor point in world coordinates: the bottom-center of the block
    /// volume. A marker resting in this slot sits exactly here.
    pub fn world(&self, unit: f64) -> Vector3<f64> {
        Vector3::new(self.i as f64 * unit, self.j as f64 * unit, self.k as f64 * unit)
    }

    /// The axis-aligned volume a placed block occupies.
    pub fn block_box(&self, unit: f64) -> (Vector3<f64>, Vector3<f64>) {
        let c = self.world(unit);
        (
            Vector3::new(c.x - 0.5 * unit, c.y - 0.5 * unit, c.z),
            Vector3::new(c.x + 0.5 * unit, c.y + 0.5 * unit, c.z + unit),
        )
    }

    pub fn coords(&self) -> [i32; 3] {
        [self.i, self.j, self.k]
    }
}

/// A set of slots with a fixed cell size.
#[derive(Debug, Clone)]
pub struct Structure {
    pub unit: f64,
    slots: Vec<Slot>,
}

#[derive(Debug, Serialize, Deserialize)]
struct StructureFile {
    unit_m: f64,
    slots: Vec<[i32; 3]>,
}

impl Structure {
    pub fn new(unit: f64, mut slots: Vec<Slot>) -> Result<Self> {
        if !(unit.is_finite() && unit > 0.0) {
            return Err(Error::InvalidInput(format!(
                "unit cell must be positive, got {unit}"
            )));
        }
        // Canonical order: by height, then x, then y.
        slots.sort_by_key(|s| (s.k, s.i, s.j));
        let mut seen = BTreeSet::new();
        for s in &slots {
            if !seen.insert(*s) {
                return Err(Error::InvalidInput(format!(
                    "duplicate slot ({}, {}, {})",
                    s.i, s.j, s.k
                )));
            }
        }
        Ok(Self { unit, slots })
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn slot_set(&self) -> BTreeSet<Slot> {
        self.slots.iter().copied().collect()
    }

    /// Splits the slots into layers by ascending height. Within a layer,
    /// slots keep the canonical (x, y) order, so concatenating the layers
    /// reproduces the canonical slot order.
    pub fn layers(&self) -> Vec<Vec<Slot>> {
        let mut out: Vec<Vec<Slot>> = Vec::new();
        for s in &self.slots {
            match out.last_mut() {
                Some(layer) if layer[0].k == s.k => layer.push(*s),
                _ => out.push(vec![*s]),
            }
        }
        out
    }

    /// Solid axis-aligned box of `nx * ny` columns and `nz` levels.
    pub fn rectangular(unit: f64, nx: i32, ny: i32, nz: i32) -> Result<Self> {
        let mut slots = Vec::new();
        for k in 0..nz {
            for i in 0..nx {
                for j in 0..ny {
                    slots.push(Slot::new(i, j, k));
                }
            }
        }
        Self::new(unit, slots)
    }

    /// Stepped pyramid: one square layer per entry of `sides`, stacked and
    /// centered on the first (largest) layer.
    pub fn stepped_pyramid(unit: f64, sides: &[i32]) -> Result<Self> {
        let base = *sides.first().ok_or_else(|| {
            Error::InvalidInput("pyramid needs at least one layer".into())
        })?;
        let mut slots = Vec::new();
        for (k, &side) in sides.iter().enumerate() {
            if side <= 0 || side > base {
                return Err(Error::InvalidInput(format!(
                    "layer side {side} invalid for base {base}"
                )));
            }
            let off = (base - side) / 2;
            for i in 0..side {
                for j in 0..side {
                    slots.push(Slot::new(off + i, off + j, k as i32));
                }
            }
        }
        Self::new(unit, slots)
    }

    pub fn to_json_string(&self) -> Result<String> {
        let file = StructureFile {
            unit_m: self.unit,
            slots: self.slots.iter().map(|s| s.coords()).collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let f: StructureFile = serde_json::from_str(s)?;
        Self::new(
            f.unit_m,
            f.slots.iter().map(|c| Slot::new(c[0], c[1], c[2])).collect(),
        )
    }

    pub fn from_reader<R: Read>(mut r: R) -> Result<Self> {
        let mut buf = String::new();
        r.read_to_string(&mut buf)?;
        Self::from_json_str(&buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_structure_is_one_layer() {
        let s = Structure::rectangular(0.25, 5, 5, 1).unwrap();
        let layers = s.layers();
        assert_eq!(layers.len(), 1);
        assert_eq!(layers[0].len(), 25);
    }

    #[test]
    fn two_level_pyramid_layers() {
        let s = Structure::stepped_pyramid(0.25, &[3, 1]).unwrap();
        let layers = s.layers();
        assert_eq!(layers.len(), 2);
        assert_eq!(layers[0].len(), 9);
        assert_eq!(layers[1].len(), 1);
        assert_eq!(layers[1][0], Slot::new(1, 1, 1));
    }

    #[test]
    fn layers_partition_the_canonical_order() {
        let s = Structure::stepped_pyramid(1.0, &[4, 2, 2]).unwrap();
        let concat: Vec<Slot> = s.layers().into_iter().flatten().collect();
        assert_eq!(concat, s.slots().to_vec());
        let mut sorted = s.slots().to_vec();
        sorted.sort_by_key(|s| (s.k, s.i, s.j));
        assert_eq!(concat, sorted);
    }

    #[test]
    fn duplicates_are_rejected() {
        let r = Structure::new(1.0, vec![Slot::new(0, 0, 0), Slot::new(0, 0, 0)]);
        assert!(r.is_err());
    }

    #[test]
    fn file_roundtrip() {
        let s = Structure::rectangular(0.25, 3, 2, 2).unwrap();
        let json = s.to_json_string().unwrap();
        let back = Structure::from_json_str(&json).unwrap();
        assert_eq!(back.unit, s.unit);
        assert_eq!(back.slots(), s.slots());
    }

    #[test]
    fn acceptance_fixtures_have_expected_sizes() {
        let fixture = Structure::rectangular(0.25, 10, 10, 2).unwrap();
        assert_eq!(fixture.len(), 200);
        let pyramid = Structure::stepped_pyramid(0.25, &[24, 22, 20, 18, 4]).unwrap();
        assert_eq!(pyramid.len(), 1800);
    }
}
