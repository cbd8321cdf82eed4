//! Uniform 3-D grid over the embedding domain.
//!
//! `d` counts nodes per axis, so a lattice has `d³` nodes and `(d-1)³` cells. Nodes are
//! linearized as `((ix * d) + iy) * d + iz`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Point;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    d: usize,
    lo: [f64; 3],
    hi: [f64; 3],
}

/// Lower-corner node indices of the containing cell and the normalized offsets inside it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellLocation {
    pub base: [usize; 3],
    pub frac: [f64; 3],
}

impl Lattice {
    pub const DEFAULT_LO: [f64; 3] = [-1.0; 3];
    pub const DEFAULT_HI: [f64; 3] = [1.0; 3];

    /// `d` nodes per axis over `[-1, 1]³`.
    pub fn new(d: usize) -> Result<Self> {
        Self::with_bounds(d, Self::DEFAULT_LO, Self::DEFAULT_HI)
    }

    pub fn with_bounds(d: usize, lo: [f64; 3], hi: [f64; 3]) -> Result<Self> {
        if d < 2 {
            return Err(Error::invalid(format!("lattice needs d >= 2, got {d}")));
        }
        for a in 0..3 {
            if !(lo[a].is_finite() && hi[a].is_finite() && hi[a] > lo[a]) {
                return Err(Error::invalid(format!(
                    "degenerate lattice bounds on axis {a}: [{}, {}]",
                    lo[a], hi[a]
                )));
            }
        }
        Ok(Lattice { d, lo, hi })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn lo(&self) -> [f64; 3] {
        self.lo
    }

    pub fn hi(&self) -> [f64; 3] {
        self.hi
    }

    pub fn node_count(&self) -> usize {
        self.d * self.d * self.d
    }

    /// Node spacing per axis.
    pub fn spacing(&self) -> [f64; 3] {
        let s = (self.d - 1) as f64;
        [
            (self.hi[0] - self.lo[0]) / s,
            (self.hi[1] - self.lo[1]) / s,
            (self.hi[2] - self.lo[2]) / s,
        ]
    }

    pub fn node_index(&self, idx: [usize; 3]) -> usize {
        (idx[0] * self.d + idx[1]) * self.d + idx[2]
    }

    pub fn node_indices(&self, node: usize) -> [usize; 3] {
        let d = self.d;
        [node / (d * d), (node / d) % d, node % d]
    }

    /// Coordinates of node `idx`; the first and last index map to the bounds exactly.
    pub fn node_coords(&self, idx: [usize; 3]) -> Point {
        let s = (self.d - 1) as f64;
        let mut p = [0.0; 3];
        for a in 0..3 {
            let t = idx[a] as f64 / s;
            p[a] = self.lo[a] * (1.0 - t) + self.hi[a] * t;
        }
        p
    }

    /// Continuous grid coordinate of `p` after clamping into the domain, snapped onto a node
    /// when within rounding distance of it.
    fn grid_coord(&self, p: &Point, a: usize) -> f64 {
        let top = (self.d - 1) as f64;
        let x = p[a].clamp(self.lo[a], self.hi[a]);
        let s = ((x - self.lo[a]) / (self.hi[a] - self.lo[a]) * top).clamp(0.0, top);
        let r = s.round();
        if (s - r).abs() <= 8.0 * f64::EPSILON * top.max(1.0) {
            r
        } else {
            s
        }
    }

    pub fn locate(&self, p: &Point) -> CellLocation {
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let s = self.grid_coord(p, a);
            let b = (s.floor() as usize).min(self.d - 2);
            base[a] = b;
            frac[a] = s - b as f64;
        }
        CellLocation { base, frac }
    }

    /// Nearest node, rounding ties toward the upper index.
    pub fn nearest_node(&self, p: &Point) -> usize {
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let s = self.grid_coord(p, a);
            idx[a] = ((s + 0.5).floor() as usize).min(self.d - 1);
        }
        self.node_index(idx)
    }

    /// Linear node ids of the 8 cell corners, in the same order as [`trilinear_weights`].
    pub fn corner_ids(&self, c: &CellLocation) -> [usize; 8] {
        let base = self.node_index(c.base);
        let (d, d2) = (self.d, self.d * self.d);
        let mut ids = [0usize; 8];
        for (j, id) in ids.iter_mut().enumerate() {
            *id = base + (j >> 2) * d2 + ((j >> 1) & 1) * d + (j & 1);
        }
        ids
    }
}

/// Corner weights; corner `j` has bits `(x, y, z) = (j>>2, (j>>1)&1, j&1)` and weight
/// `Π_a (bit_a ? u_a : 1 - u_a)`.
pub fn trilinear_weights(c: &CellLocation) -> [f64; 8] {
    let [ux, uy, uz] = c.frac;
    let wx = [1.0 - ux, ux];
    let wy = [1.0 - uy, uy];
    let wz = [1.0 - uz, uz];
    let mut w = [0.0; 8];
    for (j, wj) in w.iter_mut().enumerate() {
        *wj = wx[j >> 2] * wy[(j >> 1) & 1] * wz[j & 1];
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_degenerate_lattices() {
        assert!(Lattice::new(1).is_err());
        assert!(Lattice::with_bounds(4, [0.0; 3], [0.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn locate_domain_corners() {
        let lat = Lattice::new(4).unwrap();
        let c = lat.locate(&[-1.0; 3]);
        assert_eq!(c.base, [0; 3]);
        assert_eq!(c.frac, [0.0; 3]);
        let c = lat.locate(&[1.0; 3]);
        assert_eq!(c.base, [2; 3]);
        assert_eq!(c.frac, [1.0; 3]);
    }

    #[test]
    fn locate_hand_arithmetic() {
        let lat = Lattice::new(2).unwrap();
        let c = lat.locate(&[0.25, 0.0, 0.0]);
        assert_eq!(c.base, [0; 3]);
        assert_eq!(c.frac, [0.625, 0.5, 0.5]);
    }

    #[test]
    fn locate_clamps_outside_points() {
        let lat = Lattice::new(3).unwrap();
        let c = lat.locate(&[5.0, -7.0, 0.5]);
        assert_eq!(c.base, [1, 0, 1]);
        assert_eq!(c.frac, [1.0, 0.0, 0.5]);
    }

    #[test]
    fn node_coords_hit_bounds() {
        let lat = Lattice::with_bounds(7, [-0.3, 0.1, -2.0], [0.9, 0.7, 1.3]).unwrap();
        assert_eq!(lat.node_coords([0; 3]), lat.lo());
        assert_eq!(lat.node_coords([6; 3]), lat.hi());
    }

    #[test]
    fn corner_ids_follow_weight_order() {
        let lat = Lattice::new(4).unwrap();
        let c = CellLocation {
            base: [1, 2, 0],
            frac: [0.0; 3],
        };
        let ids = lat.corner_ids(&c);
        for (j, id) in ids.iter().enumerate() {
            let expect = lat.node_index([1 + (j >> 2), 2 + ((j >> 1) & 1), j & 1]);
            assert_eq!(*id, expect);
        }
    }

    #[test]
    fn weight_extremes() {
        let w = trilinear_weights(&CellLocation {
            base: [0; 3],
            frac: [0.0; 3],
        });
        assert_eq!(w, [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let w = trilinear_weights(&CellLocation {
            base: [0; 3],
            frac: [0.5; 3],
        });
        assert_eq!(w, [0.125; 8]);
    }

    #[test]
    fn nearest_node_breaks_ties_upward() {
        let lat = Lattice::new(2).unwrap();
        assert_eq!(lat.nearest_node(&[0.0; 3]), lat.node_index([1, 1, 1]));
        assert_eq!(lat.nearest_node(&[-0.01, 0.0, 0.3]), lat.node_index([0, 1, 1]));
    }

    fn unit() -> impl Strategy<Value = f64> {
        0.0f64..=1.0
    }

    proptest! {
        #[test]
        fn weights_match_corner_expansion(ux in unit(), uy in unit(), uz in unit()) {
            let w = trilinear_weights(&CellLocation { base: [0; 3], frac: [ux, uy, uz] });
            // corner-by-corner oracle
            let corners = [
                (1.0 - ux) * (1.0 - uy) * (1.0 - uz),
                (1.0 - ux) * (1.0 - uy) * uz,
                (1.0 - ux) * uy * (1.0 - uz),
                (1.0 - ux) * uy * uz,
                ux * (1.0 - uy) * (1.0 - uz),
                ux * (1.0 - uy) * uz,
                ux * uy * (1.0 - uz),
                ux * uy * uz,
            ];
            for j in 0..8 {
                prop_assert!((w[j] - corners[j]).abs() < 1e-15);
                prop_assert!(w[j] >= 0.0);
            }
            let s: f64 = w.iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-15);
        }

        #[test]
        fn trilinear_fields_are_reproduced(
            coef in prop::array::uniform8(-2.0f64..2.0),
            p in prop::array::uniform3(-1.0f64..1.0),
            d in 2usize..9,
        ) {
            let lat = Lattice::new(d).unwrap();
            let f = |q: &Point| {
                coef[0] + coef[1] * q[0] + coef[2] * q[1] + coef[3] * q[2]
                    + coef[4] * q[0] * q[1] + coef[5] * q[1] * q[2] + coef[6] * q[0] * q[2]
                    + coef[7] * q[0] * q[1] * q[2]
            };
            let c = lat.locate(&p);
            let w = trilinear_weights(&c);
            let ids = lat.corner_ids(&c);
            let v: f64 = ids.iter().zip(&w)
                .map(|(&id, wj)| wj * f(&lat.node_coords(lat.node_indices(id))))
                .sum();
            prop_assert!((v - f(&p)).abs() < 1e-12);
        }

        #[test]
        fn locate_inverts_node_coords(d in 2usize..40, ix in 0usize..40, iy in 0usize..40, iz in 0usize..40) {
            let lat = Lattice::with_bounds(d, [-1.3, 0.2, -0.7], [0.9, 2.5, 0.4]).unwrap();
            let idx = [ix % d, iy % d, iz % d];
            let c = lat.locate(&lat.node_coords(idx));
            for a in 0..3 {
                let recovered = c.base[a] + c.frac[a] as usize;
                prop_assert_eq!(recovered, idx[a]);
                prop_assert!(c.frac[a] == 0.0 || c.frac[a] == 1.0);
            }
            prop_assert_eq!(lat.nearest_node(&lat.node_coords(idx)), lat.node_index(idx));
        }

        #[test]
        fn node_coords_match_affine_map(d in 2usize..30, ix in 0usize..30) {
            let lat = Lattice::new(d).unwrap();
            let i = ix % d;
            let p = lat.node_coords([i, 0, d - 1]);
            let h = lat.spacing()[0];
            prop_assert!((p[0] - (-1.0 + i as f64 * h)).abs() < 1e-12);
            prop_assert_eq!(p[1], -1.0);
            prop_assert_eq!(p[2], 1.0);
        }
    }
}
