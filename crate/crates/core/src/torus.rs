//! Points on the unit periodic square `[-1/2, 1/2)^2`.

use serde::{Deserialize, Serialize};

/// A point on the unit torus, stored by its canonical representative.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TorusPoint {
    pub x1: f64,
    pub x2: f64,
}

/// Wrap a coordinate into `[-1/2, 1/2)`.
#[inline]
pub fn wrap_coord(x: f64) -> f64 {
    let mut r = x - (x + 0.5).floor();
    if r >= 0.5 {
        r -= 1.0;
    }
    if r < -0.5 {
        r += 1.0;
    }
    r
}

/// Minimal-image difference `a - b` on the torus.
#[inline]
pub fn torus_delta(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [wrap_coord(a[0] - b[0]), wrap_coord(a[1] - b[1])]
}

#[inline]
pub fn torus_dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = torus_delta(a, b);
    d[0].hypot(d[1])
}

#[inline]
pub fn wrap(p: [f64; 2]) -> [f64; 2] {
    [wrap_coord(p[0]), wrap_coord(p[1])]
}

impl TorusPoint {
    pub fn new(x1: f64, x2: f64) -> Self {
        Self {
            x1: wrap_coord(x1),
            x2: wrap_coord(x2),
        }
    }

    pub fn from_array(p: [f64; 2]) -> Self {
        Self::new(p[0], p[1])
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.x1, self.x2]
    }

    pub fn wrap(self) -> Self {
        Self::new(self.x1, self.x2)
    }

    pub fn distance(self, other: TorusPoint) -> f64 {
        torus_dist(self.to_array(), other.to_array())
    }

    pub fn neg(self) -> Self {
        Self::new(-self.x1, -self.x2)
    }

    pub fn norm(self) -> f64 {
        self.x1.hypot(self.x2)
    }
}

/// Cell-centre marker labels of an `n x n` partition, row-major in `(i1, i2)`.
pub fn marker_labels(n: usize) -> Vec<[f64; 2]> {
    let h = 1.0 / n as f64;
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            out.push([-0.5 + (i as f64 + 0.5) * h, -0.5 + (j as f64 + 0.5) * h]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn wrap_edges() {
        assert_eq!(wrap_coord(0.5), -0.5);
        assert_eq!(wrap_coord(-0.5), -0.5);
        assert_eq!(wrap_coord(1.25), 0.25);
        assert!(wrap_coord(-0.5 - 1e-17) >= -0.5);
        assert!(wrap_coord(0.5 - 1e-17) < 0.5);
    }

    #[test]
    fn labels_are_cell_centres() {
        let l = marker_labels(4);
        assert_eq!(l.len(), 16);
        assert_eq!(l[0], [-0.375, -0.375]);
        assert_eq!(l[1], [-0.375, -0.125]);
        assert_eq!(l[4], [-0.125, -0.375]);
    }

    proptest! {
        #[test]
        fn wrap_is_idempotent(x in -10.0f64..10.0, y in -10.0f64..10.0) {
            let p = TorusPoint::new(x, y);
            prop_assert_eq!(p.wrap(), p);
            prop_assert!(p.x1 >= -0.5 && p.x1 < 0.5 && p.x2 >= -0.5 && p.x2 < 0.5);
        }

        #[test]
        fn metric_axioms(a in prop::array::uniform2(-0.5f64..0.5),
                         b in prop::array::uniform2(-0.5f64..0.5),
                         c in prop::array::uniform2(-0.5f64..0.5)) {
            let dab = torus_dist(a, b);
            prop_assert!(dab <= std::f64::consts::SQRT_2 / 2.0 + 1e-15);
            prop_assert!((dab - torus_dist(b, a)).abs() < 1e-15);
            prop_assert!(dab <= torus_dist(a, c) + torus_dist(c, b) + 1e-14);
        }
    }
}
