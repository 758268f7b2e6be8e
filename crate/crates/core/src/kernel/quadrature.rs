//! Integrals of kernel expressions over the torus with point singularities:
//! graded quadtree of tensor Gauss–Legendre cells.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::mollifier::bump_mass_within;
use super::KernelEvaluator;
use crate::analysis::gamma;
use crate::error::{Error, Result};
use crate::special::{gauss_legendre, CompositeRule};
use crate::torus::{torus_delta, torus_dist};

/// Integral estimate plus a bound on the mass of cells dropped at singular points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadratureEstimate {
    pub value: f64,
    pub error_bound: f64,
}

/// Quadtree resolution: uniform base cells, Gauss order per cell, and the
/// smallest cell kept next to a singular point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadratureResolution {
    pub base_cells: usize,
    pub order: usize,
    pub min_cell: f64,
}

impl Default for QuadratureResolution {
    fn default() -> Self {
        Self {
            base_cells: 16,
            order: 6,
            min_cell: 1e-7,
        }
    }
}

impl QuadratureResolution {
    /// One refinement step: twice the base cells, half the minimum cell.
    pub fn refined(&self) -> Self {
        Self {
            base_cells: self.base_cells * 2,
            order: self.order,
            min_cell: self.min_cell / 2.0,
        }
    }
}

/// Upper bound for `∫|K|` over a square of side `s` containing the singular
/// point of one kernel term, summed over the two terms of a difference.
const DROPPED_CELL_ENVELOPE: f64 = 1.41;

/// Integrate `f` over the unit square centred at `centre`, grading cells
/// towards `singular` (points inside the square).
pub fn integrate_graded(
    f: impl Fn([f64; 2]) -> f64,
    centre: [f64; 2],
    singular: &[[f64; 2]],
    res: &QuadratureResolution,
) -> QuadratureEstimate {
    let (gx, gw) = gauss_legendre(res.order);
    let base = 1.0 / res.base_cells as f64;
    let lo = [centre[0] - 0.5, centre[1] - 0.5];
    let mut value = 0.0;
    let mut dropped = 0.0;
    let mut stack: Vec<([f64; 2], f64)> = Vec::new();
    for i in 0..res.base_cells {
        for j in 0..res.base_cells {
            stack.push(([lo[0] + i as f64 * base, lo[1] + j as f64 * base], base));
        }
    }
    let gauss = |c: [f64; 2], s: f64| -> f64 {
        let mut acc = 0.0;
        for (xa, wa) in gx.iter().zip(&gw) {
            let p1 = c[0] + 0.5 * s * (xa + 1.0);
            let mut row = 0.0;
            for (xb, wb) in gx.iter().zip(&gw) {
                row += wb * f([p1, c[1] + 0.5 * s * (xb + 1.0)]);
            }
            acc += wa * row;
        }
        acc * 0.25 * s * s
    };
    while let Some((c, s)) = stack.pop() {
        let mut near = f64::INFINITY;
        let mut inside = false;
        for p in singular {
            let dx = (c[0] - p[0]).max(p[0] - (c[0] + s)).max(0.0);
            let dy = (c[1] - p[1]).max(p[1] - (c[1] + s)).max(0.0);
            near = near.min(dx.hypot(dy));
            inside |= dx == 0.0 && dy == 0.0;
        }
        if near < s {
            if s * 0.5 < res.min_cell {
                if inside {
                    dropped += DROPPED_CELL_ENVELOPE * s;
                } else {
                    value += gauss(c, s);
                }
            } else {
                let h = 0.5 * s;
                stack.push((c, h));
                stack.push(([c[0] + h, c[1]], h));
                stack.push(([c[0], c[1] + h], h));
                stack.push(([c[0] + h, c[1] + h], h));
            }
        } else {
            value += gauss(c, s);
        }
    }
    QuadratureEstimate {
        value,
        error_bound: dropped,
    }
}

/// `∫ |K(x - y) - K(x' - y)| dy`.
pub fn log_lipschitz_numerator(
    x: [f64; 2],
    x_prime: [f64; 2],
    ev: &KernelEvaluator,
    res: &QuadratureResolution,
) -> QuadratureEstimate {
    // With z = x' - y the integrand is |K(z + δ) - K(z)|, δ = x - x'; singular
    // at z = 0 and z = -δ, both at least 1/4 inside the square centred at -δ/2.
    let d = torus_delta(x, x_prime);
    integrate_graded(
        |z| {
            let a = ev.kernel_or_zero([z[0] + d[0], z[1] + d[1]]);
            let b = ev.kernel_or_zero(z);
            (a[0] - b[0]).hypot(a[1] - b[1])
        },
        [-0.5 * d[0], -0.5 * d[1]],
        &[[0.0, 0.0], [-d[0], -d[1]]],
        res,
    )
}

/// Numerator divided by `gamma(dist(x, x'))`.
pub fn log_lipschitz_ratio(
    x: [f64; 2],
    x_prime: [f64; 2],
    ev: &KernelEvaluator,
    res: &QuadratureResolution,
) -> Result<f64> {
    let dist = torus_dist(x, x_prime);
    if dist == 0.0 {
        return Err(Error::domain("log-Lipschitz ratio is undefined for coincident points"));
    }
    let num = log_lipschitz_numerator(x, x_prime, ev, res);
    Ok(num.value / gamma(dist)?)
}

/// Supremum of [`log_lipschitz_ratio`] over random pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogLipschitzSup {
    pub sup: f64,
    pub worst_pair: ([f64; 2], [f64; 2]),
    pub pairs: usize,
}

/// Pairs with uniform first point, log-uniform separation in `[1e-4, 1/2]`
/// and uniform direction, drawn from `seed`.
pub fn sample_pairs(pairs: usize, seed: u64) -> Vec<([f64; 2], [f64; 2])> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut unit = || (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
    let (lo, hi) = (1e-4f64.ln(), 0.5f64.ln());
    (0..pairs)
        .map(|_| {
            let x = [unit() - 0.5, unit() - 0.5];
            let r = (lo + (hi - lo) * unit()).exp();
            let th = 2.0 * std::f64::consts::PI * unit();
            (x, crate::torus::wrap([x[0] + r * th.cos(), x[1] + r * th.sin()]))
        })
        .collect()
}

pub fn log_lipschitz_sup(
    ev: &KernelEvaluator,
    pairs: &[([f64; 2], [f64; 2])],
    res: &QuadratureResolution,
) -> Result<LogLipschitzSup> {
    if pairs.is_empty() {
        return Err(Error::TooFewSamples("no point pairs".into()));
    }
    let ratios: Vec<f64> = pairs
        .par_iter()
        .map(|(a, b)| log_lipschitz_ratio(*a, *b, ev, res))
        .collect::<Result<_>>()?;
    let (i, sup) = ratios
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
    Ok(LogLipschitzSup {
        sup,
        worst_pair: pairs[i],
        pairs: pairs.len(),
    })
}

/// `‖K‖_{L¹}` by graded quadrature.
pub fn kernel_l1_norm(ev: &KernelEvaluator, res: &QuadratureResolution) -> QuadratureEstimate {
    let mut est = integrate_graded(
        |z| {
            let k = ev.kernel_or_zero(z);
            k[0].hypot(k[1])
        },
        [0.0, 0.0],
        &[[0.0, 0.0]],
        res,
    );
    est.error_bound *= 0.5;
    est
}

/// `‖K^eps - K‖_{L¹}`.
///
/// Only the singular part changes under mollification, weighted by
/// `1 - M(|x|/eps)`, so the distance is `eps ∫_0^{1/2} (1 - M(s)) ds`.
/// The error bound is the gap between two Gauss rules.
pub fn kernel_l1_distance(eps: f64) -> Result<QuadratureEstimate> {
    if eps == 0.0 {
        return Ok(QuadratureEstimate {
            value: 0.0,
            error_bound: 0.0,
        });
    }
    super::Mollifier::new(eps)?;
    let fine = CompositeRule::new(0.0, 0.5, 32, 16).integrate(|s| 1.0 - bump_mass_within(s));
    let coarse = CompositeRule::new(0.0, 0.5, 16, 8).integrate(|s| 1.0 - bump_mass_within(s));
    Ok(QuadratureEstimate {
        value: eps * fine,
        error_bound: eps * (fine - coarse).abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn evaluator() -> KernelEvaluator {
        KernelEvaluator::with_table_size(256).unwrap()
    }

    #[test]
    fn graded_rule_integrates_log_singularity() {
        // ∫ over the unit square of 1/|z| = 4 ln(1 + √2)
        let est = integrate_graded(
            |z| {
                let r = z[0].hypot(z[1]);
                if r == 0.0 {
                    0.0
                } else {
                    1.0 / r
                }
            },
            [0.0, 0.0],
            &[[0.0, 0.0]],
            &QuadratureResolution::default(),
        );
        let want = 4.0 * (1.0 + 2f64.sqrt()).ln();
        assert!((est.value - want).abs() < 1e-5, "{} {}", est.value, want);
    }

    #[test]
    fn numerator_vanishes_in_the_limit() {
        let ev = evaluator();
        let num = log_lipschitz_numerator([0.1, 0.2], [0.1 + 1e-9, 0.2], &ev, &QuadratureResolution::default());
        assert!(num.value < 1e-6, "{}", num.value);
    }

    #[test]
    fn numerator_bounded_by_twice_l1_norm() {
        let ev = evaluator();
        let res = QuadratureResolution::default();
        let l1 = kernel_l1_norm(&ev, &res).value;
        for &(a, b) in &[([0.0, 0.0], [0.5, 0.5]), ([0.1, -0.3], [-0.2, 0.1]), ([0.0, 0.0], [0.01, 0.0])] {
            let n = log_lipschitz_numerator(a, b, &ev, &res);
            assert!(n.value <= 2.0 * l1 + 1e-9);
        }
        assert!(log_lipschitz_ratio([0.2, 0.2], [0.2, 0.2], &ev, &res).is_err());
    }

    #[test]
    fn sampled_sup_is_finite_and_replayable() {
        let ev = evaluator();
        let pairs = sample_pairs(24, 5);
        assert_eq!(pairs, sample_pairs(24, 5));
        assert!(pairs.iter().all(|(a, b)| {
            let d = torus_dist(*a, *b);
            (0.9e-4..=0.5 + 1e-12).contains(&d)
        }));
        let sup = log_lipschitz_sup(&ev, &pairs, &QuadratureResolution::default()).unwrap();
        assert!(sup.sup.is_finite() && sup.sup > 0.0);
        assert!(log_lipschitz_sup(&ev, &[], &QuadratureResolution::default()).is_err());
    }

    #[test]
    fn l1_distance_is_linear_and_matches_direct_quadrature() {
        let a = kernel_l1_distance(0.125).unwrap();
        let b = kernel_l1_distance(2f64.powi(-7)).unwrap();
        assert!((a.value / b.value - 16.0).abs() < 1e-12);
        assert!(a.error_bound < 1e-12);
        let ev = evaluator();
        let m = ev.mollified(0.125).unwrap();
        let direct = integrate_graded(
            |z| {
                let p = m.kernel_or_zero(z);
                let q = ev.kernel_or_zero(z);
                (p[0] - q[0]).hypot(p[1] - q[1])
            },
            [0.0, 0.0],
            &[[0.0, 0.0]],
            &QuadratureResolution {
                base_cells: 64,
                order: 8,
                min_cell: 1e-9,
            },
        );
        assert!((direct.value - a.value).abs() < 1e-4 * a.value, "{} {}", direct.value, a.value);
    }
}
