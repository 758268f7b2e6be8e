//! Periodic Green function of the Laplacian (`ΔG = δ - 1`, zero mean) and its
//! rotated gradient, by Fourier series and by the heat-kernel split.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::exp_integral_e1;
use crate::torus::wrap;

const FOUR_PI_SQ: f64 = 4.0 * PI * PI;

/// Truncation parameters of the split evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GreenSplitConfig {
    /// Largest `|k|_inf` kept in the smooth Fourier tail.
    pub fourier_cutoff: u32,
    /// Largest `|l|_inf` kept in the Gaussian image sum.
    pub image_cutoff: u32,
    /// Required bound on the neglected terms.
    pub tail_tolerance: f64,
}

impl Default for GreenSplitConfig {
    fn default() -> Self {
        Self {
            fourier_cutoff: 2,
            image_cutoff: 13,
            tail_tolerance: 1e-14,
        }
    }
}

impl GreenSplitConfig {
    /// Upper bound on the neglected terms (value and gradient) for points in the fundamental cell.
    pub fn tail_bound(&self) -> f64 {
        let mut fourier = 0.0;
        for m in (self.fourier_cutoff as usize + 1)..(self.fourier_cutoff as usize + 40) {
            let m = m as f64;
            // 8m lattice points on the shell, |k| >= m; gradient adds a factor 2π|k|.
            fourier += 8.0 * m * (-FOUR_PI_SQ * m * m).exp() / (FOUR_PI_SQ * m * m) * (1.0 + 2.0 * PI * m * 1.5);
        }
        let mut images = 0.0;
        for m in (self.image_cutoff as usize + 1)..(self.image_cutoff as usize + 40) {
            let r = m as f64 - 0.5;
            let s = r * r / 4.0;
            // E1(s) <= e^{-s}/s; the gradient term is e^{-s}/(2π r).
            images += 8.0 * m as f64 * (-s).exp() * (1.0 / (4.0 * PI * s) + 1.0 / (2.0 * PI * r));
        }
        fourier + images
    }

    pub fn validate(&self) -> Result<()> {
        if self.fourier_cutoff < 1 {
            return Err(Error::config("kernel.fourier_cutoff", "must be at least 1"));
        }
        if self.image_cutoff < 1 {
            return Err(Error::config("kernel.image_cutoff", "must be at least 1"));
        }
        if !(self.tail_tolerance > 0.0) {
            return Err(Error::config("kernel.tail_tolerance", "must be positive"));
        }
        let bound = self.tail_bound();
        if bound > self.tail_tolerance {
            return Err(Error::config(
                "kernel.image_cutoff",
                format!("truncation bound {bound:e} exceeds tail_tolerance {:e}", self.tail_tolerance),
            ));
        }
        Ok(())
    }
}

/// Square-truncated Fourier sum `-(1/4π²) Σ_{0<|k|_inf<=kmax} cos(2πk·x)/|k|²`.
pub fn green_fourier_square(x: [f64; 2], kmax: u32) -> f64 {
    let km = kmax as i64;
    let mut sum = 0.0;
    for k1 in -km..=km {
        for k2 in -km..=km {
            if k1 == 0 && k2 == 0 {
                continue;
            }
            let phase = 2.0 * PI * (k1 as f64 * x[0] + k2 as f64 * x[1]);
            sum += phase.cos() / (k1 * k1 + k2 * k2) as f64;
        }
    }
    -sum / FOUR_PI_SQ
}

/// Row sums over the inner lattice index, in closed form.
///
/// For `m != 0`: `Σ_j e^{2πi j u}/(m²+j²) = (π/|m|) cosh(π|m|(1-2u))/sinh(π|m|)`
/// and its `u`-derivative; for `m = 0` the Bernoulli polynomial `2π²(u²-u+1/6)`.
fn row_sum(m: i64, u: f64) -> (f64, f64) {
    if m == 0 {
        return (2.0 * PI * PI * (u * u - u + 1.0 / 6.0), 2.0 * PI * PI * (2.0 * u - 1.0));
    }
    let b = PI * m.unsigned_abs() as f64;
    let a = b * (1.0 - 2.0 * u);
    let denom = -(-2.0 * b).exp_m1();
    let ch = ((a - b).exp() + (-a - b).exp()) / denom;
    let sh = ((a - b).exp() - (-a - b).exp()) / denom;
    (PI / (m.unsigned_abs() as f64) * ch, -2.0 * PI * PI * sh)
}

/// Fourier evaluation of `(G, ∇G)` with the inner lattice direction summed
/// exactly and the outer index truncated at `kmax`.
///
/// The exact direction is the coordinate of larger magnitude, which makes the
/// outer sum converge like `e^{-2π k max|x_i|}`.
pub fn green_fourier_with_gradient(x: [f64; 2], kmax: u32) -> (f64, [f64; 2]) {
    let x = wrap(x);
    let swap = x[0].abs() > x[1].abs();
    let (outer, inner) = if swap { (x[1], x[0]) } else { (x[0], x[1]) };
    let u = inner - inner.floor();
    let (s0, ds0) = row_sum(0, u);
    let (mut g, mut d_outer, mut d_inner) = (s0, 0.0, ds0);
    for m in 1..=kmax as i64 {
        let (s, ds) = row_sum(m, u);
        let phase = 2.0 * PI * m as f64 * outer;
        let (sn, cs) = phase.sin_cos();
        g += 2.0 * cs * s;
        d_outer -= 2.0 * 2.0 * PI * m as f64 * sn * s;
        d_inner += 2.0 * cs * ds;
    }
    let scale = -1.0 / FOUR_PI_SQ;
    let grad = if swap {
        [d_inner * scale, d_outer * scale]
    } else {
        [d_outer * scale, d_inner * scale]
    };
    (g * scale, grad)
}

pub fn green_fourier(x: [f64; 2], kmax: u32) -> f64 {
    green_fourier_with_gradient(x, kmax).0
}

/// `K = ∇⊥G = (-∂2 G, ∂1 G)` from the Fourier representation.
pub fn biot_savart_fourier(x: [f64; 2], kmax: u32) -> [f64; 2] {
    let (_, g) = green_fourier_with_gradient(x, kmax);
    [-g[1], g[0]]
}

/// Smooth Fourier tail `Σ_{k≠0} e^{-4π²|k|²}/(4π²|k|²) e^{2πik·x}` and its gradient.
fn fourier_tail(x: [f64; 2], cutoff: u32) -> (f64, [f64; 2]) {
    let km = cutoff as i64;
    let (mut v, mut g1, mut g2) = (0.0, 0.0, 0.0);
    for k1 in -km..=km {
        for k2 in -km..=km {
            if k1 == 0 && k2 == 0 {
                continue;
            }
            let k_sq = (k1 * k1 + k2 * k2) as f64;
            let c = (-FOUR_PI_SQ * k_sq).exp() / (FOUR_PI_SQ * k_sq);
            let phase = 2.0 * PI * (k1 as f64 * x[0] + k2 as f64 * x[1]);
            let (sn, cs) = phase.sin_cos();
            v += c * cs;
            g1 -= c * 2.0 * PI * k1 as f64 * sn;
            g2 -= c * 2.0 * PI * k2 as f64 * sn;
        }
    }
    (v, [g1, g2])
}

/// Image sum `-1 + Σ_{l≠0} E1(|x-l|²/4)/(4π)` (value only).
fn image_sum_value(x: [f64; 2], cutoff: u32) -> f64 {
    let lm = cutoff as i64;
    let mut v = -1.0;
    for l1 in -lm..=lm {
        for l2 in -lm..=lm {
            if l1 == 0 && l2 == 0 {
                continue;
            }
            let z = [x[0] - l1 as f64, x[1] - l2 as f64];
            let s = 0.25 * (z[0] * z[0] + z[1] * z[1]);
            if s > 700.0 {
                continue;
            }
            v += exp_integral_e1(s) / (4.0 * PI);
        }
    }
    v
}

/// Gradient of the image sum: `-(1/2π) Σ_{l≠0} e^{-|z|²/4} z/|z|²`, `z = x - l`.
fn image_sum_gradient(x: [f64; 2], cutoff: u32) -> [f64; 2] {
    let lm = cutoff as i64;
    let (mut g1, mut g2) = (0.0, 0.0);
    for l1 in -lm..=lm {
        for l2 in -lm..=lm {
            if l1 == 0 && l2 == 0 {
                continue;
            }
            let z = [x[0] - l1 as f64, x[1] - l2 as f64];
            let r2 = z[0] * z[0] + z[1] * z[1];
            if r2 > 160.0 {
                continue;
            }
            let w = (-0.25 * r2).exp() / r2;
            g1 += w * z[0];
            g2 += w * z[1];
        }
    }
    [-g1 / (2.0 * PI), -g2 / (2.0 * PI)]
}

/// Split evaluation `G = -G1 - G3 - G4` of the periodic Green function.
pub fn green_split(x: [f64; 2], cfg: &GreenSplitConfig) -> Result<f64> {
    let x = wrap(x);
    let r2 = x[0] * x[0] + x[1] * x[1];
    if r2 == 0.0 {
        return Err(Error::Singularity);
    }
    let g1 = fourier_tail(x, cfg.fourier_cutoff).0;
    let g3 = image_sum_value(x, cfg.image_cutoff);
    let g4 = exp_integral_e1(0.25 * r2) / (4.0 * PI);
    Ok(-g1 - g3 - g4)
}

/// Smooth part `K(x) - (1/2π) x⊥/|x|²` of the kernel, valid on a neighbourhood
/// of the closed fundamental cell (the argument is not wrapped).
pub fn kernel_remainder(x: [f64; 2], cfg: &GreenSplitConfig) -> [f64; 2] {
    let (_, dg1) = fourier_tail(x, cfg.fourier_cutoff);
    let dg3 = image_sum_gradient(x, cfg.image_cutoff);
    let r2 = x[0] * x[0] + x[1] * x[1];
    // -∇G4 minus the free-space singular gradient: (1/2π) x (e^{-r²/4} - 1)/r².
    let near = if r2 == 0.0 {
        -0.25
    } else {
        (-0.25 * r2).exp_m1() / r2
    };
    let grad = [
        -dg1[0] - dg3[0] + near * x[0] / (2.0 * PI),
        -dg1[1] - dg3[1] + near * x[1] / (2.0 * PI),
    ];
    [-grad[1], grad[0]]
}

/// Free-space singular part `(1/2π) x⊥/|x|²`.
#[inline]
pub fn singular_part(x: [f64; 2]) -> [f64; 2] {
    let r2 = x[0] * x[0] + x[1] * x[1];
    let c = 1.0 / (2.0 * PI * r2);
    [-x[1] * c, x[0] * c]
}

/// Exact split evaluation of `K = ∇⊥G`.
pub fn biot_savart_split(x: [f64; 2], cfg: &GreenSplitConfig) -> Result<[f64; 2]> {
    let x = wrap(x);
    if x[0] == 0.0 && x[1] == 0.0 {
        return Err(Error::Singularity);
    }
    let r = kernel_remainder(x, cfg);
    let s = singular_part(x);
    Ok([r[0] + s[0], r[1] + s[1]])
}
