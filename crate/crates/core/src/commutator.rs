//! The mollification commutator `[v·∇, ρ_ε*] w` and its `L^p` decay.

use std::f64::consts::PI;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::mollifier::{bump_radial_derivative, Mollifier};
use crate::special::CompositeRule;
use crate::spectral::{velocity_from_vorticity, ScalarField, VectorField};

/// Divergence-free velocity, bounded scalar, mollifier width and norm order.
#[derive(Debug, Clone)]
pub struct CommutatorInput {
    pub v: VectorField,
    pub w: ScalarField,
    pub eps: f64,
    pub p: f64,
}

/// Minimum number of grid cells across the mollifier support.
pub const CELLS_ACROSS_SUPPORT: f64 = 4.0;

impl CommutatorInput {
    pub fn validate(&self) -> Result<()> {
        if self.v.n != self.w.n {
            return Err(Error::ShapeMismatch("velocity and scalar grids differ".into()));
        }
        let div = self.v.spectral_divergence();
        if div >= 1e-10 {
            return Err(Error::domain(format!("velocity is not divergence-free ({div:e})")));
        }
        if !(self.p >= 1.0 && self.p.is_finite()) {
            return Err(Error::domain("norm order must lie in [1, inf)"));
        }
        Mollifier::new(self.eps)?;
        check_resolution(self.eps, self.w.n)
    }
}

fn check_resolution(eps: f64, n: usize) -> Result<()> {
    // The support of ρ_ε is a disc of diameter ε.
    if eps * (n as f64) < CELLS_ACROSS_SUPPORT {
        return Err(Error::Resolution(format!(
            "eps = {eps} spans {:.2} cells of a {n} grid (need {CELLS_ACROSS_SUPPORT})",
            eps * n as f64
        )));
    }
    Ok(())
}

fn mollify(f: &[f64], n: usize, table: &[f64]) -> ScalarField {
    let field = ScalarField {
        n,
        values: f.to_vec(),
    };
    field.apply_multiplier(|k1, k2| {
        let i = k1.rem_euclid(n as i64) as usize;
        let j = k2.rem_euclid(n as i64) as usize;
        Complex64::new(table[i * n + j], 0.0)
    })
}

/// `v·∇(ρ_ε * w) - ρ_ε * div(v w)` by spectral differentiation and the
/// continuous Fourier multiplier of `ρ_ε`.
pub fn commutator_apply(input: &CommutatorInput) -> Result<ScalarField> {
    input.validate()?;
    let table = Mollifier::new(input.eps)?.multiplier_table(input.w.n);
    Ok(commutator_with_table(input, &table))
}

fn commutator_with_table(input: &CommutatorInput, table: &[f64]) -> ScalarField {
    let n = input.w.n;
    let smooth = mollify(&input.w.values, n, table);
    let grad = smooth.gradient();
    let transport: Vec<f64> = (0..n * n)
        .map(|i| input.v.u1[i] * grad.u1[i] + input.v.u2[i] * grad.u2[i])
        .collect();
    let flux = VectorField {
        n,
        u1: input.v.u1.iter().zip(&input.w.values).map(|(a, b)| a * b).collect(),
        u2: input.v.u2.iter().zip(&input.w.values).map(|(a, b)| a * b).collect(),
    };
    let smoothed_div = mollify(&flux.divergence().values, n, table);
    ScalarField {
        n,
        values: transport.iter().zip(&smoothed_div.values).map(|(a, b)| a - b).collect(),
    }
}

/// Kernel form `∫ (v(x) - v(x - z))·∇ρ_ε(z) w(x - z) dz` by polar quadrature
/// over the support (`radial_panels` Gauss panels of order 16, trapezoid in angle).
pub fn commutator_quadrature(
    v: impl Fn([f64; 2]) -> [f64; 2],
    w: impl Fn([f64; 2]) -> f64,
    eps: f64,
    x: [f64; 2],
    radial_panels: usize,
    angles: usize,
) -> Result<f64> {
    Mollifier::new(eps)?;
    let rule = CompositeRule::new(0.0, 0.5, radial_panels, 16);
    let vx = v(x);
    let mut total = 0.0;
    for (&r, &wr) in rule.nodes.iter().zip(&rule.weights) {
        // ∇ρ_ε(εy) = ε^{-3} ρ'(|y|) y/|y|; dz = ε² dy.
        let radial = bump_radial_derivative(r) / eps;
        let mut ring = 0.0;
        for a in 0..angles {
            let th = 2.0 * PI * a as f64 / angles as f64;
            let (s, c) = th.sin_cos();
            let z = [eps * r * c, eps * r * s];
            let shifted = [x[0] - z[0], x[1] - z[1]];
            let vs = v(shifted);
            ring += ((vx[0] - vs[0]) * c + (vx[1] - vs[1]) * s) * w(shifted);
        }
        total += wr * r * radial * ring * 2.0 * PI / angles as f64;
    }
    Ok(total)
}

/// `(∫ |Dv|^p)^{1/p}` with the Frobenius norm of the spectral Jacobian.
pub fn gradient_lp_norm(v: &VectorField, p: f64) -> f64 {
    let g1 = v.component(0).gradient();
    let g2 = v.component(1).gradient();
    let frob: Vec<f64> = (0..v.n * v.n)
        .map(|i| (g1.u1[i].powi(2) + g1.u2[i].powi(2) + g2.u1[i].powi(2) + g2.u2[i].powi(2)).sqrt())
        .collect();
    ScalarField { n: v.n, values: frob }.lp_norm(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommutatorRow {
    pub eps: f64,
    pub norm: f64,
    /// `C_p ‖Dv‖_p ‖w‖_∞` with `C_p = (∫|y|^p |∇ρ(y)|^p dy)^{1/p}`.
    pub bound: f64,
}

/// Commutator norms over a list of widths.
pub fn commutator_lp_decay(v: &VectorField, w: &ScalarField, eps_list: &[f64], p: f64) -> Result<Vec<CommutatorRow>> {
    for &eps in eps_list {
        CommutatorInput {
            v: v.clone(),
            w: w.clone(),
            eps,
            p,
        }
        .validate()?;
    }
    let bound = Mollifier::lemma_constant(p) * gradient_lp_norm(v, p) * w.sup_abs();
    eps_list
        .par_iter()
        .map(|&eps| {
            let input = CommutatorInput {
                v: v.clone(),
                w: w.clone(),
                eps,
                p,
            };
            let table = Mollifier::new(eps)?.multiplier_table(w.n);
            let c = commutator_with_table(&input, &table);
            Ok(CommutatorRow {
                eps,
                norm: c.lp_norm(p),
                bound,
            })
        })
        .collect()
}

/// `‖D(K * w)‖_{L^p}` computed spectrally.
pub fn biot_savart_gradient_lp(w: &ScalarField, p: f64) -> Result<f64> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::domain("norm order must lie in [1, inf)"));
    }
    Ok(gradient_lp_norm(&velocity_from_vorticity(w), p))
}

/// `∫ y_i ∂_j ρ(y) dy` for the unit-width bump (equals `-δ_ij` by parts).
pub fn mollifier_moment_matrix() -> [[f64; 2]; 2] {
    // Radial symmetry: ∫ y_i y_j/|y| ρ'(|y|) dy = δ_ij π ∫ r² ρ'(r) dr.
    let rule = CompositeRule::new(0.0, 0.5, 32, 16);
    let diag = PI * rule.integrate(|r| r * r * bump_radial_derivative(r));
    [[diag, 0.0], [0.0, diag]]
}
