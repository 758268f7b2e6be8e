//! Radial bump mollifier `ρ(y) ∝ exp(-1/(1 - |2y|²))` on `|y| < 1/2` and the
//! periodic convolutions built from it.

use std::f64::consts::PI;
use std::sync::OnceLock;

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::special::{exp_integral_e1, CompositeRule};
use crate::spectral::{Fft2, ScalarField, VectorField};

/// `F(v) = ∫_0^v e^{-1/w} dw = v e^{-1/v} - E1(1/v)`.
fn primitive(v: f64) -> f64 {
    if v <= 0.0 {
        return 0.0;
    }
    let inv = 1.0 / v;
    if inv > 700.0 {
        return 0.0;
    }
    v * (-inv).exp() - exp_integral_e1(inv)
}

/// Normalization `Z = ∫ exp(-1/(1-|2y|²)) dy = (π/4)(e^{-1} - E1(1))`.
pub fn bump_normalization() -> f64 {
    static Z: OnceLock<f64> = OnceLock::new();
    *Z.get_or_init(|| PI / 4.0 * primitive(1.0))
}

/// Unit-width density at radius `r`.
#[inline]
pub fn bump_density(r: f64) -> f64 {
    let v = 1.0 - 4.0 * r * r;
    if v <= 0.0 {
        0.0
    } else {
        (-1.0 / v).exp() / bump_normalization()
    }
}

/// Radial derivative `ρ'(r) = -8r ρ(r)/(1 - 4r²)²`.
#[inline]
pub fn bump_radial_derivative(r: f64) -> f64 {
    let v = 1.0 - 4.0 * r * r;
    if v <= 0.0 {
        0.0
    } else {
        -8.0 * r * bump_density(r) / (v * v)
    }
}

/// Mass of the unit-width bump inside radius `s`.
pub fn bump_mass_within(s: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    if s >= 0.5 {
        return 1.0;
    }
    if s < 1e-3 {
        // ρ(r) = ρ(0)(1 - 4r² + O(r⁴)).
        let rho0 = bump_density(0.0);
        return PI * rho0 * s * s * (1.0 - 2.0 * s * s);
    }
    let full = primitive(1.0);
    (full - primitive(1.0 - 4.0 * s * s)) / full
}

/// Projection `P(y1) = ∫ ρ(y1, y2) dy2` at composite Gauss–Legendre nodes on `[0, 1/2]`.
fn projection_rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| {
        let outer = CompositeRule::new(0.0, 0.5, 64, 16);
        let proj: Vec<f64> = outer
            .nodes
            .iter()
            .map(|&y1| {
                let half = (0.25 - y1 * y1).max(0.0).sqrt();
                // Even in y2: integrate over [0, half] and double.
                let inner = CompositeRule::new(0.0, half, 8, 16);
                2.0 * inner.integrate(|y2| bump_density(y1.hypot(y2)))
            })
            .collect();
        let weights = outer
            .weights
            .iter()
            .zip(&proj)
            .map(|(w, p)| 2.0 * w * p)
            .collect();
        (outer.nodes, weights)
    })
}

/// Fourier transform `∫ρ(y) e^{-2πi ξ·y} dy` of the unit-width bump at `|ξ| = q`.
pub fn bump_fourier(q: f64) -> f64 {
    let (nodes, weights) = projection_rule();
    nodes
        .iter()
        .zip(weights)
        .map(|(y, w)| w * (2.0 * PI * q * y).cos())
        .sum()
}

/// `ρ_ε(x) = ε^{-2} ρ(x/ε)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mollifier {
    eps: f64,
}

impl Mollifier {
    pub fn new(eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::domain(format!("mollifier width must lie in (0, 1), got {eps}")));
        }
        Ok(Self { eps })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Density at a displacement `y` (not wrapped).
    pub fn density(&self, y: [f64; 2]) -> f64 {
        bump_density(y[0].hypot(y[1]) / self.eps) / (self.eps * self.eps)
    }

    /// Gradient of the density at `y`.
    pub fn density_gradient(&self, y: [f64; 2]) -> [f64; 2] {
        let r = y[0].hypot(y[1]);
        if r == 0.0 {
            return [0.0, 0.0];
        }
        let d = bump_radial_derivative(r / self.eps) / (self.eps * self.eps * self.eps);
        [d * y[0] / r, d * y[1] / r]
    }

    /// Continuous Fourier multiplier `ρ̂(ε|k|)`.
    pub fn multiplier(&self, k1: i64, k2: i64) -> f64 {
        bump_fourier(self.eps * ((k1 * k1 + k2 * k2) as f64).sqrt())
    }

    /// Multiplier table for an `n x n` grid, indexed by `|k|²` cache.
    pub fn multiplier_table(&self, n: usize) -> Vec<f64> {
        let mut cache = std::collections::HashMap::new();
        let mut out = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let (k1, k2) = (
                    crate::spectral::wavenumber(i, n),
                    crate::spectral::wavenumber(j, n),
                );
                let key = k1 * k1 + k2 * k2;
                let v = *cache
                    .entry(key)
                    .or_insert_with(|| bump_fourier(self.eps * (key as f64).sqrt()));
                out.push(v);
            }
        }
        out
    }

    /// Sampled periodic stencil on an `n x n` grid, normalized to unit sum.
    pub fn stencil(&self, n: usize) -> Result<Vec<f64>> {
        let h = 1.0 / n as f64;
        if self.eps < 2.0 * h {
            return Err(Error::Resolution(format!(
                "mollifier width {} is below two grid cells ({})",
                self.eps,
                2.0 * h
            )));
        }
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let d1 = crate::spectral::wavenumber(i, n) as f64 * h;
                let d2 = crate::spectral::wavenumber(j, n) as f64 * h;
                w[i * n + j] = self.density([d1, d2]);
            }
        }
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        Ok(w)
    }

    /// Proof constant `(∫|y|^p |∇ρ(y)|^p dy)^{1/p}` of the unit-width bump.
    pub fn lemma_constant(p: f64) -> f64 {
        let rule = CompositeRule::new(0.0, 0.5, 32, 16);
        let integral = rule.integrate(|r| 2.0 * PI * r * (r * bump_radial_derivative(r).abs()).powf(p));
        integral.powf(1.0 / p)
    }
}

/// Periodic convolution of a grid scalar with the sampled, normalized stencil.
pub fn mollify_field(w: &ScalarField, eps: f64) -> Result<ScalarField> {
    let m = Mollifier::new(eps)?;
    let stencil = m.stencil(w.n)?;
    Ok(convolve(w, &stencil))
}

pub fn mollify_vector(w: &VectorField, eps: f64) -> Result<VectorField> {
    let m = Mollifier::new(eps)?;
    let stencil = m.stencil(w.n)?;
    let a = convolve(&w.component(0), &stencil);
    let b = convolve(&w.component(1), &stencil);
    Ok(VectorField {
        n: w.n,
        u1: a.values,
        u2: b.values,
    })
}

fn convolve(w: &ScalarField, stencil: &[f64]) -> ScalarField {
    let n = w.n;
    let fft = Fft2::get(n);
    let a = fft.forward_real(&w.values);
    let b = fft.forward_real(stencil);
    let prod: Vec<Complex64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
    let mean = w.mean();
    let mut values = fft.inverse_real(prod);
    // Nonnegative unit-sum weights: clamp round-off so bounds hold exactly.
    let (lo, hi) = w
        .values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    values.iter_mut().for_each(|v| *v = v.clamp(lo, hi));
    let drift = values.iter().sum::<f64>() / values.len() as f64 - mean;
    if drift.abs() < 1e-13 * (1.0 + mean.abs()) {
        values.iter_mut().for_each(|v| *v -= drift);
    }
    ScalarField { n, values }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::CompositeRule;

    #[test]
    fn unit_mass_and_mass_profile() {
        let rule = CompositeRule::new(0.0, 0.5, 32, 16);
        let mass = rule.integrate(|r| 2.0 * PI * r * bump_density(r));
        assert!((mass - 1.0).abs() < 1e-13);
        for &s in &[0.0005, 0.01, 0.1, 0.25, 0.4, 0.49] {
            let rule = CompositeRule::new(0.0, s, 32, 16);
            let m = rule.integrate(|r| 2.0 * PI * r * bump_density(r));
            assert!((bump_mass_within(s) - m).abs() < 1e-12, "s={s}");
        }
        assert_eq!(bump_mass_within(0.5), 1.0);
    }

    #[test]
    fn fourier_transform_matches_radial_hankel() {
        // ρ̂(q) = ∫ 2πr ρ(r) J0(2πqr) dr, with J0 from its integral form.
        let j0 = |x: f64| CompositeRule::new(0.0, PI, 16, 16).integrate(|t| (x * t.sin()).cos()) / PI;
        let rule = CompositeRule::new(0.0, 0.5, 16, 16);
        for &q in &[0.0, 0.7, 3.0, 9.5] {
            let want = rule.integrate(|r| 2.0 * PI * r * bump_density(r) * j0(2.0 * PI * q * r));
            assert!((bump_fourier(q) - want).abs() < 1e-12, "q={q}");
        }
    }

    #[test]
    fn first_moment_identity() {
        // ∫ y_i ∂_j ρ = -δ_ij
        let rule = CompositeRule::new(-0.5, 0.5, 16, 12);
        let m = Mollifier::new(0.999_999).unwrap();
        let mut acc = [[0.0; 2]; 2];
        for (&a, &wa) in rule.nodes.iter().zip(&rule.weights) {
            for (&b, &wb) in rule.nodes.iter().zip(&rule.weights) {
                let g = m.density_gradient([a, b]);
                let y = [a, b];
                for i in 0..2 {
                    for j in 0..2 {
                        acc[i][j] += wa * wb * y[i] * g[j];
                    }
                }
            }
        }
        assert!((acc[0][0] + 1.0).abs() < 1e-6);
        assert!((acc[1][1] + 1.0).abs() < 1e-6);
        assert!(acc[0][1].abs() < 1e-10 && acc[1][0].abs() < 1e-10);
    }

    #[test]
    fn mollified_fields_keep_mean_and_bounds() {
        let n = 64;
        let f = ScalarField::from_fn(n, |x| if x[0] > 0.0 { 1.0 } else { -0.5 } + x[1]);
        let g = mollify_field(&f, 0.1).unwrap();
        assert!((g.mean() - f.mean()).abs() < 1e-12);
        assert!(g.sup_abs() <= f.sup_abs() + 1e-12);
        let c = ScalarField::from_fn(n, |_| 2.5);
        let cm = mollify_field(&c, 0.2).unwrap();
        assert!(cm.values.iter().all(|v| (v - 2.5).abs() < 1e-14));
        assert!(matches!(mollify_field(&f, 0.02), Err(Error::Resolution(_))));
    }

    #[test]
    fn stencil_is_even_and_normalized() {
        let m = Mollifier::new(0.25).unwrap();
        let n = 32;
        let s = m.stencil(n).unwrap();
        assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..n {
            for j in 0..n {
                let (ni, nj) = ((n - i) % n, (n - j) % n);
                assert_eq!(s[i * n + j], s[ni * n + nj]);
            }
        }
    }

    #[test]
    fn lemma_constant_is_finite_positive() {
        for &p in &[1.0, 2.0, 4.0] {
            let c = Mollifier::lemma_constant(p);
            assert!(c.is_finite() && c > 0.0);
        }
    }
}
