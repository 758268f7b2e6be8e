//! Divergence-free noise fields with isotropic covariance `a ≡ C I₂` and a
//! counter-based Brownian increment driver.

use std::f64::consts::PI;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::cell_centre;

/// Finite family of noise fields `σ_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseBasis {
    /// `σ_1 = √C e_1`, `σ_2 = √C e_2`: the noise flow is a rigid random translation.
    ConstantPair { c: f64 },
    /// For every `k` with `|k|²` in `shells`: `amp cos(2πk·x) k⊥/|k|` and `amp sin(2πk·x) k⊥/|k|`.
    TrigShells { shells: Vec<u32>, amplitude: f64 },
    /// Explicit wavevector list with the same pair of fields per vector.
    TrigModes { wavevectors: Vec<[i64; 2]>, amplitude: f64 },
}

impl NoiseBasis {
    /// Wavevectors of the trig variants, in mode order.
    pub fn wavevectors(&self) -> Vec<[i64; 2]> {
        match self {
            NoiseBasis::ConstantPair { .. } => Vec::new(),
            NoiseBasis::TrigModes { wavevectors, .. } => wavevectors.clone(),
            NoiseBasis::TrigShells { shells, .. } => {
                let mut out = Vec::new();
                for &s in shells {
                    let r = (s as f64).sqrt().ceil() as i64;
                    for k1 in -r..=r {
                        for k2 in -r..=r {
                            if (k1 * k1 + k2 * k2) as u32 == s && s > 0 {
                                out.push([k1, k2]);
                            }
                        }
                    }
                }
                out
            }
        }
    }

    pub fn mode_count(&self) -> usize {
        match self {
            NoiseBasis::ConstantPair { .. } => 2,
            _ => 2 * self.wavevectors().len(),
        }
    }

    fn amplitude(&self) -> f64 {
        match self {
            NoiseBasis::ConstantPair { c } => c.sqrt(),
            NoiseBasis::TrigShells { amplitude, .. } | NoiseBasis::TrigModes { amplitude, .. } => *amplitude,
        }
    }

    /// The constant `C` in `a = C I₂` implied by the construction.
    pub fn covariance_constant(&self) -> f64 {
        match self {
            NoiseBasis::ConstantPair { c } => *c,
            _ => {
                let a = self.amplitude();
                a * a * self.wavevectors().len() as f64 / 2.0
            }
        }
    }

    /// True when every field is zero, i.e. the deterministic case.
    pub fn is_silent(&self) -> bool {
        self.amplitude() == 0.0 || self.mode_count() == 0
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            NoiseBasis::ConstantPair { c } => {
                if !(*c >= 0.0 && c.is_finite()) {
                    return Err(Error::config("noise.c", "must be finite and nonnegative"));
                }
            }
            _ => {
                let amp = self.amplitude();
                if !(amp >= 0.0 && amp.is_finite()) {
                    return Err(Error::config("noise.amplitude", "must be finite and nonnegative"));
                }
                let ks = self.wavevectors();
                if ks.is_empty() {
                    return Err(Error::config("noise.shells", "no wavevectors selected"));
                }
                if ks.iter().any(|k| k[0] == 0 && k[1] == 0) {
                    return Err(Error::config("noise.wavevectors", "zero wavevector"));
                }
                // Σ k⊥k⊥ᵀ/|k|² must be a multiple of the identity.
                let (mut m11, mut m22, mut m12) = (0.0, 0.0, 0.0);
                for k in &ks {
                    let n2 = (k[0] * k[0] + k[1] * k[1]) as f64;
                    m11 += (k[1] * k[1]) as f64 / n2;
                    m22 += (k[0] * k[0]) as f64 / n2;
                    m12 -= (k[0] * k[1]) as f64 / n2;
                }
                let scale = m11.max(m22);
                if (m11 - m22).abs() > 1e-12 * scale || m12.abs() > 1e-12 * scale {
                    return Err(Error::config(
                        "noise.wavevectors",
                        "mode set is not isotropic: a(x) would not be a multiple of the identity",
                    ));
                }
            }
        }
        Ok(())
    }

    fn check_index(&self, k: usize) -> Result<()> {
        let count = self.mode_count();
        if k >= count {
            return Err(Error::IndexOutOfRange { index: k, count });
        }
        Ok(())
    }

    /// `σ_k(x)`.
    pub fn sigma(&self, k: usize, x: [f64; 2]) -> Result<[f64; 2]> {
        self.check_index(k)?;
        Ok(self.sigma_unchecked(k, x, &self.wavevectors()))
    }

    /// `σ_k(x)` with a precomputed wavevector list.
    #[inline]
    pub fn sigma_unchecked(&self, k: usize, x: [f64; 2], ks: &[[i64; 2]]) -> [f64; 2] {
        match self {
            NoiseBasis::ConstantPair { c } => {
                let s = c.sqrt();
                if k == 0 {
                    [s, 0.0]
                } else {
                    [0.0, s]
                }
            }
            _ => {
                let kv = ks[k / 2];
                let norm = ((kv[0] * kv[0] + kv[1] * kv[1]) as f64).sqrt();
                let phase = 2.0 * PI * (kv[0] as f64 * x[0] + kv[1] as f64 * x[1]);
                let f = if k.is_multiple_of(2) { phase.cos() } else { phase.sin() };
                let a = self.amplitude() * f / norm;
                [-(kv[1] as f64) * a, kv[0] as f64 * a]
            }
        }
    }

    /// Jacobian `Dσ_k(x)` as `[[∂1σ¹, ∂2σ¹], [∂1σ², ∂2σ²]]`.
    #[inline]
    pub fn sigma_jacobian_unchecked(&self, k: usize, x: [f64; 2], ks: &[[i64; 2]]) -> [[f64; 2]; 2] {
        match self {
            NoiseBasis::ConstantPair { .. } => [[0.0; 2]; 2],
            _ => {
                let kv = ks[k / 2];
                let norm = ((kv[0] * kv[0] + kv[1] * kv[1]) as f64).sqrt();
                let phase = 2.0 * PI * (kv[0] as f64 * x[0] + kv[1] as f64 * x[1]);
                let df = if k.is_multiple_of(2) { -phase.sin() } else { phase.cos() };
                let a = self.amplitude() * df * 2.0 * PI / norm;
                let perp = [-(kv[1] as f64), kv[0] as f64];
                [
                    [perp[0] * a * kv[0] as f64, perp[0] * a * kv[1] as f64],
                    [perp[1] * a * kv[0] as f64, perp[1] * a * kv[1] as f64],
                ]
            }
        }
    }

    /// `Σ_k sup|σ_k|² + Σ_k Lip(σ_k)²` in closed form.
    pub fn l2_lipschitz_norm(&self) -> f64 {
        match self {
            NoiseBasis::ConstantPair { c } => 2.0 * c,
            _ => {
                let a = self.amplitude();
                self.wavevectors()
                    .iter()
                    .map(|k| {
                        let n2 = (k[0] * k[0] + k[1] * k[1]) as f64;
                        2.0 * (a * a + 4.0 * PI * PI * n2 * a * a)
                    })
                    .sum()
            }
        }
    }

    /// Largest Lipschitz constant over the family (for stability bounds).
    pub fn max_lipschitz(&self) -> f64 {
        match self {
            NoiseBasis::ConstantPair { .. } => 0.0,
            _ => {
                let a = self.amplitude();
                self.wavevectors()
                    .iter()
                    .map(|k| 2.0 * PI * ((k[0] * k[0] + k[1] * k[1]) as f64).sqrt() * a)
                    .fold(0.0, f64::max)
            }
        }
    }
}

/// Fitted `C` and the largest entrywise deviation of `a(x)` from `C I₂` on an `n x n` grid.
pub fn check_a_identity(basis: &NoiseBasis, n: usize) -> (f64, f64) {
    let ks = basis.wavevectors();
    let m = basis.mode_count();
    let mut fields = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let x = [cell_centre(i, n), cell_centre(j, n)];
            let mut a = [[0.0; 2]; 2];
            for k in 0..m {
                let s = basis.sigma_unchecked(k, x, &ks);
                for (r, row) in a.iter_mut().enumerate() {
                    for (c, v) in row.iter_mut().enumerate() {
                        *v += s[r] * s[c];
                    }
                }
            }
            fields.push(a);
        }
    }
    let c_est = fields.iter().map(|a| 0.5 * (a[0][0] + a[1][1])).sum::<f64>() / fields.len() as f64;
    let dev = fields.iter().fold(0.0f64, |d, a| {
        d.max((a[0][0] - c_est).abs())
            .max((a[1][1] - c_est).abs())
            .max(a[0][1].abs())
            .max(a[1][0].abs())
    });
    (c_est, dev)
}

/// Largest norm of the Itô–Stratonovich correction `Σ_k (σ_k·∇)σ_k` on an `n x n` grid.
pub fn ito_correction_max(basis: &NoiseBasis, n: usize) -> f64 {
    let ks = basis.wavevectors();
    let m = basis.mode_count();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let x = [cell_centre(i, n), cell_centre(j, n)];
            let mut acc = [0.0, 0.0];
            for k in 0..m {
                let s = basis.sigma_unchecked(k, x, &ks);
                let d = basis.sigma_jacobian_unchecked(k, x, &ks);
                acc[0] += d[0][0] * s[0] + d[0][1] * s[1];
                acc[1] += d[1][0] * s[0] + d[1][1] * s[1];
            }
            worst = worst.max(acc[0].hypot(acc[1]));
        }
    }
    worst
}

/// Gaussian increments as a pure function of `(seed, realization, step, mode)`.
///
/// One ChaCha stream per realization; the word position is fixed by the
/// fine step and mode, so any worker may draw any tuple. A coarsened driver
/// sums consecutive fine increments, giving common noise across time steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BrownianDriver {
    pub seed: u64,
    pub modes: usize,
    pub fine_dt: f64,
    pub aggregate: usize,
}

/// 32-bit words consumed per Gaussian draw (two u64 for Box–Muller).
const WORDS_PER_DRAW: u128 = 4;

impl BrownianDriver {
    pub fn new(seed: u64, modes: usize, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::config("solver.dt", "must be positive"));
        }
        Ok(Self {
            seed,
            modes,
            fine_dt: dt,
            aggregate: 1,
        })
    }

    /// Driver whose step is `factor` fine steps.
    pub fn coarsened(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::config("solver.dt", "coarsening factor must be positive"));
        }
        Ok(Self {
            aggregate: self.aggregate * factor,
            ..*self
        })
    }

    pub fn dt(&self) -> f64 {
        self.fine_dt * self.aggregate as f64
    }

    fn fine_increments(&self, realization: u64, fine_step: u64, out: &mut [f64]) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(realization);
        rng.set_word_pos(fine_step as u128 * self.modes as u128 * WORDS_PER_DRAW);
        let scale = self.fine_dt.sqrt();
        for v in out.iter_mut() {
            let u1 = ((rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
            let u2 = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
            *v += scale * (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos();
        }
    }

    /// Increments `ΔW^k` of step `step` for one realization.
    pub fn increments(&self, realization: u64, step: u64) -> Vec<f64> {
        let mut out = vec![0.0; self.modes];
        self.increments_into(realization, step, &mut out);
        out
    }

    pub fn increments_into(&self, realization: u64, step: u64, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let base = step * self.aggregate as u64;
        for i in 0..self.aggregate as u64 {
            self.fine_increments(realization, base + i, out);
        }
    }

    /// `W_t` at step boundary `step` (sum of the first `step` increments).
    pub fn path_value(&self, realization: u64, step: u64) -> Vec<f64> {
        let mut acc = vec![0.0; self.modes];
        let mut buf = vec![0.0; self.modes];
        for s in 0..step {
            self.increments_into(realization, s, &mut buf);
            acc.iter_mut().zip(&buf).for_each(|(a, b)| *a += b);
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::VectorField;

    fn shell1() -> NoiseBasis {
        NoiseBasis::TrigShells {
            shells: vec![1],
            amplitude: 0.3,
        }
    }

    #[test]
    fn constant_pair_values() {
        let b = NoiseBasis::ConstantPair { c: 0.5 };
        let s = b.sigma(0, [0.1, 0.4]).unwrap();
        assert_eq!(s, [0.5f64.sqrt(), 0.0]);
        assert!(matches!(b.sigma(2, [0.0, 0.0]), Err(Error::IndexOutOfRange { .. })));
        let (c, dev) = check_a_identity(&NoiseBasis::ConstantPair { c: 1.0 }, 16);
        assert!((c - 1.0).abs() < 1e-14 && dev < 1e-14);
    }

    #[test]
    fn trig_mode_value_at_origin() {
        let b = shell1();
        let ks = b.wavevectors();
        let idx = ks.iter().position(|k| *k == [1, 0]).unwrap();
        let s = b.sigma(2 * idx, [0.0, 0.0]).unwrap();
        assert!((s[0] - 0.0).abs() < 1e-15 && (s[1] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn shells_are_isotropic_and_divergence_free() {
        for shells in [vec![1], vec![1, 2], vec![5]] {
            let b = NoiseBasis::TrigShells {
                shells,
                amplitude: 0.2,
            };
            b.validate().unwrap();
            let (c, dev) = check_a_identity(&b, 32);
            assert!((c - b.covariance_constant()).abs() < 1e-12);
            assert!(dev < 1e-12);
            assert!(ito_correction_max(&b, 32) < 1e-12);
            let ks = b.wavevectors();
            for k in 0..b.mode_count() {
                let f = VectorField::from_fn(64, |x| b.sigma_unchecked(k, x, &ks));
                assert!(f.divergence().sup_abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unpaired_mode_is_rejected() {
        let b = NoiseBasis::TrigModes {
            wavevectors: vec![[1, 0]],
            amplitude: 0.5,
        };
        let (_, dev) = check_a_identity(&b, 32);
        assert!(dev > 0.1);
        assert!(matches!(b.validate(), Err(Error::Config { .. })));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let b = NoiseBasis::TrigShells {
            shells: vec![1, 2],
            amplitude: 0.4,
        };
        let ks = b.wavevectors();
        let x = [0.13, -0.31];
        let h = 1e-6;
        for k in 0..b.mode_count() {
            let d = b.sigma_jacobian_unchecked(k, x, &ks);
            for c in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[c] += h;
                xm[c] -= h;
                let sp = b.sigma_unchecked(k, xp, &ks);
                let sm = b.sigma_unchecked(k, xm, &ks);
                for r in 0..2 {
                    let fd = (sp[r] - sm[r]) / (2.0 * h);
                    assert!((fd - d[r][c]).abs() < 1e-7);
                }
            }
        }
    }

    #[test]
    fn lipschitz_norm_closed_form() {
        let b = shell1();
        // 4 wavevectors, 2 fields each: sup² = a², Lip² = (2π a)².
        let a: f64 = 0.3;
        let want = 8.0 * (a * a + 4.0 * PI * PI * a * a);
        assert!((b.l2_lipschitz_norm() - want).abs() < 1e-12);
        assert_eq!(NoiseBasis::ConstantPair { c: 0.7 }.l2_lipschitz_norm(), 1.4);
    }

    #[test]
    fn increments_are_replayable() {
        let d = BrownianDriver::new(42, 3, 0.01).unwrap();
        assert_eq!(d.increments(5, 17), d.increments(5, 17));
        assert_ne!(d.increments(5, 17), d.increments(6, 17));
        assert_ne!(d.increments(5, 17), d.increments(5, 18));
    }

    #[test]
    fn coarsened_increments_are_sums_of_fine_ones() {
        let d = BrownianDriver::new(1, 2, 0.001).unwrap();
        let c = d.coarsened(4).unwrap();
        let coarse = c.increments(3, 2);
        let mut sum = [0.0; 2];
        for s in 8..12 {
            let f = d.increments(3, s);
            sum[0] += f[0];
            sum[1] += f[1];
        }
        assert!((coarse[0] - sum[0]).abs() < 1e-15 && (coarse[1] - sum[1]).abs() < 1e-15);
        assert!((c.dt() - 0.004).abs() < 1e-15);
    }

    #[test]
    fn increment_statistics() {
        let dt = 0.01;
        let d = BrownianDriver::new(2024, 10, dt).unwrap();
        let mut sum = 0.0;
        let mut sq = 0.0;
        let mut count = 0usize;
        for r in 0..10u64 {
            for s in 0..10_000u64 {
                for v in d.increments(r, s) {
                    sum += v;
                    sq += v * v;
                    count += 1;
                }
            }
        }
        let mean = sum / count as f64;
        let var = sq / count as f64 - mean * mean;
        let sigma = dt.sqrt();
        assert!(mean.abs() < 4.0 * sigma / 1e3, "{mean}");
        assert!((var / dt - 1.0).abs() < 0.01, "{var}");
    }
}
