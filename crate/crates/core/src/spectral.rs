//! Periodic grid fields and FFT-based operators on the unit torus.
//!
//! Samples sit at cell centres `-1/2 + (i + 1/2)/n`, row-major in `(i1, i2)`,
//! matching the marker labels of the flow solver.

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{Error, Result};

/// Forward and inverse 2D transforms of size `n x n`.
pub struct Fft2 {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    /// Cached plan for size `n`.
    pub fn get(n: usize) -> Arc<Fft2> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Fft2>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().expect("fft cache poisoned");
        guard
            .entry(n)
            .or_insert_with(|| {
                let mut planner = FftPlanner::new();
                Arc::new(Fft2 {
                    n,
                    forward: planner.plan_fft_forward(n),
                    inverse: planner.plan_fft_inverse(n),
                })
            })
            .clone()
    }

    fn transform(&self, data: &mut [Complex64], fft: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        for row in data.chunks_mut(n) {
            fft.process(row);
        }
        let mut column = vec![Complex64::new(0.0, 0.0); n];
        for j in 0..n {
            for i in 0..n {
                column[i] = data[i * n + j];
            }
            fft.process(&mut column);
            for i in 0..n {
                data[i * n + j] = column[i];
            }
        }
    }

    /// Unnormalized forward DFT of real samples.
    pub fn forward_real(&self, values: &[f64]) -> Vec<Complex64> {
        let mut data: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut data, &self.forward);
        data
    }

    /// Inverse DFT normalized by `n^2`, returning the real part.
    pub fn inverse_real(&self, mut data: Vec<Complex64>) -> Vec<f64> {
        self.transform(&mut data, &self.inverse);
        let scale = 1.0 / (self.n * self.n) as f64;
        data.into_iter().map(|c| c.re * scale).collect()
    }
}

/// Signed wavenumber of DFT index `j` on an `n`-point axis.
#[inline]
pub fn wavenumber(j: usize, n: usize) -> i64 {
    if j < n.div_ceil(2) {
        j as i64
    } else {
        j as i64 - n as i64
    }
}

#[inline]
fn is_nyquist(j: usize, n: usize) -> bool {
    n.is_multiple_of(2) && j == n / 2
}

/// Cell-centre coordinate of index `i`.
#[inline]
pub fn cell_centre(i: usize, n: usize) -> f64 {
    -0.5 + (i as f64 + 0.5) / n as f64
}

/// Scalar field sampled on an `n x n` cell-centred grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub n: usize,
    pub values: Vec<f64>,
}

/// Vector field sampled on an `n x n` cell-centred grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub n: usize,
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            values: vec![0.0; n * n],
        }
    }

    pub fn from_values(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {n}x{n} grid",
                values.len()
            )));
        }
        Ok(Self { n, values })
    }

    pub fn from_fn(n: usize, f: impl Fn([f64; 2]) -> f64) -> Self {
        let mut values = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                values.push(f([cell_centre(i, n), cell_centre(j, n)]));
            }
        }
        Self { n, values }
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `(∫|f|^p)^{1/p}` by the grid rule.
    pub fn lp_norm(&self, p: f64) -> f64 {
        let cell = 1.0 / self.values.len() as f64;
        (self.values.iter().map(|v| v.abs().powf(p)).sum::<f64>() * cell).powf(1.0 / p)
    }

    /// Apply a Fourier multiplier `m(k1, k2)`.
    pub fn apply_multiplier(&self, m: impl Fn(i64, i64) -> Complex64) -> ScalarField {
        let n = self.n;
        let fft = Fft2::get(n);
        let mut hat = fft.forward_real(&self.values);
        for i in 0..n {
            for j in 0..n {
                hat[i * n + j] *= m(wavenumber(i, n), wavenumber(j, n));
            }
        }
        ScalarField {
            n,
            values: fft.inverse_real(hat),
        }
    }

    /// Spectral gradient; Nyquist modes are dropped.
    pub fn gradient(&self) -> VectorField {
        let n = self.n;
        let fft = Fft2::get(n);
        let hat = fft.forward_real(&self.values);
        let mut d1 = hat.clone();
        let mut d2 = hat;
        for i in 0..n {
            for j in 0..n {
                let idx = i * n + j;
                let (k1, k2) = (wavenumber(i, n) as f64, wavenumber(j, n) as f64);
                let drop1 = is_nyquist(i, n);
                let drop2 = is_nyquist(j, n);
                d1[idx] *= if drop1 {
                    Complex64::new(0.0, 0.0)
                } else {
                    Complex64::new(0.0, 2.0 * PI * k1)
                };
                d2[idx] *= if drop2 {
                    Complex64::new(0.0, 0.0)
                } else {
                    Complex64::new(0.0, 2.0 * PI * k2)
                };
            }
        }
        VectorField {
            n,
            u1: fft.inverse_real(d1),
            u2: fft.inverse_real(d2),
        }
    }

    /// Bilinear interpolation at an arbitrary torus point.
    pub fn interpolate(&self, x: [f64; 2]) -> f64 {
        bilinear(self.n, &self.values, x)
    }
}

/// Periodic bilinear interpolation of cell-centred samples.
pub fn bilinear(n: usize, values: &[f64], x: [f64; 2]) -> f64 {
    let nf = n as f64;
    let s1 = (x[0] + 0.5) * nf - 0.5;
    let s2 = (x[1] + 0.5) * nf - 0.5;
    let f1 = s1.floor();
    let f2 = s2.floor();
    let (w1, w2) = (s1 - f1, s2 - f2);
    let i0 = (f1 as i64).rem_euclid(n as i64) as usize;
    let j0 = (f2 as i64).rem_euclid(n as i64) as usize;
    let i1 = (i0 + 1) % n;
    let j1 = (j0 + 1) % n;
    (1.0 - w1) * ((1.0 - w2) * values[i0 * n + j0] + w2 * values[i0 * n + j1])
        + w1 * ((1.0 - w2) * values[i1 * n + j0] + w2 * values[i1 * n + j1])
}

/// Cloud-in-cell deposit of point masses onto cell centres (adjoint of [`bilinear`]).
/// Returns mass per cell, not density.
pub fn deposit_cic(n: usize, points: &[[f64; 2]], masses: &[f64]) -> Vec<f64> {
    let mut grid = vec![0.0; n * n];
    let nf = n as f64;
    for (p, &m) in points.iter().zip(masses) {
        let s1 = (p[0] + 0.5) * nf - 0.5;
        let s2 = (p[1] + 0.5) * nf - 0.5;
        let f1 = s1.floor();
        let f2 = s2.floor();
        let (w1, w2) = (s1 - f1, s2 - f2);
        let i0 = (f1 as i64).rem_euclid(n as i64) as usize;
        let j0 = (f2 as i64).rem_euclid(n as i64) as usize;
        let i1 = (i0 + 1) % n;
        let j1 = (j0 + 1) % n;
        grid[i0 * n + j0] += m * (1.0 - w1) * (1.0 - w2);
        grid[i0 * n + j1] += m * (1.0 - w1) * w2;
        grid[i1 * n + j0] += m * w1 * (1.0 - w2);
        grid[i1 * n + j1] += m * w1 * w2;
    }
    grid
}

/// Index of the cell containing `x` on an `n x n` partition of the torus.
#[inline]
pub fn cell_index(n: usize, x: [f64; 2]) -> usize {
    let nf = n as f64;
    let i = (((x[0] + 0.5) * nf).floor() as i64).rem_euclid(n as i64) as usize;
    let j = (((x[1] + 0.5) * nf).floor() as i64).rem_euclid(n as i64) as usize;
    i * n + j
}

/// Nearest-grid-point deposit (mass per cell).
pub fn deposit_ngp(n: usize, points: &[[f64; 2]], masses: &[f64]) -> Vec<f64> {
    let mut grid = vec![0.0; n * n];
    for (p, &m) in points.iter().zip(masses) {
        grid[cell_index(n, *p)] += m;
    }
    grid
}

impl VectorField {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            u1: vec![0.0; n * n],
            u2: vec![0.0; n * n],
        }
    }

    pub fn from_fn(n: usize, f: impl Fn([f64; 2]) -> [f64; 2]) -> Self {
        let mut u1 = Vec::with_capacity(n * n);
        let mut u2 = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let v = f([cell_centre(i, n), cell_centre(j, n)]);
                u1.push(v[0]);
                u2.push(v[1]);
            }
        }
        Self { n, u1, u2 }
    }

    pub fn component(&self, c: usize) -> ScalarField {
        ScalarField {
            n: self.n,
            values: if c == 0 { self.u1.clone() } else { self.u2.clone() },
        }
    }

    pub fn divergence(&self) -> ScalarField {
        let g1 = self.component(0).gradient();
        let g2 = self.component(1).gradient();
        ScalarField {
            n: self.n,
            values: g1.u1.iter().zip(&g2.u2).map(|(a, b)| a + b).collect(),
        }
    }

    /// Scalar curl `∂1 u2 - ∂2 u1`.
    pub fn curl(&self) -> ScalarField {
        let g1 = self.component(0).gradient();
        let g2 = self.component(1).gradient();
        ScalarField {
            n: self.n,
            values: g2.u1.iter().zip(&g1.u2).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn mean(&self) -> [f64; 2] {
        let m = (self.n * self.n) as f64;
        [
            self.u1.iter().sum::<f64>() / m,
            self.u2.iter().sum::<f64>() / m,
        ]
    }

    pub fn interpolate(&self, x: [f64; 2]) -> [f64; 2] {
        [bilinear(self.n, &self.u1, x), bilinear(self.n, &self.u2, x)]
    }

    /// Largest absolute Fourier coefficient of the spectral divergence,
    /// normalized by the largest velocity coefficient.
    pub fn spectral_divergence(&self) -> f64 {
        let n = self.n;
        let fft = Fft2::get(n);
        let a = fft.forward_real(&self.u1);
        let b = fft.forward_real(&self.u2);
        let mut worst = 0.0f64;
        let mut scale = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                if is_nyquist(i, n) || is_nyquist(j, n) {
                    continue;
                }
                let idx = i * n + j;
                let (k1, k2) = (wavenumber(i, n) as f64, wavenumber(j, n) as f64);
                worst = worst.max((a[idx] * k1 + b[idx] * k2).norm());
                scale = scale.max(a[idx].norm().max(b[idx].norm()));
            }
        }
        if scale == 0.0 {
            0.0
        } else {
            worst / scale
        }
    }
}

/// Velocity `u = K * xi` of a vorticity field: `û(k) = -i k⊥ xî(k) / (2π|k|^2)`,
/// `û(0) = 0`. Nyquist modes are dropped so the result stays real.
pub fn velocity_from_vorticity(xi: &ScalarField) -> VectorField {
    velocity_with_multiplier(xi, |_, _| 1.0)
}

/// As [`velocity_from_vorticity`] with an extra real radial multiplier
/// (used for mollified kernels).
pub fn velocity_with_multiplier(xi: &ScalarField, m: impl Fn(i64, i64) -> f64) -> VectorField {
    let n = xi.n;
    let fft = Fft2::get(n);
    let hat = fft.forward_real(&xi.values);
    let mut h1 = vec![Complex64::new(0.0, 0.0); n * n];
    let mut h2 = vec![Complex64::new(0.0, 0.0); n * n];
    for i in 0..n {
        for j in 0..n {
            if (i == 0 && j == 0) || is_nyquist(i, n) || is_nyquist(j, n) {
                continue;
            }
            let idx = i * n + j;
            let (k1, k2) = (wavenumber(i, n), wavenumber(j, n));
            let k2sum = (k1 * k1 + k2 * k2) as f64;
            let factor = hat[idx] * (m(k1, k2) / (2.0 * PI * k2sum));
            // -i * (-k2, k1)
            h1[idx] = factor * Complex64::new(0.0, k2 as f64);
            h2[idx] = factor * Complex64::new(0.0, -(k1 as f64));
        }
    }
    VectorField {
        n,
        u1: fft.inverse_real(h1),
        u2: fft.inverse_real(h2),
    }
}
