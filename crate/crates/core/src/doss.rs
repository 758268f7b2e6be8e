//! Reduction of the stochastic flow to a random ODE by conjugation with the
//! noise-only flow: `Φ = ψ ∘ Φ̃`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flow::{flow_distance, marker_weights, DriftPlan, FlowState, SolverConfig};
use crate::noise::{BrownianDriver, NoiseBasis};
use crate::spectral::ScalarField;
use crate::torus::{marker_labels, torus_delta, torus_dist, wrap};

type Mat2 = [[f64; 2]; 2];

const IDENTITY: Mat2 = [[1.0, 0.0], [0.0, 1.0]];

fn mat_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    [
        [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
        [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
    ]
}

pub fn det(a: &Mat2) -> f64 {
    a[0][0] * a[1][1] - a[0][1] * a[1][0]
}

fn solve(a: &Mat2, b: [f64; 2]) -> Option<[f64; 2]> {
    let d = det(a);
    if d.abs() < 1e-12 || !d.is_finite() {
        return None;
    }
    Some([
        (a[1][1] * b[0] - a[0][1] * b[1]) / d,
        (a[0][0] * b[1] - a[1][0] * b[0]) / d,
    ])
}

/// `exp(M)` for a 2x2 matrix, exact up to rounding. The trace is split off
/// so a traceless generator gives determinant one.
fn expm(m: &Mat2) -> Mat2 {
    let half_trace = 0.5 * (m[0][0] + m[1][1]);
    let a = [[m[0][0] - half_trace, m[0][1]], [m[1][0], m[1][1] - half_trace]];
    // a² = -det(a) I.
    let q = -det(&a);
    let (c, s) = if q > 0.0 {
        let r = q.sqrt();
        (r.cosh(), r.sinh() / r)
    } else if q < 0.0 {
        let r = (-q).sqrt();
        (r.cos(), r.sin() / r)
    } else {
        (1.0, 1.0)
    };
    let e = half_trace.exp();
    [
        [e * (c + s * a[0][0]), e * s * a[0][1]],
        [e * s * a[1][0], e * (c + s * a[1][1])],
    ]
}

/// Noise-only flow `dψ = Σ σ_k(ψ) ∘ dW^k` with its Jacobian, for the
/// markers and (by replaying the stored increments) any other point.
#[derive(Debug, Clone)]
pub struct NoiseFlow {
    basis: NoiseBasis,
    wavevectors: Vec<[i64; 2]>,
    seed: u64,
    dt: f64,
    steps: usize,
    /// Per realization, `steps x modes` increments.
    increments: Vec<Vec<f64>>,
    markers: FlowState,
    /// Same layout as the marker positions.
    jacobians: Vec<Mat2>,
}

impl NoiseFlow {
    pub fn markers(&self) -> &FlowState {
        &self.markers
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn basis(&self) -> &NoiseBasis {
        &self.basis
    }

    pub fn jacobian(&self, t: usize, r: usize, marker: usize) -> Mat2 {
        let m = self.markers.markers();
        self.jacobians[(t * self.markers.realizations() + r) * m + marker]
    }

    /// Largest `|det Dψ - 1|` over the markers of all records and realizations.
    pub fn max_det_deviation(&self) -> f64 {
        self.jacobians.iter().map(|j| (det(j) - 1.0).abs()).fold(0.0, f64::max)
    }

    fn modes(&self) -> usize {
        self.basis.mode_count()
    }

    /// `W_t` at step `t` for realization `r`.
    fn path(&self, t: usize, r: usize) -> Vec<f64> {
        let m = self.modes();
        let mut w = vec![0.0; m];
        for s in 0..t {
            for (k, wk) in w.iter_mut().enumerate() {
                *wk += self.increments[r][s * m + k];
            }
        }
        w
    }

    fn constant_shift(&self, t: usize, r: usize) -> Option<[f64; 2]> {
        match self.basis {
            NoiseBasis::ConstantPair { c } => {
                let w = self.path(t, r);
                Some([c.sqrt() * w[0], c.sqrt() * w[1]])
            }
            _ => None,
        }
    }

    /// One Heun step of the position with the exponential-Heun Jacobian update
    /// (`exact_tangent` switches to the derivative of the discrete step).
    fn step(&self, x: [f64; 2], jac: &Mat2, dw: &[f64], exact_tangent: bool) -> ([f64; 2], Mat2) {
        let ks = &self.wavevectors;
        let mut drift0 = [0.0, 0.0];
        let mut gen0 = [[0.0; 2]; 2];
        for (k, w) in dw.iter().enumerate() {
            let s = self.basis.sigma_unchecked(k, x, ks);
            let d = self.basis.sigma_jacobian_unchecked(k, x, ks);
            drift0[0] += s[0] * w;
            drift0[1] += s[1] * w;
            for a in 0..2 {
                for b in 0..2 {
                    gen0[a][b] += d[a][b] * w;
                }
            }
        }
        let pred = [x[0] + drift0[0], x[1] + drift0[1]];
        let mut drift1 = [0.0, 0.0];
        let mut gen1 = [[0.0; 2]; 2];
        for (k, w) in dw.iter().enumerate() {
            let s = self.basis.sigma_unchecked(k, pred, ks);
            let d = self.basis.sigma_jacobian_unchecked(k, pred, ks);
            drift1[0] += s[0] * w;
            drift1[1] += s[1] * w;
            for a in 0..2 {
                for b in 0..2 {
                    gen1[a][b] += d[a][b] * w;
                }
            }
        }
        let next = [x[0] + 0.5 * (drift0[0] + drift1[0]), x[1] + 0.5 * (drift0[1] + drift1[1])];
        let mut gen = [[0.0; 2]; 2];
        if exact_tangent {
            // I + (G0 + G1 (I + G0)) / 2.
            let chained = mat_mul(&gen1, &[[1.0 + gen0[0][0], gen0[0][1]], [gen0[1][0], 1.0 + gen0[1][1]]]);
            for a in 0..2 {
                for b in 0..2 {
                    gen[a][b] = IDENTITY[a][b] + 0.5 * (gen0[a][b] + chained[a][b]);
                }
            }
            return (next, mat_mul(&gen, jac));
        }
        for a in 0..2 {
            for b in 0..2 {
                gen[a][b] = 0.5 * (gen0[a][b] + gen1[a][b]);
            }
        }
        (next, mat_mul(&expm(&gen), jac))
    }

    /// `(ψ_t(x), Dψ_t(x))` at an arbitrary point, unwrapped relative to `x`.
    pub fn map_point(&self, t: usize, r: usize, x: [f64; 2]) -> ([f64; 2], Mat2) {
        self.replay(t, r, x, false)
    }

    fn replay(&self, t: usize, r: usize, x: [f64; 2], exact_tangent: bool) -> ([f64; 2], Mat2) {
        if let Some(shift) = self.constant_shift(t, r) {
            return ([x[0] + shift[0], x[1] + shift[1]], IDENTITY);
        }
        let m = self.modes();
        let mut p = x;
        let mut j = IDENTITY;
        for s in 0..t {
            let (np, nj) = self.step(p, &j, &self.increments[r][s * m..(s + 1) * m], exact_tangent);
            p = np;
            j = nj;
        }
        (p, j)
    }

    /// Map a batch of points through `ψ_t` (wrapped) with Jacobians.
    fn map_points(&self, t: usize, r: usize, xs: &[[f64; 2]]) -> (Vec<[f64; 2]>, Vec<Mat2>) {
        if let Some(shift) = self.constant_shift(t, r) {
            return (
                xs.iter().map(|x| wrap([x[0] + shift[0], x[1] + shift[1]])).collect(),
                vec![IDENTITY; xs.len()],
            );
        }
        xs.iter()
            .map(|x| {
                let (p, j) = self.map_point(t, r, *x);
                (wrap(p), j)
            })
            .unzip()
    }
}

/// Integrate the noise-only flow for the markers of an `n x n` grid.
pub fn noise_only_flow(basis: &NoiseBasis, driver: &BrownianDriver, cfg: &SolverConfig, n: usize) -> Result<NoiseFlow> {
    cfg.validate()?;
    basis.validate()?;
    if driver.modes != basis.mode_count() || (driver.dt() - cfg.dt).abs() > 1e-12 * cfg.dt {
        return Err(Error::config("noise", "driver does not match the basis or the solver step"));
    }
    let steps = cfg.steps();
    let modes = basis.mode_count();
    let increments: Vec<Vec<f64>> = (0..cfg.realizations)
        .map(|r| {
            let mut out = vec![0.0; steps * modes];
            for s in 0..steps {
                driver.increments_into(cfg.realization_start + r as u64, s as u64, &mut out[s * modes..(s + 1) * modes]);
            }
            out
        })
        .collect();
    let mut nf = NoiseFlow {
        basis: basis.clone(),
        wavevectors: basis.wavevectors(),
        seed: driver.seed,
        dt: cfg.dt,
        steps,
        increments,
        markers: FlowState::identity(n, cfg.realizations, cfg.realization_start, cfg.dt, steps, driver.seed),
        jacobians: Vec::new(),
    };
    let labels = marker_labels(n);
    let paths: Vec<Vec<(Vec<[f64; 2]>, Vec<Mat2>)>> = (0..cfg.realizations)
        .into_par_iter()
        .map(|r| {
            let mut x = labels.clone();
            let mut j = vec![IDENTITY; labels.len()];
            let mut out = vec![(x.clone(), j.clone())];
            for s in 0..steps {
                let shift = nf.constant_shift(s + 1, r);
                for i in 0..x.len() {
                    if let Some(sh) = shift {
                        x[i] = wrap([labels[i][0] + sh[0], labels[i][1] + sh[1]]);
                    } else {
                        let (p, m) = nf.step(x[i], &j[i], &nf.increments[r][s * modes..(s + 1) * modes], false);
                        x[i] = p;
                        j[i] = m;
                    }
                }
                if let Some(marker) = x.iter().position(|p| !(p[0].is_finite() && p[1].is_finite())) {
                    return Err(Error::BlowUp {
                        step: s + 1,
                        realization: cfg.realization_start + r as u64,
                        marker,
                    });
                }
                out.push((x.iter().map(|p| wrap(*p)).collect(), j.clone()));
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut positions = Vec::new();
    let mut jacobians = Vec::new();
    for t in 0..=steps {
        for path in &paths {
            positions.extend_from_slice(&path[t].0);
            jacobians.extend_from_slice(&path[t].1);
        }
    }
    nf.markers = FlowState::from_parts(n, cfg.realizations, cfg.realization_start, cfg.dt, driver.seed, positions)?;
    nf.jacobians = jacobians;
    Ok(nf)
}

/// Residual tolerance of the inverse-flow Newton solve.
pub const INVERSION_TOLERANCE: f64 = 1e-10;

/// `ψ_t^{-1}(y)` by Newton iteration seeded from the marker whose image is nearest.
pub fn inverse_flow_eval(nf: &NoiseFlow, t: usize, r: usize, y: [f64; 2]) -> Result<[f64; 2]> {
    if t > nf.steps {
        return Err(Error::IndexOutOfRange {
            index: t,
            count: nf.steps + 1,
        });
    }
    if let Some(shift) = nf.constant_shift(t, r) {
        return Ok(wrap([y[0] - shift[0], y[1] - shift[1]]));
    }
    let images = nf.markers.at(t, r);
    let (seed_marker, _) = images
        .iter()
        .enumerate()
        .map(|(i, p)| (i, torus_dist(*p, y)))
        .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
    let residual_at = |x: [f64; 2]| {
        let (p, j) = nf.replay(t, r, x, true);
        let err = torus_delta(y, wrap(p));
        (err, err[0].hypot(err[1]), j)
    };
    let mut x = nf.markers.labels()[seed_marker];
    let (mut err, mut residual, mut jac) = residual_at(x);
    for _ in 0..60 {
        if residual < INVERSION_TOLERANCE {
            return Ok(wrap(x));
        }
        let step = solve(&jac, err).ok_or(Error::Inversion { residual })?;
        // Backtrack until the residual drops.
        let mut scale = 1.0;
        loop {
            let trial = [x[0] + scale * step[0], x[1] + scale * step[1]];
            let (e, res, j) = residual_at(trial);
            if res < residual || scale < 1e-6 {
                x = trial;
                err = e;
                residual = res;
                jac = j;
                break;
            }
            scale *= 0.5;
        }
    }
    if residual < INVERSION_TOLERANCE {
        return Ok(wrap(x));
    }
    Err(Error::Inversion { residual })
}

/// `ũ(t, Φ̃_i) = (Dψ_t(Φ̃_i))^{-1} Σ_j K(ψ_t(Φ̃_i) - ψ_t(Φ̃_j)) w_j` for every marker.
pub fn transformed_drift(
    nf: &NoiseFlow,
    tilde: &[[f64; 2]],
    weights: &[f64],
    plan: &DriftPlan,
    t: usize,
    r: usize,
) -> Result<Vec<[f64; 2]>> {
    let (images, jacobians) = nf.map_points(t, r, tilde);
    let mut u = vec![[0.0, 0.0]; tilde.len()];
    plan.evaluate(&images, weights, &images, true, &mut u);
    u.iter()
        .zip(&jacobians)
        .map(|(ui, j)| {
            solve(j, *ui).ok_or_else(|| Error::domain(format!("singular noise-flow Jacobian (det {:e})", det(j))))
        })
        .collect()
}

/// Random ODE `dΦ̃/dt = ũ(t, Φ̃)` by the explicit trapezoid (RK2) rule; no
/// stochastic increments enter.
pub fn random_ode_solve(nf: &NoiseFlow, xi0: &ScalarField, plan: &DriftPlan) -> Result<FlowState> {
    let n = nf.markers.n();
    if xi0.n != n {
        return Err(Error::ShapeMismatch("initial vorticity and noise-flow grids differ".into()));
    }
    let weights = marker_weights(xi0);
    let realizations = nf.markers.realizations();
    let dt = nf.dt;
    let labels = marker_labels(n);
    let zero = weights.iter().all(|w| *w == 0.0);
    let paths: Vec<Vec<Vec<[f64; 2]>>> = (0..realizations)
        .into_par_iter()
        .map(|r| {
            let mut z = labels.clone();
            let mut out = vec![z.clone()];
            for s in 0..nf.steps {
                if !zero {
                    let k1 = transformed_drift(nf, &z, &weights, plan, s, r)?;
                    let mid: Vec<[f64; 2]> =
                        z.iter().zip(&k1).map(|(p, k)| wrap([p[0] + dt * k[0], p[1] + dt * k[1]])).collect();
                    let k2 = transformed_drift(nf, &mid, &weights, plan, s + 1, r)?;
                    for ((p, a), b) in z.iter_mut().zip(&k1).zip(&k2) {
                        *p = wrap([p[0] + 0.5 * dt * (a[0] + b[0]), p[1] + 0.5 * dt * (a[1] + b[1])]);
                    }
                    if let Some(marker) = z.iter().position(|p| !(p[0].is_finite() && p[1].is_finite())) {
                        return Err(Error::BlowUp {
                            step: s + 1,
                            realization: nf.markers.realization_start() + r as u64,
                            marker,
                        });
                    }
                }
                out.push(z.clone());
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut positions = Vec::new();
    for t in 0..=nf.steps {
        for path in &paths {
            positions.extend_from_slice(&path[t]);
        }
    }
    FlowState::from_parts(n, realizations, nf.markers.realization_start(), dt, nf.seed, positions)
}

/// `ψ_t(Φ̃_t(x))` for every record.
pub fn compose(nf: &NoiseFlow, tilde: &FlowState) -> Result<FlowState> {
    if tilde.records() != nf.steps + 1 || tilde.realizations() != nf.markers.realizations() {
        return Err(Error::ShapeMismatch("transformed flow does not match the noise flow".into()));
    }
    let per: Vec<Vec<[f64; 2]>> = (0..tilde.records() * tilde.realizations())
        .into_par_iter()
        .map(|idx| {
            let (t, r) = (idx / tilde.realizations(), idx % tilde.realizations());
            nf.map_points(t, r, tilde.at(t, r)).0
        })
        .collect();
    let positions = per.into_iter().flatten().collect();
    FlowState::from_parts(
        tilde.n(),
        tilde.realizations(),
        tilde.realization_start(),
        tilde.record_dt(),
        tilde.seed(),
        positions,
    )
}

/// `flow_distance(ψ ∘ Φ̃, Φ)`.
pub fn equivalence_check(nf: &NoiseFlow, tilde: &FlowState, direct: &FlowState) -> Result<f64> {
    if nf.seed != tilde.seed() || nf.seed != direct.seed() {
        return Err(Error::SeedMismatch(format!(
            "noise flow {}, transformed flow {}, direct flow {}",
            nf.seed,
            tilde.seed(),
            direct.seed()
        )));
    }
    flow_distance(&compose(nf, tilde)?, direct)
}
