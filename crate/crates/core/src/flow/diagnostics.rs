//! Statistics of computed flows: iteration constants, occupancy, Hölder fits.

use std::f64::consts::E;

use serde::{Deserialize, Serialize};

use super::solver::{Scheme, WindowReport};
use super::state::FlowState;
use crate::analysis::{picard_bound, IterationBoundParams};
use crate::error::{Error, Result};
use crate::spectral::cell_index;
use crate::torus::torus_dist;

/// Empirical constants of the iteration inequality
/// `rho^n(t) <= A ln(1/eps) ∫_0^t rho^{n-1} + eps B t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationFit {
    pub a: f64,
    pub b: f64,
    pub rho0_sup: f64,
}

/// `rho^n(t_m) = max_{k >= n} d_k(t_m)` from per-iterate distance profiles.
pub fn rho_profiles(profiles: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = profiles.to_vec();
    for n in (0..out.len().saturating_sub(1)).rev() {
        let (head, tail) = out.split_at_mut(n + 1);
        for (a, b) in head[n].iter_mut().zip(&tail[0]) {
            *a = a.max(*b);
        }
    }
    out
}

/// Smallest `A` with `rho^n(t_m) <= A Σ_{l<m} rho^{n-1}(t_l) dt` for all `n >= 1`, `m`
/// (right-inclusive sums for the predictor-corrector scheme, whose drift sees
/// the end of each step), and `B = e A sup rho^0`, which covers `eps > 1/e`.
/// `None` when fewer than two iterates exist or a ratio is unbounded.
pub fn fit_iteration_constants(profiles: &[Vec<f64>], dt: f64, scheme: Scheme) -> Option<IterationFit> {
    if profiles.len() < 2 {
        return None;
    }
    let rho = rho_profiles(profiles);
    let rho0_sup = rho[0].iter().copied().fold(0.0, f64::max);
    let floor = 1e-13 * rho0_sup;
    let mut a = 0.0f64;
    for n in 1..rho.len() {
        let mut sum = 0.0;
        for m in 0..rho[n].len() {
            if scheme == Scheme::StratonovichHeun {
                sum += rho[n - 1][m] * dt;
            }
            if rho[n][m] > floor {
                if sum <= 0.0 {
                    return None;
                }
                a = a.max(rho[n][m] / sum);
            }
            if scheme == Scheme::EulerMaruyama {
                sum += rho[n - 1][m] * dt;
            }
        }
    }
    if a == 0.0 {
        // Converged after one map: any positive constant works.
        a = f64::MIN_POSITIVE;
    }
    Some(IterationFit {
        a,
        b: E * a * rho0_sup,
        rho0_sup,
    })
}

/// Worst ratio `rho^n(t) / picard_bound(n, t)` over `n >= 1` and the window's
/// records; at most 1 means domination holds.
pub fn bound_domination(report: &WindowReport, dt: f64) -> Result<f64> {
    let fit = report
        .fit
        .ok_or_else(|| Error::TooFewSamples("window has no fitted iteration constants".into()))?;
    let rho = rho_profiles(&report.profiles);
    let horizon = report.steps as f64 * dt;
    let mut worst = 0.0f64;
    for (n, profile) in rho.iter().enumerate().skip(1) {
        let params = IterationBoundParams {
            a: fit.a,
            b: fit.b,
            horizon,
            rho0_sup: fit.rho0_sup,
            n: n as u32,
        };
        for (m, &value) in profile.iter().enumerate() {
            if value == 0.0 {
                continue;
            }
            let bound = picard_bound(&params, (m as f64 * dt).min(horizon))?;
            worst = worst.max(if bound > 0.0 { value / bound } else { f64::INFINITY });
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurePreservation {
    pub cells: usize,
    /// `max |count / expected - 1|`.
    pub max_deviation: f64,
    /// Occupancy relative to uniform, row-major.
    pub histogram: Vec<f64>,
    /// `cells / N + M^{-1/2}`.
    pub sampling_floor: f64,
}

/// Occupancy of a coarse `cells x cells` partition by all markers of all
/// realizations at record `t`.
pub fn measure_preservation_check(psi: &FlowState, t: usize, cells: usize) -> Result<MeasurePreservation> {
    if t >= psi.records() {
        return Err(Error::IndexOutOfRange {
            index: t,
            count: psi.records(),
        });
    }
    if cells == 0 || 4 * cells > psi.n() || !psi.n().is_multiple_of(cells) {
        return Err(Error::config(
            "cells",
            format!("coarse grid {cells} must divide {} and be at most a quarter of it", psi.n()),
        ));
    }
    let mut counts = vec![0usize; cells * cells];
    for r in 0..psi.realizations() {
        for p in psi.at(t, r) {
            counts[cell_index(cells, *p)] += 1;
        }
    }
    let expected = (psi.realizations() * psi.markers()) as f64 / (cells * cells) as f64;
    let histogram: Vec<f64> = counts.iter().map(|&c| c as f64 / expected).collect();
    let max_deviation = histogram.iter().map(|h| (h - 1.0).abs()).fold(0.0, f64::max);
    Ok(MeasurePreservation {
        cells,
        max_deviation,
        histogram,
        sampling_floor: cells as f64 / psi.n() as f64 + (psi.realizations() as f64).powf(-0.5),
    })
}

/// `E|X_{t+lag}(x) - X_t(x)|^p` averaged over markers, realizations and start records.
pub fn time_increment_moment(psi: &FlowState, p: f64, lag: usize) -> Result<f64> {
    if lag >= psi.records() {
        return Err(Error::IndexOutOfRange {
            index: lag,
            count: psi.records(),
        });
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for t in 0..psi.records() - lag {
        for r in 0..psi.realizations() {
            for (a, b) in psi.at(t, r).iter().zip(psi.at(t + lag, r)) {
                sum += torus_dist(*a, *b).powf(p);
                count += 1;
            }
        }
    }
    Ok(sum / count as f64)
}

/// `E|X_t(x) - X_t(x')|^p` over marker pairs `offset` cells apart along each axis.
pub fn space_increment_moment(psi: &FlowState, p: f64, t: usize, offset: usize) -> Result<f64> {
    let n = psi.n();
    if t >= psi.records() {
        return Err(Error::IndexOutOfRange {
            index: t,
            count: psi.records(),
        });
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for r in 0..psi.realizations() {
        let x = psi.at(t, r);
        for i in 0..n {
            for j in 0..n {
                let a = x[i * n + j];
                sum += torus_dist(a, x[((i + offset) % n) * n + j]).powf(p);
                sum += torus_dist(a, x[i * n + (j + offset) % n]).powf(p);
                count += 2;
            }
        }
    }
    Ok(sum / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HolderFit {
    pub p: f64,
    /// Slope of log moment against log marker separation (at the final record).
    pub space_exponent: f64,
    /// Slope of log moment against log time lag.
    pub time_exponent: f64,
}

/// Least-squares slope of `ys` against `xs`.
pub(crate) fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    cov / var
}

/// Log-log regression of increment moments over dyadic lags and separations.
pub fn holder_regression(psi: &FlowState, p: f64) -> Result<HolderFit> {
    if !(p >= 2.0) {
        return Err(Error::domain("moment order must be at least 2"));
    }
    let lags: Vec<usize> = (0..)
        .map(|k| 1usize << k)
        .take_while(|&l| 2 * l < psi.records())
        .collect();
    let offsets: Vec<usize> = (0..).map(|k| 1usize << k).take_while(|&d| 4 * d <= psi.n()).collect();
    if lags.len() < 3 || offsets.len() < 3 {
        return Err(Error::TooFewSamples(format!(
            "{} time lags and {} separations (need 3 of each)",
            lags.len(),
            offsets.len()
        )));
    }
    let mut lx = Vec::new();
    let mut ly = Vec::new();
    for &l in &lags {
        let m = time_increment_moment(psi, p, l)?;
        if m > 0.0 {
            lx.push((l as f64 * psi.record_dt()).ln());
            ly.push(m.ln());
        }
    }
    let last = psi.records() - 1;
    let mut sx = Vec::new();
    let mut sy = Vec::new();
    for &d in &offsets {
        let m = space_increment_moment(psi, p, last, d)?;
        if m > 0.0 {
            sx.push((d as f64 / psi.n() as f64).ln());
            sy.push(m.ln());
        }
    }
    if lx.len() < 3 || sx.len() < 3 {
        return Err(Error::TooFewSamples("moments vanish at too many scales".into()));
    }
    Ok(HolderFit {
        p,
        space_exponent: slope(&sx, &sy),
        time_exponent: slope(&lx, &ly),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::solver::{solve_linear_flow, PicardConfig, SolverConfig, ZeroDrift};
    use crate::flow::DriftMode;
    use crate::noise::{BrownianDriver, NoiseBasis};

    fn noise_flow(basis: &NoiseBasis, n: usize, realizations: usize, steps: usize) -> FlowState {
        let dt = 1.0 / 256.0;
        let cfg = SolverConfig {
            dt,
            horizon: dt * steps as f64,
            scheme: Scheme::EulerMaruyama,
            picard: PicardConfig {
                window: dt * steps as f64,
                ..PicardConfig::default()
            },
            drift: DriftMode::ParticleSum,
            realizations,
            realization_start: 0,
            record_stride: 1,
        };
        let driver = BrownianDriver::new(11, basis.mode_count(), dt).unwrap();
        solve_linear_flow(&ZeroDrift, n, basis, &driver, &cfg).unwrap()
    }

    #[test]
    fn occupancy_exact_at_start_and_for_translations() {
        let flow = noise_flow(&NoiseBasis::ConstantPair { c: 0.05 }, 16, 4, 32);
        let start = measure_preservation_check(&flow, 0, 4).unwrap();
        assert_eq!(start.max_deviation, 0.0);
        let later = measure_preservation_check(&flow, 32, 4).unwrap();
        // A rigid shift moves whole columns of markers across coarse-cell edges.
        assert!(later.max_deviation <= 4.0 / 16.0 + 1e-12, "{}", later.max_deviation);
        assert!(measure_preservation_check(&flow, 0, 5).is_err());
    }

    #[test]
    fn noise_only_time_exponent_is_half_the_moment() {
        let basis = NoiseBasis::TrigShells {
            shells: vec![1],
            amplitude: 0.1,
        };
        let flow = noise_flow(&basis, 16, 8, 64);
        assert_eq!(time_increment_moment(&flow, 2.0, 0).unwrap(), 0.0);
        let fit = holder_regression(&flow, 2.0).unwrap();
        assert!((fit.time_exponent - 1.0).abs() < 0.15, "{fit:?}");
        assert!(fit.space_exponent > 2.0 - 0.5, "{fit:?}");
    }

    #[test]
    fn rho_profiles_are_tail_sups() {
        let p = vec![vec![0.0, 1.0], vec![0.0, 3.0], vec![0.0, 2.0]];
        let r = rho_profiles(&p);
        assert_eq!(r, vec![vec![0.0, 3.0], vec![0.0, 3.0], vec![0.0, 2.0]]);
    }
}
