//! Scalar analytic machinery: the log-Lipschitz modulus `gamma`, the comparison
//! solutions used by the Gronwall/Osgood arguments, and the iteration bound
//! that drives the Picard scheme together with a numerical recursion oracle.

use crate::error::{Error, Result};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::f64::consts::{E, PI};

/// `gamma(r) = r (1 - ln r)` on `(0, 1)`, `r` on `[1, inf)`, and `0` at the origin.
pub fn gamma(r: f64) -> Result<f64> {
    if !(r >= 0.0) {
        return Err(Error::domain(format!("gamma requires r >= 0, got {r}")));
    }
    Ok(gamma_unchecked(r))
}

#[inline]
pub(crate) fn gamma_unchecked(r: f64) -> f64 {
    if r <= 0.0 {
        0.0
    } else if r < 1.0 {
        r * (1.0 - r.ln())
    } else {
        r
    }
}

/// Outcome of testing `gamma(r) <= L_eps r + eps` with `L_eps = -ln eps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearBoundCheck {
    pub holds: bool,
    pub slack: f64,
}

/// Slack `L_eps r + eps - gamma(r)`, with no domain checks on `eps`.
pub fn gamma_linear_slack(r: f64, eps: f64) -> f64 {
    -eps.ln() * r + eps - gamma_unchecked(r)
}

pub fn gamma_linear_bound_check(r: f64, eps: f64) -> Result<LinearBoundCheck> {
    if !(eps > 0.0 && eps < (-1.0f64).exp()) {
        return Err(Error::domain(format!("eps must lie in (0, 1/e), got {eps}")));
    }
    if !(r >= 0.0) {
        return Err(Error::domain(format!("r must be nonnegative, got {r}")));
    }
    let slack = gamma_linear_slack(r, eps);
    Ok(LinearBoundCheck {
        holds: slack >= -1e-15 * (1.0 + r),
        slack,
    })
}

fn check_comparison_args(t: f64, x0: f64, c: f64) -> Result<()> {
    if !(t >= 0.0) {
        return Err(Error::domain(format!("time must be nonnegative, got {t}")));
    }
    if !(x0 >= 0.0) {
        return Err(Error::domain(format!("initial value must be nonnegative, got {x0}")));
    }
    if !(c >= 0.0) {
        return Err(Error::domain(format!("rate must be nonnegative, got {c}")));
    }
    Ok(())
}

/// Time at which `z(., z0)` reaches 1 (zero if it starts at or above 1).
pub fn comparison_z_crossing(z0: f64, c: f64) -> f64 {
    if z0 >= 1.0 {
        0.0
    } else if z0 <= 0.0 || c == 0.0 {
        f64::INFINITY
    } else {
        (1.0 - z0.ln()).ln() / c
    }
}

/// Solution of `z_t = z0 + ∫_0^t C gamma(z_s) ds`.
///
/// Below the crossing time the logarithm `w = ln z` solves `w' = C (1 - w)`,
/// giving `z = z0^{e^{-Ct}} e^{1 - e^{-Ct}}`; afterwards growth is exponential.
pub fn comparison_z(t: f64, z0: f64, c: f64) -> Result<f64> {
    check_comparison_args(t, z0, c)?;
    if z0 == 0.0 || c == 0.0 {
        return Ok(z0);
    }
    if z0 >= 1.0 {
        return Ok(z0 * (c * t).exp());
    }
    let t0 = comparison_z_crossing(z0, c);
    if t < t0 {
        let decay = (-c * t).exp();
        Ok((decay * z0.ln() + 1.0 - decay).exp())
    } else {
        Ok((c * (t - t0)).exp())
    }
}

/// Solution of `v_t = v0 + C ∫_0^t (gamma(v_s) + v_s) ds` by adaptive integration.
pub fn comparison_v(t: f64, v0: f64, c: f64) -> Result<f64> {
    check_comparison_args(t, v0, c)?;
    if v0 == 0.0 || c == 0.0 || t == 0.0 {
        return Ok(v0);
    }
    Ok(integrate_scalar(
        |_, v| c * (gamma_unchecked(v.max(0.0)) + v.max(0.0)),
        v0,
        t,
        1e-12,
        1e-15,
    ))
}

/// Closed form obtained from `w = ln v`, `w' = C (2 - w)`; cross-checked against
/// [`comparison_v`] in the tests.
pub fn comparison_v_closed_form(t: f64, v0: f64, c: f64) -> f64 {
    if v0 <= 0.0 || c == 0.0 {
        return v0;
    }
    if v0 >= 1.0 {
        return v0 * (2.0 * c * t).exp();
    }
    let t0 = ((2.0 - v0.ln()) / 2.0).ln() / c;
    if t < t0 {
        let decay = (-c * t).exp();
        (decay * v0.ln() + 2.0 * (1.0 - decay)).exp()
    } else {
        (2.0 * c * (t - t0)).exp()
    }
}

/// The literal printed expression for `v` below its crossing time; kept only
/// so the discrepancy with the defining integral equation can be reported.
pub fn comparison_v_printed(t: f64, v0: f64, c: f64) -> f64 {
    let decay = (-c * t).exp();
    v0.powf(decay) * (1.0 - decay).exp()
}

/// Adaptive Dormand–Prince 5(4) integration of a scalar ODE from 0 to `t_end`.
pub fn integrate_scalar(
    f: impl Fn(f64, f64) -> f64,
    y0: f64,
    t_end: f64,
    rtol: f64,
    atol: f64,
) -> f64 {
    const C2: f64 = 1.0 / 5.0;
    const C3: f64 = 3.0 / 10.0;
    const C4: f64 = 4.0 / 5.0;
    const C5: f64 = 8.0 / 9.0;
    let (a21, a31, a32) = (1.0 / 5.0, 3.0 / 40.0, 9.0 / 40.0);
    let (a41, a42, a43) = (44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0);
    let (a51, a52, a53, a54) = (
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
    );
    let (a61, a62, a63, a64, a65) = (
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
    );
    let (b1, b3, b4, b5, b6) = (
        35.0 / 384.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    );
    let (e1, e3, e4, e5, e6, e7) = (
        71.0 / 57600.0,
        -71.0 / 16695.0,
        71.0 / 1920.0,
        -17253.0 / 339200.0,
        22.0 / 525.0,
        -1.0 / 40.0,
    );

    let mut t = 0.0;
    let mut y = y0;
    let mut h = (t_end * 1e-3).max(1e-12);
    while t < t_end {
        if t + h > t_end {
            h = t_end - t;
        }
        let k1 = f(t, y);
        let k2 = f(t + C2 * h, y + h * a21 * k1);
        let k3 = f(t + C3 * h, y + h * (a31 * k1 + a32 * k2));
        let k4 = f(t + C4 * h, y + h * (a41 * k1 + a42 * k2 + a43 * k3));
        let k5 = f(t + C5 * h, y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
        let k6 = f(
            t + h,
            y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5),
        );
        let y_new = y + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
        let k7 = f(t + h, y_new);
        let err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
        let scale = atol + rtol * y.abs().max(y_new.abs());
        let ratio = err.abs() / scale;
        if ratio <= 1.0 {
            t += h;
            y = y_new;
        }
        let factor = if ratio == 0.0 {
            5.0
        } else {
            (0.9 * ratio.powf(-0.2)).clamp(0.2, 5.0)
        };
        h *= factor;
    }
    y
}

/// Parameters of the iteration inequality `rho^n_t <= A ln(1/eps) ∫_0^t rho^{n-1} + eps B t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationBoundParams {
    pub a: f64,
    pub b: f64,
    pub horizon: f64,
    pub rho0_sup: f64,
    pub n: u32,
}

impl IterationBoundParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0) {
            return Err(Error::domain("A must be positive"));
        }
        if !(self.b >= 0.0) {
            return Err(Error::domain("B must be nonnegative"));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::domain("T must be positive"));
        }
        if !(self.rho0_sup >= 0.0) {
            return Err(Error::domain("sup rho^0 must be nonnegative"));
        }
        if self.n == 0 {
            return Err(Error::domain("the bound is stated for n >= 1"));
        }
        Ok(())
    }
}

fn check_bound_time(params: &IterationBoundParams, t: f64) -> Result<()> {
    params.validate()?;
    if !(t >= 0.0 && t <= params.horizon * (1.0 + 1e-12)) {
        return Err(Error::domain(format!(
            "t = {t} outside [0, {}]",
            params.horizon
        )));
    }
    Ok(())
}

/// Upper bound on the n-th element of a sequence satisfying the iteration
/// inequality, obtained with `eps = e^{-n}` and Stirling's lower bound
/// `n! >= sqrt(2 pi n) (n/e)^n`:
///
/// `(e A t)^n / sqrt(2 pi n) * sup rho^0 + B t (e^{A t - 1})^n`.
pub fn picard_bound(params: &IterationBoundParams, t: f64) -> Result<f64> {
    check_bound_time(params, t)?;
    let n = params.n as f64;
    let at = params.a * t;
    let first = (E * at).powf(n) / (2.0 * PI * n).sqrt() * params.rho0_sup;
    let second = params.b * t * (n * (at - 1.0)).exp();
    Ok(first + second)
}

/// The same bound without the `e^n` Stirling factor in the first term.
///
/// This variant is not implied by the iteration inequality (the recursion
/// with `rho^0 = 1, B = 0` gives `(A n t)^n / n!`, which exceeds it by roughly
/// `e^n`). It is kept to quantify that gap.
pub fn picard_bound_without_stirling_factor(params: &IterationBoundParams, t: f64) -> Result<f64> {
    check_bound_time(params, t)?;
    let n = params.n as f64;
    let at = params.a * t;
    Ok(at.powf(n) / (2.0 * PI * n).sqrt() * params.rho0_sup + params.b * t * (n * (at - 1.0)).exp())
}

/// Quadrature settings for [`recursion_oracle`].
#[derive(Debug, Clone, Copy)]
pub struct RecursionGrid {
    /// Gauss–Legendre panels on `[0, t]`.
    pub panels: usize,
    /// Nodes per panel.
    pub order: usize,
    /// Uniform output points on `[0, T]`.
    pub output_points: usize,
}

impl Default for RecursionGrid {
    fn default() -> Self {
        Self {
            panels: 4,
            order: 16,
            output_points: 512,
        }
    }
}

/// `rho^n` sampled on a uniform grid.
#[derive(Debug, Clone)]
pub struct RecursionTrace {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

/// Iterates the iteration inequality with equality and `eps = e^{-n}`:
/// `rho^k(t) = A n ∫_0^t rho^{k-1} + e^{-n} B t`, `k = 1..n`.
///
/// The n-fold integral is evaluated by Cauchy's formula
/// `∫_0^t (t-s)^{n-1} rho^0(s) ds / (n-1)!` with Gauss–Legendre panels; the
/// integrand is nonnegative, so the result keeps relative accuracy as `t -> 0`.
/// The forcing contributes `e^{-n} B t Σ_{k<n} (A n t)^k / (k+1)!`.
pub fn recursion_oracle(
    params: &IterationBoundParams,
    rho0: impl Fn(f64) -> f64,
    grid: RecursionGrid,
) -> Result<RecursionTrace> {
    params.validate()?;
    if grid.panels == 0 || grid.panels * grid.order < 16 || grid.output_points < 16 {
        return Err(Error::config(
            "recursion_grid",
            "quadrature grid needs at least 16 points",
        ));
    }
    let reference = crate::special::CompositeRule::new(0.0, 1.0, grid.panels, grid.order);
    let n = params.n as i32;
    let lipschitz = params.a * n as f64;
    let forcing = (-(n as f64)).exp() * params.b;
    let factorial = |k: i32| (1..=k).map(f64::from).product::<f64>();
    let scale = lipschitz.powi(n) / factorial(n - 1);
    let horizon = params.horizon;
    let times: Vec<f64> = (0..grid.output_points)
        .map(|i| horizon * i as f64 / (grid.output_points - 1) as f64)
        .collect();
    let values = times
        .iter()
        .map(|&t| {
            let memory: f64 = reference
                .nodes
                .iter()
                .zip(&reference.weights)
                .map(|(&u, &w)| w * (t * (1.0 - u)).powi(n - 1) * rho0(t * u))
                .sum::<f64>()
                * t;
            let lt = lipschitz * t;
            let series: f64 = (0..n).map(|k| lt.powi(k) / factorial(k + 1)).sum();
            scale * memory + forcing * t * series
        })
        .collect();
    Ok(RecursionTrace { times, values })
}

/// Outcome of comparing [`recursion_oracle`] with [`picard_bound`] over
/// random parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleBoundSweep {
    pub samples: usize,
    /// Pointwise comparisons made.
    pub checks: usize,
    pub violations: usize,
    /// Largest `oracle / bound` seen.
    pub worst_ratio: f64,
}

/// Random `(A, B, T, sup rho^0)` with nondecreasing starts
/// `rho^0(t) = sup rho^0 (t/T)^q`, `q in {0, 1, 2, 3}` (polynomial, so the
/// spectral oracle is exact), every `n <= max_n`, on the oracle's output grid.
pub fn oracle_bound_sweep(samples: usize, max_n: u32, seed: u64) -> Result<OracleBoundSweep> {
    if samples == 0 || max_n == 0 {
        return Err(Error::config("lemma", "samples and max_iterate must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut unit = || (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
    let mut out = OracleBoundSweep {
        samples,
        checks: 0,
        violations: 0,
        worst_ratio: 0.0,
    };
    for _ in 0..samples {
        let a = (0.1f64.ln() + unit() * 100f64.ln()).exp();
        let b = 10.0 * unit();
        let horizon = 0.05 + 1.95 * unit();
        let rho0_sup = unit();
        let q = (4.0 * unit()).floor().min(3.0) as i32;
        for n in 1..=max_n {
            let params = IterationBoundParams {
                a,
                b,
                horizon,
                rho0_sup,
                n,
            };
            let trace = recursion_oracle(&params, |t| rho0_sup * (t / horizon).powi(q), RecursionGrid::default())?;
            for (&t, &v) in trace.times.iter().zip(&trace.values) {
                let bound = picard_bound(&params, t)?;
                out.checks += 1;
                if v > bound {
                    out.violations += 1;
                }
                if bound > 0.0 {
                    out.worst_ratio = out.worst_ratio.max(v / bound);
                }
            }
        }
    }
    Ok(out)
}
