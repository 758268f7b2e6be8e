//! Linear SDE stepping, the Picard map and the windowed fixed-point solve.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::diagnostics::{fit_iteration_constants, IterationFit};
use super::drift::{marker_weights, DriftMode, DriftPlan};
use super::state::FlowState;
use crate::error::{Error, Result};
use crate::noise::{BrownianDriver, NoiseBasis};
use crate::spectral::ScalarField;
use crate::torus::{marker_labels, wrap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Itô Euler–Maruyama, no correction drift.
    EulerMaruyama,
    /// Predictor-corrector (Heun), consistent with the Stratonovich integral.
    StratonovichHeun,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PicardConfig {
    pub max_iterations: usize,
    /// Stop once the sup-in-time distance between successive iterates is below this.
    pub tolerance: f64,
    /// Initial window length; halved while the first contraction ratio is >= 0.8.
    pub window: f64,
}

impl Default for PicardConfig {
    fn default() -> Self {
        Self {
            max_iterations: 40,
            tolerance: 1e-12,
            window: 0.25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub dt: f64,
    pub horizon: f64,
    pub scheme: Scheme,
    pub picard: PicardConfig,
    pub drift: DriftMode,
    pub realizations: usize,
    #[serde(default)]
    pub realization_start: u64,
    /// Store every `record_stride`-th step.
    #[serde(default = "one")]
    pub record_stride: usize,
}

fn one() -> usize {
    1
}

/// Contraction ratio above which a window is halved.
pub const WINDOW_RATIO_LIMIT: f64 = 0.8;

impl SolverConfig {
    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::config("solver.dt", "must be positive"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::config("solver.horizon", "must be positive"));
        }
        let steps = self.horizon / self.dt;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) || steps.round() < 1.0 {
            return Err(Error::config("solver.dt", "must divide the horizon"));
        }
        if !(self.picard.tolerance > 0.0) {
            return Err(Error::config("solver.picard.tolerance", "must be positive"));
        }
        if !(self.picard.window > 0.0 && self.picard.window <= self.horizon * (1.0 + 1e-12)) {
            return Err(Error::config("solver.picard.window", "must lie in (0, horizon]"));
        }
        if self.picard.max_iterations == 0 {
            return Err(Error::config("solver.picard.max_iterations", "must be positive"));
        }
        if self.realizations == 0 {
            return Err(Error::config("solver.realizations", "must be positive"));
        }
        if self.record_stride == 0 || !self.steps().is_multiple_of(self.record_stride) {
            return Err(Error::config("solver.record_stride", "must divide the step count"));
        }
        Ok(())
    }

    fn check_driver(&self, basis: &NoiseBasis, driver: &BrownianDriver) -> Result<()> {
        self.validate()?;
        basis.validate()?;
        if driver.modes != basis.mode_count() {
            return Err(Error::config(
                "noise",
                format!("driver has {} modes, basis has {}", driver.modes, basis.mode_count()),
            ));
        }
        if (driver.dt() - self.dt).abs() > 1e-12 * self.dt {
            return Err(Error::config(
                "solver.dt",
                format!("driver step {} differs from solver step {}", driver.dt(), self.dt),
            ));
        }
        Ok(())
    }
}

/// Velocity supplier for the stepper. `step` is the local step index of the
/// evaluation time, `realization` the local realization index.
pub trait Drift: Sync {
    fn velocity(&self, step: usize, realization: usize, positions: &[[f64; 2]], out: &mut [[f64; 2]]);

    /// True when the drift is identically zero (lets the stepper skip work).
    fn is_zero(&self) -> bool {
        false
    }
}

pub struct ZeroDrift;

impl Drift for ZeroDrift {
    fn velocity(&self, _: usize, _: usize, _: &[[f64; 2]], out: &mut [[f64; 2]]) {
        out.iter_mut().for_each(|u| *u = [0.0, 0.0]);
    }

    fn is_zero(&self) -> bool {
        true
    }
}

/// Prescribed velocity field `u(t, x)`.
pub struct FieldDrift<F> {
    pub field: F,
    pub dt: f64,
}

impl<F: Fn(f64, [f64; 2]) -> [f64; 2] + Sync> Drift for FieldDrift<F> {
    fn velocity(&self, step: usize, _: usize, positions: &[[f64; 2]], out: &mut [[f64; 2]]) {
        let t = step as f64 * self.dt;
        for (x, u) in positions.iter().zip(out.iter_mut()) {
            *u = (self.field)(t, *x);
        }
    }
}

/// Drift induced by a frozen flow: sources are the flow's markers at the
/// same step and realization.
pub struct FrozenFlowDrift<'a> {
    pub flow: &'a FlowState,
    pub weights: &'a [f64],
    pub plan: &'a DriftPlan,
}

impl Drift for FrozenFlowDrift<'_> {
    fn velocity(&self, step: usize, realization: usize, positions: &[[f64; 2]], out: &mut [[f64; 2]]) {
        let t = step.min(self.flow.records() - 1);
        self.plan.evaluate(self.flow.at(t, realization), self.weights, positions, true, out);
    }

    fn is_zero(&self) -> bool {
        self.weights.iter().all(|w| *w == 0.0)
    }
}

/// Self-consistent drift: the markers being moved are the sources.
pub struct SelfDrift<'a> {
    pub weights: &'a [f64],
    pub plan: &'a DriftPlan,
}

impl Drift for SelfDrift<'_> {
    fn velocity(&self, _: usize, _: usize, positions: &[[f64; 2]], out: &mut [[f64; 2]]) {
        self.plan.evaluate(positions, self.weights, positions, true, out);
    }

    fn is_zero(&self) -> bool {
        self.weights.iter().all(|w| *w == 0.0)
    }
}

/// Stepping parameters shared by every solve.
#[derive(Debug, Clone, Copy)]
pub(crate) struct March {
    pub dt: f64,
    pub scheme: Scheme,
    /// Global index of the first step (selects the noise increments).
    pub start_step: usize,
    pub steps: usize,
    pub record_stride: usize,
    pub realization_start: u64,
}

/// Integrate `dX = u dt + Σ σ_k(X) dW^k` for every realization from `initial[r]`.
pub(crate) fn march(
    drift: &dyn Drift,
    basis: &NoiseBasis,
    driver: &BrownianDriver,
    spec: March,
    initial: &[Vec<[f64; 2]>],
    n: usize,
    seed: u64,
) -> Result<FlowState> {
    let ks = basis.wavevectors();
    let modes = basis.mode_count();
    let silent = basis.is_silent();
    let paths: Vec<Vec<Vec<[f64; 2]>>> = initial
        .par_iter()
        .enumerate()
        .map(|(r, x0)| {
            let global = spec.realization_start + r as u64;
            let m = x0.len();
            let mut x = x0.clone();
            let mut records = vec![x.clone()];
            let mut u = vec![[0.0, 0.0]; m];
            let mut up = vec![[0.0, 0.0]; m];
            let mut pred = vec![[0.0, 0.0]; m];
            let mut dw = vec![0.0; modes];
            let noise_at = |p: [f64; 2], dw: &[f64]| -> [f64; 2] {
                let mut s = [0.0, 0.0];
                for (k, w) in dw.iter().enumerate() {
                    let sk = basis.sigma_unchecked(k, p, &ks);
                    s[0] += sk[0] * w;
                    s[1] += sk[1] * w;
                }
                s
            };
            for s in 0..spec.steps {
                if !silent {
                    driver.increments_into(global, (spec.start_step + s) as u64, &mut dw);
                }
                if !drift.is_zero() {
                    drift.velocity(s, r, &x, &mut u);
                }
                match spec.scheme {
                    Scheme::EulerMaruyama => {
                        for (xi, ui) in x.iter_mut().zip(&u) {
                            let nz = if silent { [0.0, 0.0] } else { noise_at(*xi, &dw) };
                            *xi = wrap([xi[0] + ui[0] * spec.dt + nz[0], xi[1] + ui[1] * spec.dt + nz[1]]);
                        }
                    }
                    Scheme::StratonovichHeun => {
                        let mut nz0 = vec![[0.0, 0.0]; m];
                        for i in 0..m {
                            nz0[i] = if silent { [0.0, 0.0] } else { noise_at(x[i], &dw) };
                            pred[i] = [
                                x[i][0] + u[i][0] * spec.dt + nz0[i][0],
                                x[i][1] + u[i][1] * spec.dt + nz0[i][1],
                            ];
                        }
                        if !drift.is_zero() {
                            let wrapped: Vec<[f64; 2]> = pred.iter().map(|p| wrap(*p)).collect();
                            drift.velocity(s + 1, r, &wrapped, &mut up);
                        }
                        for i in 0..m {
                            let nz1 = if silent { [0.0, 0.0] } else { noise_at(pred[i], &dw) };
                            x[i] = wrap([
                                x[i][0] + 0.5 * (u[i][0] + up[i][0]) * spec.dt + 0.5 * (nz0[i][0] + nz1[0]),
                                x[i][1] + 0.5 * (u[i][1] + up[i][1]) * spec.dt + 0.5 * (nz0[i][1] + nz1[1]),
                            ]);
                        }
                    }
                }
                if let Some(marker) = x.iter().position(|p| !(p[0].is_finite() && p[1].is_finite())) {
                    return Err(Error::BlowUp {
                        step: spec.start_step + s + 1,
                        realization: global,
                        marker,
                    });
                }
                if (s + 1) % spec.record_stride == 0 {
                    records.push(x.clone());
                }
            }
            Ok(records)
        })
        .collect::<Result<_>>()?;

    let realizations = initial.len();
    let records = paths.first().map_or(0, Vec::len);
    let mut positions = Vec::with_capacity(records * realizations * n * n);
    for t in 0..records {
        for path in &paths {
            positions.extend_from_slice(&path[t]);
        }
    }
    FlowState::from_parts(
        n,
        realizations,
        spec.realization_start,
        spec.dt * spec.record_stride as f64,
        seed,
        positions,
    )
}

fn labels_for(n: usize, realizations: usize) -> Vec<Vec<[f64; 2]>> {
    vec![marker_labels(n); realizations]
}

/// Solve the linear SDE for a given drift on `[0, horizon]` from the marker labels.
pub fn solve_linear_flow(
    drift: &dyn Drift,
    n: usize,
    basis: &NoiseBasis,
    driver: &BrownianDriver,
    cfg: &SolverConfig,
) -> Result<FlowState> {
    cfg.check_driver(basis, driver)?;
    march(
        drift,
        basis,
        driver,
        March {
            dt: cfg.dt,
            scheme: cfg.scheme,
            start_step: 0,
            steps: cfg.steps(),
            record_stride: cfg.record_stride,
            realization_start: cfg.realization_start,
        },
        &labels_for(n, cfg.realizations),
        n,
        driver.seed,
    )
}

/// `G(ψ)`: the linear flow driven by the velocity `ψ` induces, on the same
/// noise path. `psi` must be recorded at every step.
pub fn picard_map(
    psi: &FlowState,
    xi0: &ScalarField,
    basis: &NoiseBasis,
    driver: &BrownianDriver,
    cfg: &SolverConfig,
    plan: &DriftPlan,
) -> Result<FlowState> {
    cfg.check_driver(basis, driver)?;
    if psi.n() != xi0.n || psi.realizations() != cfg.realizations || psi.records() != cfg.steps() + 1 {
        return Err(Error::ShapeMismatch("iterate does not match the solver grid".into()));
    }
    if (psi.record_dt() - cfg.dt).abs() > 1e-12 * cfg.dt {
        return Err(Error::ShapeMismatch("iterate must be recorded at every step".into()));
    }
    let weights = marker_weights(xi0);
    let drift = FrozenFlowDrift {
        flow: psi,
        weights: &weights,
        plan,
    };
    march(
        &drift,
        basis,
        driver,
        March {
            dt: cfg.dt,
            scheme: cfg.scheme,
            start_step: 0,
            steps: cfg.steps(),
            record_stride: 1,
            realization_start: cfg.realization_start,
        },
        &labels_for(xi0.n, cfg.realizations),
        xi0.n,
        driver.seed,
    )
}

/// Sup over records of the mean torus distance over markers and realizations.
pub fn flow_distance(a: &FlowState, b: &FlowState) -> Result<f64> {
    Ok(a.distance_profile(b)?.into_iter().fold(0.0, f64::max))
}

/// Picard history of one time window.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindowReport {
    pub start_time: f64,
    pub steps: usize,
    pub halvings: usize,
    /// `sup_t` distance between iterates `k+1` and `k`.
    pub sup_distances: Vec<f64>,
    /// Running sup in time of the distance between iterates `k+1` and `k`, per record.
    pub profiles: Vec<Vec<f64>>,
    pub first_ratio: Option<f64>,
    pub fit: Option<IterationFit>,
}

impl WindowReport {
    pub fn iterations(&self) -> usize {
        self.sup_distances.len()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PicardReport {
    pub dt: f64,
    pub windows: Vec<WindowReport>,
}

impl PicardReport {
    pub fn total_iterations(&self) -> usize {
        self.windows.iter().map(WindowReport::iterations).sum()
    }
}

enum WindowOutcome {
    Converged(FlowState, WindowReport),
    Halve(Vec<f64>),
}

struct WindowSpec {
    start_step: usize,
    steps: usize,
    adaptive: bool,
    /// Run exactly this many maps, ignoring the tolerance.
    fixed_iterations: Option<usize>,
}

#[allow(clippy::too_many_arguments)]
fn picard_window(
    spec: &WindowSpec,
    init: &[Vec<[f64; 2]>],
    weights: &[f64],
    basis: &NoiseBasis,
    driver: &BrownianDriver,
    cfg: &SolverConfig,
    plan: &DriftPlan,
    n: usize,
) -> Result<WindowOutcome> {
    let march_spec = March {
        dt: cfg.dt,
        scheme: cfg.scheme,
        start_step: spec.start_step,
        steps: spec.steps,
        record_stride: 1,
        realization_start: cfg.realization_start,
    };
    // First iterate: the window's initial positions held constant.
    let mut held = Vec::with_capacity((spec.steps + 1) * init.len() * n * n);
    for _ in 0..=spec.steps {
        for x in init {
            held.extend_from_slice(x);
        }
    }
    let mut current = FlowState::from_parts(n, init.len(), cfg.realization_start, cfg.dt, driver.seed, held)?;
    let mut sup_distances = Vec::new();
    let mut profiles = Vec::new();
    let limit = spec.fixed_iterations.unwrap_or(cfg.picard.max_iterations);
    for k in 0..limit {
        let drift = FrozenFlowDrift {
            flow: &current,
            weights,
            plan,
        };
        let next = march(&drift, basis, driver, march_spec, init, n, driver.seed)?;
        let mut profile = next.distance_profile(&current)?;
        let mut run = 0.0f64;
        for v in profile.iter_mut() {
            run = run.max(*v);
            *v = run;
        }
        let sup = run;
        sup_distances.push(sup);
        profiles.push(profile);
        current = next;
        let done = match spec.fixed_iterations {
            Some(f) => k + 1 == f,
            None => sup <= cfg.picard.tolerance,
        };
        if k == 1 && spec.adaptive && !done && spec.steps > 1 {
            let ratio = sup_distances[1] / sup_distances[0];
            if sup_distances[0] > 0.0 && ratio >= WINDOW_RATIO_LIMIT {
                return Ok(WindowOutcome::Halve(sup_distances));
            }
        }
        if done {
            let first_ratio = (sup_distances.len() > 1 && sup_distances[0] > 0.0)
                .then(|| sup_distances[1] / sup_distances[0]);
            let fit = fit_iteration_constants(&profiles, cfg.dt, cfg.scheme);
            let report = WindowReport {
                start_time: spec.start_step as f64 * cfg.dt,
                steps: spec.steps,
                halvings: 0,
                sup_distances,
                profiles,
                first_ratio,
                fit,
            };
            return Ok(WindowOutcome::Converged(current, report));
        }
    }
    Err(Error::NoConvergence {
        iterations: sup_distances.len(),
        last: sup_distances.last().copied().unwrap_or(f64::NAN),
        trace: sup_distances,
    })
}

/// Stochastic Euler flow by Picard iteration on successive time windows,
/// each seeded with the previous window's endpoint held constant.
pub fn solve_euler_flow(
    xi0: &ScalarField,
    basis: &NoiseBasis,
    driver: &BrownianDriver,
    cfg: &SolverConfig,
    plan: &DriftPlan,
) -> Result<(FlowState, PicardReport)> {
    cfg.check_driver(basis, driver)?;
    let n = xi0.n;
    let weights = marker_weights(xi0);
    let total = cfg.steps();
    let mut window_steps = ((cfg.picard.window / cfg.dt).round() as usize).clamp(1, total);
    let mut endpoint = labels_for(n, cfg.realizations);
    let mut full: Vec<[f64; 2]> = endpoint.iter().flatten().copied().collect();
    let mut windows = Vec::new();
    let mut start = 0;
    while start < total {
        let mut halvings = 0;
        let (flow, mut report) = loop {
            let steps = window_steps.min(total - start);
            let spec = WindowSpec {
                start_step: start,
                steps,
                adaptive: true,
                fixed_iterations: None,
            };
            match picard_window(&spec, &endpoint, &weights, basis, driver, cfg, plan, n)? {
                WindowOutcome::Converged(f, r) => break (f, r),
                WindowOutcome::Halve(_) => {
                    window_steps = steps.div_ceil(2);
                    halvings += 1;
                }
            }
        };
        report.halvings = halvings;
        let steps = report.steps;
        for t in 1..=steps {
            for r in 0..cfg.realizations {
                full.extend_from_slice(flow.at(t, r));
            }
        }
        endpoint = (0..cfg.realizations).map(|r| flow.at(steps, r).to_vec()).collect();
        windows.push(report);
        start += steps;
    }
    let flow = FlowState::from_parts(n, cfg.realizations, cfg.realization_start, cfg.dt, driver.seed, full)?;
    let flow = if cfg.record_stride > 1 {
        flow.subsampled(cfg.record_stride)?
    } else {
        flow
    };
    Ok((flow, PicardReport { dt: cfg.dt, windows }))
}

/// Fixed number of Picard maps over the whole horizon from the identity,
/// recording every iterate distance (no tolerance stop, no window halving).
pub fn picard_trace(
    xi0: &ScalarField,
    basis: &NoiseBasis,
    driver: &BrownianDriver,
    cfg: &SolverConfig,
    plan: &DriftPlan,
    iterations: usize,
) -> Result<(FlowState, WindowReport)> {
    cfg.check_driver(basis, driver)?;
    if iterations == 0 {
        return Err(Error::config("picard.iterations", "must be positive"));
    }
    let spec = WindowSpec {
        start_step: 0,
        steps: cfg.steps(),
        adaptive: false,
        fixed_iterations: Some(iterations),
    };
    let weights = marker_weights(xi0);
    match picard_window(
        &spec,
        &labels_for(xi0.n, cfg.realizations),
        &weights,
        basis,
        driver,
        cfg,
        plan,
        xi0.n,
    )? {
        WindowOutcome::Converged(f, r) => Ok((f, r)),
        WindowOutcome::Halve(trace) => Err(Error::NoConvergence {
            iterations: trace.len(),
            last: trace.last().copied().unwrap_or(f64::NAN),
            trace,
        }),
    }
}

/// Point-vortex style stepping: drift from the current positions at every step.
pub fn direct_self_consistent_solve(
    xi0: &ScalarField,
    basis: &NoiseBasis,
    driver: &BrownianDriver,
    cfg: &SolverConfig,
    plan: &DriftPlan,
) -> Result<FlowState> {
    cfg.check_driver(basis, driver)?;
    let weights = marker_weights(xi0);
    let drift = SelfDrift {
        weights: &weights,
        plan,
    };
    solve_linear_flow(&drift, xi0.n, basis, driver, cfg)
}
