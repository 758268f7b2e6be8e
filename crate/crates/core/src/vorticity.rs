//! Eulerian view of a Lagrangian flow: pushed-forward vorticity, weak-form
//! residuals and the mollified-kernel stability experiments.

use std::f64::consts::PI;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::comparison_v;
use crate::error::{Error, Result};
use crate::flow::{
    direct_self_consistent_solve, marker_weights, solve_euler_flow, DriftPlan, FlowState, SolverConfig,
};
use crate::kernel::{kernel_l1_distance, KernelEvaluator};
use crate::noise::{BrownianDriver, NoiseBasis};
use crate::spectral::{deposit_cic, deposit_ngp, ScalarField};
use crate::torus::torus_dist;

fn unit_uniform(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

/// Named initial vorticity profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialVorticity {
    Constant { value: f64 },
    /// `amplitude cos(2π x₁)`.
    Shear { amplitude: f64 },
    /// Trig polynomial of the given degree, scaled so its sup is at most `sup_bound`.
    RandomTrig { degree: u32, sup_bound: f64, seed: u64 },
    /// `+value` on a disc around `(-1/4, 0)`, `-value` on a disc around `(1/4, 0)`.
    TwoPatch { value: f64, radius: f64 },
}

impl InitialVorticity {
    pub fn validate(&self) -> Result<()> {
        let finite = |v: f64, field: &str| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(field, "must be finite"))
            }
        };
        match self {
            InitialVorticity::Constant { value } => finite(*value, "xi0.value"),
            InitialVorticity::Shear { amplitude } => finite(*amplitude, "xi0.amplitude"),
            InitialVorticity::RandomTrig { degree, sup_bound, .. } => {
                if *degree == 0 || *degree > 8 {
                    return Err(Error::config("xi0.degree", "must lie in 1..=8"));
                }
                if !(*sup_bound >= 0.0 && sup_bound.is_finite()) {
                    return Err(Error::config("xi0.sup_bound", "must be finite and nonnegative"));
                }
                Ok(())
            }
            InitialVorticity::TwoPatch { value, radius } => {
                finite(*value, "xi0.value")?;
                if !(*radius > 0.0 && *radius < 0.25) {
                    return Err(Error::config("xi0.radius", "must lie in (0, 1/4)"));
                }
                Ok(())
            }
        }
    }

    /// Coefficients `(k, cos, sin)` of the random trig preset.
    fn trig_terms(degree: u32, sup_bound: f64, seed: u64) -> Vec<([i64; 2], f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = degree as i64;
        let mut terms = Vec::new();
        for k1 in 0..=d {
            for k2 in -d..=d {
                if k1 == 0 && k2 <= 0 {
                    continue;
                }
                let a = 2.0 * unit_uniform(&mut rng) - 1.0;
                let b = 2.0 * unit_uniform(&mut rng) - 1.0;
                terms.push(([k1, k2], a, b));
            }
        }
        let total: f64 = terms.iter().map(|(_, a, b)| a.abs() + b.abs()).sum();
        let scale = if total > 0.0 { sup_bound / total } else { 0.0 };
        terms.iter().map(|(k, a, b)| (*k, a * scale, b * scale)).collect()
    }

    pub fn value(&self, x: [f64; 2]) -> f64 {
        match self {
            InitialVorticity::Constant { value } => *value,
            InitialVorticity::Shear { amplitude } => amplitude * (2.0 * PI * x[0]).cos(),
            InitialVorticity::RandomTrig {
                degree,
                sup_bound,
                seed,
            } => Self::trig_terms(*degree, *sup_bound, *seed)
                .iter()
                .map(|(k, a, b)| {
                    let th = 2.0 * PI * (k[0] as f64 * x[0] + k[1] as f64 * x[1]);
                    a * th.cos() + b * th.sin()
                })
                .sum(),
            InitialVorticity::TwoPatch { value, radius } => {
                if torus_dist(x, [-0.25, 0.0]) < *radius {
                    *value
                } else if torus_dist(x, [0.25, 0.0]) < *radius {
                    -value
                } else {
                    0.0
                }
            }
        }
    }

    /// Values at the cell centres of an `n x n` grid (the marker labels).
    pub fn sample(&self, n: usize) -> ScalarField {
        if let InitialVorticity::RandomTrig {
            degree,
            sup_bound,
            seed,
        } = self
        {
            let terms = Self::trig_terms(*degree, *sup_bound, *seed);
            return ScalarField::from_fn(n, |x| {
                terms
                    .iter()
                    .map(|(k, a, b)| {
                        let th = 2.0 * PI * (k[0] as f64 * x[0] + k[1] as f64 * x[1]);
                        a * th.cos() + b * th.sin()
                    })
                    .sum()
            });
        }
        ScalarField::from_fn(n, |x| self.value(x))
    }

    /// A priori bound on `‖ξ₀‖_∞`.
    pub fn sup_bound(&self) -> f64 {
        match self {
            InitialVorticity::Constant { value } | InitialVorticity::TwoPatch { value, .. } => value.abs(),
            InitialVorticity::Shear { amplitude } => amplitude.abs(),
            InitialVorticity::RandomTrig { sup_bound, .. } => *sup_bound,
        }
    }
}

/// Trigonometric test function with exact derivatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub constant: f64,
    /// `(k, cos coefficient, sin coefficient)`.
    pub terms: Vec<([i64; 2], f64, f64)>,
}

impl TestFunction {
    pub fn constant(c: f64) -> Self {
        Self {
            constant: c,
            terms: Vec::new(),
        }
    }

    /// Random trig polynomial with `|k|_∞ <= degree`, coefficients decaying like `1/(1+|k|²)`.
    pub fn random(degree: u32, seed: u64) -> Result<Self> {
        if degree == 0 || degree > 4 {
            return Err(Error::config("test_function.degree", "must lie in 1..=4"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = degree as i64;
        let mut terms = Vec::new();
        for k1 in 0..=d {
            for k2 in -d..=d {
                if k1 == 0 && k2 <= 0 {
                    continue;
                }
                let w = 1.0 / (1.0 + (k1 * k1 + k2 * k2) as f64);
                let a = (2.0 * unit_uniform(&mut rng) - 1.0) * w;
                let b = (2.0 * unit_uniform(&mut rng) - 1.0) * w;
                terms.push(([k1, k2], a, b));
            }
        }
        Ok(Self {
            constant: 2.0 * unit_uniform(&mut rng) - 1.0,
            terms,
        })
    }

    /// Function of `x₁` only: `Σ_{m<=degree} a_m cos(2πm x₁) + b_m sin(2πm x₁)`.
    pub fn first_coordinate(coeffs: &[(f64, f64)]) -> Self {
        Self {
            constant: 0.0,
            terms: coeffs
                .iter()
                .enumerate()
                .map(|(m, (a, b))| ([m as i64 + 1, 0], *a, *b))
                .collect(),
        }
    }

    pub fn degree(&self) -> i64 {
        self.terms.iter().map(|(k, _, _)| k[0].abs().max(k[1].abs())).max().unwrap_or(0)
    }

    #[inline]
    fn phase(k: [i64; 2], x: [f64; 2]) -> f64 {
        2.0 * PI * (k[0] as f64 * x[0] + k[1] as f64 * x[1])
    }

    pub fn value(&self, x: [f64; 2]) -> f64 {
        self.constant
            + self
                .terms
                .iter()
                .map(|(k, a, b)| {
                    let (s, c) = Self::phase(*k, x).sin_cos();
                    a * c + b * s
                })
                .sum::<f64>()
    }

    pub fn gradient(&self, x: [f64; 2]) -> [f64; 2] {
        let mut g = [0.0, 0.0];
        for (k, a, b) in &self.terms {
            let (s, c) = Self::phase(*k, x).sin_cos();
            let d = 2.0 * PI * (b * c - a * s);
            g[0] += d * k[0] as f64;
            g[1] += d * k[1] as f64;
        }
        g
    }

    pub fn laplacian(&self, x: [f64; 2]) -> f64 {
        self.terms
            .iter()
            .map(|(k, a, b)| {
                let (s, c) = Self::phase(*k, x).sin_cos();
                -4.0 * PI * PI * (k[0] * k[0] + k[1] * k[1]) as f64 * (a * c + b * s)
            })
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Deposit {
    NearestGridPoint,
    CloudInCell,
}

/// Vorticity deposited on a grid, one field per realization.
#[derive(Debug, Clone, PartialEq)]
pub struct VorticityField {
    pub n: usize,
    pub record: usize,
    pub realizations: Vec<ScalarField>,
    sup: f64,
}

impl VorticityField {
    /// Largest `|ξ|` over all realizations and cells.
    pub fn sup_abs(&self) -> f64 {
        self.sup
    }

    pub fn mean(&self, r: usize) -> f64 {
        self.realizations[r].mean()
    }
}

/// `(Φ_t)#ξ₀` on a `grid x grid` mesh: marker weights deposited at their
/// current positions, divided by the cell area.
pub fn pushforward_vorticity(
    flow: &FlowState,
    xi0: &ScalarField,
    t: usize,
    deposit: Deposit,
    grid: usize,
) -> Result<VorticityField> {
    if xi0.n != flow.n() {
        return Err(Error::ShapeMismatch("initial vorticity and flow grids differ".into()));
    }
    if t >= flow.records() {
        return Err(Error::IndexOutOfRange {
            index: t,
            count: flow.records(),
        });
    }
    let weights = marker_weights(xi0);
    let cells = (grid * grid) as f64;
    let realizations: Vec<ScalarField> = (0..flow.realizations())
        .map(|r| {
            let mass = match deposit {
                Deposit::NearestGridPoint => deposit_ngp(grid, flow.at(t, r), &weights),
                Deposit::CloudInCell => deposit_cic(grid, flow.at(t, r), &weights),
            };
            ScalarField {
                n: grid,
                values: mass.into_iter().map(|m| m * cells).collect(),
            }
        })
        .collect();
    let sup = realizations.iter().map(ScalarField::sup_abs).fold(0.0, f64::max);
    Ok(VorticityField {
        n: grid,
        record: t,
        realizations,
        sup,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxPrinciple {
    /// `‖ξ_t‖_∞ / ‖ξ₀‖_∞`, or the absolute sup when `ξ₀ ≡ 0`.
    pub ratio: f64,
    pub relative: bool,
    pub passes: bool,
}

/// Compare the deposited sup with the initial sup, allowing `tolerance`
/// for deposit smoothing and sampling.
pub fn max_principle_check(field: &VorticityField, xi0: &ScalarField, tolerance: f64) -> MaxPrinciple {
    let s0 = xi0.sup_abs();
    if s0 == 0.0 {
        return MaxPrinciple {
            ratio: field.sup_abs(),
            relative: false,
            passes: field.sup_abs() <= tolerance,
        };
    }
    let ratio = field.sup_abs() / s0;
    MaxPrinciple {
        ratio,
        relative: true,
        passes: ratio <= 1.0 + tolerance,
    }
}

/// `⟨ξ_t, f⟩ = Σ_j w_j f(Φ_t(y_j))` for one realization.
pub fn marker_pairing(flow: &FlowState, weights: &[f64], t: usize, r: usize, f: impl Fn([f64; 2]) -> f64) -> f64 {
    flow.at(t, r).iter().zip(weights).map(|(x, w)| w * f(*x)).sum()
}

/// `|⟨ξ_t,φ⟩ - ⟨ξ₀,φ⟩ - ∫⟨ξ, u·∇φ⟩dr - Σ_k∫⟨ξ, σ_k·∇φ⟩dW^k - (C/2)∫⟨ξ, Δφ⟩dr|`
/// per realization, with left-point sums over the flow's records and the
/// driver's increments replayed over each record interval.
pub fn weak_form_residual(
    flow: &FlowState,
    xi0: &ScalarField,
    basis: &NoiseBasis,
    driver: &BrownianDriver,
    plan: &DriftPlan,
    phi: &TestFunction,
    t: usize,
) -> Result<Vec<f64>> {
    if flow.seed() != driver.seed {
        return Err(Error::SeedMismatch(format!(
            "flow seed {} but driver seed {}",
            flow.seed(),
            driver.seed
        )));
    }
    if xi0.n != flow.n() {
        return Err(Error::ShapeMismatch("initial vorticity and flow grids differ".into()));
    }
    if t >= flow.records() {
        return Err(Error::IndexOutOfRange {
            index: t,
            count: flow.records(),
        });
    }
    let factor = flow.record_dt() / driver.dt();
    if factor < 0.5 || (factor - factor.round()).abs() > 1e-9 * factor {
        return Err(Error::ShapeMismatch("record spacing is not a multiple of the driver step".into()));
    }
    let record_driver = driver.coarsened(factor.round() as usize)?;
    let weights = marker_weights(xi0);
    if weights.iter().all(|w| *w == 0.0) {
        return Ok(vec![0.0; flow.realizations()]);
    }
    let ks = basis.wavevectors();
    let modes = basis.mode_count();
    let c = basis.covariance_constant();
    let dt = flow.record_dt();
    let silent = basis.is_silent();
    let out = (0..flow.realizations())
        .into_par_iter()
        .map(|r| {
            let global = flow.realization_start() + r as u64;
            let lhs = marker_pairing(flow, &weights, t, r, |x| phi.value(x));
            let mut rhs = marker_pairing(flow, &weights, 0, r, |x| phi.value(x));
            let mut u = vec![[0.0, 0.0]; flow.markers()];
            let mut dw = vec![0.0; modes];
            for s in 0..t {
                let x = flow.at(s, r);
                plan.evaluate(x, &weights, x, true, &mut u);
                if !silent {
                    record_driver.increments_into(global, s as u64, &mut dw);
                }
                let mut step = 0.0;
                for ((xj, uj), wj) in x.iter().zip(&u).zip(&weights) {
                    let g = phi.gradient(*xj);
                    let mut term = (uj[0] * g[0] + uj[1] * g[1]) * dt;
                    if !silent {
                        for (k, dwk) in dw.iter().enumerate() {
                            let sk = basis.sigma_unchecked(k, *xj, &ks);
                            term += (sk[0] * g[0] + sk[1] * g[1]) * dwk;
                        }
                        term += 0.5 * c * phi.laplacian(*xj) * dt;
                    }
                    step += wj * term;
                }
                rhs += step;
            }
            (lhs - rhs).abs()
        })
        .collect();
    Ok(out)
}

/// How the flows of a sweep are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowMethod {
    Picard,
    Direct,
}

pub fn solve_flow(
    method: FlowMethod,
    xi0: &ScalarField,
    basis: &NoiseBasis,
    driver: &BrownianDriver,
    cfg: &SolverConfig,
    plan: &DriftPlan,
) -> Result<FlowState> {
    match method {
        FlowMethod::Picard => Ok(solve_euler_flow(xi0, basis, driver, cfg, plan)?.0),
        FlowMethod::Direct => direct_self_consistent_solve(xi0, basis, driver, cfg, plan),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub eps: f64,
    pub kernel_l1_distance: f64,
    pub flow_distance: f64,
    pub bound: f64,
}

/// Constants entering the comparison bound `v(T, v0)`:
/// `v0 = ‖ξ₀‖_∞ ‖K^ε - K‖₁ T` and rate `2 C_LL ‖ξ₀‖_∞ + (Σ_k sup|σ_k|² + Lip(σ_k)²)^{1/2}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityConstants {
    pub log_lipschitz: f64,
    pub rate: f64,
}

impl StabilityConstants {
    pub fn new(log_lipschitz: f64, xi0_sup: f64, basis: &NoiseBasis) -> Self {
        Self {
            log_lipschitz,
            rate: 2.0 * log_lipschitz * xi0_sup + basis.l2_lipschitz_norm().sqrt(),
        }
    }
}

pub struct StabilityOutput {
    pub rows: Vec<StabilityRow>,
    pub reference: FlowState,
    pub mollified: Vec<FlowState>,
}

/// Flow with the exact kernel against flows with `K * ρ_ε`, common noise.
#[allow(clippy::too_many_arguments)]
pub fn stability_sweep(
    xi0: &ScalarField,
    basis: &NoiseBasis,
    driver: &BrownianDriver,
    eps_list: &[f64],
    cfg: &SolverConfig,
    kernel: &KernelEvaluator,
    method: FlowMethod,
    constants: StabilityConstants,
) -> Result<StabilityOutput> {
    let exact = kernel.mollified(0.0)?;
    let reference = solve_flow(method, xi0, basis, driver, cfg, &DriftPlan::new(cfg.drift, exact)?)?;
    let xi_sup = xi0.sup_abs();
    let mut rows = Vec::with_capacity(eps_list.len());
    let mut mollified = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let plan = DriftPlan::new(cfg.drift, kernel.mollified(eps)?)?;
        let flow = solve_flow(method, xi0, basis, driver, cfg, &plan)?;
        let l1 = kernel_l1_distance(eps)?.value;
        let distance = crate::flow::flow_distance(&flow, &reference)?;
        let bound = comparison_v(cfg.horizon, xi_sup * l1 * cfg.horizon, constants.rate)?;
        rows.push(StabilityRow {
            eps,
            kernel_l1_distance: l1,
            flow_distance: distance,
            bound,
        });
        mollified.push(flow);
    }
    Ok(StabilityOutput {
        rows,
        reference,
        mollified,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeakConvergenceRow {
    pub record: usize,
    pub test_function: usize,
    /// Mean over realizations of `|⟨φ, ξ^ε_t⟩ - ⟨φ, ξ_t⟩|`.
    pub mean_abs_difference: f64,
}

/// Weak distance between two pushed-forward vorticities via marker sums.
pub fn weak_vorticity_convergence(
    flow: &FlowState,
    flow_eps: &FlowState,
    xi0: &ScalarField,
    phis: &[TestFunction],
    records: &[usize],
) -> Result<Vec<WeakConvergenceRow>> {
    if flow.seed() != flow_eps.seed() {
        return Err(Error::SeedMismatch("flows use different noise seeds".into()));
    }
    if flow.n() != flow_eps.n()
        || flow.realizations() != flow_eps.realizations()
        || flow.records() != flow_eps.records()
        || xi0.n != flow.n()
    {
        return Err(Error::ShapeMismatch("flows differ in shape".into()));
    }
    let weights = marker_weights(xi0);
    let mut rows = Vec::new();
    for &t in records {
        if t >= flow.records() {
            return Err(Error::IndexOutOfRange {
                index: t,
                count: flow.records(),
            });
        }
        for (i, phi) in phis.iter().enumerate() {
            let total: f64 = (0..flow.realizations())
                .map(|r| {
                    let a = marker_pairing(flow_eps, &weights, t, r, |x| phi.value(x));
                    let b = marker_pairing(flow, &weights, t, r, |x| phi.value(x));
                    (a - b).abs()
                })
                .sum();
            rows.push(WeakConvergenceRow {
                record: t,
                test_function: i,
                mean_abs_difference: total / flow.realizations() as f64,
            });
        }
    }
    Ok(rows)
}
