//! Experiment runners behind the command line, artifact writing and replay.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{comparison_v, comparison_v_closed_form, gamma, gamma_linear_bound_check, oracle_bound_sweep};
use crate::commutator::{commutator_apply, commutator_lp_decay, commutator_quadrature, mollifier_moment_matrix, CommutatorInput};
use crate::config::{Experiment, RunConfig, SweepAxis, SweepConfig};
use crate::doss::{compose, equivalence_check, noise_only_flow, random_ode_solve};
use crate::error::{Error, Result};
use crate::flow::{
    bound_domination, direct_self_consistent_solve, flow_distance, holder_regression, measure_preservation_check,
    picard_trace, rho_profiles, solve_euler_flow, DriftPlan, FlowState, PicardReport,
};
use crate::kernel::{
    biot_savart_split, green_fourier, green_split, log_lipschitz_sup, sample_pairs, KernelEvaluator, KernelTable,
    QuadratureResolution,
};
use crate::noise::BrownianDriver;
use crate::spectral::{cell_centre, ScalarField, VectorField};
use crate::vorticity::{
    max_principle_check, pushforward_vorticity, stability_sweep, weak_vorticity_convergence, FlowMethod,
    StabilityConstants, TestFunction,
};

/// One output file, held in memory until the run succeeds.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOutput {
    pub artifacts: Vec<Artifact>,
    /// Scalar results, also collected by sweeps.
    pub metrics: BTreeMap<String, f64>,
    /// Property checks that did not hold.
    pub failed_checks: Vec<String>,
}

impl RunOutput {
    fn csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        self.artifacts.push(Artifact {
            name: name.into(),
            bytes,
        });
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
        bytes.push(b'\n');
        self.artifacts.push(Artifact {
            name: name.into(),
            bytes,
        });
        Ok(())
    }

    fn metric(&mut self, name: impl Into<String>, value: f64) {
        self.metrics.insert(name.into(), value);
    }
}

/// Process exit status for an error: 2 configuration, 3 blow-up, 4 convergence, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } | Error::Resolution(_) => 2,
        Error::BlowUp { .. } => 3,
        Error::NoConvergence { .. } | Error::Inversion { .. } => 4,
        _ => 1,
    }
}

/// Machine-readable description of a failed run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Diagnostic {
    pub exit_code: i32,
    pub kind: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub realization: Option<u64>,
}

impl Diagnostic {
    pub fn from_error(e: &Error) -> Self {
        let mut d = Diagnostic {
            exit_code: exit_code(e),
            kind: match e {
                Error::Config { .. } => "config",
                Error::Resolution(_) => "resolution",
                Error::BlowUp { .. } => "blow_up",
                Error::NoConvergence { .. } => "no_convergence",
                Error::Inversion { .. } => "inversion",
                Error::SeedMismatch(_) => "seed_mismatch",
                Error::Io(_) => "io",
                Error::Format(_) => "format",
                _ => "numerical",
            }
            .into(),
            message: e.to_string(),
            field: None,
            trace: None,
            residual: None,
            step: None,
            realization: None,
        };
        match e {
            Error::Config { field, .. } => d.field = Some(field.clone()),
            Error::NoConvergence { trace, .. } => d.trace = Some(trace.clone()),
            Error::Inversion { residual } => d.residual = Some(*residual),
            Error::BlowUp { step, realization, .. } => {
                d.step = Some(*step);
                d.realization = Some(*realization);
            }
            _ => {}
        }
        d
    }
}

fn kernel_evaluator(cfg: &RunConfig) -> Result<KernelEvaluator> {
    let k = &cfg.kernel;
    let table = match &k.table_path {
        Some(path) => Arc::new(KernelTable::load(path)?),
        None if k.split() == Default::default() => KernelTable::cached(k.table_size)?,
        None => Arc::new(KernelTable::build(k.table_size, &k.split())?),
    };
    Ok(KernelEvaluator::tabulated(table))
}

fn flow_bytes(flow: &FlowState) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    flow.write_to(&mut bytes)?;
    Ok(bytes)
}

/// Validate and run one experiment.
pub fn run_experiment(experiment: Experiment, cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate(experiment)?;
    match experiment {
        Experiment::Simulate => simulate(cfg),
        Experiment::PicardTrace => picard_trace_run(cfg),
        Experiment::StabilitySweep => stability_run(cfg),
        Experiment::CommutatorScan => commutator_run(cfg),
        Experiment::DossCheck => doss_run(cfg),
        Experiment::KernelBuild => kernel_build(cfg),
        Experiment::LemmaSuite => lemma_suite(cfg),
    }
}

#[derive(Serialize)]
struct PicardRow {
    window: usize,
    start_time: f64,
    steps: usize,
    halvings: usize,
    iteration: usize,
    sup_distance: f64,
}

fn picard_rows(report: &PicardReport) -> Vec<PicardRow> {
    report
        .windows
        .iter()
        .enumerate()
        .flat_map(|(w, win)| {
            win.sup_distances.iter().enumerate().map(move |(k, &d)| PicardRow {
                window: w,
                start_time: win.start_time,
                steps: win.steps,
                halvings: win.halvings,
                iteration: k,
                sup_distance: d,
            })
        })
        .collect()
}

#[derive(Serialize)]
struct DiagnosticRow {
    record: usize,
    time: f64,
    metric: &'static str,
    value: f64,
}

fn simulate(cfg: &RunConfig) -> Result<RunOutput> {
    let n = cfg.grid.n;
    let xi0 = cfg.xi0.sample(n);
    let solver = cfg.solver.solver_config();
    let driver = cfg.driver_at(solver.dt)?;
    let plan = DriftPlan::new(solver.drift, kernel_evaluator(cfg)?.mollified(cfg.kernel.eps)?)?;
    let mut out = RunOutput::default();
    let flow = match cfg.simulate.method {
        FlowMethod::Picard => {
            let (flow, report) = solve_euler_flow(&xi0, &cfg.noise, &driver, &solver, &plan)?;
            out.metric("picard_iterations", report.total_iterations() as f64);
            out.metric("picard_windows", report.windows.len() as f64);
            out.csv("picard.csv", &picard_rows(&report))?;
            flow
        }
        FlowMethod::Direct => direct_self_consistent_solve(&xi0, &cfg.noise, &driver, &solver, &plan)?,
    };
    let grid = cfg.simulate.deposit_grid.unwrap_or(n);
    let times = flow.times();
    let mut rows = Vec::new();
    let (mut worst_occupancy, mut worst_ratio) = (0.0f64, 0.0f64);
    for (t, &time) in times.iter().enumerate() {
        let occ = measure_preservation_check(&flow, t, cfg.simulate.occupancy_cells)?;
        let field = pushforward_vorticity(&flow, &xi0, t, cfg.simulate.deposit, grid)?;
        let mp = max_principle_check(&field, &xi0, 0.05);
        worst_occupancy = worst_occupancy.max(occ.max_deviation);
        worst_ratio = worst_ratio.max(mp.ratio);
        for (metric, value) in [
            ("occupancy_max_deviation", occ.max_deviation),
            ("occupancy_sampling_floor", occ.sampling_floor),
            ("vorticity_sup_ratio", mp.ratio),
        ] {
            rows.push(DiagnosticRow {
                record: t,
                time,
                metric,
                value,
            });
        }
    }
    out.metric("occupancy_max_deviation", worst_occupancy);
    out.metric("vorticity_sup_ratio", worst_ratio);
    match holder_regression(&flow, cfg.simulate.holder_p) {
        Ok(fit) => {
            out.metric("holder_space_exponent", fit.space_exponent);
            out.metric("holder_time_exponent", fit.time_exponent);
        }
        Err(Error::TooFewSamples(_)) => {}
        Err(e) => return Err(e),
    }
    let profile_max = flow.summary_csv();
    out.csv("diagnostics.csv", &rows)?;
    out.artifacts.push(Artifact {
        name: "flow_summary.csv".into(),
        bytes: profile_max.into_bytes(),
    });
    out.artifacts.push(Artifact {
        name: "flow.bin".into(),
        bytes: flow_bytes(&flow)?,
    });
    Ok(out)
}

#[derive(Serialize)]
struct TraceRow {
    iteration: usize,
    record: usize,
    time: f64,
    distance: f64,
    rho: f64,
}

#[derive(Serialize)]
struct TraceFit {
    first_ratio: Option<f64>,
    a: Option<f64>,
    b: Option<f64>,
    rho0_sup: Option<f64>,
    domination_ratio: Option<f64>,
    monotone: bool,
    sup_distances: Vec<f64>,
}

fn picard_trace_run(cfg: &RunConfig) -> Result<RunOutput> {
    let n = cfg.grid.n;
    let xi0 = cfg.xi0.sample(n);
    let solver = cfg.solver.solver_config();
    let driver = cfg.driver_at(solver.dt)?;
    let plan = DriftPlan::new(solver.drift, kernel_evaluator(cfg)?.mollified(cfg.kernel.eps)?)?;
    let (_, report) = picard_trace(&xi0, &cfg.noise, &driver, &solver, &plan, cfg.picard_trace.iterations)?;
    let rho = rho_profiles(&report.profiles);
    let mut rows = Vec::new();
    for (k, (profile, tail)) in report.profiles.iter().zip(&rho).enumerate() {
        for (m, (&d, &r)) in profile.iter().zip(tail).enumerate() {
            rows.push(TraceRow {
                iteration: k,
                record: m,
                time: report.start_time + m as f64 * solver.dt,
                distance: d,
                rho: r,
            });
        }
    }
    let domination = match report.fit {
        Some(_) => Some(bound_domination(&report, solver.dt)?),
        None => None,
    };
    let monotone = report.sup_distances.windows(2).all(|w| w[1] <= w[0]);
    let fit = TraceFit {
        first_ratio: report.first_ratio,
        a: report.fit.map(|f| f.a),
        b: report.fit.map(|f| f.b),
        rho0_sup: report.fit.map(|f| f.rho0_sup),
        domination_ratio: domination,
        monotone,
        sup_distances: report.sup_distances.clone(),
    };
    let mut out = RunOutput::default();
    if let Some(r) = report.first_ratio {
        out.metric("first_ratio", r);
    }
    if let Some(d) = domination {
        out.metric("domination_ratio", d);
    }
    out.metric("monotone", if monotone { 1.0 } else { 0.0 });
    out.metric("final_distance", report.sup_distances.last().copied().unwrap_or(0.0));
    out.csv("picard_trace.csv", &rows)?;
    out.json("picard_fit.json", &fit)?;
    Ok(out)
}

#[derive(Serialize)]
struct WeakRow {
    eps: f64,
    record: usize,
    time: f64,
    test_function: usize,
    mean_abs_difference: f64,
}

#[derive(Serialize)]
struct StabilityConstantsOut {
    log_lipschitz: f64,
    log_lipschitz_pairs: usize,
    rate: f64,
    xi0_sup: f64,
}

/// Empirical log-Lipschitz constant from the configured number of pairs.
pub fn estimate_log_lipschitz(ev: &KernelEvaluator, pairs: usize, seed: u64) -> Result<f64> {
    Ok(log_lipschitz_sup(ev, &sample_pairs(pairs, seed), &QuadratureResolution::default())?.sup)
}

fn stability_run(cfg: &RunConfig) -> Result<RunOutput> {
    let n = cfg.grid.n;
    let xi0 = cfg.xi0.sample(n);
    let solver = cfg.solver.solver_config();
    let driver = cfg.driver_at(solver.dt)?;
    let ev = kernel_evaluator(cfg)?;
    let c_ll = estimate_log_lipschitz(&ev, cfg.stability.log_lipschitz_pairs, cfg.seed)?;
    let constants = StabilityConstants::new(c_ll, xi0.sup_abs(), &cfg.noise);
    let sweep = stability_sweep(
        &xi0,
        &cfg.noise,
        &driver,
        &cfg.stability.eps,
        &solver,
        &ev,
        cfg.stability.method,
        constants,
    )?;
    let phis = (0..cfg.stability.test_functions)
        .map(|i| TestFunction::random(3, cfg.seed.wrapping_add(i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let records: Vec<usize> = (0..sweep.reference.records()).collect();
    let times = sweep.reference.times();
    let mut weak = Vec::new();
    for (row, flow) in sweep.rows.iter().zip(&sweep.mollified) {
        for w in weak_vorticity_convergence(&sweep.reference, flow, &xi0, &phis, &records)? {
            weak.push(WeakRow {
                eps: row.eps,
                record: w.record,
                time: times[w.record],
                test_function: w.test_function,
                mean_abs_difference: w.mean_abs_difference,
            });
        }
    }
    let mut out = RunOutput::default();
    for row in &sweep.rows {
        out.metric(format!("flow_distance@eps={}", row.eps), row.flow_distance);
        out.metric(format!("bound@eps={}", row.eps), row.bound);
    }
    out.metric("log_lipschitz", c_ll);
    out.csv("stability.csv", &sweep.rows)?;
    out.csv("weak_convergence.csv", &weak)?;
    out.json(
        "stability_constants.json",
        &StabilityConstantsOut {
            log_lipschitz: c_ll,
            log_lipschitz_pairs: cfg.stability.log_lipschitz_pairs,
            rate: constants.rate,
            xi0_sup: xi0.sup_abs(),
        },
    )?;
    Ok(out)
}

/// Random divergence-free velocity `∇⊥ψ` and bounded scalar for commutator case `case`.
pub fn commutator_case(n: usize, degree: u32, seed: u64, case: usize) -> Result<(VectorField, ScalarField)> {
    let psi = TestFunction::random(degree, seed.wrapping_add(2 * case as u64))?;
    let w = TestFunction::random(degree, seed.wrapping_add(2 * case as u64 + 1))?;
    let v = VectorField::from_fn(n, |x| {
        let g = psi.gradient(x);
        [-g[1], g[0]]
    });
    Ok((v, ScalarField::from_fn(n, |x| w.value(x))))
}

#[derive(Serialize)]
struct CommutatorOut {
    case: usize,
    p: f64,
    eps: f64,
    norm: f64,
    bound: f64,
}

fn commutator_run(cfg: &RunConfig) -> Result<RunOutput> {
    let c = &cfg.commutator;
    let mut rows = Vec::new();
    let (mut worst, mut decay) = (0.0f64, 0.0f64);
    for case in 0..c.cases {
        let (v, w) = commutator_case(c.n, c.degree, cfg.seed, case)?;
        for &p in &c.p {
            let table = commutator_lp_decay(&v, &w, &c.eps, p)?;
            let (lo, hi) = table.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), r| (lo.min(r.eps), hi.max(r.eps)));
            let at = |e: f64| table.iter().find(|r| r.eps == e).map(|r| r.norm).unwrap_or(f64::NAN);
            if hi > lo {
                decay = decay.max(at(lo) / at(hi));
            }
            for r in table {
                worst = worst.max(r.norm / r.bound);
                rows.push(CommutatorOut {
                    case,
                    p,
                    eps: r.eps,
                    norm: r.norm,
                    bound: r.bound,
                });
            }
        }
    }
    let mut out = RunOutput::default();
    out.metric("worst_norm_to_bound", worst);
    if c.eps.len() > 1 {
        out.metric("worst_smallest_to_largest_eps", decay);
    }
    out.csv("commutator.csv", &rows)?;
    Ok(out)
}

#[derive(Serialize)]
struct DossRow {
    dt: f64,
    equivalence_distance: f64,
    self_convergence_error: Option<f64>,
    det_deviation: f64,
}

#[derive(Serialize)]
struct DossProfileRow {
    record: usize,
    time: f64,
    distance: f64,
}

/// Drivers at `dt` and, for the self-convergence check, at `dt / 2` with common noise.
pub fn doss_drivers(cfg: &RunConfig) -> Result<(BrownianDriver, Option<BrownianDriver>)> {
    let dt = cfg.solver.dt;
    if !cfg.doss.self_convergence {
        return Ok((cfg.driver_at(dt)?, None));
    }
    let fine = match cfg.solver.noise_dt {
        Some(_) => cfg.driver_at(dt / 2.0)?,
        None => BrownianDriver::new(cfg.seed, cfg.noise.mode_count(), dt / 2.0)?,
    };
    Ok((fine.coarsened(2)?, Some(fine)))
}

fn doss_run(cfg: &RunConfig) -> Result<RunOutput> {
    let n = cfg.grid.n;
    let xi0 = cfg.xi0.sample(n);
    let solver = cfg.solver.solver_config();
    let (driver, fine) = doss_drivers(cfg)?;
    let plan = DriftPlan::new(solver.drift, kernel_evaluator(cfg)?.mollified(cfg.kernel.eps)?)?;
    let nf = noise_only_flow(&cfg.noise, &driver, &solver, n)?;
    let tilde = random_ode_solve(&nf, &xi0, &plan)?;
    let direct = direct_self_consistent_solve(&xi0, &cfg.noise, &driver, &solver, &plan)?;
    let distance = equivalence_check(&nf, &tilde, &direct)?;
    let profile = compose(&nf, &tilde)?.distance_profile(&direct)?;
    let self_error = match fine {
        Some(f) => {
            let half = crate::flow::SolverConfig {
                dt: solver.dt / 2.0,
                ..solver
            };
            let refined = direct_self_consistent_solve(&xi0, &cfg.noise, &f, &half, &plan)?;
            Some(flow_distance(&direct, &refined.subsampled(2)?)?)
        }
        None => None,
    };
    let mut out = RunOutput::default();
    out.metric("equivalence_distance", distance);
    out.metric("det_deviation", nf.max_det_deviation());
    if let Some(e) = self_error {
        out.metric("self_convergence_error", e);
    }
    out.csv(
        "doss.csv",
        &[DossRow {
            dt: solver.dt,
            equivalence_distance: distance,
            self_convergence_error: self_error,
            det_deviation: nf.max_det_deviation(),
        }],
    )?;
    let times = direct.times();
    let rows: Vec<DossProfileRow> = profile
        .iter()
        .enumerate()
        .map(|(t, &d)| DossProfileRow {
            record: t,
            time: times[t],
            distance: d,
        })
        .collect();
    out.csv("doss_profile.csv", &rows)?;
    Ok(out)
}

#[derive(Serialize)]
struct KernelCheckRow {
    x1: f64,
    x2: f64,
    green_split: f64,
    green_fourier: f64,
    green_difference: f64,
    kernel_table_difference: f64,
}

fn kernel_build(cfg: &RunConfig) -> Result<RunOutput> {
    let split = cfg.kernel.split();
    let table = Arc::new(KernelTable::build(cfg.kernel.table_size, &split)?);
    let ev = KernelEvaluator::tabulated(table.clone());
    let side = 16;
    let mut rows = Vec::new();
    let (mut worst_green, mut worst_kernel) = (0.0f64, 0.0f64);
    for i in 0..side {
        for j in 0..side {
            let x = [cell_centre(i, side), cell_centre(j, side)];
            let gs = green_split(x, &split)?;
            let gf = green_fourier(x, 256);
            let exact = biot_savart_split(x, &split)?;
            let tab = ev.kernel(x)?;
            let dk = (exact[0] - tab[0]).abs().max((exact[1] - tab[1]).abs());
            worst_green = worst_green.max((gs - gf).abs());
            worst_kernel = worst_kernel.max(dk);
            rows.push(KernelCheckRow {
                x1: x[0],
                x2: x[1],
                green_split: gs,
                green_fourier: gf,
                green_difference: (gs - gf).abs(),
                kernel_table_difference: dk,
            });
        }
    }
    let mut bytes = Vec::new();
    table.write_to(&mut bytes)?;
    let mut out = RunOutput::default();
    out.metric("green_split_vs_fourier", worst_green);
    out.metric("table_vs_split", worst_kernel);
    out.artifacts.push(Artifact {
        name: "kernel_table.bin".into(),
        bytes,
    });
    out.csv("kernel_check.csv", &rows)?;
    Ok(out)
}

#[derive(Serialize)]
struct LemmaRow {
    property: &'static str,
    samples: usize,
    violations: usize,
    worst: f64,
    passed: bool,
}

fn uniform_stream(seed: u64) -> impl FnMut() -> f64 {
    use rand_core::{RngCore, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    move || (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

fn lemma_suite(cfg: &RunConfig) -> Result<RunOutput> {
    let samples = cfg.lemma.samples;
    let mut rows = Vec::new();
    let mut unit = uniform_stream(cfg.seed);

    // Linear bound of the log-Lipschitz modulus.
    let (mut bad, mut worst) = (0, f64::INFINITY);
    for _ in 0..samples {
        let r = 10.0 * unit().powi(3);
        let eps = (-1.0f64).exp() * (1e-9 + (1.0 - 2e-9) * unit());
        let c = gamma_linear_bound_check(r, eps)?;
        worst = worst.min(c.slack);
        bad += usize::from(!c.holds);
    }
    rows.push(LemmaRow {
        property: "gamma_linear_bound",
        samples,
        violations: bad,
        worst,
        passed: bad == 0,
    });

    // Subadditivity and monotonicity of the modulus.
    let (mut bad, mut worst) = (0, f64::NEG_INFINITY);
    for _ in 0..samples {
        let (a, b) = (10.0 * unit(), 10.0 * unit());
        let excess = gamma(a + b)? - gamma(a)? - gamma(b)?;
        worst = worst.max(excess);
        bad += usize::from(excess > 1e-12 || gamma(a.max(b))? < gamma(a.min(b))?);
    }
    rows.push(LemmaRow {
        property: "gamma_subadditive_monotone",
        samples,
        violations: bad,
        worst,
        passed: bad == 0,
    });

    // Comparison function: ODE integration against the closed form. The
    // integrand has a derivative kink, so adaptive steps settle near 1e-8.
    let count = samples.min(200);
    let (mut bad, mut worst) = (0, 0.0f64);
    for _ in 0..count {
        let t = 2.0 * unit();
        let v0 = (1e-6f64.ln() * unit()).exp();
        let c = 3.0 * unit();
        let ode = comparison_v(t, v0, c)?;
        let rel = (ode - comparison_v_closed_form(t, v0, c)).abs() / ode.max(1e-300);
        worst = worst.max(rel);
        bad += usize::from(rel > 1e-6);
    }
    rows.push(LemmaRow {
        property: "comparison_v_closed_form",
        samples: count,
        violations: bad,
        worst,
        passed: bad == 0,
    });

    // Iteration recursion against the corrected bound.
    let sweep = oracle_bound_sweep(samples, cfg.lemma.max_iterate, cfg.seed)?;
    rows.push(LemmaRow {
        property: "recursion_oracle_below_picard_bound",
        samples: sweep.checks,
        violations: sweep.violations,
        worst: sweep.worst_ratio,
        passed: sweep.violations == 0,
    });

    // Commutator: explicit bound, decay, moment identity and kernel-form oracle.
    let c = &cfg.commutator;
    let (mut bad, mut worst, mut checks) = (0, 0.0f64, 0);
    for case in 0..c.cases {
        let (v, w) = commutator_case(c.n, c.degree, cfg.seed, case)?;
        for &p in &c.p {
            for r in commutator_lp_decay(&v, &w, &c.eps, p)? {
                checks += 1;
                worst = worst.max(r.norm / r.bound);
                bad += usize::from(r.norm > r.bound);
            }
        }
    }
    rows.push(LemmaRow {
        property: "commutator_below_explicit_bound",
        samples: checks,
        violations: bad,
        worst,
        passed: bad == 0,
    });
    let m = mollifier_moment_matrix();
    let moment_error = (m[0][0] + 1.0).abs().max((m[1][1] + 1.0).abs()).max(m[0][1].abs()).max(m[1][0].abs());
    rows.push(LemmaRow {
        property: "mollifier_moment_identity",
        samples: 1,
        violations: usize::from(moment_error > 1e-12),
        worst: moment_error,
        passed: moment_error <= 1e-12,
    });
    let (n, eps) = (64, 0.2);
    let psi = TestFunction::random(3, cfg.seed)?;
    let wf = TestFunction::random(3, cfg.seed.wrapping_add(1))?;
    let curl = |x: [f64; 2]| {
        let g = psi.gradient(x);
        [-g[1], g[0]]
    };
    let spectral = commutator_apply(&CommutatorInput {
        v: VectorField::from_fn(n, curl),
        w: ScalarField::from_fn(n, |x| wf.value(x)),
        eps,
        p: 2.0,
    })?;
    let (mut bad, mut worst) = (0, 0.0f64);
    let points = [(3usize, 5usize), (40, 17), (63, 0), (31, 31)];
    for &(i, j) in &points {
        let x = [cell_centre(i, n), cell_centre(j, n)];
        let q = commutator_quadrature(curl, |y| wf.value(y), eps, x, 32, 128)?;
        let d = (spectral.values[i * n + j] - q).abs();
        worst = worst.max(d);
        bad += usize::from(d > 1e-8);
    }
    rows.push(LemmaRow {
        property: "commutator_spectral_vs_quadrature",
        samples: points.len(),
        violations: bad,
        worst,
        passed: bad == 0,
    });

    let mut out = RunOutput::default();
    for r in &rows {
        out.metric(format!("violations:{}", r.property), r.violations as f64);
        if !r.passed {
            out.failed_checks.push(r.property.to_string());
        }
    }
    out.csv("lemma_suite.csv", &rows)?;
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
struct SweepRow {
    experiment: &'static str,
    axis: SweepAxis,
    value: f64,
    run: String,
    seed: u64,
    status: &'static str,
    metric: String,
    metric_value: f64,
    error: String,
}

fn apply_axis(base: &RunConfig, sweep: &SweepConfig, value: f64) -> Result<RunConfig> {
    let mut cfg = base.clone();
    cfg.sweep = None;
    let whole = |v: f64, field: &str| -> Result<usize> {
        if v >= 1.0 && v.fract() == 0.0 {
            Ok(v as usize)
        } else {
            Err(Error::config(field, format!("{v} is not a positive integer")))
        }
    };
    match sweep.axis {
        SweepAxis::Dt => {
            cfg.solver.dt = value;
            if cfg.solver.noise_dt.is_none() {
                // Common noise across the sweep: increments at the finest step.
                let finest = sweep.values.iter().copied().fold(f64::INFINITY, f64::min);
                let factor = if sweep.experiment == Experiment::DossCheck && cfg.doss.self_convergence {
                    2.0
                } else {
                    1.0
                };
                cfg.solver.noise_dt = Some(finest / factor);
            }
        }
        SweepAxis::N => cfg.grid.n = whole(value, "sweep.values")?,
        SweepAxis::M => cfg.solver.realizations = whole(value, "sweep.values")?,
        SweepAxis::Eps => match sweep.experiment {
            Experiment::StabilitySweep => cfg.stability.eps = vec![value],
            Experiment::CommutatorScan => cfg.commutator.eps = vec![value],
            Experiment::Simulate | Experiment::PicardTrace | Experiment::DossCheck => cfg.kernel.eps = value,
            Experiment::KernelBuild | Experiment::LemmaSuite => {
                return Err(Error::config("sweep.axis", "eps has no meaning for this experiment"))
            }
        },
    }
    Ok(cfg)
}

/// One run per swept value with a common seed; failures are recorded and
/// the sweep continues. Per-run artifacts go under `run-XXX/`.
pub fn run_sweep(cfg: &RunConfig) -> Result<RunOutput> {
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::config("sweep", "missing [sweep] table"))?;
    if sweep.values.is_empty() {
        return Err(Error::config("sweep.values", "empty list"));
    }
    let mut out = RunOutput::default();
    let mut rows = Vec::new();
    for (i, &value) in sweep.values.iter().enumerate() {
        let run = format!("run-{i:03}");
        let result = apply_axis(cfg, sweep, value).and_then(|c| run_experiment(sweep.experiment, &c));
        let base = SweepRow {
            experiment: sweep.experiment.name(),
            axis: sweep.axis,
            value,
            run: run.clone(),
            seed: cfg.seed,
            status: "ok",
            metric: String::new(),
            metric_value: f64::NAN,
            error: String::new(),
        };
        match result {
            Ok(r) => {
                for (name, v) in &r.metrics {
                    rows.push(SweepRow {
                        metric: name.clone(),
                        metric_value: *v,
                        ..base.clone()
                    });
                    out.metric(format!("{run}:{name}"), *v);
                }
                for a in r.artifacts {
                    out.artifacts.push(Artifact {
                        name: format!("{run}/{}", a.name),
                        bytes: a.bytes,
                    });
                }
                out.failed_checks.extend(r.failed_checks.into_iter().map(|c| format!("{run}:{c}")));
            }
            Err(e) => rows.push(SweepRow {
                status: "failed",
                error: e.to_string(),
                ..base
            }),
        }
    }
    out.csv("sweep.csv", &rows)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub experiment: String,
    pub seed: u64,
    pub config_sha256: String,
    /// Effective configuration (after command-line overrides).
    pub config: String,
    pub formats: BTreeMap<String, String>,
    pub files: Vec<ManifestEntry>,
}

/// Label of a run in the manifest: an experiment name or `sweep`.
pub const SWEEP_LABEL: &str = "sweep";

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Column documentation for every table the tool writes.
pub fn schema() -> serde_json::Value {
    serde_json::json!({
        "diagnostics.csv": {
            "record": "record index", "time": "time of the record",
            "metric": "occupancy_max_deviation | occupancy_sampling_floor | vorticity_sup_ratio",
            "value": "metric value"
        },
        "flow_summary.csv": {
            "time": "time of the record",
            "mean_displacement": "mean torus distance of markers from their labels",
            "max_displacement": "largest torus distance of a marker from its label"
        },
        "picard.csv": {
            "window": "window index", "start_time": "window start", "steps": "steps in the window",
            "halvings": "times the window was halved", "iteration": "Picard iterate k",
            "sup_distance": "sup-in-time distance between iterates k+1 and k"
        },
        "picard_trace.csv": {
            "iteration": "iterate k", "record": "record within the window", "time": "absolute time",
            "distance": "running sup distance between iterates k+1 and k",
            "rho": "tail sup over iterates >= k"
        },
        "stability.csv": {
            "eps": "mollifier width", "kernel_l1_distance": "L1 distance of mollified and exact kernels",
            "flow_distance": "sup-in-time flow distance", "bound": "comparison-function bound at the horizon"
        },
        "weak_convergence.csv": {
            "eps": "mollifier width", "record": "record index", "time": "time",
            "test_function": "test function index",
            "mean_abs_difference": "mean over realizations of |<phi, xi_eps> - <phi, xi>|"
        },
        "commutator.csv": {
            "case": "random (v, w) pair index", "p": "Lebesgue exponent", "eps": "mollifier width",
            "norm": "L^p norm of the commutator", "bound": "explicit constant times |Dv|_p |w|_inf"
        },
        "doss.csv": {
            "dt": "step", "equivalence_distance": "flow distance of psi o tilde-flow and the direct flow",
            "self_convergence_error": "flow distance of direct solves at dt and dt/2 (empty if skipped)",
            "det_deviation": "max |det D psi - 1|"
        },
        "doss_profile.csv": {
            "record": "record index", "time": "time", "distance": "marker-averaged distance at the record"
        },
        "kernel_check.csv": {
            "x1": "point", "x2": "point", "green_split": "Green function, split evaluation",
            "green_fourier": "Green function, Fourier series (kmax 256)",
            "green_difference": "absolute difference",
            "kernel_table_difference": "max component difference of tabulated and split kernels"
        },
        "lemma_suite.csv": {
            "property": "checked property", "samples": "comparisons made", "violations": "failed comparisons",
            "worst": "extreme margin observed", "passed": "true when there are no violations"
        },
        "sweep.csv": {
            "experiment": "swept experiment", "axis": "dt | n | m | eps", "value": "axis value",
            "run": "subdirectory holding the run's files", "seed": "common seed", "status": "ok | failed",
            "metric": "summary metric name", "metric_value": "summary metric value",
            "error": "error message of a failed run"
        },
        "summary.json": "scalar metrics of the run",
        "manifest.json": "tool version, effective configuration, seed and SHA-256 of every other file",
        "diagnostic.json": "written instead of results on failure: exit_code, kind, message and details"
    })
}

/// Write artifacts, summary, schema and the manifest into `dir`.
pub fn write_run(dir: &Path, label: &str, cfg: &RunConfig, output: &RunOutput) -> Result<Manifest> {
    std::fs::create_dir_all(dir)?;
    let mut files: Vec<(String, Vec<u8>)> = output
        .artifacts
        .iter()
        .map(|a| (a.name.clone(), a.bytes.clone()))
        .collect();
    let mut summary = serde_json::to_vec_pretty(&serde_json::json!({
        "experiment": label,
        "metrics": output.metrics,
        "failed_checks": output.failed_checks,
    }))
    .map_err(|e| Error::Format(e.to_string()))?;
    summary.push(b'\n');
    files.push(("summary.json".into(), summary));
    let mut schema_bytes = serde_json::to_vec_pretty(&schema()).map_err(|e| Error::Format(e.to_string()))?;
    schema_bytes.push(b'\n');
    files.push(("schema.json".into(), schema_bytes));
    let mut entries = Vec::new();
    for (name, bytes) in &files {
        let path = dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, bytes)?;
        entries.push(ManifestEntry {
            path: name.clone(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len(),
        });
    }
    let config = cfg.to_toml();
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        experiment: label.into(),
        seed: cfg.seed,
        config_sha256: sha256_hex(config.as_bytes()),
        config,
        formats: BTreeMap::from([
            ("flow".to_string(), "SEFLOW01 v1".to_string()),
            ("kernel_table".to_string(), "SEKTAB01 v2".to_string()),
        ]),
        files: entries,
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    bytes.push(b'\n');
    std::fs::write(dir.join("manifest.json"), bytes)?;
    Ok(manifest)
}

pub fn write_diagnostic(dir: &Path, e: &Error) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut bytes =
        serde_json::to_vec_pretty(&Diagnostic::from_error(e)).map_err(|e| Error::Format(e.to_string()))?;
    bytes.push(b'\n');
    std::fs::write(dir.join("diagnostic.json"), bytes)?;
    Ok(())
}

/// Parse an experiment label as written in manifests.
pub fn parse_label(label: &str) -> Option<Option<Experiment>> {
    if label == SWEEP_LABEL {
        return Some(None);
    }
    serde_json::from_value(serde_json::Value::String(label.into())).ok().map(Some)
}

/// Run the experiment or sweep named by `label`.
pub fn run_label(label: Option<Experiment>, cfg: &RunConfig) -> Result<RunOutput> {
    match label {
        Some(e) => run_experiment(e, cfg),
        None => run_sweep(cfg),
    }
}

/// Files whose hash differs from the manifest after re-running it into `dir`.
pub fn reproduce(manifest_path: &Path, dir: &Path) -> Result<Vec<PathBuf>> {
    let text = std::fs::read_to_string(manifest_path)?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
    let label = parse_label(&manifest.experiment)
        .ok_or_else(|| Error::Format(format!("unknown experiment `{}`", manifest.experiment)))?;
    let cfg = RunConfig::from_toml(&manifest.config)?;
    let output = run_label(label, &cfg)?;
    let fresh = write_run(dir, &manifest.experiment, &cfg, &output)?;
    let mut differing = Vec::new();
    for old in &manifest.files {
        match fresh.files.iter().find(|f| f.path == old.path) {
            Some(f) if f.sha256 == old.sha256 => {}
            _ => differing.push(dir.join(&old.path)),
        }
    }
    Ok(differing)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> RunConfig {
        RunConfig::from_toml(
            r#"
seed = 5
[grid]
n = 8
[noise]
variant = "constant_pair"
c = 0.1
[xi0]
preset = "constant"
value = 0.0
[solver]
dt = 0.0625
horizon = 0.25
realizations = 2
[simulate]
occupancy_cells = 2
"#,
        )
        .unwrap()
    }

    #[test]
    fn exit_codes_follow_error_kind() {
        assert_eq!(exit_code(&Error::config("x", "y")), 2);
        assert_eq!(
            exit_code(&Error::BlowUp {
                step: 1,
                realization: 0,
                marker: 0
            }),
            3
        );
        let nc = Error::NoConvergence {
            iterations: 3,
            last: 1.0,
            trace: vec![1.0],
        };
        assert_eq!(exit_code(&nc), 4);
        assert_eq!(Diagnostic::from_error(&nc).trace, Some(vec![1.0]));
        assert_eq!(exit_code(&Error::SeedMismatch(String::new())), 1);
    }

    #[test]
    fn simulate_zero_vorticity_is_translation() {
        let cfg = base();
        let out = run_experiment(Experiment::Simulate, &cfg).unwrap();
        let bytes = &out.artifacts.iter().find(|a| a.name == "flow.bin").unwrap().bytes;
        let flow = FlowState::read_from(bytes.as_slice()).unwrap();
        let driver = cfg.driver_at(cfg.solver.dt).unwrap();
        for t in 0..flow.records() {
            let w = driver.path_value(1, t as u64);
            let shift = [0.1f64.sqrt() * w[0], 0.1f64.sqrt() * w[1]];
            for (p, l) in flow.at(t, 1).iter().zip(flow.labels()) {
                let want = crate::torus::wrap([l[0] + shift[0], l[1] + shift[1]]);
                assert!(crate::torus::torus_dist(*p, want) < 1e-12);
            }
        }
        assert_eq!(out.metrics["vorticity_sup_ratio"], 0.0);
    }

    #[test]
    fn sweep_axis_rewrites_config() {
        let mut cfg = base();
        cfg.sweep = Some(SweepConfig {
            experiment: Experiment::DossCheck,
            axis: SweepAxis::Dt,
            values: vec![0.125, 0.0625],
        });
        let s = cfg.sweep.clone().unwrap();
        let c = apply_axis(&cfg, &s, 0.125).unwrap();
        assert_eq!(c.solver.dt, 0.125);
        assert_eq!(c.solver.noise_dt, Some(0.03125));
        let bad = SweepConfig {
            experiment: Experiment::Simulate,
            axis: SweepAxis::N,
            values: vec![2.5],
        };
        assert!(apply_axis(&cfg, &bad, 2.5).is_err());
    }

    #[test]
    fn failed_sweep_runs_are_recorded() {
        let mut cfg = base();
        cfg.sweep = Some(SweepConfig {
            experiment: Experiment::Simulate,
            axis: SweepAxis::N,
            values: vec![8.0, 6.0],
        });
        let out = run_sweep(&cfg).unwrap();
        let table = String::from_utf8(out.artifacts.last().unwrap().bytes.clone()).unwrap();
        assert!(table.contains(",failed,"), "{table}");
        assert!(table.contains(",ok,"));
    }

    #[test]
    fn labels_round_trip() {
        for e in [Experiment::Simulate, Experiment::DossCheck, Experiment::LemmaSuite] {
            assert_eq!(parse_label(e.name()), Some(Some(e)));
        }
        assert_eq!(parse_label(SWEEP_LABEL), Some(None));
        assert_eq!(parse_label("nope"), None);
    }

    #[test]
    fn doss_drivers_share_noise() {
        let cfg = base();
        let (coarse, fine) = doss_drivers(&cfg).unwrap();
        let fine = fine.unwrap();
        assert_eq!(coarse.dt(), cfg.solver.dt);
        let a = coarse.increments(0, 1);
        let (b, c) = (fine.increments(0, 2), fine.increments(0, 3));
        assert!((a[0] - b[0] - c[0]).abs() < 1e-15);
    }
}
