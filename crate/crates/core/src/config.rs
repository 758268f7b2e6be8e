//! Run configuration: a TOML document with one table per concern.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::commutator::CELLS_ACROSS_SUPPORT;
use crate::error::{Error, Result};
use crate::flow::{DriftMode, PicardConfig, Scheme, SolverConfig};
use crate::kernel::GreenSplitConfig;
use crate::noise::{check_a_identity, BrownianDriver, NoiseBasis};
use crate::vorticity::{Deposit, FlowMethod, InitialVorticity};

/// Tolerance on `max |a(x) - C I|` accepted at validation.
const A_IDENTITY_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub grid: GridConfig,
    #[serde(default)]
    pub kernel: KernelConfig,
    pub noise: NoiseBasis,
    pub xi0: InitialVorticity,
    pub solver: SolverSection,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub picard_trace: PicardTraceConfig,
    #[serde(default)]
    pub stability: StabilityConfig,
    #[serde(default)]
    pub commutator: CommutatorConfig,
    #[serde(default)]
    pub doss: DossConfig,
    #[serde(default)]
    pub lemma: LemmaConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Markers per side.
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelConfig {
    pub table_size: usize,
    pub fourier_cutoff: u32,
    pub image_cutoff: u32,
    pub tail_tolerance: f64,
    /// Mollification width used by `simulate` (0 = exact kernel).
    pub eps: f64,
    /// Table written by `kernel-build`, loaded instead of rebuilding.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub table_path: Option<PathBuf>,
}

impl Default for KernelConfig {
    fn default() -> Self {
        let g = GreenSplitConfig::default();
        Self {
            table_size: 256,
            fourier_cutoff: g.fourier_cutoff,
            image_cutoff: g.image_cutoff,
            tail_tolerance: g.tail_tolerance,
            eps: 0.0,
            table_path: None,
        }
    }
}

impl KernelConfig {
    pub fn split(&self) -> GreenSplitConfig {
        GreenSplitConfig {
            fourier_cutoff: self.fourier_cutoff,
            image_cutoff: self.image_cutoff,
            tail_tolerance: self.tail_tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub dt: f64,
    pub horizon: f64,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    pub realizations: usize,
    #[serde(default)]
    pub realization_start: u64,
    #[serde(default = "one")]
    pub record_stride: usize,
    #[serde(default)]
    pub picard: PicardConfig,
    #[serde(default = "default_drift")]
    pub drift: DriftMode,
    /// Step of the underlying Brownian increments; solver steps must be
    /// integer multiples of it. Defaults to `dt`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_dt: Option<f64>,
}

fn default_scheme() -> Scheme {
    Scheme::EulerMaruyama
}

fn default_drift() -> DriftMode {
    DriftMode::ParticleSum
}

fn one() -> usize {
    1
}

impl SolverSection {
    /// Solver settings; a Picard window longer than the horizon is cut to it.
    pub fn solver_config(&self) -> SolverConfig {
        let mut picard = self.picard;
        if self.horizon > 0.0 && picard.window > self.horizon {
            picard.window = self.horizon;
        }
        SolverConfig {
            dt: self.dt,
            horizon: self.horizon,
            scheme: self.scheme,
            picard,
            drift: self.drift,
            realizations: self.realizations,
            realization_start: self.realization_start,
            record_stride: self.record_stride,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub method: FlowMethod,
    pub deposit: Deposit,
    /// Deposit grid side; defaults to the marker grid.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deposit_grid: Option<usize>,
    /// Coarse cells per side of the occupancy check.
    pub occupancy_cells: usize,
    /// Moment order of the Hölder regression (skipped when too few scales).
    pub holder_p: f64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            method: FlowMethod::Picard,
            deposit: Deposit::CloudInCell,
            deposit_grid: None,
            occupancy_cells: 4,
            holder_p: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PicardTraceConfig {
    pub iterations: usize,
}

impl Default for PicardTraceConfig {
    fn default() -> Self {
        Self { iterations: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StabilityConfig {
    pub eps: Vec<f64>,
    pub method: FlowMethod,
    /// Point pairs used to estimate the log-Lipschitz constant.
    pub log_lipschitz_pairs: usize,
    /// Random test functions for the weak comparison.
    pub test_functions: usize,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            eps: (3..=7).map(|k| 2f64.powi(-k)).collect(),
            method: FlowMethod::Direct,
            log_lipschitz_pairs: 200,
            test_functions: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CommutatorConfig {
    /// Spectral grid side.
    pub n: usize,
    pub eps: Vec<f64>,
    pub p: Vec<f64>,
    /// Number of random (velocity, scalar) pairs.
    pub cases: usize,
    /// Degree of the random trig stream function and scalar.
    pub degree: u32,
}

impl Default for CommutatorConfig {
    fn default() -> Self {
        Self {
            n: 128,
            eps: (2..=5).map(|k| 2f64.powi(-k)).collect(),
            p: vec![1.0, 2.0, 4.0],
            cases: 2,
            degree: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DossConfig {
    /// Also solve directly at `dt / 2` to report the self-convergence error.
    pub self_convergence: bool,
}

impl Default for DossConfig {
    fn default() -> Self {
        Self { self_convergence: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LemmaConfig {
    /// Random parameter samples per property.
    pub samples: usize,
    /// Largest iterate index checked against the recursion oracle.
    pub max_iterate: u32,
}

impl Default for LemmaConfig {
    fn default() -> Self {
        Self {
            samples: 1000,
            max_iterate: 12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Dt,
    N,
    M,
    Eps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub experiment: Experiment,
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Simulate,
    PicardTrace,
    StabilitySweep,
    CommutatorScan,
    DossCheck,
    KernelBuild,
    LemmaSuite,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Simulate => "simulate",
            Experiment::PicardTrace => "picard-trace",
            Experiment::StabilitySweep => "stability-sweep",
            Experiment::CommutatorScan => "commutator-scan",
            Experiment::DossCheck => "doss-check",
            Experiment::KernelBuild => "kernel-build",
            Experiment::LemmaSuite => "lemma-suite",
        }
    }
}

/// Dotted key at byte `at`: the enclosing `[table]` plus the key on that line.
fn field_at(text: &str, at: usize) -> String {
    let before = &text[..at.min(text.len())];
    let line_start = before.rfind('\n').map_or(0, |i| i + 1);
    let line = text[line_start..].lines().next().unwrap_or("").trim();
    let table = before
        .lines()
        .rev()
        .map(str::trim)
        .find(|l| l.starts_with('['))
        .map(|l| l.trim_matches(|c| c == '[' || c == ']').trim().to_string());
    let key = line.split_once('=').map(|(k, _)| k.trim().to_string());
    let line_no = before.lines().count().max(1);
    match (table, key) {
        (_, None) if line.starts_with('[') => line.trim_matches(|c| c == '[' || c == ']').trim().to_string(),
        (Some(t), Some(k)) => format!("{t}.{k}"),
        (None, Some(k)) => k,
        _ => format!("line {line_no}"),
    }
}

fn positive(v: f64, field: &str) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(field, "must be positive and finite"))
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let field = e
                .span()
                .map(|s| field_at(text, s.start))
                .unwrap_or_else(|| "config".into());
            Error::config(field, e.message().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("--config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Canonical TOML rendering (used for hashing and replay).
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Step of the Brownian increments.
    pub fn fine_dt(&self) -> f64 {
        self.solver.noise_dt.unwrap_or(self.solver.dt)
    }

    /// Driver stepping at `dt`, aggregated from the fine increments.
    pub fn driver_at(&self, dt: f64) -> Result<BrownianDriver> {
        let fine = BrownianDriver::new(self.seed, self.noise.mode_count(), self.fine_dt())?;
        let ratio = dt / self.fine_dt();
        let factor = ratio.round();
        if factor < 1.0 || (ratio - factor).abs() > 1e-9 * ratio {
            return Err(Error::config(
                "solver.noise_dt",
                format!("step {dt} is not a multiple of the noise step {}", self.fine_dt()),
            ));
        }
        fine.coarsened(factor as usize)
    }

    /// Checks run before any computation for `experiment`.
    pub fn validate(&self, experiment: Experiment) -> Result<()> {
        let n = self.grid.n;
        if n < 2 {
            return Err(Error::config("grid.n", "need at least 2 markers per side"));
        }
        if self.kernel.table_size < 16 {
            return Err(Error::config("kernel.table_size", "must be at least 16"));
        }
        if !(self.kernel.eps >= 0.0 && self.kernel.eps <= 0.5) {
            return Err(Error::config("kernel.eps", "must lie in [0, 1/2]"));
        }
        self.kernel.split().validate()?;
        self.noise.validate()?;
        let (_, deviation) = check_a_identity(&self.noise, 8);
        if deviation > A_IDENTITY_TOLERANCE {
            return Err(Error::config(
                "noise",
                format!("covariance a(x) deviates from C I by {deviation:e}"),
            ));
        }
        if let Some(f) = self.solver.noise_dt {
            positive(f, "solver.noise_dt")?;
        }
        self.xi0.validate()?;
        let solver = self.solver.solver_config();
        solver.validate()?;
        self.driver_at(self.solver.dt)?;
        if let DriftMode::GridSpectral { grid } = solver.drift {
            if grid < 8 {
                return Err(Error::config("solver.drift.grid", "must be at least 8"));
            }
            if self.kernel.eps > 0.0 && self.kernel.eps * (grid as f64) < 1.0 {
                return Err(Error::config("kernel.eps", "mollifier narrower than one drift-grid cell"));
            }
        }
        match experiment {
            Experiment::Simulate => {
                let s = &self.simulate;
                let cells = s.occupancy_cells;
                if cells == 0 || 4 * cells > n || !n.is_multiple_of(cells) {
                    return Err(Error::config(
                        "simulate.occupancy_cells",
                        format!("must divide grid.n = {n} and be at most a quarter of it"),
                    ));
                }
                if s.deposit_grid == Some(0) {
                    return Err(Error::config("simulate.deposit_grid", "must be positive"));
                }
                if !(s.holder_p >= 2.0) {
                    return Err(Error::config("simulate.holder_p", "must be at least 2"));
                }
            }
            Experiment::PicardTrace => {
                if self.picard_trace.iterations < 2 {
                    return Err(Error::config("picard_trace.iterations", "need at least 2"));
                }
            }
            Experiment::StabilitySweep => {
                let s = &self.stability;
                if s.eps.is_empty() {
                    return Err(Error::config("stability.eps", "empty list"));
                }
                for &e in &s.eps {
                    if !(e > 0.0 && e <= 0.5) {
                        return Err(Error::config("stability.eps", format!("{e} outside (0, 1/2]")));
                    }
                    if let DriftMode::GridSpectral { grid } = solver.drift {
                        if e * (grid as f64) < 1.0 {
                            return Err(Error::config(
                                "stability.eps",
                                format!("{e} is narrower than one cell of the {grid} drift grid"),
                            ));
                        }
                    }
                }
                if s.log_lipschitz_pairs == 0 {
                    return Err(Error::config("stability.log_lipschitz_pairs", "must be positive"));
                }
            }
            Experiment::CommutatorScan => {
                let c = &self.commutator;
                if c.eps.is_empty() || c.p.is_empty() || c.cases == 0 {
                    return Err(Error::config("commutator", "eps, p and cases must be non-empty"));
                }
                for &e in &c.eps {
                    if !(e > 0.0 && e <= 0.5) {
                        return Err(Error::config("commutator.eps", format!("{e} outside (0, 1/2]")));
                    }
                    if e * (c.n as f64) < CELLS_ACROSS_SUPPORT {
                        return Err(Error::config(
                            "commutator.eps",
                            format!("{e} spans fewer than {CELLS_ACROSS_SUPPORT} cells of the {} grid", c.n),
                        ));
                    }
                }
                for &p in &c.p {
                    if !(p >= 1.0 && p.is_finite()) {
                        return Err(Error::config("commutator.p", format!("{p} outside [1, inf)")));
                    }
                }
                if c.degree == 0 || c.degree > 4 {
                    return Err(Error::config("commutator.degree", "must lie in 1..=4"));
                }
            }
            Experiment::DossCheck => {
                if self.doss.self_convergence && self.solver.noise_dt.is_some() {
                    self.driver_at(self.solver.dt / 2.0).map_err(|_| {
                        Error::config("solver.noise_dt", "self-convergence needs increments at dt / 2")
                    })?;
                }
            }
            Experiment::KernelBuild => {}
            Experiment::LemmaSuite => {
                if self.lemma.samples == 0 || self.lemma.max_iterate == 0 {
                    return Err(Error::config("lemma", "samples and max_iterate must be positive"));
                }
            }
        }
        Ok(())
    }
}
