//! Velocity induced by a marker cloud carrying vorticity weights.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{KernelEvaluator, Mollifier};
use crate::spectral::{bilinear, deposit_cic, velocity_with_multiplier, ScalarField, VectorField};

/// How the velocity of a marker cloud is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriftMode {
    /// Direct sum `Σ_j K(x - y_j) w_j` (quadratic cost).
    ParticleSum,
    /// Cloud-in-cell deposit on a `grid x grid` mesh, spectral Biot–Savart,
    /// bilinear gather.
    GridSpectral { grid: usize },
}

/// Marker weights `ξ₀(y_j) h²` for vorticity sampled at the marker labels.
pub fn marker_weights(xi0: &ScalarField) -> Vec<f64> {
    let area = 1.0 / (xi0.n * xi0.n) as f64;
    xi0.values.iter().map(|v| v * area).collect()
}

/// Precomputed state for repeated drift evaluations.
#[derive(Debug, Clone)]
pub struct DriftPlan {
    mode: DriftMode,
    kernel: KernelEvaluator,
    multiplier: Option<Arc<Vec<f64>>>,
}

impl DriftPlan {
    /// The kernel's mollification width (if any) is honoured in both modes.
    pub fn new(mode: DriftMode, kernel: KernelEvaluator) -> Result<Self> {
        let multiplier = match mode {
            DriftMode::ParticleSum => None,
            DriftMode::GridSpectral { grid } => {
                if grid < 4 {
                    return Err(Error::config("solver.drift.grid", "needs at least 4 cells"));
                }
                if kernel.eps() > 0.0 {
                    Some(Arc::new(Mollifier::new(kernel.eps())?.multiplier_table(grid)))
                } else {
                    None
                }
            }
        };
        Ok(Self {
            mode,
            kernel,
            multiplier,
        })
    }

    pub fn mode(&self) -> DriftMode {
        self.mode
    }

    pub fn kernel(&self) -> &KernelEvaluator {
        &self.kernel
    }

    /// Velocity at each target induced by weighted sources. Coincident
    /// source/target pairs contribute nothing; with `exclude_self`, target `i`
    /// also ignores source `i` (the same marker in another iterate). The grid
    /// mode has no singular self-term and ignores the flag.
    pub fn evaluate(
        &self,
        sources: &[[f64; 2]],
        weights: &[f64],
        targets: &[[f64; 2]],
        exclude_self: bool,
        out: &mut [[f64; 2]],
    ) {
        debug_assert_eq!(sources.len(), weights.len());
        debug_assert_eq!(targets.len(), out.len());
        if weights.iter().all(|w| *w == 0.0) {
            out.iter_mut().for_each(|u| *u = [0.0, 0.0]);
            return;
        }
        match self.mode {
            DriftMode::ParticleSum => {
                for (i, (x, u)) in targets.iter().zip(out.iter_mut()).enumerate() {
                    let mut acc = [0.0, 0.0];
                    for (j, (y, w)) in sources.iter().zip(weights).enumerate() {
                        if *w == 0.0 || (exclude_self && i == j) {
                            continue;
                        }
                        let k = self.kernel.kernel_or_zero([x[0] - y[0], x[1] - y[1]]);
                        acc[0] += k[0] * w;
                        acc[1] += k[1] * w;
                    }
                    *u = acc;
                }
            }
            DriftMode::GridSpectral { grid } => {
                let field = self.grid_velocity(grid, sources, weights);
                for (x, u) in targets.iter().zip(out.iter_mut()) {
                    *u = [bilinear(grid, &field.u1, *x), bilinear(grid, &field.u2, *x)];
                }
            }
        }
    }

    /// Mesh velocity of the deposited cloud (grid mode only; the particle
    /// mode samples the sum at cell centres).
    pub fn velocity_field(&self, n: usize, sources: &[[f64; 2]], weights: &[f64]) -> VectorField {
        match self.mode {
            DriftMode::GridSpectral { grid } if grid == n => self.grid_velocity(grid, sources, weights),
            _ => {
                let centres = crate::torus::marker_labels(n);
                let mut out = vec![[0.0, 0.0]; n * n];
                self.evaluate(sources, weights, &centres, false, &mut out);
                VectorField {
                    n,
                    u1: out.iter().map(|u| u[0]).collect(),
                    u2: out.iter().map(|u| u[1]).collect(),
                }
            }
        }
    }

    fn grid_velocity(&self, grid: usize, sources: &[[f64; 2]], weights: &[f64]) -> VectorField {
        let cells = (grid * grid) as f64;
        let values = deposit_cic(grid, sources, weights).into_iter().map(|m| m * cells).collect();
        let xi = ScalarField { n: grid, values };
        match &self.multiplier {
            Some(table) => velocity_with_multiplier(&xi, |k1, k2| {
                let i = k1.rem_euclid(grid as i64) as usize;
                let j = k2.rem_euclid(grid as i64) as usize;
                table[i * grid + j]
            }),
            None => velocity_with_multiplier(&xi, |_, _| 1.0),
        }
    }
}
