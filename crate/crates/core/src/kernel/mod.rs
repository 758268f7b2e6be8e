//! Periodic Biot–Savart kernel `K = ∇⊥G` and its mollified variants.

pub mod green;
pub mod mollifier;
pub mod quadrature;
pub mod table;

use std::f64::consts::PI;
use std::sync::Arc;

pub use green::{
    biot_savart_fourier, biot_savart_split, green_fourier, green_fourier_square, green_split,
    singular_part, GreenSplitConfig,
};
pub use mollifier::{mollify_field, mollify_vector, Mollifier};
pub use quadrature::{
    kernel_l1_distance, kernel_l1_norm, log_lipschitz_numerator, log_lipschitz_ratio, log_lipschitz_sup,
    sample_pairs, LogLipschitzSup, QuadratureEstimate, QuadratureResolution,
};
pub use table::KernelTable;

use crate::error::{Error, Result};
use crate::torus::wrap;
use mollifier::bump_mass_within;

/// Evaluates `K` (exact split, or table + analytic singular part) and,
/// for `eps > 0`, the mollified kernel `K * ρ_eps`.
#[derive(Debug, Clone)]
pub struct KernelEvaluator {
    cfg: GreenSplitConfig,
    table: Option<Arc<KernelTable>>,
    eps: f64,
}

impl KernelEvaluator {
    /// Exact split evaluation (slow; used for oracles and table building).
    pub fn exact(cfg: GreenSplitConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            table: None,
            eps: 0.0,
        })
    }

    pub fn tabulated(table: Arc<KernelTable>) -> Self {
        Self {
            cfg: *table.config(),
            table: Some(table),
            eps: 0.0,
        }
    }

    /// Tabulated evaluator with the process-wide cached table of `size`.
    pub fn with_table_size(size: usize) -> Result<Self> {
        Ok(Self::tabulated(KernelTable::cached(size)?))
    }

    /// Same kernel mollified at width `eps` (`eps = 0` restores the exact kernel).
    pub fn mollified(&self, eps: f64) -> Result<Self> {
        if eps != 0.0 {
            Mollifier::new(eps)?;
        }
        Ok(Self {
            eps,
            ..self.clone()
        })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn config(&self) -> &GreenSplitConfig {
        &self.cfg
    }

    pub fn table(&self) -> Option<&Arc<KernelTable>> {
        self.table.as_ref()
    }

    /// `K - (1/2π) x⊥/|x|²` at a wrapped point.
    #[inline]
    fn remainder(&self, x: [f64; 2]) -> [f64; 2] {
        match &self.table {
            Some(t) => t.remainder(x),
            None => green::kernel_remainder(x, &self.cfg),
        }
    }

    /// Kernel value; errors at the origin when unmollified.
    pub fn kernel(&self, x: [f64; 2]) -> Result<[f64; 2]> {
        let w = wrap(x);
        if self.eps == 0.0 && w[0] == 0.0 && w[1] == 0.0 {
            return Err(Error::Singularity);
        }
        Ok(self.kernel_or_zero(x))
    }

    /// Kernel value with the principal-value convention `K(0) = 0`.
    #[inline]
    pub fn kernel_or_zero(&self, x: [f64; 2]) -> [f64; 2] {
        let w = wrap(x);
        let r2 = w[0] * w[0] + w[1] * w[1];
        if r2 == 0.0 {
            return if self.eps == 0.0 { [0.0, 0.0] } else { self.remainder(w) };
        }
        let rem = self.remainder(w);
        let mut weight = 1.0;
        if self.eps > 0.0 {
            weight = bump_mass_within(r2.sqrt() / self.eps);
        }
        let c = weight / (2.0 * PI * r2);
        [rem[0] - w[1] * c, rem[1] + w[0] * c]
    }

    /// Green function (exact split; the table only stores the kernel).
    pub fn green(&self, x: [f64; 2]) -> Result<f64> {
        green_split(x, &self.cfg)
    }
}

/// Mollified kernel `K * ρ_eps` at `x`.
///
/// The remainder `K - (1/2π)x⊥/|x|²` is harmonic on discs of radius `< 1/2`
/// around cell points and the mollifier is radial, so only the singular part
/// changes: it is weighted by the mollifier mass inside radius `|x|`.
pub fn mollified_kernel(x: [f64; 2], eps: f64, cfg: &GreenSplitConfig) -> Result<[f64; 2]> {
    Mollifier::new(eps)?;
    let ev = KernelEvaluator::exact(*cfg)?.mollified(eps)?;
    Ok(ev.kernel_or_zero(x))
}

/// Spectral evaluation `Σ K̂(k) ρ̂(eps|k|) e^{2πik·x}` over `|k|_inf <= kmax`,
/// with `K̂(k) = -i k⊥/(2π|k|²)`.
pub fn mollified_kernel_spectral(x: [f64; 2], eps: f64, kmax: u32) -> Result<[f64; 2]> {
    let m = Mollifier::new(eps)?;
    let km = kmax as i64;
    let mut out = [0.0, 0.0];
    let mut cache = std::collections::HashMap::new();
    for k1 in -km..=km {
        for k2 in -km..=km {
            if k1 == 0 && k2 == 0 {
                continue;
            }
            let key = k1 * k1 + k2 * k2;
            let rho = *cache.entry(key).or_insert_with(|| m.multiplier(k1, k2));
            let phase = 2.0 * PI * (k1 as f64 * x[0] + k2 as f64 * x[1]);
            // Re[-i (k⊥) e^{iθ}] = k⊥ sin θ
            let s = phase.sin() * rho / (2.0 * PI * key as f64);
            out[0] += -(k2 as f64) * s;
            out[1] += k1 as f64 * s;
        }
    }
    Ok(out)
}
