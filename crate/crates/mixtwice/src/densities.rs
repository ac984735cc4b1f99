//! Sampling densities and the per-unit component density tensor.
//!
//! Entry (i, k, l) of the tensor is the joint density of unit i's summary
//! statistics when its latent effect sits at grid point a_k and its latent
//! variance at grid point b_l. Everything downstream (likelihood, gradient,
//! posterior) is a contraction of this tensor against the mixing vectors.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::grids::{EffectGrid, VarianceGrid};

const LN_2PI: f64 = 1.8378770664093453;
const LN_2: f64 = std::f64::consts::LN_2;

/// Degrees of freedom above which tensor rows are computed in log space and
/// stored relative to a per-unit offset. The chi-square density concentrates
/// so sharply for large nu that linear evaluation underflows off-peak.
const LOG_SPACE_NU: f64 = 300.0;

/// Default memory budget for materializing the tensor; larger problems fall
/// back to recomputing unit slices on the fly.
const DEFAULT_BUDGET_BYTES: usize = 2 << 30;

/// Per-unit summary statistics: effect estimate, squared standard error,
/// degrees of freedom.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitStats {
    pub x: f64,
    pub s2: f64,
    pub nu: f64,
}

impl UnitStats {
    pub fn new(x: f64, s2: f64, nu: f64) -> Result<Self> {
        if !x.is_finite() {
            return Err(Error::InvalidInput(format!("effect estimate {x} is not finite")));
        }
        if !(s2 > 0.0) || !s2.is_finite() {
            return Err(Error::InvalidInput(format!(
                "squared standard error must be positive and finite, got {s2}"
            )));
        }
        if !(nu > 0.0) || !nu.is_finite() {
            return Err(Error::InvalidInput(format!(
                "degrees of freedom must be positive and finite, got {nu}"
            )));
        }
        Ok(Self { x, s2, nu })
    }
}

/// Gaussian density of `x` with the given mean and variance.
pub fn normal_density(x: f64, mean: f64, variance: f64) -> Result<f64> {
    if !(variance > 0.0) {
        return Err(Error::InvalidInput(format!(
            "variance must be positive, got {variance}"
        )));
    }
    let z2 = (x - mean) * (x - mean) / variance;
    Ok((-0.5 * (LN_2PI + variance.ln() + z2)).exp())
}

fn ln_normal_density(x: f64, mean: f64, variance: f64) -> f64 {
    let z2 = (x - mean) * (x - mean) / variance;
    -0.5 * (LN_2PI + variance.ln() + z2)
}

/// Density of s² when nu*s²/sigma² is chi-square(nu) and sigma² = b:
/// `(nu/b) * chisq_pdf(nu*s²/b; nu)`. Real nu > 0 is allowed.
pub fn scaled_chisq_density(s2: f64, b: f64, nu: f64) -> Result<f64> {
    Ok(scaled_chisq_log_density(s2, b, nu)?.exp())
}

/// Log of [`scaled_chisq_density`]; stable for large nu where the linear
/// value under- or overflows.
pub fn scaled_chisq_log_density(s2: f64, b: f64, nu: f64) -> Result<f64> {
    if !(s2 > 0.0) || !(b > 0.0) || !(nu > 0.0) {
        return Err(Error::InvalidInput(format!(
            "scaled chi-square density needs positive arguments, got s2={s2}, b={b}, nu={nu}"
        )));
    }
    let half = 0.5 * nu;
    let t = nu * s2 / b;
    Ok((nu / b).ln() + (half - 1.0) * t.ln() - 0.5 * t - half * LN_2 - ln_gamma(half))
}

fn ln_component(u: &UnitStats, a: f64, b: f64, ln_chi: f64) -> f64 {
    ln_normal_density(u.x, a, b) + ln_chi
}

enum Storage {
    Dense(Vec<f64>),
    /// Slices recomputed on demand; used when the dense tensor would exceed
    /// the memory budget.
    Streamed,
}

/// Configuration for tensor materialization.
#[derive(Debug, Clone, Copy)]
pub struct TensorConfig {
    /// Dense storage is used only when `m * (2K+1) * L * 8` fits this budget.
    pub memory_budget_bytes: usize,
}

impl Default for TensorConfig {
    fn default() -> Self {
        Self {
            memory_budget_bytes: DEFAULT_BUDGET_BYTES,
        }
    }
}

/// The m x (2K+1) x L component density tensor.
///
/// Rows whose degrees of freedom exceed a stability threshold are stored
/// relative to a per-unit log offset: the stored entries are
/// `c_{i,k,l} * exp(-log_offset(i))`. The offset cancels in every ratio the
/// estimator and posterior need and re-enters the log-likelihood additively.
pub struct ComponentTensor {
    m: usize,
    n_effects: usize,
    n_variances: usize,
    storage: Storage,
    log_offsets: Vec<f64>,
    stats: Vec<UnitStats>,
    effect_grid: EffectGrid,
    variance_grid: VarianceGrid,
    /// When set, entries are Gaussian likelihoods at this per-unit known
    /// variance (single dummy variance column, no chi-square factor).
    known_variance: Option<Vec<f64>>,
}

/// Builds the component tensor with the default memory budget.
pub fn build_component_tensor(
    stats: &[UnitStats],
    eg: &EffectGrid,
    vg: &VarianceGrid,
) -> Result<ComponentTensor> {
    ComponentTensor::build_with(stats, eg, vg, &TensorConfig::default())
}

impl ComponentTensor {
    pub fn build(stats: &[UnitStats], eg: &EffectGrid, vg: &VarianceGrid) -> Result<Self> {
        Self::build_with(stats, eg, vg, &TensorConfig::default())
    }

    pub fn build_with(
        stats: &[UnitStats],
        eg: &EffectGrid,
        vg: &VarianceGrid,
        config: &TensorConfig,
    ) -> Result<Self> {
        if stats.is_empty() {
            return Err(Error::InvalidInput("no units supplied".into()));
        }
        for u in stats {
            UnitStats::new(u.x, u.s2, u.nu)?;
        }
        let m = stats.len();
        let n_effects = eg.len();
        let n_variances = vg.len();
        let cells = m * n_effects * n_variances;
        let dense = cells.saturating_mul(8) <= config.memory_budget_bytes;

        let mut tensor = Self {
            m,
            n_effects,
            n_variances,
            storage: Storage::Streamed,
            log_offsets: vec![0.0; m],
            stats: stats.to_vec(),
            effect_grid: eg.clone(),
            variance_grid: vg.clone(),
            known_variance: None,
        };

        if dense {
            let mut data = vec![0.0; cells];
            let row = n_effects * n_variances;
            let offsets: Vec<f64> = data
                .par_chunks_mut(row)
                .enumerate()
                .map(|(i, buf)| tensor.compute_unit(i, None, buf))
                .collect();
            tensor.log_offsets = offsets;
            tensor.storage = Storage::Dense(data);
        } else {
            // one pass just to pin the per-unit offsets
            let offsets: Vec<f64> = (0..m)
                .into_par_iter()
                .map(|i| {
                    if stats[i].nu > LOG_SPACE_NU {
                        let mut buf = vec![0.0; n_effects * n_variances];
                        tensor.compute_unit(i, None, &mut buf)
                    } else {
                        0.0
                    }
                })
                .collect();
            tensor.log_offsets = offsets;
        }
        Ok(tensor)
    }

    /// Likelihood tensor for the known-variance Gaussian model: entry
    /// (i, k, 0) is the normal density of x_i at mean a_k and the supplied
    /// variance of unit i. Used by the oracle baseline; the single-point
    /// variance grid is bookkeeping only.
    pub fn known_variance(
        stats: &[UnitStats],
        sigma2: &[f64],
        eg: &EffectGrid,
    ) -> Result<Self> {
        if stats.is_empty() {
            return Err(Error::InvalidInput("no units supplied".into()));
        }
        if sigma2.len() != stats.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} variances for {} units",
                sigma2.len(),
                stats.len()
            )));
        }
        for &v in sigma2 {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "known variance must be positive and finite, got {v}"
                )));
            }
        }
        let m = stats.len();
        let n_effects = eg.len();
        let mean_sigma2 = sigma2.iter().sum::<f64>() / m as f64;
        let mut data = vec![0.0; m * n_effects];
        data.par_chunks_mut(n_effects)
            .zip(stats.par_iter().zip(sigma2.par_iter()))
            .for_each(|(buf, (u, &v))| {
                for (k, &a) in eg.points().iter().enumerate() {
                    buf[k] = normal_density(u.x, a, v).expect("validated variance");
                }
            });
        Ok(Self {
            m,
            n_effects,
            n_variances: 1,
            storage: Storage::Dense(data),
            log_offsets: vec![0.0; m],
            stats: stats.to_vec(),
            effect_grid: eg.clone(),
            variance_grid: VarianceGrid::from_points(vec![mean_sigma2])?,
            known_variance: Some(sigma2.to_vec()),
        })
    }

    /// Fills `buf` with the scaled entries of unit `i`, returning its log offset.
    fn compute_unit(&self, i: usize, stored_offset: Option<f64>, buf: &mut [f64]) -> f64 {
        debug_assert!(self.known_variance.is_none(), "known-variance tensors are dense");
        let u = &self.stats[i];
        let eff = self.effect_grid.points();
        let vars = self.variance_grid.points();
        let l = vars.len();
        let ln_chi: Vec<f64> = vars
            .iter()
            .map(|&b| scaled_chisq_log_density(u.s2, b, u.nu).expect("validated inputs"))
            .collect();
        if u.nu > LOG_SPACE_NU {
            let mut max_ln = f64::NEG_INFINITY;
            for (k, &a) in eff.iter().enumerate() {
                for (j, &b) in vars.iter().enumerate() {
                    let v = ln_component(u, a, b, ln_chi[j]);
                    buf[k * l + j] = v;
                    max_ln = max_ln.max(v);
                }
            }
            let offset = stored_offset.unwrap_or(max_ln);
            for v in buf.iter_mut() {
                *v = (*v - offset).exp();
            }
            offset
        } else {
            let chi: Vec<f64> = ln_chi.iter().map(|&v| v.exp()).collect();
            for (k, &a) in eff.iter().enumerate() {
                for (j, &b) in vars.iter().enumerate() {
                    buf[k * l + j] = ln_normal_density(u.x, a, b).exp() * chi[j];
                }
            }
            0.0
        }
    }

    pub fn num_units(&self) -> usize {
        self.m
    }

    /// 2K+1.
    pub fn n_effects(&self) -> usize {
        self.n_effects
    }

    /// L.
    pub fn n_variances(&self) -> usize {
        self.n_variances
    }

    pub fn effect_grid(&self) -> &EffectGrid {
        &self.effect_grid
    }

    pub fn variance_grid(&self) -> &VarianceGrid {
        &self.variance_grid
    }

    pub fn stats(&self) -> &[UnitStats] {
        &self.stats
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.storage, Storage::Dense(_))
    }

    /// Log offset of unit i: stored entries are `c * exp(-offset)`.
    pub fn log_offset(&self, i: usize) -> f64 {
        self.log_offsets[i]
    }

    /// Scratch buffer sized for one unit slice.
    pub fn scratch(&self) -> Vec<f64> {
        vec![0.0; self.n_effects * self.n_variances]
    }

    /// Row-major (2K+1) x L slice of unit i (scaled entries).
    ///
    /// Dense tensors return a borrow of their storage; streamed tensors
    /// compute into `scratch`.
    pub fn unit_slice<'a>(&'a self, i: usize, scratch: &'a mut [f64]) -> &'a [f64] {
        let row = self.n_effects * self.n_variances;
        match &self.storage {
            Storage::Dense(data) => &data[i * row..(i + 1) * row],
            Storage::Streamed => {
                self.compute_unit(i, Some(self.log_offsets[i]), scratch);
                &scratch[..row]
            }
        }
    }

    /// Owned (2K+1) x L matrix of unit i's scaled entries.
    pub fn unit_matrix(&self, i: usize) -> Array2<f64> {
        let mut scratch = self.scratch();
        let slice = self.unit_slice(i, &mut scratch);
        Array2::from_shape_vec((self.n_effects, self.n_variances), slice.to_vec())
            .expect("slice has row-major unit shape")
    }

    /// Scaled entry (i, k, l); multiply by `exp(log_offset(i))` for the raw value.
    pub fn entry(&self, i: usize, k: usize, l: usize) -> f64 {
        let mut scratch = self.scratch();
        let slice = self.unit_slice(i, &mut scratch);
        slice[k * self.n_variances + l]
    }
}

/// Mixture likelihood of one unit: `sum_k sum_l g_k h_l c_{k,l}`.
pub fn unit_likelihood(c_slice: ArrayView2<f64>, g: &[f64], h: &[f64]) -> Result<f64> {
    let (nk, nl) = c_slice.dim();
    if g.len() != nk || h.len() != nl {
        return Err(Error::DimensionMismatch(format!(
            "slice is {nk}x{nl} but g has {} and h has {} entries",
            g.len(),
            h.len()
        )));
    }
    let mut acc = 0.0;
    for (k, row) in c_slice.rows().into_iter().enumerate() {
        let mut inner = 0.0;
        for (l, &c) in row.iter().enumerate() {
            inner += h[l] * c;
        }
        acc += g[k] * inner;
    }
    Ok(acc)
}
