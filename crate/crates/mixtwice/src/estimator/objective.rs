//! Negative log-likelihood, gradient, and Hessian over a component tensor.
//!
//! Sums over units are chunked with a fixed layout and combined in chunk
//! order (log-likelihood terms via pairwise summation), so results are
//! bit-identical across runs and thread counts.

use ndarray::Array2;
use rayon::prelude::*;

use crate::densities::ComponentTensor;

/// Units per parallel chunk; fixed so reductions are schedule-independent.
const CHUNK: usize = 4096;

/// Per-unit likelihoods below this floor are clamped before taking logs.
pub const LIKELIHOOD_FLOOR: f64 = f64::MIN_POSITIVE;

/// Anything that can hand out per-unit component slices.
pub(crate) trait UnitSource: Sync {
    fn num_units(&self) -> usize;
    /// (number of effect points, number of variance points)
    fn dims(&self) -> (usize, usize);
    fn log_offset(&self, i: usize) -> f64;
    fn unit_slice<'a>(&'a self, i: usize, scratch: &'a mut [f64]) -> &'a [f64];
}

impl UnitSource for ComponentTensor {
    fn num_units(&self) -> usize {
        self.num_units()
    }
    fn dims(&self) -> (usize, usize) {
        (self.n_effects(), self.n_variances())
    }
    fn log_offset(&self, i: usize) -> f64 {
        self.log_offset(i)
    }
    fn unit_slice<'a>(&'a self, i: usize, scratch: &'a mut [f64]) -> &'a [f64] {
        self.unit_slice(i, scratch)
    }
}

/// A tensor with one mixing dimension contracted away, for conditional
/// refits of g given h (n_h = 1) or h given g (n_g = 1).
pub(crate) struct CollapsedSource {
    data: Vec<f64>,
    m: usize,
    n_g: usize,
    n_h: usize,
    offsets: Vec<f64>,
}

impl CollapsedSource {
    /// Bare source over precomputed per-unit component values.
    #[cfg(test)]
    pub fn from_raw(data: Vec<f64>, m: usize, n_g: usize, n_h: usize) -> Self {
        debug_assert_eq!(data.len(), m * n_g * n_h);
        Self {
            data,
            m,
            n_g,
            n_h,
            offsets: vec![0.0; m],
        }
    }

    /// Contracts the variance axis against `h`; remaining dims (2K+1) x 1.
    pub fn collapse_h<S: UnitSource>(source: &S, h: &[f64]) -> Self {
        let (ng, nh) = source.dims();
        assert_eq!(h.len(), nh);
        let m = source.num_units();
        let mut data = vec![0.0; m * ng];
        data.par_chunks_mut(ng).enumerate().for_each(|(i, out)| {
            let mut scratch = vec![0.0; ng * nh];
            let slice = source.unit_slice(i, &mut scratch);
            for k in 0..ng {
                let row = &slice[k * nh..(k + 1) * nh];
                out[k] = row.iter().zip(h).map(|(&c, &w)| c * w).sum();
            }
        });
        let offsets = (0..m).map(|i| source.log_offset(i)).collect();
        Self {
            data,
            m,
            n_g: ng,
            n_h: 1,
            offsets,
        }
    }

    /// Contracts the effect axis against `g`; remaining dims 1 x L.
    pub fn collapse_g<S: UnitSource>(source: &S, g: &[f64]) -> Self {
        let (ng, nh) = source.dims();
        assert_eq!(g.len(), ng);
        let m = source.num_units();
        let mut data = vec![0.0; m * nh];
        data.par_chunks_mut(nh).enumerate().for_each(|(i, out)| {
            let mut scratch = vec![0.0; ng * nh];
            let slice = source.unit_slice(i, &mut scratch);
            for l in 0..nh {
                let mut acc = 0.0;
                for k in 0..ng {
                    acc += g[k] * slice[k * nh + l];
                }
                out[l] = acc;
            }
        });
        let offsets = (0..m).map(|i| source.log_offset(i)).collect();
        Self {
            data,
            m,
            n_g: 1,
            n_h: nh,
            offsets,
        }
    }
}

impl UnitSource for CollapsedSource {
    fn num_units(&self) -> usize {
        self.m
    }
    fn dims(&self) -> (usize, usize) {
        (self.n_g, self.n_h)
    }
    fn log_offset(&self, i: usize) -> f64 {
        self.offsets[i]
    }
    fn unit_slice<'a>(&'a self, i: usize, _scratch: &'a mut [f64]) -> &'a [f64] {
        let row = self.n_g * self.n_h;
        &self.data[i * row..(i + 1) * row]
    }
}

/// Fixed-tree summation: splitting at len/2 makes the result independent of
/// evaluation order and exactly additive under data duplication (a doubled
/// array always splits into two identical halves).
pub fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        2 => v[0] + v[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
        }
    }
}

pub(crate) struct LikelihoodEngine<'a, S: UnitSource> {
    source: &'a S,
}

impl<'a, S: UnitSource> LikelihoodEngine<'a, S> {
    pub fn new(source: &'a S) -> Self {
        Self { source }
    }

    pub fn dim(&self) -> usize {
        let (ng, nh) = self.source.dims();
        ng + nh
    }

    pub fn num_units(&self) -> usize {
        self.source.num_units()
    }

    /// -sum_i log d_i, with the per-unit likelihood floored.
    pub fn value(&self, g: &[f64], h: &[f64]) -> f64 {
        let m = self.source.num_units();
        let (ng, nh) = self.source.dims();
        let mut logd = vec![0.0; m];
        logd.par_chunks_mut(CHUNK).enumerate().for_each(|(ci, out)| {
            let base = ci * CHUNK;
            let mut scratch = vec![0.0; ng * nh];
            for (j, slot) in out.iter_mut().enumerate() {
                let i = base + j;
                let slice = self.source.unit_slice(i, &mut scratch);
                let mut d = 0.0;
                for k in 0..ng {
                    let row = &slice[k * nh..(k + 1) * nh];
                    let mut u = 0.0;
                    for (l, &c) in row.iter().enumerate() {
                        u += h[l] * c;
                    }
                    d += g[k] * u;
                }
                *slot = d.max(LIKELIHOOD_FLOOR).ln() + self.source.log_offset(i);
            }
        });
        -pairwise_sum(&logd)
    }

    /// Fused objective and gradient; `grad` has length (2K+1)+L.
    pub fn value_grad(&self, g: &[f64], h: &[f64], grad: &mut [f64]) -> f64 {
        let m = self.source.num_units();
        let (ng, nh) = self.source.dims();
        debug_assert_eq!(grad.len(), ng + nh);
        let mut logd = vec![0.0; m];
        let partials: Vec<Vec<f64>> = logd
            .par_chunks_mut(CHUNK)
            .enumerate()
            .map(|(ci, out)| {
                let base = ci * CHUNK;
                let mut part = vec![0.0; ng + nh];
                let mut scratch = vec![0.0; ng * nh];
                let mut u = vec![0.0; ng];
                let mut v = vec![0.0; nh];
                for (j, slot) in out.iter_mut().enumerate() {
                    let i = base + j;
                    let slice = self.source.unit_slice(i, &mut scratch);
                    let mut d = 0.0;
                    v.iter_mut().for_each(|x| *x = 0.0);
                    for k in 0..ng {
                        let row = &slice[k * nh..(k + 1) * nh];
                        let gk = g[k];
                        let mut uk = 0.0;
                        for (l, &c) in row.iter().enumerate() {
                            uk += h[l] * c;
                            v[l] += gk * c;
                        }
                        u[k] = uk;
                        d += gk * uk;
                    }
                    *slot = d.max(LIKELIHOOD_FLOOR).ln() + self.source.log_offset(i);
                    let w = if d > LIKELIHOOD_FLOOR { 1.0 / d } else { 0.0 };
                    for k in 0..ng {
                        part[k] -= u[k] * w;
                    }
                    for l in 0..nh {
                        part[ng + l] -= v[l] * w;
                    }
                }
                part
            })
            .collect();
        grad.iter_mut().for_each(|x| *x = 0.0);
        for part in partials {
            for (gi, pi) in grad.iter_mut().zip(part) {
                *gi += pi;
            }
        }
        -pairwise_sum(&logd)
    }

    /// Hessian of the negative log-likelihood: [[A, B], [B', C]] with
    /// A = sum_i u u' / d², C = sum_i v v' / d², B = sum_i (u v' - c d) / d².
    pub fn hessian(&self, g: &[f64], h: &[f64]) -> Array2<f64> {
        let m = self.source.num_units();
        let (ng, nh) = self.source.dims();
        let dim = ng + nh;
        let chunks = m.div_ceil(CHUNK);
        let partials: Vec<Vec<f64>> = (0..chunks)
            .into_par_iter()
            .map(|ci| {
                let base = ci * CHUNK;
                let hi = (base + CHUNK).min(m);
                // packed: upper triangle of A, full B, upper triangle of C
                let mut part = vec![0.0; dim * dim];
                let mut scratch = vec![0.0; ng * nh];
                let mut u = vec![0.0; ng];
                let mut v = vec![0.0; nh];
                for i in base..hi {
                    let slice = self.source.unit_slice(i, &mut scratch);
                    let mut d = 0.0;
                    v.iter_mut().for_each(|x| *x = 0.0);
                    for k in 0..ng {
                        let row = &slice[k * nh..(k + 1) * nh];
                        let gk = g[k];
                        let mut uk = 0.0;
                        for (l, &c) in row.iter().enumerate() {
                            uk += h[l] * c;
                            v[l] += gk * c;
                        }
                        u[k] = uk;
                        d += gk * uk;
                    }
                    if d <= LIKELIHOOD_FLOOR {
                        continue;
                    }
                    let w2 = 1.0 / (d * d);
                    for k1 in 0..ng {
                        let uk1 = u[k1] * w2;
                        for k2 in k1..ng {
                            part[k1 * dim + k2] += uk1 * u[k2];
                        }
                        let row = &slice[k1 * nh..(k1 + 1) * nh];
                        for l in 0..nh {
                            part[k1 * dim + ng + l] += (u[k1] * v[l] - row[l] * d) * w2;
                        }
                    }
                    for l1 in 0..nh {
                        let vl1 = v[l1] * w2;
                        for l2 in l1..nh {
                            part[(ng + l1) * dim + ng + l2] += vl1 * v[l2];
                        }
                    }
                }
                part
            })
            .collect();
        let mut acc = vec![0.0; dim * dim];
        for part in partials {
            for (a, p) in acc.iter_mut().zip(part) {
                *a += p;
            }
        }
        // mirror the upper triangle so the matrix is exactly symmetric
        let mut out = Array2::zeros((dim, dim));
        for r in 0..dim {
            for c in r..dim {
                let val = acc[r * dim + c];
                out[[r, c]] = val;
                out[[c, r]] = val;
            }
        }
        out
    }
}
