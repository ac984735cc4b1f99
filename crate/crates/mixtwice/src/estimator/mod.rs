//! Constrained maximum-likelihood estimation of the two mixing distributions.
//!
//! The estimate maximizes the marginal log-likelihood of all units over
//! (g, h) subject to simplex constraints on both vectors and unimodality of
//! g about the null grid point, via an augmented-Lagrangian method with a
//! BFGS inner solver driven by the analytic gradient.

mod objective;
mod solver;

use ndarray::Array2;
use rand::Rng;

use crate::densities::ComponentTensor;
use crate::error::{Error, Result};
use crate::rng_util::derive_rng;

pub(crate) use objective::{CollapsedSource, LikelihoodEngine, UnitSource};
pub use objective::{pairwise_sum, LIKELIHOOD_FLOOR};
use solver::{solve_constrained, ConstraintSet, SolveOutcome};

/// Tolerance on the simplex and ordering invariants of a [`MixingPair`].
pub const MIXING_TOL: f64 = 1e-8;

/// The pair of fitted mixing distributions: g over the effect grid
/// (unimodal about the center) and h over the variance grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingPair {
    g: Vec<f64>,
    h: Vec<f64>,
}

impl MixingPair {
    /// Validates simplex membership (1e-8 on the sums), nonnegativity, and
    /// unimodality of g with 1e-8 slack.
    pub fn new(g: Vec<f64>, h: Vec<f64>) -> Result<Self> {
        if g.is_empty() || g.len() % 2 == 0 {
            return Err(Error::InvalidInput(format!(
                "g must have odd length 2K+1, got {}",
                g.len()
            )));
        }
        if h.is_empty() {
            return Err(Error::InvalidInput("h must be nonempty".into()));
        }
        for (name, v) in [("g", &g), ("h", &h)] {
            let sum: f64 = v.iter().sum();
            if (sum - 1.0).abs() > MIXING_TOL {
                return Err(Error::InvalidInput(format!(
                    "{name} sums to {sum}, expected 1"
                )));
            }
            if v.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "{name} has a negative or non-finite entry"
                )));
            }
        }
        let mode = (g.len() - 1) / 2;
        for i in 0..mode {
            if g[i] > g[i + 1] + MIXING_TOL {
                return Err(Error::InvalidInput(format!(
                    "g is not rising toward the mode at position {i}"
                )));
            }
        }
        for i in mode..g.len() - 1 {
            if g[i + 1] > g[i] + MIXING_TOL {
                return Err(Error::InvalidInput(format!(
                    "g is not falling past the mode at position {i}"
                )));
            }
        }
        Ok(Self { g, h })
    }

    pub(crate) fn from_parts_unchecked(g: Vec<f64>, h: Vec<f64>) -> Self {
        Self { g, h }
    }

    /// Uniform g and h; the maximum-entropy feasible point.
    pub fn uniform(n_effects: usize, n_variances: usize) -> Self {
        Self {
            g: vec![1.0 / n_effects as f64; n_effects],
            h: vec![1.0 / n_variances as f64; n_variances],
        }
    }

    pub fn g(&self) -> &[f64] {
        &self.g
    }

    pub fn h(&self) -> &[f64] {
        &self.h
    }

    /// Index of the null point within g.
    pub fn mode_index(&self) -> usize {
        (self.g.len() - 1) / 2
    }
}

/// Optimizer settings. The defaults mirror common augmented-Lagrangian
/// practice: the penalty starts at 10 and grows tenfold whenever an outer
/// iteration fails to shrink the constraint violation fourfold.
#[derive(Debug, Clone)]
pub struct FitOptions {
    pub max_outer: usize,
    /// Outer tolerance on the KKT residual (violation, stationarity,
    /// complementarity).
    pub outer_tol: f64,
    /// Inner BFGS tolerance on the gradient infinity norm.
    pub inner_tol: f64,
    pub max_inner: usize,
    pub initial_penalty: f64,
    pub penalty_growth: f64,
    pub violation_shrink: f64,
    pub max_penalty: f64,
    /// Number of starts; the first is uniform, the rest random feasible.
    pub multi_start: usize,
    /// One round of conditional convex refits (g given h, h given g) after
    /// the joint solve.
    pub polish: bool,
    pub seed: u64,
    /// Optional warm start replacing the uniform initialization.
    pub initial: Option<MixingPair>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_outer: 50,
            outer_tol: 1e-7,
            inner_tol: 1e-8,
            max_inner: 400,
            initial_penalty: 10.0,
            penalty_growth: 10.0,
            violation_shrink: 4.0,
            max_penalty: 1e10,
            multi_start: 1,
            polish: false,
            seed: 0,
            initial: None,
        }
    }
}

/// Outcome of a fit: the mixing pair plus convergence diagnostics.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub mixing: MixingPair,
    pub neg_log_lik: f64,
    pub outer_iterations: usize,
    /// Max violation over all constraints at the solver's final iterate,
    /// before the reporting projection.
    pub constraint_violation: f64,
    pub converged: bool,
    pub subsample_fraction: f64,
    pub seed: u64,
}

fn check_dims(tensor: &ComponentTensor, mix: &MixingPair) -> Result<()> {
    if mix.g().len() != tensor.n_effects() || mix.h().len() != tensor.n_variances() {
        return Err(Error::DimensionMismatch(format!(
            "mixing pair is {}+{} but tensor is {}x{}",
            mix.g().len(),
            mix.h().len(),
            tensor.n_effects(),
            tensor.n_variances()
        )));
    }
    Ok(())
}

/// Negative log-likelihood of the data under the mixing pair.
pub fn neg_log_likelihood(tensor: &ComponentTensor, mix: &MixingPair) -> Result<f64> {
    check_dims(tensor, mix)?;
    Ok(LikelihoodEngine::new(tensor).value(mix.g(), mix.h()))
}

/// Gradient of the negative log-likelihood with respect to (g, h), length
/// (2K+1)+L. Component k is -sum_i u_ik/d_i with u_ik = sum_l h_l c_ikl;
/// component (2K+1)+l is -sum_i v_il/d_i with v_il = sum_k g_k c_ikl.
pub fn gradient(tensor: &ComponentTensor, mix: &MixingPair) -> Result<Vec<f64>> {
    check_dims(tensor, mix)?;
    let engine = LikelihoodEngine::new(tensor);
    let mut grad = vec![0.0; engine.dim()];
    engine.value_grad(mix.g(), mix.h(), &mut grad);
    Ok(grad)
}

/// Hessian of the negative log-likelihood; exactly symmetric by construction.
pub fn hessian(tensor: &ComponentTensor, mix: &MixingPair) -> Result<Array2<f64>> {
    check_dims(tensor, mix)?;
    Ok(LikelihoodEngine::new(tensor).hessian(mix.g(), mix.h()))
}

/// Fits the mixing pair to the full data by constrained maximum likelihood.
pub fn fit(
    stats: &[crate::densities::UnitStats],
    eg: &crate::grids::EffectGrid,
    vg: &crate::grids::VarianceGrid,
    opts: &FitOptions,
) -> Result<FitReport> {
    let tensor = crate::densities::build_component_tensor(stats, eg, vg)?;
    fit_tensor(&tensor, opts)
}

/// Fits against an already-built tensor.
pub fn fit_tensor(tensor: &ComponentTensor, opts: &FitOptions) -> Result<FitReport> {
    let report = fit_source(tensor, opts)?;
    Ok(report)
}

pub(crate) fn fit_source<S: UnitSource>(source: &S, opts: &FitOptions) -> Result<FitReport> {
    let engine = LikelihoodEngine::new(source);
    let (ng, nh) = source.dims();
    let constraints = ConstraintSet::new(ng, nh);

    let mut best: Option<(f64, SolveOutcome)> = None;
    let n_starts = opts.multi_start.max(1);
    for start in 0..n_starts {
        let init = make_start(start, ng, nh, opts)?;
        let outcome = solve_constrained(&engine, &constraints, init, opts);
        let fval = engine.value(&outcome.z[..ng], &outcome.z[ng..]);
        let better = best.as_ref().map_or(true, |(bf, _)| fval < *bf);
        if better {
            best = Some((fval, outcome));
        }
    }
    let (_, mut outcome) = best.expect("at least one start");

    if opts.polish {
        polish(source, &engine, &mut outcome, opts);
    }

    let (g, h) = project_to_feasible(&outcome.z, ng);
    let mixing = MixingPair::from_parts_unchecked(g, h);
    let neg_log_lik = engine.value(mixing.g(), mixing.h());
    Ok(FitReport {
        mixing,
        neg_log_lik,
        outer_iterations: outcome.outer_iterations,
        constraint_violation: outcome.constraint_violation,
        converged: outcome.converged,
        subsample_fraction: 1.0,
        seed: opts.seed,
    })
}

/// Fits on a uniform random subset of units, without replacement.
///
/// The returned pair is intended for posterior computation across all units.
pub fn subsample_fit(
    stats: &[crate::densities::UnitStats],
    eg: &crate::grids::EffectGrid,
    vg: &crate::grids::VarianceGrid,
    fraction: f64,
    seed: u64,
    opts: &FitOptions,
) -> Result<FitReport> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "subsample fraction must be in (0, 1], got {fraction}"
        )));
    }
    let mut opts = opts.clone();
    opts.seed = seed;
    if fraction == 1.0 {
        let mut report = fit(stats, eg, vg, &opts)?;
        report.subsample_fraction = 1.0;
        return Ok(report);
    }
    let m = stats.len();
    let size = (fraction * m as f64).round() as usize;
    let needed = eg.len() + vg.len();
    if size < needed {
        return Err(Error::InvalidInput(format!(
            "subsample of {size} units cannot identify {needed} parameters"
        )));
    }
    let mut rng = derive_rng(seed, 0, b"mxtw-sub");
    let mut idx = rand::seq::index::sample(&mut rng, m, size).into_vec();
    idx.sort_unstable();
    let sub: Vec<_> = idx.iter().map(|&i| stats[i]).collect();
    let tensor = crate::densities::build_component_tensor(&sub, eg, vg)?;
    let mut report = fit_tensor(&tensor, &opts)?;
    report.subsample_fraction = fraction;
    report.seed = seed;
    Ok(report)
}

fn make_start(start: usize, ng: usize, nh: usize, opts: &FitOptions) -> Result<Vec<f64>> {
    if start == 0 {
        if let Some(init) = &opts.initial {
            if init.g().len() != ng || init.h().len() != nh {
                return Err(Error::DimensionMismatch(
                    "initial mixing pair does not match the grids".into(),
                ));
            }
            let mut z = init.g().to_vec();
            z.extend_from_slice(init.h());
            return Ok(z);
        }
        let mut z = vec![1.0 / ng as f64; ng];
        z.extend(std::iter::repeat(1.0 / nh as f64).take(nh));
        return Ok(z);
    }
    let mut rng = derive_rng(opts.seed, start as u64, b"mxtw-sta");
    let mut z = random_unimodal(ng, &mut rng);
    let mut h: Vec<f64> = (0..nh).map(|_| rng.gen_range(0.1..1.0)).collect();
    let hs: f64 = h.iter().sum();
    h.iter_mut().for_each(|x| *x /= hs);
    z.extend(h);
    Ok(z)
}

/// Random point on the simplex satisfying the unimodal ordering: sorted
/// draws are dealt outward from the center.
pub(crate) fn random_unimodal<R: Rng>(ng: usize, rng: &mut R) -> Vec<f64> {
    let mut draws: Vec<f64> = (0..ng).map(|_| rng.gen_range(0.1..1.0)).collect();
    draws.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mode = (ng - 1) / 2;
    let mut g = vec![0.0; ng];
    g[mode] = draws[0];
    let (mut left, mut right) = (1, 1);
    for (rank, &v) in draws.iter().enumerate().skip(1) {
        if rank % 2 == 1 && mode + right <= ng - 1 {
            g[mode + right] = v;
            right += 1;
        } else if mode >= left {
            g[mode - left] = v;
            left += 1;
        } else {
            g[mode + right] = v;
            right += 1;
        }
    }
    let sum: f64 = g.iter().sum();
    g.iter_mut().for_each(|x| *x /= sum);
    g
}

fn polish<S: UnitSource>(
    source: &S,
    engine: &LikelihoodEngine<'_, S>,
    outcome: &mut SolveOutcome,
    opts: &FitOptions,
) {
    let (ng, nh) = source.dims();
    if ng == 1 && nh == 1 {
        return;
    }
    let mut inner_opts = opts.clone();
    inner_opts.polish = false;
    inner_opts.multi_start = 1;
    inner_opts.initial = None;

    let mut z = outcome.z.clone();
    // refit g with h frozen
    {
        let collapsed = CollapsedSource::collapse_h(source, &z[ng..]);
        let sub_engine = LikelihoodEngine::new(&collapsed);
        let sub_constraints = ConstraintSet::new(ng, 1);
        let mut init = z[..ng].to_vec();
        init.push(1.0);
        let sub = solve_constrained(&sub_engine, &sub_constraints, init, &inner_opts);
        z[..ng].copy_from_slice(&sub.z[..ng]);
    }
    // refit h with g frozen
    {
        let collapsed = CollapsedSource::collapse_g(source, &z[..ng]);
        let sub_engine = LikelihoodEngine::new(&collapsed);
        let sub_constraints = ConstraintSet::new(1, nh);
        let mut init = vec![1.0];
        init.extend_from_slice(&z[ng..]);
        let sub = solve_constrained(&sub_engine, &sub_constraints, init, &inner_opts);
        z[ng..].copy_from_slice(&sub.z[1..]);
    }
    let old = engine.value(&outcome.z[..ng], &outcome.z[ng..]);
    let new = engine.value(&z[..ng], &z[ng..]);
    if new < old {
        let constraints = ConstraintSet::new(ng, nh);
        outcome.constraint_violation = constraints.violation(&z);
        outcome.z = z;
    }
}

/// Clamps negatives, enforces the unimodal ordering exactly, and
/// renormalizes each block, so downstream posteriors are exact probabilities.
fn project_to_feasible(z: &[f64], ng: usize) -> (Vec<f64>, Vec<f64>) {
    let mut g: Vec<f64> = z[..ng].iter().map(|&x| x.max(0.0)).collect();
    let mut h: Vec<f64> = z[ng..].iter().map(|&x| x.max(0.0)).collect();
    let mode = (ng - 1) / 2;
    for i in 0..mode {
        g[i + 1] = g[i + 1].max(g[i]);
    }
    for i in mode..ng - 1 {
        g[i + 1] = g[i + 1].min(g[i]);
    }
    for v in [&mut g, &mut h] {
        let sum: f64 = v.iter().sum();
        if sum > 0.0 {
            v.iter_mut().for_each(|x| *x /= sum);
        } else {
            let n = v.len() as f64;
            v.iter_mut().for_each(|x| *x = 1.0 / n);
        }
    }
    (g, h)
}
