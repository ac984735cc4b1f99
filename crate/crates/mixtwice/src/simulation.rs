//! Synthetic two-group experiments and calibration metrics.
//!
//! Replicates draw a null proportion, latent effects and variances, then
//! Gaussian observations for two groups whose mean difference is the latent
//! effect. Per-replicate random streams are derived from (seed, replicate),
//! so replicates parallelize deterministically.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::densities::{build_component_tensor, ComponentTensor, UnitStats};
use crate::error::{Error, Result};
use crate::estimator::{fit_tensor, FitOptions, FitReport};
use crate::grids::{build_effect_grid, build_variance_grid, EffectGrid, VarianceGrid};
use crate::inference::{discovery_list, pi0_estimate, posterior, DiscoveryList, ListRule, PosteriorTable, Statistic};
use crate::rng_util::derive_rng;

/// Boundaries of the null-proportion strata used in aggregate reports.
pub const PI0_STRATA: [f64; 5] = [0.5, 0.625, 0.75, 0.875, 1.0];

/// Shape of the non-null effect distribution. All are finite mixtures of
/// normals; "near-normal" is the shape the calibration experiments call the
/// normal scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GAltShape {
    Spiky,
    NearNormal,
    FlatTop,
    BigVariance,
    Bimodal,
}

impl GAltShape {
    /// (weight, mean, sd) components of the mixture.
    pub fn components(&self) -> Vec<(f64, f64, f64)> {
        match self {
            GAltShape::Spiky => vec![
                (0.4, 0.0, 0.25),
                (0.2, 0.0, 0.5),
                (0.2, 0.0, 1.0),
                (0.2, 0.0, 2.0),
            ],
            GAltShape::NearNormal => vec![(2.0 / 3.0, 0.0, 1.0), (1.0 / 3.0, 0.0, 2.0)],
            GAltShape::FlatTop => {
                let w = 1.0 / 7.0;
                [-1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5]
                    .iter()
                    .map(|&c| (w, c, 0.5))
                    .collect()
            }
            GAltShape::BigVariance => vec![(1.0, 0.0, 4.0)],
            GAltShape::Bimodal => vec![(0.5, -2.0, 1.0), (0.5, 2.0, 1.0)],
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let comps = self.components();
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for &(w, mean, sd) in &comps {
            acc += w;
            if u < acc {
                let z: f64 = StandardNormal.sample(rng);
                return mean + sd * z;
            }
        }
        let &(_, mean, sd) = comps.last().expect("nonempty mixture");
        let z: f64 = StandardNormal.sample(rng);
        mean + sd * z
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.components()
            .iter()
            .map(|&(w, mean, sd)| {
                w * Normal::new(mean, sd).expect("valid component").cdf(x)
            })
            .sum()
    }
}

/// Law of the per-replicate null proportion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pi0Law {
    Fixed(f64),
    /// Uniform on [0.5, 1].
    Uniform,
}

impl Pi0Law {
    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            Pi0Law::Fixed(v) => *v,
            Pi0Law::Uniform => rng.gen_range(0.5..1.0),
        }
    }
}

/// Law of the latent variances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VarianceLaw {
    PointMass(f64),
    TwoPoint { v1: f64, v2: f64, w: f64 },
    InverseGamma { alpha: f64, beta: f64 },
}

impl VarianceLaw {
    /// Two-point mixture of 0.5 and 2 bracketing variance 1.
    pub fn default_two_point() -> Self {
        VarianceLaw::TwoPoint {
            v1: 0.5,
            v2: 2.0,
            w: 0.5,
        }
    }

    /// Inverse-gamma with mean 1 (alpha 3, beta 2).
    pub fn default_inverse_gamma() -> Self {
        VarianceLaw::InverseGamma {
            alpha: 3.0,
            beta: 2.0,
        }
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            VarianceLaw::PointMass(v) => *v,
            VarianceLaw::TwoPoint { v1, v2, w } => {
                if rng.gen::<f64>() < *w {
                    *v1
                } else {
                    *v2
                }
            }
            VarianceLaw::InverseGamma { alpha, beta } => {
                let gamma = Gamma::new(*alpha, 1.0 / *beta).expect("valid parameters");
                1.0 / gamma.sample(rng)
            }
        }
    }
}

/// Generative description of one simulation scenario.
#[derive(Debug, Clone)]
pub struct ScenarioSpec {
    pub shape: GAltShape,
    pub pi0_law: Pi0Law,
    pub variance_law: VarianceLaw,
    pub n_per_group: usize,
    pub m: usize,
    pub replicates: usize,
    pub seed: u64,
}

impl ScenarioSpec {
    /// The calibration default: near-normal effects, pi0 uniform on [0.5, 1],
    /// latent variance fixed at 1.
    pub fn normal_default(m: usize, n_per_group: usize, replicates: usize, seed: u64) -> Self {
        Self {
            shape: GAltShape::NearNormal,
            pi0_law: Pi0Law::Uniform,
            variance_law: VarianceLaw::PointMass(1.0),
            n_per_group,
            m,
            replicates,
            seed,
        }
    }
}

/// Raw two-group observations, rows = units.
#[derive(Debug, Clone)]
pub struct TwoGroupData {
    pub group_a: Array2<f64>,
    pub group_b: Array2<f64>,
}

/// Latent state behind one replicate.
#[derive(Debug, Clone)]
pub struct ReplicateTruth {
    pub theta: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub null_mask: Vec<bool>,
    pub pi0: f64,
}

/// Draws one replicate. The truth (pi0, effects, variances) is drawn before
/// any observation noise, so different sample sizes under the same seed and
/// replicate index share the same latent state.
pub fn generate_replicate(spec: &ScenarioSpec, replicate: usize) -> (TwoGroupData, ReplicateTruth) {
    let mut rng = derive_rng(spec.seed, replicate as u64, b"mxtw-rep");
    let m = spec.m;
    let n = spec.n_per_group;

    let pi0 = spec.pi0_law.draw(&mut rng);
    let mut theta = vec![0.0; m];
    let mut null_mask = vec![false; m];
    for i in 0..m {
        let u: f64 = rng.gen();
        if u < pi0 {
            null_mask[i] = true;
        } else {
            theta[i] = spec.shape.sample(&mut rng);
            // a continuous draw of exactly zero keeps the unit null
            null_mask[i] = theta[i] == 0.0;
        }
    }
    let sigma2: Vec<f64> = (0..m).map(|_| spec.variance_law.draw(&mut rng)).collect();

    let mut group_a = Array2::zeros((m, n));
    let mut group_b = Array2::zeros((m, n));
    for i in 0..m {
        // per-observation variance sigma² * n/2 makes the sampling variance
        // of the mean difference equal sigma²
        let tau = (sigma2[i] * n as f64 / 2.0).sqrt();
        for j in 0..n {
            let z: f64 = StandardNormal.sample(&mut rng);
            group_a[[i, j]] = theta[i] + tau * z;
        }
        for j in 0..n {
            let z: f64 = StandardNormal.sample(&mut rng);
            group_b[[i, j]] = tau * z;
        }
    }

    (
        TwoGroupData { group_a, group_b },
        ReplicateTruth {
            theta,
            sigma2,
            null_mask,
            pi0,
        },
    )
}

/// Reduces each unit's two groups to (difference of means, squared standard
/// error of the difference from the pooled variance, degrees of freedom).
pub fn summarize(data: &TwoGroupData) -> Result<Vec<UnitStats>> {
    let (m, n_a) = data.group_a.dim();
    let (mb, n_b) = data.group_b.dim();
    if mb != m {
        return Err(Error::DimensionMismatch(format!(
            "group A has {m} units but group B has {mb}"
        )));
    }
    if n_a < 2 || n_b < 2 {
        return Err(Error::InvalidInput(format!(
            "each group needs at least 2 observations, got {n_a} and {n_b}"
        )));
    }
    let nu = (n_a + n_b - 2) as f64;
    (0..m)
        .map(|i| {
            let a = data.group_a.row(i);
            let b = data.group_b.row(i);
            let mean_a = a.sum() / n_a as f64;
            let mean_b = b.sum() / n_b as f64;
            let ss_a: f64 = a.iter().map(|&v| (v - mean_a) * (v - mean_a)).sum();
            let ss_b: f64 = b.iter().map(|&v| (v - mean_b) * (v - mean_b)).sum();
            let pooled = (ss_a + ss_b) / nu;
            let s2 = pooled * (1.0 / n_a as f64 + 1.0 / n_b as f64);
            UnitStats::new(mean_a - mean_b, s2, nu)
        })
        .collect()
}

/// The known-variance oracle baseline: fits g alone by the same constrained
/// MLE with the variance mixture frozen at the supplied truth, then computes
/// the closed-form normal posterior.
///
/// When every unit shares one true variance this is exactly the joint fit on
/// a single-point variance grid at that value.
pub fn ash_normal_oracle(
    stats: &[UnitStats],
    sigma2: &[f64],
    eg: &EffectGrid,
    opts: &FitOptions,
) -> Result<(FitReport, PosteriorTable)> {
    if sigma2.len() != stats.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} variances for {} units",
            sigma2.len(),
            stats.len()
        )));
    }
    let all_equal = sigma2.windows(2).all(|w| w[0] == w[1]);
    let tensor = if all_equal {
        let vg = VarianceGrid::from_points(vec![sigma2[0]])?;
        build_component_tensor(stats, eg, &vg)?
    } else {
        ComponentTensor::known_variance(stats, sigma2, eg)?
    };
    let report = fit_tensor(&tensor, opts)?;
    let post = posterior(&tensor, &report.mixing)?;
    Ok((report, post))
}

/// False discovery proportion of one list against the generative truth.
pub fn false_discovery_proportion(truth: &ReplicateTruth, list: &DiscoveryList) -> f64 {
    let false_hits = list
        .indices
        .iter()
        .filter(|&&i| truth.null_mask[i])
        .count();
    false_hits as f64 / list.indices.len().max(1) as f64
}

/// Per-level false discovery proportions; averaging across replicates
/// estimates the empirical FDR.
pub fn empirical_fdr(truth: &ReplicateTruth, lists: &[DiscoveryList]) -> Vec<f64> {
    lists
        .iter()
        .map(|list| false_discovery_proportion(truth, list))
        .collect()
}

/// Discrete 1-Wasserstein distance between two probability vectors on the
/// same regular grid: spacing times the summed absolute CDF differences.
pub fn wasserstein1(p: &[f64], q: &[f64], spacing: f64) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::InvalidInput(format!(
            "distributions live on different grids ({} vs {} points)",
            p.len(),
            q.len()
        )));
    }
    if !(spacing > 0.0) {
        return Err(Error::InvalidInput(format!(
            "grid spacing must be positive, got {spacing}"
        )));
    }
    for (name, v) in [("p", p), ("q", q)] {
        let sum: f64 = v.iter().sum();
        if (sum - 1.0).abs() > 1e-6 || v.iter().any(|&x| x < 0.0) {
            return Err(Error::InvalidInput(format!(
                "{name} is not a probability vector (sum {sum})"
            )));
        }
    }
    let mut cdf_p = 0.0;
    let mut cdf_q = 0.0;
    let mut acc = 0.0;
    for (a, b) in p.iter().zip(q) {
        cdf_p += a;
        cdf_q += b;
        acc += (cdf_p - cdf_q).abs();
    }
    Ok(spacing * acc)
}

/// Projects the generative effect prior pi0*delta_0 + (1-pi0)*g_alt onto the
/// effect grid by integrating each cell; tail mass folds into the end cells.
pub fn discretize_effect_prior(pi0: f64, shape: GAltShape, eg: &EffectGrid) -> Vec<f64> {
    let pts = eg.points();
    let half = eg.spacing() / 2.0;
    let n = pts.len();
    let mut g = vec![0.0; n];
    for (k, &a) in pts.iter().enumerate() {
        let lo = if k == 0 { f64::NEG_INFINITY } else { a - half };
        let hi = if k == n - 1 { f64::INFINITY } else { a + half };
        let cdf_hi = if hi.is_infinite() { 1.0 } else { shape.cdf(hi) };
        let cdf_lo = if lo.is_infinite() { 0.0 } else { shape.cdf(lo) };
        g[k] = (1.0 - pi0) * (cdf_hi - cdf_lo);
    }
    g[eg.mode_index()] += pi0;
    g
}

/// Settings for the calibration harness.
#[derive(Debug, Clone)]
pub struct RunSettings {
    /// Nominal FDR levels evaluated per replicate.
    pub levels: Vec<f64>,
    /// Effect grid half-width K.
    pub k: usize,
    /// Variance grid size L.
    pub l: usize,
    pub fit: FitOptions,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            levels: vec![0.05, 0.1, 0.2],
            k: 15,
            l: 15,
            fit: FitOptions::default(),
        }
    }
}

/// Discovery outcome of one replicate at one nominal level, for both rules.
#[derive(Debug, Clone, Copy)]
pub struct LevelOutcome {
    pub level: f64,
    pub threshold_fdp: f64,
    pub threshold_discoveries: usize,
    pub cumulative_fdp: f64,
    pub cumulative_discoveries: usize,
}

#[derive(Debug, Clone)]
pub struct ReplicateOutcome {
    pub replicate: usize,
    pub pi0_true: f64,
    pub pi0_hat: f64,
    /// 1-Wasserstein distance between the fitted g and the generative prior
    /// discretized onto the same grid.
    pub g_wasserstein: f64,
    pub levels: Vec<LevelOutcome>,
}

#[derive(Debug, Clone, Copy)]
pub struct AggregateLevel {
    pub level: f64,
    pub threshold_fdr: f64,
    pub threshold_fdr_se: f64,
    pub threshold_mean_discoveries: f64,
    pub cumulative_fdr: f64,
    pub cumulative_fdr_se: f64,
    pub cumulative_mean_discoveries: f64,
}

/// Aggregates over the replicates whose true pi0 fell in [lo, hi).
#[derive(Debug, Clone)]
pub struct StratumAggregate {
    pub lo: f64,
    pub hi: f64,
    pub replicates: usize,
    pub mean_pi0_true: f64,
    pub mean_pi0_hat: f64,
    pub levels: Vec<AggregateLevel>,
}

#[derive(Debug, Clone)]
pub struct CalibrationReport {
    pub levels: Vec<f64>,
    pub replicates: Vec<ReplicateOutcome>,
    pub strata: Vec<StratumAggregate>,
    pub mean_g_wasserstein: f64,
}

/// Runs the full calibration loop: generate, summarize, fit, posterior,
/// discovery lists under both rules, FDP against truth. Replicates run in
/// parallel on independent derived streams.
pub fn run_scenario(spec: &ScenarioSpec, settings: &RunSettings) -> Result<CalibrationReport> {
    let outcomes: Result<Vec<ReplicateOutcome>> = (0..spec.replicates)
        .into_par_iter()
        .map(|rep| run_replicate(spec, settings, rep))
        .collect();
    let outcomes = outcomes?;
    let strata = stratify(&outcomes, &settings.levels);
    let mean_g_wasserstein =
        outcomes.iter().map(|o| o.g_wasserstein).sum::<f64>() / outcomes.len().max(1) as f64;
    Ok(CalibrationReport {
        levels: settings.levels.clone(),
        replicates: outcomes,
        strata,
        mean_g_wasserstein,
    })
}

fn run_replicate(
    spec: &ScenarioSpec,
    settings: &RunSettings,
    rep: usize,
) -> Result<ReplicateOutcome> {
    let (data, truth) = generate_replicate(spec, rep);
    let stats = summarize(&data)?;
    let eg = build_effect_grid(&stats, settings.k, 0.0)?;
    let vg = build_variance_grid(&stats, settings.l)?;
    let tensor = build_component_tensor(&stats, &eg, &vg)?;
    let report = fit_tensor(&tensor, &settings.fit)?;
    let post = posterior(&tensor, &report.mixing)?;
    let pi0_hat = pi0_estimate(&report.mixing);

    let truth_on_grid = discretize_effect_prior(truth.pi0, spec.shape, &eg);
    let g_wasserstein = wasserstein1(report.mixing.g(), &truth_on_grid, eg.spacing())?;

    let mut levels = Vec::with_capacity(settings.levels.len());
    for &level in &settings.levels {
        let thr = discovery_list(&post, level, Statistic::Lfdr, ListRule::Threshold)?;
        let cum = discovery_list(&post, level, Statistic::Lfdr, ListRule::CumulativeMean)?;
        levels.push(LevelOutcome {
            level,
            threshold_fdp: false_discovery_proportion(&truth, &thr),
            threshold_discoveries: thr.indices.len(),
            cumulative_fdp: false_discovery_proportion(&truth, &cum),
            cumulative_discoveries: cum.indices.len(),
        });
    }
    Ok(ReplicateOutcome {
        replicate: rep,
        pi0_true: truth.pi0,
        pi0_hat,
        g_wasserstein,
        levels,
    })
}

fn stratum_index(pi0: f64) -> usize {
    let n = PI0_STRATA.len() - 1;
    for s in 0..n {
        if pi0 < PI0_STRATA[s + 1] {
            return s;
        }
    }
    n - 1
}

fn stratify(outcomes: &[ReplicateOutcome], levels: &[f64]) -> Vec<StratumAggregate> {
    let n_strata = PI0_STRATA.len() - 1;
    let mut buckets: Vec<Vec<&ReplicateOutcome>> = vec![Vec::new(); n_strata];
    for o in outcomes {
        buckets[stratum_index(o.pi0_true)].push(o);
    }
    buckets
        .into_iter()
        .enumerate()
        .map(|(s, members)| {
            let count = members.len();
            let denom = count.max(1) as f64;
            let mean_pi0_true = members.iter().map(|o| o.pi0_true).sum::<f64>() / denom;
            let mean_pi0_hat = members.iter().map(|o| o.pi0_hat).sum::<f64>() / denom;
            let levels = levels
                .iter()
                .enumerate()
                .map(|(j, &level)| {
                    let thr: Vec<f64> = members.iter().map(|o| o.levels[j].threshold_fdp).collect();
                    let cum: Vec<f64> = members.iter().map(|o| o.levels[j].cumulative_fdp).collect();
                    let thr_count = members
                        .iter()
                        .map(|o| o.levels[j].threshold_discoveries as f64)
                        .sum::<f64>()
                        / denom;
                    let cum_count = members
                        .iter()
                        .map(|o| o.levels[j].cumulative_discoveries as f64)
                        .sum::<f64>()
                        / denom;
                    let (thr_mean, thr_se) = mean_se(&thr);
                    let (cum_mean, cum_se) = mean_se(&cum);
                    AggregateLevel {
                        level,
                        threshold_fdr: thr_mean,
                        threshold_fdr_se: thr_se,
                        threshold_mean_discoveries: thr_count,
                        cumulative_fdr: cum_mean,
                        cumulative_fdr_se: cum_se,
                        cumulative_mean_discoveries: cum_count,
                    }
                })
                .collect();
            StratumAggregate {
                lo: PI0_STRATA[s],
                hi: PI0_STRATA[s + 1],
                replicates: count,
                mean_pi0_true,
                mean_pi0_hat,
                levels,
            }
        })
        .collect()
}

/// Sample mean and Monte-Carlo standard error.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn summarize_pooled_variance_oracle() {
        // groups (0,2) and (0,0): pooled variance (2+0)/2 = 1, and the
        // squared standard error of the difference is 1*(1/2+1/2) = 1
        let data = TwoGroupData {
            group_a: Array2::from_shape_vec((1, 2), vec![0.0, 2.0]).unwrap(),
            group_b: Array2::from_shape_vec((1, 2), vec![0.0, 0.0]).unwrap(),
        };
        let stats = summarize(&data).unwrap();
        assert_relative_eq!(stats[0].x, 1.0, max_relative = 1e-15);
        assert_relative_eq!(stats[0].s2, 1.0, max_relative = 1e-15);
        assert_eq!(stats[0].nu, 2.0);
    }

    #[test]
    fn summarize_identical_groups_zero_effect() {
        let data = TwoGroupData {
            group_a: Array2::from_shape_vec((1, 3), vec![0.3, 1.1, -0.4]).unwrap(),
            group_b: Array2::from_shape_vec((1, 3), vec![0.3, 1.1, -0.4]).unwrap(),
        };
        let stats = summarize(&data).unwrap();
        assert_eq!(stats[0].x, 0.0);
        assert_eq!(stats[0].nu, 4.0);
    }

    #[test]
    fn summarize_label_swap_antisymmetry() {
        let data = TwoGroupData {
            group_a: Array2::from_shape_vec((1, 3), vec![0.5, 1.5, 0.9]).unwrap(),
            group_b: Array2::from_shape_vec((1, 3), vec![-0.2, 0.6, 0.1]).unwrap(),
        };
        let swapped = TwoGroupData {
            group_a: data.group_b.clone(),
            group_b: data.group_a.clone(),
        };
        let s1 = summarize(&data).unwrap();
        let s2 = summarize(&swapped).unwrap();
        assert_eq!(s1[0].x, -s2[0].x);
        assert_eq!(s1[0].s2, s2[0].s2);
        assert_eq!(s1[0].nu, s2[0].nu);
    }

    #[test]
    fn summarize_rejects_tiny_groups() {
        let data = TwoGroupData {
            group_a: Array2::from_shape_vec((1, 1), vec![0.0]).unwrap(),
            group_b: Array2::from_shape_vec((1, 3), vec![0.0, 1.0, 2.0]).unwrap(),
        };
        assert!(matches!(summarize(&data), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn pure_null_replicate_is_all_null() {
        let spec = ScenarioSpec {
            shape: GAltShape::NearNormal,
            pi0_law: Pi0Law::Fixed(1.0),
            variance_law: VarianceLaw::PointMass(1.0),
            n_per_group: 4,
            m: 50,
            replicates: 1,
            seed: 3,
        };
        let (_, truth) = generate_replicate(&spec, 0);
        assert!(truth.null_mask.iter().all(|&b| b));
        assert!(truth.theta.iter().all(|&t| t == 0.0));
        assert!(truth.sigma2.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn generator_is_deterministic() {
        let spec = ScenarioSpec::normal_default(30, 5, 1, 17);
        let (d1, t1) = generate_replicate(&spec, 4);
        let (d2, t2) = generate_replicate(&spec, 4);
        assert_eq!(t1.pi0.to_bits(), t2.pi0.to_bits());
        assert_eq!(d1.group_a, d2.group_a);
        assert_eq!(d1.group_b, d2.group_b);
        let (d3, _) = generate_replicate(&spec, 5);
        assert_ne!(d1.group_a, d3.group_a);
    }

    #[test]
    fn truth_is_shared_across_sample_sizes() {
        let mut spec = ScenarioSpec::normal_default(40, 5, 1, 23);
        let (_, t5) = generate_replicate(&spec, 2);
        spec.n_per_group = 30;
        let (_, t30) = generate_replicate(&spec, 2);
        assert_eq!(t5.pi0.to_bits(), t30.pi0.to_bits());
        assert_eq!(t5.theta, t30.theta);
        assert_eq!(t5.sigma2, t30.sigma2);
    }

    #[test]
    fn bimodal_draws_center_on_zero() {
        let mut rng = derive_rng(7, 0, b"mxtwtest");
        let n = 100_000;
        let mean: f64 = (0..n)
            .map(|_| GAltShape::Bimodal.sample(&mut rng))
            .sum::<f64>()
            / n as f64;
        // sd of the bimodal mixture is sqrt(5)
        let se = (5.0_f64 / n as f64).sqrt();
        assert!(mean.abs() < 3.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn variance_laws_hit_their_supports() {
        let mut rng = derive_rng(9, 0, b"mxtwtest");
        let two = VarianceLaw::default_two_point();
        for _ in 0..50 {
            let v = two.draw(&mut rng);
            assert!(v == 0.5 || v == 2.0);
        }
        let ig = VarianceLaw::default_inverse_gamma();
        let n = 200_000;
        let mean: f64 = (0..n).map(|_| ig.draw(&mut rng)).sum::<f64>() / n as f64;
        // inverse-gamma(3, 2) has mean 1 and sd 1
        assert!((mean - 1.0).abs() < 3.0 / (n as f64).sqrt() * 2.0, "mean {mean}");
    }

    #[test]
    fn fdp_counting() {
        let truth = ReplicateTruth {
            theta: vec![0.0, 1.0, 0.0, 2.0],
            sigma2: vec![1.0; 4],
            null_mask: vec![true, false, true, false],
            pi0: 0.5,
        };
        let list = |idx: Vec<usize>| DiscoveryList {
            level: 0.1,
            rule: ListRule::Threshold,
            statistic: Statistic::Lfdr,
            indices: idx,
        };
        assert_eq!(false_discovery_proportion(&truth, &list(vec![])), 0.0);
        assert_eq!(false_discovery_proportion(&truth, &list(vec![1, 3])), 0.0);
        assert_eq!(false_discovery_proportion(&truth, &list(vec![0, 2])), 1.0);
        assert_eq!(false_discovery_proportion(&truth, &list(vec![0, 1, 2, 3])), 0.5);
    }

    #[test]
    fn wasserstein_basics() {
        let p = [0.2, 0.3, 0.5];
        assert_eq!(wasserstein1(&p, &p, 0.5).unwrap(), 0.0);
        // adjacent point masses transport one unit of mass one cell
        let a = [1.0, 0.0, 0.0];
        let b = [0.0, 1.0, 0.0];
        assert_relative_eq!(wasserstein1(&a, &b, 0.25).unwrap(), 0.25, max_relative = 1e-15);
        assert!(wasserstein1(&a, &[0.5, 0.5], 0.5).is_err());
        assert!(wasserstein1(&a, &[0.4, 0.3, 0.2], 0.5).is_err());
    }

    #[test]
    fn wasserstein_matches_quantile_coupling_oracle() {
        use rand::Rng;
        let mut rng = derive_rng(21, 0, b"mxtwtest");
        let spacing = 0.37;
        for _ in 0..20 {
            let n = rng.gen_range(2..8);
            let mut p: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..1.0)).collect();
            let mut q: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..1.0)).collect();
            let (ps, qs): (f64, f64) = (p.iter().sum(), q.iter().sum());
            p.iter_mut().for_each(|v| *v /= ps);
            q.iter_mut().for_each(|v| *v /= qs);

            // independent route: integrate |F_p^{-1}(u) - F_q^{-1}(u)| du by
            // sweeping the merged CDF breakpoints
            let mut breaks: Vec<f64> = Vec::new();
            let mut acc = 0.0;
            for &v in &p[..n - 1] {
                acc += v;
                breaks.push(acc);
            }
            acc = 0.0;
            for &v in &q[..n - 1] {
                acc += v;
                breaks.push(acc);
            }
            breaks.push(0.0);
            breaks.push(1.0);
            breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let quantile = |dist: &[f64], u: f64| -> f64 {
                let mut c = 0.0;
                for (k, &v) in dist.iter().enumerate() {
                    c += v;
                    if u < c {
                        return k as f64 * spacing;
                    }
                }
                (dist.len() - 1) as f64 * spacing
            };
            let mut oracle = 0.0;
            for w in breaks.windows(2) {
                let width = w[1] - w[0];
                if width <= 0.0 {
                    continue;
                }
                let mid = 0.5 * (w[0] + w[1]);
                oracle += width * (quantile(&p, mid) - quantile(&q, mid)).abs();
            }
            let direct = wasserstein1(&p, &q, spacing).unwrap();
            assert_relative_eq!(direct, oracle, max_relative = 1e-10, epsilon = 1e-12);
        }
    }

    #[test]
    fn wasserstein_metric_properties() {
        use rand::Rng;
        let mut rng = derive_rng(22, 0, b"mxtwtest");
        for _ in 0..20 {
            let n = 5;
            let draw = |rng: &mut rand_chacha::ChaCha12Rng| -> Vec<f64> {
                let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..1.0)).collect();
                let s: f64 = v.iter().sum();
                v.iter_mut().for_each(|x| *x /= s);
                v
            };
            let p = draw(&mut rng);
            let q = draw(&mut rng);
            let r = draw(&mut rng);
            let dpq = wasserstein1(&p, &q, 1.0).unwrap();
            let dqp = wasserstein1(&q, &p, 1.0).unwrap();
            assert_relative_eq!(dpq, dqp, max_relative = 1e-14);
            assert!(wasserstein1(&p, &p, 1.0).unwrap() <= 1e-14);
            let dpr = wasserstein1(&p, &r, 1.0).unwrap();
            let drq = wasserstein1(&r, &q, 1.0).unwrap();
            assert!(dpq <= dpr + drq + 1e-12);
        }
    }

    #[test]
    fn discretized_prior_is_a_distribution() {
        let stats = vec![
            UnitStats::new(-3.0, 1.0, 8.0).unwrap(),
            UnitStats::new(2.5, 1.0, 8.0).unwrap(),
        ];
        let eg = build_effect_grid(&stats, 10, 0.0).unwrap();
        for shape in [
            GAltShape::Spiky,
            GAltShape::NearNormal,
            GAltShape::FlatTop,
            GAltShape::BigVariance,
            GAltShape::Bimodal,
        ] {
            let g = discretize_effect_prior(0.7, shape, &eg);
            let sum: f64 = g.iter().sum();
            assert_relative_eq!(sum, 1.0, max_relative = 1e-12);
            assert!(g[eg.mode_index()] >= 0.7);
        }
    }

    #[test]
    fn stratum_assignment() {
        assert_eq!(stratum_index(0.5), 0);
        assert_eq!(stratum_index(0.6), 0);
        assert_eq!(stratum_index(0.625), 1);
        assert_eq!(stratum_index(0.8), 2);
        assert_eq!(stratum_index(0.9), 3);
        assert_eq!(stratum_index(1.0), 3);
    }
}
