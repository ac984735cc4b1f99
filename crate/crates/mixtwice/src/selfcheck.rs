//! Built-in consistency checks behind the `check` CLI subcommand.
//!
//! Each check exercises an analytic result against an independent route:
//! finite differences for the derivatives, the closed-form normal posterior
//! for the single-variance model, and the structural invariants of
//! posteriors and discovery lists.

use rand::Rng;

use crate::densities::{build_component_tensor, normal_density, UnitStats};
use crate::estimator::{self, gradient, hessian, MixingPair};
use crate::grids::{build_effect_grid, build_variance_grid, VarianceGrid};
use crate::inference::{discovery_list, posterior, ListRule, Statistic};
use crate::rng_util::derive_rng;
use crate::simulation::wasserstein1;

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn pass(name: &'static str, detail: String) -> Self {
        Self {
            name,
            passed: true,
            detail,
        }
    }

    fn fail(name: &'static str, detail: String) -> Self {
        Self {
            name,
            passed: false,
            detail,
        }
    }
}

fn random_instance(
    rng: &mut rand_chacha::ChaCha12Rng,
    m: usize,
    k: usize,
    l: usize,
) -> (Vec<UnitStats>, MixingPair) {
    let stats: Vec<UnitStats> = (0..m)
        .map(|_| {
            UnitStats::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(0.2..3.0),
                rng.gen_range(2.0..30.0),
            )
            .unwrap()
        })
        .collect();
    let g = estimator::random_unimodal(2 * k + 1, rng);
    let mut h: Vec<f64> = (0..l).map(|_| rng.gen_range(0.1..1.0)).collect();
    let hs: f64 = h.iter().sum();
    h.iter_mut().for_each(|x| *x /= hs);
    (stats, MixingPair::new(g, h).unwrap())
}

fn check_gradient(seed: u64) -> CheckOutcome {
    const NAME: &str = "gradient matches central finite differences";
    let mut rng = derive_rng(seed, 1, b"mxtw-chk");
    let mut worst = 0.0_f64;
    for _ in 0..20 {
        let m = rng.gen_range(3..25);
        let k = rng.gen_range(1..4);
        let l = rng.gen_range(1..5);
        let (stats, mix) = random_instance(&mut rng, m, k, l);
        let eg = build_effect_grid(&stats, k, 0.0).unwrap();
        let vg = build_variance_grid(&stats, l).unwrap();
        let tensor = build_component_tensor(&stats, &eg, &vg).unwrap();
        let grad = gradient(&tensor, &mix).unwrap();
        let engine = estimator::LikelihoodEngine::new(&tensor);
        let ng = eg.len();
        let step = 1e-6;
        let mut z: Vec<f64> = mix.g().to_vec();
        z.extend_from_slice(mix.h());
        for d in 0..z.len() {
            let mut zp = z.clone();
            zp[d] += step;
            let fp = engine.value(&zp[..ng], &zp[ng..]);
            zp[d] = z[d] - step;
            let fm = engine.value(&zp[..ng], &zp[ng..]);
            let fd = (fp - fm) / (2.0 * step);
            let scale = grad[d].abs().max(fd.abs()).max(1e-8);
            worst = worst.max((fd - grad[d]).abs() / scale);
        }
    }
    if worst < 1e-5 {
        CheckOutcome::pass(NAME, format!("max relative error {worst:.2e}"))
    } else {
        CheckOutcome::fail(NAME, format!("max relative error {worst:.2e} >= 1e-5"))
    }
}

fn check_hessian(seed: u64) -> CheckOutcome {
    const NAME: &str = "hessian matches finite-differenced gradients";
    let mut rng = derive_rng(seed, 2, b"mxtw-chk");
    let mut worst = 0.0_f64;
    for _ in 0..5 {
        let m = rng.gen_range(3..15);
        let (stats, mix) = random_instance(&mut rng, m, 2, 2);
        let eg = build_effect_grid(&stats, 2, 0.0).unwrap();
        let vg = build_variance_grid(&stats, 2).unwrap();
        let tensor = build_component_tensor(&stats, &eg, &vg).unwrap();
        let hess = hessian(&tensor, &mix).unwrap();
        let engine = estimator::LikelihoodEngine::new(&tensor);
        let ng = eg.len();
        let hmax = hess.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        let dim = hess.nrows();
        let step = 1e-5;
        let mut z: Vec<f64> = mix.g().to_vec();
        z.extend_from_slice(mix.h());
        for d in 0..dim {
            let mut gp = vec![0.0; dim];
            let mut gm = vec![0.0; dim];
            let mut zp = z.clone();
            zp[d] += step;
            engine.value_grad(&zp[..ng], &zp[ng..], &mut gp);
            zp[d] = z[d] - step;
            engine.value_grad(&zp[..ng], &zp[ng..], &mut gm);
            for c in 0..dim {
                let fd = (gp[c] - gm[c]) / (2.0 * step);
                let scale = hess[[d, c]].abs().max(fd.abs()).max(1e-3 * hmax).max(1e-8);
                worst = worst.max((fd - hess[[d, c]]).abs() / scale);
            }
        }
    }
    if worst < 1e-4 {
        CheckOutcome::pass(NAME, format!("max relative error {worst:.2e}"))
    } else {
        CheckOutcome::fail(NAME, format!("max relative error {worst:.2e} >= 1e-4"))
    }
}

fn check_single_variance_posterior(seed: u64) -> CheckOutcome {
    const NAME: &str = "L=1 posterior equals the closed-form normal posterior";
    let mut rng = derive_rng(seed, 3, b"mxtw-chk");
    let mut worst = 0.0_f64;
    for _ in 0..5 {
        let m = rng.gen_range(3..20);
        let (stats, mix) = random_instance(&mut rng, m, 3, 1);
        let eg = build_effect_grid(&stats, 3, 0.0).unwrap();
        let b1 = rng.gen_range(0.3..2.5);
        let vg = VarianceGrid::from_points(vec![b1]).unwrap();
        let tensor = build_component_tensor(&stats, &eg, &vg).unwrap();
        let post = posterior(&tensor, &mix).unwrap();
        for (i, u) in stats.iter().enumerate() {
            let mut row = vec![0.0; eg.len()];
            let mut total = 0.0;
            for (k, &a) in eg.points().iter().enumerate() {
                row[k] = mix.g()[k] * normal_density(u.x, a, b1).unwrap();
                total += row[k];
            }
            for (k, &w) in row.iter().enumerate() {
                worst = worst.max((post.mass()[[i, k]] - w / total).abs());
            }
        }
    }
    if worst < 1e-10 {
        CheckOutcome::pass(NAME, format!("max abs difference {worst:.2e}"))
    } else {
        CheckOutcome::fail(NAME, format!("max abs difference {worst:.2e} >= 1e-10"))
    }
}

fn check_posterior_invariants(seed: u64) -> CheckOutcome {
    const NAME: &str = "posterior rows are stochastic with lfsr >= lfdr";
    let mut rng = derive_rng(seed, 4, b"mxtw-chk");
    let (stats, mix) = random_instance(&mut rng, 40, 3, 3);
    let eg = build_effect_grid(&stats, 3, 0.0).unwrap();
    let vg = build_variance_grid(&stats, 3).unwrap();
    let tensor = build_component_tensor(&stats, &eg, &vg).unwrap();
    let post = posterior(&tensor, &mix).unwrap();
    for i in 0..post.num_units() {
        let row_sum: f64 = post.mass().row(i).sum();
        if (row_sum - 1.0).abs() > 1e-10 {
            return CheckOutcome::fail(NAME, format!("row {i} sums to {row_sum}"));
        }
        if post.lfsr()[i] < post.lfdr()[i] {
            return CheckOutcome::fail(
                NAME,
                format!("unit {i}: lfsr {} < lfdr {}", post.lfsr()[i], post.lfdr()[i]),
            );
        }
    }
    // list monotonicity across levels for both rules
    for rule in [ListRule::Threshold, ListRule::CumulativeMean] {
        let mut prev: Vec<usize> = Vec::new();
        for level in [0.05, 0.1, 0.2, 0.4] {
            let list = discovery_list(&post, level, Statistic::Lfdr, rule).unwrap();
            if !prev.iter().all(|i| list.indices.contains(i)) {
                return CheckOutcome::fail(NAME, format!("list at {level} lost units ({rule:?})"));
            }
            prev = list.indices;
        }
    }
    CheckOutcome::pass(NAME, format!("{} units checked", post.num_units()))
}

fn check_wasserstein(seed: u64) -> CheckOutcome {
    const NAME: &str = "wasserstein distance is a metric on grid distributions";
    let mut rng = derive_rng(seed, 5, b"mxtw-chk");
    for _ in 0..10 {
        let n = rng.gen_range(2..9);
        let draw = |rng: &mut rand_chacha::ChaCha12Rng| -> Vec<f64> {
            let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..1.0)).collect();
            let s: f64 = v.iter().sum();
            v.iter_mut().for_each(|x| *x /= s);
            v
        };
        let p = draw(&mut rng);
        let q = draw(&mut rng);
        let d1 = wasserstein1(&p, &q, 0.5).unwrap();
        let d2 = wasserstein1(&q, &p, 0.5).unwrap();
        if (d1 - d2).abs() > 1e-14 || wasserstein1(&p, &p, 0.5).unwrap() > 1e-14 {
            return CheckOutcome::fail(NAME, "symmetry or identity failed".into());
        }
    }
    CheckOutcome::pass(NAME, "symmetry and identity hold".into())
}

/// Runs every self-check, returning one outcome per check.
pub fn run_all(seed: u64) -> Vec<CheckOutcome> {
    vec![
        check_gradient(seed),
        check_hessian(seed),
        check_single_variance_posterior(seed),
        check_posterior_invariants(seed),
        check_wasserstein(seed),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for outcome in run_all(0) {
            assert!(outcome.passed, "{}: {}", outcome.name, outcome.detail);
        }
    }
}
