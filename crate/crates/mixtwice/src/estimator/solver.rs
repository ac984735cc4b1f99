//! Augmented-Lagrangian outer loop with a dense-BFGS inner solver.
//!
//! The mixing vectors are treated as one free Euclidean vector
//! z = (g, h). Equality constraints pin the two simplex sums; inequality
//! constraints keep every component nonnegative and enforce the unimodal
//! ordering of g. All constraints are linear, so their gradients are
//! constant sparse vectors applied directly.

use super::objective::{LikelihoodEngine, UnitSource};
use super::FitOptions;

/// Linear constraint layout for a problem with `n_g` effect weights and
/// `n_h` variance weights. Inequalities are written c_j(z) >= 0.
pub(crate) struct ConstraintSet {
    n_g: usize,
    n_h: usize,
}

impl ConstraintSet {
    pub fn new(n_g: usize, n_h: usize) -> Self {
        debug_assert!(n_g % 2 == 1);
        Self { n_g, n_h }
    }

    pub fn n_eq(&self) -> usize {
        2
    }

    /// Nonnegativity for every component plus 2K ordering constraints.
    pub fn n_ineq(&self) -> usize {
        self.n_g + self.n_h + (self.n_g - 1)
    }

    fn mode(&self) -> usize {
        (self.n_g - 1) / 2
    }

    pub fn eq_values(&self, z: &[f64], out: &mut [f64]) {
        let sum_g: f64 = z[..self.n_g].iter().sum();
        let sum_h: f64 = z[self.n_g..].iter().sum();
        out[0] = sum_g - 1.0;
        out[1] = sum_h - 1.0;
    }

    pub fn ineq_values(&self, z: &[f64], out: &mut [f64]) {
        let (ng, nh) = (self.n_g, self.n_h);
        out[..ng + nh].copy_from_slice(z);
        let mode = self.mode();
        let ord = &mut out[ng + nh..];
        for i in 0..mode {
            ord[i] = z[i + 1] - z[i]; // rising toward the mode
        }
        for i in mode..ng - 1 {
            ord[i] = z[i] - z[i + 1]; // falling past the mode
        }
    }

    /// Adds `coeff * grad(eq_e)` to `grad`.
    pub fn add_eq_grad(&self, e: usize, coeff: f64, grad: &mut [f64]) {
        let range = if e == 0 {
            0..self.n_g
        } else {
            self.n_g..self.n_g + self.n_h
        };
        for gi in &mut grad[range] {
            *gi += coeff;
        }
    }

    /// Adds `coeff * grad(ineq_j)` to `grad`.
    pub fn add_ineq_grad(&self, j: usize, coeff: f64, grad: &mut [f64]) {
        let (ng, nh) = (self.n_g, self.n_h);
        if j < ng + nh {
            grad[j] += coeff;
            return;
        }
        let i = j - (ng + nh);
        if i < self.mode() {
            grad[i + 1] += coeff;
            grad[i] -= coeff;
        } else {
            grad[i] += coeff;
            grad[i + 1] -= coeff;
        }
    }

    /// Max violation across all constraints (infinity norm).
    pub fn violation(&self, z: &[f64]) -> f64 {
        let mut eq = [0.0; 2];
        self.eq_values(z, &mut eq);
        let mut worst = eq[0].abs().max(eq[1].abs());
        let mut ineq = vec![0.0; self.n_ineq()];
        self.ineq_values(z, &mut ineq);
        for c in ineq {
            worst = worst.max(-c.min(0.0));
        }
        worst
    }
}

pub(crate) struct SolveOutcome {
    pub z: Vec<f64>,
    pub outer_iterations: usize,
    pub constraint_violation: f64,
    pub converged: bool,
}

struct InnerResult {
    gnorm_inf: f64,
    iterations: usize,
}

/// Minimizes the augmented Lagrangian repeatedly, updating multipliers and
/// penalty between inner solves.
pub(crate) fn solve_constrained<S: UnitSource>(
    engine: &LikelihoodEngine<'_, S>,
    constraints: &ConstraintSet,
    init: Vec<f64>,
    opts: &FitOptions,
) -> SolveOutcome {
    let dim = engine.dim();
    debug_assert_eq!(init.len(), dim);
    let inv_m = 1.0 / engine.num_units() as f64;

    let n_eq = constraints.n_eq();
    let n_ineq = constraints.n_ineq();
    let mut lambda = vec![0.0; n_eq];
    let mut mu = vec![0.0; n_ineq];
    let mut rho = opts.initial_penalty;

    let mut z = init;
    let mut eq = vec![0.0; n_eq];
    let mut ineq = vec![0.0; n_ineq];
    let mut fgrad = vec![0.0; dim];

    let mut cv_prev = f64::INFINITY;
    let mut converged = false;
    let mut outer_done = 0;
    let mut violation = constraints.violation(&z);
    let mut best_kkt = f64::INFINITY;
    let mut stagnant = 0_usize;

    for outer in 1..=opts.max_outer {
        outer_done = outer;
        let inner = {
            let mut objective = |x: &[f64], grad: &mut [f64]| -> f64 {
                let mut f = engine.value_grad(&x[..constraints.n_g], &x[constraints.n_g..], &mut fgrad) * inv_m;
                for (gi, fg) in grad.iter_mut().zip(fgrad.iter()) {
                    *gi = fg * inv_m;
                }
                constraints.eq_values(x, &mut eq);
                for e in 0..n_eq {
                    f += lambda[e] * eq[e] + 0.5 * rho * eq[e] * eq[e];
                    constraints.add_eq_grad(e, lambda[e] + rho * eq[e], grad);
                }
                constraints.ineq_values(x, &mut ineq);
                for j in 0..n_ineq {
                    let t = mu[j] - rho * ineq[j];
                    if t > 0.0 {
                        f += (t * t - mu[j] * mu[j]) / (2.0 * rho);
                        constraints.add_ineq_grad(j, -t, grad);
                    } else {
                        f -= mu[j] * mu[j] / (2.0 * rho);
                    }
                }
                f
            };
            bfgs_minimize(&mut objective, &mut z, opts.inner_tol, opts.max_inner)
        };

        violation = constraints.violation(&z);

        // first-order multiplier updates
        constraints.eq_values(&z, &mut eq);
        for e in 0..n_eq {
            lambda[e] += rho * eq[e];
        }
        constraints.ineq_values(&z, &mut ineq);
        let mut complementarity = 0.0_f64;
        for j in 0..n_ineq {
            mu[j] = (mu[j] - rho * ineq[j]).max(0.0);
            complementarity = complementarity.max((mu[j] * ineq[j]).abs());
        }

        let kkt = violation.max(inner.gnorm_inf).max(complementarity);
        if std::env::var_os("MIXTWICE_TRACE").is_some() {
            eprintln!(
                "outer {outer}: rho={rho:.1e} cv={violation:.3e} gnorm={:.3e} comp={complementarity:.3e} inner_iters={}",
                inner.gnorm_inf, inner.iterations
            );
        }
        if kkt <= opts.outer_tol {
            converged = true;
            break;
        }
        // penalty growth is only meaningful while the violation is above
        // target; below it the test compares rounding noise
        if violation > opts.outer_tol && violation > cv_prev / opts.violation_shrink {
            rho = (rho * opts.penalty_growth).min(opts.max_penalty);
        }
        cv_prev = violation;

        // stop early once successive outer iterations stop improving the
        // residual; the report stays honest via `converged`
        if kkt > 0.9 * best_kkt {
            stagnant += 1;
            if stagnant >= 3 && violation <= opts.outer_tol {
                break;
            }
        } else {
            stagnant = 0;
        }
        best_kkt = best_kkt.min(kkt);
    }

    SolveOutcome {
        z,
        outer_iterations: outer_done,
        constraint_violation: violation,
        converged,
    }
}

/// Dense BFGS with a backtracking strong-Wolfe line search.
///
/// Near the minimizer the Armijo test drops below f64 resolution of the
/// objective, so steps are also accepted on an approximate Wolfe pair of
/// gradient conditions when the objective change is within rounding noise.
fn bfgs_minimize<F>(f_grad: &mut F, x: &mut [f64], tol: f64, max_iter: usize) -> InnerResult
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x.len();
    let ftol = 1e-4;
    let wolfe = 0.9;
    let ls_dec = 0.5;
    let ls_inc = 2.1;
    let max_linesearch = 60;
    // objective values within this relative band are indistinguishable
    let noise_rel = 1e-13;

    // inverse Hessian approximation, dense row-major
    let mut hinv = identity(n);
    let mut grad = vec![0.0; n];
    let mut fx = f_grad(x, &mut grad);
    let mut gnorm = inf_norm(&grad);
    if gnorm <= tol {
        return InnerResult {
            gnorm_inf: gnorm,
            iterations: 0,
        };
    }

    let mut dir: Vec<f64> = grad.iter().map(|g| -g).collect();
    let mut step = 1.0 / norm2(&dir).max(1e-12);
    let mut xp = vec![0.0; n];
    let mut gp = vec![0.0; n];

    let mut iterations = 0;
    for _iter in 0..max_iter {
        iterations += 1;
        xp.copy_from_slice(x);
        gp.copy_from_slice(&grad);
        let fp = fx;
        let dginit = dot(&grad, &dir);
        if dginit >= 0.0 {
            // not a descent direction; restart from steepest descent
            hinv = identity(n);
            for (d, g) in dir.iter_mut().zip(&grad) {
                *d = -g;
            }
            step = 1.0 / norm2(&dir).max(1e-12);
            continue;
        }

        let noise = noise_rel * fp.abs().max(1.0);
        let mut accepted = false;
        for _ls in 0..max_linesearch {
            for i in 0..n {
                x[i] = xp[i] + step * dir[i];
            }
            fx = f_grad(x, &mut grad);
            if fx.is_nan() {
                step *= ls_dec;
                continue;
            }
            let dg = dot(&grad, &dir);
            let armijo = fx <= fp + ftol * step * dginit;
            // approximate Wolfe: pure gradient bracket, valid only when the
            // objective is flat to within noise
            let approx = fx <= fp + noise && dg >= wolfe * dginit && dg <= (2.0 * ftol - 1.0) * dginit;
            if armijo {
                if dg < wolfe * dginit {
                    step *= ls_inc;
                } else if dg > -wolfe * dginit {
                    if approx {
                        accepted = true;
                        break;
                    }
                    step *= ls_dec;
                } else {
                    accepted = true;
                    break;
                }
            } else if approx {
                accepted = true;
                break;
            } else {
                step *= ls_dec;
            }
        }
        if !accepted {
            // no acceptable step; keep the pre-search point if the last trial
            // made things worse
            if fx > fp {
                x.copy_from_slice(&xp);
                grad.copy_from_slice(&gp);
            }
            return InnerResult {
                gnorm_inf: inf_norm(&grad),
                iterations,
            };
        }

        gnorm = inf_norm(&grad);
        if gnorm <= tol {
            return InnerResult {
                gnorm_inf: gnorm,
                iterations,
            };
        }
        // no representable movement
        let moved = x
            .iter()
            .zip(xp.iter())
            .any(|(a, b)| (a - b).abs() > f64::EPSILON * a.abs().max(1e-3));
        if !moved {
            return InnerResult {
                gnorm_inf: gnorm,
                iterations,
            };
        }

        // BFGS inverse update
        let s: Vec<f64> = x.iter().zip(&xp).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = grad.iter().zip(&gp).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm2(&s) * norm2(&y) {
            let hy = mat_vec(&hinv, &y, n);
            let yhy = dot(&y, &hy);
            let c1 = (sy + yhy) / (sy * sy);
            let c2 = 1.0 / sy;
            for r in 0..n {
                for c in 0..n {
                    hinv[r * n + c] += c1 * s[r] * s[c] - c2 * (hy[r] * s[c] + s[r] * hy[c]);
                }
            }
        }
        let hg = mat_vec(&hinv, &grad, n);
        for (d, v) in dir.iter_mut().zip(&hg) {
            *d = -v;
        }
        step = 1.0;
    }

    InnerResult {
        gnorm_inf: gnorm,
        iterations,
    }
}

fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

fn mat_vec(m: &[f64], v: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for r in 0..n {
        out[r] = dot(&m[r * n..(r + 1) * n], v);
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}
