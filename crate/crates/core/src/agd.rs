//! Accelerated gradient ascent on the dual of scaled-entropy-regularized OT.
//!
//! The smoothed dual is
//! `φ(u, v) = ⟨u, μ^δ⟩ + ⟨v, ν^δ⟩ + min_{X ∈ Δδ} ⟨C − u ⊕ v, X⟩ + γ⟨X, ln X⟩`,
//! whose inner minimizer is `X = max{Z/s, δ/n²}` with `Z = exp((−C + u ⊕ v)/γ)` and `s`
//! the root solved by [`kernels::solve_scaled_root`]. The gradient is
//! `(μ^δ − X1, ν^δ − Xᵀ1)`. This is a comparison baseline; the outer loop is a plain
//! monotone FISTA with backtracking on the smoothness estimate.

use serde::{Deserialize, Serialize};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::hpd::TraceRow;
use crate::instances::OtInstance;
use crate::kernels::{self, ScaledPlan};
use crate::matrix::{self, Matrix};
use crate::ot::{self, OtDual};
use crate::par;

/// Value and gradient of `φ` at one point, with the inner minimizer.
#[derive(Debug, Clone)]
pub struct PhiEval {
    pub value: f64,
    pub grad_u: Vec<f64>,
    pub grad_v: Vec<f64>,
    pub plan: ScaledPlan,
    pub newton_iterations: usize,
}

/// `φ` on the normalized cost of an instance.
#[derive(Debug, Clone)]
pub struct SmoothedDual {
    cost: Matrix,
    mu_d: Vec<f64>,
    nu_d: Vec<f64>,
    gamma: f64,
    delta: f64,
    n: usize,
}

impl SmoothedDual {
    pub fn new(inst: &OtInstance, gamma: f64, delta: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidConfig(format!("gamma = {gamma} must be positive")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidConfig(format!("delta = {delta} must lie in (0, 1)")));
        }
        Ok(SmoothedDual {
            cost: inst.cost.normalized().entries().clone(),
            mu_d: inst.mu.scaled(delta),
            nu_d: inst.nu.scaled(delta),
            gamma,
            delta,
            n: inst.n(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn cost(&self) -> &Matrix {
        &self.cost
    }

    pub fn eval(&self, u: &[f64], v: &[f64]) -> Result<PhiEval> {
        let n = self.n;
        if u.len() != n || v.len() != n {
            return Err(Error::invalid(format!("dual of lengths ({}, {}) for n = {n}", u.len(), v.len())));
        }
        if u.iter().chain(v).any(|x| !x.is_finite()) {
            return Err(Error::numerical("non-finite dual point"));
        }
        let inv = 1.0 / self.gamma;
        let mut exps = self.cost.as_slice().to_vec();
        par::map_row_chunks_mut(&mut exps, n, |first, chunk| {
            for (r, row) in chunk.chunks_mut(n).enumerate() {
                let ui = u[first + r];
                for (e, vj) in row.iter_mut().zip(v) {
                    *e = (ui + vj - *e) * inv;
                }
            }
        });
        // The max shift inside makes large exponents safe.
        let (plan, root) = kernels::scaled_from_exponents(n, exps, self.delta)?;
        let value = self.value_at(&plan, u, v);
        if !value.is_finite() {
            return Err(Error::numerical("non-finite smoothed dual value"));
        }
        let grad_u = self.mu_d.iter().zip(plan.row_sums()).map(|(a, b)| a - b).collect();
        let grad_v = self.nu_d.iter().zip(plan.col_sums()).map(|(a, b)| a - b).collect();
        Ok(PhiEval {
            value,
            grad_u,
            grad_v,
            plan,
            newton_iterations: root.iterations,
        })
    }

    /// `⟨u, μ^δ⟩ + ⟨v, ν^δ⟩ + ⟨C − u ⊕ v, X⟩ + γ⟨X, ln X⟩` for a given `X`.
    pub fn value_at(&self, plan: &ScaledPlan, u: &[f64], v: &[f64]) -> f64 {
        let n = self.n;
        let x = plan.linear();
        let inner: f64 = par::map_row_chunks(self.cost.as_slice(), n, |first, chunk| {
            let mut acc = 0.0;
            for (r, row) in chunk.chunks(n).enumerate() {
                let i = first + r;
                let xr = &x[i * n..(i + 1) * n];
                for j in 0..n {
                    acc += (row[j] - u[i] - v[j]) * xr[j] + self.gamma * xr[j] * xr[j].ln();
                }
            }
            acc
        })
        .into_iter()
        .sum();
        matrix::dot(u, &self.mu_d) + matrix::dot(v, &self.nu_d) + inner
    }
}

/// `φ(u, v)`, its gradient and the inner scaled plan on the normalized cost of `inst`.
pub fn phi_and_grad(u: &[f64], v: &[f64], inst: &OtInstance, gamma: f64, delta: f64) -> Result<PhiEval> {
    SmoothedDual::new(inst, gamma, delta)?.eval(u, v)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgdOptions {
    /// Smoothing weight; `ε/(4 ln n)` when unset.
    pub gamma: Option<f64>,
    pub delta: f64,
    pub max_iter: usize,
    /// Certificate evaluated every this many iterations.
    pub check_every: usize,
    /// Initial smoothness estimate is `l0_mult/γ`.
    pub l0_mult: f64,
}

impl Default for AgdOptions {
    fn default() -> Self {
        AgdOptions {
            gamma: None,
            delta: 0.01,
            max_iter: 20_000,
            check_every: 10,
            l0_mult: 1.0,
        }
    }
}

/// One backtracking trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Backtrack {
    pub iter: usize,
    pub l: f64,
    /// Whether the sufficient-ascent test failed at this `l`.
    pub violated: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgdSolution {
    /// Best rounded plan (exact marginals).
    pub plan: Matrix,
    /// `⟨C_raw, plan⟩`.
    pub value: f64,
    pub dual_bound: f64,
    pub gap_certificate: f64,
    /// Dual point attaining `dual_bound` (normalized-cost frame).
    pub bound_dual: OtDual,
    pub converged: bool,
    pub iterations: usize,
    pub evaluations: usize,
    pub gamma: f64,
    pub delta: f64,
    /// `φ` at the accepted iterates; nondecreasing.
    pub phi: Vec<f64>,
    pub backtracks: Vec<Backtrack>,
    /// Rows use `tau = 1/L`, `theta` for the momentum weight and `inner_iters` for `φ` evaluations.
    pub trace: Vec<TraceRow>,
    pub newton_max: usize,
    pub support_fraction: f64,
}

/// Monotone FISTA on `−φ`, stopped once the rounded plan is certified `eps`-optimal.
pub fn solve_agd(inst: &OtInstance, eps: f64, opts: &AgdOptions) -> Result<AgdSolution> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidConfig(format!("eps = {eps} must be positive")));
    }
    if opts.check_every == 0 || !(opts.l0_mult > 0.0) {
        return Err(Error::InvalidConfig("check_every and l0_mult must be positive".into()));
    }
    let n = inst.n();
    let gamma = opts.gamma.unwrap_or_else(|| ot::default_gamma(eps, n.max(2)));
    let f = SmoothedDual::new(inst, gamma, opts.delta)?;
    let cost = f.cost().clone();
    let offset = inst.cost.normalized().offset(inst.mu.as_slice(), inst.nu.as_slice());
    let (mu, nu) = (inst.mu.as_slice(), inst.nu.as_slice());
    let start = Instant::now();

    let mut x = vec![0.0; 2 * n];
    let mut x_prev = x.clone();
    let mut y = x.clone();
    let mut fx = f.eval(&x[..n], &x[n..])?;
    let mut t = 1.0f64;
    let mut l = opts.l0_mult / gamma;
    let mut evaluations = 1usize;
    let mut newton_max = fx.newton_iterations;
    let mut phi = vec![fx.value];
    let mut backtracks = Vec::new();
    let mut trace = Vec::new();

    let mut best_plan: Option<(Matrix, f64)> = None;
    let mut best_bound = (f64::NEG_INFINITY, OtDual::zeros(n));
    let mut certify = |px: &PhiEval, xx: &[f64]| -> Result<(f64, f64)> {
        let rounded = ot::round_to_feasible(&px.plan.unscaled(), mu, nu)?;
        let value = cost.dot(&rounded);
        if best_plan.as_ref().is_none_or(|(_, v)| value < *v) {
            best_plan = Some((rounded, value));
        }
        let (bound, dual) = ot::dual_lower_bound(&cost, mu, nu, Some(&xx[..n]), &xx[n..]);
        if bound > best_bound.0 {
            best_bound = (bound, dual);
        }
        let best = best_plan.as_ref().map_or(f64::INFINITY, |(_, v)| *v);
        Ok((best - best_bound.0, best + offset))
    };
    let row = |iter, l: f64, theta, evals, (gap, primal_value): (f64, f64), start: &Instant| TraceRow {
        iter,
        tau: 1.0 / l,
        sigma: 0.0,
        beta: 0.0,
        theta,
        inner_iters: evals,
        gap_raw: gap,
        gap_rounded: gap,
        primal_value,
        elapsed_s: start.elapsed().as_secs_f64(),
    };

    let first = certify(&fx, &x)?;
    let mut gap = first.0;
    trace.push(row(0, l, 0.0, evaluations, first, &start));
    let mut iterations = 0;
    let mut converged = gap <= eps;
    while !converged && iterations < opts.max_iter {
        iterations += 1;
        let fy = if iterations == 1 { fx.clone() } else { f.eval(&y[..n], &y[n..])? };
        evaluations += 1;
        newton_max = newton_max.max(fy.newton_iterations);
        let grad: Vec<f64> = fy.grad_u.iter().chain(&fy.grad_v).copied().collect();
        let gnorm = matrix::dot(&grad, &grad);
        // Allow the estimate to shrink once per iteration; grow only on violation.
        l *= 0.5;
        let (z, fz) = loop {
            let z: Vec<f64> = y.iter().zip(&grad).map(|(a, g)| a + g / l).collect();
            let fz = f.eval(&z[..n], &z[n..])?;
            evaluations += 1;
            newton_max = newton_max.max(fz.newton_iterations);
            let violated = fz.value < fy.value + gnorm / (2.0 * l) - 1e-12 * fy.value.abs().max(1.0);
            backtracks.push(Backtrack { iter: iterations, l, violated });
            if !violated {
                break (z, fz);
            }
            l *= 2.0;
            if !l.is_finite() {
                return Err(Error::numerical("smoothness estimate overflowed"));
            }
        };
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        std::mem::swap(&mut x_prev, &mut x);
        if fz.value >= fx.value {
            x = z.clone();
            fx = fz;
        } else {
            x = x_prev.clone();
        }
        phi.push(fx.value);
        for k in 0..2 * n {
            y[k] = x[k] + (t / t_next) * (z[k] - x[k]) + ((t - 1.0) / t_next) * (x[k] - x_prev[k]);
        }
        let momentum = (t - 1.0) / t_next;
        t = t_next;
        if iterations % opts.check_every == 0 || iterations == opts.max_iter {
            let c = certify(&fx, &x)?;
            gap = c.0;
            trace.push(row(iterations, l, momentum, evaluations, c, &start));
            converged = gap <= eps;
        }
    }
    let (plan, value_norm) = best_plan.expect("certified at least once");
    let support_fraction = ot::support_fraction(&plan);
    Ok(AgdSolution {
        value: value_norm + offset,
        dual_bound: best_bound.0 + offset,
        gap_certificate: (value_norm - best_bound.0).max(0.0),
        bound_dual: best_bound.1,
        plan,
        converged,
        iterations,
        evaluations,
        gamma,
        delta: opts.delta,
        phi,
        backtracks,
        trace,
        newton_max,
        support_fraction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{gen_random_instance, Histogram};
    use crate::oracle;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gradient_matches_finite_differences() {
        let inst = gen_random_instance(5, 3).unwrap();
        let f = SmoothedDual::new(&inst, 0.5, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let u: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let e = f.eval(&u, &v).unwrap();
            let h = 1e-6;
            for k in 0..10 {
                let mut up = [u.clone(), v.clone()].concat();
                let mut dn = up.clone();
                up[k] += h;
                dn[k] -= h;
                let fp = f.eval(&up[..5], &up[5..]).unwrap().value;
                let fm = f.eval(&dn[..5], &dn[5..]).unwrap().value;
                let fd = (fp - fm) / (2.0 * h);
                let g = if k < 5 { e.grad_u[k] } else { e.grad_v[k - 5] };
                assert!((fd - g).abs() <= 1e-5, "coordinate {k}: {fd} vs {g}");
            }
        }
    }

    #[test]
    fn constant_cost_gives_uniform_plan() {
        let mu = Histogram::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let inst = OtInstance::new(mu.clone(), Histogram::uniform(4), Matrix::filled(4, 4, 0.7)).unwrap();
        let e = phi_and_grad(&[0.0; 4], &[0.0; 4], &inst, 0.3, 0.05).unwrap();
        for x in e.plan.linear() {
            assert!((x - 1.0 / 16.0).abs() < 1e-15);
        }
        for (g, m) in e.grad_u.iter().zip(mu.scaled(0.05)) {
            assert!((g - (m - 0.25)).abs() < 1e-15);
        }
    }

    #[test]
    fn tiny_delta_is_a_softmax() {
        let inst = gen_random_instance(6, 5).unwrap();
        let gamma = 0.2;
        let u: Vec<f64> = (0..6).map(|k| 0.1 * k as f64).collect();
        let v: Vec<f64> = (0..6).map(|k| -0.05 * k as f64).collect();
        let e = phi_and_grad(&u, &v, &inst, gamma, 1e-8).unwrap();
        let c = inst.cost.normalized();
        let z = Matrix::from_fn(6, 6, |i, j| ((u[i] + v[j] - c.get(i, j)) / gamma).exp());
        let total = z.sum();
        for (a, b) in e.plan.linear().iter().zip(z.as_slice()) {
            assert!((a - b / total).abs() <= 1e-6);
        }
    }

    #[test]
    fn value_recomputes_from_plan() {
        let inst = gen_random_instance(7, 2).unwrap();
        let f = SmoothedDual::new(&inst, 0.05, 0.2).unwrap();
        let u = vec![0.3; 7];
        let v: Vec<f64> = (0..7).map(|k| k as f64 * 0.01).collect();
        let e = f.eval(&u, &v).unwrap();
        assert!((f.value_at(&e.plan, &u, &v) - e.value).abs() <= 1e-10);
        let floor = e.plan.floor();
        assert!(e.plan.linear().iter().all(|&x| x >= floor));
        assert!((e.plan.linear().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn huge_duals_do_not_overflow() {
        let inst = gen_random_instance(4, 1).unwrap();
        let e = phi_and_grad(&[500.0; 4], &[400.0; 4], &inst, 1e-3, 0.1).unwrap();
        assert!(e.value.is_finite());
    }

    #[test]
    fn monotone_with_backtracking_contract() {
        let inst = gen_random_instance(20, 8).unwrap();
        let opts = AgdOptions { max_iter: 300, ..Default::default() };
        let sol = solve_agd(&inst, 1e-4, &opts).unwrap();
        assert!(sol.phi.windows(2).all(|w| w[1] >= w[0]));
        // Within an iteration the estimate doubles only after a failed test.
        for w in sol.backtracks.windows(2) {
            if w[1].iter == w[0].iter {
                assert!(w[0].violated);
                assert_eq!(w[1].l, 2.0 * w[0].l);
            }
        }
        assert!(sol.backtracks.iter().filter(|b| !b.violated).count() == sol.iterations);
    }

    #[test]
    fn random_instance_to_tolerance() {
        let inst = gen_random_instance(50, 4).unwrap();
        let sol = solve_agd(&inst, 0.05, &AgdOptions::default()).unwrap();
        assert!(sol.converged);
        assert!(sol.gap_certificate <= 0.05);
        let exact = oracle::solve_exact_ot(&inst).unwrap();
        assert!(sol.value - exact.value <= 0.05 + 1e-12);
        assert!(exact.value - sol.dual_bound >= -1e-9);
    }
}
