//! Fixed-support Wasserstein barycenters through the primal-dual engine.
//!
//! The barycenter is eliminated through `ν = X_mᵀ1`; the last column dual is the closure
//! `v_m = −(1/w_m) Σ_{l<m} w_l v_l`. The Euclidean variable stacks `u_1..u_m` (dropped in
//! fixed-marginal mode) and `v_1..v_{m−1}`, with the weighted norm `Σ w_l ‖·‖²`; the plans
//! use the weighted divergence `Σ w_l KL(X_l, X̄_l)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hpd::{self, EvalPoint, GapEval, RunStatus, SaddleProblem, SolverConfig, StepRecord, TraceRow};
use crate::instances::{Histogram, WbInstance};
use crate::kernels::{self, Normalization, TransportPlan};
use crate::matrix::{self, Matrix};
use crate::ot::{self, OtOptions, Variant};

/// Dual blocks; `v` includes the closure block `v_m`, `u` is empty in fixed-marginal mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WbDual {
    pub u: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl WbDual {
    /// `Σ_l w_l v_l`, which the closure keeps at zero.
    pub fn closure_residual(&self, weights: &[f64]) -> f64 {
        let n = self.v.first().map_or(0, Vec::len);
        (0..n)
            .map(|j| self.v.iter().zip(weights).map(|(v, w)| w * v[j]).sum::<f64>().abs())
            .fold(0.0, f64::max)
    }
}

/// `v_m = −(1/w_m) Σ_{l<m} w_l v_l`.
pub fn closure(v: &[&[f64]], weights: &[f64]) -> Vec<f64> {
    let m = weights.len();
    let n = v.first().map_or(0, |b| b.len());
    let wm = weights[m - 1];
    (0..n)
        .map(|j| -v.iter().zip(weights).map(|(b, w)| w * b[j]).sum::<f64>() / wm)
        .collect()
}

/// `‖K‖` for the weighted norms: `√(2/w_m)`, or `1/√w_m` without the row duals.
pub fn coupling_norm(weights: &[f64], fixed_marginal: bool) -> f64 {
    let wm = weights[weights.len() - 1];
    if fixed_marginal {
        (1.0 / wm).sqrt()
    } else {
        (2.0 / wm).sqrt()
    }
}

/// Best-response gap on the row-normalized costs:
/// `Σ w_l [⟨C_l,X_l⟩ + λ‖μ_l − X_l1‖₁] + λ Σ_{l<m} w_l ‖(X_m − X_l)ᵀ1‖₁` minus
/// `Σ w_l [⟨u_l,μ_l⟩ + min_ij (C_l − u_l − v_l)]` (with `u` empty: the inner minimum over
/// `Δ_{μ_l}`, `Σ_i μ_l,i min_j (C_l,ij − v_l,j)`).
pub fn wb_gap(plans: &[Matrix], dual: &WbDual, inst: &WbInstance) -> Result<f64> {
    let m = inst.m();
    if plans.len() != m || dual.v.len() != m || !(dual.u.is_empty() || dual.u.len() == m) {
        return Err(Error::ShapeMismatch(format!("{} plans and {} dual blocks for m = {m}", plans.len(), dual.v.len())));
    }
    let lam = inst.lambda;
    let max_abs = dual
        .u
        .iter()
        .chain(&dual.v[..m - 1])
        .map(|b| matrix::inf_norm(b))
        .fold(0.0, f64::max);
    if max_abs > lam * (1.0 + 1e-12) {
        return Err(Error::DualOutsideBox { lambda: lam, max_abs });
    }
    let cols_m = plans[m - 1].col_sums();
    let mut primal = 0.0;
    let mut dualv = 0.0;
    for l in 0..m {
        let w = inst.weights[l];
        let cost = inst.cost(l).row_normalized();
        let c = cost.entries();
        let mu = inst.marginals[l].as_slice();
        primal += w * (c.dot(&plans[l]) + lam * matrix::l1_diff(mu, &plans[l].row_sums()));
        if l + 1 < m {
            primal += lam * w * matrix::l1_diff(&cols_m, &plans[l].col_sums());
        }
        dualv += w * if dual.u.is_empty() {
            ot::row_min_bound(c, mu, &dual.v[l])
        } else {
            let shifted: Vec<f64> = ot::c_transform_rows(c, &dual.v[l]).iter().zip(&dual.u[l]).map(|(a, b)| a - b).collect();
            matrix::dot(&dual.u[l], mu) + shifted.iter().copied().fold(f64::INFINITY, f64::min)
        };
    }
    Ok(primal - dualv)
}

/// Rounds every plan onto `(μ_l, ν̂)` with `ν̂ = X_mᵀ1`.
pub fn round_plans(plans: &[Matrix], inst: &WbInstance) -> Result<(Histogram, Vec<Matrix>)> {
    let m = inst.m();
    let nu = Histogram::from_weights(plans[m - 1].col_sums())?;
    let rounded = plans
        .iter()
        .zip(&inst.marginals)
        .map(|(x, mu)| ot::round_to_feasible(x, mu.as_slice(), nu.as_slice()))
        .collect::<Result<Vec<_>>>()?;
    Ok((nu, rounded))
}

/// Lower bound from column duals with `Σ w_l v_l = 0`: `Σ_l w_l ⟨min_j (C_l − v_l), μ_l⟩`.
pub fn wb_lower_bound(inst: &WbInstance, v: &[Vec<f64>]) -> f64 {
    (0..inst.m())
        .map(|l| inst.weights[l] * ot::row_min_bound(inst.cost(l).entries(), inst.marginals[l].as_slice(), &v[l]))
        .sum()
}

struct WbBest {
    value: f64,
    bound: f64,
    plans: Option<(Histogram, Vec<Matrix>)>,
}

/// The barycenter saddle problem.
pub struct WbProblem<'a> {
    inst: &'a WbInstance,
    n: usize,
    m: usize,
    fixed_marginal: bool,
    gamma_reg: f64,
    costs: Vec<Matrix>,
    best: WbBest,
    /// Entry updates performed by the plan proxes.
    pub ops: u64,
}

impl<'a> WbProblem<'a> {
    pub fn new(inst: &'a WbInstance, fixed_marginal: bool, gamma_reg: f64) -> Result<Self> {
        if !(gamma_reg >= 0.0 && gamma_reg.is_finite()) {
            return Err(Error::InvalidConfig(format!("regularization {gamma_reg} must be nonnegative")));
        }
        let costs = (0..inst.m()).map(|l| inst.cost(l).row_normalized().entries().clone()).collect();
        Ok(WbProblem {
            inst,
            n: inst.n(),
            m: inst.m(),
            fixed_marginal,
            gamma_reg,
            costs,
            best: WbBest {
                value: f64::INFINITY,
                bound: f64::NEG_INFINITY,
                plans: None,
            },
            ops: 0,
        })
    }

    fn u_len(&self) -> usize {
        if self.fixed_marginal {
            0
        } else {
            self.m * self.n
        }
    }

    pub fn primal_len(&self) -> usize {
        self.u_len() + (self.m - 1) * self.n
    }

    pub fn initial_point(&self) -> (Vec<f64>, Vec<TransportPlan>) {
        let plans = self
            .inst
            .marginals
            .iter()
            .map(|mu| {
                if self.fixed_marginal {
                    TransportPlan::row_uniform(mu)
                } else {
                    TransportPlan::uniform(self.n)
                }
            })
            .collect();
        (vec![0.0; self.primal_len()], plans)
    }

    /// Splits the Euclidean variable into per-block `u` (possibly empty) and full `v`
    /// including the closure.
    pub fn unpack(&self, x: &[f64]) -> WbDual {
        let n = self.n;
        let (u, v) = x.split_at(self.u_len());
        let u: Vec<Vec<f64>> = u.chunks(n).map(<[f64]>::to_vec).collect();
        let mut v: Vec<Vec<f64>> = v.chunks(n).map(<[f64]>::to_vec).collect();
        let refs: Vec<&[f64]> = v.iter().map(Vec::as_slice).collect();
        let vm = closure(&refs, &self.inst.weights);
        v.push(vm);
        WbDual { u, v }
    }

    fn clip(&self, x: &[f64]) -> Vec<f64> {
        let lam = self.inst.lambda;
        x.iter().map(|v| v.clamp(-lam, lam)).collect()
    }

    fn offer(&mut self, plans: &[Matrix], x: &[f64]) -> Result<()> {
        let (nu, rounded) = round_plans(plans, self.inst)?;
        let value: f64 = rounded
            .iter()
            .enumerate()
            .map(|(l, y)| self.inst.weights[l] * self.inst.cost(l).entries().dot(y))
            .sum();
        if value < self.best.value {
            self.best.value = value;
            self.best.plans = Some((nu, rounded));
        }
        let dual = self.unpack(&self.clip(x));
        self.best.bound = self.best.bound.max(wb_lower_bound(self.inst, &dual.v));
        Ok(())
    }
}

impl SaddleProblem for WbProblem<'_> {
    type Dual = Vec<TransportPlan>;
    type DualSum = Vec<Vec<f64>>;

    fn dual_prox(&mut self, y: &Vec<TransportPlan>, xbar: &[f64], sigma: f64) -> Result<Vec<TransportPlan>> {
        let n = self.n;
        let d = self.unpack(xbar);
        self.ops += (self.m * n * n) as u64;
        (0..self.m)
            .map(|l| {
                let c = self.costs[l].as_slice();
                let v = &d.v[l];
                let norm = if self.fixed_marginal {
                    Normalization::Rows(self.inst.marginals[l].as_slice())
                } else {
                    Normalization::Simplex
                };
                if d.u.is_empty() {
                    kernels::entropy_prox_by(&y[l], |i, j| c[i * n + j] - v[j], sigma, self.gamma_reg, norm)
                } else {
                    let u = &d.u[l];
                    kernels::entropy_prox_by(&y[l], |i, j| c[i * n + j] - u[i] - v[j], sigma, self.gamma_reg, norm)
                }
            })
            .collect()
    }

    fn primal_prox(&mut self, x: &[f64], y: &Vec<TransportPlan>, tau: f64) -> Result<Vec<f64>> {
        let (n, m) = (self.n, self.m);
        let lam = self.inst.lambda;
        let mut out = Vec::with_capacity(x.len());
        let ul = self.u_len();
        for l in 0..ul / n.max(1) {
            let mu = self.inst.marginals[l].as_slice();
            let rows = y[l].row_sums();
            out.extend((0..n).map(|i| (x[l * n + i] + tau * (mu[i] - rows[i])).clamp(-lam, lam)));
        }
        let cm = y[m - 1].col_sums();
        for l in 0..m - 1 {
            let cl = y[l].col_sums();
            let base = ul + l * n;
            out.extend((0..n).map(|j| (x[base + j] + tau * (cm[j] - cl[j])).clamp(-lam, lam)));
        }
        Ok(out)
    }

    fn coupling(&self, dx: &[f64], y1: &Vec<TransportPlan>, y0: &Vec<TransportPlan>) -> f64 {
        let d = self.unpack(dx);
        let mut acc = 0.0;
        for l in 0..self.m {
            let w = self.inst.weights[l];
            if !d.u.is_empty() {
                let (r1, r0) = (y1[l].row_sums(), y0[l].row_sums());
                acc += w * d.u[l].iter().enumerate().map(|(i, du)| du * (r1[i] - r0[i])).sum::<f64>();
            }
            let (c1, c0) = (y1[l].col_sums(), y0[l].col_sums());
            acc += w * d.v[l].iter().enumerate().map(|(j, dv)| dv * (c1[j] - c0[j])).sum::<f64>();
        }
        acc
    }

    fn dual_divergence(&self, y1: &Vec<TransportPlan>, y0: &Vec<TransportPlan>) -> f64 {
        y1.iter()
            .zip(y0)
            .zip(&self.inst.weights)
            .map(|((a, b), w)| w * kernels::kl_divergence(a, b).unwrap_or(f64::NAN))
            .sum()
    }

    fn primal_norm_sq(&self, dx: &[f64]) -> f64 {
        let n = self.n;
        let ul = self.u_len();
        let (u, v) = dx.split_at(ul);
        let w = &self.inst.weights;
        let su: f64 = u.chunks(n).zip(w).map(|(b, w)| w * matrix::dot(b, b)).sum();
        let sv: f64 = v.chunks(n).zip(w).map(|(b, w)| w * matrix::dot(b, b)).sum();
        su + sv
    }

    fn dual_sum_zero(&self, _: &Vec<TransportPlan>) -> Vec<Vec<f64>> {
        vec![vec![0.0; self.n * self.n]; self.m]
    }

    fn dual_sum_add(&self, sum: &mut Vec<Vec<f64>>, y: &Vec<TransportPlan>, w: f64) {
        for (s, p) in sum.iter_mut().zip(y) {
            ot::add_scaled(s, p.linear(), w, self.n);
        }
    }

    fn evaluate(&mut self, p: EvalPoint<'_, Self>) -> Result<GapEval> {
        let n = self.n;
        let to_matrix = |v: Vec<f64>| Matrix::from_vec(n, n, v);
        let avg: Vec<Matrix> = if p.weight > 0.0 {
            p.ysum
                .iter()
                .map(|s| to_matrix(s.iter().map(|v| v / p.weight).collect()))
                .collect::<Result<_>>()?
        } else {
            p.y.iter().map(TransportPlan::to_matrix).collect()
        };
        let last: Vec<Matrix> = p.y.iter().map(TransportPlan::to_matrix).collect();
        let xhat = self.clip(p.xhat);
        let dual = self.unpack(&xhat);
        let raw = wb_gap(&avg, &dual, self.inst)?;
        self.offer(&avg, &xhat)?;
        self.offer(&last, p.x)?;
        Ok(GapEval {
            raw,
            certificate: (self.best.value - self.best.bound).max(0.0),
            primal_value: self.best.value,
        })
    }
}

/// Result of a barycenter solve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WbSolution {
    pub barycenter: Histogram,
    /// Plans rounded onto `(μ_l, barycenter)`.
    pub plans: Vec<Matrix>,
    /// `Σ w_l ⟨C_l, plan_l⟩` on raw costs.
    pub value: f64,
    pub dual_bound: f64,
    pub gap_certificate: f64,
    pub raw_gap: f64,
    /// Ergodic duals, clipped to the box.
    pub dual: WbDual,
    pub converged: bool,
    pub iterations: usize,
    pub total_inner: usize,
    pub gamma_reg: f64,
    pub ops: u64,
    pub config: SolverConfig,
    pub trace: Vec<TraceRow>,
    #[serde(skip)]
    pub steps: Vec<StepRecord>,
}

/// Engine configuration for a barycenter solve.
pub fn wb_config(inst: &WbInstance, eps: f64, variant: Variant, opts: &OtOptions) -> Result<(SolverConfig, f64)> {
    if opts.delta.is_some() {
        return Err(Error::InvalidConfig("scaled mode is not available for barycenters".into()));
    }
    let l = coupling_norm(&inst.weights, opts.fixed_marginal);
    ot::engine_config(inst.n(), inst.lambda, eps, variant, opts, l)
}

pub fn solve_wb(inst: &WbInstance, eps: f64, variant: Variant, opts: &OtOptions) -> Result<WbSolution> {
    solve_wb_with(inst, eps, variant, opts, &mut |_| {})
}

pub fn solve_wb_with(
    inst: &WbInstance,
    eps: f64,
    variant: Variant,
    opts: &OtOptions,
    callback: &mut dyn FnMut(&TraceRow),
) -> Result<WbSolution> {
    let (cfg, gamma_reg) = wb_config(inst, eps, variant, opts)?;
    let mut problem = WbProblem::new(inst, opts.fixed_marginal, gamma_reg)?;
    let (x0, y0) = problem.initial_point();
    let out = hpd::run_with(&cfg, &mut problem, x0, y0, callback)?;
    let dual = problem.unpack(&problem.clip(&out.xhat));
    let best = problem.best;
    let (barycenter, plans) = match best.plans {
        Some(p) => p,
        None => round_plans(&out.y.iter().map(TransportPlan::to_matrix).collect::<Vec<_>>(), inst)?,
    };
    Ok(WbSolution {
        barycenter,
        plans,
        value: best.value,
        dual_bound: best.bound,
        gap_certificate: (best.value - best.bound).max(0.0),
        raw_gap: out.last_eval.raw,
        dual,
        converged: out.status == RunStatus::Converged,
        iterations: out.iterations,
        total_inner: out.total_inner(),
        gamma_reg,
        ops: problem.ops,
        config: cfg,
        trace: out.trace,
        steps: out.steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::gen_random_instance;

    fn twin(n: usize) -> WbInstance {
        let base = gen_random_instance(n, 3).unwrap();
        let c = Matrix::from_fn(n, n, |i, j| (i as f64 - j as f64).abs() / n as f64);
        WbInstance::new(vec![0.5, 0.5], vec![base.mu.clone(), base.mu.clone()], vec![c]).unwrap()
    }

    #[test]
    fn closure_and_zero_step() {
        let inst = twin(4);
        let mut p = WbProblem::new(&inst, false, 0.0).unwrap();
        let (x0, y0) = p.initial_point();
        let x: Vec<f64> = (0..x0.len()).map(|k| 0.001 * k as f64).collect();
        assert_eq!(p.primal_prox(&x, &y0, 0.0).unwrap(), x);
        let d = p.unpack(&x);
        assert!(d.closure_residual(&inst.weights) < 1e-15);
    }

    #[test]
    fn weighted_divergence_matches_blocks() {
        let inst = twin(5);
        let mut p = WbProblem::new(&inst, false, 0.0).unwrap();
        let (x0, y0) = p.initial_point();
        let x: Vec<f64> = (0..x0.len()).map(|k| ((k * 7) % 5) as f64 * 0.01).collect();
        let y1 = p.dual_prox(&y0, &x, 3.0).unwrap();
        let direct: f64 = (0..2).map(|l| 0.5 * kernels::kl_divergence(&y1[l], &y0[l]).unwrap()).sum();
        assert!((p.dual_divergence(&y1, &y0) - direct).abs() < 1e-15);
        assert_eq!(p.ops, 2 * 25);
    }

    #[test]
    fn gap_of_zero_duals_is_primal_term() {
        let inst = twin(4);
        let plans = vec![Matrix::filled(4, 4, 1.0 / 16.0); 2];
        let dual = WbDual { u: vec![vec![0.0; 4]; 2], v: vec![vec![0.0; 4]; 2] };
        let g = wb_gap(&plans, &dual, &inst).unwrap();
        let mut want = 0.0;
        for l in 0..2 {
            let c = inst.cost(l).row_normalized();
            want += 0.5 * (c.entries().dot(&plans[l]) + inst.lambda * matrix::l1_diff(inst.marginals[l].as_slice(), &plans[l].row_sums()));
        }
        assert!((g - want).abs() < 1e-15);
    }

    #[test]
    fn twin_barycenter_is_the_marginal() {
        let inst = twin(6);
        for fm in [false, true] {
            let opts = OtOptions { fixed_marginal: fm, max_iter: 20_000, ..Default::default() };
            let sol = solve_wb(&inst, 1e-3, Variant::Regularized, &opts).unwrap();
            assert!(sol.converged, "fm = {fm}");
            assert!(sol.barycenter.tv_distance(&inst.marginals[0]) <= 0.05);
            for p in &sol.plans {
                for (a, b) in p.col_sums().iter().zip(sol.barycenter.as_slice()) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
            assert!(sol.dual.closure_residual(&inst.weights) < 1e-10);
        }
    }

    #[test]
    fn degenerate_weights_rejected() {
        let base = gen_random_instance(3, 1).unwrap();
        let r = WbInstance::new(vec![1.0, 0.0], vec![base.mu.clone(), base.nu.clone()], vec![base.cost.entries().clone()]);
        assert!(r.is_err());
    }
}
