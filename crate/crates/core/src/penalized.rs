//! Unbalanced OT and WB: the marginal constraint on `ν` is replaced by a convex penalty
//! `ψ(ν − Xᵀ1)`, which only changes the `v` update.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hpd::{self, EvalPoint, GapEval, RunStatus, SaddleProblem, SolverConfig, TraceRow};
use crate::instances::{CostMatrix, Histogram, OtInstance, WbInstance};
use crate::kernels::{self, Normalization, TransportPlan};
use crate::matrix::Matrix;
use crate::ot::{self, OtOptions, OtProblem, OtSolution, Variant};

/// Marginal penalty `ψ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Penalty {
    /// `ψ(r) = ‖r‖²/(2η)`; `η → 0` recovers the hard constraint.
    Quadratic { eta: f64 },
    /// `ψ(r) = α‖r‖₁`.
    Tv { alpha: f64 },
}

impl Penalty {
    pub fn validate(&self) -> Result<()> {
        let p = match *self {
            Penalty::Quadratic { eta } => eta,
            Penalty::Tv { alpha } => alpha,
        };
        if p > 0.0 && p.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("penalty parameter {p} must be positive")))
        }
    }

    /// `ψ(r)`.
    pub fn value(&self, r: &[f64]) -> f64 {
        match *self {
            Penalty::Quadratic { eta } => r.iter().map(|x| x * x).sum::<f64>() / (2.0 * eta),
            Penalty::Tv { alpha } => alpha * r.iter().map(|x| x.abs()).sum::<f64>(),
        }
    }

    /// `ψ*(v)`; infinite outside the TV box.
    pub fn conjugate(&self, v: &[f64]) -> f64 {
        match *self {
            Penalty::Quadratic { eta } => 0.5 * eta * v.iter().map(|x| x * x).sum::<f64>(),
            Penalty::Tv { alpha } => {
                if v.iter().all(|x| x.abs() <= alpha * (1.0 + 1e-12)) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    /// Projects `v` onto `dom ψ*`.
    pub fn feasible(&self, v: &mut [f64]) {
        if let Penalty::Tv { alpha } = *self {
            for x in v.iter_mut() {
                *x = x.clamp(-alpha, alpha);
            }
        }
    }

    /// Box bound used in place of `λ` (infinite for the quadratic penalty).
    pub fn scale(&self) -> f64 {
        match *self {
            Penalty::Quadratic { .. } => f64::INFINITY,
            Penalty::Tv { alpha } => alpha,
        }
    }
}

/// Parses `quad:<eta>` or `tv:<alpha>`.
impl std::str::FromStr for Penalty {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, value) = s
            .split_once(':')
            .ok_or_else(|| Error::InvalidConfig(format!("penalty `{s}` is not of the form quad:<eta> or tv:<alpha>")))?;
        let p: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("penalty parameter `{value}` is not a number")))?;
        let pen = match kind.trim() {
            "quad" | "quadratic" => Penalty::Quadratic { eta: p },
            "tv" => Penalty::Tv { alpha: p },
            other => return Err(Error::InvalidConfig(format!("unknown penalty kind `{other}`"))),
        };
        pen.validate()?;
        Ok(pen)
    }
}

/// `argmin_v ⟨v, −r⟩ + ψ*(v) + ‖v − v̄‖²/(2τ)` with `r = ν − Xᵀ1`.
pub fn penalty_prox(vbar: &[f64], residual: &[f64], tau: f64, penalty: &Penalty) -> Vec<f64> {
    let mut out = Vec::with_capacity(vbar.len());
    penalty_prox_into(vbar, residual, tau, penalty, &mut out);
    out
}

pub(crate) fn penalty_prox_into(vbar: &[f64], residual: &[f64], tau: f64, penalty: &Penalty, out: &mut Vec<f64>) {
    out.clear();
    match *penalty {
        Penalty::Quadratic { eta } => {
            let f = 1.0 / (1.0 + eta * tau);
            out.extend(vbar.iter().zip(residual).map(|(v, r)| f * (v + tau * r)));
        }
        Penalty::Tv { alpha } => {
            out.extend(vbar.iter().zip(residual).map(|(v, r)| (v + tau * r).clamp(-alpha, alpha)));
        }
    }
}

/// OT with a fixed first marginal and a penalized second one; `ν` may have any mass.
#[derive(Debug, Clone)]
pub struct UnbalancedOtInstance {
    pub mu: Histogram,
    pub nu: Vec<f64>,
    pub cost: CostMatrix,
}

impl UnbalancedOtInstance {
    pub fn new(mu: Histogram, nu: Vec<f64>, cost: Matrix) -> Result<Self> {
        let cost = CostMatrix::new(cost)?;
        if mu.len() != cost.n() || nu.len() != cost.n() {
            return Err(Error::invalid(format!("marginals of length {} and {} for n = {}", mu.len(), nu.len(), cost.n())));
        }
        if nu.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::invalid("target marginal must be finite and nonnegative"));
        }
        Ok(UnbalancedOtInstance { mu, nu, cost })
    }

    pub fn n(&self) -> usize {
        self.cost.n()
    }

    /// `⟨C, X⟩ + ψ(ν − Xᵀ1)`.
    pub fn objective(&self, plan: &Matrix, penalty: &Penalty) -> f64 {
        self.cost.entries().dot(plan) + penalty.value(&residual(&self.nu, &plan.col_sums()))
    }
}

impl From<&OtInstance> for UnbalancedOtInstance {
    fn from(inst: &OtInstance) -> Self {
        UnbalancedOtInstance {
            mu: inst.mu.clone(),
            nu: inst.nu.as_slice().to_vec(),
            cost: inst.cost.clone(),
        }
    }
}

fn residual(target: &[f64], got: &[f64]) -> Vec<f64> {
    target.iter().zip(got).map(|(a, b)| a - b).collect()
}

/// Box bound used in the step-size formulas: the TV radius, or `‖C‖/2`.
fn effective_lambda(penalty: &Penalty, max_cost: f64) -> f64 {
    match *penalty {
        Penalty::Tv { alpha } => alpha,
        Penalty::Quadratic { .. } => crate::instances::default_lambda(max_cost),
    }
}

/// Penalized OT over `Δ_μ`. The reported plan is the best iterate (it is feasible as is);
/// the certificate compares its objective against the dual bound
/// `⟨v, ν⟩ − ψ*(v) + Σ_i μ_i min_j (C_ij − v_j)`.
pub fn solve_unbalanced_ot(
    inst: &UnbalancedOtInstance,
    penalty: Penalty,
    eps: f64,
    variant: Variant,
    opts: &OtOptions,
) -> Result<OtSolution> {
    if opts.delta.is_some() {
        return Err(Error::InvalidConfig("scaled mode is not available for penalized problems".into()));
    }
    penalty.validate()?;
    let lam = effective_lambda(&penalty, inst.cost.max_entry());
    let (cfg, gamma_reg) = ot::engine_config(inst.n(), lam, eps, variant, opts, 1.0)?;
    let mut problem = OtProblem::penalized(&inst.mu, &inst.nu, &inst.cost, penalty, gamma_reg)?;
    let (x0, y0) = problem.initial_point()?;
    let out = hpd::run(&cfg, &mut problem, x0, y0)?;
    Ok(ot::finish(problem, out, cfg, gamma_reg))
}

/// Barycenter with penalized column constraints and a free nonnegative `ν`.
pub struct UnbalancedWbProblem<'a> {
    inst: &'a WbInstance,
    penalties: Vec<Penalty>,
    n: usize,
    m: usize,
    gamma_reg: f64,
    best_value: f64,
    best_bound: f64,
    best: Option<(Vec<f64>, Vec<Matrix>)>,
}

/// Plans in `Δ_{μ_l}` together with the free barycenter.
#[derive(Debug, Clone)]
pub struct UnbalancedWbIterate {
    pub plans: Vec<TransportPlan>,
    pub nu: Vec<f64>,
    pub nu_log: Vec<f64>,
}

impl<'a> UnbalancedWbProblem<'a> {
    pub fn new(inst: &'a WbInstance, penalties: &[Penalty], gamma_reg: f64) -> Result<Self> {
        let m = inst.m();
        let penalties = match penalties.len() {
            1 => vec![penalties[0]; m],
            k if k == m => penalties.to_vec(),
            k => return Err(Error::InvalidConfig(format!("{k} penalties for {m} marginals"))),
        };
        for p in &penalties {
            p.validate()?;
        }
        Ok(UnbalancedWbProblem {
            inst,
            penalties,
            n: inst.n(),
            m,
            gamma_reg,
            best_value: f64::INFINITY,
            best_bound: f64::NEG_INFINITY,
            best: None,
        })
    }

    pub fn initial_point(&self) -> (Vec<f64>, UnbalancedWbIterate) {
        let n = self.n;
        let plans = self.inst.marginals.iter().map(TransportPlan::row_uniform).collect();
        let nu = vec![1.0 / n as f64; n];
        let nu_log = nu.iter().map(|x| x.ln()).collect();
        (vec![0.0; self.m * n], UnbalancedWbIterate { plans, nu, nu_log })
    }

    /// `Σ_l w_l v_l`.
    fn weighted_sum(&self, v: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut s = vec![0.0; n];
        for (b, w) in v.chunks(n).zip(&self.inst.weights) {
            s.iter_mut().zip(b).for_each(|(s, x)| *s += w * x);
        }
        s
    }

    fn feasible(&self, v: &[f64]) -> Vec<f64> {
        let mut out = v.to_vec();
        for (b, p) in out.chunks_mut(self.n).zip(&self.penalties) {
            p.feasible(b);
        }
        out
    }

    /// `Σ w_l (⟨C_l, X_l⟩ + ψ_l(ν − X_lᵀ1))` on raw costs.
    pub fn objective(&self, plans: &[Matrix], nu: &[f64]) -> f64 {
        (0..self.m)
            .map(|l| {
                let x = &plans[l];
                self.inst.weights[l]
                    * (self.inst.cost(l).entries().dot(x) + self.penalties[l].value(&residual(nu, &x.col_sums())))
            })
            .sum()
    }

    /// Weak-duality bound; `v` is first raised where `Σ w_l v_l < 0`, since the infimum
    /// over `ν ≥ 0` is otherwise unbounded.
    pub fn lower_bound(&self, v: &[f64]) -> f64 {
        let n = self.n;
        let s = self.weighted_sum(v);
        let mut v = v.to_vec();
        for b in v.chunks_mut(n) {
            for (x, s) in b.iter_mut().zip(&s) {
                if *s < 0.0 {
                    *x -= s;
                }
            }
        }
        (0..self.m)
            .map(|l| {
                let b = &v[l * n..(l + 1) * n];
                let mu = self.inst.marginals[l].as_slice();
                self.inst.weights[l] * (ot::row_min_bound(self.inst.cost(l).entries(), mu, b) - self.penalties[l].conjugate(b))
            })
            .sum()
    }

    fn offer(&mut self, plans: Vec<Matrix>, nu: Vec<f64>, v: &[f64]) {
        let value = self.objective(&plans, &nu);
        if value < self.best_value {
            self.best_value = value;
            self.best = Some((nu, plans));
        }
        let v = self.feasible(v);
        self.best_bound = self.best_bound.max(self.lower_bound(&v));
    }
}

impl SaddleProblem for UnbalancedWbProblem<'_> {
    type Dual = UnbalancedWbIterate;
    type DualSum = (Vec<Vec<f64>>, Vec<f64>);

    fn dual_prox(&mut self, y: &UnbalancedWbIterate, vbar: &[f64], sigma: f64) -> Result<UnbalancedWbIterate> {
        let n = self.n;
        let plans = (0..self.m)
            .map(|l| {
                let c = self.inst.cost(l).entries().as_slice();
                let v = &vbar[l * n..(l + 1) * n];
                kernels::entropy_prox_by(
                    &y.plans[l],
                    |i, j| c[i * n + j] - v[j],
                    sigma,
                    self.gamma_reg,
                    Normalization::Rows(self.inst.marginals[l].as_slice()),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let s = self.weighted_sum(vbar);
        let nu_log: Vec<f64> = y.nu_log.iter().zip(&s).map(|(l, s)| l - sigma * s).collect();
        let nu: Vec<f64> = nu_log.iter().map(|l| l.exp()).collect();
        if nu.iter().any(|x| !x.is_finite()) {
            return Err(Error::numerical(format!("barycenter update overflowed with sigma = {sigma:e}")));
        }
        Ok(UnbalancedWbIterate { plans, nu, nu_log })
    }

    fn primal_prox(&mut self, v: &[f64], y: &UnbalancedWbIterate, tau: f64) -> Result<Vec<f64>> {
        let n = self.n;
        let mut out = Vec::with_capacity(v.len());
        let mut block = Vec::with_capacity(n);
        for l in 0..self.m {
            let r = residual(&y.nu, y.plans[l].col_sums());
            penalty_prox_into(&v[l * n..(l + 1) * n], &r, tau, &self.penalties[l], &mut block);
            out.extend_from_slice(&block);
        }
        Ok(out)
    }

    fn coupling(&self, dv: &[f64], y1: &UnbalancedWbIterate, y0: &UnbalancedWbIterate) -> f64 {
        let n = self.n;
        (0..self.m)
            .map(|l| {
                let (c1, c0) = (y1.plans[l].col_sums(), y0.plans[l].col_sums());
                let d = &dv[l * n..(l + 1) * n];
                self.inst.weights[l] * (0..n).map(|j| d[j] * ((c1[j] - c0[j]) - (y1.nu[j] - y0.nu[j]))).sum::<f64>()
            })
            .sum()
    }

    fn dual_divergence(&self, y1: &UnbalancedWbIterate, y0: &UnbalancedWbIterate) -> f64 {
        let plans: f64 = y1
            .plans
            .iter()
            .zip(&y0.plans)
            .zip(&self.inst.weights)
            .map(|((a, b), w)| w * kernels::kl_divergence(a, b).unwrap_or(f64::NAN))
            .sum();
        let nu: f64 = (0..self.n)
            .map(|j| kernels::kl_entry(y1.nu[j], y1.nu_log[j], y0.nu[j], y0.nu_log[j]))
            .sum();
        plans + nu
    }

    fn primal_norm_sq(&self, dv: &[f64]) -> f64 {
        dv.chunks(self.n).zip(&self.inst.weights).map(|(b, w)| w * crate::matrix::dot(b, b)).sum()
    }

    fn dual_sum_zero(&self, _: &UnbalancedWbIterate) -> Self::DualSum {
        (vec![vec![0.0; self.n * self.n]; self.m], vec![0.0; self.n])
    }

    fn dual_sum_add(&self, sum: &mut Self::DualSum, y: &UnbalancedWbIterate, w: f64) {
        for (s, p) in sum.0.iter_mut().zip(&y.plans) {
            ot::add_scaled(s, p.linear(), w, self.n);
        }
        sum.1.iter_mut().zip(&y.nu).for_each(|(s, x)| *s += w * x);
    }

    fn evaluate(&mut self, p: EvalPoint<'_, Self>) -> Result<GapEval> {
        let n = self.n;
        let (avg_plans, avg_nu) = if p.weight > 0.0 {
            let plans = p
                .ysum
                .0
                .iter()
                .map(|s| Matrix::from_vec(n, n, s.iter().map(|x| x / p.weight).collect()))
                .collect::<Result<Vec<_>>>()?;
            (plans, p.ysum.1.iter().map(|x| x / p.weight).collect::<Vec<_>>())
        } else {
            (p.y.plans.iter().map(TransportPlan::to_matrix).collect(), p.y.nu.clone())
        };
        let vhat = self.feasible(p.xhat);
        let raw = self.objective(&avg_plans, &avg_nu) - self.lower_bound(&vhat);
        self.offer(avg_plans, avg_nu, p.xhat);
        let last: Vec<Matrix> = p.y.plans.iter().map(TransportPlan::to_matrix).collect();
        self.offer(last, p.y.nu.clone(), p.x);
        Ok(GapEval {
            raw,
            certificate: (self.best_value - self.best_bound).max(0.0),
            primal_value: self.best_value,
        })
    }
}

/// Result of an unbalanced barycenter solve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UnbalancedWbSolution {
    /// Free barycenter; its mass is set by the penalties.
    pub barycenter: Vec<f64>,
    pub plans: Vec<Matrix>,
    pub value: f64,
    pub dual_bound: f64,
    pub gap_certificate: f64,
    pub raw_gap: f64,
    pub v: Vec<Vec<f64>>,
    pub converged: bool,
    pub iterations: usize,
    pub total_inner: usize,
    pub gamma_reg: f64,
    pub config: SolverConfig,
    pub trace: Vec<TraceRow>,
}

impl UnbalancedWbSolution {
    /// The barycenter rescaled to unit mass, for reporting.
    pub fn normalized_barycenter(&self) -> Result<Histogram> {
        Histogram::from_weights(self.barycenter.clone())
    }
}

/// Runs the penalized barycenter iteration. The coupling norm is `√2`; the step lower
/// bound is not enforced because the free `ν` leaves the simplex.
pub fn solve_unbalanced_wb(
    inst: &WbInstance,
    penalties: &[Penalty],
    eps: f64,
    variant: Variant,
    opts: &OtOptions,
) -> Result<UnbalancedWbSolution> {
    if opts.delta.is_some() {
        return Err(Error::InvalidConfig("scaled mode is not available for penalized problems".into()));
    }
    let max_cost = (0..inst.m()).map(|l| inst.cost(l).max_entry()).fold(0.0, f64::max);
    let lam = penalties
        .iter()
        .map(|p| effective_lambda(p, max_cost))
        .fold(0.0, f64::max);
    let (mut cfg, gamma_reg) = ot::engine_config(inst.n(), lam, eps, variant, opts, std::f64::consts::SQRT_2)?;
    cfg.check_step_bound = false;
    let mut problem = UnbalancedWbProblem::new(inst, penalties, gamma_reg)?;
    let (x0, y0) = problem.initial_point();
    let out = hpd::run(&cfg, &mut problem, x0, y0)?;
    let n = inst.n();
    let v = problem.feasible(&out.xhat).chunks(n).map(<[f64]>::to_vec).collect();
    let (barycenter, plans) = problem
        .best
        .take()
        .unwrap_or_else(|| (out.y.nu.clone(), out.y.plans.iter().map(TransportPlan::to_matrix).collect()));
    Ok(UnbalancedWbSolution {
        barycenter,
        plans,
        value: problem.best_value,
        dual_bound: problem.best_bound,
        gap_certificate: (problem.best_value - problem.best_bound).max(0.0),
        raw_gap: out.last_eval.raw,
        v,
        converged: out.status == RunStatus::Converged,
        iterations: out.iterations,
        total_inner: out.total_inner(),
        gamma_reg,
        config: cfg,
        trace: out.trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::gen_random_instance;
    use crate::oracle;

    #[test]
    fn penalty_parsing() {
        assert_eq!("quad:0.5".parse::<Penalty>().unwrap(), Penalty::Quadratic { eta: 0.5 });
        assert_eq!("tv:2".parse::<Penalty>().unwrap(), Penalty::Tv { alpha: 2.0 });
        assert!("tv:-1".parse::<Penalty>().is_err());
        assert!("l2:1".parse::<Penalty>().is_err());
        assert!("quad".parse::<Penalty>().is_err());
    }

    #[test]
    fn zero_step_keeps_vbar() {
        let vbar = [0.3, -0.2, 1.5];
        let r = [1.0, 2.0, 3.0];
        assert_eq!(penalty_prox(&vbar, &r, 0.0, &Penalty::Quadratic { eta: 0.7 }), vbar.to_vec());
        assert_eq!(penalty_prox(&vbar, &r, 0.0, &Penalty::Tv { alpha: 2.0 }), vbar.to_vec());
    }

    #[test]
    fn quadratic_prox_is_stationary() {
        // η v − r + (v − v̄)/τ = 0
        for (eta, tau) in [(0.1, 2.0), (3.0, 0.05), (1e-4, 10.0)] {
            let vbar = [0.3, -0.2, 1.5];
            let r = [0.01, -2.0, 0.4];
            let v = penalty_prox(&vbar, &r, tau, &Penalty::Quadratic { eta });
            for k in 0..3 {
                assert!((eta * v[k] - r[k] + (v[k] - vbar[k]) / tau).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn vanishing_eta_is_a_free_step() {
        let vbar = [0.3, -0.2, 1.5];
        let r = [0.01, -2.0, 0.4];
        let v = penalty_prox(&vbar, &r, 0.5, &Penalty::Quadratic { eta: 1e-12 });
        for k in 0..3 {
            assert!((v[k] - (vbar[k] + 0.5 * r[k])).abs() < 1e-6);
        }
    }

    #[test]
    fn tv_matches_box_update() {
        let inst = gen_random_instance(6, 2).unwrap();
        let lam = inst.lambda;
        let vbar: Vec<f64> = (0..6).map(|k| k as f64 * 0.2 - 0.5).collect();
        let r: Vec<f64> = (0..6).map(|k| 1.0 - k as f64 * 0.3).collect();
        let v = penalty_prox(&vbar, &r, 0.8, &Penalty::Tv { alpha: lam });
        for k in 0..6 {
            assert_eq!(v[k], (vbar[k] + 0.8 * r[k]).clamp(-lam, lam));
        }
    }

    #[test]
    fn stiff_quadratic_recovers_balanced_ot() {
        for seed in 0..4 {
            let inst = gen_random_instance(6, seed).unwrap();
            let exact = oracle::solve_exact_ot(&inst).unwrap();
            let u = UnbalancedOtInstance::from(&inst);
            let pen = Penalty::Quadratic { eta: 1e-6 };
            let opts = OtOptions { max_iter: 20_000, ..Default::default() };
            let sol = solve_unbalanced_ot(&u, pen, 1e-3, Variant::Regularized, &opts).unwrap();
            assert!((sol.value - exact.value).abs() <= 1e-2 * inst.cost.max_entry(), "seed {seed}");
            let penalty_term = pen.value(&residual(&u.nu, &sol.plan.col_sums()));
            assert!((sol.value - (u.cost.entries().dot(&sol.plan) + penalty_term)).abs() < 1e-12);
        }
    }

    #[test]
    fn tv_with_double_mass() {
        let base = gen_random_instance(5, 9).unwrap();
        let nu: Vec<f64> = base.mu.as_slice().iter().map(|x| 2.0 * x).collect();
        let inst = UnbalancedOtInstance::new(base.mu.clone(), nu.clone(), base.cost.entries().clone()).unwrap();
        let pen = Penalty::Tv { alpha: 0.5 };
        let sol = solve_unbalanced_ot(&inst, pen, 1e-3, Variant::Regularized, &OtOptions::default()).unwrap();
        let diag = Matrix::from_fn(5, 5, |i, j| if i == j { base.mu[i] } else { 0.0 });
        assert!(sol.value - sol.gap_certificate <= inst.objective(&diag, &pen) + 1e-12);
        for (a, b) in sol.plan.row_sums().iter().zip(base.mu.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn barycenter_update_follows_weighted_duals() {
        let base = gen_random_instance(4, 1).unwrap();
        let inst = WbInstance::new(vec![0.25, 0.75], vec![base.mu.clone(), base.nu.clone()], vec![base.cost.entries().clone()]).unwrap();
        let mut p = UnbalancedWbProblem::new(&inst, &[Penalty::Quadratic { eta: 0.1 }], 0.0).unwrap();
        let (v0, y0) = p.initial_point();
        let same = p.dual_prox(&y0, &v0, 0.7).unwrap();
        for (a, b) in same.nu.iter().zip(&y0.nu) {
            assert!((a - b).abs() < 1e-18);
        }
        // Σ w_l v̄_l = 0.3 everywhere
        let vbar = vec![0.3; 8];
        let y1 = p.dual_prox(&y0, &vbar, 0.7).unwrap();
        for (a, b) in y1.nu.iter().zip(&y0.nu) {
            assert!((a / b - (-0.7f64 * 0.3).exp()).abs() < 1e-14);
        }
    }

    #[test]
    fn twin_unbalanced_barycenter() {
        let base = gen_random_instance(6, 4).unwrap();
        let c = Matrix::from_fn(6, 6, |i, j| (i as f64 - j as f64).abs() / 6.0);
        let inst = WbInstance::new(vec![0.5, 0.5], vec![base.mu.clone(), base.mu.clone()], vec![c]).unwrap();
        let opts = OtOptions { max_iter: 5000, ..Default::default() };
        let sol = solve_unbalanced_wb(&inst, &[Penalty::Quadratic { eta: 1e-3 }], 1e-4, Variant::Regularized, &opts).unwrap();
        let bary = sol.normalized_barycenter().unwrap();
        assert!(bary.tv_distance(&base.mu) <= 0.05);
        for (plan, mu) in sol.plans.iter().zip(&inst.marginals) {
            for (a, b) in plan.row_sums().iter().zip(mu.as_slice()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
