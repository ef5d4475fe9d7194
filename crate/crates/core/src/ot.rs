//! Optimal transport through the primal-dual engine.
//!
//! The engine's Euclidean variable is the dual pair `(u, v)` and its Bregman variable is
//! the plan `X`; `g(u, v) = −⟨u, μ⟩ − ⟨v, ν⟩` on the box `[−λ, λ]²ⁿ` and
//! `h*(X) = ⟨C, X⟩ (+ γ ξ(X))` on the simplex. The solver works on the normalized cost;
//! reported values use the raw cost.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hpd::{self, EvalPoint, GapEval, RunOutput, RunStatus, SaddleProblem, SolverConfig, StepRecord, TraceRow};
use crate::instances::{CostMatrix, Histogram, OtInstance};
use crate::kernels::{self, Normalization, ScaledPlan, TransportPlan};
use crate::matrix::{self, Matrix};
use crate::par;
use crate::penalized::{self, Penalty};

/// Entries above this count towards the support of a plan.
pub const SUPPORT_TOL: f64 = 1e-12;

/// `u ⊗ 1 + 1 ⊗ v`.
pub fn apply_k(u: &[f64], v: &[f64]) -> Matrix {
    matrix::outer_sum(u, v)
}

/// `K*X = (X1, Xᵀ1)`.
pub fn apply_k_adjoint(x: &Matrix) -> (Vec<f64>, Vec<f64>) {
    (x.row_sums(), x.col_sums())
}

/// Dual pair of the transport constraints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OtDual {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl OtDual {
    pub fn zeros(n: usize) -> Self {
        OtDual {
            u: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn max_abs(&self) -> f64 {
        matrix::inf_norm(&self.u).max(matrix::inf_norm(&self.v))
    }
}

/// Maps a plan of total mass one onto the couplings of `(μ, ν)`: scale rows down to `μ`,
/// columns down to `ν`, then add the rank-one correction `err_r err_cᵀ/‖err_r‖₁`.
pub fn round_to_feasible(x: &Matrix, mu: &[f64], nu: &[f64]) -> Result<Matrix> {
    let n = x.rows();
    if !x.is_square() || mu.len() != n || nu.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "plan {}x{} with marginals of length {} and {}",
            x.rows(),
            x.cols(),
            mu.len(),
            nu.len()
        )));
    }
    let mut y = x.clone();
    let rows = y.row_sums();
    let a: Vec<f64> = rows
        .iter()
        .zip(mu)
        .map(|(&r, &m)| if r > m { m / r } else { 1.0 })
        .collect();
    {
        let a = &a;
        par::map_row_chunks_mut(y.as_mut_slice(), n, |first, chunk| {
            for (r, row) in chunk.chunks_mut(n).enumerate() {
                let f = a[first + r];
                if f != 1.0 {
                    row.iter_mut().for_each(|v| *v *= f);
                }
            }
        });
    }
    let cols = y.col_sums();
    let b: Vec<f64> = cols
        .iter()
        .zip(nu)
        .map(|(&c, &t)| if c > t { t / c } else { 1.0 })
        .collect();
    {
        let b = &b;
        par::map_row_chunks_mut(y.as_mut_slice(), n, |_, chunk| {
            for row in chunk.chunks_mut(n) {
                row.iter_mut().zip(b).for_each(|(v, f)| *v *= f);
            }
        });
    }
    let err_r: Vec<f64> = mu.iter().zip(y.row_sums()).map(|(m, r)| (m - r).max(0.0)).collect();
    let err_c: Vec<f64> = nu.iter().zip(y.col_sums()).map(|(t, c)| (t - c).max(0.0)).collect();
    let norm: f64 = err_r.iter().sum();
    if norm > 0.0 {
        let (err_r, err_c) = (&err_r, &err_c);
        par::map_row_chunks_mut(y.as_mut_slice(), n, |first, chunk| {
            for (r, row) in chunk.chunks_mut(n).enumerate() {
                let e = err_r[first + r] / norm;
                if e > 0.0 {
                    row.iter_mut().zip(err_c).for_each(|(v, c)| *v += e * c);
                }
            }
        });
    }
    Ok(y)
}

/// `u_i = min_j (C_ij − v_j)`.
pub fn c_transform_rows(cost: &Matrix, v: &[f64]) -> Vec<f64> {
    let n = cost.cols();
    par::map_row_chunks(cost.as_slice(), n, |_, chunk| {
        chunk
            .chunks(n)
            .map(|row| row.iter().zip(v).map(|(c, v)| c - v).fold(f64::INFINITY, f64::min))
            .collect::<Vec<_>>()
    })
    .concat()
}

/// `v_j = min_i (C_ij − u_i)`.
pub fn c_transform_cols(cost: &Matrix, u: &[f64]) -> Vec<f64> {
    let n = cost.cols();
    let mut out = vec![f64::INFINITY; n];
    for (i, row) in cost.as_slice().chunks(n).enumerate() {
        for (o, c) in out.iter_mut().zip(row) {
            *o = o.min(c - u[i]);
        }
    }
    out
}

/// Best dual objective obtainable from `v` (and `u`, when given) after c-transforms.
/// Any returned pair is feasible for the dual LP, so the value lower-bounds the optimum.
pub fn dual_lower_bound(cost: &Matrix, mu: &[f64], nu: &[f64], u: Option<&[f64]>, v: &[f64]) -> (f64, OtDual) {
    let uu = c_transform_rows(cost, v);
    let mut best = (matrix::dot(&uu, mu) + matrix::dot(v, nu), OtDual { u: uu, v: v.to_vec() });
    if let Some(u) = u {
        let vv = c_transform_cols(cost, u);
        let val = matrix::dot(u, mu) + matrix::dot(&vv, nu);
        if val > best.0 {
            best = (val, OtDual { u: u.to_vec(), v: vv });
        }
    }
    best
}

/// Penalized saddle gap on the normalized cost:
/// `[⟨C,X⟩ + λ‖μ−X1‖₁ + λ‖ν−Xᵀ1‖₁] − [⟨u,μ⟩ + ⟨v,ν⟩ + min_ij (C_ij − u_i − v_j)]`.
pub fn duality_gap(plan: &Matrix, dual: &OtDual, inst: &OtInstance) -> Result<f64> {
    let cost = inst.cost.normalized();
    gap_on(cost.entries(), plan, dual, inst.mu.as_slice(), inst.nu.as_slice(), inst.lambda)
}

fn check_box(dual: &OtDual, lambda: f64) -> Result<()> {
    let max_abs = dual.max_abs();
    if max_abs > lambda * (1.0 + 1e-12) {
        return Err(Error::DualOutsideBox { lambda, max_abs });
    }
    Ok(())
}

fn min_reduced(cost: &Matrix, u: &[f64], v: &[f64]) -> f64 {
    let n = cost.cols();
    par::map_row_chunks(cost.as_slice(), n, |first, chunk| {
        let mut m = f64::INFINITY;
        for (r, row) in chunk.chunks(n).enumerate() {
            let ui = u[first + r];
            for (c, vj) in row.iter().zip(v) {
                m = m.min(c - ui - vj);
            }
        }
        m
    })
    .into_iter()
    .fold(f64::INFINITY, f64::min)
}

fn gap_on(cost: &Matrix, plan: &Matrix, dual: &OtDual, mu: &[f64], nu: &[f64], lambda: f64) -> Result<f64> {
    check_box(dual, lambda)?;
    let primal = cost.dot(plan)
        + lambda * matrix::l1_diff(mu, &plan.row_sums())
        + lambda * matrix::l1_diff(nu, &plan.col_sums());
    let dualv = matrix::dot(&dual.u, mu) + matrix::dot(&dual.v, nu) + min_reduced(cost, &dual.u, &dual.v);
    Ok(primal - dualv)
}

/// Feasible set of the plan iterates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mode {
    /// `X ∈ Δ`, both duals active.
    Simplex,
    /// `X1 = μ` kept exactly; `u` eliminated.
    FixedMarginal,
    /// Scaled entropy: iterates `X^δ ∈ Δ` with floor `δ/n²` and marginals `μ^δ, ν^δ`.
    Scaled { delta: f64 },
}

impl Mode {
    /// Norm of the coupling operator for this mode.
    pub fn coupling_norm(&self) -> f64 {
        match self {
            Mode::FixedMarginal => 1.0,
            _ => std::f64::consts::SQRT_2,
        }
    }
}

/// Plan iterate of the OT adapter.
#[derive(Debug, Clone)]
pub enum PlanIterate {
    Entropic(TransportPlan),
    Scaled(ScaledPlan),
}

impl PlanIterate {
    pub fn linear(&self) -> &[f64] {
        match self {
            PlanIterate::Entropic(p) => p.linear(),
            PlanIterate::Scaled(p) => p.linear(),
        }
    }

    pub fn row_sums(&self) -> &[f64] {
        match self {
            PlanIterate::Entropic(p) => p.row_sums(),
            PlanIterate::Scaled(p) => p.row_sums(),
        }
    }

    pub fn col_sums(&self) -> &[f64] {
        match self {
            PlanIterate::Entropic(p) => p.col_sums(),
            PlanIterate::Scaled(p) => p.col_sums(),
        }
    }
}

pub(crate) fn add_scaled(sum: &mut [f64], y: &[f64], w: f64, n: usize) {
    par::map_row_chunks_mut(sum, n, |first, chunk| {
        let off = first * n;
        let len = chunk.len();
        for (s, v) in chunk.iter_mut().zip(&y[off..off + len]) {
            *s += w * v;
        }
    });
}

/// Best-so-far primal candidate and dual bound.
#[derive(Debug, Clone)]
pub(crate) struct Incumbent {
    pub plan: Option<Matrix>,
    pub value: f64,
    pub bound: f64,
    pub bound_dual: Option<OtDual>,
}

impl Incumbent {
    pub fn new() -> Self {
        Incumbent {
            plan: None,
            value: f64::INFINITY,
            bound: f64::NEG_INFINITY,
            bound_dual: None,
        }
    }

    pub fn offer_plan(&mut self, plan: Matrix, value: f64) {
        if value < self.value {
            self.value = value;
            self.plan = Some(plan);
        }
    }

    pub fn offer_bound(&mut self, bound: f64, dual: OtDual) {
        if bound > self.bound {
            self.bound = bound;
            self.bound_dual = Some(dual);
        }
    }

    pub fn certificate(&self) -> f64 {
        (self.value - self.bound).max(0.0)
    }
}

/// The OT saddle problem in one of the [`Mode`]s, optionally with entropic
/// regularization or a penalty replacing the `ν` constraint.
pub struct OtProblem<'a> {
    mu: &'a Histogram,
    nu: &'a [f64],
    raw: &'a CostMatrix,
    n: usize,
    /// Cost used inside the iteration.
    cost: Matrix,
    /// `raw = cost + row_shift ⊕ col_shift`.
    row_shift: Vec<f64>,
    col_shift: Vec<f64>,
    mode: Mode,
    gamma_reg: f64,
    lambda: f64,
    penalty: Option<Penalty>,
    mu_t: Vec<f64>,
    nu_t: Vec<f64>,
    pub(crate) best: Incumbent,
    /// Largest Newton iteration count seen in the scaled prox.
    pub newton_max: usize,
    pub prox_calls: usize,
}

impl<'a> OtProblem<'a> {
    pub fn new(inst: &'a OtInstance, mode: Mode, gamma_reg: f64) -> Result<Self> {
        Self::build(&inst.mu, inst.nu.as_slice(), &inst.cost, inst.lambda, mode, gamma_reg)
    }

    fn build(
        mu: &'a Histogram,
        nu: &'a [f64],
        raw: &'a CostMatrix,
        lambda: f64,
        mode: Mode,
        gamma_reg: f64,
    ) -> Result<Self> {
        let n = raw.n();
        if n < 2 {
            return Err(Error::invalid("OT needs n >= 2"));
        }
        if mu.len() != n || nu.len() != n {
            return Err(Error::ShapeMismatch(format!("marginals of length {} and {} for n = {n}", mu.len(), nu.len())));
        }
        if !(gamma_reg >= 0.0 && gamma_reg.is_finite()) {
            return Err(Error::InvalidConfig(format!("regularization {gamma_reg} must be nonnegative")));
        }
        let (mu_t, nu_t) = match mode {
            Mode::Scaled { delta } => {
                if !(delta > 0.0 && delta < 1.0) {
                    return Err(Error::InvalidConfig(format!("delta = {delta} must lie in (0, 1)")));
                }
                let floor = delta / n as f64;
                (mu.scaled(delta), nu.iter().map(|x| (1.0 - delta) * x + floor).collect())
            }
            _ => (mu.as_slice().to_vec(), nu.to_vec()),
        };
        let norm = raw.normalized();
        Ok(OtProblem {
            mu,
            nu,
            raw,
            n,
            cost: norm.entries().clone(),
            row_shift: norm.row_shift().to_vec(),
            col_shift: norm.col_shift().to_vec(),
            mode,
            gamma_reg,
            lambda,
            penalty: None,
            mu_t,
            nu_t,
            best: Incumbent::new(),
            newton_max: 0,
            prox_calls: 0,
        })
    }

    /// Unbalanced variant: fixed row marginal `μ`, any nonnegative `ν`, raw cost, and `v`
    /// updated by the penalty prox.
    pub fn penalized(
        mu: &'a Histogram,
        nu: &'a [f64],
        cost: &'a CostMatrix,
        penalty: Penalty,
        gamma_reg: f64,
    ) -> Result<Self> {
        penalty.validate()?;
        if nu.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::invalid("penalized target must be finite and nonnegative"));
        }
        let mut p = Self::build(mu, nu, cost, penalty.scale(), Mode::FixedMarginal, gamma_reg)?;
        p.cost = cost.entries().clone();
        p.row_shift = vec![0.0; p.n];
        p.col_shift = vec![0.0; p.n];
        p.penalty = Some(penalty);
        Ok(p)
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    fn has_u(&self) -> bool {
        !matches!(self.mode, Mode::FixedMarginal)
    }

    /// Length of the Euclidean variable.
    pub fn primal_len(&self) -> usize {
        if self.has_u() {
            2 * self.n
        } else {
            self.n
        }
    }

    /// Splits the Euclidean variable into `(u, v)`; `u` is empty in fixed-marginal mode.
    pub fn split<'x>(&self, x: &'x [f64]) -> (&'x [f64], &'x [f64]) {
        if self.has_u() {
            x.split_at(self.n)
        } else {
            (&x[..0], x)
        }
    }

    /// Starting pair: zero duals, uniform plan (or `μ_i/n` rows in fixed-marginal mode).
    pub fn initial_point(&self) -> Result<(Vec<f64>, PlanIterate)> {
        let y = match self.mode {
            Mode::Simplex => PlanIterate::Entropic(TransportPlan::uniform(self.n)),
            Mode::FixedMarginal => PlanIterate::Entropic(TransportPlan::row_uniform(self.mu)),
            Mode::Scaled { delta } => PlanIterate::Scaled(ScaledPlan::uniform(self.n, delta)?),
        };
        Ok((vec![0.0; self.primal_len()], y))
    }

    /// Clips a Euclidean point into the dual domain.
    fn clip(&self, x: &[f64]) -> Vec<f64> {
        let mut out = x.to_vec();
        match self.penalty {
            Some(p) => p.feasible(&mut out),
            None => out.iter_mut().for_each(|v| *v = v.clamp(-self.lambda, self.lambda)),
        }
        out
    }

    /// Plan in the original variable (undoing the scaling).
    fn to_plan(&self, lin: &[f64]) -> Matrix {
        match self.mode {
            Mode::Scaled { delta } => kernels::unscale(lin, self.n, delta),
            _ => Matrix::from_vec(self.n, self.n, lin.to_vec()).expect("square plan"),
        }
    }

    /// Saddle gap at `(x̂, Ŷ)` for the (unregularized) problem being iterated.
    fn raw_gap(&self, xhat: &[f64], yhat: &[f64]) -> f64 {
        let n = self.n;
        let x = self.clip(xhat);
        let (u, v) = self.split(&x);
        let plan = Matrix::from_vec(n, n, yhat.to_vec()).expect("square plan");
        let rows = plan.row_sums();
        let cols = plan.col_sums();
        let cx = self.cost.dot(&plan);
        if let Some(p) = self.penalty {
            let r: Vec<f64> = self.nu_t.iter().zip(&cols).map(|(a, b)| a - b).collect();
            let d = matrix::dot(v, &self.nu_t) - p.conjugate(v) + row_min_bound(&self.cost, &self.mu_t, v);
            return cx + p.value(&r) - d;
        }
        match self.mode {
            Mode::FixedMarginal => {
                let primal = cx + self.lambda * matrix::l1_diff(&self.nu_t, &cols);
                primal - matrix::dot(v, &self.nu_t) - row_min_bound(&self.cost, &self.mu_t, v)
            }
            Mode::Simplex => {
                let primal = cx
                    + self.lambda * (matrix::l1_diff(&self.mu_t, &rows) + matrix::l1_diff(&self.nu_t, &cols));
                primal - matrix::dot(u, &self.mu_t) - matrix::dot(v, &self.nu_t) - min_reduced(&self.cost, u, v)
            }
            Mode::Scaled { delta } => {
                let floor = delta / (n * n) as f64;
                let primal = cx
                    + self.lambda * (matrix::l1_diff(&self.mu_t, &rows) + matrix::l1_diff(&self.nu_t, &cols));
                // min over Δδ of ⟨M, X⟩: put the free mass 1 − δ on the smallest entry
                let total_m = self.cost.sum() - n as f64 * (u.iter().sum::<f64>() + v.iter().sum::<f64>());
                let inner = (1.0 - delta) * min_reduced(&self.cost, u, v) + floor * total_m;
                primal - matrix::dot(u, &self.mu_t) - matrix::dot(v, &self.nu_t) - inner
            }
        }
    }

    /// Offers a candidate plan (original variable) and a dual pair (iteration cost frame).
    fn offer(&mut self, plan: &Matrix, x: &[f64]) -> Result<()> {
        let mu = self.mu.as_slice();
        let nu = self.nu;
        let raw = self.raw.entries();
        let x = self.clip(x);
        let (u, v) = self.split(&x);
        if let Some(p) = self.penalty {
            let cols = plan.col_sums();
            let r: Vec<f64> = nu.iter().zip(&cols).map(|(a, b)| a - b).collect();
            let value = raw.dot(plan) + p.value(&r);
            self.best.offer_plan(plan.clone(), value);
            let bound = matrix::dot(v, nu) - p.conjugate(v) + row_min_bound(raw, mu, v);
            self.best.offer_bound(bound, OtDual { u: Vec::new(), v: v.to_vec() });
            return Ok(());
        }
        let rounded = round_to_feasible(plan, mu, nu)?;
        let value = raw.dot(&rounded);
        self.best.offer_plan(rounded, value);
        // shift the normalized-frame duals into the raw-cost frame before c-transforming
        let v_raw: Vec<f64> = v.iter().zip(&self.col_shift).map(|(a, b)| a + b).collect();
        let u_raw: Vec<f64> = u.iter().zip(&self.row_shift).map(|(a, b)| a + b).collect();
        let u_opt = if self.has_u() { Some(u_raw.as_slice()) } else { None };
        let (bound, dual) = dual_lower_bound(raw, mu, nu, u_opt, &v_raw);
        self.best.offer_bound(bound, dual);
        Ok(())
    }
}

/// `Σ_i μ_i min_j (C_ij − v_j)`: the inner minimum over `Δ_μ`.
pub(crate) fn row_min_bound(cost: &Matrix, mu: &[f64], v: &[f64]) -> f64 {
    matrix::dot(&c_transform_rows(cost, v), mu)
}

impl SaddleProblem for OtProblem<'_> {
    type Dual = PlanIterate;
    type DualSum = Vec<f64>;

    fn dual_prox(&mut self, y: &PlanIterate, xbar: &[f64], sigma: f64) -> Result<PlanIterate> {
        self.prox_calls += 1;
        let n = self.n;
        let (u, v) = self.split(xbar);
        let cost = self.cost.as_slice();
        let has_u = self.has_u();
        let grad = |i: usize, j: usize| {
            let ui = if has_u { u[i] } else { 0.0 };
            cost[i * n + j] - ui - v[j]
        };
        match (y, self.mode) {
            (PlanIterate::Entropic(p), Mode::Simplex) => Ok(PlanIterate::Entropic(kernels::entropy_prox_by(
                p,
                grad,
                sigma,
                self.gamma_reg,
                Normalization::Simplex,
            )?)),
            (PlanIterate::Entropic(p), Mode::FixedMarginal) => Ok(PlanIterate::Entropic(kernels::entropy_prox_by(
                p,
                grad,
                sigma,
                self.gamma_reg,
                Normalization::Rows(&self.mu_t),
            )?)),
            (PlanIterate::Scaled(p), Mode::Scaled { .. }) => {
                let (out, root) = kernels::scaled_prox_by(p, grad, sigma, self.gamma_reg)?;
                self.newton_max = self.newton_max.max(root.iterations);
                Ok(PlanIterate::Scaled(out))
            }
            _ => Err(Error::InvalidConfig("plan iterate does not match the mode".into())),
        }
    }

    fn primal_prox(&mut self, x: &[f64], y: &PlanIterate, tau: f64) -> Result<Vec<f64>> {
        let n = self.n;
        let lam = self.lambda;
        let mut out = Vec::with_capacity(x.len());
        let step = |cur: f64, target: f64, got: f64| (cur + tau * (target - got)).clamp(-lam, lam);
        if self.has_u() {
            for i in 0..n {
                out.push(step(x[i], self.mu_t[i], y.row_sums()[i]));
            }
        }
        let (_, v) = self.split(x);
        match self.penalty {
            Some(p) => {
                let r: Vec<f64> = self.nu_t.iter().zip(y.col_sums()).map(|(a, b)| a - b).collect();
                let mut tmp = Vec::with_capacity(n);
                penalized::penalty_prox_into(v, &r, tau, &p, &mut tmp);
                out.extend(tmp);
            }
            None => {
                for j in 0..n {
                    out.push(step(v[j], self.nu_t[j], y.col_sums()[j]));
                }
            }
        }
        Ok(out)
    }

    fn coupling(&self, dx: &[f64], y1: &PlanIterate, y0: &PlanIterate) -> f64 {
        let (du, dv) = self.split(dx);
        let mut acc = 0.0;
        for (i, d) in du.iter().enumerate() {
            acc += d * (y1.row_sums()[i] - y0.row_sums()[i]);
        }
        for (j, d) in dv.iter().enumerate() {
            acc += d * (y1.col_sums()[j] - y0.col_sums()[j]);
        }
        acc
    }

    fn dual_divergence(&self, y1: &PlanIterate, y0: &PlanIterate) -> f64 {
        match (y1, y0) {
            (PlanIterate::Entropic(a), PlanIterate::Entropic(b)) => kernels::kl_divergence(a, b).unwrap_or(f64::NAN),
            (PlanIterate::Scaled(a), PlanIterate::Scaled(b)) => kernels::scaled_kl(a, b),
            _ => f64::NAN,
        }
    }

    fn dual_sum_zero(&self, _: &PlanIterate) -> Vec<f64> {
        vec![0.0; self.n * self.n]
    }

    fn dual_sum_add(&self, sum: &mut Vec<f64>, y: &PlanIterate, w: f64) {
        add_scaled(sum, y.linear(), w, self.n);
    }

    fn evaluate(&mut self, p: EvalPoint<'_, Self>) -> Result<GapEval> {
        let yhat: Vec<f64> = if p.weight > 0.0 {
            p.ysum.iter().map(|s| s / p.weight).collect()
        } else {
            p.y.linear().to_vec()
        };
        let raw = self.raw_gap(p.xhat, &yhat);
        let avg_plan = self.to_plan(&yhat);
        let last_plan = self.to_plan(p.y.linear());
        self.offer(&avg_plan, p.xhat)?;
        self.offer(&last_plan, p.x)?;
        Ok(GapEval {
            raw,
            certificate: self.best.certificate(),
            primal_value: self.best.value,
        })
    }
}

/// Unregularized or entropy-regularized driver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Plain,
    Regularized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OtOptions {
    pub linesearch: bool,
    pub fixed_marginal: bool,
    /// Scaled-entropy parameter; incompatible with `fixed_marginal`.
    pub delta: Option<f64>,
    pub rho: f64,
    /// Multiplier `c` in `β = c·2 ln n/(nλ²)`; defaults to 1 (plain) or 100 (regularized).
    pub beta_mult: Option<f64>,
    /// Regularization override; defaults to `ε/(4 ln n)`.
    pub gamma_reg: Option<f64>,
    pub max_iter: usize,
    pub max_inner: usize,
    /// Gap cadence; defaults to `⌈√n⌉`.
    pub gap_every: Option<usize>,
}

impl Default for OtOptions {
    fn default() -> Self {
        OtOptions {
            linesearch: true,
            fixed_marginal: false,
            delta: None,
            rho: 0.99,
            beta_mult: None,
            gamma_reg: None,
            max_iter: 100_000,
            max_inner: 200,
            gap_every: None,
        }
    }
}

impl OtOptions {
    pub fn mode(&self) -> Result<Mode> {
        match (self.delta, self.fixed_marginal) {
            (Some(_), true) => Err(Error::InvalidConfig("scaled mode cannot be combined with fixed marginals".into())),
            (Some(delta), false) => Ok(Mode::Scaled { delta }),
            (None, true) => Ok(Mode::FixedMarginal),
            (None, false) => Ok(Mode::Simplex),
        }
    }
}

/// `2 ln n/(nλ²)`.
pub fn base_beta(n: usize, lambda: f64) -> f64 {
    2.0 * (n as f64).ln() / (n as f64 * lambda * lambda)
}

/// `ε/(4 ln n)`.
pub fn default_gamma(eps: f64, n: usize) -> f64 {
    eps / (4.0 * (n as f64).ln())
}

/// Engine configuration for the chosen variant.
pub fn solver_config(n: usize, lambda: f64, eps: f64, variant: Variant, opts: &OtOptions) -> Result<(SolverConfig, f64)> {
    engine_config(n, lambda, eps, variant, opts, opts.mode()?.coupling_norm())
}

/// [`solver_config`] with an explicit coupling norm `l`.
pub fn engine_config(
    n: usize,
    lambda: f64,
    eps: f64,
    variant: Variant,
    opts: &OtOptions,
    l: f64,
) -> Result<(SolverConfig, f64)> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidConfig(format!("eps = {eps} must be positive")));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidConfig(format!("box bound {lambda} must be positive and finite")));
    }
    let (mut cfg, gamma_reg) = match variant {
        Variant::Plain => {
            let beta = opts.beta_mult.unwrap_or(1.0) * base_beta(n, lambda);
            (SolverConfig::plain(beta, l), opts.gamma_reg.unwrap_or(0.0))
        }
        Variant::Regularized => {
            let gamma = opts.gamma_reg.unwrap_or_else(|| default_gamma(eps, n));
            let beta1 = opts.beta_mult.unwrap_or(100.0) * base_beta(n, lambda);
            if opts.linesearch {
                (SolverConfig::accelerated(beta1, gamma, l), gamma)
            } else {
                (SolverConfig::plain(beta1, l), gamma)
            }
        }
    };
    cfg.rho = opts.rho;
    cfg.eps = eps;
    cfg.max_outer = opts.max_iter;
    cfg.max_inner = opts.max_inner;
    cfg.linesearch = opts.linesearch;
    cfg.gap_every = opts.gap_every.unwrap_or_else(|| (n as f64).sqrt().ceil() as usize).max(1);
    cfg.validate()?;
    Ok((cfg, gamma_reg))
}

/// Result of an OT solve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OtSolution {
    /// Feasible plan (exact marginals).
    pub plan: Matrix,
    /// Ergodic dual pair, clipped to the box (normalized-cost frame).
    pub dual: OtDual,
    /// Dual pair attaining `dual_bound` (raw-cost frame).
    pub bound_dual: OtDual,
    /// `⟨C_raw, plan⟩`.
    pub value: f64,
    /// Lower bound on the optimum.
    pub dual_bound: f64,
    /// `value − dual_bound`.
    pub gap_certificate: f64,
    pub raw_gap: f64,
    pub converged: bool,
    pub iterations: usize,
    pub total_inner: usize,
    pub support_fraction: f64,
    pub gamma_reg: f64,
    pub config: SolverConfig,
    pub trace: Vec<TraceRow>,
    #[serde(skip)]
    pub steps: Vec<StepRecord>,
    /// Largest Newton iteration count of the scaled prox (0 otherwise).
    pub newton_max: usize,
}

/// Fraction of entries above [`SUPPORT_TOL`].
pub fn support_fraction(plan: &Matrix) -> f64 {
    let nnz = plan.as_slice().iter().filter(|&&v| v > SUPPORT_TOL).count();
    nnz as f64 / plan.as_slice().len() as f64
}

/// Solves `inst` to a certified accuracy `eps` (or until `max_iter`).
pub fn solve_eps(inst: &OtInstance, eps: f64, variant: Variant, opts: &OtOptions) -> Result<OtSolution> {
    solve_eps_with(inst, eps, variant, opts, &mut |_| {})
}

/// [`solve_eps`] with a callback at every gap evaluation.
pub fn solve_eps_with(
    inst: &OtInstance,
    eps: f64,
    variant: Variant,
    opts: &OtOptions,
    callback: &mut dyn FnMut(&TraceRow),
) -> Result<OtSolution> {
    let (cfg, gamma_reg) = solver_config(inst.n(), inst.lambda, eps, variant, opts)?;
    let mut problem = OtProblem::new(inst, opts.mode()?, gamma_reg)?;
    let (x0, y0) = problem.initial_point()?;
    let out = hpd::run_with(&cfg, &mut problem, x0, y0, callback)?;
    Ok(finish(problem, out, cfg, gamma_reg))
}

pub(crate) fn finish(problem: OtProblem<'_>, out: RunOutput<OtProblem<'_>>, cfg: SolverConfig, gamma_reg: f64) -> OtSolution {
    let xhat = problem.clip(&out.xhat);
    let (u, v) = problem.split(&xhat);
    let n = problem.n;
    let dual = OtDual {
        u: if u.is_empty() { vec![0.0; n] } else { u.to_vec() },
        v: v.to_vec(),
    };
    let best = problem.best;
    let plan = best.plan.unwrap_or_else(|| Matrix::zeros(n, n));
    OtSolution {
        support_fraction: support_fraction(&plan),
        plan,
        dual,
        bound_dual: best.bound_dual.unwrap_or_else(|| OtDual::zeros(n)),
        value: best.value,
        dual_bound: best.bound,
        gap_certificate: (best.value - best.bound).max(0.0),
        raw_gap: out.last_eval.raw,
        converged: out.status == RunStatus::Converged,
        iterations: out.iterations,
        total_inner: out.total_inner(),
        gamma_reg,
        config: cfg,
        trace: out.trace,
        steps: out.steps,
        newton_max: problem.newton_max,
    }
}

/// Histogram helper for tests and generators: `X1` as a [`Histogram`] when valid.
pub fn row_marginal(plan: &Matrix) -> Result<Histogram> {
    Histogram::new(plan.row_sums())
}
