//! Hybrid primal-dual engine with linesearch.
//!
//! The saddle problem is `min_x max_y g(x) + ⟨Kx, y⟩ − h*(y)`: `x` lives in a
//! Euclidean space (possibly weighted), `y` carries a Bregman kernel. Adapters supply
//! both proximal maps, the coupling `⟨K dx, dy⟩` and the divergence on `y`.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative slack applied to the acceptance test.
pub const ACCEPT_SLACK: f64 = 1e-12;

/// Everything a problem must provide to be driven by [`run`].
pub trait SaddleProblem {
    /// The Bregman-side iterate.
    type Dual: Clone;
    /// Running `Σ τ_k y^{k+1}` (weights unnormalized).
    type DualSum;

    /// `argmin_y h*(y) − ⟨K x̄, y⟩ + D(y, y_k)/σ`.
    fn dual_prox(&mut self, y: &Self::Dual, xbar: &[f64], sigma: f64) -> Result<Self::Dual>;

    /// `argmin_x g(x) + ⟨K x, y⁺⟩ + ‖x − x_k‖²/(2τ)`.
    fn primal_prox(&mut self, x: &[f64], y_next: &Self::Dual, tau: f64) -> Result<Vec<f64>>;

    /// `⟨K dx, y1 − y0⟩`.
    fn coupling(&self, dx: &[f64], y1: &Self::Dual, y0: &Self::Dual) -> f64;

    /// `D(y1, y0)`.
    fn dual_divergence(&self, y1: &Self::Dual, y0: &Self::Dual) -> f64;

    /// `‖dx‖²` in the primal norm.
    fn primal_norm_sq(&self, dx: &[f64]) -> f64 {
        dx.iter().map(|d| d * d).sum()
    }

    fn dual_sum_zero(&self, y: &Self::Dual) -> Self::DualSum;

    fn dual_sum_add(&self, sum: &mut Self::DualSum, y: &Self::Dual, weight: f64);

    /// Gap at the ergodic pair (and, at the adapter's discretion, at the last iterates).
    fn evaluate(&mut self, point: EvalPoint<'_, Self>) -> Result<GapEval>;
}

/// What [`SaddleProblem::evaluate`] receives.
pub struct EvalPoint<'a, P: SaddleProblem + ?Sized> {
    /// `x̂` (already normalized).
    pub xhat: &'a [f64],
    /// `Σ τ_k y^{k+1}`, to be divided by `weight`; ignored when `weight == 0`.
    pub ysum: &'a P::DualSum,
    pub weight: f64,
    pub x: &'a [f64],
    pub y: &'a P::Dual,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapEval {
    /// Saddle gap at `(x̂, ŷ)`.
    pub raw: f64,
    /// Certificate used for stopping (best so far).
    pub certificate: f64,
    /// Objective of the current best feasible candidate.
    pub primal_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub rho: f64,
    pub beta0: f64,
    pub tau0: f64,
    pub theta0: f64,
    /// Relative strong convexity of `h*` (linesearch schedule) or of `g` (constant schedule).
    pub gamma: f64,
    /// Norm of the coupling operator.
    pub l: f64,
    pub eps: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub linesearch: bool,
    /// Outer iterations between gap evaluations.
    pub gap_every: usize,
    /// Enforce `τ_k ≥ ρ/(√β_k L)` after each accepted step.
    pub check_step_bound: bool,
}

impl SolverConfig {
    /// Constant `β`, `τ₀ = 1/(√β L)`, `θ₀ = 1`.
    pub fn plain(beta: f64, l: f64) -> Self {
        SolverConfig {
            rho: 0.99,
            beta0: beta,
            tau0: 1.0 / (beta.sqrt() * l),
            theta0: 1.0,
            gamma: 0.0,
            l,
            eps: 1e-2,
            max_outer: 10_000,
            max_inner: 200,
            linesearch: true,
            gap_every: 1,
            check_step_bound: true,
        }
    }

    /// Strongly convex start from a target `β₁`: `√β₀` solves `β₀/(1 + γ√β₀/L) = β₁`,
    /// then `τ₀ = 1/(√β₀ L)` and `θ₀ = γ√β₀/L`.
    pub fn accelerated(beta1: f64, gamma: f64, l: f64) -> Self {
        let a = beta1 * gamma / l;
        let sqrt_b0 = 0.5 * (a + (a * a + 4.0 * beta1).sqrt());
        SolverConfig {
            beta0: sqrt_b0 * sqrt_b0,
            tau0: 1.0 / (sqrt_b0 * l),
            theta0: gamma * sqrt_b0 / l,
            gamma,
            ..Self::plain(beta1, l)
        }
    }

    /// `β₁ = β₀/(1 + γβ₀τ₀)`.
    pub fn beta1(&self) -> f64 {
        self.beta0 / (1.0 + self.gamma * self.beta0 * self.tau0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return bad(format!("rho = {} must lie in (0, 1)", self.rho));
        }
        for (name, v) in [("beta0", self.beta0), ("tau0", self.tau0), ("theta0", self.theta0), ("L", self.l)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} = {v} must be positive and finite"));
            }
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma = {} must be nonnegative", self.gamma));
        }
        if self.linesearch && self.gamma > self.l / self.rho {
            return bad(format!("gamma = {} exceeds L/rho = {}", self.gamma, self.l / self.rho));
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps = {} must be positive", self.eps));
        }
        if self.max_inner == 0 || self.gap_every == 0 {
            return bad("max_inner and gap_every must be positive".into());
        }
        Ok(())
    }

    /// `θ̄ = max{(1+√5)/2, θ₀}`.
    pub fn theta_bar(&self) -> f64 {
        theta_bar(self.theta0)
    }
}

pub fn theta_bar(theta0: f64) -> f64 {
    ((1.0 + 5f64.sqrt()) / 2.0).max(theta0)
}

/// Upper bound on the total number of linesearch rejections up to outer step `k`.
pub fn linesearch_budget(k: usize, rho: f64, theta0: f64) -> f64 {
    (k as f64 + 1.0) * (1.0 + theta_bar(theta0).ln() / rho.ln().abs())
}

/// Outer steps after which `T_N ≥ γρ²N²/(16L²)` is guaranteed: `⌈log₂ log₂ β₀⌉ − 2`, at least 1.
pub fn burn_in(beta0: f64) -> usize {
    if beta0 <= 2.0 {
        return 1;
    }
    let l = beta0.log2().log2().ceil() - 2.0;
    (l.max(1.0)) as usize
}

/// One accepted outer step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub k: usize,
    pub tau: f64,
    pub sigma: f64,
    pub theta: f64,
    pub beta: f64,
    /// Prox evaluations at this step; rejections are `inner − 1`.
    pub inner: usize,
    /// Left-hand side of the acceptance test.
    pub accept_lhs: f64,
    /// `|a| + |b| + |c|` of the three acceptance terms.
    pub accept_scale: f64,
}

impl StepRecord {
    pub fn rejections(&self) -> usize {
        self.inner - 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub tau: f64,
    pub sigma: f64,
    pub beta: f64,
    pub theta: f64,
    /// Cumulative prox evaluations.
    pub inner_iters: usize,
    pub gap_raw: f64,
    pub gap_rounded: f64,
    pub primal_value: f64,
    pub elapsed_s: f64,
}

/// `Σ τ_k`, `Σ τ_k x̄^k` and `Σ τ_k y^{k+1}`.
#[derive(Debug, Clone)]
pub struct ErgodicAverages<S> {
    pub total_weight: f64,
    pub xsum: Vec<f64>,
    pub ysum: S,
}

impl<S> ErgodicAverages<S> {
    fn add_x(&mut self, x: &[f64], w: f64) {
        self.total_weight += w;
        for (s, v) in self.xsum.iter_mut().zip(x) {
            *s += w * v;
        }
    }

    /// `x̂`, or `fallback` before any step.
    pub fn xhat(&self, fallback: &[f64]) -> Vec<f64> {
        if self.total_weight > 0.0 {
            self.xsum.iter().map(|s| s / self.total_weight).collect()
        } else {
            fallback.to_vec()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct RunOutput<P: SaddleProblem> {
    pub status: RunStatus,
    pub iterations: usize,
    pub trace: Vec<TraceRow>,
    pub steps: Vec<StepRecord>,
    pub averages: ErgodicAverages<P::DualSum>,
    pub xhat: Vec<f64>,
    pub x: Vec<f64>,
    pub y: P::Dual,
    pub last_eval: GapEval,
    /// Rejections at a step size already below `1/(√β L)`; nonzero means `L` is too small.
    pub rejections_below_threshold: usize,
}

impl<P: SaddleProblem> RunOutput<P> {
    pub fn t_total(&self) -> f64 {
        self.averages.total_weight
    }

    pub fn total_inner(&self) -> usize {
        self.steps.iter().map(|s| s.inner).sum()
    }
}

/// True iff the cumulative rejections respect [`linesearch_budget`] at every step.
pub fn assert_linesearch_budget(steps: &[StepRecord], rho: f64, theta0: f64) -> bool {
    let mut total = 0usize;
    steps.iter().all(|s| {
        total += s.rejections();
        total as f64 <= linesearch_budget(s.k, rho, theta0)
    })
}

struct Recorder {
    start: Instant,
    every: usize,
    eps: f64,
    trace: Vec<TraceRow>,
    inner_total: usize,
}

impl Recorder {
    fn new(every: usize, eps: f64) -> Self {
        Recorder {
            start: Instant::now(),
            every,
            eps,
            trace: Vec::new(),
            inner_total: 0,
        }
    }

    fn due(&self, k: usize, last: usize) -> bool {
        k % self.every == 0 || k == last
    }

    fn push(&mut self, step: &StepRecord, eval: &GapEval, cb: &mut dyn FnMut(&TraceRow)) -> bool {
        let row = TraceRow {
            iter: step.k,
            tau: step.tau,
            sigma: step.sigma,
            beta: step.beta,
            theta: step.theta,
            inner_iters: self.inner_total,
            gap_raw: eval.raw,
            gap_rounded: eval.certificate,
            primal_value: eval.primal_value,
            elapsed_s: self.start.elapsed().as_secs_f64(),
        };
        cb(&row);
        self.trace.push(row);
        eval.certificate <= self.eps
    }
}

fn check_finite(x: &[f64], k: usize) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::numerical(format!("non-finite primal iterate at iteration {k}")))
    }
}

fn evaluate_at<P: SaddleProblem>(
    problem: &mut P,
    avg: &ErgodicAverages<P::DualSum>,
    x: &[f64],
    y: &P::Dual,
) -> Result<(Vec<f64>, GapEval)> {
    let xhat = avg.xhat(x);
    let eval = problem.evaluate(EvalPoint {
        xhat: &xhat,
        ysum: &avg.ysum,
        weight: avg.total_weight,
        x,
        y,
    })?;
    Ok((xhat, eval))
}

/// Runs the linesearch method (or [`run_constant_steps`] when `linesearch` is off).
pub fn run<P: SaddleProblem>(config: &SolverConfig, problem: &mut P, x0: Vec<f64>, y0: P::Dual) -> Result<RunOutput<P>> {
    run_with(config, problem, x0, y0, &mut |_| {})
}

/// [`run`] with a callback invoked at every gap evaluation.
pub fn run_with<P: SaddleProblem>(
    config: &SolverConfig,
    problem: &mut P,
    x0: Vec<f64>,
    y0: P::Dual,
    callback: &mut dyn FnMut(&TraceRow),
) -> Result<RunOutput<P>> {
    config.validate()?;
    if !config.linesearch {
        let sigma0 = config.beta0 * config.tau0;
        return run_constant_inner(config, config.tau0, sigma0, problem, x0, y0, callback);
    }
    let (rho, gamma, l) = (config.rho, config.gamma, config.l);
    let mut rec = Recorder::new(config.gap_every, config.eps);
    let mut avg = ErgodicAverages {
        total_weight: 0.0,
        xsum: vec![0.0; x0.len()],
        ysum: problem.dual_sum_zero(&y0),
    };
    let mut x_prev = x0.clone();
    let mut x = x0;
    let mut y = y0;
    let (mut tau_prev, mut theta_prev, mut beta_prev) = (config.tau0, config.theta0, config.beta0);
    let mut steps = Vec::with_capacity(config.max_outer.min(1 << 16));
    let mut status = RunStatus::MaxIterations;
    let mut below = 0usize;
    let mut xbar = vec![0.0; x.len()];
    let mut dx = vec![0.0; x.len()];

    let (mut xhat, mut last_eval) = (x.clone(), GapEval { raw: f64::INFINITY, certificate: f64::INFINITY, primal_value: f64::NAN });
    if config.max_outer == 0 {
        let (xh, eval) = evaluate_at(problem, &avg, &x, &y)?;
        let step = StepRecord { k: 0, tau: config.tau0, sigma: config.beta0 * config.tau0, theta: config.theta0, beta: config.beta0, inner: 1, accept_lhs: 0.0, accept_scale: 0.0 };
        if rec.push(&step, &eval, callback) {
            status = RunStatus::Converged;
        }
        xhat = xh;
        last_eval = eval;
    }

    for k in 1..=config.max_outer {
        let mut tau = tau_prev * (1.0 + theta_prev).sqrt() / rho;
        let beta = beta_prev / (1.0 + gamma * beta_prev * tau_prev);
        let threshold = 1.0 / (beta.sqrt() * l);
        let mut inner = 0;
        let (y_new, x_new, theta, sigma, lhs, scale) = loop {
            inner += 1;
            tau *= rho;
            let theta = tau / tau_prev;
            let sigma = beta * tau;
            for i in 0..x.len() {
                xbar[i] = x[i] + theta * (x[i] - x_prev[i]);
            }
            let y_new = problem.dual_prox(&y, &xbar, sigma)?;
            let x_new = problem.primal_prox(&x, &y_new, tau)?;
            check_finite(&x_new, k)?;
            for i in 0..x.len() {
                dx[i] = x_new[i] - xbar[i];
            }
            let a = 0.5 * problem.primal_norm_sq(&dx);
            let b = problem.dual_divergence(&y_new, &y) / beta;
            let c = tau * problem.coupling(&dx, &y_new, &y);
            let scale = a.abs() + b.abs() + c.abs();
            let lhs = a + b + c;
            if !lhs.is_finite() {
                return Err(Error::numerical(format!("non-finite acceptance test at iteration {k}")));
            }
            if lhs >= -ACCEPT_SLACK * scale {
                break (y_new, x_new, theta, sigma, lhs, scale);
            }
            if tau <= threshold * (1.0 - 1e-9) {
                below += 1;
            }
            if inner >= config.max_inner {
                return Err(Error::LinesearchStall { k, tau, beta });
            }
        };
        if config.check_step_bound {
            let bound = rho * threshold;
            if tau < bound * (1.0 - 1e-12) {
                return Err(Error::StepBound { k, tau, bound });
            }
        }
        avg.add_x(&xbar, tau);
        problem.dual_sum_add(&mut avg.ysum, &y_new, tau);
        x_prev = std::mem::replace(&mut x, x_new);
        y = y_new;
        tau_prev = tau;
        theta_prev = theta;
        beta_prev = beta;
        let step = StepRecord { k, tau, sigma, theta, beta, inner, accept_lhs: lhs, accept_scale: scale };
        steps.push(step);
        rec.inner_total += inner;
        if rec.due(k, config.max_outer) {
            let (xh, eval) = evaluate_at(problem, &avg, &x, &y)?;
            xhat = xh;
            last_eval = eval;
            if rec.push(&step, &eval, callback) {
                status = RunStatus::Converged;
                break;
            }
        }
    }
    Ok(RunOutput {
        status,
        iterations: steps.len(),
        trace: rec.trace,
        steps,
        averages: avg,
        xhat,
        x,
        y,
        last_eval,
        rejections_below_threshold: below,
    })
}

/// HPD without linesearch: `θ ≡ 1` and fixed `τ₀, σ₀ = β₀τ₀` when `gamma == 0`; otherwise
/// the accelerated schedule `θ = 1/√(1+γτ)`, `τ ← θτ`, `σ ← σ/θ` with `gamma` the strong
/// convexity of `g`. Averages are uniform over `x^{k+1}, y^{k+1}`.
pub fn run_constant_steps<P: SaddleProblem>(
    config: &SolverConfig,
    problem: &mut P,
    x0: Vec<f64>,
    y0: P::Dual,
) -> Result<RunOutput<P>> {
    let mut cfg = config.clone();
    cfg.linesearch = false;
    cfg.validate()?;
    run_constant_inner(&cfg, cfg.tau0, cfg.beta0 * cfg.tau0, problem, x0, y0, &mut |_| {})
}

fn run_constant_inner<P: SaddleProblem>(
    config: &SolverConfig,
    tau0: f64,
    sigma0: f64,
    problem: &mut P,
    x0: Vec<f64>,
    y0: P::Dual,
    callback: &mut dyn FnMut(&TraceRow),
) -> Result<RunOutput<P>> {
    let l2 = config.l * config.l;
    if tau0 * sigma0 * l2 > 1.0 + 1e-12 {
        return Err(Error::InvalidConfig(format!(
            "tau0 * sigma0 * L^2 = {} exceeds 1",
            tau0 * sigma0 * l2
        )));
    }
    let mut rec = Recorder::new(config.gap_every, config.eps);
    let mut avg = ErgodicAverages {
        total_weight: 0.0,
        xsum: vec![0.0; x0.len()],
        ysum: problem.dual_sum_zero(&y0),
    };
    let (mut tau, mut sigma, mut theta) = (tau0, sigma0, 1.0);
    let mut x_prev = x0.clone();
    let mut x = x0;
    let mut y = y0;
    let mut steps = Vec::new();
    let mut status = RunStatus::MaxIterations;
    let mut xbar = vec![0.0; x.len()];
    let (mut xhat, mut last_eval) = (x.clone(), GapEval { raw: f64::INFINITY, certificate: f64::INFINITY, primal_value: f64::NAN });
    if config.max_outer == 0 {
        let (xh, eval) = evaluate_at(problem, &avg, &x, &y)?;
        let step = StepRecord { k: 0, tau, sigma, theta, beta: sigma / tau, inner: 1, accept_lhs: 0.0, accept_scale: 0.0 };
        if rec.push(&step, &eval, callback) {
            status = RunStatus::Converged;
        }
        xhat = xh;
        last_eval = eval;
    }
    for k in 1..=config.max_outer {
        for i in 0..x.len() {
            xbar[i] = x[i] + theta * (x[i] - x_prev[i]);
        }
        let y_new = problem.dual_prox(&y, &xbar, sigma)?;
        let x_new = problem.primal_prox(&x, &y_new, tau)?;
        check_finite(&x_new, k)?;
        avg.add_x(&x_new, 1.0);
        problem.dual_sum_add(&mut avg.ysum, &y_new, 1.0);
        let step = StepRecord { k, tau, sigma, theta, beta: sigma / tau, inner: 1, accept_lhs: 0.0, accept_scale: 0.0 };
        steps.push(step);
        rec.inner_total += 1;
        x_prev = std::mem::replace(&mut x, x_new);
        y = y_new;
        if config.gamma > 0.0 {
            theta = 1.0 / (1.0 + config.gamma * tau).sqrt();
            tau *= theta;
            sigma /= theta;
        }
        if rec.due(k, config.max_outer) {
            let (xh, eval) = evaluate_at(problem, &avg, &x, &y)?;
            xhat = xh;
            last_eval = eval;
            if rec.push(&step, &eval, callback) {
                status = RunStatus::Converged;
                break;
            }
        }
    }
    Ok(RunOutput {
        status,
        iterations: steps.len(),
        trace: rec.trace,
        steps,
        averages: avg,
        xhat,
        x,
        y,
        last_eval,
        rejections_below_threshold: 0,
    })
}
