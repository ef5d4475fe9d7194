//! Bregman kernels on transport plans.
//!
//! [`TransportPlan`] keeps plans in log domain so the entropy prox never exponentiates
//! tiny numbers before normalizing. [`ScaledPlan`] stays in linear domain: its entries
//! are floored at `δ/n²`.

use crate::error::{Error, Result};
use crate::instances::Histogram;
use crate::matrix::Matrix;
use crate::par;

/// A nonnegative n×n plan stored as `ln X` with cached linear entries and marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    n: usize,
    log: Vec<f64>,
    lin: Vec<f64>,
    row_sums: Vec<f64>,
    col_sums: Vec<f64>,
}

impl TransportPlan {
    /// Builds a plan from linear entries (zeros allowed).
    pub fn from_linear(n: usize, lin: Vec<f64>) -> Result<Self> {
        if lin.len() != n * n {
            return Err(Error::ShapeMismatch(format!("{} entries for an {n}x{n} plan", lin.len())));
        }
        if let Some(k) = lin.iter().position(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::invalid(format!("plan entry {k} = {} is not a finite nonnegative", lin[k])));
        }
        let log = lin.iter().map(|x| x.ln()).collect();
        Ok(Self::assemble(n, log, lin))
    }

    fn assemble(n: usize, log: Vec<f64>, lin: Vec<f64>) -> Self {
        let row_sums = par::row_sums(&lin, n);
        let col_sums = par::col_sums(&lin, n);
        TransportPlan {
            n,
            log,
            lin,
            row_sums,
            col_sums,
        }
    }

    /// `1/n²` everywhere.
    pub fn uniform(n: usize) -> Self {
        let v = 1.0 / (n * n) as f64;
        Self::assemble(n, vec![v.ln(); n * n], vec![v; n * n])
    }

    /// `μ_i / n` on row `i`: the uniform start of the fixed-marginal mode.
    pub fn row_uniform(mu: &Histogram) -> Self {
        let n = mu.len();
        let lin: Vec<f64> = (0..n * n).map(|k| mu[k / n] / n as f64).collect();
        let log = lin.iter().map(|x| x.ln()).collect();
        Self::assemble(n, log, lin)
    }

    /// The product coupling `μ ⊗ ν`.
    pub fn product(mu: &Histogram, nu: &Histogram) -> Self {
        let n = mu.len();
        let lin: Vec<f64> = (0..n * n).map(|k| mu[k / n] * nu[k % n]).collect();
        let log = lin.iter().map(|x| x.ln()).collect();
        Self::assemble(n, log, lin)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn log(&self) -> &[f64] {
        &self.log
    }

    #[inline]
    pub fn linear(&self) -> &[f64] {
        &self.lin
    }

    #[inline]
    pub fn row_sums(&self) -> &[f64] {
        &self.row_sums
    }

    #[inline]
    pub fn col_sums(&self) -> &[f64] {
        &self.col_sums
    }

    pub fn total_mass(&self) -> f64 {
        self.row_sums.iter().sum()
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_vec(self.n, self.n, self.lin.clone()).expect("square plan")
    }

    /// `ξ(X) = Σ X ln X` (with `0 ln 0 = 0`).
    pub fn entropy(&self) -> f64 {
        self.lin
            .iter()
            .zip(&self.log)
            .filter(|(x, _)| **x > 0.0)
            .map(|(x, l)| x * l)
            .sum()
    }
}

/// `⟨X, ln X − ln X̄⟩`, evaluated in log domain.
pub fn kl_divergence(x: &TransportPlan, y: &TransportPlan) -> Result<f64> {
    if x.n != y.n {
        return Err(Error::ShapeMismatch(format!("plans of size {} and {}", x.n, y.n)));
    }
    Ok(kl_terms(&x.lin, &x.log, &y.lin, &y.log, x.n))
}

/// `φ(l) = l eˡ − eˡ + 1 ≥ 0`, accurate for small `|l|`.
#[inline]
pub fn kl_phi(l: f64) -> f64 {
    if l.abs() < 1e-2 {
        let l2 = l * l;
        l2 * (0.5 + l * (1.0 / 3.0 + l * (1.0 / 8.0 + l * (1.0 / 30.0 + l * (1.0 / 144.0 + l / 840.0)))))
    } else {
        l + (l - 1.0) * l.exp_m1()
    }
}

/// One entry of `X ln(X/Y) − X + Y`, which sums to KL when the masses agree and never
/// cancels between entries.
#[inline]
pub fn kl_entry(x: f64, lx: f64, y: f64, ly: f64) -> f64 {
    if lx == f64::NEG_INFINITY {
        y
    } else if ly == f64::NEG_INFINITY {
        f64::INFINITY
    } else {
        let l = lx - ly;
        if l.abs() < 1e-2 {
            y * kl_phi(l)
        } else {
            // y φ(l) = x(l − 1) + y with x = y eˡ; away from l = 0 this loses at most
            // ~1e-12 relative accuracy, needs no exponential, and survives underflow
            (x * (l - 1.0) + y).max(0.0)
        }
    }
}

pub(crate) fn kl_terms(x_lin: &[f64], x_log: &[f64], y_lin: &[f64], y_log: &[f64], n: usize) -> f64 {
    let step = par::ROW_CHUNK * n;
    let partial = |c: usize| -> f64 {
        let lo = c * step;
        let hi = (lo + step).min(x_lin.len());
        (lo..hi).map(|k| kl_entry(x_lin[k], x_log[k], y_lin[k], y_log[k])).sum()
    };
    par::map_indexed(x_lin.len().div_ceil(step.max(1)), partial).iter().sum()
}

/// How the prox output is normalized.
#[derive(Debug, Clone, Copy)]
pub enum Normalization<'a> {
    /// Total mass one (the matrix simplex Δ).
    Simplex,
    /// Row sums prescribed (the set Δ_μ).
    Rows(&'a [f64]),
}

struct RowStats {
    max: f64,
    sum_exp: f64,
    bad: Option<(usize, usize)>,
}

/// Entropic prox `N(exp((ln X̄ − σ G)/(1 + σγ)))` with the gradient supplied entry-wise.
pub fn entropy_prox_by<G>(
    xbar: &TransportPlan,
    grad: G,
    sigma: f64,
    gamma: f64,
    norm: Normalization<'_>,
) -> Result<TransportPlan>
where
    G: Fn(usize, usize) -> f64 + Sync + Send,
{
    let n = xbar.n;
    if let Normalization::Rows(mu) = norm {
        if mu.len() != n {
            return Err(Error::ShapeMismatch(format!("row marginal of length {} for n = {n}", mu.len())));
        }
    }
    let inv = 1.0 / (1.0 + sigma * gamma);
    let mut log = vec![0.0; n * n];
    let mut lin = vec![0.0; n * n];

    // pass 1: exponents, exp(e − row max) into `lin`, and per-row statistics
    let lin_ptr = SyncSlice::new(&mut lin);
    let stats: Vec<RowStats> = par::map_row_chunks_mut(&mut log, n, |first, chunk| {
        let mut out = Vec::with_capacity(chunk.len() / n.max(1));
        for (r, row) in chunk.chunks_mut(n).enumerate() {
            let i = first + r;
            // SAFETY: chunks are disjoint row ranges, so the linear rows are too.
            let lrow = unsafe { lin_ptr.row(i, n) };
            let mut bad = None;
            let mut mx = f64::NEG_INFINITY;
            for (j, slot) in row.iter_mut().enumerate() {
                let g = grad(i, j);
                if !g.is_finite() && bad.is_none() {
                    bad = Some((i, j));
                }
                let e = if sigma == 0.0 {
                    xbar.log[i * n + j]
                } else {
                    (xbar.log[i * n + j] - sigma * g) * inv
                };
                *slot = e;
                mx = mx.max(e);
            }
            let mut sum_exp = 0.0;
            if mx > f64::NEG_INFINITY {
                for (l, e) in lrow.iter_mut().zip(row.iter()) {
                    *l = (e - mx).exp();
                    sum_exp += *l;
                }
            }
            out.push(RowStats { max: mx, sum_exp, bad });
        }
        out
    })
    .into_iter()
    .flatten()
    .collect();
    if let Some((i, j)) = stats.iter().find_map(|s| s.bad) {
        return Err(Error::numerical(format!("non-finite gradient at ({i}, {j}) with sigma = {sigma:e}")));
    }
    if stats.iter().any(|s| s.max.is_nan() || s.max == f64::INFINITY) {
        return Err(Error::numerical(format!("non-finite prox exponent with sigma = {sigma:e}")));
    }

    // per-row additive shift that normalizes the row (or the whole matrix)
    let shifts: Vec<f64> = match norm {
        Normalization::Simplex => {
            let gmax = stats.iter().map(|s| s.max).fold(f64::NEG_INFINITY, f64::max);
            if gmax == f64::NEG_INFINITY {
                return Err(Error::numerical("prox output has no mass"));
            }
            let total: f64 = stats
                .iter()
                .filter(|s| s.max > f64::NEG_INFINITY)
                .map(|s| s.sum_exp * (s.max - gmax).exp())
                .sum();
            vec![-(gmax + total.ln()); n]
        }
        Normalization::Rows(mu) => {
            let mut shifts = Vec::with_capacity(n);
            for (i, s) in stats.iter().enumerate() {
                if mu[i] == 0.0 {
                    shifts.push(f64::NEG_INFINITY);
                } else if s.max == f64::NEG_INFINITY {
                    return Err(Error::numerical(format!("row {i} has no support but mu_i = {}", mu[i])));
                } else {
                    shifts.push(mu[i].ln() - (s.max + s.sum_exp.ln()));
                }
            }
            shifts
        }
    };

    // pass 2: shift the logs, rescale the cached exponentials, accumulate marginals
    let partials: Vec<(Vec<f64>, Vec<f64>)> = {
        let shifts = &shifts;
        let stats = &stats;
        par::map_row_chunks_mut(&mut log, n, |first, chunk| {
            let mut rows = Vec::with_capacity(chunk.len() / n.max(1));
            let mut cols = vec![0.0; n];
            for (r, row) in chunk.chunks_mut(n).enumerate() {
                let i = first + r;
                // SAFETY: as in pass 1.
                let lrow = unsafe { lin_ptr.row(i, n) };
                let mut rs = 0.0;
                if shifts[i] == f64::NEG_INFINITY || stats[i].max == f64::NEG_INFINITY {
                    row.fill(f64::NEG_INFINITY);
                    lrow.fill(0.0);
                } else {
                    let f = (stats[i].max + shifts[i]).exp();
                    for j in 0..n {
                        row[j] += shifts[i];
                        let x = lrow[j] * f;
                        lrow[j] = x;
                        rs += x;
                        cols[j] += x;
                    }
                }
                rows.push(rs);
            }
            (rows, cols)
        })
    };
    let mut row_sums = Vec::with_capacity(n);
    let mut col_parts = Vec::with_capacity(partials.len());
    for (r, c) in partials {
        row_sums.extend(r);
        col_parts.push(c);
    }
    let col_sums = par::combine_columns(col_parts, n);
    Ok(TransportPlan {
        n,
        log,
        lin,
        row_sums,
        col_sums,
    })
}

/// Raw pointer wrapper that lets disjoint row chunks of a second buffer be written
/// from inside [`par::map_row_chunks_mut`].
pub(crate) struct SyncSlice {
    ptr: *mut f64,
    len: usize,
}

unsafe impl Send for SyncSlice {}
unsafe impl Sync for SyncSlice {}

impl SyncSlice {
    pub(crate) fn new(s: &mut [f64]) -> Self {
        SyncSlice {
            ptr: s.as_mut_ptr(),
            len: s.len(),
        }
    }

    /// # Safety
    /// Callers must never hand out the same row twice concurrently.
    #[allow(clippy::mut_from_ref)]
    pub(crate) unsafe fn row(&self, i: usize, n: usize) -> &mut [f64] {
        assert!((i + 1) * n <= self.len);
        std::slice::from_raw_parts_mut(self.ptr.add(i * n), n)
    }
}

fn check_grad(xbar_n: usize, grad: &Matrix) -> Result<()> {
    if grad.rows() != xbar_n || grad.cols() != xbar_n {
        return Err(Error::ShapeMismatch(format!(
            "gradient is {}x{}, plan is {xbar_n}x{xbar_n}",
            grad.rows(),
            grad.cols()
        )));
    }
    Ok(())
}

/// `N(X̄ ⊙ exp(−σ G))` over the simplex Δ.
pub fn entropy_prox_simplex(xbar: &TransportPlan, grad: &Matrix, sigma: f64) -> Result<TransportPlan> {
    entropy_prox_regularized(xbar, grad, sigma, 0.0)
}

/// Entropy-regularized prox `N(exp((ln X̄ − σ G)/(1 + σγ)))` over Δ.
pub fn entropy_prox_regularized(
    xbar: &TransportPlan,
    grad: &Matrix,
    sigma: f64,
    gamma: f64,
) -> Result<TransportPlan> {
    check_grad(xbar.n, grad)?;
    entropy_prox_by(xbar, |i, j| grad.get(i, j), sigma, gamma, Normalization::Simplex)
}

/// Same exponent update with row sums normalized to `μ` (the set Δ_μ).
pub fn entropy_prox_fixed_marginal(
    xbar: &TransportPlan,
    grad: &Matrix,
    sigma: f64,
    gamma: f64,
    mu: &Histogram,
) -> Result<TransportPlan> {
    check_grad(xbar.n, grad)?;
    entropy_prox_by(xbar, |i, j| grad.get(i, j), sigma, gamma, Normalization::Rows(mu.as_slice()))
}

/// A plan in the scaled simplex Δδ = {X ∈ Δ : X ≥ δ/n²}, stored in linear domain.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledPlan {
    n: usize,
    delta: f64,
    lin: Vec<f64>,
    row_sums: Vec<f64>,
    col_sums: Vec<f64>,
}

impl ScaledPlan {
    fn assemble(n: usize, delta: f64, lin: Vec<f64>) -> Self {
        let row_sums = par::row_sums(&lin, n);
        let col_sums = par::col_sums(&lin, n);
        ScaledPlan {
            n,
            delta,
            lin,
            row_sums,
            col_sums,
        }
    }

    fn check_delta(delta: f64) -> Result<()> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidConfig(format!("delta = {delta} must lie in (0, 1)")));
        }
        Ok(())
    }

    /// `X^δ = (1 − δ) X + δ/n²` for a plan `X ∈ Δ`.
    pub fn from_plan(x: &Matrix, delta: f64) -> Result<Self> {
        Self::check_delta(delta)?;
        let n = x.rows();
        let floor = delta / (n * n) as f64;
        let lin = x.as_slice().iter().map(|&v| (1.0 - delta) * v + floor).collect();
        Ok(Self::assemble(n, delta, lin))
    }

    pub fn uniform(n: usize, delta: f64) -> Result<Self> {
        Self::check_delta(delta)?;
        Ok(Self::assemble(n, delta, vec![1.0 / (n * n) as f64; n * n]))
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn delta(&self) -> f64 {
        self.delta
    }

    #[inline]
    pub fn floor(&self) -> f64 {
        self.delta / (self.n * self.n) as f64
    }

    #[inline]
    pub fn linear(&self) -> &[f64] {
        &self.lin
    }

    #[inline]
    pub fn row_sums(&self) -> &[f64] {
        &self.row_sums
    }

    #[inline]
    pub fn col_sums(&self) -> &[f64] {
        &self.col_sums
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_vec(self.n, self.n, self.lin.clone()).expect("square plan")
    }

    /// Inverts the scaling: `(X^δ − δ/n²)/(1 − δ)`, clipped at zero.
    pub fn unscaled(&self) -> Matrix {
        unscale(&self.lin, self.n, self.delta)
    }

    pub(crate) fn log_entries(&self) -> Vec<f64> {
        self.lin.iter().map(|x| x.ln()).collect()
    }

    pub fn entropy(&self) -> f64 {
        self.lin.iter().map(|x| x * x.ln()).sum()
    }
}

/// `(Y − δ/n²)/(1 − δ)` clipped at zero, for any linear-domain scaled matrix `Y`.
pub fn unscale(lin: &[f64], n: usize, delta: f64) -> Matrix {
    let floor = delta / (n * n) as f64;
    let data = lin.iter().map(|&y| ((y - floor) / (1.0 - delta)).max(0.0)).collect();
    Matrix::from_vec(n, n, data).expect("square plan")
}

/// KL between two scaled plans, `⟨X, ln X − ln X̄⟩`.
pub fn scaled_kl(x: &ScaledPlan, y: &ScaledPlan) -> f64 {
    let lx = x.log_entries();
    let ly = y.log_entries();
    kl_terms(&x.lin, &lx, &y.lin, &ly, x.n)
}

/// Bregman divergence of the scaled entropy `ξ_δ` between two plans of Δ:
/// `KL(X^δ, X̄^δ)/(1 − δ)²`.
pub fn scaled_divergence(x: &Matrix, xbar: &Matrix, delta: f64) -> Result<f64> {
    let a = ScaledPlan::from_plan(x, delta)?;
    let b = ScaledPlan::from_plan(xbar, delta)?;
    Ok(scaled_kl(&a, &b) / ((1.0 - delta) * (1.0 - delta)))
}

/// Root of `F(s) = s − Σ max{Z_ij, sδ/n²}` found by Newton's method.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonResult {
    /// The root, in units of the (possibly shifted) `Z`.
    pub s: f64,
    /// `ln` of the factor removed from `Z` before solving (0 when `Z` is given directly).
    pub log_shift: f64,
    pub iterations: usize,
    /// `|F(s)|/s`.
    pub residual: f64,
}

pub const NEWTON_TOL: f64 = 1e-12;

// Σ Z over the active set {Z > thr} and its size; ties count as clamped.
fn active_sum(z: &[f64], thr: f64) -> (f64, usize) {
    let step = 4096;
    let parts = par::map_indexed(z.len().div_ceil(step), |c| {
        let lo = c * step;
        let hi = (lo + step).min(z.len());
        let mut s = 0.0;
        let mut a = 0;
        for &v in &z[lo..hi] {
            if v > thr {
                s += v;
                a += 1;
            }
        }
        (s, a)
    });
    parts.iter().fold((0.0, 0), |(s, a), (ps, pa)| (s + ps, a + pa))
}

/// `F(s) = s − Σ max{Z, sδ/N}` with `N = z.len()`.
pub fn scaled_root_residual(z: &[f64], delta: f64, s: f64) -> f64 {
    let nn = z.len() as f64;
    let thr = s * delta / nn;
    let (sum_a, a) = active_sum(z, thr);
    s - sum_a - (z.len() - a) as f64 * thr
}

/// Newton's method on `F` from `s⁰ = 0`. Each step solves the affine piece of `F`
/// selected by the current active set:
/// `s⁺ = Σ_{Z > sδ/N} Z / (1 − δ + (δ/N)·|{Z > sδ/N}|)`.
pub fn solve_scaled_root(z: &[f64], delta: f64) -> Result<NewtonResult> {
    let nn = z.len();
    if z.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::numerical("scaled prox received a non-finite or negative Z"));
    }
    let cap = nn + 2;
    let mut s = 0.0f64;
    let mut iterations = 0;
    loop {
        iterations += 1;
        let thr = s * delta / nn as f64;
        let (sum_a, a) = active_sum(z, thr);
        if sum_a <= 0.0 {
            return Err(Error::numerical("all Z entries vanished in the scaled prox"));
        }
        let next = sum_a / (1.0 - delta + delta * a as f64 / nn as f64);
        // Newton from the left on a concave increasing F is monotone; no progress
        // means the active set is stable and `next` is the root of its piece.
        let done = next <= s || (next - s) <= f64::EPSILON * next;
        s = s.max(next);
        if done {
            break;
        }
        if iterations > cap {
            return Err(Error::numerical(format!("Newton exceeded {cap} iterations")));
        }
    }
    let residual = scaled_root_residual(z, delta, s).abs() / s;
    if residual > NEWTON_TOL {
        return Err(Error::numerical(format!("Newton residual {residual:e} above tolerance")));
    }
    Ok(NewtonResult {
        s,
        log_shift: 0.0,
        iterations,
        residual,
    })
}

/// One application of `T(s) = Σ max{Z, sδ/N}`, a `δ`-contraction.
pub fn picard_step(z: &[f64], delta: f64, s: f64) -> f64 {
    let thr = s * delta / z.len() as f64;
    let (sum_a, a) = active_sum(z, thr);
    sum_a + (z.len() - a) as f64 * thr
}

/// Banach–Picard iteration `s ← Σ max{Z, sδ/N}` started at `s⁰ = Σ Z`. Stops when
/// `|s_{k+1} − s_k| ≤ tol·s_k`; returns the last iterate and the number of updates.
pub fn picard_root(z: &[f64], delta: f64, tol: f64, max_iter: usize) -> Result<(f64, usize)> {
    let mut s: f64 = z.iter().sum();
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::numerical("all Z entries vanished in the scaled prox"));
    }
    for k in 1..=max_iter {
        let next = picard_step(z, delta, s);
        let step = (next - s).abs();
        let prev = s;
        s = next;
        if step <= tol * prev {
            return Ok((s, k));
        }
    }
    Err(Error::numerical(format!("Picard iteration exceeded {max_iter} steps")))
}

/// Scaled prox from precomputed exponents `e_ij` (so `Z = exp(e)`): shifts by `max e`,
/// solves for the root and returns `X = max{Z/s, δ/n²}`.
pub fn scaled_from_exponents(n: usize, mut exps: Vec<f64>, delta: f64) -> Result<(ScaledPlan, NewtonResult)> {
    ScaledPlan::check_delta(delta)?;
    let shift = exps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !shift.is_finite() {
        return Err(Error::numerical(format!("scaled prox exponents are not finite (max {shift})")));
    }
    if exps.iter().any(|e| e.is_nan()) {
        return Err(Error::numerical("NaN exponent in scaled prox"));
    }
    for e in exps.iter_mut() {
        *e = (*e - shift).exp();
    }
    let mut root = solve_scaled_root(&exps, delta)?;
    root.log_shift = shift;
    let floor = delta / (n * n) as f64;
    let inv = 1.0 / root.s;
    par::map_row_chunks_mut(&mut exps, n, |_, chunk| {
        for v in chunk.iter_mut() {
            *v = (*v * inv).max(floor);
        }
    });
    Ok((ScaledPlan::assemble(n, delta, exps), root))
}

/// Exponents `(ln X̄ − σ G)/(1 + σγ)` of the scaled prox.
pub(crate) fn scaled_exponents<G>(xbar: &ScaledPlan, grad: G, sigma: f64, gamma: f64) -> Result<Vec<f64>>
where
    G: Fn(usize, usize) -> f64 + Sync + Send,
{
    let n = xbar.n;
    let inv = 1.0 / (1.0 + sigma * gamma);
    let mut e = vec![0.0; n * n];
    let bad = par::map_row_chunks_mut(&mut e, n, |first, chunk| {
        let mut bad = None;
        for (r, row) in chunk.chunks_mut(n).enumerate() {
            let i = first + r;
            for (j, slot) in row.iter_mut().enumerate() {
                let g = grad(i, j);
                if !g.is_finite() && bad.is_none() {
                    bad = Some((i, j));
                }
                *slot = (xbar.lin[i * n + j].ln() - sigma * g) * inv;
            }
        }
        bad
    });
    if let Some((i, j)) = bad.into_iter().flatten().next() {
        return Err(Error::numerical(format!("non-finite gradient at ({i}, {j}) with sigma = {sigma:e}")));
    }
    Ok(e)
}

/// Scaled prox `argmin_{X ∈ Δδ} ⟨G, X⟩ + γ ξ(X) + KL(X, X̄)/σ` with an entry-wise gradient.
pub fn scaled_prox_by<G>(
    xbar: &ScaledPlan,
    grad: G,
    sigma: f64,
    gamma: f64,
) -> Result<(ScaledPlan, NewtonResult)>
where
    G: Fn(usize, usize) -> f64 + Sync + Send,
{
    let e = scaled_exponents(xbar, grad, sigma, gamma)?;
    scaled_from_exponents(xbar.n, e, xbar.delta).map_err(|err| match err {
        Error::NumericalFailure(msg) => Error::numerical(format!("{msg} (sigma = {sigma:e})")),
        other => other,
    })
}

/// Scaled prox `argmin_{X ∈ Δδ} ⟨G, X⟩ + KL(X, X̄)/σ`.
pub fn scaled_prox(xbar: &ScaledPlan, grad: &Matrix, sigma: f64) -> Result<(ScaledPlan, NewtonResult)> {
    check_grad(xbar.n, grad)?;
    scaled_prox_by(xbar, |i, j| grad.get(i, j), sigma, 0.0)
}

/// Same prox with the root found by Picard iteration instead of Newton.
pub fn scaled_prox_picard(
    xbar: &ScaledPlan,
    grad: &Matrix,
    sigma: f64,
    tol: f64,
) -> Result<(ScaledPlan, usize)> {
    check_grad(xbar.n, grad)?;
    let n = xbar.n;
    let mut z = scaled_exponents(xbar, |i, j| grad.get(i, j), sigma, 0.0)?;
    let shift = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for v in z.iter_mut() {
        *v = (*v - shift).exp();
    }
    let (s, iters) = picard_root(&z, xbar.delta, tol, 10_000)?;
    let floor = xbar.floor();
    let lin = z.into_iter().map(|v| (v / s).max(floor)).collect();
    Ok((ScaledPlan::assemble(n, xbar.delta, lin), iters))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn mat(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn kl_identity_and_uniform() {
        let u = TransportPlan::uniform(4);
        assert_eq!(kl_divergence(&u, &u).unwrap(), 0.0);
        let h = Histogram::uniform(4);
        let p = TransportPlan::product(&h, &h);
        assert_abs_diff_eq!(kl_divergence(&u, &p).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn kl_of_point_mass_against_uniform() {
        let n = 28;
        let mut lin = vec![0.0; n * n];
        lin[0] = 1.0;
        let x = TransportPlan::from_linear(n, lin).unwrap();
        let kl = kl_divergence(&x, &TransportPlan::uniform(n)).unwrap();
        assert_abs_diff_eq!(kl, 2.0 * (n as f64).ln(), epsilon = 1e-12);
    }

    #[test]
    fn kl_phi_matches_direct_formula() {
        // φ(l) = Σ_{k≥2} (k − 1) lᵏ / k!
        let series = |l: f64| {
            let (mut term, mut acc) = (l, 0.0);
            for k in 2..40 {
                term *= l / k as f64;
                acc += (k - 1) as f64 * term;
            }
            acc
        };
        for l in [-3.0, -0.5, -0.011, -0.009, -1e-6, 0.0, 1e-6, 0.009, 0.011, 0.5, 4.0] {
            let want = series(l);
            assert!((kl_phi(l) - want).abs() <= 1e-13 * want.abs(), "l = {l}");
            assert!(kl_phi(l) >= 0.0);
        }
        assert!((kl_phi(1e-8) - 5e-17).abs() < 1e-24);
    }

    #[test]
    fn kl_of_nearby_plans_is_positive() {
        let a = TransportPlan::from_linear(2, vec![0.25 + 1e-11, 0.25 - 1e-11, 0.25, 0.25]).unwrap();
        let b = TransportPlan::uniform(2);
        let kl = kl_divergence(&a, &b).unwrap();
        assert!(kl > 0.0);
        assert!((kl - 4e-22).abs() < 1e-26);
    }

    #[test]
    fn kl_shape_mismatch() {
        assert!(kl_divergence(&TransportPlan::uniform(2), &TransportPlan::uniform(3)).is_err());
    }

    #[test]
    fn simplex_prox_zero_sigma_and_constant_grad() {
        let x = TransportPlan::from_linear(2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let g = mat(&[&[3.0, -1.0], &[0.5, 2.0]]);
        let same = entropy_prox_simplex(&x, &g, 0.0).unwrap();
        for (a, b) in same.linear().iter().zip(x.linear()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
        let c = Matrix::filled(2, 2, 7.5);
        let shifted = entropy_prox_simplex(&x, &c, 1.3).unwrap();
        for (a, b) in shifted.linear().iter().zip(x.linear()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn simplex_prox_two_by_two() {
        let g = mat(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let out = entropy_prox_simplex(&TransportPlan::uniform(2), &g, 1.0).unwrap();
        let e = (-1.0f64).exp();
        let z = 2.0 + 2.0 * e;
        let want = [1.0 / z, e / z, e / z, 1.0 / z];
        for (a, b) in out.linear().iter().zip(want) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
        // γ = 1, σ = 1 halves the exponents
        let reg = entropy_prox_regularized(&TransportPlan::uniform(2), &g, 1.0, 1.0).unwrap();
        let h = (-0.5f64).exp();
        let z = 2.0 + 2.0 * h;
        let want = [1.0 / z, h / z, h / z, 1.0 / z];
        for (a, b) in reg.linear().iter().zip(want) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn regularized_reduces_to_simplex_and_limits_to_uniform() {
        let x = TransportPlan::from_linear(3, vec![0.05, 0.1, 0.15, 0.2, 0.05, 0.1, 0.1, 0.15, 0.1]).unwrap();
        let g = Matrix::from_fn(3, 3, |i, j| (i * 3 + j) as f64 * 0.37);
        let a = entropy_prox_simplex(&x, &g, 0.8).unwrap();
        let b = entropy_prox_regularized(&x, &g, 0.8, 0.0).unwrap();
        assert_eq!(a, b);
        let lim = entropy_prox_regularized(&x, &g, 1.0, 1e12).unwrap();
        for v in lim.linear() {
            assert!((v - 1.0 / 9.0).abs() < 1e-6);
        }
    }

    #[test]
    fn fixed_marginal_prox() {
        let mu = Histogram::new(vec![0.3, 0.7]).unwrap();
        let out = entropy_prox_fixed_marginal(&TransportPlan::uniform(2), &Matrix::zeros(2, 2), 1.0, 0.0, &mu).unwrap();
        for (a, b) in out.linear().iter().zip([0.15, 0.15, 0.35, 0.35]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
        let start = TransportPlan::row_uniform(&mu);
        let g = Matrix::from_fn(2, 2, |i, j| (i + 2 * j) as f64);
        let same = entropy_prox_fixed_marginal(&start, &g, 0.0, 0.0, &mu).unwrap();
        for (a, b) in same.linear().iter().zip(start.linear()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
        let big = Matrix::from_fn(2, 2, |i, j| 1e3 * (i as f64 - j as f64));
        let out = entropy_prox_fixed_marginal(&start, &big, 5.0, 0.0, &mu).unwrap();
        assert_abs_diff_eq!(out.row_sums()[0], 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(out.row_sums()[1], 0.7, epsilon = 1e-12);
    }

    #[test]
    fn zero_row_marginal_gives_empty_row() {
        let mu = Histogram::new(vec![0.0, 1.0]).unwrap();
        let out = entropy_prox_fixed_marginal(&TransportPlan::uniform(2), &Matrix::zeros(2, 2), 1.0, 0.0, &mu).unwrap();
        assert_eq!(&out.linear()[..2], &[0.0, 0.0]);
        assert_abs_diff_eq!(out.row_sums()[1], 1.0, epsilon = 1e-15);
        // KL against itself stays finite with empty rows
        assert_eq!(kl_divergence(&out, &out).unwrap(), 0.0);
    }

    #[test]
    fn non_finite_gradient_is_an_error() {
        let g = mat(&[&[0.0, f64::NAN], &[0.0, 0.0]]);
        assert!(matches!(
            entropy_prox_simplex(&TransportPlan::uniform(2), &g, 1.0),
            Err(Error::NumericalFailure(_))
        ));
    }

    #[test]
    fn newton_symmetric_case() {
        let r = solve_scaled_root(&[0.5; 4], 0.5).unwrap();
        assert_abs_diff_eq!(r.s, 2.0, epsilon = 1e-15);
    }

    #[test]
    fn newton_clamped_case() {
        let r = solve_scaled_root(&[1.0, 1.0, 1.0, 0.01], 0.5).unwrap();
        assert_abs_diff_eq!(r.s, 24.0 / 7.0, epsilon = 1e-14);
        assert!(r.residual <= NEWTON_TOL);
        assert!(r.iterations <= 4 + 1);
    }

    #[test]
    fn scaled_prox_matches_hand_fixed_point() {
        // X̄^δ uniform (0.25) and G chosen so that Z = X̄·exp(−G) = [[1,1],[1,0.01]]
        let xbar = ScaledPlan::uniform(2, 0.5).unwrap();
        let g = Matrix::from_vec(2, 2, [1.0, 1.0, 1.0, 0.01].iter().map(|z: &f64| -(z / 0.25).ln()).collect()).unwrap();
        let (x, _) = scaled_prox(&xbar, &g, 1.0).unwrap();
        let want = [7.0 / 24.0, 7.0 / 24.0, 7.0 / 24.0, 0.125];
        for (a, b) in x.linear().iter().zip(want) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-14);
        }
        let (p, iters) = scaled_prox_picard(&xbar, &g, 1.0, 1e-10).unwrap();
        assert!(iters <= 35);
        for (a, b) in p.linear().iter().zip(want) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn picard_symmetric_case_is_one_step() {
        let (s, k) = picard_root(&[0.5; 4], 0.5, 1e-12, 100).unwrap();
        assert_eq!(s, 2.0);
        assert_eq!(k, 1);
    }

    #[test]
    fn scaled_prox_is_shift_invariant() {
        let xbar = ScaledPlan::uniform(3, 0.2).unwrap();
        let g = Matrix::from_fn(3, 3, |i, j| ((i * 3 + j) as f64).sin() * 4.0);
        let shifted = Matrix::from_fn(3, 3, |i, j| g.get(i, j) + 123.0);
        let (a, _) = scaled_prox(&xbar, &g, 2.0).unwrap();
        let (b, _) = scaled_prox(&xbar, &shifted, 2.0).unwrap();
        for (x, y) in a.linear().iter().zip(b.linear()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-14);
        }
    }

    #[test]
    fn scaled_prox_survives_huge_exponents() {
        let xbar = ScaledPlan::uniform(4, 0.1).unwrap();
        let g = Matrix::from_fn(4, 4, |i, j| if i == j { -5e3 } else { 5e3 });
        let (x, r) = scaled_prox(&xbar, &g, 10.0).unwrap();
        let sum: f64 = x.linear().iter().sum();
        assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-10);
        assert!(x.linear().iter().all(|&v| v >= x.floor()));
        assert!(r.log_shift > 1e4);
    }

    #[test]
    fn scaled_marginals_match_regularized_marginals() {
        let mu = Histogram::new(vec![0.2, 0.3, 0.5]).unwrap();
        let nu = Histogram::new(vec![0.6, 0.1, 0.3]).unwrap();
        let x = TransportPlan::product(&mu, &nu).to_matrix();
        let d = 0.3;
        let s = ScaledPlan::from_plan(&x, d).unwrap();
        for (a, b) in s.row_sums().iter().zip(mu.scaled(d)) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
        for (a, b) in s.col_sums().iter().zip(nu.scaled(d)) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
        let back = s.unscaled();
        assert_abs_diff_eq!(back.l1_distance(&x), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn bad_delta_is_rejected() {
        assert!(ScaledPlan::uniform(2, 0.0).is_err());
        assert!(ScaledPlan::uniform(2, 1.0).is_err());
    }
}
