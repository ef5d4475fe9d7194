//! Exact small-scale solvers used as test oracles.
//!
//! OT goes through a transportation simplex on the `2n − 1` cell basis tree; tiny
//! barycenter problems go through a dense two-phase simplex on the stacked LP.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instances::{OtInstance, WbInstance};
use crate::matrix::Matrix;
use crate::ot::{self, OtDual};

/// Largest `n` accepted by [`solve_exact_ot`].
pub const ORACLE_CAP: usize = 128;
/// Largest `(n, m)` accepted by [`solve_exact_wb`].
pub const WB_ORACLE_CAP: (usize, usize) = (8, 3);

/// Consecutive degenerate pivots after which entering cells are chosen by Bland's rule.
const DEGENERATE_STREAK: usize = 50;

/// An optimal vertex with a complementary dual.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExactSolution {
    pub plan: Matrix,
    /// Optimal duals for the cost the solve ran on.
    pub dual: OtDual,
    pub value: f64,
    pub pivots: usize,
}

/// Solves `inst` exactly on its raw cost.
pub fn solve_exact_ot(inst: &OtInstance) -> Result<ExactSolution> {
    solve_transport(inst.cost.entries(), inst.mu.as_slice(), inst.nu.as_slice())
}

/// Transportation simplex: northwest-corner start, Dantzig pricing with a Bland fallback
/// on degenerate streaks.
pub fn solve_transport(cost: &Matrix, mu: &[f64], nu: &[f64]) -> Result<ExactSolution> {
    let n = cost.rows();
    if n > ORACLE_CAP {
        return Err(Error::OracleCap { size: n, cap: ORACLE_CAP });
    }
    if !cost.is_square() || mu.len() != n || nu.len() != n || n == 0 {
        return Err(Error::ShapeMismatch("oracle needs a square cost and matching marginals".into()));
    }
    let a = mu.to_vec();
    let mut b = nu.to_vec();
    // absorb the last-bit mass mismatch so the northwest corner closes exactly
    let diff = a.iter().sum::<f64>() - b.iter().sum::<f64>();
    b[n - 1] = (b[n - 1] + diff).max(0.0);

    let mut flow = Matrix::zeros(n, n);
    let mut basic = vec![false; n * n];
    let (mut i, mut j) = (0, 0);
    let (mut sa, mut sb) = (a.clone(), b.clone());
    loop {
        let q = sa[i].min(sb[j]);
        flow.set(i, j, q);
        basic[i * n + j] = true;
        sa[i] -= q;
        sb[j] -= q;
        if i == n - 1 && j == n - 1 {
            break;
        }
        if (sa[i] <= sb[j] && i < n - 1) || j == n - 1 {
            i += 1;
        } else {
            j += 1;
        }
    }

    let scale = cost.max().abs().max(1.0);
    let tol = 1e-12 * scale;
    let max_pivots = 50 * n * n + 1000;
    let mut pivots = 0;
    let mut streak = 0;
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n];
    loop {
        let adj = tree_adjacency(&basic, n);
        potentials(cost, &adj, n, &mut u, &mut v)?;
        let entering = if streak < DEGENERATE_STREAK {
            let mut best = (-tol, None);
            for r in 0..n {
                for c in 0..n {
                    let d = cost.get(r, c) - u[r] - v[c];
                    if !basic[r * n + c] && d < best.0 {
                        best = (d, Some((r, c)));
                    }
                }
            }
            best.1
        } else {
            (0..n * n)
                .find(|&k| !basic[k] && cost.get(k / n, k % n) - u[k / n] - v[k % n] < -tol)
                .map(|k| (k / n, k % n))
        };
        let Some((ei, ej)) = entering else { break };
        pivots += 1;
        if pivots > max_pivots {
            return Err(Error::Oracle(format!("no convergence after {max_pivots} pivots")));
        }
        let path = tree_path(&adj, n + ej, ei, n)?;
        // path: col ej, row, col, ..., row ei; its cells alternate −, +, −, ...
        let cells: Vec<(usize, usize)> = path
            .windows(2)
            .map(|w| if w[0] < n { (w[0], w[1] - n) } else { (w[1], w[0] - n) })
            .collect();
        let mut theta = f64::INFINITY;
        let mut leave = 0;
        for (k, &(r, c)) in cells.iter().enumerate().step_by(2) {
            if flow.get(r, c) < theta {
                theta = flow.get(r, c);
                leave = k;
            }
        }
        for (k, &(r, c)) in cells.iter().enumerate() {
            let f = flow.get(r, c) + if k % 2 == 0 { -theta } else { theta };
            flow.set(r, c, f.max(0.0));
        }
        flow.set(ei, ej, theta);
        let (li, lj) = cells[leave];
        flow.set(li, lj, 0.0);
        basic[li * n + lj] = false;
        basic[ei * n + ej] = true;
        streak = if theta == 0.0 { streak + 1 } else { 0 };
    }
    let value = cost.dot(&flow);
    Ok(ExactSolution {
        plan: flow,
        dual: OtDual { u, v },
        value,
        pivots,
    })
}

fn tree_adjacency(basic: &[bool], n: usize) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); 2 * n];
    for (k, _) in basic.iter().enumerate().filter(|(_, &b)| b) {
        let (r, c) = (k / n, k % n);
        adj[r].push(n + c);
        adj[n + c].push(r);
    }
    adj
}

fn potentials(cost: &Matrix, adj: &[Vec<usize>], n: usize, u: &mut [f64], v: &mut [f64]) -> Result<()> {
    let mut seen = vec![false; 2 * n];
    let mut stack = vec![0];
    seen[0] = true;
    u[0] = 0.0;
    let mut count = 1;
    while let Some(node) = stack.pop() {
        for &next in &adj[node] {
            if seen[next] {
                continue;
            }
            seen[next] = true;
            count += 1;
            if node < n {
                v[next - n] = cost.get(node, next - n) - u[node];
            } else {
                u[next] = cost.get(next, node - n) - v[node - n];
            }
            stack.push(next);
        }
    }
    if count != 2 * n {
        return Err(Error::Oracle("basis is not a spanning tree".into()));
    }
    Ok(())
}

fn tree_path(adj: &[Vec<usize>], from: usize, to: usize, n: usize) -> Result<Vec<usize>> {
    let mut parent = vec![usize::MAX; 2 * n];
    parent[from] = from;
    let mut queue = std::collections::VecDeque::from([from]);
    while let Some(node) = queue.pop_front() {
        if node == to {
            break;
        }
        for &next in &adj[node] {
            if parent[next] == usize::MAX {
                parent[next] = node;
                queue.push_back(next);
            }
        }
    }
    if parent[to] == usize::MAX {
        return Err(Error::Oracle("entering cell closes no cycle".into()));
    }
    let mut path = vec![to];
    let mut node = to;
    while node != from {
        node = parent[node];
        path.push(node);
    }
    path.reverse();
    Ok(path)
}

/// Recenters an optimal dual of a normalized cost into the box `‖·‖_∞ ≤ ‖C‖/2`:
/// `ũ = u − min u`, `ṽ` its c-transform, then `(ũ − ‖C‖/2, ṽ + ‖C‖/2)`.
///
/// The objective is unchanged up to rounding because the total shift is zero on
/// couplings and the c-transform of `ũ` dominates the feasible `v + min u`, so `v`
/// enters only through that bound.
pub fn shift_dual_to_box(u: &[f64], _v: &[f64], cost: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let half = 0.5 * cost.max().max(0.0);
    let m = u.iter().copied().fold(f64::INFINITY, f64::min);
    let ut: Vec<f64> = u.iter().map(|x| x - m).collect();
    let vt = ot::c_transform_cols(cost, &ut);
    (ut.iter().map(|x| x - half).collect(), vt.iter().map(|x| x + half).collect())
}

/// Optimal duals of `inst` for its normalized cost, recentered into the box.
pub fn boxed_dual(inst: &OtInstance, exact: &ExactSolution) -> OtDual {
    let norm = inst.cost.normalized();
    let u: Vec<f64> = exact.dual.u.iter().zip(norm.row_shift()).map(|(a, b)| a - b).collect();
    let v: Vec<f64> = exact.dual.v.iter().zip(norm.col_shift()).map(|(a, b)| a - b).collect();
    let (u, v) = shift_dual_to_box(&u, &v, norm.entries());
    OtDual { u, v }
}

/// `W₁` between two histograms on a sorted 1-D grid, `∫|F_a − F_b|`.
pub fn w1_1d(grid: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let mut cdf = 0.0;
    let mut total = 0.0;
    for k in 0..grid.len().saturating_sub(1) {
        cdf += a[k] - b[k];
        total += cdf.abs() * (grid[k + 1] - grid[k]);
    }
    total
}

/// Solution of a standard-form LP.
#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    /// One multiplier per equality row.
    pub y: Vec<f64>,
    pub value: f64,
}

/// `min cᵀx` subject to `Ax = b`, `x ≥ 0`, by a dense two-phase simplex with Bland's rule.
pub fn solve_lp(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> Result<LpSolution> {
    let rows = a.len();
    let nv = c.len();
    if b.len() != rows || a.iter().any(|r| r.len() != nv) {
        return Err(Error::ShapeMismatch("LP dimensions disagree".into()));
    }
    let width = nv + rows + 1;
    let rhs = width - 1;
    let mut sign = vec![1.0; rows];
    let mut tab: Vec<Vec<f64>> = (0..rows)
        .map(|r| {
            let s = if b[r] < 0.0 { -1.0 } else { 1.0 };
            sign[r] = s;
            let mut row = vec![0.0; width];
            for (dst, &src) in row.iter_mut().zip(&a[r]) {
                *dst = s * src;
            }
            row[nv + r] = 1.0;
            row[rhs] = s * b[r];
            row
        })
        .collect();
    let mut basis: Vec<usize> = (nv..nv + rows).collect();

    // phase one: minimize the artificial sum
    let mut obj = vec![0.0; width];
    for row in &tab {
        for k in 0..nv {
            obj[k] -= row[k];
        }
        obj[rhs] -= row[rhs];
    }
    run_simplex(&mut tab, &mut basis, &mut obj, nv + rows)?;
    if -obj[rhs] > 1e-9 * (1.0 + b.iter().map(|x| x.abs()).sum::<f64>()) {
        return Err(Error::Oracle("LP is infeasible".into()));
    }
    for r in 0..rows {
        if basis[r] >= nv {
            if let Some(k) = (0..nv).find(|&k| tab[r][k].abs() > 1e-9) {
                pivot(&mut tab, &mut basis, &mut obj, r, k);
            }
        }
    }

    // phase two; artificials stay out
    let mut obj = vec![0.0; width];
    obj[..nv].copy_from_slice(c);
    for r in 0..rows {
        let cb = if basis[r] < nv { c[basis[r]] } else { 0.0 };
        if cb != 0.0 {
            for k in 0..width {
                obj[k] -= cb * tab[r][k];
            }
        }
    }
    run_simplex(&mut tab, &mut basis, &mut obj, nv)?;
    let mut x = vec![0.0; nv];
    for r in 0..rows {
        if basis[r] < nv {
            x[basis[r]] = tab[r][rhs].max(0.0);
        }
    }
    let y = (0..rows).map(|r| -sign[r] * obj[nv + r]).collect();
    let value = x.iter().zip(c).map(|(x, c)| x * c).sum();
    Ok(LpSolution { x, y, value })
}

fn run_simplex(tab: &mut [Vec<f64>], basis: &mut [usize], obj: &mut [f64], allowed: usize) -> Result<()> {
    let rhs = obj.len() - 1;
    let limit = 100_000;
    for _ in 0..limit {
        let Some(k) = (0..allowed).find(|&k| obj[k] < -1e-12) else {
            return Ok(());
        };
        let mut best: Option<(f64, usize)> = None;
        for (r, row) in tab.iter().enumerate() {
            if row[k] > 1e-12 {
                let ratio = row[rhs] / row[k];
                let better = match best {
                    None => true,
                    Some((q, br)) => ratio < q - 1e-15 || (ratio <= q + 1e-15 && basis[r] < basis[br]),
                };
                if better {
                    best = Some((ratio, r));
                }
            }
        }
        let Some((_, r)) = best else {
            return Err(Error::Oracle("LP is unbounded".into()));
        };
        pivot(tab, basis, obj, r, k);
    }
    Err(Error::Oracle(format!("simplex exceeded {limit} pivots")))
}

fn pivot(tab: &mut [Vec<f64>], basis: &mut [usize], obj: &mut [f64], r: usize, k: usize) {
    let p = tab[r][k];
    tab[r].iter_mut().for_each(|x| *x /= p);
    let prow = tab[r].clone();
    for (q, row) in tab.iter_mut().enumerate() {
        if q != r && row[k] != 0.0 {
            let f = row[k];
            row.iter_mut().zip(&prow).for_each(|(x, p)| *x -= f * p);
        }
    }
    let f = obj[k];
    obj.iter_mut().zip(&prow).for_each(|(x, p)| *x -= f * p);
    basis[r] = k;
}

/// Exact barycenter of a tiny instance.
#[derive(Debug, Clone)]
pub struct ExactWb {
    pub barycenter: Vec<f64>,
    pub plans: Vec<Matrix>,
    /// `Σ_l w_l ⟨C_l, X_l⟩` on raw costs.
    pub value: f64,
    /// Multipliers of the row constraints `X_l 1 = μ_l`, one vector per block.
    pub alpha: Vec<Vec<f64>>,
    /// Multipliers of the column constraints `X_lᵀ1 = ν`, one vector per block.
    pub beta: Vec<Vec<f64>>,
}

/// Solves `min Σ_l w_l ⟨C_l, X_l⟩` over `X_l 1 = μ_l`, `X_lᵀ1 = ν`, `X_l, ν ≥ 0`.
pub fn solve_exact_wb(inst: &WbInstance) -> Result<ExactWb> {
    let (n, m) = (inst.n(), inst.m());
    if n > WB_ORACLE_CAP.0 || m > WB_ORACLE_CAP.1 {
        return Err(Error::OracleCap { size: n.max(m), cap: WB_ORACLE_CAP.0 });
    }
    let block = n * n;
    let nv = m * block + n;
    let mut a = Vec::with_capacity(2 * m * n);
    let mut b = Vec::with_capacity(2 * m * n);
    let mut c = vec![0.0; nv];
    for l in 0..m {
        let cost = inst.cost(l).entries();
        for k in 0..block {
            c[l * block + k] = inst.weights[l] * cost.as_slice()[k];
        }
        for i in 0..n {
            let mut row = vec![0.0; nv];
            for j in 0..n {
                row[l * block + i * n + j] = 1.0;
            }
            a.push(row);
            b.push(inst.marginals[l][i]);
        }
    }
    for l in 0..m {
        for j in 0..n {
            let mut row = vec![0.0; nv];
            for i in 0..n {
                row[l * block + i * n + j] = 1.0;
            }
            row[m * block + j] = -1.0;
            a.push(row);
            b.push(0.0);
        }
    }
    let sol = solve_lp(&a, &b, &c)?;
    let plans = (0..m)
        .map(|l| Matrix::from_vec(n, n, sol.x[l * block..(l + 1) * block].to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let alpha = (0..m).map(|l| sol.y[l * n..(l + 1) * n].to_vec()).collect();
    let beta = (0..m).map(|l| sol.y[(m + l) * n..(m + l + 1) * n].to_vec()).collect();
    Ok(ExactWb {
        barycenter: sol.x[m * block..].to_vec(),
        plans,
        value: sol.value,
        alpha,
        beta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{gen_random_instance, Histogram};

    #[test]
    fn two_point_identity() {
        let c = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let s = solve_transport(&c, &[0.5, 0.5], &[0.5, 0.5]).unwrap();
        assert_eq!(s.value, 0.0);
        assert_eq!(s.plan.to_rows(), vec![vec![0.5, 0.0], vec![0.0, 0.5]]);
    }

    #[test]
    fn adversarial_instance() {
        let n = 5;
        let mut mu = vec![0.0; n];
        mu[0] = 1.0;
        let mut nu = vec![0.0; n];
        nu[n - 1] = 1.0;
        let c = Matrix::from_fn(n, n, |i, j| mu[i] * nu[j]);
        let inst = OtInstance::new(Histogram::new(mu).unwrap(), Histogram::new(nu).unwrap(), c).unwrap();
        let s = solve_exact_ot(&inst).unwrap();
        assert!((s.value - 1.0).abs() < 1e-15);
        let d = boxed_dual(&inst, &s);
        assert!(d.max_abs() >= 0.5 - 1e-9 && d.max_abs() <= 0.5 + 1e-9);
    }

    #[test]
    fn boxed_dual_stays_optimal() {
        for seed in 0..20 {
            let inst = gen_random_instance(4 + seed as usize % 7, seed).unwrap();
            let s = solve_exact_ot(&inst).unwrap();
            let norm = inst.cost.normalized();
            let d = boxed_dual(&inst, &s);
            let c = norm.entries();
            let n = inst.n();
            for i in 0..n {
                for j in 0..n {
                    assert!(d.u[i] + d.v[j] <= c.get(i, j) + 1e-9);
                }
            }
            let value = crate::matrix::dot(&d.u, inst.mu.as_slice())
                + crate::matrix::dot(&d.v, inst.nu.as_slice())
                + norm.offset(inst.mu.as_slice(), inst.nu.as_slice());
            assert!((value - s.value).abs() < 1e-9, "seed {seed}: {value} vs {}", s.value);
            assert!(d.max_abs() <= inst.lambda + 1e-9);
        }
    }

    #[test]
    fn strong_duality_and_basic_support() {
        for seed in 0..30 {
            let inst = gen_random_instance(3 + seed as usize % 8, seed).unwrap();
            let s = solve_exact_ot(&inst).unwrap();
            let c = inst.cost.entries();
            let n = inst.n();
            let d = crate::matrix::dot(&s.dual.u, inst.mu.as_slice()) + crate::matrix::dot(&s.dual.v, inst.nu.as_slice());
            assert!((d - s.value).abs() < 1e-9);
            for i in 0..n {
                for j in 0..n {
                    assert!(s.dual.u[i] + s.dual.v[j] <= c.get(i, j) + 1e-9);
                }
            }
            assert!(s.plan.as_slice().iter().filter(|&&x| x > 0.0).count() <= 2 * n - 1);
            for (a, b) in s.plan.row_sums().iter().zip(inst.mu.as_slice()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_cost_shifts_to_zero() {
        let c = Matrix::zeros(3, 3);
        let (u, v) = shift_dual_to_box(&[0.2, 0.2, 0.2], &[-0.2; 3], &c);
        assert!(u.iter().chain(&v).all(|&x| x == 0.0));
    }

    #[test]
    fn w1_of_shifted_mass() {
        let grid = [0.0, 1.0, 2.0];
        assert_eq!(w1_1d(&grid, &[1.0, 0.0, 0.0], &[0.0, 0.0, 1.0]), 2.0);
    }

    #[test]
    fn lp_small() {
        // min x0 + 2 x1 s.t. x0 + x1 = 1 → x0 = 1, y = 1
        let s = solve_lp(&[vec![1.0, 1.0]], &[1.0], &[1.0, 2.0]).unwrap();
        assert_eq!(s.x, vec![1.0, 0.0]);
        assert!((s.y[0] - 1.0).abs() < 1e-15);
        assert!(solve_lp(&[vec![1.0, 1.0]], &[-1.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn cap_is_enforced() {
        let c = Matrix::zeros(ORACLE_CAP + 1, ORACLE_CAP + 1);
        let h = vec![1.0 / (ORACLE_CAP + 1) as f64; ORACLE_CAP + 1];
        assert!(matches!(solve_transport(&c, &h, &h), Err(Error::OracleCap { .. })));
    }
}
