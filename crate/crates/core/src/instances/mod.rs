//! Problem definitions: histograms, cost matrices, OT and WB instances.

mod generators;
mod image;
mod io;

pub use generators::{
    discretized_gaussian, gen_blob_images, gen_corner_image, gen_corner_to_dense,
    gen_gaussian_instance, gen_gaussian_wb, gen_random_instance, ot_from_images, pixel_cost,
    GaussianWb, PixelMetric,
};
pub use image::{load_image, GrayImage};
pub use io::{load_instance, save_instance, to_json, Instance};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Sums within this distance of 1 are accepted as-is.
pub const EXACT_MASS_TOL: f64 = 1e-12;
/// Sums within this distance of 1 are silently renormalized; anything further is rejected.
pub const MASS_TOL: f64 = 1e-6;

/// A discrete probability vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Histogram(Vec<f64>);

impl Histogram {
    /// Validates a probability vector, renormalizing sums that are off by at most
    /// [`MASS_TOL`].
    pub fn new(values: Vec<f64>) -> Result<Self> {
        Self::check_entries(&values, "histogram")?;
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() <= EXACT_MASS_TOL {
            Ok(Histogram(values))
        } else if (sum - 1.0).abs() <= MASS_TOL {
            Ok(Histogram(values.into_iter().map(|x| x / sum).collect()))
        } else {
            Err(Error::invalid(format!(
                "histogram sums to {sum}, more than {MASS_TOL:e} away from 1"
            )))
        }
    }

    /// Normalizes arbitrary nonnegative weights with positive total mass.
    pub fn from_weights(values: Vec<f64>) -> Result<Self> {
        Self::check_entries(&values, "weights")?;
        let sum: f64 = values.iter().sum();
        if sum <= 0.0 {
            return Err(Error::invalid("weights have zero total mass"));
        }
        Ok(Histogram(values.into_iter().map(|x| x / sum).collect()))
    }

    pub fn uniform(n: usize) -> Self {
        Histogram(vec![1.0 / n as f64; n])
    }

    fn check_entries(values: &[f64], what: &str) -> Result<()> {
        if values.is_empty() {
            return Err(Error::invalid(format!("{what} is empty")));
        }
        for (i, &x) in values.iter().enumerate() {
            if !x.is_finite() {
                return Err(Error::invalid(format!("{what}[{i}] = {x} is not finite")));
            }
            if x < 0.0 {
                return Err(Error::invalid(format!("{what}[{i}] = {x} is negative")));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    /// `(1 - δ) h + δ/n`, the marginal of a scaled plan.
    pub fn scaled(&self, delta: f64) -> Vec<f64> {
        let n = self.len() as f64;
        self.0.iter().map(|&x| (1.0 - delta) * x + delta / n).collect()
    }

    /// Total-variation distance `½‖a − b‖₁`.
    pub fn tv_distance(&self, other: &Histogram) -> f64 {
        0.5 * crate::matrix::l1_diff(&self.0, &other.0)
    }
}

impl std::ops::Index<usize> for Histogram {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// A nonnegative square cost matrix, possibly normalized.
///
/// Normalization subtracts row minima and then column minima. The removed shifts are
/// kept so that for any plan `X` with marginals `(μ, ν)`
/// `⟨C_raw, X⟩ = ⟨C, X⟩ + offset(μ, ν)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    entries: Matrix,
    row_shift: Vec<f64>,
    col_shift: Vec<f64>,
    max_entry: f64,
}

impl CostMatrix {
    /// Wraps a raw cost without normalizing it.
    pub fn new(raw: Matrix) -> Result<Self> {
        Self::validate(&raw)?;
        let n = raw.rows();
        let max_entry = raw.max();
        Ok(CostMatrix {
            entries: raw,
            row_shift: vec![0.0; n],
            col_shift: vec![0.0; n],
            max_entry,
        })
    }

    fn validate(raw: &Matrix) -> Result<()> {
        if !raw.is_square() || raw.rows() == 0 {
            return Err(Error::invalid(format!(
                "cost matrix must be square and nonempty, got {}x{}",
                raw.rows(),
                raw.cols()
            )));
        }
        for i in 0..raw.rows() {
            for (j, &c) in raw.row(i).iter().enumerate() {
                if !c.is_finite() {
                    return Err(Error::invalid(format!("cost[{i}][{j}] = {c} is not finite")));
                }
                if c < 0.0 {
                    return Err(Error::invalid(format!("cost[{i}][{j}] = {c} is negative")));
                }
            }
        }
        Ok(())
    }

    /// Same matrix with only the row minima removed. Used where column marginals are
    /// not fixed (barycenters, penalized problems), since only row shifts are constant
    /// over such plans.
    pub fn row_normalized(&self) -> CostMatrix {
        let n = self.n();
        let mut entries = self.entries.clone();
        let mut row_shift = self.row_shift.clone();
        for i in 0..n {
            let m = entries.row(i).iter().copied().fold(f64::INFINITY, f64::min);
            for j in 0..n {
                entries.set(i, j, entries.get(i, j) - m);
            }
            row_shift[i] += m;
        }
        let max_entry = entries.max();
        CostMatrix {
            entries,
            row_shift,
            col_shift: self.col_shift.clone(),
            max_entry,
        }
    }

    /// Removes row minima and then column minima (the normalization under which the
    /// dual box bound `‖C‖/2` holds).
    pub fn normalized(&self) -> CostMatrix {
        let rows_done = self.row_normalized();
        let n = self.n();
        let mut entries = rows_done.entries;
        let mut col_shift = rows_done.col_shift;
        for j in 0..n {
            let m = (0..n).map(|i| entries.get(i, j)).fold(f64::INFINITY, f64::min);
            for i in 0..n {
                entries.set(i, j, entries.get(i, j) - m);
            }
            col_shift[j] += m;
        }
        let max_entry = entries.max();
        CostMatrix {
            entries,
            row_shift: rows_done.row_shift,
            col_shift,
            max_entry,
        }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.entries.rows()
    }

    #[inline]
    pub fn entries(&self) -> &Matrix {
        &self.entries
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries.get(i, j)
    }

    /// `‖C‖ = max_ij C_ij`.
    #[inline]
    pub fn max_entry(&self) -> f64 {
        self.max_entry
    }

    pub fn row_shift(&self) -> &[f64] {
        &self.row_shift
    }

    pub fn col_shift(&self) -> &[f64] {
        &self.col_shift
    }

    /// The constant removed by normalization for plans with marginals `(μ, ν)`.
    pub fn offset(&self, mu: &[f64], nu: &[f64]) -> f64 {
        crate::matrix::dot(&self.row_shift, mu) + crate::matrix::dot(&self.col_shift, nu)
    }

    /// Offset when it does not depend on the marginals (all shifts equal), e.g. a
    /// uniform shift of the whole matrix.
    pub fn uniform_offset(&self) -> Option<f64> {
        let r0 = self.row_shift[0];
        let c0 = self.col_shift[0];
        let flat = self.row_shift.iter().all(|&r| r == r0) && self.col_shift.iter().all(|&c| c == c0);
        flat.then_some(r0 + c0)
    }
}

/// Removes row then column minima from a raw nonnegative square matrix.
pub fn normalize_cost(raw: &Matrix) -> Result<CostMatrix> {
    Ok(CostMatrix::new(raw.clone())?.normalized())
}

/// A balanced OT problem `min ⟨C, X⟩` over couplings of `(μ, ν)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OtInstance {
    pub mu: Histogram,
    pub nu: Histogram,
    /// Raw cost as given; solvers normalize internally.
    pub cost: CostMatrix,
    /// Dual box bound, `‖C_norm‖/2` by default.
    pub lambda: f64,
}

impl OtInstance {
    pub fn new(mu: Histogram, nu: Histogram, cost: Matrix) -> Result<Self> {
        let cost = CostMatrix::new(cost)?;
        let n = cost.n();
        if mu.len() != n || nu.len() != n {
            return Err(Error::invalid(format!(
                "marginal lengths ({}, {}) do not match cost size {n}",
                mu.len(),
                nu.len()
            )));
        }
        let lambda = default_lambda(cost.normalized().max_entry());
        Ok(OtInstance { mu, nu, cost, lambda })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.cost.n()
    }

    /// `⟨C_raw, X⟩`.
    pub fn cost_of(&self, plan: &Matrix) -> f64 {
        self.cost.entries().dot(plan)
    }
}

/// λ = ‖C‖/2, guarded so a zero cost still yields a usable box.
pub(crate) fn default_lambda(max_entry: f64) -> f64 {
    if max_entry > 0.0 {
        max_entry / 2.0
    } else {
        0.5
    }
}

/// A fixed-support Wasserstein barycenter problem.
#[derive(Debug, Clone, PartialEq)]
pub struct WbInstance {
    pub weights: Vec<f64>,
    pub marginals: Vec<Histogram>,
    /// Either one shared cost or one per marginal.
    pub costs: Vec<CostMatrix>,
    pub lambda: f64,
}

impl WbInstance {
    pub fn new(weights: Vec<f64>, marginals: Vec<Histogram>, costs: Vec<Matrix>) -> Result<Self> {
        let m = marginals.len();
        if m < 2 {
            return Err(Error::invalid(format!("barycenter needs m >= 2 marginals, got {m}")));
        }
        if weights.len() != m {
            return Err(Error::invalid(format!("{} weights for {m} marginals", weights.len())));
        }
        for (l, &w) in weights.iter().enumerate() {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::invalid(format!("weight[{l}] = {w} must be positive")));
            }
        }
        let wsum: f64 = weights.iter().sum();
        if (wsum - 1.0).abs() > EXACT_MASS_TOL {
            return Err(Error::invalid(format!("weights sum to {wsum}, expected 1")));
        }
        if costs.len() != 1 && costs.len() != m {
            return Err(Error::invalid(format!(
                "expected 1 shared cost or {m} costs, got {}",
                costs.len()
            )));
        }
        let costs = costs.into_iter().map(CostMatrix::new).collect::<Result<Vec<_>>>()?;
        let n = costs[0].n();
        for (l, c) in costs.iter().enumerate() {
            if c.n() != n {
                return Err(Error::invalid(format!("cost[{l}] has size {}, expected {n}", c.n())));
            }
        }
        for (l, h) in marginals.iter().enumerate() {
            if h.len() != n {
                return Err(Error::invalid(format!("marginal[{l}] has length {}, expected {n}", h.len())));
            }
        }
        let max_c = costs
            .iter()
            .map(|c| c.row_normalized().max_entry())
            .fold(0.0, f64::max);
        Ok(WbInstance {
            weights,
            marginals,
            costs,
            lambda: default_lambda(max_c),
        })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.costs[0].n()
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.marginals.len()
    }

    /// Cost of block `l` (the shared matrix when only one is stored).
    #[inline]
    pub fn cost(&self, l: usize) -> &CostMatrix {
        if self.costs.len() == 1 {
            &self.costs[0]
        } else {
            &self.costs[l]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn normalize_keeps_already_normalized_cost() {
        let c = normalize_cost(&m(&[&[0.0, 1.0], &[1.0, 0.0]])).unwrap();
        assert_eq!(c.entries(), &m(&[&[0.0, 1.0], &[1.0, 0.0]]));
        assert_eq!(c.uniform_offset(), Some(0.0));
    }

    #[test]
    fn normalize_uniform_shift() {
        let c = normalize_cost(&m(&[&[2.0, 3.0], &[3.0, 2.0]])).unwrap();
        assert_eq!(c.entries(), &m(&[&[0.0, 1.0], &[1.0, 0.0]]));
        assert_eq!(c.uniform_offset(), Some(2.0));
        assert_eq!(c.max_entry(), 1.0);
    }

    #[test]
    fn normalize_offset_is_constant_over_couplings() {
        // Row minima (1, 3) are removed; the removed amount is ⟨r, μ⟩, constant only
        // over plans with fixed row marginals.
        let raw = m(&[&[1.0, 2.0], &[4.0, 3.0]]);
        let c = normalize_cost(&raw).unwrap();
        assert_eq!(c.entries(), &m(&[&[0.0, 1.0], &[1.0, 0.0]]));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mu = [0.3, 0.7];
        let nu = [0.6, 0.4];
        let offset = c.offset(&mu, &nu);
        for _ in 0..100 {
            // couplings of (μ, ν) on 2x2: one free parameter
            let lo = (mu[0] - nu[1]).max(0.0);
            let hi = mu[0].min(nu[0]);
            let a = lo + rng.gen::<f64>() * (hi - lo);
            let x = m(&[&[a, mu[0] - a], &[nu[0] - a, mu[1] - nu[0] + a]]);
            let diff = raw.dot(&x) - c.entries().dot(&x);
            assert!((diff - offset).abs() < 1e-14);
        }
        assert_eq!(c.uniform_offset(), None);
    }

    #[test]
    fn normalize_rejects_bad_input() {
        assert!(normalize_cost(&Matrix::zeros(2, 3)).is_err());
        assert!(normalize_cost(&m(&[&[0.0, f64::NAN], &[1.0, 0.0]])).is_err());
        assert!(normalize_cost(&m(&[&[0.0, -1.0], &[1.0, 0.0]])).is_err());
    }

    #[test]
    fn histogram_tolerance_rule() {
        assert!(Histogram::new(vec![0.5, 0.5000001]).is_ok());
        let h = Histogram::new(vec![0.5, 0.5000001]).unwrap();
        assert!((h.sum() - 1.0).abs() < 1e-15);
        assert!(Histogram::new(vec![0.5, 0.6]).is_err());
        assert!(Histogram::new(vec![1.1, -0.1]).is_err());
        // exact sums are kept bit for bit
        let v = vec![0.1, 0.2, 0.7];
        assert_eq!(Histogram::new(v.clone()).unwrap().into_vec(), v);
    }

    #[test]
    fn wb_rejects_zero_weight() {
        let h = Histogram::uniform(2);
        let c = Matrix::zeros(2, 2);
        let err = WbInstance::new(vec![1.0, 0.0], vec![h.clone(), h], vec![c]);
        assert!(err.is_err());
    }
}
