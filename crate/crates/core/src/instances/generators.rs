//! Instance families: 1-D Gaussian mixtures, uniform random, corner-to-dense images,
//! image pairs and Gaussian barycenter sets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{GrayImage, Histogram, OtInstance, WbInstance};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Ground metric between pixel centers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PixelMetric {
    #[default]
    Euclidean,
    SquaredEuclidean,
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gaussian_density(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    (-0.5 * z * z).exp() / (std * (2.0 * std::f64::consts::PI).sqrt())
}

/// Normalized samples of a N(mean, std²) density on `grid`.
pub fn discretized_gaussian(grid: &[f64], mean: f64, std: f64) -> Result<Histogram> {
    Histogram::from_weights(grid.iter().map(|&x| gaussian_density(x, mean, std)).collect())
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// μ ∝ N(3,1) + N(7,1), ν ∝ N(5,1) on `n` equidistant points of `[0, 10]`, with cost
/// `|x_i − x_j|`. The instance is deterministic; `seed` is accepted for a uniform
/// generator interface.
pub fn gen_gaussian_instance(n: usize, _seed: u64) -> Result<OtInstance> {
    if n < 2 {
        return Err(Error::invalid(format!("gaussian instance needs n >= 2, got {n}")));
    }
    let grid = linspace(0.0, 10.0, n);
    let mu = Histogram::from_weights(
        grid.iter()
            .map(|&x| gaussian_density(x, 3.0, 1.0) + gaussian_density(x, 7.0, 1.0))
            .collect(),
    )?;
    let nu = discretized_gaussian(&grid, 5.0, 1.0)?;
    let cost = Matrix::from_fn(n, n, |i, j| (grid[i] - grid[j]).abs());
    OtInstance::new(mu, nu, cost)
}

/// Marginals and cost entries i.i.d. uniform on `[0, 1)`; marginals renormalized.
pub fn gen_random_instance(n: usize, seed: u64) -> Result<OtInstance> {
    if n < 1 {
        return Err(Error::invalid("random instance needs n >= 1"));
    }
    let mut r = rng(seed);
    let mu = Histogram::from_weights((0..n).map(|_| r.gen::<f64>()).collect())?;
    let nu = Histogram::from_weights((0..n).map(|_| r.gen::<f64>()).collect())?;
    let cost = Matrix::from_fn(n, n, |_, _| r.gen::<f64>());
    OtInstance::new(mu, nu, cost)
}

/// Triangular top-left profile `max(0, 1 − (i + j)/n_pix)`.
pub fn gen_corner_image(n_pix: usize) -> GrayImage {
    let pixels = (0..n_pix * n_pix)
        .map(|k| {
            let (i, j) = (k / n_pix, k % n_pix);
            (1.0 - (i + j) as f64 / n_pix as f64).max(0.0)
        })
        .collect();
    GrayImage {
        width: n_pix,
        height: n_pix,
        pixels,
    }
}

/// Distance matrix between the pixel centers of a `height × width` grid, pixels
/// indexed row-major.
pub fn pixel_cost(width: usize, height: usize, metric: PixelMetric) -> Matrix {
    let n = width * height;
    Matrix::from_fn(n, n, |a, b| {
        let di = (a / width) as f64 - (b / width) as f64;
        let dj = (a % width) as f64 - (b % width) as f64;
        let d2 = di * di + dj * dj;
        match metric {
            PixelMetric::Euclidean => d2.sqrt(),
            PixelMetric::SquaredEuclidean => d2,
        }
    })
}

/// OT between two grayscale images of the same shape.
pub fn ot_from_images(a: &GrayImage, b: &GrayImage, metric: PixelMetric) -> Result<OtInstance> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::invalid(format!(
            "image shapes differ: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    OtInstance::new(
        a.to_histogram()?,
        b.to_histogram()?,
        pixel_cost(a.width, a.height, metric),
    )
}

/// Corner-concentrated image to a uniform image, `n = n_pix²`.
pub fn gen_corner_to_dense(n_pix: usize, metric: PixelMetric) -> Result<OtInstance> {
    if n_pix < 2 {
        return Err(Error::invalid(format!("corner instance needs n_pix >= 2, got {n_pix}")));
    }
    let corner = gen_corner_image(n_pix);
    let dense = GrayImage {
        width: n_pix,
        height: n_pix,
        pixels: vec![1.0; n_pix * n_pix],
    };
    ot_from_images(&corner, &dense, metric)
}

/// Two synthetic images made of a few random Gaussian blobs each.
pub fn gen_blob_images(n_pix: usize, seed: u64) -> (GrayImage, GrayImage) {
    let mut r = rng(seed);
    let image = |r: &mut ChaCha8Rng| {
        let blobs = r.gen_range(1..=3);
        let centers: Vec<(f64, f64, f64)> = (0..blobs)
            .map(|_| {
                let s = n_pix as f64;
                (r.gen::<f64>() * s, r.gen::<f64>() * s, (0.08 + 0.12 * r.gen::<f64>()) * s)
            })
            .collect();
        let pixels = (0..n_pix * n_pix)
            .map(|k| {
                let (y, x) = ((k / n_pix) as f64, (k % n_pix) as f64);
                centers
                    .iter()
                    .map(|&(cy, cx, w)| (-((y - cy).powi(2) + (x - cx).powi(2)) / (2.0 * w * w)).exp())
                    .sum::<f64>()
            })
            .collect();
        GrayImage {
            width: n_pix,
            height: n_pix,
            pixels,
        }
    };
    let a = image(&mut r);
    let b = image(&mut r);
    (a, b)
}

/// A barycenter problem over random 1-D Gaussians together with their parameters.
#[derive(Debug, Clone)]
pub struct GaussianWb {
    pub instance: WbInstance,
    pub grid: Vec<f64>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl GaussianWb {
    /// The closed-form W2 barycenter of the underlying Gaussians (mean Σ w·m, std Σ w·s),
    /// discretized on the same grid.
    pub fn closed_form_barycenter(&self) -> Result<Histogram> {
        let w = &self.instance.weights;
        let mean = w.iter().zip(&self.means).map(|(a, b)| a * b).sum();
        let std = w.iter().zip(&self.stds).map(|(a, b)| a * b).sum();
        discretized_gaussian(&self.grid, mean, std)
    }
}

/// `m` random Gaussians (means in [−4, 4], standard deviations in [0.6, 1.8]) on an
/// `n`-point grid of `[−10, 10]`, uniform weights, squared-distance cost.
pub fn gen_gaussian_wb(m: usize, n: usize, seed: u64) -> Result<GaussianWb> {
    if n < 2 {
        return Err(Error::invalid("gaussian barycenter needs n >= 2"));
    }
    let mut r = rng(seed);
    let grid = linspace(-10.0, 10.0, n);
    let means: Vec<f64> = (0..m).map(|_| r.gen_range(-4.0..4.0)).collect();
    let stds: Vec<f64> = (0..m).map(|_| r.gen_range(0.6..1.8)).collect();
    let marginals = means
        .iter()
        .zip(&stds)
        .map(|(&mu, &s)| discretized_gaussian(&grid, mu, s))
        .collect::<Result<Vec<_>>>()?;
    let cost = Matrix::from_fn(n, n, |i, j| (grid[i] - grid[j]).powi(2));
    let weights = vec![1.0 / m as f64; m];
    let weights = exact_uniform_weights(weights);
    let instance = WbInstance::new(weights, marginals, vec![cost])?;
    Ok(GaussianWb {
        instance,
        grid,
        means,
        stds,
    })
}

// 1/m does not always sum back to 1 exactly; push the rounding error into the last weight.
fn exact_uniform_weights(mut w: Vec<f64>) -> Vec<f64> {
    let head: f64 = w[..w.len() - 1].iter().sum();
    let last = w.len() - 1;
    w[last] = 1.0 - head;
    w
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_two_points() {
        let inst = gen_gaussian_instance(2, 0).unwrap();
        assert_eq!(inst.cost.entries().as_slice(), &[0.0, 10.0, 10.0, 0.0]);
        assert!((inst.mu.sum() - 1.0).abs() < 1e-12);
        assert!(gen_gaussian_instance(1, 0).is_err());
    }

    #[test]
    fn gaussian_is_bimodal() {
        let n = 100;
        let inst = gen_gaussian_instance(n, 0).unwrap();
        let grid = linspace(0.0, 10.0, n);
        let mu = inst.mu.as_slice();
        // local maxima of μ
        let peaks: Vec<f64> = (1..n - 1)
            .filter(|&i| mu[i] > mu[i - 1] && mu[i] >= mu[i + 1])
            .map(|i| grid[i])
            .collect();
        assert_eq!(peaks.len(), 2);
        assert!((peaks[0] - 3.0).abs() < 0.15 && (peaks[1] - 7.0).abs() < 0.15);
        for k in [2, 3, 17, 100] {
            let inst = gen_gaussian_instance(k, 0).unwrap();
            assert!((inst.mu.sum() - 1.0).abs() < 1e-12);
            assert!((inst.nu.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn random_is_deterministic_and_in_range() {
        let a = gen_random_instance(100, 11).unwrap();
        let b = gen_random_instance(100, 11).unwrap();
        assert_eq!(a, b);
        let c = gen_random_instance(100, 12).unwrap();
        assert_ne!(a, c);
        let cost = a.cost.entries();
        assert!(cost.min() >= 0.0 && cost.max() <= 1.0);
        let norm = a.cost.normalized();
        for i in 0..100 {
            let row_min = norm.entries().row(i).iter().copied().fold(f64::INFINITY, f64::min);
            let col_min = (0..100).map(|k| norm.get(k, i)).fold(f64::INFINITY, f64::min);
            assert_eq!(row_min, 0.0);
            assert_eq!(col_min, 0.0);
        }
    }

    #[test]
    fn corner_two_pixels() {
        let inst = gen_corner_to_dense(2, PixelMetric::Euclidean).unwrap();
        assert_eq!(inst.nu.as_slice(), &[0.25; 4]);
        assert!((inst.cost.get(0, 3) - 2f64.sqrt()).abs() < 1e-15);
        let sq = gen_corner_to_dense(2, PixelMetric::SquaredEuclidean).unwrap();
        assert_eq!(sq.cost.get(0, 3), 2.0);
    }

    #[test]
    fn corner_profile_mass() {
        // Σ_{s<10} (s+1)(10−s)/10 = 22 in total, 15 of which in the 5x5 top-left quadrant.
        let inst = gen_corner_to_dense(10, PixelMetric::Euclidean).unwrap();
        let mu = inst.mu.as_slice();
        let quadrant: f64 = (0..100).filter(|k| k / 10 < 5 && k % 10 < 5).map(|k| mu[k]).sum();
        assert!((quadrant - 15.0 / 22.0).abs() < 1e-12);
        let triangle: f64 = (0..100).filter(|k| k / 10 + k % 10 < 10).map(|k| mu[k]).sum();
        assert!((triangle - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_wb_weights_and_grid() {
        let g = gen_gaussian_wb(10, 100, 5).unwrap();
        assert_eq!(g.instance.m(), 10);
        assert_eq!(g.instance.weights.iter().sum::<f64>(), 1.0);
        assert_eq!(g.grid[0], -10.0);
        assert_eq!(g.grid[99], 10.0);
        let bary = g.closed_form_barycenter().unwrap();
        assert!((bary.sum() - 1.0).abs() < 1e-12);
    }
}
