//! Seeded samplers for the 2-D toy targets and the Gaussian prior.
//!
//! Normal variates come from `rand_distr::StandardNormal` (ziggurat) fed by the
//! ChaCha8 stream in [`RngState`], so every sampler is a pure function of the seed.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{DriftError, Result};
use crate::geometry::PointCloud;
use crate::rng::RngState;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ToyTarget {
    /// Isotropic Gaussians with centers equally spaced on a circle.
    EightGaussians { radius: f64, std: f64 },
    /// Uniform on the black cells of a `cells × cells` board over `[−half_width, half_width]²`.
    Checkerboard { half_width: f64, cells: usize },
    TwoMoons { scale: f64, noise: f64 },
    /// Archimedean-style spiral, radius increasing with angle.
    Spiral { turns: f64, max_radius: f64, noise: f64 },
}

impl ToyTarget {
    pub fn eight_gaussians() -> Self {
        ToyTarget::EightGaussians { radius: 2.0, std: 0.2 }
    }

    pub fn checkerboard() -> Self {
        ToyTarget::Checkerboard { half_width: 2.0, cells: 4 }
    }

    pub fn two_moons() -> Self {
        ToyTarget::TwoMoons { scale: 2.0, noise: 0.1 }
    }

    pub fn spiral() -> Self {
        ToyTarget::Spiral { turns: 1.5, max_radius: 2.0, noise: 0.05 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ToyTarget::EightGaussians { .. } => "eight-gaussians",
            ToyTarget::Checkerboard { .. } => "checkerboard",
            ToyTarget::TwoMoons { .. } => "two-moons",
            ToyTarget::Spiral { .. } => "spiral",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "eight-gaussians" | "8gaussians" | "8-gaussians" => Some(Self::eight_gaussians()),
            "checkerboard" => Some(Self::checkerboard()),
            "two-moons" | "moons" => Some(Self::two_moons()),
            "spiral" => Some(Self::spiral()),
            _ => None,
        }
    }

    /// Mode centers, where the target has isolated modes.
    pub fn centers(&self) -> Option<Vec<[f64; 2]>> {
        match *self {
            ToyTarget::EightGaussians { radius, .. } => Some(
                (0..8)
                    .map(|k| {
                        let a = 2.0 * PI * k as f64 / 8.0;
                        [radius * a.cos(), radius * a.sin()]
                    })
                    .collect(),
            ),
            _ => None,
        }
    }

    /// Coverage radius used with [`ToyTarget::centers`].
    pub fn coverage_radius(&self) -> Option<f64> {
        match *self {
            ToyTarget::EightGaussians { std, .. } => Some(3.0 * std),
            _ => None,
        }
    }

    fn draw(&self, rng: &mut RngState) -> [f64; 2] {
        match *self {
            ToyTarget::EightGaussians { radius, std } => {
                let k = rng.random_range(0..8usize);
                let a = 2.0 * PI * k as f64 / 8.0;
                let (nx, ny): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
                [radius * a.cos() + std * nx, radius * a.sin() + std * ny]
            }
            ToyTarget::Checkerboard { half_width, cells } => {
                let black = black_cells(cells);
                let (cx, cy) = black[rng.random_range(0..black.len())];
                let side = 2.0 * half_width / cells as f64;
                let u: f64 = rng.random();
                let v: f64 = rng.random();
                [
                    -half_width + (cx as f64 + u) * side,
                    -half_width + (cy as f64 + v) * side,
                ]
            }
            ToyTarget::TwoMoons { scale, noise } => {
                let t = PI * rng.random::<f64>();
                let upper = rng.random::<bool>();
                let (x, y) = if upper {
                    (t.cos(), t.sin())
                } else {
                    (1.0 - t.cos(), 0.5 - t.sin())
                };
                let (nx, ny): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
                [scale * (x - 0.5) + noise * nx, scale * (y - 0.25) + noise * ny]
            }
            ToyTarget::Spiral { turns, max_radius, noise } => {
                let t: f64 = rng.random();
                let [x, y] = spiral_point(t, turns, max_radius);
                let (nx, ny): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
                [x + noise * nx, y + noise * ny]
            }
        }
    }
}

/// Black cells `(column, row)` of the board: those with an even index sum.
pub fn black_cells(cells: usize) -> Vec<(usize, usize)> {
    (0..cells)
        .flat_map(|i| (0..cells).map(move |j| (i, j)))
        .filter(|(i, j)| (i + j) % 2 == 0)
        .collect()
}

/// Noise-free spiral at parameter `t ∈ [0,1]`: angle `2π·turns·t`, radius growing linearly
/// from `max_radius/8` to `max_radius`.
pub fn spiral_point(t: f64, turns: f64, max_radius: f64) -> [f64; 2] {
    let angle = 2.0 * PI * turns * t;
    let r = max_radius * (0.125 + 0.875 * t);
    [r * angle.cos(), r * angle.sin()]
}

pub fn sample<T: Scalar>(target: &ToyTarget, n: usize, rng: &mut RngState) -> Result<PointCloud<T>> {
    if n == 0 {
        return Err(DriftError::InvalidInput("sample size must be positive".into()));
    }
    let mut pts = Array2::zeros((n, 2));
    for mut row in pts.rows_mut() {
        let [x, y] = target.draw(rng);
        row[0] = T::lit(x);
        row[1] = T::lit(y);
    }
    PointCloud::new(pts)
}

/// Standard normal prior in `R^d`.
pub fn sample_prior<T: Scalar>(n: usize, d: usize, rng: &mut RngState) -> Result<PointCloud<T>> {
    if n == 0 || d == 0 {
        return Err(DriftError::InvalidInput("prior sample needs n, d >= 1".into()));
    }
    let pts = Array2::from_shape_simple_fn((n, d), || T::lit(rng.sample::<f64, _>(StandardNormal)));
    PointCloud::new(pts)
}

/// Default source/target pair for particle-flow studies: a standard 2-D Gaussian
/// source (std 0.5) and a two-mode target centered at `(3, ±1.5)` with std 0.3.
/// Target points alternate between modes.
pub fn flow_instance<T: Scalar>(n: usize, rng: &mut RngState) -> Result<(PointCloud<T>, PointCloud<T>)> {
    if n == 0 {
        return Err(DriftError::InvalidInput("flow instance needs n >= 1".into()));
    }
    let mut src = Array2::zeros((n, 2));
    for mut row in src.rows_mut() {
        for v in row.iter_mut() {
            *v = T::lit(0.5 * rng.sample::<f64, _>(StandardNormal));
        }
    }
    let mut tgt = Array2::zeros((n, 2));
    for (i, mut row) in tgt.rows_mut().into_iter().enumerate() {
        let cy = if i % 2 == 0 { 1.5 } else { -1.5 };
        row[0] = T::lit(3.0 + 0.3 * rng.sample::<f64, _>(StandardNormal));
        row[1] = T::lit(cy + 0.3 * rng.sample::<f64, _>(StandardNormal));
    }
    Ok((PointCloud::new(src)?, PointCloud::new(tgt)?))
}
