#![allow(dead_code)]

use drift_core::nnet::drifting_loss_and_grad;
use drift_core::{Activation, DriftConfig64, Mlp, PointCloud, RngState};
use ndarray::Array2;
use rand::Rng;

pub fn uniform_cloud(n: usize, d: usize, rng: &mut RngState) -> PointCloud<f64> {
    PointCloud::new(Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0))).unwrap()
}

pub fn shuffle(n: usize, rng: &mut RngState) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        p.swap(i, rng.random_range(0..=i));
    }
    p
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Brute-force assignment minimum by Heap's algorithm, summing costs in row order.
pub fn brute_force_assignment(cost: &Array2<f64>) -> f64 {
    let n = cost.nrows();
    let mut perm: Vec<usize> = (0..n).collect();
    let eval = |p: &[usize]| p.iter().enumerate().fold(0.0, |acc, (i, &j)| acc + cost[[i, j]]);
    let mut best = eval(&perm);
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = f64::min(best, eval(&perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

/// Outcome of a finite-difference sweep over one layer.
#[derive(Debug)]
pub struct LayerCheck {
    pub layer: usize,
    pub checked: usize,
    pub max_rel_err: f64,
}

fn hidden_pattern(net: &Mlp<f64>, e: &Array2<f64>) -> Vec<bool> {
    let mut a = e.clone();
    let mut signs = Vec::new();
    let layers = net.layers();
    for layer in &layers[..layers.len() - 1] {
        let z = a.dot(&layer.weight.t()) + &layer.bias;
        signs.extend(z.iter().map(|&v| v > 0.0));
        a = z.mapv(|v| match net.activation() {
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
        });
    }
    signs
}

fn frozen_loss(net: &Mlp<f64>, e: &PointCloud<f64>, target: &Array2<f64>) -> f64 {
    let x = net.forward(e).unwrap();
    let n = x.n() as f64;
    x.points().iter().zip(target.iter()).map(|(a, b)| 0.5 * (a - b) * (a - b)).sum::<f64>() / n
}

/// Central differences (step `h`) of the drifting loss with the velocity field held fixed,
/// compared against manual backprop on at least `per_layer` coordinates of every layer.
/// Coordinates whose perturbation flips a ReLU, or whose gradient is below `1e-4`, are skipped.
pub fn finite_difference_check(
    net: &Mlp<f64>,
    e: &PointCloud<f64>,
    y: &PointCloud<f64>,
    cfg: &DriftConfig64,
    per_layer: usize,
    h: f64,
    rng: &mut RngState,
) -> Vec<LayerCheck> {
    let (_, grads, v) = drifting_loss_and_grad(net, e, y, cfg).unwrap();
    let target = &net.forward(e).unwrap().points() + &v;
    let base_pattern = hidden_pattern(net, &e.points().to_owned());
    let mut out = Vec::new();
    for k in 0..net.layers().len() {
        let (rows, cols) = net.layers()[k].weight.dim();
        let total = rows * cols + rows;
        let mut order: Vec<usize> = shuffle(total, rng);
        let mut check = LayerCheck {
            layer: k,
            checked: 0,
            max_rel_err: 0.0,
        };
        for idx in order.drain(..) {
            if check.checked == per_layer {
                break;
            }
            let analytic = if idx < rows * cols {
                grads.layers[k].weight[[idx / cols, idx % cols]]
            } else {
                grads.layers[k].bias[idx - rows * cols]
            };
            if analytic.abs() < 1e-4 {
                continue;
            }
            let eval = |delta: f64| {
                let mut p = net.clone();
                let layer = &mut p.layers_mut()[k];
                if idx < rows * cols {
                    layer.weight[[idx / cols, idx % cols]] += delta;
                } else {
                    layer.bias[idx - rows * cols] += delta;
                }
                let pattern = hidden_pattern(&p, &e.points().to_owned());
                (frozen_loss(&p, e, &target), pattern == base_pattern)
            };
            let (lp, same_p) = eval(h);
            let (lm, same_m) = eval(-h);
            if net.activation() == Activation::Relu && !(same_p && same_m) {
                continue;
            }
            let fd = (lp - lm) / (2.0 * h);
            let rel = (fd - analytic).abs() / fd.abs().max(analytic.abs());
            check.max_rel_err = check.max_rel_err.max(rel);
            check.checked += 1;
        }
        out.push(check);
    }
    out
}
