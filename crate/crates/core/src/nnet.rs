//! Fully connected generator with hand-written backpropagation, Adam, and the
//! stop-gradient drifting loss.

use std::io::{self, BufRead, Write};
use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::{sample, sample_prior, ToyTarget};
use crate::drift::{drift_velocities, DriftConfig, Negatives};
use crate::error::{DriftError, Result};
use crate::geometry::PointCloud;
use crate::metrics::exact_w2sq;
use crate::rng::RngState;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Relu => z.max(T::zero()),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative<T: Scalar>(self, z: T, a: T) -> T {
        match self {
            Activation::Relu => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => T::one() - a * a,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }
}

/// Affine layer `z = W a + b` with `W` shaped `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

/// Generator parameters: hidden layers use `activation`, the last layer is affine.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    layers: Vec<Layer<T>>,
    activation: Activation,
}

/// Forward pass cache: inputs to each layer and each pre-activation.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    inputs: Vec<Array2<T>>,
    pre: Vec<Array2<T>>,
}

/// Gradients with the same layout as [`Mlp`] layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Scalar> Mlp<T> {
    /// Layer widths `[d_in, h_1, …, d_out]`, initialized `U(−1/√fan_in, 1/√fan_in)`.
    pub fn new(widths: &[usize], activation: Activation, rng: &mut RngState) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(DriftError::InvalidInput(format!(
                "need at least input and output widths, all positive; got {widths:?}"
            )));
        }
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let weight = Array2::from_shape_simple_fn((fan_out, fan_in), || {
                    T::lit(rng.random_range(-bound..bound))
                });
                let bias = Array1::from_shape_simple_fn(fan_out, || T::lit(rng.random_range(-bound..bound)));
                Layer { weight, bias }
            })
            .collect();
        Ok(Self { layers, activation })
    }

    pub fn from_layers(layers: Vec<Layer<T>>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(DriftError::InvalidInput("network needs at least one layer".into()));
        }
        for (k, l) in layers.iter().enumerate() {
            if l.bias.len() != l.weight.nrows() {
                return Err(DriftError::DimensionMismatch {
                    context: "bias length vs weight rows",
                    expected: l.weight.nrows(),
                    got: l.bias.len(),
                });
            }
            if k > 0 && layers[k - 1].weight.nrows() != l.weight.ncols() {
                return Err(DriftError::DimensionMismatch {
                    context: "layer shapes do not chain",
                    expected: layers[k - 1].weight.nrows(),
                    got: l.weight.ncols(),
                });
            }
            if l.weight.iter().chain(l.bias.iter()).any(|v| !v.is_finite()) {
                return Err(DriftError::NonFinite("network parameters"));
            }
        }
        Ok(Self { layers, activation })
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn d_in(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn d_out(&self) -> usize {
        self.layers.last().map(|l| l.weight.nrows()).unwrap_or(0)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    fn check_input(&self, e: ArrayView2<'_, T>) -> Result<()> {
        if e.ncols() != self.d_in() {
            return Err(DriftError::DimensionMismatch {
                context: "network input dimension",
                expected: self.d_in(),
                got: e.ncols(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, e: &PointCloud<T>) -> Result<PointCloud<T>> {
        let (out, _) = self.forward_cached(e.points())?;
        PointCloud::new(out)
    }

    /// Row-batched forward pass keeping what backpropagation needs.
    pub fn forward_cached(&self, e: ArrayView2<'_, T>) -> Result<(Array2<T>, ForwardCache<T>)> {
        self.check_input(e)?;
        let mut a = e.to_owned();
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
        };
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let z = a.dot(&layer.weight.t()) + &layer.bias;
            cache.inputs.push(a);
            a = if k < last {
                z.mapv(|v| self.activation.apply(v))
            } else {
                z.clone()
            };
            cache.pre.push(z);
        }
        Ok((a, cache))
    }

    /// Gradients of a loss given `∂L/∂output` for the cached batch.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_out: ArrayView2<'_, T>) -> Gradients<T> {
        let last = self.layers.len() - 1;
        let mut delta = grad_out.to_owned();
        let mut grads = Vec::with_capacity(self.layers.len());
        for k in (0..self.layers.len()).rev() {
            if k < last {
                let act = self.activation;
                Zip::from(&mut delta)
                    .and(&cache.pre[k])
                    .and(&cache.inputs[k + 1])
                    .for_each(|d, &z, &a| *d *= act.derivative(z, a));
            }
            let weight = delta.t().dot(&cache.inputs[k]);
            let bias = delta.sum_axis(Axis(0));
            let next = delta.dot(&self.layers[k].weight);
            grads.push(Layer { weight, bias });
            delta = next;
        }
        grads.reverse();
        Gradients { layers: grads }
    }

    /// Writes a textual checkpoint: layer shapes followed by row-major values.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "# drift-core mlp checkpoint v1")?;
        writeln!(w, "activation {}", self.activation.name())?;
        writeln!(w, "layers {}", self.layers.len())?;
        for (k, l) in self.layers.iter().enumerate() {
            writeln!(w, "layer {k} weight {} {}", l.weight.nrows(), l.weight.ncols())?;
            for row in l.weight.rows() {
                let vals: Vec<String> = row.iter().map(|v| v.as_f64().to_string()).collect();
                writeln!(w, "{}", vals.join(" "))?;
            }
            writeln!(w, "layer {k} bias {}", l.bias.len())?;
            let vals: Vec<String> = l.bias.iter().map(|v| v.as_f64().to_string()).collect();
            writeln!(w, "{}", vals.join(" "))?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l))
            .filter(|(_, l)| l.as_ref().map(|s| !s.starts_with('#') && !s.trim().is_empty()).unwrap_or(true));
        let mut next = |what: &str| -> Result<(usize, String)> {
            match lines.next() {
                Some((ln, Ok(s))) => Ok((ln, s)),
                Some((ln, Err(e))) => Err(DriftError::Parse { line: ln, message: e.to_string() }),
                None => Err(DriftError::Parse { line: 0, message: format!("unexpected end of file, expected {what}") }),
            }
        };
        let bad = |line: usize, message: String| DriftError::Parse { line, message };
        let parse_vals = |line: usize, s: &str, expected: usize| -> Result<Vec<T>> {
            let vals: Vec<T> = s
                .split_whitespace()
                .map(|t| t.parse::<f64>().map(T::lit).map_err(|e| bad(line, e.to_string())))
                .collect::<Result<_>>()?;
            if vals.len() != expected {
                return Err(bad(line, format!("expected {expected} values, got {}", vals.len())));
            }
            Ok(vals)
        };

        let (ln, s) = next("activation")?;
        let activation = match s.split_whitespace().collect::<Vec<_>>().as_slice() {
            ["activation", "relu"] => Activation::Relu,
            ["activation", "tanh"] => Activation::Tanh,
            _ => return Err(bad(ln, format!("bad activation line `{s}`"))),
        };
        let (ln, s) = next("layer count")?;
        let count: usize = s
            .strip_prefix("layers ")
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| bad(ln, format!("bad layer count line `{s}`")))?;
        let mut layers = Vec::with_capacity(count);
        for k in 0..count {
            let (ln, s) = next("weight header")?;
            let parts: Vec<&str> = s.split_whitespace().collect();
            let (rows, cols) = match parts.as_slice() {
                ["layer", idx, "weight", r, c] if idx.parse::<usize>().ok() == Some(k) => (
                    r.parse::<usize>().map_err(|e| bad(ln, e.to_string()))?,
                    c.parse::<usize>().map_err(|e| bad(ln, e.to_string()))?,
                ),
                _ => return Err(bad(ln, format!("bad weight header `{s}`"))),
            };
            let mut flat = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let (ln, s) = next("weight row")?;
                flat.extend(parse_vals(ln, &s, cols)?);
            }
            let weight = Array2::from_shape_vec((rows, cols), flat).map_err(|e| bad(ln, e.to_string()))?;
            let (ln, s) = next("bias header")?;
            let parts: Vec<&str> = s.split_whitespace().collect();
            let len = match parts.as_slice() {
                ["layer", idx, "bias", n] if idx.parse::<usize>().ok() == Some(k) => {
                    n.parse::<usize>().map_err(|e| bad(ln, e.to_string()))?
                }
                _ => return Err(bad(ln, format!("bad bias header `{s}`"))),
            };
            let (ln, s) = next("bias values")?;
            let bias = Array1::from_vec(parse_vals(ln, &s, len)?);
            layers.push(Layer { weight, bias });
        }
        Self::from_layers(layers, activation)
    }
}

/// Loss and gradients for a fixed (detached) velocity field: the targets `x + V` are
/// constants, so `∂L/∂x_i = (x_i − (x_i + V_i))/n`.
pub fn loss_and_grad_with_velocity<T: Scalar>(
    params: &Mlp<T>,
    e: &PointCloud<T>,
    velocity: ArrayView2<'_, T>,
) -> Result<(T, Gradients<T>)> {
    let (x, cache) = params.forward_cached(e.points())?;
    if velocity.dim() != x.dim() {
        return Err(DriftError::DimensionMismatch {
            context: "velocity shape vs generator output",
            expected: x.len(),
            got: velocity.len(),
        });
    }
    let n = T::from_usize_lossy(x.nrows());
    let target = &x + &velocity;
    let residual = &x - &target;
    let half = T::lit(0.5);
    let loss = residual.iter().map(|&r| half * r * r).sum::<T>() / n;
    let grad_out = residual / n;
    Ok((loss, params.backward(&cache, grad_out.view())))
}

/// Stop-gradient drifting loss `(1/n) Σ ½‖x_i − sg(x_i + V_i)‖²` and its gradient.
///
/// Returns the detached velocities as well.
pub fn drifting_loss_and_grad<T: Scalar>(
    params: &Mlp<T>,
    e: &PointCloud<T>,
    y_data: &PointCloud<T>,
    cfg: &DriftConfig<T>,
) -> Result<(T, Gradients<T>, Array2<T>)> {
    if e.n() != y_data.n() {
        return Err(DriftError::DimensionMismatch {
            context: "noise batch vs data batch size",
            expected: e.n(),
            got: y_data.n(),
        });
    }
    let x = params.forward(e)?;
    let v = drift_velocities(&x, y_data, Negatives::SelfTerm, cfg)?;
    let (loss, grads) = loss_and_grad_with_velocity(params, e, v.view())?;
    Ok((loss, grads, v))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    m: Vec<Layer<T>>,
    v: Vec<Layer<T>>,
    pub step: u64,
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &Mlp<T>, lr: T) -> Self {
        let zeros: Vec<Layer<T>> = params
            .layers
            .iter()
            .map(|l| Layer {
                weight: Array2::zeros(l.weight.raw_dim()),
                bias: Array1::zeros(l.bias.len()),
            })
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            lr,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
        }
    }

    pub fn update(&mut self, params: &mut Mlp<T>, grads: &Gradients<T>) {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = T::one() - b1.powi(t);
        let c2 = T::one() - b2.powi(t);
        let (lr, eps) = (self.lr, self.eps);
        let one = T::one();
        let upd = |p: &mut T, g: T, m: &mut T, v: &mut T| {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let mh = *m / c1;
            let vh = *v / c2;
            *p -= lr * mh / (vh.sqrt() + eps);
        };
        for (((layer, g), m), v) in params
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            Zip::from(&mut layer.weight)
                .and(&g.weight)
                .and(&mut m.weight)
                .and(&mut v.weight)
                .for_each(|p, &g, m, v| upd(p, g, m, v));
            Zip::from(&mut layer.bias)
                .and(&g.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .for_each(|p, &g, m, v| upd(p, g, m, v));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrainRecord {
    pub iteration: usize,
    pub loss: f64,
    pub w2sq: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iters: usize,
    pub batch: usize,
    pub lr: f64,
    pub eval_every: usize,
    /// Size of the held-out evaluation batch.
    pub eval_n: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iters: 5_000,
            batch: 500,
            lr: 1e-3,
            eval_every: 100,
            eval_n: 500,
            seed: 0,
        }
    }
}

/// Stream tags derived from the run seed.
pub mod streams {
    pub const INIT: u64 = 0;
    pub const NOISE: u64 = 1;
    pub const DATA: u64 = 2;
    pub const EVAL_NOISE: u64 = 3;
    pub const EVAL_TARGET: u64 = 4;
    pub const FINAL_NOISE: u64 = 5;
    pub const FINAL_TARGET: u64 = 6;
}

/// Fixed evaluation batch `(noise, target)` for a run seed.
pub fn eval_batch<T: Scalar>(target: &ToyTarget, d_in: usize, n: usize, seed: u64) -> Result<(PointCloud<T>, PointCloud<T>)> {
    let root = RngState::new(seed);
    let noise = sample_prior(n, d_in, &mut root.split(streams::EVAL_NOISE))?;
    let data = sample(target, n, &mut root.split(streams::EVAL_TARGET))?;
    Ok((noise, data))
}

/// Generator samples and a matching target batch drawn from the run seed's final streams.
pub fn final_samples<T: Scalar>(
    params: &Mlp<T>,
    target: &ToyTarget,
    n: usize,
    seed: u64,
) -> Result<(PointCloud<T>, PointCloud<T>)> {
    let root = RngState::new(seed);
    let noise = sample_prior(n, params.d_in(), &mut root.split(streams::FINAL_NOISE))?;
    let data = sample(target, n, &mut root.split(streams::FINAL_TARGET))?;
    Ok((params.forward(&noise)?, data))
}

/// Trains `params` with fresh noise and target batches each iteration and Adam updates.
///
/// W2² against a fixed held-out batch is recorded every `eval_every` iterations and at
/// the last iteration.
pub fn train<T: Scalar>(
    mut params: Mlp<T>,
    target: &ToyTarget,
    cfg: &DriftConfig<T>,
    tc: &TrainConfig,
) -> Result<(Mlp<T>, Vec<TrainRecord>)> {
    cfg.validate()?;
    if tc.batch == 0 || tc.eval_every == 0 || tc.eval_n == 0 {
        return Err(DriftError::InvalidInput("batch, eval_every and eval_n must be positive".into()));
    }
    let root = RngState::new(tc.seed);
    let mut noise_rng = root.split(streams::NOISE);
    let mut data_rng = root.split(streams::DATA);
    let (eval_noise, eval_target) = eval_batch::<T>(target, params.d_in(), tc.eval_n, tc.seed)?;
    let mut adam = AdamState::new(&params, T::lit(tc.lr));
    let mut records = Vec::new();
    let start = Instant::now();
    for it in 1..=tc.iters {
        let e = sample_prior(tc.batch, params.d_in(), &mut noise_rng)?;
        let y = sample(target, tc.batch, &mut data_rng)?;
        let (loss, grads, _) = drifting_loss_and_grad(&params, &e, &y, cfg)?;
        if loss.is_nan() {
            return Err(DriftError::NanLoss {
                iteration: it,
                config: format!("scheme={} tau={} target={}", cfg.scheme, cfg.tau, target.name()),
            });
        }
        adam.update(&mut params, &grads);
        if it % tc.eval_every == 0 || it == tc.iters {
            let gen = params.forward(&eval_noise)?;
            let w2 = exact_w2sq(&gen, &eval_target)?.total_cost;
            records.push(TrainRecord {
                iteration: it,
                loss: loss.as_f64(),
                w2sq: w2.as_f64(),
                seconds: start.elapsed().as_secs_f64(),
            });
        }
    }
    Ok((params, records))
}

pub fn write_records_csv<W: Write>(records: &[TrainRecord], mut w: W) -> io::Result<()> {
    writeln!(w, "# w2sq = (1/N) min over permutations of sum ||x_i - y_sigma(i)||^2 on the held-out batch; seconds = wall clock")?;
    writeln!(w, "iteration,loss,w2sq,seconds")?;
    for r in records {
        writeln!(w, "{},{},{},{}", r.iteration, r.loss, r.w2sq, r.seconds)?;
    }
    Ok(())
}
