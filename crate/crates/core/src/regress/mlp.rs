//! Two-hidden-layer perceptron regressor with ReLU units, trained by Adam on
//! mean squared error with early stopping.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use super::EstimatorSpec;
use crate::error::{Error, Result};
use crate::features::{ColumnScaler, FeatureMatrix};
use crate::geo::{seeded_rng, SeededRng};

#[derive(Debug, Clone, PartialEq)]
pub struct MlpOptions {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    pub validation_fraction: f64,
}

impl Default for MlpOptions {
    fn default() -> Self {
        Self { learning_rate: 1e-3, batch_size: 32, patience: 20, max_epochs: 500, validation_fraction: 0.1 }
    }
}

impl MlpOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Config("MLP learning rate, batch size, patience and epochs must be positive".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config("MLP validation fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Network `in -> h1 -> h2 -> 1` with all parameters in one flat vector:
/// `W1 (h1×in), b1, W2 (h2×h1), b2, w3 (h2), b3`, matrices row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNet {
    n_in: usize,
    h1: usize,
    h2: usize,
    params: Vec<f64>,
}

struct Offsets {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
}

impl MlpNet {
    /// He-normal weights and zero biases.
    pub fn new_random(n_in: usize, hidden: (usize, usize), rng: &mut SeededRng) -> Self {
        let (h1, h2) = hidden;
        let mut net = Self { n_in, h1, h2, params: vec![0.0; Self::param_count(n_in, hidden)] };
        let o = net.offsets();
        let mut init = |range: std::ops::Range<usize>, fan_in: usize| {
            let scale = (2.0 / fan_in.max(1) as f64).sqrt();
            for p in &mut net.params[range] {
                *p = scale * rng.sample::<f64, _>(StandardNormal);
            }
        };
        init(o.w1..o.b1, n_in);
        init(o.w2..o.b2, h1);
        // The output layer starts at zero so the untrained net predicts the mean.
        net
    }

    pub fn param_count(n_in: usize, (h1, h2): (usize, usize)) -> usize {
        h1 * n_in + h1 + h2 * h1 + h2 + h2 + 1
    }

    fn offsets(&self) -> Offsets {
        let w1 = 0;
        let b1 = w1 + self.h1 * self.n_in;
        let w2 = b1 + self.h1;
        let b2 = w2 + self.h2 * self.h1;
        let w3 = b2 + self.h2;
        let b3 = w3 + self.h2;
        Offsets { w1, b1, w2, b2, w3, b3 }
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_inputs(&self) -> usize {
        self.n_in
    }

    fn forward_into(&self, x: &[f64], z1: &mut [f64], z2: &mut [f64]) -> f64 {
        let o = self.offsets();
        let p = &self.params;
        for (j, z) in z1.iter_mut().enumerate() {
            let w = &p[o.w1 + j * self.n_in..o.w1 + (j + 1) * self.n_in];
            *z = p[o.b1 + j] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
        for (j, z) in z2.iter_mut().enumerate() {
            let w = &p[o.w2 + j * self.h1..o.w2 + (j + 1) * self.h1];
            *z = p[o.b2 + j] + w.iter().zip(z1.iter()).map(|(a, &b)| a * b.max(0.0)).sum::<f64>();
        }
        p[o.b3] + p[o.w3..o.b3].iter().zip(z2.iter()).map(|(a, &b)| a * b.max(0.0)).sum::<f64>()
    }

    pub fn forward(&self, x: &[f64]) -> f64 {
        let mut z1 = vec![0.0; self.h1];
        let mut z2 = vec![0.0; self.h2];
        self.forward_into(x, &mut z1, &mut z2)
    }

    /// Mean squared error over the given rows.
    pub fn loss(&self, xs: &[&[f64]], ys: &[f64]) -> f64 {
        xs.iter().zip(ys).map(|(x, y)| (self.forward(x) - y).powi(2)).sum::<f64>() / ys.len() as f64
    }

    /// Mean squared error and its gradient with respect to `params()`.
    pub fn loss_and_gradient(&self, xs: &[&[f64]], ys: &[f64]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.params.len()];
        let loss = self.accumulate_gradient(xs, ys, &mut grad);
        (loss, grad)
    }

    fn accumulate_gradient(&self, xs: &[&[f64]], ys: &[f64], grad: &mut [f64]) -> f64 {
        let o = self.offsets();
        let p = &self.params;
        let b = ys.len() as f64;
        let mut z1 = vec![0.0; self.h1];
        let mut z2 = vec![0.0; self.h2];
        let mut d1 = vec![0.0; self.h1];
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            let out = self.forward_into(x, &mut z1, &mut z2);
            let err = out - y;
            loss += err * err;
            let d = 2.0 * err / b;
            grad[o.b3] += d;
            d1.iter_mut().for_each(|v| *v = 0.0);
            for j in 0..self.h2 {
                if z2[j] <= 0.0 {
                    continue;
                }
                grad[o.w3 + j] += d * z2[j];
                let d2 = d * p[o.w3 + j];
                grad[o.b2 + j] += d2;
                let row = o.w2 + j * self.h1;
                for i in 0..self.h1 {
                    if z1[i] > 0.0 {
                        grad[row + i] += d2 * z1[i];
                        d1[i] += d2 * p[row + i];
                    }
                }
            }
            for i in 0..self.h1 {
                if d1[i] == 0.0 {
                    continue;
                }
                grad[o.b1 + i] += d1[i];
                let row = o.w1 + i * self.n_in;
                for (g, xv) in grad[row..row + self.n_in].iter_mut().zip(x.iter()) {
                    *g += d1[i] * xv;
                }
            }
        }
        loss / b
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub net: MlpNet,
    scaler: ColumnScaler,
    y_mean: f64,
    y_scale: f64,
    /// Epochs actually run before early stopping.
    pub epochs: usize,
    /// Validation RMSE of the kept weights, in response units.
    pub best_val_rmse: f64,
}

impl MlpModel {
    pub fn predict(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        if x.k() != self.net.n_inputs() {
            return Err(Error::invalid(format!("network has {} inputs, data has {}", self.net.n_inputs(), x.k())));
        }
        let xs = self.scaler.apply(x);
        Ok((0..xs.n()).map(|i| self.y_mean + self.y_scale * self.net.forward(xs.row(i))).collect())
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Trains on standardized inputs and response. A shuffled
/// `validation_fraction` of the rows is held out for early stopping and the
/// best weights seen are kept.
pub fn fit_mlp(x: &FeatureMatrix, y: &[f64], spec: &EstimatorSpec) -> Result<MlpModel> {
    let opts = &spec.mlp;
    opts.validate()?;
    let n = x.n();
    if y.len() != n {
        return Err(Error::invalid(format!("{} responses for {n} rows", y.len())));
    }
    if n < 10 {
        return Err(Error::invalid(format!("MLP needs at least 10 rows, got {n}")));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite response"));
    }
    let scaler = ColumnScaler::fit(x);
    let xs = scaler.apply(x);
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let y_var = y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n as f64;
    let y_scale = if y_var > 0.0 { y_var.sqrt() } else { 1.0 };
    let ys: Vec<f64> = y.iter().map(|v| (v - y_mean) / y_scale).collect();

    let mut rng = seeded_rng(spec.seed);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let n_val = ((n as f64 * opts.validation_fraction).round() as usize).clamp(1, n - 1);
    let (val, train) = idx.split_at(n_val);
    let mut train = train.to_vec();
    let val_x: Vec<&[f64]> = val.iter().map(|&i| xs.row(i)).collect();
    let val_y: Vec<f64> = val.iter().map(|&i| ys[i]).collect();

    let mut net = MlpNet::new_random(x.k(), spec.mlp_hidden, &mut rng);
    let mut adam = Adam { m: vec![0.0; net.params.len()], v: vec![0.0; net.params.len()], t: 0 };
    let mut grad = vec![0.0; net.params.len()];
    let mut best = (net.loss(&val_x, &val_y), net.params.clone());
    let mut stale = 0;
    let mut epochs = 0;
    for epoch in 0..opts.max_epochs {
        epochs = epoch + 1;
        train.shuffle(&mut rng);
        for (b, batch) in train.chunks(opts.batch_size).enumerate() {
            let bx: Vec<&[f64]> = batch.iter().map(|&i| xs.row(i)).collect();
            let by: Vec<f64> = batch.iter().map(|&i| ys[i]).collect();
            let loss = net.accumulate_gradient(&bx, &by, &mut grad);
            if !loss.is_finite() {
                return Err(Error::numeric(format!("MLP loss became {loss} at epoch {epochs}, batch {b}")));
            }
            adam.step(&mut net.params, &grad, opts.learning_rate);
        }
        let val_loss = net.loss(&val_x, &val_y);
        if !val_loss.is_finite() {
            return Err(Error::numeric(format!("MLP validation loss became {val_loss} at epoch {epochs}")));
        }
        if val_loss < best.0 {
            best = (val_loss, net.params.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= opts.patience {
                break;
            }
        }
    }
    net.params = best.1;
    Ok(MlpModel { net, scaler, y_mean, y_scale, epochs, best_val_rmse: best.0.sqrt() * y_scale })
}
