//! Importance weighting network: a one-hidden-layer model of the source
//! weights trained to shrink the kernel MMD to the target sample.

use nalgebra::{DMatrix, DVector};

use super::kernel::{check_bandwidth, median_distance, mmd_from_kernels, rbf_matrix};
use super::{weighted_fit, AdaptedModel, DomainPair, Method, MethodParams};
use crate::error::{Error, Result};
use crate::linear::FitConfig;
use crate::rng::{rng_from_seed, standard_normal};

fn softplus(a: f64) -> f64 {
    if a > 30.0 {
        a
    } else {
        a.exp().ln_1p()
    }
}

fn sigmoid(a: f64) -> f64 {
    1.0 / (1.0 + (-a).exp())
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    fn new(n: usize, lr: f64) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        for k in 0..params.len() {
            self.m[k] = B1 * self.m[k] + (1.0 - B1) * grad[k];
            self.v[k] = B2 * self.v[k] + (1.0 - B2) * grad[k] * grad[k];
            params[k] -= self.lr * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + 1e-8);
        }
    }
}

/// Network parameters flattened as `[W (h x d, row-major), b (h), v (h), c]`.
struct Net {
    h: usize,
    d: usize,
    theta: Vec<f64>,
}

impl Net {
    fn new(h: usize, d: usize, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let scale = 1.0 / (d as f64).sqrt();
        let mut theta = vec![0.0; h * d + 2 * h + 1];
        for p in theta.iter_mut().take(h * d) {
            *p = scale * standard_normal(&mut rng);
        }
        // zero output layer: constant output, uniform weights
        Net { h, d, theta }
    }

    fn split(&self) -> (DMatrix<f64>, DVector<f64>, DVector<f64>, f64) {
        let (h, d) = (self.h, self.d);
        let w = DMatrix::from_row_slice(h, d, &self.theta[..h * d]);
        let b = DVector::from_column_slice(&self.theta[h * d..h * d + h]);
        let v = DVector::from_column_slice(&self.theta[h * d + h..h * d + 2 * h]);
        (w, b, v, self.theta[h * d + 2 * h])
    }

    /// Hidden activations, pre-softplus outputs and raw outputs.
    fn forward(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
        let (w, b, v, c) = self.split();
        let mut hid = x * w.transpose();
        for mut row in hid.row_iter_mut() {
            row += b.transpose();
        }
        hid.apply(|z| *z = z.tanh());
        let a = &hid * v + DVector::from_element(x.nrows(), c);
        let u = a.map(softplus);
        (hid, a, u)
    }
}

fn normalized(u: &DVector<f64>) -> DVector<f64> {
    let n = u.len() as f64;
    u * (n / u.sum())
}

/// Gradient of the biased MMD² of the normalized outputs with respect to the
/// flattened network parameters.
fn mmd_gradient(net: &Net, z: &DMatrix<f64>, kss: &DMatrix<f64>, kst_rows: &DVector<f64>, nt: f64) -> Vec<f64> {
    let nsf = z.nrows() as f64;
    let (hid, a, u) = net.forward(z);
    let s = u.sum();
    let w = &u * (nsf / s);
    let g = (kss * &w) * (2.0 / (nsf * nsf)) - kst_rows * (2.0 / (nsf * nt));
    let gu = g.dot(&u) / s;
    let du = g.map(|gk| (nsf / s) * (gk - gu));
    let da = du.zip_map(&a, |x, ai| x * sigmoid(ai));
    let (_, _, v, _) = net.split();
    let dv = hid.transpose() * &da;
    let dc = da.sum();
    let dh = &da * v.transpose();
    let dpre = dh.zip_map(&hid, |x, hv| x * (1.0 - hv * hv));
    let dw = dpre.transpose() * z;
    let db = dpre.row_sum();
    let mut grad = Vec::with_capacity(net.theta.len());
    for r in 0..net.h {
        for c in 0..net.d {
            grad.push(dw[(r, c)]);
        }
    }
    grad.extend(db.iter());
    grad.extend(dv.iter());
    grad.push(dc);
    grad
}

/// Trained weights (mean one) plus the MMD² after each step, starting with
/// the uniform-weight value.
pub fn iwn_weights(pair: &DomainPair, params: &MethodParams) -> Result<(Vec<f64>, Vec<f64>)> {
    pair.require_unlabeled_target(Method::Iwn)?;
    if params.iwn_hidden == 0 {
        return Err(Error::invalid("iwn needs at least one hidden unit"));
    }
    if !(params.iwn_learning_rate > 0.0) {
        return Err(Error::invalid("iwn learning rate must be > 0"));
    }
    let xt = pair.target_unlabeled();
    let bw = params
        .iwn_bandwidth
        .unwrap_or_else(|| median_distance(&pair.xs, xt));
    check_bandwidth(bw)?;
    let d = pair.xs.ncols();
    let nt = xt.nrows() as f64;
    let kss = rbf_matrix(&pair.xs, &pair.xs, bw);
    let kst = rbf_matrix(&pair.xs, xt, bw);
    let ktt_sum = rbf_matrix(xt, xt, bw).sum();
    let kst_rows = kst.column_sum();

    // standardize inputs with source statistics
    let mean = pair.xs.row_mean();
    let sd = pair.xs.row_variance().map(|v| if v > 0.0 { v.sqrt() } else { 1.0 });
    let mut z = pair.xs.clone();
    for mut row in z.row_iter_mut() {
        row -= &mean;
        row.component_div_assign(&sd);
    }

    let mut net = Net::new(params.iwn_hidden, d, params.seed);
    let mut adam = Adam::new(net.theta.len(), params.iwn_learning_rate);
    let (_, _, u0) = net.forward(&z);
    let mut best_w = normalized(&u0);
    let mut best = mmd_from_kernels(&kss, &kst, ktt_sum, &best_w);
    let mut history = vec![best];
    for step in 0..params.iwn_steps {
        let grad = mmd_gradient(&net, &z, &kss, &kst_rows, nt);
        adam.step(&mut net.theta, &grad);

        let (_, _, un) = net.forward(&z);
        let wn = normalized(&un);
        let loss = mmd_from_kernels(&kss, &kst, ktt_sum, &wn);
        if !loss.is_finite() || wn.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence(format!("iwn loss became non-finite at step {}", step + 1)));
        }
        history.push(loss);
        if loss < best {
            best = loss;
            best_w = wn;
        }
    }
    Ok((best_w.iter().copied().collect(), history))
}

pub fn iwn(pair: &DomainPair, params: &MethodParams, cfg: &FitConfig) -> Result<AdaptedModel> {
    let (w, _) = iwn_weights(pair, params)?;
    weighted_fit(Method::Iwn, pair, w, params, cfg)
}
