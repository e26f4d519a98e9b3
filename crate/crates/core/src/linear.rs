//! Sample-weighted binary logistic regression, prediction, balanced accuracy
//! and the importance-weighted empirical risk.
//!
//! The fitted objective is
//!
//! ```text
//! f(beta, b) = sum_i w_i * [log(1 + exp(z_i)) - y_i * z_i] + (l2 / 2) * |beta|^2,
//! z_i = x_i . beta + b
//! ```
//!
//! with the intercept left unpenalized. The solver is a damped Newton method;
//! the Newton system is solved densely for narrow problems and by
//! preconditioned conjugate gradients (Hessian-vector products only) when the
//! feature count is large, which keeps wide data (thousands of voxels, a few
//! hundred samples) tractable.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameter count above which the Newton step switches to conjugate
/// gradients.
const DENSE_NEWTON_MAX_PARAMS: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// L2 penalty on the coefficients; the usual `C` is `1 / l2_strength`.
    pub l2_strength: f64,
    /// Bound on the sup-norm of the objective gradient at the returned point.
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            l2_strength: 1.0,
            tol: 1e-4,
            max_iter: 1000,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn inverse_regularization(&self) -> f64 {
        1.0 / self.l2_strength
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.l2_strength >= 0.0 && self.l2_strength.is_finite()) {
            return Err(Error::invalid("l2_strength must be a finite value >= 0"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid("tol must be > 0"));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearClassifier {
    pub beta: Vec<f64>,
    pub intercept: f64,
}

impl LinearClassifier {
    pub fn zeros(d: usize) -> Self {
        LinearClassifier {
            beta: vec![0.0; d],
            intercept: 0.0,
        }
    }

    pub fn n_features(&self) -> usize {
        self.beta.len()
    }

    pub fn decision_function(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        if x.ncols() != self.beta.len() {
            return Err(Error::invalid(format!(
                "model has {} coefficients, data has {} columns",
                self.beta.len(),
                x.ncols()
            )));
        }
        let beta = DVector::from_column_slice(&self.beta);
        let mut s = x * beta;
        s.add_scalar_mut(self.intercept);
        Ok(s)
    }

    pub fn predict_labels(&self, x: &DMatrix<f64>) -> Result<Vec<u8>> {
        Ok(self.decision_function(x)?.iter().map(|&s| label_of(s)).collect())
    }
}

/// Ties at exactly zero go to class 0.
pub fn label_of(score: f64) -> u8 {
    u8::from(score > 0.0)
}

pub fn predict(model: &LinearClassifier, x: &DMatrix<f64>) -> Result<(Vec<f64>, Vec<u8>)> {
    let s = model.decision_function(x)?;
    let labels = s.iter().map(|&v| label_of(v)).collect();
    Ok((s.iter().copied().collect(), labels))
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of a raw score against a {0,1} label.
pub fn log_loss(score: f64, y: u8) -> f64 {
    softplus(score) - f64::from(y) * score
}

fn check_labels(y: &[u8]) -> Result<()> {
    if let Some(bad) = y.iter().find(|&&v| v > 1) {
        return Err(Error::invalid(format!("labels must be 0 or 1, found {bad}")));
    }
    Ok(())
}

fn check_weights(w: &[f64]) -> Result<()> {
    if w.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
        return Err(Error::invalid("sample weights must be finite and >= 0"));
    }
    Ok(())
}

/// Objective pieces for a fixed problem.
struct Problem<'a> {
    x: &'a DMatrix<f64>,
    y: Vec<f64>,
    w: &'a [f64],
    l2: f64,
}

impl Problem<'_> {
    fn d(&self) -> usize {
        self.x.ncols()
    }

    fn scores(&self, beta: &DVector<f64>, b: f64) -> DVector<f64> {
        let mut z = self.x * beta;
        z.add_scalar_mut(b);
        z
    }

    fn value(&self, beta: &DVector<f64>, _b: f64, z: &DVector<f64>) -> f64 {
        let data: f64 = z
            .iter()
            .zip(&self.y)
            .zip(self.w)
            .map(|((&zi, &yi), &wi)| if wi == 0.0 { 0.0 } else { wi * (softplus(zi) - yi * zi) })
            .sum();
        data + 0.5 * self.l2 * beta.norm_squared()
    }

    /// Gradient (beta part, intercept part) and Hessian diagonal weights.
    fn gradient(&self, beta: &DVector<f64>, z: &DVector<f64>) -> (DVector<f64>, f64, DVector<f64>) {
        let n = z.len();
        let mut r = DVector::zeros(n);
        let mut dw = DVector::zeros(n);
        for i in 0..n {
            let p = sigmoid(z[i]);
            r[i] = self.w[i] * (p - self.y[i]);
            dw[i] = self.w[i] * p * (1.0 - p);
        }
        let mut gb = self.x.tr_mul(&r);
        gb.axpy(self.l2, beta, 1.0);
        (gb, r.sum(), dw)
    }
}

fn sup_norm(g: &DVector<f64>, gi: f64) -> f64 {
    g.amax().max(gi.abs())
}

/// Fits a weighted, L2-penalized logistic regression.
///
/// Returns a point whose objective gradient has sup-norm at most `cfg.tol`;
/// otherwise a convergence error carrying the last gradient norm.
pub fn fit_logistic(
    x: &DMatrix<f64>,
    y: &[u8],
    sample_weights: &[f64],
    cfg: &FitConfig,
) -> Result<LinearClassifier> {
    cfg.validate()?;
    let n = x.nrows();
    if y.len() != n || sample_weights.len() != n {
        return Err(Error::invalid(format!(
            "shape mismatch: {} rows, {} labels, {} weights",
            n,
            y.len(),
            sample_weights.len()
        )));
    }
    check_labels(y)?;
    check_weights(sample_weights)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("feature matrix contains non-finite values"));
    }
    let has = |c: u8| {
        y.iter()
            .zip(sample_weights)
            .any(|(&yi, &wi)| yi == c && wi > 0.0)
    };
    if !(has(0) && has(1)) {
        return Err(Error::degenerate(
            "logistic fit needs positive-weight samples from both classes",
        ));
    }

    let prob = Problem {
        x,
        y: y.iter().map(|&v| f64::from(v)).collect(),
        w: sample_weights,
        l2: cfg.l2_strength,
    };
    let d = prob.d();
    let mut beta = DVector::zeros(d);
    // start the intercept at the weighted log-odds
    let (w1, w0) = y
        .iter()
        .zip(sample_weights)
        .fold((0.0, 0.0), |(a, b), (&yi, &wi)| if yi == 1 { (a + wi, b) } else { (a, b + wi) });
    let mut b = (w1 / w0).ln();

    let mut z = prob.scores(&beta, b);
    let mut f = prob.value(&beta, b, &z);
    let mut last_norm = f64::INFINITY;
    for _ in 0..cfg.max_iter {
        let (gb, gi, dw) = prob.gradient(&beta, &z);
        let gnorm = sup_norm(&gb, gi);
        last_norm = gnorm;
        if gnorm <= cfg.tol {
            return Ok(LinearClassifier {
                beta: beta.iter().copied().collect(),
                intercept: b,
            });
        }
        let (mut step_b, mut step_i) = if d < DENSE_NEWTON_MAX_PARAMS {
            dense_newton_step(&prob, &dw, &gb, gi)
        } else {
            cg_newton_step(&prob, &dw, &gb, gi, gnorm)
        };
        let mut slope = step_b.dot(&gb) + step_i * gi;
        if !(slope < 0.0) || !slope.is_finite() {
            // not a descent direction; fall back to steepest descent
            step_b = -gb.clone();
            step_i = -gi;
            slope = -(gb.norm_squared() + gi * gi);
        }
        // Armijo backtracking
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let nb = &beta + &step_b * t;
            let ni = b + step_i * t;
            let nz = prob.scores(&nb, ni);
            let nf = prob.value(&nb, ni, &nz);
            // near the optimum the decrease drops below rounding noise
            let flat = t == 1.0 && (nf - f).abs() <= 1e-13 * f.abs().max(1.0);
            if nf.is_finite() && (nf <= f + 1e-4 * t * slope || flat) {
                beta = nb;
                b = ni;
                z = nz;
                f = nf;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    // last accepted point may already satisfy the bound
    let (gb, gi, _) = prob.gradient(&beta, &z);
    let gnorm = sup_norm(&gb, gi);
    if gnorm <= cfg.tol {
        return Ok(LinearClassifier {
            beta: beta.iter().copied().collect(),
            intercept: b,
        });
    }
    Err(Error::Convergence {
        solver: "logistic regression",
        iterations: cfg.max_iter,
        grad_norm: gnorm.min(last_norm),
    })
}

fn dense_newton_step(
    prob: &Problem<'_>,
    dw: &DVector<f64>,
    gb: &DVector<f64>,
    gi: f64,
) -> (DVector<f64>, f64) {
    let n = prob.x.nrows();
    let d = prob.d();
    let p = d + 1;
    // Z = [X 1] scaled row-wise by sqrt(D)
    let mut zs = DMatrix::zeros(n, p);
    for i in 0..n {
        let s = dw[i].sqrt();
        for j in 0..d {
            zs[(i, j)] = prob.x[(i, j)] * s;
        }
        zs[(i, d)] = s;
    }
    let mut h = zs.tr_mul(&zs);
    for j in 0..d {
        h[(j, j)] += prob.l2;
    }
    let mut rhs = DVector::zeros(p);
    rhs.rows_mut(0, d).copy_from(&(-gb));
    rhs[d] = -gi;
    let scale = (0..p).map(|j| h[(j, j)].abs()).fold(0.0, f64::max).max(1e-300);
    let mut damping = 0.0;
    for _ in 0..12 {
        let mut hh = h.clone();
        if damping > 0.0 {
            for j in 0..p {
                hh[(j, j)] += damping;
            }
        }
        if let Some(ch) = hh.cholesky() {
            let s = ch.solve(&rhs);
            if s.iter().all(|v| v.is_finite()) {
                return (s.rows(0, d).into_owned(), s[d]);
            }
        }
        damping = if damping == 0.0 { scale * 1e-12 } else { damping * 100.0 };
    }
    (-gb.clone(), -gi)
}

fn hess_vec(
    prob: &Problem<'_>,
    dw: &DVector<f64>,
    vb: &DVector<f64>,
    vi: f64,
) -> (DVector<f64>, f64) {
    let mut u = prob.x * vb;
    u.add_scalar_mut(vi);
    u.component_mul_assign(dw);
    let mut hb = prob.x.tr_mul(&u);
    hb.axpy(prob.l2, vb, 1.0);
    (hb, u.sum())
}

/// Inexact Newton direction by Jacobi-preconditioned conjugate gradients.
fn cg_newton_step(
    prob: &Problem<'_>,
    dw: &DVector<f64>,
    gb: &DVector<f64>,
    gi: f64,
    gnorm: f64,
) -> (DVector<f64>, f64) {
    let d = prob.d();
    // diagonal of the Hessian
    let mut diag = DVector::from_element(d, prob.l2);
    for j in 0..d {
        let col = prob.x.column(j);
        diag[j] += col.iter().zip(dw.iter()).map(|(v, w)| v * v * w).sum::<f64>();
    }
    let diag_i = dw.sum();
    let inv = |v: f64| if v > 1e-300 { 1.0 / v } else { 1.0 };
    let minv: DVector<f64> = diag.map(inv);
    let minv_i = inv(diag_i);

    let rhs_norm = (gb.norm_squared() + gi * gi).sqrt();
    let forcing = gnorm.sqrt().min(0.1) * rhs_norm;
    let forcing = forcing.max(rhs_norm * 1e-12);

    let mut sb = DVector::zeros(d);
    let mut si = 0.0;
    let mut rb = -gb.clone();
    let mut ri = -gi;
    let mut zb = rb.component_mul(&minv);
    let mut zi = ri * minv_i;
    let mut pb = zb.clone();
    let mut pi = zi;
    let mut rz = rb.dot(&zb) + ri * zi;
    for _ in 0..(4 * (d + 1)).min(2000) {
        let (hb, hi) = hess_vec(prob, dw, &pb, pi);
        let curv = pb.dot(&hb) + pi * hi;
        if !(curv > 0.0) {
            break;
        }
        let alpha = rz / curv;
        sb.axpy(alpha, &pb, 1.0);
        si += alpha * pi;
        rb.axpy(-alpha, &hb, 1.0);
        ri -= alpha * hi;
        if (rb.norm_squared() + ri * ri).sqrt() <= forcing {
            break;
        }
        zb = rb.component_mul(&minv);
        zi = ri * minv_i;
        let rz_new = rb.dot(&zb) + ri * zi;
        let beta = rz_new / rz;
        rz = rz_new;
        pb = &zb + &pb * beta;
        pi = zi + beta * pi;
    }
    if sb.iter().all(|v| *v == 0.0) && si == 0.0 {
        return (-gb.clone(), -gi);
    }
    (sb, si)
}

/// Gradient of the fitted objective at a model, as `(d/d beta, d/d intercept)`.
pub fn objective_gradient(
    model: &LinearClassifier,
    x: &DMatrix<f64>,
    y: &[u8],
    w: &[f64],
    l2_strength: f64,
) -> Result<(Vec<f64>, f64)> {
    let prob = Problem {
        x,
        y: y.iter().map(|&v| f64::from(v)).collect(),
        w,
        l2: l2_strength,
    };
    let beta = DVector::from_column_slice(&model.beta);
    let z = model.decision_function(x)?;
    let (gb, gi, _) = prob.gradient(&beta, &z);
    Ok((gb.iter().copied().collect(), gi))
}

/// Value of the fitted objective at a model.
pub fn objective_value(
    model: &LinearClassifier,
    x: &DMatrix<f64>,
    y: &[u8],
    w: &[f64],
    l2_strength: f64,
) -> Result<f64> {
    let prob = Problem {
        x,
        y: y.iter().map(|&v| f64::from(v)).collect(),
        w,
        l2: l2_strength,
    };
    let beta = DVector::from_column_slice(&model.beta);
    let z = model.decision_function(x)?;
    Ok(prob.value(&beta, model.intercept, &z))
}

/// Mean of sensitivity and specificity.
pub fn balanced_accuracy(y_true: &[u8], y_pred: &[u8]) -> Result<f64> {
    if y_true.len() != y_pred.len() {
        return Err(Error::invalid(format!(
            "{} labels vs {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    check_labels(y_true)?;
    check_labels(y_pred)?;
    let mut tp = 0usize;
    let mut tn = 0usize;
    let mut pos = 0usize;
    let mut neg = 0usize;
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t == 1 {
            pos += 1;
            tp += usize::from(p == 1);
        } else {
            neg += 1;
            tn += usize::from(p == 0);
        }
    }
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(
            "balanced accuracy needs both classes in the ground truth".into(),
        ));
    }
    Ok(0.5 * (tp as f64 / pos as f64 + tn as f64 / neg as f64))
}

/// Sample-average estimate `(1/n) sum_i w_i * logloss(h(x_i), y_i)`.
///
/// With `w_i = p_T(x_i, y_i) / p_S(x_i, y_i)` and source draws `x_i`, this
/// estimates the target-domain risk of `model`.
pub fn weighted_empirical_risk(
    model: &LinearClassifier,
    x: &DMatrix<f64>,
    y: &[u8],
    weights: &[f64],
) -> Result<f64> {
    let n = x.nrows();
    if y.len() != n || weights.len() != n {
        return Err(Error::invalid("rows, labels and weights must have equal length"));
    }
    if weights.iter().any(|&w| w < 0.0 || w.is_nan()) {
        return Err(Error::invalid("importance weights must be >= 0"));
    }
    check_labels(y)?;
    if n == 0 {
        return Err(Error::invalid("empty sample"));
    }
    let s = model.decision_function(x)?;
    let total: f64 = s
        .iter()
        .zip(y)
        .zip(weights)
        .map(|((&si, &yi), &wi)| if wi == 0.0 { 0.0 } else { wi * log_loss(si, yi) })
        .sum();
    Ok(total / n as f64)
}
