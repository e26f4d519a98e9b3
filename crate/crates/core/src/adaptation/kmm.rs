//! Kernel mean matching.
//!
//! Solves
//!
//! ```text
//! min_w  1/2 w'Kw - kappa'w   s.t.  0 <= w_i <= B,  |sum_i w_i - ns| <= ns * eps
//! ```
//!
//! with `K` the RBF kernel on the source rows and
//! `kappa_i = (ns/nt) sum_j k(x_i, t_j)`, by accelerated projected gradient.
//! Projection onto the box-and-slab set is exact: the KKT point is
//! `clip(v - tau, 0, B)` for a scalar shift `tau` found by bisection.

use nalgebra::{DMatrix, DVector};

use super::kernel::{check_bandwidth, median_distance, rbf_matrix};
use super::{weighted_fit, AdaptedModel, DomainPair, Method, MethodParams};
use crate::error::{Error, Result};
use crate::linear::FitConfig;

#[derive(Debug, Clone)]
pub struct KmmProblem {
    pub k: DMatrix<f64>,
    pub kappa: DVector<f64>,
    pub upper: f64,
    pub sum_lo: f64,
    pub sum_hi: f64,
}

impl KmmProblem {
    pub fn new(
        xs: &DMatrix<f64>,
        xt: &DMatrix<f64>,
        bandwidth: f64,
        upper: f64,
        eps: f64,
    ) -> Result<Self> {
        check_bandwidth(bandwidth)?;
        if !(upper > 0.0) || !(eps >= 0.0) {
            return Err(Error::invalid("KMM needs B > 0 and eps >= 0"));
        }
        let ns = xs.nrows() as f64;
        let nt = xt.nrows();
        if nt == 0 {
            return Err(Error::degenerate("KMM needs target rows"));
        }
        let k = rbf_matrix(xs, xs, bandwidth);
        let kst = rbf_matrix(xs, xt, bandwidth);
        let kappa = kst.column_sum() * (ns / nt as f64);
        let sum_lo = (ns - ns * eps).max(0.0);
        let sum_hi = ns + ns * eps;
        if sum_lo > ns * upper {
            return Err(Error::invalid(format!(
                "KMM constraints infeasible: sum(w) >= {sum_lo} but ns * B = {}",
                ns * upper
            )));
        }
        Ok(KmmProblem {
            k,
            kappa,
            upper,
            sum_lo,
            sum_hi,
        })
    }

    pub fn objective(&self, w: &DVector<f64>) -> f64 {
        0.5 * w.dot(&(&self.k * w)) - self.kappa.dot(w)
    }

    pub fn is_feasible(&self, w: &DVector<f64>, slack: f64) -> bool {
        let s = w.sum();
        w.iter().all(|&v| v >= -slack && v <= self.upper + slack)
            && s >= self.sum_lo - slack
            && s <= self.sum_hi + slack
    }

    /// Euclidean projection onto the feasible set.
    pub fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        let clip = |tau: f64| v.map(|x| (x - tau).clamp(0.0, self.upper));
        let s0 = clip(0.0).sum();
        let target = if s0 > self.sum_hi {
            self.sum_hi
        } else if s0 < self.sum_lo {
            self.sum_lo
        } else {
            return clip(0.0);
        };
        // sum(clip(v - tau)) is nonincreasing in tau
        let vmax = v.max();
        let vmin = v.min();
        let (mut lo, mut hi) = (vmin - self.upper - 1.0, vmax + 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if clip(mid).sum() > target {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= f64::EPSILON * (1.0 + mid.abs()) {
                break;
            }
        }
        clip(0.5 * (lo + hi))
    }

    fn lipschitz(&self) -> f64 {
        // power iteration, bounded above by the max row sum
        let n = self.k.nrows();
        let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
        let mut lam = 0.0;
        for _ in 0..60 {
            let kv = &self.k * &v;
            let nrm = kv.norm();
            if nrm == 0.0 {
                break;
            }
            lam = nrm;
            v = kv / nrm;
        }
        let gersh = self
            .k
            .row_iter()
            .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max);
        (lam * 1.05).min(gersh).max(1e-12)
    }

    /// Accelerated projected gradient with function-value restarts, started
    /// from the feasible point nearest to `w = 1`.
    pub fn solve(&self, max_iter: usize, tol: f64) -> Result<DVector<f64>> {
        let n = self.k.nrows();
        let lip = self.lipschitz();
        let step = 1.0 / lip;
        let mut w = self.project(&DVector::from_element(n, 1.0));
        let mut f = self.objective(&w);
        let mut y = w.clone();
        let mut t = 1.0f64;
        let scale = 1.0 + self.kappa.amax();
        let mut pg_norm = f64::INFINITY;
        for _ in 0..max_iter {
            let gy = &self.k * &y - &self.kappa;
            let w_next = self.project(&(&y - &gy * step));
            let f_next = self.objective(&w_next);
            if f_next > f {
                // restart momentum from the current iterate
                y = w.clone();
                t = 1.0;
                continue;
            }
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            y = &w_next + (&w_next - &w) * ((t - 1.0) / t_next);
            t = t_next;
            w = w_next;
            f = f_next;
            // projected-gradient stationarity at w
            let gw = &self.k * &w - &self.kappa;
            let pw = self.project(&(&w - &gw * step));
            pg_norm = (&w - &pw).amax() * lip;
            if pg_norm <= tol * scale {
                return Ok(w);
            }
        }
        Err(Error::Convergence {
            solver: "KMM quadratic program",
            iterations: max_iter,
            grad_norm: pg_norm,
        })
    }
}

/// Objective `1/2 w'Kw - kappa'w` for a weight vector, from raw data.
pub fn kmm_objective(
    xs: &DMatrix<f64>,
    xt: &DMatrix<f64>,
    w: &[f64],
    bandwidth: f64,
) -> Result<f64> {
    let p = KmmProblem::new(xs, xt, bandwidth, f64::MAX, f64::MAX)?;
    Ok(p.objective(&DVector::from_column_slice(w)))
}

pub(crate) fn default_eps(ns: usize) -> f64 {
    let r = (ns as f64).sqrt();
    (r - 1.0) / r
}

/// KMM importance weights for the source rows.
pub fn kmm_weights(pair: &DomainPair, params: &MethodParams) -> Result<Vec<f64>> {
    pair.require_unlabeled_target(Method::Kmm)?;
    let xt = pair.target_unlabeled();
    let bw = params
        .kmm_bandwidth
        .unwrap_or_else(|| median_distance(&pair.xs, xt));
    let eps = params.kmm_eps.unwrap_or_else(|| default_eps(pair.n_source()));
    let prob = KmmProblem::new(&pair.xs, xt, bw, params.kmm_b, eps)?;
    let w = prob.solve(params.kmm_max_iter, params.kmm_tol)?;
    Ok(w.iter().copied().collect())
}

pub fn kmm(pair: &DomainPair, params: &MethodParams, cfg: &FitConfig) -> Result<AdaptedModel> {
    let w = kmm_weights(pair, params)?;
    weighted_fit(Method::Kmm, pair, w, params, cfg)
}
