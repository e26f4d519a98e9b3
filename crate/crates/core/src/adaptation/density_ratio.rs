//! Density-ratio weighting: least-squares importance fitting (plain and
//! alpha-relative) and nearest-neighbour counting.

use nalgebra::{DMatrix, DVector};

use super::kernel::{check_bandwidth, median_distance, rbf_matrix, squared_distances};
use super::{solve_spd, weighted_fit, AdaptedModel, DomainPair, Method, MethodParams};
use crate::error::{Error, Result};
use crate::linear::FitConfig;
use crate::rng::{rng_from_seed, shuffle};

/// Fitted kernel density-ratio model `r(x) = sum_l theta_l k(x, c_l)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityRatioFit {
    pub centers: DMatrix<f64>,
    pub bandwidth: f64,
    /// Coefficients after clipping at zero.
    pub theta: DVector<f64>,
    /// `r` evaluated at the source rows.
    pub weights: Vec<f64>,
}

fn choose_centers(pool: &DMatrix<f64>, n_centers: usize, seed: u64) -> DMatrix<f64> {
    let n = pool.nrows();
    if n_centers >= n {
        return pool.clone();
    }
    let mut idx: Vec<usize> = (0..n).collect();
    shuffle(&mut idx, &mut rng_from_seed(seed));
    idx.truncate(n_centers);
    idx.sort_unstable();
    pool.select_rows(&idx)
}

/// Alpha-relative least-squares importance fit. `alpha = 0` is plain ULSIF.
///
/// ```text
/// H = (1 - alpha) Phi_s'Phi_s / ns + alpha Phi_t'Phi_t / nt
/// h = Phi_t' 1 / nt
/// theta = max(0, (H + ridge I)^-1 h)
/// ```
pub fn ulsif_fit(
    xs: &DMatrix<f64>,
    xt: &DMatrix<f64>,
    centers: DMatrix<f64>,
    bandwidth: f64,
    ridge: f64,
    alpha: f64,
) -> Result<DensityRatioFit> {
    check_bandwidth(bandwidth)?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha must lie in [0,1], got {alpha}")));
    }
    if !(ridge >= 0.0) {
        return Err(Error::invalid("ridge must be >= 0"));
    }
    if xt.nrows() == 0 || centers.nrows() == 0 {
        return Err(Error::degenerate("density-ratio fit needs target rows"));
    }
    let ns = xs.nrows() as f64;
    let nt = xt.nrows() as f64;
    let phi_s = rbf_matrix(xs, &centers, bandwidth);
    let phi_t = rbf_matrix(xt, &centers, bandwidth);
    let mut h_mat = phi_s.transpose() * &phi_s * ((1.0 - alpha) / ns);
    if alpha > 0.0 {
        h_mat += phi_t.transpose() * &phi_t * (alpha / nt);
    }
    let h_vec = phi_t.row_sum().transpose() / nt;
    let b = centers.nrows();
    for l in 0..b {
        h_mat[(l, l)] += ridge;
    }
    let theta = solve_spd(h_mat, h_vec)
        .ok_or_else(|| Error::Singular("density-ratio system H + ridge I".into()))?
        .map(|t| t.max(0.0));
    let weights = (&phi_s * &theta).iter().map(|v| v.max(0.0)).collect();
    Ok(DensityRatioFit {
        centers,
        bandwidth,
        theta,
        weights,
    })
}

fn fit_from_params(pair: &DomainPair, params: &MethodParams, alpha: f64) -> Result<DensityRatioFit> {
    let xt = pair.target_unlabeled();
    let pool = if params.ulsif_source_centers { &pair.xs } else { xt };
    let n_centers = params.ulsif_centers.max(1);
    let centers = choose_centers(pool, n_centers, params.seed);
    let bw = params
        .ulsif_bandwidth
        .unwrap_or_else(|| median_distance(&pair.xs, xt));
    ulsif_fit(&pair.xs, xt, centers, bw, params.ulsif_ridge, alpha)
}

pub fn ulsif(pair: &DomainPair, params: &MethodParams, cfg: &FitConfig) -> Result<AdaptedModel> {
    pair.require_unlabeled_target(Method::Ulsif)?;
    let fit = fit_from_params(pair, params, 0.0)?;
    weighted_fit(Method::Ulsif, pair, fit.weights, params, cfg)
}

pub fn rulsif(pair: &DomainPair, params: &MethodParams, cfg: &FitConfig) -> Result<AdaptedModel> {
    pair.require_unlabeled_target(Method::Rulsif)?;
    let fit = fit_from_params(pair, params, params.rulsif_alpha)?;
    let mut out = weighted_fit(Method::Rulsif, pair, fit.weights, params, cfg)?;
    out.hyperparams
        .insert("rulsif.alpha".into(), params.rulsif_alpha.to_string());
    Ok(out)
}

/// Number of target rows within `radius` (inclusive) of each source row.
pub fn nnw_counts(xs: &DMatrix<f64>, xt: &DMatrix<f64>, radius: f64) -> Result<Vec<usize>> {
    if !(radius > 0.0) {
        return Err(Error::invalid(format!("radius must be > 0, got {radius}")));
    }
    let r2 = radius * radius;
    let d2 = squared_distances(xs, xt);
    Ok(d2
        .row_iter()
        .map(|row| row.iter().filter(|&&v| v <= r2).count())
        .collect())
}

/// Neighbour-count weights normalized to mean one; uniform when no source
/// row has a target neighbour.
pub fn nnw(pair: &DomainPair, radius: Option<f64>, cfg: &FitConfig) -> Result<AdaptedModel> {
    pair.require_unlabeled_target(Method::Nnw)?;
    let xt = pair.target_unlabeled();
    let radius = radius.unwrap_or_else(|| median_distance(&pair.xs, xt));
    let counts = nnw_counts(&pair.xs, xt, radius)?;
    let total: usize = counts.iter().sum();
    let w = if total == 0 {
        vec![1.0; counts.len()]
    } else {
        let mean = total as f64 / counts.len() as f64;
        counts.iter().map(|&c| c as f64 / mean).collect()
    };
    let params = MethodParams {
        nnw_radius: Some(radius),
        ..Default::default()
    };
    weighted_fit(Method::Nnw, pair, w, &params, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adaptation::testutil::gaussian_pair;

    #[test]
    fn identical_domains_have_mean_weight_near_one() {
        // two independent draws from the same distribution
        let pair = gaussian_pair(21, 200, 200, 2, 1.0, 0.0);
        let fit = fit_from_params(&pair, &MethodParams::default(), 0.0).unwrap();
        let mean = fit.weights.iter().sum::<f64>() / 200.0;
        assert!((mean - 1.0).abs() <= 0.1, "mean weight {mean}");
        assert!(fit.weights.iter().all(|&w| w >= 0.0));
    }

    /// Three source rows, centers at the three target rows: solve the normal
    /// equations by explicit inversion.
    #[test]
    fn theta_matches_dense_solve() {
        let xs = DMatrix::from_row_slice(3, 1, &[0.0, 0.5, 1.0]);
        let xt = DMatrix::from_row_slice(3, 1, &[0.2, 0.4, 0.9]);
        let bw = 0.7;
        let k = |a: f64, b: f64| (-(a - b) * (a - b) / (2.0 * bw * bw)).exp();
        for alpha in [0.0, 0.5] {
            let mut h = DMatrix::zeros(3, 3);
            let mut hv = DVector::zeros(3);
            for l in 0..3 {
                for m in 0..3 {
                    let mut s = 0.0;
                    let mut t = 0.0;
                    for i in 0..3 {
                        s += k(xs[i], xt[l]) * k(xs[i], xt[m]);
                        t += k(xt[i], xt[l]) * k(xt[i], xt[m]);
                    }
                    h[(l, m)] = (1.0 - alpha) * s / 3.0 + alpha * t / 3.0 + if l == m { 0.1 } else { 0.0 };
                }
                hv[l] = (0..3).map(|j| k(xt[j], xt[l])).sum::<f64>() / 3.0;
            }
            let oracle = h.try_inverse().unwrap() * hv;
            let fit = ulsif_fit(&xs, &xt, xt.clone(), bw, 0.1, alpha).unwrap();
            for l in 0..3 {
                assert!((fit.theta[l] - oracle[l].max(0.0)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn alpha_zero_reproduces_ulsif_exactly() {
        let pair = gaussian_pair(5, 40, 30, 3, 1.0, 0.5);
        let p = MethodParams::default();
        let a = fit_from_params(&pair, &p, 0.0).unwrap();
        let b = ulsif_fit(&pair.xs, &pair.xt, a.centers.clone(), a.bandwidth, p.ulsif_ridge, 0.0).unwrap();
        assert_eq!(a.theta, b.theta);
        assert!(ulsif_fit(&pair.xs, &pair.xt, a.centers.clone(), 1.0, 0.1, 1.5).is_err());
    }

    #[test]
    fn zero_ridge_with_duplicate_centers_is_singular() {
        let xs = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let c = DMatrix::from_row_slice(2, 1, &[0.5, 0.5]);
        assert!(matches!(ulsif_fit(&xs, &c, c.clone(), 1.0, 0.0, 0.0), Err(Error::Singular(_))));
    }

    #[test]
    fn source_centers_flag() {
        let pair = gaussian_pair(6, 30, 20, 2, 1.0, 0.3);
        let p = MethodParams {
            ulsif_source_centers: true,
            ulsif_centers: 1000,
            ..Default::default()
        };
        let fit = fit_from_params(&pair, &p, 0.0).unwrap();
        assert_eq!(fit.centers.nrows(), 30);
    }

    #[test]
    fn nnw_counts_match_pairwise_distances() {
        let xs = DMatrix::<f64>::from_row_slice(4, 2, &[0.0, 0.0, 1.0, 0.0, 3.0, 3.0, -1.0, 2.0]);
        let xt = DMatrix::<f64>::from_row_slice(4, 2, &[0.5, 0.0, 0.0, 1.0, 3.0, 2.5, 5.0, 5.0]);
        let r = 1.2;
        let mut oracle = vec![0usize; 4];
        for i in 0..4 {
            for j in 0..4 {
                let d = ((xs[(i, 0)] - xt[(j, 0)]).powi(2) + (xs[(i, 1)] - xt[(j, 1)]).powi(2)).sqrt();
                if d <= r {
                    oracle[i] += 1;
                }
            }
        }
        assert_eq!(nnw_counts(&xs, &xt, r).unwrap(), oracle);
        assert!(nnw_counts(&xs, &xt, 0.0).is_err());
    }

    #[test]
    fn nnw_limits_are_uniform() {
        let pair = gaussian_pair(7, 30, 20, 2, 1.0, 0.5);
        let cfg = FitConfig::default();
        let big = nnw(&pair, Some(1e9), &cfg).unwrap();
        assert!(big.weights.unwrap().w.iter().all(|&w| w == 1.0));
        let tiny = nnw(&pair, Some(1e-12), &cfg).unwrap();
        assert!(tiny.weights.unwrap().w.iter().all(|&w| w == 1.0));
    }
}
