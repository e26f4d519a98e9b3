//! The thirteen approaches of the comparison: a source-only baseline, the
//! naive concatenation of source and target training data, and eleven domain
//! adaptation methods grouped by what they adapt:
//!
//! * instance weighting: [`kmm`], [`ulsif`], [`rulsif`], [`nnw`], [`iwn`],
//!   [`bw`] and [`tradaboost`],
//! * parameter transfer: [`rtlc`],
//! * feature transforms: [`fa`], [`pred`] and [`sa`].
//!
//! Every method takes a [`DomainPair`] and returns an [`AdaptedModel`] that
//! scores target-domain rows. Unsupervised methods never read the target
//! labels.

pub mod kernel;

mod density_ratio;
mod feature;
mod iwn;
mod kmm;
mod params;
mod tradaboost;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linear::{fit_logistic, label_of, FitConfig, LinearClassifier};

pub use density_ratio::{nnw, nnw_counts, rulsif, ulsif, ulsif_fit, DensityRatioFit};
pub use feature::{augment_fa, fa, pca_basis, pred, sa, SubspaceAlignment};
pub use iwn::{iwn, iwn_weights};
pub use kernel::{median_distance, mmd_rbf, rbf, rbf_matrix};
pub use kmm::{kmm, kmm_objective, kmm_weights, KmmProblem};
pub use params::MethodParams;
pub use tradaboost::{tradaboost, TrAdaBoostTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    Baseline,
    Naive,
    Bw,
    Rtlc,
    Kmm,
    TrAdaBoost,
    Fa,
    Pred,
    Ulsif,
    Nnw,
    Rulsif,
    Sa,
    Iwn,
}

impl Method {
    pub const ALL: [Method; 13] = [
        Method::Baseline,
        Method::Naive,
        Method::Bw,
        Method::Rtlc,
        Method::Kmm,
        Method::TrAdaBoost,
        Method::Fa,
        Method::Pred,
        Method::Ulsif,
        Method::Nnw,
        Method::Rulsif,
        Method::Sa,
        Method::Iwn,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::Naive => "naive",
            Method::Bw => "bw",
            Method::Rtlc => "rtlc",
            Method::Kmm => "kmm",
            Method::TrAdaBoost => "tradaboost",
            Method::Fa => "fa",
            Method::Pred => "pred",
            Method::Ulsif => "ulsif",
            Method::Nnw => "nnw",
            Method::Rulsif => "rulsif",
            Method::Sa => "sa",
            Method::Iwn => "iwn",
        }
    }

    /// Whether the method reads target labels.
    pub fn is_supervised(self) -> bool {
        matches!(
            self,
            Method::Naive
                | Method::Bw
                | Method::Rtlc
                | Method::TrAdaBoost
                | Method::Fa
                | Method::Pred
        )
    }

    /// Whether the method changes the feature space of incoming rows.
    pub fn is_feature_based(self) -> bool {
        matches!(self, Method::Fa | Method::Pred | Method::Sa)
    }

    pub fn parse_list(s: &str) -> Result<Vec<Method>> {
        s.split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(str::parse)
            .collect()
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .iter()
            .copied()
            .find(|m| m.id() == s)
            .ok_or_else(|| Error::invalid(format!("unknown method identifier `{s}`")))
    }
}

/// Source training data plus the labeled target training rows. Unsupervised
/// methods only use [`DomainPair::target_unlabeled`].
#[derive(Debug, Clone)]
pub struct DomainPair {
    pub xs: DMatrix<f64>,
    pub ys: Vec<u8>,
    pub xt: DMatrix<f64>,
    pub yt: Vec<u8>,
}

impl DomainPair {
    pub fn new(xs: DMatrix<f64>, ys: Vec<u8>, xt: DMatrix<f64>, yt: Vec<u8>) -> Result<Self> {
        if xs.nrows() != ys.len() || xt.nrows() != yt.len() {
            return Err(Error::invalid("row and label counts differ"));
        }
        if xt.nrows() > 0 && xs.ncols() != xt.ncols() {
            return Err(Error::invalid(format!(
                "source has {} features, target has {}",
                xs.ncols(),
                xt.ncols()
            )));
        }
        if xs.nrows() == 0 {
            return Err(Error::invalid("empty source sample"));
        }
        Ok(DomainPair { xs, ys, xt, yt })
    }

    pub fn n_features(&self) -> usize {
        self.xs.ncols()
    }

    pub fn n_source(&self) -> usize {
        self.xs.nrows()
    }

    pub fn n_target(&self) -> usize {
        self.xt.nrows()
    }

    pub fn target_unlabeled(&self) -> &DMatrix<f64> {
        &self.xt
    }

    /// Supervised methods need at least two labeled target rows covering
    /// both classes.
    pub(crate) fn require_supervised_target(&self, method: Method) -> Result<()> {
        let ones = self.yt.iter().filter(|&&v| v == 1).count();
        let zeros = self.yt.len() - ones;
        if ones == 0 || zeros == 0 {
            return Err(Error::degenerate(format!(
                "{method} needs labeled target rows from both classes (have {zeros}/{ones})"
            )));
        }
        Ok(())
    }

    pub(crate) fn require_unlabeled_target(&self, method: Method) -> Result<()> {
        if self.xt.nrows() == 0 {
            return Err(Error::degenerate(format!("{method} needs target rows")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceWeights {
    pub w: Vec<f64>,
}

impl ImportanceWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::degenerate("importance weights must be finite and >= 0"));
        }
        if w.iter().all(|&v| v == 0.0) {
            return Err(Error::degenerate("importance weights are all zero"));
        }
        Ok(ImportanceWeights { w })
    }

    pub fn mean(&self) -> f64 {
        self.w.iter().sum::<f64>() / self.w.len() as f64
    }
}

/// How incoming target rows are mapped before the linear model is applied.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureMap {
    /// `x -> (x, 0, x)`, the target image of the three-block augmentation.
    Augmented { n_features: usize },
    /// `x -> (x, h(x))` with `h` the source-only decision function.
    Stacked { source: LinearClassifier },
    /// `x -> (x - mean_t) P_t`
    Subspace {
        target_mean: DVector<f64>,
        target_basis: DMatrix<f64>,
    },
}

impl FeatureMap {
    pub fn describe(&self) -> String {
        match self {
            FeatureMap::Augmented { n_features } => {
                format!("augmented(common,source,target) d={n_features} -> {}", 3 * n_features)
            }
            FeatureMap::Stacked { source } => {
                format!("stacked source score d={} -> {}", source.n_features(), source.n_features() + 1)
            }
            FeatureMap::Subspace { target_basis, .. } => format!(
                "target subspace d={} -> {}",
                target_basis.nrows(),
                target_basis.ncols()
            ),
        }
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self {
            FeatureMap::Augmented { n_features } => {
                check_cols(x, *n_features)?;
                Ok(augment_fa(x, false))
            }
            FeatureMap::Stacked { source } => {
                let s = source.decision_function(x)?;
                let d = x.ncols();
                let mut out = x.clone().resize_horizontally(d + 1, 0.0);
                out.column_mut(d).copy_from(&s);
                Ok(out)
            }
            FeatureMap::Subspace {
                target_mean,
                target_basis,
            } => {
                check_cols(x, target_basis.nrows())?;
                let mut c = x.clone();
                for mut row in c.row_iter_mut() {
                    row -= target_mean.transpose();
                }
                Ok(c * target_basis)
            }
        }
    }
}

fn check_cols(x: &DMatrix<f64>, d: usize) -> Result<()> {
    if x.ncols() != d {
        return Err(Error::invalid(format!("expected {d} columns, got {}", x.ncols())));
    }
    Ok(())
}

/// A fitted model for the target domain plus its provenance.
#[derive(Debug, Clone)]
pub struct AdaptedModel {
    pub method: Method,
    /// The linear model applied after `feature_map`; for boosted methods the
    /// final-round member.
    pub model: LinearClassifier,
    pub hyperparams: BTreeMap<String, String>,
    pub weights: Option<ImportanceWeights>,
    pub feature_map: Option<FeatureMap>,
    /// Weighted vote members (model, vote weight) for boosted methods.
    pub ensemble: Option<Vec<(LinearClassifier, f64)>>,
    pub warnings: Vec<String>,
}

impl AdaptedModel {
    fn plain(method: Method, model: LinearClassifier, params: &MethodParams) -> Self {
        AdaptedModel {
            method,
            model,
            hyperparams: params.relevant(method),
            weights: None,
            feature_map: None,
            ensemble: None,
            warnings: Vec::new(),
        }
    }

    /// Target-domain decision scores; positive means class 1.
    pub fn decision_target(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        let mapped;
        let x = match &self.feature_map {
            Some(map) => {
                mapped = map.apply(x)?;
                &mapped
            }
            None => x,
        };
        match &self.ensemble {
            Some(members) => {
                let mut score = DVector::zeros(x.nrows());
                for (m, a) in members {
                    let s = m.decision_function(x)?;
                    for i in 0..x.nrows() {
                        score[i] += a * (f64::from(label_of(s[i])) - 0.5);
                    }
                }
                Ok(score)
            }
            None => self.model.decision_function(x),
        }
    }

    pub fn predict_target(&self, x: &DMatrix<f64>) -> Result<Vec<u8>> {
        Ok(self.decision_target(x)?.iter().map(|&s| label_of(s)).collect())
    }
}

pub(crate) fn vstack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    if b.nrows() == 0 {
        return a.clone();
    }
    let (na, nb) = (a.nrows(), b.nrows());
    let mut out = DMatrix::zeros(na + nb, a.ncols());
    out.rows_mut(0, na).copy_from(a);
    out.rows_mut(na, nb).copy_from(b);
    out
}

fn concat<T: Copy>(a: &[T], b: &[T]) -> Vec<T> {
    let mut v = a.to_vec();
    v.extend_from_slice(b);
    v
}

/// Source-only fit. Ignores the target entirely.
pub fn baseline(pair: &DomainPair, cfg: &FitConfig) -> Result<AdaptedModel> {
    let m = fit_logistic(&pair.xs, &pair.ys, &vec![1.0; pair.n_source()], cfg)?;
    Ok(AdaptedModel::plain(Method::Baseline, m, &MethodParams::default()))
}

/// Fit on the row concatenation of source and target training data.
pub fn naive(pair: &DomainPair, cfg: &FitConfig) -> Result<AdaptedModel> {
    let x = vstack(&pair.xs, &pair.xt);
    let y = concat(&pair.ys, &pair.yt);
    let m = fit_logistic(&x, &y, &vec![1.0; x.nrows()], cfg)?;
    Ok(AdaptedModel::plain(Method::Naive, m, &MethodParams::default()))
}

/// Fit on target training rows alone.
pub fn target_only(pair: &DomainPair, cfg: &FitConfig) -> Result<LinearClassifier> {
    fit_logistic(&pair.xt, &pair.yt, &vec![1.0; pair.n_target()], cfg)
}

/// Per-row weights of the balanced mixture `(1 - gamma) * mean source loss +
/// gamma * mean target loss`, rescaled by `1 / ((1-gamma)/ns + gamma/nt)` so
/// that the endpoints reproduce the unit-weight source-only and target-only
/// fits exactly.
pub fn bw_weights(gamma: f64, ns: usize, nt: usize) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::invalid(format!("gamma must lie in [0,1], got {gamma}")));
    }
    let (ns, nt) = (ns as f64, nt as f64);
    let scale = 1.0 / ((1.0 - gamma) / ns + gamma / nt);
    Ok(((1.0 - gamma) / ns * scale, gamma / nt * scale))
}

pub fn bw(pair: &DomainPair, gamma: f64, cfg: &FitConfig) -> Result<AdaptedModel> {
    let (ws, wt) = bw_weights(gamma, pair.n_source(), pair.n_target().max(1))?;
    if gamma > 0.0 {
        pair.require_supervised_target(Method::Bw)?;
    }
    let x = vstack(&pair.xs, &pair.xt);
    let y = concat(&pair.ys, &pair.yt);
    let mut w = vec![ws; pair.n_source()];
    w.extend(std::iter::repeat_n(wt, pair.n_target()));
    let m = fit_logistic(&x, &y, &w, cfg)?;
    let mut out = AdaptedModel::plain(Method::Bw, m, &MethodParams::default());
    out.hyperparams.insert("bw.gamma".into(), gamma.to_string());
    Ok(out)
}

/// Ridge regression of the target labels (coded -1/+1) shrunk toward the
/// source model: `theta_t = (Z'Z + lambda I)^-1 (Z'y + lambda theta_s)` with
/// `Z` the target rows, augmented by a constant column when
/// `fit_intercept` is set so the intercept is shrunk toward the source
/// intercept as well.
pub fn rtlc_transfer(
    source: &LinearClassifier,
    xt: &DMatrix<f64>,
    yt: &[u8],
    lambda: f64,
    fit_intercept: bool,
) -> Result<LinearClassifier> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("lambda must be >= 0, got {lambda}")));
    }
    let d = source.n_features();
    check_cols(xt, d)?;
    if xt.nrows() != yt.len() {
        return Err(Error::invalid("target rows and labels differ in length"));
    }
    let p = d + usize::from(fit_intercept);
    let n = xt.nrows();
    let mut z = DMatrix::zeros(n, p);
    z.columns_mut(0, d).copy_from(xt);
    if fit_intercept {
        z.column_mut(d).fill(1.0);
    }
    let y = DVector::from_iterator(n, yt.iter().map(|&v| if v == 1 { 1.0 } else { -1.0 }));
    let mut theta_s = DVector::zeros(p);
    theta_s.rows_mut(0, d).copy_from_slice(&source.beta);
    if fit_intercept {
        theta_s[d] = source.intercept;
    }
    let theta = if n < p && lambda > 0.0 {
        // Woodbury form: theta_s + Z'(ZZ' + lambda I)^-1 (y - Z theta_s)
        let mut g = &z * z.transpose();
        for i in 0..n {
            g[(i, i)] += lambda;
        }
        let resid = &y - &z * &theta_s;
        let alpha = g
            .cholesky()
            .ok_or_else(|| Error::Singular("RTLC Gram system".into()))?
            .solve(&resid);
        &theta_s + z.transpose() * alpha
    } else {
        let mut a = z.transpose() * &z;
        for j in 0..p {
            a[(j, j)] += lambda;
        }
        let rhs = z.transpose() * &y + &theta_s * lambda;
        solve_spd(a, rhs).ok_or_else(|| {
            Error::Singular("RTLC normal equations are singular (lambda = 0 with rank-deficient target data)".into())
        })?
    };
    Ok(LinearClassifier {
        beta: theta.rows(0, d).iter().copied().collect(),
        intercept: if fit_intercept { theta[d] } else { 0.0 },
    })
}

/// Cholesky solve with a rank check; `None` when the system is singular.
pub(crate) fn solve_spd(a: DMatrix<f64>, rhs: DVector<f64>) -> Option<DVector<f64>> {
    let scale = a.diagonal().amax().max(1e-300);
    let ch = a.cholesky()?;
    let l = ch.l_dirty();
    let min_pivot = l.diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if min_pivot * min_pivot < scale * 1e-13 {
        return None;
    }
    let s = ch.solve(&rhs);
    s.iter().all(|v| v.is_finite()).then_some(s)
}

pub fn rtlc(pair: &DomainPair, params: &MethodParams, cfg: &FitConfig) -> Result<AdaptedModel> {
    pair.require_supervised_target(Method::Rtlc)?;
    let source = fit_logistic(&pair.xs, &pair.ys, &vec![1.0; pair.n_source()], cfg)?;
    rtlc_from_source(&source, pair, params)
}

/// RTLC starting from an already fitted source model.
pub fn rtlc_from_source(
    source: &LinearClassifier,
    pair: &DomainPair,
    params: &MethodParams,
) -> Result<AdaptedModel> {
    let m = rtlc_transfer(
        source,
        &pair.xt,
        &pair.yt,
        params.rtlc_lambda,
        params.rtlc_fit_intercept,
    )?;
    Ok(AdaptedModel::plain(Method::Rtlc, m, params))
}

/// Fits the final weighted logistic model for an instance-weighting method.
pub(crate) fn weighted_fit(
    method: Method,
    pair: &DomainPair,
    weights: Vec<f64>,
    params: &MethodParams,
    cfg: &FitConfig,
) -> Result<AdaptedModel> {
    let iw = ImportanceWeights::new(weights)?;
    let m = fit_logistic(&pair.xs, &pair.ys, &iw.w, cfg)?;
    let mut out = AdaptedModel::plain(method, m, params);
    out.weights = Some(iw);
    Ok(out)
}

/// Runs one method by identifier.
pub fn adapt(
    method: Method,
    pair: &DomainPair,
    params: &MethodParams,
    cfg: &FitConfig,
) -> Result<AdaptedModel> {
    match method {
        Method::Baseline => baseline(pair, cfg),
        Method::Naive => naive(pair, cfg),
        Method::Bw => bw(pair, params.bw_gamma, cfg),
        Method::Rtlc => rtlc(pair, params, cfg),
        Method::Kmm => kmm(pair, params, cfg),
        Method::TrAdaBoost => tradaboost(pair, params.tradaboost_rounds, cfg).map(|(m, _)| m),
        Method::Fa => fa(pair, cfg),
        Method::Pred => pred(pair, cfg),
        Method::Ulsif => ulsif(pair, params, cfg),
        Method::Nnw => nnw(pair, params.nnw_radius, cfg),
        Method::Rulsif => rulsif(pair, params, cfg),
        Method::Sa => sa(pair, params.sa_dim, cfg),
        Method::Iwn => iwn(pair, params, cfg),
    }
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use crate::rng::{rng_from_seed, standard_normal};

    /// Two Gaussian classes at +/- `sep` along the first axis; the target is
    /// shifted by `shift` along every axis.
    pub fn gaussian_pair(seed: u64, ns: usize, nt: usize, d: usize, sep: f64, shift: f64) -> DomainPair {
        let mut rng = rng_from_seed(seed);
        let mut draw = |n: usize, shift: f64| {
            let y: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
            let x = DMatrix::from_fn(n, d, |i, j| {
                let mu = if j == 0 { if y[i] == 1 { sep } else { -sep } } else { 0.0 };
                mu + shift + standard_normal(&mut rng)
            });
            (x, y)
        };
        let (xs, ys) = draw(ns, 0.0);
        let (xt, yt) = draw(nt, shift);
        DomainPair::new(xs, ys, xt, yt).unwrap()
    }
}
