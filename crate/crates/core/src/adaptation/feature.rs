//! Feature-space methods: three-block augmentation, prediction stacking and
//! subspace alignment.

use nalgebra::{DMatrix, DVector};

use super::{vstack, AdaptedModel, DomainPair, FeatureMap, Method, MethodParams};
use crate::error::{Error, Result};
use crate::linear::{fit_logistic, FitConfig};

/// Source rows map to `(x, x, 0)`, target rows to `(x, 0, x)`.
pub fn augment_fa(x: &DMatrix<f64>, is_source: bool) -> DMatrix<f64> {
    let (n, d) = x.shape();
    let mut out = DMatrix::zeros(n, 3 * d);
    out.columns_mut(0, d).copy_from(x);
    let block = if is_source { d } else { 2 * d };
    out.columns_mut(block, d).copy_from(x);
    out
}

pub fn fa(pair: &DomainPair, cfg: &FitConfig) -> Result<AdaptedModel> {
    pair.require_supervised_target(Method::Fa)?;
    let x = vstack(&augment_fa(&pair.xs, true), &augment_fa(&pair.xt, false));
    let mut y = pair.ys.clone();
    y.extend_from_slice(&pair.yt);
    let m = fit_logistic(&x, &y, &vec![1.0; x.nrows()], cfg)?;
    let mut out = AdaptedModel::plain(Method::Fa, m, &MethodParams::default());
    out.feature_map = Some(FeatureMap::Augmented {
        n_features: pair.n_features(),
    });
    Ok(out)
}

/// Fits a source model, appends its decision score to the target rows and
/// fits the final model on the augmented target rows alone.
pub fn pred(pair: &DomainPair, cfg: &FitConfig) -> Result<AdaptedModel> {
    pair.require_supervised_target(Method::Pred)?;
    let source = fit_logistic(&pair.xs, &pair.ys, &vec![1.0; pair.n_source()], cfg)?;
    let map = FeatureMap::Stacked { source };
    let xt = map.apply(&pair.xt)?;
    let m = fit_logistic(&xt, &pair.yt, &vec![1.0; pair.n_target()], cfg)?;
    let mut out = AdaptedModel::plain(Method::Pred, m, &MethodParams::default());
    out.feature_map = Some(map);
    Ok(out)
}

/// Column mean and the top `k` principal directions (d x k) of `x`, ordered
/// by decreasing singular value. Each direction is signed so that its
/// largest-magnitude loading is positive; ties go to the lowest index.
pub fn pca_basis(x: &DMatrix<f64>, k: usize) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (n, d) = x.shape();
    if k == 0 || k > d.min(n) {
        return Err(Error::invalid(format!(
            "subspace dimension {k} must lie in 1..={} for a {n}x{d} sample",
            d.min(n)
        )));
    }
    let mean = x.row_mean().transpose();
    let mut c = x.clone();
    for mut row in c.row_iter_mut() {
        row -= mean.transpose();
    }
    let svd = c.svd(false, true);
    let vt = svd
        .v_t
        .ok_or_else(|| Error::Singular("PCA decomposition failed".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let mut basis = DMatrix::zeros(d, k);
    for (col, &r) in order.iter().take(k).enumerate() {
        let mut v: DVector<f64> = vt.row(r).transpose();
        let mut best = 0;
        for j in 1..d {
            if v[j].abs() > v[best].abs() {
                best = j;
            }
        }
        if v[best] < 0.0 {
            v = -v;
        }
        basis.set_column(col, &v);
    }
    Ok((mean, basis))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceAlignment {
    pub source_mean: DVector<f64>,
    pub source_basis: DMatrix<f64>,
    pub target_mean: DVector<f64>,
    pub target_basis: DMatrix<f64>,
    /// `P_s' P_t`
    pub alignment: DMatrix<f64>,
}

impl SubspaceAlignment {
    pub fn fit(xs: &DMatrix<f64>, xt: &DMatrix<f64>, k: usize) -> Result<Self> {
        let (source_mean, source_basis) = pca_basis(xs, k)?;
        let (target_mean, target_basis) = pca_basis(xt, k)?;
        let alignment = source_basis.transpose() * &target_basis;
        Ok(SubspaceAlignment {
            source_mean,
            source_basis,
            target_mean,
            target_basis,
            alignment,
        })
    }

    /// `(X_s - mean_s) P_s M`
    pub fn aligned_source(&self, xs: &DMatrix<f64>) -> DMatrix<f64> {
        let mut c = xs.clone();
        for mut row in c.row_iter_mut() {
            row -= self.source_mean.transpose();
        }
        c * &self.source_basis * &self.alignment
    }
}

pub fn sa(pair: &DomainPair, dim: Option<usize>, cfg: &FitConfig) -> Result<AdaptedModel> {
    pair.require_unlabeled_target(Method::Sa)?;
    let xt = pair.target_unlabeled();
    let k = dim.unwrap_or_else(|| pair.n_features().min(pair.n_source()).min(xt.nrows()).min(100));
    let al = SubspaceAlignment::fit(&pair.xs, xt, k)?;
    let m = fit_logistic(&al.aligned_source(&pair.xs), &pair.ys, &vec![1.0; pair.n_source()], cfg)?;
    let params = MethodParams {
        sa_dim: Some(k),
        ..Default::default()
    };
    let mut out = AdaptedModel::plain(Method::Sa, m, &params);
    out.feature_map = Some(FeatureMap::Subspace {
        target_mean: al.target_mean,
        target_basis: al.target_basis,
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adaptation::testutil::gaussian_pair;
    use crate::linear::balanced_accuracy;

    #[test]
    fn augmentation_layout() {
        let x = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        assert_eq!(augment_fa(&x, true).as_slice().to_vec(), vec![1.0, 2.0, 1.0, 2.0, 0.0, 0.0]);
        let t = augment_fa(&x, false);
        assert_eq!(t.ncols(), 6);
        assert_eq!(t.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 2.0, 0.0, 0.0, 1.0, 2.0]);
    }

    #[test]
    fn fa_predicts_through_target_image() {
        let pair = gaussian_pair(3, 40, 12, 3, 1.5, 0.2);
        let m = fa(&pair, &FitConfig::default()).unwrap();
        assert_eq!(m.model.n_features(), 9);
        let direct = m.model.decision_function(&augment_fa(&pair.xt, false)).unwrap();
        assert_eq!(m.decision_target(&pair.xt).unwrap(), direct);
    }

    #[test]
    fn pred_matches_two_stage_oracle() {
        let pair = gaussian_pair(4, 40, 12, 3, 1.5, 0.3);
        let cfg = FitConfig::default();
        let m = pred(&pair, &cfg).unwrap();
        assert_eq!(m.model.n_features(), 4);
        let h = fit_logistic(&pair.xs, &pair.ys, &[1.0; 40], &cfg).unwrap();
        let s = h.decision_function(&pair.xt).unwrap();
        let mut xa = DMatrix::zeros(12, 4);
        for i in 0..12 {
            for j in 0..3 {
                xa[(i, j)] = pair.xt[(i, j)];
            }
            xa[(i, 3)] = s[i];
        }
        let oracle = fit_logistic(&xa, &pair.yt, &[1.0; 12], &cfg).unwrap();
        assert_eq!(oracle, m.model);
    }

    #[test]
    fn pred_perfect_source_gives_perfect_training_accuracy() {
        // widely separated classes: the source model separates target_train
        let pair = gaussian_pair(8, 40, 10, 2, 6.0, 0.0);
        let m = pred(&pair, &FitConfig::default()).unwrap();
        let p = m.predict_target(&pair.xt).unwrap();
        assert_eq!(balanced_accuracy(&pair.yt, &p).unwrap(), 1.0);
    }

    #[test]
    fn identical_domains_align_to_identity() {
        let pair = gaussian_pair(5, 30, 5, 4, 1.0, 0.0);
        let al = SubspaceAlignment::fit(&pair.xs, &pair.xs, 3).unwrap();
        assert!((al.alignment.clone() - DMatrix::identity(3, 3)).amax() < 1e-8);
        assert_eq!(al.aligned_source(&pair.xs).ncols(), 3);
        assert!(SubspaceAlignment::fit(&pair.xs, &pair.xt, 6).is_err());
    }

    /// Principal directions from the eigenvectors of the scatter matrix.
    #[test]
    fn aligned_source_matches_eigen_oracle() {
        let pair = gaussian_pair(6, 25, 20, 3, 1.0, 0.5);
        let k = 2;
        let oracle_basis = |x: &DMatrix<f64>| {
            let mean = x.row_mean();
            let mut c = x.clone();
            for mut r in c.row_iter_mut() {
                r -= &mean;
            }
            let eig = (c.transpose() * &c).symmetric_eigen();
            let mut idx: Vec<usize> = (0..3).collect();
            idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
            let mut p = DMatrix::zeros(3, k);
            for (col, &i) in idx.iter().take(k).enumerate() {
                let mut v = eig.eigenvectors.column(i).into_owned();
                let big = v.iter().copied().fold(0.0f64, |m, e| if e.abs() > m.abs() { e } else { m });
                if big < 0.0 {
                    v = -v;
                }
                p.set_column(col, &v);
            }
            (c, p)
        };
        let (cs, ps) = oracle_basis(&pair.xs);
        let (_, pt) = oracle_basis(&pair.xt);
        let expected = cs * &ps * (ps.transpose() * &pt);
        let al = SubspaceAlignment::fit(&pair.xs, &pair.xt, k).unwrap();
        assert!((al.aligned_source(&pair.xs) - expected).amax() < 1e-8);
    }

    #[test]
    fn sa_projects_target_rows() {
        let pair = gaussian_pair(7, 30, 12, 5, 1.0, 0.5);
        let m = sa(&pair, Some(2), &FitConfig::default()).unwrap();
        assert_eq!(m.model.n_features(), 2);
        assert_eq!(m.predict_target(&pair.xt).unwrap().len(), 12);
        assert!(sa(&pair, Some(13), &FitConfig::default()).is_err());
    }
}
