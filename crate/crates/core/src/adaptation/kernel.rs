//! RBF kernels, the MMD estimator and bandwidth heuristics shared by the
//! instance-weighting methods.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// `exp(-|a - b|^2 / (2 sigma^2))`
pub fn rbf(a: &[f64], b: &[f64], bandwidth: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-d2 / (2.0 * bandwidth * bandwidth)).exp()
}

/// Squared Euclidean distances between the rows of `a` and the rows of `b`.
pub fn squared_distances(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let na: DVector<f64> = DVector::from_iterator(a.nrows(), a.row_iter().map(|r| r.norm_squared()));
    let nb: DVector<f64> = DVector::from_iterator(b.nrows(), b.row_iter().map(|r| r.norm_squared()));
    let mut g = a * b.transpose();
    for i in 0..a.nrows() {
        for j in 0..b.nrows() {
            g[(i, j)] = (na[i] + nb[j] - 2.0 * g[(i, j)]).max(0.0);
        }
    }
    g
}

pub fn rbf_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>, bandwidth: f64) -> DMatrix<f64> {
    let scale = -1.0 / (2.0 * bandwidth * bandwidth);
    squared_distances(a, b).map(|d2| (d2 * scale).exp())
}

pub(crate) fn check_bandwidth(bandwidth: f64) -> Result<()> {
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::invalid(format!("kernel bandwidth must be > 0, got {bandwidth}")));
    }
    Ok(())
}

/// Biased (V-statistic) estimate of the squared MMD between the rows of `a`
/// (optionally weighted) and the rows of `b`:
///
/// ```text
/// (1/na^2) sum w_i w_j k(a_i,a_j) - (2/(na nb)) sum w_i k(a_i,b_j) + (1/nb^2) sum k(b_i,b_j)
/// ```
pub fn mmd_rbf(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    weights_a: Option<&[f64]>,
    bandwidth: f64,
) -> Result<f64> {
    check_bandwidth(bandwidth)?;
    if a.ncols() != b.ncols() {
        return Err(Error::invalid(format!(
            "feature dimensions differ: {} vs {}",
            a.ncols(),
            b.ncols()
        )));
    }
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(Error::invalid("MMD needs nonempty samples"));
    }
    let w = match weights_a {
        Some(w) => {
            if w.len() != a.nrows() {
                return Err(Error::invalid("weight count differs from sample count"));
            }
            DVector::from_column_slice(w)
        }
        None => DVector::from_element(a.nrows(), 1.0),
    };
    let kaa = rbf_matrix(a, a, bandwidth);
    let kab = rbf_matrix(a, b, bandwidth);
    let kbb = rbf_matrix(b, b, bandwidth);
    Ok(mmd_from_kernels(&kaa, &kab, kbb.sum(), &w))
}

/// MMD^2 with precomputed kernel blocks; `kbb_sum` is the sum of `K(b, b)`.
pub(crate) fn mmd_from_kernels(
    kaa: &DMatrix<f64>,
    kab: &DMatrix<f64>,
    kbb_sum: f64,
    w: &DVector<f64>,
) -> f64 {
    let na = kaa.nrows() as f64;
    let nb = kab.ncols() as f64;
    let aa = w.dot(&(kaa * w)) / (na * na);
    let ab = w.dot(&kab.column_sum()) / (na * nb);
    let v = aa - 2.0 * ab + kbb_sum / (nb * nb);
    v.max(0.0)
}

/// Median of the Euclidean distances between rows of `a` and rows of `b`,
/// over a deterministic strided subsample of at most `cap` rows per side.
pub fn median_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    const CAP: usize = 300;
    let sub = |m: &DMatrix<f64>| -> DMatrix<f64> {
        let n = m.nrows();
        if n <= CAP {
            return m.clone();
        }
        let idx: Vec<usize> = (0..CAP).map(|k| k * n / CAP).collect();
        m.select_rows(&idx)
    };
    let d2 = squared_distances(&sub(a), &sub(b));
    let mut v: Vec<f64> = d2.iter().map(|x| x.sqrt()).collect();
    if v.is_empty() {
        return 1.0;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len();
    let med = if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    };
    if med > 0.0 && med.is_finite() {
        med
    } else {
        1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng_from_seed, standard_normal};

    fn random(seed: u64, n: usize, d: usize) -> DMatrix<f64> {
        let mut rng = rng_from_seed(seed);
        DMatrix::from_fn(n, d, |_, _| standard_normal(&mut rng))
    }

    #[test]
    fn identical_sets_have_zero_mmd() {
        let a = random(1, 8, 3);
        assert!(mmd_rbf(&a, &a, None, 1.3).unwrap() < 1e-12);
    }

    #[test]
    fn singletons_follow_closed_form() {
        let a = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        let b = DMatrix::from_row_slice(1, 2, &[1.0, -1.0]);
        let k = rbf(&[0.0, 1.0], &[1.0, -1.0], 0.8);
        let m = mmd_rbf(&a, &b, None, 0.8).unwrap();
        assert!((m - 2.0 * (1.0 - k)).abs() < 1e-12);
    }

    #[test]
    fn matches_double_loop() {
        let a = random(2, 5, 2);
        let b = random(3, 5, 2);
        let w = [0.5, 1.5, 1.0, 0.2, 1.8];
        let s = 0.9;
        let row = |m: &DMatrix<f64>, i: usize| -> Vec<f64> { m.row(i).iter().copied().collect() };
        let mut aa = 0.0;
        let mut ab = 0.0;
        let mut bb = 0.0;
        for i in 0..5 {
            for j in 0..5 {
                aa += w[i] * w[j] * rbf(&row(&a, i), &row(&a, j), s);
                ab += w[i] * rbf(&row(&a, i), &row(&b, j), s);
                bb += rbf(&row(&b, i), &row(&b, j), s);
            }
        }
        let oracle = aa / 25.0 - 2.0 * ab / 25.0 + bb / 25.0;
        let got = mmd_rbf(&a, &b, Some(&w), s).unwrap();
        assert!((got - oracle).abs() < 1e-12, "{got} vs {oracle}");
    }

    #[test]
    fn rejects_bad_bandwidth_and_dims() {
        let a = random(4, 3, 2);
        assert!(mmd_rbf(&a, &a, None, 0.0).is_err());
        assert!(mmd_rbf(&a, &random(5, 3, 3), None, 1.0).is_err());
    }

    #[test]
    fn median_distance_of_points_on_a_line() {
        let a = DMatrix::from_row_slice(1, 1, &[0.0]);
        let b = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 5.0]);
        assert_eq!(median_distance(&a, &b), 2.0);
    }
}
