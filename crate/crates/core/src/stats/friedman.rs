//! Aligned-ranks Friedman test, Shaffer post-hoc correction and the summaries
//! built on them.

use nalgebra::DMatrix;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Partitions x methods matrix of balanced accuracies. Cells of failed fits
/// hold NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultsTable {
    pub methods: Vec<String>,
    pub values: DMatrix<f64>,
}

impl ResultsTable {
    pub fn new(methods: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        if methods.len() != values.ncols() {
            return Err(Error::invalid(format!(
                "{} method names for {} columns",
                methods.len(),
                values.ncols()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_nan() && !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("table entry {v} outside [0,1]")));
        }
        Ok(ResultsTable { methods, values })
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    /// Rows without NaN cells.
    pub fn complete_rows(&self) -> DMatrix<f64> {
        let keep: Vec<usize> = (0..self.n_rows())
            .filter(|&r| self.values.row(r).iter().all(|v| v.is_finite()))
            .collect();
        self.values.select_rows(&keep)
    }

    /// Column means over finite cells.
    pub fn column_means(&self) -> Vec<f64> {
        self.values
            .column_iter()
            .map(|c| {
                let f: Vec<f64> = c.iter().copied().filter(|v| v.is_finite()).collect();
                f.iter().sum::<f64>() / f.len() as f64
            })
            .collect()
    }

    /// Row concatenation of tables with the same columns.
    pub fn vstack(tables: &[ResultsTable]) -> Result<ResultsTable> {
        let first = tables.first().ok_or_else(|| Error::invalid("no tables to stack"))?;
        let rows: usize = tables.iter().map(|t| t.n_rows()).sum();
        let mut values = DMatrix::zeros(rows, first.methods.len());
        let mut r = 0;
        for t in tables {
            if t.methods != first.methods {
                return Err(Error::invalid("tables have different method columns"));
            }
            values.rows_mut(r, t.n_rows()).copy_from(&t.values);
            r += t.n_rows();
        }
        Ok(ResultsTable {
            methods: first.methods.clone(),
            values,
        })
    }
}

/// Mid-ranks of `v`, rank 1 for the largest value.
pub fn descending_midranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[b].total_cmp(&v[a]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = mid;
        }
        i = j + 1;
    }
    ranks
}

#[derive(Debug, Clone, PartialEq)]
pub struct FriedmanResult {
    pub statistic: f64,
    pub p_value: f64,
    /// Mean aligned rank per column; 1 is best.
    pub avg_ranks: Vec<f64>,
    pub n_rows: usize,
}

/// Aligned-ranks Friedman test on an n x k matrix (rows are blocks).
///
/// Each row's mean is subtracted, all n*k aligned values are ranked jointly
/// (largest first, mid-ranks on ties) and
///
/// ```text
/// T = (k-1) [sum_j R_j^2 - (k n^2 / 4)(kn+1)^2]
///     / ([kn(kn+1)(2kn+1)] / 6 - (1/k) sum_i R_i^2)
/// ```
///
/// with column rank totals `R_j` and row rank totals `R_i`, referred to
/// chi-square with k-1 degrees of freedom.
pub fn friedman_aligned_ranks(x: &DMatrix<f64>) -> Result<FriedmanResult> {
    let (n, k) = x.shape();
    if n < 2 || k < 2 {
        return Err(Error::invalid(format!("aligned Friedman needs n >= 2 and k >= 2, got {n}x{k}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("aligned Friedman needs finite entries"));
    }
    let mut aligned = Vec::with_capacity(n * k);
    for r in 0..n {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / k as f64;
        aligned.extend(row.iter().map(|v| v - mean));
    }
    let ranks = descending_midranks(&aligned);
    let mut col = vec![0.0; k];
    let mut row_sq = 0.0;
    for r in 0..n {
        let mut rs = 0.0;
        for c in 0..k {
            col[c] += ranks[r * k + c];
            rs += ranks[r * k + c];
        }
        row_sq += rs * rs;
    }
    let (nf, kf) = (n as f64, k as f64);
    let big = kf * nf;
    let avg_ranks: Vec<f64> = col.iter().map(|c| c / nf).collect();
    let all_tied = aligned.iter().all(|&v| v == aligned[0]);
    let num = (kf - 1.0) * (col.iter().map(|c| c * c).sum::<f64>() - kf * nf * nf / 4.0 * (big + 1.0).powi(2));
    let den = big * (big + 1.0) * (2.0 * big + 1.0) / 6.0 - row_sq / kf;
    if all_tied || !(den > 0.0) {
        return Ok(FriedmanResult {
            statistic: 0.0,
            p_value: 1.0,
            avg_ranks,
            n_rows: n,
        });
    }
    let statistic = (num / den).max(0.0);
    let chi = ChiSquared::new(kf - 1.0).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(FriedmanResult {
        statistic,
        p_value: chi.sf(statistic),
        avg_ranks,
        n_rows: n,
    })
}

/// Set of attainable numbers of simultaneously true hypotheses among all
/// pairwise comparisons of `k` methods, ascending.
pub fn shaffer_true_sets(k: usize) -> Vec<usize> {
    let mut memo: Vec<Vec<usize>> = vec![vec![0], vec![0]];
    for kk in 2..=k {
        let mut s = std::collections::BTreeSet::new();
        for j in 1..=kk {
            let c = j * (j - 1) / 2;
            for &x in &memo[kk - j] {
                s.insert(c + x);
            }
        }
        memo.push(s.into_iter().collect());
    }
    memo[k.max(1)].clone()
}

/// Shaffer multipliers `t_1..t_m` for the sorted p-values of all pairwise
/// hypotheses among `k` methods.
pub fn shaffer_multipliers(k: usize) -> Vec<usize> {
    let m = k * (k - 1) / 2;
    let sets = shaffer_true_sets(k);
    (1..=m)
        .map(|i| sets.iter().copied().filter(|&s| s <= m - i + 1).max().unwrap_or(0))
        .collect()
}

/// Step-down adjustment of `m = k(k-1)/2` raw p-values with the given
/// multipliers: `adj_(i) = min(1, max_{j <= i} t_j p_(j))`.
pub fn step_down_adjust(raw: &[f64], multipliers: &[usize]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| raw[a].total_cmp(&raw[b]).then(a.cmp(&b)));
    let mut adj = vec![0.0; raw.len()];
    let mut running: f64 = 0.0;
    for (i, &o) in order.iter().enumerate() {
        running = running.max((multipliers[i] as f64 * raw[o]).min(1.0));
        adj[o] = running;
    }
    adj
}

pub fn shaffer_adjust(raw: &[f64], k: usize) -> Result<Vec<f64>> {
    let m = k * (k - 1) / 2;
    if raw.len() != m {
        return Err(Error::invalid(format!("expected {m} p-values for k = {k}, got {}", raw.len())));
    }
    Ok(step_down_adjust(raw, &shaffer_multipliers(k)))
}

pub fn bonferroni_adjust(raw: &[f64]) -> Vec<f64> {
    raw.iter().map(|p| (p * raw.len() as f64).min(1.0)).collect()
}

/// Pairwise comparison of aligned average ranks with the normal
/// approximation `z = (R_i - R_j) / sqrt(k (n + 1) / 6)`, Shaffer-adjusted.
/// Returns the symmetric k x k matrix of adjusted p-values (unit diagonal).
pub fn shaffer_posthoc(avg_ranks: &[f64], n: usize) -> Result<DMatrix<f64>> {
    let k = avg_ranks.len();
    if k < 2 {
        return Err(Error::invalid("post-hoc comparison needs k >= 2"));
    }
    let se = (k as f64 * (n as f64 + 1.0) / 6.0).sqrt();
    let normal = Normal::standard();
    let mut pairs = Vec::new();
    let mut raw = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            let z = (avg_ranks[i] - avg_ranks[j]).abs() / se;
            pairs.push((i, j));
            raw.push((2.0 * normal.sf(z)).min(1.0));
        }
    }
    let adj = shaffer_adjust(&raw, k)?;
    let mut out = DMatrix::from_element(k, k, 1.0);
    for (&(i, j), &p) in pairs.iter().zip(&adj) {
        out[(i, j)] = p;
        out[(j, i)] = p;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankSummary {
    pub methods: Vec<String>,
    pub avg_ranks: Vec<f64>,
    pub statistic: f64,
    pub p_value: f64,
    pub adjusted_p: DMatrix<f64>,
    pub n_rows: usize,
    /// Rows dropped because they held a failed (NaN) cell.
    pub n_dropped: usize,
}

impl RankSummary {
    pub fn from_table(table: &ResultsTable) -> Result<Self> {
        let x = table.complete_rows();
        let fr = friedman_aligned_ranks(&x)?;
        let adjusted_p = shaffer_posthoc(&fr.avg_ranks, fr.n_rows)?;
        Ok(RankSummary {
            methods: table.methods.clone(),
            avg_ranks: fr.avg_ranks,
            statistic: fr.statistic,
            p_value: fr.p_value,
            adjusted_p,
            n_rows: fr.n_rows,
            n_dropped: table.n_rows() - x.nrows(),
        })
    }

    /// Method indices from best to worst average rank.
    pub fn order(&self) -> Vec<usize> {
        let mut o: Vec<usize> = (0..self.methods.len()).collect();
        o.sort_by(|&a, &b| self.avg_ranks[a].total_cmp(&self.avg_ranks[b]).then(a.cmp(&b)));
        o
    }

    /// Maximal runs of rank-adjacent methods whose pairwise differences are
    /// all non-significant at `alpha`, as index lists in rank order. Runs of
    /// length one are omitted.
    pub fn groups(&self, alpha: f64) -> Vec<Vec<usize>> {
        let o = self.order();
        let mut runs: Vec<(usize, usize)> = Vec::new();
        for start in 0..o.len() {
            let mut end = start;
            'grow: while end + 1 < o.len() {
                for a in start..=end + 1 {
                    for b in a + 1..=end + 1 {
                        if self.adjusted_p[(o[a], o[b])] < alpha {
                            break 'grow;
                        }
                    }
                }
                end += 1;
            }
            if end > start && !runs.iter().any(|&(s, e)| s <= start && end <= e) {
                runs.push((start, end));
            }
        }
        runs.into_iter().map(|(s, e)| o[s..=e].to_vec()).collect()
    }

    pub fn best(&self) -> usize {
        self.order()[0]
    }
}

/// Cell (i, j) counts subjects in which method j was significantly better
/// than method i: adjusted p < alpha and a better (lower) average rank.
pub fn significance_frequency_table(summaries: &[RankSummary], alpha: f64) -> Result<DMatrix<u32>> {
    let first = summaries.first().ok_or_else(|| Error::invalid("no summaries"))?;
    let k = first.methods.len();
    let mut out = DMatrix::zeros(k, k);
    for s in summaries {
        if s.methods != first.methods {
            return Err(Error::invalid("summaries have different method sets"));
        }
        for i in 0..k {
            for j in 0..k {
                if i != j && s.adjusted_p[(i, j)] < alpha && s.avg_ranks[j] < s.avg_ranks[i] {
                    out[(i, j)] += 1;
                }
            }
        }
    }
    Ok(out)
}
