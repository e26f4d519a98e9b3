//! Sphere-by-sphere decoding: every masked voxel gets the mean balanced
//! accuracy, over partitions, of classifiers trained on its neighborhood.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::adaptation::{rtlc_transfer, vstack, Method, MethodParams};
use crate::dataset::SubjectDataset;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::linear::{balanced_accuracy, fit_logistic, FitConfig, LinearClassifier};
use crate::partition::PartitionPlan;
use crate::volume::{extract_sphere_features, sphere_centers, BrainMask, SphereNeighborhood};

/// Name of the extra map holding the baseline's accuracy on held-out source
/// data.
pub const SOURCE_MAP: &str = "baseline_source";

#[derive(Debug, Clone, PartialEq)]
pub struct SearchlightConfig {
    pub radius_mm: f64,
    pub methods: Vec<Method>,
    pub fit: FitConfig,
    pub params: MethodParams,
    /// Keep the partition x voxel matrices (needed for per-subject tests).
    pub keep_per_partition: bool,
}

impl Default for SearchlightConfig {
    fn default() -> Self {
        SearchlightConfig {
            radius_mm: 12.0,
            methods: vec![Method::Baseline, Method::Naive, Method::Rtlc],
            fit: FitConfig::default(),
            params: MethodParams::default(),
            keep_per_partition: true,
        }
    }
}

impl SearchlightConfig {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::invalid("searchlight needs at least one method"));
        }
        if let Some(m) = self
            .methods
            .iter()
            .find(|m| !matches!(m, Method::Baseline | Method::Naive | Method::Rtlc))
        {
            return Err(Error::invalid(format!(
                "searchlight supports baseline, naive and rtlc; got {m}"
            )));
        }
        self.fit.validate()
    }
}

/// Per-voxel mean accuracy over partitions.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    pub mask: BrainMask,
    /// One value per masked voxel; NaN when every partition failed.
    pub values: Vec<f64>,
    /// Partition x masked-voxel accuracies, NaN where a fit failed.
    pub per_partition: Option<Vec<Vec<f64>>>,
    /// Failed partitions per voxel.
    pub nan_counts: Vec<u32>,
    pub centered: bool,
}

impl ScoreMap {
    pub fn n_failed(&self) -> u64 {
        self.nan_counts.iter().map(|&c| c as u64).sum()
    }

    /// Mean over the finite values.
    pub fn grand_mean(&self) -> f64 {
        order_independent_mean(&self.values)
    }

    /// Masked rank of the largest value.
    pub fn argmax(&self) -> Option<usize> {
        (0..self.values.len())
            .filter(|&i| self.values[i].is_finite())
            .max_by(|&a, &b| self.values[a].total_cmp(&self.values[b]).then(b.cmp(&a)))
    }
}

/// Subtracts chance level (0.5) from values and per-partition entries.
/// Applying it twice subtracts 1.0.
pub fn center_scores(map: &ScoreMap) -> ScoreMap {
    let mut out = map.clone();
    for v in &mut out.values {
        *v -= 0.5;
    }
    if let Some(pp) = &mut out.per_partition {
        for row in pp {
            for v in row {
                *v -= 0.5;
            }
        }
    }
    out.centered = true;
    out
}

/// Pairwise sum of a sorted copy of the finite values, so the result does not
/// depend on the input order.
pub fn order_independent_mean(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    fn pairwise(v: &[f64]) -> f64 {
        if v.len() <= 8 {
            return v.iter().sum();
        }
        let mid = v.len() / 2;
        pairwise(&v[..mid]) + pairwise(&v[mid..])
    }
    pairwise(&v) / v.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchlightResult {
    /// Keyed by method identifier, plus [`SOURCE_MAP`] when the baseline ran.
    pub maps: BTreeMap<String, ScoreMap>,
    pub n_spheres: usize,
    pub n_partitions: usize,
}

fn score(model: &LinearClassifier, x: &DMatrix<f64>, y: &[u8]) -> Result<f64> {
    balanced_accuracy(y, &model.predict_labels(x)?)
}

/// Converts recoverable fit and metric failures into NaN.
fn or_nan(r: Result<f64>) -> Result<f64> {
    match r {
        Ok(v) => Ok(v),
        Err(e) if e.is_fit_failure() => Ok(f64::NAN),
        Err(e) => Err(e),
    }
}

/// Accuracies of every map for one sphere and one plan, in map order.
fn sphere_partition(
    feats: &DMatrix<f64>,
    labels: &[u8],
    plan: &PartitionPlan,
    cfg: &SearchlightConfig,
    names: &[String],
) -> Result<Vec<f64>> {
    let rows = |idx: &[usize]| feats.select_rows(idx);
    let lab = |idx: &[usize]| idx.iter().map(|&i| labels[i]).collect::<Vec<u8>>();
    let (xs, ys) = (rows(&plan.source_train), lab(&plan.source_train));
    let (xt, yt) = (rows(&plan.target_train), lab(&plan.target_train));
    let (xe, ye) = (rows(&plan.target_test), lab(&plan.target_test));
    let needs_source = cfg.methods.iter().any(|m| matches!(m, Method::Baseline | Method::Rtlc));
    let source = if needs_source {
        match fit_logistic(&xs, &ys, &vec![1.0; ys.len()], &cfg.fit) {
            Ok(m) => Some(Ok(m)),
            Err(e) if e.is_fit_failure() => Some(Err(e)),
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    let mut out = Vec::with_capacity(names.len());
    for name in names {
        let v = match name.as_str() {
            SOURCE_MAP => match &source {
                Some(Ok(m)) => or_nan(score(m, &rows(&plan.source_test), &lab(&plan.source_test)))?,
                _ => f64::NAN,
            },
            "baseline" => match &source {
                Some(Ok(m)) => or_nan(score(m, &xe, &ye))?,
                _ => f64::NAN,
            },
            "naive" => {
                let mut y = ys.clone();
                y.extend_from_slice(&yt);
                let x = vstack(&xs, &xt);
                or_nan(fit_logistic(&x, &y, &vec![1.0; y.len()], &cfg.fit).and_then(|m| score(&m, &xe, &ye)))?
            }
            "rtlc" => match &source {
                Some(Ok(m)) => {
                    let both = yt.contains(&0) && yt.contains(&1);
                    if !both {
                        f64::NAN
                    } else {
                        or_nan(
                            rtlc_transfer(m, &xt, &yt, cfg.params.rtlc_lambda, cfg.params.rtlc_fit_intercept)
                                .and_then(|t| score(&t, &xe, &ye)),
                        )?
                    }
                }
                _ => f64::NAN,
            },
            other => return Err(Error::invalid(format!("unknown searchlight map `{other}`"))),
        };
        out.push(v);
    }
    Ok(out)
}

fn map_names(methods: &[Method]) -> Vec<String> {
    let mut names: Vec<String> = methods.iter().map(|m| m.id().to_string()).collect();
    if methods.contains(&Method::Baseline) {
        names.push(SOURCE_MAP.to_string());
    }
    names
}

/// Runs every configured method on every sphere and plan. Spheres are
/// processed in parallel; a failed fit yields a NaN cell that is excluded
/// from the mean and counted.
pub fn run_searchlight(
    data: &SubjectDataset,
    plans: &[PartitionPlan],
    cfg: &SearchlightConfig,
    exec: Execution,
) -> Result<SearchlightResult> {
    cfg.validate()?;
    if plans.is_empty() {
        return Err(Error::invalid("searchlight needs at least one plan"));
    }
    let spheres = sphere_centers(&data.mask, cfg.radius_mm)?;
    searchlight_on_spheres(data, &spheres, plans, cfg, exec)
}

pub fn searchlight_on_spheres(
    data: &SubjectDataset,
    spheres: &[SphereNeighborhood],
    plans: &[PartitionPlan],
    cfg: &SearchlightConfig,
    exec: Execution,
) -> Result<SearchlightResult> {
    let names = map_names(&cfg.methods);
    let labels = data.trials.labels();
    // per sphere: plans x maps
    let per_sphere: Vec<Vec<Vec<f64>>> = exec.try_map(spheres.len(), |s| {
        let feats = extract_sphere_features(&data.samples, &spheres[s], &data.mask)?;
        plans
            .iter()
            .map(|p| sphere_partition(&feats, labels, p, cfg, &names))
            .collect::<Result<Vec<_>>>()
    })?;
    let mut maps = BTreeMap::new();
    for (k, name) in names.iter().enumerate() {
        let mut values = vec![f64::NAN; data.mask.n_masked()];
        let mut nan_counts = vec![0u32; data.mask.n_masked()];
        let mut pp = vec![vec![f64::NAN; data.mask.n_masked()]; plans.len()];
        for (s, sphere) in spheres.iter().enumerate() {
            let rank = data
                .mask
                .masked_rank(sphere.center_index(data.mask.grid()))
                .ok_or_else(|| Error::invalid("sphere center outside the mask"))?;
            let col: Vec<f64> = per_sphere[s].iter().map(|r| r[k]).collect();
            nan_counts[rank] = col.iter().filter(|v| v.is_nan()).count() as u32;
            values[rank] = order_independent_mean(&col);
            for (p, v) in col.into_iter().enumerate() {
                pp[p][rank] = v;
            }
        }
        maps.insert(
            name.clone(),
            ScoreMap {
                mask: data.mask.clone(),
                values,
                per_partition: cfg.keep_per_partition.then_some(pp),
                nan_counts,
                centered: false,
            },
        );
    }
    Ok(SearchlightResult {
        maps,
        n_spheres: spheres.len(),
        n_partitions: plans.len(),
    })
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use crate::dataset::{Domain, TrialTable};
    use crate::rng::{rng_from_seed, standard_normal};
    use crate::volume::{SampleStack, VoxelGrid};

    /// Noise volumes with trials of two instances; voxels in `informative`
    /// carry `+/- signal` by class in both domains.
    pub fn volume_dataset(
        seed: u64,
        n: usize,
        trials_per_class: usize,
        informative: &[usize],
        signal: f64,
    ) -> SubjectDataset {
        let grid = VoxelGrid::isotropic([n, n, n], 3.0).unwrap();
        let nv = grid.n_voxels();
        let mut rng = rng_from_seed(seed);
        let (mut t, mut l, mut d, mut data) = (vec![], vec![], vec![], vec![]);
        let mut id = 0;
        for dom in [Domain::Source, Domain::Target] {
            for label in [0u8, 1] {
                for _ in 0..trials_per_class {
                    for _ in 0..2 {
                        t.push(id);
                        l.push(label);
                        d.push(dom);
                        for v in 0..nv {
                            let mut x = standard_normal(&mut rng);
                            if informative.contains(&v) {
                                x += if label == 1 { signal } else { -signal };
                            }
                            data.push(x as f32);
                        }
                    }
                    id += 1;
                }
            }
        }
        let n_samples = t.len();
        SubjectDataset::new(
            BrainMask::full(grid),
            SampleStack::new([n, n, n], n_samples, data).unwrap(),
            TrialTable::new(t, l, d).unwrap(),
        )
        .unwrap()
    }
}
