//! Synthetic two-domain datasets with a known shift.
//!
//! Both domains draw each instance from `N(mu_y, sigma^2 I)` with class means
//! at `+/- separation/2` along a unit direction. In the target the direction
//! is rotated by `rotation_deg` toward a partner direction, the covariance is
//! scaled by `covariance_scale`, every mean moves by `offset` along the
//! all-ones direction, and each target trial has its label flipped with
//! probability `label_flip` (features still come from the original class).
//! Instances are grouped into trials of `trial_length` same-class instances;
//! trials alternate classes.


use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dataset::{Domain, SubjectDataset, TrialTable};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed, standard_normal, uniform01};
use crate::volume::{BrainMask, SampleStack, VoxelGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftDescriptor {
    #[serde(default)]
    pub rotation_deg: f64,
    #[serde(default = "one")]
    pub covariance_scale: f64,
    #[serde(default)]
    pub label_flip: f64,
    #[serde(default)]
    pub offset: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for ShiftDescriptor {
    fn default() -> Self {
        ShiftDescriptor {
            rotation_deg: 0.0,
            covariance_scale: 1.0,
            label_flip: 0.0,
            offset: 0.0,
        }
    }
}

impl ShiftDescriptor {
    pub fn is_zero(&self) -> bool {
        self.rotation_deg == 0.0 && self.covariance_scale == 1.0 && self.label_flip == 0.0 && self.offset == 0.0
    }
}

/// Generator settings. Either `n_features` (a `[d,1,1]` grid with a full
/// mask) or `dims` (a full-mask volume) must be given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    #[serde(default)]
    pub n_features: Option<usize>,
    #[serde(default)]
    pub dims: Option<[usize; 3]>,
    #[serde(default = "default_voxel")]
    pub voxel_size_mm: f64,
    /// Linear voxel indices carrying the class signal. Defaults to the first
    /// `n_informative` indices.
    #[serde(default)]
    pub informative: Option<Vec<usize>>,
    #[serde(default = "default_informative")]
    pub n_informative: usize,
    /// Indices spanning the rotation partner direction. Defaults to the
    /// `|informative|` lowest indices not in `informative`.
    #[serde(default)]
    pub rotation_partner: Option<Vec<usize>>,
    pub n_source: usize,
    pub n_target: usize,
    #[serde(default = "default_trial_length")]
    pub trial_length: usize,
    /// Distance between the two class means.
    pub separation: f64,
    #[serde(default = "one")]
    pub noise_sd: f64,
    /// Noise standard deviation of features outside the informative and
    /// partner sets; `noise_sd` when absent.
    #[serde(default)]
    pub background_sd: Option<f64>,
    /// Standard deviation of a per-trial offset shared by all instances of
    /// a trial (0 disables it).
    #[serde(default)]
    pub trial_sd: f64,
    #[serde(default)]
    pub shift: ShiftDescriptor,
}

fn default_voxel() -> f64 {
    3.0
}
fn default_informative() -> usize {
    1
}
fn default_trial_length() -> usize {
    1
}

/// Known quantities of a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Balanced accuracy of the Bayes classifier on target data.
    pub bayes_target_accuracy: f64,
    pub bayes_source_accuracy: f64,
    /// `log p_T(x) / p_S(x)` at every source instance, in instance order.
    pub log_density_ratio: Vec<f64>,
    pub source_instances: Vec<usize>,
}

impl GroundTruth {
    pub fn density_ratio(&self) -> Vec<f64> {
        self.log_density_ratio.iter().map(|v| v.exp()).collect()
    }
}

/// Class means and noise scale of one domain.
#[derive(Debug, Clone)]
struct DomainModel {
    mu0: DVector<f64>,
    mu1: DVector<f64>,
    sd: Vec<f64>,
}

impl DomainModel {
    fn log_density(&self, x: &[f64]) -> f64 {
        let log_det: f64 = self.sd.iter().map(|s| s.ln()).sum();
        let lp = |mu: &DVector<f64>| {
            let q: f64 = (0..x.len()).map(|j| ((x[j] - mu[j]) / self.sd[j]).powi(2)).sum();
            -0.5 * q - log_det
        };
        let (a, b) = (lp(&self.mu0), lp(&self.mu1));
        let m = a.max(b);
        m + (0.5 * ((a - m).exp() + (b - m).exp())).ln()
    }
}

fn unit_on(idx: &[usize], d: usize) -> DVector<f64> {
    let mut v = DVector::zeros(d);
    let s = 1.0 / (idx.len() as f64).sqrt();
    for &i in idx {
        v[i] = s;
    }
    v
}

impl SynthConfig {
    pub fn grid(&self) -> Result<VoxelGrid> {
        let dims = match (self.n_features, self.dims) {
            (Some(d), None) => [d, 1, 1],
            (None, Some(dims)) => dims,
            _ => return Err(Error::invalid("give exactly one of n_features and dims")),
        };
        VoxelGrid::isotropic(dims, self.voxel_size_mm)
    }

    fn informative_indices(&self, d: usize) -> Result<Vec<usize>> {
        let idx = match &self.informative {
            Some(v) => v.clone(),
            None => (0..self.n_informative).collect(),
        };
        if idx.is_empty() || idx.iter().any(|&i| i >= d) {
            return Err(Error::invalid(format!("informative indices must be non-empty and < {d}")));
        }
        Ok(idx)
    }

    fn partner_indices(&self, d: usize, informative: &[usize]) -> Result<Vec<usize>> {
        let idx = match &self.rotation_partner {
            Some(v) => v.clone(),
            None => (0..d).filter(|i| !informative.contains(i)).take(informative.len()).collect(),
        };
        if idx.iter().any(|i| informative.contains(i) || *i >= d) {
            return Err(Error::invalid("rotation partner must be disjoint from the informative set"));
        }
        if idx.is_empty() && self.shift.rotation_deg != 0.0 {
            return Err(Error::invalid("rotation needs at least one non-informative feature"));
        }
        Ok(idx)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid()?;
        if self.trial_length == 0 {
            return Err(Error::invalid("trial_length must be >= 1"));
        }
        if !(self.noise_sd > 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::invalid("noise_sd must be > 0 (covariance not positive definite)"));
        }
        let cs = self.shift.covariance_scale;
        if !(cs > 0.0 && cs.is_finite()) {
            return Err(Error::invalid("covariance_scale must be > 0 (covariance not positive definite)"));
        }
        if !(0.0..=1.0).contains(&self.shift.label_flip) {
            return Err(Error::invalid("label_flip must lie in [0,1]"));
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return Err(Error::invalid("separation must be a finite value >= 0"));
        }
        if self.background_sd.is_some_and(|s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::invalid("background_sd must be > 0 (covariance not positive definite)"));
        }
        if !(self.trial_sd >= 0.0) {
            return Err(Error::invalid("trial_sd must be >= 0"));
        }
        if self.n_source == 0 {
            return Err(Error::invalid("n_source must be >= 1"));
        }
        Ok(())
    }

    fn models(&self, d: usize) -> Result<(DomainModel, DomainModel)> {
        let inf = self.informative_indices(d)?;
        let partner = self.partner_indices(d, &inf)?;
        let u = unit_on(&inf, d);
        let half = self.separation / 2.0;
        let bg = self.background_sd.unwrap_or(self.noise_sd);
        let sd: Vec<f64> = (0..d)
            .map(|j| if inf.contains(&j) || partner.contains(&j) { self.noise_sd } else { bg })
            .collect();
        let cs = self.shift.covariance_scale.sqrt();
        let source = DomainModel {
            mu0: &u * -half,
            mu1: &u * half,
            sd: sd.clone(),
        };
        let th = self.shift.rotation_deg.to_radians();
        let dir = if partner.is_empty() {
            u.clone()
        } else {
            &u * th.cos() + unit_on(&partner, d) * th.sin()
        };
        let off = DVector::from_element(d, self.shift.offset / (d as f64).sqrt());
        let target = DomainModel {
            mu0: &dir * -half + &off,
            mu1: &dir * half + &off,
            sd: sd.iter().map(|s| s * cs).collect(),
        };
        Ok((source, target))
    }

    /// Bayes balanced accuracy on the target:
    /// `(1-f) Phi(delta) + f Phi(-delta)` with
    /// `delta = separation / (2 sigma sqrt(cs))`.
    pub fn bayes_target_accuracy(&self) -> f64 {
        let sd = self.noise_sd * self.shift.covariance_scale.sqrt();
        let phi = std_normal_cdf(self.separation / (2.0 * sd));
        let f = self.shift.label_flip;
        (1.0 - f) * phi + f * (1.0 - phi)
    }

    pub fn bayes_source_accuracy(&self) -> f64 {
        std_normal_cdf(self.separation / (2.0 * self.noise_sd))
    }
}

pub fn std_normal_cdf(z: f64) -> f64 {
    Normal::standard().cdf(z)
}

/// Draws the dataset and its ground truth. Deterministic per seed.
pub fn generate_synth(cfg: &SynthConfig) -> Result<(SubjectDataset, GroundTruth)> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let d = grid.n_voxels();
    let (src, tgt) = cfg.models(d)?;
    let mut data: Vec<f32> = Vec::with_capacity((cfg.n_source + cfg.n_target) * d);
    let (mut trial_ids, mut labels, mut domains) = (vec![], vec![], vec![]);
    let mut next_trial = 0u64;
    for (k, (dom, model, n)) in [(Domain::Source, &src, cfg.n_source), (Domain::Target, &tgt, cfg.n_target)]
        .into_iter()
        .enumerate()
    {
        let mut rng = rng_from_seed(derive_seed(cfg.seed, &[k as u64]));
        let n_trials = n.div_ceil(cfg.trial_length);
        let mut made = 0;
        for t in 0..n_trials {
            let class = (t % 2) as u8;
            let flip = dom == Domain::Target && cfg.shift.label_flip > 0.0 && uniform01(&mut rng) < cfg.shift.label_flip;
            let shared: Vec<f64> = if cfg.trial_sd > 0.0 {
                (0..d).map(|_| cfg.trial_sd * standard_normal(&mut rng)).collect()
            } else {
                vec![0.0; d]
            };
            let mu = if class == 1 { &model.mu1 } else { &model.mu0 };
            for _ in 0..cfg.trial_length.min(n - made) {
                for j in 0..d {
                    let v = mu[j] + shared[j] + model.sd[j] * standard_normal(&mut rng);
                    data.push(v as f32);
                }
                trial_ids.push(next_trial);
                labels.push(if flip { 1 - class } else { class });
                domains.push(dom);
                made += 1;
            }
            next_trial += 1;
        }
    }
    let n = trial_ids.len();
    let trials = TrialTable::new(trial_ids, labels, domains)?;
    let stack = SampleStack::new(grid.dims, n, data)?;
    let mask = BrainMask::full(grid);
    let ds = SubjectDataset::new(mask, stack, trials)?;

    let source_instances = ds.trials.instances(Domain::Source);
    let log_density_ratio = source_instances
        .iter()
        .map(|&i| {
            let x: Vec<f64> = ds.samples.volume(i).iter().map(|&v| f64::from(v)).collect();
            tgt.log_density(&x) - src.log_density(&x)
        })
        .collect();
    let truth = GroundTruth {
        bayes_target_accuracy: cfg.bayes_target_accuracy(),
        bayes_source_accuracy: cfg.bayes_source_accuracy(),
        log_density_ratio,
        source_instances,
    };
    Ok((ds, truth))
}

/// Half-width of a `z`-sigma normal interval around a proportion estimate.
pub fn proportion_halfwidth(p: f64, n: usize, z: f64) -> f64 {
    z * (p * (1.0 - p) / n as f64).sqrt()
}
