//! Sign-flip permutation tests with family-wise error control through the
//! distribution of the map-wide maximum.

use serde::{Deserialize, Serialize};

use super::smoothing::{pseudo_t_from_moments, MaskedSmoother};
use super::tfce::{Tfce, TfceConfig};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::rng::{derive_seed, rng_from_seed};
use crate::volume::BrainMask;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PermutationConfig {
    pub n_perm: usize,
    pub sigma_mm: f64,
    pub seed: u64,
}

/// FWE-corrected p-values per masked voxel plus the run metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct PValueMap {
    pub mask: BrainMask,
    pub p: Vec<f64>,
    /// Observed enhanced statistic per masked voxel.
    pub observed: Vec<f64>,
    /// Number of sign patterns in the null distribution, identity included.
    pub n_permutations: usize,
    pub exhaustive: bool,
    pub sigma_mm: f64,
    pub seed: u64,
    /// Masked voxels whose smoothed variance was zero in the observed data.
    pub zero_variance: Vec<usize>,
}

impl PValueMap {
    pub fn min_p(&self) -> f64 {
        self.p.iter().copied().fold(1.0, f64::min)
    }

    pub fn significant(&self, alpha: f64) -> Vec<usize> {
        (0..self.p.len()).filter(|&i| self.p[i] < alpha).collect()
    }
}

/// Observation maps plus the smoothing and enhancement operators shared by
/// every sign pattern.
struct FlipContext<'a> {
    maps: &'a [Vec<f64>],
    smoother: MaskedSmoother,
    tfce: Tfce,
}

impl FlipContext<'_> {
    fn statistic(&self, signs: &[f64]) -> Result<(Vec<f64>, Vec<usize>)> {
        let n = self.maps.len() as f64;
        let v = self.maps[0].len();
        let mut mean = vec![0.0; v];
        for (m, &s) in self.maps.iter().zip(signs) {
            for (a, x) in mean.iter_mut().zip(m) {
                *a += s * x;
            }
        }
        for a in &mut mean {
            *a /= n;
        }
        // two passes: a sum-of-squares shortcut leaves rounding residue
        // where the maps are constant
        let mut var = vec![0.0; v];
        for (m, &s) in self.maps.iter().zip(signs) {
            for ((a, x), mu) in var.iter_mut().zip(m).zip(&mean) {
                let d = s * x - mu;
                *a += d * d;
            }
        }
        for a in &mut var {
            *a /= n - 1.0;
        }
        let pt = pseudo_t_from_moments(&mean, &var, self.maps.len(), &self.smoother)?;
        Ok((self.tfce.enhance(&pt.t)?, pt.zero_variance))
    }
}

fn signs_from_bits(bits: u64, n: usize) -> Vec<f64> {
    (0..n).map(|i| if bits >> i & 1 == 1 { -1.0 } else { 1.0 }).collect()
}

/// One-sided sign-flip test on `maps` (one centered map per observation,
/// values per masked voxel). The statistic is TFCE of the variance-smoothed
/// pseudo-t. With `2^n <= n_perm + 1` all sign patterns are enumerated and
/// `p = #{max >= observed} / 2^n`; otherwise `n_perm` random patterns are
/// drawn and `p = (1 + #{max >= observed}) / (n_perm + 1)`.
pub fn sign_flip_permutation_test(
    maps: &[Vec<f64>],
    mask: &BrainMask,
    cfg: &PermutationConfig,
    tfce_cfg: TfceConfig,
    exec: Execution,
) -> Result<PValueMap> {
    let n = maps.len();
    if n < 2 {
        return Err(Error::invalid(format!("permutation test needs >= 2 observations, got {n}")));
    }
    if cfg.n_perm < 1 {
        return Err(Error::invalid("n_perm must be >= 1"));
    }
    let v = mask.n_masked();
    if maps.iter().any(|m| m.len() != v) {
        return Err(Error::invalid(format!("every map must have {v} masked values")));
    }
    if maps.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::invalid("maps must be finite"));
    }
    let ctx = FlipContext {
        maps,
        smoother: MaskedSmoother::new(mask, cfg.sigma_mm)?,
        tfce: Tfce::new(mask, tfce_cfg)?,
    };
    let (observed, zero_variance) = ctx.statistic(&vec![1.0; n])?;

    let exhaustive = n < 63 && (1u64 << n) <= cfg.n_perm as u64 + 1;
    let maxima: Vec<f64> = if exhaustive {
        exec.try_map(1usize << n, |b| {
            let (s, _) = ctx.statistic(&signs_from_bits(b as u64, n))?;
            Ok::<f64, Error>(s.into_iter().fold(0.0, f64::max))
        })?
    } else {
        exec.try_map(cfg.n_perm, |k| {
            let mut rng = rng_from_seed(derive_seed(cfg.seed, &[k as u64]));
            let signs: Vec<f64> = (0..n)
                .map(|_| if rand::RngCore::next_u32(&mut rng) & 1 == 1 { -1.0 } else { 1.0 })
                .collect();
            let (s, _) = ctx.statistic(&signs)?;
            Ok::<f64, Error>(s.into_iter().fold(0.0, f64::max))
        })?
    };
    let (extra, total) = if exhaustive {
        (0.0, maxima.len() as f64)
    } else {
        (1.0, cfg.n_perm as f64 + 1.0)
    };
    let p = observed
        .iter()
        .map(|&o| {
            let count = maxima.iter().filter(|&&m| m >= o).count() as f64;
            ((extra + count) / total).min(1.0)
        })
        .collect();
    Ok(PValueMap {
        mask: mask.clone(),
        p,
        observed,
        n_permutations: total as usize,
        exhaustive,
        sigma_mm: cfg.sigma_mm,
        seed: cfg.seed,
        zero_variance,
    })
}

/// Within-subject variant: the rows of a partition x voxel matrix of
/// centered accuracies play the role of observations.
pub fn per_subject_permutation_test(
    per_partition: &[Vec<f64>],
    mask: &BrainMask,
    cfg: &PermutationConfig,
    tfce_cfg: TfceConfig,
    exec: Execution,
) -> Result<PValueMap> {
    if per_partition.len() < 2 {
        return Err(Error::invalid("per-subject test needs >= 2 partitions"));
    }
    sign_flip_permutation_test(per_partition, mask, cfg, tfce_cfg, exec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::standard_normal;
    use crate::volume::VoxelGrid;

    fn mask(n: usize) -> BrainMask {
        BrainMask::full(VoxelGrid::isotropic([n, n, n], 3.0).unwrap())
    }

    fn noise_maps(seed: u64, n: usize, v: usize, shift: f64) -> Vec<Vec<f64>> {
        let mut rng = rng_from_seed(seed);
        (0..n)
            .map(|_| (0..v).map(|_| shift + standard_normal(&mut rng)).collect())
            .collect()
    }

    fn cfg(n_perm: usize, seed: u64) -> PermutationConfig {
        PermutationConfig {
            n_perm,
            sigma_mm: 3.0,
            seed,
        }
    }

    #[test]
    fn three_subjects_are_enumerated() {
        let m = mask(3);
        let maps = noise_maps(1, 3, 27, 0.5);
        let r = sign_flip_permutation_test(&maps, &m, &cfg(100, 1), TfceConfig::default(), Execution::Sequential).unwrap();
        assert!(r.exhaustive);
        assert_eq!(r.n_permutations, 8);
        for &p in &r.p {
            let k = p * 8.0;
            assert!((k - k.round()).abs() < 1e-12 && k >= 1.0);
        }
    }

    #[test]
    fn strong_signal_reaches_the_floor() {
        let m = mask(4);
        let maps = noise_maps(2, 12, 64, 5.0);
        let r = sign_flip_permutation_test(&maps, &m, &cfg(99, 3), TfceConfig::default(), Execution::Sequential).unwrap();
        assert!(!r.exhaustive);
        assert_eq!(r.min_p(), 1.0 / 100.0);
        assert!(r.p.iter().all(|&p| p >= 1.0 / 100.0));
    }

    #[test]
    fn constant_positive_maps_are_all_at_minimum() {
        let m = mask(3);
        let maps = vec![vec![0.3; 27]; 20];
        let r = per_subject_permutation_test(&maps, &m, &cfg(50, 4), TfceConfig::default(), Execution::Sequential).unwrap();
        assert_eq!(r.zero_variance.len(), 27);
        assert!(r.p.iter().all(|&p| p == 1.0 / 51.0));
    }

    #[test]
    fn execution_modes_agree() {
        let m = mask(3);
        let maps = noise_maps(5, 10, 27, 0.3);
        let a = sign_flip_permutation_test(&maps, &m, &cfg(60, 9), TfceConfig::default(), Execution::Sequential).unwrap();
        let b = sign_flip_permutation_test(&maps, &m, &cfg(60, 9), TfceConfig::default(), Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn input_errors() {
        let m = mask(2);
        let one = noise_maps(6, 1, 8, 0.0);
        assert!(sign_flip_permutation_test(&one, &m, &cfg(10, 0), TfceConfig::default(), Execution::Sequential).is_err());
        let two = noise_maps(6, 2, 8, 0.0);
        assert!(sign_flip_permutation_test(&two, &m, &cfg(0, 0), TfceConfig::default(), Execution::Sequential).is_err());
    }
}
