//! Mask-renormalized Gaussian smoothing and the variance-smoothed one-sample
//! pseudo-t statistic.

use crate::error::{Error, Result};
use crate::volume::BrainMask;

/// Magnitude given to the statistic at voxels with zero smoothed variance
/// and a nonzero mean.
pub const SATURATED_T: f64 = 1e6;

/// Separable Gaussian smoother on a masked grid. Each axis kernel is
/// truncated at three standard deviations; smoothed values are
/// `conv(x * mask) / conv(mask)` so voxels near the mask edge are not pulled
/// toward zero.
#[derive(Debug, Clone)]
pub struct MaskedSmoother {
    mask: BrainMask,
    kernels: [Vec<f64>; 3],
    /// `conv(mask)` at each masked voxel.
    norm: Vec<f64>,
}

fn axis_kernel(sigma_vox: f64) -> Vec<f64> {
    if sigma_vox <= 0.0 {
        return vec![1.0];
    }
    let r = (3.0 * sigma_vox).floor() as i64;
    (-r..=r)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma_vox * sigma_vox)).exp())
        .collect()
}

impl MaskedSmoother {
    pub fn new(mask: &BrainMask, sigma_mm: f64) -> Result<Self> {
        if !(sigma_mm >= 0.0 && sigma_mm.is_finite()) {
            return Err(Error::invalid(format!("sigma must be >= 0, got {sigma_mm}")));
        }
        let vs = mask.grid().voxel_size_mm;
        let kernels = [0, 1, 2].map(|a| axis_kernel(sigma_mm / vs[a]));
        let mut s = MaskedSmoother {
            mask: mask.clone(),
            kernels,
            norm: Vec::new(),
        };
        let ones = vec![1.0; mask.n_masked()];
        s.norm = s.convolve_masked(&ones);
        Ok(s)
    }

    pub fn is_identity(&self) -> bool {
        self.kernels.iter().all(|k| k.len() == 1)
    }

    fn convolve_masked(&self, values: &[f64]) -> Vec<f64> {
        let mut vol = self.mask.scatter(values, 0.0);
        let dims = self.mask.grid().dims;
        let stride = [1, dims[0], dims[0] * dims[1]];
        let mut tmp = vec![0.0; vol.len()];
        for axis in 0..3 {
            let k = &self.kernels[axis];
            if k.len() == 1 {
                continue;
            }
            let r = (k.len() / 2) as i64;
            let n_axis = dims[axis] as i64;
            for (lin, t) in tmp.iter_mut().enumerate() {
                let pos = ((lin / stride[axis]) % dims[axis]) as i64;
                let mut acc = 0.0;
                for (j, &w) in k.iter().enumerate() {
                    let q = pos + j as i64 - r;
                    if q < 0 || q >= n_axis {
                        continue;
                    }
                    let other = (lin as i64 + (q - pos) * stride[axis] as i64) as usize;
                    acc += w * vol[other];
                }
                *t = acc;
            }
            std::mem::swap(&mut vol, &mut tmp);
        }
        self.mask.gather(&vol)
    }

    /// Smooths a map given per masked voxel.
    pub fn smooth(&self, values: &[f64]) -> Result<Vec<f64>> {
        if values.len() != self.mask.n_masked() {
            return Err(Error::invalid(format!(
                "map has {} values, mask has {} voxels",
                values.len(),
                self.mask.n_masked()
            )));
        }
        if self.is_identity() {
            return Ok(values.to_vec());
        }
        Ok(self
            .convolve_masked(values)
            .into_iter()
            .zip(&self.norm)
            .map(|(v, n)| v / n)
            .collect())
    }
}

/// Pseudo-t map plus the voxels where the smoothed variance vanished.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoT {
    pub t: Vec<f64>,
    pub zero_variance: Vec<usize>,
}

/// `t = mean / sqrt(smooth(var) / n)` from per-voxel means and sample
/// variances. Zero smoothed variance yields 0 when the mean is 0 and
/// `+/- SATURATED_T` otherwise; both cases are flagged.
pub fn pseudo_t_from_moments(mean: &[f64], var: &[f64], n: usize, smoother: &MaskedSmoother) -> Result<PseudoT> {
    let sv = smoother.smooth(var)?;
    let mut zero_variance = Vec::new();
    let t = mean
        .iter()
        .zip(&sv)
        .enumerate()
        .map(|(i, (&m, &v))| {
            // relative floor guards against rounding residue of exact zeros
            if v <= 1e-300 || v <= 1e-24 * m * m {
                zero_variance.push(i);
                if m == 0.0 {
                    0.0
                } else {
                    SATURATED_T.copysign(m)
                }
            } else {
                m / (v / n as f64).sqrt()
            }
        })
        .collect();
    Ok(PseudoT { t, zero_variance })
}

/// Per-voxel mean and unbiased sample variance across observation maps.
pub fn moments(maps: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = maps.len();
    if n < 2 {
        return Err(Error::invalid(format!("need at least 2 maps, got {n}")));
    }
    let v = maps[0].len();
    if maps.iter().any(|m| m.len() != v) {
        return Err(Error::invalid("maps differ in length"));
    }
    let mut mean = vec![0.0; v];
    for m in maps {
        for (a, x) in mean.iter_mut().zip(m) {
            *a += x;
        }
    }
    for a in &mut mean {
        *a /= n as f64;
    }
    let mut var = vec![0.0; v];
    for m in maps {
        for ((s, x), mu) in var.iter_mut().zip(m).zip(&mean) {
            *s += (x - mu) * (x - mu);
        }
    }
    for s in &mut var {
        *s /= (n - 1) as f64;
    }
    Ok((mean, var))
}

pub fn smoothed_one_sample_t(maps: &[Vec<f64>], sigma_mm: f64, mask: &BrainMask) -> Result<PseudoT> {
    let smoother = MaskedSmoother::new(mask, sigma_mm)?;
    let (mean, var) = moments(maps)?;
    if mean.len() != mask.n_masked() {
        return Err(Error::invalid("maps do not match the mask"));
    }
    pseudo_t_from_moments(&mean, &var, maps.len(), &smoother)
}
