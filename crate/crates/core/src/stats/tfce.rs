//! Threshold-free cluster enhancement over masked voxels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{BrainMask, Offset};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TfceConfig {
    pub e: f64,
    pub h: f64,
    pub n_steps: usize,
    pub connectivity: u8,
}

impl Default for TfceConfig {
    fn default() -> Self {
        TfceConfig {
            e: 0.5,
            h: 2.0,
            n_steps: 100,
            connectivity: 26,
        }
    }
}

impl TfceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.e > 0.0 && self.h > 0.0) {
            return Err(Error::invalid("TFCE exponents E and H must be > 0"));
        }
        if self.n_steps == 0 {
            return Err(Error::invalid("TFCE needs at least one step"));
        }
        connectivity_offsets(self.connectivity)?;
        Ok(())
    }
}

/// Neighbor offsets for face (6), face+edge (18) or full (26) adjacency.
pub fn connectivity_offsets(connectivity: u8) -> Result<Vec<Offset>> {
    let max_nonzero = match connectivity {
        6 => 1,
        18 => 2,
        26 => 3,
        other => return Err(Error::invalid(format!("connectivity must be 6, 18 or 26, got {other}"))),
    };
    let mut out = Vec::new();
    for dz in -1i64..=1 {
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let nz = [dx, dy, dz].iter().filter(|&&v| v != 0).count();
                if nz > 0 && nz <= max_nonzero {
                    out.push([dx, dy, dz]);
                }
            }
        }
    }
    Ok(out)
}

/// Neighbor lists in masked-rank space, computed once per mask and reused
/// across permutations.
#[derive(Debug, Clone)]
pub struct Tfce {
    cfg: TfceConfig,
    neighbors: Vec<Vec<u32>>,
}

impl Tfce {
    pub fn new(mask: &BrainMask, cfg: TfceConfig) -> Result<Self> {
        cfg.validate()?;
        let offs = connectivity_offsets(cfg.connectivity)?;
        let grid = mask.grid();
        let neighbors = mask
            .masked_indices()
            .iter()
            .map(|&lin| {
                let c = grid.coord(lin);
                offs.iter()
                    .filter_map(|&o| grid.shifted(c, o))
                    .filter_map(|nc| mask.masked_rank(grid.linear_index(nc)))
                    .map(|r| r as u32)
                    .collect()
            })
            .collect();
        Ok(Tfce { cfg, neighbors })
    }

    pub fn config(&self) -> &TfceConfig {
        &self.cfg
    }

    /// Enhances positive and negative parts separately; the negative part is
    /// enhanced on the negated map and negated back.
    pub fn enhance(&self, values: &[f64]) -> Result<Vec<f64>> {
        if values.len() != self.neighbors.len() {
            return Err(Error::invalid(format!(
                "map has {} values, mask has {} voxels",
                values.len(),
                self.neighbors.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("TFCE input must be finite"));
        }
        let mut out = self.enhance_positive(values);
        if values.iter().any(|&v| v < 0.0) {
            let neg: Vec<f64> = values.iter().map(|v| -v).collect();
            for (o, n) in out.iter_mut().zip(self.enhance_positive(&neg)) {
                if n > 0.0 {
                    *o = -n;
                }
            }
        }
        Ok(out)
    }

    /// Largest enhanced value, 0 when nothing is positive.
    pub fn max_enhanced(&self, values: &[f64]) -> Result<f64> {
        Ok(self.enhance(values)?.into_iter().fold(0.0, f64::max))
    }

    /// Sum over thresholds `h_s = s dh`, `s = 1..S(v)`, of
    /// `size(component at h_s)^E h_s^H dh`, with `dh = max / n_steps`.
    ///
    /// Thresholds are swept downward through a union-find forest. Each root
    /// accumulates its pending contribution lazily from a prefix sum of
    /// `h_s^H`, and a voxel's total is the sum of accumulators along its path
    /// to the root (children store their value relative to the parent).
    fn enhance_positive(&self, values: &[f64]) -> Vec<f64> {
        let n = values.len();
        let mut out = vec![0.0; n];
        let vmax = values.iter().copied().fold(0.0, f64::max);
        if vmax <= 0.0 {
            return out;
        }
        let steps = self.cfg.n_steps;
        let dh = vmax / steps as f64;
        let step_of = |v: f64| -> usize {
            if v <= 0.0 {
                0
            } else {
                ((v / dh + 1e-9).floor() as usize).min(steps)
            }
        };
        // prefix[s] = sum_{t=1..s} (t dh)^H dh
        let mut prefix = vec![0.0; steps + 1];
        for s in 1..=steps {
            prefix[s] = prefix[s - 1] + (s as f64 * dh).powf(self.cfg.h) * dh;
        }
        let mut buckets: Vec<Vec<u32>> = vec![Vec::new(); steps + 1];
        for (i, &v) in values.iter().enumerate() {
            let s = step_of(v);
            if s > 0 {
                buckets[s].push(i as u32);
            }
        }
        const NONE: u32 = u32::MAX;
        let mut parent = vec![NONE; n];
        let mut size = vec![0u32; n];
        let mut acc = vec![0.0f64; n];
        let mut open = vec![0usize; n];
        let e = self.cfg.e;
        let flush = |r: usize, s_cur: usize, acc: &mut [f64], open: &mut [usize], size: &[u32]| {
            acc[r] += (size[r] as f64).powf(e) * (prefix[open[r]] - prefix[s_cur]);
            open[r] = s_cur;
        };
        fn find(parent: &[u32], mut x: usize) -> usize {
            while parent[x] as usize != x {
                x = parent[x] as usize;
            }
            x
        }
        for s in (1..=steps).rev() {
            for &v in &buckets[s] {
                let v = v as usize;
                parent[v] = v as u32;
                size[v] = 1;
                open[v] = s;
                for &nb in &self.neighbors[v] {
                    let nb = nb as usize;
                    if parent[nb] == NONE {
                        continue;
                    }
                    let a = find(&parent, v);
                    let b = find(&parent, nb);
                    if a == b {
                        continue;
                    }
                    flush(a, s, &mut acc, &mut open, &size);
                    flush(b, s, &mut acc, &mut open, &size);
                    let (small, big) = if size[a] < size[b] { (a, b) } else { (b, a) };
                    acc[small] -= acc[big];
                    parent[small] = big as u32;
                    size[big] += size[small];
                }
            }
        }
        for r in 0..n {
            if parent[r] as usize == r {
                flush(r, 0, &mut acc, &mut open, &size);
            }
        }
        for v in 0..n {
            if parent[v] == NONE {
                continue;
            }
            let mut x = v;
            let mut total = acc[x];
            while parent[x] as usize != x {
                x = parent[x] as usize;
                total += acc[x];
            }
            out[v] = total;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng_from_seed, standard_normal};
    use crate::volume::VoxelGrid;
    use proptest::prelude::*;

    fn full(n: usize) -> BrainMask {
        BrainMask::full(VoxelGrid::isotropic([n, n, n], 3.0).unwrap())
    }

    /// Threshold-by-threshold flood fill.
    fn brute_force(mask: &BrainMask, values: &[f64], cfg: TfceConfig) -> Vec<f64> {
        let t = Tfce::new(mask, cfg).unwrap();
        let n = values.len();
        let mut out = vec![0.0; n];
        let vmax = values.iter().copied().fold(0.0, f64::max);
        if vmax <= 0.0 {
            return out;
        }
        let dh = vmax / cfg.n_steps as f64;
        for s in 1..=cfg.n_steps {
            let h = s as f64 * dh;
            let on: Vec<bool> = values.iter().map(|&v| v > 0.0 && ((v / dh + 1e-9).floor() as usize).min(cfg.n_steps) >= s).collect();
            let mut label = vec![usize::MAX; n];
            for seed in 0..n {
                if !on[seed] || label[seed] != usize::MAX {
                    continue;
                }
                let mut stack = vec![seed];
                let mut members = vec![];
                label[seed] = seed;
                while let Some(x) = stack.pop() {
                    members.push(x);
                    for &nb in &t.neighbors[x] {
                        let nb = nb as usize;
                        if on[nb] && label[nb] == usize::MAX {
                            label[nb] = seed;
                            stack.push(nb);
                        }
                    }
                }
                let c = (members.len() as f64).powf(cfg.e) * h.powf(cfg.h) * dh;
                for m in members {
                    out[m] += c;
                }
            }
        }
        out
    }

    fn random_map(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = rng_from_seed(seed);
        (0..n).map(|_| standard_normal(&mut rng)).collect()
    }

    #[test]
    fn zero_map_stays_zero() {
        let t = Tfce::new(&full(4), TfceConfig::default()).unwrap();
        assert!(t.enhance(&[0.0; 64]).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn isolated_voxel_is_a_power_sum() {
        let m = full(5);
        let t = Tfce::new(&m, TfceConfig::default()).unwrap();
        let mut v = vec![0.0; 125];
        v[62] = 2.5;
        let out = t.enhance(&v).unwrap();
        let dh = 2.5 / 100.0;
        let oracle: f64 = (1..=100).map(|i| (i as f64 * dh).powi(2) * dh).sum();
        assert!((out[62] - oracle).abs() < 1e-9);
        assert_eq!(out.iter().filter(|&&x| x != 0.0).count(), 1);
    }

    #[test]
    fn connectivity_counts() {
        for (c, n) in [(6u8, 6usize), (18, 18), (26, 26)] {
            assert_eq!(connectivity_offsets(c).unwrap().len(), n);
        }
        assert!(connectivity_offsets(7).is_err());
    }

    #[test]
    fn diagonal_neighbors_depend_on_connectivity() {
        let m = full(3);
        let mut v = vec![0.0; 27];
        v[0] = 1.0; // (0,0,0)
        v[13] = 1.0; // (1,1,1)
        let six = Tfce::new(&m, TfceConfig { connectivity: 6, ..Default::default() }).unwrap();
        let full26 = Tfce::new(&m, TfceConfig::default()).unwrap();
        assert!(full26.enhance(&v).unwrap()[0] > six.enhance(&v).unwrap()[0]);
    }

    #[test]
    fn negative_values_are_mirrored() {
        let m = full(4);
        let t = Tfce::new(&m, TfceConfig::default()).unwrap();
        let v = random_map(3, 64);
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        let a = t.enhance(&v).unwrap();
        let b = t.enhance(&neg).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x + y).abs() < 1e-9 * x.abs().max(1.0));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn union_find_matches_flood_fill(seed in 0u64..10_000, conn in prop::sample::select(vec![6u8, 18, 26])) {
            let m = full(5);
            let cfg = TfceConfig { connectivity: conn, n_steps: 20, ..Default::default() };
            let v: Vec<f64> = random_map(seed, 125).into_iter().map(|x| x.max(0.0)).collect();
            let fast = Tfce::new(&m, cfg).unwrap().enhance(&v).unwrap();
            let slow = brute_force(&m, &v, cfg);
            for (a, b) in fast.iter().zip(&slow) {
                prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
            }
        }

        #[test]
        fn scaling_up_increases_enhancement(seed in 0u64..10_000, c in 1.01f64..4.0) {
            let m = full(6);
            let t = Tfce::new(&m, TfceConfig::default()).unwrap();
            let v = random_map(seed, 216);
            let scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
            let a = t.enhance(&v).unwrap();
            let b = t.enhance(&scaled).unwrap();
            for (x, y) in a.iter().zip(&b) {
                if *x != 0.0 {
                    prop_assert!(y.abs() > x.abs());
                }
            }
        }

        #[test]
        fn relabeling_components_commutes(seed in 0u64..10_000) {
            // two blobs in opposite corners; swapping their values swaps outputs
            let m = full(6);
            let t = Tfce::new(&m, TfceConfig::default()).unwrap();
            let r = random_map(seed, 2);
            let mut v = vec![0.0; 216];
            let a = [0usize, 1, 6];
            let b = [215usize, 214, 209];
            for k in 0..3 {
                v[a[k]] = r[0].abs() + 0.1;
                v[b[k]] = r[1].abs() + 0.1;
            }
            let mut w = v.clone();
            for k in 0..3 {
                w.swap(a[k], b[k]);
            }
            let ov = t.enhance(&v).unwrap();
            let ow = t.enhance(&w).unwrap();
            for k in 0..3 {
                prop_assert!((ov[a[k]] - ow[b[k]]).abs() <= 1e-12 * ov[a[k]].abs().max(1.0));
            }
        }
    }
}
