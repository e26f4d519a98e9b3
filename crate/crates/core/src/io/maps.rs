//! Score maps and p-value maps as volume bundles.
//!
//! A score-map bundle stores the mean map as sample 0, the per-voxel failure
//! counts as sample 1 and, when kept, one sample per partition after that.
//! A p-value bundle stores p as sample 0 and the observed enhanced statistic
//! as sample 1. Voxels outside the mask hold 0 (NaN for missing scores).

use std::path::Path;

use super::bundle::{Manifest, VolumeBundle};
use crate::error::{Error, Result};
use crate::searchlight::ScoreMap;
use crate::stats::PValueMap;
use crate::volume::{BrainMask, SampleStack};

fn stack_of(mask: &BrainMask, layers: &[&[f64]]) -> Result<SampleStack> {
    let grid = mask.grid();
    let mut data = Vec::with_capacity(layers.len() * grid.n_voxels());
    for l in layers {
        data.extend(mask.scatter(l, 0.0).into_iter().map(|v| v as f32));
    }
    SampleStack::new(grid.dims, layers.len(), data)
}

fn layer(b: &VolumeBundle, s: usize) -> Vec<f64> {
    b.mask.gather(b.stack.volume(s)).into_iter().map(f64::from).collect()
}

pub fn write_score_map(map: &ScoreMap, name: &str, dir: &Path) -> Result<()> {
    let nan: Vec<f64> = map.nan_counts.iter().map(|&c| f64::from(c)).collect();
    let mut layers: Vec<&[f64]> = vec![&map.values, &nan];
    if let Some(pp) = &map.per_partition {
        layers.extend(pp.iter().map(Vec::as_slice));
    }
    let mut m = Manifest::default();
    m.set("kind", "scoremap");
    m.set("map_name", name);
    m.set("centered", map.centered);
    m.set("n_partitions", map.per_partition.as_ref().map_or(0, Vec::len));
    m.set("n_failed", map.n_failed());
    m.set("layers", "mean nan_counts per_partition...");
    VolumeBundle {
        manifest: m,
        mask: map.mask.clone(),
        stack: stack_of(&map.mask, &layers)?,
        trials: None,
    }
    .write(dir)
}

pub fn read_score_map(dir: &Path) -> Result<(String, ScoreMap)> {
    let b = VolumeBundle::read(dir)?;
    if b.manifest.get("kind")? != "scoremap" {
        return Err(Error::bundle("kind", "not a score-map bundle"));
    }
    let name = b.manifest.get("map_name")?.to_string();
    let centered: bool = b.manifest.parse("centered")?;
    let n_part: usize = b.manifest.parse("n_partitions")?;
    if b.stack.n_samples != 2 + n_part {
        return Err(Error::bundle("n_partitions", format!("{} layers for {n_part} partitions", b.stack.n_samples)));
    }
    let nan_counts = layer(&b, 1).into_iter().map(|v| v as u32).collect();
    let per_partition = (n_part > 0).then(|| (0..n_part).map(|p| layer(&b, 2 + p)).collect());
    Ok((
        name,
        ScoreMap {
            values: layer(&b, 0),
            per_partition,
            nan_counts,
            centered,
            mask: b.mask,
        },
    ))
}

pub fn write_pvalue_map(map: &PValueMap, dir: &Path) -> Result<()> {
    let mut m = Manifest::default();
    m.set("kind", "pvaluemap");
    m.set("n_permutations", map.n_permutations);
    m.set("exhaustive", map.exhaustive);
    m.set("sigma_mm", map.sigma_mm);
    m.set("seed", map.seed);
    m.set("min_p", map.min_p());
    m.set(
        "zero_variance",
        map.zero_variance.iter().map(usize::to_string).collect::<Vec<_>>().join(" "),
    );
    m.set("layers", "p observed");
    VolumeBundle {
        manifest: m,
        mask: map.mask.clone(),
        stack: stack_of(&map.mask, &[&map.p, &map.observed])?,
        trials: None,
    }
    .write(dir)
}

pub fn read_pvalue_map(dir: &Path) -> Result<PValueMap> {
    let b = VolumeBundle::read(dir)?;
    if b.manifest.get("kind")? != "pvaluemap" {
        return Err(Error::bundle("kind", "not a p-value bundle"));
    }
    let zero_variance = b
        .manifest
        .get("zero_variance")?
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::bundle("zero_variance", "bad index")))
        .collect::<Result<_>>()?;
    Ok(PValueMap {
        p: layer(&b, 0),
        observed: layer(&b, 1),
        n_permutations: b.manifest.parse("n_permutations")?,
        exhaustive: b.manifest.parse("exhaustive")?,
        sigma_mm: b.manifest.parse("sigma_mm")?,
        seed: b.manifest.parse("seed")?,
        zero_variance,
        mask: b.mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::VoxelGrid;

    fn mask() -> BrainMask {
        let g = VoxelGrid::isotropic([3, 3, 2], 3.0).unwrap();
        let inc = (0..18).map(|i| i % 4 != 0).collect();
        BrainMask::new(g, inc).unwrap()
    }

    #[test]
    fn score_map_round_trip() {
        let m = mask();
        let n = m.n_masked();
        let map = ScoreMap {
            values: (0..n).map(|i| if i == 2 { f64::NAN } else { 0.25 * i as f64 }).collect(),
            per_partition: Some(vec![vec![0.5; n], (0..n).map(|i| i as f64).collect()]),
            nan_counts: (0..n).map(|i| u32::from(i == 2) * 2).collect(),
            centered: true,
            mask: m,
        };
        let dir = tempfile::tempdir().unwrap();
        write_score_map(&map, "rtlc", dir.path()).unwrap();
        let (name, back) = read_score_map(dir.path()).unwrap();
        assert_eq!(name, "rtlc");
        assert!(back.values[2].is_nan());
        assert_eq!(back.values[3], 0.75);
        assert_eq!(back.per_partition, map.per_partition);
        assert_eq!(back.nan_counts, map.nan_counts);
        assert!(back.centered);
    }

    #[test]
    fn pvalue_map_round_trip() {
        let m = mask();
        let n = m.n_masked();
        let map = PValueMap {
            p: (0..n).map(|i| 1.0 / (i + 1) as f64).map(|v| f64::from(v as f32)).collect(),
            observed: vec![2.0; n],
            n_permutations: 64,
            exhaustive: true,
            sigma_mm: 6.0,
            seed: 9,
            zero_variance: vec![1, 4],
            mask: m,
        };
        let dir = tempfile::tempdir().unwrap();
        write_pvalue_map(&map, dir.path()).unwrap();
        assert_eq!(read_pvalue_map(dir.path()).unwrap(), map);
        assert!(read_score_map(dir.path()).is_err());
    }
}
