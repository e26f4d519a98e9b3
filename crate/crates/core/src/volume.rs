//! Voxel-grid geometry: grids, masks, sphere neighborhoods and per-sphere
//! feature extraction.
//!
//! Volumes are stored voxel-fastest with `x` varying fastest, then `y`, then
//! `z`; a stack of volumes places sample `s` at offset `s * n_voxels`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Offset = [i64; 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelGrid {
    pub dims: [usize; 3],
    pub voxel_size_mm: [f64; 3],
}

impl VoxelGrid {
    pub fn new(dims: [usize; 3], voxel_size_mm: [f64; 3]) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::invalid(format!("grid dims must be >= 1, got {dims:?}")));
        }
        if voxel_size_mm.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::invalid(format!(
                "voxel sizes must be positive, got {voxel_size_mm:?}"
            )));
        }
        Ok(VoxelGrid { dims, voxel_size_mm })
    }

    pub fn isotropic(dims: [usize; 3], size_mm: f64) -> Result<Self> {
        Self::new(dims, [size_mm; 3])
    }

    pub fn n_voxels(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn linear_index(&self, c: [usize; 3]) -> usize {
        c[0] + self.dims[0] * (c[1] + self.dims[1] * c[2])
    }

    pub fn coord(&self, idx: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    /// Applies an offset to a coordinate, returning `None` outside the grid.
    pub fn shifted(&self, c: [usize; 3], o: Offset) -> Option<[usize; 3]> {
        let mut out = [0usize; 3];
        for a in 0..3 {
            let v = c[a] as i64 + o[a];
            if v < 0 || v >= self.dims[a] as i64 {
                return None;
            }
            out[a] = v as usize;
        }
        Some(out)
    }

    pub fn offset_norm_mm(&self, o: Offset) -> f64 {
        offset_norm(o, self.voxel_size_mm)
    }
}

fn offset_norm(o: Offset, vs: [f64; 3]) -> f64 {
    let dx = o[0] as f64 * vs[0];
    let dy = o[1] as f64 * vs[1];
    let dz = o[2] as f64 * vs[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Analysis mask over a grid. Masked voxels are enumerated in linear-index
/// order; that order defines feature columns everywhere in the crate.
#[derive(Debug, Clone, PartialEq)]
pub struct BrainMask {
    grid: VoxelGrid,
    included: Vec<bool>,
    masked: Vec<usize>,
    // linear index -> position in `masked`, usize::MAX when excluded
    rank: Vec<usize>,
}

impl BrainMask {
    pub fn new(grid: VoxelGrid, included: Vec<bool>) -> Result<Self> {
        if included.len() != grid.n_voxels() {
            return Err(Error::invalid(format!(
                "mask has {} cells, grid has {}",
                included.len(),
                grid.n_voxels()
            )));
        }
        let masked: Vec<usize> = (0..included.len()).filter(|&i| included[i]).collect();
        if masked.is_empty() {
            return Err(Error::invalid("mask has no included voxels"));
        }
        let mut rank = vec![usize::MAX; included.len()];
        for (r, &i) in masked.iter().enumerate() {
            rank[i] = r;
        }
        Ok(BrainMask {
            grid,
            included,
            masked,
            rank,
        })
    }

    pub fn full(grid: VoxelGrid) -> Self {
        let n = grid.n_voxels();
        Self::new(grid, vec![true; n]).expect("full mask is nonempty")
    }

    pub fn from_coords(grid: VoxelGrid, coords: &[[usize; 3]]) -> Result<Self> {
        let mut inc = vec![false; grid.n_voxels()];
        for &c in coords {
            if (0..3).any(|a| c[a] >= grid.dims[a]) {
                return Err(Error::invalid(format!("mask coordinate {c:?} outside grid")));
            }
            inc[grid.linear_index(c)] = true;
        }
        Self::new(grid, inc)
    }

    pub fn grid(&self) -> &VoxelGrid {
        &self.grid
    }

    pub fn included(&self) -> &[bool] {
        &self.included
    }

    pub fn contains(&self, linear: usize) -> bool {
        self.included[linear]
    }

    /// Linear indices of the masked voxels, ascending.
    pub fn masked_indices(&self) -> &[usize] {
        &self.masked
    }

    pub fn n_masked(&self) -> usize {
        self.masked.len()
    }

    /// Position of a voxel among the masked voxels.
    pub fn masked_rank(&self, linear: usize) -> Option<usize> {
        match self.rank.get(linear) {
            Some(&r) if r != usize::MAX => Some(r),
            _ => None,
        }
    }

    /// Expands masked values onto the full grid, filling excluded voxels.
    pub fn scatter(&self, values: &[f64], fill: f64) -> Vec<f64> {
        let mut out = vec![fill; self.grid.n_voxels()];
        for (v, &i) in values.iter().zip(&self.masked) {
            out[i] = *v;
        }
        out
    }

    /// Gathers the masked voxels from a full-grid volume.
    pub fn gather<T: Copy>(&self, volume: &[T]) -> Vec<T> {
        self.masked.iter().map(|&i| volume[i]).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SphereNeighborhood {
    pub center: [usize; 3],
    pub radius_mm: f64,
    /// Effective member offsets (clipped to grid and mask), lexicographic.
    pub member_offsets: Vec<Offset>,
    /// Linear indices of the effective members, same order as the offsets.
    pub members: Vec<usize>,
}

impl SphereNeighborhood {
    pub fn n_members(&self) -> usize {
        self.members.len()
    }

    pub fn center_index(&self, grid: &VoxelGrid) -> usize {
        grid.linear_index(self.center)
    }
}

/// Integer lattice offsets within `radius_mm` of the origin, in lexicographic
/// `(dx, dy, dz)` order.
pub fn sphere_offsets(radius_mm: f64, voxel_size_mm: [f64; 3]) -> Result<Vec<Offset>> {
    if !(radius_mm > 0.0 && radius_mm.is_finite()) {
        return Err(Error::invalid(format!("radius must be positive, got {radius_mm}")));
    }
    if voxel_size_mm.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(Error::invalid(format!(
            "voxel sizes must be positive, got {voxel_size_mm:?}"
        )));
    }
    let reach: Vec<i64> = voxel_size_mm
        .iter()
        .map(|s| (radius_mm / s).floor() as i64)
        .collect();
    let mut out = Vec::new();
    for dx in -reach[0]..=reach[0] {
        for dy in -reach[1]..=reach[1] {
            for dz in -reach[2]..=reach[2] {
                let o = [dx, dy, dz];
                if offset_norm(o, voxel_size_mm) <= radius_mm {
                    out.push(o);
                }
            }
        }
    }
    Ok(out)
}

/// One neighborhood per masked voxel, clipped to the grid and the mask.
pub fn sphere_centers(mask: &BrainMask, radius_mm: f64) -> Result<Vec<SphereNeighborhood>> {
    let grid = mask.grid();
    let offsets = sphere_offsets(radius_mm, grid.voxel_size_mm)?;
    if mask.n_masked() == 0 {
        return Err(Error::invalid("empty mask"));
    }
    let spheres = mask
        .masked_indices()
        .iter()
        .map(|&ci| {
            let center = grid.coord(ci);
            let mut member_offsets = Vec::new();
            let mut members = Vec::new();
            for &o in &offsets {
                if let Some(c) = grid.shifted(center, o) {
                    let li = grid.linear_index(c);
                    if mask.contains(li) {
                        member_offsets.push(o);
                        members.push(li);
                    }
                }
            }
            SphereNeighborhood {
                center,
                radius_mm,
                member_offsets,
                members,
            }
        })
        .collect();
    Ok(spheres)
}

/// A stack of volumes on a common grid (4D: samples x z x y x x).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleStack {
    pub dims: [usize; 3],
    pub n_samples: usize,
    pub data: Vec<f32>,
}

impl SampleStack {
    pub fn new(dims: [usize; 3], n_samples: usize, data: Vec<f32>) -> Result<Self> {
        let nv = dims[0] * dims[1] * dims[2];
        if data.len() != nv * n_samples {
            return Err(Error::invalid(format!(
                "stack holds {} values, expected {} x {}",
                data.len(),
                n_samples,
                nv
            )));
        }
        Ok(SampleStack {
            dims,
            n_samples,
            data,
        })
    }

    pub fn n_voxels(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn volume(&self, s: usize) -> &[f32] {
        let nv = self.n_voxels();
        &self.data[s * nv..(s + 1) * nv]
    }

    pub fn value(&self, s: usize, linear: usize) -> f32 {
        self.data[s * self.n_voxels() + linear]
    }

    /// Samples x masked-voxels matrix.
    pub fn masked_matrix(&self, mask: &BrainMask) -> Result<DMatrix<f64>> {
        self.check_grid(mask)?;
        let idx = mask.masked_indices();
        Ok(DMatrix::from_fn(self.n_samples, idx.len(), |r, c| {
            self.value(r, idx[c]) as f64
        }))
    }

    fn check_grid(&self, mask: &BrainMask) -> Result<()> {
        if self.dims != mask.grid().dims {
            return Err(Error::invalid(format!(
                "stack dims {:?} do not match grid {:?}",
                self.dims,
                mask.grid().dims
            )));
        }
        Ok(())
    }
}

/// Gathers the time course of every effective sphere member: row `s`, column
/// `j` is sample `s` at the `j`-th member voxel.
pub fn extract_sphere_features(
    samples: &SampleStack,
    sphere: &SphereNeighborhood,
    mask: &BrainMask,
) -> Result<DMatrix<f64>> {
    samples.check_grid(mask)?;
    if let Some(&bad) = sphere.members.iter().find(|&&m| m >= samples.n_voxels()) {
        return Err(Error::invalid(format!("sphere member {bad} outside grid")));
    }
    Ok(DMatrix::from_fn(
        samples.n_samples,
        sphere.members.len(),
        |r, c| samples.value(r, sphere.members[c]) as f64,
    ))
}
