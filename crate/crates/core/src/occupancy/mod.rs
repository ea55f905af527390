//! Sparse per-frame semantic occupancy in a shared canonical grid.

mod codec;
mod mesh;

pub use codec::{decode_occ4, encode_occ4, read_occ4, write_occ4, OCC4_MAGIC, OCC4_VERSION};
pub use mesh::{triangle_box_overlap, voxelize_mesh, Triangle};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::LabeledPointSet;

/// Largest per-axis cell count representable by u16 indices.
pub const MAX_DIM: u32 = u16::MAX as u32;
const EXTENT_TOL: f64 = 1e-9;

/// Axis-aligned voxel lattice. Cell `i` along an axis spans the half-open
/// interval `[origin + i·voxel_size, origin + (i+1)·voxel_size)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: [f64; 3],
    pub voxel_size: f64,
    pub dims: [u32; 3],
}

impl GridSpec {
    /// Grid covering `extent` from `origin`. `extent` must be a whole number
    /// of voxels (within 1e-9).
    pub fn new(origin: [f64; 3], extent: [f64; 3], voxel_size: f64) -> Result<Self> {
        if !(voxel_size > 0.0 && voxel_size.is_finite()) {
            return Err(Error::input(format!("voxel size must be positive, got {voxel_size}")));
        }
        let mut dims = [0u32; 3];
        for a in 0..3 {
            let cells = (extent[a] / voxel_size).round();
            if !(1.0..=MAX_DIM as f64).contains(&cells) {
                return Err(Error::input(format!(
                    "axis {a}: extent {} / voxel {voxel_size} gives {cells} cells (allowed 1..={MAX_DIM})",
                    extent[a]
                )));
            }
            if (cells * voxel_size - extent[a]).abs() > EXTENT_TOL {
                return Err(Error::input(format!(
                    "axis {a}: extent {} is not a whole number of {voxel_size} voxels",
                    extent[a]
                )));
            }
            dims[a] = cells as u32;
        }
        Self::from_dims(origin, dims, voxel_size)
    }

    pub fn from_dims(origin: [f64; 3], dims: [u32; 3], voxel_size: f64) -> Result<Self> {
        if !(voxel_size > 0.0 && voxel_size.is_finite()) {
            return Err(Error::input(format!("voxel size must be positive, got {voxel_size}")));
        }
        if !origin.iter().all(|o| o.is_finite()) {
            return Err(Error::input("grid origin must be finite"));
        }
        if dims.iter().any(|d| *d == 0 || *d > MAX_DIM) {
            return Err(Error::input(format!("grid dims {dims:?} outside 1..={MAX_DIM}")));
        }
        Ok(Self {
            origin,
            voxel_size,
            dims,
        })
    }

    pub fn extent(&self) -> [f64; 3] {
        self.dims.map(|d| d as f64 * self.voxel_size)
    }

    /// Cell containing `p`, or `None` outside `[origin, origin + extent)`.
    #[inline]
    pub fn index_of(&self, p: &[f64; 3]) -> Option<[u16; 3]> {
        let mut idx = [0u16; 3];
        for a in 0..3 {
            let f = ((p[a] - self.origin[a]) / self.voxel_size).floor();
            if !(f >= 0.0 && f < self.dims[a] as f64) {
                return None;
            }
            idx[a] = f as u16;
        }
        Some(idx)
    }

    /// Lower and upper corner of a cell.
    #[inline]
    pub fn cell_bounds(&self, idx: [u32; 3]) -> ([f64; 3], [f64; 3]) {
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for a in 0..3 {
            lo[a] = self.origin[a] + idx[a] as f64 * self.voxel_size;
            hi[a] = self.origin[a] + (idx[a] + 1) as f64 * self.voxel_size;
        }
        (lo, hi)
    }

    #[inline]
    pub fn cell_center(&self, idx: [u16; 3]) -> [f64; 3] {
        let mut c = [0.0; 3];
        for a in 0..3 {
            c[a] = self.origin[a] + (idx[a] as f64 + 0.5) * self.voxel_size;
        }
        c
    }
}

/// One occupied cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Voxel {
    pub ix: u16,
    pub iy: u16,
    pub iz: u16,
    pub label: u16,
}

impl Voxel {
    /// Sort key ordering voxels by (iz, iy, ix).
    #[inline]
    pub fn key(&self) -> u64 {
        pack_key([self.ix, self.iy, self.iz])
    }

    pub fn index(&self) -> [u16; 3] {
        [self.ix, self.iy, self.iz]
    }
}

#[inline]
fn pack_key(idx: [u16; 3]) -> u64 {
    (idx[2] as u64) << 32 | (idx[1] as u64) << 16 | idx[0] as u64
}

#[inline]
fn unpack_key(key: u64) -> [u16; 3] {
    [key as u16, (key >> 16) as u16, (key >> 32) as u16]
}

/// Occupied cells of one time step, sorted by (iz, iy, ix) without duplicates.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyFrame {
    pub spec: GridSpec,
    voxels: Vec<Voxel>,
}

impl OccupancyFrame {
    pub fn empty(spec: GridSpec) -> Self {
        Self {
            spec,
            voxels: Vec::new(),
        }
    }

    /// Sorts `voxels`, rejecting duplicates and out-of-range indices.
    pub fn from_voxels(spec: GridSpec, mut voxels: Vec<Voxel>) -> Result<Self> {
        voxels.sort_by_key(Voxel::key);
        Self::check_sorted(&spec, &voxels)?;
        Ok(Self { spec, voxels })
    }

    pub(crate) fn check_sorted(spec: &GridSpec, voxels: &[Voxel]) -> Result<()> {
        for (i, v) in voxels.iter().enumerate() {
            if v.ix as u32 >= spec.dims[0] || v.iy as u32 >= spec.dims[1] || v.iz as u32 >= spec.dims[2]
            {
                return Err(Error::input(format!(
                    "voxel {i} index {:?} outside dims {:?}",
                    v.index(),
                    spec.dims
                )));
            }
            if i > 0 && voxels[i - 1].key() >= v.key() {
                return Err(Error::input(format!(
                    "voxel {i} index {:?} is duplicated or out of order",
                    v.index()
                )));
            }
        }
        Ok(())
    }

    pub fn voxels(&self) -> &[Voxel] {
        &self.voxels
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }
}

/// A time sequence of frames sharing one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid4D {
    pub spec: GridSpec,
    pub frames: Vec<OccupancyFrame>,
    pub timestamps: Vec<u32>,
}

impl OccupancyGrid4D {
    pub fn new(spec: GridSpec, frames: Vec<OccupancyFrame>, timestamps: Vec<u32>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::input("a 4D grid needs at least one frame"));
        }
        if frames.len() != timestamps.len() {
            return Err(Error::input(format!(
                "{} frames but {} timestamps",
                frames.len(),
                timestamps.len()
            )));
        }
        if let Some(i) = frames.iter().position(|f| f.spec != spec) {
            return Err(Error::input(format!("frame {i} uses a different grid spec")));
        }
        Ok(Self {
            spec,
            frames,
            timestamps,
        })
    }
}

/// Point accounting from [`voxelize_points`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoxelizeStats {
    pub total: usize,
    pub kept: usize,
    pub dropped: usize,
    pub occupied: usize,
}

/// Majority label of a non-empty vote set.
///
/// Ties go to the lower label id. Label 0 (unlabeled) loses every tie with
/// a real label and wins only with a strict majority over each of them.
pub fn vote_semantics(labels: &[u16]) -> Result<u16> {
    if labels.is_empty() {
        return Err(Error::Precondition("cannot vote over an empty label set".into()));
    }
    let mut sorted = labels.to_vec();
    sorted.sort_unstable();
    Ok(vote_sorted(&sorted))
}

fn vote_sorted(sorted: &[u16]) -> u16 {
    let mut unlabeled = 0usize;
    let mut best: Option<(u16, usize)> = None;
    let mut i = 0;
    while i < sorted.len() {
        let label = sorted[i];
        let run = sorted[i..].iter().take_while(|&&l| l == label).count();
        if label == 0 {
            unlabeled = run;
        } else if best.is_none_or(|(_, n)| run > n) {
            best = Some((label, run));
        }
        i += run;
    }
    match best {
        Some((label, n)) if n >= unlabeled => label,
        _ => 0,
    }
}

/// Bins points into cells and labels each occupied cell by majority vote.
/// Points outside the grid are dropped and counted.
pub fn voxelize_points(points: &LabeledPointSet, spec: &GridSpec) -> (OccupancyFrame, VoxelizeStats) {
    let mut keyed: Vec<(u64, u16)> = points
        .positions
        .iter()
        .zip(&points.labels)
        .filter_map(|(p, &l)| spec.index_of(p).map(|idx| (pack_key(idx), l)))
        .collect();
    keyed.sort_unstable();

    let mut voxels = Vec::new();
    let mut votes = Vec::new();
    let mut i = 0;
    while i < keyed.len() {
        let key = keyed[i].0;
        votes.clear();
        while i < keyed.len() && keyed[i].0 == key {
            votes.push(keyed[i].1);
            i += 1;
        }
        let [ix, iy, iz] = unpack_key(key);
        voxels.push(Voxel {
            ix,
            iy,
            iz,
            label: vote_sorted(&votes),
        });
    }
    let stats = VoxelizeStats {
        total: points.len(),
        kept: keyed.len(),
        dropped: points.len() - keyed.len(),
        occupied: voxels.len(),
    };
    (
        OccupancyFrame {
            spec: *spec,
            voxels,
        },
        stats,
    )
}
