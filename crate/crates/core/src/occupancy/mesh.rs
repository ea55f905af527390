//! Surface voxelization of triangle meshes.

use std::collections::BTreeSet;

use super::{pack_key, unpack_key, GridSpec, OccupancyFrame, Voxel};
use crate::error::{Error, Result};

pub type Triangle = [[f64; 3]; 3];

#[inline]
fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// True when `axis` separates the triangle from the box `[lo, hi]`.
/// Touching intervals do not separate.
#[inline]
fn separates(axis: [f64; 3], tri: &Triangle, lo: [f64; 3], hi: [f64; 3]) -> bool {
    if axis == [0.0; 3] {
        return false;
    }
    let p = [dot(axis, tri[0]), dot(axis, tri[1]), dot(axis, tri[2])];
    let (tmin, tmax) = (p[0].min(p[1]).min(p[2]), p[0].max(p[1]).max(p[2]));
    let (mut bmin, mut bmax) = (0.0, 0.0);
    for a in 0..3 {
        let (x, y) = (axis[a] * lo[a], axis[a] * hi[a]);
        bmin += x.min(y);
        bmax += x.max(y);
    }
    tmin > bmax || tmax < bmin
}

/// Closed separating-axis overlap test between a triangle and an
/// axis-aligned box. Degenerate (zero-area) triangles are handled as
/// segments or points.
pub fn triangle_box_overlap(tri: &Triangle, lo: [f64; 3], hi: [f64; 3]) -> bool {
    for a in 0..3 {
        let tmin = tri[0][a].min(tri[1][a]).min(tri[2][a]);
        let tmax = tri[0][a].max(tri[1][a]).max(tri[2][a]);
        if tmin > hi[a] || tmax < lo[a] {
            return false;
        }
    }
    let edges = [sub(tri[1], tri[0]), sub(tri[2], tri[1]), sub(tri[0], tri[2])];
    if separates(cross(edges[0], edges[1]), tri, lo, hi) {
        return false;
    }
    const UNIT: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for u in UNIT {
        for e in edges {
            if separates(cross(u, e), tri, lo, hi) {
                return false;
            }
        }
    }
    true
}

/// Marks every cell whose closed box overlaps any triangle.
pub fn voxelize_mesh(triangles: &[Triangle], spec: &GridSpec, label: u16) -> Result<OccupancyFrame> {
    let mut keys = BTreeSet::new();
    for (t, tri) in triangles.iter().enumerate() {
        if !tri.iter().flatten().all(|c| c.is_finite()) {
            return Err(Error::input(format!("triangle {t} has non-finite vertices")));
        }
        let mut range = [(0u32, 0u32); 3];
        let mut outside = false;
        for a in 0..3 {
            let lo = tri[0][a].min(tri[1][a]).min(tri[2][a]);
            let hi = tri[0][a].max(tri[1][a]).max(tri[2][a]);
            // one cell of slack each side; the exact test below decides
            let first = ((lo - spec.origin[a]) / spec.voxel_size).floor() - 1.0;
            let last = ((hi - spec.origin[a]) / spec.voxel_size).floor() + 1.0;
            let max = spec.dims[a] as f64 - 1.0;
            if last < 0.0 || first > max {
                outside = true;
                break;
            }
            range[a] = (first.max(0.0) as u32, last.min(max) as u32);
        }
        if outside {
            continue;
        }
        for iz in range[2].0..=range[2].1 {
            for iy in range[1].0..=range[1].1 {
                for ix in range[0].0..=range[0].1 {
                    let (lo, hi) = spec.cell_bounds([ix, iy, iz]);
                    if triangle_box_overlap(tri, lo, hi) {
                        keys.insert(pack_key([ix as u16, iy as u16, iz as u16]));
                    }
                }
            }
        }
    }
    let voxels = keys
        .into_iter()
        .map(|k| {
            let [ix, iy, iz] = unpack_key(k);
            Voxel { ix, iy, iz, label }
        })
        .collect();
    Ok(OccupancyFrame {
        spec: *spec,
        voxels,
    })
}
