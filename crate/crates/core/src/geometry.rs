//! Pinhole camera model, rigid poses, and depth back-projection.
//!
//! Conventions: pixel centers sit at integer coordinates, +X points right,
//! +Y points down and +Z points forward out of the camera. Poses map camera
//! coordinates to world (canonical) coordinates.

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ORTHONORMAL_TOL: f64 = 1e-9;

/// Pinhole intrinsics for a `width` x `height` raster.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let intr = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(Error::input(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::input("raster must be at least 1x1"));
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy)
        {
            return Err(Error::input(format!(
                "principal point ({}, {}) outside {}x{} raster",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Camera-space point to (u, v). Caller guarantees `z != 0`.
    #[inline]
    pub fn project(&self, p: &Vector3<f64>) -> (f64, f64) {
        (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }

    #[inline]
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Vector3<f64> {
        Vector3::new(
            (u - self.cx) * depth / self.fx,
            (v - self.cy) * depth / self.fy,
            depth,
        )
    }

    /// Whether a sub-pixel location falls on a raster pixel.
    #[inline]
    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= -0.5 && v >= -0.5 && u < self.width as f64 - 0.5 && v < self.height as f64 - 0.5
    }
}

/// Rigid camera-to-world transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let pose = Self {
            rotation,
            translation,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn from_translation(t: [f64; 3]) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::from(t),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.rotation.iter().chain(self.translation.iter()).all(|x| x.is_finite()) {
            return Err(Error::input("pose contains non-finite entries"));
        }
        let gram = self.rotation.transpose() * self.rotation;
        let err = (gram - Matrix3::identity()).abs().max();
        if err > ORTHONORMAL_TOL {
            return Err(Error::input(format!(
                "rotation is not orthonormal (max |RᵀR - I| = {err:.3e})"
            )));
        }
        let det = self.rotation.determinant();
        if (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::input(format!("rotation determinant is {det}, expected 1")));
        }
        Ok(())
    }

    /// Builds a pose from a row-major 4x4 matrix, checking the rigid-body structure.
    pub fn from_row_major(m: &[f64; 16]) -> Result<Self> {
        let last = [m[12], m[13], m[14], m[15]];
        if last != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::input(format!("pose bottom row must be [0,0,0,1], got {last:?}")));
        }
        let rotation = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        Self::new(rotation, Vector3::new(m[3], m[7], m[11]))
    }

    /// Like [`Pose::from_row_major`] but snaps a slightly non-orthonormal
    /// rotation (as written by single-precision tools) onto SO(3).
    /// Deviations above `max_err` are still rejected.
    pub fn from_row_major_lenient(m: &[f64; 16], max_err: f64) -> Result<Self> {
        let rotation = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        let err = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if err > max_err {
            return Err(Error::input(format!(
                "rotation deviates from orthonormal by {err:.3e} (limit {max_err:.1e})"
            )));
        }
        let svd = rotation.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut snapped = u * vt;
        if snapped.determinant() < 0.0 {
            return Err(Error::input("rotation is a reflection"));
        }
        // one Newton step of the polar iteration tightens residual rounding
        snapped = 0.5 * (snapped + snapped.transpose().try_inverse().unwrap_or(snapped));
        let mut fixed = *m;
        fixed[0..3].copy_from_slice(snapped.row(0).transpose().as_slice());
        fixed[4..7].copy_from_slice(snapped.row(1).transpose().as_slice());
        fixed[8..11].copy_from_slice(snapped.row(2).transpose().as_slice());
        Self::from_row_major(&fixed)
    }

    pub fn to_row_major(&self) -> [f64; 16] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
            0.0, 0.0, 0.0, 1.0,
        ]
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        Matrix4::from_row_slice(&self.to_row_major())
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    #[inline]
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Camera forward (+Z) axis expressed in world coordinates.
    pub fn forward(&self) -> Vector3<f64> {
        self.rotation.column(2).into_owned()
    }
}

impl Serialize for Pose {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let m = self.to_row_major();
        let rows: [[f64; 4]; 4] = [
            [m[0], m[1], m[2], m[3]],
            [m[4], m[5], m[6], m[7]],
            [m[8], m[9], m[10], m[11]],
            [m[12], m[13], m[14], m[15]],
        ];
        rows.serialize(s)
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum MatrixRepr {
    Rows([[f64; 4]; 4]),
    Flat([f64; 16]),
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let flat = match MatrixRepr::deserialize(d)? {
            MatrixRepr::Flat(f) => f,
            MatrixRepr::Rows(r) => {
                let mut f = [0.0; 16];
                for (i, row) in r.iter().enumerate() {
                    f[i * 4..i * 4 + 4].copy_from_slice(row);
                }
                f
            }
        };
        Pose::from_row_major_lenient(&flat, 1e-4).map_err(serde::de::Error::custom)
    }
}

/// Row-major metric depth raster. Zero marks an invalid pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: u32,
    pub height: u32,
    pub values: Vec<f64>,
}

impl DepthImage {
    pub fn new(width: u32, height: u32, values: Vec<f64>) -> Result<Self> {
        if values.len() != width as usize * height as usize {
            return Err(Error::input(format!(
                "depth raster has {} values, expected {}x{}",
                values.len(),
                width,
                height
            )));
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::input(format!(
                "depth value {} at index {bad} is negative or non-finite",
                values[bad]
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn filled(width: u32, height: u32, value: f64) -> Self {
        Self {
            width,
            height,
            values: vec![value; width as usize * height as usize],
        }
    }

    #[inline]
    pub fn get(&self, u: u32, v: u32) -> f64 {
        self.values[v as usize * self.width as usize + u as usize]
    }

    pub fn valid_count(&self) -> usize {
        self.values.iter().filter(|d| **d > 0.0).count()
    }
}

/// Row-major u16 raster of label (or instance) ids. Zero is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelImage {
    pub width: u32,
    pub height: u32,
    pub values: Vec<u16>,
}

impl LabelImage {
    pub fn new(width: u32, height: u32, values: Vec<u16>) -> Result<Self> {
        if values.len() != width as usize * height as usize {
            return Err(Error::input(format!(
                "label raster has {} values, expected {}x{}",
                values.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn filled(width: u32, height: u32, label: u16) -> Self {
        Self {
            width,
            height,
            values: vec![label; width as usize * height as usize],
        }
    }

    #[inline]
    pub fn get(&self, u: u32, v: u32) -> u16 {
        self.values[v as usize * self.width as usize + u as usize]
    }
}

/// Canonical-space points carrying a label and the pixel they came from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledPointSet {
    pub positions: Vec<[f64; 3]>,
    pub labels: Vec<u16>,
    pub source_pixels: Vec<[u32; 2]>,
}

impl LabeledPointSet {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn push(&mut self, position: [f64; 3], label: u16, pixel: [u32; 2]) {
        self.positions.push(position);
        self.labels.push(label);
        self.source_pixels.push(pixel);
    }

    pub fn extend(&mut self, other: LabeledPointSet) {
        self.positions.extend(other.positions);
        self.labels.extend(other.labels);
        self.source_pixels.extend(other.source_pixels);
    }
}

/// Result of projecting one point into a camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
    pub in_bounds: bool,
}

/// Lifts every pixel with positive depth into world space, copying its label.
pub fn backproject_depth(
    depth: &DepthImage,
    mask: &LabelImage,
    intr: &Intrinsics,
    pose: &Pose,
) -> Result<LabeledPointSet> {
    if depth.width != mask.width || depth.height != mask.height {
        return Err(Error::input(format!(
            "mask is {}x{} but depth is {}x{}",
            mask.width, mask.height, depth.width, depth.height
        )));
    }
    if depth.width != intr.width || depth.height != intr.height {
        return Err(Error::input(format!(
            "depth is {}x{} but intrinsics describe {}x{}",
            depth.width, depth.height, intr.width, intr.height
        )));
    }
    let n = depth.valid_count();
    let mut out = LabeledPointSet {
        positions: Vec::with_capacity(n),
        labels: Vec::with_capacity(n),
        source_pixels: Vec::with_capacity(n),
    };
    let w = depth.width as usize;
    for (idx, &d) in depth.values.iter().enumerate() {
        if d <= 0.0 {
            continue;
        }
        let (u, v) = ((idx % w) as u32, (idx / w) as u32);
        let cam = intr.unproject(u as f64, v as f64, d);
        let world = pose.transform_point(&cam);
        out.push([world.x, world.y, world.z], mask.values[idx], [u, v]);
    }
    Ok(out)
}

/// Projects world points through `pose⁻¹` and `intr`. Points at or behind
/// the camera plane are flagged out of bounds with NaN pixel coordinates.
pub fn project_points(points: &LabeledPointSet, intr: &Intrinsics, pose: &Pose) -> Vec<Projection> {
    let world_to_cam = pose.inverse();
    points
        .positions
        .iter()
        .map(|p| {
            let cam = world_to_cam.transform_point(&Vector3::from(*p));
            if cam.z <= 0.0 {
                return Projection {
                    u: f64::NAN,
                    v: f64::NAN,
                    depth: cam.z,
                    in_bounds: false,
                };
            }
            let (u, v) = intr.project(&cam);
            Projection {
                u,
                v,
                depth: cam.z,
                in_bounds: intr.contains(u, v),
            }
        })
        .collect()
}
