//! Depth and semantic condition maps rendered from occupancy.
//!
//! Every occupied voxel becomes one fixed isotropic Gaussian whose world
//! size follows `σ = k · d̂^α`, with `d̂` the voxel's camera depth normalized
//! into (0, 1]. Splats are composited front to back.

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, Pose};
use crate::io;
use crate::labelspace::label_color;
use crate::occupancy::OccupancyFrame;

/// Pixels whose accumulated alpha stays below this are treated as no-hit.
pub const ALPHA_CUTOFF: f64 = 0.01;
/// Footprints are truncated at this many screen-space sigmas.
pub const TRUNCATION_SIGMAS: f64 = 3.0;
/// Lower clamp for the normalized depth.
pub const MIN_NORMALIZED_DEPTH: f64 = 1e-6;
/// Compositing stops once transmittance drops below this.
const MIN_TRANSMITTANCE: f64 = 1e-4;

/// Splat size law and opacity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianScaleParams {
    /// Scale at `d̂ = 1`, canonical units.
    pub k: f64,
    /// Exponent on the normalized depth.
    pub alpha: f64,
    pub opacity: f64,
    /// Depth normalization bounds. `None` uses each frame's voxel depth range.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_bounds: Option<(f64, f64)>,
}

impl GaussianScaleParams {
    pub fn new(k: f64, alpha: f64) -> Self {
        Self {
            k,
            alpha,
            opacity: 0.99,
            depth_bounds: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0 && self.k.is_finite()) {
            return Err(Error::input(format!("splat scale k must be positive, got {}", self.k)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::input(format!("splat exponent must be >= 0, got {}", self.alpha)));
        }
        if !(self.opacity > 0.0 && self.opacity <= 1.0) {
            return Err(Error::input(format!("opacity must lie in (0, 1], got {}", self.opacity)));
        }
        if let Some((near, far)) = self.depth_bounds {
            if !(near > 0.0 && near < far && far.is_finite()) {
                return Err(Error::input(format!("depth bounds need 0 < near < far, got ({near}, {far})")));
            }
        }
        Ok(())
    }
}

/// World-space splat size `k · d̂^α` for `d̂ ∈ (0, 1]`.
pub fn splat_scale(d_hat: f64, params: &GaussianScaleParams) -> Result<f64> {
    if !(d_hat > 0.0 && d_hat <= 1.0) {
        return Err(Error::Precondition(format!("normalized depth {d_hat} outside (0, 1]")));
    }
    Ok(params.k * d_hat.powf(params.alpha))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: u32,
    pub height: u32,
    /// Expected depth per pixel; 0 marks no hit.
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticMap {
    pub width: u32,
    pub height: u32,
    /// Winning label per pixel; 0 marks background.
    pub labels: Vec<u16>,
    pub rgb: Vec<[u8; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConditionKind {
    Depth,
    Semantic,
}

/// A rendered condition raster aligned pixel-for-pixel with a camera.
#[derive(Debug, Clone, PartialEq)]
pub enum ConditionMap {
    Depth(DepthMap),
    Semantic(SemanticMap),
}

impl ConditionMap {
    pub fn kind(&self) -> ConditionKind {
        match self {
            ConditionMap::Depth(_) => ConditionKind::Depth,
            ConditionMap::Semantic(_) => ConditionKind::Semantic,
        }
    }

    pub fn size(&self) -> (u32, u32) {
        match self {
            ConditionMap::Depth(d) => (d.width, d.height),
            ConditionMap::Semantic(s) => (s.width, s.height),
        }
    }
}

impl DepthMap {
    pub fn covered(&self) -> impl Iterator<Item = bool> + '_ {
        self.values.iter().map(|v| *v > 0.0)
    }

    pub fn write(&self, bin: &Path) -> Result<()> {
        io::write_f32_raster(bin, self.width, self.height, &self.values)
    }
}

impl SemanticMap {
    pub fn covered(&self) -> impl Iterator<Item = bool> + '_ {
        self.labels.iter().map(|l| *l > 0)
    }

    pub fn write_labels(&self, bin: &Path) -> Result<()> {
        io::write_u16_raster(bin, self.width, self.height, &self.labels)
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        io::write_ppm(path, self.width, self.height, &self.rgb)
    }
}

/// One projected splat.
#[derive(Debug, Clone, Copy)]
struct Splat {
    u: f64,
    v: f64,
    depth: f64,
    radius_px: f64,
    label: u16,
}

#[derive(Default, Clone)]
struct PixelState {
    transmittance: f64,
    depth_sum: f64,
    label_weights: Vec<(u16, f64)>,
}

struct Composite {
    width: u32,
    height: u32,
    alpha: Vec<f64>,
    depth_sum: Vec<f64>,
    label_weights: Option<Vec<Vec<(u16, f64)>>>,
}

fn project_splats(
    frame: &OccupancyFrame,
    intr: &Intrinsics,
    pose: &Pose,
    params: &GaussianScaleParams,
) -> Vec<Splat> {
    let world_to_cam = pose.inverse();
    let mut centers: Vec<(Vector3<f64>, u16, u64)> = frame
        .voxels()
        .iter()
        .filter_map(|v| {
            let c = frame.spec.cell_center(v.index());
            let cam = world_to_cam.transform_point(&Vector3::from(c));
            (cam.z > 0.0).then_some((cam, v.label, v.key()))
        })
        .collect();
    if centers.is_empty() {
        return Vec::new();
    }
    let (near, far) = params.depth_bounds.unwrap_or_else(|| {
        centers.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (c, _, _)| {
            (lo.min(c.z), hi.max(c.z))
        })
    });
    let span = far - near;
    // z order with the voxel key as tiebreak keeps compositing independent of input order
    centers.sort_by(|a, b| a.0.z.total_cmp(&b.0.z).then(a.2.cmp(&b.2)));
    centers
        .into_iter()
        .map(|(cam, label, _)| {
            let d_hat = if span > 0.0 {
                ((cam.z - near) / span).clamp(MIN_NORMALIZED_DEPTH, 1.0)
            } else {
                1.0
            };
            let sigma = params.k * d_hat.powf(params.alpha);
            let (u, v) = intr.project(&cam);
            Splat {
                u,
                v,
                depth: cam.z,
                radius_px: intr.fx * sigma / cam.z,
                label,
            }
        })
        .collect()
}

fn composite(
    frame: &OccupancyFrame,
    intr: &Intrinsics,
    pose: &Pose,
    params: &GaussianScaleParams,
    with_labels: bool,
) -> Composite {
    let (w, h) = (intr.width as usize, intr.height as usize);
    let mut pixels = vec![
        PixelState {
            transmittance: 1.0,
            ..Default::default()
        };
        w * h
    ];
    for s in project_splats(frame, intr, pose, params) {
        let reach = TRUNCATION_SIGMAS * s.radius_px;
        if reach <= 0.0 || !reach.is_finite() {
            continue;
        }
        let u0 = (s.u - reach).ceil().max(0.0);
        let u1 = (s.u + reach).floor().min(w as f64 - 1.0);
        let v0 = (s.v - reach).ceil().max(0.0);
        let v1 = (s.v + reach).floor().min(h as f64 - 1.0);
        if u0 > u1 || v0 > v1 {
            continue;
        }
        let inv_two_var = 1.0 / (2.0 * s.radius_px * s.radius_px);
        let reach_sq = reach * reach;
        for py in v0 as usize..=v1 as usize {
            let dy = py as f64 - s.v;
            for px in u0 as usize..=u1 as usize {
                let dx = px as f64 - s.u;
                let rho_sq = dx * dx + dy * dy;
                if rho_sq > reach_sq {
                    continue;
                }
                let p = &mut pixels[py * w + px];
                if p.transmittance < MIN_TRANSMITTANCE {
                    continue;
                }
                let a = params.opacity * (-rho_sq * inv_two_var).exp();
                let weight = a * p.transmittance;
                p.depth_sum += weight * s.depth;
                if with_labels {
                    match p.label_weights.iter_mut().find(|(l, _)| *l == s.label) {
                        Some(entry) => entry.1 += weight,
                        None => p.label_weights.push((s.label, weight)),
                    }
                }
                p.transmittance *= 1.0 - a;
            }
        }
    }
    let alpha = pixels.iter().map(|p| 1.0 - p.transmittance).collect();
    let depth_sum = pixels.iter().map(|p| p.depth_sum).collect();
    let label_weights = with_labels.then(|| pixels.into_iter().map(|p| p.label_weights).collect());
    Composite {
        width: intr.width,
        height: intr.height,
        alpha,
        depth_sum,
        label_weights,
    }
}

impl Composite {
    fn depth_map(&self) -> DepthMap {
        let values = self
            .alpha
            .iter()
            .zip(&self.depth_sum)
            .map(|(&a, &d)| if a < ALPHA_CUTOFF { 0.0 } else { (d / a) as f32 })
            .collect();
        DepthMap {
            width: self.width,
            height: self.height,
            values,
        }
    }

    fn semantic_map(&self, palette: &[[u8; 3]]) -> SemanticMap {
        let weights = self.label_weights.as_ref().expect("composited with labels");
        let labels: Vec<u16> = self
            .alpha
            .iter()
            .zip(weights)
            .map(|(&a, lw)| {
                if a < ALPHA_CUTOFF {
                    return 0;
                }
                let mut best = (0u16, f64::NEG_INFINITY);
                for &(l, wt) in lw {
                    if wt > best.1 || (wt == best.1 && l < best.0) {
                        best = (l, wt);
                    }
                }
                best.0
            })
            .collect();
        let rgb = labels.iter().map(|&l| label_color(palette, l)).collect();
        SemanticMap {
            width: self.width,
            height: self.height,
            labels,
            rgb,
        }
    }
}

/// Expected-depth render; pixels under the alpha cutoff are 0.
pub fn render_depth(
    frame: &OccupancyFrame,
    intr: &Intrinsics,
    pose: &Pose,
    params: &GaussianScaleParams,
) -> DepthMap {
    composite(frame, intr, pose, params, false).depth_map()
}

/// Per-pixel label with the largest accumulated composite weight (ties to
/// the lower id); `palette[l - 1]` colors label `l`.
pub fn render_semantics(
    frame: &OccupancyFrame,
    intr: &Intrinsics,
    pose: &Pose,
    params: &GaussianScaleParams,
    palette: &[[u8; 3]],
) -> SemanticMap {
    composite(frame, intr, pose, params, true).semantic_map(palette)
}

/// Both maps from a single compositing pass.
pub fn render_both(
    frame: &OccupancyFrame,
    intr: &Intrinsics,
    pose: &Pose,
    params: &GaussianScaleParams,
    palette: &[[u8; 3]],
) -> (DepthMap, SemanticMap) {
    let c = composite(frame, intr, pose, params, true);
    (c.depth_map(), c.semantic_map(palette))
}
