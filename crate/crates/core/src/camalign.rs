//! Frame alignment between two reconstructions that share a reference view.
//!
//! The reference-view depth maps from both reconstructions are related by
//! `d_ref ≈ scale · d_src + shift`; once fitted, side-view poses from the
//! source reconstruction are carried into the reference frame.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{DepthImage, Intrinsics, Pose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthFit {
    pub scale: f64,
    pub shift: f64,
    pub residual_rms: f64,
    pub n_valid: usize,
}

impl DepthFit {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            shift: 0.0,
            residual_rms: 0.0,
            n_valid: 0,
        }
    }
}

fn valid_pairs<'a>(
    d_ref: &'a DepthImage,
    d_src: &'a DepthImage,
    valid: Option<&'a [bool]>,
) -> Result<impl Iterator<Item = (f64, f64)> + 'a> {
    if d_ref.width != d_src.width || d_ref.height != d_src.height {
        return Err(Error::input(format!(
            "depth maps differ in size: {}x{} vs {}x{}",
            d_ref.width, d_ref.height, d_src.width, d_src.height
        )));
    }
    if let Some(mask) = valid {
        if mask.len() != d_ref.values.len() {
            return Err(Error::input("validity mask size differs from depth maps"));
        }
    }
    Ok(d_ref
        .values
        .iter()
        .zip(&d_src.values)
        .enumerate()
        .filter(move |(i, (r, s))| **r > 0.0 && **s > 0.0 && valid.is_none_or(|m| m[*i]))
        .map(|(_, (r, s))| (*s, *r)))
}

fn rms(pairs: &[(f64, f64)], scale: f64, shift: f64) -> f64 {
    let sse: f64 = pairs
        .iter()
        .map(|(x, y)| {
            let e = scale * x + shift - y;
            e * e
        })
        .sum();
    (sse / pairs.len() as f64).sqrt()
}

/// Least-squares `(scale, shift)` minimizing `Σ (scale·d_src + shift − d_ref)²`
/// over pixels where both depths are positive and `valid` (if given) is set.
pub fn fit_affine_depth(
    d_ref: &DepthImage,
    d_src: &DepthImage,
    valid: Option<&[bool]>,
) -> Result<DepthFit> {
    let pairs: Vec<(f64, f64)> = valid_pairs(d_ref, d_src, valid)?.collect();
    let n = pairs.len();
    if n < 2 {
        return Err(Error::DegenerateFit(format!(
            "affine fit needs at least 2 valid pixels, got {n}"
        )));
    }
    let nf = n as f64;
    let (sx, sy) = pairs.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (sx / nf, sy / nf);
    // centered sums keep the 2x2 normal equations well conditioned
    let (sxx, sxy) = pairs.iter().fold((0.0, 0.0), |(a, b), (x, y)| {
        let dx = x - mx;
        (a + dx * dx, b + dx * (y - my))
    });
    let scale_of_x = pairs.iter().map(|(x, _)| x * x).sum::<f64>();
    if sxx <= f64::EPSILON * scale_of_x {
        return Err(Error::DegenerateFit("source depths have zero variance".into()));
    }
    let scale = sxy / sxx;
    let shift = my - scale * mx;
    Ok(DepthFit {
        scale,
        shift,
        residual_rms: rms(&pairs, scale, shift),
        n_valid: n,
    })
}

/// Scale-only fit `scale = Σ d_src·d_ref / Σ d_src²`, shift fixed at 0.
pub fn fit_scale_depth(
    d_ref: &DepthImage,
    d_src: &DepthImage,
    valid: Option<&[bool]>,
) -> Result<DepthFit> {
    let pairs: Vec<(f64, f64)> = valid_pairs(d_ref, d_src, valid)?.collect();
    let (sxy, sxx) = pairs
        .iter()
        .fold((0.0, 0.0), |(a, b), (x, y)| (a + x * y, b + x * x));
    if pairs.is_empty() || sxx == 0.0 {
        return Err(Error::DegenerateFit("no valid source depth to fit a scale".into()));
    }
    let scale = sxy / sxx;
    Ok(DepthFit {
        scale,
        shift: 0.0,
        residual_rms: rms(&pairs, scale, 0.0),
        n_valid: pairs.len(),
    })
}

/// One camera of a rig and its per-frame poses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigView {
    pub id: String,
    pub intrinsics: Intrinsics,
    pub poses: Vec<Pose>,
}

/// Cameras expressed in the coordinate frame named by `frame_tag`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    pub frame_tag: String,
    pub views: Vec<RigView>,
}

impl CameraRig {
    pub fn validate(&self) -> Result<()> {
        let frames = self.views.first().map(|v| v.poses.len());
        for v in &self.views {
            v.intrinsics.validate()?;
            if Some(v.poses.len()) != frames {
                return Err(Error::input(format!(
                    "view {} has {} poses, other views have {}",
                    v.id,
                    v.poses.len(),
                    frames.unwrap_or(0)
                )));
            }
            for p in &v.poses {
                p.validate()?;
            }
        }
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        self.views.first().map_or(0, |v| v.poses.len())
    }
}

/// Carries a rig into the reference frame.
///
/// Translations are multiplied by `fit.scale`. A non-zero shift moves each
/// camera by `−shift` along its own forward axis, which raises every
/// on-axis depth by `shift` as the affine model prescribes. Rotations are
/// untouched.
pub fn transfer_rig(rig: &CameraRig, fit: &DepthFit, reference_tag: &str) -> Result<CameraRig> {
    if !(fit.scale.is_finite() && fit.scale > 0.0 && fit.shift.is_finite()) {
        return Err(Error::DegenerateFit(format!(
            "cannot transfer with scale {} and shift {}",
            fit.scale, fit.shift
        )));
    }
    let views = rig
        .views
        .iter()
        .map(|v| RigView {
            id: v.id.clone(),
            intrinsics: v.intrinsics,
            poses: v
                .poses
                .iter()
                .map(|p| Pose {
                    rotation: p.rotation,
                    translation: p.translation * fit.scale - p.forward() * fit.shift,
                })
                .collect(),
        })
        .collect();
    Ok(CameraRig {
        frame_tag: reference_tag.to_string(),
        views,
    })
}
