//! Consistency checks over a generated dataset tree.

use std::path::Path;

use occ4d_core::actionprep::{chunk_count, read_chunked};
use occ4d_core::io::{read_json, sidecar_path, RasterSidecar, SampleType};
use occ4d_core::occupancy::read_occ4;
use serde::{Deserialize, Serialize};

use crate::manifest::{EpisodeManifest, MANIFEST_NAME};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeCheck {
    pub episode: String,
    pub passed: bool,
    pub reasons: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub passed: usize,
    pub failed: usize,
    pub episodes: Vec<EpisodeCheck>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.failed == 0
    }
}

fn check_raster(dir: &Path, rel: &str, dtype: SampleType, w: u32, h: u32, reasons: &mut Vec<String>) {
    let bin = dir.join(rel);
    let sc: RasterSidecar = match read_json(&sidecar_path(&bin)) {
        Ok(sc) => sc,
        Err(e) => return reasons.push(format!("{rel}: sidecar unreadable: {e}")),
    };
    if sc.dtype != dtype || (sc.width, sc.height) != (w, h) {
        reasons.push(format!(
            "{rel}: raster {}x{} {:?} does not match camera {w}x{h} {:?}",
            sc.width, sc.height, sc.dtype, dtype
        ));
        return;
    }
    match std::fs::metadata(&bin) {
        Ok(m) if m.len() == w as u64 * h as u64 * dtype.byte_width() as u64 => {}
        Ok(m) => reasons.push(format!("{rel}: {} bytes for a {w}x{h} raster", m.len())),
        Err(e) => reasons.push(format!("{rel}: {e}")),
    }
}

fn check_episode(dir: &Path, m: &EpisodeManifest) -> Vec<String> {
    let mut reasons = Vec::new();
    for f in &m.files {
        if !dir.join(f).is_file() {
            reasons.push(format!("listed file {f} is missing"));
        }
    }
    if !reasons.is_empty() {
        return reasons;
    }

    match read_occ4(&dir.join(&m.occupancy)) {
        Ok(grid) if grid.frames.len() != m.frames => reasons.push(format!(
            "{}: {} frames, manifest lists {}",
            m.occupancy,
            grid.frames.len(),
            m.frames
        )),
        Ok(_) => {}
        Err(e) => reasons.push(format!("{}: {e}", m.occupancy)),
    }

    match read_chunked(&dir.join(&m.actions.file)) {
        Ok(c) => {
            let expect = chunk_count(m.frames, c.r);
            if c.count() != expect {
                reasons.push(format!(
                    "{}: {} action chunks misaligned with {} frames (expected {expect} latent frames at r = {})",
                    m.actions.file,
                    c.count(),
                    m.frames,
                    c.r
                ));
            }
            if (c.count(), c.r, c.d_action) != (m.actions.chunks, m.actions.r, m.actions.d_action) {
                reasons.push(format!("{}: tensor shape disagrees with the manifest", m.actions.file));
            }
        }
        Err(e) => reasons.push(format!("{}: {e}", m.actions.file)),
    }

    for v in &m.views {
        if v.frames.len() != m.frames {
            reasons.push(format!("view {}: {} frames, expected {}", v.id, v.frames.len(), m.frames));
        }
        let (w, h) = (v.intrinsics.width, v.intrinsics.height);
        for f in &v.frames {
            check_raster(dir, &f.depth_map, SampleType::F32le, w, h, &mut reasons);
            check_raster(dir, &f.semantic_map, SampleType::U16le, w, h, &mut reasons);
            match std::fs::read(dir.join(&f.semantic_preview)).map(|b| occ4d_core::io::decode_ppm(&b)) {
                Ok(Ok((pw, ph, _))) if (pw, ph) == (w, h) => {}
                Ok(Ok((pw, ph, _))) => reasons.push(format!("{}: {pw}x{ph} preview for a {w}x{h} camera", f.semantic_preview)),
                Ok(Err(e)) => reasons.push(format!("{}: {e}", f.semantic_preview)),
                Err(e) => reasons.push(format!("{}: {e}", f.semantic_preview)),
            }
        }
    }
    reasons
}

/// Checks every `*/manifest.json` under `root`.
pub fn validate_dataset(root: &Path) -> ValidationReport {
    let mut dirs: Vec<_> = std::fs::read_dir(root)
        .map(|rd| rd.filter_map(|e| e.ok()).map(|e| e.path()).filter(|p| p.join(MANIFEST_NAME).is_file()).collect())
        .unwrap_or_default();
    dirs.sort();
    let episodes: Vec<EpisodeCheck> = dirs
        .iter()
        .map(|dir| {
            let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let reasons = match read_json::<EpisodeManifest>(&dir.join(MANIFEST_NAME)) {
                Ok(m) => check_episode(dir, &m),
                Err(e) => vec![format!("{MANIFEST_NAME}: {e}")],
            };
            EpisodeCheck {
                episode: name,
                passed: reasons.is_empty(),
                reasons,
            }
        })
        .collect();
    let passed = episodes.iter().filter(|e| e.passed).count();
    ValidationReport {
        passed,
        failed: episodes.len() - passed,
        episodes,
    }
}
