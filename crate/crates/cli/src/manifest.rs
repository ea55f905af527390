//! Per-episode manifest and run report.

use occ4d_core::camalign::DepthFit;
use occ4d_core::geometry::Intrinsics;
use serde::{Deserialize, Serialize};

pub const MANIFEST_NAME: &str = "manifest.json";
pub const OCCUPANCY_NAME: &str = "occupancy.occ4";
pub const ACTIONS_NAME: &str = "actions.bin";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewRole {
    Reference,
    Side,
}

/// Inputs and outputs of one view at one frame. Output paths are relative to
/// the episode output directory; input paths to the episode input directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub frame: u32,
    pub pose: [f64; 16],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_input: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_input: Option<String>,
    pub depth_map: String,
    pub semantic_map: String,
    pub semantic_preview: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewEntry {
    pub id: String,
    pub role: ViewRole,
    pub intrinsics: Intrinsics,
    pub frames: Vec<FrameEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionEntry {
    pub file: String,
    pub source_frames: usize,
    pub chunks: usize,
    pub r: usize,
    pub d_action: usize,
    /// Rows added beyond the source track (next action plus zeros).
    pub padded_rows: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub points_total: usize,
    pub points_kept: usize,
    pub points_dropped: usize,
    pub voxels_per_frame: usize,
    pub max_voxels: usize,
    pub unmapped_instances: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipEntry {
    pub start: usize,
    pub frames: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipPlan {
    pub split: crate::config::ClipSplit,
    pub interval: usize,
    pub length: usize,
    pub step: usize,
    pub tokens_per_clip: usize,
    pub clips: Vec<ClipEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeManifest {
    pub episode: String,
    pub tool: String,
    pub tool_version: String,
    /// xxh3-64 over inputs and the output-affecting config, hex.
    pub input_hash: String,
    pub frames: usize,
    pub occupancy: String,
    pub views: Vec<ViewEntry>,
    pub actions: ActionEntry,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera_fit: Option<DepthFit>,
    pub counters: Counters,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clips: Option<ClipPlan>,
    pub warnings: Vec<String>,
    /// Every file written for this episode except the manifest, sorted.
    pub files: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EpisodeStatus {
    Processed,
    Skipped,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub episode: String,
    pub status: EpisodeStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub warnings: Vec<String>,
    pub files_written: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub processed: usize,
    pub skipped: usize,
    pub failed: usize,
    pub files_written: usize,
    pub episodes: Vec<EpisodeOutcome>,
}

impl RunReport {
    pub fn from_outcomes(episodes: Vec<EpisodeOutcome>) -> Self {
        let count = |s| episodes.iter().filter(|e| e.status == s).count();
        Self {
            processed: count(EpisodeStatus::Processed),
            skipped: count(EpisodeStatus::Skipped),
            failed: count(EpisodeStatus::Failed),
            files_written: episodes.iter().map(|e| e.files_written).sum(),
            episodes,
        }
    }
}
