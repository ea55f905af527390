//! Episode discovery and the end-to-end batch pipeline.
//!
//! Episode input layout, relative to the episode directory:
//!
//! ```text
//! camera.json                      reference rig (CameraRig JSON)
//! views/{view}/{frame:06}_depth.bin (+ .json sidecar)
//! views/{view}/{frame:06}_mask.bin  (+ .json sidecar)
//! actions.jsonl                    {"frame", "action"} per line
//! instance_labels.json             optional {"instance id": label}
//! side_rig.json                    optional rig in its own reconstruction frame
//! align/reference_depth.bin        required with side_rig.json
//! align/source_depth.bin           required with side_rig.json
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::{debug, info, warn};
use occ4d_core::actionprep::{
    chunk_actions, pad_track, read_action_track, token_count, validate_length, write_chunked, LengthVerdict,
    TokenBudget,
};
use occ4d_core::camalign::{fit_affine_depth, fit_scale_depth, transfer_rig, CameraRig, DepthFit};
use occ4d_core::geometry::{backproject_depth, LabelImage, LabeledPointSet};
use occ4d_core::io::{read_depth, read_json, read_labels, sidecar_path, write_json};
use occ4d_core::labelspace::{build_palette, LabelSpace};
use occ4d_core::occupancy::{voxelize_points, write_occ4, OccupancyFrame, OccupancyGrid4D, VoxelizeStats};
use occ4d_core::renderer::render_both;
use rayon::prelude::*;
use xxhash_rust::xxh3::Xxh3;

use crate::config::{AlignMode, PipelineConfig};
use crate::error::{CliError, CliResult};
use crate::manifest::*;

pub const TOOL_NAME: &str = "occ4d";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const CAMERA_FILE: &str = "camera.json";
pub const ACTIONS_FILE: &str = "actions.jsonl";
pub const INSTANCE_FILE: &str = "instance_labels.json";
pub const SIDE_RIG_FILE: &str = "side_rig.json";
pub const ALIGN_REFERENCE: &str = "align/reference_depth.bin";
pub const ALIGN_SOURCE: &str = "align/source_depth.bin";

pub fn depth_input(view: &str, frame: usize) -> String {
    format!("views/{view}/{frame:06}_depth.bin")
}

pub fn mask_input(view: &str, frame: usize) -> String {
    format!("views/{view}/{frame:06}_mask.bin")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpisodeDir {
    pub id: String,
    pub dir: PathBuf,
}

/// Subdirectories of `root` whose names match `pattern`, sorted by name.
pub fn discover_episodes(root: &Path, pattern: &str) -> CliResult<Vec<EpisodeDir>> {
    let pat = glob::Pattern::new(pattern)?;
    let entries = std::fs::read_dir(root).map_err(|e| CliError::io(root, e))?;
    let mut found = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| CliError::io(root, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if entry.path().is_dir() && pat.matches(&name) {
            found.push(EpisodeDir {
                id: name,
                dir: entry.path(),
            });
        }
    }
    found.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(found)
}

pub fn resolve_palette(cfg: &PipelineConfig) -> CliResult<Vec<[u8; 3]>> {
    match &cfg.labels.space {
        Some(path) => {
            let ls: LabelSpace = read_json(path)?;
            ls.validate()?;
            Ok(ls.palette)
        }
        None => Ok(build_palette(cfg.labels.count)),
    }
}

/// Training or evaluation clip starts for an episode of `frames` frames.
pub fn enumerate_clips(frames: usize, length: usize, step: usize, interval: usize) -> Vec<ClipEntry> {
    if length == 0 || step == 0 || interval == 0 {
        return Vec::new();
    }
    let span = (length - 1) * step;
    (0..frames)
        .step_by(interval)
        .take_while(|start| start + span < frames)
        .map(|start| ClipEntry {
            start,
            frames: (0..length).map(|i| start + i * step).collect(),
        })
        .collect()
}

/// Relative paths of every input the episode needs.
fn input_files(dir: &Path, rig: &CameraRig) -> Vec<String> {
    let mut files = vec![CAMERA_FILE.to_string(), ACTIONS_FILE.to_string()];
    for v in &rig.views {
        for f in 0..rig.frame_count() {
            for bin in [depth_input(&v.id, f), mask_input(&v.id, f)] {
                files.push(sidecar_path(Path::new(&bin)).to_string_lossy().into_owned());
                files.push(bin);
            }
        }
    }
    if dir.join(INSTANCE_FILE).exists() {
        files.push(INSTANCE_FILE.to_string());
    }
    if dir.join(SIDE_RIG_FILE).exists() {
        files.push(SIDE_RIG_FILE.to_string());
        for bin in [ALIGN_REFERENCE, ALIGN_SOURCE] {
            files.push(sidecar_path(Path::new(bin)).to_string_lossy().into_owned());
            files.push(bin.to_string());
        }
    }
    files.sort();
    files
}

fn content_hash(cfg: &PipelineConfig, palette: &[[u8; 3]], dir: &Path, files: &[String]) -> CliResult<String> {
    let mut h = Xxh3::new();
    let subset = serde_json::json!({
        "tool_version": TOOL_VERSION,
        "grid": cfg.grid,
        "render": cfg.render,
        "action": cfg.action,
        "sequence": cfg.sequence,
        "latent": cfg.latent,
        "alignment": cfg.alignment,
        "clips": cfg.clips,
        "palette": palette,
    });
    h.update(subset.to_string().as_bytes());
    for f in files {
        let path = dir.join(f);
        let bytes = std::fs::read(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => CliError::Missing(path.clone()),
            _ => CliError::io(&path, e),
        })?;
        h.update(f.as_bytes());
        h.update(&(bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(format!("{:016x}", h.digest()))
}

fn up_to_date(out_dir: &Path, hash: &str) -> bool {
    let Ok(m) = read_json::<EpisodeManifest>(&out_dir.join(MANIFEST_NAME)) else {
        return false;
    };
    m.input_hash == hash && m.files.iter().all(|f| out_dir.join(f).is_file())
}

fn read_instance_map(path: &Path) -> CliResult<BTreeMap<u16, u16>> {
    let raw: BTreeMap<String, u16> = read_json(path)?;
    raw.into_iter()
        .map(|(k, v)| {
            k.parse::<u16>()
                .map(|id| (id, v))
                .map_err(|_| CliError::Invalid(format!("{}: instance id {k:?} is not a u16", path.display())))
        })
        .collect()
}

/// Rewrites instance ids to label ids; unknown instances become background.
fn apply_instance_map(mask: &mut LabelImage, map: &BTreeMap<u16, u16>) -> usize {
    let mut unmapped = 0;
    for v in mask.values.iter_mut() {
        if *v == 0 {
            continue;
        }
        match map.get(v) {
            Some(l) => *v = *l,
            None => {
                unmapped += 1;
                *v = 0;
            }
        }
    }
    unmapped
}

/// Writes files relative to one output directory and records their names.
struct OutputTree {
    root: PathBuf,
    files: Vec<String>,
}

impl OutputTree {
    fn path(&mut self, rel: &str) -> PathBuf {
        self.files.push(rel.to_string());
        self.root.join(rel)
    }

    fn with_sidecar(&mut self, rel: &str) -> PathBuf {
        let p = self.path(rel);
        self.files.push(sidecar_path(Path::new(rel)).to_string_lossy().into_owned());
        p
    }
}

/// Back-projects every view of every frame into the configured grid and
/// votes one label per voxel.
pub fn build_occupancy(
    cfg: &PipelineConfig,
    dir: &Path,
    rig: &CameraRig,
    instance_map: Option<&BTreeMap<u16, u16>>,
) -> CliResult<(OccupancyGrid4D, Counters)> {
    let spec = cfg.grid.spec()?;
    let frames = rig.frame_count();
    let per_frame: Vec<(OccupancyFrame, VoxelizeStats, usize)> = (0..frames)
        .into_par_iter()
        .map(|f| -> CliResult<_> {
            let mut points = LabeledPointSet::default();
            let mut unmapped = 0;
            for v in &rig.views {
                let depth = read_depth(&dir.join(depth_input(&v.id, f)))?;
                let mut mask = read_labels(&dir.join(mask_input(&v.id, f)))?;
                if let Some(map) = instance_map {
                    unmapped += apply_instance_map(&mut mask, map);
                }
                points.extend(backproject_depth(&depth, &mask, &v.intrinsics, &v.poses[f])?);
            }
            let (frame, stats) = voxelize_points(&points, &spec);
            Ok((frame, stats, unmapped))
        })
        .collect::<CliResult<_>>()?;

    let mut counters = Counters::default();
    let mut occ_frames = Vec::with_capacity(frames);
    for (frame, stats, unmapped) in per_frame {
        counters.points_total += stats.total;
        counters.points_kept += stats.kept;
        counters.points_dropped += stats.dropped;
        counters.voxels_per_frame += frame.len();
        counters.max_voxels = counters.max_voxels.max(frame.len());
        counters.unmapped_instances += unmapped;
        occ_frames.push(frame);
    }
    counters.voxels_per_frame /= frames.max(1);
    let grid = OccupancyGrid4D::new(spec, occ_frames, (0..frames as u32).collect())?;
    Ok((grid, counters))
}

pub fn load_rig(path: &Path) -> CliResult<CameraRig> {
    if !path.is_file() {
        return Err(CliError::Missing(path.to_path_buf()));
    }
    let rig: CameraRig = read_json(path)?;
    rig.validate()?;
    if rig.views.is_empty() || rig.frame_count() == 0 {
        return Err(CliError::Invalid(format!("{}: rig has no views or no frames", path.display())));
    }
    Ok(rig)
}

pub fn read_instance_labels(dir: &Path) -> CliResult<Option<BTreeMap<u16, u16>>> {
    match dir.join(INSTANCE_FILE) {
        p if p.is_file() => Ok(Some(read_instance_map(&p)?)),
        _ => Ok(None),
    }
}

struct Rendered {
    view: usize,
    frame: usize,
    depth: occ4d_core::renderer::DepthMap,
    semantic: occ4d_core::renderer::SemanticMap,
}

/// Runs every stage for one episode and writes its outputs under
/// `out_root/{episode}`.
pub fn process_episode(
    cfg: &PipelineConfig,
    palette: &[[u8; 3]],
    ep: &EpisodeDir,
    out_root: &Path,
) -> CliResult<EpisodeOutcome> {
    let rig = load_rig(&ep.dir.join(CAMERA_FILE))?;
    let frames = rig.frame_count();

    let files = input_files(&ep.dir, &rig);
    let hash = content_hash(cfg, palette, &ep.dir, &files)?;
    let out_dir = out_root.join(&ep.id);
    if up_to_date(&out_dir, &hash) {
        info!("{}: up to date", ep.id);
        return Ok(EpisodeOutcome {
            episode: ep.id.clone(),
            status: EpisodeStatus::Skipped,
            error: None,
            warnings: Vec::new(),
            files_written: 0,
        });
    }

    let mut warnings = Vec::new();
    if let LengthVerdict::Rejected { reason } = validate_length(frames + 1) {
        warnings.push(format!("video length {} with placeholder frame: {reason}", frames + 1));
    }

    let instance_map = read_instance_labels(&ep.dir)?;

    let (grid, counters) = build_occupancy(cfg, &ep.dir, &rig, instance_map.as_ref())?;
    if counters.points_dropped > 0 {
        warnings.push(format!("{} points fell outside the grid", counters.points_dropped));
    }
    if counters.unmapped_instances > 0 {
        warnings.push(format!(
            "{} mask pixels carry instance ids missing from {INSTANCE_FILE}",
            counters.unmapped_instances
        ));
    }
    if let Some(l) = grid.frames.iter().flat_map(|f| f.voxels()).map(|v| v.label).find(|l| *l as usize > palette.len()) {
        warnings.push(format!("label {l} exceeds the {}-entry palette", palette.len()));
    }

    // side views in the reference frame
    let mut camera_fit: Option<DepthFit> = None;
    let mut views: Vec<(ViewRole, occ4d_core::camalign::RigView)> =
        rig.views.iter().map(|v| (ViewRole::Reference, v.clone())).collect();
    let side_path = ep.dir.join(SIDE_RIG_FILE);
    if side_path.is_file() {
        let side: CameraRig = read_json(&side_path)?;
        side.validate()?;
        if side.frame_count() != frames {
            return Err(CliError::Invalid(format!(
                "{SIDE_RIG_FILE} has {} frames, reference rig has {frames}",
                side.frame_count()
            )));
        }
        if let Some(v) = side.views.iter().find(|s| rig.views.iter().any(|r| r.id == s.id)) {
            return Err(CliError::Invalid(format!("side view id {:?} repeats a reference view", v.id)));
        }
        let d_ref = read_depth(&ep.dir.join(ALIGN_REFERENCE))?;
        let d_src = read_depth(&ep.dir.join(ALIGN_SOURCE))?;
        let fit = match cfg.alignment {
            AlignMode::Scale => fit_scale_depth(&d_ref, &d_src, None)?,
            AlignMode::Affine => fit_affine_depth(&d_ref, &d_src, None)?,
        };
        debug!("{}: side rig fit {fit:?}", ep.id);
        let moved = transfer_rig(&side, &fit, &rig.frame_tag)?;
        views.extend(moved.views.into_iter().map(|v| (ViewRole::Side, v)));
        camera_fit = Some(fit);
    }

    // condition maps
    let jobs: Vec<(usize, usize)> = (0..views.len()).flat_map(|v| (0..frames).map(move |f| (v, f))).collect();
    let rendered: Vec<Rendered> = jobs
        .into_par_iter()
        .map(|(vi, f)| {
            let view = &views[vi].1;
            let (depth, semantic) = render_both(&grid.frames[f], &view.intrinsics, &view.poses[f], &cfg.render, palette);
            Rendered {
                view: vi,
                frame: f,
                depth,
                semantic,
            }
        })
        .collect();

    // actions
    let track = read_action_track(&ep.dir.join(ACTIONS_FILE))?;
    if track.d_action() != cfg.action.d_action {
        return Err(CliError::Invalid(format!(
            "actions have dimension {}, config expects {}",
            track.d_action(),
            cfg.action.d_action
        )));
    }
    let (track, next) = match track.frames() {
        t if t == frames => (track, None),
        t if t == frames + 1 => {
            let next = track.row(frames).to_vec();
            let head = occ4d_core::actionprep::ActionTrack::new(track.d_action(), track.values()[..frames * track.d_action()].to_vec())?;
            (head, Some(next))
        }
        t => {
            return Err(CliError::Invalid(format!(
                "{ACTIONS_FILE} has {t} frames, episode has {frames} (expected {frames} or {})",
                frames + 1
            )))
        }
    };
    let padded = pad_track(&track, cfg.action.r, next.as_deref())?;
    let chunked = chunk_actions(&padded.values, cfg.action.r, cfg.action.d_action)?;

    let clips = match cfg.clips {
        Some(split) => {
            let interval = match split {
                crate::config::ClipSplit::Train => cfg.sequence.sample_interval[0],
                crate::config::ClipSplit::Eval => cfg.sequence.sample_interval[1],
            };
            if let LengthVerdict::Rejected { reason } = validate_length(cfg.sequence.length + 1) {
                warnings.push(format!("clip length {} with placeholder frame: {reason}", cfg.sequence.length + 1));
            }
            let tokens = token_count(&TokenBudget {
                frames: cfg.sequence.length,
                latent_h: cfg.latent.height,
                latent_w: cfg.latent.width,
                patch: cfg.latent.patch,
                r: cfg.action.r,
            })?;
            let list = enumerate_clips(frames, cfg.sequence.length, cfg.sequence.step, interval);
            if list.is_empty() {
                warnings.push(format!("episode too short for a {}-frame clip", cfg.sequence.length));
            }
            Some(ClipPlan {
                split,
                interval,
                length: cfg.sequence.length,
                step: cfg.sequence.step,
                tokens_per_clip: tokens,
                clips: list,
            })
        }
        None => None,
    };

    if cfg.strict_mode && !warnings.is_empty() {
        return Err(CliError::Strict(warnings.join("; ")));
    }
    for w in &warnings {
        warn!("{}: {w}", ep.id);
    }

    // persist
    let mut out = OutputTree {
        root: out_dir.clone(),
        files: Vec::new(),
    };
    write_occ4(&out.path(OCCUPANCY_NAME), &grid)?;
    write_chunked(&out.with_sidecar(ACTIONS_NAME), &chunked)?;

    let mut view_entries: Vec<ViewEntry> = views
        .iter()
        .map(|(role, v)| ViewEntry {
            id: v.id.clone(),
            role: *role,
            intrinsics: v.intrinsics,
            frames: Vec::with_capacity(frames),
        })
        .collect();
    for r in &rendered {
        let (role, view) = &views[r.view];
        let stem = format!("{}/{:06}", view.id, r.frame);
        let depth_rel = format!("{stem}_depth.bin");
        let sem_rel = format!("{stem}_sem.bin");
        let ppm_rel = format!("{stem}_sem.ppm");
        r.depth.write(&out.with_sidecar(&depth_rel))?;
        r.semantic.write_labels(&out.with_sidecar(&sem_rel))?;
        r.semantic.write_ppm(&out.path(&ppm_rel))?;
        let reference = *role == ViewRole::Reference;
        view_entries[r.view].frames.push(FrameEntry {
            frame: r.frame as u32,
            pose: view.poses[r.frame].to_row_major(),
            depth_input: reference.then(|| depth_input(&view.id, r.frame)),
            mask_input: reference.then(|| mask_input(&view.id, r.frame)),
            depth_map: depth_rel,
            semantic_map: sem_rel,
            semantic_preview: ppm_rel,
        });
    }

    out.files.sort();
    let manifest = EpisodeManifest {
        episode: ep.id.clone(),
        tool: TOOL_NAME.to_string(),
        tool_version: TOOL_VERSION.to_string(),
        input_hash: hash,
        frames,
        occupancy: OCCUPANCY_NAME.to_string(),
        views: view_entries,
        actions: ActionEntry {
            file: ACTIONS_NAME.to_string(),
            source_frames: padded.source_frames,
            chunks: chunked.count(),
            r: chunked.r,
            d_action: chunked.d_action,
            padded_rows: padded.rows() - padded.source_frames,
        },
        camera_fit,
        counters,
        clips,
        warnings: warnings.clone(),
        files: out.files,
    };
    write_json(&out_dir.join(MANIFEST_NAME), &manifest)?;
    let files_written = manifest.files.len() + 1;
    info!("{}: wrote {files_written} files", ep.id);
    Ok(EpisodeOutcome {
        episode: ep.id.clone(),
        status: EpisodeStatus::Processed,
        error: None,
        warnings,
        files_written,
    })
}

/// Processes every matching episode with up to `workers` threads. Failures
/// are recorded per episode; the run itself only errors on setup problems.
pub fn run_pipeline(cfg: &PipelineConfig, pattern: &str, workers: usize) -> CliResult<RunReport> {
    cfg.validate()?;
    let palette = resolve_palette(cfg)?;
    let episodes = discover_episodes(&cfg.paths.input, pattern)?;
    if episodes.is_empty() {
        warn!("no episodes match {pattern:?} under {}", cfg.paths.input.display());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Invalid(format!("thread pool: {e}")))?;
    let outcomes = pool.install(|| {
        episodes
            .par_iter()
            .map(|ep| {
                process_episode(cfg, &palette, ep, &cfg.paths.output).unwrap_or_else(|e| {
                    warn!("{}: {e}", ep.id);
                    EpisodeOutcome {
                        episode: ep.id.clone(),
                        status: EpisodeStatus::Failed,
                        error: Some(e.to_string()),
                        warnings: Vec::new(),
                        files_written: 0,
                    }
                })
            })
            .collect::<Vec<_>>()
    });
    Ok(RunReport::from_outcomes(outcomes))
}
