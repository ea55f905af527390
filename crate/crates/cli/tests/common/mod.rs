#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use occ4d_cli::config::{PipelineConfig, Preset};
use occ4d_core::camalign::{CameraRig, RigView};
use occ4d_core::geometry::{DepthImage, Intrinsics, LabelImage, Pose};
use occ4d_core::io::{write_depth, write_json, write_labels};

pub const PLANE_Z: f64 = 0.3237;

#[derive(Debug, Clone, Copy, Default)]
pub struct FixtureOptions {
    pub side_rig: bool,
    pub instance_labels: bool,
    /// Include the action that follows the last frame.
    pub next_action: bool,
}

pub fn small_camera() -> Intrinsics {
    Intrinsics::new(60.0, 60.0, 31.5, 23.5, 64, 48).unwrap()
}

/// Depth of the plane `z = PLANE_Z` seen by a camera translated along x.
pub fn plane_depth(intr: &Intrinsics) -> DepthImage {
    DepthImage::filled(intr.width, intr.height, PLANE_Z)
}

/// Left half label `a`, right half label `b`.
pub fn split_mask(intr: &Intrinsics, a: u16, b: u16) -> LabelImage {
    let w = intr.width;
    let values = (0..intr.height).flat_map(|_| (0..w).map(move |u| if u < w / 2 { a } else { b })).collect();
    LabelImage::new(w, intr.height, values).unwrap()
}

pub fn pose_at(f: usize) -> Pose {
    Pose::from_translation([0.002 * f as f64, -0.001 * f as f64, 0.0])
}

/// A flat-plane episode with `frames` frames in `root/id`.
pub fn write_plane_episode(root: &Path, id: &str, frames: usize, opts: FixtureOptions) {
    let dir = root.join(id);
    let intr = small_camera();
    let rig = CameraRig {
        frame_tag: "reference".into(),
        views: vec![RigView {
            id: "front".into(),
            intrinsics: intr,
            poses: (0..frames).map(pose_at).collect(),
        }],
    };
    write_json(&dir.join("camera.json"), &rig).unwrap();
    let (a, b) = if opts.instance_labels { (11, 12) } else { (1, 2) };
    for f in 0..frames {
        write_depth(&dir.join(format!("views/front/{f:06}_depth.bin")), &plane_depth(&intr)).unwrap();
        write_labels(&dir.join(format!("views/front/{f:06}_mask.bin")), &split_mask(&intr, a, b)).unwrap();
    }
    if opts.instance_labels {
        write_json(&dir.join("instance_labels.json"), &BTreeMap::from([("11", 1u16), ("12", 2u16)])).unwrap();
    }
    let rows = frames + usize::from(opts.next_action);
    let mut jsonl = String::new();
    for f in 0..rows {
        let action: Vec<f64> = (0..7).map(|j| 0.01 * (f * 7 + j) as f64 - 0.2).collect();
        writeln!(jsonl, "{}", serde_json::json!({"frame": f, "action": action})).unwrap();
    }
    std::fs::write(dir.join("actions.jsonl"), jsonl).unwrap();

    if opts.side_rig {
        // side reconstruction is twice the reference scale
        let side = CameraRig {
            frame_tag: "side".into(),
            views: vec![RigView {
                id: "side".into(),
                intrinsics: intr,
                poses: (0..frames)
                    .map(|f| {
                        let t = pose_at(f).translation;
                        Pose::from_translation([2.0 * (t.x + 0.05), 2.0 * t.y, 2.0 * t.z])
                    })
                    .collect(),
            }],
        };
        write_json(&dir.join("side_rig.json"), &side).unwrap();
        let d_ref = plane_depth(&intr);
        let d_src = DepthImage::new(intr.width, intr.height, d_ref.values.iter().map(|d| 2.0 * d).collect()).unwrap();
        write_depth(&dir.join("align/reference_depth.bin"), &d_ref).unwrap();
        write_depth(&dir.join("align/source_depth.bin"), &d_src).unwrap();
    }
}

/// Bridge preset with splats wide enough for the small fixture camera.
pub fn fixture_config(input: &Path, output: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::preset(Preset::Bridge);
    cfg.render.k = 0.012;
    cfg.render.alpha = 1.0;
    cfg.paths.input = input.to_path_buf();
    cfg.paths.output = output.to_path_buf();
    cfg
}

/// Relative path to contents for every file below `root`.
pub fn tree_bytes(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        let mut entries: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    if root.exists() {
        walk(root, root, &mut out);
    }
    out
}

/// Runs the command layer in-process and returns (exit code, stdout).
pub fn run_cli(args: &[&str]) -> (i32, String) {
    let mut buf = Vec::new();
    let argv = std::iter::once("occ4d").chain(args.iter().copied());
    let code = occ4d_cli::commands::main(argv, &mut buf);
    (code, String::from_utf8(buf).unwrap())
}
