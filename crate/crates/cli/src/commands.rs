//! Command-line surface. [`main`] returns the process exit code.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::warn;
use occ4d_core::actionprep::{chunk_actions, pad_track, read_action_track, validate_length, write_chunked, LengthVerdict};
use occ4d_core::camalign::{fit_affine_depth, fit_scale_depth, transfer_rig, CameraRig};
use occ4d_core::io::{read_depth, read_f32_raster, read_json, read_jsonl, write_json};
use occ4d_core::labelspace::{fit_label_space, CaptionEmbedding, KMeansParams};
use occ4d_core::metrics::{psnr, ssim, Image, ImagePair};
use occ4d_core::occupancy::{read_occ4, voxelize_mesh, write_occ4, OccupancyGrid4D, Triangle};
use occ4d_core::renderer::render_both;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{AlignMode, ClipSplit, PipelineConfig, Preset};
use crate::error::{CliError, CliResult};
use crate::pipeline::{build_occupancy, load_rig, read_instance_labels, resolve_palette, run_pipeline, CAMERA_FILE};
use crate::validate::validate_dataset;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_STRICT: i32 = 2;
pub const LOG_ENV: &str = "OCC4D_LOG";

#[derive(Debug, Parser)]
#[command(name = "occ4d", version, about = "4D semantic occupancy and condition-map pipeline")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Pipeline config JSON; omitted fields come from the preset.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub preset: Option<Preset>,
    /// Episode directory name pattern.
    #[arg(long, global = true, default_value = "*")]
    pub episodes: String,
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,
    /// Treat warnings as failures.
    #[arg(long, global = true)]
    pub strict: bool,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build an OCC4 file from one episode directory or a triangle mesh.
    BuildOcc {
        #[arg(long, required_unless_present = "mesh")]
        episode: Option<PathBuf>,
        /// JSON array of triangles, each three [x, y, z] vertices.
        #[arg(long, conflicts_with = "episode")]
        mesh: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        label: u16,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render depth and semantic maps for every view and frame of a rig.
    RenderCond {
        #[arg(long)]
        occ: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Only this view.
        #[arg(long)]
        view: Option<String>,
    },
    /// Fit scale (and shift) between depth maps and move a rig into the reference frame.
    AlignCams {
        #[arg(long)]
        reference_depth: PathBuf,
        #[arg(long)]
        source_depth: PathBuf,
        #[arg(long)]
        rig: Option<PathBuf>,
        #[arg(long, requires = "rig")]
        out: Option<PathBuf>,
        #[arg(long, default_value = "reference")]
        frame_tag: String,
        #[arg(long, value_enum)]
        mode: Option<AlignMode>,
    },
    /// Pad and chunk an action track.
    PrepActions {
        #[arg(long)]
        actions: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cluster caption embeddings into a label space.
    FitLabels {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// PSNR and SSIM over image pairs (PPM or f32 rasters in [0, 1]).
    Metrics {
        /// Files as consecutive pairs: A1 B1 A2 B2 ...
        #[arg(required = true, num_args = 2..)]
        files: Vec<PathBuf>,
    },
    /// Check a generated dataset tree.
    Validate { root: PathBuf },
    /// Full pipeline over every matching episode.
    Run {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, value_enum)]
        clips: Option<ClipSplit>,
    },
}

pub fn init_logging() {
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn"))
        .target(env_logger::Target::Stderr)
        .try_init();
}

/// Parses `args` (including the program name) and runs the command.
pub fn main<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(code) => code,
        Err(e @ CliError::Strict(_)) => {
            eprintln!("error: {e}");
            EXIT_STRICT
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}

pub fn resolve_config(global: &GlobalArgs) -> CliResult<PipelineConfig> {
    let mut cfg = match &global.config {
        Some(p) => PipelineConfig::load(p, global.preset)?,
        None => PipelineConfig::preset(global.preset.unwrap_or(Preset::Bridge)),
    };
    if let (Some(p), Some(_)) = (global.preset, &global.config) {
        if cfg.dataset != p.name() {
            warn!("config names dataset {:?}; --preset {} only fills missing fields", cfg.dataset, p.name());
        }
    }
    cfg.strict_mode |= global.strict;
    if let Some(s) = global.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn print_json<T: Serialize>(out: &mut dyn Write, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(occ4d_core::Error::from)?;
    writeln!(out, "{text}").map_err(|e| CliError::io("<stdout>", e))
}

#[derive(Serialize)]
struct BuildSummary {
    frames: usize,
    voxels: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct PairScore {
    a: String,
    b: String,
    psnr: f64,
    ssim: f64,
}

#[derive(Serialize)]
struct MetricsReport {
    pairs: Vec<PairScore>,
    mean: Aggregate,
}

#[derive(Serialize)]
struct Aggregate {
    psnr: f64,
    ssim: f64,
}

fn load_image(path: &Path) -> CliResult<Image> {
    if path.extension().is_some_and(|e| e == "ppm") {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        return Ok(Image::from_ppm(&bytes)?);
    }
    let (sc, values) = read_f32_raster(path)?;
    Ok(Image::new(sc.width as usize, sc.height as usize, 1, values.into_iter().map(f64::from).collect())?)
}

fn execute(cli: &Cli, out: &mut dyn Write) -> CliResult<i32> {
    let cfg = resolve_config(&cli.global)?;
    match &cli.command {
        Command::BuildOcc {
            episode,
            mesh,
            label,
            out: dest,
        } => {
            let grid = match (episode, mesh) {
                (Some(dir), _) => {
                    let rig = load_rig(&dir.join(CAMERA_FILE))?;
                    let map = read_instance_labels(dir)?;
                    let (grid, counters) = build_occupancy(&cfg, dir, &rig, map.as_ref())?;
                    if counters.points_dropped > 0 {
                        let msg = format!("{} points fell outside the grid", counters.points_dropped);
                        if cfg.strict_mode {
                            return Err(CliError::Strict(msg));
                        }
                        warn!("{msg}");
                    }
                    grid
                }
                (None, Some(path)) => {
                    let tris: Vec<Triangle> = read_json(path)?;
                    let spec = cfg.grid.spec()?;
                    let frame = voxelize_mesh(&tris, &spec, *label)?;
                    OccupancyGrid4D::new(spec, vec![frame], vec![0])?
                }
                (None, None) => unreachable!("clap requires a source"),
            };
            write_occ4(dest, &grid)?;
            print_json(
                out,
                &BuildSummary {
                    frames: grid.frames.len(),
                    voxels: grid.frames.iter().map(|f| f.len()).collect(),
                },
            )?;
        }
        Command::RenderCond {
            occ,
            camera,
            out: dest,
            view,
        } => {
            let grid = read_occ4(occ)?;
            let rig = load_rig(camera)?;
            if rig.frame_count() != grid.frames.len() {
                return Err(CliError::Invalid(format!(
                    "rig has {} frames, occupancy has {}",
                    rig.frame_count(),
                    grid.frames.len()
                )));
            }
            let views: Vec<_> = rig.views.iter().filter(|v| view.as_ref().is_none_or(|id| &v.id == id)).collect();
            if views.is_empty() {
                return Err(CliError::Invalid(format!("no view named {view:?}")));
            }
            let palette = resolve_palette(&cfg)?;
            let jobs: Vec<_> = views.iter().flat_map(|v| (0..grid.frames.len()).map(move |f| (*v, f))).collect();
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(cli.global.workers)
                .build()
                .map_err(|e| CliError::Invalid(format!("thread pool: {e}")))?;
            pool.install(|| {
                jobs.par_iter().try_for_each(|(v, f)| -> CliResult<()> {
                    let (depth, sem) = render_both(&grid.frames[*f], &v.intrinsics, &v.poses[*f], &cfg.render, &palette);
                    let stem = dest.join(&v.id).join(format!("{f:06}"));
                    depth.write(&stem.with_file_name(format!("{f:06}_depth.bin")))?;
                    sem.write_labels(&stem.with_file_name(format!("{f:06}_sem.bin")))?;
                    sem.write_ppm(&stem.with_file_name(format!("{f:06}_sem.ppm")))?;
                    Ok(())
                })
            })?;
        }
        Command::AlignCams {
            reference_depth,
            source_depth,
            rig,
            out: dest,
            frame_tag,
            mode,
        } => {
            let d_ref = read_depth(reference_depth)?;
            let d_src = read_depth(source_depth)?;
            let fit = match mode.unwrap_or(cfg.alignment) {
                AlignMode::Scale => fit_scale_depth(&d_ref, &d_src, None)?,
                AlignMode::Affine => fit_affine_depth(&d_ref, &d_src, None)?,
            };
            if let (Some(rig), Some(dest)) = (rig, dest) {
                let side: CameraRig = read_json(rig)?;
                side.validate()?;
                write_json(dest, &transfer_rig(&side, &fit, frame_tag)?)?;
            }
            print_json(out, &fit)?;
        }
        Command::PrepActions { actions, out: dest } => {
            let track = read_action_track(actions)?;
            if let LengthVerdict::Rejected { reason } = validate_length(track.frames() + 1) {
                let msg = format!("video length {} with placeholder frame: {reason}", track.frames() + 1);
                if cfg.strict_mode {
                    return Err(CliError::Strict(msg));
                }
                warn!("{msg}");
            }
            let padded = pad_track(&track, cfg.action.r, None)?;
            let chunks = chunk_actions(&padded.values, cfg.action.r, track.d_action())?;
            write_chunked(dest, &chunks)?;
            print_json(
                out,
                &serde_json::json!({"C": chunks.count(), "r": chunks.r, "D_action": chunks.d_action}),
            )?;
        }
        Command::FitLabels { embeddings, k, out: dest } => {
            let records: Vec<CaptionEmbedding> = read_jsonl(embeddings)?;
            let params = KMeansParams {
                k: k.unwrap_or(cfg.labels.count),
                seed: cfg.seed,
                ..KMeansParams::default()
            };
            let (ls, fit) = fit_label_space(&records, &params)?;
            write_json(dest, &ls)?;
            print_json(
                out,
                &serde_json::json!({
                    "k": ls.k,
                    "E": ls.dim,
                    "iterations": fit.iterations,
                    "converged": fit.converged,
                    "inertia": fit.inertia(),
                }),
            )?;
        }
        Command::Metrics { files } => {
            if files.len() % 2 != 0 {
                return Err(CliError::Invalid("metrics needs an even number of files".into()));
            }
            let pairs = files
                .chunks(2)
                .map(|p| -> CliResult<PairScore> {
                    let a = load_image(&p[0])?;
                    let b = load_image(&p[1])?;
                    let pair = ImagePair::new(&a, &b)?;
                    Ok(PairScore {
                        a: p[0].display().to_string(),
                        b: p[1].display().to_string(),
                        psnr: psnr(pair),
                        ssim: ssim(pair)?,
                    })
                })
                .collect::<CliResult<Vec<_>>>()?;
            let n = pairs.len() as f64;
            let mean = Aggregate {
                psnr: pairs.iter().map(|p| p.psnr).sum::<f64>() / n,
                ssim: pairs.iter().map(|p| p.ssim).sum::<f64>() / n,
            };
            print_json(out, &MetricsReport { pairs, mean })?;
        }
        Command::Validate { root } => {
            if !root.is_dir() {
                return Err(CliError::Missing(root.clone()));
            }
            let report = validate_dataset(root);
            print_json(out, &report)?;
            if !report.all_passed() && cfg.strict_mode {
                return Ok(EXIT_STRICT);
            }
        }
        Command::Run { input, output, clips } => {
            let mut cfg = cfg;
            if let Some(i) = input {
                cfg.paths.input = i.clone();
            }
            if let Some(o) = output {
                cfg.paths.output = o.clone();
            }
            if clips.is_some() {
                cfg.clips = *clips;
            }
            if cfg.paths.input.as_os_str().is_empty() || cfg.paths.output.as_os_str().is_empty() {
                return Err(CliError::Config("input and output roots are required (config paths or --input/--output)".into()));
            }
            let report = run_pipeline(&cfg, &cli.global.episodes, cli.global.workers.max(1))?;
            print_json(out, &report)?;
            if cfg.strict_mode && report.failed > 0 {
                return Ok(EXIT_STRICT);
            }
        }
    }
    Ok(EXIT_OK)
}
