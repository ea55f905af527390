//! Acceptance criteria 1-10. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use ndarray::{Array, Array2, Array3, Axis};
use occ4d_core::actionprep::{chunk_actions, chunk_count, pad_track, validate_length, ActionTrack, TokenBudget};
use occ4d_core::camalign::{fit_affine_depth, fit_scale_depth, transfer_rig, CameraRig, RigView};
use occ4d_core::condmath::{adaln_modulate, fuse_conditions, layer_norm, AdaLNWeights, FusionWeights};
use occ4d_core::geometry::{backproject_depth, DepthImage, Intrinsics, LabelImage, Pose};
use occ4d_core::labelspace::{kmeans, KMeansParams};
use occ4d_core::metrics::{psnr, ssim, Image, ImagePair};
use occ4d_core::occupancy::{
    decode_occ4, encode_occ4, voxelize_points, GridSpec, OccupancyFrame, OccupancyGrid4D, Voxel,
};
use occ4d_core::renderer::{render_both, splat_scale, GaussianScaleParams};
use occ4d_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

// ---- 1 ---------------------------------------------------------------------

fn token_accounting() -> Check {
    let bridge = TokenBudget { frames: 16, latent_h: 40, latent_w: 60, patch: 2, r: 4 };
    let droid = TokenBudget { frames: 24, latent_h: 32, latent_w: 40, patch: 2, r: 4 };
    let (b, d) = (bridge.tokens().map_err(|e| e.to_string())?, droid.tokens().map_err(|e| e.to_string())?);
    ensure!(b == 3000, "bridge tokens {b} != 3000");
    ensure!(d == 2240, "droid tokens {d} != 2240");
    Ok(format!("bridge {b}, droid {d}"))
}

// ---- 2 ---------------------------------------------------------------------

fn padding_and_chunking() -> Check {
    let (r, d) = (4usize, 7usize);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for t in [8usize, 16, 24, 48] {
        let values: Vec<f64> = (0..t * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let track = ActionTrack::new(d, values.clone()).map_err(|e| e.to_string())?;
        let padded = pad_track(&track, r, None).map_err(|e| e.to_string())?;
        let chunks = chunk_actions(&padded.values, r, d).map_err(|e| e.to_string())?;
        let want = (t + 1).div_ceil(4);
        ensure!(chunks.count() == want && chunk_count(t, r) == want, "T={t}: {} chunks, want {want}", chunks.count());
        let rows = padded.rows();
        for row in rows - 3..rows {
            ensure!(padded.row(row).iter().all(|v| *v == 0.0), "T={t}: row {row} not zero");
        }
        ensure!(padded.row(t) == track.row(t - 1), "T={t}: placeholder row is not the repeated last action");
        ensure!(padded.values[..t * d] == values[..], "T={t}: source rows altered");
        ensure!(chunks.unchunk() == padded.values, "T={t}: unchunk(chunk(x)) != x");
    }
    ensure!(validate_length(17).is_ok(), "17 rejected");
    ensure!(validate_length(25).is_ok(), "25 rejected");
    ensure!(!validate_length(16).is_ok(), "16 accepted");
    Ok("T in {8,16,24,48}; 17/25 accepted, 16 rejected".into())
}

// ---- 3 ---------------------------------------------------------------------

const AFFINE_TOL: f64 = 1e-9;
const SCALE_TOL: f64 = 1e-12;
const TRANSFER_TOL: f64 = 1e-9;

fn random_depth(rng: &mut ChaCha8Rng, w: u32, h: u32) -> DepthImage {
    DepthImage::new(w, h, (0..w * h).map(|_| rng.random_range(0.2..2.0)).collect()).unwrap()
}

fn least_squares_alignment() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_affine: f64 = 0.0;
    let mut worst_scale: f64 = 0.0;
    for _ in 0..20 {
        let src = random_depth(&mut rng, 32, 24);
        let (a, b) = (rng.random_range(0.2..3.0), rng.random_range(-0.03..0.5));
        let reference = DepthImage::new(32, 24, src.values.iter().map(|x| a * x + b).collect()).unwrap();
        let fit = fit_affine_depth(&reference, &src, None).map_err(|e| e.to_string())?;
        worst_affine = worst_affine.max((fit.scale - a).abs()).max((fit.shift - b).abs());

        let noisy = DepthImage::new(32, 24, src.values.iter().map(|x| a * x + rng.random_range(0.0..0.05)).collect()).unwrap();
        let fit = fit_scale_depth(&noisy, &src, None).map_err(|e| e.to_string())?;
        let (mut num, mut den) = (0.0, 0.0);
        for (x, y) in src.values.iter().zip(&noisy.values) {
            num += x * y;
            den += x * x;
        }
        worst_scale = worst_scale.max((fit.scale - num / den).abs());
        ensure!(fit.shift == 0.0, "scale-only fit has shift {}", fit.shift);
    }
    ensure!(worst_affine < AFFINE_TOL, "affine error {worst_affine:e}");
    ensure!(worst_scale < SCALE_TOL, "scale error {worst_scale:e}");

    // frame B is frame A with every length multiplied by s
    let s = 2.75;
    let intr = Intrinsics::new(100.0, 100.0, 15.5, 11.5, 32, 24).unwrap();
    let truth: Vec<Pose> = (0..4)
        .map(|i| {
            let (sn, c) = (0.1 * i as f64).sin_cos();
            let t = [0.1 * i as f64, -0.05, 0.3 + 0.02 * i as f64];
            Pose::from_row_major(&[c, 0.0, sn, t[0], 0.0, 1.0, 0.0, t[1], -sn, 0.0, c, t[2], 0.0, 0.0, 0.0, 1.0]).unwrap()
        })
        .collect();
    let scaled = CameraRig {
        frame_tag: "B".into(),
        views: vec![RigView {
            id: "cam".into(),
            intrinsics: intr,
            poses: truth
                .iter()
                .map(|p| Pose { rotation: p.rotation, translation: p.translation * s })
                .collect(),
        }],
    };
    let depth_a = random_depth(&mut rng, 32, 24);
    let depth_b = DepthImage::new(32, 24, depth_a.values.iter().map(|d| d * s).collect()).unwrap();
    let fit = fit_scale_depth(&depth_a, &depth_b, None).map_err(|e| e.to_string())?;
    let moved = transfer_rig(&scaled, &fit, "A").map_err(|e| e.to_string())?;
    let mut worst_t: f64 = 0.0;
    for (p, q) in moved.views[0].poses.iter().zip(&truth) {
        worst_t = worst_t.max((p.translation - q.translation).abs().max());
    }
    ensure!(worst_t < TRANSFER_TOL, "transfer error {worst_t:e}");
    ensure!(moved.frame_tag == "A", "frame tag {}", moved.frame_tag);
    Ok(format!("affine {worst_affine:.1e}, scale {worst_scale:.1e}, transfer {worst_t:.1e}"))
}

// ---- 4 ---------------------------------------------------------------------

const FIDELITY_DEPTH_TOL_VOXELS: f64 = 2.0;
const FIDELITY_MIN_FRACTION: f64 = 0.95;
const FIDELITY_MIN_COVERAGE: f64 = 0.9;

const PLANE_Z: f64 = 0.3523;
const BOX_LO: [f64; 3] = [-0.06, -0.05, 0.2713];
const BOX_HI: [f64; 3] = [0.04, 0.03, 0.3013];
const PLANE_LABEL: u16 = 1;
const BOX_LABEL: u16 = 2;

/// Ray/box slab test for the ray `t · dir` from the origin.
fn box_entry(dir: [f64; 3]) -> Option<f64> {
    let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
    for a in 0..3 {
        let (lo, hi) = (BOX_LO[a] / dir[a], BOX_HI[a] / dir[a]);
        t0 = t0.max(lo.min(hi));
        t1 = t1.min(lo.max(hi));
    }
    (t0 <= t1).then_some(t0)
}

fn synthetic_scene(intr: &Intrinsics) -> (DepthImage, LabelImage) {
    let (w, h) = (intr.width, intr.height);
    let mut depth = Vec::with_capacity((w * h) as usize);
    let mut labels = Vec::with_capacity((w * h) as usize);
    for v in 0..h {
        for u in 0..w {
            let dir = [(u as f64 - intr.cx) / intr.fx, (v as f64 - intr.cy) / intr.fy, 1.0];
            // dir.z = 1, so the ray parameter is the camera depth
            match box_entry(dir) {
                Some(t) if t < PLANE_Z => {
                    depth.push(t);
                    labels.push(BOX_LABEL);
                }
                _ => {
                    depth.push(PLANE_Z);
                    labels.push(PLANE_LABEL);
                }
            }
        }
    }
    (DepthImage::new(w, h, depth).unwrap(), LabelImage::new(w, h, labels).unwrap())
}

fn geometry_fidelity() -> Check {
    let intr = Intrinsics::new(300.0, 300.0, 159.5, 119.5, 320, 240).unwrap();
    let pose = Pose::identity();
    let spec = GridSpec::new([-0.2, -0.2, 0.1], [0.4, 0.4, 0.4], 0.001).map_err(|e| e.to_string())?;
    let (depth, labels) = synthetic_scene(&intr);
    let box_pixels = labels.values.iter().filter(|l| **l == BOX_LABEL).count();
    ensure!(box_pixels > 5000, "box covers only {box_pixels} pixels");

    let points = backproject_depth(&depth, &labels, &intr, &pose).map_err(|e| e.to_string())?;
    let (frame, stats) = voxelize_points(&points, &spec);
    ensure!(stats.dropped == 0, "{} points outside the grid", stats.dropped);
    let mut params = GaussianScaleParams::new(0.0015, 1.0);
    params.depth_bounds = Some((0.1, 0.5));
    let (dmap, smap) = render_both(&frame, &intr, &pose, &params, &occ4d_core::labelspace::build_palette(2));

    let tol = FIDELITY_DEPTH_TOL_VOXELS * spec.voxel_size;
    let (mut covered, mut depth_ok, mut label_ok) = (0usize, 0usize, 0usize);
    for i in 0..depth.values.len() {
        let rendered = dmap.values[i] as f64;
        if rendered <= 0.0 || depth.values[i] <= 0.0 {
            continue;
        }
        covered += 1;
        depth_ok += usize::from((rendered - depth.values[i]).abs() <= tol);
        label_ok += usize::from(smap.labels[i] == labels.values[i]);
    }
    let coverage = covered as f64 / depth.values.len() as f64;
    let (fd, fl) = (depth_ok as f64 / covered as f64, label_ok as f64 / covered as f64);
    ensure!(coverage >= FIDELITY_MIN_COVERAGE, "only {:.1}% of pixels covered", 100.0 * coverage);
    ensure!(fd >= FIDELITY_MIN_FRACTION, "depth within {tol} on {:.2}% of covered pixels", 100.0 * fd);
    ensure!(fl >= FIDELITY_MIN_FRACTION, "labels match on {:.2}% of covered pixels", 100.0 * fl);
    // informational: bridge preset splats at this resolution
    let preset = render_both(&frame, &intr, &pose, &GaussianScaleParams::new(0.00023, 3.7), &[]).0;
    let preset_cov = preset.values.iter().filter(|v| **v > 0.0).count() as f64 / preset.values.len() as f64;
    Ok(format!(
        "{} voxels, coverage {:.1}%, depth {:.2}%, labels {:.2}% (bridge splat law: coverage {:.1}%)",
        frame.len(),
        100.0 * coverage,
        100.0 * fd,
        100.0 * fl,
        100.0 * preset_cov
    ))
}

// ---- 5 ---------------------------------------------------------------------

fn splat_scale_law() -> Check {
    let bridge = GaussianScaleParams::new(0.00023, 3.7);
    let end = splat_scale(1.0, &bridge).map_err(|e| e.to_string())?;
    ensure!(end == 0.00023, "sigma(1) = {end:e}");
    for alpha in [0.0, 0.5, 1.0, 2.0, 3.2, 3.7, 8.0] {
        let p = GaussianScaleParams::new(0.00023, alpha);
        let mut last = 0.0;
        for i in 1..=1000 {
            let s = splat_scale(i as f64 / 1000.0, &p).map_err(|e| e.to_string())?;
            ensure!(s >= last, "alpha {alpha}: sigma drops at step {i}");
            last = s;
        }
    }
    Ok("sigma(1) = k exactly; monotone on 1000 points for 7 exponents".into())
}

// ---- 6 ---------------------------------------------------------------------

const ADALN_TOL: f64 = 1e-6;
const FUSION_TOL: f64 = 1e-7;
const JACOBIAN_REL_TOL: f64 = 1e-4;
const ADALN_TRIALS: usize = 120;
const JACOBIAN_INSTANCES: usize = 10;

fn rand3(rng: &mut ChaCha8Rng, shape: (usize, usize, usize)) -> Array3<f64> {
    Array::from_shape_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn random_adaln(rng: &mut ChaCha8Rng, d: usize) -> AdaLNWeights {
    AdaLNWeights::new(
        Array::from_shape_fn((6 * d, d), |_| rng.random_range(-0.5..0.5)),
        Array::from_shape_fn(6 * d, |_| rng.random_range(-0.5..0.5)),
    )
    .unwrap()
}

fn brute_ln(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mu = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
    x.iter().map(|v| (v - mu) / (var + 1e-5).sqrt()).collect()
}

fn brute_silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn adaln_trial(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let (b, s_a, np, d, s_txt) =
        (rng.random_range(1..4), rng.random_range(1..5), rng.random_range(1..6), rng.random_range(2..10), rng.random_range(1..4));
    let w = random_adaln(rng, d);
    let hidden = rand3(rng, (b, s_a * np, d));
    let text = rand3(rng, (b, s_txt, d));
    let temb: Array2<f64> = Array::from_shape_fn((b, d), |_| rng.random_range(-1.0..1.0));
    let act = rand3(rng, (b, s_a, d));
    let out = adaln_modulate(hidden.view(), text.view(), temb.view(), act.view(), &w).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    let row = |r: usize, x: &[f64]| w.bias[r] + (0..d).map(|c| w.weight[(r, c)] * x[c]).sum::<f64>();
    for bi in 0..b {
        for s in 0..s_a * np {
            let chunk = s / np;
            let c: Vec<f64> = (0..d).map(|j| brute_silu(temb[(bi, j)] + act[(bi, chunk, j)])).collect();
            let tok: Vec<f64> = (0..d).map(|j| hidden[(bi, s, j)]).collect();
            let ln = brute_ln(&tok);
            for j in 0..d {
                let want = ln[j] * (1.0 + row(d + j, &c)) + row(j, &c);
                worst = worst.max((out.hidden[(bi, s, j)] - want).abs());
                worst = worst.max((out.modulation.gate[(bi, chunk, j)] - row(2 * d + j, &c)).abs());
            }
        }
        let c: Vec<f64> = (0..d).map(|j| brute_silu(temb[(bi, j)])).collect();
        for s in 0..s_txt {
            let tok: Vec<f64> = (0..d).map(|j| text[(bi, s, j)]).collect();
            let ln = brute_ln(&tok);
            for j in 0..d {
                let want = ln[j] * (1.0 + row(4 * d + j, &c)) + row(3 * d + j, &c);
                worst = worst.max((out.text[(bi, s, j)] - want).abs());
                worst = worst.max((out.modulation.text_gate[(bi, j)] - row(5 * d + j, &c)).abs());
            }
        }
    }
    Ok(worst)
}

/// Central differences of the vision output with respect to the shift and
/// scale bias entries, against `1` and `LN(h)`.
fn jacobian_instance(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let (s_a, np, d) = (2, 3, 4);
    let w = random_adaln(rng, d);
    let hidden = rand3(rng, (1, s_a * np, d));
    let text = rand3(rng, (1, 2, d));
    let temb: Array2<f64> = Array::from_shape_fn((1, d), |_| rng.random_range(-1.0..1.0));
    let act = rand3(rng, (1, s_a, d));
    let h = 1e-4;
    let eval = |w: &AdaLNWeights| adaln_modulate(hidden.view(), text.view(), temb.view(), act.view(), w).unwrap().hidden;
    let mut worst: f64 = 0.0;
    for j in 0..d {
        for (offset, is_scale) in [(0usize, false), (d, true)] {
            let mut plus = w.clone();
            let mut minus = w.clone();
            plus.bias[offset + j] += h;
            minus.bias[offset + j] -= h;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
            for s in 0..s_a * np {
                let ln = layer_norm(hidden.index_axis(Axis(0), 0).row(s));
                for k in 0..d {
                    let analytic = match (is_scale, k == j) {
                        (_, false) => 0.0,
                        (false, true) => 1.0,
                        (true, true) => ln[k],
                    };
                    let rel = (fd[(0, s, k)] - analytic).abs() / analytic.abs().max(1e-6);
                    worst = worst.max(rel);
                }
            }
        }
    }
    Ok(worst)
}

fn conditioning_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for _ in 0..ADALN_TRIALS {
        worst = worst.max(adaln_trial(&mut rng)?);
    }
    ensure!(worst < ADALN_TOL, "adaln oracle error {worst:e}");

    let d = 6;
    let hidden = rand3(&mut rng, (2, 4, d));
    let text = rand3(&mut rng, (2, 3, d));
    let temb: Array2<f64> = Array::from_shape_fn((2, d), |_| rng.random_range(-1.0..1.0));
    let act = rand3(&mut rng, (2, 2, d));
    let zero = adaln_modulate(hidden.view(), text.view(), temb.view(), act.view(), &AdaLNWeights::zeros(d)).map_err(|e| e.to_string())?;
    for (src, dst) in [(&hidden, &zero.hidden), (&text, &zero.text)] {
        for b in 0..2 {
            for (x, y) in src.index_axis(Axis(0), b).outer_iter().zip(dst.index_axis(Axis(0), b).outer_iter()) {
                ensure!(layer_norm(x) == y.to_owned(), "zero-weight AdaLN is not pure layer norm");
            }
        }
    }
    ensure!(zero.modulation.gate.iter().chain(zero.modulation.text_gate.iter()).all(|g| *g == 0.0), "gates not zero");

    let z = rand3(&mut rng, (2, 5, d));
    let c1 = rand3(&mut rng, (2, 5, 3));
    let c2 = rand3(&mut rng, (2, 5, 9));
    let fused = fuse_conditions(z.view(), &[c1.view(), c2.view()], &FusionWeights::zero_init(d, &[3, 9])).map_err(|e| e.to_string())?;
    let fusion_err = (&fused - &z).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    ensure!(fusion_err <= FUSION_TOL, "zero projector error {fusion_err:e}");

    let mut worst_j: f64 = 0.0;
    for _ in 0..JACOBIAN_INSTANCES {
        worst_j = worst_j.max(jacobian_instance(&mut rng)?);
    }
    ensure!(worst_j < JACOBIAN_REL_TOL, "jacobian relative error {worst_j:e}");
    Ok(format!("{ADALN_TRIALS} trials max {worst:.1e}; fusion {fusion_err:.1e}; jacobian {worst_j:.1e}"))
}

// ---- 7 ---------------------------------------------------------------------

const MEAN_TOL: f64 = 1e-9;

fn kmeans_suite() -> Check {
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let data: Vec<Vec<f64>> = (0..120).map(|_| (0..4).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
        let fit = kmeans(&data, &KMeansParams { k: 6, seed, ..Default::default() }).map_err(|e| e.to_string())?;
        for (i, pair) in fit.inertia_history.windows(2).enumerate() {
            ensure!(pair[1] <= pair[0], "seed {seed}: inertia rises at iteration {} ({} -> {})", i + 1, pair[0], pair[1]);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let data: Vec<Vec<f64>> = (0..200).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let fit = kmeans(&data, &KMeansParams { k: 1, ..Default::default() }).map_err(|e| e.to_string())?;
    for c in 0..3 {
        let mean = data.iter().map(|r| r[c]).sum::<f64>() / data.len() as f64;
        ensure!((fit.centroids[0][c] - mean).abs() < MEAN_TOL, "k=1 centroid off the mean in axis {c}");
    }

    let truth: Vec<usize> = (0..100).map(|i| i % 2).collect();
    let blobs: Vec<Vec<f64>> = truth
        .iter()
        .map(|g| {
            let c = if *g == 0 { -50.0 } else { 50.0 };
            vec![c + rng.random_range(-0.5..0.5), c + rng.random_range(-0.5..0.5)]
        })
        .collect();
    let fit = kmeans(&blobs, &KMeansParams { k: 2, seed: 3, ..Default::default() }).map_err(|e| e.to_string())?;
    let flip = fit.assignments[0] != truth[0];
    for (a, t) in fit.assignments.iter().zip(&truth) {
        ensure!((*a == *t) != flip, "two-blob assignment differs from ground truth");
    }
    Ok("50 seeds monotone; k=1 mean; two blobs exact".into())
}

// ---- 8 ---------------------------------------------------------------------

const PSNR_TOL: f64 = 1e-6;
const SSIM_IDENTITY_TOL: f64 = 1e-9;
const SSIM_ORACLE_TOL: f64 = 1e-7;

fn brute_ssim(a: &Image, b: &Image) -> f64 {
    let mut win = [[0.0f64; 11]; 11];
    let mut total = 0.0;
    for (i, row) in win.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / 4.5).exp();
            total += *v;
        }
    }
    let (c1, c2) = (1e-4, 9e-4);
    let mut acc = 0.0;
    let mut n = 0;
    for y0 in 0..=a.height - 11 {
        for x0 in 0..=a.width - 11 {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let w = win[i][j] / total;
                    let (x, y) = (a.at(x0 + j, y0 + i, 0), b.at(x0 + j, y0 + i, 0));
                    ma += w * x;
                    mb += w * y;
                    saa += w * x * x;
                    sbb += w * y * y;
                    sab += w * x * y;
                }
            }
            let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            n += 1;
        }
    }
    acc / n as f64
}

fn metrics_suite() -> Check {
    let a = Image::from_fn(32, 32, |x, y| 0.2 + 0.01 * ((x * 7 + y * 3) % 50) as f64).map_err(|e| e.to_string())?;
    let b = Image::new(32, 32, 1, a.data.iter().map(|v| v + 0.1).collect()).map_err(|e| e.to_string())?;
    let p = psnr(ImagePair::new(&a, &b).map_err(|e| e.to_string())?);
    ensure!((p - 20.0).abs() < PSNR_TOL, "psnr {p}");
    let same = ssim(ImagePair::new(&a, &a).unwrap()).map_err(|e| e.to_string())?;
    ensure!((same - 1.0).abs() < SSIM_IDENTITY_TOL, "ssim(x, x) = {same}");

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for _ in 0..3 {
        let x = Image::new(64, 64, 1, (0..4096).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        let y = Image::new(64, 64, 1, x.data.iter().map(|v| (0.7 * v + 0.3 * rng.random_range(0.0..1.0)).min(1.0)).collect()).unwrap();
        let fast = ssim(ImagePair::new(&x, &y).unwrap()).map_err(|e| e.to_string())?;
        worst = worst.max((fast - brute_ssim(&x, &y)).abs());
    }
    ensure!(worst < SSIM_ORACLE_TOL, "ssim oracle error {worst:e}");
    Ok(format!("psnr {p:.9}, ssim(x,x) {same:.12}, oracle {worst:.1e}"))
}

// ---- 9 ---------------------------------------------------------------------

fn random_grid(rng: &mut ChaCha8Rng) -> OccupancyGrid4D {
    let dims = [rng.random_range(1..64u32), rng.random_range(1..64u32), rng.random_range(1..64u32)];
    // every spec field is representable in f32
    let origin = [
        rng.random_range(-512i32..512) as f64 / 256.0,
        rng.random_range(-512i32..512) as f64 / 256.0,
        rng.random_range(-512i32..512) as f64 / 256.0,
    ];
    let voxel = [0.001f32, 0.005, 0.01, 0.0625][rng.random_range(0..4)] as f64;
    let spec = GridSpec::from_dims(origin, dims, voxel).unwrap();
    let frames = rng.random_range(1..4);
    let built: Vec<OccupancyFrame> = (0..frames)
        .map(|_| {
            let n = rng.random_range(0..150);
            let idx: BTreeSet<[u16; 3]> = (0..n)
                .map(|_| {
                    [
                        rng.random_range(0..dims[0]) as u16,
                        rng.random_range(0..dims[1]) as u16,
                        rng.random_range(0..dims[2]) as u16,
                    ]
                })
                .collect();
            let voxels = idx
                .into_iter()
                .map(|[ix, iy, iz]| Voxel { ix, iy, iz, label: rng.random_range(0..100) })
                .collect();
            OccupancyFrame::from_voxels(spec, voxels).unwrap()
        })
        .collect();
    let ts = (0..frames as u32).map(|i| 10 * i + rng.random_range(0..5)).collect();
    OccupancyGrid4D::new(spec, built, ts).unwrap()
}

fn persistence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut sample = None;
    for i in 0..1000 {
        let grid = random_grid(&mut rng);
        let bytes = encode_occ4(&grid);
        let back = decode_occ4(&bytes).map_err(|e| format!("grid {i}: {e}"))?;
        ensure!(back == grid, "grid {i}: decoded grid differs");
        ensure!(encode_occ4(&back) == bytes, "grid {i}: re-encoded bytes differ");
        if sample.is_none() && grid.frames.iter().any(|f| !f.is_empty()) {
            sample = Some(bytes);
        }
    }

    let bytes = sample.ok_or("no non-empty grid sampled")?;
    for cut in [1usize, 3, 17, 39, 41, bytes.len() - 1] {
        match decode_occ4(&bytes[..bytes.len() - cut.min(bytes.len())]) {
            Err(Error::Format { offset, .. }) => ensure!(offset as usize <= bytes.len() - cut, "offset {offset} past the data"),
            other => return Err(format!("truncation by {cut} gave {other:?}")),
        }
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    match decode_occ4(&bad) {
        Err(Error::Format { offset: 0, .. }) => {}
        other => return Err(format!("bad magic gave {other:?}")),
    }
    let mut version = bytes.clone();
    version[4] = 9;
    match decode_occ4(&version) {
        Err(Error::Format { offset: 4, .. }) => {}
        other => return Err(format!("bad version gave {other:?}")),
    }
    Ok("1000 grids byte-exact; truncation, magic and version errors carry offsets".into())
}

// ---- 10 --------------------------------------------------------------------

fn determinism() -> Check {
    use common::*;
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let input = tmp.path().join("in");
    let opts = FixtureOptions { side_rig: true, instance_labels: true, next_action: true };
    write_plane_episode(&input, "ep_a", 3, opts);
    write_plane_episode(&input, "ep_b", 2, FixtureOptions::default());
    write_plane_episode(&input, "ep_c", 8, FixtureOptions { side_rig: true, ..Default::default() });
    let outs = [tmp.path().join("run1"), tmp.path().join("run2")];
    for (out, workers) in outs.iter().zip([1usize, 3]) {
        let mut cfg = fixture_config(&input, out);
        cfg.seed = 42;
        let report = occ4d_cli::run_pipeline(&cfg, "*", workers).map_err(|e| e.to_string())?;
        ensure!(report.processed == 3, "run processed {} episodes", report.processed);
    }
    let (a, b) = (tree_bytes(&outs[0]), tree_bytes(&outs[1]));
    ensure!(a.keys().eq(b.keys()), "output trees list different files");
    for (k, v) in &a {
        ensure!(&b[k] == v, "{k} differs between runs");
    }
    Ok(format!("{} files identical across 1- and 3-worker runs", a.len()))
}

// ---- runner ----------------------------------------------------------------

fn main() {
    let criteria: [(u8, &str, u64, fn() -> Check); 10] = [
        (1, "token accounting", 1, token_accounting),
        (2, "action padding and chunking", 1, padding_and_chunking),
        (3, "least-squares alignment", 1, least_squares_alignment),
        (4, "end-to-end geometry fidelity", 30, geometry_fidelity),
        (5, "splat scale law", 1, splat_scale_law),
        (6, "conditioning oracles", 10, conditioning_oracles),
        (7, "k-means", 5, kmeans_suite),
        (8, "image metrics", 5, metrics_suite),
        (9, "OCC4 persistence", 5, persistence),
        (10, "pipeline determinism", 60, determinism),
    ];
    let mut failed = 0;
    for (id, name, budget_s, check) in criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let elapsed = start.elapsed();
        let result = match result {
            Ok(_) if elapsed > Duration::from_secs(budget_s) => Err(format!("took {:.2} s, budget {budget_s} s", elapsed.as_secs_f64())),
            r => r,
        };
        match result {
            Ok(detail) => println!("PASS criterion {id:>2} {name} ({:.2} s): {detail}", elapsed.as_secs_f64()),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {id:>2} {name} ({:.2} s): {why}", elapsed.as_secs_f64());
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
