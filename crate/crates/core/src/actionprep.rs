//! Action padding and chunk compression aligned with temporally compressed
//! video latents, plus the visual-token budget that follows from them.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

/// Per-frame action dimension in every preset (end-effector delta + gripper).
pub const DEFAULT_ACTION_DIM: usize = 7;
/// Temporal compression ratio of the video latent space.
pub const DEFAULT_COMPRESSION: usize = 4;
/// Largest N accepted by the `8N + 1` frame-count rule.
pub const MAX_LENGTH_BLOCKS: usize = 6;

/// `T x D` action rows, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionTrack {
    d_action: usize,
    values: Vec<f64>,
}

impl ActionTrack {
    pub fn new(d_action: usize, values: Vec<f64>) -> Result<Self> {
        if d_action == 0 {
            return Err(Error::input("action dimension must be at least 1"));
        }
        if values.is_empty() || values.len() % d_action != 0 {
            return Err(Error::input(format!(
                "{} action values do not form whole rows of {d_action}",
                values.len()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::input("action values must be finite"));
        }
        Ok(Self { d_action, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != d) {
            return Err(Error::input(format!("action row {i} has {} entries, expected {d}", rows[i].len())));
        }
        Self::new(d, rows.concat())
    }

    pub fn frames(&self) -> usize {
        self.values.len() / self.d_action
    }

    pub fn d_action(&self) -> usize {
        self.d_action
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d_action..(i + 1) * self.d_action]
    }
}

/// A track extended with its placeholder action and zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedActions {
    pub d_action: usize,
    /// Frames in the source track.
    pub source_frames: usize,
    pub values: Vec<f64>,
}

impl PaddedActions {
    pub fn rows(&self) -> usize {
        self.values.len() / self.d_action
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d_action..(i + 1) * self.d_action]
    }
}

/// Number of latent frames (and action chunks) for `frames` video frames plus
/// the trailing placeholder: `⌈(frames + 1) / r⌉`.
pub fn chunk_count(frames: usize, r: usize) -> usize {
    (frames + 1).div_ceil(r)
}

/// Appends the following action (or repeats the last one when none exists),
/// then zero rows up to `⌈(T + 1)/r⌉ · r` rows. When `r` divides `T` this is
/// exactly `r − 1` zero rows.
pub fn pad_track(track: &ActionTrack, r: usize, next_action: Option<&[f64]>) -> Result<PaddedActions> {
    if r == 0 {
        return Err(Error::input("compression rate must be at least 1"));
    }
    let d = track.d_action;
    let t = track.frames();
    let placeholder = match next_action {
        Some(a) if a.len() != d => {
            return Err(Error::input(format!("next action has {} entries, expected {d}", a.len())))
        }
        Some(a) if !a.iter().all(|v| v.is_finite()) => {
            return Err(Error::input("next action must be finite"))
        }
        Some(a) => a,
        None => track.row(t - 1),
    };
    let rows = chunk_count(t, r) * r;
    let mut values = Vec::with_capacity(rows * d);
    values.extend_from_slice(&track.values);
    values.extend_from_slice(placeholder);
    values.resize(rows * d, 0.0);
    Ok(PaddedActions {
        d_action: d,
        source_frames: t,
        values,
    })
}

/// `C x (r·D)` chunks, each the concatenation of `r` consecutive rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkedActions {
    pub r: usize,
    pub d_action: usize,
    pub chunks: Vec<f64>,
}

impl ChunkedActions {
    pub fn count(&self) -> usize {
        self.chunks.len() / self.width()
    }

    pub fn width(&self) -> usize {
        self.r * self.d_action
    }

    pub fn chunk(&self, i: usize) -> &[f64] {
        let w = self.width();
        &self.chunks[i * w..(i + 1) * w]
    }

    /// Back to `(C·r) x D` rows.
    pub fn unchunk(&self) -> Vec<f64> {
        self.chunks.clone()
    }
}

/// Groups `r` consecutive `D`-wide rows into one chunk.
pub fn chunk_actions(padded: &[f64], r: usize, d_action: usize) -> Result<ChunkedActions> {
    if r == 0 || d_action == 0 {
        return Err(Error::input("rate and action dimension must be at least 1"));
    }
    if padded.len() % d_action != 0 {
        return Err(Error::input(format!(
            "{} values do not form whole rows of {d_action}",
            padded.len()
        )));
    }
    let rows = padded.len() / d_action;
    if rows == 0 || rows % r != 0 {
        return Err(Error::input(format!("{rows} rows are not divisible by rate {r}")));
    }
    // row-major rows laid end to end already are row-major chunks
    Ok(ChunkedActions {
        r,
        d_action,
        chunks: padded.to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "lowercase")]
pub enum LengthVerdict {
    Ok { n: usize },
    Rejected { reason: String },
}

impl LengthVerdict {
    pub fn is_ok(&self) -> bool {
        matches!(self, LengthVerdict::Ok { .. })
    }
}

/// Accepts video lengths of the form `8N + 1` with `1 ≤ N ≤ 6`.
pub fn validate_length(frames: usize) -> LengthVerdict {
    if frames == 0 || (frames - 1) % 8 != 0 {
        return LengthVerdict::Rejected {
            reason: format!("{frames} frames is not of the form 8N+1"),
        };
    }
    let n = (frames - 1) / 8;
    if !(1..=MAX_LENGTH_BLOCKS).contains(&n) {
        return LengthVerdict::Rejected {
            reason: format!("{frames} frames gives N={n}, outside 1..={MAX_LENGTH_BLOCKS}"),
        };
    }
    LengthVerdict::Ok { n }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenBudget {
    pub frames: usize,
    pub latent_h: usize,
    pub latent_w: usize,
    pub patch: usize,
    pub r: usize,
}

impl TokenBudget {
    pub fn patches_per_frame(&self) -> Result<usize> {
        if self.patch == 0 || self.r == 0 {
            return Err(Error::input("patch size and rate must be at least 1"));
        }
        if self.latent_h % self.patch != 0 || self.latent_w % self.patch != 0 {
            return Err(Error::input(format!(
                "patch {} does not divide latent {}x{}",
                self.patch, self.latent_h, self.latent_w
            )));
        }
        Ok((self.latent_h / self.patch) * (self.latent_w / self.patch))
    }

    /// `⌈(frames + 1)/r⌉ · (latent_h/patch) · (latent_w/patch)`.
    pub fn tokens(&self) -> Result<usize> {
        Ok(chunk_count(self.frames, self.r) * self.patches_per_frame()?)
    }
}

pub fn token_count(budget: &TokenBudget) -> Result<usize> {
    budget.tokens()
}

/// One line of an action JSON-lines file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub frame: u32,
    pub action: Vec<f64>,
}

/// Reads per-frame actions; frames must be exactly `0..T` in any order.
pub fn read_action_track(path: &Path) -> Result<ActionTrack> {
    let mut records: Vec<ActionRecord> = io::read_jsonl(path)?;
    records.sort_by_key(|r| r.frame);
    for (i, r) in records.iter().enumerate() {
        if r.frame as usize != i {
            return Err(Error::input(format!(
                "{}: expected frame {i}, found {} (frames must be contiguous from 0)",
                path.display(),
                r.frame
            )));
        }
    }
    let rows: Vec<Vec<f64>> = records.into_iter().map(|r| r.action).collect();
    ActionTrack::from_rows(&rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkSidecar {
    #[serde(rename = "C")]
    pub count: usize,
    pub r: usize,
    #[serde(rename = "D_action")]
    pub d_action: usize,
}

/// Writes `C x (r·D)` f32le values plus the `{C, r, D_action}` sidecar.
pub fn write_chunked(bin: &Path, chunks: &ChunkedActions) -> Result<()> {
    io::write_bytes(bin, &io::f32_to_le_bytes(chunks.chunks.iter().map(|v| *v as f32)))?;
    io::write_json(
        &io::sidecar_path(bin),
        &ChunkSidecar {
            count: chunks.count(),
            r: chunks.r,
            d_action: chunks.d_action,
        },
    )
}

pub fn read_chunked(bin: &Path) -> Result<ChunkedActions> {
    let sc: ChunkSidecar = io::read_json(&io::sidecar_path(bin))?;
    let values = io::le_bytes_to_f32(&io::read_bytes(bin)?)?;
    let want = sc.count * sc.r * sc.d_action;
    if values.len() != want {
        return Err(Error::format(
            (values.len().min(want) * 4) as u64,
            format!("action tensor holds {} values, sidecar implies {want}", values.len()),
        ));
    }
    chunk_actions(&values.into_iter().map(f64::from).collect::<Vec<_>>(), sc.r, sc.d_action)
}
