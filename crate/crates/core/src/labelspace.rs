//! Dataset-level semantic label set.
//!
//! Caption embeddings are clustered with Lloyd's k-means (k-means++ seeding);
//! each cluster becomes one label. Label ids are 1-based: id 0 is reserved
//! for unlabeled/background pixels and voxels.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hue increment between consecutive palette entries.
pub const GOLDEN_RATIO_CONJUGATE: f64 = 0.618_033_988_749_894_9;
pub const PALETTE_SATURATION: f64 = 0.75;
pub const PALETTE_VALUE: f64 = 0.95;
/// Color used for label 0.
pub const BACKGROUND_RGB: [u8; 3] = [0, 0, 0];
pub const DEFAULT_LABEL_COUNT: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansParams {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
    /// Sort rows lexicographically before seeding so the fit does not depend
    /// on input row order.
    pub canonical_order: bool,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            k: DEFAULT_LABEL_COUNT,
            seed: 0,
            max_iter: 300,
            tol: 1e-8,
            canonical_order: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub centroids: Vec<Vec<f64>>,
    /// 0-based cluster index per input row, in input order.
    pub assignments: Vec<usize>,
    /// Inertia after every assignment step, including the final one.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl KMeansFit {
    pub fn inertia(&self) -> f64 {
        *self.inertia_history.last().expect("history is never empty")
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid index and its squared distance; ties go to the lower index.
fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn check_matrix(data: &[Vec<f64>]) -> Result<usize> {
    let dim = data.first().map(Vec::len).unwrap_or(0);
    if dim == 0 {
        return Err(Error::input("embeddings must be non-empty with dimension >= 1"));
    }
    for (i, row) in data.iter().enumerate() {
        if row.len() != dim {
            return Err(Error::input(format!(
                "embedding {i} has dimension {}, expected {dim}",
                row.len()
            )));
        }
        if !row.iter().all(|x| x.is_finite()) {
            return Err(Error::input(format!("embedding {i} has non-finite entries")));
        }
    }
    Ok(dim)
}

fn seed_plus_plus(rows: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = rows.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![rows[first].to_vec()];
    let mut closest: Vec<f64> = rows.iter().map(|r| sq_dist(r, rows[first])).collect();
    while centroids.len() < k {
        let total: f64 = closest.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, d) in closest.iter().enumerate() {
                acc += d;
                if acc > target && *d > 0.0 {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave `target` past the final partial sum
            pick.unwrap_or_else(|| closest.iter().rposition(|d| *d > 0.0).unwrap())
        } else {
            chosen.iter().position(|c| !c).unwrap()
        };
        chosen[pick] = true;
        centroids.push(rows[pick].to_vec());
        for (i, r) in rows.iter().enumerate() {
            closest[i] = closest[i].min(sq_dist(r, rows[pick]));
        }
    }
    centroids
}

fn assign_all(rows: &[&[f64]], centroids: &[Vec<f64>], out: &mut [usize]) -> f64 {
    let mut inertia = 0.0;
    for (slot, row) in out.iter_mut().zip(rows) {
        let (j, d) = nearest(row, centroids);
        *slot = j;
        inertia += d;
    }
    inertia
}

fn update_centroids(rows: &[&[f64]], assign: &[usize], k: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (row, &j) in rows.iter().zip(assign) {
        counts[j] += 1;
        for (s, x) in sums[j].iter_mut().zip(row.iter()) {
            *s += x;
        }
    }
    let mut empty = Vec::new();
    for j in 0..k {
        if counts[j] == 0 {
            empty.push(j);
        } else {
            let c = counts[j] as f64;
            sums[j].iter_mut().for_each(|s| *s /= c);
        }
    }
    if !empty.is_empty() {
        // farthest points from their own (updated) centroid, ties to lower row
        let mut far: Vec<(f64, usize)> = rows
            .iter()
            .zip(assign)
            .enumerate()
            .map(|(i, (row, &j))| (sq_dist(row, &sums[j]), i))
            .collect();
        far.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for (j, (_, i)) in empty.into_iter().zip(far) {
            sums[j] = rows[i].to_vec();
        }
    }
    sums
}

/// Lloyd's k-means with k-means++ seeding.
///
/// Terminates once the largest centroid move drops below `tol` or after
/// `max_iter` update steps. Clusters that lose all members are re-seeded at
/// the point farthest from its assigned centroid.
pub fn kmeans(data: &[Vec<f64>], params: &KMeansParams) -> Result<KMeansFit> {
    let dim = check_matrix(data)?;
    let (n, k) = (data.len(), params.k);
    if k == 0 {
        return Err(Error::input("k must be at least 1"));
    }
    if n < k {
        return Err(Error::input(format!("need at least k={k} embeddings, got {n}")));
    }

    let mut order: Vec<usize> = (0..n).collect();
    if params.canonical_order {
        order.sort_by(|&a, &b| {
            data[a]
                .iter()
                .zip(&data[b])
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
    }
    let rows: Vec<&[f64]> = order.iter().map(|&i| data[i].as_slice()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut centroids = seed_plus_plus(&rows, k, &mut rng);
    let mut assign = vec![0usize; n];
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    history.push(assign_all(&rows, &centroids, &mut assign));
    while iterations < params.max_iter {
        let next = update_centroids(&rows, &assign, k, dim);
        let shift = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        iterations += 1;
        history.push(assign_all(&rows, &centroids, &mut assign));
        if shift < params.tol {
            converged = true;
            break;
        }
    }

    let mut assignments = vec![0usize; n];
    for (pos, &orig) in order.iter().enumerate() {
        assignments[orig] = assign[pos];
    }
    Ok(KMeansFit {
        centroids,
        assignments,
        inertia_history: history,
        iterations,
        converged,
    })
}

/// One captioned object as read from the embeddings JSON-lines file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionEmbedding {
    pub caption: String,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSpace {
    pub k: usize,
    #[serde(rename = "E")]
    pub dim: usize,
    /// Centroid `i` describes label id `i + 1`.
    pub centroids: Vec<Vec<f64>>,
    pub names: Vec<String>,
    pub palette: Vec<[u8; 3]>,
}

impl LabelSpace {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k > u16::MAX as usize {
            return Err(Error::input(format!("label count {} out of range", self.k)));
        }
        if self.centroids.len() != self.k || self.names.len() != self.k || self.palette.len() != self.k
        {
            return Err(Error::input("label space arrays disagree with k"));
        }
        if self
            .centroids
            .iter()
            .any(|c| c.len() != self.dim || !c.iter().all(|x| x.is_finite()))
        {
            return Err(Error::input("centroids must be finite with dimension E"));
        }
        let distinct: HashSet<_> = self.palette.iter().collect();
        if distinct.len() != self.k {
            return Err(Error::input("palette entries must be distinct"));
        }
        Ok(())
    }

    /// RGB for a label id, with background black.
    pub fn color(&self, label: u16) -> [u8; 3] {
        label_color(&self.palette, label)
    }
}

pub fn label_color(palette: &[[u8; 3]], label: u16) -> [u8; 3] {
    match label {
        0 => BACKGROUND_RGB,
        l => palette.get(l as usize - 1).copied().unwrap_or(BACKGROUND_RGB),
    }
}

/// Clusters caption embeddings into a label space. Each label is named by
/// the caption closest to its centroid.
pub fn fit_label_space(
    records: &[CaptionEmbedding],
    params: &KMeansParams,
) -> Result<(LabelSpace, KMeansFit)> {
    let data: Vec<Vec<f64>> = records.iter().map(|r| r.embedding.clone()).collect();
    let fit = kmeans(&data, params)?;
    let names = fit
        .centroids
        .iter()
        .map(|c| {
            let (idx, _) = nearest(c, &data);
            records[idx].caption.clone()
        })
        .collect();
    let ls = LabelSpace {
        k: params.k,
        dim: data[0].len(),
        centroids: fit.centroids.clone(),
        names,
        palette: build_palette(params.k),
    };
    Ok((ls, fit))
}

/// 1-based id of the nearest centroid; ties go to the lower id.
pub fn assign_label(embedding: &[f64], ls: &LabelSpace) -> Result<u16> {
    if embedding.len() != ls.dim {
        return Err(Error::input(format!(
            "embedding has dimension {}, label space expects {}",
            embedding.len(),
            ls.dim
        )));
    }
    let mut best = (0usize, f64::INFINITY);
    for (j, c) in ls.centroids.iter().enumerate() {
        let d = sq_dist(embedding, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    Ok(best.0 as u16 + 1)
}

/// HSV in [0,1) x [0,1] x [0,1] to 8-bit RGB, truncating.
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let sector = h6.floor() as u32 % 6;
    let f = h6 - h6.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - f * s);
    let t = v * (1.0 - (1.0 - f) * s);
    let (r, g, b) = match sector {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    let q8 = |x: f64| (x * 255.0).clamp(0.0, 255.0) as u8;
    [q8(r), q8(g), q8(b)]
}

/// Deterministic, pairwise-distinct colors for labels `1..=k`.
///
/// Hues advance by the golden-ratio conjugate from 0. Once 8-bit
/// quantization starts repeating colors, a repeat is bumped to the next
/// unused 24-bit value (never black, which is the background).
pub fn build_palette(k: usize) -> Vec<[u8; 3]> {
    let mut used = HashSet::with_capacity(k);
    let mut out = Vec::with_capacity(k);
    for i in 0..k {
        let hue = (i as f64 * GOLDEN_RATIO_CONJUGATE).fract();
        let rgb = hsv_to_rgb(hue, PALETTE_SATURATION, PALETTE_VALUE);
        let mut packed = u32::from_be_bytes([0, rgb[0], rgb[1], rgb[2]]);
        while packed == 0 || used.contains(&packed) {
            packed = (packed + 1) & 0x00ff_ffff;
        }
        used.insert(packed);
        let [_, r, g, b] = packed.to_be_bytes();
        out.push([r, g, b]);
    }
    out
}
