//! PSNR and single-scale SSIM for images normalized to `[0, 1]`.

use crate::error::{Error, Result};
use crate::io::decode_ppm;

pub const PSNR_CAP_DB: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Interleaved multi-channel raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::input("image dimensions must be positive"));
        }
        if data.len() != width * height * channels {
            return Err(Error::input(format!(
                "{} samples for a {width}x{height}x{channels} image",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::input(format!("sample {v} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let data = (0..height).flat_map(|y| (0..width).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        Self::new(width, height, 1, data)
    }

    /// 8-bit binary PPM scaled to `[0, 1]`.
    pub fn from_ppm(bytes: &[u8]) -> Result<Self> {
        let (w, h, rgb) = decode_ppm(bytes)?;
        Self::new(w as usize, h as usize, 3, rgb.iter().flatten().map(|&b| b as f64 / 255.0).collect())
    }

    pub fn at(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    fn channel(&self, c: usize) -> Vec<f64> {
        self.data.iter().skip(c).step_by(self.channels).copied().collect()
    }
}

/// Two images of identical shape.
#[derive(Debug, Clone, Copy)]
pub struct ImagePair<'a> {
    pub a: &'a Image,
    pub b: &'a Image,
}

impl<'a> ImagePair<'a> {
    pub fn new(a: &'a Image, b: &'a Image) -> Result<Self> {
        if (a.width, a.height, a.channels) != (b.width, b.height, b.channels) {
            return Err(Error::input(format!(
                "image shapes differ: {}x{}x{} vs {}x{}x{}",
                a.width, a.height, a.channels, b.width, b.height, b.channels
            )));
        }
        Ok(Self { a, b })
    }
}

pub fn psnr(pair: ImagePair) -> f64 {
    let n = pair.a.data.len() as f64;
    let mse = pair.a.data.iter().zip(&pair.b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n;
    if mse == 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let mid = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-(i as f64 - mid).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

/// Valid-mode separable filtering of a `w x h` plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let n = taps.len();
    let ow = w - n + 1;
    let oh = h - n + 1;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        let src = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&src[x..x + n]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(k, t)| t * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

fn ssim_plane(a: &[f64], b: &[f64], w: usize, h: usize, taps: &[f64]) -> f64 {
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let prod = |f: fn(f64, f64) -> f64| a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect::<Vec<_>>();
    let mu_a = filter_valid(a, w, h, taps);
    let mu_b = filter_valid(b, w, h, taps);
    let aa = filter_valid(&prod(|x, _| x * x), w, h, taps);
    let bb = filter_valid(&prod(|_, y| y * y), w, h, taps);
    let ab = filter_valid(&prod(|x, y| x * y), w, h, taps);
    let n = mu_a.len() as f64;
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    total / n
}

pub fn ssim(pair: ImagePair) -> Result<f64> {
    let img = pair.a;
    if img.width < SSIM_WINDOW || img.height < SSIM_WINDOW {
        return Err(Error::input(format!(
            "{}x{} image is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window",
            img.width, img.height
        )));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let sum: f64 = (0..img.channels)
        .map(|c| ssim_plane(&pair.a.channel(c), &pair.b.channel(c), img.width, img.height, &taps))
        .sum();
    Ok(sum / img.channels as f64)
}
