//! Action embedding, expert AdaLN modulation and visual-condition fusion.

use ndarray::{concatenate, s, Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayView3, ArrayViewMut1, Axis};

use super::weights::{AdaLNWeights, FusionMode, FusionWeights, Mlp};
use crate::actionprep::ChunkedActions;
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[inline]
pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

/// `x · Wᵀ + b` for row-major `x`.
fn linear(x: ArrayView2<f64>, w: ArrayView2<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    x.dot(&w.t()) + &b
}

impl Mlp {
    /// Row-wise forward pass.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.validate()?;
        if x.ncols() != self.input_dim() {
            return Err(Error::input(format!(
                "MLP expects {} input features, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        let hidden = linear(x, self.fc1_weight.view(), self.fc1_bias.view()).mapv(silu);
        Ok(linear(hidden.view(), self.fc2_weight.view(), self.fc2_bias.view()))
    }
}

/// One embedding row per action chunk.
pub fn action_embed(chunks: &ChunkedActions, mlp: &Mlp) -> Result<Array2<f64>> {
    let x = ArrayView2::from_shape((chunks.count(), chunks.width()), &chunks.chunks)
        .map_err(|e| Error::input(format!("chunk tensor: {e}")))?;
    mlp.forward(x)
}

/// Zero-mean, unit-variance normalization without learned affine.
pub fn layer_norm(x: ArrayView1<f64>) -> Array1<f64> {
    let mut out = x.to_owned();
    layer_norm_inplace(out.view_mut());
    out
}

fn layer_norm_inplace(mut x: ArrayViewMut1<f64>) {
    let n = x.len() as f64;
    let mean = x.sum() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    x.mapv_inplace(|v| (v - mean) * inv);
}

/// `normed · (1 + scale) + shift`, elementwise.
pub fn modulate(normed: ArrayView1<f64>, scale: ArrayView1<f64>, shift: ArrayView1<f64>) -> Array1<f64> {
    let mut out = normed.to_owned();
    out.zip_mut_with(&scale, |o, s| *o *= 1.0 + s);
    out += &shift;
    out
}

/// Shift/scale/gate triples from the shared head.
#[derive(Debug, Clone, PartialEq)]
pub struct Modulation {
    /// `(B, S_a, D)` each.
    pub shift: Array3<f64>,
    pub scale: Array3<f64>,
    pub gate: Array3<f64>,
    /// `(B, D)` each.
    pub text_shift: Array2<f64>,
    pub text_scale: Array2<f64>,
    pub text_gate: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaLNOutput {
    /// `(B, S, D)` modulated vision tokens.
    pub hidden: Array3<f64>,
    /// `(B, S_txt, D)` modulated text tokens.
    pub text: Array3<f64>,
    /// Parameters (gates included, not applied).
    pub modulation: Modulation,
}

/// Vision parameters from `silu(temb + action_emb)` through the first three
/// D-row blocks of the head; text parameters from `silu(temb)` through the
/// last three.
pub fn adaln_parameters(
    temb: ArrayView2<f64>,
    action_emb: ArrayView3<f64>,
    w: &AdaLNWeights,
) -> Result<Modulation> {
    let d = w.hidden_dim()?;
    let (b, s_a, da) = action_emb.dim();
    if temb.dim() != (b, d) || da != d {
        return Err(Error::input(format!(
            "temb {:?} / action_emb {:?} incompatible with hidden width {d}",
            temb.dim(),
            action_emb.dim()
        )));
    }
    let vision_w = w.weight.slice(s![..3 * d, ..]);
    let vision_b = w.bias.slice(s![..3 * d]);
    let text_w = w.weight.slice(s![3 * d.., ..]);
    let text_b = w.bias.slice(s![3 * d..]);

    let mut shift = Array3::zeros((b, s_a, d));
    let mut scale = Array3::zeros((b, s_a, d));
    let mut gate = Array3::zeros((b, s_a, d));
    for bi in 0..b {
        let cond = (&action_emb.index_axis(Axis(0), bi) + &temb.row(bi)).mapv(silu);
        let params = linear(cond.view(), vision_w, vision_b);
        shift.index_axis_mut(Axis(0), bi).assign(&params.slice(s![.., ..d]));
        scale.index_axis_mut(Axis(0), bi).assign(&params.slice(s![.., d..2 * d]));
        gate.index_axis_mut(Axis(0), bi).assign(&params.slice(s![.., 2 * d..]));
    }
    let text_params = linear(temb.mapv(silu).view(), text_w, text_b);
    Ok(Modulation {
        shift,
        scale,
        gate,
        text_shift: text_params.slice(s![.., ..d]).to_owned(),
        text_scale: text_params.slice(s![.., d..2 * d]).to_owned(),
        text_gate: text_params.slice(s![.., 2 * d..]).to_owned(),
    })
}

/// Expert AdaLN with chunk-aligned action modulation.
///
/// Vision token `s` uses the parameters of action chunk `s / num_patches`,
/// where `num_patches = S / S_a`.
pub fn adaln_modulate(
    hidden: ArrayView3<f64>,
    text_hidden: ArrayView3<f64>,
    temb: ArrayView2<f64>,
    action_emb: ArrayView3<f64>,
    w: &AdaLNWeights,
) -> Result<AdaLNOutput> {
    let d = w.hidden_dim()?;
    let (b, s, dh) = hidden.dim();
    let (bt, _, dt) = text_hidden.dim();
    let (ba, s_a, _) = action_emb.dim();
    if dh != d || dt != d || bt != b || ba != b {
        return Err(Error::input(format!(
            "hidden {:?}, text {:?}, action {:?} disagree on batch or width {d}",
            hidden.dim(),
            text_hidden.dim(),
            action_emb.dim()
        )));
    }
    if s_a == 0 || s % s_a != 0 {
        return Err(Error::input(format!(
            "{s} vision tokens cannot be split evenly over {s_a} action chunks"
        )));
    }
    let num_patches = s / s_a;
    let m = adaln_parameters(temb, action_emb, w)?;

    let mut out = hidden.to_owned();
    for bi in 0..b {
        for (si, mut token) in out.index_axis_mut(Axis(0), bi).outer_iter_mut().enumerate() {
            let chunk = si / num_patches;
            layer_norm_inplace(token.view_mut());
            token.zip_mut_with(&m.scale.slice(s![bi, chunk, ..]), |t, sc| *t *= 1.0 + sc);
            token += &m.shift.slice(s![bi, chunk, ..]);
        }
    }
    let mut text = text_hidden.to_owned();
    for bi in 0..b {
        for mut token in text.index_axis_mut(Axis(0), bi).outer_iter_mut() {
            layer_norm_inplace(token.view_mut());
            token.zip_mut_with(&m.text_scale.row(bi), |t, sc| *t *= 1.0 + sc);
            token += &m.text_shift.row(bi);
        }
    }
    Ok(AdaLNOutput {
        hidden: out,
        text,
        modulation: m,
    })
}

/// Residual fusion of condition latents into the noise latent:
/// `proj(fused) + z_in`, with `fused` built per [`FusionMode`].
pub fn fuse_conditions(z_in: ArrayView3<f64>, conditions: &[ArrayView3<f64>], w: &FusionWeights) -> Result<Array3<f64>> {
    let (b, s, d) = z_in.dim();
    if let Some((i, c)) = conditions.iter().enumerate().find(|(_, c)| c.dim().0 != b || c.dim().1 != s) {
        return Err(Error::input(format!(
            "condition {i} has shape {:?}, expected batch {b} and {s} tokens",
            c.dim()
        )));
    }
    if !w.embedders.is_empty() && w.embedders.len() != conditions.len() {
        return Err(Error::input(format!(
            "{} embedders for {} conditions",
            w.embedders.len(),
            conditions.len()
        )));
    }
    if w.proj_weight.nrows() != d || w.proj_bias.len() != d {
        return Err(Error::input(format!(
            "projector {:?} must produce {d} channels",
            w.proj_weight.dim()
        )));
    }

    let tokens = b * s;
    let z_flat = z_in
        .to_shape((tokens, d))
        .map_err(|e| Error::input(format!("latent reshape: {e}")))?;
    let embedded: Vec<Array2<f64>> = conditions
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let flat = c
                .to_shape((tokens, c.dim().2))
                .map_err(|e| Error::input(format!("condition reshape: {e}")))?
                .to_owned();
            match w.embedders.get(i) {
                Some(mlp) => mlp.forward(flat.view()),
                None => Ok(flat),
            }
        })
        .collect::<Result<_>>()?;

    let fused = match w.mode {
        FusionMode::Concat => {
            let mut parts = vec![z_flat.view()];
            parts.extend(embedded.iter().map(|e| e.view()));
            concatenate(Axis(1), &parts).expect("row counts match")
        }
        FusionMode::RepeatAdd => {
            if embedded.is_empty() {
                return Err(Error::input("repeat-add fusion needs at least one condition"));
            }
            if let Some(e) = embedded.iter().find(|e| e.ncols() != d) {
                return Err(Error::input(format!(
                    "repeat-add fusion needs {d}-wide conditions, got {}",
                    e.ncols()
                )));
            }
            let views: Vec<_> = embedded.iter().map(|e| (e + &z_flat).into_owned()).collect();
            let views: Vec<_> = views.iter().map(|v| v.view()).collect();
            concatenate(Axis(1), &views).expect("row counts match")
        }
    };
    if fused.ncols() != w.proj_weight.ncols() {
        return Err(Error::input(format!(
            "projector expects {} input channels, fused stack has {}",
            w.proj_weight.ncols(),
            fused.ncols()
        )));
    }
    let out = linear(fused.view(), w.proj_weight.view(), w.proj_bias.view()) + &z_flat;
    Ok(out.to_shape((b, s, d)).expect("token count preserved").into_owned())
}
