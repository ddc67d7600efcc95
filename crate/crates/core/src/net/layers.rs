//! Forward passes of the network building blocks on a differentiation tape.

use super::config::{SstConfig, Stage};
use super::ops::{crop, cyclic_shift, reflect_pad, relative_bias, shift_mask, window_partition, window_reverse};
use crate::tensor::{Real, Result, Tape, TensorError, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// `y = x·weight + bias` over the last axis; weight is `[in, out]`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: Var,
    pub bias: Var,
}

/// 3×3 convolution, weight `[3, 3, in, out]`.
#[derive(Clone, Copy, Debug)]
pub struct Conv {
    pub weight: Var,
    pub bias: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct Norm {
    pub gamma: Var,
    pub beta: Var,
}

/// Query, key, value and output projections shared by both attention kinds.
#[derive(Clone, Copy, Debug)]
pub struct AttnParams {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub proj: Linear,
}

#[derive(Clone, Copy, Debug)]
pub enum StageParams {
    /// Windowed spatial attention with a `[heads, (2M−1)²]` relative bias table.
    Nlsa { attn: AttnParams, bias_table: Var },
    Gsa { attn: AttnParams },
}

#[derive(Clone, Debug)]
pub struct SstlParams {
    pub norm1: Norm,
    pub stages: Vec<StageParams>,
    pub norm2: Norm,
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Clone, Debug)]
pub struct RssbParams {
    pub layers: Vec<SstlParams>,
    pub conv: Conv,
}

#[derive(Clone, Debug)]
pub struct SstParams {
    pub head: Conv,
    pub blocks: Vec<RssbParams>,
    pub tail1: Conv,
    pub tail2: Conv,
}

impl SstlParams {
    pub fn stage_kinds(&self) -> Vec<Stage> {
        self.stages
            .iter()
            .map(|s| match s {
                StageParams::Nlsa { .. } => Stage::Nlsa,
                StageParams::Gsa { .. } => Stage::Gsa,
            })
            .collect()
    }
}

/// Settings shared by all attention layers of one model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttnContext {
    pub heads: usize,
    pub window: usize,
    pub shift_mask: bool,
}

impl From<&SstConfig> for AttnContext {
    fn from(c: &SstConfig) -> Self {
        Self { heads: c.heads, window: c.window, shift_mask: c.shift_mask }
    }
}

pub fn linear<T: Real>(tape: &mut Tape<T>, x: Var, l: &Linear) -> Result<Var> {
    let y = tape.matmul(x, l.weight)?;
    tape.add(y, l.bias)
}

pub fn conv<T: Real>(tape: &mut Tape<T>, x: Var, c: &Conv) -> Result<Var> {
    tape.conv2d_3x3(x, c.weight, c.bias)
}

pub fn norm<T: Real>(tape: &mut Tape<T>, x: Var, n: &Norm) -> Result<Var> {
    tape.layer_norm(x, n.gamma, n.beta, LAYER_NORM_EPS)
}

fn split_heads<T: Real>(tape: &mut Tape<T>, x: Var, heads: usize, axes: &[usize]) -> Result<Var> {
    let mut s = tape.shape(x).to_vec();
    let c = s.pop().unwrap();
    s.extend([heads, c / heads]);
    let r = tape.reshape(x, &s)?;
    tape.permute(r, axes)
}

/// Multi-head self-attention among the tokens of each window.
///
/// `x` is `[windows, tokens, C]`; `bias` (`[heads, tokens, tokens]`) and `mask`
/// (`[windows, 1, tokens, tokens]`) are added to the scaled scores.
pub fn nlsa_forward<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    p: &AttnParams,
    heads: usize,
    bias: Option<Var>,
    mask: Option<Var>,
) -> Result<Var> {
    let (nw, t, c) = match *tape.shape(x) {
        [a, b, c] => (a, b, c),
        ref s => return Err(TensorError::Contract(format!("nlsa expects [windows, tokens, C], got {s:?}"))),
    };
    if heads == 0 || c % heads != 0 {
        return Err(TensorError::Param(format!("channels {c} not divisible by heads {heads}")));
    }
    if let Some(m) = mask {
        let ms = tape.shape(m);
        if ms != [nw, 1, t, t] {
            return Err(TensorError::Shape { op: "nlsa mask", lhs: ms.to_vec(), rhs: vec![nw, 1, t, t] });
        }
    }
    if let Some(b) = bias {
        let bs = tape.shape(b);
        if bs != [heads, t, t] {
            return Err(TensorError::Shape { op: "nlsa bias", lhs: bs.to_vec(), rhs: vec![heads, t, t] });
        }
    }
    let d = c / heads;
    let q = linear(tape, x, &p.q)?;
    let k = linear(tape, x, &p.k)?;
    let v = linear(tape, x, &p.v)?;
    let q = split_heads(tape, q, heads, &[0, 2, 1, 3])?;
    let k = split_heads(tape, k, heads, &[0, 2, 3, 1])?;
    let v = split_heads(tape, v, heads, &[0, 2, 1, 3])?;
    let scores = tape.matmul(q, k)?;
    let mut scores = tape.scale(scores, 1.0 / (d as f64).sqrt());
    if let Some(b) = bias {
        scores = tape.add(scores, b)?;
    }
    if let Some(m) = mask {
        scores = tape.add(scores, m)?;
    }
    let attn = tape.softmax(scores, 3)?;
    let o = tape.matmul(attn, v)?;
    let o = tape.permute(o, &[0, 2, 1, 3])?;
    let o = tape.reshape(o, &[nw, t, c])?;
    linear(tape, o, &p.proj)
}

/// Channel attention over all pixels: per head a d×d matrix `softmax(Q·Kᵀ/√d)` with
/// Q, K of shape d×HW, applied as `A·V`. Returns the output and the `[heads, d, d]` attention.
pub fn gsa_forward<T: Real>(tape: &mut Tape<T>, x: Var, p: &AttnParams, heads: usize) -> Result<(Var, Var)> {
    let shape = tape.shape(x).to_vec();
    let c = *shape.last().ok_or_else(|| TensorError::Contract("gsa on a rank-0 tensor".into()))?;
    if heads == 0 || c % heads != 0 {
        return Err(TensorError::Param(format!("channels {c} not divisible by heads {heads}")));
    }
    let d = c / heads;
    let n = shape.iter().product::<usize>() / c;
    let flat = tape.reshape(x, &[n, c])?;
    let q = linear(tape, flat, &p.q)?;
    let k = linear(tape, flat, &p.k)?;
    let v = linear(tape, flat, &p.v)?;
    let q = split_heads(tape, q, heads, &[1, 2, 0])?;
    let k = split_heads(tape, k, heads, &[1, 0, 2])?;
    let v = split_heads(tape, v, heads, &[1, 2, 0])?;
    let scores = tape.matmul(q, k)?;
    let scores = tape.scale(scores, 1.0 / (d as f64).sqrt());
    let attn = tape.softmax(scores, 2)?;
    let o = tape.matmul(attn, v)?;
    let o = tape.permute(o, &[2, 0, 1])?;
    let o = tape.reshape(o, &[n, c])?;
    let o = linear(tape, o, &p.proj)?;
    Ok((tape.reshape(o, &shape)?, attn))
}

/// Shift applied along each axis of a shifted layer: half a window, or none when the
/// axis holds a single window.
pub fn shift_amounts(h: usize, w: usize, m: usize) -> (usize, usize) {
    let s = |n: usize| if n > m { m / 2 } else { 0 };
    (s(h), s(w))
}

/// Windowed attention stage on H×W×C features, with optional half-window shift.
pub fn nlsa_stage<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    attn: &AttnParams,
    bias_table: Var,
    ctx: &AttnContext,
    shifted: bool,
) -> Result<Var> {
    let (h, w) = (tape.shape(x)[0], tape.shape(x)[1]);
    let m = ctx.window;
    let (sy, sx) = if shifted { shift_amounts(h, w, m) } else { (0, 0) };
    let rolled = sy > 0 || sx > 0;
    let mut y = x;
    if rolled {
        y = cyclic_shift(tape, y, -(sy as isize), -(sx as isize))?;
    }
    let windows = window_partition(tape, y, m)?;
    let bias = relative_bias(tape, bias_table, m)?;
    let mask = if rolled && ctx.shift_mask {
        Some(tape.constant(shift_mask(h, w, m, sy, sx)))
    } else {
        None
    };
    let o = nlsa_forward(tape, windows, attn, ctx.heads, Some(bias), mask)?;
    let mut y = window_reverse(tape, o, h, w, m)?;
    if rolled {
        y = cyclic_shift(tape, y, sy as isize, sx as isize)?;
    }
    Ok(y)
}

pub fn ssma_forward<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    stages: &[StageParams],
    ctx: &AttnContext,
    shifted: bool,
) -> Result<Var> {
    let mut y = x;
    for stage in stages {
        y = match stage {
            StageParams::Nlsa { attn, bias_table } => nlsa_stage(tape, y, attn, *bias_table, ctx, shifted)?,
            StageParams::Gsa { attn } => gsa_forward(tape, y, attn, ctx.heads)?.0,
        };
    }
    Ok(y)
}

/// Pre-norm layer: attention block and MLP, each wrapped in a residual connection.
pub fn sstl_forward<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    p: &SstlParams,
    ctx: &AttnContext,
    shifted: bool,
) -> Result<Var> {
    let y = norm(tape, x, &p.norm1)?;
    let y = ssma_forward(tape, y, &p.stages, ctx, shifted)?;
    let x = tape.add(x, y)?;
    let y = norm(tape, x, &p.norm2)?;
    let y = linear(tape, y, &p.fc1)?;
    let y = tape.gelu(y);
    let y = linear(tape, y, &p.fc2)?;
    tape.add(x, y)
}

/// Layers alternate unshifted (even index) and shifted (odd index).
pub fn is_shifted(layer: usize) -> bool {
    layer % 2 == 1
}

pub fn rssb_forward<T: Real>(tape: &mut Tape<T>, x: Var, p: &RssbParams, ctx: &AttnContext) -> Result<Var> {
    let mut y = x;
    for (l, layer) in p.layers.iter().enumerate() {
        y = sstl_forward(tape, y, layer, ctx, is_shifted(l))?;
    }
    let y = conv(tape, y, &p.conv)?;
    tape.add(x, y)
}

/// Padding that brings `n` up to a multiple of `m`.
pub fn pad_to_multiple(n: usize, m: usize) -> usize {
    (m - n % m) % m
}

/// Full network on an H×W×B cube. Inputs whose sides are not multiples of the window
/// are reflect-padded and the output cropped back.
pub fn sst_forward<T: Real>(tape: &mut Tape<T>, y: Var, p: &SstParams, config: &SstConfig) -> Result<Var> {
    let (h, w, b) = match *tape.shape(y) {
        [h, w, b] => (h, w, b),
        ref s => return Err(TensorError::Contract(format!("network expects H×W×B, got {s:?}"))),
    };
    if b != config.bands {
        return Err(TensorError::Shape { op: "sst_forward bands", lhs: vec![h, w, b], rhs: vec![config.bands] });
    }
    let ctx = AttnContext::from(config);
    let m = config.window;
    let yp = reflect_pad(tape, y, pad_to_multiple(h, m), pad_to_multiple(w, m))?;
    let f0 = conv(tape, yp, &p.head)?;
    let mut f = f0;
    for block in &p.blocks {
        f = rssb_forward(tape, f, block, &ctx)?;
    }
    let f = tape.add(f, f0)?;
    let f = conv(tape, f, &p.tail1)?;
    let r = conv(tape, f, &p.tail2)?;
    let out = tape.add(yp, r)?;
    crop(tape, out, h, w)
}
