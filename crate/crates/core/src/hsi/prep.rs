use log::warn;

use super::{HsiCube, HsiError, Result};

/// Affine map of the declared value range onto [0, 1].
pub fn normalize(cube: &HsiCube) -> Result<HsiCube> {
    let (lo, hi) = cube.value_range;
    if !(hi > lo) {
        return Err(HsiError::Param(format!("value range ({lo}, {hi}) is empty")));
    }
    if (lo, hi) == (0.0, 1.0) {
        return Ok(cube.clone());
    }
    let span = hi - lo;
    let data = cube
        .data
        .iter()
        .map(|&v| (((v as f64 - lo) / span).clamp(0.0, 1.0)) as f32)
        .collect();
    HsiCube::new(cube.height, cube.width, cube.bands, data, (0.0, 1.0))
}

/// Spatially centered `h`×`w` window. An odd remainder puts the extra pixel after
/// the window (bottom/right), so the window starts at `(H−h)/2` rounded down.
pub fn center_crop(cube: &HsiCube, h: usize, w: usize) -> Result<HsiCube> {
    if h == 0 || w == 0 || h > cube.height || w > cube.width {
        return Err(HsiError::Param(format!(
            "cannot crop {}x{} cube to {h}x{w}",
            cube.height, cube.width
        )));
    }
    let (y0, x0) = ((cube.height - h) / 2, (cube.width - w) / 2);
    crop(cube, y0, x0, h, w)
}

pub(crate) fn crop(cube: &HsiCube, y0: usize, x0: usize, h: usize, w: usize) -> Result<HsiCube> {
    let mut data = Vec::with_capacity(h * w * cube.bands);
    for b in 0..cube.bands {
        for y in y0..y0 + h {
            let start = cube.index(y, x0, b);
            data.extend_from_slice(&cube.data[start..start + w]);
        }
    }
    HsiCube::new(h, w, cube.bands, data, cube.value_range)
}

/// Spatial bilinear resampling to `new_h`×`new_w` with half-pixel centers.
/// For integer reduction factors of 2 this averages 2×2 blocks exactly.
pub fn downsample_bilinear(cube: &HsiCube, new_h: usize, new_w: usize) -> Result<HsiCube> {
    if new_h == 0 || new_w == 0 {
        return Err(HsiError::Param("resampled size must be positive".into()));
    }
    if (new_h, new_w) == (cube.height, cube.width) {
        return Ok(cube.clone());
    }
    let axis = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f64)> {
        let scale = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, src - i0 as f64)
            })
            .collect()
    };
    let ys = axis(cube.height, new_h);
    let xs = axis(cube.width, new_w);
    let mut data = Vec::with_capacity(new_h * new_w * cube.bands);
    for b in 0..cube.bands {
        let band = cube.band(b);
        let at = |y: usize, x: usize| band[y * cube.width + x] as f64;
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bot = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                data.push((top * (1.0 - fy) + bot * fy) as f32);
            }
        }
    }
    HsiCube::new(new_h, new_w, cube.bands, data, cube.value_range)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchParams {
    pub patch: usize,
    pub scales: Vec<f64>,
    pub strides: Vec<usize>,
}

impl Default for PatchParams {
    fn default() -> Self {
        Self { patch: 64, scales: vec![1.0, 0.5, 0.25], strides: vec![64, 32, 32] }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SkippedScale {
    pub scale: f64,
    pub size: (usize, usize),
}

#[derive(Clone, Debug)]
pub struct PatchSet {
    pub patches: Vec<HsiCube>,
    pub source_id: String,
    pub params: PatchParams,
    pub skipped: Vec<SkippedScale>,
}

/// Number of tiles of `patch` along an axis of length `dim` at `stride`.
pub fn tiles_along(dim: usize, patch: usize, stride: usize) -> usize {
    if dim < patch {
        0
    } else {
        (dim - patch) / stride + 1
    }
}

/// Multi-scale sliding-window patches, scale-major then row-major.
pub fn extract_patches(cube: &HsiCube, params: &PatchParams, source_id: &str) -> Result<PatchSet> {
    if params.scales.len() != params.strides.len() {
        return Err(HsiError::Param(format!(
            "{} scales but {} strides",
            params.scales.len(),
            params.strides.len()
        )));
    }
    if params.patch == 0 || params.strides.contains(&0) {
        return Err(HsiError::Param("patch size and strides must be positive".into()));
    }
    if params.scales.iter().any(|&s| !(s > 0.0 && s <= 1.0)) {
        return Err(HsiError::Param(format!("scales must lie in (0, 1], got {:?}", params.scales)));
    }
    let mut patches = Vec::new();
    let mut skipped = Vec::new();
    for (&scale, &stride) in params.scales.iter().zip(&params.strides) {
        let h = (cube.height as f64 * scale).floor() as usize;
        let w = (cube.width as f64 * scale).floor() as usize;
        if h < params.patch || w < params.patch {
            warn!("{source_id}: scale {scale} gives {h}x{w}, smaller than patch {}", params.patch);
            skipped.push(SkippedScale { scale, size: (h, w) });
            continue;
        }
        let scaled = downsample_bilinear(cube, h, w)?;
        for ty in 0..tiles_along(h, params.patch, stride) {
            for tx in 0..tiles_along(w, params.patch, stride) {
                patches.push(crop(&scaled, ty * stride, tx * stride, params.patch, params.patch)?);
            }
        }
    }
    Ok(PatchSet { patches, source_id: source_id.to_owned(), params: params.clone(), skipped })
}
