//! Inference on whole cubes, directly or in overlapping tiles.

use rayon::prelude::*;

use super::layers::sst_forward;
use super::model::{Binding, SstModel};
use super::{NetError, Result};
use crate::hsi::HsiCube;
use crate::tensor::{Real, Tape, Tensor};

pub const DEFAULT_TILE: usize = 64;
pub const DEFAULT_OVERLAP: usize = 16;

fn check_bands<T: Real>(model: &SstModel<T>, cube: &HsiCube) -> Result<()> {
    if cube.bands() != model.config().bands {
        return Err(NetError::Dimension(format!(
            "model expects {} bands, cube has {}",
            model.config().bands,
            cube.bands()
        )));
    }
    Ok(())
}

/// Forward pass on an H×W×B tensor with frozen parameters.
pub fn forward_tensor<T: Real>(model: &SstModel<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let (params, _) = model.bind(&mut tape, Binding::Frozen)?;
    let x = tape.constant(input.clone());
    let y = sst_forward(&mut tape, x, &params, model.config())?;
    Ok(tape.value(y).clone())
}

/// Whole-image inference.
pub fn denoise<T: Real>(model: &SstModel<T>, cube: &HsiCube) -> Result<HsiCube> {
    check_bands(model, cube)?;
    let out = forward_tensor(model, &cube.to_tensor::<T>())?;
    Ok(HsiCube::from_tensor(&out)?)
}

/// Tile origins covering `0..n` with tiles of `tile` that overlap by at least `overlap`;
/// the last tile is flush with the end.
pub fn tile_starts(n: usize, tile: usize, overlap: usize) -> Vec<usize> {
    if n <= tile {
        return vec![0];
    }
    let step = (tile - overlap.min(tile - 1)).max(1);
    let mut starts: Vec<usize> = (0..).map(|i| i * step).take_while(|&s| s + tile < n).collect();
    starts.push(n - tile);
    starts.dedup();
    starts
}

fn extract(cube: &HsiCube, y0: usize, x0: usize, h: usize, w: usize) -> HsiCube {
    let mut data = Vec::with_capacity(h * w * cube.bands());
    for b in 0..cube.bands() {
        for y in y0..y0 + h {
            let start = cube.index(y, x0, b);
            data.extend_from_slice(&cube.data()[start..start + w]);
        }
    }
    HsiCube::unit(h, w, cube.bands(), data).expect("tile lies inside the cube")
}

/// Tiled inference: each tile is denoised independently and overlapping outputs are averaged.
/// Tiles run in parallel; accumulation order is fixed, so results are deterministic.
pub fn denoise_tiled<T: Real>(model: &SstModel<T>, cube: &HsiCube, tile: usize, overlap: usize) -> Result<HsiCube> {
    check_bands(model, cube)?;
    if tile == 0 || overlap >= tile {
        return Err(NetError::Config(format!("tile {tile} must exceed overlap {overlap}")));
    }
    let (h, w, b) = cube.dims();
    let (th, tw) = (tile.min(h), tile.min(w));
    let origins: Vec<(usize, usize)> = tile_starts(h, tile, overlap)
        .into_iter()
        .flat_map(|y| tile_starts(w, tile, overlap).into_iter().map(move |x| (y, x)))
        .collect();
    let outputs: Vec<HsiCube> = origins
        .par_iter()
        .map(|&(y, x)| denoise(model, &extract(cube, y, x, th, tw)))
        .collect::<Result<_>>()?;

    let mut sum = vec![0f64; h * w * b];
    let mut count = vec![0u32; h * w];
    for (&(y0, x0), out) in origins.iter().zip(&outputs) {
        for band in 0..b {
            let plane = out.band(band);
            for y in 0..th {
                for x in 0..tw {
                    sum[(band * h + y0 + y) * w + x0 + x] += plane[y * tw + x] as f64;
                }
            }
        }
        for y in 0..th {
            for x in 0..tw {
                count[(y0 + y) * w + x0 + x] += 1;
            }
        }
    }
    let data = sum
        .iter()
        .enumerate()
        .map(|(i, &s)| (s / count[i % (h * w)] as f64) as f32)
        .collect();
    Ok(HsiCube::unit(h, w, b, data)?)
}
