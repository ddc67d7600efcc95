//! Hyperspectral cubes and the data-preparation pipeline around them.

mod io;
mod prep;
mod render;

use std::path::PathBuf;

use rand::Rng;
use thiserror::Error;

use crate::rng::SeedStream;
use crate::tensor::{Real, Tensor};

pub use io::{
    decode_cube, encode_cube, import_text, load_cube, save_cube, write_atomic, CUBE_MAGIC,
    CUBE_VERSION, DTYPE_F32, HEADER_LEN,
};
pub use prep::{
    center_crop, downsample_bilinear, extract_patches, normalize, PatchParams, PatchSet,
    SkippedScale, tiles_along,
};
pub use render::{pseudo_color, RgbImage, DEFAULT_RGB_BANDS};

#[derive(Debug, Error)]
pub enum HsiError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed cube at byte {offset}: {message}")]
    Format { offset: usize, message: String },
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

pub type Result<T, E = HsiError> = std::result::Result<T, E>;

/// H×W×B cube stored band-planar: `data[(b * height + y) * width + x]`.
#[derive(Clone, Debug, PartialEq)]
pub struct HsiCube {
    height: usize,
    width: usize,
    bands: usize,
    data: Vec<f32>,
    value_range: (f64, f64),
}

impl HsiCube {
    pub fn new(
        height: usize,
        width: usize,
        bands: usize,
        data: Vec<f32>,
        value_range: (f64, f64),
    ) -> Result<Self> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(HsiError::Param(format!(
                "cube dimensions must be positive, got {height}x{width}x{bands}"
            )));
        }
        if data.len() != height * width * bands {
            return Err(HsiError::Dimension(format!(
                "{height}x{width}x{bands} cube needs {} values, got {}",
                height * width * bands,
                data.len()
            )));
        }
        Ok(Self { height, width, bands, data, value_range })
    }

    /// Cube with value range (0, 1).
    pub fn unit(height: usize, width: usize, bands: usize, data: Vec<f32>) -> Result<Self> {
        Self::new(height, width, bands, data, (0.0, 1.0))
    }

    pub fn filled(height: usize, width: usize, bands: usize, value: f32) -> Result<Self> {
        Self::unit(height, width, bands, vec![value; height * width * bands])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.bands)
    }

    pub fn value_range(&self) -> (f64, f64) {
        self.value_range
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn with_value_range(mut self, range: (f64, f64)) -> Self {
        self.value_range = range;
        self
    }

    pub fn index(&self, y: usize, x: usize, b: usize) -> usize {
        (b * self.height + y) * self.width + x
    }

    pub fn get(&self, y: usize, x: usize, b: usize) -> f32 {
        self.data[self.index(y, x, b)]
    }

    pub fn band(&self, b: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[b * n..(b + 1) * n]
    }

    pub fn band_mut(&mut self, b: usize) -> &mut [f32] {
        let n = self.height * self.width;
        &mut self.data[b * n..(b + 1) * n]
    }

    pub fn same_shape(&self, other: &HsiCube) -> bool {
        self.dims() == other.dims()
    }

    /// Channels-last H×W×B tensor, the layout the network consumes.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let (h, w, b) = self.dims();
        let mut out = vec![T::zero(); h * w * b];
        for band in 0..b {
            for (p, &v) in self.band(band).iter().enumerate() {
                out[p * b + band] = T::from_f64_lossy(v as f64);
            }
        }
        Tensor::new(vec![h, w, b], out).expect("cube dims are positive")
    }

    /// Inverse of [`to_tensor`](Self::to_tensor); value range is set to (0, 1).
    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Result<Self> {
        let s = t.shape();
        if s.len() != 3 {
            return Err(HsiError::Dimension(format!("expected H×W×B tensor, got {s:?}")));
        }
        let (h, w, b) = (s[0], s[1], s[2]);
        let mut data = vec![0f32; h * w * b];
        for (p, px) in t.data().chunks(b).enumerate() {
            for (band, &v) in px.iter().enumerate() {
                data[band * h * w + p] = v.to_f64_lossy() as f32;
            }
        }
        Self::unit(h, w, b, data)
    }
}

/// Smooth synthetic scene following a linear mixing model: a few smooth spectral
/// signatures weighted by smooth, partly piecewise-constant abundance maps. Values lie in [0, 1].
pub fn synthetic_cube(height: usize, width: usize, bands: usize, seed: SeedStream) -> HsiCube {
    let mut rng = seed.rng();
    let n_end = 4;
    let spectra: Vec<Vec<f64>> = (0..n_end)
        .map(|_| {
            let c1 = rng.random_range(0.0..1.0);
            let c2 = rng.random_range(0.0..1.0);
            let w1 = rng.random_range(0.15..0.6);
            let w2 = rng.random_range(0.15..0.6);
            let base = rng.random_range(0.1..0.3);
            (0..bands)
                .map(|b| {
                    let t = if bands > 1 { b as f64 / (bands - 1) as f64 } else { 0.5 };
                    let g = |c: f64, w: f64| (-((t - c) / w).powi(2)).exp();
                    (base + 0.45 * g(c1, w1) + 0.35 * g(c2, w2)).min(1.0)
                })
                .collect()
        })
        .collect();

    struct Blob {
        cy: f64,
        cx: f64,
        r: f64,
        end: usize,
    }
    let blobs: Vec<Blob> = (0..6)
        .map(|_| Blob {
            cy: rng.random_range(0.0..1.0),
            cx: rng.random_range(0.0..1.0),
            r: rng.random_range(0.15..0.45),
            end: rng.random_range(0..n_end),
        })
        .collect();
    let rect_end = rng.random_range(0..n_end);
    let (ry0, rx0) = (rng.random_range(0.1..0.5), rng.random_range(0.1..0.5));
    let (ry1, rx1) = (ry0 + rng.random_range(0.2..0.4), rx0 + rng.random_range(0.2..0.4));

    let mut data = vec![0f32; height * width * bands];
    let hw = height * width;
    for y in 0..height {
        for x in 0..width {
            let (fy, fx) = ((y as f64 + 0.5) / height as f64, (x as f64 + 0.5) / width as f64);
            let mut a = vec![0.2; n_end];
            for bl in &blobs {
                let d2 = ((fy - bl.cy).powi(2) + (fx - bl.cx).powi(2)) / (bl.r * bl.r);
                a[bl.end] += (-d2).exp();
            }
            if fy >= ry0 && fy < ry1 && fx >= rx0 && fx < rx1 {
                a[rect_end] += 1.5;
            }
            let total: f64 = a.iter().sum();
            for b in 0..bands {
                let v: f64 = a.iter().zip(&spectra).map(|(ak, s)| ak * s[b]).sum::<f64>() / total;
                data[b * hw + y * width + x] = v.clamp(0.0, 1.0) as f32;
            }
        }
    }
    HsiCube::unit(height, width, bands, data).expect("positive dims")
}
