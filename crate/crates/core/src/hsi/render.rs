use super::{HsiCube, HsiError, Result};

/// Red, green, blue band indices (0-based) used when none are given.
pub const DEFAULT_RGB_BANDS: (usize, usize, usize) = (9, 15, 28);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB, row-major.
    pub pixels: Vec<u8>,
}

impl RgbImage {
    /// Binary PPM (P6).
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Maps three bands to an 8-bit RGB image after clipping to [0, 1].
pub fn pseudo_color(cube: &HsiCube, (r, g, b): (usize, usize, usize)) -> Result<RgbImage> {
    for idx in [r, g, b] {
        if idx >= cube.bands() {
            return Err(HsiError::Param(format!(
                "band {idx} out of range for a {}-band cube",
                cube.bands()
            )));
        }
    }
    let (rb, gb, bb) = (cube.band(r), cube.band(g), cube.band(b));
    let pixels = rb
        .iter()
        .zip(gb)
        .zip(bb)
        .flat_map(|((&x, &y), &z)| [to_u8(x), to_u8(y), to_u8(z)])
        .collect();
    Ok(RgbImage { width: cube.width(), height: cube.height(), pixels })
}
