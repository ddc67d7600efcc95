use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{NoiseError, NoiseKind, NoiseSpec, Result};
use crate::hsi::HsiCube;
use crate::rng::SeedStream;

/// Sparse corruption applied to one band on top of its Gaussian noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BandCorruption {
    None,
    /// Columns set to zero.
    Deadline { columns: Vec<usize> },
    /// Pixels (row-major index within the band) replaced by 1 (`true`) or 0 (`false`).
    Impulse { ratio: f64, pixels: Vec<(usize, bool)> },
    /// Per-column additive offsets.
    Stripe { offsets: Vec<(usize, f64)> },
}

impl BandCorruption {
    pub fn kind(&self) -> Option<NoiseKind> {
        match self {
            BandCorruption::None => None,
            BandCorruption::Deadline { .. } => Some(NoiseKind::Deadline),
            BandCorruption::Impulse { .. } => Some(NoiseKind::Impulse),
            BandCorruption::Stripe { .. } => Some(NoiseKind::Stripe),
        }
    }

    pub fn label(&self) -> &'static str {
        self.kind().map_or("none", NoiseKind::name)
    }
}

/// Complete description of one noise realization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseRecord {
    pub spec: NoiseSpec,
    pub dims: (usize, usize, usize),
    /// σ per band on the 0–255 scale.
    pub per_band_sigma: Vec<f64>,
    pub corruption: Vec<BandCorruption>,
}

impl NoiseRecord {
    pub fn affected_bands(&self, kind: NoiseKind) -> Vec<usize> {
        (0..self.corruption.len()).filter(|&b| self.corruption[b].kind() == Some(kind)).collect()
    }

    /// Columns touched by deadline or stripe noise in `band`.
    pub fn corrupted_columns(&self, band: usize) -> Vec<usize> {
        match &self.corruption[band] {
            BandCorruption::Deadline { columns } => columns.clone(),
            BandCorruption::Stripe { offsets } => offsets.iter().map(|&(c, _)| c).collect(),
            _ => Vec::new(),
        }
    }

    /// Row-major pixel indices replaced by impulse noise in `band`.
    pub fn impulse_mask(&self, band: usize) -> Vec<usize> {
        match &self.corruption[band] {
            BandCorruption::Impulse { pixels, .. } => pixels.iter().map(|&(i, _)| i).collect(),
            _ => Vec::new(),
        }
    }

    /// Unit-variance Gaussian draws for one band, regenerated from the seed.
    fn standard_normals(&self, band: usize) -> impl Iterator<Item = f64> {
        let (h, w, _) = self.dims;
        let mut rng = SeedStream::new(self.spec.seed).split_named("gaussian").split(band as u64).rng();
        (0..h * w).map(move |_| StandardNormal.sample(&mut rng))
    }

    /// Gaussian component of `band` on the [0, 1] scale.
    pub fn gaussian_component(&self, band: usize) -> Vec<f32> {
        let s = self.per_band_sigma[band] / 255.0;
        self.standard_normals(band).map(|z: f64| (s * z) as f32).collect()
    }

    /// Explicit additive part (Gaussian plus stripe offsets), band-planar.
    pub fn additive_component(&self) -> Vec<f32> {
        let (h, w, b) = self.dims;
        let mut out = Vec::with_capacity(h * w * b);
        for band in 0..b {
            let mut g = self.gaussian_component(band);
            if let BandCorruption::Stripe { offsets } = &self.corruption[band] {
                for &(c, off) in offsets {
                    for y in 0..h {
                        g[y * w + c] = (g[y * w + c] as f64 + off) as f32;
                    }
                }
            }
            out.extend(g);
        }
        out
    }

    pub fn apply(&self, clean: &HsiCube) -> Result<HsiCube> {
        if clean.dims() != self.dims {
            return Err(NoiseError::Mismatch(format!(
                "record is for {:?}, cube is {:?}",
                self.dims,
                clean.dims()
            )));
        }
        let (h, w, bands) = self.dims;
        let mut out = clean.clone();
        for band in 0..bands {
            let s = self.per_band_sigma[band] / 255.0;
            let plane = out.band_mut(band);
            for (v, z) in plane.iter_mut().zip(self.standard_normals(band)) {
                *v = (*v as f64 + s * z) as f32;
            }
            match &self.corruption[band] {
                BandCorruption::None => {}
                BandCorruption::Deadline { columns } => {
                    for &c in columns {
                        for y in 0..h {
                            plane[y * w + c] = 0.0;
                        }
                    }
                }
                BandCorruption::Stripe { offsets } => {
                    for &(c, off) in offsets {
                        for y in 0..h {
                            let p = &mut plane[y * w + c];
                            *p = (*p as f64 + off) as f32;
                        }
                    }
                }
                BandCorruption::Impulse { pixels, .. } => {
                    for &(i, salt) in pixels {
                        plane[i] = if salt { 1.0 } else { 0.0 };
                    }
                }
            }
            if self.spec.clip {
                plane.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
            }
        }
        Ok(out)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("noise record serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| NoiseError::Param(e.to_string()))
    }

    /// Short human-readable listing: per-band σ and corruption type.
    pub fn summary(&self) -> String {
        let mut out = format!(
            "kind {}  seed {}  dims {}x{}x{}\n",
            self.spec.kind, self.spec.seed, self.dims.0, self.dims.1, self.dims.2
        );
        out.push_str("band  sigma    corruption  detail\n");
        for (b, (s, c)) in self.per_band_sigma.iter().zip(&self.corruption).enumerate() {
            let detail = match c {
                BandCorruption::None => String::new(),
                BandCorruption::Deadline { columns } => format!("{} columns", columns.len()),
                BandCorruption::Impulse { ratio, pixels } => {
                    format!("ratio {ratio:.4}, {} pixels", pixels.len())
                }
                BandCorruption::Stripe { offsets } => format!("{} columns", offsets.len()),
            };
            out.push_str(&format!("{b:>4}  {s:>7.3}  {:<10}  {detail}\n", c.label()));
        }
        out
    }
}
