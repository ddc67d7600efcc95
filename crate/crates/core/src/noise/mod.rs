//! Additive and replacement degradations of clean cubes.
//!
//! Every realization is a pure function of the [`NoiseSpec`] (including its seed):
//! [`synthesize`] first draws a [`NoiseRecord`] holding all discrete choices and
//! per-band levels, then [`NoiseRecord::apply`] regenerates the Gaussian field from the
//! seed and applies it, so a stored record reproduces the noisy cube bit for bit.

mod record;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hsi::HsiCube;
use crate::rng::SeedStream;

pub use record::{BandCorruption, NoiseRecord};

#[derive(Debug, Error)]
pub enum NoiseError {
    #[error("invalid noise parameter: {0}")]
    Param(String),
    #[error("noise record does not match cube: {0}")]
    Mismatch(String),
}

pub type Result<T, E = NoiseError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    GaussianIid,
    GaussianNoniid,
    Deadline,
    Impulse,
    Stripe,
    Mixture,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 6] = [
        NoiseKind::GaussianIid,
        NoiseKind::GaussianNoniid,
        NoiseKind::Deadline,
        NoiseKind::Impulse,
        NoiseKind::Stripe,
        NoiseKind::Mixture,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::GaussianIid => "gaussian_iid",
            NoiseKind::GaussianNoniid => "gaussian_noniid",
            NoiseKind::Deadline => "deadline",
            NoiseKind::Impulse => "impulse",
            NoiseKind::Stripe => "stripe",
            NoiseKind::Mixture => "mixture",
        }
    }
}

impl std::str::FromStr for NoiseKind {
    type Err = NoiseError;

    fn from_str(s: &str) -> Result<Self> {
        NoiseKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| NoiseError::Param(format!("unknown noise kind {s:?}")))
    }
}

impl std::fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Noise standard deviation on the 0–255 intensity scale: one level or a per-band range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Sigma {
    Fixed(f64),
    Range(f64, f64),
}

impl Sigma {
    pub fn bounds(self) -> (f64, f64) {
        match self {
            Sigma::Fixed(s) => (s, s),
            Sigma::Range(lo, hi) => (lo, hi),
        }
    }
}

/// Parameters of the sparse corruptions; fractions refer to image width or pixel count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KindParams {
    pub column_fraction: (f64, f64),
    pub deadline_width: (usize, usize),
    pub impulse_ratio: (f64, f64),
    pub stripe_offset: (f64, f64),
}

impl Default for KindParams {
    fn default() -> Self {
        Self {
            column_fraction: (0.05, 0.15),
            deadline_width: (1, 3),
            impulse_ratio: (0.1, 0.7),
            stripe_offset: (-0.25, 0.25),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub sigma: Sigma,
    #[serde(default = "default_band_fraction")]
    pub affected_band_fraction: f64,
    #[serde(default)]
    pub params: KindParams,
    #[serde(default)]
    pub clip: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_band_fraction() -> f64 {
    1.0 / 3.0
}

impl NoiseSpec {
    pub fn new(kind: NoiseKind, sigma: Sigma, seed: u64) -> Self {
        Self {
            kind,
            sigma,
            affected_band_fraction: default_band_fraction(),
            params: KindParams::default(),
            clip: false,
            seed,
        }
    }

    pub fn gaussian_iid(sigma: f64, seed: u64) -> Self {
        Self::new(NoiseKind::GaussianIid, Sigma::Fixed(sigma), seed)
    }

    /// Blind setting: per-band σ drawn from `range`; other kinds build on this.
    pub fn blind(kind: NoiseKind, range: (f64, f64), seed: u64) -> Self {
        Self::new(kind, Sigma::Range(range.0, range.1), seed)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.sigma.bounds();
        if !(lo > 0.0) || !hi.is_finite() || hi < lo {
            return Err(NoiseError::Param(format!("sigma must be positive with min ≤ max, got {:?}", self.sigma)));
        }
        if !(0.0..=1.0).contains(&self.affected_band_fraction) {
            return Err(NoiseError::Param(format!(
                "affected band fraction {} outside [0, 1]",
                self.affected_band_fraction
            )));
        }
        let p = &self.params;
        let check_range = |name: &str, (a, b): (f64, f64), lo: f64, hi: f64| {
            if !(a >= lo && b <= hi && a <= b) {
                return Err(NoiseError::Param(format!("{name} ({a}, {b}) must be ordered within [{lo}, {hi}]")));
            }
            Ok(())
        };
        check_range("column fraction", p.column_fraction, 0.0, 1.0)?;
        check_range("impulse ratio", p.impulse_ratio, 0.0, 1.0)?;
        check_range("stripe offset", p.stripe_offset, f64::NEG_INFINITY, f64::INFINITY)?;
        if p.deadline_width.0 == 0 || p.deadline_width.0 > p.deadline_width.1 {
            return Err(NoiseError::Param(format!("deadline width {:?} invalid", p.deadline_width)));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("noise spec serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: NoiseSpec = toml::from_str(text).map_err(|e| NoiseError::Param(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }
}

/// ⌈fraction·bands⌉, tolerant to the rounding of fractions such as 1/3.
pub fn affected_band_count(fraction: f64, bands: usize) -> usize {
    ((fraction * bands as f64 - 1e-9).ceil().max(0.0) as usize).min(bands)
}

fn uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Integer count uniform over `[⌈lo·W⌉, ⌊hi·W⌋]`, at least one column.
fn column_count<R: Rng>(rng: &mut R, (lo, hi): (f64, f64), width: usize) -> usize {
    let min = ((lo * width as f64).ceil() as usize).clamp(1, width);
    let max = ((hi * width as f64).floor() as usize).clamp(min, width);
    rng.random_range(min..=max)
}

fn draw_deadline<R: Rng>(rng: &mut R, p: &KindParams, width: usize) -> Vec<usize> {
    let target = column_count(rng, p.column_fraction, width);
    let mut hit = vec![false; width];
    let mut count = 0;
    while count < target {
        let start = rng.random_range(0..width);
        let w = rng.random_range(p.deadline_width.0..=p.deadline_width.1);
        for c in start..(start + w).min(width) {
            if !hit[c] {
                hit[c] = true;
                count += 1;
            }
        }
    }
    (0..width).filter(|&c| hit[c]).collect()
}

fn draw_stripe<R: Rng>(rng: &mut R, p: &KindParams, width: usize) -> Vec<(usize, f64)> {
    let n = column_count(rng, p.column_fraction, width);
    let mut cols = sample(rng, width, n).into_vec();
    cols.sort_unstable();
    cols.into_iter().map(|c| (c, uniform(rng, p.stripe_offset))).collect()
}

fn draw_impulse<R: Rng>(rng: &mut R, p: &KindParams, pixels: usize) -> (f64, Vec<(usize, bool)>) {
    let ratio = uniform(rng, p.impulse_ratio);
    let n = ((ratio * pixels as f64).round() as usize).min(pixels);
    let mut idx = sample(rng, pixels, n).into_vec();
    idx.sort_unstable();
    (ratio, idx.into_iter().map(|i| (i, rng.random_bool(0.5))).collect())
}

/// Draws every discrete choice and per-band level of a realization.
pub fn plan(spec: &NoiseSpec, height: usize, width: usize, bands: usize) -> Result<NoiseRecord> {
    spec.validate()?;
    let root = SeedStream::new(spec.seed);
    let per_band_sigma = match spec.kind {
        NoiseKind::GaussianIid => vec![spec.sigma.bounds().0; bands],
        _ => {
            let mut rng = root.split_named("sigma").rng();
            (0..bands).map(|_| uniform(&mut rng, spec.sigma.bounds())).collect()
        }
    };

    let mut kinds = vec![None; bands];
    match spec.kind {
        NoiseKind::GaussianIid | NoiseKind::GaussianNoniid => {}
        NoiseKind::Mixture => {
            let mut rng = root.split_named("mixture").rng();
            const CHOICES: [Option<NoiseKind>; 4] =
                [None, Some(NoiseKind::Deadline), Some(NoiseKind::Impulse), Some(NoiseKind::Stripe)];
            for k in kinds.iter_mut() {
                *k = CHOICES[rng.random_range(0..CHOICES.len())];
            }
        }
        kind => {
            let mut rng = root.split_named("bands").rng();
            let n = affected_band_count(spec.affected_band_fraction, bands);
            for b in sample(&mut rng, bands, n) {
                kinds[b] = Some(kind);
            }
        }
    }

    let corruption = kinds
        .iter()
        .enumerate()
        .map(|(b, kind)| {
            let Some(kind) = kind else { return BandCorruption::None };
            let mut rng = root.split_named(kind.name()).split(b as u64).rng();
            match kind {
                NoiseKind::Deadline => {
                    BandCorruption::Deadline { columns: draw_deadline(&mut rng, &spec.params, width) }
                }
                NoiseKind::Stripe => {
                    BandCorruption::Stripe { offsets: draw_stripe(&mut rng, &spec.params, width) }
                }
                NoiseKind::Impulse => {
                    let (ratio, pixels) = draw_impulse(&mut rng, &spec.params, height * width);
                    BandCorruption::Impulse { ratio, pixels }
                }
                _ => unreachable!("only sparse kinds are assigned per band"),
            }
        })
        .collect();

    Ok(NoiseRecord { spec: spec.clone(), dims: (height, width, bands), per_band_sigma, corruption })
}

/// Corrupts `clean` according to `spec`, returning the noisy cube and its record.
pub fn synthesize(clean: &HsiCube, spec: &NoiseSpec) -> Result<(HsiCube, NoiseRecord)> {
    let (h, w, b) = clean.dims();
    let record = plan(spec, h, w, b)?;
    let noisy = record.apply(clean)?;
    Ok((noisy, record))
}

pub fn add_gaussian_iid(clean: &HsiCube, sigma: f64, seed: u64) -> Result<(HsiCube, NoiseRecord)> {
    synthesize(clean, &NoiseSpec::gaussian_iid(sigma, seed))
}

pub fn add_gaussian_noniid(
    clean: &HsiCube,
    sigma_range: (f64, f64),
    seed: u64,
) -> Result<(HsiCube, NoiseRecord)> {
    synthesize(clean, &NoiseSpec::blind(NoiseKind::GaussianNoniid, sigma_range, seed))
}

fn with_kind(spec: &NoiseSpec, kind: NoiseKind) -> NoiseSpec {
    NoiseSpec { kind, ..spec.clone() }
}

pub fn add_deadline(clean: &HsiCube, spec: &NoiseSpec) -> Result<(HsiCube, NoiseRecord)> {
    synthesize(clean, &with_kind(spec, NoiseKind::Deadline))
}

pub fn add_impulse(clean: &HsiCube, spec: &NoiseSpec) -> Result<(HsiCube, NoiseRecord)> {
    synthesize(clean, &with_kind(spec, NoiseKind::Impulse))
}

pub fn add_stripe(clean: &HsiCube, spec: &NoiseSpec) -> Result<(HsiCube, NoiseRecord)> {
    synthesize(clean, &with_kind(spec, NoiseKind::Stripe))
}

pub fn add_mixture(clean: &HsiCube, spec: &NoiseSpec) -> Result<(HsiCube, NoiseRecord)> {
    synthesize(clean, &with_kind(spec, NoiseKind::Mixture))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn band_count_rounding() {
        assert_eq!(affected_band_count(1.0 / 3.0, 3), 1);
        assert_eq!(affected_band_count(1.0 / 3.0, 31), 11);
        assert_eq!(affected_band_count(0.0, 31), 0);
        assert_eq!(affected_band_count(1.0, 8), 8);
    }

    #[test]
    fn spec_toml_round_trip() {
        let mut spec = NoiseSpec::blind(NoiseKind::Stripe, (10.0, 70.0), 99);
        spec.params.stripe_offset = (-0.1, 0.1);
        let text = spec.to_toml();
        assert!(text.contains("kind = \"stripe\""));
        assert_eq!(NoiseSpec::from_toml(&text).unwrap(), spec);
        let fixed = NoiseSpec::from_toml("kind = \"gaussian_iid\"\nsigma = 50").unwrap();
        assert_eq!(fixed.sigma, Sigma::Fixed(50.0));
        assert_eq!(fixed.affected_band_fraction, 1.0 / 3.0);
    }

    #[test]
    fn invalid_specs() {
        assert!(NoiseSpec::gaussian_iid(0.0, 1).validate().is_err());
        assert!(NoiseSpec::blind(NoiseKind::GaussianNoniid, (70.0, 10.0), 1).validate().is_err());
        let mut s = NoiseSpec::blind(NoiseKind::Deadline, (10.0, 70.0), 1);
        s.affected_band_fraction = 1.5;
        assert!(s.validate().is_err());
        assert!("salt".parse::<NoiseKind>().is_err());
        assert_eq!("mixture".parse::<NoiseKind>().unwrap(), NoiseKind::Mixture);
    }

    #[test]
    fn deadline_widths_respected() {
        let mut rng = SeedStream::new(3).rng();
        let p = KindParams::default();
        for _ in 0..50 {
            let cols = draw_deadline(&mut rng, &p, 100);
            assert!((5..=17).contains(&cols.len()), "{}", cols.len());
        }
    }
}
