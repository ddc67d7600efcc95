use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{psnr, sam, ssim, Result};
use crate::hsi::HsiCube;

/// Reported PSNR ceiling; identical cubes are shown at this value.
pub const PSNR_CAP_DB: f64 = 100.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CubeMetrics {
    pub id: String,
    /// Capped at [`PSNR_CAP_DB`].
    pub psnr: f64,
    pub ssim: f64,
    pub sam: f64,
}

impl CubeMetrics {
    pub fn new(id: impl Into<String>, psnr: f64, ssim: f64, sam: f64) -> Self {
        Self { id: id.into(), psnr: psnr.min(PSNR_CAP_DB), ssim, sam }
    }

    pub fn compute(id: impl Into<String>, reference: &HsiCube, test: &HsiCube) -> Result<Self> {
        Ok(Self::new(id, psnr(reference, test)?, ssim(reference, test)?, sam(reference, test)?))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub noise: Option<String>,
    pub model: Option<String>,
    pub timestamp: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_cube: Vec<CubeMetrics>,
    pub metadata: ReportMetadata,
}

impl MetricsReport {
    pub fn new(per_cube: Vec<CubeMetrics>, metadata: ReportMetadata) -> Self {
        Self { per_cube, metadata }
    }

    /// Arithmetic means of (PSNR, SSIM, SAM); `None` for an empty report.
    pub fn aggregate(&self) -> Option<(f64, f64, f64)> {
        if self.per_cube.is_empty() {
            return None;
        }
        let n = self.per_cube.len() as f64;
        let (p, s, a) = self
            .per_cube
            .iter()
            .fold((0.0, 0.0, 0.0), |(p, s, a), m| (p + m.psnr, s + m.ssim, a + m.sam));
        Some((p / n, s / n, a / n))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let meta = &self.metadata;
        for (key, value) in [("noise", &meta.noise), ("model", &meta.model), ("timestamp", &meta.timestamp)] {
            if let Some(v) = value {
                writeln!(out, "# {key}: {v}").unwrap();
            }
        }
        let width = self.per_cube.iter().map(|m| m.id.len()).max().unwrap_or(0).max(4);
        writeln!(out, "{:<width$}  {:>10}  {:>8}  {:>9}", "id", "PSNR(dB)", "SSIM", "SAM(deg)").unwrap();
        let row = |out: &mut String, id: &str, p: f64, s: f64, a: f64| {
            writeln!(out, "{id:<width$}  {p:>10.4}  {s:>8.5}  {a:>9.4}").unwrap();
        };
        for m in &self.per_cube {
            row(&mut out, &m.id, m.psnr, m.ssim, m.sam);
        }
        if let Some((p, s, a)) = self.aggregate() {
            row(&mut out, "mean", p, s, a);
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,psnr_db,ssim,sam_deg\n");
        for m in &self.per_cube {
            writeln!(out, "{},{},{},{}", m.id, m.psnr, m.ssim, m.sam).unwrap();
        }
        if let Some((p, s, a)) = self.aggregate() {
            writeln!(out, "mean,{p},{s},{a}").unwrap();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregate_is_mean_and_psnr_capped() {
        let r = MetricsReport::new(
            vec![CubeMetrics::new("a", f64::INFINITY, 1.0, 0.0), CubeMetrics::new("b", 20.0, 0.5, 10.0)],
            ReportMetadata::default(),
        );
        assert_eq!(r.per_cube[0].psnr, 100.0);
        assert_eq!(r.aggregate(), Some((60.0, 0.75, 5.0)));
        assert_eq!(MetricsReport::default().aggregate(), None);
    }

    #[test]
    fn text_and_csv_layout() {
        let r = MetricsReport::new(
            vec![CubeMetrics::new("scene_01", 28.125, 0.9, 4.5)],
            ReportMetadata { noise: Some("gaussian_iid sigma 10".into()), ..Default::default() },
        );
        let text = r.to_text();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# noise: gaussian_iid sigma 10");
        assert!(lines[2].starts_with("scene_01     28.1250   0.90000"));
        assert!(lines[3].starts_with("mean    "));
        assert_eq!(lines[1].len(), lines[2].len());
        let csv = r.to_csv();
        assert_eq!(csv, "id,psnr_db,ssim,sam_deg\nscene_01,28.125,0.9,4.5\nmean,28.125,0.9,4.5\n");
    }
}
