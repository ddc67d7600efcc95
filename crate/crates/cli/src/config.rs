//! Run configuration: a flat TOML file whose every key can be overridden by a flag.
//!
//! ```toml
//! # data
//! input = "data/clean"
//! output = "data/noisy"
//! checkpoint = "runs/model.sstm"
//!
//! # model
//! preset = "desk"          # or "full"
//! bands = 31
//! channels = 16
//!
//! # noise
//! noise_kind = "gaussian_iid"
//! sigma = [10, 70]         # or a single number
//! seed = 7
//!
//! # training
//! epochs = 100
//! lr = 1e-4
//! ```

use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use serde::{Deserialize, Serialize};
use sst_core::hsi::PatchParams;
use sst_core::net::{AttentionOrder, SstConfig};
use sst_core::noise::{KindParams, NoiseKind, NoiseSpec, Sigma};

use crate::CliError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[default]
    Desk,
    Full,
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "desk" => Ok(Preset::Desk),
            "full" => Ok(Preset::Full),
            _ => Err(format!("unknown preset {s:?} (expected desk or full)")),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Mse,
    L1,
}

impl FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mse" => Ok(LossKind::Mse),
            "l1" => Ok(LossKind::L1),
            _ => Err(format!("unknown loss {s:?} (expected mse or l1)")),
        }
    }
}

/// `50`, `10-70` or `10,70`.
pub fn parse_sigma(s: &str) -> Result<Sigma, String> {
    let num = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("bad sigma {s:?}: {e}"));
    match s.split_once(['-', ',']) {
        Some((lo, hi)) if !lo.trim().is_empty() => Ok(Sigma::Range(num(lo)?, num(hi)?)),
        _ => Ok(Sigma::Fixed(num(s)?)),
    }
}

fn parse_triplet(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("bad band triplet {s:?}: {e}")))
        .collect::<Result<_, _>>()?;
    parts.try_into().map_err(|_| format!("band triplet {s:?} needs exactly three entries"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Report or log file written in addition to stdout.
    pub report: Option<PathBuf>,
    /// Directory of held-out clean cubes for training; defaults to a split of `input`.
    pub validation: Option<PathBuf>,
    /// Directory or file under test for `eval`.
    pub test: Option<PathBuf>,

    pub preset: Preset,
    pub bands: usize,
    pub channels: Option<usize>,
    pub rssb: Option<usize>,
    pub sstl: Option<usize>,
    pub heads: Option<usize>,
    pub window: Option<usize>,
    pub mlp_ratio: Option<f64>,
    pub attention_order: AttentionOrder,
    pub shift_mask: bool,
    /// Start training from the identity map by zeroing the last convolution's weights.
    pub zero_init_tail: bool,

    pub noise_kind: NoiseKind,
    pub sigma: Sigma,
    pub band_fraction: f64,
    pub clip: bool,
    pub seed: u64,

    pub batch: usize,
    pub epochs: usize,
    pub lr: f64,
    pub lr_drop_epoch: usize,
    pub lr_drop_factor: f64,
    pub loss: LossKind,
    pub patch: usize,
    pub patch_scales: Vec<f64>,
    pub patch_strides: Vec<usize>,
    /// Stops training after this many optimizer steps in total.
    pub max_steps: Option<usize>,
    /// Fraction of input cubes held out when no validation directory is given.
    pub val_fraction: f64,

    pub tiled: bool,
    pub tile: usize,
    pub overlap: usize,

    pub rgb: [usize; 3],

    pub gradcheck_eps: f64,
    pub gradcheck_threshold: f64,
    pub gradcheck_size: usize,

    pub count: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let patches = PatchParams::default();
        Self {
            input: None,
            output: None,
            checkpoint: None,
            report: None,
            validation: None,
            test: None,
            preset: Preset::Desk,
            bands: 31,
            channels: None,
            rssb: None,
            sstl: None,
            heads: None,
            window: None,
            mlp_ratio: None,
            attention_order: AttentionOrder::default(),
            shift_mask: true,
            zero_init_tail: false,
            noise_kind: NoiseKind::GaussianIid,
            sigma: Sigma::Fixed(50.0),
            band_fraction: 1.0 / 3.0,
            clip: false,
            seed: 0,
            batch: 8,
            epochs: 100,
            lr: 1e-4,
            lr_drop_epoch: 60,
            lr_drop_factor: 0.1,
            loss: LossKind::Mse,
            patch: patches.patch,
            patch_scales: patches.scales,
            patch_strides: patches.strides,
            max_steps: None,
            val_fraction: 0.1,
            tiled: true,
            tile: sst_core::net::DEFAULT_TILE,
            overlap: sst_core::net::DEFAULT_OVERLAP,
            rgb: [9, 15, 28],
            gradcheck_eps: 1e-5,
            gradcheck_threshold: 1e-4,
            gradcheck_size: 8,
            count: 4,
            height: 64,
            width: 64,
        }
    }
}

/// Flags shared by all subcommands. Each one overrides the config-file key of the same name.
#[derive(Args, Clone, Debug, Default)]
pub struct Overrides {
    /// Flat TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, global = true)]
    pub report: Option<PathBuf>,
    #[arg(long, global = true)]
    pub validation: Option<PathBuf>,
    #[arg(long, global = true)]
    pub test: Option<PathBuf>,

    /// desk (C=16, T=1, L=2, N=2, M=4) or full (C=96, T=4, L=6, N=6, M=8).
    #[arg(long, global = true)]
    pub preset: Option<Preset>,
    #[arg(long, global = true)]
    pub bands: Option<usize>,
    #[arg(long, global = true)]
    pub channels: Option<usize>,
    /// Number of residual blocks.
    #[arg(long, global = true)]
    pub rssb: Option<usize>,
    /// Transformer layers per residual block.
    #[arg(long, global = true)]
    pub sstl: Option<usize>,
    #[arg(long, global = true)]
    pub heads: Option<usize>,
    #[arg(long, global = true)]
    pub window: Option<usize>,
    #[arg(long, global = true)]
    pub mlp_ratio: Option<f64>,
    /// nlsa_gsa, gsa_nlsa, nlsa_only, gsa_only, nlsa_nlsa or gsa_gsa.
    #[arg(long, global = true)]
    pub attention_order: Option<AttentionOrder>,
    #[arg(long, global = true)]
    pub shift_mask: Option<bool>,
    #[arg(long, global = true)]
    pub zero_init_tail: Option<bool>,

    /// gaussian_iid, gaussian_noniid, deadline, impulse, stripe or mixture.
    #[arg(long, global = true)]
    pub noise_kind: Option<NoiseKind>,
    /// Noise level on the 0–255 scale: `50` or a range `10-70`.
    #[arg(long, global = true, value_parser = parse_sigma)]
    pub sigma: Option<Sigma>,
    #[arg(long, global = true)]
    pub band_fraction: Option<f64>,
    #[arg(long, global = true)]
    pub clip: Option<bool>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[arg(long, global = true)]
    pub batch: Option<usize>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    #[arg(long, global = true)]
    pub lr_drop_epoch: Option<usize>,
    #[arg(long, global = true)]
    pub lr_drop_factor: Option<f64>,
    /// mse or l1.
    #[arg(long, global = true)]
    pub loss: Option<LossKind>,
    #[arg(long, global = true)]
    pub patch: Option<usize>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub patch_scales: Option<Vec<f64>>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub patch_strides: Option<Vec<usize>>,
    #[arg(long, global = true)]
    pub max_steps: Option<usize>,
    #[arg(long, global = true)]
    pub val_fraction: Option<f64>,

    #[arg(long, global = true)]
    pub tiled: Option<bool>,
    #[arg(long, global = true)]
    pub tile: Option<usize>,
    #[arg(long, global = true)]
    pub overlap: Option<usize>,

    /// Bands shown as red, green, blue: `9,15,28`.
    #[arg(long, global = true, value_parser = parse_triplet)]
    pub rgb: Option<[usize; 3]>,

    #[arg(long, global = true)]
    pub gradcheck_eps: Option<f64>,
    #[arg(long, global = true)]
    pub gradcheck_threshold: Option<f64>,
    #[arg(long, global = true)]
    pub gradcheck_size: Option<usize>,

    #[arg(long, global = true)]
    pub count: Option<usize>,
    #[arg(long, global = true)]
    pub height: Option<usize>,
    #[arg(long, global = true)]
    pub width: Option<usize>,
}

macro_rules! override_fields {
    ($cfg:ident, $o:ident; opt: $($opt:ident),*; val: $($val:ident),*) => {
        $(if $o.$opt.is_some() { $cfg.$opt = $o.$opt.clone(); })*
        $(if let Some(v) = &$o.$val { $cfg.$val = v.clone(); })*
    };
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Config file (if any) with flags applied on top.
    pub fn resolve(o: &Overrides) -> Result<Self, CliError> {
        let mut cfg = match &o.config {
            Some(path) => Self::load(path)?,
            None => Self::default(),
        };
        cfg.apply(o);
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        let cfg = self;
        override_fields!(cfg, o;
            opt: input, output, checkpoint, report, validation, test, channels, rssb, sstl, heads, window,
                mlp_ratio, max_steps;
            val: preset, bands, attention_order, shift_mask, zero_init_tail, noise_kind, sigma, band_fraction, clip, seed,
                batch, epochs, lr, lr_drop_epoch, lr_drop_factor, loss, patch, patch_scales, patch_strides,
                val_fraction, tiled, tile, overlap, rgb, gradcheck_eps, gradcheck_threshold, gradcheck_size,
                count, height, width);
    }

    pub fn sst_config(&self) -> Result<SstConfig, CliError> {
        let base = match self.preset {
            Preset::Desk => SstConfig::desk(self.bands),
            Preset::Full => SstConfig::full(self.bands),
        };
        let c = SstConfig {
            channels: self.channels.unwrap_or(base.channels),
            rssb_count: self.rssb.unwrap_or(base.rssb_count),
            sstl_per_rssb: self.sstl.unwrap_or(base.sstl_per_rssb),
            heads: self.heads.unwrap_or(base.heads),
            window: self.window.unwrap_or(base.window),
            mlp_ratio: self.mlp_ratio.unwrap_or(base.mlp_ratio),
            attention_order: self.attention_order,
            shift_mask: self.shift_mask,
            ..base
        };
        c.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(c)
    }

    pub fn noise_spec(&self) -> Result<NoiseSpec, CliError> {
        let spec = NoiseSpec {
            kind: self.noise_kind,
            sigma: self.sigma,
            affected_band_fraction: self.band_fraction,
            params: KindParams::default(),
            clip: self.clip,
            seed: self.seed,
        };
        spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(spec)
    }

    pub fn patch_params(&self) -> PatchParams {
        PatchParams { patch: self.patch, scales: self.patch_scales.clone(), strides: self.patch_strides.clone() }
    }

    /// Learning rate in effect during 1-based `epoch`.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        if epoch <= self.lr_drop_epoch {
            self.lr
        } else {
            self.lr * self.lr_drop_factor
        }
    }

    pub fn require<'a>(&self, path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, CliError> {
        path.as_deref().ok_or_else(|| CliError::Config(format!("missing required --{key}")))
    }
}
