//! Closed-form parameter and multiply-accumulate accounting.

use super::config::{SstConfig, Stage};
use super::layers::pad_to_multiple;

/// Parameter count from the architecture formula, independent of any instantiated model.
pub fn count_params(config: &SstConfig) -> usize {
    let (b, c, h, n, m) = (config.bands, config.channels, config.mlp_hidden(), config.heads, config.window);
    let conv = |cin: usize, cout: usize| 9 * cin * cout + cout;
    let attn = 4 * (c * c + c);
    let table = n * (2 * m - 1) * (2 * m - 1);
    let stages: usize = config
        .attention_order
        .stages()
        .iter()
        .map(|s| match s {
            Stage::Nlsa => attn + table,
            Stage::Gsa => attn,
        })
        .sum();
    let layer = 4 * c + stages + (c * h + h) + (h * c + c);
    let block = config.sstl_per_rssb * layer + conv(c, c);
    conv(b, c) + config.rssb_count * block + conv(c, c) + conv(c, b)
}

/// Multiply-accumulates of one forward pass, split by component. Only matrix products and
/// convolutions are counted; normalization, softmax, activations and additions are not.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FlopCount {
    pub head_conv: u64,
    /// q, k, v and output projections of windowed attention.
    pub nlsa_projection: u64,
    /// Score and weighted-sum products inside windows.
    pub nlsa_core: u64,
    pub gsa_projection: u64,
    /// Channel-attention score and weighted-sum products.
    pub gsa_core: u64,
    pub mlp: u64,
    pub block_conv: u64,
    pub tail_conv: u64,
    /// Leading-order attention cost `Σ (M²HWC per windowed stage + C²HW per spectral stage)`.
    pub attention_order_terms: u64,
}

impl FlopCount {
    pub fn total(&self) -> u64 {
        self.head_conv
            + self.nlsa_projection
            + self.nlsa_core
            + self.gsa_projection
            + self.gsa_core
            + self.mlp
            + self.block_conv
            + self.tail_conv
    }

    pub fn attention_core(&self) -> u64 {
        self.nlsa_core + self.gsa_core
    }

    /// Total in units of 10⁹ multiply-accumulates.
    pub fn giga(&self) -> f64 {
        self.total() as f64 / 1e9
    }
}

/// Multiply-accumulate count for an H×W input, after padding to multiples of the window.
pub fn count_flops(config: &SstConfig, h: usize, w: usize) -> FlopCount {
    let m = config.window as u64;
    let hp = (h + pad_to_multiple(h, config.window)) as u64;
    let wp = (w + pad_to_multiple(w, config.window)) as u64;
    let px = hp * wp;
    let (b, c, hid) = (config.bands as u64, config.channels as u64, config.mlp_hidden() as u64);
    let d = c / config.heads as u64;
    let layers = (config.rssb_count * config.sstl_per_rssb) as u64;

    let mut out = FlopCount { head_conv: px * 9 * b * c, ..Default::default() };
    for stage in config.attention_order.stages() {
        match stage {
            Stage::Nlsa => {
                out.nlsa_projection += layers * 4 * px * c * c;
                out.nlsa_core += layers * 2 * px * m * m * c;
                out.attention_order_terms += layers * m * m * px * c;
            }
            Stage::Gsa => {
                out.gsa_projection += layers * 4 * px * c * c;
                out.gsa_core += layers * 2 * px * c * d;
                out.attention_order_terms += layers * c * c * px;
            }
        }
    }
    out.mlp = layers * 2 * px * c * hid;
    out.block_conv = config.rssb_count as u64 * 9 * px * c * c;
    out.tail_conv = 9 * px * c * c + 9 * px * c * b;
    out
}
