use serde::{Deserialize, Serialize};

use super::{NetError, Result};

/// Which attention stages make up one SSMA block, in application order.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionOrder {
    #[default]
    NlsaGsa,
    GsaNlsa,
    NlsaOnly,
    GsaOnly,
    NlsaNlsa,
    GsaGsa,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stage {
    Nlsa,
    Gsa,
}

impl AttentionOrder {
    pub const ALL: [AttentionOrder; 6] = [
        AttentionOrder::NlsaGsa,
        AttentionOrder::GsaNlsa,
        AttentionOrder::NlsaOnly,
        AttentionOrder::GsaOnly,
        AttentionOrder::NlsaNlsa,
        AttentionOrder::GsaGsa,
    ];

    pub fn stages(self) -> &'static [Stage] {
        use Stage::*;
        match self {
            AttentionOrder::NlsaGsa => &[Nlsa, Gsa],
            AttentionOrder::GsaNlsa => &[Gsa, Nlsa],
            AttentionOrder::NlsaOnly => &[Nlsa],
            AttentionOrder::GsaOnly => &[Gsa],
            AttentionOrder::NlsaNlsa => &[Nlsa, Nlsa],
            AttentionOrder::GsaGsa => &[Gsa, Gsa],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AttentionOrder::NlsaGsa => "nlsa_gsa",
            AttentionOrder::GsaNlsa => "gsa_nlsa",
            AttentionOrder::NlsaOnly => "nlsa_only",
            AttentionOrder::GsaOnly => "gsa_only",
            AttentionOrder::NlsaNlsa => "nlsa_nlsa",
            AttentionOrder::GsaGsa => "gsa_gsa",
        }
    }
}

impl std::str::FromStr for AttentionOrder {
    type Err = NetError;

    fn from_str(s: &str) -> Result<Self> {
        AttentionOrder::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| NetError::Config(format!("unknown attention order {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SstConfig {
    pub bands: usize,
    pub channels: usize,
    pub rssb_count: usize,
    pub sstl_per_rssb: usize,
    pub heads: usize,
    pub window: usize,
    pub mlp_ratio: f64,
    #[serde(default)]
    pub attention_order: AttentionOrder,
    /// Mask token pairs that wrap around the torus in shifted windows.
    #[serde(default = "default_true")]
    pub shift_mask: bool,
}

fn default_true() -> bool {
    true
}

impl SstConfig {
    /// Small configuration for tests and CPU training.
    pub fn desk(bands: usize) -> Self {
        Self {
            bands,
            channels: 16,
            rssb_count: 1,
            sstl_per_rssb: 2,
            heads: 2,
            window: 4,
            mlp_ratio: 4.0,
            attention_order: AttentionOrder::NlsaGsa,
            shift_mask: true,
        }
    }

    /// Full-size configuration (about 4.1M parameters at 31 bands).
    pub fn full(bands: usize) -> Self {
        Self { channels: 96, rssb_count: 4, sstl_per_rssb: 6, heads: 6, window: 8, ..Self::desk(bands) }
    }

    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }

    pub fn mlp_hidden(&self) -> usize {
        (self.mlp_ratio * self.channels as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("bands", self.bands),
            ("channels", self.channels),
            ("rssb_count", self.rssb_count),
            ("sstl_per_rssb", self.sstl_per_rssb),
            ("heads", self.heads),
            ("window", self.window),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(NetError::Config(format!("{name} must be at least 1")));
        }
        if self.channels % self.heads != 0 {
            return Err(NetError::Config(format!(
                "channels {} not divisible by heads {}",
                self.channels, self.heads
            )));
        }
        if !(self.mlp_ratio > 0.0) || self.mlp_hidden() == 0 {
            return Err(NetError::Config(format!("mlp_ratio {} gives no hidden units", self.mlp_ratio)));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: SstConfig = toml::from_str(text).map_err(|e| NetError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }
}
