//! The detector network and its seven ablation variants.

mod forward;
mod layers;
mod params;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::texture::DEFAULT_TAU;

pub use forward::{
    forward, forward_prepared, prepare_input, ForwardOutput, ForwardTrace, PreparedInput,
};
pub use layers::{
    backbone_forward, cbam, channel_adapter, classifier_head, modulate_input, phase_attention,
    IMAGENET_MEAN, IMAGENET_STD,
};
pub use params::{init_model, Bound, GroupKind, ModelParams, Param, ParamGroup};

/// Input and attention configuration, in ablation report order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "rgb")]
    Rgb,
    #[serde(rename = "rgb-fft")]
    RgbFft,
    #[serde(rename = "rgb-lbp")]
    RgbLbp,
    #[serde(rename = "rgb-fft-lbp")]
    RgbFftLbp,
    #[serde(rename = "rgb-fft-lbp-cs")]
    RgbFftLbpCs,
    #[serde(rename = "rgb-fft-lbp-phase-cs")]
    RgbFftLbpPhaseCs,
    #[serde(rename = "rgb-fft-lbp-phase")]
    RgbFftLbpPhase,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Rgb,
        Variant::RgbFft,
        Variant::RgbLbp,
        Variant::RgbFftLbp,
        Variant::RgbFftLbpCs,
        Variant::RgbFftLbpPhaseCs,
        Variant::RgbFftLbpPhase,
    ];

    /// Display name as used in ablation reports.
    pub fn name(self) -> &'static str {
        match self {
            Variant::Rgb => "RGB",
            Variant::RgbFft => "RGB+FFT",
            Variant::RgbLbp => "RGB+LBP",
            Variant::RgbFftLbp => "RGB+FFT+LBP",
            Variant::RgbFftLbpCs => "RGB+FFT+LBP+C&S Attention",
            Variant::RgbFftLbpPhaseCs => "RGB+FFT+LBP+Phase-Aware+C&S Attention",
            Variant::RgbFftLbpPhase => "RGB+FFT+LBP+Phase-Aware Attention",
        }
    }

    /// Identifier used in config files and on the command line.
    pub fn slug(self) -> &'static str {
        match self {
            Variant::Rgb => "rgb",
            Variant::RgbFft => "rgb-fft",
            Variant::RgbLbp => "rgb-lbp",
            Variant::RgbFftLbp => "rgb-fft-lbp",
            Variant::RgbFftLbpCs => "rgb-fft-lbp-cs",
            Variant::RgbFftLbpPhaseCs => "rgb-fft-lbp-phase-cs",
            Variant::RgbFftLbpPhase => "rgb-fft-lbp-phase",
        }
    }

    pub fn uses_fft(self) -> bool {
        !matches!(self, Variant::Rgb | Variant::RgbLbp)
    }

    pub fn uses_lbp(self) -> bool {
        !matches!(self, Variant::Rgb | Variant::RgbFft)
    }

    pub fn uses_phase_attention(self) -> bool {
        matches!(self, Variant::RgbFftLbpPhaseCs | Variant::RgbFftLbpPhase)
    }

    pub fn uses_cbam(self) -> bool {
        matches!(self, Variant::RgbFftLbpCs | Variant::RgbFftLbpPhaseCs)
    }

    /// Channels entering the adapter.
    pub fn in_channels(self) -> usize {
        3 + usize::from(self.uses_fft()) + usize::from(self.uses_lbp())
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    /// Accepts either the slug or the display name.
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.slug() == s || v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                let known: Vec<_> = Variant::ALL.iter().map(|v| v.slug()).collect();
                Error::InvalidArgument(format!(
                    "unknown variant {s:?}; expected one of {}",
                    known.join(", ")
                ))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub variant: Variant,
    pub input_side: usize,
    pub backbone_channels: Vec<usize>,
    pub cbam_reduction: usize,
    pub head_hidden: usize,
    pub lbp_tau: f64,
    /// Width of each convolution inside the two attention branches.
    pub attn_branch_channels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::RgbFftLbpPhase,
            input_side: 64,
            backbone_channels: vec![16, 32, 64, 128],
            cbam_reduction: 4,
            head_hidden: 64,
            lbp_tau: DEFAULT_TAU,
            attn_branch_channels: 8,
        }
    }
}

impl ModelConfig {
    pub fn with_variant(variant: Variant) -> Self {
        Self {
            variant,
            ..Self::default()
        }
    }

    /// Each backbone stage halves the spatial size.
    pub fn backbone_out_hw(&self) -> usize {
        self.input_side >> self.backbone_channels.len()
    }

    pub fn backbone_out_channels(&self) -> usize {
        self.backbone_channels.last().copied().unwrap_or(3)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        let stages = self.backbone_channels.len();
        if stages == 0 || self.backbone_channels.contains(&0) {
            return bad(format!(
                "backbone widths must be non-empty and positive, got {:?}",
                self.backbone_channels
            ));
        }
        let divisor = 1usize.checked_shl(stages as u32).unwrap_or(0);
        if divisor == 0 || self.input_side == 0 || self.input_side % divisor != 0 {
            return bad(format!(
                "input side {} is not divisible by {divisor} ({stages} stages)",
                self.input_side
            ));
        }
        let c = self.backbone_out_channels();
        if self.cbam_reduction == 0 || c % self.cbam_reduction != 0 {
            return bad(format!(
                "backbone output {c} channels is not divisible by reduction {}",
                self.cbam_reduction
            ));
        }
        if self.head_hidden == 0 || self.attn_branch_channels == 0 {
            return bad("head and attention widths must be positive".into());
        }
        if !(self.lbp_tau.is_finite() && self.lbp_tau > 0.0) {
            return bad(format!("lbp tau must be positive, got {}", self.lbp_tau));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_counts_follow_report_order() {
        let k: Vec<_> = Variant::ALL.iter().map(|v| v.in_channels()).collect();
        assert_eq!(k, [3, 4, 4, 5, 5, 5, 5]);
        assert!(Variant::ALL
            .iter()
            .filter(|v| v.uses_phase_attention())
            .all(|v| v.uses_fft()));
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.slug().parse::<Variant>().unwrap(), v);
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
            let json = serde_json::to_string(&v).unwrap();
            assert_eq!(json, format!("\"{}\"", v.slug()));
            assert_eq!(serde_json::from_str::<Variant>(&json).unwrap(), v);
        }
        assert!("rgb+dct".parse::<Variant>().is_err());
    }

    #[test]
    fn config_validation() {
        let cfg = ModelConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.backbone_out_hw(), 4);
        assert!(ModelConfig {
            input_side: 72,
            ..cfg.clone()
        }
        .validate()
        .is_err());
        assert!(ModelConfig {
            cbam_reduction: 3,
            ..cfg.clone()
        }
        .validate()
        .is_err());
        assert!(ModelConfig {
            backbone_channels: vec![],
            ..cfg.clone()
        }
        .validate()
        .is_err());
        assert!(serde_json::from_str::<ModelConfig>(r#"{"variant":"rgb","side":3}"#).is_err());
    }
}
