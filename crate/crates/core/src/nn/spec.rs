use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn default_dw_kernel() -> usize {
    3
}

fn default_se_ratio() -> f64 {
    0.25
}

/// One stage of mobile inverted bottleneck blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MbConvSpec {
    pub expansion_factor: usize,
    pub out_channels: usize,
    /// Number of blocks in the stage.
    pub repeat: usize,
    /// Stride of the first block; later repeats use stride 1.
    pub stride: usize,
    #[serde(default = "default_dw_kernel")]
    pub dw_kernel: usize,
    /// Squeeze-and-excitation width as a fraction of the block input channels.
    #[serde(default = "default_se_ratio")]
    pub se_ratio: f64,
}

impl MbConvSpec {
    pub fn new(expansion_factor: usize, out_channels: usize, repeat: usize, stride: usize) -> Self {
        MbConvSpec {
            expansion_factor,
            out_channels,
            repeat,
            stride,
            dw_kernel: default_dw_kernel(),
            se_ratio: default_se_ratio(),
        }
    }

    pub fn with_kernel(mut self, k: usize) -> Self {
        self.dw_kernel = k;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StemSpec {
    pub kernel: usize,
    pub filters: usize,
    pub stride: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchNormSpec {
    pub epsilon: f64,
    /// Weight of the old running value in each update.
    pub momentum: f64,
}

impl Default for BatchNormSpec {
    fn default() -> Self {
        BatchNormSpec {
            epsilon: 1e-3,
            momentum: 0.99,
        }
    }
}

/// Declarative description of stem, MBConv stages and classification head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    /// `[height, width, channels]`
    pub input_size: [usize; 3],
    pub stem: StemSpec,
    pub stages: Vec<MbConvSpec>,
    pub head_channels: usize,
    pub num_classes: usize,
    pub extractor_frozen: bool,
    #[serde(default)]
    pub batch_norm: BatchNormSpec,
}

pub const PRESET_NAMES: [&str; 4] = ["fidelity-b3", "desk", "b1-like", "b2-like"];

fn stages(
    expansion: &[usize],
    channels: &[usize],
    repeats: &[usize],
    strides: &[usize],
    kernels: &[usize],
) -> Vec<MbConvSpec> {
    (0..channels.len())
        .map(|i| {
            MbConvSpec::new(expansion[i], channels[i], repeats[i], strides[i])
                .with_kernel(kernels[i])
        })
        .collect()
}

const EXPANSIONS: [usize; 7] = [1, 6, 6, 6, 6, 6, 6];
const STRIDES: [usize; 7] = [1, 2, 2, 2, 1, 2, 1];
const REFERENCE_KERNELS: [usize; 7] = [3, 3, 5, 3, 5, 5, 3];

impl NetworkSpec {
    /// The B3-shaped extractor: 300x300 input, 40-filter stem, seven stages
    /// and a 1536-wide head, frozen, with a 5-class classifier.
    pub fn fidelity_b3() -> Self {
        NetworkSpec {
            input_size: [300, 300, 3],
            stem: StemSpec {
                kernel: 3,
                filters: 40,
                stride: 2,
            },
            stages: stages(
                &EXPANSIONS,
                &[24, 32, 48, 96, 136, 232, 384],
                &[3, 3, 3, 5, 5, 5, 3],
                &STRIDES,
                &[3; 7],
            ),
            head_channels: 1536,
            num_classes: 5,
            extractor_frozen: true,
            batch_norm: BatchNormSpec::default(),
        }
    }

    /// Two-stage 64x64 network for desk-scale training and gradient checks.
    pub fn desk() -> Self {
        NetworkSpec {
            input_size: [64, 64, 3],
            stem: StemSpec {
                kernel: 3,
                filters: 8,
                stride: 2,
            },
            stages: vec![MbConvSpec::new(1, 8, 1, 1), MbConvSpec::new(6, 16, 1, 2)],
            head_channels: 32,
            num_classes: 5,
            extractor_frozen: false,
            // A desk run takes tens of steps; 0.99 would leave the running
            // statistics mostly at their initial values.
            batch_norm: BatchNormSpec {
                momentum: 0.9,
                ..BatchNormSpec::default()
            },
        }
    }

    /// Informational B1-shaped variant (240x240, 1280-wide head).
    pub fn b1_like() -> Self {
        NetworkSpec {
            input_size: [240, 240, 3],
            stem: StemSpec {
                kernel: 3,
                filters: 32,
                stride: 2,
            },
            stages: stages(
                &EXPANSIONS,
                &[16, 24, 40, 80, 112, 192, 320],
                &[2, 3, 3, 4, 4, 5, 2],
                &STRIDES,
                &REFERENCE_KERNELS,
            ),
            head_channels: 1280,
            num_classes: 5,
            extractor_frozen: true,
            batch_norm: BatchNormSpec::default(),
        }
    }

    /// Informational B2-shaped variant (260x260, 1408-wide head).
    pub fn b2_like() -> Self {
        NetworkSpec {
            input_size: [260, 260, 3],
            stem: StemSpec {
                kernel: 3,
                filters: 32,
                stride: 2,
            },
            stages: stages(
                &EXPANSIONS,
                &[16, 24, 48, 88, 120, 208, 352],
                &[2, 3, 3, 4, 4, 5, 2],
                &STRIDES,
                &REFERENCE_KERNELS,
            ),
            head_channels: 1408,
            num_classes: 5,
            extractor_frozen: true,
            batch_norm: BatchNormSpec::default(),
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "fidelity-b3" => Ok(Self::fidelity_b3()),
            "desk" => Ok(Self::desk()),
            "b1-like" => Ok(Self::b1_like()),
            "b2-like" => Ok(Self::b2_like()),
            other => Err(Error::Spec(format!(
                "unknown preset {other:?}, expected one of {PRESET_NAMES:?}"
            ))),
        }
    }

    pub fn with_frozen_extractor(mut self, frozen: bool) -> Self {
        self.extractor_frozen = frozen;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Spec(msg));
        if self.input_size.contains(&0) {
            return fail(format!(
                "input size {:?} has a zero extent",
                self.input_size
            ));
        }
        if self.stem.kernel == 0 || self.stem.filters == 0 || self.stem.stride == 0 {
            return fail(format!(
                "stem {:?} must have positive kernel, filters and stride",
                self.stem
            ));
        }
        if self.stages.is_empty() {
            return fail("at least one MBConv stage is required".into());
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.expansion_factor == 0 || s.out_channels == 0 || s.repeat == 0 {
                return fail(format!(
                    "stage {i}: expansion, channels and repeat must be positive"
                ));
            }
            if !matches!(s.stride, 1 | 2) {
                return fail(format!("stage {i}: stride {} not in {{1, 2}}", s.stride));
            }
            if s.dw_kernel % 2 == 0 {
                return fail(format!(
                    "stage {i}: depthwise kernel {} must be odd",
                    s.dw_kernel
                ));
            }
            if !(s.se_ratio > 0.0 && s.se_ratio <= 1.0) {
                return fail(format!("stage {i}: se_ratio {} outside (0, 1]", s.se_ratio));
            }
        }
        if self.head_channels == 0 || self.num_classes == 0 {
            return fail("head_channels and num_classes must be positive".into());
        }
        let bn = self.batch_norm;
        if bn.epsilon.is_nan() || bn.epsilon <= 0.0 || !(0.0..1.0).contains(&bn.momentum) {
            return fail(format!("batch norm settings {bn:?} out of range"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fidelity_schedule_matches_feature_table() {
        let s = NetworkSpec::fidelity_b3();
        let ch: Vec<_> = s.stages.iter().map(|m| m.out_channels).collect();
        let rep: Vec<_> = s.stages.iter().map(|m| m.repeat).collect();
        let st: Vec<_> = s.stages.iter().map(|m| m.stride).collect();
        let ex: Vec<_> = s.stages.iter().map(|m| m.expansion_factor).collect();
        assert_eq!(ch, [24, 32, 48, 96, 136, 232, 384]);
        assert_eq!(rep, [3, 3, 3, 5, 5, 5, 3]);
        assert_eq!(st, [1, 2, 2, 2, 1, 2, 1]);
        assert_eq!(ex, [1, 6, 6, 6, 6, 6, 6]);
        assert_eq!(s.stem.filters, 40);
        assert_eq!((s.head_channels, s.num_classes), (1536, 5));
        s.validate().unwrap();
    }

    #[test]
    fn presets_resolve_and_validate() {
        for name in PRESET_NAMES {
            NetworkSpec::preset(name).unwrap().validate().unwrap();
        }
        assert!(matches!(NetworkSpec::preset("b7"), Err(Error::Spec(_))));
    }

    #[test]
    fn invalid_stage_lists_rejected() {
        let mut s = NetworkSpec::desk();
        s.stages.clear();
        assert!(s.validate().is_err());
        let mut s = NetworkSpec::desk();
        s.stages[0].stride = 3;
        assert!(s.validate().is_err());
        let mut s = NetworkSpec::desk();
        s.stages[1].dw_kernel = 4;
        assert!(s.validate().is_err());
    }

    #[test]
    fn spec_serde_defaults_and_unknown_keys() {
        let json = r#"{"expansion_factor":6,"out_channels":16,"repeat":1,"stride":2}"#;
        let m: MbConvSpec = serde_json::from_str(json).unwrap();
        assert_eq!((m.dw_kernel, m.se_ratio), (3, 0.25));
        let bad = r#"{"expansion_factor":6,"out_channels":16,"repeat":1,"stride":2,"swish":true}"#;
        assert!(serde_json::from_str::<MbConvSpec>(bad).is_err());
    }
}
