use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpsampleMode {
    /// Convolution to `c·s²` channels followed by a pixel shuffle.
    PixelShuffle,
    /// Fixed bilinear interpolation, no parameters.
    Bilinear,
    /// Transposed convolution with kernel `2s`, stride `s`, padding `s/2`.
    Deconv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainMode {
    /// Spatial attention weights from the upsampled MS and the details.
    LearnedAttention,
    /// High-pass modulation gain `ms_up / max(P_L, ε)`.
    TmraHpm,
}

/// Architecture of the two-level detail-injection network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TdnetConfig {
    pub bands: usize,
    pub ratio: usize,
    pub feature_width: usize,
    /// Kernel size of every convolution in the PAN branch.
    pub pan_kernel: usize,
    pub mscb_kernels: Vec<usize>,
    pub mscb_width: usize,
    pub upsample_mode: UpsampleMode,
    pub use_mrab: bool,
    pub use_pan_branch: bool,
    pub levels: usize,
    pub gain_mode: GainMode,
    /// PAN MTF gain at Nyquist, used to build the low-pass PAN planes.
    pub pan_gain: f64,
}

impl TdnetConfig {
    pub fn new(bands: usize) -> Self {
        TdnetConfig {
            bands,
            ratio: 4,
            feature_width: 64,
            pan_kernel: 5,
            mscb_kernels: vec![3, 5, 7],
            mscb_width: 20,
            upsample_mode: UpsampleMode::PixelShuffle,
            use_mrab: true,
            use_pan_branch: true,
            levels: 2,
            gain_mode: GainMode::LearnedAttention,
            pan_gain: 0.15,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.bands == 0 || self.feature_width == 0 || self.mscb_width == 0 {
            return bad("bands, feature_width and mscb_width must be positive".into());
        }
        if self.ratio < 2 || !self.ratio.is_multiple_of(2) {
            return bad(format!("ratio {} must be even", self.ratio));
        }
        if !(self.levels == 1 || self.levels == 2) {
            return bad(format!("levels must be 1 or 2, got {}", self.levels));
        }
        if self.levels == 2 && self.ratio != 4 {
            return bad("two levels require ratio 4".into());
        }
        if self.mscb_kernels.is_empty() || self.mscb_kernels.iter().any(|k| k % 2 == 0) {
            return bad(format!(
                "mscb kernels {:?} must be a non-empty set of odd sizes",
                self.mscb_kernels
            ));
        }
        if self.pan_kernel.is_multiple_of(2) {
            return bad(format!("pan kernel {} must be odd", self.pan_kernel));
        }
        if !(self.pan_gain > 0.0 && self.pan_gain < 1.0) {
            return bad(format!("pan gain {} outside (0, 1)", self.pan_gain));
        }
        Ok(())
    }

    /// Upsampling factor of each level's injection block.
    pub fn level_scale(&self) -> usize {
        if self.levels == 2 {
            2
        } else {
            self.ratio
        }
    }
}

/// The ablation rows, each a modification of a base configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Full,
    WithoutMrab,
    Sscb,
    WithoutPanBranch,
    SingleStage,
    Bilinear,
    Deconv,
    Reduced,
    Tmra,
}

impl Variant {
    pub const ABLATIONS: [Variant; 8] = [
        Variant::WithoutMrab,
        Variant::Sscb,
        Variant::WithoutPanBranch,
        Variant::SingleStage,
        Variant::Bilinear,
        Variant::Deconv,
        Variant::Reduced,
        Variant::Tmra,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "TDNet",
            Variant::WithoutMrab => "w/o MRAB",
            Variant::Sscb => "SSCB",
            Variant::WithoutPanBranch => "w/o PAN branch",
            Variant::SingleStage => "Single-stage",
            Variant::Bilinear => "TDNet(bilinear)",
            Variant::Deconv => "TDNet(Deconv)",
            Variant::Reduced => "TDNet(-)",
            Variant::Tmra => "TDNet-TMRA",
        }
    }

    pub fn apply(self, base: &TdnetConfig) -> TdnetConfig {
        let mut c = base.clone();
        match self {
            Variant::Full => {}
            Variant::WithoutMrab => c.use_mrab = false,
            Variant::Sscb => c.mscb_kernels = vec![5],
            Variant::WithoutPanBranch => c.use_pan_branch = false,
            Variant::SingleStage => c.levels = 1,
            Variant::Bilinear => c.upsample_mode = UpsampleMode::Bilinear,
            Variant::Deconv => c.upsample_mode = UpsampleMode::Deconv,
            Variant::Reduced => c.mscb_width = (base.mscb_width * 2 / 5).max(1),
            Variant::Tmra => c.gain_mode = GainMode::TmraHpm,
        }
        c
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    /// Accepts the row names case-insensitively.
    fn from_str(s: &str) -> Result<Self> {
        std::iter::once(Variant::Full)
            .chain(Variant::ABLATIONS)
            .find(|v| v.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown variant '{s}'")))
    }
}

impl std::str::FromStr for UpsampleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pixel-shuffle" | "pixel_shuffle" => Ok(UpsampleMode::PixelShuffle),
            "bilinear" => Ok(UpsampleMode::Bilinear),
            "deconv" => Ok(UpsampleMode::Deconv),
            other => Err(Error::Config(format!("unknown upsample mode '{other}'"))),
        }
    }
}

impl std::str::FromStr for GainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attention" | "learned_attention" => Ok(GainMode::LearnedAttention),
            "tmra" | "tmra_hpm" => Ok(GainMode::TmraHpm),
            other => Err(Error::Config(format!("unknown gain mode '{other}'"))),
        }
    }
}
