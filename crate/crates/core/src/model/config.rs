use serde::{Deserialize, Serialize};

use crate::molecule::{FeatureLayout, BOND_CATEGORIES};

/// Which structural channels are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "joint")]
    Joint,
    #[serde(rename = "2d_only")]
    TwoD,
    #[serde(rename = "3d_only")]
    ThreeD,
}

impl Mode {
    pub fn uses_2d(self) -> bool {
        matches!(self, Mode::Joint | Mode::TwoD)
    }

    pub fn uses_3d(self) -> bool {
        matches!(self, Mode::Joint | Mode::ThreeD)
    }

    /// The mode implied by which modalities a record carries.
    pub fn for_modalities(has_2d: bool, has_3d: bool) -> Option<Self> {
        match (has_2d, has_3d) {
            (true, true) => Some(Mode::Joint),
            (true, false) => Some(Mode::TwoD),
            (false, true) => Some(Mode::ThreeD),
            (false, false) => None,
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Joint => "joint",
            Mode::TwoD => "2d_only",
            Mode::ThreeD => "3d_only",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "joint" => Ok(Mode::Joint),
            "2d_only" => Ok(Mode::TwoD),
            "3d_only" => Ok(Mode::ThreeD),
            other => Err(format!("unknown mode {other:?}; expected joint, 2d_only or 3d_only")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub layers: usize,
    pub atom_width: usize,
    pub edge_width: usize,
    pub heads: usize,
    pub ffn_width: usize,
    pub rbf_count: usize,
    /// Cosine cutoff radius in Ångström.
    pub cutoff: f64,
    /// Largest hop distance with its own bias bucket; longer ones are clipped.
    pub max_spd: usize,
    /// Number of path positions with their own edge weights.
    pub max_path: usize,
    pub dropout: f64,
    /// Add the 2D bias inside the equivariant attention in joint mode.
    pub bias2d_in_equivariant: bool,
    pub layout: FeatureLayout,
    pub bond_categories: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// Small enough for exhaustive finite-difference checks.
    pub fn toy() -> Self {
        Self {
            layers: 2,
            atom_width: 8,
            edge_width: 8,
            heads: 2,
            ffn_width: 16,
            rbf_count: 8,
            cutoff: 5.0,
            max_spd: 6,
            max_path: 4,
            dropout: 0.0,
            bias2d_in_equivariant: true,
            layout: FeatureLayout::default(),
            bond_categories: BOND_CATEGORIES,
        }
    }

    pub fn desk() -> Self {
        Self {
            layers: 2,
            atom_width: 32,
            edge_width: 16,
            heads: 4,
            ffn_width: 64,
            rbf_count: 16,
            ..Self::toy()
        }
    }

    /// Widths used for the full-size experiments.
    pub fn paper() -> Self {
        Self {
            layers: 6,
            atom_width: 256,
            edge_width: 64,
            heads: 8,
            ffn_width: 256,
            rbf_count: 64,
            max_spd: 20,
            max_path: 5,
            dropout: 0.3,
            ..Self::toy()
        }
    }

    pub fn feature_width(&self) -> usize {
        self.layout.width()
    }

    pub fn head_width(&self) -> usize {
        self.atom_width / self.heads
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.layers == 0 {
            return Err("layers must be at least 1".into());
        }
        if self.heads == 0 || self.atom_width % self.heads != 0 {
            return Err(format!(
                "atom_width {} must be divisible by heads {}",
                self.atom_width, self.heads
            ));
        }
        if !(self.cutoff > 0.0) {
            return Err("cutoff must be positive".into());
        }
        if self.rbf_count == 0 || self.edge_width == 0 || self.ffn_width == 0 {
            return Err("widths must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err("dropout must lie in [0, 1)".into());
        }
        if self.bond_categories < 2 {
            return Err("need at least two bond categories".into());
        }
        if self.layout.width() == 0 {
            return Err("atom feature width must be positive".into());
        }
        Ok(())
    }
}
