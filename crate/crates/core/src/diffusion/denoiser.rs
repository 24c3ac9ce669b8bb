use super::{project_zero_cog, DiffusionError};
use crate::model::{ModelInput, Mode, Muformer};
use crate::molecule::FeatureLayout;
use crate::tensor::Tensor;

/// Noise and bond predictions for one noisy molecule.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserOutput {
    /// `[n, d]` predicted feature noise.
    pub eps_h: Tensor,
    /// `[n, 3]` predicted coordinate noise, zero center of gravity.
    pub eps_x: Option<Tensor>,
    /// `[n, n, b]` symmetric bond-category probabilities.
    pub p_e: Option<Tensor>,
}

/// Anything that maps a noisy molecule to noise estimates and bond
/// probabilities. The network is one implementation; analytic denoisers
/// serve as test oracles.
pub trait Denoiser: Sync {
    fn layout(&self) -> FeatureLayout;
    fn bond_categories(&self) -> usize;
    fn denoise(&self, input: &ModelInput, mode: Mode) -> Result<DenoiserOutput, DiffusionError>;
}

impl Denoiser for Muformer {
    fn layout(&self) -> FeatureLayout {
        self.config.layout
    }

    fn bond_categories(&self) -> usize {
        self.config.bond_categories
    }

    fn denoise(&self, input: &ModelInput, mode: Mode) -> Result<DenoiserOutput, DiffusionError> {
        let out = self.predict(input, mode)?;
        let eps_x = match (&out.x, &input.x) {
            (Some(xo), Some(xi)) => {
                let diff = Tensor::from_fn(xo.shape().to_vec(), |k| xo.data()[k] - xi.data()[k]);
                Some(project_zero_cog(&diff))
            }
            _ => None,
        };
        Ok(DenoiserOutput {
            eps_h: out.h,
            eps_x,
            p_e: out.e_prob,
        })
    }
}
