//! Feature amplification: per-crop feature norms re-injected as a
//! convolution-modulated residual.

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{Conv, ParamStore};
use crate::tensor::{Tape, Var};

#[derive(Debug, Clone, Copy)]
pub struct FamParams {
    /// Kernel `[C, 1, K]` run along the clip axis, bias `[C]`.
    pub conv: Conv,
    pub alpha: f64,
}

impl FamParams {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        channels: usize,
        ksize: usize,
        alpha: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if alpha < 0.0 || !alpha.is_finite() {
            return Err(Error::Config(format!(
                "FAM alpha must be >= 0, got {alpha}"
            )));
        }
        if ksize.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "FAM kernel size must be odd, got {ksize}"
            )));
        }
        Ok(Self {
            conv: Conv::init(store, "fam.conv", channels, 1, ksize, rng),
            alpha,
        })
    }
}

/// Per-crop L2 norm over channels: `[B, T, P, C] -> [B, T, P, 1]`.
pub fn magnitude(tape: &mut Tape, features: Var) -> Result<Var> {
    Ok(tape.l2_norm(features)?)
}

/// `F + alpha * Conv1D(|F|)`, convolving the magnitudes along clips and
/// lifting the single magnitude channel to `C` channels.
pub fn amplify(tape: &mut Tape, vars: &[Var], features: Var, params: &FamParams) -> Result<Var> {
    let norms = magnitude(tape, features)?;
    let lifted = params.conv.apply(tape, vars, norms)?;
    let residual = tape.scale(lifted, params.alpha);
    Ok(tape.add(features, residual)?)
}
