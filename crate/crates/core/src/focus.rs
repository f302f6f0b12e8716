//! Focus block: channel expansion, short-cut convolution, self-attentional
//! convolution over neighbouring channels, and a feed-forward stage.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Conv, FeedForward, ParamStore};
use crate::tensor::{Tape, Var};

/// Self-attentional convolution settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SacConfig {
    /// Odd channel window width.
    pub window: usize,
    /// Sum over every channel instead of the window.
    pub full: bool,
    /// Divide the output by the window width.
    pub normalize: bool,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            window: 5,
            full: false,
            normalize: false,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.window.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "SAC window must be odd, got {}",
                self.window
            )));
        }
        Ok(())
    }

    fn half_and_scale(&self, dim: usize) -> (usize, f64) {
        let (half, width) = if self.full {
            (dim, dim)
        } else {
            (self.window / 2, self.window)
        };
        let scale = if self.normalize {
            1.0 / width as f64
        } else {
            1.0
        };
        (half, scale)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FocusParams {
    pub expand: Conv,
    pub scc: Conv,
    pub ffn: FeedForward,
    pub sac: SacConfig,
    pub in_dim: usize,
    pub dim: usize,
}

impl FocusParams {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        dim: usize,
        sac: SacConfig,
        rng: &mut R,
    ) -> Result<Self> {
        sac.validate()?;
        if dim == 0 || in_dim == 0 {
            return Err(Error::Config(format!(
                "focus block {name}: zero width ({in_dim} -> {dim})"
            )));
        }
        Ok(Self {
            expand: Conv::init(store, &format!("{name}.expand"), dim, in_dim, 1, rng),
            scc: Conv::init(store, &format!("{name}.scc"), dim, dim, 3, rng),
            ffn: FeedForward::init(store, &format!("{name}.ffn"), dim, rng),
            sac,
            in_dim,
            dim,
        })
    }
}

/// Expanded width for a focus block in a network with `channels` input features.
pub fn expanded_width(channels: usize) -> Result<usize> {
    if channels == 0 || !channels.is_multiple_of(16) {
        return Err(Error::Config(format!(
            "channels {channels} not divisible by 16"
        )));
    }
    Ok(channels / 16)
}

/// The feature map used as its own kernel: each channel is multiplied by the
/// sum of the channels in its window, independently per (video, clip, crop).
/// No learnable weights.
pub fn sac(tape: &mut Tape, x: Var, config: &SacConfig) -> Result<Var> {
    let dim = *tape.shape(x).last().unwrap_or(&0);
    let (half, scale) = config.half_and_scale(dim);
    Ok(tape.sac(x, half, scale)?)
}

/// `[B, T, P, in_dim] -> [B, T, P, dim]`.
pub fn focus_forward(
    tape: &mut Tape,
    vars: &[Var],
    input: Var,
    params: &FocusParams,
) -> Result<Var> {
    let x = params.expand.apply(tape, vars, input)?;
    let s = params.scc.apply(tape, vars, x)?;
    let x = tape.add(x, s)?;
    let a = sac(tape, x, &params.sac)?;
    let x = tape.add(x, a)?;
    let f = params.ffn.apply(tape, vars, x)?;
    Ok(tape.add(x, f)?)
}
