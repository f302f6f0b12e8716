//! Glance block: channel reduction, short-cut convolution, clip-level
//! transformer attention across all clips of a video, and a feed-forward
//! stage. Every sub-stage after the reduction is wired as a residual.

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{Conv, FeedForward, ParamStore};
use crate::tensor::{Tape, Var};

#[derive(Debug, Clone, Copy)]
pub struct GlanceParams {
    pub reduce: Conv,
    pub scc: Conv,
    pub query: Conv,
    pub key: Conv,
    pub value: Conv,
    pub ffn: FeedForward,
    pub in_dim: usize,
    pub dim: usize,
    /// Divide attention logits by `sqrt(dim)`. Off reproduces the unscaled logits.
    pub scale_attention: bool,
}

impl GlanceParams {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        dim: usize,
        scale_attention: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if dim == 0 || in_dim == 0 {
            return Err(Error::Config(format!(
                "glance block {name}: zero width ({in_dim} -> {dim})"
            )));
        }
        Ok(Self {
            reduce: Conv::init(store, &format!("{name}.reduce"), dim, in_dim, 1, rng),
            scc: Conv::init(store, &format!("{name}.scc"), dim, dim, 3, rng),
            query: Conv::init(store, &format!("{name}.query"), dim, dim, 1, rng),
            key: Conv::init(store, &format!("{name}.key"), dim, dim, 1, rng),
            value: Conv::init(store, &format!("{name}.value"), dim, dim, 1, rng),
            ffn: FeedForward::init(store, &format!("{name}.ffn"), dim, rng),
            in_dim,
            dim,
            scale_attention,
        })
    }
}

/// Reduced width for a glance block fed `channels` features.
pub fn reduced_width(channels: usize) -> Result<usize> {
    if channels == 0 || !channels.is_multiple_of(32) {
        return Err(Error::Config(format!(
            "channels {channels} not divisible by 32"
        )));
    }
    Ok(channels / 32)
}

/// `A[b,t1,t2,p] = sum_c Q(F)[b,t1,p,c] K(F)[b,t2,p,c]`, per crop.
pub fn attention_logits(
    tape: &mut Tape,
    vars: &[Var],
    x: Var,
    params: &GlanceParams,
) -> Result<Var> {
    let q = params.query.apply(tape, vars, x)?;
    let k = params.key.apply(tape, vars, x)?;
    let logits = tape.clip_gram(q, k)?;
    Ok(if params.scale_attention {
        tape.scale(logits, 1.0 / (params.dim as f64).sqrt())
    } else {
        logits
    })
}

/// Softmax over the attended clip axis `t2`.
pub fn attention_weights(tape: &mut Tape, logits: Var) -> Result<Var> {
    Ok(tape.softmax(logits, 2)?)
}

/// Video clip-level transformer: each clip becomes the attention-weighted
/// average of the value projections of all clips.
pub fn vct(tape: &mut Tape, vars: &[Var], x: Var, params: &GlanceParams) -> Result<Var> {
    let logits = attention_logits(tape, vars, x, params)?;
    let weights = attention_weights(tape, logits)?;
    let v = params.value.apply(tape, vars, x)?;
    Ok(tape.clip_mix(weights, v)?)
}

/// `[B, T, P, in_dim] -> [B, T, P, dim]`.
pub fn glance_forward(
    tape: &mut Tape,
    vars: &[Var],
    input: Var,
    params: &GlanceParams,
) -> Result<Var> {
    let x = params.reduce.apply(tape, vars, input)?;
    let s = params.scc.apply(tape, vars, x)?;
    let x = tape.add(x, s)?;
    let a = vct(tape, vars, x, params)?;
    let x = tape.add(x, a)?;
    let f = params.ffn.apply(tape, vars, x)?;
    Ok(tape.add(x, f)?)
}
