//! Full scoring head: FAM, the configured block stack, and the clip scorer.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fam::{amplify, FamParams};
use crate::focus::{expanded_width, focus_forward, FocusParams, SacConfig};
use crate::glance::{glance_forward, reduced_width, GlanceParams};
use crate::params::{Dense, ParamStore};
use crate::rng::{self, Purpose};
use crate::tensor::{Tape, Tensor, Var};

/// Block composition of the network body.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockOrder {
    /// Glance then focus.
    Gf,
    /// Two focus blocks.
    Ff,
    /// Focus then glance.
    Fg,
    /// Glance and focus in parallel on the amplified features, summed.
    GfFusion,
}

impl BlockOrder {
    pub const ALL: [BlockOrder; 4] = [
        BlockOrder::Gf,
        BlockOrder::Ff,
        BlockOrder::Fg,
        BlockOrder::GfFusion,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BlockOrder::Gf => "gf",
            BlockOrder::Ff => "ff",
            BlockOrder::Fg => "fg",
            BlockOrder::GfFusion => "gf-fusion",
        }
    }
}

impl fmt::Display for BlockOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BlockOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "gf" => Ok(BlockOrder::Gf),
            "ff" => Ok(BlockOrder::Ff),
            "fg" => Ok(BlockOrder::Fg),
            "gf-fusion" => Ok(BlockOrder::GfFusion),
            other => Err(Error::Argument(format!("unknown block order {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureDescriptor {
    pub block_order: BlockOrder,
    /// Input feature channels `C`.
    pub channels: usize,
    /// Clips per video `T`.
    pub clips: usize,
    /// Crops per clip `P`.
    pub crops: usize,
    /// Top-k clips used by the MIL losses.
    pub topk: usize,
    pub alpha: f64,
    pub use_fam: bool,
    pub fam_kernel: usize,
    pub sac: SacConfig,
    pub attention_scale: bool,
    /// Hidden widths of the three-layer score head.
    pub head_widths: [usize; 2],
    pub dropout: f64,
}

/// Hidden widths `[out/4, out/32]`, floored at `[MIN_HEAD_WIDTHS]` so narrow
/// feature widths do not leave single-unit layers under dropout.
pub const MIN_HEAD_WIDTHS: [usize; 2] = [8, 4];

pub fn default_head_widths(out: usize) -> [usize; 2] {
    [
        (out / 4).max(MIN_HEAD_WIDTHS[0]),
        (out / 32).max(MIN_HEAD_WIDTHS[1]),
    ]
}

impl ArchitectureDescriptor {
    pub fn new(block_order: BlockOrder, channels: usize, clips: usize, crops: usize) -> Self {
        let out = match block_order {
            BlockOrder::Fg => channels / 32,
            _ => channels / 16,
        };
        Self {
            block_order,
            channels,
            clips,
            crops,
            topk: 3,
            alpha: 0.1,
            use_fam: true,
            fam_kernel: 3,
            sac: SacConfig::default(),
            attention_scale: false,
            head_widths: default_head_widths(out),
            dropout: 0.7,
        }
    }

    /// Width of the block-stack output fed to the score head.
    pub fn output_width(&self) -> Result<usize> {
        let g = reduced_width(self.channels)?;
        let f = expanded_width(self.channels)?;
        Ok(match self.block_order {
            BlockOrder::Fg => g,
            _ => f,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.output_width()?;
        self.sac.validate()?;
        if self.clips == 0 || self.crops == 0 {
            return Err(Error::Config("clips and crops must be >= 1".into()));
        }
        if self.topk == 0 || self.topk > self.clips {
            return Err(Error::Config(format!(
                "k={} must be in 1..={}",
                self.topk, self.clips
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if self.head_widths.contains(&0) {
            return Err(Error::Config("score head widths must be >= 1".into()));
        }
        Ok(())
    }

    /// Human-readable width layout, recorded in run reports.
    pub fn describe(&self) -> String {
        let c = self.channels;
        let (g, f) = (c / 32, c / 16);
        let body = match self.block_order {
            BlockOrder::Gf => format!("glance {c}->{g}, focus {g}->{f}"),
            BlockOrder::Ff => format!("focus {c}->{f}, focus {f}->{f}"),
            BlockOrder::Fg => format!("focus {c}->{f}, glance {f}->{g}"),
            BlockOrder::GfFusion => format!("glance {c}->{g} lifted {g}->{f} + focus {c}->{f}"),
        };
        let out = self.output_width().unwrap_or(0);
        let [h1, h2] = self.head_widths;
        format!(
            "{}: {}{body}; head {out}->{h1}->{h2}->1",
            self.block_order,
            if self.use_fam { "fam, " } else { "" }
        )
    }
}

#[derive(Debug, Clone, Copy)]
enum Block {
    Glance(GlanceParams),
    Focus(FocusParams),
}

impl Block {
    fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        match self {
            Block::Glance(p) => glance_forward(tape, vars, x, p),
            Block::Focus(p) => focus_forward(tape, vars, x, p),
        }
    }
}

#[derive(Debug, Clone)]
enum Body {
    Sequential(Vec<Block>),
    Fusion {
        glance: GlanceParams,
        lift: Dense,
        focus: FocusParams,
    },
}

/// Tape handles of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ModelVars {
    /// `[B, T]` sigmoid scores.
    pub scores: Var,
    /// `[B, T]` crop-averaged feature norms.
    pub magnitudes: Var,
    /// `[B, T, P, D_out]`.
    pub features: Var,
}

#[derive(Debug, Clone)]
pub struct ModelOutput {
    pub clip_scores: Tensor,
    pub clip_magnitudes: Tensor,
    pub features: Tensor,
}

impl ModelOutput {
    pub fn from_vars(tape: &Tape, vars: &ModelVars) -> Self {
        Self {
            clip_scores: tape.value(vars.scores).clone(),
            clip_magnitudes: tape.value(vars.magnitudes).clone(),
            features: tape.value(vars.features).clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    arch: ArchitectureDescriptor,
    params: ParamStore,
    fam: Option<FamParams>,
    body: Body,
    head: [Dense; 3],
}

impl Model {
    /// Initializes parameters from the `Init` stream of `seed`.
    pub fn new(arch: ArchitectureDescriptor, seed: u64) -> Result<Self> {
        Self::init(arch, &mut rng::stream(seed, Purpose::Init, 0))
    }

    pub fn init<R: Rng + ?Sized>(arch: ArchitectureDescriptor, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let c = arch.channels;
        let (g, f) = (reduced_width(c)?, expanded_width(c)?);
        let mut store = ParamStore::default();
        let fam = if arch.use_fam {
            Some(FamParams::init(
                &mut store,
                c,
                arch.fam_kernel,
                arch.alpha,
                rng,
            )?)
        } else {
            None
        };
        let scale = arch.attention_scale;
        let sac = arch.sac;
        let body = match arch.block_order {
            BlockOrder::Gf => Body::Sequential(vec![
                Block::Glance(GlanceParams::init(
                    &mut store,
                    "blocks.0.glance",
                    c,
                    g,
                    scale,
                    rng,
                )?),
                Block::Focus(FocusParams::init(
                    &mut store,
                    "blocks.1.focus",
                    g,
                    f,
                    sac,
                    rng,
                )?),
            ]),
            BlockOrder::Ff => Body::Sequential(vec![
                Block::Focus(FocusParams::init(
                    &mut store,
                    "blocks.0.focus",
                    c,
                    f,
                    sac,
                    rng,
                )?),
                Block::Focus(FocusParams::init(
                    &mut store,
                    "blocks.1.focus",
                    f,
                    f,
                    sac,
                    rng,
                )?),
            ]),
            BlockOrder::Fg => Body::Sequential(vec![
                Block::Focus(FocusParams::init(
                    &mut store,
                    "blocks.0.focus",
                    c,
                    f,
                    sac,
                    rng,
                )?),
                Block::Glance(GlanceParams::init(
                    &mut store,
                    "blocks.1.glance",
                    f,
                    g,
                    scale,
                    rng,
                )?),
            ]),
            BlockOrder::GfFusion => Body::Fusion {
                glance: GlanceParams::init(&mut store, "blocks.0.glance", c, g, scale, rng)?,
                lift: Dense::init(&mut store, "blocks.0.lift", f, g, rng),
                focus: FocusParams::init(&mut store, "blocks.1.focus", c, f, sac, rng)?,
            },
        };
        let out = arch.output_width()?;
        let [h1, h2] = arch.head_widths;
        let head = [
            Dense::init(&mut store, "head.0", h1, out, rng),
            Dense::init(&mut store, "head.1", h2, h1, rng),
            Dense::init(&mut store, "head.2", 1, h2, rng),
        ];
        Ok(Self {
            arch,
            params: store,
            fam,
            body,
            head,
        })
    }

    pub fn arch(&self) -> &ArchitectureDescriptor {
        &self.arch
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Checks an input shape against the architecture.
    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        let a = &self.arch;
        match *shape {
            [_, t, p, c] if t == a.clips && p == a.crops && c == a.channels => Ok(()),
            _ => Err(Error::Config(format!(
                "input {shape:?} does not match architecture [B, T={}, P={}, C={}]",
                a.clips, a.crops, a.channels
            ))),
        }
    }

    /// Records a forward pass. `dropout` enables training-mode dropout in the
    /// score head, drawing masks from the given generator.
    pub fn forward_vars(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        input: Var,
        mut dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<ModelVars> {
        self.check_input(tape.shape(input))?;
        let (b, t) = (tape.shape(input)[0], tape.shape(input)[1]);
        let x = match &self.fam {
            Some(fam) => amplify(tape, vars, input, fam)?,
            None => input,
        };
        let features = match &self.body {
            Body::Sequential(blocks) => {
                let mut h = x;
                for block in blocks {
                    h = block.forward(tape, vars, h)?;
                }
                h
            }
            Body::Fusion {
                glance,
                lift,
                focus,
            } => {
                let g = glance_forward(tape, vars, x, glance)?;
                let g = lift.apply(tape, vars, g)?;
                let f = focus_forward(tape, vars, x, focus)?;
                tape.add(g, f)?
            }
        };

        let norms = tape.l2_norm(features)?;
        let norms = tape.mean_axis(norms, 2)?;
        let magnitudes = tape.reshape(norms, &[b, t])?;

        let mut h = tape.mean_axis(features, 2)?;
        for (i, layer) in self.head.iter().enumerate() {
            h = layer.apply(tape, vars, h)?;
            if i + 1 < self.head.len() {
                h = tape.gelu(h);
                if let Some(rng) = dropout.as_deref_mut() {
                    h = apply_dropout(tape, h, self.arch.dropout, rng)?;
                }
            }
        }
        let logits = tape.reshape(h, &[b, t])?;
        let scores = tape.sigmoid(logits);
        Ok(ModelVars {
            scores,
            magnitudes,
            features,
        })
    }

    /// Evaluation-mode forward pass without gradient tracking.
    pub fn forward(&self, input: &Tensor) -> Result<ModelOutput> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self
            .params
            .tensors()
            .iter()
            .map(|p| tape.constant(p.clone()))
            .collect();
        let x = tape.constant(input.clone());
        let out = self.forward_vars(&mut tape, &vars, x, None)?;
        Ok(ModelOutput::from_vars(&tape, &out))
    }
}

fn apply_dropout(tape: &mut Tape, x: Var, rate: f64, rng: &mut ChaCha8Rng) -> Result<Var> {
    if rate <= 0.0 {
        return Ok(x);
    }
    let keep = 1.0 - rate;
    let n = tape.value(x).numel();
    let mask = (0..n)
        .map(|_| {
            if rng.gen::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        })
        .collect();
    Ok(tape.mul_const(x, mask)?)
}
