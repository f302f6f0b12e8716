//! Training objectives over clip scores and clip feature magnitudes.
//!
//! Every loss is built on the tape so the same code path produces values and
//! gradients. The value-only helpers record onto a throwaway tape.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::Label;
use crate::model::{ModelOutput, ModelVars};
use crate::tensor::{topk_slice, Tape, Tensor, Var};

/// Probability clamp applied before the cross-entropy logarithms.
pub const SCE_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossVariant {
    /// Magnitude-contrastive term.
    Mc,
    /// Global magnitude separation baseline.
    Rtfm,
    /// Cross-entropy plus the smoothness and sparsity terms only.
    #[serde(rename = "sce", alias = "sce-only")]
    SceOnly,
}

impl LossVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            LossVariant::Mc => "mc",
            LossVariant::Rtfm => "rtfm",
            LossVariant::SceOnly => "sce",
        }
    }
}

impl fmt::Display for LossVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mc" => Ok(LossVariant::Mc),
            "rtfm" => Ok(LossVariant::Rtfm),
            "sce" | "sce-only" | "sce_only" => Ok(LossVariant::SceOnly),
            other => Err(Error::Argument(format!("unknown loss variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the summed abnormal scores (printed as the smoothness term).
    pub lambda_ts: f64,
    /// Weight of the squared adjacent-score differences (printed as the sparsity term).
    pub lambda_sp: f64,
    /// Weight of the magnitude term.
    pub lambda_mc: f64,
    pub margin: f64,
    pub topk: usize,
    pub variant: LossVariant,
    /// Use signed min/max distances instead of hardest absolute pairs.
    pub literal_eq9: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_ts: 1.0,
            lambda_sp: 1.0,
            lambda_mc: 0.001,
            margin: 100.0,
            topk: 3,
            variant: LossVariant::Mc,
            literal_eq9: false,
        }
    }
}

/// Top-k clip magnitudes of one video, descending.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeSet {
    pub video: usize,
    pub label: Label,
    pub magnitudes: Vec<f64>,
    /// Clip index of each magnitude.
    pub indices: Vec<usize>,
}

/// Selects the top-k magnitudes of each row of a `[B, T]` tensor.
pub fn magnitude_sets(
    magnitudes: &Tensor,
    labels: &[Label],
    k: usize,
) -> Result<Vec<MagnitudeSet>> {
    let &[b, t] = magnitudes.shape() else {
        return Err(Error::Argument(format!(
            "magnitudes must be [B, T], got {:?}",
            magnitudes.shape()
        )));
    };
    if labels.len() != b {
        return Err(Error::Argument(format!(
            "{} labels for batch of {b}",
            labels.len()
        )));
    }
    magnitudes
        .data()
        .chunks_exact(t)
        .zip(labels)
        .enumerate()
        .map(|(video, (row, &label))| {
            let (magnitudes, indices) = topk_slice(row, k)?;
            Ok(MagnitudeSet {
                video,
                label,
                magnitudes,
                indices,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairKind {
    Normal,
    Abnormal,
    Cross,
}

/// The magnitude pair chosen for one video pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McPair {
    pub kind: PairKind,
    pub first_video: usize,
    pub second_video: usize,
    /// Position within each video's top-k list.
    pub first_slot: usize,
    pub second_slot: usize,
    /// Distance entering the loss (absolute, or signed in literal mode).
    pub distance: f64,
}

fn check_balanced(labels: impl Iterator<Item = Label>) -> Result<(usize, usize)> {
    let (mut normal, mut abnormal) = (0, 0);
    for l in labels {
        match l {
            Label::Normal => normal += 1,
            Label::Abnormal => abnormal += 1,
        }
    }
    if normal == 0 || normal != abnormal {
        return Err(Error::Argument(format!(
            "batch must hold equal, nonzero numbers of normal and abnormal videos (got {normal} + {abnormal})"
        )));
    }
    Ok((normal, abnormal))
}

/// Hardest pair between two top-k lists. Same-category pairs take the largest
/// distance, cross pairs the smallest. Ties keep the first pair in row-major order.
fn hardest(a: &MagnitudeSet, b: &MagnitudeSet, kind: PairKind, literal: bool) -> McPair {
    let mut best: Option<McPair> = None;
    for (i, &ma) in a.magnitudes.iter().enumerate() {
        for (j, &mb) in b.magnitudes.iter().enumerate() {
            let distance = if literal { ma - mb } else { (ma - mb).abs() };
            let better = match (&best, kind, literal) {
                (None, ..) => true,
                // Signed: min over same-category, max over cross.
                (Some(p), PairKind::Cross, true) => distance > p.distance,
                (Some(p), _, true) => distance < p.distance,
                (Some(p), PairKind::Cross, false) => distance < p.distance,
                (Some(p), _, false) => distance > p.distance,
            };
            if better {
                best = Some(McPair {
                    kind,
                    first_video: a.video,
                    second_video: b.video,
                    first_slot: i,
                    second_slot: j,
                    distance,
                });
            }
        }
    }
    best.expect("non-empty top-k lists")
}

/// Chooses the hardest pair for every normal pair, abnormal pair, and
/// normal-abnormal pair of videos (unordered pairs within a category).
pub fn mc_pairs(sets: &[MagnitudeSet], literal: bool) -> Result<Vec<McPair>> {
    check_balanced(sets.iter().map(|s| s.label))?;
    if sets.iter().any(|s| s.magnitudes.is_empty()) {
        return Err(Error::Argument("empty top-k magnitude list".into()));
    }
    let normal: Vec<&MagnitudeSet> = sets.iter().filter(|s| s.label == Label::Normal).collect();
    let abnormal: Vec<&MagnitudeSet> = sets.iter().filter(|s| s.label == Label::Abnormal).collect();
    let mut pairs = Vec::new();
    for (group, kind) in [(&normal, PairKind::Normal), (&abnormal, PairKind::Abnormal)] {
        for (i, a) in group.iter().enumerate() {
            for b in &group[i + 1..] {
                pairs.push(hardest(a, b, kind, literal));
            }
        }
    }
    for n in &normal {
        for a in &abnormal {
            pairs.push(hardest(n, a, PairKind::Cross, literal));
        }
    }
    Ok(pairs)
}

/// Records the magnitude-contrastive loss. `flat` maps (video, slot) to a
/// flat index of `magnitudes`.
fn mc_term(
    tape: &mut Tape,
    magnitudes: Var,
    pairs: &[McPair],
    margin: f64,
    literal: bool,
    flat: impl Fn(usize, usize) -> usize,
) -> Result<Var> {
    let mut terms = Vec::new();
    for kind in [PairKind::Normal, PairKind::Abnormal, PairKind::Cross] {
        let chosen: Vec<&McPair> = pairs.iter().filter(|p| p.kind == kind).collect();
        if chosen.is_empty() {
            continue;
        }
        let first = tape.gather(
            magnitudes,
            chosen
                .iter()
                .map(|p| flat(p.first_video, p.first_slot))
                .collect(),
        )?;
        let second = tape.gather(
            magnitudes,
            chosen
                .iter()
                .map(|p| flat(p.second_video, p.second_slot))
                .collect(),
        )?;
        let diff = tape.sub(first, second)?;
        let distance = if literal { diff } else { tape.abs(diff) };
        let per_pair = if kind == PairKind::Cross {
            let neg = tape.scale(distance, -1.0);
            let slack = tape.add_scalar(neg, margin);
            tape.relu(slack)
        } else {
            distance
        };
        terms.push(tape.mean(per_pair));
    }
    sum_vars(tape, &terms)
}

fn sum_vars(tape: &mut Tape, terms: &[Var]) -> Result<Var> {
    let mut iter = terms.iter();
    let Some(&first) = iter.next() else {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    };
    iter.try_fold(first, |acc, &t| tape.add(acc, t))
        .map_err(Error::from)
}

/// Magnitude-contrastive loss on precomputed top-k sets: mean hardest
/// same-category distance per category plus the mean cross-category hinge.
pub fn mc_loss(sets: &[MagnitudeSet], margin: f64) -> Result<f64> {
    mc_loss_with(sets, margin, false)
}

pub fn mc_loss_with(sets: &[MagnitudeSet], margin: f64, literal: bool) -> Result<f64> {
    let pairs = mc_pairs(sets, literal)?;
    let k = sets[0].magnitudes.len();
    if sets.iter().any(|s| s.magnitudes.len() != k) {
        return Err(Error::Argument("top-k lists differ in length".into()));
    }
    let mut tape = Tape::new();
    let data = sets
        .iter()
        .flat_map(|s| s.magnitudes.iter().copied())
        .collect();
    let mags = tape.constant(Tensor::new(&[sets.len(), k], data)?);
    let slot_of: Vec<usize> = sets.iter().map(|s| s.video).collect();
    let loss = mc_term(&mut tape, mags, &pairs, margin, literal, |video, slot| {
        let row = slot_of
            .iter()
            .position(|&v| v == video)
            .expect("video in sets");
        row * k + slot
    })?;
    Ok(tape.value(loss).item())
}

fn labels_as_targets(labels: &[Label]) -> Vec<f64> {
    labels.iter().map(|l| l.as_f64()).collect()
}

/// Video score = mean score of its top-k-magnitude clips; mean BCE over videos.
fn sce_term(tape: &mut Tape, scores: Var, sets: &[MagnitudeSet], clips: usize) -> Result<Var> {
    let k = sets.first().map_or(0, |s| s.indices.len());
    if k == 0 {
        return Err(Error::Argument("empty batch or k = 0".into()));
    }
    let idx = sets
        .iter()
        .flat_map(|s| s.indices.iter().map(move |&t| s.video * clips + t))
        .collect();
    let picked = tape.gather(scores, idx)?;
    let picked = tape.reshape(picked, &[sets.len(), k])?;
    let video_scores = tape.mean_axis(picked, 1)?;
    let labels: Vec<Label> = sets.iter().map(|s| s.label).collect();
    Ok(tape.bce(video_scores, labels_as_targets(&labels), SCE_CLAMP)?)
}

/// Sigmoid cross-entropy on the top-k-by-magnitude clip scores.
pub fn sce_loss(output: &ModelOutput, labels: &[Label], k: usize) -> Result<f64> {
    let sets = magnitude_sets(&output.clip_magnitudes, labels, k)?;
    let mut tape = Tape::new();
    let scores = tape.constant(output.clip_scores.clone());
    let clips = output.clip_scores.shape()[1];
    let loss = sce_term(&mut tape, scores, &sets, clips)?;
    Ok(tape.value(loss).item())
}

/// Returns `(term_sum, term_diff)` over abnormal videos, each divided by the
/// abnormal-video count: the summed clip scores and the summed squared
/// differences of adjacent clip scores.
fn smoothness_sparsity_terms(tape: &mut Tape, scores: Var, labels: &[Label]) -> Result<(Var, Var)> {
    let &[b, t] = tape.shape(scores) else {
        return Err(Error::Argument(format!(
            "scores must be [B, T], got {:?}",
            tape.shape(scores)
        )));
    };
    if labels.len() != b {
        return Err(Error::Argument(format!(
            "{} labels for batch of {b}",
            labels.len()
        )));
    }
    let abnormal: Vec<usize> = (0..b).filter(|&i| labels[i] == Label::Abnormal).collect();
    if abnormal.is_empty() {
        let zero = tape.constant(Tensor::scalar(0.0));
        return Ok((zero, zero));
    }
    let norm = 1.0 / abnormal.len() as f64;
    let all = tape.gather(
        scores,
        abnormal
            .iter()
            .flat_map(|&i| (0..t).map(move |j| i * t + j))
            .collect(),
    )?;
    let total = tape.sum(all);
    let term_sum = tape.scale(total, norm);

    let term_diff = if t > 1 {
        let left = tape.gather(
            scores,
            abnormal
                .iter()
                .flat_map(|&i| (0..t - 1).map(move |j| i * t + j))
                .collect(),
        )?;
        let right = tape.gather(
            scores,
            abnormal
                .iter()
                .flat_map(|&i| (1..t).map(move |j| i * t + j))
                .collect(),
        )?;
        let d = tape.sub(left, right)?;
        let sq = tape.mul(d, d)?;
        let s = tape.sum(sq);
        tape.scale(s, norm)
    } else {
        tape.constant(Tensor::scalar(0.0))
    };
    Ok((term_sum, term_diff))
}

/// `(l_ts, l_sp)` with the printed assignment: `l_ts` is the score sum and
/// `l_sp` the squared adjacent difference.
pub fn smoothness_sparsity(scores: &Tensor, labels: &[Label]) -> Result<(f64, f64)> {
    let mut tape = Tape::new();
    let s = tape.constant(scores.clone());
    let (ts, sp) = smoothness_sparsity_terms(&mut tape, s, labels)?;
    Ok((tape.value(ts).item(), tape.value(sp).item()))
}

/// `max(0, margin - (mean top-k abnormal magnitude - mean top-k normal magnitude))`,
/// averaging the per-video top-k means within each class.
fn rtfm_term(
    tape: &mut Tape,
    magnitudes: Var,
    sets: &[MagnitudeSet],
    clips: usize,
    margin: f64,
) -> Result<Var> {
    check_balanced(sets.iter().map(|s| s.label))?;
    let k = sets[0].indices.len();
    let idx = sets
        .iter()
        .flat_map(|s| s.indices.iter().map(move |&t| s.video * clips + t))
        .collect();
    let picked = tape.gather(magnitudes, idx)?;
    let picked = tape.reshape(picked, &[sets.len(), k])?;
    let per_video = tape.mean_axis(picked, 1)?;
    let rows = |label| {
        sets.iter()
            .enumerate()
            .filter(move |(_, s)| s.label == label)
            .map(|(i, _)| i)
    };
    let abn = tape.gather(per_video, rows(Label::Abnormal).collect())?;
    let nor = tape.gather(per_video, rows(Label::Normal).collect())?;
    let abn = tape.mean(abn);
    let nor = tape.mean(nor);
    let gap = tape.sub(abn, nor)?;
    let neg = tape.scale(gap, -1.0);
    let slack = tape.add_scalar(neg, margin);
    Ok(tape.relu(slack))
}

/// Baseline objective: the global magnitude hinge plus the top-k cross-entropy.
pub fn rtfm_baseline_loss(
    output: &ModelOutput,
    labels: &[Label],
    k: usize,
    margin: f64,
) -> Result<f64> {
    let (hinge, sce) = rtfm_parts(output, labels, k, margin)?;
    Ok(hinge + sce)
}

/// `(magnitude hinge, cross-entropy)` parts of [`rtfm_baseline_loss`].
pub fn rtfm_parts(
    output: &ModelOutput,
    labels: &[Label],
    k: usize,
    margin: f64,
) -> Result<(f64, f64)> {
    let sets = magnitude_sets(&output.clip_magnitudes, labels, k)?;
    let clips = output.clip_scores.shape()[1];
    let mut tape = Tape::new();
    let mags = tape.constant(output.clip_magnitudes.clone());
    let scores = tape.constant(output.clip_scores.clone());
    let hinge = rtfm_term(&mut tape, mags, &sets, clips, margin)?;
    let sce = sce_term(&mut tape, scores, &sets, clips)?;
    Ok((tape.value(hinge).item(), tape.value(sce).item()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_sce: f64,
    pub l_ts: f64,
    pub l_sp: f64,
    /// Magnitude term of the active variant (MC loss or the baseline hinge).
    pub l_mc: f64,
    pub total: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pairs: Vec<McPair>,
}

impl LossBreakdown {
    pub fn recombine(&self, config: &LossConfig) -> f64 {
        self.l_sce
            + config.lambda_ts * self.l_ts
            + config.lambda_sp * self.l_sp
            + config.lambda_mc * self.l_mc
    }

    pub fn identity_error(&self, config: &LossConfig) -> f64 {
        (self.total - self.recombine(config)).abs()
    }
}

/// Records `l_sce + lambda_ts l_ts + lambda_sp l_sp + lambda_mc l_mc`.
pub fn total_loss(
    tape: &mut Tape,
    output: &ModelVars,
    labels: &[Label],
    config: &LossConfig,
) -> Result<(Var, LossBreakdown)> {
    let mags_value = tape.value(output.magnitudes).clone();
    let sets = magnitude_sets(&mags_value, labels, config.topk)?;
    let clips = mags_value.shape()[1];

    let l_sce = sce_term(tape, output.scores, &sets, clips)?;
    let (l_ts, l_sp) = smoothness_sparsity_terms(tape, output.scores, labels)?;
    let (l_mc, pairs) = match config.variant {
        LossVariant::Mc => {
            let pairs = mc_pairs(&sets, config.literal_eq9)?;
            let k = config.topk;
            let indices: Vec<Vec<usize>> = sets.iter().map(|s| s.indices.clone()).collect();
            let term = mc_term(
                tape,
                output.magnitudes,
                &pairs,
                config.margin,
                config.literal_eq9,
                |video, slot| video * clips + indices[video][slot],
            )?;
            debug_assert!(indices.iter().all(|i| i.len() == k));
            (Some(term), pairs)
        }
        LossVariant::Rtfm => (
            Some(rtfm_term(
                tape,
                output.magnitudes,
                &sets,
                clips,
                config.margin,
            )?),
            Vec::new(),
        ),
        LossVariant::SceOnly => (None, Vec::new()),
    };

    let mut parts = vec![l_sce];
    for (var, weight) in [
        (Some(l_ts), config.lambda_ts),
        (Some(l_sp), config.lambda_sp),
        (l_mc, config.lambda_mc),
    ] {
        if let Some(v) = var {
            parts.push(tape.scale(v, weight));
        }
    }
    let total = sum_vars(tape, &parts)?;

    let item = |v: Option<Var>| v.map_or(0.0, |v| tape.value(v).item());
    let breakdown = LossBreakdown {
        l_sce: item(Some(l_sce)),
        l_ts: item(Some(l_ts)),
        l_sp: item(Some(l_sp)),
        l_mc: item(l_mc),
        total: item(Some(total)),
        pairs,
    };
    debug_assert!(
        breakdown.identity_error(config) <= 1e-12 * breakdown.total.abs().max(1.0),
        "loss decomposition identity violated: {breakdown:?}"
    );
    Ok((total, breakdown))
}

/// Value-only [`total_loss`] for a finished forward pass.
pub fn total_loss_values(
    output: &ModelOutput,
    labels: &[Label],
    config: &LossConfig,
) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    let vars = ModelVars {
        scores: tape.constant(output.clip_scores.clone()),
        magnitudes: tape.constant(output.clip_magnitudes.clone()),
        features: tape.constant(output.features.clone()),
    };
    Ok(total_loss(&mut tape, &vars, labels, config)?.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Abnormal, Normal};

    fn set(video: usize, label: Label, mags: &[f64]) -> MagnitudeSet {
        MagnitudeSet {
            video,
            label,
            magnitudes: mags.to_vec(),
            indices: (0..mags.len()).collect(),
        }
    }

    fn output(scores: Vec<f64>, mags: Vec<f64>, b: usize, t: usize) -> ModelOutput {
        ModelOutput {
            clip_scores: Tensor::new(&[b, t], scores).unwrap(),
            clip_magnitudes: Tensor::new(&[b, t], mags).unwrap(),
            features: Tensor::zeros(&[b, t, 1, 1]),
        }
    }

    #[test]
    fn mc_satisfied_and_all_equal() {
        for margin in [1.0, 10.0, 100.0] {
            let sat = [
                set(0, Normal, &[2.0, 2.0]),
                set(1, Normal, &[2.0, 2.0]),
                set(2, Abnormal, &[2.0 + margin, 2.0 + margin]),
                set(3, Abnormal, &[2.0 + margin, 2.0 + margin]),
            ];
            assert_eq!(mc_loss(&sat, margin).unwrap(), 0.0);
            let eq = [
                set(0, Normal, &[5.0, 5.0]),
                set(1, Abnormal, &[5.0, 5.0]),
                set(2, Normal, &[5.0, 5.0]),
                set(3, Abnormal, &[5.0, 5.0]),
            ];
            assert_eq!(mc_loss(&eq, margin).unwrap(), margin);
        }
    }

    #[test]
    fn mc_rejects_unbalanced() {
        let sets = [
            set(0, Normal, &[1.0]),
            set(1, Normal, &[1.0]),
            set(2, Abnormal, &[1.0]),
        ];
        assert!(matches!(mc_loss(&sets, 1.0), Err(Error::Argument(_))));
    }

    #[test]
    fn mc_hand_table() {
        // Normal pair: max |.| over {3,1}x{2,0} = |3-0| = 3.
        // Abnormal pair: max over {9,8}x{6,4} = |9-4| = 5.
        // Cross hinges (margin 100), min distances:
        //   (0,2): {3,1}x{9,8} -> 5;  (0,3): {3,1}x{6,4} -> 1
        //   (1,2): {2,0}x{9,8} -> 6;  (1,3): {2,0}x{6,4} -> 2
        let sets = [
            set(0, Normal, &[3.0, 1.0]),
            set(1, Normal, &[2.0, 0.0]),
            set(2, Abnormal, &[9.0, 8.0]),
            set(3, Abnormal, &[6.0, 4.0]),
        ];
        let expect = 3.0 + 5.0 + (95.0 + 99.0 + 94.0 + 98.0) / 4.0;
        assert!((mc_loss(&sets, 100.0).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn literal_mode_uses_signed_distances() {
        let sets = [set(0, Normal, &[3.0, 1.0]), set(1, Abnormal, &[9.0, 8.0])];
        // Cross: max signed (n - a) = 3 - 8 = -5, hinge = 10 - (-5) = 15.
        assert_eq!(mc_loss_with(&sets, 10.0, true).unwrap(), 15.0);
        assert_eq!(mc_loss_with(&sets, 10.0, false).unwrap(), 5.0);
    }

    #[test]
    fn sce_cases() {
        let out = output(vec![0.5; 4], vec![1.0, 2.0, 3.0, 4.0], 2, 2);
        for labels in [[Normal, Abnormal], [Abnormal, Abnormal]] {
            assert!((sce_loss(&out, &labels, 1).unwrap() - 2f64.ln()).abs() < 1e-15);
        }
        let hi = 1.0 - SCE_CLAMP;
        let out = output(vec![SCE_CLAMP, SCE_CLAMP, hi, hi], vec![0.0; 4], 2, 2);
        assert!(sce_loss(&out, &[Normal, Abnormal], 2).unwrap() <= 1e-6);
    }

    #[test]
    fn sce_selects_by_magnitude() {
        // Video 0 (normal): top-1 magnitude at clip 2 -> score 0.2.
        // Video 1 (abnormal): top-1 magnitude at clip 0 -> score 0.9.
        let out = output(
            vec![0.8, 0.7, 0.2, 0.9, 0.1, 0.3],
            vec![1.0, 2.0, 5.0, 7.0, 3.0, 1.0],
            2,
            3,
        );
        let expect = (-(0.8f64).ln() - 0.9f64.ln()) / 2.0;
        assert!((sce_loss(&out, &[Normal, Abnormal], 1).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn smoothness_sparsity_cases() {
        let s = Tensor::new(&[2, 4], vec![0.3, 0.3, 0.3, 0.3, 0.9, 0.9, 0.9, 0.9]).unwrap();
        let (ts, sp) = smoothness_sparsity(&s, &[Abnormal, Normal]).unwrap();
        assert!((ts - 1.2).abs() < 1e-15);
        assert_eq!(sp, 0.0);
        let alt = Tensor::new(&[1, 6], vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]).unwrap();
        let (ts, sp) = smoothness_sparsity(&alt, &[Abnormal]).unwrap();
        assert_eq!((ts, sp), (3.0, 5.0));
        let (ts, sp) = smoothness_sparsity(&alt, &[Normal]).unwrap();
        assert_eq!((ts, sp), (0.0, 0.0));
    }

    #[test]
    fn rtfm_cases() {
        // top-1 means: normal 2.0, abnormal 13.0 -> gap 11.
        let out = output(vec![0.5; 4], vec![2.0, 1.0, 13.0, 4.0], 2, 2);
        let (hinge, sce) = rtfm_parts(&out, &[Normal, Abnormal], 1, 10.0).unwrap();
        assert_eq!(hinge, 0.0);
        assert!((sce - 2f64.ln()).abs() < 1e-15);
        let (hinge, _) = rtfm_parts(&out, &[Normal, Abnormal], 1, 20.0).unwrap();
        assert_eq!(hinge, 9.0);
        let flat = output(vec![0.5; 4], vec![3.0; 4], 2, 2);
        assert_eq!(
            rtfm_parts(&flat, &[Normal, Abnormal], 2, 7.0).unwrap().0,
            7.0
        );
        assert!(
            (rtfm_baseline_loss(&flat, &[Normal, Abnormal], 2, 7.0).unwrap() - 7.0 - 2f64.ln())
                .abs()
                < 1e-12
        );
    }

    #[test]
    fn zero_weights_leave_sce() {
        let out = output(vec![0.2, 0.6, 0.4, 0.7], vec![1.0, 3.0, 2.0, 5.0], 2, 2);
        let labels = [Normal, Abnormal];
        let config = LossConfig {
            lambda_ts: 0.0,
            lambda_sp: 0.0,
            lambda_mc: 0.0,
            topk: 1,
            ..LossConfig::default()
        };
        let b = total_loss_values(&out, &labels, &config).unwrap();
        assert_eq!(b.total, b.l_sce);
        assert_eq!(b.l_sce, sce_loss(&out, &labels, 1).unwrap());
    }

    #[test]
    fn default_weights() {
        let c = LossConfig::default();
        assert_eq!((c.lambda_ts, c.lambda_sp, c.lambda_mc), (1.0, 1.0, 0.001));
        assert_eq!(c.margin, 100.0);
    }

    #[test]
    fn variants_parse() {
        assert_eq!("mc".parse::<LossVariant>().unwrap(), LossVariant::Mc);
        assert_eq!("RTFM".parse::<LossVariant>().unwrap(), LossVariant::Rtfm);
        assert_eq!("sce".parse::<LossVariant>().unwrap(), LossVariant::SceOnly);
        assert!("hinge".parse::<LossVariant>().is_err());
        for v in [LossVariant::Mc, LossVariant::Rtfm, LossVariant::SceOnly] {
            assert_eq!(serde_json::to_string(&v).unwrap(), format!("\"{v}\""));
        }
    }
}
