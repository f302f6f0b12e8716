//! Class-balanced batch sampling, Adam with decoupled weight decay, the
//! step loop, periodic evaluation and the run directory.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::focus::SacConfig;
use crate::io::{
    expand_scores_to_frames, parallel_map, save_checkpoint, segment_to_clips, Checkpoint, Label,
    NamedBlob, ScoreSeries, VideoRecord,
};
use crate::losses::{total_loss, LossBreakdown, LossConfig, LossVariant};
use crate::metrics::{evaluate, EvalResult};
use crate::model::{ArchitectureDescriptor, BlockOrder, Model};
use crate::rng::{self, Purpose, GENERATOR};
use crate::synthgen;
use crate::tensor::{grad_check, GradCheckConfig, GradCheckReport, Tape, Tensor, TensorError, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Videos per batch `B`, half normal and half abnormal.
    pub batch_size: usize,
    /// Clips per video `T`.
    pub clips: usize,
    /// Crops per clip `P`.
    pub crops: usize,
    /// Top-k clips per video for the MIL losses.
    pub topk: usize,
    /// Feature amplification strength.
    pub alpha: f64,
    pub lambda_ts: f64,
    pub lambda_sp: f64,
    pub lambda_mc: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub margin: f64,
    pub steps: u64,
    /// Evaluate every this many steps; 0 evaluates only at the end.
    pub eval_every: u64,
    pub seed: u64,
    pub loss_variant: LossVariant,
    pub block_order: BlockOrder,
    /// Signed min/max distances in the magnitude-contrastive loss.
    pub literal_eq9: bool,
    /// Score-head dropout rate.
    pub dropout: f64,
    pub use_fam: bool,
    /// Divide attention logits by the square root of the key width.
    pub attention_scale: bool,
    /// Channel window of the self-attentional convolution.
    pub sac_window: usize,
    /// Sum over all channels instead of a local window.
    pub sac_full: bool,
    /// Divide the window sum by its width.
    pub sac_normalize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let loss = LossConfig::default();
        Self {
            batch_size: 16,
            clips: 32,
            crops: 10,
            topk: 3,
            alpha: 0.1,
            lambda_ts: loss.lambda_ts,
            lambda_sp: loss.lambda_sp,
            lambda_mc: loss.lambda_mc,
            lr: 0.001,
            weight_decay: 0.0005,
            margin: loss.margin,
            steps: 500,
            eval_every: 100,
            seed: 0,
            loss_variant: LossVariant::Mc,
            block_order: BlockOrder::Gf,
            literal_eq9: false,
            dropout: 0.7,
            use_fam: true,
            attention_scale: false,
            sac_window: SacConfig::default().window,
            sac_full: false,
            sac_normalize: false,
        }
    }
}

impl TrainConfig {
    /// Field names, in declaration order.
    pub fn field_names() -> Vec<String> {
        match serde_json::to_value(Self::default()) {
            Ok(serde_json::Value::Object(map)) => map.keys().cloned().collect(),
            _ => unreachable!("config serializes to an object"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size < 2 || !self.batch_size.is_multiple_of(2) {
            return bad(format!(
                "batch size must be even and at least 2, got {}",
                self.batch_size
            ));
        }
        if self.topk == 0 || self.topk > self.clips {
            return bad(format!(
                "top-k must be in 1..={}, got {}",
                self.clips, self.topk
            ));
        }
        if !(self.lr >= 0.0) || !(self.weight_decay >= 0.0) {
            return bad("learning rate and weight decay must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        for (name, v) in [
            ("lambda_ts", self.lambda_ts),
            ("lambda_sp", self.lambda_sp),
            ("lambda_mc", self.lambda_mc),
            ("margin", self.margin),
        ] {
            if !v.is_finite() || v < 0.0 {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        Ok(())
    }

    pub fn arch(&self, channels: usize) -> Result<ArchitectureDescriptor> {
        let mut arch =
            ArchitectureDescriptor::new(self.block_order, channels, self.clips, self.crops);
        arch.topk = self.topk;
        arch.alpha = self.alpha;
        arch.use_fam = self.use_fam;
        arch.attention_scale = self.attention_scale;
        arch.dropout = self.dropout;
        arch.sac = SacConfig {
            window: self.sac_window,
            full: self.sac_full,
            normalize: self.sac_normalize,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            lambda_ts: self.lambda_ts,
            lambda_sp: self.lambda_sp,
            lambda_mc: self.lambda_mc,
            margin: self.margin,
            topk: self.topk,
            variant: self.loss_variant,
            literal_eq9: self.literal_eq9,
        }
    }
}

/// Adam moments for every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One update: decoupled decay `p -= lr * wd * p`, then bias-corrected
    /// Adam on the decayed parameters.
    pub fn step(
        &mut self,
        params: &mut [Tensor],
        grads: &[&[f64]],
        lr: f64,
        weight_decay: f64,
    ) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::Argument(format!(
                "{} parameters, {} gradients, {} moment buffers",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.numel() != g.len() || p.numel() != m.len() {
                return Err(Error::Argument(
                    "gradient or moment shape does not match parameter".into(),
                ));
            }
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, param) in params.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, p) in param.data_mut().iter_mut().enumerate() {
                let g = grads[i][j];
                *p -= lr * weight_decay * *p;
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }

    /// Moments as checkpoint state blobs (`adam.m.<param>`, `adam.v.<param>`)
    /// plus `adam.t`.
    pub fn to_blobs(&self, names: &[String]) -> Vec<NamedBlob> {
        let mut blobs = vec![NamedBlob {
            name: "adam.t".into(),
            data: vec![self.t as f64],
        }];
        for (kind, buffers) in [("m", &self.m), ("v", &self.v)] {
            for (name, data) in names.iter().zip(buffers) {
                blobs.push(NamedBlob {
                    name: format!("adam.{kind}.{name}"),
                    data: data.clone(),
                });
            }
        }
        blobs
    }

    /// Restores moments written by [`AdamState::to_blobs`].
    pub fn from_checkpoint(
        checkpoint: &Checkpoint,
        params: &[Tensor],
        names: &[String],
    ) -> Result<Self> {
        let mut state = Self::new(params);
        let blob = |name: &str, len: usize| -> Result<&[f64]> {
            let b = checkpoint
                .state_blob(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing optimizer state {name:?}")))?;
            if b.data.len() != len {
                return Err(Error::Checkpoint(format!(
                    "optimizer state {name:?} has {} values, expected {len}",
                    b.data.len()
                )));
            }
            Ok(&b.data)
        };
        state.t = blob("adam.t", 1)?[0] as u64;
        for (i, (name, p)) in names.iter().zip(params).enumerate() {
            state.m[i] = blob(&format!("adam.m.{name}"), p.numel())?.to_vec();
            state.v[i] = blob(&format!("adam.v.{name}"), p.numel())?.to_vec();
        }
        Ok(state)
    }
}

/// Unquantized parameter copies (`exact.<param>`) so a resumed run continues
/// exactly where the saved one stopped.
fn exact_blobs(model: &Model) -> Vec<NamedBlob> {
    let store = model.params();
    store
        .names()
        .iter()
        .zip(store.tensors())
        .map(|(name, t)| NamedBlob {
            name: format!("exact.{name}"),
            data: t.data().to_vec(),
        })
        .collect()
}

fn resume_model(checkpoint: &Checkpoint, model: &mut Model) -> Result<()> {
    checkpoint.restore_into(model)?;
    let names = model.params().names().to_vec();
    let store = model.params_mut();
    for name in names {
        let Some(blob) = checkpoint.state_blob(&format!("exact.{name}")) else {
            continue;
        };
        let id = store.find(&name).expect("name comes from the store");
        let shape = store.get(id).shape().to_vec();
        let tensor = Tensor::new(&shape, blob.data.clone())
            .map_err(|e| Error::Checkpoint(format!("state of {name:?}: {e}")))?;
        store.set(id, tensor)?;
    }
    Ok(())
}

/// Draws `B/2` distinct normal videos then `B/2` distinct abnormal ones,
/// returning indices into `records`.
pub fn sample_batch<R: Rng>(
    records: &[VideoRecord],
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let half = batch_size / 2;
    let mut batch = Vec::with_capacity(batch_size);
    for label in [Label::Normal, Label::Abnormal] {
        let pool: Vec<usize> = (0..records.len())
            .filter(|&i| records[i].label == label)
            .collect();
        if pool.len() < half {
            return Err(Error::Data(format!(
                "need {half} {label:?} videos per batch, training set has {}",
                pool.len()
            )));
        }
        batch.extend(
            index::sample(rng, pool.len(), half)
                .into_iter()
                .map(|i| pool[i]),
        );
    }
    Ok(batch)
}

/// Stacks `[T, P, C]` clip tensors into one `[B, T, P, C]` batch.
fn stack(clips: &[&Tensor]) -> Result<Tensor> {
    let shape = clips[0].shape();
    let mut data = Vec::with_capacity(clips.len() * clips[0].numel());
    for c in clips {
        data.extend_from_slice(c.data());
    }
    let mut full = vec![clips.len()];
    full.extend_from_slice(shape);
    Ok(Tensor::new(&full, data)?)
}

fn check_record(model: &Model, record: &VideoRecord) -> Result<()> {
    let arch = model.arch();
    if record.crops() != arch.crops || record.channels() != arch.channels {
        return Err(Error::Inference(format!(
            "video {} has P={}, C={}; model expects P={}, C={}",
            record.id,
            record.crops(),
            record.channels(),
            arch.crops,
            arch.channels
        )));
    }
    Ok(())
}

/// Frame-level scores for one video.
pub fn infer_video(model: &Model, record: &VideoRecord) -> Result<ScoreSeries> {
    Ok(score_videos(model, std::slice::from_ref(record))?.remove(0))
}

const SCORE_CHUNK: usize = 32;

/// Scores videos in batched chunks, in input order.
pub fn score_videos(model: &Model, records: &[VideoRecord]) -> Result<Vec<ScoreSeries>> {
    for r in records {
        check_record(model, r)?;
    }
    let t = model.arch().clips;
    let chunks: Vec<&[VideoRecord]> = records.chunks(SCORE_CHUNK).collect();
    let scored = parallel_map(&chunks, |chunk| -> Result<Vec<ScoreSeries>> {
        let clips = chunk
            .iter()
            .map(|r| segment_to_clips(&r.snippets, t))
            .collect::<Result<Vec<_>>>()?;
        let batch = stack(&clips.iter().collect::<Vec<_>>())?;
        let out = model.forward(&batch)?;
        Ok(chunk
            .iter()
            .zip(out.clip_scores.data().chunks(t))
            .map(|(r, s)| ScoreSeries {
                id: r.id.clone(),
                scores: expand_scores_to_frames(s, r.frame_count),
            })
            .collect())
    });
    let mut series = Vec::with_capacity(records.len());
    for chunk in scored {
        series.extend(chunk?);
    }
    Ok(series)
}

/// Frame-level AUC and AP over all videos, with the scores used.
pub fn evaluate_model(
    model: &Model,
    records: &[VideoRecord],
) -> Result<(EvalResult, Vec<ScoreSeries>)> {
    let series = score_videos(model, records)?;
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (s, r) in series.iter().zip(records) {
        scores.extend_from_slice(&s.scores);
        labels.extend(r.frame_labels());
    }
    Ok((evaluate(&scores, &labels)?, series))
}

/// Writes `<dir>/<id>.csv` with `frame_index,score` lines.
pub fn write_score_csvs(dir: &Path, series: &[ScoreSeries]) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for s in series {
        let path = dir.join(format!("{}.csv", s.id));
        let mut out = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
        for (i, v) in s.scores.iter().enumerate() {
            writeln!(out, "{i},{v}").map_err(io_err(&path))?;
        }
        out.flush().map_err(io_err(&path))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub l_sce: f64,
    pub l_ts: f64,
    pub l_sp: f64,
    pub l_mc: f64,
    pub total: f64,
}

impl StepRecord {
    fn new(step: u64, b: &LossBreakdown) -> Self {
        Self {
            step,
            l_sce: b.l_sce,
            l_ts: b.l_ts,
            l_sp: b.l_sp,
            l_mc: b.l_mc,
            total: b.total,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: u64,
    pub auc: f64,
    pub ap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub architecture: String,
    pub generator: String,
    pub steps_run: u64,
    pub final_eval: Option<EvalResult>,
    pub best: Option<EvalRecord>,
    pub evals: Vec<EvalRecord>,
    pub notes: Vec<String>,
}

/// Run-level choices stated in every report.
pub const RUN_NOTES: [&str; 5] = [
    "weight decay is decoupled: p -= lr*wd*p before each Adam update",
    "same-category magnitude terms use the maximum-distance pair, cross-category terms the minimum-distance pair",
    "clip scores average crop features before the score head; sigmoid applied after averaging",
    "video-level cross-entropy uses the mean score of the top-k clips by feature magnitude",
    "checkpoint parameters are stored as f32; optimizer moments as f64",
];

/// Where and on what `train` runs.
pub struct TrainData<'a> {
    pub train: &'a [VideoRecord],
    /// Evaluation split with frame masks; skipped when `None`.
    pub eval: Option<&'a [VideoRecord]>,
    /// Continue from a checkpoint written by an earlier run with the same
    /// seed. Steps, batches and dropout masks pick up at its step.
    pub resume: Option<&'a Checkpoint>,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(io_err(path))
}

fn append_line(out: &mut impl Write, path: &Path, value: &impl Serialize) -> Result<()> {
    let line = serde_json::to_string(value)?;
    writeln!(out, "{line}").map_err(io_err(path))
}

/// Trains a model and writes the run directory:
///
/// ```text
/// config.json  steps.jsonl  eval.jsonl  summary.json
/// final.mgck   best.mgck    scores/<video>.csv
/// ```
pub fn train(config: &TrainConfig, data: TrainData<'_>, out_dir: &Path) -> Result<TrainReport> {
    config.validate()?;
    let first = data
        .train
        .first()
        .ok_or_else(|| Error::Data("training set is empty".into()))?;
    let channels = first.channels();
    for r in data.train.iter().chain(data.eval.unwrap_or_default()) {
        if r.crops() != config.crops || r.channels() != channels {
            return Err(Error::Config(format!(
                "video {} has P={}, C={}; run expects P={}, C={channels}",
                r.id,
                r.crops(),
                r.channels(),
                config.crops
            )));
        }
    }
    let arch = config.arch(channels)?;
    let loss_config = config.loss();
    let mut model = Model::new(arch.clone(), config.seed)?;
    let mut adam = AdamState::new(model.params().tensors());
    let mut start = 0;
    if let Some(ck) = data.resume {
        if ck.header.seed != config.seed || ck.header.loss != loss_config {
            return Err(Error::Config(
                "resume checkpoint was trained with a different seed or loss configuration".into(),
            ));
        }
        if ck.header.step > config.steps {
            return Err(Error::Config(format!(
                "resume checkpoint is at step {}, beyond steps={}",
                ck.header.step, config.steps
            )));
        }
        resume_model(ck, &mut model)?;
        adam = AdamState::from_checkpoint(ck, model.params().tensors(), model.params().names())?;
        start = ck.header.step;
    }

    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    write_json(
        &out_dir.join("config.json"),
        &serde_json::json!({
            "config": config,
            "architecture": arch,
            "architecture_summary": arch.describe(),
            "generator": GENERATOR,
            "notes": RUN_NOTES,
        }),
    )?;

    let clips: Vec<Tensor> =
        parallel_map(data.train, |r| segment_to_clips(&r.snippets, config.clips))
            .into_iter()
            .collect::<Result<_>>()?;
    // Fail on class imbalance before any step runs.
    sample_batch(
        data.train,
        config.batch_size,
        &mut rng::stream(config.seed, Purpose::Batch, 0),
    )?;

    let steps_path = out_dir.join("steps.jsonl");
    let eval_path = out_dir.join("eval.jsonl");
    let mut steps_log = BufWriter::new(File::create(&steps_path).map_err(io_err(&steps_path))?);
    let mut eval_log = BufWriter::new(File::create(&eval_path).map_err(io_err(&eval_path))?);

    let checkpoint = |model: &Model, adam: &AdamState, step: u64| {
        Checkpoint::from_model(
            model,
            loss_config.clone(),
            config.seed,
            step,
            adam.to_blobs(model.params().names())
                .into_iter()
                .chain(exact_blobs(model))
                .collect(),
        )
    };

    let mut evals = Vec::new();
    let mut best: Option<EvalRecord> = None;
    let mut last_eval = None;
    let mut run_eval =
        |model: &Model, adam: &AdamState, step: u64, log: &mut BufWriter<File>| -> Result<()> {
            let Some(records) = data.eval else {
                return Ok(());
            };
            let (result, series) = evaluate_model(model, records)?;
            let record = EvalRecord {
                step,
                auc: result.auc,
                ap: result.ap,
            };
            append_line(log, &eval_path, &record)?;
            if best.as_ref().is_none_or(|b| record.auc > b.auc) {
                best = Some(record.clone());
                save_checkpoint(&out_dir.join("best.mgck"), &checkpoint(model, adam, step))?;
            }
            evals.push(record);
            last_eval = Some((result, series));
            Ok(())
        };

    let labels: Vec<Label> = (0..config.batch_size)
        .map(|i| {
            if i < config.batch_size / 2 {
                Label::Normal
            } else {
                Label::Abnormal
            }
        })
        .collect();
    for step in start..config.steps {
        let batch_idx = sample_batch(
            data.train,
            config.batch_size,
            &mut rng::stream(config.seed, Purpose::Batch, step),
        )?;
        let batch = stack(&batch_idx.iter().map(|&i| &clips[i]).collect::<Vec<_>>())?;

        let mut tape = Tape::new();
        let vars = model.params().bind(&mut tape);
        let input = tape.constant(batch);
        let mut dropout = rng::stream(config.seed, Purpose::Dropout, step);
        let out = model.forward_vars(&mut tape, &vars, input, Some(&mut dropout))?;
        let (loss, breakdown) = total_loss(&mut tape, &out, &labels, &loss_config)?;
        let record = StepRecord::new(step, &breakdown);
        if !breakdown.total.is_finite() {
            steps_log.flush().map_err(io_err(&steps_path))?;
            return Err(Error::Numerical(format!(
                "non-finite loss at step {step}: {}",
                serde_json::to_string(&record)?
            )));
        }
        append_line(&mut steps_log, &steps_path, &record)?;
        tape.backward(loss)?;
        let grads: Vec<&[f64]> = vars
            .iter()
            .map(|&v| tape.grad(v).expect("parameters always receive a gradient"))
            .collect();
        if let Some(i) = grads.iter().position(|g| g.iter().any(|x| !x.is_finite())) {
            return Err(Error::Numerical(format!(
                "non-finite gradient for {} at step {step}",
                model.params().names()[i]
            )));
        }
        adam.step(
            model.params_mut().tensors_mut(),
            &grads,
            config.lr,
            config.weight_decay,
        )?;

        let done = step + 1;
        if config.eval_every > 0 && done % config.eval_every == 0 && done < config.steps {
            run_eval(&model, &adam, done, &mut eval_log)?;
        }
    }
    run_eval(&model, &adam, config.steps, &mut eval_log)?;
    steps_log.flush().map_err(io_err(&steps_path))?;
    eval_log.flush().map_err(io_err(&eval_path))?;

    save_checkpoint(
        &out_dir.join("final.mgck"),
        &checkpoint(&model, &adam, config.steps),
    )?;
    let final_eval = match last_eval {
        Some((result, series)) => {
            write_score_csvs(&out_dir.join("scores"), &series)?;
            Some(result)
        }
        None => None,
    };
    let report = TrainReport {
        config: config.clone(),
        architecture: arch.describe(),
        generator: GENERATOR.into(),
        steps_run: config.steps,
        final_eval,
        best,
        evals,
        notes: RUN_NOTES.iter().map(|s| s.to_string()).collect(),
    };
    write_json(&out_dir.join("summary.json"), &report)?;
    Ok(report)
}

/// Paths of the files `train` writes.
pub fn run_files(out_dir: &Path) -> Vec<PathBuf> {
    [
        "config.json",
        "steps.jsonl",
        "eval.jsonl",
        "summary.json",
        "final.mgck",
        "best.mgck",
    ]
    .iter()
    .map(|f| out_dir.join(f))
    .collect()
}

/// Finite-difference check of the full training objective on the `micro`
/// fixture (`B=2`, `T=4`, `P=2`, `C=64`): one normal and one abnormal video,
/// dropout active with a fixed mask.
pub fn micro_gradcheck(
    order: BlockOrder,
    variant: LossVariant,
    seed: u64,
) -> Result<GradCheckReport> {
    let preset = synthgen::preset("micro")?;
    let data = synthgen::synthesize(&preset.scenes, preset.dims, seed)?;
    let pick = |label| {
        data.train
            .iter()
            .find(|v| v.entry.label == label)
            .expect("micro preset has both classes")
    };
    let clips = [
        segment_to_clips(&pick(Label::Normal).snippets, preset.clips)?,
        segment_to_clips(&pick(Label::Abnormal).snippets, preset.clips)?,
    ];
    let batch = stack(&[&clips[0], &clips[1]])?;
    let config = TrainConfig {
        batch_size: 2,
        clips: preset.clips,
        crops: preset.dims.crops,
        loss_variant: variant,
        block_order: order,
        seed,
        ..TrainConfig::default()
    };
    let model = Model::new(config.arch(preset.dims.channels)?, seed)?;
    let loss = config.loss();
    let labels = [Label::Normal, Label::Abnormal];
    let objective = |tape: &mut Tape, vars: &[Var]| -> std::result::Result<Var, TensorError> {
        let input = tape.constant(batch.clone());
        let mut dropout = rng::stream(seed, Purpose::Dropout, 0);
        let out = model
            .forward_vars(tape, vars, input, Some(&mut dropout))
            .map_err(|e| TensorError::Evaluation(e.to_string()))?;
        let (total, _) = total_loss(tape, &out, &labels, &loss)
            .map_err(|e| TensorError::Evaluation(e.to_string()))?;
        Ok(total)
    };
    Ok(grad_check(
        objective,
        model.params().tensors(),
        GradCheckConfig::default(),
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_hand_oracle() {
        let mut p = vec![Tensor::scalar(1.0)];
        let mut s = AdamState::new(&p);
        s.step(&mut p, &[&[0.5]], 0.1, 0.0).unwrap();
        // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
        let expected = 1.0 - 0.1 * 0.5 / (0.5 + 1e-8);
        assert!((p[0].item() - expected).abs() < 1e-15);
        s.step(&mut p, &[&[-0.25]], 0.1, 0.0).unwrap();
        let m = 0.9 * 0.05 + 0.1 * -0.25;
        let v = 0.999 * 0.00025 + 0.001 * 0.0625;
        let step = 0.1 * (m / (1.0 - 0.81)) / ((v / (1.0 - 0.999f64.powi(2))).sqrt() + 1e-8);
        assert!((p[0].item() - (expected - step)).abs() < 1e-15);
    }

    #[test]
    fn adam_decay_and_identity() {
        let mut p = vec![Tensor::new(&[2], vec![2.0, -4.0]).unwrap()];
        let mut s = AdamState::new(&p);
        for _ in 0..3 {
            s.step(&mut p, &[&[0.0, 0.0]], 0.01, 0.5).unwrap();
        }
        let f = (1.0f64 - 0.005).powi(3);
        assert!((p[0].data()[0] - 2.0 * f).abs() < 1e-15);
        assert!((p[0].data()[1] + 4.0 * f).abs() < 1e-15);

        let before = p.clone();
        s.step(&mut p, &[&[0.0, 0.0]], 0.01, 0.0).unwrap();
        assert_eq!(p, before);
        s.step(&mut p, &[&[3.0, -1.0]], 0.0, 0.3).unwrap();
        assert_eq!(p, before);
        assert!(s.step(&mut p, &[&[1.0]], 0.1, 0.0).is_err());
    }

    #[test]
    fn config_validation_and_fields() {
        assert!(TrainConfig::default().validate().is_ok());
        let odd = TrainConfig {
            batch_size: 5,
            ..TrainConfig::default()
        };
        assert!(odd.validate().is_err());
        let big_k = TrainConfig {
            topk: 40,
            ..TrainConfig::default()
        };
        assert!(big_k.validate().is_err());
        let names = TrainConfig::field_names();
        assert!(
            names.contains(&"weight_decay".to_string())
                && names.contains(&"block_order".to_string())
        );
    }
}
