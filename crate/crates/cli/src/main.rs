use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mgfn::io::{load_checkpoint, load_manifest, DatasetManifest, VideoRecord};
use mgfn::losses::LossVariant;
use mgfn::model::BlockOrder;
use mgfn::synthgen;
use mgfn::trainer::{self, TrainConfig, TrainData};
use mgfn::Error;

/// Weakly supervised video anomaly scoring on precomputed clip features.
#[derive(Debug, Parser)]
#[command(name = "mgfn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth {
        /// Scenario name: fig2, balanced or micro.
        #[arg(long)]
        preset: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train on `<data>/train.json`, evaluating on `<data>/test.json` if present.
    Train(TrainArgs),
    /// Print frame-level AUC and AP of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory (uses test.json) or a manifest file.
        #[arg(long)]
        data: PathBuf,
    },
    /// Write per-video frame scores as CSV.
    Score {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory (uses test.json) or a manifest file.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of the training objective on the micro fixture.
    Gradcheck {
        /// Block order to check, or "all".
        #[arg(long, default_value = "gf")]
        arch: String,
        /// Loss variant to check.
        #[arg(long, default_value = "mc")]
        loss: LossVariant,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Dataset directory with train.json (and optionally test.json).
    #[arg(long)]
    data: PathBuf,
    /// Run directory.
    #[arg(long)]
    out: PathBuf,
    /// Continue from a checkpoint of a run with the same seed and loss settings.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// batch_size: videos per batch, half normal and half abnormal.
    #[arg(long)]
    batch_size: Option<usize>,
    /// clips: clips per video T [default: from synth.json, else 32].
    #[arg(long)]
    clips: Option<usize>,
    /// crops: crops per clip P [default: from the manifest].
    #[arg(long)]
    crops: Option<usize>,
    /// topk: top-k clips per video.
    #[arg(long)]
    topk: Option<usize>,
    /// alpha: feature amplification strength.
    #[arg(long)]
    alpha: Option<f64>,
    /// lambda_ts: weight of the summed abnormal scores.
    #[arg(long)]
    lambda_ts: Option<f64>,
    /// lambda_sp: weight of the squared adjacent-score differences.
    #[arg(long)]
    lambda_sp: Option<f64>,
    /// lambda_mc: weight of the magnitude term.
    #[arg(long)]
    lambda_mc: Option<f64>,
    /// lr: Adam learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// weight_decay: decoupled weight decay.
    #[arg(long)]
    weight_decay: Option<f64>,
    /// margin: hinge margin of the magnitude term.
    #[arg(long)]
    margin: Option<f64>,
    /// steps: optimizer steps.
    #[arg(long)]
    steps: Option<u64>,
    /// eval_every: evaluate every N steps (0 = only at the end).
    #[arg(long)]
    eval_every: Option<u64>,
    /// seed: run seed for init, batches and dropout.
    #[arg(long)]
    seed: Option<u64>,
    /// loss_variant: mc, rtfm or sce.
    #[arg(long = "loss", visible_alias = "loss-variant")]
    loss_variant: Option<LossVariant>,
    /// block_order: gf, ff, fg or gf-fusion.
    #[arg(long = "arch", visible_alias = "block-order")]
    block_order: Option<BlockOrder>,
    /// literal_eq9: signed min/max distances in the magnitude-contrastive loss.
    #[arg(long)]
    literal_eq9: bool,
    /// dropout: score-head dropout rate.
    #[arg(long)]
    dropout: Option<f64>,
    /// use_fam: enable feature amplification.
    #[arg(long)]
    use_fam: Option<bool>,
    /// attention_scale: divide attention logits by sqrt of the key width.
    #[arg(long)]
    attention_scale: bool,
    /// sac_window: channel window of the self-attentional convolution.
    #[arg(long)]
    sac_window: Option<usize>,
    /// sac_full: sum over all channels instead of a local window.
    #[arg(long)]
    sac_full: bool,
    /// sac_normalize: divide the window sum by its width.
    #[arg(long)]
    sac_normalize: bool,
}

impl TrainArgs {
    fn config(&self, manifest: &DatasetManifest) -> mgfn::Result<TrainConfig> {
        let d = TrainConfig::default();
        Ok(TrainConfig {
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            clips: match self.clips {
                Some(t) => t,
                None => preset_clips(&self.data)?.unwrap_or(d.clips),
            },
            crops: self.crops.unwrap_or(manifest.dims.crops),
            topk: self.topk.unwrap_or(d.topk),
            alpha: self.alpha.unwrap_or(d.alpha),
            lambda_ts: self.lambda_ts.unwrap_or(d.lambda_ts),
            lambda_sp: self.lambda_sp.unwrap_or(d.lambda_sp),
            lambda_mc: self.lambda_mc.unwrap_or(d.lambda_mc),
            lr: self.lr.unwrap_or(d.lr),
            weight_decay: self.weight_decay.unwrap_or(d.weight_decay),
            margin: self.margin.unwrap_or(d.margin),
            steps: self.steps.unwrap_or(d.steps),
            eval_every: self.eval_every.unwrap_or(d.eval_every),
            seed: self.seed.unwrap_or(d.seed),
            loss_variant: self.loss_variant.unwrap_or(d.loss_variant),
            block_order: self.block_order.unwrap_or(d.block_order),
            literal_eq9: self.literal_eq9,
            dropout: self.dropout.unwrap_or(d.dropout),
            use_fam: self.use_fam.unwrap_or(d.use_fam),
            attention_scale: self.attention_scale,
            sac_window: self.sac_window.unwrap_or(d.sac_window),
            sac_full: self.sac_full,
            sac_normalize: self.sac_normalize,
        })
    }
}

/// `T` suggested by the generator, if the data came from `synth`.
fn preset_clips(dir: &Path) -> mgfn::Result<Option<usize>> {
    let path = dir.join("synth.json");
    if !path.is_file() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|source| Error::Io {
        path: path.clone(),
        source,
    })?;
    let info: serde_json::Value = serde_json::from_str(&text)?;
    Ok(info["preset"]["clips"].as_u64().map(|t| t as usize))
}

fn manifest_path(data: &Path, split: &str) -> PathBuf {
    if data.is_dir() {
        data.join(format!("{split}.json"))
    } else {
        data.to_path_buf()
    }
}

fn load(path: &Path) -> mgfn::Result<Vec<VideoRecord>> {
    load_manifest(path)?.load_all()
}

fn run(cli: Cli) -> mgfn::Result<()> {
    match cli.command {
        Command::Synth { preset, out, seed } => {
            let p = synthgen::generate_preset(&preset, seed, &out)?;
            let videos: usize = p
                .scenes
                .iter()
                .map(|s| s.train.iter().chain(&s.test).sum::<usize>())
                .sum();
            println!(
                "wrote preset {} ({videos} videos, P={}, C={}, suggested T={}) to {}",
                p.name,
                p.dims.crops,
                p.dims.channels,
                p.clips,
                out.display()
            );
        }
        Command::Train(args) => {
            let manifest = load_manifest(&manifest_path(&args.data, "train"))?;
            let config = args.config(&manifest)?;
            let train = manifest.load_all()?;
            let test_path = args.data.join("test.json");
            let eval = if test_path.is_file() {
                Some(load(&test_path)?)
            } else {
                None
            };
            let resume = args.resume.as_deref().map(load_checkpoint).transpose()?;
            let report = trainer::train(
                &config,
                TrainData {
                    train: &train,
                    eval: eval.as_deref(),
                    resume: resume.as_ref(),
                },
                &args.out,
            )?;
            println!("{}", report.architecture);
            match report.final_eval {
                Some(r) => println!("steps {} AUC {:.6} AP {:.6}", report.steps_run, r.auc, r.ap),
                None => println!("steps {}", report.steps_run),
            }
        }
        Command::Eval { checkpoint, data } => {
            let model = load_checkpoint(&checkpoint)?.to_model()?;
            let records = load(&manifest_path(&data, "test"))?;
            let (result, _) = trainer::evaluate_model(&model, &records)?;
            println!("AUC {:.6}", result.auc);
            println!("AP {:.6}", result.ap);
        }
        Command::Score {
            checkpoint,
            data,
            out,
        } => {
            let ck = load_checkpoint(&checkpoint)?;
            let model = ck.to_model()?;
            let records = load(&manifest_path(&data, "test"))?;
            let series = trainer::score_videos(&model, &records)?;
            trainer::write_score_csvs(&out, &series)?;
            let has_masks = records.iter().any(|r| r.frame_mask.is_some());
            let metrics = if has_masks {
                trainer::evaluate_model(&model, &records).ok().map(|r| r.0)
            } else {
                None
            };
            let summary = serde_json::json!({
                "checkpoint": checkpoint,
                "architecture": ck.header.arch,
                "seed": ck.header.seed,
                "step": ck.header.step,
                "videos": series.len(),
                "metrics": metrics,
            });
            let path = out.join("summary.json");
            fs::write(&path, serde_json::to_string_pretty(&summary)? + "\n")
                .map_err(|source| Error::Io { path, source })?;
            println!("wrote {} score files to {}", series.len(), out.display());
        }
        Command::Gradcheck { arch, loss, seed } => {
            let orders: Vec<BlockOrder> = if arch.eq_ignore_ascii_case("all") {
                BlockOrder::ALL.to_vec()
            } else {
                vec![arch.parse()?]
            };
            let mut worst: f64 = 0.0;
            for order in orders {
                let report = trainer::micro_gradcheck(order, loss, seed)?;
                println!(
                    "{order} {loss}: max relative error {:.3e}",
                    report.max_rel_error()
                );
                worst = worst.max(report.max_rel_error());
            }
            let tol = mgfn::tensor::GradCheckConfig::default().tol;
            if !(worst < tol) {
                return Err(Error::Numerical(format!(
                    "gradient check failed: {worst:.3e} >= {tol:e}"
                )));
            }
        }
    }
    Ok(())
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Numerical(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
