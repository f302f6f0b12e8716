//! Synthetic clip features where feature magnitude depends on the scene as
//! well as on the presence of an anomaly.
//!
//! Each crop row of a normal snippet is `base * u_scene + noise`, with `u_scene`
//! a fixed unit direction per scene and noise isotropic Gaussian whose
//! expected norm is `noise_scale`. Snippets inside an abnormal video's
//! anomaly window add `anomaly_boost * d`, with `d` a unit direction shared by
//! all scenes unless overridden.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::io::{write_features, write_mask, DatasetManifest, Dims, Label, ManifestEntry};
use crate::rng::{self, Purpose};
use crate::tensor::Tensor;

/// Frames represented by one snippet.
pub const FRAMES_PER_SNIPPET: usize = 16;

/// Video counts for one split: `[normal, abnormal]`.
pub type SplitCounts = [usize; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub name: String,
    pub base_magnitude: f64,
    pub noise_scale: f64,
    pub anomaly_boost: f64,
    /// Defaults to the shared, seed-derived anomaly direction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anomaly_direction: Option<Vec<f64>>,
    pub train: SplitCounts,
    pub test: SplitCounts,
    pub snippets_per_video: usize,
    /// Range of the anomaly window length as a fraction of the video.
    pub anomaly_window: [f64; 2],
}

impl SceneSpec {
    pub fn validate(&self, channels: usize) -> Result<()> {
        let bad = |detail: String| Err(Error::Config(format!("scene {:?}: {detail}", self.name)));
        if !(self.base_magnitude > 0.0) {
            return bad(format!(
                "base magnitude must be positive, got {}",
                self.base_magnitude
            ));
        }
        if self.noise_scale < 0.0 || self.anomaly_boost < 0.0 {
            return bad("noise scale and anomaly boost must be non-negative".into());
        }
        let [lo, hi] = self.anomaly_window;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return bad(format!("anomaly window {lo}..{hi} not within [0, 1]"));
        }
        if self.snippets_per_video == 0 {
            return bad("videos need at least one snippet".into());
        }
        if let Some(d) = &self.anomaly_direction {
            if d.len() != channels {
                return bad(format!(
                    "anomaly direction has {} entries, expected {channels}",
                    d.len()
                ));
            }
            if normalized(d.clone()).is_none() {
                return bad("anomaly direction must be non-zero".into());
            }
        }
        Ok(())
    }
}

/// A named scenario: scenes plus the dims and clip count it is meant for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub name: String,
    pub dims: Dims,
    /// Suggested `T` for training on this data.
    pub clips: usize,
    pub scenes: Vec<SceneSpec>,
}

pub const PRESETS: [&str; 3] = ["fig2", "balanced", "micro"];

#[allow(clippy::too_many_arguments)]
fn scene(
    name: &str,
    base: f64,
    boost: f64,
    noise: f64,
    train: SplitCounts,
    test: SplitCounts,
    snippets: usize,
    window: [f64; 2],
) -> SceneSpec {
    SceneSpec {
        name: name.into(),
        base_magnitude: base,
        noise_scale: noise,
        anomaly_boost: boost,
        anomaly_direction: None,
        train,
        test,
        snippets_per_video: snippets,
        anomaly_window: window,
    }
}

/// Looks up a named scenario.
///
/// * `fig2`: a high-movement scene A (base 60, normal only) next to scene B
///   (base 20) whose anomalies add a boost of 15. Every scene-A magnitude
///   exceeds every scene-B magnitude, anomalies included.
/// * `balanced`: two scenes with equal base magnitude, anomalies in both.
/// * `micro`: tiny dims for gradient checks.
pub fn preset(name: &str) -> Result<Preset> {
    // Windows cover at least a quarter of the video, so with T=16 an anomaly
    // spans four or more clips and a top-3 selection can be fully abnormal.
    let window = [0.25, 0.5];
    let preset = match name {
        "fig2" => Preset {
            name: name.into(),
            dims: Dims {
                crops: 2,
                channels: 256,
            },
            clips: 16,
            scenes: vec![
                scene("A", 60.0, 0.0, 2.0, [10, 0], [5, 0], 32, window),
                scene("B", 20.0, 15.0, 2.0, [10, 20], [5, 10], 32, window),
            ],
        },
        "balanced" => Preset {
            name: name.into(),
            dims: Dims {
                crops: 2,
                channels: 256,
            },
            clips: 16,
            scenes: vec![
                scene("A", 20.0, 15.0, 2.0, [10, 10], [5, 5], 32, window),
                scene("B", 20.0, 15.0, 2.0, [10, 10], [5, 5], 32, window),
            ],
        },
        "micro" => Preset {
            name: name.into(),
            dims: Dims {
                crops: 2,
                channels: 64,
            },
            clips: 4,
            scenes: vec![scene("A", 4.0, 3.0, 0.5, [2, 2], [2, 2], 8, [0.25, 0.5])],
        },
        other => {
            return Err(Error::Argument(format!(
                "unknown preset {other:?}; expected one of {}",
                PRESETS.join(", ")
            )))
        }
    };
    Ok(preset)
}

fn normalized(mut v: Vec<f64>) -> Option<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Some(v)
}

fn random_unit<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if let Some(u) = normalized(v) {
            return u;
        }
    }
}

/// One generated video before it is written.
#[derive(Debug, Clone)]
pub struct SynthVideo {
    pub entry: ManifestEntry,
    pub snippets: Tensor,
    pub mask: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub train: Vec<SynthVideo>,
    pub test: Vec<SynthVideo>,
}

// Stream indices within the Synth purpose.
const DIRECTION_STREAM: u64 = 0;
const SCENE_STREAM_BASE: u64 = 1 << 32;

/// Generates every video in memory. Each video draws from its own stream, so
/// adding a scene never changes the videos of earlier scenes.
pub fn synthesize(scenes: &[SceneSpec], dims: Dims, seed: u64) -> Result<SynthDataset> {
    if scenes.is_empty() {
        return Err(Error::Config("at least one scene is required".into()));
    }
    let c = dims.channels;
    let p = dims.crops;
    if c == 0 || p == 0 {
        return Err(Error::Config(format!(
            "dims must be positive, got P={p}, C={c}"
        )));
    }
    let shared = random_unit(&mut rng::stream(seed, Purpose::Synth, DIRECTION_STREAM), c);
    let mut data = SynthDataset {
        train: Vec::new(),
        test: Vec::new(),
    };
    let mut next_stream = 1;
    for (si, spec) in scenes.iter().enumerate() {
        spec.validate(c)?;
        let base_dir = random_unit(
            &mut rng::stream(seed, Purpose::Synth, SCENE_STREAM_BASE + si as u64),
            c,
        );
        let anomaly_dir = match &spec.anomaly_direction {
            Some(d) => normalized(d.clone()).expect("validated"),
            None => shared.clone(),
        };
        let noise_sd = spec.noise_scale / (c as f64).sqrt();
        for (split, counts) in [("train", spec.train), ("test", spec.test)] {
            for (label, count) in [(Label::Normal, counts[0]), (Label::Abnormal, counts[1])] {
                for i in 0..count {
                    let mut r = rng::stream(seed, Purpose::Synth, next_stream);
                    next_stream += 1;
                    let n = spec.snippets_per_video;
                    let window = if label == Label::Abnormal {
                        let [lo, hi] = spec.anomaly_window;
                        let frac = lo + (hi - lo) * r.gen::<f64>();
                        let len = ((frac * n as f64).round() as usize).clamp(1, n);
                        let start = r.gen_range(0..=n - len);
                        start..start + len
                    } else {
                        0..0
                    };
                    let mut values = Vec::with_capacity(n * p * c);
                    for s in 0..n {
                        let boost = if window.contains(&s) {
                            spec.anomaly_boost
                        } else {
                            0.0
                        };
                        for _ in 0..p {
                            for ch in 0..c {
                                let noise: f64 = r.sample(StandardNormal);
                                values.push(
                                    spec.base_magnitude * base_dir[ch]
                                        + boost * anomaly_dir[ch]
                                        + noise_sd * noise,
                                );
                            }
                        }
                    }
                    let frame_count = n * FRAMES_PER_SNIPPET;
                    let mask: Vec<bool> = (0..frame_count)
                        .map(|f| window.contains(&(f / FRAMES_PER_SNIPPET)))
                        .collect();
                    let tag = match label {
                        Label::Normal => "n",
                        Label::Abnormal => "a",
                    };
                    let id = format!("{split}_{}_{tag}{i:03}", spec.name);
                    let video = SynthVideo {
                        entry: ManifestEntry {
                            path: format!("features/{id}.bin"),
                            mask_path: (split == "test").then(|| format!("masks/{id}.mask")),
                            id,
                            label,
                            frame_count,
                        },
                        snippets: Tensor::new(&[n, p, c], values)?,
                        mask,
                    };
                    match split {
                        "train" => data.train.push(video),
                        _ => data.test.push(video),
                    }
                }
            }
        }
    }
    Ok(data)
}

/// Writes `train.json` and `test.json` manifests with their feature and mask
/// files under `out_dir`. Test videos carry frame masks.
pub fn generate(
    scenes: &[SceneSpec],
    dims: Dims,
    seed: u64,
    out_dir: &Path,
) -> Result<[DatasetManifest; 2]> {
    let data = synthesize(scenes, dims, seed)?;
    for sub in ["features", "masks"] {
        let dir = out_dir.join(sub);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    }
    let mut manifests = Vec::new();
    for (split, videos) in [("train", &data.train), ("test", &data.test)] {
        let mut manifest = DatasetManifest::new(split, dims, out_dir);
        for video in videos {
            write_features(&out_dir.join(&video.entry.path), &video.snippets)?;
            if let Some(mask) = &video.entry.mask_path {
                write_mask(&out_dir.join(mask), &video.mask)?;
            }
            manifest.videos.push(video.entry.clone());
        }
        manifest.save(&out_dir.join(format!("{split}.json")))?;
        manifests.push(manifest);
    }
    Ok(manifests.try_into().expect("two splits"))
}

/// Generates a preset and records it as `synth.json` next to the manifests.
pub fn generate_preset(name: &str, seed: u64, out_dir: &Path) -> Result<Preset> {
    let preset = preset(name)?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    generate(&preset.scenes, preset.dims, seed, out_dir)?;
    let info = serde_json::json!({ "preset": preset, "seed": seed });
    let path = out_dir.join("synth.json");
    fs::write(&path, serde_json::to_string_pretty(&info)? + "\n").map_err(io_err(&path))?;
    Ok(preset)
}
