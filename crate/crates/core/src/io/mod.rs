//! On-disk formats: dataset manifests, feature and mask files, checkpoints,
//! plus clip segmentation and frame-level score expansion.

mod checkpoint;
mod features;
mod manifest;
mod segment;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointHeader, NamedBlob, CHECKPOINT_MAGIC,
};
pub use features::{
    read_feature_header, read_features, read_mask, write_features, write_mask, FEATURE_MAGIC,
};
pub use manifest::{load_manifest, DatasetManifest, Dims, ManifestEntry, MANIFEST_VERSION};
pub use segment::{expand_scores_to_frames, partition, segment_to_clips, ScoreSeries};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Video-level label. Serialized as 0 (normal) or 1 (abnormal).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Label {
    Normal,
    Abnormal,
}

impl Label {
    pub fn as_f64(self) -> f64 {
        match self {
            Label::Normal => 0.0,
            Label::Abnormal => 1.0,
        }
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(Label::Normal),
            1 => Ok(Label::Abnormal),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        match l {
            Label::Normal => 0,
            Label::Abnormal => 1,
        }
    }
}

/// One video's snippet features `[N, P, C]` and annotations.
#[derive(Debug, Clone)]
pub struct VideoRecord {
    pub id: String,
    pub label: Label,
    pub snippets: Tensor,
    pub frame_count: usize,
    /// Per-frame ground truth, `true` = abnormal. Evaluation splits only.
    pub frame_mask: Option<Vec<bool>>,
}

impl VideoRecord {
    pub fn new(
        id: impl Into<String>,
        label: Label,
        snippets: Tensor,
        frame_count: usize,
        frame_mask: Option<Vec<bool>>,
    ) -> Result<Self> {
        let id = id.into();
        if snippets.rank() != 3 || snippets.shape()[0] == 0 {
            return Err(Error::Data(format!(
                "{id}: snippets must be [N>=1, P, C], got {:?}",
                snippets.shape()
            )));
        }
        if let Some(mask) = &frame_mask {
            if mask.len() != frame_count {
                return Err(Error::Data(format!(
                    "{id}: mask has {} frames, expected {frame_count}",
                    mask.len()
                )));
            }
            if label == Label::Normal && mask.iter().any(|&m| m) {
                return Err(Error::Data(format!(
                    "{id}: normal video has abnormal frames"
                )));
            }
        }
        Ok(Self {
            id,
            label,
            snippets,
            frame_count,
            frame_mask,
        })
    }

    pub fn crops(&self) -> usize {
        self.snippets.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.snippets.shape()[2]
    }

    /// Ground truth per frame; all-normal when no mask is attached.
    pub fn frame_labels(&self) -> Vec<bool> {
        self.frame_mask
            .clone()
            .unwrap_or_else(|| vec![false; self.frame_count])
    }
}

/// Worker count for parallel loading and scoring, capped by `MGFN_THREADS`.
pub fn worker_threads() -> usize {
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    std::env::var("MGFN_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .map_or(available, |n| n.min(available.max(n)))
}

/// Maps `f` over `items` on up to [`worker_threads`] scoped threads,
/// preserving order.
pub fn parallel_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync,
{
    let workers = worker_threads().min(items.len()).max(1);
    if workers == 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| {
                let f = &f;
                scope.spawn(move || part.iter().map(f).collect::<Vec<U>>())
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_record_rejects_abnormal_mask() {
        let snippets = Tensor::zeros(&[2, 1, 4]);
        assert!(VideoRecord::new(
            "v",
            Label::Normal,
            snippets.clone(),
            3,
            Some(vec![false, true, false])
        )
        .is_err());
        assert!(VideoRecord::new(
            "v",
            Label::Abnormal,
            snippets.clone(),
            3,
            Some(vec![false, true, false])
        )
        .is_ok());
        assert!(VideoRecord::new("v", Label::Abnormal, snippets, 3, Some(vec![true])).is_err());
        assert!(VideoRecord::new("v", Label::Normal, Tensor::zeros(&[0, 1, 4]), 3, None).is_err());
    }

    #[test]
    fn parallel_map_preserves_order() {
        let xs: Vec<u32> = (0..37).collect();
        assert_eq!(
            parallel_map(&xs, |x| x * 2),
            xs.iter().map(|x| x * 2).collect::<Vec<_>>()
        );
    }

    #[test]
    fn label_serde() {
        assert_eq!(serde_json::to_string(&Label::Abnormal).unwrap(), "1");
        assert_eq!(serde_json::from_str::<Label>("0").unwrap(), Label::Normal);
        assert!(serde_json::from_str::<Label>("2").is_err());
    }
}
