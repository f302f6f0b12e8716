use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Splits `n` items into `groups` contiguous ranges; range `t` is
/// `floor(n*t/groups) .. floor(n*(t+1)/groups)`. Ranges are empty when
/// `n < groups`.
pub fn partition(n: usize, groups: usize) -> Vec<(usize, usize)> {
    (0..groups)
        .map(|t| (n * t / groups, n * (t + 1) / groups))
        .collect()
}

/// Mean-pools `[N, P, C]` snippets into `[T, P, C]` clips. When `N < T`,
/// clip `t` repeats the snippet nearest to its centre.
pub fn segment_to_clips(snippets: &Tensor, clips: usize) -> Result<Tensor> {
    let &[n, p, c] = snippets.shape() else {
        return Err(Error::Data(format!(
            "snippets must be [N, P, C], got {:?}",
            snippets.shape()
        )));
    };
    if clips == 0 || n == 0 {
        return Err(Error::Config(format!(
            "cannot segment {n} snippets into {clips} clips"
        )));
    }
    let row = p * c;
    let src = snippets.data();
    let mut out = vec![0.0; clips * row];
    for (t, (start, end)) in partition(n, clips).into_iter().enumerate() {
        let dst = &mut out[t * row..(t + 1) * row];
        if end > start {
            for s in start..end {
                for (d, v) in dst.iter_mut().zip(&src[s * row..(s + 1) * row]) {
                    *d += v;
                }
            }
            let size = (end - start) as f64;
            dst.iter_mut().for_each(|d| *d /= size);
        } else {
            let nearest = ((2 * t + 1) * n / (2 * clips)).min(n - 1);
            dst.copy_from_slice(&src[nearest * row..(nearest + 1) * row]);
        }
    }
    Ok(Tensor::new(&[clips, p, c], out)?)
}

/// Frame-level scores for one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSeries {
    pub id: String,
    pub scores: Vec<f64>,
}

/// Piecewise-constant expansion: frame `f` takes the score of the clip whose
/// range in `partition(frame_count, T)` contains it.
pub fn expand_scores_to_frames(clip_scores: &[f64], frame_count: usize) -> Vec<f64> {
    let mut out = vec![0.0; frame_count];
    for (score, (start, end)) in clip_scores
        .iter()
        .zip(partition(frame_count, clip_scores.len()))
    {
        out[start..end].fill(*score);
    }
    out
}
