//! ScoreCAM: channel weights are the softmax, across channels, of the
//! target logit on inputs masked by each upsampled activation map.

use rayon::prelude::*;

use super::{check_tap, min_max_normalize, weighted_sum, CamError, CamMethod, Heatmap};
use crate::backbones::{capture, ClassifierModel, TapResult, Target};
use crate::image::{batch_tensor, Image};
use crate::scalar::Scalar;

/// Masked inputs per forward pass.
pub const DEFAULT_SCORE_BATCH: usize = 32;

pub fn score_cam<T: Scalar>(
    model: &ClassifierModel<T>,
    input: &Image<T>,
    layer: &str,
    target: Target,
    batch: usize,
) -> Result<Heatmap<T>, CamError> {
    let tap = capture(model, input, layer, target)?;
    score_cam_with_tap(model, input, &tap, batch)
}

/// Numerically stable softmax.
pub fn softmax<T: Scalar>(v: &[T]) -> Vec<T> {
    let m = v.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = v.iter().map(|&x| (x - m).exp()).collect();
    let z: T = e.iter().copied().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// ScoreCAM reusing the activations of an earlier capture of `input`.
pub fn score_cam_with_tap<T: Scalar>(
    model: &ClassifierModel<T>,
    input: &Image<T>,
    tap: &TapResult<T>,
    batch: usize,
) -> Result<Heatmap<T>, CamError> {
    check_tap(tap)?;
    if batch == 0 {
        return Err(CamError::Batch);
    }
    let (h, w) = (input.height(), input.width());
    let target = tap.target_class();
    let masks: Vec<Vec<T>> = (0..tap.channels())
        .map(|k| {
            let a = Image::new(tap.height(), tap.width(), 1, tap.activation_channel(k).to_vec());
            min_max_normalize(a.resize(h, w).data())
        })
        .collect();
    let chunks: Vec<Vec<T>> = masks
        .par_chunks(batch)
        .map(|chunk| {
            let masked: Vec<Image<T>> = chunk
                .iter()
                .map(|m| Image::from_fn(h, w, input.channels(), |y, x, c| input.get(y, x, c) * m[y * w + x]))
                .collect();
            let refs: Vec<&Image<T>> = masked.iter().collect();
            let out = model.logits(&batch_tensor(&refs));
            (0..out.batch()).map(|b| out.item(b)[target]).collect()
        })
        .collect();
    let scores: Vec<T> = chunks.into_iter().flatten().collect();
    let weights = softmax(&scores);
    Ok(Heatmap::raw(tap, CamMethod::ScoreCam, weighted_sum(tap, &weights)))
}
