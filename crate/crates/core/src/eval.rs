//! Scene-level inference and metric aggregation.

use alloc::vec;
use alloc::vec::Vec;

use crate::ensemble::{geometric_ensemble, out_of_vocab_logits};
use crate::error::{Error, Result};
use crate::losses::mask_pool;
use crate::metrics::{compute_pq, panoptic_inference, Labels, PQReport, PanopticPrediction};
use crate::model::Model;
use crate::numerics::{sigmoid, softmax, Graph, Tensor};
use crate::sample::Sample;
use crate::train::{EvalConfig, Task};

/// Per-query class probabilities over the full vocabulary, optionally blended
/// with the pooled-embedding classifier.
pub fn query_scores(model: &Model, task: &Task, sample: &Sample, eval: &EvalConfig) -> Result<(Tensor, Tensor)> {
    let mut g = Graph::new();
    let fwd = task.forward_all(model, &mut g, sample)?;
    let logits = g.value(fwd.class_logits);
    let masks = g.value(fwd.mask_logits).clone();
    let (q, c) = (logits.rows(), logits.cols());
    let mut scores = Vec::with_capacity(q * c);
    let is_base: Vec<bool> = task.vocab.classes().iter().map(|k| k.is_base).collect();
    for qi in 0..q {
        let p_v = softmax(logits.row(qi));
        match eval.ensemble {
            None => scores.extend(p_v),
            Some(params) => {
                let probs: Vec<f64> = masks.row(qi).iter().map(|&x| sigmoid(x)).collect();
                let pooled = mask_pool(&probs, &sample.features, &sample.valid)
                    .filter(|w| w.iter().any(|&x| x != 0.0));
                let p_w = match pooled {
                    Some(w) => softmax(&out_of_vocab_logits(&w, &task.text, model.temperature())?),
                    None => vec![1.0 / c as f64; c],
                };
                scores.extend(geometric_ensemble(&p_v, &p_w, params, &is_base)?);
            }
        }
    }
    Ok((Tensor::new(&[q, c], scores)?, masks))
}

pub fn predict(model: &Model, task: &Task, sample: &Sample, eval: &EvalConfig) -> Result<PanopticPrediction> {
    let (scores, masks) = query_scores(model, task, sample, eval)?;
    panoptic_inference(&scores, &masks, &task.vocab, sample.assign.point_voxel(), eval.threshold)
}

pub fn evaluate_sample(model: &Model, task: &Task, sample: &Sample, eval: &EvalConfig) -> Result<PQReport> {
    let pred = predict(model, task, sample, eval)?;
    let gt_sem: Vec<Option<usize>> = sample.point_semantic.iter().map(|&c| Some(c)).collect();
    compute_pq(
        Labels {
            semantic: &pred.semantic,
            instance: &pred.instance,
        },
        Labels {
            semantic: &gt_sem,
            instance: &sample.point_instance,
        },
        &task.vocab,
        eval.visible_only.then_some(&sample.point_visible[..]),
    )
}

/// Merges per-scene reports in the given order.
pub fn merge_reports(task: &Task, reports: impl IntoIterator<Item = PQReport>) -> Result<PQReport> {
    let mut total = PQReport::empty(&task.vocab);
    let mut any = false;
    for r in reports {
        total.merge(&r)?;
        any = true;
    }
    if !any {
        return Err(Error::Configuration("no scenes to evaluate".into()));
    }
    Ok(total)
}

pub fn evaluate(model: &Model, task: &Task, samples: &[Sample], eval: &EvalConfig) -> Result<PQReport> {
    let reports = samples
        .iter()
        .map(|s| evaluate_sample(model, task, s, eval))
        .collect::<Result<Vec<_>>>()?;
    merge_reports(task, reports)
}
