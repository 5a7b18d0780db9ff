//! Query matching and the four training losses.

use alloc::vec;
use alloc::vec::Vec;

use crate::assign::hungarian;
use crate::error::{dim_err, Error, Result};
use crate::numerics::{sigmoid, FocalParams, Graph, Tensor, Var};
use crate::sample::Segment;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub cls: f64,
    pub mask: f64,
    pub object: f64,
    pub voxel: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            cls: 1.0,
            mask: 1.0,
            object: 1.0,
            voxel: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.cls, self.mask, self.object, self.voxel]
            .iter()
            .any(|w| !(*w >= 0.0) || !w.is_finite())
        {
            return Err(Error::Configuration("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// How mask logits become per-voxel weights when reconstructing voxel features.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VoxelWeighting {
    /// Softmax over queries at each voxel.
    Softmax,
    /// Independent sigmoid per query.
    Sigmoid,
}

/// Which queries take part in matching and which are bound to base stuff classes.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryLayout {
    pub q_learn: usize,
    /// Base stuff class of each extra query, in query order after the learnable ones.
    pub stuff_classes: Vec<usize>,
    pub separate_stuff: bool,
}

impl QueryLayout {
    pub fn num_queries(&self) -> usize {
        self.q_learn + self.stuff_classes.len()
    }

    pub fn fixed_query(&self, class: usize) -> Option<usize> {
        if !self.separate_stuff {
            return None;
        }
        self.stuff_classes
            .iter()
            .position(|&c| c == class)
            .map(|k| self.q_learn + k)
    }
}

/// Matched `(query, segment)` pairs sorted by query.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Matching {
    pub pairs: Vec<(usize, usize)>,
}

impl Matching {
    pub fn matched_queries(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.0).collect()
    }

    pub fn segment_of(&self, query: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.0 == query).map(|p| p.1)
    }
}

/// `1 − (2·Σ p·y + 1) / (Σ p + Σ y + 1)` over kept voxels.
pub fn dice_loss(probs: &[f64], target: &[bool], keep: Option<&[bool]>) -> f64 {
    let (mut inter, mut ps, mut gs) = (0.0, 0.0, 0.0);
    for (j, (&p, &t)) in probs.iter().zip(target).enumerate() {
        if keep.is_some_and(|k| !k[j]) {
            continue;
        }
        let y = if t { 1.0 } else { 0.0 };
        inter += p * y;
        ps += p;
        gs += y;
    }
    1.0 - (2.0 * inter + 1.0) / (ps + gs + 1.0)
}

/// Fixed queries take their base stuff class; thing segments (every segment
/// when stuff is shared) go through Hungarian matching on
/// `w_cls·(1 − p[class]) + w_mask·dice_loss`.
///
/// `class_probs` is `Q × base classes` with columns ordered as `base`.
pub fn match_queries(
    class_probs: &Tensor,
    mask_logits: &Tensor,
    segments: &[Segment],
    base: &[usize],
    layout: &QueryLayout,
    weights: &LossWeights,
    keep: Option<&[bool]>,
) -> Result<Matching> {
    let q = layout.num_queries();
    if class_probs.rows() != q || mask_logits.rows() != q {
        return Err(dim_err("match_queries", &[q], &[class_probs.rows(), mask_logits.rows()]));
    }
    if class_probs.cols() != base.len() {
        return Err(dim_err("match_queries", &[base.len()], &[class_probs.cols()]));
    }
    let col = |c: usize| {
        base.iter().position(|&b| b == c).ok_or_else(|| {
            Error::Contract(alloc::format!("segment class {c} is not a base class"))
        })
    };
    let mut pairs = Vec::new();
    let mut open = Vec::new();
    for (k, s) in segments.iter().enumerate() {
        col(s.class)?;
        match layout.fixed_query(s.class) {
            Some(fq) => pairs.push((fq, k)),
            None => open.push(k),
        }
    }
    let candidates: Vec<usize> = if layout.separate_stuff {
        (0..layout.q_learn).collect()
    } else {
        (0..q).collect()
    };
    if open.len() > candidates.len() {
        return Err(Error::Capacity(alloc::format!(
            "{} segments to match but only {} queries",
            open.len(),
            candidates.len()
        )));
    }
    if !open.is_empty() {
        let v = mask_logits.cols();
        let mut cost = vec![0.0; candidates.len() * open.len()];
        for (i, &qi) in candidates.iter().enumerate() {
            let probs: Vec<f64> = mask_logits.row(qi).iter().map(|&x| sigmoid(x)).collect();
            for (j, &k) in open.iter().enumerate() {
                let s = &segments[k];
                if s.mask.len() != v {
                    return Err(dim_err("match_queries", &[v], &[s.mask.len()]));
                }
                let p = class_probs.get(qi, col(s.class)?);
                cost[i * open.len() + j] =
                    weights.cls * (1.0 - p) + weights.mask * dice_loss(&probs, &s.mask, keep);
            }
        }
        let cost = Tensor::new(&[candidates.len(), open.len()], cost)?;
        for (i, j) in hungarian(&cost)? {
            pairs.push((candidates[i], open[j]));
        }
    }
    pairs.sort_unstable();
    Ok(Matching { pairs })
}

/// Focal loss over base-class probabilities: matched queries toward their
/// class, the rest toward all zeros. Mean over queries.
pub fn loss_cls(
    g: &mut Graph,
    probs: Var,
    matching: &Matching,
    segments: &[Segment],
    base: &[usize],
    params: FocalParams,
) -> Result<Var> {
    let q = g.value(probs).rows();
    let mut targets = vec![None; q];
    for &(qi, k) in &matching.pairs {
        let c = segments[k].class;
        targets[qi] = Some(base.iter().position(|&b| b == c).ok_or_else(|| {
            Error::Contract(alloc::format!("segment class {c} is not a base class"))
        })?);
    }
    g.focal(probs, &targets, params)
}

/// BCE + dice per matched pair, averaged over pairs.
pub fn loss_mask(
    g: &mut Graph,
    logits: Var,
    matching: &Matching,
    segments: &[Segment],
    keep: Option<&[bool]>,
) -> Result<Var> {
    let rows: Vec<usize> = matching.pairs.iter().map(|p| p.0).collect();
    let targets: Vec<Vec<bool>> = matching
        .pairs
        .iter()
        .map(|p| segments[p.1].mask.clone())
        .collect();
    g.mask_loss(logits, &rows, &targets, keep)
}

/// Mean image embedding under a query's mask: voxels with probability above
/// 0.5 and valid features, or the probability-weighted mean of valid voxels
/// when that set is empty. `None` when no valid voxel has weight.
pub fn mask_pool(probs: &[f64], features: &Tensor, valid: &[bool]) -> Option<Vec<f64>> {
    let d = features.cols();
    let mut acc = vec![0.0; d];
    let mut n = 0usize;
    for (v, (&p, &ok)) in probs.iter().zip(valid).enumerate() {
        if ok && p > 0.5 {
            for (a, x) in acc.iter_mut().zip(features.row(v)) {
                *a += x;
            }
            n += 1;
        }
    }
    if n > 0 {
        return Some(acc.into_iter().map(|a| a / n as f64).collect());
    }
    let mut w = 0.0;
    for (v, (&p, &ok)) in probs.iter().zip(valid).enumerate() {
        if ok && p > 0.0 {
            for (a, x) in acc.iter_mut().zip(features.row(v)) {
                *a += p * x;
            }
            w += p;
        }
    }
    (w > 0.0).then(|| acc.into_iter().map(|a| a / w).collect())
}

/// Mean `1 − cos(v_q, w_q)` over matched queries with a usable pooled target.
/// Returns the loss node and the number of contributing queries.
pub fn loss_object_distill(
    g: &mut Graph,
    embeddings: Var,
    mask_logits: &Tensor,
    matching: &Matching,
    features: &Tensor,
    valid: &[bool],
) -> Result<(Var, usize)> {
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for q in matching.matched_queries() {
        let probs: Vec<f64> = mask_logits.row(q).iter().map(|&x| sigmoid(x)).collect();
        if let Some(w) = mask_pool(&probs, features, valid) {
            if w.iter().any(|&x| x != 0.0) {
                rows.push(q);
                targets.extend(w);
            }
        }
    }
    if rows.is_empty() {
        return Ok((g.constant(Tensor::zeros(&[1])), 0));
    }
    let d = features.cols();
    let n = rows.len();
    let sel = g.select_rows(embeddings, &rows)?;
    let loss = g.cosine_loss(sel, Tensor::new(&[n, d], targets)?)?;
    Ok((loss, n))
}

/// `V × D` reconstruction: each voxel's weighted sum of query embeddings.
pub fn reconstruct_voxel_features(
    g: &mut Graph,
    mask_logits: Var,
    embeddings: Var,
    weighting: VoxelWeighting,
) -> Result<Var> {
    let t = g.transpose(mask_logits)?;
    let w = match weighting {
        VoxelWeighting::Softmax => g.softmax_rows(t)?,
        VoxelWeighting::Sigmoid => g.sigmoid(t),
    };
    g.matmul(w, embeddings)
}

/// Mean absolute error over valid voxels. The flag reports that no voxel was valid.
pub fn loss_voxel_distill(
    g: &mut Graph,
    reconstruction: Var,
    features: Var,
    valid: &[bool],
) -> Result<(Var, bool)> {
    let target = g.stop_grad(features);
    let loss = g.l1_rows(reconstruction, target, valid)?;
    Ok((loss, !valid.iter().any(|&v| v)))
}

/// Weighted sum of the four components; absent components count as zero.
pub fn total_loss(g: &mut Graph, terms: &[(f64, Var)]) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for &(w, v) in terms {
        let s = g.scale(v, w);
        acc = Some(match acc {
            Some(a) => g.add(a, s)?,
            None => s,
        });
    }
    Ok(acc.unwrap_or_else(|| g.constant(Tensor::zeros(&[1]))))
}
