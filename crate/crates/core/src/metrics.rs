//! Panoptic inference from query outputs, and panoptic quality / IoU metrics.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{dim_err, Error, Result};
use crate::numerics::{sigmoid, Tensor};
use crate::vocab::Vocabulary;

/// Confidence below which a query is dropped.
pub const DEFAULT_THRESHOLD: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredSegment {
    pub class: usize,
    pub instance: u32,
    pub confidence: f64,
}

/// Per-point labels. `None` marks void points, which carry instance 0.
#[derive(Debug, Clone, PartialEq)]
pub struct PanopticPrediction {
    pub semantic: Vec<Option<usize>>,
    pub instance: Vec<u32>,
    pub segments: Vec<PredSegment>,
}

/// Maximum class probability and its class per query; ties go to the lower class.
pub fn query_confidence(scores: &Tensor) -> Vec<(f64, usize)> {
    (0..scores.rows())
        .map(|q| {
            let row = scores.row(q);
            let mut best = (f64::NEG_INFINITY, 0);
            for (c, &s) in row.iter().enumerate() {
                if s > best.0 {
                    best = (s, c);
                }
            }
            best
        })
        .collect()
}

/// Per voxel, the kept query maximizing `confidence × sigmoid(mask logit)`;
/// `None` where every query was dropped.
pub fn voxel_winners(scores: &Tensor, mask_logits: &Tensor, threshold: f64) -> Result<Vec<Option<usize>>> {
    if scores.rows() != mask_logits.rows() {
        return Err(dim_err("voxel_winners", &[scores.rows()], &[mask_logits.rows()]));
    }
    let conf = query_confidence(scores);
    let kept: Vec<usize> = (0..conf.len()).filter(|&q| conf[q].0 >= threshold).collect();
    let v = mask_logits.cols();
    Ok((0..v)
        .map(|vi| {
            let mut best: Option<(f64, usize)> = None;
            for &q in &kept {
                let s = conf[q].0 * sigmoid(mask_logits.get(q, vi));
                if best.is_none_or(|(b, _)| s > b) {
                    best = Some((s, q));
                }
            }
            best.map(|(_, q)| q)
        })
        .collect())
}

/// Turns per-query class scores (`Q × C`) and mask logits (`Q × V`) into
/// point labels. Winning thing queries get dense instance ids in query order;
/// stuff winners merge per class. Points outside the grid are void.
pub fn panoptic_inference(
    scores: &Tensor,
    mask_logits: &Tensor,
    vocab: &Vocabulary,
    point_voxel: &[Option<usize>],
    threshold: f64,
) -> Result<PanopticPrediction> {
    if scores.cols() != vocab.len() {
        return Err(dim_err("panoptic_inference", &[vocab.len()], &[scores.cols()]));
    }
    let conf = query_confidence(scores);
    let winners = voxel_winners(scores, mask_logits, threshold)?;
    let mut won = vec![false; scores.rows()];
    for w in winners.iter().flatten() {
        won[*w] = true;
    }
    let mut id_of = vec![0u32; scores.rows()];
    let mut segments = Vec::new();
    let mut next = 1u32;
    let mut stuff_conf: BTreeMap<usize, f64> = BTreeMap::new();
    for q in (0..scores.rows()).filter(|&q| won[q]) {
        let (s, c) = conf[q];
        if vocab.class(c).is_thing {
            id_of[q] = next;
            segments.push(PredSegment {
                class: c,
                instance: next,
                confidence: s,
            });
            next += 1;
        } else {
            let e = stuff_conf.entry(c).or_insert(s);
            *e = e.max(s);
        }
    }
    for (c, s) in stuff_conf {
        segments.push(PredSegment {
            class: c,
            instance: 0,
            confidence: s,
        });
    }
    let mut semantic = Vec::with_capacity(point_voxel.len());
    let mut instance = Vec::with_capacity(point_voxel.len());
    for pv in point_voxel {
        match pv.and_then(|v| winners.get(v).copied().flatten()) {
            Some(q) => {
                semantic.push(Some(conf[q].1));
                instance.push(id_of[q]);
            }
            None => {
                semantic.push(None);
                instance.push(0);
            }
        }
    }
    Ok(PanopticPrediction {
        semantic,
        instance,
        segments,
    })
}

/// Matching counts of one class.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub iou_sum: f64,
    /// Point-level semantic intersection, union and ground-truth size.
    pub inter: u64,
    pub union: u64,
    pub gt_points: u64,
}

impl ClassCounts {
    pub fn present(&self) -> bool {
        self.tp + self.fp + self.fn_ > 0
    }

    pub fn sq(&self) -> f64 {
        if self.tp == 0 {
            0.0
        } else {
            self.iou_sum / self.tp as f64
        }
    }

    pub fn rq(&self) -> f64 {
        let den = self.tp as f64 + 0.5 * self.fp as f64 + 0.5 * self.fn_ as f64;
        if den == 0.0 {
            0.0
        } else {
            self.tp as f64 / den
        }
    }

    pub fn pq(&self) -> f64 {
        self.sq() * self.rq()
    }

    pub fn iou(&self) -> f64 {
        if self.union == 0 {
            0.0
        } else {
            self.inter as f64 / self.union as f64
        }
    }
}

/// Per-class counts; merging sums counts before any division.
#[derive(Debug, Clone, PartialEq)]
pub struct PQReport {
    pub class_names: Vec<String>,
    pub is_thing: Vec<bool>,
    pub is_base: Vec<bool>,
    pub classes: Vec<ClassCounts>,
}

/// Aggregate metrics in the column order of the summary table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub pq: f64,
    pub pq_novel_thing: f64,
    pub pq_novel_stuff: f64,
    pub rq: f64,
    pub rq_novel_thing: f64,
    pub rq_novel_stuff: f64,
    pub sq: f64,
    pub sq_novel_thing: f64,
    pub sq_novel_stuff: f64,
    pub miou: f64,
    pub pq_novel: f64,
    pub pq_base: f64,
}

pub const SUMMARY_COLUMNS: [&str; 10] = [
    "PQ", "PQ_N^Th", "PQ_N^St", "RQ", "RQ_N^Th", "RQ_N^St", "SQ", "SQ_N^Th", "SQ_N^St", "mIoU",
];

impl Summary {
    pub fn columns(&self) -> [f64; 10] {
        [
            self.pq,
            self.pq_novel_thing,
            self.pq_novel_stuff,
            self.rq,
            self.rq_novel_thing,
            self.rq_novel_stuff,
            self.sq,
            self.sq_novel_thing,
            self.sq_novel_stuff,
            self.miou,
        ]
    }
}

impl PQReport {
    pub fn empty(vocab: &Vocabulary) -> Self {
        Self {
            class_names: vocab.classes().iter().map(|c| c.name.clone()).collect(),
            is_thing: vocab.classes().iter().map(|c| c.is_thing).collect(),
            is_base: vocab.classes().iter().map(|c| c.is_base).collect(),
            classes: vec![ClassCounts::default(); vocab.len()],
        }
    }

    pub fn merge(&mut self, other: &PQReport) -> Result<()> {
        if self.class_names != other.class_names {
            return Err(Error::Contract("cannot merge reports over different vocabularies".into()));
        }
        for (a, b) in self.classes.iter_mut().zip(&other.classes) {
            a.tp += b.tp;
            a.fp += b.fp;
            a.fn_ += b.fn_;
            a.iou_sum += b.iou_sum;
            a.inter += b.inter;
            a.union += b.union;
            a.gt_points += b.gt_points;
        }
        Ok(())
    }

    fn mean_over(&self, pick: impl Fn(usize) -> bool, f: impl Fn(&ClassCounts) -> f64) -> f64 {
        let vals: Vec<f64> = (0..self.classes.len())
            .filter(|&c| pick(c) && self.classes[c].present())
            .map(|c| f(&self.classes[c]))
            .collect();
        if vals.is_empty() {
            0.0
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    }

    pub fn summary(&self) -> Summary {
        let all = |_: usize| true;
        let nth = |c: usize| !self.is_base[c] && self.is_thing[c];
        let nst = |c: usize| !self.is_base[c] && !self.is_thing[c];
        let miou_classes: Vec<f64> = self
            .classes
            .iter()
            .filter(|k| k.gt_points > 0)
            .map(ClassCounts::iou)
            .collect();
        Summary {
            pq: self.mean_over(all, ClassCounts::pq),
            pq_novel_thing: self.mean_over(nth, ClassCounts::pq),
            pq_novel_stuff: self.mean_over(nst, ClassCounts::pq),
            rq: self.mean_over(all, ClassCounts::rq),
            rq_novel_thing: self.mean_over(nth, ClassCounts::rq),
            rq_novel_stuff: self.mean_over(nst, ClassCounts::rq),
            sq: self.mean_over(all, ClassCounts::sq),
            sq_novel_thing: self.mean_over(nth, ClassCounts::sq),
            sq_novel_stuff: self.mean_over(nst, ClassCounts::sq),
            miou: if miou_classes.is_empty() {
                0.0
            } else {
                miou_classes.iter().sum::<f64>() / miou_classes.len() as f64
            },
            pq_novel: self.mean_over(|c| !self.is_base[c], ClassCounts::pq),
            pq_base: self.mean_over(|c| self.is_base[c], ClassCounts::pq),
        }
    }
}

/// Point labels of one scene side. `None` classes are void.
#[derive(Debug, Clone, Copy)]
pub struct Labels<'a> {
    pub semantic: &'a [Option<usize>],
    pub instance: &'a [u32],
}

type SegKey = (usize, u32);

fn segment_key(vocab: &Vocabulary, class: usize, instance: u32) -> SegKey {
    (class, if vocab.class(class).is_thing { instance } else { 0 })
}

fn check_inputs(pred: &Labels, gt: &Labels, include: Option<&[bool]>, vocab: &Vocabulary) -> Result<()> {
    let n = gt.semantic.len();
    if pred.semantic.len() != n || pred.instance.len() != n || gt.instance.len() != n {
        return Err(Error::Contract(alloc::format!(
            "prediction has {} points, ground truth {}",
            pred.semantic.len(),
            n
        )));
    }
    if include.is_some_and(|m| m.len() != n) {
        return Err(Error::Contract("point filter length differs from the point count".into()));
    }
    let bad = pred
        .semantic
        .iter()
        .chain(gt.semantic)
        .flatten()
        .any(|&c| c >= vocab.len());
    if bad {
        return Err(Error::Contract("class index outside the vocabulary".into()));
    }
    Ok(())
}

fn add_semantic_iou(report: &mut PQReport, pred: &Labels, gt: &Labels, use_point: &dyn Fn(usize) -> bool) {
    for i in (0..gt.semantic.len()).filter(|&i| use_point(i)) {
        let (p, g) = (pred.semantic[i], gt.semantic[i]);
        if let Some(g) = g {
            report.classes[g].gt_points += 1;
            report.classes[g].union += 1;
            if p == Some(g) {
                report.classes[g].inter += 1;
            }
        }
        if let Some(p) = p {
            if Some(p) != g {
                report.classes[p].union += 1;
            }
        }
    }
}

/// Panoptic quality per class. Segments match when they share a class and
/// their IoU exceeds 0.5. Points where the ground truth is void or `include`
/// is false are ignored; void predictions belong to no segment.
pub fn compute_pq(
    pred: Labels,
    gt: Labels,
    vocab: &Vocabulary,
    include: Option<&[bool]>,
) -> Result<PQReport> {
    check_inputs(&pred, &gt, include, vocab)?;
    let use_point = |i: usize| include.is_none_or(|m| m[i]) && gt.semantic[i].is_some();
    let mut gt_area: BTreeMap<SegKey, u64> = BTreeMap::new();
    let mut pred_area: BTreeMap<SegKey, u64> = BTreeMap::new();
    let mut inter: BTreeMap<(SegKey, SegKey), u64> = BTreeMap::new();
    for i in (0..gt.semantic.len()).filter(|&i| use_point(i)) {
        let g = gt.semantic[i].map(|c| segment_key(vocab, c, gt.instance[i]));
        let p = pred.semantic[i].map(|c| segment_key(vocab, c, pred.instance[i]));
        if let Some(g) = g {
            *gt_area.entry(g).or_default() += 1;
        }
        if let Some(p) = p {
            *pred_area.entry(p).or_default() += 1;
        }
        if let (Some(g), Some(p)) = (g, p) {
            if g.0 == p.0 {
                *inter.entry((g, p)).or_default() += 1;
            }
        }
    }
    let mut report = PQReport::empty(vocab);
    let mut pred_matched: BTreeMap<SegKey, bool> = pred_area.keys().map(|k| (*k, false)).collect();
    let mut gt_matched: BTreeMap<SegKey, bool> = gt_area.keys().map(|k| (*k, false)).collect();
    for (&(g, p), &n) in &inter {
        let union = gt_area[&g] + pred_area[&p] - n;
        let iou = n as f64 / union as f64;
        if iou > 0.5 {
            if gt_matched[&g] || pred_matched[&p] {
                return Err(Error::Contract("a segment matched twice".into()));
            }
            gt_matched.insert(g, true);
            pred_matched.insert(p, true);
            report.classes[g.0].tp += 1;
            report.classes[g.0].iou_sum += iou;
        }
    }
    for (k, m) in gt_matched {
        if !m {
            report.classes[k.0].fn_ += 1;
        }
    }
    for (k, m) in pred_matched {
        if !m {
            report.classes[k.0].fp += 1;
        }
    }
    add_semantic_iou(&mut report, &pred, &gt, &use_point);
    Ok(report)
}

/// Literal reference implementation for small inputs: explicit point sets,
/// every same-class pair compared by set intersection.
pub fn brute_force_pq_oracle(
    pred: Labels,
    gt: Labels,
    vocab: &Vocabulary,
    include: Option<&[bool]>,
) -> Result<PQReport> {
    check_inputs(&pred, &gt, include, vocab)?;
    let use_point = |i: usize| include.is_none_or(|m| m[i]) && gt.semantic[i].is_some();
    let collect = |labels: &Labels| {
        let mut segs: Vec<(SegKey, Vec<usize>)> = Vec::new();
        for i in (0..labels.semantic.len()).filter(|&i| use_point(i)) {
            if let Some(c) = labels.semantic[i] {
                let k = segment_key(vocab, c, labels.instance[i]);
                match segs.iter_mut().find(|s| s.0 == k) {
                    Some(s) => s.1.push(i),
                    None => segs.push((k, vec![i])),
                }
            }
        }
        segs.sort_by_key(|s| s.0);
        segs
    };
    let (gs, ps) = (collect(&gt), collect(&pred));
    let mut report = PQReport::empty(vocab);
    let mut pred_hits = vec![0usize; ps.len()];
    for (gk, gpts) in &gs {
        let mut hits = 0;
        for (j, (pk, ppts)) in ps.iter().enumerate() {
            if gk.0 != pk.0 {
                continue;
            }
            let n = gpts.iter().filter(|i| ppts.contains(i)).count();
            let u = gpts.len() + ppts.len() - n;
            let iou = n as f64 / u as f64;
            if n > 0 && iou > 0.5 {
                hits += 1;
                pred_hits[j] += 1;
                report.classes[gk.0].tp += 1;
                report.classes[gk.0].iou_sum += iou;
            }
        }
        if hits > 1 {
            return Err(Error::Contract("a segment matched twice".into()));
        }
        if hits == 0 {
            report.classes[gk.0].fn_ += 1;
        }
    }
    for (j, (pk, _)) in ps.iter().enumerate() {
        match pred_hits[j] {
            0 => report.classes[pk.0].fp += 1,
            1 => {}
            _ => return Err(Error::Contract("a segment matched twice".into())),
        }
    }
    add_semantic_iou(&mut report, &pred, &gt, &use_point);
    Ok(report)
}

/// Point-level IoU per class and its mean over classes present in the ground truth.
pub fn compute_miou(
    pred: &[Option<usize>],
    gt: &[usize],
    vocab: &Vocabulary,
) -> Result<(Vec<f64>, f64)> {
    if pred.len() != gt.len() {
        return Err(Error::Contract("prediction and ground truth differ in length".into()));
    }
    let c = vocab.len();
    let (mut inter, mut union, mut count) = (vec![0u64; c], vec![0u64; c], vec![0u64; c]);
    for (&p, &g) in pred.iter().zip(gt) {
        if g >= c || p.is_some_and(|p| p >= c) {
            return Err(Error::Contract("class index outside the vocabulary".into()));
        }
        count[g] += 1;
        union[g] += 1;
        match p {
            Some(p) if p == g => inter[g] += 1,
            Some(p) => union[p] += 1,
            None => {}
        }
    }
    let ious: Vec<f64> = (0..c)
        .map(|k| if union[k] == 0 { 0.0 } else { inter[k] as f64 / union[k] as f64 })
        .collect();
    let present: Vec<f64> = (0..c).filter(|&k| count[k] > 0).map(|k| ious[k]).collect();
    let mean = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    Ok((ious, mean))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vocab() -> Vocabulary {
        Vocabulary::street()
    }

    fn some(v: &[usize]) -> Vec<Option<usize>> {
        v.iter().map(|&c| Some(c)).collect()
    }

    #[test]
    fn exact_prediction_scores_one() {
        let v = vocab();
        let sem = some(&[0, 0, 0, 5, 5, 7, 0, 0]);
        let inst = [1, 1, 1, 0, 0, 0, 2, 2];
        let l = Labels {
            semantic: &sem,
            instance: &inst,
        };
        let r = compute_pq(l, l, &v, None).unwrap();
        for c in [0, 5, 7] {
            let k = r.classes[c];
            assert_eq!((k.pq(), k.sq(), k.rq()), (1.0, 1.0, 1.0));
        }
        let s = r.summary();
        assert_eq!((s.pq, s.miou), (1.0, 1.0));
    }

    #[test]
    fn single_match_iou_point_eight() {
        let v = vocab();
        let gt = some(&[0, 0, 0, 0, 0, 5]);
        let pr: Vec<Option<usize>> = vec![Some(0), Some(0), Some(0), Some(0), None, Some(5)];
        let gi = [1, 1, 1, 1, 1, 0];
        let pi = [3, 3, 3, 3, 0, 0];
        let r = compute_pq(
            Labels { semantic: &pr, instance: &pi },
            Labels { semantic: &gt, instance: &gi },
            &v,
            None,
        )
        .unwrap();
        let k = r.classes[0];
        assert_eq!((k.sq(), k.rq(), k.pq()), (0.8, 1.0, 0.8));
        assert_eq!((k.tp, k.fp, k.fn_), (1, 0, 0));
    }

    #[test]
    fn iou_of_one_half_is_not_a_match() {
        let v = vocab();
        let gt = some(&[0, 0, 5, 5]);
        let pr = some(&[0, 5, 5, 5]);
        let gi = [1, 1, 0, 0];
        let pi = [1, 0, 0, 0];
        for f in [compute_pq, brute_force_pq_oracle] {
            let r = f(
                Labels { semantic: &pr, instance: &pi },
                Labels { semantic: &gt, instance: &gi },
                &v,
                None,
            )
            .unwrap();
            assert_eq!((r.classes[0].tp, r.classes[0].fp, r.classes[0].fn_), (0, 1, 1));
        }
    }

    #[test]
    fn length_mismatch_is_contract_error() {
        let v = vocab();
        let a = some(&[0, 0]);
        let b = some(&[0]);
        let r = compute_pq(
            Labels { semantic: &a, instance: &[1, 1] },
            Labels { semantic: &b, instance: &[1] },
            &v,
            None,
        );
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    pub(crate) fn random_instance(rng: &mut ChaCha8Rng, v: &Vocabulary) -> (Vec<Option<usize>>, Vec<u32>, Vec<Option<usize>>, Vec<u32>) {
        let n = rng.random_range(1..=500);
        let gt_sem: Vec<Option<usize>> = (0..n).map(|_| Some(rng.random_range(0..v.len()))).collect();
        let gt_inst: Vec<u32> = (0..n).map(|_| rng.random_range(1..=2)).collect();
        let mut pr_sem = gt_sem.clone();
        let mut pr_inst = gt_inst.clone();
        let flip = rng.random_range(0.0..0.6);
        for i in 0..n {
            if rng.random_bool(flip) {
                pr_sem[i] = if rng.random_bool(0.1) { None } else { Some(rng.random_range(0..v.len())) };
                pr_inst[i] = rng.random_range(1..=3);
            }
        }
        (pr_sem, pr_inst, gt_sem, gt_inst)
    }

    #[test]
    fn agrees_with_oracle_on_random_instances() {
        let v = vocab();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..200 {
            let (ps, pi, gs, gi) = random_instance(&mut rng, &v);
            let p = Labels { semantic: &ps, instance: &pi };
            let g = Labels { semantic: &gs, instance: &gi };
            assert_eq!(compute_pq(p, g, &v, None).unwrap(), brute_force_pq_oracle(p, g, &v, None).unwrap());
        }
    }

    #[test]
    fn miou_matches_confusion_matrix() {
        let v = vocab();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let n = 300;
            let gt: Vec<usize> = (0..n).map(|_| rng.random_range(0..v.len())).collect();
            let pr: Vec<Option<usize>> = (0..n).map(|_| Some(rng.random_range(0..v.len()))).collect();
            let (ious, mean) = compute_miou(&pr, &gt, &v).unwrap();
            let c = v.len();
            let mut conf = vec![vec![0u64; c]; c];
            for (p, g) in pr.iter().zip(&gt) {
                conf[*g][p.unwrap()] += 1;
            }
            let mut vals = Vec::new();
            for k in 0..c {
                let tp = conf[k][k] as f64;
                let row: u64 = conf[k].iter().sum();
                let col: u64 = (0..c).map(|j| conf[j][k]).sum();
                let iou = tp / (row + col - conf[k][k]) as f64;
                assert!((ious[k] - iou).abs() < 1e-12);
                if row > 0 {
                    vals.push(iou);
                }
            }
            assert!((mean - vals.iter().sum::<f64>() / vals.len() as f64).abs() < 1e-12);
        }
        let (_, m) = compute_miou(&some(&[1, 2]), &[1, 2], &v).unwrap();
        assert_eq!(m, 1.0);
        let (ious, _) = compute_miou(&some(&[2, 2]), &[1, 2], &v).unwrap();
        assert_eq!(ious[1], 0.0);
    }

    #[test]
    fn full_scene_stuff_query() {
        let v = vocab();
        let mut scores = Tensor::zeros(&[1, v.len()]);
        scores.data_mut()[5] = 1.0;
        let logits = Tensor::full(&[1, 3], 4.0);
        let pv = [Some(0), Some(2), None, Some(1)];
        let p = panoptic_inference(&scores, &logits, &v, &pv, 0.25).unwrap();
        assert_eq!(p.semantic, vec![Some(5), Some(5), None, Some(5)]);
        assert_eq!(p.instance, vec![0; 4]);
    }

    #[test]
    fn disjoint_thing_queries_get_distinct_ids() {
        let v = vocab();
        let mut scores = Tensor::zeros(&[3, v.len()]);
        scores.data_mut()[0] = 0.9;
        scores.data_mut()[v.len() + 1] = 0.8;
        scores.data_mut()[2 * v.len()] = 0.1;
        let logits = Tensor::from_rows(&[vec![5.0, -5.0], vec![-5.0, 5.0], vec![9.0, 9.0]]).unwrap();
        let p = panoptic_inference(&scores, &logits, &v, &[Some(0), Some(1)], 0.25).unwrap();
        assert_eq!(p.semantic, vec![Some(0), Some(1)]);
        assert_eq!(p.instance, vec![1, 2]);
        assert_eq!(p.segments.len(), 2);
    }

    #[test]
    fn overlap_goes_to_larger_product() {
        let v = vocab();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (q, n) = (6, 40);
        let scores = Tensor::new(
            &[q, v.len()],
            (0..q * v.len()).map(|_| rng.random::<f64>()).collect(),
        )
        .unwrap();
        let logits = Tensor::new(&[q, n], (0..q * n).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
        let pv: Vec<Option<usize>> = (0..n).map(Some).collect();
        let p = panoptic_inference(&scores, &logits, &v, &pv, 0.25).unwrap();
        let conf = query_confidence(&scores);
        for vi in 0..n {
            let mut best = (f64::NEG_INFINITY, usize::MAX);
            for qi in 0..q {
                if conf[qi].0 < 0.25 {
                    continue;
                }
                let s = conf[qi].0 * sigmoid(logits.get(qi, vi));
                if s > best.0 {
                    best = (s, qi);
                }
            }
            assert_eq!(p.semantic[vi], Some(conf[best.1].1));
        }
    }

    #[test]
    fn dropped_queries_leave_void() {
        let v = vocab();
        let scores = Tensor::full(&[2, v.len()], 0.1);
        let logits = Tensor::zeros(&[2, 2]);
        let p = panoptic_inference(&scores, &logits, &v, &[Some(0), Some(1)], 0.25).unwrap();
        assert_eq!(p.semantic, vec![None, None]);
    }

    proptest! {
        #[test]
        fn pq_is_sq_times_rq_and_id_invariant(seed in any::<u64>(), shift in 1u32..50) {
            let v = vocab();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (ps, pi, gs, gi) = random_instance(&mut rng, &v);
            let p = Labels { semantic: &ps, instance: &pi };
            let g = Labels { semantic: &gs, instance: &gi };
            let r = compute_pq(p, g, &v, None).unwrap();
            for k in &r.classes {
                prop_assert!((k.pq() - k.sq() * k.rq()).abs() <= 1e-12);
            }
            let relabeled: Vec<u32> = pi.iter().map(|i| i * 7 + shift).collect();
            let r2 = compute_pq(Labels { semantic: &ps, instance: &relabeled }, g, &v, None).unwrap();
            prop_assert_eq!(r.summary(), r2.summary());
        }

        #[test]
        fn spurious_segment_never_raises_rq(seed in any::<u64>()) {
            let v = vocab();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (mut ps, mut pi, mut gs, mut gi) = random_instance(&mut rng, &v);
            let before = compute_pq(Labels { semantic: &ps, instance: &pi }, Labels { semantic: &gs, instance: &gi }, &v, None).unwrap();
            // one extra point predicted as a fresh car instance, ground truth road
            ps.push(Some(0));
            pi.push(999);
            gs.push(Some(5));
            gi.push(0);
            let after = compute_pq(Labels { semantic: &ps, instance: &pi }, Labels { semantic: &gs, instance: &gi }, &v, None).unwrap();
            prop_assert!(after.classes[0].rq() <= before.classes[0].rq());
        }
    }
}
