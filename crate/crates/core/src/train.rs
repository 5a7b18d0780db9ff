//! Per-scene loss assembly, the training loop and the ablation ladder.

use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::ensemble::EnsembleParams;
use crate::error::{Error, Result};
use crate::losses::{
    loss_cls, loss_mask, loss_object_distill, loss_voxel_distill, match_queries,
    reconstruct_voxel_features, total_loss, LossWeights, Matching, QueryLayout, VoxelWeighting,
};
use crate::model::{Forward, Model, ModelConfig, ParamVars};
use crate::numerics::{FocalParams, Graph, Tensor, Var};
use crate::optim::{adamw_step, AdamState, AdamWConfig};
use crate::rng::{stream, Stream};
use crate::sample::{base_voxels, voxel_segments, Sample, Segment};
use crate::scene::mix_seed;
use crate::vocab::{TextEmbeddings, Vocabulary};

/// Vocabulary, label embeddings and the label subsets used in training and inference.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub vocab: Vocabulary,
    pub text: TextEmbeddings,
    pub base: Vec<usize>,
    pub layout: QueryLayout,
    base_text: Tensor,
    base_group: Vec<usize>,
    all_text: Tensor,
    all_group: Vec<usize>,
}

impl Task {
    pub fn new(vocab: Vocabulary, text: TextEmbeddings, config: &ModelConfig) -> Result<Self> {
        if text.num_classes() != vocab.len() {
            return Err(Error::Contract("label embeddings do not cover the vocabulary".into()));
        }
        let stuff = vocab.base_stuff();
        if stuff.len() != config.stuff_queries {
            return Err(Error::Configuration(alloc::format!(
                "{} stuff queries configured for {} base stuff classes",
                config.stuff_queries,
                stuff.len()
            )));
        }
        let base = vocab.base_classes();
        let (base_text, base_group) = text.restrict(&base);
        let all: Vec<usize> = (0..vocab.len()).collect();
        let (all_text, all_group) = text.restrict(&all);
        Ok(Self {
            layout: QueryLayout {
                q_learn: config.q_learn,
                stuff_classes: stuff,
                separate_stuff: config.separate_stuff,
            },
            base,
            base_text,
            base_group,
            all_text,
            all_group,
            vocab,
            text,
        })
    }

    /// Forward pass over base labels only.
    pub fn forward_base(&self, model: &Model, g: &mut Graph, pv: ParamVars, sample: &Sample, probe: bool) -> Result<Forward> {
        model.forward_with(g, pv, sample, &self.base_text, &self.base_group, self.base.len(), probe)
    }

    /// Forward pass over every label.
    pub fn forward_all(&self, model: &Model, g: &mut Graph, sample: &Sample) -> Result<Forward> {
        model.forward(g, sample, &self.all_text, &self.all_group, self.vocab.len(), false)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub weights: LossWeights,
    pub object_distill: bool,
    pub voxel_distill: bool,
    pub weighting: VoxelWeighting,
    /// Leave voxels of non-base classes out of the mask loss and matching.
    pub ignore_novel: bool,
    pub focal: FocalParams,
    pub optim: AdamWConfig,
    pub epochs: usize,
    /// Epochs at which the learning rate is multiplied by `lr_decay`.
    pub milestones: Vec<usize>,
    pub lr_decay: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(seed: u64) -> Self {
        let epochs = 30;
        Self {
            model: ModelConfig::default(),
            weights: LossWeights::default(),
            object_distill: true,
            voxel_distill: true,
            weighting: VoxelWeighting::Softmax,
            ignore_novel: false,
            focal: FocalParams::default(),
            optim: AdamWConfig::default(),
            epochs,
            milestones: default_milestones(epochs),
            lr_decay: 0.1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.weights.validate()?;
        self.optim.validate()?;
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Configuration("lr_decay must lie in (0, 1]".into()));
        }
        if self.milestones.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Configuration("milestones must be sorted".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| m <= epoch).count();
        self.optim.lr * libm::pow(self.lr_decay, passed as f64)
    }
}

/// Learning-rate drops at 60% and 85% of training.
pub fn default_milestones(epochs: usize) -> Vec<usize> {
    alloc::vec![epochs * 60 / 100, epochs * 85 / 100]
}

/// Scene visiting order of one epoch.
pub fn scene_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(mix_seed(seed, epoch as u64), Stream::Shuffle));
    order
}

/// The non-differentiable parts of a loss evaluation: segments, matching and
/// the mask logits the pooling targets are taken from.
#[derive(Debug, Clone, PartialEq)]
pub struct LossPlan {
    pub segments: Vec<Segment>,
    pub keep: Option<Vec<bool>>,
    pub matching: Matching,
    pub mask_logits: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerm {
    pub name: &'static str,
    pub weight: f64,
    pub value: Var,
}

#[derive(Debug, Clone)]
pub struct SceneLoss {
    pub forward: Forward,
    pub terms: Vec<LossTerm>,
    pub total: Var,
    pub plan: LossPlan,
}

/// Builds every enabled loss term for one scene. A given `plan` replaces the
/// matching and pooling targets derived from this forward pass.
#[allow(clippy::too_many_arguments)]
pub fn scene_loss(
    model: &Model,
    cfg: &TrainConfig,
    task: &Task,
    sample: &Sample,
    g: &mut Graph,
    pv: ParamVars,
    probe_frozen: bool,
    plan: Option<&LossPlan>,
) -> Result<SceneLoss> {
    let fwd = task.forward_base(model, g, pv, sample, probe_frozen)?;
    let probs = g.softmax_rows(fwd.class_logits)?;
    let plan = match plan {
        Some(p) => p.clone(),
        None => {
            let segments = voxel_segments(sample, &task.vocab, true);
            let keep = cfg.ignore_novel.then(|| base_voxels(sample, &task.vocab));
            let matching = match_queries(
                g.value(probs),
                g.value(fwd.mask_logits),
                &segments,
                &task.base,
                &task.layout,
                &cfg.weights,
                keep.as_deref(),
            )?;
            LossPlan {
                segments,
                keep,
                matching,
                mask_logits: g.value(fwd.mask_logits).clone(),
            }
        }
    };
    let mut terms = Vec::with_capacity(4);
    let cls = loss_cls(g, probs, &plan.matching, &plan.segments, &task.base, cfg.focal)?;
    terms.push(LossTerm {
        name: "cls",
        weight: cfg.weights.cls,
        value: cls,
    });
    let mask = loss_mask(g, fwd.mask_logits, &plan.matching, &plan.segments, plan.keep.as_deref())?;
    terms.push(LossTerm {
        name: "mask",
        weight: cfg.weights.mask,
        value: mask,
    });
    if cfg.object_distill {
        let (object, _) = loss_object_distill(
            g,
            fwd.embeddings,
            &plan.mask_logits,
            &plan.matching,
            &sample.features,
            &sample.valid,
        )?;
        terms.push(LossTerm {
            name: "object",
            weight: cfg.weights.object,
            value: object,
        });
    }
    if cfg.voxel_distill {
        let rec = reconstruct_voxel_features(g, fwd.mask_logits, fwd.embeddings, cfg.weighting)?;
        let (voxel, _) = loss_voxel_distill(g, rec, fwd.frozen.features, &sample.valid)?;
        terms.push(LossTerm {
            name: "voxel",
            weight: cfg.weights.voxel,
            value: voxel,
        });
    }
    let weighted: Vec<(f64, Var)> = terms.iter().map(|t| (t.weight, t.value)).collect();
    let total = total_loss(g, &weighted)?;
    Ok(SceneLoss {
        forward: fwd,
        terms,
        total,
        plan,
    })
}

/// Parameters, optimizer moments and the global step.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub model: Model,
    pub adam: AdamState,
    pub step: u64,
}

impl TrainState {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = Model::init(config.model.clone(), config.seed)?;
        let adam = AdamState::new(&model.params);
        Ok(Self { model, adam, step: 0 })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub step: u64,
    pub epoch: usize,
    pub scene: u64,
    pub lr: f64,
    /// Enabled terms only, unweighted.
    pub components: Vec<(&'static str, f64)>,
    pub total: f64,
}

fn param_grads(g: &Graph, pv: &ParamVars, out: Var) -> Result<Vec<Tensor>> {
    let grads = g.backward(out)?;
    Ok(pv.vars.iter().map(|&v| grads.get_or_zeros(g, v)).collect())
}

fn all_finite(ts: &[Tensor]) -> bool {
    ts.iter().all(|t| t.data().iter().all(|x| x.is_finite()))
}

/// One optimizer step on one scene. On failure the state is unchanged.
pub fn train_step(state: &mut TrainState, cfg: &TrainConfig, task: &Task, sample: &Sample, epoch: usize) -> Result<StepLog> {
    let mut g = Graph::new();
    let pv = ParamVars::register(&mut g, &state.model.params);
    let diverged = |term: &str| Error::Divergence {
        term: term.into(),
        step: state.step,
    };
    let loss = match scene_loss(&state.model, cfg, task, sample, &mut g, pv.clone(), false, None) {
        Err(Error::NonFinite { .. }) => return Err(diverged("forward")),
        other => other?,
    };
    let mut components = Vec::with_capacity(loss.terms.len());
    for t in &loss.terms {
        let v = g.value(t.value).item();
        if !v.is_finite() {
            return Err(diverged(t.name));
        }
        components.push((t.name, v));
    }
    let total = g.value(loss.total).item();
    if !total.is_finite() {
        return Err(diverged("total"));
    }
    let grads = param_grads(&g, &pv, loss.total)?;
    if !all_finite(&grads) {
        for t in &loss.terms {
            if !all_finite(&param_grads(&g, &pv, t.value)?) {
                return Err(diverged(t.name));
            }
        }
        return Err(diverged("total"));
    }
    let lr = cfg.lr_at(epoch);
    adamw_step(&mut state.model.params, &mut state.adam, &grads, lr, &cfg.optim)?;
    state.step += 1;
    Ok(StepLog {
        step: state.step,
        epoch,
        scene: sample.id,
        lr,
        components,
        total,
    })
}

/// Trains from `state.step` until `stop_at` steps (or the end of the
/// schedule). `on_step` sees every log line and the state after the step.
/// On error `state` holds the last good parameters.
pub fn train(
    state: &mut TrainState,
    cfg: &TrainConfig,
    task: &Task,
    samples: &[Sample],
    stop_at: Option<u64>,
    mut on_step: impl FnMut(&StepLog, &TrainState) -> Result<()>,
) -> Result<()> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Configuration("no training scenes".into()));
    }
    state.model.check_compatible(&Model::init(cfg.model.clone(), 0)?.params)?;
    let n = samples.len() as u64;
    let end = (cfg.epochs as u64 * n).min(stop_at.unwrap_or(u64::MAX));
    let mut cached: Option<(usize, Vec<usize>)> = None;
    while state.step < end {
        let epoch = (state.step / n) as usize;
        if cached.as_ref().is_none_or(|c| c.0 != epoch) {
            cached = Some((epoch, scene_order(cfg.seed, epoch, samples.len())));
        }
        let idx = cached.as_ref().map(|c| c.1[(state.step % n) as usize]).unwrap_or(0);
        let log = train_step(state, cfg, task, &samples[idx], epoch)?;
        on_step(&log, state)?;
    }
    Ok(())
}

/// Inference options.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub threshold: f64,
    /// Blend with the pooled-embedding classifier when set.
    pub ensemble: Option<EnsembleParams>,
    /// Score only points seen by a camera.
    pub visible_only: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            threshold: crate::metrics::DEFAULT_THRESHOLD,
            ensemble: None,
            visible_only: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LadderRow {
    pub name: &'static str,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

/// Baseline with shared queries and ensemble inference, then query
/// assignment, fusion, object distillation (single head), voxel distillation.
pub fn ablation_ladder(base: &TrainConfig, eval: &EvalConfig) -> Vec<LadderRow> {
    let ens = Some(eval.ensemble.unwrap_or_default());
    let mut t = base.clone();
    t.model.separate_stuff = false;
    t.model.fusion = false;
    t.object_distill = false;
    t.voxel_distill = false;
    let mut rows = Vec::with_capacity(5);
    let mut e = EvalConfig { ensemble: ens, ..*eval };
    rows.push(LadderRow {
        name: "baseline",
        train: t.clone(),
        eval: e,
    });
    t.model.separate_stuff = true;
    rows.push(LadderRow {
        name: "+assign",
        train: t.clone(),
        eval: e,
    });
    t.model.fusion = true;
    rows.push(LadderRow {
        name: "+fusion",
        train: t.clone(),
        eval: e,
    });
    t.object_distill = true;
    e.ensemble = None;
    rows.push(LadderRow {
        name: "+object",
        train: t.clone(),
        eval: e,
    });
    t.voxel_distill = true;
    rows.push(LadderRow {
        name: "+voxel",
        train: t,
        eval: e,
    });
    rows
}
