//! Finite-difference checks of every loss component on small random scenes.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::geometry::{voxelize, PointCloud, VoxelGrid};
use crate::model::{Model, ModelConfig, ParamVars};
use crate::numerics::gradcheck::rel_error;
use crate::numerics::{Branches, Graph, Tensor};
use crate::sample::{voxel_stats, Sample, STAT_DIM};
use crate::train::{scene_loss, LossPlan, Task, TrainConfig};
use crate::vocab::{build_text_embeddings, PrototypeProvider, Vocabulary};

/// Central-difference step.
pub const STEP: f64 = 3e-4;

pub const COMPONENTS: [&str; 5] = ["cls", "mask", "object", "voxel", "total"];

/// A model, configuration and scene small enough for exhaustive finite differences.
#[derive(Debug, Clone)]
pub struct TinyInstance {
    pub model: Model,
    pub config: TrainConfig,
    pub task: Task,
    pub sample: Sample,
}

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        lidar_hidden: 6,
        d_lidar: 4,
        d_emb: 8,
        d_q: 8,
        q_learn: 4,
        stuff_queries: 2,
        layers: 2,
        ffn_hidden: 12,
        mask_width: 6,
        ..ModelConfig::default()
    }
}

fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
        if n > 0.1 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// 50 voxels of two points each, one instance per thing class, a fifth of
/// the voxels without image features.
pub fn tiny_instance(seed: u64) -> Result<TinyInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = Vocabulary::street();
    let mc = tiny_config();
    let d = mc.d_emb;
    let provider = PrototypeProvider {
        seed,
        dim: d,
        prototypes: (0..vocab.len()).map(|_| unit(&mut rng, d)).collect(),
        unknown: vec![0.0; d],
        label_noise: 0.1,
    };
    let text = build_text_embeddings(&vocab, &provider)?;
    let grid = VoxelGrid::cubic(1.0, [-12.0, -12.0, -0.5], [24, 24, 5])?;
    let v = 50;
    let mut cells: Vec<[usize; 3]> = Vec::with_capacity(v);
    while cells.len() < v {
        let c = [rng.random_range(0..24), rng.random_range(0..24), rng.random_range(0..5)];
        if !cells.contains(&c) {
            cells.push(c);
        }
    }
    let mut points = Vec::with_capacity(2 * v);
    let mut intensity = Vec::with_capacity(2 * v);
    let mut cell_class = Vec::with_capacity(v);
    for c in &cells {
        let class = rng.random_range(0..vocab.len());
        cell_class.push(class);
        for _ in 0..2 {
            points.push([
                -12.0 + c[0] as f64 + rng.random_range(0.1..0.9),
                -12.0 + c[1] as f64 + rng.random_range(0.1..0.9),
                -0.5 + c[2] as f64 + rng.random_range(0.1..0.9),
            ]);
            intensity.push(rng.random_range(0.0..1.0));
        }
    }
    let cloud = PointCloud::new(points, Some(intensity))?;
    let point_class: Vec<usize> = (0..2 * v).map(|i| cell_class[i / 2]).collect();
    let point_instance: Vec<u32> = point_class
        .iter()
        .map(|&c| u32::from(vocab.class(c).is_thing))
        .collect();
    let assign = voxelize(&cloud, &grid);
    let mut stats = Vec::with_capacity(v * STAT_DIM);
    let mut centroids = Vec::with_capacity(v);
    let mut voxel_semantic = Vec::with_capacity(v);
    let mut voxel_instance = Vec::with_capacity(v);
    let mut features = Vec::with_capacity(v * d);
    let mut valid = Vec::with_capacity(v);
    for k in 0..assign.num_voxels() {
        let members = assign.members(k);
        let s = voxel_stats(&cloud, members);
        stats.extend_from_slice(&s.features(&grid));
        centroids.push(s.centroid);
        voxel_semantic.push(point_class[members[0]]);
        voxel_instance.push(point_instance[members[0]]);
        let ok = rng.random_bool(0.8);
        valid.push(ok);
        if ok {
            features.extend(unit(&mut rng, d));
        } else {
            features.extend(core::iter::repeat_n(0.0, d));
        }
    }
    let sample = Sample {
        id: seed,
        stats: Tensor::new(&[v, STAT_DIM], stats)?,
        centroids,
        features: Tensor::new(&[v, d], features)?,
        valid,
        voxel_semantic,
        voxel_instance,
        point_semantic: point_class,
        point_instance,
        point_visible: vec![true; 2 * v],
        assign,
    };
    let mut config = TrainConfig::new(seed);
    config.model = mc.clone();
    let task = Task::new(vocab, text, &mc)?;
    let model = Model::init(mc, seed)?;
    Ok(TinyInstance {
        model,
        config,
        task,
        sample,
    })
}

fn component_values(inst: &TinyInstance, model: &Model, plan: &LossPlan, branches: &Branches) -> Result<Vec<f64>> {
    let mut g = Graph::replaying(branches.clone());
    let pv = ParamVars::register(&mut g, &model.params);
    let loss = scene_loss(model, &inst.config, &inst.task, &inst.sample, &mut g, pv, false, Some(plan))?;
    let mut out: Vec<f64> = loss.terms.iter().map(|t| g.value(t.value).item()).collect();
    out.push(g.value(loss.total).item());
    Ok(out)
}

/// Worst relative error between reverse-mode gradients and fourth-order
/// central differences (`±h`, `±2h`) over every trainable scalar, per
/// component in [`COMPONENTS`] order.
///
/// The perturbed evaluations hold the matching, the pooling targets and every
/// non-smooth branch (ReLU side, max winner, clip side, L1 sign) at their
/// unperturbed choices, so differences never straddle a kink.
pub fn check_instance(inst: &TinyInstance, h: f64) -> Result<Vec<f64>> {
    let mut g = Graph::recording();
    let pv = ParamVars::register(&mut g, &inst.model.params);
    let loss = scene_loss(
        &inst.model,
        &inst.config,
        &inst.task,
        &inst.sample,
        &mut g,
        pv.clone(),
        false,
        None,
    )?;
    let mut outputs: Vec<_> = loss.terms.iter().map(|t| t.value).collect();
    outputs.push(loss.total);
    let branches = g.branches();
    let mut analytic = Vec::with_capacity(outputs.len());
    for &o in &outputs {
        let grads = g.backward(o)?;
        analytic.push(
            pv.vars
                .iter()
                .map(|&v| grads.get_or_zeros(&g, v))
                .collect::<Vec<Tensor>>(),
        );
    }
    let mut worst = vec![0.0f64; outputs.len()];
    let mut model = inst.model.clone();
    for i in 0..model.params.len() {
        if !model.params.is_trainable(i) {
            continue;
        }
        for k in 0..model.params.tensors()[i].len() {
            let orig = model.params.tensors()[i].data()[k];
            let mut at = |offset: f64| {
                model.params.tensors_mut()[i].data_mut()[k] = orig + offset;
                component_values(inst, &model, &loss.plan, &branches)
            };
            let (p1, m1, p2, m2) = (at(h)?, at(-h)?, at(2.0 * h)?, at(-2.0 * h)?);
            model.params.tensors_mut()[i].data_mut()[k] = orig;
            let numeric: Vec<f64> = (0..outputs.len())
                .map(|c| (8.0 * (p1[c] - m1[c]) - (p2[c] - m2[c])) / (12.0 * h))
                .collect();
            for c in 0..outputs.len() {
                worst[c] = worst[c].max(rel_error(analytic[c][i].data()[k], numeric[c]));
            }
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentCheck {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub tol: f64,
    pub passed: bool,
}

/// Runs [`check_instance`] on seeds `0..instances`.
pub fn gradient_suite(instances: u64, tol: f64) -> Result<Vec<ComponentCheck>> {
    let mut worst = [0.0f64; 5];
    for seed in 0..instances {
        let inst = tiny_instance(seed)?;
        for (w, e) in worst.iter_mut().zip(check_instance(&inst, STEP)?) {
            *w = w.max(e);
        }
    }
    Ok(COMPONENTS
        .iter()
        .zip(worst)
        .map(|(&name, e)| ComponentCheck {
            name,
            max_rel_error: e,
            tol,
            passed: e < tol,
        })
        .collect())
}

/// Largest absolute gradient reaching the image features or the label
/// embeddings from the total loss.
pub fn frozen_gradient(inst: &TinyInstance) -> Result<f64> {
    let mut g = Graph::new();
    let pv = ParamVars::register(&mut g, &inst.model.params);
    let loss = scene_loss(
        &inst.model,
        &inst.config,
        &inst.task,
        &inst.sample,
        &mut g,
        pv,
        true,
        None,
    )?;
    let grads = g.backward(loss.total)?;
    let frozen = [loss.forward.frozen.features, loss.forward.frozen.text];
    Ok(frozen
        .iter()
        .filter_map(|&v| grads.get(v))
        .flat_map(|t| t.data().iter())
        .fold(0.0f64, |m, x| m.max(libm::fabs(*x))))
}
