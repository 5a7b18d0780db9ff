//! Per-scene training and evaluation inputs: voxel statistics, lifted image
//! embeddings and majority-vote voxel labels.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{dim_err, Result};
use crate::geometry::{first_visible, lift_features, voxelize, PointCloud, Vec3, VoxelAssignment, VoxelGrid};
use crate::numerics::Tensor;
use crate::scene::Scene;
use crate::vocab::Vocabulary;

/// Width of a voxel statistics row.
pub const STAT_DIM: usize = 8;

/// Raw statistics of the points inside one voxel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelStats {
    pub count: usize,
    pub centroid: Vec3,
    /// Population variance per axis.
    pub variance: Vec3,
    pub mean_intensity: f64,
}

pub fn voxel_stats(cloud: &PointCloud, members: &[usize]) -> VoxelStats {
    let n = members.len().max(1) as f64;
    let pts = cloud.points();
    let mut centroid = [0.0; 3];
    for &i in members {
        for a in 0..3 {
            centroid[a] += pts[i][a];
        }
    }
    for c in &mut centroid {
        *c /= n;
    }
    let mut variance = [0.0; 3];
    for &i in members {
        for a in 0..3 {
            let d = pts[i][a] - centroid[a];
            variance[a] += d * d;
        }
    }
    for v in &mut variance {
        *v /= n;
    }
    let mean_intensity = cloud
        .intensity()
        .map_or(0.0, |int| members.iter().map(|&i| int[i]).sum::<f64>() / n);
    VoxelStats {
        count: members.len(),
        centroid,
        variance,
        mean_intensity,
    }
}

impl VoxelStats {
    /// Encoder input row: log count, centroid in grid coordinates scaled to
    /// [-1, 1], variances in voxel units, mean intensity.
    pub fn features(&self, grid: &VoxelGrid) -> [f64; STAT_DIM] {
        let mut out = [0.0; STAT_DIM];
        out[0] = libm::log1p(self.count as f64) / libm::log(32.0);
        for a in 0..3 {
            let half = grid.size[a] * grid.extents[a] as f64 / 2.0;
            let center = grid.origin[a] + half;
            out[1 + a] = (self.centroid[a] - center) / half;
            out[4 + a] = 10.0 * self.variance[a] / (grid.size[a] * grid.size[a]);
        }
        out[7] = self.mean_intensity;
        out
    }
}

/// Majority `(class, instance)` over a voxel's points; ties go to the smallest pair.
pub fn majority_label(semantic: &[usize], instance: &[u32], members: &[usize]) -> (usize, u32) {
    let mut counts: BTreeMap<(usize, u32), usize> = BTreeMap::new();
    for &i in members {
        *counts.entry((semantic[i], instance[i])).or_default() += 1;
    }
    let mut best = ((0, 0), 0);
    for (k, c) in counts {
        if c > best.1 {
            best = (k, c);
        }
    }
    best.0
}

/// One scene prepared for the network and the metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: u64,
    pub assign: VoxelAssignment,
    /// `V × STAT_DIM` encoder input.
    pub stats: Tensor,
    pub centroids: Vec<Vec3>,
    /// `V × D_emb` lifted image embeddings, zero rows where invalid.
    pub features: Tensor,
    pub valid: Vec<bool>,
    pub voxel_semantic: Vec<usize>,
    pub voxel_instance: Vec<u32>,
    pub point_semantic: Vec<usize>,
    pub point_instance: Vec<u32>,
    /// Whether any camera sees the point.
    pub point_visible: Vec<bool>,
}

impl Sample {
    pub fn num_voxels(&self) -> usize {
        self.assign.num_voxels()
    }

    pub fn num_points(&self) -> usize {
        self.point_semantic.len()
    }
}

pub fn prepare(scene: &Scene, grid: &VoxelGrid) -> Result<Sample> {
    let n = scene.cloud.len();
    if scene.semantic.len() != n || scene.instance.len() != n {
        return Err(dim_err("prepare", &[n, n], &[scene.semantic.len(), scene.instance.len()]));
    }
    let assign = voxelize(&scene.cloud, grid);
    let v = assign.num_voxels();
    let (features, valid) = lift_features(&assign, &scene.cloud, &scene.rig, &scene.maps)?;
    let mut stats = Vec::with_capacity(v * STAT_DIM);
    let mut centroids = Vec::with_capacity(v);
    let mut voxel_semantic = Vec::with_capacity(v);
    let mut voxel_instance = Vec::with_capacity(v);
    for k in 0..v {
        let members = assign.members(k);
        let s = voxel_stats(&scene.cloud, members);
        stats.extend_from_slice(&s.features(grid));
        centroids.push(s.centroid);
        let (c, i) = majority_label(&scene.semantic, &scene.instance, members);
        voxel_semantic.push(c);
        voxel_instance.push(i);
    }
    let point_visible = first_visible(&scene.cloud, &scene.rig)
        .iter()
        .map(Option::is_some)
        .collect();
    Ok(Sample {
        id: scene.id,
        stats: Tensor::new(&[v, STAT_DIM], stats)?,
        centroids,
        features,
        valid,
        voxel_semantic,
        voxel_instance,
        point_semantic: scene.semantic.clone(),
        point_instance: scene.instance.clone(),
        point_visible,
        assign,
    })
}

/// Voxel-level ground-truth segment.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub class: usize,
    /// 0 for stuff.
    pub instance: u32,
    pub mask: Vec<bool>,
}

/// Segments of the voxel labels in `(class, instance)` order, optionally base classes only.
pub fn voxel_segments(sample: &Sample, vocab: &Vocabulary, base_only: bool) -> Vec<Segment> {
    let v = sample.num_voxels();
    let mut by_key: BTreeMap<(usize, u32), Vec<bool>> = BTreeMap::new();
    for k in 0..v {
        let c = sample.voxel_semantic[k];
        if base_only && !vocab.class(c).is_base {
            continue;
        }
        let key = (c, if vocab.class(c).is_thing { sample.voxel_instance[k] } else { 0 });
        by_key.entry(key).or_insert_with(|| vec![false; v])[k] = true;
    }
    by_key
        .into_iter()
        .map(|((class, instance), mask)| Segment { class, instance, mask })
        .collect()
}

/// Voxels whose label is a base class; the others are unlabeled during training.
pub fn base_voxels(sample: &Sample, vocab: &Vocabulary) -> Vec<bool> {
    sample
        .voxel_semantic
        .iter()
        .map(|&c| vocab.class(c).is_base)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{make_dataset, SceneConfig};
    use crate::vocab::gen_prototypes;
    use proptest::prelude::*;

    fn cloud(points: Vec<Vec3>) -> PointCloud {
        let n = points.len();
        PointCloud::new(points, Some((0..n).map(|i| i as f64 * 0.1).collect())).unwrap()
    }

    #[test]
    fn single_point_voxel() {
        let c = cloud(vec![[1.5, -2.25, 0.5]]);
        let s = voxel_stats(&c, &[0]);
        assert_eq!(s.centroid, [1.5, -2.25, 0.5]);
        assert_eq!(s.variance, [0.0; 3]);
        assert_eq!(s.count, 1);
    }

    #[test]
    fn stats_match_direct_formulas() {
        let c = cloud(vec![[0.0, 0.0, 0.0], [1.0, 2.0, 3.0], [2.0, 1.0, 0.0]]);
        let s = voxel_stats(&c, &[0, 1, 2]);
        assert_eq!(s.centroid, [1.0, 1.0, 1.0]);
        assert!((s.variance[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.variance[2] - 2.0).abs() < 1e-15);
        assert!((s.mean_intensity - 0.1).abs() < 1e-15);
    }

    #[test]
    fn majority_ties_go_to_smallest_pair() {
        let sem = [3, 1, 1, 3];
        let inst = [2, 0, 0, 2];
        assert_eq!(majority_label(&sem, &inst, &[0, 1, 2, 3]), (1, 0));
        assert_eq!(majority_label(&sem, &inst, &[0, 1, 3]), (3, 2));
    }

    #[test]
    fn prepared_scene_is_consistent() {
        let vocab = Vocabulary::street();
        let provider = gen_prototypes(0, vocab.len(), 16).unwrap();
        let cfg = SceneConfig::street(&vocab).unwrap();
        let (scenes, _) = make_dataset(&cfg, &vocab, &provider, 1, 0, 5).unwrap();
        let s = prepare(&scenes[0], &cfg.grid).unwrap();
        let v = s.num_voxels();
        assert_eq!(s.stats.shape(), &[v, STAT_DIM]);
        assert_eq!(s.features.shape(), &[v, 16]);
        for k in 0..v {
            if !s.valid[k] {
                assert!(s.features.row(k).iter().all(|&x| x == 0.0));
            }
        }
        let segs = voxel_segments(&s, &vocab, false);
        let covered: usize = segs.iter().map(|g| g.mask.iter().filter(|&&m| m).count()).sum();
        assert_eq!(covered, v);
        for g in voxel_segments(&s, &vocab, true) {
            assert!(vocab.class(g.class).is_base);
        }
    }

    proptest! {
        #[test]
        fn stats_are_permutation_invariant(
            pts in proptest::collection::vec(proptest::array::uniform3(-1.0f64..1.0), 1..12),
            rot in 0usize..12,
        ) {
            let c = cloud(pts.clone());
            let order: Vec<usize> = (0..pts.len()).collect();
            let mut shuffled = order.clone();
            shuffled.rotate_left(rot % pts.len());
            let a = voxel_stats(&c, &order);
            let b = voxel_stats(&c, &shuffled);
            for k in 0..3 {
                prop_assert!((a.centroid[k] - b.centroid[k]).abs() < 1e-12);
                prop_assert!((a.variance[k] - b.variance[k]).abs() < 1e-12);
            }
            prop_assert!((a.mean_intensity - b.mean_intensity).abs() < 1e-12);
        }
    }
}
