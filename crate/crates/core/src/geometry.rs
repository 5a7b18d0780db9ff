//! Voxelization, pinhole projection and lifting of pixel embeddings onto voxels.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{dim_err, Error, Result};
use crate::numerics::Tensor;

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

/// Unordered LiDAR points with optional per-point intensity.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Vec3>,
    intensity: Option<Vec<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>, intensity: Option<Vec<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Contract("point cloud must hold at least one point".into()));
        }
        if let Some(i) = points.iter().position(|p| p.iter().any(|x| !x.is_finite())) {
            return Err(Error::NonFinite { index: i });
        }
        if let Some(int) = &intensity {
            if int.len() != points.len() {
                return Err(dim_err("PointCloud::new", &[points.len()], &[int.len()]));
            }
            if let Some(i) = int.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite { index: i });
            }
        }
        Ok(Self { points, intensity })
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn intensity(&self) -> Option<&[f64]> {
        self.intensity.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Pinhole camera: world point `p` maps to `R p + t` in the camera frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: Mat3,
    pub translation: Vec3,
    pub width: usize,
    pub height: usize,
}

impl CameraModel {
    pub fn new(
        intrinsics: Mat3,
        extrinsics: [[f64; 4]; 4],
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let mut rotation = [[0.0; 3]; 3];
        let mut translation = [0.0; 3];
        for i in 0..3 {
            rotation[i].copy_from_slice(&extrinsics[i][..3]);
            translation[i] = extrinsics[i][3];
        }
        let cam = Self {
            fx: intrinsics[0][0],
            fy: intrinsics[1][1],
            cx: intrinsics[0][2],
            cy: intrinsics[1][2],
            rotation,
            translation,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Configuration("focal lengths must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Configuration("image size must be at least 1×1".into()));
        }
        let r = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let d: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if libm::fabs(d - want) > 1e-9 {
                    return Err(Error::Configuration("rotation block is not orthonormal".into()));
                }
            }
        }
        let finite = [self.fx, self.fy, self.cx, self.cy]
            .iter()
            .chain(self.translation.iter())
            .chain(r.iter().flatten())
            .all(|x| x.is_finite());
        if !finite {
            return Err(Error::Configuration("camera parameters must be finite".into()));
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> Mat3 {
        [
            [self.fx, 0.0, self.cx],
            [0.0, self.fy, self.cy],
            [0.0, 0.0, 1.0],
        ]
    }

    pub fn extrinsics(&self) -> [[f64; 4]; 4] {
        let mut e = [[0.0; 4]; 4];
        for i in 0..3 {
            e[i][..3].copy_from_slice(&self.rotation[i]);
            e[i][3] = self.translation[i];
        }
        e[3][3] = 1.0;
        e
    }

    pub fn to_camera(&self, p: Vec3) -> Vec3 {
        let r = &self.rotation;
        let mut out = self.translation;
        for (i, o) in out.iter_mut().enumerate() {
            *o += r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2];
        }
        out
    }

    /// Camera center in world coordinates, `−Rᵀ t`.
    pub fn center(&self) -> Vec3 {
        let (r, t) = (&self.rotation, &self.translation);
        let mut c = [0.0; 3];
        for (j, cj) in c.iter_mut().enumerate() {
            *cj = -(r[0][j] * t[0] + r[1][j] * t[1] + r[2][j] * t[2]);
        }
        c
    }

    /// World-frame direction of the ray through pixel coordinates `(u, v)`.
    pub fn ray_direction(&self, u: f64, v: f64) -> Vec3 {
        let dc = [(u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0];
        let r = &self.rotation;
        let mut d = [0.0; 3];
        for (j, dj) in d.iter_mut().enumerate() {
            *dj = r[0][j] * dc[0] + r[1][j] * dc[1] + r[2][j] * dc[2];
        }
        d
    }
}

/// Pixel coordinates of `point`, or `None` when behind the camera or off the image.
pub fn project(point: Vec3, cam: &CameraModel) -> Option<(f64, f64)> {
    let pc = cam.to_camera(point);
    if pc[2] <= 0.0 {
        return None;
    }
    let u = cam.fx * pc[0] / pc[2] + cam.cx;
    let v = cam.fy * pc[1] / pc[2] + cam.cy;
    let inside = u >= 0.0 && u < cam.width as f64 && v >= 0.0 && v < cam.height as f64;
    inside.then_some((u, v))
}

/// Regular axis-aligned grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub size: Vec3,
    pub origin: Vec3,
    pub extents: [usize; 3],
}

impl VoxelGrid {
    pub fn new(size: Vec3, origin: Vec3, extents: [usize; 3]) -> Result<Self> {
        let g = Self {
            size,
            origin,
            extents,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn cubic(size: f64, origin: Vec3, extents: [usize; 3]) -> Result<Self> {
        Self::new([size; 3], origin, extents)
    }

    pub fn validate(&self) -> Result<()> {
        if self.size.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::Configuration("voxel size must be positive".into()));
        }
        if self.extents.contains(&0) {
            return Err(Error::Configuration("grid extents must be at least 1".into()));
        }
        if self.origin.iter().any(|x| !x.is_finite()) {
            return Err(Error::Configuration("grid origin must be finite".into()));
        }
        Ok(())
    }

    /// Integer cell of `p`, which may lie outside the extents.
    pub fn cell(&self, p: Vec3) -> [i64; 3] {
        let mut c = [0i64; 3];
        for a in 0..3 {
            c[a] = libm::floor((p[a] - self.origin[a]) / self.size[a]) as i64;
        }
        c
    }

    pub fn contains(&self, c: [i64; 3]) -> bool {
        (0..3).all(|a| c[a] >= 0 && (c[a] as u64) < self.extents[a] as u64)
    }

    /// Geometric center of a cell.
    pub fn cell_center(&self, c: [usize; 3]) -> Vec3 {
        let mut out = [0.0; 3];
        for a in 0..3 {
            out[a] = self.origin[a] + (c[a] as f64 + 0.5) * self.size[a];
        }
        out
    }
}

/// Point-to-voxel map over occupied voxels in lexicographic cell order.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelAssignment {
    point_voxel: Vec<Option<usize>>,
    cells: Vec<[usize; 3]>,
    members: Vec<Vec<usize>>,
}

impl VoxelAssignment {
    /// Voxel of each point; `None` flags an out-of-bounds point.
    pub fn point_voxel(&self) -> &[Option<usize>] {
        &self.point_voxel
    }

    pub fn cells(&self) -> &[[usize; 3]] {
        &self.cells
    }

    pub fn members(&self, voxel: usize) -> &[usize] {
        &self.members[voxel]
    }

    pub fn all_members(&self) -> &[Vec<usize>] {
        &self.members
    }

    pub fn num_voxels(&self) -> usize {
        self.cells.len()
    }

    pub fn num_points(&self) -> usize {
        self.point_voxel.len()
    }

    pub fn out_of_bounds(&self) -> usize {
        self.point_voxel.iter().filter(|v| v.is_none()).count()
    }
}

pub fn voxelize(cloud: &PointCloud, grid: &VoxelGrid) -> VoxelAssignment {
    let mut by_cell: BTreeMap<[usize; 3], Vec<usize>> = BTreeMap::new();
    let mut cell_of = Vec::with_capacity(cloud.len());
    for (i, &p) in cloud.points().iter().enumerate() {
        let c = grid.cell(p);
        if grid.contains(c) {
            let key = [c[0] as usize, c[1] as usize, c[2] as usize];
            by_cell.entry(key).or_default().push(i);
            cell_of.push(Some(key));
        } else {
            cell_of.push(None);
        }
    }
    let index: BTreeMap<[usize; 3], usize> =
        by_cell.keys().enumerate().map(|(i, k)| (*k, i)).collect();
    let point_voxel = cell_of.iter().map(|c| c.map(|k| index[&k])).collect();
    let (cells, members) = by_cell.into_iter().unzip();
    VoxelAssignment {
        point_voxel,
        cells,
        members,
    }
}

/// Dense `height × width × dim` embedding image.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMap {
    width: usize,
    height: usize,
    dim: usize,
    data: Vec<f64>,
}

impl EmbeddingMap {
    pub fn new(width: usize, height: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * dim {
            return Err(dim_err(
                "EmbeddingMap::new",
                &[height, width, dim],
                &[data.len()],
            ));
        }
        if let Some(index) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            width,
            height,
            dim,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: &[f64]) -> Self {
        let data = value.repeat(width * height);
        Self {
            width,
            height,
            dim: value.len(),
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, col: usize, row: usize) -> &[f64] {
        let off = (row * self.width + col) * self.dim;
        &self.data[off..off + self.dim]
    }

    pub fn set_pixel(&mut self, col: usize, row: usize, value: &[f64]) {
        let off = (row * self.width + col) * self.dim;
        self.data[off..off + self.dim].copy_from_slice(value);
    }
}

/// Index of the first camera that sees each point, with its nearest pixel.
pub fn first_visible(cloud: &PointCloud, cams: &[CameraModel]) -> Vec<Option<(usize, usize, usize)>> {
    cloud
        .points()
        .iter()
        .map(|&p| {
            cams.iter().enumerate().find_map(|(ci, cam)| {
                project(p, cam).map(|(u, v)| {
                    let col = (libm::floor(u) as usize).min(cam.width - 1);
                    let row = (libm::floor(v) as usize).min(cam.height - 1);
                    (ci, col, row)
                })
            })
        })
        .collect()
}

/// Per-voxel mean of visible member-point embeddings; invalid voxels are zero.
pub fn lift_features(
    assign: &VoxelAssignment,
    cloud: &PointCloud,
    cams: &[CameraModel],
    maps: &[EmbeddingMap],
) -> Result<(Tensor, Vec<bool>)> {
    if cams.len() != maps.len() {
        return Err(Error::Configuration(alloc::format!(
            "{} cameras but {} embedding maps",
            cams.len(),
            maps.len()
        )));
    }
    if assign.num_points() != cloud.len() {
        return Err(dim_err("lift_features", &[assign.num_points()], &[cloud.len()]));
    }
    let dim = maps.first().map_or(0, EmbeddingMap::dim);
    for (cam, map) in cams.iter().zip(maps) {
        if map.width != cam.width || map.height != cam.height || map.dim != dim {
            return Err(Error::Configuration(
                "embedding map does not match its camera image size".into(),
            ));
        }
    }
    let v = assign.num_voxels();
    let mut feats = vec![0.0; v * dim];
    let mut counts = vec![0usize; v];
    let hits = first_visible(cloud, cams);
    for (p, hit) in hits.iter().enumerate() {
        let (Some(vox), Some((ci, col, row))) = (assign.point_voxel[p], hit) else {
            continue;
        };
        let px = maps[*ci].pixel(*col, *row);
        for (f, x) in feats[vox * dim..(vox + 1) * dim].iter_mut().zip(px) {
            *f += x;
        }
        counts[vox] += 1;
    }
    for (i, &c) in counts.iter().enumerate() {
        if c > 0 {
            for f in &mut feats[i * dim..(i + 1) * dim] {
                *f /= c as f64;
            }
        }
    }
    let valid = counts.iter().map(|&c| c > 0).collect();
    Ok((Tensor::new(&[v, dim], feats)?, valid))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    fn ident_cam(f: f64, c: f64, size: usize) -> CameraModel {
        CameraModel {
            fx: f,
            fy: f,
            cx: c,
            cy: c,
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
            width: size,
            height: size,
        }
    }

    fn random_rotation(rng: &mut ChaCha8Rng) -> Mat3 {
        let (a, b, c) = (
            rng.random_range(-3.0..3.0f64),
            rng.random_range(-1.5..1.5f64),
            rng.random_range(-3.0..3.0f64),
        );
        let rz = |t: f64| [[t.cos(), -t.sin(), 0.0], [t.sin(), t.cos(), 0.0], [0.0, 0.0, 1.0]];
        let ry = |t: f64| [[t.cos(), 0.0, t.sin()], [0.0, 1.0, 0.0], [-t.sin(), 0.0, t.cos()]];
        let mul = |x: Mat3, y: Mat3| {
            let mut o = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    o[i][j] = (0..3).map(|k| x[i][k] * y[k][j]).sum();
                }
            }
            o
        };
        mul(mul(rz(a), ry(b)), rz(c))
    }

    #[test]
    fn single_point_at_origin() {
        let cloud = PointCloud::new(alloc::vec![[0.0; 3]], None).unwrap();
        let grid = VoxelGrid::cubic(1.0, [0.0; 3], [4, 4, 4]).unwrap();
        let a = voxelize(&cloud, &grid);
        assert_eq!(a.cells(), &[[0, 0, 0]]);
        assert_eq!(a.point_voxel(), &[Some(0)]);
    }

    #[test]
    fn boundary_scaling() {
        let cloud = PointCloud::new(alloc::vec![[0.42, 0.5, 0.5], [0.52, 0.5, 0.5]], None).unwrap();
        let coarse = VoxelGrid::cubic(1.0, [0.0; 3], [2, 2, 2]).unwrap();
        assert_eq!(voxelize(&cloud, &coarse).num_voxels(), 1);
        let fine = VoxelGrid::cubic(0.05, [0.0; 3], [40, 40, 40]).unwrap();
        assert_eq!(voxelize(&cloud, &fine).num_voxels(), 2);
    }

    #[test]
    fn out_of_extent_points_are_flagged() {
        let cloud = PointCloud::new(alloc::vec![[0.5; 3], [-0.5, 0.5, 0.5], [9.0, 0.0, 0.0]], None)
            .unwrap();
        let grid = VoxelGrid::cubic(1.0, [0.0; 3], [2, 2, 2]).unwrap();
        let a = voxelize(&cloud, &grid);
        assert_eq!(a.point_voxel(), &[Some(0), None, None]);
        assert_eq!(a.out_of_bounds(), 2);
    }

    #[test]
    fn members_match_hash_grouping() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Vec3> = (0..1000)
            .map(|_| {
                [
                    rng.random_range(-6.0..6.0),
                    rng.random_range(-6.0..6.0),
                    rng.random_range(-1.0..3.0),
                ]
            })
            .collect();
        let cloud = PointCloud::new(pts.clone(), None).unwrap();
        let grid = VoxelGrid::cubic(0.7, [-5.0, -5.0, -1.0], [14, 14, 5]).unwrap();
        let a = voxelize(&cloud, &grid);
        let mut oracle: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, p) in pts.iter().enumerate() {
            let c = [
                ((p[0] + 5.0) / 0.7).floor() as i64,
                ((p[1] + 5.0) / 0.7).floor() as i64,
                ((p[2] + 1.0) / 0.7).floor() as i64,
            ];
            if c[0] >= 0 && c[0] < 14 && c[1] >= 0 && c[1] < 14 && c[2] >= 0 && c[2] < 5 {
                oracle.entry(c).or_default().push(i);
            }
        }
        assert_eq!(a.num_voxels(), oracle.len());
        for (v, cell) in a.cells().iter().enumerate() {
            let key = [cell[0] as i64, cell[1] as i64, cell[2] as i64];
            assert_eq!(a.members(v), oracle[&key].as_slice());
        }
        assert!(a.cells().windows(2).all(|w| w[0] < w[1]));
        let in_bounds: usize = oracle.values().map(Vec::len).sum();
        assert_eq!(a.num_points() - a.out_of_bounds(), in_bounds);
    }

    #[test]
    fn projection_basic_cases() {
        let cam = ident_cam(100.0, 50.0, 100);
        assert_eq!(project([0.0, 0.0, 5.0], &cam), Some((50.0, 50.0)));
        assert_eq!(project([0.0, 0.0, -1.0], &cam), None);
        assert_eq!(project([10.0, 0.0, 5.0], &cam), None);
    }

    #[test]
    fn projection_matches_homogeneous_pipeline() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut checked = 0;
        for _ in 0..200 {
            let rotation = random_rotation(&mut rng);
            let cam = CameraModel {
                fx: rng.random_range(20.0..80.0),
                fy: rng.random_range(20.0..80.0),
                cx: 32.0,
                cy: 30.0,
                rotation,
                translation: [
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(3.0..6.0),
                ],
                width: 64,
                height: 60,
            };
            cam.validate().unwrap();
            let p = [
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            ];
            // P = K [R | t] applied to homogeneous p
            let k = cam.intrinsics();
            let e = cam.extrinsics();
            let ph = [p[0], p[1], p[2], 1.0];
            let mut cam_h = [0.0; 3];
            for i in 0..3 {
                cam_h[i] = (0..4).map(|j| e[i][j] * ph[j]).sum();
            }
            let mut img = [0.0; 3];
            for i in 0..3 {
                img[i] = (0..3).map(|j| k[i][j] * cam_h[j]).sum();
            }
            let expected = if img[2] > 0.0 {
                let (u, v) = (img[0] / img[2], img[1] / img[2]);
                ((0.0..64.0).contains(&u) && (0.0..60.0).contains(&v)).then_some((u, v))
            } else {
                None
            };
            match (project(p, &cam), expected) {
                (Some(a), Some(b)) => {
                    assert!((a.0 - b.0).abs() < 1e-9 && (a.1 - b.1).abs() < 1e-9);
                    checked += 1;
                }
                (None, None) => {}
                other => panic!("mismatch {other:?}"),
            }
        }
        assert!(checked > 20);
    }

    #[test]
    fn camera_rejects_non_orthonormal_rotation() {
        let mut e = [[0.0; 4]; 4];
        e[0][0] = 1.0;
        e[1][1] = 2.0;
        e[2][2] = 1.0;
        let k = [[10.0, 0.0, 5.0], [0.0, 10.0, 5.0], [0.0, 0.0, 1.0]];
        assert!(CameraModel::new(k, e, 10, 10).is_err());
        e[1][1] = 1.0;
        assert!(CameraModel::new(k, e, 10, 10).is_ok());
    }

    #[test]
    fn constant_pixel_voxel_is_that_embedding() {
        let cam = ident_cam(100.0, 50.0, 100);
        let e = [0.6, 0.8, 0.0];
        let map = EmbeddingMap::filled(100, 100, &e);
        let cloud = PointCloud::new(alloc::vec![[0.01, 0.01, 5.1], [0.02, 0.0, 5.2]], None).unwrap();
        let grid = VoxelGrid::cubic(1.0, [-1.0, -1.0, 5.0], [2, 2, 2]).unwrap();
        let a = voxelize(&cloud, &grid);
        let (f, valid) = lift_features(&a, &cloud, &[cam], &[map]).unwrap();
        assert_eq!(valid, alloc::vec![true]);
        for (x, y) in f.row(0).iter().zip(e) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn voxel_behind_camera_is_zero_padded() {
        let cam = ident_cam(100.0, 50.0, 100);
        let map = EmbeddingMap::filled(100, 100, &[1.0, 0.0]);
        let cloud = PointCloud::new(alloc::vec![[0.0, 0.0, -3.5], [0.0, 0.0, 5.5]], None).unwrap();
        let grid = VoxelGrid::cubic(1.0, [-1.0, -1.0, -4.0], [2, 2, 10]).unwrap();
        let a = voxelize(&cloud, &grid);
        let (f, valid) = lift_features(&a, &cloud, &[cam], &[map]).unwrap();
        assert_eq!(valid, alloc::vec![false, true]);
        assert_eq!(f.row(0), &[0.0, 0.0]);
    }

    #[test]
    fn mixed_visibility_matches_manual_average() {
        let cam = ident_cam(10.0, 5.0, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data: Vec<f64> = (0..10 * 10 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let map = EmbeddingMap::new(10, 10, 3, data).unwrap();
        // three visible points at distinct pixels, one off-image
        let pts = alloc::vec![[0.05, 0.05, 1.2], [0.35, 0.1, 1.4], [-0.2, 0.3, 1.1], [0.9, 0.9, 1.0]];
        let cloud = PointCloud::new(pts.clone(), None).unwrap();
        let grid = VoxelGrid::cubic(2.0, [-1.0, -1.0, 0.5], [1, 1, 1]).unwrap();
        let a = voxelize(&cloud, &grid);
        assert_eq!(a.num_voxels(), 1);
        let (f, valid) = lift_features(&a, &cloud, std::slice::from_ref(&cam), std::slice::from_ref(&map)).unwrap();
        let mut want = [0.0; 3];
        let mut n = 0.0;
        for p in &pts {
            let (x, y) = (p[0] / p[2] * 10.0 + 5.0, p[1] / p[2] * 10.0 + 5.0);
            if (0.0..10.0).contains(&x) && (0.0..10.0).contains(&y) {
                let px = map.pixel(x.floor() as usize, y.floor() as usize);
                for k in 0..3 {
                    want[k] += px[k];
                }
                n += 1.0;
            }
        }
        assert_eq!(n, 3.0);
        assert!(valid[0]);
        for k in 0..3 {
            assert!((f.row(0)[k] - want[k] / n).abs() < 1e-12);
        }
    }

    #[test]
    fn camera_count_mismatch_is_configuration_error() {
        let cloud = PointCloud::new(alloc::vec![[0.0; 3]], None).unwrap();
        let grid = VoxelGrid::cubic(1.0, [-1.0; 3], [2, 2, 2]).unwrap();
        let a = voxelize(&cloud, &grid);
        let r = lift_features(&a, &cloud, &[ident_cam(1.0, 1.0, 2)], &[]);
        assert!(matches!(r, Err(Error::Configuration(_))));
    }
}
