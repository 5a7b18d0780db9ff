//! Synthetic street scenes: a road band flanked by sidewalks, a vegetated
//! periphery, and box-shaped objects, seen by top-down cameras whose pixels
//! carry noisy class prototypes.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::error::{Error, Result};
use crate::geometry::{CameraModel, EmbeddingMap, PointCloud, Vec3, VoxelGrid};
use crate::rng::{stream, Stream};
use crate::vocab::{PrototypeProvider, Vocabulary};

/// Box-shaped object class and how many instances a scene holds.
#[derive(Debug, Clone, PartialEq)]
pub struct ThingSpec {
    pub class: usize,
    /// Length along the road, width across it, height.
    pub dims: [f64; 3],
    pub count: (usize, usize),
    /// Restricted to the road band (otherwise road or sidewalk).
    pub road_only: bool,
}

/// Stuff layout: a straight road band, sidewalks on both sides and a periphery.
#[derive(Debug, Clone, PartialEq)]
pub struct StuffSpec {
    pub road: usize,
    pub sidewalk: usize,
    pub periphery: usize,
    /// Inclusive range of integer road widths in meters.
    pub road_width: (u32, u32),
    /// Inclusive range of integer sidewalk widths in meters.
    pub sidewalk_width: (u32, u32),
    /// Inclusive range of the integer road-center offset.
    pub center_offset: (i32, i32),
    pub sidewalk_height: f64,
    /// Periphery points rise uniformly up to this height.
    pub periphery_height: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    /// The scene covers `[-half_extent, half_extent]²` in x and y.
    pub half_extent: f64,
    pub things: Vec<ThingSpec>,
    pub stuff: StuffSpec,
    /// Surface sampling rate of objects, points per square meter.
    pub object_density: f64,
    /// Points per instance are clamped into this range.
    pub points_per_instance: (usize, usize),
    /// Ground points per square meter.
    pub ground_density: f64,
    pub ground_noise: f64,
    /// Mean intensity per class; per-point noise is added on top.
    pub intensity: Vec<f64>,
    pub intensity_noise: f64,
    /// Gap kept between object footprints.
    pub min_gap: f64,
    pub pixel_noise: f64,
    /// Fraction of the x extent left outside every camera frustum.
    pub outside_fraction: f64,
    pub image_size: usize,
    pub cameras: usize,
    pub camera_height: f64,
    pub grid: VoxelGrid,
    pub placement_retries: usize,
}

impl SceneConfig {
    /// Default street scenes for [`Vocabulary::street`]-style vocabularies.
    pub fn street(vocab: &Vocabulary) -> Result<Self> {
        let thing = |name: &str, dims: [f64; 3], count: (usize, usize), road_only: bool| {
            vocab.index_of(name).map(|class| ThingSpec {
                class,
                dims,
                count,
                road_only,
            })
        };
        let things = vec![
            thing("car", [4.4, 1.9, 1.6], (1, 3), true)?,
            thing("pedestrian", [0.7, 0.7, 1.8], (0, 2), false)?,
            thing("bicycle", [1.8, 0.6, 1.2], (0, 2), false)?,
            thing("barrier", [2.4, 0.5, 1.0], (0, 2), false)?,
            thing("bus", [7.0, 2.5, 3.0], (0, 2), true)?,
        ];
        let mut intensity = vec![0.5; vocab.len()];
        for (name, v) in [
            ("car", 0.70),
            ("pedestrian", 0.30),
            ("bicycle", 0.50),
            ("barrier", 0.90),
            ("bus", 0.60),
            ("road", 0.10),
            ("sidewalk", 0.35),
            ("vegetation", 0.45),
        ] {
            intensity[vocab.index_of(name)?] = v;
        }
        let half = 12.0;
        Ok(Self {
            half_extent: half,
            things,
            stuff: StuffSpec {
                road: vocab.index_of("road")?,
                sidewalk: vocab.index_of("sidewalk")?,
                periphery: vocab.index_of("vegetation")?,
                road_width: (6, 9),
                sidewalk_width: (2, 3),
                center_offset: (-3, 3),
                sidewalk_height: 0.15,
                periphery_height: 1.2,
            },
            object_density: 6.0,
            points_per_instance: (30, 160),
            ground_density: 5.0,
            ground_noise: 0.02,
            intensity,
            intensity_noise: 0.08,
            min_gap: 1.0,
            pixel_noise: 0.05,
            outside_fraction: 0.2,
            image_size: 64,
            cameras: 2,
            camera_height: 20.0,
            grid: VoxelGrid::cubic(1.0, [-half, -half, -0.5], [24, 24, 5])?,
            placement_retries: 200,
        })
    }

    pub fn validate(&self, vocab: &Vocabulary) -> Result<()> {
        let bad = |m: &str| Err(Error::Configuration(m.into()));
        if !(self.half_extent > 0.0) {
            return bad("half extent must be positive");
        }
        if !(self.pixel_noise >= 0.0) {
            return bad("pixel noise must be non-negative");
        }
        if !(0.0..1.0).contains(&self.outside_fraction) {
            return bad("outside fraction must lie in [0, 1)");
        }
        if self.points_per_instance.0 > self.points_per_instance.1
            || self.points_per_instance.0 == 0
        {
            return bad("points per instance range is empty");
        }
        let s = &self.stuff;
        if s.road_width.0 > s.road_width.1
            || s.sidewalk_width.0 > s.sidewalk_width.1
            || s.center_offset.0 > s.center_offset.1
        {
            return bad("stuff layout range is empty");
        }
        let outer = f64::from(s.road_width.1) / 2.0
            + f64::from(s.sidewalk_width.1)
            + f64::from(s.center_offset.0.unsigned_abs().max(s.center_offset.1.unsigned_abs()));
        if outer >= self.half_extent {
            return bad("road and sidewalks must leave room for the periphery");
        }
        for t in &self.things {
            if t.count.0 > t.count.1 {
                return bad("instance count range is empty");
            }
            if t.class >= vocab.len() || !vocab.class(t.class).is_thing {
                return bad("thing spec must reference a thing class");
            }
            if t.dims.iter().any(|&d| !(d > 0.0)) {
                return bad("object dimensions must be positive");
            }
        }
        for c in [s.road, s.sidewalk, s.periphery] {
            if c >= vocab.len() || vocab.class(c).is_thing {
                return bad("stuff layout must reference stuff classes");
            }
        }
        if self.intensity.len() != vocab.len() {
            return bad("one mean intensity per class is required");
        }
        if self.cameras == 0 || self.image_size == 0 || !(self.camera_height > 0.0) {
            return bad("camera rig is empty");
        }
        self.grid.validate()
    }
}

/// Axis-aligned object box with its class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Placed {
    pub class: usize,
    pub min: Vec3,
    pub max: Vec3,
}

impl Placed {
    fn footprint_contains(&self, x: f64, y: f64) -> bool {
        self.min[0] <= x && x <= self.max[0] && self.min[1] <= y && y <= self.max[1]
    }

    fn clear_of(&self, o: &Placed, gap: f64) -> bool {
        self.min[0] > o.max[0] + gap
            || self.max[0] < o.min[0] - gap
            || self.min[1] > o.max[1] + gap
            || self.max[1] < o.min[1] - gap
    }

    /// Entry distance of the ray `origin + t·dir`, if it hits in front of the origin.
    fn ray_entry(&self, origin: Vec3, dir: Vec3) -> Option<f64> {
        let (mut tmin, mut tmax) = (f64::NEG_INFINITY, f64::INFINITY);
        for a in 0..3 {
            if libm::fabs(dir[a]) < 1e-12 {
                if origin[a] < self.min[a] || origin[a] > self.max[a] {
                    return None;
                }
            } else {
                let t1 = (self.min[a] - origin[a]) / dir[a];
                let t2 = (self.max[a] - origin[a]) / dir[a];
                tmin = tmin.max(t1.min(t2));
                tmax = tmax.min(t1.max(t2));
            }
        }
        (tmin <= tmax && tmin > 0.0).then_some(tmin)
    }
}

/// Road band geometry of one scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Layout {
    /// 0: the band runs along y (x is the across coordinate); 1: along x.
    pub axis: usize,
    pub center: f64,
    pub road_width: f64,
    pub sidewalk_width: f64,
}

impl Layout {
    fn across(&self, x: f64, y: f64) -> f64 {
        if self.axis == 0 {
            x
        } else {
            y
        }
    }

    pub fn ground_class(&self, stuff: &StuffSpec, x: f64, y: f64) -> usize {
        let d = libm::fabs(self.across(x, y) - self.center);
        if d <= self.road_width / 2.0 {
            stuff.road
        } else if d <= self.road_width / 2.0 + self.sidewalk_width {
            stuff.sidewalk
        } else {
            stuff.periphery
        }
    }
}

/// One labeled scene. Stuff points carry instance id 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub id: u64,
    pub cloud: PointCloud,
    pub semantic: Vec<usize>,
    pub instance: Vec<u32>,
    pub rig: Vec<CameraModel>,
    pub maps: Vec<EmbeddingMap>,
}

impl Scene {
    pub fn validate(&self, vocab: &Vocabulary) -> Result<()> {
        let n = self.cloud.len();
        if self.semantic.len() != n || self.instance.len() != n {
            return Err(crate::error::dim_err(
                "Scene",
                &[n, n],
                &[self.semantic.len(), self.instance.len()],
            ));
        }
        for (&s, &i) in self.semantic.iter().zip(&self.instance) {
            if s >= vocab.len() {
                return Err(Error::Contract(alloc::format!("semantic index {s} out of range")));
            }
            if vocab.class(s).is_thing != (i >= 1) {
                return Err(Error::Contract(
                    "things need instance ids >= 1 and stuff needs id 0".into(),
                ));
            }
        }
        if self.rig.len() != self.maps.len() {
            return Err(Error::Configuration("one embedding map per camera".into()));
        }
        Ok(())
    }

    /// Distinct instance ids per class.
    pub fn instance_census(&self, classes: usize) -> Vec<usize> {
        let mut seen: Vec<Vec<u32>> = vec![Vec::new(); classes];
        for (&s, &i) in self.semantic.iter().zip(&self.instance) {
            if i >= 1 && !seen[s].contains(&i) {
                seen[s].push(i);
            }
        }
        seen.iter().map(Vec::len).collect()
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

fn place_things(
    cfg: &SceneConfig,
    layout: &Layout,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Placed>> {
    let half = cfg.half_extent;
    let s = &cfg.stuff;
    let mut boxes: Vec<Placed> = Vec::new();
    // large footprints first: they are the hardest to fit
    let mut order: Vec<&ThingSpec> = cfg.things.iter().collect();
    order.sort_by(|a, b| (b.dims[0] * b.dims[1]).total_cmp(&(a.dims[0] * a.dims[1])));
    for spec in order {
        let n = rng.random_range(spec.count.0..=spec.count.1);
        let [len, wid, h] = spec.dims;
        // footprint extents in x and y
        let (dx, dy) = if layout.axis == 0 { (wid, len) } else { (len, wid) };
        for _ in 0..n {
            let mut placed = None;
            for _ in 0..cfg.placement_retries {
                let across = if spec.road_only {
                    let margin = 0.5 + wid / 2.0;
                    uniform(
                        rng,
                        layout.center - layout.road_width / 2.0 + margin,
                        layout.center + layout.road_width / 2.0 - margin,
                    )
                } else {
                    let reach = layout.road_width / 2.0 + layout.sidewalk_width - 0.5;
                    uniform(rng, layout.center - reach, layout.center + reach)
                };
                let along_reach = half - 1.0 - dx.max(dy) / 2.0;
                let along = uniform(rng, -along_reach, along_reach);
                let (x, y) = if layout.axis == 0 { (across, along) } else { (along, across) };
                let base = if layout.ground_class(s, x, y) == s.sidewalk {
                    s.sidewalk_height
                } else {
                    0.0
                };
                let cand = Placed {
                    class: spec.class,
                    min: [x - dx / 2.0, y - dy / 2.0, base],
                    max: [x + dx / 2.0, y + dy / 2.0, base + h],
                };
                if boxes.iter().all(|o| cand.clear_of(o, cfg.min_gap)) {
                    placed = Some(cand);
                    break;
                }
            }
            match placed {
                Some(b) => boxes.push(b),
                None => {
                    return Err(Error::Generation(alloc::format!(
                        "could not place an instance of class {} after {} attempts",
                        spec.class,
                        cfg.placement_retries
                    )))
                }
            }
        }
    }
    Ok(boxes)
}

/// Top-down rig tiling the y range; the last `outside_fraction` of x is unseen.
pub fn camera_rig(cfg: &SceneConfig) -> Result<Vec<CameraModel>> {
    let half = cfg.half_extent;
    let xmax = half - 2.0 * half * cfg.outside_fraction;
    let xc = (-half + xmax) / 2.0;
    let hx = (xmax + half) / 2.0;
    let hy = half / cfg.cameras as f64;
    let size = cfg.image_size as f64;
    let rotation = [[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]];
    (0..cfg.cameras)
        .map(|k| {
            let yc = -half + hy * (2 * k + 1) as f64;
            let center = [xc, yc, cfg.camera_height];
            let mut translation = [0.0; 3];
            for i in 0..3 {
                translation[i] = -(0..3).map(|j| rotation[i][j] * center[j]).sum::<f64>();
            }
            let cam = CameraModel {
                fx: (size / 2.0) * cfg.camera_height / hx,
                fy: (size / 2.0) * cfg.camera_height / hy,
                cx: size / 2.0,
                cy: size / 2.0,
                rotation,
                translation,
                width: cfg.image_size,
                height: cfg.image_size,
            };
            cam.validate()?;
            Ok(cam)
        })
        .collect()
}

fn render_map(
    cfg: &SceneConfig,
    cam: &CameraModel,
    layout: &Layout,
    boxes: &[Placed],
    provider: &PrototypeProvider,
    rng: &mut ChaCha8Rng,
) -> Result<EmbeddingMap> {
    let n = cfg.image_size;
    let mut map = EmbeddingMap::new(n, n, provider.dim, vec![0.0; n * n * provider.dim])?;
    let origin = cam.center();
    let half = cfg.half_extent;
    for row in 0..n {
        for col in 0..n {
            let dir = cam.ray_direction(col as f64 + 0.5, row as f64 + 0.5);
            let mut hit: Option<(f64, usize)> = None;
            for b in boxes {
                if let Some(t) = b.ray_entry(origin, dir) {
                    if hit.is_none_or(|(best, _)| t < best) {
                        hit = Some((t, b.class));
                    }
                }
            }
            let class = hit.map(|(_, c)| c).or_else(|| {
                if dir[2] >= 0.0 {
                    return None;
                }
                let t = -origin[2] / dir[2];
                let (x, y) = (origin[0] + t * dir[0], origin[1] + t * dir[1]);
                (libm::fabs(x) <= half && libm::fabs(y) <= half)
                    .then(|| layout.ground_class(&cfg.stuff, x, y))
            });
            match class {
                Some(c) => {
                    let e = provider.noisy_prototype(c, cfg.pixel_noise, rng);
                    map.set_pixel(col, row, &e);
                }
                None => map.set_pixel(col, row, &provider.unknown),
            }
        }
    }
    Ok(map)
}

pub fn generate_scene(
    cfg: &SceneConfig,
    vocab: &Vocabulary,
    provider: &PrototypeProvider,
    seed: u64,
) -> Result<Scene> {
    cfg.validate(vocab)?;
    if provider.prototypes.len() < vocab.len() {
        return Err(Error::Configuration("provider does not cover the vocabulary".into()));
    }
    let mut rng = stream(seed, Stream::Scene);
    let s = &cfg.stuff;
    let axis = rng.random_range(0..2usize);
    let road_width = rng.random_range(s.road_width.0..=s.road_width.1);
    let offset = rng.random_range(s.center_offset.0..=s.center_offset.1);
    let sidewalk_width = rng.random_range(s.sidewalk_width.0..=s.sidewalk_width.1);
    // odd widths shift the center half a meter so band edges sit on integer coordinates
    let layout = Layout {
        axis,
        center: f64::from(offset) + f64::from(road_width % 2) / 2.0,
        road_width: f64::from(road_width),
        sidewalk_width: f64::from(sidewalk_width),
    };
    let boxes = place_things(cfg, &layout, &mut rng)?;
    let half = cfg.half_extent;

    let mut points: Vec<Vec3> = Vec::new();
    let mut semantic = Vec::new();
    let mut instance = Vec::new();
    let area = (2.0 * half) * (2.0 * half);
    let ground = Poisson::new(cfg.ground_density * area)
        .map_err(|e| Error::Configuration(alloc::format!("ground density: {e}")))?;
    let ground_n = ground.sample(&mut rng) as usize;
    let z_noise = Normal::new(0.0, cfg.ground_noise)
        .map_err(|e| Error::Configuration(alloc::format!("ground noise: {e}")))?;
    for _ in 0..ground_n {
        let x = uniform(&mut rng, -half, half);
        let y = uniform(&mut rng, -half, half);
        if boxes.iter().any(|b| b.footprint_contains(x, y)) {
            continue;
        }
        let class = layout.ground_class(s, x, y);
        let base = if class == s.road {
            0.0
        } else if class == s.sidewalk {
            s.sidewalk_height
        } else {
            uniform(&mut rng, 0.0, s.periphery_height)
        };
        points.push([x, y, base + z_noise.sample(&mut rng)]);
        semantic.push(class);
        instance.push(0u32);
    }
    for (k, b) in boxes.iter().enumerate() {
        let [lx, ly, lz] = [b.max[0] - b.min[0], b.max[1] - b.min[1], b.max[2] - b.min[2]];
        // top, two x–z sides, two y–z sides
        let faces = [lx * ly, lx * lz, lx * lz, ly * lz, ly * lz];
        let total: f64 = faces.iter().sum();
        let (lo, hi) = cfg.points_per_instance;
        let n = ((total * cfg.object_density) as usize).clamp(lo, hi);
        for _ in 0..n {
            let mut r = uniform(&mut rng, 0.0, total);
            let mut face = faces.len() - 1;
            for (f, &a) in faces.iter().enumerate() {
                if r < a {
                    face = f;
                    break;
                }
                r -= a;
            }
            let a = uniform(&mut rng, 0.0, 1.0);
            let c = uniform(&mut rng, 0.0, 1.0);
            let p = match face {
                0 => [b.min[0] + a * lx, b.min[1] + c * ly, b.max[2]],
                1 => [b.min[0] + a * lx, b.min[1], b.min[2] + c * lz],
                2 => [b.min[0] + a * lx, b.max[1], b.min[2] + c * lz],
                3 => [b.min[0], b.min[1] + a * ly, b.min[2] + c * lz],
                _ => [b.max[0], b.min[1] + a * ly, b.min[2] + c * lz],
            };
            points.push(p);
            semantic.push(b.class);
            instance.push(k as u32 + 1);
        }
    }
    let i_noise = Normal::new(0.0, cfg.intensity_noise)
        .map_err(|e| Error::Configuration(alloc::format!("intensity noise: {e}")))?;
    let intensity = semantic
        .iter()
        .map(|&c| cfg.intensity[c] + i_noise.sample(&mut rng))
        .collect();
    let rig = camera_rig(cfg)?;
    let maps = rig
        .iter()
        .map(|cam| render_map(cfg, cam, &layout, &boxes, provider, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(Scene {
        id: seed,
        cloud: PointCloud::new(points, Some(intensity))?,
        semantic,
        instance,
        rig,
        maps,
    })
}

/// Everything needed to regenerate a dataset, plus the resulting scene seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub version: u32,
    pub vocab: Vocabulary,
    pub prototype_seed: u64,
    pub embedding_dim: usize,
    pub label_noise: f64,
    pub dataset_seed: u64,
    pub train: Vec<u64>,
    pub eval: Vec<u64>,
    pub pixel_noise: f64,
    pub note: String,
}

pub const MANIFEST_VERSION: u32 = 1;

/// SplitMix64 finalizer, used to derive per-scene seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const SCENE_ATTEMPTS: u64 = 64;

fn scene_with_retries(
    cfg: &SceneConfig,
    vocab: &Vocabulary,
    provider: &PrototypeProvider,
    base: u64,
    accept: impl Fn(&Scene) -> bool,
) -> Result<Scene> {
    let mut last = None;
    for attempt in 0..SCENE_ATTEMPTS {
        match generate_scene(cfg, vocab, provider, mix_seed(base, attempt)) {
            Ok(s) if accept(&s) => return Ok(s),
            Ok(_) => {}
            Err(e @ Error::Generation(_)) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.unwrap_or_else(|| {
        Error::Generation("no acceptable scene within the attempt budget".into())
    }))
}

/// Generates `n_train + n_eval` scenes. Every novel class appears in at least
/// one evaluation scene and at least one novel class in every scene.
pub fn make_dataset(
    cfg: &SceneConfig,
    vocab: &Vocabulary,
    provider: &PrototypeProvider,
    n_train: usize,
    n_eval: usize,
    seed: u64,
) -> Result<(Vec<Scene>, Manifest)> {
    if n_train + n_eval == 0 {
        return Err(Error::Configuration("a dataset needs at least one scene".into()));
    }
    let novel = vocab.novel_classes();
    let has_novel = |s: &Scene| novel.is_empty() || s.semantic.iter().any(|c| novel.contains(c));
    let mut scenes = Vec::with_capacity(n_train + n_eval);
    for i in 0..(n_train + n_eval) {
        scenes.push(scene_with_retries(
            cfg,
            vocab,
            provider,
            mix_seed(seed, i as u64),
            has_novel,
        )?);
    }
    // top up evaluation coverage of each novel class, replacing scenes from the end
    if n_eval > 0 {
        let mut slot = n_train + n_eval;
        for &c in &novel {
            let covered = scenes[n_train..].iter().any(|s| s.semantic.contains(&c));
            if covered {
                continue;
            }
            if slot == n_train {
                return Err(Error::Generation("too few evaluation scenes to cover novel classes".into()));
            }
            slot -= 1;
            scenes[slot] = scene_with_retries(
                cfg,
                vocab,
                provider,
                mix_seed(seed ^ 0x5eed, slot as u64),
                |s| s.semantic.contains(&c),
            )?;
        }
    }
    let ids: Vec<u64> = scenes.iter().map(|s| s.id).collect();
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        vocab: vocab.clone(),
        prototype_seed: provider.seed,
        embedding_dim: provider.dim,
        label_noise: provider.label_noise,
        dataset_seed: seed,
        train: ids[..n_train].to_vec(),
        eval: ids[n_train..].to_vec(),
        pixel_noise: cfg.pixel_noise,
        note: String::new(),
    };
    Ok((scenes, manifest))
}
