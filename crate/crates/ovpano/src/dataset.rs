//! Dataset directories: `manifest.txt` plus one scene file per scene.

use std::path::{Path, PathBuf};

use ovpano_core::geometry::VoxelGrid;
use ovpano_core::sample::{prepare, Sample};
use ovpano_core::scene::{make_dataset, Manifest, Scene, SceneConfig, MANIFEST_VERSION};
use ovpano_core::vocab::{build_text_embeddings, gen_prototypes, TextEmbeddings, Vocabulary};

use crate::error::{io_err, Error, Result};
use crate::kv::{self, KvDoc};
use crate::scene_file::{read_scene, scene_path, write_scene};

pub const MANIFEST_FILE: &str = "manifest.txt";

/// Generator settings for `gen`.
#[derive(Debug, Clone, PartialEq)]
pub struct GenSpec {
    pub seed: u64,
    pub split_seed: Option<u64>,
    pub train: usize,
    pub eval: usize,
    pub embedding_dim: usize,
    pub label_noise: f64,
    pub pixel_noise: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub core: Manifest,
    pub grid: VoxelGrid,
    pub split_seed: Option<u64>,
}

impl DatasetManifest {
    pub fn to_kv(&self) -> KvDoc {
        let m = &self.core;
        let mut d = KvDoc::new(MANIFEST_FILE);
        d.push("version", m.version);
        d.push("dataset_seed", m.dataset_seed);
        d.push("split_seed", self.split_seed.map_or("default".into(), |s| s.to_string()));
        d.push("prototype_seed", m.prototype_seed);
        d.push("embedding_dim", m.embedding_dim);
        d.push("label_noise", kv::float(m.label_noise));
        d.push("pixel_noise", kv::float(m.pixel_noise));
        kv::push_grid(&mut d, &self.grid);
        kv::push_vocab(&mut d, &m.vocab);
        d.push("train", ids(&m.train));
        d.push("eval", ids(&m.eval));
        d.push("note", &m.note);
        d
    }

    pub fn from_kv(d: &KvDoc) -> Result<Self> {
        let version: u32 = d.get("version")?;
        if version != MANIFEST_VERSION {
            return Err(Error::Version {
                what: "manifest",
                found: version,
                expected: MANIFEST_VERSION,
            });
        }
        let split_seed = match d.raw("split_seed") {
            None | Some("default") => None,
            Some(_) => Some(d.get("split_seed")?),
        };
        let parse_ids = |key: &str| -> Result<Vec<u64>> {
            d.list::<String>(key)?
                .iter()
                .map(|s| {
                    u64::from_str_radix(s, 16).map_err(|e| Error::Parse {
                        origin: MANIFEST_FILE.into(),
                        line: 0,
                        msg: format!("`{key}`: {e}"),
                    })
                })
                .collect()
        };
        Ok(Self {
            core: Manifest {
                version,
                vocab: kv::read_vocab(d)?,
                prototype_seed: d.get("prototype_seed")?,
                embedding_dim: d.get("embedding_dim")?,
                label_noise: d.get("label_noise")?,
                dataset_seed: d.get("dataset_seed")?,
                train: parse_ids("train")?,
                eval: parse_ids("eval")?,
                pixel_noise: d.get("pixel_noise")?,
                note: d.raw("note").unwrap_or_default().into(),
            },
            grid: kv::read_grid(d)?,
            split_seed,
        })
    }

    pub fn text_embeddings(&self) -> Result<TextEmbeddings> {
        let m = &self.core;
        let provider = gen_prototypes(m.prototype_seed, m.vocab.len(), m.embedding_dim)?.with_label_noise(m.label_noise);
        Ok(build_text_embeddings(&m.vocab, &provider)?)
    }
}

fn ids(xs: &[u64]) -> String {
    xs.iter().map(|x| format!("{x:016x}")).collect::<Vec<_>>().join(" ")
}

pub fn vocabulary(split_seed: Option<u64>) -> Result<Vocabulary> {
    let street = Vocabulary::street();
    Ok(match split_seed {
        None => street,
        Some(s) => street.resplit(1, 1, s)?,
    })
}

/// Generates scenes, writes them and the manifest under `dir`.
pub fn generate(dir: &Path, spec: &GenSpec) -> Result<DatasetManifest> {
    let vocab = vocabulary(spec.split_seed)?;
    let mut cfg = SceneConfig::street(&vocab)?;
    cfg.pixel_noise = spec.pixel_noise;
    let provider = gen_prototypes(spec.seed, vocab.len(), spec.embedding_dim)?.with_label_noise(spec.label_noise);
    let (scenes, core) = make_dataset(&cfg, &vocab, &provider, spec.train, spec.eval, spec.seed)?;
    for s in &scenes {
        write_scene(&scene_path(dir, s.id), s)?;
    }
    let manifest = DatasetManifest {
        core,
        grid: cfg.grid.clone(),
        split_seed: spec.split_seed,
    };
    write_manifest(dir, &manifest)?;
    Ok(manifest)
}

pub fn write_manifest(dir: &Path, m: &DatasetManifest) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, m.to_kv().render()).map_err(io_err(&path))
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    DatasetManifest::from_kv(&KvDoc::parse(&text, &path.display().to_string())?)
}

/// A loaded dataset split.
#[derive(Debug, Clone)]
pub struct Split {
    pub scenes: Vec<Scene>,
    pub samples: Vec<Sample>,
}

pub fn load_split(dir: &Path, m: &DatasetManifest, ids: &[u64]) -> Result<Split> {
    let mut scenes = Vec::with_capacity(ids.len());
    let mut samples = Vec::with_capacity(ids.len());
    for &id in ids {
        let path: PathBuf = scene_path(dir, id);
        let scene = read_scene(&path)?;
        if scene.id != id {
            return Err(Error::Usage(format!(
                "{} holds scene {:016x}, expected {id:016x}",
                path.display(),
                scene.id
            )));
        }
        scene.validate(&m.core.vocab)?;
        samples.push(prepare(&scene, &m.grid)?);
        scenes.push(scene);
    }
    Ok(Split { scenes, samples })
}
