//! Run configuration: flat `key = value` files plus `--key=value` overrides.

use std::path::{Path, PathBuf};

use ovpano_core::ensemble::EnsembleParams;
use ovpano_core::losses::VoxelWeighting;
use ovpano_core::train::{default_milestones, EvalConfig, TrainConfig};

use crate::dataset::GenSpec;
use crate::error::{io_err, Error, Result};
use crate::kv::{self, KvDoc};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub split_seed: Option<u64>,
    pub train_scenes: usize,
    pub eval_scenes: usize,
    pub embedding_dim: usize,
    pub label_noise: f64,
    pub pixel_noise: f64,
    /// Everything but `epochs`-derived milestones and the seed.
    pub train: TrainConfig,
    pub milestones: Option<Vec<usize>>,
    pub threshold: f64,
    pub visible_only: bool,
    pub ensemble: bool,
    pub alpha: f64,
    pub beta: f64,
    pub threads: usize,
    pub max_steps: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let ens = EnsembleParams::default();
        Self {
            data: PathBuf::from("data"),
            out: PathBuf::from("runs"),
            seed: None,
            split_seed: None,
            train_scenes: 200,
            eval_scenes: 50,
            embedding_dim: 16,
            label_noise: 0.1,
            pixel_noise: 0.05,
            train: TrainConfig::new(0),
            milestones: None,
            threshold: EvalConfig::default().threshold,
            visible_only: false,
            ensemble: false,
            alpha: ens.alpha,
            beta: ens.beta,
            threads: 1,
            max_steps: None,
        }
    }
}

/// Keys that shape the trained parameters. Only these go into checkpoints.
pub const TRAINING_KEYS: &[&str] = &[
    "seed",
    "lidar_hidden",
    "d_lidar",
    "d_emb",
    "d_q",
    "q_learn",
    "stuff_queries",
    "separate_stuff",
    "layers",
    "ffn_hidden",
    "mask_width",
    "fusion",
    "pos_scale",
    "pos_radial",
    "init_temperature",
    "learn_temperature",
    "w_cls",
    "w_mask",
    "w_object",
    "w_voxel",
    "object_distill",
    "voxel_distill",
    "voxel_weighting",
    "ignore_novel",
    "focal_gamma",
    "focal_alpha",
    "lr",
    "weight_decay",
    "beta1",
    "beta2",
    "eps",
    "epochs",
    "milestones",
    "lr_decay",
];

const OTHER_KEYS: &[&str] = &[
    "data",
    "out",
    "split_seed",
    "train_scenes",
    "eval_scenes",
    "embedding_dim",
    "label_noise",
    "pixel_noise",
    "threshold",
    "visible_only",
    "ensemble",
    "alpha",
    "beta",
    "threads",
    "max_steps",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| Error::BadValue {
        key: key.into(),
        msg: format!("`{value}`: {e}"),
    })
}

fn optional<T: std::str::FromStr>(key: &str, value: &str) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    match value {
        "none" | "default" | "" => Ok(None),
        v => parse(key, v).map(Some),
    }
}

fn show_opt<T: ToString>(x: &Option<T>, none: &str) -> String {
    x.as_ref().map_or(none.into(), ToString::to_string)
}

impl RunConfig {
    pub fn all_keys() -> impl Iterator<Item = &'static str> {
        TRAINING_KEYS.iter().chain(OTHER_KEYS).copied()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        let m = &mut t.model;
        match key {
            "data" => self.data = PathBuf::from(value),
            "out" => self.out = PathBuf::from(value),
            "seed" => self.seed = optional(key, value)?,
            "split_seed" => self.split_seed = optional(key, value)?,
            "train_scenes" => self.train_scenes = parse(key, value)?,
            "eval_scenes" => self.eval_scenes = parse(key, value)?,
            "embedding_dim" => self.embedding_dim = parse(key, value)?,
            "label_noise" => self.label_noise = parse(key, value)?,
            "pixel_noise" => self.pixel_noise = parse(key, value)?,
            "lidar_hidden" => m.lidar_hidden = parse(key, value)?,
            "d_lidar" => m.d_lidar = parse(key, value)?,
            "d_emb" => m.d_emb = parse(key, value)?,
            "d_q" => m.d_q = parse(key, value)?,
            "q_learn" => m.q_learn = parse(key, value)?,
            "stuff_queries" => m.stuff_queries = parse(key, value)?,
            "separate_stuff" => m.separate_stuff = parse(key, value)?,
            "layers" => m.layers = parse(key, value)?,
            "ffn_hidden" => m.ffn_hidden = parse(key, value)?,
            "mask_width" => m.mask_width = parse(key, value)?,
            "fusion" => m.fusion = parse(key, value)?,
            "pos_scale" => m.pos_scale = parse(key, value)?,
            "pos_radial" => m.pos_radial = parse(key, value)?,
            "init_temperature" => m.init_temperature = parse(key, value)?,
            "learn_temperature" => m.learn_temperature = parse(key, value)?,
            "w_cls" => t.weights.cls = parse(key, value)?,
            "w_mask" => t.weights.mask = parse(key, value)?,
            "w_object" => t.weights.object = parse(key, value)?,
            "w_voxel" => t.weights.voxel = parse(key, value)?,
            "object_distill" => t.object_distill = parse(key, value)?,
            "voxel_distill" => t.voxel_distill = parse(key, value)?,
            "voxel_weighting" => {
                t.weighting = match value {
                    "softmax" => VoxelWeighting::Softmax,
                    "sigmoid" => VoxelWeighting::Sigmoid,
                    _ => {
                        return Err(Error::BadValue {
                            key: key.into(),
                            msg: format!("`{value}`: expected softmax or sigmoid"),
                        })
                    }
                }
            }
            "ignore_novel" => t.ignore_novel = parse(key, value)?,
            "focal_gamma" => t.focal.gamma = parse(key, value)?,
            "focal_alpha" => t.focal.alpha = parse(key, value)?,
            "lr" => t.optim.lr = parse(key, value)?,
            "weight_decay" => t.optim.weight_decay = parse(key, value)?,
            "beta1" => t.optim.beta1 = parse(key, value)?,
            "beta2" => t.optim.beta2 = parse(key, value)?,
            "eps" => t.optim.eps = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "milestones" => {
                self.milestones = match value {
                    "auto" | "default" => None,
                    v => Some(v.split_whitespace().map(|x| parse(key, x)).collect::<Result<_>>()?),
                }
            }
            "lr_decay" => t.lr_decay = parse(key, value)?,
            "threshold" => self.threshold = parse(key, value)?,
            "visible_only" => self.visible_only = parse(key, value)?,
            "ensemble" => self.ensemble = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "threads" => self.threads = parse(key, value)?,
            "max_steps" => self.max_steps = optional(key, value)?,
            _ => return Err(Error::UnknownKey(key.into())),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<String> {
        let t = &self.train;
        let m = &t.model;
        let f = kv::float;
        Ok(match key {
            "data" => self.data.display().to_string(),
            "out" => self.out.display().to_string(),
            "seed" => show_opt(&self.seed, "none"),
            "split_seed" => show_opt(&self.split_seed, "default"),
            "train_scenes" => self.train_scenes.to_string(),
            "eval_scenes" => self.eval_scenes.to_string(),
            "embedding_dim" => self.embedding_dim.to_string(),
            "label_noise" => f(self.label_noise),
            "pixel_noise" => f(self.pixel_noise),
            "lidar_hidden" => m.lidar_hidden.to_string(),
            "d_lidar" => m.d_lidar.to_string(),
            "d_emb" => m.d_emb.to_string(),
            "d_q" => m.d_q.to_string(),
            "q_learn" => m.q_learn.to_string(),
            "stuff_queries" => m.stuff_queries.to_string(),
            "separate_stuff" => m.separate_stuff.to_string(),
            "layers" => m.layers.to_string(),
            "ffn_hidden" => m.ffn_hidden.to_string(),
            "mask_width" => m.mask_width.to_string(),
            "fusion" => m.fusion.to_string(),
            "pos_scale" => f(m.pos_scale),
            "pos_radial" => m.pos_radial.to_string(),
            "init_temperature" => f(m.init_temperature),
            "learn_temperature" => m.learn_temperature.to_string(),
            "w_cls" => f(t.weights.cls),
            "w_mask" => f(t.weights.mask),
            "w_object" => f(t.weights.object),
            "w_voxel" => f(t.weights.voxel),
            "object_distill" => t.object_distill.to_string(),
            "voxel_distill" => t.voxel_distill.to_string(),
            "voxel_weighting" => match t.weighting {
                VoxelWeighting::Softmax => "softmax".into(),
                VoxelWeighting::Sigmoid => "sigmoid".into(),
            },
            "ignore_novel" => t.ignore_novel.to_string(),
            "focal_gamma" => f(t.focal.gamma),
            "focal_alpha" => f(t.focal.alpha),
            "lr" => f(t.optim.lr),
            "weight_decay" => f(t.optim.weight_decay),
            "beta1" => f(t.optim.beta1),
            "beta2" => f(t.optim.beta2),
            "eps" => f(t.optim.eps),
            "epochs" => t.epochs.to_string(),
            "milestones" => self.milestones.as_ref().map_or("auto".into(), |v| kv::join(v)),
            "lr_decay" => f(t.lr_decay),
            "threshold" => f(self.threshold),
            "visible_only" => self.visible_only.to_string(),
            "ensemble" => self.ensemble.to_string(),
            "alpha" => f(self.alpha),
            "beta" => f(self.beta),
            "threads" => self.threads.to_string(),
            "max_steps" => show_opt(&self.max_steps, "none"),
            _ => return Err(Error::UnknownKey(key.into())),
        })
    }

    pub fn apply(&mut self, doc: &KvDoc) -> Result<()> {
        for (k, v) in doc.entries() {
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Usage(format!("override `{o}` is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg = Self::default();
        cfg.apply(&KvDoc::parse(&text, &path.display().to_string())?)?;
        Ok(cfg)
    }

    fn render(&self, keys: &mut dyn Iterator<Item = &'static str>) -> KvDoc {
        let mut doc = KvDoc::new("config");
        for k in keys {
            doc.push(k, self.get(k).expect("listed keys are known"));
        }
        doc
    }

    pub fn to_kv(&self) -> KvDoc {
        self.render(&mut Self::all_keys())
    }

    pub fn training_kv(&self) -> KvDoc {
        self.render(&mut TRAINING_KEYS.iter().copied())
    }

    pub fn require_seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::Usage("a seed is required: pass --seed or set `seed`".into()))
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let mut t = self.train.clone();
        t.seed = self.require_seed()?;
        t.milestones = self.milestones.clone().unwrap_or_else(|| default_milestones(t.epochs));
        t.validate()?;
        Ok(t)
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            threshold: self.threshold,
            ensemble: self.ensemble.then_some(EnsembleParams {
                alpha: self.alpha,
                beta: self.beta,
            }),
            visible_only: self.visible_only,
        }
    }

    pub fn gen_spec(&self) -> Result<GenSpec> {
        Ok(GenSpec {
            seed: self.require_seed()?,
            split_seed: self.split_seed,
            train: self.train_scenes,
            eval: self.eval_scenes,
            embedding_dim: self.embedding_dim,
            label_noise: self.label_noise,
            pixel_noise: self.pixel_noise,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_key_round_trips() {
        let cfg = RunConfig::default();
        let text = cfg.to_kv().render();
        let back = {
            let mut c = RunConfig::default();
            c.set("epochs", "3").unwrap();
            c.apply(&KvDoc::parse(&text, "t").unwrap()).unwrap();
            c
        };
        assert_eq!(back, cfg);
    }

    #[test]
    fn overrides_apply_in_order() {
        let mut cfg = RunConfig::default();
        cfg.apply_overrides(&["epochs=4", "milestones=1 3", "epochs=5", "voxel_weighting=sigmoid"]).unwrap();
        assert_eq!(cfg.train.epochs, 5);
        assert_eq!(cfg.milestones, Some(vec![1, 3]));
        assert!(matches!(cfg.set("nope", "1"), Err(Error::UnknownKey(_))));
        assert!(matches!(cfg.set("epochs", "x"), Err(Error::BadValue { .. })));
        assert!(matches!(cfg.train_config(), Err(Error::Usage(_))));
        cfg.set("seed", "9").unwrap();
        let t = cfg.train_config().unwrap();
        assert_eq!((t.seed, t.milestones), (9, vec![1, 3]));
    }
}
