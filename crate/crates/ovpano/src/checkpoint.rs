//! Versioned binary checkpoints.
//!
//! Layout: magic `OVPC`, `u32` version, then sections
//! * `CONF`: training configuration text
//! * `VOCB`: dataset signature text (vocabulary and label embedding settings)
//! * `PARM`: tensor count, then per tensor name, trainable flag, rank, dims,
//!   values, first moments, second moments
//! * `STEP`: optimizer step count and global training step
//!
//! The shuffle order is derived from the seed and the epoch, so the global
//! step is the whole random state of a run.

use std::path::Path;

use ovpano_core::model::{Model, ParamSet};
use ovpano_core::numerics::Tensor;
use ovpano_core::optim::AdamState;
use ovpano_core::train::TrainState;

use crate::binio::{Reader, Writer};
use crate::config::RunConfig;
use crate::dataset::DatasetManifest;
use crate::error::{io_err, Error, Result};
use crate::kv::{self, KvDoc};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"OVPC";
pub const CHECKPOINT_VERSION: u32 = 1;
const WHAT: &str = "checkpoint";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: KvDoc,
    pub signature: KvDoc,
    pub state: TrainState,
}

/// Text identifying the vocabulary and label embeddings a model was trained against.
pub fn dataset_signature(m: &DatasetManifest) -> KvDoc {
    let mut d = KvDoc::new("signature");
    d.push("prototype_seed", m.core.prototype_seed);
    d.push("embedding_dim", m.core.embedding_dim);
    d.push("label_noise", kv::float(m.core.label_noise));
    kv::push_vocab(&mut d, &m.core.vocab);
    d
}

impl Checkpoint {
    pub fn new(cfg: &RunConfig, manifest: &DatasetManifest, state: TrainState) -> Self {
        Self {
            config: cfg.training_kv(),
            signature: dataset_signature(manifest),
            state,
        }
    }

    /// Fails when the checkpoint was trained on another vocabulary or label set.
    pub fn check_dataset(&self, manifest: &DatasetManifest) -> Result<()> {
        if self.signature.render() != dataset_signature(manifest).render() {
            return Err(ovpano_core::Error::Contract(
                "checkpoint vocabulary or label embeddings differ from the dataset".into(),
            )
            .into());
        }
        Ok(())
    }

    /// The run configuration stored with the checkpoint.
    pub fn run_config(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        cfg.apply(&self.config)?;
        Ok(cfg)
    }

    pub fn encode(&self) -> Vec<u8> {
        let st = &self.state;
        let p = &st.model.params;
        let mut w = Writer::new(CHECKPOINT_MAGIC, CHECKPOINT_VERSION);
        w.section(b"CONF", |s| s.str(&self.config.render()));
        w.section(b"VOCB", |s| s.str(&self.signature.render()));
        w.section(b"PARM", |s| {
            s.len(p.len());
            for i in 0..p.len() {
                let t = &p.tensors()[i];
                s.str(&p.names()[i]);
                s.u8(u8::from(p.is_trainable(i)));
                s.len(t.shape().len());
                for &d in t.shape() {
                    s.len(d);
                }
                s.f64s(t.data());
                s.f64s(st.adam.m[i].data());
                s.f64s(st.adam.v[i].data());
            }
        });
        w.section(b"STEP", |s| {
            s.u64(st.adam.steps);
            s.u64(st.step);
        });
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::open(bytes, WHAT, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
        let mut conf = r.section(b"CONF")?;
        let config = KvDoc::parse(&conf.str()?, "checkpoint configuration")?;
        conf.done()?;
        let mut voc = r.section(b"VOCB")?;
        let signature = KvDoc::parse(&voc.str()?, "checkpoint signature")?;
        voc.done()?;

        let mut parm = r.section(b"PARM")?;
        let n = parm.len(1)?;
        let mut params = ParamSet::new();
        let (mut m, mut v) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for _ in 0..n {
            let name = parm.str()?;
            let at = parm.offset();
            let trainable = match parm.u8()? {
                0 => false,
                1 => true,
                f => {
                    return Err(Error::Malformed {
                        what: WHAT,
                        offset: at,
                        msg: format!("trainable flag {f}"),
                    })
                }
            };
            let rank = parm.len(8)?;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(parm.u64()? as usize);
            }
            let count = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| parm.malformed("tensor size overflows"))?;
            let at = parm.offset();
            let bad = |e: ovpano_core::Error| Error::Malformed {
                what: WHAT,
                offset: at,
                msg: format!("tensor `{name}`: {e}"),
            };
            let data = Tensor::new(&shape, parm.f64s(count)?).map_err(bad)?;
            m.push(Tensor::new(&shape, parm.f64s(count)?).map_err(bad)?);
            v.push(Tensor::new(&shape, parm.f64s(count)?).map_err(bad)?);
            params.push(&name, data, trainable);
        }
        parm.done()?;
        let mut stp = r.section(b"STEP")?;
        let adam_steps = stp.u64()?;
        let step = stp.u64()?;
        stp.done()?;
        r.done()?;

        let cfg = {
            let mut c = RunConfig::default();
            c.apply(&config)?;
            c
        };
        let model_cfg = cfg.train.model.clone();
        let reference = Model::init(model_cfg.clone(), 0)?;
        reference.check_compatible(&params)?;
        let state = TrainState {
            model: Model {
                config: model_cfg,
                params,
            },
            adam: AdamState {
                m,
                v,
                steps: adam_steps,
            },
            step,
        };
        Ok(Self {
            config,
            signature,
            state,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.encode()).map_err(io_err(&tmp))?;
        std::fs::rename(&tmp, path).map_err(io_err(path))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(io_err(path))?;
        Self::decode(&bytes)
    }
}
