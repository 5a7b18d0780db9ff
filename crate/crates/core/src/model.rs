//! The trainable network: voxel-statistics encoder, fusion with frozen image
//! embeddings, a single-head query decoder, a mask head and a cosine class head.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{dim_err, Error, Result};
use crate::numerics::{Graph, Tensor, Var};
use crate::rng::{stream, Stream};
use crate::sample::{Sample, STAT_DIM};
use crate::vocab::TextEmbeddings;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub lidar_hidden: usize,
    pub d_lidar: usize,
    pub d_emb: usize,
    pub d_q: usize,
    /// Learnable queries for base things and all novel classes.
    pub q_learn: usize,
    /// One extra query per base stuff class.
    pub stuff_queries: usize,
    /// Bind the extra queries to base stuff classes instead of sharing them.
    pub separate_stuff: bool,
    pub layers: usize,
    pub ffn_hidden: usize,
    pub mask_width: usize,
    /// Concatenate learned LiDAR features with the image embeddings.
    pub fusion: bool,
    /// Voxel centroids in meters are divided by this before being appended.
    pub pos_scale: f64,
    /// Also append the squared planar distance from the origin.
    pub pos_radial: bool,
    pub init_temperature: f64,
    pub learn_temperature: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            lidar_hidden: 16,
            d_lidar: 8,
            d_emb: 16,
            d_q: 32,
            q_learn: 16,
            stuff_queries: 2,
            separate_stuff: true,
            layers: 2,
            ffn_hidden: 64,
            mask_width: 16,
            fusion: true,
            pos_scale: 3.0,
            pos_radial: true,
            init_temperature: 0.07,
            learn_temperature: true,
        }
    }
}

impl ModelConfig {
    pub fn num_queries(&self) -> usize {
        self.q_learn + self.stuff_queries
    }

    pub fn pos_width(&self) -> usize {
        3 + usize::from(self.pos_radial)
    }

    /// Width of the decoder's voxel input.
    pub fn input_width(&self) -> usize {
        self.fused_width() + self.pos_width()
    }

    pub fn fused_width(&self) -> usize {
        self.d_emb + if self.fusion { self.d_lidar } else { 0 }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Configuration(m.into()));
        if self.d_lidar < 4 {
            return bad("d_lidar must be at least 4");
        }
        if self.q_learn == 0 || self.d_q == 0 || self.d_emb == 0 || self.mask_width == 0 {
            return bad("model sizes must be positive");
        }
        if self.lidar_hidden == 0 || self.ffn_hidden == 0 {
            return bad("hidden widths must be positive");
        }
        if !(self.pos_scale > 0.0) {
            return bad("pos_scale must be positive");
        }
        if !(self.init_temperature > 0.0) {
            return bad("temperature must be positive");
        }
        Ok(())
    }
}

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    trainable: Vec<bool>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            trainable: Vec::new(),
        }
    }

    pub fn push(&mut self, name: &str, t: Tensor, trainable: bool) {
        self.names.push(name.to_string());
        self.tensors.push(t);
        self.trainable.push(trainable);
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn is_trainable(&self, i: usize) -> bool {
        self.trainable[i]
    }

    pub fn index(&self, name: &str) -> Result<usize> {
        self.names.iter().position(|n| n == name).ok_or_else(|| Error::Lookup {
            kind: "parameter",
            name: name.to_string(),
        })
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.tensors[self.index(name)?])
    }

    pub fn set(&mut self, name: &str, t: Tensor) -> Result<()> {
        let i = self.index(name)?;
        if self.tensors[i].shape() != t.shape() {
            return Err(dim_err("ParamSet::set", self.tensors[i].shape(), t.shape()));
        }
        self.tensors[i] = t;
        Ok(())
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
}

fn gaussian(rng: &mut rand_chacha::ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let g: f64 = StandardNormal.sample(rng);
            g * scale
        })
        .collect();
    Tensor::new(shape, data).expect("gaussian draws are finite")
}

impl Model {
    /// Fresh parameters: weights ~ N(0, 1/fan_in), zero biases, unit-variance queries.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(seed, Stream::Init);
        let mut p = ParamSet::new();
        let mut weight = |p: &mut ParamSet, name: &str, rows: usize, cols: usize| {
            let s = 1.0 / libm::sqrt(rows as f64);
            p.push(name, gaussian(&mut rng, &[rows, cols], s), true);
        };
        let c = &config;
        weight(&mut p, "lidar.w1", STAT_DIM, c.lidar_hidden);
        p.push("lidar.b1", Tensor::zeros(&[c.lidar_hidden]), true);
        weight(&mut p, "lidar.w2", c.lidar_hidden, c.d_lidar);
        p.push("lidar.b2", Tensor::zeros(&[c.d_lidar]), true);
        let din = c.input_width();
        for l in 0..c.layers {
            weight(&mut p, &format!("dec{l}.wq"), c.d_q, c.d_q);
            weight(&mut p, &format!("dec{l}.wk"), din, c.d_q);
            weight(&mut p, &format!("dec{l}.wv"), din, c.d_q);
            weight(&mut p, &format!("dec{l}.wo"), c.d_q, c.d_q);
            weight(&mut p, &format!("dec{l}.f1"), c.d_q, c.ffn_hidden);
            p.push(&format!("dec{l}.b1"), Tensor::zeros(&[c.ffn_hidden]), true);
            weight(&mut p, &format!("dec{l}.f2"), c.ffn_hidden, c.d_q);
            p.push(&format!("dec{l}.b2"), Tensor::zeros(&[c.d_q]), true);
        }
        weight(&mut p, "mask.wq", c.d_q, c.mask_width);
        p.push("mask.bq", Tensor::zeros(&[c.mask_width]), true);
        weight(&mut p, "mask.wv", din, c.mask_width);
        p.push("mask.bv", Tensor::zeros(&[c.mask_width]), true);
        weight(&mut p, "cls.w", c.d_q, c.d_emb);
        p.push("cls.b", Tensor::zeros(&[c.d_emb]), true);
        let q = gaussian(&mut rng, &[c.num_queries(), c.d_q], 1.0);
        p.push("queries", q, true);
        let log_t = Tensor::vector(alloc::vec![libm::log(c.init_temperature)])?;
        p.push("log_temperature", log_t, c.learn_temperature);
        Ok(Self { config, params: p })
    }

    pub fn temperature(&self) -> f64 {
        self.params
            .get("log_temperature")
            .map_or(self.config.init_temperature, |t| libm::exp(t.item()))
    }

    /// Checks that `params` has the shapes this configuration produces.
    pub fn check_compatible(&self, params: &ParamSet) -> Result<()> {
        if params.names() != self.params.names() {
            return Err(Error::Contract("parameter names differ from the model layout".into()));
        }
        for (a, b) in self.params.tensors().iter().zip(params.tensors()) {
            if a.shape() != b.shape() {
                return Err(dim_err("checkpoint", a.shape(), b.shape()));
            }
        }
        Ok(())
    }
}

/// Graph handles of every parameter, in `ParamSet` order.
#[derive(Debug, Clone)]
pub struct ParamVars {
    pub vars: Vec<Var>,
    names: Vec<String>,
}

impl ParamVars {
    pub fn register(g: &mut Graph, params: &ParamSet) -> Self {
        let vars = params
            .tensors()
            .iter()
            .enumerate()
            .map(|(i, t)| {
                if params.is_trainable(i) {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect();
        Self {
            vars,
            names: params.names().to_vec(),
        }
    }

    /// Like [`ParamVars::register`] but with the slot `name` bound to `probe`.
    pub fn register_probe(g: &mut Graph, params: &ParamSet, name: &str, probe: Var) -> Result<Self> {
        let i = params.index(name)?;
        let mut pv = Self::register(g, params);
        pv.vars[i] = probe;
        Ok(pv)
    }

    pub fn get(&self, name: &str) -> Var {
        let i = self
            .names
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("parameter {name} is registered by Model::init"));
        self.vars[i]
    }
}

/// Frozen inputs as graph leaves. They always pass through a gradient stop
/// before use; `probed` makes them trainable leaves so tests can confirm that
/// nothing reaches them.
#[derive(Debug, Clone, Copy)]
pub struct FrozenInputs {
    pub features: Var,
    pub text: Var,
}

impl FrozenInputs {
    pub fn constant(g: &mut Graph, features: &Tensor, text: &Tensor) -> Self {
        Self {
            features: g.constant(features.clone()),
            text: g.constant(text.clone()),
        }
    }

    pub fn probed(g: &mut Graph, features: &Tensor, text: &Tensor) -> Self {
        Self {
            features: g.param(features.clone()),
            text: g.param(text.clone()),
        }
    }
}

/// Row-wise statistics perceptron.
pub fn encode_lidar(g: &mut Graph, stats: Var, pv: &ParamVars) -> Result<Var> {
    let h = g.matmul(stats, pv.get("lidar.w1"))?;
    let h = g.add_bias(h, pv.get("lidar.b1"))?;
    let h = g.relu(h)?;
    let o = g.matmul(h, pv.get("lidar.w2"))?;
    g.add_bias(o, pv.get("lidar.b2"))
}

/// Row-wise concatenation; the image embeddings enter through a gradient stop.
pub fn fuse(g: &mut Graph, lidar: Var, features: Var) -> Result<Var> {
    let (a, b) = (g.value(lidar).rows(), g.value(features).rows());
    if a != b {
        return Err(dim_err("fuse", &[a], &[b]));
    }
    let frozen = g.stop_grad(features);
    g.concat_cols(&[lidar, frozen])
}

/// Centroid coordinates appended to the fused features.
pub fn positional_tail(config: &ModelConfig, centroids: &[[f64; 3]]) -> Tensor {
    let w = config.pos_width();
    let s = config.pos_scale;
    let mut data = Vec::with_capacity(centroids.len() * w);
    for c in centroids {
        data.extend_from_slice(&[c[0] / s, c[1] / s, c[2] / s]);
        if config.pos_radial {
            data.push((c[0] * c[0] + c[1] * c[1]) / (s * s));
        }
    }
    Tensor::from_raw(&[centroids.len(), w], data)
}

/// Decoder output plus the attention maps of every layer.
#[derive(Debug, Clone)]
pub struct Decoded {
    pub queries: Var,
    pub attention: Vec<Var>,
}

/// `layers` rounds of single-head cross-attention and a feed-forward block,
/// both residual.
pub fn decode(
    g: &mut Graph,
    input: Var,
    queries: Var,
    layers: usize,
    pv: &ParamVars,
) -> Result<Decoded> {
    let dq = g.value(queries).cols();
    let mut q = queries;
    let mut attention = Vec::with_capacity(layers);
    for l in 0..layers {
        let name = |s: &str| format!("dec{l}.{s}");
        let qp = g.matmul(q, pv.get(&name("wq")))?;
        let kp = g.matmul(input, pv.get(&name("wk")))?;
        let logits = g.matmul_nt(qp, kp)?;
        let logits = g.scale(logits, 1.0 / libm::sqrt(dq as f64));
        let a = g.softmax_rows(logits)?;
        attention.push(a);
        let vp = g.matmul(input, pv.get(&name("wv")))?;
        let ctx = g.matmul(a, vp)?;
        let upd = g.matmul(ctx, pv.get(&name("wo")))?;
        q = g.add(q, upd)?;
        let h = g.matmul(q, pv.get(&name("f1")))?;
        let h = g.add_bias(h, pv.get(&name("b1")))?;
        let h = g.relu(h)?;
        let h = g.matmul(h, pv.get(&name("f2")))?;
        let h = g.add_bias(h, pv.get(&name("b2")))?;
        q = g.add(q, h)?;
    }
    Ok(Decoded {
        queries: q,
        attention,
    })
}

/// `Q × V` mask logits: projected queries dotted with projected voxels.
pub fn predict_masks(g: &mut Graph, queries: Var, input: Var, pv: &ParamVars) -> Result<Var> {
    let a = g.matmul(queries, pv.get("mask.wq"))?;
    let a = g.add_bias(a, pv.get("mask.bq"))?;
    let b = g.matmul(input, pv.get("mask.wv"))?;
    let b = g.add_bias(b, pv.get("mask.bv"))?;
    g.matmul_nt(a, b)
}

pub fn predict_class_embedding(g: &mut Graph, queries: Var, pv: &ParamVars) -> Result<Var> {
    let v = g.matmul(queries, pv.get("cls.w"))?;
    g.add_bias(v, pv.get("cls.b"))
}

/// `cos(v_q, t_i) / T` per label, reduced to classes by the maximum over
/// each class's labels. `label_group[i]` is the output column of label `i`.
pub fn class_logits(
    g: &mut Graph,
    embeddings: Var,
    text: Var,
    label_group: &[usize],
    groups: usize,
    log_temperature: Var,
) -> Result<Var> {
    let e = g.normalize_rows(embeddings)?;
    let t = g.stop_grad(text);
    let t = g.normalize_rows(t)?;
    let cos = g.matmul_nt(e, t)?;
    let neg = g.scale(log_temperature, -1.0);
    let inv_t = g.exp(neg)?;
    let scaled = g.mul_scalar(cos, inv_t)?;
    g.group_max(scaled, label_group, groups)
}

/// Label rows restricted to `classes` and the class position of each row.
pub fn label_subset(text: &TextEmbeddings, classes: &[usize]) -> (Tensor, Vec<usize>) {
    text.restrict(classes)
}

/// Handles produced by one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub params: ParamVars,
    pub frozen: FrozenInputs,
    pub input: Var,
    pub decoded: Decoded,
    /// `Q × V`.
    pub mask_logits: Var,
    /// `Q × D_emb`.
    pub embeddings: Var,
    /// `Q × classes` over the label subset given to [`Model::forward`].
    pub class_logits: Var,
}

impl Model {
    /// Runs the network on one sample. `text` holds the label rows in use and
    /// `label_group` maps each to its output column.
    pub fn forward(
        &self,
        g: &mut Graph,
        sample: &Sample,
        text: &Tensor,
        label_group: &[usize],
        groups: usize,
        probe_frozen: bool,
    ) -> Result<Forward> {
        let pv = ParamVars::register(g, &self.params);
        self.forward_with(g, pv, sample, text, label_group, groups, probe_frozen)
    }

    /// [`Model::forward`] with parameter handles supplied by the caller.
    #[allow(clippy::too_many_arguments)]
    pub fn forward_with(
        &self,
        g: &mut Graph,
        pv: ParamVars,
        sample: &Sample,
        text: &Tensor,
        label_group: &[usize],
        groups: usize,
        probe_frozen: bool,
    ) -> Result<Forward> {
        let c = &self.config;
        if sample.features.cols() != c.d_emb || text.cols() != c.d_emb {
            return Err(dim_err(
                "forward",
                &[c.d_emb],
                &[sample.features.cols(), text.cols()],
            ));
        }
        let frozen = if probe_frozen {
            FrozenInputs::probed(g, &sample.features, text)
        } else {
            FrozenInputs::constant(g, &sample.features, text)
        };
        let fused = if c.fusion {
            let stats = g.constant(sample.stats.clone());
            let lidar = encode_lidar(g, stats, &pv)?;
            fuse(g, lidar, frozen.features)?
        } else {
            g.stop_grad(frozen.features)
        };
        let pos = g.constant(positional_tail(c, &sample.centroids));
        let input = g.concat_cols(&[fused, pos])?;
        let decoded = decode(g, input, pv.get("queries"), c.layers, &pv)?;
        let mask_logits = predict_masks(g, decoded.queries, input, &pv)?;
        let embeddings = predict_class_embedding(g, decoded.queries, &pv)?;
        let class_logits = class_logits(
            g,
            embeddings,
            frozen.text,
            label_group,
            groups,
            pv.get("log_temperature"),
        )?;
        Ok(Forward {
            params: pv,
            frozen,
            input,
            decoded,
            mask_logits,
            embeddings,
            class_logits,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, matmul};
    use crate::vocab::{build_text_embeddings, gen_prototypes, Vocabulary};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn tiny() -> ModelConfig {
        ModelConfig {
            lidar_hidden: 5,
            d_lidar: 4,
            d_emb: 8,
            d_q: 6,
            q_learn: 4,
            stuff_queries: 2,
            layers: 2,
            ffn_hidden: 7,
            mask_width: 5,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn fuse_concatenates_and_recovers_halves() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut g = Graph::new();
        let lidar = g.constant(rand_tensor(&mut rng, &[3, 4]));
        let mut f = rand_tensor(&mut rng, &[3, 16]);
        for x in &mut f.data_mut()[16..32] {
            *x = 0.0;
        }
        let fv = g.constant(f.clone());
        let out = fuse(&mut g, lidar, fv).unwrap();
        let o = g.value(out);
        assert_eq!(o.shape(), &[3, 20]);
        for r in 0..3 {
            assert_eq!(&o.row(r)[..4], g.value(lidar).row(r));
            assert_eq!(&o.row(r)[4..], f.row(r));
        }
        assert!(o.row(1)[4..].iter().all(|&x| x == 0.0));
        let bad = g.constant(Tensor::zeros(&[2, 16]));
        assert!(matches!(fuse(&mut g, lidar, bad), Err(Error::Dimension { .. })));
    }

    #[test]
    fn zero_layers_is_identity_and_attention_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = Model::init(tiny(), 3).unwrap();
        let mut g = Graph::new();
        let pv = ParamVars::register(&mut g, &model.params);
        let input = g.constant(rand_tensor(&mut rng, &[9, tiny().input_width()]));
        let q = pv.get("queries");
        let d0 = decode(&mut g, input, q, 0, &pv).unwrap();
        assert_eq!(g.value(d0.queries), g.value(q));
        let d2 = decode(&mut g, input, q, 2, &pv).unwrap();
        for a in &d2.attention {
            for r in 0..g.value(*a).rows() {
                let s: f64 = g.value(*a).row(r).iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn masks_match_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = ModelConfig {
            q_learn: 8,
            stuff_queries: 2,
            ..ModelConfig::default()
        };
        let model = Model::init(cfg.clone(), 5).unwrap();
        let mut g = Graph::new();
        let pv = ParamVars::register(&mut g, &model.params);
        let q = g.constant(rand_tensor(&mut rng, &[10, cfg.d_q]));
        let x = g.constant(rand_tensor(&mut rng, &[800, cfg.input_width()]));
        let m = predict_masks(&mut g, q, x, &pv).unwrap();
        assert_eq!(g.value(m).shape(), &[10, 800]);
        let p = &model.params;
        let a = matmul(g.value(q), p.get("mask.wq").unwrap()).unwrap();
        let b = matmul(g.value(x), p.get("mask.wv").unwrap()).unwrap();
        for qi in [0, 3, 9] {
            for v in [0, 17, 799] {
                let mut s = 0.0;
                for k in 0..cfg.mask_width {
                    s += a.get(qi, k) * b.get(v, k);
                }
                assert!((g.value(m).get(qi, v) - s).abs() < 1e-12);
            }
        }
        let mut pz = model.params.clone();
        pz.set("mask.wq", Tensor::zeros(&[cfg.d_q, cfg.mask_width])).unwrap();
        let mut g2 = Graph::new();
        let pv2 = ParamVars::register(&mut g2, &pz);
        let q2 = g2.constant(rand_tensor(&mut rng, &[2, cfg.d_q]));
        let x2 = g2.constant(rand_tensor(&mut rng, &[5, cfg.input_width()]));
        let m2 = predict_masks(&mut g2, q2, x2, &pv2).unwrap();
        assert!(g2.value(m2).data().iter().all(|&l| l == 0.0));
    }

    #[test]
    fn class_logits_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let text = rand_tensor(&mut rng, &[3, 8]);
        let groups = [0, 1, 2];
        let eval = |v: Tensor, t: f64| {
            let mut g = Graph::new();
            let vv = g.constant(v);
            let tt = g.constant(text.clone());
            let lt = g.constant(Tensor::vector(alloc::vec![libm::log(t)]).unwrap());
            let out = class_logits(&mut g, vv, tt, &groups, 3, lt).unwrap();
            g.value(out).clone()
        };
        let t1 = Tensor::matrix(1, 8, text.row(0).to_vec()).unwrap();
        let s = eval(t1, 1.0);
        assert!((s.get(0, 0) - 1.0).abs() < 1e-12);
        let v = rand_tensor(&mut rng, &[1, 8]);
        let mut v3 = v.clone();
        for x in v3.data_mut() {
            *x *= 3.0;
        }
        let (a, b) = (eval(v.clone(), 1.0), eval(v3, 1.0));
        assert!(a.max_abs_diff(&b) < 1e-12);
        let half = eval(v, 0.5);
        for k in 0..3 {
            assert!((half.get(0, k) - 2.0 * a.get(0, k)).abs() < 1e-12);
        }
        let mut g = Graph::new();
        let z = g.constant(Tensor::zeros(&[1, 8]));
        let tt = g.constant(text.clone());
        let lt = g.constant(Tensor::vector(alloc::vec![0.0]).unwrap());
        assert!(matches!(
            class_logits(&mut g, z, tt, &groups, 3, lt),
            Err(Error::DegenerateVector(_))
        ));
    }

    fn tiny_sample(rng: &mut ChaCha8Rng, v: usize, d_emb: usize) -> Sample {
        use crate::geometry::{voxelize, PointCloud, VoxelGrid};
        let pts: Vec<[f64; 3]> = (0..v)
            .map(|i| [i as f64 + 0.5, 0.5, 0.5])
            .collect();
        let cloud = PointCloud::new(pts.clone(), None).unwrap();
        let grid = VoxelGrid::cubic(1.0, [0.0; 3], [v, 1, 1]).unwrap();
        let assign = voxelize(&cloud, &grid);
        Sample {
            id: 0,
            assign,
            stats: rand_tensor(rng, &[v, STAT_DIM]),
            centroids: pts,
            features: rand_tensor(rng, &[v, d_emb]),
            valid: alloc::vec![true; v],
            voxel_semantic: alloc::vec![0; v],
            voxel_instance: alloc::vec![1; v],
            point_semantic: alloc::vec![0; v],
            point_instance: alloc::vec![1; v],
            point_visible: alloc::vec![true; v],
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let model = Model::init(tiny(), 1).unwrap();
        let s = tiny_sample(&mut rng, 12, 8);
        let text = rand_tensor(&mut rng, &[5, 8]);
        let groups = [0, 1, 1, 2, 3];
        let run = || {
            let mut g = Graph::new();
            let f = model.forward(&mut g, &s, &text, &groups, 4, false).unwrap();
            (g.value(f.mask_logits).clone(), g.value(f.class_logits).clone())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn lidar_encoder_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let model = Model::init(tiny(), 2).unwrap();
        let stats = rand_tensor(&mut rng, &[6, STAT_DIM]);
        for name in ["lidar.w1", "lidar.b1", "lidar.w2"] {
            let report = grad_check(
                |g, x| {
                    let pv = ParamVars::register_probe(g, &model.params, name, x)?;
                    let s = g.constant(stats.clone());
                    let o = encode_lidar(g, s, &pv)?;
                    let o = g.sigmoid(o);
                    Ok(g.sum(o))
                },
                model.params.get(name).unwrap(),
                1e-6,
                1e-4,
            )
            .unwrap();
            assert!(report.passed, "{name}: {report:?}");
        }
    }

    #[test]
    fn decode_gradient_wrt_queries() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let model = Model::init(tiny(), 4).unwrap();
        let input = rand_tensor(&mut rng, &[7, tiny().input_width()]);
        let q0 = model.params.get("queries").unwrap().clone();
        let report = grad_check(
            |g, x| {
                let pv = ParamVars::register(g, &model.params);
                let i = g.constant(input.clone());
                let d = decode(g, i, x, 2, &pv)?;
                let s = g.sigmoid(d.queries);
                Ok(g.sum(s))
            },
            &q0,
            1e-6,
            1e-4,
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn street_vocab_forward_shapes() {
        let vocab = Vocabulary::street();
        let provider = gen_prototypes(0, vocab.len(), 16).unwrap();
        let text = build_text_embeddings(&vocab, &provider).unwrap();
        let base = vocab.base_classes();
        let (rows, group) = label_subset(&text, &base);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let s = tiny_sample(&mut rng, 20, 16);
        let model = Model::init(ModelConfig::default(), 0).unwrap();
        let mut g = Graph::new();
        let f = model.forward(&mut g, &s, &rows, &group, base.len(), false).unwrap();
        assert_eq!(g.value(f.mask_logits).shape(), &[18, 20]);
        assert_eq!(g.value(f.class_logits).shape(), &[18, base.len()]);
        assert!((model.temperature() - 0.07).abs() < 1e-15);
    }
}
