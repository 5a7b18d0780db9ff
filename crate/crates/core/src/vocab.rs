//! Class vocabulary, synthetic prototype embeddings and label-level scoring.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{dim_err, Error, Result};
use crate::numerics::tensor::{dot, l2};
use crate::numerics::Tensor;
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassInfo {
    pub name: String,
    pub is_thing: bool,
    pub is_base: bool,
    pub labels: Vec<String>,
}

impl ClassInfo {
    pub fn new(name: &str, is_thing: bool, is_base: bool, labels: &[&str]) -> Self {
        Self {
            name: name.into(),
            is_thing,
            is_base,
            labels: labels.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Ordered classes with thing/stuff and base/novel flags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    classes: Vec<ClassInfo>,
}

impl Vocabulary {
    pub fn new(classes: Vec<ClassInfo>) -> Result<Self> {
        for (i, c) in classes.iter().enumerate() {
            if classes[..i].iter().any(|o| o.name == c.name) {
                return Err(Error::Configuration(alloc::format!(
                    "duplicate class name `{}`",
                    c.name
                )));
            }
            if c.labels.is_empty() {
                return Err(Error::Configuration(alloc::format!(
                    "class `{}` has no labels",
                    c.name
                )));
            }
        }
        if !classes.iter().any(|c| c.is_base) {
            return Err(Error::Configuration("vocabulary needs at least one base class".into()));
        }
        Ok(Self { classes })
    }

    /// Street-scene vocabulary: four base things, one novel thing, two base
    /// stuff classes and one novel stuff class.
    pub fn street() -> Self {
        Self::new(vec![
            ClassInfo::new("car", true, true, &["car", "automobile"]),
            ClassInfo::new("pedestrian", true, true, &["pedestrian", "person"]),
            ClassInfo::new("bicycle", true, true, &["bicycle"]),
            ClassInfo::new("barrier", true, true, &["barrier", "traffic barrier"]),
            ClassInfo::new("bus", true, false, &["bus"]),
            ClassInfo::new("road", false, true, &["road", "drivable surface"]),
            ClassInfo::new("sidewalk", false, true, &["sidewalk"]),
            ClassInfo::new("vegetation", false, false, &["vegetation", "tree"]),
        ])
        .expect("street vocabulary is well formed")
    }

    pub fn classes(&self) -> &[ClassInfo] {
        &self.classes
    }

    pub fn class(&self, c: usize) -> &ClassInfo {
        &self.classes[c]
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| Error::Lookup {
                kind: "class",
                name: name.into(),
            })
    }

    pub fn num_base(&self) -> usize {
        self.classes.iter().filter(|c| c.is_base).count()
    }

    pub fn num_novel(&self) -> usize {
        self.len() - self.num_base()
    }

    pub fn base_classes(&self) -> Vec<usize> {
        (0..self.len()).filter(|&c| self.classes[c].is_base).collect()
    }

    pub fn novel_classes(&self) -> Vec<usize> {
        (0..self.len()).filter(|&c| !self.classes[c].is_base).collect()
    }

    /// Base stuff classes in vocabulary order; position k is bound to fixed query k.
    pub fn base_stuff(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&c| self.classes[c].is_base && !self.classes[c].is_thing)
            .collect()
    }

    /// Re-splits base/novel so `novel_things` things and `novel_stuff` stuff
    /// classes, drawn with `seed`, become novel.
    pub fn resplit(&self, novel_things: usize, novel_stuff: usize, seed: u64) -> Result<Self> {
        let mut rng = stream(seed, Stream::Split);
        let mut pick = |thing: bool, n: usize| -> Result<Vec<usize>> {
            let mut pool: Vec<usize> =
                (0..self.len()).filter(|&c| self.classes[c].is_thing == thing).collect();
            if n >= pool.len() {
                return Err(Error::Configuration(
                    "split would leave no base class of a kind".into(),
                ));
            }
            let mut out = Vec::with_capacity(n);
            for _ in 0..n {
                out.push(pool.swap_remove(rng.random_range(0..pool.len())));
            }
            Ok(out)
        };
        let mut novel = pick(true, novel_things)?;
        novel.extend(pick(false, novel_stuff)?);
        let classes = self
            .classes
            .iter()
            .enumerate()
            .map(|(i, c)| ClassInfo {
                is_base: !novel.contains(&i),
                ..c.clone()
            })
            .collect();
        Self::new(classes)
    }
}

fn normalize(v: &mut [f64]) -> Result<()> {
    let n = l2(v);
    if n == 0.0 {
        return Err(Error::DegenerateVector("normalize"));
    }
    for x in v.iter_mut() {
        *x /= n;
    }
    Ok(())
}

fn gaussian_vec<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

/// Largest cosine allowed between two distinct class prototypes.
pub const MAX_PROTOTYPE_COSINE: f64 = 0.7;
const PROTOTYPE_RETRIES: usize = 10_000;

/// Synthetic stand-in for a frozen vision-language encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeProvider {
    pub seed: u64,
    pub dim: usize,
    pub prototypes: Vec<Vec<f64>>,
    /// Unit vector orthogonal to every prototype, used for unlabeled pixels.
    pub unknown: Vec<f64>,
    pub label_noise: f64,
}

pub fn gen_prototypes(seed: u64, classes: usize, dim: usize) -> Result<PrototypeProvider> {
    if classes < 2 || dim < 4 {
        return Err(Error::Configuration(
            "prototypes need at least 2 classes and 4 dimensions".into(),
        ));
    }
    if classes >= dim {
        return Err(Error::Capacity(alloc::format!(
            "{classes} prototypes leave no room for an orthogonal unknown vector in {dim} dimensions"
        )));
    }
    let mut rng = stream(seed, Stream::Prototypes);
    for _ in 0..PROTOTYPE_RETRIES {
        let mut protos = Vec::with_capacity(classes);
        for _ in 0..classes {
            let mut v = gaussian_vec(&mut rng, dim);
            normalize(&mut v)?;
            protos.push(v);
        }
        let separated = (0..classes)
            .all(|i| (0..i).all(|j| dot(&protos[i], &protos[j]) <= MAX_PROTOTYPE_COSINE));
        if !separated {
            continue;
        }
        let unknown = orthogonal_unit(&mut rng, &protos)?;
        return Ok(PrototypeProvider {
            seed,
            dim,
            prototypes: protos,
            unknown,
            label_noise: 0.1,
        });
    }
    Err(Error::Capacity(alloc::format!(
        "no {classes} prototypes in {dim} dimensions with cosine <= {MAX_PROTOTYPE_COSINE} after {PROTOTYPE_RETRIES} draws"
    )))
}

/// Random unit vector orthogonal to the span of `basis` (Gram–Schmidt).
fn orthogonal_unit<R: Rng>(rng: &mut R, basis: &[Vec<f64>]) -> Result<Vec<f64>> {
    let dim = basis[0].len();
    let mut ortho: Vec<Vec<f64>> = Vec::with_capacity(basis.len());
    for b in basis {
        let mut v = b.clone();
        for o in &ortho {
            let d = dot(&v, o);
            v.iter_mut().zip(o).for_each(|(x, y)| *x -= d * y);
        }
        if l2(&v) > 1e-10 {
            normalize(&mut v)?;
            ortho.push(v);
        }
    }
    for _ in 0..64 {
        let mut u = gaussian_vec(rng, dim);
        for _ in 0..2 {
            for o in &ortho {
                let d = dot(&u, o);
                u.iter_mut().zip(o).for_each(|(x, y)| *x -= d * y);
            }
        }
        if l2(&u) > 1e-6 {
            normalize(&mut u)?;
            return Ok(u);
        }
    }
    Err(Error::Capacity("prototypes span the whole embedding space".into()))
}

impl PrototypeProvider {
    pub fn with_label_noise(mut self, noise: f64) -> Self {
        self.label_noise = noise;
        self
    }

    pub fn prototype(&self, class: usize) -> &[f64] {
        &self.prototypes[class]
    }

    /// `normalize(prototype + sigma · gaussian)`.
    pub fn noisy_prototype<R: Rng>(&self, class: usize, sigma: f64, rng: &mut R) -> Vec<f64> {
        let mut v = self.prototypes[class].clone();
        if sigma == 0.0 {
            return v;
        }
        for x in v.iter_mut() {
            let g: f64 = rng.sample(StandardNormal);
            *x += sigma * g;
        }
        // a zero vector after noise falls back to the clean prototype
        if normalize(&mut v).is_err() {
            v = self.prototypes[class].clone();
        }
        v
    }
}

/// Unit text embedding per label, with the owning class of each row.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbeddings {
    rows: Tensor,
    label_class: Vec<usize>,
    labels: Vec<String>,
    num_classes: usize,
}

/// 64-bit FNV-1a, used to give every label its own noise stream.
fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub fn build_text_embeddings(
    vocab: &Vocabulary,
    provider: &PrototypeProvider,
) -> Result<TextEmbeddings> {
    if provider.prototypes.len() < vocab.len() {
        return Err(Error::Lookup {
            kind: "prototype for class",
            name: vocab.class(provider.prototypes.len()).name.clone(),
        });
    }
    let mut data = Vec::new();
    let mut label_class = Vec::new();
    let mut labels = Vec::new();
    for (c, info) in vocab.classes().iter().enumerate() {
        for label in &info.labels {
            let mut rng = stream(provider.seed ^ fnv1a(label), Stream::Labels);
            data.extend(provider.noisy_prototype(c, provider.label_noise, &mut rng));
            label_class.push(c);
            labels.push(label.clone());
        }
    }
    let rows = Tensor::new(&[labels.len(), provider.dim], data)?;
    Ok(TextEmbeddings {
        rows,
        label_class,
        labels,
        num_classes: vocab.len(),
    })
}

impl TextEmbeddings {
    pub fn rows(&self) -> &Tensor {
        &self.rows
    }

    pub fn label_class(&self) -> &[usize] {
        &self.label_class
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn num_labels(&self) -> usize {
        self.label_class.len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dim(&self) -> usize {
        self.rows.cols()
    }

    /// Rows whose class is in `classes`, with the position of that class in
    /// `classes` for each kept row.
    pub fn restrict(&self, classes: &[usize]) -> (Tensor, Vec<usize>) {
        let d = self.dim();
        let mut data = Vec::new();
        let mut group = Vec::new();
        for (i, &c) in self.label_class.iter().enumerate() {
            if let Some(pos) = classes.iter().position(|&k| k == c) {
                data.extend_from_slice(self.rows.row(i));
                group.push(pos);
            }
        }
        let n = group.len();
        (Tensor::from_raw(&[n, d], data), group)
    }
}

/// Class score = max over the class's label scores.
pub fn class_scores_multilabel(per_label: &[f64], embeds: &TextEmbeddings) -> Result<Vec<f64>> {
    if per_label.len() != embeds.num_labels() {
        return Err(dim_err(
            "class_scores_multilabel",
            &[embeds.num_labels()],
            &[per_label.len()],
        ));
    }
    let mut out = vec![f64::NEG_INFINITY; embeds.num_classes()];
    for (&s, &c) in per_label.iter().zip(embeds.label_class()) {
        if s > out[c] {
            out[c] = s;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cos(a: &[f64], b: &[f64]) -> f64 {
        dot(a, b) / (l2(a) * l2(b))
    }

    #[test]
    fn prototypes_are_deterministic() {
        assert_eq!(gen_prototypes(4, 8, 16).unwrap(), gen_prototypes(4, 8, 16).unwrap());
        assert_ne!(
            gen_prototypes(4, 8, 16).unwrap().prototypes,
            gen_prototypes(5, 8, 16).unwrap().prototypes
        );
    }

    #[test]
    fn two_prototypes_in_four_dims() {
        let p = gen_prototypes(0, 2, 4).unwrap();
        assert!(cos(&p.prototypes[0], &p.prototypes[1]) <= 0.7);
    }

    #[test]
    fn all_pairs_separated_and_unknown_orthogonal() {
        let p = gen_prototypes(0, 8, 16).unwrap();
        let mut pairs = 0;
        for i in 0..8 {
            assert!((l2(&p.prototypes[i]) - 1.0).abs() < 1e-12);
            assert!(cos(&p.prototypes[i], &p.unknown).abs() < 1e-10);
            for j in 0..i {
                assert!(cos(&p.prototypes[i], &p.prototypes[j]) <= 0.7);
                pairs += 1;
            }
        }
        assert_eq!(pairs, 28);
    }

    #[test]
    fn impossible_separation_is_capacity_error() {
        assert!(matches!(gen_prototypes(0, 30, 4), Err(Error::Capacity(_))));
        assert!(matches!(gen_prototypes(0, 1, 16), Err(Error::Configuration(_))));
    }

    #[test]
    fn noise_free_labels_equal_prototypes() {
        let vocab = Vocabulary::street();
        let p = gen_prototypes(1, 8, 16).unwrap().with_label_noise(0.0);
        let t = build_text_embeddings(&vocab, &p).unwrap();
        for (i, &c) in t.label_class().iter().enumerate() {
            assert_eq!(t.rows().row(i), p.prototype(c));
        }
    }

    #[test]
    fn aliases_closer_to_each_other_than_to_other_classes() {
        let vocab = Vocabulary::street();
        let p = gen_prototypes(1, 8, 16).unwrap();
        let t = build_text_embeddings(&vocab, &p).unwrap();
        let car: Vec<usize> = (0..t.num_labels()).filter(|&i| t.label_class()[i] == 0).collect();
        assert_eq!(car.len(), 2);
        let alias = cos(t.rows().row(car[0]), t.rows().row(car[1]));
        for c in 1..8 {
            assert!(alias > cos(t.rows().row(car[0]), p.prototype(c)));
        }
        for i in 0..t.num_labels() {
            assert!((l2(t.rows().row(i)) - 1.0).abs() < 1e-9);
        }
        assert_eq!(t, build_text_embeddings(&vocab, &p).unwrap());
    }

    #[test]
    fn missing_prototype_is_lookup_error() {
        let vocab = Vocabulary::street();
        let p = gen_prototypes(1, 4, 16).unwrap();
        assert!(matches!(
            build_text_embeddings(&vocab, &p),
            Err(Error::Lookup { .. })
        ));
    }

    #[test]
    fn multilabel_max() {
        let vocab = Vocabulary::new(vec![
            ClassInfo::new("a", true, true, &["a"]),
            ClassInfo::new("b", false, true, &["b1", "b2"]),
        ])
        .unwrap();
        let p = gen_prototypes(2, 2, 4).unwrap();
        let t = build_text_embeddings(&vocab, &p).unwrap();
        assert_eq!(class_scores_multilabel(&[0.4, 0.2, 0.9], &t).unwrap(), vec![0.4, 0.9]);
        let single = Vocabulary::new(vec![
            ClassInfo::new("a", true, true, &["a"]),
            ClassInfo::new("b", true, true, &["b"]),
        ])
        .unwrap();
        let t1 = build_text_embeddings(&single, &p).unwrap();
        assert_eq!(class_scores_multilabel(&[0.3, -0.2], &t1).unwrap(), vec![0.3, -0.2]);
    }

    #[test]
    fn noise_free_argmax_recovers_class() {
        let vocab = Vocabulary::street();
        let p = gen_prototypes(3, 8, 16).unwrap().with_label_noise(0.0);
        let t = build_text_embeddings(&vocab, &p).unwrap();
        for c in 0..8 {
            let scores: Vec<f64> = (0..t.num_labels())
                .map(|i| cos(p.prototype(c), t.rows().row(i)))
                .collect();
            let cls = class_scores_multilabel(&scores, &t).unwrap();
            let arg = (0..8).max_by(|&a, &b| cls[a].total_cmp(&cls[b])).unwrap();
            assert_eq!(arg, c);
        }
    }

    #[test]
    fn vocabulary_validation_and_split() {
        let v = Vocabulary::street();
        assert_eq!((v.num_base(), v.num_novel()), (6, 2));
        assert_eq!(v.base_stuff(), vec![5, 6]);
        assert_eq!(v.index_of("bus").unwrap(), 4);
        assert!(v.index_of("truck").is_err());
        let dup = Vocabulary::new(vec![
            ClassInfo::new("a", true, true, &["a"]),
            ClassInfo::new("a", true, true, &["a"]),
        ]);
        assert!(dup.is_err());
        let r = v.resplit(1, 1, 11).unwrap();
        assert_eq!(r.num_novel(), 2);
        assert_eq!(r.novel_classes().iter().filter(|&&c| r.class(c).is_thing).count(), 1);
        assert_eq!(r, v.resplit(1, 1, 11).unwrap());
    }

    proptest! {
        #[test]
        fn multilabel_matches_loop_oracle(scores in proptest::collection::vec(-5.0f64..5.0, 13)) {
            let vocab = Vocabulary::street();
            let p = gen_prototypes(0, 8, 16).unwrap();
            let t = build_text_embeddings(&vocab, &p).unwrap();
            let s = &scores[..t.num_labels()];
            let got = class_scores_multilabel(s, &t).unwrap();
            for c in 0..8 {
                let mut best = f64::NEG_INFINITY;
                for i in 0..t.num_labels() {
                    if t.label_class()[i] == c && s[i] > best {
                        best = s[i];
                    }
                }
                prop_assert_eq!(got[c], best);
            }
        }
    }
}
