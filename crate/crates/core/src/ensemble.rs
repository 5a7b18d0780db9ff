//! Out-of-vocabulary classification from pooled image embeddings and its
//! geometric blend with the in-vocabulary head.

use alloc::vec::Vec;

use crate::error::{dim_err, Error, Result};
use crate::numerics::cosine;
use crate::vocab::{class_scores_multilabel, TextEmbeddings};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleParams {
    /// Weight of the pooled-embedding classifier on base classes.
    pub alpha: f64,
    /// Weight of the pooled-embedding classifier on novel classes.
    pub beta: f64,
}

impl Default for EnsembleParams {
    fn default() -> Self {
        Self {
            alpha: 0.0,
            beta: 1.0,
        }
    }
}

impl EnsembleParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) || !(0.0..=1.0).contains(&beta) {
            return Err(Error::Configuration("ensemble weights must lie in [0, 1]".into()));
        }
        Ok(Self { alpha, beta })
    }
}

/// `cos(w, t_i) / T` per label, reduced to classes by the per-class maximum.
pub fn out_of_vocab_logits(w: &[f64], embeds: &TextEmbeddings, temperature: f64) -> Result<Vec<f64>> {
    if w.len() != embeds.dim() {
        return Err(dim_err("out_of_vocab_logits", &[embeds.dim()], &[w.len()]));
    }
    if !(temperature > 0.0) {
        return Err(Error::Configuration("temperature must be positive".into()));
    }
    let rows = embeds.rows();
    let per_label = (0..embeds.num_labels())
        .map(|i| cosine(w, rows.row(i)).map(|c| c / temperature))
        .collect::<Result<Vec<f64>>>()
        .map_err(|_| Error::DegenerateVector("out_of_vocab_logits"))?;
    class_scores_multilabel(&per_label, embeds)
}

/// `p_v^(1−a) · p_w^a` per class with `a = alpha` on base and `beta` on novel classes.
pub fn geometric_ensemble(
    p_v: &[f64],
    p_w: &[f64],
    params: EnsembleParams,
    is_base: &[bool],
) -> Result<Vec<f64>> {
    if p_v.len() != p_w.len() || p_v.len() != is_base.len() {
        return Err(dim_err(
            "geometric_ensemble",
            &[p_v.len(), p_v.len()],
            &[p_w.len(), is_base.len()],
        ));
    }
    Ok(p_v
        .iter()
        .zip(p_w)
        .zip(is_base)
        .map(|((&v, &w), &base)| {
            let a = if base { params.alpha } else { params.beta };
            // exact at the endpoints so 0^0 never arises
            if a == 0.0 {
                v
            } else if a == 1.0 {
                w
            } else {
                libm::pow(v, 1.0 - a) * libm::pow(w, a)
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::softmax;
    use crate::vocab::{build_text_embeddings, gen_prototypes, Vocabulary};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn embeds(noise: f64) -> (Vocabulary, TextEmbeddings, crate::vocab::PrototypeProvider) {
        let vocab = Vocabulary::street();
        let p = gen_prototypes(1, vocab.len(), 16).unwrap().with_label_noise(noise);
        let t = build_text_embeddings(&vocab, &p).unwrap();
        (vocab, t, p)
    }

    #[test]
    fn prototype_is_classified_as_its_class() {
        let (vocab, t, p) = embeds(0.0);
        for c in 0..vocab.len() {
            let s = out_of_vocab_logits(p.prototype(c), &t, 0.07).unwrap();
            let best = (0..s.len()).max_by(|&a, &b| s[a].total_cmp(&s[b])).unwrap();
            assert_eq!(best, c);
        }
    }

    #[test]
    fn scale_invariant_and_matches_loop() {
        let (_, t, _) = embeds(0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w3: Vec<f64> = w.iter().map(|x| 3.0 * x).collect();
        let a = out_of_vocab_logits(&w, &t, 0.07).unwrap();
        let b = out_of_vocab_logits(&w3, &t, 0.07).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        let mut oracle = vec![f64::NEG_INFINITY; t.num_classes()];
        for i in 0..t.num_labels() {
            let r = t.rows().row(i);
            let dot: f64 = w.iter().zip(r).map(|(p, q)| p * q).sum();
            let nw = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nr = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            let c = t.label_class()[i];
            oracle[c] = oracle[c].max(dot / (nw * nr) / 0.07);
        }
        for (x, y) in a.iter().zip(&oracle) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(matches!(
            out_of_vocab_logits(&[0.0; 16], &t, 0.07),
            Err(Error::DegenerateVector(_))
        ));
    }

    #[test]
    fn endpoint_weights() {
        let pv = [0.5, 0.3, 0.2];
        let pw = [0.1, 0.1, 0.8];
        let base = [true, true, false];
        let s = geometric_ensemble(&pv, &pw, EnsembleParams::new(0.0, 1.0).unwrap(), &base).unwrap();
        assert_eq!(s, vec![0.5, 0.3, 0.8]);
        let s = geometric_ensemble(&pv, &pw, EnsembleParams::new(0.0, 0.0).unwrap(), &base).unwrap();
        assert_eq!(s, pv.to_vec());
        assert!(EnsembleParams::new(1.5, 0.0).is_err());
    }

    #[test]
    fn half_weights_are_geometric_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
        let b: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
        let (pv, pw) = (softmax(&a), softmax(&b));
        let base = [true, false, true, false, true, true, false, true];
        let s = geometric_ensemble(&pv, &pw, EnsembleParams::new(0.5, 0.5).unwrap(), &base).unwrap();
        for i in 0..8 {
            assert!((s[i] - (pv[i] * pw[i]).sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn base_only_argmax_follows_in_vocab_head() {
        let pv = [0.2, 0.7, 0.1];
        let pw = [0.9, 0.05, 0.05];
        let s = geometric_ensemble(&pv, &pw, EnsembleParams::default(), &[true; 3]).unwrap();
        let best = (0..3).max_by(|&a, &b| s[a].total_cmp(&s[b])).unwrap();
        assert_eq!(best, 1);
    }

    proptest! {
        #[test]
        fn blend_lies_between_inputs(
            a in proptest::collection::vec(-3.0f64..3.0, 5),
            b in proptest::collection::vec(-3.0f64..3.0, 5),
            alpha in 0.0f64..=1.0,
            beta in 0.0f64..=1.0,
        ) {
            let (pv, pw) = (softmax(&a), softmax(&b));
            let base = [true, false, true, false, false];
            let s = geometric_ensemble(&pv, &pw, EnsembleParams::new(alpha, beta).unwrap(), &base).unwrap();
            for i in 0..5 {
                let lo = pv[i].min(pw[i]) * (1.0 - 1e-12);
                let hi = pv[i].max(pw[i]) * (1.0 + 1e-12);
                prop_assert!(s[i] >= lo && s[i] <= hi);
            }
        }
    }
}
