use alloc::vec;
use alloc::vec::Vec;

use crate::error::{dim_err, Error, Result};

/// Dense row-major `f64` array. Every element is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(dim_err("Tensor::new", &[n], &[data.len()]));
        }
        if let Some(index) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Skips the finiteness scan; callers guarantee finite inputs map to finite outputs.
    pub(crate) fn from_raw(shape: &[usize], data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::from_raw(shape, vec![0.0; n])
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        assert!(value.is_finite());
        let n = shape.iter().product();
        Self::from_raw(shape, vec![value; n])
    }

    pub fn scalar(value: f64) -> Result<Self> {
        Self::new(&[1], vec![value])
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Self::new(&[n], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(&[rows, cols], data)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(dim_err("Tensor::from_rows", &[c], &[row.len()]));
            }
            data.extend_from_slice(row);
        }
        Self::new(&[r, c], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows of a 2-D tensor (1-D tensors count as one row).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            _ => 1,
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[1],
            1 => self.shape[0],
            _ => self.data.len(),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(dim_err("reshape", &[self.data.len()], &[n]));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn transpose(&self) -> Self {
        let (r, c) = (self.rows(), self.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Self::from_raw(&[c, r], out)
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.data.iter().map(|x| x * x).sum())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| libm::fabs(a - b))
            .fold(0.0, f64::max)
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// `out[m×n] += a[m×k] · b[k×n]`, i-k-j order so the inner loop is contiguous.
pub(crate) fn gemm_acc(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m×n] += a[m×k] · b[n×k]ᵀ`.
pub(crate) fn gemm_nt_acc(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = 0.0;
            for (x, y) in arow.iter().zip(brow) {
                s += x * y;
            }
            out[i * n + j] += s;
        }
    }
}

/// `out[k×n] += a[m×k]ᵀ · b[m×n]`.
pub(crate) fn gemm_tn_acc(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[1] != b.shape[0] {
        return Err(dim_err("matmul", a.shape(), b.shape()));
    }
    let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut out = vec![0.0; m * n];
    gemm_acc(&mut out, &a.data, &b.data, m, k, n);
    Ok(Tensor::from_raw(&[m, n], out))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

/// Cosine similarity of two equal-length vectors.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(dim_err("cosine", &[a.len()], &[b.len()]));
    }
    let (na, nb) = (l2(a), l2(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateVector("cosine"));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Max-shifted softmax.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let mx = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = v.iter().map(|x| libm::exp(x - mx)).collect();
    let s: f64 = out.iter().sum();
    for o in &mut out {
        *o /= s;
    }
    out
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

pub fn l1_mean(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape != b.shape {
        return Err(dim_err("l1_mean", a.shape(), b.shape()));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let s: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| libm::fabs(x - y))
        .sum();
    Ok(s / a.len() as f64)
}

/// Focal-loss parameters (gamma, alpha).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocalParams {
    pub gamma: f64,
    pub alpha: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self {
            gamma: 2.0,
            alpha: 0.25,
        }
    }
}

/// Probabilities are clamped away from 0 and 1 before taking logs.
pub(crate) const PROB_EPS: f64 = 1e-12;

/// One-vs-all focal loss summed over classes. `target = None` is the all-negative target.
pub fn focal_loss(probs: &[f64], target: Option<usize>, fp: FocalParams) -> Result<f64> {
    if let Some(t) = target {
        if t >= probs.len() {
            return Err(dim_err("focal_loss", &[probs.len()], &[t]));
        }
    }
    Ok(probs
        .iter()
        .enumerate()
        .map(|(c, &p)| focal_term(p, target == Some(c), fp).0)
        .sum())
}

/// Value and d/dp of one binary focal term.
pub(crate) fn focal_term(p: f64, positive: bool, fp: FocalParams) -> (f64, f64) {
    let FocalParams { gamma, alpha } = fp;
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    if positive {
        let q = 1.0 - p;
        let w = libm::pow(q, gamma);
        let lp = libm::log(p);
        let val = -alpha * w * lp;
        let dw = if gamma == 0.0 { 0.0 } else { -gamma * libm::pow(q, gamma - 1.0) };
        let grad = -alpha * (dw * lp + w / p);
        (val, grad)
    } else {
        let w = libm::pow(p, gamma);
        let lq = libm::log(1.0 - p);
        let val = -(1.0 - alpha) * w * lq;
        let dw = if gamma == 0.0 { 0.0 } else { gamma * libm::pow(p, gamma - 1.0) };
        let grad = -(1.0 - alpha) * (dw * lq - w / (1.0 - p));
        (val, grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_t(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        let d = (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::matrix(r, c, d).unwrap()
    }

    #[test]
    fn rejects_nan_and_bad_shape() {
        assert!(matches!(
            Tensor::vector(alloc::vec![1.0, f64::NAN]),
            Err(Error::NonFinite { index: 1 })
        ));
        assert!(Tensor::new(&[2, 2], alloc::vec![0.0; 3]).is_err());
    }

    #[test]
    fn matmul_identity_and_selector() {
        let m = Tensor::from_rows(&[alloc::vec![1.0, 2.0], alloc::vec![3.0, 4.0]]).unwrap();
        assert_eq!(matmul(&Tensor::identity(2), &m).unwrap(), m);
        let sel = Tensor::matrix(1, 2, alloc::vec![1.0, 0.0]).unwrap();
        let col = Tensor::matrix(2, 1, alloc::vec![5.0, 7.0]).unwrap();
        assert_eq!(matmul(&sel, &col).unwrap().data(), &[5.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = rand_t(&mut rng, 3, 4);
        let b = rand_t(&mut rng, 4, 2);
        let got = matmul(&a, &b).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let mut s = 0.0;
                for p in 0..4 {
                    s += a.get(i, p) * b.get(p, j);
                }
                assert!((got.get(i, j) - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Tensor::zeros(&[2, 3]);
        assert!(matches!(matmul(&a, &a), Err(Error::Dimension { .. })));
    }

    #[test]
    fn matmul_associative() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let a = rand_t(&mut rng, 3, 5);
            let b = rand_t(&mut rng, 5, 4);
            let c = rand_t(&mut rng, 4, 2);
            let l = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
            let r = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
            assert!(l.max_abs_diff(&r) < 1e-9);
        }
    }

    #[test]
    fn cosine_cases() {
        assert_eq!(cosine(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let expected = 5.0 / (libm::sqrt(14.0) * libm::sqrt(5.0));
        let got = cosine(&[1.0, 2.0, 3.0], &[-1.0, 0.0, 2.0]).unwrap();
        assert!((got - expected).abs() < 1e-15);
        assert_eq!(
            cosine(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::DegenerateVector("cosine"))
        );
    }

    #[test]
    fn softmax_cases() {
        assert_eq!(softmax(&[0.0, 0.0]), alloc::vec![0.5, 0.5]);
        let s = softmax(&[1000.0, 0.0]);
        assert!((s[0] - 1.0).abs() < 1e-15 && s[1] >= 0.0 && s[1] < 1e-300);
        let v = [0.3, -1.2, 2.5, 0.0, 0.7];
        let z: f64 = v.iter().map(|x: &f64| x.exp()).sum();
        for (a, x) in softmax(&v).iter().zip(v) {
            assert!((a - x.exp() / z).abs() < 1e-12);
        }
    }

    #[test]
    fn l1_and_focal_cases() {
        let a = Tensor::vector(alloc::vec![1.0, -2.0, 3.0]).unwrap();
        assert_eq!(l1_mean(&a, &a).unwrap(), 0.0);
        assert!(focal_loss(&[0.0, 1.0, 0.0], Some(1), FocalParams::default()).unwrap() < 1e-20);
        // p = [0.3, 0.7], target 1, gamma 2, alpha 0.25
        let want = -(0.75 * 0.3f64.powi(2) * (0.7f64).ln()) - 0.25 * 0.3f64.powi(2) * 0.7f64.ln();
        let got = focal_loss(&[0.3, 0.7], Some(1), FocalParams::default()).unwrap();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn focal_term_gradient_matches_difference() {
        let fp = FocalParams::default();
        for &pos in &[true, false] {
            for &p in &[0.05, 0.3, 0.5, 0.9] {
                let h = 1e-6;
                let num = (focal_term(p + h, pos, fp).0 - focal_term(p - h, pos, fp).0) / (2.0 * h);
                let ana = focal_term(p, pos, fp).1;
                assert!((num - ana).abs() < 1e-6 * (1.0 + ana.abs()));
            }
        }
    }
}
