//! Define-by-run reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and backward is a single reverse sweep.

use alloc::vec;
use alloc::vec::Vec;

use super::tensor::{
    focal_term, gemm_acc, gemm_nt_acc, gemm_tn_acc, sigmoid, FocalParams, Tensor,
};
use crate::error::{dim_err, Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Logits are clipped to this magnitude before any mask loss.
pub const MASK_LOGIT_CLIP: f64 = 20.0;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    StopGrad,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    MatMulTN(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    MulScalar(Var, Var),
    Exp(Var),
    Relu(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    NormalizeRows(Var),
    ConcatCols(Vec<Var>),
    SelectRows(Var, Vec<usize>),
    GroupMax(Var),
    Sum(Var),
    Focal {
        probs: Var,
        targets: Vec<Option<usize>>,
        params: FocalParams,
    },
    MaskLoss {
        logits: Var,
        rows: Vec<usize>,
        targets: Vec<Vec<bool>>,
        keep: Option<Vec<bool>>,
    },
    CosineLoss {
        embeddings: Var,
        targets: Tensor,
    },
    L1Rows {
        pred: Var,
        target: Var,
        rows: Vec<bool>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    // GroupMax winners or NormalizeRows norms, kept for backward.
    aux: Vec<f64>,
}

/// Discrete choices taken by the non-smooth ops (ReLU side, group-max winner,
/// mask-logit clip side, L1 sign), one entry per op in evaluation order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Branches(Vec<Vec<i64>>);

impl Branches {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Default)]
enum BranchMode {
    #[default]
    Free,
    Record(Vec<Vec<i64>>),
    Replay { branches: Branches, next: usize },
}

/// A tape of nodes. Rebuilt for each forward pass.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
    mode: BranchMode,
}

/// Gradients of one backward sweep, indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the output with respect to `v`; `None` when no path exists.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient or zeros of the node's shape.
    pub fn get_or_zeros(&self, g: &Graph, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(g.value(v).shape()))
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(dim_err(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn is_matrix(op: &'static str, a: &Tensor) -> Result<(usize, usize)> {
    if a.shape().len() != 2 {
        return Err(dim_err(op, &[0, 0], a.shape()));
    }
    Ok((a.shape()[0], a.shape()[1]))
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A graph that records every non-smooth choice; read them back with
    /// [`Graph::branches`].
    pub fn recording() -> Self {
        Self {
            nodes: Vec::new(),
            mode: BranchMode::Record(Vec::new()),
        }
    }

    /// A graph whose non-smooth ops take the given choices instead of their
    /// own, so the tape evaluates one fixed smooth piece. The ops must be
    /// built in the same order and with the same shapes as when recorded.
    pub fn replaying(branches: Branches) -> Self {
        Self {
            nodes: Vec::new(),
            mode: BranchMode::Replay { branches, next: 0 },
        }
    }

    /// Choices recorded so far (empty unless built with [`Graph::recording`]).
    pub fn branches(&self) -> Branches {
        match &self.mode {
            BranchMode::Record(b) => Branches(b.clone()),
            _ => Branches::default(),
        }
    }

    fn branch(&mut self, op: &'static str, computed: Vec<i64>) -> Result<Vec<i64>> {
        match &mut self.mode {
            BranchMode::Free => Ok(computed),
            BranchMode::Record(b) => {
                b.push(computed.clone());
                Ok(computed)
            }
            BranchMode::Replay { branches, next } => {
                let b = branches.0.get(*next).filter(|b| b.len() == computed.len()).ok_or_else(|| {
                    Error::Contract(alloc::format!("{op}: replayed branches do not match the tape"))
                })?;
                *next += 1;
                Ok(b.clone())
            }
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, aux: Vec<f64>) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            aux,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true, Vec::new())
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false, Vec::new())
    }

    /// Identity in the forward pass, blocks all gradient flow backward.
    pub fn stop_grad(&mut self, a: Var) -> Var {
        let v = self.value(a).clone();
        self.push(v, Op::StopGrad, false, Vec::new())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = is_matrix("matmul", self.value(a))?;
        let (k2, n) = is_matrix("matmul", self.value(b))?;
        if k != k2 {
            return Err(dim_err("matmul", &[m, k], &[k2, n]));
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(&mut out, self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_raw(&[m, n], out), Op::MatMul(a, b), rg, Vec::new()))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = is_matrix("matmul_nt", self.value(a))?;
        let (n, k2) = is_matrix("matmul_nt", self.value(b))?;
        if k != k2 {
            return Err(dim_err("matmul_nt", &[m, k], &[n, k2]));
        }
        let mut out = vec![0.0; m * n];
        gemm_nt_acc(&mut out, self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_raw(&[m, n], out), Op::MatMulNT(a, b), rg, Vec::new()))
    }

    /// `aᵀ · b`.
    pub fn matmul_tn(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = is_matrix("matmul_tn", self.value(a))?;
        let (m2, n) = is_matrix("matmul_tn", self.value(b))?;
        if m != m2 {
            return Err(dim_err("matmul_tn", &[m, k], &[m2, n]));
        }
        let mut out = vec![0.0; k * n];
        gemm_tn_acc(&mut out, self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_raw(&[k, n], out), Op::MatMulTN(a, b), rg, Vec::new()))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        is_matrix("transpose", self.value(a))?;
        let t = self.value(a).transpose();
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::Transpose(a), rg, Vec::new()))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let mut t = self.value(a).clone();
        t.add_assign(self.value(b));
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Add(a, b), rg, Vec::new()))
    }

    /// Adds the vector `b` to every row of `a`.
    pub fn add_bias(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = is_matrix("add_bias", self.value(a))?;
        if self.value(b).len() != n {
            return Err(dim_err("add_bias", &[n], self.value(b).shape()));
        }
        let mut t = self.value(a).clone();
        let bias = self.value(b).data().to_vec();
        for i in 0..m {
            for (x, bv) in t.data_mut()[i * n..(i + 1) * n].iter_mut().zip(&bias) {
                *x += bv;
            }
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::AddBias(a, b), rg, Vec::new()))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let mut t = self.value(a).clone();
        for x in t.data_mut() {
            *x *= c;
        }
        let rg = self.rg(&[a]);
        self.push(t, Op::Scale(a, c), rg, Vec::new())
    }

    /// Multiplies every entry of `a` by the one-element node `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(dim_err("mul_scalar", &[1], self.value(s).shape()));
        }
        let c = self.value(s).item();
        let mut t = self.value(a).clone();
        for x in t.data_mut() {
            *x *= c;
        }
        let rg = self.rg(&[a, s]);
        Ok(self.push(t, Op::MulScalar(a, s), rg, Vec::new()))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let src = self.value(a);
        let data: Vec<f64> = src.data().iter().map(|&x| f(x)).collect();
        if let Some(index) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        let t = Tensor::from_raw(src.shape(), data);
        let rg = self.rg(&[a]);
        Ok(self.push(t, op, rg, Vec::new()))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.map(a, libm::exp, Op::Exp(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let on: Vec<i64> = self.value(a).data().iter().map(|&x| i64::from(x > 0.0)).collect();
        let on = self.branch("relu", on)?;
        let src = self.value(a);
        let data = src.data().iter().zip(&on).map(|(&x, &o)| if o == 1 { x } else { 0.0 }).collect();
        let t = Tensor::from_raw(src.shape(), data);
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::Relu(a), rg, on.iter().map(|&o| o as f64).collect()))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
            .expect("sigmoid preserves finiteness")
    }

    /// Max-shifted softmax along each row.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = is_matrix("softmax_rows", self.value(a))?;
        let src = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let o = &mut out[i * n..(i + 1) * n];
            let mut s = 0.0;
            for (y, &x) in o.iter_mut().zip(row) {
                *y = libm::exp(x - mx);
                s += *y;
            }
            for y in o.iter_mut() {
                *y /= s;
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::from_raw(&[m, n], out), Op::SoftmaxRows(a), rg, Vec::new()))
    }

    /// Scales each row to unit L2 norm.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = is_matrix("normalize_rows", self.value(a))?;
        let src = self.value(a).data();
        let mut out = vec![0.0; m * n];
        let mut norms = Vec::with_capacity(m);
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let nr = super::tensor::l2(row);
            if nr == 0.0 {
                return Err(Error::DegenerateVector("normalize_rows"));
            }
            for (y, &x) in out[i * n..(i + 1) * n].iter_mut().zip(row) {
                *y = x / nr;
            }
            norms.push(nr);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::from_raw(&[m, n], out), Op::NormalizeRows(a), rg, norms))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return Err(Error::Contract("concat_cols of nothing".into()));
        };
        let m = self.value(*first).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = is_matrix("concat_cols", self.value(p))?;
            if r != m {
                return Err(dim_err("concat_cols", &[m], &[r]));
            }
            widths.push(c);
        }
        let n: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(
            Tensor::from_raw(&[m, n], out),
            Op::ConcatCols(parts.to_vec()),
            rg,
            Vec::new(),
        ))
    }

    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let (m, n) = is_matrix("select_rows", self.value(a))?;
        let mut out = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            if r >= m {
                return Err(dim_err("select_rows", &[m], &[r]));
            }
            out.extend_from_slice(self.value(a).row(r));
        }
        let rg = self.rg(&[a]);
        Ok(self.push(
            Tensor::from_raw(&[rows.len(), n], out),
            Op::SelectRows(a, rows.to_vec()),
            rg,
            Vec::new(),
        ))
    }

    /// `out[i][g] = max_{j : group[j] == g} a[i][j]`. Ties go to the lowest column.
    pub fn group_max(&mut self, a: Var, group_of_col: &[usize], groups: usize) -> Result<Var> {
        let (m, n) = is_matrix("group_max", self.value(a))?;
        if group_of_col.len() != n {
            return Err(dim_err("group_max", &[n], &[group_of_col.len()]));
        }
        if let Some(g) = (0..groups).find(|g| !group_of_col.contains(g)) {
            return Err(Error::Contract(alloc::format!("group {g} has no columns")));
        }
        let src = self.value(a).data();
        let mut out = vec![f64::NEG_INFINITY; m * groups];
        let mut arg = vec![0usize; m * groups];
        for i in 0..m {
            for (j, &g) in group_of_col.iter().enumerate() {
                if g >= groups {
                    return Err(dim_err("group_max", &[groups], &[g]));
                }
                let x = src[i * n + j];
                if x > out[i * groups + g] {
                    out[i * groups + g] = x;
                    arg[i * groups + g] = j;
                }
            }
        }
        let replay = matches!(self.mode, BranchMode::Replay { .. });
        let arg = self.branch("group_max", arg.iter().map(|&j| j as i64).collect())?;
        let src = self.value(a).data();
        for (k, &j) in arg.iter().enumerate().filter(|_| replay) {
            let j = usize::try_from(j).ok().filter(|&j| j < n && group_of_col[j] == k % groups);
            let j = j.ok_or_else(|| Error::Contract("group_max: replayed winner outside its group".into()))?;
            out[k] = src[(k / groups) * n + j];
        }
        let rg = self.rg(&[a]);
        Ok(self.push(
            Tensor::from_raw(&[m, groups], out),
            Op::GroupMax(a),
            rg,
            arg.iter().map(|&j| j as f64).collect(),
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::from_raw(&[1], vec![s]), Op::Sum(a), rg, Vec::new())
    }

    /// Mean over rows of the one-vs-all focal loss; `None` targets are all-negative.
    pub fn focal(
        &mut self,
        probs: Var,
        targets: &[Option<usize>],
        params: FocalParams,
    ) -> Result<Var> {
        let (m, n) = is_matrix("focal", self.value(probs))?;
        if targets.len() != m {
            return Err(dim_err("focal", &[m], &[targets.len()]));
        }
        let p = self.value(probs).data();
        let mut total = 0.0;
        for (i, t) in targets.iter().enumerate() {
            if matches!(t, Some(c) if *c >= n) {
                return Err(dim_err("focal", &[n], &[t.unwrap_or(0)]));
            }
            for c in 0..n {
                total += focal_term(p[i * n + c], *t == Some(c), params).0;
            }
        }
        let val = if m == 0 { 0.0 } else { total / m as f64 };
        let rg = self.rg(&[probs]);
        Ok(self.push(
            Tensor::from_raw(&[1], vec![val]),
            Op::Focal {
                probs,
                targets: targets.to_vec(),
                params,
            },
            rg,
            Vec::new(),
        ))
    }

    /// Mean over `(row, target)` pairs of BCE-with-logits (mean over kept
    /// columns) plus dice loss, on logits clipped to ±[`MASK_LOGIT_CLIP`].
    pub fn mask_loss(
        &mut self,
        logits: Var,
        rows: &[usize],
        targets: &[Vec<bool>],
        keep: Option<&[bool]>,
    ) -> Result<Var> {
        let (m, n) = is_matrix("mask_loss", self.value(logits))?;
        if rows.len() != targets.len() {
            return Err(dim_err("mask_loss", &[rows.len()], &[targets.len()]));
        }
        if let Some(k) = keep {
            if k.len() != n {
                return Err(dim_err("mask_loss", &[n], &[k.len()]));
            }
        }
        let src = self.value(logits).data();
        let mut sides = Vec::with_capacity(rows.len() * n);
        for (&r, tgt) in rows.iter().zip(targets) {
            if r >= m {
                return Err(dim_err("mask_loss", &[m], &[r]));
            }
            if tgt.len() != n {
                return Err(dim_err("mask_loss", &[n], &[tgt.len()]));
            }
            sides.extend(src[r * n..(r + 1) * n].iter().map(|&x| clip_side(x)));
        }
        let sides = self.branch("mask_loss", sides)?;
        let src = self.value(logits).data();
        let mut total = 0.0;
        for (k, (&r, tgt)) in rows.iter().zip(targets).enumerate() {
            total += mask_pair(&src[r * n..(r + 1) * n], &sides[k * n..(k + 1) * n], tgt, keep, None);
        }
        let val = if rows.is_empty() {
            0.0
        } else {
            total / rows.len() as f64
        };
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::from_raw(&[1], vec![val]),
            Op::MaskLoss {
                logits,
                rows: rows.to_vec(),
                targets: targets.to_vec(),
                keep: keep.map(<[bool]>::to_vec),
            },
            rg,
            sides.iter().map(|&c| c as f64).collect(),
        ))
    }

    /// Mean over rows of `1 − cos(embeddings[i], targets[i])`. Targets are constants.
    pub fn cosine_loss(&mut self, embeddings: Var, targets: Tensor) -> Result<Var> {
        let e = self.value(embeddings);
        same_shape("cosine_loss", e, &targets)?;
        let (m, _) = is_matrix("cosine_loss", e)?;
        let mut total = 0.0;
        for i in 0..m {
            total += 1.0 - super::tensor::cosine(e.row(i), targets.row(i))?;
        }
        let val = if m == 0 { 0.0 } else { total / m as f64 };
        let rg = self.rg(&[embeddings]);
        Ok(self.push(
            Tensor::from_raw(&[1], vec![val]),
            Op::CosineLoss {
                embeddings,
                targets,
            },
            rg,
            Vec::new(),
        ))
    }

    /// Mean absolute difference over the selected rows (all columns).
    pub fn l1_rows(&mut self, pred: Var, target: Var, rows: &[bool]) -> Result<Var> {
        let (m, n) = is_matrix("l1_rows", self.value(pred))?;
        same_shape("l1_rows", self.value(pred), self.value(target))?;
        if rows.len() != m {
            return Err(dim_err("l1_rows", &[m], &[rows.len()]));
        }
        let (p, t) = (self.value(pred).data(), self.value(target).data());
        let signs: Vec<i64> = (0..m)
            .filter(|&i| rows[i])
            .flat_map(|i| (0..n).map(move |j| i * n + j))
            .map(|k| sign(p[k] - t[k]) as i64)
            .collect();
        let signs = self.branch("l1_rows", signs)?;
        let (p, t) = (self.value(pred).data(), self.value(target).data());
        let mut total = 0.0;
        let mut count = 0usize;
        for i in (0..m).filter(|&i| rows[i]) {
            for j in 0..n {
                total += signs[count + j] as f64 * (p[i * n + j] - t[i * n + j]);
            }
            count += n;
        }
        let val = if count == 0 { 0.0 } else { total / count as f64 };
        let rg = self.rg(&[pred, target]);
        Ok(self.push(
            Tensor::from_raw(&[1], vec![val]),
            Op::L1Rows {
                pred,
                target,
                rows: rows.to_vec(),
            },
            rg,
            signs.iter().map(|&s| s as f64).collect(),
        ))
    }

    /// Reverse sweep from a one-element output.
    pub fn backward(&self, out: Var) -> Result<Gradients> {
        if self.value(out).len() != 1 {
            return Err(Error::Contract(alloc::format!(
                "backward needs a scalar output, got shape {:?}",
                self.value(out).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; out.0 + 1];
        grads[out.0] = Some(Tensor::full(&[1], 1.0));
        for idx in (0..=out.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let acc = |grads: &mut [Option<Tensor>], v: Var, t: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        let gd = g.data();
        match &node.op {
            Op::Leaf | Op::StopGrad => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.requires_grad(*a) {
                    let mut ga = vec![0.0; m * k];
                    gemm_nt_acc(&mut ga, gd, bv.data(), m, n, k);
                    acc(grads, *a, Tensor::from_raw(&[m, k], ga));
                }
                if self.requires_grad(*b) {
                    let mut gb = vec![0.0; k * n];
                    gemm_tn_acc(&mut gb, av.data(), gd, m, k, n);
                    acc(grads, *b, Tensor::from_raw(&[k, n], gb));
                }
            }
            Op::MatMulNT(a, b) => {
                // out = a bᵀ, a: m×k, b: n×k
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.rows());
                if self.requires_grad(*a) {
                    let mut ga = vec![0.0; m * k];
                    gemm_acc(&mut ga, gd, bv.data(), m, n, k);
                    acc(grads, *a, Tensor::from_raw(&[m, k], ga));
                }
                if self.requires_grad(*b) {
                    let mut gb = vec![0.0; n * k];
                    gemm_tn_acc(&mut gb, gd, av.data(), m, n, k);
                    acc(grads, *b, Tensor::from_raw(&[n, k], gb));
                }
            }
            Op::MatMulTN(a, b) => {
                // out = aᵀ b, a: m×k, b: m×n
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.requires_grad(*a) {
                    let mut ga = vec![0.0; m * k];
                    gemm_nt_acc(&mut ga, bv.data(), gd, m, n, k);
                    acc(grads, *a, Tensor::from_raw(&[m, k], ga));
                }
                if self.requires_grad(*b) {
                    let mut gb = vec![0.0; m * n];
                    gemm_acc(&mut gb, av.data(), gd, m, k, n);
                    acc(grads, *b, Tensor::from_raw(&[m, n], gb));
                }
            }
            Op::Transpose(a) => acc(grads, *a, g.transpose()),
            Op::Add(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.clone());
            }
            Op::AddBias(a, b) => {
                acc(grads, *a, g.clone());
                if self.requires_grad(*b) {
                    let n = g.cols();
                    let mut gb = vec![0.0; n];
                    for row in gd.chunks(n) {
                        for (s, x) in gb.iter_mut().zip(row) {
                            *s += x;
                        }
                    }
                    let shape = self.value(*b).shape().to_vec();
                    acc(grads, *b, Tensor::from_raw(&shape, gb));
                }
            }
            Op::Scale(a, c) => {
                let d = gd.iter().map(|x| x * c).collect();
                acc(grads, *a, Tensor::from_raw(g.shape(), d));
            }
            Op::MulScalar(a, s) => {
                let c = self.value(*s).item();
                if self.requires_grad(*a) {
                    let d = gd.iter().map(|x| x * c).collect();
                    acc(grads, *a, Tensor::from_raw(g.shape(), d));
                }
                if self.requires_grad(*s) {
                    let gs = super::tensor::dot(gd, self.value(*a).data());
                    let shape = self.value(*s).shape().to_vec();
                    acc(grads, *s, Tensor::from_raw(&shape, vec![gs]));
                }
            }
            Op::Exp(a) => {
                let d = gd.iter().zip(node.value.data()).map(|(x, y)| x * y).collect();
                acc(grads, *a, Tensor::from_raw(g.shape(), d));
            }
            Op::Relu(a) => {
                let d = gd
                    .iter()
                    .zip(&node.aux)
                    .map(|(x, &on)| if on == 1.0 { *x } else { 0.0 })
                    .collect();
                acc(grads, *a, Tensor::from_raw(g.shape(), d));
            }
            Op::Sigmoid(a) => {
                let d = gd
                    .iter()
                    .zip(node.value.data())
                    .map(|(x, s)| x * s * (1.0 - s))
                    .collect();
                acc(grads, *a, Tensor::from_raw(g.shape(), d));
            }
            Op::SoftmaxRows(a) => {
                let n = g.cols();
                let y = node.value.data();
                let mut d = vec![0.0; y.len()];
                for ((drow, grow), yrow) in d.chunks_mut(n).zip(gd.chunks(n)).zip(y.chunks(n)) {
                    let s = super::tensor::dot(grow, yrow);
                    for ((o, gv), yv) in drow.iter_mut().zip(grow).zip(yrow) {
                        *o = yv * (gv - s);
                    }
                }
                acc(grads, *a, Tensor::from_raw(g.shape(), d));
            }
            Op::NormalizeRows(a) => {
                let n = g.cols();
                let y = node.value.data();
                let mut d = vec![0.0; y.len()];
                for (i, ((drow, grow), yrow)) in
                    d.chunks_mut(n).zip(gd.chunks(n)).zip(y.chunks(n)).enumerate()
                {
                    let s = super::tensor::dot(grow, yrow);
                    let nr = node.aux[i];
                    for ((o, gv), yv) in drow.iter_mut().zip(grow).zip(yrow) {
                        *o = (gv - yv * s) / nr;
                    }
                }
                acc(grads, *a, Tensor::from_raw(g.shape(), d));
            }
            Op::ConcatCols(parts) => {
                let (m, n) = (g.rows(), g.cols());
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.requires_grad(p) {
                        let mut d = Vec::with_capacity(m * w);
                        for i in 0..m {
                            d.extend_from_slice(&gd[i * n + off..i * n + off + w]);
                        }
                        acc(grads, p, Tensor::from_raw(&[m, w], d));
                    }
                    off += w;
                }
            }
            Op::SelectRows(a, rows) => {
                let src = self.value(*a);
                let n = src.cols();
                let mut d = vec![0.0; src.len()];
                for (k, &r) in rows.iter().enumerate() {
                    for j in 0..n {
                        d[r * n + j] += gd[k * n + j];
                    }
                }
                acc(grads, *a, Tensor::from_raw(src.shape(), d));
            }
            Op::GroupMax(a) => {
                let src = self.value(*a);
                let (m, n) = (src.rows(), src.cols());
                let groups = g.cols();
                let mut d = vec![0.0; m * n];
                for i in 0..m {
                    for c in 0..groups {
                        let j = node.aux[i * groups + c] as usize;
                        d[i * n + j] += gd[i * groups + c];
                    }
                }
                acc(grads, *a, Tensor::from_raw(src.shape(), d));
            }
            Op::Sum(a) => {
                let shape = self.value(*a).shape().to_vec();
                acc(grads, *a, Tensor::full(&shape, gd[0]));
            }
            Op::Focal {
                probs,
                targets,
                params,
            } => {
                let pv = self.value(*probs);
                let (m, n) = (pv.rows(), pv.cols());
                let scale = gd[0] / m as f64;
                let mut d = vec![0.0; m * n];
                for (i, t) in targets.iter().enumerate() {
                    for c in 0..n {
                        let p = pv.data()[i * n + c];
                        let (_, dp) = focal_term(p, *t == Some(c), *params);
                        // clamped region has zero derivative
                        let inside = p > super::tensor::PROB_EPS
                            && p < 1.0 - super::tensor::PROB_EPS;
                        d[i * n + c] = if inside { scale * dp } else { 0.0 };
                    }
                }
                acc(grads, *probs, Tensor::from_raw(pv.shape(), d));
            }
            Op::MaskLoss {
                logits,
                rows,
                targets,
                keep,
            } => {
                let lv = self.value(*logits);
                let n = lv.cols();
                let scale = gd[0] / rows.len() as f64;
                let mut d = vec![0.0; lv.len()];
                let sides: Vec<i64> = node.aux.iter().map(|&c| c as i64).collect();
                for (k, (&r, tgt)) in rows.iter().zip(targets).enumerate() {
                    let mut row_grad = vec![0.0; n];
                    mask_pair(
                        &lv.data()[r * n..(r + 1) * n],
                        &sides[k * n..(k + 1) * n],
                        tgt,
                        keep.as_deref(),
                        Some(&mut row_grad),
                    );
                    for (o, x) in d[r * n..(r + 1) * n].iter_mut().zip(&row_grad) {
                        *o += scale * x;
                    }
                }
                acc(grads, *logits, Tensor::from_raw(lv.shape(), d));
            }
            Op::CosineLoss {
                embeddings,
                targets,
            } => {
                let e = self.value(*embeddings);
                let (m, n) = (e.rows(), e.cols());
                let scale = gd[0] / m as f64;
                let mut d = vec![0.0; m * n];
                for i in 0..m {
                    let (a, b) = (e.row(i), targets.row(i));
                    let (na, nb) = (super::tensor::l2(a), super::tensor::l2(b));
                    let c = super::tensor::dot(a, b) / (na * nb);
                    for j in 0..n {
                        // d(1 - cos)/da = -(b/(|a||b|) - cos a/|a|²)
                        d[i * n + j] = -scale * (b[j] / (na * nb) - c * a[j] / (na * na));
                    }
                }
                acc(grads, *embeddings, Tensor::from_raw(e.shape(), d));
            }
            Op::L1Rows { pred, target, rows } => {
                let (p, t) = (self.value(*pred), self.value(*target));
                let n = p.cols();
                let count = rows.iter().filter(|&&r| r).count() * n;
                let scale = gd[0] / count.max(1) as f64;
                let mut d = vec![0.0; p.len()];
                let mut k = 0;
                for i in (0..p.rows()).filter(|&i| rows[i]) {
                    for j in 0..n {
                        d[i * n + j] = scale * node.aux[k];
                        k += 1;
                    }
                }
                if self.requires_grad(*target) {
                    let neg = d.iter().map(|x| -x).collect();
                    acc(grads, *target, Tensor::from_raw(t.shape(), neg));
                }
                acc(grads, *pred, Tensor::from_raw(p.shape(), d));
            }
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// -1 below the clip range, 1 above, 0 inside.
fn clip_side(x: f64) -> i64 {
    if x > MASK_LOGIT_CLIP {
        1
    } else if x < -MASK_LOGIT_CLIP {
        -1
    } else {
        0
    }
}

/// BCE (mean over kept columns) + dice for one mask row, with each logit
/// clipped on the given side. Writes d/dlogit into `grad` when given.
fn mask_pair(
    logits: &[f64],
    sides: &[i64],
    target: &[bool],
    keep: Option<&[bool]>,
    grad: Option<&mut [f64]>,
) -> f64 {
    let kept = |j: usize| keep.is_none_or(|k| k[j]);
    let count = (0..logits.len()).filter(|&j| kept(j)).count();
    if count == 0 {
        return 0.0;
    }
    let mut bce = 0.0;
    let (mut inter, mut psum, mut gsum) = (0.0, 0.0, 0.0);
    for (j, &x) in logits.iter().enumerate() {
        if !kept(j) {
            continue;
        }
        let z = match sides[j] {
            0 => x,
            side => side as f64 * MASK_LOGIT_CLIP,
        };
        let y = if target[j] { 1.0 } else { 0.0 };
        // log(1 + e^{-|z|}) + max(z, 0) - z y
        bce += libm::log1p(libm::exp(-libm::fabs(z))) + z.max(0.0) - z * y;
        let p = sigmoid(z);
        inter += p * y;
        psum += p;
        gsum += y;
    }
    let num = 2.0 * inter + 1.0;
    let den = psum + gsum + 1.0;
    let value = bce / count as f64 + 1.0 - num / den;
    if let Some(grad) = grad {
        for (j, &x) in logits.iter().enumerate() {
            if !kept(j) || sides[j] != 0 {
                grad[j] = 0.0;
                continue;
            }
            let y = if target[j] { 1.0 } else { 0.0 };
            let p = sigmoid(x);
            let dbce = (p - y) / count as f64;
            // d(-num/den)/dp
            let ddice = -(2.0 * y * den - num) / (den * den);
            grad[j] = dbce + ddice * p * (1.0 - p);
        }
    }
    value
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::grad_check;

    fn input() -> Tensor {
        Tensor::new(&[2, 3], vec![0.7, -1.3, 2.1, -0.4, 0.9, 25.0]).unwrap()
    }

    fn pipeline(g: &mut Graph, x: Var) -> Result<Var> {
        let r = g.relu(x)?;
        let m = g.group_max(r, &[0, 1, 0], 2)?;
        let t = g.constant(Tensor::new(&[2, 2], vec![1.0, 0.5, -0.2, 0.3]).unwrap());
        let l1 = g.l1_rows(m, t, &[true, true])?;
        let mask = g.mask_loss(x, &[0, 1], &[vec![true, false, true], vec![false, true, true]], None)?;
        g.add(l1, mask)
    }

    #[test]
    fn non_smooth_ops_match_differences_away_from_kinks() {
        let r = grad_check(pipeline, &input(), 1e-6, 1e-6).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn replay_reproduces_the_recorded_pass() {
        let mut rec = Graph::recording();
        let x = rec.param(input());
        let out = pipeline(&mut rec, x).unwrap();
        let branches = rec.branches();
        assert_eq!(branches.len(), 4);
        let mut rep = Graph::replaying(branches);
        let x2 = rep.param(input());
        let out2 = pipeline(&mut rep, x2).unwrap();
        assert_eq!(rec.value(out), rep.value(out2));
        let (ga, gb) = (rec.backward(out).unwrap(), rep.backward(out2).unwrap());
        assert_eq!(ga.get(x), gb.get(x2));
    }

    #[test]
    fn replay_extends_the_frozen_piece_across_a_kink() {
        let mut rec = Graph::recording();
        let x = rec.param(Tensor::vector(vec![0.5, -0.5]).unwrap());
        rec.relu(x).unwrap();
        let mut rep = Graph::replaying(rec.branches());
        let y = rep.param(Tensor::vector(vec![-0.25, 0.75]).unwrap());
        let r = rep.relu(y).unwrap();
        assert_eq!(rep.value(r).data(), &[-0.25, 0.0]);
        let s = rep.sum(r);
        let grads = rep.backward(s).unwrap();
        assert_eq!(grads.get(y).unwrap().data(), &[1.0, 0.0]);
    }

    #[test]
    fn replay_rejects_a_different_tape() {
        let mut rec = Graph::recording();
        let x = rec.param(input());
        rec.relu(x).unwrap();
        let mut rep = Graph::replaying(rec.branches());
        let y = rep.param(Tensor::vector(vec![1.0]).unwrap());
        assert!(matches!(rep.relu(y), Err(Error::Contract(_))));
        let mut empty = Graph::replaying(Branches::default());
        let z = empty.param(Tensor::vector(vec![1.0]).unwrap());
        assert!(matches!(empty.relu(z), Err(Error::Contract(_))));
    }

    #[test]
    fn free_graph_records_nothing() {
        let mut g = Graph::new();
        let x = g.param(input());
        pipeline(&mut g, x).unwrap();
        assert!(g.branches().is_empty());
    }
}
