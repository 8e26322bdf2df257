//! Reverse-mode differentiation by recording primitives on a linear tape.
//!
//! Every primitive computes its value eagerly and appends one node. Node
//! inputs always have smaller indices than the node itself, so walking the
//! tape backwards from the loss is a valid reverse topological order.

use std::sync::Arc;

use rand::Rng;

use super::kernels::{gemm_nn, gemm_nt, gemm_tn};
use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::spectral::FrequencyFilter;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    BatchMatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddBias(Var, Var),
    MulLast(Var, Var),
    Gelu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Dropout {
        x: Var,
        scale: Vec<T>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    GatherRows {
        x: Var,
        rows: Vec<usize>,
    },
    Reshape(Var),
    SplitHeads {
        x: Var,
        batch: usize,
        len: usize,
        heads: usize,
    },
    MergeHeads {
        x: Var,
        batch: usize,
        len: usize,
        heads: usize,
    },
    Spectral {
        x: Var,
        beta: Var,
        filter: Arc<FrequencyFilter<T>>,
        high: Vec<T>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
        count: usize,
    },
    BceLogits {
        x: Var,
        labels: Vec<T>,
    },
    RowDot(Var, Var),
    Sum(Var),
    Mean(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients of a scalar loss with respect to every trainable leaf.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for a leaf that was registered with [`Tape::param`].
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

/// Computation record for one forward pass.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    check_finite: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            check_finite: true,
        }
    }

    /// Enables or disables the NaN/Inf check run after every primitive.
    pub fn with_finite_checks(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Registers a trainable leaf.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t, true)
    }

    /// Registers a leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t, false)
    }

    fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(
        &mut self,
        name: &'static str,
        value: Tensor<T>,
        op: Op<T>,
        inputs: &[Var],
    ) -> Result<Var> {
        if self.check_finite && !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = inputs.iter().any(|&v| self.rg(v));
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Matrix product. `a` is viewed as `[rows, k]` over its leading axes,
    /// `b` must be `[k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ` with `b` of shape `[n, k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (kb, n) = match bv.shape() {
            &[r, c] if trans_b => (c, r),
            &[r, c] => (r, c),
            other => return Err(Error::shape("matmul", av.shape(), other)),
        };
        let k = av.last_dim();
        if av.ndim() < 2 || k != kb {
            return Err(Error::shape("matmul", av.shape(), bv.shape()));
        }
        let m = av.rows();
        let data = if trans_b {
            gemm_nt(av.data(), bv.data(), m, k, n)
        } else {
            gemm_nn(av.data(), bv.data(), m, k, n)
        };
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let out = Tensor::new(&shape, data)?;
        self.push("matmul", out, Op::MatMul { a, b, trans_b }, &[a, b])
    }

    /// Batched product over the leading axis: `[B,m,k]·[B,k,n]`, or
    /// `[B,m,k]·[B,n,k]ᵀ` when `trans_b`.
    pub fn batch_matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (ba, m, k) = match av.shape() {
            &[x, y, z] => (x, y, z),
            other => return Err(Error::shape("batch_matmul", other, bv.shape())),
        };
        let (bb, kb, n) = match bv.shape() {
            &[x, y, z] if trans_b => (x, z, y),
            &[x, y, z] => (x, y, z),
            other => return Err(Error::shape("batch_matmul", av.shape(), other)),
        };
        if ba != bb || k != kb {
            return Err(Error::shape("batch_matmul", av.shape(), bv.shape()));
        }
        let mut data = Vec::with_capacity(ba * m * n);
        for s in 0..ba {
            let asl = &av.data()[s * m * k..(s + 1) * m * k];
            let bsl = &bv.data()[s * k * n..(s + 1) * k * n];
            let c = if trans_b {
                gemm_nt(asl, bsl, m, k, n)
            } else {
                gemm_nn(asl, bsl, m, k, n)
            };
            data.extend_from_slice(&c);
        }
        let out = Tensor::new(&[ba, m, n], data)?;
        self.push(
            "batch_matmul",
            out,
            Op::BatchMatMul { a, b, trans_b },
            &[a, b],
        )
    }

    fn zip_same(
        &self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
    ) -> Result<Tensor<T>> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape(op, av.shape(), bv.shape()));
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(av.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        self.push("add", out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("sub", a, b, |x, y| x - y)?;
        self.push("sub", out, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        self.push("mul", out, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        let out = self.value(x).map(|v| v * c);
        self.push("scale", out, Op::Scale(x, c), &[x])
    }

    /// Adds a `[d]` vector to every row of `x[.., d]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let d = xv.last_dim();
        if bv.len() != d {
            return Err(Error::shape("add_bias", xv.shape(), bv.shape()));
        }
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for (o, &b) in out.row_mut(r).iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        self.push("add_bias", out, Op::AddBias(x, bias), &[x, bias])
    }

    /// Multiplies every row of `x[.., d]` by `v`, which has length `d` or 1.
    pub fn mul_last(&mut self, x: Var, v: Var) -> Result<Var> {
        let (xv, vv) = (self.value(x), self.value(v));
        let d = xv.last_dim();
        if vv.len() != d && vv.len() != 1 {
            return Err(Error::shape("mul_last", xv.shape(), vv.shape()));
        }
        let w = vv.len();
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &a)| a * vv.data()[if w == 1 { 0 } else { i % d }])
            .collect();
        let out = Tensor::new(xv.shape(), data)?;
        self.push("mul_last", out, Op::MulLast(x, v), &[x, v])
    }

    /// Tanh-form GELU.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| gelu_fwd(v).0);
        self.push("gelu", out, Op::Gelu(x), &[x])
    }

    /// Softmax over the last axis. `mask` (true = visible) must cover either
    /// the whole tensor or its trailing `[rows, cols]` block, which is then
    /// repeated over the leading axes. Masked entries come out exactly 0.
    pub fn softmax_lastdim(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let xv = self.value(x);
        let n = xv.last_dim();
        if let Some(m) = mask {
            if m.is_empty() || m.len() % n != 0 || !xv.len().is_multiple_of(m.len()) {
                return Err(Error::shape("softmax", xv.shape(), &[m.len()]));
            }
        }
        let mut data = xv.data().to_vec();
        for (r, row) in data.chunks_mut(n).enumerate() {
            let visible = |j: usize| match mask {
                Some(m) => m[(r * n + j) % m.len()],
                None => true,
            };
            let mut mx = T::neg_infinity();
            for (j, &v) in row.iter().enumerate() {
                if visible(j) && v > mx {
                    mx = v;
                }
            }
            if mx == T::neg_infinity() {
                return Err(Error::Protocol(format!("softmax row {r} is fully masked")));
            }
            let mut s = T::zero();
            for (j, v) in row.iter_mut().enumerate() {
                if visible(j) {
                    *v = (*v - mx).exp();
                    s += *v;
                } else {
                    *v = T::zero();
                }
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        let out = Tensor::new(xv.shape(), data)?;
        self.push("softmax", out, Op::Softmax(x), &[x])
    }

    /// Normalizes each row over the last axis, then applies `gain`/`bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gain), self.value(bias));
        let d = xv.last_dim();
        if gv.len() != d || bv.len() != d {
            return Err(Error::shape("layer_norm", xv.shape(), gv.shape()));
        }
        if eps.partial_cmp(&T::zero()) != Some(std::cmp::Ordering::Greater) {
            return Err(Error::Config("layer_norm eps must be positive".into()));
        }
        let rows = xv.rows();
        let dn = T::of(d as f64);
        let mut xhat = vec![T::zero(); xv.len()];
        let mut inv_std = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xv.len()];
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let inv = T::one() / (var + eps).sqrt();
            inv_std[r] = inv;
            for j in 0..d {
                let h = (row[j] - mean) * inv;
                xhat[r * d + j] = h;
                out[r * d + j] = h * gv.data()[j] + bv.data()[j];
            }
        }
        let out = Tensor::new(xv.shape(), out)?;
        self.push(
            "layer_norm",
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            &[x, gain, bias],
        )
    }

    /// Inverted dropout. Identity (returns `x` itself) at inference or p = 0.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        p: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!(
                "dropout probability {p} outside [0, 1)"
            )));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = T::of(1.0 / (1.0 - p));
        let xv = self.value(x);
        let scale: Vec<T> = (0..xv.len())
            .map(|_| {
                if rng.gen::<f64>() < p {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let data = xv.data().iter().zip(&scale).map(|(&v, &s)| v * s).collect();
        let out = Tensor::new(xv.shape(), data)?;
        self.push("dropout", out, Op::Dropout { x, scale }, &[x])
    }

    /// Row lookup into an embedding table. Row 0 is the padding row and
    /// never receives gradient.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let (n, d) = tv.as_matrix("embedding")?;
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= n {
                return Err(Error::Data(format!(
                    "item id {id} out of range for table of {n} rows"
                )));
            }
            data.extend_from_slice(tv.row(id));
        }
        let out = Tensor::new(&[ids.len(), d], data)?;
        self.push(
            "embedding",
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        )
    }

    /// Selects rows of `x` viewed as `[rows, d]`.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.last_dim();
        let mut data = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            if r >= xv.rows() {
                return Err(Error::shape("gather_rows", xv.shape(), &[r]));
            }
            data.extend_from_slice(xv.row(r));
        }
        let out = Tensor::new(&[rows.len(), d], data)?;
        self.push(
            "gather_rows",
            out,
            Op::GatherRows {
                x,
                rows: rows.to_vec(),
            },
            &[x],
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        self.push("reshape", out, Op::Reshape(x), &[x])
    }

    /// `[batch·len, heads·dh]` → `[batch·heads, len, dh]`.
    pub fn split_heads(&mut self, x: Var, batch: usize, len: usize, heads: usize) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.last_dim();
        if xv.rows() != batch * len || heads == 0 || !d.is_multiple_of(heads) {
            return Err(Error::shape(
                "split_heads",
                xv.shape(),
                &[batch, len, heads],
            ));
        }
        let dh = d / heads;
        let mut data = vec![T::zero(); xv.len()];
        for b in 0..batch {
            for t in 0..len {
                let src = xv.row(b * len + t);
                for h in 0..heads {
                    let dst = ((b * heads + h) * len + t) * dh;
                    data[dst..dst + dh].copy_from_slice(&src[h * dh..(h + 1) * dh]);
                }
            }
        }
        let out = Tensor::new(&[batch * heads, len, dh], data)?;
        self.push(
            "split_heads",
            out,
            Op::SplitHeads {
                x,
                batch,
                len,
                heads,
            },
            &[x],
        )
    }

    /// Inverse of [`Tape::split_heads`].
    pub fn merge_heads(&mut self, x: Var, batch: usize, len: usize, heads: usize) -> Result<Var> {
        let xv = self.value(x);
        let dh = xv.last_dim();
        if xv.len() != batch * len * heads * dh {
            return Err(Error::shape(
                "merge_heads",
                xv.shape(),
                &[batch, len, heads],
            ));
        }
        let d = heads * dh;
        let mut data = vec![T::zero(); xv.len()];
        for b in 0..batch {
            for h in 0..heads {
                for t in 0..len {
                    let src = ((b * heads + h) * len + t) * dh;
                    let dst = (b * len + t) * d + h * dh;
                    data[dst..dst + dh].copy_from_slice(&xv.data()[src..src + dh]);
                }
            }
        }
        let out = Tensor::new(&[batch * len, d], data)?;
        self.push(
            "merge_heads",
            out,
            Op::MergeHeads {
                x,
                batch,
                len,
                heads,
            },
            &[x],
        )
    }

    /// `low + β·high` where `low` is the filter's low band of `x`
    /// (`[sequences·len, d]`) and `high = x − low`. `beta` has length 1 or d.
    pub fn frequency_rescale(
        &mut self,
        x: Var,
        beta: Var,
        filter: Arc<FrequencyFilter<T>>,
    ) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(beta));
        let d = xv.last_dim();
        if bv.len() != 1 && bv.len() != d {
            return Err(Error::shape("frequency_rescale", xv.shape(), bv.shape()));
        }
        if xv.rows() % filter.len() != 0 {
            return Err(Error::shape(
                "frequency_rescale",
                xv.shape(),
                &[filter.len()],
            ));
        }
        let low = filter.low_pass(xv.data(), d);
        let high: Vec<T> = xv.data().iter().zip(&low).map(|(&a, &l)| a - l).collect();
        let w = bv.len();
        let data = low
            .iter()
            .zip(&high)
            .enumerate()
            .map(|(i, (&l, &h))| l + bv.data()[if w == 1 { 0 } else { i % d }] * h)
            .collect();
        let out = Tensor::new(xv.shape(), data)?;
        self.push(
            "frequency_rescale",
            out,
            Op::Spectral {
                x,
                beta,
                filter,
                high,
            },
            &[x, beta],
        )
    }

    /// Mean softmax cross-entropy over rows of `logits[n, C]` whose target is
    /// nonzero. Column 0 (padding) is excluded from the normalizer.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let (n, c) = lv.as_matrix("cross_entropy")?;
        if targets.len() != n {
            return Err(Error::shape("cross_entropy", lv.shape(), &[targets.len()]));
        }
        let mut probs = vec![T::zero(); n * c];
        let mut total = T::zero();
        let mut count = 0usize;
        for (r, &t) in targets.iter().enumerate() {
            if t == 0 {
                continue;
            }
            if t >= c {
                return Err(Error::Data(format!(
                    "target {t} outside catalog of {}",
                    c - 1
                )));
            }
            let row = &lv.row(r)[1..];
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for (j, &v) in row.iter().enumerate() {
                let e = (v - mx).exp();
                probs[r * c + 1 + j] = e;
                s += e;
            }
            for p in &mut probs[r * c + 1..(r + 1) * c] {
                *p /= s;
            }
            total += s.ln() + mx - lv.row(r)[t];
            count += 1;
        }
        if count == 0 {
            return Err(Error::Data("every target position is padding".into()));
        }
        let out = Tensor::scalar(total / T::of(count as f64));
        self.push(
            "cross_entropy",
            out,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                count,
            },
            &[logits],
        )
    }

    /// Mean binary cross-entropy of logits `x` against 0/1 `labels`.
    pub fn bce_with_logits(&mut self, x: Var, labels: &[T]) -> Result<Var> {
        let xv = self.value(x);
        if xv.len() != labels.len() || labels.is_empty() {
            return Err(Error::shape("bce_with_logits", xv.shape(), &[labels.len()]));
        }
        let total: T = xv
            .data()
            .iter()
            .zip(labels)
            .map(|(&z, &y)| z.max(T::zero()) + (-z.abs()).exp().ln_1p() - y * z)
            .sum();
        let out = Tensor::scalar(total / T::of(labels.len() as f64));
        self.push(
            "bce_with_logits",
            out,
            Op::BceLogits {
                x,
                labels: labels.to_vec(),
            },
            &[x],
        )
    }

    /// Row-wise dot product of two `[n, d]` tensors, giving `[n]`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape("row_dot", av.shape(), bv.shape()));
        }
        let data = (0..av.rows())
            .map(|r| av.row(r).iter().zip(bv.row(r)).map(|(&x, &y)| x * y).sum())
            .collect::<Vec<T>>();
        let out = Tensor::new(&[av.rows()], data)?;
        self.push("row_dot", out, Op::RowDot(a, b), &[a, b])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        self.push("sum", out, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let out = Tensor::scalar(xv.sum() / T::of(xv.len() as f64));
        self.push("mean", out, Op::Mean(x), &[x])
    }

    /// Propagates d`loss`/d(node) back to every trainable leaf. Leaves that
    /// do not influence the loss get an all-zero gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::shape("backward", lv.shape(), &[1]));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut leaf_grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if let Op::Leaf = node.op {
                leaf_grads[i] = Some(Tensor::new(node.value.shape(), g)?);
                continue;
            }
            self.backprop_node(node, &g, &mut grads)?;
        }

        for (i, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) && leaf_grads[i].is_none() {
                leaf_grads[i] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { grads: leaf_grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, contrib: Vec<T>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, c) in acc.iter_mut().zip(contrib) {
                    *a += c;
                }
            }
            slot @ None => *slot = Some(contrib),
        }
    }

    fn backprop_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, trans_b } => {
                let (av, bv) = (self.value(a), self.value(b));
                let (m, k) = (av.rows(), av.last_dim());
                let n = out.last_dim();
                if self.rg(a) {
                    let ga = if trans_b {
                        gemm_nn(g, bv.data(), m, n, k)
                    } else {
                        gemm_nt(g, bv.data(), m, n, k)
                    };
                    self.accumulate(grads, a, ga);
                }
                if self.rg(b) {
                    let gb = if trans_b {
                        gemm_tn(g, av.data(), m, n, k)
                    } else {
                        gemm_tn(av.data(), g, m, k, n)
                    };
                    self.accumulate(grads, b, gb);
                }
            }
            &Op::BatchMatMul { a, b, trans_b } => {
                let (av, bv) = (self.value(a), self.value(b));
                let (bs, m, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
                let n = out.shape()[2];
                let (mut ga, mut gb) = (Vec::new(), Vec::new());
                for s in 0..bs {
                    let gs = &g[s * m * n..(s + 1) * m * n];
                    let asl = &av.data()[s * m * k..(s + 1) * m * k];
                    let bsl = &bv.data()[s * k * n..(s + 1) * k * n];
                    if self.rg(a) {
                        ga.extend(if trans_b {
                            gemm_nn(gs, bsl, m, n, k)
                        } else {
                            gemm_nt(gs, bsl, m, n, k)
                        });
                    }
                    if self.rg(b) {
                        gb.extend(if trans_b {
                            gemm_tn(gs, asl, m, n, k)
                        } else {
                            gemm_tn(asl, gs, m, k, n)
                        });
                    }
                }
                if self.rg(a) {
                    self.accumulate(grads, a, ga);
                }
                if self.rg(b) {
                    self.accumulate(grads, b, gb);
                }
            }
            &Op::Add(a, b) => {
                self.accumulate(grads, a, g.to_vec());
                self.accumulate(grads, b, g.to_vec());
            }
            &Op::Sub(a, b) => {
                self.accumulate(grads, a, g.to_vec());
                self.accumulate(grads, b, g.iter().map(|&v| -v).collect());
            }
            &Op::Mul(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                if self.rg(a) {
                    self.accumulate(
                        grads,
                        a,
                        g.iter().zip(bv.data()).map(|(&x, &y)| x * y).collect(),
                    );
                }
                if self.rg(b) {
                    self.accumulate(
                        grads,
                        b,
                        g.iter().zip(av.data()).map(|(&x, &y)| x * y).collect(),
                    );
                }
            }
            &Op::Scale(x, c) => self.accumulate(grads, x, g.iter().map(|&v| v * c).collect()),
            &Op::AddBias(x, bias) => {
                self.accumulate(grads, x, g.to_vec());
                if self.rg(bias) {
                    let d = out.last_dim();
                    let mut gb = vec![T::zero(); d];
                    for row in g.chunks(d) {
                        for (acc, &v) in gb.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    self.accumulate(grads, bias, gb);
                }
            }
            &Op::MulLast(x, v) => {
                let (xv, vv) = (self.value(x), self.value(v));
                let d = xv.last_dim();
                let w = vv.len();
                let pick = |i: usize| vv.data()[if w == 1 { 0 } else { i % d }];
                if self.rg(x) {
                    self.accumulate(
                        grads,
                        x,
                        g.iter().enumerate().map(|(i, &gi)| gi * pick(i)).collect(),
                    );
                }
                if self.rg(v) {
                    let mut gv = vec![T::zero(); w];
                    for (i, (&gi, &xi)) in g.iter().zip(xv.data()).enumerate() {
                        gv[if w == 1 { 0 } else { i % d }] += gi * xi;
                    }
                    self.accumulate(grads, v, gv);
                }
            }
            &Op::Gelu(x) => {
                let xv = self.value(x);
                let gx = g
                    .iter()
                    .zip(xv.data())
                    .map(|(&gi, &xi)| gi * gelu_fwd(xi).1)
                    .collect();
                self.accumulate(grads, x, gx);
            }
            &Op::Softmax(x) => {
                let n = out.last_dim();
                let mut gx = vec![T::zero(); out.len()];
                for (r, (yr, gr)) in out.data().chunks(n).zip(g.chunks(n)).enumerate() {
                    let dot: T = yr.iter().zip(gr).map(|(&y, &gv)| y * gv).sum();
                    for j in 0..n {
                        gx[r * n + j] = yr[j] * (gr[j] - dot);
                    }
                }
                self.accumulate(grads, x, gx);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = out.last_dim();
                let gv = self.value(*gain);
                let dn = T::of(d as f64);
                if self.rg(*gain) || self.rg(*bias) {
                    let mut gg = vec![T::zero(); d];
                    let mut gbias = vec![T::zero(); d];
                    for (gr, hr) in g.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            gg[j] += gr[j] * hr[j];
                            gbias[j] += gr[j];
                        }
                    }
                    self.accumulate(grads, *gain, gg);
                    self.accumulate(grads, *bias, gbias);
                }
                if self.rg(*x) {
                    let mut gx = vec![T::zero(); out.len()];
                    for (r, (gr, hr)) in g.chunks(d).zip(xhat.chunks(d)).enumerate() {
                        let gh: Vec<T> = gr.iter().zip(gv.data()).map(|(&a, &b)| a * b).collect();
                        let mean_gh = gh.iter().copied().sum::<T>() / dn;
                        let mean_ghh = gh.iter().zip(hr).map(|(&a, &b)| a * b).sum::<T>() / dn;
                        for j in 0..d {
                            gx[r * d + j] = inv_std[r] * (gh[j] - mean_gh - hr[j] * mean_ghh);
                        }
                    }
                    self.accumulate(grads, *x, gx);
                }
            }
            Op::Dropout { x, scale } => {
                self.accumulate(
                    grads,
                    *x,
                    g.iter().zip(scale).map(|(&a, &s)| a * s).collect(),
                );
            }
            Op::Embedding { table, ids } => {
                let tv = self.value(*table);
                let d = tv.last_dim();
                let mut gt = vec![T::zero(); tv.len()];
                for (r, &id) in ids.iter().enumerate() {
                    if id == 0 {
                        continue;
                    }
                    for j in 0..d {
                        gt[id * d + j] += g[r * d + j];
                    }
                }
                self.accumulate(grads, *table, gt);
            }
            Op::GatherRows { x, rows } => {
                let xv = self.value(*x);
                let d = xv.last_dim();
                let mut gx = vec![T::zero(); xv.len()];
                for (r, &src) in rows.iter().enumerate() {
                    for j in 0..d {
                        gx[src * d + j] += g[r * d + j];
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            &Op::Reshape(x) => self.accumulate(grads, x, g.to_vec()),
            &Op::SplitHeads {
                x,
                batch,
                len,
                heads,
            } => {
                let d = self.value(x).last_dim();
                let dh = d / heads;
                let mut gx = vec![T::zero(); g.len()];
                for b in 0..batch {
                    for t in 0..len {
                        for h in 0..heads {
                            let src = ((b * heads + h) * len + t) * dh;
                            let dst = (b * len + t) * d + h * dh;
                            gx[dst..dst + dh].copy_from_slice(&g[src..src + dh]);
                        }
                    }
                }
                self.accumulate(grads, x, gx);
            }
            &Op::MergeHeads {
                x,
                batch,
                len,
                heads,
            } => {
                let dh = self.value(x).last_dim();
                let d = heads * dh;
                let mut gx = vec![T::zero(); g.len()];
                for b in 0..batch {
                    for h in 0..heads {
                        for t in 0..len {
                            let dst = ((b * heads + h) * len + t) * dh;
                            let src = (b * len + t) * d + h * dh;
                            gx[dst..dst + dh].copy_from_slice(&g[src..src + dh]);
                        }
                    }
                }
                self.accumulate(grads, x, gx);
            }
            Op::Spectral {
                x,
                beta,
                filter,
                high,
            } => {
                let bv = self.value(*beta);
                let d = out.last_dim();
                let w = bv.len();
                let pick = |i: usize| bv.data()[if w == 1 { 0 } else { i % d }];
                if self.rg(*beta) {
                    let mut gb = vec![T::zero(); w];
                    for (i, (&gi, &hi)) in g.iter().zip(high).enumerate() {
                        gb[if w == 1 { 0 } else { i % d }] += gi * hi;
                    }
                    self.accumulate(grads, *beta, gb);
                }
                if self.rg(*x) {
                    // out = P x + β(I − P) x  ⇒  ∂x = Pᵀ((1 − β) g) + β g
                    let damped: Vec<T> = g
                        .iter()
                        .enumerate()
                        .map(|(i, &gi)| gi - pick(i) * gi)
                        .collect();
                    let mut gx = filter.low_pass_transpose(&damped, d);
                    for (i, v) in gx.iter_mut().enumerate() {
                        *v += pick(i) * g[i];
                    }
                    self.accumulate(grads, *x, gx);
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                count,
            } => {
                let c = self.value(*logits).last_dim();
                let s = g[0] / T::of(*count as f64);
                let mut gl = vec![T::zero(); probs.len()];
                for (r, &t) in targets.iter().enumerate() {
                    if t == 0 {
                        continue;
                    }
                    for j in 1..c {
                        gl[r * c + j] = probs[r * c + j] * s;
                    }
                    gl[r * c + t] -= s;
                }
                self.accumulate(grads, *logits, gl);
            }
            Op::BceLogits { x, labels } => {
                let xv = self.value(*x);
                let s = g[0] / T::of(labels.len() as f64);
                let gx = xv
                    .data()
                    .iter()
                    .zip(labels)
                    .map(|(&z, &y)| (sigmoid(z) - y) * s)
                    .collect();
                self.accumulate(grads, *x, gx);
            }
            &Op::RowDot(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                let d = av.last_dim();
                let expand = |other: &Tensor<T>| {
                    other
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(i, &v)| v * g[i / d])
                        .collect::<Vec<T>>()
                };
                if self.rg(a) {
                    self.accumulate(grads, a, expand(bv));
                }
                if self.rg(b) {
                    self.accumulate(grads, b, expand(av));
                }
            }
            &Op::Sum(x) => {
                let n = self.value(x).len();
                self.accumulate(grads, x, vec![g[0]; n]);
            }
            &Op::Mean(x) => {
                let n = self.value(x).len();
                self.accumulate(grads, x, vec![g[0] / T::of(n as f64); n]);
            }
        }
        Ok(())
    }
}

fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Returns (gelu(x), gelu'(x)) for the tanh approximation.
fn gelu_fwd<T: Scalar>(x: T) -> (T, T) {
    let c = T::of((2.0 / std::f64::consts::PI).sqrt());
    let a = T::of(0.044715);
    let half = T::of(0.5);
    let inner = c * (x + a * x * x * x);
    let th = inner.tanh();
    let y = half * x * (T::one() + th);
    let dinner = c * (T::one() + T::of(3.0) * a * x * x);
    let dy = half * (T::one() + th) + half * x * (T::one() - th * th) * dinner;
    (y, dy)
}
