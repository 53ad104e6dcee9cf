use rand::Rng;

use super::linalg::{gemm, MatRef};
use super::{AutodiffError, Mode, Real, Result, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Per-channel batch statistics from a train-mode batch norm (biased
/// variance, pooled over every axis except the channel axis).
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub count: usize,
}

enum Op<T> {
    Leaf,
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    ConvTime {
        x: Var,
        k: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    },
    JointMix {
        x: Var,
        a: Var,
    },
    MulConst {
        x: Var,
        c: Vec<T>,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Concat {
        parts: Vec<Var>,
    },
    Relu {
        x: Var,
    },
    Dropout {
        x: Var,
        scale: Vec<T>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
    },
    Gap {
        x: Var,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        probs: Vec<T>,
        labels: Vec<usize>,
    },
    Sum {
        x: Var,
    },
    Scale {
        x: Var,
        s: T,
    },
}

struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Op<T>,
}

/// Ordered record of executed primitives.
///
/// Values of every node stay on the tape until it is dropped; backward walks
/// the record in exact reverse order and may run only once.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(msg: String) -> AutodiffError {
    AutodiffError::ShapeMismatch(msg)
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn live(&self) -> Result<()> {
        if self.consumed {
            Err(AutodiffError::TapeReuse)
        } else {
            Ok(())
        }
    }

    fn push(&mut self, value: Tensor<T>, inputs: &[Var], op: Op<T>) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// `y = x·w + b` for `x: [N, K]`, `w: [K, M]`, `b: [M]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        self.live()?;
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
            return Err(mismatch(format!("linear: x {xs:?} w {ws:?}")));
        }
        let (n, k, m) = (xs[0], xs[1], ws[1]);
        let mut out = vec![T::zero(); n * m];
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.shape() != [m] {
                return Err(mismatch(format!("linear bias {:?} vs {m}", bv.shape())));
            }
            for row in out.chunks_mut(m) {
                row.copy_from_slice(bv.data());
            }
        }
        gemm(
            T::one(),
            MatRef::new(self.value(x).data(), n, k),
            MatRef::new(self.value(w).data(), k, m),
            if b.is_some() { T::one() } else { T::zero() },
            &mut out,
        );
        let value = Tensor::new(&[n, m], out)?;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(value, &inputs, Op::Linear { x, w, b }))
    }

    /// Convolution along the frame axis only, independently per joint.
    ///
    /// `x: [N, C, T, V]`, `k: [O, C, L]`, `bias: [O]`; output
    /// `[N, O, T', V]` with `T' = (T + 2·pad − L) / stride + 1`.
    pub fn conv_time(
        &mut self,
        x: Var,
        k: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        self.live()?;
        let (xs, ks) = (self.shape(x).to_vec(), self.shape(k).to_vec());
        if xs.len() != 4 || ks.len() != 3 || xs[1] != ks[1] {
            return Err(mismatch(format!("conv_time: x {xs:?} kernel {ks:?}")));
        }
        if stride == 0 {
            return Err(AutodiffError::InvalidArgument("stride must be >= 1".into()));
        }
        let g = ConvGeom::new(&xs, &ks, stride, pad)?;
        if let Some(b) = bias {
            if self.shape(b) != [g.o] {
                return Err(mismatch(format!("conv bias {:?}", self.shape(b))));
            }
        }
        let mut out = vec![T::zero(); g.n * g.o * g.t_out * g.v];
        let mut cols = g.col_buffer();
        let xv = self.value(x).data();
        let kv = self.value(k).data();
        let out_cols = g.t_out * g.v;
        for (xn, yn) in xv
            .chunks(g.c * g.t * g.v)
            .zip(out.chunks_mut(g.o * out_cols))
        {
            let cols_view = g.im2col(xn, &mut cols);
            if let Some(b) = bias {
                for (row, &bo) in yn.chunks_mut(out_cols).zip(self.value(b).data()) {
                    row.fill(bo);
                }
            }
            gemm(
                T::one(),
                MatRef::new(kv, g.o, g.c * g.l),
                MatRef::new(cols_view, g.c * g.l, out_cols),
                if bias.is_some() { T::one() } else { T::zero() },
                yn,
            );
        }
        let value = Tensor::new(&[g.n, g.o, g.t_out, g.v], out)?;
        let inputs: Vec<Var> = [Some(x), Some(k), bias].into_iter().flatten().collect();
        Ok(self.push(
            value,
            &inputs,
            Op::ConvTime {
                x,
                k,
                bias,
                stride,
                pad,
            },
        ))
    }

    /// Mixes the last (joint) axis: `y[.., w] = Σ_v x[.., v] · a[v, w]`.
    pub fn joint_mix(&mut self, x: Var, a: Var) -> Result<Var> {
        self.live()?;
        let (xs, asz) = (self.shape(x).to_vec(), self.shape(a).to_vec());
        let v = *xs.last().unwrap_or(&0);
        if asz != [v, v] {
            return Err(mismatch(format!("joint_mix: x {xs:?} a {asz:?}")));
        }
        let rows = self.value(x).numel() / v.max(1);
        let mut out = vec![T::zero(); rows * v];
        gemm(
            T::one(),
            MatRef::new(self.value(x).data(), rows, v),
            MatRef::new(self.value(a).data(), v, v),
            T::zero(),
            &mut out,
        );
        let value = Tensor::new(&xs, out)?;
        Ok(self.push(value, &[x, a], Op::JointMix { x, a }))
    }

    /// Element-wise product with a constant of the same shape.
    pub fn mul_const(&mut self, x: Var, c: &Tensor<T>) -> Result<Var> {
        self.live()?;
        if self.shape(x) != c.shape() {
            return Err(mismatch(format!(
                "mul_const: {:?} vs {:?}",
                self.shape(x),
                c.shape()
            )));
        }
        let data = self
            .value(x)
            .data()
            .iter()
            .zip(c.data())
            .map(|(&a, &b)| a * b)
            .collect();
        let value = Tensor::new(c.shape(), data)?;
        Ok(self.push(
            value,
            &[x],
            Op::MulConst {
                x,
                c: c.data().to_vec(),
            },
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.live()?;
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(format!(
                "add: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        Ok(self.push(value, &[a, b], Op::Add { a, b }))
    }

    /// Element-wise product of two tensors of the same shape.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.live()?;
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(format!(
                "mul: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&p, &q)| p * q)
            .collect();
        let value = Tensor::new(self.shape(a), data)?;
        Ok(self.push(value, &[a, b], Op::Mul { a, b }))
    }

    /// Concatenates `[N, C_i, ...]` tensors along axis 1.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        self.live()?;
        let first = parts
            .first()
            .ok_or_else(|| AutodiffError::InvalidArgument("concat of nothing".into()))?;
        let s0 = self.shape(*first).to_vec();
        if s0.len() < 2 {
            return Err(mismatch(format!("concat needs rank >= 2, got {s0:?}")));
        }
        let n = s0[0];
        let inner: usize = s0[2..].iter().product();
        let mut total_c = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != s0.len() || s[0] != n || s[2..] != s0[2..] {
                return Err(mismatch(format!("concat: {s:?} vs {s0:?}")));
            }
            total_c += s[1];
        }
        let mut out = Vec::with_capacity(n * total_c * inner);
        for i in 0..n {
            for &p in parts {
                let cp = self.shape(p)[1];
                let block = cp * inner;
                out.extend_from_slice(&self.value(p).data()[i * block..(i + 1) * block]);
            }
        }
        let mut shape = s0.clone();
        shape[1] = total_c;
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(
            value,
            parts,
            Op::Concat {
                parts: parts.to_vec(),
            },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.live()?;
        let value = self
            .value(x)
            .map(|a| if a > T::zero() { a } else { T::zero() });
        Ok(self.push(value, &[x], Op::Relu { x }))
    }

    /// Inverted dropout: in train mode each element is zeroed with
    /// probability `p` and survivors are scaled by `1/(1−p)`.
    pub fn dropout<R: Rng>(&mut self, x: Var, p: f64, mode: Mode, rng: &mut R) -> Result<Var> {
        self.live()?;
        if !(0.0..1.0).contains(&p) {
            return Err(AutodiffError::InvalidArgument(format!(
                "dropout probability {p} not in [0, 1)"
            )));
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(x);
        }
        let keep = T::of(1.0 / (1.0 - p));
        let scale: Vec<T> = (0..self.value(x).numel())
            .map(|_| {
                if rng.random::<f64>() < p {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let data = self
            .value(x)
            .data()
            .iter()
            .zip(&scale)
            .map(|(&a, &s)| a * s)
            .collect();
        let value = Tensor::new(self.shape(x), data)?;
        Ok(self.push(value, &[x], Op::Dropout { x, scale }))
    }

    /// Per-channel normalisation of `x: [N, C, ...]` (channel axis 1).
    ///
    /// Train mode normalises with the batch statistics and returns them;
    /// eval mode uses `running = (mean, var)`.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: Mode,
        running: (&[T], &[T]),
        eps: f64,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        self.live()?;
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 {
            return Err(mismatch(format!("batch_norm needs rank >= 2, got {xs:?}")));
        }
        let (n, c) = (xs[0], xs[1]);
        let inner: usize = xs[2..].iter().product();
        for (v, what) in [(gamma, "gamma"), (beta, "beta")] {
            if self.shape(v) != [c] {
                return Err(mismatch(format!("batch_norm {what} {:?}", self.shape(v))));
            }
        }
        if running.0.len() != c || running.1.len() != c {
            return Err(mismatch("batch_norm running stats".into()));
        }
        let xv = self.value(x).data();
        let count = n * inner;
        let (mean, var) = if mode == Mode::Train {
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            let cnt = T::of(count as f64);
            for ch in 0..c {
                let mut s = T::zero();
                for i in 0..n {
                    let off = (i * c + ch) * inner;
                    s += xv[off..off + inner].iter().copied().sum::<T>();
                }
                let mu = s / cnt;
                let mut q = T::zero();
                for i in 0..n {
                    let off = (i * c + ch) * inner;
                    for &a in &xv[off..off + inner] {
                        q += (a - mu) * (a - mu);
                    }
                }
                mean[ch] = mu;
                var[ch] = q / cnt;
            }
            (mean, var)
        } else {
            (running.0.to_vec(), running.1.to_vec())
        };
        let eps = T::of(eps);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![T::zero(); xv.len()];
        let mut out = vec![T::zero(); xv.len()];
        for i in 0..n {
            for ch in 0..c {
                let off = (i * c + ch) * inner;
                for j in off..off + inner {
                    let h = (xv[j] - mean[ch]) * inv_std[ch];
                    xhat[j] = h;
                    out[j] = g[ch] * h + bt[ch];
                }
            }
        }
        let value = Tensor::new(&xs, out)?;
        let train = mode == Mode::Train;
        let var_out = self.push(
            value,
            &[x, gamma, beta],
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
        );
        let stats = train.then_some(BatchStats { mean, var, count });
        Ok((var_out, stats))
    }

    /// Mean over every axis after the channel axis: `[N, C, ...] → [N, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        self.live()?;
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 {
            return Err(mismatch(format!("pool needs rank >= 2, got {xs:?}")));
        }
        let inner: usize = xs[2..].iter().product();
        let denom = T::of(inner.max(1) as f64);
        let data = self
            .value(x)
            .data()
            .chunks(inner.max(1))
            .map(|c| c.iter().copied().sum::<T>() / denom)
            .collect();
        let value = Tensor::new(&xs[..2], data)?;
        Ok(self.push(value, &[x], Op::Gap { x }))
    }

    /// Mean over the batch of `−log softmax(logits)[label]`, stabilised by
    /// max subtraction. `logits: [N, C]`, one label per row.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        self.live()?;
        let ls = self.shape(logits).to_vec();
        if ls.len() != 2 || ls[0] != labels.len() {
            return Err(mismatch(format!(
                "cross entropy: logits {ls:?}, {} labels",
                labels.len()
            )));
        }
        let (n, c) = (ls[0], ls[1]);
        if c < 2 {
            return Err(AutodiffError::InvalidArgument(
                "cross entropy needs at least two classes".into(),
            ));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= c) {
            return Err(AutodiffError::BadLabel { label, classes: c });
        }
        let mut probs = vec![T::zero(); n * c];
        let mut loss = T::zero();
        for (i, row) in self.value(logits).data().chunks(c).enumerate() {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let z: T = row.iter().map(|&a| (a - m).exp()).sum();
            let log_z = z.ln() + m;
            for (j, &a) in row.iter().enumerate() {
                probs[i * c + j] = (a - log_z).exp();
            }
            loss += log_z - row[labels[i]];
        }
        let value = Tensor::scalar(loss / T::of(n.max(1) as f64));
        Ok(self.push(
            value,
            &[logits],
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                labels: labels.to_vec(),
            },
        ))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.live()?;
        let value = Tensor::scalar(self.value(x).sum());
        Ok(self.push(value, &[x], Op::Sum { x }))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Result<Var> {
        self.live()?;
        let value = self.value(x).map(|a| a * s);
        Ok(self.push(value, &[x], Op::Scale { x, s }))
    }

    /// Reverse sweep from a scalar `loss`. The tape cannot record or run
    /// backward again afterwards.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        self.live()?;
        let shape = self.shape(loss);
        if shape.iter().product::<usize>() != 1 {
            return Err(AutodiffError::NotScalar(shape.to_vec()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].requires_grad {
                for (target, contrib) in self.node_backward(i, &g) {
                    match &mut grads[target.0] {
                        Some(acc) => acc.add_assign(&contrib),
                        slot @ None => *slot = Some(contrib),
                    }
                }
            }
            // Only leaf gradients are handed back; dropping the rest early
            // keeps the working set small.
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn node_backward(&self, i: usize, g: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        let node = &self.nodes[i];
        let dy = g.data();
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (n, k, m) = (xv.shape()[0], xv.shape()[1], wv.shape()[1]);
                if self.wants(*x) {
                    let mut dx = vec![T::zero(); n * k];
                    gemm(
                        T::one(),
                        MatRef::new(dy, n, m),
                        MatRef::new(wv.data(), k, m).t(),
                        T::zero(),
                        &mut dx,
                    );
                    out.push((*x, Tensor::new(&[n, k], dx).unwrap()));
                }
                if self.wants(*w) {
                    let mut dw = vec![T::zero(); k * m];
                    gemm(
                        T::one(),
                        MatRef::new(xv.data(), n, k).t(),
                        MatRef::new(dy, n, m),
                        T::zero(),
                        &mut dw,
                    );
                    out.push((*w, Tensor::new(&[k, m], dw).unwrap()));
                }
                if let Some(b) = b.filter(|b| self.wants(*b)) {
                    let mut db = vec![T::zero(); m];
                    for row in dy.chunks(m) {
                        for (d, &r) in db.iter_mut().zip(row) {
                            *d += r;
                        }
                    }
                    out.push((b, Tensor::new(&[m], db).unwrap()));
                }
            }
            Op::ConvTime {
                x,
                k,
                bias,
                stride,
                pad,
            } => {
                let (xv, kv) = (self.value(*x), self.value(*k));
                let g = ConvGeom::new(xv.shape(), kv.shape(), *stride, *pad).unwrap();
                let out_cols = g.t_out * g.v;
                let ck = g.c * g.l;
                let (want_x, want_k) = (self.wants(*x), self.wants(*k));
                let mut dk = vec![T::zero(); g.o * ck];
                let mut dx = vec![T::zero(); if want_x { xv.numel() } else { 0 }];
                let mut cols = g.col_buffer();
                let mut dcols = vec![T::zero(); ck * out_cols];
                for (nidx, dyn_) in dy.chunks(g.o * out_cols).enumerate() {
                    let xn = &xv.data()[nidx * g.c * g.t * g.v..(nidx + 1) * g.c * g.t * g.v];
                    if want_k {
                        let cols_view = g.im2col(xn, &mut cols);
                        gemm(
                            T::one(),
                            MatRef::new(dyn_, g.o, out_cols),
                            MatRef::new(cols_view, ck, out_cols).t(),
                            T::one(),
                            &mut dk,
                        );
                    }
                    if want_x {
                        gemm(
                            T::one(),
                            MatRef::new(kv.data(), g.o, ck).t(),
                            MatRef::new(dyn_, g.o, out_cols),
                            T::zero(),
                            &mut dcols,
                        );
                        let dxn = &mut dx[nidx * g.c * g.t * g.v..(nidx + 1) * g.c * g.t * g.v];
                        g.col2im_add(&dcols, dxn);
                    }
                }
                if want_x {
                    out.push((*x, Tensor::new(xv.shape(), dx).unwrap()));
                }
                if want_k {
                    out.push((*k, Tensor::new(kv.shape(), dk).unwrap()));
                }
                if let Some(b) = bias.filter(|b| self.wants(*b)) {
                    let mut db = vec![T::zero(); g.o];
                    for dyn_ in dy.chunks(g.o * out_cols) {
                        for (d, row) in db.iter_mut().zip(dyn_.chunks(out_cols)) {
                            *d += row.iter().copied().sum::<T>();
                        }
                    }
                    out.push((b, Tensor::new(&[g.o], db).unwrap()));
                }
            }
            Op::JointMix { x, a } => {
                let (xv, av) = (self.value(*x), self.value(*a));
                let v = av.shape()[0];
                let rows = xv.numel() / v.max(1);
                if self.wants(*x) {
                    let mut dx = vec![T::zero(); rows * v];
                    gemm(
                        T::one(),
                        MatRef::new(dy, rows, v),
                        MatRef::new(av.data(), v, v).t(),
                        T::zero(),
                        &mut dx,
                    );
                    out.push((*x, Tensor::new(xv.shape(), dx).unwrap()));
                }
                if self.wants(*a) {
                    let mut da = vec![T::zero(); v * v];
                    gemm(
                        T::one(),
                        MatRef::new(xv.data(), rows, v).t(),
                        MatRef::new(dy, rows, v),
                        T::zero(),
                        &mut da,
                    );
                    out.push((*a, Tensor::new(&[v, v], da).unwrap()));
                }
            }
            Op::MulConst { x, c } => {
                let dx = dy.iter().zip(c).map(|(&d, &s)| d * s).collect();
                out.push((*x, Tensor::new(g.shape(), dx).unwrap()));
            }
            Op::Add { a, b } => {
                for v in [a, b] {
                    if self.wants(*v) {
                        out.push((*v, g.clone()));
                    }
                }
            }
            Op::Mul { a, b } => {
                for (v, other) in [(a, b), (b, a)] {
                    if self.wants(*v) {
                        let d = dy
                            .iter()
                            .zip(self.value(*other).data())
                            .map(|(&d, &o)| d * o)
                            .collect();
                        out.push((*v, Tensor::new(g.shape(), d).unwrap()));
                    }
                }
            }
            Op::Concat { parts } => {
                let n = g.shape()[0];
                let inner: usize = g.shape()[2..].iter().product();
                let total_c = g.shape()[1];
                let mut offset = 0;
                for &p in parts {
                    let cp = self.shape(p)[1];
                    if self.wants(p) {
                        let mut dp = Vec::with_capacity(n * cp * inner);
                        for i in 0..n {
                            let start = (i * total_c + offset) * inner;
                            dp.extend_from_slice(&dy[start..start + cp * inner]);
                        }
                        out.push((p, Tensor::new(self.shape(p), dp).unwrap()));
                    }
                    offset += cp;
                }
            }
            Op::Relu { x } => {
                let dx = dy
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(&d, &a)| if a > T::zero() { d } else { T::zero() })
                    .collect();
                out.push((*x, Tensor::new(g.shape(), dx).unwrap()));
            }
            Op::Dropout { x, scale } => {
                let dx = dy.iter().zip(scale).map(|(&d, &s)| d * s).collect();
                out.push((*x, Tensor::new(g.shape(), dx).unwrap()));
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let xs = self.shape(*x);
                let (n, c) = (xs[0], xs[1]);
                let inner: usize = xs[2..].iter().product();
                let gv = self.value(*gamma).data();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for i in 0..n {
                    for ch in 0..c {
                        let off = (i * c + ch) * inner;
                        for j in off..off + inner {
                            dgamma[ch] += dy[j] * xhat[j];
                            dbeta[ch] += dy[j];
                        }
                    }
                }
                if self.wants(*x) {
                    let mut dx = vec![T::zero(); dy.len()];
                    let m = T::of((n * inner) as f64);
                    for ch in 0..c {
                        // Σ dxhat = γ·Σdy and Σ dxhat·xhat = γ·Σ dy·xhat.
                        let (s1, s2) = (gv[ch] * dbeta[ch], gv[ch] * dgamma[ch]);
                        for i in 0..n {
                            let off = (i * c + ch) * inner;
                            for j in off..off + inner {
                                let dxh = dy[j] * gv[ch];
                                dx[j] = if *train {
                                    inv_std[ch] / m * (m * dxh - s1 - xhat[j] * s2)
                                } else {
                                    dxh * inv_std[ch]
                                };
                            }
                        }
                    }
                    out.push((*x, Tensor::new(xs, dx).unwrap()));
                }
                if self.wants(*gamma) {
                    out.push((*gamma, Tensor::new(&[c], dgamma).unwrap()));
                }
                if self.wants(*beta) {
                    out.push((*beta, Tensor::new(&[c], dbeta).unwrap()));
                }
            }
            Op::Gap { x } => {
                let xs = self.shape(*x);
                let inner: usize = xs[2..].iter().product::<usize>().max(1);
                let denom = T::of(inner as f64);
                let mut dx = Vec::with_capacity(inner * dy.len());
                for &d in dy {
                    dx.extend(std::iter::repeat_n(d / denom, inner));
                }
                out.push((*x, Tensor::new(xs, dx).unwrap()));
            }
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                labels,
            } => {
                let ls = self.shape(*logits);
                let (n, c) = (ls[0], ls[1]);
                let scale = dy[0] / T::of(n as f64);
                let mut dl: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                for (i, &label) in labels.iter().enumerate() {
                    dl[i * c + label] -= scale;
                }
                out.push((*logits, Tensor::new(ls, dl).unwrap()));
            }
            Op::Sum { x } => {
                let xs = self.shape(*x);
                out.push((*x, Tensor::full(xs, dy[0])));
            }
            Op::Scale { x, s } => {
                out.push((*x, g.map(|d| d * *s)));
            }
        }
        out
    }
}

/// Geometry of one temporal convolution.
struct ConvGeom {
    n: usize,
    c: usize,
    t: usize,
    v: usize,
    o: usize,
    l: usize,
    stride: usize,
    pad: usize,
    t_out: usize,
}

impl ConvGeom {
    fn new(xs: &[usize], ks: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let (n, c, t, v) = (xs[0], xs[1], xs[2], xs[3]);
        let (o, l) = (ks[0], ks[2]);
        if l == 0 || t + 2 * pad < l {
            return Err(mismatch(format!(
                "conv_time: window {l} does not fit {t} frames with padding {pad}"
            )));
        }
        let t_out = (t + 2 * pad - l) / stride + 1;
        Ok(Self {
            n,
            c,
            t,
            v,
            o,
            l,
            stride,
            pad,
            t_out,
        })
    }

    fn is_pointwise(&self) -> bool {
        self.l == 1 && self.stride == 1 && self.pad == 0
    }

    fn col_buffer<T: Real>(&self) -> Vec<T> {
        if self.is_pointwise() {
            Vec::new()
        } else {
            vec![T::zero(); self.c * self.l * self.t_out * self.v]
        }
    }

    /// Lays out `[C·L, T'·V]` patches of one sample; pointwise convolutions
    /// use the input directly.
    fn im2col<'a, T: Real>(&self, xn: &'a [T], cols: &'a mut [T]) -> &'a [T] {
        if self.is_pointwise() {
            return xn;
        }
        let row_len = self.t_out * self.v;
        for ci in 0..self.c {
            for li in 0..self.l {
                let row = &mut cols[(ci * self.l + li) * row_len..][..row_len];
                for to in 0..self.t_out {
                    let dst = &mut row[to * self.v..(to + 1) * self.v];
                    let ti = (to * self.stride + li) as isize - self.pad as isize;
                    if ti >= 0 && (ti as usize) < self.t {
                        let src = (ci * self.t + ti as usize) * self.v;
                        dst.copy_from_slice(&xn[src..src + self.v]);
                    } else {
                        dst.fill(T::zero());
                    }
                }
            }
        }
        cols
    }

    fn col2im_add<T: Real>(&self, cols: &[T], dxn: &mut [T]) {
        let row_len = self.t_out * self.v;
        for ci in 0..self.c {
            for li in 0..self.l {
                let row = &cols[(ci * self.l + li) * row_len..][..row_len];
                for to in 0..self.t_out {
                    let ti = (to * self.stride + li) as isize - self.pad as isize;
                    if ti >= 0 && (ti as usize) < self.t {
                        let dst = (ci * self.t + ti as usize) * self.v;
                        for (d, &s) in dxn[dst..dst + self.v]
                            .iter_mut()
                            .zip(&row[to * self.v..(to + 1) * self.v])
                        {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
}

/// Gradients of the leaves reached by a backward sweep.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}
