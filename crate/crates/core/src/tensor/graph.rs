//! Reverse-mode differentiation over a recorded graph of tensor operations.
//!
//! A [`Graph`] is built eagerly: every operation computes its output when it is
//! recorded, so the forward pass is the construction itself. [`Graph::backward`]
//! then walks the nodes in reverse insertion order, which is a valid
//! topological order because inputs always precede their consumers.

use super::array::{Real, Tensor};
use super::kernels::{col2im, gemm, im2col, ConvGeom};
use super::params::{Gradients, ParameterSet};
use super::TensorError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Input,
    Param(usize),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, T),
    ScaleSamples(NodeId, Vec<T>),
    MatMul(NodeId, NodeId),
    AddRowBias(NodeId, NodeId),
    AddChannel(NodeId, NodeId),
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        geom: ConvGeom,
        out_channels: usize,
    },
    Silu(NodeId),
    Exp(NodeId),
    Clamp(NodeId, T, T),
    Minimum(NodeId, NodeId),
    GroupNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        groups: usize,
        // per (sample, group): mean, reciprocal std
        stats: Vec<(T, T)>,
    },
    Sum(NodeId),
    Mean(NodeId),
    SumPerSample(NodeId),
    SumSquares(NodeId),
    Mse(NodeId, NodeId),
}

#[derive(Debug, Clone)]
struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
}

/// Identity and version of the parameter set a graph was bound to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Binding {
    set_id: u64,
    version: u64,
    len: usize,
}

#[derive(Debug, Clone, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    binding: Option<Binding>,
}

const GN_EPS: f64 = 1e-5;

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            binding: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn push(
        &mut self,
        op: Op<T>,
        value: Tensor<T>,
        name: &'static str,
    ) -> Result<NodeId, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite(name));
        }
        self.nodes.push(Node { op, value });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Records a constant leaf. Gradients never flow into it.
    pub fn input(&mut self, value: Tensor<T>) -> Result<NodeId, TensorError> {
        self.push(Op::Input, value, "input")
    }

    /// Records every parameter of `params` as a differentiable leaf, in order.
    pub fn bind(&mut self, params: &ParameterSet<T>) -> Result<Vec<NodeId>, TensorError> {
        if self.binding.is_some() {
            return Err(TensorError::AlreadyBound);
        }
        self.binding = Some(Binding {
            set_id: params.id(),
            version: params.version(),
            len: params.len(),
        });
        let mut ids = Vec::with_capacity(params.len());
        for (i, (_, t)) in params.iter().enumerate() {
            ids.push(self.push(Op::Param(i), t.clone(), "param")?);
        }
        Ok(ids)
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<(), TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch {
                op,
                expected: self.shape(a).to_vec(),
                got: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    fn zip(&self, a: NodeId, b: NodeId, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (va, vb) = (self.value(a), self.value(b));
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::from_parts(va.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.same_shape("add", a, b)?;
        let v = self.zip(a, b, |x, y| x + y);
        self.push(Op::Add(a, b), v, "add")
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.same_shape("sub", a, b)?;
        let v = self.zip(a, b, |x, y| x - y);
        self.push(Op::Sub(a, b), v, "sub")
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.same_shape("mul", a, b)?;
        let v = self.zip(a, b, |x, y| x * y);
        self.push(Op::Mul(a, b), v, "mul")
    }

    pub fn scale(&mut self, a: NodeId, s: T) -> Result<NodeId, TensorError> {
        let v = self.value(a).map(|x| x * s);
        self.push(Op::Scale(a, s), v, "scale")
    }

    /// Multiplies sample `i` (leading axis) by the constant `s[i]`.
    pub fn scale_samples(&mut self, a: NodeId, s: Vec<T>) -> Result<NodeId, TensorError> {
        let va = self.value(a);
        if s.len() != va.batch() {
            return Err(TensorError::ShapeMismatch {
                op: "scale_samples",
                expected: vec![va.batch()],
                got: vec![s.len()],
            });
        }
        let per = va.numel() / va.batch();
        let data = va
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x * s[i / per])
            .collect();
        let v = Tensor::from_parts(va.shape().to_vec(), data);
        self.push(Op::ScaleSamples(a, s), v, "scale_samples")
    }

    /// `[m,k] · [k,n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                expected: sa.to_vec(),
                got: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            &mut out,
            false,
        );
        self.push(
            Op::MatMul(a, b),
            Tensor::from_parts(vec![m, n], out),
            "matmul",
        )
    }

    /// `x[N,F] + b[F]` broadcast over rows.
    pub fn add_row_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (sx, sb) = (self.shape(x), self.shape(b));
        if sx.len() != 2 || sb != [sx[1]] {
            return Err(TensorError::ShapeMismatch {
                op: "add_row_bias",
                expected: vec![sx.get(1).copied().unwrap_or(0)],
                got: sb.to_vec(),
            });
        }
        let f = sx[1];
        let bv = self.value(b).data();
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bv[i % f])
            .collect();
        let v = Tensor::from_parts(sx.to_vec(), data);
        self.push(Op::AddRowBias(x, b), v, "add_row_bias")
    }

    /// `x[N,C,...] + e[N,C]`, broadcasting each per-sample channel vector over
    /// the spatial extent. This is how timestep embeddings enter feature maps.
    pub fn add_channel(&mut self, x: NodeId, e: NodeId) -> Result<NodeId, TensorError> {
        let (sx, se) = (self.shape(x), self.shape(e));
        if sx.len() < 2 || se != [sx[0], sx[1]] {
            return Err(TensorError::ShapeMismatch {
                op: "add_channel",
                expected: sx.iter().take(2).copied().collect(),
                got: se.to_vec(),
            });
        }
        let spatial = self.value(x).numel() / (sx[0] * sx[1]);
        let ev = self.value(e).data();
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + ev[i / spatial])
            .collect();
        let v = Tensor::from_parts(sx.to_vec(), data);
        self.push(Op::AddChannel(x, e), v, "add_channel")
    }

    /// Stride-1 same-padded convolution. `x: [N,C,H,W]`, `w: [O,C,k,k]` with odd `k`,
    /// optional `b: [O]`.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
    ) -> Result<NodeId, TensorError> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 4 || sw.len() != 4 || sw[1] != sx[1] || sw[2] != sw[3] || sw[2] % 2 == 0 {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                expected: sx,
                got: sw,
            });
        }
        let o = sw[0];
        if let Some(b) = b {
            if self.shape(b) != [o] {
                return Err(TensorError::ShapeMismatch {
                    op: "conv2d bias",
                    expected: vec![o],
                    got: self.shape(b).to_vec(),
                });
            }
        }
        let geom = ConvGeom {
            n: sx[0],
            c: sx[1],
            h: sx[2],
            w: sx[3],
            k: sw[2],
        };
        let hw = geom.h * geom.w;
        let cols = im2col(self.value(x).data(), geom);
        let mut out2 = vec![T::zero(); o * geom.cols()];
        gemm(
            o,
            geom.rows(),
            geom.cols(),
            self.value(w).data(),
            false,
            &cols,
            false,
            &mut out2,
            false,
        );
        let bias = b.map(|b| self.value(b).data().to_vec());
        let mut out = vec![T::zero(); geom.n * o * hw];
        for oc in 0..o {
            let bo = bias.as_ref().map_or(T::zero(), |bv| bv[oc]);
            for n in 0..geom.n {
                let src = &out2[oc * geom.cols() + n * hw..oc * geom.cols() + (n + 1) * hw];
                let dst = &mut out[(n * o + oc) * hw..(n * o + oc + 1) * hw];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = s + bo;
                }
            }
        }
        let v = Tensor::from_parts(vec![geom.n, o, geom.h, geom.w], out);
        self.push(
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                out_channels: o,
            },
            v,
            "conv2d",
        )
    }

    pub fn silu(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let v = self.value(a).map(|x| x * sigmoid(x));
        self.push(Op::Silu(a), v, "silu")
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let v = self.value(a).map(|x| x.exp());
        self.push(Op::Exp(a), v, "exp")
    }

    pub fn clamp(&mut self, a: NodeId, lo: T, hi: T) -> Result<NodeId, TensorError> {
        let v = self.value(a).map(|x| x.max(lo).min(hi));
        self.push(Op::Clamp(a, lo, hi), v, "clamp")
    }

    pub fn minimum(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.same_shape("minimum", a, b)?;
        let v = self.zip(a, b, |x, y| if x <= y { x } else { y });
        self.push(Op::Minimum(a, b), v, "minimum")
    }

    /// Group normalization over `[N,C,...]` with per-channel affine `gamma`, `beta` of shape `[C]`.
    pub fn group_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        groups: usize,
    ) -> Result<NodeId, TensorError> {
        let sx = self.shape(x).to_vec();
        if sx.len() < 2 || groups == 0 || !sx[1].is_multiple_of(groups) {
            return Err(TensorError::ShapeMismatch {
                op: "group_norm",
                expected: vec![groups],
                got: sx,
            });
        }
        let c = sx[1];
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(TensorError::ShapeMismatch {
                op: "group_norm affine",
                expected: vec![c],
                got: self.shape(gamma).to_vec(),
            });
        }
        let n = sx[0];
        let spatial = self.value(x).numel() / (n * c);
        let cpg = c / groups;
        let m = T::lit((cpg * spatial) as f64);
        let eps = T::lit(GN_EPS);
        let xv = self.value(x).data();
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let mut out = vec![T::zero(); xv.len()];
        let mut stats = Vec::with_capacity(n * groups);
        for s in 0..n {
            for g in 0..groups {
                let lo = (s * c + g * cpg) * spatial;
                let hi = lo + cpg * spatial;
                let seg = &xv[lo..hi];
                let mean = seg.iter().fold(T::zero(), |a, &v| a + v) / m;
                let var = seg
                    .iter()
                    .fold(T::zero(), |a, &v| a + (v - mean) * (v - mean))
                    / m;
                let rstd = T::one() / (var + eps).sqrt();
                stats.push((mean, rstd));
                for (j, (&v, o)) in seg.iter().zip(&mut out[lo..hi]).enumerate() {
                    let ch = g * cpg + j / spatial;
                    *o = (v - mean) * rstd * gv[ch] + bv[ch];
                }
            }
        }
        let v = Tensor::from_parts(sx, out);
        self.push(
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                stats,
            },
            v,
            "group_norm",
        )
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(Op::Sum(a), v, "sum")
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let va = self.value(a);
        let v = Tensor::scalar(va.sum() / T::lit(va.numel() as f64));
        self.push(Op::Mean(a), v, "mean")
    }

    /// Sums each sample along all non-leading axes: `[N,...] -> [N]`.
    pub fn sum_per_sample(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let va = self.value(a);
        let n = va.batch();
        let data = (0..n)
            .map(|i| va.sample(i).iter().fold(T::zero(), |acc, &v| acc + v))
            .collect();
        self.push(
            Op::SumPerSample(a),
            Tensor::from_parts(vec![n], data),
            "sum_per_sample",
        )
    }

    pub fn sum_squares(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let s = self
            .value(a)
            .data()
            .iter()
            .fold(T::zero(), |acc, &v| acc + v * v);
        self.push(Op::SumSquares(a), Tensor::scalar(s), "sum_squares")
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.same_shape("mse", a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let s = va
            .data()
            .iter()
            .zip(vb.data())
            .fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y));
        let v = Tensor::scalar(s / T::lit(va.numel() as f64));
        self.push(Op::Mse(a, b), v, "mse")
    }

    /// Gradients of the scalar `loss` with respect to every bound parameter.
    pub fn backward(
        &self,
        loss: NodeId,
        params: &ParameterSet<T>,
    ) -> Result<Gradients<T>, TensorError> {
        if !self.value(loss).is_scalar() {
            return Err(TensorError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let binding = self.binding.ok_or(TensorError::Unbound)?;
        if binding.set_id != params.id()
            || binding.version != params.version()
            || binding.len != params.len()
        {
            return Err(TensorError::StaleGraph);
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        let mut out = Gradients::zeros_like(params);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Param(p) => {
                    out.accumulate(*p, &g);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, &g);
                    acc(&mut grads, *b, &g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, &g);
                    let neg: Vec<T> = g.iter().map(|&v| -v).collect();
                    acc(&mut grads, *b, &neg);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                    let ga: Vec<T> = g.iter().zip(vb).map(|(&d, &y)| d * y).collect();
                    let gb: Vec<T> = g.iter().zip(va).map(|(&d, &x)| d * x).collect();
                    acc(&mut grads, *a, &ga);
                    acc(&mut grads, *b, &gb);
                }
                Op::Scale(a, s) => {
                    let ga: Vec<T> = g.iter().map(|&d| d * *s).collect();
                    acc(&mut grads, *a, &ga);
                }
                Op::ScaleSamples(a, s) => {
                    let per = g.len() / s.len();
                    let ga: Vec<T> = g.iter().enumerate().map(|(j, &d)| d * s[j / per]).collect();
                    acc(&mut grads, *a, &ga);
                }
                Op::MatMul(a, b) => {
                    let (sa, sb) = (self.shape(*a), self.shape(*b));
                    let (m, k, n) = (sa[0], sa[1], sb[1]);
                    let mut ga = vec![T::zero(); m * k];
                    gemm(
                        m,
                        n,
                        k,
                        &g,
                        false,
                        self.value(*b).data(),
                        true,
                        &mut ga,
                        false,
                    );
                    let mut gb = vec![T::zero(); k * n];
                    gemm(
                        k,
                        m,
                        n,
                        self.value(*a).data(),
                        true,
                        &g,
                        false,
                        &mut gb,
                        false,
                    );
                    acc(&mut grads, *a, &ga);
                    acc(&mut grads, *b, &gb);
                }
                Op::AddRowBias(x, b) => {
                    let f = self.shape(*b)[0];
                    let mut gb = vec![T::zero(); f];
                    for (j, &d) in g.iter().enumerate() {
                        gb[j % f] = gb[j % f] + d;
                    }
                    acc(&mut grads, *x, &g);
                    acc(&mut grads, *b, &gb);
                }
                Op::AddChannel(x, e) => {
                    let ne = self.value(*e).numel();
                    let spatial = g.len() / ne;
                    let mut ge = vec![T::zero(); ne];
                    for (j, &d) in g.iter().enumerate() {
                        ge[j / spatial] = ge[j / spatial] + d;
                    }
                    acc(&mut grads, *x, &g);
                    acc(&mut grads, *e, &ge);
                }
                Op::Conv2d {
                    x,
                    w,
                    b,
                    geom,
                    out_channels,
                } => {
                    let (o, hw, ncols) = (*out_channels, geom.h * geom.w, geom.cols());
                    // dOut as [O, N·H·W]
                    let mut g2 = vec![T::zero(); o * ncols];
                    for n in 0..geom.n {
                        for oc in 0..o {
                            let src = &g[(n * o + oc) * hw..(n * o + oc + 1) * hw];
                            g2[oc * ncols + n * hw..oc * ncols + (n + 1) * hw].copy_from_slice(src);
                        }
                    }
                    let cols = im2col(self.value(*x).data(), *geom);
                    let mut gw = vec![T::zero(); o * geom.rows()];
                    gemm(
                        o,
                        ncols,
                        geom.rows(),
                        &g2,
                        false,
                        &cols,
                        true,
                        &mut gw,
                        false,
                    );
                    acc(&mut grads, *w, &gw);
                    if let Some(b) = b {
                        let gb: Vec<T> = (0..o)
                            .map(|oc| {
                                g2[oc * ncols..(oc + 1) * ncols]
                                    .iter()
                                    .fold(T::zero(), |a, &v| a + v)
                            })
                            .collect();
                        acc(&mut grads, *b, &gb);
                    }
                    let mut gcols = vec![T::zero(); geom.rows() * ncols];
                    gemm(
                        geom.rows(),
                        o,
                        ncols,
                        self.value(*w).data(),
                        true,
                        &g2,
                        false,
                        &mut gcols,
                        false,
                    );
                    let mut gx = vec![T::zero(); self.value(*x).numel()];
                    col2im(&gcols, *geom, &mut gx);
                    acc(&mut grads, *x, &gx);
                }
                Op::Silu(a) => {
                    let va = self.value(*a).data();
                    let ga: Vec<T> = g
                        .iter()
                        .zip(va)
                        .map(|(&d, &x)| {
                            let s = sigmoid(x);
                            d * s * (T::one() + x * (T::one() - s))
                        })
                        .collect();
                    acc(&mut grads, *a, &ga);
                }
                Op::Exp(a) => {
                    let ga: Vec<T> = g
                        .iter()
                        .zip(node.value.data())
                        .map(|(&d, &y)| d * y)
                        .collect();
                    acc(&mut grads, *a, &ga);
                }
                Op::Clamp(a, lo, hi) => {
                    let va = self.value(*a).data();
                    let ga: Vec<T> = g
                        .iter()
                        .zip(va)
                        .map(|(&d, &x)| if x >= *lo && x <= *hi { d } else { T::zero() })
                        .collect();
                    acc(&mut grads, *a, &ga);
                }
                Op::Minimum(a, b) => {
                    let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                    let mut ga = vec![T::zero(); g.len()];
                    let mut gb = vec![T::zero(); g.len()];
                    for j in 0..g.len() {
                        if va[j] <= vb[j] {
                            ga[j] = g[j];
                        } else {
                            gb[j] = g[j];
                        }
                    }
                    acc(&mut grads, *a, &ga);
                    acc(&mut grads, *b, &gb);
                }
                Op::GroupNorm {
                    x,
                    gamma,
                    beta,
                    groups,
                    stats,
                } => {
                    let sx = self.shape(*x);
                    let (n, c) = (sx[0], sx[1]);
                    let spatial = g.len() / (n * c);
                    let cpg = c / groups;
                    let m = T::lit((cpg * spatial) as f64);
                    let xv = self.value(*x).data();
                    let gv = self.value(*gamma).data();
                    let mut gx = vec![T::zero(); g.len()];
                    let mut ggamma = vec![T::zero(); c];
                    let mut gbeta = vec![T::zero(); c];
                    for s in 0..n {
                        for gr in 0..*groups {
                            let (mean, rstd) = stats[s * groups + gr];
                            let lo = (s * c + gr * cpg) * spatial;
                            let hi = lo + cpg * spatial;
                            let mut sum_dxhat = T::zero();
                            let mut sum_dxhat_xhat = T::zero();
                            for j in lo..hi {
                                let ch = (j / spatial) % c;
                                let xhat = (xv[j] - mean) * rstd;
                                let dxhat = g[j] * gv[ch];
                                ggamma[ch] = ggamma[ch] + g[j] * xhat;
                                gbeta[ch] = gbeta[ch] + g[j];
                                sum_dxhat = sum_dxhat + dxhat;
                                sum_dxhat_xhat = sum_dxhat_xhat + dxhat * xhat;
                            }
                            for j in lo..hi {
                                let ch = (j / spatial) % c;
                                let xhat = (xv[j] - mean) * rstd;
                                let dxhat = g[j] * gv[ch];
                                gx[j] = rstd / m * (m * dxhat - sum_dxhat - xhat * sum_dxhat_xhat);
                            }
                        }
                    }
                    acc(&mut grads, *x, &gx);
                    acc(&mut grads, *gamma, &ggamma);
                    acc(&mut grads, *beta, &gbeta);
                }
                Op::Sum(a) => {
                    let ga = vec![g[0]; self.value(*a).numel()];
                    acc(&mut grads, *a, &ga);
                }
                Op::Mean(a) => {
                    let numel = self.value(*a).numel();
                    let ga = vec![g[0] / T::lit(numel as f64); numel];
                    acc(&mut grads, *a, &ga);
                }
                Op::SumPerSample(a) => {
                    let va = self.value(*a);
                    let per = va.numel() / va.batch();
                    let ga: Vec<T> = (0..va.numel()).map(|j| g[j / per]).collect();
                    acc(&mut grads, *a, &ga);
                }
                Op::SumSquares(a) => {
                    let two = T::lit(2.0);
                    let ga: Vec<T> = self
                        .value(*a)
                        .data()
                        .iter()
                        .map(|&x| two * x * g[0])
                        .collect();
                    acc(&mut grads, *a, &ga);
                }
                Op::Mse(a, b) => {
                    let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                    let scale = T::lit(2.0) * g[0] / T::lit(va.len() as f64);
                    let ga: Vec<T> = va.iter().zip(vb).map(|(&x, &y)| scale * (x - y)).collect();
                    let gb: Vec<T> = ga.iter().map(|&v| -v).collect();
                    acc(&mut grads, *a, &ga);
                    acc(&mut grads, *b, &gb);
                }
            }
        }
        out.check_finite()?;
        Ok(out)
    }
}

fn acc<T: Real>(grads: &mut [Option<Vec<T>>], id: NodeId, g: &[T]) {
    match &mut grads[id.0] {
        Some(existing) => {
            for (e, &v) in existing.iter_mut().zip(g) {
                *e = *e + v;
            }
        }
        slot @ None => *slot = Some(g.to_vec()),
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn identity_kernel_conv_is_identity() {
        let mut g = Graph::<f64>::new();
        let xs: Vec<f64> = (0..2 * 1 * 3 * 4).map(|v| v as f64 - 7.5).collect();
        let x = g.input(t(&[2, 1, 3, 4], &xs)).unwrap();
        let w = g.input(t(&[1, 1, 1, 1], &[1.0])).unwrap();
        let b = g.input(t(&[1], &[0.0])).unwrap();
        let y = g.conv2d(x, w, Some(b)).unwrap();
        assert_eq!(g.value(y).data(), &xs[..]);
    }

    #[test]
    fn silu_fixes_zero_and_mse_of_self_is_zero() {
        let mut g = Graph::<f64>::new();
        let x = g.input(t(&[3], &[0.0, 0.0, 0.0])).unwrap();
        let y = g.silu(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 0.0]);
        let z = g.input(t(&[2, 2], &[1.0, -2.0, 3.5, 0.25])).unwrap();
        let l = g.mse(z, z).unwrap();
        assert_eq!(g.value(l).data(), &[0.0]);
    }

    #[test]
    fn sum_gradient_is_all_ones() {
        let mut params = ParameterSet::new();
        params
            .insert("x", t(&[2, 3], &[1.0, -2.0, 0.5, 4.0, 3.0, -1.0]))
            .unwrap();
        let mut g = Graph::new();
        let ids = g.bind(&params).unwrap();
        let l = g.sum(ids[0]).unwrap();
        let grads = g.backward(l, &params).unwrap();
        assert_eq!(grads.get(0).data(), &[1.0; 6]);
    }

    #[test]
    fn scalar_mse_gradient() {
        // d/dw (w·x − y)² at w=1, x=2, y=0 is 2·(wx − y)·x = 8
        let mut params = ParameterSet::new();
        params.insert("w", t(&[1, 1], &[1.0])).unwrap();
        let mut g = Graph::new();
        let w = g.bind(&params).unwrap()[0];
        let x = g.input(t(&[1, 1], &[2.0])).unwrap();
        let y = g.input(t(&[1, 1], &[0.0])).unwrap();
        let wx = g.matmul(w, x).unwrap();
        let l = g.mse(wx, y).unwrap();
        let grads = g.backward(l, &params).unwrap();
        assert_eq!(grads.get(0).data(), &[8.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_stale_graphs() {
        let mut params = ParameterSet::new();
        params.insert("x", t(&[2], &[1.0, 2.0])).unwrap();
        let mut g = Graph::new();
        let x = g.bind(&params).unwrap()[0];
        let y = g.silu(x).unwrap();
        assert!(matches!(
            g.backward(y, &params),
            Err(TensorError::NonScalarLoss(_))
        ));
        let l = g.sum(y).unwrap();
        params.get_mut(0).data_mut()[0] = 5.0;
        assert!(matches!(
            g.backward(l, &params),
            Err(TensorError::StaleGraph)
        ));
        let other = params.clone();
        let mut g2 = Graph::new();
        let x2 = g2.bind(&params).unwrap()[0];
        let l2 = g2.sum(x2).unwrap();
        assert!(matches!(
            g2.backward(l2, &other),
            Err(TensorError::StaleGraph)
        ));
    }

    #[test]
    fn non_finite_outputs_are_errors() {
        let mut g = Graph::<f64>::new();
        let x = g.input(t(&[1], &[1000.0])).unwrap();
        assert!(matches!(g.exp(x), Err(TensorError::NonFinite("exp"))));
        assert!(matches!(
            g.input(t(&[1], &[f64::NAN])),
            Err(TensorError::NonFinite(_))
        ));
    }

    #[test]
    fn shape_mismatches_are_errors() {
        let mut g = Graph::<f64>::new();
        let a = g.input(t(&[2], &[1.0, 2.0])).unwrap();
        let b = g.input(t(&[3], &[1.0, 2.0, 3.0])).unwrap();
        assert!(matches!(
            g.add(a, b),
            Err(TensorError::ShapeMismatch { .. })
        ));
        assert!(matches!(
            g.matmul(a, b),
            Err(TensorError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn group_norm_output_is_standardized_per_group() {
        let mut g = Graph::<f64>::new();
        let xs: Vec<f64> = (0..2 * 4 * 3).map(|v| ((v * 7) % 11) as f64).collect();
        let x = g.input(t(&[2, 4, 3], &xs)).unwrap();
        let gamma = g.input(Tensor::ones(&[4])).unwrap();
        let beta = g.input(Tensor::zeros(&[4])).unwrap();
        let y = g.group_norm(x, gamma, beta, 2).unwrap();
        let yv = g.value(y).data();
        for seg in yv.chunks(6) {
            let mean: f64 = seg.iter().sum::<f64>() / 6.0;
            let var: f64 = seg.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 6.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }
}
