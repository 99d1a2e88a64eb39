//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied during a forward pass. Nodes
//! remember whether any of their inputs needs a gradient, so calling
//! [`Graph::backward`] only does work along paths that lead to trainable
//! leaves (a frozen network contributes input gradients but never weight
//! gradients).

use super::conv::{self, ConvGeom, ConvShape};
use super::{Float, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
struct Taps {
    lo: Vec<usize>,
    hi: Vec<usize>,
    w_hi: Vec<f64>,
}

impl Taps {
    /// Half-pixel-centred bilinear taps mapping `src` samples onto `dst`.
    fn bilinear(src: usize, dst: usize) -> Self {
        let scale = src as f64 / dst as f64;
        let mut t = Taps {
            lo: Vec::with_capacity(dst),
            hi: Vec::with_capacity(dst),
            w_hi: Vec::with_capacity(dst),
        };
        for o in 0..dst {
            let pos = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (pos.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            t.lo.push(lo);
            t.hi.push(hi);
            t.w_hi.push(if hi == lo { 0.0 } else { pos - lo as f64 });
        }
        t
    }
}

enum Op<T> {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        cols: Vec<T>,
    },
    InstanceNorm {
        x: Var,
        inv_std: Vec<T>,
    },
    Relu(Var),
    LeakyRelu(Var, T),
    Tanh(Var),
    Add(Var, Var),
    Affine(Var, T),
    UpsampleNearest(Var, usize),
    Resize {
        x: Var,
        rows: Taps,
        cols: Taps,
    },
    Softmax(Var),
    MseConst(Var, T),
    GlobalMean(Var),
    L1(Var, Var),
    CrossEntropy {
        p: Var,
        labels: Vec<u8>,
        eps: T,
    },
    WeightedSum(Vec<(Var, T)>),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recorded computation.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Result of [`Graph::backward`].
pub struct Grads<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Float> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl<T: Float> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let (cin, h, wd) = self.value(x).chw();
        let ws = self.value(w).shape().to_vec();
        if ws.len() != 4 || ws[1] != cin || ws[2] != geom.kernel || ws[3] != geom.kernel {
            return Err(Error::shape(&[ws.first().copied().unwrap_or(0), cin, geom.kernel, geom.kernel], &ws));
        }
        let cout = ws[0];
        if let Some(b) = b {
            if self.value(b).shape() != [cout] {
                return Err(Error::shape(&[cout], self.value(b).shape()));
            }
        }
        let (ho, wo) = match (geom.out_len(h), geom.out_len(wd)) {
            (Some(ho), Some(wo)) if ho > 0 && wo > 0 => (ho, wo),
            _ => {
                return Err(Error::Config(format!(
                    "convolution {geom:?} does not fit a {h}x{wd} input"
                )))
            }
        };
        let s = ConvShape { cin, h, w: wd, cout, ho, wo };
        let (out, cols) = conv::conv_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &s,
            &geom,
        );
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        let keep_cols = if self.rg(w) { cols } else { Vec::new() };
        let value = Tensor::from_vec(&[cout, ho, wo], out)?;
        Ok(self.push(
            value,
            Op::Conv {
                x,
                w,
                b,
                geom,
                cols: keep_cols,
            },
            rg,
        ))
    }

    /// Per-channel normalisation over the spatial extent, no affine terms.
    pub fn instance_norm(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (c, h, w) = xv.chw();
        let n = h * w;
        let mut out = xv.data().to_vec();
        let mut inv_std = Vec::with_capacity(c);
        for plane in out.chunks_mut(n) {
            let mean = plane.iter().copied().sum::<T>() / T::of(n as f64);
            let var = plane.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / T::of(n as f64);
            let is = T::one() / (var + T::of(NORM_EPS)).sqrt();
            plane.iter_mut().for_each(|v| *v = (*v - mean) * is);
            inv_std.push(is);
        }
        let rg = self.rg(x);
        let value = Tensor::from_vec(&[c, h, w], out).expect("same shape");
        self.push(value, Op::InstanceNorm { x, inv_std }, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| a.max(T::zero()));
        let rg = self.rg(x);
        self.push(v, Op::Relu(x), rg)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let s = T::of(slope);
        let v = self.value(x).map(|a| if a > T::zero() { a } else { a * s });
        let rg = self.rg(x);
        self.push(v, Op::LeakyRelu(x, s), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| a.tanh());
        let rg = self.rg(x);
        self.push(v, Op::Tanh(x), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(self.value(a).shape(), self.value(b).shape()));
        }
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let (s, t) = (T::of(scale), T::of(shift));
        let v = self.value(x).map(|a| a * s + t);
        let rg = self.rg(x);
        self.push(v, Op::Affine(x, s), rg)
    }

    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Var {
        let (c, h, w) = self.value(x).chw();
        let (h2, w2) = (h * factor, w * factor);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); c * h2 * w2];
        for ch in 0..c {
            for y in 0..h2 {
                let srow = &src[(ch * h + y / factor) * w..(ch * h + y / factor + 1) * w];
                let drow = &mut out[(ch * h2 + y) * w2..(ch * h2 + y + 1) * w2];
                for (x2, d) in drow.iter_mut().enumerate() {
                    *d = srow[x2 / factor];
                }
            }
        }
        let rg = self.rg(x);
        let value = Tensor::from_vec(&[c, h2, w2], out).expect("shape");
        self.push(value, Op::UpsampleNearest(x, factor), rg)
    }

    /// Bilinear resize to `height × width` (half-pixel centres).
    pub fn resize_bilinear(&mut self, x: Var, height: usize, width: usize) -> Var {
        let (c, h, w) = self.value(x).chw();
        let rows = Taps::bilinear(h, height);
        let cols = Taps::bilinear(w, width);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); c * height * width];
        for ch in 0..c {
            let plane = &src[ch * h * w..(ch + 1) * h * w];
            for oy in 0..height {
                let (y0, y1, wy) = (rows.lo[oy], rows.hi[oy], T::of(rows.w_hi[oy]));
                for ox in 0..width {
                    let (x0, x1, wx) = (cols.lo[ox], cols.hi[ox], T::of(cols.w_hi[ox]));
                    let top = plane[y0 * w + x0] * (T::one() - wx) + plane[y0 * w + x1] * wx;
                    let bot = plane[y1 * w + x0] * (T::one() - wx) + plane[y1 * w + x1] * wx;
                    out[(ch * height + oy) * width + ox] = top * (T::one() - wy) + bot * wy;
                }
            }
        }
        let rg = self.rg(x);
        let value = Tensor::from_vec(&[c, height, width], out).expect("shape");
        self.push(value, Op::Resize { x, rows, cols }, rg)
    }

    /// Softmax across the channel axis of a `[C, H, W]` tensor.
    pub fn softmax_channels(&mut self, x: Var) -> Var {
        let (c, h, w) = self.value(x).chw();
        let n = h * w;
        let src = self.value(x).data();
        let mut out = vec![T::zero(); c * n];
        for i in 0..n {
            let mut m = T::neg_infinity();
            for ch in 0..c {
                m = m.max(src[ch * n + i]);
            }
            let mut z = T::zero();
            for ch in 0..c {
                let e = (src[ch * n + i] - m).exp();
                out[ch * n + i] = e;
                z += e;
            }
            for ch in 0..c {
                out[ch * n + i] = out[ch * n + i] / z;
            }
        }
        let rg = self.rg(x);
        let value = Tensor::from_vec(&[c, h, w], out).expect("shape");
        self.push(value, Op::Softmax(x), rg)
    }

    /// `mean((x - target)^2)` as a scalar.
    pub fn mse_const(&mut self, x: Var, target: f64) -> Var {
        let t = T::of(target);
        let xv = self.value(x);
        let loss = xv.data().iter().map(|&a| (a - t) * (a - t)).sum::<T>() / T::of(xv.len() as f64);
        let rg = self.rg(x);
        self.push(Tensor::scalar(loss), Op::MseConst(x, t), rg)
    }

    /// Mean over every element, kept as a `[1, 1, 1]` map.
    pub fn global_mean(&mut self, x: Var) -> Var {
        let m = self.value(x).mean();
        let rg = self.rg(x);
        self.push(Tensor::from_vec(&[1, 1, 1], vec![m]).expect("shape"), Op::GlobalMean(x), rg)
    }

    /// `mean(|a - b|)` as a scalar.
    pub fn l1(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape(av.shape(), bv.shape()));
        }
        let loss = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&p, &q)| (p - q).abs())
            .sum::<T>()
            / T::of(av.len() as f64);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::scalar(loss), Op::L1(a, b), rg))
    }

    /// Mean pixel-wise `-ln(max(p[label], eps))` over a `[C, H, W]`
    /// probability map.
    pub fn cross_entropy(&mut self, p: Var, labels: &[u8], eps: f64) -> Result<Var> {
        let (c, h, w) = self.value(p).chw();
        let n = h * w;
        if labels.len() != n {
            return Err(Error::shape(&[h, w], &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= c) {
            return Err(Error::InvalidClassId {
                id: bad as u32,
                context: "cross-entropy target".into(),
            });
        }
        let e = T::of(eps);
        let pv = self.value(p).data();
        let loss = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| -(pv[l as usize * n + i].max(e).min(T::one())).ln())
            .sum::<T>()
            / T::of(n as f64);
        let rg = self.rg(p);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                p,
                labels: labels.to_vec(),
                eps: e,
            },
            rg,
        ))
    }

    /// `Σ coeff_i · term_i` over same-shaped terms.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let first = terms.first().ok_or(Error::Empty("weighted sum"))?.0;
        let shape = self.value(first).shape().to_vec();
        let mut acc = Tensor::zeros(&shape);
        let mut rg = false;
        let mut stored = Vec::with_capacity(terms.len());
        for &(v, c) in terms {
            let tv = self.value(v);
            if tv.shape() != shape.as_slice() {
                return Err(Error::shape(&shape, tv.shape()));
            }
            let c = T::of(c);
            for (a, &b) in acc.data_mut().iter_mut().zip(tv.data()) {
                *a += c * b;
            }
            rg |= self.rg(v);
            stored.push((v, c));
        }
        Ok(self.push(acc, Op::WeightedSum(stored), rg))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Grads<T> {
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        assert_eq!(self.value(loss).len(), 1, "backward from non-scalar node");
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            self.backward_node(node, gy, &mut grads);
        }
        Grads { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn with_data(&self, like: Var, data: Vec<T>) -> Tensor<T> {
        Tensor::from_vec(self.value(like).shape(), data).expect("gradient shape")
    }

    fn backward_node(&self, node: &Node<T>, gy: Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Conv { x, w, b, geom, cols } => {
                let (cin, h, wd) = self.value(*x).chw();
                let (cout, ho, wo) = y.chw();
                let s = ConvShape { cin, h, w: wd, cout, ho, wo };
                if self.rg(*w) || b.is_some_and(|b| self.rg(b)) {
                    let mut dw = vec![T::zero(); self.value(*w).len()];
                    let mut db = b.map(|_| vec![T::zero(); cout]);
                    if self.rg(*w) {
                        conv::conv_backward_params(
                            gy.data(),
                            self.value(*x).data(),
                            cols,
                            &s,
                            geom,
                            &mut dw,
                            db.as_deref_mut(),
                        );
                        let t = self.with_data(*w, dw);
                        self.accumulate(grads, *w, t);
                    } else if let Some(db) = db.as_mut() {
                        for (co, row) in gy.data().chunks(ho * wo).enumerate() {
                            db[co] += row.iter().copied().sum::<T>();
                        }
                    }
                    if let (Some(b), Some(db)) = (b, db) {
                        let t = self.with_data(*b, db);
                        self.accumulate(grads, *b, t);
                    }
                }
                if self.rg(*x) {
                    let dx = conv::conv_backward_input(gy.data(), self.value(*w).data(), &s, geom);
                    let t = self.with_data(*x, dx);
                    self.accumulate(grads, *x, t);
                }
            }
            Op::InstanceNorm { x, inv_std } => {
                let (_, h, w) = y.chw();
                let n = h * w;
                let nf = T::of(n as f64);
                let mut dx = vec![T::zero(); y.len()];
                for (ch, ((dxp, gp), yp)) in dx
                    .chunks_mut(n)
                    .zip(gy.data().chunks(n))
                    .zip(y.data().chunks(n))
                    .enumerate()
                {
                    let sum_g = gp.iter().copied().sum::<T>();
                    let sum_gy = gp.iter().zip(yp).map(|(&a, &b)| a * b).sum::<T>();
                    let k = inv_std[ch] / nf;
                    for ((d, &g), &yh) in dxp.iter_mut().zip(gp).zip(yp) {
                        *d = k * (nf * g - sum_g - yh * sum_gy);
                    }
                }
                let t = self.with_data(*x, dx);
                self.accumulate(grads, *x, t);
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                let dx = gy
                    .data()
                    .iter()
                    .zip(xv)
                    .map(|(&g, &a)| if a > T::zero() { g } else { T::zero() })
                    .collect();
                let t = self.with_data(*x, dx);
                self.accumulate(grads, *x, t);
            }
            Op::LeakyRelu(x, s) => {
                let xv = self.value(*x).data();
                let dx = gy
                    .data()
                    .iter()
                    .zip(xv)
                    .map(|(&g, &a)| if a > T::zero() { g } else { g * *s })
                    .collect();
                let t = self.with_data(*x, dx);
                self.accumulate(grads, *x, t);
            }
            Op::Tanh(x) => {
                let dx = gy
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(&g, &o)| g * (T::one() - o * o))
                    .collect();
                let t = self.with_data(*x, dx);
                self.accumulate(grads, *x, t);
            }
            Op::Add(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, gy.clone());
                }
                self.accumulate(grads, *b, gy);
            }
            Op::Affine(x, s) => {
                let t = gy.map(|g| g * *s);
                self.accumulate(grads, *x, t);
            }
            Op::UpsampleNearest(x, f) => {
                let (c, h, w) = self.value(*x).chw();
                let (h2, w2) = (h * f, w * f);
                let mut dx = vec![T::zero(); c * h * w];
                let g = gy.data();
                for ch in 0..c {
                    for yy in 0..h2 {
                        let drow = &mut dx[(ch * h + yy / f) * w..(ch * h + yy / f + 1) * w];
                        let grow = &g[(ch * h2 + yy) * w2..(ch * h2 + yy + 1) * w2];
                        for (xx, &gv) in grow.iter().enumerate() {
                            drow[xx / f] += gv;
                        }
                    }
                }
                let t = self.with_data(*x, dx);
                self.accumulate(grads, *x, t);
            }
            Op::Resize { x, rows, cols } => {
                let (c, h, w) = self.value(*x).chw();
                let (_, oh, ow) = y.chw();
                let mut dx = vec![T::zero(); c * h * w];
                let g = gy.data();
                for ch in 0..c {
                    let plane = &mut dx[ch * h * w..(ch + 1) * h * w];
                    for oy in 0..oh {
                        let (y0, y1, wy) = (rows.lo[oy], rows.hi[oy], T::of(rows.w_hi[oy]));
                        for ox in 0..ow {
                            let (x0, x1, wx) = (cols.lo[ox], cols.hi[ox], T::of(cols.w_hi[ox]));
                            let gv = g[(ch * oh + oy) * ow + ox];
                            let top = gv * (T::one() - wy);
                            let bot = gv * wy;
                            plane[y0 * w + x0] += top * (T::one() - wx);
                            plane[y0 * w + x1] += top * wx;
                            plane[y1 * w + x0] += bot * (T::one() - wx);
                            plane[y1 * w + x1] += bot * wx;
                        }
                    }
                }
                let t = self.with_data(*x, dx);
                self.accumulate(grads, *x, t);
            }
            Op::Softmax(x) => {
                let (c, h, w) = y.chw();
                let n = h * w;
                let (p, g) = (y.data(), gy.data());
                let mut dx = vec![T::zero(); c * n];
                for i in 0..n {
                    let mut dot = T::zero();
                    for ch in 0..c {
                        dot += p[ch * n + i] * g[ch * n + i];
                    }
                    for ch in 0..c {
                        dx[ch * n + i] = p[ch * n + i] * (g[ch * n + i] - dot);
                    }
                }
                let t = self.with_data(*x, dx);
                self.accumulate(grads, *x, t);
            }
            Op::MseConst(x, target) => {
                let xv = self.value(*x);
                let k = gy.item() * T::of(2.0) / T::of(xv.len() as f64);
                let t = xv.map(|a| k * (a - *target));
                self.accumulate(grads, *x, t);
            }
            Op::GlobalMean(x) => {
                let xv = self.value(*x);
                let k = gy.data()[0] / T::of(xv.len() as f64);
                let t = xv.map(|_| k);
                self.accumulate(grads, *x, t);
            }
            Op::L1(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let k = gy.item() / T::of(av.len() as f64);
                let sign: Vec<T> = av
                    .data()
                    .iter()
                    .zip(bv.data())
                    .map(|(&p, &q)| {
                        let d = p - q;
                        if d > T::zero() {
                            k
                        } else if d < T::zero() {
                            -k
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                if self.rg(*b) {
                    let neg = sign.iter().map(|&s| -s).collect();
                    let t = self.with_data(*b, neg);
                    self.accumulate(grads, *b, t);
                }
                let t = self.with_data(*a, sign);
                self.accumulate(grads, *a, t);
            }
            Op::CrossEntropy { p, labels, eps } => {
                let pv = self.value(*p);
                let (c, h, w) = pv.chw();
                let n = h * w;
                let k = gy.item() / T::of(n as f64);
                let mut dp = vec![T::zero(); c * n];
                for (i, &l) in labels.iter().enumerate() {
                    let idx = l as usize * n + i;
                    let q = pv.data()[idx];
                    if q > *eps {
                        dp[idx] = -k / q;
                    }
                }
                let t = self.with_data(*p, dp);
                self.accumulate(grads, *p, t);
            }
            Op::WeightedSum(terms) => {
                for &(v, c) in terms {
                    if self.rg(v) {
                        let t = gy.map(|g| g * c);
                        self.accumulate(grads, v, t);
                    }
                }
            }
        }
    }
}
