use crate::autodiff::{Params, Tensor};
use crate::error::{Error, Result};
use crate::par;
use crate::real::{gemm, Real};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Unary {
    Relu,
    Sigmoid,
    Softplus,
}

pub(crate) enum Op<T> {
    Leaf,
    Dense {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Conv2d {
        x: Var,
        k: Var,
        b: Var,
        kh: usize,
        kw: usize,
        cols: Vec<T>,
    },
    InstanceNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Unary {
        x: Var,
        kind: Unary,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Softmax {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    Mse {
        pred: Var,
        target: Vec<T>,
    },
    WeightedSum {
        x: Var,
        weights: Vec<T>,
    },
    Downsample2(Var),
    Upsample2(Var),
    Concat {
        parts: Vec<Var>,
        outer: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
        end: usize,
    },
    GatherRows {
        x: Var,
        idx: Vec<usize>,
    },
    ScatterStack {
        src: Var,
        targets: Vec<usize>,
        hw: usize,
    },
    Fuse {
        mask: Var,
        stack: Var,
        layers: usize,
        channels: usize,
        per_channel: bool,
    },
    SparseLinear {
        src: Var,
        offsets: Vec<usize>,
        entries: Vec<(usize, T)>,
    },
    Composite {
        alpha: Var,
        color: Var,
        groups: Vec<(usize, usize)>,
    },
    AlphaFromDensity {
        sigma: Var,
        delta: Vec<T>,
    },
    ReflectPad {
        x: Var,
        top: usize,
        left: usize,
    },
    Crop {
        x: Var,
        top: usize,
        left: usize,
    },
    Reshape(Var),
    GradScale {
        x: Var,
        factor: T,
    },
}

/// Reverse-mode tape. Nodes are appended in evaluation order; `backward`
/// walks them in reverse.
pub struct Graph<T: Real> {
    values: Vec<Tensor<T>>,
    grads: Vec<Option<Vec<T>>>,
    ops: Vec<Op<T>>,
    requires: Vec<bool>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Graph leaves for every tensor of a [`Params`] store, indexed by param id.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: crate::autodiff::ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl std::ops::Index<crate::autodiff::ParamId> for Bound {
    type Output = Var;
    fn index(&self, id: crate::autodiff::ParamId) -> &Var {
        &self.vars[id.0]
    }
}

fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

fn softplus<T: Real>(v: T) -> T {
    // log(1 + e^v) without overflow.
    v.max(T::zero()) + (-v.abs()).exp().ln_1p()
}

fn grad_slot<'a, T: Real>(
    grads: &'a mut [Option<Vec<T>>],
    values: &[Tensor<T>],
    requires: &[bool],
    v: Var,
) -> Option<&'a mut Vec<T>> {
    if !requires[v.0] {
        return None;
    }
    let n = values[v.0].len();
    Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); n]))
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += *s;
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            values: Vec::new(),
            grads: Vec::new(),
            ops: Vec::new(),
            requires: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires: bool) -> Var {
        self.values.push(value);
        self.grads.push(None);
        self.ops.push(op);
        self.requires.push(requires);
        Var(self.values.len() - 1)
    }

    fn any_requires(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.requires[v.0])
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Differentiable leaf.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn bind(&mut self, params: &Params<T>) -> Bound {
        let vars = params.tensors().iter().map(|t| self.leaf(t.clone())).collect();
        Bound { vars }
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.values[v.0].shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads[v.0].take()
    }

    // ---------------------------------------------------------------- ops

    /// `x[M, in] · w[in, out] + b[out]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
            return Err(Error::shape(format!("dense: x {xs:?} vs weight {ws:?}")));
        }
        let (m, k, n) = (xs[0], xs[1], ws[1]);
        let mut out = vec![T::zero(); m * n];
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.shape() != [n] {
                return Err(Error::shape(format!("dense: bias {:?}, want [{n}]", bv.shape())));
            }
            for row in out.chunks_mut(n) {
                row.copy_from_slice(bv.data());
            }
        }
        gemm(m, k, n, self.value(x).data(), false, self.value(w).data(), false, T::one(), &mut out);
        let req = self.any_requires(&[x, w]) || b.is_some_and(|b| self.requires[b.0]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::Dense { x, w, b }, req))
    }

    /// Same-size cross-correlation of `x[Cin, H, W]` with `k[Cout, Cin, kh, kw]`.
    pub fn conv2d(&mut self, x: Var, k: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ks = self.shape(k).to_vec();
        if xs.len() != 3 || ks.len() != 4 || ks[1] != xs[0] {
            return Err(Error::shape(format!("conv2d: input {xs:?} vs kernels {ks:?}")));
        }
        let (cin, h, w) = (xs[0], xs[1], xs[2]);
        let (cout, kh, kw) = (ks[0], ks[2], ks[3]);
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::shape("conv2d: kernel sides must be odd"));
        }
        if self.shape(b) != [cout] {
            return Err(Error::shape(format!("conv2d: bias {:?}, want [{cout}]", self.shape(b))));
        }
        let hw = h * w;
        let ckk = cin * kh * kw;
        let mut cols = vec![T::zero(); ckk * hw];
        let xv = self.value(x).data();
        let (ry, rx) = ((kh / 2) as isize, (kw / 2) as isize);
        par::for_each_chunk_mut(&mut cols, hw, |row, dst| {
            let c = row / (kh * kw);
            let dy = (row / kw % kh) as isize - ry;
            let dx = (row % kw) as isize - rx;
            let src = &xv[c * hw..(c + 1) * hw];
            for y in 0..h {
                let sy = y as isize + dy;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                let srow = &src[sy as usize * w..(sy as usize + 1) * w];
                let drow = &mut dst[y * w..(y + 1) * w];
                let x0 = (-dx).max(0) as usize;
                let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                for xx in x0..x1 {
                    drow[xx] = srow[(xx as isize + dx) as usize];
                }
            }
        });
        let mut out = vec![T::zero(); cout * hw];
        let bv = self.value(b).data();
        for (o, row) in out.chunks_mut(hw).enumerate() {
            row.fill(bv[o]);
        }
        gemm(cout, ckk, hw, self.value(k).data(), false, &cols, false, T::one(), &mut out);
        let req = self.any_requires(&[x, k, b]);
        let cols = if self.requires[x.0] || self.requires[k.0] { cols } else { Vec::new() };
        Ok(self.push(
            Tensor::new(vec![cout, h, w], out)?,
            Op::Conv2d { x, k, b, kh, kw, cols },
            req,
        ))
    }

    /// Per-channel spatial standardization of `x[C, H, W]` followed by an affine map.
    pub fn instance_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 {
            return Err(Error::shape(format!("instance_norm: input {xs:?}")));
        }
        let (c, hw) = (xs[0], xs[1] * xs[2]);
        if hw < 2 {
            return Err(Error::shape("instance_norm: spatial extent must be at least 2"));
        }
        if self.shape(gain) != [c] || self.shape(bias) != [c] {
            return Err(Error::shape("instance_norm: gain/bias must be [C]"));
        }
        let eps = T::lit(eps);
        let n = T::lit(hw as f64);
        let xv = self.value(x).data();
        let (g, bb) = (self.value(gain).data(), self.value(bias).data());
        let mut out = vec![T::zero(); c * hw];
        let mut xhat = vec![T::zero(); c * hw];
        let mut inv_std = vec![T::zero(); c];
        for ch in 0..c {
            let src = &xv[ch * hw..(ch + 1) * hw];
            let mean = src.iter().copied().sum::<T>() / n;
            let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let inv = T::one() / (var + eps).sqrt();
            inv_std[ch] = inv;
            for i in 0..hw {
                let xh = (src[i] - mean) * inv;
                xhat[ch * hw + i] = xh;
                out[ch * hw + i] = g[ch] * xh + bb[ch];
            }
        }
        let req = self.any_requires(&[x, gain, bias]);
        Ok(self.push(
            Tensor::new(xs, out)?,
            Op::InstanceNorm { x, gain, bias, xhat, inv_std },
            req,
        ))
    }

    fn unary(&mut self, x: Var, kind: Unary) -> Var {
        let t = self.value(x);
        let data = t
            .data()
            .iter()
            .map(|&v| match kind {
                Unary::Relu => v.max(T::zero()),
                Unary::Sigmoid => sigmoid(v),
                Unary::Softplus => softplus(v),
            })
            .collect();
        let out = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let req = self.requires[x.0];
        self.push(out, Op::Unary { x, kind }, req)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Sigmoid)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Softplus)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        let req = self.any_requires(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), req))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        let req = self.any_requires(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), req))
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(Error::shape(format!("softmax: axis {axis} for shape {s:?}")));
        }
        let outer: usize = s[..axis].iter().product();
        let len = s[axis];
        let inner: usize = s[axis + 1..].iter().product();
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); xv.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * len + j) * inner + i;
                let mx = (0..len).map(|j| xv[at(j)]).fold(T::neg_infinity(), T::max);
                let mut sum = T::zero();
                for j in 0..len {
                    let e = (xv[at(j)] - mx).exp();
                    out[at(j)] = e;
                    sum += e;
                }
                for j in 0..len {
                    out[at(j)] /= sum;
                }
            }
        }
        let req = self.requires[x.0];
        Ok(self.push(Tensor::new(s, out)?, Op::Softmax { x, outer, len, inner }, req))
    }

    /// Mean squared error against a constant target; returns a scalar.
    pub fn mse(&mut self, pred: Var, target: &[T]) -> Result<Var> {
        let p = self.value(pred).data();
        if p.len() != target.len() {
            return Err(Error::shape(format!("mse: {} vs {} values", p.len(), target.len())));
        }
        let n = T::lit(p.len().max(1) as f64);
        let loss = p.iter().zip(target).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>() / n;
        let req = self.requires[pred.0];
        Ok(self.push(Tensor::scalar(loss), Op::Mse { pred, target: target.to_vec() }, req))
    }

    /// `Σ x_i w_i` with constant weights; returns a scalar.
    pub fn weighted_sum(&mut self, x: Var, weights: &[T]) -> Result<Var> {
        let xv = self.value(x).data();
        if xv.len() != weights.len() {
            return Err(Error::shape("weighted_sum: length mismatch"));
        }
        let s = xv.iter().zip(weights).map(|(&a, &b)| a * b).sum::<T>();
        let req = self.requires[x.0];
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum { x, weights: weights.to_vec() }, req))
    }

    fn chw(&self, x: Var, what: &str) -> Result<(usize, usize, usize)> {
        match *self.shape(x) {
            [c, h, w] => Ok((c, h, w)),
            ref s => Err(Error::shape(format!("{what}: expected [C, H, W], got {s:?}"))),
        }
    }

    /// Stride-2 2x2 average pooling.
    pub fn downsample2(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = self.chw(x, "downsample2")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape(format!("downsample2: odd spatial size {h}x{w}")));
        }
        let (oh, ow) = (h / 2, w / 2);
        let xv = self.value(x).data();
        let q = T::lit(0.25);
        let mut out = vec![T::zero(); c * oh * ow];
        for ch in 0..c {
            for y in 0..oh {
                for xx in 0..ow {
                    let base = ch * h * w + 2 * y * w + 2 * xx;
                    out[(ch * oh + y) * ow + xx] =
                        (xv[base] + xv[base + 1] + xv[base + w] + xv[base + w + 1]) * q;
                }
            }
        }
        let req = self.requires[x.0];
        Ok(self.push(Tensor::new(vec![c, oh, ow], out)?, Op::Downsample2(x), req))
    }

    /// Nearest-neighbor 2x upsampling.
    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = self.chw(x, "upsample2")?;
        let (oh, ow) = (2 * h, 2 * w);
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); c * oh * ow];
        for ch in 0..c {
            for y in 0..oh {
                for xx in 0..ow {
                    out[(ch * oh + y) * ow + xx] = xv[(ch * h + y / 2) * w + xx / 2];
                }
            }
        }
        let req = self.requires[x.0];
        Ok(self.push(Tensor::new(vec![c, oh, ow], out)?, Op::Upsample2(x), req))
    }

    /// Concatenation along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(*parts.first().ok_or_else(|| Error::shape("concat: no inputs"))?).to_vec();
        if axis >= first.len() {
            return Err(Error::shape("concat: axis out of range"));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len()
                || s.iter().zip(&first).enumerate().any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(Error::shape(format!("concat: {s:?} vs {first:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let n = self.shape(p)[axis] * inner;
                out.extend_from_slice(&self.value(p).data()[o * n..(o + 1) * n]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let req = self.any_requires(parts);
        Ok(self.push(Tensor::new(shape, out)?, Op::Concat { parts: parts.to_vec(), outer }, req))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = match *self.shape(x) {
            [m, n] => (m, n),
            ref s => return Err(Error::shape(format!("slice_cols: {s:?}"))),
        };
        if start >= end || end > n {
            return Err(Error::shape("slice_cols: bad range"));
        }
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(m * (end - start));
        for r in 0..m {
            out.extend_from_slice(&xv[r * n + start..r * n + end]);
        }
        let req = self.requires[x.0];
        Ok(self.push(Tensor::new(vec![m, end - start], out)?, Op::SliceCols { x, start, end }, req))
    }

    /// `out[i] = x[idx[i]]` over rows of a matrix.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (n, c) = match *self.shape(x) {
            [n, c] => (n, c),
            ref s => return Err(Error::shape(format!("gather_rows: {s:?}"))),
        };
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::invalid(format!("gather_rows: index {bad} out of {n} rows")));
        }
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            out.extend_from_slice(&xv[i * c..(i + 1) * c]);
        }
        let req = self.requires[x.0];
        Ok(self.push(Tensor::new(vec![idx.len(), c], out)?, Op::GatherRows { x, idx: idx.to_vec() }, req))
    }

    /// Scatters rows of `src[M, C]` into a `[layers * C, H, W]` stack; row `m`
    /// lands at flat target `layer * H * W + pixel`. Untouched cells are zero.
    pub fn scatter_stack(
        &mut self,
        src: Var,
        targets: &[usize],
        layers: usize,
        h: usize,
        w: usize,
    ) -> Result<Var> {
        let (m, c) = match *self.shape(src) {
            [m, c] => (m, c),
            ref s => return Err(Error::shape(format!("scatter_stack: {s:?}"))),
        };
        if targets.len() != m {
            return Err(Error::shape("scatter_stack: one target per row required"));
        }
        let hw = h * w;
        let mut seen = vec![false; layers * hw];
        let sv = self.value(src).data();
        let mut out = vec![T::zero(); layers * c * hw];
        for (row, &t) in targets.iter().enumerate() {
            if t >= layers * hw {
                return Err(Error::invalid(format!("scatter_stack: target {t} out of range")));
            }
            if std::mem::replace(&mut seen[t], true) {
                return Err(Error::invalid(format!("scatter_stack: duplicate target {t}")));
            }
            let (layer, pix) = (t / hw, t % hw);
            for ch in 0..c {
                out[(layer * c + ch) * hw + pix] = sv[row * c + ch];
            }
        }
        let req = self.requires[src.0];
        Ok(self.push(
            Tensor::new(vec![layers * c, h, w], out)?,
            Op::ScatterStack { src, targets: targets.to_vec(), hw },
            req,
        ))
    }

    /// `fused[c, p] = Σ_k mask[k, p] · stack[k·C + c, p]`; with a `[K·C, H, W]`
    /// mask the weights are per channel instead.
    pub fn fuse(&mut self, mask: Var, stack: Var, layers: usize) -> Result<Var> {
        let (kc, h, w) = self.chw(stack, "fuse")?;
        let (mk, mh, mw) = self.chw(mask, "fuse")?;
        if layers == 0 || kc % layers != 0 || (mh, mw) != (h, w) {
            return Err(Error::shape("fuse: stack/mask disagree"));
        }
        let c = kc / layers;
        let per_channel = match mk {
            m if m == layers => false,
            m if m == kc => true,
            _ => return Err(Error::shape(format!("fuse: mask has {mk} channels, want {layers} or {kc}"))),
        };
        let hw = h * w;
        let (mv, sv) = (self.value(mask).data(), self.value(stack).data());
        let mut out = vec![T::zero(); c * hw];
        for k in 0..layers {
            for ch in 0..c {
                let mrow = if per_channel { (k * c + ch) * hw } else { k * hw };
                let srow = (k * c + ch) * hw;
                let orow = &mut out[ch * hw..(ch + 1) * hw];
                for p in 0..hw {
                    orow[p] += mv[mrow + p] * sv[srow + p];
                }
            }
        }
        let req = self.any_requires(&[mask, stack]);
        Ok(self.push(
            Tensor::new(vec![c, h, w], out)?,
            Op::Fuse { mask, stack, layers, channels: c, per_channel },
            req,
        ))
    }

    /// `out[r] = Σ_j weight_rj · src_flat[index_rj]`; `rows[r]` lists `(index, weight)`.
    pub fn sparse_linear(&mut self, src: Var, rows: &[Vec<(usize, T)>], shape: Vec<usize>) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != rows.len() {
            return Err(Error::shape("sparse_linear: shape/rows mismatch"));
        }
        let sv = self.value(src).data();
        let mut offsets = Vec::with_capacity(rows.len() + 1);
        let mut entries = Vec::new();
        offsets.push(0);
        let mut out = Vec::with_capacity(n);
        for r in rows {
            let mut acc = T::zero();
            for &(i, wgt) in r {
                if i >= sv.len() {
                    return Err(Error::invalid("sparse_linear: index out of range"));
                }
                acc += wgt * sv[i];
                entries.push((i, wgt));
            }
            out.push(acc);
            offsets.push(entries.len());
        }
        let req = self.requires[src.0];
        Ok(self.push(Tensor::new(shape, out)?, Op::SparseLinear { src, offsets, entries }, req))
    }

    /// Front-to-back compositing per group: `out[g] = Σ_i α_i Π_{j<i}(1-α_j) color_i`
    /// over rows `start..start+len` of `alpha[M]` / `color[M, C]`.
    pub fn composite(&mut self, alpha: Var, color: Var, groups: &[(usize, usize)]) -> Result<Var> {
        let (m, c) = match *self.shape(color) {
            [m, c] => (m, c),
            ref s => return Err(Error::shape(format!("composite: color {s:?}"))),
        };
        if self.value(alpha).len() != m {
            return Err(Error::shape("composite: one alpha per color row"));
        }
        if groups.iter().any(|&(s, l)| s + l > m) {
            return Err(Error::invalid("composite: group out of range"));
        }
        let (av, cv) = (self.value(alpha).data(), self.value(color).data());
        let mut out = vec![T::zero(); groups.len() * c];
        for (g, &(s, l)) in groups.iter().enumerate() {
            let mut trans = T::one();
            for i in s..s + l {
                let wgt = av[i] * trans;
                for ch in 0..c {
                    out[g * c + ch] += wgt * cv[i * c + ch];
                }
                trans *= T::one() - av[i];
            }
        }
        let req = self.any_requires(&[alpha, color]);
        Ok(self.push(
            Tensor::new(vec![groups.len(), c], out)?,
            Op::Composite { alpha, color, groups: groups.to_vec() },
            req,
        ))
    }

    /// `1 - exp(-σ δ)` with constant interval lengths.
    pub fn alpha_from_density(&mut self, sigma: Var, delta: &[T]) -> Result<Var> {
        let sv = self.value(sigma).data();
        if sv.len() != delta.len() {
            return Err(Error::shape("alpha_from_density: length mismatch"));
        }
        let out: Vec<T> = sv.iter().zip(delta).map(|(&s, &d)| T::one() - (-(s * d)).exp()).collect();
        let req = self.requires[sigma.0];
        Ok(self.push(
            Tensor::new(vec![out.len()], out)?,
            Op::AlphaFromDensity { sigma, delta: delta.to_vec() },
            req,
        ))
    }

    /// Reflection padding of `x[C, H, W]` (mirror without edge repeat; folds
    /// repeatedly when the pad exceeds the image).
    pub fn reflect_pad(&mut self, x: Var, top: usize, bottom: usize, left: usize, right: usize) -> Result<Var> {
        let (c, h, w) = self.chw(x, "reflect_pad")?;
        let (oh, ow) = (h + top + bottom, w + left + right);
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); c * oh * ow];
        for ch in 0..c {
            for y in 0..oh {
                let sy = reflect_index(y as isize - top as isize, h);
                for xx in 0..ow {
                    let sx = reflect_index(xx as isize - left as isize, w);
                    out[(ch * oh + y) * ow + xx] = xv[(ch * h + sy) * w + sx];
                }
            }
        }
        let req = self.requires[x.0];
        Ok(self.push(Tensor::new(vec![c, oh, ow], out)?, Op::ReflectPad { x, top, left }, req))
    }

    /// Spatial window `[top..top+h, left..left+w]` of `x[C, H, W]`.
    pub fn crop(&mut self, x: Var, top: usize, left: usize, h: usize, w: usize) -> Result<Var> {
        let (c, ih, iw) = self.chw(x, "crop")?;
        if top + h > ih || left + w > iw {
            return Err(Error::shape("crop: window outside input"));
        }
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(c * h * w);
        for ch in 0..c {
            for y in 0..h {
                let base = (ch * ih + top + y) * iw + left;
                out.extend_from_slice(&xv[base..base + w]);
            }
        }
        let req = self.requires[x.0];
        Ok(self.push(Tensor::new(vec![c, h, w], out)?, Op::Crop { x, top, left }, req))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(x).clone().reshaped(shape)?;
        let req = self.requires[x.0];
        Ok(self.push(t, Op::Reshape(x), req))
    }

    /// Identity whose backward multiplies the incoming gradient by `factor`.
    /// Only useful as a deliberately faulty fixture for gradient-check tests.
    #[doc(hidden)]
    pub fn identity_with_grad_scale(&mut self, x: Var, factor: f64) -> Var {
        let t = self.value(x).clone();
        let req = self.requires[x.0];
        self.push(t, Op::GradScale { x, factor: T::lit(factor) }, req)
    }

    // ----------------------------------------------------------- backward

    /// Backpropagates from a scalar output.
    pub fn backward(&mut self, out: Var) -> Result<()> {
        if self.value(out).len() != 1 {
            return Err(Error::shape("backward: output is not a scalar"));
        }
        self.backward_with(out, vec![T::one()])
    }

    /// Backpropagates an explicit output cotangent.
    pub fn backward_with(&mut self, out: Var, seed: Vec<T>) -> Result<()> {
        if seed.len() != self.value(out).len() {
            return Err(Error::shape("backward: seed shape"));
        }
        for g in self.grads.iter_mut() {
            *g = None;
        }
        self.grads[out.0] = Some(seed);
        for i in (0..=out.0).rev() {
            if !self.requires[i] {
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            self.backprop_node(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn backprop_node(&mut self, i: usize, g: &[T]) {
        let Graph { values, grads, ops, requires } = self;
        let values = &*values;
        let requires = &*requires;
        macro_rules! acc {
            ($v:expr) => {
                grad_slot(grads, values, requires, $v)
            };
        }
        let out = &values[i];
        match &ops[i] {
            Op::Leaf => {}
            Op::Dense { x, w, b } => {
                let (m, k) = (values[x.0].dim(0), values[x.0].dim(1));
                let n = values[w.0].dim(1);
                if let Some(dx) = acc!(*x) {
                    gemm(m, n, k, g, false, values[w.0].data(), true, T::one(), dx);
                }
                if let Some(dw) = acc!(*w) {
                    gemm(k, m, n, values[x.0].data(), true, g, false, T::one(), dw);
                }
                if let Some(b) = b {
                    if let Some(db) = acc!(*b) {
                        for row in g.chunks(n) {
                            add_into(db, row);
                        }
                    }
                }
            }
            Op::Conv2d { x, k, b, kh, kw, cols } => {
                let xs = values[x.0].shape();
                let (cin, h, w) = (xs[0], xs[1], xs[2]);
                let cout = values[k.0].dim(0);
                let (hw, ckk) = (h * w, cin * kh * kw);
                if let Some(db) = acc!(*b) {
                    for (o, row) in g.chunks(hw).enumerate() {
                        db[o] += row.iter().copied().sum::<T>();
                    }
                }
                if let Some(dk) = acc!(*k) {
                    gemm(cout, hw, ckk, g, false, cols, true, T::one(), dk);
                }
                if requires[x.0] {
                    let mut dcols = vec![T::zero(); ckk * hw];
                    gemm(ckk, cout, hw, values[k.0].data(), true, g, false, T::zero(), &mut dcols);
                    let dx = acc!(*x).unwrap();
                    let (ry, rx) = ((kh / 2) as isize, (kw / 2) as isize);
                    // col2im: channels are independent, so parallelize over them.
                    let kk = kh * kw;
                    par::for_each_chunk_mut(dx, hw, |c, dst| {
                        for r in 0..kk {
                            let row = c * kk + r;
                            let dy = (r / kw) as isize - ry;
                            let dxo = (r % kw) as isize - rx;
                            let src = &dcols[row * hw..(row + 1) * hw];
                            for y in 0..h {
                                let sy = y as isize + dy;
                                if sy < 0 || sy >= h as isize {
                                    continue;
                                }
                                let x0 = (-dxo).max(0) as usize;
                                let x1 = (w as isize - dxo).min(w as isize).max(0) as usize;
                                let drow = &mut dst[sy as usize * w..(sy as usize + 1) * w];
                                let srow = &src[y * w..(y + 1) * w];
                                for xx in x0..x1 {
                                    drow[(xx as isize + dxo) as usize] += srow[xx];
                                }
                            }
                        }
                    });
                }
            }
            Op::InstanceNorm { x, gain, bias, xhat, inv_std } => {
                let c = inv_std.len();
                let hw = xhat.len() / c;
                let n = T::lit(hw as f64);
                if let Some(db) = acc!(*bias) {
                    for ch in 0..c {
                        db[ch] += g[ch * hw..(ch + 1) * hw].iter().copied().sum::<T>();
                    }
                }
                if let Some(dg) = acc!(*gain) {
                    for ch in 0..c {
                        let r = ch * hw..(ch + 1) * hw;
                        dg[ch] += g[r.clone()].iter().zip(&xhat[r]).map(|(&a, &b)| a * b).sum::<T>();
                    }
                }
                if requires[x.0] {
                    let gv = values[gain.0].data().to_vec();
                    let dx = acc!(*x).unwrap();
                    for ch in 0..c {
                        let r = ch * hw..(ch + 1) * hw;
                        let gs = &g[r.clone()];
                        let xh = &xhat[r.clone()];
                        let sum_d = gs.iter().copied().sum::<T>() * gv[ch];
                        let sum_dx = gs.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>() * gv[ch];
                        let scale = inv_std[ch] / n;
                        for (j, d) in dx[r].iter_mut().enumerate() {
                            *d += scale * (n * gs[j] * gv[ch] - sum_d - xh[j] * sum_dx);
                        }
                    }
                }
            }
            Op::Unary { x, kind } => {
                let xv = values[x.0].data();
                let yv = out.data();
                if let Some(dx) = acc!(*x) {
                    for j in 0..dx.len() {
                        let d = match kind {
                            Unary::Relu => {
                                if xv[j] > T::zero() {
                                    g[j]
                                } else {
                                    T::zero()
                                }
                            }
                            Unary::Sigmoid => g[j] * yv[j] * (T::one() - yv[j]),
                            Unary::Softplus => g[j] * sigmoid(xv[j]),
                        };
                        dx[j] += d;
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(da) = acc!(*a) {
                    add_into(da, g);
                }
                if let Some(db) = acc!(*b) {
                    add_into(db, g);
                }
            }
            Op::Mul(a, b) => {
                if requires[a.0] {
                    let bv = values[b.0].data();
                    let da = acc!(*a).unwrap();
                    for j in 0..da.len() {
                        da[j] += g[j] * bv[j];
                    }
                }
                if requires[b.0] {
                    let av = values[a.0].data();
                    let db = acc!(*b).unwrap();
                    for j in 0..db.len() {
                        db[j] += g[j] * av[j];
                    }
                }
            }
            Op::Softmax { x, outer, len, inner } => {
                let y = out.data();
                if let Some(dx) = acc!(*x) {
                    for o in 0..*outer {
                        for ii in 0..*inner {
                            let at = |j: usize| (o * len + j) * inner + ii;
                            let dot = (0..*len).map(|j| g[at(j)] * y[at(j)]).sum::<T>();
                            for j in 0..*len {
                                dx[at(j)] += y[at(j)] * (g[at(j)] - dot);
                            }
                        }
                    }
                }
            }
            Op::Mse { pred, target } => {
                let pv = values[pred.0].data();
                let scale = g[0] * T::lit(2.0) / T::lit(pv.len().max(1) as f64);
                if let Some(dp) = acc!(*pred) {
                    for j in 0..dp.len() {
                        dp[j] += scale * (pv[j] - target[j]);
                    }
                }
            }
            Op::WeightedSum { x, weights } => {
                if let Some(dx) = acc!(*x) {
                    for j in 0..dx.len() {
                        dx[j] += g[0] * weights[j];
                    }
                }
            }
            Op::Downsample2(x) => {
                let s = values[x.0].shape();
                let (c, h, w) = (s[0], s[1], s[2]);
                let (oh, ow) = (h / 2, w / 2);
                let q = T::lit(0.25);
                if let Some(dx) = acc!(*x) {
                    for ch in 0..c {
                        for y in 0..oh {
                            for xx in 0..ow {
                                let d = g[(ch * oh + y) * ow + xx] * q;
                                let base = ch * h * w + 2 * y * w + 2 * xx;
                                dx[base] += d;
                                dx[base + 1] += d;
                                dx[base + w] += d;
                                dx[base + w + 1] += d;
                            }
                        }
                    }
                }
            }
            Op::Upsample2(x) => {
                let s = values[x.0].shape();
                let (c, h, w) = (s[0], s[1], s[2]);
                let (oh, ow) = (2 * h, 2 * w);
                if let Some(dx) = acc!(*x) {
                    for ch in 0..c {
                        for y in 0..oh {
                            for xx in 0..ow {
                                dx[(ch * h + y / 2) * w + xx / 2] += g[(ch * oh + y) * ow + xx];
                            }
                        }
                    }
                }
            }
            Op::Concat { parts, outer } => {
                let total: usize = g.len() / outer;
                let mut offset = 0;
                for p in parts {
                    let n = values[p.0].len() / outer;
                    if let Some(dp) = acc!(*p) {
                        for o in 0..*outer {
                            add_into(&mut dp[o * n..(o + 1) * n], &g[o * total + offset..o * total + offset + n]);
                        }
                    }
                    offset += n;
                }
            }
            Op::SliceCols { x, start, end } => {
                let n = values[x.0].dim(1);
                let width = end - start;
                if let Some(dx) = acc!(*x) {
                    for (r, grow) in g.chunks(width).enumerate() {
                        add_into(&mut dx[r * n + start..r * n + end], grow);
                    }
                }
            }
            Op::GatherRows { x, idx } => {
                let c = values[x.0].dim(1);
                if let Some(dx) = acc!(*x) {
                    for (r, &i) in idx.iter().enumerate() {
                        add_into(&mut dx[i * c..(i + 1) * c], &g[r * c..(r + 1) * c]);
                    }
                }
            }
            Op::ScatterStack { src, targets, hw } => {
                let c = values[src.0].dim(1);
                if let Some(ds) = acc!(*src) {
                    for (row, &t) in targets.iter().enumerate() {
                        let (layer, pix) = (t / hw, t % hw);
                        for ch in 0..c {
                            ds[row * c + ch] += g[(layer * c + ch) * hw + pix];
                        }
                    }
                }
            }
            Op::Fuse { mask, stack, layers, channels, per_channel } => {
                let c = *channels;
                let hw = g.len() / c;
                if requires[mask.0] {
                    let sv = values[stack.0].data();
                    let dm = acc!(*mask).unwrap();
                    for k in 0..*layers {
                        for ch in 0..c {
                            let mrow = if *per_channel { (k * c + ch) * hw } else { k * hw };
                            let srow = (k * c + ch) * hw;
                            for p in 0..hw {
                                dm[mrow + p] += g[ch * hw + p] * sv[srow + p];
                            }
                        }
                    }
                }
                if requires[stack.0] {
                    let mv = values[mask.0].data();
                    let ds = acc!(*stack).unwrap();
                    for k in 0..*layers {
                        for ch in 0..c {
                            let mrow = if *per_channel { (k * c + ch) * hw } else { k * hw };
                            let srow = (k * c + ch) * hw;
                            for p in 0..hw {
                                ds[srow + p] += g[ch * hw + p] * mv[mrow + p];
                            }
                        }
                    }
                }
            }
            Op::SparseLinear { src, offsets, entries } => {
                if let Some(ds) = acc!(*src) {
                    for r in 0..offsets.len() - 1 {
                        for &(j, wgt) in &entries[offsets[r]..offsets[r + 1]] {
                            ds[j] += g[r] * wgt;
                        }
                    }
                }
            }
            Op::Composite { alpha, color, groups } => {
                let c = values[color.0].dim(1);
                let (av, cv) = (values[alpha.0].data(), values[color.0].data());
                if requires[color.0] {
                    let dc = acc!(*color).unwrap();
                    for (gi, &(s, l)) in groups.iter().enumerate() {
                        let mut trans = T::one();
                        for i in s..s + l {
                            let wgt = av[i] * trans;
                            for ch in 0..c {
                                dc[i * c + ch] += wgt * g[gi * c + ch];
                            }
                            trans *= T::one() - av[i];
                        }
                    }
                }
                if requires[alpha.0] {
                    let da = acc!(*alpha).unwrap();
                    let mut behind = vec![T::zero(); c];
                    let mut trans_at = Vec::new();
                    for (gi, &(s, l)) in groups.iter().enumerate() {
                        trans_at.clear();
                        let mut trans = T::one();
                        for i in s..s + l {
                            trans_at.push(trans);
                            trans *= T::one() - av[i];
                        }
                        behind.fill(T::zero());
                        // d out / d α_i = T_i (c_i - S_i), S_i the composite of
                        // everything behind i.
                        for i in (s..s + l).rev() {
                            let mut d = T::zero();
                            for ch in 0..c {
                                d += g[gi * c + ch] * (cv[i * c + ch] - behind[ch]);
                            }
                            da[i] += trans_at[i - s] * d;
                            for ch in 0..c {
                                behind[ch] = av[i] * cv[i * c + ch] + (T::one() - av[i]) * behind[ch];
                            }
                        }
                    }
                }
            }
            Op::AlphaFromDensity { sigma, delta } => {
                let sv = values[sigma.0].data();
                if let Some(ds) = acc!(*sigma) {
                    for j in 0..ds.len() {
                        ds[j] += g[j] * delta[j] * (-(sv[j] * delta[j])).exp();
                    }
                }
            }
            Op::ReflectPad { x, top, left } => {
                let s = values[x.0].shape();
                let (c, h, w) = (s[0], s[1], s[2]);
                let (oh, ow) = (out.dim(1), out.dim(2));
                if let Some(dx) = acc!(*x) {
                    for ch in 0..c {
                        for y in 0..oh {
                            let sy = reflect_index(y as isize - *top as isize, h);
                            for xx in 0..ow {
                                let sx = reflect_index(xx as isize - *left as isize, w);
                                dx[(ch * h + sy) * w + sx] += g[(ch * oh + y) * ow + xx];
                            }
                        }
                    }
                }
            }
            Op::Crop { x, top, left } => {
                let s = values[x.0].shape();
                let (c, ih, iw) = (s[0], s[1], s[2]);
                let (h, w) = (out.dim(1), out.dim(2));
                if let Some(dx) = acc!(*x) {
                    for ch in 0..c {
                        for y in 0..h {
                            let base = (ch * ih + top + y) * iw + left;
                            add_into(&mut dx[base..base + w], &g[(ch * h + y) * w..(ch * h + y + 1) * w]);
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(dx) = acc!(*x) {
                    add_into(dx, g);
                }
            }
            Op::GradScale { x, factor } => {
                if let Some(dx) = acc!(*x) {
                    for j in 0..dx.len() {
                        dx[j] += g[j] * *factor;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Vec<usize>, v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn scalar_dense_chain_rule() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(vec![1, 1], &[2.0]));
        let w = g.leaf(t(vec![1, 1], &[3.0]));
        let b = g.leaf(t(vec![1], &[1.0]));
        let y = g.dense(x, w, Some(b)).unwrap();
        assert_eq!(g.value(y).data(), &[7.0]);
        let s = g.weighted_sum(y, &[1.0]).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(w).unwrap(), &[2.0]);
        assert_eq!(g.grad(x).unwrap(), &[3.0]);
        assert_eq!(g.grad(b).unwrap(), &[1.0]);
    }

    #[test]
    fn identity_weight_dense() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(vec![2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let w = g.constant(t(vec![3, 3], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]));
        let b = g.constant(Tensor::zeros(vec![3]));
        let y = g.dense(x, w, Some(b)).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());
        let bad = g.constant(Tensor::zeros(vec![2, 2]));
        assert!(matches!(g.dense(x, bad, None), Err(Error::Shape(_))));
    }

    #[test]
    fn delta_kernel_is_identity() {
        let mut g = Graph::<f64>::new();
        let data: Vec<f64> = (0..2 * 4 * 5).map(|i| i as f64 * 0.1 - 1.0).collect();
        let x = g.constant(t(vec![2, 4, 5], &data));
        let mut k = vec![0.0; 2 * 2 * 9];
        k[4] = 1.0; // out 0 <- in 0 center
        k[(2 + 1) * 9 + 4] = 1.0; // out 1 <- in 1 center
        let k = g.constant(t(vec![2, 2, 3, 3], &k));
        let b = g.constant(Tensor::zeros(vec![2]));
        let y = g.conv2d(x, k, b).unwrap();
        assert_eq!(g.value(y).data(), &data[..]);
        let k2 = g.constant(Tensor::zeros(vec![2, 2, 2, 2]));
        assert!(g.conv2d(x, k2, b).is_err());
    }

    #[test]
    fn softmax_equal_entries_and_normalization() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(vec![4, 2], &[3.0; 8]));
        let y = g.softmax(x, 0).unwrap();
        assert!(g.value(y).data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let x = g.constant(t(vec![2, 3], &[1000.0, -1000.0, 0.0, 1.0, 2.0, 3.0]));
        let y = g.softmax(x, 1).unwrap();
        let v = g.value(y).data();
        assert!(v.iter().all(|p| p.is_finite() && *p >= 0.0));
        assert!((v[0] + v[1] + v[2] - 1.0).abs() < 1e-12);
        assert!((v[3] + v[4] + v[5] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mse_of_identical_is_zero_with_zero_grad() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(vec![3], &[0.1, 0.2, 0.3]));
        let l = g.mse(x, &[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(g.value(l).data(), &[0.0]);
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn up_down_sampling_of_constants() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::full(vec![2, 4, 6], 0.7));
        let d = g.downsample2(x).unwrap();
        assert_eq!(g.shape(d), &[2, 2, 3]);
        let u = g.upsample2(d).unwrap();
        assert_eq!(g.value(u), g.value(x));
        let odd = g.constant(Tensor::zeros(vec![1, 3, 2]));
        assert!(g.downsample2(odd).is_err());
    }

    #[test]
    fn instance_norm_statistics() {
        let mut g = Graph::<f64>::new();
        let data: Vec<f64> = (0..3 * 16).map(|i| ((i * 7919) % 13) as f64).collect();
        let x = g.constant(t(vec![3, 4, 4], &data));
        let one = g.constant(Tensor::full(vec![3], 1.0));
        let zero = g.constant(Tensor::zeros(vec![3]));
        let y = g.instance_norm(x, one, zero, 1e-5).unwrap();
        for ch in g.value(y).data().chunks(16) {
            let mean = ch.iter().sum::<f64>() / 16.0;
            let var = ch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-4);
        }
        let c = g.constant(Tensor::full(vec![3, 2, 2], 5.0));
        let bias = g.constant(t(vec![3], &[0.5, -1.0, 2.0]));
        let y = g.instance_norm(c, one, bias, 1e-5).unwrap();
        assert_eq!(&g.value(y).data()[..4], &[0.5; 4]);
        let tiny = g.constant(Tensor::zeros(vec![3, 1, 1]));
        assert!(g.instance_norm(tiny, one, zero, 1e-5).is_err());
    }

    #[test]
    fn scatter_rejects_duplicates() {
        let mut g = Graph::<f64>::new();
        let s = g.constant(Tensor::zeros(vec![2, 3]));
        assert!(g.scatter_stack(s, &[1, 1], 2, 2, 2).is_err());
        assert!(g.scatter_stack(s, &[1, 8], 2, 2, 2).is_err());
        assert!(g.scatter_stack(s, &[1, 7], 2, 2, 2).is_ok());
    }

    #[test]
    fn reflect_pad_values() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(vec![1, 1, 3], &[1.0, 2.0, 3.0]));
        let y = g.reflect_pad(x, 0, 0, 2, 3).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, 2.0, 1.0, 2.0, 3.0, 2.0, 1.0, 2.0]);
        let c = g.crop(y, 0, 2, 1, 3).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 2.0, 3.0]);
    }
}
