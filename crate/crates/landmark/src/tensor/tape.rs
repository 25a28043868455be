use super::{matmul_raw, split_axis, ParamId, ParamStore, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddBias(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Reshape(Var),
    Transpose(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    MeanPool(Var),
    ChannelScale(Var, Var),
    Gather { table: Var, rows: Vec<usize> },
    Conv2d { x: Var, kernels: Var, bias: Option<Var>, stride: usize, padding: usize },
    Softmax { x: Var, axis: usize },
    LayerNorm { x: Var, gain: Var, bias: Var, axis: usize, xhat: Vec<f64>, inv_std: Vec<f64> },
    Sum(Var),
    Mean(Var),
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Reverse-mode computation record.
///
/// Operations are appended in evaluation order; [`Tape::backward`] visits
/// them in exactly the reverse order. A tape is single-threaded; run one
/// tape per scene and merge the parameter gradients explicitly.
#[derive(Debug)]
pub struct Tape<'s> {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    store: Option<&'s ParamStore>,
    bound: Vec<Option<Var>>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'s> Tape<'s> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            store: None,
            bound: Vec::new(),
        }
    }

    /// A tape that can bind parameters from `store` on demand.
    pub fn with_params(store: &'s ParamStore) -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            store: Some(store),
            bound: vec![None; store.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
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

    /// Records a trainable leaf.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records a constant: no gradient is ever accumulated for it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Binds a stored parameter as a trainable leaf, once per tape.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let store = self.store.expect("tape has no parameter store");
        let v = self.leaf(store.get(id).clone());
        self.bound[id.0] = Some(v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last `backward` call with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradients of every bound parameter, in binding order.
    pub fn param_grads(&self) -> Vec<(ParamId, Vec<f64>)> {
        let mut out = Vec::new();
        for (i, b) in self.bound.iter().enumerate() {
            if let Some(v) = b {
                let g = self
                    .grad(*v)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; self.value(*v).len()]);
                out.push((ParamId(i), g));
            }
        }
        out
    }

    /// Parameters bound on this tape.
    pub fn bound_params(&self) -> Vec<ParamId> {
        self.bound
            .iter()
            .enumerate()
            .filter(|(_, b)| b.is_some())
            .map(|(i, _)| ParamId(i))
            .collect()
    }

    // ----- forward operations -------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], data)?, Op::MatMul(a, b), rg))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(TensorError::shape(name, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|x| x * c).collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, c), rg)
    }

    /// Adds `bias` (length = last dimension of `x`) to every trailing slice.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let last = *tx.shape().last().unwrap_or(&1);
        if tb.rank() != 1 || tb.len() != last || tx.rank() == 0 {
            return Err(TensorError::shape("add_bias", tx.shape(), tb.shape()));
        }
        let b = tb.data();
        let data = tx
            .data()
            .chunks(last)
            .flat_map(|row| row.iter().zip(b).map(|(v, bv)| v + bv))
            .collect();
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(value, Op::AddBias(x, bias), rg))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|x| f(*x)).collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(a);
        self.push(value, op, rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var, TensorError> {
        let value = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let t = self.value(a);
        if t.rank() != 2 {
            return Err(TensorError::invalid("transpose", "expects a 2-D tensor"));
        }
        let (m, n) = (t.shape()[0], t.shape()[1]);
        let src = t.data();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src[i * n + j];
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(vec![n, m], data)?, Op::Transpose(a), rg))
    }

    /// Joins tensors along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, TensorError> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::invalid("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(TensorError::invalid("concat", format!("axis {axis} out of range")));
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(TensorError::shape("concat", &base, s));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let t = self.value(*p);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let rg = parts.iter().any(|p| self.rg(*p));
        Ok(self.push(
            Tensor::new(shape, data)?,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// The half-open range `start..end` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var, TensorError> {
        let t = self.value(x);
        if axis >= t.rank() || start >= end || end > t.shape()[axis] {
            return Err(TensorError::invalid(
                "slice",
                format!("range {start}..{end} on axis {axis} of {:?}", t.shape()),
            ));
        }
        let (outer, dim, inner) = split_axis(t.shape(), axis);
        let width = end - start;
        let mut data = Vec::with_capacity(outer * width * inner);
        for o in 0..outer {
            let base = o * dim * inner;
            data.extend_from_slice(&t.data()[base + start * inner..base + end * inner]);
        }
        let mut shape = t.shape().to_vec();
        shape[axis] = width;
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, data)?, Op::Slice { x, axis, start }, rg))
    }

    /// Global average over every axis after the first: `[c, ...] -> [c]`.
    pub fn mean_pool(&mut self, x: Var) -> Result<Var, TensorError> {
        let t = self.value(x);
        if t.rank() < 2 {
            return Err(TensorError::invalid("mean_pool", "expects a channel-first map"));
        }
        let c = t.shape()[0];
        let area = t.len() / c;
        let data = t
            .data()
            .chunks(area)
            .map(|ch| ch.iter().sum::<f64>() / area as f64)
            .collect();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![c], data)?, Op::MeanPool(x), rg))
    }

    /// Scales every channel `k` of a `[c, ...]` map by `weights[k]`.
    pub fn channel_scale(&mut self, x: Var, weights: Var) -> Result<Var, TensorError> {
        let (tx, tw) = (self.value(x), self.value(weights));
        if tx.rank() < 1 || tw.rank() != 1 || tx.shape()[0] != tw.len() {
            return Err(TensorError::shape("channel_scale", tx.shape(), tw.shape()));
        }
        let area = tx.len() / tw.len().max(1);
        let data = tx
            .data()
            .chunks(area.max(1))
            .zip(tw.data())
            .flat_map(|(ch, w)| ch.iter().map(move |v| v * w))
            .collect();
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        let rg = self.rg(x) || self.rg(weights);
        Ok(self.push(value, Op::ChannelScale(x, weights), rg))
    }

    /// Row lookup: `[rows.len(), d]` from a `[n, d]` table.
    pub fn gather_rows(&mut self, table: Var, rows: &[usize]) -> Result<Var, TensorError> {
        let t = self.value(table);
        if t.rank() != 2 {
            return Err(TensorError::invalid("gather_rows", "expects a 2-D table"));
        }
        let (n, d) = (t.shape()[0], t.shape()[1]);
        let mut data = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            if r >= n {
                return Err(TensorError::Index { index: r, len: n });
            }
            data.extend_from_slice(t.row(r));
        }
        let rg = self.rg(table);
        Ok(self.push(
            Tensor::new(vec![rows.len(), d], data)?,
            Op::Gather {
                table,
                rows: rows.to_vec(),
            },
            rg,
        ))
    }

    /// Cross-correlation of a `[c_in, h, w]` map with `[c_out, c_in, kh, kw]`
    /// kernels and optional per-output-channel bias.
    pub fn conv2d(
        &mut self,
        x: Var,
        kernels: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var, TensorError> {
        let (tx, tk) = (self.value(x), self.value(kernels));
        let (xs, ks) = (tx.shape(), tk.shape());
        if xs.len() != 3 || ks.len() != 4 || xs[0] != ks[1] {
            return Err(TensorError::shape("conv2d", xs, ks));
        }
        if stride == 0 {
            return Err(TensorError::invalid("conv2d", "stride must be positive"));
        }
        let (cin, h, w) = (xs[0], xs[1], xs[2]);
        let (cout, kh, kw) = (ks[0], ks[2], ks[3]);
        if kh > h + 2 * padding || kw > w + 2 * padding {
            return Err(TensorError::shape("conv2d", xs, ks));
        }
        if let Some(b) = bias {
            let bs = self.shape(b);
            if bs != [cout] {
                return Err(TensorError::shape("conv2d bias", ks, bs));
            }
        }
        let oh = (h + 2 * padding - kh) / stride + 1;
        let ow = (w + 2 * padding - kw) / stride + 1;
        let geom = ConvGeometry {
            cin,
            h,
            w,
            kh,
            kw,
            oh,
            ow,
            stride,
            padding,
        };
        let cols = geom.im2col(tx.data());
        let mut out = super::matmul_raw(tk.data(), &cols, cout, geom.rows(), oh * ow);
        if let Some(b) = bias {
            for (plane, b0) in out.chunks_mut(oh * ow).zip(self.value(b).data()) {
                plane.iter_mut().for_each(|v| *v += b0);
            }
        }
        let rg = self.rg(x) || self.rg(kernels) || bias.is_some_and(|b| self.rg(b));
        Ok(self.push(
            Tensor::new(vec![cout, oh, ow], out)?,
            Op::Conv2d {
                x,
                kernels,
                bias,
                stride,
                padding,
            },
            rg,
        ))
    }

    /// Max-stabilized softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        let t = self.value(x);
        if axis >= t.rank() {
            return Err(TensorError::invalid("softmax", format!("axis {axis} out of range")));
        }
        let value = softmax_along(t, axis);
        let rg = self.rg(x);
        Ok(self.push(value, Op::Softmax { x, axis }, rg))
    }

    /// Normalizes each slice along `axis` to zero mean and unit variance,
    /// then applies per-position `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, axis: usize, eps: f64) -> Result<Var, TensorError> {
        if eps <= 0.0 {
            return Err(TensorError::invalid("layer_norm", "eps must be positive"));
        }
        let t = self.value(x);
        if axis >= t.rank() {
            return Err(TensorError::invalid("layer_norm", format!("axis {axis} out of range")));
        }
        let (outer, n, inner) = split_axis(t.shape(), axis);
        let (g, b) = (self.value(gain), self.value(bias));
        if g.shape() != [n] || b.shape() != [n] {
            return Err(TensorError::shape("layer_norm", t.shape(), g.shape()));
        }
        let src = t.data();
        let mut xhat = vec![0.0; src.len()];
        let mut inv_std = vec![0.0; outer * inner];
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |a: usize| (o * n + a) * inner + i;
                let mean = (0..n).map(|a| src[idx(a)]).sum::<f64>() / n as f64;
                let var = (0..n).map(|a| (src[idx(a)] - mean).powi(2)).sum::<f64>() / n as f64;
                let is = 1.0 / (var + eps).sqrt();
                inv_std[o * inner + i] = is;
                for a in 0..n {
                    let xh = (src[idx(a)] - mean) * is;
                    xhat[idx(a)] = xh;
                    out[idx(a)] = xh * g.data()[a] + b.data()[a];
                }
            }
        }
        let value = Tensor::new(t.shape().to_vec(), out)?;
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                axis,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// Mean softmax cross-entropy of `[n, k]` logits against class targets.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var, TensorError> {
        let t = self.value(logits);
        if t.rank() != 2 || t.shape()[0] != targets.len() {
            return Err(TensorError::shape("cross_entropy", t.shape(), &[targets.len()]));
        }
        let (n, k) = (t.shape()[0], t.shape()[1]);
        let probs = softmax_along(t, 1).into_data();
        let mut loss = 0.0;
        for (r, &y) in targets.iter().enumerate() {
            if y >= k {
                return Err(TensorError::Index { index: y, len: k });
            }
            let row = &t.data()[r * k..(r + 1) * k];
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            loss += lse - row[y];
        }
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss / n as f64),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Mean squared error against a constant target of the same shape.
    pub fn mse(&mut self, x: Var, target: Var) -> Result<Var, TensorError> {
        let d = self.sub(x, target)?;
        let sq = self.mul(d, d)?;
        Ok(self.mean(sq))
    }

    // ----- backward -------------------------------------------------------

    /// Back-propagates from the scalar `loss`, visiting every recorded
    /// operation in reverse order. Gradients of earlier calls are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::invalid("backward", "loss must be a scalar"));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        // every trainable leaf gets a buffer, zero when unreached
        for (i, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) && grads[i].is_none() {
                grads[i] = Some(vec![0.0; node.value.len()]);
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                acc(*a, &mut |ga| {
                    // g[m×n] · bᵀ[n×k]
                    for r in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for c in 0..n {
                                s += g[r * n + c] * tb.data()[p * n + c];
                            }
                            ga[r * k + p] += s;
                        }
                    }
                });
                acc(*b, &mut |gb| {
                    // aᵀ[k×m] · g[m×n]
                    for r in 0..m {
                        for p in 0..k {
                            let av = ta.data()[r * k + p];
                            if av == 0.0 {
                                continue;
                            }
                            for c in 0..n {
                                gb[p * n + c] += av * g[r * n + c];
                            }
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| gb.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let (da, db) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                acc(*a, &mut |ga| {
                    for ((x, gv), bv) in ga.iter_mut().zip(g).zip(db) {
                        *x += gv * bv;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((x, gv), av) in gb.iter_mut().zip(g).zip(da) {
                        *x += gv * av;
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += c * y)),
            Op::AddBias(x, b) => {
                acc(*x, &mut |gx| add_into(gx, g));
                let n = nodes[b.0].value.len();
                acc(*b, &mut |gb| {
                    for row in g.chunks(n) {
                        add_into(gb, row);
                    }
                });
            }
            Op::Relu(a) => acc(*a, &mut |ga| {
                for ((x, gv), o) in ga.iter_mut().zip(g).zip(out) {
                    if *o > 0.0 {
                        *x += gv;
                    }
                }
            }),
            Op::Sigmoid(a) => acc(*a, &mut |ga| {
                for ((x, gv), o) in ga.iter_mut().zip(g).zip(out) {
                    *x += gv * o * (1.0 - o);
                }
            }),
            Op::Reshape(a) => acc(*a, &mut |ga| add_into(ga, g)),
            Op::Transpose(a) => {
                let s = nodes[a.0].value.shape();
                let (m, n) = (s[0], s[1]);
                acc(*a, &mut |ga| {
                    for r in 0..m {
                        for c in 0..n {
                            ga[r * n + c] += g[c * m + r];
                        }
                    }
                });
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for p in parts {
                    let width = nodes[p.0].value.shape()[*axis];
                    let chunk = width * inner;
                    acc(*p, &mut |gp| {
                        for o in 0..outer {
                            let src = o * total * inner + offset * inner;
                            add_into(&mut gp[o * chunk..(o + 1) * chunk], &g[src..src + chunk]);
                        }
                    });
                    offset += width;
                }
            }
            Op::Slice { x, axis, start } => {
                let (outer, dim, inner) = split_axis(nodes[x.0].value.shape(), *axis);
                let width = node.value.shape()[*axis];
                acc(*x, &mut |gx| {
                    for o in 0..outer {
                        let dst = o * dim * inner + start * inner;
                        let src = o * width * inner;
                        add_into(&mut gx[dst..dst + width * inner], &g[src..src + width * inner]);
                    }
                });
            }
            Op::MeanPool(x) => {
                let c = node.value.len();
                let area = nodes[x.0].value.len() / c;
                acc(*x, &mut |gx| {
                    for (ch, gv) in gx.chunks_mut(area).zip(g) {
                        let v = gv / area as f64;
                        ch.iter_mut().for_each(|e| *e += v);
                    }
                });
            }
            Op::ChannelScale(x, w) => {
                let (tx, tw) = (&nodes[x.0].value, &nodes[w.0].value);
                let area = tx.len() / tw.len().max(1);
                acc(*x, &mut |gx| {
                    for ((gch, gin), wv) in gx.chunks_mut(area).zip(g.chunks(area)).zip(tw.data()) {
                        gch.iter_mut().zip(gin).for_each(|(a, b)| *a += b * wv);
                    }
                });
                acc(*w, &mut |gw| {
                    for ((gwv, gin), xch) in gw.iter_mut().zip(g.chunks(area)).zip(tx.data().chunks(area)) {
                        *gwv += gin.iter().zip(xch).map(|(a, b)| a * b).sum::<f64>();
                    }
                });
            }
            Op::Gather { table, rows } => {
                let d = nodes[table.0].value.shape()[1];
                acc(*table, &mut |gt| {
                    for (r, &row) in rows.iter().enumerate() {
                        add_into(&mut gt[row * d..(row + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                });
            }
            Op::Conv2d {
                x,
                kernels,
                bias,
                stride,
                padding,
            } => {
                let (tx, tk) = (&nodes[x.0].value, &nodes[kernels.0].value);
                let (cin, h, w) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
                let (cout, kh, kw) = (tk.shape()[0], tk.shape()[2], tk.shape()[3]);
                let (oh, ow) = (node.value.shape()[1], node.value.shape()[2]);
                let geom = ConvGeometry {
                    cin,
                    h,
                    w,
                    kh,
                    kw,
                    oh,
                    ow,
                    stride: *stride,
                    padding: *padding,
                };
                let (r, l) = (geom.rows(), oh * ow);
                let kd = tk.data();
                let gk = nodes[kernels.0].requires_grad.then(|| {
                    let cols = geom.im2col(tx.data());
                    let mut gk = vec![0.0; cout * r];
                    for co in 0..cout {
                        let grow = &g[co * l..(co + 1) * l];
                        for (ri, dst) in gk[co * r..(co + 1) * r].iter_mut().enumerate() {
                            *dst = grow.iter().zip(&cols[ri * l..(ri + 1) * l]).map(|(a, b)| a * b).sum();
                        }
                    }
                    gk
                });
                let gx = nodes[x.0].requires_grad.then(|| {
                    let mut gcols = vec![0.0; r * l];
                    for co in 0..cout {
                        let grow = &g[co * l..(co + 1) * l];
                        for ri in 0..r {
                            let kv = kd[co * r + ri];
                            if kv == 0.0 {
                                continue;
                            }
                            for (dst, gv) in gcols[ri * l..(ri + 1) * l].iter_mut().zip(grow) {
                                *dst += kv * gv;
                            }
                        }
                    }
                    geom.col2im(&gcols)
                });
                if let Some(gx) = gx {
                    acc(*x, &mut |dst| add_into(dst, &gx));
                }
                if let Some(gk) = gk {
                    acc(*kernels, &mut |dst| add_into(dst, &gk));
                }
                if let Some(b) = bias {
                    acc(*b, &mut |gb| {
                        for (co, plane) in g.chunks(oh * ow).enumerate() {
                            gb[co] += plane.iter().sum::<f64>();
                        }
                    });
                }
            }
            Op::Softmax { x, axis } => {
                let (outer, n, inner) = split_axis(node.value.shape(), *axis);
                acc(*x, &mut |gx| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |a: usize| (o * n + a) * inner + i;
                            let dot: f64 = (0..n).map(|a| g[idx(a)] * out[idx(a)]).sum();
                            for a in 0..n {
                                gx[idx(a)] += out[idx(a)] * (g[idx(a)] - dot);
                            }
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                axis,
                xhat,
                inv_std,
            } => {
                let (outer, n, inner) = split_axis(node.value.shape(), *axis);
                let gd = nodes[gain.0].value.data();
                acc(*x, &mut |gx| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |a: usize| (o * n + a) * inner + i;
                            let mut s1 = 0.0;
                            let mut s2 = 0.0;
                            for a in 0..n {
                                let gh = g[idx(a)] * gd[a];
                                s1 += gh;
                                s2 += gh * xhat[idx(a)];
                            }
                            let is = inv_std[o * inner + i];
                            for a in 0..n {
                                let gh = g[idx(a)] * gd[a];
                                gx[idx(a)] += is / n as f64 * (n as f64 * gh - s1 - xhat[idx(a)] * s2);
                            }
                        }
                    }
                });
                acc(*gain, &mut |gg| {
                    for o in 0..outer {
                        for a in 0..n {
                            for i in 0..inner {
                                let k = (o * n + a) * inner + i;
                                gg[a] += g[k] * xhat[k];
                            }
                        }
                    }
                });
                acc(*bias, &mut |gb| {
                    for o in 0..outer {
                        for a in 0..n {
                            for i in 0..inner {
                                gb[a] += g[(o * n + a) * inner + i];
                            }
                        }
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |gx| gx.iter_mut().for_each(|v| *v += g[0])),
            Op::Mean(x) => {
                let n = nodes[x.0].value.len() as f64;
                acc(*x, &mut |gx| gx.iter_mut().for_each(|v| *v += g[0] / n));
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let k = nodes[logits.0].value.shape()[1];
                let scale = g[0] / targets.len() as f64;
                acc(*logits, &mut |gl| {
                    for (r, &y) in targets.iter().enumerate() {
                        for c in 0..k {
                            let ind = if c == y { 1.0 } else { 0.0 };
                            gl[r * k + c] += scale * (probs[r * k + c] - ind);
                        }
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax of a plain tensor along `axis`, max-subtracted.
pub(crate) fn softmax_along(t: &Tensor, axis: usize) -> Tensor {
    let (outer, n, inner) = split_axis(t.shape(), axis);
    let src = t.data();
    let mut out = vec![0.0; src.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |a: usize| (o * n + a) * inner + i;
            let m = (0..n).map(|a| src[idx(a)]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for a in 0..n {
                let e = (src[idx(a)] - m).exp();
                out[idx(a)] = e;
                z += e;
            }
            for a in 0..n {
                out[idx(a)] /= z;
            }
        }
    }
    Tensor::new(t.shape().to_vec(), out).expect("same shape")
}

/// Index bookkeeping of a single-image convolution lowered to a matmul.
struct ConvGeometry {
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    padding: usize,
}

impl ConvGeometry {
    fn rows(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    /// Calls `f(row, column, input index)` for every in-bounds tap.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        for ci in 0..self.cin {
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (ci * self.kh + ky) * self.kw + kx;
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        for ox in 0..self.ow {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix >= 0 && ix < self.w as isize {
                                let xi = (ci * self.h + iy as usize) * self.w + ix as usize;
                                f(row, oy * self.ow + ox, xi);
                            }
                        }
                    }
                }
            }
        }
    }

    /// `[cin·kh·kw, oh·ow]` patch matrix; out-of-bounds taps read zero.
    fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let l = self.oh * self.ow;
        let mut cols = vec![0.0; self.rows() * l];
        self.for_each_tap(|r, c, xi| cols[r * l + c] = x[xi]);
        cols
    }

    /// Adjoint of `im2col`: scatters patch gradients back onto the input.
    fn col2im(&self, cols: &[f64]) -> Vec<f64> {
        let l = self.oh * self.ow;
        let mut x = vec![0.0; self.cin * self.h * self.w];
        self.for_each_tap(|r, c, xi| x[xi] += cols[r * l + c]);
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_arithmetic() {
        let mut tape = Tape::new();
        let i = tape.constant(Tensor::identity(2));
        let m = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let p = tape.matmul(i, m).unwrap();
        assert_eq!(tape.value(p).data(), &[1.0, 2.0, 3.0, 4.0]);

        let a = tape.constant(t(&[1, 2], &[1.0, 2.0]));
        let b = tape.constant(t(&[2, 1], &[3.0, 4.0]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(vec![2, 3]));
        let b = tape.constant(Tensor::zeros(vec![2, 3]));
        let err = tape.matmul(a, b).unwrap_err();
        assert_eq!(
            err,
            TensorError::Shape {
                op: "matmul",
                lhs: vec![2, 3],
                rhs: vec![2, 3]
            }
        );
        assert!(err.to_string().contains("[2, 3]"));
    }

    #[test]
    fn conv_identity_kernel_and_sum_kernel() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]));
        let k = tape.constant(t(&[1, 1, 1, 1], &[1.0]));
        let y = tape.conv2d(x, k, None, 1, 0).unwrap();
        assert_eq!(tape.value(y), tape.value(x));

        let ones = tape.constant(Tensor::full(vec![1, 2, 2], 1.0));
        let k = tape.constant(Tensor::full(vec![1, 1, 2, 2], 1.0));
        let y = tape.conv2d(ones, k, None, 1, 0).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 1, 1]);
        assert_eq!(tape.value(y).data(), &[4.0]);
    }

    #[test]
    fn conv_output_extent_and_oversized_kernel() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(vec![2, 5, 5]));
        let k = tape.constant(Tensor::zeros(vec![3, 2, 3, 3]));
        let y = tape.conv2d(x, k, None, 2, 1).unwrap();
        // floor((5 + 2 - 3) / 2) + 1 = 3
        assert_eq!(tape.value(y).shape(), &[3, 3, 3]);

        let big = tape.constant(Tensor::zeros(vec![3, 2, 6, 6]));
        assert!(tape.conv2d(x, big, None, 1, 0).is_err());
        assert!(tape.conv2d(x, big, None, 1, 1).is_ok());
    }

    #[test]
    fn softmax_symmetry_and_stabilization() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![0.0, 0.0, 0.0]));
        let s = tape.softmax(x, 0).unwrap();
        for v in tape.value(s).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let x = tape.constant(Tensor::vector(vec![1000.0, 0.0, 0.0]));
        let s = tape.softmax(x, 0).unwrap();
        let d = tape.value(s).data();
        assert!(d.iter().all(|v| v.is_finite()));
        assert!((d[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_cases() {
        let mut tape = Tape::new();
        let g = tape.constant(Tensor::full(vec![4], 1.0));
        let b = tape.constant(Tensor::zeros(vec![4]));
        let x = tape.constant(Tensor::full(vec![4], 7.5));
        let y = tape.layer_norm(x, g, b, 0, 1e-5).unwrap();
        assert!(tape.value(y).data().iter().all(|v| *v == 0.0));

        let g = tape.constant(Tensor::full(vec![2], 1.0));
        let b = tape.constant(Tensor::zeros(vec![2]));
        let x = tape.constant(Tensor::vector(vec![1.0, 3.0]));
        let y = tape.layer_norm(x, g, b, 0, 1e-12).unwrap();
        let d = tape.value(y).data();
        assert!((d[0] + 1.0).abs() < 1e-9 && (d[1] - 1.0).abs() < 1e-9);
        assert!(tape.layer_norm(x, g, b, 0, 0.0).is_err());
    }

    #[test]
    fn elementwise_suite() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::scalar(0.0));
        let s = tape.sigmoid(z);
        assert_eq!(tape.value(s).data(), &[0.5]);

        let map = tape.constant(Tensor::full(vec![3, 4, 4], 2.5));
        let p = tape.mean_pool(map).unwrap();
        assert_eq!(tape.value(p).data(), &[2.5, 2.5, 2.5]);

        let a = tape.constant(Tensor::zeros(vec![2, 3]));
        let b = tape.constant(Tensor::zeros(vec![3, 3]));
        assert!(tape.concat(&[a, b], 0).is_ok());
        assert!(tape.concat(&[a, b], 1).is_err());

        let r = tape.constant(Tensor::vector(vec![-1.0, 2.0]));
        let r = tape.relu(r);
        assert_eq!(tape.value(r).data(), &[0.0, 2.0]);
    }

    #[test]
    fn backward_populates_every_leaf() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let unused = tape.leaf(Tensor::vector(vec![5.0]));
        let c = tape.constant(Tensor::vector(vec![3.0, 4.0]));
        let m = tape.mul(a, c).unwrap();
        let s = tape.sum(m);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &[3.0, 4.0]);
        assert_eq!(tape.grad(unused).unwrap(), &[0.0]);
        assert!(tape.grad(c).is_none());
    }
}
