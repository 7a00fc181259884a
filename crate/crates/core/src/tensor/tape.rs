use super::kernels::{self, ConvGeom, Padding};
use super::{Element, Shape, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Batch-norm statistics source.
#[derive(Clone, Copy, Debug)]
pub enum BatchNormMode<'a, T> {
    /// Normalize with the batch's own per-channel statistics.
    Train { eps: T },
    /// Normalize with stored running statistics.
    Inference { mean: &'a [T], var: &'a [T], eps: T },
}

/// Per-channel statistics observed by a training-mode batch norm.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        k: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    Depthwise {
        x: Var,
        k: Var,
        geom: ConvGeom,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
    },
    Relu(Var),
    Relu6(Var),
    Sigmoid(Var),
    Softmax(Var),
    GlobalAvgPool {
        x: Var,
        n: usize,
        hw: usize,
        c: usize,
    },
    Dense {
        x: Var,
        w: Var,
        b: Var,
        n: usize,
        f: usize,
        k: usize,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    ScaleChannels {
        x: Var,
        s: Var,
        n: usize,
        hw: usize,
        c: usize,
    },
    Sum(Var),
    Scce {
        p: Var,
        labels: Vec<usize>,
        cols: usize,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Linear record of differentiable operations; [`Tape::backward`] replays it
/// in exact reverse order.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drop every recorded node. Outstanding [`Var`]s become invalid.
    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    /// Record a leaf; gradients flow to it iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let requires_grad = tensor.requires_grad();
        self.push(tensor, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, mut tensor: Tensor<T>) -> Var {
        tensor.set_requires_grad(false);
        self.leaf(tensor)
    }

    pub fn variable(&mut self, mut tensor: Tensor<T>) -> Var {
        tensor.set_requires_grad(true);
        self.leaf(tensor)
    }

    /// Move the most recently recorded value out and clear the tape.
    pub(crate) fn take_last(&mut self) -> Option<Tensor<T>> {
        let node = self.nodes.pop()?;
        self.nodes.clear();
        Some(node.value)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn record(
        &mut self,
        name: &str,
        dims: Vec<usize>,
        data: Vec<T>,
        op: Op<T>,
        inputs: &[Var],
    ) -> Result<Var> {
        let value = Tensor::new(dims, data)?;
        value.ensure_finite(name)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(value, op, requires_grad))
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        k: Var,
        b: Option<Var>,
        stride: usize,
        padding: Padding,
    ) -> Result<Var> {
        let (n, h, w, cin) = self.shape(x).nhwc("conv2d")?;
        let kd = self.shape(k).dims().to_vec();
        if kd.len() != 4 || kd[2] != cin {
            return Err(Error::shape("conv2d", self.shape(x).dims(), &kd));
        }
        let (kh, kw, cout) = (kd[0], kd[1], kd[3]);
        if let Some(b) = b {
            if self.shape(b).dims() != [cout] {
                return Err(Error::shape("conv2d bias", &kd, self.shape(b).dims()));
            }
        }
        let geom = ConvGeom::new(n, h, w, cin, kh, kw, cout, stride, padding)?;
        let data = kernels::conv2d(
            self.value(x).data(),
            self.value(k).data(),
            b.map(|b| self.value(b).data()),
            &geom,
        );
        let mut inputs = vec![x, k];
        inputs.extend(b);
        self.record(
            "conv2d",
            vec![n, geom.oh, geom.ow, cout],
            data,
            Op::Conv2d { x, k, b, geom },
            &inputs,
        )
    }

    pub fn depthwise_conv2d(
        &mut self,
        x: Var,
        k: Var,
        stride: usize,
        padding: Padding,
    ) -> Result<Var> {
        let (n, h, w, c) = self.shape(x).nhwc("depthwise_conv2d")?;
        let kd = self.shape(k).dims().to_vec();
        if kd.len() != 3 || kd[2] != c {
            return Err(Error::shape("depthwise_conv2d", self.shape(x).dims(), &kd));
        }
        let geom = ConvGeom::new(n, h, w, c, kd[0], kd[1], c, stride, padding)?;
        let data = kernels::depthwise_conv2d(self.value(x).data(), self.value(k).data(), &geom);
        self.record(
            "depthwise_conv2d",
            vec![n, geom.oh, geom.ow, c],
            data,
            Op::Depthwise { x, k, geom },
            &[x, k],
        )
    }

    /// Batch normalization over the trailing channel axis.
    ///
    /// Training mode returns the batch statistics so the caller can update
    /// running averages.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode<'_, T>,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let dims = self.shape(x).dims().to_vec();
        let c = *dims.last().unwrap_or(&0);
        for p in [gamma, beta] {
            if self.shape(p).dims() != [c] {
                return Err(Error::shape("batch_norm", &dims, self.shape(p).dims()));
            }
        }
        let xs = self.value(x).data();
        let (stats, train, eps) = match mode {
            BatchNormMode::Train { eps } => {
                if xs.len() / c < 2 {
                    return Err(Error::Numeric(format!(
                        "batch_norm: degenerate statistics, one value per channel for {dims:?}"
                    )));
                }
                let (mean, var) = kernels::channel_moments(xs, c);
                (BatchStats { mean, var }, true, eps)
            }
            BatchNormMode::Inference { mean, var, eps } => {
                if mean.len() != c || var.len() != c {
                    return Err(Error::shape(
                        "batch_norm running stats",
                        &dims,
                        &[mean.len(), var.len()],
                    ));
                }
                (
                    BatchStats {
                        mean: mean.to_vec(),
                        var: var.to_vec(),
                    },
                    false,
                    eps,
                )
            }
        };
        let (y, xhat, inv_std) = kernels::batch_norm(
            xs,
            self.value(gamma).data(),
            self.value(beta).data(),
            &stats.mean,
            &stats.var,
            eps,
        );
        let out = self.record(
            "batch_norm",
            dims,
            y,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
            &[x, gamma, beta],
        )?;
        Ok((out, train.then_some(stats)))
    }

    fn unary(&mut self, name: &str, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var> {
        let dims = self.shape(x).dims().to_vec();
        let data = self.value(x).data().iter().map(|&v| f(v)).collect();
        self.record(name, dims, data, op, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary("relu", x, |v| v.max(T::zero()), Op::Relu(x))
    }

    pub fn relu6(&mut self, x: Var) -> Result<Var> {
        let six = T::cast(6.0);
        self.unary("relu6", x, |v| v.max(T::zero()).min(six), Op::Relu6(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary("sigmoid", x, kernels::sigmoid, Op::Sigmoid(x))
    }

    /// Row-wise softmax of a `[n, k]` tensor.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let dims = self.shape(x).dims().to_vec();
        self.shape(x).expect_rank("softmax", 2)?;
        let data = kernels::softmax(self.value(x).data(), dims[0], dims[1]);
        self.record("softmax", dims, data, Op::Softmax(x), &[x])
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (n, h, w, c) = self.shape(x).nhwc("global_avg_pool")?;
        let data = kernels::global_avg_pool(self.value(x).data(), n, h * w, c);
        self.record(
            "global_avg_pool",
            vec![n, c],
            data,
            Op::GlobalAvgPool { x, n, hw: h * w, c },
            &[x],
        )
    }

    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xd = self.shape(x).dims().to_vec();
        let wd = self.shape(w).dims().to_vec();
        if xd.len() != 2 || wd.len() != 2 || xd[1] != wd[0] {
            return Err(Error::shape("dense", &xd, &wd));
        }
        let (n, f, k) = (xd[0], xd[1], wd[1]);
        if self.shape(b).dims() != [k] {
            return Err(Error::shape("dense bias", &wd, self.shape(b).dims()));
        }
        let data = kernels::dense(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            n,
            f,
            k,
        );
        self.record(
            "dense",
            vec![n, k],
            data,
            Op::Dense { x, w, b, n, f, k },
            &[x, w, b],
        )
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                name,
                self.shape(a).dims(),
                self.shape(b).dims(),
            ));
        }
        let dims = self.shape(a).dims().to_vec();
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        self.record(name, dims, data, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var> {
        self.unary("scale", x, |v| v * factor, Op::Scale(x, factor))
    }

    /// Multiply `x[n, h, w, c]` by a per-sample, per-channel gate `s[n, c]`.
    pub fn scale_channels(&mut self, x: Var, s: Var) -> Result<Var> {
        let (n, h, w, c) = self.shape(x).nhwc("scale_channels")?;
        if self.shape(s).dims() != [n, c] {
            return Err(Error::shape(
                "scale_channels",
                self.shape(x).dims(),
                self.shape(s).dims(),
            ));
        }
        let data = kernels::scale_channels(self.value(x).data(), self.value(s).data(), n, h * w, c);
        self.record(
            "scale_channels",
            vec![n, h, w, c],
            data,
            Op::ScaleChannels {
                x,
                s,
                n,
                hw: h * w,
                c,
            },
            &[x, s],
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total = self.value(x).data().iter().copied().sum();
        self.record("sum", vec![1], vec![total], Op::Sum(x), &[x])
    }

    /// Mean over the batch of `-ln(max(p[i, label_i], 1e-12))`.
    pub fn sparse_categorical_crossentropy(&mut self, probs: Var, labels: &[usize]) -> Result<Var> {
        let dims = self.shape(probs).dims().to_vec();
        self.shape(probs)
            .expect_rank("sparse_categorical_crossentropy", 2)?;
        let (n, k) = (dims[0], dims[1]);
        if labels.len() != n {
            return Err(Error::Data(format!(
                "{} labels for a batch of {n}",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Data(format!("label {bad} outside [0, {k})")));
        }
        let p = self.value(probs).data();
        let floor = T::cast(PROB_FLOOR);
        let mut total = T::zero();
        for (i, &l) in labels.iter().enumerate() {
            total -= p[i * k + l].max(floor).ln();
        }
        let loss = total / T::cast(n as f64);
        self.record(
            "sparse_categorical_crossentropy",
            vec![1],
            vec![loss],
            Op::Scce {
                p: probs,
                labels: labels.to_vec(),
                cols: k,
            },
            &[probs],
        )
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &dy, &mut grads);
            grads[idx] = Some(dy);
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node<T>, dy: &[T], grads: &mut [Option<Vec<T>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, k, b, geom } => {
                let (dx, dk, db) = kernels::conv2d_backward(
                    val(*x),
                    val(*k),
                    dy,
                    geom,
                    self.wants(*x),
                    self.wants(*k),
                );
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *k, dk);
                if let Some(b) = b {
                    self.accumulate(grads, *b, Some(db));
                }
            }
            Op::Depthwise { x, k, geom } => {
                let (dx, dk) = kernels::depthwise_conv2d_backward(
                    val(*x),
                    val(*k),
                    dy,
                    geom,
                    self.wants(*x),
                    self.wants(*k),
                );
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *k, dk);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let g = val(*gamma);
                let c = g.len();
                if self.wants(*x) {
                    let dx = if *train {
                        kernels::batch_norm_train_backward(dy, xhat, g, inv_std)
                    } else {
                        dy.iter()
                            .enumerate()
                            .map(|(i, &d)| d * g[i % c] * inv_std[i % c])
                            .collect()
                    };
                    self.accumulate(grads, *x, Some(dx));
                }
                let (dgamma, dbeta) = kernels::batch_norm_affine_backward(dy, xhat, c);
                self.accumulate(grads, *gamma, Some(dgamma));
                self.accumulate(grads, *beta, Some(dbeta));
            }
            Op::Relu(x) => {
                let dx = val(*x)
                    .iter()
                    .zip(dy)
                    .map(|(&v, &d)| if v > T::zero() { d } else { T::zero() })
                    .collect();
                self.accumulate(grads, *x, Some(dx));
            }
            Op::Relu6(x) => {
                let six = T::cast(6.0);
                let dx = val(*x)
                    .iter()
                    .zip(dy)
                    .map(|(&v, &d)| {
                        if v > T::zero() && v < six {
                            d
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                self.accumulate(grads, *x, Some(dx));
            }
            Op::Sigmoid(x) => {
                let dx = node
                    .value
                    .data()
                    .iter()
                    .zip(dy)
                    .map(|(&s, &d)| d * s * (T::one() - s))
                    .collect();
                self.accumulate(grads, *x, Some(dx));
            }
            Op::Softmax(x) => {
                let dims = node.value.dims();
                let dx = kernels::softmax_backward(node.value.data(), dy, dims[0], dims[1]);
                self.accumulate(grads, *x, Some(dx));
            }
            Op::GlobalAvgPool { x, n, hw, c } => {
                self.accumulate(
                    grads,
                    *x,
                    Some(kernels::global_avg_pool_backward(dy, *n, *hw, *c)),
                );
            }
            Op::Dense { x, w, b, n, f, k } => {
                let (dx, dw, db) = kernels::dense_backward(
                    val(*x),
                    val(*w),
                    dy,
                    *n,
                    *f,
                    *k,
                    self.wants(*x),
                    self.wants(*w),
                );
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *w, dw);
                self.accumulate(grads, *b, Some(db));
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, Some(dy.to_vec()));
                self.accumulate(grads, *b, Some(dy.to_vec()));
            }
            Op::Mul(a, b) => {
                let da = dy.iter().zip(val(*b)).map(|(&d, &v)| d * v).collect();
                let db = dy.iter().zip(val(*a)).map(|(&d, &v)| d * v).collect();
                self.accumulate(grads, *a, Some(da));
                self.accumulate(grads, *b, Some(db));
            }
            Op::Scale(x, factor) => {
                self.accumulate(grads, *x, Some(dy.iter().map(|&d| d * *factor).collect()));
            }
            Op::ScaleChannels { x, s, n, hw, c } => {
                if self.wants(*x) {
                    self.accumulate(
                        grads,
                        *x,
                        Some(kernels::scale_channels(dy, val(*s), *n, *hw, *c)),
                    );
                }
                if self.wants(*s) {
                    let xs = val(*x);
                    let mut ds = vec![T::zero(); n * c];
                    for b in 0..*n {
                        for p in 0..*hw {
                            let x0 = (b * hw + p) * c;
                            for ch in 0..*c {
                                ds[b * c + ch] += dy[x0 + ch] * xs[x0 + ch];
                            }
                        }
                    }
                    self.accumulate(grads, *s, Some(ds));
                }
            }
            Op::Sum(x) => {
                let len = self.nodes[x.0].value.len();
                self.accumulate(grads, *x, Some(vec![dy[0]; len]));
            }
            Op::Scce { p, labels, cols } => {
                let probs = val(*p);
                let n = labels.len();
                let scale = dy[0] / T::cast(n as f64);
                let floor = T::cast(PROB_FLOOR);
                let mut dp = vec![T::zero(); probs.len()];
                for (i, &l) in labels.iter().enumerate() {
                    let v = probs[i * cols + l];
                    if v > floor {
                        dp[i * cols + l] = -scale / v;
                    }
                }
                self.accumulate(grads, *p, Some(dp));
            }
        }
    }
}

const PROB_FLOOR: f64 = 1e-12;

impl<T: Element> Tape<T> {
    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, g: Option<Vec<T>>) {
        if !self.wants(v) {
            return;
        }
        let Some(g) = g else { return };
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }
}

/// Result of a backward sweep: one optional gradient per recorded node.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Element> Gradients<T> {
    /// Gradient buffer for `v`, or `None` when no path reaches it.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient for `v` shaped like its value on `tape`, zero-filled when
    /// `v` was not reached.
    pub fn tensor(&self, tape: &Tape<T>, v: Var) -> Tensor<T> {
        let shape = tape.shape(v).clone();
        let data = match self.get(v) {
            Some(g) => g.to_vec(),
            None => vec![T::zero(); shape.numel()],
        };
        Tensor::from_shape(shape, data).expect("gradient length matches its node")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sum_grad_is_ones() {
        let mut tape = Tape::<f64>::new();
        let x = tape.variable(Tensor::from_fn(vec![2, 3, 4], |i| i as f64 * 0.1).unwrap());
        let s = tape.sum(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert!(g.get(x).unwrap().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn half_squared_norm_grad_is_x() {
        let mut tape = Tape::<f64>::new();
        let data = vec![1.5, -2.0, 0.25, 3.0];
        let x = tape.variable(Tensor::new(vec![4], data.clone()).unwrap());
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq).unwrap();
        let loss = tape.scale(s, 0.5).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap(), data.as_slice());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::<f32>::new();
        let x = tape.variable(Tensor::zeros(vec![3]).unwrap());
        let y = tape.relu(x).unwrap();
        assert!(matches!(tape.backward(y), Err(Error::Usage(_))));
    }

    #[test]
    fn unreached_leaf_has_no_grad() {
        let mut tape = Tape::<f64>::new();
        let x = tape.variable(Tensor::full(vec![2], 1.0).unwrap());
        let unused = tape.variable(Tensor::full(vec![3], 1.0).unwrap());
        let s = tape.sum(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert!(g.get(unused).is_none());
        assert_eq!(g.tensor(&tape, unused).data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn constants_do_not_propagate() {
        let mut tape = Tape::<f64>::new();
        let c = tape.constant(Tensor::full(vec![2], 2.0).unwrap());
        let x = tape.variable(Tensor::full(vec![2], 3.0).unwrap());
        let p = tape.mul(c, x).unwrap();
        let s = tape.sum(p).unwrap();
        let g = tape.backward(s).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(x).unwrap(), &[2.0, 2.0]);
    }

    #[test]
    fn conv_shape_error_names_both_shapes() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(vec![1, 4, 4, 3]).unwrap());
        let k = tape.constant(Tensor::zeros(vec![3, 3, 2, 8]).unwrap());
        let err = tape.conv2d(x, k, None, 1, Padding::Same).unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("[1, 4, 4, 3]") && msg.contains("[3, 3, 2, 8]"),
            "{msg}"
        );
    }

    #[test]
    fn scce_label_out_of_range() {
        let mut tape = Tape::<f64>::new();
        let p = tape.constant(Tensor::full(vec![1, 5], 0.2).unwrap());
        assert!(matches!(
            tape.sparse_categorical_crossentropy(p, &[5]),
            Err(Error::Data(_))
        ));
        let l = tape.sparse_categorical_crossentropy(p, &[4]).unwrap();
        assert_relative_eq!(tape.value(l).item().unwrap(), 5f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn batch_norm_train_needs_two_values_per_channel() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::full(vec![1, 1, 1, 2], 1.0).unwrap());
        let g = tape.constant(Tensor::full(vec![2], 1.0).unwrap());
        let b = tape.constant(Tensor::zeros(vec![2]).unwrap());
        let r = tape.batch_norm(x, g, b, BatchNormMode::Train { eps: 1e-3 });
        assert!(matches!(r, Err(Error::Numeric(_))));
    }
}
