//! Layer kit shared by the eager (inference) and tape (training) execution
//! paths.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{Bindings, ParamId, ParamKind, ParameterStore, StatUpdate};
use crate::error::{Error, Result};
use crate::tensor::{BatchNormMode, Element, Padding, Tape, Tensor, Var};

/// Executes layer primitives either eagerly or by recording onto a tape.
pub trait Backend<T: Element> {
    type Value: Clone;

    fn param(&mut self, id: ParamId) -> Result<Self::Value>;
    fn dims(&self, v: &Self::Value) -> Vec<usize>;

    fn conv2d(
        &mut self,
        x: &Self::Value,
        k: &Self::Value,
        b: Option<&Self::Value>,
        stride: usize,
        padding: Padding,
    ) -> Result<Self::Value>;
    fn depthwise_conv2d(
        &mut self,
        x: &Self::Value,
        k: &Self::Value,
        stride: usize,
        padding: Padding,
    ) -> Result<Self::Value>;
    fn batch_norm(
        &mut self,
        x: &Self::Value,
        bn: &BatchNormLayer,
        train: bool,
        eps: f64,
    ) -> Result<Self::Value>;
    fn relu(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn relu6(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn sigmoid(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn softmax(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn global_avg_pool(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn dense(&mut self, x: &Self::Value, w: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn scale_channels(&mut self, x: &Self::Value, s: &Self::Value) -> Result<Self::Value>;
}

/// Records every primitive on a tape, reading parameters through bindings.
pub struct TapeBackend<'a, T> {
    pub tape: &'a mut Tape<T>,
    bindings: &'a Bindings,
    store: &'a ParameterStore<T>,
    pub stat_updates: Vec<StatUpdate<T>>,
}

impl<'a, T: Element> TapeBackend<'a, T> {
    pub fn new(
        tape: &'a mut Tape<T>,
        bindings: &'a Bindings,
        store: &'a ParameterStore<T>,
    ) -> Self {
        TapeBackend {
            tape,
            bindings,
            store,
            stat_updates: Vec::new(),
        }
    }
}

impl<T: Element> Backend<T> for TapeBackend<'_, T> {
    type Value = Var;

    fn param(&mut self, id: ParamId) -> Result<Var> {
        self.bindings.var(id)
    }

    fn dims(&self, v: &Var) -> Vec<usize> {
        self.tape.shape(*v).dims().to_vec()
    }

    fn conv2d(
        &mut self,
        x: &Var,
        k: &Var,
        b: Option<&Var>,
        stride: usize,
        padding: Padding,
    ) -> Result<Var> {
        self.tape.conv2d(*x, *k, b.copied(), stride, padding)
    }

    fn depthwise_conv2d(
        &mut self,
        x: &Var,
        k: &Var,
        stride: usize,
        padding: Padding,
    ) -> Result<Var> {
        self.tape.depthwise_conv2d(*x, *k, stride, padding)
    }

    fn batch_norm(&mut self, x: &Var, bn: &BatchNormLayer, train: bool, eps: f64) -> Result<Var> {
        let gamma = self.bindings.var(bn.gamma)?;
        let beta = self.bindings.var(bn.beta)?;
        let eps = T::cast(eps);
        let mode = if train {
            BatchNormMode::Train { eps }
        } else {
            BatchNormMode::Inference {
                mean: self.store.tensor(bn.mean).data(),
                var: self.store.tensor(bn.var).data(),
                eps,
            }
        };
        let (y, stats) = self.tape.batch_norm(*x, gamma, beta, mode)?;
        if let Some(stats) = stats {
            self.stat_updates.push(StatUpdate {
                mean: bn.mean,
                var: bn.var,
                stats,
            });
        }
        Ok(y)
    }

    fn relu(&mut self, x: &Var) -> Result<Var> {
        self.tape.relu(*x)
    }

    fn relu6(&mut self, x: &Var) -> Result<Var> {
        self.tape.relu6(*x)
    }

    fn sigmoid(&mut self, x: &Var) -> Result<Var> {
        self.tape.sigmoid(*x)
    }

    fn softmax(&mut self, x: &Var) -> Result<Var> {
        self.tape.softmax(*x)
    }

    fn global_avg_pool(&mut self, x: &Var) -> Result<Var> {
        self.tape.global_avg_pool(*x)
    }

    fn dense(&mut self, x: &Var, w: &Var, b: &Var) -> Result<Var> {
        self.tape.dense(*x, *w, *b)
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.tape.add(*a, *b)
    }

    fn scale_channels(&mut self, x: &Var, s: &Var) -> Result<Var> {
        self.tape.scale_channels(*x, *s)
    }
}

/// Evaluates primitives immediately and keeps no history, so intermediate
/// activations are freed as soon as they go out of scope.
pub struct EagerBackend<'a, T> {
    store: &'a ParameterStore<T>,
    scratch: Tape<T>,
    pub stat_updates: Vec<StatUpdate<T>>,
}

impl<'a, T: Element> EagerBackend<'a, T> {
    pub fn new(store: &'a ParameterStore<T>) -> Self {
        EagerBackend {
            store,
            scratch: Tape::new(),
            stat_updates: Vec::new(),
        }
    }

    fn run(
        &mut self,
        inputs: &[&Rc<Tensor<T>>],
        f: impl FnOnce(&mut Tape<T>, &[Var]) -> Result<Var>,
    ) -> Result<Rc<Tensor<T>>> {
        self.scratch.clear();
        let vars: Vec<Var> = inputs
            .iter()
            .map(|t| self.scratch.constant(Tensor::clone(t)))
            .collect();
        f(&mut self.scratch, &vars)?;
        let out = self
            .scratch
            .take_last()
            .expect("eager op records its output last");
        Ok(Rc::new(out))
    }
}

impl<T: Element> Backend<T> for EagerBackend<'_, T> {
    type Value = Rc<Tensor<T>>;

    fn param(&mut self, id: ParamId) -> Result<Self::Value> {
        let mut t = self.store.tensor(id).clone();
        t.clear_grad();
        Ok(Rc::new(t))
    }

    fn dims(&self, v: &Self::Value) -> Vec<usize> {
        v.dims().to_vec()
    }

    fn conv2d(
        &mut self,
        x: &Self::Value,
        k: &Self::Value,
        b: Option<&Self::Value>,
        stride: usize,
        padding: Padding,
    ) -> Result<Self::Value> {
        match b {
            Some(b) => self.run(&[x, k, b], |t, v| {
                t.conv2d(v[0], v[1], Some(v[2]), stride, padding)
            }),
            None => self.run(&[x, k], |t, v| t.conv2d(v[0], v[1], None, stride, padding)),
        }
    }

    fn depthwise_conv2d(
        &mut self,
        x: &Self::Value,
        k: &Self::Value,
        stride: usize,
        padding: Padding,
    ) -> Result<Self::Value> {
        self.run(&[x, k], |t, v| {
            t.depthwise_conv2d(v[0], v[1], stride, padding)
        })
    }

    fn batch_norm(
        &mut self,
        x: &Self::Value,
        bn: &BatchNormLayer,
        train: bool,
        eps: f64,
    ) -> Result<Self::Value> {
        let gamma = self.param(bn.gamma)?;
        let beta = self.param(bn.beta)?;
        let store = self.store;
        let eps = T::cast(eps);
        let mut observed = None;
        let out = self.run(&[x, &gamma, &beta], |t, v| {
            let mode = if train {
                BatchNormMode::Train { eps }
            } else {
                BatchNormMode::Inference {
                    mean: store.tensor(bn.mean).data(),
                    var: store.tensor(bn.var).data(),
                    eps,
                }
            };
            let (y, stats) = t.batch_norm(v[0], v[1], v[2], mode)?;
            observed = stats;
            Ok(y)
        })?;
        if let Some(stats) = observed {
            self.stat_updates.push(StatUpdate {
                mean: bn.mean,
                var: bn.var,
                stats,
            });
        }
        Ok(out)
    }

    fn relu(&mut self, x: &Self::Value) -> Result<Self::Value> {
        self.run(&[x], |t, v| t.relu(v[0]))
    }

    fn relu6(&mut self, x: &Self::Value) -> Result<Self::Value> {
        self.run(&[x], |t, v| t.relu6(v[0]))
    }

    fn sigmoid(&mut self, x: &Self::Value) -> Result<Self::Value> {
        self.run(&[x], |t, v| t.sigmoid(v[0]))
    }

    fn softmax(&mut self, x: &Self::Value) -> Result<Self::Value> {
        self.run(&[x], |t, v| t.softmax(v[0]))
    }

    fn global_avg_pool(&mut self, x: &Self::Value) -> Result<Self::Value> {
        self.run(&[x], |t, v| t.global_avg_pool(v[0]))
    }

    fn dense(&mut self, x: &Self::Value, w: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        self.run(&[x, w, b], |t, v| t.dense(v[0], v[1], v[2]))
    }

    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        self.run(&[a, b], |t, v| t.add(v[0], v[1]))
    }

    fn scale_channels(&mut self, x: &Self::Value, s: &Self::Value) -> Result<Self::Value> {
        self.run(&[x, s], |t, v| t.scale_channels(v[0], v[1]))
    }
}

/// Seeded fan-in-scaled uniform initializer.
pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Initializer {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Uniform in `±sqrt(6 / fan_in)`.
    pub fn fan_in<T: Element>(&mut self, dims: Vec<usize>, fan_in: usize) -> Result<Tensor<T>> {
        let limit = (6.0 / fan_in as f64).sqrt();
        Tensor::from_fn(dims, |_| T::cast(self.rng.random_range(-limit..limit)))
    }
}

/// Parameter handles of one batch-norm layer.
#[derive(Clone, Debug)]
pub struct BatchNormLayer {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub mean: ParamId,
    pub var: ParamId,
}

impl BatchNormLayer {
    pub fn new<T: Element>(
        store: &mut ParameterStore<T>,
        prefix: &str,
        channels: usize,
        trainable: bool,
    ) -> Result<Self> {
        let c = vec![channels];
        Ok(BatchNormLayer {
            gamma: store.insert(
                format!("{prefix}/gamma"),
                ParamKind::Gamma,
                trainable,
                Tensor::full(c.clone(), T::one())?,
            )?,
            beta: store.insert(
                format!("{prefix}/beta"),
                ParamKind::Beta,
                trainable,
                Tensor::zeros(c.clone())?,
            )?,
            mean: store.insert(
                format!("{prefix}/running_mean"),
                ParamKind::RunningMean,
                trainable,
                Tensor::zeros(c.clone())?,
            )?,
            var: store.insert(
                format!("{prefix}/running_var"),
                ParamKind::RunningVar,
                trainable,
                Tensor::full(c, T::one())?,
            )?,
        })
    }

    pub fn ids(&self) -> [ParamId; 4] {
        [self.gamma, self.beta, self.mean, self.var]
    }
}

/// Convolution without bias, followed by batch norm and optionally relu6.
#[derive(Clone, Debug)]
pub struct ConvBn {
    pub kernel: ParamId,
    pub bn: BatchNormLayer,
    pub stride: usize,
    pub depthwise: bool,
    pub activate: bool,
}

impl ConvBn {
    #[allow(clippy::too_many_arguments)]
    pub fn standard<T: Element>(
        store: &mut ParameterStore<T>,
        init: &mut Initializer,
        prefix: &str,
        k: usize,
        cin: usize,
        cout: usize,
        stride: usize,
        activate: bool,
        trainable: bool,
    ) -> Result<Self> {
        let kernel = init.fan_in(vec![k, k, cin, cout], k * k * cin)?;
        Ok(ConvBn {
            kernel: store.insert(
                format!("{prefix}/kernel"),
                ParamKind::Kernel,
                trainable,
                kernel,
            )?,
            bn: BatchNormLayer::new(store, &format!("{prefix}/bn"), cout, trainable)?,
            stride,
            depthwise: false,
            activate,
        })
    }

    pub fn depthwise<T: Element>(
        store: &mut ParameterStore<T>,
        init: &mut Initializer,
        prefix: &str,
        k: usize,
        channels: usize,
        stride: usize,
        trainable: bool,
    ) -> Result<Self> {
        let kernel = init.fan_in(vec![k, k, channels], k * k)?;
        Ok(ConvBn {
            kernel: store.insert(
                format!("{prefix}/kernel"),
                ParamKind::Kernel,
                trainable,
                kernel,
            )?,
            bn: BatchNormLayer::new(store, &format!("{prefix}/bn"), channels, trainable)?,
            stride,
            depthwise: true,
            activate: true,
        })
    }

    pub fn forward<T: Element, B: Backend<T>>(
        &self,
        b: &mut B,
        x: &B::Value,
        train: bool,
        eps: f64,
    ) -> Result<B::Value> {
        let k = b.param(self.kernel)?;
        let y = if self.depthwise {
            b.depthwise_conv2d(x, &k, self.stride, Padding::Same)?
        } else {
            b.conv2d(x, &k, None, self.stride, Padding::Same)?
        };
        let y = b.batch_norm(&y, &self.bn, train, eps)?;
        if self.activate {
            b.relu6(&y)
        } else {
            Ok(y)
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.kernel];
        ids.extend(self.bn.ids());
        ids
    }
}

/// Affine layer with bias.
#[derive(Clone, Debug)]
pub struct DenseLayer {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl DenseLayer {
    pub fn new<T: Element>(
        store: &mut ParameterStore<T>,
        init: &mut Initializer,
        prefix: &str,
        inputs: usize,
        outputs: usize,
        trainable: bool,
    ) -> Result<Self> {
        let w = init.fan_in(vec![inputs, outputs], inputs)?;
        Ok(DenseLayer {
            weight: store.insert(format!("{prefix}/kernel"), ParamKind::Kernel, trainable, w)?,
            bias: store.insert(
                format!("{prefix}/bias"),
                ParamKind::Bias,
                trainable,
                Tensor::zeros(vec![outputs])?,
            )?,
        })
    }

    pub fn forward<T: Element, B: Backend<T>>(&self, b: &mut B, x: &B::Value) -> Result<B::Value> {
        let w = b.param(self.weight)?;
        let bias = b.param(self.bias)?;
        b.dense(x, &w, &bias)
    }
}

/// Width of the squeeze bottleneck: `max(1, round(channels * ratio))`.
pub fn se_width(channels: usize, ratio: f64) -> usize {
    ((channels as f64 * ratio).round() as usize).max(1)
}

/// Squeeze-and-excitation: pool, dense → relu → dense → sigmoid, then gate
/// every channel of the input.
#[derive(Clone, Debug)]
pub struct SqueezeExcite {
    pub reduce: DenseLayer,
    pub expand: DenseLayer,
    pub channels: usize,
    pub reduced: usize,
}

impl SqueezeExcite {
    pub fn new<T: Element>(
        store: &mut ParameterStore<T>,
        init: &mut Initializer,
        prefix: &str,
        channels: usize,
        reduced: usize,
        trainable: bool,
    ) -> Result<Self> {
        Ok(SqueezeExcite {
            reduce: DenseLayer::new(
                store,
                init,
                &format!("{prefix}/reduce"),
                channels,
                reduced,
                trainable,
            )?,
            expand: DenseLayer::new(
                store,
                init,
                &format!("{prefix}/expand"),
                reduced,
                channels,
                trainable,
            )?,
            channels,
            reduced,
        })
    }

    pub fn forward<T: Element, B: Backend<T>>(&self, b: &mut B, x: &B::Value) -> Result<B::Value> {
        let squeezed = b.global_avg_pool(x)?;
        let h = self.reduce.forward(b, &squeezed)?;
        let h = b.relu(&h)?;
        let gate = self.expand.forward(b, &h)?;
        let gate = b.sigmoid(&gate)?;
        b.scale_channels(x, &gate)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![
            self.reduce.weight,
            self.reduce.bias,
            self.expand.weight,
            self.expand.bias,
        ]
    }
}

/// Mobile inverted bottleneck block: optional 1x1 expansion, depthwise
/// convolution, squeeze-and-excitation, linear 1x1 projection and a residual
/// connection when the shape is preserved.
#[derive(Clone, Debug)]
pub struct MbConvBlock {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub expanded_channels: usize,
    pub stride: usize,
    pub expand: Option<ConvBn>,
    pub depthwise: ConvBn,
    pub se: SqueezeExcite,
    pub project: ConvBn,
    pub residual: bool,
}

impl MbConvBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Element>(
        store: &mut ParameterStore<T>,
        init: &mut Initializer,
        name: &str,
        cin: usize,
        cout: usize,
        expansion: usize,
        stride: usize,
        dw_kernel: usize,
        se_ratio: f64,
        trainable: bool,
    ) -> Result<Self> {
        let expanded = cin * expansion;
        let expand = if expansion > 1 {
            Some(ConvBn::standard(
                store,
                init,
                &format!("{name}/expand"),
                1,
                cin,
                expanded,
                1,
                true,
                trainable,
            )?)
        } else {
            None
        };
        let depthwise = ConvBn::depthwise(
            store,
            init,
            &format!("{name}/depthwise"),
            dw_kernel,
            expanded,
            stride,
            trainable,
        )?;
        let se = SqueezeExcite::new(
            store,
            init,
            &format!("{name}/se"),
            expanded,
            se_width(cin, se_ratio),
            trainable,
        )?;
        let project = ConvBn::standard(
            store,
            init,
            &format!("{name}/project"),
            1,
            expanded,
            cout,
            1,
            false,
            trainable,
        )?;
        Ok(MbConvBlock {
            name: name.to_string(),
            in_channels: cin,
            out_channels: cout,
            expanded_channels: expanded,
            stride,
            expand,
            depthwise,
            se,
            project,
            residual: stride == 1 && cin == cout,
        })
    }

    pub fn forward<T: Element, B: Backend<T>>(
        &self,
        b: &mut B,
        x: &B::Value,
        train: bool,
        eps: f64,
    ) -> Result<B::Value> {
        let dims = b.dims(x);
        if dims.len() != 4 || dims[3] != self.in_channels {
            return Err(Error::shape(
                "mbconv",
                &dims,
                &[self.in_channels, self.out_channels],
            ));
        }
        let h = match &self.expand {
            Some(e) => e.forward(b, x, train, eps)?,
            None => x.clone(),
        };
        let h = self.depthwise.forward(b, &h, train, eps)?;
        let h = self.se.forward(b, &h)?;
        let h = self.project.forward(b, &h, train, eps)?;
        if self.residual {
            b.add(x, &h)
        } else {
            Ok(h)
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        if let Some(e) = &self.expand {
            ids.extend(e.param_ids());
        }
        ids.extend(self.depthwise.param_ids());
        ids.extend(self.se.param_ids());
        ids.extend(self.project.param_ids());
        ids
    }
}
