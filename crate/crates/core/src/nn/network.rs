use serde::Serialize;

use super::layers::{
    Backend, ConvBn, DenseLayer, EagerBackend, Initializer, MbConvBlock, TapeBackend,
};
use super::params::{Bindings, ParamId, ParameterStore, StatUpdate};
use super::spec::NetworkSpec;
use crate::error::{Error, Result};
use crate::tensor::{Element, Tape, Tensor, Var};

/// Whether batch norm in a trainable extractor uses batch statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Inference,
}

/// Stem, MBConv stages, 1x1 head convolution, average pool and a softmax
/// classifier. Parameters live in a separate [`ParameterStore`].
#[derive(Clone, Debug)]
pub struct Network {
    spec: NetworkSpec,
    stem: ConvBn,
    blocks: Vec<MbConvBlock>,
    /// Index of the last block of every stage.
    stage_ends: Vec<usize>,
    head: ConvBn,
    classifier: DenseLayer,
}

/// Named intermediate shape recorded by [`Network::forward_trace`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TraceEntry {
    pub name: String,
    pub dims: Vec<usize>,
}

/// One row of the layer summary table.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LayerRow {
    pub name: String,
    /// Keras-style shape with an open batch axis, e.g. `(None, 5)`.
    pub output_shape: String,
    pub params: usize,
}

/// Loss and probabilities of one gradient step.
#[derive(Clone, Debug)]
pub struct StepOutput<T> {
    pub loss: f64,
    pub probs: Tensor<T>,
}

/// Build the network described by `spec` with seeded initialization.
pub fn build_network<T: Element>(
    spec: &NetworkSpec,
    init_seed: u64,
) -> Result<(Network, ParameterStore<T>)> {
    spec.validate()?;
    let mut store = ParameterStore::new();
    let mut init = Initializer::new(init_seed);
    let trainable = !spec.extractor_frozen;
    let cin = spec.input_size[2];

    let stem = ConvBn::standard(
        &mut store,
        &mut init,
        "stem",
        spec.stem.kernel,
        cin,
        spec.stem.filters,
        spec.stem.stride,
        true,
        trainable,
    )?;

    let mut blocks = Vec::new();
    let mut stage_ends = Vec::new();
    let mut channels = spec.stem.filters;
    for (s, stage) in spec.stages.iter().enumerate() {
        for r in 0..stage.repeat {
            let stride = if r == 0 { stage.stride } else { 1 };
            blocks.push(MbConvBlock::new(
                &mut store,
                &mut init,
                &format!("stage{}/block{}", s + 1, r + 1),
                channels,
                stage.out_channels,
                stage.expansion_factor,
                stride,
                stage.dw_kernel,
                stage.se_ratio,
                trainable,
            )?);
            channels = stage.out_channels;
        }
        stage_ends.push(blocks.len() - 1);
    }

    let head = ConvBn::standard(
        &mut store,
        &mut init,
        "head",
        1,
        channels,
        spec.head_channels,
        1,
        true,
        trainable,
    )?;
    let classifier = DenseLayer::new(
        &mut store,
        &mut init,
        "classifier",
        spec.head_channels,
        spec.num_classes,
        true,
    )?;

    Ok((
        Network {
            spec: spec.clone(),
            stem,
            blocks,
            stage_ends,
            head,
            classifier,
        },
        store,
    ))
}

impl Network {
    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn blocks(&self) -> &[MbConvBlock] {
        &self.blocks
    }

    pub fn classifier(&self) -> &DenseLayer {
        &self.classifier
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    fn check_input(&self, dims: &[usize]) -> Result<()> {
        let [h, w, c] = self.spec.input_size;
        if dims.len() != 4 || dims[1..] != [h, w, c] {
            return Err(Error::shape("network input", dims, &[0, h, w, c]));
        }
        Ok(())
    }

    /// Pooled pre-classifier features, recorded on any backend.
    pub fn extract<T: Element, B: Backend<T>>(
        &self,
        b: &mut B,
        x: &B::Value,
        mode: Mode,
        mut trace: Option<&mut Vec<TraceEntry>>,
    ) -> Result<B::Value> {
        self.check_input(&b.dims(x))?;
        let train = mode == Mode::Train && !self.spec.extractor_frozen;
        let eps = self.spec.batch_norm.epsilon;
        let mut record = |b: &B, name: String, v: &B::Value| {
            if let Some(t) = trace.as_deref_mut() {
                t.push(TraceEntry {
                    name,
                    dims: b.dims(v),
                });
            }
        };

        let mut h = self.stem.forward(b, x, train, eps)?;
        record(b, "stem".into(), &h);
        let mut stage = 0;
        for (i, block) in self.blocks.iter().enumerate() {
            h = block.forward(b, &h, train, eps)?;
            if self.stage_ends[stage] == i {
                stage += 1;
                record(b, format!("stage{stage}"), &h);
            }
        }
        h = self.head.forward(b, &h, train, eps)?;
        record(b, "head".into(), &h);
        let f = b.global_avg_pool(&h)?;
        record(b, "features".into(), &f);
        Ok(f)
    }

    /// Softmax probabilities from pooled features.
    pub fn classify<T: Element, B: Backend<T>>(
        &self,
        b: &mut B,
        features: &B::Value,
    ) -> Result<B::Value> {
        let logits = self.classifier.forward(b, features)?;
        b.softmax(&logits)
    }

    /// Inference-mode pooled features `[n, head_channels]`.
    pub fn forward_features<T: Element>(
        &self,
        store: &ParameterStore<T>,
        batch: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let mut b = EagerBackend::new(store);
        let x = std::rc::Rc::new(batch.clone());
        let f = self.extract(&mut b, &x, Mode::Inference, None)?;
        Ok(unwrap_rc(f))
    }

    /// Inference-mode class probabilities `[n, num_classes]`.
    pub fn forward<T: Element>(
        &self,
        store: &ParameterStore<T>,
        batch: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        Ok(self.forward_trace(store, batch)?.0)
    }

    /// Inference forward that also reports the shape after the stem, every
    /// stage, the head convolution, pooling and the classifier.
    pub fn forward_trace<T: Element>(
        &self,
        store: &ParameterStore<T>,
        batch: &Tensor<T>,
    ) -> Result<(Tensor<T>, Vec<TraceEntry>)> {
        let mut trace = Vec::new();
        let mut b = EagerBackend::new(store);
        let x = std::rc::Rc::new(batch.clone());
        let f = self.extract(&mut b, &x, Mode::Inference, Some(&mut trace))?;
        let p = self.classify(&mut b, &f)?;
        trace.push(TraceEntry {
            name: "probabilities".into(),
            dims: p.dims().to_vec(),
        });
        Ok((unwrap_rc(p), trace))
    }

    /// Record `loss = scce(classify(extract(x)))` on a tape. Returns the loss,
    /// the probabilities and any batch statistics observed.
    pub fn loss_on_tape<T: Element>(
        &self,
        tape: &mut Tape<T>,
        bindings: &Bindings,
        store: &ParameterStore<T>,
        x: Var,
        labels: &[usize],
        mode: Mode,
    ) -> Result<(Var, Var, Vec<StatUpdate<T>>)> {
        let mut b = TapeBackend::new(tape, bindings, store);
        let f = self.extract(&mut b, &x, mode, None)?;
        let p = self.classify(&mut b, &f)?;
        let updates = std::mem::take(&mut b.stat_updates);
        let loss = tape.sparse_categorical_crossentropy(p, labels)?;
        Ok((loss, p, updates))
    }

    /// Forward and backward pass for one training batch. Gradients land in
    /// the grad slots of the optimizable parameters; running statistics of a
    /// trainable extractor are updated.
    pub fn train_step<T: Element>(
        &self,
        store: &mut ParameterStore<T>,
        batch: &Tensor<T>,
        labels: &[usize],
    ) -> Result<StepOutput<T>> {
        let mut tape = Tape::new();
        if self.spec.extractor_frozen {
            // Nothing upstream of the classifier needs gradients.
            let features = self.forward_features(store, batch)?;
            let ids = [self.classifier.weight, self.classifier.bias];
            let bindings = store.bind_only(&mut tape, &ids);
            let f = tape.constant(features);
            let mut b = TapeBackend::new(&mut tape, &bindings, store);
            let p = self.classify(&mut b, &f)?;
            let loss = tape.sparse_categorical_crossentropy(p, labels)?;
            let grads = tape.backward(loss)?;
            let out = StepOutput {
                loss: tape.value(loss).item()?.widen(),
                probs: tape.value(p).clone(),
            };
            store.write_grads(&tape, &bindings, &grads)?;
            Ok(out)
        } else {
            let bindings = store.bind(&mut tape);
            let x = tape.constant(batch.clone());
            let (loss, p, updates) =
                self.loss_on_tape(&mut tape, &bindings, store, x, labels, Mode::Train)?;
            let grads = tape.backward(loss)?;
            let out = StepOutput {
                loss: tape.value(loss).item()?.widen(),
                probs: tape.value(p).clone(),
            };
            store.write_grads(&tape, &bindings, &grads)?;
            store.apply_stat_updates(&updates, self.spec.batch_norm.momentum);
            Ok(out)
        }
    }

    /// Every parameter owned by the extractor (stem, blocks, head).
    pub fn extractor_param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.stem.param_ids();
        for b in &self.blocks {
            ids.extend(b.param_ids());
        }
        ids.extend(self.head.param_ids());
        ids
    }

    /// Per-layer output shapes and parameter counts.
    pub fn layer_table<T: Element>(&self, store: &ParameterStore<T>) -> Vec<LayerRow> {
        let count = |ids: &[ParamId]| ids.iter().map(|&id| store.tensor(id).len()).sum::<usize>();
        let shape = |dims: &[usize]| {
            let parts: Vec<String> = dims.iter().map(|d| d.to_string()).collect();
            format!("(None, {})", parts.join(", "))
        };
        let [mut h, mut w, _] = self.spec.input_size;
        let mut rows = Vec::new();
        h = h.div_ceil(self.spec.stem.stride);
        w = w.div_ceil(self.spec.stem.stride);
        rows.push(LayerRow {
            name: "stem".into(),
            output_shape: shape(&[h, w, self.spec.stem.filters]),
            params: count(&self.stem.param_ids()),
        });
        for b in &self.blocks {
            h = h.div_ceil(b.stride);
            w = w.div_ceil(b.stride);
            rows.push(LayerRow {
                name: b.name.clone(),
                output_shape: shape(&[h, w, b.out_channels]),
                params: count(&b.param_ids()),
            });
        }
        rows.push(LayerRow {
            name: "head".into(),
            output_shape: shape(&[h, w, self.spec.head_channels]),
            params: count(&self.head.param_ids()),
        });
        rows.push(LayerRow {
            name: "avg_pool".into(),
            output_shape: shape(&[self.spec.head_channels]),
            params: 0,
        });
        rows.push(LayerRow {
            name: "dense".into(),
            output_shape: shape(&[self.spec.num_classes]),
            params: count(&[self.classifier.weight, self.classifier.bias]),
        });
        rows
    }
}

fn unwrap_rc<T: Clone>(v: std::rc::Rc<T>) -> T {
    std::rc::Rc::try_unwrap(v).unwrap_or_else(|rc| (*rc).clone())
}
