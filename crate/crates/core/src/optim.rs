//! Cross-entropy, SGD with momentum, Adam, and epoch-segment schedules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParameterStore;
use crate::tensor::{Element, Tensor};

/// Smallest probability fed to the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Mean of `-ln(max(p[i, label_i], 1e-12))` over the rows of `probs`.
pub fn scce_loss<T: Element>(probs: &Tensor<T>, labels: &[usize]) -> Result<f64> {
    let dims = probs.dims();
    if dims.len() != 2 {
        return Err(Error::InvalidShape(format!(
            "scce_loss expects [n, k] probabilities, got {dims:?}"
        )));
    }
    let (n, k) = (dims[0], dims[1]);
    if labels.len() != n {
        return Err(Error::Data(format!(
            "{} labels for {n} probability rows",
            labels.len()
        )));
    }
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::Data(format!(
                "label {y} out of range for {k} classes"
            )));
        }
        total -= probs.data()[i * k + y].widen().max(PROB_FLOOR).ln();
    }
    Ok(total / n as f64)
}

fn default_sgd_lr() -> f64 {
    0.01
}

fn default_momentum() -> f64 {
    0.9
}

fn default_adam_lr() -> f64 {
    0.001
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_epsilon() -> f64 {
    1e-8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    #[serde(default = "default_sgd_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            learning_rate: default_sgd_lr(),
            momentum: default_momentum(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    #[serde(default = "default_adam_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: default_adam_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "optimizer", rename_all = "lowercase")]
pub enum OptimizerConfig {
    Sgd(SgdConfig),
    Adam(AdamConfig),
}

impl OptimizerConfig {
    pub fn label(&self) -> &'static str {
        match self {
            OptimizerConfig::Sgd(_) => "sgd",
            OptimizerConfig::Adam(_) => "adam",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        match self {
            OptimizerConfig::Sgd(c) => {
                if !(c.learning_rate > 0.0 && c.learning_rate.is_finite()) {
                    return bad(format!(
                        "sgd learning_rate must be > 0, got {}",
                        c.learning_rate
                    ));
                }
                if !(0.0..1.0).contains(&c.momentum) {
                    return bad(format!(
                        "sgd momentum must be in [0, 1), got {}",
                        c.momentum
                    ));
                }
            }
            OptimizerConfig::Adam(c) => {
                if !(c.learning_rate > 0.0 && c.learning_rate.is_finite()) {
                    return bad(format!(
                        "adam learning_rate must be > 0, got {}",
                        c.learning_rate
                    ));
                }
                for (name, b) in [("beta1", c.beta1), ("beta2", c.beta2)] {
                    if !(0.0..1.0).contains(&b) {
                        return bad(format!("adam {name} must be in [0, 1), got {b}"));
                    }
                }
                if c.epsilon.is_nan() || c.epsilon <= 0.0 {
                    return bad(format!("adam epsilon must be > 0, got {}", c.epsilon));
                }
            }
        }
        Ok(())
    }
}

/// One SGD step on a slice: `v = mu * v + g; p -= lr * v`.
pub fn sgd_update<T: Element>(param: &mut [T], grad: &[T], velocity: &mut [T], cfg: &SgdConfig) {
    let lr = T::cast(cfg.learning_rate);
    let mu = T::cast(cfg.momentum);
    for ((p, &g), v) in param.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        *v = mu * *v + g;
        *p -= lr * *v;
    }
}

/// One Adam step on a slice at step number `t` (1 for the first step).
pub fn adam_update<T: Element>(
    param: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
    t: u64,
    cfg: &AdamConfig,
) {
    let b1 = T::cast(cfg.beta1);
    let b2 = T::cast(cfg.beta2);
    let one = T::one();
    let c1 = T::cast(1.0 - cfg.beta1.powi(t as i32));
    let c2 = T::cast(1.0 - cfg.beta2.powi(t as i32));
    let lr = T::cast(cfg.learning_rate);
    let eps = T::cast(cfg.epsilon);
    for (((p, &g), m), v) in param
        .iter_mut()
        .zip(grad)
        .zip(m.iter_mut())
        .zip(v.iter_mut())
    {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Optimizer with per-parameter state slots indexed by parameter position.
/// Slots are allocated on first use and start at zero.
#[derive(Clone, Debug, PartialEq)]
pub enum Optimizer<T> {
    Sgd {
        cfg: SgdConfig,
        velocity: Vec<Option<Vec<T>>>,
        steps: u64,
    },
    Adam {
        cfg: AdamConfig,
        m: Vec<Option<Vec<T>>>,
        v: Vec<Option<Vec<T>>>,
        t: u64,
    },
}

impl<T: Element> Optimizer<T> {
    pub fn new(cfg: &OptimizerConfig) -> Self {
        match cfg {
            OptimizerConfig::Sgd(c) => Optimizer::Sgd {
                cfg: c.clone(),
                velocity: Vec::new(),
                steps: 0,
            },
            OptimizerConfig::Adam(c) => Optimizer::Adam {
                cfg: c.clone(),
                m: Vec::new(),
                v: Vec::new(),
                t: 0,
            },
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Optimizer::Sgd { .. } => "sgd",
            Optimizer::Adam { .. } => "adam",
        }
    }

    /// Steps taken so far.
    pub fn steps(&self) -> u64 {
        match self {
            Optimizer::Sgd { steps, .. } => *steps,
            Optimizer::Adam { t, .. } => *t,
        }
    }

    /// True when no state has been accumulated: step count zero and every
    /// allocated slot all zeros.
    pub fn is_fresh(&self) -> bool {
        let zero = |slots: &[Option<Vec<T>>]| {
            slots
                .iter()
                .flatten()
                .all(|s| s.iter().all(|v| *v == T::zero()))
        };
        match self {
            Optimizer::Sgd {
                velocity, steps, ..
            } => *steps == 0 && zero(velocity),
            Optimizer::Adam { m, v, t, .. } => *t == 0 && zero(m) && zero(v),
        }
    }

    /// Update every optimizable parameter from its stored gradient. Gradients
    /// are checked before anything is written, so a non-finite gradient leaves
    /// the store untouched.
    pub fn step(&mut self, store: &mut ParameterStore<T>) -> Result<()> {
        for (_, p) in store.iter() {
            if !p.is_optimizable() {
                continue;
            }
            let g = p
                .tensor
                .grad()
                .ok_or_else(|| Error::Usage(format!("parameter {} has no gradient", p.name)))?;
            if let Some(pos) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient in {} at element {pos}",
                    p.name
                )));
            }
        }
        let n = store.len();
        match self {
            Optimizer::Sgd {
                cfg,
                velocity,
                steps,
            } => {
                velocity.resize(n.max(velocity.len()), None);
                for id in store.ids().collect::<Vec<_>>() {
                    let p = store.get_mut(id);
                    if !p.is_optimizable() {
                        continue;
                    }
                    let len = p.tensor.len();
                    let vel = velocity[id.index()].get_or_insert_with(|| vec![T::zero(); len]);
                    let (data, g) = p.tensor.data_and_grad_mut();
                    sgd_update(data, g.unwrap_or(&[]), vel, cfg);
                }
                *steps += 1;
            }
            Optimizer::Adam { cfg, m, v, t } => {
                m.resize(n.max(m.len()), None);
                v.resize(n.max(v.len()), None);
                *t += 1;
                for id in store.ids().collect::<Vec<_>>() {
                    let p = store.get_mut(id);
                    if !p.is_optimizable() {
                        continue;
                    }
                    let len = p.tensor.len();
                    let mi = m[id.index()].get_or_insert_with(|| vec![T::zero(); len]);
                    let vi = v[id.index()].get_or_insert_with(|| vec![T::zero(); len]);
                    let (data, g) = p.tensor.data_and_grad_mut();
                    adam_update(data, g.unwrap_or(&[]), mi, vi, *t, cfg);
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Flat form of a schedule segment as written in a run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentSpec {
    pub optimizer: OptimizerKind,
    pub epochs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub momentum: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
}

impl SegmentSpec {
    pub fn to_segment(&self) -> Result<Segment> {
        let optimizer = match self.optimizer {
            OptimizerKind::Sgd => {
                if self.beta1.is_some() || self.beta2.is_some() || self.epsilon.is_some() {
                    return Err(Error::Config(
                        "beta1/beta2/epsilon apply to adam segments only".into(),
                    ));
                }
                let d = SgdConfig::default();
                OptimizerConfig::Sgd(SgdConfig {
                    learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
                    momentum: self.momentum.unwrap_or(d.momentum),
                })
            }
            OptimizerKind::Adam => {
                if self.momentum.is_some() {
                    return Err(Error::Config(
                        "momentum applies to sgd segments only".into(),
                    ));
                }
                let d = AdamConfig::default();
                OptimizerConfig::Adam(AdamConfig {
                    learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
                    beta1: self.beta1.unwrap_or(d.beta1),
                    beta2: self.beta2.unwrap_or(d.beta2),
                    epsilon: self.epsilon.unwrap_or(d.epsilon),
                })
            }
        };
        Ok(Segment {
            optimizer,
            epochs: self.epochs,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
}

impl Segment {
    pub fn adam(epochs: usize) -> Self {
        Segment {
            optimizer: OptimizerConfig::Adam(AdamConfig::default()),
            epochs,
        }
    }

    pub fn sgd(epochs: usize) -> Self {
        Segment {
            optimizer: OptimizerConfig::Sgd(SgdConfig::default()),
            epochs,
        }
    }
}

/// Ordered optimizer segments. Parameters carry across segment boundaries;
/// optimizer state starts fresh in every segment.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    segments: Vec<Segment>,
}

/// Which segment drives a given epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EpochAssignment {
    /// 1-based epoch number.
    pub epoch: usize,
    pub segment: usize,
    pub optimizer: &'static str,
    /// First epoch of its segment.
    pub starts_segment: bool,
}

impl Schedule {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::Spec("schedule has no segments".into()));
        }
        for (i, s) in segments.iter().enumerate() {
            if s.epochs == 0 {
                return Err(Error::Spec(format!("segment {i} has zero epochs")));
            }
            s.optimizer.validate()?;
        }
        Ok(Schedule { segments })
    }

    pub fn from_specs(specs: &[SegmentSpec]) -> Result<Self> {
        Schedule::new(
            specs
                .iter()
                .map(SegmentSpec::to_segment)
                .collect::<Result<_>>()?,
        )
    }

    pub fn single(segment: Segment) -> Result<Self> {
        Schedule::new(vec![segment])
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn total_epochs(&self) -> usize {
        self.segments.iter().map(|s| s.epochs).sum()
    }

    /// Short label such as `adam(3)+sgd(2)`.
    pub fn describe(&self) -> String {
        let parts: Vec<String> = self
            .segments
            .iter()
            .map(|s| format!("{}({})", s.optimizer.label(), s.epochs))
            .collect();
        parts.join("+")
    }
}

/// Per-epoch optimizer assignment of a schedule.
pub fn run_schedule(schedule: &Schedule) -> Vec<EpochAssignment> {
    let mut out = Vec::with_capacity(schedule.total_epochs());
    for (i, s) in schedule.segments.iter().enumerate() {
        for k in 0..s.epochs {
            out.push(EpochAssignment {
                epoch: out.len() + 1,
                segment: i,
                optimizer: s.optimizer.label(),
                starts_segment: k == 0,
            });
        }
    }
    out
}
