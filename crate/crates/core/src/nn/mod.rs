//! MBConv network assembly, parameter storage and checkpoints.

mod checkpoint;
pub mod layers;
mod network;
mod params;
mod spec;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint,
    CheckpointHeader, ParamEntry, TrainingMetadata, DSQC_MAGIC, DSQC_VERSION,
};
pub use layers::{se_width, Backend, EagerBackend, MbConvBlock, SqueezeExcite, TapeBackend};
pub use network::{build_network, LayerRow, Mode, Network, StepOutput, TraceEntry};
pub use params::{
    count_params, Bindings, ParamCounts, ParamId, ParamKind, Parameter, ParameterStore, StatUpdate,
};
pub use spec::{BatchNormSpec, MbConvSpec, NetworkSpec, StemSpec, PRESET_NAMES};
