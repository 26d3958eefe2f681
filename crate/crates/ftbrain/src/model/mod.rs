//! Network construction, freeze groups, checkpoints, and source-task
//! pretraining.

pub mod checkpoint;
pub mod net;
pub mod pretrain;
pub mod spec;

pub use checkpoint::{load_checkpoint, read_checkpoint_meta, save_checkpoint, CheckpointMeta};
pub use net::{apply_freeze, build_model, ConvLayer, DenseLayer, Model, Trace};
pub use pretrain::{
    pretrain_source, source_task_image, transfer_conv_weights, PretrainReport, SourceTaskConfig,
};
pub use spec::{BlockPlan, FreezeGroup, Head, ModelSpec};
