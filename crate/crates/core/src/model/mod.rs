//! The joint classification/segmentation network.

pub mod attention;
pub mod backbone;
pub mod checkpoint;
pub mod config;
pub mod head;
pub mod network;

pub use attention::{
    classification_gated_attention, classification_gated_attention_backward, softmax_rows,
    SpatialSelfAttention,
};
pub use config::{AsppConfig, BackboneKind, ModelConfig};
pub use head::{ClassificationHead, CLASSIFIER_INIT_STD};
pub use network::{build_model, ForwardCache, InitMode, Model, SegClassOutput};
