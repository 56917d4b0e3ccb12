//! On-disk formats: the model bundle and the tensor batch file.
//!
//! Both readers treat their input as untrusted: every offset, extent, and
//! length is validated with checked arithmetic before any allocation, and
//! malformed input yields an error, never a panic.

mod batch;
mod model;

pub use batch::{batch_to_bytes, parse_batch, read_batch, write_batch};
pub use model::{
    model_from_parts, model_to_parts, parse_manifest, read_model, write_model, LayerManifest,
    ModelManifest,
};
