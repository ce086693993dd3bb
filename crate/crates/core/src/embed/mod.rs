//! Embedding storage, dataset manifests, and open-set pool construction.

mod format;
mod manifest;
mod pool;

pub use format::{read_embeddings, write_embeddings, EmbeddingMatrix, EMB1_HEADER_LEN, EMB1_MAGIC};
pub use manifest::{DatasetManifest, PromptMeta};
pub use pool::{build_open_set_pool, oracle_annotate, OpenSetPool, PoolSpec};
