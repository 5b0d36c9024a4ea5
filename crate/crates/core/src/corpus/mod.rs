//! Byte-level data pipeline.
//!
//! Text is split into documents, each document becomes
//! `[BOS, bytes…, EOS]`, and documents are assigned to the training or
//! validation split by a seeded hash of their content. Batches are cut from
//! the concatenated stream in a fixed, seed-determined order so that runs
//! with the same seed see the same batch at the same step.

mod batch;
mod ingest;
mod stream;
pub mod synthetic;

pub use batch::{batches, fixed_batches, BatchSpec, Batcher, TokenGrid, TrainingBatch};
pub use ingest::{encode_document, ingest, ingest_documents, split_documents, DocSplitting};
pub use stream::{read_stream, write_stream, Split, StreamSidecar, TokenStream};

pub const BOS: u32 = 256;
pub const EOS: u32 = 257;
pub const PAD: u32 = 258;
/// 256 byte values plus BOS, EOS and PAD.
pub const VOCAB_SIZE: usize = 259;
