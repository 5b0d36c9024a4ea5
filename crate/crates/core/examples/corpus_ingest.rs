//! Byte-level tokenization, the document-level train/val split and
//! deterministic batching.
//!
//! cargo run --example corpus_ingest -- [files...]
//!
//! Without files a synthetic story corpus is used.

use layerwise::corpus::{ingest, ingest_documents, synthetic, BatchSpec, Batcher, DocSplitting};

fn main() -> layerwise::Result<()> {
    let files: Vec<String> = std::env::args().skip(1).collect();
    let (train, val) = if files.is_empty() {
        let docs = synthetic::documents_with_size(0, 200_000);
        println!("sample document:\n  {}\n", docs[0]);
        ingest_documents(&docs, 0.1, 0)?
    } else {
        ingest(&files, 0.1, 0, DocSplitting::Paragraphs)?
    };
    println!("train: {} tokens in {} documents ({})", train.len(), train.documents, train.digest());
    println!("val:   {} tokens in {} documents ({})", val.len(), val.documents, val.digest());
    let batcher = Batcher::new(&train, BatchSpec { batch_size: 4, seq_len: 64 }, 0)?;
    println!("{} windows of 64; one epoch is {} steps of batch 4", batcher.windows(), batcher.windows() / 4);
    let b = batcher.batch_at(0);
    let text: String = b.inputs.row(0).iter().filter(|&&t| t < 256).map(|&t| t as u8 as char).collect();
    println!("first input row: {text:?}");
    Ok(())
}
