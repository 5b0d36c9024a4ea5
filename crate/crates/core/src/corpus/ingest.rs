use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::stream::{Split, TokenStream};
use super::{BOS, EOS};
use crate::error::{bail, Error, Result};

/// How a file is cut into documents.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DocSplitting {
    /// Blank-line separated paragraphs.
    #[default]
    Paragraphs,
    /// One document per non-empty line.
    Lines,
    /// The whole file is one document.
    WholeFile,
}

impl DocSplitting {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "paragraphs" => Some(DocSplitting::Paragraphs),
            "lines" => Some(DocSplitting::Lines),
            "whole" | "file" | "whole-file" => Some(DocSplitting::WholeFile),
            _ => None,
        }
    }
}

/// `[BOS, b₀, b₁, …, EOS]`
pub fn encode_document(text: &[u8]) -> Vec<u32> {
    let mut out = Vec::with_capacity(text.len() + 2);
    out.push(BOS);
    out.extend(text.iter().map(|&b| b as u32));
    out.push(EOS);
    out
}

fn trim(s: &[u8]) -> &[u8] {
    let start = s.iter().position(|b| !b.is_ascii_whitespace()).unwrap_or(s.len());
    let end = s.iter().rposition(|b| !b.is_ascii_whitespace()).map_or(start, |e| e + 1);
    &s[start..end.max(start)]
}

pub fn split_documents(text: &[u8], how: DocSplitting) -> Vec<&[u8]> {
    match how {
        DocSplitting::WholeFile => vec![trim(text)].into_iter().filter(|d| !d.is_empty()).collect(),
        DocSplitting::Lines => text.split(|&b| b == b'\n').map(trim).filter(|d| !d.is_empty()).collect(),
        DocSplitting::Paragraphs => {
            let mut docs = Vec::new();
            let mut start = 0;
            let mut i = 0;
            while i < text.len() {
                if text[i] == b'\n' {
                    // a blank line: newline, optional spaces, newline
                    let mut j = i + 1;
                    while j < text.len() && (text[j] == b' ' || text[j] == b'\t' || text[j] == b'\r') {
                        j += 1;
                    }
                    if j < text.len() && text[j] == b'\n' {
                        docs.push(trim(&text[start..i]));
                        start = j + 1;
                        i = j + 1;
                        continue;
                    }
                }
                i += 1;
            }
            docs.push(trim(&text[start..]));
            docs.into_iter().filter(|d| !d.is_empty()).collect()
        }
    }
}

/// Uniform value in [0, 1) derived from `seed` and the document bytes.
fn split_key(seed: u64, doc: &[u8]) -> f64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(doc);
    let bytes: [u8; 8] = h.finalize()[..8].try_into().unwrap();
    (u64::from_le_bytes(bytes) >> 11) as f64 / (1u64 << 53) as f64
}

/// Tokenizes in-memory documents and assigns each to a split. Identical
/// documents always land in the same split.
pub fn ingest_documents<D: AsRef<[u8]>>(docs: &[D], val_fraction: f64, seed: u64) -> Result<(TokenStream, TokenStream)> {
    if !(0.0..1.0).contains(&val_fraction) {
        bail!(Config, "val_fraction must lie in [0, 1), got {val_fraction}");
    }
    let docs: Vec<&[u8]> = docs.iter().map(AsRef::as_ref).filter(|d| !d.is_empty()).collect();
    if docs.is_empty() {
        bail!(Data, "corpus has no documents");
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    let (mut n_train, mut n_val) = (0, 0);
    for doc in docs {
        if split_key(seed, doc) < val_fraction {
            val.extend(encode_document(doc));
            n_val += 1;
        } else {
            train.extend(encode_document(doc));
            n_train += 1;
        }
    }
    Ok((
        TokenStream::new(train, n_train, Split::Train),
        TokenStream::new(val, n_val, Split::Val),
    ))
}

/// Reads every file, cuts it into documents and splits them.
pub fn ingest<P: AsRef<Path>>(
    paths: &[P],
    val_fraction: f64,
    seed: u64,
    how: DocSplitting,
) -> Result<(TokenStream, TokenStream)> {
    let mut texts = Vec::with_capacity(paths.len());
    for p in paths {
        let p = p.as_ref();
        texts.push(fs::read(p).map_err(|e| Error::io(p, e))?);
    }
    let docs: Vec<&[u8]> = texts.iter().flat_map(|t| split_documents(t, how)).collect();
    ingest_documents(&docs, val_fraction, seed)
}
