use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::VOCAB_SIZE;
use crate::error::{bail, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

/// A tokenized split: concatenated documents plus a content digest.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenStream {
    pub tokens: Vec<u32>,
    pub documents: usize,
    pub split: Split,
    digest: String,
}

impl TokenStream {
    pub fn new(tokens: Vec<u32>, documents: usize, split: Split) -> Self {
        let digest = digest_tokens(&tokens);
        TokenStream {
            tokens,
            documents,
            split,
            digest,
        }
    }

    /// Hex SHA-256 of the little-endian `u16` token encoding.
    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

fn encode(tokens: &[u32]) -> Vec<u8> {
    tokens.iter().flat_map(|&t| (t as u16).to_le_bytes()).collect()
}

fn digest_tokens(tokens: &[u32]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(encode(tokens));
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// JSON sidecar written next to a `.bin` token file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamSidecar {
    pub format: String,
    pub digest: String,
    pub vocab_size: usize,
    pub split: Split,
    pub tokens: usize,
    pub documents: usize,
}

fn sidecar_path(bin: &Path) -> PathBuf {
    bin.with_extension("json")
}

/// Writes `path` (little-endian u16 ids) and `path.with_extension("json")`.
pub fn write_stream(stream: &TokenStream, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, encode(&stream.tokens)).map_err(|e| Error::io(path, e))?;
    let side = StreamSidecar {
        format: "u16le".into(),
        digest: stream.digest.clone(),
        vocab_size: VOCAB_SIZE,
        split: stream.split,
        tokens: stream.tokens.len(),
        documents: stream.documents,
    };
    let side_path = sidecar_path(path);
    let text = serde_json::to_string_pretty(&side).expect("sidecar serializes");
    fs::write(&side_path, text + "\n").map_err(|e| Error::io(&side_path, e))
}

/// Reads a token file and checks it against its sidecar.
pub fn read_stream(path: &Path) -> Result<TokenStream> {
    let side_path = sidecar_path(path);
    let side_text = fs::read_to_string(&side_path).map_err(|e| Error::io(&side_path, e))?;
    let side: StreamSidecar =
        serde_json::from_str(&side_text).map_err(|e| Error::Data(format!("{}: {e}", side_path.display())))?;
    if side.format != "u16le" || side.vocab_size != VOCAB_SIZE {
        bail!(Data, "{}: unsupported format {} / vocab {}", side_path.display(), side.format, side.vocab_size);
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 2 != 0 {
        bail!(Data, "{}: odd byte length", path.display());
    }
    let tokens: Vec<u32> = bytes
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]) as u32)
        .collect();
    if tokens.iter().any(|&t| t as usize >= VOCAB_SIZE) {
        bail!(Data, "{}: token outside vocabulary", path.display());
    }
    let stream = TokenStream::new(tokens, side.documents, side.split);
    if stream.digest != side.digest || stream.len() != side.tokens {
        bail!(Data, "{}: content does not match sidecar digest", path.display());
    }
    Ok(stream)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_round_trip_and_tamper_detection() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.bin");
        let s = TokenStream::new(vec![256, 1, 2, 255, 257], 1, Split::Train);
        write_stream(&s, &path).unwrap();
        assert_eq!(read_stream(&path).unwrap(), s);
        fs::write(&path, [0u8, 1, 0, 1]).unwrap();
        assert!(matches!(read_stream(&path), Err(Error::Data(_))));
    }
}
