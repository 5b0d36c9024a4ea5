use std::cell::RefCell;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::stream::TokenStream;
use crate::error::{bail, Result};

/// Batch geometry. One optimizer step consumes `batch_size · seq_len` tokens.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchSpec {
    pub batch_size: usize,
    pub seq_len: usize,
}

impl BatchSpec {
    pub fn tokens_per_step(&self) -> u64 {
        (self.batch_size * self.seq_len) as u64
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.seq_len == 0 {
            bail!(Config, "batch_size and seq_len must be positive");
        }
        Ok(())
    }
}

/// Token ids laid out `[batch, seq]`, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenGrid {
    pub batch: usize,
    pub seq: usize,
    pub ids: Vec<u32>,
}

impl TokenGrid {
    pub fn row(&self, b: usize) -> &[u32] {
        &self.ids[b * self.seq..(b + 1) * self.seq]
    }
}

/// Inputs and next-token targets of one step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainingBatch {
    pub inputs: TokenGrid,
    pub targets: TokenGrid,
}

/// Random-access batch source.
///
/// The stream is cut into `⌊(len − 1) / seq_len⌋` non-overlapping windows.
/// Batch `k` takes windows `k·B .. (k+1)·B` of an endless sequence of
/// epochs; epoch 0 visits windows in stream order, every later epoch in a
/// permutation drawn from `seed`. Batch `k` is therefore a pure function of
/// `(stream, spec, seed, k)`, which is what makes resumption exact.
pub struct Batcher<'a> {
    stream: &'a TokenStream,
    spec: BatchSpec,
    seed: u64,
    windows: usize,
    perm: RefCell<Option<(u64, Vec<u32>)>>,
}

impl<'a> Batcher<'a> {
    pub fn new(stream: &'a TokenStream, spec: BatchSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let need = spec.tokens_per_step() as usize + 1;
        if stream.len() < need {
            bail!(
                Data,
                "{:?} stream has {} tokens; one batch of {}×{} needs {need}",
                stream.split,
                stream.len(),
                spec.batch_size,
                spec.seq_len
            );
        }
        Ok(Batcher {
            stream,
            spec,
            seed,
            windows: (stream.len() - 1) / spec.seq_len,
            perm: RefCell::new(None),
        })
    }

    pub fn windows(&self) -> usize {
        self.windows
    }

    /// Epoch the first row of batch `k` belongs to.
    pub fn epoch_of(&self, k: u64) -> u64 {
        k * self.spec.batch_size as u64 / self.windows as u64
    }

    fn window(&self, global: u64) -> usize {
        let epoch = global / self.windows as u64;
        let within = (global % self.windows as u64) as usize;
        if epoch == 0 {
            return within;
        }
        let mut cache = self.perm.borrow_mut();
        if cache.as_ref().map(|(e, _)| *e) != Some(epoch) {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(epoch);
            let mut p: Vec<u32> = (0..self.windows as u32).collect();
            p.shuffle(&mut rng);
            *cache = Some((epoch, p));
        }
        cache.as_ref().unwrap().1[within] as usize
    }

    pub fn batch_at(&self, k: u64) -> TrainingBatch {
        let (b, t) = (self.spec.batch_size, self.spec.seq_len);
        let mut inputs = Vec::with_capacity(b * t);
        let mut targets = Vec::with_capacity(b * t);
        for r in 0..b {
            let w = self.window(k * b as u64 + r as u64);
            let start = w * t;
            inputs.extend_from_slice(&self.stream.tokens[start..start + t]);
            targets.extend_from_slice(&self.stream.tokens[start + 1..start + t + 1]);
        }
        TrainingBatch {
            inputs: TokenGrid { batch: b, seq: t, ids: inputs },
            targets: TokenGrid { batch: b, seq: t, ids: targets },
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = TrainingBatch> + '_ {
        (0u64..).map(move |k| self.batch_at(k))
    }
}

/// Endless batch iterator starting at batch 0.
pub fn batches(stream: &TokenStream, spec: BatchSpec, seed: u64) -> Result<impl Iterator<Item = TrainingBatch> + '_> {
    let batcher = Batcher::new(stream, spec, seed)?;
    Ok((0u64..).map(move |k| batcher.batch_at(k)))
}

/// The first `count` batches in stream order; used as a fixed evaluation set.
pub fn fixed_batches(stream: &TokenStream, spec: BatchSpec, count: usize) -> Result<Vec<TrainingBatch>> {
    let batcher = Batcher::new(stream, spec, 0)?;
    Ok((0..count as u64).map(|k| batcher.batch_at(k)).collect())
}
