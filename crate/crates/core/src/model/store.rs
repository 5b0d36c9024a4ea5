use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::block_param as bp;
use super::config::ModelConfig;
use crate::error::{bail, Result};
use crate::numkernel::{DenseArray, DualBuffer, Scalar};

const INIT_STD: f64 = 0.02;

/// Identity of a parameter group. Blocks are numbered from 1 (bottom) to L.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GroupId {
    /// Token and position embeddings; the token table doubles as the output head.
    Embed,
    Block(usize),
    /// Final layer norm.
    Head,
}

impl GroupId {
    pub fn name(&self) -> String {
        self.to_string()
    }

    pub fn parse(s: &str) -> Option<GroupId> {
        match s {
            "embed" => Some(GroupId::Embed),
            "head" => Some(GroupId::Head),
            _ => s.strip_prefix("block.")?.parse().ok().map(GroupId::Block),
        }
    }

    /// Stream index of the group's initialization RNG.
    fn stream(&self, n_layers: usize) -> u64 {
        match *self {
            GroupId::Embed => 0,
            GroupId::Block(j) => j as u64,
            GroupId::Head => n_layers as u64 + 1,
        }
    }
}

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupId::Embed => f.write_str("embed"),
            GroupId::Block(j) => write!(f, "block.{j}"),
            GroupId::Head => f.write_str("head"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<F> {
    pub name: &'static str,
    pub buf: DualBuffer<F>,
}

/// All parameters of one layer (or of the embeddings/head), with a freeze flag.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGroup<F> {
    pub id: GroupId,
    pub trainable: bool,
    pub params: Vec<Param<F>>,
}

impl<F: Scalar> ParamGroup<F> {
    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(|p| p.buf.zero_grad());
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.buf.value.len()).sum()
    }

    pub fn value(&self, idx: usize) -> &DenseArray<F> {
        &self.params[idx].buf.value
    }

    /// Little-endian bytes of every value, in parameter order.
    pub fn value_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.param_count() * F::BYTES);
        for p in &self.params {
            p.buf.value.data().iter().for_each(|v| v.write_le(&mut out));
        }
        out
    }
}

/// Every trainable array of the model, grouped per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterStore<F> {
    pub config: ModelConfig,
    pub embed: ParamGroup<F>,
    pub blocks: Vec<ParamGroup<F>>,
    pub head: ParamGroup<F>,
}

impl<F: Scalar> ParameterStore<F> {
    pub fn groups(&self) -> impl Iterator<Item = &ParamGroup<F>> {
        std::iter::once(&self.embed).chain(self.blocks.iter()).chain(std::iter::once(&self.head))
    }

    pub fn groups_mut(&mut self) -> impl Iterator<Item = &mut ParamGroup<F>> {
        std::iter::once(&mut self.embed)
            .chain(self.blocks.iter_mut())
            .chain(std::iter::once(&mut self.head))
    }

    pub fn group(&self, id: GroupId) -> Option<&ParamGroup<F>> {
        match id {
            GroupId::Embed => Some(&self.embed),
            GroupId::Head => Some(&self.head),
            GroupId::Block(j) if j >= 1 => self.blocks.get(j - 1),
            GroupId::Block(_) => None,
        }
    }

    pub fn group_mut(&mut self, id: GroupId) -> Option<&mut ParamGroup<F>> {
        match id {
            GroupId::Embed => Some(&mut self.embed),
            GroupId::Head => Some(&mut self.head),
            GroupId::Block(j) if j >= 1 => self.blocks.get_mut(j - 1),
            GroupId::Block(_) => None,
        }
    }

    /// Block `j`, counted from 1.
    pub fn block(&self, j: usize) -> &ParamGroup<F> {
        &self.blocks[j - 1]
    }

    pub fn zero_grads(&mut self) {
        self.groups_mut().for_each(ParamGroup::zero_grads);
    }

    pub fn param_count(&self) -> usize {
        self.groups().map(ParamGroup::param_count).sum()
    }

    /// Blocks `grad_depth_lo..=active_depth` become trainable, every other
    /// block frozen; embeddings and final norm follow `embeddings_and_head`.
    pub fn set_trainable(&mut self, active_depth: usize, grad_depth_lo: usize, embeddings_and_head: bool) {
        for (idx, g) in self.blocks.iter_mut().enumerate() {
            let j = idx + 1;
            g.trainable = j >= grad_depth_lo && j <= active_depth;
        }
        self.embed.trainable = embeddings_and_head;
        self.head.trainable = embeddings_and_head;
    }

    /// Re-draws a group from its own initialization stream. The result is
    /// identical to what [`init_model`] produced for that group.
    pub fn reinit_group(&mut self, id: GroupId) -> Result<()> {
        let cfg = self.config.clone();
        let fresh = init_group::<F>(&cfg, id)?;
        let slot = match self.group_mut(id) {
            Some(g) => g,
            None => bail!(Schedule, "no parameter group {id}"),
        };
        slot.params = fresh.params;
        Ok(())
    }
}

fn normal_array<F: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> DenseArray<F> {
    let dist = Normal::new(0.0, std).expect("positive std");
    DenseArray::from_fn(shape, |_| F::of(dist.sample(rng)))
}

fn param<F: Scalar>(name: &'static str, value: DenseArray<F>) -> Param<F> {
    Param {
        name,
        buf: DualBuffer::new(value),
    }
}

fn init_group<F: Scalar>(cfg: &ModelConfig, id: GroupId) -> Result<ParamGroup<F>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
    rng.set_stream(id.stream(cfg.n_layers));
    let d = cfg.d_model;
    let ones = |n: usize| DenseArray::from_fn(&[n], |_| F::one());
    let params = match id {
        GroupId::Embed => vec![
            param("wte", normal_array(&mut rng, &[cfg.vocab_size, d], INIT_STD)),
            param("wpe", normal_array(&mut rng, &[cfg.context_len, d], INIT_STD)),
        ],
        GroupId::Head => vec![param("lnf.gain", ones(d)), param("lnf.bias", DenseArray::zeros(&[d]))],
        GroupId::Block(j) => {
            if j == 0 || j > cfg.n_layers {
                bail!(Schedule, "block {j} outside 1..={}", cfg.n_layers);
            }
            let resid_std = INIT_STD / (2.0 * cfg.n_layers as f64).sqrt();
            let group = vec![
                param("ln1.gain", ones(d)),
                param("ln1.bias", DenseArray::zeros(&[d])),
                param("attn.qkv.w", normal_array(&mut rng, &[d, 3 * d], INIT_STD)),
                param("attn.qkv.b", DenseArray::zeros(&[3 * d])),
                param("attn.proj.w", normal_array(&mut rng, &[d, d], resid_std)),
                param("attn.proj.b", DenseArray::zeros(&[d])),
                param("ln2.gain", ones(d)),
                param("ln2.bias", DenseArray::zeros(&[d])),
                param("mlp.fc.w", normal_array(&mut rng, &[d, 4 * d], INIT_STD)),
                param("mlp.fc.b", DenseArray::zeros(&[4 * d])),
                param("mlp.proj.w", normal_array(&mut rng, &[4 * d, d], resid_std)),
                param("mlp.proj.b", DenseArray::zeros(&[d])),
            ];
            debug_assert_eq!(group.len(), bp::COUNT);
            group
        }
    };
    Ok(ParamGroup {
        id,
        trainable: true,
        params,
    })
}

/// GPT-2 initialization: N(0, 0.02) weights and embeddings, zero biases,
/// unit layer-norm gains, residual output projections scaled by `1/√(2L)`.
///
/// Each group draws from its own ChaCha stream keyed by `init_seed`, so a
/// group can be re-created later without touching the others.
pub fn init_model<F: Scalar>(cfg: &ModelConfig) -> Result<ParameterStore<F>> {
    cfg.validate()?;
    Ok(ParameterStore {
        config: cfg.clone(),
        embed: init_group(cfg, GroupId::Embed)?,
        blocks: (1..=cfg.n_layers)
            .map(|j| init_group(cfg, GroupId::Block(j)))
            .collect::<Result<_>>()?,
        head: init_group(cfg, GroupId::Head)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::count_params;
    use crate::numkernel::Precision;

    fn cfg(seed: u64) -> ModelConfig {
        ModelConfig {
            n_layers: 4,
            d_model: 32,
            n_heads: 4,
            context_len: 64,
            vocab_size: 259,
            precision: Precision::Verify64,
            init_seed: seed,
        }
    }

    #[test]
    fn count_matches_shape_enumeration() {
        let store = init_model::<f64>(&cfg(1)).unwrap();
        let enumerated: usize = store
            .groups()
            .flat_map(|g| g.params.iter())
            .map(|p| p.buf.value.shape().iter().product::<usize>())
            .sum();
        assert_eq!(enumerated, count_params(&cfg(1)));
        assert_eq!(store.blocks.len(), 4);
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = init_model::<f64>(&cfg(5)).unwrap();
        let b = init_model::<f64>(&cfg(5)).unwrap();
        let c = init_model::<f64>(&cfg(6)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.embed.value_bytes(), c.embed.value_bytes());
    }

    #[test]
    fn reinit_reproduces_original_block() {
        let original = init_model::<f32>(&cfg(3)).unwrap();
        let mut store = original.clone();
        for p in &mut store.blocks[2].params {
            p.buf.value.fill(7.0);
        }
        store.reinit_group(GroupId::Block(3)).unwrap();
        assert_eq!(store, original);
    }

    #[test]
    fn group_names_round_trip() {
        for id in [GroupId::Embed, GroupId::Head, GroupId::Block(1), GroupId::Block(12)] {
            assert_eq!(GroupId::parse(&id.name()), Some(id));
        }
        assert_eq!(GroupId::parse("block.x"), None);
    }

    #[test]
    fn trainable_mask_follows_depth_window() {
        let mut store = init_model::<f64>(&cfg(0)).unwrap();
        store.set_trainable(3, 3, false);
        let flags: Vec<bool> = store.blocks.iter().map(|g| g.trainable).collect();
        assert_eq!(flags, vec![false, false, true, false]);
        assert!(!store.embed.trainable && !store.head.trainable);
    }
}
