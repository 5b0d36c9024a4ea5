//! Bit-exact binary snapshots of a training run.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "LWCKPT01" | u32 version
//! str  model config (JSON)
//! u32  groups   { str id, u8 trainable, u32 params { str name, u32 rank, u64 dims.., values } }
//! u32  opt      { str id, u64 step, u32 params { u64 len, m values, v values } }
//! u64  steps_done | str run metadata | u64 records { str mode, i128 num, i128 den (tokens), i128 num, i128 den (cumulative) }
//! [32] SHA-256 of everything above
//! ```
//!
//! Values are stored at the run's precision (`f32` or `f64`), so a reload is
//! exact.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::cost::{Rational, StepCost};
use crate::error::{bail, Error, Result};
use crate::model::{init_model, GroupId, ModelConfig, ParameterStore};
use crate::numkernel::{DenseArray, Scalar};
use crate::optim::{GroupState, OptState};
use crate::schedule::Mode;

const MAGIC: &[u8; 8] = b"LWCKPT01";
const VERSION: u32 = 1;

/// Loop position and metered cost at the time of the snapshot.
#[derive(Clone, Debug, PartialEq)]
pub struct RunState {
    pub steps_done: u64,
    /// Free-form JSON the harness uses to refuse mismatched resumes.
    pub meta: String,
    pub ledger: Vec<StepCost>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<F> {
    pub store: ParameterStore<F>,
    pub opt: OptState<F>,
    pub run: RunState,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn i128(&mut self, v: i128) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn rational(&mut self, r: Rational) {
        self.i128(*r.numer());
        self.i128(*r.denom());
    }
    fn values<F: Scalar>(&mut self, vs: &[F]) {
        vs.iter().for_each(|v| v.write_le(&mut self.0));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            bail!(Checkpoint, "truncated checkpoint at byte {}", self.pos);
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn i128(&mut self) -> Result<i128> {
        Ok(i128::from_le_bytes(self.take(16)?.try_into().expect("16 bytes")))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("string is not UTF-8".into()))
    }
    fn rational(&mut self) -> Result<Rational> {
        let (n, d) = (self.i128()?, self.i128()?);
        if d <= 0 {
            bail!(Checkpoint, "invalid rational denominator {d}");
        }
        Ok(Rational::new(n, d))
    }
    fn values<F: Scalar>(&mut self, n: usize) -> Result<Vec<F>> {
        let bytes = self.take(n.checked_mul(F::BYTES).ok_or_else(|| Error::Checkpoint("length overflow".into()))?)?;
        Ok(bytes.chunks_exact(F::BYTES).map(F::read_le).collect())
    }
}

pub fn encode<F: Scalar>(store: &ParameterStore<F>, opt: &OptState<F>, run: &RunState) -> Result<Vec<u8>> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    let cfg = serde_json::to_string(&store.config).map_err(|e| Error::Checkpoint(e.to_string()))?;
    w.str(&cfg);

    let groups: Vec<_> = store.groups().collect();
    w.u32(groups.len() as u32);
    for g in groups {
        w.str(&g.id.name());
        w.u8(g.trainable as u8);
        w.u32(g.params.len() as u32);
        for p in &g.params {
            w.str(p.name);
            w.u32(p.buf.value.shape().len() as u32);
            p.buf.value.shape().iter().for_each(|&d| w.u64(d as u64));
            w.values(p.buf.value.data());
        }
    }

    w.u32(opt.groups.len() as u32);
    for (id, st) in &opt.groups {
        w.str(&id.name());
        w.u64(st.step);
        w.u32(st.m.len() as u32);
        for (m, v) in st.m.iter().zip(&st.v) {
            w.u64(m.len() as u64);
            w.values(m);
            w.values(v);
        }
    }

    w.u64(run.steps_done);
    w.str(&run.meta);
    w.u64(run.ledger.len() as u64);
    for rec in &run.ledger {
        w.str(&rec.mode.label());
        w.rational(rec.tokens);
        w.rational(rec.cumulative);
    }
    let digest = Sha256::digest(&w.0);
    w.0.extend_from_slice(&digest);
    Ok(w.0)
}

pub fn decode<F: Scalar>(bytes: &[u8]) -> Result<Checkpoint<F>> {
    if bytes.len() < MAGIC.len() + 4 + 32 || &bytes[..MAGIC.len()] != MAGIC {
        bail!(Checkpoint, "not a checkpoint file");
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        bail!(Checkpoint, "checkpoint digest mismatch");
    }
    let mut r = Reader { buf: body, pos: MAGIC.len() };
    let version = r.u32()?;
    if version != VERSION {
        bail!(Checkpoint, "unsupported checkpoint version {version}");
    }
    let cfg: ModelConfig = serde_json::from_str(&r.str()?).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if cfg.precision != F::PRECISION {
        bail!(
            Checkpoint,
            "checkpoint holds {} values, loader expects {}",
            cfg.precision.as_str(),
            F::PRECISION.as_str()
        );
    }
    let mut store: ParameterStore<F> = init_model(&cfg)?;

    let n_groups = r.u32()? as usize;
    if n_groups != store.groups().count() {
        bail!(Checkpoint, "expected {} groups, found {n_groups}", store.groups().count());
    }
    for _ in 0..n_groups {
        let id = parse_group(&r.str()?)?;
        let trainable = r.u8()? != 0;
        let group = store.group_mut(id).ok_or_else(|| Error::Checkpoint(format!("unknown group {id}")))?;
        group.trainable = trainable;
        let n = r.u32()? as usize;
        if n != group.params.len() {
            bail!(Checkpoint, "group {id}: expected {} params, found {n}", group.params.len());
        }
        for p in &mut group.params {
            let name = r.str()?;
            if name != p.name {
                bail!(Checkpoint, "group {id}: expected param {}, found {name}", p.name);
            }
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            if shape != p.buf.value.shape() {
                bail!(Checkpoint, "{id}.{name}: shape {shape:?} does not match config {:?}", p.buf.value.shape());
            }
            let vals = r.values::<F>(p.buf.value.len())?;
            p.buf.value = DenseArray::new(shape, vals)?;
        }
    }

    let mut opt = OptState::new();
    for _ in 0..r.u32()? {
        let id = parse_group(&r.str()?)?;
        let step = r.u64()?;
        let group = store.group(id).ok_or_else(|| Error::Checkpoint(format!("unknown group {id}")))?;
        let n = r.u32()? as usize;
        if n != group.params.len() {
            bail!(Checkpoint, "optimizer state for {id} has {n} params");
        }
        let mut m = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        for p in &group.params {
            let len = r.u64()? as usize;
            if len != p.buf.value.len() {
                bail!(Checkpoint, "optimizer moment for {id}.{} has length {len}", p.name);
            }
            m.push(r.values::<F>(len)?);
            v.push(r.values::<F>(len)?);
        }
        opt.groups.insert(id, GroupState { step, m, v });
    }

    let steps_done = r.u64()?;
    let meta = r.str()?;
    let n_rec = r.u64()? as usize;
    let mut ledger = Vec::with_capacity(n_rec.min(1 << 24));
    for _ in 0..n_rec {
        let label = r.str()?;
        let mode = Mode::parse(&label).ok_or_else(|| Error::Checkpoint(format!("unknown mode {label}")))?;
        ledger.push(StepCost {
            mode,
            tokens: r.rational()?,
            cumulative: r.rational()?,
        });
    }
    if r.pos != body.len() {
        bail!(Checkpoint, "{} trailing bytes", body.len() - r.pos);
    }
    Ok(Checkpoint {
        store,
        opt,
        run: RunState { steps_done, meta, ledger },
    })
}

fn parse_group(s: &str) -> Result<GroupId> {
    GroupId::parse(s).ok_or_else(|| Error::Checkpoint(format!("unknown group name {s}")))
}

/// Writes through a temporary file and a rename, so a crash never leaves a
/// half-written checkpoint under `path`.
pub fn save<F: Scalar>(path: &Path, store: &ParameterStore<F>, opt: &OptState<F>, run: &RunState) -> Result<()> {
    let bytes = encode(store, opt, run)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load<F: Scalar>(path: &Path) -> Result<Checkpoint<F>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::Precision;
    use crate::optim::register_new_groups;

    fn cfg(precision: Precision) -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            d_model: 8,
            n_heads: 2,
            context_len: 8,
            vocab_size: 259,
            precision,
            init_seed: 3,
        }
    }

    fn populated<F: Scalar>(precision: Precision) -> (ParameterStore<F>, OptState<F>, RunState) {
        let mut store: ParameterStore<F> = init_model(&cfg(precision)).unwrap();
        store.blocks[1].trainable = false;
        let mut opt = OptState::new();
        register_new_groups(&mut opt, &store, &[GroupId::Embed, GroupId::Block(1)]).unwrap();
        let st = opt.groups.get_mut(&GroupId::Block(1)).unwrap();
        st.step = 7;
        st.m[2][5] = F::of(0.125);
        st.v[2][5] = F::of(1e-30);
        let run = RunState {
            steps_done: 7,
            meta: "{\"x\":1}".into(),
            ledger: vec![
                StepCost { mode: Mode::Phase1 { stage: 1 }, tokens: Rational::new(1, 3), cumulative: Rational::new(2, 3) },
                StepCost { mode: Mode::Continual, tokens: Rational::from_integer(5), cumulative: Rational::new(62, 3) },
            ],
        };
        (store, opt, run)
    }

    #[test]
    fn round_trip_is_exact_in_both_precisions() {
        let (s, o, r) = populated::<f32>(Precision::Fast32);
        let back: Checkpoint<f32> = decode(&encode(&s, &o, &r).unwrap()).unwrap();
        assert_eq!(back.store, s);
        assert_eq!(back.opt, o);
        assert_eq!(back.run, r);
        let (s, o, r) = populated::<f64>(Precision::Verify64);
        let back: Checkpoint<f64> = decode(&encode(&s, &o, &r).unwrap()).unwrap();
        assert_eq!((back.store, back.opt, back.run), (s, o, r));
    }

    #[test]
    fn corruption_and_precision_mismatch_are_rejected() {
        let (s, o, r) = populated::<f32>(Precision::Fast32);
        let mut bytes = encode(&s, &o, &r).unwrap();
        assert!(matches!(decode::<f64>(&bytes), Err(Error::Checkpoint(_))));
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        assert!(matches!(decode::<f32>(&bytes), Err(Error::Checkpoint(_))));
        assert!(matches!(decode::<f32>(b"garbage"), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn save_and_load_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.ckpt");
        let (s, o, r) = populated::<f32>(Precision::Fast32);
        save(&path, &s, &o, &r).unwrap();
        let back: Checkpoint<f32> = load(&path).unwrap();
        assert_eq!(back.store, s);
        assert!(!path.with_extension("tmp").exists());
    }
}
