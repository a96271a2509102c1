//! Binary checkpoints.
//!
//! ```text
//! "DCFF" | u32 version | params | optimizer | rng | stage
//! section := u32 count, entry*
//! entry   := u16 name_len, name (UTF-8), u8 dtype, u8 rank, rank × u64 dims, raw data
//! ```
//!
//! Everything is little-endian. Dtype codes: 0 = f32, 1 = f64, 2 = u8,
//! 3 = u64. Parameters are written as f64; f32 parameter entries are accepted
//! on load and widened.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use dcff_core::autodiff::{OptimState, SgdConfig};
use dcff_core::config::ModelConfig;
use dcff_core::model;
use dcff_core::{ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::CheckpointError;

pub const MAGIC: &[u8; 4] = b"DCFF";
pub const VERSION: u32 = 1;

const F32: u8 = 0;
const F64: u8 = 1;
const U8: u8 = 2;
const U64: u8 = 3;

type CkResult<T> = std::result::Result<T, CheckpointError>;

/// Position in the stage plan: the next step to run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Cursor {
    pub stage: usize,
    pub step: usize,
}

/// Exact ChaCha8 position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub params: ParamStore,
    pub optim: OptimState,
    pub rng: RngState,
    pub cursor: Cursor,
    /// Samples rejected as degenerate so far.
    pub skipped: u64,
    /// Mean batch loss of every step taken.
    pub history: Vec<f64>,
}

enum Payload {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
    U64(Vec<u64>),
}

struct Entry {
    name: String,
    dims: Vec<usize>,
    payload: Payload,
}

impl Entry {
    fn tensor(name: impl Into<String>, t: &Tensor) -> Self {
        Self {
            name: name.into(),
            dims: t.shape().to_vec(),
            payload: Payload::F64(t.data().to_vec()),
        }
    }

    fn f64s(name: &str, v: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            dims: vec![v.len()],
            payload: Payload::F64(v),
        }
    }

    fn u64s(name: &str, v: Vec<u64>) -> Self {
        Self {
            name: name.into(),
            dims: vec![v.len()],
            payload: Payload::U64(v),
        }
    }

    fn bytes(name: &str, v: Vec<u8>) -> Self {
        Self {
            name: name.into(),
            dims: vec![v.len()],
            payload: Payload::U8(v),
        }
    }

    fn code(&self) -> u8 {
        match self.payload {
            Payload::F32(_) => F32,
            Payload::F64(_) => F64,
            Payload::U8(_) => U8,
            Payload::U64(_) => U64,
        }
    }

    fn wrong(&self, expected: u8) -> CheckpointError {
        CheckpointError::WrongDtype {
            name: self.name.clone(),
            found: self.code(),
            expected,
        }
    }

    fn into_tensor(self) -> CkResult<Tensor> {
        let data = match self.payload {
            Payload::F64(v) => v,
            Payload::F32(v) => v.into_iter().map(f64::from).collect(),
            _ => return Err(self.wrong(F64)),
        };
        let dims = if self.dims.is_empty() {
            vec![1]
        } else {
            self.dims.clone()
        };
        Tensor::new(&dims, data).map_err(|e| CheckpointError::InvalidEntry {
            name: self.name,
            reason: e.to_string(),
        })
    }

    fn into_f64s(self) -> CkResult<Vec<f64>> {
        match self.payload {
            Payload::F64(v) => Ok(v),
            _ => Err(self.wrong(F64)),
        }
    }

    fn into_u64s(self, len: usize) -> CkResult<Vec<u64>> {
        match self.payload {
            Payload::U64(v) if v.len() == len => Ok(v),
            Payload::U64(v) => Err(CheckpointError::InvalidEntry {
                name: self.name,
                reason: format!("expected {len} values, found {}", v.len()),
            }),
            _ => Err(self.wrong(U64)),
        }
    }

    fn into_bytes(self) -> CkResult<Vec<u8>> {
        match self.payload {
            Payload::U8(v) => Ok(v),
            _ => Err(self.wrong(U8)),
        }
    }
}

fn write_section(out: &mut Vec<u8>, entries: &[Entry]) {
    out.extend((entries.len() as u32).to_le_bytes());
    for e in entries {
        out.extend((e.name.len() as u16).to_le_bytes());
        out.extend(e.name.as_bytes());
        out.push(e.code());
        out.push(e.dims.len() as u8);
        for &d in &e.dims {
            out.extend((d as u64).to_le_bytes());
        }
        match &e.payload {
            Payload::F32(v) => v.iter().for_each(|x| out.extend(x.to_le_bytes())),
            Payload::F64(v) => v.iter().for_each(|x| out.extend(x.to_le_bytes())),
            Payload::U8(v) => out.extend(v),
            Payload::U64(v) => v.iter().for_each(|x| out.extend(x.to_le_bytes())),
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &str) -> CkResult<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| CheckpointError::Truncated {
                field: field.to_string(),
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, field: &str) -> CkResult<u8> {
        Ok(self.take(1, field)?[0])
    }

    fn u16(&mut self, field: &str) -> CkResult<u16> {
        Ok(u16::from_le_bytes(self.take(2, field)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, field: &str) -> CkResult<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, field: &str) -> CkResult<u64> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().expect("8 bytes")))
    }

    fn section(&mut self, section: &str) -> CkResult<Vec<Entry>> {
        let count = self.u32(&format!("{section} entry count"))?;
        let mut out = Vec::new();
        for i in 0..count {
            let len = self.u16(&format!("{section} entry {i} name length"))? as usize;
            let raw = self.take(len, &format!("{section} entry {i} name"))?;
            let name = String::from_utf8(raw.to_vec()).map_err(|_| CheckpointError::InvalidEntry {
                name: format!("{section} entry {i}"),
                reason: "name is not UTF-8".into(),
            })?;
            let code = self.u8(&format!("dtype of `{name}`"))?;
            let rank = self.u8(&format!("rank of `{name}`"))? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(self.u64(&format!("dims of `{name}`"))? as usize);
            }
            let n = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| {
                CheckpointError::InvalidEntry {
                    name: name.clone(),
                    reason: format!("dims {dims:?} overflow"),
                }
            })?;
            let field = format!("data of `{name}`");
            let width = match code {
                F32 => 4,
                F64 | U64 => 8,
                U8 => 1,
                _ => return Err(CheckpointError::UnknownDtype { name, code }),
            };
            let bytes = self.take(
                n.checked_mul(width)
                    .ok_or_else(|| CheckpointError::Truncated { field: field.clone() })?,
                &field,
            )?;
            let payload = match code {
                F32 => Payload::F32(
                    bytes
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                F64 => Payload::F64(
                    bytes
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                U64 => Payload::U64(
                    bytes
                        .chunks_exact(8)
                        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                _ => Payload::U8(bytes.to_vec()),
            };
            out.push(Entry { name, dims, payload });
        }
        Ok(out)
    }
}

fn keyed(section: &'static str, entries: Vec<Entry>) -> CkResult<BTreeMap<String, Entry>> {
    let mut map = BTreeMap::new();
    for e in entries {
        let name = e.name.clone();
        if map.insert(name.clone(), e).is_some() {
            return Err(CheckpointError::InvalidEntry {
                name,
                reason: format!("duplicate name in {section} section"),
            });
        }
    }
    Ok(map)
}

fn take_entry(map: &mut BTreeMap<String, Entry>, section: &'static str, name: &str) -> CkResult<Entry> {
    map.remove(name).ok_or_else(|| CheckpointError::MissingEntry {
        section,
        name: name.to_string(),
    })
}

fn no_leftovers(map: BTreeMap<String, Entry>, section: &'static str) -> CkResult<()> {
    match map.into_keys().next() {
        Some(name) => Err(CheckpointError::UnexpectedEntry { section, name }),
        None => Ok(()),
    }
}

fn scalar(map: &mut BTreeMap<String, Entry>, section: &'static str, name: &str) -> CkResult<f64> {
    let e = take_entry(map, section, name)?;
    let v = e.into_f64s()?;
    v.first()
        .copied()
        .filter(|_| v.len() == 1)
        .ok_or_else(|| CheckpointError::InvalidEntry {
            name: name.to_string(),
            reason: "expected one value".into(),
        })
}

const VELOCITY: &str = "velocity.";

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend(MAGIC);
        out.extend(VERSION.to_le_bytes());

        let params: Vec<Entry> = self.params.iter().map(|(n, t)| Entry::tensor(n.clone(), t)).collect();
        write_section(&mut out, &params);

        let SgdConfig {
            lr,
            momentum,
            weight_decay,
        } = self.optim.config;
        let mut optim = vec![
            Entry::f64s("lr", vec![lr]),
            Entry::f64s("momentum", vec![momentum]),
            Entry::f64s("weight_decay", vec![weight_decay]),
        ];
        optim.extend(
            self.optim
                .velocity
                .iter()
                .map(|(n, t)| Entry::tensor(format!("{VELOCITY}{n}"), t)),
        );
        write_section(&mut out, &optim);

        let rng = [
            Entry::bytes("seed", self.rng.seed.to_vec()),
            Entry::u64s("stream", vec![self.rng.stream]),
            Entry::u64s(
                "word_pos",
                vec![self.rng.word_pos as u64, (self.rng.word_pos >> 64) as u64],
            ),
        ];
        write_section(&mut out, &rng);

        let config = toml::to_string(&self.model).expect("model config serializes");
        let stage = [
            Entry::u64s("cursor", vec![self.cursor.stage as u64, self.cursor.step as u64]),
            Entry::u64s("skipped", vec![self.skipped]),
            Entry::f64s("loss_history", self.history.clone()),
            Entry::bytes("model_config", config.into_bytes()),
        ];
        write_section(&mut out, &stage);
        out
    }

    /// Parses and checks internal consistency, including every parameter
    /// shape against the embedded model config.
    pub fn decode(bytes: &[u8]) -> CkResult<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(CheckpointError::BadMagic { found: magic.to_vec() });
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion {
                found: version,
                expected: VERSION,
            });
        }

        let mut params = ParamStore::new();
        for (name, e) in keyed("params", r.section("params")?)? {
            params.insert(&name, e.into_tensor()?);
        }

        let mut optim = keyed("optimizer", r.section("optimizer")?)?;
        let config = SgdConfig {
            lr: scalar(&mut optim, "optimizer", "lr")?,
            momentum: scalar(&mut optim, "optimizer", "momentum")?,
            weight_decay: scalar(&mut optim, "optimizer", "weight_decay")?,
        };
        let mut velocity = BTreeMap::new();
        for name in params.names() {
            let e = take_entry(&mut optim, "optimizer", &format!("{VELOCITY}{name}"))?;
            let t = e.into_tensor()?;
            let expected = params.get(name).expect("listed").shape();
            if t.shape() != expected {
                return Err(CheckpointError::ShapeMismatch {
                    name: format!("{VELOCITY}{name}"),
                    expected: expected.to_vec(),
                    found: t.shape().to_vec(),
                });
            }
            velocity.insert(name.to_string(), t);
        }
        no_leftovers(optim, "optimizer")?;

        let mut rng = keyed("rng", r.section("rng")?)?;
        let seed_bytes = take_entry(&mut rng, "rng", "seed")?.into_bytes()?;
        let seed: [u8; 32] = seed_bytes.try_into().map_err(|_| CheckpointError::InvalidEntry {
            name: "seed".into(),
            reason: "expected 32 bytes".into(),
        })?;
        let stream = take_entry(&mut rng, "rng", "stream")?.into_u64s(1)?[0];
        let wp = take_entry(&mut rng, "rng", "word_pos")?.into_u64s(2)?;
        no_leftovers(rng, "rng")?;

        let mut stage = keyed("stage", r.section("stage")?)?;
        let cursor = take_entry(&mut stage, "stage", "cursor")?.into_u64s(2)?;
        let skipped = take_entry(&mut stage, "stage", "skipped")?.into_u64s(1)?[0];
        let history = take_entry(&mut stage, "stage", "loss_history")?.into_f64s()?;
        let text = take_entry(&mut stage, "stage", "model_config")?.into_bytes()?;
        no_leftovers(stage, "stage")?;
        let text = String::from_utf8(text).map_err(|_| CheckpointError::InvalidEntry {
            name: "model_config".into(),
            reason: "not UTF-8".into(),
        })?;
        let model: ModelConfig = toml::from_str(&text).map_err(|e| CheckpointError::InvalidEntry {
            name: "model_config".into(),
            reason: e.to_string(),
        })?;

        if r.pos != bytes.len() {
            return Err(CheckpointError::TrailingBytes {
                count: bytes.len() - r.pos,
            });
        }
        let ck = Checkpoint {
            model,
            params,
            optim: OptimState { config, velocity },
            rng: RngState {
                seed,
                stream,
                word_pos: wp[0] as u128 | (wp[1] as u128) << 64,
            },
            cursor: Cursor {
                stage: cursor[0] as usize,
                step: cursor[1] as usize,
            },
            skipped,
            history,
        };
        ck.validate(&ck.model)?;
        Ok(ck)
    }

    /// Every parameter the config declares must be present with the declared
    /// shape, and nothing else may be.
    pub fn validate(&self, config: &ModelConfig) -> CkResult<()> {
        let specs = model::param_specs(config);
        for (name, shape, _) in &specs {
            let t = self.params.get(name).map_err(|_| CheckpointError::MissingEntry {
                section: "params",
                name: name.clone(),
            })?;
            if t.shape() != shape.as_slice() {
                return Err(CheckpointError::ShapeMismatch {
                    name: name.clone(),
                    expected: shape.clone(),
                    found: t.shape().to_vec(),
                });
            }
        }
        if let Some(extra) = self.params.names().find(|n| !specs.iter().any(|(s, _, _)| s == n)) {
            return Err(CheckpointError::UnexpectedEntry {
                section: "params",
                name: extra.to_string(),
            });
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> CkResult<()> {
        fs::write(path, self.encode()).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> CkResult<Self> {
        let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::decode(&bytes)
    }

    /// Loads and checks the parameters against an externally supplied config.
    pub fn load_for(path: &Path, config: &ModelConfig) -> CkResult<Self> {
        let ck = Self::load(path)?;
        ck.validate(config)?;
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    fn sample() -> Checkpoint {
        let model = ModelConfig::toy();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params = model::init_params(&model, &mut rng).unwrap();
        let mut optim = OptimState::new(SgdConfig::default(), &params);
        for v in optim.velocity.values_mut() {
            v.data_mut()
                .iter_mut()
                .for_each(|x| *x = (rng.next_u32() as f64) * 1e-9);
        }
        rng.next_u64();
        Checkpoint {
            model,
            params,
            optim,
            rng: RngState::capture(&rng),
            cursor: Cursor { stage: 2, step: 7 },
            skipped: 3,
            history: vec![1.5, f64::MIN_POSITIVE, 0.25],
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let ck = sample();
        let bytes = ck.encode();
        let back = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.encode(), bytes);
    }

    #[test]
    fn rng_state_resumes_stream() {
        let mut a = ChaCha8Rng::seed_from_u64(4);
        a.next_u64();
        let mut b = RngState::capture(&a).restore();
        assert_eq!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn header_corruption_is_named() {
        let mut bytes = sample().encode();
        bytes[1] ^= 0xff;
        assert!(matches!(
            Checkpoint::decode(&bytes),
            Err(CheckpointError::BadMagic { .. })
        ));
        let mut bytes = sample().encode();
        bytes[4] = 9;
        assert!(matches!(
            Checkpoint::decode(&bytes),
            Err(CheckpointError::UnsupportedVersion { found: 9, .. })
        ));
    }

    #[test]
    fn truncation_names_the_field() {
        let bytes = sample().encode();
        for cut in [2, 6, 11, bytes.len() / 2, bytes.len() - 1] {
            match Checkpoint::decode(&bytes[..cut]) {
                Err(CheckpointError::Truncated { field }) => assert!(!field.is_empty()),
                other => panic!("cut {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn config_mismatch_is_a_shape_error() {
        let ck = sample();
        let other = ModelConfig::toy().with_uniform_channels(4);
        match ck.validate(&other) {
            Err(CheckpointError::ShapeMismatch { name, .. }) => assert!(
                name.ends_with("weight") || name.ends_with("bias") || name.ends_with("gamma") || name.ends_with("beta")
            ),
            other => panic!("{other:?}"),
        }
    }
}
