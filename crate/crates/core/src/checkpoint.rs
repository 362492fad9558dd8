//! Binary parameter files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "MGAN"            4 bytes magic
//! version           u32 (= 1)
//! count             u32 number of entries
//! per entry:
//!   name_len        u16
//!   name            UTF-8 bytes
//!   rank            u8
//!   dims            u32 x rank
//!   values          f32 x prod(dims), row-major
//! ```
//!
//! Optimizer state is stored in the same file under names prefixed `adam.`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{CdNet, GeneratorBank, Params};
use crate::optim::{AdamConfig, AdamState};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"MGAN";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dims: Vec<u32>,
    pub values: Vec<f32>,
}

impl Entry {
    pub fn from_tensor(name: impl Into<String>, t: &Tensor<f32>) -> Self {
        Entry {
            name: name.into(),
            dims: vec![t.rows() as u32, t.cols() as u32],
            values: t.data().to_vec(),
        }
    }

    /// Rank-1 entry holding raw 64-bit words, split into two `f32` bit patterns each.
    fn from_words(name: impl Into<String>, words: &[u64]) -> Self {
        let values = words
            .iter()
            .flat_map(|w| [f32::from_bits(*w as u32), f32::from_bits((*w >> 32) as u32)])
            .collect::<Vec<_>>();
        Entry {
            name: name.into(),
            dims: vec![values.len() as u32],
            values,
        }
    }

    fn words(&self) -> Vec<u64> {
        self.values
            .chunks_exact(2)
            .map(|p| p[0].to_bits() as u64 | ((p[1].to_bits() as u64) << 32))
            .collect()
    }

    /// Interprets rank 0/1/2 data as a matrix (`1 x 1`, `1 x n`, `r x c`).
    pub fn to_tensor(&self) -> Result<Tensor<f32>> {
        let (r, c) = match self.dims.as_slice() {
            [] => (1, 1),
            [n] => (1, *n as usize),
            [r, c] => (*r as usize, *c as usize),
            _ => {
                return Err(Error::Checkpoint(format!(
                    "{}: rank {} is not supported",
                    self.name,
                    self.dims.len()
                )))
            }
        };
        Tensor::from_vec(r, c, self.values.clone())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<Entry>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated while reading {what}")))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

impl Checkpoint {
    pub fn push_params(&mut self, params: &Params<f32>) {
        for (name, t) in params.iter() {
            self.entries.push(Entry::from_tensor(name, t));
        }
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Collects every 2D entry whose name starts with `prefix` into a parameter list.
    pub fn params_with_prefix(&self, prefix: &str) -> Result<Params<f32>> {
        let mut p = Params::default();
        for e in self.entries.iter().filter(|e| e.name.starts_with(prefix)) {
            p.push(e.name.clone(), e.to_tensor()?);
        }
        Ok(p)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let count = u32::try_from(self.entries.len())
            .map_err(|_| Error::Checkpoint("too many entries".into()))?;
        out.extend_from_slice(&count.to_le_bytes());
        for e in &self.entries {
            let name = e.name.as_bytes();
            let len = u16::try_from(name.len())
                .map_err(|_| Error::Checkpoint(format!("name too long: {}", e.name)))?;
            let expected: usize = e.dims.iter().map(|&d| d as usize).product();
            if expected != e.values.len() || e.dims.len() > u8::MAX as usize {
                return Err(Error::Checkpoint(format!(
                    "{}: dims {:?} do not match {} values",
                    e.name,
                    e.dims,
                    e.values.len()
                )));
            }
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name);
            out.push(e.dims.len() as u8);
            for d in &e.dims {
                out.extend_from_slice(&d.to_le_bytes());
            }
            for v in &e.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::Checkpoint("bad magic bytes".into()));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let count = r.u32("entry count")?;
        let mut entries = Vec::new();
        for _ in 0..count {
            let len = r.u16("name length")? as usize;
            let name = std::str::from_utf8(r.take(len, "name")?)
                .map_err(|_| Error::Checkpoint("name is not UTF-8".into()))?
                .to_string();
            let rank = r.u8("rank")? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.u32("dims")?);
            }
            let n = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
                .ok_or_else(|| Error::Checkpoint(format!("{name}: dims overflow")))?;
            let bytes = r.take(
                n.checked_mul(4)
                    .ok_or_else(|| Error::Checkpoint(format!("{name}: dims overflow")))?,
                "values",
            )?;
            let values = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            entries.push(Entry { name, dims, values });
        }
        if r.pos != buf.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                buf.len() - r.pos
            )));
        }
        Ok(Checkpoint { entries })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }
}

/// Appends an optimizer state under `adam.<tag>.`.
pub fn push_adam(ckpt: &mut Checkpoint, tag: &str, state: &AdamState<f32>, params: &Params<f32>) {
    let c = state.config;
    ckpt.entries.push(Entry::from_words(
        format!("adam.{tag}.hyper"),
        &[c.lr.to_bits(), c.beta1.to_bits(), c.beta2.to_bits(), c.eps.to_bits()],
    ));
    ckpt.entries
        .push(Entry::from_words(format!("adam.{tag}.step"), &[state.step_count()]));
    for (name, m) in params.names().iter().zip(state.first_moments()) {
        ckpt.entries.push(Entry::from_tensor(format!("adam.{tag}.m.{name}"), m));
    }
    for (name, v) in params.names().iter().zip(state.second_moments()) {
        ckpt.entries.push(Entry::from_tensor(format!("adam.{tag}.v.{name}"), v));
    }
}

pub fn read_adam(ckpt: &Checkpoint, tag: &str, params: &Params<f32>) -> Result<AdamState<f32>> {
    let missing = |what: &str| Error::Checkpoint(format!("missing adam.{tag}.{what}"));
    let hyper = ckpt
        .get(&format!("adam.{tag}.hyper"))
        .ok_or_else(|| missing("hyper"))?
        .words();
    let step = ckpt
        .get(&format!("adam.{tag}.step"))
        .ok_or_else(|| missing("step"))?
        .words();
    if hyper.len() != 4 || step.len() != 1 {
        return Err(Error::Checkpoint(format!("malformed adam.{tag} header")));
    }
    let config = AdamConfig {
        lr: f64::from_bits(hyper[0]),
        beta1: f64::from_bits(hyper[1]),
        beta2: f64::from_bits(hyper[2]),
        eps: f64::from_bits(hyper[3]),
    };
    let mut m = Vec::new();
    let mut v = Vec::new();
    for name in params.names() {
        let key_m = format!("m.{name}");
        let key_v = format!("v.{name}");
        m.push(
            ckpt.get(&format!("adam.{tag}.{key_m}"))
                .ok_or_else(|| missing(&key_m))?
                .to_tensor()?,
        );
        v.push(
            ckpt.get(&format!("adam.{tag}.{key_v}"))
                .ok_or_else(|| missing(&key_v))?
                .to_tensor()?,
        );
    }
    AdamState::from_parts(config, step[0], m, v, params)
}

/// Full training state as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingState {
    pub generators: GeneratorBank<f32>,
    pub cd: CdNet<f32>,
    pub adam_g: Option<AdamState<f32>>,
    pub adam_cd: Option<AdamState<f32>>,
}

impl TrainingState {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::default();
        ckpt.push_params(self.generators.params());
        ckpt.push_params(self.cd.params());
        if let Some(a) = &self.adam_g {
            push_adam(&mut ckpt, "g", a, self.generators.params());
        }
        if let Some(a) = &self.adam_cd {
            push_adam(&mut ckpt, "cd", a, self.cd.params());
        }
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let generators = GeneratorBank::from_params(ckpt.params_with_prefix("gen.")?)?;
        let cd = CdNet::from_params(ckpt.params_with_prefix("cd.")?)?;
        let has = |tag: &str| ckpt.get(&format!("adam.{tag}.step")).is_some();
        let adam_g = if has("g") {
            Some(read_adam(ckpt, "g", generators.params())?)
        } else {
            None
        };
        let adam_cd = if has("cd") {
            Some(read_adam(ckpt, "cd", cd.params())?)
        } else {
            None
        };
        Ok(TrainingState {
            generators,
            cd,
            adam_g,
            adam_cd,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn state() -> TrainingState {
        let generators = GeneratorBank::new(3, 5, 4, 1).unwrap();
        let cd = CdNet::new(3, 4, 2).unwrap();
        let mut adam_g = AdamState::new(AdamConfig::default(), generators.params());
        let mut g_params = generators.clone();
        let grads: Vec<_> = generators
            .params()
            .tensors()
            .iter()
            .map(|t| t.map(|v| v + 0.25))
            .collect();
        adam_g.step(g_params.params_mut(), &grads).unwrap();
        let adam_cd = AdamState::new(
            AdamConfig {
                lr: 1e-3,
                ..AdamConfig::default()
            },
            cd.params(),
        );
        TrainingState {
            generators: g_params,
            cd,
            adam_g: Some(adam_g),
            adam_cd: Some(adam_cd),
        }
    }

    #[test]
    fn header_layout() {
        let mut ckpt = Checkpoint::default();
        ckpt.entries.push(Entry {
            name: "ab".into(),
            dims: vec![1, 2],
            values: vec![1.0, -2.0],
        });
        let bytes = ckpt.to_bytes().unwrap();
        let mut expected = b"MGAN".to_vec();
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&2u16.to_le_bytes());
        expected.extend_from_slice(b"ab");
        expected.push(2);
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&(-2.0f32).to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn training_state_round_trip_is_exact() {
        let s = state();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt_1.mgan");
        s.save(&path).unwrap();
        let back = TrainingState::load(&path).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.adam_g.as_ref().unwrap().step_count(), 1);
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let bytes = state().to_checkpoint().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(Checkpoint::from_bytes(&v2).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
        assert!(Checkpoint::from_bytes(b"").is_err());
    }

    #[test]
    fn missing_network_is_an_error() {
        let mut ckpt = state().to_checkpoint();
        ckpt.entries.retain(|e| !e.name.starts_with("cd."));
        assert!(TrainingState::from_checkpoint(&ckpt).is_err());
    }

    proptest! {
        #[test]
        fn arbitrary_entries_round_trip(
            names in proptest::collection::vec("[a-z.]{1,12}", 1..5),
            raw in proptest::collection::vec(any::<u32>(), 0..40),
        ) {
            let mut ckpt = Checkpoint::default();
            for (i, name) in names.iter().enumerate() {
                let values: Vec<f32> = raw.iter().skip(i).map(|b| f32::from_bits(*b)).collect();
                ckpt.entries.push(Entry { name: name.clone(), dims: vec![values.len() as u32], values });
            }
            let back = Checkpoint::from_bytes(&ckpt.to_bytes().unwrap()).unwrap();
            prop_assert_eq!(back.entries.len(), ckpt.entries.len());
            for (a, b) in back.entries.iter().zip(&ckpt.entries) {
                prop_assert_eq!(&a.name, &b.name);
                let ab: Vec<u32> = a.values.iter().map(|v| v.to_bits()).collect();
                let bb: Vec<u32> = b.values.iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(ab, bb);
            }
        }
    }
}
