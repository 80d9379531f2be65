use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named trainable tensor together with its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    /// Same length as `value`; accumulated additively by [`crate::Tape::accumulate_grads`].
    pub grad: Vec<f64>,
    /// Frozen parameters enter the tape as constants and are skipped by the optimizer.
    pub requires_grad: bool,
}

static NEXT_STORE: AtomicU64 = AtomicU64::new(0);

/// Ordered collection of named parameters.
///
/// Each store carries a process-unique key, shared with its clones, so a tape
/// routes gradients only to the store (or a copy of it) the parameters came from.
#[derive(Clone, Debug)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
    key: u64,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self { params: Vec::new(), index: HashMap::new(), key: NEXT_STORE.fetch_add(1, Ordering::Relaxed) }
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn key(&self) -> u64 {
        self.key
    }

    /// Registers a parameter. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = self.params.len();
        self.index.insert(name.clone(), id);
        let grad = vec![0.0; value.numel()];
        self.params.push(Param {
            name,
            value,
            grad,
            requires_grad: true,
        });
        ParamId(id)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar values.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn trainable_numel(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.requires_grad)
            .map(|p| p.value.numel())
            .sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Marks every parameter whose name satisfies `pred` as trainable and freezes the rest.
    pub fn set_trainable(&mut self, pred: impl Fn(&str) -> bool) {
        for p in &mut self.params {
            p.requires_grad = pred(&p.name);
        }
    }

    /// Copies values from `other` for every parameter name present in both stores.
    pub fn load_values_from(&mut self, other: &ParamStore) -> Result<()> {
        for p in &mut self.params {
            let src = other
                .by_name(&p.name)
                .ok_or_else(|| TensorError::UnknownParam(p.name.clone()))?;
            if src.value.shape() != p.value.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "load_values_from",
                    lhs: p.value.shape().to_vec(),
                    rhs: src.value.shape().to_vec(),
                });
            }
            p.value = src.value.clone();
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut file)?;
        file.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut file)
    }

    /// Binary checkpoint layout, all integers and floats little-endian:
    ///
    /// ```text
    /// magic  b"DSSEPRM\0"
    /// u32    format version (1)
    /// u32    parameter count
    /// per parameter:
    ///   u32 name length, name bytes (utf-8)
    ///   u8  requires_grad
    ///   u32 rank, u64 × rank dimensions
    ///   f64 × numel values
    /// ```
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for p in &self.params {
            w.write_all(&(p.name.len() as u32).to_le_bytes())?;
            w.write_all(p.name.as_bytes())?;
            w.write_all(&[p.requires_grad as u8])?;
            w.write_all(&(p.value.rank() as u32).to_le_bytes())?;
            for &d in p.value.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in p.value.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(TensorError::Checkpoint("bad magic".into()));
        }
        let version = read_u32(r)?;
        if version != CHECKPOINT_VERSION {
            return Err(TensorError::Checkpoint(format!(
                "unsupported format version {version}"
            )));
        }
        let count = read_u32(r)? as usize;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let name_len = read_u32(r)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| TensorError::Checkpoint("parameter name is not utf-8".into()))?;
            let mut flag = [0u8; 1];
            r.read_exact(&mut flag)?;
            let rank = read_u32(r)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let numel: usize = shape.iter().product();
            let mut data = Vec::with_capacity(numel);
            for _ in 0..numel {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                data.push(f64::from_le_bytes(b));
            }
            if store.index.contains_key(&name) {
                return Err(TensorError::Checkpoint(format!("duplicate parameter {name}")));
            }
            let id = store.add(name, Tensor::new(shape, data)?);
            store.get_mut(id).requires_grad = flag[0] != 0;
        }
        Ok(store)
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"DSSEPRM\0";
const CHECKPOINT_VERSION: u32 = 1;

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::matrix(2, 2, vec![1.0, -2.5, 3.25, f64::MIN_POSITIVE]).unwrap());
        let b = s.add("b", Tensor::vector(vec![0.1, 0.2]));
        s.get_mut(b).requires_grad = false;
        s.add("s", Tensor::scalar(-0.0));
        s
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let store = sample_store();
        let mut buf = Vec::new();
        store.write_to(&mut buf).unwrap();
        let back = ParamStore::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back.len(), 3);
        for ((_, a), (_, b)) in store.iter().zip(back.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value.shape(), b.value.shape());
            assert_eq!(a.requires_grad, b.requires_grad);
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.value), bits(&b.value));
        }
    }

    #[test]
    fn checkpoint_rejects_bad_header() {
        let mut buf = Vec::new();
        sample_store().write_to(&mut buf).unwrap();
        buf[0] = b'X';
        assert!(ParamStore::read_from(&mut buf.as_slice()).is_err());

        let mut buf = Vec::new();
        sample_store().write_to(&mut buf).unwrap();
        buf[8] = 9;
        let err = ParamStore::read_from(&mut buf.as_slice()).unwrap_err();
        assert!(err.to_string().contains("version"));
    }

    #[test]
    fn checkpoint_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        sample_store().save(&path).unwrap();
        let back = ParamStore::load(&path).unwrap();
        assert_eq!(back.by_name("w").unwrap().value.data()[1], -2.5);
    }

    #[test]
    fn load_values_requires_matching_shapes() {
        let mut a = sample_store();
        let mut b = ParamStore::new();
        b.add("w", Tensor::zeros(&[3]));
        assert!(a.load_values_from(&b).is_err());
    }
}
