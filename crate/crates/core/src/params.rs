//! Named parameter store with a flat binary file format.
//!
//! File layout (all integers little-endian):
//!   magic "FPCW" | version u32 | entry count u32
//!   per entry: name length u32 | UTF-8 name | rank u32 | dims u64 each | f64 payload
//!
//! Entries are written in name order so files are byte-stable.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{seeded_init, InitScheme, Matrix};

const MAGIC: &[u8; 4] = b"FPCW";
const VERSION: u32 = 1;

/// One named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Map from parameter name to shaped array, plus the seed and scheme the
/// store was initialized from.
#[derive(Debug, Clone)]
pub struct ParamStore {
    entries: BTreeMap<String, ParamEntry>,
    pub seed: u64,
    pub init_scheme: InitScheme,
}

impl ParamStore {
    pub fn new(seed: u64, init_scheme: InitScheme) -> Self {
        Self {
            entries: BTreeMap::new(),
            seed,
            init_scheme,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn insert(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>) -> Result<()> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "param '{name}': data length {} != shape product {expected}",
                data.len()
            )));
        }
        if self.entries.contains_key(name) {
            return Err(Error::Invariant(format!("duplicate param name '{name}'")));
        }
        self.entries
            .insert(name.to_string(), ParamEntry { shape, data });
        Ok(())
    }

    pub fn insert_matrix(&mut self, name: &str, m: &Matrix) -> Result<()> {
        self.insert(name, vec![m.rows, m.cols], m.data().to_vec())
    }

    pub fn insert_vector(&mut self, name: &str, v: &[f64]) -> Result<()> {
        self.insert(name, vec![v.len()], v.to_vec())
    }

    /// Fetches an entry, checking the declared shape exactly.
    pub fn get(&self, name: &str, shape: &[usize]) -> Result<&ParamEntry> {
        let entry = self
            .entries
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing param '{name}'")))?;
        if entry.shape != shape {
            return Err(Error::Shape(format!(
                "param '{name}': stored shape {:?} != declared {:?}",
                entry.shape, shape
            )));
        }
        Ok(entry)
    }

    pub fn get_matrix(&self, name: &str, rows: usize, cols: usize) -> Result<Matrix> {
        let e = self.get(name, &[rows, cols])?;
        Matrix::new(rows, cols, e.data.clone())
    }

    pub fn get_vector(&self, name: &str, len: usize) -> Result<Vec<f64>> {
        Ok(self.get(name, &[len])?.data.clone())
    }

    /// Inserts a freshly initialized entry drawn from this store's seed,
    /// keyed by the entry name so insertion order does not matter.
    pub fn init(&mut self, name: &str, shape: &[usize]) -> Result<()> {
        let tag = crate::rng::name_tag(name);
        let data = seeded_init(shape, crate::rng::derive_seed(self.seed, tag), self.init_scheme)?;
        self.insert(name, shape.to_vec(), data)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (name, entry) in &self.entries {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(entry.shape.len() as u32).to_le_bytes())?;
            for &d in &entry.shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &v in &entry.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Decode("bad param store magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Decode(format!("unsupported param store version {version}")));
        }
        let count = read_u32(&mut r)? as usize;
        let mut store = ParamStore::new(0, InitScheme::FanInUniform);
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            let mut name_buf = vec![0u8; name_len];
            r.read_exact(&mut name_buf)?;
            let name = String::from_utf8(name_buf)
                .map_err(|_| Error::Decode("param name is not UTF-8".into()))?;
            let rank = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let mut buf = [0u8; 8];
                r.read_exact(&mut buf)?;
                shape.push(u64::from_le_bytes(buf) as usize);
            }
            let len: usize = shape.iter().product();
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                let mut buf = [0u8; 8];
                r.read_exact(&mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
            store.insert(&name, shape, data)?;
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_from(bytes.as_slice())
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}
