use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use super::{NetworkConfig, NetworkError, Result};
use crate::tensor::{Real, Tape, Tensor, Var};

const MAGIC: &[u8; 4] = b"DFCK";
const VERSION: u32 = 1;

/// Named parameter tensors in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterStore<T: Real> {
    entries: Vec<(String, Tensor<T>)>,
    index: BTreeMap<String, usize>,
}

impl<T: Real> Default for ParameterStore<T> {
    fn default() -> Self {
        Self {
            entries: Vec::new(),
            index: BTreeMap::new(),
        }
    }
}

impl<T: Real> ParameterStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(NetworkError::DuplicateParameter(name));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push((name, value));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalars.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().map(|(_, t)| t.max_abs().to_f64_lossy()).fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.all_finite())
    }

    pub fn cast<U: Real>(&self) -> ParameterStore<U> {
        ParameterStore {
            entries: self.entries.iter().map(|(n, t)| (n.clone(), t.cast())).collect(),
            index: self.index.clone(),
        }
    }

    /// Records every parameter on `tape` as a gradient-tracked leaf.
    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> BoundParams<'t, T> {
        BoundParams {
            vars: self.entries.iter().map(|(_, t)| tape.param(t)).collect(),
            index: self.index.clone(),
        }
    }

    /// Records every parameter as a constant, for inference.
    pub fn bind_frozen<'t>(&self, tape: &'t Tape<T>) -> BoundParams<'t, T> {
        BoundParams {
            vars: self.entries.iter().map(|(_, t)| tape.constant(t.clone())).collect(),
            index: self.index.clone(),
        }
    }

    /// Names existing handles in store order; shapes must match.
    pub fn attach<'t>(&self, vars: &[Var<'t, T>]) -> Result<BoundParams<'t, T>> {
        if vars.len() != self.len() {
            return Err(NetworkError::Config(format!(
                "{} handles for {} parameters",
                vars.len(),
                self.len()
            )));
        }
        for ((name, t), v) in self.iter().zip(vars) {
            if v.shape() != t.shape() {
                return Err(NetworkError::ParameterShape {
                    name: name.to_string(),
                    expected: t.shape().to_vec(),
                    found: v.shape(),
                });
            }
        }
        Ok(BoundParams {
            vars: vars.to_vec(),
            index: self.index.clone(),
        })
    }

    /// Checks names and shapes against the layout `config` expects.
    pub fn check_layout(&self, config: &NetworkConfig) -> Result<()> {
        let layout = config.layout()?;
        for spec in &layout {
            let found = self
                .get(&spec.name)
                .ok_or_else(|| NetworkError::MissingParameter(spec.name.clone()))?;
            if found.shape() != spec.shape.as_slice() {
                return Err(NetworkError::ParameterShape {
                    name: spec.name.clone(),
                    expected: spec.shape.clone(),
                    found: found.shape().to_vec(),
                });
            }
        }
        if layout.len() != self.len() {
            let known: std::collections::HashSet<_> = layout.iter().map(|s| s.name.as_str()).collect();
            let extra = self.iter().map(|(n, _)| n).find(|n| !known.contains(n)).unwrap_or_default();
            return Err(NetworkError::UnexpectedParameter(extra.to_string()));
        }
        Ok(())
    }
}

/// Parameters recorded on one tape, addressable by name.
pub struct BoundParams<'t, T: Real> {
    vars: Vec<Var<'t, T>>,
    index: BTreeMap<String, usize>,
}

impl<'t, T: Real> BoundParams<'t, T> {
    pub fn get(&self, name: &str) -> Result<Var<'t, T>> {
        self.index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| NetworkError::MissingParameter(name.to_string()))
    }

    /// Handles in store order.
    pub fn vars(&self) -> &[Var<'t, T>] {
        &self.vars
    }
}

fn put_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn get_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| NetworkError::Checkpoint(format!("truncated while reading {what}")))?;
    Ok(u32::from_le_bytes(b))
}

fn get_bytes(r: &mut impl Read, n: usize, what: &str) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    r.take(n as u64)
        .read_to_end(&mut buf)
        .map_err(|e| NetworkError::Checkpoint(format!("{what}: {e}")))?;
    if buf.len() != n {
        return Err(NetworkError::Checkpoint(format!("truncated while reading {what}")));
    }
    Ok(buf)
}

/// Serializes the config and parameters; values are stored as f32.
pub fn write_checkpoint<T: Real>(mut w: impl Write, config: &NetworkConfig, store: &ParameterStore<T>) -> Result<()> {
    let io = |e: std::io::Error| NetworkError::Checkpoint(e.to_string());
    w.write_all(MAGIC).map_err(io)?;
    put_u32(&mut w, VERSION).map_err(io)?;
    let json = serde_json::to_vec(config).map_err(|e| NetworkError::Checkpoint(e.to_string()))?;
    put_u32(&mut w, json.len() as u32).map_err(io)?;
    w.write_all(&json).map_err(io)?;
    put_u32(&mut w, store.len() as u32).map_err(io)?;
    for (name, t) in store.iter() {
        put_u32(&mut w, name.len() as u32).map_err(io)?;
        w.write_all(name.as_bytes()).map_err(io)?;
        put_u32(&mut w, t.rank() as u32).map_err(io)?;
        for &d in t.shape() {
            put_u32(&mut w, d as u32).map_err(io)?;
        }
        let mut bytes = Vec::with_capacity(4 * t.len());
        for v in t.data() {
            bytes.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
        w.write_all(&bytes).map_err(io)?;
    }
    Ok(())
}

pub fn read_checkpoint(mut r: impl Read) -> Result<(NetworkConfig, ParameterStore<f32>)> {
    let magic = get_bytes(&mut r, 4, "magic")?;
    if magic != MAGIC {
        return Err(NetworkError::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let version = get_u32(&mut r, "version")?;
    if version != VERSION {
        return Err(NetworkError::Version {
            found: version,
            expected: VERSION,
        });
    }
    let len = get_u32(&mut r, "config length")? as usize;
    let json = get_bytes(&mut r, len, "config")?;
    let config: NetworkConfig = serde_json::from_slice(&json).map_err(|e| NetworkError::Checkpoint(format!("config: {e}")))?;
    config.validate()?;
    let count = get_u32(&mut r, "parameter count")?;
    let mut store = ParameterStore::new();
    for _ in 0..count {
        let n = get_u32(&mut r, "name length")? as usize;
        let name =
            String::from_utf8(get_bytes(&mut r, n, "name")?).map_err(|_| NetworkError::Checkpoint("parameter name is not UTF-8".into()))?;
        let rank = get_u32(&mut r, "rank")? as usize;
        let shape = (0..rank)
            .map(|_| get_u32(&mut r, "shape").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let raw = get_bytes(&mut r, 4 * numel, &name)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        store.insert(name, Tensor::from_vec(shape, data)?)?;
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| NetworkError::Checkpoint(e.to_string()))? != 0 {
        return Err(NetworkError::Checkpoint("trailing bytes after last parameter".into()));
    }
    store.check_layout(&config)?;
    Ok((config, store))
}

pub fn save_checkpoint<T: Real>(path: &Path, config: &NetworkConfig, store: &ParameterStore<T>) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, config, store)?;
    std::fs::write(path, buf).map_err(|e| NetworkError::Io(path.display().to_string(), e.to_string()))
}

pub fn load_checkpoint(path: &Path) -> Result<(NetworkConfig, ParameterStore<f32>)> {
    let bytes = std::fs::read(path).map_err(|e| NetworkError::Io(path.display().to_string(), e.to_string()))?;
    read_checkpoint(bytes.as_slice())
}
