//! Keypoints with descriptors and their binary file format.
//!
//! Layout (little-endian): `FEAT`, version `u32`, count `u32`, descriptor
//! dimension `u32`, then per keypoint `u: f32`, `v: f32` and `d` `f32`s.

use std::io::{Read, Write};
use std::path::Path;

use super::PoseError;

const MAGIC: &[u8; 4] = b"FEAT";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Keypoint {
    pub u: f32,
    pub v: f32,
    pub descriptor: Vec<f32>,
}

/// All keypoints of one frame; every descriptor has length `dim`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureSet {
    dim: usize,
    keypoints: Vec<Keypoint>,
}

impl FeatureSet {
    pub fn new(dim: usize, keypoints: Vec<Keypoint>) -> Result<Self, PoseError> {
        if let Some(k) = keypoints.iter().find(|k| k.descriptor.len() != dim) {
            return Err(PoseError::Format(format!(
                "descriptor of length {} in a set of dimension {dim}",
                k.descriptor.len()
            )));
        }
        if let Some(k) = keypoints.iter().find(|k| !(k.u.is_finite() && k.v.is_finite())) {
            return Err(PoseError::Format(format!("non-finite keypoint ({}, {})", k.u, k.v)));
        }
        Ok(Self { dim, keypoints })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn keypoints(&self) -> &[Keypoint] {
        &self.keypoints
    }

    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.keypoints.len() as u32).to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        for k in &self.keypoints {
            w.write_all(&k.u.to_le_bytes())?;
            w.write_all(&k.v.to_le_bytes())?;
            for d in &k.descriptor {
                w.write_all(&d.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, PoseError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(|e| PoseError::Format(e.to_string()))?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PoseError> {
        let bad = |m: String| PoseError::Format(m);
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(bad("missing FEAT header".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let version = word(4);
        if version != VERSION {
            return Err(bad(format!("unsupported feature file version {version}")));
        }
        let (n, dim) = (word(8) as usize, word(12) as usize);
        let record = 4 * (2 + dim);
        let expected = n.checked_mul(record).and_then(|b| b.checked_add(16));
        if expected != Some(bytes.len()) {
            return Err(bad(format!(
                "feature file holds {} bytes, header promises {n} records of dimension {dim}",
                bytes.len()
            )));
        }
        let float = |i: usize| f32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let keypoints = (0..n)
            .map(|k| {
                let base = 16 + k * record;
                Keypoint {
                    u: float(base),
                    v: float(base + 4),
                    descriptor: (0..dim).map(|j| float(base + 8 + 4 * j)).collect(),
                }
            })
            .collect();
        Self::new(dim, keypoints)
    }

    pub fn save(&self, path: &Path) -> Result<(), PoseError> {
        let file = std::fs::File::create(path).map_err(|e| PoseError::Io(path.display().to_string(), e.to_string()))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| PoseError::Io(path.display().to_string(), e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, PoseError> {
        let bytes = std::fs::read(path).map_err(|e| PoseError::Io(path.display().to_string(), e.to_string()))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            PoseError::Format(m) => PoseError::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}
