use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{AutodiffError, Result, Tensor};

/// One named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub tensor: Tensor,
    pub trainable: bool,
}

/// Ordered collection of named parameter tensors. Entry order is stable
/// across save/load and defines the "first k" / "last k" layer-selection
/// semantics used by the gradient probe.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterSet {
    entries: Vec<ParamEntry>,
}

const MAGIC: &[u8; 4] = b"GMWT";
const VERSION: u32 = 1;

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: &str, tensor: Tensor, trainable: bool) -> Result<()> {
        if self.entries.iter().any(|e| e.name == name) {
            return Err(AutodiffError::DuplicateParameter(name.to_string()));
        }
        self.entries.push(ParamEntry { name: name.to_string(), tensor, trainable });
        Ok(())
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn trainable_entries(&self) -> impl Iterator<Item = &ParamEntry> {
        self.entries.iter().filter(|e| e.trainable)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|e| e.name == name).map(|e| &e.tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.iter_mut().find(|e| e.name == name).map(|e| &mut e.tensor)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    /// Serialize to the GMWT wire format:
    /// magic "GMWT", version u32 LE, entry count u64 LE, then per entry:
    /// name length u32 LE + UTF-8 name, trainable u8, rank u32 LE,
    /// dims u64 LE each, payload f64 LE row-major.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(e.trainable as u8);
            out.extend_from_slice(&(e.tensor.shape().len() as u32).to_le_bytes());
            for &d in e.tensor.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in e.tensor.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor { buf: bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(AutodiffError::ParamFormat("bad magic, not a GMWT file".into()));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(AutodiffError::ParamFormat(format!("unsupported version {version}")));
        }
        let count = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
        let mut set = ParameterSet::new();
        for _ in 0..count {
            let name_len = u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| AutodiffError::ParamFormat("parameter name is not UTF-8".into()))?
                .to_string();
            let trainable = r.take(1)?[0] != 0;
            let rank = u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u64::from_le_bytes(r.take(8)?.try_into().unwrap()) as usize);
            }
            let n: usize = shape.iter().product();
            let payload = r.take(n * 8)?;
            let data: Vec<f64> = payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let tensor = Tensor::new(shape, data)?;
            set.push(&name, tensor, trainable)?;
        }
        if r.pos != bytes.len() {
            return Err(AutodiffError::ParamFormat("trailing bytes after last entry".into()));
        }
        Ok(set)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    /// SHA-256 of the serialized form; used to fingerprint a frozen model.
    pub fn fingerprint(&self) -> [u8; 32] {
        let digest = Sha256::digest(self.to_bytes());
        digest.into()
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(AutodiffError::ParamFormat("unexpected end of file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_set() -> ParameterSet {
        let mut p = ParameterSet::new();
        p.push("layer00.weight", Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.5, 0.0, 1e-9, 7.0]).unwrap(), true)
            .unwrap();
        p.push("layer00.bias", Tensor::new(vec![3], vec![0.1, 0.2, 0.3]).unwrap(), true).unwrap();
        p.push("frozen", Tensor::scalar(4.0), false).unwrap();
        p
    }

    #[test]
    fn round_trip_preserves_everything() {
        let p = sample_set();
        let q = ParameterSet::from_bytes(&p.to_bytes()).unwrap();
        assert_eq!(p, q);
        assert_eq!(p.fingerprint(), q.fingerprint());
    }

    #[test]
    fn wire_format_header_is_exact() {
        let bytes = sample_set().to_bytes();
        assert_eq!(&bytes[..4], b"GMWT");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 3);
        // First entry: name length + name.
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 14);
        assert_eq!(&bytes[20..34], b"layer00.weight");
        assert_eq!(bytes[34], 1); // trainable
        assert_eq!(u32::from_le_bytes(bytes[35..39].try_into().unwrap()), 2); // rank
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut p = ParameterSet::new();
        p.push("a", Tensor::scalar(1.0), true).unwrap();
        assert!(matches!(
            p.push("a", Tensor::scalar(2.0), true),
            Err(AutodiffError::DuplicateParameter(_))
        ));
    }

    #[test]
    fn truncated_file_rejected() {
        let bytes = sample_set().to_bytes();
        assert!(ParameterSet::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(ParameterSet::from_bytes(b"NOPE").is_err());
    }
}
