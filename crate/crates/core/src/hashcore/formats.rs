//! Binary file formats for embeddings (`PHEM`) and whitening models (`PHWM`).
//!
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use super::{Embedding, HashError, WhiteningModel};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"PHEM";
pub const MODEL_MAGIC: &[u8; 4] = b"PHWM";
pub const FORMAT_VERSION: u16 = 1;

/// Contents of a `PHEM` file.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile {
    pub dim: usize,
    pub embeddings: Vec<Embedding>,
    /// Present when the file carries the optional trailing id block.
    pub ids: Option<Vec<String>>,
}

impl EmbeddingFile {
    pub fn new(
        dim: usize,
        embeddings: Vec<Embedding>,
        ids: Option<Vec<String>>,
    ) -> Result<Self, HashError> {
        if let Some(bad) = embeddings.iter().find(|e| e.dim() != dim) {
            return Err(HashError::DimensionMismatch {
                expected: dim,
                actual: bad.dim(),
            });
        }
        if let Some(ids) = &ids {
            if ids.len() != embeddings.len() {
                return Err(HashError::Format(format!(
                    "{} ids for {} embeddings",
                    ids.len(),
                    embeddings.len()
                )));
            }
            if ids.iter().any(|id| id.contains('\0')) {
                return Err(HashError::Format("embedding id contains a NUL byte".into()));
            }
        }
        Ok(Self {
            dim,
            embeddings,
            ids,
        })
    }

    /// Id of entry `i`, falling back to its index.
    pub fn id(&self, i: usize) -> String {
        match &self.ids {
            Some(ids) => ids[i].clone(),
            None => i.to_string(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(14 + self.embeddings.len() * self.dim * 4);
        out.extend_from_slice(EMBEDDING_MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.embeddings.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for e in &self.embeddings {
            for v in e.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        if let Some(ids) = &self.ids {
            for id in ids {
                out.extend_from_slice(id.as_bytes());
                out.push(0);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, HashError> {
        let mut r = Reader::new(bytes);
        r.magic(EMBEDDING_MAGIC)?;
        r.version()?;
        let count = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let mut embeddings = Vec::with_capacity(count);
        for _ in 0..count {
            let raw = r.take(dim * 4)?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            embeddings.push(Embedding::new(values)?);
        }
        let ids = if r.is_empty() {
            None
        } else {
            let mut ids = Vec::with_capacity(count);
            for _ in 0..count {
                ids.push(r.cstr()?);
            }
            if !r.is_empty() {
                return Err(HashError::Format("trailing bytes after id block".into()));
            }
            Some(ids)
        };
        Self::new(dim, embeddings, ids)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, HashError> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), HashError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

pub fn model_to_bytes(model: &WhiteningModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(model.input_dim() as u32).to_le_bytes());
    out.extend_from_slice(&(model.output_dim() as u32).to_le_bytes());
    out.extend_from_slice(&model.sample_count().to_le_bytes());
    for v in model
        .mean()
        .iter()
        .chain(model.projection())
        .chain(model.eigenvalues())
    {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<WhiteningModel, HashError> {
    let mut r = Reader::new(bytes);
    r.magic(MODEL_MAGIC)?;
    r.version()?;
    let input_dim = r.u32()? as usize;
    let output_dim = r.u32()? as usize;
    let sample_count = r.u64()?;
    let mean = r.f64s(input_dim)?;
    let projection = r.f64s(input_dim * output_dim)?;
    let eigenvalues = r.f64s(output_dim)?;
    if !r.is_empty() {
        return Err(HashError::Format(
            "trailing bytes after whitening model".into(),
        ));
    }
    WhiteningModel::from_parts(
        input_dim,
        output_dim,
        sample_count,
        mean,
        projection,
        eigenvalues,
    )
}

pub fn read_model(path: impl AsRef<Path>) -> Result<WhiteningModel, HashError> {
    model_from_bytes(&fs::read(path)?)
}

pub fn write_model(model: &WhiteningModel, path: impl AsRef<Path>) -> Result<(), HashError> {
    fs::write(path, model_to_bytes(model))?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf }
    }

    fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], HashError> {
        if self.buf.len() < n {
            return Err(HashError::Format(format!(
                "truncated: wanted {n} bytes, {} left",
                self.buf.len()
            )));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<(), HashError> {
        let got = self.take(4)?;
        if got != expected {
            return Err(HashError::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(expected)
            )));
        }
        Ok(())
    }

    fn version(&mut self) -> Result<(), HashError> {
        let v = u16::from_le_bytes(self.take(2)?.try_into().unwrap());
        if v != FORMAT_VERSION {
            return Err(HashError::Format(format!("unsupported format version {v}")));
        }
        Ok(())
    }

    fn u32(&mut self) -> Result<u32, HashError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, HashError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, HashError> {
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| HashError::Format("length overflow".into()))?,
        )?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn cstr(&mut self) -> Result<String, HashError> {
        let end = self
            .buf
            .iter()
            .position(|&b| b == 0)
            .ok_or_else(|| HashError::Format("unterminated id string".into()))?;
        let s = std::str::from_utf8(&self.buf[..end])
            .map_err(|e| HashError::Format(format!("id is not UTF-8: {e}")))?
            .to_owned();
        self.buf = &self.buf[end + 1..];
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedding_file_layout() {
        let file = EmbeddingFile::new(
            2,
            vec![Embedding::new(vec![1.0, -2.5]).unwrap()],
            Some(vec!["a.png".into()]),
        )
        .unwrap();
        let bytes = file.to_bytes();
        assert_eq!(&bytes[..4], b"PHEM");
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(&bytes[6..10], &[1, 0, 0, 0]);
        assert_eq!(&bytes[10..14], &[2, 0, 0, 0]);
        assert_eq!(&bytes[14..18], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[22..], b"a.png\0");
        assert_eq!(EmbeddingFile::from_bytes(&bytes).unwrap(), file);
    }

    #[test]
    fn ids_are_optional() {
        let file =
            EmbeddingFile::new(1, vec![Embedding::new(vec![3.0]).unwrap(); 2], None).unwrap();
        let back = EmbeddingFile::from_bytes(&file.to_bytes()).unwrap();
        assert_eq!(back.ids, None);
        assert_eq!(back.id(1), "1");
    }

    #[test]
    fn empty_embedding_file() {
        let file = EmbeddingFile::new(768, vec![], None).unwrap();
        let back = EmbeddingFile::from_bytes(&file.to_bytes()).unwrap();
        assert_eq!(back.embeddings.len(), 0);
        assert_eq!(back.dim, 768);
    }

    #[test]
    fn malformed_embedding_files() {
        assert!(EmbeddingFile::from_bytes(b"PHEX\x01\x00").is_err());
        let mut bytes = EmbeddingFile::new(2, vec![Embedding::new(vec![1.0, 2.0]).unwrap()], None)
            .unwrap()
            .to_bytes();
        bytes.truncate(bytes.len() - 1);
        assert!(EmbeddingFile::from_bytes(&bytes).is_err());
        bytes[4] = 2;
        assert!(EmbeddingFile::from_bytes(&bytes).is_err());
    }

    #[test]
    fn model_round_trip() {
        let model = WhiteningModel::identity(3);
        let bytes = model_to_bytes(&model);
        assert_eq!(&bytes[..4], b"PHWM");
        assert_eq!(bytes.len(), 4 + 2 + 4 + 4 + 8 + 8 * (3 + 9 + 3));
        assert_eq!(model_from_bytes(&bytes).unwrap(), model);
        assert!(model_from_bytes(&bytes[..bytes.len() - 8]).is_err());
    }
}
