//! Binary weights container.
//!
//! Layout (little endian):
//!
//! ```text
//! magic   8 bytes  "NTRKWTS\0"
//! version u32
//! n_cfg   u32, then n_cfg x (name: u32 len + utf8, value: u64)
//! n_ten   u32, then n_ten x (name: u32 len + utf8, ndim: u32, dims: u64 each,
//!                             values: f64 row-major)
//! ```
//!
//! A plain-text manifest listing the same configuration and tensor shapes
//! is written next to the binary file (`<path>.manifest.txt`).

use std::fs;
use std::path::{Path, PathBuf};

use super::Parametric;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"NTRKWTS\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    /// Row-major values.
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightsFile {
    pub config: Vec<(String, u64)>,
    pub tensors: Vec<NamedTensor>,
}

impl WeightsFile {
    pub fn config_value(&self, name: &str) -> Option<u64> {
        self.config.iter().find(|(k, _)| k == name).map(|(_, v)| *v)
    }
}

/// Row-major tensors of a parametric model.
pub fn export_tensors(model: &dyn Parametric) -> Vec<NamedTensor> {
    let mut out = Vec::new();
    model.visit("", &mut |name, rows, cols, data| {
        let mut row_major = Vec::with_capacity(data.len());
        for r in 0..rows {
            for c in 0..cols {
                row_major.push(data[c * rows + r]);
            }
        }
        let shape = if cols == 1 {
            vec![rows]
        } else {
            vec![rows, cols]
        };
        out.push(NamedTensor {
            name: name.to_string(),
            shape,
            data: row_major,
        });
    });
    out
}

/// Copies tensors into `model`, checking that every name and shape match.
pub fn import_tensors(model: &mut dyn Parametric, tensors: &[NamedTensor]) -> Result<()> {
    let mut err = None;
    let mut k = 0;
    model.visit_mut("", &mut |name, rows, cols, data| {
        if err.is_some() {
            return;
        }
        let expected = if cols == 1 {
            vec![rows]
        } else {
            vec![rows, cols]
        };
        let Some(t) = tensors.get(k) else {
            err = Some(Error::ShapeMismatch {
                name: name.to_string(),
                expected,
                got: vec![],
            });
            return;
        };
        k += 1;
        if t.name != name || t.shape != expected {
            err = Some(Error::ShapeMismatch {
                name: name.to_string(),
                expected,
                got: t.shape.clone(),
            });
            return;
        }
        for r in 0..rows {
            for c in 0..cols {
                data[c * rows + r] = t.data[r * cols + c];
            }
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    if k != tensors.len() {
        return Err(Error::ShapeMismatch {
            name: tensors[k].name.clone(),
            expected: vec![],
            got: tensors[k].shape.clone(),
        });
    }
    Ok(())
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

pub fn encode(file: &WeightsFile) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(file.config.len() as u32).to_le_bytes());
    for (k, v) in &file.config {
        put_str(&mut buf, k);
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&(file.tensors.len() as u32).to_le_bytes());
    for t in &file.tensors {
        put_str(&mut buf, &t.name);
        buf.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for d in &t.shape {
            buf.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::FormatVersionMismatch(format!(
                "file truncated at byte {}",
                self.buf.len()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::FormatVersionMismatch("invalid utf-8 name".into()))
    }
}

pub fn decode(buf: &[u8]) -> Result<WeightsFile> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::FormatVersionMismatch("bad magic bytes".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::FormatVersionMismatch(format!(
            "file version {version}, supported {FORMAT_VERSION}"
        )));
    }
    let n_cfg = r.u32()?;
    let mut config = Vec::new();
    for _ in 0..n_cfg {
        let k = r.string()?;
        config.push((k, r.u64()?));
    }
    let n_t = r.u32()?;
    let mut tensors = Vec::new();
    for _ in 0..n_t {
        let name = r.string()?;
        let ndim = r.u32()? as usize;
        let shape = (0..ndim)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        if n > buf.len() / 8 {
            return Err(Error::FormatVersionMismatch("file truncated".into()));
        }
        let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        tensors.push(NamedTensor { name, shape, data });
    }
    if r.pos != buf.len() {
        return Err(Error::FormatVersionMismatch("trailing bytes".into()));
    }
    Ok(WeightsFile { config, tensors })
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.txt");
    PathBuf::from(s)
}

pub fn manifest(file: &WeightsFile) -> String {
    let mut s = format!("format {FORMAT_VERSION}\n");
    for (k, v) in &file.config {
        s.push_str(&format!("config {k} {v}\n"));
    }
    for t in &file.tensors {
        let dims: Vec<String> = t.shape.iter().map(|d| d.to_string()).collect();
        s.push_str(&format!("tensor {} [{}]\n", t.name, dims.join(", ")));
    }
    s
}

pub fn write_file(path: &Path, file: &WeightsFile) -> Result<()> {
    fs::write(path, encode(file))?;
    fs::write(manifest_path(path), manifest(file))?;
    Ok(())
}

pub fn read_file(path: &Path) -> Result<WeightsFile> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{Activation, Mlp};
    use crate::numerics::Rng;

    fn sample() -> (Mlp, WeightsFile) {
        let mut rng = Rng::new(4);
        let mlp = Mlp::new(&[3, 5, 2], Activation::Tanh, Activation::Identity, &mut rng);
        let file = WeightsFile {
            config: vec![("hidden_dim".into(), 5)],
            tensors: export_tensors(&mlp),
        };
        (mlp, file)
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let (mlp, file) = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        write_file(&path, &file).unwrap();
        let back = read_file(&path).unwrap();
        assert_eq!(back, file);
        let mut other = mlp.zeros_like();
        import_tensors(&mut other, &back.tensors).unwrap();
        assert_eq!(other, mlp);
        let text = fs::read_to_string(manifest_path(&path)).unwrap();
        assert!(text.contains("tensor layer0.weight [5, 3]"));
    }

    #[test]
    fn truncated_file_is_rejected() {
        let (_, file) = sample();
        let bytes = encode(&file);
        for cut in [0, 5, 12, bytes.len() - 3] {
            assert!(matches!(
                decode(&bytes[..cut]),
                Err(Error::FormatVersionMismatch(_))
            ));
        }
    }

    #[test]
    fn newer_version_is_rejected() {
        let (_, file) = sample();
        let mut bytes = encode(&file);
        bytes[8] = 2;
        assert!(matches!(
            decode(&bytes),
            Err(Error::FormatVersionMismatch(_))
        ));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let (_, file) = sample();
        let mut rng = Rng::new(1);
        let mut wider = Mlp::new(&[3, 6, 2], Activation::Tanh, Activation::Identity, &mut rng);
        assert!(matches!(
            import_tensors(&mut wider, &file.tensors),
            Err(Error::ShapeMismatch { .. })
        ));
    }
}
