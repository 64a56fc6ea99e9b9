//! Named-tensor feature-file container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "DCF1" (4 bytes)
//! u32 record count
//! per record:
//!   u16  name length
//!   ...  UTF-8 name
//!   u8   rank
//!   u32  extent, rank times
//!   f32  values, row-major, product(extents) of them
//! ```
//!
//! The container is the interchange format for datasets, extracted features,
//! saliency maps, and model checkpoints (one named tensor per record).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor};

pub const MAGIC: &[u8; 4] = b"DCF1";

fn bad(msg: impl Into<String>) -> Error {
    Error::Container(msg.into())
}

/// Write records in iteration order. Values are narrowed to `f32`.
pub fn write_container<'a, I>(path: &Path, records: I) -> Result<()>
where
    I: IntoIterator<Item = (&'a str, &'a Tensor)>,
{
    let records: Vec<(&str, &Tensor)> = records.into_iter().collect();
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(records.len() as u32).to_le_bytes())?;
    for (name, tensor) in records {
        let name_bytes = name.as_bytes();
        if name_bytes.len() > u16::MAX as usize {
            return Err(bad(format!("record name too long: {} bytes", name_bytes.len())));
        }
        if tensor.rank() > u8::MAX as usize {
            return Err(bad(format!("rank {} exceeds container limit", tensor.rank())));
        }
        w.write_all(&(name_bytes.len() as u16).to_le_bytes())?;
        w.write_all(name_bytes)?;
        w.write_all(&[tensor.rank() as u8])?;
        for &e in tensor.shape() {
            if e > u32::MAX as usize {
                return Err(bad(format!("extent {e} exceeds container limit")));
            }
            w.write_all(&(e as u32).to_le_bytes())?;
        }
        for v in tensor.to_f32() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read every record, preserving file order.
pub fn read_container(path: &Path) -> Result<IndexMap<String, Tensor>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| bad(format!("{}: truncated before magic", path.display())))?;
    if &magic != MAGIC {
        return Err(bad(format!(
            "{}: bad magic {:?}, expected {:?}",
            path.display(),
            magic,
            MAGIC
        )));
    }
    let count = read_u32(&mut r, path, "record count")?;
    let mut out = IndexMap::new();
    for rec in 0..count {
        let ctx = format!("record {rec}");
        let name_len = read_u16(&mut r, path, &ctx)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)
            .map_err(|_| bad(format!("{}: truncated in name of {ctx}", path.display())))?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| bad(format!("{}: non-UTF-8 name in {ctx}", path.display())))?;
        let mut rank = [0u8; 1];
        r.read_exact(&mut rank)
            .map_err(|_| bad(format!("{}: truncated in rank of `{name}`", path.display())))?;
        let mut shape = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            shape.push(read_u32(&mut r, path, &name)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = vec![0f32; numel];
        let mut buf = vec![0u8; numel * 4];
        r.read_exact(&mut buf)
            .map_err(|_| bad(format!("{}: truncated in values of `{name}`", path.display())))?;
        for (v, chunk) in data.iter_mut().zip(buf.chunks_exact(4)) {
            *v = f32::from_le_bytes(chunk.try_into().unwrap());
        }
        out.insert(name, Tensor::from_f32(shape, &data)?);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(bad(format!(
            "{}: trailing bytes after {count} records",
            path.display()
        )));
    }
    Ok(out)
}

fn read_u32(r: &mut impl Read, path: &Path, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| bad(format!("{}: truncated reading {what}", path.display())))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u16(r: &mut impl Read, path: &Path, what: &str) -> Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)
        .map_err(|_| bad(format!("{}: truncated reading {what}", path.display())))?;
    Ok(u16::from_le_bytes(b))
}

/// Fetch one record or fail with its name.
pub fn require<'a>(records: &'a IndexMap<String, Tensor>, name: &str, path: &Path) -> Result<&'a Tensor> {
    records
        .get(name)
        .ok_or_else(|| bad(format!("{}: missing record `{name}`", path.display())))
}

/// Serialize a parameter store, one record per parameter.
pub fn save_param_store(path: &Path, params: &ParamStore) -> Result<()> {
    write_container(path, params.iter())
}

/// Load a checkpoint written by [`save_param_store`].
pub fn load_param_store(path: &Path, seed: u64) -> Result<ParamStore> {
    let records = read_container(path)?;
    let mut ps = ParamStore::new(seed);
    for (name, tensor) in records {
        ps.insert(name, tensor);
    }
    Ok(ps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.dcf");
        let a = Tensor::new(vec![2, 3], vec![1.0, -2.5, 0.125, 4.0, 0.0, -0.75]).unwrap();
        let b = Tensor::scalar(42.0);
        write_container(&path, [("a", &a), ("nested/b", &b)]).unwrap();
        let back = read_container(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back["a"], a);
        assert_eq!(back["nested/b"], b);
    }

    #[test]
    fn empty_container_is_valid() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("empty.dcf");
        write_container(&path, std::iter::empty::<(&str, &Tensor)>()).unwrap();
        let back = read_container(&path).unwrap();
        assert!(back.is_empty());
    }

    #[test]
    fn bad_magic_and_truncation_are_descriptive() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.dcf");
        std::fs::write(&path, b"NOPE\x00\x00\x00\x00").unwrap();
        let err = read_container(&path).unwrap_err().to_string();
        assert!(err.contains("bad magic"), "{err}");

        let a = Tensor::vector(&[1.0, 2.0, 3.0]);
        write_container(&path, [("a", &a)]).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        let err = read_container(&path).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");
        assert!(err.contains('a'), "{err}");
    }
}
