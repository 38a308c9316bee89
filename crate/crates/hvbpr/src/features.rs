//! Item feature files.
//!
//! Binary layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "HVBPRFT1"
//! count    u64
//! dim      u64
//! count x { id_index u64, dim x f32 }
//! ```
//!
//! `id_index` is a zero-based line number in the sidecar `<file>.ids`, which
//! lists one item id per line. Files without the magic are read as CSV rows
//! `item_id,v1,...,vF`, with an optional `item_id,...` header.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"HVBPRFT1";

/// Feature rows keyed by external item id, in file order.
#[derive(Clone, Debug, PartialEq)]
pub struct RawFeatures {
    pub dim: usize,
    pub ids: Vec<String>,
    /// `ids.len() x dim`, row-major.
    pub values: Vec<f32>,
}

impl RawFeatures {
    pub fn row(&self, k: usize) -> &[f32] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".ids");
    PathBuf::from(s)
}

pub fn read(path: &Path) -> Result<RawFeatures> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut head = [0u8; 8];
    let n = read_up_to(&mut file, &mut head).map_err(|e| Error::io(path, e))?;
    drop(file);
    if n == 8 && &head == MAGIC {
        read_binary(path)
    } else {
        read_csv(path)
    }
}

fn read_up_to(r: &mut impl Read, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..])? {
            0 => break,
            k => filled += k,
        }
    }
    Ok(filled)
}

fn read_binary(path: &Path) -> Result<RawFeatures> {
    let side = sidecar_path(path);
    let names: Vec<String> =
        std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?.lines().map(str::to_owned).collect();

    let mut r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let truncated = |e: std::io::Error| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::format(path, "truncated feature file")
        } else {
            Error::io(path, e)
        }
    };
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf).map_err(truncated)?;
    let mut read_u64 = |r: &mut BufReader<File>| -> Result<u64> {
        r.read_exact(&mut u64buf).map_err(truncated)?;
        Ok(u64::from_le_bytes(u64buf))
    };
    let count = read_u64(&mut r)? as usize;
    let dim = read_u64(&mut r)? as usize;
    if dim == 0 {
        return Err(Error::format(path, "feature dimension is zero"));
    }
    let mut ids = Vec::with_capacity(count);
    let mut values = Vec::with_capacity(count.saturating_mul(dim).min(1 << 28));
    let mut row = vec![0u8; dim * 4];
    for _ in 0..count {
        let k = read_u64(&mut r)? as usize;
        let name = names
            .get(k)
            .ok_or_else(|| Error::format(path, format!("id index {k} is past the end of {}", side.display())))?;
        r.read_exact(&mut row).map_err(truncated)?;
        for chunk in row.chunks_exact(4) {
            let v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
            if !v.is_finite() {
                return Err(Error::format(path, format!("non-finite feature for item `{name}`")));
            }
            values.push(v);
        }
        ids.push(name.clone());
    }
    let mut extra = [0u8; 1];
    if read_up_to(&mut r, &mut extra).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::format(path, "trailing bytes after the last feature row"));
    }
    Ok(RawFeatures { dim, ids, values })
}

fn read_csv(path: &Path) -> Result<RawFeatures> {
    let r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let mut dim = None;
    let mut ids = Vec::new();
    let mut values = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || (n == 0 && line.starts_with("item_id")) {
            continue;
        }
        let mut fields = line.split(',');
        let id = fields.next().unwrap_or_default().trim();
        if id.is_empty() {
            return Err(Error::parse(path, n + 1, "missing item id"));
        }
        let start = values.len();
        for f in fields {
            let v: f32 =
                f.trim().parse().map_err(|_| Error::parse(path, n + 1, format!("`{}` is not a number", f.trim())))?;
            if !v.is_finite() {
                return Err(Error::parse(path, n + 1, "non-finite feature value"));
            }
            values.push(v);
        }
        let found = values.len() - start;
        match dim {
            None if found == 0 => return Err(Error::parse(path, n + 1, "row has no feature values")),
            None => dim = Some(found),
            Some(d) if d != found => {
                return Err(Error::DimensionMismatch { path: path.to_owned(), expected: d, found });
            }
            Some(_) => {}
        }
        ids.push(id.to_owned());
    }
    let dim = dim.ok_or_else(|| Error::format(path, "no feature rows"))?;
    Ok(RawFeatures { dim, ids, values })
}

pub fn write_binary(path: &Path, features: &RawFeatures) -> Result<()> {
    let side = sidecar_path(path);
    let mut s = String::new();
    for id in &features.ids {
        s.push_str(id);
        s.push('\n');
    }
    std::fs::write(&side, s).map_err(|e| Error::io(&side, e))?;

    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&(features.ids.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&(features.dim as u64).to_le_bytes()).map_err(io)?;
    for k in 0..features.ids.len() {
        w.write_all(&(k as u64).to_le_bytes()).map_err(io)?;
        for v in features.row(k) {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn write_csv(path: &Path, features: &RawFeatures) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    for (k, id) in features.ids.iter().enumerate() {
        write!(w, "{id}").map_err(io)?;
        for v in features.row(k) {
            write!(w, ",{v}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> RawFeatures {
        RawFeatures { dim: 3, ids: vec!["b".into(), "a".into()], values: vec![1.0, -2.5, 0.125, 3.0, 4.0, 1e-7] }
    }

    #[test]
    fn binary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.bin");
        write_binary(&p, &sample()).unwrap();
        assert_eq!(read(&p).unwrap(), sample());
        assert!(sidecar_path(&p).exists());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        write_csv(&p, &sample()).unwrap();
        assert_eq!(read(&p).unwrap(), sample());
    }

    #[test]
    fn csv_header_and_ragged_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        std::fs::write(&p, "item_id,v1,v2\nx,1,2\ny,3,4\n").unwrap();
        assert_eq!(read(&p).unwrap().ids, ["x", "y"]);
        std::fs::write(&p, "x,1,2\ny,3\n").unwrap();
        assert!(matches!(read(&p), Err(Error::DimensionMismatch { expected: 2, found: 1, .. })));
        std::fs::write(&p, "x,1,oops\n").unwrap();
        assert!(matches!(read(&p), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn truncated_binary_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.bin");
        write_binary(&p, &sample()).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 2]).unwrap();
        assert!(matches!(read(&p), Err(Error::Format { .. })));
    }
}
