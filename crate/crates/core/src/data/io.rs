//! CSV and `UPSD` binary dataset files.
//!
//! Binary layout: `UPSD`, u32 version (1), u64 rows, u32 dims, then
//! `rows * dims` little-endian f64 in row-major order. No padding.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{default_names, Dataset};
use crate::error::{Error, Result};

pub const BINARY_MAGIC: &[u8; 4] = b"UPSD";
pub const BINARY_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Binary,
}

impl Format {
    /// `.csv` is CSV, anything else is the binary format.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Binary,
        }
    }
}

pub fn load_dataset(path: impl AsRef<Path>, format: Format) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let ds = match format {
        Format::Csv => read_csv(reader, path)?,
        Format::Binary => read_binary(reader, path)?,
    };
    Ok(ds.with_source(path.display().to_string()))
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>, format: Format) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    match format {
        Format::Csv => write_csv(dataset, &mut w),
        Format::Binary => write_binary(dataset, &mut w),
    }
    .and_then(|_| w.flush())
    .map_err(|e| Error::io(path, e))
}

fn read_csv(reader: impl BufRead, path: &Path) -> Result<Dataset> {
    let mut lines = reader.lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((_, line)) => {
                let line = line.map_err(|e| Error::io(path, e))?;
                if !line.trim().is_empty() {
                    break line;
                }
            }
            None => return Err(Error::MalformedHeader("file is empty".into())),
        }
    };
    let names: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    if names.iter().any(|n| n.is_empty()) {
        return Err(Error::MalformedHeader(format!("empty column name in {header:?}")));
    }
    if names.iter().all(|n| n.parse::<f64>().is_ok()) {
        return Err(Error::MalformedHeader(
            "first row is numeric; a header of column names is required".into(),
        ));
    }
    let dims = names.len();
    let mut values = Vec::new();
    for (lineno, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut found = 0;
        for (column, cell) in line.split(',').enumerate() {
            let cell = cell.trim();
            let v: f64 = cell.parse().map_err(|_| Error::NonNumeric {
                line: lineno + 1,
                column,
                cell: cell.to_string(),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFiniteValue {
                    row: values.len() / dims,
                    column,
                });
            }
            values.push(v);
            found += 1;
        }
        if found != dims {
            return Err(Error::RaggedRow {
                line: lineno + 1,
                found,
                expected: dims,
            });
        }
    }
    Dataset::new(values, dims, names)
}

fn write_csv(dataset: &Dataset, w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "{}", dataset.column_names().join(","))?;
    for row in dataset.iter_rows() {
        let mut first = true;
        for v in row {
            if !first {
                w.write_all(b",")?;
            }
            first = false;
            // Display for f64 is the shortest representation that round-trips.
            write!(w, "{v}")?;
        }
        w.write_all(b"\n")?;
    }
    Ok(())
}

fn read_binary(mut reader: impl Read, path: &Path) -> Result<Dataset> {
    let io = |e| Error::io(path, e);
    let mut magic = [0u8; 4];
    reader
        .read_exact(&mut magic)
        .map_err(|_| Error::MalformedHeader("truncated header".into()))?;
    if &magic != BINARY_MAGIC {
        return Err(Error::MalformedHeader(format!("bad magic {magic:?}")));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    reader
        .read_exact(&mut b4)
        .map_err(|_| Error::MalformedHeader("truncated header".into()))?;
    let version = u32::from_le_bytes(b4);
    if version != BINARY_VERSION {
        return Err(Error::MalformedHeader(format!(
            "unsupported version {version}"
        )));
    }
    reader
        .read_exact(&mut b8)
        .map_err(|_| Error::MalformedHeader("truncated header".into()))?;
    let rows = u64::from_le_bytes(b8);
    reader
        .read_exact(&mut b4)
        .map_err(|_| Error::MalformedHeader("truncated header".into()))?;
    let dims = u32::from_le_bytes(b4) as usize;
    if rows == 0 || dims == 0 {
        return Err(Error::EmptyDataset {
            rows: rows as usize,
            dims,
        });
    }
    let count = (rows as usize)
        .checked_mul(dims)
        .ok_or_else(|| Error::MalformedHeader("size overflow".into()))?;
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes).map_err(io)?;
    if bytes.len() != count * 8 {
        return Err(Error::MalformedHeader(format!(
            "payload has {} bytes, expected {}",
            bytes.len(),
            count * 8
        )));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Dataset::new(values, dims, default_names(dims))
}

fn write_binary(dataset: &Dataset, w: &mut impl Write) -> std::io::Result<()> {
    w.write_all(BINARY_MAGIC)?;
    w.write_all(&BINARY_VERSION.to_le_bytes())?;
    w.write_all(&(dataset.rows() as u64).to_le_bytes())?;
    w.write_all(&(dataset.dims() as u32).to_le_bytes())?;
    for v in dataset.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, Stream};
    use proptest::prelude::*;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn parses_small_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.csv", "c,v\n0.1,2\n3,4e-2\n-5,6\n");
        let d = load_dataset(&p, Format::Csv).unwrap();
        assert_eq!((d.rows(), d.dims()), (3, 2));
        assert_eq!(d.column_names(), ["c", "v"]);
        assert_eq!(d.row(1), [3.0, 0.04]);
    }

    #[test]
    fn csv_errors_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let cases = [
            ("nan.csv", "a,b\n1,nan\n", "non_finite_value"),
            ("inf.csv", "a\ninf\n", "non_finite_value"),
            ("text.csv", "a,b\n1,x\n", "non_numeric"),
            ("nohdr.csv", "1,2\n3,4\n", "malformed_header"),
            ("blank.csv", "", "malformed_header"),
            ("rows.csv", "a,b\n", "empty_dataset"),
            ("ragged.csv", "a,b\n1,2\n3\n", "ragged_row"),
        ];
        for (name, body, code) in cases {
            let p = write(&dir, name, body);
            let err = load_dataset(&p, Format::Csv).unwrap_err();
            assert_eq!(err.code(), code, "{name}: {err}");
        }
    }

    #[test]
    fn binary_roundtrip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let values: Vec<f64> = (0..400)
            .map(|i| rng::normal(1, Stream::Generate, &[i]) * 1e3)
            .collect();
        let d = Dataset::from_values(values, 4).unwrap();
        let p = dir.path().join("r.upsd");
        save_dataset(&d, &p, Format::Binary).unwrap();
        let back = load_dataset(&p, Format::Binary).unwrap();
        assert_eq!((back.rows(), back.dims()), (100, 4));
        for (a, b) in d.values().iter().zip(back.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let one = Dataset::from_values(vec![0.5], 1).unwrap();
        save_dataset(&one, &p, Format::Binary).unwrap();
        assert_eq!(load_dataset(&p, Format::Binary).unwrap().values(), [0.5]);
    }

    #[test]
    fn binary_header_layout() {
        let dir = tempfile::tempdir().unwrap();
        let d = Dataset::from_values(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 3).unwrap();
        let p = dir.path().join("h.bin");
        save_dataset(&d, &p, Format::Binary).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(bytes.len(), 4 + 4 + 8 + 4 + 6 * 8);
        assert_eq!(&bytes[..4], b"UPSD");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 3);
        assert_eq!(f64::from_le_bytes(bytes[20..28].try_into().unwrap()), 1.0);
    }

    #[test]
    fn csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let values: Vec<f64> = (0..30)
            .map(|i| rng::normal(2, Stream::Generate, &[i]) / 7.0)
            .collect();
        let d = Dataset::from_values(values, 3).unwrap();
        let p = dir.path().join("r.csv");
        save_dataset(&d, &p, Format::Csv).unwrap();
        let back = load_dataset(&p, Format::Csv).unwrap();
        for (a, b) in d.values().iter().zip(back.values()) {
            assert!((a - b).abs() <= 1e-15 * a.abs().max(1.0));
        }
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let d = Dataset::from_values(vec![1.0], 1).unwrap();
        let err = save_dataset(&d, "/nonexistent-dir/x/y.bin", Format::Binary).unwrap_err();
        assert_eq!(err.code(), "io");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn roundtrips_any_finite_values(
            bits in proptest::collection::vec(any::<u64>(), 1..64)
        ) {
            // includes subnormals; non-finite patterns are mapped to zero
            let values: Vec<f64> = bits
                .iter()
                .map(|&b| { let v = f64::from_bits(b); if v.is_finite() { v } else { 0.0 } })
                .collect();
            let d = Dataset::from_values(values, 1).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let pb = dir.path().join("p.bin");
            let pc = dir.path().join("p.csv");
            save_dataset(&d, &pb, Format::Binary).unwrap();
            save_dataset(&d, &pc, Format::Csv).unwrap();
            let b = load_dataset(&pb, Format::Binary).unwrap();
            let c = load_dataset(&pc, Format::Csv).unwrap();
            for ((x, y), z) in d.values().iter().zip(b.values()).zip(c.values()) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
                prop_assert_eq!(x.to_bits(), z.to_bits());
            }
        }
    }
}
