//! Binary model checkpoints.
//!
//! Flow: `UPSF`, u32 version, u64 header length, JSON header (architecture,
//! standardiser, training size), u64 parameter count, little-endian f64
//! parameters. Histogram: `UPSH`, u32 version, u32 dims, u64 bins, u64
//! training size, f64 floor mass, f64 lower[D], f64 width[D], f64 masses.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FittedModel, FlowArchitecture, FlowDensity, HistogramDensity};
use crate::error::{Error, Result};

pub const FLOW_MAGIC: [u8; 4] = *b"UPSF";
pub const HISTOGRAM_MAGIC: [u8; 4] = *b"UPSH";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct FlowHeader {
    architecture: FlowArchitecture,
    mean: Vec<f64>,
    std: Vec<f64>,
    trained_on: usize,
}

fn put_f64s(w: &mut impl Write, v: &[f64]) -> std::io::Result<()> {
    for x in v {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub fn save_model(model: &FittedModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let res = match model {
        FittedModel::Flow(f) => write_flow(f, &mut w),
        FittedModel::Histogram(h) => write_histogram(h, &mut w),
    };
    res.and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn write_flow(f: &FlowDensity, w: &mut impl Write) -> std::io::Result<()> {
    let header = serde_json::to_vec(&FlowHeader {
        architecture: f.architecture().clone(),
        mean: f.mean().to_vec(),
        std: f.std().to_vec(),
        trained_on: f.trained_on(),
    })?;
    w.write_all(&FLOW_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    let params = f.params().to_vec();
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    put_f64s(w, &params)
}

fn write_histogram(h: &HistogramDensity, w: &mut impl Write) -> std::io::Result<()> {
    w.write_all(&HISTOGRAM_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(h.lower().len() as u32).to_le_bytes())?;
    w.write_all(&(h.bins() as u64).to_le_bytes())?;
    w.write_all(&(h.trained_on() as u64).to_le_bytes())?;
    put_f64s(w, &[h.floor_mass()])?;
    put_f64s(w, h.lower())?;
    put_f64s(w, h.width())?;
    put_f64s(w, h.masses())
}

struct Reader<'a, R> {
    inner: R,
    path: &'a Path,
}

impl<R: Read> Reader<'_, R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner.read_exact(&mut b).map_err(|e| self.err(e))?;
        Ok(b)
    }

    fn err(&self, e: std::io::Error) -> Error {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::MalformedHeader(format!("{} is truncated", self.path.display()))
        } else {
            Error::io(self.path, e)
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn f64s(&mut self, n: u64) -> Result<Vec<f64>> {
        // cap up-front allocation; a bogus count fails on read instead
        let mut out = Vec::with_capacity(n.min(1 << 20) as usize);
        for _ in 0..n {
            out.push(f64::from_le_bytes(self.bytes()?));
        }
        Ok(out)
    }
}

pub fn load_model(path: impl AsRef<Path>) -> Result<FittedModel> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        inner: BufReader::new(file),
        path,
    };
    let magic: [u8; 4] = r.bytes()?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::MalformedHeader(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    match magic {
        FLOW_MAGIC => read_flow(&mut r).map(FittedModel::Flow),
        HISTOGRAM_MAGIC => read_histogram(&mut r).map(FittedModel::Histogram),
        _ => Err(Error::MalformedHeader(format!(
            "{} is not a model checkpoint",
            path.display()
        ))),
    }
}

fn read_flow<R: Read>(r: &mut Reader<'_, R>) -> Result<FlowDensity> {
    let len = r.u64()?;
    if len > 1 << 24 {
        return Err(Error::MalformedHeader("flow header too large".into()));
    }
    let mut buf = vec![0u8; len as usize];
    r.inner.read_exact(&mut buf).map_err(|e| r.err(e))?;
    let header: FlowHeader = serde_json::from_slice(&buf)
        .map_err(|e| Error::MalformedHeader(format!("flow header: {e}")))?;
    let count = r.u64()?;
    let params = r.f64s(count)?;
    let mut flow = FlowDensity::new(header.architecture, header.mean, header.std, 0, 0.0)?;
    flow.params_mut().set_from_slice(&params)?;
    flow.set_trained_on(header.trained_on);
    Ok(flow)
}

fn read_histogram<R: Read>(r: &mut Reader<'_, R>) -> Result<HistogramDensity> {
    let dims = r.u32()? as usize;
    let bins = r.u64()? as usize;
    let trained_on = r.u64()? as usize;
    let cells = super::dense_bytes(bins, dims)
        .map(|b| b / 8)
        .filter(|&c| c <= u64::MAX as u128)
        .ok_or_else(|| Error::MalformedHeader("histogram shape overflows".into()))?;
    let floor = r.f64s(1)?[0];
    let lower = r.f64s(dims as u64)?;
    let width = r.f64s(dims as u64)?;
    let masses = r.f64s(cells as u64)?;
    Ok(HistogramDensity::from_parts(
        bins, lower, width, masses, floor, trained_on,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, GeneratorSpec};
    use crate::density::{fit_histogram, DensityModel, TransformKind, DEFAULT_MEMORY_CAP};

    #[test]
    fn flow_round_trip_is_exact() {
        let arch = FlowArchitecture {
            dims: 3,
            layers: 2,
            transform: TransformKind::Spline {
                knots: 6,
                tail_bound: 4.0,
            },
            hidden: vec![5, 7],
        };
        let mut f = FlowDensity::new(arch, vec![0.5, -1.0, 2.0], vec![1.0, 0.3, 2.5], 3, 0.7).unwrap();
        f.set_trained_on(1234);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.upsf");
        save_model(&FittedModel::Flow(f.clone()), &p).unwrap();
        assert_eq!(load_model(&p).unwrap(), FittedModel::Flow(f.clone()));
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"UPSF");
    }

    #[test]
    fn histogram_round_trip_is_exact() {
        let d = generate(&GeneratorSpec::surrogate(2, 500), 1).unwrap();
        let h = fit_histogram(&d, 9, DEFAULT_MEMORY_CAP).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.upsh");
        save_model(&FittedModel::Histogram(h.clone()), &p).unwrap();
        let back = load_model(&p).unwrap();
        for row in d.iter_rows() {
            assert_eq!(back.log_density(row).to_bits(), h.log_density(row).to_bits());
        }
        assert_eq!(back, FittedModel::Histogram(h));
    }

    #[test]
    fn garbage_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("junk");
        std::fs::write(&p, b"NOPE\x01\x00\x00\x00").unwrap();
        assert_eq!(load_model(&p).unwrap_err().code(), "malformed_header");
        std::fs::write(&p, b"UPSH\x01\x00\x00\x00\x02").unwrap();
        assert_eq!(load_model(&p).unwrap_err().code(), "malformed_header");
    }
}
