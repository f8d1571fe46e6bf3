//! Versioned binary container for fitted maps.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic   8  bytes  "MAGMAP01"
//! version u32       currently 1
//! grid    3 x f64 lower, 3 x f64 upper, 3 x u64 counts
//! hyp     f64 length_scale, f64 signal_variance, f64 noise_variance
//! jitter  f64
//! means   3 x f64 component means
//! diag    u64 cg_iterations, u8 cg_converged, f64 cg_relative_residual,
//!         u64 lanczos_rank, u8 lanczos_breakdown
//! cache   u64 node count, then that many f64 (must match the grid)
//! var     u8 flag; if 1: u64 rank T, T x f64 tridiagonal diagonal,
//!         (T-1) x f64 off-diagonal, nodes*T x f64 row-major R factor
//! ```
//!
//! The decoder validates every declared length against the bytes actually
//! remaining before it allocates, and rejects non-finite floats, so a
//! truncated or corrupted file fails cleanly instead of aborting.

use std::fs;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian, WriteBytesExt};
use ndarray::Array2;

use crate::dski::{FitDiagnostics, FittedMap};
use crate::error::{Error, Result};
use crate::grid::InducingGrid;
use crate::kernels::Hyperparameters;

pub const MODEL_MAGIC: &[u8; 8] = b"MAGMAP01";
pub const MODEL_VERSION: u32 = 1;

/// Serialize a fitted map. The encoding is a pure function of the model
/// state, so identical fits produce identical bytes.
pub fn encode_model(map: &FittedMap) -> Vec<u8> {
    let grid = map.grid();
    let hyp = map.hyperparameters();
    let diag = &map.diagnostics;
    let mut out = Vec::with_capacity(128 + 8 * map.mean_cache.len());
    out.extend_from_slice(MODEL_MAGIC);
    out.write_u32::<LittleEndian>(MODEL_VERSION).unwrap();
    for d in 0..3 {
        out.write_f64::<LittleEndian>(grid.lower[d]).unwrap();
    }
    for d in 0..3 {
        out.write_f64::<LittleEndian>(grid.upper[d]).unwrap();
    }
    for d in 0..3 {
        out.write_u64::<LittleEndian>(grid.counts[d] as u64)
            .unwrap();
    }
    out.write_f64::<LittleEndian>(hyp.length_scale).unwrap();
    out.write_f64::<LittleEndian>(hyp.signal_variance).unwrap();
    out.write_f64::<LittleEndian>(hyp.noise_variance).unwrap();
    out.write_f64::<LittleEndian>(map.jitter()).unwrap();
    for mean in map.component_means() {
        out.write_f64::<LittleEndian>(mean).unwrap();
    }
    out.write_u64::<LittleEndian>(diag.cg_iterations as u64)
        .unwrap();
    out.write_u8(diag.cg_converged as u8).unwrap();
    out.write_f64::<LittleEndian>(diag.cg_relative_residual)
        .unwrap();
    out.write_u64::<LittleEndian>(diag.lanczos_rank as u64)
        .unwrap();
    out.write_u8(diag.lanczos_breakdown as u8).unwrap();
    out.write_u64::<LittleEndian>(map.mean_cache.len() as u64)
        .unwrap();
    for &v in &map.mean_cache {
        out.write_f64::<LittleEndian>(v).unwrap();
    }
    match &map.variance {
        None => out.write_u8(0).unwrap(),
        Some(cache) => {
            out.write_u8(1).unwrap();
            out.write_u64::<LittleEndian>(cache.diag.len() as u64)
                .unwrap();
            for &v in &cache.diag {
                out.write_f64::<LittleEndian>(v).unwrap();
            }
            for &v in &cache.off {
                out.write_f64::<LittleEndian>(v).unwrap();
            }
            for &v in cache.r.iter() {
                out.write_f64::<LittleEndian>(v).unwrap();
            }
        }
    }
    out
}

pub fn save_model(path: impl AsRef<Path>, map: &FittedMap) -> Result<()> {
    Ok(fs::write(path, encode_model(map))?)
}

/// Bounds-checked reader over the container bytes.
struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Data(format!(
                "model file truncated reading {what}: need {n} bytes, {} left",
                self.remaining()
            )));
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(LittleEndian::read_u32(self.take(4, what)?))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(LittleEndian::read_u64(self.take(8, what)?))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let v = LittleEndian::read_f64(self.take(8, what)?);
        if v.is_nan() || v.is_infinite() {
            return Err(Error::Data(format!("model file holds non-finite {what}")));
        }
        Ok(v)
    }

    /// A count field: checked against the remaining bytes before any
    /// allocation sized by it, assuming 8-byte elements follow.
    fn length(&mut self, what: &str) -> Result<usize> {
        let n = self.u64(what)?;
        let n: usize = n
            .try_into()
            .map_err(|_| Error::Data(format!("declared {what} {n} is out of range")))?;
        let bytes = n
            .checked_mul(8)
            .ok_or_else(|| Error::Data(format!("declared {what} {n} is out of range")))?;
        if self.remaining() < bytes {
            return Err(Error::Data(format!(
                "declared {what} {n} exceeds the bytes remaining in the file"
            )));
        }
        Ok(n)
    }

    fn f64_vec(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = self.take(8 * n, what)?;
        let mut out = vec![0.0; n];
        LittleEndian::read_f64_into(bytes, &mut out);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("model file holds non-finite {what}")));
        }
        Ok(out)
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<FittedMap> {
    let mut r = Reader::new(bytes);
    let magic = r.take(8, "magic header")?;
    if magic != MODEL_MAGIC {
        return Err(Error::Data("not a model file (bad magic header)".into()));
    }
    let version = r.u32("format version")?;
    if version != MODEL_VERSION {
        return Err(Error::Data(format!(
            "unsupported model format version {version} (expected {MODEL_VERSION})"
        )));
    }
    let mut lower = [0.0; 3];
    let mut upper = [0.0; 3];
    let mut counts = [0usize; 3];
    for d in 0..3 {
        lower[d] = r.f64("grid lower bound")?;
    }
    for d in 0..3 {
        upper[d] = r.f64("grid upper bound")?;
    }
    for d in 0..3 {
        let c = r.u64("grid count")?;
        counts[d] = c
            .try_into()
            .map_err(|_| Error::Data(format!("grid count {c} is out of range")))?;
    }
    let grid = InducingGrid::from_axes(
        [
            [lower[0], upper[0]],
            [lower[1], upper[1]],
            [lower[2], upper[2]],
        ],
        counts,
    )?;
    let nodes = counts[0]
        .checked_mul(counts[1])
        .and_then(|p| p.checked_mul(counts[2]))
        .ok_or_else(|| Error::Data("grid node count overflows".into()))?;
    let hyp = Hyperparameters::new(
        r.f64("length scale")?,
        r.f64("signal variance")?,
        r.f64("noise variance")?,
    )?;
    let jitter = r.f64("jitter")?;
    let component_means = [
        r.f64("component mean")?,
        r.f64("component mean")?,
        r.f64("component mean")?,
    ];
    let cg_iterations = r.u64("solver iteration count")? as usize;
    let cg_converged = r.u8("solver convergence flag")? != 0;
    let cg_relative_residual = r.f64("solver residual")?;
    let lanczos_rank = r.u64("variance rank")? as usize;
    let lanczos_breakdown = r.u8("variance breakdown flag")? != 0;
    let diagnostics = FitDiagnostics {
        cg_iterations,
        cg_converged,
        cg_relative_residual,
        lanczos_rank,
        lanczos_breakdown,
    };
    let cache_len = r.length("mean cache length")?;
    if cache_len != nodes {
        return Err(Error::Data(format!(
            "mean cache holds {cache_len} entries but the grid has {nodes} nodes"
        )));
    }
    let mean_cache = r.f64_vec(cache_len, "mean cache")?;
    let variance = match r.u8("variance flag")? {
        0 => None,
        1 => {
            let t = r.length("variance rank")?;
            if t == 0 {
                return Err(Error::Data("stored variance has rank zero".into()));
            }
            let diag = r.f64_vec(t, "variance tridiagonal")?;
            let expected = (t - 1)
                .checked_add(
                    nodes
                        .checked_mul(t)
                        .ok_or_else(|| Error::Data("variance factor size overflows".into()))?,
                )
                .and_then(|n| n.checked_mul(8))
                .ok_or_else(|| Error::Data("variance factor size overflows".into()))?;
            if r.remaining() < expected {
                return Err(Error::Data(format!(
                    "variance data needs {expected} bytes, {} left",
                    r.remaining()
                )));
            }
            let off = r.f64_vec(t - 1, "variance off-diagonal")?;
            let flat = r.f64_vec(nodes * t, "variance factor")?;
            let factor = Array2::from_shape_vec((nodes, t), flat).expect("length checked above");
            Some((diag, off, factor))
        }
        other => {
            return Err(Error::Data(format!("invalid variance flag {other}")));
        }
    };
    if r.remaining() != 0 {
        return Err(Error::Data(format!(
            "{} trailing bytes after the model payload",
            r.remaining()
        )));
    }
    FittedMap::from_parts(
        grid,
        hyp,
        jitter,
        component_means,
        mean_cache,
        variance,
        diagnostics,
    )
}

pub fn load_model(path: impl AsRef<Path>) -> Result<FittedMap> {
    decode_model(&fs::read(path)?)
}
