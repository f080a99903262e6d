//! Binary kernel cache.
//!
//! Layout, all little-endian:
//!
//! | bytes | field |
//! |-------|-------|
//! | 4     | magic `TSQK` |
//! | 4     | format version (u32) |
//! | 4     | n_t (u32) |
//! | 4     | n_x (u32) |
//! | 8     | dt (f64) |
//! | 8     | dx (f64) |
//! | 4     | kind tag (u32) |
//! | 32    | SHA-256 of the operator parameters |
//! | 16 P² | values as (re, im) f64 pairs, row-major, point index `t * n_x + x` |

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::field_solver::{Kernel, KernelKind, KleinGordonOperator};

pub const MAGIC: [u8; 4] = *b"TSQK";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 4 + 4 + 4 + 4 + 8 + 8 + 4 + 32;

pub fn encode_kernel(op: &KleinGordonOperator, kernel: &Kernel) -> Result<Vec<u8>> {
    let st = op.spacetime();
    if kernel.n_points() != st.num_points() {
        return Err(Error::DimensionMismatch { expected: st.num_points(), got: kernel.n_points() });
    }
    let mut out = Vec::with_capacity(HEADER_LEN + 16 * kernel.values().len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(st.n_t() as u32).to_le_bytes());
    out.extend_from_slice(&(st.n_x() as u32).to_le_bytes());
    out.extend_from_slice(&st.dt().to_le_bytes());
    out.extend_from_slice(&st.dx().to_le_bytes());
    out.extend_from_slice(&kernel.kind().tag().to_le_bytes());
    out.extend_from_slice(&op.content_hash());
    for v in kernel.values() {
        out.extend_from_slice(&v.re.to_le_bytes());
        out.extend_from_slice(&v.im.to_le_bytes());
    }
    Ok(out)
}

pub fn write_kernel<W: Write>(mut w: W, op: &KleinGordonOperator, kernel: &Kernel) -> Result<()> {
    w.write_all(&encode_kernel(op, kernel)?)?;
    Ok(())
}

fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Cache("truncated file".into()));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

fn take_u32(bytes: &mut &[u8]) -> Result<u32> {
    Ok(u32::from_le_bytes(take(bytes, 4)?.try_into().expect("4 bytes")))
}

fn take_f64(bytes: &mut &[u8]) -> Result<f64> {
    Ok(f64::from_le_bytes(take(bytes, 8)?.try_into().expect("8 bytes")))
}

/// Decode a cached kernel, checking that it was produced for `op` and is of
/// the requested kind.
pub fn decode_kernel(mut bytes: &[u8], op: &KleinGordonOperator, kind: KernelKind) -> Result<Kernel> {
    let st = op.spacetime();
    let buf = &mut bytes;
    if take(buf, 4)? != MAGIC {
        return Err(Error::Cache("bad magic bytes".into()));
    }
    let version = take_u32(buf)?;
    if version != FORMAT_VERSION {
        return Err(Error::Cache(format!("unsupported format version {version}")));
    }
    let (n_t, n_x) = (take_u32(buf)? as usize, take_u32(buf)? as usize);
    let (dt, dx) = (take_f64(buf)?, take_f64(buf)?);
    if n_t != st.n_t() || n_x != st.n_x() || dt.to_bits() != st.dt().to_bits() || dx.to_bits() != st.dx().to_bits() {
        return Err(Error::Cache(format!(
            "lattice mismatch: file has {n_t}x{n_x} dt={dt} dx={dx}"
        )));
    }
    let tag = take_u32(buf)?;
    match KernelKind::from_tag(tag) {
        Some(k) if k == kind => {}
        Some(k) => {
            return Err(Error::Cache(format!("expected a {} kernel, found {}", kind.name(), k.name())))
        }
        None => return Err(Error::Cache(format!("unknown kernel tag {tag}"))),
    }
    if take(buf, 32)? != op.content_hash() {
        return Err(Error::Cache("operator hash mismatch".into()));
    }
    let n = st.num_points();
    if buf.len() != 16 * n * n {
        return Err(Error::Cache(format!(
            "payload has {} bytes, expected {}",
            buf.len(),
            16 * n * n
        )));
    }
    let values = buf
        .chunks_exact(16)
        .map(|c| {
            C64::new(
                f64::from_le_bytes(c[..8].try_into().expect("8 bytes")),
                f64::from_le_bytes(c[8..].try_into().expect("8 bytes")),
            )
        })
        .collect();
    Kernel::from_values(kind, n, st.cell_volume(), values)
}

pub fn read_kernel<R: Read>(mut r: R, op: &KleinGordonOperator, kind: KernelKind) -> Result<Kernel> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode_kernel(&bytes, op, kind)
}

/// File name used for a kernel inside a cache directory.
pub fn cache_path(dir: &Path, op: &KleinGordonOperator, kind: KernelKind) -> PathBuf {
    let hash: String = op.content_hash()[..12].iter().map(|b| format!("{b:02x}")).collect();
    dir.join(format!("{}-{hash}.tsqk", kind.name()))
}

/// Load `kind` from `dir` if present, otherwise build it and store it.
pub fn load_or_build<F>(dir: &Path, op: &KleinGordonOperator, kind: KernelKind, build: F) -> Result<Kernel>
where
    F: FnOnce() -> Result<Kernel>,
{
    let path = cache_path(dir, op, kind);
    if path.exists() {
        return decode_kernel(&fs::read(&path)?, op, kind);
    }
    let kernel = build()?;
    fs::create_dir_all(dir)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, encode_kernel(op, &kernel)?)?;
    fs::rename(&tmp, &path)?;
    Ok(kernel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field_solver::{green_kernel, vacuum_two_point};
    use crate::lattice::{LatticeSpacetime, Topology};

    fn op(m2: f64) -> KleinGordonOperator {
        let st = LatticeSpacetime::new(8, 3, 0.5, 1.0, Topology::Periodic).unwrap();
        KleinGordonOperator::with_constant_potential(st, m2, 0.0).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let op = op(0.4);
        let w = vacuum_two_point(&op).unwrap();
        let bytes = encode_kernel(&op, &w).unwrap();
        assert_eq!(&bytes[..4], b"TSQK");
        assert_eq!(bytes.len(), HEADER_LEN + 16 * 24 * 24);
        let back = decode_kernel(&bytes, &op, KernelKind::TwoPoint).unwrap();
        assert!(back.values().iter().zip(w.values()).all(|(a, b)| {
            a.re.to_bits() == b.re.to_bits() && a.im.to_bits() == b.im.to_bits()
        }));
    }

    #[test]
    fn mismatches_are_reported() {
        let a = op(0.4);
        let g = green_kernel(&a, KernelKind::Retarded).unwrap();
        let bytes = encode_kernel(&a, &g).unwrap();
        assert!(matches!(decode_kernel(&bytes, &op(0.5), KernelKind::Retarded), Err(Error::Cache(_))));
        assert!(matches!(decode_kernel(&bytes, &a, KernelKind::Advanced), Err(Error::Cache(_))));
        assert!(matches!(decode_kernel(&bytes[..bytes.len() - 3], &a, KernelKind::Retarded), Err(Error::Cache(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_kernel(&bad, &a, KernelKind::Retarded), Err(Error::Cache(_))));
    }
}
