//! Binary checkpoint of an [`MhdState`].
//!
//! Layout, all little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 4     | magic `MHDF` |
//! | 4     | format version, `u32` |
//! | 8     | `N`, `u64` |
//! | 8     | truncation radius `R`, `f64` |
//! | 8     | time `t`, `f64` |
//! | 8     | dealias fraction, `f64` |
//!
//! followed by the six coefficient arrays `u₁ u₂ u₃ b₁ b₂ b₃`, each `N³`
//! pairs `(re, im)` of `f64` in array index order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::integrator::MhdState;
use crate::spectral::{GridSpec, SpectralVectorField};

pub const MAGIC: &[u8; 4] = b"MHDF";
pub const VERSION: u32 = 1;

pub fn write_to<W: Write>(state: &MhdState, mut w: W) -> std::io::Result<()> {
    let g = state.grid();
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(g.n_modes() as u64).to_le_bytes())?;
    w.write_all(&g.truncation_radius().to_le_bytes())?;
    w.write_all(&state.t.to_le_bytes())?;
    w.write_all(&g.dealias_fraction().to_le_bytes())?;
    for field in [&state.u, &state.b] {
        for c in field.components() {
            for z in c {
                w.write_all(&z.re.to_le_bytes())?;
                w.write_all(&z.im.to_le_bytes())?;
            }
        }
    }
    w.flush()
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> std::io::Result<f64> {
    read_u64(r).map(f64::from_bits)
}

/// Parses a checkpoint; `Err(String)` describes the defect.
pub fn read_from<R: Read>(mut r: R) -> std::result::Result<MhdState, String> {
    let io = |e: std::io::Error| format!("truncated or unreadable: {e}");
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err("bad magic bytes".into());
    }
    let version = read_u32(&mut r).map_err(io)?;
    if version != VERSION {
        return Err(format!("unsupported format version {version}"));
    }
    let n = read_u64(&mut r).map_err(io)?;
    let radius = read_f64(&mut r).map_err(io)?;
    let t = read_f64(&mut r).map_err(io)?;
    let fraction = read_f64(&mut r).map_err(io)?;
    let n = usize::try_from(n).map_err(|_| "grid size overflows".to_string())?;
    let grid = GridSpec::with_parameters(n, radius, fraction).map_err(|e| e.to_string())?;
    let mut fields = Vec::with_capacity(2);
    for _ in 0..2 {
        let mut comps: [Vec<Complex64>; 3] = Default::default();
        for c in comps.iter_mut() {
            c.reserve_exact(grid.len());
            for _ in 0..grid.len() {
                let re = read_f64(&mut r).map_err(io)?;
                let im = read_f64(&mut r).map_err(io)?;
                c.push(Complex64::new(re, im));
            }
        }
        fields.push(SpectralVectorField::from_components(grid, comps).map_err(|e| e.to_string())?);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(io)? != 0 {
        return Err("trailing bytes after coefficient data".into());
    }
    let b = fields.pop().unwrap();
    let u = fields.pop().unwrap();
    Ok(MhdState { u, b, t })
}

pub fn write(state: &MhdState, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_to(state, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<MhdState> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_from(BufReader::new(file)).map_err(|reason| Error::Checkpoint {
        path: path.to_path_buf(),
        reason,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::{make_initial, InitialCondition};

    #[test]
    fn bit_exact_round_trip() {
        let g = GridSpec::with_parameters(8, 2.5, 0.5).unwrap();
        let mut s = make_initial(&InitialCondition::RandomDivfree { target_h1: 1.3 }, g, 9).unwrap();
        s.t = 0.1 + 0.2;
        let mut buf = Vec::new();
        write_to(&s, &mut buf).unwrap();
        assert_eq!(buf.len(), 40 + 6 * 16 * g.len());
        assert_eq!(&buf[..4], b"MHDF");
        let back = read_from(buf.as_slice()).unwrap();
        assert_eq!(back.t.to_bits(), s.t.to_bits());
        assert_eq!(back.grid(), s.grid());
        for (x, y) in [(&back.u, &s.u), (&back.b, &s.b)] {
            for a in 0..3 {
                for (p, q) in x.component(a).iter().zip(y.component(a)) {
                    assert_eq!((p.re.to_bits(), p.im.to_bits()), (q.re.to_bits(), q.im.to_bits()));
                }
            }
        }
    }

    #[test]
    fn rejects_corruption() {
        let g = GridSpec::new(8).unwrap();
        let s = MhdState::zeros(g);
        let mut buf = Vec::new();
        write_to(&s, &mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_from(bad.as_slice()).unwrap_err().contains("magic"));
        let mut bad = buf.clone();
        bad[4] = 7;
        assert!(read_from(bad.as_slice()).unwrap_err().contains("version"));
        assert!(read_from(&buf[..buf.len() - 3]).unwrap_err().contains("truncated"));
        let mut long = buf.clone();
        long.push(0);
        assert!(read_from(long.as_slice()).unwrap_err().contains("trailing"));
    }

    #[test]
    fn file_errors_carry_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("missing.mhdf");
        let e = read(&p).unwrap_err();
        assert!(e.to_string().contains("missing.mhdf"), "{e}");
        std::fs::write(&p, b"nope").unwrap();
        let e = read(&p).unwrap_err();
        assert!(e.to_string().contains("missing.mhdf"), "{e}");
    }
}
