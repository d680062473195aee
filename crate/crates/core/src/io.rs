use std::io::{Read, Write};
use std::path::Path;

use ndarray::{ArrayD, Dimension, IxDyn};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::Field;
use crate::grid::{make_grid, Grid};

const MAGIC: &[u8; 4] = b"NSLG";
const VERSION: u32 = 1;

/// Writes a field as a flat binary container: "NSLG" magic, version, dim, M and
/// period header, then each component's coefficients row-major as re/im f64 pairs,
/// all little-endian.
pub fn write_field(field: &Field, w: &mut impl Write) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(field.grid().dim() as u32).to_le_bytes())?;
    w.write_all(&(field.grid().modes_per_axis() as u32).to_le_bytes())?;
    w.write_all(&field.grid().period().to_le_bytes())?;
    for comp in field.comps() {
        for z in comp.iter() {
            w.write_all(&z.re.to_le_bytes())?;
            w.write_all(&z.im.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn write_field_to_path(field: &Field, path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_field(field, &mut f)?;
    f.flush()?;
    Ok(())
}

fn read_exact_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Format(format!("truncated container: {e}")))?;
    Ok(buf)
}

/// Reads a field container; the grid is reconstructed from the header and the
/// divergence-free / mean-zero flags are re-measured rather than trusted.
pub fn read_field(r: &mut impl Read) -> Result<Field> {
    let magic = read_exact_array::<4>(r)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let version = u32::from_le_bytes(read_exact_array::<4>(r)?);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let dim = u32::from_le_bytes(read_exact_array::<4>(r)?) as usize;
    let m = u32::from_le_bytes(read_exact_array::<4>(r)?) as usize;
    let period = f64::from_le_bytes(read_exact_array::<8>(r)?);
    let grid = make_grid(dim, m, period)
        .map_err(|e| Error::Format(format!("invalid header: {e}")))?;

    let n = grid.n_points();
    let mut comps = Vec::with_capacity(dim);
    for _ in 0..dim {
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let re = f64::from_le_bytes(read_exact_array::<8>(r)?);
            let im = f64::from_le_bytes(read_exact_array::<8>(r)?);
            data.push(Complex64::new(re, im));
        }
        let arr = ArrayD::from_shape_vec(IxDyn(grid.shape()), data)
            .map_err(|e| Error::Format(format!("shape error: {e}")))?;
        comps.push(arr);
    }

    let field = Field::from_spectral(&grid, comps);
    let div_free = field.divergence_defect() <= 1e-12;
    let mean_zero = field.mean_magnitude() == 0.0;
    Ok(field.with_flags(div_free, mean_zero))
}

pub fn read_field_from_path(path: impl AsRef<Path>) -> Result<Field> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_field(&mut f)
}

/// Plain-text debug dump: one "k_1 ... k_N re im" line per mode, with a comment
/// line separating components. Floats carry 17 significant digits.
pub fn dump_debug(field: &Field, w: &mut impl Write) -> Result<()> {
    let grid: &Grid = field.grid();
    for (c, comp) in field.comps().iter().enumerate() {
        writeln!(w, "# component {c}")?;
        for idx in ndarray::indices(grid.shape()) {
            let k = grid.kvec(idx.slice());
            let z = comp[idx.slice()];
            for ka in &k {
                write!(w, "{ka} ")?;
            }
            writeln!(w, "{:.16e} {:.16e}", z.re, z.im)?;
        }
    }
    Ok(())
}
