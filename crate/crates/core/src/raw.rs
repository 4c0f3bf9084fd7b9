//! Raw little-endian binaries with a JSON sidecar header.
//!
//! Values are stored x fastest, then y, then z. Complex types interleave
//! real and imaginary parts. Multi-column fields store columns back to back.

use std::fs;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::grid::{Axis, CartesianGrid, VelocityModel};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RawDtype {
    Float32,
    Float64,
    Complex64,
    Complex128,
}

impl RawDtype {
    fn bytes(self) -> usize {
        match self {
            RawDtype::Float32 => 4,
            RawDtype::Float64 | RawDtype::Complex64 => 8,
            RawDtype::Complex128 => 16,
        }
    }

    fn is_complex(self) -> bool {
        matches!(self, RawDtype::Complex64 | RawDtype::Complex128)
    }
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawHeader {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub h: f64,
    pub origin: [f64; 3],
    pub dtype: RawDtype,
    #[serde(default = "one")]
    pub columns: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl RawHeader {
    pub fn for_grid(grid: &CartesianGrid, dtype: RawDtype, columns: usize) -> Self {
        RawHeader {
            nx: grid.nx,
            ny: grid.ny,
            nz: grid.nz,
            h: grid.h,
            origin: grid.origin,
            dtype,
            columns,
            label: None,
        }
    }

    pub fn grid(&self) -> Result<CartesianGrid> {
        CartesianGrid::new([self.nx, self.ny, self.nz], self.h, self.origin)
            .map_err(|e| Error::Load(format!("bad header geometry: {e}")))
    }
}

fn encode(values: &[Complex64], dtype: RawDtype) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(values.len() * dtype.bytes());
    for v in values {
        match dtype {
            RawDtype::Float32 | RawDtype::Float64 if v.im != 0.0 => {
                return Err(Error::InvalidArgument(
                    "complex values need a complex dtype".into(),
                ))
            }
            RawDtype::Float32 => out.extend_from_slice(&(v.re as f32).to_le_bytes()),
            RawDtype::Float64 => out.extend_from_slice(&v.re.to_le_bytes()),
            RawDtype::Complex64 => {
                out.extend_from_slice(&(v.re as f32).to_le_bytes());
                out.extend_from_slice(&(v.im as f32).to_le_bytes());
            }
            RawDtype::Complex128 => {
                out.extend_from_slice(&v.re.to_le_bytes());
                out.extend_from_slice(&v.im.to_le_bytes());
            }
        }
    }
    Ok(out)
}

fn decode(bytes: &[u8], dtype: RawDtype) -> Vec<Complex64> {
    let f32_at = |b: &[u8]| f32::from_le_bytes(b.try_into().unwrap()) as f64;
    let f64_at = |b: &[u8]| f64::from_le_bytes(b.try_into().unwrap());
    bytes
        .chunks_exact(dtype.bytes())
        .map(|b| match dtype {
            RawDtype::Float32 => Complex64::new(f32_at(b), 0.0),
            RawDtype::Float64 => Complex64::new(f64_at(b), 0.0),
            RawDtype::Complex64 => Complex64::new(f32_at(&b[..4]), f32_at(&b[4..])),
            RawDtype::Complex128 => Complex64::new(f64_at(&b[..8]), f64_at(&b[8..])),
        })
        .collect()
}

fn write_pair(header: &RawHeader, bytes: &[u8], header_path: &Path, data_path: &Path) -> Result<()> {
    fs::write(header_path, serde_json::to_vec_pretty(header)?)?;
    let mut f = fs::File::create(data_path)?;
    f.write_all(bytes)?;
    Ok(())
}

fn read_pair(header_path: &Path, data_path: &Path) -> Result<(RawHeader, Vec<Complex64>)> {
    let text = fs::read_to_string(header_path)
        .map_err(|e| Error::Load(format!("{}: {e}", header_path.display())))?;
    let header: RawHeader = serde_json::from_str(&text)
        .map_err(|e| Error::Load(format!("{}: {e}", header_path.display())))?;
    let grid = header.grid()?;
    let bytes =
        fs::read(data_path).map_err(|e| Error::Load(format!("{}: {e}", data_path.display())))?;
    let expected = grid.len() * header.columns * header.dtype.bytes();
    if bytes.len() != expected {
        return Err(Error::Load(format!(
            "{} holds {} bytes, header implies {} ({} values of {} bytes)",
            data_path.display(),
            bytes.len(),
            expected,
            grid.len() * header.columns,
            header.dtype.bytes()
        )));
    }
    let values = decode(&bytes, header.dtype);
    if let Some(i) = values.iter().position(|v| !(v.re.is_finite() && v.im.is_finite())) {
        return Err(Error::Load(format!("non-finite value at index {i}")));
    }
    Ok((header, values))
}

pub fn save_raw_model(
    model: &VelocityModel,
    dtype: RawDtype,
    header_path: impl AsRef<Path>,
    data_path: impl AsRef<Path>,
) -> Result<()> {
    let mut header = RawHeader::for_grid(&model.grid, dtype, 1);
    header.label = Some(model.label.clone());
    write_pair(&header, &encode(&model.c, dtype)?, header_path.as_ref(), data_path.as_ref())
}

pub fn load_raw_model(header_path: impl AsRef<Path>, data_path: impl AsRef<Path>) -> Result<VelocityModel> {
    let (header, values) = read_pair(header_path.as_ref(), data_path.as_ref())?;
    if header.columns != 1 {
        return Err(Error::Load(format!("a model has 1 column, header says {}", header.columns)));
    }
    let grid = header.grid()?;
    let label = header.label.unwrap_or_else(|| "raw".into());
    VelocityModel::new(grid, values, label).map_err(|e| Error::Load(e.to_string()))
}

/// Writes `columns` fields of `grid.len()` values each.
pub fn save_field(
    grid: &CartesianGrid,
    values: &[Complex64],
    dtype: RawDtype,
    header_path: impl AsRef<Path>,
    data_path: impl AsRef<Path>,
) -> Result<()> {
    if !dtype.is_complex() {
        return Err(Error::InvalidArgument("fields are stored as complex64 or complex128".into()));
    }
    if grid.is_empty() || values.len() % grid.len() != 0 {
        return Err(Error::DimensionMismatch {
            expected: grid.len(),
            got: values.len(),
        });
    }
    let header = RawHeader::for_grid(grid, dtype, values.len() / grid.len());
    write_pair(&header, &encode(values, dtype)?, header_path.as_ref(), data_path.as_ref())
}

pub fn load_field(
    header_path: impl AsRef<Path>,
    data_path: impl AsRef<Path>,
) -> Result<(CartesianGrid, usize, Vec<Complex64>)> {
    let (header, values) = read_pair(header_path.as_ref(), data_path.as_ref())?;
    Ok((header.grid()?, header.columns, values))
}

/// Plane `axis = index` of one field column as CSV rows `u,v,x,y,re,im`.
pub fn write_slice_csv(
    grid: &CartesianGrid,
    field: &[Complex64],
    axis: Axis,
    index: usize,
    path: impl AsRef<Path>,
) -> Result<()> {
    let a = axis.index();
    let d = grid.dims();
    if index >= d[a] {
        return Err(Error::InvalidArgument(format!("slice {index} outside axis of {} points", d[a])));
    }
    if field.len() != grid.len() {
        return Err(Error::DimensionMismatch {
            expected: grid.len(),
            got: field.len(),
        });
    }
    let (ua, va) = ((a + 1) % 3, (a + 2) % 3);
    let (ua, va) = (ua.min(va), ua.max(va));
    let mut out = String::from("u,v,x_u,x_v,re,im\n");
    for v in 0..d[va] {
        for u in 0..d[ua] {
            let mut p = [0; 3];
            p[a] = index;
            p[ua] = u;
            p[va] = v;
            let x = grid.position(p);
            let z = field[grid.index(p)];
            out.push_str(&format!("{u},{v},{},{},{:e},{:e}\n", x[ua], x[va], z.re, z.im));
        }
    }
    fs::write(path, out)?;
    Ok(())
}
