//! Binary tensor container.
//!
//! Layout: an 8-byte little-endian `u64` header length, a UTF-8 JSON header
//! `{dtype, shape: [rows, cols], spacing_mm: [axial, lateral], role}`, then the
//! row-major little-endian payload. Reading and re-writing is bit exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{EnvelopeImage, ParameterMap, RfImage, ScattererMap, TrfMap};
use crate::grid::Grid2D;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorHeader {
    pub dtype: DType,
    pub shape: [usize; 2],
    pub spacing_mm: [f64; 2],
    pub role: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Array2<f32>),
    F64(Array2<f64>),
}

impl TensorData {
    pub fn dim(&self) -> (usize, usize) {
        match self {
            TensorData::F32(a) => a.dim(),
            TensorData::F64(a) => a.dim(),
        }
    }

    /// Values widened to `f64` (exact for `f32` input).
    pub fn to_f64(&self) -> Array2<f64> {
        match self {
            TensorData::F32(a) => a.mapv(f64::from),
            TensorData::F64(a) => a.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub header: TensorHeader,
    pub data: TensorData,
}

impl Tensor {
    pub fn new(data: TensorData, spacing_mm: [f64; 2], role: impl Into<String>) -> Self {
        let (rows, cols) = data.dim();
        let dtype = match data {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
        };
        Tensor {
            header: TensorHeader {
                dtype,
                shape: [rows, cols],
                spacing_mm,
                role: role.into(),
            },
            data,
        }
    }

    pub fn from_grid(grid: &Grid2D, values: Array2<f64>, role: impl Into<String>) -> Self {
        Self::new(
            TensorData::F64(values),
            [grid.spacing_axial, grid.spacing_lateral],
            role,
        )
    }

    /// Grid implied by the header; origin is not stored and defaults to zero.
    pub fn grid(&self) -> Result<Grid2D> {
        let [rows, cols] = self.header.shape;
        let [sa, sl] = self.header.spacing_mm;
        Grid2D::new(cols, rows, sl, sa)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let header = serde_json::to_vec(&self.header)?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        match &self.data {
            TensorData::F32(a) => {
                for v in a.iter() {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            TensorData::F64(a) => {
                for v in a.iter() {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len);
        if len > 1 << 20 {
            return Err(Error::Format(format!("header length {len} is implausible")));
        }
        let mut header = vec![0u8; len as usize];
        r.read_exact(&mut header)?;
        let header: TensorHeader = serde_json::from_slice(&header)
            .map_err(|e| Error::Format(format!("bad header: {e}")))?;
        let [rows, cols] = header.shape;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Format("shape overflows".into()))?;
        let data = match header.dtype {
            DType::F32 => {
                let mut buf = vec![0u8; n * 4];
                r.read_exact(&mut buf)?;
                let v: Vec<f32> = buf
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                TensorData::F32(Array2::from_shape_vec((rows, cols), v).unwrap())
            }
            DType::F64 => {
                let mut buf = vec![0u8; n * 8];
                r.read_exact(&mut buf)?;
                let v: Vec<f64> = buf
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                TensorData::F64(Array2::from_shape_vec((rows, cols), v).unwrap())
            }
        };
        Ok(Tensor { header, data })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::file(path, e))?;
        let mut w = BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush().map_err(|e| Error::file(path, e))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::file(path, e))?;
        Self::read_from(BufReader::new(f))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }
}

/// Conversion between grid-attached fields and tensor files.
pub trait TensorField: Sized {
    fn to_tensor(&self) -> Tensor;
    fn from_tensor(t: &Tensor) -> Result<Self>;

    fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_tensor().save(path)
    }

    fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_tensor(&Tensor::load(path)?)
    }
}

macro_rules! impl_tensor_field {
    ($ty:ty) => {
        impl TensorField for $ty {
            fn to_tensor(&self) -> Tensor {
                Tensor::from_grid(self.grid(), self.values().clone(), <$ty>::ROLE)
            }

            fn from_tensor(t: &Tensor) -> Result<Self> {
                <$ty>::new(t.grid()?, t.data.to_f64())
            }
        }
    };
}

impl_tensor_field!(ScattererMap);
impl_tensor_field!(TrfMap);
impl_tensor_field!(RfImage);
impl_tensor_field!(EnvelopeImage);

impl TensorField for ParameterMap {
    fn to_tensor(&self) -> Tensor {
        Tensor::from_grid(self.grid(), self.mu().clone(), ParameterMap::ROLE)
    }

    /// The axial factor is recovered from the spacing ratio to the
    /// isotropic scatterer grid (lateral spacing).
    fn from_tensor(t: &Tensor) -> Result<Self> {
        let g = t.grid()?;
        let r = (g.spacing_axial / g.spacing_lateral).round().max(1.0) as usize;
        ParameterMap::new(g, t.data.to_f64(), r)
    }
}
