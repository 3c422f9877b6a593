//! Backbone feature tensors: a little-endian `f32` blob plus a JSON sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Row-major `H' × W' × D`.
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSidecar {
    pub shape: [usize; 3],
    pub dtype: String,
    pub order: String,
}

impl FeatureTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::ShapeMismatch(format!(
                "feature tensor dims must be >= 1, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "{} values for shape {height}x{width}x{channels}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite feature value at index {i}")));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// `N × D` matrix in `f64`, rows in row-major grid order.
    pub fn to_matrix(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.height * self.width, self.channels), |(i, j)| {
            f64::from(self.data[i * self.channels + j])
        })
    }

    pub fn sidecar(&self) -> TensorSidecar {
        TensorSidecar {
            shape: [self.height, self.width, self.channels],
            dtype: "f32".into(),
            order: "row-major".into(),
        }
    }

    /// Sidecar path for a blob path: `x.bin` → `x.json`.
    pub fn sidecar_path(blob: &Path) -> PathBuf {
        blob.with_extension("json")
    }

    pub fn write(&self, blob: &Path) -> Result<()> {
        let bytes: Vec<u8> = self.data.iter().flat_map(|v| v.to_le_bytes()).collect();
        write_atomic(blob, &bytes)?;
        let side = serde_json::to_vec(&self.sidecar())?;
        write_atomic(&Self::sidecar_path(blob), &side)
    }

    pub fn read(blob: &Path) -> Result<Self> {
        let side_path = Self::sidecar_path(blob);
        let side: TensorSidecar =
            serde_json::from_slice(&fs::read(&side_path).map_err(|e| Error::io(&side_path, e))?)?;
        if side.dtype != "f32" || side.order != "row-major" {
            return Err(Error::invalid(format!(
                "{}: unsupported dtype/order {}/{}",
                side_path.display(),
                side.dtype,
                side.order
            )));
        }
        let bytes = fs::read(blob).map_err(|e| Error::io(blob, e))?;
        if bytes.len() % 4 != 0 {
            return Err(Error::invalid(format!(
                "{}: length {} not a multiple of 4",
                blob.display(),
                bytes.len()
            )));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let [h, w, d] = side.shape;
        Self::new(h, w, d, data)
    }
}

/// Writes through a temporary sibling and renames into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(FeatureTensor::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(FeatureTensor::new(0, 2, 1, vec![]).is_err());
        assert!(FeatureTensor::new(1, 1, 1, vec![f32::NAN]).is_err());
    }

    #[test]
    fn matrix_layout() {
        let t = FeatureTensor::new(1, 2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let m = t.to_matrix();
        assert_eq!(m.dim(), (2, 3));
        assert_eq!(m[[1, 0]], 4.0);
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f/x.bin");
        let t = FeatureTensor::new(2, 3, 2, (0..12).map(|v| v as f32 * 0.25 - 1.0).collect()).unwrap();
        t.write(&path).unwrap();
        let side = fs::read_to_string(path.with_extension("json")).unwrap();
        assert_eq!(side, r#"{"shape":[2,3,2],"dtype":"f32","order":"row-major"}"#);
        assert_eq!(FeatureTensor::read(&path).unwrap(), t);
    }
}
