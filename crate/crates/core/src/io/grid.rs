use std::fs;
use std::path::Path;

use ndarray::Array3;

use crate::error::{Error, Result};
use crate::types::{DepthGrid, LabelGrid};

pub const GRID_MAGIC: &[u8; 5] = b"XFRG1";
const HEADER_LEN: usize = GRID_MAGIC.len() + 12;

#[derive(Debug, Clone, PartialEq)]
pub enum GridData {
    F32(Vec<f32>),
    U16(Vec<u16>),
}

/// A `height × width × channels` grid stored row-major with channels last.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: GridData,
}

impl Grid {
    fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn from_image(image: &Array3<f64>) -> Self {
        let (h, w, c) = image.dim();
        Grid {
            height: h,
            width: w,
            channels: c,
            data: GridData::F32(image.iter().map(|&v| v as f32).collect()),
        }
    }

    pub fn from_labels(labels: &LabelGrid) -> Self {
        Grid {
            height: labels.height,
            width: labels.width,
            channels: 1,
            data: GridData::U16(labels.labels.clone()),
        }
    }

    /// Depth as one channel; invalid pixels are written as 0.
    pub fn from_depth(depth: &DepthGrid) -> Self {
        Grid {
            height: depth.height,
            width: depth.width,
            channels: 1,
            data: GridData::F32(
                depth
                    .depth
                    .iter()
                    .zip(&depth.valid)
                    .map(|(&d, &v)| if v { d as f32 } else { 0.0 })
                    .collect(),
            ),
        }
    }
}

pub fn encode_grid(g: &Grid) -> Result<Vec<u8>> {
    let n = match &g.data {
        GridData::F32(v) => v.len(),
        GridData::U16(v) => v.len(),
    };
    if n != g.len() {
        return Err(Error::ShapeMismatch(format!(
            "{n} values for a {}x{}x{} grid",
            g.height, g.width, g.channels
        )));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * n);
    out.extend_from_slice(GRID_MAGIC);
    for d in [g.height, g.width, g.channels] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    match &g.data {
        GridData::F32(v) => v
            .iter()
            .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        GridData::U16(v) => v
            .iter()
            .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    Ok(out)
}

/// Decodes a grid; the payload type follows from its length (4 bytes per
/// value for `f32`, 2 for `u16`).
pub fn decode_grid(bytes: &[u8], path: &Path) -> Result<Grid> {
    if !bytes.starts_with(GRID_MAGIC) {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: "XFRG1",
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            offset: bytes.len(),
        });
    }
    let dim = |i: usize| {
        let at = GRID_MAGIC.len() + 4 * i;
        u32::from_le_bytes(bytes[at..at + 4].try_into().expect("four bytes")) as usize
    };
    let (height, width, channels) = (dim(0), dim(1), dim(2));
    let n = height * width * channels;
    let payload = &bytes[HEADER_LEN..];
    let data = if payload.len() == 4 * n {
        GridData::F32(
            payload
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("four bytes")))
                .collect(),
        )
    } else if payload.len() == 2 * n {
        GridData::U16(
            payload
                .chunks_exact(2)
                .map(|b| u16::from_le_bytes(b.try_into().expect("two bytes")))
                .collect(),
        )
    } else if payload.len() < 4 * n {
        return Err(Error::Truncated {
            offset: bytes.len(),
        });
    } else {
        return Err(Error::InvalidInput(format!(
            "payload of {} bytes does not match {n} values",
            payload.len()
        )));
    };
    Ok(Grid {
        height,
        width,
        channels,
        data,
    })
}

pub fn write_grid(path: &Path, g: &Grid) -> Result<()> {
    fs::write(path, encode_grid(g)?)?;
    Ok(())
}

pub fn read_grid(path: &Path) -> Result<Grid> {
    decode_grid(&fs::read(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dtype_follows_payload_length() {
        let labels = LabelGrid::new(3, 2, vec![0, 1, 2, 3, 4, 65535]).unwrap();
        let g = Grid::from_labels(&labels);
        let back = decode_grid(&encode_grid(&g).unwrap(), Path::new("l")).unwrap();
        assert_eq!(back, g);
        let image = Array3::from_shape_fn((2, 3, 2), |(r, c, k)| (r * 6 + c * 2 + k) as f64 * 0.5);
        let g = Grid::from_image(&image);
        let back = decode_grid(&encode_grid(&g).unwrap(), Path::new("i")).unwrap();
        assert!(matches!(back.data, GridData::F32(_)));
        assert_eq!(back, g);
    }

    #[test]
    fn short_payload_is_truncated() {
        let g = Grid::from_image(&Array3::zeros((2, 2, 1)));
        let bytes = encode_grid(&g).unwrap();
        let cut = &bytes[..bytes.len() - 1];
        assert!(matches!(
            decode_grid(cut, Path::new("g")),
            Err(Error::Truncated { offset }) if offset == cut.len()
        ));
    }

    #[test]
    fn invalid_depth_is_written_as_zero() {
        let d = DepthGrid::with_mask(2, 1, vec![3.0, 7.0], vec![true, false]).unwrap();
        assert_eq!(Grid::from_depth(&d).data, GridData::F32(vec![3.0, 0.0]));
    }
}
