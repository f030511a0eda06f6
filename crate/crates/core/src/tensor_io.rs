//! Binary tensor encoding shared by feature packs and checkpoints.
//!
//! Layout: 8-byte magic `CPSPFEAT`, one `u8` rank, three little-endian `u32`
//! dimensions (unused trailing dimensions are 1), then the row-major payload.
//! Float payloads are little-endian `f32`; label payloads are raw `u8`.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"CPSPFEAT";
pub const HEADER_LEN: usize = 8 + 1 + 12;

/// Decoded header: rank plus the three stored dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub rank: u8,
    pub dims: [u32; 3],
}

impl Header {
    pub fn new(shape: &[usize]) -> Result<Self> {
        if shape.is_empty() || shape.len() > 3 {
            return Err(Error::DimensionMismatch(format!(
                "tensor rank must be 1..=3, got {}",
                shape.len()
            )));
        }
        let mut dims = [1u32; 3];
        for (d, &s) in dims.iter_mut().zip(shape) {
            *d = u32::try_from(s)
                .map_err(|_| Error::DimensionMismatch(format!("dimension {s} overflows u32")))?;
        }
        Ok(Header {
            rank: shape.len() as u8,
            dims,
        })
    }

    pub fn shape(&self) -> Vec<usize> {
        self.dims[..self.rank as usize]
            .iter()
            .map(|&d| d as usize)
            .collect()
    }

    pub fn numel(&self) -> usize {
        self.dims.iter().map(|&d| d as usize).product()
    }

    fn encode(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[..8].copy_from_slice(MAGIC);
        out[8] = self.rank;
        for (i, d) in self.dims.iter().enumerate() {
            out[9 + 4 * i..13 + 4 * i].copy_from_slice(&d.to_le_bytes());
        }
        out
    }

    fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..8] != MAGIC {
            return Err(Error::BadMagic {
                path: path.to_path_buf(),
            });
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                expected: HEADER_LEN,
                found: bytes.len(),
            });
        }
        let rank = bytes[8];
        if rank == 0 || rank > 3 {
            return Err(Error::DimensionMismatch(format!(
                "{}: stored rank {rank} outside 1..=3",
                path.display()
            )));
        }
        let mut dims = [0u32; 3];
        for (i, d) in dims.iter_mut().enumerate() {
            let mut b = [0u8; 4];
            b.copy_from_slice(&bytes[9 + 4 * i..13 + 4 * i]);
            *d = u32::from_le_bytes(b);
        }
        Ok(Header { rank, dims })
    }
}

fn write_bytes(path: &Path, header: Header, payload: &[u8]) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&header.encode())
        .and_then(|_| file.write_all(payload))
        .map_err(|e| Error::io(path, e))
}

fn read_bytes(path: &Path, elem_size: usize) -> Result<(Header, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let header = Header::decode(&bytes, path)?;
    let expected = HEADER_LEN + header.numel() * elem_size;
    if bytes.len() != expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            found: bytes.len(),
        });
    }
    Ok((header, bytes[HEADER_LEN..].to_vec()))
}

pub fn write_f32(path: &Path, shape: &[usize], data: &[f32]) -> Result<()> {
    let header = Header::new(shape)?;
    if header.numel() != data.len() {
        return Err(Error::DimensionMismatch(format!(
            "shape {shape:?} holds {} values, got {}",
            header.numel(),
            data.len()
        )));
    }
    let mut payload = Vec::with_capacity(data.len() * 4);
    for v in data {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    write_bytes(path, header, &payload)
}

pub fn read_f32(path: &Path) -> Result<(Vec<usize>, Vec<f32>)> {
    let (header, payload) = read_bytes(path, 4)?;
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((header.shape(), data))
}

pub fn write_u8(path: &Path, shape: &[usize], data: &[u8]) -> Result<()> {
    let header = Header::new(shape)?;
    if header.numel() != data.len() {
        return Err(Error::DimensionMismatch(format!(
            "shape {shape:?} holds {} values, got {}",
            header.numel(),
            data.len()
        )));
    }
    write_bytes(path, header, data)
}

pub fn read_u8(path: &Path) -> Result<(Vec<usize>, Vec<u8>)> {
    let (header, payload) = read_bytes(path, 1)?;
    Ok((header.shape(), payload))
}
