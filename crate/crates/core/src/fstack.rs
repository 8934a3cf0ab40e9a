//! FSTACK frame stacks and PGM export.
//!
//! Layout: 8-byte magic `FSTK1\0\0\0`, then little-endian u32 width, height,
//! frame count and dtype (0 = f32, 1 = u16), then the frames row-major with
//! little-endian values and no padding.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::emccd::PhotonImage;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"FSTK1\0\0\0";
const HEADER_LEN: usize = 24;

#[derive(Clone, Debug, PartialEq)]
pub enum FrameData {
    F32(Vec<f32>),
    U16(Vec<u16>),
}

impl FrameData {
    fn dtype(&self) -> u32 {
        match self {
            FrameData::F32(_) => 0,
            FrameData::U16(_) => 1,
        }
    }

    fn len(&self) -> usize {
        match self {
            FrameData::F32(v) => v.len(),
            FrameData::U16(v) => v.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FStack {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub data: FrameData,
}

impl FStack {
    pub fn new(width: usize, height: usize, frames: usize, data: FrameData) -> Result<Self> {
        let want = width * height * frames;
        if data.len() != want {
            return Err(Error::Shape {
                expected: want,
                got: data.len(),
            });
        }
        for (name, v) in [("width", width), ("height", height), ("frame count", frames)] {
            if v > u32::MAX as usize {
                return Err(Error::Format(format!("{name} {v} exceeds u32")));
            }
        }
        Ok(Self {
            width,
            height,
            frames,
            data,
        })
    }

    /// Single-frame real map, stored as f32.
    pub fn real_map(values: &[f64], width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, 1, FrameData::F32(values.iter().map(|&v| v as f32).collect()))
    }

    pub fn from_images(images: &[PhotonImage]) -> Result<Self> {
        let n = images.first().map_or(0, |i| i.n);
        let mut data = Vec::with_capacity(n * n * images.len());
        for img in images {
            if img.n != n || img.counts.len() != n * n {
                return Err(Error::Shape {
                    expected: n * n,
                    got: img.counts.len(),
                });
            }
            data.extend_from_slice(&img.counts);
        }
        Self::new(n, n, images.len(), FrameData::U16(data))
    }

    /// Frames as photon images; `seed` is recorded on each.
    pub fn to_images(&self, seed: u64) -> Result<Vec<PhotonImage>> {
        let FrameData::U16(data) = &self.data else {
            return Err(Error::Format("photon frames must be u16".into()));
        };
        if self.width != self.height {
            return Err(Error::Format(format!("frames are {}x{}, expected square", self.width, self.height)));
        }
        let px = self.width * self.height;
        Ok(data
            .chunks_exact(px.max(1))
            .take(self.frames)
            .enumerate()
            .map(|(f, c)| PhotonImage {
                n: self.width,
                counts: c.to_vec(),
                frame: f as u64,
                seed,
            })
            .collect())
    }

    /// Frame `index` widened to f64.
    pub fn frame(&self, index: usize) -> Result<Vec<f64>> {
        if index >= self.frames {
            return Err(Error::Parameter(format!("frame {index} out of {}", self.frames)));
        }
        let px = self.width * self.height;
        let range = index * px..(index + 1) * px;
        Ok(match &self.data {
            FrameData::F32(v) => v[range].iter().map(|&x| x as f64).collect(),
            FrameData::U16(v) => v[range].iter().map(|&x| x as f64).collect(),
        })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        for v in [self.width as u32, self.height as u32, self.frames as u32, self.data.dtype()] {
            w.write_all(&v.to_le_bytes())?;
        }
        match &self.data {
            FrameData::F32(v) => {
                let bytes: Vec<u8> = v.iter().flat_map(|x| x.to_le_bytes()).collect();
                w.write_all(&bytes)?;
            }
            FrameData::U16(v) => {
                let bytes: Vec<u8> = v.iter().flat_map(|x| x.to_le_bytes()).collect();
                w.write_all(&bytes)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; HEADER_LEN];
        r.read_exact(&mut header).map_err(|_| Error::Format("truncated header".into()))?;
        if &header[..8] != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let field = |i: usize| u32::from_le_bytes(header[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize;
        let (width, height, frames, dtype) = (field(0), field(1), field(2), field(3));
        let count = width
            .checked_mul(height)
            .and_then(|v| v.checked_mul(frames))
            .ok_or_else(|| Error::Format("frame dimensions overflow".into()))?;
        let size = match dtype {
            0 => 4,
            1 => 2,
            other => return Err(Error::Format(format!("unknown dtype {other}"))),
        };
        let mut body = Vec::new();
        r.read_to_end(&mut body)?;
        if body.len() != count * size {
            return Err(Error::Format(format!("expected {} data bytes, found {}", count * size, body.len())));
        }
        let data = if dtype == 0 {
            FrameData::F32(body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
        } else {
            FrameData::U16(body.chunks_exact(2).map(|c| u16::from_le_bytes(c.try_into().unwrap())).collect())
        };
        Self::new(width, height, frames, data)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

/// Binary 16-bit PGM of one frame. Real frames are scaled linearly so their
/// range spans 0..=65535.
pub fn pgm_bytes(stack: &FStack, index: usize) -> Result<Vec<u8>> {
    let values = stack.frame(index)?;
    let pixels: Vec<u16> = match &stack.data {
        FrameData::U16(_) => values.iter().map(|&v| v as u16).collect(),
        FrameData::F32(_) => {
            let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let span = if hi > lo { hi - lo } else { 1.0 };
            values.iter().map(|&v| (((v - lo) / span) * 65535.0).round() as u16).collect()
        }
    };
    let mut out = format!("P5\n{} {}\n65535\n", stack.width, stack.height).into_bytes();
    // PGM stores multi-byte samples most significant byte first
    out.extend(pixels.iter().flat_map(|p| p.to_be_bytes()));
    Ok(out)
}

pub fn write_pgm(stack: &FStack, index: usize, path: &Path) -> Result<()> {
    let bytes = pgm_bytes(stack, index)?;
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(&bytes)?;
    f.flush()?;
    Ok(())
}
