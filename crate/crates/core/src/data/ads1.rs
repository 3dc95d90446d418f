//! The ADS1 raw image container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "ADS1" (4 bytes)
//! version        u32  = 1
//! num_samples    u64
//! num_classes    u32
//! image_size     u32       (square images)
//! channels       u32
//! name_count     u32       (must equal num_classes)
//! name_count x { len u32, UTF-8 bytes }
//! num_samples x { label u32, channels * image_size^2 pixel bytes,
//!                 planes in channel order, rows in row-major order }
//! ```
//!
//! Parsing is strict: bad magic, short reads, out-of-range labels, or
//! trailing bytes are format errors carrying the offending byte offset.

use std::path::Path;

use crate::data::{DatasetIndex, PixelImage, SampleRef, SampleSource};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"ADS1";
pub const VERSION: u32 = 1;

/// A fully loaded container: the index plus a pixel store aligned with it
/// (`images[i]` belongs to `index.samples[i]`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ads1Dataset {
    pub index: DatasetIndex,
    pub images: Vec<PixelImage>,
    pub image_size: usize,
    pub channels: usize,
}

pub fn encode(class_names: &[String], samples: &[(u32, PixelImage)]) -> Result<Vec<u8>> {
    let (size, channels) = match samples.first() {
        Some((_, img)) => {
            if img.width != img.height {
                return Err(Error::Dataset(format!(
                    "ADS1 stores square images, got {}x{}",
                    img.width, img.height
                )));
            }
            (img.width, img.channels)
        }
        None => return Err(Error::Dataset("refusing to write an empty ADS1 file".into())),
    };
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(samples.len() as u64).to_le_bytes());
    out.extend_from_slice(&(class_names.len() as u32).to_le_bytes());
    out.extend_from_slice(&(size as u32).to_le_bytes());
    out.extend_from_slice(&(channels as u32).to_le_bytes());
    out.extend_from_slice(&(class_names.len() as u32).to_le_bytes());
    for name in class_names {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
    }
    for (label, img) in samples {
        if *label as usize >= class_names.len() {
            return Err(Error::Dataset(format!(
                "label {label} out of range for {} classes",
                class_names.len()
            )));
        }
        if img.width != size || img.height != size || img.channels != channels {
            return Err(Error::Dataset(
                "all samples in an ADS1 file must share size and channels".into(),
            ));
        }
        out.extend_from_slice(&label.to_le_bytes());
        out.extend_from_slice(&img.pixels);
    }
    Ok(out)
}

pub fn save(path: &Path, class_names: &[String], samples: &[(u32, PixelImage)]) -> Result<()> {
    let bytes = encode(class_names, samples)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.offset + n > self.bytes.len() {
            return Err(Error::format(
                self.offset as u64,
                format!(
                    "truncated while reading {what}: need {n} bytes, {} remain",
                    self.bytes.len() - self.offset
                ),
            ));
        }
        let s = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Ads1Dataset> {
    let mut r = Reader { bytes, offset: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::format(0, format!("bad magic {magic:?}, expected \"ADS1\"")));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let num_samples = r.u64("num_samples")? as usize;
    let num_classes = r.u32("num_classes")? as usize;
    let image_size = r.u32("image_size")? as usize;
    let channels = r.u32("channels")? as usize;
    if image_size == 0 || channels == 0 {
        return Err(Error::format(
            (r.offset - 8) as u64,
            format!("degenerate geometry: size {image_size}, channels {channels}"),
        ));
    }
    let name_count_at = r.offset as u64;
    let name_count = r.u32("class-name count")? as usize;
    if name_count != num_classes {
        return Err(Error::format(
            name_count_at,
            format!("class-name table holds {name_count} names but header says {num_classes}"),
        ));
    }
    let mut class_names = Vec::with_capacity(num_classes);
    for i in 0..num_classes {
        let len = r.u32("class-name length")? as usize;
        let at = r.offset as u64;
        let raw = r.take(len, "class name")?;
        let name = std::str::from_utf8(raw)
            .map_err(|_| Error::format(at, format!("class name {i} is not UTF-8")))?;
        class_names.push(name.to_string());
    }

    let pixels_per = channels * image_size * image_size;
    let mut samples = Vec::with_capacity(num_samples);
    let mut images = Vec::with_capacity(num_samples);
    for i in 0..num_samples {
        let record_offset = r.offset as u64;
        let label = r.u32(&format!("label of sample {i}"))? as usize;
        if label >= num_classes {
            return Err(Error::format(
                record_offset,
                format!("sample {i} labeled {label}, only {num_classes} classes"),
            ));
        }
        let raw = r.take(pixels_per, &format!("pixels of sample {i}"))?;
        samples.push(SampleRef {
            source: SampleSource::Raw {
                offset: record_offset,
            },
            class_id: label,
        });
        images.push(PixelImage {
            width: image_size,
            height: image_size,
            channels,
            pixels: raw.to_vec(),
        });
    }
    if r.offset != bytes.len() {
        return Err(Error::format(
            r.offset as u64,
            format!("{} trailing bytes after the last record", bytes.len() - r.offset),
        ));
    }

    Ok(Ads1Dataset {
        index: DatasetIndex::new(class_names, samples)?,
        images,
        image_size,
        channels,
    })
}

pub fn load(path: &Path) -> Result<Ads1Dataset> {
    let bytes = std::fs::read(path)?;
    decode(&bytes)
}
