//! IDX binary containers (the layout used by the common handwritten-digit
//! corpora): big-endian u32 magic and dimensions followed by unsigned
//! bytes. Images use magic 0x00000803 (count, height, width), labels
//! 0x00000801 (count).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// A parsed image container: `count` images of `height` x `width` bytes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl IdxImages {
    pub fn record(&self, i: usize) -> &[u8] {
        let sz = self.height * self.width;
        &self.data[i * sz..(i + 1) * sz]
    }
}

struct Cursor<R: Read> {
    inner: R,
    offset: u64,
}

impl<R: Read> Cursor<R> {
    fn take(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        let at = self.offset;
        self.inner
            .read_exact(buf)
            .map_err(|e| Error::format(at, format!("truncated while reading {what}: {e}")))?;
        self.offset += buf.len() as u64;
        Ok(())
    }

    fn u32_be(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.take(&mut b, what)?;
        Ok(u32::from_be_bytes(b))
    }
}

pub fn read_idx_images<R: Read>(reader: R) -> Result<IdxImages> {
    let mut c = Cursor {
        inner: reader,
        offset: 0,
    };
    let magic = c.u32_be("image magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(
            0,
            format!("bad image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        ));
    }
    let count = c.u32_be("image count")? as usize;
    let height = c.u32_be("image height")? as usize;
    let width = c.u32_be("image width")? as usize;
    let payload = count
        .checked_mul(height)
        .and_then(|v| v.checked_mul(width))
        .filter(|&v| v <= 1 << 31)
        .ok_or_else(|| {
            Error::format(
                4,
                format!("implausible image container dims {count}x{height}x{width}"),
            )
        })?;
    let mut data = vec![0u8; payload];
    c.take(&mut data, "image payload")?;
    Ok(IdxImages {
        count,
        height,
        width,
        data,
    })
}

pub fn read_idx_labels<R: Read>(reader: R) -> Result<Vec<u8>> {
    let mut c = Cursor {
        inner: reader,
        offset: 0,
    };
    let magic = c.u32_be("label magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::format(
            0,
            format!("bad label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        ));
    }
    let count = c.u32_be("label count")? as usize;
    let mut data = vec![0u8; count];
    c.take(&mut data, "label payload")?;
    Ok(data)
}

pub fn write_idx_images<W: Write>(mut writer: W, images: &IdxImages) -> Result<()> {
    if images.data.len() != images.count * images.height * images.width {
        return Err(Error::Usage(format!(
            "image container payload is {} bytes for {} records of {}x{}",
            images.data.len(),
            images.count,
            images.height,
            images.width
        )));
    }
    writer.write_all(&IDX_IMAGES_MAGIC.to_be_bytes())?;
    writer.write_all(&(images.count as u32).to_be_bytes())?;
    writer.write_all(&(images.height as u32).to_be_bytes())?;
    writer.write_all(&(images.width as u32).to_be_bytes())?;
    writer.write_all(&images.data)?;
    Ok(())
}

pub fn write_idx_labels<W: Write>(mut writer: W, labels: &[u8]) -> Result<()> {
    writer.write_all(&IDX_LABELS_MAGIC.to_be_bytes())?;
    writer.write_all(&(labels.len() as u32).to_be_bytes())?;
    writer.write_all(labels)?;
    Ok(())
}

pub fn load_idx_images(path: &Path) -> Result<IdxImages> {
    read_idx_images(BufReader::new(File::open(path)?))
}

pub fn load_idx_labels(path: &Path) -> Result<Vec<u8>> {
    read_idx_labels(BufReader::new(File::open(path)?))
}

pub fn save_idx_images(path: &Path, images: &IdxImages) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_idx_images(&mut w, images)?;
    w.flush()?;
    Ok(())
}

pub fn save_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_idx_labels(&mut w, labels)?;
    w.flush()?;
    Ok(())
}
