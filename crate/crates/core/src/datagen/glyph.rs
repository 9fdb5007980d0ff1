//! Isolated-digit glyphs: corpus ingestion and size normalization.

use std::fs;
use std::path::Path;

use crate::datagen::idx::{load_idx_images, load_idx_labels};
use crate::datagen::image::GrayImage;
use crate::error::{Error, Result};

/// One isolated digit, tightly cropped, ink-high.
#[derive(Clone, Debug)]
pub struct DigitGlyph {
    pub image: GrayImage,
    pub digit: u8,
    pub writer_id: u32,
    pub source_index: usize,
}

/// Load a digit corpus from IDX image + label containers. Writer identity
/// comes from an optional sidecar (one integer per line); without one the
/// record index stands in as a writer id, which keeps index-range splits
/// writer-disjoint by construction.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Vec<DigitGlyph>> {
    load_idx_with_writers(images_path, labels_path, None)
}

pub fn load_idx_with_writers(
    images_path: &Path,
    labels_path: &Path,
    writers_path: Option<&Path>,
) -> Result<Vec<DigitGlyph>> {
    let images = load_idx_images(images_path)?;
    let labels = load_idx_labels(labels_path)?;
    if images.count != labels.len() {
        return Err(Error::format(
            0,
            format!(
                "image container holds {} records but label container holds {}",
                images.count,
                labels.len()
            ),
        ));
    }
    let writers: Option<Vec<u32>> = match writers_path {
        None => None,
        Some(path) => {
            let text = fs::read_to_string(path)?;
            let ids: Vec<u32> = text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| {
                    l.trim()
                        .parse::<u32>()
                        .map_err(|e| Error::format(0, format!("bad writer id {l:?}: {e}")))
                })
                .collect::<Result<_>>()?;
            if ids.len() != images.count {
                return Err(Error::format(
                    0,
                    format!(
                        "writer sidecar holds {} ids for {} records",
                        ids.len(),
                        images.count
                    ),
                ));
            }
            Some(ids)
        }
    };

    let mut glyphs = Vec::with_capacity(images.count);
    for i in 0..images.count {
        let digit = labels[i];
        if digit > 9 {
            return Err(Error::format(
                0,
                format!("record {i} has label {digit}, expected a digit 0-9"),
            ));
        }
        let raw = GrayImage::from_pixels(images.width, images.height, images.record(i).to_vec())?;
        let Some(cropped) = raw.tight_crop() else {
            return Err(Error::format(
                0,
                format!("record {i} is blank and cannot be tightly cropped"),
            ));
        };
        glyphs.push(DigitGlyph {
            image: cropped,
            digit,
            writer_id: writers.as_ref().map_or(i as u32, |w| w[i]),
            source_index: i,
        });
    }
    Ok(glyphs)
}

/// Aspect-preserving nearest-neighbor resize to the target height,
/// binarized at 128, then re-cropped so the bounding box stays tight.
pub fn normalize_glyph(glyph: &DigitGlyph, target_height: usize) -> Result<DigitGlyph> {
    if target_height == 0 {
        return Err(Error::Usage("target height must be >= 1".into()));
    }
    let w = ((glyph.image.width() * target_height + glyph.image.height() / 2)
        / glyph.image.height())
    .max(1);
    let resized = glyph.image.resize_nearest(w, target_height);
    let binary = resized.binarize(128);
    let image = binary.tight_crop().ok_or_else(|| {
        Error::Generation(format!(
            "glyph from record {} vanished under binarization",
            glyph.source_index
        ))
    })?;
    Ok(DigitGlyph {
        image,
        digit: glyph.digit,
        writer_id: glyph.writer_id,
        source_index: glyph.source_index,
    })
}
