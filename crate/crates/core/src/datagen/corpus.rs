//! Self-contained isolated-digit corpus.
//!
//! Renders a 5x7 pixel font through randomized affine distortions (scale,
//! aspect, shear, rotation, translation, stroke thickness) into 28x28
//! ink-high rasters, emitted in the same IDX containers a downloaded digit
//! corpus would use. Useful wherever no real corpus is on disk; everything
//! downstream ingests it through the ordinary IDX loader.

use std::path::{Path, PathBuf};

use rand::Rng;

use crate::datagen::glyph::DigitGlyph;
use crate::datagen::idx::{save_idx_images, save_idx_labels, IdxImages};
use crate::datagen::image::GrayImage;
use crate::error::Result;
use crate::nncore::rng::derive_rng;

const FONT_W: usize = 5;
const FONT_H: usize = 7;

#[rustfmt::skip]
const FONT: [[&str; FONT_H]; 10] = [
    [" ### ", "#   #", "#   #", "#   #", "#   #", "#   #", " ### "],
    ["  #  ", " ##  ", "  #  ", "  #  ", "  #  ", "  #  ", " ### "],
    [" ### ", "#   #", "    #", "   # ", "  #  ", " #   ", "#####"],
    [" ### ", "#   #", "    #", "  ## ", "    #", "#   #", " ### "],
    ["   # ", "  ## ", " # # ", "#  # ", "#####", "   # ", "   # "],
    ["#####", "#    ", "#### ", "    #", "    #", "#   #", " ### "],
    [" ### ", "#    ", "#    ", "#### ", "#   #", "#   #", " ### "],
    ["#####", "    #", "   # ", "   # ", "  #  ", "  #  ", "  #  "],
    [" ### ", "#   #", "#   #", " ### ", "#   #", "#   #", " ### "],
    [" ### ", "#   #", "#   #", " ####", "    #", "    #", " ### "],
];

fn font_ink(digit: u8, x: isize, y: isize) -> bool {
    if x < 0 || y < 0 || x >= FONT_W as isize || y >= FONT_H as isize {
        return false;
    }
    FONT[digit as usize][y as usize].as_bytes()[x as usize] == b'#'
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusConfig {
    pub count: usize,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            count: 1000,
            seed: 42,
            height: 28,
            width: 28,
        }
    }
}

/// An in-memory corpus in IDX shape.
#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub images: IdxImages,
    pub labels: Vec<u8>,
}

impl SyntheticCorpus {
    /// Convert to tightly cropped glyphs with record-index writer ids,
    /// mirroring what the IDX loader produces.
    pub fn into_glyphs(self) -> Vec<DigitGlyph> {
        let mut glyphs = Vec::with_capacity(self.images.count);
        for i in 0..self.images.count {
            let raw = GrayImage::from_pixels(
                self.images.width,
                self.images.height,
                self.images.record(i).to_vec(),
            )
            .expect("record extent");
            let Some(image) = raw.tight_crop() else {
                continue;
            };
            glyphs.push(DigitGlyph {
                image,
                digit: self.labels[i],
                writer_id: i as u32,
                source_index: i,
            });
        }
        glyphs
    }
}

fn render_digit(digit: u8, rng: &mut impl Rng, width: usize, height: usize) -> GrayImage {
    let sy: f64 = rng.random_range(2.2..3.0);
    let sx: f64 = sy * rng.random_range(0.8..1.15);
    let shear: f64 = rng.random_range(-0.28..0.28);
    let theta: f64 = rng.random_range(-0.12..0.12);
    let tx: f64 = rng.random_range(-1.5..1.5);
    let ty: f64 = rng.random_range(-1.5..1.5);
    let thicken = rng.random_bool(0.35);

    // forward: p = R(theta) * diag(sx, sy) * shear_x(k) * (f - fc) + tc
    let (cos, sin) = (theta.cos(), theta.sin());
    let m00 = cos * sx;
    let m01 = cos * sx * shear - sin * sy;
    let m10 = sin * sx;
    let m11 = sin * sx * shear + cos * sy;
    let det = m00 * m11 - m01 * m10;
    let i00 = m11 / det;
    let i01 = -m01 / det;
    let i10 = -m10 / det;
    let i11 = m00 / det;

    let fcx = FONT_W as f64 / 2.0;
    let fcy = FONT_H as f64 / 2.0;
    let tcx = width as f64 / 2.0 + tx;
    let tcy = height as f64 / 2.0 + ty;

    // five sub-samples per pixel close the quantization gaps that a single
    // nearest sample leaves along thin rotated strokes
    const SUB: [(f64, f64); 5] = [(0.5, 0.5), (0.2, 0.2), (0.8, 0.2), (0.2, 0.8), (0.8, 0.8)];
    let mut out = GrayImage::new(width, height);
    for y in 0..height {
        for x in 0..width {
            let hit = SUB.iter().any(|&(ox, oy)| {
                let dx = x as f64 + ox - tcx;
                let dy = y as f64 + oy - tcy;
                let fx = i00 * dx + i01 * dy + fcx;
                let fy = i10 * dx + i11 * dy + fcy;
                font_ink(digit, fx.floor() as isize, fy.floor() as isize)
            });
            if hit {
                out.set(x, y, 255);
            }
        }
    }
    if thicken {
        let mut fat = out.clone();
        for y in 0..height {
            for x in 0..width.saturating_sub(1) {
                if out.get(x, y) > 0 {
                    fat.set(x + 1, y, 255);
                }
            }
        }
        return fat;
    }
    out
}

/// Deterministically synthesize `count` digits; record i carries digit
/// i mod 10 so every index range covers all classes evenly.
pub fn synthesize_corpus(cfg: &CorpusConfig) -> SyntheticCorpus {
    let mut data = Vec::with_capacity(cfg.count * cfg.height * cfg.width);
    let mut labels = Vec::with_capacity(cfg.count);
    for i in 0..cfg.count {
        let digit = (i % 10) as u8;
        let mut rng = derive_rng(cfg.seed, &[0xD161, i as u64]);
        let image = render_digit(digit, &mut rng, cfg.width, cfg.height);
        data.extend_from_slice(image.pixels());
        labels.push(digit);
    }
    SyntheticCorpus {
        images: IdxImages {
            count: cfg.count,
            height: cfg.height,
            width: cfg.width,
            data,
        },
        labels,
    }
}

/// Write the corpus as IDX containers under `dir`, returning the
/// (images, labels) paths.
pub fn write_corpus(dir: &Path, cfg: &CorpusConfig) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let corpus = synthesize_corpus(cfg);
    let images_path = dir.join("digits.images.idx");
    let labels_path = dir.join("digits.labels.idx");
    save_idx_images(&images_path, &corpus.images)?;
    save_idx_labels(&labels_path, &corpus.labels)?;
    Ok((images_path, labels_path))
}
