//! Grayscale raster with an explicit ink convention, plus the pixel-level
//! operations the generator needs: tight cropping, nearest-neighbor
//! resizing, padding, binarization, and 8-connected component counting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Whether ink is stored as high or low intensity. Everything downstream of
/// ingestion expects `InkHigh` (background 0, ink up to 255).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InkConvention {
    InkHigh,
    InkLow,
}

/// A 2-D intensity raster, row-major u8.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
    ink: InkConvention,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        GrayImage {
            width,
            height,
            pixels: vec![0; width * height],
            ink: InkConvention::InkHigh,
        }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width * height != pixels.len() {
            return Err(Error::dimension(
                "pixels",
                format!(
                    "{width}x{height} image needs {} pixels, got {}",
                    width * height,
                    pixels.len()
                ),
            ));
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
            ink: InkConvention::InkHigh,
        })
    }

    /// Build from raw pixels in the stated convention, normalizing to
    /// ink-high storage.
    pub fn from_raw(
        width: usize,
        height: usize,
        pixels: Vec<u8>,
        ink: InkConvention,
    ) -> Result<Self> {
        let mut img = GrayImage::from_pixels(width, height, pixels)?;
        if ink == InkConvention::InkLow {
            for p in &mut img.pixels {
                *p = 255 - *p;
            }
        }
        Ok(img)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }

    /// Foreground predicate: any non-zero intensity is ink.
    pub fn is_ink(&self, x: usize, y: usize) -> bool {
        self.get(x, y) > 0
    }

    pub fn ink_count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p > 0).count()
    }

    /// Inclusive bounding box (x0, y0, x1, y1) of the foreground, if any.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        let mut x0 = self.width;
        let mut y0 = self.height;
        let mut x1 = 0usize;
        let mut y1 = 0usize;
        let mut seen = false;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.is_ink(x, y) {
                    seen = true;
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                }
            }
        }
        seen.then_some((x0, y0, x1, y1))
    }

    /// Crop to the foreground bounding box. Returns `None` for blank
    /// images.
    pub fn tight_crop(&self) -> Option<GrayImage> {
        let (x0, y0, x1, y1) = self.bounding_box()?;
        let w = x1 - x0 + 1;
        let h = y1 - y0 + 1;
        let mut out = GrayImage::new(w, h);
        for y in 0..h {
            let src = (y0 + y) * self.width + x0;
            out.pixels[y * w..(y + 1) * w].copy_from_slice(&self.pixels[src..src + w]);
        }
        Some(out)
    }

    /// Nearest-neighbor resize; source index = floor(dst * src / dst).
    pub fn resize_nearest(&self, new_width: usize, new_height: usize) -> GrayImage {
        assert!(new_width >= 1 && new_height >= 1, "degenerate resize");
        let mut out = GrayImage::new(new_width, new_height);
        for y in 0..new_height {
            let sy = y * self.height / new_height;
            for x in 0..new_width {
                let sx = x * self.width / new_width;
                out.pixels[y * new_width + x] = self.pixels[sy * self.width + sx];
            }
        }
        out
    }

    /// Threshold to {0, 255}: pixels >= threshold become 255.
    pub fn binarize(&self, threshold: u8) -> GrayImage {
        let mut out = self.clone();
        for p in &mut out.pixels {
            *p = if *p >= threshold { 255 } else { 0 };
        }
        out
    }

    /// Place this image centered on a larger canvas of background.
    pub fn pad_centered(&self, width: usize, height: usize) -> Result<GrayImage> {
        if width < self.width || height < self.height {
            return Err(Error::dimension(
                "pad",
                format!(
                    "cannot pad {}x{} onto a smaller {width}x{height} canvas",
                    self.width, self.height
                ),
            ));
        }
        let ox = (width - self.width) / 2;
        let oy = (height - self.height) / 2;
        let mut out = GrayImage::new(width, height);
        for y in 0..self.height {
            let dst = (oy + y) * width + ox;
            out.pixels[dst..dst + self.width]
                .copy_from_slice(&self.pixels[y * self.width..(y + 1) * self.width]);
        }
        Ok(out)
    }

    /// Number of 8-connected foreground components (BFS flood fill).
    pub fn count_components_8(&self) -> usize {
        let mut visited = vec![false; self.pixels.len()];
        let mut count = 0;
        let mut queue = Vec::new();
        for start in 0..self.pixels.len() {
            if visited[start] || self.pixels[start] == 0 {
                continue;
            }
            count += 1;
            visited[start] = true;
            queue.push(start);
            while let Some(idx) = queue.pop() {
                let x = idx % self.width;
                let y = idx / self.width;
                for dy in -1isize..=1 {
                    for dx in -1isize..=1 {
                        if dx == 0 && dy == 0 {
                            continue;
                        }
                        let nx = x as isize + dx;
                        let ny = y as isize + dy;
                        if nx < 0 || ny < 0 || nx >= self.width as isize || ny >= self.height as isize
                        {
                            continue;
                        }
                        let nidx = ny as usize * self.width + nx as usize;
                        if !visited[nidx] && self.pixels[nidx] > 0 {
                            visited[nidx] = true;
                            queue.push(nidx);
                        }
                    }
                }
            }
        }
        count
    }
}
