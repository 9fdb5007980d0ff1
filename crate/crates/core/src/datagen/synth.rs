//! Synthesis of touching numeral strings.
//!
//! Digits are concatenated by baseline-aligning the incoming glyph with
//! bounded vertical jitter and sliding it leftward from a non-overlapping
//! start until the ink masks first become 8-connected, allowing at most
//! `max_overlap` columns of overlap. When sliding alone cannot produce
//! contact (or a ligature junction is forced), a 1-2 px stroke bridges the
//! nearest ink pixels. Every emitted composition has exactly one
//! 8-connected foreground component.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::glyph::DigitGlyph;
use crate::datagen::image::GrayImage;
use crate::error::{Error, Result};
use crate::modelzoo::{encode_omega, OmegaCode};

/// How two adjacent digits ended up touching.
///
/// The taxonomy is decided from the contact geometry between the two ink
/// masks: V for two or more disjoint contact regions, I for a single
/// contact of at most 2 px, III for a single contact where the masks share
/// ink columns, II for the remaining elongated contacts (drawn ligatures
/// land here). Isolated digits are `Untagged`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConnectionType {
    I,
    II,
    III,
    V,
    Untagged,
}

impl ConnectionType {
    pub fn tag(self) -> &'static str {
        match self {
            ConnectionType::I => "I",
            ConnectionType::II => "II",
            ConnectionType::III => "III",
            ConnectionType::V => "V",
            ConnectionType::Untagged => "Untagged",
        }
    }

    pub fn parse(tag: &str) -> Result<Self> {
        match tag {
            "I" => Ok(ConnectionType::I),
            "II" => Ok(ConnectionType::II),
            "III" => Ok(ConnectionType::III),
            "V" => Ok(ConnectionType::V),
            "Untagged" => Ok(ConnectionType::Untagged),
            other => Err(Error::Format {
                offset: 0,
                message: format!("unknown connection type {other:?}"),
            }),
        }
    }

    /// Touching types ordered I < II < III < V; a multi-junction string is
    /// tagged with its most complex junction.
    fn severity(self) -> u8 {
        match self {
            ConnectionType::I => 0,
            ConnectionType::II => 1,
            ConnectionType::III => 2,
            ConnectionType::V => 3,
            ConnectionType::Untagged => u8::MAX,
        }
    }
}

impl std::fmt::Display for ConnectionType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// Concatenation knobs.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct ConcatParams {
    /// Maximum columns the incoming glyph may overlap the accumulated
    /// image while sliding toward contact.
    pub max_overlap: usize,
    /// Vertical jitter bound as a fraction of the incoming glyph height.
    pub jitter_frac: f64,
    /// Probability of forcing a bridged (ligature) junction.
    pub ligature_prob: f64,
    /// Allow a bridging stroke when sliding cannot produce contact.
    pub ligature: bool,
}

impl Default for ConcatParams {
    fn default() -> Self {
        ConcatParams {
            max_overlap: 3,
            jitter_frac: 0.15,
            ligature_prob: 0.1,
            ligature: true,
        }
    }
}

/// Boolean raster marking which pixels came from one source glyph.
/// Shared ink (coincident overlap or a drawn ligature) is set in both
/// masks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize) {
        self.bits[y * self.width + x] = true;
    }

    fn any_near(&self, x: isize, y: isize) -> bool {
        for dy in -1..=1isize {
            for dx in -1..=1isize {
                let nx = x + dx;
                let ny = y + dy;
                if nx >= 0
                    && ny >= 0
                    && (nx as usize) < self.width
                    && (ny as usize) < self.height
                    && self.get(nx as usize, ny as usize)
                {
                    return true;
                }
            }
        }
        false
    }
}

/// A composed pair: the image plus per-source ink masks.
#[derive(Clone, Debug)]
pub struct TouchingPair {
    pub image: GrayImage,
    pub left_mask: Mask,
    pub right_mask: Mask,
    /// Whether a bridging stroke was drawn.
    pub ligature_drawn: bool,
}

struct Placement {
    left_y: usize,
    right_y: usize,
    height: usize,
}

fn baseline_placement(lh: usize, rh: usize, dy: isize) -> Placement {
    // bottoms aligned, right bottom shifted by dy
    let left_top = 0isize;
    let right_top = lh as isize + dy - rh as isize;
    let shift = (-left_top.min(right_top)).max(0);
    let left_y = (left_top + shift) as usize;
    let right_y = (right_top + shift) as usize;
    let height = (left_y + lh).max(right_y + rh);
    Placement {
        left_y,
        right_y,
        height,
    }
}

/// Does any ink pixel of `right` placed at (x_r, y_r) touch (8-adjacency,
/// including coincidence) ink of `left` placed at (0, y_l)?
fn in_contact(
    left: &GrayImage,
    right: &GrayImage,
    place: &Placement,
    x_r: usize,
) -> bool {
    for ry in 0..right.height() {
        for rx in 0..right.width() {
            if !right.is_ink(rx, ry) {
                continue;
            }
            let cx = (x_r + rx) as isize;
            let cy = (place.right_y + ry) as isize;
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let lx = cx + dx;
                    let ly = cy + dy - place.left_y as isize;
                    if lx >= 0
                        && ly >= 0
                        && (lx as usize) < left.width()
                        && (ly as usize) < left.height()
                        && left.is_ink(lx as usize, ly as usize)
                    {
                        return true;
                    }
                }
            }
        }
    }
    false
}

struct InkPair {
    dist2: u64,
    left: (usize, usize),
    right: (usize, usize),
}

/// Nearest (left ink, right ink) pixel pair in canvas coordinates,
/// first-minimal in scan order.
fn nearest_ink_pair(left: &Mask, right: &Mask) -> Option<((usize, usize), (usize, usize))> {
    let mut best: Option<InkPair> = None;
    for ly in 0..left.height() {
        for lx in 0..left.width() {
            if !left.get(lx, ly) {
                continue;
            }
            for ry in 0..right.height() {
                for rx in 0..right.width() {
                    if !right.get(rx, ry) {
                        continue;
                    }
                    let dist2 = (lx as i64 - rx as i64).pow(2) as u64
                        + (ly as i64 - ry as i64).pow(2) as u64;
                    if best.as_ref().is_none_or(|b| dist2 < b.dist2) {
                        best = Some(InkPair {
                            dist2,
                            left: (lx, ly),
                            right: (rx, ry),
                        });
                    }
                }
            }
        }
    }
    best.map(|b| (b.left, b.right))
}

fn draw_stroke(
    image: &mut GrayImage,
    left_mask: &mut Mask,
    right_mask: &mut Mask,
    from: (usize, usize),
    to: (usize, usize),
    thickness: usize,
) {
    let (mut x0, mut y0) = (from.0 as isize, from.1 as isize);
    let (x1, y1) = (to.0 as isize, to.1 as isize);
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        for t in 0..thickness as isize {
            let ty = y0 + t;
            if ty >= 0 && (ty as usize) < image.height() && (x0 as usize) < image.width() {
                image.set(x0 as usize, ty as usize, 255);
                left_mask.set(x0 as usize, ty as usize);
                right_mask.set(x0 as usize, ty as usize);
            }
        }
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}

/// Concatenate two glyph images into a touching composition.
///
/// Inputs must be binarized, tightly cropped, and single-component; the
/// result is verified to contain exactly one 8-connected foreground
/// component.
pub fn concat_touching(
    left: &GrayImage,
    right: &GrayImage,
    params: &ConcatParams,
    rng: &mut impl Rng,
) -> Result<TouchingPair> {
    if left.ink_count() == 0 || right.ink_count() == 0 {
        return Err(Error::Usage("cannot concatenate blank glyphs".into()));
    }
    let jmax = (params.jitter_frac * right.height() as f64).round() as i64;
    let dy = if jmax > 0 {
        rng.random_range(-jmax..=jmax) as isize
    } else {
        0
    };
    let place = baseline_placement(left.height(), right.height(), dy);
    let lw = left.width();

    let force_ligature = params.ligature && rng.random_bool(params.ligature_prob.clamp(0.0, 1.0));
    let slide_floor = lw.saturating_sub(params.max_overlap).max(1);

    let (x_r, need_stroke) = if force_ligature {
        (lw + rng.random_range(1..=2usize), true)
    } else {
        let mut found = None;
        for x in (slide_floor..=lw).rev() {
            if in_contact(left, right, &place, x) {
                found = Some(x);
                break;
            }
        }
        match found {
            Some(x) => (x, false),
            None if params.ligature => (slide_floor, true),
            None => {
                return Err(Error::Generation(format!(
                    "no contact within {} columns of overlap and ligature mode is off",
                    params.max_overlap
                )))
            }
        }
    };

    let width = lw.max(x_r + right.width());
    let height = place.height;
    let mut image = GrayImage::new(width, height);
    let mut left_mask = Mask::new(width, height);
    let mut right_mask = Mask::new(width, height);
    for y in 0..left.height() {
        for x in 0..lw {
            if left.is_ink(x, y) {
                image.set(x, place.left_y + y, left.get(x, y));
                left_mask.set(x, place.left_y + y);
            }
        }
    }
    for y in 0..right.height() {
        for x in 0..right.width() {
            if right.is_ink(x, y) {
                image.set(x_r + x, place.right_y + y, right.get(x, y));
                right_mask.set(x_r + x, place.right_y + y);
            }
        }
    }

    let ligature_drawn = need_stroke;
    if need_stroke {
        let (from, to) = nearest_ink_pair(&left_mask, &right_mask)
            .ok_or_else(|| Error::Generation("masks lost their ink".into()))?;
        let thickness = rng.random_range(1..=2usize);
        draw_stroke(&mut image, &mut left_mask, &mut right_mask, from, to, thickness);
    }

    let components = image.count_components_8();
    if components != 1 {
        return Err(Error::Generation(format!(
            "composition has {components} components; source glyphs must be single-component"
        )));
    }
    Ok(TouchingPair {
        image,
        left_mask,
        right_mask,
        ligature_drawn,
    })
}

/// Decide the connection type from the contact geometry between the two
/// ink masks. Errors if the masks do not touch at all.
pub fn classify_connection_type(
    image: &GrayImage,
    left: &Mask,
    right: &Mask,
) -> Result<ConnectionType> {
    let (w, h) = (image.width(), image.height());
    if left.width() != w || left.height() != h || right.width() != w || right.height() != h {
        return Err(Error::Usage("masks do not match the image extent".into()));
    }
    // contact set: shared pixels plus pixels of one mask adjacent to the other
    let mut contact = Mask::new(w, h);
    let mut contact_size = 0usize;
    for y in 0..h {
        for x in 0..w {
            let l = left.get(x, y);
            let r = right.get(x, y);
            let touch = (l && r)
                || (l && right.any_near(x as isize, y as isize))
                || (r && left.any_near(x as isize, y as isize));
            if touch {
                contact.set(x, y);
                contact_size += 1;
            }
        }
    }
    if contact_size == 0 {
        return Err(Error::Generation(
            "masks are not touching; no contact region exists".into(),
        ));
    }

    let regions = {
        let mut px = vec![0u8; w * h];
        for y in 0..h {
            for x in 0..w {
                if contact.get(x, y) {
                    px[y * w + x] = 255;
                }
            }
        }
        GrayImage::from_pixels(w, h, px)?.count_components_8()
    };
    if regions >= 2 {
        return Ok(ConnectionType::V);
    }
    if contact_size <= 2 {
        return Ok(ConnectionType::I);
    }
    // column overlap over exclusive ink only, so a bridging stroke (shared
    // ink) does not count as interpenetration
    for x in 0..w {
        let mut l_only = false;
        let mut r_only = false;
        for y in 0..h {
            let l = left.get(x, y);
            let r = right.get(x, y);
            l_only |= l && !r;
            r_only |= r && !l;
        }
        if l_only && r_only {
            return Ok(ConnectionType::III);
        }
    }
    Ok(ConnectionType::II)
}

/// A generated sample: image, ground truth, and provenance.
#[derive(Clone, Debug)]
pub struct LabeledSample {
    pub image: GrayImage,
    pub label: String,
    pub length: usize,
    pub connection_type: ConnectionType,
    pub writer_ids: Vec<u32>,
    /// Packed class index; `None` for 4-digit strings.
    pub omega: Option<OmegaCode>,
}

/// Left-fold 2-4 glyphs into one touching string.
pub fn build_string_sample(
    glyphs: &[&DigitGlyph],
    params: &ConcatParams,
    rng: &mut impl Rng,
) -> Result<LabeledSample> {
    if !(2..=4).contains(&glyphs.len()) {
        return Err(Error::Usage(format!(
            "a touching string folds 2-4 glyphs, got {}",
            glyphs.len()
        )));
    }
    let mut image = glyphs[0].image.clone();
    let mut label = glyphs[0].digit.to_string();
    let mut writer_ids = vec![glyphs[0].writer_id];
    let mut junction = ConnectionType::I;
    let mut first = true;
    for glyph in &glyphs[1..] {
        let pair = concat_touching(&image, &glyph.image, params, rng)?;
        let tag = classify_connection_type(&pair.image, &pair.left_mask, &pair.right_mask)?;
        junction = if first || tag.severity() > junction.severity() {
            tag
        } else {
            junction
        };
        first = false;
        image = pair.image;
        label.push_str(&glyph.digit.to_string());
        writer_ids.push(glyph.writer_id);
    }
    let length = label.len();
    let omega = if length <= 3 {
        Some(encode_omega(&label)?)
    } else {
        None
    };
    Ok(LabeledSample {
        image,
        label,
        length,
        connection_type: junction,
        writer_ids,
        omega,
    })
}

/// Wrap a lone glyph as a length-1 sample.
pub fn build_single_sample(glyph: &DigitGlyph) -> Result<LabeledSample> {
    let label = glyph.digit.to_string();
    Ok(LabeledSample {
        image: glyph.image.clone(),
        label: label.clone(),
        length: 1,
        connection_type: ConnectionType::Untagged,
        writer_ids: vec![glyph.writer_id],
        omega: Some(encode_omega(&label)?),
    })
}
