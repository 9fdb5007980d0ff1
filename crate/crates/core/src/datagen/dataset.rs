//! Writer-disjoint dataset generation and its on-disk formats.
//!
//! Each split is emitted as an IDX image container of fixed-size canvases
//! plus a CSV metadata file (`id,label,length,omega,connection_type,
//! writer_ids`). Generation is a pure function of (glyph pool, config):
//! every sample derives its own rng stream from (seed, split, length,
//! index).

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::glyph::{normalize_glyph, DigitGlyph};
use crate::datagen::idx::{load_idx_images, save_idx_images, IdxImages};
use crate::datagen::image::GrayImage;
use crate::datagen::synth::{
    build_single_sample, build_string_sample, ConcatParams, ConnectionType, LabeledSample,
};
use crate::error::{Error, Result};
use crate::modelzoo::OmegaCode;
use crate::nncore::rng::derive_rng;
use crate::nncore::Tensor;
use rand::Rng;

/// Dataset partitions; digits from disjoint writer ranges feed each one.
#[derive(
    Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn all() -> [Split; 3] {
        [Split::Train, Split::Validation, Split::Test]
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    fn stream_id(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Validation => 2,
            Split::Test => 3,
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Requested sample counts per string length.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LengthCounts {
    pub len1: usize,
    pub len2: usize,
    pub len3: usize,
    pub len4: usize,
}

impl LengthCounts {
    pub fn get(&self, length: usize) -> usize {
        match length {
            1 => self.len1,
            2 => self.len2,
            3 => self.len3,
            4 => self.len4,
            _ => 0,
        }
    }

    fn set(&mut self, length: usize, value: usize) {
        match length {
            1 => self.len1 = value,
            2 => self.len2 = value,
            3 => self.len3 = value,
            4 => self.len4 = value,
            _ => {}
        }
    }

    pub fn total(&self) -> usize {
        self.len1 + self.len2 + self.len3 + self.len4
    }
}

/// Full generation parameters.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct GenConfig {
    pub seed: u64,
    /// Samples per length for each split.
    pub counts: BTreeMap<Split, LengthCounts>,
    /// Half-open writer-id ranges [lo, hi) per split; must be pairwise
    /// disjoint.
    pub writer_ranges: BTreeMap<Split, (u32, u32)>,
    pub concat: ConcatParams,
    /// Height glyphs are normalized to before concatenation.
    pub glyph_height: usize,
    /// Side of the square canvas emitted samples are fitted onto.
    pub canvas_side: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            seed: 42,
            counts: BTreeMap::new(),
            writer_ranges: BTreeMap::new(),
            concat: ConcatParams::default(),
            glyph_height: 28,
            canvas_side: 64,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.glyph_height == 0 || self.canvas_side == 0 {
            return Err(Error::Config(
                "glyph_height and canvas_side must be >= 1".into(),
            ));
        }
        let mut ranges: Vec<(Split, (u32, u32))> = Vec::new();
        for (&split, counts) in &self.counts {
            if counts.total() == 0 {
                continue;
            }
            let Some(&range) = self.writer_ranges.get(&split) else {
                return Err(Error::Config(format!(
                    "split {split} has sample counts but no writer range"
                )));
            };
            if range.0 >= range.1 {
                return Err(Error::Config(format!(
                    "split {split} writer range {range:?} is empty"
                )));
            }
            ranges.push((split, range));
        }
        for (i, &(sa, ra)) in ranges.iter().enumerate() {
            for &(sb, rb) in &ranges[i + 1..] {
                if ra.0 < rb.1 && rb.0 < ra.1 {
                    return Err(Error::Config(format!(
                        "writer ranges of {sa} {ra:?} and {sb} {rb:?} overlap"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// What one generated split looks like on disk.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct DatasetManifest {
    pub split: Split,
    pub images_path: PathBuf,
    pub metadata_path: PathBuf,
    pub counts_per_length: LengthCounts,
    pub writer_range: (u32, u32),
    pub seed: u64,
    /// Full echo of the generation parameters for reproducibility.
    pub gen: GenConfig,
}

/// One loaded dataset row: sample plus its stable id.
#[derive(Clone, Debug)]
pub struct DatasetRecord {
    pub id: String,
    pub sample: LabeledSample,
}

/// Fit an image onto a square canvas: aspect-preserving nearest-neighbor
/// shrink when it exceeds the canvas, then centered padding.
pub fn fit_to_canvas(image: &GrayImage, side: usize) -> Result<GrayImage> {
    let (w, h) = (image.width(), image.height());
    let fitted = if w <= side && h <= side {
        image.clone()
    } else {
        let scale = (side as f64 / w as f64).min(side as f64 / h as f64);
        let nw = ((w as f64 * scale).floor() as usize).clamp(1, side);
        let nh = ((h as f64 * scale).floor() as usize).clamp(1, side);
        image.resize_nearest(nw, nh)
    };
    fitted.pad_centered(side, side)
}

/// Convert an image to network input: fitted to 64x64, intensities scaled
/// to [0, 1], shape (1, 64, 64).
pub fn resize_to_input(image: &GrayImage) -> Result<Tensor<f32>> {
    let side = crate::modelzoo::INPUT_SIDE;
    let canvas = fit_to_canvas(image, side)?;
    let data: Vec<f32> = canvas.pixels().iter().map(|&p| p as f32 / 255.0).collect();
    Tensor::new(&[1, side, side], data)
}

/// Stack dataset records into an (N, 1, 64, 64) batch in record order.
pub fn stack_inputs(records: &[&DatasetRecord]) -> Result<Tensor<f32>> {
    let side = crate::modelzoo::INPUT_SIDE;
    let mut data = Vec::with_capacity(records.len() * side * side);
    for r in records {
        let t = resize_to_input(&r.sample.image)?;
        data.extend_from_slice(t.data());
    }
    Tensor::new(&[records.len(), 1, side, side], data)
}

/// Uniform class plan: every class of the length appears floor(n/K) times,
/// and the first n mod K classes of a seeded shuffle appear once more, so
/// per-class counts differ by at most one.
fn class_plan(split: Split, length: usize, n: usize, seed: u64) -> Vec<String> {
    let k = 10usize.pow(length as u32);
    let base = n / k;
    let rem = n % k;
    let mut order: Vec<usize> = (0..k).collect();
    let mut rng = derive_rng(seed, &[0xC1A5, split.stream_id(), length as u64]);
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let mut plan = Vec::with_capacity(n);
    for (rank, &class) in order.iter().enumerate() {
        let copies = base + usize::from(rank < rem);
        for _ in 0..copies {
            plan.push(format!("{class:0length$}"));
        }
    }
    plan
}

const MAX_ATTEMPTS: usize = 64;

fn synthesize_sample(
    label: &str,
    by_digit: &[Vec<DigitGlyph>; 10],
    cfg: &GenConfig,
    split: Split,
    index: usize,
) -> Result<LabeledSample> {
    let mut rng = derive_rng(
        cfg.seed,
        &[0x5A11, split.stream_id(), label.len() as u64, index as u64],
    );
    let digits: Vec<usize> = label.bytes().map(|b| (b - b'0') as usize).collect();
    for d in &digits {
        if by_digit[*d].is_empty() {
            return Err(Error::Capacity {
                class: label.to_string(),
                message: format!("no usable glyphs for digit {d} in the {split} writer range"),
            });
        }
    }
    for _attempt in 0..MAX_ATTEMPTS {
        let picks: Vec<&DigitGlyph> = digits
            .iter()
            .map(|&d| {
                let pool = &by_digit[d];
                &pool[rng.random_range(0..pool.len())]
            })
            .collect();
        let built = if picks.len() == 1 {
            build_single_sample(picks[0])
        } else {
            build_string_sample(&picks, &cfg.concat, &mut rng)
        };
        let sample = match built {
            Ok(s) => s,
            Err(Error::Generation(_)) => continue,
            Err(e) => return Err(e),
        };
        let canvas = fit_to_canvas(&sample.image, cfg.canvas_side)?;
        // fitting may shrink; re-verify connectivity on the stored image
        if canvas.count_components_8() != 1 {
            continue;
        }
        return Ok(LabeledSample {
            image: canvas,
            ..sample
        });
    }
    Err(Error::Generation(format!(
        "could not synthesize a single-component sample for class {label} ({split} index {index}) in {MAX_ATTEMPTS} attempts"
    )))
}

/// Generate every split of the config under `out_dir`, returning one
/// manifest per split. Also writes `manifest.json` beside the data files.
pub fn generate_dataset(
    pool: &[DigitGlyph],
    cfg: &GenConfig,
    out_dir: &Path,
) -> Result<Vec<DatasetManifest>> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let mut manifests = Vec::new();
    for (&split, counts) in &cfg.counts {
        if counts.total() == 0 {
            continue;
        }
        let range = cfg.writer_ranges[&split];
        let mut by_digit: [Vec<DigitGlyph>; 10] = Default::default();
        for glyph in pool {
            if glyph.writer_id < range.0 || glyph.writer_id >= range.1 {
                continue;
            }
            let Ok(norm) = normalize_glyph(glyph, cfg.glyph_height) else {
                continue;
            };
            if norm.image.count_components_8() == 1 {
                by_digit[norm.digit as usize].push(norm);
            }
        }

        let mut emitted = LengthCounts::default();
        let mut rows: Vec<(String, LabeledSample)> = Vec::with_capacity(counts.total());
        for length in 1..=4usize {
            let n = counts.get(length);
            if n == 0 {
                continue;
            }
            let plan = class_plan(split, length, n, cfg.seed);
            for (i, label) in plan.iter().enumerate() {
                let sample = synthesize_sample(label, &by_digit, cfg, split, i)?;
                let id = format!("{split}-L{length}-{i:06}");
                rows.push((id, sample));
            }
            emitted.set(length, n);
        }

        let images_path = out_dir.join(format!("{split}.images.idx"));
        let metadata_path = out_dir.join(format!("{split}.metadata.csv"));
        write_split_files(&images_path, &metadata_path, &rows, cfg.canvas_side)?;
        manifests.push(DatasetManifest {
            split,
            images_path,
            metadata_path,
            counts_per_length: emitted,
            writer_range: range,
            seed: cfg.seed,
            gen: cfg.clone(),
        });
    }
    let manifest_path = out_dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifests)?;
    fs::write(manifest_path, json + "\n")?;
    Ok(manifests)
}

fn write_split_files(
    images_path: &Path,
    metadata_path: &Path,
    rows: &[(String, LabeledSample)],
    side: usize,
) -> Result<()> {
    let mut data = Vec::with_capacity(rows.len() * side * side);
    for (_, sample) in rows {
        debug_assert_eq!(sample.image.width(), side);
        debug_assert_eq!(sample.image.height(), side);
        data.extend_from_slice(sample.image.pixels());
    }
    save_idx_images(
        images_path,
        &IdxImages {
            count: rows.len(),
            height: side,
            width: side,
            data,
        },
    )?;

    let mut csv = Vec::new();
    writeln!(csv, "id,label,length,omega,connection_type,writer_ids")?;
    for (id, s) in rows {
        let omega = s
            .omega
            .map(|o| o.value().to_string())
            .unwrap_or_default();
        let writers: Vec<String> = s.writer_ids.iter().map(|w| w.to_string()).collect();
        writeln!(
            csv,
            "{id},{label},{length},{omega},{ct},{writers}",
            label = s.label,
            length = s.length,
            ct = s.connection_type,
            writers = writers.join("|")
        )?;
    }
    fs::write(metadata_path, csv)?;
    Ok(())
}

/// Parse one split's metadata CSV.
pub fn read_metadata(path: &Path) -> Result<Vec<MetadataRow>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "id,label,length,omega,connection_type,writer_ids")) => {}
        Some((_, other)) => {
            return Err(Error::format(0, format!("unexpected CSV header {other:?}")))
        }
        None => return Err(Error::format(0, "metadata CSV is empty")),
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::format(
                lineno as u64,
                format!("line {lineno}: expected 6 fields, got {}", fields.len()),
            ));
        }
        let length: usize = fields[2].parse().map_err(|e| {
            Error::format(lineno as u64, format!("line {lineno}: bad length: {e}"))
        })?;
        let omega = if fields[3].is_empty() {
            None
        } else {
            let v: u16 = fields[3].parse().map_err(|e| {
                Error::format(lineno as u64, format!("line {lineno}: bad omega: {e}"))
            })?;
            Some(OmegaCode::new(v)?)
        };
        let writer_ids = if fields[5].is_empty() {
            Vec::new()
        } else {
            fields[5]
                .split('|')
                .map(|w| {
                    w.parse::<u32>().map_err(|e| {
                        Error::format(
                            lineno as u64,
                            format!("line {lineno}: bad writer id {w:?}: {e}"),
                        )
                    })
                })
                .collect::<Result<_>>()?
        };
        rows.push(MetadataRow {
            id: fields[0].to_string(),
            label: fields[1].to_string(),
            length,
            omega,
            connection_type: ConnectionType::parse(fields[4])?,
            writer_ids,
        });
    }
    Ok(rows)
}

/// One metadata CSV row.
#[derive(Clone, Debug, PartialEq)]
pub struct MetadataRow {
    pub id: String,
    pub label: String,
    pub length: usize,
    pub omega: Option<OmegaCode>,
    pub connection_type: ConnectionType,
    pub writer_ids: Vec<u32>,
}

/// Load a generated split back into memory.
pub fn load_split(manifest: &DatasetManifest) -> Result<Vec<DatasetRecord>> {
    load_split_files(&manifest.images_path, &manifest.metadata_path)
}

pub fn load_split_files(images_path: &Path, metadata_path: &Path) -> Result<Vec<DatasetRecord>> {
    let images = load_idx_images(images_path)?;
    let rows = read_metadata(metadata_path)?;
    if images.count != rows.len() {
        return Err(Error::format(
            0,
            format!(
                "image container holds {} records but metadata holds {}",
                images.count,
                rows.len()
            ),
        ));
    }
    let mut records = Vec::with_capacity(rows.len());
    for (i, row) in rows.into_iter().enumerate() {
        let image =
            GrayImage::from_pixels(images.width, images.height, images.record(i).to_vec())?;
        records.push(DatasetRecord {
            id: row.id,
            sample: LabeledSample {
                image,
                label: row.label,
                length: row.length,
                connection_type: row.connection_type,
                writer_ids: row.writer_ids,
                omega: row.omega,
            },
        });
    }
    Ok(records)
}

/// Read back `manifest.json` from a generated dataset directory.
pub fn load_manifests(dir: &Path) -> Result<Vec<DatasetManifest>> {
    let text = fs::read_to_string(dir.join("manifest.json"))?;
    Ok(serde_json::from_str(&text)?)
}
