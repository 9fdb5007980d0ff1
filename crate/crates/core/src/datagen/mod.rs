//! Synthetic touching-string datasets: corpus ingestion, glyph
//! concatenation, connection-type tagging, and writer-disjoint splits.

pub mod corpus;
pub mod dataset;
pub mod glyph;
pub mod idx;
pub mod image;
pub mod synth;

pub use dataset::{
    fit_to_canvas, generate_dataset, load_manifests, load_split, load_split_files, read_metadata,
    resize_to_input, stack_inputs, DatasetManifest, DatasetRecord, GenConfig, LengthCounts,
    MetadataRow, Split,
};
pub use glyph::{load_idx, load_idx_with_writers, normalize_glyph, DigitGlyph};
pub use image::{GrayImage, InkConvention};
pub use synth::{
    build_single_sample, build_string_sample, classify_connection_type, concat_touching,
    ConcatParams, ConnectionType, LabeledSample, Mask, TouchingPair,
};
