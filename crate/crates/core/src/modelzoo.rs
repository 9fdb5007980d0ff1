//! Concrete architectures for the length classifier and the digit
//! classifiers, plus the unified class-index codec.
//!
//! The class index packs string content and length into one value:
//! 0..=9 are the isolated digits, 10..=109 the 100 pairs, 110..=1109 the
//! 1000 triples. Leading zeros are significant: "0", "00", and "000" are
//! three distinct classes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nncore::{LayerSpec, NetworkSpec};

/// Total number of packed classes: 10 isolated + 100 pairs + 1000 triples.
pub const OMEGA_CLASSES: usize = 1110;

/// Network input side; every classifier consumes 64x64 single-channel
/// images.
pub const INPUT_SIDE: usize = 64;

/// The five classifiers of the system.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    /// Predicts how many digits (1-4) the component contains.
    Length,
    /// 10 classes, isolated digits.
    C1,
    /// 100 classes, touching pairs.
    C2,
    /// 1000 classes, touching triples.
    C3,
    /// 1110 classes, the end-to-end classifier.
    C1110,
}

impl ClassifierKind {
    pub fn n_classes(self) -> usize {
        match self {
            ClassifierKind::Length => 4,
            ClassifierKind::C1 => 10,
            ClassifierKind::C2 => 100,
            ClassifierKind::C3 => 1000,
            ClassifierKind::C1110 => OMEGA_CLASSES,
        }
    }

    pub fn all() -> [ClassifierKind; 5] {
        [
            ClassifierKind::Length,
            ClassifierKind::C1,
            ClassifierKind::C2,
            ClassifierKind::C3,
            ClassifierKind::C1110,
        ]
    }

    /// Stable lowercase name used for model files and CLI flags.
    pub fn name(self) -> &'static str {
        match self {
            ClassifierKind::Length => "length",
            ClassifierKind::C1 => "c1",
            ClassifierKind::C2 => "c2",
            ClassifierKind::C3 => "c3",
            ClassifierKind::C1110 => "c1110",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "length" => Ok(ClassifierKind::Length),
            "c1" => Ok(ClassifierKind::C1),
            "c2" => Ok(ClassifierKind::C2),
            "c3" => Ok(ClassifierKind::C3),
            "c1110" => Ok(ClassifierKind::C1110),
            other => Err(Error::Config(format!("unknown classifier kind '{other}'"))),
        }
    }

    /// The digit classifier responsible for strings of the given length.
    pub fn for_length(length: usize) -> Option<Self> {
        match length {
            1 => Some(ClassifierKind::C1),
            2 => Some(ClassifierKind::C2),
            3 => Some(ClassifierKind::C3),
            _ => None,
        }
    }
}

impl std::fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Build the network description for a classifier: three conv + max-pool
/// stages, one hidden fully-connected layer, then the class layer.
///
/// Stages: conv 5x5 @ 32 / pool 2 -> conv 5x5 @ 64 / pool 2 ->
/// conv 3x3 @ 128 / pool 2 -> FC 512 -> FC n_classes -> softmax,
/// on a (1, 64, 64) input.
pub fn build_spec(kind: ClassifierKind) -> NetworkSpec {
    NetworkSpec {
        input_shape: (1, INPUT_SIDE, INPUT_SIDE),
        layers: vec![
            LayerSpec::Conv {
                out_channels: 32,
                kernel: (5, 5),
                stride: 1,
            },
            LayerSpec::Relu,
            LayerSpec::MaxPool {
                kernel: (2, 2),
                stride: 2,
            },
            LayerSpec::Conv {
                out_channels: 64,
                kernel: (5, 5),
                stride: 1,
            },
            LayerSpec::Relu,
            LayerSpec::MaxPool {
                kernel: (2, 2),
                stride: 2,
            },
            LayerSpec::Conv {
                out_channels: 128,
                kernel: (3, 3),
                stride: 1,
            },
            LayerSpec::Relu,
            LayerSpec::MaxPool {
                kernel: (2, 2),
                stride: 2,
            },
            LayerSpec::FullyConnected { out_features: 512 },
            LayerSpec::Relu,
            LayerSpec::FullyConnected {
                out_features: kind.n_classes(),
            },
            LayerSpec::Softmax,
        ],
        n_classes: kind.n_classes(),
    }
}

/// A packed class index in [0, 1110).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OmegaCode(u16);

impl OmegaCode {
    pub fn new(value: u16) -> Result<Self> {
        if (value as usize) < OMEGA_CLASSES {
            Ok(OmegaCode(value))
        } else {
            Err(Error::Usage(format!(
                "class index {value} outside [0, {OMEGA_CLASSES})"
            )))
        }
    }

    pub fn value(self) -> u16 {
        self.0
    }

    /// String length encoded in the band: 1, 2, or 3.
    pub fn length(self) -> usize {
        match self.0 {
            0..=9 => 1,
            10..=109 => 2,
            _ => 3,
        }
    }

    /// Half-open class range for the given string length.
    pub fn band(length: usize) -> Result<std::ops::Range<usize>> {
        match length {
            1 => Ok(0..10),
            2 => Ok(10..110),
            3 => Ok(110..OMEGA_CLASSES),
            other => Err(Error::Usage(format!(
                "no class band for strings of length {other}"
            ))),
        }
    }
}

/// Pack a 1-3 digit string: length 1 maps to its value, length 2 to
/// 10 + value, length 3 to 110 + value, with leading zeros preserved by
/// the band ("07" packs as 10 + 7).
pub fn encode_omega(label: &str) -> Result<OmegaCode> {
    if label.is_empty() || label.len() > 3 {
        return Err(Error::Usage(format!(
            "only 1-3 digit strings have a class index, got {:?} of length {}",
            label,
            label.len()
        )));
    }
    if !label.bytes().all(|b| b.is_ascii_digit()) {
        return Err(Error::Usage(format!("label {label:?} is not all digits")));
    }
    let value: u16 = label.parse().map_err(|_| {
        Error::Usage(format!("label {label:?} does not parse as a number"))
    })?;
    let offset = match label.len() {
        1 => 0,
        2 => 10,
        _ => 110,
    };
    Ok(OmegaCode(offset + value))
}

/// Exact inverse of `encode_omega`; the band restores leading zeros.
pub fn decode_omega(code: OmegaCode) -> String {
    let v = code.0;
    match v {
        0..=9 => format!("{v}"),
        10..=109 => format!("{:02}", v - 10),
        _ => format!("{:03}", v - 110),
    }
}

/// Map a packed class onto the local output index of a digit classifier:
/// the C1 band maps to 0-9, C2 to 0-99, C3 to 0-999, and C1110 is the
/// identity. Errors if the class lies outside the classifier's band.
pub fn class_to_local(kind: ClassifierKind, code: OmegaCode) -> Result<usize> {
    let v = code.0 as usize;
    match kind {
        ClassifierKind::C1110 => Ok(v),
        ClassifierKind::C1 | ClassifierKind::C2 | ClassifierKind::C3 => {
            let length = match kind {
                ClassifierKind::C1 => 1,
                ClassifierKind::C2 => 2,
                _ => 3,
            };
            let band = OmegaCode::band(length)?;
            if band.contains(&v) {
                Ok(v - band.start)
            } else {
                Err(Error::Usage(format!(
                    "class {v} is outside the {kind} band {band:?}"
                )))
            }
        }
        ClassifierKind::Length => Err(Error::Usage(
            "the length classifier has no digit-class band".into(),
        )),
    }
}

/// Render a digit classifier's local output index as its string, padded to
/// the classifier's length ("05" for class 5 of the pair classifier).
pub fn local_to_label(length: usize, local: usize) -> Result<String> {
    let band = OmegaCode::band(length)?;
    if local >= band.len() {
        return Err(Error::Usage(format!(
            "local class {local} out of range for length {length}"
        )));
    }
    Ok(match length {
        1 => format!("{local}"),
        2 => format!("{local:02}"),
        _ => format!("{local:03}"),
    })
}
