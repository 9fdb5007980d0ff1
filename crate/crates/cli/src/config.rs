//! Experiment configuration: one JSON document plus a seed reproduces a
//! whole experiment.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use numstr_core::datagen::GenConfig;
use numstr_core::error::{Error, Result};
use numstr_core::fusion::{FusionConfig, Pipeline};
use numstr_core::modelzoo::ClassifierKind;
use numstr_core::nncore::TrainConfig;

/// Where the isolated-digit corpus comes from.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CorpusSource {
    pub images: PathBuf,
    pub labels: PathBuf,
    /// Optional writer-id sidecar (one integer per line).
    #[serde(default)]
    pub writers: Option<PathBuf>,
    /// When set and the corpus files are missing, synthesize this many
    /// digits at the configured paths before generating.
    #[serde(default)]
    pub synthesize: Option<usize>,
}

/// Training section for one classifier.
#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct KindTrain {
    pub config: TrainConfig,
    /// Cap on the number of samples taken per string length when
    /// assembling this classifier's training and validation sets.
    pub per_length_cap: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Master seed; overrides the generation seed and every per-kind
    /// training seed.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub corpus: CorpusSource,
    pub gen: GenConfig,
    /// Per-classifier training settings, keyed by kind name.
    pub train: BTreeMap<String, KindTrain>,
    pub fusion: FusionConfig,
    /// Pipelines to evaluate, by name.
    pub pipelines: Vec<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 42,
            out_dir: PathBuf::from("runs/default"),
            corpus: CorpusSource {
                images: PathBuf::from("data/digits.images.idx"),
                labels: PathBuf::from("data/digits.labels.idx"),
                writers: None,
                synthesize: None,
            },
            gen: GenConfig::default(),
            train: BTreeMap::new(),
            fusion: FusionConfig::default(),
            pipelines: vec![
                "dynamic".into(),
                "end-to-end".into(),
                "end-to-end-l".into(),
            ],
        }
    }
}

impl ExperimentConfig {
    /// Parse and validate, applying an optional seed override. Validation
    /// rejects every invariant violation before any work starts.
    pub fn load(path: &Path, seed_override: Option<u64>) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("config {} is invalid: {e}", path.display())))?;
        if let Some(seed) = seed_override {
            cfg.seed = seed;
        }
        cfg.gen.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.gen.validate()?;
        self.fusion.validate()?;
        for name in &self.pipelines {
            Pipeline::parse(name)?;
        }
        for (name, kind_train) in &self.train {
            ClassifierKind::parse(name)?;
            kind_train.config.validate()?;
        }
        if self.corpus.synthesize.is_none() {
            for (what, path) in [
                ("corpus images", &self.corpus.images),
                ("corpus labels", &self.corpus.labels),
            ] {
                if !path.exists() {
                    return Err(Error::Config(format!(
                        "{what} path {} does not exist",
                        path.display()
                    )));
                }
            }
        }
        if let Some(writers) = &self.corpus.writers {
            if !writers.exists() {
                return Err(Error::Config(format!(
                    "writer sidecar {} does not exist",
                    writers.display()
                )));
            }
        }
        Ok(())
    }

    /// Training settings for one classifier: the configured section or the
    /// defaults, always re-keyed to the master seed so two kinds never
    /// share an init stream.
    pub fn train_for(&self, kind: ClassifierKind) -> KindTrain {
        let mut section = self.train.get(kind.name()).cloned().unwrap_or_default();
        section.config.seed =
            numstr_core::nncore::rng::mix_stream(self.seed, &[0x7121, kind.n_classes() as u64]);
        section
    }

    pub fn data_dir(&self) -> PathBuf {
        self.out_dir.join("data")
    }

    pub fn models_dir(&self) -> PathBuf {
        self.out_dir.join("models")
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.out_dir.join("eval")
    }

    pub fn model_path(&self, kind: ClassifierKind) -> PathBuf {
        self.models_dir().join(format!("{}.nstr", kind.name()))
    }
}
