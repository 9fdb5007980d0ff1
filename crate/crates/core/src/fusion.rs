//! The three recognition pipelines and the threshold fusion rule they
//! share.
//!
//! The rule reads the length classifier's two best guesses: when its top
//! confidence reaches the threshold T, the classifier for that length
//! answers alone; below T, the top-1 and top-2 length candidates compete
//! and the higher raw classifier score wins. Length-4 candidates carry no
//! digit classifier and contribute rejection instead.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::ConnectionType;
use crate::error::{Error, Result};
use crate::modelzoo::{local_to_label, ClassifierKind, OmegaCode};
use crate::nncore::{predict, topk, NetworkSpec, NetworkState, Tensor};

/// Which recognition strategy produced a decision.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    DynamicSelection,
    EndToEnd,
    EndToEndLength,
}

impl Pipeline {
    pub fn name(self) -> &'static str {
        match self {
            Pipeline::DynamicSelection => "dynamic",
            Pipeline::EndToEnd => "end-to-end",
            Pipeline::EndToEndLength => "end-to-end-l",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "dynamic" => Ok(Pipeline::DynamicSelection),
            "end-to-end" => Ok(Pipeline::EndToEnd),
            "end-to-end-l" => Ok(Pipeline::EndToEndLength),
            other => Err(Error::Config(format!("unknown pipeline '{other}'"))),
        }
    }

    pub fn all() -> [Pipeline; 3] {
        [
            Pipeline::DynamicSelection,
            Pipeline::EndToEnd,
            Pipeline::EndToEndLength,
        ]
    }
}

impl std::fmt::Display for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Fusion knobs. The threshold default follows the published setting of
/// 0.95; band renormalization is an ablation flag and defaults to the raw
/// within-band maxima.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct FusionConfig {
    pub threshold: f32,
    pub renormalize_bands: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            threshold: 0.95,
            renormalize_bands: false,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::Config(format!(
                "fusion threshold must be in (0,1], got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// The length classifier's reading of one input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LengthVerdict {
    /// Probabilities over lengths 1-4.
    pub probs: Vec<f32>,
    /// (length, score) of the best guess.
    pub top1: (usize, f32),
    /// (length, score) of the runner-up.
    pub top2: (usize, f32),
}

impl LengthVerdict {
    pub fn from_probs(probs: Vec<f32>) -> Result<Self> {
        if probs.len() != 4 {
            return Err(Error::Usage(format!(
                "length verdict needs 4 probabilities, got {}",
                probs.len()
            )));
        }
        if probs.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numeric("length probabilities must be finite".into()));
        }
        let ranked = topk(&probs, 2);
        Ok(LengthVerdict {
            top1: (ranked[0].0 + 1, ranked[0].1),
            top2: (ranked[1].0 + 1, ranked[1].1),
            probs,
        })
    }
}

/// Per-length classifier outputs available to the fusion rule:
/// (local class, score) for lengths 1-3.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LengthScores {
    slots: [Option<(usize, f32)>; 3],
}

impl LengthScores {
    pub fn set(&mut self, length: usize, local_class: usize, score: f32) -> Result<()> {
        if !(1..=3).contains(&length) {
            return Err(Error::Usage(format!(
                "digit classifiers exist for lengths 1-3, not {length}"
            )));
        }
        self.slots[length - 1] = Some((local_class, score));
        Ok(())
    }

    pub fn get(&self, length: usize) -> Option<(usize, f32)> {
        if (1..=3).contains(&length) {
            self.slots[length - 1]
        } else {
            None
        }
    }
}

/// Outcome of the fusion rule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FusedChoice {
    Accept {
        length: usize,
        local_class: usize,
        score: f32,
    },
    Reject,
}

/// The threshold fusion rule over the length classifier's top-2 outputs.
///
/// top1 score at or above T: answer with the top1-length classifier
/// (length 4 rejects). Below T: the top1- and top2-length candidates
/// compete on raw classifier score, ties favoring top1; a length-4
/// candidate contributes rejection, so the other candidate answers, and
/// only an empty candidate set rejects.
pub fn fuse_eq1(
    verdict: &LengthVerdict,
    scores: &LengthScores,
    cfg: &FusionConfig,
) -> Result<FusedChoice> {
    cfg.validate()?;
    let (l1, s1) = verdict.top1;
    let (l2, _) = verdict.top2;
    let need = |length: usize| -> Result<(usize, f32)> {
        scores.get(length).ok_or_else(|| {
            Error::Usage(format!(
                "no classifier output for required length {length}"
            ))
        })
    };
    if s1 >= cfg.threshold {
        if l1 == 4 {
            return Ok(FusedChoice::Reject);
        }
        let (local_class, score) = need(l1)?;
        return Ok(FusedChoice::Accept {
            length: l1,
            local_class,
            score,
        });
    }
    let mut best: Option<FusedChoice> = None;
    for length in [l1, l2] {
        if length == 4 {
            continue;
        }
        let (local_class, score) = need(length)?;
        let better = match best {
            None => true,
            Some(FusedChoice::Accept { score: s, .. }) => score > s,
            Some(FusedChoice::Reject) => true,
        };
        if better {
            best = Some(FusedChoice::Accept {
                length,
                local_class,
                score,
            });
        }
    }
    Ok(best.unwrap_or(FusedChoice::Reject))
}

/// Source of classifier probability vectors for one input. Implementations
/// may compute lazily; pipelines only ask for the classifiers the fusion
/// rule demands.
pub trait ClassifierBank {
    fn probs(&mut self, kind: ClassifierKind) -> Result<Vec<f32>>;
}

/// One candidate answer a pipeline computed along the way.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub length: usize,
    pub label: String,
    pub score: f32,
}

/// A pipeline's answer for one input.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FusionDecision {
    pub pipeline: Pipeline,
    /// `None` is a rejection.
    pub predicted: Option<String>,
    pub omega: Option<OmegaCode>,
    pub used_classifiers: Vec<ClassifierKind>,
    pub length_verdict: Option<LengthVerdict>,
    pub winning_score: f32,
    /// Every per-length answer that was actually computed.
    pub candidates: Vec<Candidate>,
}

impl FusionDecision {
    pub fn is_reject(&self) -> bool {
        self.predicted.is_none()
    }

    /// Length of the fused answer, if any.
    pub fn fused_length(&self) -> Option<usize> {
        self.predicted.as_ref().map(|p| p.len())
    }
}

fn argmax_candidate(
    bank: &mut dyn ClassifierBank,
    length: usize,
) -> Result<(usize, f32, Candidate)> {
    let kind = ClassifierKind::for_length(length)
        .ok_or_else(|| Error::Usage(format!("no digit classifier for length {length}")))?;
    let probs = bank.probs(kind)?;
    if probs.len() != kind.n_classes() {
        return Err(Error::Usage(format!(
            "{kind} produced {} probabilities for {} classes",
            probs.len(),
            kind.n_classes()
        )));
    }
    let (local, score) = topk(&probs, 1)[0];
    let label = local_to_label(length, local)?;
    Ok((
        local,
        score,
        Candidate {
            length,
            label,
            score,
        },
    ))
}

fn accept_decision(
    pipeline: Pipeline,
    choice: FusedChoice,
    verdict: Option<LengthVerdict>,
    used: Vec<ClassifierKind>,
    candidates: Vec<Candidate>,
) -> Result<FusionDecision> {
    match choice {
        FusedChoice::Accept {
            length,
            local_class,
            score,
        } => {
            let label = local_to_label(length, local_class)?;
            let omega = crate::modelzoo::encode_omega(&label)?;
            Ok(FusionDecision {
                pipeline,
                predicted: Some(label),
                omega: Some(omega),
                used_classifiers: used,
                winning_score: score,
                length_verdict: verdict,
                candidates,
            })
        }
        FusedChoice::Reject => {
            let winning_score = verdict.as_ref().map(|v| v.top1.1).unwrap_or(0.0);
            Ok(FusionDecision {
                pipeline,
                predicted: None,
                omega: None,
                used_classifiers: used,
                winning_score,
                length_verdict: verdict,
                candidates,
            })
        }
    }
}

/// Dynamic selection: the length verdict decides which of the per-length
/// digit classifiers to invoke (one at or above T, two below), then the
/// fusion rule picks the answer.
pub fn pipeline_dynamic(
    bank: &mut dyn ClassifierBank,
    cfg: &FusionConfig,
) -> Result<FusionDecision> {
    cfg.validate()?;
    let verdict = LengthVerdict::from_probs(bank.probs(ClassifierKind::Length)?)?;
    let mut needed: Vec<usize> = Vec::new();
    if verdict.top1.1 >= cfg.threshold {
        needed.push(verdict.top1.0);
    } else {
        needed.push(verdict.top1.0);
        needed.push(verdict.top2.0);
    }
    let mut used = vec![ClassifierKind::Length];
    let mut scores = LengthScores::default();
    let mut candidates = Vec::new();
    for &length in &needed {
        if length == 4 {
            continue;
        }
        let (local, score, candidate) = argmax_candidate(bank, length)?;
        scores.set(length, local, score)?;
        candidates.push(candidate);
        used.push(ClassifierKind::for_length(length).expect("length <= 3"));
    }
    let choice = fuse_eq1(&verdict, &scores, cfg)?;
    accept_decision(
        Pipeline::DynamicSelection,
        choice,
        Some(verdict),
        used,
        candidates,
    )
}

/// Within-band maxima of the 1110-way probability vector, as
/// (local class, score) per length. Raw scores by default; the
/// renormalized variant divides by the band mass.
fn band_maxima(probs: &[f32], renormalize: bool) -> Result<[(usize, f32); 3]> {
    if probs.len() != crate::modelzoo::OMEGA_CLASSES {
        return Err(Error::Usage(format!(
            "expected {} end-to-end probabilities, got {}",
            crate::modelzoo::OMEGA_CLASSES,
            probs.len()
        )));
    }
    let mut out = [(0usize, 0.0f32); 3];
    for length in 1..=3usize {
        let band = OmegaCode::band(length)?;
        let slice = &probs[band.clone()];
        let (local, mut score) = topk(slice, 1)[0];
        if renormalize {
            let mass: f32 = slice.iter().sum();
            if mass > 0.0 {
                score /= mass;
            }
        }
        out[length - 1] = (local, score);
    }
    Ok(out)
}

/// End-to-end: one call to the 1110-class classifier, its argmax decoded
/// into a string. Never rejects.
pub fn pipeline_end_to_end(bank: &mut dyn ClassifierBank) -> Result<FusionDecision> {
    let probs = bank.probs(ClassifierKind::C1110)?;
    if probs.len() != crate::modelzoo::OMEGA_CLASSES {
        return Err(Error::Usage(format!(
            "expected {} end-to-end probabilities, got {}",
            crate::modelzoo::OMEGA_CLASSES,
            probs.len()
        )));
    }
    let (class, score) = topk(&probs, 1)[0];
    let omega = OmegaCode::new(class as u16)?;
    let label = crate::modelzoo::decode_omega(omega);
    let mut candidates = Vec::new();
    for (i, &(local, band_score)) in band_maxima(&probs, false)?.iter().enumerate() {
        candidates.push(Candidate {
            length: i + 1,
            label: local_to_label(i + 1, local)?,
            score: band_score,
        });
    }
    Ok(FusionDecision {
        pipeline: Pipeline::EndToEnd,
        predicted: Some(label),
        omega: Some(omega),
        used_classifiers: vec![ClassifierKind::C1110],
        length_verdict: None,
        winning_score: score,
        candidates,
    })
}

/// End-to-end combined with the length classifier: the 1110-way output is
/// partitioned into its three length bands, whose maxima play the role of
/// the per-length classifiers inside the fusion rule.
pub fn pipeline_end_to_end_l(
    bank: &mut dyn ClassifierBank,
    cfg: &FusionConfig,
) -> Result<FusionDecision> {
    cfg.validate()?;
    let verdict = LengthVerdict::from_probs(bank.probs(ClassifierKind::Length)?)?;
    let probs = bank.probs(ClassifierKind::C1110)?;
    let maxima = band_maxima(&probs, cfg.renormalize_bands)?;
    let mut scores = LengthScores::default();
    let mut candidates = Vec::new();
    for (i, &(local, score)) in maxima.iter().enumerate() {
        let length = i + 1;
        scores.set(length, local, score)?;
        candidates.push(Candidate {
            length,
            label: local_to_label(length, local)?,
            score,
        });
    }
    let choice = fuse_eq1(&verdict, &scores, cfg)?;
    accept_decision(
        Pipeline::EndToEndLength,
        choice,
        Some(verdict),
        vec![ClassifierKind::Length, ClassifierKind::C1110],
        candidates,
    )
}

/// A set of trained models keyed by classifier kind.
#[derive(Default)]
pub struct ModelSet {
    models: BTreeMap<ClassifierKind, (NetworkSpec, NetworkState<f32>)>,
}

impl ModelSet {
    pub fn new() -> Self {
        ModelSet::default()
    }

    pub fn insert(&mut self, kind: ClassifierKind, spec: NetworkSpec, state: NetworkState<f32>) {
        self.models.insert(kind, (spec, state));
    }

    pub fn contains(&self, kind: ClassifierKind) -> bool {
        self.models.contains_key(&kind)
    }

    pub fn get(&self, kind: ClassifierKind) -> Option<&(NetworkSpec, NetworkState<f32>)> {
        self.models.get(&kind)
    }
}

/// Bank backed by trained CNNs, evaluating one input tensor lazily with a
/// per-kind cache.
pub struct ModelBank<'a> {
    models: &'a ModelSet,
    input: Tensor<f32>,
    cache: BTreeMap<ClassifierKind, Vec<f32>>,
}

impl<'a> ModelBank<'a> {
    /// `input` is one sample of shape (1, 1, 64, 64).
    pub fn new(models: &'a ModelSet, input: Tensor<f32>) -> Self {
        ModelBank {
            models,
            input,
            cache: BTreeMap::new(),
        }
    }
}

impl ClassifierBank for ModelBank<'_> {
    fn probs(&mut self, kind: ClassifierKind) -> Result<Vec<f32>> {
        if let Some(hit) = self.cache.get(&kind) {
            return Ok(hit.clone());
        }
        let (spec, state) = self.models.get(kind).ok_or_else(|| {
            Error::Usage(format!("no trained model available for classifier {kind}"))
        })?;
        let probs = predict(state, spec, &self.input)?;
        let row = probs.row(0).to_vec();
        self.cache.insert(kind, row.clone());
        Ok(row)
    }
}

/// One line of the decision log: everything evaluation needs downstream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub id: String,
    pub pipeline: Pipeline,
    /// `null` is a rejection.
    pub predicted: Option<String>,
    pub truth: String,
    pub true_length: usize,
    pub connection_type: ConnectionType,
    pub omega: Option<u16>,
    pub length_scores: Option<Vec<f32>>,
    pub used_classifiers: Vec<String>,
    pub winning_score: f32,
    pub candidates: Vec<Candidate>,
}

impl DecisionRecord {
    pub fn new(
        id: impl Into<String>,
        decision: &FusionDecision,
        truth: impl Into<String>,
        connection_type: ConnectionType,
    ) -> Self {
        let truth = truth.into();
        DecisionRecord {
            id: id.into(),
            pipeline: decision.pipeline,
            predicted: decision.predicted.clone(),
            true_length: truth.len(),
            truth,
            connection_type,
            omega: decision.omega.map(|o| o.value()),
            length_scores: decision.length_verdict.as_ref().map(|v| v.probs.clone()),
            used_classifiers: decision
                .used_classifiers
                .iter()
                .map(|k| k.name().to_string())
                .collect(),
            winning_score: decision.winning_score,
            candidates: decision.candidates.clone(),
        }
    }

    pub fn is_correct(&self) -> bool {
        self.predicted.as_deref() == Some(self.truth.as_str())
    }

    pub fn fused_length(&self) -> Option<usize> {
        self.predicted.as_ref().map(|p| p.len())
    }
}

/// Write one JSON record per line.
pub fn write_decisions(path: &Path, records: &[DecisionRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_decisions(path: &Path) -> Result<Vec<DecisionRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}
