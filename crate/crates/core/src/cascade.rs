//! End-to-end system: optional segregation, MFCC, per-(speaker, emotion) GMM
//! tags, and a tag-gated CNN that makes the speaker decision.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::{AudioClip, Split};
use crate::casa::{segregate, CasaConfig};
use crate::cnn::{
    classify, extract_patch, gate_with_tags, init_cnn, sha256_hex, train_from, utterance_patches, CnnModel, CnnSpec,
    CnnTrainConfig, ConvBlock, Example, GatingConfig,
};
use crate::dataset::LabeledClip;
use crate::error::{Error, Result};
use crate::eval::{evaluate, wilcoxon_signed_rank, EvalReport, TrialRecord, WilcoxonResult, DEFAULT_ALPHA};
use crate::gmm::{argmax_label, tag_likelihood_vector, to_precise_json, train_bank, GmmConfig, LikelihoodVector, TagBank, TagKey};
use crate::mfcc::{mfcc_features, MfccConfig};

pub const SYSTEM_FORMAT_VERSION: u32 = 1;
pub const SYSTEM_FILE: &str = "system.json";
pub const BANK_FILE: &str = "gmm_bank.json";
pub const CNN_STEM: &str = "cnn";

/// CNN shape apart from the class count, which follows the training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CnnArchitecture {
    pub context_frames: usize,
    pub blocks: Vec<ConvBlock>,
    pub fc: Vec<usize>,
    /// Concatenate the utterance's tag likelihoods into the fc input.
    pub tag_inputs: bool,
    /// Frame hop between training patches; `None` uses the inference tiling.
    pub train_hop: Option<usize>,
}

impl Default for CnnArchitecture {
    fn default() -> Self {
        let d = CnnSpec::desk_default(2);
        Self {
            context_frames: d.input_width,
            blocks: d.blocks,
            fc: d.fc,
            tag_inputs: false,
            train_hop: Some(2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub casa: CasaConfig,
    /// Segregate training clips.
    pub casa_train: bool,
    /// Segregate clips at identification time.
    pub casa_test: bool,
    pub mfcc: MfccConfig,
    pub gmm: GmmConfig,
    pub cnn: CnnArchitecture,
    pub cnn_train: CnnTrainConfig,
    pub gating: GatingConfig,
    pub seed: u64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            casa: CasaConfig::default(),
            casa_train: true,
            casa_test: true,
            mfcc: MfccConfig::default(),
            gmm: GmmConfig::default(),
            cnn: CnnArchitecture::default(),
            cnn_train: CnnTrainConfig::default(),
            gating: GatingConfig::default(),
            seed: 0,
        }
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        self.casa.validate()?;
        self.gmm.validate()?;
        self.gating.validate()?;
        if self.mfcc.n_cepstra == 0 || self.mfcc.n_cepstra > self.mfcc.n_filters {
            return Err(Error::Config("mfcc n_cepstra must be in 1..=n_filters".into()));
        }
        if self.cnn.context_frames == 0 || self.cnn.train_hop == Some(0) {
            return Err(Error::Config("cnn context_frames must be positive".into()));
        }
        Ok(())
    }

    pub fn with_casa(&self, on: bool) -> Self {
        Self {
            casa_train: on,
            casa_test: on,
            ..self.clone()
        }
    }
}

/// Per-dimension standardisation fitted on training frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn fit(frames: &[&Vec<f64>]) -> Result<Self> {
        let d = frames.first().map(|f| f.len()).ok_or_else(|| Error::Data("no frames".into()))?;
        let n = frames.len() as f64;
        let mut mean = vec![0.0; d];
        for f in frames {
            mean.iter_mut().zip(f.iter()).for_each(|(m, v)| *m += v / n);
        }
        let mut var = vec![0.0; d];
        for f in frames {
            var.iter_mut().zip(f.iter().zip(&mean)).for_each(|(s, (v, m))| *s += (v - m).powi(2) / n);
        }
        let std = var.into_iter().map(|v| v.sqrt().max(1e-8)).collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, frames: &[Vec<f64>]) -> Vec<Vec<f64>> {
        frames
            .iter()
            .map(|f| f.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s).collect())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// SHA-256 of the training manifest, or of the clip labels when trained
    /// from memory.
    pub manifest_sha256: String,
    pub seed: u64,
    pub n_train_clips: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    pub config: SystemConfig,
    pub normalizer: Normalizer,
    pub bank: TagBank,
    /// Absent when only one speaker was trained.
    pub cnn: Option<CnnModel>,
    /// CNN class order.
    pub speakers: Vec<String>,
    pub version: String,
    pub provenance: Provenance,
}

impl SystemModel {
    pub fn validate(&self) -> Result<()> {
        if self.bank.dim != self.config.mfcc.dim() {
            return Err(Error::CorruptModel(format!(
                "tag bank dimension {} differs from feature dimension {}",
                self.bank.dim,
                self.config.mfcc.dim()
            )));
        }
        if self.bank.speakers() != self.speakers {
            return Err(Error::CorruptModel("bank speakers differ from class list".into()));
        }
        match &self.cnn {
            Some(c) if c.spec.n_classes != self.speakers.len() => Err(Error::CorruptModel(format!(
                "network has {} classes for {} speakers",
                c.spec.n_classes,
                self.speakers.len()
            ))),
            None if self.speakers.len() > 1 => Err(Error::CorruptModel("network missing".into())),
            _ => Ok(()),
        }
    }

    fn tag_aux(&self, lv: &LikelihoodVector) -> Vec<f64> {
        if self.config.cnn.tag_inputs {
            tag_aux_vector(lv)
        } else {
            Vec::new()
        }
    }

    /// Per-frame average log-likelihood of each class's best tag, in class
    /// order.
    fn class_scores(&self, lv: &LikelihoodVector) -> Vec<f64> {
        let s = lv.speaker_scores();
        let t = lv.n_frames as f64;
        self.speakers.iter().map(|sp| s[sp] / t).collect()
    }
}

/// Tag likelihoods centred on their maximum and scaled to unit-ish range.
fn tag_aux_vector(lv: &LikelihoodVector) -> Vec<f64> {
    let max = lv.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    lv.values.iter().map(|v| ((v - max) / 10.0).max(-5.0)).collect()
}

/// Patches every `hop` frames plus an end-aligned one.
fn training_patches(frames: &[Vec<f64>], spec: &CnnSpec, hop: usize) -> Result<Vec<Vec<f64>>> {
    let w = spec.input_width;
    let mut starts: Vec<usize> = (0..=frames.len().saturating_sub(w)).step_by(hop).collect();
    if frames.len() > w && starts.last() != Some(&(frames.len() - w)) {
        starts.push(frames.len() - w);
    }
    starts.into_iter().map(|s| extract_patch(frames, s, spec)).collect()
}

fn frames_for(clip: &AudioClip, use_casa: bool, config: &SystemConfig) -> Result<Vec<Vec<f64>>> {
    let clip = if use_casa {
        segregate(clip, &config.casa)?.0
    } else {
        clip.clone()
    };
    Ok(mfcc_features(&clip, &config.mfcc)?.rows)
}

fn labels_digest(clips: &[&LabeledClip]) -> String {
    let mut s = String::new();
    for c in clips {
        s.push_str(&format!("{}\t{}\t{}\t{}\n", c.id, c.speaker, c.emotion, c.clip.len()));
    }
    sha256_hex(s.as_bytes())
}

/// Trains a system on the train split of `clips`.
pub fn train_system(clips: &[LabeledClip], config: &SystemConfig) -> Result<SystemModel> {
    let train: Vec<&LabeledClip> = clips.iter().filter(|c| c.split == Split::Train).collect();
    let digest = labels_digest(&train);
    train_system_on(&train, config, digest)
}

/// As [`train_system`], recording `manifest_sha256` as provenance.
pub fn train_system_on(train: &[&LabeledClip], config: &SystemConfig, manifest_sha256: String) -> Result<SystemModel> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Data("no training utterances".into()));
    }
    let features: Vec<Option<Vec<Vec<f64>>>> = train
        .par_iter()
        .map(|c| match frames_for(&c.clip, config.casa_train, config) {
            Ok(f) => Ok(Some(f)),
            Err(Error::EmptyFeature) => {
                log::warn!("{}: too short for a feature frame, skipped", c.id);
                Ok(None)
            }
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;

    let mut speakers: Vec<String> = train.iter().map(|c| c.speaker.clone()).collect();
    speakers.sort();
    speakers.dedup();
    for s in &speakers {
        let usable = train
            .iter()
            .zip(&features)
            .any(|(c, f)| &c.speaker == s && f.as_ref().is_some_and(|f| !f.is_empty()));
        if !usable {
            return Err(Error::Data(format!("speaker {s} has no usable training frames")));
        }
    }

    let all: Vec<&Vec<f64>> = features.iter().flatten().flatten().collect();
    let normalizer = Normalizer::fit(&all)?;
    let normalized: Vec<Option<Vec<Vec<f64>>>> =
        features.iter().map(|f| f.as_ref().map(|f| normalizer.apply(f))).collect();

    let mut groups: BTreeMap<TagKey, Vec<Vec<f64>>> = BTreeMap::new();
    for (c, f) in train.iter().zip(&normalized) {
        if let Some(f) = f {
            groups
                .entry(TagKey::new(c.speaker.clone(), c.emotion.clone()))
                .or_default()
                .extend(f.iter().cloned());
        }
    }
    let gmm_cfg = GmmConfig {
        seed: config.gmm.seed.wrapping_add(config.seed),
        ..config.gmm.clone()
    };
    let bank = train_bank(&groups, &gmm_cfg)?;

    let mut model = SystemModel {
        config: config.clone(),
        normalizer,
        bank,
        cnn: None,
        speakers: speakers.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        provenance: Provenance {
            manifest_sha256,
            seed: config.seed,
            n_train_clips: train.len(),
        },
    };

    if speakers.len() > 1 {
        let spec = CnnSpec {
            input_height: config.mfcc.dim(),
            input_width: config.cnn.context_frames,
            blocks: config.cnn.blocks.clone(),
            fc: config.cnn.fc.clone(),
            n_classes: speakers.len(),
            aux_inputs: if config.cnn.tag_inputs { model.bank.len() } else { 0 },
        };
        let mut examples = Vec::new();
        for (c, f) in train.iter().zip(&normalized) {
            let Some(f) = f else { continue };
            let label = speakers.binary_search(&c.speaker).expect("speaker listed");
            let aux = if config.cnn.tag_inputs {
                model.tag_aux(&tag_likelihood_vector(f, &model.bank)?)
            } else {
                Vec::new()
            };
            let patches = match config.cnn.train_hop {
                Some(hop) => training_patches(f, &spec, hop)?,
                None => utterance_patches(f, &spec)?.0,
            };
            for patch in patches {
                examples.push(Example {
                    patch,
                    aux: aux.clone(),
                    label,
                });
            }
        }
        let hyper = CnnTrainConfig {
            seed: config.cnn_train.seed.wrapping_add(config.seed),
            ..config.cnn_train.clone()
        };
        let init = init_cnn(&spec, hyper.seed)?;
        model.cnn = Some(train_from(init, &examples, &hyper)?);
    }
    model.validate()?;
    Ok(model)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionMode {
    GmmOnly,
    CnnOnly,
    GmmCnn,
}

impl DecisionMode {
    pub fn name(self) -> &'static str {
        match self {
            DecisionMode::GmmOnly => "gmm_only",
            DecisionMode::CnnOnly => "cnn_only",
            DecisionMode::GmmCnn => "gmm_cnn",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifyDiagnostics {
    pub mode: DecisionMode,
    pub casa_applied: bool,
    pub n_frames: usize,
    pub likelihoods: LikelihoodVector,
    /// Per-speaker probabilities in class order: gated CNN output, or a
    /// softmax of per-frame GMM scores in GMM-only mode.
    pub speaker_probs: Vec<f64>,
    pub padded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationResult {
    pub speaker: String,
    pub emotion: String,
    pub confidence: f64,
    pub diagnostics: IdentifyDiagnostics,
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Identification with the cascaded decision.
pub fn identify(clip: &AudioClip, model: &SystemModel, use_casa: bool) -> Result<IdentificationResult> {
    identify_with(clip, model, use_casa, DecisionMode::GmmCnn)
}

pub fn identify_with(
    clip: &AudioClip,
    model: &SystemModel,
    use_casa: bool,
    mode: DecisionMode,
) -> Result<IdentificationResult> {
    let frames = frames_for(clip, use_casa, &model.config).map_err(|e| match e {
        Error::EmptyFeature => Error::InputTooShort(format!(
            "{} samples at {} Hz is shorter than one feature frame",
            clip.len(),
            clip.sample_rate()
        )),
        other => other,
    })?;
    decide(&model.normalizer.apply(&frames), model, use_casa, mode)
}

fn decide(frames: &[Vec<f64>], model: &SystemModel, casa_applied: bool, mode: DecisionMode) -> Result<IdentificationResult> {
    let lv = tag_likelihood_vector(frames, &model.bank)?;
    let scores = model.class_scores(&lv);
    let (probs, padded) = match (&model.cnn, mode) {
        (None, _) => (vec![1.0], false),
        (Some(_), DecisionMode::GmmOnly) => (softmax(&scores), false),
        (Some(cnn), _) => {
            let gating = match mode {
                DecisionMode::GmmCnn => model.config.gating.clone(),
                _ => GatingConfig::off(),
            };
            let c = classify(frames, cnn, &model.tag_aux(&lv), Some(&scores), &gating)?;
            (c.probs, c.padded)
        }
    };
    let mut best = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > probs[best] {
            best = i;
        }
    }
    if mode == DecisionMode::GmmOnly && model.cnn.is_some() {
        best = model
            .speakers
            .binary_search(&argmax_label(&lv.speaker_scores()).expect("non-empty bank"))
            .expect("speaker listed");
    }
    let speaker = model.speakers[best].clone();
    let emotion = argmax_label(&lv.emotion_scores_for(&speaker)).expect("speaker has tags");
    Ok(IdentificationResult {
        speaker,
        emotion,
        confidence: probs[best].clamp(0.0, 1.0),
        diagnostics: IdentifyDiagnostics {
            mode,
            casa_applied,
            n_frames: frames.len(),
            likelihoods: lv,
            speaker_probs: probs,
            padded,
        },
    })
}

/// Gating alone over already computed CNN probabilities and GMM scores,
/// exposed for consistency checks.
pub fn gated(probs: &[f64], lv: &LikelihoodVector, model: &SystemModel) -> Result<Vec<f64>> {
    gate_with_tags(probs, &model.class_scores(lv), &model.config.gating)
}

#[derive(Serialize, Deserialize)]
struct SystemDocument {
    format_version: u32,
    version: String,
    config: SystemConfig,
    normalizer: Normalizer,
    speakers: Vec<String>,
    provenance: Provenance,
    /// File name to SHA-256 of its bytes.
    hashes: BTreeMap<String, String>,
}

/// Writes the bundle: system.json, gmm_bank.json and, with more than one
/// speaker, cnn.json and cnn.bin.
pub fn save_system(model: &SystemModel, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut hashes = BTreeMap::new();
    let bank = model.bank.to_json()?;
    hashes.insert(BANK_FILE.to_string(), sha256_hex(&bank));
    let bank_path = dir.join(BANK_FILE);
    fs::write(&bank_path, &bank).map_err(|e| Error::io(&bank_path, e))?;
    if let Some(cnn) = &model.cnn {
        cnn.save(dir, CNN_STEM)?;
        for ext in ["json", "bin"] {
            let name = format!("{CNN_STEM}.{ext}");
            let p = dir.join(&name);
            let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
            hashes.insert(name, sha256_hex(&bytes));
        }
    }
    let doc = SystemDocument {
        format_version: SYSTEM_FORMAT_VERSION,
        version: model.version.clone(),
        config: model.config.clone(),
        normalizer: model.normalizer.clone(),
        speakers: model.speakers.clone(),
        provenance: model.provenance.clone(),
        hashes,
    };
    let p = dir.join(SYSTEM_FILE);
    fs::write(&p, to_precise_json(&doc)?).map_err(|e| Error::io(&p, e))
}

fn read_bundle_file(dir: &Path, name: &str) -> Result<Vec<u8>> {
    let p = dir.join(name);
    fs::read(&p).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::CorruptModel(format!("bundle is missing {name}")),
        _ => Error::io(&p, e),
    })
}

pub fn load_system(dir: impl AsRef<Path>) -> Result<SystemModel> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "model directory not found"),
        ));
    }
    let doc: SystemDocument = serde_json::from_slice(&read_bundle_file(dir, SYSTEM_FILE)?)
        .map_err(|e| Error::CorruptModel(format!("{SYSTEM_FILE}: {e}")))?;
    if doc.format_version != SYSTEM_FORMAT_VERSION {
        return Err(Error::Version {
            found: doc.format_version,
            expected: SYSTEM_FORMAT_VERSION,
        });
    }
    let verified = |name: &str| -> Result<Vec<u8>> {
        let bytes = read_bundle_file(dir, name)?;
        let expected = doc
            .hashes
            .get(name)
            .ok_or_else(|| Error::CorruptModel(format!("no recorded hash for {name}")))?;
        if &sha256_hex(&bytes) != expected {
            return Err(Error::CorruptModel(format!("{name} does not match its recorded hash")));
        }
        Ok(bytes)
    };
    let bank = TagBank::from_json(&verified(BANK_FILE)?)?;
    let cnn = if doc.hashes.contains_key(&format!("{CNN_STEM}.bin")) {
        Some(CnnModel::from_parts(
            &verified(&format!("{CNN_STEM}.json"))?,
            &verified(&format!("{CNN_STEM}.bin"))?,
        )?)
    } else {
        None
    };
    let model = SystemModel {
        config: doc.config,
        normalizer: doc.normalizer,
        bank,
        cnn,
        speakers: doc.speakers,
        version: doc.version,
        provenance: doc.provenance,
    };
    model.validate()?;
    Ok(model)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    GmmOnly,
    CnnOnly,
    GmmCnn,
    /// Cascade with segregation at train and test time.
    CasaOn,
    /// Cascade without segregation.
    CasaOff,
}

impl AblationMode {
    pub fn name(self) -> &'static str {
        match self {
            AblationMode::GmmOnly => "gmm_only",
            AblationMode::CnnOnly => "cnn_only",
            AblationMode::GmmCnn => "gmm_cnn",
            AblationMode::CasaOn => "casa_on",
            AblationMode::CasaOff => "casa_off",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "gmm_only" => Ok(Self::GmmOnly),
            "cnn_only" => Ok(Self::CnnOnly),
            "gmm_cnn" => Ok(Self::GmmCnn),
            "casa_on" => Ok(Self::CasaOn),
            "casa_off" => Ok(Self::CasaOff),
            other => Err(Error::Config(format!("unknown mode {other:?}"))),
        }
    }

    /// Decision rule and the (train, test) segregation switches.
    fn plan(self, config: &SystemConfig) -> (DecisionMode, bool, bool) {
        match self {
            AblationMode::GmmOnly => (DecisionMode::GmmOnly, config.casa_train, config.casa_test),
            AblationMode::CnnOnly => (DecisionMode::CnnOnly, config.casa_train, config.casa_test),
            AblationMode::GmmCnn => (DecisionMode::GmmCnn, config.casa_train, config.casa_test),
            AblationMode::CasaOn => (DecisionMode::GmmCnn, true, true),
            AblationMode::CasaOff => (DecisionMode::GmmCnn, false, false),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mode: AblationMode,
    pub casa_train: bool,
    pub casa_test: bool,
    pub report: EvalReport,
    /// SID percent per emotion.
    pub per_emotion_sid: BTreeMap<String, f64>,
    /// SID percent per "speaker/emotion" cell.
    pub per_cell_sid: BTreeMap<String, f64>,
    /// Wall-clock seconds to identify the test split.
    pub seconds: f64,
    /// `seconds` relative to the GMM-only run under the same segregation
    /// setting.
    pub cost_ratio: f64,
    pub trials: Vec<TrialRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, mode: AblationMode) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.mode == mode)
    }

    pub fn render_table(&self) -> String {
        let mut s = format!(
            "{:<10} {:>5} {:>8} {:>8} {:>8} {:>9} {:>10}\n",
            "mode", "casa", "SID%", "F1", "AUC", "seconds", "cost_ratio"
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{:<10} {:>5} {:>8.2} {:>8.4} {:>8} {:>9.3} {:>10.3}\n",
                r.mode.name(),
                if r.casa_test { "on" } else { "off" },
                r.report.sid_percent,
                r.report.macro_f1,
                r.report.auc.map_or("-".to_string(), |a| format!("{a:.4}")),
                r.seconds,
                r.cost_ratio
            ));
        }
        s
    }
}

/// Identifies every test clip, in input order.
pub fn run_trials(
    test: &[&LabeledClip],
    model: &SystemModel,
    use_casa: bool,
    mode: DecisionMode,
) -> Result<Vec<TrialRecord>> {
    test.par_iter()
        .map(|c| {
            let r = identify_with(&c.clip, model, use_casa, mode)?;
            Ok(TrialRecord {
                true_speaker: c.speaker.clone(),
                predicted_speaker: r.speaker,
                scores: model
                    .speakers
                    .iter()
                    .cloned()
                    .zip(r.diagnostics.speaker_probs.iter().cloned())
                    .collect(),
                true_emotion: Some(c.emotion.clone()),
                predicted_emotion: Some(r.emotion),
            })
        })
        .collect()
}

fn grouped_sid(test: &[&LabeledClip], trials: &[TrialRecord], key: impl Fn(&LabeledClip) -> String) -> BTreeMap<String, f64> {
    let mut tally: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (c, t) in test.iter().zip(trials) {
        let e = tally.entry(key(c)).or_default();
        e.0 += usize::from(t.is_correct());
        e.1 += 1;
    }
    tally
        .into_iter()
        .map(|(k, (ok, n))| (k, 100.0 * ok as f64 / n as f64))
        .collect()
}

fn test_split(clips: &[LabeledClip]) -> Result<Vec<&LabeledClip>> {
    let test: Vec<&LabeledClip> = clips.iter().filter(|c| c.split == Split::Test).collect();
    if test.is_empty() {
        return Err(Error::Data("no test utterances".into()));
    }
    Ok(test)
}

fn unique(modes: &[AblationMode]) -> Vec<AblationMode> {
    let mut out: Vec<AblationMode> = Vec::new();
    for m in modes {
        if !out.contains(m) {
            out.push(*m);
        }
    }
    out
}

struct Plan<'a> {
    mode: AblationMode,
    decision: DecisionMode,
    casa_test: bool,
    model: &'a SystemModel,
}

fn run_plans(test: &[&LabeledClip], plans: &[Plan<'_>]) -> Result<Vec<AblationRow>> {
    let mut gmm_seconds: BTreeMap<(bool, bool), f64> = BTreeMap::new();
    let mut rows = Vec::new();
    for p in plans {
        let start = Instant::now();
        let trials = run_trials(test, p.model, p.casa_test, p.decision)?;
        let seconds = start.elapsed().as_secs_f64();
        let key = (p.model.config.casa_train, p.casa_test);
        let reference = match gmm_seconds.get(&key) {
            Some(s) => *s,
            None => {
                let s = if p.decision == DecisionMode::GmmOnly {
                    seconds
                } else {
                    let t0 = Instant::now();
                    run_trials(test, p.model, p.casa_test, DecisionMode::GmmOnly)?;
                    t0.elapsed().as_secs_f64()
                };
                gmm_seconds.insert(key, s);
                s
            }
        };
        rows.push(AblationRow {
            mode: p.mode,
            casa_train: p.model.config.casa_train,
            casa_test: p.casa_test,
            report: evaluate(&trials, DEFAULT_ALPHA)?,
            per_emotion_sid: grouped_sid(test, &trials, |c| c.emotion.clone()),
            per_cell_sid: grouped_sid(test, &trials, |c| format!("{}/{}", c.speaker, c.emotion)),
            seconds,
            cost_ratio: seconds / reference.max(1e-9),
            trials,
        });
    }
    Ok(rows)
}

/// Trains one system per segregation setting needed by `modes` and evaluates
/// each mode on the test split.
pub fn ablate(clips: &[LabeledClip], config: &SystemConfig, modes: &[AblationMode]) -> Result<AblationReport> {
    let test = test_split(clips)?;
    let modes = unique(modes);
    let mut systems: BTreeMap<bool, SystemModel> = BTreeMap::new();
    for mode in &modes {
        let (_, casa_train, casa_test) = mode.plan(config);
        if let std::collections::btree_map::Entry::Vacant(slot) = systems.entry(casa_train) {
            let cfg = SystemConfig {
                casa_train,
                casa_test,
                ..config.clone()
            };
            slot.insert(train_system(clips, &cfg)?);
        }
    }
    let plans: Vec<Plan<'_>> = modes
        .iter()
        .map(|&mode| {
            let (decision, casa_train, casa_test) = mode.plan(config);
            Plan {
                mode,
                decision,
                casa_test,
                model: &systems[&casa_train],
            }
        })
        .collect();
    Ok(AblationReport {
        rows: run_plans(&test, &plans)?,
    })
}

/// Evaluates an already trained model. `casa_on` and `casa_off` toggle
/// segregation at identification time only.
pub fn evaluate_modes(clips: &[LabeledClip], model: &SystemModel, modes: &[AblationMode]) -> Result<AblationReport> {
    let test = test_split(clips)?;
    let plans: Vec<Plan<'_>> = unique(modes)
        .into_iter()
        .map(|mode| {
            let (decision, _, casa_test) = match mode {
                AblationMode::CasaOn | AblationMode::CasaOff => mode.plan(&model.config),
                _ => (mode.plan(&model.config).0, false, model.config.casa_test),
            };
            Plan {
                mode,
                decision,
                casa_test,
                model,
            }
        })
        .collect();
    Ok(AblationReport {
        rows: run_plans(&test, &plans)?,
    })
}

/// Wilcoxon signed-rank test over the per-cell SID of two rows, `a` minus `b`.
pub fn compare_rows(a: &AblationRow, b: &AblationRow, alpha: f64) -> Result<WilcoxonResult> {
    let keys: Vec<&String> = a.per_cell_sid.keys().filter(|k| b.per_cell_sid.contains_key(*k)).collect();
    let xa: Vec<f64> = keys.iter().map(|k| a.per_cell_sid[*k]).collect();
    let xb: Vec<f64> = keys.iter().map(|k| b.per_cell_sid[*k]).collect();
    wilcoxon_signed_rank(&xa, &xb, alpha)
}

/// Evaluates a trained model on the test split with one decision rule.
pub fn evaluate_model(
    clips: &[LabeledClip],
    model: &SystemModel,
    use_casa: bool,
    mode: DecisionMode,
) -> Result<(EvalReport, Vec<TrialRecord>)> {
    let test = test_split(clips)?;
    let trials = run_trials(&test, model, use_casa, mode)?;
    Ok((evaluate(&trials, DEFAULT_ALPHA)?, trials))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_dataset, SynthDatasetConfig};

    fn quick_config() -> SystemConfig {
        SystemConfig {
            gmm: GmmConfig {
                components: 4,
                max_iter: 30,
                ..GmmConfig::default()
            },
            cnn_train: CnnTrainConfig {
                epochs: 6,
                ..CnnTrainConfig::default()
            },
            casa_train: false,
            casa_test: false,
            ..SystemConfig::default()
        }
    }

    fn corpus(speakers: usize, emotions: usize, utterances: usize) -> Vec<LabeledClip> {
        synth_dataset(&SynthDatasetConfig {
            speakers,
            emotions,
            utterances,
            train_per_cell: Some(utterances.min(3)),
            duration_s: 0.6,
            seed: 11,
            ..SynthDatasetConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn counting_contract_and_determinism() {
        let clips = corpus(2, 1, 3);
        let m = train_system(&clips, &quick_config()).unwrap();
        assert_eq!(m.bank.len(), 2);
        assert_eq!(m.cnn.as_ref().unwrap().spec.n_classes, 2);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        save_system(&m, a.path()).unwrap();
        save_system(&train_system(&clips, &quick_config()).unwrap(), b.path()).unwrap();
        for f in [SYSTEM_FILE, BANK_FILE, "cnn.json", "cnn.bin"] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
        }
        assert_eq!(load_system(a.path()).unwrap(), m);
    }

    #[test]
    fn bundle_damage_is_detected() {
        let clips = corpus(2, 1, 3);
        let m = train_system(&clips, &quick_config()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_system(&m, dir.path()).unwrap();
        let bin = dir.path().join("cnn.bin");
        let mut bytes = fs::read(&bin).unwrap();
        bytes[10] ^= 1;
        fs::write(&bin, bytes).unwrap();
        assert!(matches!(load_system(dir.path()), Err(Error::CorruptModel(_))));
        save_system(&m, dir.path()).unwrap();
        fs::remove_file(dir.path().join(BANK_FILE)).unwrap();
        assert!(matches!(load_system(dir.path()), Err(Error::CorruptModel(_))));
        save_system(&m, dir.path()).unwrap();
        let sys = dir.path().join(SYSTEM_FILE);
        let text = fs::read_to_string(&sys).unwrap().replacen("\"format_version\":1", "\"format_version\":9", 1);
        fs::write(&sys, text).unwrap();
        assert!(matches!(load_system(dir.path()), Err(Error::Version { found: 9, .. })));
    }

    #[test]
    fn single_speaker_model_always_answers_that_speaker() {
        let clips: Vec<LabeledClip> = corpus(2, 2, 3).into_iter().filter(|c| c.speaker == "spk02").collect();
        let m = train_system(&clips, &quick_config()).unwrap();
        assert!(m.cnn.is_none());
        let noise = crate::synth::white_noise(4000, 8000, 1).unwrap();
        let r = identify(&noise, &m, false).unwrap();
        assert_eq!(r.speaker, "spk02");
        assert_eq!(r.confidence, 1.0);
        assert!(m.bank.emotions().contains(&r.emotion));
    }

    #[test]
    fn top1_gating_matches_gmm_decision() {
        let clips = corpus(3, 2, 4);
        let mut cfg = quick_config();
        cfg.gating = GatingConfig::top_k(1);
        let m = train_system(&clips, &cfg).unwrap();
        for c in &clips {
            let cascade = identify_with(&c.clip, &m, false, DecisionMode::GmmCnn).unwrap();
            let gmm = identify_with(&c.clip, &m, false, DecisionMode::GmmOnly).unwrap();
            assert_eq!(cascade.speaker, gmm.speaker);
            assert!(m.bank.emotions().contains(&cascade.emotion));
            assert!((0.0..=1.0).contains(&cascade.confidence));
        }
    }

    #[test]
    fn training_utterances_are_recognised() {
        let clips = corpus(3, 1, 3);
        let m = train_system(&clips, &quick_config()).unwrap();
        for c in &clips {
            let r = identify(&c.clip, &m, false).unwrap();
            assert_eq!(r.speaker, c.speaker);
            assert!(r.confidence > 1.0 / 3.0);
        }
    }

    #[test]
    fn short_input_is_rejected() {
        let clips = corpus(2, 1, 3);
        let m = train_system(&clips, &quick_config()).unwrap();
        let tiny = AudioClip::new(vec![0.01; 50], 8000).unwrap();
        assert!(matches!(identify(&tiny, &m, false), Err(Error::InputTooShort(_))));
    }

    #[test]
    fn ablation_rows() {
        let clips = corpus(2, 1, 4);
        let r = ablate(&clips, &quick_config(), &[AblationMode::GmmOnly]).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert_eq!(r.rows[0].cost_ratio, 1.0);
        let r = ablate(&clips, &quick_config(), &[AblationMode::CasaOn, AblationMode::CasaOff]).unwrap();
        assert!(r.row(AblationMode::CasaOn).unwrap().casa_test);
        assert!(!r.row(AblationMode::CasaOff).unwrap().casa_test);
        assert!(r.render_table().contains("casa_off"));
    }

    #[test]
    fn test_time_modes_share_one_model() {
        let clips = corpus(2, 1, 4);
        let m = train_system(&clips, &quick_config()).unwrap();
        let r = evaluate_modes(&clips, &m, &[AblationMode::CasaOff, AblationMode::CasaOn, AblationMode::CasaOff]).unwrap();
        assert_eq!(r.rows.len(), 2);
        assert!(!r.rows[0].casa_test && r.rows[1].casa_test);
        let direct = evaluate_model(&clips, &m, false, DecisionMode::GmmCnn).unwrap().0;
        assert_eq!(r.rows[0].report, direct);
    }
}
