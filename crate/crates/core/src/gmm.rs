//! Diagonal-covariance Gaussian mixtures: evaluation, EM training, tag banks
//! keyed by (speaker, emotion), and maximum-likelihood decisions.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::io;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_COMPONENTS: usize = 16;
pub const DEFAULT_VARIANCE_FLOOR: f64 = 1e-4;
pub const DEFAULT_TOL: f64 = 1e-5;
pub const DEFAULT_MAX_ITER: usize = 200;
pub const DEFAULT_KMEANS_ITERS: usize = 10;

const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;
const CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmTag {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
}

impl GmmTag {
    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    /// Checks the simplex, positivity and shape invariants.
    pub fn validate(&self, variance_floor: f64) -> Result<()> {
        let m = self.weights.len();
        let d = self.dim();
        if m == 0 || d == 0 {
            return Err(Error::CorruptModel("mixture has no components or zero dimension".into()));
        }
        if self.means.len() != m || self.variances.len() != m {
            return Err(Error::CorruptModel("component counts disagree".into()));
        }
        if self.means.iter().chain(&self.variances).any(|v| v.len() != d) {
            return Err(Error::CorruptModel("component dimensions disagree".into()));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::CorruptModel("negative or non-finite weight".into()));
        }
        let s: f64 = self.weights.iter().sum();
        if (s - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(Error::CorruptModel(format!("weights sum to {s}")));
        }
        if self.means.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::CorruptModel("non-finite mean".into()));
        }
        if self
            .variances
            .iter()
            .flatten()
            .any(|v| !(v.is_finite() && *v >= variance_floor && *v > 0.0))
        {
            return Err(Error::CorruptModel("variance below floor or non-finite".into()));
        }
        Ok(())
    }

    fn scorer(&self) -> Scorer {
        let d = self.dim() as f64;
        let comps = (0..self.n_components())
            .map(|i| {
                let log_det: f64 = self.variances[i].iter().map(|v| v.ln()).sum();
                Component {
                    log_const: self.weights[i].ln() - 0.5 * (d * (2.0 * PI).ln() + log_det),
                    mean: self.means[i].clone(),
                    inv_var: self.variances[i].iter().map(|v| 1.0 / v).collect(),
                }
            })
            .collect();
        Scorer { comps }
    }

    /// log p(x | lambda) by max-shifted log-sum-exp.
    pub fn log_pdf(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.scorer().log_pdf(x))
    }

    pub fn pdf(&self, x: &[f64]) -> Result<f64> {
        self.log_pdf(x).map(f64::exp)
    }

    /// Sum over frames of log p(x_t | lambda).
    pub fn log_likelihood(&self, frames: &[Vec<f64>]) -> Result<f64> {
        frames.iter().try_for_each(|x| self.check_dim(x))?;
        let s = self.scorer();
        let partial: Vec<f64> = frames
            .par_chunks(CHUNK)
            .map(|c| c.iter().map(|x| s.log_pdf(x)).sum::<f64>())
            .collect();
        Ok(partial.iter().sum())
    }

    /// Posterior p(i | x_t, lambda) for each frame, rows summing to one.
    pub fn responsibilities(&self, frames: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        frames.iter().try_for_each(|x| self.check_dim(x))?;
        let s = self.scorer();
        Ok(frames.iter().map(|x| s.posterior(x).0).collect())
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Shape(format!(
                "feature has dimension {}, mixture {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(())
    }
}

struct Component {
    log_const: f64,
    mean: Vec<f64>,
    inv_var: Vec<f64>,
}

impl Component {
    fn log_term(&self, x: &[f64]) -> f64 {
        let q: f64 = x
            .iter()
            .zip(&self.mean)
            .zip(&self.inv_var)
            .map(|((xi, m), iv)| (xi - m) * (xi - m) * iv)
            .sum();
        self.log_const - 0.5 * q
    }
}

struct Scorer {
    comps: Vec<Component>,
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

impl Scorer {
    fn log_pdf(&self, x: &[f64]) -> f64 {
        let terms: Vec<f64> = self.comps.iter().map(|c| c.log_term(x)).collect();
        log_sum_exp(&terms)
    }

    fn posterior(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let mut terms: Vec<f64> = self.comps.iter().map(|c| c.log_term(x)).collect();
        let lse = log_sum_exp(&terms);
        terms.iter_mut().for_each(|t| *t = (*t - lse).exp());
        (terms, lse)
    }
}

fn check_frames(frames: &[Vec<f64>]) -> Result<usize> {
    let d = frames
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::Data("no training frames".into()))?;
    if d == 0 {
        return Err(Error::Shape("frames have zero dimension".into()));
    }
    if frames.iter().any(|x| x.len() != d) {
        return Err(Error::Shape("frames have inconsistent dimensions".into()));
    }
    if frames.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite feature value".into()));
    }
    Ok(d)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn moments(frames: &[&Vec<f64>], d: usize, floor: f64) -> (Vec<f64>, Vec<f64>) {
    let n = frames.len() as f64;
    let mut mean = vec![0.0; d];
    for x in frames {
        mean.iter_mut().zip(x.iter()).for_each(|(m, v)| *m += v / n);
    }
    let mut var = vec![0.0; d];
    for x in frames {
        var.iter_mut()
            .zip(x.iter().zip(&mean))
            .for_each(|(s, (v, m))| *s += (v - m) * (v - m) / n);
    }
    var.iter_mut().for_each(|v| *v = v.max(floor));
    (mean, var)
}

/// k-means++ seeding refined by at most `kmeans_iters` Lloyd iterations.
pub fn init_gmm(
    frames: &[Vec<f64>],
    m: usize,
    seed: u64,
    variance_floor: f64,
    kmeans_iters: usize,
) -> Result<GmmTag> {
    let d = check_frames(frames)?;
    if m == 0 {
        return Err(Error::Param("mixture needs at least one component".into()));
    }
    if frames.len() < m {
        return Err(Error::Data(format!(
            "{} frames cannot seed {m} components",
            frames.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = vec![frames[rng.gen_range(0..frames.len())].clone()];
    let mut d2: Vec<f64> = frames.iter().map(|x| sq_dist(x, &centers[0])).collect();
    while centers.len() < m {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            d2.iter()
                .position(|v| {
                    r -= v;
                    r < 0.0
                })
                .unwrap_or_else(|| d2.iter().rposition(|v| *v > 0.0).expect("positive mass"))
        } else {
            rng.gen_range(0..frames.len())
        };
        centers.push(frames[idx].clone());
        d2.iter_mut()
            .zip(frames)
            .for_each(|(v, x)| *v = v.min(sq_dist(x, centers.last().expect("non-empty"))));
    }

    let assign = |centers: &[Vec<f64>]| -> Vec<usize> {
        frames
            .par_iter()
            .map(|x| {
                (0..centers.len())
                    .map(|c| (c, sq_dist(x, &centers[c])))
                    .fold((0, f64::INFINITY), |best, (c, v)| if v < best.1 { (c, v) } else { best })
                    .0
            })
            .collect()
    };
    let mut labels = assign(&centers);
    for _ in 0..kmeans_iters {
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = frames.iter().zip(&labels).filter(|(_, l)| **l == c).map(|(x, _)| x).collect();
            if !members.is_empty() {
                *center = moments(&members, d, 0.0).0;
            }
        }
        let next = assign(&centers);
        if next == labels {
            break;
        }
        labels = next;
    }

    let all: Vec<&Vec<f64>> = frames.iter().collect();
    let global_var = moments(&all, d, variance_floor).1;
    let n = frames.len() as f64;
    let mut weights = Vec::with_capacity(m);
    let mut variances = Vec::with_capacity(m);
    for c in 0..m {
        let members: Vec<&Vec<f64>> = frames.iter().zip(&labels).filter(|(_, l)| **l == c).map(|(x, _)| x).collect();
        weights.push(members.len() as f64 / n);
        variances.push(if members.len() > 1 {
            moments(&members, d, variance_floor).1
        } else {
            global_var.clone()
        });
    }
    Ok(GmmTag {
        weights,
        means: centers,
        variances,
    })
}

struct Sufficient {
    nk: Vec<f64>,
    sx: Vec<Vec<f64>>,
    sxx: Vec<Vec<f64>>,
    loglik: f64,
    worst: (f64, usize),
}

impl Sufficient {
    fn zeros(m: usize, d: usize) -> Self {
        Self {
            nk: vec![0.0; m],
            sx: vec![vec![0.0; d]; m],
            sxx: vec![vec![0.0; d]; m],
            loglik: 0.0,
            worst: (f64::INFINITY, 0),
        }
    }

    fn add(mut self, other: Sufficient) -> Self {
        for i in 0..self.nk.len() {
            self.nk[i] += other.nk[i];
            self.sx[i].iter_mut().zip(&other.sx[i]).for_each(|(a, b)| *a += b);
            self.sxx[i].iter_mut().zip(&other.sxx[i]).for_each(|(a, b)| *a += b);
        }
        self.loglik += other.loglik;
        if other.worst.0 < self.worst.0 {
            self.worst = other.worst;
        }
        self
    }
}

fn accumulate(frames: &[Vec<f64>], tag: &GmmTag) -> Sufficient {
    let s = tag.scorer();
    let (m, d) = (tag.n_components(), tag.dim());
    let partials: Vec<Sufficient> = frames
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(ci, chunk)| {
            let mut acc = Sufficient::zeros(m, d);
            for (j, x) in chunk.iter().enumerate() {
                let (post, lse) = s.posterior(x);
                acc.loglik += lse;
                if lse < acc.worst.0 {
                    acc.worst = (lse, ci * CHUNK + j);
                }
                for (i, g) in post.iter().enumerate() {
                    if *g == 0.0 {
                        continue;
                    }
                    for ((sx, sxx), v) in acc.sx[i].iter_mut().zip(acc.sxx[i].iter_mut()).zip(x) {
                        *sx += g * v;
                        *sxx += g * v * v;
                    }
                    acc.nk[i] += g;
                }
            }
            acc
        })
        .collect();
    partials
        .into_iter()
        .fold(Sufficient::zeros(m, d), Sufficient::add)
}

/// One EM iteration. Variances use E[x^2] - mu^2 per dimension, floored.
///
/// A component with zero responsibility mass is re-seeded at the frame with
/// the lowest likelihood, with the data variance and weight 1/T before
/// renormalisation.
pub fn em_step(frames: &[Vec<f64>], tag: &GmmTag, variance_floor: f64) -> Result<GmmTag> {
    Ok(em_step_with_loglik(frames, tag, variance_floor)?.0)
}

fn em_step_with_loglik(frames: &[Vec<f64>], tag: &GmmTag, variance_floor: f64) -> Result<(GmmTag, f64)> {
    let d = check_frames(frames)?;
    if d != tag.dim() {
        return Err(Error::Shape(format!("frames have dimension {d}, mixture {}", tag.dim())));
    }
    let t = frames.len() as f64;
    let acc = accumulate(frames, tag);
    if !acc.loglik.is_finite() {
        return Err(Error::Divergence("log-likelihood is not finite".into()));
    }
    let mut weights = Vec::with_capacity(tag.n_components());
    let mut means = Vec::with_capacity(tag.n_components());
    let mut variances = Vec::with_capacity(tag.n_components());
    let mut rescued = false;
    for i in 0..tag.n_components() {
        let nk = acc.nk[i];
        if nk > 0.0 {
            let mu: Vec<f64> = acc.sx[i].iter().map(|s| s / nk).collect();
            let var: Vec<f64> = acc.sxx[i]
                .iter()
                .zip(&mu)
                .map(|(s, m)| (s / nk - m * m).max(variance_floor))
                .collect();
            weights.push(nk / t);
            means.push(mu);
            variances.push(var);
        } else {
            log::warn!("mixture component {i} lost all responsibility; re-seeding at frame {}", acc.worst.1);
            let all: Vec<&Vec<f64>> = frames.iter().collect();
            weights.push(1.0 / t);
            means.push(frames[acc.worst.1].clone());
            variances.push(moments(&all, d, variance_floor).1);
            rescued = true;
        }
    }
    if rescued {
        let s: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= s);
    }
    Ok((
        GmmTag {
            weights,
            means,
            variances,
        },
        acc.loglik,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmmConfig {
    pub components: usize,
    /// Relative log-likelihood improvement below which training stops.
    pub tol: f64,
    pub max_iter: usize,
    pub variance_floor: f64,
    pub kmeans_iters: usize,
    pub seed: u64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self {
            components: DEFAULT_COMPONENTS,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            variance_floor: DEFAULT_VARIANCE_FLOOR,
            kmeans_iters: DEFAULT_KMEANS_ITERS,
            seed: 0,
        }
    }
}

impl GmmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.components == 0 {
            return Err(Error::Config("components must be at least 1".into()));
        }
        if !(self.variance_floor > 0.0 && self.variance_floor.is_finite()) {
            return Err(Error::Config("variance_floor must be positive".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::Config("tol must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedGmm {
    pub tag: GmmTag,
    /// Total log-likelihood before training and after each EM step.
    pub trace: Vec<f64>,
    pub converged: bool,
}

impl TrainedGmm {
    pub fn iterations(&self) -> usize {
        self.trace.len() - 1
    }
}

/// Initialises and iterates EM until the relative improvement drops below
/// `tol` or `max_iter` steps have run.
pub fn train_gmm(frames: &[Vec<f64>], config: &GmmConfig) -> Result<TrainedGmm> {
    config.validate()?;
    let mut tag = init_gmm(
        frames,
        config.components,
        config.seed,
        config.variance_floor,
        config.kmeans_iters,
    )?;
    let mut trace = Vec::new();
    let mut converged = false;
    for _ in 0..config.max_iter {
        let (next, before) = em_step_with_loglik(frames, &tag, config.variance_floor)?;
        if trace.is_empty() {
            trace.push(before);
        } else {
            *trace.last_mut().expect("non-empty") = before;
        }
        tag = next;
        let after = tag.log_likelihood(frames)?;
        if !after.is_finite() {
            return Err(Error::Divergence("log-likelihood is not finite".into()));
        }
        trace.push(after);
        let rel = (after - before) / before.abs().max(f64::MIN_POSITIVE);
        if !(rel >= config.tol) {
            converged = true;
            break;
        }
    }
    if trace.is_empty() {
        trace.push(tag.log_likelihood(frames)?);
    }
    Ok(TrainedGmm {
        tag,
        trace,
        converged,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TagKey {
    pub speaker: String,
    pub emotion: String,
}

impl TagKey {
    pub fn new(speaker: impl Into<String>, emotion: impl Into<String>) -> Self {
        Self {
            speaker: speaker.into(),
            emotion: emotion.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TagBank {
    pub dim: usize,
    pub tags: BTreeMap<TagKey, GmmTag>,
}

#[derive(Serialize, Deserialize)]
struct TagRecord {
    speaker: String,
    emotion: String,
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct BankDocument {
    dim: usize,
    tags: Vec<TagRecord>,
}

/// Writes floats with 17 significant digits.
struct PreciseFormatter;

impl serde_json::ser::Formatter for PreciseFormatter {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }
}

/// Serialises any value with 17-significant-digit floats.
pub(crate) fn to_precise_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, PreciseFormatter);
    value.serialize(&mut ser)?;
    Ok(out)
}

impl TagBank {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            tags: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, key: TagKey, tag: GmmTag) -> Result<()> {
        if tag.dim() != self.dim {
            return Err(Error::Shape(format!(
                "tag dimension {} does not match bank dimension {}",
                tag.dim(),
                self.dim
            )));
        }
        if self.tags.contains_key(&key) {
            return Err(Error::Label(format!("duplicate tag {}/{}", key.speaker, key.emotion)));
        }
        self.tags.insert(key, tag);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    /// Distinct speakers in lexicographic order.
    pub fn speakers(&self) -> Vec<String> {
        let mut s: Vec<String> = self.tags.keys().map(|k| k.speaker.clone()).collect();
        s.dedup();
        s
    }

    pub fn emotions(&self) -> Vec<String> {
        let mut e: Vec<String> = self.tags.keys().map(|k| k.emotion.clone()).collect();
        e.sort();
        e.dedup();
        e
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let doc = BankDocument {
            dim: self.dim,
            tags: self
                .tags
                .iter()
                .map(|(k, t)| TagRecord {
                    speaker: k.speaker.clone(),
                    emotion: k.emotion.clone(),
                    weights: t.weights.clone(),
                    means: t.means.clone(),
                    variances: t.variances.clone(),
                })
                .collect(),
        };
        to_precise_json(&doc)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let doc: BankDocument =
            serde_json::from_slice(bytes).map_err(|e| Error::CorruptModel(format!("tag bank: {e}")))?;
        let mut bank = TagBank::new(doc.dim);
        for r in doc.tags {
            let tag = GmmTag {
                weights: r.weights,
                means: r.means,
                variances: r.variances,
            };
            tag.validate(0.0)?;
            bank.insert(TagKey::new(r.speaker, r.emotion), tag)
                .map_err(|e| Error::CorruptModel(e.to_string()))?;
        }
        Ok(bank)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Trains one tag per key. Tag `j` in key order is seeded with `seed + j`.
pub fn train_bank(groups: &BTreeMap<TagKey, Vec<Vec<f64>>>, config: &GmmConfig) -> Result<TagBank> {
    config.validate()?;
    let dim = groups
        .values()
        .find_map(|f| f.first().map(Vec::len))
        .ok_or_else(|| Error::Data("no training frames for any tag".into()))?;
    let entries: Vec<(&TagKey, &Vec<Vec<f64>>)> = groups.iter().collect();
    let trained: Vec<(TagKey, GmmTag)> = entries
        .into_par_iter()
        .enumerate()
        .map(|(j, (key, frames))| {
            let cfg = GmmConfig {
                seed: config.seed.wrapping_add(j as u64),
                ..config.clone()
            };
            let t = train_gmm(frames, &cfg).map_err(|e| match e {
                Error::Data(m) => Error::Data(format!("{}/{}: {m}", key.speaker, key.emotion)),
                other => other,
            })?;
            Ok((key.clone(), t.tag))
        })
        .collect::<Result<_>>()?;
    let mut bank = TagBank::new(dim);
    for (k, t) in trained {
        bank.insert(k, t)?;
    }
    Ok(bank)
}

/// Per-tag average log-density per frame, in bank key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodVector {
    pub keys: Vec<TagKey>,
    pub values: Vec<f64>,
    pub n_frames: usize,
}

impl LikelihoodVector {
    /// Per speaker, the best emotion's summed log-likelihood.
    pub fn speaker_scores(&self) -> BTreeMap<String, f64> {
        self.grouped(|k| k.speaker.clone(), |_| true)
    }

    /// Per emotion, the best speaker's summed log-likelihood.
    pub fn emotion_scores(&self) -> BTreeMap<String, f64> {
        self.grouped(|k| k.emotion.clone(), |_| true)
    }

    /// Emotion scores over the tags of one speaker only.
    pub fn emotion_scores_for(&self, speaker: &str) -> BTreeMap<String, f64> {
        self.grouped(|k| k.emotion.clone(), |k| k.speaker == speaker)
    }

    fn grouped(&self, by: impl Fn(&TagKey) -> String, keep: impl Fn(&TagKey) -> bool) -> BTreeMap<String, f64> {
        let mut out: BTreeMap<String, f64> = BTreeMap::new();
        for (k, v) in self.keys.iter().zip(&self.values) {
            if !keep(k) {
                continue;
            }
            let total = v * self.n_frames as f64;
            out.entry(by(k))
                .and_modify(|s| *s = s.max(total))
                .or_insert(total);
        }
        out
    }
}

/// Highest-scoring label; ties go to the lexicographically smallest.
pub fn argmax_label(scores: &BTreeMap<String, f64>) -> Option<String> {
    let mut best: Option<(&String, f64)> = None;
    for (k, &v) in scores {
        match best {
            Some((_, b)) if v == b => log::debug!("score tie between labels, keeping the smaller id"),
            Some((_, b)) if v <= b => {}
            _ => best = Some((k, v)),
        }
    }
    best.map(|(k, _)| k.clone())
}

pub fn tag_likelihood_vector(frames: &[Vec<f64>], bank: &TagBank) -> Result<LikelihoodVector> {
    if frames.is_empty() {
        return Err(Error::Empty("no feature frames to score".into()));
    }
    if let Some(x) = frames.iter().find(|x| x.len() != bank.dim) {
        return Err(Error::Shape(format!(
            "feature has dimension {}, bank {}",
            x.len(),
            bank.dim
        )));
    }
    let t = frames.len() as f64;
    let values = bank
        .tags
        .values()
        .map(|tag| tag.log_likelihood(frames).map(|l| l / t))
        .collect::<Result<Vec<_>>>()?;
    Ok(LikelihoodVector {
        keys: bank.tags.keys().cloned().collect(),
        values,
        n_frames: frames.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub label: String,
    pub scores: BTreeMap<String, f64>,
}

pub fn identify_speaker_gmm(frames: &[Vec<f64>], bank: &TagBank) -> Result<Decision> {
    if bank.is_empty() {
        return Err(Error::Precondition("tag bank is empty".into()));
    }
    let scores = tag_likelihood_vector(frames, bank)?.speaker_scores();
    let label = argmax_label(&scores).expect("non-empty bank");
    Ok(Decision { label, scores })
}

pub fn recognize_emotion_gmm(frames: &[Vec<f64>], bank: &TagBank) -> Result<Decision> {
    if bank.is_empty() {
        return Err(Error::Precondition("tag bank is empty".into()));
    }
    let scores = tag_likelihood_vector(frames, bank)?.emotion_scores();
    let label = argmax_label(&scores).expect("non-empty bank");
    Ok(Decision { label, scores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn single(mean: f64, var: f64) -> GmmTag {
        GmmTag {
            weights: vec![1.0],
            means: vec![vec![mean]],
            variances: vec![vec![var]],
        }
    }

    fn two_cluster(n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Normal::new(-2.0, 0.5).unwrap();
        let b = Normal::new(2.0, 0.5).unwrap();
        (0..n)
            .map(|_| vec![if rng.gen_bool(0.5) { a.sample(&mut rng) } else { b.sample(&mut rng) }])
            .collect()
    }

    fn direct_pdf(x: &[f64], t: &GmmTag) -> f64 {
        (0..t.n_components())
            .map(|i| {
                let mut p = t.weights[i];
                for j in 0..x.len() {
                    let v = t.variances[i][j];
                    p *= (-(x[j] - t.means[i][j]).powi(2) / (2.0 * v)).exp() / (2.0 * PI * v).sqrt();
                }
                p
            })
            .sum()
    }

    #[test]
    fn pdf_fixtures() {
        assert!((single(0.0, 1.0).pdf(&[0.0]).unwrap() - 0.398_942_280_401_432_7).abs() < 1e-12);
        let dup = GmmTag {
            weights: vec![0.5, 0.5],
            means: vec![vec![0.3], vec![0.3]],
            variances: vec![vec![2.0], vec![2.0]],
        };
        assert!((dup.pdf(&[1.1]).unwrap() - single(0.3, 2.0).pdf(&[1.1]).unwrap()).abs() < 1e-15);
        let pair = GmmTag {
            weights: vec![0.5, 0.5],
            means: vec![vec![-1.0], vec![1.0]],
            variances: vec![vec![1.0], vec![1.0]],
        };
        let hand = (-0.5f64).exp() / (2.0 * PI).sqrt();
        assert!((pair.pdf(&[0.0]).unwrap() - hand).abs() < 1e-12);
        assert!((hand - 0.241_971).abs() < 1e-6);
        assert!(matches!(pair.pdf(&[0.0, 1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn init_fixtures() {
        let x = two_cluster(400, 1);
        let t = init_gmm(&x, 1, 0, 1e-4, 10).unwrap();
        let n = x.len() as f64;
        let mean = x.iter().map(|v| v[0]).sum::<f64>() / n;
        let var = x.iter().map(|v| (v[0] - mean).powi(2)).sum::<f64>() / n;
        assert!((t.means[0][0] - mean).abs() < 1e-12 && (t.variances[0][0] - var).abs() < 1e-12);
        assert_eq!(init_gmm(&x, 2, 9, 1e-4, 10).unwrap(), init_gmm(&x, 2, 9, 1e-4, 10).unwrap());
        let t = init_gmm(&x, 2, 9, 1e-4, 10).unwrap();
        let mut m: Vec<f64> = t.means.iter().map(|v| v[0]).collect();
        m.sort_by(f64::total_cmp);
        assert!((m[0] + 2.0).abs() < 0.2 && (m[1] - 2.0).abs() < 0.2, "{m:?}");
        assert!(matches!(init_gmm(&x[..3], 4, 0, 1e-4, 10), Err(Error::Data(_))));
    }

    #[test]
    fn single_component_step_is_closed_form() {
        let x = two_cluster(200, 3);
        let t = em_step(&x, &single(5.0, 0.3), 1e-4).unwrap();
        let n = x.len() as f64;
        let mean = x.iter().map(|v| v[0]).sum::<f64>() / n;
        let var = x.iter().map(|v| (v[0] - mean).powi(2)).sum::<f64>() / n;
        assert!((t.means[0][0] - mean).abs() < 1e-12);
        assert!((t.variances[0][0] - var).abs() < 1e-10);
        assert_eq!(t.weights, vec![1.0]);
    }

    #[test]
    fn em_step_improves_two_cluster_fit() {
        let x = two_cluster(200, 4);
        let start = GmmTag {
            weights: vec![0.3, 0.7],
            means: vec![vec![-0.5], vec![0.5]],
            variances: vec![vec![1.0], vec![1.0]],
        };
        let next = em_step(&x, &start, 1e-4).unwrap();
        assert!(next.log_likelihood(&x).unwrap() > start.log_likelihood(&x).unwrap());
    }

    #[test]
    fn recovers_known_mixture() {
        let x = two_cluster(2000, 11);
        let cfg = GmmConfig {
            components: 2,
            seed: 5,
            ..GmmConfig::default()
        };
        let t = train_gmm(&x, &cfg).unwrap();
        let mut comps: Vec<(f64, f64)> = (0..2).map(|i| (t.tag.means[i][0], t.tag.weights[i])).collect();
        comps.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert!((comps[0].0 + 2.0).abs() < 0.1 && (comps[1].0 - 2.0).abs() < 0.1, "{comps:?}");
        assert!((comps[0].1 - 0.5).abs() < 0.05 && (comps[1].1 - 0.5).abs() < 0.05);
        for w in t.trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9);
        }
        t.tag.validate(cfg.variance_floor).unwrap();
        assert_eq!(t, train_gmm(&x, &cfg).unwrap());
    }

    #[test]
    fn infinite_tol_runs_one_step() {
        let x = two_cluster(100, 2);
        let cfg = GmmConfig {
            components: 2,
            tol: f64::INFINITY,
            ..GmmConfig::default()
        };
        assert_eq!(train_gmm(&x, &cfg).unwrap().iterations(), 1);
    }

    #[test]
    fn empty_component_is_rescued() {
        let x: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64 * 0.01]).collect();
        let start = GmmTag {
            weights: vec![0.5, 0.5],
            means: vec![vec![0.25], vec![1e6]],
            variances: vec![vec![0.1], vec![1e-4]],
        };
        let t = em_step(&x, &start, 1e-4).unwrap();
        t.validate(1e-4).unwrap();
        assert!(t.means[1][0] < 1.0);
        assert!(t.weights[1] > 0.0);
    }

    fn gaussian_frames(center: &[f64], n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        let z = Normal::new(0.0, 1.0).unwrap();
        (0..n)
            .map(|_| center.iter().map(|c| c + z.sample(rng)).collect())
            .collect()
    }

    fn speaker_centers() -> Vec<Vec<f64>> {
        vec![
            vec![0.0, 0.0, 0.0, 0.0],
            vec![1.5, 0.0, -1.0, 0.5],
            vec![0.0, 1.5, 1.0, -0.5],
            vec![-1.5, -1.0, 0.0, 1.0],
        ]
    }

    fn synthetic_bank(rng: &mut ChaCha8Rng) -> TagBank {
        let mut groups = BTreeMap::new();
        for (s, c) in speaker_centers().iter().enumerate() {
            groups.insert(TagKey::new(format!("s{s}"), "neutral"), gaussian_frames(c, 400, rng));
        }
        let cfg = GmmConfig {
            components: 4,
            ..GmmConfig::default()
        };
        train_bank(&groups, &cfg).unwrap()
    }

    #[test]
    fn identifies_held_out_synthetic_speakers() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let bank = synthetic_bank(&mut rng);
        let centers = speaker_centers();
        let mut correct = 0;
        for trial in 0..40 {
            let s = trial % 4;
            let x = gaussian_frames(&centers[s], 60, &mut rng);
            if identify_speaker_gmm(&x, &bank).unwrap().label == format!("s{s}") {
                correct += 1;
            }
        }
        assert!(correct >= 38, "{correct}/40");
    }

    #[test]
    fn likelihood_vector_basics() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let bank = synthetic_bank(&mut rng);
        let x = gaussian_frames(&speaker_centers()[1], 30, &mut rng);
        let lv = tag_likelihood_vector(&x, &bank).unwrap();
        assert_eq!(lv.values.len(), 4);
        let doubled: Vec<Vec<f64>> = x.iter().flat_map(|f| [f.clone(), f.clone()]).collect();
        let lv2 = tag_likelihood_vector(&doubled, &bank).unwrap();
        for (a, b) in lv.values.iter().zip(&lv2.values) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(lv.values[1] > lv.values[3]);
        assert!(matches!(tag_likelihood_vector(&[vec![0.0; 3]], &bank), Err(Error::Shape(_))));

        let mut one = TagBank::new(4);
        one.insert(TagKey::new("only", "calm"), bank.tags.values().next().unwrap().clone()).unwrap();
        assert_eq!(tag_likelihood_vector(&x, &one).unwrap().values.len(), 1);
        assert_eq!(identify_speaker_gmm(&x, &one).unwrap().label, "only");
        assert_eq!(recognize_emotion_gmm(&x, &one).unwrap().label, "calm");
    }

    #[test]
    fn argmax_ties_and_shift_invariance() {
        let mut s = BTreeMap::new();
        s.insert("b".to_string(), 1.0);
        s.insert("a".to_string(), 1.0);
        s.insert("c".to_string(), 0.5);
        assert_eq!(argmax_label(&s).unwrap(), "a");
        let lv = LikelihoodVector {
            keys: vec![TagKey::new("a", "x"), TagKey::new("a", "y"), TagKey::new("b", "x")],
            values: vec![-3.0, -1.0, -2.0],
            n_frames: 10,
        };
        let shifted = LikelihoodVector {
            values: lv.values.iter().map(|v| v + 42.0).collect(),
            ..lv.clone()
        };
        assert_eq!(argmax_label(&lv.speaker_scores()), argmax_label(&shifted.speaker_scores()));
        assert_eq!(argmax_label(&lv.emotion_scores()), argmax_label(&shifted.emotion_scores()));
        assert_eq!(argmax_label(&lv.emotion_scores_for("b")).unwrap(), "x");
    }

    #[test]
    fn bank_json_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let bank = synthetic_bank(&mut rng);
        let bytes = bank.to_json().unwrap();
        assert_eq!(TagBank::from_json(&bytes).unwrap(), bank);
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.starts_with("{\"dim\":4,\"tags\":[{\"speaker\":\"s0\""));
        assert!(matches!(TagBank::from_json(b"{\"dim\":1}"), Err(Error::CorruptModel(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn em_is_monotone_and_normalised(
            seed in 0u64..10_000,
            m in 1usize..5,
            d in 1usize..4,
            n in 20usize..80,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
            let mut w: Vec<f64> = (0..m).map(|_| rng.gen_range(0.1..1.0)).collect();
            let s: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= s);
            let tag = GmmTag {
                weights: w,
                means: (0..m).map(|_| (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect(),
                variances: (0..m).map(|_| (0..d).map(|_| rng.gen_range(0.2..3.0)).collect()).collect(),
            };
            for row in tag.responsibilities(&x).unwrap() {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            let next = em_step(&x, &tag, 1e-4).unwrap();
            prop_assert!((next.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(next.log_likelihood(&x).unwrap() >= tag.log_likelihood(&x).unwrap() - 1e-9);
            for xi in &x {
                let direct = direct_pdf(xi, &tag);
                if direct > 1e-300 {
                    let lp = tag.log_pdf(xi).unwrap();
                    prop_assert!((lp.exp() - direct).abs() <= 1e-10 * direct);
                }
            }
        }
    }
}
