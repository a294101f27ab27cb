//! Identification metrics and the statistics used to compare systems.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

pub const DEFAULT_ALPHA: f64 = 0.10;
/// Largest sample size for which the signed-rank p-value is enumerated.
pub const WILCOXON_EXACT_MAX_N: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub true_speaker: String,
    pub predicted_speaker: String,
    /// Per-speaker scores, higher meaning more likely.
    #[serde(default)]
    pub scores: BTreeMap<String, f64>,
    #[serde(default)]
    pub true_emotion: Option<String>,
    #[serde(default)]
    pub predicted_emotion: Option<String>,
}

impl TrialRecord {
    pub fn is_correct(&self) -> bool {
        self.true_speaker == self.predicted_speaker
    }
}

/// Counts indexed `[true][predicted]` over `labels`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_trials(trials: &[TrialRecord]) -> Self {
        let labels: BTreeSet<&String> = trials
            .iter()
            .flat_map(|t| [&t.true_speaker, &t.predicted_speaker])
            .collect();
        let labels: Vec<String> = labels.into_iter().cloned().collect();
        let index: BTreeMap<&String, usize> = labels.iter().enumerate().map(|(i, l)| (l, i)).collect();
        let mut counts = vec![vec![0; labels.len()]; labels.len()];
        for t in trials {
            counts[index[&t.true_speaker]][index[&t.predicted_speaker]] += 1;
        }
        Self { labels, counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.labels.len()).map(|i| self.counts[i][i]).sum()
    }

    fn index_of(&self, class: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == class)
            .ok_or_else(|| Error::Label(format!("unknown class {class:?}")))
    }

    /// (TP, FP, FN) for one class.
    pub fn tallies(&self, class: &str) -> Result<(u64, u64, u64)> {
        let c = self.index_of(class)?;
        let tp = self.counts[c][c];
        let fp = (0..self.labels.len()).map(|r| self.counts[r][c]).sum::<u64>() - tp;
        let fn_ = self.counts[c].iter().sum::<u64>() - tp;
        Ok((tp, fp, fn_))
    }
}

/// 100 * correct / total.
pub fn sid_performance(trials: &[TrialRecord]) -> Result<f64> {
    if trials.is_empty() {
        return Err(Error::Empty("no trials to score".into()));
    }
    let correct = trials.iter().filter(|t| t.is_correct()).count();
    Ok(100.0 * correct as f64 / trials.len() as f64)
}

/// 2PR / (P + R), zero when both vanish.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// Set when TP + FP = 0 and precision was reported as 0.
    pub precision_undefined: bool,
    /// Set when TP + FN = 0 and recall was reported as 0.
    pub recall_undefined: bool,
}

pub fn precision_recall_f1(cm: &ConfusionMatrix, class: &str) -> Result<ClassMetrics> {
    let (tp, fp, fn_) = cm.tallies(class)?;
    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    Ok(ClassMetrics {
        label: class.to_string(),
        precision,
        recall,
        f1: f1_score(precision, recall),
        support: tp + fn_,
        precision_undefined: tp + fp == 0,
        recall_undefined: tp + fn_ == 0,
    })
}

/// Mann-Whitney AUC with midranks; ties count one half.
pub fn roc_auc(scored: &[(f64, bool)]) -> Result<f64> {
    let n_pos = scored.iter().filter(|s| s.1).count();
    let n_neg = scored.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Degenerate("AUC needs both positive and negative trials".into()));
    }
    if scored.iter().any(|s| s.0.is_nan()) {
        return Err(Error::Degenerate("NaN score".into()));
    }
    let ranks = midranks(&scored.iter().map(|s| s.0).collect::<Vec<_>>());
    let pos_rank_sum: f64 = ranks.iter().zip(scored).filter(|(_, s)| s.1).map(|(r, _)| r).sum();
    let np = n_pos as f64;
    Ok((pos_rank_sum - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

/// One-vs-rest AUC averaged over every speaker with both positive and
/// negative trials.
pub fn macro_auc(trials: &[TrialRecord]) -> Result<f64> {
    let classes: BTreeSet<&String> = trials.iter().map(|t| &t.true_speaker).collect();
    let mut aucs = Vec::new();
    for c in classes {
        let scored: Vec<(f64, bool)> = trials
            .iter()
            .filter_map(|t| t.scores.get(c).map(|s| (*s, &t.true_speaker == c)))
            .collect();
        if let Ok(a) = roc_auc(&scored) {
            aucs.push(a);
        }
    }
    if aucs.is_empty() {
        return Err(Error::Degenerate("no class has both positive and negative scored trials".into()));
    }
    Ok(aucs.iter().sum::<f64>() / aucs.len() as f64)
}

/// 1-based ranks, tied values sharing their mean rank.
fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        order[i..=j].iter().for_each(|&k| ranks[k] = r);
        i = j + 1;
    }
    ranks
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub reject: bool,
    pub alpha: f64,
}

/// Survival function of the Kolmogorov distribution.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let mut s = 0.0;
    for j in 1..=100 {
        let term = (-2.0 * (j * j) as f64 * lambda * lambda).exp();
        s += if j % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// One-sample KS test against a normal with the sample mean and standard
/// deviation; p from the asymptotic Kolmogorov distribution of sqrt(n) D.
pub fn ks_normality(samples: &[f64], alpha: f64) -> Result<KsResult> {
    let n = samples.len();
    if n < 5 {
        return Err(Error::Precondition(format!("normality test needs at least 5 samples, got {n}")));
    }
    let nf = n as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    let sd = (samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt();
    if !(sd > 0.0) {
        return Err(Error::Degenerate("samples have zero variance".into()));
    }
    let dist = Normal::new(mean, sd).map_err(|e| Error::Degenerate(e.to_string()))?;
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let d = sorted
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let f = dist.cdf(*x);
            (f - i as f64 / nf).max((i + 1) as f64 / nf - f)
        })
        .fold(0.0, f64::max);
    let p = kolmogorov_sf(nf.sqrt() * d);
    Ok(KsResult {
        statistic: d,
        p_value: p,
        reject: p < alpha,
        alpha,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Smaller of the positive and negative signed-rank sums.
    pub statistic: f64,
    pub w_plus: f64,
    pub w_minus: f64,
    /// Non-zero differences used.
    pub n: usize,
    pub p_value: f64,
    pub exact: bool,
    pub different: bool,
    /// Sign of W+ - W-, i.e. whether `a` tends to exceed `b`.
    pub direction: i8,
    pub alpha: f64,
}

struct SignedRanks {
    ranks: Vec<f64>,
    w_plus: f64,
    w_minus: f64,
    tie_sizes: Vec<usize>,
}

fn signed_ranks(a: &[f64], b: &[f64]) -> Result<SignedRanks> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("paired samples of lengths {} and {}", a.len(), b.len())));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    if diffs.is_empty() {
        return Err(Error::Degenerate("all paired differences are zero".into()));
    }
    if diffs.len() < 5 {
        return Err(Error::Precondition(format!(
            "signed-rank test needs at least 5 non-zero differences, got {}",
            diffs.len()
        )));
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = midranks(&abs);
    let w_plus = ranks.iter().zip(&diffs).filter(|(_, d)| **d > 0.0).map(|(r, _)| r).sum();
    let w_minus = ranks.iter().zip(&diffs).filter(|(_, d)| **d < 0.0).map(|(r, _)| r).sum();
    let mut groups: BTreeMap<u64, usize> = BTreeMap::new();
    for r in &ranks {
        *groups.entry(r.to_bits()).or_default() += 1;
    }
    Ok(SignedRanks {
        ranks,
        w_plus,
        w_minus,
        tie_sizes: groups.into_values().filter(|&t| t > 1).collect(),
    })
}

/// Two-sided p by enumerating all 2^n sign assignments.
fn exact_p(ranks: &[f64], w: f64) -> f64 {
    let n = ranks.len();
    let total: f64 = ranks.iter().sum();
    let mut hits = 0u64;
    for mask in 0u64..(1 << n) {
        let plus: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        if plus.min(total - plus) <= w + 1e-9 {
            hits += 1;
        }
    }
    hits as f64 / (1u64 << n) as f64
}

/// Two-sided p from the normal approximation with tie and continuity
/// corrections.
fn normal_p(n: usize, w: f64, tie_sizes: &[usize]) -> f64 {
    let nf = n as f64;
    let mu = nf * (nf + 1.0) / 4.0;
    let ties: f64 = tie_sizes.iter().map(|&t| (t * t * t - t) as f64).sum();
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - ties / 48.0;
    let z = ((w - mu).abs() - 0.5).max(0.0) / var.sqrt();
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    (2.0 * (1.0 - std.cdf(z))).min(1.0)
}

pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64], alpha: f64) -> Result<WilcoxonResult> {
    let sr = signed_ranks(a, b)?;
    let n = sr.ranks.len();
    let w = sr.w_plus.min(sr.w_minus);
    let exact = n <= WILCOXON_EXACT_MAX_N;
    let p = if exact {
        exact_p(&sr.ranks, w)
    } else {
        normal_p(n, w, &sr.tie_sizes)
    };
    Ok(WilcoxonResult {
        statistic: w,
        w_plus: sr.w_plus,
        w_minus: sr.w_minus,
        n,
        p_value: p,
        exact,
        different: p < alpha,
        direction: if sr.w_plus > sr.w_minus {
            1
        } else if sr.w_plus < sr.w_minus {
            -1
        } else {
            0
        },
        alpha,
    })
}

/// Both p-value paths for the same pairs, for cross-checking.
pub fn wilcoxon_p_both(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    let sr = signed_ranks(a, b)?;
    let w = sr.w_plus.min(sr.w_minus);
    if sr.ranks.len() > 20 {
        return Err(Error::Precondition("exact enumeration limited to 20 pairs".into()));
    }
    Ok((exact_p(&sr.ranks, w), normal_p(sr.ranks.len(), w, &sr.tie_sizes)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_trials: usize,
    pub n_correct: usize,
    pub sid_percent: f64,
    pub per_class: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// Macro one-vs-rest AUC; absent when no class can be scored.
    pub auc: Option<f64>,
    /// Emotion recognition rate in percent over trials carrying both labels.
    pub emotion_percent: Option<f64>,
    pub confusion: ConfusionMatrix,
    pub alpha: f64,
}

pub fn evaluate(trials: &[TrialRecord], alpha: f64) -> Result<EvalReport> {
    let sid = sid_performance(trials)?;
    let confusion = ConfusionMatrix::from_trials(trials);
    let per_class = confusion
        .labels
        .iter()
        .map(|l| precision_recall_f1(&confusion, l))
        .collect::<Result<Vec<_>>>()?;
    let k = per_class.len() as f64;
    let macro_of = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / k;
    let labelled: Vec<&TrialRecord> = trials
        .iter()
        .filter(|t| t.true_emotion.is_some() && t.predicted_emotion.is_some())
        .collect();
    let emotion_percent = (!labelled.is_empty()).then(|| {
        100.0 * labelled.iter().filter(|t| t.true_emotion == t.predicted_emotion).count() as f64
            / labelled.len() as f64
    });
    Ok(EvalReport {
        n_trials: trials.len(),
        n_correct: trials.iter().filter(|t| t.is_correct()).count(),
        sid_percent: sid,
        macro_precision: macro_of(|c| c.precision),
        macro_recall: macro_of(|c| c.recall),
        macro_f1: macro_of(|c| c.f1),
        per_class,
        auc: macro_auc(trials).ok(),
        emotion_percent,
        confusion,
        alpha,
    })
}

impl EvalReport {
    /// Aligned plain-text table.
    pub fn render_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<12} {:>9} {:>9} {:>9} {:>8}", "class", "precision", "recall", "f1", "support");
        for c in &self.per_class {
            let _ = writeln!(
                s,
                "{:<12} {:>9.4} {:>9.4} {:>9.4} {:>8}",
                c.label, c.precision, c.recall, c.f1, c.support
            );
        }
        let _ = writeln!(
            s,
            "{:<12} {:>9.4} {:>9.4} {:>9.4} {:>8}",
            "macro", self.macro_precision, self.macro_recall, self.macro_f1, self.n_trials
        );
        let _ = writeln!(s, "SID {:.2}% ({}/{})", self.sid_percent, self.n_correct, self.n_trials);
        if let Some(a) = self.auc {
            let _ = writeln!(s, "AUC {a:.4}");
        }
        if let Some(e) = self.emotion_percent {
            let _ = writeln!(s, "emotion {e:.2}%");
        }
        s
    }
}

/// Trials as JSON lines, one record per line.
pub fn write_trials(trials: &[TrialRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for t in trials {
        out.push_str(&serde_json::to_string(t)?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_trials(path: impl AsRef<Path>) -> Result<Vec<TrialRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Schema {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn trial(t: &str, p: &str) -> TrialRecord {
        TrialRecord {
            true_speaker: t.into(),
            predicted_speaker: p.into(),
            scores: BTreeMap::new(),
            true_emotion: None,
            predicted_emotion: None,
        }
    }

    #[test]
    fn sid_fixtures() {
        let mut trials: Vec<TrialRecord> = (0..42).map(|_| trial("a", "a")).collect();
        trials.extend((0..8).map(|_| trial("a", "b")));
        assert_eq!(sid_performance(&trials).unwrap(), 84.0);
        assert_eq!(sid_performance(&trials[..42]).unwrap(), 100.0);
        assert_eq!(sid_performance(&trials[42..]).unwrap(), 0.0);
        assert!(matches!(sid_performance(&[]), Err(Error::Empty(_))));
    }

    #[test]
    fn precision_recall_fixtures() {
        // class x: TP 8, FP 2 (true y predicted x), FN 2 (true x predicted y)
        let mut trials: Vec<TrialRecord> = (0..8).map(|_| trial("x", "x")).collect();
        trials.extend((0..2).map(|_| trial("y", "x")));
        trials.extend((0..2).map(|_| trial("x", "y")));
        trials.extend((0..5).map(|_| trial("y", "y")));
        let cm = ConfusionMatrix::from_trials(&trials);
        assert_eq!(cm.tallies("x").unwrap(), (8, 2, 2));
        let m = precision_recall_f1(&cm, "x").unwrap();
        assert_eq!(m.precision, 0.8);
        assert_eq!(m.recall, 0.8);
        assert!((m.f1 - 0.8).abs() < 1e-15);
        // the factor-2-free variant would give 0.4
        assert!((m.precision * m.recall / (m.precision + m.recall) - 0.4).abs() < 1e-15);
        assert!(matches!(precision_recall_f1(&cm, "z"), Err(Error::Label(_))));
        assert!((f1_score(0.80, 0.82) - 0.81).abs() < 0.005);
        assert_eq!(f1_score(0.0, 0.7), 0.0);
    }

    fn brute_auc(scored: &[(f64, bool)]) -> f64 {
        let (mut wins, mut pairs) = (0.0, 0.0);
        for p in scored.iter().filter(|s| s.1) {
            for n in scored.iter().filter(|s| !s.1) {
                pairs += 1.0;
                wins += if p.0 > n.0 {
                    1.0
                } else if p.0 == n.0 {
                    0.5
                } else {
                    0.0
                };
            }
        }
        wins / pairs
    }

    #[test]
    fn auc_fixtures() {
        assert_eq!(roc_auc(&[(0.9, true), (0.8, true), (0.1, false), (0.2, false)]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[(0.5, true), (0.5, false), (0.5, true), (0.5, false)]).unwrap(), 0.5);
        let six = [(0.3, true), (0.7, false), (0.7, true), (0.2, false), (0.9, true), (0.1, false)];
        assert!((roc_auc(&six).unwrap() - brute_auc(&six)).abs() < 1e-15);
        assert!(matches!(roc_auc(&[(0.1, true)]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn ks_fixtures() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let normal: Vec<f64> = (0..500).map(|_| StandardNormal.sample(&mut rng)).collect();
        let r = ks_normality(&normal, DEFAULT_ALPHA).unwrap();
        assert!(!r.reject, "{r:?}");
        let uniform: Vec<f64> = (0..500).map(|_| rng.gen::<f64>()).collect();
        let r = ks_normality(&uniform, DEFAULT_ALPHA).unwrap();
        assert!(r.reject, "{r:?}");
        assert!(matches!(ks_normality(&[1.0, 2.0, 3.0, 4.0], 0.1), Err(Error::Precondition(_))));
        assert!(matches!(ks_normality(&[1.0; 6], 0.1), Err(Error::Degenerate(_))));
    }

    #[test]
    fn kolmogorov_tail_values() {
        // tabulated critical values of the Kolmogorov distribution
        assert!((kolmogorov_sf(1.2238) - 0.10).abs() < 1e-3);
        assert!((kolmogorov_sf(1.3581) - 0.05).abs() < 1e-3);
        assert_eq!(kolmogorov_sf(0.0), 1.0);
    }

    fn brute_wilcoxon_p(a: &[f64], b: &[f64]) -> f64 {
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
        let n = d.len();
        let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
        // ranks by counting, midranks for ties
        let rank = |v: f64| {
            let below = abs.iter().filter(|x| **x < v).count() as f64;
            let equal = abs.iter().filter(|x| **x == v).count() as f64;
            below + (equal + 1.0) / 2.0
        };
        let ranks: Vec<f64> = abs.iter().map(|v| rank(*v)).collect();
        let total: f64 = ranks.iter().sum();
        let wp: f64 = ranks.iter().zip(&d).filter(|(_, x)| **x > 0.0).map(|(r, _)| r).sum();
        let obs = wp.min(total - wp);
        let mut count = 0;
        for mask in 0..(1u32 << n) {
            let s: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
            if s.min(total - s) <= obs + 1e-9 {
                count += 1;
            }
        }
        count as f64 / (1u32 << n) as f64
    }

    #[test]
    fn wilcoxon_fixtures() {
        let a = [125.0, 115.0, 130.0, 140.0, 140.0, 115.0];
        let b = [110.0, 122.0, 125.0, 120.0, 140.0, 124.0];
        let r = wilcoxon_signed_rank(&a, &b, DEFAULT_ALPHA);
        // one zero difference leaves 5 pairs
        let r = r.unwrap();
        assert_eq!(r.n, 5);
        assert!(r.exact);
        assert!((r.p_value - brute_wilcoxon_p(&a, &b)).abs() < 1e-15);

        let a6 = [1.83, 0.50, 1.62, 2.48, 1.68, 1.88];
        let b6 = [0.878, 0.647, 0.598, 2.05, 1.06, 1.29];
        let r = wilcoxon_signed_rank(&a6, &b6, DEFAULT_ALPHA).unwrap();
        assert_eq!(r.w_minus, 1.0);
        assert!((r.p_value - brute_wilcoxon_p(&a6, &b6)).abs() < 1e-15);
        assert!((r.p_value - 4.0 / 64.0).abs() < 1e-15);
        assert_eq!(r.direction, 1);

        assert!(matches!(wilcoxon_signed_rank(&a6, &a6, 0.1), Err(Error::Degenerate(_))));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f64> = (0..20).map(|_| rng.gen_range(0.0..1.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| v + 10.0 + rng.gen_range(-0.5..0.5)).collect();
        let r = wilcoxon_signed_rank(&x, &y, DEFAULT_ALPHA).unwrap();
        assert!(r.different && !r.exact && r.direction == -1);
    }

    #[test]
    fn exact_and_normal_paths_agree_at_twelve() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a: Vec<f64> = (0..12).map(|_| rng.gen_range(0.0..10.0)).collect();
            let b: Vec<f64> = a.iter().map(|v| v + rng.gen_range(-3.0..2.0)).collect();
            let (exact, normal) = wilcoxon_p_both(&a, &b).unwrap();
            assert!((exact - normal).abs() < 0.02, "seed {seed}: {exact} vs {normal}");
        }
    }

    #[test]
    fn evaluate_fixtures() {
        let perfect = vec![trial("a", "a"), trial("b", "b"), trial("c", "c")];
        let r = evaluate(&perfect, DEFAULT_ALPHA).unwrap();
        assert_eq!((r.sid_percent, r.macro_precision, r.macro_recall, r.macro_f1), (100.0, 1.0, 1.0, 1.0));
        let constant = vec![trial("a", "a"), trial("a", "a"), trial("b", "a"), trial("b", "a")];
        let r = evaluate(&constant, DEFAULT_ALPHA).unwrap();
        assert_eq!(r.sid_percent, 50.0);
        assert_eq!(r.macro_recall, 0.5);
        assert!(r.per_class[1].precision_undefined);

        let mixed = vec![
            trial("a", "a"),
            trial("a", "b"),
            trial("b", "b"),
            trial("b", "c"),
            trial("c", "c"),
            trial("c", "c"),
        ];
        let r = evaluate(&mixed, DEFAULT_ALPHA).unwrap();
        assert_eq!(r.confusion.counts, vec![vec![1, 1, 0], vec![0, 1, 1], vec![0, 0, 2]]);
        assert!((r.macro_precision - (1.0 + 0.5 + 2.0 / 3.0) / 3.0).abs() < 1e-15);
        assert!((r.macro_recall - (0.5 + 0.5 + 1.0) / 3.0).abs() < 1e-15);
        assert!(r.render_table().contains("SID 66.67%"));
    }

    #[test]
    fn trial_log_round_trip() {
        let mut t = trial("a", "b");
        t.scores.insert("a".into(), -1.5);
        t.true_emotion = Some("sad".into());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("trials.jsonl");
        write_trials(&[t.clone(), trial("c", "c")], &p).unwrap();
        assert_eq!(read_trials(&p).unwrap(), vec![t, trial("c", "c")]);
    }

    proptest! {
        #[test]
        fn rates_bounded_and_consistent(
            pairs in prop::collection::vec((0u8..4, 0u8..4, -5.0f64..5.0), 1..60),
        ) {
            let trials: Vec<TrialRecord> = pairs
                .iter()
                .map(|(t, p, s)| {
                    let mut r = trial(&format!("s{t}"), &format!("s{p}"));
                    for k in 0..4 {
                        r.scores.insert(format!("s{k}"), if k == *p { *s + 10.0 } else { *s - k as f64 });
                    }
                    r
                })
                .collect();
            let r = evaluate(&trials, DEFAULT_ALPHA).unwrap();
            prop_assert_eq!(r.sid_percent, 100.0 * r.confusion.trace() as f64 / r.confusion.total() as f64);
            for c in &r.per_class {
                prop_assert!((0.0..=1.0).contains(&c.precision));
                prop_assert!((0.0..=1.0).contains(&c.recall));
                prop_assert!((0.0..=1.0).contains(&c.f1));
                if c.precision == 0.0 || c.recall == 0.0 {
                    prop_assert_eq!(c.f1, 0.0);
                }
            }
            if let Some(a) = r.auc {
                prop_assert!((0.0..=1.0).contains(&a));
            }
        }

        #[test]
        fn auc_matches_pair_counting(
            scored in prop::collection::vec((0i32..20, any::<bool>()), 2..200),
        ) {
            let scored: Vec<(f64, bool)> = scored.into_iter().map(|(s, l)| (s as f64 * 0.5, l)).collect();
            if scored.iter().any(|s| s.1) && scored.iter().any(|s| !s.1) {
                prop_assert!((roc_auc(&scored).unwrap() - brute_auc(&scored)).abs() < 1e-12);
            }
        }
    }
}
