//! Detection metrics: equal error rate and the minimum normalized tandem
//! detection cost function (t-DCF), plus the per-utterance score set.
//!
//! Scores are oriented so that higher means more bonafide. A trial is
//! accepted as bonafide when `score >= threshold`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::audio::{Key, TrialEntry};
use crate::{Error, Result};

/// Utterance scores in insertion order, ids unique, all finite.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreSet {
    entries: Vec<(String, f64)>,
    index: BTreeMap<String, usize>,
}

impl ScoreSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: impl IntoIterator<Item = (String, f64)>) -> Result<Self> {
        let mut set = Self::new();
        for (id, s) in entries {
            set.push(id, s)?;
        }
        Ok(set)
    }

    pub fn push(&mut self, utt_id: String, score: f64) -> Result<()> {
        if !score.is_finite() {
            return Err(Error::NonFinite(format!("score of `{utt_id}`")));
        }
        if self.index.contains_key(&utt_id) {
            return Err(Error::DuplicateUtterance { line: self.entries.len() + 1, utt_id });
        }
        self.index.insert(utt_id.clone(), self.entries.len());
        self.entries.push((utt_id, score));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, utt_id: &str) -> Option<f64> {
        self.index.get(utt_id).map(|&i| self.entries[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.entries.iter().map(|(id, s)| (id.as_str(), *s))
    }

    pub fn scores(&self) -> Vec<f64> {
        self.entries.iter().map(|(_, s)| *s).collect()
    }

    /// Parses `utt_id score` lines; blank lines are skipped and any amount
    /// of whitespace separates the fields.
    pub fn parse(text: &str) -> Result<Self> {
        let mut set = Self::new();
        for (n, line) in text.lines().enumerate() {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            if fields.len() != 2 {
                return Err(Error::ProtocolFieldCount { line: n + 1, found: fields.len() });
            }
            let score: f64 = fields[1]
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("line {}: bad score `{}`", n + 1, fields[1])))?;
            set.push(fields[0].into(), score).map_err(|e| match e {
                Error::DuplicateUtterance { utt_id, .. } => Error::DuplicateUtterance { line: n + 1, utt_id },
                other => other,
            })?;
        }
        Ok(set)
    }

    /// One `utt_id score` line per entry, six decimals.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (id, s) in &self.entries {
            let _ = writeln!(out, "{id} {s:.6}");
        }
        out
    }

    /// Splits the scores by the protocol's keys. Every protocol trial must
    /// have a score.
    pub fn keyed(&self, protocol: &[TrialEntry]) -> Result<KeyedScores> {
        let mut bonafide = Vec::new();
        let mut spoof = Vec::new();
        for t in protocol {
            let s = self
                .get(&t.utt_id)
                .ok_or_else(|| Error::InvalidConfig(format!("no score for trial `{}`", t.utt_id)))?;
            match t.key {
                Key::Bonafide => bonafide.push(s),
                Key::Spoof => spoof.push(s),
            }
        }
        KeyedScores::new(bonafide, spoof)
    }
}

/// Scores split by ground truth; both classes non-empty.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyedScores {
    pub bonafide: Vec<f64>,
    pub spoof: Vec<f64>,
}

impl KeyedScores {
    pub fn new(bonafide: Vec<f64>, spoof: Vec<f64>) -> Result<Self> {
        if bonafide.is_empty() || spoof.is_empty() {
            return Err(Error::SingleClass);
        }
        if bonafide.iter().chain(&spoof).any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("scores".into()));
        }
        Ok(Self { bonafide, spoof })
    }

    /// Builds from parallel score and label slices (`true` = bonafide).
    pub fn from_labels(scores: &[f64], is_bonafide: &[bool]) -> Result<Self> {
        if scores.len() != is_bonafide.len() {
            return Err(Error::Shape(format!("{} scores for {} labels", scores.len(), is_bonafide.len())));
        }
        let (b, s): (Vec<_>, Vec<_>) = scores.iter().zip(is_bonafide).partition(|(_, &k)| k);
        Self::new(b.into_iter().map(|(v, _)| *v).collect(), s.into_iter().map(|(v, _)| *v).collect())
    }
}

/// Miss and false-alarm rates at each candidate threshold: every distinct
/// score in ascending order, then `+inf`. Returns (thresholds, P_miss, P_fa).
pub fn rate_curve(k: &KeyedScores) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut all: Vec<(f64, bool)> =
        k.bonafide.iter().map(|&s| (s, true)).chain(k.spoof.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (nb, ns) = (k.bonafide.len() as f64, k.spoof.len() as f64);
    let mut thresholds = Vec::new();
    let mut p_miss = Vec::new();
    let mut p_fa = Vec::new();
    // counts of bonafide strictly below / spoof at or above the threshold
    let (mut bona_below, mut spoof_below) = (0usize, 0usize);
    let mut i = 0;
    while i < all.len() {
        let theta = all[i].0;
        thresholds.push(theta);
        p_miss.push(bona_below as f64 / nb);
        p_fa.push((k.spoof.len() - spoof_below) as f64 / ns);
        while i < all.len() && all[i].0 == theta {
            if all[i].1 {
                bona_below += 1;
            } else {
                spoof_below += 1;
            }
            i += 1;
        }
    }
    thresholds.push(f64::INFINITY);
    p_miss.push(1.0);
    p_fa.push(0.0);
    (thresholds, p_miss, p_fa)
}

/// Locates the equal-error point on a rate curve.
pub fn eer_from_curve(thresholds: &[f64], p_miss: &[f64], p_fa: &[f64]) -> (f64, f64) {
    let i = (0..thresholds.len())
        .find(|&i| p_miss[i] - p_fa[i] >= 0.0)
        .expect("curve ends with P_miss = 1, P_fa = 0");
    let d1 = p_miss[i] - p_fa[i];
    if d1 == 0.0 || i == 0 {
        return (p_miss[i], thresholds[i]);
    }
    let d0 = p_miss[i - 1] - p_fa[i - 1];
    let alpha = -d0 / (d1 - d0);
    let rate = p_miss[i - 1] + alpha * (p_miss[i] - p_miss[i - 1]);
    let theta = if thresholds[i].is_finite() {
        thresholds[i - 1] + alpha * (thresholds[i] - thresholds[i - 1])
    } else {
        thresholds[i - 1]
    };
    (rate, theta)
}

/// Equal error rate and the threshold where it occurs. Between ROC points
/// the crossing is linearly interpolated.
pub fn eer(k: &KeyedScores) -> (f64, f64) {
    let (t, m, f) = rate_curve(k);
    eer_from_curve(&t, &m, &f)
}

/// Priors, costs and the fixed ASV operating point of the t-DCF.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TdcfParams {
    pub p_tar: f64,
    pub p_non: f64,
    pub p_spoof: f64,
    pub c_miss_asv: f64,
    pub c_fa_asv: f64,
    pub c_miss_cm: f64,
    pub c_fa_cm: f64,
    /// ASV miss rate on target trials.
    pub p_miss_asv: f64,
    /// ASV false-alarm rate on non-target trials.
    pub p_fa_asv: f64,
    /// ASV miss rate on spoofed trials (spoofs the ASV rejects).
    pub p_miss_spoof_asv: f64,
}

impl Default for TdcfParams {
    /// Challenge priors and costs; the ASV rates are placeholders for a
    /// fixed ASV system and should be replaced by measured values.
    fn default() -> Self {
        Self {
            p_tar: 0.95 * 0.99,
            p_non: 0.95 * 0.01,
            p_spoof: 0.05,
            c_miss_asv: 1.0,
            c_fa_asv: 10.0,
            c_miss_cm: 1.0,
            c_fa_cm: 10.0,
            p_miss_asv: 0.025,
            p_fa_asv: 0.025,
            p_miss_spoof_asv: 0.30,
        }
    }
}

impl TdcfParams {
    /// `(C1, C2)`:
    /// `C1 = p_tar (C_miss_cm - C_miss_asv P_miss_asv) - p_non C_fa_asv P_fa_asv`,
    /// `C2 = C_fa_cm p_spoof (1 - P_miss_spoof_asv)`.
    pub fn coefficients(&self) -> Result<(f64, f64)> {
        let priors = [self.p_tar, self.p_non, self.p_spoof];
        if priors.iter().any(|p| !(0.0..=1.0).contains(p)) || (priors.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("priors {priors:?} must be in [0, 1] and sum to 1")));
        }
        let rates = [self.p_miss_asv, self.p_fa_asv, self.p_miss_spoof_asv];
        if rates.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidConfig(format!("ASV rates {rates:?} must be in [0, 1]")));
        }
        let c1 = self.p_tar * (self.c_miss_cm - self.c_miss_asv * self.p_miss_asv)
            - self.p_non * self.c_fa_asv * self.p_fa_asv;
        let c2 = self.c_fa_cm * self.p_spoof * (1.0 - self.p_miss_spoof_asv);
        if !(c1 > 0.0 && c2 > 0.0) {
            return Err(Error::NonPositiveCost { c1, c2 });
        }
        Ok((c1, c2))
    }

    /// Normalized cost at the given countermeasure error rates.
    pub fn normalized_cost(&self, p_miss_cm: f64, p_fa_cm: f64) -> Result<f64> {
        let (c1, c2) = self.coefficients()?;
        Ok((c1 * p_miss_cm + c2 * p_fa_cm) / c1.min(c2))
    }
}

/// Minimum normalized t-DCF over all thresholds including reject-all and
/// accept-all, with the minimizing threshold (earliest on ties).
pub fn min_tdcf(k: &KeyedScores, params: &TdcfParams) -> Result<(f64, f64)> {
    let (c1, c2) = params.coefficients()?;
    let norm = c1.min(c2);
    let (t, m, f) = rate_curve(k);
    // accept-all: P_miss = 0, P_fa = 1, same as the lowest threshold
    let mut best = (c2 / norm, f64::NEG_INFINITY);
    for i in 0..t.len() {
        let c = (c1 * m[i] + c2 * f[i]) / norm;
        if c < best.0 {
            best = (c, t[i]);
        }
    }
    Ok(best)
}

/// EER and min t-DCF of one score set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub eer: f64,
    pub eer_threshold: f64,
    pub min_tdcf_norm: f64,
    pub threshold_at_min: f64,
}

impl MetricReport {
    pub fn compute(k: &KeyedScores, params: &TdcfParams) -> Result<Self> {
        let (eer, eer_threshold) = eer(k);
        let (min_tdcf_norm, threshold_at_min) = min_tdcf(k, params)?;
        Ok(Self { eer, eer_threshold, min_tdcf_norm, threshold_at_min })
    }

    /// `eer=<rate> eer_threshold=<score> min_tdcf=<cost> tdcf_threshold=<score>`
    /// with full round-trip precision.
    pub fn to_line(&self) -> String {
        format!(
            "eer={:e} eer_threshold={:e} min_tdcf={:e} tdcf_threshold={:e}",
            self.eer, self.eer_threshold, self.min_tdcf_norm, self.threshold_at_min
        )
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let mut vals = [None; 4];
        for tok in line.split_whitespace() {
            let (k, v) = tok.split_once('=').ok_or_else(|| Error::InvalidConfig(format!("bad token `{tok}`")))?;
            let slot = match k {
                "eer" => 0,
                "eer_threshold" => 1,
                "min_tdcf" => 2,
                "tdcf_threshold" => 3,
                _ => return Err(Error::InvalidConfig(format!("unknown field `{k}`"))),
            };
            vals[slot] = Some(v.parse::<f64>().map_err(|_| Error::InvalidConfig(format!("bad number `{v}`")))?);
        }
        match vals {
            [Some(eer), Some(eer_threshold), Some(min_tdcf_norm), Some(threshold_at_min)] => {
                Ok(Self { eer, eer_threshold, min_tdcf_norm, threshold_at_min })
            }
            _ => Err(Error::InvalidConfig(format!("incomplete metric line `{line}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn ks(b: &[f64], s: &[f64]) -> KeyedScores {
        KeyedScores::new(b.to_vec(), s.to_vec()).unwrap()
    }

    #[test]
    fn eer_examples() {
        assert_eq!(eer(&ks(&[0.9, 0.8], &[0.2, 0.1])).0, 0.0);
        assert_eq!(eer(&ks(&[0.1], &[0.9])).0, 1.0);
        assert_eq!(eer(&ks(&[0.7, 0.3], &[0.5, 0.1])).0, 0.5);
        assert_eq!(eer(&ks(&[0.4, 0.4], &[0.4, 0.4, 0.4])).0, 0.5);
    }

    #[test]
    fn tdcf_endpoints() {
        let p = TdcfParams::default();
        assert_eq!(min_tdcf(&ks(&[0.9, 0.8], &[0.2, 0.1]), &p).unwrap().0, 0.0);
        assert_eq!(min_tdcf(&ks(&[0.5; 3], &[0.5; 4]), &p).unwrap().0, 1.0);
        assert_eq!(min_tdcf(&ks(&[0.1, 0.2], &[0.8, 0.9]), &p).unwrap().0, 1.0);
    }

    #[test]
    fn default_coefficients_are_positive() {
        let (c1, c2) = TdcfParams::default().coefficients().unwrap();
        assert!(c1 > 0.0 && c2 > 0.0);
        let bad = TdcfParams { p_miss_spoof_asv: 1.0, ..Default::default() };
        assert!(matches!(bad.coefficients(), Err(Error::NonPositiveCost { .. })));
        let bad = TdcfParams { p_spoof: 0.5, ..Default::default() };
        assert!(bad.coefficients().is_err());
    }

    #[test]
    fn single_class_is_rejected() {
        assert!(matches!(KeyedScores::new(vec![1.0], vec![]), Err(Error::SingleClass)));
    }

    #[test]
    fn score_text_round_trip() {
        let set = ScoreSet::parse("a  -1.5\n\n b 0.25  \n").unwrap();
        assert_eq!(set.get("a"), Some(-1.5));
        assert_eq!(set.to_text(), "a -1.500000\nb 0.250000\n");
        assert!(matches!(ScoreSet::parse("a 1\na 2"), Err(Error::DuplicateUtterance { line: 2, .. })));
        assert!(ScoreSet::parse("a nan").is_err());
        assert!(ScoreSet::parse("a 1 2").is_err());
    }

    #[test]
    fn metric_line_round_trips() {
        let r = MetricReport { eer: 0.123456789, eer_threshold: -1.0 / 3.0, min_tdcf_norm: 0.5, threshold_at_min: 2.0 };
        assert_eq!(MetricReport::parse_line(&r.to_line()).unwrap(), r);
    }
}
