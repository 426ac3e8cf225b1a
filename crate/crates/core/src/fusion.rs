//! Score calibration and fusion by prior-weighted logistic regression, and
//! greedy forward selection of the fused systems.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::metrics::{eer, min_tdcf, KeyedScores, ScoreSet, TdcfParams};
use crate::{Error, Result};

/// Effective prior used for replay (physical access) systems.
pub const PA_EFFECTIVE_PRIOR: f64 = 0.672;
/// Effective prior used for synthesis/conversion (logical access) systems.
pub const LA_EFFECTIVE_PRIOR: f64 = 0.707;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationConfig {
    pub effective_prior: f64,
    pub max_iterations: usize,
    /// Stop once an iteration lowers the objective by less than this.
    pub tol: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self { effective_prior: PA_EFFECTIVE_PRIOR, max_iterations: 100, tol: 1e-6 }
    }
}

impl CalibrationConfig {
    pub fn with_prior(effective_prior: f64) -> Self {
        Self { effective_prior, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.effective_prior > 0.0 && self.effective_prior < 1.0) {
            return Err(Error::InvalidConfig(format!("effective prior {} outside (0, 1)", self.effective_prior)));
        }
        if self.max_iterations == 0 || !(self.tol > 0.0) {
            return Err(Error::InvalidConfig("max_iterations and tol must be positive".into()));
        }
        Ok(())
    }
}

/// Affine map from per-system scores to a fused log-likelihood ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl CalibrationModel {
    pub fn apply(&self, scores: &[f64]) -> Result<f64> {
        if scores.len() != self.weights.len() {
            return Err(Error::Shape(format!("{} scores for {} weights", scores.len(), self.weights.len())));
        }
        Ok(self.weights.iter().zip(scores).map(|(w, s)| w * s).sum::<f64>() + self.bias)
    }
}

/// Result of [`fit_calibration`]: the model and the objective value after
/// every iteration (the first entry is the starting point).
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationFit {
    pub model: CalibrationModel,
    pub objective_trace: Vec<f64>,
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

struct Problem<'a> {
    rows: &'a [Vec<f64>],
    labels: &'a [bool],
    offset: f64,
    w_bona: f64,
    w_spoof: f64,
    dim: usize,
}

impl Problem<'_> {
    fn score(&self, theta: &[f64], row: &[f64]) -> f64 {
        row.iter().zip(theta).map(|(s, w)| s * w).sum::<f64>() + theta[self.dim] + self.offset
    }

    fn objective(&self, theta: &[f64]) -> f64 {
        self.rows
            .iter()
            .zip(self.labels)
            .map(|(r, &b)| {
                let f = self.score(theta, r);
                if b {
                    self.w_bona * softplus(-f)
                } else {
                    self.w_spoof * softplus(f)
                }
            })
            .sum()
    }

    /// Gradient and Hessian with respect to (w, b).
    fn derivatives(&self, theta: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.dim + 1;
        let mut g = vec![0.0; n];
        let mut h = vec![0.0; n * n];
        let mut x = vec![0.0; n];
        for (r, &b) in self.rows.iter().zip(self.labels) {
            let f = self.score(theta, r);
            let p = sigmoid(f);
            let (wt, dl) = if b { (self.w_bona, p - 1.0) } else { (self.w_spoof, p) };
            x[..self.dim].copy_from_slice(r);
            x[self.dim] = 1.0;
            let curv = wt * p * (1.0 - p);
            for i in 0..n {
                g[i] += wt * dl * x[i];
                for j in 0..n {
                    h[i * n + j] += curv * x[i] * x[j];
                }
            }
        }
        (g, h)
    }
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<f64>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))?;
        if a[piv * n + col].abs() < 1e-300 {
            return None;
        }
        if piv != col {
            for k in 0..n {
                a.swap(piv * n + k, col * n + k);
            }
            b.swap(piv, col);
        }
        for r in col + 1..n {
            let factor = a[r * n + col] / a[col * n + col];
            for k in col..n {
                a[r * n + k] -= factor * a[col * n + k];
            }
            b[r] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r * n + k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r * n + r];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Fits `f = w . s + b + logit(prior)` by minimizing
/// `prior/N_b * sum_b log(1 + e^-f) + (1 - prior)/N_s * sum_s log(1 + e^f)`
/// with damped Newton steps and backtracking from `w = 0, b = 0`.
/// `rows` holds one score vector per trial; `is_bonafide` the keys.
pub fn fit_calibration(rows: &[Vec<f64>], is_bonafide: &[bool], cfg: &CalibrationConfig) -> Result<CalibrationFit> {
    cfg.validate()?;
    if rows.len() != is_bonafide.len() {
        return Err(Error::Shape(format!("{} score rows for {} keys", rows.len(), is_bonafide.len())));
    }
    let dim = rows.first().map(Vec::len).ok_or_else(|| Error::Empty("calibration trials".into()))?;
    if dim == 0 || rows.iter().any(|r| r.len() != dim) {
        return Err(Error::Shape("score rows must share one non-zero width".into()));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("calibration scores".into()));
    }
    let nb = is_bonafide.iter().filter(|&&b| b).count();
    let ns = is_bonafide.len() - nb;
    if nb == 0 || ns == 0 {
        return Err(Error::SingleClass);
    }
    let pi = cfg.effective_prior;
    let problem = Problem {
        rows,
        labels: is_bonafide,
        offset: libm::log(pi / (1.0 - pi)),
        w_bona: pi / nb as f64,
        w_spoof: (1.0 - pi) / ns as f64,
        dim,
    };
    let n = dim + 1;
    let mut theta = vec![0.0; n];
    let mut obj = problem.objective(&theta);
    let mut trace = vec![obj];
    for _ in 0..cfg.max_iterations {
        let (g, mut h) = problem.derivatives(&theta);
        let scale = (0..n).map(|i| h[i * n + i]).fold(0.0f64, f64::max).max(1e-12);
        for i in 0..n {
            h[i * n + i] += 1e-9 * scale;
        }
        let step = solve(h, g.iter().map(|v| -v).collect())
            .unwrap_or_else(|| g.iter().map(|v| -v).collect());
        let slope: f64 = g.iter().zip(&step).map(|(a, b)| a * b).sum();
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand: Vec<f64> = theta.iter().zip(&step).map(|(a, d)| a + t * d).collect();
            let c = problem.objective(&cand);
            if c.is_finite() && c <= obj + 1e-4 * t * slope.min(0.0) {
                accepted = Some((cand, c));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, c)) = accepted else {
            return Ok(finish(theta, dim, trace));
        };
        let decrease = obj - c;
        if c <= obj {
            theta = cand;
            obj = c;
            trace.push(obj);
        }
        if decrease < cfg.tol {
            return Ok(finish(theta, dim, trace));
        }
    }
    Err(Error::NoConvergence { iterations: cfg.max_iterations, objective: obj })
}

fn finish(theta: Vec<f64>, dim: usize, objective_trace: Vec<f64>) -> CalibrationFit {
    CalibrationFit { model: CalibrationModel { weights: theta[..dim].to_vec(), bias: theta[dim] }, objective_trace }
}

/// Applies the model to every trial row, keyed by `utt_ids`.
pub fn apply_calibration(model: &CalibrationModel, utt_ids: &[String], rows: &[Vec<f64>]) -> Result<ScoreSet> {
    if utt_ids.len() != rows.len() {
        return Err(Error::Shape(format!("{} ids for {} score rows", utt_ids.len(), rows.len())));
    }
    let mut out = ScoreSet::new();
    for (id, r) in utt_ids.iter().zip(rows) {
        out.push(id.clone(), model.apply(r)?)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionMetric {
    MinTdcf,
    Eer,
}

impl FusionMetric {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tdcf" | "min_tdcf" => Ok(Self::MinTdcf),
            "eer" => Ok(Self::Eer),
            _ => Err(Error::InvalidConfig(format!("unknown fusion metric `{s}`"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::MinTdcf => "min_tdcf",
            Self::Eer => "eer",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreedyConfig {
    pub calibration: CalibrationConfig,
    pub metric: FusionMetric,
    /// A candidate is added only if it lowers the metric by more than this.
    pub improvement_tol: f64,
    pub tdcf: TdcfParams,
}

impl Default for GreedyConfig {
    fn default() -> Self {
        Self {
            calibration: CalibrationConfig::default(),
            metric: FusionMetric::MinTdcf,
            improvement_tol: 1e-4,
            tdcf: TdcfParams::default(),
        }
    }
}

/// One accepted selection step.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionStep {
    pub system: String,
    pub eer: f64,
    pub min_tdcf: f64,
    pub objective_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionPlan {
    pub metric: FusionMetric,
    /// Selected systems in selection order.
    pub selected: Vec<String>,
    pub steps: Vec<FusionStep>,
    /// Weights follow `selected`.
    pub model: CalibrationModel,
}

impl FusionPlan {
    pub fn metric_values(&self) -> Vec<f64> {
        self.steps
            .iter()
            .map(|s| match self.metric {
                FusionMetric::MinTdcf => s.min_tdcf,
                FusionMetric::Eer => s.eer,
            })
            .collect()
    }

    /// Structured text report: one `step` line per accepted system, then
    /// the fused weights and bias.
    pub fn to_report(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "metric {}", self.metric.as_str());
        for (i, s) in self.steps.iter().enumerate() {
            let _ = writeln!(
                out,
                "step {} system={} eer={:.6} min_tdcf={:.6} calibration_iterations={}",
                i + 1,
                s.system,
                s.eer,
                s.min_tdcf,
                s.objective_trace.len().saturating_sub(1)
            );
        }
        for (name, w) in self.selected.iter().zip(&self.model.weights) {
            let _ = writeln!(out, "weight {name} {w:e}");
        }
        let _ = writeln!(out, "bias {:e}", self.model.bias);
        out
    }

    /// Fused scores for trials given as one score per selected system,
    /// looked up by system name.
    pub fn apply(&self, systems: &[(String, ScoreSet)], utt_ids: &[String]) -> Result<ScoreSet> {
        let cols: Vec<&ScoreSet> = self
            .selected
            .iter()
            .map(|name| {
                systems
                    .iter()
                    .find(|(n, _)| n == name)
                    .map(|(_, s)| s)
                    .ok_or_else(|| Error::InvalidConfig(format!("missing scores for system `{name}`")))
            })
            .collect::<Result<_>>()?;
        let rows = utt_ids
            .iter()
            .map(|id| {
                cols.iter()
                    .map(|s| s.get(id).ok_or_else(|| Error::InvalidConfig(format!("no score for trial `{id}`"))))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        apply_calibration(&self.model, utt_ids, &rows)
    }
}

struct Candidate {
    fit: CalibrationFit,
    eer: f64,
    min_tdcf: f64,
}

fn evaluate(columns: &[&[f64]], labels: &[bool], cfg: &GreedyConfig) -> Result<Candidate> {
    let rows: Vec<Vec<f64>> = (0..labels.len()).map(|t| columns.iter().map(|c| c[t]).collect()).collect();
    let fit = fit_calibration(&rows, labels, &cfg.calibration)?;
    let fused: Vec<f64> = rows.iter().map(|r| fit.model.apply(r)).collect::<Result<_>>()?;
    let k = KeyedScores::from_labels(&fused, labels)?;
    let (e, _) = eer(&k);
    let (t, _) = min_tdcf(&k, &cfg.tdcf)?;
    Ok(Candidate { fit, eer: e, min_tdcf: t })
}

/// Greedy forward selection on development scores. `systems` pairs a name
/// with one score per trial (aligned with `labels`, `true` = bonafide).
/// Starts from the best single system and keeps adding the candidate that
/// lowers the metric most, while the gain exceeds `improvement_tol`.
/// Candidates are visited in name order so ties resolve deterministically.
pub fn greedy_select(systems: &[(String, Vec<f64>)], labels: &[bool], cfg: &GreedyConfig) -> Result<FusionPlan> {
    if systems.is_empty() {
        return Err(Error::Empty("fusion needs at least one system".into()));
    }
    if let Some((name, _)) = systems.iter().find(|(_, s)| s.len() != labels.len()) {
        return Err(Error::Shape(format!("system `{name}` has the wrong number of scores")));
    }
    let mut order: Vec<usize> = (0..systems.len()).collect();
    order.sort_by(|&a, &b| systems[a].0.cmp(&systems[b].0));
    let value = |c: &Candidate| match cfg.metric {
        FusionMetric::MinTdcf => c.min_tdcf,
        FusionMetric::Eer => c.eer,
    };

    let mut chosen: Vec<usize> = Vec::new();
    let mut steps: Vec<FusionStep> = Vec::new();
    let mut current: Option<(f64, CalibrationModel)> = None;
    loop {
        let mut best: Option<(usize, Candidate)> = None;
        for &i in order.iter().filter(|i| !chosen.contains(i)) {
            let cols: Vec<&[f64]> =
                chosen.iter().chain(core::iter::once(&i)).map(|&j| systems[j].1.as_slice()).collect();
            let cand = evaluate(&cols, labels, cfg)?;
            if best.as_ref().is_none_or(|(_, b)| value(&cand) < value(b)) {
                best = Some((i, cand));
            }
        }
        let Some((i, cand)) = best else { break };
        let accept = match &current {
            None => true,
            Some((v, _)) => value(&cand) < v - cfg.improvement_tol,
        };
        if !accept {
            break;
        }
        current = Some((value(&cand), cand.fit.model.clone()));
        chosen.push(i);
        steps.push(FusionStep {
            system: systems[i].0.clone(),
            eer: cand.eer,
            min_tdcf: cand.min_tdcf,
            objective_trace: cand.fit.objective_trace,
        });
    }
    let (_, model) = current.expect("at least one system is always selected");
    Ok(FusionPlan {
        metric: cfg.metric,
        selected: chosen.iter().map(|&i| systems[i].0.clone()).collect(),
        steps,
        model,
    })
}
