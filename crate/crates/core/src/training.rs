//! Label spaces, the training loop and utterance scoring.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::audio::{Key, Mode, TrialEntry};
use crate::dsp::FeatureMatrix;
use crate::featmap::{pad_batch, unify_and_segment, SegmenterConfig};
use crate::metrics::{eer, KeyedScores};
use crate::models::{Model, ModelInput};
use crate::nn::{log_softmax_vec, Adam, Forward, OptimizerConfig, ParamStore};
use crate::{Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Binary,
    Multiclass,
}

impl Objective {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(Self::Binary),
            "multiclass" => Ok(Self::Multiclass),
            _ => Err(Error::InvalidConfig(format!("unknown objective `{s}`"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Binary => "binary",
            Self::Multiclass => "multiclass",
        }
    }
}

/// Ordered class labels for one condition and objective.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSpace {
    pub mode: Mode,
    pub objective: Objective,
    pub labels: Vec<String>,
    pub bonafide_index: usize,
}

impl LabelSpace {
    /// Binary: `[spoof, bonafide]`. Multiclass: bonafide followed by the
    /// condition's attack (PA) or system (LA) ids.
    pub fn new(mode: Mode, objective: Objective) -> Self {
        match objective {
            Objective::Binary => Self {
                mode,
                objective,
                labels: vec!["spoof".into(), "bonafide".into()],
                bonafide_index: 1,
            },
            Objective::Multiclass => {
                let mut labels = vec!["bonafide".to_string()];
                labels.extend(mode.spoof_ids().iter().map(|s| s.to_string()));
                Self { mode, objective, labels, bonafide_index: 0 }
            }
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_of(&self, entry: &TrialEntry) -> Result<usize> {
        match (self.objective, entry.key) {
            (Objective::Binary, Key::Bonafide) | (Objective::Multiclass, Key::Bonafide) => Ok(self.bonafide_index),
            (Objective::Binary, Key::Spoof) => Ok(1 - self.bonafide_index),
            (Objective::Multiclass, Key::Spoof) => self
                .labels
                .iter()
                .position(|l| *l == entry.system_id)
                .filter(|&i| i != self.bonafide_index)
                .ok_or_else(|| Error::UnknownLabel(entry.system_id.clone())),
        }
    }
}

/// Class index of every protocol entry, keyed by utterance id.
pub fn make_labels(protocol: &[TrialEntry], space: &LabelSpace) -> Result<BTreeMap<String, usize>> {
    protocol.iter().map(|e| Ok((e.utt_id.clone(), space.class_of(e)?))).collect()
}

/// `log_softmax(logits)[bonafide_index]`.
pub fn bonafide_score<F: Real>(logits: &[F], space: &LabelSpace) -> f64 {
    log_softmax_vec(logits)[space.bonafide_index].as_f64()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    DevEer,
    DevAcc,
}

impl Selection {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "eer" | "dev_eer" => Ok(Self::DevEer),
            "acc" | "dev_acc" => Ok(Self::DevAcc),
            _ => Err(Error::InvalidConfig(format!("unknown selection criterion `{s}`"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::DevEer => "dev_eer",
            Self::DevAcc => "dev_acc",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub selection: Selection,
    pub epochs: usize,
    /// Segments per step for fixed-size models, utterances per step for
    /// whole-utterance models.
    pub batch_size: usize,
    /// Unified feature map geometry for fixed-size models.
    pub segmenter: SegmenterConfig,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            selection: Selection::DevEer,
            epochs: 30,
            batch_size: 64,
            segmenter: SegmenterConfig::default(),
            optimizer: OptimizerConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("epochs and batch_size must be at least 1".into()));
        }
        self.segmenter.validate()?;
        self.optimizer.validate()
    }
}

/// Per-epoch summary. `epoch` counts from 1.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_eer: f64,
    pub dev_acc: f64,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    pub selected: bool,
}

impl EpochReport {
    pub fn to_line(&self) -> String {
        format!(
            "epoch={} loss={:e} dev_eer={:e} dev_acc={:e} lr={:e} selected={}",
            self.epoch, self.train_loss, self.dev_eer, self.dev_acc, self.lr, self.selected
        )
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let mut fields = BTreeMap::new();
        for tok in line.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("bad epoch log token `{tok}`")))?;
            fields.insert(k, v);
        }
        let get = |k: &str| fields.get(k).copied().ok_or_else(|| Error::InvalidConfig(format!("epoch log missing `{k}`")));
        let num = |k: &str| -> Result<f64> {
            get(k)?.parse().map_err(|_| Error::InvalidConfig(format!("bad value for `{k}`")))
        };
        Ok(Self {
            epoch: get("epoch")?.parse().map_err(|_| Error::InvalidConfig("bad epoch".into()))?,
            train_loss: num("loss")?,
            dev_eer: num("dev_eer")?,
            dev_acc: num("dev_acc")?,
            lr: num("lr")?,
            selected: match get("selected")? {
                "true" => true,
                "false" => false,
                v => return Err(Error::InvalidConfig(format!("bad selected flag `{v}`"))),
            },
        })
    }
}

/// Index of the epoch chosen by `selection`; the earliest wins ties.
pub fn select_epoch(reports: &[EpochReport], selection: Selection) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in reports.iter().enumerate() {
        let better = match best {
            None => true,
            Some(b) => match selection {
                Selection::DevEer => r.dev_eer < reports[b].dev_eer,
                Selection::DevAcc => r.dev_acc > reports[b].dev_acc,
            },
        };
        if better {
            best = Some(i);
        }
    }
    best
}

/// One utterance with its features and class index.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledUtterance {
    pub utt_id: String,
    pub features: FeatureMatrix,
    pub label: usize,
}

/// Training result: the model restored to the selected epoch.
#[derive(Debug, Clone)]
pub struct TrainOutcome<F: Real> {
    pub model: Model<F>,
    pub reports: Vec<EpochReport>,
    /// 1-based epoch of the returned parameters.
    pub selected_epoch: usize,
    pub selection_value: f64,
    /// Learning rate of every optimizer step, in order.
    pub lr_trace: Vec<f64>,
}

/// Per-utterance dev outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct DevEvaluation {
    pub scores: Vec<f64>,
    pub predictions: Vec<usize>,
}

impl DevEvaluation {
    pub fn eer(&self, data: &[LabeledUtterance], space: &LabelSpace) -> Result<f64> {
        let keys: Vec<bool> = data.iter().map(|u| u.label == space.bonafide_index).collect();
        Ok(eer(&KeyedScores::from_labels(&self.scores, &keys)?).0)
    }

    pub fn accuracy(&self, data: &[LabeledUtterance]) -> f64 {
        let hits = data.iter().zip(&self.predictions).filter(|(u, &p)| u.label == p).count();
        hits as f64 / data.len().max(1) as f64
    }
}

/// Mean segment log-posteriors of every utterance (inference mode), turned
/// into bonafide scores and argmax predictions.
pub fn evaluate<F: Real>(
    model: &Model<F>,
    data: &[LabeledUtterance],
    space: &LabelSpace,
    segmenter: &SegmenterConfig,
    batch_size: usize,
) -> Result<DevEvaluation> {
    let mut scores = Vec::with_capacity(data.len());
    let mut predictions = Vec::with_capacity(data.len());
    for u in data {
        let mean = mean_log_posterior(model, &u.features, segmenter, batch_size)?;
        scores.push(mean[space.bonafide_index]);
        let argmax = (0..mean.len()).fold(0, |b, i| if mean[i] > mean[b] { i } else { b });
        predictions.push(argmax);
    }
    Ok(DevEvaluation { scores, predictions })
}

fn mean_log_posterior<F: Real>(
    model: &Model<F>,
    feat: &FeatureMatrix,
    segmenter: &SegmenterConfig,
    batch_size: usize,
) -> Result<Vec<f64>> {
    let k = model.config().n_classes;
    let mut sum = vec![0.0; k];
    let mut count = 0usize;
    if model.config().kind.accepts_variable_length() {
        let input = ModelInput::from_padded(&pad_batch(&[feat])?)?;
        let logits = model.logits(&input)?;
        for (s, v) in sum.iter_mut().zip(log_softmax_vec(logits.data())) {
            *s += v.as_f64();
        }
        count = 1;
    } else {
        let set = unify_and_segment("", feat, segmenter)?;
        for chunk in set.segments.chunks(batch_size.max(1)) {
            let segs: Vec<&[f32]> = chunk.iter().map(Vec::as_slice).collect();
            let logits = model.logits(&ModelInput::from_segments(&segs, set.m, set.dim)?)?;
            for row in logits.data().chunks(k) {
                for (s, v) in sum.iter_mut().zip(log_softmax_vec(row)) {
                    *s += v.as_f64();
                }
                count += 1;
            }
        }
    }
    Ok(sum.into_iter().map(|s| s / count as f64).collect())
}

/// Utterance score: the bonafide log-probability averaged over the unified
/// segments (fixed-size models), or of one masked forward pass over the
/// whole utterance (mean-std model).
pub fn score_utterance<F: Real>(
    model: &Model<F>,
    feat: &FeatureMatrix,
    segmenter: &SegmenterConfig,
    space: &LabelSpace,
) -> Result<f64> {
    if model.config().n_classes != space.len() {
        return Err(Error::Shape(format!(
            "model has {} classes, label space {}",
            model.config().n_classes,
            space.len()
        )));
    }
    Ok(mean_log_posterior(model, feat, segmenter, 64)?[space.bonafide_index])
}

enum Batches {
    /// (utterance, segment) pairs.
    Segments(Vec<(usize, usize)>),
    /// Utterances sorted by length.
    Whole(Vec<usize>),
}

fn segment_at(feat: &FeatureMatrix, seg: &SegmenterConfig, j: usize) -> Vec<f32> {
    let t = feat.frames();
    let start = j * seg.step();
    let mut out = Vec::with_capacity(seg.m * feat.dim());
    for i in start..start + seg.m {
        out.extend_from_slice(feat.row(i % t));
    }
    out
}

/// Trains `model` with cross-entropy, Adam and the warm-up schedule,
/// evaluates the dev set after every epoch and returns the model from the
/// epoch chosen by `cfg.selection`. Shuffling is seeded by `cfg.seed`.
pub fn train<F: Real>(
    mut model: Model<F>,
    train_data: &[LabeledUtterance],
    dev_data: &[LabeledUtterance],
    space: &LabelSpace,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<F>> {
    cfg.validate()?;
    if train_data.is_empty() || dev_data.is_empty() {
        return Err(Error::Empty("training and dev data must be non-empty".into()));
    }
    if model.config().n_classes != space.len() {
        return Err(Error::InvalidConfig(format!(
            "model has {} classes but the label space has {}",
            model.config().n_classes,
            space.len()
        )));
    }
    if let Some(u) = train_data.iter().chain(dev_data).find(|u| u.label >= space.len()) {
        return Err(Error::LabelOutOfRange { label: u.label, classes: space.len() });
    }
    let whole = model.config().kind.accepts_variable_length();
    let seg = cfg.segmenter;
    let batches = if whole {
        let mut order: Vec<usize> = (0..train_data.len()).collect();
        order.sort_by_key(|&i| (train_data[i].features.frames(), i));
        Batches::Whole(order)
    } else {
        Batches::Segments(
            train_data
                .iter()
                .enumerate()
                .flat_map(|(i, u)| (0..seg.segment_count(u.features.frames())).map(move |j| (i, j)))
                .collect(),
        )
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.optimizer, model.store())?;
    let mut reports: Vec<EpochReport> = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, ParamStore<F>)> = None;
    let mut lr_trace = Vec::new();
    let mut step = 0usize;

    for epoch in 1..=cfg.epochs {
        let groups: Vec<Vec<usize>> = match &batches {
            Batches::Segments(items) => {
                let mut idx: Vec<usize> = (0..items.len()).collect();
                idx.shuffle(&mut rng);
                idx.chunks(cfg.batch_size).map(<[usize]>::to_vec).collect()
            }
            Batches::Whole(order) => {
                let mut g: Vec<Vec<usize>> = order.chunks(cfg.batch_size).map(<[usize]>::to_vec).collect();
                g.shuffle(&mut rng);
                g
            }
        };
        let (mut loss_sum, mut loss_weight) = (0.0f64, 0usize);
        for group in &groups {
            let (input, labels) = match &batches {
                Batches::Segments(items) => {
                    let segs: Vec<Vec<f32>> = group
                        .iter()
                        .map(|&g| {
                            let (u, j) = items[g];
                            segment_at(&train_data[u].features, &seg, j)
                        })
                        .collect();
                    let refs: Vec<&[f32]> = segs.iter().map(Vec::as_slice).collect();
                    let dim = train_data[items[group[0]].0].features.dim();
                    let labels = group.iter().map(|&g| train_data[items[g].0].label).collect::<Vec<_>>();
                    (ModelInput::from_segments(&refs, seg.m, dim)?, labels)
                }
                Batches::Whole(_) => {
                    let feats: Vec<&FeatureMatrix> = group.iter().map(|&i| &train_data[i].features).collect();
                    let labels = group.iter().map(|&i| train_data[i].label).collect::<Vec<_>>();
                    (ModelInput::from_padded(&pad_batch(&feats)?)?, labels)
                }
            };
            step += 1;
            let (loss, grads, updates) = {
                let mut f = Forward::new(model.store(), true);
                let logits = model.build_logits(&mut f, &input)?;
                let loss_var = f.tape_mut().cross_entropy(logits, &labels)?;
                let loss = f.value(loss_var).item().as_f64();
                if !loss.is_finite() {
                    return Err(Error::Diverged { epoch, step, loss });
                }
                let (tape, updates) = f.finish();
                (loss, tape.into_param_grads(loss_var, model.store().len())?, updates)
            };
            updates.apply(model.store_mut());
            lr_trace.push(adam.step_scheduled(model.store_mut(), &grads)?);
            loss_sum += loss * labels.len() as f64;
            loss_weight += labels.len();
        }

        let dev = evaluate(&model, dev_data, space, &seg, cfg.batch_size)?;
        reports.push(EpochReport {
            epoch,
            train_loss: loss_sum / loss_weight as f64,
            dev_eer: dev.eer(dev_data, space)?,
            dev_acc: dev.accuracy(dev_data),
            lr: *lr_trace.last().expect("every epoch has a step"),
            selected: false,
        });
        let chosen = select_epoch(&reports, cfg.selection).expect("non-empty reports");
        if chosen == reports.len() - 1 {
            best = Some((epoch, model.store().clone()));
        }
    }

    let (selected_epoch, store) = best.expect("at least one epoch ran");
    reports[selected_epoch - 1].selected = true;
    *model.store_mut() = store;
    let r = &reports[selected_epoch - 1];
    let selection_value = match cfg.selection {
        Selection::DevEer => r.dev_eer,
        Selection::DevAcc => r.dev_acc,
    };
    Ok(TrainOutcome { model, reports, selected_epoch, selection_value, lr_trace })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(epoch: usize, eer: f64, acc: f64) -> EpochReport {
        EpochReport { epoch, train_loss: 0.5, dev_eer: eer, dev_acc: acc, lr: 1e-3, selected: false }
    }

    #[test]
    fn selection_examples() {
        let r = [report(1, 0.05, 0.90), report(2, 0.08, 0.95)];
        assert_eq!(select_epoch(&r, Selection::DevEer), Some(0));
        assert_eq!(select_epoch(&r, Selection::DevAcc), Some(1));
        let tied = [report(1, 0.05, 0.9), report(2, 0.05, 0.9)];
        assert_eq!(select_epoch(&tied, Selection::DevEer), Some(0));
        assert_eq!(select_epoch(&tied, Selection::DevAcc), Some(0));
        assert_eq!(select_epoch(&[], Selection::DevAcc), None);
    }

    #[test]
    fn label_spaces() {
        let pa = LabelSpace::new(Mode::Pa, Objective::Multiclass);
        assert_eq!(pa.labels, ["bonafide", "AA", "AB", "AC", "BA", "BB", "BC", "CA", "CB", "CC"]);
        let la = LabelSpace::new(Mode::La, Objective::Multiclass);
        assert_eq!(la.labels, ["bonafide", "SS_1", "SS_2", "SS_4", "US_1", "VC_1", "VC_4"]);
        let bin = LabelSpace::new(Mode::La, Objective::Binary);
        assert_eq!(bin.labels, ["spoof", "bonafide"]);
        assert_eq!(bin.bonafide_index, 1);
    }

    fn entry(system: &str, key: Key) -> TrialEntry {
        TrialEntry { speaker_id: "s".into(), utt_id: "u".into(), system_id: system.into(), key }
    }

    #[test]
    fn class_lookup() {
        let pa = LabelSpace::new(Mode::Pa, Objective::Multiclass);
        assert_eq!(pa.class_of(&entry("AA", Key::Spoof)).unwrap(), 1);
        assert_eq!(pa.class_of(&entry("-", Key::Bonafide)).unwrap(), 0);
        let bin = LabelSpace::new(Mode::Pa, Objective::Binary);
        assert_eq!(bin.class_of(&entry("-", Key::Bonafide)).unwrap(), bin.bonafide_index);
        assert_eq!(bin.class_of(&entry("CC", Key::Spoof)).unwrap(), 0);
        let la = LabelSpace::new(Mode::La, Objective::Multiclass);
        assert_eq!(la.class_of(&entry("ZZ", Key::Spoof)), Err(Error::UnknownLabel("ZZ".into())));
        assert!(la.class_of(&entry("bonafide", Key::Spoof)).is_err());
    }

    #[test]
    fn bonafide_score_examples() {
        let bin = LabelSpace::new(Mode::Pa, Objective::Binary);
        assert!((bonafide_score(&[0.0f64, 0.0], &bin) - (0.5f64).ln()).abs() < 1e-12);
        let s = bonafide_score(&[-10.0f64, 10.0], &bin);
        assert!(s < 0.0 && s > -1e-8);
        let a = bonafide_score(&[0.3f64, -1.2], &bin);
        let b = bonafide_score(&[100.3f64, 98.8], &bin);
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn epoch_line_round_trips() {
        let mut r = report(3, 0.0125, 0.975);
        r.selected = true;
        r.lr = 3.3e-4;
        assert_eq!(EpochReport::parse_line(&r.to_line()).unwrap(), r);
        assert!(EpochReport::parse_line("epoch=1 loss=x").is_err());
    }
}
