use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use super::loss::bce_single;
use super::model_io::AnyModel;
use super::tcn::RECEPTIVE_FIELD;
use super::{Dropout, Example, ReuseModel};
use super::{MlpParams, TcnParams};
use crate::error::{Error, Result};
use crate::rng::{mix64, SplitMix64};
use crate::trace::{
    next_line_labels, prefetch_candidate_features, split_dataset, trace_features, AccessRecord,
    FeatureVector, DEFAULT_LABEL_WINDOW,
};

/// Longest feature history handed to a model.
pub const MAX_WINDOW: usize = super::tcn::WINDOW;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    #[default]
    Tcn,
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub dropout_p: f64,
    pub patience: usize,
    pub seed: u64,
    /// Which predictor to train.
    #[serde(default)]
    pub architecture: Architecture,
    /// Cap on training examples, spaced evenly over the training split.
    /// Validation keeps a quarter of it.
    #[serde(default)]
    pub max_examples: Option<usize>,
    /// Share of the examples that are next-line prefetch candidates.
    #[serde(default)]
    pub candidate_fraction: f64,
    /// Horizon, in accesses, for labelling prefetch candidates.
    #[serde(default = "default_candidate_window")]
    pub candidate_window: usize,
}

fn default_candidate_window() -> usize {
    DEFAULT_LABEL_WINDOW
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 512,
            max_epochs: 80,
            dropout_p: 0.3,
            patience: 10,
            seed: 0,
            architecture: Architecture::Tcn,
            max_examples: None,
            candidate_fraction: 0.0,
            candidate_window: DEFAULT_LABEL_WINDOW,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!(
                "dropout_p must lie in [0, 1), got {}",
                self.dropout_p
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.candidate_fraction) {
            return Err(Error::Config(format!(
                "candidate_fraction must lie in [0, 1), got {}",
                self.candidate_fraction
            )));
        }
        if self.max_examples == Some(0) || self.candidate_window == 0 {
            return Err(Error::Config(
                "max_examples and candidate_window must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Feature sequence with one binary label per access. Every access is an
/// example whose window is the (up to) 64 accesses ending at it.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    features: Vec<FeatureVector>,
    labels: Vec<f64>,
    /// Positions in `features` used as examples.
    ends: Vec<usize>,
    /// Examples with their own windows, after the positional ones.
    extra: Vec<(Vec<FeatureVector>, f64)>,
}

impl Dataset {
    pub fn new(features: Vec<FeatureVector>, labels: Vec<f64>) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature vectors for {} labels",
                features.len(),
                labels.len()
            )));
        }
        let ends = (0..features.len()).collect();
        Ok(Self {
            features,
            labels,
            ends,
            extra: Vec::new(),
        })
    }

    /// Examples for a labelled trace (or a contiguous part of one).
    pub fn from_trace(records: &[AccessRecord]) -> Self {
        let labels = records
            .iter()
            .map(|r| f64::from(u8::from(r.label)))
            .collect();
        Self::new(trace_features(records), labels).expect("lengths agree")
    }

    /// Adds `count` next-line prefetch candidate examples, evenly spaced
    /// over `records`. The window is the trigger's history followed by the
    /// candidate's features; the label says whether the candidate line is
    /// accessed within `label_window` later records.
    pub fn with_prefetch_candidates(
        mut self,
        records: &[AccessRecord],
        label_window: usize,
        count: usize,
    ) -> Self {
        let n = records.len();
        let count = count.min(n);
        if count == 0 {
            return self;
        }
        let features = trace_features(records);
        let labels = next_line_labels(records, label_window);
        let keep = RECEPTIVE_FIELD - 1;
        for k in 0..count {
            let i = k * n / count;
            let start = (i + 1).saturating_sub(keep);
            let mut window = features[start..=i].to_vec();
            window.push(prefetch_candidate_features(
                &records[i],
                records[i].line_id.wrapping_add(1),
            ));
            self.extra.push((window, f64::from(u8::from(labels[i]))));
        }
        self
    }

    pub fn len(&self) -> usize {
        self.ends.len() + self.extra.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn example(&self, k: usize) -> Example<'_> {
        if k >= self.ends.len() {
            let (window, label) = &self.extra[k - self.ends.len()];
            return Example {
                window,
                label: *label,
            };
        }
        let end = self.ends[k];
        let start = (end + 1).saturating_sub(MAX_WINDOW);
        Example {
            window: &self.features[start..=end],
            label: self.labels[end],
        }
    }

    /// Keeps at most `max` examples, evenly spaced in time. Histories are
    /// untouched, so windows still see every preceding access.
    /// Added candidate examples are thinned in the same proportion.
    pub fn thin(&self, max: usize) -> Self {
        let total = self.len();
        if total <= max {
            return self.clone();
        }
        let keep_ends = self.ends.len() * max / total;
        let keep_extra = max - keep_ends;
        let n = self.ends.len();
        let ends = (0..keep_ends)
            .map(|k| self.ends[k * n / keep_ends])
            .collect();
        let m = self.extra.len();
        let extra = (0..keep_extra)
            .map(|k| self.extra[k * m / keep_extra].clone())
            .collect();
        Self {
            features: self.features.clone(),
            labels: self.labels.clone(),
            ends,
            extra,
        }
    }

    pub fn positive_rate(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        (0..self.len()).map(|k| self.example(k).label).sum::<f64>() / self.len() as f64
    }
}

/// Mean eval-mode loss and accuracy at threshold 0.5.
pub fn evaluate<M: ReuseModel>(model: &M, data: &Dataset) -> (f64, f64) {
    if data.is_empty() {
        return (0.0, 0.0);
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    for k in 0..data.len() {
        let ex = data.example(k);
        let y_hat = model.predict(ex.window);
        loss += bce_single(y_hat, ex.label);
        if (y_hat >= 0.5) == (ex.label >= 0.5) {
            correct += 1;
        }
    }
    let n = data.len() as f64;
    (loss / n, correct as f64 / n)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<M> {
    /// Snapshot with the best validation accuracy (the initial model when
    /// no epoch ran).
    pub model: M,
    /// Eval-mode loss over the training set after each completed epoch.
    pub loss_curve: Vec<f64>,
    /// Mean dropout-mode mini-batch loss seen during each epoch.
    pub batch_loss_curve: Vec<f64>,
    pub val_accuracy: Vec<f64>,
    pub best_epoch: Option<usize>,
}

/// Mini-batch Adam training with early stopping on validation accuracy.
///
/// Epoch `e` visits the training set in an order shuffled by a stream
/// derived from `(seed, e)`; batch `b` of that epoch draws dropout masks
/// from a seed derived from `(seed, e, b)`.
pub fn train<M: ReuseModel>(
    init: M,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<M>> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::InvalidInput(
            "training and validation sets must be non-empty".into(),
        ));
    }

    let mut params = init.clone();
    let mut state = AdamState::new(&params);
    let mut best: Option<(M, f64, usize)> = None;
    let mut loss_curve = Vec::new();
    let mut batch_loss_curve = Vec::new();
    let mut val_accuracy = Vec::new();
    let mut stale = 0;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 0..cfg.max_epochs {
        order.sort_unstable();
        SplitMix64::derive(cfg.seed, epoch as u64 + 1).shuffle(&mut order);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<Example<'_>> = chunk.iter().map(|&k| train_set.example(k)).collect();
            let dropout = Dropout {
                p: cfg.dropout_p,
                seed: mix64(cfg.seed ^ mix64(((epoch as u64) << 32) | b as u64)),
            };
            let (loss, grad) = params.loss_and_grad(&batch, Some(dropout))?;
            total += loss * chunk.len() as f64;
            adam_step(&mut params, &grad, &mut state, cfg.learning_rate)?;
        }
        batch_loss_curve.push(total / train_set.len() as f64);
        loss_curve.push(evaluate(&params, train_set).0);

        let (_, acc) = evaluate(&params, val_set);
        val_accuracy.push(acc);
        if best.as_ref().is_none_or(|(_, b, _)| acc > *b) {
            best = Some((params.clone(), acc, epoch));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }

    let (model, best_epoch) = match best {
        Some((m, _, e)) => (m, Some(e)),
        None => (init, None),
    };
    Ok(TrainOutcome {
        model,
        loss_curve,
        batch_loss_curve,
        val_accuracy,
        best_epoch,
    })
}

fn sized_set(records: &[AccessRecord], cfg: &TrainConfig, cap: Option<usize>) -> Dataset {
    let total = cap.unwrap_or(records.len());
    let candidates = (total as f64 * cfg.candidate_fraction) as usize;
    Dataset::from_trace(records)
        .thin(total - candidates)
        .with_prefetch_candidates(records, cfg.candidate_window, candidates)
}

/// Training and validation sets from the first two parts of a 70/15/15
/// split of a labelled trace.
pub fn training_sets(records: &[AccessRecord], cfg: &TrainConfig) -> Result<(Dataset, Dataset)> {
    cfg.validate()?;
    let (train_part, val_part, _) = split_dataset(records)?;
    let train_set = sized_set(&train_part, cfg, cfg.max_examples);
    let val_set = sized_set(&val_part, cfg, cfg.max_examples.map(|m| (m / 4).max(1)));
    Ok((train_set, val_set))
}

/// Initializes the configured architecture from `cfg.seed` and trains it
/// on a labelled trace.
pub fn train_on_trace(
    records: &[AccessRecord],
    cfg: &TrainConfig,
) -> Result<TrainOutcome<AnyModel>> {
    let (train_set, val_set) = training_sets(records, cfg)?;
    fn wrap<M>(o: TrainOutcome<M>, f: fn(M) -> AnyModel) -> TrainOutcome<AnyModel> {
        TrainOutcome {
            model: f(o.model),
            loss_curve: o.loss_curve,
            batch_loss_curve: o.batch_loss_curve,
            val_accuracy: o.val_accuracy,
            best_epoch: o.best_epoch,
        }
    }
    Ok(match cfg.architecture {
        Architecture::Tcn => wrap(
            train(TcnParams::init(cfg.seed), &train_set, &val_set, cfg)?,
            AnyModel::Tcn,
        ),
        Architecture::Mlp => wrap(
            train(MlpParams::init(cfg.seed), &train_set, &val_set, cfg)?,
            AnyModel::Mlp,
        ),
    })
}
