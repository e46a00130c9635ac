use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    build_upstream, pack_sequences, pack_windows, EncoderClassifier, CLASSES, SEQ_LEN, STATES,
    WINDOW,
};
use crate::dataset::{Dataset, DatasetKind};
use crate::error::{Error, Result};
use crate::nn::{softmax_cross_entropy, AdamConfig, AdamState, Mode, Network};
use crate::tensor::Tensor;

const EVAL_BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub pretrain_epochs: usize,
    pub end_to_end_epochs: usize,
    pub seed: u64,
    /// Fraction of samples used for fitting; the rest is validation.
    pub train_fraction: f64,
    pub normalize_scores: bool,
    /// Train only the downstream stack during end-to-end training.
    pub freeze_upstream: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            batch_size: 32,
            pretrain_epochs: 3,
            end_to_end_epochs: 10,
            seed: 0,
            train_fraction: 0.8,
            normalize_scores: true,
            freeze_upstream: false,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(
                "batch_size must be at least 2 (batch norm)".into(),
            ));
        }
        if !(self.lr > 0.0)
            || !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || !(self.eps > 0.0)
        {
            return Err(Error::Config("invalid Adam hyperparameters".into()));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: String,
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub records: Vec<EpochRecord>,
    /// `(truth, prediction)` on the validation split after the last epoch.
    pub validation: Vec<(usize, usize)>,
}

impl TrainingReport {
    pub fn last(&self, split: Split) -> Option<&EpochRecord> {
        self.records.iter().rev().find(|r| r.split == split)
    }

    /// Line-delimited `epoch,split,loss,accuracy` records, preceded by an
    /// optional `# config=` echo line.
    pub fn to_csv(&self, config_echo: Option<&str>) -> String {
        let mut out = String::new();
        if let Some(cfg) = config_echo {
            let _ = writeln!(out, "# config={cfg}");
        }
        out.push_str("stage,epoch,split,loss,accuracy\n");
        for r in &self.records {
            let split = match r.split {
                Split::Train => "train",
                Split::Validation => "validation",
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.stage, r.epoch, split, r.loss, r.accuracy
            );
        }
        out
    }
}

fn split_indices(
    n: usize,
    fraction: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let n_train = ((n as f64) * fraction).round() as usize;
    if n_train < 2 || n_train >= n {
        return Err(Error::Data(format!(
            "{n} samples cannot be split {fraction} into non-empty train and validation sets"
        )));
    }
    let val = idx.split_off(n_train);
    Ok((idx, val))
}

fn require_all_classes(ds: &Dataset, idx: &[usize], classes: usize) -> Result<()> {
    let mut seen = vec![false; classes];
    for &i in idx {
        seen[ds.samples[i].label] = true;
    }
    match seen.iter().position(|s| !s) {
        Some(c) => Err(Error::Data(format!(
            "class {c} is absent from the training split"
        ))),
        None => Ok(()),
    }
}

fn check_dataset(ds: &Dataset, kind: DatasetKind, classes: usize, n: usize) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::Data("dataset is empty".into()));
    }
    if ds.kind != kind || ds.classes != classes || ds.n != n || ds.w != WINDOW {
        return Err(Error::Data(format!(
            "dataset layout {:?} classes={} n={} w={} does not match expected {kind:?} classes={classes} n={n} w={WINDOW}",
            ds.kind, ds.classes, ds.n, ds.w
        )));
    }
    Ok(())
}

fn diverged(epoch: usize, step: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite(_) => Error::Diverged {
            epoch,
            step,
            loss: f64::NAN,
        },
        other => other,
    }
}

fn correct(logits: &Tensor, labels: &[usize]) -> usize {
    logits
        .argmax_rows()
        .iter()
        .zip(labels)
        .filter(|(p, y)| p == y)
        .count()
}

/// Mean loss and argmax predictions of a frozen window classifier.
pub fn evaluate_windows(net: &Network, ds: &Dataset) -> Result<(f64, Vec<usize>)> {
    evaluate(ds, |chunk| {
        net.infer(&pack_windows(chunk.iter().map(|s| s.values.as_slice()))?)
    })
}

/// Mean loss and argmax predictions of a frozen encoder-classifier.
pub fn evaluate_sequences(model: &EncoderClassifier, ds: &Dataset) -> Result<(f64, Vec<usize>)> {
    evaluate(ds, |chunk| {
        model.infer_batch(&pack_sequences(chunk.iter().map(|s| s.values.as_slice()))?)
    })
}

fn evaluate<F>(ds: &Dataset, run: F) -> Result<(f64, Vec<usize>)>
where
    F: Fn(&[crate::dataset::Sample]) -> Result<Tensor> + Sync,
{
    if ds.is_empty() {
        return Err(Error::Data("cannot evaluate an empty dataset".into()));
    }
    let parts = ds
        .samples
        .par_chunks(EVAL_BATCH)
        .map(|chunk| {
            let logits = run(chunk)?;
            let labels: Vec<usize> = chunk.iter().map(|s| s.label).collect();
            let (loss, _) = softmax_cross_entropy(&logits, &labels)?;
            Ok((loss * chunk.len() as f64, logits.argmax_rows()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = 0.0;
    let mut preds = Vec::with_capacity(ds.len());
    for (l, p) in parts {
        total += l;
        preds.extend(p);
    }
    Ok((total / ds.len() as f64, preds))
}

fn accuracy(preds: &[usize], ds: &Dataset) -> f64 {
    let ok = preds
        .iter()
        .zip(&ds.samples)
        .filter(|(p, s)| **p == s.label)
        .count();
    ok as f64 / ds.len().max(1) as f64
}

/// Trains the upstream stack on labeled single windows (four states).
///
/// The validation split is drawn from `dataset` with `cfg.train_fraction`.
pub fn pretrain_upstream(
    dataset: &Dataset,
    cfg: &TrainingConfig,
) -> Result<(Network, TrainingReport)> {
    cfg.validate()?;
    check_dataset(dataset, DatasetKind::Windows, STATES, 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = build_upstream(&mut rng);
    let (train_idx, val_idx) = split_indices(dataset.len(), cfg.train_fraction, &mut rng)?;
    require_all_classes(dataset, &train_idx, STATES)?;
    let val = dataset.subset(&val_idx);

    let mut adam = AdamState::new(cfg.adam(), net.param_sizes());
    let mut report = TrainingReport::default();
    let mut order = train_idx.clone();
    let mut step = 0;
    for epoch in 1..=cfg.pretrain_epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut hits, mut seen) = (0.0, 0, 0);
        for batch in order.chunks(cfg.batch_size).filter(|b| b.len() >= 2) {
            step += 1;
            let x = pack_windows(batch.iter().map(|&i| dataset.samples[i].values.as_slice()))?;
            let labels: Vec<usize> = batch.iter().map(|&i| dataset.samples[i].label).collect();
            let (logits, tape) = net
                .forward(&x, Mode::Train)
                .map_err(diverged(epoch, step))?;
            let (loss, grad) = softmax_cross_entropy(&logits, &labels)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, step, loss });
            }
            let (_, grads) = net.backward(&tape, &grad)?;
            adam.step(&mut net.params_mut(), &grads.flat());
            loss_sum += loss * batch.len() as f64;
            hits += correct(&logits, &labels);
            seen += batch.len();
        }
        let (val_loss, preds) = evaluate_windows(&net, &val).map_err(diverged(epoch, step))?;
        push_epoch(
            &mut report,
            "pretrain",
            epoch,
            loss_sum,
            hits,
            seen,
            val_loss,
            accuracy(&preds, &val),
        );
        if epoch == cfg.pretrain_epochs {
            report.validation = val.samples.iter().map(|s| s.label).zip(preds).collect();
        }
    }
    Ok((net, report))
}

#[allow(clippy::too_many_arguments)]
fn push_epoch(
    report: &mut TrainingReport,
    stage: &str,
    epoch: usize,
    loss_sum: f64,
    hits: usize,
    seen: usize,
    val_loss: f64,
    val_acc: f64,
) {
    let seen = seen.max(1) as f64;
    log::info!(
        "{stage} epoch {epoch}: train loss {:.4} acc {:.3} | val loss {val_loss:.4} acc {val_acc:.3}",
        loss_sum / seen,
        hits as f64 / seen
    );
    report.records.push(EpochRecord {
        stage: stage.into(),
        epoch,
        split: Split::Train,
        loss: loss_sum / seen,
        accuracy: hits as f64 / seen,
    });
    report.records.push(EpochRecord {
        stage: stage.into(),
        epoch,
        split: Split::Validation,
        loss: val_loss,
        accuracy: val_acc,
    });
}

/// Jointly trains a pretrained upstream and a freshly initialized downstream
/// on labeled `n·w` sequences (seven classes).
pub fn train_end_to_end(
    dataset: &Dataset,
    upstream: Network,
    cfg: &TrainingConfig,
) -> Result<(EncoderClassifier, TrainingReport)> {
    cfg.validate()?;
    check_dataset(dataset, DatasetKind::Sequences, CLASSES, SEQ_LEN)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut model = EncoderClassifier::with_upstream(upstream, &mut rng);
    model.normalize_scores = cfg.normalize_scores;
    let (train_idx, val_idx) = split_indices(dataset.len(), cfg.train_fraction, &mut rng)?;
    require_all_classes(dataset, &train_idx, CLASSES)?;
    let val = dataset.subset(&val_idx);

    let train_up = !cfg.freeze_upstream;
    let mut adam_up = AdamState::new(cfg.adam(), model.upstream.param_sizes());
    let mut adam_down = AdamState::new(cfg.adam(), model.downstream.param_sizes());
    let mut report = TrainingReport::default();
    let mut order = train_idx.clone();
    let mut step = 0;
    for epoch in 1..=cfg.end_to_end_epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut hits, mut seen) = (0.0, 0, 0);
        for batch in order.chunks(cfg.batch_size).filter(|b| b.len() >= 2) {
            step += 1;
            let x = pack_sequences(batch.iter().map(|&i| dataset.samples[i].values.as_slice()))?;
            let labels: Vec<usize> = batch.iter().map(|&i| dataset.samples[i].label).collect();
            let (logits, tape) = model
                .forward(&x, Mode::Train, train_up)
                .map_err(diverged(epoch, step))?;
            let (loss, grad) = softmax_cross_entropy(&logits, &labels)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, step, loss });
            }
            let (g_up, g_down) = model.backward(&tape, &grad)?;
            if let Some(g_up) = g_up {
                adam_up.step(&mut model.upstream.params_mut(), &g_up.flat());
            }
            adam_down.step(&mut model.downstream.params_mut(), &g_down.flat());
            loss_sum += loss * batch.len() as f64;
            hits += correct(&logits, &labels);
            seen += batch.len();
        }
        let (val_loss, preds) = evaluate_sequences(&model, &val).map_err(diverged(epoch, step))?;
        push_epoch(
            &mut report,
            "end-to-end",
            epoch,
            loss_sum,
            hits,
            seen,
            val_loss,
            accuracy(&preds, &val),
        );
        if epoch == cfg.end_to_end_epochs {
            report.validation = val.samples.iter().map(|s| s.label).zip(preds).collect();
        }
    }
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Sample;
    use rand::Rng;

    fn toy_windows(per_class: usize, classes: &[usize], seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ds = Dataset::new(DatasetKind::Windows, STATES, 1, WINDOW);
        for &c in classes {
            for _ in 0..per_class {
                let level = 0.2 + 0.3 * c as f64;
                ds.push(Sample {
                    label: c,
                    reviewed: true,
                    source: "toy".into(),
                    end_index: 0,
                    values: (0..WINDOW)
                        .map(|_| level + rng.random_range(-0.05..0.05))
                        .collect(),
                })
                .unwrap();
            }
        }
        ds
    }

    fn quick_cfg() -> TrainingConfig {
        TrainingConfig {
            pretrain_epochs: 2,
            end_to_end_epochs: 1,
            batch_size: 8,
            seed: 9,
            ..TrainingConfig::default()
        }
    }

    #[test]
    fn single_class_dataset_is_rejected() {
        let ds = toy_windows(20, &[2], 1);
        let err = pretrain_upstream(&ds, &quick_cfg()).unwrap_err();
        assert!(err.to_string().contains("absent"), "{err}");
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let ds = Dataset::new(DatasetKind::Windows, STATES, 1, WINDOW);
        assert!(pretrain_upstream(&ds, &quick_cfg()).is_err());
    }

    #[test]
    fn pretraining_is_deterministic_and_learns_levels() {
        let ds = toy_windows(12, &[0, 1, 2, 3], 2);
        let cfg = TrainingConfig {
            pretrain_epochs: 6,
            ..quick_cfg()
        };
        let (a, report) = pretrain_upstream(&ds, &cfg).unwrap();
        let (b, _) = pretrain_upstream(&ds, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(report.last(Split::Validation).unwrap().accuracy >= 0.75);
        assert_eq!(report.records.len(), 12);
    }

    #[test]
    fn bad_split_fraction_is_a_config_error() {
        let cfg = TrainingConfig {
            train_fraction: 1.0,
            ..quick_cfg()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn report_csv_has_header_and_echo() {
        let report = TrainingReport {
            records: vec![EpochRecord {
                stage: "pretrain".into(),
                epoch: 1,
                split: Split::Train,
                loss: 0.5,
                accuracy: 0.75,
            }],
            validation: vec![],
        };
        let csv = report.to_csv(Some("{}"));
        assert_eq!(
            csv,
            "# config={}\nstage,epoch,split,loss,accuracy\npretrain,1,train,0.5,0.75\n"
        );
    }

    #[test]
    fn end_to_end_runs_on_a_tiny_dataset() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut ds = Dataset::new(DatasetKind::Sequences, CLASSES, SEQ_LEN, WINDOW);
        for i in 0..28 {
            let c = i % CLASSES;
            ds.push(Sample {
                label: c,
                reviewed: true,
                source: "toy".into(),
                end_index: 0,
                values: (0..SEQ_LEN * WINDOW)
                    .map(|t| 0.1 * c as f64 * (t / WINDOW) as f64 + rng.random_range(-0.02..0.02))
                    .collect(),
            })
            .unwrap();
        }
        let up = build_upstream(&mut ChaCha8Rng::seed_from_u64(1));
        let (m, report) = train_end_to_end(&ds, up.clone(), &quick_cfg()).unwrap();
        assert_eq!(report.records.len(), 2);
        assert!(report.records.iter().all(|r| r.loss.is_finite()));
        let frozen = TrainingConfig {
            freeze_upstream: true,
            ..quick_cfg()
        };
        let (mf, _) = train_end_to_end(&ds, up.clone(), &frozen).unwrap();
        assert_eq!(mf.upstream, up);
        assert_ne!(m.upstream, up);
    }
}
