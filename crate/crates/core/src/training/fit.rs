use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{make_folds, AdamState, FoldPlan, Grouping, Metrics, TrainConfig, TrainError};
use crate::model::{EncoderConfig, SkipCnnModel};
use crate::seed;
use crate::signal::TrialSet;
use crate::tensor::{Mode, Tape, Tensor};

const TAG_VAL_SPLIT: u64 = 0x7661_6c00;
const TAG_SHUFFLE: u64 = 0x7368_0000_0000;
const TAG_DROPOUT: u64 = 0x6472_0000_0000;
const TAG_FOLDS: u64 = 0x666f_6c64;

/// `[batch, C, T]` tensor of the selected trials, narrowed to `f32`.
pub fn batch_tensor(trials: &TrialSet, indices: &[usize]) -> Tensor<f32> {
    let (c, t) = (trials.n_channels(), trials.n_samples());
    let mut data = Vec::with_capacity(indices.len() * c * t);
    for &i in indices {
        data.extend(trials.trial(i).iter().map(|&v| v as f32));
    }
    Tensor::new(vec![indices.len(), c, t], data).expect("trial slices have C*T values")
}

pub fn one_hot(labels: &[u8], n_classes: usize) -> Tensor<f32> {
    Tensor::from_fn(&[labels.len(), n_classes], |i| {
        if labels[i / n_classes] as usize == i % n_classes {
            1.0
        } else {
            0.0
        }
    })
}

fn argmax(row: &[f32]) -> u8 {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best as u8
}

fn check_labels(model: &SkipCnnModel, trials: &TrialSet) -> Result<(), TrainError> {
    let n = model.config().n_classes;
    if let Some(&l) = trials.labels.iter().find(|&&l| l as usize >= n) {
        return Err(TrainError::Config(format!("label {l} outside the model's {n} classes")));
    }
    let c = model.config();
    if trials.n_channels() != c.input_channels || trials.n_samples() != c.input_samples {
        return Err(TrainError::Config(format!(
            "trials are {}x{}, model expects {}x{}",
            trials.n_channels(),
            trials.n_samples(),
            c.input_channels,
            c.input_samples
        )));
    }
    Ok(())
}

/// Eval-mode argmax predictions, `batch_size` trials at a time. The model's
/// mode is restored afterwards.
pub fn predict(
    model: &mut SkipCnnModel,
    trials: &TrialSet,
    indices: &[usize],
    batch_size: usize,
) -> Result<Vec<u8>, TrainError> {
    let mode = model.mode();
    model.set_mode(Mode::Eval);
    let mut out = Vec::with_capacity(indices.len());
    // Eval mode draws no randomness; the generator is never touched.
    let mut rng = seed::rng(0);
    for chunk in indices.chunks(batch_size.max(1)) {
        let y = model.forward(&batch_tensor(trials, chunk), &mut rng);
        let y = match y {
            Ok(y) => y,
            Err(e) => {
                model.set_mode(mode);
                return Err(e.into());
            }
        };
        let n = model.config().n_classes;
        out.extend(y.data().chunks(n).map(argmax));
    }
    model.set_mode(mode);
    Ok(out)
}

pub fn evaluate(
    model: &mut SkipCnnModel,
    trials: &TrialSet,
    indices: &[usize],
) -> Result<Metrics, TrainError> {
    if indices.is_empty() {
        return Err(TrainError::EmptySplit("no trials to evaluate".into()));
    }
    check_labels(model, trials)?;
    let pred = predict(model, trials, indices, 128)?;
    let truth: Vec<u8> = indices.iter().map(|&i| trials.labels[i]).collect();
    Metrics::from_predictions(&truth, &pred, model.config().n_classes)
}

/// Holds out `fraction` of `indices` for validation, per class where a
/// class has enough trials, otherwise from the pool. Returns `(train, val)`.
pub fn validation_split(
    trials: &TrialSet,
    indices: &[usize],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), TrainError> {
    let mut rng = seed::derived_rng(seed, TAG_VAL_SPLIT);
    let mut by_class: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
    for &i in indices {
        by_class.entry(trials.labels[i]).or_default().push(i);
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (_, mut members) in by_class {
        members.shuffle(&mut rng);
        let take = ((members.len() as f64 * fraction).round() as usize).min(members.len() - 1);
        val.extend_from_slice(&members[..take]);
        train.extend_from_slice(&members[take..]);
    }
    if val.is_empty() && train.len() > 1 {
        train.shuffle(&mut rng);
        val.push(train.pop().expect("non-empty"));
    }
    if train.is_empty() || val.is_empty() {
        return Err(TrainError::EmptySplit(format!(
            "{} trials cannot be split into train and validation",
            indices.len()
        )));
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

/// One pass over `indices` in a seeded order. Returns the mean loss.
pub fn train_epoch(
    model: &mut SkipCnnModel,
    adam: &mut AdamState<f32>,
    trials: &TrialSet,
    indices: &[usize],
    config: &TrainConfig,
    epoch: usize,
) -> Result<f64, TrainError> {
    if indices.is_empty() {
        return Err(TrainError::EmptySplit("no training trials".into()));
    }
    model.set_mode(Mode::Train);
    let n_classes = model.config().n_classes;
    let names: Vec<String> = model.parameters().into_iter().map(|(n, _)| n).collect();
    let mut order = indices.to_vec();
    order.shuffle(&mut seed::derived_rng(config.seed, TAG_SHUFFLE | epoch as u64));
    let mut dropout_rng = seed::derived_rng(config.seed, TAG_DROPOUT | epoch as u64);
    let mut total = 0.0;
    for batch in order.chunks(config.batch_size) {
        let mut tape = Tape::new();
        let params = model.bind(&mut tape);
        let x = tape.constant(batch_tensor(trials, batch));
        let y = model.forward_on(&mut tape, &params, x, &mut dropout_rng)?;
        let labels: Vec<u8> = batch.iter().map(|&i| trials.labels[i]).collect();
        let target = tape.constant(one_hot(&labels, n_classes));
        let loss = tape.mse_loss(y, target)?;
        let value = tape.value(loss).data()[0];
        if !value.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch });
        }
        total += value as f64 * batch.len() as f64;
        if model.is_frozen() {
            continue;
        }
        tape.backward(loss)?;
        let grads: Vec<&[f32]> = params
            .vars
            .iter()
            .map(|&v| tape.grad(v).expect("parameters are gradient leaves"))
            .collect();
        adam.step(&names, &mut model.parameters_mut(), &grads)?;
    }
    Ok(total / indices.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Present on validation epochs.
    pub val_accuracy: Option<f64>,
    pub is_best: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    pub fn epochs_run(&self) -> usize {
        self.records.last().map_or(0, |r| r.epoch)
    }

    pub fn validations(&self) -> usize {
        self.records.iter().filter(|r| r.val_accuracy.is_some()).count()
    }

    pub fn best_val_accuracy(&self) -> Option<f64> {
        self.records
            .iter()
            .filter_map(|r| r.val_accuracy)
            .fold(None, |a, v| Some(a.map_or(v, |a: f64| a.max(v))))
    }

    /// `epoch,train_loss,val_accuracy,is_best`; accuracy blank between validations.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_accuracy,is_best\n");
        for r in &self.records {
            let acc = r.val_accuracy.map(|a| a.to_string()).unwrap_or_default();
            s.push_str(&format!("{},{},{},{}\n", r.epoch, r.train_loss, acc, r.is_best));
        }
        s
    }
}

/// Trains on `train`, validating on `val` every `validate_every` epochs, and
/// returns the best snapshot (eval mode) with the history.
///
/// Stops after `patience` consecutive validations without a strictly higher
/// accuracy, or at `max_epochs`.
pub fn fit(
    mut model: SkipCnnModel,
    trials: &TrialSet,
    train: &[usize],
    val: &[usize],
    config: &TrainConfig,
) -> Result<(SkipCnnModel, History), TrainError> {
    config.validate()?;
    check_labels(&model, trials)?;
    if train.is_empty() || val.is_empty() {
        return Err(TrainError::EmptySplit("training and validation sets must be non-empty".into()));
    }
    let mut adam = config.adam()?;
    let mut history = History::default();
    let mut best: Option<(f64, SkipCnnModel)> = None;
    let mut stale = 0;
    for epoch in 1..=config.max_epochs {
        let train_loss = train_epoch(&mut model, &mut adam, trials, train, config, epoch)?;
        let due = epoch % config.validate_every == 0
            || (epoch == config.max_epochs && best.is_none());
        let mut record = EpochRecord {
            epoch,
            train_loss,
            val_accuracy: None,
            is_best: false,
        };
        if due {
            let acc = evaluate(&mut model, trials, val)?.accuracy;
            record.val_accuracy = Some(acc);
            if best.as_ref().map_or(true, |(b, _)| acc > *b) {
                record.is_best = true;
                let mut snap = model.clone();
                snap.set_mode(Mode::Eval);
                best = Some((acc, snap));
                stale = 0;
            } else {
                stale += 1;
            }
        }
        history.records.push(record);
        if stale >= config.patience {
            break;
        }
    }
    let (_, model) = best.expect("at least one validation runs");
    Ok((model, history))
}

#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub fold: usize,
    pub model: SkipCnnModel,
    pub history: History,
    pub metrics: Metrics,
}

/// Trains a model on every fold but `fold` and tests it on `fold`.
pub fn train_fold(
    model: SkipCnnModel,
    trials: &TrialSet,
    fold: usize,
    plan: &FoldPlan,
    config: &TrainConfig,
) -> Result<FoldOutcome, TrainError> {
    if fold >= plan.k || plan.assignments.len() != trials.n_trials() {
        return Err(TrainError::Config(format!(
            "fold {fold} does not belong to a {}-fold plan over {} trials",
            plan.k,
            trials.n_trials()
        )));
    }
    if plan.grouping == Grouping::BySubject {
        plan.check_subject_disjoint(trials, fold)?;
    }
    let test = plan.test_indices(fold);
    let pool = plan.train_indices(fold);
    if test.is_empty() || pool.is_empty() {
        return Err(TrainError::EmptySplit(format!("fold {fold} has an empty side")));
    }
    let (train, val) = validation_split(trials, &pool, config.val_fraction, config.seed)?;
    let (mut model, history) = fit(model, trials, &train, &val, config)?;
    let metrics = evaluate(&mut model, trials, &test)?;
    Ok(FoldOutcome {
        fold,
        model,
        history,
        metrics,
    })
}

#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub plan: FoldPlan,
    pub folds: Vec<FoldOutcome>,
    pub pooled: Metrics,
}

/// Per-fold seeds: model initialisation and training stream.
fn fold_seeds(master: u64, fold: usize) -> (u64, u64) {
    (
        seed::derive(master, 2 * fold as u64),
        seed::derive(master, 2 * fold as u64 + 1),
    )
}

fn fold_plan_seed(master: u64) -> u64 {
    seed::derive(master, TAG_FOLDS)
}

/// Builds the plan from `config.seed` and runs [`cross_validate_with_plan`].
pub fn cross_validate(
    trials: &TrialSet,
    encoder: &EncoderConfig,
    config: &TrainConfig,
    k: usize,
    grouping: Grouping,
    jobs: usize,
) -> Result<CvOutcome, TrainError> {
    let plan = make_folds(trials, k, grouping, fold_plan_seed(config.seed))?;
    cross_validate_with_plan(trials, encoder, config, &plan, jobs)
}

/// One fresh model per fold; the encoder's input size is taken from the
/// trials. Folds run on up to `jobs` threads; results do not depend on it.
pub fn cross_validate_with_plan(
    trials: &TrialSet,
    encoder: &EncoderConfig,
    config: &TrainConfig,
    plan: &FoldPlan,
    jobs: usize,
) -> Result<CvOutcome, TrainError> {
    config.validate()?;
    let encoder = EncoderConfig {
        input_channels: trials.n_channels(),
        input_samples: trials.n_samples(),
        ..encoder.clone()
    };
    encoder.validate()?;
    if plan.grouping == Grouping::BySubject {
        for f in 0..plan.k {
            plan.check_subject_disjoint(trials, f)?;
        }
    }
    let run = |fold: usize| -> Result<FoldOutcome, TrainError> {
        let (model_seed, train_seed) = fold_seeds(config.seed, fold);
        let model = SkipCnnModel::new(encoder.clone(), model_seed)?;
        let cfg = TrainConfig {
            seed: train_seed,
            ..config.clone()
        };
        train_fold(model, trials, fold, plan, &cfg)
    };
    let folds: Vec<FoldOutcome> = if jobs <= 1 {
        (0..plan.k).map(run).collect::<Result<_, _>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| TrainError::Config(format!("thread pool: {e}")))?;
        pool.install(|| (0..plan.k).into_par_iter().map(run).collect::<Result<_, _>>())?
    };
    let parts: Vec<Metrics> = folds.iter().map(|f| f.metrics.clone()).collect();
    let pooled = Metrics::pooled(&parts)?;
    Ok(CvOutcome {
        plan: plan.clone(),
        folds,
        pooled,
    })
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub seed: u64,
    pub skip: bool,
    pub pooled: Metrics,
}

#[derive(Debug, Clone)]
pub struct AblationOutcome {
    pub rows: Vec<AblationRow>,
    /// The fold plan each seed's two variants shared.
    pub plans: Vec<(u64, FoldPlan)>,
    /// Mean over seeds of `accuracy(skip) - accuracy(no skip)`.
    pub mean_difference: f64,
}

/// Cross-validates the skip and no-skip variants for every seed, both on the
/// same fold plan and with the same initial weights.
pub fn run_ablation(
    trials: &TrialSet,
    encoder: &EncoderConfig,
    config: &TrainConfig,
    k: usize,
    grouping: Grouping,
    seeds: &[u64],
    jobs: usize,
) -> Result<AblationOutcome, TrainError> {
    if seeds.len() < 2 {
        return Err(TrainError::Config(format!(
            "ablation needs at least 2 seeds, got {}",
            seeds.len()
        )));
    }
    let mut rows = Vec::new();
    let mut plans = Vec::new();
    let mut diff = 0.0;
    for &s in seeds {
        let cfg = TrainConfig {
            seed: s,
            ..config.clone()
        };
        let plan = make_folds(trials, k, grouping, fold_plan_seed(s))?;
        let mut acc = [0.0; 2];
        for (v, skip) in [true, false].into_iter().enumerate() {
            let enc = EncoderConfig {
                skip_enabled: skip,
                ..encoder.clone()
            };
            let out = cross_validate_with_plan(trials, &enc, &cfg, &plan, jobs)?;
            debug_assert_eq!(out.plan, plan);
            acc[v] = out.pooled.accuracy;
            rows.push(AblationRow {
                seed: s,
                skip,
                pooled: out.pooled,
            });
        }
        diff += acc[0] - acc[1];
        plans.push((s, plan));
    }
    Ok(AblationOutcome {
        rows,
        plans,
        mean_difference: diff / seeds.len() as f64,
    })
}

/// One row per (seed, variant) and a closing `mean` row holding the mean
/// paired accuracy difference. Percentages, two decimals.
pub fn ablation_csv(outcome: &AblationOutcome) -> String {
    let mut s = String::from("seed,variant,accuracy,macro_precision,macro_recall,macro_f1\n");
    for r in &outcome.rows {
        let [a, p, rc, f] = r.pooled.summary_percent();
        let variant = if r.skip { "skip" } else { "noskip" };
        s.push_str(&format!("{},{variant},{a},{p},{rc},{f}\n", r.seed));
    }
    s.push_str(&format!(
        "mean,skip-noskip,{:.2},,,\n",
        100.0 * outcome.mean_difference
    ));
    s
}
