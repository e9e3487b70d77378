//! Mini-batch training with early stopping, the retrain-on-combined-data
//! protocol, and the model x optimizer experiment grid.
//!
//! Training minimizes MAE directly (the evaluation metric) with the
//! subgradient `sign(pred - actual) / n`, zero at ties. Everything is
//! deterministic given (datasets, config, seed): shuffles come from a
//! seeded generator and each grid cell derives its own seed from
//! (base seed, model, optimizer).

use crate::data::{
    chronological_split, make_windows, Normalizer, TimeSeries, WindowedDataset, HORIZON, LOOKBACK,
};
use crate::error::{Error, Result};
use crate::model::{build_model, Model, ModelName};
use crate::optim::{Optimizer, OptimizerConfig, OptimizerKind};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Training-loop settings. The loss is MAE and is not configurable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Number of non-improving epochs tolerated beyond the best one;
    /// training stops once the streak exceeds this.
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
}

pub const DEFAULT_BATCH_SIZE: usize = 32;
pub const DEFAULT_PATIENCE: usize = 10;
pub const DEFAULT_MAX_EPOCHS: usize = 500;
pub const DEFAULT_SEED: u64 = 42;

impl TrainConfig {
    pub fn new(optimizer: OptimizerConfig) -> Self {
        TrainConfig {
            batch_size: DEFAULT_BATCH_SIZE,
            patience: DEFAULT_PATIENCE,
            max_epochs: DEFAULT_MAX_EPOCHS,
            seed: DEFAULT_SEED,
            optimizer,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max epochs must be at least 1".into()));
        }
        self.optimizer.validate()
    }
}

/// Mean absolute error between aligned `[n, 1]` prediction/target tensors.
pub fn mae(pred: &Tensor, actual: &Tensor) -> Result<f64> {
    if pred.shape() != actual.shape() {
        return Err(Error::Shape(format!(
            "mae: {:?} vs {:?}",
            pred.shape(),
            actual.shape()
        )));
    }
    pred.zip(actual, |p, a| (p - a).abs())?.mean()
}

/// One pass of the model over a whole dataset, scored with MAE.
pub fn evaluate(model: &Model, set: &WindowedDataset) -> Result<f64> {
    let pred = model.predict(set.inputs())?;
    mae(&pred, set.targets())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mae: f64,
    pub val_mae: f64,
}

/// Per-epoch record of one early-stopped training run.
#[derive(Debug, Clone)]
pub struct TrainingHistory {
    pub records: Vec<EpochRecord>,
    /// 1-based epoch attaining the minimum validation MAE.
    pub best_epoch: usize,
    pub stopped_early: bool,
    /// Optimizer steps taken: one per mini-batch.
    pub optimizer_steps: u64,
}

impl TrainingHistory {
    pub fn epochs(&self) -> usize {
        self.records.len()
    }

    pub fn best_val_mae(&self) -> f64 {
        self.records[self.best_epoch - 1].val_mae
    }
}

/// Strict-improvement early stopping: the streak of non-improving epochs
/// must exceed `patience` to stop; ties do not reset the streak.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            since_best: 0,
        }
    }

    /// Feeds one epoch's validation MAE (epochs arrive in order, starting
    /// at 1). Returns `(improved, stop)`.
    pub fn observe(&mut self, epoch: usize, val_mae: f64) -> (bool, bool) {
        if val_mae < self.best {
            self.best = val_mae;
            self.best_epoch = epoch;
            self.since_best = 0;
            (true, false)
        } else {
            self.since_best += 1;
            (false, self.since_best > self.patience)
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_value(&self) -> f64 {
        self.best
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Forward, MAE subgradient, backward, one optimizer step.
fn train_batch(
    model: &mut Model,
    optimizer: &mut Optimizer,
    inputs: &Tensor,
    targets: &Tensor,
) -> Result<()> {
    let (pred, caches) = model.forward(inputs)?;
    let n = pred.shape()[0] as f64;
    let d_pred = pred.zip(targets, |p, a| sign(p - a) / n)?;
    let grads = model.backward(&caches, &d_pred)?;
    let mut params = model.params_mut();
    optimizer.step(&mut params, &grads)
}

fn as_diverged(err: Error, epoch: usize) -> Error {
    match err {
        Error::Numeric(_) => Error::Diverged { epoch },
        other => other,
    }
}

/// Trains with per-epoch validation and early stopping, then restores the
/// best-epoch parameter snapshot.
pub fn train(
    model: &mut Model,
    train_set: &WindowedDataset,
    val_set: &WindowedDataset,
    cfg: &TrainConfig,
) -> Result<TrainingHistory> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Domain(
            "training and validation sets must be non-empty".into(),
        ));
    }
    let mut optimizer = Optimizer::new(cfg.optimizer)?;
    let mut shuffle_rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best_params = model.flat_params();
    let mut records = Vec::new();
    let mut stopped_early = false;
    let mut indices: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        indices.shuffle(&mut shuffle_rng);
        for chunk in indices.chunks(cfg.batch_size) {
            let (inp, tgt) = train_set.gather(chunk)?;
            train_batch(model, &mut optimizer, &inp, &tgt).map_err(|e| as_diverged(e, epoch))?;
        }
        let train_mae = evaluate(model, train_set).map_err(|e| as_diverged(e, epoch))?;
        let val_mae = evaluate(model, val_set).map_err(|e| as_diverged(e, epoch))?;
        if !train_mae.is_finite() || !val_mae.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        records.push(EpochRecord {
            epoch,
            train_mae,
            val_mae,
        });
        let (improved, stop) = stopper.observe(epoch, val_mae);
        if improved {
            best_params = model.flat_params();
        }
        if stop {
            stopped_early = true;
            break;
        }
    }
    model.set_flat_params(&best_params)?;
    Ok(TrainingHistory {
        records,
        best_epoch: stopper.best_epoch(),
        stopped_early,
        optimizer_steps: optimizer.step_count(),
    })
}

/// Trains for exactly `epochs` epochs with no validation and no early
/// stopping. Returns per-epoch training MAE and the optimizer step count.
pub fn train_fixed_epochs(
    model: &mut Model,
    train_set: &WindowedDataset,
    epochs: usize,
    cfg: &TrainConfig,
) -> Result<(Vec<f64>, u64)> {
    cfg.validate()?;
    if epochs == 0 {
        return Err(Error::Config("retraining needs at least one epoch".into()));
    }
    if train_set.is_empty() {
        return Err(Error::Domain("training set must be non-empty".into()));
    }
    let mut optimizer = Optimizer::new(cfg.optimizer)?;
    let mut shuffle_rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut indices: Vec<usize> = (0..train_set.len()).collect();
    let mut per_epoch = Vec::with_capacity(epochs);
    for epoch in 1..=epochs {
        indices.shuffle(&mut shuffle_rng);
        for chunk in indices.chunks(cfg.batch_size) {
            let (inp, tgt) = train_set.gather(chunk)?;
            train_batch(model, &mut optimizer, &inp, &tgt).map_err(|e| as_diverged(e, epoch))?;
        }
        let train_mae = evaluate(model, train_set).map_err(|e| as_diverged(e, epoch))?;
        if !train_mae.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        per_epoch.push(train_mae);
    }
    Ok((per_epoch, optimizer.step_count()))
}

/// Access point for held-out test data. The trainer fetches it exactly once
/// per cell, inside [`retrain_and_evaluate`]; tests can substitute a
/// counting double to enforce that.
pub trait TestData: Sync {
    fn fetch(&self) -> &WindowedDataset;
}

impl TestData for WindowedDataset {
    fn fetch(&self) -> &WindowedDataset {
        self
    }
}

/// Result of the retrain-and-score protocol for one cell.
#[derive(Debug, Clone)]
pub struct RetrainOutcome {
    pub model: Model,
    pub test_mae: f64,
    /// Normalized-scale predictions over the test set, in order.
    pub test_predictions: Vec<f64>,
    pub test_actuals: Vec<f64>,
    pub optimizer_steps: u64,
    pub train_mae_per_epoch: Vec<f64>,
}

/// Reinitializes the model from its seed, trains on the combined
/// train+validation windows for exactly `best_epoch` epochs, then touches
/// the test set once to compute its MAE.
pub fn retrain_and_evaluate<T: TestData + ?Sized>(
    name: ModelName,
    combined: &WindowedDataset,
    best_epoch: usize,
    test: &T,
    cfg: &TrainConfig,
) -> Result<RetrainOutcome> {
    if best_epoch == 0 {
        return Err(Error::Config("best epoch must be at least 1".into()));
    }
    let mut model = build_model(name, cfg.seed)?;
    let (train_mae_per_epoch, optimizer_steps) =
        train_fixed_epochs(&mut model, combined, best_epoch, cfg)?;
    let test_set = test.fetch();
    let pred = model.predict(test_set.inputs())?;
    let test_mae = mae(&pred, test_set.targets())?;
    Ok(RetrainOutcome {
        model,
        test_mae,
        test_predictions: pred.data().to_vec(),
        test_actuals: test_set.targets().data().to_vec(),
        optimizer_steps,
        train_mae_per_epoch,
    })
}

/// One grid cell's summary row.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub model: ModelName,
    pub optimizer: OptimizerKind,
    /// Minimum validation MAE from the initial early-stopped run.
    pub val_mae: Option<f64>,
    /// Test MAE after retraining on train+validation.
    pub test_mae: Option<f64>,
    /// Epochs used for retraining (the best epoch of the initial run).
    pub epochs: usize,
    /// Set when the cell diverged or otherwise failed; the grid carries on.
    pub error: Option<String>,
}

/// Everything one cell produced, for report emitters.
#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub report: EvalReport,
    pub history: Option<TrainingHistory>,
    pub test_predictions: Option<Vec<f64>>,
    pub test_actuals: Option<Vec<f64>>,
    pub model: Option<Model>,
}

/// Windowed, normalized segments ready for training. The normalizer comes
/// from the training segment only, and each segment is windowed on its own.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub normalizer: Normalizer,
    pub train: WindowedDataset,
    pub val: WindowedDataset,
    /// Train+validation re-windowed as one contiguous segment.
    pub combined: WindowedDataset,
    pub test: WindowedDataset,
}

/// Splits, fits the normalizer on the training segment, and windows every
/// segment independently.
pub fn prepare(series: &TimeSeries) -> Result<PreparedData> {
    let (train_s, val_s, test_s) = chronological_split(series)?;
    let normalizer = Normalizer::fit(train_s.values())?;
    let train = make_windows(&normalizer.apply_all(train_s.values()), LOOKBACK, HORIZON)?;
    let val = make_windows(&normalizer.apply_all(val_s.values()), LOOKBACK, HORIZON)?;
    let combined_series = train_s.concat(&val_s)?;
    let combined = make_windows(
        &normalizer.apply_all(combined_series.values()),
        LOOKBACK,
        HORIZON,
    )?;
    let test = make_windows(&normalizer.apply_all(test_s.values()), LOOKBACK, HORIZON)?;
    Ok(PreparedData {
        normalizer,
        train,
        val,
        combined,
        test,
    })
}

/// Deterministic per-cell seed from the base seed and the cell's names
/// (FNV-1a over the three components).
pub fn derive_cell_seed(base: u64, model: ModelName, optimizer: OptimizerKind) -> u64 {
    const OFFSET: u64 = 0xcbf29ce484222325;
    const PRIME: u64 = 0x100000001b3;
    let mut hash = OFFSET;
    for byte in base
        .to_le_bytes()
        .iter()
        .chain(model.as_str().as_bytes())
        .chain(b"/")
        .chain(optimizer.as_str().as_bytes())
    {
        hash ^= u64::from(*byte);
        hash = hash.wrapping_mul(PRIME);
    }
    hash
}

/// Runs one (model, optimizer) cell end to end. Divergence is recorded in
/// the report instead of failing the caller.
pub fn run_cell<T: TestData + ?Sized>(
    name: ModelName,
    kind: OptimizerKind,
    data: &PreparedData,
    test: &T,
    base_cfg: &TrainConfig,
) -> CellOutcome {
    let cfg = TrainConfig {
        seed: derive_cell_seed(base_cfg.seed, name, kind),
        optimizer: OptimizerConfig::default_for(kind),
        ..*base_cfg
    };
    let failed = |err: Error, val: Option<f64>, epochs: usize, hist: Option<TrainingHistory>| {
        CellOutcome {
            report: EvalReport {
                model: name,
                optimizer: kind,
                val_mae: val,
                test_mae: None,
                epochs,
                error: Some(err.to_string()),
            },
            history: hist,
            test_predictions: None,
            test_actuals: None,
            model: None,
        }
    };

    let mut model = match build_model(name, cfg.seed) {
        Ok(m) => m,
        Err(e) => return failed(e, None, 0, None),
    };
    let history = match train(&mut model, &data.train, &data.val, &cfg) {
        Ok(h) => h,
        Err(e) => return failed(e, None, 0, None),
    };
    let val_mae = history.best_val_mae();
    let best_epoch = history.best_epoch;
    let retrain = match retrain_and_evaluate(name, &data.combined, best_epoch, test, &cfg) {
        Ok(r) => r,
        Err(e) => return failed(e, Some(val_mae), best_epoch, Some(history)),
    };
    CellOutcome {
        report: EvalReport {
            model: name,
            optimizer: kind,
            val_mae: Some(val_mae),
            test_mae: Some(retrain.test_mae),
            epochs: best_epoch,
            error: None,
        },
        history: Some(history),
        test_predictions: Some(retrain.test_predictions),
        test_actuals: Some(retrain.test_actuals),
        model: Some(retrain.model),
    }
}

/// Runs the model x optimizer grid in the given order. Cells are
/// independent; `parallelism` bounds concurrent cells (1 = serial, 0 = one
/// per available core). Output order is cell order either way.
pub fn run_experiment_grid(
    series: &TimeSeries,
    models: &[ModelName],
    optimizers: &[OptimizerKind],
    cfg: &TrainConfig,
    parallelism: usize,
) -> Result<Vec<CellOutcome>> {
    let data = prepare(series)?;
    let cells: Vec<(ModelName, OptimizerKind)> = models
        .iter()
        .flat_map(|&m| optimizers.iter().map(move |&o| (m, o)))
        .collect();
    if parallelism == 1 {
        return Ok(cells
            .iter()
            .map(|&(m, o)| run_cell(m, o, &data, &data.test, cfg))
            .collect());
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if parallelism > 0 {
        builder = builder.num_threads(parallelism);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    use rayon::prelude::*;
    Ok(pool.install(|| {
        cells
            .par_iter()
            .map(|&(m, o)| run_cell(m, o, &data, &data.test, cfg))
            .collect()
    }))
}
