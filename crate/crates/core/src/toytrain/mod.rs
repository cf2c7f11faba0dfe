//! A desk-scale transducer used to compare the two criteria under transcript
//! noise: synthetic one-hot "speech", a linear encoder, a stateless one-token
//! decoder, an additive tanh joiner, mini-batch gradient descent and greedy
//! decoding.

mod data;
mod model;

pub use data::{generate_task_data, render_features, Features, TaskData, ToyTask, Utterance};
pub use model::{forward, greedy_decode, ToyModelParams};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corruption::{
    corpus_wer, corrupt_dataset, report_corruption, CorpusWer, CorruptionError, CorruptionKind, CorruptionReport,
    CorruptionSpec,
};
use crate::graphs::{GraphError, PenaltyConfig};
use crate::loss::{loss, Criterion, LossError};
use crate::rng::{derive_seed, seeded};
use crate::vocab::{Transcript, VocabError};
use model::{backward, forward_cached};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("model produced non-finite logits")]
    NonFiniteLogits,
    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Corruption(#[from] CorruptionError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    /// Heavy-ball momentum; 0 gives plain gradient descent.
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.03,
            momentum: 0.9,
            epochs: 20,
            batch_size: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub task: ToyTask,
    /// Applied to training transcripts only; eval transcripts stay clean.
    pub corruption: CorruptionSpec,
    pub criterion: Criterion,
    pub penalties: PenaltyConfig,
    pub optimizer: OptimizerConfig,
    pub hidden_dim: usize,
    pub max_symbols_per_frame: usize,
    /// Seeds parameter init and batch order.
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: ToyTask::default(),
            corruption: CorruptionSpec::clean(7),
            criterion: Criterion::Rnnt,
            penalties: PenaltyConfig::default(),
            optimizer: OptimizerConfig::default(),
            hidden_dim: 32,
            max_symbols_per_frame: 3,
            seed: 3,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.task.validate()?;
        self.corruption.validate()?;
        self.penalties.validate()?;
        let o = &self.optimizer;
        if o.epochs < 1 {
            return Err(TrainError::InvalidConfig("epochs must be >= 1".into()));
        }
        if !(o.learning_rate >= 0.0) || !o.learning_rate.is_finite() {
            return Err(TrainError::InvalidConfig("learning_rate must be finite and >= 0".into()));
        }
        if !(0.0..1.0).contains(&o.momentum) {
            return Err(TrainError::InvalidConfig("momentum must lie in [0, 1)".into()));
        }
        if o.batch_size < 1 {
            return Err(TrainError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.hidden_dim < 1 {
            return Err(TrainError::InvalidConfig("hidden_dim must be >= 1".into()));
        }
        if self.max_symbols_per_frame < 1 {
            return Err(TrainError::InvalidConfig("max_symbols_per_frame must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean per-utterance training loss over the epoch.
    pub mean_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: ToyModelParams,
    pub epochs: Vec<EpochStats>,
}

/// Mini-batch gradient descent on the given (already corrupted) training
/// set. Per-item gradients may be computed in parallel but are always summed
/// in batch order, so the result does not depend on the thread count.
pub fn train_on(config: &ExperimentConfig, train: &[Utterance]) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let task = &config.task;
    let mut params = ToyModelParams::init(task.feature_dim(), config.hidden_dim, task.vocab_size, config.seed);
    let mut velocity = ToyModelParams::zeros(task.feature_dim(), config.hidden_dim, task.vocab_size);
    let opt = &config.optimizer;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle_rng = seeded(derive_seed(config.seed, 1));
    let mut epochs = Vec::with_capacity(opt.epochs);

    for epoch in 0..opt.epochs {
        let penalties = config.penalties.for_epoch(epoch);
        shuffle(&mut order, &mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (batch, idx) in order.chunks(opt.batch_size).enumerate() {
            let results: Vec<Result<(f64, ToyModelParams), TrainError>> = idx
                .par_iter()
                .map(|&i| {
                    let u = &train[i];
                    let (z, cache) = forward_cached(&params, &u.features, &u.transcript)?;
                    let out = loss(&z, &u.transcript, config.criterion, &penalties)?;
                    Ok((out.loss, backward(&params, &u.features, &u.transcript, &cache, &out.grad)))
                })
                .collect();
            let mut grad = ToyModelParams::zeros(task.feature_dim(), config.hidden_dim, task.vocab_size);
            let mut batch_loss = 0.0;
            for r in results {
                let (l, g) = r?;
                batch_loss += l;
                grad.add_scaled(&g, 1.0);
            }
            if !batch_loss.is_finite() {
                return Err(TrainError::Divergence {
                    epoch,
                    batch,
                    loss: batch_loss,
                });
            }
            loss_sum += batch_loss;
            let scale = 1.0 / idx.len() as f64;
            for (v, g) in velocity.tensors_mut().into_iter().zip(grad.tensors()) {
                for (vi, gi) in v.iter_mut().zip(g) {
                    *vi = opt.momentum * *vi + gi * scale;
                }
            }
            params.add_scaled(&velocity, -opt.learning_rate);
            if !params.is_finite() {
                return Err(TrainError::Divergence {
                    epoch,
                    batch,
                    loss: f64::NAN,
                });
            }
        }
        let mean_loss = if train.is_empty() { 0.0 } else { loss_sum / train.len() as f64 };
        log::debug!("{} epoch {epoch}: mean loss {mean_loss:.4}", config.criterion);
        epochs.push(EpochStats { epoch, mean_loss });
    }
    Ok(TrainOutcome { params, epochs })
}

/// Fisher-Yates with the crate's pinned generator.
fn shuffle(order: &mut [usize], rng: &mut crate::rng::Rng) {
    use rand::Rng as _;
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
}

/// Corrupted copy of the training split and the realized corruption report.
pub fn corrupt_training_set(
    config: &ExperimentConfig,
    data: &TaskData,
) -> Result<(Vec<Utterance>, CorruptionReport), TrainError> {
    let vocab = config.task.vocab()?;
    let clean: Vec<Transcript> = data.train.iter().map(|u| u.transcript.clone()).collect();
    let corrupted = corrupt_dataset(&vocab, &clean, &config.corruption);
    let report = report_corruption(&clean, &corrupted);
    let train = data
        .train
        .iter()
        .zip(corrupted)
        .map(|(u, (y, _))| Utterance {
            features: u.features.clone(),
            transcript: y,
        })
        .collect();
    Ok((train, report))
}

/// Generates the task, corrupts the training transcripts and trains.
pub fn train(config: &ExperimentConfig) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let data = generate_task_data(&config.task)?;
    let (train_set, _) = corrupt_training_set(config, &data)?;
    train_on(config, &train_set)
}

pub fn evaluate(params: &ToyModelParams, eval: &[Utterance], max_symbols_per_frame: usize) -> CorpusWer {
    let hyps: Vec<Transcript> = eval
        .par_iter()
        .map(|u| greedy_decode(params, &u.features, max_symbols_per_frame))
        .collect();
    corpus_wer(eval.iter().map(|u| &u.transcript).zip(hyps.iter()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub criterion: Criterion,
    pub epochs: Vec<EpochStats>,
    /// Corpus-level greedy WER on the clean eval split.
    pub eval_wer: f64,
    pub eval: CorpusWer,
    /// Corpus-level WER of corrupted against clean training transcripts.
    pub realized_error_rate: f64,
    pub corruption: CorruptionReport,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("reports contain only finite numbers")
    }
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport, TrainError> {
    config.validate()?;
    let data = generate_task_data(&config.task)?;
    let (train_set, corruption) = corrupt_training_set(config, &data)?;
    let outcome = train_on(config, &train_set)?;
    let eval = evaluate(&outcome.params, &data.eval, config.max_symbols_per_frame);
    Ok(ExperimentReport {
        config: config.clone(),
        criterion: config.criterion,
        epochs: outcome.epochs,
        eval_wer: eval.rate,
        eval,
        realized_error_rate: corruption.measured.rate,
        corruption,
    })
}

/// One cell of a criterion x error-kind x rate grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub criterion: Criterion,
    pub kind: CorruptionKind,
    pub rate: f64,
    pub eval_wer: f64,
    pub realized_error_rate: f64,
    pub final_loss: f64,
}

impl SweepRow {
    pub fn key(&self) -> (Criterion, CorruptionKind, u64) {
        (self.criterion, self.kind, self.rate.to_bits())
    }
}

/// The error rates of the noise grid, including the clean point.
pub const SWEEP_RATES: [f64; 5] = [0.0, 0.1, 0.3, 0.5, 0.7];

#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub criteria: Vec<Criterion>,
    pub kinds: Vec<CorruptionKind>,
    pub rates: Vec<f64>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            criteria: vec![Criterion::Rnnt, Criterion::Wst],
            kinds: CorruptionKind::ALL.to_vec(),
            rates: SWEEP_RATES.to_vec(),
        }
    }
}

impl SweepGrid {
    /// Cells in emission order: kind, then rate, then criterion.
    pub fn cells(&self) -> Vec<(Criterion, CorruptionKind, f64)> {
        let mut cells = Vec::new();
        for &kind in &self.kinds {
            for &rate in &self.rates {
                for &criterion in &self.criteria {
                    cells.push((criterion, kind, rate));
                }
            }
        }
        cells
    }
}

pub fn cell_config(base: &ExperimentConfig, criterion: Criterion, kind: CorruptionKind, rate: f64) -> ExperimentConfig {
    let mut cfg = base.clone();
    cfg.criterion = criterion;
    cfg.corruption.kind = kind;
    cfg.corruption.rate = rate;
    cfg
}

pub fn run_cell(base: &ExperimentConfig, criterion: Criterion, kind: CorruptionKind, rate: f64) -> Result<SweepRow, TrainError> {
    let report = run_experiment(&cell_config(base, criterion, kind, rate))?;
    Ok(SweepRow {
        criterion,
        kind,
        rate,
        eval_wer: report.eval_wer,
        realized_error_rate: report.realized_error_rate,
        final_loss: report.epochs.last().map_or(0.0, |e| e.mean_loss),
    })
}

/// Runs every grid cell not in `done`, calling `emit` after each one in grid
/// order. Cells are evaluated in parallel; the rows are identical to a serial
/// run.
pub fn sweep<F>(base: &ExperimentConfig, grid: &SweepGrid, done: &[SweepRow], mut emit: F) -> Result<Vec<SweepRow>, TrainError>
where
    F: FnMut(&SweepRow) -> std::io::Result<()>,
{
    let pending: Vec<_> = grid
        .cells()
        .into_iter()
        .filter(|&(c, k, r)| !done.iter().any(|row| row.key() == (c, k, r.to_bits())))
        .collect();
    let (tx, rx) = std::sync::mpsc::channel();
    let mut rows: Vec<Option<SweepRow>> = vec![None; pending.len()];
    let mut next = 0;
    let mut first_err = None;
    std::thread::scope(|scope| {
        let pending = &pending;
        scope.spawn(move || {
            pending.par_iter().enumerate().for_each_with(tx, |tx, (i, &(c, k, r))| {
                let _ = tx.send((i, run_cell(base, c, k, r)));
            });
        });
        for (i, result) in rx {
            match result {
                Ok(row) => rows[i] = Some(row),
                Err(e) => {
                    first_err.get_or_insert(e);
                }
            }
            // flush every finished prefix so partial output stays in grid order
            while next < rows.len() && first_err.is_none() {
                let Some(row) = rows[next].as_ref() else { break };
                if let Err(e) = emit(row) {
                    first_err = Some(TrainError::InvalidConfig(format!("writing sweep row: {e}")));
                    break;
                }
                next += 1;
            }
        }
    });
    if let Some(e) = first_err {
        return Err(e);
    }
    Ok(rows.into_iter().map(|r| r.expect("every cell finished")).collect())
}
