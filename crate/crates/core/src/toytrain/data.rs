use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::rng::{derive_seed, seeded, Rng};
use crate::vocab::{TokenId, Transcript, Vocab};

/// Synthetic speech stand-in: each token becomes `frames_per_token` copies of
/// its one-hot vector (dimension `vocab_size - 1`) plus Gaussian noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyTask {
    pub vocab_size: usize,
    pub frames_per_token: usize,
    pub feature_noise: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub train_size: usize,
    pub eval_size: usize,
    pub seed: u64,
}

impl Default for ToyTask {
    fn default() -> Self {
        Self {
            vocab_size: 11,
            frames_per_token: 1,
            feature_noise: 0.3,
            min_len: 3,
            max_len: 8,
            train_size: 2000,
            eval_size: 200,
            seed: 1,
        }
    }
}

impl ToyTask {
    pub fn vocab(&self) -> Result<Vocab, TrainError> {
        Ok(Vocab::new(self.vocab_size)?)
    }

    pub fn feature_dim(&self) -> usize {
        self.vocab_size - 1
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.vocab()?;
        if self.vocab_size < 3 {
            return Err(TrainError::InvalidConfig("toy task needs at least two real tokens".into()));
        }
        if self.frames_per_token < 1 {
            return Err(TrainError::InvalidConfig("frames_per_token must be >= 1".into()));
        }
        if !(self.feature_noise >= 0.0) || !self.feature_noise.is_finite() {
            return Err(TrainError::InvalidConfig("feature_noise must be finite and >= 0".into()));
        }
        if self.min_len > self.max_len {
            return Err(TrainError::InvalidConfig("min_len exceeds max_len".into()));
        }
        Ok(())
    }
}

/// Frame-major features, `T x D`.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    dim: usize,
    data: Vec<f64>,
}

impl Features {
    pub fn new(dim: usize, data: Vec<f64>) -> Self {
        assert!(dim > 0 && data.len() % dim == 0, "feature data must hold whole frames");
        Self { dim, data }
    }

    pub fn frames(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub features: Features,
    pub transcript: Transcript,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub train: Vec<Utterance>,
    pub eval: Vec<Utterance>,
}

pub fn render_features(task: &ToyTask, y: &Transcript, rng: &mut Rng) -> Features {
    let dim = task.feature_dim();
    let noise = Normal::new(0.0, task.feature_noise).expect("validated noise level");
    let mut data = Vec::with_capacity(y.len() * task.frames_per_token * dim);
    for &tok in y.iter() {
        for _ in 0..task.frames_per_token {
            for d in 0..dim {
                let clean = if d + 1 == tok as usize { 1.0 } else { 0.0 };
                let n = if task.feature_noise > 0.0 { noise.sample(rng) } else { 0.0 };
                data.push(clean + n);
            }
        }
    }
    Features::new(dim, data)
}

fn sample_utterance(task: &ToyTask, rng: &mut Rng) -> Utterance {
    let len = rng.random_range(task.min_len..=task.max_len);
    // Adjacent repeats are excluded: a stateless-context decoder cannot tell
    // `a a` from `a` when every frame of both looks the same.
    let mut tokens: Vec<TokenId> = Vec::with_capacity(len);
    for _ in 0..len {
        let tok = match tokens.last() {
            // shift past the previous token so the draw stays uniform over the rest
            Some(&prev) => {
                let t = rng.random_range(1..task.vocab_size as TokenId - 1);
                if t >= prev { t + 1 } else { t }
            }
            None => rng.random_range(1..task.vocab_size as TokenId),
        };
        tokens.push(tok);
    }
    let transcript = Transcript::new(tokens);
    let features = render_features(task, &transcript, rng);
    Utterance { features, transcript }
}

/// Train and eval splits; utterance `i` of each split has its own derived
/// stream so the splits do not depend on each other's size.
pub fn generate_task_data(task: &ToyTask) -> Result<TaskData, TrainError> {
    task.validate()?;
    let split = |stream: u64, n: usize| -> Vec<Utterance> {
        let base = derive_seed(task.seed, stream);
        (0..n)
            .map(|i| sample_utterance(task, &mut seeded(derive_seed(base, i as u64))))
            .collect()
    };
    Ok(TaskData {
        train: split(0, task.train_size),
        eval: split(1, task.eval_size),
    })
}
