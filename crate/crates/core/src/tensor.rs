//! Dense `[T][U+1][V]` tensors indexed by (frame, transcript position, token)
//! and the JSON tensor file format.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::log_sum;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("tensor needs at least one frame")]
    NoFrames,
    #[error("non-finite logit at flat index {0}")]
    NonFinite(usize),
    #[error("row ({frame}, {position}) is not normalized: log-sum {log_sum}")]
    NotNormalized { frame: usize, position: usize, log_sum: f64 },
    #[error("malformed tensor JSON: {0}")]
    Json(String),
}

/// Row-major storage with shape `(frames, positions, vocab)`, where
/// `positions = U + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    frames: usize,
    positions: usize,
    vocab: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(frames: usize, positions: usize, vocab: usize) -> Self {
        Self::filled(frames, positions, vocab, 0.0)
    }

    pub fn filled(frames: usize, positions: usize, vocab: usize, value: f64) -> Self {
        Self {
            frames,
            positions,
            vocab,
            data: vec![value; frames * positions * vocab],
        }
    }

    pub fn from_vec(frames: usize, positions: usize, vocab: usize, data: Vec<f64>) -> Result<Self, TensorError> {
        if data.len() != frames * positions * vocab {
            return Err(TensorError::ShapeMismatch {
                expected: format!("{} values for [{frames}][{positions}][{vocab}]", frames * positions * vocab),
                got: format!("{} values", data.len()),
            });
        }
        Ok(Self {
            frames,
            positions,
            vocab,
            data,
        })
    }

    /// Number of frames, `T`.
    pub fn frames(&self) -> usize {
        self.frames
    }

    /// Number of transcript positions, `U + 1`.
    pub fn positions(&self) -> usize {
        self.positions
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.frames, self.positions, self.vocab)
    }

    #[inline]
    pub fn row(&self, t: usize, u: usize) -> &[f64] {
        let start = (t * self.positions + u) * self.vocab;
        &self.data[start..start + self.vocab]
    }

    #[inline]
    pub fn row_mut(&mut self, t: usize, u: usize) -> &mut [f64] {
        let start = (t * self.positions + u) * self.vocab;
        &mut self.data[start..start + self.vocab]
    }

    #[inline]
    pub fn get(&self, t: usize, u: usize, k: usize) -> f64 {
        self.data[(t * self.positions + u) * self.vocab + k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.vocab.max(1))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }
}

macro_rules! tensor_newtype {
    ($name:ident) => {
        impl std::ops::Deref for $name {
            type Target = Tensor3;

            fn deref(&self) -> &Tensor3 {
                &self.0
            }
        }

        impl $name {
            pub fn into_inner(self) -> Tensor3 {
                self.0
            }
        }
    };
}

/// Unnormalized joiner scores.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitTensor(Tensor3);
tensor_newtype!(LogitTensor);

impl LogitTensor {
    pub fn new(t: Tensor3) -> Result<Self, TensorError> {
        if let Some(i) = t.data.iter().position(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite(i));
        }
        Ok(Self(t))
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0.data
    }
}

/// Row-normalized log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct LogProbTensor(Tensor3);
tensor_newtype!(LogProbTensor);

impl LogProbTensor {
    /// Accepts a tensor whose rows already log-sum to zero within 1e-6.
    pub fn new(t: Tensor3) -> Result<Self, TensorError> {
        for frame in 0..t.frames {
            for position in 0..t.positions {
                let row = t.row(frame, position);
                if row.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
                    return Err(TensorError::NonFinite((frame * t.positions + position) * t.vocab));
                }
                let s = log_sum(row);
                if !(s.abs() <= 1e-6) {
                    return Err(TensorError::NotNormalized { frame, position, log_sum: s });
                }
            }
        }
        Ok(Self(t))
    }

    pub(crate) fn new_unchecked(t: Tensor3) -> Self {
        Self(t)
    }

    /// Uniform distribution over `vocab` symbols in every row.
    pub fn uniform(frames: usize, positions: usize, vocab: usize) -> Self {
        Self(Tensor3::filled(frames, positions, vocab, -(vocab as f64).ln()))
    }
}

/// Gradient of a loss with respect to logits or log-probabilities; same shape
/// as the logits.
#[derive(Debug, Clone, PartialEq)]
pub struct GradTensor(Tensor3);
tensor_newtype!(GradTensor);

impl GradTensor {
    pub fn zeros(frames: usize, positions: usize, vocab: usize) -> Self {
        Self(Tensor3::zeros(frames, positions, vocab))
    }

    pub fn row_mut(&mut self, t: usize, u: usize) -> &mut [f64] {
        self.0.row_mut(t, u)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TensorKind {
    Logits,
    Logprobs,
}

/// On-disk tensor: `{"T", "U", "V", "kind", "data"}` with `data` row-major
/// over `T x (U+1) x V`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorFile {
    #[serde(rename = "T")]
    pub frames: usize,
    #[serde(rename = "U")]
    pub transcript_len: usize,
    #[serde(rename = "V")]
    pub vocab: usize,
    pub kind: TensorKind,
    pub data: Vec<f64>,
}

impl TensorFile {
    pub fn from_json(text: &str) -> Result<Self, TensorError> {
        serde_json::from_str(text).map_err(|e| TensorError::Json(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("tensor data is finite")
    }

    pub fn from_logits(z: &LogitTensor) -> Self {
        Self {
            frames: z.frames(),
            transcript_len: z.positions() - 1,
            vocab: z.vocab(),
            kind: TensorKind::Logits,
            data: z.as_slice().to_vec(),
        }
    }

    fn tensor(&self) -> Result<Tensor3, TensorError> {
        if self.frames == 0 {
            return Err(TensorError::NoFrames);
        }
        Tensor3::from_vec(self.frames, self.transcript_len + 1, self.vocab, self.data.clone())
    }

    /// Logits for the losses. Log-probabilities are valid logits because
    /// log-softmax leaves normalized rows unchanged.
    pub fn to_logits(&self) -> Result<LogitTensor, TensorError> {
        let t = self.tensor()?;
        if self.kind == TensorKind::Logprobs {
            LogProbTensor::new(t.clone())?;
        }
        LogitTensor::new(t)
    }

    pub fn to_log_probs(&self) -> Result<LogProbTensor, TensorError> {
        match self.kind {
            TensorKind::Logprobs => LogProbTensor::new(self.tensor()?),
            TensorKind::Logits => Ok(crate::loss::log_softmax(&self.to_logits()?)),
        }
    }
}
