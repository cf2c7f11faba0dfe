//! Transducer and weakly supervised transducer losses with analytic
//! gradients.
//!
//! Both losses are `-log` of the total lattice weight. Gradients come from arc
//! occupancies: every Token or Blank arc reading `logp[t][u][k]` contributes
//! `-occupancy` to `d loss / d logp[t][u][k]`; every bypass arc contributes
//! through the star probability, which depends on the blank entry of its row
//! only. The log-prob gradient is then pulled back through the row-wise
//! log-softmax.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graphs::{build_rnnt_lattice, build_wst_lattice, GraphError, PenaltyConfig};
use crate::numerics::{log1m_exp, log_sum, LogWeight, NEG_INF};
use crate::tensor::{GradTensor, LogProbTensor, LogitTensor, Tensor3};
use crate::vocab::{Transcript, Vocab, BLANK};
use crate::wfst::{ArcKind, ForwardBackward, Label, Wfst, WfstError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Wfst(#[from] WfstError),
    #[error("lattice has no accepting path")]
    NoPath,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("batch item {index}: {source}")]
pub struct BatchError {
    pub index: usize,
    #[source]
    pub source: LossError,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Rnnt,
    Wst,
}

impl std::fmt::Display for Criterion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Criterion::Rnnt => "rnnt",
            Criterion::Wst => "wst",
        })
    }
}

impl std::str::FromStr for Criterion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "rnnt" => Ok(Criterion::Rnnt),
            "wst" => Ok(Criterion::Wst),
            other => Err(format!("unknown criterion '{other}' (expected rnnt or wst)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    /// `d loss / d logits`.
    pub grad: GradTensor,
    /// `d loss / d logprobs`, the raw arc-weight sensitivities.
    pub logprob_grad: GradTensor,
}

/// Row-wise log-softmax with a max shift.
pub fn log_softmax(z: &LogitTensor) -> LogProbTensor {
    let (t, u, v) = z.shape();
    let mut out = Tensor3::zeros(t, u, v);
    for (src, dst) in z.rows().zip(out.as_mut_slice().chunks_exact_mut(v.max(1))) {
        let lse = log_sum(src);
        for (d, s) in dst.iter_mut().zip(src) {
            *d = s - lse;
        }
    }
    LogProbTensor::new_unchecked(out)
}

/// Log of the star probability for one normalized row: the mean probability
/// of the non-blank symbols, `(1 - p_blank) / (V - 1)`.
pub fn star_logprob(row: &[LogWeight]) -> LogWeight {
    debug_assert!(row.len() >= 2);
    let non_blank = log1m_exp(row[BLANK as usize]);
    if non_blank == NEG_INF {
        return NEG_INF;
    }
    non_blank - ((row.len() - 1) as f64).ln()
}

/// `d log p_star / d log p_blank = -p_blank / (1 - p_blank)`.
fn star_blank_sensitivity(log_p_blank: LogWeight) -> f64 {
    -(log_p_blank - log1m_exp(log_p_blank)).exp()
}

pub fn rnnt_loss(logits: &LogitTensor, y: &Transcript) -> Result<LossOutput, LossError> {
    transducer_loss(logits, y, None)
}

pub fn wst_loss(logits: &LogitTensor, y: &Transcript, penalties: &PenaltyConfig) -> Result<LossOutput, LossError> {
    transducer_loss(logits, y, Some(penalties))
}

pub fn loss(
    logits: &LogitTensor,
    y: &Transcript,
    criterion: Criterion,
    penalties: &PenaltyConfig,
) -> Result<LossOutput, LossError> {
    match criterion {
        Criterion::Rnnt => rnnt_loss(logits, y),
        Criterion::Wst => wst_loss(logits, y, penalties),
    }
}

/// The lattice a criterion trains on, built from already normalized rows.
pub fn training_lattice(
    logp: &LogProbTensor,
    y: &Transcript,
    criterion: Criterion,
    penalties: &PenaltyConfig,
) -> Result<Wfst, LossError> {
    let vocab = Vocab::new(logp.vocab()).map_err(GraphError::from)?;
    Ok(match criterion {
        Criterion::Rnnt => build_rnnt_lattice(&vocab, y, logp)?,
        Criterion::Wst => build_wst_lattice(&vocab, y, logp, penalties)?,
    })
}

fn transducer_loss(
    logits: &LogitTensor,
    y: &Transcript,
    penalties: Option<&PenaltyConfig>,
) -> Result<LossOutput, LossError> {
    let logp = log_softmax(logits);
    let criterion = if penalties.is_some() { Criterion::Wst } else { Criterion::Rnnt };
    let lattice = training_lattice(&logp, y, criterion, penalties.unwrap_or(&PenaltyConfig::disabled()))?;
    let fb = ForwardBackward::compute(&lattice)?;
    if fb.total == NEG_INF {
        return Err(LossError::NoPath);
    }
    let occupancy = fb.arc_posteriors(&lattice)?;

    let (frames, positions, v) = logp.shape();
    let mut lp_grad = GradTensor::zeros(frames, positions, v);
    for (arc, &gamma) in lattice.arcs().iter().zip(&occupancy) {
        if gamma == 0.0 {
            continue;
        }
        let (Some(t), Some(u)) = (arc.frame, arc.position) else {
            continue;
        };
        match arc.kind {
            ArcKind::Token | ArcKind::Blank => {
                let Label::Symbol(k) = arc.label else { unreachable!("lattice arcs carry symbols") };
                lp_grad.row_mut(t, u)[k as usize] -= gamma;
            }
            ArcKind::TokenBypass | ArcKind::BlankBypass => {
                let pb = logp.get(t, u, BLANK as usize);
                lp_grad.row_mut(t, u)[BLANK as usize] -= gamma * star_blank_sensitivity(pb);
            }
            ArcKind::Final | ArcKind::Plain => {}
        }
    }

    let mut grad = GradTensor::zeros(frames, positions, v);
    for t in 0..frames {
        for u in 0..positions {
            let g_lp = lp_grad.row(t, u);
            let total: f64 = g_lp.iter().sum();
            if total == 0.0 && g_lp.iter().all(|&x| x == 0.0) {
                continue;
            }
            let p_row = logp.row(t, u);
            for ((g, &gl), &lp) in grad.row_mut(t, u).iter_mut().zip(g_lp).zip(p_row) {
                *g = gl - lp.exp() * total;
            }
        }
    }

    Ok(LossOutput {
        loss: -fb.total,
        grad,
        logprob_grad: lp_grad,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    pub losses: Vec<f64>,
    pub grads: Vec<GradTensor>,
    /// Arithmetic mean of `losses`; zero for an empty batch.
    pub mean: f64,
}

/// Evaluates every item independently (in parallel) and reports the first
/// failing item by index.
pub fn batch_loss(
    items: &[(LogitTensor, Transcript)],
    criterion: Criterion,
    penalties: &PenaltyConfig,
) -> Result<BatchLoss, BatchError> {
    let results: Vec<Result<LossOutput, LossError>> = items
        .par_iter()
        .map(|(z, y)| loss(z, y, criterion, penalties))
        .collect();
    let mut losses = Vec::with_capacity(items.len());
    let mut grads = Vec::with_capacity(items.len());
    for (index, r) in results.into_iter().enumerate() {
        let out = r.map_err(|source| BatchError { index, source })?;
        losses.push(out.loss);
        grads.push(out.grad);
    }
    let mean = if losses.is_empty() {
        0.0
    } else {
        losses.iter().sum::<f64>() / losses.len() as f64
    };
    Ok(BatchLoss { losses, grads, mean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn logits(t: usize, u: usize, v: usize, data: Vec<f64>) -> LogitTensor {
        LogitTensor::new(Tensor3::from_vec(t, u, v, data).unwrap()).unwrap()
    }

    #[test]
    fn log_softmax_examples() {
        let p = log_softmax(&logits(1, 1, 3, vec![0.0, 0.0, 0.0]));
        for &x in p.row(0, 0) {
            assert_abs_diff_eq!(x, (1.0f64 / 3.0).ln(), epsilon = 1e-15);
        }
        let p = log_softmax(&logits(1, 1, 3, vec![1000.0, 0.0, 0.0]));
        assert_abs_diff_eq!(p.get(0, 0, 0), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.get(0, 0, 1), -1000.0, epsilon = 1e-9);
        let p = log_softmax(&logits(1, 1, 3, vec![1.0, 2.0, 3.0]));
        let expected = [-2.407_606, -1.407_606, -0.407_606];
        for (a, b) in p.row(0, 0).iter().zip(expected) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-6);
        }
        assert!(log_sum(p.row(0, 0)).abs() < 1e-12);
    }

    #[test]
    fn star_examples() {
        let uniform = [(1.0f64 / 3.0).ln(); 3];
        assert_abs_diff_eq!(star_logprob(&uniform), (1.0f64 / 3.0).ln(), epsilon = 1e-15);
        let rest = (0.1f64 / 4.0).ln();
        let row = [0.9f64.ln(), rest, rest, rest, rest];
        assert_abs_diff_eq!(star_logprob(&row), -3.688_879, epsilon = 1e-6);
        assert_abs_diff_eq!(star_logprob(&row), 0.025f64.ln(), epsilon = 1e-14);
        assert_eq!(star_logprob(&[0.0, NEG_INF, NEG_INF]), NEG_INF);
    }

    #[test]
    fn worked_example() {
        let z = logits(2, 2, 3, vec![0.0; 12]);
        let y: Transcript = vec![1].into();
        let r = rnnt_loss(&z, &y).unwrap();
        assert_abs_diff_eq!(r.loss, -(2.0f64 / 27.0).ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(r.loss, 2.602_690, epsilon = 1e-6);
        let w = wst_loss(&z, &y, &PenaltyConfig::new(0.0, 0.0).unwrap()).unwrap();
        assert_abs_diff_eq!(w.loss, -(8.0f64 / 27.0).ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(w.loss, 1.216_395, epsilon = 1e-6);
    }

    #[test]
    fn single_path_loss() {
        let z = logits(1, 1, 3, vec![0.3, -1.0, 2.0]);
        let out = rnnt_loss(&z, &Transcript::default()).unwrap();
        assert_abs_diff_eq!(out.loss, -log_softmax(&z).get(0, 0, 0), epsilon = 1e-15);
    }

    #[test]
    fn disabled_penalties_reduce_exactly() {
        let data: Vec<f64> = (0..3 * 3 * 4).map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.3).collect();
        let z = logits(3, 3, 4, data);
        let y: Transcript = vec![2, 1].into();
        let r = rnnt_loss(&z, &y).unwrap();
        let w = wst_loss(&z, &y, &PenaltyConfig::disabled()).unwrap();
        assert_eq!(r.loss.to_bits(), w.loss.to_bits());
        assert_eq!(r.grad, w.grad);
    }

    #[test]
    fn grad_rows_sum_to_zero() {
        let data: Vec<f64> = (0..2 * 3 * 5).map(|i| (i as f64 * 0.7).sin()).collect();
        let z = logits(2, 3, 5, data);
        let out = wst_loss(&z, &vec![4, 2].into(), &PenaltyConfig::default()).unwrap();
        for row in out.grad.rows() {
            assert!(row.iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn saturated_blank_gives_finite_grad() {
        // blank takes all the mass in row (0,0): star weight is -inf there
        let z = logits(2, 1, 3, vec![800.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let out = wst_loss(&z, &Transcript::default(), &PenaltyConfig::default()).unwrap();
        assert!(out.loss.is_finite());
        assert!(out.grad.as_slice().iter().all(|g| g.is_finite()));
    }

    #[test]
    fn batch_matches_single_calls() {
        let a = (logits(2, 2, 3, vec![0.0; 12]), Transcript::from(vec![1]));
        let b = (logits(1, 1, 3, vec![0.3, -1.0, 2.0]), Transcript::default());
        let p = PenaltyConfig::default();
        let one = batch_loss(std::slice::from_ref(&a), Criterion::Wst, &p).unwrap();
        let single = wst_loss(&a.0, &a.1, &p).unwrap();
        assert_eq!(one.losses, vec![single.loss]);
        assert_eq!(one.grads[0], single.grad);

        let twice = batch_loss(&[a.clone(), a.clone()], Criterion::Wst, &p).unwrap();
        assert_eq!(twice.mean, single.loss);

        let ab = batch_loss(&[a.clone(), b.clone()], Criterion::Rnnt, &p).unwrap();
        let ba = batch_loss(&[b, a], Criterion::Rnnt, &p).unwrap();
        assert_eq!(ab.losses[0].to_bits(), ba.losses[1].to_bits());
        assert_eq!(ab.grads[1], ba.grads[0]);
    }

    #[test]
    fn batch_reports_failing_index() {
        let good = (logits(1, 1, 3, vec![0.0; 3]), Transcript::default());
        let bad = (logits(1, 1, 3, vec![0.0; 3]), Transcript::from(vec![1]));
        let err = batch_loss(&[good, bad], Criterion::Rnnt, &PenaltyConfig::default()).unwrap_err();
        assert_eq!(err.index, 1);
    }
}
