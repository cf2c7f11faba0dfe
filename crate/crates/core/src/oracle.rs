//! Brute-force references: explicit path enumeration and the loss computed
//! as a plain sum over enumerated paths. Only usable on small lattices.

use thiserror::Error;

use crate::graphs::PenaltyConfig;
use crate::loss::{log_softmax, training_lattice, Criterion, LossError};
use crate::numerics::{log_sum, LogWeight};
use crate::tensor::LogitTensor;
use crate::vocab::Transcript;
use crate::wfst::{topo_sort, Wfst, WfstError};

/// Enumeration stops once this many accepting paths have been found.
pub const MAX_PATHS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("more than {0} accepting paths")]
    TooManyPaths(usize),
    #[error(transparent)]
    Wfst(#[from] WfstError),
    #[error(transparent)]
    Loss(#[from] LossError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    /// Arc indices from start to final.
    pub arcs: Vec<usize>,
    pub weight: LogWeight,
}

pub fn enumerate_paths(g: &Wfst) -> Result<Vec<Path>, OracleError> {
    enumerate_paths_bounded(g, MAX_PATHS)
}

/// Iterative depth-first enumeration of every start-to-final path.
pub fn enumerate_paths_bounded(g: &Wfst, max_paths: usize) -> Result<Vec<Path>, OracleError> {
    topo_sort(g)?;
    let outgoing = g.outgoing();
    let arcs = g.arcs();
    let mut paths = Vec::new();
    // each frame: (state, index of next outgoing arc to try)
    let mut stack: Vec<(usize, usize)> = vec![(g.start(), 0)];
    let mut current: Vec<usize> = Vec::new();
    while let Some(top) = stack.last_mut() {
        let (state, next) = *top;
        if state == g.final_state() && next == 0 {
            if paths.len() == max_paths {
                return Err(OracleError::TooManyPaths(max_paths));
            }
            let weight = current.iter().map(|&i| arcs[i].weight).sum();
            paths.push(Path {
                arcs: current.clone(),
                weight,
            });
        }
        if next < outgoing[state].len() {
            top.1 += 1;
            let arc = outgoing[state][next];
            current.push(arc);
            stack.push((arcs[arc].dst, 0));
        } else {
            stack.pop();
            current.pop();
        }
    }
    Ok(paths)
}

/// Log of the summed weight of every enumerated path.
pub fn brute_force_total(g: &Wfst) -> Result<LogWeight, OracleError> {
    let weights: Vec<f64> = enumerate_paths(g)?.iter().map(|p| p.weight).collect();
    Ok(log_sum(&weights))
}

pub fn brute_force_loss(
    logits: &LogitTensor,
    y: &Transcript,
    criterion: Criterion,
    penalties: &PenaltyConfig,
) -> Result<f64, OracleError> {
    let lattice = training_lattice(&log_softmax(logits), y, criterion, penalties)?;
    Ok(-brute_force_total(&lattice)?)
}
