//! A small weighted automaton type with exactly one start and one final state,
//! plus the log-semiring algorithms the losses need: topological ordering,
//! forward-backward and arc occupancies.
//!
//! Self-loops and cycles are representable so that the compact transcript
//! graph can be exported, but every algorithm here requires an acyclic graph
//! and reports [`WfstError::CyclicGraph`] otherwise.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{log_sum, LogWeight, NEG_INF};
use crate::vocab::{TokenId, BLANK};

pub type StateId = usize;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WfstError {
    #[error("graph contains a cycle")]
    CyclicGraph,
    #[error("no accepting path: total weight is -inf")]
    NoPath,
    #[error("state {state} out of range for a graph with {num_states} states")]
    StateOutOfRange { state: StateId, num_states: usize },
    #[error("final state {0} has outgoing arcs")]
    FinalHasOutgoing(StateId),
    #[error("arc weight is NaN")]
    NanWeight,
    #[error("malformed graph JSON: {0}")]
    Json(String),
}

/// Arc label. Serialized as an integer with `-1` standing for epsilon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "i64")]
pub enum Label {
    Epsilon,
    Symbol(TokenId),
}

impl TryFrom<i64> for Label {
    type Error = String;

    fn try_from(v: i64) -> Result<Self, String> {
        match v {
            -1 => Ok(Label::Epsilon),
            v if v >= 0 && v <= TokenId::MAX as i64 => Ok(Label::Symbol(v as TokenId)),
            v => Err(format!("invalid label {v}")),
        }
    }
}

impl From<Label> for i64 {
    fn from(l: Label) -> i64 {
        match l {
            Label::Epsilon => -1,
            Label::Symbol(id) => id as i64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArcKind {
    Token,
    Blank,
    TokenBypass,
    BlankBypass,
    Final,
    Plain,
}

impl ArcKind {
    pub fn is_bypass(self) -> bool {
        matches!(self, ArcKind::TokenBypass | ArcKind::BlankBypass)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arc {
    pub src: StateId,
    pub dst: StateId,
    pub label: Label,
    pub olabel: Label,
    #[serde(with = "crate::serde_ext")]
    pub weight: LogWeight,
    pub kind: ArcKind,
    /// Frame index of the logit row this weight was read from.
    pub frame: Option<usize>,
    /// Transcript position of the logit row this weight was read from.
    pub position: Option<usize>,
}

impl Arc {
    pub fn plain(src: StateId, dst: StateId, label: Label, weight: LogWeight) -> Self {
        Self {
            src,
            dst,
            label,
            olabel: label,
            weight,
            kind: ArcKind::Plain,
            frame: None,
            position: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawWfst")]
pub struct Wfst {
    num_states: usize,
    start: StateId,
    #[serde(rename = "final")]
    final_state: StateId,
    arcs: Vec<Arc>,
}

#[derive(Deserialize)]
struct RawWfst {
    num_states: usize,
    start: StateId,
    #[serde(rename = "final")]
    final_state: StateId,
    arcs: Vec<Arc>,
}

impl TryFrom<RawWfst> for Wfst {
    type Error = WfstError;

    fn try_from(raw: RawWfst) -> Result<Self, WfstError> {
        let mut g = Wfst::new(raw.num_states, raw.start, raw.final_state)?;
        for arc in raw.arcs {
            g.add_arc(arc)?;
        }
        Ok(g)
    }
}

impl Wfst {
    pub fn new(num_states: usize, start: StateId, final_state: StateId) -> Result<Self, WfstError> {
        for s in [start, final_state] {
            if s >= num_states {
                return Err(WfstError::StateOutOfRange { state: s, num_states });
            }
        }
        Ok(Self {
            num_states,
            start,
            final_state,
            arcs: Vec::new(),
        })
    }

    pub fn add_arc(&mut self, arc: Arc) -> Result<usize, WfstError> {
        for s in [arc.src, arc.dst] {
            if s >= self.num_states {
                return Err(WfstError::StateOutOfRange {
                    state: s,
                    num_states: self.num_states,
                });
            }
        }
        if arc.src == self.final_state {
            return Err(WfstError::FinalHasOutgoing(arc.src));
        }
        if arc.weight.is_nan() {
            return Err(WfstError::NanWeight);
        }
        self.arcs.push(arc);
        Ok(self.arcs.len() - 1)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn start(&self) -> StateId {
        self.start
    }

    pub fn final_state(&self) -> StateId {
        self.final_state
    }

    pub fn arcs(&self) -> &[Arc] {
        &self.arcs
    }

    pub fn num_arcs(&self) -> usize {
        self.arcs.len()
    }

    /// Arc indices grouped by source state, in insertion order.
    pub fn outgoing(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_states];
        for (i, a) in self.arcs.iter().enumerate() {
            out[a.src].push(i);
        }
        out
    }

    /// Arc indices grouped by destination state, in insertion order.
    pub fn incoming(&self) -> Vec<Vec<usize>> {
        let mut inc = vec![Vec::new(); self.num_states];
        for (i, a) in self.arcs.iter().enumerate() {
            inc[a.dst].push(i);
        }
        inc
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("finite or -inf weights always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, WfstError> {
        serde_json::from_str(text).map_err(|e| WfstError::Json(e.to_string()))
    }

    pub fn to_dot(&self) -> String {
        let mut out = String::new();
        out.push_str("digraph FST {\n  rankdir = LR;\n  node [shape = circle];\n");
        let _ = writeln!(out, "  {} [shape = doublecircle];", self.final_state);
        let _ = writeln!(out, "  {} [style = bold];", self.start);
        for a in &self.arcs {
            let color = match a.kind {
                ArcKind::TokenBypass => ", color = green",
                ArcKind::BlankBypass => ", color = blue",
                _ => "",
            };
            let _ = writeln!(
                out,
                "  {} -> {} [label = \"{}:{}/{}\"{}];",
                a.src,
                a.dst,
                DotLabel(a.label),
                DotLabel(a.olabel),
                DotWeight(a.weight),
                color
            );
        }
        out.push_str("}\n");
        out
    }
}

struct DotLabel(Label);

impl fmt::Display for DotLabel {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        match self.0 {
            Label::Epsilon => f.write_str("<eps>"),
            Label::Symbol(BLANK) => f.write_str("<blk>"),
            Label::Symbol(id) => write!(f, "{id}"),
        }
    }
}

struct DotWeight(LogWeight);

impl fmt::Display for DotWeight {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        if self.0 == NEG_INF {
            f.write_str("-inf")
        } else {
            write!(f, "{:.4}", self.0)
        }
    }
}

pub fn export_dot(g: &Wfst) -> String {
    g.to_dot()
}

pub fn export_json(g: &Wfst) -> String {
    g.to_json()
}

/// Kahn's algorithm; among states that are ready at the same time the
/// smallest id goes first, so the ordering is deterministic.
pub fn topo_sort(g: &Wfst) -> Result<Vec<StateId>, WfstError> {
    let n = g.num_states();
    let mut indegree = vec![0usize; n];
    let mut succ: Vec<Vec<StateId>> = vec![Vec::new(); n];
    for a in g.arcs() {
        if a.src == a.dst {
            return Err(WfstError::CyclicGraph);
        }
        indegree[a.dst] += 1;
        succ[a.src].push(a.dst);
    }
    let mut ready: BinaryHeap<Reverse<StateId>> = (0..n)
        .filter(|&s| indegree[s] == 0)
        .map(Reverse)
        .collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(s)) = ready.pop() {
        order.push(s);
        for &d in &succ[s] {
            indegree[d] -= 1;
            if indegree[d] == 0 {
                ready.push(Reverse(d));
            }
        }
    }
    if order.len() != n {
        return Err(WfstError::CyclicGraph);
    }
    Ok(order)
}

/// Forward and backward log scores of an acyclic graph.
#[derive(Debug, Clone)]
pub struct ForwardBackward {
    pub order: Vec<StateId>,
    /// Log weight of all paths from start to each state.
    pub alpha: Vec<LogWeight>,
    /// Log weight of all paths from each state to final.
    pub beta: Vec<LogWeight>,
    pub total: LogWeight,
}

impl ForwardBackward {
    pub fn compute(g: &Wfst) -> Result<Self, WfstError> {
        let order = topo_sort(g)?;
        let arcs = g.arcs();
        let n = g.num_states();

        let incoming = g.incoming();
        let mut alpha = vec![NEG_INF; n];
        let mut terms = Vec::new();
        for &s in &order {
            terms.clear();
            if s == g.start() {
                terms.push(0.0);
            }
            terms.extend(incoming[s].iter().map(|&i| alpha[arcs[i].src] + arcs[i].weight));
            alpha[s] = log_sum(&terms);
        }

        let outgoing = g.outgoing();
        let mut beta = vec![NEG_INF; n];
        for &s in order.iter().rev() {
            terms.clear();
            if s == g.final_state() {
                terms.push(0.0);
            }
            terms.extend(outgoing[s].iter().map(|&i| arcs[i].weight + beta[arcs[i].dst]));
            beta[s] = log_sum(&terms);
        }

        let total = alpha[g.final_state()];
        Ok(Self {
            order,
            alpha,
            beta,
            total,
        })
    }

    /// Occupancy of every arc, in arc order. Arcs of weight `-inf` get
    /// exactly zero.
    pub fn arc_posteriors(&self, g: &Wfst) -> Result<Vec<f64>, WfstError> {
        if self.total == NEG_INF {
            return Err(WfstError::NoPath);
        }
        Ok(g.arcs()
            .iter()
            .map(|a| {
                let lw = self.alpha[a.src] + a.weight + self.beta[a.dst];
                if lw == NEG_INF {
                    0.0
                } else {
                    (lw - self.total).exp()
                }
            })
            .collect())
    }
}

/// Log of the summed path weight from start to final.
pub fn total_weight(g: &Wfst) -> Result<LogWeight, WfstError> {
    Ok(ForwardBackward::compute(g)?.total)
}

pub fn arc_posteriors(g: &Wfst) -> Result<Vec<f64>, WfstError> {
    ForwardBackward::compute(g)?.arc_posteriors(g)
}
