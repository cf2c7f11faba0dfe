//! Builders for the transcript graphs and the two training lattices.
//!
//! Lattice states are the grid points `(t, u)` with `t < T` and `u <= U`,
//! numbered along anti-diagonals (`t + u` ascending, then `t` ascending),
//! followed by a pre-final state and the final state. For `T = 4, U = 3`
//! that puts `(1, 2)` at state 7 and the final state at 17. The numbering is
//! already a topological order.
//!
//! Every weight, star weights included, is read from the single log-prob row
//! `(t, u)` computed for the nominal transcript; no path-dependent decoder
//! state exists.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::loss::star_logprob;
use crate::numerics::LogWeight;
use crate::tensor::{LogProbTensor, TensorError};
use crate::vocab::{validate_transcript, Transcript, Vocab, VocabError};
use crate::wfst::{Arc, ArcKind, Label, StateId, Wfst};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid penalty {0}: must be a real number or -inf")]
    InvalidPenalty(f64),
}

/// Log-domain penalties added to bypass arcs. They stay fixed for every
/// epoch of training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    /// Added to token bypass arcs.
    #[serde(with = "crate::serde_ext")]
    pub token_bypass: LogWeight,
    /// Added to blank bypass arcs and star self-loops.
    #[serde(with = "crate::serde_ext")]
    pub blank_bypass: LogWeight,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            token_bypass: 0.5f64.ln(),
            blank_bypass: 0.5f64.ln(),
        }
    }
}

impl PenaltyConfig {
    pub fn new(token_bypass: LogWeight, blank_bypass: LogWeight) -> Result<Self, GraphError> {
        let p = Self {
            token_bypass,
            blank_bypass,
        };
        p.validate()?;
        Ok(p)
    }

    /// Both bypass kinds switched off; the WST lattice then carries exactly
    /// the transducer lattice's mass.
    pub fn disabled() -> Self {
        Self {
            token_bypass: f64::NEG_INFINITY,
            blank_bypass: f64::NEG_INFINITY,
        }
    }

    /// Rejects NaN and `+inf`. Positive finite values are allowed but logged.
    pub fn validate(&self) -> Result<(), GraphError> {
        for v in [self.token_bypass, self.blank_bypass] {
            if v.is_nan() || v == f64::INFINITY {
                return Err(GraphError::InvalidPenalty(v));
            }
            if v > 0.0 {
                log::warn!("bypass penalty {v} is positive and will favour bypass arcs");
            }
        }
        Ok(())
    }

    /// The penalties for a given epoch. Constant by construction.
    pub fn for_epoch(&self, _epoch: usize) -> Self {
        *self
    }
}

/// Linear chain: one Token arc per symbol, then an epsilon Final arc.
pub fn build_transcript_graph(vocab: &Vocab, y: &Transcript) -> Result<Wfst, GraphError> {
    validate_transcript(vocab, y)?;
    let u_len = y.len();
    let mut g = Wfst::new(u_len + 2, 0, u_len + 1).expect("states in range");
    for (u, &tok) in y.iter().enumerate() {
        push(&mut g, transcript_arc(u, u + 1, Label::Symbol(tok), 0.0, ArcKind::Token));
    }
    push(&mut g, transcript_arc(u_len, u_len + 1, Label::Epsilon, 0.0, ArcKind::Final));
    Ok(g)
}

/// The compact weakly supervised transcript graph: the linear chain plus a
/// star self-loop at every chain state and a star bypass parallel to every
/// Token arc. Cyclic, so it can be exported but not scored.
pub fn build_ws_transcript_graph(
    vocab: &Vocab,
    y: &Transcript,
    penalties: &PenaltyConfig,
) -> Result<Wfst, GraphError> {
    validate_transcript(vocab, y)?;
    penalties.validate()?;
    let star = Label::Symbol(vocab.star());
    let u_len = y.len();
    let mut g = Wfst::new(u_len + 2, 0, u_len + 1).expect("states in range");
    for u in 0..=u_len {
        push(&mut g, transcript_arc(u, u, star, penalties.blank_bypass, ArcKind::BlankBypass));
        if u < u_len {
            push(&mut g, transcript_arc(u, u + 1, Label::Symbol(y[u]), 0.0, ArcKind::Token));
            push(&mut g, transcript_arc(u, u + 1, star, penalties.token_bypass, ArcKind::TokenBypass));
        }
    }
    push(&mut g, transcript_arc(u_len, u_len + 1, Label::Epsilon, 0.0, ArcKind::Final));
    Ok(g)
}

/// Standard transducer training lattice.
pub fn build_rnnt_lattice(vocab: &Vocab, y: &Transcript, logp: &LogProbTensor) -> Result<Wfst, GraphError> {
    build_lattice(vocab, y, logp, None)
}

/// Transducer lattice plus a star TokenBypass twin for every Token arc and a
/// star BlankBypass twin for every Blank arc except the terminating one.
pub fn build_wst_lattice(
    vocab: &Vocab,
    y: &Transcript,
    logp: &LogProbTensor,
    penalties: &PenaltyConfig,
) -> Result<Wfst, GraphError> {
    penalties.validate()?;
    build_lattice(vocab, y, logp, Some(penalties))
}

/// Grid geometry of a `T x (U+1)` lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatticeGrid {
    pub frames: usize,
    pub transcript_len: usize,
}

impl LatticeGrid {
    pub fn new(frames: usize, transcript_len: usize) -> Self {
        Self {
            frames,
            transcript_len,
        }
    }

    pub fn num_grid_states(&self) -> usize {
        self.frames * (self.transcript_len + 1)
    }

    pub fn pre_final(&self) -> StateId {
        self.num_grid_states()
    }

    pub fn final_state(&self) -> StateId {
        self.num_grid_states() + 1
    }

    pub fn num_states(&self) -> usize {
        self.num_grid_states() + 2
    }

    /// Anti-diagonal numbering of grid point `(t, u)`.
    pub fn state_id(&self, t: usize, u: usize) -> StateId {
        debug_assert!(t < self.frames && u <= self.transcript_len);
        let rows = self.transcript_len + 1;
        let d = t + u;
        // states on all earlier diagonals
        let before: usize = (0..d).map(|k| self.diagonal_len(k, rows)).sum();
        let t_min = d.saturating_sub(self.transcript_len);
        before + (t - t_min)
    }

    fn diagonal_len(&self, d: usize, rows: usize) -> usize {
        let t_min = d.saturating_sub(rows - 1);
        let t_max = d.min(self.frames - 1);
        if t_max < t_min {
            0
        } else {
            t_max - t_min + 1
        }
    }

    /// Grid points in state-id order.
    pub fn points(&self) -> Vec<(usize, usize)> {
        let mut pts = Vec::with_capacity(self.num_grid_states());
        for d in 0..(self.frames + self.transcript_len) {
            let t_min = d.saturating_sub(self.transcript_len);
            let t_max = d.min(self.frames - 1);
            for t in t_min..=t_max {
                pts.push((t, d - t));
            }
        }
        pts
    }
}

fn build_lattice(
    vocab: &Vocab,
    y: &Transcript,
    logp: &LogProbTensor,
    penalties: Option<&PenaltyConfig>,
) -> Result<Wfst, GraphError> {
    validate_transcript(vocab, y)?;
    let u_len = y.len();
    let (frames, positions, v) = logp.shape();
    if frames == 0 {
        return Err(TensorError::NoFrames.into());
    }
    if positions != u_len + 1 || v != vocab.size() {
        return Err(TensorError::ShapeMismatch {
            expected: format!("[T][{}][{}]", u_len + 1, vocab.size()),
            got: format!("[{frames}][{positions}][{v}]"),
        }
        .into());
    }

    let grid = LatticeGrid::new(frames, u_len);
    let points = grid.points();
    let mut ids = vec![0; points.len()];
    for (id, &(t, u)) in points.iter().enumerate() {
        ids[t * (u_len + 1) + u] = id;
    }
    let id = |t: usize, u: usize| ids[t * (u_len + 1) + u];

    let star = Label::Symbol(vocab.star());
    let blank = vocab.blank() as usize;
    let mut g = Wfst::new(grid.num_states(), id(0, 0), grid.final_state()).expect("states in range");
    for &(t, u) in &points {
        let src = id(t, u);
        let row = logp.row(t, u);
        let star_w = penalties.map(|_| star_logprob(row));
        if u < u_len {
            let tok = y[u];
            let dst = id(t, u + 1);
            push(&mut g, lattice_arc(src, dst, Label::Symbol(tok), Label::Symbol(tok), row[tok as usize], ArcKind::Token, t, u));
            if let (Some(p), Some(sw)) = (penalties, star_w) {
                push(&mut g, lattice_arc(src, dst, star, star, sw + p.token_bypass, ArcKind::TokenBypass, t, u));
            }
        }
        if t + 1 < frames {
            let dst = id(t + 1, u);
            push(&mut g, lattice_arc(src, dst, Label::Symbol(0), Label::Epsilon, row[blank], ArcKind::Blank, t, u));
            if let (Some(p), Some(sw)) = (penalties, star_w) {
                push(&mut g, lattice_arc(src, dst, star, star, sw + p.blank_bypass, ArcKind::BlankBypass, t, u));
            }
        } else if u == u_len {
            push(&mut g, lattice_arc(src, grid.pre_final(), Label::Symbol(0), Label::Epsilon, row[blank], ArcKind::Blank, t, u));
        }
    }
    push(
        &mut g,
        Arc {
            src: grid.pre_final(),
            dst: grid.final_state(),
            label: Label::Epsilon,
            olabel: Label::Epsilon,
            weight: 0.0,
            kind: ArcKind::Final,
            frame: None,
            position: None,
        },
    );
    Ok(g)
}

fn push(g: &mut Wfst, arc: Arc) {
    g.add_arc(arc).expect("builder arcs are in range and never leave the final state");
}

fn transcript_arc(src: StateId, dst: StateId, label: Label, weight: LogWeight, kind: ArcKind) -> Arc {
    Arc {
        src,
        dst,
        label,
        olabel: label,
        weight,
        kind,
        frame: None,
        position: None,
    }
}

#[allow(clippy::too_many_arguments)]
fn lattice_arc(
    src: StateId,
    dst: StateId,
    label: Label,
    olabel: Label,
    weight: LogWeight,
    kind: ArcKind,
    t: usize,
    u: usize,
) -> Arc {
    Arc {
        src,
        dst,
        label,
        olabel,
        weight,
        kind,
        frame: Some(t),
        position: Some(u),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::NEG_INF;
    use crate::wfst::{topo_sort, total_weight};
    use approx::assert_abs_diff_eq;

    fn count(g: &Wfst, kind: ArcKind) -> usize {
        g.arcs().iter().filter(|a| a.kind == kind).count()
    }

    #[test]
    fn transcript_graph_shapes() {
        let v = Vocab::new(4).unwrap();
        let g = build_transcript_graph(&v, &Transcript::default()).unwrap();
        assert_eq!((g.num_states(), g.num_arcs()), (2, 1));
        let g = build_transcript_graph(&v, &vec![1].into()).unwrap();
        assert_eq!((g.num_states(), g.num_arcs()), (3, 2));
        let g = build_transcript_graph(&v, &vec![1, 2, 3].into()).unwrap();
        assert_eq!((g.num_states(), g.num_arcs()), (5, 4));
        let labels: Vec<Label> = g.arcs().iter().map(|a| a.label).collect();
        assert_eq!(
            labels,
            vec![Label::Symbol(1), Label::Symbol(2), Label::Symbol(3), Label::Epsilon]
        );
        assert!(matches!(
            build_transcript_graph(&v, &vec![0].into()),
            Err(GraphError::Vocab(VocabError::BlankInTranscript(0)))
        ));
    }

    #[test]
    fn ws_transcript_graph_shapes() {
        let v = Vocab::new(4).unwrap();
        let p = PenaltyConfig::default();
        let g = build_ws_transcript_graph(&v, &vec![1].into(), &p).unwrap();
        assert_eq!((g.num_states(), g.num_arcs()), (3, 5));
        let g = build_ws_transcript_graph(&v, &Transcript::default(), &p).unwrap();
        assert_eq!(g.num_arcs(), 2);
        let g = build_ws_transcript_graph(&v, &vec![1, 2, 3].into(), &p).unwrap();
        assert_eq!(g.num_arcs(), 11);
        let loops = g.arcs().iter().filter(|a| a.src == a.dst).count();
        assert_eq!(loops, 4);
        assert_eq!(topo_sort(&g), Err(crate::wfst::WfstError::CyclicGraph));
    }

    #[test]
    fn rnnt_lattice_matches_reference_topology() {
        let v = Vocab::new(4).unwrap();
        let y: Transcript = vec![1, 2, 3].into();
        let logp = LogProbTensor::uniform(4, 4, 4);
        let g = build_rnnt_lattice(&v, &y, &logp).unwrap();
        assert_eq!(g.num_states(), 18);
        assert_eq!(g.num_arcs(), 26);
        assert_eq!(g.final_state(), 17);
        assert_eq!(count(&g, ArcKind::Token), 12);
        assert_eq!(count(&g, ArcKind::Blank), 13);
        // state 7 is (t=1, u=2); its token arc emits the third symbol
        let token_from_7: Vec<_> = g
            .arcs()
            .iter()
            .filter(|a| a.src == 7 && a.kind == ArcKind::Token)
            .collect();
        assert_eq!(token_from_7.len(), 1);
        assert_eq!(token_from_7[0].label, Label::Symbol(3));
        assert_eq!((token_from_7[0].frame, token_from_7[0].position), (Some(1), Some(2)));
        assert_eq!(topo_sort(&g).unwrap(), (0..18).collect::<Vec<_>>());
    }

    #[test]
    fn wst_lattice_counts() {
        let v = Vocab::new(4).unwrap();
        let y: Transcript = vec![1, 2, 3].into();
        let logp = LogProbTensor::uniform(4, 4, 4);
        let g = build_wst_lattice(&v, &y, &logp, &PenaltyConfig::default()).unwrap();
        assert_eq!((g.num_states(), g.num_arcs()), (18, 50));
        assert_eq!(count(&g, ArcKind::TokenBypass), 12);
        assert_eq!(count(&g, ArcKind::BlankBypass), 12);
        // the terminating blank has no twin
        let pre_final_in = g.arcs().iter().filter(|a| a.dst == 16).count();
        assert_eq!(pre_final_in, 1);
    }

    #[test]
    fn degenerate_lattice() {
        let v = Vocab::new(3).unwrap();
        let z = crate::tensor::LogitTensor::new(crate::tensor::Tensor3::from_vec(1, 1, 3, vec![-0.2, -2.0, -2.5]).unwrap())
            .unwrap();
        let logp = crate::loss::log_softmax(&z);
        let g = build_rnnt_lattice(&v, &Transcript::default(), &logp).unwrap();
        assert_eq!((g.num_states(), g.num_arcs()), (3, 2));
        assert_eq!(total_weight(&g).unwrap(), logp.get(0, 0, 0));
    }

    #[test]
    fn worked_example_totals() {
        let v = Vocab::new(3).unwrap();
        let y: Transcript = vec![1].into();
        let logp = LogProbTensor::uniform(2, 2, 3);
        let rnnt = total_weight(&build_rnnt_lattice(&v, &y, &logp).unwrap()).unwrap();
        assert_abs_diff_eq!(rnnt, (2.0f64 / 27.0).ln(), epsilon = 1e-12);
        let zero = PenaltyConfig::new(0.0, 0.0).unwrap();
        let wst = total_weight(&build_wst_lattice(&v, &y, &logp, &zero).unwrap()).unwrap();
        assert_abs_diff_eq!(wst, (8.0f64 / 27.0).ln(), epsilon = 1e-12);
        let off = total_weight(&build_wst_lattice(&v, &y, &logp, &PenaltyConfig::disabled()).unwrap()).unwrap();
        assert_eq!(off, rnnt);
    }

    #[test]
    fn shape_mismatch() {
        let v = Vocab::new(3).unwrap();
        let logp = LogProbTensor::uniform(2, 3, 3);
        assert!(matches!(
            build_rnnt_lattice(&v, &vec![1].into(), &logp),
            Err(GraphError::Tensor(TensorError::ShapeMismatch { .. }))
        ));
        let logp = LogProbTensor::uniform(2, 2, 4);
        assert!(build_wst_lattice(&v, &vec![1].into(), &logp, &PenaltyConfig::default()).is_err());
    }

    #[test]
    fn penalty_validation() {
        assert!(PenaltyConfig::new(f64::NAN, 0.0).is_err());
        assert!(PenaltyConfig::new(0.0, f64::INFINITY).is_err());
        assert!(PenaltyConfig::new(NEG_INF, 0.3).is_ok());
        let p = PenaltyConfig::new(-1.0, -2.0).unwrap();
        assert_eq!(p.for_epoch(0), p.for_epoch(17));
    }

    #[test]
    fn grid_numbering() {
        let grid = LatticeGrid::new(4, 3);
        let pts = grid.points();
        for (id, &(t, u)) in pts.iter().enumerate() {
            assert_eq!(grid.state_id(t, u), id);
        }
        assert_eq!(grid.state_id(1, 2), 7);
        assert_eq!(grid.state_id(3, 3), 15);
        let tall = LatticeGrid::new(2, 4);
        for (id, &(t, u)) in tall.points().iter().enumerate() {
            assert_eq!(tall.state_id(t, u), id);
        }
    }
}
