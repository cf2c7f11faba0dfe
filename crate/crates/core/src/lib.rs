//! Weakly supervised transducer (WST) training loss.
//!
//! The standard transducer loss and the WST loss are both computed as `-log`
//! of the total weight of an explicit acyclic training lattice. The WST
//! lattice adds star-labelled bypass arcs next to every token and blank arc
//! so that substituted, inserted and deleted transcript tokens can be
//! absorbed during training.

pub mod corruption;
pub mod graphs;
pub mod loss;
pub mod numerics;
pub mod oracle;
pub mod rng;
mod serde_ext;
pub mod tensor;
pub mod toytrain;
pub mod vocab;
pub mod wfst;

pub use graphs::{
    build_rnnt_lattice, build_transcript_graph, build_ws_transcript_graph, build_wst_lattice, PenaltyConfig,
};
pub use loss::{batch_loss, log_softmax, rnnt_loss, star_logprob, wst_loss, Criterion, LossOutput};
pub use numerics::{log_add, log_sum, LogWeight, NEG_INF};
pub use tensor::{GradTensor, LogProbTensor, LogitTensor, Tensor3, TensorFile};
pub use vocab::{validate_transcript, TokenId, Transcript, Vocab};
pub use wfst::{arc_posteriors, export_dot, export_json, topo_sort, total_weight, Arc, ArcKind, Label, Wfst};
