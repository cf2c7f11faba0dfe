//! Synthetic transcript errors and WER scoring.
//!
//! Corruption procedure: every input token independently triggers an event
//! with probability `rate`. A substitution replaces the token with a uniformly
//! drawn different real token, an insertion keeps the token and appends a
//! uniformly drawn real token right after it, and a deletion drops it. The
//! `mixed` kind picks one of the three uniformly per event.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{derive_seed, seeded, Rng};
use crate::vocab::{TokenId, Transcript, Vocab};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CorruptionError {
    #[error("corruption rate {0} outside [0, 1]")]
    InvalidRate(f64),
    #[error("reference transcript is empty; error rate undefined")]
    EmptyReference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorruptionKind {
    Sub,
    Ins,
    Del,
    Mixed,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 4] = [
        CorruptionKind::Sub,
        CorruptionKind::Ins,
        CorruptionKind::Del,
        CorruptionKind::Mixed,
    ];
}

impl std::fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CorruptionKind::Sub => "sub",
            CorruptionKind::Ins => "ins",
            CorruptionKind::Del => "del",
            CorruptionKind::Mixed => "mixed",
        })
    }
}

impl std::str::FromStr for CorruptionKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sub" => Ok(CorruptionKind::Sub),
            "ins" => Ok(CorruptionKind::Ins),
            "del" => Ok(CorruptionKind::Del),
            "mixed" => Ok(CorruptionKind::Mixed),
            other => Err(format!("unknown corruption kind '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub rate: f64,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, rate: f64, seed: u64) -> Result<Self, CorruptionError> {
        let s = Self { kind, rate, seed };
        s.validate()?;
        Ok(s)
    }

    pub fn clean(seed: u64) -> Self {
        Self {
            kind: CorruptionKind::Sub,
            rate: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), CorruptionError> {
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(CorruptionError::InvalidRate(self.rate));
        }
        Ok(())
    }
}

/// Events actually applied by the corruption procedure.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCounts {
    pub subs: usize,
    pub ins: usize,
    pub dels: usize,
}

impl EventCounts {
    pub fn total(&self) -> usize {
        self.subs + self.ins + self.dels
    }
}

impl std::ops::AddAssign for EventCounts {
    fn add_assign(&mut self, o: Self) {
        self.subs += o.subs;
        self.ins += o.ins;
        self.dels += o.dels;
    }
}

/// Corrupts one transcript with a generator seeded from `spec.seed`.
///
/// With a two-symbol vocabulary there is no alternative token, so
/// substitutions leave the token unchanged and are not counted.
pub fn corrupt(vocab: &Vocab, y: &Transcript, spec: &CorruptionSpec) -> Transcript {
    corrupt_with_events(vocab, y, spec).0
}

pub fn corrupt_with_events(vocab: &Vocab, y: &Transcript, spec: &CorruptionSpec) -> (Transcript, EventCounts) {
    let mut rng = seeded(spec.seed);
    corrupt_with_rng(vocab, y, spec.kind, spec.rate, &mut rng)
}

fn corrupt_with_rng(
    vocab: &Vocab,
    y: &Transcript,
    kind: CorruptionKind,
    rate: f64,
    rng: &mut Rng,
) -> (Transcript, EventCounts) {
    let n_tokens = vocab.num_tokens() as TokenId;
    let mut out = Vec::with_capacity(y.len() * 2);
    let mut counts = EventCounts::default();
    for &tok in y.iter() {
        if rng.random::<f64>() >= rate {
            out.push(tok);
            continue;
        }
        let event = match kind {
            CorruptionKind::Mixed => match rng.random_range(0..3u8) {
                0 => CorruptionKind::Sub,
                1 => CorruptionKind::Ins,
                _ => CorruptionKind::Del,
            },
            k => k,
        };
        match event {
            CorruptionKind::Sub if n_tokens >= 2 => {
                // uniform over the n_tokens - 1 real tokens other than `tok`
                let mut r = rng.random_range(1..n_tokens);
                if r >= tok {
                    r += 1;
                }
                out.push(r);
                counts.subs += 1;
            }
            CorruptionKind::Sub => out.push(tok),
            CorruptionKind::Ins => {
                out.push(tok);
                out.push(rng.random_range(1..=n_tokens));
                counts.ins += 1;
            }
            CorruptionKind::Del => counts.dels += 1,
            CorruptionKind::Mixed => unreachable!("mixed resolves to a concrete event"),
        }
    }
    (Transcript::new(out), counts)
}

/// Corrupts a dataset; utterance `i` uses the stream `derive_seed(seed, i)`.
pub fn corrupt_dataset(vocab: &Vocab, data: &[Transcript], spec: &CorruptionSpec) -> Vec<(Transcript, EventCounts)> {
    data.par_iter()
        .enumerate()
        .map(|(i, y)| {
            let mut rng = seeded(derive_seed(spec.seed, i as u64));
            corrupt_with_rng(vocab, y, spec.kind, spec.rate, &mut rng)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditCounts {
    pub subs: usize,
    pub ins: usize,
    pub dels: usize,
}

impl EditCounts {
    pub fn total(&self) -> usize {
        self.subs + self.ins + self.dels
    }
}

impl std::ops::AddAssign for EditCounts {
    fn add_assign(&mut self, o: Self) {
        self.subs += o.subs;
        self.ins += o.ins;
        self.dels += o.dels;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WerReport {
    pub rate: f64,
    pub subs: usize,
    pub ins: usize,
    pub dels: usize,
}

/// Minimum edit alignment counts. On ties the backtrace prefers the diagonal
/// (match or substitution), then insertion, then deletion.
pub fn edit_counts(reference: &[TokenId], hypothesis: &[TokenId]) -> EditCounts {
    let (n, m) = (reference.len(), hypothesis.len());
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        d[i * w] = i;
    }
    for j in 0..=m {
        d[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let diag = d[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            let ins = d[i * w + j - 1] + 1;
            let del = d[(i - 1) * w + j] + 1;
            d[i * w + j] = diag.min(ins).min(del);
        }
    }

    let mut counts = EditCounts::default();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let mismatch = reference[i - 1] != hypothesis[j - 1];
            if here == d[(i - 1) * w + j - 1] + usize::from(mismatch) {
                counts.subs += usize::from(mismatch);
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if j > 0 && here == d[i * w + j - 1] + 1 {
            counts.ins += 1;
            j -= 1;
        } else {
            counts.dels += 1;
            i -= 1;
        }
    }
    counts
}

pub fn wer(reference: &Transcript, hypothesis: &Transcript) -> Result<WerReport, CorruptionError> {
    if reference.is_empty() {
        return Err(CorruptionError::EmptyReference);
    }
    let c = edit_counts(reference, hypothesis);
    Ok(WerReport {
        rate: c.total() as f64 / reference.len() as f64,
        subs: c.subs,
        ins: c.ins,
        dels: c.dels,
    })
}

/// Corpus-level scoring of paired references and hypotheses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusWer {
    /// Total edits over total reference tokens.
    pub rate: f64,
    /// Mean of per-utterance rates over utterances with a non-empty reference.
    pub mean_utterance_rate: f64,
    pub subs: usize,
    pub ins: usize,
    pub dels: usize,
    pub ref_tokens: usize,
    pub utterances: usize,
}

pub fn corpus_wer<'a>(pairs: impl IntoIterator<Item = (&'a Transcript, &'a Transcript)>) -> CorpusWer {
    let mut edits = EditCounts::default();
    let mut ref_tokens = 0;
    let mut utterances = 0;
    let mut rate_sum = 0.0;
    let mut scored = 0usize;
    for (r, h) in pairs {
        let c = edit_counts(r, h);
        if !r.is_empty() {
            rate_sum += c.total() as f64 / r.len() as f64;
            scored += 1;
        }
        edits += c;
        ref_tokens += r.len();
        utterances += 1;
    }
    CorpusWer {
        rate: if ref_tokens == 0 { 0.0 } else { edits.total() as f64 / ref_tokens as f64 },
        mean_utterance_rate: if scored == 0 { 0.0 } else { rate_sum / scored as f64 },
        subs: edits.subs,
        ins: edits.ins,
        dels: edits.dels,
        ref_tokens,
        utterances,
    }
}

/// Realized corruption of a dataset: the WER of the corrupted transcripts
/// against the clean ones, plus the events the procedure applied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionReport {
    pub measured: CorpusWer,
    pub applied: EventCounts,
    pub sub_rate: f64,
    pub ins_rate: f64,
    pub del_rate: f64,
}

pub fn measure_corruption(vocab: &Vocab, data: &[Transcript], spec: &CorruptionSpec) -> CorruptionReport {
    let corrupted = corrupt_dataset(vocab, data, spec);
    report_corruption(data, &corrupted)
}

pub fn report_corruption(clean: &[Transcript], corrupted: &[(Transcript, EventCounts)]) -> CorruptionReport {
    let measured = corpus_wer(clean.iter().zip(corrupted.iter().map(|(t, _)| t)));
    let mut applied = EventCounts::default();
    for (_, e) in corrupted {
        applied += *e;
    }
    let per_token = |n: usize| {
        if measured.ref_tokens == 0 {
            0.0
        } else {
            n as f64 / measured.ref_tokens as f64
        }
    };
    CorruptionReport {
        measured,
        applied,
        sub_rate: per_token(measured.subs),
        ins_rate: per_token(measured.ins),
        del_rate: per_token(measured.dels),
    }
}
