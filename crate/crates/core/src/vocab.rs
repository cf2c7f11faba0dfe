//! Token identities: blank is id 0, real tokens are `1..size`, and the
//! virtual star label sits at `size`, outside every probability row.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type TokenId = u32;

/// The blank symbol is always id 0.
pub const BLANK: TokenId = 0;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VocabError {
    #[error("vocabulary size must be at least 2 (blank plus one token), got {0}")]
    TooSmall(usize),
    #[error("token id {id} at position {position} is out of vocabulary")]
    OutOfVocabulary { position: usize, id: TokenId },
    #[error("blank appears in transcript at position {0}")]
    BlankInTranscript(usize),
    #[error("star appears in transcript at position {0}")]
    StarInTranscript(usize),
}

/// A vocabulary of `size` softmax outputs, blank included.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct Vocab {
    size: usize,
}

impl Vocab {
    pub fn new(size: usize) -> Result<Self, VocabError> {
        if size < 2 {
            return Err(VocabError::TooSmall(size));
        }
        Ok(Self { size })
    }

    /// Number of softmax outputs, blank included.
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn blank(&self) -> TokenId {
        BLANK
    }

    /// The virtual star label. Never a valid row index.
    pub fn star(&self) -> TokenId {
        self.size as TokenId
    }

    /// Number of real (non-blank) tokens.
    pub fn num_tokens(&self) -> usize {
        self.size - 1
    }

    pub fn is_real_token(&self, id: TokenId) -> bool {
        id >= 1 && (id as usize) < self.size
    }
}

impl TryFrom<usize> for Vocab {
    type Error = VocabError;

    fn try_from(size: usize) -> Result<Self, Self::Error> {
        Vocab::new(size)
    }
}

impl From<Vocab> for usize {
    fn from(v: Vocab) -> usize {
        v.size
    }
}

/// A token sequence. Validity against a [`Vocab`] is checked separately with
/// [`validate_transcript`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Transcript(Vec<TokenId>);

impl Transcript {
    pub fn new(tokens: Vec<TokenId>) -> Self {
        Self(tokens)
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<TokenId> {
        self.0
    }
}

impl From<Vec<TokenId>> for Transcript {
    fn from(tokens: Vec<TokenId>) -> Self {
        Self(tokens)
    }
}

impl std::ops::Deref for Transcript {
    type Target = [TokenId];

    fn deref(&self) -> &[TokenId] {
        &self.0
    }
}

pub fn validate_transcript(vocab: &Vocab, y: &Transcript) -> Result<(), VocabError> {
    for (position, &id) in y.iter().enumerate() {
        if id == BLANK {
            return Err(VocabError::BlankInTranscript(position));
        }
        if id == vocab.star() {
            return Err(VocabError::StarInTranscript(position));
        }
        if !vocab.is_real_token(id) {
            return Err(VocabError::OutOfVocabulary { position, id });
        }
    }
    Ok(())
}
