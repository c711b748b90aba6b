//! Compositional end-to-end spoken sequence labeling.
//!
//! An ASR sub-network (speech encoder + autoregressive token decoder) exposes
//! its decoder hidden states to an NLU sub-network, which encodes them
//! (optionally cross-attending to the speech encoder) and tags every subtoken
//! with a CRF or a token-classification head. The whole stack is trained
//! jointly and compared with cascaded and direct end-to-end baselines on a
//! synthetic spoken-NER corpus.

pub mod asr;
pub mod crf;
pub mod error;
pub mod metrics;
pub mod nlu;
pub mod pipelines;
pub mod synthdata;
pub mod tagging;
pub mod tensorcore;

pub use error::{Error, Result};
