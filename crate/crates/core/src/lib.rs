//! Argument-aware sequence modeling of kernel system-call traces.
//!
//! Events are read from JSONL or babeltrace text, tokenised into
//! [`event::EventRecord`]s, windowed into fixed-length sequences and fed to
//! small LSTM or Transformer language models whose inputs combine learned
//! embeddings with sinusoidal encodings of the call arguments.

pub mod dataset;
pub mod error;
pub mod event;
pub mod experiment;
pub mod ingest;
pub mod jsonl;
pub mod model;
pub mod repr;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use event::{encode_event, Event, EventRecord, RetClass, Vocab};
