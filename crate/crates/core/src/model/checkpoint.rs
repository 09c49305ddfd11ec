use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::Vocab;

use super::train::TrainConfig;
use super::Model;

pub const CHECKPOINT_FORMAT: &str = "sysarg-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Self-describing model snapshot: parameters, configs, vocabularies and
/// their hashes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub sys_vocab_hash: String,
    pub proc_vocab_hash: String,
    pub sys_vocab: Vocab,
    pub proc_vocab: Vocab,
    pub train: Option<TrainConfig>,
    pub model: Model,
}

impl Checkpoint {
    pub fn new(model: Model, sys_vocab: Vocab, proc_vocab: Vocab, train: Option<TrainConfig>) -> Result<Self> {
        if model.sys_vocab != sys_vocab.len() || model.proc_vocab != proc_vocab.len() {
            return Err(Error::Checkpoint(format!(
                "model expects vocabularies of {} and {} tokens, got {} and {}",
                model.sys_vocab,
                model.proc_vocab,
                sys_vocab.len(),
                proc_vocab.len()
            )));
        }
        Ok(Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            sys_vocab_hash: sys_vocab.hash(),
            proc_vocab_hash: proc_vocab.hash(),
            sys_vocab,
            proc_vocab,
            train,
            model,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut ck: Checkpoint = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("not a checkpoint: format {:?}", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {}", ck.version)));
        }
        ck.model.params.reindex();
        ck.verify_vocab(&ck.sys_vocab.clone(), &ck.proc_vocab.clone())?;
        if ck.model.sys_vocab != ck.sys_vocab.len() || ck.model.proc_vocab != ck.proc_vocab.len() {
            return Err(Error::Checkpoint("vocabulary sizes disagree with the model".into()));
        }
        Ok(ck)
    }

    /// Fails unless both vocabularies hash to the recorded values.
    pub fn verify_vocab(&self, sys: &Vocab, proc: &Vocab) -> Result<()> {
        for (which, expected, v) in [
            ("sysname", &self.sys_vocab_hash, sys),
            ("procname", &self.proc_vocab_hash, proc),
        ] {
            let found = v.hash();
            if &found != expected {
                return Err(Error::VocabMismatch {
                    which: which.into(),
                    expected: expected.clone(),
                    found,
                });
            }
        }
        Ok(())
    }
}
