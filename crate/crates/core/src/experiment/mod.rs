//! Experiment configuration, orchestration of the comparison studies, and
//! their reports.

mod report;
mod runs;

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::event::Vocab;
use crate::ingest::{split, Sequence, SplitSpec};
use crate::model::{ModelConfig, Objective, TrainConfig};
use crate::repr::{Ablation, RepresentationConfig};

pub use report::{mean_std, quantile, Report};
pub use runs::{
    run_ablation, run_mask_study, run_position_study, score_sequences, score_summary, time_overhead,
    train_and_evaluate, MetricsReport, OverheadReport, RunOutcome,
};

/// Where the data comes from and how it is partitioned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSpec {
    /// Dataset file holding training (and, without `test`, evaluation) windows.
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub valid_fraction: f64,
    /// Share carved out for evaluation when no test file is given.
    pub test_fraction: f64,
    pub split_seed: u64,
    /// Cap on evaluated test sequences.
    pub max_eval_sequences: Option<usize>,
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec {
            train: None,
            test: None,
            valid_fraction: 0.1,
            test_fraction: 0.1,
            split_seed: 0,
            max_eval_sequences: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateSpec {
    pub ablations: Vec<Ablation>,
    /// Row objectives; empty means the experiment's own objective.
    pub objectives: Vec<Objective>,
    /// Row architectures; empty means the configured model kind.
    pub kinds: Vec<crate::model::ModelKind>,
}

impl Default for AblateSpec {
    fn default() -> Self {
        AblateSpec {
            ablations: Ablation::GRID.to_vec(),
            objectives: Vec::new(),
            kinds: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PositionSpec {
    /// `(d_timestamp, d_position)` pairs; zero drops the channel.
    pub grid: Vec<(usize, usize)>,
}

pub const DEFAULT_POSITION_GRID: [(usize, usize); 5] = [(0, 0), (8, 0), (0, 8), (8, 8), (0, 16)];

impl Default for PositionSpec {
    fn default() -> Self {
        PositionSpec {
            grid: DEFAULT_POSITION_GRID.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskStudySpec {
    pub p_values: Vec<f64>,
    /// Positions sampled per sequence in the zero-shot evaluation.
    pub zero_shot_positions: Option<usize>,
}

pub const DEFAULT_MASK_RATES: [f64; 6] = [0.05, 0.10, 0.15, 0.20, 0.25, 0.30];

impl Default for MaskStudySpec {
    fn default() -> Self {
        MaskStudySpec {
            p_values: DEFAULT_MASK_RATES.to_vec(),
            zero_shot_positions: Some(16),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OverheadSpec {
    pub epochs: usize,
}

impl Default for OverheadSpec {
    fn default() -> Self {
        OverheadSpec { epochs: 5 }
    }
}

/// Everything one experiment needs, loadable from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub objective: Objective,
    pub ablation: Ablation,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub data: DataSpec,
    /// Base dimensions; each ablation selects groups on top of it.
    pub representation: RepresentationConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub ablate: AblateSpec,
    pub position: PositionSpec,
    pub mask: MaskStudySpec,
    pub overhead: OverheadSpec,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            objective: Objective::Lm,
            ablation: Ablation::All,
            seeds: vec![0],
            output_dir: PathBuf::from("runs"),
            data: DataSpec::default(),
            representation: RepresentationConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            ablate: AblateSpec::default(),
            position: PositionSpec::default(),
            mask: MaskStudySpec::default(),
            overhead: OverheadSpec::default(),
        }
    }
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("at least one seed is required"));
        }
        self.representation.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        for f in [self.data.valid_fraction, self.data.test_fraction] {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::config(format!("split fractions must lie in (0, 1), got {f}")));
            }
        }
        Ok(())
    }

    /// Representation selected by `ablation` over the base dimensions.
    pub fn representation_for(&self, ablation: Ablation) -> RepresentationConfig {
        ablation.config_from(&self.representation)
    }

    /// Reproducibility header: the resolved spec plus data provenance.
    pub fn header(&self, splits: &Splits) -> Value {
        let mut resolved = self.clone();
        resolved.model = splits.model_config(&self.model);
        json!({
            "spec": serde_json::to_value(&resolved).unwrap_or(Value::Null),
            "seeds": self.seeds,
            "data": splits.summary(),
        })
    }

    /// Loads the configured dataset files and partitions them.
    pub fn load_splits(&self) -> Result<Splits> {
        let train_path = self
            .data
            .train
            .as_ref()
            .ok_or_else(|| Error::config("no training dataset configured"))?;
        let train = read_dataset(train_path)?;
        let test = self.data.test.as_deref().map(read_dataset).transpose()?;
        Splits::new(train, test, &self.data)
    }
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let f = File::open(path).map_err(|e| Error::config(format!("cannot open {}: {e}", path.display())))?;
    Dataset::read(BufReader::new(f))
}

/// Train/validation/test sequences sharing one pair of vocabularies.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub sys_vocab: Vocab,
    pub proc_vocab: Vocab,
    pub window_len: usize,
    pub train: Vec<Sequence>,
    pub valid: Vec<Sequence>,
    pub test: Vec<Sequence>,
}

impl Splits {
    /// Without a test dataset, the test part is carved out of `train`
    /// first, then validation is drawn from the remainder.
    pub fn new(train: Dataset, test: Option<Dataset>, data: &DataSpec) -> Result<Self> {
        let Dataset {
            sys_vocab,
            proc_vocab,
            window_len,
            sequences,
        } = train;
        let (rest, mut test) = match test {
            Some(t) => {
                for (which, a, b) in [("sysname", &sys_vocab, &t.sys_vocab), ("procname", &proc_vocab, &t.proc_vocab)] {
                    if a.hash() != b.hash() {
                        return Err(Error::VocabMismatch {
                            which: which.into(),
                            expected: a.hash(),
                            found: b.hash(),
                        });
                    }
                }
                if t.window_len != window_len {
                    return Err(Error::config(format!(
                        "test windows have length {}, training windows {window_len}",
                        t.window_len
                    )));
                }
                (sequences, t.sequences)
            }
            None => split(
                sequences,
                &SplitSpec {
                    valid_fraction: data.test_fraction,
                    seed: data.split_seed,
                },
            )?,
        };
        let (train, valid) = split(
            rest,
            &SplitSpec {
                valid_fraction: data.valid_fraction,
                seed: data.split_seed.wrapping_add(1),
            },
        )?;
        if let Some(cap) = data.max_eval_sequences {
            test.truncate(cap);
        }
        if test.is_empty() {
            return Err(Error::Empty("no test sequences".into()));
        }
        Ok(Splits {
            sys_vocab,
            proc_vocab,
            window_len,
            train,
            valid,
            test,
        })
    }

    pub fn summary(&self) -> Value {
        json!({
            "window_len": self.window_len,
            "train": self.train.len(),
            "valid": self.valid.len(),
            "test": self.test.len(),
            "sys_vocab": self.sys_vocab.len(),
            "proc_vocab": self.proc_vocab.len(),
            "sys_vocab_hash": self.sys_vocab.hash(),
            "proc_vocab_hash": self.proc_vocab.hash(),
        })
    }

    pub fn model_config(&self, base: &ModelConfig) -> ModelConfig {
        ModelConfig {
            window_len: self.window_len,
            ..*base
        }
    }
}
