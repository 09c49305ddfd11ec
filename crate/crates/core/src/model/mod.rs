//! Toy sequence models over event representations.

mod checkpoint;
mod input;
mod mask;
mod net;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use input::{model_input, InputSeq};
pub use mask::{mlm_mask, mlm_mask_with, MaskCounts, MaskPlan, MaskedSequence};
pub use net::{lm_forward, lm_loss, mlm_forward, mlm_loss, MlmOutput};
pub use train::{
    evaluate, evaluate_mlm, score, train, zero_shot_lm, EpochRecord, Metrics, TrainConfig, TrainHistory,
};

use crate::error::{Error, Result};
use crate::event::RetClass;
use crate::ingest::DEFAULT_WINDOW_LEN;
use crate::repr::{RepresentationConfig, RepresentationTables, EmbeddingTable, EMBEDDING_INIT};
use crate::tensor::{Matrix, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Lstm,
    Transformer,
}

impl ModelKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lstm" => Ok(ModelKind::Lstm),
            "transformer" => Ok(ModelKind::Transformer),
            _ => Err(Error::config(format!("unknown model kind {s:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Lstm => "lstm",
            ModelKind::Transformer => "transformer",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Left-to-right next-call prediction.
    Lm,
    /// Masked-event prediction with bidirectional context.
    Mlm,
}

impl Objective {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lm" => Ok(Objective::Lm),
            "mlm" => Ok(Objective::Mlm),
            _ => Err(Error::config(format!("unknown objective {s:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Objective::Lm => "lm",
            Objective::Mlm => "mlm",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub lstm_layers: usize,
    pub lstm_hidden: usize,
    pub tf_layers: usize,
    pub tf_heads: usize,
    pub tf_ff: usize,
    /// Width of the concatenated position encoding (Transformer only; 0 omits it).
    pub d_position: usize,
    pub dropout: f64,
    pub window_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::Transformer,
            lstm_layers: 2,
            lstm_hidden: 96,
            tf_layers: 6,
            tf_heads: 8,
            tf_ff: 128,
            d_position: 8,
            dropout: 0.0,
            window_len: DEFAULT_WINDOW_LEN,
        }
    }
}

impl ModelConfig {
    pub fn lstm() -> Self {
        ModelConfig {
            kind: ModelKind::Lstm,
            ..Self::default()
        }
    }

    pub fn transformer() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = match self.kind {
            ModelKind::Lstm => vec![("lstm_layers", self.lstm_layers), ("lstm_hidden", self.lstm_hidden)],
            ModelKind::Transformer => vec![
                ("tf_layers", self.tf_layers),
                ("tf_heads", self.tf_heads),
                ("tf_ff", self.tf_ff),
            ],
        };
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if self.d_position % 2 != 0 {
            return Err(Error::config(format!("d_position must be even, got {}", self.d_position)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        if self.window_len < 2 {
            return Err(Error::config("window_len must be at least 2"));
        }
        Ok(())
    }

    /// Position channel width actually used by this architecture.
    pub fn position_dim(&self) -> usize {
        match self.kind {
            ModelKind::Lstm => 0,
            ModelKind::Transformer => self.d_position,
        }
    }

    /// Input row width `D`.
    pub fn input_dim(&self, repr: &RepresentationConfig) -> usize {
        repr.total_dim() + self.position_dim()
    }

    /// Transformer width: `D` rounded up to a multiple of the head count.
    pub fn width(&self, repr: &RepresentationConfig) -> usize {
        let d = self.input_dim(repr);
        match self.kind {
            ModelKind::Lstm => d,
            ModelKind::Transformer => d.div_ceil(self.tf_heads) * self.tf_heads,
        }
    }

    /// Whether a learned projection maps the input to [`ModelConfig::width`].
    pub fn needs_projection(&self, repr: &RepresentationConfig) -> bool {
        self.width(repr) != self.input_dim(repr)
    }
}

/// A sequence model together with its representation settings and parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub repr: RepresentationConfig,
    pub config: ModelConfig,
    pub objective: Objective,
    pub sys_vocab: usize,
    pub proc_vocab: usize,
    pub seed: u64,
    pub params: ParamStore,
}

impl Model {
    /// Randomly initialised model. Embeddings are uniform in
    /// `[-EMBEDDING_INIT, EMBEDDING_INIT]`, weights Xavier-uniform, biases zero.
    pub fn new(
        repr: RepresentationConfig,
        config: ModelConfig,
        objective: Objective,
        sys_vocab: usize,
        proc_vocab: usize,
        seed: u64,
    ) -> Result<Self> {
        repr.validate()?;
        config.validate()?;
        if objective == Objective::Mlm && config.kind == ModelKind::Lstm {
            return Err(Error::Unsupported("masked objective requires the transformer".into()));
        }
        if sys_vocab == 0 || (repr.groups.process && proc_vocab == 0) {
            return Err(Error::config("vocabularies must be non-empty"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let d_sys = repr.d_sysname;
        p.add("emb.sysname", Matrix::uniform(sys_vocab, d_sys, EMBEDDING_INIT, &mut rng));
        if repr.groups.call {
            p.add("emb.entry", Matrix::uniform(2, d_sys, EMBEDDING_INIT, &mut rng));
            p.add("emb.ret", Matrix::uniform(RetClass::ALL.len(), d_sys, EMBEDDING_INIT, &mut rng));
        }
        if repr.groups.process {
            p.add("emb.procname", Matrix::uniform(proc_vocab, repr.d_procname, EMBEDDING_INIT, &mut rng));
        }

        let d_in = config.input_dim(&repr);
        let out_in = match config.kind {
            ModelKind::Lstm => {
                let h = config.lstm_hidden;
                for l in 0..config.lstm_layers {
                    let fan_in = if l == 0 { d_in } else { h };
                    p.add(format!("lstm.{l}.wx"), Matrix::xavier(fan_in, 4 * h, &mut rng));
                    p.add(format!("lstm.{l}.wh"), Matrix::xavier(h, 4 * h, &mut rng));
                    let mut b = Matrix::zeros(1, 4 * h);
                    // Forget-gate bias of one keeps early gradients flowing.
                    b.data_mut()[h..2 * h].fill(1.0);
                    p.add(format!("lstm.{l}.b"), b);
                }
                h
            }
            ModelKind::Transformer => {
                let w = config.width(&repr);
                if config.needs_projection(&repr) {
                    p.add("tf.proj.w", Matrix::xavier(d_in, w, &mut rng));
                    p.add("tf.proj.b", Matrix::zeros(1, w));
                }
                for l in 0..config.tf_layers {
                    p.add(format!("tf.{l}.qkv.w"), Matrix::xavier(w, 3 * w, &mut rng));
                    p.add(format!("tf.{l}.qkv.b"), Matrix::zeros(1, 3 * w));
                    p.add(format!("tf.{l}.out.w"), Matrix::xavier(w, w, &mut rng));
                    p.add(format!("tf.{l}.out.b"), Matrix::zeros(1, w));
                    p.add(format!("tf.{l}.ln1.g"), Matrix::filled(1, w, 1.0));
                    p.add(format!("tf.{l}.ln1.b"), Matrix::zeros(1, w));
                    p.add(format!("tf.{l}.ff1.w"), Matrix::xavier(w, config.tf_ff, &mut rng));
                    p.add(format!("tf.{l}.ff1.b"), Matrix::zeros(1, config.tf_ff));
                    p.add(format!("tf.{l}.ff2.w"), Matrix::xavier(config.tf_ff, w, &mut rng));
                    p.add(format!("tf.{l}.ff2.b"), Matrix::zeros(1, w));
                    p.add(format!("tf.{l}.ln2.g"), Matrix::filled(1, w, 1.0));
                    p.add(format!("tf.{l}.ln2.b"), Matrix::zeros(1, w));
                }
                w
            }
        };
        p.add("out.w", Matrix::xavier(out_in, sys_vocab, &mut rng));
        p.add("out.b", Matrix::zeros(1, sys_vocab));

        Ok(Model {
            repr,
            config,
            objective,
            sys_vocab,
            proc_vocab,
            seed,
            params: p,
        })
    }

    /// Whether attention is restricted to the left context.
    pub fn causal(&self) -> bool {
        self.objective == Objective::Lm
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim(&self.repr)
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    /// Number of scalars in the parameter tensor `name`, if present.
    pub fn tensor_size(&self, name: &str) -> Option<usize> {
        self.params.id(name).map(|id| self.params.get(id).len())
    }

    /// Zeroes the output layer so every prediction is uniform.
    pub fn zero_output(&mut self) {
        for name in ["out.w", "out.b"] {
            let id = self.params.id(name).expect("output layer");
            self.params.get_mut(id).data_mut().fill(0.0);
        }
    }

    /// Snapshot of the embedding tables for use with [`crate::repr::represent`].
    pub fn representation_tables(&self) -> Result<RepresentationTables> {
        let table = |name: &str| -> Result<Option<EmbeddingTable>> {
            self.params
                .id(name)
                .map(|id| EmbeddingTable::new(self.params.get(id).clone()))
                .transpose()
        };
        Ok(RepresentationTables {
            sysname: table("emb.sysname")?.expect("sysname table"),
            entry: table("emb.entry")?,
            ret: table("emb.ret")?,
            procname: table("emb.procname")?,
        })
    }

    pub(crate) fn check_ids(&self, seq: &InputSeq<'_>) -> Result<()> {
        for r in seq.records {
            if r.sysname_id as usize >= self.sys_vocab {
                return Err(Error::OutOfRange {
                    id: r.sysname_id as usize,
                    rows: self.sys_vocab,
                });
            }
            if self.repr.groups.process && r.procname_id as usize >= self.proc_vocab {
                return Err(Error::OutOfRange {
                    id: r.procname_id as usize,
                    rows: self.proc_vocab,
                });
            }
        }
        Ok(())
    }
}
