use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::{EventRecord, Vocab};

/// Selection and corruption rates for the masked objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskPlan {
    pub p_select: f64,
    pub frac_mask: f64,
    pub frac_random: f64,
    pub frac_keep: f64,
    pub seed: u64,
}

impl Default for MaskPlan {
    fn default() -> Self {
        MaskPlan {
            p_select: 0.25,
            frac_mask: 0.8,
            frac_random: 0.1,
            frac_keep: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskCounts {
    pub selected: usize,
    pub masked: usize,
    pub random: usize,
    pub kept: usize,
}

impl MaskPlan {
    pub fn with_p(p_select: f64) -> Self {
        MaskPlan {
            p_select,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p_select > 0.0 && self.p_select < 1.0) {
            return Err(Error::config(format!("p_select must lie in (0, 1), got {}", self.p_select)));
        }
        let fr = [self.frac_mask, self.frac_random, self.frac_keep];
        if fr.iter().any(|f| !(0.0..=1.0).contains(f)) || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::config("mask fractions must be in [0, 1] and sum to 1"));
        }
        Ok(())
    }

    /// `ceil(p * len)` selected; masked and random counts are floored and
    /// the remainder is kept.
    pub fn counts(&self, len: usize) -> MaskCounts {
        let selected = ((self.p_select * len as f64).ceil() as usize).min(len);
        let masked = (self.frac_mask * selected as f64).floor() as usize;
        let random = ((self.frac_random * selected as f64).floor() as usize).min(selected - masked);
        MaskCounts {
            selected,
            masked,
            random,
            kept: selected - masked - random,
        }
    }
}

/// A corrupted copy of a sequence with its prediction targets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedSequence {
    pub records: Vec<EventRecord>,
    /// Entirely masked rows.
    pub blanked: Vec<bool>,
    /// `(position, original sysname id)` in increasing position order.
    pub targets: Vec<(usize, u32)>,
}

/// Masks `records` using `plan.seed`.
pub fn mlm_mask(records: &[EventRecord], plan: &MaskPlan, sys_vocab: usize) -> Result<MaskedSequence> {
    mlm_mask_with(records, plan, sys_vocab, &mut ChaCha8Rng::seed_from_u64(plan.seed))
}

/// Selects positions uniformly without replacement. Masked positions get
/// the MASK id and lose their arguments; random positions get a random
/// corpus sysname and keep their arguments; kept positions are untouched.
pub fn mlm_mask_with<R: Rng + ?Sized>(
    records: &[EventRecord],
    plan: &MaskPlan,
    sys_vocab: usize,
    rng: &mut R,
) -> Result<MaskedSequence> {
    plan.validate()?;
    let n = records.len();
    let c = plan.counts(n);
    let picked = rand::seq::index::sample(rng, n, c.selected).into_vec();
    let mut out = records.to_vec();
    let mut blanked = vec![false; n];
    let corpus = Vocab::N_RESERVED as u32..sys_vocab as u32;
    for (k, &pos) in picked.iter().enumerate() {
        if k < c.masked {
            out[pos].sysname_id = Vocab::MASK;
            blanked[pos] = true;
        } else if k < c.masked + c.random && !corpus.is_empty() {
            out[pos].sysname_id = rng.random_range(corpus.clone());
        }
    }
    let mut targets: Vec<(usize, u32)> = picked.iter().map(|&p| (p, records[p].sysname_id)).collect();
    targets.sort_unstable();
    Ok(MaskedSequence {
        records: out,
        blanked,
        targets,
    })
}
