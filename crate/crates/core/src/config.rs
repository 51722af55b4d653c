use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Model dimensions, beam widths and training hyperparameters.
///
/// Defaults reproduce the published setup: 150-dimensional LSTMs, 50-dimensional
/// word and character projections, a 100-dimensional alignment layer, beams of
/// 5 and mini-batches of 40 sentence pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_lstm: usize,
    /// Source word vector size.
    pub d_sw: usize,
    /// Target word vector size.
    pub d_tw: usize,
    /// Source character embedding size.
    pub d_sc: usize,
    /// Target character embedding size (shared by C2W and V2C).
    pub d_tc: usize,
    /// Alignment layer size; also the size of the source context vectors.
    pub d_z: usize,
    pub k_w: usize,
    pub k_c: usize,
    pub batch_size: usize,
    pub nce_negatives: usize,
    /// Word softmax is replaced by NCE during training above this target
    /// vocabulary size.
    pub nce_vocab_threshold: usize,
    pub patience_epochs: usize,
    /// Learning rate is halved after this many epochs without dev improvement.
    pub lr_halving_patience: usize,
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub init_scale: f64,
    pub seed: u64,
    pub max_word_len: usize,
    pub max_sent_len: usize,
    pub min_count: usize,
    /// Weight λ of the attention supervision penalty.
    pub supervision_weight: f64,
    pub distill_epochs: usize,
    pub distill_learning_rate: f64,
    /// Gradient norm cap during distillation, independent of `clip_norm`.
    pub distill_clip_norm: f64,
    pub length_normalize: bool,
    pub bleu_smoothing: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_lstm: 150,
            d_sw: 50,
            d_tw: 50,
            d_sc: 50,
            d_tc: 50,
            d_z: 100,
            k_w: 5,
            k_c: 5,
            batch_size: 40,
            nce_negatives: 100,
            nce_vocab_threshold: 5000,
            patience_epochs: 5,
            lr_halving_patience: 2,
            max_epochs: 100,
            learning_rate: 0.2,
            clip_norm: 5.0,
            init_scale: 0.1,
            seed: 1,
            max_word_len: 64,
            max_sent_len: 128,
            min_count: 2,
            supervision_weight: 1.0,
            distill_epochs: 200,
            distill_learning_rate: 0.5,
            distill_clip_norm: 5.0,
            length_normalize: false,
            bleu_smoothing: false,
        }
    }
}

impl ModelConfig {
    /// Every model dimension divided by two (rounded up).
    pub fn halved(&self) -> Self {
        let h = |d: usize| d.div_ceil(2);
        Self {
            d_lstm: h(self.d_lstm),
            d_sw: h(self.d_sw),
            d_tw: h(self.d_tw),
            d_sc: h(self.d_sc),
            d_tc: h(self.d_tc),
            d_z: h(self.d_z),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d_lstm", self.d_lstm),
            ("d_sw", self.d_sw),
            ("d_tw", self.d_tw),
            ("d_sc", self.d_sc),
            ("d_tc", self.d_tc),
            ("d_z", self.d_z),
            ("k_w", self.k_w),
            ("k_c", self.k_c),
            ("batch_size", self.batch_size),
            ("nce_negatives", self.nce_negatives),
            ("max_word_len", self.max_word_len),
            ("max_sent_len", self.max_sent_len),
            ("min_count", self.min_count),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning_rate must be finite and >= 0".into()));
        }
        if !(self.clip_norm > 0.0) || !(self.distill_clip_norm > 0.0) || !(self.init_scale >= 0.0) {
            return Err(Error::Config("clip norms must be > 0 and init_scale >= 0".into()));
        }
        if !(self.supervision_weight >= 0.0) {
            return Err(Error::Config("supervision_weight must be >= 0".into()));
        }
        Ok(())
    }
}
