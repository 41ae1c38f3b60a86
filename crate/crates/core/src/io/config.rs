use serde::{Deserialize, Serialize};

use super::IoError;
use crate::curriculum::{CurriculumConfig, CurriculumPreset};
use crate::model::ModelConfig;

/// The flat key/value run file. Every key is optional; unknown keys are
/// rejected. `curriculum` selects a preset; the step_by_step, cumulative and
/// standard presets fix (γ_low, γ_high, ρ) and reject conflicting explicit
/// values, while adaptive only supplies defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub vocab_size: Option<usize>,
    pub d_model: Option<usize>,
    pub n_heads: Option<usize>,
    pub d_k: Option<usize>,
    pub d_ff: Option<usize>,
    pub n_enc_layers: Option<usize>,
    pub n_dec_layers: Option<usize>,
    pub max_len: Option<usize>,
    pub mode_accumulated_sa: Option<bool>,
    pub mode_accumulated_ca: Option<bool>,

    pub curriculum: Option<CurriculumPreset>,
    pub gamma_low: Option<f64>,
    pub gamma_high: Option<f64>,
    pub rho: Option<f64>,
    pub lr_alpha: Option<f64>,
    pub warmup_steps: Option<usize>,
    pub batch_size: Option<usize>,
    pub epochs_per_main_complexity: Option<usize>,
    pub seed: Option<u64>,
    pub weight_decay: Option<f64>,
    pub max_grad_norm: Option<f64>,
    pub patience: Option<usize>,
    pub eval_limit: Option<usize>,
    pub max_decode_len: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub curriculum: CurriculumConfig,
    pub preset: CurriculumPreset,
}

impl RunConfigFile {
    pub fn parse(text: &str) -> Result<Self, IoError> {
        toml::from_str(text).map_err(|e| IoError::Format(format!("config: {e}")))
    }

    pub fn load(path: &std::path::Path) -> Result<Self, IoError> {
        Self::parse(&std::fs::read_to_string(path).map_err(|e| IoError::file(path, e))?)
    }

    pub fn resolve(&self) -> Result<RunConfig, IoError> {
        let bad = |m: String| Err(IoError::Format(format!("config: {m}")));
        let d = ModelConfig::default();
        let model = ModelConfig {
            vocab_size: self.vocab_size.unwrap_or(d.vocab_size),
            d_model: self.d_model.unwrap_or(d.d_model),
            n_heads: self.n_heads.unwrap_or(d.n_heads),
            d_ff: self.d_ff.unwrap_or(d.d_ff),
            n_enc_layers: self.n_enc_layers.unwrap_or(d.n_enc_layers),
            n_dec_layers: self.n_dec_layers.unwrap_or(d.n_dec_layers),
            max_len: self.max_len.unwrap_or(d.max_len),
            mode_accumulated_sa: self.mode_accumulated_sa.unwrap_or(true),
            mode_accumulated_ca: self.mode_accumulated_ca.unwrap_or(true),
        };
        if let Some(dk) = self.d_k {
            if model.n_heads == 0 || dk * model.n_heads != model.d_model {
                return bad(format!("d_k = {dk} but d_model / n_heads = {}", model.d_k()));
            }
        }
        model.validate().map_err(|e| IoError::Format(format!("config: {e}")))?;

        let preset = self.curriculum.unwrap_or(CurriculumPreset::Adaptive);
        let mut c = preset.config();
        let (_, gl, gh, rho) = preset.settings();
        if preset != CurriculumPreset::Adaptive {
            for (name, given, fixed) in [
                ("gamma_low", self.gamma_low, gl),
                ("gamma_high", self.gamma_high, gh),
                ("rho", self.rho, rho),
            ] {
                if let Some(v) = given {
                    if v != fixed {
                        return bad(format!("{name} = {v} conflicts with curriculum = {preset:?} ({fixed})"));
                    }
                }
            }
        } else {
            c.gamma_low = self.gamma_low.unwrap_or(gl);
            c.gamma_high = self.gamma_high.unwrap_or(gh);
            c.rho = self.rho.unwrap_or(rho);
        }
        macro_rules! take {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { c.$f = v; } )* };
        }
        take!(lr_alpha, warmup_steps, batch_size, epochs_per_main_complexity, seed, weight_decay);
        c.max_grad_norm = self.max_grad_norm.or(c.max_grad_norm);
        c.patience = self.patience.or(c.patience);
        c.eval_limit = self.eval_limit.or(c.eval_limit);
        c.max_decode_len = self.max_decode_len.or(c.max_decode_len);
        c.validate().map_err(|e| IoError::Format(format!("config: {e}")))?;
        Ok(RunConfig {
            model,
            curriculum: c,
            preset,
        })
    }
}
