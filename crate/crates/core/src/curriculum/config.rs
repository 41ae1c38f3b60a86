use serde::{Deserialize, Serialize};

use super::TrainError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Walk `H` over every hop level present in the data.
    #[default]
    Curriculum,
    /// One iteration at the highest level with all data unweighted.
    Standard,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurriculumConfig {
    pub schedule: Schedule,
    pub gamma_low: f64,
    pub gamma_high: f64,
    pub rho: f64,
    pub lr_alpha: f64,
    pub warmup_steps: usize,
    pub batch_size: usize,
    /// Epochs per main complexity. The standard schedule runs this many
    /// epochs per hop level, all at the top level.
    pub epochs_per_main_complexity: usize,
    pub seed: u64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; off when absent.
    pub max_grad_norm: Option<f64>,
    /// Switch to the next main complexity early after this many evaluations
    /// without a validation-loss improvement.
    pub patience: Option<usize>,
    /// Validation examples scored per evaluation; all when absent.
    pub eval_limit: Option<usize>,
    /// Decoding budget for intermediate steps; the model's `max_len` when
    /// absent.
    pub max_decode_len: Option<usize>,
}

impl Default for CurriculumConfig {
    /// Adaptive curriculum with (ρ, γ_low, γ_high) = (0.1, 0.8, 0.1), batch
    /// 8, learning rate 3e-5 and 1000 warm-up steps.
    fn default() -> Self {
        Self {
            schedule: Schedule::Curriculum,
            gamma_low: 0.8,
            gamma_high: 0.1,
            rho: 0.1,
            lr_alpha: 3e-5,
            warmup_steps: 1000,
            batch_size: 8,
            epochs_per_main_complexity: 1,
            seed: 0,
            weight_decay: 0.01,
            max_grad_norm: None,
            patience: None,
            eval_limit: None,
            max_decode_len: None,
        }
    }
}

/// Named training regimes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurriculumPreset {
    Standard,
    StepByStep,
    Cumulative,
    Adaptive,
}

impl CurriculumPreset {
    /// `(schedule, γ_low, γ_high, ρ)`.
    pub fn settings(self) -> (Schedule, f64, f64, f64) {
        match self {
            Self::Standard => (Schedule::Standard, 1.0, 1.0, 1.0),
            Self::StepByStep => (Schedule::Curriculum, 0.0, 0.0, 0.0),
            Self::Cumulative => (Schedule::Curriculum, 1.0, 0.0, 0.0),
            Self::Adaptive => (Schedule::Curriculum, 0.8, 0.1, 0.1),
        }
    }

    pub fn apply(self, cfg: &mut CurriculumConfig) {
        let (schedule, gamma_low, gamma_high, rho) = self.settings();
        cfg.schedule = schedule;
        cfg.gamma_low = gamma_low;
        cfg.gamma_high = gamma_high;
        cfg.rho = rho;
    }

    pub fn config(self) -> CurriculumConfig {
        let mut c = CurriculumConfig::default();
        self.apply(&mut c);
        c
    }
}

impl CurriculumConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        for (name, v) in [("gamma_low", self.gamma_low), ("gamma_high", self.gamma_high), ("rho", self.rho)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(TrainError::Config(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive".into()));
        }
        if !(self.lr_alpha.is_finite() && self.lr_alpha >= 0.0) {
            return Err(TrainError::Config(format!("lr_alpha = {}", self.lr_alpha)));
        }
        Ok(())
    }
}
