//! Learning-rate schedules, optimizer settings and token budgets for the
//! two continual-pretraining stages. Nothing here trains anything; plans
//! are exported as step/lr tables for an external trainer.

use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("step {step} is past the last step {total}")]
    StepOutOfRange { step: u64, total: u64 },
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("invalid optimizer: {0}")]
    Optimizer(String),
    #[error("corpus must contain at least one token")]
    EmptyCorpus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub total_steps: u64,
    pub warmup_steps: u64,
    pub lr_peak: f64,
    pub lr_min: f64,
    /// Fraction of the run, at the end, held at `lr_min`.
    pub plateau_frac: f64,
}

impl ScheduleConfig {
    pub fn plateau_start(&self) -> u64 {
        (self.total_steps as f64 * (1.0 - self.plateau_frac)).floor() as u64
    }

    pub fn validate(&self) -> Result<(), ScheduleError> {
        let err = |m: String| Err(ScheduleError::Schedule(m));
        if self.warmup_steps >= self.total_steps {
            return err(format!("warmup_steps {} must be below total_steps {}", self.warmup_steps, self.total_steps));
        }
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr_peak && self.lr_peak.is_finite()) {
            return err(format!("need 0 < lr_min <= lr_peak, got {} and {}", self.lr_min, self.lr_peak));
        }
        if !(0.0..1.0).contains(&self.plateau_frac) {
            return err(format!("plateau_frac must be in [0, 1), got {}", self.plateau_frac));
        }
        if self.plateau_start() < self.warmup_steps {
            return err(format!("plateau starts at {} before warmup ends at {}", self.plateau_start(), self.warmup_steps));
        }
        Ok(())
    }

    /// The schedule as a function of a real-valued step; [`lr_at`] samples it.
    pub fn lr_continuous(&self, t: f64) -> f64 {
        let warmup = self.warmup_steps as f64;
        let plateau = self.plateau_start() as f64;
        if t < warmup {
            self.lr_peak * t / warmup
        } else if t >= plateau {
            self.lr_min
        } else {
            self.cosine((t - warmup) / (plateau - warmup))
        }
    }

    /// Cosine decay from `lr_peak` at p = 0 to `lr_min` at p = 1.
    pub fn cosine(&self, p: f64) -> f64 {
        self.lr_min + 0.5 * (self.lr_peak - self.lr_min) * (1.0 + (PI * p).cos())
    }
}

pub fn lr_at(step: u64, cfg: &ScheduleConfig) -> Result<f64, ScheduleError> {
    if step > cfg.total_steps {
        return Err(ScheduleError::StepOutOfRange { step, total: cfg.total_steps });
    }
    Ok(cfg.lr_continuous(step as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub optimizer_name: String,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub grad_clip: f64,
}

impl OptimizerConfig {
    pub fn adamw(beta1: f64, beta2: f64) -> Self {
        Self { optimizer_name: "AdamW".into(), beta1, beta2, epsilon: 1e-5, grad_clip: 1.0 }
    }

    pub fn validate(&self) -> Result<(), ScheduleError> {
        let open = |b: f64| b > 0.0 && b < 1.0;
        if !open(self.beta1) || !open(self.beta2) {
            return Err(ScheduleError::Optimizer(format!("betas must be in (0, 1), got {} and {}", self.beta1, self.beta2)));
        }
        if !(self.epsilon > 0.0) {
            return Err(ScheduleError::Optimizer(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.grad_clip > 0.0) {
            return Err(ScheduleError::Optimizer(format!("grad_clip must be positive, got {}", self.grad_clip)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainableScope {
    NewEmbeddingsOnly,
    FullModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagePlan {
    pub name: String,
    pub schedule: ScheduleConfig,
    pub optimizer: OptimizerConfig,
    pub batch_tokens: u64,
    pub trainable_scope: TrainableScope,
    /// Start the stage with fresh optimizer moments.
    pub reset_optimizer_state: bool,
}

impl StagePlan {
    pub fn validate(&self) -> Result<(), ScheduleError> {
        self.schedule.validate()?;
        self.optimizer.validate()?;
        if self.batch_tokens == 0 {
            return Err(ScheduleError::Schedule("batch_tokens must be positive".into()));
        }
        Ok(())
    }

    /// `step,lr` rows for every step from 0 to `total_steps` inclusive.
    pub fn lr_csv(&self) -> String {
        let mut out = String::from("step,lr\n");
        for step in 0..=self.schedule.total_steps {
            let lr = self.schedule.lr_continuous(step as f64);
            writeln!(out, "{step},{lr:e}").expect("writing to a String");
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plans serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plans {
    pub stage1: StagePlan,
    pub stage2: StagePlan,
}

pub fn builtin_plans() -> Plans {
    Plans {
        stage1: StagePlan {
            name: "stage1".into(),
            schedule: ScheduleConfig {
                total_steps: 2_500,
                warmup_steps: 250,
                lr_peak: 2.5e-4,
                lr_min: 2.5e-5,
                plateau_frac: 0.0,
            },
            optimizer: OptimizerConfig::adamw(0.9, 0.999),
            batch_tokens: 1_500_000,
            trainable_scope: TrainableScope::NewEmbeddingsOnly,
            reset_optimizer_state: true,
        },
        stage2: StagePlan {
            name: "stage2".into(),
            schedule: ScheduleConfig {
                total_steps: 24_800,
                warmup_steps: 248,
                lr_peak: 2.5e-5,
                lr_min: 2.5e-6,
                plateau_frac: 0.10,
            },
            optimizer: OptimizerConfig::adamw(0.9, 0.95),
            batch_tokens: 4_500_000,
            trainable_scope: TrainableScope::FullModel,
            reset_optimizer_state: true,
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenBudget {
    pub total_tokens: u128,
    pub epochs: f64,
}

pub fn token_budget(plan: &StagePlan, corpus_tokens: u64) -> Result<TokenBudget, ScheduleError> {
    if corpus_tokens == 0 {
        return Err(ScheduleError::EmptyCorpus);
    }
    let total_tokens = plan.schedule.total_steps as u128 * plan.batch_tokens as u128;
    Ok(TokenBudget { total_tokens, epochs: total_tokens as f64 / corpus_tokens as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn stage_two_landmarks() {
        let s = builtin_plans().stage2.schedule;
        assert_eq!(s.plateau_start(), 22_320);
        assert_eq!(lr_at(0, &s).unwrap(), 0.0);
        assert_eq!(lr_at(248, &s).unwrap(), 2.5e-5);
        let mid = 248 + (22_320 - 248) / 2;
        assert!((lr_at(mid, &s).unwrap() - 1.375e-5).abs() < 1e-18);
        for step in [22_320, 23_000, 24_800] {
            assert_eq!(lr_at(step, &s).unwrap(), 2.5e-6);
        }
        assert_eq!(lr_at(24_801, &s), Err(ScheduleError::StepOutOfRange { step: 24_801, total: 24_800 }));
    }

    #[test]
    fn stage_one_decays_to_the_floor_on_the_last_step() {
        let s = builtin_plans().stage1.schedule;
        assert_eq!(s.plateau_start(), 2_500);
        assert_eq!(lr_at(2_500, &s).unwrap(), 2.5e-5);
        assert_eq!(lr_at(250, &s).unwrap(), 2.5e-4);
    }

    #[test]
    fn builtin_plans_are_valid() {
        let p = builtin_plans();
        p.stage1.validate().unwrap();
        p.stage2.validate().unwrap();
        assert_eq!(p.stage1.optimizer.beta2, 0.999);
        assert_eq!(p.stage2.optimizer.beta2, 0.95);
        assert_eq!(p.stage1.trainable_scope, TrainableScope::NewEmbeddingsOnly);
    }

    #[test]
    fn budgets() {
        let p = builtin_plans();
        let b2 = token_budget(&p.stage2, 54_555_473_784).unwrap();
        assert_eq!(b2.total_tokens, 111_600_000_000);
        assert!((b2.epochs - 2.0456).abs() < 1e-3);
        assert_eq!(token_budget(&p.stage1, 1).unwrap().total_tokens, 3_750_000_000);
        let one = StagePlan { schedule: ScheduleConfig { total_steps: 1, warmup_steps: 0, ..p.stage1.schedule.clone() }, batch_tokens: 777, ..p.stage1.clone() };
        assert_eq!(token_budget(&one, 777).unwrap().epochs, 1.0);
        assert!(token_budget(&one, 0).is_err());
    }

    #[test]
    fn invalid_schedules() {
        let base = builtin_plans().stage2.schedule;
        assert!(ScheduleConfig { warmup_steps: 24_800, ..base.clone() }.validate().is_err());
        assert!(ScheduleConfig { lr_min: 1.0, ..base.clone() }.validate().is_err());
        assert!(ScheduleConfig { plateau_frac: 1.0, ..base.clone() }.validate().is_err());
        assert!(ScheduleConfig { plateau_frac: 0.995, ..base }.validate().is_err());
        assert!(OptimizerConfig::adamw(1.0, 0.9).validate().is_err());
    }

    #[test]
    fn csv_export() {
        let csv = builtin_plans().stage1.lr_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2 + 2_500);
        assert_eq!(lines[0], "step,lr");
        assert_eq!(lines[1], "0,0e0");
        assert_eq!(lines[251].split(',').nth(1).unwrap().parse::<f64>().unwrap(), 2.5e-4);
    }

    proptest! {
        #[test]
        fn non_increasing_after_warmup(total in 10u64..3000, w in 0.0f64..0.5, plateau in 0.0f64..0.4) {
            let s = ScheduleConfig { total_steps: total, warmup_steps: (total as f64 * w) as u64, lr_peak: 1e-3, lr_min: 1e-5, plateau_frac: plateau };
            prop_assume!(s.validate().is_ok());
            let mut prev = f64::INFINITY;
            for step in s.warmup_steps..=total {
                let lr = lr_at(step, &s).unwrap();
                prop_assert!(lr <= prev);
                prev = lr;
            }
        }

        #[test]
        fn budget_is_linear_in_steps(steps in 1u64..100_000, k in 1u64..20, batch in 1u64..10_000_000) {
            let mut p = builtin_plans().stage2;
            p.batch_tokens = batch;
            p.schedule.total_steps = steps;
            let one = token_budget(&p, 1_000).unwrap().total_tokens;
            p.schedule.total_steps = steps * k;
            prop_assert_eq!(token_budget(&p, 1_000).unwrap().total_tokens, one * k as u128);
        }
    }
}
