//! Sequential training over a task stream under a chosen continual-learning
//! strategy.
//!
//! [`run_sequence`] walks the benchmark task by task: plain fine-tuning,
//! quadratic-penalty regularizers (online EWC, MAS), episodic rehearsal of
//! stored real samples (random or k-means selection), or symbolic replay
//! that rehearses pseudo-samples generated by the language model trained
//! alongside. After every task the answer model is scored on all test sets
//! seen so far, filling one row of an accuracy matrix.

mod importance;
mod memory;
mod run;
#[cfg(test)]
pub(crate) mod testkit;

pub use importance::{
    update_importance_ewc, update_importance_mas, ImportanceState, PenaltyHooks, EWC_DECAY,
    IMPORTANCE_SUBSET,
};
pub use memory::{kmeans_select, EpisodicMemory, MemoryPolicy};
pub use run::{account_memory, evaluate_task, run_sequence, RunEvent, RunOutcome, RunSetup};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The continual-learning strategies the engine can drive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    /// Train on each task in turn with no mitigation.
    Finetune,
    /// Online elastic weight consolidation: quadratic penalty weighted by
    /// accumulated squared gradients of the answer loss.
    Ewc,
    /// Memory-aware synapses: quadratic penalty weighted by accumulated
    /// output-sensitivity magnitudes.
    Mas,
    /// Episodic memory of real samples, selected uniformly at random.
    RealRnd,
    /// Episodic memory of real samples, selected nearest-to-centroid by
    /// k-means over learned sample embeddings.
    RealKmeans,
    /// Symbolic replay: pseudo scene-graph/QA samples generated from the
    /// previous task's language-model snapshot.
    Sgp,
}

impl StrategyKind {
    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Finetune => "finetune",
            StrategyKind::Ewc => "ewc",
            StrategyKind::Mas => "mas",
            StrategyKind::RealRnd => "real_rnd",
            StrategyKind::RealKmeans => "real_kmeans",
            StrategyKind::Sgp => "sgp",
        }
    }

    pub fn uses_memory(self) -> bool {
        matches!(self, StrategyKind::RealRnd | StrategyKind::RealKmeans)
    }

    pub fn uses_penalty(self) -> bool {
        matches!(self, StrategyKind::Ewc | StrategyKind::Mas)
    }
}

/// Cap on what the episodic memory may hold, either as raw serialized bytes
/// or as a sample count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryBudget {
    Bytes(u64),
    Samples(usize),
}

impl MemoryBudget {
    pub fn is_positive(self) -> bool {
        match self {
            MemoryBudget::Bytes(b) => b > 0,
            MemoryBudget::Samples(s) => s > 0,
        }
    }
}

/// Strategy selection plus its knobs. Fields that do not apply to the
/// chosen kind must stay at their inert defaults; mixing them is rejected
/// rather than silently ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    /// Replay volume as a multiple of the current task's train size.
    #[serde(default)]
    pub gamma: f64,
    /// Penalty weight for the regularizer strategies.
    #[serde(default)]
    pub strength: f64,
    /// Episodic-memory cap; required for the real-sample strategies.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<MemoryBudget>,
    /// Fraction of the current task's annotated data given to replay-model
    /// training (the rest of the pipeline always sees the full task).
    #[serde(default = "full_fraction")]
    pub annotation_fraction: f64,
}

fn full_fraction() -> f64 {
    1.0
}

impl StrategyConfig {
    pub fn finetune() -> StrategyConfig {
        StrategyConfig {
            kind: StrategyKind::Finetune,
            gamma: 0.0,
            strength: 0.0,
            budget: None,
            annotation_fraction: 1.0,
        }
    }

    pub fn sgp(gamma: f64) -> StrategyConfig {
        StrategyConfig { kind: StrategyKind::Sgp, gamma, ..StrategyConfig::finetune() }
    }

    pub fn ewc(strength: f64) -> StrategyConfig {
        StrategyConfig { kind: StrategyKind::Ewc, strength, ..StrategyConfig::finetune() }
    }

    pub fn mas(strength: f64) -> StrategyConfig {
        StrategyConfig { kind: StrategyKind::Mas, strength, ..StrategyConfig::finetune() }
    }

    pub fn real_rnd(budget: MemoryBudget) -> StrategyConfig {
        StrategyConfig {
            kind: StrategyKind::RealRnd,
            budget: Some(budget),
            ..StrategyConfig::finetune()
        }
    }

    pub fn real_kmeans(budget: MemoryBudget) -> StrategyConfig {
        StrategyConfig {
            kind: StrategyKind::RealKmeans,
            budget: Some(budget),
            ..StrategyConfig::finetune()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.gamma.is_finite() || self.gamma < 0.0 {
            return Err(Error::config(format!("gamma {} must be finite and >= 0", self.gamma)));
        }
        if self.gamma > 0.0 && self.kind != StrategyKind::Sgp {
            return Err(Error::config(format!(
                "gamma {} set, but {} does not replay",
                self.gamma,
                self.kind.name()
            )));
        }
        if !self.strength.is_finite() || self.strength < 0.0 {
            return Err(Error::config(format!(
                "strength {} must be finite and >= 0",
                self.strength
            )));
        }
        if self.strength > 0.0 && !self.kind.uses_penalty() {
            return Err(Error::config(format!(
                "strength {} set, but {} carries no penalty term",
                self.strength,
                self.kind.name()
            )));
        }
        match (self.kind.uses_memory(), self.budget) {
            (true, None) => {
                return Err(Error::config(format!(
                    "{} needs a memory budget",
                    self.kind.name()
                )))
            }
            (true, Some(b)) if !b.is_positive() => {
                return Err(Error::config("memory budget must be positive"))
            }
            (false, Some(_)) => {
                return Err(Error::config(format!(
                    "memory budget set, but {} stores no samples",
                    self.kind.name()
                )))
            }
            _ => {}
        }
        if !self.annotation_fraction.is_finite()
            || self.annotation_fraction <= 0.0
            || self.annotation_fraction > 1.0
        {
            return Err(Error::config(format!(
                "annotation fraction {} must lie in (0, 1]",
                self.annotation_fraction
            )));
        }
        if self.annotation_fraction < 1.0 && self.kind != StrategyKind::Sgp {
            return Err(Error::config(
                "annotation fraction below 1 only affects replay-model training",
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn knobs_are_rejected_on_strategies_they_do_not_steer() {
        assert!(StrategyConfig::finetune().validate().is_ok());
        assert!(StrategyConfig::sgp(1.5).validate().is_ok());
        assert!(StrategyConfig::sgp(0.0).validate().is_ok(), "no-replay ablation");
        assert!(StrategyConfig::ewc(40.0).validate().is_ok());
        assert!(StrategyConfig::real_rnd(MemoryBudget::Samples(120)).validate().is_ok());

        let mut c = StrategyConfig::finetune();
        c.gamma = 1.0;
        assert_eq!(c.validate().unwrap_err().exit_code(), 2);

        let mut c = StrategyConfig::sgp(1.0);
        c.strength = 3.0;
        assert!(c.validate().is_err());

        let mut c = StrategyConfig::real_kmeans(MemoryBudget::Bytes(0));
        assert!(c.validate().is_err(), "zero budget");
        c.budget = None;
        assert!(c.validate().is_err(), "missing budget");

        let mut c = StrategyConfig::ewc(1.0);
        c.budget = Some(MemoryBudget::Samples(5));
        assert!(c.validate().is_err(), "budget on a penalty strategy");

        let mut c = StrategyConfig::sgp(1.0);
        c.annotation_fraction = 0.0;
        assert!(c.validate().is_err());
        c.annotation_fraction = 0.25;
        assert!(c.validate().is_ok());
        let mut c = StrategyConfig::ewc(1.0);
        c.annotation_fraction = 0.5;
        assert!(c.validate().is_err(), "fraction only steers replay training");

        assert!(StrategyConfig::sgp(f64::NAN).validate().is_err());
    }

    #[test]
    fn strategy_configs_round_trip_through_json() {
        for c in [
            StrategyConfig::finetune(),
            StrategyConfig::sgp(1.5),
            StrategyConfig::ewc(17.0),
            StrategyConfig::real_rnd(MemoryBudget::Bytes(612_000)),
            StrategyConfig::real_kmeans(MemoryBudget::Samples(240)),
        ] {
            let json = serde_json::to_string(&c).unwrap();
            let back: StrategyConfig = serde_json::from_str(&json).unwrap();
            assert_eq!(back, c);
        }
        // Omitted optional knobs fall back to inert defaults.
        let c: StrategyConfig = serde_json::from_str(r#"{"kind":"finetune"}"#).unwrap();
        assert_eq!(c, StrategyConfig::finetune());
    }
}
