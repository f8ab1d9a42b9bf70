//! Per-application discounted uncertainty and the retrieval gate.
//!
//! Each recorded gain is weighted by
//! `difficulty_weight * decay_base^(steps since last reset)` and added to
//! the application's running total `U`. The gate fires when `U > tau`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance used when checking an imported accumulator against its history.
const IMPORT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GateError {
    #[error("information gain must be a non-negative finite number, got {0}")]
    NegativeGain(f64),
    #[error("gate has not fired: U = {u} does not exceed tau = {tau}")]
    TriggerWithoutThreshold { u: f64, tau: f64 },
    #[error("invalid gate config: {0}")]
    InvalidConfig(String),
    #[error("inconsistent accumulator state: {0}")]
    InconsistentState(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GateConfig {
    pub tau: f64,
    pub decay_base: f64,
    pub difficulty_weight: f64,
    pub reset_on_trigger: bool,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            tau: 1.0,
            decay_base: 0.95,
            difficulty_weight: 1.0,
            reset_on_trigger: true,
        }
    }
}

impl GateConfig {
    pub fn new(
        tau: f64,
        decay_base: f64,
        difficulty_weight: f64,
        reset_on_trigger: bool,
    ) -> Result<Self, GateError> {
        let config = Self {
            tau,
            decay_base,
            difficulty_weight,
            reset_on_trigger,
        };
        config.validate()?;
        Ok(config)
    }

    /// A config whose gate can never fire.
    pub fn disabled() -> Self {
        Self {
            tau: f64::INFINITY,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), GateError> {
        // tau = +inf is the "gate disabled" sentinel.
        if self.tau.is_nan() || self.tau <= 0.0 {
            return Err(GateError::InvalidConfig(format!(
                "tau must be > 0, got {}",
                self.tau
            )));
        }
        if !(self.decay_base > 0.0 && self.decay_base <= 1.0) {
            return Err(GateError::InvalidConfig(format!(
                "decay_base must be in (0, 1], got {}",
                self.decay_base
            )));
        }
        if !(self.difficulty_weight.is_finite() && self.difficulty_weight > 0.0) {
            return Err(GateError::InvalidConfig(format!(
                "difficulty_weight must be > 0, got {}",
                self.difficulty_weight
            )));
        }
        Ok(())
    }

    /// Weight for a gain recorded `age` steps after the last reset.
    pub fn weight(&self, age: u64) -> f64 {
        let exp = i32::try_from(age).unwrap_or(i32::MAX);
        self.difficulty_weight * self.decay_base.powi(exp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HistoryEvent {
    Record {
        step: u64,
        js_star_bits: f64,
        weight: f64,
        u_after: f64,
    },
    Trigger {
        step: u64,
        u_before: f64,
        reset: bool,
    },
}

/// Running uncertainty for one application.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AppAccumulator {
    app_id: String,
    #[serde(rename = "u")]
    u_value: f64,
    #[serde(rename = "steps")]
    steps_recorded: u64,
    #[serde(rename = "triggers")]
    trigger_count: u64,
    history: Vec<HistoryEvent>,
    #[serde(skip)]
    since_reset: u64,
}

impl AppAccumulator {
    pub fn new(app_id: impl Into<String>) -> Self {
        Self {
            app_id: app_id.into(),
            u_value: 0.0,
            steps_recorded: 0,
            trigger_count: 0,
            history: Vec::new(),
            since_reset: 0,
        }
    }

    pub fn app_id(&self) -> &str {
        &self.app_id
    }

    pub fn u_value(&self) -> f64 {
        self.u_value
    }

    pub fn steps_recorded(&self) -> u64 {
        self.steps_recorded
    }

    pub fn trigger_count(&self) -> u64 {
        self.trigger_count
    }

    pub fn history(&self) -> &[HistoryEvent] {
        &self.history
    }

    /// Number of records since the decay clock last restarted.
    pub fn steps_since_reset(&self) -> u64 {
        self.since_reset
    }

    /// Adds one discounted gain.
    pub fn record(&mut self, js_star_bits: f64, config: &GateConfig) -> Result<f64, GateError> {
        if !(js_star_bits.is_finite() && js_star_bits >= 0.0) {
            return Err(GateError::NegativeGain(js_star_bits));
        }
        let weight = config.weight(self.since_reset);
        self.u_value += weight * js_star_bits;
        self.steps_recorded += 1;
        self.since_reset += 1;
        self.history.push(HistoryEvent::Record {
            step: self.steps_recorded,
            js_star_bits,
            weight,
            u_after: self.u_value,
        });
        Ok(weight)
    }

    pub fn should_trigger(&self, config: &GateConfig) -> bool {
        self.u_value > config.tau
    }

    /// Acknowledges a fired gate; resets `U` and the decay clock when the
    /// config asks for it.
    pub fn mark_triggered(&mut self, config: &GateConfig) -> Result<(), GateError> {
        if !self.should_trigger(config) {
            return Err(GateError::TriggerWithoutThreshold {
                u: self.u_value,
                tau: config.tau,
            });
        }
        self.trigger_count += 1;
        self.history.push(HistoryEvent::Trigger {
            step: self.steps_recorded,
            u_before: self.u_value,
            reset: config.reset_on_trigger,
        });
        if config.reset_on_trigger {
            self.u_value = 0.0;
            self.since_reset = 0;
        }
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("accumulator serializes")
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AccumulatorExport {
    app_id: String,
    u: f64,
    steps: u64,
    triggers: u64,
    history: Vec<HistoryEvent>,
}

impl<'de> Deserialize<'de> for AppAccumulator {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = AccumulatorExport::deserialize(deserializer)?;
        AppAccumulator::from_export(raw).map_err(serde::de::Error::custom)
    }
}

impl AppAccumulator {
    /// Rebuilds the decay clock from the history and checks that the stored
    /// totals agree with it.
    fn from_export(raw: AccumulatorExport) -> Result<Self, GateError> {
        let mut sum = 0.0;
        let mut since_reset = 0;
        let mut records = 0;
        let mut triggers = 0;
        for event in &raw.history {
            match *event {
                HistoryEvent::Record {
                    weight,
                    js_star_bits,
                    ..
                } => {
                    sum += weight * js_star_bits;
                    since_reset += 1;
                    records += 1;
                }
                HistoryEvent::Trigger { reset, .. } => {
                    triggers += 1;
                    if reset {
                        sum = 0.0;
                        since_reset = 0;
                    }
                }
            }
        }
        if raw.u.is_nan() || raw.u < 0.0 || (raw.u - sum).abs() > IMPORT_TOLERANCE {
            return Err(GateError::InconsistentState(format!(
                "u = {} but history since last reset sums to {sum}",
                raw.u
            )));
        }
        if records != raw.steps || triggers != raw.triggers {
            return Err(GateError::InconsistentState(format!(
                "counts steps={} triggers={} disagree with history ({records}, {triggers})",
                raw.steps, raw.triggers
            )));
        }
        Ok(Self {
            app_id: raw.app_id,
            u_value: raw.u,
            steps_recorded: raw.steps,
            trigger_count: raw.triggers,
            history: raw.history,
            since_reset,
        })
    }
}

/// Accumulators keyed by application; iteration order is by app id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GateBook {
    apps: BTreeMap<String, AppAccumulator>,
}

impl GateBook {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, app_id: &str) -> Option<&AppAccumulator> {
        self.apps.get(app_id)
    }

    pub fn entry(&mut self, app_id: &str) -> &mut AppAccumulator {
        self.apps
            .entry(app_id.to_string())
            .or_insert_with(|| AppAccumulator::new(app_id))
    }

    pub fn insert(&mut self, acc: AppAccumulator) {
        self.apps.insert(acc.app_id.clone(), acc);
    }

    pub fn iter(&self) -> impl Iterator<Item = &AppAccumulator> {
        self.apps.values()
    }

    pub fn len(&self) -> usize {
        self.apps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.apps.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(decay: f64, reset: bool) -> GateConfig {
        GateConfig::new(0.4, decay, 1.0, reset).unwrap()
    }

    #[test]
    fn unweighted_sum() {
        let c = cfg(1.0, true);
        let mut acc = AppAccumulator::new("x");
        acc.record(0.2, &c).unwrap();
        acc.record(0.3, &c).unwrap();
        assert!((acc.u_value() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn decayed_sum_fires_at_step_two() {
        let c = cfg(0.9, true);
        let mut acc = AppAccumulator::new("x");
        acc.record(0.2, &c).unwrap();
        assert!(!acc.should_trigger(&c));
        acc.record(0.3, &c).unwrap();
        assert!((acc.u_value() - 0.47).abs() < 1e-15);
        assert!(acc.should_trigger(&c));
    }

    #[test]
    fn gate_is_strict() {
        let c = cfg(1.0, true);
        let mut acc = AppAccumulator::new("x");
        assert!(!acc.should_trigger(&c));
        acc.record(0.4, &c).unwrap();
        assert_eq!(acc.u_value(), 0.4);
        assert!(!acc.should_trigger(&c));
        assert!(matches!(
            acc.mark_triggered(&c),
            Err(GateError::TriggerWithoutThreshold { .. })
        ));
    }

    #[test]
    fn mark_triggered_with_and_without_reset() {
        for reset in [true, false] {
            let c = cfg(0.9, reset);
            let mut acc = AppAccumulator::new("x");
            acc.record(0.2, &c).unwrap();
            acc.record(0.3, &c).unwrap();
            acc.mark_triggered(&c).unwrap();
            assert_eq!(acc.trigger_count(), 1);
            if reset {
                assert_eq!(acc.u_value(), 0.0);
                assert_eq!(acc.steps_since_reset(), 0);
            } else {
                assert!((acc.u_value() - 0.47).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn rejects_negative_gain_and_bad_config() {
        let mut acc = AppAccumulator::new("x");
        assert_eq!(
            acc.record(-0.1, &GateConfig::default()),
            Err(GateError::NegativeGain(-0.1))
        );
        assert!(GateConfig::new(0.0, 0.9, 1.0, true).is_err());
        assert!(GateConfig::new(1.0, 0.0, 1.0, true).is_err());
        assert!(GateConfig::new(1.0, 1.1, 1.0, true).is_err());
        assert!(GateConfig::new(1.0, 0.9, 0.0, true).is_err());
        assert!(GateConfig::disabled().validate().is_ok());
    }

    #[test]
    fn export_import_round_trip() {
        let c = cfg(0.9, true);
        let mut acc = AppAccumulator::new("Markor");
        for g in [0.2, 0.3, 0.1] {
            acc.record(g, &c).unwrap();
            if acc.should_trigger(&c) {
                acc.mark_triggered(&c).unwrap();
            }
        }
        let json = acc.to_json();
        assert_eq!(json["app_id"], "Markor");
        assert_eq!(json["steps"], 3);
        assert_eq!(json["triggers"], 1);
        let back: AppAccumulator = serde_json::from_value(json).unwrap();
        assert_eq!(back, acc);
        assert_eq!(back.steps_since_reset(), 1);
    }

    #[test]
    fn import_rejects_tampered_u() {
        let c = cfg(1.0, true);
        let mut acc = AppAccumulator::new("x");
        acc.record(0.2, &c).unwrap();
        let mut json = acc.to_json();
        json["u"] = serde_json::json!(5.0);
        assert!(serde_json::from_value::<AppAccumulator>(json).is_err());
    }
}
