//! Per-step top-k token distributions and their cross-step aggregate.
//!
//! A decoding step keeps its `k` most likely tokens; whatever probability
//! mass they leave uncovered is carried by a reserved residual token,
//! [`OTHER`]. Aggregating a sequence of steps averages the per-step vectors
//! over the union vocabulary, so the result is again a distribution.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Reserved residual-mass token. Angle brackets keep it out of any real
/// model vocabulary.
pub const OTHER: &str = "<OTHER>";

/// Default number of retained candidates per decoding step.
pub const DEFAULT_TOP_K: usize = 19;

/// Tolerance on `sum(kept) + other_mass == 1`.
pub const MASS_TOLERANCE: f64 = 1e-6;

/// Kept mass above `1 + OVERFLOW_SLACK` is treated as a corrupt dump.
pub const OVERFLOW_SLACK: f64 = 1e-4;

/// Kept sums at or above `1 - SATURATION_EPS` leave no residual.
const SATURATION_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistributionError {
    #[error("empty token entry list")]
    EmptyEntries,
    #[error("duplicate token {0:?} within one step")]
    DuplicateToken(String),
    #[error("probability mass {total} exceeds 1 + {OVERFLOW_SLACK}")]
    MassOverflow { total: f64 },
    #[error("empty token string")]
    EmptyToken,
    #[error("token {OTHER:?} is reserved for the residual bucket")]
    ReservedToken,
    #[error("log-probability {logprob} for token {token:?} is not a valid log of a probability")]
    InvalidLogprob { token: String, logprob: f64 },
    #[error("probability {value} for {token:?} outside [0, 1]")]
    ProbabilityOutOfRange { token: String, value: f64 },
    #[error("step masses sum to {total}, expected 1 within {MASS_TOLERANCE}")]
    MassMismatch { total: f64 },
    #[error("empty step list")]
    EmptyStepList,
    #[error("k must be at least 1")]
    ZeroK,
}

/// Base of the logarithms stored in a log-prob dump.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogBase {
    #[default]
    #[serde(alias = "natural", alias = "ln")]
    E,
    #[serde(rename = "10")]
    Ten,
}

impl LogBase {
    /// Converts a logarithm in this base to a natural log.
    pub fn to_natural(self, value: f64) -> f64 {
        match self {
            LogBase::E => value,
            LogBase::Ten => value * std::f64::consts::LN_10,
        }
    }
}

/// One candidate token with its natural-log probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTokenEntry")]
pub struct TokenEntry {
    token: String,
    logprob: f64,
}

#[derive(Deserialize)]
struct RawTokenEntry {
    token: String,
    logprob: f64,
}

impl TryFrom<RawTokenEntry> for TokenEntry {
    type Error = DistributionError;

    fn try_from(raw: RawTokenEntry) -> Result<Self, Self::Error> {
        TokenEntry::new(raw.token, raw.logprob)
    }
}

impl TokenEntry {
    pub fn new(token: impl Into<String>, logprob: f64) -> Result<Self, DistributionError> {
        let token = token.into();
        validate_token(&token)?;
        // -inf is a legitimate zero probability; NaN and positive logs are not.
        if logprob.is_nan() || logprob > 0.0 {
            return Err(DistributionError::InvalidLogprob { token, logprob });
        }
        Ok(Self { token, logprob })
    }

    pub fn token(&self) -> &str {
        &self.token
    }

    pub fn logprob(&self) -> f64 {
        self.logprob
    }

    pub fn probability(&self) -> f64 {
        self.logprob.exp()
    }
}

fn validate_token(token: &str) -> Result<(), DistributionError> {
    if token.is_empty() {
        return Err(DistributionError::EmptyToken);
    }
    if token == OTHER {
        return Err(DistributionError::ReservedToken);
    }
    Ok(())
}

/// Top-k probabilities of one decoding step plus the residual mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDistribution {
    step_index: usize,
    entries: Vec<(String, f64)>,
    other_mass: f64,
}

impl StepDistribution {
    /// Validating constructor for distributions that did not come from
    /// [`step_from_logprobs`], e.g. model client output.
    pub fn new(
        step_index: usize,
        entries: Vec<(String, f64)>,
        other_mass: f64,
    ) -> Result<Self, DistributionError> {
        let mut seen = HashSet::with_capacity(entries.len());
        let mut total = 0.0;
        for (token, p) in &entries {
            validate_token(token)?;
            if !seen.insert(token.as_str()) {
                return Err(DistributionError::DuplicateToken(token.clone()));
            }
            if !(0.0..=1.0).contains(p) {
                return Err(DistributionError::ProbabilityOutOfRange {
                    token: token.clone(),
                    value: *p,
                });
            }
            total += p;
        }
        if !(0.0..=1.0).contains(&other_mass) {
            return Err(DistributionError::ProbabilityOutOfRange {
                token: OTHER.to_string(),
                value: other_mass,
            });
        }
        total += other_mass;
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(DistributionError::MassMismatch { total });
        }
        Ok(Self {
            step_index,
            entries,
            other_mass,
        })
    }

    pub fn step_index(&self) -> usize {
        self.step_index
    }

    pub fn entries(&self) -> &[(String, f64)] {
        &self.entries
    }

    pub fn other_mass(&self) -> f64 {
        self.other_mass
    }

    /// Probability of `token` at this step; [`OTHER`] yields the residual.
    pub fn mass_of(&self, token: &str) -> f64 {
        if token == OTHER {
            return self.other_mass;
        }
        self.entries
            .iter()
            .find(|(t, _)| t == token)
            .map_or(0.0, |(_, p)| *p)
    }
}

/// Builds one step's distribution from raw top-k log-probabilities.
///
/// Keeps the `k` most probable entries (ties broken by token bytes) and puts
/// the uncovered mass into [`OTHER`].
pub fn step_from_logprobs(
    entries: &[TokenEntry],
    k: usize,
    step_index: usize,
) -> Result<StepDistribution, DistributionError> {
    if k == 0 {
        return Err(DistributionError::ZeroK);
    }
    if entries.is_empty() {
        return Err(DistributionError::EmptyEntries);
    }
    let mut seen = HashSet::with_capacity(entries.len());
    for entry in entries {
        if !seen.insert(entry.token()) {
            return Err(DistributionError::DuplicateToken(entry.token().to_string()));
        }
    }

    let mut probs: Vec<(String, f64)> = entries
        .iter()
        .map(|e| (e.token().to_string(), e.probability()))
        .collect();
    let total: f64 = probs.iter().map(|(_, p)| p).sum();
    if total > 1.0 + OVERFLOW_SLACK {
        return Err(DistributionError::MassOverflow { total });
    }

    probs.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    probs.truncate(k);

    let kept: f64 = probs.iter().map(|(_, p)| p).sum();
    let other_mass = if kept > 1.0 {
        for (_, p) in probs.iter_mut() {
            *p /= kept;
        }
        0.0
    } else if kept >= 1.0 - SATURATION_EPS {
        0.0
    } else {
        (1.0 - kept).clamp(0.0, 1.0)
    };

    Ok(StepDistribution {
        step_index,
        entries: probs,
        other_mass,
    })
}

/// A distribution over the union vocabulary of a step sequence, always
/// keyed with [`OTHER`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateDistribution {
    mass: BTreeMap<String, f64>,
    step_count: usize,
}

impl AggregateDistribution {
    /// Wraps an explicit token→mass table, inserting a zero [`OTHER`] if it
    /// is missing. Masses must each lie in [0, 1] and sum to 1.
    pub fn from_masses<I, S>(masses: I, step_count: usize) -> Result<Self, DistributionError>
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        if step_count == 0 {
            return Err(DistributionError::EmptyStepList);
        }
        let mut mass = BTreeMap::new();
        for (token, p) in masses {
            let token = token.into();
            if token.is_empty() {
                return Err(DistributionError::EmptyToken);
            }
            if !(0.0..=1.0).contains(&p) {
                return Err(DistributionError::ProbabilityOutOfRange { token, value: p });
            }
            if mass.insert(token.clone(), p).is_some() {
                return Err(DistributionError::DuplicateToken(token));
            }
        }
        mass.entry(OTHER.to_string()).or_insert(0.0);
        let total: f64 = mass.values().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(DistributionError::MassMismatch { total });
        }
        Ok(Self { mass, step_count })
    }

    pub fn mass(&self) -> &BTreeMap<String, f64> {
        &self.mass
    }

    pub fn get(&self, token: &str) -> f64 {
        self.mass.get(token).copied().unwrap_or(0.0)
    }

    pub fn other(&self) -> f64 {
        self.get(OTHER)
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    pub fn total(&self) -> f64 {
        self.mass.values().sum()
    }

    pub fn same_support(&self, other: &Self) -> bool {
        self.mass.len() == other.mass.len() && self.mass.keys().eq(other.mass.keys())
    }
}

/// Averages step distributions over the union vocabulary.
pub fn aggregate(steps: &[StepDistribution]) -> Result<AggregateDistribution, DistributionError> {
    if steps.is_empty() {
        return Err(DistributionError::EmptyStepList);
    }
    let mut columns: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    columns.insert(OTHER.to_string(), Vec::with_capacity(steps.len()));
    for step in steps {
        for (token, p) in step.entries() {
            columns.entry(token.clone()).or_default().push(*p);
        }
        columns
            .get_mut(OTHER)
            .expect("OTHER column inserted above")
            .push(step.other_mass());
    }

    let t = steps.len() as f64;
    let mass = columns
        .into_iter()
        .map(|(token, mut values)| {
            // Summing in sorted order makes the result independent of step order.
            values.sort_by(f64::total_cmp);
            let sum: f64 = values.iter().sum();
            (token, sum / t)
        })
        .collect();
    Ok(AggregateDistribution {
        mass,
        step_count: steps.len(),
    })
}

/// Extends both distributions to the union of their supports, filling
/// absent tokens with exact zeros.
pub fn align(
    p: &AggregateDistribution,
    q: &AggregateDistribution,
) -> (AggregateDistribution, AggregateDistribution) {
    let keys: BTreeSet<&String> = p.mass.keys().chain(q.mass.keys()).collect();
    let fill = |d: &AggregateDistribution| AggregateDistribution {
        mass: keys
            .iter()
            .map(|k| ((*k).clone(), d.mass.get(*k).copied().unwrap_or(0.0)))
            .collect(),
        step_count: d.step_count,
    };
    (fill(p), fill(q))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(t: &str, p: f64) -> TokenEntry {
        TokenEntry::new(t, p.ln()).unwrap()
    }

    fn step(pairs: &[(&str, f64)], other: f64) -> StepDistribution {
        StepDistribution::new(
            0,
            pairs.iter().map(|(t, p)| (t.to_string(), *p)).collect(),
            other,
        )
        .unwrap()
    }

    #[test]
    fn two_entries_leave_a_residual() {
        let s = step_from_logprobs(&[entry("a", 0.6), entry("b", 0.3)], 2, 0).unwrap();
        assert!((s.mass_of("a") - 0.6).abs() < 1e-15);
        assert!((s.mass_of("b") - 0.3).abs() < 1e-15);
        assert!((s.other_mass() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn certain_token_has_no_residual() {
        let s = step_from_logprobs(&[entry("a", 1.0)], 5, 3).unwrap();
        assert_eq!(s.entries(), &[("a".to_string(), 1.0)]);
        assert_eq!(s.other_mass(), 0.0);
        assert_eq!(s.step_index(), 3);
    }

    #[test]
    fn truncation_moves_dropped_mass_to_other() {
        let s =
            step_from_logprobs(&[entry("a", 0.5), entry("b", 0.3), entry("c", 0.2)], 1, 0).unwrap();
        assert_eq!(s.entries().len(), 1);
        assert!((s.other_mass() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(
            step_from_logprobs(&[], 3, 0),
            Err(DistributionError::EmptyEntries)
        );
        assert_eq!(
            step_from_logprobs(&[entry("a", 0.5), entry("a", 0.1)], 3, 0),
            Err(DistributionError::DuplicateToken("a".into()))
        );
        assert!(matches!(
            step_from_logprobs(&[entry("a", 0.9), entry("b", 0.2)], 3, 0),
            Err(DistributionError::MassOverflow { .. })
        ));
        assert_eq!(
            TokenEntry::new(OTHER, -1.0),
            Err(DistributionError::ReservedToken)
        );
        assert!(TokenEntry::new("x", 0.1).is_err());
        assert!(TokenEntry::new("x", f64::NAN).is_err());
        assert!(TokenEntry::new("x", f64::NEG_INFINITY).is_ok());
    }

    #[test]
    fn rounding_overflow_is_renormalized() {
        let s = step_from_logprobs(&[entry("a", 0.60003), entry("b", 0.40002)], 2, 0).unwrap();
        assert_eq!(s.other_mass(), 0.0);
        let total: f64 = s.entries().iter().map(|(_, p)| p).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn base_ten_dumps_convert() {
        let ln = LogBase::Ten.to_natural(0.5f64.log10());
        assert!((ln.exp() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn aggregate_identical_steps() {
        let s = step(&[("a", 0.6), ("b", 0.3)], 0.1);
        let agg = aggregate(&[s.clone(), s]).unwrap();
        assert_eq!(agg.step_count(), 2);
        assert!((agg.get("a") - 0.6).abs() < 1e-15);
        assert!((agg.get("b") - 0.3).abs() < 1e-15);
        assert!((agg.other() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn aggregate_disjoint_supports() {
        let agg = aggregate(&[step(&[("a", 1.0)], 0.0), step(&[("b", 1.0)], 0.0)]).unwrap();
        assert_eq!(agg.get("a"), 0.5);
        assert_eq!(agg.get("b"), 0.5);
        assert_eq!(agg.other(), 0.0);
        assert!(agg.mass().contains_key(OTHER));
    }

    #[test]
    fn aggregate_single_step_is_exact() {
        let s = step(&[("x", 0.25), ("y", 0.7)], 0.05);
        let agg = aggregate(std::slice::from_ref(&s)).unwrap();
        assert_eq!(agg.get("x"), 0.25);
        assert_eq!(agg.get("y"), 0.7);
        assert_eq!(agg.other(), 0.05);
        assert_eq!(aggregate(&[]), Err(DistributionError::EmptyStepList));
    }

    #[test]
    fn align_fills_union_with_zeros() {
        let p = AggregateDistribution::from_masses([("a", 1.0)], 1).unwrap();
        let q = AggregateDistribution::from_masses([("b", 1.0)], 1).unwrap();
        let (ap, aq) = align(&p, &q);
        let keys: Vec<_> = ap.mass().keys().cloned().collect();
        assert_eq!(keys, vec![OTHER.to_string(), "a".into(), "b".into()]);
        assert!(ap.same_support(&aq));
        assert_eq!(ap.get("b"), 0.0);
        assert_eq!(aq.get("a"), 0.0);
        let (pp, pq) = align(&p, &p);
        assert_eq!(pp, p);
        assert_eq!(pq, p);
    }

    #[test]
    fn step_constructor_checks_mass() {
        assert!(matches!(
            StepDistribution::new(0, vec![("a".into(), 0.8)], 0.1),
            Err(DistributionError::MassMismatch { .. })
        ));
    }

    #[test]
    fn token_entry_deserializes_with_validation() {
        let ok: TokenEntry = serde_json::from_str(r#"{"token":"a","logprob":-0.5}"#).unwrap();
        assert_eq!(ok.token(), "a");
        assert!(serde_json::from_str::<TokenEntry>(r#"{"token":"a","logprob":0.5}"#).is_err());
    }
}
