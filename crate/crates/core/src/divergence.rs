//! KL and base-2 Jensen–Shannon divergences over aligned token
//! distributions, the tail-adjusted JS score used as per-transition
//! information gain, and its per-token breakdown.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::{
    aggregate, align, AggregateDistribution, DistributionError, StepDistribution, OTHER,
};

/// Default tail coefficient.
pub const DEFAULT_LAMBDA: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DivergenceError {
    #[error("distributions do not share a support; align them first")]
    UnalignedSupports,
    #[error("lambda must be a finite positive number, got {0}")]
    NonPositiveLambda(f64),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
}

/// Result of a KL divergence: finite bits, or infinite when `p` puts mass
/// where `q` has none.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlDivergence {
    Finite(f64),
    Infinite,
}

impl KlDivergence {
    pub fn bits(self) -> f64 {
        match self {
            KlDivergence::Finite(v) => v,
            KlDivergence::Infinite => f64::INFINITY,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, KlDivergence::Infinite)
    }
}

/// Scored transition: JS, tail-adjusted JS, residual masses and the
/// per-token contributions (largest first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfoGainReport {
    pub js_bits: f64,
    pub js_star_bits: f64,
    pub prior_other: f64,
    pub posterior_other: f64,
    #[serde(rename = "lambda")]
    pub lambda_used: f64,
    pub contributions: Vec<(String, f64)>,
}

impl InfoGainReport {
    /// Tail term added on top of the plain JS value.
    pub fn tail_bits(&self) -> f64 {
        self.lambda_used * 0.5 * (self.prior_other + self.posterior_other)
    }
}

fn ensure_aligned(
    p: &AggregateDistribution,
    q: &AggregateDistribution,
) -> Result<(), DivergenceError> {
    if p.same_support(q) {
        Ok(())
    } else {
        Err(DivergenceError::UnalignedSupports)
    }
}

/// `sum p log2(p / q)`, with `0 log 0 = 0`.
pub fn kl(
    p: &AggregateDistribution,
    q: &AggregateDistribution,
) -> Result<KlDivergence, DivergenceError> {
    ensure_aligned(p, q)?;
    let mut total = 0.0;
    for ((_, &pw), (_, &qw)) in p.mass().iter().zip(q.mass().iter()) {
        if pw == 0.0 {
            continue;
        }
        if qw == 0.0 {
            return Ok(KlDivergence::Infinite);
        }
        total += pw * (pw / qw).log2();
    }
    Ok(KlDivergence::Finite(total.max(0.0)))
}

/// Half of `x log2(x / m)`; zero when `x` is zero.
fn half_term(x: f64, m: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        0.5 * x * (x / m).log2()
    }
}

/// Base-2 Jensen–Shannon divergence, in [0, 1].
pub fn js(p: &AggregateDistribution, q: &AggregateDistribution) -> Result<f64, DivergenceError> {
    ensure_aligned(p, q)?;
    let mut from_p = 0.0;
    let mut from_q = 0.0;
    for ((_, &pw), (_, &qw)) in p.mass().iter().zip(q.mass().iter()) {
        if pw == 0.0 && qw == 0.0 {
            continue;
        }
        let m = 0.5 * (pw + qw);
        from_p += half_term(pw, m);
        from_q += half_term(qw, m);
    }
    Ok((from_p + from_q).clamp(0.0, 1.0))
}

/// Per-token share of the JS divergence, sorted descending with a
/// lexicographic tie-break. Includes the [`OTHER`] token.
pub fn token_contributions(
    p: &AggregateDistribution,
    q: &AggregateDistribution,
) -> Result<Vec<(String, f64)>, DivergenceError> {
    ensure_aligned(p, q)?;
    let mut out: Vec<(String, f64)> = p
        .mass()
        .iter()
        .zip(q.mass().iter())
        .map(|((token, &pw), (_, &qw))| {
            let c = if pw == 0.0 && qw == 0.0 {
                0.0
            } else {
                let m = 0.5 * (pw + qw);
                (half_term(pw, m) + half_term(qw, m)).max(0.0)
            };
            (token.clone(), c)
        })
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(out)
}

/// JS plus `lambda * (p(OTHER) + q(OTHER)) / 2`.
pub fn js_tail_adjusted(
    p: &AggregateDistribution,
    q: &AggregateDistribution,
    lambda: f64,
) -> Result<InfoGainReport, DivergenceError> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(DivergenceError::NonPositiveLambda(lambda));
    }
    let js_bits = js(p, q)?;
    let contributions = token_contributions(p, q)?;
    let prior_other = p.get(OTHER);
    let posterior_other = q.get(OTHER);
    Ok(InfoGainReport {
        js_bits,
        js_star_bits: js_bits + lambda * 0.5 * (prior_other + posterior_other),
        prior_other,
        posterior_other,
        lambda_used: lambda,
        contributions,
    })
}

/// Full scoring of one transition: aggregate each side, align, and
/// tail-adjust.
pub fn info_gain(
    prior_steps: &[StepDistribution],
    posterior_steps: &[StepDistribution],
    lambda: f64,
) -> Result<InfoGainReport, DivergenceError> {
    let p = aggregate(prior_steps)?;
    let q = aggregate(posterior_steps)?;
    let (p, q) = align(&p, &q);
    js_tail_adjusted(&p, &q, lambda)
}
