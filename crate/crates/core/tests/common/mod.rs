//! Independent reference computations and input generators shared by the
//! integration tests. Nothing here calls into the library's math.

#![allow(dead_code)]

use std::collections::HashMap;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use curio_core::distributions::{AggregateDistribution, StepDistribution, TokenEntry, OTHER};

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(rel)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Base-2 Jensen-Shannon divergence by direct summation over the union of
/// keys; missing keys count as zero.
pub fn js_oracle(p: &HashMap<String, f64>, q: &HashMap<String, f64>) -> f64 {
    let mut keys: Vec<&String> = p.keys().chain(q.keys()).collect();
    keys.sort();
    keys.dedup();
    let mut total = 0.0;
    for k in keys {
        let a = p.get(k).copied().unwrap_or(0.0);
        let b = q.get(k).copied().unwrap_or(0.0);
        let m = 0.5 * (a + b);
        if a > 0.0 {
            total += 0.5 * a * (a / m).ln();
        }
        if b > 0.0 {
            total += 0.5 * b * (b / m).ln();
        }
    }
    total / std::f64::consts::LN_2
}

/// KL(p || q) in bits; `None` when p puts mass where q has none.
pub fn kl_oracle(p: &HashMap<String, f64>, q: &HashMap<String, f64>) -> Option<f64> {
    let mut total = 0.0;
    for (k, &a) in p {
        if a == 0.0 {
            continue;
        }
        let b = q.get(k).copied().unwrap_or(0.0);
        if b == 0.0 {
            return None;
        }
        total += a * (a / b).log2();
    }
    Some(total)
}

/// Per-token mean over steps, by explicit double loop: for every token of
/// the union, walk every step and add what it holds.
pub fn aggregate_oracle(steps: &[StepDistribution]) -> HashMap<String, f64> {
    let mut vocab: Vec<String> = steps
        .iter()
        .flat_map(|s| s.entries().iter().map(|(t, _)| t.clone()))
        .collect();
    vocab.push(OTHER.to_string());
    vocab.sort();
    vocab.dedup();
    let n = steps.len() as f64;
    let mut out = HashMap::new();
    for token in vocab {
        let mut sum = 0.0;
        for step in steps {
            if token == OTHER {
                sum += step.other_mass();
                continue;
            }
            for (t, p) in step.entries() {
                if *t == token {
                    sum += p;
                }
            }
        }
        out.insert(token, sum / n);
    }
    out
}

/// Tail-adjusted score of a transition, from its step lists.
pub fn js_star_oracle(
    prior: &[StepDistribution],
    posterior: &[StepDistribution],
    lambda: f64,
) -> f64 {
    let p = aggregate_oracle(prior);
    let q = aggregate_oracle(posterior);
    let po = p.get(OTHER).copied().unwrap_or(0.0);
    let qo = q.get(OTHER).copied().unwrap_or(0.0);
    js_oracle(&p, &q) + lambda * 0.5 * (po + qo)
}

/// Discounted running sum with strict-threshold firing. Returns the value
/// after each step (post-reset) and the 1-based firing steps.
pub fn fold_oracle(
    gains: &[f64],
    tau: f64,
    decay: f64,
    weight: f64,
    reset: bool,
) -> (Vec<f64>, Vec<usize>) {
    let mut u = 0.0;
    let mut age = 0i32;
    let mut trace = Vec::new();
    let mut fired = Vec::new();
    for (i, g) in gains.iter().enumerate() {
        u += weight * decay.powi(age) * g;
        age += 1;
        if u > tau {
            fired.push(i + 1);
            if reset {
                u = 0.0;
                age = 0;
            }
        }
        trace.push(u);
    }
    (trace, fired)
}

pub fn to_map(d: &AggregateDistribution) -> HashMap<String, f64> {
    d.mass().iter().map(|(k, v)| (k.clone(), *v)).collect()
}

fn split_mass(rng: &mut ChaCha8Rng, n: usize, total: f64, zero_rate: f64) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n)
        .map(|_| {
            if rng.random_bool(zero_rate) {
                0.0
            } else {
                rng.random_range(0.001..1.0)
            }
        })
        .collect();
    if w.iter().all(|x| *x == 0.0) {
        w[0] = 1.0;
    }
    let s: f64 = w.iter().sum();
    w.iter().map(|x| x / s * total).collect()
}

/// Two distributions over the same `size` tokens (OTHER included), each
/// with residual mass in `[0, max_other]`. Some entries are zero.
pub fn aligned_pair(
    rng: &mut ChaCha8Rng,
    size: usize,
    max_other: f64,
) -> (AggregateDistribution, AggregateDistribution) {
    let n = size.max(2) - 1;
    let tokens: Vec<String> = (0..n).map(|i| format!("t{i}")).collect();
    let make = |rng: &mut ChaCha8Rng| {
        let other = if rng.random_bool(0.2) {
            0.0
        } else {
            rng.random_range(0.0..=max_other)
        };
        let masses = split_mass(rng, n, 1.0 - other, 0.15);
        let pairs: Vec<(String, f64)> = tokens
            .iter()
            .cloned()
            .zip(masses)
            .chain(std::iter::once((OTHER.to_string(), other)))
            .collect();
        AggregateDistribution::from_masses(pairs, 1).expect("generated distribution is valid")
    };
    let p = make(rng);
    let q = make(rng);
    (p, q)
}

/// A random decoding step from random top-k log-probabilities.
pub fn random_step(rng: &mut ChaCha8Rng, index: usize) -> StepDistribution {
    let vocab = rng.random_range(1..=30);
    let n = rng.random_range(1..=vocab.min(25));
    let covered = if rng.random_bool(0.3) {
        1.0
    } else {
        rng.random_range(0.4..1.0)
    };
    let mut chosen: Vec<usize> = (0..vocab).collect();
    rand::seq::SliceRandom::shuffle(chosen.as_mut_slice(), rng);
    let masses = split_mass(rng, n, covered, 0.0);
    let entries: Vec<TokenEntry> = chosen
        .iter()
        .take(n)
        .zip(masses)
        .map(|(i, p)| TokenEntry::new(format!("w{i}"), p.ln()).unwrap())
        .collect();
    let k = rng.random_range(1..=25);
    curio_core::distributions::step_from_logprobs(&entries, k, index).unwrap()
}
