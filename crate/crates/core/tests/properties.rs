mod common;

use proptest::prelude::*;

use common::*;
use curio_core::appcards::{canonicalize, parse_card, render_card, AppCard, CardEntry, TitleStyle};
use curio_core::distributions::{
    aggregate, align, step_from_logprobs, LogBase, StepDistribution, TokenEntry,
};
use curio_core::divergence::{info_gain, js};
use curio_core::dump::StepRecord;
use curio_core::gate::{AppAccumulator, GateConfig};

fn step_strategy() -> impl Strategy<Value = StepDistribution> {
    (
        prop::collection::btree_map("[a-f]{1,2}", 0.01f64..1.0, 1..10),
        0.0f64..0.6,
        1usize..12,
    )
        .prop_map(|(weights, other, k)| {
            let total: f64 = weights.values().sum();
            let entries: Vec<TokenEntry> = weights
                .iter()
                .map(|(t, w)| TokenEntry::new(t.clone(), (w / total * (1.0 - other)).ln()).unwrap())
                .collect();
            step_from_logprobs(&entries, k, 0).unwrap()
        })
}

fn word() -> impl Strategy<Value = String> {
    prop_oneof![
        "[A-Za-z][a-z0-9]{0,8}",
        Just("->".to_string()),
        Just("(e.g.".to_string()),
        Just("'+'".to_string()),
        Just("**Delete**".to_string()),
        Just("4K/8K,".to_string()),
        Just("✎".to_string()),
    ]
}

fn entry_strategy() -> impl Strategy<Value = CardEntry> {
    (
        prop::collection::vec("[A-Z][A-Za-z/&]{0,10}", 1..4),
        prop::collection::vec(word(), 1..15),
        any::<bool>(),
    )
        .prop_map(|(title, body, bold)| {
            let style = if bold {
                TitleStyle::Bold
            } else {
                TitleStyle::Plain
            };
            CardEntry::new(title.join(" "), body.join(" "))
                .and_then(|e| e.with_style(style))
                .unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn aggregation_ignores_step_order(steps in prop::collection::vec(step_strategy(), 1..8), seed in any::<u64>()) {
        let mut shuffled = steps.clone();
        rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut rng(seed));
        prop_assert_eq!(aggregate(&steps).unwrap(), aggregate(&shuffled).unwrap());
    }

    #[test]
    fn alignment_keeps_mass(a in prop::collection::vec(step_strategy(), 1..4), b in prop::collection::vec(step_strategy(), 1..4)) {
        let (p, q) = (aggregate(&a).unwrap(), aggregate(&b).unwrap());
        let (pa, qa) = align(&p, &q);
        prop_assert!(pa.same_support(&qa));
        prop_assert!((pa.total() - p.total()).abs() < 1e-15);
        for (t, v) in p.mass() {
            prop_assert_eq!(pa.get(t), *v);
        }
        let j = js(&pa, &qa).unwrap();
        prop_assert!((j - js_oracle(&to_map(&p), &to_map(&q))).abs() < 1e-9);
    }

    #[test]
    fn info_gain_is_symmetric_in_js(a in prop::collection::vec(step_strategy(), 1..4), b in prop::collection::vec(step_strategy(), 1..4)) {
        let ab = info_gain(&a, &b, 0.5).unwrap();
        let ba = info_gain(&b, &a, 0.5).unwrap();
        prop_assert_eq!(ab.js_bits, ba.js_bits);
        prop_assert_eq!(ab.js_star_bits, ba.js_star_bits);
        prop_assert!((ab.js_star_bits - js_star_oracle(&a, &b, 0.5)).abs() < 1e-9);
    }

    #[test]
    fn dump_records_round_trip(step in step_strategy()) {
        let back = StepRecord::from_step(&step).to_step(usize::MAX, LogBase::E).unwrap();
        prop_assert_eq!(back.entries().len(), step.entries().len());
        for ((t1, p1), (t2, p2)) in step.entries().iter().zip(back.entries()) {
            prop_assert_eq!(t1, t2);
            prop_assert!((p1 - p2).abs() < 1e-12);
        }
        prop_assert!((step.other_mass() - back.other_mass()).abs() < 1e-9);
    }

    #[test]
    fn accumulator_matches_fold(
        gains in prop::collection::vec(0.0f64..1.0, 1..40),
        tau in 0.05f64..3.0,
        decay in 0.5f64..=1.0,
        weight in 0.1f64..2.0,
        reset in any::<bool>(),
    ) {
        let config = GateConfig::new(tau, decay, weight, reset).unwrap();
        let (trace, fired) = fold_oracle(&gains, tau, decay, weight, reset);
        let mut acc = AppAccumulator::new("a");
        let mut got_fired = Vec::new();
        for (i, g) in gains.iter().enumerate() {
            acc.record(*g, &config).unwrap();
            if acc.should_trigger(&config) {
                got_fired.push(i + 1);
                acc.mark_triggered(&config).unwrap();
            }
            prop_assert!((acc.u_value() - trace[i]).abs() < 1e-9);
        }
        prop_assert_eq!(got_fired, fired);
        let json = serde_json::to_string(&acc).unwrap();
        let back: AppAccumulator = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(back.steps_since_reset(), acc.steps_since_reset());
        prop_assert_eq!(back, acc);
    }

    #[test]
    fn cards_round_trip(name in "[A-Z][A-Za-z]{0,8}( [A-Z][a-z]{1,6})?", entries in prop::collection::vec(entry_strategy(), 1..12)) {
        let card = AppCard::new(name, entries).unwrap();
        let text = render_card(&card);
        let parsed = parse_card(&text).unwrap();
        prop_assert_eq!(&parsed, &card);
        prop_assert_eq!(render_card(&parsed), text.clone());
        prop_assert_eq!(canonicalize(&text), text);
    }

    #[test]
    fn canonicalization_is_idempotent(text in "(### [A-Z][a-z]{0,5}:|[1-9]\\. [A-Z][a-z]*: [a-z ]{1,10}|[ \t]*)(\r?\n[ -~\t]{0,20}){0,8}") {
        let once = canonicalize(&text);
        prop_assert_eq!(canonicalize(&once), once);
    }
}
