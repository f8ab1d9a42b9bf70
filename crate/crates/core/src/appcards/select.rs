use std::collections::BTreeSet;

use super::card::{render_card, AppCard, CardEntry};
use super::store::CardStore;
use crate::text::words;

pub const NAME_WEIGHT: u32 = 3;
pub const TITLE_WEIGHT: u32 = 2;
pub const BODY_WEIGHT: u32 = 1;

/// Opening line of the knowledge block appended by [`inject`].
pub const KNOWLEDGE_OPEN: &str = "=== APPCARD KNOWLEDGE ===";
/// Closing line of the knowledge block appended by [`inject`].
pub const KNOWLEDGE_CLOSE: &str = "=== END APPCARD KNOWLEDGE ===";

fn overlap(query: &BTreeSet<String>, text: &str) -> u32 {
    words(text).intersection(query).count() as u32
}

/// Weighted word overlap between a query and one entry.
pub fn score_entry(query: &BTreeSet<String>, entry: &CardEntry) -> u32 {
    TITLE_WEIGHT * overlap(query, entry.title()) + BODY_WEIGHT * overlap(query, entry.body())
}

/// Weighted word overlap between a query and a whole card: app name words
/// count 3, title words 2, body words 1. Each distinct query word counts once
/// per field.
pub fn score_card(query: &BTreeSet<String>, card: &AppCard) -> u32 {
    let titles: BTreeSet<String> = card
        .entries()
        .iter()
        .flat_map(|e| words(e.title()))
        .collect();
    let bodies: BTreeSet<String> = card
        .entries()
        .iter()
        .flat_map(|e| words(e.body()))
        .collect();
    NAME_WEIGHT * overlap(query, card.app_name())
        + TITLE_WEIGHT * titles.intersection(query).count() as u32
        + BODY_WEIGHT * bodies.intersection(query).count() as u32
}

/// Current cards ranked against a task description, best first; ties go
/// alphabetically by app name. Cards scoring zero are left out.
pub fn select_cards(task_description: &str, store: &CardStore, limit: usize) -> Vec<AppCard> {
    let query = words(task_description);
    let mut scored: Vec<(u32, &AppCard)> = store
        .current_cards()
        .map(|card| (score_card(&query, card), card))
        .filter(|(score, _)| *score > 0)
        .collect();
    scored.sort_by(|a, b| {
        b.0.cmp(&a.0)
            .then_with(|| a.1.app_name().cmp(b.1.app_name()))
    });
    scored
        .into_iter()
        .take(limit)
        .map(|(_, card)| card.clone())
        .collect()
}

/// Appends the rendered cards to `prompt` inside a delimited knowledge block.
/// An empty card list leaves the prompt untouched.
pub fn inject(prompt: &str, cards: &[AppCard]) -> String {
    if cards.is_empty() {
        return prompt.to_string();
    }
    let mut out = String::with_capacity(prompt.len() + 256 * cards.len());
    out.push_str(prompt);
    if !prompt.ends_with('\n') {
        out.push('\n');
    }
    out.push('\n');
    out.push_str(KNOWLEDGE_OPEN);
    out.push('\n');
    for (i, card) in cards.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&render_card(card));
    }
    out.push_str(KNOWLEDGE_CLOSE);
    out.push('\n');
    out
}

/// Rendered card texts found in every knowledge block of `text`, in order.
pub fn card_blocks(text: &str) -> Vec<String> {
    let mut blocks = Vec::new();
    let mut inside = false;
    let mut current = String::new();
    let mut flush = |current: &mut String| {
        if !current.is_empty() {
            blocks.push(std::mem::take(current));
        }
    };
    for line in text.split('\n') {
        if !inside {
            inside = line == KNOWLEDGE_OPEN;
            continue;
        }
        if line == KNOWLEDGE_CLOSE {
            flush(&mut current);
            inside = false;
            continue;
        }
        if line.starts_with("### ") {
            flush(&mut current);
        }
        if !line.is_empty() {
            current.push_str(line);
            current.push('\n');
        }
    }
    flush(&mut current);
    blocks
}

/// Keeps the `max_entries` entries of `card` that best match `context`,
/// preserving their original order and renumbering them from 1.
pub fn select_fragments(card: &AppCard, context: &str, max_entries: usize) -> AppCard {
    let total = card.entries().len();
    let max_entries = max_entries.max(1);
    let query = words(context);
    let mut ranked: Vec<(u32, usize)> = card
        .entries()
        .iter()
        .enumerate()
        .map(|(i, e)| (score_entry(&query, e), i))
        .collect();
    ranked.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    let mut keep: Vec<usize> = ranked
        .into_iter()
        .take(max_entries)
        .map(|(_, i)| i)
        .collect();
    keep.sort_unstable();

    let kept_indices: Vec<String> = keep.iter().map(|i| (i + 1).to_string()).collect();
    let entries: Vec<CardEntry> = keep.iter().map(|&i| card.entries()[i].clone()).collect();
    let mut reduced = AppCard::new(card.app_name(), entries)
        .expect("subset of a valid card is valid")
        .with_version(card.version())
        .expect("source version is valid")
        .with_provenance(card.provenance().to_vec());
    reduced.add_provenance(format!(
        "fragments: kept entries {} of {total}",
        kept_indices.join(",")
    ));
    reduced
}
