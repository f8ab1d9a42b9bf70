//! AppCards: numbered, per-application knowledge entries in the
//! `### App:` / `N. Title: body` text grammar, plus selection, prompt
//! injection and versioned storage.

mod card;
mod select;
mod store;

pub use card::{
    canonicalize, infer_category, parse_card, render_card, AppCard, CardEntry, CardError, Category,
    TitleStyle,
};
pub use select::{
    card_blocks, inject, score_card, score_entry, select_cards, select_fragments, KNOWLEDGE_CLOSE,
    KNOWLEDGE_OPEN,
};
pub use store::{CardStore, StoreError};
