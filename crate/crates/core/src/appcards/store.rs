//! Versioned card storage, optionally mirrored to a directory laid out as
//! `<root>/<app_name>/<version>.card` with a `<version>.json` metadata
//! sidecar holding categories, sources and provenance.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::card::{parse_card, render_card, AppCard, CardEntry, CardError, Category};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Card { path: PathBuf, source: CardError },
    #[error("{path}: bad metadata sidecar: {source}")]
    Sidecar {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("app name {0:?} cannot be used as a store directory")]
    UnsafeAppName(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct EntryMeta {
    category: Category,
    #[serde(default)]
    sources: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CardMeta {
    #[serde(default)]
    provenance: Vec<String>,
    entries: Vec<EntryMeta>,
}

/// All known cards, newest version per app plus its predecessors.
#[derive(Debug, Clone, Default)]
pub struct CardStore {
    root: Option<PathBuf>,
    cards: BTreeMap<String, Vec<AppCard>>,
}

fn check_dir_name(name: &str) -> Result<(), StoreError> {
    if name == "." || name == ".." || name.contains(['/', '\\', '\0']) {
        return Err(StoreError::UnsafeAppName(name.to_string()));
    }
    Ok(())
}

impl CardStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Loads every `<app>/<version>.card` under `root`, creating the
    /// directory if needed. Later writes are mirrored to disk.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(io_err(&root))?;
        let mut cards: BTreeMap<String, Vec<AppCard>> = BTreeMap::new();

        let mut app_dirs: Vec<PathBuf> = fs::read_dir(&root)
            .map_err(io_err(&root))?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.is_dir())
            .collect();
        app_dirs.sort();

        for dir in app_dirs {
            let mut versions: Vec<(u32, PathBuf)> = fs::read_dir(&dir)
                .map_err(io_err(&dir))?
                .filter_map(Result::ok)
                .map(|e| e.path())
                .filter(|p| p.extension().is_some_and(|x| x == "card"))
                .filter_map(|p| {
                    let v = p.file_stem()?.to_str()?.parse::<u32>().ok()?;
                    (v >= 1).then_some((v, p))
                })
                .collect();
            versions.sort();
            for (version, path) in versions {
                let card = load_card_file(&path, version)?;
                cards
                    .entry(card.app_name().to_string())
                    .or_default()
                    .push(card);
            }
        }
        Ok(Self {
            root: Some(root),
            cards,
        })
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    /// Stores `card` as the next version for its app and returns the stored
    /// card. On a disk error nothing is recorded.
    pub fn put(&mut self, card: AppCard) -> Result<AppCard, StoreError> {
        check_dir_name(card.app_name())?;
        let next = self.current(card.app_name()).map_or(1, |c| c.version() + 1);
        let card = card.with_version(next).expect("next version is >= 1");
        if let Some(root) = &self.root {
            write_card_files(root, &card)?;
        }
        self.cards
            .entry(card.app_name().to_string())
            .or_default()
            .push(card.clone());
        Ok(card)
    }

    pub fn current(&self, app_name: &str) -> Option<&AppCard> {
        self.cards.get(app_name).and_then(|v| v.last())
    }

    pub fn versions(&self, app_name: &str) -> &[AppCard] {
        self.cards.get(app_name).map_or(&[], Vec::as_slice)
    }

    /// Newest card of every app, ordered by app name.
    pub fn current_cards(&self) -> impl Iterator<Item = &AppCard> {
        self.cards.values().filter_map(|v| v.last())
    }

    pub fn app_count(&self) -> usize {
        self.cards.len()
    }

    /// Total number of stored versions across all apps.
    pub fn version_count(&self) -> usize {
        self.cards.values().map(Vec::len).sum()
    }
}

fn load_card_file(path: &Path, version: u32) -> Result<AppCard, StoreError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let card = parse_card(&text).map_err(|source| StoreError::Card {
        path: path.to_path_buf(),
        source,
    })?;
    let meta_path = path.with_extension("json");
    let card = match fs::read_to_string(&meta_path) {
        Ok(raw) => {
            let meta: CardMeta =
                serde_json::from_str(&raw).map_err(|source| StoreError::Sidecar {
                    path: meta_path.clone(),
                    source,
                })?;
            apply_meta(card, meta)
        }
        Err(e) if e.kind() == io::ErrorKind::NotFound => card,
        Err(e) => return Err(io_err(&meta_path)(e)),
    };
    Ok(card.with_version(version).expect("version >= 1"))
}

fn apply_meta(card: AppCard, meta: CardMeta) -> AppCard {
    if meta.entries.len() != card.entries().len() {
        tracing::warn!(
            app = card.app_name(),
            "sidecar entry count mismatch; ignoring it"
        );
        return card;
    }
    let name = card.app_name().to_string();
    let entries: Vec<CardEntry> = card
        .into_entries()
        .into_iter()
        .zip(meta.entries)
        .map(|(e, m)| e.with_category(m.category).with_sources(m.sources))
        .collect();
    AppCard::new(name, entries)
        .expect("entries came from a valid card")
        .with_provenance(meta.provenance)
}

fn write_atomically(path: &Path, contents: &str) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        io_err(path)(e)
    })
}

fn write_card_files(root: &Path, card: &AppCard) -> Result<(), StoreError> {
    let dir = root.join(card.app_name());
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let meta = CardMeta {
        provenance: card.provenance().to_vec(),
        entries: card
            .entries()
            .iter()
            .map(|e| EntryMeta {
                category: e.category(),
                sources: e.sources().to_vec(),
            })
            .collect(),
    };
    let meta_path = dir.join(format!("{}.json", card.version()));
    let card_path = dir.join(format!("{}.card", card.version()));
    let meta_json = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    write_atomically(&meta_path, &meta_json)?;
    // The .card file is what makes a version visible to `open`.
    if let Err(e) = write_atomically(&card_path, &render_card(card)) {
        let _ = fs::remove_file(&meta_path);
        return Err(e);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn card(name: &str, body: &str) -> AppCard {
        AppCard::new(name, vec![CardEntry::new("Open", body).unwrap()]).unwrap()
    }

    #[test]
    fn versions_increase() {
        let mut store = CardStore::in_memory();
        assert_eq!(store.put(card("A", "one")).unwrap().version(), 1);
        assert_eq!(store.put(card("A", "two")).unwrap().version(), 2);
        assert_eq!(store.put(card("B", "x")).unwrap().version(), 1);
        assert_eq!(store.current("A").unwrap().entries()[0].body(), "two");
        assert_eq!(store.versions("A").len(), 2);
        assert_eq!(store.version_count(), 3);
        assert_eq!(store.app_count(), 2);
    }

    #[test]
    fn disk_round_trip_keeps_metadata() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = CardStore::open(dir.path()).unwrap();
        let entry = CardEntry::new("Open", "Plays media")
            .unwrap()
            .with_category(Category::InteractionPatterns)
            .with_sources(vec!["docs/a.txt#p1".into()]);
        let c = AppCard::new("Pro Expense", vec![entry])
            .unwrap()
            .with_provenance(vec!["web_docs:docs/a.txt#p1".into()]);
        let stored = store.put(c).unwrap();
        store.put(card("Pro Expense", "again")).unwrap();
        assert!(dir.path().join("Pro Expense/1.card").exists());
        assert!(dir.path().join("Pro Expense/2.json").exists());

        let reopened = CardStore::open(dir.path()).unwrap();
        assert_eq!(reopened.versions("Pro Expense")[0], stored);
        assert_eq!(reopened.current("Pro Expense").unwrap().version(), 2);
    }

    #[test]
    fn rejects_path_like_names() {
        let mut store = CardStore::in_memory();
        assert!(matches!(
            store.put(card("a/b", "x")),
            Err(StoreError::UnsafeAppName(_))
        ));
        assert_eq!(store.version_count(), 0);
    }

    #[test]
    fn plain_card_files_load_without_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("X")).unwrap();
        fs::write(dir.path().join("X/1.card"), "### X:\n1. A: b.\n").unwrap();
        let store = CardStore::open(dir.path()).unwrap();
        assert_eq!(store.current("X").unwrap().entries()[0].title(), "A");
    }
}
