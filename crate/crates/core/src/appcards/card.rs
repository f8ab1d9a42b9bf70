use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CardError {
    #[error("line {line}: expected a header line \"### <AppName>:\"")]
    MissingHeader { line: usize },
    #[error("line {line}: NonContiguousIndices: expected entry {expected}, found {found}")]
    NonContiguousIndices {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: entry {index} has an empty title or body")]
    EmptyEntry { line: usize, index: usize },
    #[error("line {line}: expected \"N. Title: body\"")]
    MalformedEntry { line: usize },
    #[error("line {line}: text before the first numbered entry")]
    OrphanLine { line: usize },
    #[error("card has no entries")]
    NoEntries,
    #[error("invalid app name {0:?}")]
    InvalidAppName(String),
    #[error("invalid entry title {title:?}: {reason}")]
    InvalidTitle { title: String, reason: &'static str },
    #[error("invalid entry body for {title:?}: {reason}")]
    InvalidBody { title: String, reason: &'static str },
    #[error("version must be at least 1")]
    ZeroVersion,
}

impl CardError {
    /// Short variant name, used in CLI diagnostics and HTTP error bodies.
    pub fn kind(&self) -> &'static str {
        match self {
            CardError::MissingHeader { .. } => "MissingHeader",
            CardError::NonContiguousIndices { .. } => "NonContiguousIndices",
            CardError::EmptyEntry { .. } => "EmptyEntry",
            CardError::MalformedEntry { .. } => "MalformedEntry",
            CardError::OrphanLine { .. } => "OrphanLine",
            CardError::NoEntries => "NoEntries",
            CardError::InvalidAppName(_) => "InvalidAppName",
            CardError::InvalidTitle { .. } => "InvalidTitle",
            CardError::InvalidBody { .. } => "InvalidBody",
            CardError::ZeroVersion => "ZeroVersion",
        }
    }
}

/// The four kinds of application knowledge a card entry can hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    FunctionalSemantics,
    IoConstraints,
    UiFunctionMapping,
    InteractionPatterns,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::FunctionalSemantics,
        Category::IoConstraints,
        Category::UiFunctionMapping,
        Category::InteractionPatterns,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::FunctionalSemantics => "functional_semantics",
            Category::IoConstraints => "io_constraints",
            Category::UiFunctionMapping => "ui_function_mapping",
            Category::InteractionPatterns => "interaction_patterns",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Keyword heuristic for cards that carry no explicit categories.
pub fn infer_category(title: &str, body: &str) -> Category {
    let title_lc = title.to_lowercase();
    let body_lc = body.to_lowercase();
    if title_lc.contains("settings") || title_lc.contains("permissions") {
        return Category::IoConstraints;
    }
    let has = |needle: &str| title_lc.contains(needle) || body_lc.contains(needle);
    if has("exception") || has("error") || has("restore") {
        return Category::InteractionPatterns;
    }
    let words = crate::text::words(&body_lc);
    if words.contains("tap") || words.contains("press") || body_lc.contains("long-press") {
        return Category::UiFunctionMapping;
    }
    Category::FunctionalSemantics
}

/// How the entry title is marked up in the text form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TitleStyle {
    /// `N. Title: body`
    #[default]
    Plain,
    /// `N. **Title:** body`
    Bold,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CardEntry {
    index: usize,
    title: String,
    body: String,
    category: Category,
    #[serde(default)]
    style: TitleStyle,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    sources: Vec<String>,
}

fn entry_line_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^([1-9][0-9]*)\.(?: (.*))?$").expect("valid regex"))
}

fn header_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^### (.+):$").expect("valid regex"))
}

fn looks_like_entry_line(line: &str) -> bool {
    entry_line_re().is_match(line)
}

impl CardEntry {
    /// Entry with a plain title and an inferred category. The index is
    /// assigned when the entry is placed in a card.
    pub fn new(title: impl Into<String>, body: impl Into<String>) -> Result<Self, CardError> {
        Self::build(title.into(), body.into(), TitleStyle::Plain, None)
    }

    pub fn with_style(self, style: TitleStyle) -> Result<Self, CardError> {
        Self::build(self.title, self.body, style, Some(self.category)).map(|mut e| {
            e.index = self.index;
            e.sources = self.sources;
            e
        })
    }

    pub fn with_category(mut self, category: Category) -> Self {
        self.category = category;
        self
    }

    pub fn with_sources(mut self, sources: Vec<String>) -> Self {
        self.sources = sources;
        self
    }

    fn build(
        title: String,
        body: String,
        style: TitleStyle,
        category: Option<Category>,
    ) -> Result<Self, CardError> {
        validate_title(&title, style)?;
        validate_body(&title, &body)?;
        let category = category.unwrap_or_else(|| infer_category(&title, &body));
        Ok(Self {
            index: 0,
            title,
            body,
            category,
            style,
            sources: Vec::new(),
        })
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn title(&self) -> &str {
        &self.title
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    pub fn category(&self) -> Category {
        self.category
    }

    pub fn style(&self) -> TitleStyle {
        self.style
    }

    pub fn sources(&self) -> &[String] {
        &self.sources
    }

    /// Text of this entry as it appears in a rendered card, without the
    /// trailing newline.
    pub fn render_line(&self) -> String {
        match self.style {
            TitleStyle::Plain => format!("{}. {}: {}", self.index, self.title, self.body),
            TitleStyle::Bold => format!("{}. **{}:** {}", self.index, self.title, self.body),
        }
    }
}

fn validate_title(title: &str, style: TitleStyle) -> Result<(), CardError> {
    let bad = |reason| {
        Err(CardError::InvalidTitle {
            title: title.to_string(),
            reason,
        })
    };
    if title.trim().is_empty() {
        return bad("empty");
    }
    if title.contains(['\n', '\r']) {
        return bad("contains a line break");
    }
    match style {
        TitleStyle::Plain => {
            if title.contains(": ") {
                return bad("contains \": \"");
            }
            if title.starts_with("**") {
                return bad("plain title starts with \"**\"");
            }
        }
        TitleStyle::Bold => {
            if title.contains(":**") {
                return bad("contains \":**\"");
            }
        }
    }
    Ok(())
}

fn validate_body(title: &str, body: &str) -> Result<(), CardError> {
    let bad = |reason| {
        Err(CardError::InvalidBody {
            title: title.to_string(),
            reason,
        })
    };
    if body.trim().is_empty() {
        return bad("empty");
    }
    if body.contains('\r') {
        return bad("contains a carriage return");
    }
    for (i, line) in body.split('\n').enumerate() {
        if line.trim().is_empty() {
            return bad("contains a blank line");
        }
        if line.trim_end() != line {
            return bad("has trailing whitespace");
        }
        if i > 0 && (looks_like_entry_line(line) || line.starts_with("### ")) {
            return bad("continuation line looks like a numbered entry");
        }
    }
    Ok(())
}

fn validate_app_name(name: &str) -> Result<(), CardError> {
    if name.is_empty() || name.trim() != name || name.chars().any(char::is_control) {
        return Err(CardError::InvalidAppName(name.to_string()));
    }
    Ok(())
}

/// Structured knowledge about one application.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AppCard {
    app_name: String,
    entries: Vec<CardEntry>,
    version: u32,
    #[serde(default)]
    provenance: Vec<String>,
}

impl AppCard {
    /// Builds a version-1 card, numbering entries 1..n in the given order.
    pub fn new(app_name: impl Into<String>, entries: Vec<CardEntry>) -> Result<Self, CardError> {
        let app_name = app_name.into();
        validate_app_name(&app_name)?;
        if entries.is_empty() {
            return Err(CardError::NoEntries);
        }
        let entries = entries
            .into_iter()
            .enumerate()
            .map(|(i, mut e)| {
                e.index = i + 1;
                e
            })
            .collect();
        Ok(Self {
            app_name,
            entries,
            version: 1,
            provenance: Vec::new(),
        })
    }

    pub fn with_version(mut self, version: u32) -> Result<Self, CardError> {
        if version == 0 {
            return Err(CardError::ZeroVersion);
        }
        self.version = version;
        Ok(self)
    }

    pub fn with_provenance(mut self, provenance: Vec<String>) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn add_provenance(&mut self, note: impl Into<String>) {
        self.provenance.push(note.into());
    }

    pub fn app_name(&self) -> &str {
        &self.app_name
    }

    pub fn entries(&self) -> &[CardEntry] {
        &self.entries
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    pub fn provenance(&self) -> &[String] {
        &self.provenance
    }

    /// Consumes the card, returning its entries (indices retained).
    pub fn into_entries(self) -> Vec<CardEntry> {
        self.entries
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("card serializes")
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntry {
    #[serde(default)]
    index: usize,
    title: String,
    body: String,
    category: Option<Category>,
    #[serde(default)]
    style: TitleStyle,
    #[serde(default)]
    sources: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCard {
    app_name: String,
    entries: Vec<RawEntry>,
    #[serde(default = "one")]
    version: u32,
    #[serde(default)]
    provenance: Vec<String>,
}

fn one() -> u32 {
    1
}

impl<'de> Deserialize<'de> for AppCard {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = RawCard::deserialize(deserializer)?;
        let mut entries = Vec::with_capacity(raw.entries.len());
        for (i, e) in raw.entries.into_iter().enumerate() {
            if e.index != 0 && e.index != i + 1 {
                return Err(D::Error::custom(format!(
                    "entry indices must be 1..n in order; expected {}, found {}",
                    i + 1,
                    e.index
                )));
            }
            let entry = CardEntry::build(e.title, e.body, e.style, e.category)
                .map_err(D::Error::custom)?
                .with_sources(e.sources);
            entries.push(entry);
        }
        AppCard::new(raw.app_name, entries)
            .and_then(|c| c.with_version(raw.version))
            .map(|c| c.with_provenance(raw.provenance))
            .map_err(D::Error::custom)
    }
}

/// Normalizes card text: LF line endings, no trailing whitespace, no blank
/// lines, exactly one trailing newline.
pub fn canonicalize(text: &str) -> String {
    let normalized = text.replace("\r\n", "\n").replace('\r', "\n");
    let mut out = String::with_capacity(normalized.len());
    for line in normalized.split('\n') {
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        out.push_str(line);
        out.push('\n');
    }
    out
}

/// Splits the text after `N. ` into style, title and first body line.
fn split_entry(rest: &str) -> Option<(TitleStyle, &str, &str)> {
    if let Some(inner) = rest.strip_prefix("**") {
        if let Some(pos) = inner.find(":**") {
            let title = &inner[..pos];
            let after = &inner[pos + 3..];
            let body = if after.is_empty() {
                ""
            } else {
                after.strip_prefix(' ')?
            };
            return Some((TitleStyle::Bold, title, body));
        }
        return None;
    }
    if let Some(pos) = rest.find(": ") {
        return Some((TitleStyle::Plain, &rest[..pos], &rest[pos + 2..]));
    }
    rest.strip_suffix(':')
        .map(|title| (TitleStyle::Plain, title, ""))
}

/// Parses a card in the `### App:` / `N. Title: body` grammar. Categories are
/// inferred from the entry text.
pub fn parse_card(text: &str) -> Result<AppCard, CardError> {
    // Line numbers refer to the original text, which may contain blank lines.
    let normalized = text.replace("\r\n", "\n").replace('\r', "\n");
    let mut lines = normalized
        .split('\n')
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end()))
        .filter(|(_, l)| !l.is_empty());

    let (header_line, header) = lines.next().ok_or(CardError::MissingHeader { line: 1 })?;
    let app_name = header_re()
        .captures(header)
        .map(|c| c.get(1).expect("group 1").as_str().to_string())
        .ok_or(CardError::MissingHeader { line: header_line })?;
    validate_app_name(&app_name).map_err(|_| CardError::MissingHeader { line: header_line })?;

    struct Pending {
        line: usize,
        style: TitleStyle,
        title: String,
        body: String,
    }
    let mut pending: Vec<Pending> = Vec::new();
    for (line_no, line) in lines {
        if let Some(caps) = entry_line_re().captures(line) {
            let found: usize = caps[1]
                .parse()
                .map_err(|_| CardError::MalformedEntry { line: line_no })?;
            let expected = pending.len() + 1;
            if found != expected {
                return Err(CardError::NonContiguousIndices {
                    line: line_no,
                    expected,
                    found,
                });
            }
            let rest = caps.get(2).map_or("", |m| m.as_str());
            if rest.trim().is_empty() {
                return Err(CardError::EmptyEntry {
                    line: line_no,
                    index: found,
                });
            }
            let (style, title, body) =
                split_entry(rest).ok_or(CardError::MalformedEntry { line: line_no })?;
            if title.trim().is_empty() || body.trim().is_empty() {
                return Err(CardError::EmptyEntry {
                    line: line_no,
                    index: found,
                });
            }
            pending.push(Pending {
                line: line_no,
                style,
                title: title.to_string(),
                body: body.to_string(),
            });
        } else if let Some(current) = pending.last_mut() {
            current.body.push('\n');
            current.body.push_str(line);
        } else {
            return Err(CardError::OrphanLine { line: line_no });
        }
    }

    if pending.is_empty() {
        return Err(CardError::NoEntries);
    }
    let entries = pending
        .into_iter()
        .map(|p| {
            CardEntry::build(p.title, p.body, p.style, None).map_err(|e| match e {
                CardError::InvalidTitle { .. } | CardError::InvalidBody { .. } => {
                    CardError::MalformedEntry { line: p.line }
                }
                other => other,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    AppCard::new(app_name, entries)
}

/// Renders a card in its canonical text form.
pub fn render_card(card: &AppCard) -> String {
    let mut out = format!("### {}:\n", card.app_name);
    for entry in &card.entries {
        out.push_str(&entry.render_line());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const MARKOR: &str = "### Markor:
1. Home: List of notes/documents; tap to open folder or file.
2. CreateNote: Bottom-right '+' -> new note -> editor -> Save.
3. EditNote: Tap existing note -> modify in Markdown editor -> Save.
4. DeleteNote: Long-press note -> Delete -> confirm.
5. Search: Tap search icon -> enter keyword -> view matches.
6. Settings: Adjust theme, syntax highlighting, font, default folder.
7. Share: Open note -> share icon -> choose target app.
";

    #[test]
    fn parses_markor() {
        let card = parse_card(MARKOR).unwrap();
        assert_eq!(card.app_name(), "Markor");
        assert_eq!(card.entries().len(), 7);
        assert_eq!(card.entries()[1].title(), "CreateNote");
        assert_eq!(
            card.entries()[1].body(),
            "Bottom-right '+' -> new note -> editor -> Save."
        );
        assert_eq!(card.entries()[5].category(), Category::IoConstraints);
        assert_eq!(card.entries()[3].category(), Category::UiFunctionMapping);
        assert_eq!(render_card(&card), MARKOR);
    }

    #[test]
    fn minimal_card() {
        let card = parse_card("### X:\n1. A: b.").unwrap();
        assert_eq!(card.entries().len(), 1);
        assert_eq!(render_card(&card), "### X:\n1. A: b.\n");
    }

    #[test]
    fn bold_titles_round_trip() {
        let text = "### OsmAnd:\n1. **Map Viewing / Offline Maps:** Download maps for regions.  \n";
        let card = parse_card(text).unwrap();
        let e = &card.entries()[0];
        assert_eq!(e.style(), TitleStyle::Bold);
        assert_eq!(e.title(), "Map Viewing / Offline Maps");
        assert_eq!(e.body(), "Download maps for regions.");
        assert_eq!(render_card(&card), canonicalize(text));
    }

    #[test]
    fn multi_line_bodies() {
        let text = "### X:\n1. A: first\n   second line\n2. B: c\n";
        let card = parse_card(text).unwrap();
        assert_eq!(card.entries()[0].body(), "first\n   second line");
        assert_eq!(render_card(&card), text);
    }

    #[test]
    fn parse_errors() {
        assert_eq!(parse_card(""), Err(CardError::MissingHeader { line: 1 }));
        assert_eq!(
            parse_card("Markor:\n1. A: b\n"),
            Err(CardError::MissingHeader { line: 1 })
        );
        assert_eq!(
            parse_card("### X:\n1. A: b\n3. C: d\n"),
            Err(CardError::NonContiguousIndices {
                line: 3,
                expected: 2,
                found: 3
            })
        );
        assert_eq!(
            parse_card("### X:\n1. A:\n"),
            Err(CardError::EmptyEntry { line: 2, index: 1 })
        );
        assert_eq!(
            parse_card("### X:\n1.\n"),
            Err(CardError::EmptyEntry { line: 2, index: 1 })
        );
        assert_eq!(
            parse_card("### X:\n1. no separator here\n"),
            Err(CardError::MalformedEntry { line: 2 })
        );
        assert_eq!(
            parse_card("### X:\nintro\n1. A: b\n"),
            Err(CardError::OrphanLine { line: 2 })
        );
        assert_eq!(parse_card("### X:\n"), Err(CardError::NoEntries));
    }

    #[test]
    fn error_kind_names() {
        let err = parse_card("### X:\n1. A: b\n3. C: d\n").unwrap_err();
        assert_eq!(err.kind(), "NonContiguousIndices");
        assert!(err.to_string().contains("NonContiguousIndices"));
    }

    #[test]
    fn canonicalization_rules() {
        let messy = "### X:  \r\n\r\n1. A: b   \r\n2. C: d";
        assert_eq!(canonicalize(messy), "### X:\n1. A: b\n2. C: d\n");
        let card = parse_card(messy).unwrap();
        assert_eq!(render_card(&card), canonicalize(messy));
    }

    #[test]
    fn constructor_rejects_unrenderable_entries() {
        assert!(CardEntry::new("", "b").is_err());
        assert!(CardEntry::new("A: x", "b").is_err());
        assert!(CardEntry::new("**A", "b").is_err());
        assert!(CardEntry::new("A", "").is_err());
        assert!(CardEntry::new("A", "b \nc").is_err());
        assert!(CardEntry::new("A", "b\n2. c").is_err());
        assert!(CardEntry::new("A", "b\n\nc").is_err());
        assert!(AppCard::new("X", vec![]).is_err());
        assert!(AppCard::new(" X", vec![CardEntry::new("A", "b").unwrap()]).is_err());
    }

    #[test]
    fn category_heuristics() {
        assert_eq!(
            infer_category("Permissions", "Request storage"),
            Category::IoConstraints
        );
        assert_eq!(
            infer_category("Backup & Restore", "Save backups"),
            Category::InteractionPatterns
        );
        assert_eq!(
            infer_category("Open", "Tap the icon"),
            Category::UiFunctionMapping
        );
        assert_eq!(
            infer_category("Open", "Plays media"),
            Category::FunctionalSemantics
        );
    }

    #[test]
    fn json_export_round_trip() {
        let card = parse_card(MARKOR)
            .unwrap()
            .with_version(3)
            .unwrap()
            .with_provenance(vec!["web_docs:markor.txt".into()]);
        let json = card.to_json();
        assert_eq!(json["entries"][0]["category"], "ui_function_mapping");
        let back: AppCard = serde_json::from_value(json).unwrap();
        assert_eq!(back, card);
    }
}
