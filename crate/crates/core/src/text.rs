//! Utterance text cleaning and the utterance-level TSV corpus writer.
//!
//! Rules run in a fixed order. Each rule is a pure string transform that is
//! applied until it no longer changes the string. The order is the wizard
//! prompt order, except that `&=` noise tokens are removed before the generic
//! `&` disfluency rule. Steps 1 to 13 then repeat as a group until the
//! string is stable, so a later rule never exposes text an earlier rule
//! would have removed (`xx(x)` under strip becomes `xxx`, which step 6
//! then drops). Step 14 runs once at the end.
//!
//! | step | toggle                    | removes / rewrites                                  |
//! |------|---------------------------|-----------------------------------------------------|
//! | 1    | `remove_clear_throat`     | `&=clears:throat`, `&=clears_throat`, `&=throat_clear`, `[=! clears throat]` |
//! | 2    | `unwrap_parentheses`      | `fallin(g)` -> `falling`, `(be)coming` -> `becoming` |
//! | 3    | `remove_bracket_colon`    | `[: replacement]`, `[:: replacement]`               |
//! | 4    | `remove_noise_indicators` | `&=laughs`, `&=breath`, ...                         |
//! | 5    | `remove_amp_disfluencies` | `&um`, `&uh`, `&+fr`, ... (not `&=`)                |
//! | 6    | `remove_unintelligible`   | whole tokens `xxx`, `xx`                            |
//! | 7    | `remove_pauses`           | `(.)`, `(..)`, `(...)`                              |
//! | 8    | `remove_slash_brackets`   | `[/]`, `[//]`, `[///]` (the marker only)            |
//! | 9    | `remove_error_codes`      | `[* ...]`, `[+ ...]`                                |
//! | 10   | `strip_non_alphanumeric`  | every char except letters, digits, `'` and space    |
//! | 11   | `collapse_spaces`         | whitespace runs -> one space, ends trimmed           |
//! | 12   | `capitalize_first`        | first character upper-cased                          |
//! | 13   | `add_final_period`        | appends `.` unless empty or already ending in `.`    |
//! | 14   | `add_newline`             | appends `\n`                                         |

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chat::{ChatTranscript, TimeInterval};
use crate::util::write_atomic;

pub const PARTICIPANT: &str = "PAR";
pub const TSV_HEADER: &str = "uid\tvisit\tspeaker\tutt_index\tstart_ms\tend_ms\ttext";
pub const TEXT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TextError {
    #[error("cannot write {path}: {source}")]
    OutputUnwritable { path: PathBuf, source: std::io::Error },
    #[error("duplicate transcript uid {0:?}")]
    DuplicateUid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dataset {
    Db,
    Wls,
}

impl std::str::FromStr for Dataset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "db" => Ok(Dataset::Db),
            "wls" => Ok(Dataset::Wls),
            other => Err(format!("expected 'db' or 'wls', got {other:?}")),
        }
    }
}

fn default_schema_version() -> u32 {
    TEXT_SCHEMA_VERSION
}

/// The `text_process.json` document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextPipelineConfig {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    pub dataset: Dataset,
    pub input_path: String,
    pub remove_clear_throat: bool,
    pub unwrap_parentheses: bool,
    pub remove_bracket_colon: bool,
    pub remove_amp_disfluencies: bool,
    pub remove_unintelligible: bool,
    pub remove_pauses: bool,
    pub remove_slash_brackets: bool,
    pub remove_noise_indicators: bool,
    pub remove_error_codes: bool,
    pub strip_non_alphanumeric: bool,
    pub collapse_spaces: bool,
    pub capitalize_first: bool,
    pub add_final_period: bool,
    pub add_newline: bool,
    pub output_path: String,
}

impl TextPipelineConfig {
    /// Every toggle set to `on`.
    pub fn uniform(on: bool) -> Self {
        Self {
            schema_version: TEXT_SCHEMA_VERSION,
            dataset: Dataset::Db,
            input_path: String::new(),
            remove_clear_throat: on,
            unwrap_parentheses: on,
            remove_bracket_colon: on,
            remove_amp_disfluencies: on,
            remove_unintelligible: on,
            remove_pauses: on,
            remove_slash_brackets: on,
            remove_noise_indicators: on,
            remove_error_codes: on,
            strip_non_alphanumeric: on,
            collapse_spaces: on,
            capitalize_first: on,
            add_final_period: on,
            add_newline: on,
            output_path: String::new(),
        }
    }

    /// The toggles in wizard prompt order.
    pub fn toggles(&self) -> [bool; 14] {
        [
            self.remove_clear_throat,
            self.unwrap_parentheses,
            self.remove_bracket_colon,
            self.remove_amp_disfluencies,
            self.remove_unintelligible,
            self.remove_pauses,
            self.remove_slash_brackets,
            self.remove_noise_indicators,
            self.remove_error_codes,
            self.strip_non_alphanumeric,
            self.collapse_spaces,
            self.capitalize_first,
            self.add_final_period,
            self.add_newline,
        ]
    }

    pub fn set_toggles(&mut self, t: [bool; 14]) {
        self.remove_clear_throat = t[0];
        self.unwrap_parentheses = t[1];
        self.remove_bracket_colon = t[2];
        self.remove_amp_disfluencies = t[3];
        self.remove_unintelligible = t[4];
        self.remove_pauses = t[5];
        self.remove_slash_brackets = t[6];
        self.remove_noise_indicators = t[7];
        self.remove_error_codes = t[8];
        self.strip_non_alphanumeric = t[9];
        self.collapse_spaces = t[10];
        self.capitalize_first = t[11];
        self.add_final_period = t[12];
        self.add_newline = t[13];
    }

    pub fn from_json(bytes: &[u8]) -> serde_json::Result<Self> {
        serde_json::from_slice(bytes)
    }

    pub fn to_json_pretty(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}

macro_rules! re {
    ($name:ident, $pat:expr) => {
        static $name: LazyLock<Regex> = LazyLock::new(|| Regex::new($pat).unwrap());
    };
}

re!(CLEAR_THROAT, r"(?i)&=(?:clears?|clearing)[:_]?throat\S*|&=throat[:_]?clear\S*|\[=!\s*clears?\s+throat\]");
re!(PAREN_UNWRAP, r"\(([\p{L}\p{N}']+)\)");
re!(BRACKET_COLON, r"\[::?\s[^\]]*\]");
re!(NOISE, r"&=\S+");
re!(AMP, r"&[^=\s]\S*");
re!(UNINTELLIGIBLE, r"(?:^|\s)(?:xxx|xx)(?:\s|$)");
re!(PAUSE, r"\(\.{1,3}\)");
re!(SLASH, r"\[/{1,3}\]");
re!(ERROR_CODE, r"\[[*+][^\]]*\]");
re!(SPACES, r"\s+");

fn fixpoint(mut s: String, f: impl Fn(&str) -> String) -> String {
    loop {
        let next = f(&s);
        if next == s {
            return s;
        }
        s = next;
    }
}

fn remove(re: &Regex, s: String) -> String {
    fixpoint(s, |x| re.replace_all(x, "").into_owned())
}

/// Token-level removal that keeps the surrounding whitespace boundary.
fn remove_tokens(re: &Regex, s: String) -> String {
    fixpoint(s, |x| re.replace_all(x, " ").into_owned())
}

/// Upper bound on whole-group passes; real input settles in two.
const MAX_PASSES: usize = 32;

/// Runs the enabled cleaning rules over one utterance.
pub fn normalize_utterance(raw: &str, cfg: &TextPipelineConfig) -> String {
    let mut s = raw.to_string();
    for _ in 0..MAX_PASSES {
        let next = clean_once(&s, cfg);
        if next == s {
            break;
        }
        s = next;
    }
    if cfg.add_newline {
        s.push('\n');
    }
    s
}

/// Rules 1 to 13, each once.
fn clean_once(raw: &str, cfg: &TextPipelineConfig) -> String {
    let mut s = raw.to_string();
    if cfg.remove_clear_throat {
        s = remove(&CLEAR_THROAT, s);
    }
    if cfg.unwrap_parentheses {
        s = fixpoint(s, |x| PAREN_UNWRAP.replace_all(x, "$1").into_owned());
    }
    if cfg.remove_bracket_colon {
        s = remove(&BRACKET_COLON, s);
    }
    if cfg.remove_noise_indicators {
        s = remove(&NOISE, s);
    }
    if cfg.remove_amp_disfluencies {
        s = remove(&AMP, s);
    }
    if cfg.remove_unintelligible {
        s = remove_tokens(&UNINTELLIGIBLE, s);
    }
    if cfg.remove_pauses {
        s = remove(&PAUSE, s);
    }
    if cfg.remove_slash_brackets {
        s = remove(&SLASH, s);
    }
    if cfg.remove_error_codes {
        s = remove(&ERROR_CODE, s);
    }
    if cfg.strip_non_alphanumeric {
        s.retain(|c| c.is_alphanumeric() || c == '\'' || c == ' ');
    }
    if cfg.collapse_spaces {
        s = SPACES.replace_all(s.trim(), " ").into_owned();
    }
    if cfg.capitalize_first {
        let mut chars = s.chars();
        if let Some(first) = chars.next() {
            s = first.to_uppercase().chain(chars).collect();
        }
    }
    if cfg.add_final_period && !s.is_empty() && !s.ends_with('.') {
        s.push('.');
    }
    s
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UtteranceRow {
    pub uid: String,
    pub visit: u32,
    pub speaker: String,
    pub utt_index: usize,
    pub start_ms: Option<u64>,
    pub end_ms: Option<u64>,
    pub text: String,
}

/// Per-transcript record of the non-participant speech intervals.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentSidecar {
    pub uid: String,
    pub trim_intervals: Vec<[u64; 2]>,
}

impl AlignmentSidecar {
    pub fn intervals(&self) -> Vec<TimeInterval> {
        self.trim_intervals
            .iter()
            .filter_map(|[s, e]| TimeInterval::new(*s, *e))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ProcessedCorpus {
    pub rows: Vec<UtteranceRow>,
    pub sidecars: Vec<AlignmentSidecar>,
}

/// Visit index: the uid suffix after the last `-` when numeric, else 0.
pub fn visit_of(uid: &str) -> u32 {
    uid.rsplit_once('-').and_then(|(_, v)| v.parse().ok()).unwrap_or(0)
}

/// Normalizes every utterance of `speaker` and collects the alignment
/// sidecars. Rows are ordered by uid, then utterance index; rows whose
/// cleaned text is blank are dropped.
pub fn process_corpus(
    cfg: &TextPipelineConfig,
    transcripts: &[ChatTranscript],
    speaker: &str,
) -> Result<ProcessedCorpus, TextError> {
    let mut seen = BTreeSet::new();
    let mut by_uid: BTreeMap<&str, &ChatTranscript> = BTreeMap::new();
    for t in transcripts {
        if !seen.insert(t.uid.as_str()) {
            return Err(TextError::DuplicateUid(t.uid.clone()));
        }
        by_uid.insert(&t.uid, t);
    }

    let mut out = ProcessedCorpus::default();
    for (uid, t) in by_uid {
        let visit = visit_of(uid);
        for u in t.utterances_of(speaker) {
            let text = normalize_utterance(&u.raw_text, cfg);
            if text.trim().is_empty() {
                continue;
            }
            out.rows.push(UtteranceRow {
                uid: uid.to_string(),
                visit,
                speaker: speaker.to_string(),
                utt_index: u.index,
                start_ms: u.start_ms,
                end_ms: u.end_ms,
                text,
            });
        }
        out.sidecars.push(AlignmentSidecar {
            uid: uid.to_string(),
            trim_intervals: t
                .complement_intervals(speaker)
                .into_iter()
                .map(|iv| [iv.start_ms, iv.end_ms])
                .collect(),
        });
    }
    Ok(out)
}

/// Backslash-escapes tab, newline, carriage return and backslash so a field
/// always stays on one TSV line.
fn escape_field(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

pub fn unescape_field(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some(other) => out.push(other),
            None => out.push('\\'),
        }
    }
    out
}

pub fn render_tsv(rows: &[UtteranceRow]) -> String {
    let opt = |v: Option<u64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut out = String::from(TSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            escape_field(&r.uid),
            r.visit,
            escape_field(&r.speaker),
            r.utt_index,
            opt(r.start_ms),
            opt(r.end_ms),
            escape_field(&r.text)
        );
    }
    out
}

/// Parses a TSV produced by [`render_tsv`].
pub fn parse_tsv(text: &str) -> Result<Vec<UtteranceRow>, String> {
    let mut lines = text.lines();
    if lines.next() != Some(TSV_HEADER) {
        return Err("missing or unexpected TSV header".into());
    }
    let opt = |s: &str| -> Result<Option<u64>, String> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|e| format!("bad timestamp {s:?}: {e}"))
        }
    };
    lines
        .map(|line| {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 7 {
                return Err(format!("expected 7 fields, got {}: {line:?}", f.len()));
            }
            Ok(UtteranceRow {
                uid: unescape_field(f[0]),
                visit: f[1].parse().map_err(|e| format!("bad visit: {e}"))?,
                speaker: unescape_field(f[2]),
                utt_index: f[3].parse().map_err(|e| format!("bad utt_index: {e}"))?,
                start_ms: opt(f[4])?,
                end_ms: opt(f[5])?,
                text: unescape_field(f[6]),
            })
        })
        .collect()
}

pub fn render_sidecar(sidecar: &AlignmentSidecar) -> String {
    let mut s = serde_json::to_string(sidecar).expect("sidecar serializes");
    s.push('\n');
    s
}

/// Writes the TSV and one `<uid>.json` sidecar per transcript. Returns the
/// written paths, TSV first.
pub fn write_corpus(corpus: &ProcessedCorpus, tsv_path: &Path, sidecar_dir: &Path) -> Result<Vec<PathBuf>, TextError> {
    let unwritable = |path: &Path| {
        let path = path.to_path_buf();
        move |source| TextError::OutputUnwritable { path, source }
    };
    write_atomic(tsv_path, render_tsv(&corpus.rows).as_bytes()).map_err(unwritable(tsv_path))?;
    let mut written = vec![tsv_path.to_path_buf()];
    for sidecar in &corpus.sidecars {
        let path = sidecar_dir.join(format!("{}.json", sidecar.uid));
        write_atomic(&path, render_sidecar(sidecar).as_bytes()).map_err(unwritable(&path))?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_on() -> TextPipelineConfig {
        let mut c = TextPipelineConfig::uniform(true);
        c.add_newline = false;
        c
    }

    fn only(f: impl FnOnce(&mut TextPipelineConfig)) -> TextPipelineConfig {
        let mut c = TextPipelineConfig::uniform(false);
        f(&mut c);
        c
    }

    #[test]
    fn empty_input_stays_empty() {
        assert_eq!(normalize_utterance("", &all_on()), "");
        assert_eq!(normalize_utterance("", &TextPipelineConfig::uniform(false)), "");
    }

    #[test]
    fn newline_toggle() {
        let c = TextPipelineConfig::uniform(true);
        assert_eq!(normalize_utterance("mhm .", &c), "Mhm.\n");
        assert_eq!(normalize_utterance("", &c), "\n");
    }

    #[test]
    fn single_rules() {
        let cases: Vec<(TextPipelineConfig, &str, &str)> = vec![
            (only(|c| c.remove_clear_throat = true), "well &=clears:throat yes", "well  yes"),
            (only(|c| c.remove_clear_throat = true), "well &=laughs yes", "well &=laughs yes"),
            (only(|c| c.unwrap_parentheses = true), "(be)coming fallin(g) (.)", "becoming falling (.)"),
            (only(|c| c.remove_bracket_colon = true), "overflowin [: overflowing] .", "overflowin  ."),
            (only(|c| c.remove_amp_disfluencies = true), "&um the &+fr &=breath boy", " the  &=breath boy"),
            (only(|c| c.remove_noise_indicators = true), "&um the &=breath boy", "&um the  boy"),
            (only(|c| c.remove_unintelligible = true), "xxx the xx boy xxxx", " the boy xxxx"),
            (only(|c| c.remove_pauses = true), "a (.) b (..) c (...) d", "a  b  c  d"),
            (only(|c| c.remove_slash_brackets = true), "it [/] it [//] he [///] x", "it  it  he  x"),
            (only(|c| c.remove_error_codes = true), "mhm . [+ exc] goed [* m]", "mhm .  goed "),
            (only(|c| c.strip_non_alphanumeric = true), "+< there's a boy .", " there's a boy "),
            (only(|c| c.collapse_spaces = true), "  a   b \t c ", "a b c"),
            (only(|c| c.capitalize_first = true), "a b", "A b"),
            (only(|c| c.add_final_period = true), "a b", "a b."),
            (only(|c| c.add_final_period = true), "a b.", "a b."),
        ];
        for (cfg, input, want) in cases {
            assert_eq!(normalize_utterance(input, &cfg), want, "input {input:?}");
        }
    }

    #[test]
    fn nested_parentheses_unwrap_fully() {
        let c = only(|c| c.unwrap_parentheses = true);
        assert_eq!(normalize_utterance("((ab))c", &c), "abc");
    }

    #[test]
    fn identity_pipeline() {
        let c = TextPipelineConfig::uniform(false);
        for s in ["there's &um a [//] (.) boy . [+ exc]", "  spaced\u{e9} ", "xxx"] {
            assert_eq!(normalize_utterance(s, &c), s);
        }
    }

    #[test]
    fn visit_from_uid() {
        assert_eq!(visit_of("001-2"), 2);
        assert_eq!(visit_of("001"), 0);
        assert_eq!(visit_of("abc-x"), 0);
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let mut v = serde_json::to_value(all_on()).unwrap();
        v["surprise"] = serde_json::json!(true);
        assert!(TextPipelineConfig::from_json(v.to_string().as_bytes()).is_err());
    }

    #[test]
    fn config_round_trips() {
        let c = all_on();
        assert_eq!(TextPipelineConfig::from_json(c.to_json_pretty().as_bytes()).unwrap(), c);
    }

    #[test]
    fn tsv_escapes_newlines() {
        let rows = vec![UtteranceRow {
            uid: "001-0".into(),
            visit: 0,
            speaker: "PAR".into(),
            utt_index: 1,
            start_ms: None,
            end_ms: Some(5),
            text: "Hi.\n".into(),
        }];
        let tsv = render_tsv(&rows);
        assert_eq!(tsv, format!("{TSV_HEADER}\n001-0\t0\tPAR\t1\t\t5\tHi.\\n\n"));
        assert_eq!(parse_tsv(&tsv).unwrap(), rows);
    }
}
