//! Parser for the subset of the CHAT transcription format used by
//! picture-description corpora.
//!
//! A `.cha` file is a sequence of tiers. Header tiers start with `@`,
//! utterance tiers with `*SPK:` and dependent tiers with `%`. A line that
//! starts with whitespace continues the previous tier. Utterance tiers may
//! end in a `start_end` millisecond pair, optionally wrapped in a
//! non-printing delimiter (CLAN writes `\u{15}`).
//!
//! Dependent tiers (`%mor`, `%gra`, ...) are recognised and dropped.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Header markers that legitimately appear without a `:` value separator.
const BARE_MARKERS: &[&str] = &["Begin", "End", "UTF8", "Blank", "New Episode", "Bg", "Eg", "G"];

/// Headers allowed to precede `@Begin`.
const PRELUDE_HEADERS: &[&str] = &["UTF8", "PID", "Window", "Font", "ColorWords"];

#[derive(Debug, Error)]
pub enum ChatError {
    #[error("line {line}: malformed header {text:?} (expected '@Key:<tab>value')")]
    MalformedHeader { line: usize, text: String },
    #[error("transcript has no @Begin header")]
    MissingBegin,
    #[error("transcript is not terminated by @End")]
    UnterminatedTranscript,
    #[error("line {line}: bad timestamp {token:?}")]
    BadTimestamp { line: usize, token: String },
    #[error("line {line}: unknown line prefix in {text:?}")]
    UnknownLinePrefix { line: usize, text: String },
    #[error("line {line}: speaker {speaker:?} is not declared in @Participants or @ID")]
    UndeclaredSpeaker { line: usize, speaker: String },
    #[error("line {line}: content after @End")]
    TrailingContent { line: usize },
    #[error("input is not valid UTF-8: {0}")]
    InvalidUtf8(#[from] std::str::Utf8Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeaderRecord {
    pub key: String,
    pub value: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Male,
    Female,
    Unspecified,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParticipantInfo {
    pub speaker_code: String,
    pub language: String,
    pub corpus: String,
    pub age_years: Option<u32>,
    pub sex: Option<Sex>,
    pub group: Option<String>,
    pub role: String,
    pub education_years: Option<u32>,
}

impl ParticipantInfo {
    fn bare(code: &str, role: &str) -> Self {
        Self {
            speaker_code: code.to_string(),
            language: String::new(),
            corpus: String::new(),
            age_years: None,
            sex: None,
            group: None,
            role: role.to_string(),
            education_years: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: String,
    pub raw_text: String,
    pub start_ms: Option<u64>,
    pub end_ms: Option<u64>,
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TimeInterval {
    pub start_ms: u64,
    pub end_ms: u64,
}

impl TimeInterval {
    pub fn new(start_ms: u64, end_ms: u64) -> Option<Self> {
        (start_ms <= end_ms).then_some(Self { start_ms, end_ms })
    }
}

/// Non-fatal oddities found while parsing, e.g. an `@ID` age that is not a number.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseWarning {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatTranscript {
    pub uid: String,
    pub headers: Vec<HeaderRecord>,
    pub participants: BTreeMap<String, ParticipantInfo>,
    pub utterances: Vec<Utterance>,
    pub warnings: Vec<ParseWarning>,
}

/// Intervals for one speaker plus the number of that speaker's utterances
/// that had no timestamps.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SpeakerIntervals {
    pub intervals: Vec<TimeInterval>,
    pub skipped: usize,
}

impl ChatTranscript {
    pub fn utterances_of(&self, speaker: &str) -> Vec<&Utterance> {
        self.utterances.iter().filter(|u| u.speaker == speaker).collect()
    }

    pub fn speaker_intervals(&self, speaker: &str) -> SpeakerIntervals {
        let mut out = SpeakerIntervals::default();
        for u in self.utterances.iter().filter(|u| u.speaker == speaker) {
            match (u.start_ms, u.end_ms) {
                (Some(start_ms), Some(end_ms)) => out.intervals.push(TimeInterval { start_ms, end_ms }),
                _ => out.skipped += 1,
            }
        }
        out
    }

    /// Intervals of every speaker other than `speaker`, in file order.
    pub fn complement_intervals(&self, speaker: &str) -> Vec<TimeInterval> {
        self.utterances
            .iter()
            .filter(|u| u.speaker != speaker)
            .filter_map(|u| Some(TimeInterval { start_ms: u.start_ms?, end_ms: u.end_ms? }))
            .collect()
    }

    pub fn header(&self, key: &str) -> Option<&str> {
        self.headers.iter().find(|h| h.key == key).map(|h| h.value.as_str())
    }
}

/// Reads a whole `.cha` stream. A leading UTF-8 byte-order mark is dropped.
pub fn parse_cha<R: Read>(mut source: R, uid: &str) -> Result<ChatTranscript, ChatError> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    let text = std::str::from_utf8(&bytes)?;
    parse_cha_str(text, uid)
}

/// Parses a file, taking the uid from the file stem.
pub fn read_cha_file(path: &Path) -> Result<ChatTranscript, ChatError> {
    let uid = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    parse_cha(fs::File::open(path)?, &uid)
}

struct Tier {
    line: usize,
    text: String,
}

pub fn parse_cha_str(text: &str, uid: &str) -> Result<ChatTranscript, ChatError> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);

    // Fold continuation lines into logical tiers first.
    let mut tiers: Vec<Tier> = Vec::new();
    for (i, raw_line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw_line.strip_suffix('\r').unwrap_or(raw_line);
        if line.trim().is_empty() {
            continue;
        }
        let first = line.chars().next().unwrap();
        match first {
            '@' | '*' | '%' => tiers.push(Tier { line: line_no, text: line.to_string() }),
            c if c.is_whitespace() => match tiers.last_mut() {
                Some(prev) => {
                    prev.text.push(' ');
                    prev.text.push_str(line.trim_start());
                }
                None => {
                    return Err(ChatError::UnknownLinePrefix { line: line_no, text: line.to_string() })
                }
            },
            _ => return Err(ChatError::UnknownLinePrefix { line: line_no, text: line.to_string() }),
        }
    }

    let mut transcript = ChatTranscript {
        uid: uid.to_string(),
        headers: Vec::new(),
        participants: BTreeMap::new(),
        utterances: Vec::new(),
        warnings: Vec::new(),
    };
    let mut begun = false;
    let mut ended = false;

    for tier in tiers {
        if ended {
            return Err(ChatError::TrailingContent { line: tier.line });
        }
        if let Some(rest) = tier.text.strip_prefix('@') {
            let record = parse_header(rest, tier.line)?;
            if !begun {
                if record.key == "Begin" {
                    begun = true;
                } else if !PRELUDE_HEADERS.contains(&record.key.as_str()) {
                    return Err(ChatError::MissingBegin);
                }
            } else if record.key == "End" {
                ended = true;
            } else if record.key == "Participants" {
                register_participants(&record.value, &mut transcript.participants);
            } else if record.key == "ID" {
                let info = parse_id(&record.value, tier.line, &mut transcript.warnings)?;
                transcript.participants.insert(info.speaker_code.clone(), info);
            }
            transcript.headers.push(record);
        } else if let Some(rest) = tier.text.strip_prefix('*') {
            if !begun {
                return Err(ChatError::MissingBegin);
            }
            let utt = parse_utterance(rest, tier.line, transcript.utterances.len())?;
            if !transcript.participants.contains_key(&utt.speaker) {
                return Err(ChatError::UndeclaredSpeaker { line: tier.line, speaker: utt.speaker });
            }
            transcript.utterances.push(utt);
        } else if !begun {
            return Err(ChatError::MissingBegin);
        }
        // '%' dependent tiers are dropped.
    }

    if !begun {
        return Err(ChatError::MissingBegin);
    }
    if !ended {
        return Err(ChatError::UnterminatedTranscript);
    }
    Ok(transcript)
}

fn parse_header(rest: &str, line: usize) -> Result<HeaderRecord, ChatError> {
    match rest.split_once(':') {
        Some((key, value)) => {
            let key = key.trim();
            if key.is_empty() {
                return Err(ChatError::MalformedHeader { line, text: format!("@{rest}") });
            }
            Ok(HeaderRecord { key: key.to_string(), value: clean_spaces(value.trim()) })
        }
        None => {
            let key = rest.trim();
            if BARE_MARKERS.contains(&key) {
                Ok(HeaderRecord { key: key.to_string(), value: String::new() })
            } else {
                Err(ChatError::MalformedHeader { line, text: format!("@{rest}") })
            }
        }
    }
}

/// `@Participants: PAR Participant, INV Investigator`: code, optional name, role.
fn register_participants(value: &str, participants: &mut BTreeMap<String, ParticipantInfo>) {
    for entry in value.split(',') {
        let words: Vec<&str> = entry.split_whitespace().collect();
        let Some(code) = words.first() else { continue };
        let role = if words.len() > 1 { words[words.len() - 1] } else { "" };
        participants
            .entry(code.to_string())
            .or_insert_with(|| ParticipantInfo::bare(code, role));
    }
}

/// `@ID: language|corpus|code|age|sex|group|SES|role|education|custom|`
fn parse_id(value: &str, line: usize, warnings: &mut Vec<ParseWarning>) -> Result<ParticipantInfo, ChatError> {
    let fields: Vec<&str> = value.split('|').map(str::trim).collect();
    if fields.len() < 3 || fields[2].is_empty() {
        return Err(ChatError::MalformedHeader { line, text: format!("@ID:\t{value}") });
    }
    let field = |i: usize| fields.get(i).copied().unwrap_or("");
    let mut warn = |message: String| warnings.push(ParseWarning { line, message });

    let age_years = match field(3) {
        "" => None,
        age => {
            let digits: String = age.chars().take_while(char::is_ascii_digit).collect();
            match digits.parse::<u32>() {
                Ok(years) => Some(years),
                Err(_) => {
                    warn(format!("unparseable age {age:?}"));
                    None
                }
            }
        }
    };
    let sex = match field(4).to_ascii_lowercase().as_str() {
        "" => None,
        "male" => Some(Sex::Male),
        "female" => Some(Sex::Female),
        "unspecified" | "unknown" => Some(Sex::Unspecified),
        other => {
            warn(format!("unrecognised sex {other:?}"));
            None
        }
    };
    let education_years = match field(8) {
        "" => None,
        edu => match edu.parse::<u32>() {
            Ok(v) => Some(v),
            Err(_) => {
                warn(format!("unparseable education {edu:?}"));
                None
            }
        },
    };
    Ok(ParticipantInfo {
        speaker_code: field(2).to_string(),
        language: field(0).to_string(),
        corpus: field(1).to_string(),
        age_years,
        sex,
        group: Some(field(5)).filter(|g| !g.is_empty()).map(str::to_string),
        role: field(7).to_string(),
        education_years,
    })
}

fn parse_utterance(rest: &str, line: usize, index: usize) -> Result<Utterance, ChatError> {
    let Some((speaker, body)) = rest.split_once(':') else {
        return Err(ChatError::UnknownLinePrefix { line, text: format!("*{rest}") });
    };
    let speaker = speaker.trim();
    if speaker.is_empty() || speaker.contains(char::is_whitespace) {
        return Err(ChatError::UnknownLinePrefix { line, text: format!("*{rest}") });
    }
    let body = clean_spaces(body.trim());
    let (raw_text, stamps) = split_timestamp(&body, line)?;
    Ok(Utterance {
        speaker: speaker.to_string(),
        raw_text,
        start_ms: stamps.map(|t| t.start_ms),
        end_ms: stamps.map(|t| t.end_ms),
        index,
    })
}

/// Tabs inside a tier become single spaces.
fn clean_spaces(s: &str) -> String {
    s.replace(['\t', '\n', '\r'], " ")
}

fn is_wrapper(c: char) -> bool {
    c.is_control() && !c.is_whitespace()
}

/// Splits a trailing `start_end` pair off an utterance body.
///
/// A final token wrapped in a control character must be a valid pair. An
/// unwrapped final token is only treated as a timestamp when one side of the
/// underscore is all digits; `ice_cream` style compounds are left as text.
fn split_timestamp(body: &str, line: usize) -> Result<(String, Option<TimeInterval>), ChatError> {
    let trimmed = body.trim_end();
    let token_start = trimmed
        .char_indices()
        .rev()
        .find(|(_, c)| c.is_whitespace())
        .map(|(i, c)| i + c.len_utf8())
        .unwrap_or(0);
    let token = &trimmed[token_start..];
    let mut inner = token;
    let mut wrapped = false;
    if let Some(c) = inner.chars().last().filter(|c| is_wrapper(*c)) {
        inner = &inner[..inner.len() - c.len_utf8()];
        wrapped = true;
    }
    // The opening wrapper may be glued to the preceding word: "word .\u{15}0_10\u{15}"
    let mut text_end = token_start;
    if let Some(pos) = inner.rfind(is_wrapper) {
        let width = inner[pos..].chars().next().map_or(1, char::len_utf8);
        text_end = token_start + pos;
        inner = &inner[pos + width..];
        wrapped = true;
    }

    let bad = || ChatError::BadTimestamp { line, token: token.to_string() };
    let Some((a, b)) = inner.split_once('_') else {
        if wrapped {
            return Err(bad());
        }
        return Ok((trimmed.to_string(), None));
    };
    let digits = |s: &str| !s.is_empty() && s.chars().all(|c| c.is_ascii_digit());
    match (digits(a), digits(b)) {
        (true, true) => {
            let start: u64 = a.parse().map_err(|_| bad())?;
            let end: u64 = b.parse().map_err(|_| bad())?;
            let interval = TimeInterval::new(start, end).ok_or_else(bad)?;
            let text = trimmed[..text_end].trim_end().to_string();
            Ok((text, Some(interval)))
        }
        (false, false) if !wrapped => Ok((trimmed.to_string(), None)),
        _ => Err(bad()),
    }
}
