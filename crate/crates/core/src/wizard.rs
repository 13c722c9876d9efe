//! Question-and-answer construction of the text and audio configs.
//!
//! Answers come from an [`AnswerSource`]: a terminal, which re-asks after an
//! invalid answer, or a script with one answer per line, where an invalid
//! answer is fatal. The same answers give the same config either way.

use std::collections::VecDeque;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};

use crate::audio::{AudioPipelineConfig, FeatureMethod, MAX_MFCC_COEFFS, AUDIO_SCHEMA_VERSION};
use crate::features::MfccParams;
use crate::pipeline::{load_transcripts, run_audio, run_text, AudioLayout, AudioRun, CorpusIndex, PipelineError, TextRun};
use crate::text::{process_corpus, Dataset, TextPipelineConfig, PARTICIPANT, TEXT_SCHEMA_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnswerKind {
    Dataset,
    Path,
    YesNo,
    Integer,
    FeatureMethod,
}

impl AnswerKind {
    fn expected(self) -> &'static str {
        match self {
            Self::Dataset => "wls or db",
            Self::Path => "a non-empty path",
            Self::YesNo => "y or n",
            Self::Integer => "a non-negative integer",
            Self::FeatureMethod => "FTT, MFCC or NONE",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Prompt {
    pub id: &'static str,
    pub text: &'static str,
    pub kind: AnswerKind,
}

const fn p(id: &'static str, text: &'static str, kind: AnswerKind) -> Prompt {
    Prompt { id, text, kind }
}

pub const TEXT_PROMPTS: [Prompt; 17] = [
    p("dataset", "Which dataset you are pre-processing? wls or db?:", AnswerKind::Dataset),
    p("input_path", "Where are the .cha files located?:", AnswerKind::Path),
    p("remove_clear_throat", "Remove 'clear throat'? (Y/N):", AnswerKind::YesNo),
    p("unwrap_parentheses", "Remove open parentheses e.g, (be)coming? (Y/N):", AnswerKind::YesNo),
    p("remove_bracket_colon", "Remove open square brackets eg. [: overflowing]? (Y/N):", AnswerKind::YesNo),
    p("remove_amp_disfluencies", "Remove disfluencies prefixed with '&'? (Y/N):", AnswerKind::YesNo),
    p("remove_unintelligible", "Remove unintelligible words? (Y/N):", AnswerKind::YesNo),
    p("remove_pauses", "Remove pauses eg. (.) or (..)? (Y/N):", AnswerKind::YesNo),
    p("remove_slash_brackets", "Remove forward slashes in square brackets? (Y/N):", AnswerKind::YesNo),
    p("remove_noise_indicators", "Remove noise indicators e.g. &=breath? (Y/N):", AnswerKind::YesNo),
    p("remove_error_codes", "Remove square brackets indicating an error code? (Y/N):", AnswerKind::YesNo),
    p("strip_non_alphanumeric", "Remove all non-alphanumeric characters? (Y/N):", AnswerKind::YesNo),
    p("collapse_spaces", "Replace multiple spaces with a single space? (Y/N):", AnswerKind::YesNo),
    p("capitalize_first", "Capitalize the first character? (Y/N):", AnswerKind::YesNo),
    p("add_final_period", "Add period at the end of every sentence? (Y/N):", AnswerKind::YesNo),
    p("add_newline", "Add newline at the end of every sentence? (Y/N):", AnswerKind::YesNo),
    p(
        "output_path",
        "You data will be stored as .tsv file. Please enter the output path and file name for your pre-processed transcripts:",
        AnswerKind::Path,
    ),
];

pub const AUDIO_PROMPTS: [Prompt; 7] = [
    p("dataset", "Which dataset you are pre-processing? wls or db?:", AnswerKind::Dataset),
    p("input_path", "Where are the .mp3 files located?:", AnswerKind::Path),
    p("segment_output_path", "Where do you want to store the trimmed audio segments?", AnswerKind::Path),
    p("target_sample_rate_hz", "Enter sample rate:", AnswerKind::Integer),
    p("feature_method", "Feature extraction methods, selecting from FTT or MFCC or NONE:", AnswerKind::FeatureMethod),
    p("feature_order", "Enter number of FTT windows size or MFCC, 0 for NONE:", AnswerKind::Integer),
    p("scale_mfcc", "Scaling MFCC? y/n:", AnswerKind::YesNo),
];

pub const MSG_STAND_BY: &str = "Please stand by, your pre-processing script will be generated shortly...";
pub const MSG_TEXT_GENERATED: &str = "Your text pre-processing json file has been generated!";
pub const MSG_TEXT_RUNNING: &str = "Running text pre-processing script now...";
pub const MSG_AUDIO_GENERATED: &str = "Your audio pre-processing json file has been generated!";
pub const MSG_AUDIO_RUNNING: &str = "Running audio pre-processing script now...";
pub const MSG_CONVERT: &str = "Starting to convert .mp3 to .wav";
pub const MSG_RESAMPLE: &str = "Starting to resample audio to target sample rate...";
pub const MSG_FINISHED: &str = "Finished!";
pub const MSG_DONE: &str = "Your dataset is now pre-processed!";

#[derive(Debug, thiserror::Error)]
pub enum WizardError {
    #[error("invalid answer {answer:?} to {prompt_id}: expected {expected}")]
    InvalidAnswer { prompt_id: String, answer: String, expected: String },
    #[error("no answer for {prompt_id}")]
    MissingAnswer { prompt_id: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Ordered (prompt id, answer) pairs as actually accepted.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct WizardAnswerScript {
    pub entries: Vec<(String, String)>,
}

impl WizardAnswerScript {
    /// One answer per line, the answers-file format.
    pub fn to_answers_file(&self) -> String {
        self.entries.iter().map(|(_, a)| format!("{a}\n")).collect()
    }
}

pub trait AnswerSource {
    /// Next raw answer, or `None` when input is exhausted.
    fn next_answer(&mut self) -> io::Result<Option<String>>;
    /// Whether an invalid answer should be re-asked rather than fatal.
    fn reprompts(&self) -> bool;
}

/// Answers read from a file or string, one per line.
#[derive(Debug, Clone)]
pub struct ScriptedAnswers {
    lines: VecDeque<String>,
}

impl ScriptedAnswers {
    pub fn new(text: &str) -> Self {
        Self { lines: text.lines().map(|l| l.trim_end_matches('\r').to_string()).collect() }
    }

    pub fn from_answers<S: AsRef<str>>(answers: &[S]) -> Self {
        Self { lines: answers.iter().map(|a| a.as_ref().to_string()).collect() }
    }
}

impl AnswerSource for ScriptedAnswers {
    fn next_answer(&mut self) -> io::Result<Option<String>> {
        Ok(self.lines.pop_front())
    }

    fn reprompts(&self) -> bool {
        false
    }
}

/// Answers typed at a terminal.
pub struct InteractiveAnswers<R: BufRead> {
    input: R,
}

impl<R: BufRead> InteractiveAnswers<R> {
    pub fn new(input: R) -> Self {
        Self { input }
    }
}

impl<R: BufRead> AnswerSource for InteractiveAnswers<R> {
    fn next_answer(&mut self) -> io::Result<Option<String>> {
        let mut line = String::new();
        if self.input.read_line(&mut line)? == 0 {
            return Ok(None);
        }
        Ok(Some(line.trim_end_matches(['\n', '\r']).to_string()))
    }

    fn reprompts(&self) -> bool {
        true
    }
}

pub fn parse_yes_no(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "y" | "yes" => Some(true),
        "n" | "no" => Some(false),
        _ => None,
    }
}

struct Session<'a> {
    source: &'a mut dyn AnswerSource,
    out: &'a mut dyn Write,
    script: WizardAnswerScript,
}

impl Session<'_> {
    /// Asks until `parse` accepts an answer. `parse` returns the
    /// expectation text on rejection.
    fn ask<T>(&mut self, prompt: &Prompt, parse: impl Fn(&str) -> Result<T, String>) -> Result<T, WizardError> {
        loop {
            write!(self.out, "{} ", prompt.text)?;
            self.out.flush()?;
            let Some(raw) = self.source.next_answer()? else {
                writeln!(self.out)?;
                return Err(WizardError::MissingAnswer { prompt_id: prompt.id.into() });
            };
            if !self.source.reprompts() {
                writeln!(self.out, "{raw}")?;
            }
            match parse(raw.trim()) {
                Ok(v) => {
                    self.script.entries.push((prompt.id.into(), raw.trim().to_string()));
                    return Ok(v);
                }
                Err(expected) => {
                    if !self.source.reprompts() {
                        return Err(WizardError::InvalidAnswer {
                            prompt_id: prompt.id.into(),
                            answer: raw,
                            expected,
                        });
                    }
                    writeln!(self.out, "Please answer {expected}.")?;
                }
            }
        }
    }

    fn ask_kind(&mut self, prompt: &Prompt) -> Result<Answer, WizardError> {
        let kind = prompt.kind;
        self.ask(prompt, |s| parse_kind(kind, s).ok_or_else(|| kind.expected().to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Answer {
    Dataset(Dataset),
    Path(String),
    YesNo(bool),
    Integer(u64),
    Method(FeatureMethod),
}

fn parse_kind(kind: AnswerKind, s: &str) -> Option<Answer> {
    match kind {
        AnswerKind::Dataset => s.parse().ok().map(Answer::Dataset),
        AnswerKind::Path => (!s.is_empty()).then(|| Answer::Path(s.to_string())),
        AnswerKind::YesNo => parse_yes_no(s).map(Answer::YesNo),
        AnswerKind::Integer => s.parse().ok().map(Answer::Integer),
        AnswerKind::FeatureMethod => s.parse().ok().map(Answer::Method),
    }
}

macro_rules! take {
    ($answer:expr, $variant:ident) => {
        match $answer {
            Answer::$variant(v) => v,
            other => unreachable!("prompt kind mismatch: {other:?}"),
        }
    };
}

/// Asks the text prompts and builds the config.
pub fn wizard_text(
    source: &mut dyn AnswerSource,
    out: &mut dyn Write,
) -> Result<(TextPipelineConfig, WizardAnswerScript), WizardError> {
    let mut s = Session { source, out, script: WizardAnswerScript::default() };
    let dataset = take!(s.ask_kind(&TEXT_PROMPTS[0])?, Dataset);
    let input_path = take!(s.ask_kind(&TEXT_PROMPTS[1])?, Path);
    let mut toggles = [false; 14];
    for (slot, prompt) in toggles.iter_mut().zip(&TEXT_PROMPTS[2..16]) {
        *slot = take!(s.ask_kind(prompt)?, YesNo);
    }
    let output_path = take!(s.ask_kind(&TEXT_PROMPTS[16])?, Path);
    writeln!(s.out, "{MSG_STAND_BY}")?;
    let mut cfg = TextPipelineConfig::uniform(false);
    cfg.schema_version = TEXT_SCHEMA_VERSION;
    cfg.dataset = dataset;
    cfg.input_path = input_path;
    cfg.output_path = output_path;
    cfg.set_toggles(toggles);
    Ok((cfg, s.script))
}

fn order_check(method: FeatureMethod, n: u64) -> Result<usize, String> {
    let n = usize::try_from(n).map_err(|_| "a smaller integer".to_string())?;
    match method {
        FeatureMethod::Fft if n >= 2 && n.is_power_of_two() => Ok(n),
        FeatureMethod::Fft => Err("a power-of-two FFT window size of at least 2".into()),
        FeatureMethod::Mfcc if (1..=MAX_MFCC_COEFFS).contains(&n) => Ok(n),
        FeatureMethod::Mfcc => Err(format!("an MFCC count from 1 to {MAX_MFCC_COEFFS}")),
        FeatureMethod::None if n == 0 => Ok(0),
        FeatureMethod::None => Err("0 for NONE".into()),
    }
}

/// Asks the audio prompts and builds the config.
pub fn wizard_audio(
    source: &mut dyn AnswerSource,
    out: &mut dyn Write,
) -> Result<(AudioPipelineConfig, WizardAnswerScript), WizardError> {
    let mut s = Session { source, out, script: WizardAnswerScript::default() };
    let dataset = take!(s.ask_kind(&AUDIO_PROMPTS[0])?, Dataset);
    let input_path = take!(s.ask_kind(&AUDIO_PROMPTS[1])?, Path);
    let segment_output_path = take!(s.ask_kind(&AUDIO_PROMPTS[2])?, Path);
    let rate = s.ask(&AUDIO_PROMPTS[3], |a| {
        a.parse::<u32>().ok().filter(|r| *r > 0).ok_or_else(|| "a positive sample rate in Hz".to_string())
    })?;
    let method = take!(s.ask_kind(&AUDIO_PROMPTS[4])?, Method);
    let order = s.ask(&AUDIO_PROMPTS[5], |a| {
        let n: u64 = a.parse().map_err(|_| AnswerKind::Integer.expected().to_string())?;
        order_check(method, n)
    })?;
    let scale_mfcc = take!(s.ask_kind(&AUDIO_PROMPTS[6])?, YesNo);
    writeln!(s.out, "{MSG_STAND_BY}")?;
    let cfg = AudioPipelineConfig {
        schema_version: AUDIO_SCHEMA_VERSION,
        dataset,
        input_path,
        segment_output_path,
        target_sample_rate_hz: rate,
        feature_method: method,
        feature_order: order,
        scale_mfcc,
        decoder_command: None,
        mfcc: MfccParams::default(),
    };
    Ok((cfg, s.script))
}

/// Sidecar directory for a TSV written at `tsv_path`.
pub fn alignment_dir(tsv_path: &Path) -> PathBuf {
    tsv_path.parent().unwrap_or(Path::new("")).join("alignment")
}

/// Runs a freshly built text config over every transcript under its input path.
pub fn execute_text(cfg: &TextPipelineConfig, jobs: usize) -> Result<TextRun, PipelineError> {
    let index = CorpusIndex::scan(Path::new(&cfg.input_path))?;
    let (transcripts, _) = load_transcripts(&index, None, jobs)?;
    let tsv = PathBuf::from(&cfg.output_path);
    run_text(cfg, &transcripts, &tsv, &alignment_dir(&tsv))
}

/// Runs a freshly built audio config. Segment timing comes from the
/// transcripts under the audio input path, cleaned with `text_cfg`.
pub fn execute_audio(cfg: &AudioPipelineConfig, text_cfg: &TextPipelineConfig, jobs: usize) -> Result<AudioRun, PipelineError> {
    let index = CorpusIndex::scan(Path::new(&cfg.input_path))?;
    let (transcripts, _) = load_transcripts(&index, None, jobs)?;
    let corpus = process_corpus(text_cfg, &transcripts, PARTICIPANT)?;
    run_audio(cfg, &corpus, &index, &AudioLayout::under(Path::new(&cfg.segment_output_path)), jobs)
}
