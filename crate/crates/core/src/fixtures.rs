//! Seeded synthetic corpora: CHAT transcripts, tone-coded WAV audio and a
//! metadata table, plus a manifest of expected counts built during
//! generation rather than by running the pipeline.
//!
//! Utterance `k` of a transcript (counting every speaker) is rendered as a
//! pure tone of `300 + 50 k` Hz spanning exactly its timestamps. Gaps are
//! silent. Timestamps never overlap.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{encode_wav_pcm16_interleaved, ms_to_sample};
use crate::text::Dataset;
use crate::util::{portable_relative, sha256_hex, write_atomic};

pub const FIXTURE_MANIFEST: &str = "fixture_manifest.json";
pub const METADATA_FILE: &str = "metadata.tsv";
pub const TONE_BASE_HZ: f64 = 300.0;
pub const TONE_STEP_HZ: f64 = 50.0;
const TONE_AMPLITUDE: f64 = 0.5;
const TIMESTAMP_WRAPPER: char = '\u{15}';

pub fn tone_hz(utt_index: usize) -> f64 {
    TONE_BASE_HZ + TONE_STEP_HZ * utt_index as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationKind {
    Disfluency,
    Pause,
    Retrace,
    BracketCode,
    Noise,
    Parenthesized,
    Unintelligible,
    ClearThroat,
    Replacement,
}

impl AnnotationKind {
    pub const ALL: [AnnotationKind; 9] = [
        Self::Disfluency,
        Self::Pause,
        Self::Retrace,
        Self::BracketCode,
        Self::Noise,
        Self::Parenthesized,
        Self::Unintelligible,
        Self::ClearThroat,
        Self::Replacement,
    ];

    pub fn all() -> BTreeSet<AnnotationKind> {
        Self::ALL.into_iter().collect()
    }

    /// Kinds whose tokens vanish entirely under the all-on pipeline.
    fn vanishes(self) -> bool {
        matches!(self, Self::Disfluency | Self::Pause | Self::Noise | Self::Unintelligible | Self::ClearThroat)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureSpec {
    pub num_transcripts: usize,
    /// Inclusive bounds on utterances per transcript, all speakers.
    pub utterances_min: usize,
    pub utterances_max: usize,
    pub seed: u64,
    pub include_annotations: BTreeSet<AnnotationKind>,
    pub audio: bool,
    pub dataset_shape: Dataset,
}

impl FixtureSpec {
    pub fn new(num_transcripts: usize, seed: u64) -> Self {
        Self {
            num_transcripts,
            utterances_min: 6,
            utterances_max: 12,
            seed,
            include_annotations: AnnotationKind::all(),
            audio: true,
            dataset_shape: Dataset::Db,
        }
    }

    pub fn sample_rate_hz(&self) -> u32 {
        match self.dataset_shape {
            Dataset::Db => 16_000,
            Dataset::Wls => 44_100,
        }
    }

    pub fn channels(&self) -> usize {
        match self.dataset_shape {
            Dataset::Db => 1,
            Dataset::Wls => 2,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FixtureError {
    #[error("cannot write {path}: {source}")]
    OutputUnwritable { path: PathBuf, source: std::io::Error },
    #[error("invalid fixture spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureUtterance {
    pub index: usize,
    pub speaker: String,
    pub raw_text: String,
    pub start_ms: u64,
    pub end_ms: u64,
    pub tone_hz: f64,
    /// False when every token is an annotation that the all-on pipeline removes.
    pub survives_cleaning: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureTranscript {
    pub uid: String,
    pub utterances: Vec<FixtureUtterance>,
    pub annotation_counts: BTreeMap<AnnotationKind, usize>,
}

impl FixtureTranscript {
    pub fn par_utterances(&self) -> impl Iterator<Item = &FixtureUtterance> {
        self.utterances.iter().filter(|u| u.speaker == "PAR")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureFile {
    pub path: String,
    pub sha256: String,
}

/// The oracle file written next to the fixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureManifest {
    pub spec: FixtureSpec,
    pub sample_rate_hz: u32,
    pub channels: usize,
    pub files: Vec<FixtureFile>,
    pub transcripts: Vec<FixtureTranscript>,
    pub total_utterances: usize,
    pub total_par_utterances: usize,
    /// PAR rows left after the all-on pipeline (the identity pipeline keeps all).
    pub expected_rows_all_on: usize,
    pub annotation_counts: BTreeMap<AnnotationKind, usize>,
}

impl FixtureManifest {
    pub fn load(dir: &Path) -> std::io::Result<Self> {
        let bytes = std::fs::read(dir.join(FIXTURE_MANIFEST))?;
        serde_json::from_slice(&bytes).map_err(std::io::Error::other)
    }

    pub fn uids(&self) -> Vec<String> {
        self.transcripts.iter().map(|t| t.uid.clone()).collect()
    }

    pub fn transcript(&self, uid: &str) -> Option<&FixtureTranscript> {
        self.transcripts.iter().find(|t| t.uid == uid)
    }
}

const WORDS: &[&str] = &[
    "the", "boy", "girl", "mother", "cookie", "jar", "stool", "falling", "water", "sink", "dishes", "window",
    "curtains", "kitchen", "plate", "cup", "is", "was", "getting", "washing", "reaching", "overflowing", "and",
    "she's", "he's", "doesn't", "it", "there's", "a", "on", "in", "up", "outside", "garden", "drying", "little",
];
const DISFLUENCIES: &[&str] = &["&um", "&uh", "&+fr", "&+b", "&mm"];
const PAUSES: &[&str] = &["(.)", "(..)", "(...)"];
const RETRACES: &[&str] = &["[/]", "[//]", "[///]"];
const CODES: &[&str] = &["[* p:w]", "[+ exc]", "[* s:r]", "[+ gram]"];
const NOISES: &[&str] = &["&=laughs", "&=breath", "&=coughs", "&=sighs"];
const THROAT: &[&str] = &["&=clears:throat", "&=clears_throat", "[=! clears throat]"];
const TERMINATORS: &[&str] = &[".", ".", ".", "?", "!"];

fn pick<'a>(rng: &mut ChaCha8Rng, xs: &[&'a str]) -> &'a str {
    xs[rng.gen_range(0..xs.len())]
}

fn parenthesize(word: &str) -> String {
    let n = word.len();
    let last = word.chars().last().expect("non-empty word");
    format!("{}({last})", &word[..n - last.len_utf8()])
}

/// One utterance with the `forced` kinds inserted at least once and each
/// other enabled kind inserted with small probability.
fn build_text(
    rng: &mut ChaCha8Rng,
    enabled: &BTreeSet<AnnotationKind>,
    forced: &[AnnotationKind],
    counts: &mut BTreeMap<AnnotationKind, usize>,
) -> String {
    let n_words = rng.gen_range(2..=8);
    let mut tokens: Vec<String> = (0..n_words).map(|_| pick(rng, WORDS).to_string()).collect();
    let mut kinds: Vec<AnnotationKind> = forced.to_vec();
    for &k in enabled {
        if rng.gen_bool(0.25) {
            kinds.push(k);
        }
    }
    for kind in kinds {
        *counts.entry(kind).or_default() += 1;
        let word_at = rng.gen_range(0..tokens.len());
        let gap_at = rng.gen_range(0..=tokens.len());
        match kind {
            AnnotationKind::Disfluency => tokens.insert(gap_at, pick(rng, DISFLUENCIES).into()),
            AnnotationKind::Pause => tokens.insert(gap_at, pick(rng, PAUSES).into()),
            AnnotationKind::Noise => tokens.insert(gap_at, pick(rng, NOISES).into()),
            AnnotationKind::Unintelligible => tokens.insert(gap_at, if rng.gen_bool(0.8) { "xxx" } else { "xx" }.into()),
            AnnotationKind::ClearThroat => tokens.insert(gap_at, pick(rng, THROAT).into()),
            AnnotationKind::Retrace => tokens.insert(word_at + 1, pick(rng, RETRACES).into()),
            AnnotationKind::BracketCode => tokens.insert(word_at + 1, pick(rng, CODES).into()),
            AnnotationKind::Replacement => {
                let target = pick(rng, WORDS);
                let marker = if rng.gen_bool(0.8) { "[:" } else { "[::" };
                tokens.insert(word_at + 1, format!("{marker} {target}]"));
            }
            AnnotationKind::Parenthesized => {
                let candidates: Vec<usize> = (0..tokens.len())
                    .filter(|&i| tokens[i].len() >= 3 && tokens[i].chars().all(|c| c.is_ascii_lowercase()))
                    .collect();
                match candidates.choose(rng) {
                    Some(&i) => tokens[i] = parenthesize(&tokens[i]),
                    None => tokens.push("fallin(g)".into()),
                }
            }
        }
    }
    tokens.push(pick(rng, TERMINATORS).into());
    tokens.join(" ")
}

/// An utterance made only of tokens the all-on pipeline removes.
fn build_vanishing(rng: &mut ChaCha8Rng, vanishing: &[AnnotationKind], counts: &mut BTreeMap<AnnotationKind, usize>) -> String {
    let kind = vanishing[rng.gen_range(0..vanishing.len())];
    *counts.entry(kind).or_default() += 1;
    let token = match kind {
        AnnotationKind::Disfluency => pick(rng, DISFLUENCIES),
        AnnotationKind::Pause => pick(rng, PAUSES),
        AnnotationKind::Noise => pick(rng, NOISES),
        AnnotationKind::Unintelligible => "xxx",
        _ => pick(rng, THROAT),
    };
    format!("{token} .")
}

fn render_timestamp(rng: &mut ChaCha8Rng, start: u64, end: u64) -> String {
    if rng.gen_bool(0.5) {
        format!("{TIMESTAMP_WRAPPER}{start}_{end}{TIMESTAMP_WRAPPER}")
    } else {
        format!("{start}_{end}")
    }
}

fn uid_for(shape: Dataset, i: usize, visit: u32) -> String {
    match shape {
        Dataset::Db => format!("{:03}-{visit}", i + 1),
        Dataset::Wls => format!("{:07}-{visit}", 2_000_000 + 7 * i),
    }
}

struct Built {
    transcript: FixtureTranscript,
    cha: String,
}

fn build_transcript(rng: &mut ChaCha8Rng, spec: &FixtureSpec, i: usize) -> Built {
    let visit = rng.gen_range(0..=4);
    let uid = uid_for(spec.dataset_shape, i, visit);
    let n = rng.gen_range(spec.utterances_min..=spec.utterances_max);
    let mut speakers: Vec<&str> = (0..n).map(|_| if rng.gen_bool(0.65) { "PAR" } else { "INV" }).collect();
    speakers[0] = "INV";
    if n > 1 {
        speakers[1] = "PAR";
    }
    let par_slots: Vec<usize> = (0..n).filter(|&k| speakers[k] == "PAR").collect();
    let vanishing: Vec<AnnotationKind> = spec.include_annotations.iter().copied().filter(|k| k.vanishes()).collect();
    let mut is_vanishing = vec![false; n];
    if !vanishing.is_empty() {
        for &k in par_slots.iter().skip(1) {
            is_vanishing[k] = rng.gen_bool(0.1);
        }
    }
    // Each enabled kind lands in at least one surviving PAR utterance.
    let mut forced: Vec<Vec<AnnotationKind>> = vec![Vec::new(); n];
    let survivors: Vec<usize> = par_slots.iter().copied().filter(|&k| !is_vanishing[k]).collect();
    if !survivors.is_empty() {
        for &kind in &spec.include_annotations {
            forced[*survivors.choose(rng).expect("non-empty")].push(kind);
        }
    }

    let mut counts = BTreeMap::new();
    let mut utterances = Vec::with_capacity(n);
    let mut clock: u64 = rng.gen_range(0..500);
    for k in 0..n {
        let start = clock;
        let end = start + rng.gen_range(400..=1600);
        clock = end + rng.gen_range(0..=300);
        let raw_text = if is_vanishing[k] {
            build_vanishing(rng, &vanishing, &mut counts)
        } else if speakers[k] == "PAR" {
            build_text(rng, &spec.include_annotations, &forced[k], &mut counts)
        } else {
            build_text(rng, &BTreeSet::new(), &[], &mut counts)
        };
        utterances.push(FixtureUtterance {
            index: k,
            speaker: speakers[k].to_string(),
            raw_text,
            start_ms: start,
            end_ms: end,
            tone_hz: tone_hz(k),
            survives_cleaning: !is_vanishing[k],
        });
    }

    let mut cha = String::new();
    cha.push_str("@UTF8\n@Begin\n@Languages:\teng\n");
    cha.push_str("@Participants:\tPAR Participant, INV Investigator\n");
    let age = rng.gen_range(50..=85);
    let sex = if rng.gen_bool(0.5) { "male" } else { "female" };
    let corpus = match spec.dataset_shape {
        Dataset::Db => "Pitt",
        Dataset::Wls => "WLS",
    };
    let _ = writeln!(cha, "@ID:\teng|{corpus}|PAR|{age};|{sex}|ProbableAD||Participant|{}||", rng.gen_range(8..=20));
    let _ = writeln!(cha, "@ID:\teng|{corpus}|INV|||||Investigator|||");
    let _ = writeln!(cha, "@Media:\t{uid}, audio");
    for u in &utterances {
        let ts = render_timestamp(rng, u.start_ms, u.end_ms);
        let words: Vec<&str> = u.raw_text.split(' ').collect();
        // Long utterances sometimes wrap onto a continuation line.
        if words.len() > 6 && rng.gen_bool(0.3) {
            let cut = words.len() / 2;
            let _ = writeln!(cha, "*{}:\t{}", u.speaker, words[..cut].join(" "));
            let _ = writeln!(cha, "\t{} {ts}", words[cut..].join(" "));
        } else {
            let _ = writeln!(cha, "*{}:\t{} {ts}", u.speaker, u.raw_text);
        }
        if rng.gen_bool(0.2) {
            let _ = writeln!(cha, "%mor:\tdet|the n|boy .");
        }
    }
    cha.push_str("@End\n");
    Built { transcript: FixtureTranscript { uid, utterances, annotation_counts: counts }, cha }
}

fn render_audio(rng: &mut ChaCha8Rng, spec: &FixtureSpec, t: &FixtureTranscript) -> Vec<u8> {
    let rate = spec.sample_rate_hz();
    let end_ms = t.utterances.last().map_or(0, |u| u.end_ms) + 500;
    let len = ms_to_sample(end_ms, rate);
    let mut mono = vec![0.0; len];
    for u in &t.utterances {
        let (s, e) = (ms_to_sample(u.start_ms, rate), ms_to_sample(u.end_ms, rate).min(len));
        let phase = rng.gen_range(0.0..TAU);
        for (j, x) in mono[s..e].iter_mut().enumerate() {
            *x = TONE_AMPLITUDE * (TAU * u.tone_hz * j as f64 / f64::from(rate) + phase).sin();
        }
    }
    let channels: Vec<Vec<f64>> = (0..spec.channels())
        .map(|c| mono.iter().map(|x| x * (1.0 - 0.2 * c as f64)).collect())
        .collect();
    encode_wav_pcm16_interleaved(&channels, rate)
}

fn render_metadata(rng: &mut ChaCha8Rng, transcripts: &[FixtureTranscript]) -> String {
    const CODES: &[i64] = &[100, 100, 800, 800, 300, 200];
    let mut out = String::from("uid\tage\tmmse\tdx\tfluency\n");
    for t in transcripts {
        let age = rng.gen_range(50..=85);
        let mmse = if rng.gen_bool(0.05) { "NA".to_string() } else { rng.gen_range(10..=30).to_string() };
        let dx = CODES[rng.gen_range(0..CODES.len())];
        let fluency = if rng.gen_bool(0.05) { String::new() } else { rng.gen_range(5..=25).to_string() };
        let _ = writeln!(out, "{}\t{age}\t{mmse}\t{dx}\t{fluency}", t.uid);
    }
    out
}

/// Writes a fixture corpus under `out_dir`. The same `FixtureSpec` always yields the
/// same bytes.
pub fn generate_fixture(spec: &FixtureSpec, out_dir: &Path) -> Result<FixtureManifest, FixtureError> {
    if spec.utterances_min == 0 || spec.utterances_min > spec.utterances_max {
        return Err(FixtureError::InvalidSpec(format!(
            "utterance range {}..={} is empty or zero",
            spec.utterances_min, spec.utterances_max
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut files = Vec::new();
    let put = |path: PathBuf, bytes: &[u8], files: &mut Vec<FixtureFile>| {
        write_atomic(&path, bytes).map_err(|source| FixtureError::OutputUnwritable { path: path.clone(), source })?;
        files.push(FixtureFile { path: portable_relative(&path, out_dir), sha256: sha256_hex(bytes) });
        Ok::<_, FixtureError>(())
    };

    let mut transcripts = Vec::with_capacity(spec.num_transcripts);
    for i in 0..spec.num_transcripts {
        let built = build_transcript(&mut rng, spec, i);
        let uid = built.transcript.uid.clone();
        put(out_dir.join(format!("{uid}.cha")), built.cha.as_bytes(), &mut files)?;
        if spec.audio {
            let wav = render_audio(&mut rng, spec, &built.transcript);
            put(out_dir.join(format!("{uid}.wav")), &wav, &mut files)?;
        }
        transcripts.push(built.transcript);
    }
    put(out_dir.join(METADATA_FILE), render_metadata(&mut rng, &transcripts).as_bytes(), &mut files)?;
    files.sort_by(|a, b| a.path.cmp(&b.path));

    let mut annotation_counts = BTreeMap::new();
    for t in &transcripts {
        for (k, c) in &t.annotation_counts {
            *annotation_counts.entry(*k).or_default() += c;
        }
    }
    let manifest = FixtureManifest {
        spec: spec.clone(),
        sample_rate_hz: spec.sample_rate_hz(),
        channels: spec.channels(),
        total_utterances: transcripts.iter().map(|t| t.utterances.len()).sum(),
        total_par_utterances: transcripts.iter().map(|t| t.par_utterances().count()).sum(),
        expected_rows_all_on: transcripts.iter().map(|t| t.par_utterances().filter(|u| u.survives_cleaning).count()).sum(),
        annotation_counts,
        files,
        transcripts,
    };
    let mut json = serde_json::to_string_pretty(&manifest).expect("fixture manifest serializes");
    json.push('\n');
    let path = out_dir.join(FIXTURE_MANIFEST);
    write_atomic(&path, json.as_bytes()).map_err(|source| FixtureError::OutputUnwritable { path, source })?;
    Ok(manifest)
}

/// `n` seeded PAR-style utterances covering every annotation kind.
pub fn sample_utterances(seed: u64, n: usize) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let all = AnnotationKind::all();
    let vanishing: Vec<AnnotationKind> = all.iter().copied().filter(|k| k.vanishes()).collect();
    let mut counts = BTreeMap::new();
    (0..n)
        .map(|i| {
            let forced = [AnnotationKind::ALL[i % AnnotationKind::ALL.len()]];
            if rng.gen_bool(0.05) {
                build_vanishing(&mut rng, &vanishing, &mut counts)
            } else {
                build_text(&mut rng, &all, &forced, &mut counts)
            }
        })
        .collect()
}

/// The first lines of a Pitt picture-description transcript.
pub const SAMPLE_TRANSCRIPT: &str = "@PID:\t11312/t-00002420-1\n\
@Begin\n\
@Languages:\teng\n\
@Participants:\tPAR Participant, INV Investigator\n\
@ID:\teng|Pitt|PAR|57;|male|ProbableAD||Participant|18||\n\
@ID:\teng|Pitt|INV|||||Investigator|||\n\
@Media:\t001-0, audio\n\
@Comment:\tanother audio testing file overlaps in background\n\
*INV:\tthis is the picture . 0_2581\n\
*PAR:\tmhm . [+ exc] 2581_3426\n\
*INV:\tjust tell me everything that you see happening in that picture . 3426_6661\n\
*PAR:\t+< alright . [+ exc] 6000_6897\n\
*PAR:\tthere's &um a young boy that's getting a cookie jar . 6897_12218\n\
*PAR:\tand it [//] he's &uh in bad shape because &uh the thing is fallin(g) over . 12218_18718\n\
*PAR:\tand in the picture the mother is washin(g) dishes and doesn't see it . 18718_24822\n\
@End\n";
