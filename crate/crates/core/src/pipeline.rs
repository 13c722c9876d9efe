//! Corpus discovery and the text and audio runs shared by the wizards and
//! manifest replay. Every output is a pure function of its inputs and
//! config; worker count never changes the bytes written.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use walkdir::WalkDir;

use crate::audio::{
    decode_external, encode_wav_pcm16, read_wav, render_trimmed, resample, segment_by_transcript, AudioBuffer,
    AudioError, AudioPipelineConfig, FeatureMethod, SegmentTally,
};
use crate::chat::{read_cha_file, ChatError, ChatTranscript};
use crate::features::{fft_features, mfcc_with, render_feature_file, FeatureError};
use crate::text::{process_corpus, write_corpus, ProcessedCorpus, TextError, TextPipelineConfig, PARTICIPANT};
use crate::util::write_atomic;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Chat { path: PathBuf, source: ChatError },
    #[error(transparent)]
    Text(#[from] TextError),
    #[error("{uid}: {source}")]
    Audio { uid: String, source: AudioError },
    #[error("{uid}: {source}")]
    Feature { uid: String, source: FeatureError },
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot scan corpus: {0}")]
    Walk(#[from] walkdir::Error),
    #[error("uid {uid} appears twice: {first} and {second}")]
    DuplicateUid { uid: String, first: PathBuf, second: PathBuf },
    #[error("worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

/// Transcript and audio files under a corpus root, keyed by file stem.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CorpusIndex {
    pub transcripts: BTreeMap<String, PathBuf>,
    pub audio: BTreeMap<String, PathBuf>,
}

fn extension(path: &Path) -> Option<String> {
    path.extension().map(|e| e.to_string_lossy().to_ascii_lowercase())
}

impl CorpusIndex {
    /// Walks `root` recursively. `.cha` files are transcripts; `.wav` and
    /// `.mp3` files are audio, with WAV preferred when both exist.
    pub fn scan(root: &Path) -> Result<Self, PipelineError> {
        let mut index = Self::default();
        for entry in WalkDir::new(root).sort_by_file_name() {
            let entry = entry?;
            if !entry.file_type().is_file() {
                continue;
            }
            let path = entry.path();
            let Some(stem) = path.file_stem().map(|s| s.to_string_lossy().into_owned()) else { continue };
            let map = match extension(path).as_deref() {
                Some("cha") => &mut index.transcripts,
                Some("wav" | "mp3") => &mut index.audio,
                _ => continue,
            };
            match map.get(&stem) {
                None => {
                    map.insert(stem, path.to_path_buf());
                }
                Some(first) if extension(first) != extension(path) => {
                    if extension(path).as_deref() == Some("wav") {
                        map.insert(stem, path.to_path_buf());
                    }
                }
                Some(first) => {
                    return Err(PipelineError::DuplicateUid { uid: stem, first: first.clone(), second: path.to_path_buf() })
                }
            }
        }
        Ok(index)
    }
}

pub fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T, PipelineError> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
    Ok(pool.install(f))
}

/// Parses the transcripts for `uids` (all indexed transcripts when `None`).
/// Returns them in uid order with the uids that had no transcript.
pub fn load_transcripts(
    index: &CorpusIndex,
    uids: Option<&[String]>,
    jobs: usize,
) -> Result<(Vec<ChatTranscript>, Vec<String>), PipelineError> {
    let wanted: Vec<String> = match uids {
        Some(u) => u.to_vec(),
        None => index.transcripts.keys().cloned().collect(),
    };
    let (present, mut missing): (Vec<String>, Vec<String>) =
        wanted.into_iter().partition(|u| index.transcripts.contains_key(u));
    let mut present = present;
    present.sort();
    present.dedup();
    missing.sort();
    missing.dedup();
    let parsed = with_pool(jobs, || {
        present
            .par_iter()
            .map(|uid| {
                let path = &index.transcripts[uid];
                read_cha_file(path).map_err(|source| PipelineError::Chat { path: path.clone(), source })
            })
            .collect::<Result<Vec<_>, _>>()
    })??;
    Ok((parsed, missing))
}

#[derive(Debug, Clone)]
pub struct TextRun {
    pub corpus: ProcessedCorpus,
    pub written: Vec<PathBuf>,
}

/// Normalizes participant speech and writes the TSV plus alignment sidecars.
pub fn run_text(
    cfg: &TextPipelineConfig,
    transcripts: &[ChatTranscript],
    tsv_path: &Path,
    sidecar_dir: &Path,
) -> Result<TextRun, PipelineError> {
    let corpus = process_corpus(cfg, transcripts, PARTICIPANT)?;
    let written = write_corpus(&corpus, tsv_path, sidecar_dir)?;
    Ok(TextRun { corpus, written })
}

/// Output directories of an audio run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AudioLayout {
    pub segments: PathBuf,
    pub features: PathBuf,
    pub trimmed: PathBuf,
}

impl AudioLayout {
    pub fn under(root: &Path) -> Self {
        Self { segments: root.to_path_buf(), features: root.join("features"), trimmed: root.join("trimmed") }
    }
}

#[derive(Debug, Clone, Default)]
pub struct AudioRun {
    pub written: Vec<PathBuf>,
    pub missing: Vec<String>,
    pub tally: SegmentTally,
    pub segments: usize,
}

pub fn load_audio(cfg: &AudioPipelineConfig, uid: &str, path: &Path) -> Result<AudioBuffer, PipelineError> {
    let wrap = |source| PipelineError::Audio { uid: uid.to_string(), source };
    let is_wav = extension(path).as_deref() == Some("wav");
    match (&cfg.decoder_command, is_wav) {
        (Some(cmd), false) => {
            let scratch = tempfile::tempdir().map_err(|e| wrap(AudioError::Io(e)))?;
            decode_external(cmd, path, scratch.path()).map_err(wrap)
        }
        _ => read_wav(path).map_err(wrap),
    }
}

fn write(path: PathBuf, bytes: &[u8]) -> Result<PathBuf, PipelineError> {
    write_atomic(&path, bytes).map_err(|source| PipelineError::Io { path: path.clone(), source })?;
    Ok(path)
}

fn process_one(
    cfg: &AudioPipelineConfig,
    corpus: &ProcessedCorpus,
    uid: &str,
    path: &Path,
    layout: &AudioLayout,
) -> Result<(Vec<PathBuf>, SegmentTally, usize), PipelineError> {
    let decoded = load_audio(cfg, uid, path)?;
    let buf = resample(&decoded, cfg.target_sample_rate_hz);
    let rows: Vec<_> = corpus.rows.iter().filter(|r| r.uid == uid).cloned().collect();
    let (segments, tally) = segment_by_transcript(&buf, &rows);
    let mut written = Vec::new();
    for seg in &segments {
        let stem = seg.file_stem();
        written.push(write(layout.segments.join(format!("{stem}.wav")), &encode_wav_pcm16(&seg.audio))?);
        let feats = match cfg.feature_method {
            FeatureMethod::None => None,
            FeatureMethod::Fft => Some(fft_features(&seg.audio, cfg.feature_order)),
            FeatureMethod::Mfcc => Some(mfcc_with(&seg.audio, cfg.feature_order, cfg.scale_mfcc, &cfg.mfcc)),
        };
        if let Some(feats) = feats {
            let m = feats.map_err(|source| PipelineError::Feature { uid: uid.to_string(), source })?;
            written.push(write(layout.features.join(format!("{stem}.feat.tsv")), render_feature_file(&m).as_bytes())?);
        }
    }
    if let Some(sidecar) = corpus.sidecars.iter().find(|s| s.uid == uid) {
        let trimmed = render_trimmed(&buf, &sidecar.intervals());
        written.push(write(layout.trimmed.join(format!("{uid}.wav")), &encode_wav_pcm16(&trimmed))?);
    }
    Ok((written, tally, segments.len()))
}

/// Decodes, resamples, segments and featurizes the audio of every
/// transcript in `corpus`. Uids without audio are reported, not fatal.
pub fn run_audio(
    cfg: &AudioPipelineConfig,
    corpus: &ProcessedCorpus,
    index: &CorpusIndex,
    layout: &AudioLayout,
    jobs: usize,
) -> Result<AudioRun, PipelineError> {
    let uids: Vec<&str> = corpus.sidecars.iter().map(|s| s.uid.as_str()).collect();
    let mut run = AudioRun::default();
    let mut work = Vec::new();
    for uid in uids {
        match index.audio.get(uid) {
            Some(path) => work.push((uid, path)),
            None => run.missing.push(uid.to_string()),
        }
    }
    let results = with_pool(jobs, || {
        work.par_iter()
            .map(|(uid, path)| process_one(cfg, corpus, uid, path, layout))
            .collect::<Result<Vec<_>, _>>()
    })??;
    for (written, tally, count) in results {
        run.written.extend(written);
        run.tally.skipped_untimed += tally.skipped_untimed;
        run.tally.clipped += tally.clipped;
        run.segments += count;
    }
    run.written.sort();
    run.missing.sort();
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    const CHA: &str = "@UTF8\n@Begin\n@Participants:\tPAR Participant, INV Investigator\n\
*INV:\tlook . 0_1000\n*PAR:\tthe boy &uh fell . 1000_2000\n*PAR:\tokay . 2500_3000\n@End\n";

    fn corpus(dir: &Path) {
        fs::create_dir_all(dir.join("sub")).unwrap();
        fs::write(dir.join("sub/001-0.cha"), CHA).unwrap();
        let tone: Vec<f64> = (0..48000).map(|i| (i as f64 * 0.1).sin() * 0.3).collect();
        fs::write(dir.join("001-0.wav"), encode_wav_pcm16(&AudioBuffer::new(tone, 16000))).unwrap();
        fs::write(dir.join("notes.txt"), "ignored").unwrap();
    }

    #[test]
    fn scan_and_run() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("corpus");
        corpus(&root);
        let index = CorpusIndex::scan(&root).unwrap();
        assert_eq!(index.transcripts.len(), 1);
        assert_eq!(index.audio.len(), 1);

        let (ts, missing) = load_transcripts(&index, Some(&["001-0".into(), "404-0".into()]), 2).unwrap();
        assert_eq!(ts.len(), 1);
        assert_eq!(missing, vec!["404-0".to_string()]);

        let out = dir.path().join("out");
        let text = run_text(&TextPipelineConfig::uniform(false), &ts, &out.join("t.tsv"), &out.join("alignment")).unwrap();
        assert_eq!(text.corpus.rows.len(), 2);
        assert_eq!(text.written.len(), 2);

        let cfg: AudioPipelineConfig = serde_json::from_str(
            r#"{"dataset":"db","input_path":"in","segment_output_path":"seg","target_sample_rate_hz":8000,
               "feature_method":"MFCC","feature_order":13,"scale_mfcc":false}"#,
        )
        .unwrap();
        let layout = AudioLayout::under(&out.join("seg"));
        let audio = run_audio(&cfg, &text.corpus, &index, &layout, 1).unwrap();
        assert_eq!(audio.segments, 2);
        // 2 segments, 2 feature files, 1 trimmed render.
        assert_eq!(audio.written.len(), 5);
        let seg = read_wav(&layout.segments.join("001-0_1.wav")).unwrap();
        assert_eq!(seg.sample_rate_hz, 8000);
        assert_eq!(seg.len(), 8000);
        let trimmed = read_wav(&layout.trimmed.join("001-0.wav")).unwrap();
        assert_eq!(trimmed.len(), 24000 - 8000);
    }

    #[test]
    fn duplicate_stems_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("a")).unwrap();
        fs::write(dir.path().join("x.cha"), CHA).unwrap();
        fs::write(dir.path().join("a/x.cha"), CHA).unwrap();
        assert!(matches!(CorpusIndex::scan(dir.path()), Err(PipelineError::DuplicateUid { .. })));
    }
}
