//! Re-running a manifest against a corpus.
//!
//! Layout under the output directory:
//! `<basename of output_path>` (TSV), `alignment/<uid>.json`,
//! `segments/<uid>_<idx>.wav`, `features/<uid>_<idx>.feat.tsv`,
//! `trimmed/<uid>.wav`, and `replay_report.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ExperimentManifest, ValidationReport, ViolationKind};
use crate::audio::AudioPipelineConfig;
use crate::pipeline::{load_transcripts, run_audio, run_text, AudioLayout, CorpusIndex, PipelineError};
use crate::text::TextPipelineConfig;
use crate::util::{portable_relative, sha256_file, write_atomic};

pub const REPORT_FILE: &str = "replay_report.json";
const DEFAULT_TSV: &str = "transcripts.tsv";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputRecord {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ReplayReport {
    /// Sorted by path.
    pub outputs: Vec<OutputRecord>,
    /// Sorted. Uids with no transcript, or no audio when audio is configured.
    pub missing_uids: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ReplayOptions {
    pub corpus_root: PathBuf,
    pub out_dir: PathBuf,
    /// Worker threads; 0 picks the machine default.
    pub jobs: usize,
}

#[derive(Debug, Clone)]
pub struct ReplayOutcome {
    pub report: ReplayReport,
    pub rows: usize,
    pub segments: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("config unresolvable: {0}")]
    ConfigUnresolvable(String),
    #[error("invalid manifest:\n{0}")]
    Invalid(ValidationReport),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReplayError + '_ {
    move |source| ReplayError::Io { path: path.to_path_buf(), source }
}

fn load_text_config(path: &Path) -> Result<TextPipelineConfig, ReplayError> {
    let bytes = fs::read(path).map_err(|e| ReplayError::ConfigUnresolvable(format!("{}: {e}", path.display())))?;
    TextPipelineConfig::from_json(&bytes).map_err(|e| ReplayError::ConfigUnresolvable(format!("{}: {e}", path.display())))
}

fn load_audio_config(path: &Path) -> Result<AudioPipelineConfig, ReplayError> {
    let bytes = fs::read(path).map_err(|e| ReplayError::ConfigUnresolvable(format!("{}: {e}", path.display())))?;
    AudioPipelineConfig::from_json(&bytes).map_err(|e| ReplayError::ConfigUnresolvable(format!("{}: {e}", path.display())))
}

/// Regenerates every output of `manifest` from `corpus_root` into `out_dir`
/// and writes `replay_report.json` there. Config paths resolve against
/// `manifest_dir`.
pub fn replay(manifest: &ExperimentManifest, manifest_dir: &Path, opts: &ReplayOptions) -> Result<ReplayOutcome, ReplayError> {
    let report = manifest.validate(Some(manifest_dir));
    if let Some(v) = report
        .violations
        .iter()
        .find(|v| matches!(v.kind, ViolationKind::ConfigUnresolvable | ViolationKind::ConfigInvalid))
    {
        return Err(ReplayError::ConfigUnresolvable(v.message.clone()));
    }
    if !report.is_valid() {
        return Err(ReplayError::Invalid(report));
    }
    let text_cfg = load_text_config(&ExperimentManifest::resolve(manifest_dir, &manifest.pre_process))?;
    let audio_cfg = manifest
        .audio_process
        .as_ref()
        .map(|rel| load_audio_config(&ExperimentManifest::resolve(manifest_dir, rel)))
        .transpose()?;

    let index = CorpusIndex::scan(&opts.corpus_root)?;
    let (transcripts, mut missing) = load_transcripts(&index, Some(&manifest.data_uids), opts.jobs)?;

    let out = &opts.out_dir;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let tsv_name = Path::new(&text_cfg.output_path)
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .filter(|n| !n.is_empty())
        .unwrap_or_else(|| DEFAULT_TSV.to_string());
    let text = run_text(&text_cfg, &transcripts, &out.join(tsv_name), &out.join("alignment"))?;
    let mut written = text.written.clone();
    let mut segments = 0;
    if let Some(cfg) = &audio_cfg {
        let layout = AudioLayout { segments: out.join("segments"), features: out.join("features"), trimmed: out.join("trimmed") };
        let audio = run_audio(cfg, &text.corpus, &index, &layout, opts.jobs)?;
        written.extend(audio.written);
        missing.extend(audio.missing);
        segments = audio.segments;
    }

    let mut outputs = written
        .iter()
        .map(|p| {
            Ok(OutputRecord { path: portable_relative(p, out), sha256: sha256_file(p).map_err(io_err(p))? })
        })
        .collect::<Result<Vec<_>, ReplayError>>()?;
    outputs.sort_by(|a, b| a.path.cmp(&b.path));
    missing.sort();
    missing.dedup();
    let report = ReplayReport { outputs, missing_uids: missing };
    let report_path = out.join(REPORT_FILE);
    let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
    json.push('\n');
    write_atomic(&report_path, json.as_bytes()).map_err(io_err(&report_path))?;
    Ok(ReplayOutcome { report, rows: text.corpus.rows.len(), segments })
}
