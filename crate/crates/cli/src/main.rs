use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use talkprep::cohort::{label_samples, load_metadata, CohortRule};
use talkprep::fixtures::{generate_fixture, AnnotationKind, FixtureSpec};
use talkprep::manifest::{diff_with_configs, replay, ExperimentManifest, ReplayError, ReplayOptions};
use talkprep::text::{Dataset, TextPipelineConfig};
use talkprep::util::write_atomic;
use talkprep::wizard::{self, AnswerSource, InteractiveAnswers, ScriptedAnswers};

#[derive(Parser)]
#[command(name = "talkprep", version, about = "Reproducible preprocessing for conversational speech corpora")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a text config by answering prompts, then optionally run it.
    WizardText(WizardTextArgs),
    /// Build an audio config by answering prompts, then optionally run it.
    WizardAudio(WizardAudioArgs),
    /// Replay a manifest: exit 0 when complete, 2 when uids are missing, 1 on error.
    Run(RunArgs),
    /// Check a manifest and list every violation.
    Validate(ValidateArgs),
    /// Compare two manifests and the configs they reference.
    Diff(DiffArgs),
    /// Print the canonical bytes of a manifest.
    Canonicalize(ManifestArg),
    /// Label samples from a metadata table with a cohort rule.
    Select(SelectArgs),
    /// Write a seeded synthetic corpus.
    Fixture(FixtureArgs),
}

#[derive(Args)]
struct WizardCommon {
    /// Answers file, one answer per line. Without it answers are read from the terminal.
    #[arg(long)]
    answers: Option<PathBuf>,
    /// Only write the config.
    #[arg(long)]
    no_run: bool,
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Args)]
struct WizardTextArgs {
    #[command(flatten)]
    common: WizardCommon,
    #[arg(long, default_value = "text_process.json")]
    config_out: PathBuf,
}

#[derive(Args)]
struct WizardAudioArgs {
    #[command(flatten)]
    common: WizardCommon,
    #[arg(long, default_value = "audio_process.json")]
    config_out: PathBuf,
    /// Text config used to clean transcripts before segmenting. Defaults to no cleaning.
    #[arg(long)]
    text_config: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    corpus_root: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Skip loading the referenced configs.
    #[arg(long)]
    no_configs: bool,
}

#[derive(Args)]
struct DiffArgs {
    a: PathBuf,
    b: PathBuf,
}

#[derive(Args)]
struct ManifestArg {
    #[arg(long)]
    manifest: PathBuf,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long)]
    metadata: PathBuf,
    #[arg(long)]
    rule: PathBuf,
    /// Output TSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FixtureArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    transcripts: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "db")]
    shape: Dataset,
    #[arg(long)]
    no_audio: bool,
}

fn manifest_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn answer_source(answers: &Option<PathBuf>) -> Result<Box<dyn AnswerSource>> {
    Ok(match answers {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading answers {}", path.display()))?;
            Box::new(ScriptedAnswers::new(&text))
        }
        None => Box::new(InteractiveAnswers::new(io::stdin().lock())),
    })
}

fn write_config(path: &Path, json: &str) -> Result<()> {
    write_atomic(path, json.as_bytes()).with_context(|| format!("writing {}", path.display()))
}

fn wizard_text(args: WizardTextArgs) -> Result<ExitCode> {
    let mut source = answer_source(&args.common.answers)?;
    let mut out = io::stdout().lock();
    let (cfg, _) = wizard::wizard_text(source.as_mut(), &mut out)?;
    write_config(&args.config_out, &cfg.to_json_pretty())?;
    writeln!(out, "{}", wizard::MSG_TEXT_GENERATED)?;
    if !args.common.no_run {
        writeln!(out, "{}", wizard::MSG_TEXT_RUNNING)?;
        let run = wizard::execute_text(&cfg, args.common.jobs)?;
        log::info!("{} rows written to {}", run.corpus.rows.len(), cfg.output_path);
        writeln!(out, "{}", wizard::MSG_DONE)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn wizard_audio(args: WizardAudioArgs) -> Result<ExitCode> {
    let mut source = answer_source(&args.common.answers)?;
    let mut out = io::stdout().lock();
    let (cfg, _) = wizard::wizard_audio(source.as_mut(), &mut out)?;
    write_config(&args.config_out, &cfg.to_json_pretty())?;
    writeln!(out, "{}", wizard::MSG_AUDIO_GENERATED)?;
    if !args.common.no_run {
        let text_cfg = match &args.text_config {
            Some(p) => TextPipelineConfig::from_json(&fs::read(p).with_context(|| format!("reading {}", p.display()))?)
                .with_context(|| format!("parsing {}", p.display()))?,
            None => TextPipelineConfig::uniform(false),
        };
        writeln!(out, "{}", wizard::MSG_AUDIO_RUNNING)?;
        writeln!(out, "{}", wizard::MSG_CONVERT)?;
        writeln!(out, "{}", wizard::MSG_RESAMPLE)?;
        let run = wizard::execute_audio(&cfg, &text_cfg, args.common.jobs)?;
        writeln!(out, "{}", wizard::MSG_FINISHED)?;
        for uid in &run.missing {
            log::warn!("{uid}: no audio file found");
        }
        log::info!("{} segments written to {}", run.segments, cfg.segment_output_path);
        writeln!(out, "{}", wizard::MSG_DONE)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn run(args: RunArgs) -> Result<ExitCode> {
    let manifest = ExperimentManifest::load(&args.manifest)?;
    let opts = ReplayOptions { corpus_root: args.corpus_root, out_dir: args.out, jobs: args.jobs };
    let outcome = match replay(&manifest, &manifest_dir(&args.manifest), &opts) {
        Ok(o) => o,
        Err(ReplayError::Invalid(report)) => bail!("invalid manifest\n{report}"),
        Err(e) => return Err(e.into()),
    };
    println!(
        "{} rows, {} segments, {} outputs written to {}",
        outcome.rows,
        outcome.segments,
        outcome.report.outputs.len(),
        opts.out_dir.display()
    );
    if outcome.report.missing_uids.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("missing uids: {}", outcome.report.missing_uids.join(", "));
        Ok(ExitCode::from(2))
    }
}

fn validate(args: ValidateArgs) -> Result<ExitCode> {
    let manifest = ExperimentManifest::load(&args.manifest)?;
    let dir = manifest_dir(&args.manifest);
    let report = manifest.validate((!args.no_configs).then_some(dir.as_path()));
    print!("{report}");
    Ok(if report.is_valid() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn diff(args: DiffArgs) -> Result<ExitCode> {
    let a = ExperimentManifest::load(&args.a)?;
    let b = ExperimentManifest::load(&args.b)?;
    let d = diff_with_configs(&a, &manifest_dir(&args.a), &b, &manifest_dir(&args.b));
    if d.is_empty() {
        println!("no differences");
    } else {
        println!("{}", serde_json::to_string_pretty(&d)?);
    }
    Ok(ExitCode::SUCCESS)
}

fn canonicalize(args: ManifestArg) -> Result<ExitCode> {
    let manifest = ExperimentManifest::load(&args.manifest)?;
    let mut out = io::stdout().lock();
    out.write_all(&manifest.canonical_bytes())?;
    writeln!(out)?;
    Ok(ExitCode::SUCCESS)
}

fn select(args: SelectArgs) -> Result<ExitCode> {
    let rule_bytes = fs::read(&args.rule).with_context(|| format!("reading {}", args.rule.display()))?;
    let rule: CohortRule = serde_json::from_slice(&rule_bytes).with_context(|| format!("parsing {}", args.rule.display()))?;
    let table = load_metadata(&args.metadata)?;
    if table.warnings > 0 {
        log::warn!("{} metadata cells could not be parsed and were treated as missing", table.warnings);
    }
    let labels = label_samples(&rule, &table.samples)?;
    let mut text = String::from("uid\tlabel\treason\n");
    for l in &labels {
        text.push_str(&format!("{}\t{}\t{}\n", l.uid, l.label, l.reason));
    }
    match &args.out {
        Some(path) => write_atomic(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))?,
        None => {
            let mut out = BufWriter::new(io::stdout().lock());
            out.write_all(text.as_bytes())?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn fixture(args: FixtureArgs) -> Result<ExitCode> {
    let mut spec = FixtureSpec::new(args.transcripts, args.seed);
    spec.dataset_shape = args.shape;
    spec.audio = !args.no_audio;
    spec.include_annotations = AnnotationKind::all();
    let m = generate_fixture(&spec, &args.out)?;
    println!("{} transcripts, {} files written to {}", m.transcripts.len(), m.files.len() + 1, args.out.display());
    Ok(ExitCode::SUCCESS)
}

/// The error chain, skipping causes already quoted by an outer message.
fn render_error(e: &anyhow::Error) -> String {
    let mut msg = e.to_string();
    for cause in e.chain().skip(1) {
        let c = cause.to_string();
        if !msg.contains(&c) {
            msg.push_str(": ");
            msg.push_str(&c);
        }
    }
    msg
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::WizardText(a) => wizard_text(a),
        Command::WizardAudio(a) => wizard_audio(a),
        Command::Run(a) => run(a),
        Command::Validate(a) => validate(a),
        Command::Diff(a) => diff(a),
        Command::Canonicalize(a) => canonicalize(a),
        Command::Select(a) => select(a),
        Command::Fixture(a) => fixture(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", render_error(&e));
            ExitCode::FAILURE
        }
    }
}
