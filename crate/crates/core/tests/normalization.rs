use proptest::prelude::*;

use talkprep::chat::parse_cha_str;
use talkprep::fixtures::{sample_utterances, SAMPLE_TRANSCRIPT};
use talkprep::text::{normalize_utterance, parse_tsv, process_corpus, render_tsv, TextPipelineConfig, PARTICIPANT};

const GOLDEN: &str = include_str!("golden/sample_par_clean.txt");

fn all_on_no_newline() -> TextPipelineConfig {
    let mut c = TextPipelineConfig::uniform(true);
    c.add_newline = false;
    c
}

#[test]
fn sample_transcript_matches_golden() {
    let t = parse_cha_str(SAMPLE_TRANSCRIPT, "001-0").unwrap();
    let cleaned: Vec<String> =
        t.utterances_of(PARTICIPANT).iter().map(|u| normalize_utterance(&u.raw_text, &all_on_no_newline())).collect();
    let golden: Vec<&str> = GOLDEN.lines().collect();
    assert_eq!(cleaned, golden);
}

#[test]
fn sample_transcript_rows_keep_timestamps() {
    let t = parse_cha_str(SAMPLE_TRANSCRIPT, "001-0").unwrap();
    let corpus = process_corpus(&TextPipelineConfig::uniform(true), &[t], PARTICIPANT).unwrap();
    assert_eq!(corpus.rows.len(), 5);
    assert_eq!(corpus.rows[0].text, "Mhm.\n");
    assert_eq!((corpus.rows[0].start_ms, corpus.rows[0].end_ms), (Some(2581), Some(3426)));
    // Newlines survive the TSV round trip.
    assert_eq!(parse_tsv(&render_tsv(&corpus.rows)).unwrap(), corpus.rows);
    assert_eq!(corpus.sidecars[0].trim_intervals, vec![[0, 2581], [3426, 6661]]);
}

#[test]
fn disfluency_only_transcript_has_no_rows() {
    let cha = "@Begin\n@Participants:\tPAR Participant\n*PAR:\t&um . 0_100\n*PAR:\t&um . 100_200\n@End\n";
    let t = parse_cha_str(cha, "x-0").unwrap();
    let corpus = process_corpus(&TextPipelineConfig::uniform(true), &[t], PARTICIPANT).unwrap();
    assert!(corpus.rows.is_empty());
    assert_eq!(corpus.sidecars.len(), 1);
}

#[test]
fn thousand_fixture_utterances() {
    let on = all_on_no_newline();
    let off = TextPipelineConfig::uniform(false);
    for u in sample_utterances(2024, 1000) {
        let once = normalize_utterance(&u, &on);
        assert_eq!(normalize_utterance(&once, &on), once, "not idempotent on {u:?}");
        assert_eq!(normalize_utterance(&u, &off), u);
    }
}

fn any_config() -> impl Strategy<Value = TextPipelineConfig> {
    proptest::array::uniform14(any::<bool>()).prop_map(|mut t| {
        // A trailing newline is not stable under re-cleaning by design.
        t[13] = false;
        let mut c = TextPipelineConfig::uniform(false);
        c.set_toggles(t);
        c
    })
}

proptest! {
    #[test]
    fn idempotent_under_any_toggle_subset(seed in any::<u64>(), cfg in any_config()) {
        for u in sample_utterances(seed, 20) {
            let once = normalize_utterance(&u, &cfg);
            prop_assert_eq!(normalize_utterance(&once, &cfg), once.clone(), "input {:?}", u);
        }
    }

    #[test]
    fn identity_pipeline_on_arbitrary_text(s in "\\PC*") {
        prop_assert_eq!(normalize_utterance(&s, &TextPipelineConfig::uniform(false)), s);
    }

    #[test]
    fn all_on_output_alphabet(seed in any::<u64>()) {
        for u in sample_utterances(seed, 20) {
            let out = normalize_utterance(&u, &all_on_no_newline());
            prop_assert!(out.chars().all(|c| c.is_alphanumeric() || c == '\'' || c == ' ' || c == '.'));
            prop_assert!(!out.contains("  "));
            prop_assert!(out.is_empty() || out.ends_with('.'));
        }
    }
}
