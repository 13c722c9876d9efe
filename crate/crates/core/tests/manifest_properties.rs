use std::collections::BTreeMap;
use std::fs;

use proptest::prelude::*;

use talkprep::fixtures::{generate_fixture, FixtureSpec};
use talkprep::manifest::{canonical_json, diff_manifests, replay, ExperimentManifest, ReplayError, ReplayOptions};
use talkprep::text::TextPipelineConfig;

fn uid_list() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec("[0-9]{3}-[0-4]", 0..8)
}

fn manifest_strategy() -> impl Strategy<Value = ExperimentManifest> {
    (
        uid_list(),
        uid_list(),
        uid_list(),
        uid_list(),
        "[a-z /]{1,12}",
        prop::collection::btree_map("[A-Z]{2,4}", -1e6f64..1e6, 0..4),
        prop::option::of("[a-z]{1,8}\\.json"),
    )
        .prop_map(|(data, pos, train, test, method, evaluation, audio)| ExperimentManifest {
            pre_process: "text_process.json".into(),
            audio_process: audio,
            data_uids: data,
            positive_uids: pos,
            training_uids: train,
            test_uids: test,
            method,
            evaluation,
            labels: None,
        })
}

proptest! {
    #[test]
    fn canonical_is_fixed_point(m in manifest_strategy()) {
        let bytes = m.canonical_bytes();
        let again = ExperimentManifest::from_json(&bytes).unwrap();
        prop_assert_eq!(again.canonical_bytes(), bytes.clone());
        // Canonicalizing the generic JSON value agrees with the typed path.
        let v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        prop_assert_eq!(canonical_json(&v), bytes);
    }

    #[test]
    fn diff_empty_iff_canonical_equal(a in manifest_strategy(), b in manifest_strategy(), same in any::<bool>()) {
        let b = if same { a.clone() } else { b };
        let empty = diff_manifests(&a, &b).is_empty();
        prop_assert_eq!(empty, a.canonical_bytes() == b.canonical_bytes());
        prop_assert!(diff_manifests(&a, &a).is_empty());
    }

    #[test]
    fn pretty_printing_does_not_change_canonical_bytes(m in manifest_strategy()) {
        let pretty = serde_json::to_string_pretty(&m).unwrap();
        prop_assert_eq!(ExperimentManifest::from_json(pretty.as_bytes()).unwrap().canonical_bytes(), m.canonical_bytes());
    }
}

#[test]
fn replay_counts_match_fixture_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let mut spec = FixtureSpec::new(8, 21);
    spec.audio = false;
    let fx = generate_fixture(&spec, &corpus).unwrap();

    let mut cfg = TextPipelineConfig::uniform(true);
    cfg.output_path = "out/text.tsv".into();
    fs::write(dir.path().join("text_process.json"), cfg.to_json_pretty()).unwrap();
    let uids = fx.uids();
    let m = ExperimentManifest {
        pre_process: "text_process.json".into(),
        audio_process: None,
        data_uids: uids.clone(),
        positive_uids: uids[..3].to_vec(),
        training_uids: uids[..5].to_vec(),
        test_uids: uids[5..].to_vec(),
        method: "baseline".into(),
        evaluation: BTreeMap::from([("ACC".into(), 0.77), ("AUC".into(), 0.77)]),
        labels: None,
    };
    let opts = |out: &str| ReplayOptions { corpus_root: corpus.clone(), out_dir: dir.path().join(out), jobs: 2 };
    let a = replay(&m, dir.path(), &opts("a")).unwrap();
    assert_eq!(a.rows, fx.expected_rows_all_on);
    assert!(a.report.missing_uids.is_empty());
    assert!(dir.path().join("a/text.tsv").exists());
    assert_eq!(a.report.outputs.len(), 1 + uids.len());

    let b = replay(&m, dir.path(), &ReplayOptions { jobs: 1, ..opts("b") }).unwrap();
    assert_eq!(a.report, b.report);

    let mut identity = TextPipelineConfig::uniform(false);
    identity.output_path = "id.tsv".into();
    fs::write(dir.path().join("identity.json"), identity.to_json_pretty()).unwrap();
    let mut mi = m.clone();
    mi.pre_process = "identity.json".into();
    assert_eq!(replay(&mi, dir.path(), &opts("c")).unwrap().rows, fx.total_par_utterances);

    let mut missing = m.clone();
    missing.data_uids.push("999-9".into());
    let r = replay(&missing, dir.path(), &opts("d")).unwrap();
    assert_eq!(r.report.missing_uids, vec!["999-9".to_string()]);

    let mut broken = m.clone();
    broken.pre_process = "nope.json".into();
    assert!(matches!(replay(&broken, dir.path(), &opts("e")), Err(ReplayError::ConfigUnresolvable(_))));

    let mut overlap = m;
    overlap.test_uids.push(uids[0].clone());
    assert!(matches!(replay(&overlap, dir.path(), &opts("f")), Err(ReplayError::Invalid(_))));
}
