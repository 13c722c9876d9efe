//! Experiment manifests: the record of which samples, labels, splits and
//! preprocessing configs an experiment used.
//!
//! Canonical form is compact JSON with object keys sorted by code point,
//! arrays in their stored order, strings escaped as by `serde_json`, and
//! numbers in the shortest form that round-trips an `f64`. Two manifests
//! are the same experiment exactly when their canonical bytes are equal.

mod replay;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::audio::AudioPipelineConfig;
use crate::cohort::Label;
use crate::text::TextPipelineConfig;

pub use replay::{replay, OutputRecord, ReplayError, ReplayOptions, ReplayOutcome, ReplayReport, REPORT_FILE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentManifest {
    /// Text config path, relative to the manifest's directory.
    pub pre_process: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_process: Option<String>,
    pub data_uids: Vec<String>,
    pub positive_uids: Vec<String>,
    pub training_uids: Vec<String>,
    pub test_uids: Vec<String>,
    pub method: String,
    /// Reported metrics. Recorded and compared, never recomputed.
    pub evaluation: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<BTreeMap<String, Label>>,
}

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("cannot read manifest {path}: {source}")]
    Unreadable { path: PathBuf, source: std::io::Error },
    #[error("manifest schema error: {0}")]
    Schema(#[from] serde_json::Error),
}

impl ExperimentManifest {
    pub fn from_json(bytes: &[u8]) -> Result<Self, ManifestError> {
        Ok(serde_json::from_slice(bytes)?)
    }

    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let bytes = fs::read(path).map_err(|source| ManifestError::Unreadable { path: path.to_path_buf(), source })?;
        Self::from_json(&bytes)
    }

    pub fn lists(&self) -> [(&'static str, &[String]); 4] {
        [
            ("data_uids", &self.data_uids),
            ("positive_uids", &self.positive_uids),
            ("training_uids", &self.training_uids),
            ("test_uids", &self.test_uids),
        ]
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        canonical_json(&serde_json::to_value(self).expect("manifest serializes"))
    }

    pub fn resolve(base_dir: &Path, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base_dir.join(p)
        }
    }

    /// Checks every invariant and reports all violations. When `config_dir`
    /// is given the referenced configs are loaded and schema-checked too.
    pub fn validate(&self, config_dir: Option<&Path>) -> ValidationReport {
        let mut report = ValidationReport::default();
        for (name, list) in self.lists() {
            let mut seen = BTreeSet::new();
            for uid in list {
                if !seen.insert(uid) {
                    report.push(ViolationKind::DuplicateUid, format!("duplicate uid {uid} in {name}"));
                }
            }
        }
        let data: BTreeSet<&String> = self.data_uids.iter().collect();
        let subsets = [
            (&self.positive_uids, ViolationKind::PositiveNotInData, "positive"),
            (&self.training_uids, ViolationKind::TrainingNotInData, "training"),
            (&self.test_uids, ViolationKind::TestNotInData, "test"),
        ];
        for (list, kind, label) in subsets {
            for uid in list.iter().filter(|u| !data.contains(u)) {
                report.push(kind, format!("{label} \u{2284} data: {uid} is not in data_uids"));
            }
        }
        let test: BTreeSet<&String> = self.test_uids.iter().collect();
        for uid in self.training_uids.iter().filter(|u| test.contains(u)) {
            report.push(ViolationKind::SplitOverlap, format!("split overlap: {uid} is in training_uids and test_uids"));
        }
        for (metric, v) in &self.evaluation {
            if !v.is_finite() {
                report.push(ViolationKind::NonFiniteMetric, format!("evaluation metric {metric} is not finite"));
            }
        }
        if let Some(labels) = &self.labels {
            let positives: BTreeSet<&String> = self.positive_uids.iter().collect();
            for (uid, label) in labels {
                if !data.contains(uid) {
                    report.push(ViolationKind::LabelsDisagree, format!("labels: {uid} is not in data_uids"));
                }
                if (*label == Label::Positive) != positives.contains(uid) {
                    report.push(
                        ViolationKind::LabelsDisagree,
                        format!("labels: {uid} is labeled {label} but positive_uids says otherwise"),
                    );
                }
            }
            for uid in positives.iter().filter(|u| !labels.contains_key(**u)) {
                report.push(ViolationKind::LabelsDisagree, format!("labels: positive uid {uid} has no label"));
            }
        }
        if self.test_uids.is_empty() {
            report.notes.push("test_uids is empty: train-only manifest".to_string());
        }
        if let Some(dir) = config_dir {
            let path = Self::resolve(dir, &self.pre_process);
            match fs::read(&path) {
                Err(e) => report.push(ViolationKind::ConfigUnresolvable, format!("pre_process {}: {e}", path.display())),
                Ok(bytes) => {
                    if let Err(e) = TextPipelineConfig::from_json(&bytes) {
                        report.push(ViolationKind::ConfigInvalid, format!("pre_process {}: {e}", path.display()));
                    }
                }
            }
            if let Some(rel) = &self.audio_process {
                let path = Self::resolve(dir, rel);
                match fs::read(&path) {
                    Err(e) => {
                        report.push(ViolationKind::ConfigUnresolvable, format!("audio_process {}: {e}", path.display()))
                    }
                    Ok(bytes) => {
                        if let Err(e) = AudioPipelineConfig::from_json(&bytes) {
                            report.push(ViolationKind::ConfigInvalid, format!("audio_process {}: {e}", path.display()));
                        }
                    }
                }
            }
        }
        report
    }
}

/// Compact JSON with sorted object keys.
pub fn canonical_json(v: &Value) -> Vec<u8> {
    let mut out = Vec::new();
    write_canonical(v, &mut out);
    out
}

fn write_canonical(v: &Value, out: &mut Vec<u8>) {
    match v {
        Value::Object(map) => {
            let mut entries: Vec<(&String, &Value)> = map.iter().collect();
            entries.sort_by(|a, b| a.0.cmp(b.0));
            out.push(b'{');
            for (i, (k, child)) in entries.into_iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                out.extend(serde_json::to_vec(k).expect("string serializes"));
                out.push(b':');
                write_canonical(child, out);
            }
            out.push(b'}');
        }
        Value::Array(items) => {
            out.push(b'[');
            for (i, child) in items.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_canonical(child, out);
            }
            out.push(b']');
        }
        other => out.extend(serde_json::to_vec(other).expect("scalar serializes")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    DuplicateUid,
    PositiveNotInData,
    TrainingNotInData,
    TestNotInData,
    SplitOverlap,
    NonFiniteMetric,
    LabelsDisagree,
    ConfigUnresolvable,
    ConfigInvalid,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub notes: Vec<String>,
}

impl ValidationReport {
    fn push(&mut self, kind: ViolationKind, message: String) {
        self.violations.push(Violation { kind, message });
    }

    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_valid() {
            writeln!(f, "valid")?;
        }
        for v in &self.violations {
            writeln!(f, "violation: {}", v.message)?;
        }
        for n in &self.notes {
            writeln!(f, "note: {n}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct ListDiff {
    pub added: Vec<String>,
    pub removed: Vec<String>,
    /// Same members, different order.
    pub reordered: bool,
}

impl ListDiff {
    fn between(a: &[String], b: &[String]) -> Self {
        let sa: BTreeSet<&String> = a.iter().collect();
        let sb: BTreeSet<&String> = b.iter().collect();
        let added: Vec<String> = b.iter().filter(|u| !sa.contains(u)).cloned().collect();
        let removed: Vec<String> = a.iter().filter(|u| !sb.contains(u)).cloned().collect();
        let reordered = added.is_empty() && removed.is_empty() && a != b;
        Self { added, removed, reordered }
    }

    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty() && !self.reordered
    }
}

/// Before/after values are rendered as canonical JSON; `None` means absent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScalarChange {
    pub field: String,
    pub before: Option<String>,
    pub after: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfigKeyChange {
    pub config: String,
    pub key: String,
    pub before: Option<String>,
    pub after: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct ManifestDiff {
    pub lists: BTreeMap<String, ListDiff>,
    pub scalars: Vec<ScalarChange>,
    pub configs: Vec<ConfigKeyChange>,
}

impl ManifestDiff {
    pub fn is_empty(&self) -> bool {
        self.lists.is_empty() && self.scalars.is_empty() && self.configs.is_empty()
    }
}

fn render<T: Serialize>(v: &T) -> String {
    String::from_utf8(canonical_json(&serde_json::to_value(v).expect("value serializes"))).expect("utf-8")
}

fn diff_maps(prefix: &str, a: &BTreeMap<String, String>, b: &BTreeMap<String, String>, out: &mut Vec<ScalarChange>) {
    let keys: BTreeSet<&String> = a.keys().chain(b.keys()).collect();
    for k in keys {
        let (x, y) = (a.get(k), b.get(k));
        if x != y {
            out.push(ScalarChange { field: format!("{prefix}{k}"), before: x.cloned(), after: y.cloned() });
        }
    }
}

pub fn diff_manifests(a: &ExperimentManifest, b: &ExperimentManifest) -> ManifestDiff {
    let mut diff = ManifestDiff::default();
    for ((name, la), (_, lb)) in a.lists().into_iter().zip(b.lists()) {
        let d = ListDiff::between(la, lb);
        if !d.is_empty() {
            diff.lists.insert(name.to_string(), d);
        }
    }
    let scalar = |field: &str, x: Option<String>, y: Option<String>, out: &mut Vec<ScalarChange>| {
        if x != y {
            out.push(ScalarChange { field: field.to_string(), before: x, after: y });
        }
    };
    scalar("pre_process", Some(render(&a.pre_process)), Some(render(&b.pre_process)), &mut diff.scalars);
    scalar("audio_process", a.audio_process.as_ref().map(render), b.audio_process.as_ref().map(render), &mut diff.scalars);
    scalar("method", Some(render(&a.method)), Some(render(&b.method)), &mut diff.scalars);
    let eval = |m: &ExperimentManifest| m.evaluation.iter().map(|(k, v)| (k.clone(), render(v))).collect();
    diff_maps("evaluation.", &eval(a), &eval(b), &mut diff.scalars);
    match (&a.labels, &b.labels) {
        (None, None) => {}
        (x, y) => {
            if x.is_some() != y.is_some() {
                scalar("labels", x.as_ref().map(|_| "present".into()), y.as_ref().map(|_| "present".into()), &mut diff.scalars);
            }
            let labels = |l: &Option<BTreeMap<String, Label>>| {
                l.iter().flatten().map(|(k, v)| (k.clone(), render(v))).collect::<BTreeMap<_, _>>()
            };
            diff_maps("labels.", &labels(x), &labels(y), &mut diff.scalars);
        }
    }
    diff
}

/// Flattens a JSON object into dotted keys with canonical leaf renderings.
fn flatten(prefix: &str, v: &Value, out: &mut BTreeMap<String, String>) {
    match v {
        Value::Object(map) if !map.is_empty() => {
            for (k, child) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        leaf => {
            out.insert(prefix.to_string(), String::from_utf8(canonical_json(leaf)).expect("utf-8"));
        }
    }
}

fn load_config_keys(path: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    match fs::read(path).ok().and_then(|b| serde_json::from_slice::<Value>(&b).ok()) {
        Some(v) => flatten("", &v, &mut out),
        None => {
            out.insert("<unreadable>".to_string(), path.display().to_string());
        }
    }
    out
}

/// Like [`diff_manifests`], and also compares the referenced configs key by key.
pub fn diff_with_configs(a: &ExperimentManifest, a_dir: &Path, b: &ExperimentManifest, b_dir: &Path) -> ManifestDiff {
    let mut diff = diff_manifests(a, b);
    let pairs = [
        ("pre_process", Some(&a.pre_process), Some(&b.pre_process)),
        ("audio_process", a.audio_process.as_ref(), b.audio_process.as_ref()),
    ];
    for (config, pa, pb) in pairs {
        let keys = |p: Option<&String>, dir: &Path| {
            p.map(|rel| load_config_keys(&ExperimentManifest::resolve(dir, rel))).unwrap_or_default()
        };
        let (ka, kb) = (keys(pa, a_dir), keys(pb, b_dir));
        let mut changes = Vec::new();
        diff_maps("", &ka, &kb, &mut changes);
        diff.configs.extend(changes.into_iter().map(|c| ConfigKeyChange {
            config: config.to_string(),
            key: c.field,
            before: c.before,
            after: c.after,
        }));
    }
    diff
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uids(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    pub(crate) fn baseline() -> ExperimentManifest {
        ExperimentManifest {
            pre_process: "scripts/text_process.json".into(),
            audio_process: None,
            data_uids: uids(&["001-2", "005-2", "006-4", "010-3", "018-0", "035-1", "045-0", "049-1"]),
            positive_uids: uids(&["001-2", "005-2", "010-3", "018-0"]),
            training_uids: uids(&["001-2", "005-2", "006-4", "010-3", "018-0"]),
            test_uids: uids(&["035-1", "045-0", "049-1"]),
            method: "fine-tune BERT".into(),
            evaluation: [("ACC".to_string(), 0.77), ("AUC".to_string(), 0.77)].into(),
            labels: None,
        }
    }

    #[test]
    fn baseline_is_valid() {
        let r = baseline().validate(None);
        assert!(r.is_valid(), "{r}");
    }

    #[test]
    fn split_overlap_and_subset_violations() {
        let mut m = baseline();
        m.test_uids.push("001-2".into());
        m.positive_uids.push("999-9".into());
        m.training_uids.push("001-2".into());
        let r = m.validate(None);
        assert!(r.has(ViolationKind::SplitOverlap));
        assert!(r.has(ViolationKind::PositiveNotInData));
        assert!(r.has(ViolationKind::DuplicateUid));
        let text = r.to_string();
        assert!(text.contains("split overlap"));
        assert!(text.contains("positive \u{2284} data"));
        // Every violation is listed, not only the first.
        assert!(r.violations.len() >= 4);
    }

    #[test]
    fn empty_test_split_is_a_note() {
        let mut m = baseline();
        m.test_uids.clear();
        let r = m.validate(None);
        assert!(r.is_valid());
        assert_eq!(r.notes.len(), 1);
    }

    #[test]
    fn labels_must_agree_with_positives() {
        let mut m = baseline();
        let mut labels: BTreeMap<String, Label> =
            m.data_uids.iter().map(|u| (u.clone(), Label::Negative)).collect();
        for p in &m.positive_uids {
            labels.insert(p.clone(), Label::Positive);
        }
        m.labels = Some(labels.clone());
        assert!(m.validate(None).is_valid());
        labels.insert("006-4".into(), Label::Positive);
        m.labels = Some(labels);
        assert!(m.validate(None).has(ViolationKind::LabelsDisagree));
    }

    #[test]
    fn canonical_form() {
        let m = baseline();
        let bytes = m.canonical_bytes();
        let text = std::str::from_utf8(&bytes).unwrap();
        assert!(text.starts_with("{\"data_uids\":[\"001-2\","));
        assert!(text.contains("\"evaluation\":{\"ACC\":0.77,\"AUC\":0.77}"));
        assert!(!text.contains(' ') || text.contains("fine-tune BERT"));
        let again = ExperimentManifest::from_json(&bytes).unwrap();
        assert_eq!(again.canonical_bytes(), bytes);
    }

    #[test]
    fn key_order_does_not_matter() {
        let a = r#"{"pre_process":"p.json","data_uids":["a"],"positive_uids":[],"training_uids":["a"],"test_uids":[],"method":"m","evaluation":{"B":1,"A":0.5}}"#;
        let b = r#"{"evaluation":{"A":0.5,"B":1},"method":"m","test_uids":[],"training_uids":["a"],"positive_uids":[],"data_uids":["a"],"pre_process":"p.json"}"#;
        let (a, b) = (ExperimentManifest::from_json(a.as_bytes()).unwrap(), ExperimentManifest::from_json(b.as_bytes()).unwrap());
        assert_eq!(a.canonical_bytes(), b.canonical_bytes());
    }

    #[test]
    fn unknown_keys_are_schema_errors() {
        let bad = r#"{"pre_process":"p","data_uids":[],"positive_uids":[],"training_uids":[],"test_uids":[],"method":"m","evaluation":{},"extra":1}"#;
        assert!(matches!(ExperimentManifest::from_json(bad.as_bytes()), Err(ManifestError::Schema(_))));
    }

    #[test]
    fn diff_records() {
        let a = baseline();
        assert!(diff_manifests(&a, &a).is_empty());

        let mut b = a.clone();
        b.data_uids.push("060-1".into());
        b.test_uids.push("060-1".into());
        let d = diff_manifests(&a, &b);
        assert_eq!(d.lists["test_uids"].added, vec!["060-1".to_string()]);
        assert!(d.scalars.is_empty());

        let mut c = a.clone();
        c.method = "SVM".into();
        c.evaluation.insert("ACC".into(), 0.84);
        let d = diff_manifests(&a, &c);
        assert_eq!(d.scalars[0], ScalarChange {
            field: "method".into(),
            before: Some("\"fine-tune BERT\"".into()),
            after: Some("\"SVM\"".into()),
        });
        assert_eq!(d.scalars[1].field, "evaluation.ACC");

        let mut r = a.clone();
        r.training_uids.reverse();
        let d = diff_manifests(&a, &r);
        assert!(d.lists["training_uids"].reordered);
    }

    #[test]
    fn config_key_diff() {
        let dir = tempfile::tempdir().unwrap();
        let (da, db) = (dir.path().join("a"), dir.path().join("b"));
        fs::create_dir_all(&da).unwrap();
        fs::create_dir_all(&db).unwrap();
        let mut cfg = TextPipelineConfig::uniform(true);
        fs::write(da.join("t.json"), cfg.to_json_pretty()).unwrap();
        cfg.add_newline = false;
        fs::write(db.join("t.json"), cfg.to_json_pretty()).unwrap();
        let mut m = baseline();
        m.pre_process = "t.json".into();
        let d = diff_with_configs(&m, &da, &m, &db);
        assert!(d.lists.is_empty() && d.scalars.is_empty());
        assert_eq!(d.configs.len(), 1);
        assert_eq!(d.configs[0].key, "add_newline");
        assert!(diff_with_configs(&m, &da, &m, &da).is_empty());
    }

    #[test]
    fn resolve_configs_during_validation() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = baseline();
        m.pre_process = "text.json".into();
        m.audio_process = Some("audio.json".into());
        let r = m.validate(Some(dir.path()));
        assert_eq!(r.violations.iter().filter(|v| v.kind == ViolationKind::ConfigUnresolvable).count(), 2);
        fs::write(dir.path().join("text.json"), "{\"dataset\":\"db\"}").unwrap();
        assert!(m.validate(Some(dir.path())).has(ViolationKind::ConfigInvalid));
    }
}
