//! Declarative positive/negative labeling of samples from metadata.
//!
//! Three rule forms are supported:
//!
//! * `threshold`: compare one numeric field against a cutoff.
//! * `banded_threshold`: pick a cutoff by age band, then compare.
//!   Bands are half-open `[age_min, age_max)`; `age_max: null` is unbounded.
//! * `code_map`: map integer codes to positive/negative; anything else is
//!   excluded.
//!
//! The comparison direction is always spelled out in the rule.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CohortError {
    #[error("bands [{a_min}, {a_max}) and [{b_min}, {b_max}) overlap")]
    OverlappingBands { a_min: f64, a_max: String, b_min: f64, b_max: String },
    #[error("gap between bands at age {0}..{1}")]
    BandGap(f64, f64),
    #[error("band [{0}, {1}) is empty")]
    EmptyBand(f64, f64),
    #[error("banded rule has no bands")]
    NoBands,
    #[error("only the last band may be unbounded")]
    UnboundedInnerBand,
    #[error("code {0} is both positive and negative")]
    OverlappingCodes(i64),
    #[error("no metadata samples to label")]
    EmptyMetadata,
    #[error("metadata has no 'uid' column")]
    MissingUidColumn,
    #[error("duplicate uid {0:?} in metadata")]
    DuplicateUid(String),
    #[error("cannot read metadata: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Number(f64),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SampleMetadata {
    pub uid: String,
    pub age_years: Option<f64>,
    pub mmse: Option<f64>,
    pub diagnosis_code: Option<i64>,
    pub fluency_score: Option<f64>,
    #[serde(default)]
    pub extra: BTreeMap<String, Scalar>,
}

impl SampleMetadata {
    pub fn new(uid: impl Into<String>) -> Self {
        Self { uid: uid.into(), ..Self::default() }
    }

    /// Numeric value of a named field. Typed fields accept their column
    /// aliases; anything else is looked up in `extra`.
    pub fn number(&self, field: &str) -> Option<f64> {
        match canonical_field(field) {
            Some("age_years") => self.age_years,
            Some("mmse") => self.mmse,
            Some("diagnosis_code") => self.diagnosis_code.map(|c| c as f64),
            Some("fluency_score") => self.fluency_score,
            _ => match self.extra.get(field) {
                Some(Scalar::Number(v)) => Some(*v),
                _ => None,
            },
        }
    }

    pub fn code(&self, field: &str) -> Option<i64> {
        match canonical_field(field) {
            Some("diagnosis_code") => self.diagnosis_code,
            _ => self.number(field).filter(|v| v.fract() == 0.0).map(|v| v as i64),
        }
    }
}

fn canonical_field(name: &str) -> Option<&'static str> {
    match name.trim().to_ascii_lowercase().as_str() {
        "age" | "age_years" => Some("age_years"),
        "mmse" => Some("mmse"),
        "diagnosis_code" | "diagnosis" | "dx" | "dx_code" => Some("diagnosis_code"),
        "fluency" | "fluency_score" | "verbal_fluency" => Some("fluency_score"),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Comparison {
    Le,
    Lt,
    Ge,
    Gt,
}

impl Comparison {
    pub fn holds(self, value: f64, cutoff: f64) -> bool {
        match self {
            Comparison::Le => value <= cutoff,
            Comparison::Lt => value < cutoff,
            Comparison::Ge => value >= cutoff,
            Comparison::Gt => value > cutoff,
        }
    }
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Comparison::Le => "<=",
            Comparison::Lt => "<",
            Comparison::Ge => ">=",
            Comparison::Gt => ">",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgeBand {
    pub age_min: f64,
    /// Exclusive; `None` means unbounded.
    pub age_max: Option<f64>,
    pub cutoff: f64,
    pub positive_when: Comparison,
}

impl AgeBand {
    pub fn contains(&self, age: f64) -> bool {
        age >= self.age_min && self.age_max.is_none_or(|max| age < max)
    }

    fn upper(&self) -> f64 {
        self.age_max.unwrap_or(f64::INFINITY)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case", deny_unknown_fields)]
pub enum CohortRule {
    Threshold {
        field: String,
        cutoff: f64,
        positive_when: Comparison,
    },
    BandedThreshold {
        field: String,
        bands: Vec<AgeBand>,
    },
    CodeMap {
        field: String,
        positive_codes: BTreeSet<i64>,
        negative_codes: BTreeSet<i64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
    Excluded,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Positive => "positive",
            Label::Negative => "negative",
            Label::Excluded => "excluded",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelAssignment {
    pub uid: String,
    pub label: Label,
    pub reason: String,
}

fn band_bound(v: Option<f64>) -> String {
    v.map_or_else(|| "inf".to_string(), |x| x.to_string())
}

impl CohortRule {
    pub fn from_json(bytes: &[u8]) -> serde_json::Result<Self> {
        serde_json::from_slice(bytes)
    }

    /// Checks band layout and code disjointness. Bands are sorted by
    /// `age_min` before checking, so declaration order does not matter.
    pub fn validate(&self) -> Result<(), CohortError> {
        match self {
            CohortRule::Threshold { .. } => Ok(()),
            CohortRule::CodeMap { positive_codes, negative_codes, .. } => {
                match positive_codes.intersection(negative_codes).next() {
                    Some(c) => Err(CohortError::OverlappingCodes(*c)),
                    None => Ok(()),
                }
            }
            CohortRule::BandedThreshold { bands, .. } => {
                if bands.is_empty() {
                    return Err(CohortError::NoBands);
                }
                let mut sorted: Vec<&AgeBand> = bands.iter().collect();
                sorted.sort_by(|a, b| a.age_min.total_cmp(&b.age_min));
                for b in &sorted {
                    if b.upper() <= b.age_min {
                        return Err(CohortError::EmptyBand(b.age_min, b.upper()));
                    }
                }
                for pair in sorted.windows(2) {
                    let (a, b) = (pair[0], pair[1]);
                    if a.age_max.is_none() {
                        return Err(CohortError::UnboundedInnerBand);
                    }
                    if b.age_min < a.upper() {
                        return Err(CohortError::OverlappingBands {
                            a_min: a.age_min,
                            a_max: band_bound(a.age_max),
                            b_min: b.age_min,
                            b_max: band_bound(b.age_max),
                        });
                    }
                    if b.age_min > a.upper() {
                        return Err(CohortError::BandGap(a.upper(), b.age_min));
                    }
                }
                Ok(())
            }
        }
    }

    fn label_one(&self, m: &SampleMetadata) -> LabelAssignment {
        let (label, reason) = match self {
            CohortRule::Threshold { field, cutoff, positive_when } => match m.number(field) {
                None => (Label::Excluded, format!("{field} missing")),
                Some(v) => {
                    let label = if positive_when.holds(v, *cutoff) { Label::Positive } else { Label::Negative };
                    (label, format!("{field}={v} {positive_when} {cutoff}: {}", label == Label::Positive))
                }
            },
            CohortRule::BandedThreshold { field, bands } => match (m.age_years, m.number(field)) {
                (None, _) => (Label::Excluded, "age_years missing".to_string()),
                (_, None) => (Label::Excluded, format!("{field} missing")),
                (Some(age), Some(v)) => match bands.iter().find(|b| b.contains(age)) {
                    None => (Label::Excluded, format!("age_years={age} outside all bands")),
                    Some(b) => {
                        let label = if b.positive_when.holds(v, b.cutoff) { Label::Positive } else { Label::Negative };
                        let reason = format!(
                            "age_years={age} in [{}, {}): {field}={v} {} {}: {}",
                            b.age_min,
                            band_bound(b.age_max),
                            b.positive_when,
                            b.cutoff,
                            label == Label::Positive
                        );
                        (label, reason)
                    }
                },
            },
            CohortRule::CodeMap { field, positive_codes, negative_codes } => match m.code(field) {
                None => (Label::Excluded, format!("{field} missing")),
                Some(c) if positive_codes.contains(&c) => (Label::Positive, format!("{field}={c} in positive codes")),
                Some(c) if negative_codes.contains(&c) => (Label::Negative, format!("{field}={c} in negative codes")),
                Some(c) => (Label::Excluded, format!("{field}={c} in neither code set")),
            },
        };
        LabelAssignment { uid: m.uid.clone(), label, reason }
    }
}

/// One assignment per sample, in input order.
pub fn label_samples(rule: &CohortRule, metadata: &[SampleMetadata]) -> Result<Vec<LabelAssignment>, CohortError> {
    rule.validate()?;
    if metadata.is_empty() {
        return Err(CohortError::EmptyMetadata);
    }
    let mut seen = BTreeSet::new();
    for m in metadata {
        if !seen.insert(m.uid.as_str()) {
            return Err(CohortError::DuplicateUid(m.uid.clone()));
        }
    }
    Ok(metadata.iter().map(|m| rule.label_one(m)).collect())
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetadataTable {
    pub samples: Vec<SampleMetadata>,
    /// Non-empty cells that failed to parse as numbers.
    pub warnings: usize,
}

const MISSING: &[&str] = &["", "na", "n/a", "nan", "null", "."];

fn parse_number(raw: &str, warnings: &mut usize) -> Option<f64> {
    let s = raw.trim();
    if s.is_empty() {
        return None;
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Some(v),
        _ => {
            *warnings += 1;
            log::warn!("metadata value {s:?} is not a number; treating as missing");
            None
        }
    }
}

/// Loads a CSV or TSV metadata table. The delimiter is a tab when the file
/// extension is `.tsv` or the header line contains a tab, otherwise a comma.
pub fn load_metadata(path: &Path) -> Result<MetadataTable, CohortError> {
    let text = std::fs::read_to_string(path)?;
    let tab_ext = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("tsv"));
    let first_line = text.lines().next().unwrap_or("");
    let delimiter = if tab_ext || first_line.contains('\t') { b'\t' } else { b',' };
    parse_metadata(&text, delimiter)
}

pub fn parse_metadata(text: &str, delimiter: u8) -> Result<MetadataTable, CohortError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let uid_col = headers
        .iter()
        .position(|h| h.eq_ignore_ascii_case("uid"))
        .ok_or(CohortError::MissingUidColumn)?;

    let mut table = MetadataTable::default();
    let mut seen = BTreeSet::new();
    for record in reader.records() {
        let record = record?;
        let uid = record.get(uid_col).unwrap_or("").to_string();
        if !seen.insert(uid.clone()) {
            return Err(CohortError::DuplicateUid(uid));
        }
        let mut m = SampleMetadata::new(uid);
        for (i, name) in headers.iter().enumerate() {
            if i == uid_col {
                continue;
            }
            let raw = record.get(i).unwrap_or("");
            match canonical_field(name) {
                Some("age_years") => m.age_years = parse_number(raw, &mut table.warnings),
                Some("mmse") => m.mmse = parse_number(raw, &mut table.warnings),
                Some("fluency_score") => m.fluency_score = parse_number(raw, &mut table.warnings),
                Some("diagnosis_code") => {
                    m.diagnosis_code = parse_number(raw, &mut table.warnings).and_then(|v| {
                        if v.fract() == 0.0 {
                            Some(v as i64)
                        } else {
                            table.warnings += 1;
                            None
                        }
                    })
                }
                _ => {
                    if MISSING.contains(&raw.to_ascii_lowercase().as_str()) {
                        continue;
                    }
                    let value = match raw.parse::<f64>() {
                        Ok(v) if v.is_finite() => Scalar::Number(v),
                        _ => Scalar::Text(raw.to_string()),
                    };
                    m.extra.insert(name.clone(), value);
                }
            }
        }
        table.samples.push(m);
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mmse_rule() -> CohortRule {
        CohortRule::Threshold { field: "mmse".into(), cutoff: 24.0, positive_when: Comparison::Le }
    }

    fn band(min: f64, max: Option<f64>, cutoff: f64) -> AgeBand {
        AgeBand { age_min: min, age_max: max, cutoff, positive_when: Comparison::Le }
    }

    fn with(uid: &str, f: impl FnOnce(&mut SampleMetadata)) -> SampleMetadata {
        let mut m = SampleMetadata::new(uid);
        f(&mut m);
        m
    }

    #[test]
    fn mmse_threshold() {
        let samples = vec![
            with("a", |m| m.mmse = Some(20.0)),
            with("b", |m| m.mmse = Some(25.0)),
            with("c", |m| m.mmse = Some(24.0)),
            with("d", |_| {}),
        ];
        let labels: Vec<Label> = label_samples(&mmse_rule(), &samples).unwrap().into_iter().map(|a| a.label).collect();
        assert_eq!(labels, [Label::Positive, Label::Negative, Label::Positive, Label::Excluded]);
    }

    #[test]
    fn overlapping_bands_rejected() {
        let rule = CohortRule::BandedThreshold {
            field: "fluency_score".into(),
            bands: vec![band(0.0, Some(60.0), 16.0), band(59.0, None, 14.0)],
        };
        assert!(matches!(rule.validate(), Err(CohortError::OverlappingBands { .. })));
        let gap = CohortRule::BandedThreshold {
            field: "fluency_score".into(),
            bands: vec![band(0.0, Some(60.0), 16.0), band(61.0, None, 14.0)],
        };
        assert!(matches!(gap.validate(), Err(CohortError::BandGap(..))));
        let inner = CohortRule::BandedThreshold {
            field: "fluency_score".into(),
            bands: vec![band(0.0, None, 16.0), band(61.0, Some(70.0), 14.0)],
        };
        assert!(inner.validate().is_err());
    }

    #[test]
    fn code_sets_must_be_disjoint() {
        let rule = CohortRule::CodeMap {
            field: "diagnosis_code".into(),
            positive_codes: [100, 800].into(),
            negative_codes: [800].into(),
        };
        assert!(matches!(rule.validate(), Err(CohortError::OverlappingCodes(800))));
    }

    #[test]
    fn empty_metadata_is_an_error() {
        assert!(matches!(label_samples(&mmse_rule(), &[]), Err(CohortError::EmptyMetadata)));
    }

    #[test]
    fn rule_json_shapes() {
        let json = r#"{"form":"banded_threshold","field":"fluency_score","bands":[
            {"age_min":0,"age_max":60,"cutoff":16,"positive_when":"le"},
            {"age_min":60,"age_max":79,"cutoff":14,"positive_when":"le"},
            {"age_min":79,"age_max":null,"cutoff":12,"positive_when":"le"}]}"#;
        let rule = CohortRule::from_json(json.as_bytes()).unwrap();
        rule.validate().unwrap();
        let json = r#"{"form":"code_map","field":"diagnosis_code","positive_codes":[100],"negative_codes":[800]}"#;
        assert!(matches!(CohortRule::from_json(json.as_bytes()).unwrap(), CohortRule::CodeMap { .. }));
        assert!(CohortRule::from_json(br#"{"form":"threshold","field":"mmse","cutoff":24}"#).is_err());
    }

    #[test]
    fn metadata_parsing() {
        let t = parse_metadata("uid,age,mmse\n001-0,69,21\n", b',').unwrap();
        assert_eq!(t.samples.len(), 1);
        let m = &t.samples[0];
        assert_eq!(m.uid, "001-0");
        assert_eq!(m.age_years, Some(69.0));
        assert_eq!(m.mmse, Some(21.0));
        assert_eq!(t.warnings, 0);

        let t = parse_metadata("uid,mmse\n001-0,NA\n", b',').unwrap();
        assert_eq!(t.samples[0].mmse, None);
        assert_eq!(t.warnings, 1);

        assert!(parse_metadata("uid,mmse\n", b',').unwrap().samples.is_empty());
        assert!(matches!(parse_metadata("id,mmse\nx,1\n", b','), Err(CohortError::MissingUidColumn)));
        assert!(matches!(parse_metadata("uid\nx\nx\n", b','), Err(CohortError::DuplicateUid(_))));
    }

    #[test]
    fn extra_columns_are_kept() {
        let t = parse_metadata("uid\tsite\tcdr\tnote\na\tpgh\t0.5\t\n", b'\t').unwrap();
        let m = &t.samples[0];
        assert_eq!(m.extra.get("site"), Some(&Scalar::Text("pgh".into())));
        assert_eq!(m.extra.get("cdr"), Some(&Scalar::Number(0.5)));
        assert!(!m.extra.contains_key("note"));
        assert_eq!(m.number("cdr"), Some(0.5));
    }
}
