//! JSONL dataset ingestion, validation, and emission.
//!
//! One question per line:
//! `{"question_id": str, "gold": str|null, "responses": [{"answer": str,
//! "score": float, "label": bool|null, "reasoning": str|null}, ...]}`

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::data::{Dataset, QuestionInstance, Role, ScoredResponse};
use crate::error::{Error, Result};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    question_id: String,
    #[serde(default)]
    gold: Option<String>,
    responses: Vec<RawResponse>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawResponse {
    answer: String,
    score: f64,
    #[serde(default)]
    label: Option<bool>,
    #[serde(default)]
    reasoning: Option<String>,
}

fn parse_line(line: &str) -> Result<QuestionInstance> {
    let raw: RawRecord = serde_json::from_str(line).map_err(|e| Error::Parse(e.to_string()))?;
    let responses = raw
        .responses
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            ScoredResponse::new(&r.answer, r.score, r.label, r.reasoning)
                .map_err(|e| Error::InvalidInput(format!("response {i}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    QuestionInstance::new(raw.question_id, responses, raw.gold.as_deref())
}

/// Read a dataset, failing on the first invalid line with its line number.
pub fn read_dataset<R: BufRead>(reader: R, role: Role) -> Result<Dataset> {
    let mut instances = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i as u64 + 1;
        if line.trim().is_empty() {
            continue;
        }
        let instance = parse_line(&line).map_err(|e| Error::Dataset {
            line: lineno,
            message: e.to_string(),
        })?;
        instances.push(instance);
    }
    Dataset::new(instances, role, BTreeMap::new())
}

/// Read a dataset from a file, recording the path and content hash in its
/// metadata.
pub fn load_dataset(path: &Path, role: Role) -> Result<Dataset> {
    let bytes = std::fs::read(path)?;
    let hash = sha256_hex(&bytes);
    let mut dataset = read_dataset(std::io::Cursor::new(bytes), role)?;
    dataset
        .metadata
        .insert("dataset_sha256".into(), hash);
    Ok(dataset)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    format!("{:x}", hasher.finalize())
}

/// Serialize a dataset as JSONL, one question per line, fields in schema
/// order with explicit nulls.
pub fn write_dataset<W: Write>(dataset: &Dataset, mut writer: W) -> Result<()> {
    for inst in &dataset.instances {
        let responses: Vec<serde_json::Value> = inst
            .responses
            .iter()
            .map(|r| {
                serde_json::json!({
                    "answer": r.answer,
                    "score": r.score,
                    "label": r.label,
                    "reasoning": r.reasoning,
                })
            })
            .collect();
        let record = serde_json::json!({
            "question_id": inst.question_id,
            "gold": inst.gold,
            "responses": responses,
        });
        serde_json::to_writer(&mut writer, &record).map_err(|e| Error::Parse(e.to_string()))?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Write bytes to a temp file in the target directory, then rename into
/// place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = match dir {
        Some(dir) => tempfile::NamedTempFile::new_in(dir)?,
        None => tempfile::NamedTempFile::new_in(".")?,
    };
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// One validation finding, anchored to a line.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub line: u64,
    pub message: String,
}

/// Counts plus every diagnostic found; an empty diagnostic list means the
/// file satisfies all dataset invariants for the given role.
#[derive(Debug, Default)]
pub struct ValidationSummary {
    pub questions: usize,
    pub responses: usize,
    pub labeled_responses: usize,
    pub questions_with_gold: usize,
    pub diagnostics: Vec<Diagnostic>,
}

impl ValidationSummary {
    pub fn is_valid(&self) -> bool {
        self.diagnostics.is_empty()
    }
}

/// Validate a JSONL stream against the dataset invariants, collecting every
/// line-numbered diagnostic instead of stopping at the first.
pub fn validate<R: BufRead>(reader: R, role: Role) -> Result<ValidationSummary> {
    let mut summary = ValidationSummary::default();
    let mut first_seen: HashMap<String, u64> = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i as u64 + 1;
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(&line) {
            Ok(instance) => {
                summary.questions += 1;
                summary.responses += instance.len();
                summary.labeled_responses +=
                    instance.responses.iter().filter(|r| r.label.is_some()).count();
                if instance.gold.is_some() {
                    summary.questions_with_gold += 1;
                }
                if let Some(first) = first_seen.get(&instance.question_id) {
                    summary.diagnostics.push(Diagnostic {
                        line: lineno,
                        message: format!(
                            "duplicate question_id '{}' (first seen on line {first})",
                            instance.question_id
                        ),
                    });
                } else {
                    first_seen.insert(instance.question_id.clone(), lineno);
                }
                if role == Role::Calibration {
                    if instance.gold.is_none() {
                        summary.diagnostics.push(Diagnostic {
                            line: lineno,
                            message: format!(
                                "calibration role requires gold on question '{}'",
                                instance.question_id
                            ),
                        });
                    }
                    if !instance.fully_labeled() {
                        summary.diagnostics.push(Diagnostic {
                            line: lineno,
                            message: format!(
                                "calibration role requires labels on every response of '{}'",
                                instance.question_id
                            ),
                        });
                    }
                }
            }
            Err(e) => summary.diagnostics.push(Diagnostic {
                line: lineno,
                message: e.to_string(),
            }),
        }
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    const GOOD: &str = concat!(
        r#"{"question_id": "q1", "gold": "4", "responses": [{"answer": "4", "score": 0.9, "label": true, "reasoning": null}, {"answer": "5", "score": 0.2, "label": false, "reasoning": "guess"}]}"#,
        "\n",
        r#"{"question_id": "q2", "gold": null, "responses": [{"answer": " 7 ", "score": 0.5, "label": null, "reasoning": null}]}"#,
        "\n",
    );

    #[test]
    fn reads_well_formed_dataset() {
        let d = read_dataset(Cursor::new(GOOD), Role::Test).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.instances[0].gold.as_deref(), Some("4"));
        // answers are canonicalized on ingestion
        assert_eq!(d.instances[1].responses[0].answer, "7");
    }

    #[test]
    fn read_reports_line_numbers() {
        let bad = format!("{GOOD}{}\n", r#"{"question_id": "q3", "responses": []}"#);
        let err = read_dataset(Cursor::new(bad), Role::Test).unwrap_err();
        match err {
            Error::Dataset { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn validate_collects_all_diagnostics() {
        let text = concat!(
            r#"{"question_id": "q1", "gold": "A", "responses": [{"answer": "A", "score": 0.8, "label": true}]}"#,
            "\n",
            "not json\n",
            r#"{"question_id": "q1", "gold": "A", "responses": [{"answer": "A", "score": 0.8, "label": true}]}"#,
            "\n",
            r#"{"question_id": "q4", "gold": "A", "responses": [{"answer": "B", "score": 0.8, "label": true}]}"#,
            "\n",
        );
        let summary = validate(Cursor::new(text), Role::Test).unwrap();
        assert_eq!(summary.diagnostics.len(), 3);
        assert_eq!(summary.diagnostics[0].line, 2);
        assert_eq!(summary.diagnostics[1].line, 3);
        assert!(summary.diagnostics[1].message.contains("duplicate"));
        // label inconsistent with gold
        assert_eq!(summary.diagnostics[2].line, 4);
    }

    #[test]
    fn validate_enforces_calibration_role() {
        let text = concat!(
            r#"{"question_id": "q1", "gold": null, "responses": [{"answer": "A", "score": 0.8, "label": true}]}"#,
            "\n",
            r#"{"question_id": "q2", "gold": "A", "responses": [{"answer": "A", "score": 0.8}]}"#,
            "\n",
        );
        let test_summary = validate(Cursor::new(text), Role::Test).unwrap();
        assert!(test_summary.is_valid());
        let cal_summary = validate(Cursor::new(text), Role::Calibration).unwrap();
        assert_eq!(cal_summary.diagnostics.len(), 2);
    }

    #[test]
    fn round_trip_preserves_bytes() {
        let d = read_dataset(Cursor::new(GOOD), Role::Test).unwrap();
        let mut out = Vec::new();
        write_dataset(&d, &mut out).unwrap();
        let d2 = read_dataset(Cursor::new(out.clone()), Role::Test).unwrap();
        let mut out2 = Vec::new();
        write_dataset(&d2, &mut out2).unwrap();
        assert_eq!(out, out2);
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.json");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"two");
    }
}
