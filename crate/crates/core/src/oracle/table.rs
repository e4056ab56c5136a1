//! Precomputed probe and record tables (JSON lines).
//!
//! One object per line, fields in this order:
//!
//! ```text
//! {"embedding_id": .., "hard_prompt_id": .., "option_probs": [..]}
//! {"instance_id": .., "option_loglikelihoods": [..], "gold_index": ..}
//! ```
//!
//! Record lines may be prefixed with `"embedding_id"` and/or
//! `"hard_prompt_id"` to say which prompt and hard prompt they were scored
//! under. Blended prompts use [`Selection::label`] as their `embedding_id`.
//! Floats are written with 17 significant digits.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::Deserialize;

use super::{LmOracle, OptionProbe, OptionProbeResult, OracleError, RankClassificationRecord};
use crate::selection::{variance_score, Selection};

/// A record line, with its optional scoring context.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRecord {
    pub embedding_id: Option<String>,
    pub hard_prompt_id: Option<String>,
    pub record: RankClassificationRecord,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TableLine {
    Probe(OptionProbeResult),
    Record(TableRecord),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProbeLine {
    embedding_id: String,
    hard_prompt_id: String,
    option_probs: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    #[serde(default)]
    embedding_id: Option<String>,
    #[serde(default)]
    hard_prompt_id: Option<String>,
    instance_id: String,
    option_loglikelihoods: Vec<f64>,
    gold_index: usize,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum AnyLine {
    Probe(ProbeLine),
    Record(RecordLine),
}

/// Parses a whole table, skipping blank lines. Line numbers are 1-based.
pub fn parse_table(text: &str) -> Result<Vec<TableLine>, OracleError> {
    let mut lines = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        let err = |message: String| OracleError::Table {
            line: i + 1,
            message,
        };
        let parsed: AnyLine = serde_json::from_str(raw).map_err(|_| {
            err("expected a probe line or a record line with exactly the documented fields".into())
        })?;
        lines.push(match parsed {
            AnyLine::Probe(p) => {
                variance_score(1, &p.option_probs).map_err(|e| err(e.to_string()))?;
                TableLine::Probe(OptionProbeResult {
                    embedding_id: p.embedding_id,
                    hard_prompt_id: p.hard_prompt_id,
                    option_probs: p.option_probs,
                })
            }
            AnyLine::Record(r) => {
                let record = RankClassificationRecord {
                    instance_id: r.instance_id,
                    option_loglikelihoods: r.option_loglikelihoods,
                    gold_index: r.gold_index,
                };
                record.validate().map_err(|e| err(e.to_string()))?;
                TableLine::Record(TableRecord {
                    embedding_id: r.embedding_id,
                    hard_prompt_id: r.hard_prompt_id,
                    record,
                })
            }
        });
    }
    Ok(lines)
}

fn push_str(out: &mut String, key: &str, value: &str) {
    let _ = write!(out, "\"{key}\":{}", serde_json::to_string(value).unwrap());
}

fn push_floats(out: &mut String, key: &str, values: &[f64]) -> Result<(), OracleError> {
    let _ = write!(out, "\"{key}\":[");
    for (i, v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(OracleError::InvalidProbe(format!(
                "cannot serialize non-finite value in `{key}`"
            )));
        }
        if i > 0 {
            out.push(',');
        }
        let _ = write!(out, "{v:.16e}");
    }
    out.push(']');
    Ok(())
}

/// Serializes one line (without the trailing newline).
pub fn write_table_line(line: &TableLine) -> Result<String, OracleError> {
    let mut out = String::from("{");
    match line {
        TableLine::Probe(p) => {
            push_str(&mut out, "embedding_id", &p.embedding_id);
            out.push(',');
            push_str(&mut out, "hard_prompt_id", &p.hard_prompt_id);
            out.push(',');
            push_floats(&mut out, "option_probs", &p.option_probs)?;
        }
        TableLine::Record(r) => {
            if let Some(id) = &r.embedding_id {
                push_str(&mut out, "embedding_id", id);
                out.push(',');
            }
            if let Some(id) = &r.hard_prompt_id {
                push_str(&mut out, "hard_prompt_id", id);
                out.push(',');
            }
            push_str(&mut out, "instance_id", &r.record.instance_id);
            out.push(',');
            push_floats(
                &mut out,
                "option_loglikelihoods",
                &r.record.option_loglikelihoods,
            )?;
            let _ = write!(out, ",\"gold_index\":{}", r.record.gold_index);
        }
    }
    out.push('}');
    Ok(out)
}

type RecordKey = (Option<String>, Option<String>);

/// Oracle backed by tables exported from a real model.
///
/// Record lookup for `(prompt, hard prompt)` tries the exact pair first, then
/// records keyed only by prompt, only by hard prompt, and finally unkeyed ones.
#[derive(Debug, Clone, Default)]
pub struct TableOracle {
    probes: HashMap<(String, String), Vec<f64>>,
    records: HashMap<RecordKey, Vec<RankClassificationRecord>>,
}

impl TableOracle {
    pub fn from_lines(lines: impl IntoIterator<Item = TableLine>) -> Self {
        let mut oracle = Self::default();
        for line in lines {
            match line {
                TableLine::Probe(p) => {
                    oracle
                        .probes
                        .insert((p.embedding_id, p.hard_prompt_id), p.option_probs);
                }
                TableLine::Record(r) => oracle
                    .records
                    .entry((r.embedding_id, r.hard_prompt_id))
                    .or_default()
                    .push(r.record),
            }
        }
        oracle
    }

    pub fn parse(text: &str) -> Result<Self, OracleError> {
        Ok(Self::from_lines(parse_table(text)?))
    }

    pub fn probe_count(&self) -> usize {
        self.probes.len()
    }

    pub fn record_count(&self) -> usize {
        self.records.values().map(Vec::len).sum()
    }
}

impl OptionProbe for TableOracle {
    fn probe_options(
        &self,
        embedding_id: &str,
        hard_prompt_id: &str,
    ) -> Result<OptionProbeResult, OracleError> {
        self.probes
            .get(&(embedding_id.to_owned(), hard_prompt_id.to_owned()))
            .map(|probs| OptionProbeResult {
                embedding_id: embedding_id.to_owned(),
                hard_prompt_id: hard_prompt_id.to_owned(),
                option_probs: probs.clone(),
            })
            .ok_or_else(|| OracleError::MissingProbe {
                embedding_id: embedding_id.to_owned(),
                hard_prompt_id: hard_prompt_id.to_owned(),
            })
    }
}

impl LmOracle for TableOracle {
    fn classification_records(
        &self,
        hard_prompt_id: &str,
        selection: &Selection,
    ) -> Result<Vec<RankClassificationRecord>, OracleError> {
        let prompt = selection.label();
        let candidates: [RecordKey; 4] = [
            (Some(prompt.clone()), Some(hard_prompt_id.to_owned())),
            (Some(prompt.clone()), None),
            (None, Some(hard_prompt_id.to_owned())),
            (None, None),
        ];
        candidates
            .iter()
            .find_map(|key| self.records.get(key))
            .cloned()
            .ok_or_else(|| OracleError::MissingRecords {
                prompt,
                hard_prompt_id: hard_prompt_id.to_owned(),
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selection::{Strategy, WeightedId};

    const TABLE: &str = r#"
{"embedding_id":"a","hard_prompt_id":"h1","option_probs":[0.6,0.4]}
{"embedding_id":"b","hard_prompt_id":"h1","option_probs":[0.5,0.5]}
{"embedding_id":"a","hard_prompt_id":"h1","instance_id":"x1","option_loglikelihoods":[-1.0,-2.0],"gold_index":0}
{"embedding_id":"a","hard_prompt_id":"h1","instance_id":"x2","option_loglikelihoods":[-1.0,-0.5],"gold_index":0}
{"instance_id":"y","option_loglikelihoods":[-3.0,-1.0,-2.0],"gold_index":1}
"#;

    fn single(id: &str) -> Selection {
        Selection {
            strategy: Strategy::Frequency,
            chosen: vec![WeightedId {
                id: id.into(),
                weight: 1.0,
            }],
        }
    }

    #[test]
    fn parses_both_line_kinds() {
        let oracle = TableOracle::parse(TABLE).unwrap();
        assert_eq!(oracle.probe_count(), 2);
        assert_eq!(oracle.record_count(), 3);
        assert_eq!(
            oracle.probe_options("a", "h1").unwrap().option_probs,
            vec![0.6, 0.4]
        );
        assert!(matches!(
            oracle.probe_options("a", "h2"),
            Err(OracleError::MissingProbe { .. })
        ));
        assert_eq!(
            oracle
                .classification_records("h1", &single("a"))
                .unwrap()
                .len(),
            2
        );
        // falls back to unkeyed records
        assert_eq!(
            oracle.classification_records("h9", &single("zz")).unwrap()[0].instance_id,
            "y"
        );
    }

    #[test]
    fn rejects_malformed_lines() {
        let bad_sum = r#"{"embedding_id":"a","hard_prompt_id":"h","option_probs":[0.9,0.4]}"#;
        assert!(matches!(
            parse_table(bad_sum),
            Err(OracleError::Table { line: 1, .. })
        ));
        let bad_gold =
            "\n{\"instance_id\":\"i\",\"option_loglikelihoods\":[0.0,1.0],\"gold_index\":5}";
        assert!(matches!(
            parse_table(bad_gold),
            Err(OracleError::Table { line: 2, .. })
        ));
        assert!(parse_table(r#"{"instance_id":"i","extra":1}"#).is_err());
        assert!(parse_table("not json").is_err());
    }

    #[test]
    fn writes_fixed_order_and_precision() {
        let probe = TableLine::Probe(OptionProbeResult {
            embedding_id: "a\"b".into(),
            hard_prompt_id: "h".into(),
            option_probs: vec![0.1, 0.9],
        });
        let text = write_table_line(&probe).unwrap();
        assert_eq!(
            text,
            r#"{"embedding_id":"a\"b","hard_prompt_id":"h","option_probs":[1.0000000000000001e-1,9.0000000000000002e-1]}"#
        );
        for line in parse_table(TABLE).unwrap() {
            let again = parse_table(&write_table_line(&line).unwrap()).unwrap();
            assert_eq!(again, vec![line]);
        }
        let inf = TableLine::Probe(OptionProbeResult {
            embedding_id: "a".into(),
            hard_prompt_id: "h".into(),
            option_probs: vec![f64::INFINITY],
        });
        assert!(write_table_line(&inf).is_err());
    }
}
