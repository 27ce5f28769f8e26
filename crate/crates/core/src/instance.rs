//! Per-query distillation instances and their JSON-lines serialization.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{CklError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DocEntry {
    pub doc_id: String,
    pub teacher_score: f64,
    pub student_score: f64,
}

impl DocEntry {
    pub fn new(doc_id: impl Into<String>, teacher_score: f64, student_score: f64) -> Self {
        Self {
            doc_id: doc_id.into(),
            teacher_score,
            student_score,
        }
    }
}

/// One query's candidate set: positives `D+` and negatives `D-`.
///
/// Every vector-valued accessor returns positives first, then negatives,
/// which is the alignment used by [`TopOneDistribution`](crate::TopOneDistribution).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillationInstance {
    pub query_id: String,
    pub positives: Vec<DocEntry>,
    pub negatives: Vec<DocEntry>,
}

impl DistillationInstance {
    pub fn new(
        query_id: impl Into<String>,
        positives: Vec<DocEntry>,
        negatives: Vec<DocEntry>,
    ) -> Result<Self> {
        let inst = Self {
            query_id: query_id.into(),
            positives,
            negatives,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |reason: String| CklError::InvalidInstance {
            query_id: self.query_id.clone(),
            reason,
        };
        if self.positives.is_empty() {
            return Err(invalid("no positive documents".into()));
        }
        if self.negatives.is_empty() {
            return Err(invalid("no negative documents".into()));
        }
        let mut seen = BTreeSet::new();
        for doc in self.docs() {
            if !seen.insert(doc.doc_id.as_str()) {
                return Err(invalid(format!("duplicate doc_id {}", doc.doc_id)));
            }
            if !doc.teacher_score.is_finite() || !doc.student_score.is_finite() {
                return Err(invalid(format!("non-finite score for {}", doc.doc_id)));
            }
        }
        Ok(())
    }

    /// `s = |D+|`
    pub fn num_positives(&self) -> usize {
        self.positives.len()
    }

    /// `m = |D-|`
    pub fn num_negatives(&self) -> usize {
        self.negatives.len()
    }

    pub fn len(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn docs(&self) -> impl Iterator<Item = &DocEntry> {
        self.positives.iter().chain(self.negatives.iter())
    }

    pub fn doc_ids(&self) -> Vec<&str> {
        self.docs().map(|d| d.doc_id.as_str()).collect()
    }

    pub fn teacher_scores(&self) -> Vec<f64> {
        self.docs().map(|d| d.teacher_score).collect()
    }

    pub fn student_scores(&self) -> Vec<f64> {
        self.docs().map(|d| d.student_score).collect()
    }

    pub fn positive_mask(&self) -> Vec<bool> {
        let mut mask = vec![true; self.positives.len()];
        mask.resize(self.len(), false);
        mask
    }

    /// Overwrite student scores, aligned positives-then-negatives.
    pub fn set_student_scores(&mut self, scores: &[f64]) -> Result<()> {
        if scores.len() != self.len() {
            return Err(CklError::Misaligned {
                expected: self.len(),
                got: scores.len(),
            });
        }
        for (doc, &s) in self
            .positives
            .iter_mut()
            .chain(self.negatives.iter_mut())
            .zip(scores)
        {
            doc.student_score = s;
        }
        Ok(())
    }
}

/// Read one instance per non-blank line. Each instance is validated.
pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Vec<DistillationInstance>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let inst: DistillationInstance =
            serde_json::from_str(&line).map_err(|source| CklError::Parse {
                line: idx + 1,
                source,
            })?;
        inst.validate()?;
        out.push(inst);
    }
    Ok(out)
}

pub fn write_jsonl<W: Write>(mut writer: W, instances: &[DistillationInstance]) -> Result<()> {
    for inst in instances {
        serde_json::to_writer(&mut writer, inst)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> DistillationInstance {
        DistillationInstance::new(
            "q1",
            vec![DocEntry::new("d1", 2.0, 1.0)],
            vec![
                DocEntry::new("d2", 0.5, 0.0),
                DocEntry::new("d3", -1.0, 0.3),
            ],
        )
        .unwrap()
    }

    #[test]
    fn aligned_accessors() {
        let inst = sample();
        assert_eq!(inst.teacher_scores(), vec![2.0, 0.5, -1.0]);
        assert_eq!(inst.student_scores(), vec![1.0, 0.0, 0.3]);
        assert_eq!(inst.positive_mask(), vec![true, false, false]);
        assert_eq!(inst.doc_ids(), vec!["d1", "d2", "d3"]);
    }

    #[test]
    fn rejects_bad_instances() {
        let dup = DistillationInstance::new(
            "q",
            vec![DocEntry::new("a", 0.0, 0.0)],
            vec![DocEntry::new("a", 0.0, 0.0)],
        );
        assert!(matches!(dup, Err(CklError::InvalidInstance { .. })));
        let no_neg = DistillationInstance::new("q", vec![DocEntry::new("a", 0.0, 0.0)], vec![]);
        assert!(no_neg.is_err());
        let nan = DistillationInstance::new(
            "q",
            vec![DocEntry::new("a", f64::NAN, 0.0)],
            vec![DocEntry::new("b", 0.0, 0.0)],
        );
        assert!(nan.is_err());
    }

    #[test]
    fn jsonl_roundtrip_and_errors() {
        let inst = sample();
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &[inst.clone(), inst.clone()]).unwrap();
        let back = read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, vec![inst.clone(), inst]);

        let bad = b"{\"query_id\": \"q\", \"positives\": []}\n";
        assert!(matches!(
            read_jsonl(&bad[..]),
            Err(CklError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn set_scores_checks_length() {
        let mut inst = sample();
        assert!(inst.set_student_scores(&[1.0]).is_err());
        inst.set_student_scores(&[3.0, 2.0, 1.0]).unwrap();
        assert_eq!(inst.student_scores(), vec![3.0, 2.0, 1.0]);
    }
}
