use super::{read_lines, CorpusError};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Image,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::Image => "image",
        }
    }
}

/// Which annotation tier counts as relevant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelevanceLevel {
    Entity,
    Evidence,
    Overall,
}

impl RelevanceLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            RelevanceLevel::Entity => "entity",
            RelevanceLevel::Evidence => "evidence",
            RelevanceLevel::Overall => "overall",
        }
    }
}

/// Three-tier human relevance judgement for one claim/candidate pair.
///
/// `overall` must equal `entity_level || evidence_level`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelevanceAnnotation {
    pub claim_id: String,
    pub candidate_id: String,
    pub modality: Modality,
    pub entity_level: bool,
    pub evidence_level: bool,
    pub overall: bool,
}

impl RelevanceAnnotation {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.overall != (self.entity_level || self.evidence_level) {
            return Err(CorpusError::Integrity(format!(
                "annotation ({}, {}): overall={} but entity={} evidence={}",
                self.claim_id, self.candidate_id, self.overall, self.entity_level, self.evidence_level
            )));
        }
        Ok(())
    }

    pub fn is_relevant(&self, level: RelevanceLevel) -> bool {
        match level {
            RelevanceLevel::Entity => self.entity_level,
            RelevanceLevel::Evidence => self.evidence_level,
            RelevanceLevel::Overall => self.overall,
        }
    }
}

/// Validates already-parsed records; the first violation aborts.
pub fn parse_annotations(records: Vec<RelevanceAnnotation>) -> Result<Vec<RelevanceAnnotation>, CorpusError> {
    for r in &records {
        r.validate()?;
    }
    Ok(records)
}

pub fn load_annotations(path: &Path) -> Result<Vec<RelevanceAnnotation>, CorpusError> {
    let mut out = Vec::new();
    for (line_no, line) in read_lines(path)? {
        let rec: RelevanceAnnotation = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    parse_annotations(out)
}
