use super::CorpusError;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;
use std::str::FromStr;

/// Three-way verdict for a claim.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VerdictLabel {
    Refuted = 0,
    Supported = 1,
    Nei = 2,
}

impl VerdictLabel {
    pub const ALL: [VerdictLabel; 3] = [VerdictLabel::Refuted, VerdictLabel::Supported, VerdictLabel::Nei];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            VerdictLabel::Refuted => "refuted",
            VerdictLabel::Supported => "supported",
            VerdictLabel::Nei => "nei",
        }
    }
}

impl fmt::Display for VerdictLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VerdictLabel {
    type Err = CorpusError;

    /// Accepts the canonical lowercase names and the five Factify labels.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "refuted" => Ok(VerdictLabel::Refuted),
            "supported" => Ok(VerdictLabel::Supported),
            "nei" => Ok(VerdictLabel::Nei),
            _ => collapse_factify_labels(s),
        }
    }
}

impl Serialize for VerdictLabel {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for VerdictLabel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Maps the five-way Factify labels onto the three verdict classes.
pub fn collapse_factify_labels(raw: &str) -> Result<VerdictLabel, CorpusError> {
    match raw {
        "Support_Text" | "Support_Multimodal" => Ok(VerdictLabel::Supported),
        "Insufficient_Text" | "Insufficient_Multimodal" => Ok(VerdictLabel::Nei),
        "Refute" => Ok(VerdictLabel::Refuted),
        other => Err(CorpusError::UnknownLabel(other.to_string())),
    }
}
