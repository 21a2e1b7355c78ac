//! Evaluation report: a flat list of metric rows plus text and CSV renderings.

use crate::corpus::VerdictLabel;
use crate::metrics::{ClassificationMetrics, EmptyGoldPolicy, RetrievalMetrics};
use serde::Serialize;
use std::fmt::Write as _;

pub const AP_DENOMINATOR: &str = "min(|gold|, K)";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub metric: String,
    #[serde(rename = "K", skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    pub modality: String,
    /// `initial`, `reranked` or `verdict`.
    pub ranking: String,
    pub value: f64,
    pub n_claims: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationSummary {
    pub pair_modality: String,
    pub metrics: ClassificationMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub relevance_source: String,
    pub ap_denominator: &'static str,
    pub empty_gold: EmptyGoldPolicy,
    pub rows: Vec<MetricRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verification: Option<VerificationSummary>,
    /// Top-K candidates that had no annotation, counted as not relevant.
    pub unannotated_candidates: usize,
    pub notes: Vec<String>,
}

impl Report {
    pub fn new(relevance_source: impl Into<String>, empty_gold: EmptyGoldPolicy) -> Self {
        Report {
            relevance_source: relevance_source.into(),
            ap_denominator: AP_DENOMINATOR,
            empty_gold,
            rows: Vec::new(),
            verification: None,
            unannotated_candidates: 0,
            notes: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn push_retrieval(&mut self, modality: &str, ranking: &str, m: &RetrievalMetrics) {
        for (metric, value) in [("precision", m.precision), ("recall", m.recall), ("map", m.map)] {
            self.rows.push(MetricRow {
                metric: metric.into(),
                k: Some(m.k),
                modality: modality.into(),
                ranking: ranking.into(),
                value,
                n_claims: m.n_claims,
            });
        }
    }

    pub fn push_classification(&mut self, pair_modality: &str, m: ClassificationMetrics) {
        for (label, s) in &m.per_class {
            for (metric, value) in [("precision", s.precision), ("recall", s.recall), ("f1", s.f1)] {
                self.rows.push(MetricRow {
                    metric: format!("{metric}_{}", label.as_str()),
                    k: None,
                    modality: pair_modality.into(),
                    ranking: "verdict".into(),
                    value,
                    n_claims: m.n_claims,
                });
            }
        }
        self.rows.push(MetricRow {
            metric: "micro_f1".into(),
            k: None,
            modality: pair_modality.into(),
            ranking: "verdict".into(),
            value: m.micro_f1,
            n_claims: m.n_claims,
        });
        self.verification = Some(VerificationSummary {
            pair_modality: pair_modality.into(),
            metrics: m,
        });
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,K,modality,ranking,value,n_claims\n");
        for r in &self.rows {
            let k = r.k.map(|k| k.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{k},{},{},{},{}", r.metric, r.modality, r.ranking, r.value, r.n_claims);
        }
        out
    }

    /// Aligned tables: retrieval in percent with 2 decimals, verification
    /// with 3 decimals.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let retrieval: Vec<&MetricRow> = self.rows.iter().filter(|r| r.k.is_some()).collect();
        if !retrieval.is_empty() {
            let _ = writeln!(
                out,
                "Retrieval (relevance: {}, AP denominator: {})",
                self.relevance_source, self.ap_denominator
            );
            let _ = writeln!(out, "{:<9} {:<9} {:>3} {:>7} {:>7} {:>7} {:>7}", "modality", "ranking", "K", "Pre", "Rec", "mAP", "claims");
            // rows come in (precision, recall, map) triples
            for t in retrieval.chunks(3) {
                let _ = writeln!(
                    out,
                    "{:<9} {:<9} {:>3} {:>7.2} {:>7.2} {:>7.2} {:>7}",
                    t[0].modality,
                    t[0].ranking,
                    t[0].k.unwrap_or(0),
                    t[0].value * 100.0,
                    t[1].value * 100.0,
                    t[2].value * 100.0,
                    t[0].n_claims
                );
            }
        }
        if let Some(v) = &self.verification {
            if !out.is_empty() {
                out.push('\n');
            }
            let m = &v.metrics;
            let _ = writeln!(out, "Verification (pairs: {}, claims: {})", v.pair_modality, m.n_claims);
            let _ = writeln!(out, "{:<10} {:>6} {:>6} {:>6} {:>8}", "class", "Pre", "Rec", "F1", "support");
            for (label, s) in &m.per_class {
                let _ = writeln!(
                    out,
                    "{:<10} {:>6.3} {:>6.3} {:>6.3} {:>8}",
                    label.as_str(),
                    s.precision,
                    s.recall,
                    s.f1,
                    s.support
                );
            }
            let _ = writeln!(out, "{:<10} {:>6.3}", "micro F1", m.micro_f1);
            let _ = writeln!(out, "\nConfusion (rows: gold, columns: predicted)");
            let _ = write!(out, "{:<10}", "");
            for l in VerdictLabel::ALL {
                let _ = write!(out, " {:>9}", l.as_str());
            }
            out.push('\n');
            for g in VerdictLabel::ALL {
                let _ = write!(out, "{:<10}", g.as_str());
                for p in VerdictLabel::ALL {
                    let _ = write!(out, " {:>9}", m.confusion[g.index()][p.index()]);
                }
                out.push('\n');
            }
        }
        if !self.notes.is_empty() {
            out.push_str("\nNotes\n");
            for n in &self.notes {
                let _ = writeln!(out, "- {n}");
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    #[test]
    fn renders_percent_with_two_decimals() {
        let mut r = Report::new("gold", EmptyGoldPolicy::Exclude);
        r.push_retrieval(
            "text",
            "initial",
            &RetrievalMetrics {
                k: 1,
                precision: 0.2714,
                recall: 0.1,
                map: 0.2714,
                n_claims: 3,
            },
        );
        let t = r.to_text();
        assert!(t.contains("  27.14"), "{t}");
        let j: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(j["rows"][0]["K"], 1);
        assert_eq!(j["rows"][0]["metric"], "precision");
        assert!(r.to_csv().lines().nth(1).unwrap().starts_with("precision,1,text,initial,0.2714,3"));
    }

    #[test]
    fn classification_uses_three_decimals() {
        let gold: BTreeMap<String, VerdictLabel> = [("a".to_string(), VerdictLabel::Supported), ("b".to_string(), VerdictLabel::Nei)].into();
        let pred: BTreeMap<String, VerdictLabel> = [("a".to_string(), VerdictLabel::Supported), ("b".to_string(), VerdictLabel::Supported)].into();
        let m = crate::metrics::classification_report(&pred, &gold).unwrap();
        let mut r = Report::new("gold", EmptyGoldPolicy::Exclude);
        r.push_classification("text_only", m);
        let t = r.to_text();
        assert!(t.contains("micro F1    0.500"), "{t}");
        assert!(t.contains("supported   0.500  1.000  0.667"), "{t}");
    }
}
