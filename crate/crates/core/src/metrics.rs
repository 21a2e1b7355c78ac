//! Retrieval metrics (P@K, R@K, AP@K) and verification metrics (per-class
//! P/R/F1, micro F1).
//!
//! AP@K divides by `min(|gold|, K)`, so a ranking whose first
//! `min(|gold|, K)` items are all relevant scores exactly 1.

use crate::corpus::{Modality, RelevanceAnnotation, RelevanceLevel, VerdictLabel};
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet, HashSet};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("K must be at least 1")]
    ZeroK,
    #[error("no claim with a non-empty gold set")]
    NoEligibleClaims,
    #[error("prediction for claim {0:?} has no gold label")]
    UnknownClaim(String),
    #[error("no overlap between predictions and gold labels")]
    EmptyOverlap,
    #[error("{0}")]
    InvalidAnnotation(String),
}

/// Precision and recall of one ranking at one cut-off.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecisionRecall {
    pub precision: f64,
    pub recall: f64,
    /// Set when the ranking was empty.
    pub empty_ranking: bool,
}

fn hits<S: AsRef<str>>(ranking: &[S], gold: &HashSet<&str>, k: usize) -> usize {
    ranking.iter().take(k).filter(|id| gold.contains(id.as_ref())).count()
}

fn gold_set<G: AsRef<str>>(gold: &[G]) -> HashSet<&str> {
    gold.iter().map(AsRef::as_ref).collect()
}

pub fn precision_recall_at_k<S: AsRef<str>, G: AsRef<str>>(
    ranking: &[S],
    gold: &[G],
    k: usize,
) -> Result<PrecisionRecall, MetricsError> {
    if k == 0 {
        return Err(MetricsError::ZeroK);
    }
    let gold = gold_set(gold);
    if ranking.is_empty() || gold.is_empty() {
        return Ok(PrecisionRecall {
            precision: 0.0,
            recall: 0.0,
            empty_ranking: ranking.is_empty(),
        });
    }
    let h = hits(ranking, &gold, k) as f64;
    Ok(PrecisionRecall {
        precision: h / k as f64,
        recall: h / gold.len() as f64,
        empty_ranking: false,
    })
}

pub fn average_precision_at_k<S: AsRef<str>, G: AsRef<str>>(ranking: &[S], gold: &[G], k: usize) -> Result<f64, MetricsError> {
    if k == 0 {
        return Err(MetricsError::ZeroK);
    }
    let gold = gold_set(gold);
    if gold.is_empty() {
        return Ok(0.0);
    }
    let mut found = 0usize;
    let mut sum = 0.0;
    for (i, id) in ranking.iter().take(k).enumerate() {
        if gold.contains(id.as_ref()) {
            found += 1;
            sum += found as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / gold.len().min(k) as f64)
}

/// How claims with an empty gold set enter the averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EmptyGoldPolicy {
    #[default]
    Exclude,
    /// Count them with P = R = AP = 0.
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RetrievalMetrics {
    pub k: usize,
    pub precision: f64,
    pub recall: f64,
    pub map: f64,
    pub n_claims: usize,
}

/// One claim's ranking and its relevant ids.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RankedClaim {
    pub claim_id: String,
    pub ranking: Vec<String>,
    pub gold: BTreeSet<String>,
}

/// Unweighted mean of per-claim P@K, R@K and AP@K, folded in claim id order.
pub fn map_at_k(claims: &[RankedClaim], k: usize, policy: EmptyGoldPolicy) -> Result<RetrievalMetrics, MetricsError> {
    if k == 0 {
        return Err(MetricsError::ZeroK);
    }
    let mut ordered: Vec<&RankedClaim> = claims.iter().collect();
    ordered.sort_by(|a, b| a.claim_id.cmp(&b.claim_id));
    let (mut p, mut r, mut ap, mut n) = (0.0, 0.0, 0.0, 0usize);
    for c in ordered {
        if c.gold.is_empty() {
            if policy == EmptyGoldPolicy::Zero {
                n += 1;
            }
            continue;
        }
        let gold: Vec<&str> = c.gold.iter().map(String::as_str).collect();
        let pr = precision_recall_at_k(&c.ranking, &gold, k)?;
        p += pr.precision;
        r += pr.recall;
        ap += average_precision_at_k(&c.ranking, &gold, k)?;
        n += 1;
    }
    if n == 0 {
        return Err(MetricsError::NoEligibleClaims);
    }
    let nf = n as f64;
    Ok(RetrievalMetrics {
        k,
        precision: p / nf,
        recall: r / nf,
        map: ap / nf,
        n_claims: n,
    })
}

/// Ranked candidates that had no annotation for their claim.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CoverageGap {
    pub claim_id: String,
    pub candidate_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedEvaluation {
    pub metrics: RetrievalMetrics,
    /// Annotated-relevant ids per claim at the chosen level.
    pub gold: BTreeMap<String, BTreeSet<String>>,
    pub unannotated: Vec<CoverageGap>,
    pub missing_claims: Vec<String>,
}

/// Relevant ids per claim at one annotation level, for one modality.
pub fn annotated_gold(
    annotations: &[RelevanceAnnotation],
    modality: Modality,
    level: RelevanceLevel,
) -> BTreeMap<String, BTreeSet<String>> {
    let mut gold: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for a in annotations.iter().filter(|a| a.modality == modality) {
        let entry = gold.entry(a.claim_id.clone()).or_default();
        if a.is_relevant(level) {
            entry.insert(a.candidate_id.clone());
        }
    }
    gold
}

/// Metrics against human annotations instead of dataset gold.
///
/// Claims without any annotation are skipped and reported; top-K candidates
/// without an annotation count as not relevant and are reported.
pub fn evaluate_with_annotations(
    rankings: &BTreeMap<String, Vec<String>>,
    annotations: &[RelevanceAnnotation],
    modality: Modality,
    level: RelevanceLevel,
    k: usize,
    policy: EmptyGoldPolicy,
) -> Result<AnnotatedEvaluation, MetricsError> {
    for a in annotations {
        a.validate().map_err(|e| MetricsError::InvalidAnnotation(e.to_string()))?;
    }
    let gold = annotated_gold(annotations, modality, level);
    let annotated: HashSet<(&str, &str)> = annotations
        .iter()
        .filter(|a| a.modality == modality)
        .map(|a| (a.claim_id.as_str(), a.candidate_id.as_str()))
        .collect();
    let mut claims = Vec::new();
    let mut unannotated = Vec::new();
    let mut missing_claims = Vec::new();
    for (claim_id, ranking) in rankings {
        let Some(g) = gold.get(claim_id) else {
            missing_claims.push(claim_id.clone());
            continue;
        };
        for cand in ranking.iter().take(k) {
            if !annotated.contains(&(claim_id.as_str(), cand.as_str())) {
                unannotated.push(CoverageGap {
                    claim_id: claim_id.clone(),
                    candidate_id: cand.clone(),
                });
            }
        }
        claims.push(RankedClaim {
            claim_id: claim_id.clone(),
            ranking: ranking.clone(),
            gold: g.clone(),
        });
    }
    let metrics = map_at_k(&claims, k, policy)?;
    Ok(AnnotatedEvaluation {
        metrics,
        gold,
        unannotated,
        missing_claims,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationMetrics {
    pub per_class: BTreeMap<VerdictLabel, ClassScores>,
    pub micro_f1: f64,
    /// `confusion[gold][predicted]`, indexed by label value.
    pub confusion: [[usize; 3]; 3],
    pub n_claims: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn classification_report(
    predictions: &BTreeMap<String, VerdictLabel>,
    gold: &BTreeMap<String, VerdictLabel>,
) -> Result<ClassificationMetrics, MetricsError> {
    let mut confusion = [[0usize; 3]; 3];
    for (claim, pred) in predictions {
        let g = gold.get(claim).ok_or_else(|| MetricsError::UnknownClaim(claim.clone()))?;
        confusion[g.index()][pred.index()] += 1;
    }
    let n: usize = confusion.iter().flatten().sum();
    if n == 0 {
        return Err(MetricsError::EmptyOverlap);
    }
    let mut per_class = BTreeMap::new();
    let (mut tp_all, mut fp_all, mut fn_all) = (0, 0, 0);
    for label in VerdictLabel::ALL {
        let i = label.index();
        let tp = confusion[i][i];
        let support: usize = confusion[i].iter().sum();
        let predicted: usize = (0..3).map(|g| confusion[g][i]).sum();
        let (p, r) = (ratio(tp, predicted), ratio(tp, support));
        per_class.insert(
            label,
            ClassScores {
                precision: p,
                recall: r,
                f1: f1(p, r),
                support,
            },
        );
        tp_all += tp;
        fp_all += predicted - tp;
        fn_all += support - tp;
    }
    let micro_p = ratio(tp_all, tp_all + fp_all);
    let micro_r = ratio(tp_all, tp_all + fn_all);
    Ok(ClassificationMetrics {
        per_class,
        micro_f1: f1(micro_p, micro_r),
        confusion,
        n_claims: n,
    })
}

/// Percent with two decimals, as in report tables.
pub fn percent(v: f64) -> String {
    format!("{:.2}", v * 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn precision_recall_examples() {
        let pr = precision_recall_at_k(&["a", "b", "c"], &["b"], 2).unwrap();
        assert_eq!((pr.precision, pr.recall), (0.5, 1.0));

        let pr = precision_recall_at_k(&["a", "b", "c"], &["a", "b"], 2).unwrap();
        assert_eq!((pr.precision, pr.recall), (1.0, 1.0));

        let pr = precision_recall_at_k(&["a", "b", "c"], &["z"], 3).unwrap();
        assert_eq!((pr.precision, pr.recall), (0.0, 0.0));

        let pr = precision_recall_at_k::<&str, _>(&[], &["z"], 3).unwrap();
        assert!(pr.empty_ranking);
        assert_eq!(precision_recall_at_k(&["a"], &["a"], 0), Err(MetricsError::ZeroK));
    }

    #[test]
    fn average_precision_examples() {
        assert_eq!(average_precision_at_k(&["a", "b", "c"], &["b"], 3).unwrap(), 0.5);
        assert_eq!(average_precision_at_k(&["g", "x"], &["g"], 2).unwrap(), 1.0);
        let ap = average_precision_at_k(&["g1", "x", "g2"], &["g1", "g2"], 3).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert!((ap - 0.8333).abs() < 1e-4);
    }

    fn rc(id: &str, ranking: &[&str], gold: &[&str]) -> RankedClaim {
        RankedClaim {
            claim_id: id.into(),
            ranking: ranking.iter().map(|s| s.to_string()).collect(),
            gold: gold.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn map_examples() {
        let claims = [rc("c1", &["a", "b"], &["a"]), rc("c2", &["a", "b"], &["b"])];
        let m = map_at_k(&claims, 2, EmptyGoldPolicy::Exclude).unwrap();
        assert_eq!(m.map, 0.75);
        assert_eq!(m.n_claims, 2);

        let single = map_at_k(&claims[1..], 2, EmptyGoldPolicy::Exclude).unwrap();
        assert_eq!(single.map, 0.5);

        assert_eq!(percent(0.2714), "27.14");
    }

    #[test]
    fn empty_gold_policy() {
        let claims = [rc("c1", &["a"], &["a"]), rc("c2", &["a"], &[])];
        assert_eq!(map_at_k(&claims, 1, EmptyGoldPolicy::Exclude).unwrap().map, 1.0);
        let z = map_at_k(&claims, 1, EmptyGoldPolicy::Zero).unwrap();
        assert_eq!((z.map, z.n_claims), (0.5, 2));
        assert_eq!(
            map_at_k(&claims[1..], 1, EmptyGoldPolicy::Exclude),
            Err(MetricsError::NoEligibleClaims)
        );
    }

    fn ann(claim: &str, cand: &str, entity: bool, evidence: bool) -> RelevanceAnnotation {
        RelevanceAnnotation {
            claim_id: claim.into(),
            candidate_id: cand.into(),
            modality: Modality::Text,
            entity_level: entity,
            evidence_level: evidence,
            overall: entity || evidence,
        }
    }

    #[test]
    fn annotation_levels() {
        let anns = [ann("c1", "x", true, false), ann("c1", "y", false, true)];
        let rankings: BTreeMap<_, _> = [("c1".to_string(), vec!["x".to_string(), "z".to_string()])].into();
        let ev = evaluate_with_annotations(&rankings, &anns, Modality::Text, RelevanceLevel::Evidence, 1, EmptyGoldPolicy::Exclude).unwrap();
        assert_eq!(ev.metrics.precision, 0.0, "entity-only match is not evidence");
        let ov = evaluate_with_annotations(&rankings, &anns, Modality::Text, RelevanceLevel::Overall, 1, EmptyGoldPolicy::Exclude).unwrap();
        assert_eq!(ov.metrics.precision, 1.0);

        let ov2 = evaluate_with_annotations(&rankings, &anns, Modality::Text, RelevanceLevel::Overall, 2, EmptyGoldPolicy::Exclude).unwrap();
        assert_eq!(ov2.unannotated, [CoverageGap { claim_id: "c1".into(), candidate_id: "z".into() }]);
    }

    #[test]
    fn unannotated_claim_is_excluded() {
        let anns = [ann("c1", "x", true, true)];
        let rankings: BTreeMap<_, _> = [
            ("c1".to_string(), vec!["x".to_string()]),
            ("c2".to_string(), vec!["x".to_string()]),
        ]
        .into();
        let ev = evaluate_with_annotations(&rankings, &anns, Modality::Text, RelevanceLevel::Overall, 1, EmptyGoldPolicy::Exclude).unwrap();
        assert_eq!(ev.missing_claims, ["c2"]);
        assert_eq!(ev.metrics.n_claims, 1);
        assert_eq!(ev.metrics.precision, 1.0);
    }

    fn labels(v: &[(usize, VerdictLabel)]) -> BTreeMap<String, VerdictLabel> {
        v.iter().map(|(i, l)| (format!("c{i}"), *l)).collect()
    }

    #[test]
    fn perfect_predictions() {
        let gold: Vec<_> = (0..9).map(|i| (i, VerdictLabel::ALL[i % 3])).collect();
        let m = classification_report(&labels(&gold), &labels(&gold)).unwrap();
        assert_eq!(m.micro_f1, 1.0);
        assert!(m.per_class.values().all(|s| s.precision == 1.0 && s.recall == 1.0 && s.f1 == 1.0));
    }

    #[test]
    fn all_supported_predictions() {
        let gold: Vec<_> = (0..9).map(|i| (i, VerdictLabel::ALL[i % 3])).collect();
        let pred: Vec<_> = (0..9).map(|i| (i, VerdictLabel::Supported)).collect();
        let m = classification_report(&labels(&pred), &labels(&gold)).unwrap();
        let s = m.per_class[&VerdictLabel::Supported];
        assert!((s.precision - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.recall, 1.0);
        assert!((m.micro_f1 - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.per_class[&VerdictLabel::Refuted].f1, 0.0);
        // rows sum to per-class support
        for l in VerdictLabel::ALL {
            assert_eq!(m.confusion[l.index()].iter().sum::<usize>(), m.per_class[&l].support);
        }
    }

    #[test]
    fn classification_errors() {
        let gold = labels(&[(0, VerdictLabel::Nei)]);
        let pred = labels(&[(5, VerdictLabel::Nei)]);
        assert_eq!(classification_report(&pred, &gold), Err(MetricsError::UnknownClaim("c5".into())));
        assert_eq!(classification_report(&BTreeMap::new(), &gold), Err(MetricsError::EmptyOverlap));
    }

    proptest! {
        #[test]
        fn ap_is_monotone_under_upward_gold_swaps(
            len in 2usize..10,
            gold_mask in 0u32..1024,
            k in 1usize..12,
            pos in 0usize..9,
        ) {
            let ranking: Vec<String> = (0..len).map(|i| format!("d{i}")).collect();
            let gold: Vec<String> = (0..len).filter(|i| gold_mask & (1 << i) != 0).map(|i| format!("d{i}")).collect();
            prop_assume!(!gold.is_empty());
            let pos = pos % (len - 1);
            // swap a gold item at pos+1 upward past a non-gold item at pos
            prop_assume!(!gold.contains(&ranking[pos]) && gold.contains(&ranking[pos + 1]));
            let mut swapped = ranking.clone();
            swapped.swap(pos, pos + 1);
            let before = average_precision_at_k(&ranking, &gold, k).unwrap();
            let after = average_precision_at_k(&swapped, &gold, k).unwrap();
            prop_assert!(after >= before - 1e-15);
            prop_assert!((0.0..=1.0).contains(&after));
        }

        #[test]
        fn micro_f1_equals_accuracy(pairs in prop::collection::vec((0usize..3, 0usize..3), 1..60)) {
            let gold: BTreeMap<String, VerdictLabel> = pairs.iter().enumerate().map(|(i, (g, _))| (format!("c{i}"), VerdictLabel::ALL[*g])).collect();
            let pred: BTreeMap<String, VerdictLabel> = pairs.iter().enumerate().map(|(i, (_, p))| (format!("c{i}"), VerdictLabel::ALL[*p])).collect();
            let m = classification_report(&pred, &gold).unwrap();
            let acc = pairs.iter().filter(|(g, p)| g == p).count() as f64 / pairs.len() as f64;
            prop_assert!((m.micro_f1 - acc).abs() < 1e-12);
        }
    }
}
