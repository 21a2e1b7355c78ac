//! Claim verification from retrieved evidence.
//!
//! Each retrieved item becomes a claim/evidence pair; each pair gets one vote
//! from the oracle (one-level: Yes/No/None in a single call, two-level: a
//! sufficiency question and then a stance question), and the votes are pooled
//! into one verdict per claim by majority.

use crate::corpus::{Claim, Corpus, Modality, VerdictLabel};
use crate::oracle::{
    ModelRole, Oracle, OracleError, OracleRequest, OracleResponse, PromptBudget, PromptTemplate, Task, TokenClass,
};
use crate::rerank::{classify_gais_yn, YnNormalization};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use tracing::warn;

#[derive(Debug, thiserror::Error)]
pub enum VerifyError {
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("degenerate response: {0}")]
    Degenerate(String),
    #[error("cannot vote on an empty list")]
    NoVotes,
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairModality {
    TextOnly,
    Multimodal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prompting {
    OneLevel,
    TwoLevel,
}

/// A retrieved item plus same-document context from the other modality.
#[derive(Debug, Clone, PartialEq)]
pub struct EvidencePair {
    pub claim_id: String,
    pub anchor_id: String,
    pub anchor_modality: Modality,
    pub companions: Vec<String>,
    pub modality: PairModality,
}

impl EvidencePair {
    /// Whether the pair goes to the vision model: it has at least one image.
    pub fn has_image(&self) -> bool {
        self.anchor_modality == Modality::Image || (self.modality == PairModality::Multimodal && !self.companions.is_empty())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompanionCaps {
    pub images_per_sentence: usize,
    pub sentences_per_image: usize,
}

impl Default for CompanionCaps {
    fn default() -> Self {
        CompanionCaps {
            images_per_sentence: 3,
            sentences_per_image: 3,
        }
    }
}

/// Top `cap` ids by claim similarity (descending), ties by id.
fn pick_companions<'a>(
    ids: impl Iterator<Item = &'a str>,
    cap: usize,
    modality: Modality,
    score: &dyn Fn(&str, Modality) -> Option<f64>,
) -> Vec<String> {
    let mut scored: Vec<(f64, &str)> = ids.map(|id| (score(id, modality).unwrap_or(f64::NEG_INFINITY), id)).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    scored.into_iter().take(cap).map(|(_, id)| id.to_string()).collect()
}

/// Builds the pairs for one claim from its selected text and image evidence.
///
/// `score(id, modality)` gives the claim's initial similarity to an item and
/// orders companions.
pub fn form_pairs(
    claim_id: &str,
    text_evidence: &[String],
    image_evidence: &[String],
    corpus: &Corpus,
    modality: PairModality,
    caps: CompanionCaps,
    score: &dyn Fn(&str, Modality) -> Option<f64>,
) -> Result<Vec<EvidencePair>, VerifyError> {
    let mut pairs = Vec::new();
    for sid in text_evidence {
        let doc = corpus
            .doc_of(sid)
            .ok_or_else(|| VerifyError::Integrity(format!("sentence {sid:?} has no document in the corpus")))?;
        let companions = match modality {
            PairModality::TextOnly => Vec::new(),
            PairModality::Multimodal => pick_companions(
                doc.images.iter().map(|i| i.image_id.as_str()),
                caps.images_per_sentence,
                Modality::Image,
                score,
            ),
        };
        pairs.push(EvidencePair {
            claim_id: claim_id.to_string(),
            anchor_id: sid.clone(),
            anchor_modality: Modality::Text,
            companions,
            modality,
        });
    }
    if modality == PairModality::Multimodal {
        for iid in image_evidence {
            let doc = corpus
                .doc_of(iid)
                .ok_or_else(|| VerifyError::Integrity(format!("image {iid:?} has no document in the corpus")))?;
            let companions = pick_companions(
                doc.sentences.iter().map(|s| s.sent_id.as_str()),
                caps.sentences_per_image,
                Modality::Text,
                score,
            );
            pairs.push(EvidencePair {
                claim_id: claim_id.to_string(),
                anchor_id: iid.clone(),
                anchor_modality: Modality::Image,
                companions,
                modality,
            });
        }
    }
    Ok(pairs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelTrace {
    pub level1: TokenClass,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub level2: Option<TokenClass>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vote {
    pub pair: String,
    pub label: VerdictLabel,
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level_trace: Option<LevelTrace>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionBasis {
    Majority,
    ProbabilityTieBreak,
    PriorityTieBreak,
    /// No vote could be cast; the verdict defaults to NEI.
    NoEvidence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub claim_id: String,
    pub label: VerdictLabel,
    pub decision_basis: DecisionBasis,
    pub votes: Vec<Vote>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failed_pairs: Vec<String>,
}

/// Order in which exact ties between labels are resolved, strongest first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<VerdictLabel>", into = "Vec<VerdictLabel>")]
pub struct TiePriority([VerdictLabel; 3]);

impl Default for TiePriority {
    fn default() -> Self {
        TiePriority([VerdictLabel::Nei, VerdictLabel::Refuted, VerdictLabel::Supported])
    }
}

impl TiePriority {
    pub fn new(order: [VerdictLabel; 3]) -> Result<Self, String> {
        let mut seen = [false; 3];
        for l in order {
            if std::mem::replace(&mut seen[l.index()], true) {
                return Err(format!("tie priority lists {l} twice"));
            }
        }
        Ok(TiePriority(order))
    }

    /// Higher wins.
    pub fn rank(&self, label: VerdictLabel) -> usize {
        3 - self.0.iter().position(|l| *l == label).expect("all labels present")
    }

    pub fn order(&self) -> [VerdictLabel; 3] {
        self.0
    }
}

impl TryFrom<Vec<VerdictLabel>> for TiePriority {
    type Error = String;
    fn try_from(v: Vec<VerdictLabel>) -> Result<Self, String> {
        let arr: [VerdictLabel; 3] = v
            .try_into()
            .map_err(|v: Vec<_>| format!("tie priority needs 3 labels, got {}", v.len()))?;
        TiePriority::new(arr)
    }
}

impl From<TiePriority> for Vec<VerdictLabel> {
    fn from(t: TiePriority) -> Self {
        t.0.to_vec()
    }
}

/// Label and winning probability from a Yes/No/None response.
///
/// The three named masses are renormalized; ties go NEI, then Refuted,
/// then Supported.
pub fn classify_one_level(resp: &OracleResponse) -> Result<(VerdictLabel, f64), VerifyError> {
    classify_one_level_with(resp, &TiePriority::default())
}

pub fn classify_one_level_with(resp: &OracleResponse, priority: &TiePriority) -> Result<(VerdictLabel, f64), VerifyError> {
    let m = resp.class_mass;
    let total = m.yes + m.no + m.none;
    if total <= 0.0 {
        return Err(VerifyError::Degenerate("yes, no and none masses are all zero".into()));
    }
    let candidates = [
        (VerdictLabel::Supported, m.yes),
        (VerdictLabel::Refuted, m.no),
        (VerdictLabel::Nei, m.none),
    ];
    let (label, mass) = candidates
        .into_iter()
        .max_by(|a, b| a.1.total_cmp(&b.1).then_with(|| priority.rank(a.0).cmp(&priority.rank(b.0))))
        .expect("three candidates");
    Ok((label, mass / total))
}

fn classify_yes_no(resp: &OracleResponse) -> Result<(TokenClass, f64), VerifyError> {
    let c = classify_gais_yn(resp, YnNormalization::Renormalize)
        .map_err(|e| VerifyError::Degenerate(e.to_string()))?;
    Ok((c.class, c.prob))
}

/// Majority vote; ties go to the label holding the single most confident
/// vote, then to NEI > Refuted > Supported.
pub fn majority_vote(claim_id: &str, votes: Vec<Vote>) -> Result<Verdict, VerifyError> {
    majority_vote_with(claim_id, votes, &TiePriority::default())
}

pub fn majority_vote_with(claim_id: &str, votes: Vec<Vote>, priority: &TiePriority) -> Result<Verdict, VerifyError> {
    if votes.is_empty() {
        return Err(VerifyError::NoVotes);
    }
    let mut tally: BTreeMap<VerdictLabel, (usize, f64)> = BTreeMap::new();
    for v in &votes {
        let e = tally.entry(v.label).or_insert((0, f64::NEG_INFINITY));
        e.0 += 1;
        e.1 = e.1.max(v.confidence);
    }
    let top_count = tally.values().map(|t| t.0).max().unwrap_or(0);
    let tied: Vec<_> = tally.iter().filter(|(_, t)| t.0 == top_count).collect();
    let (label, basis) = if tied.len() == 1 {
        (*tied[0].0, DecisionBasis::Majority)
    } else {
        let best_conf = tied.iter().map(|(_, t)| t.1).fold(f64::NEG_INFINITY, f64::max);
        let strongest: Vec<VerdictLabel> = tied.iter().filter(|(_, t)| t.1 == best_conf).map(|(l, _)| **l).collect();
        if strongest.len() == 1 {
            (strongest[0], DecisionBasis::ProbabilityTieBreak)
        } else {
            let l = strongest
                .into_iter()
                .max_by_key(|l| priority.rank(*l))
                .expect("non-empty");
            (l, DecisionBasis::PriorityTieBreak)
        }
    };
    Ok(Verdict {
        claim_id: claim_id.to_string(),
        label,
        decision_basis: basis,
        votes,
        failed_pairs: Vec::new(),
    })
}

/// Templates for one route (text or vision).
#[derive(Debug, Clone)]
pub struct RouteTemplates {
    pub prompting: Prompting,
    pub one_level: PromptTemplate,
    pub sufficiency: PromptTemplate,
    pub stance: PromptTemplate,
    pub budget: PromptBudget,
}

/// Asks the oracle about each pair and pools the answers per claim.
pub struct Verifier<'a> {
    pub oracle: &'a dyn Oracle,
    pub corpus: &'a Corpus,
    pub text: RouteTemplates,
    pub vision: RouteTemplates,
    pub tie_priority: TiePriority,
}

impl Verifier<'_> {
    /// Evidence text and image locators for a pair's prompt.
    fn pair_content(&self, pair: &EvidencePair) -> (String, Vec<String>) {
        match pair.anchor_modality {
            Modality::Text => {
                let text = self.corpus.sentence(&pair.anchor_id).map(|s| s.text.clone()).unwrap_or_default();
                let uris = if pair.modality == PairModality::Multimodal {
                    pair.companions
                        .iter()
                        .filter_map(|id| self.corpus.image(id))
                        .map(|i| i.uri.clone())
                        .collect()
                } else {
                    Vec::new()
                };
                (text, uris)
            }
            Modality::Image => {
                let image = self.corpus.image(&pair.anchor_id);
                let mut text = pair
                    .companions
                    .iter()
                    .filter_map(|id| self.corpus.sentence(id))
                    .map(|s| s.text.as_str())
                    .collect::<Vec<_>>()
                    .join(" ");
                if text.is_empty() {
                    text = image.and_then(|i| i.alt_text.clone()).unwrap_or_default();
                }
                (text, image.map(|i| vec![i.uri.clone()]).unwrap_or_default())
            }
        }
    }

    fn route(&self, pair: &EvidencePair) -> (&RouteTemplates, ModelRole) {
        if pair.has_image() {
            (&self.vision, ModelRole::Vision)
        } else {
            (&self.text, ModelRole::Text)
        }
    }

    fn ask(
        &self,
        task: Task,
        claim: &Claim,
        pair: &EvidencePair,
        template: &PromptTemplate,
        role: ModelRole,
        budget: PromptBudget,
    ) -> Result<OracleResponse, VerifyError> {
        let (evidence, attachments) = self.pair_content(pair);
        let req = OracleRequest {
            task,
            claim_id: claim.claim_id.clone(),
            candidate_id: pair.anchor_id.clone(),
            role,
            prompt: template.render_pair(&claim.text, &evidence, attachments, budget),
            classes: template.answer_classes.clone(),
        };
        Ok(self.oracle.query(&req)?)
    }

    pub fn verify_one_level(&self, claim: &Claim, pair: &EvidencePair) -> Result<Vote, VerifyError> {
        let (route, role) = self.route(pair);
        let resp = self.ask(Task::Verify, claim, pair, &route.one_level, role, route.budget)?;
        let (label, confidence) = classify_one_level_with(&resp, &self.tie_priority)?;
        Ok(Vote {
            pair: pair.anchor_id.clone(),
            label,
            confidence,
            level_trace: None,
        })
    }

    pub fn verify_two_level(&self, claim: &Claim, pair: &EvidencePair) -> Result<Vote, VerifyError> {
        let (route, role) = self.route(pair);
        let first = self.ask(Task::Sufficiency, claim, pair, &route.sufficiency, role, route.budget)?;
        let (level1, p1) = classify_yes_no(&first)?;
        if level1 != TokenClass::Yes {
            return Ok(Vote {
                pair: pair.anchor_id.clone(),
                label: VerdictLabel::Nei,
                confidence: p1,
                level_trace: Some(LevelTrace { level1, level2: None }),
            });
        }
        let second = self.ask(Task::Stance, claim, pair, &route.stance, role, route.budget)?;
        let (level2, p2) = classify_yes_no(&second)?;
        let label = if level2 == TokenClass::Yes {
            VerdictLabel::Supported
        } else {
            VerdictLabel::Refuted
        };
        Ok(Vote {
            pair: pair.anchor_id.clone(),
            label,
            confidence: p2,
            level_trace: Some(LevelTrace {
                level1,
                level2: Some(level2),
            }),
        })
    }

    pub fn verify_pair(&self, claim: &Claim, pair: &EvidencePair) -> Result<Vote, VerifyError> {
        match self.route(pair).0.prompting {
            Prompting::OneLevel => self.verify_one_level(claim, pair),
            Prompting::TwoLevel => self.verify_two_level(claim, pair),
        }
    }

    /// Votes on all pairs of a claim (in parallel) and pools them.
    ///
    /// Transport failures abort; other per-pair failures are recorded in
    /// `failed_pairs`. A claim without any vote gets NEI.
    pub fn verify_claim(&self, claim: &Claim, pairs: &[EvidencePair]) -> Result<Verdict, VerifyError> {
        let results: Vec<_> = pairs.par_iter().map(|p| self.verify_pair(claim, p)).collect();
        let mut votes = Vec::new();
        let mut failed = Vec::new();
        for (pair, r) in pairs.iter().zip(results) {
            match r {
                Ok(v) => votes.push(v),
                Err(VerifyError::Oracle(e)) if e.is_transport() => return Err(VerifyError::Oracle(e)),
                Err(e) => {
                    warn!(stage = "verify", claim_id = %claim.claim_id, candidate_id = %pair.anchor_id, error = %e, "vote failed");
                    failed.push(pair.anchor_id.clone());
                }
            }
        }
        let mut verdict = if votes.is_empty() {
            Verdict {
                claim_id: claim.claim_id.clone(),
                label: VerdictLabel::Nei,
                decision_basis: DecisionBasis::NoEvidence,
                votes,
                failed_pairs: Vec::new(),
            }
        } else {
            majority_vote_with(&claim.claim_id, votes, &self.tie_priority)?
        };
        verdict.failed_pairs = failed;
        Ok(verdict)
    }
}
