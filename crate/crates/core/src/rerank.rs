//! Re-ranking of the initial candidate pool from oracle judgements.
//!
//! Two families of strategy:
//!
//! * **IRS** keeps the initial cosine scores and only partitions the pool:
//!   every candidate the oracle called relevant goes above every other one.
//! * **GAIS** turns the first-token probabilities into a relevance score
//!   `p_j` and sorts by it:
//!
//!   ```text
//!   p_j = p(Yes)               if the answer is Yes
//!   p_j = lambda * (1 - p(No)) if the answer is No
//!   ```
//!
//!   `ALL`, `YN` and `YNO` differ only in how the answer class and its
//!   probability are read off the response.
//!
//! Ties are broken by `(p_j desc, initial score desc, id asc)`. Candidates
//! whose oracle call failed stay in the output, flagged, below everything else.

use crate::corpus::Modality;
use crate::index::RankedCandidate;
use crate::oracle::{OracleResponse, TokenClass};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;

pub const DEFAULT_LAMBDA: f64 = 1e-4;
/// Largest lambda that keeps every YN No-score below every YN Yes-score.
pub const MAX_LAMBDA: f64 = 0.01;

pub const FLAG_ORACLE_FAILED: &str = "oracle_failed";
pub const FLAG_NON_YN_OUTPUT: &str = "non_yes_no_output";
pub const FLAG_OTHER_WINS: &str = "other_wins";
pub const FLAG_CLASSIFIER_ERROR: &str = "classifier_error";

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RerankError {
    #[error("class {0} cannot be scored; only yes/no answers enter the relevance score")]
    UnscorableClass(TokenClass),
    #[error("degenerate response: yes and no masses are both zero")]
    Degenerate,
    #[error("invalid rerank config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Irs,
    GaisAll,
    GaisYn,
    GaisYno,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Irs => "irs",
            Strategy::GaisAll => "gais_all",
            Strategy::GaisYn => "gais_yn",
            Strategy::GaisYno => "gais_yno",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = RerankError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "irs" => Ok(Strategy::Irs),
            "gais_all" => Ok(Strategy::GaisAll),
            "gais_yn" => Ok(Strategy::GaisYn),
            "gais_yno" => Ok(Strategy::GaisYno),
            other => Err(RerankError::Config(format!("unknown strategy {other:?}"))),
        }
    }
}

/// How YN turns the two class masses into a probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YnNormalization {
    /// `p(Yes) = m_yes / (m_yes + m_no)`
    #[default]
    Renormalize,
    /// `p(Yes) = exp(m_yes) / (exp(m_yes) + exp(m_no))`
    Softmax,
}

/// YNO handling when the residual class outweighs both Yes and No.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YnoOtherPolicy {
    /// Decide between Yes and No only.
    #[default]
    Exclude,
    /// Flag the candidate and rank it last.
    RankLast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RerankConfig {
    pub strategy: Strategy,
    pub lambda: f64,
    pub yn_normalization: YnNormalization,
    pub yno_other: YnoOtherPolicy,
}

impl Default for RerankConfig {
    fn default() -> Self {
        RerankConfig {
            strategy: Strategy::GaisYn,
            lambda: DEFAULT_LAMBDA,
            yn_normalization: YnNormalization::Renormalize,
            yno_other: YnoOtherPolicy::Exclude,
        }
    }
}

impl RerankConfig {
    pub fn validate(&self) -> Result<(), RerankError> {
        if !(self.lambda > 0.0 && self.lambda <= MAX_LAMBDA) {
            return Err(RerankError::Config(format!(
                "lambda must be in (0, {MAX_LAMBDA}], got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Relevance score from an answer class and its probability.
pub fn relevance_score(class: TokenClass, p_yes: f64, p_no: f64, lambda: f64) -> Result<f64, RerankError> {
    match class {
        TokenClass::Yes => Ok(p_yes),
        TokenClass::No => Ok(lambda * (1.0 - p_no)),
        other => Err(RerankError::UnscorableClass(other)),
    }
}

/// Answer class (Yes or No) with the probability that feeds the score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Classified {
    pub class: TokenClass,
    pub prob: f64,
    pub flag: Option<&'static str>,
}

impl Classified {
    fn new(class: TokenClass, prob: f64) -> Self {
        Classified { class, prob, flag: None }
    }

    pub fn score(&self, lambda: f64) -> f64 {
        match self.class {
            TokenClass::Yes => self.prob,
            _ => lambda * (1.0 - self.prob),
        }
    }
}

/// Full-vocabulary probability of the generated token.
///
/// A generated token outside Yes/No is read as No with `p(No)` taken from
/// the No class mass, and flagged.
pub fn classify_gais_all(resp: &OracleResponse) -> Classified {
    match resp.generated_class {
        TokenClass::Yes => Classified::new(TokenClass::Yes, resp.generated_token_prob),
        TokenClass::No => Classified::new(TokenClass::No, resp.generated_token_prob),
        _ => Classified {
            class: TokenClass::No,
            prob: resp.class_mass.no,
            flag: Some(FLAG_NON_YN_OUTPUT),
        },
    }
}

/// Two-class normalization over the Yes and No masses. An exact tie is No.
pub fn classify_gais_yn(resp: &OracleResponse, mode: YnNormalization) -> Result<Classified, RerankError> {
    let (y, n) = (resp.class_mass.yes, resp.class_mass.no);
    if y + n <= 0.0 {
        return Err(RerankError::Degenerate);
    }
    let (p_yes, p_no) = match mode {
        YnNormalization::Renormalize => (y / (y + n), n / (y + n)),
        YnNormalization::Softmax => {
            let p_yes = 1.0 / (1.0 + (n - y).exp());
            (p_yes, 1.0 / (1.0 + (y - n).exp()))
        }
    };
    Ok(if p_yes > 0.5 {
        Classified::new(TokenClass::Yes, p_yes)
    } else {
        Classified::new(TokenClass::No, p_no)
    })
}

/// Three-way masses (Yes, No, residual); the decision looks at Yes vs No
/// only and an exact tie is No.
pub fn classify_gais_yno(resp: &OracleResponse, policy: YnoOtherPolicy) -> Classified {
    let y = resp.class_mass.yes;
    let n = resp.class_mass.no;
    let other = (1.0 - y - n).max(0.0);
    let mut c = if y > n {
        Classified::new(TokenClass::Yes, y)
    } else {
        Classified::new(TokenClass::No, n)
    };
    if policy == YnoOtherPolicy::RankLast && other > y && other > n {
        c.flag = Some(FLAG_OTHER_WINS);
    }
    c
}

/// Per-candidate oracle result, aligned with the candidate list by index.
pub type OracleOutcome = Result<OracleResponse, String>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleClass {
    Yes,
    No,
    Other,
}

impl From<TokenClass> for OracleClass {
    fn from(c: TokenClass) -> Self {
        match c {
            TokenClass::Yes => OracleClass::Yes,
            TokenClass::No => OracleClass::No,
            _ => OracleClass::Other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankedCandidate {
    pub claim_id: String,
    pub candidate_id: String,
    pub modality: Modality,
    pub initial_score: f64,
    pub initial_rank: usize,
    pub oracle_class: OracleClass,
    /// `p_j` for GAIS strategies; IRS has no relevance score.
    pub relevance_score: Option<f64>,
    pub final_rank: usize,
    pub flags: Vec<String>,
}

impl RerankedCandidate {
    fn from_initial(claim_id: &str, c: &RankedCandidate) -> Self {
        RerankedCandidate {
            claim_id: claim_id.to_string(),
            candidate_id: c.candidate_id.clone(),
            modality: c.modality,
            initial_score: c.initial_score,
            initial_rank: c.initial_rank,
            oracle_class: OracleClass::Other,
            relevance_score: None,
            final_rank: 0,
            flags: Vec::new(),
        }
    }
}

fn by_initial(a: &RerankedCandidate, b: &RerankedCandidate) -> Ordering {
    b.initial_score
        .total_cmp(&a.initial_score)
        .then_with(|| a.candidate_id.cmp(&b.candidate_id))
}

fn assign_ranks(mut items: Vec<(bool, RerankedCandidate)>, cmp: impl Fn(&RerankedCandidate, &RerankedCandidate) -> Ordering) -> Vec<RerankedCandidate> {
    // sunk (failed) candidates always go last
    items.sort_by(|(sa, a), (sb, b)| sa.cmp(sb).then_with(|| cmp(a, b)));
    items
        .into_iter()
        .enumerate()
        .map(|(i, (_, mut c))| {
            c.final_rank = i + 1;
            c
        })
        .collect()
}

/// Yes-answered candidates first; initial cosine order inside each block.
pub fn rerank_irs(claim_id: &str, candidates: &[RankedCandidate], outcomes: &[OracleOutcome]) -> Vec<RerankedCandidate> {
    assert_eq!(candidates.len(), outcomes.len(), "one oracle outcome per candidate");
    let items = candidates
        .iter()
        .zip(outcomes)
        .map(|(c, o)| {
            let mut r = RerankedCandidate::from_initial(claim_id, c);
            match o {
                Ok(resp) => {
                    r.oracle_class = resp.generated_class.into();
                    (false, r)
                }
                Err(_) => {
                    r.flags.push(FLAG_ORACLE_FAILED.into());
                    (true, r)
                }
            }
        })
        .collect();
    assign_ranks(items, |a, b| {
        let block = |c: &RerankedCandidate| c.oracle_class != OracleClass::Yes;
        block(a).cmp(&block(b)).then_with(|| by_initial(a, b))
    })
}

fn classify(resp: &OracleResponse, config: &RerankConfig) -> Result<Classified, RerankError> {
    match config.strategy {
        Strategy::GaisAll => Ok(classify_gais_all(resp)),
        Strategy::GaisYn => classify_gais_yn(resp, config.yn_normalization),
        Strategy::GaisYno => Ok(classify_gais_yno(resp, config.yno_other)),
        Strategy::Irs => unreachable!("IRS does not classify"),
    }
}

/// Sorts by `p_j` under the configured GAIS variant.
pub fn rerank_gais(
    claim_id: &str,
    candidates: &[RankedCandidate],
    outcomes: &[OracleOutcome],
    config: &RerankConfig,
) -> Vec<RerankedCandidate> {
    assert_eq!(candidates.len(), outcomes.len(), "one oracle outcome per candidate");
    let items = candidates
        .iter()
        .zip(outcomes)
        .map(|(c, o)| {
            let mut r = RerankedCandidate::from_initial(claim_id, c);
            let classified = match o {
                Ok(resp) => classify(resp, config).map_err(|_| FLAG_CLASSIFIER_ERROR),
                Err(_) => Err(FLAG_ORACLE_FAILED),
            };
            match classified {
                Ok(cl) => {
                    r.oracle_class = cl.class.into();
                    if let Some(f) = cl.flag {
                        r.flags.push(f.into());
                    }
                    if cl.flag == Some(FLAG_OTHER_WINS) {
                        r.oracle_class = OracleClass::Other;
                        r.relevance_score = Some(0.0);
                        return (true, r);
                    }
                    r.relevance_score = Some(cl.score(config.lambda));
                    (false, r)
                }
                Err(flag) => {
                    r.flags.push(flag.into());
                    r.relevance_score = Some(0.0);
                    (true, r)
                }
            }
        })
        .collect();
    assign_ranks(items, |a, b| {
        let pa = a.relevance_score.unwrap_or(0.0);
        let pb = b.relevance_score.unwrap_or(0.0);
        pb.total_cmp(&pa).then_with(|| by_initial(a, b))
    })
}

/// Re-ranks one claim's pool under the configured strategy.
pub fn rerank(claim_id: &str, candidates: &[RankedCandidate], outcomes: &[OracleOutcome], config: &RerankConfig) -> Vec<RerankedCandidate> {
    match config.strategy {
        Strategy::Irs => rerank_irs(claim_id, candidates, outcomes),
        _ => rerank_gais(claim_id, candidates, outcomes, config),
    }
}

/// The `k` best candidates of a re-ranked list (ordered by final rank).
pub fn top_k(reranked: &[RerankedCandidate], k: usize) -> Vec<&RerankedCandidate> {
    let mut v: Vec<_> = reranked.iter().collect();
    v.sort_by_key(|c| c.final_rank);
    v.truncate(k);
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::ClassMass;

    const LAMBDA: f64 = 1e-4;

    fn resp(class: TokenClass, yes: f64, no: f64, gtp: f64) -> OracleResponse {
        OracleResponse::new(class, ClassMass::from_named(yes, no, 0.0).unwrap(), gtp).unwrap()
    }

    fn cand(id: &str, score: f64, rank: usize) -> RankedCandidate {
        RankedCandidate {
            candidate_id: id.into(),
            modality: Modality::Text,
            initial_score: score,
            initial_rank: rank,
        }
    }

    fn ids(v: &[RerankedCandidate]) -> Vec<&str> {
        v.iter().map(|c| c.candidate_id.as_str()).collect()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-15 * b.abs().max(1e-300) || a == b
    }

    #[test]
    fn relevance_score_examples() {
        assert_eq!(relevance_score(TokenClass::Yes, 0.9, 0.0, LAMBDA).unwrap(), 0.9);
        assert!(close(relevance_score(TokenClass::No, 0.0, 0.8, LAMBDA).unwrap(), 2.0e-5));
        assert_eq!(relevance_score(TokenClass::No, 0.0, 1.0, LAMBDA).unwrap(), 0.0);
        assert_eq!(
            relevance_score(TokenClass::Other, 0.0, 0.0, LAMBDA),
            Err(RerankError::UnscorableClass(TokenClass::Other))
        );
    }

    #[test]
    fn gais_all_examples() {
        let c = classify_gais_all(&resp(TokenClass::Yes, 0.67, 0.20, 0.62));
        assert_eq!((c.class, c.prob), (TokenClass::Yes, 0.62));

        let c = classify_gais_all(&resp(TokenClass::No, 0.0, 0.97, 0.97));
        assert_eq!((c.class, c.prob), (TokenClass::No, 0.97));
        assert!(close(c.score(LAMBDA), 3.0e-6));

        let c = classify_gais_all(&resp(TokenClass::Other, 0.1, 0.4, 0.5));
        assert_eq!((c.class, c.prob, c.flag), (TokenClass::No, 0.4, Some(FLAG_NON_YN_OUTPUT)));
    }

    #[test]
    fn gais_yn_examples() {
        let c = classify_gais_yn(&resp(TokenClass::Yes, 0.30, 0.10, 0.3), YnNormalization::Renormalize).unwrap();
        assert_eq!(c.class, TokenClass::Yes);
        assert!(close(c.prob, 0.75));

        let c = classify_gais_yn(&resp(TokenClass::No, 0.0, 0.5, 0.5), YnNormalization::Renormalize).unwrap();
        assert_eq!((c.class, c.prob), (TokenClass::No, 1.0));

        let c = classify_gais_yn(&resp(TokenClass::No, 0.2, 0.2, 0.2), YnNormalization::Renormalize).unwrap();
        assert_eq!((c.class, c.prob), (TokenClass::No, 0.5));

        let degenerate = OracleResponse::new(TokenClass::Other, ClassMass::from_named(0.0, 0.0, 0.0).unwrap(), 0.9).unwrap();
        assert_eq!(classify_gais_yn(&degenerate, YnNormalization::Renormalize), Err(RerankError::Degenerate));
    }

    #[test]
    fn gais_yn_softmax_mode_agrees_on_the_class() {
        for (y, n) in [(0.3, 0.1), (0.1, 0.3), (0.2, 0.2), (0.0, 0.5)] {
            let r = resp(TokenClass::Yes, y, n, 0.5);
            let a = classify_gais_yn(&r, YnNormalization::Renormalize).unwrap();
            let b = classify_gais_yn(&r, YnNormalization::Softmax).unwrap();
            assert_eq!(a.class, b.class, "({y}, {n})");
        }
    }

    #[test]
    fn gais_yno_examples() {
        let c = classify_gais_yno(&resp(TokenClass::Yes, 0.20, 0.10, 0.2), YnoOtherPolicy::Exclude);
        assert_eq!((c.class, c.prob), (TokenClass::Yes, 0.20));

        let c = classify_gais_yno(&resp(TokenClass::Other, 0.0, 0.0, 0.9), YnoOtherPolicy::Exclude);
        assert_eq!((c.class, c.prob), (TokenClass::No, 0.0));
        assert_eq!(c.score(LAMBDA), LAMBDA);

        let c = classify_gais_yno(&resp(TokenClass::No, 0.5, 0.5, 0.5), YnoOtherPolicy::Exclude);
        assert_eq!((c.class, c.prob), (TokenClass::No, 0.5));

        let c = classify_gais_yno(&resp(TokenClass::Other, 0.2, 0.1, 0.7), YnoOtherPolicy::RankLast);
        assert_eq!(c.flag, Some(FLAG_OTHER_WINS));
    }

    #[test]
    fn irs_examples() {
        let cands = [cand("A", 0.9, 1), cand("B", 0.8, 2), cand("C", 0.7, 3)];
        let no = Ok(resp(TokenClass::No, 0.0, 1.0, 1.0));
        let yes = Ok(resp(TokenClass::Yes, 1.0, 0.0, 1.0));
        let out = rerank_irs("c", &cands, &[no.clone(), yes.clone(), yes.clone()]);
        assert_eq!(ids(&out), ["B", "C", "A"]);
        assert_eq!(out.iter().map(|c| c.final_rank).collect::<Vec<_>>(), [1, 2, 3]);
        assert!(out.iter().all(|c| c.relevance_score.is_none()));

        let out = rerank_irs("c", &cands, &[no.clone(), no.clone(), no]);
        assert_eq!(ids(&out), ["A", "B", "C"]);
        let out = rerank_irs("c", &cands, &[yes.clone(), yes.clone(), yes]);
        assert_eq!(ids(&out), ["A", "B", "C"]);
    }

    #[test]
    fn gais_yn_rerank_example() {
        let cands = [cand("A", 0.1, 2), cand("B", 0.5, 1)];
        let outcomes = [
            Ok(resp(TokenClass::Yes, 0.3, 0.1, 0.3)),
            Ok(resp(TokenClass::No, 0.1, 0.3, 0.3)),
        ];
        let cfg = RerankConfig::default();
        let out = rerank_gais("c", &cands, &outcomes, &cfg);
        assert_eq!(ids(&out), ["A", "B"]);
        assert!(close(out[0].relevance_score.unwrap(), 0.75));
        assert!(close(out[1].relevance_score.unwrap(), 2.5e-5));
        assert_eq!(ids(&top_k(&out, 1).into_iter().cloned().collect::<Vec<_>>()), ["A"]);
    }

    #[test]
    fn equal_no_scores_fall_back_to_initial_order() {
        let cands = [cand("x", 0.2, 3), cand("y", 0.9, 1), cand("z", 0.5, 2)];
        let no = Ok(resp(TokenClass::No, 0.1, 0.9, 0.9));
        let out = rerank_gais("c", &cands, &[no.clone(), no.clone(), no], &RerankConfig::default());
        assert_eq!(ids(&out), ["y", "z", "x"]);
    }

    #[test]
    fn failed_candidates_are_kept_flagged_and_last() {
        let cands = [cand("a", 0.9, 1), cand("b", 0.1, 2)];
        let outcomes = [Err("timeout".to_string()), Ok(resp(TokenClass::No, 0.0, 1.0, 1.0))];
        for strategy in [Strategy::Irs, Strategy::GaisAll, Strategy::GaisYn, Strategy::GaisYno] {
            let cfg = RerankConfig {
                strategy,
                ..RerankConfig::default()
            };
            let out = rerank("c", &cands, &outcomes, &cfg);
            assert_eq!(ids(&out), ["b", "a"], "{strategy:?}");
            assert_eq!(out[1].flags, [FLAG_ORACLE_FAILED]);
        }
    }

    #[test]
    fn classifier_error_sinks_with_zero_score() {
        let cands = [cand("a", 0.9, 1), cand("b", 0.1, 2)];
        let degenerate = OracleResponse::new(TokenClass::Other, ClassMass::from_named(0.0, 0.0, 0.0).unwrap(), 0.9).unwrap();
        let outcomes = [Ok(degenerate), Ok(resp(TokenClass::No, 0.0, 1.0, 1.0))];
        let out = rerank_gais("c", &cands, &outcomes, &RerankConfig::default());
        assert_eq!(ids(&out), ["b", "a"]);
        assert_eq!(out[1].relevance_score, Some(0.0));
        assert_eq!(out[1].flags, [FLAG_CLASSIFIER_ERROR]);
    }

    #[test]
    fn lambda_bounds() {
        let mut cfg = RerankConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.lambda = 0.02;
        assert!(cfg.validate().is_err());
        cfg.lambda = 0.0;
        assert!(cfg.validate().is_err());
        cfg.lambda = MAX_LAMBDA;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn strategy_names_parse() {
        assert_eq!("GAIS-YN".parse::<Strategy>().unwrap(), Strategy::GaisYn);
        assert_eq!("irs".parse::<Strategy>().unwrap(), Strategy::Irs);
        assert!("bm25".parse::<Strategy>().is_err());
    }
}
