//! Stage runners. Every stage reads its inputs from files (the configured
//! inputs or earlier stages' artifacts in the output directory) and writes
//! its own artifacts once, sorted, from a single thread.

use crate::config::{ConfigError, PipelineConfig};
use crate::corpus::{load_annotations, load_claims, load_corpus, write_claims, Claim, Corpus, Modality, VerdictLabel};
use crate::index::{load_embeddings, RankedCandidate, VectorIndex};
use crate::metrics::{evaluate_with_annotations, classification_report, map_at_k, MetricsError, RankedClaim};
use crate::oracle::{
    load_mock_script, HttpOracle, ModelRole, Oracle, OracleError, OracleRequest, PromptBudget, PromptTemplate, Task,
};
use crate::report::Report;
use crate::rerank::{rerank, OracleOutcome, RerankedCandidate};
use crate::verify::{form_pairs, RouteTemplates, Verdict, Verifier, VerifyError};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;
use tracing::{info, warn};

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const CLAIMS_FILE: &str = "claims.jsonl";
pub const RETRIEVAL_FILE: &str = "retrieval.jsonl";
pub const RERANK_FILE: &str = "rerank.jsonl";
pub const VERDICTS_FILE: &str = "verdicts.jsonl";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";
pub const REPORT_CSV: &str = "report.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Ingest,
    Retrieve,
    Rerank,
    Verify,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Ingest, Stage::Retrieve, Stage::Rerank, Stage::Verify, Stage::Evaluate];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Retrieve => "retrieve",
            Stage::Rerank => "rerank",
            Stage::Verify => "verify",
            Stage::Evaluate => "evaluate",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Stage {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("[{stage}] input: {message}")]
    Input { stage: Stage, message: String },
    #[error("[{stage}] oracle transport failure: {message}")]
    Oracle { stage: Stage, message: String },
    #[error("[evaluate] {0}")]
    Evaluation(String),
    #[error("[{stage}] {path}: {source}")]
    Io {
        stage: Stage,
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Io { .. } => 1,
            PipelineError::Config(_) => 2,
            PipelineError::Input { .. } => 3,
            PipelineError::Oracle { .. } => 4,
            PipelineError::Evaluation(_) => 5,
        }
    }

    fn input(stage: Stage, e: impl fmt::Display) -> Self {
        PipelineError::Input {
            stage,
            message: e.to_string(),
        }
    }
}

impl From<ConfigError> for PipelineError {
    fn from(e: ConfigError) -> Self {
        PipelineError::Config(e.to_string())
    }
}

/// One line of the retrieval artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRecord {
    pub claim_id: String,
    #[serde(flatten)]
    pub candidate: RankedCandidate,
}

fn write_lines<T: Serialize>(stage: Stage, path: &Path, items: &[T]) -> Result<(), PipelineError> {
    let io = |source| PipelineError::Io {
        stage,
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    for it in items {
        serde_json::to_writer(&mut w, it).map_err(|e| io(e.into()))?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

fn write_text(stage: Stage, path: &Path, text: &str) -> Result<(), PipelineError> {
    std::fs::write(path, text).map_err(|source| PipelineError::Io {
        stage,
        path: path.to_path_buf(),
        source,
    })
}

fn read_records<T: DeserializeOwned>(stage: Stage, path: &Path) -> Result<Vec<T>, PipelineError> {
    let file = File::open(path).map_err(|e| PipelineError::input(stage, format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| PipelineError::Io {
            stage,
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| PipelineError::input(stage, format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

/// Candidates per `(claim, modality)`, ordered as they were ranked.
type Pools<T> = BTreeMap<(String, Modality), Vec<T>>;

pub struct Pipeline {
    config: PipelineConfig,
    pool: rayon::ThreadPool,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.jobs)
            .build()
            .map_err(|e| PipelineError::Config(format!("worker pool: {e}")))?;
        Ok(Pipeline { config, pool })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn artifact(&self, name: &str) -> PathBuf {
        self.config.out_dir.join(name)
    }

    /// Runs the stages in order, stopping after `until` if given.
    pub fn run(&self, until: Option<Stage>) -> Result<(), PipelineError> {
        for stage in Stage::ALL {
            self.run_stage(stage)?;
            if Some(stage) == until {
                break;
            }
        }
        Ok(())
    }

    pub fn run_stage(&self, stage: Stage) -> Result<(), PipelineError> {
        std::fs::create_dir_all(&self.config.out_dir).map_err(|source| PipelineError::Io {
            stage,
            path: self.config.out_dir.clone(),
            source,
        })?;
        let started = Instant::now();
        let _span = tracing::info_span!("stage", stage = stage.as_str()).entered();
        match stage {
            Stage::Ingest => self.ingest(),
            Stage::Retrieve => self.retrieve(),
            Stage::Rerank => self.rerank(),
            Stage::Verify => self.verify(),
            Stage::Evaluate => self.evaluate(),
        }?;
        info!(stage = stage.as_str(), elapsed_ms = started.elapsed().as_millis() as u64, "stage finished");
        Ok(())
    }

    fn required(&self, stage: Stage, p: &Option<PathBuf>, what: &str) -> Result<PathBuf, PipelineError> {
        p.clone()
            .ok_or_else(|| PipelineError::Config(format!("paths.{what} is required by the {stage} stage")))
    }

    fn load_artifacts(&self, stage: Stage) -> Result<(Corpus, Vec<Claim>), PipelineError> {
        let corpus = load_corpus(&self.artifact(CORPUS_FILE)).map_err(|e| PipelineError::input(stage, e))?;
        let mut claims = load_claims(&self.artifact(CLAIMS_FILE)).map_err(|e| PipelineError::input(stage, e))?;
        claims.sort_by(|a, b| a.claim_id.cmp(&b.claim_id));
        Ok((corpus, claims))
    }

    fn load_index(&self, stage: Stage, corpus: &Corpus) -> Result<VectorIndex, PipelineError> {
        let path = self.required(stage, &self.config.paths.embeddings, "embeddings")?;
        let store = load_embeddings(&path).map_err(|e| PipelineError::input(stage, e))?;
        VectorIndex::build(corpus, store).map_err(|e| PipelineError::input(stage, e))
    }

    fn oracle(&self) -> Result<Box<dyn Oracle>, PipelineError> {
        let o = &self.config.oracle;
        if let Some(path) = &self.config.paths.mock_script {
            let mock = load_mock_script(path, o.mock_fallback).map_err(|e| PipelineError::Config(e.to_string()))?;
            info!(entries = mock.len(), "using scripted mock oracle");
            return Ok(Box::new(mock));
        }
        let Some(url) = &o.url else {
            return Err(PipelineError::Config(
                "no oracle configured: set oracle.url, EVIDRANK_ORACLE_URL or a mock script".into(),
            ));
        };
        let http = HttpOracle::new(o.http_config(url)).map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(Box::new(http))
    }

    fn ingest(&self) -> Result<(), PipelineError> {
        let stage = Stage::Ingest;
        let corpus_path = self.required(stage, &self.config.paths.corpus, "corpus")?;
        let claims_path = self.required(stage, &self.config.paths.claims, "claims")?;
        let corpus = load_corpus(&corpus_path).map_err(|e| PipelineError::input(stage, e))?;
        let mut claims = load_claims(&claims_path).map_err(|e| PipelineError::input(stage, e))?;
        claims.sort_by(|a, b| a.claim_id.cmp(&b.claim_id));
        for c in &claims {
            for id in c.gold_sentence_ids.iter().chain(&c.gold_image_ids) {
                if corpus.doc_of(id).is_none() {
                    warn!(claim_id = %c.claim_id, candidate_id = %id, "gold evidence id is not in the corpus");
                }
            }
        }
        let io = |path: PathBuf| move |source| PipelineError::Io { stage, path, source };
        let p = self.artifact(CORPUS_FILE);
        let mut w = BufWriter::new(File::create(&p).map_err(io(p.clone()))?);
        corpus.write_jsonl(&mut w).and_then(|_| w.flush()).map_err(io(p.clone()))?;
        let p = self.artifact(CLAIMS_FILE);
        let mut w = BufWriter::new(File::create(&p).map_err(io(p.clone()))?);
        write_claims(&claims, &mut w).and_then(|_| w.flush()).map_err(io(p.clone()))?;
        info!(docs = corpus.len(), sentences = corpus.sentence_count(), images = corpus.image_count(), claims = claims.len(), "ingested");
        Ok(())
    }

    fn retrieve(&self) -> Result<(), PipelineError> {
        let stage = Stage::Retrieve;
        let (corpus, claims) = self.load_artifacts(stage)?;
        let index = self.load_index(stage, &corpus)?;
        let cfg = &self.config.retrieval;
        let per_claim: Result<Vec<Vec<RetrievalRecord>>, _> = self.pool.install(|| {
            claims
                .par_iter()
                .map(|c| {
                    let mut rows = Vec::new();
                    for cand in index.retrieve_text(&c.claim_id, cfg)?.into_iter().chain(index.retrieve_image(&c.claim_id, cfg)?) {
                        rows.push(RetrievalRecord {
                            claim_id: c.claim_id.clone(),
                            candidate: cand,
                        });
                    }
                    Ok(rows)
                })
                .collect()
        });
        let rows: Vec<_> = per_claim.map_err(|e: crate::index::IndexError| PipelineError::input(stage, e))?.into_iter().flatten().collect();
        write_lines(stage, &self.artifact(RETRIEVAL_FILE), &rows)
    }

    fn load_retrieval(&self, stage: Stage, claims: &[Claim]) -> Result<Pools<RankedCandidate>, PipelineError> {
        let known: std::collections::HashSet<&str> = claims.iter().map(|c| c.claim_id.as_str()).collect();
        let mut pools: Pools<RankedCandidate> = BTreeMap::new();
        for r in read_records::<RetrievalRecord>(stage, &self.artifact(RETRIEVAL_FILE))? {
            if !known.contains(r.claim_id.as_str()) {
                return Err(PipelineError::input(stage, format!("retrieval artifact names unknown claim {:?}", r.claim_id)));
            }
            pools.entry((r.claim_id, r.candidate.modality)).or_default().push(r.candidate);
        }
        for v in pools.values_mut() {
            v.sort_by_key(|c| c.initial_rank);
        }
        Ok(pools)
    }

    fn load_reranked(&self, stage: Stage) -> Result<Pools<RerankedCandidate>, PipelineError> {
        let mut pools: Pools<RerankedCandidate> = BTreeMap::new();
        for r in read_records::<RerankedCandidate>(stage, &self.artifact(RERANK_FILE))? {
            pools.entry((r.claim_id.clone(), r.modality)).or_default().push(r);
        }
        for v in pools.values_mut() {
            v.sort_by_key(|c| c.final_rank);
        }
        Ok(pools)
    }

    fn rerank(&self) -> Result<(), PipelineError> {
        let stage = Stage::Rerank;
        let (corpus, claims) = self.load_artifacts(stage)?;
        let pools = self.load_retrieval(stage, &claims)?;
        let oracle = self.oracle()?;
        let reg = self.config.template_registry()?;
        let settings = &self.config.rerank;
        let text_t = reg.get(&settings.text_template).map_err(|e| PipelineError::Config(e.to_string()))?;
        let image_t = reg.get(&settings.image_template).map_err(|e| PipelineError::Config(e.to_string()))?;
        let budgets = (
            PromptBudget::from_tokens(self.config.oracle.max_text_tokens),
            PromptBudget::from_tokens(self.config.oracle.max_image_tokens),
        );
        let scoring = settings.scoring();
        let by_id: BTreeMap<&str, &Claim> = claims.iter().map(|c| (c.claim_id.as_str(), c)).collect();

        let keys: Vec<&(String, Modality)> = pools.keys().collect();
        let results: Result<Vec<Vec<RerankedCandidate>>, PipelineError> = self.pool.install(|| {
            keys.par_iter()
                .map(|key| {
                    let claim_id = &key.0;
                    let claim = by_id[claim_id.as_str()];
                    let cands = &pools[*key];
                    let outcomes: Vec<OracleOutcome> = cands
                        .par_iter()
                        .map(|c| {
                            let req = relevance_request(&corpus, claim, c, text_t, image_t, budgets)
                                .map_err(|e| PipelineError::input(stage, e))?;
                            match oracle.query(&req) {
                                Ok(r) => Ok(Ok(r)),
                                Err(e) if e.is_transport() => Err(PipelineError::Oracle {
                                    stage,
                                    message: e.to_string(),
                                }),
                                Err(e) => {
                                    warn!(stage = "rerank", claim_id = %claim_id, candidate_id = %c.candidate_id, error = %e, "oracle call failed");
                                    Ok(Err(e.to_string()))
                                }
                            }
                        })
                        .collect::<Result<_, _>>()?;
                    Ok(rerank(claim_id, cands, &outcomes, &scoring))
                })
                .collect()
        });
        let rows: Vec<RerankedCandidate> = results?.into_iter().flatten().collect();
        write_lines(stage, &self.artifact(RERANK_FILE), &rows)
    }

    fn route(&self, reg: &crate::oracle::TemplateRegistry, r: &crate::config::RouteSettings, max_tokens: usize) -> Result<RouteTemplates, PipelineError> {
        let get = |n: &str| reg.get(n).cloned().map_err(|e| PipelineError::Config(e.to_string()));
        Ok(RouteTemplates {
            prompting: r.prompting,
            one_level: get(&r.one_level)?,
            sufficiency: get(&r.sufficiency)?,
            stance: get(&r.stance)?,
            budget: PromptBudget::from_tokens(max_tokens),
        })
    }

    fn verify(&self) -> Result<(), PipelineError> {
        let stage = Stage::Verify;
        let out = self.artifact(VERDICTS_FILE);
        let vs = &self.config.verify;
        if !vs.enabled {
            if out.exists() {
                std::fs::remove_file(&out).map_err(|source| PipelineError::Io { stage, path: out.clone(), source })?;
            }
            info!("verification disabled");
            return Ok(());
        }
        let (corpus, claims) = self.load_artifacts(stage)?;
        let index = self.load_index(stage, &corpus)?;
        let pools = self.load_reranked(stage)?;
        let oracle = self.oracle()?;
        let reg = self.config.template_registry()?;
        let verifier = Verifier {
            oracle: oracle.as_ref(),
            corpus: &corpus,
            text: self.route(&reg, &vs.text, self.config.oracle.max_text_tokens)?,
            vision: self.route(&reg, &vs.vision, self.config.oracle.max_image_tokens)?,
            tie_priority: vs.tie_priority,
        };
        let k = self.config.retrieval.k_evidence;
        let top = |claim_id: &str, m: Modality| -> Vec<String> {
            pools
                .get(&(claim_id.to_string(), m))
                .map(|v| v.iter().take(k).map(|c| c.candidate_id.clone()).collect())
                .unwrap_or_default()
        };
        let verdicts: Result<Vec<Verdict>, PipelineError> = self.pool.install(|| {
            claims
                .par_iter()
                .map(|claim| {
                    let score = |id: &str, m: Modality| index.score(&claim.claim_id, id, m);
                    let pairs = form_pairs(
                        &claim.claim_id,
                        &top(&claim.claim_id, Modality::Text),
                        &top(&claim.claim_id, Modality::Image),
                        &corpus,
                        vs.pair_modality,
                        vs.companions,
                        &score,
                    )
                    .map_err(|e| PipelineError::input(stage, e))?;
                    verifier.verify_claim(claim, &pairs).map_err(|e| match e {
                        VerifyError::Oracle(e) if e.is_transport() => PipelineError::Oracle {
                            stage,
                            message: e.to_string(),
                        },
                        e => PipelineError::input(stage, e),
                    })
                })
                .collect()
        });
        write_lines(stage, &out, &verdicts?)
    }

    fn evaluate(&self) -> Result<(), PipelineError> {
        let stage = Stage::Evaluate;
        let mut claims = load_claims(&self.artifact(CLAIMS_FILE)).map_err(|e| PipelineError::input(stage, e))?;
        claims.sort_by(|a, b| a.claim_id.cmp(&b.claim_id));
        let initial = self.load_retrieval(stage, &claims)?;
        let reranked = if self.artifact(RERANK_FILE).exists() {
            Some(self.load_reranked(stage)?)
        } else {
            None
        };
        let ev = &self.config.evaluate;
        let annotations = match &self.config.paths.annotations {
            Some(p) => Some(load_annotations(p).map_err(|e| PipelineError::input(stage, e))?),
            None => None,
        };
        let source = match &annotations {
            Some(_) => format!("annotations ({})", ev.annotation_level.as_str()),
            None => "gold".to_string(),
        };
        let mut report = Report::new(source, ev.empty_gold);

        for modality in [Modality::Text, Modality::Image] {
            let mut rankings: Vec<(&str, BTreeMap<String, Vec<String>>)> = vec![("initial", ranking_map(&claims, &initial, modality, |c: &RankedCandidate| &c.candidate_id))];
            if let Some(r) = &reranked {
                rankings.push(("reranked", ranking_map(&claims, r, modality, |c: &RerankedCandidate| &c.candidate_id)));
            }
            'ranking: for (name, ranking) in rankings {
                for &k in &self.config.retrieval.k_values {
                    let result = match &annotations {
                        Some(anns) => evaluate_with_annotations(&ranking, anns, modality, ev.annotation_level, k, ev.empty_gold).map(|a| {
                            if name == "initial" && k == *self.config.retrieval.k_values.iter().max().unwrap_or(&k) {
                                report.unannotated_candidates += a.unannotated.len();
                                if !a.missing_claims.is_empty() {
                                    report.notes.push(format!(
                                        "{} claims without {} annotations were excluded",
                                        a.missing_claims.len(),
                                        modality.as_str()
                                    ));
                                }
                            }
                            a.metrics
                        }),
                        None => {
                            let rc: Vec<RankedClaim> = claims
                                .iter()
                                .map(|c| RankedClaim {
                                    claim_id: c.claim_id.clone(),
                                    ranking: ranking[&c.claim_id].clone(),
                                    gold: c.gold_ids(modality).clone(),
                                })
                                .collect();
                            map_at_k(&rc, k, ev.empty_gold)
                        }
                    };
                    match result {
                        Ok(m) => report.push_retrieval(modality.as_str(), name, &m),
                        Err(MetricsError::NoEligibleClaims) => {
                            if name == "initial" {
                                report.notes.push(format!("no claim has relevant {} evidence; {} retrieval not evaluated", modality.as_str(), modality.as_str()));
                            }
                            continue 'ranking;
                        }
                        Err(e) => return Err(PipelineError::Evaluation(e.to_string())),
                    }
                }
            }
        }

        let verdicts_path = self.artifact(VERDICTS_FILE);
        if verdicts_path.exists() {
            let verdicts: Vec<Verdict> = read_records(stage, &verdicts_path)?;
            let gold: BTreeMap<String, VerdictLabel> = claims
                .iter()
                .filter_map(|c| c.gold_label.map(|l| (c.claim_id.clone(), l)))
                .collect();
            let preds: BTreeMap<String, VerdictLabel> = verdicts
                .iter()
                .filter(|v| gold.contains_key(&v.claim_id))
                .map(|v| (v.claim_id.clone(), v.label))
                .collect();
            let unlabeled = verdicts.len() - preds.len();
            if unlabeled > 0 {
                report.notes.push(format!("{unlabeled} verdicts for claims without a gold label were not scored"));
            }
            match classification_report(&preds, &gold) {
                Ok(m) => {
                    let pm = serde_json::to_value(self.config.verify.pair_modality).ok();
                    let pm = pm.as_ref().and_then(|v| v.as_str()).unwrap_or("unknown").to_string();
                    report.push_classification(&pm, m);
                }
                Err(MetricsError::EmptyOverlap) => report.notes.push("no verdict has a gold label; verification not evaluated".into()),
                Err(e) => return Err(PipelineError::Evaluation(e.to_string())),
            }
        }

        if report.is_empty() {
            return Err(PipelineError::Evaluation("nothing to evaluate: no gold evidence and no gold labels".into()));
        }
        write_text(stage, &self.artifact(REPORT_JSON), &report.to_json())?;
        write_text(stage, &self.artifact(REPORT_TXT), &report.to_text())?;
        if ev.csv {
            write_text(stage, &self.artifact(REPORT_CSV), &report.to_csv())?;
        }
        Ok(())
    }
}

/// Ranked ids per claim for one modality; claims without candidates get an
/// empty ranking.
fn ranking_map<T>(claims: &[Claim], pools: &Pools<T>, modality: Modality, id: impl Fn(&T) -> &String) -> BTreeMap<String, Vec<String>> {
    claims
        .iter()
        .map(|c| {
            let ids = pools
                .get(&(c.claim_id.clone(), modality))
                .map(|v| v.iter().map(|x| id(x).clone()).collect())
                .unwrap_or_default();
            (c.claim_id.clone(), ids)
        })
        .collect()
}

fn relevance_request(
    corpus: &Corpus,
    claim: &Claim,
    cand: &RankedCandidate,
    text_t: &PromptTemplate,
    image_t: &PromptTemplate,
    (text_budget, image_budget): (PromptBudget, PromptBudget),
) -> Result<OracleRequest, String> {
    let (prompt, role, classes) = match cand.modality {
        Modality::Text => {
            let s = corpus
                .sentence(&cand.candidate_id)
                .ok_or_else(|| format!("sentence {:?} is not in the corpus", cand.candidate_id))?;
            let p = text_t.render_sentence(&claim.text, s, text_budget).map_err(|e: OracleError| e.to_string())?;
            (p, ModelRole::Text, text_t.answer_classes.clone())
        }
        Modality::Image => {
            let i = corpus
                .image(&cand.candidate_id)
                .ok_or_else(|| format!("image {:?} is not in the corpus", cand.candidate_id))?;
            let p = image_t.render_image(&claim.text, i, image_budget).map_err(|e| e.to_string())?;
            (p, ModelRole::Vision, image_t.answer_classes.clone())
        }
    };
    Ok(OracleRequest {
        task: Task::Relevance,
        claim_id: claim.claim_id.clone(),
        candidate_id: cand.candidate_id.clone(),
        role,
        prompt,
        classes,
    })
}
