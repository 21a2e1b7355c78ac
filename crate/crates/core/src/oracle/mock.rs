use super::{ClassMass, Oracle, OracleError, OracleRequest, OracleResponse, Task, TokenClass, MASS_TOLERANCE};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

/// Candidate id that matches any candidate of the claim.
pub const WILDCARD: &str = "*";

/// What the mock answers for prompts that are not in its script.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MockFallback {
    /// Class No with all mass on No.
    #[default]
    No,
    Error,
}

/// One line of a mock script file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(default = "default_task")]
    pub task: Task,
    pub claim_id: String,
    pub candidate_id: String,
    pub class: TokenClass,
    pub class_mass: BTreeMap<TokenClass, f64>,
    pub generated_token_prob: f64,
}

fn default_task() -> Task {
    Task::Relevance
}

impl ScriptEntry {
    pub fn to_response(&self) -> Result<OracleResponse, OracleError> {
        let get = |c| self.class_mass.get(&c).copied().unwrap_or(0.0);
        let mass = ClassMass::from_named(get(TokenClass::Yes), get(TokenClass::No), get(TokenClass::None))?;
        if let Some(&other) = self.class_mass.get(&TokenClass::Other) {
            if (other - mass.other).abs() > MASS_TOLERANCE {
                return Err(OracleError::InvalidResponse(format!(
                    "({}, {}): other mass {other} but named classes leave {}",
                    self.claim_id, self.candidate_id, mass.other
                )));
            }
        }
        OracleResponse::new(self.class, mass, self.generated_token_prob)
    }
}

type Key = (Task, String, String);

/// Deterministic in-process oracle answering from a script.
///
/// Responses are keyed by `(task, claim_id, candidate_id)`. A script entry with
/// candidate id `"*"` answers for every candidate of that claim and task that
/// has no exact entry.
#[derive(Debug, Default)]
pub struct MockOracle {
    script: HashMap<Key, OracleResponse>,
    fallback: MockFallback,
    calls: AtomicUsize,
}

impl MockOracle {
    pub fn new(fallback: MockFallback) -> Self {
        MockOracle {
            script: HashMap::new(),
            fallback,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn from_entries<I: IntoIterator<Item = ScriptEntry>>(entries: I, fallback: MockFallback) -> Result<Self, OracleError> {
        let mut m = MockOracle::new(fallback);
        for e in entries {
            let r = e.to_response()?;
            m.script.insert((e.task, e.claim_id, e.candidate_id), r);
        }
        Ok(m)
    }

    pub fn insert(&mut self, task: Task, claim_id: &str, candidate_id: &str, response: OracleResponse) -> Result<(), OracleError> {
        response.validate()?;
        self.script
            .insert((task, claim_id.to_string(), candidate_id.to_string()), response);
        Ok(())
    }

    /// Number of queries answered so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.script.len()
    }

    pub fn is_empty(&self) -> bool {
        self.script.is_empty()
    }

    pub fn no_response() -> OracleResponse {
        OracleResponse {
            generated_class: TokenClass::No,
            class_mass: ClassMass {
                yes: 0.0,
                no: 1.0,
                none: 0.0,
                other: 0.0,
            },
            generated_token_prob: 1.0,
        }
    }
}

impl Oracle for MockOracle {
    fn query(&self, req: &OracleRequest) -> Result<OracleResponse, OracleError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let exact = (req.task, req.claim_id.clone(), req.candidate_id.clone());
        let wildcard = (req.task, req.claim_id.clone(), WILDCARD.to_string());
        if let Some(r) = self.script.get(&exact).or_else(|| self.script.get(&wildcard)) {
            return Ok(*r);
        }
        match self.fallback {
            MockFallback::No => Ok(MockOracle::no_response()),
            MockFallback::Error => Err(OracleError::Lookup(format!(
                "{} ({}, {})",
                req.task.as_str(),
                req.claim_id,
                req.candidate_id
            ))),
        }
    }
}

/// Reads a line-delimited mock script; invalid responses are rejected at load.
pub fn load_mock_script(path: &Path, fallback: MockFallback) -> Result<MockOracle, OracleError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| OracleError::Config(format!("cannot read mock script {}: {e}", path.display())))?;
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let e: ScriptEntry = serde_json::from_str(line)
            .map_err(|e| OracleError::Config(format!("{}:{}: {e}", path.display(), i + 1)))?;
        entries.push(e);
    }
    MockOracle::from_entries(entries, fallback)
}
