//! Boundary to generative relevance/verification models.
//!
//! The gateway renders prompts, sends them to a model (remote or scripted),
//! and reports how the first generated token's probability mass splits over
//! answer classes. It never turns masses into ranking scores; that happens in
//! [`crate::rerank`] and [`crate::verify`].

mod http;
mod mock;
pub mod template;

pub use http::{HttpOracle, HttpOracleConfig};
pub use mock::{load_mock_script, MockFallback, MockOracle, ScriptEntry};
pub use template::{Layout, PromptBudget, PromptTemplate, RenderedPrompt, TemplateRegistry};

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;

/// Tolerance for class masses summing to one.
pub const MASS_TOLERANCE: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("degenerate response: {0}")]
    Degenerate(String),
    #[error("invalid response: {0}")]
    InvalidResponse(String),
    #[error("no scripted response for {0}")]
    Lookup(String),
    #[error("template {template:?}: {message}")]
    Template { template: String, message: String },
    #[error("{0}")]
    Config(String),
}

impl OracleError {
    pub fn is_transport(&self) -> bool {
        matches!(self, OracleError::Transport { .. })
    }
}

/// Answer class of a first generated token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenClass {
    Yes,
    No,
    None,
    Other,
}

impl TokenClass {
    pub fn as_str(self) -> &'static str {
        match self {
            TokenClass::Yes => "yes",
            TokenClass::No => "no",
            TokenClass::None => "none",
            TokenClass::Other => "other",
        }
    }

    pub fn parse(s: &str) -> Option<TokenClass> {
        match s.trim().to_ascii_lowercase().as_str() {
            "yes" => Some(TokenClass::Yes),
            "no" => Some(TokenClass::No),
            "none" => Some(TokenClass::None),
            "other" => Some(TokenClass::Other),
            _ => Option::None,
        }
    }
}

impl fmt::Display for TokenClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn normalize_token(t: &str) -> String {
    t.trim().to_lowercase()
}

/// Surface strings that count as each named answer class.
///
/// Matching trims whitespace and ignores case, so `" Yes"`, `"YES"` and
/// `"yes"` are all class Yes. `Other` is the residual and has no forms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceForms {
    pub yes: Vec<String>,
    pub no: Vec<String>,
    pub none: Vec<String>,
}

impl Default for SurfaceForms {
    fn default() -> Self {
        let variants = |w: &str| -> Vec<String> {
            let cap = format!("{}{}", w[..1].to_uppercase(), &w[1..]);
            let upper = w.to_uppercase();
            [w.to_string(), cap, upper]
                .into_iter()
                .flat_map(|v| [v.clone(), format!(" {v}")])
                .collect()
        };
        SurfaceForms {
            yes: variants("yes"),
            no: variants("no"),
            none: variants("none"),
        }
    }
}

impl SurfaceForms {
    pub fn validate(&self) -> Result<(), OracleError> {
        let mut owner: HashMap<String, TokenClass> = HashMap::new();
        for (class, forms) in [
            (TokenClass::Yes, &self.yes),
            (TokenClass::No, &self.no),
            (TokenClass::None, &self.none),
        ] {
            for f in forms {
                let key = normalize_token(f);
                if key.is_empty() {
                    return Err(OracleError::Config(format!("blank surface form for class {class}")));
                }
                if let Some(prev) = owner.insert(key.clone(), class) {
                    if prev != class {
                        return Err(OracleError::Config(format!(
                            "surface form {f:?} belongs to both {prev} and {class}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Class of a detokenized string, restricted to `allowed` classes.
    pub fn classify(&self, token: &str, allowed: &[TokenClass]) -> TokenClass {
        let key = normalize_token(token);
        if key.is_empty() {
            return TokenClass::Other;
        }
        for (class, forms) in [
            (TokenClass::Yes, &self.yes),
            (TokenClass::No, &self.no),
            (TokenClass::None, &self.none),
        ] {
            if allowed.contains(&class) && forms.iter().any(|f| normalize_token(f) == key) {
                return class;
            }
        }
        TokenClass::Other
    }
}

/// Probability mass of the first generated token, grouped by class.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ClassMass {
    pub yes: f64,
    pub no: f64,
    pub none: f64,
    pub other: f64,
}

impl ClassMass {
    /// Builds the masses of the named classes; `other` is the residual.
    pub fn from_named(yes: f64, no: f64, none: f64) -> Result<Self, OracleError> {
        for (name, v) in [("yes", yes), ("no", no), ("none", none)] {
            if !(0.0..=1.0).contains(&v) || !v.is_finite() {
                return Err(OracleError::InvalidResponse(format!("mass of {name} = {v} outside [0, 1]")));
            }
        }
        let named = yes + no + none;
        if named > 1.0 + MASS_TOLERANCE {
            return Err(OracleError::InvalidResponse(format!("named class masses sum to {named} > 1")));
        }
        Ok(ClassMass {
            yes,
            no,
            none,
            other: (1.0 - named).max(0.0),
        })
    }

    pub fn get(&self, class: TokenClass) -> f64 {
        match class {
            TokenClass::Yes => self.yes,
            TokenClass::No => self.no,
            TokenClass::None => self.none,
            TokenClass::Other => self.other,
        }
    }
}

/// What the gateway reports for one prompt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleResponse {
    pub generated_class: TokenClass,
    pub class_mass: ClassMass,
    /// Full-softmax probability of the literally generated first token.
    pub generated_token_prob: f64,
}

impl OracleResponse {
    pub fn new(generated_class: TokenClass, class_mass: ClassMass, generated_token_prob: f64) -> Result<Self, OracleError> {
        let r = OracleResponse {
            generated_class,
            class_mass,
            generated_token_prob,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        let m = &self.class_mass;
        for v in [m.yes, m.no, m.none, m.other] {
            if !(0.0..=1.0).contains(&v) {
                return Err(OracleError::InvalidResponse(format!("class mass {v} outside [0, 1]")));
            }
        }
        let total = m.yes + m.no + m.none + m.other;
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(OracleError::InvalidResponse(format!("class masses sum to {total}, expected 1")));
        }
        if !(self.generated_token_prob > 0.0 && self.generated_token_prob <= 1.0) {
            return Err(OracleError::InvalidResponse(format!(
                "generated_token_prob {} outside (0, 1]",
                self.generated_token_prob
            )));
        }
        Ok(())
    }

    /// Builds a response from the first-token distribution a server reports.
    ///
    /// `top` holds `(token, probability)` pairs; the generated token is added
    /// if the server left it out. Masses are summed per class over surface
    /// forms, and whatever is left is `Other`.
    pub fn from_token_probs(
        generated_token: &str,
        generated_prob: f64,
        top: &[(String, f64)],
        classes: &[TokenClass],
        forms: &SurfaceForms,
    ) -> Result<Self, OracleError> {
        if !generated_prob.is_finite() || generated_prob <= 0.0 {
            return Err(OracleError::Protocol(format!(
                "generated token {generated_token:?} has probability {generated_prob}"
            )));
        }
        let generated_prob = generated_prob.min(1.0);
        let mut probs: Vec<(&str, f64)> = top.iter().map(|(t, p)| (t.as_str(), *p)).collect();
        if !probs.iter().any(|(t, _)| *t == generated_token) {
            probs.push((generated_token, generated_prob));
        }
        let (mut yes, mut no, mut none) = (0.0, 0.0, 0.0);
        for (token, p) in probs {
            match forms.classify(token, classes) {
                TokenClass::Yes => yes += p,
                TokenClass::No => no += p,
                TokenClass::None => none += p,
                TokenClass::Other => {}
            }
        }
        let generated_class = forms.classify(generated_token, classes);
        if generated_class == TokenClass::Other && yes + no + none == 0.0 {
            return Err(OracleError::Degenerate(format!(
                "generated token {generated_token:?} matches no class and no class has probability"
            )));
        }
        // rounding in reported logprobs can push the named total a hair above 1
        let named = yes + no + none;
        if named > 1.0 {
            yes /= named;
            no /= named;
            none /= named;
        }
        OracleResponse::new(generated_class, ClassMass::from_named(yes, no, none)?, generated_prob)
    }
}

/// Which kind of question a prompt asks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Relevance,
    Verify,
    Sufficiency,
    Stance,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Relevance => "relevance",
            Task::Verify => "verify",
            Task::Sufficiency => "sufficiency",
            Task::Stance => "stance",
        }
    }
}

/// Selects the text model or the vision model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelRole {
    Text,
    Vision,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleRequest {
    pub task: Task,
    pub claim_id: String,
    pub candidate_id: String,
    pub role: ModelRole,
    pub prompt: RenderedPrompt,
    pub classes: Vec<TokenClass>,
}

/// Anything that can answer a class-constrained prompt.
pub trait Oracle: Send + Sync {
    fn query(&self, request: &OracleRequest) -> Result<OracleResponse, OracleError>;
}

impl<T: Oracle + ?Sized> Oracle for std::sync::Arc<T> {
    fn query(&self, request: &OracleRequest) -> Result<OracleResponse, OracleError> {
        (**self).query(request)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const YN: [TokenClass; 2] = [TokenClass::Yes, TokenClass::No];

    fn top(pairs: &[(&str, f64)]) -> Vec<(String, f64)> {
        pairs.iter().map(|(t, p)| (t.to_string(), *p)).collect()
    }

    #[test]
    fn fixture_probabilities_are_summed_per_class() {
        let r = OracleResponse::from_token_probs(
            " Yes",
            0.62,
            &top(&[(" Yes", 0.62), ("Yes", 0.05), ("No", 0.20)]),
            &YN,
            &SurfaceForms::default(),
        )
        .unwrap();
        assert_eq!(r.generated_class, TokenClass::Yes);
        assert!((r.class_mass.yes - 0.67).abs() < 1e-12);
        assert!((r.class_mass.no - 0.20).abs() < 1e-12);
        assert!((r.class_mass.other - 0.13).abs() < 1e-12);
        assert_eq!(r.generated_token_prob, 0.62);
    }

    #[test]
    fn single_token_response() {
        let r = OracleResponse::from_token_probs("no", 1.0, &top(&[("no", 1.0)]), &YN, &SurfaceForms::default())
            .unwrap();
        assert_eq!(r.generated_class, TokenClass::No);
        assert_eq!(r.class_mass.no, 1.0);
        assert_eq!(r.class_mass.other, 0.0);
    }

    #[test]
    fn surface_forms_ignore_case_and_leading_space() {
        let f = SurfaceForms::default();
        for t in ["YES", "yes", " Yes", "Yes\n"] {
            assert_eq!(f.classify(t, &YN), TokenClass::Yes, "{t:?}");
        }
        assert_eq!(f.classify("None", &YN), TokenClass::Other);
        assert_eq!(f.classify("None", &[TokenClass::None]), TokenClass::None);
        assert_eq!(f.classify("maybe", &YN), TokenClass::Other);
    }

    #[test]
    fn default_forms_are_disjoint() {
        SurfaceForms::default().validate().unwrap();
        let clash = SurfaceForms {
            yes: vec!["y".into()],
            no: vec![" Y".into()],
            none: vec![],
        };
        assert!(clash.validate().is_err());
    }

    #[test]
    fn degenerate_when_nothing_matches() {
        let err = OracleResponse::from_token_probs("The", 0.9, &top(&[("The", 0.9), ("A", 0.05)]), &YN, &SurfaceForms::default())
            .unwrap_err();
        assert!(matches!(err, OracleError::Degenerate(_)));
    }

    #[test]
    fn unmatched_generated_token_with_class_mass_is_other() {
        let r = OracleResponse::from_token_probs("The", 0.7, &top(&[("The", 0.7), ("No", 0.2)]), &YN, &SurfaceForms::default())
            .unwrap();
        assert_eq!(r.generated_class, TokenClass::Other);
        assert!((r.class_mass.other - 0.8).abs() < 1e-12);
    }

    #[test]
    fn masses_always_complete() {
        let r = OracleResponse::from_token_probs(
            "Yes",
            0.6,
            &top(&[("Yes", 0.6), ("yes", 0.3), ("no", 0.1000001)]),
            &YN,
            &SurfaceForms::default(),
        )
        .unwrap();
        let m = r.class_mass;
        assert!((m.yes + m.no + m.none + m.other - 1.0).abs() < MASS_TOLERANCE);
    }

    #[test]
    fn invalid_masses_rejected() {
        assert!(ClassMass::from_named(0.7, 0.5, 0.0).is_err());
        assert!(ClassMass::from_named(-0.1, 0.5, 0.0).is_err());
        let m = ClassMass::from_named(0.5, 0.5, 0.0).unwrap();
        assert!(OracleResponse::new(TokenClass::Yes, m, 0.0).is_err());
    }
}
