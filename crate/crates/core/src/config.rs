//! Pipeline configuration: one TOML file plus command-line overrides.

use crate::index::RetrievalConfig;
use crate::metrics::EmptyGoldPolicy;
use crate::oracle::{
    template::{IMAGE_SAME_TOPIC, TEXT_RELATED, VERIFY_ONE_LEVEL, VERIFY_ONE_LEVEL_MM, VERIFY_STANCE, VERIFY_STANCE_MM, VERIFY_SUFFICIENCY, VERIFY_SUFFICIENCY_MM},
    HttpOracleConfig, Layout, MockFallback, PromptTemplate, SurfaceForms, TemplateRegistry,
};
use crate::corpus::RelevanceLevel;
use crate::rerank::{RerankConfig, Strategy, YnNormalization, YnoOtherPolicy};
use crate::verify::{CompanionCaps, PairModality, Prompting, TiePriority};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::time::Duration;

pub const ENV_ORACLE_URL: &str = "EVIDRANK_ORACLE_URL";
pub const ENV_ORACLE_KEY: &str = "EVIDRANK_ORACLE_KEY";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub claims: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub mock_script: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSettings {
    pub url: Option<String>,
    pub text_model: String,
    pub vision_model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub max_in_flight: usize,
    pub timeout_secs: f64,
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
    pub top_logprobs: u32,
    pub max_text_tokens: usize,
    pub max_image_tokens: usize,
    /// Answer of the mock oracle for prompts missing from its script.
    pub mock_fallback: MockFallback,
    pub surface_forms: SurfaceForms,
}

impl Default for OracleSettings {
    fn default() -> Self {
        let http = HttpOracleConfig::new("");
        OracleSettings {
            url: None,
            text_model: http.text_model,
            vision_model: http.vision_model,
            api_key_env: ENV_ORACLE_KEY.into(),
            max_in_flight: http.max_in_flight,
            timeout_secs: http.timeout.as_secs_f64(),
            max_attempts: http.max_attempts,
            initial_backoff_ms: http.initial_backoff.as_millis() as u64,
            max_backoff_ms: http.max_backoff.as_millis() as u64,
            top_logprobs: http.top_logprobs,
            max_text_tokens: 2048,
            max_image_tokens: 512,
            mock_fallback: MockFallback::No,
            surface_forms: SurfaceForms::default(),
        }
    }
}

impl OracleSettings {
    pub fn http_config(&self, url: &str) -> HttpOracleConfig {
        let mut c = HttpOracleConfig::new(url);
        c.api_key = std::env::var(&self.api_key_env).ok().filter(|k| !k.is_empty());
        c.text_model = self.text_model.clone();
        c.vision_model = self.vision_model.clone();
        c.top_logprobs = self.top_logprobs;
        c.max_attempts = self.max_attempts;
        c.initial_backoff = Duration::from_millis(self.initial_backoff_ms);
        c.max_backoff = Duration::from_millis(self.max_backoff_ms);
        c.timeout = Duration::from_secs_f64(self.timeout_secs);
        c.max_in_flight = self.max_in_flight;
        c.surface_forms = self.surface_forms.clone();
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RerankSettings {
    pub strategy: Strategy,
    pub lambda: f64,
    pub yn_normalization: YnNormalization,
    pub yno_other: YnoOtherPolicy,
    pub text_template: String,
    pub image_template: String,
}

impl Default for RerankSettings {
    fn default() -> Self {
        let d = RerankConfig::default();
        RerankSettings {
            strategy: d.strategy,
            lambda: d.lambda,
            yn_normalization: d.yn_normalization,
            yno_other: d.yno_other,
            text_template: TEXT_RELATED.into(),
            image_template: IMAGE_SAME_TOPIC.into(),
        }
    }
}

impl RerankSettings {
    pub fn scoring(&self) -> RerankConfig {
        RerankConfig {
            strategy: self.strategy,
            lambda: self.lambda,
            yn_normalization: self.yn_normalization,
            yno_other: self.yno_other,
        }
    }
}

/// Template names and prompting mode for one verification route.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteSettings {
    pub prompting: Prompting,
    pub one_level: String,
    pub sufficiency: String,
    pub stance: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySettings {
    pub enabled: bool,
    pub pair_modality: PairModality,
    pub text: RouteSettings,
    pub vision: RouteSettings,
    pub companions: CompanionCaps,
    pub tie_priority: TiePriority,
}

impl Default for VerifySettings {
    fn default() -> Self {
        VerifySettings {
            enabled: true,
            pair_modality: PairModality::Multimodal,
            text: RouteSettings {
                prompting: Prompting::OneLevel,
                one_level: VERIFY_ONE_LEVEL.into(),
                sufficiency: VERIFY_SUFFICIENCY.into(),
                stance: VERIFY_STANCE.into(),
            },
            vision: RouteSettings {
                prompting: Prompting::TwoLevel,
                one_level: VERIFY_ONE_LEVEL_MM.into(),
                sufficiency: VERIFY_SUFFICIENCY_MM.into(),
                stance: VERIFY_STANCE_MM.into(),
            },
            companions: CompanionCaps::default(),
            tie_priority: TiePriority::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateSettings {
    pub empty_gold: EmptyGoldPolicy,
    /// Annotation tier used when an annotation file is configured.
    pub annotation_level: RelevanceLevel,
    pub csv: bool,
}

impl Default for EvaluateSettings {
    fn default() -> Self {
        EvaluateSettings {
            empty_gold: EmptyGoldPolicy::Exclude,
            annotation_level: RelevanceLevel::Overall,
            csv: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Reserved; no stage samples.
    pub seed: u64,
    /// Worker threads; 0 means one per core.
    pub jobs: usize,
    pub out_dir: PathBuf,
    pub paths: Paths,
    pub oracle: OracleSettings,
    pub retrieval: RetrievalConfig,
    pub rerank: RerankSettings,
    pub verify: VerifySettings,
    pub evaluate: EvaluateSettings,
    /// Extra or replacement prompt templates.
    pub templates: Vec<PromptTemplate>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            jobs: 0,
            out_dir: PathBuf::from("out"),
            paths: Paths::default(),
            oracle: OracleSettings::default(),
            retrieval: RetrievalConfig::default(),
            rerank: RerankSettings::default(),
            verify: VerifySettings::default(),
            evaluate: EvaluateSettings::default(),
            templates: Vec::new(),
        }
    }
}

/// Command-line values that win over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub strategy: Option<Strategy>,
    pub k_values: Option<Vec<usize>>,
    pub lambda: Option<f64>,
    pub oracle_url: Option<String>,
    pub mock_script: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub jobs: Option<usize>,
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl PipelineConfig {
    /// Parses a config file; relative paths are taken from the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: PipelineConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let p = &mut self.paths;
        for slot in [&mut p.corpus, &mut p.claims, &mut p.embeddings, &mut p.annotations, &mut p.mock_script] {
            resolve(base, slot);
        }
        if self.out_dir.is_relative() {
            self.out_dir = base.join(&self.out_dir);
        }
    }

    /// Applies flags, then the oracle URL from the environment if still unset.
    pub fn apply(&mut self, o: Overrides) {
        if let Some(s) = o.strategy {
            self.rerank.strategy = s;
        }
        if let Some(k) = o.k_values {
            self.retrieval.k_values = k;
        }
        if let Some(l) = o.lambda {
            self.rerank.lambda = l;
        }
        if o.oracle_url.is_some() {
            self.oracle.url = o.oracle_url;
        }
        if o.mock_script.is_some() {
            self.paths.mock_script = o.mock_script;
        }
        if let Some(d) = o.out_dir {
            self.out_dir = d;
        }
        if let Some(j) = o.jobs {
            self.jobs = j;
        }
        if self.oracle.url.is_none() {
            self.oracle.url = std::env::var(ENV_ORACLE_URL).ok().filter(|u| !u.is_empty());
        }
    }

    /// Built-in templates with the configured ones layered on top.
    pub fn template_registry(&self) -> Result<TemplateRegistry, ConfigError> {
        let mut reg = TemplateRegistry::default();
        for t in &self.templates {
            reg.insert(t.clone()).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        Ok(reg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.retrieval.validate().map_err(|e| invalid(&e))?;
        self.rerank.scoring().validate().map_err(|e| invalid(&e))?;
        self.oracle.surface_forms.validate().map_err(|e| invalid(&e))?;
        if self.oracle.max_attempts == 0 {
            return Err(ConfigError::Invalid("oracle.max_attempts must be at least 1".into()));
        }
        if !(self.oracle.timeout_secs.is_finite() && self.oracle.timeout_secs > 0.0) {
            return Err(ConfigError::Invalid("oracle.timeout_secs must be positive".into()));
        }
        if self.oracle.max_text_tokens == 0 || self.oracle.max_image_tokens == 0 {
            return Err(ConfigError::Invalid("oracle token limits must be positive".into()));
        }
        let reg = self.template_registry()?;
        let expect = |name: &str, layouts: &[Layout], role: &str| -> Result<(), ConfigError> {
            let t = reg.get(name).map_err(|e| invalid(&e))?;
            if !layouts.contains(&t.layout) {
                return Err(ConfigError::Invalid(format!(
                    "template {name:?} has layout {:?}, which cannot serve as {role}",
                    t.layout
                )));
            }
            Ok(())
        };
        expect(&self.rerank.text_template, &[Layout::TextPair], "a text relevance prompt")?;
        expect(&self.rerank.image_template, &[Layout::ImageQuery], "an image relevance prompt")?;
        let pair_layouts = [Layout::TextPair, Layout::MultimodalPair];
        for route in [&self.verify.text, &self.verify.vision] {
            expect(&route.one_level, &pair_layouts, "a verification prompt")?;
            expect(&route.sufficiency, &pair_layouts, "a verification prompt")?;
            expect(&route.stance, &pair_layouts, "a verification prompt")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        assert_eq!(c.retrieval.pool_size, 100);
        assert_eq!(c.retrieval.k_values, [1, 2, 5, 10]);
        assert_eq!(c.retrieval.k_evidence, 5);
        assert_eq!(c.rerank.lambda, 1e-4);
        assert_eq!(c.verify.text.prompting, Prompting::OneLevel);
        assert_eq!(c.verify.vision.prompting, Prompting::TwoLevel);
    }

    #[test]
    fn k_exceeding_n_is_rejected() {
        let c: PipelineConfig = toml::from_str("[retrieval]\nn = 10\nk_values = [20]\nk_evidence = 5\n").unwrap();
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("K exceeds N"), "{err}");
    }

    #[test]
    fn unknown_template_is_rejected() {
        let c: PipelineConfig = toml::from_str("[rerank]\ntext_template = \"nope\"\n").unwrap();
        assert!(c.validate().is_err());
        let c: PipelineConfig = toml::from_str("[rerank]\ntext_template = \"image-same-topic\"\n").unwrap();
        assert!(c.validate().is_err(), "image template used for text");
    }

    #[test]
    fn custom_templates_resolve() {
        let c: PipelineConfig = toml::from_str(
            r#"
            [rerank]
            text_template = "mine"
            [[templates]]
            name = "mine"
            instruction = "Relevant? yes or no."
            layout = "text_pair"
            answer_classes = ["yes", "no"]
            "#,
        )
        .unwrap();
        c.validate().unwrap();
    }

    #[test]
    fn lambda_bounds() {
        let mut c = PipelineConfig::default();
        c.apply(Overrides {
            lambda: Some(0.5),
            ..Default::default()
        });
        assert!(c.validate().is_err());
    }

    #[test]
    fn flags_win_and_paths_resolve() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "out_dir = \"o\"\n[paths]\ncorpus = \"corpus.jsonl\"\n[rerank]\nstrategy = \"irs\"\n").unwrap();
        let mut c = PipelineConfig::load(&p).unwrap();
        assert_eq!(c.paths.corpus.as_deref(), Some(dir.path().join("corpus.jsonl").as_path()));
        assert_eq!(c.out_dir, dir.path().join("o"));
        assert_eq!(c.rerank.strategy, Strategy::Irs);
        c.apply(Overrides {
            strategy: Some(Strategy::GaisYno),
            k_values: Some(vec![3]),
            ..Default::default()
        });
        assert_eq!(c.rerank.strategy, Strategy::GaisYno);
        assert_eq!(c.retrieval.k_values, [3]);
    }

    #[test]
    fn unknown_keys_are_errors() {
        assert!(toml::from_str::<PipelineConfig>("bogus = 1\n").is_err());
        assert!(toml::from_str::<PipelineConfig>("[rerank]\nlamda = 0.1\n").is_err());
    }
}
