use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use axum::http::HeaderValue;
use dsqa_core::classifier::ClassifierModel;
use dsqa_core::dialog::{Pipeline, PipelineConfig, TemplateSet};
use dsqa_core::kb::KnowledgeIndex;
use dsqa_core::ner::NerModel;
use serde::{Deserialize, Serialize};

use crate::ServiceError;

/// Service settings, usually read from a TOML file. Relative paths in a
/// file are resolved against the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    pub classifier_model: PathBuf,
    pub ner_model: PathBuf,
    /// Directory written by `KnowledgeIndex::export_json`.
    pub kb_dir: PathBuf,
    pub templates: Option<PathBuf>,
    pub confidence_floor: f64,
    pub max_facts: usize,
    /// Largest accepted request body in bytes.
    pub body_limit: usize,
    /// Allowed browser origins; `"*"` allows any.
    pub cors_origins: Vec<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        let pipeline = PipelineConfig::default();
        ServiceConfig {
            bind: "127.0.0.1:8080".into(),
            classifier_model: "models/classifier.json".into(),
            ner_model: "models/ner.json".into(),
            kb_dir: "kb".into(),
            templates: None,
            confidence_floor: pipeline.confidence_floor,
            max_facts: pipeline.max_facts,
            body_limit: 16 * 1024,
            cors_origins: vec!["http://localhost:5173".into()],
        }
    }
}

impl ServiceConfig {
    pub fn from_toml(text: &str) -> Result<Self, ServiceError> {
        toml::from_str(text).map_err(|e| ServiceError::Config(e.to_string()))
    }

    /// Reads and validates a config file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ServiceError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ServiceError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::from_toml(&text)?;
        if let Some(base) = path.parent() {
            config.resolve_paths(base);
        }
        config.validate()?;
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.classifier_model);
        fix(&mut self.ner_model);
        fix(&mut self.kb_dir);
        if let Some(t) = self.templates.as_mut() {
            fix(t);
        }
    }

    pub fn bind_addr(&self) -> Result<SocketAddr, ServiceError> {
        self.bind
            .parse()
            .map_err(|e| ServiceError::Config(format!("bind address {:?}: {e}", self.bind)))
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            confidence_floor: self.confidence_floor,
            max_facts: self.max_facts,
            ..PipelineConfig::default()
        }
    }

    /// Checks values and that every referenced file exists.
    pub fn validate(&self) -> Result<(), ServiceError> {
        self.validate_settings()?;
        let mut files = vec![
            ("classifier model", self.classifier_model.clone()),
            ("NER model", self.ner_model.clone()),
            ("knowledge base", self.kb_dir.join("concepts.json")),
        ];
        files.extend(self.templates.clone().map(|t| ("templates", t)));
        for (what, path) in files {
            if !path.is_file() {
                return Err(ServiceError::Missing { what, path });
            }
        }
        Ok(())
    }

    /// The checks that do not touch the file system.
    pub fn validate_settings(&self) -> Result<(), ServiceError> {
        self.bind_addr()?;
        self.pipeline_config().validate()?;
        if self.body_limit == 0 {
            return Err(ServiceError::Config("body_limit must be positive".into()));
        }
        for o in &self.cors_origins {
            if o != "*" && HeaderValue::from_str(o).is_err() {
                return Err(ServiceError::Config(format!("invalid CORS origin {o:?}")));
            }
        }
        Ok(())
    }

    /// Loads models, knowledge base and templates.
    pub fn load_pipeline(&self) -> Result<Pipeline, ServiceError> {
        let classifier = ClassifierModel::load(&self.classifier_model)?;
        let ner = NerModel::load(&self.ner_model)?;
        let index = KnowledgeIndex::import_json(&self.kb_dir)?;
        let templates = match &self.templates {
            Some(p) => TemplateSet::load(p)?,
            None => TemplateSet::default(),
        };
        Ok(Pipeline::new(
            classifier,
            ner,
            index,
            templates,
            self.pipeline_config(),
        )?)
    }
}
