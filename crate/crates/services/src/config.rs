use super::{Result, ServiceError};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::path::{Path, PathBuf};

pub const DEFAULT_PREDICTOR_TIMEOUT_MS: u64 = 2_000;
pub const DEFAULT_GENERATIVE_TIMEOUT_MS: u64 = 30_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndpointKind {
    Predictor,
    Generative,
}

impl EndpointKind {
    pub fn default_timeout_ms(self) -> u64 {
        match self {
            EndpointKind::Predictor => DEFAULT_PREDICTOR_TIMEOUT_MS,
            EndpointKind::Generative => DEFAULT_GENERATIVE_TIMEOUT_MS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Endpoint {
    pub name: String,
    /// Base URL, e.g. `http://127.0.0.1:8101`.
    pub url: String,
    pub kind: EndpointKind,
    /// Defaults by kind when omitted.
    #[serde(default)]
    pub timeout_ms: Option<u64>,
}

impl Endpoint {
    pub fn new(name: impl Into<String>, url: impl Into<String>, kind: EndpointKind) -> Self {
        Self {
            name: name.into(),
            url: url.into(),
            kind,
            timeout_ms: None,
        }
    }

    pub fn with_timeout(mut self, ms: u64) -> Self {
        self.timeout_ms = Some(ms);
        self
    }

    pub fn timeout_ms(&self) -> u64 {
        self.timeout_ms.unwrap_or_else(|| self.kind.default_timeout_ms())
    }

    pub fn route(&self, path: &str) -> String {
        format!("{}{path}", self.url.trim_end_matches('/'))
    }
}

fn default_listen() -> String {
    "127.0.0.1:8100".into()
}

fn default_cors() -> Vec<String> {
    vec!["*".into()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceConfig {
    pub endpoints: Vec<Endpoint>,
    #[serde(default = "default_listen")]
    pub listen_address: String,
    /// Optional JSON-lines log of orchestrated requests.
    #[serde(default)]
    pub request_log_path: Option<PathBuf>,
    /// Origins allowed by CORS; `"*"` allows any.
    #[serde(default = "default_cors")]
    pub cors_origins: Vec<String>,
}

impl ServiceConfig {
    pub fn new(endpoints: Vec<Endpoint>) -> Self {
        Self {
            endpoints,
            listen_address: default_listen(),
            request_log_path: None,
            cors_origins: default_cors(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|source| ServiceError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg: Self = serde_json::from_str(&raw)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Names must be unique, timeouts positive, and at least one predictor
    /// and at most one generative endpoint configured.
    pub fn validate(&self) -> Result<()> {
        let mut names = HashSet::new();
        for e in &self.endpoints {
            if e.name.is_empty() || !names.insert(e.name.as_str()) {
                return Err(ServiceError::Config(format!("endpoint name {:?} is empty or repeated", e.name)));
            }
            if e.timeout_ms == Some(0) {
                return Err(ServiceError::Config(format!("endpoint {} has a zero timeout", e.name)));
            }
            if !(e.url.starts_with("http://") || e.url.starts_with("https://")) {
                return Err(ServiceError::Config(format!("endpoint {} url {:?} is not http(s)", e.name, e.url)));
            }
        }
        if self.predictors().next().is_none() {
            return Err(ServiceError::Config("at least one predictor endpoint is required".into()));
        }
        if self.endpoints.iter().filter(|e| e.kind == EndpointKind::Generative).count() > 1 {
            return Err(ServiceError::Config("at most one generative endpoint is supported".into()));
        }
        Ok(())
    }

    pub fn predictors(&self) -> impl Iterator<Item = &Endpoint> {
        self.endpoints.iter().filter(|e| e.kind == EndpointKind::Predictor)
    }

    pub fn generative(&self) -> Option<&Endpoint> {
        self.endpoints.iter().find(|e| e.kind == EndpointKind::Generative)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_validation() {
        let json = r#"{"endpoints":[
            {"name":"emotion","url":"http://127.0.0.1:1","kind":"predictor"},
            {"name":"chat","url":"http://127.0.0.1:2","kind":"generative"}]}"#;
        let cfg: ServiceConfig = serde_json::from_str(json).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.endpoints[0].timeout_ms(), 2_000);
        assert_eq!(cfg.generative().unwrap().timeout_ms(), 30_000);
        assert_eq!(cfg.cors_origins, vec!["*"]);
        assert_eq!(cfg.endpoints[0].route("/predict"), "http://127.0.0.1:1/predict");

        assert!(ServiceConfig::new(vec![]).validate().is_err());
        let dup = ServiceConfig::new(vec![
            Endpoint::new("a", "http://x", EndpointKind::Predictor),
            Endpoint::new("a", "http://y", EndpointKind::Predictor),
        ]);
        assert!(dup.validate().is_err());
        let zero = ServiceConfig::new(vec![Endpoint::new("a", "http://x", EndpointKind::Predictor).with_timeout(0)]);
        assert!(zero.validate().is_err());
        let only_gen = ServiceConfig::new(vec![Endpoint::new("g", "http://x", EndpointKind::Generative)]);
        assert!(only_gen.validate().is_err());
    }
}
