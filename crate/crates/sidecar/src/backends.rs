// Copyright 2025 The webcoach Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! OpenAI-compatible model backends, and assembly of a [`Sidecar`] from
//! its config.

use std::sync::Arc;
use std::time::Duration;

use serde_json::{json, Value};
use webcoach_core::coach::{Coach, CoachBackend, CoachPrompt, StubCoach};
use webcoach_core::condenser::{
    BackendError, Condenser, EmbedderBackend, StubEmbedder, StubSummarizer, SummarizerBackend, SummaryPrompt,
};
use webcoach_core::config::{BackendSpec, SidecarConfig};
use webcoach_core::session::{open_store, Sidecar, SidecarError};

/// Bearer token for HTTP backends, if set.
pub const ENV_API_KEY: &str = "WEBCOACH_API_KEY";

/// One OpenAI-compatible endpoint: `{endpoint}/chat/completions` and
/// `{endpoint}/embeddings`.
#[derive(Debug, Clone)]
pub struct HttpModel {
    name: String,
    endpoint: String,
    model: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpModel {
    pub fn from_spec(role: &str, spec: &BackendSpec) -> Result<Self, SidecarError> {
        let endpoint = spec
            .endpoint
            .clone()
            .filter(|e| !e.is_empty())
            .ok_or_else(|| SidecarError::Invalid(format!("{role} backend: http kind needs an endpoint")))?;
        let model = spec.model.clone().unwrap_or_default();
        if !(spec.timeout_s.is_finite() && spec.timeout_s > 0.0) {
            return Err(SidecarError::Invalid(format!("{role} backend: timeout_s must be positive")));
        }
        let agent =
            ureq::Agent::config_builder().timeout_global(Some(Duration::from_secs_f64(spec.timeout_s))).build().into();
        Ok(HttpModel {
            name: format!("http:{role}:{model}"),
            endpoint: endpoint.trim_end_matches('/').to_string(),
            model,
            api_key: std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty()),
            agent,
        })
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, BackendError> {
        let url = format!("{}/{path}", self.endpoint);
        let mut req = self.agent.post(&url);
        if let Some(k) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {k}"));
        }
        let mut resp = req.send_json(body).map_err(transport)?;
        resp.body_mut().read_json::<Value>().map_err(transport)
    }

    fn chat(&self, text: &str) -> Result<String, BackendError> {
        let body = json!({
            "model": self.model,
            "temperature": 0,
            "messages": [{"role": "user", "content": text}],
        });
        let v = self.post("chat/completions", &body)?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| BackendError::Other("reply has no choices[0].message.content".into()))
    }
}

fn transport(e: ureq::Error) -> BackendError {
    match e {
        ureq::Error::Timeout(_) => BackendError::Timeout,
        other => BackendError::Transport(other.to_string()),
    }
}

pub struct HttpSummarizer(pub HttpModel);

impl SummarizerBackend for HttpSummarizer {
    fn name(&self) -> &str {
        &self.0.name
    }

    fn generate(&self, prompt: &SummaryPrompt<'_>) -> Result<String, BackendError> {
        self.0.chat(prompt.text)
    }

    fn deterministic(&self) -> bool {
        false
    }
}

pub struct HttpCoach(pub HttpModel);

impl CoachBackend for HttpCoach {
    fn name(&self) -> &str {
        &self.0.name
    }

    fn decide_raw(&self, prompt: &CoachPrompt<'_>) -> Result<String, BackendError> {
        self.0.chat(prompt.text)
    }

    fn deterministic(&self) -> bool {
        false
    }
}

pub struct HttpEmbedder {
    model: HttpModel,
    dimension: usize,
}

impl HttpEmbedder {
    pub fn new(model: HttpModel, dimension: usize) -> Self {
        HttpEmbedder { model, dimension }
    }
}

impl EmbedderBackend for HttpEmbedder {
    fn name(&self) -> &str {
        &self.model.name
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>, BackendError> {
        let v = self.model.post("embeddings", &json!({"model": self.model.model, "input": text}))?;
        let arr = v
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| BackendError::Other("reply has no data[0].embedding".into()))?;
        arr.iter()
            .map(|x| x.as_f64().map(|f| f as f32))
            .collect::<Option<Vec<f32>>>()
            .ok_or_else(|| BackendError::Other("embedding holds a non-number".into()))
    }
}

fn check_kind(role: &str, spec: &BackendSpec) -> Result<bool, SidecarError> {
    match spec.kind.as_str() {
        "stub" => Ok(true),
        "http" => Ok(false),
        other => Err(SidecarError::Invalid(format!("{role} backend: unknown kind '{other}'"))),
    }
}

/// The condenser named by the config's summarizer and embedder entries.
pub fn build_condenser(config: &SidecarConfig) -> Result<Condenser, SidecarError> {
    let b = &config.backends;
    let summarizer: Arc<dyn SummarizerBackend> = if check_kind("summarizer", &b.summarizer)? {
        Arc::new(StubSummarizer)
    } else {
        Arc::new(HttpSummarizer(HttpModel::from_spec("summarizer", &b.summarizer)?))
    };
    let embedder: Arc<dyn EmbedderBackend> = if check_kind("embedder", &b.embedder)? {
        Arc::new(StubEmbedder::new(config.embedding_dim, 0))
    } else {
        Arc::new(HttpEmbedder::new(HttpModel::from_spec("embedder", &b.embedder)?, config.embedding_dim))
    };
    Ok(Condenser::new(summarizer, embedder))
}

pub fn build_coach(config: &SidecarConfig) -> Result<Coach, SidecarError> {
    let spec = &config.backends.coach;
    let backend: Arc<dyn CoachBackend> = if check_kind("coach", spec)? {
        Arc::new(StubCoach::new(config.coach))
    } else {
        Arc::new(HttpCoach(HttpModel::from_spec("coach", spec)?))
    };
    Ok(Coach::new(backend))
}

/// Builds the sidecar described by `config`: backends by kind, memory from
/// the snapshot when one exists.
pub fn build_sidecar(config: SidecarConfig) -> Result<Sidecar, SidecarError> {
    let condenser = build_condenser(&config)?;
    let coach = build_coach(&config)?;
    let store = open_store(&config)?;
    Sidecar::new(config, condenser, coach, store)
}
