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

//! Blocking client for the sidecar's HTTP API.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use webcoach_core::coach::SystemMessage;
use webcoach_core::session::{FinalizeOutcome, OpenSession, SessionInfo, Stats, StepOutcome};
use webcoach_core::sim::{CoachLink, LinkReply};

use crate::server::{AdapterRegistered, Opened, SearchReply};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("sidecar unreachable: {0}")]
    Transport(String),
    #[error("sidecar replied {status} {code}: {message}")]
    Api { status: u16, code: String, message: String },
    #[error("cannot decode sidecar reply: {0}")]
    Decode(String),
}

impl ClientError {
    /// Errors about the caller's own request, as opposed to the sidecar
    /// being down.
    pub fn is_client_fault(&self) -> bool {
        matches!(self, ClientError::Api { status, .. } if (400..500).contains(status))
    }
}

#[derive(Debug, Clone)]
pub struct SidecarClient {
    base: String,
    agent: ureq::Agent,
}

#[derive(serde::Deserialize)]
struct ErrorBody {
    error: ErrorDetail,
}

#[derive(serde::Deserialize)]
struct ErrorDetail {
    code: String,
    message: String,
}

#[derive(serde::Deserialize)]
struct AdviceReply {
    advice: Vec<SystemMessage>,
}

impl SidecarClient {
    /// `timeout` bounds every call, so a stalled sidecar never holds the
    /// caller longer than that.
    pub fn new(base_url: &str, timeout: Duration) -> Self {
        let agent =
            ureq::Agent::config_builder().timeout_global(Some(timeout)).http_status_as_error(false).build().into();
        SidecarClient { base: base_url.trim_end_matches('/').to_string(), agent }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn read<T: DeserializeOwned>(
        resp: Result<ureq::http::Response<ureq::Body>, ureq::Error>,
    ) -> Result<T, ClientError> {
        let mut resp = resp.map_err(|e| ClientError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| ClientError::Transport(e.to_string()))?;
        if (200..300).contains(&status) {
            return serde_json::from_str(&text).map_err(|e| ClientError::Decode(e.to_string()));
        }
        match serde_json::from_str::<ErrorBody>(&text) {
            Ok(b) => Err(ClientError::Api { status, code: b.error.code, message: b.error.message }),
            Err(_) => Err(ClientError::Api { status, code: "http".into(), message: text }),
        }
    }

    fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, ClientError> {
        Self::read(self.agent.get(&self.url(path)).call())
    }

    fn post_json<T: DeserializeOwned>(&self, path: &str, body: &impl Serialize) -> Result<T, ClientError> {
        Self::read(self.agent.post(&self.url(path)).send_json(body))
    }

    fn post_bytes<T: DeserializeOwned>(&self, path: &str, body: &[u8]) -> Result<T, ClientError> {
        Self::read(self.agent.post(&self.url(path)).header("Content-Type", "application/x-ndjson").send(body))
    }

    pub fn healthz(&self) -> Result<serde_json::Value, ClientError> {
        self.get("/v1/healthz")
    }

    pub fn stats(&self) -> Result<Stats, ClientError> {
        self.get("/v1/stats")
    }

    pub fn open(&self, req: &OpenSession) -> Result<String, ClientError> {
        self.post_json::<Opened>("/v1/sessions", req).map(|o| o.session_id)
    }

    pub fn session(&self, id: &str) -> Result<SessionInfo, ClientError> {
        self.get(&format!("/v1/sessions/{id}"))
    }

    pub fn submit_step(&self, id: &str, raw: &[u8]) -> Result<StepOutcome, ClientError> {
        self.post_bytes(&format!("/v1/sessions/{id}/steps"), raw)
    }

    pub fn finalize(&self, id: &str, raw: &[u8]) -> Result<FinalizeOutcome, ClientError> {
        self.post_bytes(&format!("/v1/sessions/{id}/finalize"), raw)
    }

    pub fn poll_advice(&self, id: &str) -> Result<Vec<SystemMessage>, ClientError> {
        self.get::<AdviceReply>(&format!("/v1/sessions/{id}/advice")).map(|r| r.advice)
    }

    pub fn register_adapter(&self, spec_json: &str) -> Result<String, ClientError> {
        self.post_bytes::<AdapterRegistered>("/v1/adapters", spec_json.as_bytes()).map(|r| r.adapter_id)
    }

    /// Text search; `exclude_task` ids are sent comma-separated.
    pub fn search(&self, q: &str, k: usize, exclude_task: &[&str]) -> Result<SearchReply, ClientError> {
        let mut req = self.agent.get(&self.url("/v1/memory/search")).query("q", q).query("k", k.to_string());
        if !exclude_task.is_empty() {
            req = req.query("exclude_task", exclude_task.join(","));
        }
        Self::read(req.call())
    }
}

impl CoachLink for SidecarClient {
    fn open(&self, req: &OpenSession) -> Result<String, String> {
        SidecarClient::open(self, req).map_err(|e| e.to_string())
    }

    fn step(&self, session_id: &str, lines: &str) -> Result<LinkReply, String> {
        let out = self.submit_step(session_id, lines.as_bytes()).map_err(|e| e.to_string())?;
        Ok(LinkReply {
            advice: out.advice.into_iter().map(|m| m.content).collect(),
            closed: out.auto_finalized.is_some(),
        })
    }

    fn finalize(&self, session_id: &str, lines: &str) -> Result<(), String> {
        SidecarClient::finalize(self, session_id, lines.as_bytes()).map(|_| ()).map_err(|e| e.to_string())
    }
}
