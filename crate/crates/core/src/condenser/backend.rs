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

use crate::trajectory::TrajectoryLog;

#[derive(Debug, Clone, thiserror::Error)]
pub enum BackendError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("backend timed out")]
    Timeout,
    #[error("{0}")]
    Other(String),
}

/// What a summarizer receives: the rendered template text plus the
/// trajectory it was rendered from. Model backends send `text`; the stub
/// reads `trajectory` directly.
#[derive(Debug, Clone, Copy)]
pub struct SummaryPrompt<'a> {
    pub text: &'a str,
    pub trajectory: &'a TrajectoryLog,
    /// 0 on the first call, 1 on the repair retry.
    pub attempt: u32,
}

pub trait SummarizerBackend: Send + Sync {
    fn name(&self) -> &str;
    fn generate(&self, prompt: &SummaryPrompt<'_>) -> Result<String, BackendError>;
    fn deterministic(&self) -> bool;
    /// Whether concurrent calls from several sessions are allowed.
    fn shareable(&self) -> bool {
        true
    }
}

pub trait EmbedderBackend: Send + Sync {
    fn name(&self) -> &str;
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f32>, BackendError>;
    fn shareable(&self) -> bool {
        true
    }
}
