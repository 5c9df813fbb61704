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

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CoachDecision;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemMessage {
    pub role: String,
    pub content: String,
}

impl SystemMessage {
    pub fn new(content: impl Into<String>) -> Self {
        SystemMessage { role: "system".into(), content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectionReceipt {
    pub session_id: String,
    pub step_index: usize,
    /// sha256 of the advice text, hex.
    pub advice_sha256: String,
    /// Position in this session's delivery order, from 0.
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum InjectError {
    #[error("decision does not intervene")]
    NotIntervening,
    #[error("session {0} is no longer live")]
    StaleSession(String),
}

/// Ordered, single-consumer advice channel of one session. Injection only
/// ever appends here.
#[derive(Debug, Clone)]
pub struct AdviceQueue {
    session_id: String,
    live: bool,
    next_seq: u64,
    pending: VecDeque<SystemMessage>,
    receipts: Vec<InjectionReceipt>,
}

impl AdviceQueue {
    pub fn new(session_id: impl Into<String>) -> Self {
        AdviceQueue {
            session_id: session_id.into(),
            live: true,
            next_seq: 0,
            pending: VecDeque::new(),
            receipts: Vec::new(),
        }
    }

    pub fn inject(&mut self, decision: &CoachDecision, step_index: usize) -> Result<InjectionReceipt, InjectError> {
        if !self.live {
            return Err(InjectError::StaleSession(self.session_id.clone()));
        }
        let advice = match (decision.intervene, &decision.advice) {
            (true, Some(a)) => a,
            _ => return Err(InjectError::NotIntervening),
        };
        let receipt = InjectionReceipt {
            session_id: self.session_id.clone(),
            step_index,
            advice_sha256: hex::encode(Sha256::digest(advice.as_bytes())),
            seq: self.next_seq,
        };
        self.next_seq += 1;
        self.pending.push_back(SystemMessage::new(advice.clone()));
        self.receipts.push(receipt.clone());
        Ok(receipt)
    }

    /// Drains everything queued since the last poll, oldest first.
    pub fn poll(&mut self) -> Vec<SystemMessage> {
        self.pending.drain(..).collect()
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn receipts(&self) -> &[InjectionReceipt] {
        &self.receipts
    }

    pub fn close(&mut self) {
        self.live = false;
    }

    pub fn is_live(&self) -> bool {
        self.live
    }
}
