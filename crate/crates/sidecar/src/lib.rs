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

//! JSON-over-HTTP front end for the coaching sidecar, plus a blocking
//! client that speaks the same protocol.

pub mod backends;
pub mod client;
pub mod server;

pub use backends::{
    build_coach, build_condenser, build_sidecar, HttpCoach, HttpEmbedder, HttpModel, HttpSummarizer, ENV_API_KEY,
};
pub use client::{ClientError, SidecarClient};
pub use server::{router, serve, spawn_gc, ApiError, SearchHit, SearchReply};
