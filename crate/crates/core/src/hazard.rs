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

//! Hazard vocabulary shared by the condenser stub, the coach stub and the
//! simulator. Keeping the phrases in one place lets the whole loop close
//! without a model in it.

use serde::{Deserialize, Serialize};

/// A navigation hazard that warrants intervention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hazard {
    Loop,
    Captcha,
    DeadEnd,
    Http4xx,
}

impl Hazard {
    pub const ALL: [Hazard; 4] = [Hazard::Loop, Hazard::Captcha, Hazard::DeadEnd, Hazard::Http4xx];

    /// Lower-case token searched for in summaries and advice.
    pub fn token(self) -> &'static str {
        match self {
            Hazard::Loop => "loop",
            Hazard::Captcha => "captcha",
            Hazard::DeadEnd => "dead end",
            Hazard::Http4xx => "http 4xx",
        }
    }

    /// Evidence name used for `fail_modes` entries.
    pub fn fail_mode_name(self) -> &'static str {
        match self {
            Hazard::Loop => "Navigation loop",
            Hazard::Captcha => "CAPTCHA gate",
            Hazard::DeadEnd => "Dead end",
            Hazard::Http4xx => "HTTP 4xx error",
        }
    }

    /// Phrase used inside generated sentences ("... got stuck in a navigation loop").
    pub fn phrase(self) -> &'static str {
        match self {
            Hazard::Loop => "navigation loop",
            Hazard::Captcha => "captcha gate",
            Hazard::DeadEnd => "dead end",
            Hazard::Http4xx => "http 4xx error",
        }
    }

    pub fn from_fail_mode_name(name: &str) -> Option<Hazard> {
        Hazard::ALL.into_iter().find(|h| h.fail_mode_name().eq_ignore_ascii_case(name.trim()))
    }
}

/// Hazards whose tokens occur in `text` (case-insensitive). `http 4xx`
/// also matches concrete codes such as "http 404" or "404 not found".
pub fn hazards_in_text(text: &str) -> Vec<Hazard> {
    let lower = text.to_ascii_lowercase();
    Hazard::ALL
        .into_iter()
        .filter(|h| match h {
            Hazard::Http4xx => lower.contains(h.token()) || mentions_4xx_code(&lower),
            _ => lower.contains(h.token()),
        })
        .collect()
}

fn mentions_4xx_code(lower: &str) -> bool {
    let bytes = lower.as_bytes();
    bytes.windows(3).enumerate().any(|(i, w)| {
        w[0] == b'4'
            && w[1].is_ascii_digit()
            && w[2].is_ascii_digit()
            && (i == 0 || !bytes[i - 1].is_ascii_alphanumeric())
            && bytes.get(i + 3).is_none_or(|b| !b.is_ascii_alphanumeric())
            && (lower[..i].ends_with("http ")
                || lower[i + 3..].starts_with(" not found")
                || lower[i + 3..].starts_with(" forbidden"))
    })
}
