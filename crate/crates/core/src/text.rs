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

//! Small text helpers shared by the stub backends and validators.

/// Splits `text` into sentences. A sentence ends at `.`, `!` or `?`
/// followed by whitespace or end of input; trailing text without a
/// terminator counts as a final sentence.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut start = 0;
    for (i, &b) in bytes.iter().enumerate() {
        if matches!(b, b'.' | b'!' | b'?') && bytes.get(i + 1).is_none_or(|n| n.is_ascii_whitespace()) {
            let s = text[start..=i].trim();
            if !s.is_empty() && s.chars().any(char::is_alphanumeric) {
                out.push(s);
            }
            start = i + 1;
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() && tail.chars().any(char::is_alphanumeric) {
        out.push(tail);
    }
    out
}

pub fn sentence_count(text: &str) -> usize {
    split_sentences(text).len()
}

/// Keeps at most `max` sentences.
pub fn truncate_sentences(text: &str, max: usize) -> String {
    split_sentences(text).into_iter().take(max).collect::<Vec<_>>().join(" ")
}

/// Makes an arbitrary fragment safe to splice into a generated sentence:
/// single line, no inner sentence boundaries, no quotes, bounded length.
pub fn fragment(text: &str, max_chars: usize) -> String {
    let mut s: String = text
        .chars()
        .map(|c| match c {
            '\n' | '\r' | '\t' => ' ',
            '\'' | '"' => '`',
            c => c,
        })
        .collect();
    for term in [". ", "! ", "? "] {
        s = s.replace(term, "; ");
    }
    let s = s.split_whitespace().collect::<Vec<_>>().join(" ");
    let s = s.trim_end_matches(['.', '!', '?', ';', ' ']).to_string();
    if s.chars().count() > max_chars {
        s.chars().take(max_chars).collect::<String>().trim_end().to_string()
    } else {
        s
    }
}

/// A short label for the page described by an observation: the text up to
/// the first `|`, newline or sentence end.
pub fn page_label(observation: &str) -> String {
    let head = observation.split(['|', '\n']).next().unwrap_or_default();
    let head = split_sentences(head).into_iter().next().unwrap_or(head);
    let label = fragment(head, 60);
    if label.is_empty() {
        "an unnamed page".into()
    } else {
        label
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sentences() {
        assert_eq!(split_sentences("One. Two! Three?"), vec!["One.", "Two!", "Three?"]);
        assert_eq!(sentence_count("Visit apple.com now. Then stop"), 2);
        assert_eq!(sentence_count("   "), 0);
        assert_eq!(sentence_count("..."), 0);
        assert_eq!(truncate_sentences("A b. C d. E f.", 2), "A b. C d.");
    }

    #[test]
    fn fragments_are_single_sentence() {
        let f = fragment("Find it. Then 'buy' it!\n", 80);
        assert_eq!(f, "Find it; Then `buy` it");
        assert_eq!(sentence_count(&format!("Goal: {f}.")), 1);
        assert_eq!(fragment("abcdef", 3), "abc");
    }

    #[test]
    fn page_labels() {
        assert_eq!(page_label("Home | shop.example | Welcome"), "Home");
        assert_eq!(page_label("Apple. Discover the range"), "Apple");
        assert_eq!(page_label(""), "an unnamed page");
    }
}
