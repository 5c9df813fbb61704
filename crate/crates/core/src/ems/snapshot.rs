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

//! On-disk store container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "EMS1" | dim: u32 | count: u64 | sha256(body): [u8; 32] | body
//! body := count * ( emb_len: u32 | dim * f32 | json_len: u32 | json )
//! ```
//!
//! `json` holds `summary_text`, `meta` and `evidence`. The graph index is
//! not stored; it is rebuilt from the records in file order.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{EmsError, EpisodeMeta, IndexConfig, MemoryRecord, MemoryStore};
use crate::condenser::Evidence;

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"EMS1";
const HEADER_LEN: usize = 4 + 4 + 8 + 32;

#[derive(Serialize, Deserialize)]
struct Payload {
    summary_text: String,
    meta: EpisodeMeta,
    #[serde(default)]
    evidence: Vec<Evidence>,
}

pub fn encode(store: &MemoryStore) -> Vec<u8> {
    let mut body = Vec::new();
    for r in store.records() {
        body.extend_from_slice(&((r.embedding.len() * 4) as u32).to_le_bytes());
        for x in &r.embedding {
            body.extend_from_slice(&x.to_le_bytes());
        }
        let json = serde_json::to_vec(&Payload {
            summary_text: r.summary_text.clone(),
            meta: r.meta.clone(),
            evidence: r.evidence.clone(),
        })
        .expect("payload serializes");
        body.extend_from_slice(&(json.len() as u32).to_le_bytes());
        body.extend_from_slice(&json);
    }
    let mut out = Vec::with_capacity(HEADER_LEN + body.len());
    out.extend_from_slice(SNAPSHOT_MAGIC);
    out.extend_from_slice(&(store.dimension() as u32).to_le_bytes());
    out.extend_from_slice(&(store.len() as u64).to_le_bytes());
    out.extend_from_slice(&Sha256::digest(&body));
    out.extend_from_slice(&body);
    out
}

pub fn decode(bytes: &[u8], config: IndexConfig) -> Result<MemoryStore, EmsError> {
    if bytes.len() < 4 {
        return Err(EmsError::Integrity("file shorter than magic".into()));
    }
    if &bytes[..4] != SNAPSHOT_MAGIC {
        if &bytes[..3] == b"EMS" {
            return Err(EmsError::Migration(format!(
                "snapshot version {:?} is not supported (expected {:?})",
                char::from(bytes[3]),
                char::from(SNAPSHOT_MAGIC[3])
            )));
        }
        return Err(EmsError::Integrity("bad magic".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(EmsError::Integrity("truncated header".into()));
    }
    let dim = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let checksum = &bytes[16..48];
    let body = &bytes[HEADER_LEN..];
    if Sha256::digest(body).as_slice() != checksum {
        return Err(EmsError::Integrity("checksum mismatch".into()));
    }

    let mut store = MemoryStore::new(dim, config);
    let mut cur = Cursor { buf: body, pos: 0 };
    for i in 0..count {
        let emb_len = cur.u32()? as usize;
        if emb_len != dim * 4 {
            return Err(EmsError::Integrity(format!("record {i}: embedding block of {emb_len} bytes")));
        }
        let embedding: Vec<f32> =
            cur.take(emb_len)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        let json_len = cur.u32()? as usize;
        let payload: Payload =
            serde_json::from_slice(cur.take(json_len)?).map_err(|e| EmsError::Integrity(format!("record {i}: {e}")))?;
        store.insert(MemoryRecord {
            embedding,
            summary_text: payload.summary_text,
            meta: payload.meta,
            evidence: payload.evidence,
        })?;
    }
    if cur.pos != body.len() {
        return Err(EmsError::Integrity("trailing bytes after last record".into()));
    }
    Ok(store)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], EmsError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| EmsError::Integrity("record runs past end of file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, EmsError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Writes atomically: a temp file in the target directory is renamed over
/// `path` once fully flushed.
pub fn snapshot(store: &MemoryStore, path: &Path) -> Result<(), EmsError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(&encode(store))?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| EmsError::Io(e.error))?;
    Ok(())
}

pub fn load(path: &Path, config: IndexConfig) -> Result<MemoryStore, EmsError> {
    decode(&std::fs::read(path)?, config)
}

#[cfg(test)]
mod tests {
    use super::super::tests::random_store;
    use super::super::RetrievalFilter;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_preserves_search() {
        let s = random_store(600, 32, 21);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.ems");
        snapshot(&s, &path).unwrap();
        let back = load(&path, IndexConfig::default()).unwrap();
        assert!(s.same_records(&back));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let q: Vec<f32> = (0..32).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            let f = RetrievalFilter::default();
            let a = s.search_exact(&q, 5, &f).unwrap();
            let b = back.search_exact(&q, 5, &f).unwrap();
            assert_eq!(a.episode_ids(), b.episode_ids());
            let sa: Vec<f64> = a.hits.iter().map(|h| h.score).collect();
            let sb: Vec<f64> = b.hits.iter().map(|h| h.score).collect();
            assert_eq!(sa, sb);
            assert_eq!(
                s.search_ann(&q, 5, &f).unwrap().episode_ids(),
                back.search_ann(&q, 5, &f).unwrap().episode_ids()
            );
        }
    }

    #[test]
    fn empty_store_round_trip() {
        let s = MemoryStore::new(16, IndexConfig::default());
        let back = decode(&encode(&s), IndexConfig::default()).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.dimension(), 16);
    }

    #[test]
    fn truncation_and_corruption_are_integrity_errors() {
        let bytes = encode(&random_store(10, 8, 2));
        for cut in [2, 20, HEADER_LEN + 3, bytes.len() - 1] {
            assert!(matches!(decode(&bytes[..cut], IndexConfig::default()), Err(EmsError::Integrity(_))));
        }
        let mut flipped = bytes.clone();
        let last = flipped.len() - 5;
        flipped[last] ^= 0x40;
        assert!(matches!(decode(&flipped, IndexConfig::default()), Err(EmsError::Integrity(_))));
    }

    #[test]
    fn other_version_needs_migration() {
        let mut bytes = encode(&random_store(3, 4, 9));
        bytes[3] = b'2';
        assert!(matches!(decode(&bytes, IndexConfig::default()), Err(EmsError::Migration(_))));
    }
}
