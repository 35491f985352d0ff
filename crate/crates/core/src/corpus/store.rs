//! Append-once binary record store, read through a memory map.
//!
//! Layout (little-endian throughout):
//!
//! ```text
//! 0   magic "PSYD"            4 bytes
//! 4   version                 u32
//! 8   record_count            u64
//! 16  index_offset            u64
//! 24  target_count            u16
//! 26  task_code               u8
//! 27  metadata length         u32, followed by the manifest as JSON
//! ..  record payloads         text bytes, then target_count f32 values
//! index_offset                record_count x (payload_offset u64, text_len u32)
//! ```
//!
//! Offsets are absolute within the file, so a store can be copied or moved
//! freely.

use super::{clean_text, io_err, CorpusError, DatasetManifest, RawRecord, Result, TaskKind};
use memmap2::Mmap;
use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

pub const STORE_MAGIC: &[u8; 4] = b"PSYD";
pub const STORE_VERSION: u32 = 1;

const HEADER_LEN: usize = 27;
const INDEX_ENTRY_LEN: usize = 12;

/// Writes `records` to `path` atomically (temp file in the same directory,
/// then rename) and reopens the result. Texts are cleaned before storage.
pub fn ingest(records: &[RawRecord], manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<MmapStore> {
    let path = path.as_ref();
    if records.is_empty() {
        return Err(CorpusError::Config("cannot ingest an empty record set".into()));
    }
    let target_count = manifest.target_count();
    if target_count == 0 {
        return Err(CorpusError::Config("manifest must name at least one target".into()));
    }
    if target_count > u16::MAX as usize {
        return Err(CorpusError::Config(format!("{target_count} targets exceed the u16 header field")));
    }
    let mut seen = HashSet::with_capacity(records.len());
    for r in records {
        if !seen.insert(r.id) {
            return Err(CorpusError::Validation {
                id: r.id,
                reason: "duplicate record id".into(),
            });
        }
        if r.targets.len() != target_count {
            return Err(CorpusError::Validation {
                id: r.id,
                reason: format!("expected {target_count} targets, found {}", r.targets.len()),
            });
        }
        if let Some(pos) = r.targets.iter().position(|t| !t.is_finite()) {
            return Err(CorpusError::Validation {
                id: r.id,
                reason: format!("target {pos} is not finite ({})", r.targets[pos]),
            });
        }
    }

    let mut manifest = manifest.clone();
    manifest.record_count = records.len() as u64;
    let meta = serde_json::to_vec(&manifest).map_err(|e| CorpusError::Parse(e.to_string()))?;

    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(&dir).map_err(io_err(&dir))?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        let wr = |w: &mut BufWriter<&File>, bytes: &[u8]| w.write_all(bytes).map_err(io_err(path));

        // The index offset is patched in once the payload length is known.
        let mut header = Vec::with_capacity(HEADER_LEN);
        header.extend_from_slice(STORE_MAGIC);
        header.extend_from_slice(&STORE_VERSION.to_le_bytes());
        header.extend_from_slice(&(records.len() as u64).to_le_bytes());
        let payload_start = HEADER_LEN + 4 + meta.len();
        let mut offset = payload_start as u64;
        let mut index = Vec::with_capacity(records.len() * INDEX_ENTRY_LEN);
        let cleaned: Vec<String> = records.iter().map(|r| clean_text(&r.text)).collect();
        for text in &cleaned {
            if text.len() > u32::MAX as usize {
                return Err(CorpusError::Config("text longer than 4 GiB".into()));
            }
            index.extend_from_slice(&offset.to_le_bytes());
            index.extend_from_slice(&(text.len() as u32).to_le_bytes());
            offset += (text.len() + 4 * target_count) as u64;
        }
        header.extend_from_slice(&offset.to_le_bytes());
        header.extend_from_slice(&(target_count as u16).to_le_bytes());
        header.push(manifest.task.code());
        debug_assert_eq!(header.len(), HEADER_LEN);

        wr(&mut w, &header)?;
        wr(&mut w, &(meta.len() as u32).to_le_bytes())?;
        wr(&mut w, &meta)?;
        for (r, text) in records.iter().zip(&cleaned) {
            wr(&mut w, text.as_bytes())?;
            for &t in &r.targets {
                wr(&mut w, &(t as f32).to_le_bytes())?;
            }
        }
        wr(&mut w, &index)?;
        w.flush().map_err(io_err(path))?;
    }
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| CorpusError::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    MmapStore::open(path)
}

/// A read-only, memory-mapped view of an ingested dataset.
#[derive(Debug)]
pub struct MmapStore {
    path: PathBuf,
    map: Mmap,
    manifest: DatasetManifest,
    record_count: usize,
    index_offset: usize,
    target_count: usize,
}

/// A borrowed record. The text points straight into the mapped file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Record<'a> {
    pub text: &'a str,
    raw_targets: &'a [u8],
}

impl<'a> Record<'a> {
    pub fn targets_f32(&self) -> Vec<f32> {
        self.raw_targets
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.targets_f32().into_iter().map(f64::from).collect()
    }
}

fn read_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}
fn read_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}
fn read_u64(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().unwrap())
}

impl MmapStore {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::open(&path).map_err(io_err(&path))?;
        // SAFETY: the store is immutable once written; ingest replaces files by
        // rename, which never mutates an existing mapping.
        let map = unsafe { Mmap::map(&file) }.map_err(io_err(&path))?;
        let bad = |reason: String| CorpusError::Format {
            path: path.clone(),
            reason,
        };
        if map.len() < HEADER_LEN + 4 {
            return Err(bad(format!("file too short ({} bytes)", map.len())));
        }
        if &map[0..4] != STORE_MAGIC {
            return Err(bad("bad magic".into()));
        }
        let version = read_u32(&map, 4);
        if version != STORE_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let record_count = read_u64(&map, 8) as usize;
        let index_offset = read_u64(&map, 16) as usize;
        let target_count = read_u16(&map, 24) as usize;
        let task = TaskKind::from_code(map[26]).ok_or_else(|| bad(format!("unknown task code {}", map[26])))?;
        let meta_len = read_u32(&map, HEADER_LEN) as usize;
        let payload_start = HEADER_LEN + 4 + meta_len;
        let expected_len = record_count
            .checked_mul(INDEX_ENTRY_LEN)
            .and_then(|n| n.checked_add(index_offset));
        if expected_len != Some(map.len()) || payload_start > index_offset {
            return Err(bad("index region does not match file length".into()));
        }
        let manifest: DatasetManifest = serde_json::from_slice(&map[HEADER_LEN + 4..payload_start])
            .map_err(|e| bad(format!("metadata: {e}")))?;
        if manifest.record_count as usize != record_count
            || manifest.target_count() != target_count
            || manifest.task != task
        {
            return Err(bad("metadata disagrees with header".into()));
        }
        for i in 0..record_count {
            let at = index_offset + i * INDEX_ENTRY_LEN;
            let off = read_u64(&map, at) as usize;
            let len = read_u32(&map, at + 8) as usize;
            let end = off.checked_add(len + 4 * target_count);
            if off < payload_start || end.is_none_or(|e| e > index_offset) {
                return Err(bad(format!("record {i} payload out of bounds")));
            }
        }
        Ok(Self {
            path,
            map,
            manifest,
            record_count,
            index_offset,
            target_count,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.record_count
    }

    pub fn is_empty(&self) -> bool {
        self.record_count == 0
    }

    pub fn target_count(&self) -> usize {
        self.target_count
    }

    /// Size of the mapped file in bytes.
    pub fn file_len(&self) -> usize {
        self.map.len()
    }

    pub fn get(&self, index: usize) -> Result<Record<'_>> {
        if index >= self.record_count {
            return Err(CorpusError::Bounds {
                index,
                len: self.record_count,
            });
        }
        let at = self.index_offset + index * INDEX_ENTRY_LEN;
        let off = read_u64(&self.map, at) as usize;
        let len = read_u32(&self.map, at + 8) as usize;
        let text = std::str::from_utf8(&self.map[off..off + len]).map_err(|e| CorpusError::Format {
            path: self.path.clone(),
            reason: format!("record {index} text is not UTF-8: {e}"),
        })?;
        let raw_targets = &self.map[off + len..off + len + 4 * self.target_count];
        Ok(Record { text, raw_targets })
    }

    /// Returns records in the order of `indices`. Only the touched pages of the
    /// mapping are faulted in.
    pub fn read_batch(&self, indices: &[usize]) -> Result<Vec<Record<'_>>> {
        indices.iter().map(|&i| self.get(i)).collect()
    }

    /// Materializes every record. Meant for small stores and tests.
    pub fn read_all(&self) -> Result<Vec<Record<'_>>> {
        (0..self.record_count).map(|i| self.get(i)).collect()
    }
}
