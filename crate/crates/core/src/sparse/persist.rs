//! Binary index container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    b"SPIX"
//! version  u8
//! docs     u32 count, then per doc: doc_id u64, length u32, text (u32 len + UTF-8)
//! terms    u32 count, then per term: term (u32 len + UTF-8), u32 postings,
//!          then per posting: ordinal u32, tf u32
//! digest   32-byte SHA-256 of everything before it
//! ```

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::index::{IndexedDoc, InvertedIndex, Posting};
use super::IndexError;

pub const MAGIC: &[u8; 4] = b"SPIX";
pub const FORMAT_VERSION: u8 = 1;
const DIGEST_LEN: usize = 32;

pub fn encode_index(index: &InvertedIndex) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.push(FORMAT_VERSION);
    put_u32(&mut buf, index.docs.len() as u32);
    for doc in &index.docs {
        buf.extend_from_slice(&doc.doc_id.to_le_bytes());
        put_u32(&mut buf, doc.length);
        put_str(&mut buf, &doc.text);
    }
    put_u32(&mut buf, index.terms.len() as u32);
    for (term, list) in index.terms.iter().zip(&index.postings) {
        put_str(&mut buf, term);
        put_u32(&mut buf, list.len() as u32);
        for p in list {
            put_u32(&mut buf, p.doc);
            put_u32(&mut buf, p.tf);
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    buf
}

pub fn decode_index(bytes: &[u8]) -> Result<InvertedIndex, IndexError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(r.corrupt_at(0, "bad magic bytes"));
    }
    let version = r.take(1)?[0];
    if version != FORMAT_VERSION {
        return Err(IndexError::VersionMismatch { found: version, expected: FORMAT_VERSION });
    }
    if bytes.len() < r.pos + DIGEST_LEN {
        return Err(r.corrupt_at(bytes.len(), "file too short"));
    }
    let body_end = bytes.len() - DIGEST_LEN;
    if Sha256::digest(&bytes[..body_end]).as_slice() != &bytes[body_end..] {
        return Err(r.corrupt_at(body_end, "checksum mismatch"));
    }
    r.bytes = &bytes[..body_end];

    let doc_count = r.u32()? as usize;
    let mut docs: Vec<IndexedDoc> = Vec::with_capacity(doc_count.min(1 << 20));
    for _ in 0..doc_count {
        let at = r.pos;
        let doc_id = r.u64()?;
        let length = r.u32()?;
        let text = r.string()?;
        if docs.last().is_some_and(|prev| prev.doc_id >= doc_id) {
            return Err(r.corrupt_at(at, "documents not in ascending doc_id order"));
        }
        docs.push(IndexedDoc { doc_id, length, text });
    }

    let term_count = r.u32()? as usize;
    let mut terms: Vec<String> = Vec::with_capacity(term_count.min(1 << 20));
    let mut postings = Vec::with_capacity(term_count.min(1 << 20));
    let mut token_totals = vec![0u64; docs.len()];
    for _ in 0..term_count {
        let at = r.pos;
        let term = r.string()?;
        if term.is_empty() || terms.last().is_some_and(|prev| *prev >= term) {
            return Err(r.corrupt_at(at, "vocabulary not sorted and unique"));
        }
        let n = r.u32()? as usize;
        let mut list: Vec<Posting> = Vec::with_capacity(n.min(docs.len()));
        for _ in 0..n {
            let at = r.pos;
            let doc = r.u32()?;
            let tf = r.u32()?;
            let ordered = list.last().is_none_or(|prev| prev.doc < doc);
            if doc as usize >= docs.len() || tf == 0 || !ordered {
                return Err(r.corrupt_at(at, "invalid posting"));
            }
            token_totals[doc as usize] += tf as u64;
            list.push(Posting { doc, tf });
        }
        if list.is_empty() {
            return Err(r.corrupt_at(at, "empty postings list"));
        }
        terms.push(term);
        postings.push(list);
    }
    if r.pos != r.bytes.len() {
        return Err(r.corrupt_at(r.pos, "trailing bytes"));
    }
    if docs.iter().zip(&token_totals).any(|(d, &t)| d.length as u64 != t) {
        return Err(r.corrupt_at(r.pos, "document lengths disagree with postings"));
    }

    Ok(InvertedIndex::from_parts(docs, terms, postings))
}

pub fn save_index(index: &InvertedIndex, path: impl AsRef<Path>) -> Result<(), IndexError> {
    let path = path.as_ref();
    let bytes = encode_index(index);
    // Write then rename so a crashed save never leaves a half-written index.
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).and_then(|_| fs::rename(&tmp, path)).map_err(|source| IndexError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_index(path: impl AsRef<Path>) -> Result<InvertedIndex, IndexError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| IndexError::Io { path: path.display().to_string(), source })?;
    decode_index(&bytes)
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    put_u32(buf, s.len() as u32);
    buf.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn corrupt_at(&self, offset: usize, reason: &str) -> IndexError {
        IndexError::Corrupt { offset, reason: reason.to_owned() }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], IndexError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(self.corrupt_at(self.pos, "unexpected end of file")),
        }
    }

    fn u32(&mut self) -> Result<u32, IndexError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, IndexError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String, IndexError> {
        let at = self.pos;
        let len = self.u32()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| self.corrupt_at(at, "invalid UTF-8"))
    }
}
