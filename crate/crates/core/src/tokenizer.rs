//! Byte-pair vocabulary training and encoding with atomic special tokens.
//!
//! The vocabulary is byte-level: ids 0..256 are the raw bytes, merge tokens
//! follow in the order they were learned, and the special tokens sit at the
//! top of the id space. Byte fallback makes `encode` total over valid UTF-8
//! and guarantees `decode(encode(s)) == s`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BEGIN_OF_TEXT: &str = "<|begin_of_text|>";
pub const EOT: &str = "<|eot_id|>";
pub const START_HEADER: &str = "<|start_header_id|>";
pub const END_HEADER: &str = "<|end_header_id|>";

/// The reserved token strings, in id order. Each maps to exactly one id and
/// is never split or merged into neighbours by encoding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpecialTokens {
    pub begin_of_text: String,
    pub eot: String,
    pub start_header: String,
    pub end_header: String,
}

impl Default for SpecialTokens {
    fn default() -> Self {
        Self {
            begin_of_text: BEGIN_OF_TEXT.into(),
            eot: EOT.into(),
            start_header: START_HEADER.into(),
            end_header: END_HEADER.into(),
        }
    }
}

impl SpecialTokens {
    fn all(&self) -> [&str; 4] {
        [
            &self.begin_of_text,
            &self.eot,
            &self.start_header,
            &self.end_header,
        ]
    }
}

/// Trained byte-pair vocabulary. Immutable once built; encode/decode are
/// pure and safe for concurrent use.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    /// Token id -> byte string. Specials occupy the top ids.
    tokens: Vec<Vec<u8>>,
    /// Merge rules in priority order, as pairs of existing token ids.
    merges: Vec<(u32, u32)>,
    merge_rank: HashMap<(u32, u32), u32>,
    specials: Vec<String>,
    /// Id of the first special token (== 256 + merges.len()).
    special_base: u32,
}

impl Vocabulary {
    /// Total number of ids; ids are dense in 0..size().
    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn specials(&self) -> &[String] {
        &self.specials
    }

    pub fn special_id(&self, literal: &str) -> Option<u32> {
        self.specials
            .iter()
            .position(|s| s == literal)
            .map(|i| self.special_base + i as u32)
    }

    pub fn begin_of_text_id(&self) -> u32 {
        self.special_id(BEGIN_OF_TEXT).expect("begin_of_text present")
    }

    pub fn eot_id(&self) -> u32 {
        self.special_id(EOT).expect("eot present")
    }

    pub fn is_special(&self, id: u32) -> bool {
        id >= self.special_base && (id as usize) < self.tokens.len()
    }

    /// Byte string of a token id.
    pub fn token_bytes(&self, id: u32) -> Result<&[u8]> {
        self.tokens
            .get(id as usize)
            .map(|v| v.as_slice())
            .ok_or(Error::IndexOutOfRange {
                context: "token id".into(),
                index: id as usize,
                bound: self.tokens.len(),
            })
    }

    /// Encode text to token ids. With `parse_special`, occurrences of the
    /// special literals become their single reserved ids; without it they
    /// are ordinary bytes and no special id is ever produced.
    pub fn encode(&self, text: &str, parse_special: bool) -> Vec<u32> {
        if !parse_special {
            return self.encode_plain(text.as_bytes());
        }
        let mut out = Vec::new();
        let mut rest = text;
        while !rest.is_empty() {
            // Leftmost occurrence of any special literal; longest wins on a
            // shared start position.
            let mut hit: Option<(usize, &str)> = None;
            for s in &self.specials {
                if let Some(pos) = rest.find(s.as_str()) {
                    hit = match hit {
                        Some((p, old)) if p < pos || (p == pos && old.len() >= s.len()) => {
                            Some((p, old))
                        }
                        _ => Some((pos, s)),
                    };
                }
            }
            match hit {
                Some((pos, literal)) => {
                    out.extend(self.encode_plain(&rest.as_bytes()[..pos]));
                    out.push(self.special_id(literal).expect("known special"));
                    rest = &rest[pos + literal.len()..];
                }
                None => {
                    out.extend(self.encode_plain(rest.as_bytes()));
                    rest = "";
                }
            }
        }
        out
    }

    fn encode_plain(&self, bytes: &[u8]) -> Vec<u32> {
        let mut seq: Vec<u32> = bytes.iter().map(|&b| b as u32).collect();
        loop {
            let mut best: Option<(u32, usize)> = None; // (rank, position)
            for i in 0..seq.len().saturating_sub(1) {
                if let Some(&rank) = self.merge_rank.get(&(seq[i], seq[i + 1])) {
                    if best.is_none_or(|(r, _)| rank < r) {
                        best = Some((rank, i));
                    }
                }
            }
            let Some((rank, _)) = best else { break };
            let (left, right) = self.merges[rank as usize];
            let new_id = 256 + rank;
            let mut merged = Vec::with_capacity(seq.len());
            let mut i = 0;
            while i < seq.len() {
                if i + 1 < seq.len() && seq[i] == left && seq[i + 1] == right {
                    merged.push(new_id);
                    i += 2;
                } else {
                    merged.push(seq[i]);
                    i += 1;
                }
            }
            seq = merged;
        }
        seq
    }

    /// Concatenate the byte strings of `ids`; special ids render as their
    /// literal text.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut bytes = Vec::new();
        for &id in ids {
            bytes.extend_from_slice(self.token_bytes(id)?);
        }
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }

    // ── persistence ─────────────────────────────────────────────────

    pub fn to_json(&self) -> String {
        let file = VocabFile {
            version: VOCAB_FORMAT_VERSION,
            merges: self
                .merges
                .iter()
                .map(|&(l, r)| {
                    (
                        bytes_to_chars(&self.tokens[l as usize]),
                        bytes_to_chars(&self.tokens[r as usize]),
                    )
                })
                .collect(),
            specials: self.specials.clone(),
        };
        serde_json::to_string_pretty(&file).expect("vocab serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: VocabFile = serde_json::from_str(text)
            .map_err(|e| Error::Format(format!("vocabulary file: {e}")))?;
        if file.version != VOCAB_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "vocabulary version {} (expected {})",
                file.version, VOCAB_FORMAT_VERSION
            )));
        }
        let mut tokens: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
        let mut by_bytes: HashMap<Vec<u8>, u32> =
            tokens.iter().cloned().zip(0..256u32).collect();
        let mut merges = Vec::with_capacity(file.merges.len());
        let mut merge_rank = HashMap::new();
        for (rank, (ls, rs)) in file.merges.iter().enumerate() {
            let lb = chars_to_bytes(ls)?;
            let rb = chars_to_bytes(rs)?;
            let l = *by_bytes.get(&lb).ok_or_else(|| {
                Error::Format(format!("merge #{rank} references unknown token {ls:?}"))
            })?;
            let r = *by_bytes.get(&rb).ok_or_else(|| {
                Error::Format(format!("merge #{rank} references unknown token {rs:?}"))
            })?;
            let mut bytes = lb;
            bytes.extend_from_slice(&rb);
            let id = tokens.len() as u32;
            if by_bytes.insert(bytes.clone(), id).is_some() {
                return Err(Error::Format(format!(
                    "merge #{rank} duplicates an existing token byte string"
                )));
            }
            tokens.push(bytes);
            merges.push((l, r));
            merge_rank.insert((l, r), rank as u32);
        }
        let special_base = tokens.len() as u32;
        for s in &file.specials {
            tokens.push(s.as_bytes().to_vec());
        }
        Ok(Self {
            tokens,
            merges,
            merge_rank,
            specials: file.specials,
            special_base,
        })
    }
}

const VOCAB_FORMAT_VERSION: u32 = 1;

/// On-disk layout. Merge components are byte strings written one char per
/// byte (U+0000..U+00FF) so arbitrary bytes survive JSON.
#[derive(Serialize, Deserialize)]
struct VocabFile {
    version: u32,
    merges: Vec<(String, String)>,
    specials: Vec<String>,
}

fn bytes_to_chars(bytes: &[u8]) -> String {
    bytes.iter().map(|&b| char::from(b)).collect()
}

fn chars_to_bytes(s: &str) -> Result<Vec<u8>> {
    s.chars()
        .map(|c| {
            let v = c as u32;
            if v > 255 {
                Err(Error::Format(format!(
                    "merge component contains char U+{v:04X} outside byte range"
                )))
            } else {
                Ok(v as u8)
            }
        })
        .collect()
}

/// Learn a byte-pair vocabulary by greedy highest-frequency merges.
///
/// Merging stops when `vocab_size` is reached or no adjacent pair occurs
/// twice. Ties break to the lowest (left id, right id) pair. A merge is
/// skipped when its byte string would collide with a special literal
/// (specials stay unreachable from plain text) or with an existing token
/// (token byte strings stay unique, so the string-pair file format is
/// lossless).
pub fn train_bpe(
    corpus: &[String],
    vocab_size: usize,
    special: &SpecialTokens,
) -> Result<Vocabulary> {
    let specials: Vec<String> = special.all().iter().map(|s| s.to_string()).collect();
    if corpus.is_empty() {
        return Err(Error::InvalidData("BPE training corpus is empty".into()));
    }
    if vocab_size < 256 + specials.len() {
        return Err(Error::InvalidConfig(format!(
            "vocab_size {} below minimum {} (256 bytes + {} specials)",
            vocab_size,
            256 + specials.len(),
            specials.len()
        )));
    }
    let budget = vocab_size - 256 - specials.len();

    let mut seqs: Vec<Vec<u32>> = corpus
        .iter()
        .map(|s| s.bytes().map(|b| b as u32).collect())
        .collect();
    let mut tokens: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
    let mut taken: std::collections::HashSet<Vec<u8>> = tokens.iter().cloned().collect();
    for s in &specials {
        taken.insert(s.as_bytes().to_vec());
    }
    let mut merges: Vec<(u32, u32)> = Vec::new();
    let mut merge_rank: HashMap<(u32, u32), u32> = HashMap::new();

    while merges.len() < budget {
        let mut counts: HashMap<(u32, u32), usize> = HashMap::new();
        for seq in &seqs {
            for w in seq.windows(2) {
                *counts.entry((w[0], w[1])).or_insert(0) += 1;
            }
        }
        let mut best: Option<((u32, u32), usize)> = None;
        for (&pair, &count) in &counts {
            if count < 2 {
                continue;
            }
            let mut cand = tokens[pair.0 as usize].clone();
            cand.extend_from_slice(&tokens[pair.1 as usize]);
            if taken.contains(&cand) {
                continue;
            }
            let better = match best {
                None => true,
                Some((bp, bc)) => count > bc || (count == bc && pair < bp),
            };
            if better {
                best = Some((pair, count));
            }
        }
        let Some(((left, right), _)) = best else { break };

        let new_id = tokens.len() as u32;
        let mut bytes = tokens[left as usize].clone();
        bytes.extend_from_slice(&tokens[right as usize]);
        taken.insert(bytes.clone());
        tokens.push(bytes);
        merge_rank.insert((left, right), merges.len() as u32);
        merges.push((left, right));

        for seq in seqs.iter_mut() {
            let mut merged = Vec::with_capacity(seq.len());
            let mut i = 0;
            while i < seq.len() {
                if i + 1 < seq.len() && seq[i] == left && seq[i + 1] == right {
                    merged.push(new_id);
                    i += 2;
                } else {
                    merged.push(seq[i]);
                    i += 1;
                }
            }
            *seq = merged;
        }
    }

    let special_base = tokens.len() as u32;
    for s in &specials {
        tokens.push(s.as_bytes().to_vec());
    }
    Ok(Vocabulary {
        tokens,
        merges,
        merge_rank,
        specials,
        special_base,
    })
}
