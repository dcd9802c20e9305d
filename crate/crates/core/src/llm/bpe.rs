//! Byte-level BPE tokenizer compatible with the published GPT-2 vocabulary.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::Mutex;

use fancy_regex::Regex;

use crate::error::{Error, Result};

const PRE_SPLIT: &str = r"'s|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+";

const EMBEDDED_VOCAB: &str = include_str!("../../assets/gpt2/vocab.json");
const EMBEDDED_MERGES: &str = include_str!("../../assets/gpt2/merges.txt");

pub const GPT2_VOCAB_SIZE: usize = 50_257;

/// GPT-2's reversible byte → printable character table.
pub fn bytes_to_unicode() -> [char; 256] {
    let printable: Vec<u32> = (u32::from(b'!')..=u32::from(b'~')).chain(0xA1..=0xAC).chain(0xAE..=0xFF).collect();
    let mut table = ['\0'; 256];
    for &b in &printable {
        table[b as usize] = char::from_u32(b).unwrap_or('\0');
    }
    let mut extra = 0;
    for b in 0..256u32 {
        if !printable.contains(&b) {
            table[b as usize] = char::from_u32(256 + extra).unwrap_or('\0');
            extra += 1;
        }
    }
    table
}

pub struct BpeVocab {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
    ranks: HashMap<(String, String), usize>,
    byte_encoder: [char; 256],
    byte_decoder: HashMap<char, u8>,
    pre_split: Regex,
    cache: Mutex<HashMap<String, Vec<u32>>>,
}

impl std::fmt::Debug for BpeVocab {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BpeVocab").field("tokens", &self.id_to_token.len()).field("merges", &self.ranks.len()).finish()
    }
}

impl BpeVocab {
    /// The GPT-2 vocabulary bundled with the crate.
    pub fn gpt2() -> Result<Self> {
        Self::parse(EMBEDDED_VOCAB, EMBEDDED_MERGES)
    }

    /// Loads `vocab.json` and `merges.txt` in their published formats.
    pub fn from_files(vocab: impl AsRef<Path>, merges: impl AsRef<Path>) -> Result<Self> {
        let (vp, mp) = (vocab.as_ref(), merges.as_ref());
        let v = fs::read_to_string(vp).map_err(|e| Error::io(vp, e))?;
        let m = fs::read_to_string(mp).map_err(|e| Error::io(mp, e))?;
        Self::parse(&v, &m)
    }

    pub fn parse(vocab_json: &str, merges_txt: &str) -> Result<Self> {
        let token_to_id: HashMap<String, u32> = serde_json::from_str(vocab_json)?;
        let mut id_to_token = vec![None; token_to_id.len()];
        for (tok, &id) in &token_to_id {
            let slot = id_to_token
                .get_mut(id as usize)
                .ok_or_else(|| Error::format("vocab", format!("id {id} outside [0, {})", token_to_id.len())))?;
            if slot.replace(tok.clone()).is_some() {
                return Err(Error::format("vocab", format!("id {id} assigned twice")));
            }
        }
        let id_to_token: Vec<String> = id_to_token.into_iter().map(|t| t.unwrap_or_default()).collect();
        let mut ranks = HashMap::new();
        for line in merges_txt.lines().filter(|l| !l.starts_with("#version") && !l.trim().is_empty()) {
            let (a, b) = line
                .split_once(' ')
                .ok_or_else(|| Error::format("merges", format!("bad merge rule `{line}`")))?;
            let rank = ranks.len();
            ranks.entry((a.to_string(), b.to_string())).or_insert(rank);
        }
        let byte_encoder = bytes_to_unicode();
        let byte_decoder = byte_encoder.iter().enumerate().map(|(b, &c)| (c, b as u8)).collect();
        let pre_split = Regex::new(PRE_SPLIT).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(BpeVocab { token_to_id, id_to_token, ranks, byte_encoder, byte_decoder, pre_split, cache: Mutex::new(HashMap::new()) })
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    pub fn merge_rank(&self, a: &str, b: &str) -> Option<usize> {
        self.ranks.get(&(a.to_string(), b.to_string())).copied()
    }

    pub fn merge_count(&self) -> usize {
        self.ranks.len()
    }

    pub fn encode(&self, text: &str) -> Result<Vec<u32>> {
        let mut ids = Vec::new();
        for piece in self.pre_split.find_iter(text) {
            let piece = piece.map_err(|e| Error::InvalidArgument(format!("pre-tokenizer failed: {e}")))?;
            self.encode_piece(piece.as_str(), &mut ids)?;
        }
        Ok(ids)
    }

    fn encode_piece(&self, piece: &str, out: &mut Vec<u32>) -> Result<()> {
        if let Some(hit) = self.cache.lock().ok().and_then(|c| c.get(piece).cloned()) {
            out.extend(hit);
            return Ok(());
        }
        let mut word: Vec<String> = piece.bytes().map(|b| self.byte_encoder[b as usize].to_string()).collect();
        while word.len() > 1 {
            let best = word
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].clone(), w[1].clone())).map(|&r| (r, w)))
                .min_by_key(|&(r, _)| r)
                .map(|(_, w)| (w[0].clone(), w[1].clone()));
            let Some((a, b)) = best else { break };
            let mut merged = Vec::with_capacity(word.len());
            let mut i = 0;
            while i < word.len() {
                if i + 1 < word.len() && word[i] == a && word[i + 1] == b {
                    merged.push(format!("{a}{b}"));
                    i += 2;
                } else {
                    merged.push(std::mem::take(&mut word[i]));
                    i += 1;
                }
            }
            word = merged;
        }
        let ids = word
            .iter()
            .map(|t| self.id(t).ok_or_else(|| Error::format("vocab", format!("no id for BPE token `{t}`"))))
            .collect::<Result<Vec<_>>>()?;
        if let Ok(mut cache) = self.cache.lock() {
            if cache.len() < 100_000 {
                cache.insert(piece.to_string(), ids.clone());
            }
        }
        out.extend(ids);
        Ok(())
    }

    /// Inverse of [`encode`](Self::encode); invalid UTF-8 sequences decode
    /// to U+FFFD.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut bytes = Vec::new();
        for &id in ids {
            let tok = self
                .token(id)
                .ok_or_else(|| Error::InvalidArgument(format!("token id {id} outside vocabulary of {}", self.len())))?;
            for c in tok.chars() {
                let b = self
                    .byte_decoder
                    .get(&c)
                    .ok_or_else(|| Error::format("vocab", format!("token `{tok}` has no byte mapping")))?;
                bytes.push(*b);
            }
        }
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }
}

pub fn bpe_tokenize(text: &str, vocab: &BpeVocab) -> Result<Vec<u32>> {
    vocab.encode(text)
}

pub fn bpe_detokenize(ids: &[u32], vocab: &BpeVocab) -> Result<String> {
    vocab.decode(ids)
}
