//! Byte-pair encoding with reserved, never-split special tokens.
//!
//! Words are split on whitespace and the last character of each word carries
//! an end-of-word marker, so `"ab"` encodes as `a`, `b</w>`. Merges are
//! learned greedily from pair frequencies counted within words; the earliest
//! learned merge has the highest priority at encode time.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const DELIMITER: &str = "<SEP>";
pub const END_OF_WORD: &str = "</w>";

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const DELIMITER_ID: u32 = 2;

const RESERVED: [&str; 3] = [PAD, UNK, DELIMITER];
const FILE_MAGIC: &str = "#nbest-bpe v1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabularyData", into = "VocabularyData")]
pub struct BpeVocabulary {
    alphabet: Vec<char>,
    merges: Vec<(String, String)>,
    units: Vec<String>,
    ids: HashMap<String, u32>,
    ranks: HashMap<(String, String), usize>,
}

/// Serialized form: everything else is derived from these three fields.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct VocabularyData {
    reserved: Vec<String>,
    alphabet: String,
    merges: Vec<(String, String)>,
}

impl TryFrom<VocabularyData> for BpeVocabulary {
    type Error = Error;

    fn try_from(d: VocabularyData) -> Result<Self> {
        if d.reserved != RESERVED {
            return Err(Error::invalid(format!("unexpected reserved tokens {:?}", d.reserved)));
        }
        BpeVocabulary::from_parts(d.alphabet.chars().collect(), d.merges)
    }
}

impl From<BpeVocabulary> for VocabularyData {
    fn from(v: BpeVocabulary) -> Self {
        VocabularyData {
            reserved: RESERVED.iter().map(|s| s.to_string()).collect(),
            alphabet: v.alphabet.iter().collect(),
            merges: v.merges,
        }
    }
}

/// Ids of one encoded text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedSequence {
    pub ids: Vec<u32>,
    pub text: String,
}

impl EncodedSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

fn word_units(word: &str) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    let last = chars.len().saturating_sub(1);
    chars
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if i == last {
                format!("{c}{END_OF_WORD}")
            } else {
                c.to_string()
            }
        })
        .collect()
}

fn merge_pair(units: &mut Vec<String>, left: &str, right: &str) {
    let mut out = Vec::with_capacity(units.len());
    let mut i = 0;
    while i < units.len() {
        if i + 1 < units.len() && units[i] == left && units[i + 1] == right {
            out.push(format!("{left}{right}"));
            i += 2;
        } else {
            out.push(std::mem::take(&mut units[i]));
            i += 1;
        }
    }
    *units = out;
}

/// Text segments between delimiter occurrences, in order.
fn delimiter_segments(text: &str) -> std::str::Split<'_, &'static str> {
    text.split(DELIMITER)
}

impl BpeVocabulary {
    /// Learns `num_merges` merge rules from `corpus`.
    ///
    /// Pairs are counted within words, weighted by word frequency. Ties on
    /// count go to the lexicographically smallest pair. Training stops early
    /// once no adjacent pair is left.
    pub fn train<S: AsRef<str>>(corpus: &[S], num_merges: usize) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::Empty("train_merges corpus"));
        }
        let mut word_counts: BTreeMap<&str, usize> = BTreeMap::new();
        for text in corpus {
            for segment in delimiter_segments(text.as_ref()) {
                for word in segment.split_whitespace() {
                    *word_counts.entry(word).or_default() += 1;
                }
            }
        }
        let alphabet: Vec<char> = word_counts
            .keys()
            .flat_map(|w| w.chars())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut words: Vec<(Vec<String>, usize)> = word_counts.iter().map(|(w, &c)| (word_units(w), c)).collect();

        let mut merges = Vec::new();
        for _ in 0..num_merges {
            let mut counts: HashMap<(&str, &str), usize> = HashMap::new();
            for (units, count) in &words {
                for pair in units.windows(2) {
                    *counts.entry((&pair[0], &pair[1])).or_default() += count;
                }
            }
            let best = counts
                .into_iter()
                .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then_with(|| pb.cmp(pa)));
            let Some(((l, r), _)) = best else { break };
            let (l, r) = (l.to_string(), r.to_string());
            for (units, _) in &mut words {
                merge_pair(units, &l, &r);
            }
            merges.push((l, r));
        }
        BpeVocabulary::from_parts(alphabet, merges)
    }

    fn from_parts(alphabet: Vec<char>, merges: Vec<(String, String)>) -> Result<Self> {
        let mut units: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut seen = BTreeSet::new();
        for &c in &alphabet {
            if c.is_whitespace() || !seen.insert(c) {
                return Err(Error::invalid(format!("invalid alphabet character {c:?}")));
            }
            units.push(c.to_string());
            units.push(format!("{c}{END_OF_WORD}"));
        }
        let mut ids: HashMap<String, u32> = units.iter().enumerate().map(|(i, u)| (u.clone(), i as u32)).collect();
        let mut ranks = HashMap::new();
        for (rank, (l, r)) in merges.iter().enumerate() {
            for part in [l, r] {
                if !ids.contains_key(part.as_str()) || RESERVED.contains(&part.as_str()) {
                    return Err(Error::invalid(format!("merge {rank} uses unknown unit {part:?}")));
                }
            }
            let merged = format!("{l}{r}");
            if !ids.contains_key(&merged) {
                ids.insert(merged.clone(), units.len() as u32);
                units.push(merged);
            }
            ranks.entry((l.clone(), r.clone())).or_insert(rank);
        }
        Ok(BpeVocabulary {
            alphabet,
            merges,
            units,
            ids,
            ranks,
        })
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn alphabet(&self) -> &[char] {
        &self.alphabet
    }

    pub fn unit(&self, id: u32) -> Option<&str> {
        self.units.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, unit: &str) -> Option<u32> {
        self.ids.get(unit).copied()
    }

    fn encode_word(&self, word: &str, out: &mut Vec<u32>) {
        let mut units = word_units(word);
        while units.len() > 1 {
            let best = units
                .windows(2)
                .filter_map(|p| self.ranks.get(&(p[0].clone(), p[1].clone())))
                .min();
            let Some(&rank) = best else { break };
            let (l, r) = &self.merges[rank];
            merge_pair(&mut units, l, r);
        }
        out.extend(units.iter().map(|u| self.id(u).unwrap_or(UNK_ID)));
    }

    /// Encodes `text`; every occurrence of [`DELIMITER`] becomes one id.
    pub fn encode(&self, text: &str) -> EncodedSequence {
        let mut ids = Vec::new();
        for (i, segment) in delimiter_segments(text).enumerate() {
            if i > 0 {
                ids.push(DELIMITER_ID);
            }
            for word in segment.split_whitespace() {
                self.encode_word(word, &mut ids);
            }
        }
        EncodedSequence {
            ids,
            text: text.to_string(),
        }
    }

    /// Inverse of [`encode`](Self::encode) up to whitespace: words come back
    /// separated by single spaces.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut words: Vec<String> = Vec::new();
        let mut current = String::new();
        for &id in ids {
            let unit = self.unit(id).ok_or(Error::IndexOutOfRange {
                what: "bpe id",
                index: id as usize,
                len: self.len(),
            })?;
            match id {
                PAD_ID => {}
                UNK_ID => current.push_str(UNK),
                DELIMITER_ID => {
                    if !current.is_empty() {
                        words.push(std::mem::take(&mut current));
                    }
                    words.push(DELIMITER.to_string());
                }
                _ => match unit.strip_suffix(END_OF_WORD) {
                    Some(stem) => {
                        current.push_str(stem);
                        words.push(std::mem::take(&mut current));
                    }
                    None => current.push_str(unit),
                },
            }
        }
        if !current.is_empty() {
            words.push(current);
        }
        Ok(words.join(" "))
    }

    /// Line-oriented form: magic line, reserved tokens, alphabet, then one
    /// merge rule per line in priority order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(FILE_MAGIC);
        s.push('\n');
        s.push_str("reserved ");
        s.push_str(&RESERVED.join(" "));
        s.push('\n');
        s.push_str("alphabet");
        for c in &self.alphabet {
            s.push(' ');
            s.push(*c);
        }
        s.push('\n');
        for (l, r) in &self.merges {
            s.push_str(l);
            s.push(' ');
            s.push_str(r);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str, origin: &str) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: origin.to_string(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, FILE_MAGIC)) => {}
            _ => return Err(err(1, format!("expected header {FILE_MAGIC:?}"))),
        }
        let (n, reserved) = lines.next().ok_or_else(|| err(2, "missing reserved line".into()))?;
        let reserved: Vec<&str> = reserved.split_whitespace().collect();
        if reserved.first() != Some(&"reserved") || reserved[1..] != RESERVED {
            return Err(err(n, format!("expected `reserved {}`", RESERVED.join(" "))));
        }
        let (n, alphabet) = lines.next().ok_or_else(|| err(3, "missing alphabet line".into()))?;
        let mut fields = alphabet.split_whitespace();
        if fields.next() != Some("alphabet") {
            return Err(err(n, "expected alphabet line".into()));
        }
        let mut chars = Vec::new();
        for f in fields {
            let mut it = f.chars();
            match (it.next(), it.next()) {
                (Some(c), None) => chars.push(c),
                _ => return Err(err(n, format!("alphabet entry {f:?} is not one character"))),
            }
        }
        let mut merges = Vec::new();
        for (n, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(' ').collect();
            if parts.len() != 2 || parts.iter().any(|p| p.is_empty()) {
                return Err(err(n, format!("malformed merge rule {line:?}")));
            }
            merges.push((parts[0].to_string(), parts[1].to_string()));
        }
        BpeVocabulary::from_parts(chars, merges).map_err(|e| err(0, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        BpeVocabulary::from_text(&text, &path.display().to_string())
    }
}
