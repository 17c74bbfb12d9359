//! Tokenization, vocabulary construction, dataset ingestion, and the
//! substitution-candidate sources (synonym lexicon, embedding-space
//! nearest neighbors).
//!
//! File formats:
//! - dataset: UTF-8 TSV, one `label<TAB>text` per line, 0-based integer labels;
//! - synonym lexicon: UTF-8 TSV, `headword<TAB>syn1,syn2,...`;
//! - vocabulary: plain text, one token per line, line number == id.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::Tensor2;

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

const PUNCT: &[char] = &['.', ',', '!', '?', ';', ':', '\'', '"', '(', ')', '-'];

/// Lowercase, split on whitespace, and detach punctuation as separate tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_whitespace() {
            if !cur.is_empty() {
                tokens.push(std::mem::take(&mut cur));
            }
        } else if PUNCT.contains(&ch) {
            if !cur.is_empty() {
                tokens.push(std::mem::take(&mut cur));
            }
            tokens.push(ch.to_string());
        } else {
            for lc in ch.to_lowercase() {
                cur.push(lc);
            }
        }
    }
    if !cur.is_empty() {
        tokens.push(cur);
    }
    tokens
}

/// Token/id bijection with reserved PAD=0 and UNK=1 entries.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    fn from_ordered_tokens(tokens: impl IntoIterator<Item = String>) -> Self {
        let mut id_to_token = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        id_to_token.extend(tokens);
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary {
            token_to_id,
            id_to_token,
        }
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(|s| s.as_str())
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_to_id.contains_key(token)
    }

    /// Total number of ids, reserved entries included.
    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false // PAD and UNK are always present
    }

    fn serialized(&self) -> String {
        let mut out = String::new();
        for t in &self.id_to_token {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    /// SHA-256 of the serialized token list, hex-encoded. Checkpoints store
    /// this so a model can refuse a mismatched vocabulary at load time.
    pub fn content_hash(&self) -> String {
        let digest = Sha256::digest(self.serialized().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.serialized())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(&path)?;
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() < 2 || lines[0] != PAD_TOKEN || lines[1] != UNK_TOKEN {
            return Err(Error::Parse {
                line: 1,
                msg: format!(
                    "vocabulary file must start with '{PAD_TOKEN}' and '{UNK_TOKEN}' lines"
                ),
            });
        }
        Ok(Self::from_ordered_tokens(
            lines[2..].iter().map(|s| s.to_string()),
        ))
    }
}

/// A labeled text with its derived token and id views.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub text: String,
    pub label: usize,
    pub tokens: Vec<String>,
    /// Encoded ids; empty until `encode_examples` runs.
    pub ids: Vec<usize>,
}

impl Example {
    pub fn new(text: impl Into<String>, label: usize) -> Self {
        let text = text.into();
        let tokens = tokenize(&text);
        Example {
            text,
            label,
            tokens,
            ids: Vec::new(),
        }
    }
}

/// Per-split dataset statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetSummary {
    pub classes: usize,
    pub examples: usize,
    pub avg_tokens: f64,
}

/// Build a vocabulary from corpus tokens with frequency >= `min_freq`.
///
/// Ids are assigned in descending frequency order, ties broken
/// lexicographically, starting after the reserved entries.
pub fn build_vocab(corpus: &[Example], min_freq: usize) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::invalid("build_vocab on empty corpus"));
    }
    if min_freq < 1 {
        return Err(Error::invalid("min_freq must be >= 1"));
    }
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for ex in corpus {
        for t in &ex.tokens {
            *freq.entry(t.as_str()).or_insert(0) += 1;
        }
    }
    let mut kept: Vec<(&str, usize)> = freq
        .into_iter()
        .filter(|&(_, n)| n >= min_freq)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Ok(Vocabulary::from_ordered_tokens(
        kept.into_iter().map(|(t, _)| t.to_string()),
    ))
}

/// Encode tokens to ids: unknown -> UNK, right-pad with PAD, truncate at `max_len`.
pub fn encode(tokens: &[String], vocab: &Vocabulary, max_len: usize) -> Vec<usize> {
    assert!(max_len >= 1, "max_len must be >= 1");
    let mut ids: Vec<usize> = tokens
        .iter()
        .take(max_len)
        .map(|t| vocab.id(t).unwrap_or(UNK_ID))
        .collect();
    ids.resize(max_len, PAD_ID);
    ids
}

/// Fill the `ids` field of every example.
pub fn encode_examples(examples: &mut [Example], vocab: &Vocabulary, max_len: usize) {
    for ex in examples {
        ex.ids = encode(&ex.tokens, vocab, max_len);
    }
}

/// Load a `label<TAB>text` TSV dataset.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<(Vec<Example>, DatasetSummary)> {
    let text = fs::read_to_string(&path)?;
    parse_dataset(&text)
}

pub fn parse_dataset(text: &str) -> Result<(Vec<Example>, DatasetSummary)> {
    let mut examples = Vec::new();
    let mut max_label = None::<usize>;
    let mut token_total = 0usize;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let (label_str, body) = line.split_once('\t').ok_or_else(|| Error::Parse {
            line: lineno,
            msg: "expected 'label<TAB>text'".into(),
        })?;
        let label: usize = label_str.trim().parse().map_err(|_| Error::Parse {
            line: lineno,
            msg: format!("unknown label value '{label_str}'"),
        })?;
        let ex = Example::new(body, label);
        max_label = Some(max_label.map_or(label, |m: usize| m.max(label)));
        token_total += ex.tokens.len();
        examples.push(ex);
    }
    let summary = DatasetSummary {
        classes: max_label.map_or(0, |m| m + 1),
        examples: examples.len(),
        avg_tokens: if examples.is_empty() {
            0.0
        } else {
            token_total as f64 / examples.len() as f64
        },
    };
    Ok((examples, summary))
}

/// Headword -> ordered substitution candidates.
#[derive(Debug, Clone, Default)]
pub struct SynonymLexicon {
    entries: HashMap<String, Vec<String>>,
}

impl SynonymLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    /// Build from (headword, candidates) pairs; applies the same normalization
    /// rules as `load_synonyms` (lowercase, drop self, dedup keeping order).
    pub fn from_entries<I, S>(entries: I) -> Self
    where
        I: IntoIterator<Item = (S, Vec<S>)>,
        S: Into<String>,
    {
        let mut lex = SynonymLexicon::new();
        for (head, cands) in entries {
            let head = head.into().to_lowercase();
            for c in cands {
                lex.push(&head, &c.into().to_lowercase());
            }
        }
        lex
    }

    fn push(&mut self, head: &str, candidate: &str) {
        if candidate == head || candidate.is_empty() {
            return;
        }
        let list = self.entries.entry(head.to_string()).or_default();
        if !list.iter().any(|c| c == candidate) {
            list.push(candidate.to_string());
        }
    }

    /// Candidates for a headword, in file order; empty slice when absent.
    pub fn candidates(&self, head: &str) -> &[String] {
        self.entries.get(head).map_or(&[], |v| v.as_slice())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Load a `headword<TAB>syn1,syn2,...` lexicon.
///
/// Candidates are lowercased; self-synonyms are dropped; duplicate headword
/// lines concatenate with duplicates removed, order kept. A candidate that is
/// not a single token (it would re-tokenize into several) is a parse error.
pub fn load_synonyms(path: impl AsRef<Path>) -> Result<SynonymLexicon> {
    let text = fs::read_to_string(&path)?;
    parse_synonyms(&text)
}

pub fn parse_synonyms(text: &str) -> Result<SynonymLexicon> {
    let mut lex = SynonymLexicon::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (head, rest) = line.split_once('\t').ok_or_else(|| Error::Parse {
            line: lineno,
            msg: "expected 'headword<TAB>syn1,syn2,...'".into(),
        })?;
        let head = head.trim().to_lowercase();
        if head.is_empty() {
            return Err(Error::Parse {
                line: lineno,
                msg: "empty headword".into(),
            });
        }
        for raw in rest.split(',') {
            let cand = raw.trim().to_lowercase();
            if cand.is_empty() {
                return Err(Error::Parse {
                    line: lineno,
                    msg: "empty synonym candidate".into(),
                });
            }
            if tokenize(&cand) != vec![cand.clone()] {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("candidate '{cand}' is not a single token"),
                });
            }
            lex.push(&head, &cand);
        }
    }
    Ok(lex)
}

/// Up to `k` non-reserved vocabulary tokens ranked by cosine similarity to
/// `word`'s embedding row, excluding the word itself, filtered by
/// cosine >= `min_cos`.
pub fn embedding_neighbors(
    word: &str,
    embedding: &Tensor2,
    vocab: &Vocabulary,
    k: usize,
    min_cos: f64,
) -> Result<Vec<String>> {
    if k < 1 {
        return Err(Error::invalid("embedding_neighbors k must be >= 1"));
    }
    let word_id = vocab
        .id(word)
        .ok_or_else(|| Error::NotFound(format!("word '{word}' not in vocabulary")))?;
    let query = embedding.row(word_id);
    let qnorm = norm(query);
    if qnorm == 0.0 {
        return Ok(Vec::new());
    }
    let mut scored: Vec<(usize, f64)> = Vec::new();
    for id in 2..vocab.len().min(embedding.rows()) {
        if id == word_id {
            continue;
        }
        let row = embedding.row(id);
        let rnorm = norm(row);
        if rnorm == 0.0 {
            continue;
        }
        let cos = dot(query, row) / (qnorm * rnorm);
        if cos >= min_cos {
            scored.push((id, cos));
        }
    }
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    Ok(scored
        .into_iter()
        .take(k)
        .filter_map(|(id, _)| vocab.token(id).map(str::to_string))
        .collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
