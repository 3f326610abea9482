//! Vocabularies, boundary-delimited sequences, lexical constraints and
//! training pairs.

use std::collections::HashMap;
use std::fmt;

use rand::seq::{index, SliceRandom};
use rand::Rng;

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const BOS: TokenId = 0;
pub const EOS: TokenId = 1;
pub const UNK: TokenId = 2;
pub const PLH: TokenId = 3;
pub const NUM_RESERVED: usize = 4;

pub const RESERVED_TOKENS: [&str; NUM_RESERVED] = ["<s>", "</s>", "<unk>", "<plh>"];

/// Default maximum sequence length, boundaries included.
pub const DEFAULT_MAX_LEN: usize = 256;

/// An ordered token inventory whose first four entries are the reserved
/// boundary, unknown and placeholder symbols.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// Builds a vocabulary from explicit content tokens (reserved symbols are
    /// prepended). Duplicates, empty strings and whitespace are rejected.
    pub fn from_tokens<I, S>(content: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut tokens: Vec<String> = RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
        let mut index: HashMap<String, TokenId> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        for tok in content {
            let tok = tok.into();
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(Error::Config(format!("invalid vocabulary token {tok:?}")));
            }
            if index.contains_key(&tok) {
                return Err(Error::Config(format!("duplicate vocabulary token {tok:?}")));
            }
            index.insert(tok.clone(), tokens.len() as TokenId);
            tokens.push(tok);
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Content tokens, i.e. everything after the reserved block.
    pub fn content_tokens(&self) -> &[String] {
        &self.tokens[NUM_RESERVED..]
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> &str {
        self.tokens
            .get(id as usize)
            .map(String::as_str)
            .unwrap_or(RESERVED_TOKENS[UNK as usize])
    }

    /// Maps a whitespace-tokenized line to a boundary-wrapped sequence.
    /// Unknown tokens, and literal reserved symbols, become `UNK`.
    pub fn encode(&self, line: &str) -> Sequence {
        let mut ids = Vec::with_capacity(line.len() / 2 + 2);
        ids.push(BOS);
        ids.extend(line.split_whitespace().map(|t| self.content_id(t)));
        ids.push(EOS);
        Sequence { ids }
    }

    /// Token id for a content token; reserved or unknown strings map to `UNK`.
    pub fn content_id(&self, token: &str) -> TokenId {
        match self.id(token) {
            Some(id) if id as usize >= NUM_RESERVED => id,
            _ => UNK,
        }
    }

    /// Content tokens of `seq` as strings (boundaries stripped).
    pub fn decode(&self, seq: &Sequence) -> Vec<String> {
        seq.content().iter().map(|&id| self.token(id).to_string()).collect()
    }

    pub fn decode_line(&self, seq: &Sequence) -> String {
        self.decode(seq).join(" ")
    }
}

/// Builds a vocabulary from whitespace-tokenized lines: reserved ids first,
/// then tokens by descending frequency (ties lexicographic), truncated to
/// `max_size` entries in total.
pub fn build_vocabulary<S: AsRef<str>>(corpus_lines: &[S], max_size: usize) -> Result<Vocabulary> {
    if max_size < NUM_RESERVED + 1 {
        return Err(Error::Config(format!(
            "vocabulary max_size must be at least {}, got {max_size}",
            NUM_RESERVED + 1
        )));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for line in corpus_lines {
        for tok in line.as_ref().split_whitespace() {
            if RESERVED_TOKENS.contains(&tok) {
                continue;
            }
            *counts.entry(tok).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(max_size - NUM_RESERVED);
    Vocabulary::from_tokens(ranked.into_iter().map(|(t, _)| t))
}

/// A boundary-delimited list of token ids: `[BOS, .., EOS]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Sequence {
    ids: Vec<TokenId>,
}

impl Sequence {
    pub fn new(ids: Vec<TokenId>) -> Result<Self> {
        let n = ids.len();
        if n < 2 {
            return Err(Error::InvalidSequence(format!("length {n} < 2")));
        }
        if ids[0] != BOS || ids[n - 1] != EOS {
            return Err(Error::InvalidSequence("missing BOS/EOS boundary".into()));
        }
        if ids[1..n - 1].iter().any(|&t| t == BOS || t == EOS) {
            return Err(Error::InvalidSequence("boundary token inside sequence".into()));
        }
        Ok(Sequence { ids })
    }

    /// Wraps content ids with boundaries.
    pub fn from_content(content: &[TokenId]) -> Result<Self> {
        let mut ids = Vec::with_capacity(content.len() + 2);
        ids.push(BOS);
        ids.extend_from_slice(content);
        ids.push(EOS);
        Sequence::new(ids)
    }

    pub fn empty() -> Self {
        Sequence { ids: vec![BOS, EOS] }
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    /// Always false: every sequence holds at least its two boundaries.
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn content(&self) -> &[TokenId] {
        &self.ids[1..self.ids.len() - 1]
    }

    pub fn count_placeholders(&self) -> usize {
        self.ids.iter().filter(|&&t| t == PLH).count()
    }

    pub fn check_max_len(&self, max_len: usize) -> Result<()> {
        if self.len() > max_len {
            return Err(Error::InvalidSequence(format!(
                "length {} exceeds maximum {max_len}",
                self.len()
            )));
        }
        Ok(())
    }
}

impl fmt::Display for Sequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.ids.iter().map(|t| t.to_string()).collect();
        write!(f, "[{}]", parts.join(" "))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConstraintMode {
    #[default]
    Soft,
    Hard,
}

/// Ordered lexical constraint phrases. Flattening them in order between
/// boundaries gives the decoder's initial hypothesis.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ConstraintSet {
    phrases: Vec<Vec<TokenId>>,
    pub mode: ConstraintMode,
}

impl ConstraintSet {
    pub fn new(phrases: Vec<Vec<TokenId>>, mode: ConstraintMode) -> Result<Self> {
        for phrase in &phrases {
            if phrase.is_empty() {
                return Err(Error::Config("empty constraint phrase".into()));
            }
            if phrase.iter().any(|&t| t == BOS || t == EOS || t == PLH) {
                return Err(Error::Config("constraint phrase contains a reserved token".into()));
            }
        }
        Ok(ConstraintSet { phrases, mode })
    }

    /// Parses one constraints-file line: phrases separated by tabs, tokens
    /// within a phrase by spaces. An empty line yields no constraints.
    pub fn parse_line(vocab: &Vocabulary, line: &str, mode: ConstraintMode) -> Self {
        let phrases = line
            .split('\t')
            .map(|p| p.split_whitespace().map(|t| vocab.content_id(t)).collect::<Vec<_>>())
            .filter(|p| !p.is_empty())
            .collect();
        ConstraintSet { phrases, mode }
    }

    pub fn phrases(&self) -> &[Vec<TokenId>] {
        &self.phrases
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }

    pub fn num_tokens(&self) -> usize {
        self.phrases.iter().map(Vec::len).sum()
    }

    pub fn flat_tokens(&self) -> Vec<TokenId> {
        self.phrases.iter().flatten().copied().collect()
    }

    pub fn initial_sequence(&self) -> Sequence {
        let mut ids = vec![BOS];
        ids.extend(self.phrases.iter().flatten());
        ids.push(EOS);
        Sequence { ids }
    }

    pub fn to_line(&self, vocab: &Vocabulary) -> String {
        self.phrases
            .iter()
            .map(|p| p.iter().map(|&t| vocab.token(t)).collect::<Vec<_>>().join(" "))
            .collect::<Vec<_>>()
            .join("\t")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingPair {
    pub source: Sequence,
    pub target: Sequence,
}

/// Samples between `k_min` and `k_max` single-token constraints from distinct
/// content positions of the reference (skipping `UNK`), in shuffled order.
pub fn sample_constraints<R: Rng + ?Sized>(
    pair: &TrainingPair,
    k_min: usize,
    k_max: usize,
    rng: &mut R,
) -> Result<ConstraintSet> {
    if k_min == 0 || k_min > k_max {
        return Err(Error::Config(format!("invalid constraint count range {k_min}..={k_max}")));
    }
    let eligible: Vec<TokenId> = pair
        .target
        .content()
        .iter()
        .copied()
        .filter(|&t| t != UNK)
        .collect();
    if eligible.is_empty() {
        return Ok(ConstraintSet::default());
    }
    let k = rng.gen_range(k_min..=k_max).min(eligible.len());
    let mut phrases: Vec<Vec<TokenId>> = index::sample(rng, eligible.len(), k)
        .into_iter()
        .map(|i| vec![eligible[i]])
        .collect();
    phrases.shuffle(rng);
    ConstraintSet::new(phrases, ConstraintMode::Soft)
}
