//! Corpus ingestion: pre-tokenized code sequences, signature normalization
//! and frequency-ordered vocabularies.
//!
//! A corpus file holds one code sequence per line with tokens separated by
//! ASCII spaces. Raw API tokens such as `List.add` are rewritten to their
//! qualified form (`java.util.List.add`) through a [`SignatureTable`];
//! language keywords and AST node labels listed as keywords pass through
//! and everything else is dropped as noise.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};

/// An ordered list of tokens extracted from one function body.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CodeSequence {
    tokens: Vec<String>,
}

impl CodeSequence {
    /// Builds a sequence, discarding empty tokens. Tokens containing
    /// whitespace are split.
    pub fn new<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let tokens = tokens
            .into_iter()
            .flat_map(|t| {
                t.as_ref()
                    .split_whitespace()
                    .map(str::to_owned)
                    .collect::<Vec<_>>()
            })
            .collect();
        CodeSequence { tokens }
    }

    pub fn parse(line: &str) -> Self {
        CodeSequence {
            tokens: line.split_whitespace().map(str::to_owned).collect(),
        }
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Space-joined form, as written to corpus files.
    pub fn to_line(&self) -> String {
        self.tokens.join(" ")
    }
}

/// Reads a corpus file, one sequence per line. Blank lines yield empty
/// sequences so line numbers stay aligned with the input.
pub fn read_corpus(path: &Path) -> Result<Vec<CodeSequence>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(file)
        .lines()
        .map(|line| {
            line.map(|l| CodeSequence::parse(&l))
                .map_err(|e| Error::io(path, e))
        })
        .collect()
}

/// Mapping from raw API tokens to qualified signatures, plus the set of
/// tokens (keywords, AST node labels) that are kept verbatim.
#[derive(Clone, Debug, Default)]
pub struct SignatureTable {
    entries: HashMap<String, String>,
    qualified: HashSet<String>,
    keywords: HashSet<String>,
}

/// Counters reported by [`normalize_sequence`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DropStats {
    pub input: usize,
    pub kept: usize,
    pub dropped: usize,
}

impl DropStats {
    pub fn merge(self, other: DropStats) -> DropStats {
        DropStats {
            input: self.input + other.input,
            kept: self.kept + other.kept,
            dropped: self.dropped + other.dropped,
        }
    }
}

fn is_well_formed_signature(sig: &str) -> bool {
    let segments: Vec<&str> = sig.split('.').collect();
    segments.len() >= 2 && segments.iter().all(|s| !s.is_empty()) && !sig.contains(char::is_whitespace)
}

impl SignatureTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a raw → qualified entry. Re-adding the same pair is a no-op;
    /// mapping one raw token to two different signatures is an error.
    pub fn insert(&mut self, raw: &str, qualified: &str) -> Result<()> {
        if raw.is_empty() || raw.contains(char::is_whitespace) {
            return Err(Error::InvalidInput(format!("invalid raw token `{raw}`")));
        }
        if !is_well_formed_signature(qualified) {
            return Err(Error::InvalidInput(format!(
                "`{qualified}` is not a dotted qualified signature"
            )));
        }
        match self.entries.get(raw) {
            Some(existing) if existing != qualified => Err(Error::AmbiguousSignature {
                raw: raw.to_owned(),
                first: existing.clone(),
                second: qualified.to_owned(),
            }),
            Some(_) => Ok(()),
            None => {
                self.entries.insert(raw.to_owned(), qualified.to_owned());
                self.qualified.insert(qualified.to_owned());
                Ok(())
            }
        }
    }

    pub fn add_keyword(&mut self, keyword: &str) {
        if !keyword.is_empty() {
            self.keywords.insert(keyword.to_owned());
        }
    }

    pub fn is_keyword(&self, token: &str) -> bool {
        self.keywords.contains(token)
    }

    /// Resolves a token: qualified signature, keyword passthrough, or `None`
    /// for noise. Already-qualified signatures resolve to themselves.
    pub fn resolve<'a>(&'a self, token: &'a str) -> Option<&'a str> {
        if self.keywords.contains(token) || self.qualified.contains(token) {
            return Some(token);
        }
        self.entries.get(token).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Parses the TSV table (`raw<TAB>qualified`). Blank lines and lines
    /// starting with `#` are skipped. Errors carry the 1-based line number.
    pub fn parse_tsv<R: BufRead>(reader: R, name: &str) -> Result<Self> {
        let mut table = SignatureTable::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(name, e))?;
            let line_no = i + 1;
            let trimmed = line.trim_end_matches(['\r', '\n']);
            if trimmed.trim().is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let mut cols = trimmed.split('\t');
            let (raw, qualified) = match (cols.next(), cols.next(), cols.next()) {
                (Some(r), Some(q), None) => (r.trim(), q.trim()),
                _ => {
                    return Err(Error::format(
                        name,
                        line_no,
                        "expected `raw_token<TAB>qualified_signature`",
                    ))
                }
            };
            table.insert(raw, qualified).map_err(|e| match e {
                Error::InvalidInput(m) => Error::format(name, line_no, m),
                Error::AmbiguousSignature { .. } => Error::format(name, line_no, e.to_string()),
                other => other,
            })?;
        }
        Ok(table)
    }

    pub fn read_keywords<R: BufRead>(&mut self, reader: R, name: &str) -> Result<()> {
        for line in reader.lines() {
            let line = line.map_err(|e| Error::io(name, e))?;
            let kw = line.trim();
            if !kw.is_empty() && !kw.starts_with('#') {
                self.add_keyword(kw);
            }
        }
        Ok(())
    }

    /// Loads a table file and an optional keyword list file.
    pub fn load(table: &Path, keywords: Option<&Path>) -> Result<Self> {
        let f = File::open(table).map_err(|e| Error::io(table, e))?;
        let mut t = Self::parse_tsv(BufReader::new(f), &table.display().to_string())?;
        if let Some(kw) = keywords {
            let f = File::open(kw).map_err(|e| Error::io(kw, e))?;
            t.read_keywords(BufReader::new(f), &kw.display().to_string())?;
        }
        Ok(t)
    }
}

/// Rewrites raw API tokens to qualified signatures and drops noise tokens,
/// preserving the relative order of the survivors.
pub fn normalize_sequence(seq: &CodeSequence, table: &SignatureTable) -> (CodeSequence, DropStats) {
    let tokens: Vec<String> = seq
        .tokens
        .iter()
        .filter_map(|t| table.resolve(t).map(str::to_owned))
        .collect();
    let stats = DropStats {
        input: seq.len(),
        kept: tokens.len(),
        dropped: seq.len() - tokens.len(),
    };
    (CodeSequence { tokens }, stats)
}

/// Truncates a method-level signature to its class-level prefix.
///
/// The class is the last segment starting with an uppercase letter before
/// the method segment. Tokens with fewer than three segments (keywords, AST
/// labels) are returned unchanged.
pub fn class_level_token(token: &str) -> &str {
    let segments: Vec<&str> = token.split('.').collect();
    if segments.len() < 3 {
        return token;
    }
    let before_method = &segments[..segments.len() - 1];
    let keep = before_method
        .iter()
        .rposition(|s| s.chars().next().is_some_and(char::is_uppercase))
        .map(|i| i + 1)
        .unwrap_or(before_method.len());
    let end: usize = segments[..keep].iter().map(|s| s.len()).sum::<usize>() + keep - 1;
    &token[..end]
}

pub fn to_class_level(seq: &CodeSequence) -> CodeSequence {
    CodeSequence {
        tokens: seq
            .tokens
            .iter()
            .map(|t| class_level_token(t).to_owned())
            .collect(),
    }
}

/// Token → (index, count), indices ordered by descending count with
/// lexicographic tie-breaking.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from tokens and counts in the given index order.
    /// The order is kept as is; use [`Vocabulary::from_counts`] to sort.
    pub fn from_ordered(tokens: Vec<String>, counts: Vec<u64>) -> Result<Self> {
        if tokens.len() != counts.len() {
            return Err(Error::InvalidInput(format!(
                "{} tokens but {} counts",
                tokens.len(),
                counts.len()
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.contains(char::is_whitespace) {
                return Err(Error::InvalidInput(format!("invalid token `{t}`")));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::InvalidInput(format!("duplicate token `{t}`")));
            }
        }
        Ok(Vocabulary {
            tokens,
            counts,
            index,
        })
    }

    /// Sorts `(token, count)` pairs into frequency order.
    pub fn from_counts(counts: HashMap<String, u64>, min_count: u64) -> Self {
        let mut entries: Vec<(String, u64)> =
            counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let (tokens, counts): (Vec<_>, Vec<_>) = entries.into_iter().unzip();
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary {
            tokens,
            counts,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, idx: usize) -> &str {
        &self.tokens[idx]
    }

    pub fn count(&self, idx: usize) -> u64 {
        self.counts[idx]
    }

    pub fn count_of(&self, token: &str) -> Option<u64> {
        self.index(token).map(|i| self.counts[i])
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total_count(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Indices sorted by descending count, ties by index. Equal to `0..len`
    /// for vocabularies built by [`build_vocabulary`].
    pub fn frequency_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| self.counts[b].cmp(&self.counts[a]).then(a.cmp(&b)));
        order
    }
}

fn count_tokens(corpus: &[CodeSequence]) -> HashMap<String, u64> {
    corpus
        .par_iter()
        .fold(HashMap::new, |mut acc: HashMap<String, u64>, seq| {
            for t in &seq.tokens {
                *acc.entry(t.clone()).or_default() += 1;
            }
            acc
        })
        .reduce(HashMap::new, |mut a, b| {
            for (t, c) in b {
                *a.entry(t).or_default() += c;
            }
            a
        })
}

/// Counts token occurrences and keeps tokens seen at least `min_count` times.
pub fn build_vocabulary(corpus: &[CodeSequence], min_count: u64) -> Result<Vocabulary> {
    if min_count == 0 {
        return Err(Error::Config("min_count must be at least 1".into()));
    }
    if corpus.iter().all(CodeSequence::is_empty) {
        return Err(Error::EmptyCorpus);
    }
    Ok(Vocabulary::from_counts(count_tokens(corpus), min_count))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn java_table() -> SignatureTable {
        let mut t = SignatureTable::new();
        t.insert("List.add", "java.util.List.add").unwrap();
        t.insert("List.addAll", "java.util.List.addAll").unwrap();
        t.insert("HashMap.put", "java.util.HashMap.put").unwrap();
        for kw in ["if", "else", "return"] {
            t.add_keyword(kw);
        }
        t
    }

    #[test]
    fn normalizes_listing_example() {
        let seq = CodeSequence::parse("List.add List.add if List.addAll else HashMap.put return");
        let (out, stats) = normalize_sequence(&seq, &java_table());
        assert_eq!(
            out.to_line(),
            "java.util.List.add java.util.List.add if java.util.List.addAll else java.util.HashMap.put return"
        );
        assert_eq!(stats.dropped, 0);
        assert_eq!(stats.kept, 7);
    }

    #[test]
    fn empty_sequence_stays_empty() {
        let (out, stats) = normalize_sequence(&CodeSequence::default(), &java_table());
        assert!(out.is_empty());
        assert_eq!(stats, DropStats::default());
    }

    #[test]
    fn unknown_tokens_are_dropped() {
        let mut t = SignatureTable::new();
        t.add_keyword("if");
        let (out, stats) = normalize_sequence(&CodeSequence::parse("foo Bar.baz if"), &t);
        assert_eq!(out.to_line(), "if");
        assert_eq!(stats.dropped, 2);
    }

    #[test]
    fn ambiguous_entry_is_rejected() {
        let mut t = SignatureTable::new();
        t.insert("List.add", "java.util.List.add").unwrap();
        t.insert("List.add", "java.util.List.add").unwrap();
        let err = t
            .insert("List.add", "com.google.common.collect.List.add")
            .unwrap_err();
        assert!(matches!(err, Error::AmbiguousSignature { .. }));
    }

    #[test]
    fn malformed_table_line_reports_line_number() {
        let data = "List.add\tjava.util.List.add\nbroken line without tab\n";
        let err = SignatureTable::parse_tsv(data.as_bytes(), "table.tsv").unwrap_err();
        match err {
            Error::Format { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let err = SignatureTable::parse_tsv("a\tnodots\n".as_bytes(), "t").unwrap_err();
        assert!(matches!(err, Error::Format { line: 1, .. }));
    }

    #[test]
    fn class_level_truncation() {
        assert_eq!(class_level_token("java.util.List.add"), "java.util.List");
        assert_eq!(class_level_token("if"), "if");
        assert_eq!(class_level_token("System.IO.File.Exists"), "System.IO.File");
        assert_eq!(class_level_token("a.b.c"), "a.b");
        let seq = to_class_level(&CodeSequence::parse("java.lang.Math.round return"));
        assert_eq!(seq.to_line(), "java.lang.Math return");
    }

    #[test]
    fn vocabulary_counts_and_order() {
        let corpus = vec![CodeSequence::parse("a b a")];
        let v = build_vocabulary(&corpus, 1).unwrap();
        assert_eq!(v.count_of("a"), Some(2));
        assert_eq!(v.count_of("b"), Some(1));
        assert_eq!(v.index("a"), Some(0));
        assert_eq!(v.index("b"), Some(1));

        let v = build_vocabulary(&corpus, 2).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v.count_of("a"), Some(2));
    }

    #[test]
    fn vocabulary_tie_break_is_lexicographic() {
        let corpus = vec![CodeSequence::parse("x y"), CodeSequence::parse("y x")];
        let v = build_vocabulary(&corpus, 1).unwrap();
        assert_eq!(v.index("x"), Some(0));
        assert_eq!(v.index("y"), Some(1));
        assert_eq!(v.counts(), &[2, 2]);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(matches!(build_vocabulary(&[], 1), Err(Error::EmptyCorpus)));
        assert!(matches!(
            build_vocabulary(&[CodeSequence::default()], 1),
            Err(Error::EmptyCorpus)
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn token() -> impl Strategy<Value = String> {
            prop_oneof![
                Just("List.add".to_string()),
                Just("List.addAll".to_string()),
                Just("HashMap.put".to_string()),
                Just("if".to_string()),
                Just("else".to_string()),
                Just("return".to_string()),
                "[a-z]{1,4}",
                "[A-Z][a-z]{1,3}\\.[a-z]{1,3}",
            ]
        }

        proptest! {
            #[test]
            fn normalize_is_idempotent_and_shrinking(tokens in proptest::collection::vec(token(), 0..30)) {
                let table = java_table();
                let seq = CodeSequence::new(&tokens);
                let (once, stats) = normalize_sequence(&seq, &table);
                let (twice, stats2) = normalize_sequence(&once, &table);
                prop_assert_eq!(&once, &twice);
                prop_assert_eq!(stats2.dropped, 0);
                prop_assert!(once.len() <= seq.len());
                prop_assert_eq!(stats.kept + stats.dropped, seq.len());
                // survivors are the mapped input, in order
                let mapped: Vec<String> = seq.tokens().iter()
                    .filter_map(|t| table.resolve(t).map(str::to_owned)).collect();
                prop_assert_eq!(once.tokens(), mapped.as_slice());
            }

            #[test]
            fn vocabulary_counts_sum_to_tokens(lines in proptest::collection::vec(
                proptest::collection::vec("[a-e]", 1..8), 1..20)) {
                let corpus: Vec<CodeSequence> = lines.iter().map(CodeSequence::new).collect();
                let total: usize = corpus.iter().map(CodeSequence::len).sum();
                let v = build_vocabulary(&corpus, 1).unwrap();
                prop_assert_eq!(v.total_count() as usize, total);
                prop_assert_eq!(v.frequency_order(), (0..v.len()).collect::<Vec<_>>());
            }
        }
    }
}
