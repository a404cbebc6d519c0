//! Per-conversation feature extraction.
//!
//! Three feature families feed the outcome classifier: normalized social
//! orientation tag counts (9-dim), normalized sentiment tag counts (4-dim),
//! and TF-IDF over conversation text. Families concatenate into composite
//! schemas. [`render_prepend_text`] is the fourth consumer-facing output: the
//! tagged-text rendering sent to external neural predictors over the wire.
//!
//! Every extractor is a pure function of its inputs, so feature matrices are
//! reproducible byte for byte.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::corpus::{Conversation, Corpus, Outcome};
use crate::tagging::{SentimentAssignment, SentimentTag, SocialOrientationTag, TagAssignment};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("cannot extract features from a conversation with no utterances")]
    EmptyConversation,
    #[error("cannot fit a vocabulary on an empty corpus")]
    EmptyCorpus,
    #[error("no tag assignment for utterance `{0}`")]
    MissingTag(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("field `{0}` contains a comma or newline and cannot be a CSV field")]
    UnsafeCsvField(String),
    #[error("corrupt vocabulary file, line {line}: {message}")]
    CorruptVocab { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Names and order of the columns of one feature family (or a concatenation
/// of families). Names are unique within a schema.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSchema {
    pub schema_id: String,
    pub names: Vec<String>,
}

impl FeatureSchema {
    pub fn new(schema_id: &str, names: Vec<String>) -> FeatureSchema {
        let unique: std::collections::BTreeSet<&String> = names.iter().collect();
        assert_eq!(unique.len(), names.len(), "feature names must be unique");
        FeatureSchema { schema_id: schema_id.to_string(), names }
    }

    pub fn dimension(&self) -> usize {
        self.names.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Values {
    Dense(Vec<f64>),
    /// `(index, value)` entries with strictly increasing indices; absent
    /// indices are zero.
    Sparse { dim: usize, entries: Vec<(usize, f64)> },
}

/// One conversation's feature values under a schema.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub conversation_id: String,
    pub schema_id: String,
    values: Values,
}

impl FeatureVector {
    pub fn dense(conversation_id: &str, schema_id: &str, values: Vec<f64>) -> FeatureVector {
        FeatureVector {
            conversation_id: conversation_id.to_string(),
            schema_id: schema_id.to_string(),
            values: Values::Dense(values),
        }
    }

    pub fn sparse(
        conversation_id: &str,
        schema_id: &str,
        dim: usize,
        entries: Vec<(usize, f64)>,
    ) -> FeatureVector {
        debug_assert!(entries.windows(2).all(|w| w[0].0 < w[1].0), "entries sorted by index");
        debug_assert!(entries.iter().all(|(i, _)| *i < dim));
        FeatureVector {
            conversation_id: conversation_id.to_string(),
            schema_id: schema_id.to_string(),
            values: Values::Sparse { dim, entries },
        }
    }

    pub fn dim(&self) -> usize {
        match &self.values {
            Values::Dense(v) => v.len(),
            Values::Sparse { dim, .. } => *dim,
        }
    }

    pub fn get(&self, index: usize) -> f64 {
        match &self.values {
            Values::Dense(v) => v[index],
            Values::Sparse { entries, .. } => entries
                .binary_search_by_key(&index, |(i, _)| *i)
                .map(|pos| entries[pos].1)
                .unwrap_or(0.0),
        }
    }

    /// `(index, value)` pairs of the nonzero entries, ascending by index.
    pub fn nonzero(&self) -> Vec<(usize, f64)> {
        match &self.values {
            Values::Dense(v) => v
                .iter()
                .enumerate()
                .filter(|(_, x)| **x != 0.0)
                .map(|(i, x)| (i, *x))
                .collect(),
            Values::Sparse { entries, .. } => {
                entries.iter().filter(|(_, x)| *x != 0.0).copied().collect()
            }
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        match &self.values {
            Values::Dense(v) => v.clone(),
            Values::Sparse { dim, entries } => {
                let mut out = vec![0.0; *dim];
                for (i, x) in entries {
                    out[*i] = *x;
                }
                out
            }
        }
    }
}

/// Schema of [`social_count_features`]: the 9 tags in canonical order.
pub fn social_count_schema() -> FeatureSchema {
    FeatureSchema::new(
        "social_counts",
        SocialOrientationTag::ALL.iter().map(|t| t.wire_name().to_string()).collect(),
    )
}

/// Normalized tag counts for one conversation: each tag's share of the
/// conversation's utterances, in canonical tag order. Entries sum to 1.
pub fn social_count_features(
    conversation_id: &str,
    tags: &[TagAssignment],
) -> Result<FeatureVector, FeatureError> {
    if tags.is_empty() {
        return Err(FeatureError::EmptyConversation);
    }
    let mut values = vec![0.0; SocialOrientationTag::ALL.len()];
    for assignment in tags {
        values[assignment.tag.index()] += 1.0;
    }
    let total = tags.len() as f64;
    for v in &mut values {
        *v /= total;
    }
    Ok(FeatureVector::dense(conversation_id, "social_counts", values))
}

/// Schema of [`sentiment_count_features`]: the 4 sentiment classes.
pub fn sentiment_count_schema() -> FeatureSchema {
    FeatureSchema::new(
        "sentiment_counts",
        SentimentTag::ALL.iter().map(|t| t.wire_name().to_string()).collect(),
    )
}

/// Normalized sentiment counts for one conversation, in
/// (Negative, Neutral, Positive, Not Available) order. Entries sum to 1.
pub fn sentiment_count_features(
    conversation_id: &str,
    tags: &[SentimentAssignment],
) -> Result<FeatureVector, FeatureError> {
    if tags.is_empty() {
        return Err(FeatureError::EmptyConversation);
    }
    let mut values = vec![0.0; SentimentTag::ALL.len()];
    for assignment in tags {
        values[assignment.tag.index()] += 1.0;
    }
    let total = tags.len() as f64;
    for v in &mut values {
        *v /= total;
    }
    Ok(FeatureVector::dense(conversation_id, "sentiment_counts", values))
}

fn is_cjk(c: char) -> bool {
    matches!(c,
        '\u{4E00}'..='\u{9FFF}'      // CJK Unified Ideographs
        | '\u{3400}'..='\u{4DBF}'    // Extension A
        | '\u{F900}'..='\u{FAFF}'    // Compatibility Ideographs
    )
}

/// Lowercased tokens: maximal alphanumeric runs, except that CJK ideographs
/// are tokens on their own (Chinese text has no delimiting whitespace).
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in text.to_lowercase().chars() {
        if is_cjk(c) {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            tokens.push(c.to_string());
        } else if c.is_alphanumeric() {
            current.push(c);
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

fn conversation_tokens(conv: &Conversation) -> Vec<String> {
    conv.utterances.iter().flat_map(|u| tokenize(&u.text)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct TermStats {
    index: usize,
    df: usize,
}

/// TF-IDF vocabulary: term → (column index, document frequency), with one
/// conversation counting as one document. Indices follow sorted term order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TfidfVocab {
    terms: BTreeMap<String, TermStats>,
    n_docs: usize,
}

impl TfidfVocab {
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    /// `(term, index, df)` rows in index (= sorted term) order.
    pub fn entries(&self) -> Vec<(&str, usize, usize)> {
        self.terms.iter().map(|(t, s)| (t.as_str(), s.index, s.df)).collect()
    }

    pub fn document_frequency(&self, term: &str) -> Option<usize> {
        self.terms.get(term).map(|s| s.df)
    }

    /// Schema over this vocabulary's terms in index order.
    pub fn schema(&self) -> FeatureSchema {
        FeatureSchema::new("tfidf", self.terms.keys().cloned().collect())
    }

    pub fn save(&self, path: &Path) -> Result<(), FeatureError> {
        let mut out = format!("n_docs,{}\n", self.n_docs);
        for (term, stats) in &self.terms {
            out.push_str(&format!("{term},{},{}\n", stats.index, stats.df));
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<TfidfVocab, FeatureError> {
        let corrupt = |line: usize, message: &str| FeatureError::CorruptVocab {
            line,
            message: message.to_string(),
        };
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines().enumerate();
        let n_docs = match lines.next() {
            Some((_, header)) => header
                .strip_prefix("n_docs,")
                .and_then(|v| v.parse::<usize>().ok())
                .ok_or_else(|| corrupt(1, "expected `n_docs,<count>` header"))?,
            None => return Err(corrupt(1, "empty vocabulary file")),
        };
        let mut terms = BTreeMap::new();
        for (i, line) in lines {
            let mut parts = line.split(',');
            let (term, index, df) = match (parts.next(), parts.next(), parts.next(), parts.next())
            {
                (Some(t), Some(i), Some(d), None) => (t, i, d),
                _ => return Err(corrupt(i + 1, "expected `term,index,df`")),
            };
            let index =
                index.parse::<usize>().map_err(|_| corrupt(i + 1, "bad index"))?;
            let df = df.parse::<usize>().map_err(|_| corrupt(i + 1, "bad df"))?;
            if df < 1 || df > n_docs {
                return Err(corrupt(i + 1, "df out of range"));
            }
            if terms.insert(term.to_string(), TermStats { index, df }).is_some() {
                return Err(corrupt(i + 1, "duplicate term"));
            }
        }
        let mut indices: Vec<usize> = terms.values().map(|s| s.index).collect();
        indices.sort_unstable();
        if indices.iter().enumerate().any(|(want, got)| want != *got) {
            return Err(corrupt(1, "indices are not contiguous from 0"));
        }
        Ok(TfidfVocab { terms, n_docs })
    }
}

/// Builds a vocabulary over `corpus` with per-conversation document
/// frequencies.
pub fn fit_tfidf(corpus: &Corpus) -> Result<TfidfVocab, FeatureError> {
    if corpus.conversations.is_empty() {
        return Err(FeatureError::EmptyCorpus);
    }
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for conv in &corpus.conversations {
        let mut seen: Vec<String> = conversation_tokens(conv);
        seen.sort_unstable();
        seen.dedup();
        for term in seen {
            *df.entry(term).or_insert(0) += 1;
        }
    }
    let terms = df
        .into_iter()
        .enumerate()
        .map(|(index, (term, df))| (term, TermStats { index, df }))
        .collect();
    Ok(TfidfVocab { terms, n_docs: corpus.conversations.len() })
}

/// TF-IDF vector of one conversation: raw term count × smoothed idf
/// `ln((1+N)/(1+df)) + 1`, then L2-normalized. Out-of-vocabulary tokens are
/// ignored; a conversation with no in-vocabulary tokens maps to the zero
/// vector.
pub fn transform_tfidf(conv: &Conversation, vocab: &TfidfVocab) -> FeatureVector {
    let mut tf: BTreeMap<usize, f64> = BTreeMap::new();
    for token in conversation_tokens(conv) {
        if let Some(stats) = vocab.terms.get(&token) {
            *tf.entry(stats.index).or_insert(0.0) += 1.0;
        }
    }
    let n = vocab.n_docs as f64;
    let idf_by_index: BTreeMap<usize, f64> = vocab
        .terms
        .values()
        .map(|s| (s.index, ((1.0 + n) / (1.0 + s.df as f64)).ln() + 1.0))
        .collect();
    let mut entries: Vec<(usize, f64)> =
        tf.into_iter().map(|(i, count)| (i, count * idf_by_index[&i])).collect();
    let norm = entries.iter().map(|(_, x)| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for (_, x) in &mut entries {
            *x /= norm;
        }
    }
    FeatureVector::sparse(&conv.conversation_id, "tfidf", vocab.len(), entries)
}

fn escape_speaker(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\n', "\\n").replace('(', "\\(")
}

fn escape_text(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\n', "\\n")
}

/// Renders a tagged conversation as `SpeakerID (Tag-Name): text` lines, the
/// input format of the wire outcome predictors. Escaping (backslashes and
/// newlines in both fields, `(` in the speaker) keeps the rendering injective
/// on (speaker, tag, text) sequences.
pub fn render_prepend_text(
    conv: &Conversation,
    tags: &[TagAssignment],
) -> Result<String, FeatureError> {
    let tag_by_id: BTreeMap<&str, SocialOrientationTag> =
        tags.iter().map(|a| (a.utterance_id.as_str(), a.tag)).collect();
    let lines = conv
        .utterances
        .iter()
        .map(|u| {
            let tag = tag_by_id
                .get(u.utterance_id.as_str())
                .ok_or_else(|| FeatureError::MissingTag(u.utterance_id.clone()))?;
            Ok(format!(
                "{} ({}): {}",
                escape_speaker(&u.speaker_id),
                tag.wire_name(),
                escape_text(&u.text)
            ))
        })
        .collect::<Result<Vec<String>, FeatureError>>()?;
    Ok(lines.join("\n"))
}

/// Concatenates schemas into a composite one. A single part passes through
/// unchanged; with several parts, the composite id joins the part ids with
/// `+` and every name is qualified as `part_id.name` so names stay unique.
pub fn concat_schemas(parts: &[&FeatureSchema]) -> Result<FeatureSchema, FeatureError> {
    check_distinct_schema_ids(parts.iter().map(|s| s.schema_id.as_str()))?;
    if parts.len() == 1 {
        return Ok(parts[0].clone());
    }
    let schema_id =
        parts.iter().map(|s| s.schema_id.as_str()).collect::<Vec<_>>().join("+");
    let names = parts
        .iter()
        .flat_map(|s| s.names.iter().map(|n| format!("{}.{n}", s.schema_id)))
        .collect();
    Ok(FeatureSchema::new(&schema_id, names))
}

fn check_distinct_schema_ids<'a>(
    ids: impl Iterator<Item = &'a str>,
) -> Result<(), FeatureError> {
    let mut seen = std::collections::BTreeSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(FeatureError::SchemaMismatch(format!(
                "schema `{id}` appears more than once in a concatenation"
            )));
        }
    }
    if seen.is_empty() {
        return Err(FeatureError::SchemaMismatch("nothing to concatenate".into()));
    }
    Ok(())
}

/// Concatenates one conversation's vectors in argument order, mirroring
/// [`concat_schemas`].
pub fn concat_features(parts: &[FeatureVector]) -> Result<FeatureVector, FeatureError> {
    check_distinct_schema_ids(parts.iter().map(|v| v.schema_id.as_str()))?;
    if parts.len() == 1 {
        return Ok(parts[0].clone());
    }
    let conversation_id = &parts[0].conversation_id;
    if let Some(other) = parts.iter().find(|v| &v.conversation_id != conversation_id) {
        return Err(FeatureError::SchemaMismatch(format!(
            "cannot concatenate features of `{conversation_id}` and `{}`",
            other.conversation_id
        )));
    }
    let schema_id =
        parts.iter().map(|v| v.schema_id.as_str()).collect::<Vec<_>>().join("+");
    let dim = parts.iter().map(|v| v.dim()).sum();
    let mut entries = Vec::new();
    let mut offset = 0;
    for part in parts {
        entries.extend(part.nonzero().into_iter().map(|(i, x)| (offset + i, x)));
        offset += part.dim();
    }
    Ok(FeatureVector::sparse(conversation_id, &schema_id, dim, entries))
}

fn csv_field(value: &str) -> Result<&str, FeatureError> {
    if value.contains(',') || value.contains('\n') || value.contains('\r') {
        return Err(FeatureError::UnsafeCsvField(value.to_string()));
    }
    Ok(value)
}

/// Renders conversations × features as comma-separated text: header of
/// `conversation_id,outcome` plus the schema's names, then one row per
/// vector. Unlabeled conversations get an empty outcome field.
pub fn render_feature_matrix(
    schema: &FeatureSchema,
    rows: &[(FeatureVector, Option<Outcome>)],
) -> Result<String, FeatureError> {
    let mut out = String::from("conversation_id,outcome");
    for name in &schema.names {
        out.push(',');
        out.push_str(csv_field(name)?);
    }
    out.push('\n');
    for (vector, outcome) in rows {
        if vector.schema_id != schema.schema_id || vector.dim() != schema.dimension() {
            return Err(FeatureError::SchemaMismatch(format!(
                "vector for `{}` has schema `{}` ({} dims), matrix wants `{}` ({} dims)",
                vector.conversation_id,
                vector.schema_id,
                vector.dim(),
                schema.schema_id,
                schema.dimension()
            )));
        }
        out.push_str(csv_field(&vector.conversation_id)?);
        out.push(',');
        out.push_str(outcome.map(|o| o.as_str()).unwrap_or(""));
        for value in vector.to_dense() {
            out.push(',');
            out.push_str(&format!("{value}"));
        }
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tagging::{TagSource, TagMap};
    use proptest::prelude::*;

    fn social(tags: &[SocialOrientationTag]) -> Vec<TagAssignment> {
        tags.iter()
            .enumerate()
            .map(|(i, tag)| TagAssignment {
                utterance_id: format!("u{i}"),
                tag: *tag,
                source: TagSource::Lexicon,
                confidence: None,
            })
            .collect()
    }

    fn sentiments(tags: &[SentimentTag]) -> Vec<SentimentAssignment> {
        tags.iter()
            .enumerate()
            .map(|(i, tag)| SentimentAssignment {
                utterance_id: format!("u{i}"),
                tag: *tag,
                source: TagSource::Lexicon,
            })
            .collect()
    }

    #[test]
    fn social_counts_normalize_over_utterances() {
        use SocialOrientationTag::*;
        let v = social_count_features("c1", &social(&[Cold, WarmAgreeable, WarmAgreeable, WarmAgreeable]))
            .unwrap();
        assert_eq!(v.get(Cold.index()), 0.25);
        assert_eq!(v.get(WarmAgreeable.index()), 0.75);
        assert_eq!(v.get(AssuredDominant.index()), 0.0);
        assert_eq!(v.dim(), 9);

        let uniform = social_count_features("c2", &social(&SocialOrientationTag::ALL)).unwrap();
        for i in 0..9 {
            assert!((uniform.get(i) - 1.0 / 9.0).abs() < 1e-15);
        }

        let na = social_count_features("c3", &social(&[NotAvailable])).unwrap();
        assert_eq!(na.get(NotAvailable.index()), 1.0);

        assert!(matches!(
            social_count_features("c4", &[]).unwrap_err(),
            FeatureError::EmptyConversation
        ));
    }

    #[test]
    fn sentiment_counts_normalize_over_utterances() {
        use SentimentTag::*;
        let v = sentiment_count_features("c1", &sentiments(&[Positive, Positive, Negative]))
            .unwrap();
        let dense = v.to_dense();
        assert!((dense[0] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(dense[1], 0.0);
        assert!((dense[2] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(dense[3], 0.0);

        let neutral = sentiment_count_features("c2", &sentiments(&[Neutral, Neutral])).unwrap();
        assert_eq!(neutral.get(Neutral.index()), 1.0);

        assert!(matches!(
            sentiment_count_features("c3", &[]).unwrap_err(),
            FeatureError::EmptyConversation
        ));
    }

    #[test]
    fn tokenizer_handles_punctuation_case_and_cjk() {
        assert_eq!(tokenize("Hello, world! 123"), ["hello", "world", "123"]);
        assert_eq!(tokenize("don't"), ["don", "t"]);
        assert_eq!(tokenize("谢谢你"), ["谢", "谢", "你"]);
        assert_eq!(tokenize("I said 你好 twice"), ["i", "said", "你", "好", "twice"]);
        assert!(tokenize(" ... ").is_empty());
    }

    fn toy_corpus() -> Corpus {
        Corpus::new(
            "toy",
            vec![
                Conversation::from_turns("c1", None, None, &[("u1", "a", "the cat sat")]),
                Conversation::from_turns("c2", None, None, &[("u2", "a", "the cat ran")]),
                Conversation::from_turns("c3", None, None, &[("u3", "a", "the dog barked")]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn fit_counts_document_frequencies() {
        let vocab = fit_tfidf(&toy_corpus()).unwrap();
        assert_eq!(vocab.n_docs(), 3);
        assert_eq!(vocab.len(), 6);
        assert_eq!(vocab.document_frequency("the"), Some(3));
        assert_eq!(vocab.document_frequency("cat"), Some(2));
        assert_eq!(vocab.document_frequency("sat"), Some(1));
        assert_eq!(vocab.document_frequency("zebra"), None);
        // Index order is sorted term order.
        let entries = vocab.entries();
        assert_eq!(entries[0], ("barked", 0, 1));
        assert_eq!(entries[5], ("the", 5, 3));

        let empty = Corpus::new("none", vec![]).unwrap();
        assert!(matches!(fit_tfidf(&empty).unwrap_err(), FeatureError::EmptyCorpus));
    }

    #[test]
    fn transform_matches_hand_evaluated_weights() {
        // Frozen values of count × (ln((1+3)/(1+df)) + 1), L2-normalized,
        // computed independently from the formula.
        let vocab = fit_tfidf(&toy_corpus()).unwrap();
        let checks: [(&str, &[(usize, f64)]); 2] = [
            ("the cat sat", &[
                (1, 0.5478321549274363),
                (4, 0.7203334490549893),
                (5, 0.4254405389711991),
            ]),
            ("the the cat", &[(1, 0.5413428136679054), (5, 0.8408019731721111)]),
        ];
        for (text, expected) in checks {
            let conv = Conversation::from_turns("x", None, None, &[("u", "a", text)]);
            let v = transform_tfidf(&conv, &vocab);
            assert_eq!(v.nonzero().len(), expected.len(), "for {text:?}");
            for (index, weight) in expected {
                assert!(
                    (v.get(*index) - weight).abs() < 1e-12,
                    "{text:?} index {index}: {} vs {weight}",
                    v.get(*index)
                );
            }
        }
    }

    #[test]
    fn all_oov_is_zero_and_single_token_is_one_hot() {
        let vocab = fit_tfidf(&toy_corpus()).unwrap();
        let oov = Conversation::from_turns("x", None, None, &[("u", "a", "zebra quux")]);
        assert!(transform_tfidf(&oov, &vocab).nonzero().is_empty());

        let single = Conversation::from_turns("y", None, None, &[("u", "a", "dog! dog?")]);
        let v = transform_tfidf(&single, &vocab);
        assert_eq!(v.nonzero(), vec![(2, 1.0)]);
    }

    #[test]
    fn vocab_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.csv");
        let vocab = fit_tfidf(&toy_corpus()).unwrap();
        vocab.save(&path).unwrap();
        assert_eq!(TfidfVocab::load(&path).unwrap(), vocab);

        std::fs::write(&path, "n_docs,3\nthe,0,5\n").unwrap();
        assert!(matches!(
            TfidfVocab::load(&path).unwrap_err(),
            FeatureError::CorruptVocab { line: 2, .. }
        ));
        std::fs::write(&path, "not a header\n").unwrap();
        assert!(matches!(
            TfidfVocab::load(&path).unwrap_err(),
            FeatureError::CorruptVocab { line: 1, .. }
        ));
    }

    #[test]
    fn prepend_text_renders_speaker_tag_text_lines() {
        let conv = Conversation::from_turns(
            "c1",
            None,
            None,
            &[
                ("u1", "SpeakerA", "That sounds like a good plan."),
                ("u2", "SpeakerB", ""),
            ],
        );
        let tags = vec![
            TagAssignment {
                utterance_id: "u1".into(),
                tag: SocialOrientationTag::WarmAgreeable,
                source: TagSource::Llm,
                confidence: None,
            },
            TagAssignment {
                utterance_id: "u2".into(),
                tag: SocialOrientationTag::NotAvailable,
                source: TagSource::Llm,
                confidence: None,
            },
        ];
        assert_eq!(
            render_prepend_text(&conv, &tags).unwrap(),
            "SpeakerA (Warm-Agreeable): That sounds like a good plan.\nSpeakerB (Not Available): "
        );

        assert!(matches!(
            render_prepend_text(&conv, &tags[..1]).unwrap_err(),
            FeatureError::MissingTag(id) if id == "u2"
        ));
    }

    #[test]
    fn schema_concat_qualifies_names_and_rejects_duplicates() {
        let social = social_count_schema();
        let sentiment = sentiment_count_schema();
        let combined = concat_schemas(&[&social, &sentiment]).unwrap();
        assert_eq!(combined.schema_id, "social_counts+sentiment_counts");
        assert_eq!(combined.dimension(), 13);
        assert_eq!(combined.names[0], "social_counts.Assured-Dominant");
        assert_eq!(combined.names[12], "sentiment_counts.Not Available");

        assert_eq!(concat_schemas(&[&social]).unwrap(), social);
        assert!(matches!(
            concat_schemas(&[&social, &social]).unwrap_err(),
            FeatureError::SchemaMismatch(_)
        ));
    }

    #[test]
    fn feature_concat_offsets_indices() {
        let a = FeatureVector::dense("c1", "social_counts", vec![0.5, 0.0, 0.5]);
        let b = FeatureVector::sparse("c1", "tfidf", 4, vec![(1, 1.0)]);
        let combined = concat_features(&[a.clone(), b]).unwrap();
        assert_eq!(combined.schema_id, "social_counts+tfidf");
        assert_eq!(combined.dim(), 7);
        assert_eq!(combined.nonzero(), vec![(0, 0.5), (2, 0.5), (4, 1.0)]);
        assert_eq!(concat_features(std::slice::from_ref(&a)).unwrap(), a);

        let other = FeatureVector::dense("c2", "tfidf", vec![1.0]);
        assert!(matches!(
            concat_features(&[a, other]).unwrap_err(),
            FeatureError::SchemaMismatch(_)
        ));
    }

    #[test]
    fn matrix_rendering_and_csv_hygiene() {
        let schema = FeatureSchema::new("pair", vec!["x".into(), "y".into()]);
        let rows = vec![
            (FeatureVector::dense("c1", "pair", vec![0.25, 1.0]), Some(Outcome::Failure)),
            (FeatureVector::dense("c2", "pair", vec![0.0, 0.5]), None),
        ];
        assert_eq!(
            render_feature_matrix(&schema, &rows).unwrap(),
            "conversation_id,outcome,x,y\nc1,failure,0.25,1\nc2,,0,0.5\n"
        );

        let bad = vec![(FeatureVector::dense("c,1", "pair", vec![0.0, 0.0]), None)];
        assert!(matches!(
            render_feature_matrix(&schema, &bad).unwrap_err(),
            FeatureError::UnsafeCsvField(_)
        ));

        let mismatched = vec![(FeatureVector::dense("c1", "other", vec![0.0, 0.0]), None)];
        assert!(matches!(
            render_feature_matrix(&schema, &mismatched).unwrap_err(),
            FeatureError::SchemaMismatch(_)
        ));
    }

    #[test]
    fn tag_map_features_cover_a_tagged_corpus() {
        let corpus = toy_corpus();
        let mut tag_map = TagMap::new();
        for conv in &corpus.conversations {
            tag_map.insert(
                conv.conversation_id.clone(),
                crate::tagging::tag_with_lexicon(conv),
            );
        }
        for conv in &corpus.conversations {
            let v = social_count_features(&conv.conversation_id, &tag_map[&conv.conversation_id])
                .unwrap();
            let sum: f64 = v.to_dense().iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    proptest! {
        // Count features are permutation-invariant and sum to 1.
        #[test]
        fn social_counts_are_permutation_invariant(
            indices in proptest::collection::vec(0usize..9, 1..40),
            rotation in 0usize..40,
        ) {
            let tags: Vec<SocialOrientationTag> =
                indices.iter().map(|i| SocialOrientationTag::ALL[*i]).collect();
            let mut rotated = tags.clone();
            rotated.rotate_left(rotation % tags.len());
            let a = social_count_features("c", &social(&tags)).unwrap();
            let b = social_count_features("c", &social(&rotated)).unwrap();
            for i in 0..9 {
                prop_assert!((a.get(i) - b.get(i)).abs() < 1e-15);
            }
            let sum: f64 = a.to_dense().iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }

        // TF-IDF vectors have unit L2 norm unless all tokens are OOV.
        #[test]
        fn tfidf_norm_is_one_or_zero(texts in proptest::collection::vec("[a-e ]{0,30}", 1..6)) {
            let convs: Vec<Conversation> = texts
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    Conversation::from_turns(&format!("c{i}"), None, None, &[("u", "a", t)])
                })
                .collect();
            let corpus = Corpus::new("p", convs).unwrap();
            let vocab = fit_tfidf(&corpus).unwrap();
            let probe = Conversation::from_turns("probe", None, None, &[("u", "a", &texts[0])]);
            let v = transform_tfidf(&probe, &vocab);
            let norm: f64 = v.to_dense().iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!(norm.abs() < 1e-12 || (norm - 1.0).abs() < 1e-12);
        }

        // The prepend rendering never collides for different inputs.
        #[test]
        fn prepend_text_is_injective(
            a in proptest::collection::vec(("[a-c(\\\\\n ]{0,6}", 0usize..3, "[a-c(\\\\\n ]{0,6}"), 1..5),
            b in proptest::collection::vec(("[a-c(\\\\\n ]{0,6}", 0usize..3, "[a-c(\\\\\n ]{0,6}"), 1..5),
        ) {
            let build = |turns: &[(String, usize, String)]| {
                let owned: Vec<(String, String, String)> = turns
                    .iter()
                    .enumerate()
                    .map(|(i, (speaker, _, text))| (format!("u{i}"), speaker.clone(), text.clone()))
                    .collect();
                let refs: Vec<(&str, &str, &str)> = owned
                    .iter()
                    .map(|(id, speaker, text)| (id.as_str(), speaker.as_str(), text.as_str()))
                    .collect();
                let conv = Conversation::from_turns("c", None, None, &refs);
                let tags: Vec<TagAssignment> = turns
                    .iter()
                    .enumerate()
                    .map(|(i, (_, t, _))| TagAssignment {
                        utterance_id: format!("u{i}"),
                        tag: SocialOrientationTag::ALL[*t % 9],
                        source: TagSource::Lexicon,
                        confidence: None,
                    })
                    .collect();
                render_prepend_text(&conv, &tags).unwrap()
            };
            let key_a: Vec<(String, usize, String)> =
                a.iter().map(|(s, t, x)| (s.clone(), t % 9, x.clone())).collect();
            let key_b: Vec<(String, usize, String)> =
                b.iter().map(|(s, t, x)| (s.clone(), t % 9, x.clone())).collect();
            let ra = build(&a);
            let rb = build(&b);
            if key_a == key_b {
                prop_assert_eq!(ra, rb);
            } else {
                prop_assert_ne!(ra, rb);
            }
        }
    }
}
