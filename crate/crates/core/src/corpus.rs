//! Corpus handling: domain types, benchmark-format parsing, dataset statistics.
//!
//! The triplet file format is one sentence per line:
//!
//! ```text
//! The room was fine but the staff was rude .####[([1], [3], 'POS'), ([6], [8], 'NEG')]
//! ```
//!
//! The text before `####` is whitespace-tokenized; the index lists refer to
//! those tokens. A sentiment-classification (SC) corpus is one example per
//! line, `SENTENCE\tPOS|NEU|NEG`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

/// Sentiment polarity of a triplet (or of a whole SC sentence).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Polarity {
    Positive,
    Negative,
    Neutral,
}

impl Polarity {
    pub const ALL: [Polarity; 3] = [Polarity::Positive, Polarity::Negative, Polarity::Neutral];

    /// Three-letter tag used by the file formats.
    pub fn tag(self) -> &'static str {
        match self {
            Polarity::Positive => "POS",
            Polarity::Negative => "NEG",
            Polarity::Neutral => "NEU",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Polarity> {
        match tag {
            "POS" => Some(Polarity::Positive),
            "NEG" => Some(Polarity::Negative),
            "NEU" => Some(Polarity::Neutral),
            _ => None,
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Contiguous word interval, inclusive on both ends, 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct WordSpan {
    pub start: usize,
    pub end: usize,
}

impl WordSpan {
    /// Panics if `start > end`; use [`WordSpan::from_indices`] for untrusted input.
    pub fn new(start: usize, end: usize) -> WordSpan {
        assert!(start <= end, "span start {start} > end {end}");
        WordSpan { start, end }
    }

    /// Build a span from an explicit word-index list, validating contiguity.
    pub fn from_indices(indices: &[usize]) -> Result<WordSpan> {
        if indices.is_empty() {
            return Err(Error::Validation("empty word-index list".into()));
        }
        let (&start, &end) = (indices.first().unwrap(), indices.last().unwrap());
        let expected: Vec<usize> = (start..=end).collect();
        if indices != expected {
            return Err(Error::Validation(format!(
                "word-index list {indices:?} is not contiguous ascending"
            )));
        }
        Ok(WordSpan { start, end })
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false // a span always covers at least one word
    }

    pub fn indices(&self) -> Vec<usize> {
        (self.start..=self.end).collect()
    }

    pub fn contains(&self, word: usize) -> bool {
        self.start <= word && word <= self.end
    }

    pub fn overlaps(&self, other: &WordSpan) -> bool {
        self.start <= other.end && other.start <= self.end
    }

    pub fn text(&self, words: &[String]) -> String {
        words[self.start..=self.end].join(" ")
    }
}

/// Gold (aspect, opinion, polarity) annotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GoldTriplet {
    pub aspect: WordSpan,
    pub opinion: WordSpan,
    pub polarity: Polarity,
}

/// A tokenized sentence with its gold triplets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub id: String,
    pub words: Vec<String>,
    pub triplets: Vec<GoldTriplet>,
}

impl Sentence {
    pub fn n_words(&self) -> usize {
        self.words.len()
    }

    /// Unique gold aspect spans, sorted.
    pub fn gold_aspects(&self) -> Vec<WordSpan> {
        let mut spans: Vec<WordSpan> = self.triplets.iter().map(|t| t.aspect).collect();
        spans.sort();
        spans.dedup();
        spans
    }

    /// Unique gold opinion spans, sorted.
    pub fn gold_opinions(&self) -> Vec<WordSpan> {
        let mut spans: Vec<WordSpan> = self.triplets.iter().map(|t| t.opinion).collect();
        spans.sort();
        spans.dedup();
        spans
    }

    /// Unique gold (aspect, opinion) pairs, sorted.
    pub fn gold_pairs(&self) -> Vec<(WordSpan, WordSpan)> {
        let mut pairs: Vec<(WordSpan, WordSpan)> =
            self.triplets.iter().map(|t| (t.aspect, t.opinion)).collect();
        pairs.sort();
        pairs.dedup();
        pairs
    }

    fn validate(&self, path: &Path, line_no: usize) -> Result<()> {
        if self.words.is_empty() {
            return Err(Error::parse(path, line_no, "sentence has no words"));
        }
        for t in &self.triplets {
            for (role, span) in [("aspect", t.aspect), ("opinion", t.opinion)] {
                if span.end >= self.words.len() {
                    return Err(Error::parse(
                        path,
                        line_no,
                        format!(
                            "{role} span [{}, {}] out of range for {}-word sentence",
                            span.start,
                            span.end,
                            self.words.len()
                        ),
                    ));
                }
            }
        }
        let mut pairs: Vec<(WordSpan, WordSpan)> =
            self.triplets.iter().map(|t| (t.aspect, t.opinion)).collect();
        pairs.sort();
        let before = pairs.len();
        pairs.dedup();
        if pairs.len() != before {
            return Err(Error::parse(
                path,
                line_no,
                "duplicate (aspect, opinion) pair in gold triplets",
            ));
        }
        Ok(())
    }
}

/// One example of a sentiment-classification corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScExample {
    pub words: Vec<String>,
    pub sentiment: Polarity,
}

// ---------------------------------------------------------------------------
// Triplet file parsing
// ---------------------------------------------------------------------------

/// Parse a triplet-annotated corpus file. One [`Sentence`] per non-empty line.
pub fn parse_aste_file(path: impl AsRef<Path>) -> Result<Vec<Sentence>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::io_not_found(&path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path)?;
    parse_aste_text(&text, path)
}

/// Parse corpus text directly (used by tests and in-memory fixtures).
pub fn parse_aste_str(text: &str) -> Result<Vec<Sentence>> {
    parse_aste_text(text, Path::new("<memory>"))
}

fn parse_aste_text(text: &str, path: &Path) -> Result<Vec<Sentence>> {
    let mut sentences = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let sentence = parse_aste_line(line, path, line_no, sentences.len())?;
        sentences.push(sentence);
    }
    Ok(sentences)
}

fn parse_aste_line(line: &str, path: &Path, line_no: usize, index: usize) -> Result<Sentence> {
    let Some((text, annot)) = line.split_once("####") else {
        return Err(Error::parse(path, line_no, "missing `####` separator"));
    };
    let words: Vec<String> = text.split_whitespace().map(str::to_string).collect();
    let triplets = TripletListParser::new(annot, path, line_no).parse()?;
    let sentence = Sentence {
        id: format!("s{index:05}"),
        words,
        triplets,
    };
    sentence.validate(path, line_no)?;
    Ok(sentence)
}

/// Recursive-descent parser for the `[([1], [3, 4], 'POS'), ...]` literal.
struct TripletListParser<'a> {
    chars: Vec<char>,
    pos: usize,
    raw: &'a str,
    path: &'a Path,
    line_no: usize,
}

impl<'a> TripletListParser<'a> {
    fn new(raw: &'a str, path: &'a Path, line_no: usize) -> Self {
        TripletListParser {
            chars: raw.chars().collect(),
            pos: 0,
            raw,
            path,
            line_no,
        }
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::parse(
            self.path,
            self.line_no,
            format!("{} in annotation `{}`", msg.into(), self.raw.trim()),
        )
    }

    fn skip_ws(&mut self) {
        while self.pos < self.chars.len() && self.chars[self.pos].is_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.chars.get(self.pos).copied()
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(format!("expected `{c}`")))
        }
    }

    fn parse(mut self) -> Result<Vec<GoldTriplet>> {
        self.expect('[')?;
        let mut triplets = Vec::new();
        loop {
            match self.peek() {
                Some(']') => {
                    self.pos += 1;
                    break;
                }
                Some('(') => {
                    triplets.push(self.parse_tuple()?);
                    if self.peek() == Some(',') {
                        self.pos += 1;
                    }
                }
                _ => return Err(self.err("expected `(` or `]`")),
            }
        }
        self.skip_ws();
        if self.pos != self.chars.len() {
            return Err(self.err("trailing characters after triplet list"));
        }
        Ok(triplets)
    }

    fn parse_tuple(&mut self) -> Result<GoldTriplet> {
        self.expect('(')?;
        let aspect_indices = self.parse_index_list()?;
        self.expect(',')?;
        let opinion_indices = self.parse_index_list()?;
        self.expect(',')?;
        let polarity = self.parse_polarity()?;
        self.expect(')')?;
        let aspect = WordSpan::from_indices(&aspect_indices)
            .map_err(|e| self.err(format!("aspect: {e}")))?;
        let opinion = WordSpan::from_indices(&opinion_indices)
            .map_err(|e| self.err(format!("opinion: {e}")))?;
        Ok(GoldTriplet {
            aspect,
            opinion,
            polarity,
        })
    }

    fn parse_index_list(&mut self) -> Result<Vec<usize>> {
        self.expect('[')?;
        let mut indices = Vec::new();
        loop {
            match self.peek() {
                Some(']') => {
                    self.pos += 1;
                    break;
                }
                Some(c) if c.is_ascii_digit() => {
                    let mut n = 0usize;
                    while let Some(d) = self.chars.get(self.pos).and_then(|c| c.to_digit(10)) {
                        n = n * 10 + d as usize;
                        self.pos += 1;
                    }
                    indices.push(n);
                    if self.peek() == Some(',') {
                        self.pos += 1;
                    }
                }
                _ => return Err(self.err("expected digit or `]` in index list")),
            }
        }
        Ok(indices)
    }

    fn parse_polarity(&mut self) -> Result<Polarity> {
        let quote = match self.peek() {
            Some(q @ ('\'' | '"')) => q,
            _ => return Err(self.err("expected quoted polarity tag")),
        };
        self.pos += 1;
        let mut tag = String::new();
        while let Some(&c) = self.chars.get(self.pos) {
            if c == quote {
                self.pos += 1;
                return Polarity::from_tag(&tag)
                    .ok_or_else(|| self.err(format!("unknown polarity tag `{tag}`")));
            }
            tag.push(c);
            self.pos += 1;
        }
        Err(self.err("unterminated polarity tag"))
    }
}

// ---------------------------------------------------------------------------
// Serialization back to the line format
// ---------------------------------------------------------------------------

/// Render one sentence in the triplet line format.
pub fn sentence_to_aste_line(sentence: &Sentence) -> String {
    let tuples: Vec<String> = sentence
        .triplets
        .iter()
        .map(|t| {
            format!(
                "([{}], [{}], '{}')",
                index_list(&t.aspect),
                index_list(&t.opinion),
                t.polarity.tag()
            )
        })
        .collect();
    format!("{}####[{}]", sentence.words.join(" "), tuples.join(", "))
}

fn index_list(span: &WordSpan) -> String {
    span.indices()
        .iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn write_aste_file(path: impl AsRef<Path>, sentences: &[Sentence]) -> Result<()> {
    let mut out = String::new();
    for s in sentences {
        out.push_str(&sentence_to_aste_line(s));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// SC corpus
// ---------------------------------------------------------------------------

/// Parse a sentiment-classification corpus: `SENTENCE\tPOS|NEU|NEG` per line.
pub fn parse_sc_file(path: impl AsRef<Path>) -> Result<Vec<ScExample>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::io_not_found(&path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path)?;
    parse_sc_text(&text, path)
}

pub fn parse_sc_str(text: &str) -> Result<Vec<ScExample>> {
    parse_sc_text(text, Path::new("<memory>"))
}

fn parse_sc_text(text: &str, path: &Path) -> Result<Vec<ScExample>> {
    let mut examples = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let Some((sent, tag)) = line.rsplit_once('\t') else {
            return Err(Error::parse(path, idx + 1, "missing tab separator"));
        };
        let sentiment = Polarity::from_tag(tag.trim())
            .ok_or_else(|| Error::parse(path, idx + 1, format!("unknown polarity `{tag}`")))?;
        let words: Vec<String> = sent.split_whitespace().map(str::to_string).collect();
        if words.is_empty() {
            return Err(Error::parse(path, idx + 1, "sentence has no words"));
        }
        examples.push(ScExample { words, sentiment });
    }
    Ok(examples)
}

pub fn write_sc_file(path: impl AsRef<Path>, examples: &[ScExample]) -> Result<()> {
    let mut out = String::new();
    for ex in examples {
        out.push_str(&ex.words.join(" "));
        out.push('\t');
        out.push_str(ex.sentiment.tag());
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Dataset statistics
// ---------------------------------------------------------------------------

/// Quantitative corpus characteristics.
///
/// Phrase counts are over unique (sentence, span) occurrences. A one-to-many
/// relation is counted once per phrase that participates in two or more
/// triplets on the opposite side, regardless of how many partners it has.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_sentences: usize,
    pub n_triplets: usize,
    pub n_positive: usize,
    pub n_negative: usize,
    pub n_neutral: usize,
    pub n_aspect_phrases: usize,
    pub n_single_word_aspect: usize,
    pub n_multi_word_aspect: usize,
    pub n_opinion_phrases: usize,
    pub n_single_word_opinion: usize,
    pub n_multi_word_opinion: usize,
    pub n_one_to_many_aspect_side: usize,
    pub n_one_to_many_opinion_side: usize,
    pub mean_sentence_length: f64,
    pub mean_aspect_length: f64,
    pub mean_opinion_length: f64,
}

impl DatasetStats {
    pub fn n_one_to_many_total(&self) -> usize {
        self.n_one_to_many_aspect_side + self.n_one_to_many_opinion_side
    }

    /// Flat key-value view, in a fixed order, for text output.
    pub fn to_kv(&self) -> Vec<(&'static str, String)> {
        vec![
            ("n_sentences", self.n_sentences.to_string()),
            ("n_triplets", self.n_triplets.to_string()),
            ("n_positive", self.n_positive.to_string()),
            ("n_negative", self.n_negative.to_string()),
            ("n_neutral", self.n_neutral.to_string()),
            ("n_aspect_phrases", self.n_aspect_phrases.to_string()),
            ("n_single_word_aspect", self.n_single_word_aspect.to_string()),
            ("n_multi_word_aspect", self.n_multi_word_aspect.to_string()),
            ("n_opinion_phrases", self.n_opinion_phrases.to_string()),
            (
                "n_single_word_opinion",
                self.n_single_word_opinion.to_string(),
            ),
            ("n_multi_word_opinion", self.n_multi_word_opinion.to_string()),
            (
                "n_one_to_many_aspect_side",
                self.n_one_to_many_aspect_side.to_string(),
            ),
            (
                "n_one_to_many_opinion_side",
                self.n_one_to_many_opinion_side.to_string(),
            ),
            (
                "n_one_to_many_total",
                self.n_one_to_many_total().to_string(),
            ),
            (
                "mean_sentence_length",
                format!("{:.4}", self.mean_sentence_length),
            ),
            (
                "mean_aspect_length",
                format!("{:.4}", self.mean_aspect_length),
            ),
            (
                "mean_opinion_length",
                format!("{:.4}", self.mean_opinion_length),
            ),
        ]
    }
}

/// Compute corpus statistics. Empty input yields all zeros.
pub fn compute_stats(sentences: &[Sentence]) -> DatasetStats {
    let mut stats = DatasetStats {
        n_sentences: sentences.len(),
        ..DatasetStats::default()
    };
    let mut total_words = 0usize;
    let mut aspect_len_sum = 0usize;
    let mut opinion_len_sum = 0usize;

    for sentence in sentences {
        total_words += sentence.n_words();
        stats.n_triplets += sentence.triplets.len();
        for t in &sentence.triplets {
            match t.polarity {
                Polarity::Positive => stats.n_positive += 1,
                Polarity::Negative => stats.n_negative += 1,
                Polarity::Neutral => stats.n_neutral += 1,
            }
        }

        let aspects = sentence.gold_aspects();
        let opinions = sentence.gold_opinions();
        for span in &aspects {
            stats.n_aspect_phrases += 1;
            aspect_len_sum += span.len();
            if span.len() == 1 {
                stats.n_single_word_aspect += 1;
            } else {
                stats.n_multi_word_aspect += 1;
            }
        }
        for span in &opinions {
            stats.n_opinion_phrases += 1;
            opinion_len_sum += span.len();
            if span.len() == 1 {
                stats.n_single_word_opinion += 1;
            } else {
                stats.n_multi_word_opinion += 1;
            }
        }

        let mut per_aspect: BTreeMap<WordSpan, usize> = BTreeMap::new();
        let mut per_opinion: BTreeMap<WordSpan, usize> = BTreeMap::new();
        for (aspect, opinion) in sentence.gold_pairs() {
            *per_aspect.entry(aspect).or_default() += 1;
            *per_opinion.entry(opinion).or_default() += 1;
        }
        stats.n_one_to_many_aspect_side += per_aspect.values().filter(|&&n| n >= 2).count();
        stats.n_one_to_many_opinion_side += per_opinion.values().filter(|&&n| n >= 2).count();
    }

    if stats.n_sentences > 0 {
        stats.mean_sentence_length = total_words as f64 / stats.n_sentences as f64;
    }
    if stats.n_aspect_phrases > 0 {
        stats.mean_aspect_length = aspect_len_sum as f64 / stats.n_aspect_phrases as f64;
    }
    if stats.n_opinion_phrases > 0 {
        stats.mean_opinion_length = opinion_len_sum as f64 / stats.n_opinion_phrases as f64;
    }
    stats
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_SENTENCES: &str = "\
The room was fine but the staff was rude .####[([1], [3], 'POS'), ([6], [8], 'NEG')]
The menu is limited and extremely pricy .####[([1],[3],'NEG'),([1],[5,6],'NEG')]
";

    #[test]
    fn parses_the_two_reference_sentences() {
        let sentences = parse_aste_str(TWO_SENTENCES).unwrap();
        assert_eq!(sentences.len(), 2);

        let s0 = &sentences[0];
        assert_eq!(s0.words.len(), 10);
        assert_eq!(s0.words[1], "room");
        assert_eq!(
            s0.triplets,
            vec![
                GoldTriplet {
                    aspect: WordSpan::new(1, 1),
                    opinion: WordSpan::new(3, 3),
                    polarity: Polarity::Positive,
                },
                GoldTriplet {
                    aspect: WordSpan::new(6, 6),
                    opinion: WordSpan::new(8, 8),
                    polarity: Polarity::Negative,
                },
            ]
        );

        let s1 = &sentences[1];
        assert_eq!(s1.triplets.len(), 2);
        assert_eq!(s1.triplets[0].aspect, s1.triplets[1].aspect);
        assert_eq!(s1.triplets[1].opinion, WordSpan::new(5, 6));
        assert_eq!(s1.triplets[1].opinion.text(&s1.words), "extremely pricy");
    }

    #[test]
    fn empty_input_gives_empty_list() {
        assert!(parse_aste_str("").unwrap().is_empty());
        assert!(parse_aste_str("\n\n").unwrap().is_empty());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "good line####[([0], [1], 'POS')]\nbad line without separator\n";
        let err = parse_aste_str(text).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn non_contiguous_index_list_is_rejected() {
        let err = parse_aste_str("a b c d####[([0, 2], [3], 'POS')]").unwrap_err();
        assert!(err.to_string().contains("not contiguous"), "{err}");
    }

    #[test]
    fn out_of_range_index_is_rejected() {
        let err = parse_aste_str("a b####[([0], [5], 'POS')]").unwrap_err();
        assert!(err.to_string().contains("out of range"), "{err}");
    }

    #[test]
    fn unknown_polarity_is_rejected() {
        let err = parse_aste_str("a b####[([0], [1], 'MEH')]").unwrap_err();
        assert!(err.to_string().contains("unknown polarity"), "{err}");
    }

    #[test]
    fn round_trips_through_the_line_format() {
        let sentences = parse_aste_str(TWO_SENTENCES).unwrap();
        let text: String = sentences
            .iter()
            .map(|s| sentence_to_aste_line(s) + "\n")
            .collect();
        let reparsed = parse_aste_str(&text).unwrap();
        assert_eq!(sentences, reparsed);
    }

    #[test]
    fn span_index_list_round_trips() {
        for sentence in parse_aste_str(TWO_SENTENCES).unwrap() {
            for t in &sentence.triplets {
                assert_eq!(
                    WordSpan::from_indices(&t.aspect.indices()).unwrap(),
                    t.aspect
                );
                assert_eq!(
                    WordSpan::from_indices(&t.opinion.indices()).unwrap(),
                    t.opinion
                );
            }
        }
    }

    #[test]
    fn stats_on_reference_sentences() {
        let sentences = parse_aste_str(TWO_SENTENCES).unwrap();
        let stats = compute_stats(&sentences);
        assert_eq!(stats.n_sentences, 2);
        assert_eq!(stats.n_triplets, 4);
        assert_eq!(stats.n_positive, 1);
        assert_eq!(stats.n_negative, 3);
        assert_eq!(stats.n_neutral, 0);
        // `menu` pairs with two opinions; nothing else is one-to-many.
        assert_eq!(stats.n_one_to_many_aspect_side, 1);
        assert_eq!(stats.n_one_to_many_opinion_side, 0);
        assert_eq!(stats.n_aspect_phrases, 3);
        assert_eq!(stats.n_opinion_phrases, 4);
        assert_eq!(stats.n_multi_word_opinion, 1);
        assert!((stats.mean_sentence_length - 9.0).abs() < 1e-12);
    }

    #[test]
    fn stats_on_empty_corpus_are_zero() {
        assert_eq!(compute_stats(&[]), DatasetStats::default());
    }

    #[test]
    fn stats_are_additive_over_concatenated_splits() {
        let a = parse_aste_str(TWO_SENTENCES).unwrap();
        let b = parse_aste_str("good food .####[([1], [0], 'POS')]").unwrap();
        let mut all = a.clone();
        all.extend(b.clone());
        let (sa, sb, sall) = (compute_stats(&a), compute_stats(&b), compute_stats(&all));
        assert_eq!(sall.n_sentences, sa.n_sentences + sb.n_sentences);
        assert_eq!(sall.n_triplets, sa.n_triplets + sb.n_triplets);
        assert_eq!(sall.n_positive, sa.n_positive + sb.n_positive);
        assert_eq!(sall.n_aspect_phrases, sa.n_aspect_phrases + sb.n_aspect_phrases);
        assert_eq!(
            sall.n_one_to_many_aspect_side,
            sa.n_one_to_many_aspect_side + sb.n_one_to_many_aspect_side
        );
    }

    #[test]
    fn sc_corpus_round_trip() {
        let text = "the food was great\tPOS\nslow service\tNEG\n";
        let examples = parse_sc_str(text).unwrap();
        assert_eq!(examples.len(), 2);
        assert_eq!(examples[0].sentiment, Polarity::Positive);
        assert_eq!(examples[1].words, vec!["slow", "service"]);
    }
}
