//! Constrained extraction loop: extract with the current vocabulary, fold
//! high-scoring suggestions into it, and extract again until the vocabulary
//! stops changing.
//!
//! The extractor itself is pluggable through [`ExtractorBackend`]. The
//! bundled [`RuleBackend`] is a deterministic keyword matcher, so the loop
//! can be exercised without any language model.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vocab::{
    aggregate_suggestions, dedup_event_set, expand_vocabulary, normalize_token, validate_event,
    AaodEvent, Bucket, EventSet, SlotKind, Suggestion, Token, VocabError, Vocabulary,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgeError {
    #[error("backend failed on document {doc_id}: {message}")]
    BackendFailure { doc_id: String, message: String },
    #[error("unknown backend {0:?}")]
    UnknownBackend(String),
    #[error("series has no timestamps")]
    EmptySeries,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Vocab(#[from] VocabError),
}

/// A dated text to extract from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub time: f64,
    pub body: String,
}

/// Backend output for one document.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Extraction {
    pub candidates: Vec<AaodEvent>,
    pub suggestions: Vec<Suggestion>,
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{0}")]
pub struct BackendError(pub String);

/// Anything that turns a document into candidate events plus vocabulary
/// suggestions. Implementations must tolerate concurrent calls.
pub trait ExtractorBackend: Send + Sync {
    fn name(&self) -> &str;

    fn extract(&self, doc: &Document, vocab: &Vocabulary) -> Result<Extraction, BackendError>;
}

/// One keyword rule: when `pattern` occurs as a whole-word phrase, assign
/// the listed slot tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordRule {
    pub pattern: String,
    pub assign: BTreeMap<SlotKind, Token>,
    #[serde(default, rename = "type", skip_serializing_if = "Option::is_none")]
    pub type_index: Option<usize>,
    /// Score attached to suggestions for assigned tokens missing from the
    /// vocabulary.
    #[serde(default = "default_score")]
    pub score: f64,
}

fn default_score() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleBackend {
    pub rules: Vec<KeywordRule>,
    /// Fill still-empty slots with any allowed token found in the sentence.
    #[serde(default = "default_true")]
    pub match_vocabulary: bool,
    #[serde(default)]
    pub default_type: usize,
}

fn default_true() -> bool {
    true
}

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn contains_phrase(haystack: &[String], phrase: &[String]) -> bool {
    !phrase.is_empty() && haystack.windows(phrase.len()).any(|w| w == phrase)
}

impl RuleBackend {
    pub fn new(rules: Vec<KeywordRule>) -> Self {
        RuleBackend {
            rules,
            match_vocabulary: true,
            default_type: 0,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, AgeError> {
        serde_json::from_str(text).map_err(|e| AgeError::InvalidInput(e.to_string()))
    }

    /// One candidate per sentence that fills all four slots.
    fn extract_sentence(
        &self,
        sentence: &[String],
        doc: &Document,
        vocab: &Vocabulary,
        out: &mut Extraction,
    ) {
        let mut slots: [Option<Token>; 4] = Default::default();
        let mut kind = None;
        for rule in &self.rules {
            if !contains_phrase(sentence, &words(&rule.pattern)) {
                continue;
            }
            if kind.is_none() {
                kind = rule.type_index;
            }
            for (slot, token) in &rule.assign {
                if !vocab.contains(*slot, token) {
                    out.suggestions.push(Suggestion {
                        slot: *slot,
                        token: token.clone(),
                        score: rule.score,
                    });
                }
                slots[slot.index()].get_or_insert_with(|| token.clone());
            }
        }
        if self.match_vocabulary {
            for slot in SlotKind::ALL {
                if slots[slot.index()].is_some() {
                    continue;
                }
                slots[slot.index()] = vocab
                    .allowed(slot)
                    .iter()
                    .find(|t| contains_phrase(sentence, &words(t.as_str())))
                    .cloned();
            }
        }
        if let [Some(actor), Some(action), Some(object), Some(direction)] = slots {
            out.candidates.push(AaodEvent {
                actor,
                action,
                object,
                direction,
                time: doc.time,
                type_index: kind.unwrap_or(self.default_type),
            });
        }
    }
}

impl ExtractorBackend for RuleBackend {
    fn name(&self) -> &str {
        "rule"
    }

    fn extract(&self, doc: &Document, vocab: &Vocabulary) -> Result<Extraction, BackendError> {
        let mut out = Extraction::default();
        for sentence in doc.body.split(['.', ';', '!', '?', '\n']) {
            let w = words(sentence);
            if !w.is_empty() {
                self.extract_sentence(&w, doc, vocab, &mut out);
            }
        }
        Ok(out)
    }
}

/// Resolve a backend by configuration name. Only `"rule"` ships here;
/// it needs a keyword table.
pub fn backend_by_name(
    name: &str,
    rules: Option<RuleBackend>,
) -> Result<Box<dyn ExtractorBackend>, AgeError> {
    match name {
        "rule" => Ok(Box::new(rules.unwrap_or_else(|| RuleBackend::new(Vec::new())))),
        other => Err(AgeError::UnknownBackend(other.to_string())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundOptions {
    /// Minimum summed score for a suggestion to enter the vocabulary.
    pub threshold: f64,
    /// Events are deduplicated within `floor(time / bucket_width)`.
    pub bucket_width: f64,
}

impl Default for RoundOptions {
    fn default() -> Self {
        RoundOptions {
            threshold: 0.5,
            bucket_width: 1.0,
        }
    }
}

impl RoundOptions {
    pub fn with_threshold(threshold: f64) -> Self {
        RoundOptions {
            threshold,
            ..Self::default()
        }
    }

    fn check(&self) -> Result<(), AgeError> {
        if !(self.threshold.is_finite() && self.threshold >= 0.0) {
            return Err(AgeError::InvalidInput(format!(
                "threshold must be >= 0, got {}",
                self.threshold
            )));
        }
        if !(self.bucket_width.is_finite() && self.bucket_width > 0.0) {
            return Err(AgeError::InvalidInput(format!(
                "bucket width must be > 0, got {}",
                self.bucket_width
            )));
        }
        Ok(())
    }

    pub fn bucket_of(&self, time: f64) -> Bucket {
        (time / self.bucket_width).floor() as Bucket
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionRound {
    pub round_index: usize,
    /// Accepted events grouped by bucket, ascending.
    pub accepted: Vec<EventSet>,
    pub rejected_count: usize,
    pub vocabulary_after: Vocabulary,
    /// Tokens added at the end of this round.
    pub added: Vec<(SlotKind, Token)>,
    /// Summed suggestions still below threshold, carried into the next round.
    pub pending: Vec<Suggestion>,
}

impl ExtractionRound {
    pub fn accepted_events(&self) -> impl Iterator<Item = &AaodEvent> {
        self.accepted.iter().flat_map(|s| s.events.iter())
    }

    pub fn accepted_count(&self) -> usize {
        self.accepted.iter().map(EventSet::len).sum()
    }
}

/// One extraction round with no carried suggestions.
pub fn run_round(
    docs: &[Document],
    vocab: &Vocabulary,
    backend: &dyn ExtractorBackend,
    threshold: f64,
) -> Result<ExtractionRound, AgeError> {
    run_round_with(
        0,
        docs,
        vocab,
        backend,
        &RoundOptions::with_threshold(threshold),
        &[],
    )
}

/// One round. Candidates are validated against `vocab` as it stood at the
/// start of the round, so a token suggested in this round only takes
/// effect in the next. `carried` suggestions from earlier rounds are summed
/// with this round's before thresholding.
pub fn run_round_with(
    round_index: usize,
    docs: &[Document],
    vocab: &Vocabulary,
    backend: &dyn ExtractorBackend,
    options: &RoundOptions,
    carried: &[Suggestion],
) -> Result<ExtractionRound, AgeError> {
    options.check()?;
    let mut buckets: BTreeMap<Bucket, Vec<AaodEvent>> = BTreeMap::new();
    let mut rejected_count = 0;
    let mut suggestions = carried.to_vec();
    for doc in docs {
        let out = backend
            .extract(doc, vocab)
            .map_err(|e| AgeError::BackendFailure {
                doc_id: doc.id.clone(),
                message: e.0,
            })?;
        for cand in out.candidates {
            if validate_event(&cand, vocab).is_accept() {
                buckets.entry(options.bucket_of(cand.time)).or_default().push(cand);
            } else {
                rejected_count += 1;
            }
        }
        suggestions.extend(out.suggestions);
    }
    if let Some(bad) = suggestions.iter().find(|s| !(s.score >= 0.0)) {
        return Err(AgeError::InvalidInput(format!(
            "suggestion {:?} has negative score {}",
            bad.token.as_str(),
            bad.score
        )));
    }
    let accepted = buckets
        .into_iter()
        .map(|(b, events)| dedup_event_set(&EventSet::new(b, events)))
        .collect();
    let vocabulary_after = expand_vocabulary(vocab, &suggestions, options.threshold);
    let added = vocabulary_after.added_since(vocab);
    let pending = aggregate_suggestions(&suggestions)
        .into_iter()
        .filter(|((slot, token), _)| !vocabulary_after.contains(*slot, token))
        .map(|((slot, token), score)| Suggestion { slot, token, score })
        .collect();
    Ok(ExtractionRound {
        round_index,
        accepted,
        rejected_count,
        vocabulary_after,
        added,
        pending,
    })
}

/// Repeat rounds until a round leaves the vocabulary version unchanged or
/// `max_rounds` rounds have run.
pub fn run_loop(
    docs: &[Document],
    v0: &Vocabulary,
    backend: &dyn ExtractorBackend,
    options: &RoundOptions,
    max_rounds: usize,
) -> Result<Vec<ExtractionRound>, AgeError> {
    if max_rounds == 0 {
        return Err(AgeError::InvalidInput("max_rounds must be at least 1".into()));
    }
    let mut rounds: Vec<ExtractionRound> = Vec::new();
    let mut vocab = v0.clone();
    let mut carried = Vec::new();
    for r in 0..max_rounds {
        let round = run_round_with(r, docs, &vocab, backend, options, &carried)?;
        let changed = round.vocabulary_after.version() != vocab.version();
        vocab = round.vocabulary_after.clone();
        carried = round.pending.clone();
        rounds.push(round);
        if !changed {
            break;
        }
    }
    Ok(rounds)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    /// `(index of the window's right endpoint, events)`, ascending.
    pub windows: Vec<(usize, EventSet)>,
    /// Events after the last timestamp.
    pub dropped_late: usize,
    /// Events whose window would start before the first timestamp.
    pub dropped_incomplete: usize,
}

/// Assign each event to the window `X_t = {x_{t−m+1}, …, x_t}` whose right
/// endpoint `t` is the first series timestamp at or after the event.
pub fn align_events(
    events: &[AaodEvent],
    series_times: &[f64],
    window: usize,
) -> Result<Alignment, AgeError> {
    if series_times.is_empty() {
        return Err(AgeError::EmptySeries);
    }
    if window == 0 {
        return Err(AgeError::InvalidInput("window length must be at least 1".into()));
    }
    if series_times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(AgeError::InvalidInput(
            "series timestamps must be strictly increasing".into(),
        ));
    }
    let mut grouped: BTreeMap<usize, Vec<AaodEvent>> = BTreeMap::new();
    let mut dropped_late = 0;
    let mut dropped_incomplete = 0;
    for e in events {
        let idx = series_times.partition_point(|&t| t < e.time);
        if idx == series_times.len() {
            dropped_late += 1;
        } else if idx + 1 < window {
            dropped_incomplete += 1;
        } else {
            grouped.entry(idx).or_default().push(e.clone());
        }
    }
    let windows = grouped
        .into_iter()
        .map(|(idx, evs)| (idx, dedup_event_set(&EventSet::new(idx as Bucket, evs))))
        .collect();
    Ok(Alignment {
        windows,
        dropped_late,
        dropped_incomplete,
    })
}

/// Parse a `slot -> token` map with normalization, for building rules in code.
pub fn assignments(pairs: &[(SlotKind, &str)]) -> Result<BTreeMap<SlotKind, Token>, AgeError> {
    pairs
        .iter()
        .map(|(s, t)| Ok((*s, normalize_token(t)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::new(
            &["opec", "refiners"],
            &["cut", "raise"],
            &["production", "prices"],
            &["up", "down"],
            vec![],
            1,
        )
        .unwrap()
    }

    fn rule(pattern: &str, pairs: &[(SlotKind, &str)], score: f64) -> KeywordRule {
        KeywordRule {
            pattern: pattern.into(),
            assign: assignments(pairs).unwrap(),
            type_index: None,
            score,
        }
    }

    fn doc(id: &str, time: f64, body: &str) -> Document {
        Document {
            id: id.into(),
            time,
            body: body.into(),
        }
    }

    fn backend() -> RuleBackend {
        RuleBackend::new(vec![
            rule("cut", &[(SlotKind::Direction, "down")], 1.0),
            rule("gasoline", &[(SlotKind::Object, "gasoline")], 0.9),
        ])
    }

    struct Failing;
    impl ExtractorBackend for Failing {
        fn name(&self) -> &str {
            "failing"
        }
        fn extract(&self, doc: &Document, _: &Vocabulary) -> Result<Extraction, BackendError> {
            if doc.id == "bad" {
                Err(BackendError("boom".into()))
            } else {
                Ok(Extraction::default())
            }
        }
    }

    #[test]
    fn empty_documents() {
        let r = run_round(&[], &vocab(), &backend(), 0.5).unwrap();
        assert!(r.accepted.is_empty());
        assert_eq!(r.vocabulary_after, vocab());
    }

    #[test]
    fn single_document_extraction() {
        let r = run_round(&[doc("d1", 3.0, "OPEC cut production")], &vocab(), &backend(), 0.5)
            .unwrap();
        let got: Vec<_> = r.accepted_events().collect();
        assert_eq!(got.len(), 1);
        assert_eq!(
            got[0].tuple(),
            AaodEvent::new("opec", "cut", "production", "down", 3.0, 0).unwrap().tuple()
        );
        assert_eq!(r.rejected_count, 0);
    }

    #[test]
    fn out_of_vocabulary_object_waits_one_round() {
        let docs = [doc("d1", 1.0, "Refiners cut gasoline output.")];
        let r = run_round(&docs, &vocab(), &backend(), 0.5).unwrap();
        assert_eq!(r.accepted_count(), 0);
        assert_eq!(r.rejected_count, 1);
        assert!(r
            .vocabulary_after
            .contains(SlotKind::Object, &Token::new("gasoline").unwrap()));
        assert_eq!(r.vocabulary_after.version(), 2);

        let rounds = run_loop(&docs, &vocab(), &backend(), &RoundOptions::default(), 10).unwrap();
        assert_eq!(rounds.len(), 2);
        assert_eq!(rounds[1].accepted_count(), 1);
        assert_eq!(rounds[1].vocabulary_after.version(), 2);
    }

    #[test]
    fn loop_without_suggestions_stops_after_one_round() {
        let docs = [doc("d1", 1.0, "OPEC cut production")];
        let rounds = run_loop(&docs, &vocab(), &backend(), &RoundOptions::default(), 5).unwrap();
        assert_eq!(rounds.len(), 1);
    }

    #[test]
    fn round_budget_cuts_the_loop() {
        let docs = [doc("d1", 1.0, "Refiners cut gasoline output.")];
        let rounds = run_loop(&docs, &vocab(), &backend(), &RoundOptions::default(), 1).unwrap();
        assert_eq!(rounds.len(), 1);
        assert_eq!(rounds[0].accepted_count(), 0);
        assert_eq!(rounds[0].added.len(), 1);
        assert!(run_loop(&docs, &vocab(), &backend(), &RoundOptions::default(), 0).is_err());
    }

    #[test]
    fn low_scores_accumulate_across_rounds() {
        let b = RuleBackend::new(vec![
            rule("cut", &[(SlotKind::Direction, "down")], 1.0),
            rule("gasoline", &[(SlotKind::Object, "gasoline")], 0.3),
        ]);
        let docs = [doc("d1", 1.0, "Refiners cut gasoline output.")];
        let first = run_round(&docs, &vocab(), &b, 0.5).unwrap();
        assert_eq!(first.vocabulary_after, vocab());
        assert_eq!(first.pending.len(), 1);
        let second = run_round_with(1, &docs, &first.vocabulary_after, &b, &RoundOptions::default(), &first.pending)
            .unwrap();
        assert_eq!(second.added.len(), 1);
    }

    #[test]
    fn dedup_is_per_bucket() {
        let docs = [
            doc("a", 1.2, "OPEC cut production"),
            doc("b", 1.7, "OPEC cut production again"),
            doc("c", 2.1, "OPEC cut production"),
        ];
        let r = run_round(&docs, &vocab(), &backend(), 0.5).unwrap();
        let sizes: Vec<_> = r.accepted.iter().map(|s| (s.bucket, s.len())).collect();
        assert_eq!(sizes, vec![(1, 1), (2, 1)]);
        assert_eq!(r.accepted[0].events[0].time, 1.2);
    }

    #[test]
    fn backend_failure_aborts_round() {
        let docs = [doc("ok", 0.0, ""), doc("bad", 1.0, "")];
        assert_eq!(
            run_round(&docs, &vocab(), &Failing, 0.5).unwrap_err(),
            AgeError::BackendFailure { doc_id: "bad".into(), message: "boom".into() }
        );
        assert!(run_loop(&docs, &vocab(), &Failing, &RoundOptions::default(), 3).is_err());
    }

    #[test]
    fn backend_lookup() {
        assert_eq!(backend_by_name("rule", None).unwrap().name(), "rule");
        assert!(matches!(
            backend_by_name("gpt", None),
            Err(AgeError::UnknownBackend(n)) if n == "gpt"
        ));
    }

    #[test]
    fn rules_file_parses() {
        let b = RuleBackend::from_json(
            r#"{"rules":[{"pattern":"Cut","assign":{"direction":"Down"},"type":1}]}"#,
        )
        .unwrap();
        assert_eq!(b.rules[0].type_index, Some(1));
        assert_eq!(b.rules[0].score, 1.0);
        assert!(b.match_vocabulary);
        assert_eq!(b.rules[0].assign[&SlotKind::Direction].as_str(), "down");
    }

    #[test]
    fn phrase_matching_respects_word_boundaries() {
        let b = RuleBackend::new(vec![rule("cut", &[(SlotKind::Direction, "down")], 1.0)]);
        let out = b
            .extract(&doc("x", 0.0, "OPEC executes production prices"), &vocab())
            .unwrap();
        // "executes" must not trigger "cut"
        assert!(out.candidates.is_empty());
    }

    fn at(t: f64) -> AaodEvent {
        AaodEvent::new("opec", "cut", "production", "down", t, 0).unwrap()
    }

    #[test]
    fn alignment_rules() {
        let weeks = [0.0, 7.0, 14.0, 21.0];
        let a = align_events(&[at(10.5), at(14.0), at(25.0)], &weeks, 1).unwrap();
        assert_eq!(a.windows.len(), 1);
        assert_eq!(a.windows[0].0, 2);
        // both land in the window ending at 14.0 and dedup to one
        assert_eq!(a.windows[0].1.len(), 1);
        assert_eq!(a.dropped_late, 1);

        let b = align_events(&[at(3.0), at(7.0), at(8.0)], &weeks, 2).unwrap();
        let idx: Vec<_> = b.windows.iter().map(|(i, s)| (*i, s.len())).collect();
        assert_eq!(idx, vec![(1, 1), (2, 1)]);

        let c = align_events(&[at(-1.0)], &weeks, 2).unwrap();
        assert_eq!(c.dropped_incomplete, 1);

        assert_eq!(align_events(&[at(1.0)], &[], 1), Err(AgeError::EmptySeries));
    }
}
