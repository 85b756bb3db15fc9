//! A small energy-news corpus with a starting vocabulary and a keyword
//! table for [`RuleBackend`](crate::age::RuleBackend). One extraction round
//! adds two tokens; the second round settles.

use crate::age::{AgeError, Document, RuleBackend};
use crate::formats::{read_jsonl, FormatError};
use crate::generator::{GeneratorConfig, GeneratorConfigFile};
use crate::vocab::{VocabError, Vocabulary};

pub const CORPUS: &str = include_str!("../fixtures/corpus.jsonl");
pub const VOCABULARY: &str = include_str!("../fixtures/vocab.json");
pub const RULES: &str = include_str!("../fixtures/rules.json");
/// Two-type generator config over [`VOCABULARY`]; two years of daily steps.
pub const GENERATOR: &str = include_str!("../fixtures/generator.json");

pub fn corpus() -> Result<Vec<Document>, FormatError> {
    read_jsonl(CORPUS)
}

pub fn vocabulary() -> Result<Vocabulary, VocabError> {
    Vocabulary::from_json(VOCABULARY)
}

pub fn rule_backend() -> Result<RuleBackend, AgeError> {
    RuleBackend::from_json(RULES)
}

pub fn generator_config() -> GeneratorConfig {
    let file: GeneratorConfigFile =
        serde_json::from_str(GENERATOR).expect("bundled generator config parses");
    file.resolve(vocabulary().expect("bundled vocabulary parses"))
}
