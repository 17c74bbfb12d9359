//! Synthetic sentiment corpus for desk-scale experiments.
//!
//! Sentences are assembled from fixed word banks: strong and weak sentiment
//! adjectives, neutral nouns and filler, and a pool of rare "decor"
//! adjectives that appear infrequently so their embeddings stay
//! weakly determined. Every sentence carries a majority sentiment (the
//! label) plus some contrary evidence, which leaves the attacks room to
//! work: substituting the strong words away lets the contrary side win.
//!
//! Generation is deterministic for a fixed seed and balanced across labels.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::textcore::{parse_synonyms, Example, SynonymLexicon};

const STRONG_POS: &[&str] = &[
    "excellent",
    "wonderful",
    "superb",
    "brilliant",
    "fantastic",
    "amazing",
    "delightful",
    "outstanding",
];
const STRONG_NEG: &[&str] = &[
    "terrible",
    "awful",
    "horrible",
    "dreadful",
    "atrocious",
    "abysmal",
    "appalling",
    "disastrous",
];
const WEAK_POS: &[&str] = &["good", "nice", "pleasant", "charming", "decent", "likable"];
const WEAK_NEG: &[&str] = &["bad", "poor", "dull", "bland", "tedious", "forgettable"];
const NOUNS: &[&str] = &[
    "movie", "film", "story", "plot", "acting", "script", "cast", "ending", "scene", "dialogue",
    "music", "pacing",
];
const RARE_DECOR: &[&str] = &[
    "ornate",
    "austere",
    "baroque",
    "minimalist",
    "angular",
    "muted",
    "hazy",
    "brisk",
    "languid",
    "stark",
    "opulent",
    "rustic",
    "sleek",
    "vintage",
    "surreal",
    "whimsical",
    "somber",
    "luminous",
    "gritty",
    "polished",
    "breezy",
    "moody",
    "lavish",
    "spare",
    "quaint",
    "mellow",
    "murky",
    "airy",
    "earthy",
    "frosty",
    "glossy",
    "grainy",
    "jagged",
    "mirthful",
    "nimble",
    "oblique",
    "pallid",
    "plush",
    "smoky",
    "tangled",
    "velvety",
];
const OPENERS: &[&str] = &["i thought", "overall", "honestly", "frankly"];
const LINKS: &[&str] = &["felt", "was", "seemed"];

/// The synonym lexicon that ships with the crate. Strong and weak sentiment
/// words map to a mix of out-of-vocabulary synonyms and rare decor words.
pub fn builtin_lexicon() -> SynonymLexicon {
    parse_synonyms(builtin_lexicon_tsv()).expect("bundled lexicon is well-formed")
}

pub fn builtin_lexicon_tsv() -> &'static str {
    include_str!("../data/synonyms.tsv")
}

/// Generate `n` labeled sentences, balanced across the two classes.
pub fn generate_corpus(n: usize, seed: u64) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|i| generate_one(i % 2, &mut rng)).collect()
}

fn generate_one(label: usize, rng: &mut ChaCha8Rng) -> Example {
    let (strong, weak, strong_opp, weak_opp) = if label == 1 {
        (STRONG_POS, WEAK_POS, STRONG_NEG, WEAK_NEG)
    } else {
        (STRONG_NEG, WEAK_NEG, STRONG_POS, WEAK_POS)
    };
    let pick = |bank: &[&str], rng: &mut ChaCha8Rng| (*bank.choose(rng).unwrap()).to_string();
    let noun = pick(NOUNS, rng);
    let noun2 = pick(NOUNS, rng);
    let link = pick(LINKS, rng);

    let shape = rng.random_range(0..20);
    let mut text = if shape < 13 {
        // Easy: two strong label words against one weak contrary word.
        format!(
            "the {noun} was {} and {} but the {noun2} {link} {}",
            pick(strong, rng),
            pick(strong, rng),
            pick(weak_opp, rng),
        )
    } else if shape < 17 {
        // Medium: one strong label word against one weak contrary word.
        format!(
            "the {noun} {link} {} though the {noun2} was {}",
            pick(strong, rng),
            pick(weak_opp, rng),
        )
    } else if shape < 19 {
        // Hard: strong + weak label words against a strong contrary word.
        format!(
            "the {noun} was {} and {} but {noun2} seemed {}",
            pick(strong, rng),
            pick(weak, rng),
            pick(strong_opp, rng),
        )
    } else {
        // Ambiguous: two weak words of opposite polarity; the label follows
        // the first. The bag of words is the same either way, so these sit
        // on every model's decision boundary.
        format!(
            "the {noun} was {} and the {noun2} was {}",
            pick(weak, rng),
            pick(weak_opp, rng),
        )
    };

    if rng.random_bool(0.3) {
        let opener = *OPENERS.choose(rng).unwrap();
        text = format!("{opener} {text}");
    }
    if rng.random_bool(0.25) {
        text = format!("{text} with {} {}", pick(RARE_DECOR, rng), pick(NOUNS, rng));
    }
    if rng.random_bool(0.5) {
        text.push_str(" .");
    }
    Example::new(text, label)
}

/// Write a corpus as a `label<TAB>text` TSV file.
pub fn write_corpus_tsv(path: impl AsRef<std::path::Path>, examples: &[Example]) -> Result<()> {
    let mut out = String::new();
    for ex in examples {
        out.push_str(&format!("{}\t{}\n", ex.label, ex.text));
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textcore::{build_vocab, parse_dataset};

    #[test]
    fn corpus_is_deterministic_and_balanced() {
        let a = generate_corpus(100, 3);
        let b = generate_corpus(100, 3);
        assert_eq!(a, b);
        let pos = a.iter().filter(|ex| ex.label == 1).count();
        assert_eq!(pos, 50);
    }

    #[test]
    fn corpus_round_trips_through_tsv() {
        let examples = generate_corpus(20, 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.tsv");
        write_corpus_tsv(&path, &examples).unwrap();
        let (loaded, summary) = crate::textcore::load_dataset(&path).unwrap();
        assert_eq!(summary.examples, 20);
        assert_eq!(summary.classes, 2);
        for (a, b) in examples.iter().zip(&loaded) {
            assert_eq!(a.text, b.text);
            assert_eq!(a.label, b.label);
            assert_eq!(a.tokens, b.tokens);
        }
    }

    #[test]
    fn builtin_lexicon_parses_and_covers_sentiment_banks() {
        let lex = builtin_lexicon();
        for word in STRONG_POS.iter().chain(STRONG_NEG).chain(WEAK_POS).chain(WEAK_NEG) {
            assert!(
                !lex.candidates(word).is_empty(),
                "no synonyms for '{word}'"
            );
        }
    }

    #[test]
    fn corpus_vocabulary_is_desk_scale() {
        let examples = generate_corpus(2000, 7);
        let vocab = build_vocab(&examples, 2).unwrap();
        assert!(vocab.len() < 120, "vocab unexpectedly large: {}", vocab.len());
        // Rare decor words still clear the frequency floor at this corpus size.
        for w in RARE_DECOR {
            assert!(vocab.contains(w), "decor word '{w}' fell out of vocabulary");
        }
    }

    #[test]
    fn corpus_parses_cleanly() {
        let examples = generate_corpus(50, 9);
        let tsv: String = examples
            .iter()
            .map(|ex| format!("{}\t{}\n", ex.label, ex.text))
            .collect();
        let (parsed, _) = parse_dataset(&tsv).unwrap();
        assert_eq!(parsed.len(), 50);
    }
}
