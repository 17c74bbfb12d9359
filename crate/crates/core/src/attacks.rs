//! Black-box, score-based adversarial attacks on text classifiers.
//!
//! Attacks never see model parameters: they receive a prediction closure
//! over token lists and query it. All attacks respect an explicit
//! perturbation budget (a maximum fraction of substituted tokens, with a
//! floor of one token) and are deterministic for a fixed seed.
//!
//! Attack families:
//! - `greedy_substitute_attack`: saliency-ordered greedy substitution over a
//!   candidate source (synonym lexicon -> pwws, embedding neighbors ->
//!   textfooler);
//! - `genetic_attack`: population search over substitution masks;
//! - `char_level_attack`: greedy over keyboard-typo/char-edit candidates
//!   (deepwordbug);
//! - `multi_level_attack`: greedy over the union of word- and char-level
//!   candidates (textbugger).

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{argmax, Tensor2};
use crate::textcore::{embedding_neighbors, tokenize, Example, SynonymLexicon, Vocabulary, UNK_TOKEN};

/// Attack budget and search hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    /// Fraction of tokens that may be substituted (at least one is always
    /// allowed once the fraction is positive).
    pub max_word_frac: f64,
    pub max_char_edits_per_token: usize,
    pub population: usize,
    pub generations: usize,
    pub mutation_rate: f64,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            max_word_frac: 0.25,
            max_char_edits_per_token: 2,
            population: 20,
            generations: 20,
            mutation_rate: 0.3,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_word_frac > 0.0 && self.max_word_frac <= 1.0) {
            return Err(Error::invalid("max_word_frac must be in (0, 1]"));
        }
        if self.max_char_edits_per_token < 1 {
            return Err(Error::invalid("max_char_edits_per_token must be >= 1"));
        }
        if self.population < 1 || self.generations < 1 {
            return Err(Error::invalid("population and generations must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.mutation_rate) {
            return Err(Error::invalid("mutation_rate must be in [0, 1]"));
        }
        Ok(())
    }

    /// Substitution budget for a text of `n_tokens` tokens.
    pub fn budget(&self, n_tokens: usize) -> usize {
        ((self.max_word_frac * n_tokens as f64).floor() as usize).max(1)
    }
}

/// A successful attack: the perturbed text plus its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialExample {
    pub original: Example,
    pub perturbed_text: String,
    pub perturbed_tokens: Vec<String>,
    pub n_substitutions: usize,
    pub attack_name: String,
    pub victim_label_before: usize,
    pub victim_label_after: usize,
}

impl AdversarialExample {
    fn from_tokens(
        original: &Example,
        perturbed_tokens: Vec<String>,
        attack_name: &str,
        victim_label_after: usize,
    ) -> Self {
        let n_substitutions = original
            .tokens
            .iter()
            .zip(&perturbed_tokens)
            .filter(|(a, b)| a != b)
            .count();
        AdversarialExample {
            original: original.clone(),
            perturbed_text: perturbed_tokens.join(" "),
            perturbed_tokens,
            n_substitutions,
            attack_name: attack_name.to_string(),
            victim_label_before: original.label,
            victim_label_after,
        }
    }
}

/// Word embeddings used as a substitution source: nearest vocabulary
/// neighbors by cosine similarity.
pub struct NeighborSource<'a> {
    pub embedding: &'a Tensor2,
    pub vocab: &'a Vocabulary,
    pub k: usize,
    pub min_cos: f64,
}

impl NeighborSource<'_> {
    fn candidates(&self, token: &str) -> Vec<String> {
        embedding_neighbors(token, self.embedding, self.vocab, self.k, self.min_cos)
            .unwrap_or_default()
    }
}

/// Where substitution candidates come from. Every variant yields only
/// candidates distinct from the source token that re-tokenize to themselves.
pub enum CandidateSource<'a> {
    Lexicon(&'a SynonymLexicon),
    EmbeddingNeighbors(NeighborSource<'a>),
    CharBugs { max_edits: usize },
    Union(Vec<CandidateSource<'a>>),
}

impl CandidateSource<'_> {
    pub fn candidates(&self, token: &str) -> Vec<String> {
        let mut out = match self {
            CandidateSource::Lexicon(lex) => lex.candidates(token).to_vec(),
            CandidateSource::EmbeddingNeighbors(src) => src.candidates(token),
            CandidateSource::CharBugs { max_edits } => char_bug_candidates(token, *max_edits),
            CandidateSource::Union(sources) => {
                sources.iter().flat_map(|s| s.candidates(token)).collect()
            }
        };
        out.retain(|c| c != token);
        dedup_in_order(&mut out);
        out
    }

    fn attack_name(&self) -> &'static str {
        match self {
            CandidateSource::Lexicon(_) => "pwws",
            CandidateSource::EmbeddingNeighbors(_) => "textfooler",
            CandidateSource::CharBugs { .. } => "deepwordbug",
            CandidateSource::Union(_) => "textbugger",
        }
    }
}

fn dedup_in_order(items: &mut Vec<String>) {
    let mut seen = std::collections::HashSet::new();
    items.retain(|c| seen.insert(c.clone()));
}

/// Per-token saliency under the victim: the drop in true-class probability
/// when the token is replaced by UNK.
pub fn word_saliency<F>(predict: &F, tokens: &[String], label: usize) -> Vec<f64>
where
    F: Fn(&[String]) -> Vec<f64> + ?Sized,
{
    if tokens.is_empty() {
        return Vec::new();
    }
    let p0 = predict(tokens)[label];
    let mut probe = tokens.to_vec();
    (0..tokens.len())
        .map(|i| {
            let orig = std::mem::replace(&mut probe[i], UNK_TOKEN.to_string());
            let p = predict(&probe)[label];
            probe[i] = orig;
            p0 - p
        })
        .collect()
}

/// Require that the victim currently classifies the example correctly;
/// attacks are only defined on correct predictions.
fn check_precondition<F>(predict: &F, example: &Example) -> Result<Vec<f64>>
where
    F: Fn(&[String]) -> Vec<f64> + ?Sized,
{
    let probs = predict(&example.tokens);
    if example.label >= probs.len() {
        return Err(Error::invalid(format!(
            "label {} out of range for {} classes",
            example.label,
            probs.len()
        )));
    }
    if argmax(&probs) != example.label {
        return Err(Error::invalid(
            "attack requires an example the victim classifies correctly",
        ));
    }
    Ok(probs)
}

/// Saliency-ordered greedy substitution. Positions are visited in descending
/// saliency; at each position the candidate with the largest reduction in
/// true-class probability is applied (if any reduces it); the attack stops
/// as soon as the label flips or the budget is exhausted.
pub fn greedy_substitute_attack<F>(
    predict: &F,
    example: &Example,
    source: &CandidateSource,
    cfg: &AttackConfig,
) -> Result<Option<AdversarialExample>>
where
    F: Fn(&[String]) -> Vec<f64> + ?Sized,
{
    greedy_core(predict, example, source, cfg, source.attack_name())
}

fn greedy_core<F>(
    predict: &F,
    example: &Example,
    source: &CandidateSource,
    cfg: &AttackConfig,
    attack_name: &str,
) -> Result<Option<AdversarialExample>>
where
    F: Fn(&[String]) -> Vec<f64> + ?Sized,
{
    cfg.validate()?;
    let probs0 = check_precondition(predict, example)?;
    let tokens = &example.tokens;
    if tokens.is_empty() {
        return Ok(None);
    }
    let label = example.label;
    let budget = cfg.budget(tokens.len());

    let saliency = word_saliency(predict, tokens, label);
    let mut order: Vec<usize> = (0..tokens.len()).collect();
    order.sort_by(|&a, &b| saliency[b].partial_cmp(&saliency[a]).unwrap().then(a.cmp(&b)));

    let mut current = tokens.clone();
    let mut p_true = probs0[label];
    let mut n_subs = 0usize;
    for &pos in &order {
        if n_subs == budget {
            break;
        }
        let mut best: Option<(String, Vec<f64>)> = None;
        for cand in source.candidates(&tokens[pos]) {
            let prev = std::mem::replace(&mut current[pos], cand.clone());
            let probs = predict(&current);
            current[pos] = prev;
            let better = match &best {
                Some((_, bp)) => probs[label] < bp[label],
                None => probs[label] < p_true,
            };
            if better {
                best = Some((cand, probs));
            }
        }
        if let Some((cand, probs)) = best {
            current[pos] = cand;
            p_true = probs[label];
            n_subs += 1;
            let predicted = argmax(&probs);
            if predicted != label {
                return Ok(Some(AdversarialExample::from_tokens(
                    example,
                    current,
                    attack_name,
                    predicted,
                )));
            }
        }
    }
    Ok(None)
}

/// Population-based search over substitution masks: roulette selection on
/// fitness 1 - P_true, single-point crossover, per-position mutation drawing
/// from the candidate source, elitism, budget enforced on every individual.
pub fn genetic_attack<F>(
    predict: &F,
    example: &Example,
    source: &CandidateSource,
    cfg: &AttackConfig,
) -> Result<Option<AdversarialExample>>
where
    F: Fn(&[String]) -> Vec<f64> + ?Sized,
{
    cfg.validate()?;
    check_precondition(predict, example)?;
    let tokens = &example.tokens;
    if tokens.is_empty() {
        return Ok(None);
    }
    let label = example.label;
    let budget = cfg.budget(tokens.len());

    let candidates: Vec<Vec<String>> = tokens.iter().map(|t| source.candidates(t)).collect();
    let mutable: Vec<usize> = (0..tokens.len())
        .filter(|&i| !candidates[i].is_empty())
        .collect();
    if mutable.is_empty() {
        return Ok(None);
    }

    type Individual = Vec<Option<usize>>;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let apply = |ind: &Individual| -> Vec<String> {
        let mut out = tokens.clone();
        for (pos, slot) in ind.iter().enumerate() {
            if let Some(ci) = slot {
                out[pos] = candidates[pos][*ci].clone();
            }
        }
        out
    };
    let trim_to_budget = |ind: &mut Individual, rng: &mut ChaCha8Rng| {
        let mut active: Vec<usize> = (0..ind.len()).filter(|&i| ind[i].is_some()).collect();
        while active.len() > budget {
            let k = rng.random_range(0..active.len());
            ind[active.remove(k)] = None;
        }
    };

    let mut population: Vec<Individual> = (0..cfg.population)
        .map(|_| {
            let mut ind: Individual = vec![None; tokens.len()];
            let pos = mutable[rng.random_range(0..mutable.len())];
            ind[pos] = Some(rng.random_range(0..candidates[pos].len()));
            ind
        })
        .collect();

    for _ in 0..cfg.generations {
        let mut fitness = Vec::with_capacity(population.len());
        let mut winner: Option<(f64, usize, usize)> = None; // (fitness, index, predicted)
        for (i, ind) in population.iter().enumerate() {
            let probs = predict(&apply(ind));
            let fit = 1.0 - probs[label];
            let predicted = argmax(&probs);
            if predicted != label {
                let beats = winner.map_or(true, |(wf, _, _)| fit > wf);
                if beats {
                    winner = Some((fit, i, predicted));
                }
            }
            fitness.push(fit);
        }
        if let Some((_, idx, predicted)) = winner {
            return Ok(Some(AdversarialExample::from_tokens(
                example,
                apply(&population[idx]),
                "genetic",
                predicted,
            )));
        }

        // Elite passes through unchanged.
        let elite = {
            let mut best = 0usize;
            for (i, &f) in fitness.iter().enumerate() {
                if f > fitness[best] {
                    best = i;
                }
            }
            population[best].clone()
        };
        let total: f64 = fitness.iter().sum();
        let sampler = if total > 0.0 {
            WeightedIndex::new(&fitness).ok()
        } else {
            None
        };
        let pick = |rng: &mut ChaCha8Rng| -> usize {
            match &sampler {
                Some(w) => w.sample(rng),
                None => rng.random_range(0..population.len()),
            }
        };
        let mut next = Vec::with_capacity(population.len());
        next.push(elite);
        while next.len() < population.len() {
            let a = &population[pick(&mut rng)];
            let b = &population[pick(&mut rng)];
            let mut child: Individual = if tokens.len() >= 2 {
                let cut = rng.random_range(1..tokens.len());
                a[..cut].iter().chain(b[cut..].iter()).cloned().collect()
            } else {
                a.clone()
            };
            for pos in 0..child.len() {
                if !candidates[pos].is_empty() && rng.random_bool(cfg.mutation_rate) {
                    child[pos] = Some(rng.random_range(0..candidates[pos].len()));
                }
            }
            trim_to_budget(&mut child, &mut rng);
            next.push(child);
        }
        population = next;
    }
    Ok(None)
}

/// Character-level bug candidates for one token: adjacent swap, single-char
/// delete, single-char keyboard-neighbor substitute, single-char duplicate
/// insert, in that order, each left-to-right. Candidates are deduplicated,
/// never equal the token, stay within `max_edits` Levenshtein distance (an
/// adjacent swap costs 2), and must re-tokenize to a single token.
pub fn char_bug_candidates(token: &str, max_edits: usize) -> Vec<String> {
    let chars: Vec<char> = token.chars().collect();
    let n = chars.len();
    let mut out: Vec<String> = Vec::new();

    if max_edits >= 2 {
        for i in 0..n.saturating_sub(1) {
            let mut c = chars.clone();
            c.swap(i, i + 1);
            out.push(c.into_iter().collect());
        }
    }
    for i in 0..n {
        let mut c = chars.clone();
        c.remove(i);
        out.push(c.into_iter().collect());
    }
    for i in 0..n {
        for nb in keyboard_neighbors(chars[i]).chars() {
            let mut c = chars.clone();
            c[i] = nb;
            out.push(c.into_iter().collect());
        }
    }
    for i in 0..n {
        let mut c = chars.clone();
        c.insert(i + 1, chars[i]);
        out.push(c.into_iter().collect());
    }

    out.retain(|c| !c.is_empty() && c != token && tokenize(c) == [c.clone()]);
    dedup_in_order(&mut out);
    out
}

/// QWERTY adjacency for lowercase letters; other characters have no neighbors.
fn keyboard_neighbors(c: char) -> &'static str {
    match c {
        'q' => "wa",
        'w' => "qesa",
        'e' => "wrsd",
        'r' => "etdf",
        't' => "ryfg",
        'y' => "tugh",
        'u' => "yihj",
        'i' => "uojk",
        'o' => "ipkl",
        'p' => "ol",
        'a' => "qwsz",
        's' => "weadzx",
        'd' => "ersfxc",
        'f' => "rtdgcv",
        'g' => "tyfhvb",
        'h' => "yugjbn",
        'j' => "uihknm",
        'k' => "iojlm",
        'l' => "opk",
        'z' => "asx",
        'x' => "sdzc",
        'c' => "dfxv",
        'v' => "fgcb",
        'b' => "ghvn",
        'n' => "hjbm",
        'm' => "jkn",
        _ => "",
    }
}

/// Greedy attack over character-level bugs (deepwordbug).
pub fn char_level_attack<F>(
    predict: &F,
    example: &Example,
    cfg: &AttackConfig,
) -> Result<Option<AdversarialExample>>
where
    F: Fn(&[String]) -> Vec<f64> + ?Sized,
{
    let source = CandidateSource::CharBugs {
        max_edits: cfg.max_char_edits_per_token,
    };
    greedy_core(predict, example, &source, cfg, "deepwordbug")
}

/// Greedy attack over the union of word-level candidates (lexicon plus
/// optional embedding neighbors) and character-level bugs (textbugger).
pub fn multi_level_attack<F>(
    predict: &F,
    example: &Example,
    lexicon: &SynonymLexicon,
    neighbors: Option<NeighborSource<'_>>,
    cfg: &AttackConfig,
) -> Result<Option<AdversarialExample>>
where
    F: Fn(&[String]) -> Vec<f64> + ?Sized,
{
    let mut parts = vec![CandidateSource::Lexicon(lexicon)];
    if let Some(src) = neighbors {
        parts.push(CandidateSource::EmbeddingNeighbors(src));
    }
    parts.push(CandidateSource::CharBugs {
        max_edits: cfg.max_char_edits_per_token,
    });
    let source = CandidateSource::Union(parts);
    greedy_core(predict, example, &source, cfg, "textbugger")
}

/// Serialize adversarial examples to TSV:
/// `orig_label  adv_label  n_subs  original_text  perturbed_text  attack_name`.
/// Tabs/newlines inside texts are flattened to spaces.
pub fn adversarial_to_tsv(items: &[AdversarialExample]) -> String {
    let clean = |s: &str| s.replace(['\t', '\n'], " ");
    let mut out = String::new();
    for a in items {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            a.victim_label_before,
            a.victim_label_after,
            a.n_substitutions,
            clean(&a.original.text),
            clean(&a.perturbed_text),
            a.attack_name,
        ));
    }
    out
}

/// Parse the TSV format written by `adversarial_to_tsv`.
pub fn adversarial_from_tsv(text: &str) -> Result<Vec<AdversarialExample>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected 6 tab-separated fields, got {}", fields.len()),
            });
        }
        let parse_num = |s: &str, what: &str| -> Result<usize> {
            s.parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("bad {what} '{s}'"),
            })
        };
        let orig_label = parse_num(fields[0], "orig_label")?;
        let adv_label = parse_num(fields[1], "adv_label")?;
        let n_subs = parse_num(fields[2], "n_subs")?;
        let original = Example::new(fields[3], orig_label);
        let perturbed_tokens = tokenize(fields[4]);
        out.push(AdversarialExample {
            original,
            perturbed_text: fields[4].to_string(),
            perturbed_tokens,
            n_substitutions: n_subs,
            attack_name: fields[5].to_string(),
            victim_label_before: orig_label,
            victim_label_after: adv_label,
        });
    }
    Ok(out)
}
