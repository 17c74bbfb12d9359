//! Reference-model ensembles for prediction-inconsistency detection.
//!
//! The core construction decomposes the victim's embedding matrix into N
//! disjoint contiguous column slices and attaches a single shared reference
//! head of input width d/N. Victim head and reference head are trained
//! jointly on the shared embedding; at detection time an input is flagged as
//! adversarial when the N reference predictions disagree.
//!
//! `StmEnsemble` is the ablation counterpart: N independently trained
//! full-width models used as reference voters for the same detect interface.

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::models::{
    head_forward, head_backward, init_head, ArchConfig, HeadParams, ModelParams, TrainConfig,
};
use crate::numerics::{argmax, softmax, EmbeddingGrads, Tensor2};
use crate::textcore::{encode, tokenize, Example, Vocabulary};

/// Split an embedding of width `d` into `n` disjoint contiguous column ranges.
///
/// A single reference is vacuously consistent, so `n >= 2` is required, and
/// `d` must divide evenly.
pub fn decompose(d: usize, n: usize) -> Result<Vec<Range<usize>>> {
    if n < 2 {
        return Err(Error::invalid(format!(
            "ensemble needs at least 2 slices, got {n}"
        )));
    }
    if d % n != 0 {
        return Err(Error::invalid(format!(
            "embedding dim {d} not divisible by {n} slices"
        )));
    }
    let width = d / n;
    Ok((0..n).map(|i| i * width..(i + 1) * width).collect())
}

/// True iff all labels agree. Lists shorter than 2 are rejected: consistency
/// of a single prediction carries no signal.
pub fn is_consistent(labels: &[usize]) -> Result<bool> {
    if labels.len() < 2 {
        return Err(Error::invalid("consistency needs at least 2 labels"));
    }
    Ok(labels.windows(2).all(|w| w[0] == w[1]))
}

/// Per-input detection outcome.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    /// true = input judged adversarial.
    pub flagged: bool,
    pub victim_label: usize,
    pub reference_labels: Vec<usize>,
    pub consistent: bool,
}

impl Verdict {
    /// Build from the victim label and reference votes; when `victim_votes`
    /// is set the victim participates as an extra voter.
    pub fn from_labels(victim_label: usize, reference_labels: Vec<usize>, victim_votes: bool) -> Self {
        let consistent = if victim_votes {
            reference_labels.iter().all(|&l| l == victim_label)
        } else {
            is_consistent(&reference_labels).expect("ensembles always have >= 2 references")
        };
        Verdict {
            flagged: !consistent,
            victim_label,
            reference_labels,
            consistent,
        }
    }
}

/// Jointly trained victim + N slice references over one shared embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceEnsemble {
    pub embedding: Tensor2,
    /// Full-width victim head.
    pub victim_head: HeadParams,
    /// One head shared by all N slices, input width d/N.
    pub reference_head: HeadParams,
    pub n_slices: usize,
    pub num_classes: usize,
    /// Experimental: count the victim as an (N+1)-th consistency voter.
    pub victim_votes: bool,
}

impl ReferenceEnsemble {
    pub fn init(
        vocab_size: usize,
        num_classes: usize,
        arch: &ArchConfig,
        n_slices: usize,
        seed: u64,
    ) -> Result<Self> {
        let ranges = decompose(arch.embed_dim, n_slices)?;
        let slice_width = ranges[0].len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut embedding = Tensor2::zeros(vocab_size, arch.embed_dim);
        embedding.fill_uniform(&mut rng, 0.1);
        let victim_head = init_head(arch, arch.embed_dim, num_classes, &mut rng);
        let reference_head = init_head(arch, slice_width, num_classes, &mut rng);
        Ok(ReferenceEnsemble {
            embedding,
            victim_head,
            reference_head,
            n_slices,
            num_classes,
            victim_votes: false,
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.embedding.cols()
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.rows()
    }

    pub fn slice_width(&self) -> usize {
        self.embed_dim() / self.n_slices
    }

    pub fn slice_range(&self, i: usize) -> Range<usize> {
        let w = self.slice_width();
        i * w..(i + 1) * w
    }

    pub fn victim_logits(&self, ids: &[usize]) -> Result<Vec<f64>> {
        self.check_ids(ids)?;
        let (logits, _) = head_forward(&self.embedding, ids, 0..self.embed_dim(), &self.victim_head);
        Ok(logits)
    }

    pub fn victim_predict_ids(&self, ids: &[usize]) -> Result<(usize, Vec<f64>)> {
        let probs = softmax(&self.victim_logits(ids)?)?;
        Ok((argmax(&probs), probs))
    }

    pub fn victim_predict(&self, text: &str, vocab: &Vocabulary, max_len: usize) -> (usize, Vec<f64>) {
        let ids = encode(&tokenize(text), vocab, max_len);
        self.victim_predict_ids(&ids).expect("encoded ids are in range")
    }

    /// Black-box victim probabilities over token lists, for the attack suite.
    pub fn victim_fn<'a>(
        &'a self,
        vocab: &'a Vocabulary,
        max_len: usize,
    ) -> impl Fn(&[String]) -> Vec<f64> + 'a {
        move |tokens: &[String]| {
            let ids = encode(tokens, vocab, max_len);
            let logits = self.victim_logits(&ids).expect("encoded ids are in range");
            softmax(&logits).expect("logit vector is never empty")
        }
    }

    /// One predicted label per slice reference.
    pub fn predict_references(&self, ids: &[usize]) -> Result<Vec<usize>> {
        self.check_ids(ids)?;
        (0..self.n_slices)
            .map(|i| {
                let (logits, _) =
                    head_forward(&self.embedding, ids, self.slice_range(i), &self.reference_head);
                let probs = softmax(&logits)?;
                Ok(argmax(&probs))
            })
            .collect()
    }

    /// Reference accuracy of slice `i` over a dataset.
    pub fn reference_accuracy(
        &self,
        slice: usize,
        data: &[Example],
        vocab: &Vocabulary,
        max_len: usize,
    ) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let correct = data
            .iter()
            .filter(|ex| {
                let ids = encode(&ex.tokens, vocab, max_len);
                let (logits, _) =
                    head_forward(&self.embedding, &ids, self.slice_range(slice), &self.reference_head);
                argmax(&softmax(&logits).unwrap()) == ex.label
            })
            .count();
        correct as f64 / data.len() as f64
    }

    fn check_ids(&self, ids: &[usize]) -> Result<()> {
        if let Some(&bad) = ids.iter().find(|&&id| id >= self.vocab_size()) {
            return Err(Error::invalid(format!(
                "token id {bad} out of range for vocabulary of {}",
                self.vocab_size()
            )));
        }
        Ok(())
    }
}

/// Joint training: per example the total loss is the victim's cross-entropy
/// plus the sum of the N reference cross-entropies (unweighted); every term
/// backpropagates into the shared embedding. Deterministic for a fixed seed.
/// Returns the ensemble and the per-epoch mean total loss.
pub fn joint_train(
    vocab: &Vocabulary,
    data: &[Example],
    num_classes: usize,
    arch: &ArchConfig,
    n_slices: usize,
    cfg: &TrainConfig,
) -> Result<(ReferenceEnsemble, Vec<f64>)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("joint_train on empty dataset"));
    }
    if let Some(bad) = data.iter().find(|ex| ex.label >= num_classes) {
        return Err(Error::invalid(format!(
            "label {} out of range for {num_classes} classes",
            bad.label
        )));
    }
    let mut ens = ReferenceEnsemble::init(vocab.len(), num_classes, arch, n_slices, cfg.seed)?;
    let encoded: Vec<Vec<usize>> = data
        .iter()
        .map(|ex| encode(&ex.tokens, vocab, cfg.max_len))
        .collect();
    let d = ens.embed_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut victim_grads = ens.victim_head.zeros_like();
            let mut ref_grads = ens.reference_head.zeros_like();
            let mut demb = EmbeddingGrads::new(d);
            for &i in batch {
                let ids = &encoded[i];
                let label = data[i].label;
                // Victim term.
                let (logits, cache) = head_forward(&ens.embedding, ids, 0..d, &ens.victim_head);
                let probs = softmax(&logits)?;
                let (loss, dlogits) = crate::numerics::cross_entropy(&probs, label)?;
                epoch_loss += loss;
                head_backward(
                    &ens.embedding,
                    ids,
                    0..d,
                    &ens.victim_head,
                    &cache,
                    &dlogits,
                    &mut victim_grads,
                    &mut demb,
                );
                // Reference terms; the head (and its gradient) is shared.
                for s in 0..n_slices {
                    let range = ens.slice_range(s);
                    let (logits, cache) =
                        head_forward(&ens.embedding, ids, range.clone(), &ens.reference_head);
                    let probs = softmax(&logits)?;
                    let (loss, dlogits) = crate::numerics::cross_entropy(&probs, label)?;
                    epoch_loss += loss;
                    head_backward(
                        &ens.embedding,
                        ids,
                        range,
                        &ens.reference_head,
                        &cache,
                        &dlogits,
                        &mut ref_grads,
                        &mut demb,
                    );
                }
            }
            let scale = 1.0 / batch.len() as f64;
            victim_grads.scale(scale);
            ref_grads.scale(scale);
            demb.scale(scale);
            ens.victim_head.sgd_apply(&victim_grads, cfg.lr)?;
            ens.reference_head.sgd_apply(&ref_grads, cfg.lr)?;
            demb.apply(&mut ens.embedding, cfg.lr);
        }
        history.push(epoch_loss / data.len() as f64);
    }
    Ok((ens, history))
}

/// N independently trained full-width models (ablation reference set).
#[derive(Debug, Clone, PartialEq)]
pub struct StmEnsemble {
    pub models: Vec<ModelParams>,
}

impl StmEnsemble {
    pub fn n_models(&self) -> usize {
        self.models.len()
    }

    pub fn predict_references(&self, ids: &[usize]) -> Result<Vec<usize>> {
        self.models
            .iter()
            .map(|m| Ok(crate::models::predict_ids(m, ids)?.0))
            .collect()
    }
}

/// Train `n` standard models independently with seeds `cfg.seed + 0..n`.
pub fn train_stm(
    vocab: &Vocabulary,
    data: &[Example],
    num_classes: usize,
    arch: &ArchConfig,
    n: usize,
    cfg: &TrainConfig,
) -> Result<StmEnsemble> {
    if n < 2 {
        return Err(Error::invalid(format!(
            "ensemble needs at least 2 reference models, got {n}"
        )));
    }
    let mut models = Vec::with_capacity(n);
    for i in 0..n {
        let seed = cfg.seed + i as u64;
        let mut model = ModelParams::init(vocab.len(), num_classes, arch, seed);
        let model_cfg = TrainConfig { seed, ..*cfg };
        crate::models::train(&mut model, data, vocab, &model_cfg)?;
        models.push(model);
    }
    Ok(StmEnsemble { models })
}

/// Anything that can produce a Verdict for a raw text.
pub trait Detector {
    fn detect(&self, text: &str, vocab: &Vocabulary, max_len: usize) -> Verdict;
}

impl Detector for ReferenceEnsemble {
    fn detect(&self, text: &str, vocab: &Vocabulary, max_len: usize) -> Verdict {
        let ids = encode(&tokenize(text), vocab, max_len);
        let (victim_label, _) = self.victim_predict_ids(&ids).expect("encoded ids are in range");
        let reference_labels = self.predict_references(&ids).expect("encoded ids are in range");
        Verdict::from_labels(victim_label, reference_labels, self.victim_votes)
    }
}

/// STM detector: votes come from the independent models, the victim label
/// from whichever victim the detection set was built against.
pub struct StmDetector<'a> {
    pub victim: VictimHandle<'a>,
    pub ensemble: &'a StmEnsemble,
}

/// A victim classifier, standalone or embedded in a jointly trained ensemble.
#[derive(Clone, Copy)]
pub enum VictimHandle<'a> {
    Model(&'a ModelParams),
    Joint(&'a ReferenceEnsemble),
}

impl VictimHandle<'_> {
    pub fn predict_ids(&self, ids: &[usize]) -> Result<(usize, Vec<f64>)> {
        match self {
            VictimHandle::Model(m) => crate::models::predict_ids(m, ids),
            VictimHandle::Joint(e) => e.victim_predict_ids(ids),
        }
    }

    pub fn predict(&self, text: &str, vocab: &Vocabulary, max_len: usize) -> (usize, Vec<f64>) {
        let ids = encode(&tokenize(text), vocab, max_len);
        self.predict_ids(&ids).expect("encoded ids are in range")
    }

    pub fn predict_tokens_fn<'a>(
        &'a self,
        vocab: &'a Vocabulary,
        max_len: usize,
    ) -> impl Fn(&[String]) -> Vec<f64> + 'a {
        move |tokens: &[String]| {
            let ids = encode(tokens, vocab, max_len);
            let (_, probs) = self.predict_ids(&ids).expect("encoded ids are in range");
            probs
        }
    }
}

impl Detector for StmDetector<'_> {
    fn detect(&self, text: &str, vocab: &Vocabulary, max_len: usize) -> Verdict {
        let ids = encode(&tokenize(text), vocab, max_len);
        let (victim_label, _) = self.victim.predict_ids(&ids).expect("encoded ids are in range");
        let reference_labels = self
            .ensemble
            .predict_references(&ids)
            .expect("encoded ids are in range");
        Verdict::from_labels(victim_label, reference_labels, false)
    }
}
