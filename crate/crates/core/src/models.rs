//! Victim text classifiers: an embedding layer feeding either a mean-pool MLP
//! head or a 1-D convolutional head, trained with minibatch SGD.
//!
//! Forward and backward passes are parameterized by an embedding column range
//! so the ensemble layer can run the same heads on embedding slices.

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{
    affine_backward, affine_forward, argmax, conv_maxpool_backward, conv_maxpool_forward,
    embed_mean_backward, embed_mean_forward, relu_backward, relu_forward, softmax, ConvCache,
    EmbeddingGrads, Tensor2,
};
use crate::textcore::{encode, tokenize, Example, Vocabulary, PAD_ID};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    MeanPool,
    Cnn,
}

impl std::fmt::Display for HeadKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HeadKind::MeanPool => write!(f, "meanpool"),
            HeadKind::Cnn => write!(f, "cnn"),
        }
    }
}

impl std::str::FromStr for HeadKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "meanpool" | "mean-pool" => Ok(HeadKind::MeanPool),
            "cnn" => Ok(HeadKind::Cnn),
            other => Err(Error::invalid(format!("unknown head kind '{other}'"))),
        }
    }
}

/// Mean-pool head: pooled embedding -> hidden (ReLU) -> logits.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpHead {
    pub w1: Tensor2,
    pub b1: Tensor2,
    pub w2: Tensor2,
    pub b2: Tensor2,
}

/// Convolutional head: conv over token embeddings (ReLU), max-pool over time,
/// hidden (ReLU), logits. `filters` is (kernel * input_width) x n_filters.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnHead {
    pub kernel: usize,
    pub filters: Tensor2,
    pub conv_bias: Tensor2,
    pub w1: Tensor2,
    pub b1: Tensor2,
    pub w2: Tensor2,
    pub b2: Tensor2,
}

#[derive(Debug, Clone, PartialEq)]
pub enum HeadParams {
    MeanPool(MlpHead),
    Cnn(CnnHead),
}

impl HeadParams {
    pub fn kind(&self) -> HeadKind {
        match self {
            HeadParams::MeanPool(_) => HeadKind::MeanPool,
            HeadParams::Cnn(_) => HeadKind::Cnn,
        }
    }

    /// Width of the embedding slice this head consumes.
    pub fn input_width(&self) -> usize {
        match self {
            HeadParams::MeanPool(h) => h.w1.rows(),
            HeadParams::Cnn(h) => h.filters.rows() / h.kernel,
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            HeadParams::MeanPool(h) => h.w2.cols(),
            HeadParams::Cnn(h) => h.w2.cols(),
        }
    }

    pub(crate) fn zeros_like(&self) -> HeadParams {
        match self {
            HeadParams::MeanPool(h) => HeadParams::MeanPool(MlpHead {
                w1: Tensor2::zeros(h.w1.rows(), h.w1.cols()),
                b1: Tensor2::zeros(1, h.b1.cols()),
                w2: Tensor2::zeros(h.w2.rows(), h.w2.cols()),
                b2: Tensor2::zeros(1, h.b2.cols()),
            }),
            HeadParams::Cnn(h) => HeadParams::Cnn(CnnHead {
                kernel: h.kernel,
                filters: Tensor2::zeros(h.filters.rows(), h.filters.cols()),
                conv_bias: Tensor2::zeros(1, h.conv_bias.cols()),
                w1: Tensor2::zeros(h.w1.rows(), h.w1.cols()),
                b1: Tensor2::zeros(1, h.b1.cols()),
                w2: Tensor2::zeros(h.w2.rows(), h.w2.cols()),
                b2: Tensor2::zeros(1, h.b2.cols()),
            }),
        }
    }

    pub(crate) fn tensors(&self) -> Vec<&Tensor2> {
        match self {
            HeadParams::MeanPool(h) => vec![&h.w1, &h.b1, &h.w2, &h.b2],
            HeadParams::Cnn(h) => {
                vec![&h.filters, &h.conv_bias, &h.w1, &h.b1, &h.w2, &h.b2]
            }
        }
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut Tensor2> {
        match self {
            HeadParams::MeanPool(h) => vec![&mut h.w1, &mut h.b1, &mut h.w2, &mut h.b2],
            HeadParams::Cnn(h) => vec![
                &mut h.filters,
                &mut h.conv_bias,
                &mut h.w1,
                &mut h.b1,
                &mut h.w2,
                &mut h.b2,
            ],
        }
    }

    /// `self -= lr * grads`, tensor by tensor.
    pub(crate) fn sgd_apply(&mut self, grads: &HeadParams, lr: f64) -> Result<()> {
        for (p, g) in self.tensors_mut().into_iter().zip(grads.tensors()) {
            crate::numerics::sgd_step(p, g, lr)?;
        }
        Ok(())
    }

    pub(crate) fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            for v in t.data_mut() {
                *v *= factor;
            }
        }
    }
}

/// Architecture hyperparameters shared by victims and ensembles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArchConfig {
    pub head: HeadKind,
    pub embed_dim: usize,
    pub hidden: usize,
    pub filters: usize,
    pub kernel: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            head: HeadKind::MeanPool,
            embed_dim: 300,
            hidden: 100,
            filters: 128,
            kernel: 3,
        }
    }
}

/// Training hyperparameters. `lr == 0` is accepted (useful as a no-op probe).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub max_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 32,
            lr: 0.05,
            seed: 0,
            max_len: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if self.batch_size < 1 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::invalid("lr must be finite and >= 0"));
        }
        if self.max_len < 1 {
            return Err(Error::invalid("max_len must be >= 1"));
        }
        Ok(())
    }
}

/// A victim classifier: embedding matrix plus one head.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub embedding: Tensor2,
    pub head: HeadParams,
    pub num_classes: usize,
}

impl ModelParams {
    /// Seeded initialization: uniform(-0.1, 0.1) embeddings, Xavier-style
    /// scaled uniform head weights, zero biases.
    pub fn init(vocab_size: usize, num_classes: usize, arch: &ArchConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut embedding = Tensor2::zeros(vocab_size, arch.embed_dim);
        embedding.fill_uniform(&mut rng, 0.1);
        let head = init_head(arch, arch.embed_dim, num_classes, &mut rng);
        ModelParams {
            embedding,
            head,
            num_classes,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.rows()
    }

    pub fn embed_dim(&self) -> usize {
        self.embedding.cols()
    }

    pub fn head_kind(&self) -> HeadKind {
        self.head.kind()
    }
}

pub(crate) fn init_head<R: Rng>(
    arch: &ArchConfig,
    input_width: usize,
    num_classes: usize,
    rng: &mut R,
) -> HeadParams {
    let xavier = |rows: usize, cols: usize, rng: &mut R| {
        let mut t = Tensor2::zeros(rows, cols);
        let scale = (6.0 / (rows + cols) as f64).sqrt();
        t.fill_uniform(rng, scale);
        t
    };
    match arch.head {
        HeadKind::MeanPool => HeadParams::MeanPool(MlpHead {
            w1: xavier(input_width, arch.hidden, rng),
            b1: Tensor2::zeros(1, arch.hidden),
            w2: xavier(arch.hidden, num_classes, rng),
            b2: Tensor2::zeros(1, num_classes),
        }),
        HeadKind::Cnn => HeadParams::Cnn(CnnHead {
            kernel: arch.kernel,
            filters: xavier(arch.kernel * input_width, arch.filters, rng),
            conv_bias: Tensor2::zeros(1, arch.filters),
            w1: xavier(arch.filters, arch.hidden, rng),
            b1: Tensor2::zeros(1, arch.hidden),
            w2: xavier(arch.hidden, num_classes, rng),
            b2: Tensor2::zeros(1, num_classes),
        }),
    }
}

pub(crate) enum HeadCache {
    MeanPool {
        pooled: Vec<f64>,
        n_real: usize,
        h_pre: Vec<f64>,
        h: Vec<f64>,
    },
    Cnn {
        conv: ConvCache,
        h_pre: Vec<f64>,
        h: Vec<f64>,
    },
}

/// Run a head on the embedding columns `cols` of the rows selected by `ids`.
pub(crate) fn head_forward(
    embedding: &Tensor2,
    ids: &[usize],
    cols: Range<usize>,
    head: &HeadParams,
) -> (Vec<f64>, HeadCache) {
    match head {
        HeadParams::MeanPool(h) => {
            let (pooled, n_real) = embed_mean_forward(ids, embedding, PAD_ID, cols);
            let h_pre = affine_forward(&pooled, &h.w1, &h.b1);
            let hidden = relu_forward(&h_pre);
            let logits = affine_forward(&hidden, &h.w2, &h.b2);
            (
                logits,
                HeadCache::MeanPool {
                    pooled,
                    n_real,
                    h_pre,
                    h: hidden,
                },
            )
        }
        HeadParams::Cnn(h) => {
            let conv =
                conv_maxpool_forward(ids, embedding, PAD_ID, cols, h.kernel, &h.filters, &h.conv_bias);
            let h_pre = affine_forward(&conv.pooled, &h.w1, &h.b1);
            let hidden = relu_forward(&h_pre);
            let logits = affine_forward(&hidden, &h.w2, &h.b2);
            (
                logits,
                HeadCache::Cnn {
                    conv,
                    h_pre,
                    h: hidden,
                },
            )
        }
    }
}

/// Backpropagate `dlogits` through a head, accumulating into `head_grads`
/// (same shapes as `head`) and the shared embedding gradients.
pub(crate) fn head_backward(
    embedding: &Tensor2,
    ids: &[usize],
    cols: Range<usize>,
    head: &HeadParams,
    cache: &HeadCache,
    dlogits: &[f64],
    head_grads: &mut HeadParams,
    demb: &mut EmbeddingGrads,
) {
    match (head, cache, head_grads) {
        (
            HeadParams::MeanPool(h),
            HeadCache::MeanPool {
                pooled,
                n_real,
                h_pre,
                h: hidden,
            },
            HeadParams::MeanPool(g),
        ) => {
            let dh = affine_backward(hidden, &h.w2, dlogits, &mut g.w2, &mut g.b2);
            let dh_pre = relu_backward(h_pre, &dh);
            let dpooled = affine_backward(pooled, &h.w1, &dh_pre, &mut g.w1, &mut g.b1);
            embed_mean_backward(ids, PAD_ID, cols, *n_real, &dpooled, demb);
        }
        (
            HeadParams::Cnn(h),
            HeadCache::Cnn {
                conv,
                h_pre,
                h: hidden,
            },
            HeadParams::Cnn(g),
        ) => {
            let dh = affine_backward(hidden, &h.w2, dlogits, &mut g.w2, &mut g.b2);
            let dh_pre = relu_backward(h_pre, &dh);
            let dpooled = affine_backward(&conv.pooled, &h.w1, &dh_pre, &mut g.w1, &mut g.b1);
            conv_maxpool_backward(
                ids,
                embedding,
                cols,
                h.kernel,
                &h.filters,
                conv,
                &dpooled,
                &mut g.filters,
                &mut g.conv_bias,
                demb,
            );
        }
        _ => unreachable!("head/cache/grads variant mismatch"),
    }
}

fn validate_ids(ids: &[usize], vocab_size: usize) -> Result<()> {
    if let Some(&bad) = ids.iter().find(|&&id| id >= vocab_size) {
        return Err(Error::invalid(format!(
            "token id {bad} out of range for vocabulary of {vocab_size}"
        )));
    }
    Ok(())
}

/// Logits for an encoded input.
pub fn forward(model: &ModelParams, ids: &[usize]) -> Result<Vec<f64>> {
    validate_ids(ids, model.vocab_size())?;
    let (logits, _) = head_forward(&model.embedding, ids, 0..model.embed_dim(), &model.head);
    Ok(logits)
}

/// Cross-entropy loss and gradients for one example.
pub(crate) fn loss_and_grads(
    model: &ModelParams,
    ids: &[usize],
    label: usize,
    head_grads: &mut HeadParams,
    demb: &mut EmbeddingGrads,
) -> Result<f64> {
    let cols = 0..model.embed_dim();
    let (logits, cache) = head_forward(&model.embedding, ids, cols.clone(), &model.head);
    let probs = softmax(&logits)?;
    let (loss, dlogits) = cross_entropy_checked(&probs, label)?;
    head_backward(
        &model.embedding,
        ids,
        cols,
        &model.head,
        &cache,
        &dlogits,
        head_grads,
        demb,
    );
    Ok(loss)
}

fn cross_entropy_checked(probs: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    crate::numerics::cross_entropy(probs, label)
}

/// Minibatch SGD training. Deterministic for a fixed seed: seeded shuffling,
/// seeded init (the caller controls init), fixed accumulation order.
/// Returns the per-epoch mean loss history.
pub fn train(
    model: &mut ModelParams,
    data: &[Example],
    vocab: &Vocabulary,
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("train on empty dataset"));
    }
    if let Some(bad) = data.iter().find(|ex| ex.label >= model.num_classes) {
        return Err(Error::invalid(format!(
            "label {} out of range for {} classes",
            bad.label, model.num_classes
        )));
    }
    let encoded: Vec<Vec<usize>> = data
        .iter()
        .map(|ex| encode(&ex.tokens, vocab, cfg.max_len))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut head_grads = model.head.zeros_like();
            let mut demb = EmbeddingGrads::new(model.embed_dim());
            for &i in batch {
                epoch_loss +=
                    loss_and_grads(model, &encoded[i], data[i].label, &mut head_grads, &mut demb)?;
            }
            let scale = 1.0 / batch.len() as f64;
            head_grads.scale(scale);
            demb.scale(scale);
            model.head.sgd_apply(&head_grads, cfg.lr)?;
            demb.apply(&mut model.embedding, cfg.lr);
        }
        history.push(epoch_loss / data.len() as f64);
    }
    Ok(history)
}

/// Predicted label (argmax, ties toward the smaller class index) and the
/// softmax probability vector for a raw text.
pub fn predict(
    model: &ModelParams,
    text: &str,
    vocab: &Vocabulary,
    max_len: usize,
) -> (usize, Vec<f64>) {
    let ids = encode(&tokenize(text), vocab, max_len);
    predict_ids(model, &ids).expect("encoded ids are always in range")
}

/// As `predict`, for already-encoded ids.
pub fn predict_ids(model: &ModelParams, ids: &[usize]) -> Result<(usize, Vec<f64>)> {
    let logits = forward(model, ids)?;
    let probs = softmax(&logits)?;
    Ok((argmax(&probs), probs))
}

/// Black-box prediction closure over token lists; this is the only surface
/// the attack suite sees.
pub fn predict_fn<'a>(
    model: &'a ModelParams,
    vocab: &'a Vocabulary,
    max_len: usize,
) -> impl Fn(&[String]) -> Vec<f64> + 'a {
    move |tokens: &[String]| {
        let ids = encode(tokens, vocab, max_len);
        let logits = forward(model, &ids).expect("encoded ids are always in range");
        softmax(&logits).expect("logit vector is never empty")
    }
}

/// Training accuracy of a model over a dataset.
pub fn accuracy(model: &ModelParams, data: &[Example], vocab: &Vocabulary, max_len: usize) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let correct = data
        .iter()
        .filter(|ex| predict(model, &ex.text, vocab, max_len).0 == ex.label)
        .count();
    correct as f64 / data.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;
    use crate::textcore::build_vocab;

    fn toy_separable() -> (Vec<Example>, Vocabulary) {
        // One token fully determines the label.
        let mut data = Vec::new();
        let fillers = ["the", "a", "this", "that", "one"];
        for i in 0..10 {
            let f1 = fillers[i % fillers.len()];
            let f2 = fillers[(i + 2) % fillers.len()];
            data.push(Example::new(format!("{f1} plus {f2} item"), 1));
            data.push(Example::new(format!("{f1} minus {f2} item"), 0));
        }
        let vocab = build_vocab(&data, 1).unwrap();
        (data, vocab)
    }

    fn small_arch(head: HeadKind) -> ArchConfig {
        ArchConfig {
            head,
            embed_dim: 12,
            hidden: 8,
            filters: 6,
            kernel: 2,
        }
    }

    #[test]
    fn all_pad_meanpool_logits_are_bias_chain() {
        let arch = small_arch(HeadKind::MeanPool);
        let model = ModelParams::init(5, 2, &arch, 1);
        let logits = forward(&model, &[0, 0, 0, 0]).unwrap();
        let HeadParams::MeanPool(h) = &model.head else {
            unreachable!()
        };
        let zero = vec![0.0; arch.embed_dim];
        let hidden = relu_forward(&affine_forward(&zero, &h.w1, &h.b1));
        let expect = affine_forward(&hidden, &h.w2, &h.b2);
        assert_eq!(logits, expect);
    }

    #[test]
    fn forward_is_deterministic() {
        let arch = small_arch(HeadKind::Cnn);
        let model = ModelParams::init(7, 2, &arch, 2);
        let ids = vec![2, 3, 4, 0];
        assert_eq!(forward(&model, &ids).unwrap(), forward(&model, &ids).unwrap());
    }

    #[test]
    fn forward_rejects_out_of_range_id() {
        let model = ModelParams::init(4, 2, &small_arch(HeadKind::MeanPool), 0);
        assert!(matches!(
            forward(&model, &[9]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn model_gradients_pass_grad_check_both_heads() {
        for head in [HeadKind::MeanPool, HeadKind::Cnn] {
            let arch = small_arch(head);
            let model = ModelParams::init(9, 3, &arch, 4);
            let ids = vec![2, 5, 3, 8];
            let label = 1;
            let mut head_grads = model.head.zeros_like();
            let mut demb = EmbeddingGrads::new(arch.embed_dim);
            loss_and_grads(&model, &ids, label, &mut head_grads, &mut demb).unwrap();

            // Embedding gradient.
            let m2 = model.clone();
            let ids2 = ids.clone();
            let report = grad_check(
                |e| {
                    let probe = ModelParams {
                        embedding: e.clone(),
                        head: m2.head.clone(),
                        num_classes: m2.num_classes,
                    };
                    let logits = forward(&probe, &ids2).unwrap();
                    let probs = softmax(&logits).unwrap();
                    crate::numerics::cross_entropy(&probs, label).unwrap().0
                },
                &model.embedding,
                &demb.to_dense(9),
                1e-4,
            )
            .unwrap();
            assert!(
                report.max_rel_error < 1e-4,
                "{head:?} embedding rel error {}",
                report.max_rel_error
            );

            // Every head tensor.
            for (ti, (param, grad)) in model
                .head
                .tensors()
                .iter()
                .zip(head_grads.tensors())
                .enumerate()
            {
                let m3 = model.clone();
                let ids3 = ids.clone();
                let report = grad_check(
                    |t| {
                        let mut probe = m3.clone();
                        *probe.head.tensors_mut()[ti] = t.clone();
                        let logits = forward(&probe, &ids3).unwrap();
                        let probs = softmax(&logits).unwrap();
                        crate::numerics::cross_entropy(&probs, label).unwrap().0
                    },
                    param,
                    grad,
                    1e-4,
                )
                .unwrap();
                assert!(
                    report.max_rel_error < 1e-4,
                    "{head:?} tensor {ti} rel error {}",
                    report.max_rel_error
                );
            }
        }
    }

    #[test]
    fn training_reaches_full_accuracy_on_separable_set() {
        let (data, vocab) = toy_separable();
        let arch = small_arch(HeadKind::MeanPool);
        let mut model = ModelParams::init(vocab.len(), 2, &arch, 7);
        let cfg = TrainConfig {
            epochs: 50,
            batch_size: 4,
            lr: 0.5,
            seed: 7,
            max_len: 8,
        };
        let history = train(&mut model, &data, &vocab, &cfg).unwrap();
        assert_eq!(history.len(), 50);
        assert_eq!(accuracy(&model, &data, &vocab, 8), 1.0);
        // Loss settles: non-increasing after the early epochs.
        for w in history[5..].windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "loss rose late in training: {w:?}");
        }
    }

    #[test]
    fn zero_lr_changes_nothing() {
        let (data, vocab) = toy_separable();
        let arch = small_arch(HeadKind::MeanPool);
        let mut model = ModelParams::init(vocab.len(), 2, &arch, 3);
        let before = model.clone();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 4,
            lr: 0.0,
            seed: 3,
            max_len: 8,
        };
        let history = train(&mut model, &data, &vocab, &cfg).unwrap();
        assert_eq!(model, before);
        for w in history.windows(2) {
            assert!((w[0] - w[1]).abs() < 1e-12, "history not flat: {history:?}");
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let (data, vocab) = toy_separable();
        let arch = small_arch(HeadKind::Cnn);
        let cfg = TrainConfig {
            epochs: 4,
            batch_size: 4,
            lr: 0.1,
            seed: 11,
            max_len: 8,
        };
        let mut a = ModelParams::init(vocab.len(), 2, &arch, 11);
        let mut b = ModelParams::init(vocab.len(), 2, &arch, 11);
        train(&mut a, &data, &vocab, &cfg).unwrap();
        train(&mut b, &data, &vocab, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn predict_ties_break_to_smaller_index() {
        assert_eq!(argmax(&[2.0, 1.0]), 0);
        assert_eq!(argmax(&[1.0, 1.0]), 0);
        assert_eq!(argmax(&[0.2, 0.5, 0.5]), 1);
    }

    #[test]
    fn predict_label_matches_probability_argmax() {
        let (data, vocab) = toy_separable();
        let model = ModelParams::init(vocab.len(), 2, &small_arch(HeadKind::MeanPool), 9);
        for ex in &data {
            let (label, probs) = predict(&model, &ex.text, &vocab, 8);
            assert_eq!(label, argmax(&probs));
        }
    }

    #[test]
    fn meanpool_logits_invariant_to_trailing_pad() {
        let (data, vocab) = toy_separable();
        let model = ModelParams::init(vocab.len(), 2, &small_arch(HeadKind::MeanPool), 13);
        let ids = encode(&data[0].tokens, &vocab, 8);
        let mut padded = ids.clone();
        padded.extend([PAD_ID; 6]);
        let a = forward(&model, &ids).unwrap();
        let b = forward(&model, &padded).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn empty_dataset_rejected() {
        let (_, vocab) = toy_separable();
        let mut model = ModelParams::init(vocab.len(), 2, &small_arch(HeadKind::MeanPool), 0);
        assert!(matches!(
            train(&mut model, &[], &vocab, &TrainConfig::default()),
            Err(Error::InvalidArgument(_))
        ));
    }
}
