//! Minimal dense numerics: row-major matrices, the layer primitives used by
//! the text classifiers (affine, ReLU, embedding mean-pool, 1-D convolution
//! with masked max-pool over time), softmax/cross-entropy with gradients,
//! plain SGD, and a central finite-difference gradient checker.
//!
//! Everything is f64. No autodiff: each layer exposes an explicit
//! forward/backward pair, and `grad_check` is the validation harness that
//! keeps the hand-written backwards honest.

use std::ops::Range;

use crate::error::{Error, Result};

/// Dense row-major matrix of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor2 {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Build from row-major data; errors on length mismatch or non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "tensor data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("tensor contains non-finite entries".into()));
        }
        Ok(Tensor2 { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Fill with uniform(-scale, scale) draws from `rng`.
    pub fn fill_uniform<R: rand::Rng>(&mut self, rng: &mut R, scale: f64) {
        for v in &mut self.data {
            *v = rng.random_range(-scale..scale);
        }
    }
}

/// Outcome of a finite-difference gradient comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// Largest per-coordinate relative error.
    pub max_rel_error: f64,
    /// Flat (row-major) index of the worst coordinate.
    pub worst_coordinate: usize,
}

/// Numerically stable softmax (shift by max).
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::invalid("softmax of empty logit vector"));
    }
    if !logits.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric("softmax input contains non-finite logits".into()));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Cross-entropy loss of a probability vector against a class label.
///
/// Returns the loss and the gradient w.r.t. the pre-softmax logits,
/// `probs - onehot(label)`. Probabilities are clamped at 1e-12 before the log.
pub fn cross_entropy(probs: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= probs.len() {
        return Err(Error::invalid(format!(
            "label {} out of range for {} classes",
            label,
            probs.len()
        )));
    }
    let loss = -probs[label].max(1e-12).ln();
    let mut dlogits = probs.to_vec();
    dlogits[label] -= 1.0;
    Ok((loss, dlogits))
}

/// One plain SGD step: `w <- w - lr * g`, elementwise, in place.
pub fn sgd_step(params: &mut Tensor2, grads: &Tensor2, lr: f64) -> Result<()> {
    if params.shape() != grads.shape() {
        return Err(Error::invalid(format!(
            "sgd_step shape mismatch: {:?} vs {:?}",
            params.shape(),
            grads.shape()
        )));
    }
    for (w, g) in params.data.iter_mut().zip(grads.data.iter()) {
        *w -= lr * g;
    }
    Ok(())
}

/// Compare an analytic gradient against central finite differences of `f`.
///
/// Per-coordinate relative error uses denominator `max(|a|, |n|, 1e-8)`.
pub fn grad_check<F>(
    mut f: F,
    point: &Tensor2,
    analytic_grad: &Tensor2,
    eps: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&Tensor2) -> f64,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::invalid(format!("grad_check eps {eps} not in (0, 1e-2]")));
    }
    if point.shape() != analytic_grad.shape() {
        return Err(Error::invalid("grad_check shape mismatch"));
    }
    let mut max_rel_error = 0.0f64;
    let mut worst_coordinate = 0usize;
    let mut x = point.clone();
    for i in 0..x.data.len() {
        let orig = x.data[i];
        x.data[i] = orig + eps;
        let f_plus = f(&x);
        x.data[i] = orig - eps;
        let f_minus = f(&x);
        x.data[i] = orig;
        if !f_plus.is_finite() || !f_minus.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite function value at coordinate {i}"
            )));
        }
        let numeric = (f_plus - f_minus) / (2.0 * eps);
        let analytic = analytic_grad.data[i];
        let denom = analytic.abs().max(numeric.abs()).max(1e-8);
        let rel = (analytic - numeric).abs() / denom;
        if rel > max_rel_error {
            max_rel_error = rel;
            worst_coordinate = i;
        }
    }
    Ok(GradCheckReport {
        max_rel_error,
        worst_coordinate,
    })
}

// ---------------------------------------------------------------------------
// Layer primitives. All take explicit inputs and return explicit gradients so
// the model code stays a thin composition layer.
// ---------------------------------------------------------------------------

/// y = x W + b, with x a row vector of length `w.rows()` and b of shape 1 x cols.
pub fn affine_forward(x: &[f64], w: &Tensor2, b: &Tensor2) -> Vec<f64> {
    assert_eq!(x.len(), w.rows(), "affine input width mismatch");
    assert_eq!(b.cols(), w.cols(), "affine bias width mismatch");
    let mut y = b.row(0).to_vec();
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let wrow = w.row(i);
        for (yj, &wij) in y.iter_mut().zip(wrow.iter()) {
            *yj += xi * wij;
        }
    }
    y
}

/// Backward of `affine_forward`: returns dx and accumulates dW, db.
pub fn affine_backward(
    x: &[f64],
    w: &Tensor2,
    dy: &[f64],
    dw: &mut Tensor2,
    db: &mut Tensor2,
) -> Vec<f64> {
    assert_eq!(dy.len(), w.cols());
    let mut dx = vec![0.0; x.len()];
    for (i, &xi) in x.iter().enumerate() {
        let wrow = w.row(i);
        let dwrow = dw.row_mut(i);
        let mut acc = 0.0;
        for (j, &dyj) in dy.iter().enumerate() {
            acc += wrow[j] * dyj;
            dwrow[j] += xi * dyj;
        }
        dx[i] = acc;
    }
    for (dbj, &dyj) in db.row_mut(0).iter_mut().zip(dy.iter()) {
        *dbj += dyj;
    }
    dx
}

pub fn relu_forward(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

/// dx = dy where the pre-activation was > 0, else 0.
pub fn relu_backward(pre: &[f64], dy: &[f64]) -> Vec<f64> {
    pre.iter()
        .zip(dy.iter())
        .map(|(&p, &d)| if p > 0.0 { d } else { 0.0 })
        .collect()
}

/// Mean of embedding rows over non-PAD positions, restricted to `cols`.
///
/// PAD positions are excluded from the denominator; an all-PAD sequence pools
/// to the zero vector. Returns (pooled, n_real).
pub fn embed_mean_forward(
    ids: &[usize],
    embedding: &Tensor2,
    pad_id: usize,
    cols: Range<usize>,
) -> (Vec<f64>, usize) {
    let width = cols.end - cols.start;
    let mut pooled = vec![0.0; width];
    let mut n_real = 0usize;
    for &id in ids {
        if id == pad_id {
            continue;
        }
        n_real += 1;
        let row = embedding.row(id);
        for (p, &e) in pooled.iter_mut().zip(row[cols.start..cols.end].iter()) {
            *p += e;
        }
    }
    if n_real > 0 {
        let inv = 1.0 / n_real as f64;
        for p in &mut pooled {
            *p *= inv;
        }
    }
    (pooled, n_real)
}

/// Backward of `embed_mean_forward`: accumulate d(pooled) into embedding-row
/// gradients. `demb` rows are full embedding width; only `cols` is touched.
pub fn embed_mean_backward(
    ids: &[usize],
    pad_id: usize,
    cols: Range<usize>,
    n_real: usize,
    dpooled: &[f64],
    demb: &mut EmbeddingGrads,
) {
    if n_real == 0 {
        return;
    }
    let inv = 1.0 / n_real as f64;
    for &id in ids {
        if id == pad_id {
            continue;
        }
        let row = demb.row_mut(id);
        for (slot, &d) in row[cols.start..cols.end].iter_mut().zip(dpooled.iter()) {
            *slot += d * inv;
        }
    }
}

/// Sparse embedding gradient: touched rows only, deterministic iteration order.
#[derive(Debug, Default)]
pub struct EmbeddingGrads {
    width: usize,
    rows: std::collections::BTreeMap<usize, Vec<f64>>,
}

impl EmbeddingGrads {
    pub fn new(width: usize) -> Self {
        EmbeddingGrads {
            width,
            rows: std::collections::BTreeMap::new(),
        }
    }

    pub fn row_mut(&mut self, id: usize) -> &mut [f64] {
        let width = self.width;
        self.rows.entry(id).or_insert_with(|| vec![0.0; width])
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.rows.iter().map(|(&id, v)| (id, v.as_slice()))
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.rows.values_mut() {
            for x in v {
                *x *= factor;
            }
        }
    }

    /// Apply an SGD step to the touched embedding rows.
    pub fn apply(&self, embedding: &mut Tensor2, lr: f64) {
        for (id, grad) in self.iter() {
            for (w, &g) in embedding.row_mut(id).iter_mut().zip(grad.iter()) {
                *w -= lr * g;
            }
        }
    }

    /// Densify into a full (vocab x width) tensor; used by the gradient checker.
    pub fn to_dense(&self, vocab: usize) -> Tensor2 {
        let mut out = Tensor2::zeros(vocab, self.width);
        for (id, grad) in self.iter() {
            out.row_mut(id).copy_from_slice(grad);
        }
        out
    }
}

/// Cached intermediates of one conv + masked max-pool pass.
#[derive(Debug, Clone)]
pub struct ConvCache {
    /// Pre-activation conv outputs, (n_positions x n_filters).
    pub pre: Tensor2,
    /// Window validity (no PAD inside), one flag per position.
    pub valid: Vec<bool>,
    /// Per-filter argmax position, None when no window is valid.
    pub argmax: Vec<Option<usize>>,
    /// Pooled features after ReLU + max, one per filter.
    pub pooled: Vec<f64>,
}

/// 1-D convolution over token embeddings with masked max-pool over time.
///
/// `filters` has shape (kernel * width) x n_filters; window t flattens the
/// embedding rows of positions t..t+kernel (restricted to `cols`). Windows
/// containing a PAD position are masked out of the max-pool. If no window is
/// valid the pooled vector is all zeros.
pub fn conv_maxpool_forward(
    ids: &[usize],
    embedding: &Tensor2,
    pad_id: usize,
    cols: Range<usize>,
    kernel: usize,
    filters: &Tensor2,
    conv_bias: &Tensor2,
) -> ConvCache {
    let width = cols.end - cols.start;
    assert_eq!(filters.rows(), kernel * width, "filter bank width mismatch");
    let n_filters = filters.cols();
    let n_pos = ids.len().saturating_sub(kernel.saturating_sub(1));
    let mut pre = Tensor2::zeros(n_pos, n_filters);
    let mut valid = vec![false; n_pos];
    for t in 0..n_pos {
        let window = &ids[t..t + kernel];
        if window.iter().any(|&id| id == pad_id) {
            continue;
        }
        valid[t] = true;
        let out = pre.row_mut(t);
        out.copy_from_slice(conv_bias.row(0));
        for (r, &id) in window.iter().enumerate() {
            let emb_row = &embedding.row(id)[cols.start..cols.end];
            for (j, &e) in emb_row.iter().enumerate() {
                if e == 0.0 {
                    continue;
                }
                let frow = filters.row(r * width + j);
                for (o, &fv) in out.iter_mut().zip(frow.iter()) {
                    *o += e * fv;
                }
            }
        }
    }
    // ReLU then max over valid positions; first argmax wins ties.
    let mut argmax = vec![None; n_filters];
    let mut pooled = vec![0.0; n_filters];
    for f in 0..n_filters {
        let mut best: Option<(usize, f64)> = None;
        for t in 0..n_pos {
            if !valid[t] {
                continue;
            }
            let v = pre.get(t, f).max(0.0);
            match best {
                Some((_, bv)) if v <= bv => {}
                _ => best = Some((t, v)),
            }
        }
        if let Some((t, v)) = best {
            argmax[f] = Some(t);
            pooled[f] = v;
        }
    }
    ConvCache {
        pre,
        valid,
        argmax,
        pooled,
    }
}

/// Backward of `conv_maxpool_forward` given d(pooled).
pub fn conv_maxpool_backward(
    ids: &[usize],
    embedding: &Tensor2,
    cols: Range<usize>,
    kernel: usize,
    filters: &Tensor2,
    cache: &ConvCache,
    dpooled: &[f64],
    dfilters: &mut Tensor2,
    dconv_bias: &mut Tensor2,
    demb: &mut EmbeddingGrads,
) {
    let width = cols.end - cols.start;
    for (f, &d) in dpooled.iter().enumerate() {
        let Some(t) = cache.argmax[f] else { continue };
        // ReLU gate at the winning position.
        if cache.pre.get(t, f) <= 0.0 || d == 0.0 {
            continue;
        }
        dconv_bias.row_mut(0)[f] += d;
        let window = &ids[t..t + kernel];
        for (r, &id) in window.iter().enumerate() {
            let emb_row = &embedding.row(id)[cols.start..cols.end];
            let drow = demb.row_mut(id);
            for j in 0..width {
                dfilters.row_mut(r * width + j)[f] += emb_row[j] * d;
                drow[cols.start + j] += filters.get(r * width + j, f) * d;
            }
        }
    }
}

/// Argmax with ties broken toward the smaller index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0usize;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softmax_symmetry_and_analytic_values() {
        let p = softmax(&[0.0, 0.0]).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
        let p = softmax(&[2.0f64.ln(), 0.0]).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_large_logits_do_not_overflow() {
        // Shift-by-max in extended precision: exp(0)/(exp(0)+exp(-1000)) == 1.0 in f64.
        let p = softmax(&[1000.0, 0.0]).unwrap();
        assert_eq!(p, vec![1.0, 0.0]);
        assert!(p.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn softmax_empty_is_invalid() {
        assert!(matches!(softmax(&[]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn cross_entropy_uniform_two_class() {
        let (loss, dlogits) = cross_entropy(&[0.5, 0.5], 0).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(dlogits, vec![-0.5, 0.5]);
    }

    #[test]
    fn cross_entropy_confident_correct() {
        let (loss, dlogits) = cross_entropy(&[1.0, 0.0], 0).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(dlogits, vec![0.0, 0.0]);
    }

    #[test]
    fn cross_entropy_label_out_of_range() {
        assert!(matches!(
            cross_entropy(&[0.5, 0.5], 2),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let logits = Tensor2::from_vec(1, 3, vec![0.3, -1.2, 0.7]).unwrap();
        let label = 2;
        let probs = softmax(logits.data()).unwrap();
        let (_, dlogits) = cross_entropy(&probs, label).unwrap();
        let analytic = Tensor2::from_vec(1, 3, dlogits).unwrap();
        let f = |x: &Tensor2| {
            let p = softmax(x.data()).unwrap();
            cross_entropy(&p, label).unwrap().0
        };
        let report = grad_check(f, &logits, &analytic, 1e-5).unwrap();
        assert!(report.max_rel_error < 1e-6, "rel error {}", report.max_rel_error);
    }

    #[test]
    fn sgd_single_entry() {
        let mut w = Tensor2::from_vec(1, 1, vec![1.0]).unwrap();
        let g = Tensor2::from_vec(1, 1, vec![0.5]).unwrap();
        sgd_step(&mut w, &g, 0.1).unwrap();
        assert_eq!(w.data(), &[0.95]);
    }

    #[test]
    fn sgd_zero_gradient_is_identity() {
        let mut w = Tensor2::from_vec(2, 2, vec![1.0, -2.0, 3.0, 0.25]).unwrap();
        let before = w.clone();
        let g = Tensor2::zeros(2, 2);
        sgd_step(&mut w, &g, 0.7).unwrap();
        assert_eq!(w, before);
    }

    #[test]
    fn sgd_two_steps_equal_summed_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut a = Tensor2::zeros(3, 4);
        a.fill_uniform(&mut rng, 1.0);
        let mut g1 = Tensor2::zeros(3, 4);
        g1.fill_uniform(&mut rng, 1.0);
        let mut g2 = Tensor2::zeros(3, 4);
        g2.fill_uniform(&mut rng, 1.0);

        let mut twice = a.clone();
        sgd_step(&mut twice, &g1, 0.05).unwrap();
        sgd_step(&mut twice, &g2, 0.05).unwrap();

        let sum = Tensor2::from_vec(
            3,
            4,
            g1.data().iter().zip(g2.data()).map(|(x, y)| x + y).collect(),
        )
        .unwrap();
        let mut once = a;
        sgd_step(&mut once, &sum, 0.05).unwrap();

        for (x, y) in twice.data().iter().zip(once.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn sgd_shape_mismatch_rejected() {
        let mut w = Tensor2::zeros(2, 2);
        let g = Tensor2::zeros(2, 3);
        assert!(matches!(
            sgd_step(&mut w, &g, 0.1),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn grad_check_quadratic() {
        let point = Tensor2::from_vec(1, 1, vec![3.0]).unwrap();
        let analytic = Tensor2::from_vec(1, 1, vec![6.0]).unwrap();
        let report = grad_check(|x| x.data()[0] * x.data()[0], &point, &analytic, 1e-4).unwrap();
        assert!(report.max_rel_error < 1e-8);
    }

    #[test]
    fn grad_check_flags_doubled_gradient() {
        // f(x)=x^2 at x=1: numeric 2, claimed analytic 4 -> |4-2|/max(4,2) = 0.5.
        let point = Tensor2::from_vec(1, 1, vec![1.0]).unwrap();
        let analytic = Tensor2::from_vec(1, 1, vec![4.0]).unwrap();
        let report = grad_check(|x| x.data()[0] * x.data()[0], &point, &analytic, 1e-4).unwrap();
        assert!((report.max_rel_error - 0.5).abs() < 1e-9);
        assert_eq!(report.worst_coordinate, 0);
    }

    #[test]
    fn grad_check_constant_function() {
        let point = Tensor2::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let analytic = Tensor2::zeros(2, 2);
        let report = grad_check(|_| 7.5, &point, &analytic, 1e-3).unwrap();
        assert!(report.max_rel_error < 1e-8);
    }

    #[test]
    fn grad_check_rejects_bad_eps() {
        let point = Tensor2::zeros(1, 1);
        let analytic = Tensor2::zeros(1, 1);
        assert!(grad_check(|_| 0.0, &point, &analytic, 0.0).is_err());
        assert!(grad_check(|_| 0.0, &point, &analytic, 0.5).is_err());
    }

    #[test]
    fn affine_gradients_pass_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut w = Tensor2::zeros(4, 3);
        w.fill_uniform(&mut rng, 0.5);
        let mut b = Tensor2::zeros(1, 3);
        b.fill_uniform(&mut rng, 0.5);
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        // Scalar objective: sum of squared outputs.
        let y = affine_forward(&x, &w, &b);
        let dy: Vec<f64> = y.iter().map(|&v| 2.0 * v).collect();
        let mut dw = Tensor2::zeros(4, 3);
        let mut db = Tensor2::zeros(1, 3);
        let dx = affine_backward(&x, &w, &dy, &mut dw, &mut db);

        let xs = x.clone();
        let b2 = b.clone();
        let report_w = grad_check(
            |wt| affine_forward(&xs, wt, &b2).iter().map(|v| v * v).sum(),
            &w,
            &dw,
            1e-5,
        )
        .unwrap();
        assert!(report_w.max_rel_error < 1e-6);

        let w2 = w.clone();
        let report_b = grad_check(
            |bt| affine_forward(&xs, &w2, bt).iter().map(|v| v * v).sum(),
            &b,
            &db,
            1e-5,
        )
        .unwrap();
        assert!(report_b.max_rel_error < 1e-6);

        let xt = Tensor2::from_vec(1, 4, x.clone()).unwrap();
        let dxt = Tensor2::from_vec(1, 4, dx).unwrap();
        let report_x = grad_check(
            |t| affine_forward(t.data(), &w2, &b2).iter().map(|v| v * v).sum(),
            &xt,
            &dxt,
            1e-5,
        )
        .unwrap();
        assert!(report_x.max_rel_error < 1e-6);
    }

    #[test]
    fn embed_mean_ignores_pad_and_backward_checks() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut emb = Tensor2::zeros(6, 4);
        emb.fill_uniform(&mut rng, 0.5);
        let ids = vec![2, 3, 0, 0]; // two real tokens, two PAD
        let (pooled, n_real) = embed_mean_forward(&ids, &emb, 0, 0..4);
        assert_eq!(n_real, 2);
        for j in 0..4 {
            let expect = (emb.get(2, j) + emb.get(3, j)) / 2.0;
            assert!((pooled[j] - expect).abs() < 1e-12);
        }

        let dpooled: Vec<f64> = pooled.iter().map(|&v| 2.0 * v).collect();
        let mut demb = EmbeddingGrads::new(4);
        embed_mean_backward(&ids, 0, 0..4, n_real, &dpooled, &mut demb);
        let dense = demb.to_dense(6);
        let ids2 = ids.clone();
        let report = grad_check(
            |e| {
                let (p, _) = embed_mean_forward(&ids2, e, 0, 0..4);
                p.iter().map(|v| v * v).sum()
            },
            &emb,
            &dense,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-6);
    }

    #[test]
    fn embed_mean_all_pad_pools_to_zero() {
        let emb = Tensor2::from_vec(2, 3, vec![1.0; 6]).unwrap();
        let (pooled, n_real) = embed_mean_forward(&[0, 0, 0], &emb, 0, 0..3);
        assert_eq!(n_real, 0);
        assert_eq!(pooled, vec![0.0; 3]);
    }

    #[test]
    fn conv_maxpool_masks_pad_windows_and_backward_checks() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let width = 3;
        let kernel = 2;
        let n_filters = 2;
        let mut emb = Tensor2::zeros(5, width);
        emb.fill_uniform(&mut rng, 0.6);
        let mut filters = Tensor2::zeros(kernel * width, n_filters);
        filters.fill_uniform(&mut rng, 0.6);
        let mut cbias = Tensor2::zeros(1, n_filters);
        cbias.fill_uniform(&mut rng, 0.3);

        let ids = vec![2, 3, 4, 0]; // last window (4, PAD) must be masked
        let cache = conv_maxpool_forward(&ids, &emb, 0, 0..width, kernel, &filters, &cbias);
        assert_eq!(cache.valid, vec![true, true, false]);

        let dpooled: Vec<f64> = cache.pooled.iter().map(|&v| 2.0 * v).collect();
        let mut dfilters = Tensor2::zeros(kernel * width, n_filters);
        let mut dcbias = Tensor2::zeros(1, n_filters);
        let mut demb = EmbeddingGrads::new(width);
        conv_maxpool_backward(
            &ids, &emb, 0..width, kernel, &filters, &cache, &dpooled, &mut dfilters, &mut dcbias,
            &mut demb,
        );

        let ids2 = ids.clone();
        let emb2 = emb.clone();
        let cb2 = cbias.clone();
        let report_f = grad_check(
            |ft| {
                conv_maxpool_forward(&ids2, &emb2, 0, 0..width, kernel, ft, &cb2)
                    .pooled
                    .iter()
                    .map(|v| v * v)
                    .sum()
            },
            &filters,
            &dfilters,
            1e-5,
        )
        .unwrap();
        assert!(report_f.max_rel_error < 1e-6, "filters: {}", report_f.max_rel_error);

        let f2 = filters.clone();
        let report_e = grad_check(
            |et| {
                conv_maxpool_forward(&ids2, et, 0, 0..width, kernel, &f2, &cb2)
                    .pooled
                    .iter()
                    .map(|v| v * v)
                    .sum()
            },
            &emb,
            &demb.to_dense(5),
            1e-5,
        )
        .unwrap();
        assert!(report_e.max_rel_error < 1e-6, "embedding: {}", report_e.max_rel_error);
    }

    #[test]
    fn conv_maxpool_no_valid_window_pools_zero() {
        let emb = Tensor2::from_vec(3, 2, vec![1.0; 6]).unwrap();
        let filters = Tensor2::zeros(4, 2);
        let cbias = Tensor2::zeros(1, 2);
        // Sequence shorter than the kernel once PADs are masked.
        let cache = conv_maxpool_forward(&[2, 0, 0], &emb, 0, 0..2, 2, &filters, &cbias);
        assert!(cache.argmax.iter().all(|a| a.is_none()));
        assert_eq!(cache.pooled, vec![0.0, 0.0]);
    }

    proptest! {
        #[test]
        fn softmax_is_a_distribution(v in proptest::collection::vec(-1e3..1e3f64, 1..12)) {
            let p = softmax(&v).unwrap();
            let sum: f64 = p.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
        }

        #[test]
        fn cross_entropy_nonnegative(v in proptest::collection::vec(-5.0..5.0f64, 2..6), label in 0usize..2) {
            let p = softmax(&v).unwrap();
            let (loss, _) = cross_entropy(&p, label % p.len()).unwrap();
            prop_assert!(loss >= 0.0);
        }
    }
}
