//! Binary checkpoints for models and ensembles.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "TRTD" | version u32 | file kind u8 | head kind u8
//! vocab hash   (u16 length + hex bytes)
//! dimension header (per file kind, u64 each)
//! parameters   (f64 LE, declared order)
//! crc32 u32    (over every preceding byte)
//! ```
//!
//! The vocabulary itself lives in a separate plain-text token-per-line file;
//! checkpoints store its SHA-256 so a model refuses a mismatched vocabulary
//! at load time.

use std::fs;
use std::path::Path;

use crate::ensemble::{ReferenceEnsemble, StmEnsemble};
use crate::error::{Error, Result};
use crate::models::{CnnHead, HeadKind, HeadParams, MlpHead, ModelParams};
use crate::numerics::Tensor2;
use crate::textcore::Vocabulary;

const MAGIC: &[u8; 4] = b"TRTD";
const VERSION: u32 = 1;

const KIND_MODEL: u8 = 0;
const KIND_TREATED: u8 = 1;
const KIND_STM: u8 = 2;

/// Any of the three checkpoint kinds, as written on disk.
#[derive(Debug, Clone)]
pub enum AnyCheckpoint {
    Model(ModelParams),
    Treated(ReferenceEnsemble),
    Stm(StmEnsemble),
}

/// Load a checkpoint of whatever kind the file declares.
pub fn load_any(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<AnyCheckpoint> {
    let kind = peek_kind(path.as_ref())?;
    match kind {
        KIND_MODEL => Ok(AnyCheckpoint::Model(load_model(path, vocab)?)),
        KIND_TREATED => Ok(AnyCheckpoint::Treated(load_ensemble(path, vocab)?)),
        KIND_STM => Ok(AnyCheckpoint::Stm(load_stm(path, vocab)?)),
        other => Err(Error::Checkpoint(format!("unknown checkpoint kind {other}"))),
    }
}

fn peek_kind(path: &Path) -> Result<u8> {
    let buf = fs::read(path)?;
    if buf.len() < 9 || &buf[..4] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    Ok(buf[8])
}

pub fn save_model(model: &ModelParams, vocab: &Vocabulary, path: impl AsRef<Path>) -> Result<()> {
    let mut w = Writer::new(KIND_MODEL, model.head_kind(), vocab);
    w.u64(model.vocab_size() as u64);
    w.u64(model.embed_dim() as u64);
    w.u64(model.num_classes as u64);
    w.head_dims(&model.head);
    w.tensor(&model.embedding);
    w.head_tensors(&model.head);
    w.finish(path)
}

pub fn load_model(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<ModelParams> {
    let mut r = Reader::open(path, KIND_MODEL, vocab)?;
    let vocab_size = r.u64()? as usize;
    let embed_dim = r.u64()? as usize;
    let num_classes = r.u64()? as usize;
    if vocab_size != vocab.len() {
        return Err(Error::Checkpoint(format!(
            "vocabulary size mismatch: checkpoint has {vocab_size}, vocabulary has {}",
            vocab.len()
        )));
    }
    let dims = r.head_dims()?;
    let embedding = r.tensor(vocab_size, embed_dim)?;
    let head = r.head_tensors(&dims, embed_dim, num_classes)?;
    r.done()?;
    Ok(ModelParams {
        embedding,
        head,
        num_classes,
    })
}

pub fn save_ensemble(
    ens: &ReferenceEnsemble,
    vocab: &Vocabulary,
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut w = Writer::new(KIND_TREATED, ens.victim_head.kind(), vocab);
    w.u64(ens.vocab_size() as u64);
    w.u64(ens.embed_dim() as u64);
    w.u64(ens.n_slices as u64);
    w.u64(ens.slice_width() as u64);
    w.u64(ens.num_classes as u64);
    w.buf.push(ens.victim_votes as u8);
    w.head_dims(&ens.victim_head);
    w.head_dims(&ens.reference_head);
    w.tensor(&ens.embedding);
    w.head_tensors(&ens.victim_head);
    w.head_tensors(&ens.reference_head);
    w.finish(path)
}

pub fn load_ensemble(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<ReferenceEnsemble> {
    let mut r = Reader::open(path, KIND_TREATED, vocab)?;
    let vocab_size = r.u64()? as usize;
    let embed_dim = r.u64()? as usize;
    let n_slices = r.u64()? as usize;
    let slice_width = r.u64()? as usize;
    let num_classes = r.u64()? as usize;
    let victim_votes = r.u8()? != 0;
    if n_slices < 2 || embed_dim % n_slices != 0 || slice_width != embed_dim / n_slices {
        return Err(Error::Checkpoint(format!(
            "inconsistent slice header: dim {embed_dim}, {n_slices} slices, width {slice_width}"
        )));
    }
    let victim_dims = r.head_dims()?;
    let ref_dims = r.head_dims()?;
    let embedding = r.tensor(vocab_size, embed_dim)?;
    let victim_head = r.head_tensors(&victim_dims, embed_dim, num_classes)?;
    let reference_head = r.head_tensors(&ref_dims, slice_width, num_classes)?;
    r.done()?;
    Ok(ReferenceEnsemble {
        embedding,
        victim_head,
        reference_head,
        n_slices,
        num_classes,
        victim_votes,
    })
}

pub fn save_stm(stm: &StmEnsemble, vocab: &Vocabulary, path: impl AsRef<Path>) -> Result<()> {
    let first = stm
        .models
        .first()
        .ok_or_else(|| Error::invalid("cannot save an empty ensemble"))?;
    let mut w = Writer::new(KIND_STM, first.head_kind(), vocab);
    w.u64(stm.models.len() as u64);
    w.u64(first.vocab_size() as u64);
    w.u64(first.embed_dim() as u64);
    w.u64(first.num_classes as u64);
    w.head_dims(&first.head);
    for m in &stm.models {
        w.tensor(&m.embedding);
        w.head_tensors(&m.head);
    }
    w.finish(path)
}

pub fn load_stm(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<StmEnsemble> {
    let mut r = Reader::open(path, KIND_STM, vocab)?;
    let n_models = r.u64()? as usize;
    let vocab_size = r.u64()? as usize;
    let embed_dim = r.u64()? as usize;
    let num_classes = r.u64()? as usize;
    let dims = r.head_dims()?;
    let mut models = Vec::with_capacity(n_models);
    for _ in 0..n_models {
        let embedding = r.tensor(vocab_size, embed_dim)?;
        let head = r.head_tensors(&dims, embed_dim, num_classes)?;
        models.push(ModelParams {
            embedding,
            head,
            num_classes,
        });
    }
    r.done()?;
    Ok(StmEnsemble { models })
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new(file_kind: u8, head_kind: HeadKind, vocab: &Vocabulary) -> Self {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.push(file_kind);
        buf.push(match head_kind {
            HeadKind::MeanPool => 0,
            HeadKind::Cnn => 1,
        });
        let hash = vocab.content_hash();
        buf.extend_from_slice(&(hash.len() as u16).to_le_bytes());
        buf.extend_from_slice(hash.as_bytes());
        Writer { buf }
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn head_dims(&mut self, head: &HeadParams) {
        match head {
            HeadParams::MeanPool(h) => {
                self.u64(h.w1.cols() as u64); // hidden
            }
            HeadParams::Cnn(h) => {
                self.u64(h.filters.cols() as u64);
                self.u64(h.kernel as u64);
                self.u64(h.w1.cols() as u64);
            }
        }
    }

    fn tensor(&mut self, t: &Tensor2) {
        for &v in t.data() {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn head_tensors(&mut self, head: &HeadParams) {
        for t in head.tensors() {
            self.tensor(t);
        }
    }

    fn finish(mut self, path: impl AsRef<Path>) -> Result<()> {
        let crc = crc32fast::hash(&self.buf);
        self.buf.extend_from_slice(&crc.to_le_bytes());
        fs::write(path, &self.buf)?;
        Ok(())
    }
}

enum HeadDims {
    MeanPool { hidden: usize },
    Cnn { filters: usize, kernel: usize, hidden: usize },
}

struct Reader {
    buf: Vec<u8>,
    pos: usize,
    head_kind: HeadKind,
}

impl Reader {
    fn open(path: impl AsRef<Path>, expect_kind: u8, vocab: &Vocabulary) -> Result<Self> {
        let buf = fs::read(&path)?;
        if buf.len() < MAGIC.len() + 4 + 2 + 4 {
            return Err(Error::Checkpoint("file too short".into()));
        }
        let (body, crc_bytes) = buf.split_at(buf.len() - 4);
        let stored_crc = u32::from_le_bytes(crc_bytes.try_into().unwrap());
        let actual_crc = crc32fast::hash(body);
        if stored_crc != actual_crc {
            return Err(Error::Checkpoint(format!(
                "checksum mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}"
            )));
        }
        let body_len = body.len();
        let mut r = Reader {
            buf,
            pos: 0,
            head_kind: HeadKind::MeanPool,
        };
        r.buf.truncate(body_len);
        if r.bytes(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic bytes".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version}, expected {VERSION}"
            )));
        }
        let kind = r.u8()?;
        if kind != expect_kind {
            return Err(Error::Checkpoint(format!(
                "wrong checkpoint kind {kind}, expected {expect_kind}"
            )));
        }
        r.head_kind = match r.u8()? {
            0 => HeadKind::MeanPool,
            1 => HeadKind::Cnn,
            other => {
                return Err(Error::Checkpoint(format!("unknown head kind tag {other}")));
            }
        };
        let hash_len = r.u16()? as usize;
        let stored_hash = String::from_utf8(r.bytes(hash_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("vocab hash is not utf-8".into()))?;
        let actual_hash = vocab.content_hash();
        if stored_hash != actual_hash {
            return Err(Error::Checkpoint(format!(
                "vocabulary hash mismatch: checkpoint built against {stored_hash}, supplied vocabulary hashes to {actual_hash}"
            )));
        }
        Ok(r)
    }

    fn bytes(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("unexpected end of checkpoint".into()));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    fn head_dims(&mut self) -> Result<HeadDims> {
        match self.head_kind {
            HeadKind::MeanPool => Ok(HeadDims::MeanPool {
                hidden: self.u64()? as usize,
            }),
            HeadKind::Cnn => Ok(HeadDims::Cnn {
                filters: self.u64()? as usize,
                kernel: self.u64()? as usize,
                hidden: self.u64()? as usize,
            }),
        }
    }

    fn tensor(&mut self, rows: usize, cols: usize) -> Result<Tensor2> {
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Checkpoint("tensor dimension overflow".into()))?;
        let raw = self.bytes(n * 8)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor2::from_vec(rows, cols, data)
            .map_err(|e| Error::Checkpoint(format!("bad tensor payload: {e}")))
    }

    fn head_tensors(
        &mut self,
        dims: &HeadDims,
        input_width: usize,
        num_classes: usize,
    ) -> Result<HeadParams> {
        match *dims {
            HeadDims::MeanPool { hidden } => Ok(HeadParams::MeanPool(MlpHead {
                w1: self.tensor(input_width, hidden)?,
                b1: self.tensor(1, hidden)?,
                w2: self.tensor(hidden, num_classes)?,
                b2: self.tensor(1, num_classes)?,
            })),
            HeadDims::Cnn {
                filters,
                kernel,
                hidden,
            } => Ok(HeadParams::Cnn(CnnHead {
                kernel,
                filters: self.tensor(kernel * input_width, filters)?,
                conv_bias: self.tensor(1, filters)?,
                w1: self.tensor(filters, hidden)?,
                b1: self.tensor(1, hidden)?,
                w2: self.tensor(hidden, num_classes)?,
                b2: self.tensor(1, num_classes)?,
            })),
        }
    }

    fn done(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after parameters",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::joint_train;
    use crate::models::{forward, ArchConfig, TrainConfig};
    use crate::textcore::{build_vocab, Example};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (Vocabulary, ModelParams) {
        let corpus: Vec<Example> = (0..6)
            .map(|i| Example::new(format!("tok{i} tok{} filler", (i + 1) % 6), i % 2))
            .collect();
        let vocab = build_vocab(&corpus, 1).unwrap();
        let arch = ArchConfig {
            embed_dim: 8,
            hidden: 5,
            filters: 3,
            kernel: 2,
            ..ArchConfig::default()
        };
        let model = ModelParams::init(vocab.len(), 2, &arch, 42);
        (vocab, model)
    }

    fn random_ids(vocab_len: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        (0..6).map(|_| rng.random_range(0..vocab_len)).collect()
    }

    #[test]
    fn model_round_trip_is_bit_identical() {
        let (vocab, model) = setup();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.trtd");
        save_model(&model, &vocab, &path).unwrap();
        let loaded = load_model(&path, &vocab).unwrap();
        assert_eq!(loaded, model);

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let ids = random_ids(vocab.len(), &mut rng);
            assert_eq!(forward(&model, &ids).unwrap(), forward(&loaded, &ids).unwrap());
        }
    }

    #[test]
    fn truncated_file_fails_checksum() {
        let (vocab, model) = setup();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.trtd");
        save_model(&model, &vocab, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        let err = load_model(&path, &vocab).unwrap_err();
        assert!(
            matches!(&err, Error::Checkpoint(msg) if msg.contains("checksum")),
            "unexpected error {err:?}"
        );
    }

    #[test]
    fn corrupted_byte_fails_checksum() {
        let (vocab, model) = setup();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.trtd");
        save_model(&model, &vocab, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_model(&path, &vocab), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn vocab_hash_mismatch_names_both_hashes() {
        let (vocab, model) = setup();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.trtd");
        save_model(&model, &vocab, &path).unwrap();

        let other_corpus = vec![Example::new("entirely different words", 0)];
        let other_vocab = build_vocab(&other_corpus, 1).unwrap();
        let err = load_model(&path, &other_vocab).unwrap_err();
        match err {
            Error::Checkpoint(msg) => {
                assert!(msg.contains(&vocab.content_hash()), "message: {msg}");
                assert!(msg.contains(&other_vocab.content_hash()), "message: {msg}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn version_mismatch_rejected() {
        let (vocab, model) = setup();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.trtd");
        save_model(&model, &vocab, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[4] = 99; // version field
        let body_len = bytes.len() - 4;
        let crc = crc32fast::hash(&bytes[..body_len]);
        bytes[body_len..].copy_from_slice(&crc.to_le_bytes());
        fs::write(&path, &bytes).unwrap();
        let err = load_model(&path, &vocab).unwrap_err();
        assert!(
            matches!(&err, Error::Checkpoint(msg) if msg.contains("version")),
            "unexpected error {err:?}"
        );
    }

    #[test]
    fn ensemble_round_trip() {
        let corpus: Vec<Example> = (0..8)
            .map(|i| Example::new(format!("w{i} w{} w{}", (i + 1) % 8, (i + 2) % 8), i % 2))
            .collect();
        let vocab = build_vocab(&corpus, 1).unwrap();
        let arch = ArchConfig {
            embed_dim: 6,
            hidden: 4,
            ..ArchConfig::default()
        };
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            lr: 0.1,
            seed: 1,
            max_len: 6,
        };
        let (ens, _) = joint_train(&vocab, &corpus, 2, &arch, 3, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ens.trtd");
        save_ensemble(&ens, &vocab, &path).unwrap();
        let loaded = load_ensemble(&path, &vocab).unwrap();
        assert_eq!(loaded, ens);
    }

    #[test]
    fn stm_round_trip() {
        let corpus: Vec<Example> = (0..8)
            .map(|i| Example::new(format!("w{i} w{}", (i + 3) % 8), i % 2))
            .collect();
        let vocab = build_vocab(&corpus, 1).unwrap();
        let arch = ArchConfig {
            embed_dim: 6,
            hidden: 4,
            ..ArchConfig::default()
        };
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            lr: 0.1,
            seed: 2,
            max_len: 6,
        };
        let stm = crate::ensemble::train_stm(&vocab, &corpus, 2, &arch, 3, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stm.trtd");
        save_stm(&stm, &vocab, &path).unwrap();
        let loaded = load_stm(&path, &vocab).unwrap();
        assert_eq!(loaded, stm);
    }

    #[test]
    fn wrong_kind_rejected() {
        let (vocab, model) = setup();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.trtd");
        save_model(&model, &vocab, &path).unwrap();
        assert!(matches!(load_ensemble(&path, &vocab), Err(Error::Checkpoint(_))));
    }
}
