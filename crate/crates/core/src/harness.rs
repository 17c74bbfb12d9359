//! End-to-end experiment driver: build detection sets by attacking a victim,
//! score detectors, compute detection metrics, measure clean-data impact,
//! and write reports.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attacks::{
    adversarial_to_tsv, char_level_attack, genetic_attack, greedy_substitute_attack,
    multi_level_attack, AdversarialExample, AttackConfig, CandidateSource, NeighborSource,
};
use crate::corpus::builtin_lexicon;
use crate::ensemble::{joint_train, train_stm, Detector, StmDetector, Verdict, VictimHandle};
use crate::error::{Error, Result};
use crate::models::{ArchConfig, TrainConfig};
use crate::textcore::{load_dataset, load_synonyms, Example};
use crate::theory::{estimate_pq, PQEstimate};

/// Paired detection set: successful adversarial examples and their clean
/// originals (1:1).
#[derive(Debug, Clone)]
pub struct DetectionSet {
    pub adversarial: Vec<AdversarialExample>,
    pub clean: Vec<Example>,
    pub attack_name: String,
    pub victim_id: String,
}

/// Side statistics from building a detection set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuildStats {
    /// Correctly classified examples the attack was attempted on.
    pub attempts: usize,
    pub successes: usize,
}

impl BuildStats {
    pub fn success_rate(&self) -> f64 {
        if self.attempts == 0 {
            0.0
        } else {
            self.successes as f64 / self.attempts as f64
        }
    }
}

/// Attack correctly-classified examples in seeded shuffled order and collect
/// the first `n` successes with their originals.
pub fn build_detection_set<V, A>(
    victim_label: V,
    attack: A,
    dataset: &[Example],
    n: usize,
    seed: u64,
    attack_name: &str,
    victim_id: &str,
) -> Result<(DetectionSet, BuildStats)>
where
    V: Fn(&str) -> usize,
    A: Fn(&Example) -> Result<Option<AdversarialExample>>,
{
    if n == 0 {
        return Err(Error::invalid("detection set size must be >= 1"));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut adversarial = Vec::with_capacity(n);
    let mut clean = Vec::with_capacity(n);
    let mut attempts = 0usize;
    for &i in &order {
        if adversarial.len() == n {
            break;
        }
        let ex = &dataset[i];
        if victim_label(&ex.text) != ex.label {
            continue;
        }
        attempts += 1;
        if let Some(adv) = attack(ex)? {
            adversarial.push(adv);
            clean.push(ex.clone());
        }
    }
    if adversarial.len() < n {
        return Err(Error::Shortfall {
            requested: n,
            achieved: adversarial.len(),
        });
    }
    let stats = BuildStats {
        attempts,
        successes: adversarial.len(),
    };
    Ok((
        DetectionSet {
            adversarial,
            clean,
            attack_name: attack_name.to_string(),
            victim_id: victim_id.to_string(),
        },
        stats,
    ))
}

/// Detection quality over a detection set. Rates are fractions in [0, 1];
/// accuracies are percentages.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionMetrics {
    pub tpr: f64,
    pub fpr: f64,
    pub precision: f64,
    pub f1: f64,
    pub pre_acc: f64,
    pub post_acc: f64,
    /// post_acc - pre_acc, percentage points.
    pub increased_acc: f64,
    pub pq: PQEstimate,
    pub n_adv: usize,
    pub n_clean: usize,
    pub flagged_adv: usize,
    pub flagged_clean: usize,
}

/// Score a detector over a detection set. The positive class is
/// "adversarial": TPR is the flag rate on adversarial inputs, FPR on clean
/// ones. Post-detection accuracy counts a clean input as correct iff it is
/// unflagged and correctly classified, an adversarial input iff it is
/// flagged (blocked).
pub fn evaluate_detection<D>(detector: D, set: &DetectionSet) -> Result<DetectionMetrics>
where
    D: Fn(&str) -> Verdict,
{
    if set.adversarial.is_empty() || set.clean.is_empty() {
        return Err(Error::invalid("evaluate_detection on an empty detection set"));
    }
    let clean: Vec<(Verdict, bool)> = set
        .clean
        .iter()
        .map(|ex| {
            let v = detector(&ex.text);
            let correct = v.victim_label == ex.label;
            (v, correct)
        })
        .collect();
    let adv: Vec<(Verdict, bool)> = set
        .adversarial
        .iter()
        .map(|a| {
            let v = detector(&a.perturbed_text);
            let correct = v.victim_label == a.original.label;
            (v, correct)
        })
        .collect();

    let n_clean = clean.len();
    let n_adv = adv.len();
    let flagged_clean = clean.iter().filter(|(v, _)| v.flagged).count();
    let flagged_adv = adv.iter().filter(|(v, _)| v.flagged).count();

    let tpr = flagged_adv as f64 / n_adv as f64;
    let fpr = flagged_clean as f64 / n_clean as f64;
    let total_flagged = flagged_adv + flagged_clean;
    let precision = if total_flagged == 0 {
        0.0
    } else {
        flagged_adv as f64 / total_flagged as f64
    };
    let recall = tpr;
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };

    let total = (n_clean + n_adv) as f64;
    let pre_correct = clean.iter().filter(|(_, c)| *c).count()
        + adv.iter().filter(|(_, c)| *c).count();
    let post_correct = clean.iter().filter(|(v, c)| !v.flagged && *c).count()
        + adv.iter().filter(|(v, _)| v.flagged).count();
    let pre_acc = 100.0 * pre_correct as f64 / total;
    let post_acc = 100.0 * post_correct as f64 / total;

    let clean_verdicts: Vec<Verdict> = clean.iter().map(|(v, _)| v.clone()).collect();
    let adv_verdicts: Vec<Verdict> = adv.iter().map(|(v, _)| v.clone()).collect();
    let pq = estimate_pq(&clean_verdicts, &adv_verdicts)?;

    Ok(DetectionMetrics {
        tpr,
        fpr,
        precision,
        f1,
        pre_acc,
        post_acc,
        increased_acc: post_acc - pre_acc,
        pq,
        n_adv,
        n_clean,
        flagged_adv,
        flagged_clean,
    })
}

/// Accuracy impact of screening unperturbed data: returns
/// (original accuracy, detecting accuracy) as percentages, where a flagged
/// clean input is rejected and counted incorrect.
pub fn clean_impact<D>(detector: D, test_set: &[Example]) -> Result<(f64, f64)>
where
    D: Fn(&str) -> Verdict,
{
    if test_set.is_empty() {
        return Err(Error::invalid("clean_impact on an empty test set"));
    }
    let mut correct = 0usize;
    let mut kept_correct = 0usize;
    for ex in test_set {
        let v = detector(&ex.text);
        let is_correct = v.victim_label == ex.label;
        correct += is_correct as usize;
        kept_correct += (is_correct && !v.flagged) as usize;
    }
    let n = test_set.len() as f64;
    Ok((100.0 * correct as f64 / n, 100.0 * kept_correct as f64 / n))
}

/// Which attack drives the experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackKind {
    Pwws,
    Genetic,
    DeepWordBug,
    TextBugger,
    TextFooler,
}

impl std::fmt::Display for AttackKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            AttackKind::Pwws => "pwws",
            AttackKind::Genetic => "genetic",
            AttackKind::DeepWordBug => "deepwordbug",
            AttackKind::TextBugger => "textbugger",
            AttackKind::TextFooler => "textfooler",
        };
        write!(f, "{name}")
    }
}

impl std::str::FromStr for AttackKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pwws" => Ok(AttackKind::Pwws),
            "genetic" => Ok(AttackKind::Genetic),
            "deepwordbug" => Ok(AttackKind::DeepWordBug),
            "textbugger" => Ok(AttackKind::TextBugger),
            "textfooler" => Ok(AttackKind::TextFooler),
            other => Err(Error::invalid(format!("unknown attack '{other}'"))),
        }
    }
}

/// Full experiment configuration. Parsed from `key=value` lines; every field
/// has a default except the dataset paths.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub train_path: PathBuf,
    pub test_path: PathBuf,
    /// None -> the bundled lexicon.
    pub lexicon_path: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub attack: AttackKind,
    pub attack_cfg: AttackConfig,
    pub arch: ArchConfig,
    pub n_slices: usize,
    pub n_pairs: usize,
    pub min_freq: usize,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub max_len: usize,
    pub with_stm: bool,
    /// Experimental: let the victim vote in the consistency check.
    pub victim_votes: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train_path: PathBuf::new(),
            test_path: PathBuf::new(),
            lexicon_path: None,
            out_dir: PathBuf::from("out"),
            attack: AttackKind::Pwws,
            attack_cfg: AttackConfig::default(),
            arch: ArchConfig::default(),
            n_slices: 3,
            n_pairs: 200,
            min_freq: 2,
            seed: 0,
            epochs: 10,
            batch_size: 32,
            lr: 0.05,
            max_len: 32,
            with_stm: true,
            victim_votes: false,
        }
    }
}

impl RunConfig {
    /// Parse `key=value` lines; `#` starts a comment.
    pub fn from_key_values(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: "expected key=value".into(),
            })?;
            cfg.set(key.trim(), value.trim()).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_key_values(&fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::invalid(format!("bad value '{value}' for {key}")))
        }
        match key {
            "train" => self.train_path = PathBuf::from(value),
            "test" => self.test_path = PathBuf::from(value),
            "lexicon" => self.lexicon_path = Some(PathBuf::from(value)),
            "out" => self.out_dir = PathBuf::from(value),
            "attack" => self.attack = value.parse()?,
            "head" => self.arch.head = value.parse()?,
            "embed_dim" => self.arch.embed_dim = num(key, value)?,
            "hidden" => self.arch.hidden = num(key, value)?,
            "filters" => self.arch.filters = num(key, value)?,
            "kernel" => self.arch.kernel = num(key, value)?,
            "n_slices" => self.n_slices = num(key, value)?,
            "n_pairs" => self.n_pairs = num(key, value)?,
            "min_freq" => self.min_freq = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "max_len" => self.max_len = num(key, value)?,
            "with_stm" => self.with_stm = num(key, value)?,
            "victim_votes" => self.victim_votes = num(key, value)?,
            "max_word_frac" => self.attack_cfg.max_word_frac = num(key, value)?,
            "max_char_edits" => self.attack_cfg.max_char_edits_per_token = num(key, value)?,
            "population" => self.attack_cfg.population = num(key, value)?,
            "generations" => self.attack_cfg.generations = num(key, value)?,
            "mutation_rate" => self.attack_cfg.mutation_rate = num(key, value)?,
            other => return Err(Error::invalid(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            seed: self.seed,
            max_len: self.max_len,
        }
    }
}

/// Everything `run_experiment` produces, with the emitted file paths.
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub treated: DetectionMetrics,
    pub stm: Option<DetectionMetrics>,
    pub attack_success_rate: f64,
    /// Victim accuracy on the full test set, percent.
    pub victim_test_acc: f64,
    pub clean_original_acc: f64,
    pub clean_detecting_acc: f64,
    pub metrics_path: PathBuf,
    pub summary_path: PathBuf,
    pub pq_path: PathBuf,
    pub adversarial_path: PathBuf,
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

/// Train the ensembles, build the detection set, evaluate both detectors,
/// measure clean impact, and write the report files. Fully reproducible from
/// the config and seed: the metrics TSV is byte-identical across reruns.
pub fn run_experiment(cfg: &RunConfig) -> Result<ExperimentReport> {
    let (train_set, _train_summary) = stage("load-train", load_dataset(&cfg.train_path))?;
    let (test_set, test_summary) = stage("load-test", load_dataset(&cfg.test_path))?;
    if train_set.is_empty() || test_set.is_empty() {
        return Err(Error::invalid("train and test sets must be non-empty").in_stage("load-train"));
    }
    let lexicon = stage(
        "load-lexicon",
        match &cfg.lexicon_path {
            Some(p) => load_synonyms(p),
            None => Ok(builtin_lexicon()),
        },
    )?;
    let num_classes = train_set
        .iter()
        .chain(&test_set)
        .map(|ex| ex.label + 1)
        .max()
        .unwrap();

    let vocab = stage("build-vocab", crate::textcore::build_vocab(&train_set, cfg.min_freq))?;
    let tc = cfg.train_config();

    let (mut ens, _history) = stage(
        "train-treated",
        joint_train(&vocab, &train_set, num_classes, &cfg.arch, cfg.n_slices, &tc),
    )?;
    ens.victim_votes = cfg.victim_votes;

    let stm = if cfg.with_stm {
        // Offset the seed so STM members are not clones of the joint run.
        let stm_tc = TrainConfig {
            seed: cfg.seed + 1000,
            ..tc
        };
        Some(stage(
            "train-stm",
            train_stm(&vocab, &train_set, num_classes, &cfg.arch, cfg.n_slices, &stm_tc),
        )?)
    } else {
        None
    };

    // The deployed victim is the jointly trained victim head.
    let victim_probs = ens.victim_fn(&vocab, cfg.max_len);
    let victim_label = |text: &str| ens.victim_predict(text, &vocab, cfg.max_len).0;

    let run_attack = |ex: &Example| -> Result<Option<AdversarialExample>> {
        let neighbors = || NeighborSource {
            embedding: &ens.embedding,
            vocab: &vocab,
            k: 8,
            min_cos: 0.5,
        };
        match cfg.attack {
            AttackKind::Pwws => greedy_substitute_attack(
                &victim_probs,
                ex,
                &CandidateSource::Lexicon(&lexicon),
                &cfg.attack_cfg,
            ),
            AttackKind::Genetic => genetic_attack(
                &victim_probs,
                ex,
                &CandidateSource::Lexicon(&lexicon),
                &cfg.attack_cfg,
            ),
            AttackKind::DeepWordBug => char_level_attack(&victim_probs, ex, &cfg.attack_cfg),
            AttackKind::TextBugger => {
                multi_level_attack(&victim_probs, ex, &lexicon, Some(neighbors()), &cfg.attack_cfg)
            }
            AttackKind::TextFooler => greedy_substitute_attack(
                &victim_probs,
                ex,
                &CandidateSource::EmbeddingNeighbors(neighbors()),
                &cfg.attack_cfg,
            ),
        }
    };

    let victim_id = format!("{}-d{}", cfg.arch.head, cfg.arch.embed_dim);
    let (set, stats) = stage(
        "build-detection-set",
        build_detection_set(
            victim_label,
            run_attack,
            &test_set,
            cfg.n_pairs,
            cfg.seed,
            &cfg.attack.to_string(),
            &victim_id,
        ),
    )?;

    let treated_metrics = stage(
        "evaluate-treated",
        evaluate_detection(|t| ens.detect(t, &vocab, cfg.max_len), &set),
    )?;
    let stm_metrics = match &stm {
        Some(s) => {
            let det = StmDetector {
                victim: VictimHandle::Joint(&ens),
                ensemble: s,
            };
            Some(stage(
                "evaluate-stm",
                evaluate_detection(|t| det.detect(t, &vocab, cfg.max_len), &set),
            )?)
        }
        None => None,
    };

    let (orig_acc, detecting_acc) = stage(
        "clean-impact",
        clean_impact(|t| ens.detect(t, &vocab, cfg.max_len), &test_set),
    )?;

    fs::create_dir_all(&cfg.out_dir)?;
    let metrics_path = cfg.out_dir.join("metrics.tsv");
    let summary_path = cfg.out_dir.join("summary.txt");
    let pq_path = cfg.out_dir.join("pq.tsv");
    let adversarial_path = cfg.out_dir.join("adversarial.tsv");

    stage("save-checkpoints", {
        vocab
            .save(cfg.out_dir.join("vocab.txt"))
            .and_then(|_| crate::checkpoint::save_ensemble(&ens, &vocab, cfg.out_dir.join("treated.trtd")))
            .and_then(|_| match &stm {
                Some(s) => crate::checkpoint::save_stm(s, &vocab, cfg.out_dir.join("stm.trtd")),
                None => Ok(()),
            })
    })?;

    let mut metrics_tsv = String::from(
        "detector\tattack\ttpr\tfpr\tprecision\tf1\tpre_acc\tpost_acc\tincreased_acc\tp\tq\tn_pairs\n",
    );
    metrics_tsv.push_str(&metrics_row("treated", &set.attack_name, &treated_metrics));
    if let Some(m) = &stm_metrics {
        metrics_tsv.push_str(&metrics_row("stm", &set.attack_name, m));
    }
    fs::write(&metrics_path, &metrics_tsv)?;

    let mut pq_tsv = String::from("detector\tp\tq\tn_clean\tn_adv\n");
    pq_tsv.push_str(&format!(
        "treated\t{:.6}\t{:.6}\t{}\t{}\n",
        treated_metrics.pq.p, treated_metrics.pq.q, treated_metrics.pq.n_clean, treated_metrics.pq.n_adv
    ));
    if let Some(m) = &stm_metrics {
        pq_tsv.push_str(&format!(
            "stm\t{:.6}\t{:.6}\t{}\t{}\n",
            m.pq.p, m.pq.q, m.pq.n_clean, m.pq.n_adv
        ));
    }
    fs::write(&pq_path, &pq_tsv)?;

    fs::write(&adversarial_path, adversarial_to_tsv(&set.adversarial))?;

    let victim_test_acc = {
        let correct = test_set
            .iter()
            .filter(|ex| victim_label(&ex.text) == ex.label)
            .count();
        100.0 * correct as f64 / test_set.len() as f64
    };

    let mut summary = String::new();
    summary.push_str(&format!(
        "victim: {victim_id} | classes: {num_classes} | vocab: {} | train: {} | test: {} (avg len {:.1})\n",
        vocab.len(),
        train_set.len(),
        test_set.len(),
        test_summary.avg_tokens,
    ));
    summary.push_str(&format!(
        "victim test accuracy: {victim_test_acc:.2}%\n\
         attack: {} | detection pairs: {} | attack success rate: {:.3} ({} / {} attempts)\n",
        set.attack_name,
        set.adversarial.len(),
        stats.success_rate(),
        stats.successes,
        stats.attempts,
    ));
    summary.push_str(&format!(
        "clean impact: original {orig_acc:.2}% -> detecting {detecting_acc:.2}% (drop {:.2} points)\n",
        orig_acc - detecting_acc
    ));
    summary.push_str(&summary_row("treated", &treated_metrics));
    if let Some(m) = &stm_metrics {
        summary.push_str(&summary_row("stm", m));
    }
    fs::write(&summary_path, &summary)?;

    Ok(ExperimentReport {
        treated: treated_metrics,
        stm: stm_metrics,
        attack_success_rate: stats.success_rate(),
        victim_test_acc,
        clean_original_acc: orig_acc,
        clean_detecting_acc: detecting_acc,
        metrics_path,
        summary_path,
        pq_path,
        adversarial_path,
    })
}

fn metrics_row(detector: &str, attack: &str, m: &DetectionMetrics) -> String {
    format!(
        "{detector}\t{attack}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}\n",
        m.tpr, m.fpr, m.precision, m.f1, m.pre_acc, m.post_acc, m.increased_acc, m.pq.p, m.pq.q, m.n_adv
    )
}

fn summary_row(detector: &str, m: &DetectionMetrics) -> String {
    format!(
        "{detector}: TPR {:.3} FPR {:.3} precision {:.3} F1 {:.3} | acc {:.1}% -> {:.1}% ({:+.1}) | p {:.4} q {:.4}\n",
        m.tpr, m.fpr, m.precision, m.f1, m.pre_acc, m.post_acc, m.increased_acc, m.pq.p, m.pq.q
    )
}
