//! Command-line driver for the adversarial-text detection lab.

use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use treated::attacks::{
    adversarial_from_tsv, adversarial_to_tsv, char_level_attack, genetic_attack,
    greedy_substitute_attack, AttackConfig, CandidateSource, multi_level_attack, NeighborSource,
};
use treated::checkpoint::{self, AnyCheckpoint};
use treated::corpus;
use treated::ensemble::{joint_train, train_stm, Detector, StmDetector, VictimHandle};
use treated::harness::{
    build_detection_set, evaluate_detection, AttackKind, DetectionSet, RunConfig,
};
use treated::models::{accuracy, train, ArchConfig, HeadKind, ModelParams, TrainConfig};
use treated::textcore::{build_vocab, load_dataset, load_synonyms, SynonymLexicon, Vocabulary};
use treated::theory::sweep_grid;

#[derive(Parser)]
#[command(name = "treated", version, about = "Train text classifiers, attack them, and detect adversarial inputs via reference-model disagreement")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct TrainKnobs {
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    max_len: usize,
    #[arg(long, default_value_t = 2)]
    min_freq: usize,
}

#[derive(Args)]
struct ArchKnobs {
    /// Head architecture: meanpool or cnn.
    #[arg(long, default_value = "meanpool")]
    head: HeadKind,
    #[arg(long, default_value_t = 300)]
    embed_dim: usize,
    #[arg(long, default_value_t = 100)]
    hidden: usize,
    #[arg(long, default_value_t = 128)]
    filters: usize,
    #[arg(long, default_value_t = 3)]
    kernel: usize,
}

impl ArchKnobs {
    fn arch(&self) -> ArchConfig {
        ArchConfig {
            head: self.head,
            embed_dim: self.embed_dim,
            hidden: self.hidden,
            filters: self.filters,
            kernel: self.kernel,
        }
    }
}

#[derive(Args)]
struct AttackKnobs {
    #[arg(long, default_value_t = 0.25)]
    max_word_frac: f64,
    #[arg(long, default_value_t = 2)]
    max_char_edits: usize,
    #[arg(long, default_value_t = 20)]
    population: usize,
    #[arg(long, default_value_t = 20)]
    generations: usize,
    #[arg(long, default_value_t = 0.3)]
    mutation_rate: f64,
}

impl AttackKnobs {
    fn cfg(&self, seed: u64) -> AttackConfig {
        AttackConfig {
            max_word_frac: self.max_word_frac,
            max_char_edits_per_token: self.max_char_edits,
            population: self.population,
            generations: self.generations,
            mutation_rate: self.mutation_rate,
            seed,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic sentiment dataset plus the bundled lexicon.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        n_train: usize,
        #[arg(long, default_value_t = 500)]
        n_test: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Train a standalone victim classifier.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        arch: ArchKnobs,
        #[command(flatten)]
        train: TrainKnobs,
    },
    /// Train a detection ensemble (treated: jointly trained embedding
    /// slices; stm: independently trained models).
    TrainEnsemble {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// treated or stm.
        #[arg(long, default_value = "treated")]
        ensemble: String,
        /// Number of reference models.
        #[arg(long = "N", alias = "n-slices", default_value_t = 3)]
        n_slices: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        arch: ArchKnobs,
        #[command(flatten)]
        train: TrainKnobs,
    },
    /// Attack a victim checkpoint and write the successes as TSV.
    Attack {
        /// Victim checkpoint: a model or a treated-ensemble file.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "pwws")]
        attack: AttackKind,
        /// Number of adversarial examples to collect.
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        /// Synonym lexicon TSV; defaults to the bundled one.
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 32)]
        max_len: usize,
        #[command(flatten)]
        knobs: AttackKnobs,
    },
    /// Run the detector on a single text and print the verdict.
    Detect {
        /// Directory holding vocab.txt, treated.trtd and optionally stm.trtd.
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        text: String,
        /// treated or stm.
        #[arg(long, default_value = "treated")]
        ensemble: String,
        #[arg(long, default_value_t = 32)]
        max_len: usize,
    },
    /// Evaluate detectors over a saved adversarial TSV.
    Eval {
        /// Directory holding vocab.txt, treated.trtd and optionally stm.trtd.
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        adversarial: PathBuf,
        /// treated, stm, or both.
        #[arg(long, default_value = "both")]
        ensemble: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 32)]
        max_len: usize,
    },
    /// Tabulate the detection posteriors over a (p, q) grid as TSV.
    Sweep {
        #[arg(long, default_value_t = 0.05)]
        p_step: f64,
        #[arg(long, default_value_t = 0.05)]
        q_step: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full experiment: train ensembles, build a detection set,
    /// evaluate both detectors, and write reports.
    Run {
        /// key=value config file; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Detection pairs to build.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        attack: Option<AttackKind>,
        #[arg(long = "N")]
        n_slices: Option<usize>,
        /// Extra overrides as key=value (repeatable).
        #[arg(long = "set")]
        set: Vec<String>,
    },
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().cmd {
        Cmd::GenData {
            out,
            n_train,
            n_test,
            seed,
        } => gen_data(out, n_train, n_test, seed),
        Cmd::Train {
            data,
            out,
            seed,
            arch,
            train,
        } => cmd_train(data, out, seed, arch, train),
        Cmd::TrainEnsemble {
            data,
            out,
            ensemble,
            n_slices,
            seed,
            arch,
            train,
        } => cmd_train_ensemble(data, out, ensemble, n_slices, seed, arch, train),
        Cmd::Attack {
            model,
            vocab,
            data,
            attack,
            n,
            out,
            lexicon,
            seed,
            max_len,
            knobs,
        } => cmd_attack(model, vocab, data, attack, n, out, lexicon, seed, max_len, knobs),
        Cmd::Detect {
            dir,
            text,
            ensemble,
            max_len,
        } => cmd_detect(dir, text, ensemble, max_len),
        Cmd::Eval {
            dir,
            adversarial,
            ensemble,
            out,
            max_len,
        } => cmd_eval(dir, adversarial, ensemble, out, max_len),
        Cmd::Sweep { p_step, q_step, out } => {
            let grid = sweep_grid(p_step, q_step)?;
            std::fs::write(&out, grid.to_tsv())?;
            println!(
                "wrote {} x {} grid to {}",
                grid.p_values.len(),
                grid.q_values.len(),
                out.display()
            );
            Ok(())
        }
        Cmd::Run {
            config,
            train,
            test,
            out,
            seed,
            n,
            attack,
            n_slices,
            set,
        } => cmd_run(config, train, test, out, seed, n, attack, n_slices, set),
    }
}

fn gen_data(out: PathBuf, n_train: usize, n_test: usize, seed: u64) -> anyhow::Result<()> {
    std::fs::create_dir_all(&out)?;
    let train = corpus::generate_corpus(n_train, seed);
    let test = corpus::generate_corpus(n_test, seed + 1);
    corpus::write_corpus_tsv(out.join("train.tsv"), &train)?;
    corpus::write_corpus_tsv(out.join("test.tsv"), &test)?;
    std::fs::write(out.join("synonyms.tsv"), corpus::builtin_lexicon_tsv())?;
    println!(
        "wrote {n_train} train / {n_test} test examples and the synonym lexicon to {}",
        out.display()
    );
    Ok(())
}

fn cmd_train(
    data: PathBuf,
    out: PathBuf,
    seed: u64,
    arch: ArchKnobs,
    knobs: TrainKnobs,
) -> anyhow::Result<()> {
    let (examples, summary) = load_dataset(&data)?;
    let vocab = build_vocab(&examples, knobs.min_freq)?;
    let cfg = TrainConfig {
        epochs: knobs.epochs,
        batch_size: knobs.batch_size,
        lr: knobs.lr,
        seed,
        max_len: knobs.max_len,
    };
    let mut model = ModelParams::init(vocab.len(), summary.classes, &arch.arch(), seed);
    let history = train(&mut model, &examples, &vocab, &cfg)?;
    let acc = accuracy(&model, &examples, &vocab, cfg.max_len);
    std::fs::create_dir_all(&out)?;
    vocab.save(out.join("vocab.txt"))?;
    checkpoint::save_model(&model, &vocab, out.join("victim.trtd"))?;
    println!(
        "trained {} head on {} examples: final loss {:.4}, train accuracy {:.3}",
        arch.head,
        examples.len(),
        history.last().unwrap(),
        acc
    );
    println!("saved victim.trtd and vocab.txt to {}", out.display());
    Ok(())
}

fn cmd_train_ensemble(
    data: PathBuf,
    out: PathBuf,
    ensemble: String,
    n_slices: usize,
    seed: u64,
    arch: ArchKnobs,
    knobs: TrainKnobs,
) -> anyhow::Result<()> {
    let (examples, summary) = load_dataset(&data)?;
    let vocab = build_vocab(&examples, knobs.min_freq)?;
    let cfg = TrainConfig {
        epochs: knobs.epochs,
        batch_size: knobs.batch_size,
        lr: knobs.lr,
        seed,
        max_len: knobs.max_len,
    };
    std::fs::create_dir_all(&out)?;
    vocab.save(out.join("vocab.txt"))?;
    match ensemble.as_str() {
        "treated" => {
            let (ens, history) =
                joint_train(&vocab, &examples, summary.classes, &arch.arch(), n_slices, &cfg)?;
            checkpoint::save_ensemble(&ens, &vocab, out.join("treated.trtd"))?;
            println!(
                "jointly trained victim + {n_slices} references: final loss {:.4}",
                history.last().unwrap()
            );
            println!("saved treated.trtd and vocab.txt to {}", out.display());
        }
        "stm" => {
            let stm = train_stm(&vocab, &examples, summary.classes, &arch.arch(), n_slices, &cfg)?;
            checkpoint::save_stm(&stm, &vocab, out.join("stm.trtd"))?;
            println!("trained {n_slices} independent reference models");
            println!("saved stm.trtd and vocab.txt to {}", out.display());
        }
        other => bail!("unknown ensemble kind '{other}' (expected treated or stm)"),
    }
    Ok(())
}

enum Victim {
    Model(ModelParams),
    Joint(treated::ensemble::ReferenceEnsemble),
}

impl Victim {
    fn handle(&self) -> VictimHandle<'_> {
        match self {
            Victim::Model(m) => VictimHandle::Model(m),
            Victim::Joint(e) => VictimHandle::Joint(e),
        }
    }

    fn embedding(&self) -> &treated::numerics::Tensor2 {
        match self {
            Victim::Model(m) => &m.embedding,
            Victim::Joint(e) => &e.embedding,
        }
    }
}

fn load_victim(path: &PathBuf, vocab: &Vocabulary) -> anyhow::Result<Victim> {
    match checkpoint::load_any(path, vocab)? {
        AnyCheckpoint::Model(m) => Ok(Victim::Model(m)),
        AnyCheckpoint::Treated(e) => Ok(Victim::Joint(e)),
        AnyCheckpoint::Stm(_) => bail!(
            "{} is an stm ensemble; pass a victim model or treated checkpoint",
            path.display()
        ),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_attack(
    model: PathBuf,
    vocab_path: PathBuf,
    data: PathBuf,
    attack: AttackKind,
    n: usize,
    out: PathBuf,
    lexicon: Option<PathBuf>,
    seed: u64,
    max_len: usize,
    knobs: AttackKnobs,
) -> anyhow::Result<()> {
    let vocab = Vocabulary::load(&vocab_path)?;
    let victim = load_victim(&model, &vocab)?;
    let (examples, _) = load_dataset(&data)?;
    let lexicon: SynonymLexicon = match lexicon {
        Some(p) => load_synonyms(p)?,
        None => corpus::builtin_lexicon(),
    };
    let cfg = knobs.cfg(seed);
    let handle = victim.handle();
    let probs = handle.predict_tokens_fn(&vocab, max_len);
    let neighbors = || NeighborSource {
        embedding: victim.embedding(),
        vocab: &vocab,
        k: 8,
        min_cos: 0.5,
    };
    let run = |ex: &treated::textcore::Example| match attack {
        AttackKind::Pwws => {
            greedy_substitute_attack(&probs, ex, &CandidateSource::Lexicon(&lexicon), &cfg)
        }
        AttackKind::Genetic => genetic_attack(&probs, ex, &CandidateSource::Lexicon(&lexicon), &cfg),
        AttackKind::DeepWordBug => char_level_attack(&probs, ex, &cfg),
        AttackKind::TextBugger => multi_level_attack(&probs, ex, &lexicon, Some(neighbors()), &cfg),
        AttackKind::TextFooler => greedy_substitute_attack(
            &probs,
            ex,
            &CandidateSource::EmbeddingNeighbors(neighbors()),
            &cfg,
        ),
    };
    let (set, stats) = build_detection_set(
        |t| handle.predict(t, &vocab, max_len).0,
        run,
        &examples,
        n,
        seed,
        &attack.to_string(),
        "cli-victim",
    )?;
    std::fs::write(&out, adversarial_to_tsv(&set.adversarial))?;
    println!(
        "{attack}: {} adversarial examples ({} attempts, success rate {:.3}) -> {}",
        set.adversarial.len(),
        stats.attempts,
        stats.success_rate(),
        out.display()
    );
    Ok(())
}

struct Detectors {
    vocab: Vocabulary,
    ens: Option<treated::ensemble::ReferenceEnsemble>,
    stm: Option<treated::ensemble::StmEnsemble>,
}

fn load_detectors(dir: &PathBuf, want_treated: bool, want_stm: bool) -> anyhow::Result<Detectors> {
    let vocab = Vocabulary::load(dir.join("vocab.txt"))
        .with_context(|| format!("no vocab.txt in {}", dir.display()))?;
    let treated_path = dir.join("treated.trtd");
    let ens = if want_treated || want_stm {
        Some(
            checkpoint::load_ensemble(&treated_path, &vocab)
                .with_context(|| format!("no treated ensemble at {}", treated_path.display()))?,
        )
    } else {
        None
    };
    let stm = if want_stm {
        let p = dir.join("stm.trtd");
        Some(
            checkpoint::load_stm(&p, &vocab)
                .with_context(|| format!("no stm ensemble at {}", p.display()))?,
        )
    } else {
        None
    };
    Ok(Detectors { vocab, ens, stm })
}

fn cmd_detect(dir: PathBuf, text: String, ensemble: String, max_len: usize) -> anyhow::Result<()> {
    let want_stm = ensemble == "stm";
    if !want_stm && ensemble != "treated" {
        bail!("unknown ensemble kind '{ensemble}' (expected treated or stm)");
    }
    let d = load_detectors(&dir, true, want_stm)?;
    let ens = d.ens.as_ref().unwrap();
    let verdict = if want_stm {
        let det = StmDetector {
            victim: VictimHandle::Joint(ens),
            ensemble: d.stm.as_ref().unwrap(),
        };
        det.detect(&text, &d.vocab, max_len)
    } else {
        ens.detect(&text, &d.vocab, max_len)
    };
    println!(
        "{} | victim label: {} | reference labels: {:?}",
        if verdict.flagged {
            "ADVERSARIAL (references disagree)"
        } else {
            "clean (references agree)"
        },
        verdict.victim_label,
        verdict.reference_labels
    );
    Ok(())
}

fn cmd_eval(
    dir: PathBuf,
    adversarial: PathBuf,
    ensemble: String,
    out: PathBuf,
    max_len: usize,
) -> anyhow::Result<()> {
    let want_treated = ensemble == "treated" || ensemble == "both";
    let want_stm = ensemble == "stm" || ensemble == "both";
    if !want_treated && !want_stm {
        bail!("unknown ensemble kind '{ensemble}' (expected treated, stm or both)");
    }
    let d = load_detectors(&dir, true, want_stm)?;
    let ens = d.ens.as_ref().unwrap();
    let items = adversarial_from_tsv(&std::fs::read_to_string(&adversarial)?)?;
    if items.is_empty() {
        bail!("no adversarial examples in {}", adversarial.display());
    }
    let attack_name = items[0].attack_name.clone();
    let clean = items.iter().map(|a| a.original.clone()).collect();
    let set = DetectionSet {
        adversarial: items,
        clean,
        attack_name,
        victim_id: "eval".into(),
    };

    let mut tsv = String::from(
        "detector\tattack\ttpr\tfpr\tprecision\tf1\tpre_acc\tpost_acc\tincreased_acc\tp\tq\tn_pairs\n",
    );
    let mut add_row = |name: &str, m: &treated::harness::DetectionMetrics| {
        tsv.push_str(&format!(
            "{name}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}\n",
            set.attack_name,
            m.tpr,
            m.fpr,
            m.precision,
            m.f1,
            m.pre_acc,
            m.post_acc,
            m.increased_acc,
            m.pq.p,
            m.pq.q,
            m.n_adv
        ));
        println!(
            "{name}: TPR {:.3} FPR {:.3} F1 {:.3} increased acc {:+.1} | p {:.4} q {:.4}",
            m.tpr, m.fpr, m.f1, m.increased_acc, m.pq.p, m.pq.q
        );
    };
    if want_treated {
        let m = evaluate_detection(|t| ens.detect(t, &d.vocab, max_len), &set)?;
        add_row("treated", &m);
    }
    if want_stm {
        let det = StmDetector {
            victim: VictimHandle::Joint(ens),
            ensemble: d.stm.as_ref().unwrap(),
        };
        let m = evaluate_detection(|t| det.detect(t, &d.vocab, max_len), &set)?;
        add_row("stm", &m);
    }
    std::fs::write(&out, tsv)?;
    println!("wrote metrics to {}", out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_run(
    config: Option<PathBuf>,
    train: Option<PathBuf>,
    test: Option<PathBuf>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    n: Option<usize>,
    attack: Option<AttackKind>,
    n_slices: Option<usize>,
    set: Vec<String>,
) -> anyhow::Result<()> {
    let mut cfg = match config {
        Some(p) => RunConfig::load(&p)?,
        None => RunConfig::default(),
    };
    if let Some(p) = train {
        cfg.train_path = p;
    }
    if let Some(p) = test {
        cfg.test_path = p;
    }
    if let Some(p) = out {
        cfg.out_dir = p;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(v) = n {
        cfg.n_pairs = v;
    }
    if let Some(a) = attack {
        cfg.attack = a;
    }
    if let Some(v) = n_slices {
        cfg.n_slices = v;
    }
    for kv in &set {
        let (k, v) = kv
            .split_once('=')
            .with_context(|| format!("--set expects key=value, got '{kv}'"))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if cfg.train_path.as_os_str().is_empty() || cfg.test_path.as_os_str().is_empty() {
        bail!("train and test dataset paths are required (via --config, --train/--test)");
    }
    let report = treated::harness::run_experiment(&cfg)?;
    println!("{}", std::fs::read_to_string(&report.summary_path)?);
    println!("reports written to {}", cfg.out_dir.display());
    Ok(())
}
