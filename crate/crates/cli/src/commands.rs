use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Subcommand};
use log::{debug, info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use vlparse::align::{align_record, check_soundness, AlignConfig, Category, RuleSet, Similarity};
use vlparse::data::synth::{self, SynthConfig};
use vlparse::data::{
    check_images, file_digest, load_alignments, load_corpus, load_features, load_scene_graphs, write_jsonl,
    CorpusRecord, DataError, Embeddings, RegionSet,
};
use vlparse::eval::{arc_length_breakdown, dda_uda, first_second_aa, zero_aa, AttachmentOptions, Report, TreePair};
use vlparse::model::{oracle_model, DevItem, Grounding, ModelConfig, ModelError, Request, Sentence, TrainConfig, Trainer};
use vlparse::structure::{SceneGraph, VLAlignment};
use vlparse::tensor::{read_checkpoint, write_checkpoint, AdamConfig, Checkpoint};
use vlparse::Model32;

use crate::error::CliError;
use crate::settings::Settings;

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with gold trees, scene graphs and alignments
    Synth(SynthArgs),
    /// Align corpus trees to scene graphs with the rewrite rules
    Align(AlignArgs),
    /// Train a model and write a checkpoint per epoch
    Train(TrainArgs),
    /// Predict trees for a corpus
    Parse(InferArgs),
    /// Predict trees and visual alignments for a corpus
    Ground(GroundArgs),
    /// Score predicted trees and alignments against gold files
    Eval(EvalArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Align(_) => "align",
            Command::Train(_) => "train",
            Command::Parse(_) => "parse",
            Command::Ground(_) => "ground",
            Command::Eval(_) => "eval",
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    /// Corpus with heads and dependency labels
    #[arg(long)]
    pub corpus: PathBuf,
    /// Labelled scene graphs
    #[arg(long)]
    pub graphs: PathBuf,
    /// Word vectors for label similarity; exact matches only without them
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Rule file; the built-in reconstructed rules otherwise
    #[arg(long)]
    pub rules: Option<PathBuf>,
    /// Output alignments
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the corpus with rewritten node types
    #[arg(long)]
    pub typed_corpus: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    /// Dev corpus with gold heads, scored after every epoch
    #[arg(long, requires = "dev_features")]
    pub dev_corpus: Option<PathBuf>,
    #[arg(long, requires = "dev_corpus")]
    pub dev_features: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Start from this checkpoint instead of a fresh initialization
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Output directory for checkpoints and the training log
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GroundArgs {
    #[command(flatten)]
    pub io: InferArgs,
    /// Ground the corpus trees instead of predicted ones
    #[arg(long)]
    pub use_trees: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, requires = "gold_corpus")]
    pub pred_corpus: Option<PathBuf>,
    #[arg(long, requires = "pred_corpus")]
    pub gold_corpus: Option<PathBuf>,
    #[arg(long, requires_all = ["gold_align", "graphs"])]
    pub pred_align: Option<PathBuf>,
    #[arg(long, requires = "pred_align")]
    pub gold_align: Option<PathBuf>,
    /// Gold scene graphs the alignments refer to
    #[arg(long, requires = "pred_align")]
    pub graphs: Option<PathBuf>,
    /// Leave punctuation tokens out of DDA and UDA
    #[arg(long)]
    pub exclude_punct: bool,
    /// Leave ROOT-headed gold tokens out of UDA
    #[arg(long)]
    pub no_root_in_uda: bool,
    /// Metrics as `name<TAB>value` lines
    #[arg(long)]
    pub out: PathBuf,
}

/// Everything a subcommand needs besides its own arguments.
pub struct Context {
    pub settings: Settings,
    pub digest: [u8; 32],
    /// Whether settings came from a config file, so checkpoints can be checked.
    pub config_given: bool,
    pub force: bool,
}

pub fn run(ctx: &Context, cmd: &Command) -> Result<(), CliError> {
    match cmd {
        Command::Synth(a) => synth_cmd(ctx, a),
        Command::Align(a) => align_cmd(ctx, a),
        Command::Train(a) => train_cmd(ctx, a),
        Command::Parse(a) => parse_cmd(ctx, a),
        Command::Ground(a) => ground_cmd(ctx, a),
        Command::Eval(a) => eval_cmd(a),
    }
}

fn log_inputs(inputs: &[(&str, &Path)]) -> Result<(), CliError> {
    for (what, path) in inputs {
        info!("input {what} {} sha256 {}", path.display(), file_digest(path)?);
    }
    Ok(())
}

fn log_output(path: &Path) -> Result<(), CliError> {
    info!("wrote {} sha256 {}", path.display(), file_digest(path)?);
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::data(format!("{}: {e}", dir.display())))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), CliError> {
    let mut w = create(path)?;
    write_checkpoint(&mut w, ckpt)?;
    log_output(path)
}

fn load_model(ctx: &Context, path: &Path) -> Result<Model32, CliError> {
    let file = File::open(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let ckpt = read_checkpoint(&mut BufReader::new(file)).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    info!("input model {} sha256 {}", path.display(), file_digest(path)?);
    if ctx.config_given && ckpt.config_digest != ctx.digest {
        let msg = format!(
            "{} was written under config digest {}, current config digest is {}",
            path.display(),
            hex::encode(ckpt.config_digest),
            hex::encode(ctx.digest)
        );
        if !ctx.force {
            return Err(CliError::data(format!("{msg}; pass --force to continue")));
        }
        warn!("{msg}; continuing");
    }
    Ok(Model32::from_checkpoint(&ckpt)?)
}

fn index_features(corpus_path: &Path, corpus: &[CorpusRecord], features: &[RegionSet]) -> Result<HashMap<String, usize>, CliError> {
    check_images(corpus_path, corpus, features.iter().map(|f| f.image_id.as_str()))?;
    Ok(features.iter().enumerate().map(|(i, f)| (f.image_id.clone(), i)).collect())
}

fn encode_all(model: &Model32, corpus: &[CorpusRecord]) -> Result<Vec<Sentence>, CliError> {
    corpus
        .iter()
        .map(|r| model.encode_record(r).map_err(|e| CliError::data(format!("sentence `{}`: {e}", r.id))))
        .collect()
}

fn synth_cmd(ctx: &Context, a: &SynthArgs) -> Result<(), CliError> {
    let s = &ctx.settings;
    let cfg = SynthConfig {
        sentences: s.sentences,
        max_len: s.max_len,
        tags: s.tags,
        words_per_tag: s.words_per_tag,
        concentration: s.concentration,
        concept_dim: s.concept_dim,
        sigma: s.sigma,
        distractors: s.distractors,
        dev_fraction: s.dev_fraction,
        test_fraction: s.test_fraction,
        seed: s.seed,
    };
    cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;
    let data = synth::generate(&cfg)?;
    synth::write(&data, &a.out)?;
    for split in &data.splits {
        info!("{}: {} sentences", split.name, split.corpus.len());
        for kind in ["corpus", "features", "sg", "align"] {
            log_output(&a.out.join(format!("{}.{kind}.jsonl", split.name)))?;
        }
    }
    log_output(&a.out.join("embeddings.txt"))?;
    let oracle = oracle_model(&data.world)?.cast::<f32>();
    save_checkpoint(&a.out.join("oracle.ckpt"), &oracle.to_checkpoint(ctx.digest))
}

#[derive(Serialize)]
struct AlignMeta {
    rules: String,
    reconstructed_rules: bool,
    rule_counts: BTreeMap<String, usize>,
    k: usize,
    threshold: f64,
    sentences: usize,
    tokens: usize,
    unaligned_tokens: usize,
    first_order: usize,
    rule_warnings: usize,
}

#[derive(Serialize)]
struct CandidateLine<'a> {
    sentence_id: &'a str,
    token: usize,
    candidates: Vec<(usize, f64)>,
}

fn align_cmd(ctx: &Context, a: &AlignArgs) -> Result<(), CliError> {
    let s = &ctx.settings;
    let mut inputs = vec![("corpus", a.corpus.as_path()), ("graphs", a.graphs.as_path())];
    inputs.extend(a.embeddings.as_deref().map(|p| ("embeddings", p)));
    inputs.extend(a.rules.as_deref().map(|p| ("rules", p)));
    log_inputs(&inputs)?;
    let corpus = load_corpus(&a.corpus)?;
    let graphs = load_scene_graphs(&a.graphs)?;
    check_images(&a.corpus, &corpus, graphs.iter().map(|g| g.image_id.as_str()))?;
    let by_image: HashMap<&str, &SceneGraph> = graphs.iter().map(|g| (g.image_id.as_str(), g)).collect();
    let emb = a.embeddings.as_deref().map(Embeddings::load).transpose()?;
    let rules = match &a.rules {
        Some(p) => RuleSet::load(p)?,
        None => RuleSet::builtin(),
    };
    info!("{} rules from {}", rules.len(), rules.source);
    let cfg = AlignConfig {
        k: s.topk_align,
        threshold: s.align_threshold,
    };
    let sim = Similarity { embeddings: emb.as_ref() };
    let results: Vec<_> = corpus
        .par_iter()
        .map(|r| align_record(r, by_image[r.image_id.as_str()], &rules, sim, &cfg))
        .collect();

    let mut alignments = Vec::with_capacity(corpus.len());
    let mut typed = Vec::with_capacity(corpus.len());
    let mut candidates = Vec::new();
    let (mut warnings, mut unaligned, mut first) = (0, 0, 0);
    for (r, res) in corpus.iter().zip(results) {
        let (rw, out) = res.map_err(|e| CliError::data(format!("sentence `{}`: {e}", r.id)))?;
        if let Err(m) = check_soundness(&out.alignment, by_image[r.image_id.as_str()]) {
            warn!("sentence `{}`: {m}", r.id);
        }
        warnings += rw.classification.warnings.len();
        unaligned += out.alignment.unaligned.len();
        first += out.alignment.first.len();
        if cfg.k > 1 {
            for (i, c) in out.candidates.iter().enumerate() {
                candidates.push(CandidateLine {
                    sentence_id: &r.id,
                    token: i + 1,
                    candidates: c.iter().map(|c| (c.node, c.score)).collect(),
                });
            }
        }
        typed.push(CorpusRecord {
            types: Some(rw.classification.types),
            ..r.clone()
        });
        alignments.push(out.alignment);
    }
    write_jsonl(&a.out, &alignments)?;
    log_output(&a.out)?;
    let tokens = corpus.iter().map(CorpusRecord::len).sum();
    info!("{unaligned} of {tokens} tokens unaligned, {first} first-order alignments, {warnings} rule warnings");
    let meta = AlignMeta {
        rules: rules.source.clone(),
        reconstructed_rules: a.rules.is_none(),
        rule_counts: Category::ALL
            .iter()
            .map(|&c| (c.to_string(), rules.count(c)))
            .collect(),
        k: cfg.k,
        threshold: cfg.threshold,
        sentences: corpus.len(),
        tokens,
        unaligned_tokens: unaligned,
        first_order: first,
        rule_warnings: warnings,
    };
    write_json(&PathBuf::from(format!("{}.meta.json", a.out.display())), &meta)?;
    if cfg.k > 1 {
        let p = PathBuf::from(format!("{}.candidates.jsonl", a.out.display()));
        write_jsonl(&p, &candidates)?;
        log_output(&p)?;
    }
    if let Some(p) = &a.typed_corpus {
        write_jsonl(p, &typed)?;
        log_output(p)?;
    }
    Ok(())
}

fn model_config(s: &Settings, word_dim: usize, feat_dim: usize) -> ModelConfig {
    ModelConfig {
        tag_dim: s.tag_dim,
        attn_dim: s.attn_dim,
        hidden: s.hidden,
        rel_rank: s.rel_rank,
        arc_rank: s.arc_rank,
        match_dim: s.match_dim,
        dec_tag_dim: s.dec_tag_dim,
        normalize_sim: s.normalize_sim,
        finetune_words: s.finetune_words,
        ..ModelConfig::with_dims(word_dim, feat_dim)
    }
}

#[derive(Serialize)]
struct RunRecord<'a> {
    settings: &'a Settings,
    config_digest: String,
    inputs: BTreeMap<String, String>,
}

fn train_cmd(ctx: &Context, a: &TrainArgs) -> Result<(), CliError> {
    let s = &ctx.settings;
    let mut inputs = vec![
        ("corpus", a.corpus.as_path()),
        ("features", a.features.as_path()),
        ("embeddings", a.embeddings.as_path()),
    ];
    if let (Some(c), Some(f)) = (&a.dev_corpus, &a.dev_features) {
        inputs.push(("dev_corpus", c));
        inputs.push(("dev_features", f));
    }
    log_inputs(&inputs)?;
    let corpus = load_corpus(&a.corpus)?;
    let features = load_features(&a.features)?;
    let feat_index = index_features(&a.corpus, &corpus, &features)?;
    let dev = match (&a.dev_corpus, &a.dev_features) {
        (Some(c), Some(f)) => {
            let dc = load_corpus(c)?;
            let df = load_features(f)?;
            let idx = index_features(c, &dc, &df)?;
            Some((dc, df, idx))
        }
        _ => None,
    };
    let emb = Embeddings::load(&a.embeddings)?;

    let model = match &a.init {
        Some(p) => load_model(ctx, p)?,
        None => {
            let feat_dim = features.first().map_or(0, RegionSet::dim);
            let mut tags: BTreeSet<&str> = corpus.iter().flat_map(|r| r.pos.iter().map(String::as_str)).collect();
            if let Some((dc, _, _)) = &dev {
                tags.extend(dc.iter().flat_map(|r| r.pos.iter().map(String::as_str)));
            }
            let tags: Vec<String> = tags.into_iter().map(str::to_string).collect();
            let cfg = model_config(s, emb.dim(), feat_dim);
            let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
            Model32::new(cfg, emb.words(), emb.vectors(), &tags, &mut rng)?
        }
    };
    let sentences = encode_all(&model, &corpus)?;
    let items: Vec<(&Sentence, &RegionSet)> = sentences
        .iter()
        .zip(&corpus)
        .map(|(s, r)| (s, &features[feat_index[&r.image_id]]))
        .collect();
    let dev_sentences = match &dev {
        Some((dc, _, _)) => encode_all(&model, dc)?,
        None => Vec::new(),
    };
    let dev_items: Vec<DevItem> = match &dev {
        Some((dc, df, idx)) => dc
            .iter()
            .zip(&dev_sentences)
            .filter_map(|(r, sent)| {
                Some(DevItem {
                    sentence: sent,
                    regions: &df[idx[&r.image_id]],
                    gold: r.heads.as_deref()?,
                })
            })
            .collect(),
        None => Vec::new(),
    };
    if dev.is_some() && dev_items.is_empty() {
        warn!("dev corpus has no gold heads; dev scores skipped");
    }

    let config = TrainConfig {
        lambda: s.lambda,
        batch_size: s.batch_size,
        max_train_len: s.max_train_len,
        max_parse_len: s.max_parse_len,
        harmonic_warmup_epochs: s.harmonic_warmup_epochs,
        seed: s.seed,
        adam: AdamConfig {
            lr: s.lr,
            clip_norm: (s.clip_norm > 0.0).then_some(s.clip_norm),
            ..AdamConfig::default()
        },
    };
    std::fs::create_dir_all(&a.out).map_err(|e| CliError::data(format!("{}: {e}", a.out.display())))?;
    let record = RunRecord {
        settings: s,
        config_digest: hex::encode(ctx.digest),
        inputs: inputs
            .iter()
            .map(|(w, p)| Ok((w.to_string(), file_digest(p)?)))
            .collect::<Result<_, DataError>>()?,
    };
    write_json(&a.out.join("run.json"), &record)?;

    let mut trainer = Trainer::new(model, config);
    let log_path = a.out.join("train_log.jsonl");
    let mut log = create(&log_path)?;
    for _ in 0..s.epochs {
        let mut entry = trainer.run_epoch(&items)?;
        if !dev_items.is_empty() {
            let (dda, uda) = trainer.evaluate(&dev_items)?;
            entry.dev_dda = Some(dda);
            entry.dev_uda = Some(uda);
        }
        info!(
            "epoch {} mle {:.4} cl {} dev dda {} uda {}",
            entry.epoch,
            entry.mle,
            fmt_opt(entry.contrastive),
            fmt_opt(entry.dev_dda),
            fmt_opt(entry.dev_uda)
        );
        if entry.batches == 0 {
            warn!("no training sentence within max_train_len {}", s.max_train_len);
        }
        serde_json::to_writer(&mut log, &entry)?;
        log.write_all(b"\n")?;
        log.flush()?;
        let ckpt = trainer.model.to_checkpoint(ctx.digest);
        save_checkpoint(&a.out.join(format!("epoch-{:03}.ckpt", entry.epoch)), &ckpt)?;
    }
    save_checkpoint(&a.out.join("final.ckpt"), &trainer.model.to_checkpoint(ctx.digest))
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

/// Runs inference over a corpus. Sentences over the length limit yield `None`.
fn analyze_corpus(
    ctx: &Context,
    a: &InferArgs,
    use_trees: bool,
) -> Result<(Vec<CorpusRecord>, Vec<Option<Grounding>>), CliError> {
    log_inputs(&[("corpus", &a.corpus), ("features", &a.features)])?;
    let model = load_model(ctx, &a.model)?;
    let corpus = load_corpus(&a.corpus)?;
    let features = load_features(&a.features)?;
    let idx = index_features(&a.corpus, &corpus, &features)?;
    let sentences = encode_all(&model, &corpus)?;
    let reqs = corpus
        .iter()
        .zip(&sentences)
        .map(|(r, s)| {
            let tree = match (use_trees, r.heads.as_deref()) {
                (false, _) => None,
                (true, Some(h)) => Some(h),
                (true, None) => return Err(CliError::data(format!("sentence `{}` has no heads", r.id))),
            };
            Ok(Request {
                sentence_id: &r.id,
                sentence: s,
                regions: &features[idx[&r.image_id]],
                tree,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let max = ctx.settings.max_parse_len;
    let mut out = Vec::with_capacity(reqs.len());
    for (r, res) in corpus.iter().zip(model.analyze_all(&reqs, max)) {
        match res {
            Ok(g) => out.push(Some(g)),
            Err(ModelError::TooLong { n, max }) => {
                warn!("sentence `{}` has {n} tokens, over max_parse_len {max}; skipped", r.id);
                out.push(None);
            }
            Err(e) => return Err(CliError::data(format!("sentence `{}`: {e}", r.id))),
        }
    }
    debug!("analyzed {} sentences", out.len());
    Ok((corpus, out))
}

fn parse_cmd(ctx: &Context, a: &InferArgs) -> Result<(), CliError> {
    let (corpus, results) = analyze_corpus(ctx, a, false)?;
    let records: Vec<CorpusRecord> = corpus
        .into_iter()
        .zip(results)
        .map(|(r, g)| match g {
            Some(g) => CorpusRecord {
                heads: Some(g.heads),
                types: Some(g.types),
                dep_labels: None,
                ..r
            },
            None => CorpusRecord {
                heads: None,
                types: None,
                dep_labels: None,
                ..r
            },
        })
        .collect();
    write_jsonl(&a.out, &records)?;
    log_output(&a.out)
}

fn ground_cmd(ctx: &Context, a: &GroundArgs) -> Result<(), CliError> {
    let (_, results) = analyze_corpus(ctx, &a.io, a.use_trees)?;
    let alignments: Vec<VLAlignment> = results.into_iter().flatten().map(|g| g.alignment).collect();
    write_jsonl(&a.io.out, &alignments)?;
    log_output(&a.io.out)
}

fn eval_cmd(a: &EvalArgs) -> Result<(), CliError> {
    let mut report = Report::default();
    if let (Some(pp), Some(gp)) = (&a.pred_corpus, &a.gold_corpus) {
        log_inputs(&[("pred_corpus", pp), ("gold_corpus", gp)])?;
        let pred = load_corpus(pp)?;
        let gold = load_corpus(gp)?;
        let by_id: HashMap<&str, &CorpusRecord> = pred.iter().map(|r| (r.id.as_str(), r)).collect();
        let mut pairs = Vec::new();
        for g in &gold {
            let Some(gh) = g.heads.as_deref() else { continue };
            let p = by_id
                .get(g.id.as_str())
                .ok_or_else(|| CliError::data(format!("{}: sentence `{}` missing", pp.display(), g.id)))?;
            let ph = p
                .heads
                .as_deref()
                .ok_or_else(|| CliError::data(format!("{}: sentence `{}` has no heads", pp.display(), g.id)))?;
            pairs.push(TreePair {
                pred: ph,
                gold: gh,
                pos: Some(&g.pos),
            });
        }
        let opts = AttachmentOptions {
            root_in_uda: !a.no_root_in_uda,
            exclude_punct: a.exclude_punct,
        };
        report.attachment = Some(dda_uda(&pairs, opts)?);
        report.arc_length = arc_length_breakdown(&pairs)?;
    }
    if let (Some(pp), Some(gp), Some(sp)) = (&a.pred_align, &a.gold_align, &a.graphs) {
        log_inputs(&[("pred_align", pp), ("gold_align", gp), ("graphs", sp)])?;
        let pred = load_alignments(pp)?;
        let gold = load_alignments(gp)?;
        let graphs = load_scene_graphs(sp)?;
        let sg: HashMap<&str, &SceneGraph> = graphs.iter().map(|g| (g.image_id.as_str(), g)).collect();
        let graph_of = |path: &Path, al: &VLAlignment| {
            sg.get(al.image_id.as_str()).copied().ok_or_else(|| {
                CliError::data(format!(
                    "{}: sentence `{}` refers to unknown image `{}`",
                    path.display(),
                    al.sentence_id,
                    al.image_id
                ))
            })
        };
        let by_id: HashMap<&str, &VLAlignment> = pred.iter().map(|p| (p.sentence_id.as_str(), p)).collect();
        let mut zero = vlparse::eval::ZeroAa::default();
        for g in &gold {
            let empty = VLAlignment::default();
            let p = by_id.get(g.sentence_id.as_str()).copied().unwrap_or(&empty);
            let z = zero_aa(p, g, graph_of(gp, g)?);
            zero.overall.merge(z.overall);
            for (t, acc) in z.by_type {
                zero.by_type.entry(t).or_default().merge(acc);
            }
        }
        let mut structural = vlparse::eval::StructuralAa::default();
        for p in &pred {
            let s = first_second_aa(p, graph_of(pp, p)?);
            structural.first.merge(s.first);
            structural.second.merge(s.second);
        }
        report.zero = Some(zero);
        report.structural = Some(structural);
    }
    if report.attachment.is_none() && report.zero.is_none() {
        return Err(CliError::usage(
            "nothing to evaluate: give --pred-corpus/--gold-corpus and/or --pred-align/--gold-align/--graphs",
        ));
    }
    for (name, v) in report.metrics() {
        info!("{name} {v:.6}");
    }
    let mut w = create(&a.out)?;
    w.write_all(report.to_tsv().as_bytes())?;
    w.flush()?;
    log_output(&a.out)
}
