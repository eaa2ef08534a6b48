use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use apialign::adversarial::AdvConfig;
use apialign::corpus::{normalize_sequence, read_corpus, to_class_level, CodeSequence, DropStats, SignatureTable};
use apialign::embedding::{load_space, save_space, train_skipgram, EmbeddingSpace, TrainConfig};
use apialign::error::{Error, Result};
use apialign::eval::{
    evaluate, EvalOptions, run_ablation, write_accuracy_csv, write_coverage_csv, GroundTruth,
};
use apialign::pipeline::{run_pipeline, PipelineConfig, Stages};
use apialign::query::{batch_query, write_results, TargetIndex};
use apialign::refinement::{CombineMode, RefineConfig};
use apialign::seeding::{mine_signature_seeds, MappingMatrix, SeedDictionary};

/// Mine cross-language API mappings by aligning code-token embeddings.
#[derive(Parser, Debug)]
#[command(name = "apialign", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Rewrite raw API tokens to qualified signatures, dropping unresolvable ones.
    Normalize(NormalizeArgs),
    /// Train skip-gram embeddings on a normalized corpus.
    Embed(EmbedArgs),
    /// Mine seed pairs whose Class.method suffixes match uniquely.
    Seeds(SeedsArgs),
    /// Learn a source-to-target mapping with the chosen stages.
    Align(AlignArgs),
    /// Retrieve target candidates for source tokens.
    Query(QueryArgs),
    /// Score a mapping against ground truth.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
struct NormalizeArgs {
    /// Raw corpus, one token sequence per line.
    #[arg(long = "in")]
    input: PathBuf,
    /// TSV of `raw<TAB>qualified` signatures.
    #[arg(long)]
    table: PathBuf,
    /// Tokens kept verbatim, one per line.
    #[arg(long)]
    keywords: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Truncate method tokens to their class.
    #[arg(long)]
    class_level: bool,
}

#[derive(Args, Debug)]
struct EmbedArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 300)]
    dim: usize,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    /// Embedding file; counts go to `<out>.freq`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.025)]
    lr: f64,
    #[arg(long, default_value_t = 30)]
    negatives: usize,
    #[arg(long, default_value_t = 10)]
    window: usize,
    #[arg(long, default_value_t = 1e-4)]
    subsample: f64,
    #[arg(long, default_value_t = 1)]
    min_count: u64,
    /// Worker threads; only 1 is reproducible bit for bit.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args, Debug)]
struct SpacePair {
    #[arg(long)]
    src_emb: PathBuf,
    #[arg(long)]
    tgt_emb: PathBuf,
}

#[derive(Args, Debug)]
struct SeedsArgs {
    #[command(flatten)]
    spaces: SpacePair,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct AlignArgs {
    #[command(flatten)]
    spaces: SpacePair,
    /// Seed dictionary TSV; required when stages include s.
    #[arg(long)]
    seeds: Option<PathBuf>,
    /// Ordered subset of s (seeding), a (adversarial), r (refinement).
    #[arg(long, default_value = "s,a,r")]
    stages: String,
    #[arg(long)]
    out_matrix: PathBuf,
    /// Adversarial training log (CSV).
    #[arg(long)]
    log: Option<PathBuf>,
    /// Refinement iteration report (CSV).
    #[arg(long)]
    refine_report: Option<PathBuf>,
    #[command(flatten)]
    training: TrainingArgs,
}

/// Adversarial and refinement settings shared by `align` and `eval --ablation`.
#[derive(Args, Debug)]
struct TrainingArgs {
    #[arg(long, default_value_t = 5)]
    adv_epochs: usize,
    #[arg(long, default_value_t = 1000)]
    adv_iterations: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 5)]
    disc_steps: usize,
    #[arg(long, default_value_t = 0.01)]
    adv_lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 0.95)]
    lr_decay: f64,
    #[arg(long, default_value_t = 0.2)]
    smoothing: f64,
    #[arg(long, default_value_t = 0.1)]
    dropout: f64,
    /// Discriminator hidden layer widths.
    #[arg(long, value_delimiter = ',', default_value = "2048,2048")]
    hidden: Vec<usize>,
    /// Orthogonality pull β applied to W after each mapping step; 0 leaves W unconstrained.
    #[arg(long, default_value_t = 0.001)]
    orthogonalize: f64,
    /// Batches are drawn from this many most frequent tokens.
    #[arg(long, default_value_t = 75_000)]
    max_rank: usize,
    /// Most frequent source tokens scored by the selection criterion.
    #[arg(long, default_value_t = 1000)]
    selection_k: usize,
    /// Frequent tokens considered by the top-K refinement heuristic.
    #[arg(long, default_value_t = 500)]
    refine_top_k: usize,
    #[arg(long, default_value_t = 0.7)]
    refine_threshold: f64,
    /// union, intersection, topk or cosine.
    #[arg(long, default_value = "intersection")]
    combine: String,
    /// Drop the mutual nearest-neighbor check from the top-K heuristic.
    #[arg(long)]
    no_mutual: bool,
    #[arg(long, default_value_t = 5)]
    refine_iters: usize,
    #[arg(long, default_value_t = 1)]
    patience: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

impl TrainingArgs {
    fn config(self, stages: Stages) -> Result<PipelineConfig> {
        let mode: CombineMode = self.combine.parse()?;
        let cfg = PipelineConfig {
            stages,
            adversarial: AdvConfig {
                epochs: self.adv_epochs,
                iterations_per_epoch: self.adv_iterations,
                batch_size: self.batch_size,
                disc_steps_per_map_step: self.disc_steps,
                learning_rate: self.adv_lr,
                momentum: self.momentum,
                lr_decay: self.lr_decay,
                label_smoothing: self.smoothing,
                input_dropout: self.dropout,
                hidden: self.hidden,
                orthogonalize: self.orthogonalize,
                max_rank: self.max_rank,
                selection_k: self.selection_k,
                rng_seed: self.seed,
            },
            refine: RefineConfig {
                top_k: self.refine_top_k,
                threshold: self.refine_threshold,
                mode,
                mutual_nn: !self.no_mutual,
                max_iters: self.refine_iters,
                patience: self.patience,
                selection_k: self.selection_k,
            },
            rng_seed: self.seed,
        };
        cfg.adversarial.validate()?;
        cfg.refine.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct QueryArgs {
    #[arg(long)]
    matrix: PathBuf,
    #[command(flatten)]
    spaces: SpacePair,
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Drop neighbors below this cosine similarity.
    #[arg(long)]
    threshold: Option<f64>,
    /// File with one query token per line.
    #[arg(long)]
    file: Option<PathBuf>,
    /// Output TSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    tokens: Vec<String>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    matrix: Option<PathBuf>,
    #[command(flatten)]
    spaces: SpacePair,
    /// TSV `source<TAB>target[<TAB>package]`.
    #[arg(long)]
    truth: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
    k_list: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0.5,0.6,0.7,0.8,0.9")]
    thresholds: Vec<f64>,
    /// Top-1 acceptance threshold for precision/recall; none accepts all.
    #[arg(long)]
    accept_threshold: Option<f64>,
    /// Run the ablation grid (needs --seeds) instead of scoring --matrix.
    #[arg(long)]
    ablation: bool,
    #[arg(long)]
    seeds: Option<PathBuf>,
    /// Accuracy report CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Coverage-versus-threshold CSV.
    #[arg(long)]
    coverage_out: Option<PathBuf>,
    #[command(flatten)]
    training: TrainingArgs,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io {
            path: path.to_owned(),
            source: e,
        })
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_owned(),
        source: e,
    }
}

fn with_output<F>(out: Option<&Path>, write: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> io::Result<()>,
{
    match out {
        Some(p) => {
            let mut w = create(p)?;
            write(&mut w).and_then(|_| w.flush()).map_err(io_err(p))
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            write(&mut lock).and_then(|_| lock.flush()).map_err(io_err(Path::new("<stdout>")))
        }
    }
}

fn load_pair(p: &SpacePair) -> Result<(EmbeddingSpace, EmbeddingSpace)> {
    let src = load_space(&p.src_emb)?;
    let tgt = load_space(&p.tgt_emb)?;
    if src.dim() != tgt.dim() {
        return Err(Error::DimensionMismatch {
            expected: src.dim(),
            actual: tgt.dim(),
        });
    }
    Ok((src, tgt))
}

fn normalize(a: NormalizeArgs) -> Result<()> {
    let table = SignatureTable::load(&a.table, a.keywords.as_deref())?;
    let input = File::open(&a.input).map_err(io_err(&a.input))?;
    let mut out = create(&a.out)?;
    let mut stats = DropStats::default();
    for line in BufReader::new(input).lines() {
        let line = line.map_err(io_err(&a.input))?;
        let (mut seq, s) = normalize_sequence(&CodeSequence::parse(&line), &table);
        if a.class_level {
            seq = to_class_level(&seq);
        }
        stats = stats.merge(s);
        writeln!(out, "{}", seq.to_line()).map_err(io_err(&a.out))?;
    }
    out.flush().map_err(io_err(&a.out))?;
    println!(
        "tokens: {} in, {} kept, {} dropped",
        stats.input, stats.kept, stats.dropped
    );
    Ok(())
}

fn embed(a: EmbedArgs) -> Result<()> {
    let cfg = TrainConfig {
        learning_rate: a.lr,
        negatives: a.negatives,
        window: a.window,
        subsample: a.subsample,
        dim: a.dim,
        epochs: a.epochs,
        min_count: a.min_count,
        workers: a.workers,
        rng_seed: a.seed,
    };
    cfg.validate()?;
    let corpus = read_corpus(&a.corpus)?;
    let space = train_skipgram(&corpus, &cfg)?;
    save_space(&space, &a.out)?;
    println!("{} tokens x {} dimensions written to {}", space.len(), space.dim(), a.out.display());
    Ok(())
}

fn seeds(a: SeedsArgs) -> Result<()> {
    let (src, tgt) = load_pair(&a.spaces)?;
    let dict = mine_signature_seeds(src.vocab(), tgt.vocab());
    dict.save(&a.out)?;
    println!("{} seed pairs written to {}", dict.len(), a.out.display());
    Ok(())
}

fn align(a: AlignArgs) -> Result<()> {
    let stages: Stages = a.stages.parse()?;
    let (src, tgt) = load_pair(&a.spaces)?;
    let dict = a.seeds.as_deref().map(SeedDictionary::load).transpose()?;
    let cfg = a.training.config(stages)?;
    let out = run_pipeline(&src, &tgt, dict.as_ref(), &cfg)?;
    out.mapping.save(&a.out_matrix)?;
    if let (Some(path), Some(adv)) = (&a.log, &out.adversarial) {
        let mut w = create(path)?;
        adv.write_log(&mut w).and_then(|_| w.flush()).map_err(io_err(path))?;
    }
    if let (Some(path), Some(r)) = (&a.refine_report, &out.refinement) {
        let mut w = create(path)?;
        r.write_report(&mut w).and_then(|_| w.flush()).map_err(io_err(path))?;
    }
    println!("{stages} mapping written to {}", a.out_matrix.display());
    Ok(())
}

fn query(a: QueryArgs) -> Result<()> {
    let mut tokens = a.tokens;
    if let Some(f) = &a.file {
        let file = File::open(f).map_err(io_err(f))?;
        for line in BufReader::new(file).lines() {
            let line = line.map_err(io_err(f))?;
            let t = line.trim();
            if !t.is_empty() {
                tokens.push(t.to_owned());
            }
        }
    }
    if tokens.is_empty() {
        return Err(Error::InvalidInput("no query tokens given".into()));
    }
    let w = MappingMatrix::load(&a.matrix)?;
    let (src, tgt) = load_pair(&a.spaces)?;
    let idx = TargetIndex::new(&tgt);
    let results = batch_query(&tokens, &w, &src, &idx, a.k, a.threshold)?;
    with_output(a.out.as_deref(), |w| write_results(&results, w))
}

fn eval(a: EvalArgs) -> Result<()> {
    let (src, tgt) = load_pair(&a.spaces)?;
    let truth = GroundTruth::load(&a.truth)?;
    if truth.is_empty() {
        return Err(Error::EmptyTruth);
    }
    let idx = TargetIndex::new(&tgt);
    let opts = EvalOptions {
        ks: a.k_list,
        accept_threshold: a.accept_threshold,
        thresholds: a.thresholds,
    };
    let ks = &opts.ks;
    let echo = format!(
        "k={} thresholds={} accept={} seed={}",
        ks.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(";"),
        opts.thresholds.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(";"),
        opts.accept_threshold.map_or("none".into(), |t| t.to_string()),
        a.training.seed
    );
    if a.ablation {
        let seeds_path = a
            .seeds
            .as_deref()
            .ok_or_else(|| Error::InvalidInput("--ablation needs --seeds".into()))?;
        let dict = SeedDictionary::load(seeds_path)?;
        let base = a.training.config(Stages::SAR)?;
        let rows = run_ablation(&src, &tgt, &dict, &truth, &Stages::ALL, &base, ks)?;
        let mut reports = Vec::new();
        for row in &rows {
            reports.push(evaluate(
                &row.stages.to_string(),
                &row.mapping,
                &src,
                &idx,
                &truth,
                &opts,
            )?);
        }
        return with_output(a.out.as_deref(), |w| write_accuracy_csv(&reports, &echo, w));
    }
    let matrix = a
        .matrix
        .as_deref()
        .ok_or_else(|| Error::InvalidInput("--matrix is required unless --ablation is given".into()))?;
    let w = MappingMatrix::load(matrix)?;
    let report = evaluate(&w.stage().to_string(), &w, &src, &idx, &truth, &opts)?;
    if let Some(p) = &a.coverage_out {
        let mut f = create(p)?;
        write_coverage_csv(&report.coverage, &echo, &mut f).and_then(|_| f.flush()).map_err(io_err(p))?;
    }
    with_output(a.out.as_deref(), |w| write_accuracy_csv(&[report], &echo, w))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Normalize(a) => normalize(a),
        Command::Embed(a) => embed(a),
        Command::Seeds(a) => seeds(a),
        Command::Align(a) => align(a),
        Command::Query(a) => query(a),
        Command::Eval(a) => eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { 2 } else { 1 })
        }
    }
}
