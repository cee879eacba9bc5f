use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use newscope::corpus::load_corpus;
use newscope::experiment::{explain, run_ablations, run_experiment, ExperimentConfig};
use newscope::synthetic::{self, SyntheticSpec};

#[derive(Parser)]
#[command(name = "newscope", version, about = "Diversity-aware news retrieval experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a TOML config.
    Run(Box<RunArgs>),
    /// Print corpus statistics as JSON.
    Stats {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Write a seeded synthetic corpus, embeddings and a matching config.
    Synth(SynthArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Methods to run (repeatable); `ablations` adds both ablation runs.
    #[arg(long = "method")]
    methods: Vec<String>,
    /// Evaluation depths (repeatable).
    #[arg(long = "k")]
    ks: Vec<usize>,
    /// GreedyPlus lambda values (repeatable); the first also drives ablations and --explain.
    #[arg(long = "lambda")]
    lambdas: Vec<f64>,
    /// Print the GreedyPlus selection narrative for one event instead of running.
    #[arg(long)]
    explain: Option<String>,
    /// Run full GreedyPlus and both ablations only.
    #[arg(long)]
    ablations: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    headline_embeddings: Option<PathBuf>,
    #[arg(long)]
    paragraph_embeddings: Option<PathBuf>,
    #[arg(long)]
    sentence_embeddings: Option<PathBuf>,
    #[arg(long)]
    pair_scores: Option<PathBuf>,
    #[arg(long)]
    embed_url: Option<String>,
    /// Clamp BM25 idf at 0 (the common non-negative variant).
    #[arg(long)]
    bm25_idf_floor: bool,
    #[arg(long)]
    extraction_eps: Option<f64>,
    #[arg(long)]
    promote_noise: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    events: usize,
    #[arg(long, default_value_t = 30)]
    relevant: usize,
    #[arg(long, default_value_t = 100)]
    background: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

impl RunArgs {
    fn apply(&self, config: &mut ExperimentConfig) {
        if !self.methods.is_empty() {
            config.methods = self.methods.clone();
        }
        if !self.ks.is_empty() {
            config.ks = self.ks.clone();
        }
        if let Some(&first) = self.lambdas.first() {
            config.lambda_grid = self.lambdas.clone();
            config.rerank.lambda = first;
        }
        if let Some(out) = &self.out {
            config.out = out.clone();
        }
        if let Some(w) = self.workers {
            config.workers = w;
        }
        let set = |slot: &mut Option<PathBuf>, v: &Option<PathBuf>| {
            if v.is_some() {
                *slot = v.clone();
            }
        };
        set(&mut config.headline_embeddings, &self.headline_embeddings);
        set(&mut config.paragraph_embeddings, &self.paragraph_embeddings);
        set(&mut config.sentence_embeddings, &self.sentence_embeddings);
        set(&mut config.pair_scores, &self.pair_scores);
        if self.embed_url.is_some() {
            config.embed_url = self.embed_url.clone();
        }
        config.bm25.idf_floor |= self.bm25_idf_floor;
        if let Some(eps) = self.extraction_eps {
            config.optics.extraction_eps = eps;
        }
        config.promote_noise |= self.promote_noise;
    }
}

fn run(args: RunArgs) -> anyhow::Result<()> {
    let mut config = ExperimentConfig::load(&args.config)?;
    args.apply(&mut config);

    if let Some(event_id) = &args.explain {
        print!("{}", explain(event_id, &config)?);
        return Ok(());
    }
    let output = if args.ablations { run_ablations(&config)? } else { run_experiment(&config)? };
    output.write(&config.out)?;
    print!("{}", output.report.to_markdown());
    log::info!(
        "{} events, {:.3}s per event; outputs in {}",
        output.timing.events,
        output.timing.total_s(),
        config.out.display()
    );
    Ok(())
}

fn synth(args: SynthArgs) -> anyhow::Result<()> {
    let spec = SyntheticSpec {
        events: args.events,
        relevant_per_event: args.relevant,
        background_paragraphs: args.background,
        dim: args.dim,
        seed: args.seed,
        ..SyntheticSpec::default()
    };
    let data = synthetic::generate(&spec)?;
    data.write(&args.out)?;
    let config = ExperimentConfig {
        corpus: synthetic::CORPUS_FILE.into(),
        headline_embeddings: Some(synthetic::HEADLINES_FILE.into()),
        paragraph_embeddings: Some(synthetic::PARAGRAPHS_FILE.into()),
        sentence_embeddings: Some(synthetic::SENTENCES_FILE.into()),
        seed: args.seed,
        ..ExperimentConfig::default()
    };
    let path = args.out.join("config.toml");
    std::fs::write(&path, config.to_toml()).with_context(|| format!("writing {}", path.display()))?;
    println!("{}", path.display());
    Ok(())
}

fn error_json(err: &anyhow::Error) -> serde_json::Value {
    let event_id = err.downcast_ref::<newscope::Error>().and_then(|e| e.event_id()).map(str::to_string);
    serde_json::json!({
        "error": format!("{err:#}"),
        "event_id": event_id,
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(*args),
        Command::Stats { corpus } => load_corpus(&corpus)
            .map(|c| println!("{}", serde_json::to_string_pretty(&c.stats()).expect("stats serialize")))
            .map_err(Into::into),
        Command::Synth(args) => synth(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", error_json(&err));
            ExitCode::FAILURE
        }
    }
}
